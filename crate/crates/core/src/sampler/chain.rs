use std::sync::Arc;

use log::debug;
use rand::seq::index;
use rand::Rng;

use super::{ChainConfig, InitialClusters, Likelihood, Model, MoveConfig, MoveKind, MoveStats};
use crate::data::{assign_labels, assign_labels_unchecked, partition_sets, ClusterState, Hyperparameters};
use crate::error::{Error, Result};
use crate::marginal::ClusterFit;
use crate::priors::{draw_exp, draw_normal, exp_logpdf, lognormal_logpdf, normal_logpdf};
use crate::rng::{stream, ChainRng, Stream};

const INIT_ATTEMPTS: usize = 1000;

/// A state together with its cached per-cluster quantities.
#[derive(Debug, Clone)]
struct Eval {
    state: ClusterState,
    sets: Vec<Vec<usize>>,
    fits: Vec<Option<Arc<ClusterFit>>>,
    ll_marg: Vec<f64>,
    ll_dep: f64,
    log_prior: f64,
}

impl Eval {
    fn log_posterior(&self) -> f64 {
        self.ll_marg.iter().sum::<f64>() + self.ll_dep + self.log_prior
    }
}

/// How the `ε` block changes across a birth.
#[derive(Debug, Clone, Copy)]
enum EpsDraw {
    /// `J > 1`: one new `ε*`.
    Single(f64),
    /// `J = 1`: `ε_1*` for the existing cluster and `ε_2*` for the new one.
    Pair(f64, f64),
}

/// Proposal density for the parameters of a new cluster, given the smaller
/// state and the sites the new centre takes over.
struct BirthProposal {
    log_sigma_mean: f64,
    log_sigma_var: f64,
    xi_mean: f64,
    xi_var: f64,
    /// `None` when `J = 1` and both `ε` come from the prior.
    eps_rate: Option<f64>,
    theta_eps: f64,
}

impl BirthProposal {
    fn new(small: &ClusterState, moved: &[usize]) -> Option<Self> {
        let n = moved.len() as f64;
        let h = &small.hyper;
        let m = moved.iter().map(|&k| small.sigma[small.labels[k]]).sum::<f64>() / n;
        let xi_mean = moved.iter().map(|&k| small.xi[small.labels[k]]).sum::<f64>() / n;
        // Lognormal with mean m and the prior's variance.
        let v = h.theta_sigma.exp_m1() * (2.0 * h.mu_sigma + h.theta_sigma).exp();
        let s2 = (v / (m * m)).ln_1p();
        let eps_rate = if small.n_clusters() > 1 {
            let sum: f64 = moved.iter().map(|&k| small.epsilon[small.labels[k]]).sum();
            let rate = n / sum;
            if !(rate.is_finite() && rate > 0.0) {
                return None;
            }
            Some(rate)
        } else {
            None
        };
        if !(s2 > 0.0 && s2.is_finite() && m > 0.0) {
            return None;
        }
        Some(Self {
            log_sigma_mean: m.ln() - s2 / 2.0,
            log_sigma_var: s2,
            xi_mean,
            xi_var: h.theta_xi,
            eps_rate,
            theta_eps: h.theta_epsilon,
        })
    }

    fn draw(&self, rng: &mut ChainRng) -> (f64, f64, EpsDraw) {
        let sigma = draw_normal(rng, self.log_sigma_mean, self.log_sigma_var).exp();
        let xi = draw_normal(rng, self.xi_mean, self.xi_var);
        let eps = match self.eps_rate {
            Some(rate) => EpsDraw::Single(draw_exp(rng, rate)),
            None => {
                let e1 = draw_exp(rng, self.theta_eps);
                EpsDraw::Pair(e1, draw_exp(rng, self.theta_eps))
            }
        };
        (sigma, xi, eps)
    }

    fn log_q(&self, sigma: f64, xi: f64, eps: EpsDraw) -> f64 {
        let mut lq = lognormal_logpdf(sigma, self.log_sigma_mean, self.log_sigma_var)
            + normal_logpdf(xi, self.xi_mean, self.xi_var);
        lq += match (eps, self.eps_rate) {
            (EpsDraw::Single(e), Some(rate)) => exp_logpdf(e, rate),
            (EpsDraw::Pair(e1, e2), None) => exp_logpdf(e1, self.theta_eps) + exp_logpdf(e2, self.theta_eps),
            _ => f64::NAN,
        };
        lq
    }
}

/// A running chain. Each call to [`Chain::step`] performs one move.
pub struct Chain<'m> {
    model: &'m Model,
    moves: MoveConfig,
    cur: Eval,
    fixed_labels: bool,
    rng_move: ChainRng,
    rng_prop: ChainRng,
    rng_hyper: ChainRng,
    stats: MoveStats,
}

impl<'m> Chain<'m> {
    pub fn new(model: &'m Model, cfg: &ChainConfig, moves: &MoveConfig) -> Result<Self> {
        cfg.validate()?;
        moves.validate()?;
        let fixed_labels = matches!(cfg.initial, InitialClusters::Labels(_));
        if fixed_labels && moves.changes_partition() {
            return Err(Error::InvalidInput("a fixed labelling needs zero birth, death and shift probabilities".into()));
        }
        let mut rng_init = stream(cfg.seed, Stream::Init);
        let mut chain = Self {
            model,
            moves: *moves,
            cur: Eval { state: placeholder(), sets: vec![], fits: vec![], ll_marg: vec![], ll_dep: 0.0, log_prior: 0.0 },
            fixed_labels,
            rng_move: stream(cfg.seed, Stream::MoveSelection),
            rng_prop: stream(cfg.seed, Stream::Proposal),
            rng_hyper: stream(cfg.seed, Stream::Hyper),
            stats: MoveStats::default(),
        };
        chain.cur = chain.initial_eval(&cfg.initial, &mut rng_init)?;
        Ok(chain)
    }

    fn initial_eval(&self, init: &InitialClusters, rng: &mut ChainRng) -> Result<Eval> {
        let k = self.model.n_sites();
        let spatial = self.model.spatial();
        let n_centres = match init {
            InitialClusters::Count(n) => {
                if *n == 0 || *n > k {
                    return Err(Error::InvalidInput(format!("initial cluster count {n} not in 1..={k}")));
                }
                *n
            }
            InitialClusters::Fraction(f) => {
                if !(*f > 0.0 && *f <= 1.0) {
                    return Err(Error::InvalidInput(format!("initial centre fraction {f} not in (0, 1]")));
                }
                ((f * k as f64).round() as usize).clamp(1, k)
            }
            InitialClusters::Centres(c) => c.len(),
            InitialClusters::Labels(z) => {
                if z.len() != k {
                    return Err(Error::InvalidInput(format!("{} labels for {k} sites", z.len())));
                }
                z.iter().max().map_or(0, |m| m + 1)
            }
        };
        for _ in 0..INIT_ATTEMPTS {
            let (centres, labels) = match init {
                InitialClusters::Count(_) | InitialClusters::Fraction(_) => {
                    let c: Vec<usize> = index::sample(rng, k, n_centres).into_vec();
                    let z = assign_labels_unchecked(&c, spatial);
                    (c, z)
                }
                InitialClusters::Centres(c) => (c.clone(), assign_labels(c, spatial)?),
                InitialClusters::Labels(z) => {
                    let sets = partition_sets(z, n_centres);
                    if let Some(j) = sets.iter().position(|s| s.is_empty()) {
                        return Err(Error::InvalidInput(format!("cluster {} of the fixed labelling is empty", j + 1)));
                    }
                    (sets.iter().map(|s| s[0]).collect(), z.clone())
                }
            };
            let state = self.draw_initial_parameters(centres, labels, rng);
            let reuse = vec![None; n_centres];
            if let Some(eval) = self.evaluate(state, &reuse) {
                if eval.log_posterior() > f64::NEG_INFINITY {
                    return Ok(eval);
                }
            }
            if matches!(init, InitialClusters::Centres(_) | InitialClusters::Labels(_)) {
                // Parameters are redrawn; the partition stays.
                continue;
            }
        }
        Err(Error::InsufficientData("no initial state with finite posterior; clusters may have too few excesses".into()))
    }

    fn draw_initial_parameters(&self, centres: Vec<usize>, labels: Vec<usize>, rng: &mut ChainRng) -> ClusterState {
        let p = self.model.priors();
        let hyper = Hyperparameters::prior_centre();
        let j = centres.len();
        let sigma = (0..j).map(|_| p.draw_sigma(&hyper, rng)).collect();
        let xi = (0..j).map(|_| p.draw_xi(&hyper, rng)).collect();
        let epsilon = if j == 1 { vec![0.0] } else { (0..j).map(|_| p.draw_epsilon(&hyper, rng)).collect() };
        let gamma0 = p.draw_gamma0(rng);
        let beta = p.draw_beta(rng);
        ClusterState { centres, labels, sigma, xi, gamma0, epsilon, beta, hyper }
    }

    /// Evaluate a proposed state. `reuse[j]` names the current cluster whose
    /// parameters new cluster `j` carries over, if any; its likelihood is
    /// reused when the site set is unchanged. `None` if a fit fails.
    fn evaluate(&self, state: ClusterState, reuse: &[Option<usize>]) -> Option<Eval> {
        let j_count = state.n_clusters();
        let sets = partition_sets(&state.labels, j_count);
        let mut fits = Vec::with_capacity(j_count);
        let mut ll_marg = Vec::with_capacity(j_count);
        for (j, sites) in sets.iter().enumerate() {
            if let Some(o) = reuse[j].filter(|&o| o < self.cur.sets.len() && self.cur.sets[o] == *sites) {
                fits.push(self.cur.fits[o].clone());
                ll_marg.push(self.cur.ll_marg[o]);
                continue;
            }
            let fit = self.model.fit(sites).ok()?;
            ll_marg.push(self.model.cluster_loglik(fit.as_deref(), sites, state.sigma[j], state.xi[j]));
            fits.push(fit);
        }
        let ll_dep = self.model.dep_loglik(&state);
        let log_prior = self.model.priors().log_prior(&state, self.model.n_sites());
        Some(Eval { state, sets, fits, ll_marg, ll_dep, log_prior })
    }

    pub fn state(&self) -> &ClusterState {
        &self.cur.state
    }

    pub fn log_posterior(&self) -> f64 {
        self.cur.log_posterior()
    }

    pub fn stats(&self) -> &MoveStats {
        &self.stats
    }

    /// Cluster fits in use, `None` under a flat likelihood.
    pub fn fits(&self) -> &[Option<Arc<ClusterFit>>] {
        &self.cur.fits
    }

    /// One iteration: pick a move and apply it.
    pub fn step(&mut self) {
        let u: f64 = self.rng_move.random();
        let kind = self.moves.pick(u);
        match kind {
            MoveKind::Birth => {
                let ok = self.birth();
                self.stats.record(kind, ok);
            }
            MoveKind::Death => {
                let ok = self.death();
                self.stats.record(kind, ok);
            }
            MoveKind::Shift => {
                let ok = self.shift();
                self.stats.record(kind, ok);
            }
            MoveKind::Sigma => self.update_sigma(),
            MoveKind::Xi => self.update_xi(),
            MoveKind::Chi => self.update_chi(),
            MoveKind::Hyper => self.update_hyper(),
        }
        debug_assert!(
            crate::data::validate_state(&self.cur.state, self.model.spatial(), self.fixed_labels).is_ok(),
            "invalid state after {kind:?}"
        );
    }

    fn accept(&mut self, log_alpha: f64) -> bool {
        let u: f64 = self.rng_prop.random();
        !log_alpha.is_nan() && u.ln() < log_alpha
    }

    /// Birth log acceptance ratio for `small → big`, where `big` has the new
    /// centre at a slot drawn uniformly and the new parameters drawn from
    /// `log_q`.
    fn birth_log_ratio(&self, small: &Eval, big: &Eval, log_q: f64, log_jacobian: f64) -> f64 {
        let k = self.model.n_sites() as f64;
        let j = small.state.n_clusters() as f64;
        big.log_posterior() - small.log_posterior() + self.moves.death.ln() - self.moves.birth.ln() + (k - j).ln()
            - log_q
            + log_jacobian
    }

    fn birth(&mut self) -> bool {
        let k = self.model.n_sites();
        let cur = &self.cur.state;
        let j = cur.n_clusters();
        if j >= k {
            return false;
        }
        let free: Vec<usize> = (0..k).filter(|s| !cur.centres.contains(s)).collect();
        let new_centre = free[self.rng_prop.random_range(0..free.len())];
        let slot = self.rng_prop.random_range(0..=j);
        let Some((centres, labels, proposal)) = self.birth_setup(new_centre, slot) else {
            self.accept(f64::NEG_INFINITY);
            return false;
        };
        let (sigma_new, xi_new, eps) = proposal.draw(&mut self.rng_prop);
        let outcome = self.birth_outcome(centres, labels, slot, &proposal, sigma_new, xi_new, eps);
        self.finish(outcome, MoveKind::Birth)
    }

    fn birth_setup(&self, new_centre: usize, slot: usize) -> Option<(Vec<usize>, Vec<usize>, BirthProposal)> {
        let cur = &self.cur.state;
        let mut centres = cur.centres.clone();
        centres.insert(slot, new_centre);
        let labels = assign_labels_unchecked(&centres, self.model.spatial());
        let moved: Vec<usize> = (0..labels.len()).filter(|&s| labels[s] == slot).collect();
        let proposal = BirthProposal::new(cur, &moved)?;
        Some((centres, labels, proposal))
    }

    /// Proposed state and log acceptance ratio of a birth with given draws.
    #[allow(clippy::too_many_arguments)]
    fn birth_outcome(
        &self,
        centres: Vec<usize>,
        labels: Vec<usize>,
        slot: usize,
        proposal: &BirthProposal,
        sigma_new: f64,
        xi_new: f64,
        eps: EpsDraw,
    ) -> Option<(Eval, f64)> {
        if !(sigma_new > 0.0 && sigma_new.is_finite() && xi_new.is_finite()) {
            return None;
        }
        let cur = &self.cur.state;
        let j = cur.n_clusters();
        let log_q = proposal.log_q(sigma_new, xi_new, eps);
        let mut state = cur.clone();
        state.centres = centres;
        state.labels = labels;
        state.sigma.insert(slot, sigma_new);
        state.xi.insert(slot, xi_new);
        let log_jacobian = match eps {
            EpsDraw::Single(e) => {
                state.epsilon.insert(slot, e);
                0.0
            }
            EpsDraw::Pair(e1, e2) => {
                state.epsilon = if slot == 0 { vec![e2, e1] } else { vec![e1, e2] };
                state.gamma0 = cur.gamma0 * e1.exp();
                e1
            }
        };
        let reuse: Vec<Option<usize>> =
            (0..=j).map(|i| if i == slot { None } else { Some(if i < slot { i } else { i - 1 }) }).collect();
        let big = self.evaluate(state, &reuse)?;
        let log_alpha = self.birth_log_ratio(&self.cur, &big, log_q, log_jacobian);
        Some((big, log_alpha))
    }

    fn death(&mut self) -> bool {
        let j = self.cur.state.n_clusters();
        if j == 1 {
            return false;
        }
        let r = self.rng_prop.random_range(0..j);
        let outcome = self.death_outcome(r);
        self.finish(outcome, MoveKind::Death)
    }

    /// Proposed state and log acceptance ratio for removing centre `r`.
    fn death_outcome(&self, r: usize) -> Option<(Eval, f64)> {
        let cur = &self.cur.state;
        let j = cur.n_clusters();
        let moved = self.cur.sets[r].clone();
        let mut small = cur.clone();
        small.centres.remove(r);
        small.labels = assign_labels_unchecked(&small.centres, self.model.spatial());
        small.sigma.remove(r);
        small.xi.remove(r);
        let (eps, log_jacobian) = if j == 2 {
            let o = 1 - r;
            small.gamma0 = cur.gamma0 * (-cur.epsilon[o]).exp();
            small.epsilon = vec![0.0];
            (EpsDraw::Pair(cur.epsilon[o], cur.epsilon[r]), cur.epsilon[o])
        } else {
            small.epsilon.remove(r);
            (EpsDraw::Single(cur.epsilon[r]), 0.0)
        };
        let log_q = match BirthProposal::new(&small, &moved) {
            Some(p) => p.log_q(cur.sigma[r], cur.xi[r], eps),
            None => f64::NEG_INFINITY,
        };
        let reuse: Vec<Option<usize>> = (0..j - 1).map(|i| Some(if i < r { i } else { i + 1 })).collect();
        let small = self.evaluate(small, &reuse)?;
        let log_alpha = -self.birth_log_ratio(&small, &self.cur, log_q, log_jacobian);
        Some((small, log_alpha))
    }

    fn finish(&mut self, outcome: Option<(Eval, f64)>, kind: MoveKind) -> bool {
        let Some((new, log_alpha)) = outcome else {
            // Consume the acceptance draw so the stream stays aligned.
            self.accept(f64::NEG_INFINITY);
            return false;
        };
        if self.accept(log_alpha) {
            debug!("{} accepted: J = {}", kind.name(), new.state.n_clusters());
            self.cur = new;
            true
        } else {
            false
        }
    }

    fn shift(&mut self) -> bool {
        let cur = &self.cur.state;
        let r = self.rng_prop.random_range(0..cur.n_clusters());
        let nbhd = self.free_neighbours(cur.centres[r], &cur.centres);
        if nbhd.is_empty() {
            return false;
        }
        let target = nbhd[self.rng_prop.random_range(0..nbhd.len())];
        let outcome = self.shift_outcome(r, target);
        self.finish(outcome, MoveKind::Shift)
    }

    /// Neighbours of `site` that are not centres.
    fn free_neighbours(&self, site: usize, centres: &[usize]) -> Vec<usize> {
        self.model.spatial().neighbours(site).iter().copied().filter(|s| !centres.contains(s)).collect()
    }

    /// Proposed state and log acceptance ratio for moving centre `r` to `target`.
    fn shift_outcome(&self, r: usize, target: usize) -> Option<(Eval, f64)> {
        let cur = &self.cur.state;
        let old = cur.centres[r];
        let forward = self.free_neighbours(old, &cur.centres).len();
        let mut state = cur.clone();
        state.centres[r] = target;
        state.labels = assign_labels_unchecked(&state.centres, self.model.spatial());
        let reverse = self.free_neighbours(target, &state.centres).len();
        assert!(self.model.spatial().is_adjacent(target, old), "adjacency must be symmetric");
        let log_ratio_n = (forward as f64).ln() - (reverse as f64).ln();
        let reuse: Vec<Option<usize>> = (0..cur.n_clusters()).map(Some).collect();
        self.evaluate(state, &reuse).map(|new| {
            let log_alpha = new.log_posterior() - self.cur.log_posterior() + log_ratio_n;
            (new, log_alpha)
        })
    }

    fn update_sigma(&mut self) {
        for j in 0..self.cur.state.n_clusters() {
            let proposal = self.model.priors().draw_sigma(&self.cur.state.hyper, &mut self.rng_prop);
            // A heavy-tailed θ_σ can push the draw past f64 range.
            let ll = if proposal > 0.0 && proposal.is_finite() {
                self.model.cluster_loglik(self.cur.fits[j].as_deref(), &self.cur.sets[j], proposal, self.cur.state.xi[j])
            } else {
                f64::NEG_INFINITY
            };
            let ok = self.accept(ll - self.cur.ll_marg[j]);
            if ok {
                self.cur.state.sigma[j] = proposal;
                self.cur.ll_marg[j] = ll;
            }
            self.stats.record(MoveKind::Sigma, ok);
        }
        self.refresh_prior();
    }

    fn update_xi(&mut self) {
        for j in 0..self.cur.state.n_clusters() {
            let proposal = self.model.priors().draw_xi(&self.cur.state.hyper, &mut self.rng_prop);
            let ll = if proposal.is_finite() {
                self.model.cluster_loglik(self.cur.fits[j].as_deref(), &self.cur.sets[j], self.cur.state.sigma[j], proposal)
            } else {
                f64::NEG_INFINITY
            };
            let ok = self.accept(ll - self.cur.ll_marg[j]);
            if ok {
                self.cur.state.xi[j] = proposal;
                self.cur.ll_marg[j] = ll;
            }
            self.stats.record(MoveKind::Xi, ok);
        }
        self.refresh_prior();
    }

    /// Independence updates of each `ε_j`, then `γ_0`, then `β`.
    fn update_chi(&mut self) {
        let flat = self.model.likelihood() == Likelihood::Flat;
        let j_count = self.cur.state.n_clusters();
        if j_count > 1 {
            for j in 0..j_count {
                let proposal = self.model.priors().draw_epsilon(&self.cur.state.hyper, &mut self.rng_prop);
                let delta = if flat {
                    0.0
                } else {
                    let s = &self.cur.state;
                    let dep = self.model.dependence();
                    dep.cluster_loglik(&s.labels, j, s.gamma0 * (-proposal).exp(), s.beta)
                        - dep.cluster_loglik(&s.labels, j, s.gamma(j), s.beta)
                };
                let ok = self.accept(delta);
                if ok {
                    self.cur.state.epsilon[j] = proposal;
                    self.cur.ll_dep = self.model.dep_loglik(&self.cur.state);
                }
                self.stats.record(MoveKind::Chi, ok);
            }
        }
        let proposal = self.model.priors().draw_gamma0(&mut self.rng_prop);
        let mut trial = self.cur.state.clone();
        trial.gamma0 = proposal;
        let ll = self.model.dep_loglik(&trial);
        let ok = self.accept(ll - self.cur.ll_dep);
        if ok {
            self.cur.state.gamma0 = proposal;
            self.cur.ll_dep = ll;
        }
        self.stats.record(MoveKind::Chi, ok);

        let proposal = self.model.priors().draw_beta(&mut self.rng_prop);
        trial = self.cur.state.clone();
        trial.beta = proposal;
        let ll = self.model.dep_loglik(&trial);
        let ok = self.accept(ll - self.cur.ll_dep);
        if ok {
            self.cur.state.beta = proposal;
            self.cur.ll_dep = ll;
        }
        self.stats.record(MoveKind::Chi, ok);
        self.refresh_prior();
    }

    fn update_hyper(&mut self) {
        self.cur.state.hyper = self.model.priors().gibbs_hyper(&self.cur.state, &mut self.rng_hyper);
        self.refresh_prior();
        self.stats.record(MoveKind::Hyper, true);
    }

    fn refresh_prior(&mut self) {
        self.cur.log_prior = self.model.priors().log_prior(&self.cur.state, self.model.n_sites());
    }
}

fn placeholder() -> ClusterState {
    ClusterState {
        centres: vec![],
        labels: vec![],
        sigma: vec![],
        xi: vec![],
        gamma0: 1.0,
        epsilon: vec![],
        beta: 1.0,
        hyper: Hyperparameters::prior_centre(),
    }
}
