//! Beta-binomial likelihood of joint exceedance counts for adjacent pairs.
//!
//! For adjacent sites at distance `d` with decay rate `γ` the latent
//! exceedance probability is `Beta(α, β)` with `α = β / (exp(γd) − 1)`, so
//! its mean is `exp(−γd)`. Pairs within a cluster use that cluster's `γ_j`,
//! pairs across clusters use `γ_0`. Both orientations of a pair enter with
//! weight one half.

use statrs::function::gamma::ln_gamma;

use crate::data::{ClusterState, Count, DependenceCounts, Spatial};
use crate::error::{Error, Result};

/// Shapes `(α, β)` of the latent Beta distribution.
pub fn bb_shape(gamma: f64, d: f64, beta: f64) -> Result<(f64, f64)> {
    if !(d > 0.0) {
        return Err(Error::InvalidInput(format!("adjacent sites must have positive distance, got {d}")));
    }
    if !(gamma > 0.0) || !(beta > 0.0) {
        return Err(Error::InvalidInput(format!("shape parameters must be positive (gamma {gamma}, beta {beta})")));
    }
    Ok((alpha(gamma, d, beta), beta))
}

#[inline]
fn alpha(gamma: f64, d: f64, beta: f64) -> f64 {
    beta / (gamma * d).exp_m1()
}

/// `log C(q, p)`.
#[inline]
pub fn log_binom(p: u32, q: u32) -> f64 {
    if p == 0 || p == q {
        return 0.0;
    }
    ln_gamma(q as f64 + 1.0) - ln_gamma(p as f64 + 1.0) - ln_gamma((q - p) as f64 + 1.0)
}

/// Beta-binomial log-pmf of `p` successes in `q` trials.
pub fn betabinom_logpmf(p: u32, q: u32, alpha: f64, beta: f64) -> Result<f64> {
    if p > q {
        return Err(Error::InvalidInput(format!("P = {p} exceeds Q = {q}")));
    }
    if q == 0 {
        return Ok(0.0);
    }
    Ok(log_binom(p, q) + log_kernel(p, q, alpha, beta))
}

/// Log-pmf without the binomial coefficient. `α = 0` and `α = ∞` are the
/// point masses at zero and at `q`.
#[inline]
fn log_kernel(p: u32, q: u32, alpha: f64, beta: f64) -> f64 {
    if q == 0 {
        return 0.0;
    }
    if alpha == 0.0 {
        return if p == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    if alpha.is_infinite() {
        return if p == q { 0.0 } else { f64::NEG_INFINITY };
    }
    if q <= RISING_MAX {
        return ln_rising(alpha, p) + ln_rising(beta, q - p) - ln_rising(alpha + beta, q);
    }
    let (p, q) = (p as f64, q as f64);
    ln_gamma(p + alpha) + ln_gamma(q - p + beta) - ln_gamma(q + alpha + beta) - ln_gamma(alpha) - ln_gamma(beta)
        + ln_gamma(alpha + beta)
}

/// Counts up to this size use rising factorials instead of log-gamma.
const RISING_MAX: u32 = 64;

/// `log Γ(x + n) − log Γ(x)` as a product of `n` factors, taking a log every
/// eight factors to stay in range.
#[inline]
fn ln_rising(x: f64, n: u32) -> f64 {
    let mut acc = 0.0;
    let mut prod = 1.0;
    for i in 0..n {
        prod *= x + i as f64;
        if i % 8 == 7 {
            acc += prod.ln();
            prod = 1.0;
        }
    }
    acc + prod.ln()
}

#[derive(Debug, Clone, PartialEq)]
struct PairTerm {
    k: usize,
    k2: usize,
    d: f64,
    forward: Count,
    backward: Count,
    log_binom: f64,
}

/// Adjacent-pair counts joined with their distances, ready for repeated
/// likelihood evaluation. Pairs with no trials in either orientation are
/// dropped since they contribute nothing.
#[derive(Debug, Clone, PartialEq)]
pub struct DependenceModel {
    terms: Vec<PairTerm>,
}

impl DependenceModel {
    pub fn new(counts: &DependenceCounts, spatial: &Spatial) -> Result<Self> {
        let mut terms = Vec::with_capacity(counts.pairs.len());
        for pc in &counts.pairs {
            if pc.k2 >= spatial.n_sites() {
                return Err(Error::SiteOutOfRange { index: pc.k2, n_sites: spatial.n_sites() });
            }
            if !spatial.is_adjacent(pc.k, pc.k2) {
                return Err(Error::InvalidInput(format!("counts given for non-adjacent pair ({}, {})", pc.k + 1, pc.k2 + 1)));
            }
            if pc.forward.q == 0 && pc.backward.q == 0 {
                continue;
            }
            let d = spatial.distance(pc.k, pc.k2);
            if !(d > 0.0) {
                return Err(Error::InvalidInput(format!("adjacent sites {} and {} at zero distance", pc.k + 1, pc.k2 + 1)));
            }
            terms.push(PairTerm {
                k: pc.k,
                k2: pc.k2,
                d,
                forward: pc.forward,
                backward: pc.backward,
                log_binom: 0.5 * (log_binom(pc.forward.p, pc.forward.q) + log_binom(pc.backward.p, pc.backward.q)),
            });
        }
        Ok(Self { terms })
    }

    pub fn n_pairs(&self) -> usize {
        self.terms.len()
    }

    /// Log-likelihood for labels and dependence parameters. `gamma[j]` is the
    /// within-cluster rate of cluster `j`.
    pub fn loglik(&self, labels: &[usize], gamma0: f64, gamma: &[f64], beta: f64) -> f64 {
        let mut ll = 0.0;
        for t in &self.terms {
            let z = labels[t.k];
            let g = if z == labels[t.k2] { gamma[z] } else { gamma0 };
            ll += term_loglik(t, g, beta);
        }
        ll
    }

    /// Contribution of the pairs whose both ends carry label `j`.
    pub fn cluster_loglik(&self, labels: &[usize], j: usize, gamma_j: f64, beta: f64) -> f64 {
        self.terms
            .iter()
            .filter(|t| labels[t.k] == j && labels[t.k2] == j)
            .map(|t| term_loglik(t, gamma_j, beta))
            .sum()
    }

    /// Contribution of the pairs that straddle two clusters.
    pub fn cross_loglik(&self, labels: &[usize], gamma0: f64, beta: f64) -> f64 {
        self.terms.iter().filter(|t| labels[t.k] != labels[t.k2]).map(|t| term_loglik(t, gamma0, beta)).sum()
    }
}

#[inline]
fn term_loglik(t: &PairTerm, gamma: f64, beta: f64) -> f64 {
    let a = alpha(gamma, t.d, beta);
    t.log_binom + 0.5 * (log_kernel(t.forward.p, t.forward.q, a, beta) + log_kernel(t.backward.p, t.backward.q, a, beta))
}

fn state_gammas(state: &ClusterState) -> Vec<f64> {
    (0..state.n_clusters()).map(|j| state.gamma(j)).collect()
}

/// Contribution of one adjacent pair under `state`.
pub fn pair_loglik(k: usize, k2: usize, counts: &DependenceCounts, state: &ClusterState, spatial: &Spatial) -> Result<f64> {
    let pair = counts
        .pairs
        .iter()
        .find(|p| (p.k, p.k2) == (k.min(k2), k.max(k2)))
        .ok_or_else(|| Error::InvalidInput(format!("no counts for pair ({}, {})", k + 1, k2 + 1)))?;
    let z = state.labels[k];
    let gamma = if z == state.labels[k2] { state.gamma(z) } else { state.gamma0 };
    let (a, b) = bb_shape(gamma, spatial.distance(k, k2), state.beta)?;
    Ok(0.5 * (betabinom_logpmf(pair.forward.p, pair.forward.q, a, b)? + betabinom_logpmf(pair.backward.p, pair.backward.q, a, b)?))
}

/// Sum of [`pair_loglik`] over all adjacent pairs.
pub fn loglik_dep(state: &ClusterState, counts: &DependenceCounts, spatial: &Spatial) -> Result<f64> {
    let model = DependenceModel::new(counts, spatial)?;
    Ok(model.loglik(&state.labels, state.gamma0, &state_gammas(state), state.beta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gamma_from_epsilon, Hyperparameters, PairCounts};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pmf_sum(q: u32, a: f64, b: f64) -> f64 {
        (0..=q).map(|p| betabinom_logpmf(p, q, a, b).unwrap().exp()).sum()
    }

    #[test]
    fn gamma_reparametrisation() {
        assert_eq!(gamma_from_epsilon(3.0, 0.0), 3.0);
        assert!((gamma_from_epsilon(3.0, 1.5f64.ln()) - 2.0).abs() < 1e-15);
        assert!(gamma_from_epsilon(3.0, 10.0) > 0.0);
    }

    #[test]
    fn shapes() {
        let (a, b) = bb_shape(2.0f64.ln(), 1.0, 1.0).unwrap();
        assert!((a - 1.0).abs() < 1e-15 && b == 1.0);
        let (a, _) = bb_shape(2.0, 0.3, 10.0).unwrap();
        assert!((a - 12.163692).abs() < 1e-6, "{a}");
        assert!(bb_shape(1.0, 0.0, 1.0).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let (g, d, be) = (rng.random_range(0.01..10.0), rng.random_range(0.01..1.0), rng.random_range(0.1..50.0));
            let (a, b) = bb_shape(g, d, be).unwrap();
            assert!((a / (a + b) - (-g * d).exp()).abs() < 1e-12);
        }
    }

    #[test]
    fn mean_decreases_with_distance() {
        let mean = |d: f64| {
            let (a, b) = bb_shape(2.0, d, 5.0).unwrap();
            a / (a + b)
        };
        assert!(mean(0.1) > mean(0.2) && mean(0.2) > mean(0.9));
    }

    #[test]
    fn pmf_normalises() {
        assert_eq!(betabinom_logpmf(0, 0, 2.0, 3.0).unwrap(), 0.0);
        assert!((betabinom_logpmf(1, 1, 2.0, 3.0).unwrap().exp() - 0.4).abs() < 1e-14);
        assert!((pmf_sum(20, 5.0, 10.0) - 1.0).abs() < 1e-12);
        for q in [1, 5, 20, 200] {
            for &(a, b) in &[(0.3, 0.7), (5.0, 10.0), (12.1327, 10.0), (200.0, 1.5)] {
                assert!((pmf_sum(q, a, b) - 1.0).abs() < 1e-12, "q = {q}, a = {a}, b = {b}");
            }
        }
        assert!(betabinom_logpmf(3, 2, 1.0, 1.0).is_err());
    }

    #[test]
    fn rising_factorials_match_log_gamma() {
        for &x in &[1e-8, 0.3, 1.0, 12.16, 1e3, 1e7] {
            for n in [0u32, 1, 7, 8, 9, 20, 64] {
                let direct = ln_gamma(x + n as f64) - ln_gamma(x);
                let tol = 1e-13 * (ln_gamma(x + n as f64).abs() + ln_gamma(x).abs() + 1.0);
                assert!((ln_rising(x, n) - direct).abs() < tol, "x {x} n {n}");
            }
        }
    }

    #[test]
    fn degenerate_shapes_are_point_masses() {
        assert_eq!(log_kernel(0, 5, 0.0, 2.0), 0.0);
        assert_eq!(log_kernel(1, 5, 0.0, 2.0), f64::NEG_INFINITY);
        assert_eq!(log_kernel(5, 5, f64::INFINITY, 2.0), 0.0);
        assert_eq!(log_kernel(4, 5, f64::INFINITY, 2.0), f64::NEG_INFINITY);
        assert!(betabinom_logpmf(500_000, 1_000_000, 3.0, 4.0).unwrap().is_finite());
    }

    fn line_of_three() -> (Spatial, DependenceCounts) {
        let spatial = Spatial::euclidean(&[[0.0, 0.0], [0.5, 0.0], [1.0, 0.0]], &[(0, 1), (1, 2)]).unwrap();
        let counts = DependenceCounts::new(vec![
            PairCounts { k: 0, k2: 1, forward: Count { p: 7, q: 20 }, backward: Count { p: 9, q: 18 } },
            PairCounts { k: 1, k2: 2, forward: Count { p: 4, q: 20 }, backward: Count { p: 4, q: 20 } },
        ])
        .unwrap();
        (spatial, counts)
    }

    fn state(labels: Vec<usize>, centres: Vec<usize>, gamma0: f64, epsilon: Vec<f64>) -> ClusterState {
        let j = centres.len();
        ClusterState {
            centres,
            labels,
            sigma: vec![1.0; j],
            xi: vec![0.0; j],
            gamma0,
            epsilon,
            beta: 10.0,
            hyper: Hyperparameters::prior_centre(),
        }
    }

    #[test]
    fn pair_terms() {
        let (spatial, counts) = line_of_three();
        // Symmetric counts: the average equals one orientation.
        let s = state(vec![0, 0, 1], vec![0, 2], 3.0, vec![0.4, 0.0]);
        let (a, b) = bb_shape(3.0, 0.5, 10.0).unwrap();
        let one = betabinom_logpmf(4, 20, a, b).unwrap();
        assert!((pair_loglik(1, 2, &counts, &s, &spatial).unwrap() - one).abs() < 1e-12);

        // Same-cluster pair uses γ_j, not γ_0.
        let gj = s.gamma(0);
        let (a, b) = bb_shape(gj, 0.5, 10.0).unwrap();
        let hand = 0.5 * (betabinom_logpmf(7, 20, a, b).unwrap() + betabinom_logpmf(9, 18, a, b).unwrap());
        assert!((pair_loglik(0, 1, &counts, &s, &spatial).unwrap() - hand).abs() < 1e-12);
        let (a0, b0) = bb_shape(3.0, 0.5, 10.0).unwrap();
        let wrong = 0.5 * (betabinom_logpmf(7, 20, a0, b0).unwrap() + betabinom_logpmf(9, 18, a0, b0).unwrap());
        assert!((hand - wrong).abs() > 1e-3);

        // ε = 0 makes within and across identical.
        let together = state(vec![0, 0, 0], vec![1], 3.0, vec![0.0]);
        let apart = state(vec![0, 1, 2], vec![0, 1, 2], 3.0, vec![0.0; 3]);
        assert_eq!(
            loglik_dep(&together, &counts, &spatial).unwrap(),
            loglik_dep(&apart, &counts, &spatial).unwrap()
        );
    }

    #[test]
    fn total_is_sum_of_pairs_and_empty_pairs_vanish() {
        let (spatial, counts) = line_of_three();
        let s = state(vec![0, 0, 1], vec![0, 2], 3.0, vec![0.4, 0.2]);
        let total = loglik_dep(&s, &counts, &spatial).unwrap();
        let sum = pair_loglik(0, 1, &counts, &s, &spatial).unwrap() + pair_loglik(1, 2, &counts, &s, &spatial).unwrap();
        assert!((total - sum).abs() < 1e-12);

        let spatial3 = Spatial::euclidean(&[[0.0, 0.0], [0.5, 0.0], [1.0, 0.0]], &[(0, 1), (1, 2), (0, 2)]).unwrap();
        let mut pairs = counts.pairs.clone();
        pairs.push(PairCounts { k: 0, k2: 2, forward: Count::default(), backward: Count::default() });
        let with_empty = DependenceCounts::new(pairs).unwrap();
        assert_eq!(loglik_dep(&s, &with_empty, &spatial3).unwrap(), loglik_dep(&s, &counts, &spatial3).unwrap());
    }

    #[test]
    fn relabelling_invariance() {
        let (spatial, counts) = line_of_three();
        let a = state(vec![0, 0, 1], vec![0, 2], 3.0, vec![0.4, 0.2]);
        let b = state(vec![1, 1, 0], vec![2, 0], 3.0, vec![0.2, 0.4]);
        assert!((loglik_dep(&a, &counts, &spatial).unwrap() - loglik_dep(&b, &counts, &spatial).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn partial_sums_add_up() {
        let (spatial, counts) = line_of_three();
        let s = state(vec![0, 0, 1], vec![0, 2], 3.0, vec![0.4, 0.2]);
        let m = DependenceModel::new(&counts, &spatial).unwrap();
        let g = state_gammas(&s);
        let parts = m.cluster_loglik(&s.labels, 0, g[0], s.beta)
            + m.cluster_loglik(&s.labels, 1, g[1], s.beta)
            + m.cross_loglik(&s.labels, s.gamma0, s.beta);
        assert!((parts - m.loglik(&s.labels, s.gamma0, &g, s.beta)).abs() < 1e-12);
    }
}
