//! Reversible-jump sampler over cluster centres and all model parameters.
//!
//! The target is the adjusted marginal likelihood times the dependence
//! likelihood times the prior. Seven moves are available: birth, death and
//! shift of a centre, independence updates of `σ`, `ξ` and the dependence
//! parameters, and a Gibbs draw of the hyperparameters.

mod chain;
mod trace;

use std::sync::Arc;

pub use chain::Chain;
pub use trace::{MoveKind, MoveStats, Sample, Trace};

use crate::data::{partition_sets, ClusterState, DependenceCounts, Exceedances, Spatial};
use crate::dependence::DependenceModel;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::marginal::{cluster_loglik_adjusted, ClusterFit, FitCache};
use crate::priors::PriorSpec;

/// Move probabilities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MoveConfig {
    pub birth: f64,
    pub death: f64,
    pub shift: f64,
    pub sigma: f64,
    pub xi: f64,
    pub chi: f64,
    pub hyper: f64,
}

impl Default for MoveConfig {
    fn default() -> Self {
        Self { birth: 0.2, death: 0.2, shift: 0.2, sigma: 0.1, xi: 0.1, chi: 0.1, hyper: 0.1 }
    }
}

impl MoveConfig {
    /// Parameter moves only, for runs on a fixed partition.
    pub fn fixed_partition() -> Self {
        Self { birth: 0.0, death: 0.0, shift: 0.0, sigma: 0.25, xi: 0.25, chi: 0.25, hyper: 0.25 }
    }

    pub fn as_array(&self) -> [f64; 7] {
        [self.birth, self.death, self.shift, self.sigma, self.xi, self.chi, self.hyper]
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.as_array();
        if p.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
            return Err(Error::InvalidInput("move probabilities must be nonnegative".into()));
        }
        let total: f64 = p.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!("move probabilities sum to {total}, not 1")));
        }
        Ok(())
    }

    pub fn changes_partition(&self) -> bool {
        self.birth > 0.0 || self.death > 0.0 || self.shift > 0.0
    }

    pub(crate) fn pick(&self, u: f64) -> MoveKind {
        let mut acc = 0.0;
        for (kind, p) in MoveKind::ALL.iter().zip(self.as_array()) {
            acc += p;
            if u < acc {
                return *kind;
            }
        }
        // Rounding can leave u just above the cumulative total.
        *MoveKind::ALL.iter().zip(self.as_array()).rev().find(|(_, p)| *p > 0.0).map(|(k, _)| k).unwrap_or(&MoveKind::Hyper)
    }
}

/// How the initial partition is chosen.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialClusters {
    /// This many centres drawn uniformly without replacement.
    Count(usize),
    /// A fraction of the sites, rounded, at least one.
    Fraction(f64),
    /// Given centres; labels follow by nearest centre.
    Centres(Vec<usize>),
    /// A fixed labelling, for parameter-only runs on a given partition.
    Labels(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainConfig {
    pub iterations: u64,
    pub burn_in: u64,
    pub thin: u64,
    pub initial: InitialClusters,
    pub seed: u64,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self { iterations: 1_000_000, burn_in: 500_000, thin: 100, initial: InitialClusters::Count(5), seed: 1 }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.thin == 0 {
            return Err(Error::InvalidInput("thinning must be at least 1".into()));
        }
        if self.burn_in >= self.iterations {
            return Err(Error::InvalidInput("burn-in must be shorter than the run".into()));
        }
        Ok(())
    }

    /// Number of retained samples.
    pub fn n_samples(&self) -> u64 {
        (self.iterations - self.burn_in) / self.thin
    }

    pub(crate) fn keeps(&self, iter: u64) -> bool {
        iter > self.burn_in && (iter - self.burn_in) % self.thin == 0
    }
}

/// Whether the data enter the target. `Flat` fixes both likelihoods at zero
/// so the chain samples the prior.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Likelihood {
    #[default]
    Full,
    Flat,
}

/// Immutable data and prior shared by every chain.
#[derive(Debug, Clone)]
pub struct Model {
    spatial: Spatial,
    exceedances: Exceedances,
    dependence: DependenceModel,
    priors: PriorSpec,
    likelihood: Likelihood,
    cache: Arc<FitCache>,
}

/// The three additive parts of the log posterior.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Components {
    pub marginal: f64,
    pub dependence: f64,
    pub prior: f64,
}

impl Components {
    pub fn total(&self) -> f64 {
        self.marginal + self.dependence + self.prior
    }
}

impl Model {
    pub fn new(spatial: Spatial, exceedances: Exceedances, counts: &DependenceCounts) -> Result<Self> {
        if exceedances.n_sites() != spatial.n_sites() {
            return Err(Error::InvalidInput(format!(
                "{} sites with exceedances but {} in the spatial data",
                exceedances.n_sites(),
                spatial.n_sites()
            )));
        }
        let dependence = DependenceModel::new(counts, &spatial)?;
        Ok(Self {
            spatial,
            exceedances,
            dependence,
            priors: PriorSpec::default(),
            likelihood: Likelihood::Full,
            cache: Arc::new(FitCache::new()),
        })
    }

    /// Prior-only model: no data enter the target.
    pub fn flat(spatial: Spatial) -> Result<Self> {
        let n = spatial.n_sites();
        let exceedances = Exceedances::new(vec![Vec::new(); n], 0)?;
        let dependence = DependenceModel::new(&DependenceCounts::new(Vec::new())?, &spatial)?;
        Ok(Self {
            spatial,
            exceedances,
            dependence,
            priors: PriorSpec::default(),
            likelihood: Likelihood::Flat,
            cache: Arc::new(FitCache::new()),
        })
    }

    pub fn with_priors(mut self, priors: PriorSpec) -> Self {
        self.priors = priors;
        self
    }

    pub fn with_likelihood(mut self, likelihood: Likelihood) -> Self {
        self.likelihood = likelihood;
        self
    }

    /// Share a fit cache, e.g. between chains on the same data.
    pub fn with_cache(mut self, cache: Arc<FitCache>) -> Self {
        self.cache = cache;
        self
    }

    pub fn spatial(&self) -> &Spatial {
        &self.spatial
    }

    pub fn exceedances(&self) -> &Exceedances {
        &self.exceedances
    }

    pub fn dependence(&self) -> &DependenceModel {
        &self.dependence
    }

    pub fn priors(&self) -> &PriorSpec {
        &self.priors
    }

    pub fn likelihood(&self) -> Likelihood {
        self.likelihood
    }

    pub fn cache(&self) -> &Arc<FitCache> {
        &self.cache
    }

    pub fn n_sites(&self) -> usize {
        self.spatial.n_sites()
    }

    /// Cached fit for a site set. `Ok(None)` under a flat likelihood.
    pub(crate) fn fit(&self, sites: &[usize]) -> std::result::Result<Option<Arc<ClusterFit>>, Arc<str>> {
        match self.likelihood {
            Likelihood::Flat => Ok(None),
            Likelihood::Full => self.cache.get_or_fit(&self.exceedances, sites).map(Some),
        }
    }

    #[inline]
    pub(crate) fn cluster_loglik(&self, fit: Option<&ClusterFit>, sites: &[usize], sigma: f64, xi: f64) -> f64 {
        match fit {
            None => 0.0,
            Some(f) => cluster_loglik_adjusted(f, &self.exceedances, sites, sigma, xi),
        }
    }

    pub(crate) fn dep_loglik(&self, state: &ClusterState) -> f64 {
        match self.likelihood {
            Likelihood::Flat => 0.0,
            Likelihood::Full => {
                let gammas: Vec<f64> = (0..state.n_clusters()).map(|j| state.gamma(j)).collect();
                self.dependence.loglik(&state.labels, state.gamma0, &gammas, state.beta)
            }
        }
    }

    /// Log-posterior components of `state`, refitting clusters as needed.
    /// A cluster whose fit fails makes the marginal part `−∞`.
    pub fn components(&self, state: &ClusterState) -> Components {
        let sets = partition_sets(&state.labels, state.n_clusters());
        let mut marginal = 0.0;
        for (j, sites) in sets.iter().enumerate() {
            marginal += match self.fit(sites) {
                Ok(fit) => self.cluster_loglik(fit.as_deref(), sites, state.sigma[j], state.xi[j]),
                Err(_) => f64::NEG_INFINITY,
            };
        }
        Components {
            marginal,
            dependence: self.dep_loglik(state),
            prior: self.priors.log_prior(state, self.n_sites()),
        }
    }

    pub fn log_posterior(&self, state: &ClusterState) -> f64 {
        self.components(state).total()
    }
}

/// Run one chain and keep the thinned post-burn-in samples.
pub fn run_chain(model: &Model, cfg: &ChainConfig, moves: &MoveConfig) -> Result<Trace> {
    run_chain_with(model, cfg, moves, |_| Ok(()))
}

/// As [`run_chain`], handing every retained sample to `sink` as it is drawn.
pub fn run_chain_with(
    model: &Model,
    cfg: &ChainConfig,
    moves: &MoveConfig,
    mut sink: impl FnMut(&Sample) -> Result<()>,
) -> Result<Trace> {
    let mut chain = Chain::new(model, cfg, moves)?;
    let mut samples = Vec::with_capacity(cfg.n_samples() as usize);
    for iter in 1..=cfg.iterations {
        chain.step();
        if cfg.keeps(iter) {
            let s = Sample { iter, state: chain.state().clone(), log_posterior: chain.log_posterior() };
            sink(&s)?;
            samples.push(s);
        }
    }
    Ok(Trace { samples, stats: chain.stats().clone(), n_sites: model.n_sites() })
}

/// Independent chains, one per config, run under `exec`.
pub fn run_chains(model: &Model, cfgs: &[ChainConfig], moves: &MoveConfig, exec: Exec) -> Vec<Result<Trace>> {
    exec.map_slice(cfgs, |cfg| run_chain(model, cfg, moves))
}
