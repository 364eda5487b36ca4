//! TOML run configuration. Relative paths resolve against the config file's
//! directory.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use extremeclust::priors::PriorSpec;
use extremeclust::sampler::{ChainConfig, InitialClusters, MoveConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub data: DataConfig,
    #[serde(default)]
    pub preprocess: PreprocessConfig,
    #[serde(default)]
    pub sampler: SamplerConfig,
    #[serde(default)]
    pub moves: MovesConfig,
    #[serde(default)]
    pub priors: PriorsConfig,
    #[serde(default)]
    pub summary: SummaryConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

/// Input files. Sites are ordered by first appearance in the series file,
/// and every other file uses that order.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub series: PathBuf,
    /// K×K distances; Euclidean distances between locations if absent.
    pub distances: Option<PathBuf>,
    /// Adjacent pairs; Voronoi neighbours of the locations if absent.
    pub adjacency: Option<PathBuf>,
    pub locations: Option<PathBuf>,
    /// Precomputed joint-exceedance counts; computed from the series if absent.
    pub counts: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessConfig {
    /// Declustering period in time units.
    pub period_length: i64,
    /// Threshold as an empirical quantile of each site's declustered series.
    pub threshold: Option<f64>,
    /// Threshold as one absolute level for every site.
    pub threshold_value: Option<f64>,
    /// Quantile level for the joint-exceedance counts.
    pub dependence_threshold: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self { period_length: 1, threshold: None, threshold_value: None, dependence_threshold: 0.95 }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    pub iterations: u64,
    pub burn_in: u64,
    pub thin: u64,
    pub seed: u64,
    /// Initial number of centres as a fraction of the sites.
    pub initial_fraction: f64,
    /// Initial number of centres; overrides the fraction.
    pub initial_count: Option<usize>,
    /// Independent chains, seeded from `seed`.
    pub chains: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        let c = ChainConfig::default();
        Self {
            iterations: c.iterations,
            burn_in: c.burn_in,
            thin: c.thin,
            seed: c.seed,
            initial_fraction: 0.1,
            initial_count: None,
            chains: 1,
        }
    }
}

impl SamplerConfig {
    pub fn chain(&self, seed: u64) -> ChainConfig {
        let initial = match self.initial_count {
            Some(n) => InitialClusters::Count(n),
            None => InitialClusters::Fraction(self.initial_fraction),
        };
        ChainConfig { iterations: self.iterations, burn_in: self.burn_in, thin: self.thin, initial, seed }
    }
}

#[derive(Debug, Clone, Copy, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct MovesConfig {
    pub birth: f64,
    pub death: f64,
    pub shift: f64,
    pub sigma: f64,
    pub xi: f64,
    pub chi: f64,
    pub hyper: f64,
}

impl Default for MovesConfig {
    fn default() -> Self {
        let m = MoveConfig::default();
        Self { birth: m.birth, death: m.death, shift: m.shift, sigma: m.sigma, xi: m.xi, chi: m.chi, hyper: m.hyper }
    }
}

impl From<MovesConfig> for MoveConfig {
    fn from(m: MovesConfig) -> Self {
        MoveConfig { birth: m.birth, death: m.death, shift: m.shift, sigma: m.sigma, xi: m.xi, chi: m.chi, hyper: m.hyper }
    }
}

/// Overrides of the default prior constants.
#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct PriorsConfig {
    pub kappa_shape: Option<f64>,
    pub kappa_rate: Option<f64>,
    pub mu_sigma_var: Option<f64>,
    pub mu_xi_var: Option<f64>,
    pub ig_shape: Option<f64>,
    pub ig_scale: Option<f64>,
    pub eps_shape: Option<f64>,
    pub eps_rate: Option<f64>,
    pub gamma0_rate: Option<f64>,
    pub beta_rate: Option<f64>,
}

impl PriorsConfig {
    pub fn spec(&self) -> Result<PriorSpec> {
        let mut p = PriorSpec::default();
        let fields = [
            (&mut p.kappa_shape, self.kappa_shape, "kappa_shape"),
            (&mut p.kappa_rate, self.kappa_rate, "kappa_rate"),
            (&mut p.mu_sigma_var, self.mu_sigma_var, "mu_sigma_var"),
            (&mut p.mu_xi_var, self.mu_xi_var, "mu_xi_var"),
            (&mut p.ig_shape, self.ig_shape, "ig_shape"),
            (&mut p.ig_scale, self.ig_scale, "ig_scale"),
            (&mut p.eps_shape, self.eps_shape, "eps_shape"),
            (&mut p.eps_rate, self.eps_rate, "eps_rate"),
            (&mut p.gamma0_rate, self.gamma0_rate, "gamma0_rate"),
            (&mut p.beta_rate, self.beta_rate, "beta_rate"),
        ];
        for (slot, value, name) in fields {
            if let Some(v) = value {
                if !(v > 0.0 && v.is_finite()) {
                    bail!("priors.{name} must be positive, got {v}");
                }
                *slot = v;
            }
        }
        Ok(p)
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct SummaryConfig {
    /// Central probability of reported intervals.
    pub level: f64,
    /// Return periods in years.
    pub taus: Vec<f64>,
    /// Declustering periods per year; with a quantile threshold this gives
    /// the exceedance rate.
    pub periods_per_year: Option<f64>,
    /// Expected exceedances per year; overrides `periods_per_year`.
    pub lambda_u: Option<f64>,
}

impl Default for SummaryConfig {
    fn default() -> Self {
        Self { level: 0.9, taus: vec![10.0, 25.0, 50.0, 100.0], periods_per_year: None, lambda_u: None }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("results") }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        let mut cfg: Config = toml::from_str(&text).map_err(|e| {
            let line = e.span().map_or(0, |s| text[..s.start].matches('\n').count() + 1);
            anyhow::anyhow!("malformed config {}:{line}: {}", path.display(), e.message().trim())
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve(base);
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.data.series);
        for p in [
            &mut self.data.distances,
            &mut self.data.adjacency,
            &mut self.data.locations,
            &mut self.data.counts,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
        fix(&mut self.output.dir);
    }

    fn validate(&self) -> Result<()> {
        let pre = &self.preprocess;
        match (pre.threshold, pre.threshold_value) {
            (Some(_), Some(_)) => bail!("set only one of preprocess.threshold and preprocess.threshold_value"),
            (Some(p), None) if !(p > 0.0 && p < 1.0) => bail!("preprocess.threshold {p} not in (0, 1)"),
            _ => {}
        }
        if pre.period_length < 1 {
            bail!("preprocess.period_length must be at least 1");
        }
        if self.data.distances.is_none() && self.data.locations.is_none() {
            bail!("data needs distances or locations");
        }
        if self.data.adjacency.is_none() && self.data.locations.is_none() {
            bail!("data needs adjacency or locations");
        }
        if self.sampler.chains == 0 {
            bail!("sampler.chains must be at least 1");
        }
        MoveConfig::from(self.moves).validate()?;
        self.sampler.chain(self.sampler.seed).validate()?;
        self.priors.spec()?;
        let s = &self.summary;
        if !(s.level > 0.0 && s.level < 1.0) {
            bail!("summary.level {} not in (0, 1)", s.level);
        }
        Ok(())
    }

    /// Quantile level of the site thresholds, 0.95 when nothing is set.
    pub fn threshold_quantile(&self) -> Option<f64> {
        match (self.preprocess.threshold, self.preprocess.threshold_value) {
            (Some(p), _) => Some(p),
            (None, Some(_)) => None,
            (None, None) => Some(0.95),
        }
    }

    /// Expected threshold exceedances per year, if it can be determined.
    pub fn lambda_u(&self) -> Option<f64> {
        self.summary.lambda_u.or_else(|| {
            let per_year = self.summary.periods_per_year?;
            Some(extremeclust::posterior::exceedance_rate(per_year, self.threshold_quantile()?))
        })
    }
}

/// Settings `summarize` needs beyond the trace, saved next to it by `sample`.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RunInfo {
    pub level: f64,
    pub taus: Vec<f64>,
    pub lambda_u: Option<f64>,
}

pub const RUN_INFO: &str = "run.toml";
pub const THRESHOLDS: &str = "thresholds.csv";
