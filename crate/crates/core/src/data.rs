//! Core domain types and the nearest-centre labelling rule.
//!
//! Sites and clusters are 0-based everywhere inside the library; the IO layer
//! converts to 1-based indices at the file boundary.

use std::fmt;

use crate::error::{Error, Result};

/// Pairwise distances (rescaled so the largest off-diagonal entry is 1) and
/// the adjacency graph over sites.
#[derive(Debug, Clone, PartialEq)]
pub struct Spatial {
    n_sites: usize,
    distances: Vec<f64>,
    scale: f64,
    adjacency: Vec<(usize, usize)>,
    neighbours: Vec<Vec<usize>>,
}

impl Spatial {
    /// Validate and rescale a row-major `n × n` distance matrix.
    ///
    /// Adjacency pairs are normalised to `(min, max)`, deduplicated and
    /// sorted. Every adjacent pair must have a strictly positive distance.
    pub fn new(n_sites: usize, distances: Vec<f64>, adjacency: &[(usize, usize)]) -> Result<Self> {
        if n_sites == 0 {
            return Err(Error::InvalidInput("no sites".into()));
        }
        if distances.len() != n_sites * n_sites {
            return Err(Error::InvalidInput(format!(
                "distance matrix has {} entries, expected {}",
                distances.len(),
                n_sites * n_sites
            )));
        }
        if let Some(issue) = distance_issues(n_sites, &distances).into_iter().next() {
            return Err(Error::InvalidInput(issue));
        }
        let max = distances.iter().copied().fold(0.0_f64, f64::max);
        let scale = if max > 0.0 { max } else { 1.0 };
        let distances: Vec<f64> = distances.iter().map(|d| d / scale).collect();

        let mut pairs = Vec::with_capacity(adjacency.len());
        for &(a, b) in adjacency {
            for idx in [a, b] {
                if idx >= n_sites {
                    return Err(Error::SiteOutOfRange { index: idx, n_sites });
                }
            }
            if a == b {
                return Err(Error::InvalidInput(format!("site {} adjacent to itself", a + 1)));
            }
            let pair = (a.min(b), a.max(b));
            if distances[pair.0 * n_sites + pair.1] <= 0.0 {
                return Err(Error::InvalidInput(format!(
                    "adjacent sites {} and {} have zero distance",
                    pair.0 + 1,
                    pair.1 + 1
                )));
            }
            pairs.push(pair);
        }
        pairs.sort_unstable();
        pairs.dedup();

        let mut neighbours = vec![Vec::new(); n_sites];
        for &(a, b) in &pairs {
            neighbours[a].push(b);
            neighbours[b].push(a);
        }
        for list in &mut neighbours {
            list.sort_unstable();
        }
        Ok(Self { n_sites, distances, scale, adjacency: pairs, neighbours })
    }

    /// Euclidean distances between planar points.
    pub fn euclidean(points: &[[f64; 2]], adjacency: &[(usize, usize)]) -> Result<Self> {
        let n = points.len();
        let mut d = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let dx = points[i][0] - points[j][0];
                let dy = points[i][1] - points[j][1];
                d[i * n + j] = dx.hypot(dy);
            }
        }
        Self::new(n, d, adjacency)
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    /// Rescaled distance in `[0, 1]`.
    #[inline]
    pub fn distance(&self, a: usize, b: usize) -> f64 {
        self.distances[a * self.n_sites + b]
    }

    /// Factor that converts rescaled distances back to input units.
    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn distances(&self) -> &[f64] {
        &self.distances
    }

    /// Unordered adjacent pairs `(k, k')` with `k < k'`.
    pub fn adjacency(&self) -> &[(usize, usize)] {
        &self.adjacency
    }

    pub fn neighbours(&self, site: usize) -> &[usize] {
        &self.neighbours[site]
    }

    pub fn is_adjacent(&self, a: usize, b: usize) -> bool {
        self.neighbours[a].binary_search(&b).is_ok()
    }
}

/// Describe every symmetry/diagonal/sign problem in a raw distance matrix.
pub fn distance_issues(n: usize, d: &[f64]) -> Vec<String> {
    let mut issues = Vec::new();
    for i in 0..n {
        if d[i * n + i] != 0.0 {
            issues.push(format!("distance[{0},{0}] = {1} is not zero", i + 1, d[i * n + i]));
        }
        for j in 0..n {
            let v = d[i * n + j];
            if !v.is_finite() || v < 0.0 {
                issues.push(format!("distance[{},{}] = {} is not a nonnegative number", i + 1, j + 1, v));
            }
            if j > i && v != d[j * n + i] {
                issues.push(format!(
                    "distance matrix not symmetric at [{},{}]: {} vs {}",
                    i + 1,
                    j + 1,
                    v,
                    d[j * n + i]
                ));
            }
        }
    }
    issues
}

/// Declustered observations, one value per site and period. Missing entries
/// hold `NaN` and are flagged in `observed`.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesMatrix {
    n_sites: usize,
    n_periods: usize,
    values: Vec<f64>,
    observed: Vec<bool>,
}

impl SeriesMatrix {
    pub const MISSING: f64 = f64::NAN;

    /// Build from per-site rows; `None` marks a missing period.
    pub fn from_rows(rows: &[Vec<Option<f64>>]) -> Result<Self> {
        let n_sites = rows.len();
        let n_periods = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_periods) {
            return Err(Error::InvalidInput("series rows have unequal lengths".into()));
        }
        let mut values = Vec::with_capacity(n_sites * n_periods);
        let mut observed = Vec::with_capacity(n_sites * n_periods);
        for row in rows {
            for v in row {
                match v {
                    Some(x) if x.is_finite() => {
                        values.push(*x);
                        observed.push(true);
                    }
                    _ => {
                        values.push(Self::MISSING);
                        observed.push(false);
                    }
                }
            }
        }
        Ok(Self { n_sites, n_periods, values, observed })
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn n_periods(&self) -> usize {
        self.n_periods
    }

    #[inline]
    pub fn get(&self, site: usize, period: usize) -> Option<f64> {
        let i = site * self.n_periods + period;
        self.observed[i].then(|| self.values[i])
    }

    pub fn row(&self, site: usize) -> Vec<Option<f64>> {
        (0..self.n_periods).map(|t| self.get(site, t)).collect()
    }

    /// Observed values of one site.
    pub fn observed_values(&self, site: usize) -> Vec<f64> {
        (0..self.n_periods).filter_map(|t| self.get(site, t)).collect()
    }
}

/// A single threshold excess `r − u > 0` observed in `period`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Excess {
    pub period: usize,
    pub value: f64,
}

/// Threshold excesses per site.
#[derive(Debug, Clone, PartialEq)]
pub struct Exceedances {
    per_site: Vec<Vec<Excess>>,
    n_periods: usize,
}

impl Exceedances {
    pub fn new(per_site: Vec<Vec<Excess>>, n_periods: usize) -> Result<Self> {
        for (k, site) in per_site.iter().enumerate() {
            for e in site {
                if !(e.value > 0.0) || !e.value.is_finite() {
                    return Err(Error::InvalidInput(format!(
                        "site {} has non-positive excess {}",
                        k + 1,
                        e.value
                    )));
                }
                if e.period >= n_periods {
                    return Err(Error::InvalidInput(format!(
                        "site {} has excess at period {} beyond {}",
                        k + 1,
                        e.period,
                        n_periods
                    )));
                }
            }
        }
        Ok(Self { per_site, n_periods })
    }

    /// Excesses of `series` above the per-site `thresholds`.
    pub fn from_series(series: &SeriesMatrix, thresholds: &[f64]) -> Result<Self> {
        if thresholds.len() != series.n_sites() {
            return Err(Error::InvalidInput("one threshold per site required".into()));
        }
        let per_site = (0..series.n_sites())
            .map(|k| {
                (0..series.n_periods())
                    .filter_map(|t| {
                        let r = series.get(k, t)?;
                        (r > thresholds[k]).then(|| Excess { period: t, value: r - thresholds[k] })
                    })
                    .collect()
            })
            .collect();
        Self::new(per_site, series.n_periods())
    }

    pub fn n_sites(&self) -> usize {
        self.per_site.len()
    }

    pub fn n_periods(&self) -> usize {
        self.n_periods
    }

    pub fn site(&self, k: usize) -> &[Excess] {
        &self.per_site[k]
    }

    pub fn count(&self, sites: &[usize]) -> usize {
        sites.iter().map(|&k| self.per_site[k].len()).sum()
    }

    /// Pooled excess values of a site set.
    pub fn pooled(&self, sites: &[usize]) -> Vec<f64> {
        sites.iter().flat_map(|&k| self.per_site[k].iter().map(|e| e.value)).collect()
    }

    /// Restrict to a subset of sites (in the given order).
    pub fn subset(&self, sites: &[usize]) -> Self {
        Self { per_site: sites.iter().map(|&k| self.per_site[k].clone()).collect(), n_periods: self.n_periods }
    }
}

/// A joint-exceedance count for one orientation of an adjacent pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Count {
    /// Joint exceedances.
    pub p: u32,
    /// Usable conditioning exceedance times.
    pub q: u32,
}

/// Counts for one unordered adjacent pair `(k, k')`, `k < k'`.
/// `forward` holds `(P[k,k'], Q[k,k'])`, `backward` holds `(P[k',k], Q[k',k])`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairCounts {
    pub k: usize,
    pub k2: usize,
    pub forward: Count,
    pub backward: Count,
}

/// Directed joint-exceedance counts over the adjacent pairs.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DependenceCounts {
    pub pairs: Vec<PairCounts>,
}

impl DependenceCounts {
    pub fn new(mut pairs: Vec<PairCounts>) -> Result<Self> {
        for pc in &mut pairs {
            if pc.k == pc.k2 {
                return Err(Error::InvalidInput("self pair in dependence counts".into()));
            }
            if pc.k > pc.k2 {
                std::mem::swap(&mut pc.k, &mut pc.k2);
                std::mem::swap(&mut pc.forward, &mut pc.backward);
            }
            for c in [pc.forward, pc.backward] {
                if c.p > c.q {
                    return Err(Error::InvalidInput(format!(
                        "P = {} exceeds Q = {} for pair ({}, {})",
                        c.p,
                        c.q,
                        pc.k + 1,
                        pc.k2 + 1
                    )));
                }
            }
        }
        pairs.sort_by_key(|p| (p.k, p.k2));
        Ok(Self { pairs })
    }

    /// Counts for the ordered pair `(k, k')`, if the pair is present.
    pub fn get(&self, k: usize, k2: usize) -> Option<Count> {
        let key = (k.min(k2), k.max(k2));
        let idx = self.pairs.binary_search_by_key(&key, |p| (p.k, p.k2)).ok()?;
        let pc = &self.pairs[idx];
        Some(if k < k2 { pc.forward } else { pc.backward })
    }

    /// Pairs with `Q = 0` in both orientations.
    pub fn empty_pairs(&self) -> Vec<(usize, usize)> {
        self.pairs
            .iter()
            .filter(|p| p.forward.q == 0 && p.backward.q == 0)
            .map(|p| (p.k, p.k2))
            .collect()
    }
}

/// Hyperparameters of the cluster-parameter priors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyperparameters {
    /// Poisson rate for `J − 1`.
    pub kappa: f64,
    pub mu_sigma: f64,
    pub theta_sigma: f64,
    pub mu_xi: f64,
    pub theta_xi: f64,
    /// Rate of the exponential prior on each `ε_j`.
    pub theta_epsilon: f64,
}

impl Hyperparameters {
    /// Central values of the hyperpriors. The Inverse-Gamma(1, 0.1) priors
    /// have no finite mean, so their mode is used instead.
    pub fn prior_centre() -> Self {
        Self { kappa: 1000.0, mu_sigma: 0.0, theta_sigma: 0.05, mu_xi: 0.0, theta_xi: 0.05, theta_epsilon: 2.5 }
    }

    pub fn is_valid(&self) -> bool {
        self.kappa > 0.0 && self.theta_sigma > 0.0 && self.theta_xi > 0.0 && self.theta_epsilon > 0.0
            && self.mu_sigma.is_finite()
            && self.mu_xi.is_finite()
    }
}

/// Full sampler state: centres, labels and every cluster parameter.
///
/// With a single cluster only `γ_1` is identified, so it is stored in
/// `gamma0` with `epsilon = [0]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterState {
    pub centres: Vec<usize>,
    pub labels: Vec<usize>,
    pub sigma: Vec<f64>,
    pub xi: Vec<f64>,
    pub gamma0: f64,
    pub epsilon: Vec<f64>,
    pub beta: f64,
    pub hyper: Hyperparameters,
}

impl ClusterState {
    pub fn n_clusters(&self) -> usize {
        self.centres.len()
    }

    /// Within-cluster decay rate `γ_j = γ_0 exp(−ε_j)`.
    pub fn gamma(&self, j: usize) -> f64 {
        gamma_from_epsilon(self.gamma0, self.epsilon[j])
    }

    /// Sites carrying label `j`, ascending.
    pub fn cluster_sites(&self, j: usize) -> Vec<usize> {
        self.labels.iter().enumerate().filter(|(_, &z)| z == j).map(|(k, _)| k).collect()
    }

    pub fn partition(&self) -> Vec<Vec<usize>> {
        partition_sets(&self.labels, self.n_clusters())
    }
}

/// `γ_j = γ_0 exp(−ε_j)`.
#[inline]
pub fn gamma_from_epsilon(gamma0: f64, epsilon: f64) -> f64 {
    gamma0 * (-epsilon).exp()
}

/// Group site indices by label.
pub fn partition_sets(labels: &[usize], n_clusters: usize) -> Vec<Vec<usize>> {
    let mut sets = vec![Vec::new(); n_clusters];
    for (k, &z) in labels.iter().enumerate() {
        sets[z].push(k);
    }
    sets
}

/// Assign each site to its nearest centre; ties go to the lowest cluster index.
pub fn assign_labels(centres: &[usize], spatial: &Spatial) -> Result<Vec<usize>> {
    check_centres(centres, spatial.n_sites())?;
    Ok(assign_labels_unchecked(centres, spatial))
}

pub(crate) fn check_centres(centres: &[usize], n_sites: usize) -> Result<()> {
    if centres.is_empty() {
        return Err(Error::EmptyCentres);
    }
    let mut seen = vec![false; n_sites];
    for &c in centres {
        if c >= n_sites {
            return Err(Error::SiteOutOfRange { index: c, n_sites });
        }
        if seen[c] {
            return Err(Error::DuplicateCentre(c));
        }
        seen[c] = true;
    }
    Ok(())
}

pub(crate) fn assign_labels_unchecked(centres: &[usize], spatial: &Spatial) -> Vec<usize> {
    (0..spatial.n_sites())
        .map(|k| {
            let mut best = 0;
            let mut best_d = spatial.distance(k, centres[0]);
            for (j, &c) in centres.iter().enumerate().skip(1) {
                let d = spatial.distance(k, c);
                if d < best_d {
                    best = j;
                    best_d = d;
                }
            }
            best
        })
        .collect()
}

/// Sites equidistant from two or more nearest centres.
pub fn tied_sites(centres: &[usize], spatial: &Spatial) -> Vec<usize> {
    (0..spatial.n_sites())
        .filter(|&k| {
            let mut ds: Vec<f64> = centres.iter().map(|&c| spatial.distance(k, c)).collect();
            ds.sort_by(f64::total_cmp);
            ds.len() > 1 && ds[0] == ds[1]
        })
        .collect()
}

/// One invariant violation found by [`validate_state`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    EmptyCentres,
    CentreOutOfRange(usize),
    DuplicateCentre(usize),
    LabelsLength { expected: usize, found: usize },
    LabelsCentresMismatch { site: usize },
    LabelOutOfRange { site: usize },
    EmptyCluster(usize),
    ParameterLength(&'static str),
    SigmaNonPositive(usize),
    XiNotFinite(usize),
    EpsilonNegative(usize),
    Gamma0NonPositive,
    BetaNonPositive,
    InvalidHyperparameters,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyCentres => write!(f, "no cluster centres"),
            Violation::CentreOutOfRange(c) => write!(f, "centre {} out of range", c + 1),
            Violation::DuplicateCentre(c) => write!(f, "duplicate centre {}", c + 1),
            Violation::LabelsLength { expected, found } => {
                write!(f, "labels length {found}, expected {expected}")
            }
            Violation::LabelsCentresMismatch { site } => {
                write!(f, "labels/centres mismatch at site {}", site + 1)
            }
            Violation::LabelOutOfRange { site } => write!(f, "label out of range at site {}", site + 1),
            Violation::EmptyCluster(j) => write!(f, "cluster {} has no sites", j + 1),
            Violation::ParameterLength(name) => write!(f, "{name} has wrong length"),
            Violation::SigmaNonPositive(j) => write!(f, "sigma not positive in cluster {}", j + 1),
            Violation::XiNotFinite(j) => write!(f, "xi not finite in cluster {}", j + 1),
            Violation::EpsilonNegative(j) => write!(f, "epsilon negative in cluster {}", j + 1),
            Violation::Gamma0NonPositive => write!(f, "gamma0 not positive"),
            Violation::BetaNonPositive => write!(f, "beta not positive"),
            Violation::InvalidHyperparameters => write!(f, "invalid hyperparameters"),
        }
    }
}

/// Result of [`validate_state`]. Ties are reported but are not violations.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Validation {
    pub violations: Vec<Violation>,
    pub tied_sites: Vec<usize>,
}

impl Validation {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Check every state invariant. When `labels_fixed` is set (cluster-wise
/// runs on a fixed partition) the labels need not derive from the centres.
pub fn validate_state(state: &ClusterState, spatial: &Spatial, labels_fixed: bool) -> Validation {
    let mut v = Vec::new();
    let n = spatial.n_sites();
    let j_count = state.n_clusters();
    if j_count == 0 {
        v.push(Violation::EmptyCentres);
    }
    let mut seen = vec![false; n];
    let mut centres_ok = j_count > 0;
    for &c in &state.centres {
        if c >= n {
            v.push(Violation::CentreOutOfRange(c));
            centres_ok = false;
        } else if seen[c] {
            v.push(Violation::DuplicateCentre(c));
            centres_ok = false;
        } else {
            seen[c] = true;
        }
    }
    if state.labels.len() != n {
        v.push(Violation::LabelsLength { expected: n, found: state.labels.len() });
    } else {
        for (k, &z) in state.labels.iter().enumerate() {
            if z >= j_count {
                v.push(Violation::LabelOutOfRange { site: k });
            }
        }
        if centres_ok && !labels_fixed {
            let expected = assign_labels_unchecked(&state.centres, spatial);
            for (k, (&a, &b)) in expected.iter().zip(&state.labels).enumerate() {
                if a != b {
                    v.push(Violation::LabelsCentresMismatch { site: k });
                }
            }
        }
        for j in 0..j_count {
            if !state.labels.contains(&j) {
                v.push(Violation::EmptyCluster(j));
            }
        }
    }
    for (name, len) in [("sigma", state.sigma.len()), ("xi", state.xi.len()), ("epsilon", state.epsilon.len())] {
        if len != j_count {
            v.push(Violation::ParameterLength(name));
        }
    }
    for (j, &s) in state.sigma.iter().enumerate() {
        if !(s > 0.0) || !s.is_finite() {
            v.push(Violation::SigmaNonPositive(j));
        }
    }
    for (j, &x) in state.xi.iter().enumerate() {
        if !x.is_finite() {
            v.push(Violation::XiNotFinite(j));
        }
    }
    for (j, &e) in state.epsilon.iter().enumerate() {
        if !(e >= 0.0) {
            v.push(Violation::EpsilonNegative(j));
        }
    }
    if !(state.gamma0 > 0.0) || !state.gamma0.is_finite() {
        v.push(Violation::Gamma0NonPositive);
    }
    if !(state.beta > 0.0) || !state.beta.is_finite() {
        v.push(Violation::BetaNonPositive);
    }
    if !state.hyper.is_valid() {
        v.push(Violation::InvalidHyperparameters);
    }
    let tied = if centres_ok { tied_sites(&state.centres, spatial) } else { Vec::new() };
    Validation { violations: v, tied_sites: tied }
}
