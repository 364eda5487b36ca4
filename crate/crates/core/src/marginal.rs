//! Cluster-wise GPD likelihood, maximum likelihood fits and the sandwich
//! curvature adjustment of the working-independence likelihood.
//!
//! For a cluster with MLE `θ̂`, observed information `H` and score
//! covariance `V`, the adjusted log-likelihood is the independence
//! log-likelihood evaluated at `θ̂ + B(θ − θ̂)` with
//! `B = (H^{1/2})⁻¹ (Σ⁻¹)^{1/2}` and `Σ = H⁻¹ V H⁻¹`.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use crate::data::{partition_sets, Exceedances};
use crate::error::{Error, Result};
use crate::gpd;
use crate::linalg::{self, Mat2};

/// Minimum pooled excesses for a cluster fit.
pub const MIN_EXCESSES: usize = 5;
/// Box constraint on the shape at the MLE.
pub const XI_BOUNDS: (f64, f64) = (-0.5, 2.0);
const GRAD_TOL: f64 = 1e-6;
const V_MAX_CONDITION: f64 = 1e12;

/// MLE, curvature blocks and adjustment matrix for one cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterFit {
    /// `(σ̂, ξ̂)`.
    pub theta_hat: [f64; 2],
    /// Observed information at the MLE.
    pub h: Mat2,
    /// Score covariance at the MLE, grouped by period.
    pub v: Mat2,
    pub b: Mat2,
    pub loglik_hat: f64,
    pub n_excesses: usize,
}

impl ClusterFit {
    /// Fit the pooled excesses of `sites` and compute the adjustment.
    pub fn new(exc: &Exceedances, sites: &[usize]) -> Result<Self> {
        let values = exc.pooled(sites);
        let (theta_hat, loglik_hat) = fit_gpd(&values)?;
        let (h, v) = sandwich_for_sites(theta_hat, sites, exc)?;
        let b = compute_b(&h, &v)?;
        Ok(Self { theta_hat, h, v, b, loglik_hat, n_excesses: values.len() })
    }

    /// Parameters at which the independence likelihood is evaluated.
    #[inline]
    pub fn map(&self, sigma: f64, xi: f64) -> (f64, f64) {
        let d0 = sigma - self.theta_hat[0];
        let d1 = xi - self.theta_hat[1];
        (
            self.theta_hat[0] + self.b[(0, 0)] * d0 + self.b[(0, 1)] * d1,
            self.theta_hat[1] + self.b[(1, 0)] * d0 + self.b[(1, 1)] * d1,
        )
    }
}

/// Per-cluster quantities for a whole labelling.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjustedMarginal {
    pub theta_hat: Vec<[f64; 2]>,
    pub h_blocks: Vec<Mat2>,
    pub v_blocks: Vec<Mat2>,
    pub b_blocks: Vec<Mat2>,
}

impl AdjustedMarginal {
    pub fn new(labels: &[usize], n_clusters: usize, exc: &Exceedances) -> Result<Self> {
        let fits = partition_sets(labels, n_clusters)
            .iter()
            .map(|sites| ClusterFit::new(exc, sites))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_fits(fits.iter()))
    }

    pub fn from_fits<'a>(fits: impl Iterator<Item = &'a ClusterFit>) -> Self {
        let mut out = Self { theta_hat: vec![], h_blocks: vec![], v_blocks: vec![], b_blocks: vec![] };
        for f in fits {
            out.theta_hat.push(f.theta_hat);
            out.h_blocks.push(f.h);
            out.v_blocks.push(f.v);
            out.b_blocks.push(f.b);
        }
        out
    }
}

/// Working-independence log-likelihood of all sites.
pub fn loglik_ind(sigma: &[f64], xi: &[f64], labels: &[usize], exc: &Exceedances) -> f64 {
    let mut ll = 0.0;
    for (k, &z) in labels.iter().enumerate() {
        ll += gpd::loglik(exc.site(k).iter().map(|e| e.value), sigma[z], xi[z]);
    }
    ll
}

/// Independence log-likelihood of the excesses of `sites`.
#[inline]
pub fn sites_loglik(exc: &Exceedances, sites: &[usize], sigma: f64, xi: f64) -> f64 {
    if !(sigma > 0.0) {
        return f64::NEG_INFINITY;
    }
    let mut ll = 0.0;
    for &k in sites {
        ll += gpd::loglik(exc.site(k).iter().map(|e| e.value), sigma, xi);
        if ll == f64::NEG_INFINITY {
            break;
        }
    }
    ll
}

/// Adjusted log-likelihood of one cluster at `(σ, ξ)`.
#[inline]
pub fn cluster_loglik_adjusted(fit: &ClusterFit, exc: &Exceedances, sites: &[usize], sigma: f64, xi: f64) -> f64 {
    let (s, x) = fit.map(sigma, xi);
    sites_loglik(exc, sites, s, x)
}

/// Adjusted log-likelihood of all clusters.
pub fn loglik_adjusted(sigma: &[f64], xi: &[f64], adj: &AdjustedMarginal, labels: &[usize], exc: &Exceedances) -> f64 {
    let sets = partition_sets(labels, sigma.len());
    let mut ll = 0.0;
    for (j, sites) in sets.iter().enumerate() {
        let th = adj.theta_hat[j];
        let b = adj.b_blocks[j];
        let d = [sigma[j] - th[0], xi[j] - th[1]];
        let s = th[0] + b[(0, 0)] * d[0] + b[(0, 1)] * d[1];
        let x = th[1] + b[(1, 0)] * d[0] + b[(1, 1)] * d[1];
        ll += sites_loglik(exc, sites, s, x);
    }
    ll
}

/// Per-cluster MLEs `(σ̂_j, ξ̂_j)` under the given labelling.
pub fn fit_mle(labels: &[usize], n_clusters: usize, exc: &Exceedances) -> Result<Vec<[f64; 2]>> {
    partition_sets(labels, n_clusters)
        .iter()
        .map(|sites| fit_gpd(&exc.pooled(sites)).map(|(t, _)| t))
        .collect()
}

/// Observed information and period-grouped score covariance per cluster.
pub fn sandwich_blocks(
    theta_hat: &[[f64; 2]],
    labels: &[usize],
    exc: &Exceedances,
) -> Result<(Vec<Mat2>, Vec<Mat2>)> {
    let sets = partition_sets(labels, theta_hat.len());
    let mut hs = Vec::with_capacity(sets.len());
    let mut vs = Vec::with_capacity(sets.len());
    for (j, sites) in sets.iter().enumerate() {
        let (h, v) = sandwich_for_sites(theta_hat[j], sites, exc)?;
        hs.push(h);
        vs.push(v);
    }
    Ok((hs, vs))
}

fn sandwich_for_sites(theta: [f64; 2], sites: &[usize], exc: &Exceedances) -> Result<(Mat2, Mat2)> {
    let mut h = Mat2::zeros();
    let mut scores = vec![[0.0f64; 2]; exc.n_periods()];
    for &k in sites {
        for e in exc.site(k) {
            let d = gpd::derivatives(e.value, theta[0], theta[1])
                .ok_or_else(|| Error::InvalidInput("excess outside GPD support at the MLE".into()))?;
            h[(0, 0)] -= d.hess[0][0];
            h[(0, 1)] -= d.hess[0][1];
            h[(1, 0)] -= d.hess[1][0];
            h[(1, 1)] -= d.hess[1][1];
            scores[e.period][0] += d.grad[0];
            scores[e.period][1] += d.grad[1];
        }
    }
    let mut v = Mat2::zeros();
    for s in &scores {
        v[(0, 0)] += s[0] * s[0];
        v[(0, 1)] += s[0] * s[1];
        v[(1, 1)] += s[1] * s[1];
    }
    v[(1, 0)] = v[(0, 1)];
    let h = linalg::symmetrise(&h);
    if !linalg::is_spd(&h) {
        return Err(Error::NotPositiveDefinite("observed information at the MLE".into()));
    }
    Ok((h, v))
}

/// `B = (H^{1/2})⁻¹ (Σ⁻¹)^{1/2}` with `Σ = H⁻¹ V H⁻¹`, using principal
/// symmetric roots. A near-singular `V` gets a small ridge first.
pub fn compute_b(h: &Mat2, v: &Mat2) -> Result<Mat2> {
    if !linalg::is_spd(h) {
        return Err(Error::NotPositiveDefinite("H".into()));
    }
    let mut v = linalg::symmetrise(v);
    let [lo, hi] = linalg::sym_eigenvalues(&v);
    if !(lo > 0.0) || hi / lo > V_MAX_CONDITION {
        let ridge = 1e-8 * v.trace() / 2.0;
        v += Mat2::identity() * ridge.max(f64::MIN_POSITIVE);
    }
    let v_inv = linalg::inverse(&v)?;
    let sigma_inv = linalg::symmetrise(&(h * v_inv * h));
    let root_sigma_inv = linalg::sym_sqrt(&sigma_inv)?;
    let root_h_inv = linalg::inverse(&linalg::sym_sqrt(h)?)?;
    Ok(root_h_inv * root_sigma_inv)
}

fn feasible(values_max: f64, sigma: f64, xi: f64) -> bool {
    sigma > 0.0 && xi > XI_BOUNDS.0 && xi < XI_BOUNDS.1 && (xi >= 0.0 || 1.0 + xi * values_max / sigma > 0.0)
}

/// Maximum likelihood fit of a GPD to `values`. Returns `((σ̂, ξ̂), ℓ̂)`.
///
/// Newton's method with analytic derivatives from the moment estimate; if
/// that fails, Nelder–Mead on `(log σ, ξ)` from three moment-based starts
/// followed by Newton polishing. The optimum must be interior to the
/// shape box and have a positive definite observed information.
pub fn fit_gpd(values: &[f64]) -> Result<([f64; 2], f64)> {
    let n = values.len();
    if n < MIN_EXCESSES {
        return Err(Error::InsufficientExceedances { found: n, needed: MIN_EXCESSES });
    }
    let nf = n as f64;
    let ymax = values.iter().copied().fold(0.0, f64::max);
    let mean = values.iter().sum::<f64>() / nf;
    let var = values.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (nf - 1.0).max(1.0);
    let objective = |p: [f64; 2]| -> f64 {
        let sigma = p[0].exp();
        if !feasible(ymax, sigma, p[1]) {
            return f64::INFINITY;
        }
        -gpd::loglik(values.iter().copied(), sigma, p[1]) / nf
    };

    let ratio = if var > 0.0 { mean * mean / var } else { 1.0 };
    let xi_mom = (0.5 * (1.0 - ratio)).clamp(-0.4, 1.5);
    let sigma_mom = (0.5 * mean * (ratio + 1.0)).max(1e-8);
    let mut starts = vec![[sigma_mom.ln(), xi_mom], [mean.ln(), 0.0], [(1.5 * sigma_mom).ln(), (xi_mom + 0.2).min(1.5)]];
    for s in &mut starts {
        // Bounded-support starts must cover the largest excess.
        if s[1] < 0.0 && !feasible(ymax, s[0].exp(), s[1]) {
            s[0] = (-s[1] * ymax * 1.1).ln();
        }
    }

    let interior = |t: &[f64; 2]| t[1] > XI_BOUNDS.0 + 1e-6 && t[1] < XI_BOUNDS.1 - 1e-6;
    if let Ok((theta, ll)) = newton_polish(values, ymax, [starts[0][0].exp(), starts[0][1]]) {
        if interior(&theta) {
            return Ok((theta, ll));
        }
    }
    let mut best: Option<([f64; 2], f64)> = None;
    for start in starts {
        let (p, f) = nelder_mead(&objective, start, 1e-8, 2000);
        if f.is_finite() && best.map_or(true, |(_, bf)| f < bf) {
            best = Some((p, f));
        }
    }
    let Some((p, _)) = best else {
        return Err(Error::NonConvergence("no feasible start".into()));
    };
    let (theta, ll) = newton_polish(values, ymax, [p[0].exp(), p[1]])?;
    if !interior(&theta) {
        return Err(Error::NonConvergence(format!("shape estimate {} on the box boundary", theta[1])));
    }
    Ok((theta, ll))
}

fn total_derivatives(values: &[f64], theta: [f64; 2]) -> Option<(f64, [f64; 2], [[f64; 2]; 2])> {
    let mut v = 0.0;
    let mut g = [0.0; 2];
    let mut hm = [[0.0; 2]; 2];
    for &y in values {
        let d = gpd::derivatives(y, theta[0], theta[1])?;
        v += d.value;
        for i in 0..2 {
            g[i] += d.grad[i];
            for j in 0..2 {
                hm[i][j] += d.hess[i][j];
            }
        }
    }
    Some((v, g, hm))
}

fn newton_polish(values: &[f64], ymax: f64, start: [f64; 2]) -> Result<([f64; 2], f64)> {
    let nf = values.len() as f64;
    let mut theta = start;
    let scaled = |g: [f64; 2], th: [f64; 2]| ((g[0] * th[0]).powi(2) + g[1].powi(2)).sqrt() / nf;
    for _ in 0..100 {
        let Some((ll, g, hm)) = total_derivatives(values, theta) else {
            return Err(Error::NonConvergence("left the support while polishing".into()));
        };
        if scaled(g, theta) < 1e-12 {
            return Ok((theta, ll));
        }
        let neg_h = Mat2::new(-hm[0][0], -hm[0][1], -hm[1][0], -hm[1][1]);
        let step = if linalg::is_spd(&neg_h) {
            let inv = linalg::inverse(&neg_h)?;
            [inv[(0, 0)] * g[0] + inv[(0, 1)] * g[1], inv[(1, 0)] * g[0] + inv[(1, 1)] * g[1]]
        } else {
            [g[0] * theta[0] * theta[0] / nf * 0.1, g[1] / nf * 0.1]
        };
        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..60 {
            let cand = [theta[0] + t * step[0], theta[1] + t * step[1]];
            if feasible(ymax, cand[0], cand[1]) {
                let c_ll = gpd::loglik(values.iter().copied(), cand[0], cand[1]);
                if c_ll >= ll {
                    theta = cand;
                    moved = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !moved {
            break;
        }
    }
    let Some((ll, g, _)) = total_derivatives(values, theta) else {
        return Err(Error::NonConvergence("left the support while polishing".into()));
    };
    if scaled(g, theta) < GRAD_TOL {
        Ok((theta, ll))
    } else {
        Err(Error::NonConvergence(format!("gradient norm {} at ({}, {})", scaled(g, theta), theta[0], theta[1])))
    }
}

/// Two-dimensional Nelder–Mead minimiser.
fn nelder_mead(f: &impl Fn([f64; 2]) -> f64, start: [f64; 2], ftol: f64, max_iter: usize) -> ([f64; 2], f64) {
    let mut simplex = [start, [start[0] + 0.1, start[1]], [start[0], start[1] + 0.05]];
    let mut vals = simplex.map(|p| f(p));
    for _ in 0..max_iter {
        let mut idx = [0, 1, 2];
        idx.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        simplex = idx.map(|i| simplex[i]);
        vals = idx.map(|i| vals[i]);
        if vals[2].is_finite() && (vals[2] - vals[0]).abs() <= ftol * (vals[0].abs() + ftol) {
            break;
        }
        let c = [(simplex[0][0] + simplex[1][0]) / 2.0, (simplex[0][1] + simplex[1][1]) / 2.0];
        let along = |t: f64| [c[0] + t * (simplex[2][0] - c[0]), c[1] + t * (simplex[2][1] - c[1])];
        let xr = along(-1.0);
        let fr = f(xr);
        if fr < vals[0] {
            let xe = along(-2.0);
            let fe = f(xe);
            if fe < fr {
                simplex[2] = xe;
                vals[2] = fe;
            } else {
                simplex[2] = xr;
                vals[2] = fr;
            }
        } else if fr < vals[1] {
            simplex[2] = xr;
            vals[2] = fr;
        } else {
            let (xc, fc) = if fr < vals[2] {
                let x = along(-0.5);
                (x, f(x))
            } else {
                let x = along(0.5);
                (x, f(x))
            };
            if fc < vals[2].min(fr) {
                simplex[2] = xc;
                vals[2] = fc;
            } else {
                for i in 1..3 {
                    simplex[i] = [
                        simplex[0][0] + 0.5 * (simplex[i][0] - simplex[0][0]),
                        simplex[0][1] + 0.5 * (simplex[i][1] - simplex[0][1]),
                    ];
                    vals[i] = f(simplex[i]);
                }
            }
        }
    }
    let best = (0..3).min_by(|&a, &b| vals[a].total_cmp(&vals[b])).unwrap();
    (simplex[best], vals[best])
}

/// Failed fits are cached too; the message is kept for diagnostics.
pub type CachedFit = std::result::Result<Arc<ClusterFit>, Arc<str>>;

/// Cluster fits keyed by site set. Fits depend on the site set only, so a
/// labelling change refits only the clusters whose membership changed.
#[derive(Debug, Default)]
pub struct FitCache {
    map: RwLock<HashMap<Vec<u64>, CachedFit>>,
    max_entries: usize,
}

impl FitCache {
    pub fn new() -> Self {
        Self::with_capacity_limit(500_000)
    }

    pub fn with_capacity_limit(max_entries: usize) -> Self {
        Self { map: RwLock::new(HashMap::new()), max_entries }
    }

    fn key(sites: &[usize]) -> Vec<u64> {
        let len = sites.iter().max().map_or(0, |&m| m / 64 + 1);
        let mut key = vec![0u64; len];
        for &k in sites {
            key[k / 64] |= 1 << (k % 64);
        }
        key
    }

    pub fn get_or_fit(&self, exc: &Exceedances, sites: &[usize]) -> CachedFit {
        let key = Self::key(sites);
        if let Some(hit) = self.map.read().expect("fit cache poisoned").get(&key) {
            return hit.clone();
        }
        let fit: CachedFit = ClusterFit::new(exc, sites).map(Arc::new).map_err(|e| Arc::from(e.to_string()));
        let mut map = self.map.write().expect("fit cache poisoned");
        if map.len() >= self.max_entries {
            map.clear();
        }
        map.entry(key).or_insert(fit).clone()
    }

    pub fn len(&self) -> usize {
        self.map.read().expect("fit cache poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
