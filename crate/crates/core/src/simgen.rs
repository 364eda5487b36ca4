//! Synthetic data for the three simulation studies and for user experiments.
//!
//! The bundled 20-site map is synthetic: three contiguous regions in the
//! unit square, not digitised from any real municipality map.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::{Beta, Binomial, Distribution, StandardNormal};
use statrs::function::erf::erfc;

use crate::data::{assign_labels, Count, DependenceCounts, Exceedances, Excess, PairCounts, Spatial};
use crate::delaunay::voronoi_adjacency;
use crate::error::{Error, Result};
use crate::gpd;
use crate::rng::{stream, Stream};

/// Site coordinates of the bundled map. Sites 1, 6 and 13 are the centres
/// of the three regions.
pub const STUDY_SITES: [[f64; 2]; 20] = [
    [0.20, 0.50],
    [0.10, 0.62],
    [0.08, 0.40],
    [0.27, 0.32],
    [0.30, 0.62],
    [0.60, 0.75],
    [0.45, 0.82],
    [0.50, 0.62],
    [0.62, 0.92],
    [0.75, 0.85],
    [0.72, 0.66],
    [0.85, 0.72],
    [0.62, 0.30],
    [0.45, 0.40],
    [0.48, 0.20],
    [0.60, 0.10],
    [0.75, 0.18],
    [0.78, 0.40],
    [0.90, 0.30],
    [0.88, 0.52],
];

/// 0-based centres of the three regions.
pub const STUDY_CENTRES: [usize; 3] = [0, 5, 12];

/// 0-based region of every bundled site.
pub fn study_labels() -> Vec<usize> {
    (0..20).map(|k| if k < 5 { 0 } else if k < 12 { 1 } else { 2 }).collect()
}

/// Distances and Voronoi adjacency of the bundled map.
pub fn study_spatial() -> Result<Spatial> {
    let adjacency = voronoi_adjacency(&STUDY_SITES)?;
    Spatial::euclidean(&STUDY_SITES, &adjacency)
}

/// Independent GPD excesses: site `k` gets `n_excesses` draws from
/// `GPD(σ_{Z_k}, ξ_{Z_k})`, the `t`-th in period `t`.
pub fn simulate_marginals<R: Rng + ?Sized>(
    n_excesses: usize,
    sigma: &[f64],
    xi: &[f64],
    labels: &[usize],
    rng: &mut R,
) -> Result<Exceedances> {
    check_marginals(sigma, xi, labels)?;
    let per_site = labels
        .iter()
        .map(|&z| {
            (0..n_excesses)
                .map(|t| {
                    let u = 1.0 - rng.random::<f64>();
                    Excess { period: t, value: gpd::from_uniform(u, sigma[z], xi[z]) }
                })
                .collect()
        })
        .collect();
    Exceedances::new(per_site, n_excesses)
}

fn check_marginals(sigma: &[f64], xi: &[f64], labels: &[usize]) -> Result<()> {
    if sigma.len() != xi.len() {
        return Err(Error::InvalidInput("sigma and xi lengths differ".into()));
    }
    if sigma.iter().any(|&s| !(s > 0.0)) || xi.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput("GPD parameters out of range".into()));
    }
    if let Some(&z) = labels.iter().find(|&&z| z >= sigma.len()) {
        return Err(Error::InvalidInput(format!("label {} has no parameters", z + 1)));
    }
    Ok(())
}

/// Reorder every site's excesses so that the `m`-th largest values of all
/// sites fall in the same period. The period order follows the first site.
pub fn impose_rank_matching(exc: &Exceedances) -> Result<Exceedances> {
    let k = exc.n_sites();
    if k == 0 {
        return Ok(exc.clone());
    }
    let n = exc.site(0).len();
    if (0..k).any(|s| exc.site(s).len() != n) {
        return Err(Error::InvalidInput("rank matching needs equal excess counts at every site".into()));
    }
    let mut periods: Vec<usize> = {
        let mut first: Vec<&Excess> = exc.site(0).iter().collect();
        first.sort_by(|a, b| b.value.total_cmp(&a.value).then(a.period.cmp(&b.period)));
        first.iter().map(|e| e.period).collect()
    };
    // Keep periods distinct even if the first site reused one.
    let mut seen = periods.clone();
    seen.sort_unstable();
    seen.dedup();
    if seen.len() != n {
        periods = (0..n).collect();
    }
    let per_site = (0..k)
        .map(|s| {
            let mut values: Vec<f64> = exc.site(s).iter().map(|e| e.value).collect();
            values.sort_by(|a, b| b.total_cmp(a));
            let mut out: Vec<Excess> =
                values.into_iter().zip(&periods).map(|(value, &period)| Excess { period, value }).collect();
            out.sort_by_key(|e| e.period);
            out
        })
        .collect();
    Exceedances::new(per_site, exc.n_periods())
}

/// Beta-binomial joint exceedance counts with `Q` trials for both
/// orientations of every adjacent pair. `epsilon[j]` gives `γ_j = γ_0 e^{−ε_j}`.
#[allow(clippy::too_many_arguments)]
pub fn simulate_dependence_counts<R: Rng + ?Sized>(
    labels: &[usize],
    spatial: &Spatial,
    gamma0: f64,
    epsilon: &[f64],
    beta: f64,
    q: u32,
    rng: &mut R,
) -> Result<DependenceCounts> {
    if !(gamma0 > 0.0 && beta > 0.0) || epsilon.iter().any(|&e| !(e >= 0.0)) {
        return Err(Error::InvalidInput("dependence parameters out of range".into()));
    }
    let mut draw = |gamma: f64, d: f64| -> Result<Count> {
        let alpha = beta / (gamma * d).exp_m1();
        let chi = if alpha == 0.0 {
            0.0
        } else if alpha.is_infinite() {
            1.0
        } else {
            Beta::new(alpha, beta).map_err(|e| Error::InvalidInput(e.to_string()))?.sample(rng)
        };
        let p = Binomial::new(q as u64, chi).map_err(|e| Error::InvalidInput(e.to_string()))?.sample(rng);
        Ok(Count { p: p as u32, q })
    };
    let mut pairs = Vec::with_capacity(spatial.adjacency().len());
    for &(k, k2) in spatial.adjacency() {
        let gamma = if labels[k] == labels[k2] { gamma0 * (-epsilon[labels[k]]).exp() } else { gamma0 };
        let d = spatial.distance(k, k2);
        let forward = draw(gamma, d)?;
        let backward = draw(gamma, d)?;
        pairs.push(PairCounts { k, k2, forward, backward });
    }
    DependenceCounts::new(pairs)
}

/// `exp(−d/ρ)` on the rescaled distances.
pub fn exponential_correlation(spatial: &Spatial, rho: f64) -> DMatrix<f64> {
    let n = spatial.n_sites();
    DMatrix::from_fn(n, n, |i, j| (-spatial.distance(i, j) / rho).exp())
}

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Gaussian-copula excesses with GPD margins: per period one correlated
/// normal vector, mapped to uniforms and then through each site's GPD
/// inverse CDF. Positive semidefinite correlation matrices are accepted, so
/// an all-ones matrix gives comonotone sites.
pub fn simulate_gaussian_copula<R: Rng + ?Sized>(
    n_excesses: usize,
    sigma: &[f64],
    xi: &[f64],
    labels: &[usize],
    correlation: &DMatrix<f64>,
    rng: &mut R,
) -> Result<Exceedances> {
    check_marginals(sigma, xi, labels)?;
    let k = labels.len();
    if correlation.nrows() != k || correlation.ncols() != k {
        return Err(Error::InvalidInput("correlation matrix has the wrong size".into()));
    }
    let asym = (correlation - correlation.transpose()).abs().max();
    if asym > 1e-12 || (0..k).any(|i| (correlation[(i, i)] - 1.0).abs() > 1e-12) {
        return Err(Error::NotPositiveDefinite("correlation must be symmetric with unit diagonal".into()));
    }
    let eig = SymmetricEigen::new(correlation.clone());
    let max = eig.eigenvalues.max();
    if eig.eigenvalues.min() < -1e-10 * max.max(1.0) {
        return Err(Error::NotPositiveDefinite(format!("correlation eigenvalue {}", eig.eigenvalues.min())));
    }
    let root = &eig.eigenvectors * DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()));
    let mut per_site: Vec<Vec<Excess>> = vec![Vec::with_capacity(n_excesses); k];
    let mut z = nalgebra::DVector::zeros(k);
    for t in 0..n_excesses {
        for i in 0..k {
            z[i] = rng.sample::<f64, _>(StandardNormal);
        }
        let x = &root * &z;
        for (s, site) in per_site.iter_mut().enumerate() {
            // Upper tail probability, clamped away from 0 for extreme draws.
            let u = normal_cdf(-x[s]).max(f64::MIN_POSITIVE);
            site.push(Excess { period: t, value: gpd::from_uniform(u, sigma[labels[s]], xi[labels[s]]) });
        }
    }
    Exceedances::new(per_site, n_excesses)
}

/// Which simulation protocol to follow.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Study {
    /// One cluster, independent sites.
    One,
    /// One cluster, rank-matched (fully dependent) excesses.
    Two,
    /// Three clusters, independent sites.
    Three,
    /// Three clusters with Gaussian-copula dependence of range `ρ`.
    ThreeCopula(f64),
}

impl Study {
    pub fn from_number(n: u32) -> Result<Self> {
        match n {
            1 => Ok(Study::One),
            2 => Ok(Study::Two),
            3 => Ok(Study::Three),
            _ => Err(Error::InvalidInput(format!("unknown study {n}"))),
        }
    }
}

/// A simulated data set with its generating truth.
#[derive(Debug, Clone)]
pub struct StudyData {
    pub spatial: Spatial,
    pub exceedances: Exceedances,
    pub counts: DependenceCounts,
    pub labels: Vec<usize>,
    pub centres: Vec<usize>,
    pub sigma: Vec<f64>,
    pub xi: Vec<f64>,
    pub gamma0: f64,
    pub epsilon: Vec<f64>,
    pub beta: f64,
}

pub const STUDY_EXCESSES: usize = 100;
pub const STUDY_TRIALS: u32 = 20;
pub const STUDY_BETA: f64 = 10.0;

/// Simulate one replicate of a study on the bundled map.
pub fn simulate_study(study: Study, seed: u64) -> Result<StudyData> {
    let spatial = study_spatial()?;
    let mut rng = stream(seed, Stream::Simulation);
    let (centres, sigma, xi, gamma0, epsilon) = match study {
        Study::One | Study::Two => (vec![STUDY_CENTRES[0]], vec![2.0], vec![0.1], 2.0, vec![0.0]),
        Study::Three | Study::ThreeCopula(_) => {
            (STUDY_CENTRES.to_vec(), vec![2.0, 2.3, 2.6], vec![0.05, 0.10, 0.15], 3.0, vec![1.5f64.ln(); 3])
        }
    };
    let labels = assign_labels(&centres, &spatial)?;
    let exceedances = match study {
        Study::ThreeCopula(rho) => simulate_gaussian_copula(
            STUDY_EXCESSES,
            &sigma,
            &xi,
            &labels,
            &exponential_correlation(&spatial, rho),
            &mut rng,
        )?,
        _ => simulate_marginals(STUDY_EXCESSES, &sigma, &xi, &labels, &mut rng)?,
    };
    let exceedances = if study == Study::Two { impose_rank_matching(&exceedances)? } else { exceedances };
    let counts = simulate_dependence_counts(&labels, &spatial, gamma0, &epsilon, STUDY_BETA, STUDY_TRIALS, &mut rng)?;
    Ok(StudyData { spatial, exceedances, counts, labels, centres, sigma, xi, gamma0, epsilon, beta: STUDY_BETA })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dependence::betabinom_logpmf;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn fixture_labels_are_nearest_centre() {
        let spatial = study_spatial().unwrap();
        assert_eq!(assign_labels(&STUDY_CENTRES, &spatial).unwrap(), study_labels());
        assert!(crate::data::tied_sites(&STUDY_CENTRES, &spatial).is_empty());
        for (k, &z) in study_labels().iter().enumerate() {
            // Regions are contiguous: every site has an adjacent site in its region.
            assert!(spatial.neighbours(k).iter().any(|&n| study_labels()[n] == z), "site {k}");
        }
    }

    fn mean(v: &[f64]) -> f64 {
        v.iter().sum::<f64>() / v.len() as f64
    }

    #[test]
    fn marginal_means() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 100_000;
        for &(xi, expected, sd) in &[(0.0, 2.0, 2.0), (0.1, 2.0 / 0.9, 2.0 / (0.9 * 0.8f64.sqrt()))] {
            let e = simulate_marginals(n, &[2.0], &[xi], &[0], &mut rng).unwrap();
            let m = mean(&e.pooled(&[0]));
            assert!((m - expected).abs() < 3.0 * sd / (n as f64).sqrt(), "xi {xi}: {m}");
        }
    }

    fn kendall_tau(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len();
        let mut s = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                s += ((a[i] - a[j]) * (b[i] - b[j])).signum();
            }
        }
        s / (n * (n - 1) / 2) as f64
    }

    fn by_period(e: &Exceedances, k: usize) -> Vec<f64> {
        let mut v: Vec<(usize, f64)> = e.site(k).iter().map(|x| (x.period, x.value)).collect();
        v.sort_by_key(|x| x.0);
        v.into_iter().map(|x| x.1).collect()
    }

    #[test]
    fn rank_matching() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let e = simulate_marginals(200, &[2.0], &[0.1], &[0, 0, 0], &mut rng).unwrap();
        let m = impose_rank_matching(&e).unwrap();
        for k in 0..3 {
            let mut a = e.pooled(&[k]);
            let mut b = m.pooled(&[k]);
            a.sort_by(f64::total_cmp);
            b.sort_by(f64::total_cmp);
            assert_eq!(a, b);
        }
        assert_eq!(kendall_tau(&by_period(&m, 0), &by_period(&m, 1)), 1.0);
        let bad = Exceedances::new(vec![vec![Excess { period: 0, value: 1.0 }], vec![]], 1).unwrap();
        assert!(impose_rank_matching(&bad).is_err());
    }

    #[test]
    fn vanishing_dependence() {
        let spatial = Spatial::euclidean(&[[0.0, 0.0], [1.0, 0.0]], &[(0, 1)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let c = simulate_dependence_counts(&[0, 1], &spatial, 1e4, &[0.0, 0.0], 10.0, 20, &mut rng).unwrap();
        assert_eq!(c.pairs[0].forward.p, 0);
        assert_eq!(c.pairs[0].backward.p, 0);
    }

    #[test]
    fn count_mean_and_distribution() {
        let spatial = Spatial::euclidean(&[[0.0, 0.0], [1.0, 0.0]], &[(0, 1)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (gamma, beta, q) = (2.0, 10.0, 20u32);
        let reps = 50_000;
        let mut hist = vec![0u64; q as usize + 1];
        let mut ratios = Vec::with_capacity(2 * reps);
        for _ in 0..reps {
            let c = simulate_dependence_counts(&[0, 0], &spatial, gamma, &[0.0], beta, q, &mut rng).unwrap();
            for cnt in [c.pairs[0].forward, c.pairs[0].backward] {
                hist[cnt.p as usize] += 1;
                ratios.push(cnt.p as f64 / q as f64);
            }
        }
        let m = mean(&ratios);
        let sd = (ratios.iter().map(|r| (r - m).powi(2)).sum::<f64>() / ratios.len() as f64).sqrt();
        assert!((m - (-gamma).exp()).abs() < 3.0 * sd / (ratios.len() as f64).sqrt());

        // Chi-square goodness of fit against the beta-binomial pmf, pooling
        // sparse cells.
        let alpha = beta / gamma.exp_m1();
        let n = ratios.len() as f64;
        let mut stat = 0.0;
        let mut cells = 0;
        let (mut obs_acc, mut exp_acc) = (0.0, 0.0);
        for p in 0..=q {
            obs_acc += hist[p as usize] as f64;
            exp_acc += n * betabinom_logpmf(p, q, alpha, beta).unwrap().exp();
            if exp_acc >= 20.0 || p == q {
                stat += (obs_acc - exp_acc).powi(2) / exp_acc;
                cells += 1;
                obs_acc = 0.0;
                exp_acc = 0.0;
            }
        }
        let df = (cells - 1) as f64;
        let crit = chi2_quantile_99(df);
        assert!(stat < crit, "chi2 = {stat} on {df} df");
    }

    /// 99th percentile of chi-square with `df` degrees of freedom
    /// (Wilson–Hilferty), adequate for df ≥ 3.
    fn chi2_quantile_99(df: f64) -> f64 {
        let z = 2.326348;
        df * (1.0 - 2.0 / (9.0 * df) + z * (2.0 / (9.0 * df)).sqrt()).powi(3)
    }

    fn ks_stat(mut v: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
        v.sort_by(f64::total_cmp);
        let n = v.len() as f64;
        v.iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = cdf(x);
                (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn copula_preserves_margins() {
        let spatial = study_spatial().unwrap();
        let labels = study_labels();
        let sigma = [2.0, 2.3, 2.6];
        let xi = [0.05, 0.1, 0.15];
        let n = 2000;
        // KS critical value at 1%: 1.628 / √n.
        let crit = 1.628 / (n as f64).sqrt();
        for corr in [DMatrix::identity(20, 20), exponential_correlation(&spatial, 0.5)] {
            let mut rng = ChaCha8Rng::seed_from_u64(6);
            let e = simulate_gaussian_copula(n, &sigma, &xi, &labels, &corr, &mut rng).unwrap();
            let mut failures = 0;
            for k in 0..20 {
                let z = labels[k];
                if ks_stat(e.pooled(&[k]), |y| gpd::cdf(y, sigma[z], xi[z])) > crit {
                    failures += 1;
                }
            }
            // 20 tests at the 1% level: allow one chance rejection.
            assert!(failures <= 1, "{failures} sites rejected");
        }
    }

    #[test]
    fn full_correlation_is_comonotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let ones = DMatrix::from_element(3, 3, 1.0);
        let e = simulate_gaussian_copula(100, &[1.0, 2.0], &[0.1, 0.2], &[0, 1, 1], &ones, &mut rng).unwrap();
        assert_eq!(kendall_tau(&by_period(&e, 0), &by_period(&e, 1)), 1.0);
        assert_eq!(kendall_tau(&by_period(&e, 1), &by_period(&e, 2)), 1.0);
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(simulate_gaussian_copula(5, &[1.0], &[0.1], &[0, 0], &bad, &mut rng).is_err());
    }

    #[test]
    fn studies_are_deterministic() {
        let a = simulate_study(Study::Three, 11).unwrap();
        let b = simulate_study(Study::Three, 11).unwrap();
        assert_eq!(a.exceedances, b.exceedances);
        assert_eq!(a.counts, b.counts);
        assert_eq!(a.labels, study_labels());
        let c = simulate_study(Study::Three, 12).unwrap();
        assert_ne!(a.exceedances, c.exceedances);
    }
}
