//! Raw series to model inputs: declustering, thresholds, empirical CDFs and
//! the directed joint-exceedance counts for adjacent pairs.

use log::warn;

use crate::data::{Count, DependenceCounts, PairCounts, SeriesMatrix, Spatial};
use crate::error::{Error, Result};
use crate::exec::Exec;

/// Minimum number of observed values for an empirical threshold.
pub const MIN_THRESHOLD_VALUES: usize = 10;

/// A raw time series for one site. Timestamps are integer time units
/// (e.g. days) and strictly increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSeries {
    pub site_id: String,
    pub times: Vec<i64>,
    pub values: Vec<Option<f64>>,
}

impl RawSeries {
    pub fn new(site_id: impl Into<String>, times: Vec<i64>, values: Vec<Option<f64>>) -> Result<Self> {
        let site_id = site_id.into();
        if times.len() != values.len() {
            return Err(Error::InvalidInput(format!("site {site_id}: times and values differ in length")));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidInput(format!("site {site_id}: timestamps not strictly increasing")));
        }
        Ok(Self { site_id, times, values })
    }
}

/// Regular grid of declustering periods shared by all sites.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PeriodGrid {
    pub origin: i64,
    pub length: i64,
    pub n_periods: usize,
}

impl PeriodGrid {
    pub fn new(origin: i64, length: i64, n_periods: usize) -> Result<Self> {
        if length < 1 {
            return Err(Error::InvalidInput("period length must be at least 1".into()));
        }
        Ok(Self { origin, length, n_periods })
    }

    /// Smallest grid starting at the earliest timestamp that covers all series.
    pub fn covering(series: &[RawSeries], length: i64) -> Result<Self> {
        let first = series.iter().filter_map(|s| s.times.first()).min().copied();
        let last = series.iter().filter_map(|s| s.times.last()).max().copied();
        match (first, last) {
            (Some(a), Some(b)) => {
                let n = ((b - a) / length.max(1)) as usize + 1;
                Self::new(a, length, n)
            }
            _ => Err(Error::InsufficientData("empty series".into())),
        }
    }

    #[inline]
    pub fn period_of(&self, time: i64) -> Option<usize> {
        if time < self.origin {
            return None;
        }
        let p = ((time - self.origin) / self.length) as usize;
        (p < self.n_periods).then_some(p)
    }

    pub fn period_start(&self, period: usize) -> i64 {
        self.origin + period as i64 * self.length
    }
}

/// One value per period: the maximum over observed values in the period,
/// missing when nothing was observed.
pub fn decluster_on(series: &RawSeries, grid: &PeriodGrid) -> Result<Vec<Option<f64>>> {
    if series.times.is_empty() {
        return Err(Error::InsufficientData(format!("site {}: empty series", series.site_id)));
    }
    let mut out: Vec<Option<f64>> = vec![None; grid.n_periods];
    for (&t, v) in series.times.iter().zip(&series.values) {
        let (Some(p), Some(x)) = (grid.period_of(t), v) else { continue };
        if !x.is_finite() {
            continue;
        }
        out[p] = Some(match out[p] {
            Some(m) if m >= *x => m,
            _ => *x,
        });
    }
    Ok(out)
}

/// Decluster a single series on its own grid starting at its first timestamp.
pub fn decluster(series: &RawSeries, period_length: i64) -> Result<Vec<Option<f64>>> {
    let grid = PeriodGrid::covering(std::slice::from_ref(series), period_length)?;
    decluster_on(series, &grid)
}

/// Decluster every site onto one shared grid.
pub fn decluster_all(series: &[RawSeries], period_length: i64) -> Result<(PeriodGrid, SeriesMatrix)> {
    let grid = PeriodGrid::covering(series, period_length)?;
    let rows = series.iter().map(|s| decluster_on(s, &grid)).collect::<Result<Vec<_>>>()?;
    Ok((grid, SeriesMatrix::from_rows(&rows)?))
}

/// Type-7 sample quantile (linear interpolation between order statistics)
/// of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    assert!(n > 0, "quantile of empty data");
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Type-7 quantile of unsorted data.
pub fn quantile(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, p)
}

/// Empirical `p`-quantile of the observed values, used as the site threshold.
pub fn empirical_threshold(values: &[Option<f64>], p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidInput(format!("threshold probability {p} not in (0, 1)")));
    }
    let obs: Vec<f64> = values.iter().flatten().copied().collect();
    if obs.len() < MIN_THRESHOLD_VALUES {
        return Err(Error::InsufficientData(format!(
            "{} observed values, need at least {MIN_THRESHOLD_VALUES}",
            obs.len()
        )));
    }
    Ok(quantile(&obs, p))
}

/// Rescale observed values to mean 0 and (sample) variance 1.
pub fn standardize(values: &[Option<f64>]) -> Result<Vec<Option<f64>>> {
    let obs: Vec<f64> = values.iter().flatten().copied().collect();
    if obs.len() < 2 {
        return Err(Error::InsufficientData("standardize needs at least two values".into()));
    }
    let n = obs.len() as f64;
    let mean = obs.iter().sum::<f64>() / n;
    let var = obs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    if !(var > 0.0) {
        return Err(Error::ZeroVariance);
    }
    let sd = var.sqrt();
    Ok(values.iter().map(|v| v.map(|x| (x - mean) / sd)).collect())
}

/// Empirical CDF with denominator `n + 1`, so values stay below 1.
#[derive(Debug, Clone)]
pub struct Ecdf {
    sorted: Vec<f64>,
}

impl Ecdf {
    pub fn new(values: impl IntoIterator<Item = f64>) -> Self {
        let mut sorted: Vec<f64> = values.into_iter().collect();
        sorted.sort_by(f64::total_cmp);
        Self { sorted }
    }

    pub fn eval(&self, x: f64) -> f64 {
        let rank = self.sorted.partition_point(|&v| v <= x);
        rank as f64 / (self.sorted.len() + 1) as f64
    }
}

/// `χ̂ = P / Q`.
pub fn empirical_chi(p: u32, q: u32) -> Result<f64> {
    if q == 0 {
        return Err(Error::InvalidInput("empirical chi undefined for Q = 0".into()));
    }
    Ok(p as f64 / q as f64)
}

/// Directed joint-exceedance counts at level `dep_threshold` for every
/// adjacent pair.
///
/// For `(k, k')`, `Q` counts periods where site `k'` exceeds its empirical
/// `dep_threshold` quantile and site `k` is observed; `P` counts those where
/// site `k` exceeds as well. Pairs with `Q = 0` in both directions are kept
/// (they contribute nothing to the likelihood) and logged.
pub fn dependence_counts(
    series: &SeriesMatrix,
    spatial: &Spatial,
    dep_threshold: f64,
    exec: Exec,
) -> Result<DependenceCounts> {
    if !(0.0..1.0).contains(&dep_threshold) {
        return Err(Error::InvalidInput(format!("dependence threshold {dep_threshold} not in [0, 1)")));
    }
    if series.n_sites() != spatial.n_sites() {
        return Err(Error::InvalidInput("series and spatial data disagree on site count".into()));
    }
    let n_periods = series.n_periods();
    // exceeds[k][t]: Some(true/false) when observed.
    let exceeds: Vec<Vec<Option<bool>>> = exec.map(series.n_sites(), |k| {
        let ecdf = Ecdf::new(series.observed_values(k));
        (0..n_periods).map(|t| series.get(k, t).map(|r| ecdf.eval(r) > dep_threshold)).collect()
    });
    let directed = |k: usize, k2: usize| -> Count {
        let mut c = Count::default();
        for t in 0..n_periods {
            if exceeds[k2][t] == Some(true) {
                if let Some(e) = exceeds[k][t] {
                    c.q += 1;
                    c.p += e as u32;
                }
            }
        }
        c
    };
    let pairs = exec.map_slice(spatial.adjacency(), |&(k, k2)| PairCounts {
        k,
        k2,
        forward: directed(k, k2),
        backward: directed(k2, k),
    });
    let counts = DependenceCounts::new(pairs)?;
    for (k, k2) in counts.empty_pairs() {
        warn!("pair ({}, {}) has Q = 0 in both directions and is dropped from the dependence likelihood", k + 1, k2 + 1);
    }
    Ok(counts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn pair_spatial() -> Spatial {
        Spatial::new(2, vec![0.0, 1.0, 1.0, 0.0], &[(0, 1)]).unwrap()
    }

    #[test]
    fn weekly_maximum() {
        let s = RawSeries::new(
            "a",
            (0..7).collect(),
            [1.0, 5.0, 3.0, 2.0, 9.0, 0.0, 4.0].into_iter().map(Some).collect(),
        )
        .unwrap();
        assert_eq!(decluster(&s, 7).unwrap(), vec![Some(9.0)]);
    }

    #[test]
    fn all_missing_week_is_missing() {
        let mut values: Vec<Option<f64>> = vec![Some(1.0); 7];
        values.extend([None; 7]);
        let s = RawSeries::new("a", (0..14).collect(), values).unwrap();
        assert_eq!(decluster(&s, 7).unwrap(), vec![Some(1.0), None]);
    }

    #[test]
    fn decluster_is_idempotent_on_same_grid() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let times: Vec<i64> = (0..70).collect();
        let values: Vec<Option<f64>> =
            (0..70).map(|_| if rng.random_bool(0.2) { None } else { Some(rng.random()) }).collect();
        let s = RawSeries::new("a", times, values).unwrap();
        let grid = PeriodGrid::covering(std::slice::from_ref(&s), 7).unwrap();
        let once = decluster_on(&s, &grid).unwrap();
        let again = RawSeries::new("a", (0..grid.n_periods).map(|p| grid.period_start(p)).collect(), once.clone())
            .unwrap();
        assert_eq!(decluster_on(&again, &grid).unwrap(), once);
    }

    #[test]
    fn empty_series_errors() {
        let s = RawSeries::new("a", vec![], vec![]).unwrap();
        assert!(decluster(&s, 7).is_err());
        assert!(RawSeries::new("a", vec![2, 1], vec![None, None]).is_err());
    }

    #[test]
    fn threshold_type7() {
        let v: Vec<Option<f64>> = (1..=100).map(|x| Some(x as f64)).collect();
        // h = 99 * 0.925 = 91.575 -> x[91] + 0.575 * (x[92] - x[91]) = 92 + 0.575
        assert!((empirical_threshold(&v, 0.925).unwrap() - 92.575).abs() < 1e-12);
        let c: Vec<Option<f64>> = vec![Some(3.5); 20];
        assert_eq!(empirical_threshold(&c, 0.9).unwrap(), 3.5);
        assert!(empirical_threshold(&v[..9], 0.5).is_err());
    }

    #[test]
    fn standardize_examples() {
        let out = standardize(&[Some(1.0), Some(2.0), Some(3.0)]).unwrap();
        assert_eq!(out, vec![Some(-1.0), Some(0.0), Some(1.0)]);
        assert!(matches!(standardize(&[Some(1.0), Some(1.0)]), Err(Error::ZeroVariance)));

        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let raw: Vec<Option<f64>> =
            (0..200).map(|i| if i % 17 == 0 { None } else { Some(rng.random::<f64>() * 50.0 + 3.0) }).collect();
        let z = standardize(&raw).unwrap();
        let obs: Vec<f64> = z.iter().flatten().copied().collect();
        let n = obs.len() as f64;
        let mean = obs.iter().sum::<f64>() / n;
        let var = obs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-12);
        assert_eq!(z.iter().filter(|v| v.is_none()).count(), raw.iter().filter(|v| v.is_none()).count());
        let twice = standardize(&z).unwrap();
        for (a, b) in z.iter().zip(&twice) {
            match (a, b) {
                (Some(a), Some(b)) => assert!((a - b).abs() < 1e-12),
                (None, None) => {}
                _ => panic!("mask changed"),
            }
        }
    }

    #[test]
    fn empirical_chi_examples() {
        assert_eq!(empirical_chi(10, 20).unwrap(), 0.5);
        assert_eq!(empirical_chi(7, 7).unwrap(), 1.0);
        assert_eq!(empirical_chi(0, 5).unwrap(), 0.0);
        assert!(empirical_chi(0, 0).is_err());
    }

    fn two_site_matrix(a: Vec<f64>, b: Vec<f64>) -> SeriesMatrix {
        SeriesMatrix::from_rows(&[a.into_iter().map(Some).collect(), b.into_iter().map(Some).collect()]).unwrap()
    }

    #[test]
    fn q_is_exceedance_count_without_missing() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let a: Vec<f64> = (0..400).map(|_| rng.random()).collect();
        let b: Vec<f64> = (0..400).map(|_| rng.random()).collect();
        let c = dependence_counts(&two_site_matrix(a, b), &pair_spatial(), 0.95, Exec::Sequential).unwrap();
        assert_eq!(c.pairs[0].forward.q, 20);
        assert_eq!(c.pairs[0].backward.q, 20);
    }

    #[test]
    fn comonotone_and_antithetic() {
        let a: Vec<f64> = (0..200).map(|i| i as f64).collect();
        let b: Vec<f64> = (0..200).map(|i| (i as f64).exp2().ln()).collect();
        let c = dependence_counts(&two_site_matrix(a.clone(), b), &pair_spatial(), 0.9, Exec::Sequential).unwrap();
        let f = c.pairs[0].forward;
        assert_eq!(empirical_chi(f.p, f.q).unwrap(), 1.0);

        let rev: Vec<f64> = a.iter().rev().copied().collect();
        let c = dependence_counts(&two_site_matrix(a, rev), &pair_spatial(), 0.6, Exec::Sequential).unwrap();
        assert_eq!(c.pairs[0].forward.p, 0);
        assert!(c.pairs[0].forward.q > 0);
    }

    #[test]
    fn independent_pair_chi_near_one_minus_u() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let n = 10_000;
        let a: Vec<f64> = (0..n).map(|_| rng.random()).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.random()).collect();
        let c = dependence_counts(&two_site_matrix(a, b), &pair_spatial(), 0.95, Exec::Parallel).unwrap();
        let f = c.pairs[0].forward;
        let chi = empirical_chi(f.p, f.q).unwrap();
        let se = (0.05 * 0.95 / f.q as f64).sqrt();
        assert!((chi - 0.05).abs() < 3.0 * se, "chi = {chi}, se = {se}");
    }

    #[test]
    fn missing_data_makes_counts_asymmetric() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let rows: Vec<Vec<Option<f64>>> = (0..2)
            .map(|k| {
                (0..500)
                    .map(|_| if k == 0 && rng.random_bool(0.3) { None } else { Some(rng.random()) })
                    .collect()
            })
            .collect();
        let m = SeriesMatrix::from_rows(&rows).unwrap();
        let c = dependence_counts(&m, &pair_spatial(), 0.9, Exec::Sequential).unwrap();
        let pc = c.pairs[0];
        assert!(pc.forward.p <= pc.forward.q && pc.backward.p <= pc.backward.q);
        assert_ne!(pc.forward.q, pc.backward.q);
    }

    #[test]
    fn exec_modes_agree() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let rows: Vec<Vec<Option<f64>>> = (0..6).map(|_| (0..300).map(|_| Some(rng.random())).collect()).collect();
        let m = SeriesMatrix::from_rows(&rows).unwrap();
        let pts: Vec<[f64; 2]> = (0..6).map(|i| [i as f64, (i * i) as f64 * 0.1]).collect();
        let adj: Vec<(usize, usize)> = (1..6).map(|i| (i - 1, i)).collect();
        let s = Spatial::euclidean(&pts, &adj).unwrap();
        let a = dependence_counts(&m, &s, 0.9, Exec::Sequential).unwrap();
        let b = dependence_counts(&m, &s, 0.9, Exec::Parallel).unwrap();
        assert_eq!(a, b);
        for pc in &a.pairs {
            // Without missing data Q[k,k'] depends only on k'.
            assert_eq!(pc.forward.q, 30);
            assert_eq!(pc.backward.q, 30);
        }
    }
}
