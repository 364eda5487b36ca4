//! Posterior summaries: co-clustering probabilities, a point-estimate
//! partition, site-wise and cluster-wise parameter summaries, return levels.

use std::collections::HashMap;

use crate::data::ClusterState;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::preprocess::quantile_sorted;
use crate::sampler::{run_chain, ChainConfig, InitialClusters, Model, MoveConfig, Trace};

/// Probability that two sites share a cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    n: usize,
    values: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn n_sites(&self) -> usize {
        self.n
    }

    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.values[a * self.n + b]
    }

    pub fn row(&self, a: usize) -> &[f64] {
        &self.values[a * self.n..(a + 1) * self.n]
    }
}

/// Share of samples in which each pair of sites carries the same label.
pub fn similarity_matrix(trace: &Trace, exec: Exec) -> Result<SimilarityMatrix> {
    let first = trace.samples.first().ok_or(Error::EmptyTrace)?;
    let n = first.state.labels.len();
    let total = trace.len() as f64;
    let rows = exec.map(n, |a| {
        let mut counts = vec![0u64; n];
        for s in &trace.samples {
            let z = &s.state.labels;
            for (b, c) in counts.iter_mut().enumerate() {
                *c += (z[a] == z[b]) as u64;
            }
        }
        counts.into_iter().map(|c| c as f64 / total).collect::<Vec<f64>>()
    });
    Ok(SimilarityMatrix { n, values: rows.concat() })
}

/// Relabel so clusters are numbered by first appearance.
pub fn canonical_labels(labels: &[usize]) -> Vec<usize> {
    let mut map = HashMap::new();
    labels
        .iter()
        .map(|&z| {
            let next = map.len();
            *map.entry(z).or_insert(next)
        })
        .collect()
}

/// Variation of information between two labellings, in nats.
pub fn vi_distance(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len(), "labellings of different length");
    let n = a.len();
    if n == 0 {
        return 0.0;
    }
    let na = a.iter().max().map_or(0, |m| m + 1);
    let nb = b.iter().max().map_or(0, |m| m + 1);
    let mut joint = vec![0usize; na * nb];
    let mut ca = vec![0usize; na];
    let mut cb = vec![0usize; nb];
    for (&x, &y) in a.iter().zip(b) {
        joint[x * nb + y] += 1;
        ca[x] += 1;
        cb[y] += 1;
    }
    let nf = n as f64;
    let plogp = |c: usize| if c == 0 { 0.0 } else { let p = c as f64 / nf; p * p.ln() };
    let h_a: f64 = -ca.iter().map(|&c| plogp(c)).sum::<f64>();
    let h_b: f64 = -cb.iter().map(|&c| plogp(c)).sum::<f64>();
    let mut mi = 0.0;
    for x in 0..na {
        for y in 0..nb {
            let c = joint[x * nb + y];
            if c > 0 {
                let p = c as f64 / nf;
                mi += p * (p / (ca[x] as f64 / nf * cb[y] as f64 / nf)).ln();
            }
        }
    }
    (h_a + h_b - 2.0 * mi).max(0.0)
}

/// Point-estimate partition and its Monte Carlo expected VI.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionEstimate {
    /// Canonical labels, clusters numbered by first appearance.
    pub labels: Vec<usize>,
    pub n_clusters: usize,
    pub expected_vi: f64,
}

impl PartitionEstimate {
    pub fn sets(&self) -> Vec<Vec<usize>> {
        crate::data::partition_sets(&self.labels, self.n_clusters)
    }
}

/// Sampled partitions with their weights.
struct WeightedPartitions {
    partitions: Vec<Vec<usize>>,
    weights: Vec<f64>,
}

impl WeightedPartitions {
    fn from_trace(trace: &Trace) -> Self {
        let mut index: HashMap<Vec<usize>, usize> = HashMap::new();
        let mut partitions = Vec::new();
        let mut counts: Vec<u64> = Vec::new();
        for s in &trace.samples {
            let c = canonical_labels(&s.state.labels);
            match index.get(&c) {
                Some(&i) => counts[i] += 1,
                None => {
                    index.insert(c.clone(), partitions.len());
                    partitions.push(c);
                    counts.push(1);
                }
            }
        }
        let n = trace.len() as f64;
        Self { partitions, weights: counts.into_iter().map(|c| c as f64 / n).collect() }
    }

    fn expected_vi(&self, labels: &[usize]) -> f64 {
        self.partitions.iter().zip(&self.weights).map(|(p, w)| w * vi_distance(labels, p)).sum()
    }
}

/// Largest number of sites for which every set partition is scored.
pub const EXHAUSTIVE_MAX_SITES: usize = 8;

/// Candidate search for [`point_estimate_with`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Search {
    /// Exhaustive up to [`EXHAUSTIVE_MAX_SITES`] sites, greedy beyond.
    #[default]
    Auto,
    Exhaustive,
    /// Best sampled partition refined by single-site moves.
    Greedy,
}

/// Minimise the Monte Carlo expected VI to the sampled partitions. Up to
/// [`EXHAUSTIVE_MAX_SITES`] sites every set partition is scored; beyond that
/// the candidates are the distinct sampled partitions, and the best is
/// refined by single-site moves until no move improves it.
pub fn point_estimate(trace: &Trace, exec: Exec) -> Result<PartitionEstimate> {
    point_estimate_with(trace, Search::Auto, exec)
}

pub fn point_estimate_with(trace: &Trace, search: Search, exec: Exec) -> Result<PartitionEstimate> {
    if trace.is_empty() {
        return Err(Error::EmptyTrace);
    }
    let wp = WeightedPartitions::from_trace(trace);
    let n = wp.partitions[0].len();
    let exhaustive = match search {
        Search::Auto => n <= EXHAUSTIVE_MAX_SITES,
        Search::Exhaustive => true,
        Search::Greedy => false,
    };
    let (mut best, mut score) = if exhaustive {
        let all = set_partitions(n);
        let scores = exec.map_slice(&all, |p| wp.expected_vi(p));
        argmin(all, scores)
    } else {
        let scores = exec.map_slice(&wp.partitions, |p| wp.expected_vi(p));
        argmin(wp.partitions.clone(), scores)
    };
    loop {
        let n_clusters = best.iter().max().map_or(0, |m| m + 1);
        let mut moves = Vec::new();
        for k in 0..n {
            moves.extend((0..=n_clusters).filter(|&c| c != best[k]).map(|c| (k, c)));
        }
        let scores = exec.map_slice(&moves, |&(k, c)| {
            let mut cand = best.clone();
            cand[k] = c;
            wp.expected_vi(&canonical_labels(&cand))
        });
        let Some((i, &s)) = scores.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)) else {
            break;
        };
        if s < score - 1e-12 {
            let (k, c) = moves[i];
            best[k] = c;
            best = canonical_labels(&best);
            score = s;
        } else {
            break;
        }
    }
    let n_clusters = best.iter().max().map_or(0, |m| m + 1);
    Ok(PartitionEstimate { labels: best, n_clusters, expected_vi: score })
}

fn argmin(cands: Vec<Vec<usize>>, scores: Vec<f64>) -> (Vec<usize>, f64) {
    let (i, s) = scores.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).map(|(i, &s)| (i, s)).unwrap();
    (cands.into_iter().nth(i).unwrap(), s)
}

/// Every set partition of `n` elements as canonical labels
/// (restricted growth strings).
pub fn set_partitions(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if n == 0 {
        return vec![vec![]];
    }
    let mut a = vec![0usize; n];
    fn rec(a: &mut Vec<usize>, i: usize, max: usize, out: &mut Vec<Vec<usize>>) {
        if i == a.len() {
            out.push(a.clone());
            return;
        }
        for v in 0..=max + 1 {
            a[i] = v;
            rec(a, i + 1, max.max(v), out);
        }
    }
    rec(&mut a, 1, 0, &mut out);
    out
}

/// Posterior mean, median and central interval of a scalar.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub median: f64,
    pub lo: f64,
    pub hi: f64,
}

impl Summary {
    /// `level` is the central probability, e.g. 0.9.
    pub fn from_values(mut values: Vec<f64>, level: f64) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyTrace);
        }
        values.sort_by(f64::total_cmp);
        let tail = (1.0 - level) / 2.0;
        Ok(Self {
            mean: values.iter().sum::<f64>() / values.len() as f64,
            median: quantile_sorted(&values, 0.5),
            lo: quantile_sorted(&values, tail),
            hi: quantile_sorted(&values, 1.0 - tail),
        })
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }
}

/// Site-wise Monte Carlo summary of `f(state, site)` over the trace.
pub fn swmc(trace: &Trace, site: usize, level: f64, f: impl Fn(&ClusterState, usize) -> f64) -> Result<Summary> {
    Summary::from_values(trace.samples.iter().map(|s| f(&s.state, site)).collect(), level)
}

/// Scale `ψ_k = σ_{Z_k}` of a site in one sample.
pub fn site_scale(state: &ClusterState, site: usize) -> f64 {
    state.sigma[state.labels[site]]
}

/// Shape `ν_k = ξ_{Z_k}` of a site in one sample.
pub fn site_shape(state: &ClusterState, site: usize) -> f64 {
    state.xi[state.labels[site]]
}

/// Scale and shape summaries of one site.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SiteMarginal {
    pub psi: Summary,
    pub nu: Summary,
}

/// Site-wise summaries of the GPD parameters for every site.
pub fn swmc_marginals(trace: &Trace, level: f64, exec: Exec) -> Result<Vec<SiteMarginal>> {
    if trace.is_empty() {
        return Err(Error::EmptyTrace);
    }
    exec.map(trace.n_sites, |k| {
        Ok(SiteMarginal { psi: swmc(trace, k, level, site_scale)?, nu: swmc(trace, k, level, site_shape)? })
    })
    .into_iter()
    .collect()
}

/// Cluster-wise results on a fixed partition.
#[derive(Debug, Clone)]
pub struct CwmcResult {
    pub trace: Trace,
    /// Per cluster of the fixed partition.
    pub clusters: Vec<SiteMarginal>,
    /// Per site, copied from its cluster.
    pub sites: Vec<SiteMarginal>,
}

/// Rerun the sampler on a fixed partition with parameter moves only and
/// summarise each cluster's parameters.
pub fn cwmc(model: &Model, labels: &[usize], cfg: &ChainConfig, level: f64) -> Result<CwmcResult> {
    let labels = canonical_labels(labels);
    let cfg = ChainConfig { initial: InitialClusters::Labels(labels.clone()), ..cfg.clone() };
    let trace = run_chain(model, &cfg, &MoveConfig::fixed_partition())?;
    let n_clusters = labels.iter().max().map_or(0, |m| m + 1);
    let clusters = (0..n_clusters)
        .map(|j| {
            Ok(SiteMarginal {
                psi: Summary::from_values(trace.samples.iter().map(|s| s.state.sigma[j]).collect(), level)?,
                nu: Summary::from_values(trace.samples.iter().map(|s| s.state.xi[j]).collect(), level)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let sites = labels.iter().map(|&z| clusters[z]).collect();
    Ok(CwmcResult { trace, clusters, sites })
}

/// Level exceeded on average once every `tau` years:
/// `u + (ψ/ν)[(λ_u τ)^ν − 1]`, or `u + ψ log(λ_u τ)` when `ν = 0`.
pub fn return_level(u: f64, psi: f64, nu: f64, lambda_u: f64, tau: f64) -> Result<f64> {
    let m = lambda_u * tau;
    if !(m > 1.0) {
        return Err(Error::ReturnPeriodTooShort(m));
    }
    if !(psi > 0.0) {
        return Err(Error::InvalidInput(format!("scale {psi} must be positive")));
    }
    let lm = m.ln();
    Ok(if nu == 0.0 { u + psi * lm } else { u + psi * (nu * lm).exp_m1() / nu })
}

/// Expected threshold exceedances per year: periods per year times the
/// exceedance probability `1 − p`.
pub fn exceedance_rate(periods_per_year: f64, p: f64) -> f64 {
    periods_per_year * (1.0 - p)
}

/// One row of the return-level table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReturnLevelSummary {
    pub site: usize,
    pub tau: f64,
    pub summary: Summary,
}

/// Site-wise posterior of the return level for each site and period.
pub fn swmc_return_levels(
    trace: &Trace,
    thresholds: &[f64],
    lambda_u: f64,
    taus: &[f64],
    level: f64,
) -> Result<Vec<ReturnLevelSummary>> {
    if thresholds.len() != trace.n_sites {
        return Err(Error::InvalidInput(format!("{} thresholds for {} sites", thresholds.len(), trace.n_sites)));
    }
    let mut out = Vec::with_capacity(thresholds.len() * taus.len());
    for (k, &u) in thresholds.iter().enumerate() {
        for &tau in taus {
            let values = trace
                .samples
                .iter()
                .map(|s| return_level(u, site_scale(&s.state, k), site_shape(&s.state, k), lambda_u, tau))
                .collect::<Result<Vec<_>>>()?;
            out.push(ReturnLevelSummary { site: k, tau, summary: Summary::from_values(values, level)? });
        }
    }
    Ok(out)
}

/// Total-variation distance between two distributions of `J`.
pub fn total_variation(a: &[(usize, f64)], b: &[(usize, f64)]) -> f64 {
    let max = a.iter().chain(b).map(|x| x.0).max().unwrap_or(0);
    let dense = |v: &[(usize, f64)]| {
        let mut d = vec![0.0; max + 1];
        for &(j, p) in v {
            d[j] += p;
        }
        d
    };
    let (da, db) = (dense(a), dense(b));
    0.5 * da.iter().zip(&db).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Hyperparameters;
    use crate::gpd;
    use crate::sampler::Sample;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sample(labels: Vec<usize>, sigma: Vec<f64>, xi: Vec<f64>) -> Sample {
        let j = sigma.len();
        let centres = (0..j).map(|c| labels.iter().position(|&z| z == c).unwrap()).collect();
        Sample {
            iter: 0,
            state: ClusterState {
                centres,
                labels,
                sigma,
                xi,
                gamma0: 1.0,
                epsilon: vec![0.0; j],
                beta: 1.0,
                hyper: Hyperparameters::prior_centre(),
            },
            log_posterior: 0.0,
        }
    }

    fn trace_of(parts: &[Vec<usize>]) -> Trace {
        let samples = parts
            .iter()
            .map(|z| {
                let j = z.iter().max().unwrap() + 1;
                sample(z.clone(), vec![1.0; j], vec![0.0; j])
            })
            .collect();
        Trace { samples, stats: Default::default(), n_sites: parts[0].len() }
    }

    #[test]
    fn similarity() {
        let t = trace_of(&[vec![0, 0, 0], vec![0, 0, 0]]);
        let s = similarity_matrix(&t, Exec::Sequential).unwrap();
        assert!((0..3).all(|a| (0..3).all(|b| s.get(a, b) == 1.0)));
        let t = trace_of(&[vec![0, 0, 1], vec![0, 1, 1]]);
        let s = similarity_matrix(&t, Exec::Parallel).unwrap();
        assert_eq!(s.get(0, 1), 0.5);
        assert_eq!(s.get(1, 2), 0.5);
        assert_eq!(s.get(0, 2), 0.0);
        assert_eq!(s.get(2, 2), 1.0);
        // Relabelling within a sample changes nothing.
        let t2 = trace_of(&[vec![1, 1, 0], vec![1, 0, 0]]);
        assert_eq!(similarity_matrix(&t2, Exec::Sequential).unwrap(), s);
        assert!(similarity_matrix(&Trace::default(), Exec::Sequential).is_err());
    }

    #[test]
    fn vi_examples() {
        assert_eq!(vi_distance(&[0, 1, 1, 2], &[0, 1, 1, 2]), 0.0);
        assert!((vi_distance(&[0, 1], &[0, 0]) - 2f64.ln()).abs() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let a: Vec<usize> = (0..12).map(|_| rng.random_range(0..4)).collect();
            let b: Vec<usize> = (0..12).map(|_| rng.random_range(0..3)).collect();
            assert!((vi_distance(&a, &b) - vi_distance(&b, &a)).abs() < 1e-12);
            assert!(vi_distance(&a, &b) >= 0.0);
            // Label values do not matter.
            assert!((vi_distance(&canonical_labels(&a), &b) - vi_distance(&a, &b)).abs() < 1e-12);
        }
    }

    #[test]
    fn bell_numbers() {
        let counts: Vec<usize> = (1..=7).map(|n| set_partitions(n).len()).collect();
        assert_eq!(counts, vec![1, 2, 5, 15, 52, 203, 877]);
    }

    #[test]
    fn identical_samples() {
        let z = vec![0, 0, 1, 1, 2, 0, 2, 1, 1, 0];
        let est = point_estimate(&trace_of(&vec![z.clone(); 6]), Exec::Sequential).unwrap();
        assert_eq!(est.labels, canonical_labels(&z));
        assert_eq!(est.expected_vi, 0.0);
        assert_eq!(est.n_clusters, 3);
    }

    #[test]
    fn greedy_never_worse_than_sampled() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let parts: Vec<Vec<usize>> = (0..30).map(|_| (0..12).map(|_| rng.random_range(0..3)).collect()).collect();
        let t = trace_of(&parts);
        let est = point_estimate(&t, Exec::Parallel).unwrap();
        let greedy = point_estimate_with(&t, Search::Greedy, Exec::Parallel).unwrap();
        assert!(est.expected_vi <= greedy.expected_vi + 1e-12);
        let est = greedy;
        let wp = WeightedPartitions::from_trace(&t);
        for p in &wp.partitions {
            assert!(est.expected_vi <= wp.expected_vi(p) + 1e-12);
        }
        assert_eq!(est, point_estimate_with(&t, Search::Greedy, Exec::Sequential).unwrap());
    }

    #[test]
    fn site_summaries() {
        let mut samples = Vec::new();
        for i in 0..10 {
            let sigma = if i % 2 == 0 { vec![1.0, 3.0] } else { vec![3.0, 1.0] };
            samples.push(sample(vec![0, 1], sigma, vec![0.1, 0.2]));
        }
        let t = Trace { samples, stats: Default::default(), n_sites: 2 };
        // Site 0 alternates between σ = 1 and σ = 3.
        assert_eq!(swmc(&t, 0, 0.9, site_scale).unwrap().mean, 2.0);
        let t = trace_of(&[vec![0, 0], vec![0, 0]]);
        let mut t = t;
        for s in &mut t.samples {
            s.state.sigma = vec![2.0];
        }
        let m = swmc_marginals(&t, 0.9, Exec::Sequential).unwrap();
        assert_eq!(m[1].psi.mean, 2.0);
        assert_eq!(m[1].psi.median, 2.0);
    }

    #[test]
    fn return_level_examples() {
        assert!((return_level(0.0, 1.0, 0.0, 1.0, std::f64::consts::E).unwrap() - 1.0).abs() < 1e-15);
        let v = return_level(10.0, 2.0, 0.1, 3.9, 25.0).unwrap();
        assert!((v - (10.0 + 20.0 * (97.5f64.powf(0.1) - 1.0))).abs() < 1e-12);
        assert!((v - 21.6177).abs() < 1e-4, "{v}");
        let a = return_level(10.0, 2.0, 1e-8, 3.9, 25.0).unwrap();
        let b = return_level(10.0, 2.0, 0.0, 3.9, 25.0).unwrap();
        assert!((a - b).abs() < 1e-6);
        assert!(matches!(return_level(0.0, 1.0, 0.1, 0.5, 2.0), Err(Error::ReturnPeriodTooShort(_))));
        assert!((exceedance_rate(52.0, 0.925) - 3.9).abs() < 1e-12);
    }

    #[test]
    fn return_level_monotone_and_inverts_exceedance_probability() {
        for &nu in &[-0.3, -1e-9, 0.0, 1e-9, 0.1, 0.5] {
            let mut prev = f64::NEG_INFINITY;
            for tau in [2.0, 5.0, 25.0, 100.0] {
                let z = return_level(5.0, 1.5, nu, 3.9, tau).unwrap();
                assert!(z > prev);
                prev = z;
                // λ_u τ P(X > z) = 1.
                let p = gpd::sf(z - 5.0, 1.5, nu);
                assert!((3.9 * tau * p - 1.0).abs() < 1e-7, "{nu} {tau} {p}");
            }
            assert!(return_level(5.0, 2.0, nu, 3.9, 25.0).unwrap() > return_level(5.0, 1.5, nu, 3.9, 25.0).unwrap());
        }
    }

    #[test]
    fn tv_distance() {
        assert_eq!(total_variation(&[(1, 1.0)], &[(1, 1.0)]), 0.0);
        assert!((total_variation(&[(1, 0.5), (2, 0.5)], &[(1, 1.0)]) - 0.5).abs() < 1e-15);
    }
}
