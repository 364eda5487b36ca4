//! CSV readers and writers. Site indices are 1-based in every file.
//!
//! Whole-file outputs are written to a temporary sibling and renamed into
//! place. The trace is appended row by row instead, so an interrupted run
//! keeps what it has sampled.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use csv::{ReaderBuilder, StringRecord, Writer, WriterBuilder};

use crate::data::{Count, DependenceCounts, Excess, Exceedances, Hyperparameters, PairCounts};
use crate::error::{Error, Result};
use crate::posterior::{ReturnLevelSummary, SimilarityMatrix, SiteMarginal};
use crate::preprocess::RawSeries;
use crate::sampler::{Sample, Trace};
use crate::ClusterState;

fn bad(path: &Path, line: Option<u64>, msg: impl std::fmt::Display) -> Error {
    match line {
        Some(l) => Error::InvalidInput(format!("{}:{l}: {msg}", path.display())),
        None => Error::InvalidInput(format!("{}: {msg}", path.display())),
    }
}

fn line_of(rec: &StringRecord) -> Option<u64> {
    rec.position().map(|p| p.line())
}

fn parse<T: std::str::FromStr>(path: &Path, rec: &StringRecord, i: usize) -> Result<T> {
    let field = rec.get(i).ok_or_else(|| bad(path, line_of(rec), format!("missing column {}", i + 1)))?;
    field.trim().parse().map_err(|_| bad(path, line_of(rec), format!("cannot parse {field:?}")))
}

/// 1-based index in a file to a 0-based one.
fn parse_index(path: &Path, rec: &StringRecord, i: usize) -> Result<usize> {
    let v: usize = parse(path, rec, i)?;
    v.checked_sub(1).ok_or_else(|| bad(path, line_of(rec), "site indices start at 1"))
}

fn records(path: &Path, headers: bool) -> Result<Vec<StringRecord>> {
    let file = File::open(path).map_err(|e| bad(path, None, e))?;
    let mut rdr = ReaderBuilder::new().has_headers(headers).flexible(true).from_reader(file);
    let mut out = Vec::new();
    for r in rdr.records() {
        out.push(r?);
    }
    Ok(out)
}

/// Records of a headerless file, skipping a first row that does not start
/// with a number.
fn records_optional_header(path: &Path) -> Result<Vec<StringRecord>> {
    let mut recs = records(path, false)?;
    if recs.first().is_some_and(|r| r.get(0).is_some_and(|f| f.trim().parse::<f64>().is_err())) {
        recs.remove(0);
    }
    Ok(recs)
}

fn join<T: std::fmt::Display>(values: impl IntoIterator<Item = T>) -> String {
    values.into_iter().map(|v| v.to_string()).collect::<Vec<_>>().join(";")
}

fn split<T: std::str::FromStr>(path: &Path, rec: &StringRecord, i: usize) -> Result<Vec<T>> {
    let field = rec.get(i).ok_or_else(|| bad(path, line_of(rec), format!("missing column {}", i + 1)))?;
    field
        .split(';')
        .map(|s| s.trim().parse().map_err(|_| bad(path, line_of(rec), format!("cannot parse {s:?}"))))
        .collect()
}

/// Write a file via a temporary sibling and rename.
pub fn write_atomic(path: &Path, f: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut tmp = PathBuf::from(path);
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".tmp");
    tmp.set_file_name(name);
    {
        let mut w = BufWriter::new(File::create(&tmp)?);
        f(&mut w)?;
        w.flush()?;
        w.get_ref().sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn write_csv(path: &Path, headers: Option<&[&str]>, rows: impl FnOnce(&mut Writer<&mut dyn Write>) -> Result<()>) -> Result<()> {
    write_atomic(path, |w| {
        let mut wtr = WriterBuilder::new().has_headers(false).from_writer(w);
        if let Some(h) = headers {
            wtr.write_record(h)?;
        }
        rows(&mut wtr)?;
        wtr.flush()?;
        Ok(())
    })
}

/// `site_id,time,value` rows; an empty value is missing. Sites keep the
/// order in which they first appear.
pub fn read_series(path: &Path) -> Result<Vec<RawSeries>> {
    let mut ids: Vec<String> = Vec::new();
    let mut data: Vec<(Vec<i64>, Vec<Option<f64>>)> = Vec::new();
    for rec in records(path, true)? {
        let id = rec.get(0).unwrap_or("").trim().to_string();
        let time: i64 = parse(path, &rec, 1)?;
        let value = match rec.get(2).map(str::trim) {
            None | Some("") => None,
            Some(_) => Some(parse::<f64>(path, &rec, 2)?),
        };
        let i = match ids.iter().position(|s| *s == id) {
            Some(i) => i,
            None => {
                ids.push(id);
                data.push((Vec::new(), Vec::new()));
                ids.len() - 1
            }
        };
        data[i].0.push(time);
        data[i].1.push(value);
    }
    ids.into_iter().zip(data).map(|(id, (t, v))| RawSeries::new(id, t, v)).collect()
}

pub fn write_series(path: &Path, series: &[RawSeries]) -> Result<()> {
    write_csv(path, Some(&["site_id", "time", "value"]), |w| {
        for s in series {
            for (t, v) in s.times.iter().zip(&s.values) {
                let v = v.map_or(String::new(), |x| x.to_string());
                w.write_record([s.site_id.clone(), t.to_string(), v])?;
            }
        }
        Ok(())
    })
}

/// Square numeric matrix without header, row-major.
pub fn read_matrix(path: &Path) -> Result<(usize, Vec<f64>)> {
    let recs = records(path, false)?;
    let n = recs.len();
    let mut out = Vec::with_capacity(n * n);
    for rec in &recs {
        if rec.len() != n {
            return Err(bad(path, line_of(rec), format!("expected {n} columns, found {}", rec.len())));
        }
        for i in 0..n {
            out.push(parse(path, rec, i)?);
        }
    }
    Ok((n, out))
}

pub fn write_matrix(path: &Path, n: usize, values: &[f64]) -> Result<()> {
    assert_eq!(values.len(), n * n);
    write_csv(path, None, |w| {
        for row in values.chunks(n.max(1)).take(n) {
            w.write_record(row.iter().map(|v| v.to_string()))?;
        }
        Ok(())
    })
}

/// Adjacent pairs `k,k'`, returned 0-based.
pub fn read_adjacency(path: &Path) -> Result<Vec<(usize, usize)>> {
    records_optional_header(path)?
        .iter()
        .map(|r| Ok((parse_index(path, r, 0)?, parse_index(path, r, 1)?)))
        .collect()
}

pub fn write_adjacency(path: &Path, pairs: &[(usize, usize)]) -> Result<()> {
    write_csv(path, None, |w| {
        for &(a, b) in pairs {
            w.write_record([(a + 1).to_string(), (b + 1).to_string()])?;
        }
        Ok(())
    })
}

/// `site_id,x,y` rows in site order.
pub fn read_locations(path: &Path) -> Result<Vec<[f64; 2]>> {
    records_optional_header(path)?.iter().map(|r| Ok([parse(path, r, 1)?, parse(path, r, 2)?])).collect()
}

pub fn write_locations(path: &Path, points: &[[f64; 2]]) -> Result<()> {
    write_csv(path, Some(&["site_id", "x", "y"]), |w| {
        for (k, p) in points.iter().enumerate() {
            w.write_record([(k + 1).to_string(), p[0].to_string(), p[1].to_string()])?;
        }
        Ok(())
    })
}

/// Directed counts `site_id,other_id,P,Q`: `P[k,k']` and `Q[k,k']` with `k`
/// the exceeding site and `k'` the conditioning one.
pub fn read_counts(path: &Path) -> Result<DependenceCounts> {
    let mut pairs: Vec<PairCounts> = Vec::new();
    for rec in records(path, true)? {
        let (k, k2) = (parse_index(path, &rec, 0)?, parse_index(path, &rec, 1)?);
        let c = Count { p: parse(path, &rec, 2)?, q: parse(path, &rec, 3)? };
        if c.p > c.q {
            return Err(bad(path, line_of(&rec), format!("P = {} exceeds Q = {}", c.p, c.q)));
        }
        let (lo, hi) = (k.min(k2), k.max(k2));
        let i = match pairs.iter().position(|p| p.k == lo && p.k2 == hi) {
            Some(i) => i,
            None => {
                pairs.push(PairCounts { k: lo, k2: hi, forward: Count::default(), backward: Count::default() });
                pairs.len() - 1
            }
        };
        if k < k2 {
            pairs[i].forward = c;
        } else {
            pairs[i].backward = c;
        }
    }
    DependenceCounts::new(pairs)
}

pub fn write_counts(path: &Path, counts: &DependenceCounts) -> Result<()> {
    write_csv(path, Some(&["site_id", "other_id", "P", "Q"]), |w| {
        for pc in &counts.pairs {
            for (a, b, c) in [(pc.k, pc.k2, pc.forward), (pc.k2, pc.k, pc.backward)] {
                w.write_record([(a + 1).to_string(), (b + 1).to_string(), c.p.to_string(), c.q.to_string()])?;
            }
        }
        Ok(())
    })
}

/// Threshold excesses `site_id,period,excess`, periods 1-based.
pub fn read_exceedances(path: &Path, n_sites: usize, n_periods: usize) -> Result<Exceedances> {
    let mut per_site = vec![Vec::new(); n_sites];
    for rec in records(path, true)? {
        let k = parse_index(path, &rec, 0)?;
        if k >= n_sites {
            return Err(bad(path, line_of(&rec), format!("site {} beyond {n_sites} sites", k + 1)));
        }
        per_site[k].push(Excess { period: parse_index(path, &rec, 1)?, value: parse(path, &rec, 2)? });
    }
    Exceedances::new(per_site, n_periods)
}

pub fn write_exceedances(path: &Path, exc: &Exceedances) -> Result<()> {
    write_csv(path, Some(&["site_id", "period", "excess"]), |w| {
        for k in 0..exc.n_sites() {
            for e in exc.site(k) {
                w.write_record([(k + 1).to_string(), (e.period + 1).to_string(), e.value.to_string()])?;
            }
        }
        Ok(())
    })
}

/// `site_id,threshold`.
pub fn write_thresholds(path: &Path, thresholds: &[f64]) -> Result<()> {
    write_csv(path, Some(&["site_id", "threshold"]), |w| {
        for (k, u) in thresholds.iter().enumerate() {
            w.write_record([(k + 1).to_string(), u.to_string()])?;
        }
        Ok(())
    })
}

pub fn read_thresholds(path: &Path) -> Result<Vec<f64>> {
    records(path, true)?.iter().map(|r| parse(path, r, 1)).collect()
}

pub const TRACE_HEADER: [&str; 16] = [
    "iter", "J", "logpost", "centres", "labels", "sigma", "xi", "gamma0", "epsilon", "beta", "kappa", "mu_sigma",
    "theta_sigma", "mu_xi", "theta_xi", "theta_eps",
];

fn trace_row(s: &Sample) -> [String; 16] {
    let st = &s.state;
    let h = &st.hyper;
    [
        s.iter.to_string(),
        st.n_clusters().to_string(),
        s.log_posterior.to_string(),
        join(st.centres.iter().map(|c| c + 1)),
        join(st.labels.iter().map(|z| z + 1)),
        join(&st.sigma),
        join(&st.xi),
        st.gamma0.to_string(),
        join(&st.epsilon),
        st.beta.to_string(),
        h.kappa.to_string(),
        h.mu_sigma.to_string(),
        h.theta_sigma.to_string(),
        h.mu_xi.to_string(),
        h.theta_xi.to_string(),
        h.theta_epsilon.to_string(),
    ]
}

/// Append-only trace writer; every row is flushed as it is written.
pub struct TraceWriter {
    wtr: Writer<File>,
}

impl TraceWriter {
    pub fn create(path: &Path) -> Result<Self> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        let mut wtr = WriterBuilder::new().has_headers(false).from_writer(File::create(path)?);
        wtr.write_record(TRACE_HEADER)?;
        wtr.flush()?;
        Ok(Self { wtr })
    }

    pub fn write(&mut self, s: &Sample) -> Result<()> {
        self.wtr.write_record(trace_row(s))?;
        self.wtr.flush()?;
        Ok(())
    }
}

pub fn write_trace(path: &Path, trace: &Trace) -> Result<()> {
    write_csv(path, Some(&TRACE_HEADER), |w| {
        for s in &trace.samples {
            w.write_record(trace_row(s))?;
        }
        Ok(())
    })
}

/// Read a trace back. Move statistics are not stored and come back empty.
pub fn read_trace(path: &Path) -> Result<Trace> {
    let mut samples = Vec::new();
    for rec in records(path, true)? {
        if rec.len() != TRACE_HEADER.len() {
            return Err(bad(path, line_of(&rec), format!("expected {} columns", TRACE_HEADER.len())));
        }
        let to0 = |v: Vec<usize>| -> Result<Vec<usize>> {
            v.into_iter().map(|x| x.checked_sub(1).ok_or_else(|| bad(path, line_of(&rec), "indices start at 1"))).collect()
        };
        let state = ClusterState {
            centres: to0(split(path, &rec, 3)?)?,
            labels: to0(split(path, &rec, 4)?)?,
            sigma: split(path, &rec, 5)?,
            xi: split(path, &rec, 6)?,
            gamma0: parse(path, &rec, 7)?,
            epsilon: split(path, &rec, 8)?,
            beta: parse(path, &rec, 9)?,
            hyper: Hyperparameters {
                kappa: parse(path, &rec, 10)?,
                mu_sigma: parse(path, &rec, 11)?,
                theta_sigma: parse(path, &rec, 12)?,
                mu_xi: parse(path, &rec, 13)?,
                theta_xi: parse(path, &rec, 14)?,
                theta_epsilon: parse(path, &rec, 15)?,
            },
        };
        let j: usize = parse(path, &rec, 1)?;
        let consistent = state.centres.len() == j
            && state.sigma.len() == j
            && state.xi.len() == j
            && state.epsilon.len() == j
            && state.labels.iter().all(|&z| z < j);
        if !consistent {
            return Err(bad(path, line_of(&rec), "row inconsistent with its J"));
        }
        samples.push(Sample { iter: parse(path, &rec, 0)?, log_posterior: parse(path, &rec, 2)?, state });
    }
    let n_sites = samples.first().map_or(0, |s| s.state.labels.len());
    if samples.iter().any(|s| s.state.labels.len() != n_sites) {
        return Err(bad(path, None, "rows disagree on the number of sites"));
    }
    Ok(Trace { samples, stats: Default::default(), n_sites })
}

pub fn write_similarity(path: &Path, s: &SimilarityMatrix) -> Result<()> {
    let values: Vec<f64> = (0..s.n_sites()).flat_map(|a| s.row(a).to_vec()).collect();
    write_matrix(path, s.n_sites(), &values)
}

/// `site_id,cluster`, both 1-based.
pub fn write_partition(path: &Path, labels: &[usize]) -> Result<()> {
    write_labels(path, "cluster", labels)
}

pub fn read_partition(path: &Path) -> Result<Vec<usize>> {
    read_labels(path)
}

/// `site_id,true_cluster`.
pub fn write_truth(path: &Path, labels: &[usize]) -> Result<()> {
    write_labels(path, "true_cluster", labels)
}

pub fn read_truth(path: &Path) -> Result<Vec<usize>> {
    read_labels(path)
}

fn write_labels(path: &Path, column: &str, labels: &[usize]) -> Result<()> {
    write_csv(path, Some(&["site_id", column]), |w| {
        for (k, z) in labels.iter().enumerate() {
            w.write_record([(k + 1).to_string(), (z + 1).to_string()])?;
        }
        Ok(())
    })
}

fn read_labels(path: &Path) -> Result<Vec<usize>> {
    let mut rows = records(path, true)?
        .iter()
        .map(|r| Ok((parse_index(path, r, 0)?, parse_index(path, r, 1)?)))
        .collect::<Result<Vec<_>>>()?;
    rows.sort_unstable();
    if rows.iter().enumerate().any(|(i, r)| r.0 != i) {
        return Err(bad(path, None, "site ids must be 1..K without gaps"));
    }
    Ok(rows.into_iter().map(|r| r.1).collect())
}

pub fn write_marginals(path: &Path, m: &[SiteMarginal]) -> Result<()> {
    write_csv(path, Some(&["site_id", "psi_med", "psi_lo", "psi_hi", "nu_med", "nu_lo", "nu_hi"]), |w| {
        for (k, s) in m.iter().enumerate() {
            w.write_record([
                (k + 1).to_string(),
                s.psi.median.to_string(),
                s.psi.lo.to_string(),
                s.psi.hi.to_string(),
                s.nu.median.to_string(),
                s.nu.lo.to_string(),
                s.nu.hi.to_string(),
            ])?;
        }
        Ok(())
    })
}

pub fn write_return_levels(path: &Path, rows: &[ReturnLevelSummary]) -> Result<()> {
    write_csv(path, Some(&["site_id", "tau", "median", "lo", "hi"]), |w| {
        for r in rows {
            w.write_record([
                (r.site + 1).to_string(),
                r.tau.to_string(),
                r.summary.median.to_string(),
                r.summary.lo.to_string(),
                r.summary.hi.to_string(),
            ])?;
        }
        Ok(())
    })
}

/// `J,probability`.
pub fn write_posterior_j(path: &Path, pj: &[(usize, f64)]) -> Result<()> {
    write_csv(path, Some(&["J", "probability"]), |w| {
        for (j, p) in pj {
            w.write_record([j.to_string(), p.to_string()])?;
        }
        Ok(())
    })
}

pub fn read_posterior_j(path: &Path) -> Result<Vec<(usize, f64)>> {
    records(path, true)?.iter().map(|r| Ok((parse(path, r, 0)?, parse(path, r, 1)?))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simgen::{simulate_study, Study};
    use crate::sampler::{run_chain, ChainConfig, Model, MoveConfig};

    fn dir() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    #[test]
    fn series_round_trip_with_missing() {
        let d = dir();
        let p = d.path().join("series.csv");
        let s = vec![
            RawSeries::new("b", vec![1, 2, 3], vec![Some(1.5), None, Some(-0.25)]).unwrap(),
            RawSeries::new("a", vec![1, 2], vec![Some(0.1), Some(1e-300)]).unwrap(),
        ];
        write_series(&p, &s).unwrap();
        assert_eq!(read_series(&p).unwrap(), s);
        assert!(fs::read_to_string(&p).unwrap().contains("b,2,\n"));
    }

    #[test]
    fn spatial_files_round_trip() {
        let d = dir();
        let m = vec![0.0, 1.25, 1.25, 0.0];
        write_matrix(&d.path().join("d.csv"), 2, &m).unwrap();
        assert_eq!(read_matrix(&d.path().join("d.csv")).unwrap(), (2, m));
        let adj = vec![(0, 1), (1, 2)];
        write_adjacency(&d.path().join("a.csv"), &adj).unwrap();
        assert_eq!(fs::read_to_string(d.path().join("a.csv")).unwrap(), "1,2\n2,3\n");
        assert_eq!(read_adjacency(&d.path().join("a.csv")).unwrap(), adj);
        fs::write(d.path().join("a2.csv"), "k,k2\n1,2\n").unwrap();
        assert_eq!(read_adjacency(&d.path().join("a2.csv")).unwrap(), vec![(0, 1)]);
        fs::write(d.path().join("a3.csv"), "0,2\n").unwrap();
        assert!(read_adjacency(&d.path().join("a3.csv")).is_err());
        let pts = vec![[0.5, -1.0], [2.0, 3.0]];
        write_locations(&d.path().join("l.csv"), &pts).unwrap();
        assert_eq!(read_locations(&d.path().join("l.csv")).unwrap(), pts);
    }

    #[test]
    fn ragged_matrix_rejected() {
        let d = dir();
        let p = d.path().join("d.csv");
        fs::write(&p, "0,1\n1\n").unwrap();
        let e = read_matrix(&p).unwrap_err().to_string();
        assert!(e.contains(":2:"), "{e}");
    }

    #[test]
    fn study_data_round_trips() {
        let d = dir();
        let data = simulate_study(Study::Three, 4).unwrap();
        write_counts(&d.path().join("counts.csv"), &data.counts).unwrap();
        assert_eq!(read_counts(&d.path().join("counts.csv")).unwrap(), data.counts);
        write_exceedances(&d.path().join("exc.csv"), &data.exceedances).unwrap();
        let exc = read_exceedances(&d.path().join("exc.csv"), 20, data.exceedances.n_periods()).unwrap();
        assert_eq!(exc, data.exceedances);
        write_truth(&d.path().join("truth.csv"), &data.labels).unwrap();
        assert_eq!(read_truth(&d.path().join("truth.csv")).unwrap(), data.labels);
    }

    #[test]
    fn trace_round_trip_and_incremental_writer() {
        let d = dir();
        let data = simulate_study(Study::One, 5).unwrap();
        let model = Model::new(data.spatial, data.exceedances, &data.counts).unwrap();
        let cfg = ChainConfig { iterations: 400, burn_in: 100, thin: 10, ..Default::default() };
        let trace = run_chain(&model, &cfg, &MoveConfig::default()).unwrap();
        let p = d.path().join("trace.csv");
        write_trace(&p, &trace).unwrap();
        let back = read_trace(&p).unwrap();
        assert_eq!(back.samples, trace.samples);
        let p2 = d.path().join("trace2.csv");
        let mut w = TraceWriter::create(&p2).unwrap();
        for s in &trace.samples {
            w.write(s).unwrap();
        }
        drop(w);
        assert_eq!(fs::read(&p).unwrap(), fs::read(&p2).unwrap());
    }

    #[test]
    fn summaries_written_with_headers() {
        let d = dir();
        write_posterior_j(&d.path().join("pj.csv"), &[(1, 0.75), (2, 0.25)]).unwrap();
        assert_eq!(fs::read_to_string(d.path().join("pj.csv")).unwrap(), "J,probability\n1,0.75\n2,0.25\n");
        assert_eq!(read_posterior_j(&d.path().join("pj.csv")).unwrap(), vec![(1, 0.75), (2, 0.25)]);
        write_partition(&d.path().join("p.csv"), &[0, 0, 1]).unwrap();
        assert_eq!(read_partition(&d.path().join("p.csv")).unwrap(), vec![0, 0, 1]);
        assert!(!d.path().join("p.csv.tmp").exists());
    }
}
