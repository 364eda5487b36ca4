use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use log::{info, warn};

use extremeclust::data::{distance_issues, Spatial};
use extremeclust::delaunay::voronoi_adjacency;
use extremeclust::exec::Exec;
use extremeclust::io;
use extremeclust::marginal::MIN_EXCESSES;
use extremeclust::posterior::{point_estimate, similarity_matrix, swmc_marginals, swmc_return_levels};
use extremeclust::preprocess::{decluster_all, dependence_counts, empirical_threshold, RawSeries};
use extremeclust::rng::derive_seed;
use extremeclust::sampler::{run_chain_with, run_chains, Model, MoveConfig, Trace};
use extremeclust::simgen::{simulate_study, Study, STUDY_SITES};
use extremeclust::{DependenceCounts, Exceedances, SeriesMatrix};

mod config;

use config::{Config, RunInfo, RUN_INFO, THRESHOLDS};

#[derive(Parser)]
#[command(name = "extremeclust", version, about = "Bayesian spatial clustering of extremes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a simulated study data set and a config to sample it.
    Simulate {
        #[arg(long)]
        study: u32,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Copula correlation range for the dependent Study 3 variant.
        #[arg(long)]
        rho: Option<f64>,
    },
    /// Decluster, threshold and count joint exceedances.
    Preprocess {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the sampler and summarise the trace.
    Sample {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Posterior summaries of an existing trace.
    Summarize {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Validate the inputs without sampling.
    Check {
        #[arg(long)]
        config: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate { study, seed, out, rho } => simulate(study, seed, &out, rho),
        Command::Preprocess { config, out } => preprocess(&config, out),
        Command::Sample { config, out } => sample(&config, out),
        Command::Summarize { trace, out } => summarize(&trace, &out),
        Command::Check { config } => check(&config),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let msg = format!("{e:#}");
            eprintln!("error: {}", msg.lines().map(str::trim).filter(|l| !l.is_empty()).collect::<Vec<_>>().join(" "));
            ExitCode::FAILURE
        }
    }
}

fn simulate(study: u32, seed: u64, out: &Path, rho: Option<f64>) -> Result<ExitCode> {
    let study = match (Study::from_number(study)?, rho) {
        (Study::Three, Some(r)) => Study::ThreeCopula(r),
        (_, Some(_)) => bail!("--rho applies to study 3 only"),
        (s, None) => s,
    };
    let d = simulate_study(study, seed)?;
    let k = d.spatial.n_sites();
    let series: Vec<RawSeries> = (0..k)
        .map(|s| {
            let mut values = vec![None; d.exceedances.n_periods()];
            for e in d.exceedances.site(s) {
                values[e.period] = Some(e.value);
            }
            let times = (1..=values.len() as i64).collect();
            RawSeries::new((s + 1).to_string(), times, values)
        })
        .collect::<extremeclust::Result<_>>()?;
    io::write_series(&out.join("series.csv"), &series)?;
    let scale = d.spatial.scale();
    let raw: Vec<f64> = d.spatial.distances().iter().map(|x| x * scale).collect();
    io::write_matrix(&out.join("distances.csv"), k, &raw)?;
    io::write_adjacency(&out.join("adjacency.csv"), d.spatial.adjacency())?;
    io::write_locations(&out.join("locations.csv"), &STUDY_SITES)?;
    io::write_counts(&out.join("counts.csv"), &d.counts)?;
    io::write_truth(&out.join("truth.csv"), &d.labels)?;
    // Series values are the excesses themselves, so the threshold is zero.
    let config = format!(
        "# Simulated study data; values are excesses over a zero threshold.\n\
         [data]\nseries = \"series.csv\"\ndistances = \"distances.csv\"\nadjacency = \"adjacency.csv\"\n\
         locations = \"locations.csv\"\ncounts = \"counts.csv\"\n\n\
         [preprocess]\nperiod_length = 1\nthreshold_value = 0.0\n\n\
         [sampler]\niterations = 1000000\nburn_in = 500000\nthin = 100\nseed = {seed}\n\n\
         [summary]\nlambda_u = 3.9\n\n\
         [output]\ndir = \"results\"\n"
    );
    io::write_atomic(&out.join("config.toml"), |w| Ok(w.write_all(config.as_bytes())?))?;
    info!("wrote study data to {}", out.display());
    Ok(ExitCode::SUCCESS)
}

/// Raw inputs before validation.
struct Inputs {
    series: Vec<RawSeries>,
    n_sites: usize,
    distances: Vec<f64>,
    adjacency: Vec<(usize, usize)>,
    counts: Option<DependenceCounts>,
}

fn read_inputs(cfg: &Config) -> Result<Inputs> {
    let series = io::read_series(&cfg.data.series)?;
    let locations = cfg.data.locations.as_deref().map(io::read_locations).transpose()?;
    let (n_sites, distances) = match (&cfg.data.distances, &locations) {
        (Some(p), _) => io::read_matrix(p)?,
        (None, Some(pts)) => {
            let s = Spatial::euclidean(pts, &[])?;
            (pts.len(), s.distances().iter().map(|d| d * s.scale()).collect())
        }
        (None, None) => unreachable!("validated config"),
    };
    let adjacency = match (&cfg.data.adjacency, &locations) {
        (Some(p), _) => io::read_adjacency(p)?,
        (None, Some(pts)) => voronoi_adjacency(pts)?,
        (None, None) => unreachable!("validated config"),
    };
    let counts = cfg.data.counts.as_deref().map(io::read_counts).transpose()?;
    Ok(Inputs { series, n_sites, distances, adjacency, counts })
}

/// Declustered series, thresholds, excesses and counts.
struct Prepared {
    spatial: Spatial,
    thresholds: Vec<f64>,
    exceedances: Exceedances,
    counts: DependenceCounts,
}

fn declustered(cfg: &Config, inputs: &Inputs) -> Result<(SeriesMatrix, Vec<f64>)> {
    let (_, matrix) = decluster_all(&inputs.series, cfg.preprocess.period_length)?;
    let thresholds = match (cfg.threshold_quantile(), cfg.preprocess.threshold_value) {
        (Some(p), _) => (0..matrix.n_sites())
            .map(|k| {
                empirical_threshold(&matrix.row(k), p)
                    .with_context(|| format!("threshold for site {}", inputs.series[k].site_id))
            })
            .collect::<Result<Vec<_>>>()?,
        (None, Some(u)) => vec![u; matrix.n_sites()],
        (None, None) => unreachable!(),
    };
    Ok((matrix, thresholds))
}

fn prepare(cfg: &Config) -> Result<Prepared> {
    let inputs = read_inputs(cfg)?;
    if inputs.series.len() != inputs.n_sites {
        bail!("series has {} sites but the distance matrix has {}", inputs.series.len(), inputs.n_sites);
    }
    let spatial = Spatial::new(inputs.n_sites, inputs.distances.clone(), &inputs.adjacency)?;
    let (matrix, thresholds) = declustered(cfg, &inputs)?;
    let exceedances = Exceedances::from_series(&matrix, &thresholds)?;
    let counts = match inputs.counts {
        Some(c) => c,
        None => dependence_counts(&matrix, &spatial, cfg.preprocess.dependence_threshold, Exec::default())?,
    };
    Ok(Prepared { spatial, thresholds, exceedances, counts })
}

fn preprocess(config: &Path, out: Option<PathBuf>) -> Result<ExitCode> {
    let cfg = Config::load(config)?;
    let out = out.unwrap_or_else(|| cfg.output.dir.clone());
    let p = prepare(&cfg)?;
    io::write_thresholds(&out.join(THRESHOLDS), &p.thresholds)?;
    io::write_exceedances(&out.join("exceedances.csv"), &p.exceedances)?;
    io::write_counts(&out.join("counts.csv"), &p.counts)?;
    Ok(ExitCode::SUCCESS)
}

fn sample(config: &Path, out: Option<PathBuf>) -> Result<ExitCode> {
    let cfg = Config::load(config)?;
    let out = out.unwrap_or_else(|| cfg.output.dir.clone());
    let p = prepare(&cfg)?;
    let model = Model::new(p.spatial, p.exceedances, &p.counts)?.with_priors(cfg.priors.spec()?);
    let moves = MoveConfig::from(cfg.moves);
    std::fs::create_dir_all(&out).with_context(|| format!("cannot create {}", out.display()))?;
    let trace_path = out.join("trace.csv");
    let trace = if cfg.sampler.chains == 1 {
        let mut writer = io::TraceWriter::create(&trace_path)?;
        run_chain_with(&model, &cfg.sampler.chain(cfg.sampler.seed), &moves, |s| writer.write(s))?
    } else {
        let chains: Vec<_> =
            (0..cfg.sampler.chains as u64).map(|i| cfg.sampler.chain(derive_seed(cfg.sampler.seed, i))).collect();
        let traces = run_chains(&model, &chains, &moves, Exec::default()).into_iter().collect::<extremeclust::Result<Vec<_>>>()?;
        let trace = Trace::merge(traces);
        io::write_trace(&trace_path, &trace)?;
        trace
    };
    for kind in extremeclust::sampler::MoveKind::ALL {
        info!("{} acceptance {:.3}", kind.name(), trace.stats.rate(kind));
    }
    io::write_thresholds(&out.join(THRESHOLDS), &p.thresholds)?;
    let run = RunInfo { level: cfg.summary.level, taus: cfg.summary.taus.clone(), lambda_u: cfg.lambda_u() };
    let text = toml::to_string(&run)?;
    io::write_atomic(&out.join(RUN_INFO), |w| Ok(w.write_all(text.as_bytes())?))?;
    write_summaries(&trace, &p.thresholds, &run, &out)?;
    Ok(ExitCode::SUCCESS)
}

fn summarize(trace_path: &Path, out: &Path) -> Result<ExitCode> {
    let trace = io::read_trace(trace_path)?;
    let dir = trace_path.parent().unwrap_or(Path::new(""));
    let info_path = dir.join(RUN_INFO);
    let run: RunInfo = if info_path.exists() {
        toml::from_str(&std::fs::read_to_string(&info_path)?).with_context(|| format!("malformed {}", info_path.display()))?
    } else {
        let d = config::SummaryConfig::default();
        RunInfo { level: d.level, taus: d.taus, lambda_u: None }
    };
    let thresholds_path = dir.join(THRESHOLDS);
    let thresholds = if thresholds_path.exists() { io::read_thresholds(&thresholds_path)? } else { Vec::new() };
    write_summaries(&trace, &thresholds, &run, out)?;
    Ok(ExitCode::SUCCESS)
}

fn write_summaries(trace: &Trace, thresholds: &[f64], run: &RunInfo, out: &Path) -> Result<()> {
    let exec = Exec::default();
    io::write_posterior_j(&out.join("posterior_J.csv"), &trace.posterior_j())?;
    io::write_similarity(&out.join("similarity.csv"), &similarity_matrix(trace, exec)?)?;
    let est = point_estimate(trace, exec)?;
    info!("point estimate has {} clusters, expected VI {:.4}", est.n_clusters, est.expected_vi);
    io::write_partition(&out.join("partition.csv"), &est.labels)?;
    io::write_marginals(&out.join("marginals.csv"), &swmc_marginals(trace, run.level, exec)?)?;
    match run.lambda_u {
        Some(lambda) if thresholds.len() == trace.n_sites => {
            let rows = swmc_return_levels(trace, thresholds, lambda, &run.taus, run.level)?;
            io::write_return_levels(&out.join("return_levels.csv"), &rows)?;
        }
        Some(_) => warn!("no thresholds next to the trace; return_levels.csv not written"),
        None => warn!("exceedance rate unknown (set summary.lambda_u or periods_per_year); return_levels.csv not written"),
    }
    Ok(())
}

fn check(config: &Path) -> Result<ExitCode> {
    let cfg = Config::load(config)?;
    let inputs = read_inputs(&cfg)?;
    let mut issues = Vec::new();
    let n = inputs.n_sites;
    if inputs.series.len() != n {
        issues.push(format!("series has {} sites but the distance matrix has {n}", inputs.series.len()));
    }
    issues.extend(distance_issues(n, &inputs.distances));
    for &(a, b) in &inputs.adjacency {
        for s in [a, b] {
            if s >= n {
                issues.push(format!("adjacency pair ({}, {}) references unknown site {}", a + 1, b + 1, s + 1));
            }
        }
        if a == b {
            issues.push(format!("adjacency pair ({0}, {0}) joins a site to itself", a + 1));
        }
    }
    if issues.is_empty() {
        let spatial = Spatial::new(n, inputs.distances.clone(), &inputs.adjacency)
            .map_err(|e| issues.push(e.to_string()))
            .ok();
        let prepared = declustered(&cfg, &inputs).map_err(|e| issues.push(format!("{e:#}"))).ok();
        if let (Some(spatial), Some((matrix, thresholds))) = (spatial, prepared) {
            {
                for (k, u) in thresholds.iter().enumerate() {
                    let n_exc = matrix.observed_values(k).iter().filter(|&&r| r > *u).count();
                    if n_exc < MIN_EXCESSES {
                        issues.push(format!(
                            "site {} has {n_exc} excesses of threshold {u}, need at least {MIN_EXCESSES}",
                            inputs.series[k].site_id
                        ));
                    }
                }
                let counts = match inputs.counts {
                    Some(c) => Ok(c),
                    None => dependence_counts(&matrix, &spatial, cfg.preprocess.dependence_threshold, Exec::default()),
                };
                match counts {
                    Err(e) => issues.push(e.to_string()),
                    Ok(c) => {
                        for pc in &c.pairs {
                            if !spatial.is_adjacent(pc.k, pc.k2) {
                                issues.push(format!("counts given for non-adjacent pair ({}, {})", pc.k + 1, pc.k2 + 1));
                            }
                        }
                        for (a, b) in c.empty_pairs() {
                            issues.push(format!("adjacent pair ({}, {}) has Q = 0 in both directions", a + 1, b + 1));
                        }
                        for &(a, b) in spatial.adjacency() {
                            if c.get(a, b).is_none() {
                                issues.push(format!("adjacent pair ({}, {}) has no counts", a + 1, b + 1));
                            }
                        }
                    }
                }
            }
        }
    }
    if issues.is_empty() {
        println!("ok");
        Ok(ExitCode::SUCCESS)
    } else {
        for i in &issues {
            println!("{i}");
        }
        Ok(ExitCode::FAILURE)
    }
}
