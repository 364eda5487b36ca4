use extremeclust::data::validate_state;
use extremeclust::exec::Exec;
use extremeclust::io;
use extremeclust::posterior::{point_estimate, similarity_matrix, swmc_marginals};
use extremeclust::sampler::{run_chain, run_chains, ChainConfig, InitialClusters, Model, MoveConfig};
use extremeclust::simgen::{simulate_study, Study};

fn short(seed: u64) -> ChainConfig {
    ChainConfig { iterations: 6000, burn_in: 2000, thin: 20, initial: InitialClusters::Count(2), seed }
}

fn study3_model() -> Model {
    let data = simulate_study(Study::Three, 11).unwrap();
    Model::new(data.spatial, data.exceedances, &data.counts).unwrap()
}

#[test]
fn every_sample_is_a_valid_state() {
    let model = study3_model();
    let trace = run_chain(&model, &short(4), &MoveConfig::default()).unwrap();
    assert_eq!(trace.len(), 200);
    for s in &trace.samples {
        let v = validate_state(&s.state, model.spatial(), false);
        assert!(v.is_ok(), "iter {}: {v:?}", s.iter);
        assert!(s.log_posterior.is_finite());
    }
    // Parameter moves count one proposal per component updated.
    assert!(trace.stats.proposed.iter().all(|&n| n > 0));
    assert!(trace.stats.proposed.iter().sum::<u64>() >= 6000);
}

#[test]
fn sequential_and_parallel_agree() {
    let model = study3_model();
    let cfgs = [short(1), short(2)];
    let moves = MoveConfig::default();
    let seq: Vec<_> = run_chains(&model, &cfgs, &moves, Exec::Sequential).into_iter().map(Result::unwrap).collect();
    let par: Vec<_> = run_chains(&model, &cfgs, &moves, Exec::Parallel).into_iter().map(Result::unwrap).collect();
    assert_eq!(seq, par);

    let trace = &seq[0];
    assert_eq!(similarity_matrix(trace, Exec::Sequential).unwrap(), similarity_matrix(trace, Exec::Parallel).unwrap());
    assert_eq!(point_estimate(trace, Exec::Sequential).unwrap(), point_estimate(trace, Exec::Parallel).unwrap());
    assert_eq!(
        swmc_marginals(trace, 0.9, Exec::Sequential).unwrap(),
        swmc_marginals(trace, 0.9, Exec::Parallel).unwrap()
    );
}

#[test]
fn trace_survives_a_csv_round_trip() {
    let model = study3_model();
    let trace = run_chain(&model, &short(9), &MoveConfig::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trace.csv");
    io::write_trace(&path, &trace).unwrap();
    let back = io::read_trace(&path).unwrap();
    assert_eq!(back.len(), trace.len());
    for (a, b) in trace.samples.iter().zip(&back.samples) {
        assert_eq!(a.iter, b.iter);
        assert_eq!(a.state, b.state);
        assert_eq!(a.log_posterior, b.log_posterior);
    }
    // Summaries only depend on what the file holds.
    assert_eq!(point_estimate(&trace, Exec::Sequential).unwrap(), point_estimate(&back, Exec::Sequential).unwrap());
}
