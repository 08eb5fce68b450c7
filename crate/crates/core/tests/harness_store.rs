use std::fs;

use prefemo::algorithms::{AlgorithmKind, AlgorithmSpec};
use prefemo::harness::{
    export_heatmap, run_experiment, summarize, AlgorithmEntry, ExperimentConfig, HarnessError, ProblemConfig, ResultStore, RunStatus, Scenario,
    SCHEMA_VERSION,
};
use prefemo::metrics::MetricId;
use prefemo::problems::Family;

fn config(algorithms: Vec<AlgorithmEntry>) -> ExperimentConfig {
    ExperimentConfig {
        schema_version: SCHEMA_VERSION,
        description: String::new(),
        problems: vec![ProblemConfig::benchmark(Family::Zdt2, None)],
        algorithms,
        scenarios: vec![Scenario::single("mid", vec![0.5, 0.7]), Scenario::single("low", vec![0.2, 0.9])],
        replications: 6,
        budget: 500,
        base_seed: 100,
        delta_extent: 0.2,
        front_samples: 300,
        alpha: 0.05,
        output_dir: None,
    }
}

fn entry(kind: AlgorithmKind, label: Option<&str>) -> AlgorithmEntry {
    AlgorithmEntry { label: label.map(String::from), spec: AlgorithmSpec::new(kind, 20) }
}

#[test]
fn store_round_trips_and_resume_skips_completed_keys() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(vec![entry(AlgorithmKind::RDomNsga2, None), entry(AlgorithmKind::Rmead2, None)]);
    let (store, report) = run_experiment(&cfg, dir.path(), 2, false).unwrap();
    assert_eq!((report.executed, report.skipped, report.failed), (24, 0, 0));

    let reopened = ResultStore::open(dir.path()).unwrap();
    assert_eq!(reopened.config(), store.config());
    let records = reopened.records().unwrap();
    assert_eq!(records.len(), 24);
    assert!(records.iter().all(|r| r.status == RunStatus::Ok && r.evaluations <= 500));
    let seeds: Vec<u64> = records.iter().filter(|r| r.key.algorithm == "rmead2" && r.key.scenario == "mid").map(|r| r.key.seed).collect();
    assert_eq!(seeds, (100..106).collect::<Vec<_>>());

    let metrics_before = fs::read(dir.path().join("metrics.json")).unwrap();
    let timings_before = fs::read_to_string(dir.path().join("timings.jsonl")).unwrap().lines().count();
    let (_, again) = run_experiment(&cfg, dir.path(), 2, true).unwrap();
    assert_eq!((again.executed, again.skipped), (0, 24));
    assert_eq!(fs::read_to_string(dir.path().join("timings.jsonl")).unwrap().lines().count(), timings_before);
    assert_eq!(fs::read(dir.path().join("metrics.json")).unwrap(), metrics_before);

    // Dropping one run file makes resume redo exactly that key.
    let victim = records[3].key.clone();
    fs::remove_file(dir.path().join("runs").join(victim.file_name())).unwrap();
    let (_, partial) = run_experiment(&cfg, dir.path(), 1, true).unwrap();
    assert_eq!((partial.executed, partial.skipped), (1, 23));
    assert_eq!(reopened.get(&victim).unwrap().unwrap(), records[3]);
}

#[test]
fn identical_algorithms_get_no_significance_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(vec![entry(AlgorithmKind::RNsga2, Some("first")), entry(AlgorithmKind::RNsga2, Some("second"))]);
    let (store, _) = run_experiment(&cfg, dir.path(), 2, false).unwrap();
    for metric in [MetricId::Ep, MetricId::RHv, MetricId::Igd] {
        let summary = summarize(&store, metric).unwrap();
        assert!(summary.incomplete.is_empty());
        for cell in &summary.cells {
            let (a, b) = (&cell.algorithms[0], &cell.algorithms[1]);
            assert_eq!(a.median, b.median);
            assert_eq!(a.iqr, b.iqr);
            assert!(cell.algorithms.iter().all(|s| s.significant != Some(true)), "{metric}: {cell:?}");
        }
    }
}

#[test]
fn heatmap_rows_and_frequencies_are_consistent() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(vec![entry(AlgorithmKind::GNsga2, None), entry(AlgorithmKind::Pbea, None), entry(AlgorithmKind::Nsga3, None)]);
    let (store, _) = run_experiment(&cfg, dir.path(), 3, false).unwrap();
    let map = export_heatmap(&store, MetricId::Ep, &dir.path().join("ep.json")).unwrap();
    assert_eq!(map.instances, vec!["zdt2/mid", "zdt2/low"]);
    for row in &map.ranks {
        assert!(row.contains(&1));
        assert!(row.iter().all(|r| (1..=3).contains(r)));
    }
    let total: usize = map.frequency.iter().flatten().sum();
    assert_eq!(total, 3 * 2);
    let csv = fs::read_to_string(dir.path().join("ep.ranks.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "instance,gnsga2,pbea,nsga3");
}

#[test]
fn heatmap_refuses_incomplete_results() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(vec![entry(AlgorithmKind::GNsga2, None)]);
    let (store, _) = run_experiment(&cfg, dir.path(), 1, false).unwrap();
    // Adding an algorithm to a finished store leaves its cells empty.
    let mut bigger = cfg.clone();
    bigger.algorithms.push(entry(AlgorithmKind::Pbea, None));
    let grown = ResultStore::create(store.dir(), &bigger).unwrap();
    match export_heatmap(&grown, MetricId::RIgd, &dir.path().join("x.json")) {
        Err(HarnessError::Incomplete(items)) => {
            assert_eq!(items, vec!["zdt2 / mid / pbea".to_string(), "zdt2 / low / pbea".to_string()]);
        }
        other => panic!("expected incomplete, got {other:?}"),
    }
}
