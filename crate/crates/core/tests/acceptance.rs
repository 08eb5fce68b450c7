//! One PASS/FAIL line per acceptance criterion, at pinned tolerances.
//! Runs without the libtest harness; exits non-zero when any line fails.

use std::fs;
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use prefemo::algorithms::{run, AlgorithmKind, AlgorithmSpec, RunResult};
use prefemo::harness::{run_experiment, AlgorithmEntry, ExperimentConfig, ProblemConfig, Scenario, SCHEMA_VERSION};
use prefemo::metrics::{ep_accuracy, hypervolume, igd, wilcoxon_signed_rank, MetricError};
use prefemo::pareto::{dominates, fast_nondominated_sort};
use prefemo::problems::{evaluate_portfolio, sample_true_front, AssetHistory, Family, PortfolioModel, Problem, ProblemSpec, Sense};
use prefemo::scalarize::{das_dennis, g_flag, nums_transform, simplex_projection, ReferencePoint};
use prefemo::steer::{replay_journal, ScriptedDm, Session, SessionConfig, Snapshot};

const SEEDS: u64 = 11;

struct Line {
    id: &'static str,
    pass: bool,
    detail: String,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn runs(kind: AlgorithmKind, problem: &Problem, n: usize, refs: &[ReferencePoint], budget: usize) -> Vec<RunResult> {
    (0..SEEDS)
        .into_par_iter()
        .map(|seed| {
            let spec = AlgorithmSpec::new(kind, n).with_reference_points(refs.to_vec());
            run(spec, problem.clone(), budget, seed, |_| {}).expect("run succeeds")
        })
        .collect()
}

fn zdt1() -> Problem {
    Problem::benchmark(ProblemSpec::standard(Family::Zdt1)).unwrap()
}

fn metric_oracles() -> Line {
    let tol = 1e-12;
    let hv = hypervolume(&[vec![0.25, 0.75], vec![0.75, 0.25]], &[1.0, 1.0]);
    let ig = igd(&[vec![0.0, 1.0]], &[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
    let zr = ReferencePoint::with_weights(vec![0.3, 0.5], vec![0.5, 0.5]).unwrap();
    let ep1 = ep_accuracy(&[vec![0.4, 0.6]], &zr).unwrap();
    let ep2 = ep_accuracy(&[vec![0.2, 0.2]], &ReferencePoint::new(vec![0.3, 0.3]).unwrap()).unwrap();
    let ep3 = ep_accuracy(&[vec![0.3, 0.5], vec![0.9, 0.9]], &zr).unwrap();
    let pass = hv == 0.3125
        && (ig - 0.5f64.sqrt()).abs() <= tol
        && (ep1 - 0.2).abs() <= tol
        && (ep2 + 0.2).abs() <= tol
        && ep3 == 0.0;
    Line {
        id: "metric-oracles",
        pass,
        detail: format!("HV={hv} (exact 0.3125), IGD={ig:.15}, E(P)={ep1:.15}/{ep2:.15}/{ep3}; tol {tol:e}"),
    }
}

fn peel_fronts(points: &[Vec<f64>]) -> Vec<Vec<usize>> {
    let mut left: Vec<usize> = (0..points.len()).collect();
    let mut fronts = Vec::new();
    while !left.is_empty() {
        let front: Vec<usize> = left.iter().copied().filter(|&i| !left.iter().any(|&j| dominates(&points[j], &points[i]))).collect();
        left.retain(|i| !front.contains(i));
        fronts.push(front);
    }
    fronts
}

fn enumerated_p(diffs: &[f64]) -> f64 {
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let ranks: Vec<f64> = abs
        .iter()
        .map(|a| {
            let below = abs.iter().filter(|b| *b < a).count() as f64;
            let equal = abs.iter().filter(|b| *b == a).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect();
    let observed: f64 = diffs.iter().zip(&ranks).filter(|(d, _)| **d > 0.0).map(|(_, r)| r).sum();
    let n = diffs.len();
    let (mut lower, mut upper) = (0u64, 0u64);
    for mask in 0u32..(1 << n) {
        let w: f64 = (0..n).filter(|i| mask & (1 << i) != 0).map(|i| ranks[i]).sum();
        if w <= observed + 1e-9 {
            lower += 1;
        }
        if w >= observed - 1e-9 {
            upper += 1;
        }
    }
    let total = (1u64 << n) as f64;
    (2.0 * (lower as f64 / total).min(upper as f64 / total)).min(1.0)
}

fn brute_force_equivalence() -> Line {
    let mut rng = ChaCha8Rng::seed_from_u64(0xb007);
    let mut nds_mismatch = 0;
    for case in 0..200 {
        let n = rng.random_range(1..=50);
        let m = rng.random_range(2..=5);
        // Coarse grid values force ties and duplicates.
        let coarse = case % 2 == 0;
        let points: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..m).map(|_| if coarse { rng.random_range(0..4) as f64 } else { rng.random::<f64>() }).collect())
            .collect();
        let mut fast = fast_nondominated_sort(&points);
        let mut slow = peel_fronts(&points);
        fast.iter_mut().for_each(|f| f.sort());
        slow.iter_mut().for_each(|f| f.sort());
        if fast != slow {
            nds_mismatch += 1;
        }
    }
    let mut w_mismatch = 0;
    let mut cases = 0;
    for n in 1..=10 {
        for _ in 0..40 {
            let a: Vec<f64> = (0..n).map(|_| rng.random_range(0..6) as f64 * 0.5).collect();
            let b: Vec<f64> = (0..n).map(|_| rng.random_range(0..6) as f64 * 0.5).collect();
            let diffs: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).filter(|d| *d != 0.0).collect();
            cases += 1;
            match wilcoxon_signed_rank(&a, &b, 0.05) {
                Ok(t) if diffs.is_empty() => w_mismatch += usize::from(t.p_value != 1.0),
                Ok(t) => w_mismatch += usize::from((t.p_value - enumerated_p(&diffs)).abs() > 1e-12),
                Err(MetricError::TooFewPairs(k)) => w_mismatch += usize::from(k != diffs.len() || k >= 5),
                Err(_) => w_mismatch += 1,
            }
        }
    }
    Line {
        id: "brute-force-equivalence",
        pass: nds_mismatch == 0 && w_mismatch == 0,
        detail: format!("NDS 200 populations: {nds_mismatch} mismatches; Wilcoxon {cases} cases n<=10: {w_mismatch} mismatches (tol 1e-12)"),
    }
}

fn bad_reference_regressions() -> Line {
    let problem = zdt1();
    let far = runs(AlgorithmKind::GNsga2, &problem, 100, &[ReferencePoint::new(vec![0.9, 0.9]).unwrap()], 25_000);
    let spread = median(
        far.iter()
            .map(|r| {
                let f1: Vec<f64> = r.final_objectives().iter().map(|f| f[0]).collect();
                f1.iter().copied().fold(f64::NEG_INFINITY, f64::max) - f1.iter().copied().fold(f64::INFINITY, f64::min)
            })
            .collect(),
    );
    let z = vec![0.5, 1.0 - 0.5f64.sqrt()];
    let on = runs(AlgorithmKind::GNsga2, &problem, 100, &[ReferencePoint::new(z.clone()).unwrap()], 25_000);
    let close = median(
        on.iter()
            .map(|r| {
                let flagged: Vec<&[f64]> = r.final_population.iter().map(|s| s.f.as_slice()).filter(|f| g_flag(f, &z) == 1).collect();
                let near = flagged.iter().filter(|f| f.iter().zip(&z).all(|(a, b)| (a - b).abs() <= 0.05)).count();
                if flagged.is_empty() {
                    0.0
                } else {
                    near as f64 / flagged.len() as f64
                }
            })
            .collect(),
    );
    Line {
        id: "bad-reference-regressions",
        pass: spread >= 0.8 && close >= 0.95,
        detail: format!("g-NSGA-II ZDT1 25k evals, {SEEDS} seeds: median f1 spread {spread:.4} (>= 0.8); on-PF median fraction within 0.05 = {close:.4} (>= 0.95)"),
    }
}

fn preference_convergence() -> Line {
    let problem = zdt1();
    let zr = ReferencePoint::new(vec![0.5, 1.0 - 0.5f64.sqrt()]).unwrap();
    let mut parts = Vec::new();
    let mut pass = true;
    for (kind, n) in [(AlgorithmKind::RNsga2, 100), (AlgorithmKind::Pbea, 100), (AlgorithmKind::MoeadNums, 100)] {
        let eps: Vec<f64> = runs(kind, &problem, n, std::slice::from_ref(&zr), 25_000)
            .iter()
            .map(|r| ep_accuracy(&r.final_objectives(), &zr).unwrap())
            .collect();
        let med = median(eps);
        pass &= med <= 0.02;
        parts.push(format!("{} {med:.2e}", kind.display_name()));
    }
    let ws = das_dennis(2, 99).unwrap();
    let pivot = simplex_projection(&[0.9, 0.9], &[0.0, 0.0], &[1.0, 1.0]);
    let mean_dist = |tau: f64| {
        let out = nums_transform(&ws, &pivot, tau, 2.0);
        let has_pivot = out.vectors.iter().any(|w| w.iter().zip(&pivot).all(|(a, b)| (a - b).abs() <= 1e-12));
        let d: f64 = out.vectors.iter().map(|w| w.iter().zip(&pivot).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()).sum();
        (has_pivot, d / out.vectors.len() as f64)
    };
    let (p1, d1) = mean_dist(0.1);
    let (p4, d4) = mean_dist(0.4);
    pass &= p1 && p4 && d1 < d4;
    Line {
        id: "preference-convergence",
        pass,
        detail: format!(
            "ZDT1 25k evals, {SEEDS} seeds, median E(P) (<= 0.02): {}; NUMS pivot present {}, mean pivot distance tau 0.1 = {d1:.4} < tau 0.4 = {d4:.4}",
            parts.join(", "),
            p1 && p4
        ),
    }
}

fn whole_front_mode() -> Line {
    let problem = Problem::benchmark(ProblemSpec::dtlz(Family::Dtlz2, 3).unwrap()).unwrap();
    let samples: Vec<Vec<f64>> = sample_true_front(problem.spec(), 5000).unwrap().into_iter().map(|v| v.into_inner()).collect();
    let lattice: Vec<ReferencePoint> = das_dennis(3, 12).unwrap().vectors.into_iter().map(|w| ReferencePoint::new(w.to_vec()).unwrap()).collect();
    let med = |kind, refs: &[ReferencePoint]| median(runs(kind, &problem, 92, refs, 30_000).iter().map(|r| igd(&r.final_objectives(), &samples).unwrap()).collect());
    let nsga3 = med(AlgorithmKind::Nsga3, &[]);
    let rnsga2 = med(AlgorithmKind::RNsga2, &lattice);
    Line {
        id: "whole-front-mode",
        pass: rnsga2 <= 2.0 * nsga3,
        detail: format!("DTLZ2 m=3 30k evals, {SEEDS} seeds, median IGD: R-NSGA-II (91 refs) {rnsga2:.5} vs NSGA-III {nsga3:.5}; ratio {:.3} (<= 2)", rnsga2 / nsga3),
    }
}

fn scripted(config: &SessionConfig, journal: Option<&std::path::Path>, points: &[Vec<f64>]) -> (Session, Vec<Snapshot>) {
    let mut s = Session::with_journal("acceptance", config.clone(), journal).unwrap();
    let snaps = ScriptedDm::new(points.to_vec()).drive(&mut s).unwrap();
    (s, snaps)
}

fn determinism() -> Line {
    let mut issues = Vec::new();
    let problem = zdt1();
    for kind in AlgorithmKind::ALL {
        let refs = if kind.is_preference_based() { vec![ReferencePoint::new(vec![0.3, 0.4]).unwrap()] } else { vec![] };
        let once = |_| {
            let spec = AlgorithmSpec::new(kind, 24).with_reference_points(refs.clone());
            serde_json::to_string(&run(spec, problem.clone(), 1200, 42, |_| {}).unwrap()).unwrap()
        };
        if once(0) != once(1) {
            issues.push(format!("{} RunResult differs", kind.id()));
        }
    }
    let dir = tempfile::tempdir().unwrap();
    let config = ExperimentConfig {
        schema_version: SCHEMA_VERSION,
        description: String::new(),
        problems: vec![ProblemConfig::benchmark(Family::Zdt1, None), ProblemConfig::benchmark(Family::Dtlz2, Some(3))],
        algorithms: [AlgorithmKind::RNsga2, AlgorithmKind::MoeadNums, AlgorithmKind::Nsga3]
            .into_iter()
            .map(|k| AlgorithmEntry::new(AlgorithmSpec::new(k, 24)))
            .collect(),
        scenarios: vec![
            Scenario { problem: Some("zdt1".into()), ..Scenario::single("z2", vec![0.3, 0.5]) },
            Scenario { problem: Some("dtlz2-m3".into()), ..Scenario::single("z3", vec![0.5, 0.5, 0.5]) },
        ],
        replications: 3,
        budget: 600,
        base_seed: 5,
        delta_extent: 0.2,
        front_samples: 300,
        alpha: 0.05,
        output_dir: None,
    };
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run_experiment(&config, &a, 3, false).unwrap();
    run_experiment(&config, &b, 1, false).unwrap();
    let read = |d: &std::path::Path, f: &str| fs::read(d.join(f)).unwrap();
    if read(&a, "metrics.json") != read(&b, "metrics.json") {
        issues.push("metrics.json differs".into());
    }
    for entry in fs::read_dir(a.join("runs")).unwrap() {
        let name = entry.unwrap().file_name();
        if fs::read(a.join("runs").join(&name)).unwrap() != fs::read(b.join("runs").join(&name)).unwrap() {
            issues.push(format!("run file {name:?} differs"));
        }
    }
    let mut session = SessionConfig::portfolio_preset(3, AlgorithmKind::RNsga2, 9).unwrap();
    session.budget = 92 * 13;
    let journal = dir.path().join("session.jsonl");
    let points = vec![vec![-0.02, 0.001, -0.001], vec![-0.015, 0.0005, 0.0]];
    let (s1, snaps1) = scripted(&session, Some(&journal), &points);
    let (_, snaps2) = scripted(&session, None, &points);
    if serde_json::to_string(&snaps1).unwrap() != serde_json::to_string(&snaps2).unwrap() {
        issues.push("scripted sessions differ".into());
    }
    match replay_journal(&journal) {
        Ok(r) if r.session.snapshot() == s1.snapshot() => {}
        Ok(_) => issues.push("replay final snapshot differs".into()),
        Err(e) => issues.push(format!("replay: {e}")),
    }
    Line {
        id: "determinism",
        pass: issues.is_empty(),
        detail: if issues.is_empty() {
            "9 algorithms RunResult JSON identical; metric and run files identical across jobs=1/3; scripted session and journal replay byte-identical".into()
        } else {
            issues.join("; ")
        },
    }
}

fn portfolio_moments() -> Line {
    let tol = 1e-9;
    let ids = vec!["A".to_string(), "B".to_string()];
    let hist = AssetHistory::new(ids, vec![vec![0.1, 0.0], vec![0.2, 0.1], vec![0.0, 0.2]], vec![vec![0.3, 0.5]; 3]).unwrap();
    let f = evaluate_portfolio(PortfolioModel::Mvskt, &[0.5, 0.5], &hist).unwrap();
    let rel = |got: f64, want: f64| ((got - want) / want).abs();
    let k = 2.0 * 0.05f64.powi(4) / 3.0;
    let mut worst = [rel(-f[0], 0.1), rel(f[1], 0.005 / 3.0), rel(f[3], k), rel(-f[4], 0.4)].into_iter().fold(0.0, f64::max);
    let skew_ok = f[2].abs() <= 1e-15;
    let base = AssetHistory::synthetic(6, 40, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for c in [0.5, 1.7, 3.0] {
        let scaled = AssetHistory::new(
            base.asset_ids().to_vec(),
            base.returns().iter().map(|r| r.iter().map(|v| v * c).collect()).collect(),
            base.turnovers().to_vec(),
        )
        .unwrap();
        for _ in 0..20 {
            let raw: Vec<f64> = (0..6).map(|_| rng.random::<f64>()).collect();
            let sum: f64 = raw.iter().sum();
            let rho: Vec<f64> = raw.iter().map(|v| v / sum).collect();
            let a = evaluate_portfolio(PortfolioModel::Mvskt, &rho, &base).unwrap();
            let b = evaluate_portfolio(PortfolioModel::Mvskt, &rho, &scaled).unwrap();
            for (i, p) in [1, 2, 3, 4].into_iter().enumerate() {
                worst = worst.max(rel(b[i], a[i] * c.powi(p)));
            }
        }
    }
    Line {
        id: "portfolio-moments",
        pass: worst <= tol && skew_ok,
        detail: format!("2-asset E/V/K/turnover and c, c^2, c^3, c^4 scale laws: max relative error {worst:.2e} (<= {tol:e}); S = {:e}", f[2]),
    }
}

fn steering_protocol() -> Line {
    let points = vec![vec![-0.08, 2.0, -2.0], vec![-0.75, 3.0, -0.85], vec![-0.07, 3.0, -1.15]];
    let mut details = Vec::new();
    let mut pass = true;
    for kind in [AlgorithmKind::MoeadNums, AlgorithmKind::RNsga2] {
        let config = SessionConfig::portfolio_preset(3, kind, 1).unwrap();
        let (session, snaps) = scripted(&config, None, &points);
        let period = config.period();
        let gens: Vec<usize> = session.history().iter().map(|e| e.generation).collect();
        let mut ok = session.pauses() == 3 && gens == vec![0, period, 2 * period] && config.budget == 5520;
        ok &= session.engine().evaluations() <= 5520 && session.engine().is_finished();
        let senses = session.engine().problem().spec().senses();
        let mut checked = 0;
        for s in &snaps {
            let expected = session.history().iter().rev().find(|e| e.generation <= s.generation && snaps_after(s, e)).map(|e| e.z.clone());
            let Some(z) = expected else {
                ok &= s.reference.is_none();
                continue;
            };
            ok &= s.reference.as_ref() == Some(&z);
            let internal: Vec<Vec<f64>> =
                s.objectives.iter().map(|f| f.iter().zip(&senses).map(|(v, sense)| if *sense == Sense::Max { -v } else { *v }).collect()).collect();
            let front: Vec<Vec<f64>> = fast_nondominated_sort(&internal)[0].iter().map(|&i| internal[i].clone()).collect();
            let recomputed = session.frame().r_hv(&front, &ReferencePoint::new(z).unwrap(), config.delta_extent);
            ok &= s.metrics.r_hv == Some(recomputed);
            checked += 1;
        }
        pass &= ok;
        details.push(format!(
            "{} pop {}: pauses at {:?}, {} snapshots with per-segment R-HV verified",
            kind.display_name(),
            config.algorithm.population_size,
            gens,
            checked
        ));
    }
    Line { id: "steering-protocol", pass, detail: format!("budget 5520; {}", details.join("; ")) }
}

/// Whether snapshot `s` was taken after elicitation `e` was applied. The
/// pause snapshot at the elicitation generation precedes it.
fn snaps_after(s: &Snapshot, e: &prefemo::steer::Elicitation) -> bool {
    s.generation > e.generation || (s.generation == e.generation && s.reference.as_ref() == Some(&e.z))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Line); 8] = [
        ("metric-oracles", metric_oracles),
        ("brute-force-equivalence", brute_force_equivalence),
        ("bad-reference-regressions", bad_reference_regressions),
        ("preference-convergence", preference_convergence),
        ("whole-front-mode", whole_front_mode),
        ("determinism", determinism),
        ("portfolio-moments", portfolio_moments),
        ("steering-protocol", steering_protocol),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, check) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let line = check();
        let secs = start.elapsed().as_secs_f64();
        println!("{} [{}] {} ({secs:.1}s)", if line.pass { "PASS" } else { "FAIL" }, line.id, line.detail);
        failed += usize::from(!line.pass);
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    }
}
