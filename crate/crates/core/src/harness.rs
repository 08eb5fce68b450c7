//! Batch experiments: configuration, replicated runs, the on-disk result
//! store, metric collection, summaries with significance tests, rank
//! heat-map export and the shipped scenario presets.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{mpsc, Arc};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::algorithms::{run, AlgorithmKind, AlgorithmSpec};
use crate::metrics::{
    ep_accuracy, hypervolume_report, igd, r_hv, r_igd, rank_table, wilcoxon_signed_rank, HvMethod, MetricContext, MetricId,
    MetricRecord, Orientation, DEFAULT_DELTA_EXTENT, HV_MC_SEED,
};
use crate::pareto::{fast_nondominated_sort, normalize};
use crate::problems::{load_asset_history, sample_true_front, AssetHistory, Family, Problem, ProblemError, ProblemSpec};
use crate::scalarize::{das_dennis, ReferencePoint};

pub const SCHEMA_VERSION: u32 = 1;
/// Margin added beyond the nadir point to form the worst corner.
pub const WORST_MARGIN: f64 = 0.1;
pub const IQR_CONVENTION: &str = "linear interpolation at rank (n+1)p, clamped to the sample range";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
    Validation(Vec<String>),
    #[error("incomplete results:\n  - {}", .0.join("\n  - "))]
    Incomplete(Vec<String>),
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
    #[error("{path}: {source}")]
    Json { path: String, source: serde_json::Error },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Problem(#[from] ProblemError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io { path: path.display().to_string(), source }
}

fn json_err(path: &Path) -> impl FnOnce(serde_json::Error) -> HarnessError + '_ {
    move |source| HarnessError::Json { path: path.display().to_string(), source }
}

fn default_schema() -> u32 {
    SCHEMA_VERSION
}

/// Where a portfolio problem gets its asset history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Synthetic { assets: usize, periods: usize, seed: u64 },
    Csv { returns: PathBuf, turnovers: PathBuf },
}

impl DataSource {
    pub fn load(&self) -> Result<AssetHistory, ProblemError> {
        match self {
            DataSource::Synthetic { assets, periods, seed } => AssetHistory::synthetic(*assets, *periods, *seed),
            DataSource::Csv { returns, turnovers } => load_asset_history(returns, turnovers),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemConfig {
    pub family: Family,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<DataSource>,
}

impl ProblemConfig {
    pub fn benchmark(family: Family, m: Option<usize>) -> Self {
        Self { family, m, n: None, data: None }
    }

    pub fn build(&self) -> Result<Problem, ProblemError> {
        if self.family.is_portfolio() {
            let data = self.data.as_ref().ok_or(ProblemError::MissingHistory { family: self.family })?;
            Problem::portfolio(self.family, Arc::new(data.load()?))
        } else {
            Problem::benchmark(ProblemSpec::new(self.family, self.m, self.n)?)
        }
    }

    pub fn label(&self) -> String {
        match ProblemSpec::new(self.family, self.m, self.n) {
            Ok(spec) => spec.label(),
            Err(_) => self.family.to_string(),
        }
    }

    /// Objective count without loading data.
    pub fn objectives(&self) -> Result<usize, ProblemError> {
        Ok(ProblemSpec::new(self.family, self.m, self.n)?.m())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    Balanced,
    Extreme,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    OnPf,
    Infeasible,
    Feasible,
}

/// One reference-point setting. `points` lists explicit reference points;
/// `lattice` adds a Das-Dennis set with that many divisions (whole-front mode).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub placement: Option<Placement>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region: Option<Region>,
    /// Restricts the scenario to the problem with this label.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub problem: Option<String>,
    #[serde(default)]
    pub points: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lattice: Option<usize>,
}

impl Scenario {
    pub fn single(id: &str, z: Vec<f64>) -> Self {
        Self { id: id.into(), placement: None, region: None, problem: None, points: vec![z], lattice: None }
    }

    pub fn applies_to(&self, problem_label: &str) -> bool {
        self.problem.as_deref().is_none_or(|p| p == problem_label)
    }

    pub fn reference_points(&self, m: usize) -> Result<Vec<ReferencePoint>, String> {
        let mut refs = Vec::new();
        for z in &self.points {
            refs.push(ReferencePoint::new(z.clone()).map_err(|e| format!("scenario `{}`: {e}", self.id))?);
        }
        if let Some(h) = self.lattice {
            let ws = das_dennis(m, h).map_err(|e| format!("scenario `{}`: {e}", self.id))?;
            refs.extend(ws.vectors.into_iter().map(|w| ReferencePoint::new(w).expect("lattice points are finite")));
        }
        Ok(refs)
    }

    fn is_single(&self) -> bool {
        self.points.len() == 1 && self.lattice.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmEntry {
    /// Defaults to the kind's id.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(flatten)]
    pub spec: AlgorithmSpec,
}

impl AlgorithmEntry {
    pub fn new(spec: AlgorithmSpec) -> Self {
        Self { label: None, spec }
    }

    pub fn label(&self) -> String {
        self.label.clone().unwrap_or_else(|| self.spec.kind.id().to_string())
    }
}

fn default_replications() -> usize {
    31
}

fn default_delta() -> f64 {
    DEFAULT_DELTA_EXTENT
}

fn default_front_samples() -> usize {
    2000
}

fn default_alpha() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default = "default_schema")]
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    pub problems: Vec<ProblemConfig>,
    pub algorithms: Vec<AlgorithmEntry>,
    pub scenarios: Vec<Scenario>,
    #[serde(default = "default_replications")]
    pub replications: usize,
    pub budget: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default = "default_delta")]
    pub delta_extent: f64,
    #[serde(default = "default_front_samples")]
    pub front_samples: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

/// Identifies one run in a store.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RunKey {
    pub problem: String,
    pub algorithm: String,
    pub scenario: String,
    pub seed: u64,
}

impl RunKey {
    pub fn file_name(&self) -> String {
        let clean = |s: &str| s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect::<String>();
        format!("{}__{}__{}__s{}.json", clean(&self.problem), clean(&self.algorithm), clean(&self.scenario), self.seed)
    }
}

/// A unit of work: key plus everything needed to execute it.
#[derive(Debug, Clone)]
pub struct RunPlan {
    pub key: RunKey,
    pub problem: usize,
    pub algorithm: AlgorithmSpec,
    pub scenario: usize,
}

impl ExperimentConfig {
    /// Every problem of the config loaded once, in order.
    fn load_problems(&self) -> Result<Vec<Problem>, ProblemError> {
        self.problems.iter().map(ProblemConfig::build).collect()
    }

    /// Itemized validation; returns every problem found.
    pub fn validate(&self) -> Result<(), HarnessError> {
        let mut errors = Vec::new();
        if self.schema_version != SCHEMA_VERSION {
            errors.push(format!("schema_version {} is not supported (expected {SCHEMA_VERSION})", self.schema_version));
        }
        if self.replications < 1 {
            errors.push("replications must be at least 1".into());
        }
        if self.problems.is_empty() {
            errors.push("no problems given".into());
        }
        if self.algorithms.is_empty() {
            errors.push("no algorithms given".into());
        }
        if self.scenarios.is_empty() {
            errors.push("no scenarios given".into());
        }
        if !(self.delta_extent > 0.0) {
            errors.push("delta_extent must be > 0".into());
        }
        if self.front_samples < 2 {
            errors.push("front_samples must be at least 2".into());
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            errors.push("alpha must lie in (0, 1)".into());
        }
        let mut seen = BTreeSet::new();
        for a in &self.algorithms {
            if !seen.insert(a.label()) {
                errors.push(format!("duplicate algorithm label `{}`", a.label()));
            }
            if self.budget < a.spec.population_size {
                errors.push(format!("budget {} is smaller than the population of `{}` ({})", self.budget, a.label(), a.spec.population_size));
            }
            if !a.spec.reference_points.is_empty() {
                errors.push(format!("algorithm `{}`: reference points come from scenarios, not algorithm entries", a.label()));
            }
        }
        let mut seen = BTreeSet::new();
        for s in &self.scenarios {
            if !seen.insert(s.id.clone()) {
                errors.push(format!("duplicate scenario id `{}`", s.id));
            }
            if s.points.is_empty() && s.lattice.is_none() {
                errors.push(format!("scenario `{}` has no reference points", s.id));
            }
        }
        let labels: Vec<String> = self.problems.iter().map(ProblemConfig::label).collect();
        let mut seen = BTreeSet::new();
        for (p, label) in self.problems.iter().zip(&labels) {
            if !seen.insert(label.clone()) {
                errors.push(format!("duplicate problem `{label}`"));
            }
            if p.family.is_portfolio() && p.data.is_none() {
                errors.push(format!("problem `{label}` needs a data source"));
            }
            let m = match p.objectives() {
                Ok(m) => m,
                Err(e) => {
                    errors.push(format!("problem `{label}`: {e}"));
                    continue;
                }
            };
            for s in self.scenarios.iter().filter(|s| s.applies_to(label)) {
                match s.reference_points(m) {
                    Err(e) => errors.push(e),
                    Ok(refs) => {
                        if let Some(r) = refs.iter().find(|r| r.dim() != m) {
                            errors.push(format!("scenario `{}` has a {}-dimensional point but `{label}` has {m} objectives", s.id, r.dim()));
                            continue;
                        }
                        for a in &self.algorithms {
                            let spec = with_scenario(&a.spec, &refs);
                            if let Err(e) = spec.validate(m) {
                                errors.push(format!("`{}` on `{label}` / `{}`: {e}", a.label(), s.id));
                            }
                        }
                    }
                }
            }
        }
        for s in &self.scenarios {
            if let Some(p) = &s.problem {
                if !labels.contains(p) {
                    errors.push(format!("scenario `{}` names unknown problem `{p}`", s.id));
                }
            }
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(HarnessError::Validation(errors))
        }
    }

    /// All runs in a stable order.
    pub fn plan(&self) -> Result<Vec<RunPlan>, HarnessError> {
        self.validate()?;
        let mut plans = Vec::new();
        for (pi, p) in self.problems.iter().enumerate() {
            let label = p.label();
            let m = p.objectives()?;
            for (si, s) in self.scenarios.iter().enumerate().filter(|(_, s)| s.applies_to(&label)) {
                let refs = s.reference_points(m).map_err(|e| HarnessError::Validation(vec![e]))?;
                for a in &self.algorithms {
                    for k in 0..self.replications {
                        plans.push(RunPlan {
                            key: RunKey { problem: label.clone(), algorithm: a.label(), scenario: s.id.clone(), seed: self.base_seed + k as u64 },
                            problem: pi,
                            algorithm: with_scenario(&a.spec, &refs),
                            scenario: si,
                        });
                    }
                }
            }
        }
        Ok(plans)
    }
}

/// Preference kinds receive the scenario's points; baselines run without them.
fn with_scenario(spec: &AlgorithmSpec, refs: &[ReferencePoint]) -> AlgorithmSpec {
    let mut spec = spec.clone();
    spec.reference_points = if spec.kind.is_preference_based() { refs.to_vec() } else { Vec::new() };
    spec
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    Failed { reason: String },
}

/// What the store keeps for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub schema_version: u32,
    pub key: RunKey,
    pub algorithm: AlgorithmSpec,
    pub budget: usize,
    #[serde(flatten)]
    pub status: RunStatus,
    pub evaluations: usize,
    pub generations: usize,
    /// First front of the final population (internal orientation).
    pub final_front: Vec<Vec<f64>>,
}

/// Directory-backed, append-only store keyed by [`RunKey`].
#[derive(Debug, Clone)]
pub struct ResultStore {
    dir: PathBuf,
    config: ExperimentConfig,
}

const CONFIG_FILE: &str = "config.json";
const METRICS_FILE: &str = "metrics.json";
const TIMINGS_FILE: &str = "timings.jsonl";
const RUNS_DIR: &str = "runs";

fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    let tmp = path.with_extension("json.tmp");
    let mut text = serde_json::to_string_pretty(value).map_err(json_err(path))?;
    text.push('\n');
    fs::write(&tmp, text).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, HarnessError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(json_err(path))
}

impl ResultStore {
    /// Creates (or reopens) a store for `config` in `dir`, writing the config into it.
    pub fn create(dir: &Path, config: &ExperimentConfig) -> Result<Self, HarnessError> {
        fs::create_dir_all(dir.join(RUNS_DIR)).map_err(io_err(dir))?;
        let mut stored = config.clone();
        stored.output_dir = None;
        write_json_atomic(&dir.join(CONFIG_FILE), &stored)?;
        Ok(Self { dir: dir.to_path_buf(), config: stored })
    }

    pub fn open(dir: &Path) -> Result<Self, HarnessError> {
        let config = read_json(&dir.join(CONFIG_FILE))?;
        Ok(Self { dir: dir.to_path_buf(), config })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    fn run_path(&self, key: &RunKey) -> PathBuf {
        self.dir.join(RUNS_DIR).join(key.file_name())
    }

    pub fn get(&self, key: &RunKey) -> Result<Option<RunRecord>, HarnessError> {
        let path = self.run_path(key);
        if path.exists() {
            read_json(&path).map(Some)
        } else {
            Ok(None)
        }
    }

    pub fn is_complete(&self, key: &RunKey) -> bool {
        matches!(self.get(key), Ok(Some(RunRecord { status: RunStatus::Ok, .. })))
    }

    pub fn put(&self, record: &RunRecord) -> Result<(), HarnessError> {
        write_json_atomic(&self.run_path(&record.key), record)
    }

    /// All run records, sorted by key.
    pub fn records(&self) -> Result<Vec<RunRecord>, HarnessError> {
        let dir = self.dir.join(RUNS_DIR);
        let mut out = Vec::new();
        if dir.exists() {
            let mut paths: Vec<PathBuf> = fs::read_dir(&dir)
                .map_err(io_err(&dir))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "json"))
                .collect();
            paths.sort();
            for p in paths {
                out.push(read_json::<RunRecord>(&p)?);
            }
        }
        out.sort_by(|a, b| a.key.cmp(&b.key));
        Ok(out)
    }

    pub fn metric_records(&self) -> Result<Vec<MetricRecord>, HarnessError> {
        let file: MetricsFile = read_json(&self.dir.join(METRICS_FILE))?;
        Ok(file.records)
    }

    fn append_timing(&self, key: &RunKey, millis: u128) -> Result<(), HarnessError> {
        let path = self.dir.join(TIMINGS_FILE);
        let mut f = fs::OpenOptions::new().create(true).append(true).open(&path).map_err(io_err(&path))?;
        let line = serde_json::json!({ "key": key, "wall_clock_ms": millis });
        writeln!(f, "{line}").map_err(io_err(&path))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct MetricsFile {
    schema_version: u32,
    delta_extent: f64,
    hv: Vec<HvNote>,
    records: Vec<MetricRecord>,
}

/// How HV values for a problem were computed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct HvNote {
    problem: String,
    #[serde(flatten)]
    method: HvMethod,
    ideal: Vec<f64>,
    nadir: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunReport {
    pub executed: usize,
    pub skipped: usize,
    pub failed: usize,
}

fn execute(plan: &RunPlan, problem: &Problem, budget: usize) -> RunRecord {
    let result = run(plan.algorithm.clone(), problem.clone(), budget, plan.key.seed, |_| {});
    match result {
        Ok(r) => RunRecord {
            schema_version: SCHEMA_VERSION,
            key: plan.key.clone(),
            algorithm: plan.algorithm.clone(),
            budget,
            status: RunStatus::Ok,
            evaluations: r.evaluations,
            generations: r.records.last().map_or(0, |g| g.generation),
            final_front: r.final_objectives(),
        },
        Err(e) => RunRecord {
            schema_version: SCHEMA_VERSION,
            key: plan.key.clone(),
            algorithm: plan.algorithm.clone(),
            budget,
            status: RunStatus::Failed { reason: e.to_string() },
            evaluations: 0,
            generations: 0,
            final_front: Vec::new(),
        },
    }
}

/// Executes every planned run (skipping completed keys when `resume` is set)
/// on `jobs` worker threads, then recomputes the metric file.
pub fn run_experiment(config: &ExperimentConfig, dir: &Path, jobs: usize, resume: bool) -> Result<(ResultStore, RunReport), HarnessError> {
    let plans = config.plan()?;
    let store = ResultStore::create(dir, config)?;
    let problems = config.load_problems()?;
    let mut report = RunReport::default();
    let todo: Vec<&RunPlan> = plans
        .iter()
        .filter(|p| {
            let skip = resume && store.is_complete(&p.key);
            if skip {
                report.skipped += 1;
            }
            !skip
        })
        .collect();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build().expect("thread pool");
    let (tx, rx) = mpsc::channel::<(RunRecord, u128)>();
    let writer_result = std::thread::scope(|scope| {
        let writer = scope.spawn(|| -> Result<RunReport, HarnessError> {
            let mut counts = RunReport::default();
            for (record, millis) in rx {
                if matches!(record.status, RunStatus::Failed { .. }) {
                    counts.failed += 1;
                }
                counts.executed += 1;
                store.put(&record)?;
                store.append_timing(&record.key, millis)?;
            }
            Ok(counts)
        });
        pool.install(|| {
            todo.par_iter().for_each_with(tx, |tx, plan| {
                let start = Instant::now();
                let record = execute(plan, &problems[plan.problem], config.budget);
                let _ = tx.send((record, start.elapsed().as_millis()));
            });
        });
        writer.join().expect("writer thread")
    })?;
    report.executed = writer_result.executed;
    report.failed = writer_result.failed;
    compute_metrics(&store, &problems)?;
    Ok((store, report))
}

/// Per-problem normalization frame: ideal and nadir of the analytic front
/// when one exists, else of the union of all stored final fronts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceFrame {
    pub ideal: Vec<f64>,
    pub nadir: Vec<f64>,
}

impl InstanceFrame {
    pub fn from_points<V: AsRef<[f64]>>(points: &[V]) -> Option<Self> {
        if points.is_empty() {
            return None;
        }
        let front = &fast_nondominated_sort(points)[0];
        let m = points[0].as_ref().len();
        let mut ideal = vec![f64::INFINITY; m];
        let mut nadir = vec![f64::NEG_INFINITY; m];
        for &i in front {
            for (k, &v) in points[i].as_ref().iter().enumerate() {
                ideal[k] = ideal[k].min(v);
                nadir[k] = nadir[k].max(v);
            }
        }
        Some(Self { ideal, nadir })
    }

    pub fn normalize(&self, f: &[f64]) -> Vec<f64> {
        let nadir: Vec<f64> = self.ideal.iter().zip(&self.nadir).map(|(lo, hi)| if hi > lo { *hi } else { lo + 1.0 }).collect();
        normalize(f, &self.ideal, &nadir)
    }

    /// The worst corner in normalized space.
    pub fn worst(&self) -> Vec<f64> {
        vec![1.0 + WORST_MARGIN; self.ideal.len()]
    }

    pub fn normalize_reference(&self, zr: &ReferencePoint) -> ReferencePoint {
        ReferencePoint { z: self.normalize(&zr.z), weights: zr.weights.clone() }
    }

    /// R-HV of `points` (raw) against `zr` (raw) in this frame.
    pub fn r_hv(&self, points: &[Vec<f64>], zr: &ReferencePoint, delta_extent: f64) -> f64 {
        if points.is_empty() {
            return 0.0;
        }
        let normed: Vec<Vec<f64>> = points.iter().map(|p| self.normalize(p)).collect();
        r_hv(&normed, &self.normalize_reference(zr), delta_extent, &self.worst()).expect("dimensions checked by the caller")
    }
}

fn compute_metrics(store: &ResultStore, problems: &[Problem]) -> Result<(), HarnessError> {
    let config = store.config();
    let records = store.records()?;
    let mut out = Vec::new();
    let mut notes = Vec::new();
    for (pc, problem) in config.problems.iter().zip(problems) {
        let label = pc.label();
        let spec = problem.spec();
        let m = spec.m();
        let samples: Option<Vec<Vec<f64>>> = match sample_true_front(spec, config.front_samples) {
            Ok(s) => Some(s.into_iter().map(|v| v.into_inner()).collect()),
            Err(ProblemError::NoAnalyticFront { .. }) => None,
            Err(e) => return Err(e.into()),
        };
        let mine: Vec<&RunRecord> = records.iter().filter(|r| r.key.problem == label && r.status == RunStatus::Ok).collect();
        let frame = match &samples {
            Some(s) => InstanceFrame::from_points(s),
            None => {
                let union: Vec<Vec<f64>> = mine.iter().flat_map(|r| r.final_front.iter().cloned()).collect();
                InstanceFrame::from_points(&union)
            }
        };
        let Some(frame) = frame else { continue };
        let worst = frame.worst();
        let mut hv_method = HvMethod::Exact;
        let samples_norm: Option<Vec<Vec<f64>>> = samples.as_ref().map(|s| s.iter().map(|p| frame.normalize(p)).collect());
        for r in mine {
            let Some(scenario) = config.scenarios.iter().find(|s| s.id == r.key.scenario) else { continue };
            let refs = scenario.reference_points(m).map_err(|e| HarnessError::Validation(vec![e]))?;
            let context = MetricContext { problem: label.clone(), algorithm: r.key.algorithm.clone(), reference: scenario.id.clone(), seed: r.key.seed };
            let mut push = |metric, value| out.push(MetricRecord { metric, value, context: context.clone() });
            let front = &r.final_front;
            if front.is_empty() {
                continue;
            }
            let normed: Vec<Vec<f64>> = front.iter().map(|p| frame.normalize(p)).collect();
            if scenario.is_single() {
                let zr = &refs[0];
                push(MetricId::Ep, ep_accuracy(front, zr).expect("non-empty front"));
                let zn = frame.normalize_reference(zr);
                if let Some(s) = &samples_norm {
                    push(MetricId::RIgd, r_igd(&normed, &zn, config.delta_extent, &worst, s).expect("consistent dimensions"));
                }
                push(MetricId::RHv, r_hv(&normed, &zn, config.delta_extent, &worst).expect("consistent dimensions"));
            }
            if let Some(s) = &samples {
                push(MetricId::Igd, igd(front, s).expect("non-empty sets"));
            }
            let report = hypervolume_report(&normed, &worst, HV_MC_SEED);
            hv_method = report.method;
            push(MetricId::Hv, report.value);
        }
        notes.push(HvNote { problem: label, method: hv_method, ideal: frame.ideal.clone(), nadir: frame.nadir.clone() });
    }
    out.sort_by(|a, b| {
        (&a.context.problem, &a.context.reference, &a.context.algorithm, a.context.seed, a.metric).cmp(&(
            &b.context.problem,
            &b.context.reference,
            &b.context.algorithm,
            b.context.seed,
            b.metric,
        ))
    });
    let file = MetricsFile { schema_version: SCHEMA_VERSION, delta_extent: config.delta_extent, hv: notes, records: out };
    write_json_atomic(&store.dir.join(METRICS_FILE), &file)
}

/// Quantile by linear interpolation at rank `(n+1)p`, clamped to the sample.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let h = ((n as f64 + 1.0) * p).clamp(1.0, n as f64);
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    if lo >= n {
        sorted[n - 1]
    } else if frac == 0.0 {
        sorted[lo - 1]
    } else {
        sorted[lo - 1] + frac * (sorted[lo] - sorted[lo - 1])
    }
}

/// Median of a slice sorted ascending: the middle element or the mean of the two.
pub fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmStats {
    pub algorithm: String,
    pub n: usize,
    pub failed: usize,
    #[serde(with = "crate::metrics::nullable_f64")]
    pub median: f64,
    #[serde(with = "crate::metrics::nullable_f64")]
    pub q1: f64,
    #[serde(with = "crate::metrics::nullable_f64")]
    pub q3: f64,
    #[serde(with = "crate::metrics::nullable_f64")]
    pub iqr: f64,
    pub best: bool,
    /// Wilcoxon p-value against the best algorithm (paired by seed).
    pub p_value: Option<f64>,
    /// Significantly worse than the best at the configured alpha.
    pub significant: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub problem: String,
    pub scenario: String,
    pub algorithms: Vec<AlgorithmStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub schema_version: u32,
    pub metric: MetricId,
    pub orientation: Orientation,
    pub iqr_convention: String,
    pub alpha: f64,
    pub cells: Vec<CellSummary>,
    /// `problem / scenario / algorithm` triples without any value.
    pub incomplete: Vec<String>,
}

/// Values of one metric grouped by (problem, scenario) then algorithm, keyed by seed.
type Grouped = BTreeMap<(String, String), BTreeMap<String, BTreeMap<u64, f64>>>;

fn grouped(store: &ResultStore, metric: MetricId) -> Result<Grouped, HarnessError> {
    let mut g: Grouped = BTreeMap::new();
    for r in store.metric_records()?.into_iter().filter(|r| r.metric == metric) {
        g.entry((r.context.problem, r.context.reference))
            .or_default()
            .entry(r.context.algorithm)
            .or_default()
            .insert(r.context.seed, r.value);
    }
    Ok(g)
}

/// The (problem, scenario) cells the config defines.
fn cells(config: &ExperimentConfig) -> Vec<(String, String)> {
    let mut out = Vec::new();
    for p in &config.problems {
        let label = p.label();
        for s in config.scenarios.iter().filter(|s| s.applies_to(&label)) {
            out.push((label.clone(), s.id.clone()));
        }
    }
    out
}

fn better(orientation: Orientation, a: f64, b: f64) -> bool {
    match orientation {
        Orientation::Minimize => a < b,
        Orientation::Maximize => a > b,
    }
}

pub fn summarize(store: &ResultStore, metric: MetricId) -> Result<Summary, HarnessError> {
    let config = store.config();
    let orientation = metric.orientation();
    let values = grouped(store, metric)?;
    let records = store.records()?;
    let mut out = Vec::new();
    let mut incomplete = Vec::new();
    for (problem, scenario) in cells(config) {
        let cell = values.get(&(problem.clone(), scenario.clone()));
        let mut stats = Vec::new();
        for a in &config.algorithms {
            let label = a.label();
            let failed = records
                .iter()
                .filter(|r| r.key.problem == problem && r.key.scenario == scenario && r.key.algorithm == label)
                .filter(|r| r.status != RunStatus::Ok)
                .count();
            let by_seed = cell.and_then(|c| c.get(&label));
            let Some(by_seed) = by_seed.filter(|v| !v.is_empty()) else {
                incomplete.push(format!("{problem} / {scenario} / {label}"));
                continue;
            };
            let mut v: Vec<f64> = by_seed.values().copied().collect();
            v.sort_by(f64::total_cmp);
            let (q1, q3) = (quantile(&v, 0.25), quantile(&v, 0.75));
            stats.push(AlgorithmStats {
                algorithm: label,
                n: v.len(),
                failed,
                median: median(&v),
                q1,
                q3,
                iqr: q3 - q1,
                best: false,
                p_value: None,
                significant: None,
            });
        }
        if stats.is_empty() {
            continue;
        }
        let best = (0..stats.len())
            .reduce(|b, i| if better(orientation, stats[i].median, stats[b].median) { i } else { b })
            .expect("non-empty");
        stats[best].best = true;
        let cell = cell.expect("stats imply values");
        let best_values = &cell[&stats[best].algorithm];
        for (i, s) in stats.iter_mut().enumerate() {
            if i == best {
                continue;
            }
            let other = &cell[&s.algorithm];
            let seeds: Vec<u64> = best_values.keys().filter(|k| other.contains_key(k)).copied().collect();
            let a: Vec<f64> = seeds.iter().map(|k| other[k]).collect();
            let b: Vec<f64> = seeds.iter().map(|k| best_values[k]).collect();
            if a.iter().chain(&b).all(|v| v.is_finite()) {
                if let Ok(t) = wilcoxon_signed_rank(&a, &b, config.alpha) {
                    s.p_value = Some(t.p_value);
                    s.significant = Some(t.significant);
                }
            }
        }
        out.push(CellSummary { problem, scenario, algorithms: stats });
    }
    Ok(Summary {
        schema_version: SCHEMA_VERSION,
        metric,
        orientation,
        iqr_convention: IQR_CONVENTION.into(),
        alpha: config.alpha,
        cells: out,
        incomplete,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub schema_version: u32,
    pub metric: MetricId,
    pub algorithms: Vec<String>,
    /// `problem / scenario` labels.
    pub instances: Vec<String>,
    /// `ranks[instance][algorithm]`, 1 = best median.
    pub ranks: Vec<Vec<usize>>,
    /// `frequency[algorithm][r - 1]` = number of instances where the algorithm ranked `r`.
    pub frequency: Vec<Vec<usize>>,
}

impl Heatmap {
    pub fn from_medians(metric: MetricId, algorithms: Vec<String>, instances: Vec<String>, medians: &[Vec<f64>]) -> Self {
        // rank_table expects algorithms as rows.
        let by_algorithm: Vec<Vec<f64>> = (0..algorithms.len()).map(|a| medians.iter().map(|row| row[a]).collect()).collect();
        let table = rank_table(&by_algorithm, metric.orientation());
        let ranks: Vec<Vec<usize>> = (0..instances.len()).map(|i| (0..algorithms.len()).map(|a| table[a][i]).collect()).collect();
        let mut frequency = vec![vec![0; algorithms.len()]; algorithms.len()];
        for row in &ranks {
            for (a, &r) in row.iter().enumerate() {
                frequency[a][r - 1] += 1;
            }
        }
        Self { schema_version: SCHEMA_VERSION, metric, algorithms, instances, ranks, frequency }
    }

    pub fn ranks_csv(&self) -> String {
        let mut s = format!("instance,{}\n", self.algorithms.join(","));
        for (name, row) in self.instances.iter().zip(&self.ranks) {
            let cells: Vec<String> = row.iter().map(usize::to_string).collect();
            s.push_str(&format!("{name},{}\n", cells.join(",")));
        }
        s
    }

    pub fn frequency_csv(&self) -> String {
        let header: Vec<String> = (1..=self.algorithms.len()).map(|r| format!("rank_{r}")).collect();
        let mut s = format!("algorithm,{}\n", header.join(","));
        for (name, row) in self.algorithms.iter().zip(&self.frequency) {
            let cells: Vec<String> = row.iter().map(usize::to_string).collect();
            s.push_str(&format!("{name},{}\n", cells.join(",")));
        }
        s
    }
}

/// Builds the rank heat map for `metric` and writes `<out>` (JSON) plus
/// `<stem>.ranks.csv` and `<stem>.freq.csv` next to it.
pub fn export_heatmap(store: &ResultStore, metric: MetricId, out: &Path) -> Result<Heatmap, HarnessError> {
    let summary = summarize(store, metric)?;
    if !summary.incomplete.is_empty() {
        return Err(HarnessError::Incomplete(summary.incomplete));
    }
    let algorithms: Vec<String> = store.config().algorithms.iter().map(AlgorithmEntry::label).collect();
    let mut instances = Vec::new();
    let mut medians = Vec::new();
    for cell in &summary.cells {
        instances.push(format!("{}/{}", cell.problem, cell.scenario));
        medians.push(
            algorithms.iter().map(|a| cell.algorithms.iter().find(|s| &s.algorithm == a).expect("complete cell").median).collect(),
        );
    }
    let map = Heatmap::from_medians(metric, algorithms, instances, &medians);
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    write_json_atomic(out, &map)?;
    let stem = out.with_extension("");
    let ranks = PathBuf::from(format!("{}.ranks.csv", stem.display()));
    let freq = PathBuf::from(format!("{}.freq.csv", stem.display()));
    fs::write(&ranks, map.ranks_csv()).map_err(io_err(&ranks))?;
    fs::write(&freq, map.frequency_csv()).map_err(io_err(&freq))?;
    Ok(map)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preset {
    pub name: String,
    pub description: String,
    pub config: ExperimentConfig,
}

const PRESET_SOURCES: [(&str, &str); 7] = [
    ("zdt1-bad-refs", include_str!("../presets/zdt1-bad-refs.json")),
    ("dtlz2-dominating", include_str!("../presets/dtlz2-dominating.json")),
    ("whole-pf", include_str!("../presets/whole-pf.json")),
    ("massive", include_str!("../presets/massive.json")),
    ("benchmark", include_str!("../presets/benchmark.json")),
    ("portfolio3", include_str!("../presets/portfolio3.json")),
    ("portfolio5", include_str!("../presets/portfolio5.json")),
];

/// The shipped presets, in a fixed order.
pub fn scenario_presets() -> Vec<Preset> {
    PRESET_SOURCES
        .iter()
        .map(|(name, text)| {
            let config: ExperimentConfig = serde_json::from_str(text).unwrap_or_else(|e| panic!("preset {name}: {e}"));
            Preset { name: (*name).into(), description: config.description.clone(), config }
        })
        .collect()
}

pub fn preset(name: &str) -> Result<Preset, HarnessError> {
    scenario_presets().into_iter().find(|p| p.name == name).ok_or_else(|| HarnessError::UnknownPreset(name.into()))
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig, HarnessError> {
    read_json(path)
}

/// Convenience for callers that want the kinds used by a config.
pub fn kinds(config: &ExperimentConfig) -> Vec<AlgorithmKind> {
    config.algorithms.iter().map(|a| a.spec.kind).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantile_convention() {
        let v = [1.0, 2.0, 3.0];
        assert_eq!(median(&v), 2.0);
        assert_eq!(quantile(&v, 0.75) - quantile(&v, 0.25), 2.0);
        let w = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(median(&w), 2.5);
        assert_eq!(quantile(&w, 0.25), 1.25);
        assert_eq!(quantile(&w, 0.75), 3.75);
        assert_eq!(quantile(&[5.0], 0.25), 5.0);
    }

    #[test]
    fn heatmap_from_known_values() {
        let medians = vec![vec![0.1, 0.2, 0.3], vec![0.5, 0.4, 0.4]];
        let map = Heatmap::from_medians(MetricId::Igd, vec!["a".into(), "b".into(), "c".into()], vec!["i1".into(), "i2".into()], &medians);
        assert_eq!(map.ranks, vec![vec![1, 2, 3], vec![3, 1, 1]]);
        for row in &map.frequency {
            assert_eq!(row.iter().sum::<usize>(), 2);
        }
        assert_eq!(map.frequency[0], vec![1, 0, 1]);
        assert!(map.ranks_csv().starts_with("instance,a,b,c\ni1,1,2,3\n"));
    }

    #[test]
    fn presets_parse_and_validate() {
        let presets = scenario_presets();
        assert_eq!(presets.len(), PRESET_SOURCES.len());
        for p in &presets {
            p.config.validate().unwrap_or_else(|e| panic!("{}: {e}", p.name));
        }
        let bad = preset("zdt1-bad-refs").unwrap();
        let points: Vec<Vec<f64>> = bad.config.scenarios.iter().flat_map(|s| s.points.clone()).collect();
        assert_eq!(points, vec![vec![0.1, 0.1], vec![0.9, 0.9]]);
        let dom = preset("dtlz2-dominating").unwrap();
        assert_eq!(dom.config.scenarios[0].points, vec![vec![-0.2, -0.2, -0.2]]);
        let massive = preset("massive").unwrap();
        let ms: BTreeSet<usize> = massive.config.problems.iter().filter_map(|p| p.m).collect();
        assert_eq!(ms.into_iter().collect::<Vec<_>>(), vec![3, 5, 8, 10, 15, 25, 50, 100]);
        assert!(preset("nope").is_err());
    }

    #[test]
    fn validation_is_itemized() {
        let mut config = preset("zdt1-bad-refs").unwrap().config;
        config.replications = 0;
        config.scenarios.push(Scenario::single("three", vec![0.1, 0.2, 0.3]));
        config.budget = 10;
        match config.validate() {
            Err(HarnessError::Validation(items)) => {
                assert!(items.iter().any(|e| e.contains("replications")));
                assert!(items.iter().any(|e| e.contains("`three`")));
                assert!(items.iter().any(|e| e.contains("budget")));
            }
            other => panic!("expected validation errors, got {other:?}"),
        }
    }
}
