//! Interactive steering: a session pauses at fixed generations so a decision
//! maker can revise the reference point while the search runs.
//!
//! [`Session`] is the single-threaded state machine. [`SessionManager`] runs
//! each session on its own worker thread behind a bounded command queue and
//! keeps the snapshot log readers subscribe to.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, SyncSender, TrySendError};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::algorithms::{AlgorithmError, AlgorithmKind, AlgorithmSpec, Engine};
use crate::harness::{DataSource, InstanceFrame, ProblemConfig};
use crate::metrics::{ep_accuracy, DEFAULT_DELTA_EXTENT};
use crate::problems::{sample_true_front, Family, Problem, ProblemError, Sense};
use crate::scalarize::{augmented_asf, ReferencePoint};

/// Queue depth of each session worker.
pub const QUEUE_DEPTH: usize = 16;

#[derive(Debug, Error)]
pub enum SteerError {
    #[error("unknown session `{0}`")]
    UnknownSession(String),
    #[error("{action} requires phase {expected}, current phase {actual}")]
    Phase { action: &'static str, expected: Phase, actual: Phase },
    #[error("reference point has {got} components, expected {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("reference point components must be finite")]
    NonFinite,
    #[error("session `{0}` is busy, try again")]
    Busy(String),
    #[error("session `{0}` worker has stopped")]
    Closed(String),
    #[error("{0}")]
    Config(String),
    #[error("replay diverged: {0}")]
    Replay(String),
    #[error(transparent)]
    Algorithm(#[from] AlgorithmError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("journal: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Running,
    AwaitingPreference,
    Finished,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Running => "Running",
            Phase::AwaitingPreference => "AwaitingPreference",
            Phase::Finished => "Finished",
        })
    }
}

fn default_representatives() -> usize {
    5
}

fn default_delta() -> f64 {
    DEFAULT_DELTA_EXTENT
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub problem: ProblemConfig,
    pub algorithm: AlgorithmSpec,
    pub budget: usize,
    /// Generations between pauses; defaults to a third of the run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interaction_period: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_representatives")]
    pub representatives: usize,
    #[serde(default = "default_delta")]
    pub delta_extent: f64,
}

impl SessionConfig {
    /// The portfolio steering setup: 3 objectives (MVS) or 5 (MVSKT) on the
    /// seeded synthetic market, with the matching population and budget.
    pub fn portfolio_preset(m: usize, kind: AlgorithmKind, seed: u64) -> Result<Self, SteerError> {
        let (family, population, budget) = match (m, kind.is_decomposition()) {
            (3, true) => (Family::PortfolioMvs, 91, 5520),
            (3, false) => (Family::PortfolioMvs, 92, 5520),
            (5, true) => (Family::PortfolioMvskt, 210, 12720),
            (5, false) => (Family::PortfolioMvskt, 212, 12720),
            _ => return Err(SteerError::Config(format!("no portfolio preset with {m} objectives"))),
        };
        let mut algorithm = AlgorithmSpec::new(kind, population);
        algorithm.variation.eta_c = 30.0;
        Ok(Self {
            problem: ProblemConfig {
                family,
                m: None,
                n: None,
                data: Some(DataSource::Synthetic { assets: 58, periods: 120, seed: 7 }),
            },
            algorithm,
            budget,
            interaction_period: None,
            seed,
            representatives: default_representatives(),
            delta_extent: DEFAULT_DELTA_EXTENT,
        })
    }

    /// Generations the budget allows after initialization.
    pub fn total_generations(&self) -> usize {
        let n = self.algorithm.population_size.max(1);
        self.budget.saturating_sub(n) / n
    }

    pub fn period(&self) -> usize {
        self.interaction_period.unwrap_or_else(|| self.total_generations().div_ceil(3)).max(1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Elicitation {
    pub generation: usize,
    pub z: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotMetrics {
    pub ep: Option<f64>,
    pub r_hv: Option<f64>,
}

/// What the decision maker sees after a generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub session: String,
    pub generation: usize,
    pub evaluations: usize,
    pub budget: usize,
    pub phase: Phase,
    pub senses: Vec<Sense>,
    /// Population objective vectors in native orientation.
    pub objectives: Vec<Vec<f64>>,
    /// Indices into `objectives` of a small spread-out subset.
    pub representatives: Vec<usize>,
    /// Reference point in force, minimization orientation.
    pub reference: Option<Vec<f64>>,
    pub metrics: SnapshotMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub generation: usize,
    pub r_hv: Option<f64>,
    pub reference: Option<Vec<f64>>,
}

/// Full session status.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub id: String,
    pub problem: String,
    pub algorithm: AlgorithmKind,
    pub phase: Phase,
    pub generation: usize,
    pub evaluations: usize,
    pub budget: usize,
    pub interaction_period: usize,
    pub pauses: usize,
    pub reference: Option<Vec<f64>>,
    pub history: Vec<Elicitation>,
    pub trajectory: Vec<TrajectoryPoint>,
    pub snapshot: Snapshot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum JournalEvent {
    Created { session: String, config: SessionConfig },
    Advance,
    Elicitation { generation: usize, z: Vec<f64> },
    Snapshot { snapshot: Snapshot },
}

struct Journal {
    path: PathBuf,
    file: fs::File,
}

impl Journal {
    fn create(path: &Path) -> Result<Self, SteerError> {
        let file = fs::File::create(path).map_err(|source| SteerError::Io { path: path.display().to_string(), source })?;
        Ok(Self { path: path.to_path_buf(), file })
    }

    fn append(&mut self, event: &JournalEvent) -> Result<(), SteerError> {
        let line = serde_json::to_string(event)?;
        writeln!(self.file, "{line}").map_err(|source| SteerError::Io { path: self.path.display().to_string(), source })
    }
}

/// Greedy farthest-point subset of `points` (normalized), seeded by `seed`.
pub fn representative_subset(points: &[Vec<f64>], seed: usize, k: usize) -> Vec<usize> {
    if points.is_empty() || k == 0 {
        return Vec::new();
    }
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
    let mut chosen = vec![seed];
    let mut nearest: Vec<f64> = points.iter().map(|p| dist(p, &points[seed])).collect();
    while chosen.len() < k.min(points.len()) {
        let (next, d) = nearest.iter().enumerate().fold((0, -1.0), |best, (i, &d)| if d > best.1 { (i, d) } else { best });
        if d <= 0.0 {
            break;
        }
        chosen.push(next);
        for (i, p) in points.iter().enumerate() {
            nearest[i] = nearest[i].min(dist(p, &points[next]));
        }
    }
    chosen
}

pub struct Session {
    id: String,
    config: SessionConfig,
    engine: Engine,
    phase: Phase,
    reference: Option<ReferencePoint>,
    history: Vec<Elicitation>,
    trajectory: Vec<TrajectoryPoint>,
    frame: InstanceFrame,
    paused_at: Option<usize>,
    pauses: usize,
    latest: Snapshot,
    journal: Option<Journal>,
}

impl fmt::Debug for Session {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Session").field("id", &self.id).field("phase", &self.phase).field("generation", &self.engine.generation()).finish()
    }
}

/// Fixed normalization frame: the analytic front when there is one, else the
/// initial population together with every single-asset portfolio.
fn session_frame(problem: &Problem, engine: &Engine) -> Result<InstanceFrame, SteerError> {
    let spec = problem.spec();
    let mut points: Vec<Vec<f64>> = match sample_true_front(spec, 2000) {
        Ok(s) => s.into_iter().map(|v| v.into_inner()).collect(),
        Err(ProblemError::NoAnalyticFront { .. }) => engine.population().objectives().iter().map(|f| f.to_vec()).collect(),
        Err(e) => return Err(e.into()),
    };
    if spec.family().is_portfolio() {
        for i in 0..spec.n() {
            let mut x = vec![0.0; spec.n()];
            x[i] = 1.0;
            points.push(problem.evaluate(&x)?.into_inner());
        }
    }
    Ok(InstanceFrame::from_points(&points).expect("non-empty frame points"))
}

impl Session {
    pub fn new(id: &str, config: SessionConfig) -> Result<Self, SteerError> {
        Self::with_journal(id, config, None)
    }

    /// Creates a session, journaling every event to `journal` when given.
    pub fn with_journal(id: &str, config: SessionConfig, journal: Option<&Path>) -> Result<Self, SteerError> {
        let problem = config.problem.build()?;
        let m = problem.spec().m();
        let mut spec = config.algorithm.clone();
        let reference = spec.reference_points.first().cloned();
        if spec.kind.is_preference_based() && spec.reference_points.is_empty() {
            // Placeholder until the first elicitation at generation 0.
            spec.reference_points = vec![ReferencePoint::new(vec![0.0; m]).expect("finite")];
        }
        if !spec.kind.is_preference_based() {
            spec.reference_points.clear();
        }
        if let Some(r) = &reference {
            if r.dim() != m {
                return Err(SteerError::Dimension { expected: m, got: r.dim() });
            }
        }
        if config.representatives == 0 {
            return Err(SteerError::Config("representatives must be at least 1".into()));
        }
        let engine = Engine::new(spec, problem.clone(), config.budget, config.seed)?;
        let frame = session_frame(&problem, &engine)?;
        let journal = journal.map(Journal::create).transpose()?;
        let placeholder = Snapshot {
            session: id.into(),
            generation: 0,
            evaluations: 0,
            budget: config.budget,
            phase: Phase::Running,
            senses: Vec::new(),
            objectives: Vec::new(),
            representatives: Vec::new(),
            reference: None,
            metrics: SnapshotMetrics { ep: None, r_hv: None },
        };
        let mut session = Self {
            id: id.into(),
            config,
            engine,
            phase: Phase::Running,
            reference,
            history: Vec::new(),
            trajectory: Vec::new(),
            frame,
            paused_at: None,
            pauses: 0,
            latest: placeholder,
            journal,
        };
        session.journal(&JournalEvent::Created { session: session.id.clone(), config: session.config.clone() })?;
        session.record_snapshot()?;
        Ok(session)
    }

    fn journal(&mut self, event: &JournalEvent) -> Result<(), SteerError> {
        match self.journal.as_mut() {
            Some(j) => j.append(event),
            None => Ok(()),
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    pub fn history(&self) -> &[Elicitation] {
        &self.history
    }

    pub fn trajectory(&self) -> &[TrajectoryPoint] {
        &self.trajectory
    }

    pub fn pauses(&self) -> usize {
        self.pauses
    }

    pub fn frame(&self) -> &InstanceFrame {
        &self.frame
    }

    pub fn snapshot(&self) -> &Snapshot {
        &self.latest
    }

    /// R-HV of the current first front against `zr` in the session frame.
    pub fn r_hv_against(&self, zr: &ReferencePoint) -> f64 {
        let front: Vec<Vec<f64>> = self.engine.population().first_front().iter().map(|s| s.f.to_vec()).collect();
        self.frame.r_hv(&front, zr, self.config.delta_extent)
    }

    fn build_snapshot(&self) -> Snapshot {
        let pop = self.engine.population();
        let problem = self.engine.problem();
        let objs: Vec<&[f64]> = pop.objectives();
        let front: Vec<Vec<f64>> = pop.first_front().iter().map(|s| s.f.to_vec()).collect();
        let normed: Vec<Vec<f64>> = objs.iter().map(|f| self.frame.normalize(f)).collect();
        let seed = match &self.reference {
            Some(zr) => (0..objs.len())
                .min_by(|&a, &b| {
                    let sa = augmented_asf(objs[a], &zr.z, &zr.weights, 1e-4);
                    let sb = augmented_asf(objs[b], &zr.z, &zr.weights, 1e-4);
                    sa.total_cmp(&sb)
                })
                .unwrap_or(0),
            None => (0..normed.len())
                .min_by(|&a, &b| normed[a].iter().sum::<f64>().total_cmp(&normed[b].iter().sum::<f64>()))
                .unwrap_or(0),
        };
        let metrics = match &self.reference {
            Some(zr) => SnapshotMetrics {
                ep: ep_accuracy(&front, zr).ok(),
                r_hv: Some(self.frame.r_hv(&front, zr, self.config.delta_extent)),
            },
            None => SnapshotMetrics { ep: None, r_hv: None },
        };
        Snapshot {
            session: self.id.clone(),
            generation: self.engine.generation(),
            evaluations: self.engine.evaluations(),
            budget: self.engine.budget(),
            phase: self.phase,
            senses: problem.spec().senses(),
            objectives: objs.iter().map(|f| problem.to_native(f)).collect(),
            representatives: representative_subset(&normed, seed, self.config.representatives),
            reference: self.reference.as_ref().map(|r| r.z.clone()),
            metrics,
        }
    }

    fn record_snapshot(&mut self) -> Result<(), SteerError> {
        let snap = self.build_snapshot();
        let point = TrajectoryPoint { generation: snap.generation, r_hv: snap.metrics.r_hv, reference: snap.reference.clone() };
        match self.trajectory.last_mut() {
            Some(last) if last.generation == point.generation => *last = point,
            _ => self.trajectory.push(point),
        }
        self.journal(&JournalEvent::Snapshot { snapshot: snap.clone() })?;
        self.latest = snap;
        Ok(())
    }

    fn require(&self, action: &'static str, expected: Phase) -> Result<(), SteerError> {
        if self.phase == expected {
            Ok(())
        } else {
            Err(SteerError::Phase { action, expected, actual: self.phase })
        }
    }

    fn at_pause_point(&self) -> bool {
        let g = self.engine.generation();
        g % self.config.period() == 0 && self.paused_at != Some(g) && !self.engine.is_finished()
    }

    /// Runs until the next interaction point or the end of the budget,
    /// passing every new snapshot to `on_snapshot`.
    pub fn advance_with(&mut self, mut on_snapshot: impl FnMut(&Snapshot)) -> Result<Snapshot, SteerError> {
        self.require("advance", Phase::Running)?;
        self.journal(&JournalEvent::Advance)?;
        loop {
            if self.engine.is_finished() {
                self.phase = Phase::Finished;
            } else if self.at_pause_point() {
                self.phase = Phase::AwaitingPreference;
                self.paused_at = Some(self.engine.generation());
                self.pauses += 1;
            } else {
                self.engine.step()?;
                if !self.engine.is_finished() && !self.at_pause_point() {
                    self.record_snapshot()?;
                    on_snapshot(&self.latest);
                }
                continue;
            }
            self.record_snapshot()?;
            on_snapshot(&self.latest);
            return Ok(self.latest.clone());
        }
    }

    pub fn advance(&mut self) -> Result<Snapshot, SteerError> {
        self.advance_with(|_| {})
    }

    /// Applies a new reference point (minimization orientation) at the
    /// current generation boundary and resumes the run.
    pub fn elicit(&mut self, z: Vec<f64>) -> Result<Snapshot, SteerError> {
        self.require("elicit", Phase::AwaitingPreference)?;
        let m = self.engine.problem().spec().m();
        if z.len() != m {
            return Err(SteerError::Dimension { expected: m, got: z.len() });
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(SteerError::NonFinite);
        }
        let zr = ReferencePoint::new(z.clone()).map_err(|_| SteerError::NonFinite)?;
        if self.engine.spec().kind.is_preference_based() {
            self.engine.set_reference_points(vec![zr.clone()])?;
        }
        let generation = self.engine.generation();
        self.journal(&JournalEvent::Elicitation { generation, z: z.clone() })?;
        self.history.push(Elicitation { generation, z });
        self.reference = Some(zr);
        self.phase = Phase::Running;
        self.record_snapshot()?;
        Ok(self.latest.clone())
    }

    pub fn state(&self) -> SessionState {
        SessionState {
            id: self.id.clone(),
            problem: self.engine.problem().spec().label(),
            algorithm: self.engine.spec().kind,
            phase: self.phase,
            generation: self.engine.generation(),
            evaluations: self.engine.evaluations(),
            budget: self.engine.budget(),
            interaction_period: self.config.period(),
            pauses: self.pauses,
            reference: self.reference.as_ref().map(|r| r.z.clone()),
            history: self.history.clone(),
            trajectory: self.trajectory.clone(),
            snapshot: self.latest.clone(),
        }
    }
}

/// A decision maker that answers each pause with the next scripted point,
/// repeating the last one when the script runs out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedDm {
    pub points: Vec<Vec<f64>>,
}

impl ScriptedDm {
    pub fn new(points: Vec<Vec<f64>>) -> Self {
        Self { points }
    }

    /// Drives `session` to completion and returns every snapshot produced.
    pub fn drive(&self, session: &mut Session) -> Result<Vec<Snapshot>, SteerError> {
        if self.points.is_empty() {
            return Err(SteerError::Config("scripted decision maker needs at least one point".into()));
        }
        let mut snapshots = vec![session.snapshot().clone()];
        let mut next = 0;
        loop {
            match session.phase() {
                Phase::Finished => return Ok(snapshots),
                Phase::Running => {
                    session.advance_with(|s| snapshots.push(s.clone()))?;
                }
                Phase::AwaitingPreference => {
                    let z = self.points[next.min(self.points.len() - 1)].clone();
                    next += 1;
                    snapshots.push(session.elicit(z)?);
                }
            }
        }
    }
}

/// Result of replaying a journal.
#[derive(Debug)]
pub struct Replay {
    pub session: Session,
    /// Number of journaled snapshots compared.
    pub snapshots: usize,
}

fn read_journal(path: &Path) -> Result<Vec<(String, JournalEvent)>, SteerError> {
    let file = fs::File::open(path).map_err(|source| SteerError::Io { path: path.display().to_string(), source })?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|source| SteerError::Io { path: path.display().to_string(), source })?;
        if line.trim().is_empty() {
            continue;
        }
        let event: JournalEvent = serde_json::from_str(&line)?;
        out.push((line, event));
    }
    Ok(out)
}

/// Re-executes a journaled session headlessly and checks every snapshot
/// against the journal byte for byte.
pub fn replay_journal(path: &Path) -> Result<Replay, SteerError> {
    let events = read_journal(path)?;
    let Some((_, JournalEvent::Created { session: id, config })) = events.first() else {
        return Err(SteerError::Replay("journal does not start with a created event".into()));
    };
    let mut session = Session::new(id, config.clone())?;
    let mut produced = vec![serde_json::to_string(&JournalEvent::Snapshot { snapshot: session.snapshot().clone() })?];
    let mut expected = Vec::new();
    for (line, event) in &events[1..] {
        match event {
            JournalEvent::Created { .. } => return Err(SteerError::Replay("second created event".into())),
            JournalEvent::Snapshot { .. } => expected.push(line.clone()),
            JournalEvent::Advance => {
                let mut err = None;
                session.advance_with(|s| match serde_json::to_string(&JournalEvent::Snapshot { snapshot: s.clone() }) {
                    Ok(text) => produced.push(text),
                    Err(e) => err = Some(e),
                })?;
                if let Some(e) = err {
                    return Err(e.into());
                }
            }
            JournalEvent::Elicitation { generation, z } => {
                if session.engine.generation() != *generation {
                    return Err(SteerError::Replay(format!(
                        "elicitation journaled at generation {generation}, replay is at {}",
                        session.engine.generation()
                    )));
                }
                let snap = session.elicit(z.clone())?;
                produced.push(serde_json::to_string(&JournalEvent::Snapshot { snapshot: snap })?);
            }
        }
    }
    if produced.len() != expected.len() {
        return Err(SteerError::Replay(format!("{} snapshots journaled, {} replayed", expected.len(), produced.len())));
    }
    if let Some(i) = (0..expected.len()).find(|&i| produced[i] != expected[i]) {
        return Err(SteerError::Replay(format!("snapshot {i} differs")));
    }
    Ok(Replay { session, snapshots: expected.len() })
}

enum Command {
    Advance(mpsc::Sender<Result<Snapshot, SteerError>>),
    Elicit(Vec<f64>, mpsc::Sender<Result<Snapshot, SteerError>>),
}

#[derive(Debug)]
struct Shared {
    log: Vec<Snapshot>,
    state: SessionState,
}

struct Handle {
    tx: SyncSender<Command>,
    shared: Arc<(Mutex<Shared>, Condvar)>,
    worker: Option<JoinHandle<()>>,
}

/// Owns live sessions, one worker thread each.
pub struct SessionManager {
    sessions: Mutex<HashMap<String, Arc<Mutex<Handle>>>>,
    next_id: AtomicU64,
    journal_dir: Option<PathBuf>,
}

impl Default for SessionManager {
    fn default() -> Self {
        Self::new(None)
    }
}

fn push_snapshot(shared: &(Mutex<Shared>, Condvar), snapshot: &Snapshot) {
    let (lock, cond) = shared;
    lock.lock().expect("session state lock").log.push(snapshot.clone());
    cond.notify_all();
}

fn worker(mut session: Session, rx: Receiver<Command>, shared: Arc<(Mutex<Shared>, Condvar)>) {
    for command in rx {
        let (result, reply) = match command {
            Command::Advance(reply) => (session.advance_with(|s| push_snapshot(&shared, s)), reply),
            Command::Elicit(z, reply) => {
                let result = session.elicit(z);
                if let Ok(s) = &result {
                    push_snapshot(&shared, s);
                }
                (result, reply)
            }
        };
        let (lock, cond) = &*shared;
        lock.lock().expect("session state lock").state = session.state();
        cond.notify_all();
        let _ = reply.send(result);
    }
}

impl SessionManager {
    pub fn new(journal_dir: Option<PathBuf>) -> Self {
        Self { sessions: Mutex::new(HashMap::new()), next_id: AtomicU64::new(1), journal_dir }
    }

    fn handle(&self, id: &str) -> Result<Arc<Mutex<Handle>>, SteerError> {
        self.sessions.lock().expect("sessions lock").get(id).cloned().ok_or_else(|| SteerError::UnknownSession(id.into()))
    }

    pub fn create(&self, config: SessionConfig) -> Result<SessionState, SteerError> {
        let id = format!("s{}", self.next_id.fetch_add(1, Ordering::Relaxed));
        let journal = match &self.journal_dir {
            Some(dir) => {
                fs::create_dir_all(dir).map_err(|source| SteerError::Io { path: dir.display().to_string(), source })?;
                Some(dir.join(format!("{id}.jsonl")))
            }
            None => None,
        };
        let session = Session::with_journal(&id, config, journal.as_deref())?;
        let state = session.state();
        let shared = Arc::new((Mutex::new(Shared { log: vec![session.snapshot().clone()], state: state.clone() }), Condvar::new()));
        let (tx, rx) = mpsc::sync_channel(QUEUE_DEPTH);
        let worker_shared = shared.clone();
        let worker = std::thread::Builder::new()
            .name(format!("session-{id}"))
            .spawn(move || worker(session, rx, worker_shared))
            .map_err(|source| SteerError::Io { path: "worker thread".into(), source })?;
        let handle = Handle { tx, shared, worker: Some(worker) };
        self.sessions.lock().expect("sessions lock").insert(id, Arc::new(Mutex::new(handle)));
        Ok(state)
    }

    fn send(&self, id: &str, make: impl FnOnce(mpsc::Sender<Result<Snapshot, SteerError>>) -> Command) -> Result<Snapshot, SteerError> {
        let handle = self.handle(id)?;
        let (reply_tx, reply_rx) = mpsc::channel();
        {
            let h = handle.lock().expect("handle lock");
            match h.tx.try_send(make(reply_tx)) {
                Ok(()) => {}
                Err(TrySendError::Full(_)) => return Err(SteerError::Busy(id.into())),
                Err(TrySendError::Disconnected(_)) => return Err(SteerError::Closed(id.into())),
            }
        }
        reply_rx.recv().map_err(|_| SteerError::Closed(id.into()))?
    }

    /// Blocks until the session pauses or finishes.
    pub fn advance(&self, id: &str) -> Result<Snapshot, SteerError> {
        self.send(id, Command::Advance)
    }

    pub fn elicit(&self, id: &str, z: Vec<f64>) -> Result<Snapshot, SteerError> {
        self.send(id, |reply| Command::Elicit(z, reply))
    }

    pub fn state(&self, id: &str) -> Result<SessionState, SteerError> {
        let handle = self.handle(id)?;
        let shared = handle.lock().expect("handle lock").shared.clone();
        let guard = shared.0.lock().expect("session state lock");
        Ok(guard.state.clone())
    }

    /// Snapshots from position `from` of the session log; waits up to
    /// `timeout` for new ones when none are available yet. The flag reports
    /// whether the session has finished.
    pub fn snapshots_since(&self, id: &str, from: usize, timeout: Duration) -> Result<(Vec<Snapshot>, bool), SteerError> {
        let handle = self.handle(id)?;
        let shared = handle.lock().expect("handle lock").shared.clone();
        let (lock, cond) = &*shared;
        let mut guard = lock.lock().expect("session state lock");
        if guard.log.len() <= from && guard.state.phase != Phase::Finished {
            guard = cond.wait_timeout_while(guard, timeout, |g| g.log.len() <= from && g.state.phase != Phase::Finished).expect("wait").0;
        }
        let fresh = guard.log.get(from..).map(<[Snapshot]>::to_vec).unwrap_or_default();
        Ok((fresh, guard.state.phase == Phase::Finished))
    }

    pub fn ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.sessions.lock().expect("sessions lock").keys().cloned().collect();
        ids.sort();
        ids
    }

    /// Stops the session's worker and forgets it.
    pub fn remove(&self, id: &str) -> Result<(), SteerError> {
        let handle = self.sessions.lock().expect("sessions lock").remove(id).ok_or_else(|| SteerError::UnknownSession(id.into()))?;
        let mut h = handle.lock().expect("handle lock");
        let (tx, _) = mpsc::sync_channel(1);
        drop(std::mem::replace(&mut h.tx, tx));
        if let Some(w) = h.worker.take() {
            let _ = w.join();
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::Family;

    fn zdt1_config(kind: AlgorithmKind, budget: usize, period: Option<usize>) -> SessionConfig {
        SessionConfig {
            problem: ProblemConfig::benchmark(Family::Zdt1, None),
            algorithm: AlgorithmSpec::new(kind, 20),
            budget,
            interaction_period: period,
            seed: 3,
            representatives: 4,
            delta_extent: 0.2,
        }
    }

    #[test]
    fn pause_schedule() {
        // 20 + 60 * 20 evaluations = 60 generations, period 20.
        let mut s = Session::new("t", zdt1_config(AlgorithmKind::RNsga2, 1220, Some(20))).unwrap();
        let dm = ScriptedDm::new(vec![vec![0.5, 0.3]]);
        let snaps = dm.drive(&mut s).unwrap();
        assert_eq!(s.pauses(), 3);
        assert_eq!(s.phase(), Phase::Finished);
        let pauses: Vec<usize> = s.history().iter().map(|e| e.generation).collect();
        assert_eq!(pauses, vec![0, 20, 40]);
        assert_eq!(s.engine().generation(), 60);
        assert!(snaps.windows(2).all(|w| w[0].generation <= w[1].generation));
    }

    #[test]
    fn short_budget_pauses_once() {
        let mut s = Session::new("t", zdt1_config(AlgorithmKind::Nsga3, 120, Some(20))).unwrap();
        assert_eq!(s.advance().unwrap().phase, Phase::AwaitingPreference);
        s.elicit(vec![0.2, 0.2]).unwrap();
        let last = s.advance().unwrap();
        assert_eq!(last.phase, Phase::Finished);
        assert_eq!(last.generation, 5);
        assert_eq!(s.pauses(), 1);
    }

    #[test]
    fn phase_rules() {
        let mut s = Session::new("t", zdt1_config(AlgorithmKind::Pbea, 1000, Some(5))).unwrap();
        assert!(matches!(s.elicit(vec![0.1, 0.1]), Err(SteerError::Phase { action: "elicit", .. })));
        s.advance().unwrap();
        let err = s.advance().unwrap_err();
        assert_eq!(err.to_string(), "advance requires phase Running, current phase AwaitingPreference");
        assert!(matches!(s.elicit(vec![0.1]), Err(SteerError::Dimension { expected: 2, got: 1 })));
        assert!(matches!(s.elicit(vec![0.1, f64::NAN]), Err(SteerError::NonFinite)));
        s.elicit(vec![0.1, 0.1]).unwrap();
        assert_eq!(s.phase(), Phase::Running);
    }

    #[test]
    fn representatives_spread_out() {
        let pts = vec![vec![0.0, 1.0], vec![0.1, 0.9], vec![0.5, 0.5], vec![1.0, 0.0], vec![0.9, 0.1]];
        let r = representative_subset(&pts, 2, 3);
        assert_eq!(r[0], 2);
        let mut rest = r[1..].to_vec();
        rest.sort();
        assert_eq!(rest, vec![0, 3]);
        assert_eq!(representative_subset(&pts, 0, 10).len(), 5);
    }
}
