//! The `prefemo` command line and the HTTP+JSON steering service.

use std::collections::VecDeque;
use std::convert::Infallible;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use clap::{Parser, Subcommand};
use futures_util::stream::{self, Stream};
use serde::Deserialize;

use prefemo::algorithms::AlgorithmKind;
use prefemo::harness::{self, HarnessError, ResultStore, Summary};
use prefemo::metrics::MetricId;
use prefemo::steer::{SessionConfig, SessionManager, SteerError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_PARTIAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "prefemo", version, about = "Reference-point based evolutionary multi-objective optimization")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a batch experiment described by a JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Result store directory; overrides `output_dir` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Skip runs already completed in the store.
        #[arg(long)]
        resume: bool,
    },
    /// Median/IQR table with Wilcoxon tests against the best algorithm.
    Summarize {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        metric: MetricId,
        #[arg(long)]
        json: bool,
    },
    /// Export the rank heat map as JSON plus two CSV files.
    Heatmap {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        metric: MetricId,
        #[arg(long)]
        out: PathBuf,
    },
    /// List or print the shipped experiment presets.
    Presets {
        #[command(subcommand)]
        action: PresetAction,
    },
    /// Serve interactive sessions over HTTP.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
        #[arg(long)]
        journal_dir: Option<PathBuf>,
    },
    /// Replay a session journal and check it reproduces exactly.
    Replay { journal: PathBuf },
}

#[derive(Debug, Subcommand)]
pub enum PresetAction {
    List,
    Show { name: String },
}

fn harness_exit(e: &HarnessError) -> i32 {
    match e {
        HarnessError::Validation(_) | HarnessError::Json { .. } | HarnessError::UnknownPreset(_) => EXIT_INVALID,
        HarnessError::Incomplete(_) => EXIT_PARTIAL,
        _ => EXIT_ERROR,
    }
}

/// Executes a parsed command, writing human output to `out`; returns the exit code.
pub fn execute(command: Command, out: &mut String) -> i32 {
    let result = match command {
        Command::Run { config, out: dir, jobs, resume } => cmd_run(&config, dir, jobs, resume, out),
        Command::Summarize { store, metric, json } => cmd_summarize(&store, metric, json, out),
        Command::Heatmap { store, metric, out: file } => ResultStore::open(&store)
            .and_then(|s| harness::export_heatmap(&s, metric, &file))
            .map(|map| {
                let _ = writeln!(out, "wrote {} ({} instances, {} algorithms)", file.display(), map.instances.len(), map.algorithms.len());
                EXIT_OK
            }),
        Command::Presets { action: PresetAction::List } => {
            for p in harness::scenario_presets() {
                let _ = writeln!(out, "{:<18} {}", p.name, p.description);
            }
            Ok(EXIT_OK)
        }
        Command::Presets { action: PresetAction::Show { name } } => harness::preset(&name).map(|p| {
            let _ = writeln!(out, "{}", serde_json::to_string_pretty(&p.config).expect("serializable"));
            EXIT_OK
        }),
        Command::Serve { addr, journal_dir } => return serve(&addr, journal_dir, out),
        Command::Replay { journal } => {
            return match prefemo::steer::replay_journal(&journal) {
                Ok(r) => {
                    let _ = writeln!(out, "replayed {} snapshots identically; final generation {}", r.snapshots, r.session.snapshot().generation);
                    EXIT_OK
                }
                Err(e) => {
                    let _ = writeln!(out, "error: {e}");
                    EXIT_ERROR
                }
            }
        }
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(out, "error: {e}");
            harness_exit(&e)
        }
    }
}

fn cmd_run(config: &std::path::Path, dir: Option<PathBuf>, jobs: usize, resume: bool, out: &mut String) -> Result<i32, HarnessError> {
    let config = harness::load_config(config)?;
    config.validate()?;
    let Some(dir) = dir.or_else(|| config.output_dir.clone()) else {
        return Err(HarnessError::Validation(vec!["no output directory: pass --out or set output_dir".into()]));
    };
    let (_, report) = harness::run_experiment(&config, &dir, jobs, resume)?;
    let _ = writeln!(out, "executed {} runs, skipped {}, failed {}; store {}", report.executed, report.skipped, report.failed, dir.display());
    Ok(if report.failed > 0 { EXIT_PARTIAL } else { EXIT_OK })
}

fn fmt_value(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.6e}")
    } else {
        "inf".into()
    }
}

pub fn render_summary(summary: &Summary) -> String {
    let mut s = format!("{} ({:?}); IQR: {}\n", summary.metric, summary.orientation, summary.iqr_convention);
    for cell in &summary.cells {
        let _ = writeln!(s, "\n{} / {}", cell.problem, cell.scenario);
        for a in &cell.algorithms {
            let mark = if a.best {
                "best".to_string()
            } else {
                match (a.significant, a.p_value) {
                    (Some(true), Some(p)) => format!("worse p={p:.3}"),
                    (Some(false), Some(p)) => format!("~ p={p:.3}"),
                    _ => "n/a".into(),
                }
            };
            let _ = writeln!(
                s,
                "  {:<12} median {:>13} IQR {:>13} n={:<3} failed={:<2} {}",
                a.algorithm,
                fmt_value(a.median),
                fmt_value(a.iqr),
                a.n,
                a.failed,
                mark
            );
        }
    }
    if !summary.incomplete.is_empty() {
        let _ = writeln!(s, "\nincomplete cells:");
        for c in &summary.incomplete {
            let _ = writeln!(s, "  {c}");
        }
    }
    s
}

fn cmd_summarize(store: &std::path::Path, metric: MetricId, json: bool, out: &mut String) -> Result<i32, HarnessError> {
    let store = ResultStore::open(store)?;
    let summary = harness::summarize(&store, metric)?;
    if json {
        let _ = writeln!(out, "{}", serde_json::to_string_pretty(&summary).expect("serializable"));
    } else {
        out.push_str(&render_summary(&summary));
    }
    Ok(if summary.incomplete.is_empty() { EXIT_OK } else { EXIT_PARTIAL })
}

fn serve(addr: &str, journal_dir: Option<PathBuf>, out: &mut String) -> i32 {
    let runtime = match tokio::runtime::Builder::new_multi_thread().enable_all().build() {
        Ok(r) => r,
        Err(e) => {
            let _ = writeln!(out, "error: {e}");
            return EXIT_ERROR;
        }
    };
    let manager = Arc::new(SessionManager::new(journal_dir));
    let result = runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        eprintln!("listening on {}", listener.local_addr()?);
        axum::serve(listener, router(manager)).await
    });
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(out, "error: {e}");
            EXIT_ERROR
        }
    }
}

/// Error body `{"error": ...}` with a status derived from the error kind.
pub struct ApiError(SteerError);

impl From<SteerError> for ApiError {
    fn from(e: SteerError) -> Self {
        Self(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match &self.0 {
            SteerError::UnknownSession(_) => StatusCode::NOT_FOUND,
            SteerError::Phase { .. } => StatusCode::CONFLICT,
            SteerError::Dimension { .. } | SteerError::NonFinite | SteerError::Config(_) | SteerError::Algorithm(_) | SteerError::Problem(_) => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            SteerError::Busy(_) => StatusCode::SERVICE_UNAVAILABLE,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(serde_json::json!({ "error": self.0.to_string() }))).into_response()
    }
}

/// `POST /sessions` body. Either a full `config`, or a portfolio preset
/// (`objectives` 3 or 5) with optional overrides.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateRequest {
    pub config: Option<SessionConfig>,
    pub objectives: Option<usize>,
    pub algorithm: Option<AlgorithmKind>,
    pub seed: Option<u64>,
    pub budget: Option<usize>,
    pub interaction_period: Option<usize>,
}

impl CreateRequest {
    pub fn into_config(self) -> Result<SessionConfig, SteerError> {
        let mut config = match self.config {
            Some(c) => c,
            None => SessionConfig::portfolio_preset(
                self.objectives.unwrap_or(3),
                self.algorithm.unwrap_or(AlgorithmKind::MoeadNums),
                self.seed.unwrap_or(0),
            )?,
        };
        if let Some(b) = self.budget {
            config.budget = b;
        }
        if let Some(p) = self.interaction_period {
            config.interaction_period = Some(p);
        }
        if let Some(s) = self.seed {
            config.seed = s;
        }
        Ok(config)
    }
}

#[derive(Debug, Deserialize)]
pub struct PreferenceRequest {
    pub z: Vec<f64>,
}

#[derive(Debug, Deserialize)]
pub struct StreamQuery {
    #[serde(default)]
    pub from: usize,
}

type Manager = Arc<SessionManager>;

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, SteerError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError(SteerError::Config(format!("worker task failed: {e}"))))?.map_err(ApiError)
}

async fn create_session(State(m): State<Manager>, body: Option<Json<CreateRequest>>) -> Result<impl IntoResponse, ApiError> {
    let request = body.map(|Json(b)| b).unwrap_or_default();
    let config = request.into_config()?;
    let state = blocking(move || m.create(config)).await?;
    Ok((StatusCode::CREATED, Json(state)))
}

async fn advance(State(m): State<Manager>, Path(id): Path<String>) -> Result<impl IntoResponse, ApiError> {
    Ok(Json(blocking(move || m.advance(&id)).await?))
}

async fn preference(State(m): State<Manager>, Path(id): Path<String>, Json(body): Json<PreferenceRequest>) -> Result<impl IntoResponse, ApiError> {
    Ok(Json(blocking(move || m.elicit(&id, body.z)).await?))
}

async fn get_session(State(m): State<Manager>, Path(id): Path<String>) -> Result<impl IntoResponse, ApiError> {
    Ok(Json(m.state(&id)?))
}

struct Feed {
    manager: Manager,
    id: String,
    next: usize,
    buffer: VecDeque<Event>,
    done: bool,
}

fn feed(manager: Manager, id: String, from: usize) -> impl Stream<Item = Result<Event, Infallible>> {
    let start = Feed { manager, id, next: from, buffer: VecDeque::new(), done: false };
    stream::unfold(start, |mut feed| async move {
        loop {
            if let Some(event) = feed.buffer.pop_front() {
                return Some((Ok(event), feed));
            }
            if feed.done {
                return None;
            }
            let (m, id, from) = (feed.manager.clone(), feed.id.clone(), feed.next);
            let polled = tokio::task::spawn_blocking(move || m.snapshots_since(&id, from, Duration::from_secs(10))).await;
            let Ok(Ok((fresh, finished))) = polled else { return None };
            for s in &fresh {
                let data = serde_json::to_string(s).expect("serializable snapshot");
                feed.buffer.push_back(Event::default().event("snapshot").id(feed.next.to_string()).data(data));
                feed.next += 1;
            }
            feed.done = finished;
        }
    })
}

async fn stream_session(State(m): State<Manager>, Path(id): Path<String>, Query(q): Query<StreamQuery>) -> Result<impl IntoResponse, ApiError> {
    m.state(&id)?;
    Ok(Sse::new(feed(m, id, q.from)).keep_alive(KeepAlive::default()))
}

pub fn router(manager: Manager) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/advance", post(advance))
        .route("/sessions/{id}/preference", post(preference))
        .route("/sessions/{id}/stream", get(stream_session))
        .with_state(manager)
}
