//! Benchmark problems (ZDT, DTLZ), the scenario-based portfolio models and
//! analytic Pareto-front sampling.

use std::collections::HashSet;
use std::f64::consts::PI;
use std::fmt;
use std::io::Read;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pareto::{BoxBounds, ObjectiveVector};
use crate::scalarize::das_dennis_points;

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("{family} does not support {m} objectives")]
    ObjectiveCount { family: Family, m: usize },
    #[error("{family} needs at least {min} variables, got {n}")]
    VariableCount { family: Family, n: usize, min: usize },
    #[error("decision vector has {got} entries, expected {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("decision variable {index} = {value} lies outside its bounds")]
    OutOfBounds { index: usize, value: f64 },
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("{path}: row {row}, column {column}: {reason}")]
    Ingestion { path: String, row: usize, column: usize, reason: String },
    #[error("{0}")]
    Csv(String),
    #[error("{family} has no analytic Pareto front")]
    NoAnalyticFront { family: Family },
    #[error("{family} needs an asset history")]
    MissingHistory { family: Family },
    #[error("unknown problem family `{0}`")]
    UnknownFamily(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Zdt1,
    Zdt2,
    Zdt3,
    Zdt4,
    Zdt6,
    Dtlz1,
    Dtlz2,
    Dtlz3,
    Dtlz4,
    PortfolioMvs,
    PortfolioMvskt,
}

impl Family {
    pub const ALL: [Family; 11] = [
        Family::Zdt1,
        Family::Zdt2,
        Family::Zdt3,
        Family::Zdt4,
        Family::Zdt6,
        Family::Dtlz1,
        Family::Dtlz2,
        Family::Dtlz3,
        Family::Dtlz4,
        Family::PortfolioMvs,
        Family::PortfolioMvskt,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::Zdt1 => "zdt1",
            Family::Zdt2 => "zdt2",
            Family::Zdt3 => "zdt3",
            Family::Zdt4 => "zdt4",
            Family::Zdt6 => "zdt6",
            Family::Dtlz1 => "dtlz1",
            Family::Dtlz2 => "dtlz2",
            Family::Dtlz3 => "dtlz3",
            Family::Dtlz4 => "dtlz4",
            Family::PortfolioMvs => "portfolio_mvs",
            Family::PortfolioMvskt => "portfolio_mvskt",
        }
    }

    pub fn is_zdt(self) -> bool {
        matches!(self, Family::Zdt1 | Family::Zdt2 | Family::Zdt3 | Family::Zdt4 | Family::Zdt6)
    }

    pub fn is_dtlz(self) -> bool {
        matches!(self, Family::Dtlz1 | Family::Dtlz2 | Family::Dtlz3 | Family::Dtlz4)
    }

    pub fn is_portfolio(self) -> bool {
        matches!(self, Family::PortfolioMvs | Family::PortfolioMvskt)
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = ProblemError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Family::ALL
            .into_iter()
            .find(|f| f.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| ProblemError::UnknownFamily(s.to_string()))
    }
}

/// Whether an objective is natively minimized or maximized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sense {
    Min,
    Max,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSpec", into = "RawSpec")]
pub struct ProblemSpec {
    family: Family,
    m: usize,
    n: usize,
    bounds: BoxBounds,
}

#[derive(Serialize, Deserialize)]
struct RawSpec {
    family: Family,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    m: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    n: Option<usize>,
}

impl TryFrom<RawSpec> for ProblemSpec {
    type Error = ProblemError;

    fn try_from(raw: RawSpec) -> Result<Self, Self::Error> {
        ProblemSpec::new(raw.family, raw.m, raw.n)
    }
}

impl From<ProblemSpec> for RawSpec {
    fn from(spec: ProblemSpec) -> Self {
        RawSpec { family: spec.family, m: Some(spec.m), n: Some(spec.n) }
    }
}

impl ProblemSpec {
    /// Builds a spec, filling in the conventional `m` and `n` where omitted:
    /// ZDT1-3 n=30, ZDT4/6 n=10, DTLZ1 n=m+4, DTLZ2-4 n=m+9, portfolios n=58 assets.
    pub fn new(family: Family, m: Option<usize>, n: Option<usize>) -> Result<Self, ProblemError> {
        let m = m.unwrap_or(match family {
            f if f.is_zdt() => 2,
            Family::PortfolioMvs => 3,
            Family::PortfolioMvskt => 5,
            _ => 3,
        });
        let valid_m = match family {
            f if f.is_zdt() => m == 2,
            f if f.is_dtlz() => (3..=100).contains(&m),
            Family::PortfolioMvs => m == 3,
            _ => m == 5,
        };
        if !valid_m {
            return Err(ProblemError::ObjectiveCount { family, m });
        }
        let default_n = match family {
            Family::Zdt1 | Family::Zdt2 | Family::Zdt3 => 30,
            Family::Zdt4 | Family::Zdt6 => 10,
            Family::Dtlz1 => m + 4,
            Family::Dtlz2 | Family::Dtlz3 | Family::Dtlz4 => m + 9,
            _ => 58,
        };
        let n = n.unwrap_or(default_n);
        let min_n = if family.is_portfolio() { 2 } else { m };
        if n < min_n {
            return Err(ProblemError::VariableCount { family, n, min: min_n });
        }
        let bounds = if family == Family::Zdt4 {
            let mut lower = vec![-5.0; n];
            let mut upper = vec![5.0; n];
            lower[0] = 0.0;
            upper[0] = 1.0;
            BoxBounds::new(lower, upper).expect("static bounds")
        } else {
            BoxBounds::unit(n)
        };
        Ok(Self { family, m, n, bounds })
    }

    pub fn standard(family: Family) -> Self {
        Self::new(family, None, None).expect("default spec is valid")
    }

    pub fn dtlz(family: Family, m: usize) -> Result<Self, ProblemError> {
        Self::new(family, Some(m), None)
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn bounds(&self) -> &BoxBounds {
        &self.bounds
    }

    pub fn senses(&self) -> Vec<Sense> {
        match self.family {
            Family::PortfolioMvs => vec![Sense::Max, Sense::Min, Sense::Max],
            Family::PortfolioMvskt => vec![Sense::Max, Sense::Min, Sense::Max, Sense::Min, Sense::Max],
            _ => vec![Sense::Min; self.m],
        }
    }

    pub fn label(&self) -> String {
        if self.family.is_dtlz() {
            format!("{}-m{}", self.family, self.m)
        } else {
            self.family.to_string()
        }
    }
}

/// A problem ready for evaluation: a `ProblemSpec` plus, for portfolios, its data.
#[derive(Debug, Clone)]
pub struct Problem {
    spec: ProblemSpec,
    history: Option<Arc<AssetHistory>>,
}

impl Problem {
    pub fn benchmark(spec: ProblemSpec) -> Result<Self, ProblemError> {
        if spec.family.is_portfolio() {
            return Err(ProblemError::MissingHistory { family: spec.family });
        }
        Ok(Self { spec, history: None })
    }

    /// A portfolio problem over all assets in `history`.
    pub fn portfolio(family: Family, history: Arc<AssetHistory>) -> Result<Self, ProblemError> {
        let spec = ProblemSpec::new(family, None, Some(history.n_assets()))?;
        if !family.is_portfolio() {
            return Err(ProblemError::UnknownFamily(family.to_string()));
        }
        Ok(Self { spec, history: Some(history) })
    }

    pub fn spec(&self) -> &ProblemSpec {
        &self.spec
    }

    pub fn history(&self) -> Option<&AssetHistory> {
        self.history.as_deref()
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<ObjectiveVector, ProblemError> {
        match self.spec.family {
            Family::PortfolioMvs | Family::PortfolioMvskt => {
                check_decision(&self.spec, x)?;
                let hist = self.history.as_deref().ok_or(ProblemError::MissingHistory { family: self.spec.family })?;
                let model = if self.spec.family == Family::PortfolioMvs { PortfolioModel::Mvs } else { PortfolioModel::Mvskt };
                evaluate_portfolio(model, &repair_to_simplex(x), hist)
            }
            _ => evaluate(&self.spec, x),
        }
    }

    /// Converts an internal (all-minimized) vector into native orientation.
    pub fn to_native(&self, f: &[f64]) -> Vec<f64> {
        f.iter().zip(self.spec.senses()).map(|(&v, s)| if s == Sense::Max { -v } else { v }).collect()
    }
}

fn check_decision(spec: &ProblemSpec, x: &[f64]) -> Result<(), ProblemError> {
    if x.len() != spec.n {
        return Err(ProblemError::Dimension { expected: spec.n, got: x.len() });
    }
    let b = &spec.bounds;
    for (index, &value) in x.iter().enumerate() {
        if !(b.lower()[index] <= value && value <= b.upper()[index]) {
            return Err(ProblemError::OutOfBounds { index, value });
        }
    }
    Ok(())
}

/// Evaluates a ZDT or DTLZ problem.
pub fn evaluate(spec: &ProblemSpec, x: &[f64]) -> Result<ObjectiveVector, ProblemError> {
    check_decision(spec, x)?;
    let f = match spec.family {
        Family::Zdt1 => zdt_convex(x, zdt_linear_g(x)),
        Family::Zdt2 => {
            let g = zdt_linear_g(x);
            let f1 = x[0];
            vec![f1, g * (1.0 - (f1 / g).powi(2))]
        }
        Family::Zdt3 => {
            let g = zdt_linear_g(x);
            let f1 = x[0];
            let r = f1 / g;
            vec![f1, g * (1.0 - r.sqrt() - r * (10.0 * PI * f1).sin())]
        }
        Family::Zdt4 => {
            let tail = &x[1..];
            let g = 1.0
                + 10.0 * tail.len() as f64
                + tail.iter().map(|v| v * v - 10.0 * (4.0 * PI * v).cos()).sum::<f64>();
            zdt_convex(x, g)
        }
        Family::Zdt6 => {
            let f1 = 1.0 - (-4.0 * x[0]).exp() * (6.0 * PI * x[0]).sin().powi(6);
            let tail = &x[1..];
            let g = 1.0 + 9.0 * (tail.iter().sum::<f64>() / tail.len() as f64).powf(0.25);
            vec![f1, g * (1.0 - (f1 / g).powi(2))]
        }
        Family::Dtlz1 => {
            let g = dtlz_rastrigin_g(&x[spec.m - 1..]);
            let m = spec.m;
            (0..m)
                .map(|i| {
                    let mut v = 0.5 * (1.0 + g);
                    v *= x[..m - 1 - i].iter().product::<f64>();
                    if i > 0 {
                        v *= 1.0 - x[m - 1 - i];
                    }
                    v
                })
                .collect()
        }
        Family::Dtlz2 => dtlz_spherical(x, spec.m, dtlz_sphere_g(&x[spec.m - 1..]), 1.0),
        Family::Dtlz3 => dtlz_spherical(x, spec.m, dtlz_rastrigin_g(&x[spec.m - 1..]), 1.0),
        Family::Dtlz4 => dtlz_spherical(x, spec.m, dtlz_sphere_g(&x[spec.m - 1..]), 100.0),
        family => return Err(ProblemError::MissingHistory { family }),
    };
    Ok(ObjectiveVector::new(f).expect("benchmark objectives are finite"))
}

fn zdt_linear_g(x: &[f64]) -> f64 {
    let tail = &x[1..];
    1.0 + 9.0 * tail.iter().sum::<f64>() / tail.len() as f64
}

fn zdt_convex(x: &[f64], g: f64) -> Vec<f64> {
    let f1 = x[0];
    vec![f1, g * (1.0 - (f1 / g).sqrt())]
}

fn dtlz_sphere_g(xm: &[f64]) -> f64 {
    xm.iter().map(|v| (v - 0.5).powi(2)).sum()
}

fn dtlz_rastrigin_g(xm: &[f64]) -> f64 {
    100.0 * (xm.len() as f64 + xm.iter().map(|v| (v - 0.5).powi(2) - (20.0 * PI * (v - 0.5)).cos()).sum::<f64>())
}

fn dtlz_spherical(x: &[f64], m: usize, g: f64, alpha: f64) -> Vec<f64> {
    let theta: Vec<f64> = x[..m - 1].iter().map(|v| v.powf(alpha) * PI / 2.0).collect();
    (0..m)
        .map(|i| {
            let mut v = 1.0 + g;
            v *= theta[..m - 1 - i].iter().map(|t| t.cos()).product::<f64>();
            if i > 0 {
                v *= theta[m - 1 - i].sin();
            }
            v
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Portfolios

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PortfolioModel {
    /// Mean, variance, skewness.
    Mvs,
    /// Mean, variance, skewness, kurtosis, turnover.
    Mvskt,
}

/// Per-period returns and turnover ratios for a universe of assets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssetHistory {
    asset_ids: Vec<String>,
    /// `returns[t][i]`
    returns: Vec<Vec<f64>>,
    /// `turnovers[t][i]`
    turnovers: Vec<Vec<f64>>,
}

impl AssetHistory {
    pub fn new(asset_ids: Vec<String>, returns: Vec<Vec<f64>>, turnovers: Vec<Vec<f64>>) -> Result<Self, ProblemError> {
        if returns.len() < 2 {
            return Err(ProblemError::InsufficientData(format!("{} return periods, need at least 2", returns.len())));
        }
        if turnovers.len() != returns.len() {
            return Err(ProblemError::InsufficientData(format!(
                "{} turnover periods but {} return periods",
                turnovers.len(),
                returns.len()
            )));
        }
        let n = asset_ids.len();
        for (t, (r, v)) in returns.iter().zip(&turnovers).enumerate() {
            if r.len() != n || v.len() != n {
                return Err(ProblemError::Ingestion {
                    path: "<memory>".into(),
                    row: t + 1,
                    column: r.len().min(v.len()),
                    reason: format!("expected {n} assets"),
                });
            }
            if let Some(column) = r.iter().chain(v).position(|x| !x.is_finite()) {
                return Err(ProblemError::Ingestion {
                    path: "<memory>".into(),
                    row: t + 1,
                    column: column % n,
                    reason: "non-finite value".into(),
                });
            }
        }
        Ok(Self { asset_ids, returns, turnovers })
    }

    pub fn asset_ids(&self) -> &[String] {
        &self.asset_ids
    }

    pub fn n_assets(&self) -> usize {
        self.asset_ids.len()
    }

    pub fn periods(&self) -> usize {
        self.returns.len()
    }

    pub fn returns(&self) -> &[Vec<f64>] {
        &self.returns
    }

    pub fn turnovers(&self) -> &[Vec<f64>] {
        &self.turnovers
    }

    /// A seeded synthetic market: heterogeneous drifts and volatilities with
    /// occasional jumps (for skewness and kurtosis), and positive turnovers.
    pub fn synthetic(n_assets: usize, periods: usize, seed: u64) -> Result<Self, ProblemError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let unit = Normal::new(0.0, 1.0).expect("valid normal");
        let mut params = Vec::with_capacity(n_assets);
        for i in 0..n_assets {
            let drift = 0.002 + 0.02 * (i as f64 / n_assets.max(1) as f64);
            let vol = 0.02 + 0.08 * ((i * 7919) % n_assets.max(1)) as f64 / n_assets.max(1) as f64;
            let jump = if i % 3 == 0 { 0.15 } else { -0.1 };
            let shape = 2.0 + (i % 5) as f64;
            params.push((drift, vol, jump, Gamma::new(shape, 0.05).expect("valid gamma")));
        }
        let mut returns = Vec::with_capacity(periods);
        let mut turnovers = Vec::with_capacity(periods);
        for _ in 0..periods {
            let mut r = Vec::with_capacity(n_assets);
            let mut v = Vec::with_capacity(n_assets);
            for (drift, vol, jump, gamma) in &params {
                let mut value = drift + vol * unit.sample(&mut rng);
                if rand::Rng::random::<f64>(&mut rng) < 0.05 {
                    value += jump;
                }
                r.push(value);
                v.push(gamma.sample(&mut rng));
            }
            returns.push(r);
            turnovers.push(v);
        }
        let ids = (0..n_assets).map(|i| format!("A{:03}", i + 1)).collect();
        Self::new(ids, returns, turnovers)
    }

    /// Writes the returns and turnovers CSV files.
    pub fn write_csv(&self, returns: &Path, turnovers: &Path) -> Result<(), ProblemError> {
        for (path, rows) in [(returns, &self.returns), (turnovers, &self.turnovers)] {
            let mut w = csv::Writer::from_path(path).map_err(|e| ProblemError::Csv(e.to_string()))?;
            w.write_record(&self.asset_ids).map_err(|e| ProblemError::Csv(e.to_string()))?;
            for row in rows.iter() {
                w.write_record(row.iter().map(|v| v.to_string())).map_err(|e| ProblemError::Csv(e.to_string()))?;
            }
            w.flush()?;
        }
        Ok(())
    }
}

/// Clamps negatives to zero and rescales to unit sum; all-zero maps to uniform.
pub fn repair_to_simplex(x: &[f64]) -> Vec<f64> {
    let clamped: Vec<f64> = x.iter().map(|&v| v.max(0.0)).collect();
    let sum: f64 = clamped.iter().sum();
    if sum > 0.0 {
        clamped.into_iter().map(|v| v / sum).collect()
    } else {
        vec![1.0 / x.len() as f64; x.len()]
    }
}

/// Sample moments of the portfolio return series, in minimization orientation:
/// MVS gives `(-E, V, -S)`, MVSKT gives `(-E, V, -S, K, -E[turnover])`.
pub fn evaluate_portfolio(model: PortfolioModel, rho: &[f64], hist: &AssetHistory) -> Result<ObjectiveVector, ProblemError> {
    if hist.periods() < 2 {
        return Err(ProblemError::InsufficientData(format!("{} periods", hist.periods())));
    }
    if rho.len() != hist.n_assets() {
        return Err(ProblemError::Dimension { expected: hist.n_assets(), got: rho.len() });
    }
    let t = hist.periods() as f64;
    let psi: Vec<f64> = hist.returns.iter().map(|r| r.iter().zip(rho).map(|(a, w)| a * w).sum()).collect();
    let mean = psi.iter().sum::<f64>() / t;
    let moment = |k: i32| psi.iter().map(|p| (p - mean).powi(k)).sum::<f64>() / t;
    let variance = moment(2);
    let skewness = moment(3);
    let f = match model {
        PortfolioModel::Mvs => vec![-mean, variance, -skewness],
        PortfolioModel::Mvskt => {
            let kurtosis = moment(4);
            let turnover: f64 = (0..hist.n_assets())
                .map(|i| rho[i] * hist.turnovers.iter().map(|row| row[i]).sum::<f64>() / t)
                .sum();
            vec![-mean, variance, -skewness, kurtosis, -turnover]
        }
    };
    ObjectiveVector::new(f).map_err(|e| ProblemError::InsufficientData(e.to_string()))
}

fn read_matrix(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>), ProblemError> {
    let mut text = String::new();
    std::fs::File::open(path)?.read_to_string(&mut text)?;
    parse_matrix(&path.display().to_string(), &text)
}

/// Parses a header-plus-rows numeric CSV. Rows and columns are 1-based in errors
/// (row 1 is the header).
pub fn parse_matrix(source: &str, text: &str) -> Result<(Vec<String>, Vec<Vec<f64>>), ProblemError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(text.as_bytes());
    let mut records = reader.records();
    let header = match records.next() {
        None => return Err(ProblemError::InsufficientData(format!("{source}: empty file"))),
        Some(r) => r.map_err(|e| ProblemError::Csv(format!("{source}: {e}")))?,
    };
    let ids: Vec<String> = header.iter().map(|s| s.trim().to_string()).collect();
    let mut seen = HashSet::new();
    for (column, id) in ids.iter().enumerate() {
        if id.is_empty() || !seen.insert(id.clone()) {
            return Err(ProblemError::Ingestion {
                path: source.into(),
                row: 1,
                column: column + 1,
                reason: format!("duplicate or empty asset id `{id}`"),
            });
        }
    }
    let mut rows = Vec::new();
    for (k, record) in records.enumerate() {
        let row = k + 2;
        let record = record.map_err(|e| ProblemError::Csv(format!("{source}: {e}")))?;
        if record.len() != ids.len() {
            return Err(ProblemError::Ingestion {
                path: source.into(),
                row,
                column: record.len().min(ids.len()) + 1,
                reason: format!("ragged row with {} cells, expected {}", record.len(), ids.len()),
            });
        }
        let mut values = Vec::with_capacity(ids.len());
        for (column, cell) in record.iter().enumerate() {
            let value: f64 = cell.trim().parse().map_err(|_| ProblemError::Ingestion {
                path: source.into(),
                row,
                column: column + 1,
                reason: format!("non-numeric cell `{cell}`"),
            })?;
            if !value.is_finite() {
                return Err(ProblemError::Ingestion { path: source.into(), row, column: column + 1, reason: "non-finite value".into() });
            }
            values.push(value);
        }
        rows.push(values);
    }
    if rows.len() < 2 {
        return Err(ProblemError::InsufficientData(format!("{source}: {} data rows, need at least 2", rows.len())));
    }
    Ok((ids, rows))
}

/// Loads a returns file and a turnovers file with identical shape and header.
pub fn load_asset_history(returns: &Path, turnovers: &Path) -> Result<AssetHistory, ProblemError> {
    let (ids, r) = read_matrix(returns)?;
    let (ids_t, v) = read_matrix(turnovers)?;
    if ids != ids_t {
        return Err(ProblemError::Ingestion {
            path: turnovers.display().to_string(),
            row: 1,
            column: ids.iter().zip(&ids_t).position(|(a, b)| a != b).unwrap_or(ids.len().min(ids_t.len())) + 1,
            reason: "asset ids differ from the returns file".into(),
        });
    }
    if r.len() != v.len() {
        return Err(ProblemError::Ingestion {
            path: turnovers.display().to_string(),
            row: r.len().min(v.len()) + 2,
            column: 1,
            reason: format!("{} rows but the returns file has {}", v.len(), r.len()),
        });
    }
    AssetHistory::new(ids, r, v)
}

// ---------------------------------------------------------------------------
// Analytic fronts

const ZDT3_SEGMENTS: [(f64, f64); 5] = [
    (0.0, 0.083_001_534_9),
    (0.182_228_728_0, 0.257_762_363_4),
    (0.409_313_674_8, 0.453_882_104_1),
    (0.618_396_794_4, 0.652_511_703_8),
    (0.823_331_798_3, 0.851_832_865_4),
];

const ZDT6_F1_MIN: f64 = 0.280_775_319_1;

/// Deterministic samples of the true front.
///
/// Two-objective fronts use `count` points on a uniform grid of the front
/// parameterization; DTLZ fronts use the largest simplex lattice with at most
/// `count` points, scaled (DTLZ1) or projected onto the unit sphere (DTLZ2-4).
pub fn sample_true_front(spec: &ProblemSpec, count: usize) -> Result<Vec<ObjectiveVector>, ProblemError> {
    if spec.family.is_portfolio() {
        return Err(ProblemError::NoAnalyticFront { family: spec.family });
    }
    if count < spec.m {
        return Err(ProblemError::InsufficientData(format!("front sample count {count} below m={}", spec.m)));
    }
    let grid = |k: usize| -> Vec<f64> { (0..k).map(|i| i as f64 / (k - 1) as f64).collect() };
    let points: Vec<Vec<f64>> = match spec.family {
        Family::Zdt1 | Family::Zdt4 => grid(count).into_iter().map(|t| vec![t * t, 1.0 - t]).collect(),
        Family::Zdt2 => grid(count).into_iter().map(|t| vec![t, 1.0 - t * t]).collect(),
        Family::Zdt6 => grid(count)
            .into_iter()
            .map(|t| {
                let f1 = ZDT6_F1_MIN + t * (1.0 - ZDT6_F1_MIN);
                vec![f1, 1.0 - f1 * f1]
            })
            .collect(),
        Family::Zdt3 => {
            let total: f64 = ZDT3_SEGMENTS.iter().map(|(a, b)| b - a).sum();
            let mut out = Vec::with_capacity(count);
            for k in 0..count {
                let mut s = total * k as f64 / (count - 1) as f64;
                let mut f1 = ZDT3_SEGMENTS[4].1;
                for (a, b) in ZDT3_SEGMENTS {
                    if s <= b - a {
                        f1 = a + s;
                        break;
                    }
                    s -= b - a;
                }
                out.push(vec![f1, 1.0 - f1.sqrt() - f1 * (10.0 * PI * f1).sin()]);
            }
            out
        }
        Family::Dtlz1 => lattice_for_count(spec.m, count).into_iter().map(|w| w.into_iter().map(|v| 0.5 * v).collect()).collect(),
        _ => lattice_for_count(spec.m, count)
            .into_iter()
            .map(|w| {
                let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
                w.into_iter().map(|v| v / norm).collect()
            })
            .collect(),
    };
    Ok(points.into_iter().map(|p| ObjectiveVector::new(p).expect("front samples are finite")).collect())
}

fn lattice_for_count(m: usize, count: usize) -> Vec<Vec<f64>> {
    let mut h = 1;
    while crate::scalarize::lattice_size(m, h + 1).is_some_and(|c| c <= count) {
        h += 1;
    }
    das_dennis_points(m, h)
}

/// Residual of the analytic front equation (0 on the front).
pub fn front_residual(family: Family, f: &[f64]) -> f64 {
    match family {
        Family::Zdt1 | Family::Zdt4 => f[1] - (1.0 - f[0].sqrt()),
        Family::Zdt2 => f[1] - (1.0 - f[0] * f[0]),
        Family::Zdt3 => f[1] - (1.0 - f[0].sqrt() - f[0] * (10.0 * PI * f[0]).sin()),
        Family::Zdt6 => f[1] - (1.0 - f[0] * f[0]),
        Family::Dtlz1 => f.iter().sum::<f64>() - 0.5,
        Family::Dtlz2 | Family::Dtlz3 | Family::Dtlz4 => f.iter().map(|v| v * v).sum::<f64>() - 1.0,
        _ => f64::NAN,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zdt1_examples() {
        let spec = ProblemSpec::standard(Family::Zdt1);
        assert_eq!(spec.n(), 30);
        assert_eq!(evaluate(&spec, &vec![0.0; 30]).unwrap().as_slice(), &[0.0, 1.0]);
        let mut x = vec![0.0; 30];
        x[0] = 1.0;
        assert_eq!(evaluate(&spec, &x).unwrap().as_slice(), &[1.0, 0.0]);
    }

    #[test]
    fn dtlz2_example() {
        let spec = ProblemSpec::dtlz(Family::Dtlz2, 3).unwrap();
        assert_eq!(spec.n(), 12);
        let mut x = vec![0.5; 12];
        x[0] = 0.0;
        x[1] = 0.0;
        let f = evaluate(&spec, &x).unwrap();
        assert!((f[0] - 1.0).abs() < 1e-15 && f[1].abs() < 1e-15 && f[2].abs() < 1e-15);
        assert!((f.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn spec_validation() {
        assert!(ProblemSpec::new(Family::Zdt1, Some(3), None).is_err());
        assert!(ProblemSpec::dtlz(Family::Dtlz1, 2).is_err());
        assert!(ProblemSpec::dtlz(Family::Dtlz1, 101).is_err());
        assert_eq!(ProblemSpec::dtlz(Family::Dtlz1, 5).unwrap().n(), 9);
        assert_eq!(ProblemSpec::standard(Family::Zdt4).n(), 10);
        assert!(ProblemSpec::new(Family::Dtlz2, Some(5), Some(4)).is_err());
        let json = serde_json::to_string(&ProblemSpec::dtlz(Family::Dtlz3, 8).unwrap()).unwrap();
        assert_eq!(json, r#"{"family":"dtlz3","m":8,"n":17}"#);
        let back: ProblemSpec = serde_json::from_str(r#"{"family":"zdt6"}"#).unwrap();
        assert_eq!(back.n(), 10);
    }

    #[test]
    fn out_of_bounds_is_rejected() {
        let spec = ProblemSpec::standard(Family::Zdt1);
        let mut x = vec![0.0; 30];
        x[3] = 1.5;
        assert!(matches!(evaluate(&spec, &x), Err(ProblemError::OutOfBounds { index: 3, .. })));
        assert!(matches!(evaluate(&spec, &[0.0; 3]), Err(ProblemError::Dimension { .. })));
    }

    #[test]
    fn optimal_distance_variables_land_on_front() {
        for family in [Family::Zdt1, Family::Zdt2, Family::Zdt3, Family::Zdt4, Family::Zdt6] {
            let spec = ProblemSpec::standard(family);
            for k in 0..=10 {
                let mut x = vec![0.0; spec.n()];
                x[0] = k as f64 / 10.0;
                let f = evaluate(&spec, &x).unwrap();
                assert!(front_residual(family, &f).abs() < 1e-9, "{family} {f}");
            }
        }
        for family in [Family::Dtlz1, Family::Dtlz2, Family::Dtlz3, Family::Dtlz4] {
            for m in [3, 5, 10] {
                let spec = ProblemSpec::dtlz(family, m).unwrap();
                for k in 0..=10 {
                    let mut x = vec![0.5; spec.n()];
                    for (j, v) in x.iter_mut().take(m - 1).enumerate() {
                        *v = ((k + 3 * j) % 11) as f64 / 10.0;
                    }
                    let f = evaluate(&spec, &x).unwrap();
                    assert!(front_residual(family, &f).abs() < 1e-9, "{family} m={m} {f}");
                }
            }
        }
    }

    #[test]
    fn front_samples() {
        let zdt1 = sample_true_front(&ProblemSpec::standard(Family::Zdt1), 3).unwrap();
        let expected = [[0.0, 1.0], [0.25, 0.5], [1.0, 0.0]];
        for (p, e) in zdt1.iter().zip(expected) {
            assert_eq!(p.as_slice(), &e);
        }
        for family in Family::ALL.into_iter().filter(|f| !f.is_portfolio()) {
            let spec = if family.is_dtlz() { ProblemSpec::dtlz(family, 3).unwrap() } else { ProblemSpec::standard(family) };
            let samples = sample_true_front(&spec, 100).unwrap();
            assert!(samples.len() <= 100 && samples.len() >= 3);
            for p in &samples {
                assert!(front_residual(family, p).abs() < 1e-12, "{family} {p}");
            }
            assert_eq!(samples, sample_true_front(&spec, 100).unwrap());
        }
        let dtlz = sample_true_front(&ProblemSpec::dtlz(Family::Dtlz2, 3).unwrap(), 91).unwrap();
        assert_eq!(dtlz.len(), 91);
        assert!(sample_true_front(&ProblemSpec::standard(Family::Zdt1), 1).is_err());
        let port = ProblemSpec::standard(Family::PortfolioMvs);
        assert!(matches!(sample_true_front(&port, 10), Err(ProblemError::NoAnalyticFront { .. })));
    }

    fn two_asset() -> AssetHistory {
        AssetHistory::new(
            vec!["A".into(), "B".into()],
            vec![vec![0.1, 0.0], vec![0.2, 0.1], vec![0.0, 0.2]],
            vec![vec![0.3, 0.5], vec![0.3, 0.5], vec![0.3, 0.5]],
        )
        .unwrap()
    }

    #[test]
    fn portfolio_moments_by_hand() {
        let hist = two_asset();
        let f = evaluate_portfolio(PortfolioModel::Mvskt, &[0.5, 0.5], &hist).unwrap();
        let rel = |a: f64, b: f64| ((a - b) / b).abs();
        assert!(rel(-f[0], 0.1) < 1e-9);
        assert!(rel(f[1], 0.005 / 3.0) < 1e-9);
        assert!(f[2].abs() < 1e-15);
        assert!(rel(f[3], 2.0 * 0.05f64.powi(4) / 3.0) < 1e-9);
        assert!(rel(-f[4], 0.4) < 1e-12);
        let mvs = evaluate_portfolio(PortfolioModel::Mvs, &[0.5, 0.5], &hist).unwrap();
        assert_eq!(mvs.len(), 3);
    }

    #[test]
    fn portfolio_needs_two_periods() {
        let err = AssetHistory::new(vec!["A".into(), "B".into()], vec![vec![0.1, 0.2]], vec![vec![0.1, 0.2]]);
        assert!(matches!(err, Err(ProblemError::InsufficientData(_))));
    }

    #[test]
    fn repair_examples() {
        assert_eq!(repair_to_simplex(&[0.2, 0.2]), vec![0.5, 0.5]);
        assert_eq!(repair_to_simplex(&[-1.0, 3.0]), vec![0.0, 1.0]);
        assert_eq!(repair_to_simplex(&[0.0, 0.0, 0.0]), vec![1.0 / 3.0; 3]);
    }

    #[test]
    fn csv_ingestion() {
        let (ids, rows) = parse_matrix("r.csv", "A,B\n0.1,0.0\n0.2,0.1\n0.0,0.2\n").unwrap();
        assert_eq!(ids, vec!["A", "B"]);
        assert_eq!(rows.len(), 3);

        let err = parse_matrix("r.csv", "A,B\n0.1,0.0\n0.2,x\n").unwrap_err().to_string();
        assert!(err.contains("row 3, column 2"), "{err}");
        assert!(matches!(parse_matrix("r.csv", ""), Err(ProblemError::InsufficientData(_))));
        let ragged = parse_matrix("r.csv", "A,B\n0.1,0.0\n0.2\n").unwrap_err().to_string();
        assert!(ragged.contains("row 3"), "{ragged}");
        assert!(parse_matrix("r.csv", "A,A\n0.1,0.0\n0.2,0.1\n").is_err());
    }

    #[test]
    fn csv_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let hist = AssetHistory::synthetic(6, 40, 3).unwrap();
        let (r, t) = (dir.path().join("returns.csv"), dir.path().join("turnovers.csv"));
        hist.write_csv(&r, &t).unwrap();
        let back = load_asset_history(&r, &t).unwrap();
        assert_eq!(back.asset_ids(), hist.asset_ids());
        assert_eq!(back.periods(), 40);
        for (a, b) in back.returns().iter().flatten().zip(hist.returns().iter().flatten()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn portfolio_problem_evaluates_native_orientation() {
        let hist = Arc::new(two_asset());
        let p = Problem::portfolio(Family::PortfolioMvs, hist).unwrap();
        assert_eq!(p.spec().n(), 2);
        let f = p.evaluate(&[1.0, 1.0]).unwrap();
        let native = p.to_native(&f);
        assert!((native[0] - 0.1).abs() < 1e-12);
        assert!(native[1] > 0.0);
    }

    proptest! {
        #[test]
        fn repaired_weights_are_on_simplex(x in prop::collection::vec(-5.0f64..5.0, 1..30)) {
            let w = repair_to_simplex(&x);
            prop_assert!(w.iter().all(|&v| v >= 0.0));
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn portfolio_moments_scale(c in 0.1f64..5.0, seed in 0u64..1000) {
            let hist = AssetHistory::synthetic(4, 30, seed).unwrap();
            let scaled = AssetHistory::new(
                hist.asset_ids().to_vec(),
                hist.returns().iter().map(|r| r.iter().map(|v| v * c).collect()).collect(),
                hist.turnovers().to_vec(),
            ).unwrap();
            let rho = [0.1, 0.2, 0.3, 0.4];
            let a = evaluate_portfolio(PortfolioModel::Mvskt, &rho, &hist).unwrap();
            let b = evaluate_portfolio(PortfolioModel::Mvskt, &rho, &scaled).unwrap();
            for (k, power) in [(0, 1), (1, 2), (2, 3), (3, 4)] {
                let expected = a[k] * c.powi(power);
                prop_assert!(((b[k] - expected) / expected).abs() < 1e-9, "moment {} {} vs {}", k, b[k], expected);
            }
        }

        #[test]
        fn evaluation_is_deterministic(x in prop::collection::vec(0.0f64..1.0, 12)) {
            let spec = ProblemSpec::dtlz(Family::Dtlz3, 3).unwrap();
            prop_assert_eq!(evaluate(&spec, &x).unwrap(), evaluate(&spec, &x).unwrap());
        }
    }
}
