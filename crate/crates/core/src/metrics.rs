//! Quality indicators: approximation accuracy E(P), IGD, hypervolume,
//! the reference-point aware R-IGD / R-HV, Wilcoxon signed-rank test and
//! per-instance rank tables.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::pareto::{dominates, fast_nondominated_sort};
use crate::scalarize::{augmented_asf, ReferencePoint};

/// Monte Carlo sample count for hypervolume with more than four objectives.
pub const HV_MC_SAMPLES: usize = 100_000;
pub const HV_MC_SEED: u64 = 0x5eed_4a11;
/// Largest dimension handled by the exact hypervolume recursion.
pub const HV_EXACT_MAX_DIM: usize = 4;
pub const DEFAULT_DELTA_EXTENT: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("{0} must not be empty")]
    Empty(&'static str),
    #[error("dimension mismatch: {0} vs {1}")]
    Dimension(usize, usize),
    #[error("paired samples differ in length ({0} vs {1})")]
    Unpaired(usize, usize),
    #[error("{0} non-zero differences, need at least 5")]
    TooFewPairs(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MetricId {
    #[serde(rename = "EP")]
    Ep,
    #[serde(rename = "IGD")]
    Igd,
    #[serde(rename = "HV")]
    Hv,
    #[serde(rename = "R_IGD")]
    RIgd,
    #[serde(rename = "R_HV")]
    RHv,
}

impl MetricId {
    pub const ALL: [MetricId; 5] = [MetricId::Ep, MetricId::Igd, MetricId::Hv, MetricId::RIgd, MetricId::RHv];

    pub fn orientation(self) -> Orientation {
        match self {
            MetricId::Hv | MetricId::RHv => Orientation::Maximize,
            _ => Orientation::Minimize,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MetricId::Ep => "EP",
            MetricId::Igd => "IGD",
            MetricId::Hv => "HV",
            MetricId::RIgd => "R_IGD",
            MetricId::RHv => "R_HV",
        }
    }
}

impl fmt::Display for MetricId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for MetricId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.to_ascii_uppercase().replace('-', "_");
        MetricId::ALL.into_iter().find(|m| m.name() == norm).ok_or_else(|| format!("unknown metric `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Orientation {
    Minimize,
    Maximize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricContext {
    pub problem: String,
    pub algorithm: String,
    pub reference: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub metric: MetricId,
    /// `+inf` is serialized as `null` (a degenerate R-IGD).
    #[serde(with = "nullable_f64")]
    pub value: f64,
    pub context: MetricContext,
}

pub(crate) mod nullable_f64 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestOutcome {
    pub statistic: f64,
    pub p_value: f64,
    pub significant: bool,
}

fn check_dims<V: AsRef<[f64]>>(points: &[V], m: usize) -> Result<(), MetricError> {
    for p in points {
        if p.as_ref().len() != m {
            return Err(MetricError::Dimension(p.as_ref().len(), m));
        }
    }
    Ok(())
}

/// `min_{f in P} max_i (f_i - z_i) / w_i`.
pub fn ep_accuracy<V: AsRef<[f64]>>(points: &[V], zr: &ReferencePoint) -> Result<f64, MetricError> {
    if points.is_empty() {
        return Err(MetricError::Empty("approximation set"));
    }
    check_dims(points, zr.dim())?;
    Ok(points
        .iter()
        .map(|p| {
            p.as_ref()
                .iter()
                .zip(zr.z.iter().zip(&zr.weights))
                .map(|(f, (z, w))| (f - z) / w)
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .fold(f64::INFINITY, f64::min))
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Mean distance from each front sample to its nearest member of `points`.
pub fn igd<V: AsRef<[f64]>, W: AsRef<[f64]>>(points: &[V], samples: &[W]) -> Result<f64, MetricError> {
    if points.is_empty() {
        return Err(MetricError::Empty("approximation set"));
    }
    if samples.is_empty() {
        return Err(MetricError::Empty("front samples"));
    }
    let m = samples[0].as_ref().len();
    check_dims(points, m)?;
    check_dims(samples, m)?;
    let total: f64 = samples
        .iter()
        .map(|s| points.iter().map(|p| euclid(p.as_ref(), s.as_ref())).fold(f64::INFINITY, f64::min))
        .sum();
    Ok(total / samples.len() as f64)
}

/// Members strictly better than `reference` in every objective, first front only.
fn contributing<V: AsRef<[f64]>>(points: &[V], reference: &[f64]) -> Vec<Vec<f64>> {
    let inside: Vec<Vec<f64>> = points
        .iter()
        .map(|p| p.as_ref())
        .filter(|p| p.iter().zip(reference).all(|(a, r)| a < r))
        .map(<[f64]>::to_vec)
        .collect();
    if inside.is_empty() {
        return inside;
    }
    let mut front: Vec<Vec<f64>> = fast_nondominated_sort(&inside)[0].iter().map(|&i| inside[i].clone()).collect();
    front.sort_by(|a, b| a.iter().zip(b).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal));
    front.dedup();
    front
}

fn hv_2d(points: &mut [Vec<f64>], reference: &[f64]) -> f64 {
    points.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    let mut volume = 0.0;
    let mut best_y = reference[1];
    for p in points.iter() {
        if p[1] < best_y {
            volume += (reference[0] - p[0]) * (best_y - p[1]);
            best_y = p[1];
        }
    }
    volume
}

/// Slices along the last objective and recurses on the prefix dimensions.
fn hv_recursive(points: &[Vec<f64>], reference: &[f64]) -> f64 {
    let m = reference.len();
    if points.is_empty() {
        return 0.0;
    }
    if m == 1 {
        return reference[0] - points.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
    }
    if m == 2 {
        return hv_2d(&mut points.to_vec(), reference);
    }
    let last = m - 1;
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| a[last].total_cmp(&b[last]));
    let mut volume = 0.0;
    let mut slice: Vec<Vec<f64>> = Vec::new();
    for (k, p) in sorted.iter().enumerate() {
        let projected = p[..last].to_vec();
        if !slice.iter().any(|q| q.iter().zip(&projected).all(|(a, b)| a <= b)) {
            slice.retain(|q| !dominates(&projected, q));
            slice.push(projected);
        }
        let next = sorted.get(k + 1).map_or(reference[last], |q| q[last]);
        let depth = next - p[last];
        if depth > 0.0 {
            volume += depth * hv_recursive(&slice, &reference[..last]);
        }
    }
    volume
}

pub fn hypervolume_exact<V: AsRef<[f64]>>(points: &[V], reference: &[f64]) -> f64 {
    hv_recursive(&contributing(points, reference), reference)
}

/// Uniform sampling of the box spanned by the contributing members and `reference`.
pub fn hypervolume_monte_carlo<V: AsRef<[f64]>>(points: &[V], reference: &[f64], samples: usize, seed: u64) -> f64 {
    let pts = contributing(points, reference);
    if pts.is_empty() || samples == 0 {
        return 0.0;
    }
    let m = reference.len();
    let lower: Vec<f64> = (0..m).map(|i| pts.iter().map(|p| p[i]).fold(f64::INFINITY, f64::min)).collect();
    let box_volume: f64 = lower.iter().zip(reference).map(|(l, r)| r - l).product();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sample = vec![0.0; m];
    let mut hits = 0usize;
    for _ in 0..samples {
        for i in 0..m {
            sample[i] = lower[i] + rng.random::<f64>() * (reference[i] - lower[i]);
        }
        if pts.iter().any(|p| p.iter().zip(&sample).all(|(a, s)| a <= s)) {
            hits += 1;
        }
    }
    box_volume * hits as f64 / samples as f64
}

/// How a hypervolume value was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum HvMethod {
    Exact,
    MonteCarlo { samples: usize, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HvReport {
    pub value: f64,
    #[serde(flatten)]
    pub method: HvMethod,
}

/// Exact up to four objectives, seeded Monte Carlo beyond.
pub fn hypervolume_report<V: AsRef<[f64]>>(points: &[V], reference: &[f64], seed: u64) -> HvReport {
    if reference.len() <= HV_EXACT_MAX_DIM {
        HvReport { value: hypervolume_exact(points, reference), method: HvMethod::Exact }
    } else {
        HvReport {
            value: hypervolume_monte_carlo(points, reference, HV_MC_SAMPLES, seed),
            method: HvMethod::MonteCarlo { samples: HV_MC_SAMPLES, seed },
        }
    }
}

/// Volume dominated by `points` and bounded by `reference`; members not
/// strictly better than `reference` are ignored.
pub fn hypervolume<V: AsRef<[f64]>>(points: &[V], reference: &[f64]) -> f64 {
    hypervolume_report(points, reference, HV_MC_SEED).value
}

/// Output of the R-metric preprocessing pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RPreprocessed {
    pub pivot: Vec<f64>,
    /// Members inside the box around the pivot, before translation.
    pub trimmed: Vec<Vec<f64>>,
    pub translated: Vec<Vec<f64>>,
    /// Front samples in the box around the best sample, when samples were given.
    pub samples: Option<Vec<Vec<f64>>>,
    pub degenerate: bool,
}

/// Achievement function of the R-metric: weights `1 / (worst_i - z_i)` so that
/// iso-value corners lie on the line from `z` through `worst`.
fn line_asf(f: &[f64], z: &[f64], worst: &[f64]) -> Option<f64> {
    let w: Vec<f64> = z.iter().zip(worst).map(|(z, w)| w - z).collect();
    if w.iter().any(|&d| !(d > 0.0)) {
        return None;
    }
    let inv: Vec<f64> = w.iter().map(|d| 1.0 / d).collect();
    Some(augmented_asf(f, z, &inv, 0.0))
}

fn argmin_asf(points: &[Vec<f64>], z: &[f64], worst: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, p) in points.iter().enumerate() {
        let v = line_asf(p, z, worst)?;
        if best.is_none_or(|(_, b)| v < b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

fn in_box(p: &[f64], center: &[f64], half: f64) -> bool {
    p.iter().zip(center).all(|(a, c)| (a - c).abs() <= half)
}

/// Pivot selection, trimming to the L∞ box of half-width `delta_extent / 2`
/// around the pivot, and rigid translation of the survivors so the pivot lands
/// on its iso-achievement position along the line from `zr` to `worst`.
pub fn r_preprocess<V: AsRef<[f64]>, W: AsRef<[f64]>>(
    points: &[V],
    zr: &ReferencePoint,
    delta_extent: f64,
    worst: &[f64],
    front_samples: Option<&[W]>,
) -> Result<RPreprocessed, MetricError> {
    if points.is_empty() {
        return Err(MetricError::Empty("approximation set"));
    }
    check_dims(points, zr.dim())?;
    if worst.len() != zr.dim() {
        return Err(MetricError::Dimension(worst.len(), zr.dim()));
    }
    let pts: Vec<Vec<f64>> = points.iter().map(|p| p.as_ref().to_vec()).collect();
    let degenerate = |pivot: Vec<f64>| RPreprocessed { pivot, trimmed: vec![], translated: vec![], samples: None, degenerate: true };
    let Some(pivot_index) = argmin_asf(&pts, &zr.z, worst) else {
        return Ok(degenerate(vec![]));
    };
    let pivot = pts[pivot_index].clone();
    let half = delta_extent / 2.0;
    let trimmed: Vec<Vec<f64>> = pts.iter().filter(|p| in_box(p, &pivot, half)).cloned().collect();
    if trimmed.is_empty() {
        return Ok(degenerate(pivot));
    }
    let k = line_asf(&pivot, &zr.z, worst).expect("checked by argmin_asf");
    let shift: Vec<f64> = (0..pivot.len()).map(|i| zr.z[i] + k * (worst[i] - zr.z[i]) - pivot[i]).collect();
    let translated: Vec<Vec<f64>> = trimmed.iter().map(|p| p.iter().zip(&shift).map(|(a, s)| a + s).collect()).collect();
    let samples = match front_samples {
        None => None,
        Some(s) => {
            check_dims(s, zr.dim())?;
            let all: Vec<Vec<f64>> = s.iter().map(|p| p.as_ref().to_vec()).collect();
            let center = argmin_asf(&all, &zr.z, worst).map(|i| all[i].clone());
            Some(center.map_or_else(Vec::new, |c| all.iter().filter(|p| in_box(p, &c, half)).cloned().collect()))
        }
    };
    let degenerate = samples.as_ref().is_some_and(Vec::is_empty);
    Ok(RPreprocessed { pivot, trimmed, translated, samples, degenerate })
}

/// IGD after R-metric preprocessing; `+inf` when preprocessing degenerates.
pub fn r_igd<V: AsRef<[f64]>, W: AsRef<[f64]>>(
    points: &[V],
    zr: &ReferencePoint,
    delta_extent: f64,
    worst: &[f64],
    front_samples: &[W],
) -> Result<f64, MetricError> {
    if front_samples.is_empty() {
        return Err(MetricError::Empty("front samples"));
    }
    let pre = r_preprocess(points, zr, delta_extent, worst, Some(front_samples))?;
    if pre.degenerate {
        return Ok(f64::INFINITY);
    }
    igd(&pre.translated, pre.samples.as_deref().unwrap_or_default())
}

/// Hypervolume after R-metric preprocessing, bounded by `worst`; 0 when degenerate.
pub fn r_hv<V: AsRef<[f64]>>(points: &[V], zr: &ReferencePoint, delta_extent: f64, worst: &[f64]) -> Result<f64, MetricError> {
    let pre = r_preprocess::<V, Vec<f64>>(points, zr, delta_extent, worst, None)?;
    if pre.degenerate {
        return Ok(0.0);
    }
    Ok(hypervolume(&pre.translated, worst))
}

/// Midranks of `values` (1-based), averaged over ties.
fn midranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Two-sided Wilcoxon signed-rank test of `a - b`.
///
/// Zero differences are dropped. Up to 25 pairs the exact null distribution is
/// enumerated (midranks for ties); beyond that a tie-corrected normal
/// approximation with continuity correction is used.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64], alpha: f64) -> Result<TestOutcome, MetricError> {
    if a.len() != b.len() {
        return Err(MetricError::Unpaired(a.len(), b.len()));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|d| *d != 0.0).collect();
    let n = diffs.len();
    if n == 0 {
        return Ok(TestOutcome { statistic: 0.0, p_value: 1.0, significant: false });
    }
    if n < 5 {
        return Err(MetricError::TooFewPairs(n));
    }
    let ranks = midranks(&diffs.iter().map(|d| d.abs()).collect::<Vec<_>>());
    let w_plus: f64 = diffs.iter().zip(&ranks).filter(|(d, _)| **d > 0.0).map(|(_, r)| r).sum();

    let p_value = if n <= 25 {
        // Doubled midranks are integers.
        let doubled: Vec<usize> = ranks.iter().map(|r| (r * 2.0).round() as usize).collect();
        let max_sum: usize = doubled.iter().sum();
        let mut counts = vec![0.0f64; max_sum + 1];
        counts[0] = 1.0;
        for &r in &doubled {
            for s in (r..=max_sum).rev() {
                counts[s] += counts[s - r];
            }
        }
        let observed = (w_plus * 2.0).round() as usize;
        let total = 2f64.powi(n as i32);
        let lower: f64 = counts[..=observed].iter().sum::<f64>() / total;
        let upper: f64 = counts[observed..].iter().sum::<f64>() / total;
        (2.0 * lower.min(upper)).min(1.0)
    } else {
        let nf = n as f64;
        let mean = nf * (nf + 1.0) / 4.0;
        let mut tie_term = 0.0;
        let mut sorted = ranks.clone();
        sorted.sort_by(f64::total_cmp);
        let mut i = 0;
        while i < n {
            let j = sorted[i..].iter().take_while(|r| **r == sorted[i]).count();
            let t = j as f64;
            tie_term += t * t * t - t;
            i += j;
        }
        let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
        if var <= 0.0 {
            1.0
        } else {
            let diff = w_plus - mean;
            let corrected = (diff.abs() - 0.5).max(0.0);
            let z = corrected / var.sqrt();
            let normal = Normal::new(0.0, 1.0).expect("standard normal");
            (2.0 * (1.0 - normal.cdf(z))).min(1.0)
        }
    };
    Ok(TestOutcome { statistic: w_plus, p_value, significant: p_value < alpha })
}

/// Ranks algorithms (rows) within each instance (column); rank 1 is best and
/// ties share the lowest rank of their group.
pub fn rank_table(values: &[Vec<f64>], orientation: Orientation) -> Vec<Vec<usize>> {
    let rows = values.len();
    let cols = values.first().map_or(0, Vec::len);
    let mut ranks = vec![vec![0; cols]; rows];
    for c in 0..cols {
        for r in 0..rows {
            let v = values[r][c];
            let better = (0..rows)
                .filter(|&o| {
                    let w = values[o][c];
                    match orientation {
                        Orientation::Minimize => w < v,
                        Orientation::Maximize => w > v,
                    }
                })
                .count();
            ranks[r][c] = better + 1;
        }
    }
    ranks
}
