//! Scalarizing functions, reference-point preference relations and weight
//! vector generation / transformation.

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pareto::{pareto_compare, Dominance};

/// Zero weights are replaced by this in the Tchebycheff function.
pub const MIN_WEIGHT: f64 = 1e-6;

/// Largest weight set [`das_dennis`] will build.
pub const MAX_LATTICE: usize = 5_000_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WeightError {
    #[error("need m >= 2 and H >= 1, got m={m}, H={h}")]
    BadLattice { m: usize, h: usize },
    #[error("lattice for m={m}, H={h} exceeds {MAX_LATTICE} vectors")]
    Overflow { m: usize, h: usize },
    #[error("weights must be non-negative and sum to 1, got {0:?}")]
    NotOnSimplex(Vec<f64>),
    #[error("reference point has {got} weights for {expected} objectives")]
    Arity { expected: usize, got: usize },
    #[error("reference point entries must be finite")]
    NonFinite,
}

/// A decision maker's aspiration levels with per-objective weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferencePoint {
    pub z: Vec<f64>,
    pub weights: Vec<f64>,
}

impl ReferencePoint {
    /// Equal weights `1/m`.
    pub fn new(z: Vec<f64>) -> Result<Self, WeightError> {
        let m = z.len();
        Self::with_weights(z, vec![1.0 / m as f64; m])
    }

    pub fn with_weights(z: Vec<f64>, weights: Vec<f64>) -> Result<Self, WeightError> {
        if weights.len() != z.len() {
            return Err(WeightError::Arity { expected: z.len(), got: weights.len() });
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(WeightError::NonFinite);
        }
        check_simplex(&weights)?;
        Ok(Self { z, weights })
    }

    pub fn dim(&self) -> usize {
        self.z.len()
    }
}

fn check_simplex(w: &[f64]) -> Result<(), WeightError> {
    let sum: f64 = w.iter().sum();
    if w.iter().any(|&v| !(v >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
        return Err(WeightError::NotOnSimplex(w.to_vec()));
    }
    Ok(())
}

/// A point of the unit simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn new(w: Vec<f64>) -> Result<Self, WeightError> {
        check_simplex(&w)?;
        Ok(Self(w))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for WeightVector {
    type Error = WeightError;

    fn try_from(w: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(w)
    }
}

impl From<WeightVector> for Vec<f64> {
    fn from(w: WeightVector) -> Self {
        w.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightStructure {
    Uniform,
    Biased,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSet {
    pub vectors: Vec<Vec<f64>>,
    pub structure: WeightStructure,
}

impl WeightSet {
    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.first().map_or(0, Vec::len)
    }
}

/// `max_i |f_i - z*_i| / w_i`, with zero weights replaced by [`MIN_WEIGHT`].
pub fn tchebycheff(f: &[f64], w: &[f64], z_star: &[f64]) -> f64 {
    f.iter()
        .zip(w.iter().zip(z_star))
        .map(|(&fi, (&wi, &zi))| (fi - zi).abs() / if wi == 0.0 { MIN_WEIGHT } else { wi })
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Range-normalized weighted Euclidean distance from `f` to the reference point.
/// Dimensions whose range is degenerate contribute nothing.
pub fn weighted_distance(f: &[f64], zr: &ReferencePoint, fmin: &[f64], fmax: &[f64]) -> f64 {
    let mut sum = 0.0;
    for i in 0..f.len() {
        let range = fmax[i] - fmin[i];
        if range > 0.0 {
            let d = (f[i] - zr.z[i]) / range;
            sum += zr.weights[i] * d * d;
        }
    }
    sum.sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RDominance {
    ARDominates,
    BRDominates,
    Neither,
}

/// Distance extrema that normalize the r-dominance threshold test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistanceRange {
    pub min: f64,
    pub max: f64,
}

impl DistanceRange {
    pub fn of(distances: &[f64]) -> Self {
        let min = distances.iter().copied().fold(f64::INFINITY, f64::min);
        let max = distances.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Self { min, max }
    }
}

/// r-dominance from precomputed distances to the reference point.
pub fn r_compare_distances(a: &[f64], b: &[f64], dist_a: f64, dist_b: f64, delta: f64, range: DistanceRange) -> RDominance {
    match pareto_compare(a, b) {
        Dominance::ADominates => RDominance::ARDominates,
        Dominance::BDominates => RDominance::BRDominates,
        Dominance::Equal => RDominance::Neither,
        Dominance::Incomparable => {
            let span = range.max - range.min;
            if !(span > 0.0) {
                return RDominance::Neither;
            }
            let diff = (dist_a - dist_b) / span;
            if diff < -delta {
                RDominance::ARDominates
            } else if -diff < -delta {
                RDominance::BRDominates
            } else {
                RDominance::Neither
            }
        }
    }
}

/// r-dominance between two objective vectors.
pub fn r_compare(a: &[f64], b: &[f64], zr: &ReferencePoint, delta: f64, fmin: &[f64], fmax: &[f64], range: DistanceRange) -> RDominance {
    let da = weighted_distance(a, zr, fmin, fmax);
    let db = weighted_distance(b, zr, fmin, fmax);
    r_compare_distances(a, b, da, db, delta, range)
}

/// 1 when `f` satisfies all aspiration levels or none of them, else 0.
pub fn g_flag(f: &[f64], z: &[f64]) -> u8 {
    let all_better = f.iter().zip(z).all(|(a, b)| a <= b);
    let all_worse = f.iter().zip(z).all(|(a, b)| a >= b);
    u8::from(all_better || all_worse)
}

/// Augmented Tchebycheff achievement scalarizing function.
pub fn augmented_asf(f: &[f64], z: &[f64], w: &[f64], rho_aug: f64) -> f64 {
    let mut worst = f64::NEG_INFINITY;
    let mut sum = 0.0;
    for i in 0..f.len() {
        let d = f[i] - z[i];
        worst = worst.max(w[i] * d);
        sum += d;
    }
    worst + rho_aug * sum
}

/// `C(h + m - 1, m - 1)`, or `None` past [`MAX_LATTICE`].
pub fn lattice_size(m: usize, h: usize) -> Option<usize> {
    if m == 0 {
        return Some(0);
    }
    let k = (m - 1).min(h);
    let n = h + m - 1;
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > MAX_LATTICE as u128 {
            return None;
        }
    }
    Some(acc as usize)
}

/// Simplex-lattice weights in lexicographic order. Callers check the size first.
pub(crate) fn das_dennis_points(m: usize, h: usize) -> Vec<Vec<f64>> {
    fn recurse(m: usize, h: usize, left: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<f64>>) {
        if prefix.len() == m - 1 {
            prefix.push(left);
            out.push(prefix.iter().map(|&k| k as f64 / h as f64).collect());
            prefix.pop();
            return;
        }
        for k in 0..=left {
            prefix.push(k);
            recurse(m, h, left - k, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    recurse(m, h, h, &mut Vec::with_capacity(m), &mut out);
    out
}

/// Uniform simplex lattice with `H` divisions per objective.
pub fn das_dennis(m: usize, h: usize) -> Result<WeightSet, WeightError> {
    if m < 2 || h < 1 {
        return Err(WeightError::BadLattice { m, h });
    }
    lattice_size(m, h).ok_or(WeightError::Overflow { m, h })?;
    Ok(WeightSet { vectors: das_dennis_points(m, h), structure: WeightStructure::Uniform })
}

/// Largest `H` whose lattice has at most `count` vectors (at least 1).
pub fn divisions_for(m: usize, count: usize) -> usize {
    let mut h = 1;
    while lattice_size(m, h + 1).is_some_and(|c| c <= count) {
        h += 1;
    }
    h
}

/// `count` weights drawn uniformly from the simplex (normalized exponentials).
/// Used in place of a lattice for very many objectives.
pub fn uniform_random_weights<R: Rng + ?Sized>(m: usize, count: usize, rng: &mut R) -> WeightSet {
    let vectors = (0..count)
        .map(|_| {
            let e: Vec<f64> = (0..m).map(|_| Exp1.sample(rng)).collect();
            let s: f64 = e.iter().sum();
            e.into_iter().map(|v| v / s).collect()
        })
        .collect();
    WeightSet { vectors, structure: WeightStructure::Uniform }
}

/// Projects a reference point onto the unit simplex after normalizing it by
/// the ideal and nadir estimates. Negative coordinates clamp to 0; an all-zero
/// result falls back to the centroid.
pub fn simplex_projection(z: &[f64], ideal: &[f64], nadir: &[f64]) -> Vec<f64> {
    let shifted: Vec<f64> = z
        .iter()
        .zip(ideal.iter().zip(nadir))
        .map(|(&v, (&lo, &hi))| {
            let range = hi - lo;
            let t = if range > 0.0 { (v - lo) / range } else { 0.0 };
            t.max(0.0)
        })
        .collect();
    let sum: f64 = shifted.iter().sum();
    if sum > 0.0 && sum.is_finite() {
        shifted.into_iter().map(|v| v / sum).collect()
    } else {
        vec![1.0 / z.len() as f64; z.len()]
    }
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Non-uniform mapping that pulls a weight set towards `pivot`.
///
/// The lattice point nearest the pivot is replaced by the pivot, then every
/// `w` maps to `pivot + tau * (d / d_max)^(kappa - 1) * (w - pivot)` with
/// `d = |w - pivot|`. `tau` sets the extent of the biased region and `kappa`
/// how strongly vectors concentrate near the pivot.
pub fn nums_transform(ws: &WeightSet, pivot: &[f64], tau: f64, kappa: f64) -> WeightSet {
    let mut vectors = ws.vectors.clone();
    if vectors.is_empty() {
        return ws.clone();
    }
    let nearest = (0..vectors.len())
        .min_by(|&a, &b| euclid(&vectors[a], pivot).total_cmp(&euclid(&vectors[b], pivot)))
        .expect("non-empty");
    let d_max = vectors.iter().map(|w| euclid(w, pivot)).fold(0.0, f64::max);
    if !(d_max > 0.0) {
        return ws.clone();
    }
    vectors[nearest] = pivot.to_vec();
    for w in vectors.iter_mut() {
        let d = euclid(w, pivot);
        let scale = tau * (d / d_max).powf(kappa - 1.0);
        for (wi, &ci) in w.iter_mut().zip(pivot) {
            *wi = (ci + scale * (*wi - ci)).max(0.0);
        }
        let s: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= s);
    }
    WeightSet { vectors, structure: WeightStructure::Biased }
}

/// Redraws every weight except the one nearest `best_w` uniformly in the L∞
/// ball of `radius` around `best_w`, then clamps and renormalizes to the simplex.
/// The nearest slot takes `best_w` itself.
pub fn rmead2_resample<R: Rng + ?Sized>(ws: &WeightSet, best_w: &[f64], radius: f64, rng: &mut R) -> WeightSet {
    let anchor = (0..ws.len())
        .min_by(|&a, &b| euclid(&ws.vectors[a], best_w).total_cmp(&euclid(&ws.vectors[b], best_w)))
        .unwrap_or(0);
    let vectors = (0..ws.len())
        .map(|i| {
            if i == anchor {
                return best_w.to_vec();
            }
            let mut w: Vec<f64> = best_w
                .iter()
                .map(|&c| (c + radius * (2.0 * rng.random::<f64>() - 1.0)).max(0.0))
                .collect();
            let s: f64 = w.iter().sum();
            if s > 0.0 {
                w.iter_mut().for_each(|v| *v /= s);
                w
            } else {
                best_w.to_vec()
            }
        })
        .collect();
    WeightSet { vectors, structure: WeightStructure::Biased }
}
