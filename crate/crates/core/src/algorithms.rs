//! The generational engine behind all nine algorithms, the variation
//! operators and the selection schemes specific to each algorithm.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::ep_accuracy;
use crate::pareto::{cmp_f64, crowding_distance, dominates, fast_nondominated_sort, sort_by_relation, BoxBounds, Population, Solution};
use crate::problems::{Problem, ProblemError};
use crate::scalarize::{
    augmented_asf, das_dennis, divisions_for, g_flag, nums_transform, r_compare_distances, rmead2_resample, simplex_projection,
    tchebycheff, uniform_random_weights, weighted_distance, DistanceRange, RDominance, ReferencePoint, WeightSet, WeightStructure,
};

/// Lattices are replaced by random simplex sampling from this many objectives on.
pub const RANDOM_WEIGHTS_FROM_M: usize = 25;

#[derive(Debug, Error)]
pub enum AlgorithmError {
    #[error("budget {budget} is smaller than the population size {population}")]
    Budget { budget: usize, population: usize },
    #[error("population size must be at least 4, got {0}")]
    PopulationSize(usize),
    #[error("{kind} needs {expected} reference point(s), got {got}")]
    ReferenceCount { kind: AlgorithmKind, expected: &'static str, got: usize },
    #[error("reference point has {got} objectives, problem has {expected}")]
    ReferenceDimension { expected: usize, got: usize },
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error(transparent)]
    Problem(#[from] ProblemError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AlgorithmKind {
    #[serde(rename = "nsga3")]
    Nsga3,
    #[serde(rename = "ibea")]
    Ibea,
    #[serde(rename = "moead")]
    Moead,
    /// R-NSGA-II (weighted distance with ε-clearing).
    #[serde(rename = "rnsga2")]
    RNsga2,
    /// r-NSGA-II (r-dominance).
    #[serde(rename = "rdom-nsga2")]
    RDomNsga2,
    #[serde(rename = "gnsga2")]
    GNsga2,
    #[serde(rename = "pbea")]
    Pbea,
    #[serde(rename = "rmead2")]
    Rmead2,
    #[serde(rename = "moead-nums")]
    MoeadNums,
}

impl AlgorithmKind {
    pub const ALL: [AlgorithmKind; 9] = [
        AlgorithmKind::Nsga3,
        AlgorithmKind::Ibea,
        AlgorithmKind::Moead,
        AlgorithmKind::RNsga2,
        AlgorithmKind::RDomNsga2,
        AlgorithmKind::GNsga2,
        AlgorithmKind::Pbea,
        AlgorithmKind::Rmead2,
        AlgorithmKind::MoeadNums,
    ];

    pub fn id(self) -> &'static str {
        match self {
            AlgorithmKind::Nsga3 => "nsga3",
            AlgorithmKind::Ibea => "ibea",
            AlgorithmKind::Moead => "moead",
            AlgorithmKind::RNsga2 => "rnsga2",
            AlgorithmKind::RDomNsga2 => "rdom-nsga2",
            AlgorithmKind::GNsga2 => "gnsga2",
            AlgorithmKind::Pbea => "pbea",
            AlgorithmKind::Rmead2 => "rmead2",
            AlgorithmKind::MoeadNums => "moead-nums",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            AlgorithmKind::Nsga3 => "NSGA-III",
            AlgorithmKind::Ibea => "IBEA",
            AlgorithmKind::Moead => "MOEA/D",
            AlgorithmKind::RNsga2 => "R-NSGA-II",
            AlgorithmKind::RDomNsga2 => "r-NSGA-II",
            AlgorithmKind::GNsga2 => "g-NSGA-II",
            AlgorithmKind::Pbea => "PBEA",
            AlgorithmKind::Rmead2 => "RMEAD2",
            AlgorithmKind::MoeadNums => "MOEA/D-NUMS",
        }
    }

    pub fn is_preference_based(self) -> bool {
        !matches!(self, AlgorithmKind::Nsga3 | AlgorithmKind::Ibea | AlgorithmKind::Moead)
    }

    /// Kinds that accept a whole set of reference points.
    pub fn accepts_many_references(self) -> bool {
        matches!(self, AlgorithmKind::RNsga2 | AlgorithmKind::Pbea)
    }

    pub fn is_decomposition(self) -> bool {
        matches!(self, AlgorithmKind::Moead | AlgorithmKind::Rmead2 | AlgorithmKind::MoeadNums)
    }
}

impl fmt::Display for AlgorithmKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.display_name())
    }
}

impl FromStr for AlgorithmKind {
    type Err = String;

    /// Accepts ids (`rnsga2`) as well as display names (`R-NSGA-II`); the case
    /// of the leading letter distinguishes R-NSGA-II from r-NSGA-II.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AlgorithmKind::ALL
            .into_iter()
            .find(|k| k.id() == s || k.display_name() == s)
            .or_else(|| AlgorithmKind::ALL.into_iter().find(|k| k.id().eq_ignore_ascii_case(s)))
            .ok_or_else(|| format!("unknown algorithm `{s}`"))
    }
}

/// SBX and polynomial mutation settings. `p_m = None` means `1/n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Variation {
    pub eta_c: f64,
    pub eta_m: f64,
    pub p_c: f64,
    pub p_m: Option<f64>,
}

impl Default for Variation {
    fn default() -> Self {
        Self { eta_c: 20.0, eta_m: 20.0, p_c: 0.9, p_m: None }
    }
}

/// Parameters of the individual algorithms; each kind reads its own subset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KindParams {
    pub ibea_kappa: f64,
    pub pbea_sigma: f64,
    pub rho_aug: f64,
    pub epsilon_clear: f64,
    pub delta: f64,
    pub neighborhood_size: usize,
    pub replacement_cap: usize,
    pub nums_tau: f64,
    pub nums_kappa: f64,
    pub rmead2_radius: f64,
    pub rmead2_radius_floor: f64,
    pub rmead2_stagnation: usize,
    pub rmead2_interval: usize,
}

impl Default for KindParams {
    fn default() -> Self {
        Self {
            ibea_kappa: 0.05,
            pbea_sigma: 0.05,
            rho_aug: 1e-4,
            epsilon_clear: 0.01,
            delta: 0.3,
            neighborhood_size: 20,
            replacement_cap: 2,
            nums_tau: 0.2,
            nums_kappa: 2.0,
            rmead2_radius: 0.25,
            rmead2_radius_floor: 1e-3,
            rmead2_stagnation: 10,
            rmead2_interval: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmSpec {
    pub kind: AlgorithmKind,
    pub population_size: usize,
    #[serde(default)]
    pub variation: Variation,
    #[serde(default)]
    pub params: KindParams,
    #[serde(default)]
    pub reference_points: Vec<ReferencePoint>,
}

impl AlgorithmSpec {
    pub fn new(kind: AlgorithmKind, population_size: usize) -> Self {
        Self { kind, population_size, variation: Variation::default(), params: KindParams::default(), reference_points: Vec::new() }
    }

    pub fn with_reference(mut self, zr: ReferencePoint) -> Self {
        self.reference_points = vec![zr];
        self
    }

    pub fn with_reference_points(mut self, refs: Vec<ReferencePoint>) -> Self {
        self.reference_points = refs;
        self
    }

    /// Checks parameter ranges and the reference-point count for the kind.
    pub fn validate(&self, m: usize) -> Result<(), AlgorithmError> {
        if self.population_size < 4 {
            return Err(AlgorithmError::PopulationSize(self.population_size));
        }
        check_reference_count(self.kind, &self.reference_points, m)?;
        let p = &self.params;
        let v = &self.variation;
        let checks = [
            (v.eta_c >= 0.0, "eta_c must be >= 0"),
            (v.eta_m >= 0.0, "eta_m must be >= 0"),
            ((0.0..=1.0).contains(&v.p_c), "p_c must lie in [0, 1]"),
            (v.p_m.is_none_or(|pm| (0.0..=1.0).contains(&pm)), "p_m must lie in [0, 1]"),
            (p.ibea_kappa > 0.0, "ibea_kappa must be > 0"),
            (p.pbea_sigma > 0.0, "pbea_sigma must be > 0"),
            (p.rho_aug >= 0.0, "rho_aug must be >= 0"),
            (p.epsilon_clear >= 0.0, "epsilon_clear must be >= 0"),
            ((0.0..=1.0).contains(&p.delta), "delta must lie in [0, 1]"),
            (p.neighborhood_size >= 2, "neighborhood_size must be >= 2"),
            (p.replacement_cap >= 1, "replacement_cap must be >= 1"),
            (p.nums_tau > 0.0 && p.nums_tau <= 1.0, "nums_tau must lie in (0, 1]"),
            (p.nums_kappa >= 1.0, "nums_kappa must be >= 1"),
            (p.rmead2_radius > 0.0, "rmead2_radius must be > 0"),
            (p.rmead2_interval >= 1, "rmead2_interval must be >= 1"),
        ];
        match checks.iter().find(|(ok, _)| !ok) {
            Some((_, msg)) => Err(AlgorithmError::Parameter((*msg).to_string())),
            None => Ok(()),
        }
    }
}

fn check_reference_count(kind: AlgorithmKind, refs: &[ReferencePoint], m: usize) -> Result<(), AlgorithmError> {
    let got = refs.len();
    let ok = if !kind.is_preference_based() {
        got == 0
    } else if kind.accepts_many_references() {
        got >= 1
    } else {
        got == 1
    };
    if !ok {
        let expected = match (kind.is_preference_based(), kind.accepts_many_references()) {
            (false, _) => "0",
            (true, true) => "at least 1",
            (true, false) => "exactly 1",
        };
        return Err(AlgorithmError::ReferenceCount { kind, expected, got });
    }
    if let Some(r) = refs.iter().find(|r| r.dim() != m) {
        return Err(AlgorithmError::ReferenceDimension { expected: m, got: r.dim() });
    }
    Ok(())
}

/// Per-generation summary kept in a [`RunResult`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub generation: usize,
    pub evaluations: usize,
    /// Best E(P) over the current reference points; absent for baselines.
    pub ep: Option<f64>,
    pub front_size: usize,
    pub ideal: Vec<f64>,
    pub nadir: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub algorithm: AlgorithmKind,
    pub problem: String,
    pub seed: u64,
    pub budget: usize,
    pub evaluations: usize,
    pub reference_points: Vec<ReferencePoint>,
    pub final_population: Vec<Solution>,
    pub records: Vec<GenerationRecord>,
}

impl RunResult {
    /// Members of the first non-dominated front of the final population.
    pub fn final_front(&self) -> Vec<&Solution> {
        let objs: Vec<&[f64]> = self.final_population.iter().map(|s| s.f.as_slice()).collect();
        fast_nondominated_sort(&objs)[0].iter().map(|&i| &self.final_population[i]).collect()
    }

    pub fn final_objectives(&self) -> Vec<Vec<f64>> {
        self.final_front().into_iter().map(|s| s.f.as_slice().to_vec()).collect()
    }
}

/// What the observer sees after every generation.
pub struct GenerationView<'a> {
    pub record: &'a GenerationRecord,
    pub population: &'a Population,
    pub reference_points: &'a [ReferencePoint],
}

/// Children of one SBX variable pair for a given uniform draw `u`.
pub fn sbx_pair(x1: f64, x2: f64, u: f64, eta_c: f64) -> (f64, f64) {
    let beta = if u <= 0.5 { (2.0 * u).powf(1.0 / (eta_c + 1.0)) } else { (1.0 / (2.0 * (1.0 - u))).powf(1.0 / (eta_c + 1.0)) };
    (0.5 * ((1.0 + beta) * x1 + (1.0 - beta) * x2), 0.5 * ((1.0 - beta) * x1 + (1.0 + beta) * x2))
}

/// Simulated binary crossover. Each variable crosses with probability 0.5
/// and the children swap values with probability 0.5; results are clamped.
pub fn sbx_crossover<R: Rng + ?Sized>(
    p1: &[f64],
    p2: &[f64],
    eta_c: f64,
    p_c: f64,
    bounds: &BoxBounds,
    rng: &mut R,
) -> (Vec<f64>, Vec<f64>) {
    let mut c1 = p1.to_vec();
    let mut c2 = p2.to_vec();
    if rng.random::<f64>() >= p_c {
        return (c1, c2);
    }
    for i in 0..p1.len() {
        if rng.random::<f64>() > 0.5 || (p1[i] - p2[i]).abs() <= 1e-14 {
            continue;
        }
        let (a, b) = sbx_pair(p1[i], p2[i], rng.random::<f64>(), eta_c);
        if rng.random::<f64>() < 0.5 {
            c1[i] = b;
            c2[i] = a;
        } else {
            c1[i] = a;
            c2[i] = b;
        }
    }
    bounds.clamp(&mut c1);
    bounds.clamp(&mut c2);
    (c1, c2)
}

/// Polynomial perturbation factor for a uniform draw `u`, in `[-1, 1]`.
pub fn polynomial_delta(u: f64, eta_m: f64) -> f64 {
    if u < 0.5 {
        (2.0 * u).powf(1.0 / (eta_m + 1.0)) - 1.0
    } else {
        1.0 - (2.0 * (1.0 - u)).powf(1.0 / (eta_m + 1.0))
    }
}

pub fn polynomial_mutation<R: Rng + ?Sized>(x: &[f64], eta_m: f64, p_m: f64, bounds: &BoxBounds, rng: &mut R) -> Vec<f64> {
    let mut y = x.to_vec();
    for i in 0..y.len() {
        if rng.random::<f64>() < p_m {
            let delta = polynomial_delta(rng.random::<f64>(), eta_m);
            y[i] += delta * (bounds.upper()[i] - bounds.lower()[i]);
        }
    }
    bounds.clamp(&mut y);
    y
}

/// Binary additive ε-indicator between singletons: `max_i (a_i - b_i)`.
pub fn eps_indicator(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x - y).fold(f64::NEG_INFINITY, f64::max)
}

/// `F(x) = sum_{x' != x} -exp(-I[x'][x] / kappa)` for an indicator matrix.
pub fn indicator_fitness(matrix: &[Vec<f64>], kappa: f64) -> Vec<f64> {
    let n = matrix.len();
    (0..n).map(|x| (0..n).filter(|&o| o != x).map(|o| -(-matrix[o][x] / kappa).exp()).sum()).collect()
}

/// IBEA fitness of every member under the ε+ indicator.
pub fn ibea_fitness<V: AsRef<[f64]>>(objs: &[V], kappa: f64) -> Vec<f64> {
    indicator_fitness(&eps_matrix(objs), kappa)
}

fn eps_matrix<V: AsRef<[f64]>>(objs: &[V]) -> Vec<Vec<f64>> {
    objs.iter().map(|a| objs.iter().map(|b| eps_indicator(a.as_ref(), b.as_ref())).collect()).collect()
}

/// Preference-weighted ε-indicator `I(a, b) / (s(a) + sigma - min s)`, where
/// `s` is the augmented ASF to `z` over the population `pop`.
pub fn pbea_indicator<V: AsRef<[f64]>>(a: &[f64], b: &[f64], pop: &[V], z: &[f64], w: &[f64], sigma: f64, rho_aug: f64) -> f64 {
    let min_s = pop.iter().map(|p| augmented_asf(p.as_ref(), z, w, rho_aug)).fold(f64::INFINITY, f64::min);
    let s_a = augmented_asf(a, z, w, rho_aug);
    eps_indicator(a, b) / (s_a + sigma - min_s)
}

fn bounds_of<V: AsRef<[f64]>>(objs: &[V]) -> (Vec<f64>, Vec<f64>) {
    let m = objs[0].as_ref().len();
    let mut lo = vec![f64::INFINITY; m];
    let mut hi = vec![f64::NEG_INFINITY; m];
    for f in objs {
        for (i, &v) in f.as_ref().iter().enumerate() {
            lo[i] = lo[i].min(v);
            hi[i] = hi[i].max(v);
        }
    }
    (lo, hi)
}

fn scale_into(f: &[f64], lo: &[f64], hi: &[f64]) -> Vec<f64> {
    f.iter().zip(lo.iter().zip(hi)).map(|(&v, (&l, &h))| if h > l { (v - l) / (h - l) } else { v - l }).collect()
}

fn normalized_distance(a: &[f64], b: &[f64], lo: &[f64], hi: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .zip(lo.iter().zip(hi))
        .map(|((x, y), (l, h))| {
            let d = if h > l { (x - y) / (h - l) } else { 0.0 };
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// Environmental selection of R-NSGA-II over `mixed`; returns the indices of
/// the `n` survivors, best first.
///
/// Members are ordered by front, then within a front by their preference
/// rank: for each reference point members are ranked by weighted distance and
/// a member keeps its best rank over all reference points (ties by distance).
/// ε-clearing walks this order and defers any member within `epsilon_clear`
/// (normalized Euclidean distance) of an already admitted one; deferred
/// members are admitted in order only if capacity remains.
pub fn rnsga2_select<V: AsRef<[f64]>>(mixed: &[V], refs: &[ReferencePoint], epsilon_clear: f64, n: usize) -> Vec<usize> {
    if mixed.is_empty() {
        return Vec::new();
    }
    let (lo, hi) = bounds_of(mixed);
    let fronts = fast_nondominated_sort(mixed);
    let mut order = Vec::with_capacity(mixed.len());
    for front in &fronts {
        let mut best_rank = vec![usize::MAX; front.len()];
        let mut best_dist = vec![f64::INFINITY; front.len()];
        for zr in refs {
            let dist: Vec<f64> = front.iter().map(|&i| weighted_distance(mixed[i].as_ref(), zr, &lo, &hi)).collect();
            let mut by_dist: Vec<usize> = (0..front.len()).collect();
            by_dist.sort_by(|&a, &b| cmp_f64(dist[a], dist[b]).then(a.cmp(&b)));
            for (rank, &k) in by_dist.iter().enumerate() {
                best_rank[k] = best_rank[k].min(rank);
                best_dist[k] = best_dist[k].min(dist[k]);
            }
        }
        let mut local: Vec<usize> = (0..front.len()).collect();
        local.sort_by(|&a, &b| best_rank[a].cmp(&best_rank[b]).then(cmp_f64(best_dist[a], best_dist[b])).then(a.cmp(&b)));
        order.extend(local.into_iter().map(|k| front[k]));
    }
    let mut chosen: Vec<usize> = Vec::with_capacity(n);
    let mut deferred = Vec::new();
    for &i in &order {
        if chosen.len() == n {
            break;
        }
        let crowded = chosen.iter().any(|&j| normalized_distance(mixed[i].as_ref(), mixed[j].as_ref(), &lo, &hi) <= epsilon_clear);
        if crowded {
            deferred.push(i);
        } else {
            chosen.push(i);
        }
    }
    for i in deferred {
        if chosen.len() == n {
            break;
        }
        chosen.push(i);
    }
    chosen
}

/// Fronts under `beats`, filled in order, the last one truncated by crowding
/// distance. Returns survivors best first (front, then crowding).
fn crowded_select<V: AsRef<[f64]>, F: Fn(usize, usize) -> bool>(objs: &[V], n: usize, beats: F) -> Vec<usize> {
    let fronts = sort_by_relation(objs.len(), beats);
    let mut chosen = Vec::with_capacity(n);
    for front in fronts {
        if chosen.len() == n {
            break;
        }
        let members: Vec<&[f64]> = front.iter().map(|&i| objs[i].as_ref()).collect();
        let crowd = crowding_distance(&members);
        let mut local: Vec<usize> = (0..front.len()).collect();
        local.sort_by(|&a, &b| cmp_f64(crowd[b], crowd[a]).then(a.cmp(&b)));
        let room = n - chosen.len();
        chosen.extend(local.into_iter().take(room).map(|k| front[k]));
    }
    chosen
}

/// NSGA-III reference-line niching. Returns the survivors in admission order.
fn nsga3_select<V: AsRef<[f64]>, R: Rng + ?Sized>(objs: &[V], dirs: &[Vec<f64>], n: usize, rng: &mut R) -> Vec<usize> {
    let fronts = fast_nondominated_sort(objs);
    let mut chosen: Vec<usize> = Vec::with_capacity(n);
    let mut last = Vec::new();
    for front in &fronts {
        if chosen.len() + front.len() <= n {
            chosen.extend(front);
            if chosen.len() == n {
                return chosen;
            }
        } else {
            last = front.clone();
            break;
        }
    }
    let st: Vec<usize> = chosen.iter().chain(&last).copied().collect();
    let st_objs: Vec<&[f64]> = st.iter().map(|&i| objs[i].as_ref()).collect();
    let (ideal, _) = bounds_of(&st_objs);
    let first: Vec<&[f64]> = fronts[0].iter().map(|&i| objs[i].as_ref()).collect();
    let (_, front_max) = bounds_of(&first);
    let (_, st_max) = bounds_of(&st_objs);
    let intercept: Vec<f64> = (0..ideal.len())
        .map(|i| {
            let a = front_max[i] - ideal[i];
            let b = st_max[i] - ideal[i];
            if a > 1e-10 {
                a
            } else if b > 1e-10 {
                b
            } else {
                1.0
            }
        })
        .collect();
    let associate = |i: usize| -> (usize, f64) {
        let f: Vec<f64> = objs[i].as_ref().iter().zip(&ideal).zip(&intercept).map(|((v, z), a)| (v - z) / a).collect();
        let mut best = (0, f64::INFINITY);
        for (j, d) in dirs.iter().enumerate() {
            let norm2: f64 = d.iter().map(|v| v * v).sum();
            let t = f.iter().zip(d).map(|(a, b)| a * b).sum::<f64>() / norm2;
            let perp = f.iter().zip(d).map(|(a, b)| (a - t * b) * (a - t * b)).sum::<f64>().sqrt();
            if perp < best.1 {
                best = (j, perp);
            }
        }
        best
    };
    let mut niche = vec![0usize; dirs.len()];
    for &i in &chosen {
        niche[associate(i).0] += 1;
    }
    let mut pending: Vec<Vec<(usize, f64)>> = vec![Vec::new(); dirs.len()];
    for &i in &last {
        let (j, d) = associate(i);
        pending[j].push((i, d));
    }
    let mut active: Vec<bool> = vec![true; dirs.len()];
    while chosen.len() < n {
        let min_count = (0..dirs.len()).filter(|&j| active[j]).map(|j| niche[j]).min().expect("candidates remain");
        let candidates: Vec<usize> = (0..dirs.len()).filter(|&j| active[j] && niche[j] == min_count).collect();
        let j = candidates[rng.random_range(0..candidates.len())];
        if pending[j].is_empty() {
            active[j] = false;
            continue;
        }
        let pick = if niche[j] == 0 {
            (0..pending[j].len()).min_by(|&a, &b| cmp_f64(pending[j][a].1, pending[j][b].1)).expect("non-empty")
        } else {
            rng.random_range(0..pending[j].len())
        };
        chosen.push(pending[j].swap_remove(pick).0);
        niche[j] += 1;
    }
    chosen
}

/// Makes sure a member as good as `elite` under E(P) survives, replacing the
/// survivor admitted last.
fn keep_elite<V: AsRef<[f64]>>(chosen: &mut [usize], elite: usize, objs: &[V], refs: &[ReferencePoint]) {
    let best = ep_value(objs[elite].as_ref(), refs);
    if chosen.iter().any(|&i| ep_value(objs[i].as_ref(), refs) <= best) {
        return;
    }
    if let Some(last) = chosen.last_mut() {
        *last = elite;
    }
}

/// Removes the worst member by indicator fitness until `n` remain.
/// Returns survivors and their fitness.
fn indicator_select(matrix: &[Vec<f64>], kappa: f64, n: usize) -> (Vec<usize>, Vec<f64>) {
    let size = matrix.len();
    let c = matrix.iter().flatten().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let c = if c > 0.0 { c } else { 1.0 };
    let scaled: Vec<Vec<f64>> = matrix.iter().map(|row| row.iter().map(|v| v / c).collect()).collect();
    let mut fitness = indicator_fitness(&scaled, kappa);
    let mut alive: Vec<bool> = vec![true; size];
    let mut remaining = size;
    while remaining > n {
        let worst = (0..size).filter(|&i| alive[i]).min_by(|&a, &b| cmp_f64(fitness[a], fitness[b])).expect("members remain");
        alive[worst] = false;
        remaining -= 1;
        for i in 0..size {
            if alive[i] {
                fitness[i] += (-scaled[worst][i] / kappa).exp();
            }
        }
    }
    let survivors: Vec<usize> = (0..size).filter(|&i| alive[i]).collect();
    let fit = survivors.iter().map(|&i| fitness[i]).collect();
    (survivors, fit)
}

#[derive(Debug, Clone)]
struct Decomposition {
    base: WeightSet,
    weights: Vec<Vec<f64>>,
    neighbors: Vec<Vec<usize>>,
    radius: f64,
    best_asf: f64,
    stagnant: usize,
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn neighborhoods(weights: &[Vec<f64>], t: usize) -> Vec<Vec<usize>> {
    let t = t.min(weights.len());
    weights
        .iter()
        .map(|w| {
            let mut idx: Vec<usize> = (0..weights.len()).collect();
            idx.sort_by(|&a, &b| cmp_f64(euclid(w, &weights[a]), euclid(w, &weights[b])).then(a.cmp(&b)));
            idx.truncate(t);
            idx
        })
        .collect()
}

/// Exactly `n` weights: a lattice with as many points as fit, topped up with
/// random simplex points; random sampling alone for very many objectives.
fn weight_set<R: Rng + ?Sized>(m: usize, n: usize, rng: &mut R) -> WeightSet {
    if m >= RANDOM_WEIGHTS_FROM_M {
        return uniform_random_weights(m, n, rng);
    }
    let mut ws = das_dennis(m, divisions_for(m, n)).expect("divisions_for stays within the lattice limit");
    if ws.len() < n {
        let extra = uniform_random_weights(m, n - ws.len(), rng);
        ws.vectors.extend(extra.vectors);
    }
    ws.vectors.truncate(n);
    ws
}

/// Tchebycheff value of `f` for subproblem weight `w`, measured from the
/// ideal point and, when a nadir estimate is given, normalized by it.
fn decomposed(f: &[f64], w: &[f64], ideal: &[f64], nadir: Option<&[f64]>) -> f64 {
    match nadir {
        Some(nadir) => {
            let scaled: Vec<f64> = f
                .iter()
                .zip(ideal.iter().zip(nadir))
                .map(|(&v, (&lo, &hi))| if hi - lo > 1e-12 { (v - lo) / (hi - lo) } else { v - lo })
                .collect();
            tchebycheff(&scaled, w, &vec![0.0; f.len()])
        }
        None => tchebycheff(f, w, ideal),
    }
}

/// Best E(P) value of a single vector over a set of reference points.
fn ep_value(f: &[f64], refs: &[ReferencePoint]) -> f64 {
    refs.iter()
        .map(|zr| f.iter().zip(zr.z.iter().zip(&zr.weights)).map(|(v, (z, w))| (v - z) / w).fold(f64::NEG_INFINITY, f64::max))
        .fold(f64::INFINITY, f64::min)
}

fn ep_best<V: AsRef<[f64]>>(objs: &[V], refs: &[ReferencePoint]) -> usize {
    (0..objs.len()).min_by(|&a, &b| cmp_f64(ep_value(objs[a].as_ref(), refs), ep_value(objs[b].as_ref(), refs))).expect("non-empty")
}

/// Offers `child` to the subproblems in `order`; each improved subproblem
/// takes a copy until `cap` replacements have been made; `protected` is never
/// replaced. Returns the count.
#[allow(clippy::too_many_arguments)]
pub(crate) fn moead_update(
    members: &mut [Solution],
    child: &Solution,
    order: &[usize],
    weights: &[Vec<f64>],
    ideal: &[f64],
    nadir: Option<&[f64]>,
    cap: usize,
    protected: Option<usize>,
) -> usize {
    let mut replaced = 0;
    for &j in order {
        if replaced == cap {
            break;
        }
        if Some(j) != protected && decomposed(&child.f, &weights[j], ideal, nadir) < decomposed(&members[j].f, &weights[j], ideal, nadir) {
            members[j] = child.clone();
            replaced += 1;
        }
    }
    replaced
}

/// A single run, advanced one generation at a time.
pub struct Engine {
    spec: AlgorithmSpec,
    problem: Problem,
    budget: usize,
    seed: u64,
    rng: ChaCha8Rng,
    population: Population,
    evaluations: usize,
    generation: usize,
    next_id: u64,
    /// Lower is better; used for binary tournaments.
    mating_key: Vec<f64>,
    nsga3_dirs: Vec<Vec<f64>>,
    decomposition: Option<Decomposition>,
    records: Vec<GenerationRecord>,
}

impl Engine {
    /// Validates the configuration and evaluates the initial population.
    pub fn new(spec: AlgorithmSpec, problem: Problem, budget: usize, seed: u64) -> Result<Self, AlgorithmError> {
        let m = problem.spec().m();
        spec.validate(m)?;
        let n = spec.population_size;
        if budget < n {
            return Err(AlgorithmError::Budget { budget, population: n });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bounds = problem.spec().bounds().clone();
        let mut members = Vec::with_capacity(n);
        for id in 0..n as u64 {
            let x: Vec<f64> = (0..bounds.dim()).map(|i| rng.random_range(bounds.lower()[i]..=bounds.upper()[i])).collect();
            let f = problem.evaluate(&x)?;
            members.push(Solution { id, x, f });
        }
        let nsga3_dirs = if spec.kind == AlgorithmKind::Nsga3 { weight_set(m, n, &mut rng).vectors } else { Vec::new() };
        let decomposition = if spec.kind.is_decomposition() {
            let base = weight_set(m, n, &mut rng);
            let neighbors = neighborhoods(&base.vectors, spec.params.neighborhood_size);
            Some(Decomposition {
                weights: base.vectors.clone(),
                base,
                neighbors,
                radius: spec.params.rmead2_radius,
                best_asf: f64::INFINITY,
                stagnant: 0,
            })
        } else {
            None
        };
        let mut engine = Self {
            population: Population::new(members),
            mating_key: vec![0.0; n],
            spec,
            problem,
            budget,
            seed,
            rng,
            evaluations: n,
            generation: 0,
            next_id: n as u64,
            nsga3_dirs,
            decomposition,
            records: Vec::new(),
        };
        engine.after_selection();
        engine.refresh_weights();
        engine.record();
        Ok(engine)
    }

    pub fn spec(&self) -> &AlgorithmSpec {
        &self.spec
    }

    pub fn problem(&self) -> &Problem {
        &self.problem
    }

    pub fn population(&self) -> &Population {
        &self.population
    }

    pub fn generation(&self) -> usize {
        self.generation
    }

    pub fn evaluations(&self) -> usize {
        self.evaluations
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn records(&self) -> &[GenerationRecord] {
        &self.records
    }

    pub fn last_record(&self) -> &GenerationRecord {
        self.records.last().expect("generation 0 is always recorded")
    }

    pub fn reference_points(&self) -> &[ReferencePoint] {
        &self.spec.reference_points
    }

    /// True when another generation would exceed the evaluation budget.
    pub fn is_finished(&self) -> bool {
        self.evaluations + self.spec.population_size > self.budget
    }

    /// Replaces the reference points; takes effect from the next generation.
    pub fn set_reference_points(&mut self, refs: Vec<ReferencePoint>) -> Result<(), AlgorithmError> {
        check_reference_count(self.spec.kind, &refs, self.problem.spec().m())?;
        self.spec.reference_points = refs;
        if let Some(d) = self.decomposition.as_mut() {
            d.radius = self.spec.params.rmead2_radius;
            d.best_asf = f64::INFINITY;
            d.stagnant = 0;
            d.weights = d.base.vectors.clone();
        }
        self.after_selection();
        self.refresh_weights();
        Ok(())
    }

    pub fn view(&self) -> GenerationView<'_> {
        GenerationView { record: self.last_record(), population: &self.population, reference_points: &self.spec.reference_points }
    }

    /// Runs one generation; `None` once the budget is exhausted.
    pub fn step(&mut self) -> Result<Option<&GenerationRecord>, AlgorithmError> {
        if self.is_finished() {
            return Ok(None);
        }
        if self.spec.kind.is_decomposition() {
            self.decomposition_generation()?;
        } else {
            let offspring = self.make_offspring()?;
            let mut mixed: Vec<Solution> = self.population.members().to_vec();
            mixed.extend(offspring);
            let survivors = self.environmental_selection(&mixed);
            let members = survivors.into_iter().map(|i| mixed[i].clone()).collect();
            self.population.set_members(members);
            self.after_selection();
        }
        self.generation += 1;
        self.record();
        Ok(Some(self.last_record()))
    }

    pub fn into_result(self) -> RunResult {
        RunResult {
            algorithm: self.spec.kind,
            problem: self.problem.spec().label(),
            seed: self.seed,
            budget: self.budget,
            evaluations: self.evaluations,
            reference_points: self.spec.reference_points,
            final_population: self.population.members().to_vec(),
            records: self.records,
        }
    }

    fn record(&mut self) {
        let objs = self.population.objectives();
        let ep = if self.spec.reference_points.is_empty() {
            None
        } else {
            self.spec
                .reference_points
                .iter()
                .map(|zr| ep_accuracy(&objs, zr).expect("non-empty population"))
                .min_by(|a, b| cmp_f64(*a, *b))
        };
        let front_size = fast_nondominated_sort(&objs)[0].len();
        self.records.push(GenerationRecord {
            generation: self.generation,
            evaluations: self.evaluations,
            ep,
            front_size,
            ideal: self.population.ideal().to_vec(),
            nadir: self.population.nadir_est().to_vec(),
        });
    }

    fn evaluate(&mut self, mut x: Vec<f64>) -> Result<Solution, AlgorithmError> {
        self.problem.spec().bounds().clamp(&mut x);
        let f = self.problem.evaluate(&x)?;
        self.population.observe(&f);
        self.evaluations += 1;
        let id = self.next_id;
        self.next_id += 1;
        Ok(Solution { id, x, f })
    }

    fn p_m(&self) -> f64 {
        self.spec.variation.p_m.unwrap_or(1.0 / self.problem.spec().n() as f64)
    }

    fn tournament(&mut self) -> usize {
        let n = self.population.len();
        let a = self.rng.random_range(0..n);
        let b = self.rng.random_range(0..n);
        if self.mating_key[b] < self.mating_key[a] {
            b
        } else {
            a
        }
    }

    fn vary(&mut self, x1: &[f64], x2: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let bounds = self.problem.spec().bounds().clone();
        let v = self.spec.variation.clone();
        let p_m = self.p_m();
        let (c1, c2) = sbx_crossover(x1, x2, v.eta_c, v.p_c, &bounds, &mut self.rng);
        let c1 = polynomial_mutation(&c1, v.eta_m, p_m, &bounds, &mut self.rng);
        let c2 = polynomial_mutation(&c2, v.eta_m, p_m, &bounds, &mut self.rng);
        (c1, c2)
    }

    fn make_offspring(&mut self) -> Result<Vec<Solution>, AlgorithmError> {
        let n = self.spec.population_size;
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let p1 = self.tournament();
            let p2 = self.tournament();
            let x1 = self.population.members()[p1].x.clone();
            let x2 = self.population.members()[p2].x.clone();
            let (c1, c2) = self.vary(&x1, &x2);
            out.push(self.evaluate(c1)?);
            if out.len() < n {
                out.push(self.evaluate(c2)?);
            }
        }
        Ok(out)
    }

    fn environmental_selection(&mut self, mixed: &[Solution]) -> Vec<usize> {
        let n = self.spec.population_size;
        let objs: Vec<&[f64]> = mixed.iter().map(|s| s.f.as_slice()).collect();
        let refs = &self.spec.reference_points;
        let p = &self.spec.params;
        match self.spec.kind {
            AlgorithmKind::Nsga3 => nsga3_select(&objs, &self.nsga3_dirs, n, &mut self.rng),
            AlgorithmKind::RNsga2 => {
                let mut chosen = rnsga2_select(&objs, refs, p.epsilon_clear, n);
                keep_elite(&mut chosen, ep_best(&objs, refs), &objs, refs);
                chosen
            }
            AlgorithmKind::RDomNsga2 => {
                let (lo, hi) = bounds_of(&objs);
                let zr = &refs[0];
                let dist: Vec<f64> = objs.iter().map(|f| weighted_distance(f, zr, &lo, &hi)).collect();
                let range = DistanceRange::of(&dist);
                let delta = p.delta;
                crowded_select(&objs, n, |a, b| {
                    r_compare_distances(objs[a], objs[b], dist[a], dist[b], delta, range) == RDominance::ARDominates
                })
            }
            AlgorithmKind::GNsga2 => {
                let z = &refs[0].z;
                let flags: Vec<u8> = objs.iter().map(|f| g_flag(f, z)).collect();
                crowded_select(&objs, n, |a, b| flags[a] > flags[b] || (flags[a] == flags[b] && dominates(objs[a], objs[b])))
            }
            AlgorithmKind::Ibea | AlgorithmKind::Pbea => {
                let (lo, hi) = bounds_of(&objs);
                let scaled: Vec<Vec<f64>> = objs.iter().map(|f| scale_into(f, &lo, &hi)).collect();
                let matrix = if self.spec.kind == AlgorithmKind::Ibea {
                    eps_matrix(&scaled)
                } else {
                    let ones = vec![1.0; lo.len()];
                    let zs: Vec<Vec<f64>> = refs.iter().map(|zr| scale_into(&zr.z, &lo, &hi)).collect();
                    let s: Vec<f64> = scaled
                        .iter()
                        .map(|f| zs.iter().map(|z| augmented_asf(f, z, &ones, p.rho_aug)).fold(f64::INFINITY, f64::min))
                        .collect();
                    let min_s = s.iter().copied().fold(f64::INFINITY, f64::min);
                    let sigma = p.pbea_sigma;
                    scaled
                        .iter()
                        .enumerate()
                        .map(|(a, fa)| scaled.iter().map(|fb| eps_indicator(fa, fb) / (s[a] + sigma - min_s)).collect())
                        .collect()
                };
                let (survivors, fitness) = indicator_select(&matrix, p.ibea_kappa, n);
                // Best first, so the elite rule below displaces the weakest survivor.
                let mut ranked: Vec<usize> = (0..survivors.len()).collect();
                ranked.sort_by(|&a, &b| cmp_f64(fitness[b], fitness[a]).then(a.cmp(&b)));
                let mut survivors: Vec<usize> = ranked.iter().map(|&k| survivors[k]).collect();
                let mut key: Vec<f64> = ranked.iter().map(|&k| -fitness[k]).collect();
                if self.spec.kind == AlgorithmKind::Pbea {
                    let last = survivors.last().copied();
                    keep_elite(&mut survivors, ep_best(&objs, refs), &objs, refs);
                    if survivors.last().copied() != last {
                        *key.last_mut().expect("non-empty") = f64::NEG_INFINITY;
                    }
                }
                self.mating_key = key;
                return survivors;
            }
            AlgorithmKind::Moead | AlgorithmKind::Rmead2 | AlgorithmKind::MoeadNums => unreachable!("decomposition kinds select in place"),
        }
    }

    /// Mating keys follow the order in which survivors were admitted.
    fn after_selection(&mut self) {
        let n = self.population.len();
        match self.spec.kind {
            AlgorithmKind::RNsga2 | AlgorithmKind::RDomNsga2 | AlgorithmKind::GNsga2 => {
                let objs: Vec<&[f64]> = self.population.objectives();
                let order = match self.spec.kind {
                    AlgorithmKind::RNsga2 => rnsga2_select(&objs, &self.spec.reference_points, self.spec.params.epsilon_clear, n),
                    _ => {
                        let fronts = fast_nondominated_sort(&objs);
                        fronts.into_iter().flatten().collect()
                    }
                };
                let mut key = vec![0.0; n];
                for (pos, i) in order.into_iter().enumerate() {
                    key[i] = pos as f64;
                }
                self.mating_key = key;
            }
            AlgorithmKind::Ibea | AlgorithmKind::Pbea => {
                if self.mating_key.len() != n {
                    self.mating_key = vec![0.0; n];
                }
            }
            _ => self.mating_key = vec![0.0; n],
        }
    }

    /// Recomputes the biased weight sets of RMEAD2 and MOEA/D-NUMS.
    fn refresh_weights(&mut self) {
        let kind = self.spec.kind;
        let Some(d) = self.decomposition.as_mut() else { return };
        let ideal = self.population.ideal().to_vec();
        let nadir = self.population.nadir_est().to_vec();
        let p = &self.spec.params;
        match kind {
            AlgorithmKind::MoeadNums => {
                let pivot = simplex_projection(&self.spec.reference_points[0].z, &ideal, &nadir);
                d.weights = nums_transform(&d.base, &pivot, p.nums_tau, p.nums_kappa).vectors;
            }
            AlgorithmKind::Rmead2 => {
                let zr = &self.spec.reference_points[0];
                let asf: Vec<f64> =
                    self.population.members().iter().map(|s| augmented_asf(&s.f, &zr.z, &zr.weights, p.rho_aug)).collect();
                let best = (0..asf.len()).min_by(|&a, &b| cmp_f64(asf[a], asf[b])).expect("non-empty");
                if asf[best] < d.best_asf - 1e-12 {
                    d.best_asf = asf[best];
                    d.stagnant = 0;
                } else {
                    d.stagnant += 1;
                    if d.stagnant >= p.rmead2_stagnation {
                        d.radius = (d.radius / 2.0).max(p.rmead2_radius_floor);
                        d.stagnant = 0;
                    }
                }
                if self.generation > 0 && self.generation % p.rmead2_interval == 0 {
                    let current = WeightSet { vectors: d.weights.clone(), structure: WeightStructure::Biased };
                    let best_w = d.weights[best].clone();
                    d.weights = rmead2_resample(&current, &best_w, d.radius, &mut self.rng).vectors;
                    d.neighbors = neighborhoods(&d.weights, p.neighborhood_size);
                }
            }
            _ => {}
        }
    }

    fn decomposition_generation(&mut self) -> Result<(), AlgorithmError> {
        let n = self.spec.population_size;
        let cap = self.spec.params.replacement_cap;
        // RMEAD2 moves its weights towards the reference point itself, so it
        // works on raw objectives.
        let nadir = (self.spec.kind != AlgorithmKind::Rmead2).then(|| self.population.nadir_est().to_vec());
        let preference = self.spec.kind.is_preference_based();
        let mut members = self.population.members().to_vec();
        let d = self.decomposition.take().expect("decomposition kind");
        for i in 0..n {
            let neighbors = &d.neighbors[i];
            let a = neighbors[self.rng.random_range(0..neighbors.len())];
            let mut b = neighbors[self.rng.random_range(0..neighbors.len())];
            if b == a && neighbors.len() > 1 {
                b = neighbors[(neighbors.iter().position(|&k| k == a).expect("member") + 1) % neighbors.len()];
            }
            let (x1, x2) = (members[a].x.clone(), members[b].x.clone());
            let (c1, c2) = self.vary(&x1, &x2);
            let x = if self.rng.random::<f64>() < 0.5 { c1 } else { c2 };
            let child = self.evaluate(x)?;
            let mut order = neighbors.clone();
            order.shuffle(&mut self.rng);
            let protected = if preference {
                let refs = &self.spec.reference_points;
                let objs: Vec<&[f64]> = members.iter().map(|s| s.f.as_slice()).collect();
                let elite = ep_best(&objs, refs);
                (ep_value(&child.f, refs) > ep_value(objs[elite], refs)).then_some(elite)
            } else {
                None
            };
            let ideal = self.population.ideal().to_vec();
            moead_update(&mut members, &child, &order, &d.weights, &ideal, nadir.as_deref(), cap, protected);
        }
        self.decomposition = Some(d);
        self.population.set_members(members);
        self.after_selection();
        self.refresh_weights();
        Ok(())
    }
}

/// Runs to the end of the budget, calling `observer` after generation 0 and
/// after every later generation.
pub fn run<F>(spec: AlgorithmSpec, problem: Problem, budget: usize, seed: u64, mut observer: F) -> Result<RunResult, AlgorithmError>
where
    F: FnMut(&GenerationView<'_>),
{
    let mut engine = Engine::new(spec, problem, budget, seed)?;
    observer(&engine.view());
    while engine.step()?.is_some() {
        observer(&engine.view());
    }
    Ok(engine.into_result())
}
