//! Objective vectors, solutions, populations and the Pareto machinery
//! (dominance, non-dominated sorting, crowding distance, normalization)
//! shared by every algorithm and metric.

use std::cmp::Ordering;
use std::fmt;
use std::ops::Deref;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VectorError {
    #[error("objective vector needs at least 2 entries, got {0}")]
    TooShort(usize),
    #[error("objective vector entry {index} is not finite ({value})")]
    NonFinite { index: usize, value: f64 },
    #[error("bounds have different lengths ({lower} vs {upper})")]
    BoundsLength { lower: usize, upper: usize },
    #[error("bounds for variable {index} are empty: [{lower}, {upper}]")]
    EmptyInterval { index: usize, lower: f64, upper: f64 },
}

/// Objective values of one solution, in minimization orientation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ObjectiveVector(Vec<f64>);

impl ObjectiveVector {
    pub fn new(values: Vec<f64>) -> Result<Self, VectorError> {
        if values.len() < 2 {
            return Err(VectorError::TooShort(values.len()));
        }
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(VectorError::NonFinite { index, value });
        }
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for ObjectiveVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for ObjectiveVector {
    type Error = VectorError;

    fn try_from(values: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(values)
    }
}

impl From<ObjectiveVector> for Vec<f64> {
    fn from(v: ObjectiveVector) -> Self {
        v.0
    }
}

/// Box constraints `[lower_i, upper_i]` of the decision space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxBounds {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl BoxBounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self, VectorError> {
        if lower.len() != upper.len() {
            return Err(VectorError::BoundsLength { lower: lower.len(), upper: upper.len() });
        }
        for (index, (&lo, &hi)) in lower.iter().zip(&upper).enumerate() {
            if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(VectorError::EmptyInterval { index, lower: lo, upper: hi });
            }
        }
        Ok(Self { lower, upper })
    }

    /// `[0, 1]^n`.
    pub fn unit(n: usize) -> Self {
        Self { lower: vec![0.0; n], upper: vec![1.0; n] }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter().zip(self.lower.iter().zip(&self.upper)).all(|(&v, (&lo, &hi))| lo <= v && v <= hi)
    }

    pub fn clamp(&self, x: &mut [f64]) {
        for (v, (&lo, &hi)) in x.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            *v = v.clamp(lo, hi);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub id: u64,
    pub x: Vec<f64>,
    pub f: ObjectiveVector,
}

/// Outcome of comparing two objective vectors under Pareto dominance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dominance {
    ADominates,
    BDominates,
    Incomparable,
    Equal,
}

impl Dominance {
    pub fn swap(self) -> Self {
        match self {
            Dominance::ADominates => Dominance::BDominates,
            Dominance::BDominates => Dominance::ADominates,
            other => other,
        }
    }
}

/// Pareto comparison for minimization. Identical vectors are `Equal`, never dominating.
///
/// Panics if the dimensions differ.
pub fn pareto_compare(a: &[f64], b: &[f64]) -> Dominance {
    assert_eq!(a.len(), b.len(), "objective dimension mismatch");
    let mut a_better = false;
    let mut b_better = false;
    for (&ai, &bi) in a.iter().zip(b) {
        if ai < bi {
            a_better = true;
        } else if bi < ai {
            b_better = true;
        }
        if a_better && b_better {
            return Dominance::Incomparable;
        }
    }
    match (a_better, b_better) {
        (true, false) => Dominance::ADominates,
        (false, true) => Dominance::BDominates,
        (false, false) => Dominance::Equal,
        (true, true) => Dominance::Incomparable,
    }
}

pub fn dominates(a: &[f64], b: &[f64]) -> bool {
    pareto_compare(a, b) == Dominance::ADominates
}

/// Non-dominated sorting over an arbitrary strict "beats" relation on `0..n`.
///
/// Fronts hold indices in ascending order, so ties keep insertion order.
pub fn sort_by_relation<F>(n: usize, beats: F) -> Vec<Vec<usize>>
where
    F: Fn(usize, usize) -> bool,
{
    let mut dominated_by_count = vec![0usize; n];
    let mut dominates_list: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        for j in (i + 1)..n {
            if beats(i, j) {
                dominates_list[i].push(j);
                dominated_by_count[j] += 1;
            } else if beats(j, i) {
                dominates_list[j].push(i);
                dominated_by_count[i] += 1;
            }
        }
    }

    let mut fronts = Vec::new();
    let mut current: Vec<usize> = (0..n).filter(|&i| dominated_by_count[i] == 0).collect();
    let mut assigned = current.len();
    while !current.is_empty() {
        let mut next = Vec::new();
        for &i in &current {
            for &j in &dominates_list[i] {
                dominated_by_count[j] -= 1;
                if dominated_by_count[j] == 0 {
                    next.push(j);
                }
            }
        }
        next.sort_unstable();
        assigned += next.len();
        fronts.push(std::mem::replace(&mut current, next));
    }
    // A cyclic relation (possible for some preference relations) leaves members
    // unassigned; they go to one trailing front.
    if assigned < n {
        let placed: std::collections::HashSet<usize> = fronts.iter().flatten().copied().collect();
        fronts.push((0..n).filter(|i| !placed.contains(i)).collect());
    }
    fronts
}

/// Fast non-dominated sorting; returns fronts of indices into `objs`.
pub fn fast_nondominated_sort<V: AsRef<[f64]>>(objs: &[V]) -> Vec<Vec<usize>> {
    sort_by_relation(objs.len(), |i, j| dominates(objs[i].as_ref(), objs[j].as_ref()))
}

/// Crowding distance of each member of a (mutually non-dominated) front.
pub fn crowding_distance<V: AsRef<[f64]>>(front: &[V]) -> Vec<f64> {
    let n = front.len();
    if n <= 2 {
        return vec![f64::INFINITY; n];
    }
    let m = front[0].as_ref().len();
    let mut distance = vec![0.0; n];
    let mut order: Vec<usize> = (0..n).collect();
    for obj in 0..m {
        let value = |i: usize| front[i].as_ref()[obj];
        order.sort_by(|&a, &b| value(a).total_cmp(&value(b)).then(a.cmp(&b)));
        let lo = value(order[0]);
        let hi = value(order[n - 1]);
        let range = hi - lo;
        if range <= 0.0 {
            continue;
        }
        // Every member sharing an extreme value is an extreme, keeping the
        // result independent of input order.
        for &i in &order {
            if value(i) == lo || value(i) == hi {
                distance[i] = f64::INFINITY;
            }
        }
        for k in 1..n - 1 {
            let i = order[k];
            if distance[i].is_finite() {
                distance[i] += (value(order[k + 1]) - value(order[k - 1])) / range;
            }
        }
    }
    distance
}

/// Affine map of `f` onto `[0,1]^m` given ideal and nadir estimates.
/// A degenerate dimension (`nadir_i <= ideal_i`) maps to 0.
pub fn normalize(f: &[f64], ideal: &[f64], nadir: &[f64]) -> Vec<f64> {
    f.iter()
        .zip(ideal.iter().zip(nadir))
        .map(|(&v, (&lo, &hi))| if hi > lo { (v - lo) / (hi - lo) } else { 0.0 })
        .collect()
}

/// Ordered members plus cached ideal / nadir estimates.
///
/// The ideal point is a running minimum over every solution ever offered to
/// [`Population::observe`]; the nadir estimate is the maximum over the current
/// first front and is refreshed by [`Population::set_members`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Population {
    members: Vec<Solution>,
    ideal: Vec<f64>,
    nadir_est: Vec<f64>,
}

impl Population {
    /// Panics on an empty member list.
    pub fn new(members: Vec<Solution>) -> Self {
        assert!(!members.is_empty(), "population must not be empty");
        let m = members[0].f.len();
        let mut pop = Self { members: Vec::new(), ideal: vec![f64::INFINITY; m], nadir_est: vec![f64::NEG_INFINITY; m] };
        for s in &members {
            pop.observe(&s.f);
        }
        pop.set_members(members);
        pop
    }

    pub fn members(&self) -> &[Solution] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn ideal(&self) -> &[f64] {
        &self.ideal
    }

    pub fn nadir_est(&self) -> &[f64] {
        &self.nadir_est
    }

    pub fn objectives(&self) -> Vec<&[f64]> {
        self.members.iter().map(|s| s.f.as_slice()).collect()
    }

    /// Folds an evaluated vector into the ideal estimate.
    pub fn observe(&mut self, f: &[f64]) {
        for (z, &v) in self.ideal.iter_mut().zip(f) {
            if v < *z {
                *z = v;
            }
        }
    }

    /// Replaces the members and refreshes the nadir estimate from their first front.
    pub fn set_members(&mut self, members: Vec<Solution>) {
        assert!(!members.is_empty(), "population must not be empty");
        for s in &members {
            self.observe(&s.f);
        }
        self.members = members;
        self.refresh_nadir();
    }

    /// Overwrites one member in place; the nadir estimate is left as is.
    pub fn replace(&mut self, index: usize, solution: Solution) {
        self.observe(&solution.f);
        self.members[index] = solution;
    }

    pub fn refresh_nadir(&mut self) {
        let objs = self.objectives();
        let first = &fast_nondominated_sort(&objs)[0];
        let mut nadir = vec![f64::NEG_INFINITY; self.ideal.len()];
        for &i in first {
            for (z, &v) in nadir.iter_mut().zip(objs[i]) {
                *z = z.max(v);
            }
        }
        for (z, &lo) in nadir.iter_mut().zip(&self.ideal) {
            *z = z.max(lo);
        }
        self.nadir_est = nadir;
    }

    /// Fronts as lists of member ids.
    pub fn fronts(&self) -> Vec<Vec<u64>> {
        fast_nondominated_sort(&self.objectives())
            .into_iter()
            .map(|front| front.into_iter().map(|i| self.members[i].id).collect())
            .collect()
    }

    pub fn first_front(&self) -> Vec<&Solution> {
        let objs = self.objectives();
        fast_nondominated_sort(&objs)[0].iter().map(|&i| &self.members[i]).collect()
    }

    pub fn normalized(&self, f: &[f64]) -> Vec<f64> {
        normalize(f, &self.ideal, &self.nadir_est)
    }
}

impl fmt::Display for ObjectiveVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{v}")?;
        }
        write!(f, ")")
    }
}

/// Total order helper for sorting finite floats.
pub(crate) fn cmp_f64(a: f64, b: f64) -> Ordering {
    a.total_cmp(&b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_force_fronts(objs: &[Vec<f64>]) -> Vec<Vec<usize>> {
        let mut remaining: Vec<usize> = (0..objs.len()).collect();
        let mut fronts = Vec::new();
        while !remaining.is_empty() {
            let front: Vec<usize> = remaining
                .iter()
                .copied()
                .filter(|&i| !remaining.iter().any(|&j| j != i && dominates(&objs[j], &objs[i])))
                .collect();
            remaining.retain(|i| !front.contains(i));
            fronts.push(front);
        }
        fronts
    }

    #[test]
    fn compare_examples() {
        assert_eq!(pareto_compare(&[1.0, 2.0], &[2.0, 3.0]), Dominance::ADominates);
        assert_eq!(pareto_compare(&[2.0, 3.0], &[1.0, 2.0]), Dominance::BDominates);
        assert_eq!(pareto_compare(&[1.0, 3.0], &[3.0, 1.0]), Dominance::Incomparable);
        assert_eq!(pareto_compare(&[1.0, 2.0], &[1.0, 2.0]), Dominance::Equal);
        assert_eq!(pareto_compare(&[1.0, 2.0], &[1.0, 3.0]), Dominance::ADominates);
    }

    #[test]
    #[should_panic(expected = "dimension mismatch")]
    fn compare_dimension_mismatch_panics() {
        pareto_compare(&[1.0, 2.0], &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn objective_vector_validation() {
        assert_eq!(ObjectiveVector::new(vec![1.0]), Err(VectorError::TooShort(1)));
        assert!(matches!(ObjectiveVector::new(vec![1.0, f64::NAN]), Err(VectorError::NonFinite { index: 1, .. })));
        assert!(ObjectiveVector::new(vec![1.0, f64::INFINITY]).is_err());
        let v: Result<ObjectiveVector, _> = serde_json::from_str("[1.0]");
        assert!(v.is_err());
    }

    #[test]
    fn bounds_validation() {
        assert!(BoxBounds::new(vec![0.0, 1.0], vec![1.0, 1.0]).is_err());
        assert!(BoxBounds::new(vec![0.0], vec![1.0, 2.0]).is_err());
        let b = BoxBounds::new(vec![-1.0, 0.0], vec![1.0, 2.0]).unwrap();
        let mut x = vec![-3.0, 5.0];
        b.clamp(&mut x);
        assert_eq!(x, vec![-1.0, 2.0]);
        assert!(b.contains(&x));
    }

    #[test]
    fn sort_examples() {
        let objs = vec![vec![1.0, 2.0], vec![2.0, 1.0], vec![3.0, 3.0]];
        assert_eq!(fast_nondominated_sort(&objs), vec![vec![0, 1], vec![2]]);
        assert_eq!(fast_nondominated_sort(&[vec![0.3, 0.4]]), vec![vec![0]]);
    }

    #[test]
    fn sort_matches_pairwise_oracle_on_random_2d() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let objs: Vec<Vec<f64>> = (0..20).map(|_| vec![rng.random(), rng.random()]).collect();
        assert_eq!(fast_nondominated_sort(&objs), brute_force_fronts(&objs));
    }

    #[test]
    fn crowding_examples() {
        let d = crowding_distance(&[vec![0.0, 2.0], vec![1.0, 1.0], vec![2.0, 0.0]]);
        assert!(d[0].is_infinite() && d[2].is_infinite());
        assert!((d[1] - 2.0).abs() < 1e-12);

        assert!(crowding_distance(&[vec![0.0, 1.0], vec![1.0, 0.0]]).iter().all(|d| d.is_infinite()));

        // Objective 1 is constant and contributes nothing.
        let d = crowding_distance(&[vec![0.0, 5.0], vec![1.0, 5.0], vec![2.0, 5.0], vec![4.0, 5.0]]);
        assert!((d[1] - 0.5).abs() < 1e-12);
        assert!((d[2] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn normalize_examples() {
        let ideal = [1.0, 2.0];
        let nadir = [3.0, 6.0];
        assert_eq!(normalize(&ideal, &ideal, &nadir), vec![0.0, 0.0]);
        assert_eq!(normalize(&nadir, &ideal, &nadir), vec![1.0, 1.0]);
        assert_eq!(normalize(&[2.0, 4.0], &ideal, &nadir), vec![0.5, 0.5]);
        assert_eq!(normalize(&[2.0, 4.0], &[0.0, 4.0], &[4.0, 4.0]), vec![0.5, 0.0]);
    }

    #[test]
    fn population_estimates() {
        let sol = |id, f: Vec<f64>| Solution { id, x: vec![], f: ObjectiveVector::new(f).unwrap() };
        let pop = Population::new(vec![sol(0, vec![1.0, 4.0]), sol(1, vec![3.0, 1.0]), sol(2, vec![5.0, 5.0])]);
        assert_eq!(pop.ideal(), &[1.0, 1.0]);
        assert_eq!(pop.nadir_est(), &[3.0, 4.0]);
        assert_eq!(pop.fronts(), vec![vec![0, 1], vec![2]]);
    }

    fn arb_vec(m: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec((0u8..5).prop_map(f64::from), m)
    }

    proptest! {
        #[test]
        fn dominance_is_strict_partial_order((a, b, c) in (2usize..5).prop_flat_map(|m| (arb_vec(m), arb_vec(m), arb_vec(m)))) {
            prop_assert!(!dominates(&a, &a));
            prop_assert_eq!(pareto_compare(&a, &b), pareto_compare(&b, &a).swap());
            if dominates(&a, &b) {
                prop_assert!(!dominates(&b, &a));
            }
            if dominates(&a, &b) && dominates(&b, &c) {
                prop_assert!(dominates(&a, &c));
            }
        }

        #[test]
        fn sort_equals_brute_force(objs in (2usize..5).prop_flat_map(|m| prop::collection::vec(arb_vec(m), 1..50))) {
            prop_assert_eq!(fast_nondominated_sort(&objs), brute_force_fronts(&objs));
        }

        #[test]
        fn crowding_is_permutation_invariant(front in prop::collection::vec((0.0f64..1.0).prop_map(|t| vec![t, 1.0 - t]), 1..20), seed in any::<u64>()) {
            use rand::{seq::SliceRandom, SeedableRng};
            let mut perm: Vec<usize> = (0..front.len()).collect();
            perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let shuffled: Vec<Vec<f64>> = perm.iter().map(|&i| front[i].clone()).collect();
            let base = crowding_distance(&front);
            let other = crowding_distance(&shuffled);
            for (k, &i) in perm.iter().enumerate() {
                let (x, y) = (base[i], other[k]);
                prop_assert!((x.is_infinite() && y.is_infinite()) || (x - y).abs() < 1e-9, "{} vs {}", x, y);
            }
        }

        #[test]
        fn normalize_is_identity_on_unit_box(f in prop::collection::vec(0.0f64..1.0, 2..6)) {
            let m = f.len();
            let once = normalize(&f, &vec![0.0; m], &vec![1.0; m]);
            prop_assert_eq!(&once, &f);
            prop_assert_eq!(normalize(&once, &vec![0.0; m], &vec![1.0; m]), once);
        }
    }
}
