//! Label-set combinatorics for multi-label data.
//!
//! Classes are indexed `0..K`. Size-`m` subsets of the classes are ordered
//! lexicographically and addressed by a zero-based rank, so `{0, 1}` is rank 0
//! and `{K-2, K-1}` is the last rank `C(K, m) - 1`. All counting and the
//! label-matrix identities are evaluated in exact integer/rational arithmetic.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use num_rational::Ratio;
use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Rational = Ratio<i128>;

/// Binomial coefficient `C(n, k)`, zero when `k > n`.
pub fn binomial(n: usize, k: usize) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u64 = 1;
    for i in 1..=k as u64 {
        // exact at every step: acc * (n - k + i) is divisible by i
        acc = acc * (n as u64 - k as u64 + i) / i;
    }
    acc
}

/// A nonempty proper subset of `0..K`, stored sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LabelSet {
    members: Vec<usize>,
}

impl LabelSet {
    pub fn new(num_classes: usize, mut members: Vec<usize>) -> Result<Self> {
        members.sort_unstable();
        let before = members.len();
        members.dedup();
        if members.len() != before {
            return Err(Error::arg("label set contains duplicate classes"));
        }
        if members.is_empty() {
            return Err(Error::arg("label set must be nonempty"));
        }
        if members.len() >= num_classes {
            return Err(Error::arg(format!(
                "label set of size {} is not a proper subset of {} classes",
                members.len(),
                num_classes
            )));
        }
        if let Some(&bad) = members.iter().find(|&&c| c >= num_classes) {
            return Err(Error::arg(format!(
                "class {bad} out of range for {num_classes} classes"
            )));
        }
        Ok(LabelSet { members })
    }

    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn multiplicity(&self) -> usize {
        self.members.len()
    }

    pub fn contains(&self, class: usize) -> bool {
        self.members.binary_search(&class).is_ok()
    }
}

impl fmt::Display for LabelSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (i, c) in self.members.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, "}}")
    }
}

fn check_multiplicity(num_classes: usize, m: usize) -> Result<()> {
    if m == 0 || m >= num_classes {
        return Err(Error::arg(format!(
            "multiplicity {m} must satisfy 1 <= m < K = {num_classes}"
        )));
    }
    Ok(())
}

/// The `rank`-th size-`m` subset of `0..num_classes` in lexicographic order.
pub fn lex_subset(num_classes: usize, m: usize, rank: usize) -> Result<LabelSet> {
    check_multiplicity(num_classes, m)?;
    let total = binomial(num_classes, m) as usize;
    if rank >= total {
        return Err(Error::arg(format!(
            "rank {rank} out of range for C({num_classes}, {m}) = {total}"
        )));
    }
    let mut rest = rank;
    let mut members = Vec::with_capacity(m);
    let mut next = 0usize;
    for slot in 0..m {
        let mut c = next;
        loop {
            // subsets whose `slot`-th member is `c`
            let block = binomial(num_classes - c - 1, m - slot - 1) as usize;
            if rest < block {
                break;
            }
            rest -= block;
            c += 1;
        }
        members.push(c);
        next = c + 1;
    }
    Ok(LabelSet { members })
}

/// Inverse of [`lex_subset`].
pub fn lex_rank(num_classes: usize, set: &LabelSet) -> Result<usize> {
    let m = set.multiplicity();
    check_multiplicity(num_classes, m)?;
    if set.members.iter().any(|&c| c >= num_classes) {
        return Err(Error::arg(format!(
            "label set {set} is not a subset of {num_classes} classes"
        )));
    }
    let mut rank = 0usize;
    let mut start = 0usize;
    for (slot, &c) in set.members.iter().enumerate() {
        for skipped in start..c {
            rank += binomial(num_classes - skipped - 1, m - slot - 1) as usize;
        }
        start = c + 1;
    }
    Ok(rank)
}

/// All size-`m` subsets in lexicographic order.
pub fn subsets(num_classes: usize, m: usize) -> Result<Vec<LabelSet>> {
    check_multiplicity(num_classes, m)?;
    (0..binomial(num_classes, m) as usize)
        .map(|r| lex_subset(num_classes, m, r))
        .collect()
}

/// Multi-hot encoding: entry `j` is 1 iff class `j` is in the set.
pub fn multi_hot(num_classes: usize, set: &LabelSet) -> DVector<f64> {
    DVector::from_fn(num_classes, |j, _| if set.contains(j) { 1.0 } else { 0.0 })
}

/// Dense matrix over exact rationals, only as large as the label identities need.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RationalMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Rational>,
}

impl RationalMatrix {
    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> Rational) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        RationalMatrix { rows, cols, data }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |r, c| if r == c { Rational::one() } else { Rational::zero() })
    }

    pub fn filled(rows: usize, cols: usize, value: Rational) -> Self {
        Self::from_fn(rows, cols, |_, _| value)
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, r: usize, c: usize) -> Rational {
        self.data[r * self.cols + c]
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    pub fn mul(&self, rhs: &Self) -> Self {
        assert_eq!(self.cols, rhs.rows, "rational matmul shape mismatch");
        Self::from_fn(self.rows, rhs.cols, |r, c| {
            (0..self.cols).fold(Rational::zero(), |acc, j| acc + self.get(r, j) * rhs.get(j, c))
        })
    }

    pub fn add(&self, rhs: &Self) -> Self {
        assert_eq!(self.shape(), rhs.shape());
        Self::from_fn(self.rows, self.cols, |r, c| self.get(r, c) + rhs.get(r, c))
    }

    pub fn sub(&self, rhs: &Self) -> Self {
        assert_eq!(self.shape(), rhs.shape());
        Self::from_fn(self.rows, self.cols, |r, c| self.get(r, c) - rhs.get(r, c))
    }

    pub fn scale(&self, s: Rational) -> Self {
        Self::from_fn(self.rows, self.cols, |r, c| self.get(r, c) * s)
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> Rational {
        self.data
            .iter()
            .map(|v| if *v < Rational::zero() { -*v } else { *v })
            .max()
            .unwrap_or_else(Rational::zero)
    }

    pub fn to_f64(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows, self.cols, |r, c| {
            let v = self.get(r, c);
            *v.numer() as f64 / *v.denom() as f64
        })
    }
}

/// `K × C(K, m)` 0/1 matrix whose column `k` is the multi-hot vector of the
/// rank-`k` subset.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMatrix {
    pub num_classes: usize,
    pub m: usize,
    pub entries: DMatrix<f64>,
}

impl LabelMatrix {
    pub fn to_rational(&self) -> RationalMatrix {
        RationalMatrix::from_fn(self.entries.nrows(), self.entries.ncols(), |r, c| {
            Rational::from_integer(self.entries[(r, c)] as i128)
        })
    }
}

pub fn label_matrix(num_classes: usize, m: usize) -> Result<LabelMatrix> {
    let sets = subsets(num_classes, m)?;
    let mut entries = DMatrix::zeros(num_classes, sets.len());
    for (k, s) in sets.iter().enumerate() {
        for &c in s.members() {
            entries[(c, k)] = 1.0;
        }
    }
    Ok(LabelMatrix {
        num_classes,
        m,
        entries,
    })
}

/// Constants of the label-matrix Gram identities and of the pseudo-inverse
/// `(Y_mᵀ)† = tau·Y_m + eta·Θ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GramConstants {
    /// Off-diagonal of `Y Yᵀ`.
    pub a: Rational,
    /// Diagonal of `Y Yᵀ`.
    pub b: Rational,
    /// Off-diagonal of `Y (Θ − Yᵀ)`.
    pub c: Rational,
    pub tau: Rational,
    pub eta: Rational,
}

/// Closed-form Gram and pseudo-inverse constants for `Y_m`.
pub fn pinv_label_matrix(num_classes: usize, m: usize) -> Result<GramConstants> {
    check_multiplicity(num_classes, m)?;
    let kk = num_classes as i128;
    let mm = m as i128;
    let bin = |n: usize, k: usize| Rational::from_integer(binomial(n, k) as i128);
    let a = Rational::new(mm - 1, kk - 1) * bin(num_classes - 1, m - 1);
    let b = Rational::new(mm, kk) * bin(num_classes, m);
    let c = Rational::new(mm, kk - 1) * bin(num_classes - 1, m);
    let tau = (a + c) / (b * c);
    let eta = -a / (b * c);
    Ok(GramConstants { a, b, c, tau, eta })
}

/// The pseudo-inverse `tau·Y_m + eta·Θ` as an exact `K × C(K, m)` matrix.
pub fn pinv_matrix(num_classes: usize, m: usize) -> Result<RationalMatrix> {
    let g = pinv_label_matrix(num_classes, m)?;
    let y = label_matrix(num_classes, m)?.to_rational();
    let (rows, cols) = y.shape();
    Ok(y.scale(g.tau).add(&RationalMatrix::filled(rows, cols, g.eta)))
}

/// Orthogonal projector `P_m = Y_mᵀ (Y_mᵀ)†` onto the row space of `Y_m`, in f64.
pub fn row_space_projector(num_classes: usize, m: usize) -> Result<DMatrix<f64>> {
    let y = label_matrix(num_classes, m)?.to_rational();
    let pinv = pinv_matrix(num_classes, m)?;
    Ok(y.transpose().mul(&pinv).to_f64())
}

/// Per-multiplicity sample counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Counts {
    /// Same count `n_m` for every subset of this multiplicity.
    Balanced(usize),
    /// One count per subset, in lexicographic rank order; zero marks a missing subset.
    PerSubset(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelConfig {
    pub num_classes: usize,
    pub max_multiplicity: usize,
    /// Keyed by multiplicity; missing keys mean no samples of that multiplicity.
    pub counts: BTreeMap<usize, Counts>,
}

impl LabelConfig {
    pub fn balanced(num_classes: usize, per_class: &[usize]) -> Result<Self> {
        let counts = per_class
            .iter()
            .enumerate()
            .map(|(i, &n)| (i + 1, Counts::Balanced(n)))
            .collect();
        let cfg = LabelConfig {
            num_classes,
            max_multiplicity: per_class.len(),
            counts,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.num_classes;
        let mm = self.max_multiplicity;
        if k < 2 {
            return Err(Error::arg("at least two classes are required"));
        }
        if mm == 0 || mm >= k {
            return Err(Error::arg(format!(
                "max multiplicity {mm} must satisfy 1 <= M <= K - 1 = {}",
                k - 1
            )));
        }
        let mut any = false;
        for (&m, counts) in &self.counts {
            if m == 0 || m > mm {
                return Err(Error::arg(format!(
                    "counts given for multiplicity {m} outside 1..={mm}"
                )));
            }
            match counts {
                Counts::Balanced(n) => any |= *n > 0,
                Counts::PerSubset(list) => {
                    let expected = binomial(k, m) as usize;
                    if list.len() != expected {
                        return Err(Error::arg(format!(
                            "multiplicity {m} needs {expected} subset counts, got {}",
                            list.len()
                        )));
                    }
                    any |= list.iter().any(|&n| n > 0);
                }
            }
        }
        if !any {
            return Err(Error::arg("all sample counts are zero"));
        }
        Ok(())
    }

    /// Count for the rank-`rank` subset of multiplicity `m`.
    pub fn count(&self, m: usize, rank: usize) -> usize {
        match self.counts.get(&m) {
            None => 0,
            Some(Counts::Balanced(n)) => *n,
            Some(Counts::PerSubset(list)) => list.get(rank).copied().unwrap_or(0),
        }
    }

    /// `N_m`, the number of samples of multiplicity `m`.
    pub fn total_for(&self, m: usize) -> usize {
        if m == 0 || m >= self.num_classes {
            return 0;
        }
        (0..binomial(self.num_classes, m) as usize)
            .map(|r| self.count(m, r))
            .sum()
    }

    pub fn total(&self) -> usize {
        (1..=self.max_multiplicity).map(|m| self.total_for(m)).sum()
    }

    /// `n_m` when every subset of multiplicity `m` has the same count.
    pub fn balanced_count(&self, m: usize) -> Option<usize> {
        let k = self.num_classes;
        if m == 0 || m >= k {
            return None;
        }
        let first = self.count(m, 0);
        (1..binomial(k, m) as usize)
            .all(|r| self.count(m, r) == first)
            .then_some(first)
    }

    /// `(m, n_m)` for each multiplicity with samples, when all of them are
    /// balanced; `None` if any present multiplicity is imbalanced.
    pub fn balanced_counts(&self) -> Option<Vec<(usize, usize)>> {
        let mut out = Vec::new();
        for m in 1..=self.max_multiplicity {
            if self.total_for(m) == 0 {
                continue;
            }
            out.push((m, self.balanced_count(m)?));
        }
        Some(out)
    }

    /// Multiplicities with at least one sample.
    pub fn present_multiplicities(&self) -> Vec<usize> {
        (1..=self.max_multiplicity)
            .filter(|&m| self.total_for(m) > 0)
            .collect()
    }
}

/// Position of one sample: multiplicity, subset rank, index within the subset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub m: usize,
    pub k: usize,
    pub i: usize,
}

/// Contiguous run of samples sharing one label set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Group {
    pub set: LabelSet,
    pub rank: usize,
    pub start: usize,
    pub count: usize,
}

impl Group {
    pub fn m(&self) -> usize {
        self.set.multiplicity()
    }

    pub fn columns(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.count
    }
}

/// Samples laid out in block order: by multiplicity, then subset rank, then index.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub config: LabelConfig,
    pub samples: Vec<Sample>,
    /// Every subset with a positive count, in sample order.
    pub groups: Vec<Group>,
    sample_group: Vec<usize>,
}

impl Dataset {
    pub fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn label_set(&self, column: usize) -> &LabelSet {
        &self.groups[self.sample_group[column]].set
    }

    pub fn group_of(&self, column: usize) -> &Group {
        &self.groups[self.sample_group[column]]
    }

    pub fn groups_with_multiplicity(&self, m: usize) -> impl Iterator<Item = &Group> {
        self.groups.iter().filter(move |g| g.m() == m)
    }

    /// Column range of the multiplicity-`m` block `H_m`.
    pub fn block(&self, m: usize) -> std::ops::Range<usize> {
        let start = self.samples.iter().position(|s| s.m == m);
        match start {
            None => 0..0,
            Some(s) => s..s + self.config.total_for(m),
        }
    }

    /// Column holding sample `(m, k, i)`, if it exists.
    pub fn column(&self, m: usize, k: usize, i: usize) -> Option<usize> {
        self.groups
            .iter()
            .find(|g| g.m() == m && g.rank == k)
            .filter(|g| i < g.count)
            .map(|g| g.start + i)
    }

    /// Sum of multiplicities over all samples.
    pub fn total_tags(&self) -> usize {
        self.samples.iter().map(|s| s.m).sum()
    }
}

pub fn generate_dataset(config: &LabelConfig) -> Result<Dataset> {
    config.validate()?;
    let k = config.num_classes;
    let mut samples = Vec::with_capacity(config.total());
    let mut groups = Vec::new();
    let mut sample_group = Vec::with_capacity(config.total());
    for m in 1..=config.max_multiplicity {
        for rank in 0..binomial(k, m) as usize {
            let count = config.count(m, rank);
            if count == 0 {
                continue;
            }
            groups.push(Group {
                set: lex_subset(k, m, rank)?,
                rank,
                start: samples.len(),
                count,
            });
            for i in 0..count {
                samples.push(Sample { m, k: rank, i });
                sample_group.push(groups.len() - 1);
            }
        }
    }
    Ok(Dataset {
        config: config.clone(),
        samples,
        groups,
        sample_group,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(k: usize, m: &[usize]) -> LabelSet {
        LabelSet::new(k, m.to_vec()).unwrap()
    }

    #[test]
    fn binomials() {
        assert_eq!(binomial(5, 2), 10);
        assert_eq!(binomial(10, 2), 45);
        assert_eq!(binomial(4, 0), 1);
        assert_eq!(binomial(3, 4), 0);
        assert_eq!(binomial(12, 6), 924);
    }

    #[test]
    fn lex_subset_listing() {
        assert_eq!(lex_subset(5, 2, 0).unwrap(), set(5, &[0, 1]));
        assert_eq!(lex_subset(5, 2, 9).unwrap(), set(5, &[3, 4]));
        assert_eq!(lex_subset(3, 1, 1).unwrap(), set(3, &[1]));
        assert!(lex_subset(5, 2, 10).is_err());
        assert!(lex_subset(5, 5, 0).is_err());
        assert!(lex_subset(5, 0, 0).is_err());
    }

    #[test]
    fn lex_rank_examples() {
        assert_eq!(lex_rank(5, &set(5, &[0, 1])).unwrap(), 0);
        assert_eq!(lex_rank(5, &set(5, &[3, 4])).unwrap(), 9);
        // {0,1} {0,2} {0,3} {1,2} {1,3} {2,3}
        assert_eq!(lex_rank(4, &set(4, &[1, 2])).unwrap(), 3);
        assert!(lex_rank(3, &set(5, &[3, 4])).is_err());
    }

    #[test]
    fn lex_roundtrip_exhaustive() {
        for k in 2..=10 {
            for m in 1..k {
                let all = subsets(k, m).unwrap();
                assert_eq!(all.len() as u64, binomial(k, m));
                for (r, s) in all.iter().enumerate() {
                    assert_eq!(lex_rank(k, s).unwrap(), r);
                }
                assert!(all.windows(2).all(|w| w[0] < w[1]));
            }
        }
    }

    #[test]
    fn label_set_rejects_bad_input() {
        assert!(LabelSet::new(3, vec![]).is_err());
        assert!(LabelSet::new(3, vec![0, 1, 2]).is_err());
        assert!(LabelSet::new(3, vec![1, 1]).is_err());
        assert!(LabelSet::new(3, vec![3]).is_err());
        assert_eq!(LabelSet::new(4, vec![2, 0]).unwrap().members(), &[0, 2]);
    }

    #[test]
    fn multi_hot_is_sum_of_one_hots() {
        let s = set(3, &[0, 2]);
        let v = multi_hot(3, &s);
        assert_eq!(v.as_slice(), &[1.0, 0.0, 1.0]);
        assert_eq!(multi_hot(4, &set(4, &[1])).as_slice(), &[0.0, 1.0, 0.0, 0.0]);
        let sum = multi_hot(3, &set(3, &[0])) + multi_hot(3, &set(3, &[2]));
        assert_eq!(v, sum);
    }

    #[test]
    fn label_matrix_small_cases() {
        let y = label_matrix(3, 1).unwrap();
        assert_eq!(y.entries, DMatrix::identity(3, 3));

        let y = label_matrix(5, 2).unwrap();
        for c in 0..10 {
            assert_eq!(y.entries.column(c).sum(), 2.0);
        }
        for r in 0..5 {
            assert_eq!(y.entries.row(r).sum(), 4.0);
        }
    }

    #[test]
    fn gram_constants_k4_m2() {
        let g = pinv_label_matrix(4, 2).unwrap();
        assert_eq!(g.a, Rational::from_integer(1));
        assert_eq!(g.b, Rational::from_integer(3));
        assert_eq!(g.c, Rational::from_integer(2));
        assert_eq!(g.b - g.a, Rational::from_integer(2));
        assert_eq!(g.tau, Rational::new(1, 2));
        assert_eq!(g.eta, Rational::new(-1, 6));
    }

    #[test]
    fn pinv_of_singletons_is_identity_pattern() {
        let g = pinv_label_matrix(3, 1).unwrap();
        assert_eq!(g.a, Rational::zero());
        assert_eq!(g.tau, Rational::one());
        assert_eq!(g.eta, Rational::zero());
        assert_eq!(pinv_matrix(3, 1).unwrap(), RationalMatrix::identity(3));
    }

    #[test]
    fn pinv_exact_k6_m3() {
        let y = label_matrix(6, 3).unwrap().to_rational();
        let p = pinv_matrix(6, 3).unwrap();
        let residual = p.mul(&y.transpose()).sub(&RationalMatrix::identity(6));
        assert_eq!(residual.max_abs(), Rational::zero());
    }

    #[test]
    fn projector_is_idempotent() {
        let p = row_space_projector(5, 2).unwrap();
        assert!((&p * &p - &p).amax() < 1e-12);
        assert!((&p - p.transpose()).amax() < 1e-12);
        // rank K
        assert!((p.trace() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn dataset_sizes() {
        let cfg = LabelConfig::balanced(3, &[1, 1]).unwrap();
        let d = generate_dataset(&cfg).unwrap();
        assert_eq!(d.len(), 6);
        assert_eq!(d.total_tags(), 9);

        let cfg = LabelConfig::balanced(10, &[3100, 200]).unwrap();
        assert_eq!(cfg.total(), 40000);
        assert_eq!(cfg.total_for(1), 31000);
        assert_eq!(cfg.total_for(2), 9000);

        let mut counts = BTreeMap::new();
        counts.insert(1, Counts::Balanced(1));
        counts.insert(2, Counts::PerSubset(vec![2, 1, 0, 2, 1, 1]));
        let cfg = LabelConfig {
            num_classes: 4,
            max_multiplicity: 2,
            counts,
        };
        let d = generate_dataset(&cfg).unwrap();
        assert_eq!(cfg.total_for(2), 7);
        assert_eq!(d.groups_with_multiplicity(2).count(), 5);
        assert_eq!(cfg.balanced_count(2), None);
        assert_eq!(cfg.balanced_count(1), Some(1));
        assert!(cfg.balanced_counts().is_none());
    }

    #[test]
    fn dataset_block_order() {
        let cfg = LabelConfig::balanced(4, &[2, 3]).unwrap();
        let d = generate_dataset(&cfg).unwrap();
        let keys: Vec<_> = d.samples.iter().map(|s| (s.m, s.k, s.i)).collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
        assert_eq!(d.block(1), 0..8);
        assert_eq!(d.block(2), 8..26);
        assert_eq!(d.column(2, 1, 2), Some(8 + 3 + 2));
        for g in &d.groups {
            for c in g.columns() {
                assert_eq!(d.label_set(c), &g.set);
            }
        }
    }

    #[test]
    fn config_validation() {
        assert!(LabelConfig::balanced(3, &[0, 0]).is_err());
        assert!(LabelConfig::balanced(3, &[1, 1, 1]).is_err());
        assert!(LabelConfig::balanced(1, &[1]).is_err());
        let mut counts = BTreeMap::new();
        counts.insert(2, Counts::PerSubset(vec![1, 2]));
        let cfg = LabelConfig {
            num_classes: 4,
            max_multiplicity: 2,
            counts,
        };
        assert!(cfg.validate().is_err());
    }
}
