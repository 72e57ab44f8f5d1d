//! Support patterns of matrices and matrix-valued functions.
//!
//! A [`SupportPattern`] records which entries of an `m x n` matrix are
//! nonzero. For a matrix-valued function the support is the union of the
//! pointwise supports; since the domain cannot be enumerated, callers supply
//! the points at which the function is sampled, so the result may
//! under-approximate the true support.

use std::collections::BTreeSet;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{max_abs, numeric_rank};

/// Relative zero threshold used when none is given.
pub const DEFAULT_RELATIVE_TOL: f64 = 1e-9;

/// Singular values below this fraction of the largest are treated as zero.
pub const BINARY_RANK_TOL: f64 = 1e-9;

/// How entries are judged to be zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum Tolerance {
    /// `|m_ij| > tol`.
    Absolute(f64),
    /// `|m_ij| > tol * max|m|`, evaluated per matrix.
    Relative(f64),
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance::Relative(DEFAULT_RELATIVE_TOL)
    }
}

impl Tolerance {
    pub fn threshold_for(&self, m: &DMatrix<f64>) -> f64 {
        match *self {
            Tolerance::Absolute(t) => t,
            Tolerance::Relative(r) => r * max_abs(m),
        }
    }
}

/// Binary occupancy of an `rows x cols` matrix.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawPattern")]
pub struct SupportPattern {
    rows: usize,
    cols: usize,
    entries: BTreeSet<(usize, usize)>,
}

#[derive(Deserialize)]
struct RawPattern {
    rows: usize,
    cols: usize,
    entries: Vec<(usize, usize)>,
}

impl TryFrom<RawPattern> for SupportPattern {
    type Error = Error;

    fn try_from(raw: RawPattern) -> Result<Self> {
        if raw.rows == 0 || raw.cols == 0 {
            return Err(Error::Invalid("pattern dimensions must be positive".into()));
        }
        SupportPattern::from_entries(raw.rows, raw.cols, raw.entries)
    }
}

impl SupportPattern {
    pub fn empty(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            entries: BTreeSet::new(),
        }
    }

    pub fn from_entries(
        rows: usize,
        cols: usize,
        entries: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self> {
        let mut pattern = Self::empty(rows, cols);
        for (i, j) in entries {
            pattern.insert(i, j)?;
        }
        Ok(pattern)
    }

    /// Builds a pattern from 0/1 rows; any nonzero cell is an entry.
    pub fn from_rows<R: AsRef<[u8]>>(rows: &[R]) -> Result<Self> {
        let m = rows.len();
        let n = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut pattern = Self::empty(m, n);
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != n {
                return Err(Error::shape(format!("{n} columns"), format!("{} in row {i}", row.len())));
            }
            for (j, &v) in row.iter().enumerate() {
                if v != 0 {
                    pattern.entries.insert((i, j));
                }
            }
        }
        Ok(pattern)
    }

    pub fn identity(n: usize) -> Self {
        Self {
            rows: n,
            cols: n,
            entries: (0..n).map(|i| (i, i)).collect(),
        }
    }

    pub fn full(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            entries: (0..rows).flat_map(|i| (0..cols).map(move |j| (i, j))).collect(),
        }
    }

    pub fn insert(&mut self, row: usize, col: usize) -> Result<bool> {
        if row >= self.rows || col >= self.cols {
            return Err(Error::IndexOutOfBounds {
                row,
                col,
                rows: self.rows,
                cols: self.cols,
            });
        }
        Ok(self.entries.insert((row, col)))
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    /// L0 size of the pattern.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        self.entries.contains(&(row, col))
    }

    pub fn entries(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.entries.iter().copied()
    }

    /// Column indices present in row `i`.
    pub fn row(&self, i: usize) -> BTreeSet<usize> {
        self.entries.range((i, 0)..(i + 1, 0)).map(|&(_, j)| j).collect()
    }

    /// Row indices present in column `j`.
    pub fn col(&self, j: usize) -> BTreeSet<usize> {
        self.entries.iter().filter(|&&(_, c)| c == j).map(|&(i, _)| i).collect()
    }

    pub fn row_len(&self, i: usize) -> usize {
        self.entries.range((i, 0)..(i + 1, 0)).count()
    }

    /// Sub-pattern made of the given columns, renumbered `0..cols.len()`.
    pub fn select_cols(&self, cols: &[usize]) -> SupportPattern {
        let mut out = SupportPattern::empty(self.rows, cols.len());
        for (new_j, &j) in cols.iter().enumerate() {
            for i in self.col(j) {
                out.entries.insert((i, new_j));
            }
        }
        out
    }

    pub fn union(&self, other: &SupportPattern) -> Result<SupportPattern> {
        self.check_same_shape(other)?;
        Ok(SupportPattern {
            rows: self.rows,
            cols: self.cols,
            entries: self.entries.union(&other.entries).copied().collect(),
        })
    }

    pub fn is_subset(&self, other: &SupportPattern) -> bool {
        self.shape() == other.shape() && self.entries.is_subset(&other.entries)
    }

    /// Exactly one entry in every row and every column.
    pub fn is_permutation(&self) -> bool {
        self.rows == self.cols
            && self.len() == self.rows
            && (0..self.rows).all(|i| self.row_len(i) == 1)
            && (0..self.cols).all(|j| self.entries.iter().any(|&(_, c)| c == j))
    }

    /// 0/1 realization.
    pub fn to_matrix(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.rows, self.cols);
        for &(i, j) in &self.entries {
            m[(i, j)] = 1.0;
        }
        m
    }

    pub fn to_rows(&self) -> Vec<Vec<u8>> {
        (0..self.rows)
            .map(|i| (0..self.cols).map(|j| self.contains(i, j) as u8).collect())
            .collect()
    }

    pub(crate) fn check_same_shape(&self, other: &SupportPattern) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::shape(
                format!("{}x{}", self.rows, self.cols),
                format!("{}x{}", other.rows, other.cols),
            ));
        }
        Ok(())
    }
}

impl fmt::Display for SupportPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..self.rows {
            let line: String = (0..self.cols)
                .map(|j| if self.contains(i, j) { '#' } else { '.' })
                .collect();
            writeln!(f, "{line}")?;
        }
        Ok(())
    }
}

/// A subset `S` of `{0, .., ambient-1}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexSubset {
    ambient: usize,
    members: BTreeSet<usize>,
}

impl IndexSubset {
    pub fn new(ambient: usize, members: impl IntoIterator<Item = usize>) -> Result<Self> {
        let members: BTreeSet<usize> = members.into_iter().collect();
        if let Some(&bad) = members.iter().find(|&&i| i >= ambient) {
            return Err(Error::Invalid(format!(
                "index {bad} outside ambient dimension {ambient}"
            )));
        }
        Ok(Self { ambient, members })
    }

    pub fn ambient(&self) -> usize {
        self.ambient
    }

    pub fn members(&self) -> &BTreeSet<usize> {
        &self.members
    }

    pub fn contains(&self, i: usize) -> bool {
        self.members.contains(&i)
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Entries with `|m_ij| > tol`.
pub fn compute_support(m: &DMatrix<f64>, tol: f64) -> SupportPattern {
    let mut pattern = SupportPattern::empty(m.nrows(), m.ncols());
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            if m[(i, j)].abs() > tol {
                pattern.entries.insert((i, j));
            }
        }
    }
    pattern
}

pub fn support_with(m: &DMatrix<f64>, tol: Tolerance) -> SupportPattern {
    compute_support(m, tol.threshold_for(m))
}

/// Union of pointwise supports of `jacobian_at` over `points`.
pub fn function_support<F>(
    mut jacobian_at: F,
    points: &[DVector<f64>],
    tol: Tolerance,
) -> Result<SupportPattern>
where
    F: FnMut(&DVector<f64>) -> Result<DMatrix<f64>>,
{
    let (first, rest) = points
        .split_first()
        .ok_or_else(|| Error::Invalid("function support needs at least one sample point".into()))?;
    let j0 = jacobian_at(first)?;
    let mut acc = support_with(&j0, tol);
    for p in rest {
        let j = jacobian_at(p)?;
        if j.shape() != j0.shape() {
            return Err(Error::shape(
                format!("{}x{}", j0.nrows(), j0.ncols()),
                format!("{}x{}", j.nrows(), j.ncols()),
            ));
        }
        acc.entries.extend(support_with(&j, tol).entries);
    }
    Ok(acc)
}

/// Drops entries that are the only nonzero of their row.
pub fn overlap(s: &SupportPattern) -> SupportPattern {
    SupportPattern {
        rows: s.rows,
        cols: s.cols,
        entries: s
            .entries
            .iter()
            .copied()
            .filter(|&(i, _)| s.row_len(i) >= 2)
            .collect(),
    }
}

/// Numeric rank of the 0/1 realization of `s`.
pub fn binary_rank(s: &SupportPattern) -> usize {
    if s.is_empty() {
        return 0;
    }
    numeric_rank(&s.to_matrix(), BINARY_RANK_TOL)
}

/// Whether `v` vanishes (within `tol`) outside `subset`.
pub fn in_subspace(v: &DVector<f64>, subset: &IndexSubset, tol: f64) -> Result<bool> {
    if v.len() != subset.ambient {
        return Err(Error::DimensionMismatch {
            expected: subset.ambient,
            actual: v.len(),
        });
    }
    Ok(v
        .iter()
        .enumerate()
        .all(|(i, x)| subset.contains(i) || x.abs() <= tol))
}
