//! Dense matrices, marginals and supports, together with the two elementary
//! scaling maps of the iteration and the functionals used to monitor it.
//!
//! Indices are 0-based throughout the library.

use std::fmt;
use std::ops::{Index, IndexMut};

use crate::error::{Axis, Error, Result};

/// Relative threshold below which an input entry counts as zero.
pub const ZERO_TOL: f64 = 1e-14;

/// Marginal vectors whose sum deviates from 1 by at most this much are
/// renormalized; larger deviations are rejected.
pub const SUM_TOL: f64 = 1e-9;

/// Dense row-major real matrix.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(d: usize) -> Self {
        let mut m = Self::zeros(d, d);
        for i in 0..d {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: format!("{} entries", rows * cols),
                found: format!("{} entries", data.len()),
            });
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from nested rows; all rows must have equal length.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::DimensionMismatch {
                    expected: format!("{cols} columns"),
                    found: format!("{} columns in row {i}", r.len()),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
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

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows).map(|i| self.row(i).iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.cols];
        for i in 0..self.rows {
            for (s, x) in sums.iter_mut().zip(self.row(i)) {
                *s += x;
            }
        }
        sums
    }

    pub fn total(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_entry(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_entry(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| x * factor).collect(),
        }
    }

    /// `Diag(row_factors) * self * Diag(col_factors)`.
    pub fn diag_scaled(&self, row_factors: &[f64], col_factors: &[f64]) -> Self {
        Self::from_fn(self.rows, self.cols, |i, j| {
            row_factors[i] * self[(i, j)] * col_factors[j]
        })
    }

    pub fn matmul(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.cols != rhs.rows {
            return Err(Error::DimensionMismatch {
                expected: format!("{} rows on the right", self.cols),
                found: format!("{}", rhs.rows),
            });
        }
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let x = self[(i, k)];
                if x == 0.0 {
                    continue;
                }
                for j in 0..rhs.cols {
                    out.data[i * rhs.cols + j] += x * rhs[(k, j)];
                }
            }
        }
        Ok(out)
    }

    pub fn mul_vec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return Err(Error::DimensionMismatch {
                expected: format!("vector of length {}", self.cols),
                found: format!("{}", v.len()),
            });
        }
        Ok((0..self.rows)
            .map(|i| self.row(i).iter().zip(v).map(|(m, x)| m * x).sum())
            .collect())
    }

    /// Entrywise L1 distance. Panics on shape mismatch.
    pub fn l1_distance(&self, other: &Matrix) -> f64 {
        assert_eq!(self.shape(), other.shape(), "l1_distance shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(x, y)| (x - y).abs())
            .sum()
    }

    /// Largest entrywise absolute difference. Panics on shape mismatch.
    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!(self.shape(), other.shape(), "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            writeln!(f, "  {:?}", self.row(i))?;
        }
        write!(f, "]")
    }
}

/// Strictly positive target weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct Marginals(Vec<f64>);

impl Marginals {
    /// Validates positivity and the unit sum. Sums within [`SUM_TOL`] of 1
    /// are renormalized exactly.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        let sum = Self::check_positive(&values)?;
        if (sum - 1.0).abs() > SUM_TOL {
            return Err(Error::InvalidMarginals(format!(
                "entries sum to {sum}, expected 1"
            )));
        }
        Ok(Self(values.into_iter().map(|x| x / sum).collect()))
    }

    /// Scales arbitrary positive weights to unit sum.
    pub fn from_weights(values: Vec<f64>) -> Result<Self> {
        let sum = Self::check_positive(&values)?;
        Ok(Self(values.into_iter().map(|x| x / sum).collect()))
    }

    fn check_positive(values: &[f64]) -> Result<f64> {
        if values.is_empty() {
            return Err(Error::InvalidMarginals("empty vector".into()));
        }
        if let Some((i, x)) = values
            .iter()
            .enumerate()
            .find(|(_, x)| !(x.is_finite() && **x > 0.0))
        {
            return Err(Error::InvalidMarginals(format!(
                "entry {i} is {x}; entries must be positive"
            )));
        }
        Ok(values.iter().sum())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn min(&self) -> f64 {
        self.0.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Sum of the weights over a set of indices.
    pub fn mass(&self, indices: &[usize]) -> f64 {
        indices.iter().map(|&i| self.0[i]).sum()
    }

    /// Weights restricted to `indices`, renormalized to unit sum.
    pub fn conditional(&self, indices: &[usize]) -> Result<Marginals> {
        Marginals::from_weights(indices.iter().map(|&i| self.0[i]).collect())
    }
}

impl Index<usize> for Marginals {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Non-negative matrix of size at least 2x2 with no empty row or column.
#[derive(Debug, Clone, PartialEq)]
pub struct NonNegMatrix(Matrix);

impl NonNegMatrix {
    pub fn new(m: Matrix) -> Result<Self> {
        if m.rows() < 2 || m.cols() < 2 {
            return Err(Error::TooSmall {
                rows: m.rows(),
                cols: m.cols(),
            });
        }
        Self::check_lines(&m)?;
        Ok(Self(m))
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        Self::new(Matrix::from_rows(rows)?)
    }

    fn check_lines(m: &Matrix) -> Result<()> {
        for i in 0..m.rows() {
            for j in 0..m.cols() {
                let x = m[(i, j)];
                if !(x.is_finite() && x >= 0.0) {
                    return Err(Error::InvalidEntry {
                        row: i,
                        col: j,
                        value: x,
                    });
                }
            }
        }
        if let Some(i) = m.row_sums().iter().position(|&s| s <= 0.0) {
            return Err(Error::EmptyLine {
                axis: Axis::Row,
                index: i,
            });
        }
        if let Some(j) = m.col_sums().iter().position(|&s| s <= 0.0) {
            return Err(Error::EmptyLine {
                axis: Axis::Column,
                index: j,
            });
        }
        Ok(())
    }

    /// Wraps a matrix known to satisfy the invariants (scalings of a valid
    /// matrix by positive diagonals).
    pub(crate) fn from_scaled(m: Matrix) -> Self {
        debug_assert!(Self::check_lines(&m).is_ok());
        Self(m)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    pub fn rows(&self) -> usize {
        self.0.rows()
    }

    pub fn cols(&self) -> usize {
        self.0.cols()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.0.shape()
    }

    pub fn normalized(&self) -> Self {
        Self(self.0.scaled(1.0 / self.0.total()))
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    pub fn support(&self) -> SupportPattern {
        SupportPattern::of(&self.0)
    }

    /// Entries outside `pattern` set to zero.
    pub fn restricted_to(&self, pattern: &SupportPattern) -> Result<Self> {
        check_shape(self.shape(), pattern.shape())?;
        let m = Matrix::from_fn(self.rows(), self.cols(), |i, j| {
            if pattern.contains(i, j) {
                self.0[(i, j)]
            } else {
                0.0
            }
        });
        Self::new(m)
    }
}

impl AsRef<Matrix> for NonNegMatrix {
    fn as_ref(&self) -> &Matrix {
        &self.0
    }
}

impl AsRef<Matrix> for Matrix {
    fn as_ref(&self) -> &Matrix {
        self
    }
}

impl Index<(usize, usize)> for NonNegMatrix {
    type Output = f64;

    fn index(&self, ij: (usize, usize)) -> &f64 {
        &self.0[ij]
    }
}

/// Boolean mask of the positive cells of a matrix.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct SupportPattern {
    rows: usize,
    cols: usize,
    mask: Vec<bool>,
}

impl SupportPattern {
    /// Cells above `ZERO_TOL * max entry`.
    pub fn of(m: &Matrix) -> Self {
        let threshold = ZERO_TOL * m.max_entry().max(0.0);
        Self {
            rows: m.rows(),
            cols: m.cols(),
            mask: m.as_slice().iter().map(|&x| x > threshold).collect(),
        }
    }

    /// Builds a pattern and checks that no row or column is empty.
    pub fn new(rows: usize, cols: usize, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: format!("{} cells", rows * cols),
                found: format!("{}", mask.len()),
            });
        }
        let p = Self { rows, cols, mask };
        p.check_lines()?;
        Ok(p)
    }

    pub fn from_rows<R: AsRef<[bool]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut mask = Vec::new();
        for r in rows {
            if r.as_ref().len() != cols {
                return Err(Error::DimensionMismatch {
                    expected: format!("{cols} columns"),
                    found: format!("{}", r.as_ref().len()),
                });
            }
            mask.extend_from_slice(r.as_ref());
        }
        Self::new(rows.len(), cols, mask)
    }

    /// Parses rows of `*` (positive) and `0` (zero), whitespace ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let rows: Vec<Vec<bool>> = text
            .lines()
            .map(|l| {
                l.chars()
                    .filter(|c| !c.is_whitespace())
                    .map(|c| c == '*')
                    .collect::<Vec<_>>()
            })
            .filter(|r| !r.is_empty())
            .collect();
        Self::from_rows(&rows)
    }

    /// Full pattern: every cell positive.
    pub fn full(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            mask: vec![true; rows * cols],
        }
    }

    fn check_lines(&self) -> Result<()> {
        for i in 0..self.rows {
            if !(0..self.cols).any(|j| self.contains(i, j)) {
                return Err(Error::EmptyLine {
                    axis: Axis::Row,
                    index: i,
                });
            }
        }
        for j in 0..self.cols {
            if !(0..self.rows).any(|i| self.contains(i, j)) {
                return Err(Error::EmptyLine {
                    axis: Axis::Column,
                    index: j,
                });
            }
        }
        Ok(())
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

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.mask[i * self.cols + j]
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }

    pub fn cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.rows)
            .flat_map(move |i| (0..self.cols).map(move |j| (i, j)))
            .filter(move |&(i, j)| self.contains(i, j))
    }

    pub fn is_subset_of(&self, other: &SupportPattern) -> bool {
        self.shape() == other.shape() && self.mask.iter().zip(&other.mask).all(|(&a, &b)| !a || b)
    }

    /// Whether the pattern has no positive cell on `rows x cols`.
    pub fn is_zero_on(&self, rows: &[usize], cols: &[usize]) -> bool {
        rows.iter()
            .all(|&i| cols.iter().all(|&j| !self.contains(i, j)))
    }

    /// Sub-pattern on `rows x cols`, reindexed from 0. Errors if a line of the
    /// sub-pattern is empty.
    pub fn restrict(&self, rows: &[usize], cols: &[usize]) -> Result<Self> {
        let mask = rows
            .iter()
            .flat_map(|&i| cols.iter().map(move |&j| (i, j)))
            .map(|(i, j)| self.contains(i, j))
            .collect();
        Self::new(rows.len(), cols.len(), mask)
    }

    /// Same shape, with the cells where `keep` is false removed. No line
    /// check is performed.
    pub fn filtered(&self, mut keep: impl FnMut(usize, usize) -> bool) -> Self {
        let mut out = self.clone();
        for i in 0..self.rows {
            for j in 0..self.cols {
                if out.contains(i, j) && !keep(i, j) {
                    out.mask[i * self.cols + j] = false;
                }
            }
        }
        out
    }

    pub fn to_rows(&self) -> Vec<Vec<bool>> {
        (0..self.rows)
            .map(|i| (0..self.cols).map(|j| self.contains(i, j)).collect())
            .collect()
    }
}

impl fmt::Debug for SupportPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "SupportPattern {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            let line: String = (0..self.cols)
                .map(|j| if self.contains(i, j) { '*' } else { '0' })
                .collect();
            writeln!(f, "  {line}")?;
        }
        write!(f, "]")
    }
}

fn check_shape(expected: (usize, usize), found: (usize, usize)) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch {
            expected: format!("{}x{}", expected.0, expected.1),
            found: format!("{}x{}", found.0, found.1),
        });
    }
    Ok(())
}

fn check_len(what: &str, expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch {
            expected: format!("{what} of length {expected}"),
            found: format!("{found}"),
        });
    }
    Ok(())
}

/// Seed matrix and target marginals.
///
/// The seed is stored with unit total mass and with entries below the
/// support threshold set to exactly zero, so the iterates keep the support
/// of the pattern returned by [`FittingProblem::support`].
#[derive(Debug, Clone, PartialEq)]
pub struct FittingProblem {
    x0: NonNegMatrix,
    a: Marginals,
    b: Marginals,
}

impl FittingProblem {
    pub fn new(x0: NonNegMatrix, a: Marginals, b: Marginals) -> Result<Self> {
        check_len("row marginals", x0.rows(), a.len())?;
        check_len("column marginals", x0.cols(), b.len())?;
        let pattern = x0.support();
        let cleaned = x0.restricted_to(&pattern)?.normalized();
        Ok(Self { x0: cleaned, a, b })
    }

    /// Convenience constructor from raw nested rows and marginal vectors.
    pub fn from_parts<R: AsRef<[f64]>>(x0: &[R], a: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        Self::new(
            NonNegMatrix::from_rows(x0)?,
            Marginals::new(a)?,
            Marginals::new(b)?,
        )
    }

    pub fn x0(&self) -> &NonNegMatrix {
        &self.x0
    }

    pub fn a(&self) -> &Marginals {
        &self.a
    }

    pub fn b(&self) -> &Marginals {
        &self.b
    }

    pub fn shape(&self) -> (usize, usize) {
        self.x0.shape()
    }

    pub fn support(&self) -> SupportPattern {
        self.x0.support()
    }

    /// Same seed with other marginals.
    pub fn with_marginals(&self, a: Marginals, b: Marginals) -> Result<Self> {
        Self::new(self.x0.clone(), a, b)
    }

    /// Same marginals with the seed zeroed outside `pattern`.
    pub fn restricted_to(&self, pattern: &SupportPattern) -> Result<Self> {
        Self::new(
            self.x0.restricted_to(pattern)?,
            self.a.clone(),
            self.b.clone(),
        )
    }
}

/// Row ratios `R_i = X(i,+)/a_i` and column ratios `C_j = X(+,j)/b_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct RatioVectors {
    pub r: Vec<f64>,
    pub c: Vec<f64>,
}

fn min_of(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::INFINITY, f64::min)
}

fn max_of(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

impl RatioVectors {
    pub fn r_min(&self) -> f64 {
        min_of(&self.r)
    }

    pub fn r_max(&self) -> f64 {
        max_of(&self.r)
    }

    pub fn c_min(&self) -> f64 {
        min_of(&self.c)
    }

    pub fn c_max(&self) -> f64 {
        max_of(&self.c)
    }

    /// `sum_i a_i R_i`; equals the total mass of the matrix.
    pub fn weighted_row_mean(&self, a: &Marginals) -> f64 {
        self.r.iter().zip(a.as_slice()).map(|(r, a)| r * a).sum()
    }
}

pub fn ratio_vectors(x: &NonNegMatrix, a: &Marginals, b: &Marginals) -> Result<RatioVectors> {
    check_len("row marginals", x.rows(), a.len())?;
    check_len("column marginals", x.cols(), b.len())?;
    let m = x.matrix();
    Ok(RatioVectors {
        r: m.row_sums()
            .iter()
            .zip(a.as_slice())
            .map(|(s, a)| s / a)
            .collect(),
        c: m.col_sums()
            .iter()
            .zip(b.as_slice())
            .map(|(s, b)| s / b)
            .collect(),
    })
}

/// Row step: divide row `i` by `R_i(x)`, so that row sums become `a`.
pub fn t_r(x: &NonNegMatrix, a: &Marginals) -> Result<NonNegMatrix> {
    check_len("row marginals", x.rows(), a.len())?;
    let m = x.matrix();
    let factors: Vec<f64> = m
        .row_sums()
        .iter()
        .zip(a.as_slice())
        .map(|(s, a)| a / s)
        .collect();
    let ones = vec![1.0; m.cols()];
    Ok(NonNegMatrix::from_scaled(m.diag_scaled(&factors, &ones)))
}

/// Column step: divide column `j` by `C_j(x)`, so that column sums become `b`.
pub fn t_c(x: &NonNegMatrix, b: &Marginals) -> Result<NonNegMatrix> {
    check_len("column marginals", x.cols(), b.len())?;
    let m = x.matrix();
    let factors: Vec<f64> = m
        .col_sums()
        .iter()
        .zip(b.as_slice())
        .map(|(s, b)| b / s)
        .collect();
    let ones = vec![1.0; m.rows()];
    Ok(NonNegMatrix::from_scaled(m.diag_scaled(&ones, &factors)))
}

/// Relative entropy `D(y || x)`; `f64::INFINITY` when the support of `y` is
/// not contained in the support of `x`.
pub fn kl_divergence(y: impl AsRef<Matrix>, x: impl AsRef<Matrix>) -> Result<f64> {
    let (y, x) = (y.as_ref(), x.as_ref());
    check_shape(x.shape(), y.shape())?;
    let mut d = 0.0;
    for (&yv, &xv) in y.as_slice().iter().zip(x.as_slice()) {
        if yv > 0.0 {
            if xv == 0.0 {
                return Ok(f64::INFINITY);
            }
            d += yv * (yv / xv).ln();
        }
    }
    // round-off can push the sum of a nearly-zero divergence below 0
    Ok(d.max(0.0))
}

/// `ln F_S(X) = sum S(i,j) ln X(i,j)` with `0 ln 0 = 0`; `-inf` when
/// `Supp(S)` is not inside `Supp(X)`.
pub fn ln_f_s(s: impl AsRef<Matrix>, x: impl AsRef<Matrix>) -> Result<f64> {
    let (s, x) = (s.as_ref(), x.as_ref());
    check_shape(s.shape(), x.shape())?;
    let mut acc = 0.0;
    for (&sv, &xv) in s.as_slice().iter().zip(x.as_slice()) {
        if sv > 0.0 {
            if xv == 0.0 {
                return Ok(f64::NEG_INFINITY);
            }
            acc += sv * xv.ln();
        }
    }
    Ok(acc)
}

/// `F_S(X) = prod X(i,j)^S(i,j)` with `0^0 = 1`.
pub fn f_s(s: impl AsRef<Matrix>, x: impl AsRef<Matrix>) -> Result<f64> {
    Ok(ln_f_s(s, x)?.exp())
}

/// L1 error `sum_i |X(i,+) - a_i| + sum_j |X(+,j) - b_j|`.
pub fn l1_error(x: &NonNegMatrix, a: &Marginals, b: &Marginals) -> Result<f64> {
    check_len("row marginals", x.rows(), a.len())?;
    check_len("column marginals", x.cols(), b.len())?;
    let m = x.matrix();
    let rows: f64 = m
        .row_sums()
        .iter()
        .zip(a.as_slice())
        .map(|(s, a)| (s - a).abs())
        .sum();
    let cols: f64 = m
        .col_sums()
        .iter()
        .zip(b.as_slice())
        .map(|(s, b)| (s - b).abs())
        .sum();
    Ok(rows + cols)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(x: f64, y: f64, tol: f64) -> bool {
        (x - y).abs() <= tol
    }

    fn fast_problem() -> FittingProblem {
        FittingProblem::from_parts(
            &[[0.5, 0.25], [0.25, 0.0]],
            vec![2.0 / 3.0, 1.0 / 3.0],
            vec![2.0 / 3.0, 1.0 / 3.0],
        )
        .unwrap()
    }

    #[test]
    fn marginals_renormalize_small_drift_and_reject_large() {
        let m = Marginals::new(vec![0.5, 0.5 + 5e-10]).unwrap();
        assert!(close(m.as_slice().iter().sum::<f64>(), 1.0, 1e-15));
        assert!(Marginals::new(vec![0.5, 0.6]).is_err());
        assert!(Marginals::new(vec![1.0, 0.0]).is_err());
        assert!(Marginals::new(vec![1.5, -0.5]).is_err());
    }

    #[test]
    fn nonneg_matrix_rejects_bad_input() {
        assert!(matches!(
            NonNegMatrix::from_rows(&[[1.0, 0.0], [0.0, 0.0]]),
            Err(Error::EmptyLine {
                axis: Axis::Row,
                index: 1
            })
        ));
        assert!(matches!(
            NonNegMatrix::from_rows(&[[1.0, 0.0], [1.0, 0.0]]),
            Err(Error::EmptyLine {
                axis: Axis::Column,
                index: 1
            })
        ));
        assert!(matches!(
            NonNegMatrix::from_rows(&[[1.0, -1.0], [1.0, 1.0]]),
            Err(Error::InvalidEntry { .. })
        ));
        assert!(matches!(
            NonNegMatrix::from_rows(&[[1.0, 1.0]]),
            Err(Error::TooSmall { .. })
        ));
    }

    #[test]
    fn problem_normalizes_and_cleans_denormals() {
        let p = FittingProblem::from_parts(
            &[[2.0, 1e-300], [1.0, 1.0]],
            vec![0.5, 0.5],
            vec![0.5, 0.5],
        )
        .unwrap();
        assert!(close(p.x0().matrix().total(), 1.0, 1e-15));
        assert_eq!(p.x0()[(0, 1)], 0.0);
        assert_eq!(p.support().count(), 3);
    }

    #[test]
    fn t_r_fixed_point() {
        let a = Marginals::new(vec![0.25, 0.75]).unwrap();
        let x = NonNegMatrix::from_rows(&[[0.125, 0.125], [0.5, 0.25]]).unwrap();
        let y = t_r(&x, &a).unwrap();
        assert!(y.matrix().max_abs_diff(x.matrix()) < 1e-15);
    }

    #[test]
    fn t_r_hand_example() {
        // (1/4)[[2,1],[1,0]] with a = (2/3, 1/3): R = (9/8, 3/4).
        let p = fast_problem();
        let x1 = t_r(p.x0(), p.a()).unwrap();
        let expected = Matrix::from_rows(&[[4.0 / 9.0, 2.0 / 9.0], [1.0 / 3.0, 0.0]]).unwrap();
        assert!(x1.matrix().max_abs_diff(&expected) < 1e-15);
        assert_eq!(x1.support(), p.support());
    }

    #[test]
    fn t_c_hand_example() {
        let p = fast_problem();
        let x1 = t_r(p.x0(), p.a()).unwrap();
        let x2 = t_c(&x1, p.b()).unwrap();
        // C(X1) = (7/6, 2/3)
        let expected = Matrix::from_rows(&[[8.0 / 21.0, 1.0 / 3.0], [2.0 / 7.0, 0.0]]).unwrap();
        assert!(x2.matrix().max_abs_diff(&expected) < 1e-15);
    }

    #[test]
    fn t_r_dimension_mismatch() {
        let x = NonNegMatrix::from_rows(&[[1.0, 1.0], [1.0, 1.0]]).unwrap();
        let a = Marginals::new(vec![0.2, 0.3, 0.5]).unwrap();
        assert!(matches!(t_r(&x, &a), Err(Error::DimensionMismatch { .. })));
        assert!(matches!(t_c(&x, &a), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn ratios_of_fitted_and_outer_product() {
        let a = Marginals::new(vec![0.2, 0.3, 0.5]).unwrap();
        let b = Marginals::new(vec![0.6, 0.4]).unwrap();
        let outer = NonNegMatrix::new(Matrix::from_fn(3, 2, |i, j| a[i] * b[j])).unwrap();
        let rv = ratio_vectors(&outer, &a, &b).unwrap();
        assert!(rv.r.iter().chain(&rv.c).all(|&x| close(x, 1.0, 1e-15)));
    }

    #[test]
    fn ratios_slow_example() {
        let half = Marginals::new(vec![0.5, 0.5]).unwrap();
        let x1 = NonNegMatrix::from_rows(&[[0.25, 0.25], [0.5, 0.0]]).unwrap();
        let rv = ratio_vectors(&x1, &half, &half).unwrap();
        assert_eq!(rv.r, vec![1.0, 1.0]);
        assert_eq!(rv.c, vec![1.5, 0.5]);
        assert!(close(rv.weighted_row_mean(&half), 1.0, 1e-15));
    }

    #[test]
    fn kl_basic_values() {
        let x = NonNegMatrix::from_rows(&[[0.25, 0.25], [0.5, 0.0]]).unwrap();
        assert_eq!(kl_divergence(&x, &x).unwrap(), 0.0);
        let y = NonNegMatrix::from_rows(&[[0.25, 0.25], [0.25, 0.25]]).unwrap();
        assert_eq!(kl_divergence(&y, &x).unwrap(), f64::INFINITY);
        // y = (1/2, 1/2) against x = (1/4, 3/4) on the first row
        let y = NonNegMatrix::from_rows(&[[0.5, 0.5], [0.0, 0.0]]);
        assert!(y.is_err());
        let y = NonNegMatrix::from_rows(&[[0.5, 0.0], [0.0, 0.5]]).unwrap();
        let x = NonNegMatrix::from_rows(&[[0.25, 0.0], [0.0, 0.75]]).unwrap();
        let expected = 0.5 * (0.5f64 / 0.25).ln() + 0.5 * (0.5f64 / 0.75).ln();
        assert!(close(kl_divergence(&y, &x).unwrap(), expected, 1e-15));
    }

    #[test]
    fn f_s_single_cell_and_support() {
        let single = Matrix::from_rows(&[[0.0, 1.0], [0.0, 0.0]]).unwrap();
        let x = NonNegMatrix::from_rows(&[[0.1, 0.2], [0.3, 0.4]]).unwrap();
        assert!(close(f_s(&single, &x).unwrap(), 0.2, 1e-15));
        let s = NonNegMatrix::from_rows(&[[0.5, 0.0], [0.0, 0.5]]).unwrap();
        let x = NonNegMatrix::from_rows(&[[0.1, 0.2], [0.3, 0.4]]).unwrap();
        assert!(close(f_s(&s, &x).unwrap(), (0.1f64 * 0.4).sqrt(), 1e-15));
        let x = NonNegMatrix::from_rows(&[[0.0, 0.2], [0.4, 0.4]]).unwrap();
        assert_eq!(f_s(&s, &x).unwrap(), 0.0);
    }

    #[test]
    fn l1_error_slow_example() {
        let half = Marginals::new(vec![0.5, 0.5]).unwrap();
        let x1 = NonNegMatrix::from_rows(&[[0.25, 0.25], [0.5, 0.0]]).unwrap();
        assert!(close(l1_error(&x1, &half, &half).unwrap(), 0.5, 1e-15));
    }

    #[test]
    fn support_pattern_parse_and_restrict() {
        let p = SupportPattern::parse("**0\n0**\n*0*").unwrap();
        assert_eq!(p.count(), 6);
        assert!(p.is_zero_on(&[0], &[2]));
        let r = p.restrict(&[1, 2], &[1, 2]).unwrap();
        assert_eq!(r.to_rows(), vec![vec![true, true], vec![false, true]]);
        assert!(p.restrict(&[0], &[2]).is_err());
        assert!(SupportPattern::parse("*0\n00").is_err());
    }
}
