//! Backward products `M_n ... M_1` of stochastic matrices.
//!
//! Everything here works on finite sequences: convergence of an infinite
//! product is judged from the tail of a truncation (the final third of the
//! recorded steps).

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Allowed row-sum drift for a stochastic matrix.
pub const STOCHASTIC_TOL: f64 = 1e-12;

/// Allowed row-sum drift of a partial product before it is reported.
pub const PRODUCT_DRIFT_TOL: f64 = 1e-10;

/// Two limit rows closer than this in L1 count as equal.
pub const ROW_SEPARATION_TOL: f64 = 1e-6;

/// Default threshold for the tail (Cauchy) tests.
pub const DEFAULT_TAIL_TOL: f64 = 1e-6;

/// Square matrix with non-negative entries and unit row sums.
#[derive(Debug, Clone, PartialEq)]
pub struct StochasticMatrix(Matrix);

impl StochasticMatrix {
    pub fn new(m: Matrix) -> Result<Self> {
        Self::with_tolerance(m, STOCHASTIC_TOL)
    }

    pub fn with_tolerance(m: Matrix, tol: f64) -> Result<Self> {
        if m.rows() != m.cols() {
            return Err(Error::DimensionMismatch {
                expected: "square matrix".into(),
                found: format!("{}x{}", m.rows(), m.cols()),
            });
        }
        check_row_stochastic(&m, tol)?;
        Ok(Self(m))
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        Self::new(Matrix::from_rows(rows)?)
    }

    pub fn identity(d: usize) -> Self {
        Self(Matrix::identity(d))
    }

    pub fn dim(&self) -> usize {
        self.0.rows()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    pub fn is_doubly_stochastic(&self, tol: f64) -> bool {
        self.0.col_sums().iter().all(|s| (s - 1.0).abs() <= tol)
    }

    pub fn min_diagonal(&self) -> f64 {
        (0..self.dim())
            .map(|i| self.0[(i, i)])
            .fold(f64::INFINITY, f64::min)
    }

    /// `max M(i,j)/M(j,i)` with `0/0 = 1` and `x/0 = +inf` for `x > 0`.
    pub fn max_reverse_ratio(&self) -> f64 {
        let d = self.dim();
        let mut rho: f64 = 1.0;
        for i in 0..d {
            for j in 0..d {
                let (x, y) = (self.0[(i, j)], self.0[(j, i)]);
                let r = match (x > 0.0, y > 0.0) {
                    (false, _) => 1.0,
                    (true, false) => f64::INFINITY,
                    (true, true) => x / y,
                };
                rho = rho.max(r);
            }
        }
        rho
    }

    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.0.mul_vec(v)
    }
}

impl std::ops::Index<(usize, usize)> for StochasticMatrix {
    type Output = f64;

    fn index(&self, ij: (usize, usize)) -> &f64 {
        &self.0[ij]
    }
}

fn check_row_stochastic(m: &Matrix, tol: f64) -> Result<()> {
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
    for (i, s) in m.row_sums().into_iter().enumerate() {
        if (s - 1.0).abs() > tol {
            return Err(Error::NotStochastic { row: i, sum: s });
        }
    }
    Ok(())
}

/// Hypotheses of the product theorems, measured over a whole sequence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssumptionCheck {
    /// smallest diagonal entry over all factors
    pub gamma: f64,
    /// largest `M(i,j)/M(j,i)`, possibly `+inf`
    pub rho: f64,
    pub doubly_stochastic: bool,
}

impl AssumptionCheck {
    pub fn of(ms: &[StochasticMatrix]) -> Self {
        let mut check = Self {
            gamma: 1.0,
            rho: 1.0,
            doubly_stochastic: true,
        };
        for m in ms {
            check.gamma = check.gamma.min(m.min_diagonal());
            check.rho = check.rho.max(m.max_reverse_ratio());
            check.doubly_stochastic &= m.is_doubly_stochastic(STOCHASTIC_TOL.max(1e-10));
        }
        check
    }

    /// Hypotheses of the general theorem: positive diagonal floor and a
    /// finite reverse-ratio bound.
    pub fn general_theorem_applies(&self) -> bool {
        self.gamma > 0.0 && self.rho.is_finite()
    }

    /// Hypotheses of the doubly-stochastic variant.
    pub fn doubly_stochastic_theorem_applies(&self) -> bool {
        self.gamma > 0.0 && self.doubly_stochastic
    }
}

/// `D(V) = sum_{i,j} |V(i) - V(j)|` over ordered pairs.
pub fn dispersion(v: &[f64]) -> f64 {
    // sorted form: sum over pairs equals 2 * sum_k (2k - n + 1) v_(k)
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    2.0 * s
        .iter()
        .enumerate()
        .map(|(k, x)| (2.0 * k as f64 - n + 1.0) * x)
        .sum::<f64>()
}

fn vmin(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::INFINITY, f64::min)
}

fn vmax(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

fn l1(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(x, y)| (x - y).abs()).sum()
}

/// Slacks of the three bounds on `MV` for a (possibly rectangular)
/// stochastic matrix `M` with smallest entry `m`:
/// `min MV >= (1-m) min V + m max V`, `max MV <= m min V + (1-m) max V`,
/// and `diam MV <= (1 - 2m) diam V`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContractionSlack {
    pub lower: f64,
    pub upper: f64,
    pub diameter: f64,
}

impl ContractionSlack {
    pub fn min(&self) -> f64 {
        self.lower.min(self.upper).min(self.diameter)
    }
}

pub fn check_diameter_contraction(m: &Matrix, v: &[f64]) -> Result<ContractionSlack> {
    check_row_stochastic(m, STOCHASTIC_TOL)?;
    let mv = m.mul_vec(v)?;
    let small = m.min_entry();
    let (lo, hi) = (vmin(v), vmax(v));
    let (mlo, mhi) = (vmin(&mv), vmax(&mv));
    let slack = ContractionSlack {
        lower: mlo - ((1.0 - small) * lo + small * hi),
        upper: (small * lo + (1.0 - small) * hi) - mhi,
        diameter: (1.0 - 2.0 * small) * (hi - lo) - (mhi - mlo),
    };
    let scale = 1e-12 * (1.0 + lo.abs().max(hi.abs()));
    if slack.min() < -scale {
        return Err(Error::InvariantViolation(format!(
            "diameter contraction fails: slack {slack:?} for M = {m:?}, V = {v:?}"
        )));
    }
    Ok(slack)
}

fn check_doubly(m: &StochasticMatrix) -> Result<()> {
    if let Some((j, s)) = m
        .matrix()
        .col_sums()
        .into_iter()
        .enumerate()
        .find(|(_, s)| (s - 1.0).abs() > 1e-10)
    {
        return Err(Error::NotDoublyStochastic { col: j, sum: s });
    }
    Ok(())
}

/// `D(V) - D(MV) - gamma ||MV - V||_1` for doubly stochastic `M` whose
/// diagonal is at least `gamma`.
pub fn check_dispersion_decrease(m: &StochasticMatrix, v: &[f64], gamma: f64) -> Result<f64> {
    check_doubly(m)?;
    for i in 0..m.dim() {
        if m[(i, i)] < gamma {
            return Err(Error::DiagonalBelowGamma {
                index: i,
                value: m[(i, i)],
                gamma,
            });
        }
    }
    let mv = m.apply(v)?;
    Ok(dispersion(v) - dispersion(&mv) - gamma * l1(&mv, v))
}

/// `sum_{i<=k} (MV)^(i) - sum_{i<=k} V^(i)` with both vectors sorted
/// ascending, for doubly stochastic `M` and `1 <= k <= d`.
pub fn check_sorted_partial_sums(m: &StochasticMatrix, v: &[f64], k: usize) -> Result<f64> {
    check_doubly(m)?;
    if k == 0 || k > m.dim() {
        return Err(Error::OutOfRange {
            index: k,
            max: m.dim(),
        });
    }
    let mut mv = m.apply(v)?;
    let mut v = v.to_vec();
    mv.sort_by(f64::total_cmp);
    v.sort_by(f64::total_cmp);
    Ok(mv[..k].iter().sum::<f64>() - v[..k].iter().sum::<f64>())
}

/// Record of the backward products of a finite sequence.
#[derive(Debug, Clone)]
pub struct ProductTrace {
    /// `P_n = M_n ... M_1` for `n = 1..=N`
    pub partial_products: Vec<StochasticMatrix>,
    /// `||P_{n+1} - P_n||_1` for `n = 1..N`
    pub increments: Vec<f64>,
    pub variation_sum: f64,
    /// for each tracked `V`, `D(P_n V)` for `n = 0..=N` (`P_0 = I`)
    pub dispersion_history: Vec<Vec<f64>>,
    /// for each tracked `V`, the vectors `P_n V` for `n = 0..=N`
    pub tracked_history: Vec<Vec<Vec<f64>>>,
    /// `sum_{m<=n} M_m(i,j)` for `n = 1..=N`
    pub offdiag_partial_sums: Vec<Matrix>,
    pub assumptions: AssumptionCheck,
}

pub fn product_run(ms: &[StochasticMatrix], tracked: &[Vec<f64>]) -> Result<ProductTrace> {
    let d = ms.first().map_or(0, StochasticMatrix::dim);
    if let Some(m) = ms.iter().find(|m| m.dim() != d) {
        return Err(Error::DimensionMismatch {
            expected: format!("{d}x{d}"),
            found: format!("{0}x{0}", m.dim()),
        });
    }
    if let Some(v) = tracked.iter().find(|v| v.len() != d) {
        return Err(Error::DimensionMismatch {
            expected: format!("tracked vector of length {d}"),
            found: format!("{}", v.len()),
        });
    }

    let mut partial_products: Vec<StochasticMatrix> = Vec::with_capacity(ms.len());
    let mut increments = Vec::with_capacity(ms.len().saturating_sub(1));
    let mut offdiag_partial_sums = Vec::with_capacity(ms.len());
    let mut tracked_history: Vec<Vec<Vec<f64>>> = tracked.iter().map(|v| vec![v.clone()]).collect();
    let mut running = Matrix::zeros(d, d);
    let mut prev: Option<Matrix> = None;
    for (n, m) in ms.iter().enumerate() {
        let product = match &prev {
            None => m.matrix().clone(),
            Some(p) => m.matrix().matmul(p)?,
        };
        for (i, s) in product.row_sums().into_iter().enumerate() {
            if (s - 1.0).abs() > PRODUCT_DRIFT_TOL {
                return Err(Error::InvariantViolation(format!(
                    "row {i} of the partial product at step {} sums to {s}",
                    n + 1
                )));
            }
        }
        if let Some(p) = &prev {
            increments.push(product.l1_distance(p));
        }
        for (hist, _) in tracked_history.iter_mut().zip(tracked) {
            let last = hist.last().expect("history starts non-empty");
            let next = m.apply(last)?;
            hist.push(next);
        }
        running = Matrix::from_fn(d, d, |i, j| running[(i, j)] + m[(i, j)]);
        offdiag_partial_sums.push(running.clone());
        partial_products.push(StochasticMatrix(product.clone()));
        prev = Some(product);
    }

    let dispersion_history = tracked_history
        .iter()
        .map(|h| h.iter().map(|v| dispersion(v)).collect())
        .collect();
    Ok(ProductTrace {
        variation_sum: increments.iter().sum(),
        partial_products,
        increments,
        dispersion_history,
        tracked_history,
        offdiag_partial_sums,
        assumptions: AssumptionCheck::of(ms),
    })
}

impl ProductTrace {
    pub fn len(&self) -> usize {
        self.partial_products.len()
    }

    pub fn is_empty(&self) -> bool {
        self.partial_products.is_empty()
    }

    pub fn last_product(&self) -> Option<&StochasticMatrix> {
        self.partial_products.last()
    }

    /// Partial variation `sum_{m < n} ||P_{m+1} - P_m||_1`.
    pub fn variation_up_to(&self, n: usize) -> f64 {
        self.increments[..n.saturating_sub(1).min(self.increments.len())]
            .iter()
            .sum()
    }

    /// Variation accumulated over the final third of the increments.
    pub fn tail_variation(&self) -> f64 {
        let n = self.increments.len();
        self.increments[n - n / 3..].iter().sum()
    }

    /// Cauchy test on the final third: the products move by at most `tol`
    /// in total.
    pub fn is_cauchy(&self, tol: f64) -> bool {
        self.increments.len() >= 3 && self.tail_variation() <= tol
    }

    /// Whether every dispersion history is non-increasing up to `tol`.
    pub fn dispersion_non_increasing(&self, tol: f64) -> bool {
        self.dispersion_history
            .iter()
            .all(|h| h.windows(2).all(|w| w[1] <= w[0] + tol))
    }

    /// Smallest `D(V_n) - D(V_{n+1}) - gamma ||V_{n+1} - V_n||_1` over all
    /// steps and tracked vectors.
    pub fn dispersion_step_slack(&self, gamma: f64) -> f64 {
        let mut worst = f64::INFINITY;
        for (hist, disp) in self.tracked_history.iter().zip(&self.dispersion_history) {
            for n in 0..hist.len() - 1 {
                let s = disp[n] - disp[n + 1] - gamma * l1(&hist[n + 1], &hist[n]);
                worst = worst.min(s);
            }
        }
        worst
    }
}

/// Partial sum `sum_m M_m(i,j)` for a pair whose limit rows differ.
#[derive(Debug, Clone, PartialEq)]
pub struct OffDiagonalSeries {
    pub i: usize,
    pub j: usize,
    pub partial_sum: f64,
    /// growth of the partial sum over the final third of the sequence
    pub tail_growth: f64,
    pub bounded: bool,
}

/// For every ordered pair `(i, j)` whose rows in `limit` differ by more
/// than [`ROW_SEPARATION_TOL`], reports the series `sum_m M_m(i,j)`.
pub fn offdiag_convergence_report(
    trace: &ProductTrace,
    limit: &StochasticMatrix,
    tol: f64,
) -> Result<Vec<OffDiagonalSeries>> {
    if !trace.is_cauchy(tol) {
        return Err(Error::NotConverged {
            tail_variation: if trace.increments.len() >= 3 {
                trace.tail_variation()
            } else {
                f64::INFINITY
            },
        });
    }
    let d = limit.dim();
    let n = trace.offdiag_partial_sums.len();
    let last = &trace.offdiag_partial_sums[n - 1];
    let early = &trace.offdiag_partial_sums[n - 1 - n / 3];
    let mut out = Vec::new();
    for i in 0..d {
        for j in 0..d {
            if i == j {
                continue;
            }
            let gap = l1(limit.matrix().row(i), limit.matrix().row(j));
            if gap <= ROW_SEPARATION_TOL {
                continue;
            }
            let growth = last[(i, j)] - early[(i, j)];
            out.push(OffDiagonalSeries {
                i,
                j,
                partial_sum: last[(i, j)],
                tail_growth: growth,
                bounded: growth <= tol,
            });
        }
    }
    Ok(out)
}

/// `M(r) = (1/2) [[1+r, 1-r], [1-r, 1+r]]` for `r` in `[-1, 1]`.
pub fn m_of_r(r: f64) -> StochasticMatrix {
    StochasticMatrix(
        Matrix::from_rows(&[
            [(1.0 + r) / 2.0, (1.0 - r) / 2.0],
            [(1.0 - r) / 2.0, (1.0 + r) / 2.0],
        ])
        .expect("2x2 literal"),
    )
}

/// `M(r_1), ..., M(r_n)`.
pub fn m_of_r_sequence(rs: &[f64]) -> Vec<StochasticMatrix> {
    rs.iter().map(|&r| m_of_r(r)).collect()
}

/// `r_n = exp(-2^{-n})` for `n = 1..=len`; the infinite product is `exp(-1)`.
pub fn default_r_schedule(len: usize) -> Vec<f64> {
    (1..=len)
        .map(|n| (-(0.5f64).powi(n as i32)).exp())
        .collect()
}

pub fn t0() -> StochasticMatrix {
    StochasticMatrix(
        Matrix::from_rows(&[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.5, 0.5]]).expect("literal"),
    )
}

pub fn t1() -> StochasticMatrix {
    StochasticMatrix(
        Matrix::from_rows(&[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.5, 0.0, 0.5]]).expect("literal"),
    )
}

/// `M_1 = T_1, M_2 = T_0, M_3 = T_1, ...`, so that the backward product is
/// `... T_0 T_1 T_0 T_1`.
pub fn alternating_t0_t1(len: usize) -> Vec<StochasticMatrix> {
    (0..len)
        .map(|n| if n % 2 == 0 { t1() } else { t0() })
        .collect()
}

/// Average of `perms` uniformly random `d x d` permutation matrices, mixed
/// as `gamma I + (1 - gamma) S` to put a floor under the diagonal.
pub fn random_doubly_stochastic<R: Rng + ?Sized>(
    rng: &mut R,
    d: usize,
    perms: usize,
    gamma: f64,
) -> StochasticMatrix {
    let perms = perms.max(1);
    let mut s = Matrix::zeros(d, d);
    let mut sigma: Vec<usize> = (0..d).collect();
    for _ in 0..perms {
        sigma.shuffle(rng);
        for (i, &j) in sigma.iter().enumerate() {
            s[(i, j)] += 1.0 / perms as f64;
        }
    }
    let m = Matrix::from_fn(d, d, |i, j| {
        (1.0 - gamma) * s[(i, j)] + if i == j { gamma } else { 0.0 }
    });
    StochasticMatrix(m)
}

/// Random stochastic matrix with diagonal at least `gamma` and
/// `M(i,j) <= rho_max M(j,i)`. Off-diagonal pairs get a common weight in
/// `[0.5, 1]` (zeroed with probability `sparsity`) and one direction is
/// inflated by a factor in `[1, rho_max]`; the off-diagonal part is then
/// scaled so that no row exceeds `1 - gamma` and the diagonal fills the rest.
pub fn random_balanced_stochastic<R: Rng + ?Sized>(
    rng: &mut R,
    d: usize,
    gamma: f64,
    rho_max: f64,
    sparsity: f64,
) -> StochasticMatrix {
    let mut w = Matrix::zeros(d, d);
    for i in 0..d {
        for j in i + 1..d {
            if rng.gen_bool(sparsity) {
                continue;
            }
            let x = rng.gen_range(0.5..=1.0);
            let f = rng.gen_range(1.0..=rho_max);
            if rng.gen_bool(0.5) {
                w[(i, j)] = x * f;
                w[(j, i)] = x;
            } else {
                w[(i, j)] = x;
                w[(j, i)] = x * f;
            }
        }
    }
    let widest = w.row_sums().into_iter().fold(0.0, f64::max);
    let scale = if widest > 0.0 {
        (1.0 - gamma) / widest * rng.gen_range(0.5..=1.0)
    } else {
        0.0
    };
    let mut m = w.scaled(scale);
    let off = m.row_sums();
    for i in 0..d {
        m[(i, i)] = 1.0 - off[i];
    }
    StochasticMatrix(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn dispersion_values() {
        assert_eq!(dispersion(&[3.0, 3.0, 3.0]), 0.0);
        assert_eq!(dispersion(&[0.0, 1.0]), 2.0);
        assert_eq!(dispersion(&[1.0, 2.0, 4.0]), 12.0);
        assert_eq!(dispersion(&[4.0, 1.0, 2.0]), 12.0);
    }

    #[test]
    fn stochastic_validation() {
        assert!(StochasticMatrix::from_rows(&[[0.5, 0.5], [0.2, 0.7]]).is_err());
        assert!(StochasticMatrix::from_rows(&[[0.5, 0.5, 0.0]]).is_err());
        let m = StochasticMatrix::from_rows(&[[0.5, 0.5], [0.2, 0.8]]).unwrap();
        assert!(!m.is_doubly_stochastic(1e-12));
        assert_eq!(m.min_diagonal(), 0.5);
        assert!((m.max_reverse_ratio() - 2.5).abs() < 1e-15);
    }

    #[test]
    fn reverse_ratio_conventions() {
        let t = t0();
        assert_eq!(t.max_reverse_ratio(), f64::INFINITY);
        let id = StochasticMatrix::identity(3);
        assert_eq!(id.max_reverse_ratio(), 1.0);
    }

    #[test]
    fn contraction_zero_entry_and_m_of_r() {
        let m = Matrix::from_rows(&[[1.0, 0.0], [0.3, 0.7]]).unwrap();
        let s = check_diameter_contraction(&m, &[2.0, -1.0]).unwrap();
        assert!(s.diameter >= 0.0);
        let r = 0.6;
        let slack = check_diameter_contraction(m_of_r(r).matrix(), &[0.0, 1.0]).unwrap();
        assert!(slack.diameter.abs() < 1e-15);
        let mv = m_of_r(r).apply(&[0.0, 1.0]).unwrap();
        assert!(((mv[1] - mv[0]).abs() - r).abs() < 1e-15);
    }

    #[test]
    fn contraction_rectangular() {
        let m = Matrix::from_rows(&[[0.2, 0.3, 0.5], [0.1, 0.1, 0.8]]).unwrap();
        let s = check_diameter_contraction(&m, &[1.0, 5.0, -2.0]).unwrap();
        assert!(s.min() >= -1e-12);
    }

    #[test]
    fn dispersion_decrease_identity_and_averaging() {
        let id = StochasticMatrix::identity(3);
        assert_eq!(
            check_dispersion_decrease(&id, &[1.0, 2.0, 3.0], 1.0).unwrap(),
            0.0
        );
        let avg = StochasticMatrix::from_rows(&[[0.5, 0.5], [0.5, 0.5]]).unwrap();
        let slack = check_dispersion_decrease(&avg, &[0.0, 1.0], 0.5).unwrap();
        assert!((slack - 1.5).abs() < 1e-15);
    }

    #[test]
    fn dispersion_decrease_preconditions() {
        let m = StochasticMatrix::from_rows(&[[0.5, 0.5], [0.2, 0.8]]).unwrap();
        assert!(matches!(
            check_dispersion_decrease(&m, &[0.0, 1.0], 0.1),
            Err(Error::NotDoublyStochastic { .. })
        ));
        let avg = StochasticMatrix::from_rows(&[[0.5, 0.5], [0.5, 0.5]]).unwrap();
        assert!(matches!(
            check_dispersion_decrease(&avg, &[0.0, 1.0], 0.6),
            Err(Error::DiagonalBelowGamma { .. })
        ));
    }

    #[test]
    fn sorted_partial_sums_edges() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = random_doubly_stochastic(&mut rng, 4, 5, 0.1);
        let v = [0.3, -1.0, 2.0, 0.5];
        assert!(check_sorted_partial_sums(&m, &v, 4).unwrap().abs() < 1e-12);
        let id = StochasticMatrix::identity(4);
        for k in 1..=4 {
            assert_eq!(check_sorted_partial_sums(&id, &v, k).unwrap(), 0.0);
        }
        assert!(check_sorted_partial_sums(&m, &v, 0).is_err());
        assert!(check_sorted_partial_sums(&m, &v, 5).is_err());
    }

    #[test]
    fn birkhoff_generator_controls_gamma() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let m = random_doubly_stochastic(&mut rng, 5, 6, 0.3);
            assert!(m.is_doubly_stochastic(1e-12));
            assert!(m.min_diagonal() >= 0.3 - 1e-15);
        }
    }

    #[test]
    fn balanced_generator_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let m = random_balanced_stochastic(&mut rng, 4, 0.2, 5.0, 0.3);
            assert!(m.min_diagonal() >= 0.2 - 1e-15);
            assert!(m.max_reverse_ratio() <= 5.0 + 1e-12);
            assert!((0..4).all(|i| (m.matrix().row(i).iter().sum::<f64>() - 1.0).abs() < 1e-14));
        }
    }

    #[test]
    fn m_of_r_semigroup() {
        let p = m_of_r(0.3).matrix().matmul(m_of_r(-0.5).matrix()).unwrap();
        assert!(p.max_abs_diff(m_of_r(-0.15).matrix()) < 1e-15);
    }

    #[test]
    fn t0_t1_closed_form() {
        // T_{e_n} ... T_{e_1} has last row (r, 1 - 2^-n - r, 2^-n)
        let eps = [1, 0, 0, 1, 1, 0, 1];
        let ms: Vec<_> = eps
            .iter()
            .map(|&e| if e == 1 { t1() } else { t0() })
            .collect();
        let trace = product_run(&ms, &[]).unwrap();
        for (n, p) in trace.partial_products.iter().enumerate() {
            let n1 = n + 1;
            let r: f64 = (1..=n1)
                .map(|k| eps[k - 1] as f64 / 2f64.powi((n1 + 1 - k) as i32))
                .sum();
            let tail = 0.5f64.powi(n1 as i32);
            let expect = [r, 1.0 - tail - r, tail];
            for (j, e) in expect.iter().enumerate() {
                assert!((p[(2, j)] - e).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn product_run_dimension_mismatch() {
        let ms = vec![StochasticMatrix::identity(2), StochasticMatrix::identity(3)];
        assert!(matches!(
            product_run(&ms, &[]),
            Err(Error::DimensionMismatch { .. })
        ));
        let ms = vec![StochasticMatrix::identity(2)];
        assert!(product_run(&ms, &[vec![1.0]]).is_err());
    }

    #[test]
    fn identity_sequence_has_zero_cross_sums() {
        let ms = vec![StochasticMatrix::identity(3); 12];
        let trace = product_run(&ms, &[vec![1.0, 2.0, 3.0]]).unwrap();
        assert_eq!(trace.variation_sum, 0.0);
        let report = offdiag_convergence_report(&trace, &StochasticMatrix::identity(3), 1e-9);
        // rows of the identity differ pairwise, but every off-diagonal entry is 0
        let report = report.unwrap();
        assert!(report.iter().all(|s| s.partial_sum == 0.0 && s.bounded));
    }

    #[test]
    fn block_consensus_cross_sums_vanish() {
        let block = Matrix::from_rows(&[
            [0.5, 0.5, 0.0, 0.0],
            [0.5, 0.5, 0.0, 0.0],
            [0.0, 0.0, 0.3, 0.7],
            [0.0, 0.0, 0.3, 0.7],
        ])
        .unwrap();
        let ms = vec![StochasticMatrix::new(block).unwrap(); 9];
        let trace = product_run(&ms, &[]).unwrap();
        let limit = trace.last_product().unwrap().clone();
        let report = offdiag_convergence_report(&trace, &limit, 1e-9).unwrap();
        assert_eq!(report.len(), 8);
        assert!(report.iter().all(|s| s.partial_sum == 0.0 && s.bounded));
    }

    #[test]
    fn report_rejects_non_converged() {
        let trace = product_run(&alternating_t0_t1(30), &[]).unwrap();
        let limit = trace.last_product().unwrap().clone();
        assert!(matches!(
            offdiag_convergence_report(&trace, &limit, 1e-6),
            Err(Error::NotConverged { .. })
        ));
    }
}
