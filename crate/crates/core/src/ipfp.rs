//! The alternating row/column scaling loop, its recorded trace, and the
//! diagnostics computed from traces.
//!
//! `X_0` is the normalized seed, `X_{2k+1} = T_R(X_{2k})` and
//! `X_{2k+2} = T_C(X_{2k+1})`: odd iterates are row-fitted, even iterates
//! (from `X_2` on) are column-fitted.

use crate::error::{Error, Result};
use crate::matrix::{
    l1_error, ratio_vectors, t_c, t_r, FittingProblem, Marginals, Matrix, NonNegMatrix,
    RatioVectors,
};
use crate::products::StochasticMatrix;

/// Above this many stored matrices the trace keeps only every other one.
pub const MAX_STORED_ITERATES: usize = 10_000;

/// Number of consecutive small even (and odd) steps required before the
/// two subsequences are declared Cauchy.
pub const CAUCHY_WINDOW: usize = 8;

/// Tolerance on `|C_j - 1|` for inputs that must be column-fitted.
pub const FITTED_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StoppingRule {
    /// stop once `e(X_n)` drops below this
    pub tol_marginal: f64,
    /// threshold on `||X_{n+2} - X_n||_1` for the even/odd Cauchy test
    pub tol_even_odd: f64,
    pub max_iters: usize,
}

impl Default for StoppingRule {
    fn default() -> Self {
        Self {
            tol_marginal: 1e-10,
            tol_even_odd: 1e-12,
            max_iters: 100_000,
        }
    }
}

impl StoppingRule {
    pub fn new(tol_marginal: f64, tol_even_odd: f64, max_iters: usize) -> Result<Self> {
        if !(tol_marginal > 0.0 && tol_even_odd > 0.0 && max_iters > 0) {
            return Err(Error::InvariantViolation(format!(
                "stopping rule needs positive tolerances and cap, got {tol_marginal}, {tol_even_odd}, {max_iters}"
            )));
        }
        Ok(Self {
            tol_marginal,
            tol_even_odd,
            max_iters,
        })
    }

    pub fn with_max_iters(self, max_iters: usize) -> Self {
        Self { max_iters, ..self }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Converged,
    EvenOddConverged,
    IterationCap,
}

/// Step-by-step iteration without recording.
#[derive(Debug, Clone)]
pub struct Ipfp<'a> {
    problem: &'a FittingProblem,
    current: NonNegMatrix,
    index: usize,
}

impl<'a> Ipfp<'a> {
    pub fn new(problem: &'a FittingProblem) -> Self {
        Self {
            problem,
            current: problem.x0().clone(),
            index: 0,
        }
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn current(&self) -> &NonNegMatrix {
        &self.current
    }

    /// Advances to `X_{n+1}` and returns it.
    pub fn step(&mut self) -> &NonNegMatrix {
        let next = if self.index.is_multiple_of(2) {
            t_r(&self.current, self.problem.a())
        } else {
            t_c(&self.current, self.problem.b())
        };
        // dimensions are fixed by the problem
        self.current = next.expect("problem dimensions are consistent");
        self.index += 1;
        &self.current
    }

    pub fn ratios(&self) -> RatioVectors {
        ratio_vectors(&self.current, self.problem.a(), self.problem.b())
            .expect("problem dimensions are consistent")
    }
}

/// Recorded run: stored iterates, full ratio and error histories.
#[derive(Debug, Clone)]
pub struct IterationTrace {
    problem: FittingProblem,
    stored: Vec<(usize, NonNegMatrix)>,
    stride: usize,
    ratio_history: Vec<RatioVectors>,
    errors: Vec<f64>,
    stop_reason: StopReason,
    last: NonNegMatrix,
    before_last: Option<NonNegMatrix>,
}

struct Recorder {
    stored: Vec<(usize, NonNegMatrix)>,
    stride: usize,
    ratio_history: Vec<RatioVectors>,
    errors: Vec<f64>,
}

impl Recorder {
    fn new() -> Self {
        Self {
            stored: Vec::new(),
            stride: 1,
            ratio_history: Vec::new(),
            errors: Vec::new(),
        }
    }

    fn record(&mut self, n: usize, x: &NonNegMatrix, a: &Marginals, b: &Marginals) {
        let ratios = ratio_vectors(x, a, b).expect("problem dimensions are consistent");
        let e = l1_error(x, a, b).expect("problem dimensions are consistent");
        self.ratio_history.push(ratios);
        self.errors.push(e);
        if n.is_multiple_of(self.stride) {
            self.stored.push((n, x.clone()));
            if self.stored.len() > MAX_STORED_ITERATES {
                self.stride *= 2;
                let stride = self.stride;
                self.stored.retain(|(k, _)| k % stride == 0);
            }
        }
    }
}

/// Runs the iteration from the normalized seed until `rule` stops it.
pub fn run(problem: &FittingProblem, rule: StoppingRule) -> IterationTrace {
    let (a, b) = (problem.a(), problem.b());
    let mut rec = Recorder::new();
    let mut it = Ipfp::new(problem);
    rec.record(0, it.current(), a, b);

    // X_{n-1}
    let mut previous: Option<NonNegMatrix> = None;
    let mut small_steps = [0usize; 2];
    let stop_reason = loop {
        let n = it.index();
        if *rec.errors.last().expect("recorded") < rule.tol_marginal {
            break StopReason::Converged;
        }
        if small_steps.iter().all(|&s| s >= CAUCHY_WINDOW) {
            break StopReason::EvenOddConverged;
        }
        if n >= rule.max_iters {
            break StopReason::IterationCap;
        }
        let current = it.current().clone();
        let next = it.step();
        if let Some(two_back) = &previous {
            let d = next.matrix().l1_distance(two_back.matrix());
            let parity = (n + 1) % 2;
            small_steps[parity] = if d < rule.tol_even_odd {
                small_steps[parity] + 1
            } else {
                0
            };
        }
        rec.record(n + 1, next, a, b);
        previous = Some(current);
    };

    IterationTrace {
        problem: problem.clone(),
        stored: rec.stored,
        stride: rec.stride,
        ratio_history: rec.ratio_history,
        errors: rec.errors,
        stop_reason,
        last: it.current().clone(),
        before_last: previous,
    }
}

impl IterationTrace {
    /// Builds a trace from an explicit list of iterates `X_0, X_1, ...`.
    pub fn from_iterates(
        problem: &FittingProblem,
        iterates: Vec<NonNegMatrix>,
        stop_reason: StopReason,
    ) -> Result<Self> {
        if iterates.is_empty() {
            return Err(Error::TraceTooShort {
                needed: 1,
                found: 0,
            });
        }
        let (a, b) = (problem.a(), problem.b());
        let mut rec = Recorder::new();
        for (n, x) in iterates.iter().enumerate() {
            if x.shape() != problem.shape() {
                return Err(Error::DimensionMismatch {
                    expected: format!("{:?}", problem.shape()),
                    found: format!("{:?}", x.shape()),
                });
            }
            rec.record(n, x, a, b);
        }
        let len = iterates.len();
        let mut iter = iterates.into_iter().rev();
        let last = iter.next().expect("non-empty");
        let before_last = if len >= 2 { iter.next() } else { None };
        Ok(Self {
            problem: problem.clone(),
            stored: rec.stored,
            stride: rec.stride,
            ratio_history: rec.ratio_history,
            errors: rec.errors,
            stop_reason,
            last,
            before_last,
        })
    }

    pub fn problem(&self) -> &FittingProblem {
        &self.problem
    }

    /// Index of the final iterate.
    pub fn iterations(&self) -> usize {
        self.errors.len() - 1
    }

    pub fn stop_reason(&self) -> StopReason {
        self.stop_reason
    }

    pub fn errors(&self) -> &[f64] {
        &self.errors
    }

    pub fn final_error(&self) -> f64 {
        *self.errors.last().expect("trace is never empty")
    }

    pub fn ratio_history(&self) -> &[RatioVectors] {
        &self.ratio_history
    }

    /// Stored `(n, X_n)` pairs in increasing `n`; every iterate while fewer
    /// than [`MAX_STORED_ITERATES`] were produced, decimated beyond.
    pub fn stored(&self) -> &[(usize, NonNegMatrix)] {
        &self.stored
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn iterate(&self, n: usize) -> Option<&NonNegMatrix> {
        if n == self.iterations() {
            return Some(&self.last);
        }
        if n + 1 == self.iterations() {
            if let Some(x) = &self.before_last {
                return Some(x);
            }
        }
        self.stored
            .binary_search_by_key(&n, |(k, _)| *k)
            .ok()
            .map(|k| &self.stored[k].1)
    }

    pub fn final_iterate(&self) -> &NonNegMatrix {
        &self.last
    }

    /// Last iterate with even index.
    pub fn last_even(&self) -> &NonNegMatrix {
        if self.iterations().is_multiple_of(2) {
            &self.last
        } else {
            self.before_last.as_ref().unwrap_or(&self.last)
        }
    }

    /// Last iterate with odd index (the final one when the trace has a
    /// single iterate).
    pub fn last_odd(&self) -> &NonNegMatrix {
        if self.iterations() % 2 == 1 {
            &self.last
        } else {
            self.before_last.as_ref().unwrap_or(&self.last)
        }
    }

    /// Stored even iterates `(n, X_n)`, including the final even one.
    pub fn even_iterates(&self) -> Vec<(usize, &NonNegMatrix)> {
        let mut out: Vec<(usize, &NonNegMatrix)> = self
            .stored
            .iter()
            .filter(|(k, _)| k % 2 == 0)
            .map(|(k, x)| (*k, x))
            .collect();
        let last_n = self.iterations() - self.iterations() % 2;
        if out.last().map(|(k, _)| *k) != Some(last_n) {
            out.push((last_n, self.last_even()));
        }
        out
    }

    /// The intervals `[1/max C(X_1), 1/min C(X_1)]`, `[min R(X_2), max R(X_2)]`,
    /// `[1/max C(X_3), 1/min C(X_3)]`, ... for `n >= 1`.
    pub fn ratio_intervals(&self) -> Vec<(f64, f64)> {
        self.ratio_history
            .iter()
            .enumerate()
            .skip(1)
            .map(|(n, rv)| {
                if n % 2 == 1 {
                    (1.0 / rv.c_max(), 1.0 / rv.c_min())
                } else {
                    (rv.r_min(), rv.r_max())
                }
            })
            .collect()
    }

    /// Whether each interval contains 1 and lies inside its predecessor,
    /// up to `tol`.
    pub fn nested_intervals_hold(&self, tol: f64) -> bool {
        let iv = self.ratio_intervals();
        iv.iter()
            .all(|&(lo, hi)| lo <= 1.0 + tol && hi >= 1.0 - tol)
            && iv
                .windows(2)
                .all(|w| w[1].0 >= w[0].0 - tol && w[1].1 <= w[0].1 + tol)
    }

    /// Whether `e(X_n)` is non-increasing up to a relative `tol`.
    pub fn errors_non_increasing(&self, tol: f64) -> bool {
        self.errors
            .windows(2)
            .all(|w| w[1] <= w[0] * (1.0 + tol) + tol)
    }

    pub fn slow_diagnostics(&self) -> SlowDiagnostics {
        let mut d = SlowDiagnostics::default();
        for rv in &self.ratio_history {
            d.push(rv);
        }
        d
    }
}

/// Streaming diagnostics for the slowly converging case: squared
/// deviations of the ratio vectors and their `sqrt(n)`-scaled sizes.
#[derive(Debug, Clone, Default)]
pub struct SlowDiagnostics {
    n: usize,
    /// partial sums of `max_i (R_i(X_{2k}) - 1)^2` over even `2k <= n`
    pub row_square_sums: Vec<f64>,
    /// partial sums of `max_j (C_j(X_{2k+1}) - 1)^2` over odd `2k+1 <= n`
    pub col_square_sums: Vec<f64>,
    /// `sqrt(n) max_i |R_i(X_n) - 1|` for even `n >= 2`
    pub scaled_row_deviation: Vec<f64>,
    /// `sqrt(n) max_j |C_j(X_n) - 1|` for odd `n`
    pub scaled_col_deviation: Vec<f64>,
}

impl SlowDiagnostics {
    pub fn push(&mut self, rv: &RatioVectors) {
        let n = self.n;
        self.n += 1;
        let dev = |v: &[f64]| v.iter().map(|x| (x - 1.0).abs()).fold(0.0, f64::max);
        if n.is_multiple_of(2) {
            let dr = dev(&rv.r);
            let prev = self.row_square_sums.last().copied().unwrap_or(0.0);
            self.row_square_sums.push(prev + dr * dr);
            if n >= 2 {
                self.scaled_row_deviation.push((n as f64).sqrt() * dr);
            }
        } else {
            let dc = dev(&rv.c);
            let prev = self.col_square_sums.last().copied().unwrap_or(0.0);
            self.col_square_sums.push(prev + dc * dc);
            self.scaled_col_deviation.push((n as f64).sqrt() * dc);
        }
    }

    /// Growth of a partial-sum sequence between its midpoint and its end.
    pub fn cauchy_tail(sums: &[f64]) -> f64 {
        match sums.len() {
            0 => 0.0,
            n => sums[n - 1] - sums[(n - 1) / 2],
        }
    }
}

/// `P(X)(i,k) = sum_j T(i,j) T(k,j) / (a_i b_j C_j(T))` with `T = T_R(X)`,
/// for a column-fitted `X`; satisfies `R(T_C(T_R(X))) = P(X) R(X)`.
pub fn p_matrix(x: &NonNegMatrix, a: &Marginals, b: &Marginals) -> Result<StochasticMatrix> {
    let rv = ratio_vectors(x, a, b)?;
    let dev = rv.c.iter().map(|c| (c - 1.0).abs()).fold(0.0, f64::max);
    if dev > FITTED_TOL {
        return Err(Error::NotColumnFitted { max_deviation: dev });
    }
    let t = t_r(x, a)?;
    let ct = ratio_vectors(&t, a, b)?.c;
    let (p, q) = x.shape();
    let tm = t.matrix();
    let m = Matrix::from_fn(p, p, |i, k| {
        (0..q)
            .map(|j| tm[(i, j)] * tm[(k, j)] / (a[i] * b[j] * ct[j]))
            .sum()
    });
    StochasticMatrix::with_tolerance(m, 1e-10)
}

/// How far `P(X)` sits from the diagonal floor `min a / (max b max C(T_R X) q)`
/// and the reverse-ratio bound `P(k,i) <= (max a / min a) P(i,k)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PMatrixBounds {
    pub diagonal_floor: f64,
    pub min_diagonal: f64,
    pub ratio_bound: f64,
    pub max_reverse_ratio: f64,
}

impl PMatrixBounds {
    pub fn hold(&self, tol: f64) -> bool {
        self.min_diagonal >= self.diagonal_floor * (1.0 - tol)
            && self.max_reverse_ratio <= self.ratio_bound * (1.0 + tol)
    }
}

pub fn p_matrix_bounds(x: &NonNegMatrix, a: &Marginals, b: &Marginals) -> Result<PMatrixBounds> {
    let p = p_matrix(x, a, b)?;
    let t = t_r(x, a)?;
    let c_max = ratio_vectors(&t, a, b)?.c_max();
    Ok(PMatrixBounds {
        diagonal_floor: a.min() / (b.max() * c_max * x.cols() as f64),
        min_diagonal: p.min_diagonal(),
        ratio_bound: a.max() / a.min(),
        max_reverse_ratio: p.max_reverse_ratio(),
    })
}

/// `P(X_2), P(X_4), ...` from the stored even iterates of a trace, in
/// order. Requires consecutive even iterates to be stored.
pub fn p_matrix_sequence(trace: &IterationTrace) -> Result<Vec<StochasticMatrix>> {
    let (a, b) = (trace.problem().a(), trace.problem().b());
    let evens = trace.even_iterates();
    let mut out = Vec::new();
    for (k, (n, x)) in evens.iter().enumerate().filter(|(_, (n, _))| *n >= 2) {
        if k > 0 && evens[k - 1].0 >= 2 && evens[k - 1].0 + 2 != *n {
            return Err(Error::InvariantViolation(format!(
                "trace is decimated (gap before X_{n}); P-matrix products need consecutive even iterates"
            )));
        }
        out.push(p_matrix(x, a, b)?);
    }
    Ok(out)
}

/// Least-squares line fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub fn fit_line(xs: &[f64], ys: &[f64]) -> Option<LineFit> {
    let n = xs.len();
    if n < 2 || ys.len() != n {
        return None;
    }
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let r_squared = if syy == 0.0 {
        1.0
    } else {
        sxy * sxy / (sxx * syy)
    };
    Some(LineFit {
        slope,
        intercept: my - slope * mx,
        r_squared,
    })
}

/// Differences at or below this are treated as round-off.
pub const RATE_NOISE_FLOOR: f64 = 1e-15;

/// Minimum number of even iterates a rate estimate needs.
pub const RATE_MIN_EVEN_ITERATES: usize = 10;

/// Geometric-rate estimate for one series of step sizes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateFit {
    /// slope of `ln |step|` per iteration; `-inf` when the series is
    /// constant (already converged)
    pub rate: f64,
    /// goodness of fit of the geometric model (`ln |step|` linear in `n`)
    pub r_squared_geometric: f64,
    /// goodness of fit of the algebraic model (`ln |step|` linear in `ln n`)
    pub r_squared_algebraic: f64,
    pub points: usize,
}

impl RateFit {
    pub fn converged(&self) -> bool {
        self.rate == f64::NEG_INFINITY
    }

    /// Geometric model fits at least as well as the algebraic one and
    /// explains at least `min_r2` of the variance.
    pub fn is_geometric(&self, min_r2: f64) -> bool {
        self.converged()
            || (self.rate < 0.0
                && self.r_squared_geometric >= min_r2
                && self.r_squared_geometric >= self.r_squared_algebraic)
    }

    fn from_series(ns: &[f64], steps: &[f64]) -> Self {
        let usable: Vec<(f64, f64)> = ns
            .iter()
            .zip(steps)
            .filter(|(_, &d)| d > RATE_NOISE_FLOOR)
            .map(|(&n, &d)| (n, d.ln()))
            .collect();
        if usable.len() < 3 {
            return Self {
                rate: f64::NEG_INFINITY,
                r_squared_geometric: 1.0,
                r_squared_algebraic: 1.0,
                points: usable.len(),
            };
        }
        let tail = &usable[usable.len() / 2..];
        let tail = if tail.len() < 5 { &usable[..] } else { tail };
        let xs: Vec<f64> = tail.iter().map(|p| p.0).collect();
        let ys: Vec<f64> = tail.iter().map(|p| p.1).collect();
        let lx: Vec<f64> = xs.iter().map(|x| x.max(1.0).ln()).collect();
        let geo = fit_line(&xs, &ys).expect("distinct abscissae");
        let alg = fit_line(&lx, &ys).map_or(0.0, |f| f.r_squared);
        Self {
            rate: geo.slope,
            r_squared_geometric: geo.r_squared,
            r_squared_algebraic: alg,
            points: tail.len(),
        }
    }
}

/// Rate estimate for one cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellRate {
    pub row: usize,
    pub col: usize,
    pub fit: RateFit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateReport {
    /// fit of the whole-matrix steps `||X_{n+2} - X_n||_1` (or the
    /// distances to the supplied limit)
    pub overall: RateFit,
    pub cells: Vec<CellRate>,
}

impl RateReport {
    /// Slowest per-cell rate among cells that still move.
    pub fn slowest(&self) -> Option<&CellRate> {
        self.cells
            .iter()
            .filter(|c| !c.fit.converged())
            .max_by(|x, y| x.fit.rate.total_cmp(&y.fit.rate))
    }

    pub fn cell(&self, row: usize, col: usize) -> Option<&CellRate> {
        self.cells.iter().find(|c| c.row == row && c.col == col)
    }
}

fn even_series(trace: &IterationTrace) -> Result<Vec<(usize, &NonNegMatrix)>> {
    let evens = trace.even_iterates();
    if evens.len() < RATE_MIN_EVEN_ITERATES {
        return Err(Error::TraceTooShort {
            needed: RATE_MIN_EVEN_ITERATES,
            found: evens.len(),
        });
    }
    Ok(evens)
}

fn build_report(
    ns: &[f64],
    overall: &[f64],
    cell_series: impl Fn(usize, usize) -> Vec<f64>,
    shape: (usize, usize),
) -> RateReport {
    let mut cells = Vec::new();
    for i in 0..shape.0 {
        for j in 0..shape.1 {
            cells.push(CellRate {
                row: i,
                col: j,
                fit: RateFit::from_series(ns, &cell_series(i, j)),
            });
        }
    }
    RateReport {
        overall: RateFit::from_series(ns, overall),
        cells,
    }
}

/// Geometric rate estimate from the even subsequence, fitted on the steps
/// `|X_{n+2}(i,j) - X_n(i,j)|` over the tail of the trace. A geometric
/// sequence and its steps share the same ratio, so no limit is needed.
/// The slope is per iteration (not per even step).
pub fn rate_estimate(trace: &IterationTrace) -> Result<RateReport> {
    let evens = even_series(trace)?;
    let ns: Vec<f64> = evens.windows(2).map(|w| w[0].0 as f64).collect();
    let overall: Vec<f64> = evens
        .windows(2)
        .map(|w| w[1].1.matrix().l1_distance(w[0].1.matrix()) / (w[1].0 - w[0].0) as f64)
        .collect();
    let series = |i: usize, j: usize| -> Vec<f64> {
        evens
            .windows(2)
            .map(|w| (w[1].1[(i, j)] - w[0].1[(i, j)]).abs())
            .collect()
    };
    Ok(build_report(&ns, &overall, series, trace.problem().shape()))
}

/// Same as [`rate_estimate`] but fitted on `|X_n(i,j) - L(i,j)|` against a
/// known limit `L`.
pub fn rate_estimate_against(trace: &IterationTrace, limit: &Matrix) -> Result<RateReport> {
    let evens = even_series(trace)?;
    if limit.shape() != trace.problem().shape() {
        return Err(Error::DimensionMismatch {
            expected: format!("{:?}", trace.problem().shape()),
            found: format!("{:?}", limit.shape()),
        });
    }
    let ns: Vec<f64> = evens.iter().map(|(n, _)| *n as f64).collect();
    let overall: Vec<f64> = evens
        .iter()
        .map(|(_, x)| x.matrix().l1_distance(limit))
        .collect();
    let series = |i: usize, j: usize| -> Vec<f64> {
        evens
            .iter()
            .map(|(_, x)| (x[(i, j)] - limit[(i, j)]).abs())
            .collect()
    };
    Ok(build_report(&ns, &overall, series, trace.problem().shape()))
}

/// Outcome of the cross-ratio invariance check.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossRatioReport {
    pub checked: usize,
    pub skipped: usize,
    pub max_relative_deviation: f64,
    pub holds: bool,
}

/// Relative tolerance for cross-ratio invariance.
pub const CROSS_RATIO_TOL: f64 = 1e-10;

/// For every 2x2 minor whose four cells are positive in `X_0`, checks that
/// `X(i,j) X(i',j') / (X(i,j') X(i',j))` stays constant along the stored
/// iterates. Minors touching a zero cell are skipped.
pub fn cross_ratio_check(trace: &IterationTrace) -> CrossRatioReport {
    let x0 = trace.problem().x0();
    let (p, q) = x0.shape();
    let mut report = CrossRatioReport {
        checked: 0,
        skipped: 0,
        max_relative_deviation: 0.0,
        holds: true,
    };
    let ratio = |x: &NonNegMatrix, i: usize, k: usize, j: usize, l: usize| {
        x[(i, j)] * x[(k, l)] / (x[(i, l)] * x[(k, j)])
    };
    for i in 0..p {
        for k in i + 1..p {
            for j in 0..q {
                for l in j + 1..q {
                    let cells = [(i, j), (i, l), (k, j), (k, l)];
                    if cells.iter().any(|&c| x0[c] <= 0.0) {
                        report.skipped += 1;
                        continue;
                    }
                    report.checked += 1;
                    let base = ratio(x0, i, k, j, l);
                    let iterates = trace
                        .stored()
                        .iter()
                        .map(|(_, x)| x)
                        .chain(std::iter::once(trace.final_iterate()));
                    for x in iterates {
                        let dev = (ratio(x, i, k, j, l) / base - 1.0).abs();
                        report.max_relative_deviation = report.max_relative_deviation.max(dev);
                    }
                }
            }
        }
    }
    report.holds = report.max_relative_deviation <= CROSS_RATIO_TOL;
    report
}

/// `ln X_0(i,j) - ln X_n(i,j) = sum of ln R_i(X_{2k}) + ln C_j(X_{2k+1})`
/// over the first `n` steps, for each stored `n`. Grows without bound for
/// cells that leave the support in the limit.
pub fn cell_log_product(trace: &IterationTrace, i: usize, j: usize) -> Vec<(usize, f64)> {
    let x0 = trace.problem().x0()[(i, j)];
    if x0 <= 0.0 {
        return Vec::new();
    }
    let mut acc = 0.0;
    let mut out = Vec::with_capacity(trace.ratio_history.len());
    out.push((0, 0.0));
    for (n, rv) in trace.ratio_history.iter().enumerate() {
        if n == trace.iterations() {
            break;
        }
        acc += if n % 2 == 0 {
            rv.r[i].ln()
        } else {
            rv.c[j].ln()
        };
        out.push((n + 1, acc));
    }
    out
}
