//! Feasibility certificates, the fast/slow/divergent trichotomy, the block
//! decomposition of divergent instances and their two limit points.

use crate::error::{Error, Result};
use crate::flow::TransportFlow;
use crate::ipfp::{run, IterationTrace, StopReason, StoppingRule};
use crate::matrix::{FittingProblem, Marginals, Matrix, NonNegMatrix, SupportPattern};

/// `a(A) = b(B^c)` is declared when the two differ by at most this times
/// `max(1, a(A))`.
pub const CRITICALITY_TOL: f64 = 1e-12;

/// Marginal tolerance for feasible witnesses.
pub const WITNESS_TOL: f64 = 1e-10;

/// Largest row set searched exhaustively by [`best_cause`].
pub const BEST_CAUSE_MAX_ROWS: usize = 25;

/// Largest row set for the enumeration cross-checks.
pub const ENUMERATION_MAX_ROWS: usize = 20;

/// Gap separating clusters of limiting row ratios.
pub const PARTITION_GAP: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CauseKind {
    Incompatibility,
    Criticality,
}

/// A zero block `A x B` of the seed, compared against the marginals.
#[derive(Debug, Clone, PartialEq)]
pub struct Cause {
    /// `A`, increasing, 0-based
    pub rows: Vec<usize>,
    /// `B`, increasing, 0-based
    pub cols: Vec<usize>,
    pub kind: CauseKind,
    /// `a(A) / b(B^c)`, with `B^c` taken inside the column scope and both
    /// marginals renormalized to the scope
    pub ratio: f64,
}

/// Kind of the block with row mass `a_mass` and complementary column mass
/// `bc_mass`, if it is a cause at all.
pub fn cause_kind(a_mass: f64, bc_mass: f64) -> Option<CauseKind> {
    let gap = a_mass - bc_mass;
    let tol = CRITICALITY_TOL * a_mass.max(1.0);
    if gap > tol {
        Some(CauseKind::Incompatibility)
    } else if gap.abs() <= tol {
        Some(CauseKind::Criticality)
    } else {
        None
    }
}

fn complement(set: &[usize], scope: &[usize]) -> Vec<usize> {
    scope.iter().copied().filter(|k| !set.contains(k)).collect()
}

fn all(n: usize) -> Vec<usize> {
    (0..n).collect()
}

impl Cause {
    /// Builds the cause `A x B` within the scope `rows x cols`, or `None`
    /// when the block is not a cause there.
    pub fn within(
        a: &Marginals,
        b: &Marginals,
        rows_scope: &[usize],
        cols_scope: &[usize],
        set_a: Vec<usize>,
        set_b: Vec<usize>,
    ) -> Option<Self> {
        let a_mass = a.mass(&set_a) / a.mass(rows_scope);
        let bc_mass = b.mass(&complement(&set_b, cols_scope)) / b.mass(cols_scope);
        let kind = cause_kind(a_mass, bc_mass)?;
        Some(Self {
            rows: set_a,
            cols: set_b,
            kind,
            ratio: a_mass / bc_mass,
        })
    }

    /// Re-checks the certificate on the whole instance.
    pub fn verify(&self, a: &Marginals, b: &Marginals, supp: &SupportPattern) -> Result<()> {
        self.verify_within(a, b, supp, &all(a.len()), &all(b.len()))
    }

    /// Re-checks the certificate from scratch: non-empty sets inside the
    /// scope, zero block, and the sign of `a(A) - b(B^c)`.
    pub fn verify_within(
        &self,
        a: &Marginals,
        b: &Marginals,
        supp: &SupportPattern,
        rows_scope: &[usize],
        cols_scope: &[usize],
    ) -> Result<()> {
        let fail = |what: &str| {
            Err(Error::InvariantViolation(format!(
                "cause {:?} x {:?}: {what}",
                self.rows, self.cols
            )))
        };
        if self.rows.is_empty() || self.cols.is_empty() {
            return fail("empty side");
        }
        if !self.rows.iter().all(|i| rows_scope.contains(i))
            || !self.cols.iter().all(|j| cols_scope.contains(j))
        {
            return fail("outside scope");
        }
        if !supp.is_zero_on(&self.rows, &self.cols) {
            return fail("seed is not zero on the block");
        }
        let a_mass = a.mass(&self.rows) / a.mass(rows_scope);
        let bc_mass = b.mass(&complement(&self.cols, cols_scope)) / b.mass(cols_scope);
        if cause_kind(a_mass, bc_mass) != Some(self.kind) {
            return fail(&format!(
                "a(A) = {a_mass}, b(B^c) = {bc_mass} contradict {:?}",
                self.kind
            ));
        }
        Ok(())
    }

    /// Kind of the same block under other marginals.
    pub fn kind_under(&self, a: &Marginals, b: &Marginals) -> Option<CauseKind> {
        let bc = complement(&self.cols, &all(b.len()));
        cause_kind(a.mass(&self.rows), b.mass(&bc))
    }
}

/// Outcome of the feasibility test.
#[derive(Debug, Clone, PartialEq)]
pub enum Feasibility {
    /// a matrix with marginals `a`, `b` and support inside the pattern
    Witness(Matrix),
    /// an incompatibility cause
    Cause(Cause),
}

fn check_dims(a: &Marginals, b: &Marginals, supp: &SupportPattern) -> Result<()> {
    if supp.shape() != (a.len(), b.len()) {
        return Err(Error::DimensionMismatch {
            expected: format!("{}x{} pattern", a.len(), b.len()),
            found: format!("{}x{}", supp.rows(), supp.cols()),
        });
    }
    Ok(())
}

enum FlowVerdict {
    Feasible(TransportFlow),
    Infeasible(Cause),
}

fn flow_verdict(a: &Marginals, b: &Marginals, supp: &SupportPattern) -> Result<FlowVerdict> {
    check_dims(a, b, supp)?;
    let flow = TransportFlow::solve(a.as_slice(), b.as_slice(), supp);
    let deficit = 1.0 - flow.value();
    let (rows, reached_cols) = flow.source_side();
    let cols = complement(&reached_cols, &all(b.len()));
    let flow_says_feasible = deficit <= CRITICALITY_TOL;
    if flow_says_feasible {
        return Ok(FlowVerdict::Feasible(flow));
    }
    let cause = if rows.is_empty() || cols.is_empty() {
        None
    } else {
        Cause::within(
            a,
            b,
            &all(a.len()),
            &all(b.len()),
            rows.clone(),
            cols.clone(),
        )
    };
    match cause {
        Some(c) if c.kind == CauseKind::Incompatibility => {
            c.verify(a, b, supp)?;
            Ok(FlowVerdict::Infeasible(c))
        }
        _ => Err(Error::IllConditioned {
            gap: a.mass(&rows) - b.mass(&reached_cols),
            rows,
            cols,
        }),
    }
}

/// Decides whether some matrix with marginals `a`, `b` is supported inside
/// `supp`. Returns `a (x) b` for a full pattern, a max-flow matrix otherwise,
/// or the min-cut cause when none exists.
pub fn feasible(a: &Marginals, b: &Marginals, supp: &SupportPattern) -> Result<Feasibility> {
    match flow_verdict(a, b, supp)? {
        FlowVerdict::Infeasible(c) => Ok(Feasibility::Cause(c)),
        FlowVerdict::Feasible(flow) => {
            let w = if supp.count() == a.len() * b.len() {
                Matrix::from_fn(a.len(), b.len(), |i, j| a[i] * b[j])
            } else {
                flow.cell_flows().clone()
            };
            check_witness(&w, a, b, supp)?;
            Ok(Feasibility::Witness(w))
        }
    }
}

fn check_witness(w: &Matrix, a: &Marginals, b: &Marginals, supp: &SupportPattern) -> Result<()> {
    let row_dev = w
        .row_sums()
        .into_iter()
        .zip(a.as_slice())
        .map(|(x, y)| (x - y).abs());
    let col_dev = w
        .col_sums()
        .into_iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y).abs());
    let dev = row_dev.chain(col_dev).fold(0.0, f64::max);
    if dev > WITNESS_TOL {
        return Err(Error::InvariantViolation(format!(
            "witness misses marginals by {dev:e}"
        )));
    }
    for i in 0..w.rows() {
        for j in 0..w.cols() {
            if w[(i, j)] < 0.0 || (w[(i, j)] > 0.0 && !supp.contains(i, j)) {
                return Err(Error::InvariantViolation(format!(
                    "witness entry ({i}, {j}) = {} outside the pattern",
                    w[(i, j)]
                )));
            }
        }
    }
    Ok(())
}

/// Support of the feasible matrices together with a feasible matrix that
/// is positive on all of it.
#[derive(Debug, Clone, PartialEq)]
pub struct MaximalSupport {
    pub pattern: SupportPattern,
    pub witness: Matrix,
}

/// Largest support among matrices with marginals `a`, `b` inside `supp`:
/// a cell belongs to it when it carries flow in some maximum flow.
pub fn maximal_support(
    a: &Marginals,
    b: &Marginals,
    supp: &SupportPattern,
) -> Result<SupportPattern> {
    Ok(maximal_support_with_witness(a, b, supp)?.pattern)
}

pub fn maximal_support_with_witness(
    a: &Marginals,
    b: &Marginals,
    supp: &SupportPattern,
) -> Result<MaximalSupport> {
    let flow = match flow_verdict(a, b, supp)? {
        FlowVerdict::Feasible(flow) => flow,
        FlowVerdict::Infeasible(c) => {
            return Err(Error::Infeasible {
                rows: c.rows,
                cols: c.cols,
            })
        }
    };
    let pattern = supp.filtered(|i, j| flow.cell_can_carry(i, j));
    if supp.count() == a.len() * b.len() && pattern.count() == supp.count() {
        let witness = Matrix::from_fn(a.len(), b.len(), |i, j| a[i] * b[j]);
        return Ok(MaximalSupport { pattern, witness });
    }
    let mut witness = Matrix::zeros(a.len(), b.len());
    let cells: Vec<(usize, usize)> = pattern.cells().collect();
    for &(i, j) in &cells {
        let alt = flow.rerouted_through(i, j).ok_or_else(|| {
            Error::InvariantViolation(format!("cell ({i}, {j}) has no rerouting cycle"))
        })?;
        for (k, l) in pattern.cells() {
            witness[(k, l)] += alt[(k, l)] / cells.len() as f64;
        }
    }
    check_witness(&witness, a, b, supp)?;
    if let Some((i, j)) = pattern.cells().find(|&(i, j)| witness[(i, j)] <= 0.0) {
        return Err(Error::InvariantViolation(format!(
            "maximal-support witness vanishes at ({i}, {j})"
        )));
    }
    Ok(MaximalSupport { pattern, witness })
}

/// Neighbour columns of each row in `cols_scope`, as bit masks over the
/// positions in `cols_scope`.
fn neighbour_masks(supp: &SupportPattern, rows: &[usize], cols: &[usize]) -> Result<Vec<u64>> {
    if cols.len() > 64 {
        return Err(Error::TooLarge {
            what: "column set",
            size: cols.len(),
            cap: 64,
        });
    }
    Ok(rows
        .iter()
        .map(|&i| {
            cols.iter()
                .enumerate()
                .filter(|(_, &j)| supp.contains(i, j))
                .fold(0u64, |m, (k, _)| m | (1 << k))
        })
        .collect())
}

fn mask_mass(mask: u64, weights: &[f64]) -> f64 {
    weights
        .iter()
        .enumerate()
        .filter(|(k, _)| mask >> k & 1 == 1)
        .map(|(_, w)| w)
        .sum()
}

/// Every row set `A` in the scope (non-empty), with `N(A)` the columns of
/// the scope where the pattern is positive on some row of `A`. Visits in a
/// fixed depth-first order.
fn for_each_row_set(masks: &[u64], mut visit: impl FnMut(u64, u64)) {
    fn go(masks: &[u64], k: usize, set: u64, nb: u64, visit: &mut impl FnMut(u64, u64)) {
        if k == masks.len() {
            if set != 0 {
                visit(set, nb);
            }
            return;
        }
        go(masks, k + 1, set | (1 << k), nb | masks[k], visit);
        go(masks, k + 1, set, nb, visit);
    }
    go(masks, 0, 0, 0, &mut visit);
}

fn positions(mask: u64, scope: &[usize]) -> Vec<usize> {
    scope
        .iter()
        .enumerate()
        .filter(|(k, _)| mask >> k & 1 == 1)
        .map(|(_, &x)| x)
        .collect()
}

/// Cause of incompatibility of the restricted problem on `rows x cols`
/// maximizing `a(A)/b(Q \ B)`, with `B` maximal for its `A` and `A` the
/// largest maximizer. Fails with [`Error::Feasible`] when no cause exists.
pub fn best_cause_within(
    a: &Marginals,
    b: &Marginals,
    supp: &SupportPattern,
    rows: &[usize],
    cols: &[usize],
) -> Result<Cause> {
    check_dims(a, b, supp)?;
    if rows.len() > BEST_CAUSE_MAX_ROWS {
        return Err(Error::TooLarge {
            what: "row set",
            size: rows.len(),
            cap: BEST_CAUSE_MAX_ROWS,
        });
    }
    let masks = neighbour_masks(supp, rows, cols)?;
    let a_total = a.mass(rows);
    let b_total = b.mass(cols);
    let aw: Vec<f64> = rows.iter().map(|&i| a[i] / a_total).collect();
    let bw: Vec<f64> = cols.iter().map(|&j| b[j] / b_total).collect();
    let full = if cols.len() == 64 {
        u64::MAX
    } else {
        (1u64 << cols.len()) - 1
    };

    let mut best = 0.0f64;
    let mut maximizers: Vec<u64> = Vec::new();
    for_each_row_set(&masks, |set, nb| {
        if nb == full {
            return;
        }
        let (am, bm) = (mask_mass(set, &aw), mask_mass(nb, &bw));
        if cause_kind(am, bm) != Some(CauseKind::Incompatibility) {
            return;
        }
        let ratio = am / bm;
        let tol = CRITICALITY_TOL * ratio.max(1.0);
        if ratio > best + tol {
            best = ratio;
            maximizers.clear();
            maximizers.push(set);
        } else if (ratio - best).abs() <= tol {
            maximizers.push(set);
        }
    });
    if maximizers.is_empty() {
        return Err(Error::Feasible);
    }
    // the maximizer should be unique up to inclusion: check the union
    let union = maximizers.iter().fold(0u64, |u, s| u | s);
    let union_nb = (0..rows.len())
        .filter(|k| union >> k & 1 == 1)
        .fold(0u64, |m, k| m | masks[k]);
    let union_ratio = mask_mass(union, &aw) / mask_mass(union_nb, &bw);
    if (union_ratio - best).abs() > CRITICALITY_TOL * best.max(1.0) {
        return Err(Error::InvariantViolation(format!(
            "ratio-maximizing row sets are not nested: union has ratio {union_ratio}, maximum is {best}"
        )));
    }
    let cause = Cause {
        rows: positions(union, rows),
        cols: positions(full & !union_nb, cols),
        kind: CauseKind::Incompatibility,
        ratio: union_ratio,
    };
    cause.verify_within(a, b, supp, rows, cols)?;
    Ok(cause)
}

/// [`best_cause_within`] on the whole instance.
pub fn best_cause(a: &Marginals, b: &Marginals, supp: &SupportPattern) -> Result<Cause> {
    best_cause_within(a, b, supp, &all(a.len()), &all(b.len()))
}

/// All zero blocks `A x B(A)` that are causes, with `B(A)` the maximal
/// column set for `A`; increasing in the visit order of row sets.
pub fn enumerate_causes(a: &Marginals, b: &Marginals, supp: &SupportPattern) -> Result<Vec<Cause>> {
    check_dims(a, b, supp)?;
    let rows = all(a.len());
    let cols = all(b.len());
    if rows.len() > ENUMERATION_MAX_ROWS {
        return Err(Error::TooLarge {
            what: "row set",
            size: rows.len(),
            cap: ENUMERATION_MAX_ROWS,
        });
    }
    let masks = neighbour_masks(supp, &rows, &cols)?;
    let full = if cols.len() == 64 {
        u64::MAX
    } else {
        (1u64 << cols.len()) - 1
    };
    let mut out = Vec::new();
    for_each_row_set(&masks, |set, nb| {
        if nb == full {
            return;
        }
        if let Some(c) = Cause::within(
            a,
            b,
            &rows,
            &cols,
            positions(set, &rows),
            positions(full & !nb, &cols),
        ) {
            out.push(c);
        }
    });
    out.sort_by(|x, y| x.rows.cmp(&y.rows));
    Ok(out)
}

/// Maximal support by the block formula: `supp` minus the union of
/// `A^c x B^c` over criticality causes. Exhaustive; for cross-checks.
pub fn maximal_support_by_enumeration(
    a: &Marginals,
    b: &Marginals,
    supp: &SupportPattern,
) -> Result<SupportPattern> {
    let causes = enumerate_causes(a, b, supp)?;
    if let Some(c) = causes.iter().find(|c| c.kind == CauseKind::Incompatibility) {
        return Err(Error::Infeasible {
            rows: c.rows.clone(),
            cols: c.cols.clone(),
        });
    }
    Ok(supp.filtered(|i, j| {
        !causes
            .iter()
            .any(|c| !c.rows.contains(&i) && !c.cols.contains(&j))
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Behavior {
    FastConvergence,
    SlowConvergence,
    Divergence,
}

impl std::fmt::Display for Behavior {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Behavior::FastConvergence => "FastConvergence",
            Behavior::SlowConvergence => "SlowConvergence",
            Behavior::Divergence => "Divergence",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Certificate {
    /// a feasible matrix positive exactly on the maximal support
    Feasible {
        matrix: Matrix,
        maximal_support: SupportPattern,
    },
    Incompatible(Cause),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classification {
    pub behavior: Behavior,
    pub certificate: Certificate,
}

pub fn classify(problem: &FittingProblem) -> Result<Classification> {
    let (a, b) = (problem.a(), problem.b());
    let supp = problem.support();
    match flow_verdict(a, b, &supp)? {
        FlowVerdict::Infeasible(cause) => {
            cause.verify(a, b, &supp)?;
            Ok(Classification {
                behavior: Behavior::Divergence,
                certificate: Certificate::Incompatible(cause),
            })
        }
        FlowVerdict::Feasible(_) => {
            let ms = maximal_support_with_witness(a, b, &supp)?;
            check_witness(&ms.witness, a, b, &supp)?;
            if !ms.pattern.is_subset_of(&supp) {
                return Err(Error::InvariantViolation(
                    "maximal support leaves the seed support".into(),
                ));
            }
            let behavior = if ms.pattern == supp {
                Behavior::FastConvergence
            } else {
                Behavior::SlowConvergence
            };
            Ok(Classification {
                behavior,
                certificate: Certificate::Feasible {
                    matrix: ms.witness,
                    maximal_support: ms.pattern,
                },
            })
        }
    }
}

/// The divergence decomposition; a single block with `lambda = 1` for
/// feasible instances.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockStructure {
    pub row_blocks: Vec<Vec<usize>>,
    pub col_blocks: Vec<Vec<usize>>,
    pub lambdas: Vec<f64>,
    pub a_prime: Marginals,
    pub b_prime: Marginals,
    /// the cause found at each recursion step (one fewer than blocks)
    pub causes: Vec<Cause>,
}

impl BlockStructure {
    pub fn r(&self) -> usize {
        self.lambdas.len()
    }

    /// Block index of a row.
    pub fn row_block(&self, i: usize) -> usize {
        self.row_blocks
            .iter()
            .position(|blk| blk.contains(&i))
            .expect("row blocks partition the rows")
    }

    pub fn col_block(&self, j: usize) -> usize {
        self.col_blocks
            .iter()
            .position(|blk| blk.contains(&j))
            .expect("column blocks partition the columns")
    }

    /// `lambda_k` for the row block holding `i`: the diagonal of `D_1`.
    pub fn row_lambda(&self, i: usize) -> f64 {
        self.lambdas[self.row_block(i)]
    }

    pub fn is_feasible_case(&self) -> bool {
        self.r() == 1
    }
}

pub fn block_structure(problem: &FittingProblem) -> Result<BlockStructure> {
    let (a, b) = (problem.a(), problem.b());
    let supp = problem.support();
    let (p, q) = problem.shape();
    let mut rows = all(p);
    let mut cols = all(q);
    let mut row_blocks = Vec::new();
    let mut col_blocks = Vec::new();
    let mut causes = Vec::new();
    loop {
        match best_cause_within(a, b, &supp, &rows, &cols) {
            Ok(cause) => {
                let block_cols = complement(&cause.cols, &cols);
                rows = complement(&cause.rows, &rows);
                cols = cause.cols.clone();
                row_blocks.push(cause.rows.clone());
                col_blocks.push(block_cols);
                causes.push(cause);
                if rows.is_empty() {
                    return Err(Error::InvariantViolation(
                        "recursion exhausted the rows".into(),
                    ));
                }
            }
            Err(Error::Feasible) => {
                row_blocks.push(rows);
                col_blocks.push(cols);
                break;
            }
            Err(e) => return Err(e),
        }
    }
    // the first step must agree with the flow verdict
    let infeasible = matches!(flow_verdict(a, b, &supp)?, FlowVerdict::Infeasible(_));
    if infeasible != (row_blocks.len() > 1) {
        return Err(Error::IllConditioned {
            rows: row_blocks[0].clone(),
            cols: col_blocks[0].clone(),
            gap: a.mass(&row_blocks[0]) - b.mass(&col_blocks[0]),
        });
    }
    let lambdas: Vec<f64> = row_blocks
        .iter()
        .zip(&col_blocks)
        .map(|(i, j)| b.mass(j) / a.mass(i))
        .collect();
    if lambdas.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvariantViolation(format!(
            "block ratios are not strictly increasing: {lambdas:?}"
        )));
    }
    let mut a_prime = vec![0.0; p];
    let mut b_prime = vec![0.0; q];
    for (k, &lambda) in lambdas.iter().enumerate() {
        for &i in &row_blocks[k] {
            a_prime[i] = lambda * a[i];
        }
        for &j in &col_blocks[k] {
            b_prime[j] = b[j] / lambda;
        }
    }
    let structure = BlockStructure {
        a_prime: Marginals::new(a_prime)?,
        b_prime: Marginals::new(b_prime)?,
        row_blocks,
        col_blocks,
        lambdas,
        causes,
    };
    // the seed vanishes above the block diagonal
    for k in 0..structure.r() {
        for l in k + 1..structure.r() {
            if !supp.is_zero_on(&structure.row_blocks[k], &structure.col_blocks[l]) {
                return Err(Error::InvariantViolation(format!(
                    "seed is positive on block ({k}, {l})"
                )));
            }
        }
    }
    Ok(structure)
}

/// The problem restarted from the seed zeroed outside `Sigma`, with row
/// marginals `a'` and column marginals `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Reduction {
    pub structure: BlockStructure,
    pub sigma: SupportPattern,
    pub problem: FittingProblem,
}

pub fn reduce(problem: &FittingProblem) -> Result<Reduction> {
    let structure = block_structure(problem)?;
    let sigma = maximal_support(&structure.a_prime, problem.b(), &problem.support())?;
    let x0 = problem.x0().restricted_to(&sigma)?;
    let reduced = FittingProblem::new(x0, structure.a_prime.clone(), problem.b().clone())?;
    Ok(Reduction {
        structure,
        sigma,
        problem: reduced,
    })
}

/// Stopping rule used for the reduced run.
pub fn limit_rule() -> StoppingRule {
    StoppingRule {
        tol_marginal: 1e-13,
        tol_even_odd: 1e-16,
        max_iters: 1_000_000,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LimitPair {
    /// limit of `X_{2n}`, in `Gamma(a', b)`
    pub even_limit: NonNegMatrix,
    /// limit of `X_{2n+1}`, in `Gamma(a, b')`
    pub odd_limit: NonNegMatrix,
    pub sigma: SupportPattern,
    pub structure: BlockStructure,
    /// iterations the reduced run needed
    pub iterations: usize,
}

/// Both limit points, computed by running the iteration on the reduced
/// problem (which converges at a geometric rate).
pub fn limit_points(problem: &FittingProblem) -> Result<LimitPair> {
    let reduction = reduce(problem)?;
    let trace = run(&reduction.problem, limit_rule());
    if trace.stop_reason() != StopReason::Converged {
        return Err(Error::InvariantViolation(format!(
            "reduced problem did not converge: e = {:e} after {} iterations",
            trace.final_error(),
            trace.iterations()
        )));
    }
    let even = trace.final_iterate().clone();
    let structure = reduction.structure;
    let inv: Vec<f64> = (0..problem.shape().0)
        .map(|i| 1.0 / structure.row_lambda(i))
        .collect();
    let odd = even
        .matrix()
        .diag_scaled(&inv, &vec![1.0; problem.shape().1]);
    Ok(LimitPair {
        even_limit: even,
        odd_limit: NonNegMatrix::new(odd)?,
        sigma: reduction.sigma,
        structure,
        iterations: trace.iterations(),
    })
}

/// Groups row indices by the value of `ratios`, splitting sorted values at
/// gaps larger than `gap`; groups come in increasing order of value.
pub fn cluster_by_ratio(ratios: &[f64], gap: f64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..ratios.len()).collect();
    order.sort_by(|&x, &y| ratios[x].total_cmp(&ratios[y]));
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut last = f64::NEG_INFINITY;
    for i in order {
        if groups.is_empty() || ratios[i] - last > gap {
            groups.push(Vec::new());
        }
        groups.last_mut().expect("pushed").push(i);
        last = ratios[i];
    }
    for g in &mut groups {
        g.sort_unstable();
    }
    groups
}

/// Row partition read off the last even iterate of a trace: rows in the
/// same block share the limit of `R_i(X_{2n})`.
pub fn partition_from_trace(trace: &IterationTrace) -> Vec<Vec<usize>> {
    let n = trace.iterations() - trace.iterations() % 2;
    cluster_by_ratio(&trace.ratio_history()[n].r, PARTITION_GAP)
}

/// Checks that the trace-based row partition equals the combinatorial one.
pub fn check_partition(structure: &BlockStructure, trace: &IterationTrace) -> Result<()> {
    let found = partition_from_trace(trace);
    if found != structure.row_blocks {
        return Err(Error::InvariantViolation(format!(
            "row partition from the trace {found:?} differs from the block structure {:?}",
            structure.row_blocks
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn marg(v: &[f64]) -> Marginals {
        Marginals::new(v.to_vec()).unwrap()
    }

    fn blocked() -> SupportPattern {
        SupportPattern::parse("**\n*0").unwrap()
    }

    fn example_5x6() -> (Marginals, Marginals, SupportPattern) {
        (
            marg(&[0.25, 0.25, 0.25, 0.15, 0.10]),
            marg(&[0.05, 0.05, 0.1, 0.2, 0.2, 0.4]),
            SupportPattern::parse("**0000\n0**000\n0***00\n****0*\n*0****").unwrap(),
        )
    }

    #[test]
    fn kinds() {
        assert_eq!(cause_kind(0.6, 0.4), Some(CauseKind::Incompatibility));
        assert_eq!(cause_kind(0.5, 0.5), Some(CauseKind::Criticality));
        assert_eq!(cause_kind(0.5, 0.5 + 1e-13), Some(CauseKind::Criticality));
        assert_eq!(cause_kind(0.4, 0.6), None);
    }

    #[test]
    fn full_support_gives_outer_product() {
        let (a, b) = (marg(&[0.3, 0.7]), marg(&[0.2, 0.5, 0.3]));
        match feasible(&a, &b, &SupportPattern::full(2, 3)).unwrap() {
            Feasibility::Witness(w) => assert!((w[(1, 2)] - 0.21).abs() < 1e-16),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn divergent_cause() {
        let a = marg(&[1.0 / 3.0, 2.0 / 3.0]);
        match feasible(&a, &a, &blocked()).unwrap() {
            Feasibility::Cause(c) => {
                assert_eq!((c.rows, c.cols), (vec![1], vec![1]));
                assert_eq!(c.kind, CauseKind::Incompatibility);
                assert!((c.ratio - 2.0).abs() < 1e-12);
            }
            other => panic!("{other:?}"),
        }
        let c = best_cause(&a, &a, &blocked()).unwrap();
        assert_eq!((c.rows, c.cols), (vec![1], vec![1]));
    }

    #[test]
    fn slow_witness_and_support() {
        let a = marg(&[0.5, 0.5]);
        match feasible(&a, &a, &blocked()).unwrap() {
            Feasibility::Witness(w) => {
                let expected = Matrix::from_rows(&[[0.0, 0.5], [0.5, 0.0]]).unwrap();
                assert!(w.max_abs_diff(&expected) < 1e-15);
            }
            other => panic!("{other:?}"),
        }
        let s = maximal_support(&a, &a, &blocked()).unwrap();
        assert_eq!(s, SupportPattern::parse("0*\n*0").unwrap());
        assert_eq!(
            maximal_support_by_enumeration(&a, &a, &blocked()).unwrap(),
            s
        );
        assert!(matches!(
            best_cause(&a, &a, &blocked()),
            Err(Error::Feasible)
        ));
    }

    #[test]
    fn fast_support_is_full() {
        let a = marg(&[2.0 / 3.0, 1.0 / 3.0]);
        let s = maximal_support(&a, &a, &blocked()).unwrap();
        assert_eq!(s, blocked());
        let ms = maximal_support_with_witness(&a, &a, &blocked()).unwrap();
        assert!(ms.pattern.cells().all(|c| ms.witness[c] > 0.0));
    }

    #[test]
    fn maximal_support_rejects_infeasible() {
        let a = marg(&[1.0 / 3.0, 2.0 / 3.0]);
        assert!(matches!(
            maximal_support(&a, &a, &blocked()),
            Err(Error::Infeasible { .. })
        ));
    }

    #[test]
    fn best_cause_5x6_steps() {
        let (a, b, s) = example_5x6();
        let c1 = best_cause(&a, &b, &s).unwrap();
        assert_eq!(c1.rows, vec![0, 1]);
        assert_eq!(c1.cols, vec![3, 4, 5]);
        assert!((c1.ratio - 2.5).abs() < 1e-12);
        let c2 = best_cause_within(&a, &b, &s, &[2, 3, 4], &[3, 4, 5]).unwrap();
        assert_eq!(c2.rows, vec![2]);
        assert_eq!(c2.cols, vec![4, 5]);
        assert!((c2.ratio - 2.0).abs() < 1e-12);
        assert!(matches!(
            best_cause_within(&a, &b, &s, &[3, 4], &[4, 5]),
            Err(Error::Feasible)
        ));
    }

    #[test]
    fn block_structure_5x6() {
        let (a, b, s) = example_5x6();
        let x0 = Matrix::from_fn(5, 6, |i, j| if s.contains(i, j) { 1.0 } else { 0.0 });
        let problem = FittingProblem::new(NonNegMatrix::new(x0).unwrap(), a, b).unwrap();
        let bs = block_structure(&problem).unwrap();
        assert_eq!(bs.row_blocks, vec![vec![0, 1], vec![2], vec![3, 4]]);
        assert_eq!(bs.col_blocks, vec![vec![0, 1, 2], vec![3], vec![4, 5]]);
        for (l, e) in bs.lambdas.iter().zip([0.4, 0.8, 2.4]) {
            assert!((l - e).abs() < 1e-12);
        }
        for (x, e) in bs
            .a_prime
            .as_slice()
            .iter()
            .zip([0.1, 0.1, 0.2, 0.36, 0.24])
        {
            assert!((x - e).abs() < 1e-12);
        }
    }

    #[test]
    fn block_structure_divergent_2x2() {
        let problem = FittingProblem::from_parts(
            &[[1.0, 1.0], [1.0, 0.0]],
            vec![1.0 / 3.0, 2.0 / 3.0],
            vec![1.0 / 3.0, 2.0 / 3.0],
        )
        .unwrap();
        let bs = block_structure(&problem).unwrap();
        assert_eq!(bs.row_blocks, vec![vec![1], vec![0]]);
        assert_eq!(bs.col_blocks, vec![vec![0], vec![1]]);
        assert!((bs.lambdas[0] - 0.5).abs() < 1e-15);
        assert!((bs.lambdas[1] - 2.0).abs() < 1e-15);
        assert!((bs.a_prime[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((bs.b_prime[0] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn feasible_block_structure_is_trivial() {
        let problem =
            FittingProblem::from_parts(&[[1.0, 2.0], [3.0, 4.0]], vec![0.4, 0.6], vec![0.5, 0.5])
                .unwrap();
        let bs = block_structure(&problem).unwrap();
        assert_eq!(bs.r(), 1);
        assert_eq!(bs.lambdas, vec![1.0]);
        assert_eq!(&bs.a_prime, problem.a());
        assert_eq!(&bs.b_prime, problem.b());
    }

    #[test]
    fn limits_of_divergent_2x2() {
        let problem = FittingProblem::from_parts(
            &[[1.0, 1.0], [1.0, 0.0]],
            vec![1.0 / 3.0, 2.0 / 3.0],
            vec![1.0 / 3.0, 2.0 / 3.0],
        )
        .unwrap();
        let lp = limit_points(&problem).unwrap();
        let even = Matrix::from_rows(&[[0.0, 2.0 / 3.0], [1.0 / 3.0, 0.0]]).unwrap();
        let odd = Matrix::from_rows(&[[0.0, 1.0 / 3.0], [2.0 / 3.0, 0.0]]).unwrap();
        assert!(lp.even_limit.matrix().max_abs_diff(&even) < 1e-12);
        assert!(lp.odd_limit.matrix().max_abs_diff(&odd) < 1e-12);
        assert_eq!(lp.sigma, SupportPattern::parse("0*\n*0").unwrap());
    }

    #[test]
    fn causes_flagged_under_adjusted_marginals() {
        let (a, b, s) = example_5x6();
        let causes = enumerate_causes(&a, &b, &s).unwrap();
        let incompat: Vec<&Cause> = causes
            .iter()
            .filter(|c| c.kind == CauseKind::Incompatibility)
            .collect();
        let a_prime = marg(&[0.1, 0.1, 0.2, 0.36, 0.24]);
        let find = |rows: &[usize]| incompat.iter().find(|c| c.rows == rows).unwrap();
        assert_eq!(
            find(&[0, 1]).kind_under(&a_prime, &b),
            Some(CauseKind::Criticality)
        );
        assert_eq!(
            find(&[0, 1, 2]).kind_under(&a_prime, &b),
            Some(CauseKind::Criticality)
        );
        assert_eq!(
            find(&[0]).kind_under(&a_prime, &b),
            Some(CauseKind::Criticality)
        );
        assert_eq!(find(&[0, 1, 2, 3]).kind_under(&a_prime, &b), None);
    }

    #[test]
    fn clustering() {
        let groups = cluster_by_ratio(&[2.0, 0.5, 2.00001, 1.0], 1e-4);
        assert_eq!(groups, vec![vec![1], vec![3], vec![0, 2]]);
    }

    #[test]
    fn cause_verification_catches_tampering() {
        let a = marg(&[1.0 / 3.0, 2.0 / 3.0]);
        let mut c = best_cause(&a, &a, &blocked()).unwrap();
        c.cols = vec![0];
        assert!(c.verify(&a, &a, &blocked()).is_err());
    }
}
