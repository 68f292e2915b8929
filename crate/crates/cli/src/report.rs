//! JSON reports. Row and column indices are 1-based throughout.

use bipfit_core::ipfp::{rate_estimate, RateFit};
use bipfit_core::products::{
    check_diameter_contraction, check_dispersion_decrease, check_sorted_partial_sums,
    offdiag_convergence_report, product_run,
};
use bipfit_core::structure::{cause_kind, WITNESS_TOL};
use bipfit_core::{
    block_structure, classify, limit_points, run, Behavior, BlockStructure, Cause, CauseKind,
    Certificate, Error, FittingProblem, IterationTrace, Marginals, Matrix, StochasticMatrix,
    StopReason, StoppingRule, SupportPattern,
};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::format::{parse_pattern_rows, pattern_rows, ProblemFile, SequenceFile};

/// JSON has no infinities; non-finite reals are written as strings.
mod real {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        if x.is_finite() {
            s.serialize_f64(*x)
        } else {
            s.serialize_str(&x.to_string())
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(x) => Ok(x),
            Repr::Text(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolInfo {
    pub name: String,
    pub version: String,
}

impl Default for ToolInfo {
    fn default() -> Self {
        Self {
            name: "bipfit".into(),
            version: env!("CARGO_PKG_VERSION").into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub tol_marginal: f64,
    pub tol_even_odd: f64,
    pub max_iters: usize,
}

impl From<StoppingRule> for FitConfig {
    fn from(r: StoppingRule) -> Self {
        Self {
            tol_marginal: r.tol_marginal,
            tol_even_odd: r.tol_even_odd,
            max_iters: r.max_iters,
        }
    }
}

impl FitConfig {
    pub fn rule(&self) -> Result<StoppingRule> {
        StoppingRule::new(self.tol_marginal, self.tol_even_odd, self.max_iters)
            .map_err(|e| CliError::Usage(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Incompatibility,
    Criticality,
}

impl From<CauseKind> for Kind {
    fn from(k: CauseKind) -> Self {
        match k {
            CauseKind::Incompatibility => Kind::Incompatibility,
            CauseKind::Criticality => Kind::Criticality,
        }
    }
}

impl From<Kind> for CauseKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Incompatibility => CauseKind::Incompatibility,
            Kind::Criticality => CauseKind::Criticality,
        }
    }
}

fn one_based(v: &[usize]) -> Vec<usize> {
    v.iter().map(|k| k + 1).collect()
}

fn zero_based(v: &[usize], len: usize, what: &str) -> Result<Vec<usize>> {
    v.iter()
        .map(|&k| {
            if (1..=len).contains(&k) {
                Ok(k - 1)
            } else {
                Err(invalid(format!("{what} index {k} outside 1..={len}")))
            }
        })
        .collect()
}

fn invalid(msg: String) -> CliError {
    CliError::Core(Error::InvariantViolation(msg))
}

/// A zero block `A x B`: `a(A) / b(B^c)` is `ratio`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CauseReport {
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
    pub kind: Kind,
    #[serde(with = "real")]
    pub ratio: f64,
}

impl From<&Cause> for CauseReport {
    fn from(c: &Cause) -> Self {
        Self {
            rows: one_based(&c.rows),
            cols: one_based(&c.cols),
            kind: c.kind.into(),
            ratio: c.ratio,
        }
    }
}

impl CauseReport {
    fn to_cause(&self, p: usize, q: usize) -> Result<Cause> {
        Ok(Cause {
            rows: zero_based(&self.rows, p, "row")?,
            cols: zero_based(&self.cols, q, "column")?,
            kind: self.kind.into(),
            ratio: self.ratio,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum CertificateReport {
    /// a matrix with the target marginals, positive exactly on the
    /// maximal support
    Feasible {
        witness: Vec<Vec<f64>>,
        maximal_support: Vec<String>,
    },
    Incompatible {
        cause: CauseReport,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub behavior: String,
    pub certificate: CertificateReport,
}

/// Step `k` of the decomposition. `rows x cols` is the cause found within
/// the remaining rows and columns; `block_rows x cols` is the matching
/// zero block of the whole seed, classified under the input marginals and
/// under `(a', b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockCauseReport {
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
    pub kind: Kind,
    #[serde(with = "real")]
    pub ratio: f64,
    pub block_rows: Vec<usize>,
    pub kind_under_input: Option<Kind>,
    pub kind_under_adjusted: Option<Kind>,
    pub becomes_criticality: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockReport {
    pub r: usize,
    pub row_blocks: Vec<Vec<usize>>,
    pub col_blocks: Vec<Vec<usize>>,
    pub lambdas: Vec<f64>,
    pub a_prime: Vec<f64>,
    pub b_prime: Vec<f64>,
    pub causes: Vec<BlockCauseReport>,
}

fn complement(set: &[usize], n: usize) -> Vec<usize> {
    (0..n).filter(|k| !set.contains(k)).collect()
}

/// Remaining rows and columns before step `k`.
fn scopes(
    row_blocks: &[Vec<usize>],
    col_blocks: &[Vec<usize>],
    k: usize,
    p: usize,
    q: usize,
) -> (Vec<usize>, Vec<usize>) {
    let used_rows: Vec<usize> = row_blocks[..k].iter().flatten().copied().collect();
    let used_cols: Vec<usize> = col_blocks[..k].iter().flatten().copied().collect();
    (complement(&used_rows, p), complement(&used_cols, q))
}

fn global_kinds(
    block_rows: &[usize],
    cols: &[usize],
    input: (&Marginals, &Marginals),
    adjusted: &Marginals,
) -> (Option<Kind>, Option<Kind>) {
    let bc = complement(cols, input.1.len());
    let under = |a: &Marginals| cause_kind(a.mass(block_rows), input.1.mass(&bc)).map(Kind::from);
    (under(input.0), under(adjusted))
}

impl BlockReport {
    fn new(bs: &BlockStructure, problem: &FittingProblem) -> Self {
        let mut causes = Vec::new();
        let mut block_rows = Vec::new();
        for c in &bs.causes {
            block_rows.extend_from_slice(&c.rows);
            block_rows.sort_unstable();
            let (kind_under_input, kind_under_adjusted) = global_kinds(
                &block_rows,
                &c.cols,
                (problem.a(), problem.b()),
                &bs.a_prime,
            );
            causes.push(BlockCauseReport {
                rows: one_based(&c.rows),
                cols: one_based(&c.cols),
                kind: c.kind.into(),
                ratio: c.ratio,
                block_rows: one_based(&block_rows),
                kind_under_input,
                kind_under_adjusted,
                becomes_criticality: kind_under_input == Some(Kind::Incompatibility)
                    && kind_under_adjusted == Some(Kind::Criticality),
            });
        }
        Self {
            r: bs.r(),
            row_blocks: bs.row_blocks.iter().map(|b| one_based(b)).collect(),
            col_blocks: bs.col_blocks.iter().map(|b| one_based(b)).collect(),
            lambdas: bs.lambdas.clone(),
            a_prime: bs.a_prime.as_slice().to_vec(),
            b_prime: bs.b_prime.as_slice().to_vec(),
            causes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitsReport {
    pub even: Vec<Vec<f64>>,
    pub odd: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateSummary {
    /// slope of `ln ||X_{n+2} - X_n||_1` per iteration
    #[serde(with = "real")]
    pub rate: f64,
    #[serde(with = "real")]
    pub r_squared_geometric: f64,
    #[serde(with = "real")]
    pub r_squared_algebraic: f64,
    pub points: usize,
}

impl From<&RateFit> for RateSummary {
    fn from(f: &RateFit) -> Self {
        Self {
            rate: f.rate,
            r_squared_geometric: f.r_squared_geometric,
            r_squared_algebraic: f.r_squared_algebraic,
            points: f.points,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellRateSummary {
    pub row: usize,
    pub col: usize,
    #[serde(flatten)]
    pub fit: RateSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationStats {
    pub iterations: usize,
    pub stop_reason: String,
    pub final_error: f64,
    /// `||X_{2n} - L_even||_1` at the last even iterate
    pub even_limit_distance: f64,
    pub rate: Option<RateSummary>,
    pub slowest_cell: Option<CellRateSummary>,
}

pub fn stop_reason_name(r: StopReason) -> &'static str {
    match r {
        StopReason::Converged => "converged",
        StopReason::EvenOddConverged => "even_odd_converged",
        StopReason::IterationCap => "iteration_cap",
    }
}

fn rates(trace: &IterationTrace) -> (Option<RateSummary>, Option<CellRateSummary>) {
    match rate_estimate(trace) {
        Ok(report) => (
            Some((&report.overall).into()),
            report.slowest().map(|c| CellRateSummary {
                row: c.row + 1,
                col: c.col + 1,
                fit: (&c.fit).into(),
            }),
        ),
        Err(_) => (None, None),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub tool: ToolInfo,
    pub config: FitConfig,
    pub input: ProblemFile,
    pub classification: ClassificationReport,
    /// present for divergent instances
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub block_structure: Option<BlockReport>,
    /// maximal support under `(a', b)`; the limits live on it
    pub sigma: Vec<String>,
    pub limits: LimitsReport,
    pub iteration: IterationStats,
}

impl AnalysisReport {
    pub fn build(
        input: &ProblemFile,
        problem: &FittingProblem,
        rule: StoppingRule,
    ) -> Result<Self> {
        let c = classify(problem)?;
        let certificate = match &c.certificate {
            Certificate::Feasible {
                matrix,
                maximal_support,
            } => CertificateReport::Feasible {
                witness: matrix.to_rows(),
                maximal_support: pattern_rows(maximal_support),
            },
            Certificate::Incompatible(cause) => CertificateReport::Incompatible {
                cause: cause.into(),
            },
        };
        let block = match c.behavior {
            Behavior::Divergence => Some(BlockReport::new(&block_structure(problem)?, problem)),
            _ => None,
        };
        let lp = limit_points(problem)?;
        let trace = run(problem, rule);
        let (rate, slowest_cell) = rates(&trace);
        let report = Self {
            tool: ToolInfo::default(),
            config: rule.into(),
            input: input.clone(),
            classification: ClassificationReport {
                behavior: c.behavior.to_string(),
                certificate,
            },
            block_structure: block,
            sigma: pattern_rows(&lp.sigma),
            limits: LimitsReport {
                even: lp.even_limit.matrix().to_rows(),
                odd: lp.odd_limit.matrix().to_rows(),
            },
            iteration: IterationStats {
                iterations: trace.iterations(),
                stop_reason: stop_reason_name(trace.stop_reason()).into(),
                final_error: trace.final_error(),
                even_limit_distance: trace
                    .last_even()
                    .matrix()
                    .l1_distance(lp.even_limit.matrix()),
                rate,
                slowest_cell,
            },
        };
        report.verify()?;
        Ok(report)
    }

    /// Re-checks every certificate against the embedded input.
    pub fn verify(&self) -> Result<()> {
        let problem = self.input.to_problem("report input")?;
        let (a, b) = (problem.a(), problem.b());
        let (p, q) = problem.shape();
        let supp = problem.support();
        let behavior = match self.classification.behavior.as_str() {
            "FastConvergence" => Behavior::FastConvergence,
            "SlowConvergence" => Behavior::SlowConvergence,
            "Divergence" => Behavior::Divergence,
            other => return Err(invalid(format!("unknown behavior {other:?}"))),
        };
        match &self.classification.certificate {
            CertificateReport::Incompatible { cause } => {
                if behavior != Behavior::Divergence {
                    return Err(invalid(
                        "incompatibility cause on a convergent instance".into(),
                    ));
                }
                let cause = cause.to_cause(p, q)?;
                if cause.kind != CauseKind::Incompatibility {
                    return Err(invalid(
                        "certificate is not an incompatibility cause".into(),
                    ));
                }
                cause.verify(a, b, &supp)?;
                check_ratio(
                    &cause,
                    a,
                    b,
                    &(0..p).collect::<Vec<_>>(),
                    &(0..q).collect::<Vec<_>>(),
                )?;
            }
            CertificateReport::Feasible {
                witness,
                maximal_support,
            } => {
                let ms = pattern(maximal_support)?;
                let w = Matrix::from_rows(witness)?;
                check_marginals(
                    &w,
                    a.as_slice(),
                    b.as_slice(),
                    10.0 * WITNESS_TOL,
                    "witness",
                )?;
                if SupportPattern::of(&w) != ms {
                    return Err(invalid(
                        "witness is not positive exactly on the maximal support".into(),
                    ));
                }
                if !ms.is_subset_of(&supp) {
                    return Err(invalid("maximal support leaves the seed support".into()));
                }
                let fast = ms == supp;
                if fast != (behavior == Behavior::FastConvergence)
                    || behavior == Behavior::Divergence
                {
                    return Err(invalid(format!(
                        "{behavior} contradicts the feasible certificate"
                    )));
                }
            }
        }

        let a_lim = match &self.block_structure {
            Some(bs) => self.verify_blocks(bs, &problem)?,
            None if behavior == Behavior::Divergence => {
                return Err(invalid("divergent instance without block structure".into()))
            }
            None => a.as_slice().to_vec(),
        };
        let sigma = pattern(&self.sigma)?;
        if !sigma.is_subset_of(&supp) {
            return Err(invalid("sigma leaves the seed support".into()));
        }
        let even = Matrix::from_rows(&self.limits.even)?;
        let odd = Matrix::from_rows(&self.limits.odd)?;
        for (m, what) in [(&even, "even limit"), (&odd, "odd limit")] {
            if !SupportPattern::of(m).is_subset_of(&sigma) {
                return Err(invalid(format!("{what} leaves sigma")));
            }
        }
        check_marginals(&even, &a_lim, b.as_slice(), 1e-8, "even limit")?;
        let b_odd: Vec<f64> = match &self.block_structure {
            Some(bs) => bs.b_prime.clone(),
            None => b.as_slice().to_vec(),
        };
        check_marginals(&odd, a.as_slice(), &b_odd, 1e-8, "odd limit")?;
        Ok(())
    }

    fn verify_blocks(&self, bs: &BlockReport, problem: &FittingProblem) -> Result<Vec<f64>> {
        let (a, b) = (problem.a(), problem.b());
        let (p, q) = problem.shape();
        let supp = problem.support();
        if bs.r != bs.row_blocks.len() || bs.r != bs.col_blocks.len() || bs.r != bs.lambdas.len() {
            return Err(invalid("block counts disagree with r".into()));
        }
        let rows = bs
            .row_blocks
            .iter()
            .map(|v| zero_based(v, p, "row"))
            .collect::<Result<Vec<_>>>()?;
        let cols = bs
            .col_blocks
            .iter()
            .map(|v| zero_based(v, q, "column"))
            .collect::<Result<Vec<_>>>()?;
        let mut seen_rows: Vec<usize> = rows.iter().flatten().copied().collect();
        let mut seen_cols: Vec<usize> = cols.iter().flatten().copied().collect();
        seen_rows.sort_unstable();
        seen_cols.sort_unstable();
        if seen_rows != (0..p).collect::<Vec<_>>() || seen_cols != (0..q).collect::<Vec<_>>() {
            return Err(invalid(
                "blocks do not partition the rows and columns".into(),
            ));
        }
        for (k, lambda) in bs.lambdas.iter().enumerate() {
            let expected = b.mass(&cols[k]) / a.mass(&rows[k]);
            if (lambda - expected).abs() > 1e-12 * expected.max(1.0) {
                return Err(invalid(format!(
                    "lambda_{} = {lambda}, expected {expected}",
                    k + 1
                )));
            }
            if k > 0 && bs.lambdas[k - 1] >= *lambda {
                return Err(invalid("lambdas are not strictly increasing".into()));
            }
        }
        let mut a_prime = vec![0.0; p];
        let mut b_prime = vec![0.0; q];
        for k in 0..bs.r {
            for &i in &rows[k] {
                a_prime[i] = bs.lambdas[k] * a[i];
            }
            for &j in &cols[k] {
                b_prime[j] = b[j] / bs.lambdas[k];
            }
        }
        let close = |x: &[f64], y: &[f64]| x.iter().zip(y).all(|(u, v)| (u - v).abs() <= 1e-12);
        if !close(&a_prime, &bs.a_prime) || !close(&b_prime, &bs.b_prime) {
            return Err(invalid("a' or b' disagree with the lambdas".into()));
        }
        if bs.causes.len() + 1 != bs.r {
            return Err(invalid("expected one cause per block boundary".into()));
        }
        let adjusted = Marginals::new(a_prime.clone())?;
        let mut block_rows = Vec::new();
        for (k, cr) in bs.causes.iter().enumerate() {
            let cause = CauseReport {
                rows: cr.rows.clone(),
                cols: cr.cols.clone(),
                kind: cr.kind,
                ratio: cr.ratio,
            }
            .to_cause(p, q)?;
            let (pk, qk) = scopes(&rows, &cols, k, p, q);
            cause.verify_within(a, b, &supp, &pk, &qk)?;
            check_ratio(&cause, a, b, &pk, &qk)?;
            if cause.rows != rows[k] {
                return Err(invalid(format!(
                    "cause {} rows differ from block {}",
                    k + 1,
                    k + 1
                )));
            }
            block_rows.extend_from_slice(&cause.rows);
            block_rows.sort_unstable();
            if one_based(&block_rows) != cr.block_rows {
                return Err(invalid(format!("cause {}: wrong cumulative rows", k + 1)));
            }
            if !supp.is_zero_on(&block_rows, &cause.cols) {
                return Err(invalid(format!(
                    "cause {}: seed is not zero on the block",
                    k + 1
                )));
            }
            let kinds = global_kinds(&block_rows, &cause.cols, (a, b), &adjusted);
            if kinds != (cr.kind_under_input, cr.kind_under_adjusted) {
                return Err(invalid(format!("cause {}: kinds do not recompute", k + 1)));
            }
        }
        Ok(a_prime)
    }
}

fn pattern(rows: &[String]) -> Result<SupportPattern> {
    parse_pattern_rows(rows).map_err(|e| invalid(format!("support pattern: {e}")))
}

fn check_ratio(c: &Cause, a: &Marginals, b: &Marginals, ps: &[usize], qs: &[usize]) -> Result<()> {
    let bc: Vec<usize> = qs.iter().copied().filter(|j| !c.cols.contains(j)).collect();
    let ratio = (a.mass(&c.rows) / a.mass(ps)) / (b.mass(&bc) / b.mass(qs));
    if (ratio - c.ratio).abs() > 1e-12 * ratio.max(1.0) {
        return Err(invalid(format!(
            "cause ratio {} recomputes to {ratio}",
            c.ratio
        )));
    }
    Ok(())
}

fn check_marginals(m: &Matrix, a: &[f64], b: &[f64], tol: f64, what: &str) -> Result<()> {
    if m.shape() != (a.len(), b.len()) {
        return Err(invalid(format!("{what} has the wrong shape")));
    }
    if m.min_entry() < 0.0 {
        return Err(invalid(format!("{what} has a negative entry")));
    }
    let dev = m
        .row_sums()
        .iter()
        .zip(a)
        .chain(m.col_sums().iter().zip(b))
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    if dev > tol {
        return Err(invalid(format!("{what} misses its marginals by {dev:e}")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FitResult {
    Limit {
        matrix: Vec<Vec<f64>>,
    },
    /// last even and odd iterates, for runs that did not fit both sides
    EvenOdd {
        even: Vec<Vec<f64>>,
        odd: Vec<Vec<f64>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub tool: ToolInfo,
    pub config: FitConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub iterations: usize,
    pub stop_reason: String,
    pub final_error: f64,
    pub result: FitResult,
    pub rate: Option<RateSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredIterate {
    pub n: usize,
    pub matrix: Vec<Vec<f64>>,
}

/// Error and ratio history of a run; matrices are kept at a stride that
/// doubles as the run grows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceFile {
    pub errors: Vec<f64>,
    pub row_ratios: Vec<Vec<f64>>,
    pub col_ratios: Vec<Vec<f64>>,
    pub stride: usize,
    pub iterates: Vec<StoredIterate>,
}

pub fn fit(
    input: &ProblemFile,
    problem: &FittingProblem,
    rule: StoppingRule,
) -> (FitReport, TraceFile) {
    let trace = run(problem, rule);
    let result = match trace.stop_reason() {
        StopReason::Converged => FitResult::Limit {
            matrix: trace.final_iterate().matrix().to_rows(),
        },
        _ => FitResult::EvenOdd {
            even: trace.last_even().matrix().to_rows(),
            odd: trace.last_odd().matrix().to_rows(),
        },
    };
    let report = FitReport {
        tool: ToolInfo::default(),
        config: rule.into(),
        name: input.name.clone(),
        iterations: trace.iterations(),
        stop_reason: stop_reason_name(trace.stop_reason()).into(),
        final_error: trace.final_error(),
        result,
        rate: rates(&trace).0,
    };
    let history = TraceFile {
        errors: trace.errors().to_vec(),
        row_ratios: trace.ratio_history().iter().map(|r| r.r.clone()).collect(),
        col_ratios: trace.ratio_history().iter().map(|r| r.c.clone()).collect(),
        stride: trace.stride(),
        iterates: trace
            .stored()
            .iter()
            .map(|(n, x)| StoredIterate {
                n: *n,
                matrix: x.matrix().to_rows(),
            })
            .collect(),
    };
    (report, history)
}

/// The reduced problem: seed zeroed outside sigma, marginals `(a', b)`.
pub fn reduced_file(input: &ProblemFile, problem: &FittingProblem) -> Result<ProblemFile> {
    let r = bipfit_core::structure::reduce(problem)?;
    let mut out = ProblemFile::from_problem(
        &r.problem,
        input.name.as_ref().map(|n| format!("{n} (reduced)")),
    );
    out.description = Some(format!(
        "seed restricted to the maximal support under adjusted row marginals; r = {}, lambda = {:?}",
        r.structure.r(),
        r.structure.lambdas
    ));
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProductsConfig {
    pub seed: u64,
    pub vectors: usize,
    /// Cauchy tolerance on the tail variation of the partial products
    pub tol: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssumptionsReport {
    pub gamma: f64,
    #[serde(with = "real")]
    pub rho: f64,
    pub doubly_stochastic: bool,
    pub general_theorem_applies: bool,
    pub doubly_stochastic_theorem_applies: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlackVerdict {
    pub checks: usize,
    #[serde(with = "real")]
    pub min_slack: f64,
    pub holds: bool,
}

impl SlackVerdict {
    fn new(slacks: impl IntoIterator<Item = f64>, floor: f64) -> Self {
        let (checks, min_slack) = slacks
            .into_iter()
            .fold((0, f64::INFINITY), |(n, m), s| (n + 1, m.min(s)));
        Self {
            checks,
            min_slack,
            holds: min_slack >= floor,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffDiagReport {
    pub i: usize,
    pub j: usize,
    pub partial_sum: f64,
    pub tail_growth: f64,
    pub bounded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductsReport {
    pub tool: ToolInfo,
    pub config: ProductsConfig,
    pub source: SequenceFile,
    pub length: usize,
    pub dim: usize,
    pub assumptions: AssumptionsReport,
    pub variation_sum: f64,
    #[serde(with = "real")]
    pub tail_variation: f64,
    pub cauchy: bool,
    /// last partial product, when the products pass the Cauchy test
    pub limit: Option<Vec<Vec<f64>>>,
    /// `min MV`, `max MV` and `diam MV` bounds on every step
    pub diameter_contraction: SlackVerdict,
    /// `gamma ||MV - V||_1 <= D(V) - D(MV)`, for doubly stochastic sequences
    pub dispersion_decrease: Option<SlackVerdict>,
    /// sorted partial sums of `MV` dominate those of `V`
    pub sorted_partial_sums: Option<SlackVerdict>,
    pub offdiag: Option<Vec<OffDiagReport>>,
}

impl ProductsReport {
    /// True when a check whose hypotheses hold has failed.
    pub fn violated(&self) -> bool {
        let failed = |v: &Option<SlackVerdict>| v.is_some_and(|v| !v.holds);
        !self.diameter_contraction.holds
            || failed(&self.dispersion_decrease)
            || failed(&self.sorted_partial_sums)
    }
}

const SLACK_FLOOR: f64 = -1e-12;

pub fn products(
    source: &SequenceFile,
    ms: &[StochasticMatrix],
    tracked: &[Vec<f64>],
    config: ProductsConfig,
) -> Result<ProductsReport> {
    let trace = product_run(ms, tracked)?;
    let a = trace.assumptions;
    let tail_variation = if trace.increments.len() >= 3 {
        trace.tail_variation()
    } else {
        f64::INFINITY
    };
    let cauchy = trace.is_cauchy(config.tol);

    // step n maps P_{n-1} V to P_n V
    let history = &trace.tracked_history;
    let steps: Vec<(&StochasticMatrix, &[f64])> = ms
        .iter()
        .enumerate()
        .flat_map(|(n, m)| history.iter().map(move |h| (m, h[n].as_slice())))
        .collect();
    let contraction = steps
        .iter()
        .map(|(m, v)| check_diameter_contraction(m.matrix(), v).map(|s| s.min()))
        .collect::<bipfit_core::Result<Vec<_>>>()?;
    let (dispersion, sorted) = if a.doubly_stochastic_theorem_applies() {
        let d = steps
            .iter()
            .map(|(m, v)| check_dispersion_decrease(m, v, a.gamma))
            .collect::<bipfit_core::Result<Vec<_>>>()?;
        let mut s = Vec::new();
        for &(m, v) in &steps {
            for k in 1..=m.dim() {
                s.push(check_sorted_partial_sums(m, v, k)?);
            }
        }
        (
            Some(SlackVerdict::new(d, SLACK_FLOOR)),
            Some(SlackVerdict::new(s, SLACK_FLOOR)),
        )
    } else {
        (None, None)
    };
    let (limit, offdiag) = if cauchy {
        let last = trace.last_product().expect("non-empty sequence");
        let report = offdiag_convergence_report(&trace, last, config.tol)?;
        (
            Some(last.matrix().to_rows()),
            Some(
                report
                    .into_iter()
                    .map(|s| OffDiagReport {
                        i: s.i + 1,
                        j: s.j + 1,
                        partial_sum: s.partial_sum,
                        tail_growth: s.tail_growth,
                        bounded: s.bounded,
                    })
                    .collect(),
            ),
        )
    } else {
        (None, None)
    };
    Ok(ProductsReport {
        tool: ToolInfo::default(),
        config,
        source: source.clone(),
        length: ms.len(),
        dim: ms[0].dim(),
        assumptions: AssumptionsReport {
            gamma: a.gamma,
            rho: a.rho,
            doubly_stochastic: a.doubly_stochastic,
            general_theorem_applies: a.general_theorem_applies(),
            doubly_stochastic_theorem_applies: a.doubly_stochastic_theorem_applies(),
        },
        variation_sum: trace.variation_sum,
        tail_variation,
        cauchy,
        limit,
        diameter_contraction: SlackVerdict::new(contraction, SLACK_FLOOR),
        dispersion_decrease: dispersion,
        sorted_partial_sums: sorted,
        offdiag,
    })
}
