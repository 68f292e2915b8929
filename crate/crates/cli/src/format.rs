//! Input files: problem files (JSON or CSV plus marginal flags) and
//! matrix-sequence files (explicit lists or generator specs).

use std::fs;
use std::path::Path;

use bipfit_core::products::{
    alternating_t0_t1, default_r_schedule, m_of_r_sequence, random_doubly_stochastic,
};
use bipfit_core::{
    FittingProblem, Marginals, Matrix, NonNegMatrix, StochasticMatrix, SupportPattern,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// Parses `"0.25"`, `"1e-3"` or `"2/3"`. Non-finite values are rejected.
pub fn parse_number(text: &str) -> std::result::Result<f64, String> {
    let text = text.trim();
    let value = match text.split_once('/') {
        Some((p, q)) => {
            let p: f64 = p
                .trim()
                .parse()
                .map_err(|_| format!("bad numerator in {text:?}"))?;
            let q: f64 = q
                .trim()
                .parse()
                .map_err(|_| format!("bad denominator in {text:?}"))?;
            if q == 0.0 {
                return Err(format!("zero denominator in {text:?}"));
            }
            p / q
        }
        None => text
            .parse()
            .map_err(|_| format!("not a number: {text:?}"))?,
    };
    if value.is_finite() {
        Ok(value)
    } else {
        Err(format!("{text:?} is not finite"))
    }
}

/// Comma-separated list of numbers, as given to `--a` and `--b`.
pub fn parse_list(text: &str) -> std::result::Result<Vec<f64>, String> {
    text.split(',')
        .enumerate()
        .map(|(k, s)| parse_number(s).map_err(|e| format!("entry {}: {e}", k + 1)))
        .collect()
}

#[derive(Deserialize)]
#[serde(untagged)]
enum Num {
    Float(f64),
    Text(String),
}

impl Num {
    fn value(&self, field: &str) -> std::result::Result<f64, String> {
        match self {
            Num::Float(x) => Ok(*x),
            Num::Text(s) => parse_number(s).map_err(|e| format!("{field}: {e}")),
        }
    }
}

fn values(nums: &[Num], field: &str) -> std::result::Result<Vec<f64>, String> {
    nums.iter()
        .enumerate()
        .map(|(k, n)| n.value(&format!("{field}[{k}]")))
        .collect()
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProblem {
    name: Option<String>,
    description: Option<String>,
    a: Vec<Num>,
    b: Vec<Num>,
    #[serde(rename = "X0")]
    x0: Vec<Vec<Num>>,
}

/// On-disk form of a fitting problem. Marginal and seed entries may be
/// JSON numbers, decimal strings or `"p/q"` fractions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawProblem")]
pub struct ProblemFile {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    #[serde(rename = "X0")]
    pub x0: Vec<Vec<f64>>,
}

impl TryFrom<RawProblem> for ProblemFile {
    type Error = String;

    fn try_from(raw: RawProblem) -> std::result::Result<Self, String> {
        let x0 = raw
            .x0
            .iter()
            .enumerate()
            .map(|(i, row)| values(row, &format!("X0[{i}]")))
            .collect::<std::result::Result<_, _>>()?;
        Ok(Self {
            name: raw.name,
            description: raw.description,
            a: values(&raw.a, "a")?,
            b: values(&raw.b, "b")?,
            x0,
        })
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_owned(),
        source,
    })
}

fn origin(path: &Path) -> String {
    path.display().to_string()
}

impl ProblemFile {
    pub fn from_json(text: &str, origin: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| CliError::malformed(origin, e.to_string()))
    }

    /// Bare matrix in CSV; marginals come from the caller.
    pub fn from_csv(text: &str, a: Vec<f64>, b: Vec<f64>, origin: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_reader(text.as_bytes());
        let mut x0 = Vec::new();
        for record in reader.records() {
            let record = record.map_err(|e| CliError::malformed(origin, e.to_string()))?;
            let line = record.position().map_or(0, |p| p.line());
            let row = record
                .iter()
                .enumerate()
                .map(|(k, s)| {
                    parse_number(s).map_err(|e| {
                        CliError::malformed(origin, format!("line {line}, field {}: {e}", k + 1))
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            x0.push(row);
        }
        Ok(Self {
            name: None,
            description: None,
            a,
            b,
            x0,
        })
    }

    /// Reads a `.csv` seed (marginals required) or a JSON problem file
    /// (marginal flags rejected).
    pub fn load(path: &Path, a: Option<&str>, b: Option<&str>) -> Result<Self> {
        let text = read(path)?;
        let is_csv = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("csv"));
        if is_csv {
            let (Some(a), Some(b)) = (a, b) else {
                return Err(CliError::Usage(format!(
                    "{}: CSV input needs both --a and --b",
                    path.display()
                )));
            };
            let a = parse_list(a).map_err(|e| CliError::Usage(format!("--a: {e}")))?;
            let b = parse_list(b).map_err(|e| CliError::Usage(format!("--b: {e}")))?;
            Self::from_csv(&text, a, b, &origin(path))
        } else {
            if a.is_some() || b.is_some() {
                return Err(CliError::Usage(
                    "--a and --b only apply to CSV input".into(),
                ));
            }
            Self::from_json(&text, &origin(path))
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("finite numbers serialize")
    }

    /// Validates the file and builds the problem, naming the first violated
    /// condition.
    pub fn to_problem(&self, origin: &str) -> Result<FittingProblem> {
        let bad = |detail: String| CliError::malformed(origin, detail);
        let (p, q) = (self.a.len(), self.b.len());
        if self.x0.len() != p {
            return Err(bad(format!(
                "X0 has {} rows but a has {p} entries",
                self.x0.len()
            )));
        }
        for (i, row) in self.x0.iter().enumerate() {
            if row.len() != q {
                return Err(bad(format!(
                    "X0 row {} has {} entries but b has {q}",
                    i + 1,
                    row.len()
                )));
            }
            if let Some(j) = row.iter().position(|x| !(x.is_finite() && *x >= 0.0)) {
                return Err(bad(format!(
                    "X0 row {}, column {} is {}; seed entries must be non-negative",
                    i + 1,
                    j + 1,
                    row[j]
                )));
            }
        }
        let x0 = Matrix::from_rows(&self.x0).map_err(|e| bad(format!("X0: {e}")))?;
        let x0 = NonNegMatrix::new(x0).map_err(|e| bad(format!("X0: {}", one_based(&e))))?;
        let a = Marginals::new(self.a.clone()).map_err(|e| bad(format!("a: {e}")))?;
        let b = Marginals::new(self.b.clone()).map_err(|e| bad(format!("b: {e}")))?;
        FittingProblem::new(x0, a, b).map_err(|e| bad(e.to_string()))
    }

    pub fn from_problem(problem: &FittingProblem, name: Option<String>) -> Self {
        Self {
            name,
            description: None,
            a: problem.a().as_slice().to_vec(),
            b: problem.b().as_slice().to_vec(),
            x0: problem.x0().matrix().to_rows(),
        }
    }
}

fn one_based(e: &bipfit_core::Error) -> String {
    use bipfit_core::Error as E;
    match e {
        E::EmptyLine { axis, index } => format!(
            "{axis} {} has no positive entry; every row and column of the seed needs one",
            index + 1
        ),
        E::InvalidEntry { row, col, value } => format!(
            "row {}, column {} is {value}; entries must be finite and non-negative",
            row + 1,
            col + 1
        ),
        other => other.to_string(),
    }
}

/// Support pattern as one `*`/`0` string per row.
pub fn pattern_rows(s: &SupportPattern) -> Vec<String> {
    s.to_rows()
        .iter()
        .map(|row| row.iter().map(|&x| if x { '*' } else { '0' }).collect())
        .collect()
}

pub fn parse_pattern_rows(rows: &[String]) -> bipfit_core::Result<SupportPattern> {
    SupportPattern::parse(&rows.join("\n"))
}

/// Parameterized product families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family")]
pub enum GeneratorSpec {
    /// `M(r_1), M(r_2), ...`; `r` defaults to `r_n = exp(-2^{-n})`
    #[serde(rename = "Mr")]
    Mr {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        len: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        r: Option<Vec<f64>>,
    },
    /// `T1, T0, T1, T0, ...`
    #[serde(rename = "T0T1")]
    T0T1 { len: usize },
    /// averages of random permutation matrices mixed with `gamma I`
    #[serde(rename = "birkhoff")]
    Birkhoff {
        len: usize,
        dim: usize,
        gamma: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        perms: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawSequence {
    Explicit(Vec<Vec<Vec<Num>>>),
    Generator(GeneratorSpec),
}

/// A JSON array of square matrices, or a generator spec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged, try_from = "RawSequence")]
pub enum SequenceFile {
    Explicit(Vec<Vec<Vec<f64>>>),
    Generator(GeneratorSpec),
}

impl TryFrom<RawSequence> for SequenceFile {
    type Error = String;

    fn try_from(raw: RawSequence) -> std::result::Result<Self, String> {
        match raw {
            RawSequence::Generator(g) => Ok(SequenceFile::Generator(g)),
            RawSequence::Explicit(ms) => ms
                .iter()
                .enumerate()
                .map(|(n, m)| {
                    m.iter()
                        .enumerate()
                        .map(|(i, row)| values(row, &format!("[{n}][{i}]")))
                        .collect()
                })
                .collect::<std::result::Result<_, _>>()
                .map(SequenceFile::Explicit),
        }
    }
}

impl SequenceFile {
    pub fn from_json(text: &str, origin: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| CliError::malformed(origin, e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&read(path)?, &origin(path))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("finite numbers serialize")
    }

    /// Builds `M_1, ..., M_N`. `seed` is used by random families without
    /// their own seed.
    pub fn materialize(&self, seed: u64, origin: &str) -> Result<Vec<StochasticMatrix>> {
        let bad = |detail: String| CliError::malformed(origin, detail);
        let ms = match self {
            SequenceFile::Explicit(ms) => ms
                .iter()
                .enumerate()
                .map(|(n, rows)| {
                    let m = Matrix::from_rows(rows)
                        .map_err(|e| bad(format!("matrix {}: {e}", n + 1)))?;
                    if m.rows() != m.cols() {
                        return Err(bad(format!(
                            "matrix {} is {}x{}; factors must be square",
                            n + 1,
                            m.rows(),
                            m.cols()
                        )));
                    }
                    StochasticMatrix::new(m)
                        .map_err(|e| bad(format!("matrix {}: {}", n + 1, one_based_stochastic(&e))))
                })
                .collect::<Result<Vec<_>>>()?,
            SequenceFile::Generator(GeneratorSpec::Mr { len, r }) => {
                let rs = match (len, r) {
                    (_, Some(r)) if len.is_some_and(|n| n != r.len()) => {
                        return Err(bad(format!(
                            "Mr: len = {} but r has {} entries",
                            len.unwrap_or(0),
                            r.len()
                        )))
                    }
                    (_, Some(r)) => r.clone(),
                    (Some(n), None) => default_r_schedule(*n),
                    (None, None) => return Err(bad("Mr: give len or r".into())),
                };
                if let Some(k) = rs.iter().position(|r| !(-1.0..=1.0).contains(r)) {
                    return Err(bad(format!("Mr: r[{k}] = {} is outside [-1, 1]", rs[k])));
                }
                m_of_r_sequence(&rs)
            }
            SequenceFile::Generator(GeneratorSpec::T0T1 { len }) => alternating_t0_t1(*len),
            SequenceFile::Generator(GeneratorSpec::Birkhoff {
                len,
                dim,
                gamma,
                perms,
                seed: own,
            }) => {
                if !(0.0..=1.0).contains(gamma) {
                    return Err(bad(format!("birkhoff: gamma = {gamma} is outside [0, 1]")));
                }
                if *dim == 0 {
                    return Err(bad("birkhoff: dim must be positive".into()));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(own.unwrap_or(seed));
                (0..*len)
                    .map(|_| {
                        random_doubly_stochastic(&mut rng, *dim, perms.unwrap_or(*dim), *gamma)
                    })
                    .collect()
            }
        };
        if ms.is_empty() {
            return Err(bad("empty sequence".into()));
        }
        Ok(ms)
    }
}

fn one_based_stochastic(e: &bipfit_core::Error) -> String {
    match e {
        bipfit_core::Error::NotStochastic { row, sum } => {
            format!("row {} sums to {sum}, expected 1", row + 1)
        }
        other => one_based(other),
    }
}
