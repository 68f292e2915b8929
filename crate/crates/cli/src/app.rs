use std::fs;
use std::path::{Path, PathBuf};

use bipfit_core::{Certificate, StoppingRule, DEFAULT_SEED};
use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{CliError, Result};
use crate::format::{pattern_rows, ProblemFile, SequenceFile};
use crate::report::{self, AnalysisReport, CauseReport, ProductsConfig};

#[derive(Debug, Parser)]
#[command(
    name = "bipfit",
    version,
    about = "Biproportional fitting with structural diagnosis"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ProblemArgs {
    /// JSON problem file, or a CSV seed matrix together with --a and --b
    pub problem: PathBuf,
    /// row marginals for CSV input, comma-separated (decimals or p/q)
    #[arg(long)]
    pub a: Option<String>,
    /// column marginals for CSV input
    #[arg(long)]
    pub b: Option<String>,
}

#[derive(Debug, Args)]
pub struct RuleArgs {
    /// stop when the L1 marginal error drops below this
    #[arg(long, default_value_t = StoppingRule::default().tol_marginal)]
    pub tol: f64,
    /// stop when both parities move less than this between visits
    #[arg(long, default_value_t = StoppingRule::default().tol_even_odd)]
    pub tol_even_odd: f64,
    #[arg(long, default_value_t = StoppingRule::default().max_iters)]
    pub max_iters: usize,
}

impl RuleArgs {
    fn rule(&self) -> Result<StoppingRule> {
        StoppingRule::new(self.tol, self.tol_even_odd, self.max_iters)
            .map_err(|e| CliError::Usage(e.to_string()))
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print FastConvergence, SlowConvergence or Divergence with a certificate
    Classify {
        #[command(flatten)]
        input: ProblemArgs,
        /// print the classification as JSON
        #[arg(long)]
        json: bool,
    },
    /// Run the iteration and print the final matrix (or even/odd pair)
    Fit {
        #[command(flatten)]
        input: ProblemArgs,
        #[command(flatten)]
        rule: RuleArgs,
        /// write the error and ratio history here
        #[arg(long)]
        trace_out: Option<PathBuf>,
    },
    /// Full structural analysis as JSON
    Analyze {
        #[command(flatten)]
        input: ProblemArgs,
        #[command(flatten)]
        rule: RuleArgs,
    },
    /// Emit the reduced problem: seed zeroed outside sigma, marginals (a', b)
    Reduce {
        #[command(flatten)]
        input: ProblemArgs,
        /// write here instead of stdout
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Check the product theorems on a matrix sequence
    Products {
        /// JSON array of matrices, or a generator spec
        sequence: PathBuf,
        /// number of random vectors to track through the products
        #[arg(long, default_value_t = 3)]
        vectors: usize,
        /// seed for random generators and tracked vectors (default: BIPFIT_SEED, then a fixed seed)
        #[arg(long)]
        seed: Option<u64>,
        /// Cauchy tolerance on the tail variation
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
    },
}

/// What a command prints and the exit code it ends with.
#[derive(Debug)]
pub struct Outcome {
    pub stdout: String,
    pub code: u8,
}

impl Outcome {
    fn ok(stdout: String) -> Self {
        Self { stdout, code: 0 }
    }
}

/// `--seed`, else `BIPFIT_SEED` (decimal or `0x` hex), else the default.
pub fn resolve_seed(flag: Option<u64>, env: Option<&str>) -> Result<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match env {
        None => Ok(DEFAULT_SEED),
        Some(text) => {
            let text = text.trim();
            let parsed = match text.strip_prefix("0x").or_else(|| text.strip_prefix("0X")) {
                Some(hex) => u64::from_str_radix(&hex.replace('_', ""), 16),
                None => text.replace('_', "").parse(),
            };
            parsed.map_err(|_| CliError::Usage(format!("BIPFIT_SEED={text:?} is not an integer")))
        }
    }
}

fn load(args: &ProblemArgs) -> Result<(ProblemFile, bipfit_core::FittingProblem)> {
    let file = ProblemFile::load(&args.problem, args.a.as_deref(), args.b.as_deref())?;
    let problem = file.to_problem(&args.problem.display().to_string())?;
    Ok((file, problem))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|source| CliError::Io {
        path: path.to_owned(),
        source,
    })
}

fn json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("report serializes") + "\n"
}

fn set(v: &[usize]) -> String {
    let items: Vec<String> = v.iter().map(|k| k.to_string()).collect();
    format!("{{{}}}", items.join(","))
}

pub fn execute(cli: Cli, env_seed: Option<&str>) -> Result<Outcome> {
    match cli.command {
        Command::Classify {
            input,
            json: as_json,
        } => {
            let (_, problem) = load(&input)?;
            let c = bipfit_core::classify(&problem)?;
            if as_json {
                let certificate = match &c.certificate {
                    Certificate::Feasible {
                        matrix,
                        maximal_support,
                    } => report::CertificateReport::Feasible {
                        witness: matrix.to_rows(),
                        maximal_support: pattern_rows(maximal_support),
                    },
                    Certificate::Incompatible(cause) => report::CertificateReport::Incompatible {
                        cause: cause.into(),
                    },
                };
                return Ok(Outcome::ok(json(&report::ClassificationReport {
                    behavior: c.behavior.to_string(),
                    certificate,
                })));
            }
            let mut out = format!("{}\n", c.behavior);
            match &c.certificate {
                Certificate::Feasible {
                    matrix,
                    maximal_support,
                } => {
                    out.push_str("maximal support:\n");
                    for row in pattern_rows(maximal_support) {
                        out.push_str(&format!("  {row}\n"));
                    }
                    out.push_str("feasible matrix:\n");
                    for row in matrix.to_rows() {
                        let cells: Vec<String> = row.iter().map(|x| format!("{x:.6}")).collect();
                        out.push_str(&format!("  {}\n", cells.join(" ")));
                    }
                }
                Certificate::Incompatible(cause) => {
                    let c = CauseReport::from(cause);
                    out.push_str(&format!(
                        "incompatibility cause: A = {}, B = {}, a(A)/b(B^c) = {}\n",
                        set(&c.rows),
                        set(&c.cols),
                        c.ratio
                    ));
                }
            }
            Ok(Outcome::ok(out))
        }
        Command::Fit {
            input,
            rule,
            trace_out,
        } => {
            let (file, problem) = load(&input)?;
            let (report, history) = report::fit(&file, &problem, rule.rule()?);
            if let Some(path) = trace_out {
                write(&path, &json(&history))?;
            }
            Ok(Outcome::ok(json(&report)))
        }
        Command::Analyze { input, rule } => {
            let (file, problem) = load(&input)?;
            let report = AnalysisReport::build(&file, &problem, rule.rule()?)?;
            Ok(Outcome::ok(json(&report)))
        }
        Command::Reduce { input, output } => {
            let (file, problem) = load(&input)?;
            let text = report::reduced_file(&file, &problem)?.to_json() + "\n";
            match output {
                Some(path) => {
                    write(&path, &text)?;
                    Ok(Outcome::ok(String::new()))
                }
                None => Ok(Outcome::ok(text)),
            }
        }
        Command::Products {
            sequence,
            vectors,
            seed,
            tol,
        } => {
            if tol.is_nan() || tol <= 0.0 {
                return Err(CliError::Usage(format!(
                    "--tol must be positive, got {tol}"
                )));
            }
            let seed = resolve_seed(seed, env_seed)?;
            let source = SequenceFile::load(&sequence)?;
            let ms = source.materialize(seed, &sequence.display().to_string())?;
            // a separate stream, so the tracked vectors do not shift the factors
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7ac6_ed00);
            let d = ms[0].dim();
            let tracked: Vec<Vec<f64>> = (0..vectors)
                .map(|_| (0..d).map(|_| rng.gen::<f64>()).collect())
                .collect();
            let config = ProductsConfig { seed, vectors, tol };
            let report = report::products(&source, &ms, &tracked, config)?;
            Ok(Outcome {
                code: if report.violated() { 3 } else { 0 },
                stdout: json(&report),
            })
        }
    }
}
