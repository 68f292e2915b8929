//! File formats, reports and commands behind the `bipfit` binary.

pub mod app;
pub mod error;
pub mod format;
pub mod report;

pub use app::{execute, resolve_seed, Cli, Command, Outcome};
pub use error::{CliError, Result};
pub use format::{ProblemFile, SequenceFile};
pub use report::AnalysisReport;
