use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::Context;
use eigendist_core::{Error, Matrix, Tolerances};
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

pub const REPORT_SCHEMA_VERSION: &str = "1.0.0";

pub fn report_schema_version() -> &'static str {
    REPORT_SCHEMA_VERSION
}

/// Why a command failed; selects the exit code.
#[derive(Debug)]
pub enum Failure {
    Validation(anyhow::Error),
    NonConvergence(anyhow::Error),
    Internal(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Validation(_) => 2,
            Self::NonConvergence(_) => 3,
            Self::Internal(_) => 1,
        }
    }

    pub fn error(&self) -> &anyhow::Error {
        match self {
            Self::Validation(e) | Self::NonConvergence(e) | Self::Internal(e) => e,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match classify(&e) {
            2 => Self::Validation(e.into()),
            3 => Self::NonConvergence(e.into()),
            _ => Self::Internal(e.into()),
        }
    }
}

fn classify(e: &Error) -> i32 {
    use Error::*;
    match e {
        NotSquare { .. }
        | Empty
        | DimensionMismatch { .. }
        | NonFinite { .. }
        | NegativeEntry { .. }
        | RowSumViolation { .. }
        | AsymmetryError { .. }
        | NonzeroDiagonal { .. }
        | TriangleViolation { .. }
        | InvalidTolerances(_)
        | InvalidInstance(_)
        | InvalidExponent(_)
        | DegenerateInput(_)
        | ReferenceNotContracted { .. }
        | NotAnEigenfunction { .. }
        | NegativeEigenfunction
        | InvalidPartition(_)
        | NotLumpable
        | BudgetExceeded { .. }
        | ParameterRange(_)
        | OddTorus(_)
        | SizeCap(_)
        | UnreachableAbsorber(_)
        | ZeroSetViolation { .. }
        | DivergentTail { .. }
        | Json(_) => 2,
        NotConverged | DegenerateLimit { .. } | NumericalFailure { .. } => 3,
        PairSolve { source, .. } => classify(source),
        _ => 1,
    }
}

pub fn validation(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Validation(e.into())
}

/// An input file with the hash of its bytes.
pub struct Input {
    pub text: String,
    pub sha256: String,
}

pub fn read_input(path: &Path) -> Result<Input, Failure> {
    let bytes = std::fs::read(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(Failure::Validation)?;
    let sha256 = hex::encode(Sha256::digest(&bytes));
    let text = String::from_utf8(bytes)
        .with_context(|| format!("{} is not UTF-8", path.display()))
        .map_err(Failure::Validation)?;
    Ok(Input { text, sha256 })
}

/// Envelope shared by every report.
#[derive(Debug, Serialize)]
pub struct Report {
    pub report_schema_version: &'static str,
    pub command: &'static str,
    /// Role to SHA-256 of the input file.
    pub inputs: BTreeMap<&'static str, String>,
    pub parameters: Value,
    pub tolerances: Tolerances,
    pub result: Value,
}

/// What a command produced: the JSON report, its TSV rendering, and whether
/// the computation reached its stopping criterion.
pub struct Output {
    pub json: Value,
    pub tsv: String,
    pub converged: bool,
}

pub fn matrix_tsv(m: &Matrix) -> String {
    let mut out = String::new();
    for i in 0..m.rows() {
        let row: Vec<String> = m.row(i).iter().map(|v| v.to_string()).collect();
        out.push_str(&row.join("\t"));
        out.push('\n');
    }
    out
}

pub fn columns_tsv(header: &[&str], columns: &[&[f64]]) -> String {
    let mut out = header.join("\t");
    out.push('\n');
    let len = columns.first().map_or(0, |c| c.len());
    for i in 0..len {
        let row: Vec<String> = columns.iter().map(|c| c[i].to_string()).collect();
        let _ = writeln!(out, "{}", row.join("\t"));
    }
    out
}

pub fn write_output(text: &str, out: Option<&PathBuf>) -> Result<(), Failure> {
    match out {
        Some(path) => std::fs::write(path, text)
            .with_context(|| format!("writing {}", path.display()))
            .map_err(Failure::Internal),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}
