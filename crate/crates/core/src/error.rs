use std::path::PathBuf;

use crate::so3::DegenerateQuaternion;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    DegenerateQuaternion(#[from] DegenerateQuaternion),
    #[error("input has {got} components but the {variant} model expects {expected}")]
    VariantMismatch { variant: &'static str, expected: usize, got: usize },
    #[error("non-finite value produced while integrating")]
    NonFiniteState,
    #[error("QP infeasible: {0}")]
    QpInfeasible(String),
    #[error("QP solver stopped after {0} iterations")]
    MaxIterations(usize),
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("free-fall singularity at sample {index}: |a - g| = {margin:.3e} m/s^2")]
    FreeFallSingularity { index: usize, margin: f64 },
    #[error("parse error at row {row}, column {column}: {message}")]
    Parse { row: usize, column: String, message: String },
    #[error("log covers [{log_start}, {log_end}] s but [{need_start}, {need_end}] s is required")]
    DurationMismatch { log_start: f64, log_end: f64, need_start: f64, need_end: f64 },
    #[error("vehicle diverged at t = {t:.3} s")]
    DivergedState { t: f64 },
    #[error("config error in {path}: {message}")]
    Config { path: PathBuf, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
