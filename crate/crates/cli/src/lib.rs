//! Command-line front end: dataset synthesis, haze application,
//! pseudo-physics and dehazer training, inference, evaluation, equivariance
//! audits and ablation matrices.

pub mod ablation;
pub mod commands;
pub mod config;

pub use commands::{run, Cli, Command};
pub use config::{AblationConfig, RunConfig};

use eid_core::Error;

/// Exit status for a failed run: 1 for invalid input, 2 for runtime failures.
pub fn exit_code(e: &Error) -> i32 {
    if e.is_validation() {
        1
    } else {
        2
    }
}

/// Error text with configuration keys spelled as their flags.
pub fn describe(e: &Error) -> String {
    match e {
        Error::InvalidConfig { key, value, reason } => {
            let flag = match key.as_str() {
                "base_lr" => "lr".to_string(),
                "lambda_ec" => "lambda".to_string(),
                k => k.replace('_', "-"),
            };
            format!("invalid value for --{flag}: {value}: {reason}")
        }
        other => other.to_string(),
    }
}

/// Worker threads allowed by `EID_THREADS`, else the available parallelism.
pub fn threads() -> usize {
    std::env::var("EID_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}
