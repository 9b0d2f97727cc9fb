//! Batch front end: config ingestion, experiment orchestration, artifact
//! emission. The binary maps outcomes to exit codes so CI can gate on
//! theorem checks:
//!
//! - 0: success
//! - 2: validation error (config, parameters, capabilities)
//! - 3: numerical failure (blow-up, stability refusal, divergence sentinel)
//! - 4: an inequality check failed beyond tolerance

pub mod config;
pub mod pipelines;

use config::{Command, ExperimentConfig};
use luq_core::error::LuqError;
use pipelines::{run_pipeline, PipelineOutcome};
use std::path::Path;

/// Exit codes of the `luq` binary.
pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_INEQUALITY: i32 = 4;

pub fn exit_code_for(err: &LuqError) -> i32 {
    match err {
        LuqError::GridMismatch(_)
        | LuqError::Capability(_)
        | LuqError::InvalidParameter(_)
        | LuqError::OutOfRange(_)
        | LuqError::InsufficientData(_) => EXIT_VALIDATION,
        LuqError::InfiniteDivergence(_) | LuqError::Stability { .. } | LuqError::NonFinite(_) => {
            EXIT_NUMERICAL
        }
    }
}

/// Load the config, apply overrides, and run one pipeline. Returns the exit
/// code the process should report.
pub fn run(
    command: Command,
    config_path: &Path,
    seed_override: Option<u64>,
    out_override: Option<&Path>,
    workers: Option<usize>,
) -> i32 {
    let mut config = match ExperimentConfig::from_path(config_path) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("luq: {e}");
            return EXIT_VALIDATION;
        }
    };
    if let Some(seed) = seed_override {
        config.run.seed = seed;
    }
    let out_dir = out_override
        .map(|p| p.to_path_buf())
        .unwrap_or_else(|| Path::new(&config.output.dir).to_path_buf());

    let workers = workers.or_else(|| {
        std::env::var("LUQ_WORKERS")
            .ok()
            .and_then(|v| v.parse().ok())
    });
    let result = match workers {
        Some(k) if k > 0 => {
            let pool = match rayon::ThreadPoolBuilder::new().num_threads(k).build() {
                Ok(p) => p,
                Err(e) => {
                    eprintln!("luq: cannot build worker pool: {e}");
                    return EXIT_VALIDATION;
                }
            };
            pool.install(|| run_pipeline(command, &config, &out_dir))
        }
        _ => run_pipeline(command, &config, &out_dir),
    };

    match result {
        Ok(PipelineOutcome {
            files,
            inequality_ok,
        }) => {
            for f in &files {
                println!("wrote {}", f.display());
            }
            if inequality_ok == Some(false) {
                eprintln!("luq: inequality check failed beyond tolerance");
                EXIT_INEQUALITY
            } else {
                EXIT_OK
            }
        }
        Err(e) => {
            eprintln!("luq: {e}");
            exit_code_for(&e)
        }
    }
}
