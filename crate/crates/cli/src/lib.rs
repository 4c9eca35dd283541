//! Experiment runner: reads a JSON configuration, runs one pipeline and
//! writes `data/*.csv`, `summary.json` and `manifest.json`.

pub mod config;
pub mod experiments;
pub mod table;

use serde_json::json;
use sha2::{Digest, Sha256};
use std::fs;
use std::path::Path;
use thiserror::Error;

pub const EXIT_PASS: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Schema(#[from] config::SchemaError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("thread pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Schema(_) => EXIT_USAGE,
            RunError::Io(_) | RunError::Pool(_) => EXIT_USAGE,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub threads: Option<usize>,
    pub seed_override: Option<u64>,
    /// Suppresses the per-check lines on stdout.
    pub quiet: bool,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Runs the experiment in `config_path`, writes its artifacts under
/// `out_dir` and returns the process exit code.
pub fn run_experiment(config_path: &Path, out_dir: &Path, opts: &RunOptions) -> Result<i32, RunError> {
    let text = fs::read(config_path)?;
    let mut cfg = config::parse(std::str::from_utf8(&text).map_err(|e| config::SchemaError::Invalid(e.to_string()))?)?;
    if let (Some(seed), Some(run)) = (opts.seed_override, cfg.run.as_mut()) {
        run.seed = seed;
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = opts.threads {
        builder = builder.num_threads(n);
    }
    let pool = builder.build()?;
    let outcome = pool.install(|| experiments::dispatch(&cfg));

    let data = out_dir.join("data");
    fs::create_dir_all(&data)?;
    let (outcome, error) = match outcome {
        Ok(o) => (o, None),
        Err(e) => {
            let mut o = experiments::Outcome::default();
            o.checks.push(nbplab::stats::TestReport::failed("pipeline", &e));
            (o, Some(e))
        }
    };
    let mut files = Vec::new();
    for (name, table) in &outcome.tables {
        let csv = table.to_csv();
        let rel = format!("data/{name}.csv");
        fs::write(out_dir.join(&rel), csv.as_bytes())?;
        files.push(json!({"path": rel, "sha256": hex(&Sha256::digest(csv.as_bytes())), "rows": table.len()}));
    }
    let pass = outcome.pass();
    let summary = json!({
        "kind": cfg.kind.name(),
        "pass": pass,
        "error": error,
        "checks": outcome.checks,
        "hypotheses": outcome.hypotheses,
        "values": outcome.values,
    });
    fs::write(out_dir.join("summary.json"), serde_json::to_string_pretty(&summary).expect("serialisable") + "\n")?;
    let timestamp = std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let manifest = json!({
        "config": config_path.display().to_string(),
        "config_sha256": hex(&Sha256::digest(&text)),
        "seed": cfg.run.as_ref().map(|r| r.seed),
        "seed_override": opts.seed_override,
        "threads": opts.threads,
        "timestamp_unix": timestamp,
        "files": files,
    });
    fs::write(out_dir.join("manifest.json"), serde_json::to_string_pretty(&manifest).expect("serialisable") + "\n")?;
    if !opts.quiet {
        for c in &outcome.checks {
            println!("{}", c.line());
        }
    }
    Ok(if pass { EXIT_PASS } else { EXIT_CHECK_FAILED })
}
