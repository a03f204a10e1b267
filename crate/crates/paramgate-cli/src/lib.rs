//! Batch runner for paramgate scenario files.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod error;

use std::path::{Path, PathBuf};

use paramgate::noise::{format_budget_table, ErrorBudget};
use rayon::prelude::*;

pub use commands::{execute, Command, RunOutput};
pub use config::ScenarioConfig;
pub use error::{CliError, Result};

/// Output directory name for a config given as a path or a bundled name.
pub fn config_stem(spec: &str) -> String {
    let name = spec.strip_prefix("bundled:").unwrap_or(spec);
    Path::new(name)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| name.to_string())
}

#[derive(Debug)]
pub struct BatchItem {
    pub spec: String,
    pub dir: PathBuf,
    pub output: RunOutput,
}

/// Loads every config, runs them concurrently and writes each result to
/// `out/<stem>`. All configs are parsed before anything runs, so a bad file
/// fails the batch without side effects. `seed` overrides `run.seed`.
pub fn run_batch(command: Command, specs: &[String], seed: Option<u64>, out: &Path) -> Result<Vec<BatchItem>> {
    let configs = specs
        .iter()
        .map(|s| ScenarioConfig::load(s).map(|c| (s.clone(), c)))
        .collect::<Result<Vec<_>>>()?;
    let mut stems: Vec<String> = specs.iter().map(|s| config_stem(s)).collect();
    for i in 0..stems.len() {
        if stems[..i].contains(&stems[i]) {
            stems[i] = format!("{}_{i}", stems[i]);
        }
    }
    let items = configs
        .into_par_iter()
        .zip(stems)
        .map(|((spec, cfg), stem)| {
            let s = seed.unwrap_or(cfg.run.seed);
            log::info!("{command} {spec} (seed {s})");
            let output = execute(command, &cfg, s)?;
            let dir = out.join(stem);
            output.write(&dir)?;
            Ok(BatchItem { spec, dir, output })
        })
        .collect::<Result<Vec<_>>>()?;

    if command == Command::Budget && items.len() > 1 {
        let rows: Vec<(String, ErrorBudget)> = items
            .iter()
            .map(|it| {
                let label = it.output.summary["label"]
                    .as_str()
                    .map(str::to_string)
                    .unwrap_or_else(|| config_stem(&it.spec));
                let b: ErrorBudget =
                    serde_json::from_value(it.output.summary.clone()).expect("budget summary round-trips");
                (label, b)
            })
            .collect();
        let path = out.join("budget_table.txt");
        std::fs::write(&path, format_budget_table(&rows)).map_err(|e| CliError::Write {
            path: path.display().to_string(),
            source: e,
        })?;
    }
    Ok(items)
}
