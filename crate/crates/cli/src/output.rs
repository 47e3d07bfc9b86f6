//! Run directories: manifest, metrics, trace stream and genotype.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use lbt_core::data::TaskSpec;
use lbt_core::engine::{run_search_with, ObjectiveMode, RunMetrics};
use lbt_core::model::GenotypeDocument;
use serde::{Deserialize, Serialize};

use crate::config::{CsvPaths, FlatConfig, RunConfig};
use crate::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const METRICS_FILE: &str = "metrics.json";
pub const TRACE_FILE: &str = "trace.jsonl";
pub const GENOTYPE_FILE: &str = "genotype.json";

/// Everything needed, with the same code version, to reproduce a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub tool_version: String,
    pub command: String,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub task: Option<TaskSpec>,
    pub data_paths: Option<CsvPaths>,
    pub config: FlatConfig,
}

impl RunManifest {
    pub fn new(command: &str, cfg: &RunConfig, out_dir: &Path) -> Self {
        let task = cfg.task_spec();
        RunManifest {
            tool: env!("CARGO_PKG_NAME").to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            seed: cfg.seed,
            out_dir: out_dir.to_path_buf(),
            data_paths: task.is_none().then(|| cfg.data.csv.clone()),
            task,
            config: cfg.to_flat(),
        }
    }
}

/// Final numbers of one search run, as written to `metrics.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub objective: ObjectiveMode,
    #[serde(flatten)]
    pub metrics: RunMetrics,
    /// Selected op per edge.
    pub genotype: Vec<String>,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Other(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(CliError::io(format!("writing {}", path.display())))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(CliError::io(format!("reading {}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Other(format!("{}: {e}", path.display())))
}

pub fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(CliError::io(format!("creating {}", dir.display())))
}

/// One search run into `dir`. The trace is streamed, so a diverged run
/// still leaves every completed iteration on disk.
pub fn run_search_dir(cfg: &RunConfig, command: &str, dir: &Path) -> Result<RunRecord, CliError> {
    create_dir(dir)?;
    write_json(&dir.join(MANIFEST_FILE), &RunManifest::new(command, cfg, dir))?;
    let bundle = cfg.bundle()?;
    let models = cfg.models(&bundle)?;

    let trace_path = dir.join(TRACE_FILE);
    let file = File::create(&trace_path).map_err(CliError::io(format!("creating {}", trace_path.display())))?;
    let mut writer = BufWriter::new(file);
    let mut write_error = None;
    let result = run_search_with(&models, &cfg.search, &bundle, |trace| {
        if write_error.is_some() {
            return;
        }
        let line = serde_json::to_string(trace).expect("trace serializes");
        if let Err(e) = writeln!(writer, "{line}") {
            write_error = Some(e);
        }
    });
    let flushed = writer.flush();
    if let Some(e) = write_error {
        return Err(CliError::io(format!("writing {}", trace_path.display()))(e));
    }
    flushed.map_err(CliError::io(format!("writing {}", trace_path.display())))?;
    let outcome = result?;

    write_json(&dir.join(GENOTYPE_FILE), &GenotypeDocument::new(&outcome.arch))?;
    let record = RunRecord {
        seed: cfg.seed,
        objective: cfg.search.objective,
        metrics: outcome.metrics,
        genotype: outcome.genotype.edges.iter().map(|e| e.op.name().to_string()).collect(),
    };
    write_json(&dir.join(METRICS_FILE), &record)?;
    Ok(record)
}

/// Mean and sample standard deviation (`n - 1`; 0 for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_std_small_cases() {
        assert_eq!(mean_std(&[2.0]), (2.0, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert!(mean_std(&[]).0.is_nan());
    }
}
