use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::{CliError, ExperimentConfig};
use crate::train::{ResultRow, TrialSummary};

pub const VERSION: &str = env!("LSDAN_VERSION");

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(io_err(path))
}

/// Writes through a temporary sibling so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        create_dir(parent)?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    version: &'a str,
    command: &'a str,
    config: &'a ExperimentConfig,
    #[serde(flatten)]
    body: T,
}

/// JSON document carrying the version string and resolved config next to
/// `body`'s own fields.
pub fn write_json<T: Serialize>(
    path: &Path,
    command: &str,
    config: &ExperimentConfig,
    body: T,
) -> Result<(), CliError> {
    let doc = Envelope {
        version: VERSION,
        command,
        config,
        body,
    };
    let text = serde_json::to_string_pretty(&doc).map_err(|e| CliError::Output(e.to_string()))?;
    write_atomic(path, text.as_bytes())
}

/// Aggregate CSV. Leading `#` lines hold the version and the resolved config.
pub fn write_csv(path: &Path, config: &ExperimentConfig, rows: &[ResultRow]) -> Result<(), CliError> {
    let mut buf = Vec::new();
    let config_json = serde_json::to_string(config).map_err(|e| CliError::Output(e.to_string()))?;
    writeln!(buf, "# version: {VERSION}").expect("in-memory write");
    writeln!(buf, "# config: {config_json}").expect("in-memory write");
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        for row in rows {
            w.serialize(row).map_err(|e| CliError::Output(e.to_string()))?;
        }
        w.flush().map_err(|e| CliError::Output(e.to_string()))?;
    }
    write_atomic(path, &buf)
}

/// Per-trial reports of `summary` as `<dir>/<label>-seed<N>.json`.
pub fn write_trials(
    dir: &Path,
    label: &str,
    command: &str,
    config: &ExperimentConfig,
    summary: &TrialSummary,
) -> Result<(), CliError> {
    #[derive(Serialize)]
    struct Trial<'a> {
        dataset: &'a str,
        objective: &'a str,
        p: f64,
        kappa: usize,
        layers: usize,
        dim: usize,
        report: &'a crate::train::TrialReport,
    }
    for report in &summary.reports {
        let path = dir.join(format!("{label}-seed{}.json", report.seed));
        let body = Trial {
            dataset: &config.dataset,
            objective: summary.objective.name(),
            p: summary.p,
            kappa: summary.net.kappa,
            layers: summary.net.layers,
            dim: summary.net.hidden_dim,
            report,
        };
        write_json(&path, command, config, body)?;
    }
    Ok(())
}

pub fn cell(summary: &TrialSummary) -> String {
    if summary.reports.is_empty() {
        return "failed".into();
    }
    format!("{:.3} ± {:.3}", summary.mean_f1, summary.std_f1)
}

pub fn percent(p: f64) -> String {
    format!("{}%", (p * 1000.0).round() / 10.0)
}

/// Left-aligned plain-text table.
pub fn render_table(title: &str, header: &[String], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |cells: &[String]| {
        let padded: Vec<String> = cells
            .iter()
            .zip(&widths)
            .map(|(c, &w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
            .collect();
        padded.join("  ").trim_end().to_string()
    };
    let mut out = format!("{title}\n{}\n", line(header));
    out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * widths.len().saturating_sub(1)));
    out.push('\n');
    for row in rows {
        out.push_str(&line(row));
        out.push('\n');
    }
    out
}

/// Output locations of one command: `<out>/<dataset>/<command>/`.
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(config: &ExperimentConfig, command: &str) -> Result<Self, CliError> {
        let root = config.out_dir.join(&config.dataset).join(command);
        create_dir(&root)?;
        Ok(RunDir { root })
    }

    pub fn csv(&self) -> PathBuf {
        self.root.join("results.csv")
    }

    pub fn json(&self) -> PathBuf {
        self.root.join("results.json")
    }

    pub fn summary(&self) -> PathBuf {
        self.root.join("summary.txt")
    }

    pub fn trials(&self) -> PathBuf {
        self.root.join("trials")
    }
}
