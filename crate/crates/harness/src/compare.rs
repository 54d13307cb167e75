//! Side-by-side comparison of finished runs against a baseline.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use robust_sampling::SchedulerKind;

use crate::output::{format_sig9, read_manifest, read_metrics};
use crate::runner::{MetricsRow, RunManifest};
use crate::HarnessError;

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub run_dir: PathBuf,
    pub label: String,
    pub final_accuracy: f64,
    /// `final_accuracy − baseline accuracy`.
    pub delta: f64,
    pub beats_baseline: bool,
    pub median_epoch_seconds: f64,
    /// Median epoch time relative to the baseline's.
    pub wall_ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonTable {
    pub baseline_label: String,
    pub baseline_accuracy: f64,
    pub rows: Vec<ComparisonRow>,
    curves: Vec<(String, Vec<MetricsRow>)>,
}

/// Loads each run directory and compares it with the first baseline run.
///
/// All runs must share dataset and training-set size.
pub fn compare_runs<P: AsRef<Path>>(run_dirs: &[P]) -> Result<ComparisonTable, HarnessError> {
    if run_dirs.len() < 2 {
        return Err(HarnessError::Usage(format!(
            "compare needs at least 2 runs, got {}",
            run_dirs.len()
        )));
    }
    let mut runs: Vec<(PathBuf, RunManifest, Vec<MetricsRow>)> = Vec::new();
    for dir in run_dirs {
        let dir = dir.as_ref();
        runs.push((dir.to_path_buf(), read_manifest(dir)?, read_metrics(dir)?));
    }

    let first = &runs[0].1.config;
    let mut differing = Vec::new();
    for (dir, m, _) in &runs[1..] {
        if m.config.dataset != first.dataset {
            differing.push(format!(
                "dataset ({} vs {} in {})",
                first.dataset,
                m.config.dataset,
                dir.display()
            ));
        }
        if m.config.train_size != first.train_size {
            differing.push(format!(
                "train_size ({} vs {} in {})",
                first.train_size,
                m.config.train_size,
                dir.display()
            ));
        }
    }
    if !differing.is_empty() {
        return Err(HarnessError::Incompatible(differing.join("; ")));
    }

    let (_, base, base_metrics) = runs
        .iter()
        .find(|(_, m, _)| m.config.scheduler == SchedulerKind::Baseline)
        .ok_or_else(|| HarnessError::Usage("no baseline run among the inputs".into()))?;
    let baseline_accuracy = base.final_accuracy;
    let baseline_label = base.label.clone();
    let base_wall = median_epoch_seconds(base_metrics);

    let rows = runs
        .iter()
        .map(|(dir, m, metrics)| {
            let median = median_epoch_seconds(metrics);
            let delta = m.final_accuracy - baseline_accuracy;
            ComparisonRow {
                run_dir: dir.clone(),
                label: m.label.clone(),
                final_accuracy: m.final_accuracy,
                delta,
                beats_baseline: delta > 0.0,
                median_epoch_seconds: median,
                wall_ratio: median / base_wall,
            }
        })
        .collect();
    let curves = runs
        .into_iter()
        .map(|(dir, m, metrics)| (curve_name(&dir, &m), metrics))
        .collect();
    Ok(ComparisonTable {
        baseline_label,
        baseline_accuracy,
        rows,
        curves,
    })
}

fn curve_name(dir: &Path, m: &RunManifest) -> String {
    dir.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| m.label.clone())
}

fn median_epoch_seconds(metrics: &[MetricsRow]) -> f64 {
    let mut t: Vec<f64> = metrics.iter().map(|m| m.wall_seconds).collect();
    if t.is_empty() {
        return f64::NAN;
    }
    t.sort_by(f64::total_cmp);
    let mid = t.len() / 2;
    if t.len() % 2 == 1 {
        t[mid]
    } else {
        0.5 * (t[mid - 1] + t[mid])
    }
}

impl ComparisonTable {
    /// `label,final_accuracy,baseline_accuracy,delta,beats_baseline,
    /// median_epoch_seconds,wall_ratio`, one row per run in input order.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "label,final_accuracy,baseline_accuracy,delta,beats_baseline,median_epoch_seconds,wall_ratio\n",
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.label,
                format_sig9(r.final_accuracy),
                format_sig9(self.baseline_accuracy),
                format_sig9(r.delta),
                r.beats_baseline,
                format_sig9(r.median_epoch_seconds),
                format_sig9(r.wall_ratio)
            );
        }
        out
    }

    /// Per-epoch loss and accuracy of every run in long format, for
    /// plotting training curves.
    pub fn curves_csv(&self) -> String {
        let mut out = String::from("run,epoch,mean_train_loss,validation_accuracy\n");
        for (name, metrics) in &self.curves {
            for m in metrics {
                let _ = writeln!(
                    out,
                    "{name},{},{},{}",
                    m.epoch,
                    format_sig9(m.mean_train_loss),
                    format_sig9(m.validation_accuracy)
                );
            }
        }
        out
    }

    /// Fixed-width text table; rows that beat the baseline are starred.
    pub fn render(&self) -> String {
        let width = self.rows.iter().map(|r| r.label.len()).max().unwrap_or(5).max(9);
        let mut out = format!(
            "{:<width$}  {:>9}  {:>9}  {:>9}  {:>6}\n",
            "scheduler", "accuracy", "baseline", "delta", "time×"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<width$}  {:>9.4}  {:>9.4}  {:>+9.4}  {:>6.3}{}",
                r.label,
                r.final_accuracy,
                self.baseline_accuracy,
                r.delta,
                r.wall_ratio,
                if r.beats_baseline { "  *" } else { "" }
            );
        }
        out
    }

    pub fn write(&self, dir: &Path) -> Result<(), HarnessError> {
        std::fs::create_dir_all(dir).map_err(|e| crate::io_err(dir, e))?;
        for (name, body) in [
            ("comparison.csv", self.to_csv()),
            ("curves.csv", self.curves_csv()),
        ] {
            let path = dir.join(name);
            std::fs::write(&path, body).map_err(|e| crate::io_err(&path, e))?;
        }
        Ok(())
    }
}
