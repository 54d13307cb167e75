//! Run artefacts: `metrics.csv`, `histogram.csv`, `usage.csv` and
//! `manifest.json`.
//!
//! Reals are written like C's `%.9g`, lines end in LF, and nothing depends
//! on the locale.

use std::fs;
use std::path::{Path, PathBuf};

use robust_sampling::samplers::{histogram_csv, repetition_histogram};
use robust_sampling::SampleLedger;

use crate::runner::{MetricsRow, RunManifest};
use crate::{io_err, HarnessError};

pub const METRICS_HEADER: &str = "epoch,mean_train_loss,validation_accuracy,robust_risk,wall_seconds";

/// `x` with 9 significant digits in `%.9g` style: fixed notation for
/// exponents in `-4..9`, scientific otherwise, trailing zeros dropped.
pub fn format_sig9(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf" } else { "-inf" }.into();
    }
    if x == 0.0 {
        return if x.is_sign_negative() { "-0" } else { "0" }.into();
    }
    // Rounding to 9 digits first settles the exponent (9.9999999996 → 1e1).
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..9).contains(&exp) {
        let mantissa = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mantissa}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (8 - exp) as usize;
        trim_zeros(&format!("{x:.decimals$}")).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        let risk = r.robust_risk.map(format_sig9).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.epoch,
            format_sig9(r.mean_train_loss),
            format_sig9(r.validation_accuracy),
            risk,
            format_sig9(r.wall_seconds)
        ));
    }
    out
}

/// `sample_id,usage_count,last_loss`; the loss is empty for unused samples.
pub fn usage_csv(ledger: &SampleLedger) -> String {
    let mut out = String::from("sample_id,usage_count,last_loss\n");
    for (id, &count) in ledger.usage_counts().iter().enumerate() {
        let loss = ledger.last_loss(id).map(format_sig9).unwrap_or_default();
        out.push_str(&format!("{id},{count},{loss}\n"));
    }
    out
}

/// Paths of the files [`emit_outputs`] wrote.
#[derive(Debug, Clone)]
pub struct RunOutputs {
    pub metrics: PathBuf,
    pub histogram: PathBuf,
    pub usage: PathBuf,
    pub manifest: PathBuf,
}

pub fn emit_outputs(
    metrics: &[MetricsRow],
    ledger: &SampleLedger,
    manifest: &RunManifest,
    output_dir: &Path,
) -> Result<RunOutputs, HarnessError> {
    fs::create_dir_all(output_dir).map_err(|e| io_err(output_dir, e))?;
    let outputs = RunOutputs {
        metrics: output_dir.join("metrics.csv"),
        histogram: output_dir.join("histogram.csv"),
        usage: output_dir.join("usage.csv"),
        manifest: output_dir.join("manifest.json"),
    };
    let mut manifest_json = serde_json::to_string_pretty(manifest)
        .map_err(|e| HarnessError::Internal(e.to_string()))?;
    manifest_json.push('\n');
    let files = [
        (&outputs.metrics, metrics_csv(metrics)),
        (&outputs.histogram, histogram_csv(&repetition_histogram(ledger))),
        (&outputs.usage, usage_csv(ledger)),
        (&outputs.manifest, manifest_json),
    ];
    for (path, body) in files {
        fs::write(path, body).map_err(|e| io_err(path, e))?;
    }
    Ok(outputs)
}

pub fn read_manifest(run_dir: &Path) -> Result<RunManifest, HarnessError> {
    let path = run_dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
    serde_json::from_str(&text).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))
}

/// Parses a `metrics.csv` written by [`metrics_csv`].
pub fn read_metrics(run_dir: &Path) -> Result<Vec<MetricsRow>, HarnessError> {
    let path = run_dir.join("metrics.csv");
    let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
    let bad = |line: usize, what: &str| {
        HarnessError::Io(format!("{}:{line}: {what}", path.display()))
    };
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_HEADER) {
        return Err(bad(1, "unexpected header"));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(bad(i + 2, "expected 5 fields"));
        }
        let real = |s: &str| s.parse::<f64>().map_err(|_| bad(i + 2, "bad number"));
        rows.push(MetricsRow {
            epoch: f[0].parse().map_err(|_| bad(i + 2, "bad epoch"))?,
            mean_train_loss: real(f[1])?,
            validation_accuracy: real(f[2])?,
            robust_risk: if f[3].is_empty() { None } else { Some(real(f[3])?) },
            wall_seconds: real(f[4])?,
        });
    }
    Ok(rows)
}

/// Reads `usage.csv` back into per-sample usage counts.
pub fn read_usage_counts(run_dir: &Path) -> Result<Vec<u64>, HarnessError> {
    let path = run_dir.join("usage.csv");
    let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
    text.lines()
        .skip(1)
        .enumerate()
        .map(|(i, line)| {
            line.split(',')
                .nth(1)
                .and_then(|c| c.parse().ok())
                .ok_or_else(|| HarnessError::Io(format!("{}:{}: bad row", path.display(), i + 2)))
        })
        .collect()
}
