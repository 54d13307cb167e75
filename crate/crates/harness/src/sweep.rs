//! Several configs that differ only in scheduler, run against one dataset.
//!
//! Every run keeps the base seed, so all of them see the same split,
//! initial weights and dropout stream and differ only in the batches the
//! scheduler builds. With the `parallel` feature the runs execute
//! concurrently; each run is itself sequential and writes its own
//! directory, so results do not depend on the thread count (wall times do).

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use robust_sampling::SchedulerKind;

use crate::config::{parse_scheduler_token, ExperimentConfig};
use crate::output::emit_outputs;
use crate::runner::{prepare_data, run_prepared, RunManifest};
use crate::HarnessError;

/// The scheduler rows of the standard results table, baseline first.
pub const TABLE_ROWS: [&str; 13] = [
    "baseline", "vr-m-5", "vr-m-10", "vr-m-15", "vr-m-20", "pvr-m-10", "pvr-m-20", "pvr-m-30",
    "pvr-m-40", "vr-e-10", "vr-e-20", "pvr-e-20", "pvr-e-40",
];

/// One config per scheduler token, each writing to `root/<label>`.
pub fn sweep_configs(
    base: &ExperimentConfig,
    tokens: &[&str],
    root: &Path,
) -> Result<Vec<ExperimentConfig>, HarnessError> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(tokens.len());
    for token in tokens {
        let (kind, eps) = parse_scheduler_token(token)?;
        let mut cfg = base.clone();
        cfg.scheduler = kind;
        cfg.epsilon = eps.unwrap_or(if kind == SchedulerKind::Baseline { 0.0 } else { base.epsilon });
        cfg.output_dir = root.join(cfg.label());
        cfg.validate()?;
        if !seen.insert(cfg.label()) {
            return Err(HarnessError::Usage(format!("scheduler '{token}' listed twice")));
        }
        out.push(cfg);
    }
    Ok(out)
}

/// Runs every config (data prepared once) and writes each run's outputs.
/// Returns the run directories and manifests in input order.
pub fn run_sweep(
    configs: &[ExperimentConfig],
    concurrent: bool,
) -> Result<Vec<(PathBuf, RunManifest)>, HarnessError> {
    let Some(first) = configs.first() else {
        return Ok(Vec::new());
    };
    let data = prepare_data(first)?;
    let one = |cfg: &ExperimentConfig| -> Result<(PathBuf, RunManifest), HarnessError> {
        let same_data = cfg.dataset == first.dataset
            && cfg.mnist_dir == first.mnist_dir
            && cfg.synthetic == first.synthetic
            && cfg.gcn == first.gcn
            && cfg.train_size == first.train_size
            && cfg.seed == first.seed;
        let result = if same_data {
            run_prepared(cfg, &data)?
        } else {
            run_prepared(cfg, &prepare_data(cfg)?)?
        };
        emit_outputs(&result.metrics, &result.ledger, &result.manifest, &cfg.output_dir)?;
        Ok((cfg.output_dir.clone(), result.manifest))
    };
    if concurrent {
        run_all_concurrent(configs, one)
    } else {
        configs.iter().map(one).collect()
    }
}

#[cfg(feature = "parallel")]
fn run_all_concurrent<T: Send>(
    configs: &[ExperimentConfig],
    f: impl Fn(&ExperimentConfig) -> Result<T, HarnessError> + Sync,
) -> Result<Vec<T>, HarnessError> {
    use rayon::prelude::*;
    configs.par_iter().map(&f).collect()
}

#[cfg(not(feature = "parallel"))]
fn run_all_concurrent<T>(
    configs: &[ExperimentConfig],
    f: impl Fn(&ExperimentConfig) -> Result<T, HarnessError>,
) -> Result<Vec<T>, HarnessError> {
    configs.iter().map(f).collect()
}
