//! One training run, end to end.
//!
//! Per epoch the loop is `begin_epoch`, then for every batch a train-mode
//! step whose pre-update losses go back to the scheduler, then eval-mode
//! validation accuracy and `end_epoch`. All randomness comes from streams
//! derived from the config seed, one per concern, so changing the scheduler
//! leaves the data split, the initial weights and the dropout masks alone.

use std::path::PathBuf;
use std::time::Instant;

use robust_sampling::data::{find_idx_pair, gcn_normalize, load_idx, subset_split, synthetic_blobs};
use robust_sampling::nn::train_step;
use robust_sampling::samplers::repetition_histogram;
use robust_sampling::{
    robust_risk, Dataset, ModelParams, NnError, Rng, SampleLedger, Scheduler, SplitSpec,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{DatasetChoice, ExperimentConfig};
use crate::HarnessError;

const STREAM_DATA: u64 = 1;
const STREAM_INIT: u64 = 2;
const STREAM_SCHEDULER: u64 = 3;
const STREAM_DROPOUT: u64 = 4;

pub const CODE_VERSION: &str = concat!("robust-sampling-harness ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub epoch: usize,
    /// Mean pre-update loss over every slot trained this epoch.
    pub mean_train_loss: f64,
    pub validation_accuracy: f64,
    /// Robust risk of this epoch's per-sample losses, when enabled.
    pub robust_risk: Option<f64>,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: ExperimentConfig,
    pub label: String,
    pub code_version: String,
    /// SHA-256 over the prepared train and validation sets.
    pub dataset_checksum: String,
    pub train_samples: usize,
    pub validation_samples: usize,
    pub epochs_completed: usize,
    pub final_accuracy: f64,
    /// Batch slots the ledger booked (always epochs × train size).
    pub total_usage: u64,
    /// Slots filled by a re-injected sample instead of the fresh shuffle.
    pub total_repetitions: u64,
    pub max_usage: u64,
    pub distinct_usage_counts: usize,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub metrics: Vec<MetricsRow>,
    pub ledger: SampleLedger,
    pub manifest: RunManifest,
    pub params: ModelParams,
}

#[derive(Debug, Clone)]
pub struct PreparedData {
    pub train: Dataset,
    pub validation: Dataset,
    pub checksum: String,
}

/// Loads (or generates) the dataset and cuts the training subset.
///
/// For MNIST the directory must hold a `train-*` IDX pair. If it also holds
/// a `t10k-*` pair that becomes the validation set; otherwise the training
/// rows not drawn into the subset are used.
pub fn prepare_data(cfg: &ExperimentConfig) -> Result<PreparedData, HarnessError> {
    let mut data_rng = Rng::derive(cfg.seed, STREAM_DATA);
    let (full, test) = match cfg.dataset {
        DatasetChoice::Mnist => {
            let (images, labels) = find_idx_pair(&cfg.mnist_dir, "train").ok_or_else(|| {
                HarnessError::Io(format!(
                    "{}: no train-images-idx3-ubyte / train-labels-idx1-ubyte pair",
                    cfg.mnist_dir.display()
                ))
            })?;
            let full = load_idx(&images, &labels)?;
            let test = match find_idx_pair(&cfg.mnist_dir, "t10k") {
                Some((i, l)) => Some(load_idx(&i, &l)?),
                None => None,
            };
            (full, test)
        }
        DatasetChoice::Synthetic => {
            let s = &cfg.synthetic;
            let full = synthetic_blobs(s.samples, s.classes, s.dim, s.hardness, data_rng.next_u64())?;
            (full, None)
        }
    };
    if cfg.train_size > full.len() || (test.is_none() && cfg.train_size == full.len()) {
        return Err(HarnessError::Usage(format!(
            "train-size {} leaves no validation data in a set of {}",
            cfg.train_size,
            full.len()
        )));
    }
    let split = SplitSpec {
        train_size: cfg.train_size,
        seed: data_rng.next_u64(),
    };
    let (mut train, holdout) = subset_split(&full, split)?;
    let mut validation = test.unwrap_or(holdout);
    if train.dim() != validation.dim() {
        return Err(HarnessError::Usage(format!(
            "train rows have {} features, validation rows {}",
            train.dim(),
            validation.dim()
        )));
    }
    if cfg.gcn {
        train = gcn_normalize(&train);
        validation = gcn_normalize(&validation);
    }
    let checksum = dataset_checksum(&[&train, &validation]);
    Ok(PreparedData {
        train,
        validation,
        checksum,
    })
}

fn dataset_checksum(parts: &[&Dataset]) -> String {
    let mut h = Sha256::new();
    for d in parts {
        h.update((d.len() as u64).to_le_bytes());
        h.update((d.dim() as u64).to_le_bytes());
        for v in d.features.data() {
            h.update(v.to_le_bytes());
        }
        for &l in &d.labels {
            h.update((l as u64).to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Validates `cfg`, prepares its data and trains.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunResult, HarnessError> {
    cfg.validate()?;
    let data = prepare_data(cfg)?;
    run_prepared(cfg, &data)
}

/// Trains on already prepared data. `data` must come from
/// [`prepare_data`] with the same dataset settings and seed for the run to
/// be reproducible from its manifest.
pub fn run_prepared(cfg: &ExperimentConfig, data: &PreparedData) -> Result<RunResult, HarnessError> {
    cfg.validate()?;
    let train = &data.train;
    let val = &data.validation;
    let n = train.len();
    let classes = train.classes.max(val.classes);
    let mut sizes = vec![train.dim()];
    sizes.extend(&cfg.hidden_sizes);
    sizes.push(classes);

    let mut params = ModelParams::new(&sizes, cfg.init_std, &mut Rng::derive(cfg.seed, STREAM_INIT))?;
    let mut scheduler = Scheduler::new(
        cfg.scheduler,
        cfg.epsilon,
        n,
        cfg.batch_size,
        Rng::derive(cfg.seed, STREAM_SCHEDULER),
    )?;
    let mut dropout_rng = Rng::derive(cfg.seed, STREAM_DROPOUT);
    let mut ledger = SampleLedger::new(n);
    let mut metrics = Vec::with_capacity(cfg.epochs);
    let mut repetitions = 0u64;

    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        scheduler.begin_epoch()?;
        repetitions += scheduler.epoch_injected().iter().filter(|&&b| b).count() as u64;

        let mut loss_sum = 0.0;
        let mut slots = 0usize;
        let mut batch = 0usize;
        while let Some(plan) = scheduler.next_batch()? {
            batch += 1;
            let inputs = train.features.select_rows(&plan.ids);
            let labels: Vec<usize> = plan.ids.iter().map(|&i| train.labels[i]).collect();
            let report = train_step(
                &mut params,
                &inputs,
                &labels,
                cfg.learning_rate,
                cfg.dropout_keep,
                cfg.loss_reduction,
                &mut dropout_rng,
            )
            .map_err(|e| match e {
                NnError::NonFinite { .. } => HarnessError::Divergence {
                    epoch,
                    batch,
                    detail: e.to_string(),
                },
                other => other.into(),
            })?;
            loss_sum += report.losses.iter().sum::<f64>();
            slots += plan.len();
            repetitions += plan.carried_count() as u64;
            scheduler.record_losses(&plan, &report.losses, &mut ledger)?;
        }

        let robust = match cfg.rho_log {
            Some(rho) => {
                let scored: Vec<f64> = scheduler.epoch_scores().iter().flatten().copied().collect();
                let risk = robust_risk(&scored, rho).map_err(|e| HarnessError::Divergence {
                    epoch,
                    batch,
                    detail: e.to_string(),
                })?;
                Some(risk.value)
            }
            None => None,
        };
        scheduler.end_epoch()?;
        let accuracy = robust_sampling::nn::evaluate_accuracy(&params, &val.features, &val.labels)?;
        let wall_seconds = started.elapsed().as_secs_f64();

        let mean_train_loss = loss_sum / slots as f64;
        if !mean_train_loss.is_finite() {
            return Err(HarnessError::Divergence {
                epoch,
                batch,
                detail: format!("mean training loss {mean_train_loss}"),
            });
        }
        metrics.push(MetricsRow {
            epoch,
            mean_train_loss,
            validation_accuracy: accuracy,
            robust_risk: robust,
            wall_seconds,
        });
    }

    let manifest = RunManifest {
        config: cfg.clone(),
        label: cfg.label(),
        code_version: CODE_VERSION.to_string(),
        dataset_checksum: data.checksum.clone(),
        train_samples: n,
        validation_samples: val.len(),
        epochs_completed: metrics.len(),
        final_accuracy: metrics.last().map_or(0.0, |m| m.validation_accuracy),
        total_usage: ledger.total_usage(),
        total_repetitions: repetitions,
        max_usage: ledger.max_usage(),
        distinct_usage_counts: repetition_histogram(&ledger).len(),
    };
    Ok(RunResult {
        metrics,
        ledger,
        manifest,
        params,
    })
}

/// Where a run's files go by default inside a sweep directory.
pub fn run_dir(root: &std::path::Path, cfg: &ExperimentConfig) -> PathBuf {
    root.join(cfg.label())
}
