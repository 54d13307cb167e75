//! Experiment configuration: defaults, config files and flag overrides.
//!
//! Resolution order is defaults, then the optional config file, then
//! command-line flags. Scheduler tokens follow the table labels: `vr-m-15`
//! means VR-M with ε = 0.15. For the probabilistic variants the suffix is the
//! size of the worst-sample pool, so `pvr-m-30` draws a carry of 15% of the
//! batch from the worst 30% (ε = 0.15).

use std::fmt;
use std::path::{Path, PathBuf};

use robust_sampling::{LossReduction, SchedulerKind};
use serde::{Deserialize, Serialize};

use crate::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetChoice {
    Mnist,
    Synthetic,
}

impl fmt::Display for DatasetChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DatasetChoice::Mnist => "mnist",
            DatasetChoice::Synthetic => "synthetic",
        })
    }
}

impl std::str::FromStr for DatasetChoice {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "mnist" => Ok(DatasetChoice::Mnist),
            "synthetic" => Ok(DatasetChoice::Synthetic),
            _ => Err(HarnessError::Usage(format!("unknown dataset '{s}'"))),
        }
    }
}

/// Parameters of the synthetic blob dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    /// Total samples generated; `train_size` of them train, the rest validate.
    pub samples: usize,
    pub classes: usize,
    pub dim: usize,
    pub hardness: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            samples: 2000,
            classes: 10,
            dim: 32,
            hardness: 0.2,
        }
    }
}

/// A fully resolved experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetChoice,
    pub mnist_dir: PathBuf,
    pub synthetic: SyntheticSpec,
    /// Apply global contrast normalisation to every sample.
    pub gcn: bool,
    pub train_size: usize,
    #[serde(with = "kind_serde")]
    pub scheduler: SchedulerKind,
    /// Repetition rate: fraction of the batch (M variants) or training set
    /// (E variants) that is re-injected.
    pub epsilon: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub dropout_keep: f64,
    pub hidden_sizes: Vec<usize>,
    pub init_std: f64,
    pub seed: u64,
    /// Radius for per-epoch robust-risk logging; `None` disables it.
    pub rho_log: Option<f64>,
    #[serde(with = "reduction_serde")]
    pub loss_reduction: LossReduction,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetChoice::Mnist,
            mnist_dir: PathBuf::from("data/mnist-5k"),
            synthetic: SyntheticSpec::default(),
            gcn: false,
            train_size: 1000,
            scheduler: SchedulerKind::Baseline,
            epsilon: 0.0,
            epochs: 50,
            batch_size: 64,
            learning_rate: 0.001,
            dropout_keep: 0.5,
            hidden_sizes: vec![256],
            init_std: 0.1,
            seed: 0,
            rho_log: None,
            loss_reduction: LossReduction::Sum,
            output_dir: PathBuf::from("runs/latest"),
        }
    }
}

impl ExperimentConfig {
    /// Table-style run label: `baseline`, `vr-m-15`, `pvr-e-40`, …
    pub fn label(&self) -> String {
        scheduler_label(self.scheduler, self.epsilon)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let usage = |m: String| Err(HarnessError::Usage(m));
        if !(0.0..1.0).contains(&self.epsilon) {
            return usage(format!("epsilon {} outside [0, 1)", self.epsilon));
        }
        if self.epochs == 0 {
            return usage("epochs must be at least 1".into());
        }
        if self.train_size == 0 {
            return usage("train-size must be at least 1".into());
        }
        if self.batch_size == 0 || self.batch_size > self.train_size {
            return usage(format!(
                "batch-size {} must be in 1..={} (train-size)",
                self.batch_size, self.train_size
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return usage(format!("lr {} must be positive", self.learning_rate));
        }
        if !(self.dropout_keep > 0.0 && self.dropout_keep <= 1.0) {
            return usage(format!("dropout-keep {} outside (0, 1]", self.dropout_keep));
        }
        if self.hidden_sizes.contains(&0) {
            return usage("hidden layer widths must be positive".into());
        }
        if !(self.init_std >= 0.0 && self.init_std.is_finite()) {
            return usage(format!("init-std {} must be non-negative", self.init_std));
        }
        if let Some(rho) = self.rho_log {
            if !(rho >= 0.0 && rho.is_finite()) {
                return usage(format!("rho {rho} must be non-negative"));
            }
        }
        if self.dataset == DatasetChoice::Synthetic && self.synthetic.samples <= self.train_size {
            return usage(format!(
                "synthetic samples {} must exceed train-size {} to leave a validation set",
                self.synthetic.samples, self.train_size
            ));
        }
        Ok(())
    }
}

/// Label for a scheduler at repetition rate `epsilon`. Probabilistic
/// variants are named after their pool, i.e. twice ε.
pub fn scheduler_label(kind: SchedulerKind, epsilon: f64) -> String {
    if kind == SchedulerKind::Baseline {
        return kind.as_str().to_string();
    }
    let pct = if kind.probabilistic() { 200.0 } else { 100.0 } * epsilon;
    let rounded = pct.round();
    if (pct - rounded).abs() < 1e-9 {
        format!("{kind}-{}", rounded as i64)
    } else {
        format!("{kind}-{pct}")
    }
}

/// Parses `baseline`, `vr-m`, `vr-m-15`, `pvr-e-40`, …
///
/// Returns the variant and, when the token carries a percentage, the
/// repetition rate it implies.
pub fn parse_scheduler_token(token: &str) -> Result<(SchedulerKind, Option<f64>), HarnessError> {
    let bad = || HarnessError::Usage(format!("unknown scheduler '{token}'"));
    let lower = token.trim().to_ascii_lowercase();
    if let Ok(kind) = lower.parse::<SchedulerKind>() {
        return Ok((kind, None));
    }
    let (head, pct) = lower.rsplit_once('-').ok_or_else(bad)?;
    let kind: SchedulerKind = head.parse().map_err(|_| bad())?;
    if kind == SchedulerKind::Baseline {
        return Err(bad());
    }
    let pct: f64 = pct.parse().map_err(|_| bad())?;
    let epsilon = if kind.probabilistic() { pct / 200.0 } else { pct / 100.0 };
    if !(0.0..1.0).contains(&epsilon) || !pct.is_finite() {
        return Err(HarnessError::Usage(format!(
            "scheduler '{token}' implies epsilon {epsilon}, outside [0, 1)"
        )));
    }
    Ok((kind, Some(epsilon)))
}

/// Optional values from a config file or the command line.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigOverrides {
    pub dataset: Option<String>,
    pub mnist_dir: Option<PathBuf>,
    pub synthetic: Option<SyntheticSpec>,
    pub gcn: Option<bool>,
    pub train_size: Option<usize>,
    pub scheduler: Option<String>,
    pub epsilon: Option<f64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub dropout_keep: Option<f64>,
    pub hidden_sizes: Option<Vec<usize>>,
    pub init_std: Option<f64>,
    pub seed: Option<u64>,
    pub rho_log: Option<f64>,
    pub loss_reduction: Option<String>,
    pub output_dir: Option<PathBuf>,
}

impl ConfigOverrides {
    fn apply(&self, cfg: &mut ExperimentConfig) -> Result<(), HarnessError> {
        if let Some(d) = &self.dataset {
            cfg.dataset = d.parse()?;
        }
        macro_rules! copy {
            ($($field:ident),*) => {
                $(if let Some(v) = &self.$field {
                    cfg.$field = v.clone();
                })*
            };
        }
        copy!(
            mnist_dir,
            synthetic,
            gcn,
            train_size,
            epochs,
            batch_size,
            learning_rate,
            dropout_keep,
            hidden_sizes,
            init_std,
            seed,
            output_dir
        );
        if let Some(rho) = self.rho_log {
            cfg.rho_log = Some(rho);
        }
        if let Some(r) = &self.loss_reduction {
            cfg.loss_reduction = parse_reduction(r)?;
        }
        match (&self.scheduler, self.epsilon) {
            (Some(token), eps) => {
                let (kind, implied) = parse_scheduler_token(token)?;
                cfg.scheduler = kind;
                cfg.epsilon = match (implied, eps) {
                    (Some(a), Some(b)) if (a - b).abs() > 1e-12 => {
                        return Err(HarnessError::Usage(format!(
                            "scheduler '{token}' implies epsilon {a} but epsilon {b} was given"
                        )))
                    }
                    (Some(a), _) => a,
                    (None, Some(b)) => b,
                    (None, None) => cfg.epsilon,
                };
            }
            (None, Some(b)) => cfg.epsilon = b,
            (None, None) => {}
        }
        if cfg.scheduler == SchedulerKind::Baseline {
            cfg.epsilon = 0.0;
        }
        Ok(())
    }

    /// Reads a TOML or JSON (by `.json` extension) config file. A run
    /// manifest is accepted too; its `config` table is used.
    pub fn from_file(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
        let is_json = path.extension().is_some_and(|e| e == "json");
        let parse_err = |e: String| HarnessError::Usage(format!("{}: {e}", path.display()));
        if is_json {
            let mut value: serde_json::Value =
                serde_json::from_str(&text).map_err(|e| parse_err(e.to_string()))?;
            if let Some(inner) = value.get_mut("config") {
                value = inner.take();
            }
            serde_json::from_value(value).map_err(|e| parse_err(e.to_string()))
        } else {
            let mut value: toml::Table = toml::from_str(&text).map_err(|e| parse_err(e.to_string()))?;
            if let Some(toml::Value::Table(inner)) = value.remove("config") {
                value = inner;
            }
            toml::Value::Table(value)
                .try_into()
                .map_err(|e: toml::de::Error| parse_err(e.to_string()))
        }
    }
}

pub fn parse_reduction(s: &str) -> Result<LossReduction, HarnessError> {
    match s.to_ascii_lowercase().as_str() {
        "mean" => Ok(LossReduction::Mean),
        "sum" => Ok(LossReduction::Sum),
        _ => Err(HarnessError::Usage(format!("unknown loss reduction '{s}'"))),
    }
}

/// Defaults, then `file`, then `flags`; validated.
pub fn parse_config(
    flags: &ConfigOverrides,
    file: Option<&Path>,
) -> Result<ExperimentConfig, HarnessError> {
    let mut cfg = ExperimentConfig::default();
    if let Some(path) = file {
        ConfigOverrides::from_file(path)?.apply(&mut cfg)?;
    }
    flags.apply(&mut cfg)?;
    cfg.validate()?;
    Ok(cfg)
}

mod kind_serde {
    use robust_sampling::SchedulerKind;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(k: &SchedulerKind, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(k.as_str())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<SchedulerKind, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

mod reduction_serde {
    use robust_sampling::LossReduction;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(r: &LossReduction, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(r.as_str())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<LossReduction, D::Error> {
        let s = String::deserialize(d)?;
        super::parse_reduction(&s).map_err(serde::de::Error::custom)
    }
}
