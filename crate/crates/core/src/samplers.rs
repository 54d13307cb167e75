//! Mini-batch schedulers that re-inject the worst-scoring samples.
//!
//! Five variants share one [`Scheduler`]:
//!
//! | kind       | what gets repeated                                             |
//! |------------|----------------------------------------------------------------|
//! | `baseline` | nothing; every sample once per epoch                           |
//! | `vr-m`     | the top `⌈εB⌉` losses of each batch replace the tail of the next |
//! | `pvr-m`    | `⌈εB⌉` drawn uniformly from the top `2⌈εB⌉` of each batch        |
//! | `vr-e`     | the top `⌈εn⌉` losses of an epoch replace samples of the next   |
//! | `pvr-e`    | `⌈εn⌉` drawn uniformly from the top `2⌈εn⌉` of an epoch          |
//!
//! Substitution always replaces stream slots and never appends, so every
//! epoch consumes exactly `n` slots. Duplicates are not importance-weighted.
//!
//! A training loop drives it as
//! `begin_epoch → (next_batch → record_losses)* → end_epoch`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::rng::Rng;

#[derive(Debug, Error, PartialEq)]
pub enum SamplerError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("invalid state: {0}")]
    State(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SchedulerKind {
    Baseline,
    VrM,
    VrE,
    PvrM,
    PvrE,
}

impl SchedulerKind {
    pub const ALL: [SchedulerKind; 5] = [
        SchedulerKind::Baseline,
        SchedulerKind::VrM,
        SchedulerKind::VrE,
        SchedulerKind::PvrM,
        SchedulerKind::PvrE,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SchedulerKind::Baseline => "baseline",
            SchedulerKind::VrM => "vr-m",
            SchedulerKind::VrE => "vr-e",
            SchedulerKind::PvrM => "pvr-m",
            SchedulerKind::PvrE => "pvr-e",
        }
    }

    /// Carries samples from batch to batch.
    pub fn per_minibatch(self) -> bool {
        matches!(self, SchedulerKind::VrM | SchedulerKind::PvrM)
    }

    /// Rebuilds the dataset from epoch to epoch.
    pub fn per_epoch(self) -> bool {
        matches!(self, SchedulerKind::VrE | SchedulerKind::PvrE)
    }

    pub fn probabilistic(self) -> bool {
        matches!(self, SchedulerKind::PvrM | SchedulerKind::PvrE)
    }
}

impl fmt::Display for SchedulerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SchedulerKind {
    type Err = SamplerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| SamplerError::Argument(format!("unknown scheduler '{s}'")))
    }
}

/// `⌈ε·m⌉`, ignoring floating-point fuzz just above an integer
/// (`0.1 · 30` is `3.0000000000000004`, which should give 3).
pub fn repeat_count(epsilon: f64, m: usize) -> usize {
    if epsilon <= 0.0 {
        return 0;
    }
    let x = epsilon * m as f64;
    let r = x.round();
    if (x - r).abs() <= 1e-9 * x.max(1.0) {
        r as usize
    } else {
        x.ceil() as usize
    }
}

/// The ids of one optimizer step, in batch order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MiniBatchPlan {
    pub ids: Vec<usize>,
    /// `true` where the slot holds a sample carried over from the previous
    /// batch (per-mini-batch variants only).
    pub carried: Vec<bool>,
}

impl MiniBatchPlan {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn carried_count(&self) -> usize {
        self.carried.iter().filter(|&&c| c).count()
    }

    pub fn carried_ids(&self) -> Vec<usize> {
        self.ids
            .iter()
            .zip(&self.carried)
            .filter(|(_, &c)| c)
            .map(|(&id, _)| id)
            .collect()
    }
}

/// Per-sample last loss and usage count.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SampleLedger {
    last_loss: Vec<Option<f64>>,
    usage: Vec<u64>,
}

impl SampleLedger {
    pub fn new(n: usize) -> Self {
        Self {
            last_loss: vec![None; n],
            usage: vec![0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.usage.len()
    }

    pub fn is_empty(&self) -> bool {
        self.usage.is_empty()
    }

    /// One optimizer use of `id` with loss `loss`.
    pub fn record(&mut self, id: usize, loss: f64) {
        self.usage[id] += 1;
        self.last_loss[id] = Some(loss);
    }

    pub fn usage(&self, id: usize) -> u64 {
        self.usage[id]
    }

    pub fn usage_counts(&self) -> &[u64] {
        &self.usage
    }

    /// `None` until the sample has been scored once.
    pub fn last_loss(&self, id: usize) -> Option<f64> {
        self.last_loss[id]
    }

    pub fn total_usage(&self) -> u64 {
        self.usage.iter().sum()
    }

    pub fn max_usage(&self) -> u64 {
        self.usage.iter().copied().max().unwrap_or(0)
    }
}

/// Usage count → number of samples with that count.
pub fn repetition_histogram(ledger: &SampleLedger) -> BTreeMap<u64, usize> {
    let mut hist = BTreeMap::new();
    for &c in ledger.usage_counts() {
        *hist.entry(c).or_insert(0) += 1;
    }
    hist
}

/// `usage_count,num_samples` rows ascending by count, LF-terminated.
pub fn histogram_csv(hist: &BTreeMap<u64, usize>) -> String {
    let mut out = String::from("usage_count,num_samples\n");
    for (count, samples) in hist {
        out.push_str(&format!("{count},{samples}\n"));
    }
    out
}

/// The `k` worst ids by loss, worst first; ties go to the lower id.
///
/// `ids` may repeat; a repeated id is ranked once, by its last loss.
pub fn select_worst(ids: &[usize], losses: &[f64], k: usize) -> Vec<usize> {
    debug_assert_eq!(ids.len(), losses.len());
    let mut latest: BTreeMap<usize, f64> = BTreeMap::new();
    for (&id, &l) in ids.iter().zip(losses) {
        latest.insert(id, l);
    }
    let mut ranked: Vec<(usize, f64)> = latest.into_iter().collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked.into_iter().take(k).map(|(id, _)| id).collect()
}

/// Half of a ranked worst-sample pool, drawn uniformly without replacement.
pub fn pvr_subsample(pool: &[usize], rng: &mut Rng) -> Result<Vec<usize>, SamplerError> {
    if pool.len() < 2 || !pool.len().is_multiple_of(2) {
        return Err(SamplerError::Argument(format!(
            "pool of {} ids; need an even size of at least 2",
            pool.len()
        )));
    }
    Ok(rng.choose_distinct(pool, pool.len() / 2))
}

/// Top-`k` re-injection set, plain or subsampled from the top `2k`.
///
/// When fewer than `2k` distinct ids are available (a short final batch, or
/// `ε > ½`), the subsample takes `k` of what there is.
fn worst_set(
    ids: &[usize],
    losses: &[f64],
    k: usize,
    probabilistic: bool,
    rng: &mut Rng,
) -> Vec<usize> {
    if k == 0 {
        return Vec::new();
    }
    if !probabilistic {
        return select_worst(ids, losses, k);
    }
    let pool = select_worst(ids, losses, 2 * k);
    let take = k.min(pool.len());
    rng.choose_distinct(&pool, take)
}

/// Scheduler state for one training run.
#[derive(Debug, Clone)]
pub struct Scheduler {
    kind: SchedulerKind,
    epsilon: f64,
    n: usize,
    batch_size: usize,
    rng: Rng,
    order: Vec<usize>,
    injected: Vec<bool>,
    cursor: usize,
    epochs_started: usize,
    in_epoch: bool,
    batches_this_epoch: usize,
    awaiting_losses: bool,
    carryover: Vec<usize>,
    substitution_plan: Vec<usize>,
    epoch_scores: Vec<Option<f64>>,
}

impl Scheduler {
    pub fn new(
        kind: SchedulerKind,
        epsilon: f64,
        n: usize,
        batch_size: usize,
        rng: Rng,
    ) -> Result<Self, SamplerError> {
        if !(0.0..1.0).contains(&epsilon) {
            return Err(SamplerError::Argument(format!(
                "epsilon {epsilon} outside [0, 1)"
            )));
        }
        if n == 0 {
            return Err(SamplerError::Argument("empty training set".into()));
        }
        if batch_size == 0 {
            return Err(SamplerError::Argument("batch size 0".into()));
        }
        Ok(Self {
            kind,
            epsilon,
            n,
            batch_size,
            rng,
            order: Vec::new(),
            injected: Vec::new(),
            cursor: 0,
            epochs_started: 0,
            in_epoch: false,
            batches_this_epoch: 0,
            awaiting_losses: false,
            carryover: Vec::new(),
            substitution_plan: Vec::new(),
            epoch_scores: vec![None; n],
        })
    }

    pub fn kind(&self) -> SchedulerKind {
        self.kind
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    /// Samples carried into each non-first batch (per-mini-batch variants).
    pub fn carry_size(&self) -> usize {
        if self.kind.per_minibatch() {
            repeat_count(self.epsilon, self.batch_size)
        } else {
            0
        }
    }

    /// Samples substituted into each epoch after the first (per-epoch
    /// variants).
    pub fn plan_size(&self) -> usize {
        if self.kind.per_epoch() {
            repeat_count(self.epsilon, self.n)
        } else {
            0
        }
    }

    pub fn epochs_started(&self) -> usize {
        self.epochs_started
    }

    pub fn in_epoch(&self) -> bool {
        self.in_epoch
    }

    /// The current epoch's sample order (after any substitution).
    pub fn epoch_order(&self) -> &[usize] {
        &self.order
    }

    /// Positions of [`epoch_order`](Self::epoch_order) filled by substitution.
    pub fn epoch_injected(&self) -> &[bool] {
        &self.injected
    }

    /// Ids waiting to be carried into the next batch, worst first.
    pub fn carryover(&self) -> &[usize] {
        &self.carryover
    }

    /// Ids to be substituted into the next epoch.
    pub fn substitution_plan(&self) -> &[usize] {
        &self.substitution_plan
    }

    /// Replaces the pending substitution plan. Only meaningful for the
    /// per-epoch variants and only between epochs.
    pub fn set_substitution_plan(&mut self, plan: Vec<usize>) -> Result<(), SamplerError> {
        if self.in_epoch {
            return Err(SamplerError::State("substitution plan changed mid-epoch"));
        }
        if let Some(&bad) = plan.iter().find(|&&id| id >= self.n) {
            return Err(SamplerError::Argument(format!(
                "sample id {bad} outside 0..{}",
                self.n
            )));
        }
        self.substitution_plan = plan;
        Ok(())
    }

    /// Latest loss of each sample scored during the current epoch.
    pub fn epoch_scores(&self) -> &[Option<f64>] {
        &self.epoch_scores
    }

    /// Shuffles a fresh epoch order, substituting the pending plan for the
    /// per-epoch variants.
    ///
    /// Substitution overwrites the first `|plan|` slots of the shuffle and
    /// then reshuffles once more so the duplicates are spread out. With an
    /// empty plan (first epoch, or ε = 0) no extra randomness is drawn, so the
    /// stream matches the baseline exactly.
    pub fn begin_epoch(&mut self) -> Result<(), SamplerError> {
        if self.in_epoch {
            return Err(SamplerError::State("begin_epoch while an epoch is running"));
        }
        self.order = self.rng.shuffle(self.n);
        self.injected = vec![false; self.n];
        let plan = std::mem::take(&mut self.substitution_plan);
        if self.kind.per_epoch() && !plan.is_empty() {
            for (slot, &id) in plan.iter().take(self.n).enumerate() {
                self.order[slot] = id;
                self.injected[slot] = true;
            }
            let perm = self.rng.shuffle(self.n);
            self.order = perm.iter().map(|&p| self.order[p]).collect();
            self.injected = perm.iter().map(|&p| self.injected[p]).collect();
        }
        self.cursor = 0;
        self.batches_this_epoch = 0;
        self.carryover.clear();
        self.epoch_scores.iter_mut().for_each(|s| *s = None);
        self.epochs_started += 1;
        self.in_epoch = true;
        Ok(())
    }

    /// The next batch of the epoch, or `None` once all `n` slots are used.
    ///
    /// For the per-mini-batch variants every batch after the first has its
    /// last slots overwritten by the carryover; the displaced stream ids are
    /// skipped for the rest of the epoch.
    pub fn next_batch(&mut self) -> Result<Option<MiniBatchPlan>, SamplerError> {
        if !self.in_epoch {
            return Err(SamplerError::State("next_batch outside an epoch"));
        }
        if self.awaiting_losses {
            return Err(SamplerError::State(
                "record_losses must follow every next_batch",
            ));
        }
        if self.cursor >= self.order.len() {
            return Ok(None);
        }
        let end = (self.cursor + self.batch_size).min(self.order.len());
        let mut ids = self.order[self.cursor..end].to_vec();
        let mut carried = vec![false; ids.len()];
        if self.kind.per_minibatch() && self.batches_this_epoch > 0 {
            let r = self.carryover.len().min(ids.len());
            let start = ids.len() - r;
            for (slot, &id) in (start..ids.len()).zip(&self.carryover) {
                ids[slot] = id;
                carried[slot] = true;
            }
        }
        self.cursor = end;
        self.batches_this_epoch += 1;
        self.awaiting_losses = true;
        Ok(Some(MiniBatchPlan { ids, carried }))
    }

    /// Books the pre-update losses of `plan` and, for the per-mini-batch
    /// variants, picks the carryover for the next batch.
    pub fn record_losses(
        &mut self,
        plan: &MiniBatchPlan,
        losses: &[f64],
        ledger: &mut SampleLedger,
    ) -> Result<(), SamplerError> {
        if plan.ids.len() != losses.len() {
            return Err(SamplerError::Argument(format!(
                "{} losses for a batch of {}",
                losses.len(),
                plan.ids.len()
            )));
        }
        if ledger.len() != self.n {
            return Err(SamplerError::Argument(format!(
                "ledger tracks {} samples, scheduler {}",
                ledger.len(),
                self.n
            )));
        }
        if !self.awaiting_losses {
            return Err(SamplerError::State("record_losses without a pending batch"));
        }
        for (&id, &l) in plan.ids.iter().zip(losses) {
            ledger.record(id, l);
            self.epoch_scores[id] = Some(l);
        }
        if self.kind.per_minibatch() {
            self.carryover = worst_set(
                &plan.ids,
                losses,
                self.carry_size(),
                self.kind.probabilistic(),
                &mut self.rng,
            );
        }
        self.awaiting_losses = false;
        Ok(())
    }

    /// Closes the epoch. Per-epoch variants build the next substitution plan
    /// from the samples scored this epoch; the carryover is always cleared.
    pub fn end_epoch(&mut self) -> Result<(), SamplerError> {
        if !self.in_epoch || self.awaiting_losses || self.cursor < self.order.len() {
            return Err(SamplerError::State("end_epoch before the epoch finished"));
        }
        if self.kind.per_epoch() {
            let (ids, losses): (Vec<usize>, Vec<f64>) = self
                .epoch_scores
                .iter()
                .enumerate()
                .filter_map(|(id, s)| s.map(|l| (id, l)))
                .unzip();
            self.substitution_plan = worst_set(
                &ids,
                &losses,
                self.plan_size(),
                self.kind.probabilistic(),
                &mut self.rng,
            );
        }
        self.carryover.clear();
        self.in_epoch = false;
        Ok(())
    }
}
