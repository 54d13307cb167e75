//! A small multi-layer perceptron: dense layers, ReLU, inverted dropout and
//! softmax cross-entropy, trained by plain SGD with hand-written backprop.
//!
//! Weights are stored `in × out` so a batch (one sample per row) maps through
//! a layer as `X · W + b`. Dropout is only ever applied to hidden
//! activations.

use std::ops::Deref;

use thiserror::Error;

use crate::par::{self, Execution};
use crate::rng::Rng;
use crate::tensor::{Matrix, TensorError};

#[derive(Debug, Error)]
pub enum NnError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("invalid state: {0}")]
    State(&'static str),
    #[error("non-finite {what} in layer {layer}")]
    NonFinite { layer: usize, what: &'static str },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weights: Matrix::zeros(inputs, outputs),
            bias: vec![0.0; outputs],
        }
    }

    pub fn inputs(&self) -> usize {
        self.weights.rows()
    }

    pub fn outputs(&self) -> usize {
        self.weights.cols()
    }

    fn is_finite(&self) -> bool {
        self.weights.is_finite() && self.bias.iter().all(|b| b.is_finite())
    }
}

/// Parameters of the network, one [`DenseLayer`] per affine map.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    layers: Vec<DenseLayer>,
}

impl ModelParams {
    /// Gaussian weights with standard deviation `init_std`, zero biases.
    ///
    /// `sizes` lists every width from input to classes, e.g. `[784, 256, 10]`.
    pub fn new(sizes: &[usize], init_std: f64, rng: &mut Rng) -> Result<Self, NnError> {
        let mut params = Self::zeros(sizes)?;
        for layer in &mut params.layers {
            for w in layer.weights.data_mut() {
                *w = init_std * rng.normal();
            }
        }
        Ok(params)
    }

    pub fn zeros(sizes: &[usize]) -> Result<Self, NnError> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(NnError::Argument(format!(
                "layer sizes {sizes:?} need at least an input and an output width, all positive"
            )));
        }
        let layers = sizes
            .windows(2)
            .map(|w| DenseLayer::zeros(w[0], w[1]))
            .collect();
        Ok(Self { layers })
    }

    /// Wraps explicit layers, checking that consecutive shapes chain.
    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self, NnError> {
        if layers.is_empty() {
            return Err(NnError::Argument("no layers".into()));
        }
        for (k, pair) in layers.windows(2).enumerate() {
            if pair[0].outputs() != pair[1].inputs() {
                return Err(NnError::Argument(format!(
                    "layer {k} outputs {} but layer {} takes {}",
                    pair[0].outputs(),
                    k + 1,
                    pair[1].inputs()
                )));
            }
        }
        for (k, l) in layers.iter().enumerate() {
            if l.bias.len() != l.outputs() {
                return Err(NnError::Argument(format!("layer {k} bias length mismatch")));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.layers[0].inputs()];
        sizes.extend(self.layers.iter().map(DenseLayer::outputs));
        sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn num_classes(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs()
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.data().len() + l.bias.len())
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(DenseLayer::is_finite)
    }
}

/// Gradients with the same layout as [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<DenseLayer>,
}

impl Gradients {
    pub fn norm(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| l.weights.frobenius_sq() + l.bias.iter().map(|b| b * b).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, k: f64) {
        for l in &mut self.layers {
            l.weights.scale(k);
            l.bias.iter_mut().for_each(|b| *b *= k);
        }
    }
}

/// Per-sample cross-entropy values, aligned with the rows they score.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LossVector(Vec<f64>);

impl LossVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    /// Sum in index order divided by the length.
    pub fn mean(&self) -> f64 {
        if self.0.is_empty() {
            return 0.0;
        }
        let mut sum = 0.0;
        for v in &self.0 {
            sum += v;
        }
        sum / self.0.len() as f64
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for LossVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone)]
struct ForwardCache {
    /// Input to each layer; entry 0 is the batch itself.
    inputs: Vec<Matrix>,
    /// Per hidden layer: ReLU derivative times dropout scale (0, 1 or 1/keep).
    gates: Vec<Matrix>,
}

/// Output of [`forward`]. Only train-mode passes keep the cache that
/// [`backward`] needs.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub logits: Matrix,
    cache: Option<ForwardCache>,
}

impl ForwardPass {
    pub fn has_cache(&self) -> bool {
        self.cache.is_some()
    }
}

fn check_keep(dropout_keep: f64) -> Result<(), NnError> {
    if !(dropout_keep > 0.0 && dropout_keep <= 1.0) {
        return Err(NnError::Argument(format!(
            "dropout_keep {dropout_keep} outside (0, 1]"
        )));
    }
    Ok(())
}

/// Runs the network on `batch` (one sample per row).
///
/// In train mode with `dropout_keep < 1` each hidden unit is zeroed with
/// probability `1 − keep` and survivors are scaled by `1/keep`; the mask is
/// retained for [`backward`]. `rng` is only consumed in that case.
pub fn forward(
    params: &ModelParams,
    batch: &Matrix,
    dropout_keep: f64,
    rng: &mut Rng,
    train_mode: bool,
) -> Result<ForwardPass, NnError> {
    forward_with(params, batch, dropout_keep, rng, train_mode, Execution::default())
}

pub fn forward_with(
    params: &ModelParams,
    batch: &Matrix,
    dropout_keep: f64,
    rng: &mut Rng,
    train_mode: bool,
    exec: Execution,
) -> Result<ForwardPass, NnError> {
    check_keep(dropout_keep)?;
    if batch.cols() != params.input_dim() {
        return Err(TensorError::Dimension {
            op: "forward",
            left: batch.shape(),
            right: params.layers[0].weights.shape(),
        }
        .into());
    }
    let apply_dropout = train_mode && dropout_keep < 1.0;
    let scale = 1.0 / dropout_keep;
    let last = params.layers.len() - 1;

    let mut inputs = Vec::with_capacity(params.layers.len());
    let mut gates = Vec::with_capacity(last);
    let mut current = batch.clone();
    for (k, layer) in params.layers.iter().enumerate() {
        let mut z = current.matmul_with(&layer.weights, exec)?;
        z.add_row_vector(&layer.bias)?;
        if k == last {
            if train_mode {
                inputs.push(current);
            }
            current = z;
            break;
        }
        let mut gate = Matrix::zeros(z.rows(), z.cols());
        for (g, a) in gate.data_mut().iter_mut().zip(z.data_mut()) {
            let mut factor = if *a > 0.0 { 1.0 } else { 0.0 };
            if apply_dropout {
                factor *= if rng.bernoulli(dropout_keep) { scale } else { 0.0 };
            }
            *g = factor;
            *a *= factor;
        }
        if train_mode {
            inputs.push(std::mem::replace(&mut current, z));
            gates.push(gate);
        } else {
            current = z;
        }
    }
    Ok(ForwardPass {
        logits: current,
        cache: train_mode.then_some(ForwardCache { inputs, gates }),
    })
}

/// Logits in eval mode (no dropout, no cache).
pub fn predict_logits(params: &ModelParams, batch: &Matrix) -> Result<Matrix, NnError> {
    // The rng is never touched in eval mode.
    let mut unused = Rng::new(0);
    Ok(forward(params, batch, 1.0, &mut unused, false)?.logits)
}

fn check_labels(rows: usize, classes: usize, labels: &[usize]) -> Result<(), NnError> {
    if labels.len() != rows {
        return Err(NnError::Argument(format!(
            "{} labels for {rows} rows",
            labels.len()
        )));
    }
    if let Some((i, &y)) = labels.iter().enumerate().find(|(_, &y)| y >= classes) {
        return Err(NnError::Argument(format!(
            "label {y} at row {i} outside 0..{classes}"
        )));
    }
    Ok(())
}

/// Cross-entropy of each row: `log Σ exp(z) − z_label`, computed relative to
/// the row maximum so large logits never overflow.
pub fn loss_per_sample(logits: &Matrix, labels: &[usize]) -> Result<LossVector, NnError> {
    check_labels(logits.rows(), logits.cols(), labels)?;
    let losses = logits
        .iter_rows()
        .zip(labels)
        .map(|(row, &y)| {
            let (arg, max) = argmax(row);
            // Sum of exp(z_j − max) over j ≠ argmax; the argmax term is 1.
            let rest: f64 = row
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != arg)
                .map(|(_, &z)| (z - max).exp())
                .sum();
            (max - row[y]) + rest.ln_1p()
        })
        .collect();
    Ok(LossVector(losses))
}

/// Index of the largest entry; ties go to the lowest index.
fn argmax(row: &[f64]) -> (usize, f64) {
    let mut best = (0, row[0]);
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v > best.1 {
            best = (j, v);
        }
    }
    best
}

fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    let cols = out.cols();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
        debug_assert_eq!(row.len(), cols);
    }
    out
}

/// Gradients of the mean batch cross-entropy with respect to every parameter.
pub fn backward(
    params: &ModelParams,
    pass: &ForwardPass,
    labels: &[usize],
) -> Result<Gradients, NnError> {
    backward_with(params, pass, labels, Execution::default())
}

pub fn backward_with(
    params: &ModelParams,
    pass: &ForwardPass,
    labels: &[usize],
    exec: Execution,
) -> Result<Gradients, NnError> {
    let cache = pass
        .cache
        .as_ref()
        .ok_or(NnError::State("backward needs a train-mode forward pass"))?;
    let logits = &pass.logits;
    check_labels(logits.rows(), logits.cols(), labels)?;
    let batch = logits.rows() as f64;

    // dL/dz for the output layer: (softmax − onehot) / B.
    let mut delta = softmax_rows(logits);
    for (r, &y) in labels.iter().enumerate() {
        let v = delta.get(r, y);
        delta.set(r, y, v - 1.0);
    }
    delta.scale(1.0 / batch);

    let mut grads: Vec<DenseLayer> = Vec::with_capacity(params.layers.len());
    for k in (0..params.layers.len()).rev() {
        let input = &cache.inputs[k];
        let weights = input.t_matmul_with(&delta, exec)?;
        let bias = delta.column_sums();
        if k > 0 {
            let mut upstream = delta.matmul_t_with(&params.layers[k].weights, exec)?;
            for (u, g) in upstream
                .data_mut()
                .iter_mut()
                .zip(cache.gates[k - 1].data())
            {
                *u *= g;
            }
            delta = upstream;
        }
        grads.push(DenseLayer { weights, bias });
    }
    grads.reverse();
    Ok(Gradients { layers: grads })
}

/// `θ ← θ − lr·∇θ`. Refuses to touch the parameters if any gradient entry is
/// non-finite.
pub fn sgd_step(params: &mut ModelParams, grads: &Gradients, lr: f64) -> Result<(), NnError> {
    if !(lr >= 0.0 && lr.is_finite()) {
        return Err(NnError::Argument(format!("learning rate {lr}")));
    }
    if grads.layers.len() != params.layers.len() {
        return Err(NnError::Argument("gradient layer count mismatch".into()));
    }
    for (k, (p, g)) in params.layers.iter().zip(&grads.layers).enumerate() {
        if p.weights.shape() != g.weights.shape() || p.bias.len() != g.bias.len() {
            return Err(TensorError::Dimension {
                op: "sgd_step",
                left: p.weights.shape(),
                right: g.weights.shape(),
            }
            .into());
        }
        if !g.is_finite() {
            return Err(NnError::NonFinite {
                layer: k,
                what: "gradient",
            });
        }
    }
    for (p, g) in params.layers.iter_mut().zip(&grads.layers) {
        for (w, d) in p.weights.data_mut().iter_mut().zip(g.weights.data()) {
            *w -= lr * d;
        }
        for (b, d) in p.bias.iter_mut().zip(&g.bias) {
            *b -= lr * d;
        }
    }
    Ok(())
}

/// How per-sample losses are combined into the objective SGD descends.
///
/// Reporting always uses the mean; `Sum` only changes the step, which becomes
/// `B` times the mean-loss step for a batch of `B` rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LossReduction {
    Mean,
    #[default]
    Sum,
}

impl LossReduction {
    pub fn as_str(self) -> &'static str {
        match self {
            LossReduction::Mean => "mean",
            LossReduction::Sum => "sum",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainStepReport {
    /// Pre-update losses of the batch rows.
    pub losses: LossVector,
    pub mean_loss: f64,
    /// Norm of the gradient actually applied.
    pub grad_norm: f64,
}

/// One SGD step on a batch: forward (train mode), per-sample losses,
/// backward, update.
pub fn train_step(
    params: &mut ModelParams,
    batch: &Matrix,
    labels: &[usize],
    lr: f64,
    dropout_keep: f64,
    reduction: LossReduction,
    rng: &mut Rng,
) -> Result<TrainStepReport, NnError> {
    let pass = forward(params, batch, dropout_keep, rng, true)?;
    let losses = loss_per_sample(&pass.logits, labels)?;
    if losses.iter().any(|l| !l.is_finite()) {
        return Err(NnError::NonFinite {
            layer: params.layers.len() - 1,
            what: "loss",
        });
    }
    let mut grads = backward(params, &pass, labels)?;
    if reduction == LossReduction::Sum {
        grads.scale(batch.rows() as f64);
    }
    sgd_step(params, &grads, lr)?;
    let mean_loss = losses.mean();
    Ok(TrainStepReport {
        losses,
        mean_loss,
        grad_norm: grads.norm(),
    })
}

/// Predicted class (lowest index on ties) for every row, eval mode.
pub fn predict(params: &ModelParams, inputs: &Matrix) -> Result<Vec<usize>, NnError> {
    let logits = predict_logits(params, inputs)?;
    Ok(logits.iter_rows().map(|r| argmax(r).0).collect())
}

const EVAL_CHUNK: usize = 256;

/// Fraction of rows whose eval-mode argmax equals the label.
pub fn evaluate_accuracy(
    params: &ModelParams,
    inputs: &Matrix,
    labels: &[usize],
) -> Result<f64, NnError> {
    evaluate_accuracy_with(params, inputs, labels, Execution::default())
}

/// Like [`evaluate_accuracy`]; with `Parallel` the rows are scored in
/// independent chunks on the rayon pool.
pub fn evaluate_accuracy_with(
    params: &ModelParams,
    inputs: &Matrix,
    labels: &[usize],
    exec: Execution,
) -> Result<f64, NnError> {
    if inputs.rows() == 0 {
        return Err(NnError::Argument("accuracy of an empty set".into()));
    }
    check_labels(inputs.rows(), params.num_classes(), labels)?;
    let chunks = inputs.rows().div_ceil(EVAL_CHUNK);
    let counts = par::map_indices(exec, chunks, |c| -> Result<usize, NnError> {
        let start = c * EVAL_CHUNK;
        let end = (start + EVAL_CHUNK).min(inputs.rows());
        let part = inputs.slice_rows(start, end);
        let mut unused = Rng::new(0);
        let logits = forward_with(params, &part, 1.0, &mut unused, false, Execution::Sequential)?
            .logits;
        Ok(logits
            .iter_rows()
            .zip(&labels[start..end])
            .filter(|(row, &y)| argmax(row).0 == y)
            .count())
    });
    let mut correct = 0usize;
    for c in counts {
        correct += c?;
    }
    Ok(correct as f64 / inputs.rows() as f64)
}
