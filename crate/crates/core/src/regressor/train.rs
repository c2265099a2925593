//! Mini-batch training of the mesh regressor.
//!
//! Determinism contract: batch order is fixed by `(seed, epoch)`, and each
//! batch is split into a fixed number of chunks whose gradients are reduced
//! in chunk order — results are bit-identical for any worker count, and in
//! particular single-threaded runs reproduce exactly.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::{loss_and_grad, LossWeights, PRED_DIM};
use super::net::{NetGradient, RegressorNet};
use super::{InputSpec, RegressorError};
use crate::body_model::{BodyModel, NUM_POSE_PARAMS};
use crate::rng::rng_for_stream;
use rand::seq::SliceRandom;

/// Batches always split into this many gradient chunks, independent of the
/// thread count, so parallel reductions keep a fixed summation order.
const GRAD_CHUNKS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Momentum,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub weights: LossWeights,
    pub optimizer: OptimizerKind,
    pub input: InputSpec,
    pub hidden: Vec<usize>,
    /// 0 means "use however many threads the global pool has".
    pub threads: usize,
    /// Standardize featurized inputs with training-set statistics (the
    /// statistics persist in the checkpoint for inference).
    pub standardize_inputs: bool,
    /// Optional training-input augmentation: when enabled, each record's
    /// heatmaps are re-rendered from keypoints jittered by this Gaussian
    /// std (px) before featurization. Stored pairs always keep their ideal
    /// renders; the jitter exists only on the loader path.
    pub augment_input_jitter: bool,
    pub input_jitter_px: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-3,
            batch_size: 128,
            epochs: 30,
            seed: 7,
            weights: LossWeights::default(),
            optimizer: OptimizerKind::Adam,
            input: InputSpec::default(),
            hidden: vec![512, 256],
            threads: 0,
            standardize_inputs: true,
            augment_input_jitter: false,
            input_jitter_px: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), RegressorError> {
        if self.learning_rate < 0.0 || !self.learning_rate.is_finite() {
            return Err(RegressorError::InvalidConfig(format!(
                "learning rate {} must be finite and ≥ 0",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(RegressorError::InvalidConfig("batch_size must be ≥ 1".into()));
        }
        if self.epochs == 0 {
            return Err(RegressorError::InvalidConfig("epochs must be ≥ 1".into()));
        }
        if self.hidden.is_empty() || self.hidden.iter().any(|&h| h == 0) {
            return Err(RegressorError::InvalidConfig(
                "hidden layer widths must be nonzero".into(),
            ));
        }
        self.weights.validate()
    }
}

/// An in-memory training set: featurized inputs and (θ, β) targets, both
/// f32, batch-gatherable by row.
#[derive(Debug, Clone)]
pub struct TrainSet {
    pub inputs: Vec<f32>,
    pub targets: Vec<f32>,
    pub count: usize,
    pub input_dim: usize,
}

impl TrainSet {
    pub fn from_rows(
        inputs: Vec<f32>,
        targets: Vec<f32>,
        input_dim: usize,
    ) -> Result<Self, RegressorError> {
        if input_dim == 0 || inputs.len() % input_dim != 0 {
            return Err(RegressorError::ShapeMismatch(format!(
                "input buffer {} not divisible by dim {input_dim}",
                inputs.len()
            )));
        }
        let count = inputs.len() / input_dim;
        if targets.len() != count * PRED_DIM {
            return Err(RegressorError::ShapeMismatch(format!(
                "target buffer {} rows, expected {count}",
                targets.len() / PRED_DIM
            )));
        }
        Ok(Self {
            inputs,
            targets,
            count,
            input_dim,
        })
    }

    pub fn input_row(&self, i: usize) -> &[f32] {
        &self.inputs[i * self.input_dim..(i + 1) * self.input_dim]
    }

    pub fn target_row(&self, i: usize) -> &[f32] {
        &self.targets[i * PRED_DIM..(i + 1) * PRED_DIM]
    }
}

struct Optimizer {
    kind: OptimizerKind,
    lr: f32,
    step: u64,
    momentum: Vec<(Vec<f32>, Vec<f32>)>,
    second: Vec<(Vec<f32>, Vec<f32>)>,
}

const MOMENTUM_BETA: f32 = 0.9;
const ADAM_BETA1: f32 = 0.9;
const ADAM_BETA2: f32 = 0.999;
const ADAM_EPS: f32 = 1e-8;

impl Optimizer {
    fn new(kind: OptimizerKind, lr: f64, net: &RegressorNet<f32>) -> Self {
        let zeros = || {
            net.layers
                .iter()
                .map(|l| (vec![0.0f32; l.weights.len()], vec![0.0f32; l.bias.len()]))
                .collect::<Vec<_>>()
        };
        let (momentum, second) = match kind {
            OptimizerKind::Sgd => (Vec::new(), Vec::new()),
            OptimizerKind::Momentum => (zeros(), Vec::new()),
            OptimizerKind::Adam => (zeros(), zeros()),
        };
        Self {
            kind,
            lr: lr as f32,
            step: 0,
            momentum,
            second,
        }
    }

    fn apply(&mut self, net: &mut RegressorNet<f32>, grad: &NetGradient<f32>) {
        self.step += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (layer, (gw, gb)) in net.layers.iter_mut().zip(&grad.layers) {
                    for (w, g) in layer.weights.iter_mut().zip(gw) {
                        *w -= self.lr * g;
                    }
                    for (b, g) in layer.bias.iter_mut().zip(gb) {
                        *b -= self.lr * g;
                    }
                }
            }
            OptimizerKind::Momentum => {
                for ((layer, (gw, gb)), (mw, mb)) in net
                    .layers
                    .iter_mut()
                    .zip(&grad.layers)
                    .zip(self.momentum.iter_mut())
                {
                    for ((w, g), m) in layer.weights.iter_mut().zip(gw).zip(mw.iter_mut()) {
                        *m = MOMENTUM_BETA * *m + g;
                        *w -= self.lr * *m;
                    }
                    for ((b, g), m) in layer.bias.iter_mut().zip(gb).zip(mb.iter_mut()) {
                        *m = MOMENTUM_BETA * *m + g;
                        *b -= self.lr * *m;
                    }
                }
            }
            OptimizerKind::Adam => {
                let t = self.step as f32;
                let bias1 = 1.0 - ADAM_BETA1.powi(t as i32);
                let bias2 = 1.0 - ADAM_BETA2.powi(t as i32);
                for (((layer, (gw, gb)), (mw, mb)), (vw, vb)) in net
                    .layers
                    .iter_mut()
                    .zip(&grad.layers)
                    .zip(self.momentum.iter_mut())
                    .zip(self.second.iter_mut())
                {
                    let update = |p: &mut f32, g: f32, m: &mut f32, v: &mut f32, lr: f32| {
                        *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                        *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                        let mhat = *m / bias1;
                        let vhat = *v / bias2;
                        *p -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
                    };
                    for ((w, g), (m, v)) in layer
                        .weights
                        .iter_mut()
                        .zip(gw)
                        .zip(mw.iter_mut().zip(vw.iter_mut()))
                    {
                        update(w, *g, m, v, self.lr);
                    }
                    for ((b, g), (m, v)) in layer
                        .bias
                        .iter_mut()
                        .zip(gb)
                        .zip(mb.iter_mut().zip(vb.iter_mut()))
                    {
                        update(b, *g, m, v, self.lr);
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    /// Mean training loss per epoch.
    pub loss_curve: Vec<f64>,
}

/// Trains the net in place. The loss gradient is computed in f64 per sample
/// (including the posed-joint term when enabled) and backpropagated in f32.
pub fn train(
    net: &mut RegressorNet<f32>,
    data: &TrainSet,
    model: &BodyModel,
    cfg: &TrainConfig,
) -> Result<TrainOutput, RegressorError> {
    cfg.validate()?;
    if data.count == 0 {
        return Err(RegressorError::EmptyDataset);
    }
    if net.input_dim() != data.input_dim {
        return Err(RegressorError::ShapeMismatch(format!(
            "net expects input dim {}, dataset has {}",
            net.input_dim(),
            data.input_dim
        )));
    }
    if net.output_dim() != PRED_DIM {
        return Err(RegressorError::ShapeMismatch(format!(
            "net output dim {} != {PRED_DIM}",
            net.output_dim()
        )));
    }

    let mut optimizer = Optimizer::new(cfg.optimizer, cfg.learning_rate, net);
    let mut indices: Vec<usize> = (0..data.count).collect();
    let mut loss_curve = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut rng = rng_for_stream(cfg.seed, epoch as u64);
        indices.shuffle(&mut rng);

        let mut epoch_loss = 0.0f64;
        for (batch_idx, batch) in indices.chunks(cfg.batch_size).enumerate() {
            let chunk_size = batch.len().div_ceil(GRAD_CHUNKS);
            let chunks: Vec<&[usize]> = batch.chunks(chunk_size).collect();
            let results: Vec<(f64, NetGradient<f32>)> = chunks
                .par_iter()
                .map(|chunk| process_chunk(net, data, model, cfg, chunk))
                .collect::<Result<_, _>>()?;

            let mut total = NetGradient::zeros_like(net);
            let mut batch_loss = 0.0;
            for (loss, grad) in &results {
                batch_loss += loss;
                total.add_assign(grad);
            }
            batch_loss /= batch.len() as f64;
            total.scale(1.0 / batch.len() as f32);

            if !batch_loss.is_finite() || !net.params_finite() {
                return Err(RegressorError::NanLoss {
                    epoch,
                    batch: batch_idx,
                });
            }
            optimizer.apply(net, &total);
            epoch_loss += batch_loss * batch.len() as f64;
        }
        loss_curve.push(epoch_loss / data.count as f64);
    }
    Ok(TrainOutput { loss_curve })
}

fn process_chunk(
    net: &RegressorNet<f32>,
    data: &TrainSet,
    model: &BodyModel,
    cfg: &TrainConfig,
    chunk: &[usize],
) -> Result<(f64, NetGradient<f32>), RegressorError> {
    let dim = data.input_dim;
    let mut inputs = Vec::with_capacity(chunk.len() * dim);
    for &i in chunk {
        inputs.extend_from_slice(data.input_row(i));
    }
    let cache = net.forward_batch(&inputs, chunk.len());

    let mut loss_sum = 0.0f64;
    let mut d_out = vec![0.0f32; chunk.len() * PRED_DIM];
    for (b, &i) in chunk.iter().enumerate() {
        let pred: Vec<f64> = cache.outputs[b * PRED_DIM..(b + 1) * PRED_DIM]
            .iter()
            .map(|&v| v as f64)
            .collect();
        let target = data.target_row(i);
        let theta_gt = crate::body_model::PoseParams::from_flat(
            &target[..NUM_POSE_PARAMS]
                .iter()
                .map(|&v| v as f64)
                .collect::<Vec<_>>(),
        )
        .unwrap();
        let beta_gt = crate::body_model::ShapeParams::from_slice(
            &target[NUM_POSE_PARAMS..]
                .iter()
                .map(|&v| v as f64)
                .collect::<Vec<_>>(),
        )
        .unwrap();
        let (loss, grad) = loss_and_grad(&pred, &theta_gt, &beta_gt, model, &cfg.weights)?;
        loss_sum += loss;
        for (dst, g) in d_out[b * PRED_DIM..(b + 1) * PRED_DIM].iter_mut().zip(&grad) {
            *dst = *g as f32;
        }
    }
    Ok((loss_sum, net.backward(&cache, &d_out)))
}
