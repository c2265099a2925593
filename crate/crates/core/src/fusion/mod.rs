//! Score-based two-branch fusion.
//!
//! A binary classifier looks at summary features from both branches and
//! produces a reliability score in (0, 1): the probability that the first
//! branch is the more accurate one. Classifier labels during training come
//! from the branch errors (label 0 when the first branch's error is larger,
//! 1 otherwise), and at inference the score convexly blends the two heatmap
//! stacks before decoding.
//!
//! Branch features are heatmap statistics (per-joint peak value, normalized
//! entropy, and peak sharpness), grouped per joint. The classifier mixes
//! them with a learned softmax attention over the per-joint groups within
//! each branch and a bilinear cross-branch gate, both feeding a linear
//! logit.

pub mod sim;

use std::fmt::Write as _;
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use crate::heatmap::{HeatmapError, HeatmapStack};
use crate::rng::{rng_from_seed, standard_normal};

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("branch error must be finite and nonnegative, got {0}")]
    InvalidBranchError(f64),
    #[error("fusion score {0} outside [0, 1]")]
    ScoreOutOfRange(f64),
    #[error(transparent)]
    Heatmap(#[from] HeatmapError),
    #[error("feature dimension mismatch: classifier expects {expected}, got {got}")]
    FeatureDimMismatch { expected: usize, got: usize },
    #[error("feature dimension {0} is not a multiple of the per-joint group size 3")]
    BadFeatureDim(usize),
    #[error("training set must contain both labels")]
    SingleClassDataset,
    #[error("training set is empty")]
    EmptyDataset,
    #[error("checkpoint file {path}: {detail}")]
    Checkpoint { path: String, detail: String },
}

/// Classifier label from branch errors: 0 when the first branch's error is
/// strictly larger, 1 when it is strictly smaller, and 1 on an exact tie.
pub fn fusion_label(err_first: f64, err_second: f64) -> Result<u8, FusionError> {
    for err in [err_first, err_second] {
        if !err.is_finite() || err < 0.0 {
            return Err(FusionError::InvalidBranchError(err));
        }
    }
    Ok(if err_first > err_second { 0 } else { 1 })
}

/// Score-weighted heatmap fusion: `score·first + (1−score)·second` per cell.
pub fn fuse(
    score: f64,
    h_first: &HeatmapStack,
    h_second: &HeatmapStack,
) -> Result<HeatmapStack, FusionError> {
    if !(0.0..=1.0).contains(&score) {
        return Err(FusionError::ScoreOutOfRange(score));
    }
    if !h_first.same_shape(h_second) {
        return Err(FusionError::Heatmap(HeatmapError::ShapeMismatch(format!(
            "{}x{}x{} vs {}x{}x{}",
            h_first.n_joints(),
            h_first.geometry().height,
            h_first.geometry().width,
            h_second.n_joints(),
            h_second.geometry().height,
            h_second.geometry().width,
        ))));
    }
    let data: Vec<f64> = h_first
        .data()
        .iter()
        .zip(h_second.data())
        .map(|(a, b)| score * a + (1.0 - score) * b)
        .collect();
    Ok(HeatmapStack::from_grids(
        h_first.geometry(),
        h_first.n_joints(),
        data,
    )?)
}

/// Number of statistics per joint group: peak, entropy, sharpness.
pub const STATS_PER_JOINT: usize = 3;
pub const STAT_NAMES: [&str; STATS_PER_JOINT] = ["peak", "entropy", "sharpness"];

/// Summary feature for one branch: per joint, the peak value, the grid
/// entropy normalized to [0, 1], and the peak sharpness (peak minus grid
/// mean). Heatmap quality is what predicts branch reliability here.
pub fn branch_features(stack: &HeatmapStack) -> Vec<f64> {
    let cells = (stack.geometry().height * stack.geometry().width) as f64;
    let max_entropy = cells.ln();
    let mut out = Vec::with_capacity(stack.n_joints() * STATS_PER_JOINT);
    for j in 0..stack.n_joints() {
        let grid = stack.grid(j);
        let peak = grid.iter().copied().fold(0.0, f64::max);
        let total: f64 = grid.iter().sum();
        let entropy = if total <= 0.0 {
            1.0 // an empty grid carries no information, same as uniform
        } else {
            let mut h = 0.0;
            for &v in grid {
                if v > 0.0 {
                    let p = v / total;
                    h -= p * p.ln();
                }
            }
            h / max_entropy
        };
        let mean = total / cells;
        out.push(peak);
        out.push(entropy);
        out.push(peak - mean);
    }
    out
}

/// The reliability classifier. Per branch, a learned softmax attention pools
/// the per-joint feature groups into a 3-vector; four bilinear forms gate
/// the two pooled vectors against each other; a linear layer maps
/// `[p₁, p₂, p₁−p₂, gates]` to the logit.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionClassifier {
    pub feature_dim: usize,
    /// Intra-branch attention: score of group g is `a·f_g + b`.
    pub attn_weight: [[f64; STATS_PER_JOINT]; 2],
    pub attn_bias: [f64; 2],
    /// Inter-branch bilinear forms, row-major 3×3 each.
    pub bilinear: [[f64; 9]; NUM_GATES],
    pub head_weight: [f64; HEAD_INPUTS],
    pub head_bias: f64,
}

pub const NUM_GATES: usize = 4;
pub const HEAD_INPUTS: usize = 3 * STATS_PER_JOINT + NUM_GATES;

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

struct ForwardCache {
    alpha: [Vec<f64>; 2],
    pooled: [[f64; STATS_PER_JOINT]; 2],
    gates: [f64; NUM_GATES],
    inputs: [f64; HEAD_INPUTS],
    score: f64,
}

impl FusionClassifier {
    /// Small random initialization; deterministic per seed.
    pub fn init(feature_dim: usize, seed: u64) -> Result<Self, FusionError> {
        if feature_dim == 0 || feature_dim % STATS_PER_JOINT != 0 {
            return Err(FusionError::BadFeatureDim(feature_dim));
        }
        let mut rng = rng_from_seed(seed);
        let mut draw = || 0.1 * standard_normal(&mut rng);
        let mut clf = Self {
            feature_dim,
            attn_weight: [[0.0; STATS_PER_JOINT]; 2],
            attn_bias: [0.0; 2],
            bilinear: [[0.0; 9]; NUM_GATES],
            head_weight: [0.0; HEAD_INPUTS],
            head_bias: 0.0,
        };
        for branch in 0..2 {
            for w in clf.attn_weight[branch].iter_mut() {
                *w = draw();
            }
            clf.attn_bias[branch] = draw();
        }
        for form in clf.bilinear.iter_mut() {
            for w in form.iter_mut() {
                *w = draw();
            }
        }
        for w in clf.head_weight.iter_mut() {
            *w = draw();
        }
        Ok(clf)
    }

    pub fn num_groups(&self) -> usize {
        self.feature_dim / STATS_PER_JOINT
    }

    fn check_dims(&self, f_first: &[f64], f_second: &[f64]) -> Result<(), FusionError> {
        for f in [f_first, f_second] {
            if f.len() != self.feature_dim {
                return Err(FusionError::FeatureDimMismatch {
                    expected: self.feature_dim,
                    got: f.len(),
                });
            }
        }
        Ok(())
    }

    fn forward(&self, f_first: &[f64], f_second: &[f64]) -> ForwardCache {
        let groups = self.num_groups();
        let mut alpha: [Vec<f64>; 2] = [vec![0.0; groups], vec![0.0; groups]];
        let mut pooled = [[0.0; STATS_PER_JOINT]; 2];
        for (branch, features) in [f_first, f_second].into_iter().enumerate() {
            let mut scores = vec![0.0; groups];
            for g in 0..groups {
                let sub = &features[g * STATS_PER_JOINT..(g + 1) * STATS_PER_JOINT];
                scores[g] = self.attn_bias[branch]
                    + sub
                        .iter()
                        .zip(&self.attn_weight[branch])
                        .map(|(x, w)| x * w)
                        .sum::<f64>();
            }
            let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for (a, s) in alpha[branch].iter_mut().zip(&scores) {
                *a = (s - max).exp();
                total += *a;
            }
            for (g, a) in alpha[branch].iter_mut().enumerate() {
                *a /= total;
                let sub = &features[g * STATS_PER_JOINT..(g + 1) * STATS_PER_JOINT];
                for (p, x) in pooled[branch].iter_mut().zip(sub) {
                    *p += *a * x;
                }
            }
        }

        let mut gates = [0.0; NUM_GATES];
        for (k, form) in self.bilinear.iter().enumerate() {
            let mut z = 0.0;
            for r in 0..STATS_PER_JOINT {
                for c in 0..STATS_PER_JOINT {
                    z += pooled[0][r] * form[3 * r + c] * pooled[1][c];
                }
            }
            gates[k] = sigmoid(z);
        }

        let mut inputs = [0.0; HEAD_INPUTS];
        inputs[..3].copy_from_slice(&pooled[0]);
        inputs[3..6].copy_from_slice(&pooled[1]);
        for c in 0..3 {
            inputs[6 + c] = pooled[0][c] - pooled[1][c];
        }
        inputs[9..].copy_from_slice(&gates);

        let logit = self.head_bias
            + inputs
                .iter()
                .zip(&self.head_weight)
                .map(|(x, w)| x * w)
                .sum::<f64>();
        ForwardCache {
            alpha,
            pooled,
            gates,
            inputs,
            score: sigmoid(logit),
        }
    }

    /// Reliability score in (0, 1): the probability that the first branch
    /// gives the more accurate prediction.
    pub fn classify(&self, f_first: &[f64], f_second: &[f64]) -> Result<f64, FusionError> {
        self.check_dims(f_first, f_second)?;
        Ok(self.forward(f_first, f_second).score)
    }
}

/// Convenience free function mirroring the classifier method.
pub fn classify(
    clf: &FusionClassifier,
    f_first: &[f64],
    f_second: &[f64],
) -> Result<f64, FusionError> {
    clf.classify(f_first, f_second)
}

#[derive(Debug, Clone, Copy)]
pub struct FusionTrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for FusionTrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.5,
            epochs: 400,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FusionTrainResult {
    pub classifier: FusionClassifier,
    /// Mean binary cross-entropy per epoch.
    pub loss_curve: Vec<f64>,
}

/// One labeled fusion example: branch features and the error-derived label.
#[derive(Debug, Clone)]
pub struct FusionExample {
    pub f_first: Vec<f64>,
    pub f_second: Vec<f64>,
    pub label: u8,
}

/// Full-batch gradient descent on the binary cross-entropy. Deterministic
/// under the config seed.
pub fn train_classifier(
    examples: &[FusionExample],
    cfg: &FusionTrainConfig,
) -> Result<FusionTrainResult, FusionError> {
    let first = examples.first().ok_or(FusionError::EmptyDataset)?;
    let dim = first.f_first.len();
    let has_zero = examples.iter().any(|e| e.label == 0);
    let has_one = examples.iter().any(|e| e.label != 0);
    if !(has_zero && has_one) {
        return Err(FusionError::SingleClassDataset);
    }
    let mut clf = FusionClassifier::init(dim, cfg.seed)?;
    for ex in examples {
        clf.check_dims(&ex.f_first, &ex.f_second)?;
    }

    let mut loss_curve = Vec::with_capacity(cfg.epochs);
    let inv_n = 1.0 / examples.len() as f64;
    for _ in 0..cfg.epochs {
        let mut grad = Gradient::zeros();
        let mut loss = 0.0;
        for ex in examples {
            loss += accumulate_example(&clf, ex, &mut grad);
        }
        loss *= inv_n;
        grad.scale(inv_n);
        clf.apply_gradient(&grad, cfg.learning_rate);
        loss_curve.push(loss);
    }
    Ok(FusionTrainResult {
        classifier: clf,
        loss_curve,
    })
}

struct Gradient {
    attn_weight: [[f64; STATS_PER_JOINT]; 2],
    attn_bias: [f64; 2],
    bilinear: [[f64; 9]; NUM_GATES],
    head_weight: [f64; HEAD_INPUTS],
    head_bias: f64,
}

impl Gradient {
    fn zeros() -> Self {
        Self {
            attn_weight: [[0.0; STATS_PER_JOINT]; 2],
            attn_bias: [0.0; 2],
            bilinear: [[0.0; 9]; NUM_GATES],
            head_weight: [0.0; HEAD_INPUTS],
            head_bias: 0.0,
        }
    }

    fn scale(&mut self, s: f64) {
        for branch in 0..2 {
            for w in self.attn_weight[branch].iter_mut() {
                *w *= s;
            }
            self.attn_bias[branch] *= s;
        }
        for form in self.bilinear.iter_mut() {
            for w in form.iter_mut() {
                *w *= s;
            }
        }
        for w in self.head_weight.iter_mut() {
            *w *= s;
        }
        self.head_bias *= s;
    }
}

impl FusionClassifier {
    fn apply_gradient(&mut self, grad: &Gradient, lr: f64) {
        for branch in 0..2 {
            for (w, g) in self.attn_weight[branch]
                .iter_mut()
                .zip(&grad.attn_weight[branch])
            {
                *w -= lr * g;
            }
            self.attn_bias[branch] -= lr * grad.attn_bias[branch];
        }
        for (form, gform) in self.bilinear.iter_mut().zip(&grad.bilinear) {
            for (w, g) in form.iter_mut().zip(gform) {
                *w -= lr * g;
            }
        }
        for (w, g) in self.head_weight.iter_mut().zip(&grad.head_weight) {
            *w -= lr * g;
        }
        self.head_bias -= lr * grad.head_bias;
    }
}

/// Backprop for one example; returns its BCE loss.
fn accumulate_example(clf: &FusionClassifier, ex: &FusionExample, grad: &mut Gradient) -> f64 {
    let cache = clf.forward(&ex.f_first, &ex.f_second);
    let y = f64::from(ex.label);
    let eps = 1e-12;
    let loss = -(y * (cache.score + eps).ln() + (1.0 - y) * (1.0 - cache.score + eps).ln());

    let dlogit = cache.score - y;
    grad.head_bias += dlogit;
    let mut dinputs = [0.0; HEAD_INPUTS];
    for i in 0..HEAD_INPUTS {
        grad.head_weight[i] += dlogit * cache.inputs[i];
        dinputs[i] = dlogit * clf.head_weight[i];
    }

    let mut dpooled = [[0.0; STATS_PER_JOINT]; 2];
    for c in 0..3 {
        dpooled[0][c] += dinputs[c] + dinputs[6 + c];
        dpooled[1][c] += dinputs[3 + c] - dinputs[6 + c];
    }
    for k in 0..NUM_GATES {
        let dgate = dinputs[9 + k];
        let dz = dgate * cache.gates[k] * (1.0 - cache.gates[k]);
        for r in 0..STATS_PER_JOINT {
            for c in 0..STATS_PER_JOINT {
                grad.bilinear[k][3 * r + c] += dz * cache.pooled[0][r] * cache.pooled[1][c];
                dpooled[0][r] += dz * clf.bilinear[k][3 * r + c] * cache.pooled[1][c];
                dpooled[1][c] += dz * clf.bilinear[k][3 * r + c] * cache.pooled[0][r];
            }
        }
    }

    let groups = clf.num_groups();
    for (branch, features) in [&ex.f_first, &ex.f_second].into_iter().enumerate() {
        // dL/dα_g, then softmax backward to the attention parameters.
        let mut dalpha = vec![0.0; groups];
        for g in 0..groups {
            let sub = &features[g * STATS_PER_JOINT..(g + 1) * STATS_PER_JOINT];
            for c in 0..STATS_PER_JOINT {
                dalpha[g] += dpooled[branch][c] * sub[c];
            }
        }
        let inner: f64 = cache.alpha[branch]
            .iter()
            .zip(&dalpha)
            .map(|(a, d)| a * d)
            .sum();
        for g in 0..groups {
            let dscore = cache.alpha[branch][g] * (dalpha[g] - inner);
            let sub = &features[g * STATS_PER_JOINT..(g + 1) * STATS_PER_JOINT];
            for c in 0..STATS_PER_JOINT {
                grad.attn_weight[branch][c] += dscore * sub[c];
            }
            grad.attn_bias[branch] += dscore;
        }
    }
    loss
}

/// Writes the classifier checkpoint: a TOML document with the weight arrays
/// and a `feature_spec` block describing the heatmap-statistic layout.
pub fn save_classifier(clf: &FusionClassifier, path: impl AsRef<Path>) -> Result<(), FusionError> {
    let path = path.as_ref();
    let mut out = String::new();
    let _ = writeln!(out, "format = \"fusion-classifier-v1\"");
    let _ = writeln!(out);
    let _ = writeln!(out, "[feature_spec]");
    let _ = writeln!(out, "n_joints = {}", clf.num_groups());
    let _ = writeln!(out, "stats = [\"peak\", \"entropy\", \"sharpness\"]");
    let _ = writeln!(out, "dim = {}", clf.feature_dim);
    let _ = writeln!(out);
    let _ = writeln!(out, "[weights]");
    let fmt = |xs: &[f64]| -> String {
        let parts: Vec<String> = xs.iter().map(|x| format!("{x:?}")).collect();
        format!("[{}]", parts.join(", "))
    };
    let _ = writeln!(out, "attn_weight_first = {}", fmt(&clf.attn_weight[0]));
    let _ = writeln!(out, "attn_weight_second = {}", fmt(&clf.attn_weight[1]));
    let _ = writeln!(out, "attn_bias = {}", fmt(&clf.attn_bias));
    for (k, form) in clf.bilinear.iter().enumerate() {
        let _ = writeln!(out, "bilinear_{k} = {}", fmt(form));
    }
    let _ = writeln!(out, "head_weight = {}", fmt(&clf.head_weight));
    let _ = writeln!(out, "head_bias = {:?}", clf.head_bias);
    std::fs::write(path, out).map_err(|e| FusionError::Checkpoint {
        path: path.display().to_string(),
        detail: e.to_string(),
    })
}

pub fn load_classifier(path: impl AsRef<Path>) -> Result<FusionClassifier, FusionError> {
    let path = path.as_ref();
    let err = |detail: String| FusionError::Checkpoint {
        path: path.display().to_string(),
        detail,
    };
    let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;

    #[derive(Deserialize)]
    struct Raw {
        format: String,
        feature_spec: RawSpec,
        weights: RawWeights,
    }
    #[derive(Deserialize)]
    struct RawSpec {
        dim: usize,
    }
    #[derive(Deserialize)]
    struct RawWeights {
        attn_weight_first: Vec<f64>,
        attn_weight_second: Vec<f64>,
        attn_bias: Vec<f64>,
        bilinear_0: Vec<f64>,
        bilinear_1: Vec<f64>,
        bilinear_2: Vec<f64>,
        bilinear_3: Vec<f64>,
        head_weight: Vec<f64>,
        head_bias: f64,
    }

    let raw: Raw = toml::from_str(&text).map_err(|e| err(e.to_string()))?;
    if raw.format != "fusion-classifier-v1" {
        return Err(err(format!("unsupported format `{}`", raw.format)));
    }
    let vec3 = |v: &[f64], name: &str| -> Result<[f64; 3], FusionError> {
        v.try_into()
            .map_err(|_| err(format!("field `{name}` must have 3 elements")))
    };
    let vec9 = |v: &[f64], name: &str| -> Result<[f64; 9], FusionError> {
        v.try_into()
            .map_err(|_| err(format!("field `{name}` must have 9 elements")))
    };
    let clf = FusionClassifier {
        feature_dim: raw.feature_spec.dim,
        attn_weight: [
            vec3(&raw.weights.attn_weight_first, "attn_weight_first")?,
            vec3(&raw.weights.attn_weight_second, "attn_weight_second")?,
        ],
        attn_bias: raw
            .weights
            .attn_bias
            .as_slice()
            .try_into()
            .map_err(|_| err("field `attn_bias` must have 2 elements".into()))?,
        bilinear: [
            vec9(&raw.weights.bilinear_0, "bilinear_0")?,
            vec9(&raw.weights.bilinear_1, "bilinear_1")?,
            vec9(&raw.weights.bilinear_2, "bilinear_2")?,
            vec9(&raw.weights.bilinear_3, "bilinear_3")?,
        ],
        head_weight: raw
            .weights
            .head_weight
            .as_slice()
            .try_into()
            .map_err(|_| err(format!("field `head_weight` must have {HEAD_INPUTS} elements")))?,
        head_bias: raw.weights.head_bias,
    };
    if clf.feature_dim == 0 || clf.feature_dim % STATS_PER_JOINT != 0 {
        return Err(err(format!("bad feature dim {}", clf.feature_dim)));
    }
    Ok(clf)
}
