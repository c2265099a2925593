//! Heatmap-to-parameter mesh regression: a small dense network mapping
//! heatmap evidence to the 72 pose + 10 shape values, trained on synthetic
//! pairs, with finite-difference gradient verification and the standard
//! evaluation metrics.

mod checkpoint;
pub mod loss;
pub mod net;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta, CHECKPOINT_FORMAT};
pub use loss::{loss_and_grad, split_prediction, LossWeights, PRED_DIM};
pub use net::{Activation, DenseLayer, NetGradient, Real, RegressorNet};
pub use train::{train, OptimizerKind, TrainConfig, TrainOutput, TrainSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::body_model::{BodyModel, PoseParams, PosedBody, ShapeParams};
use crate::camera::{project, CameraIntrinsics};
use crate::heatmap::{decode_soft_argmax, HeatmapError, HeatmapStack, KeypointSet};
use crate::metrics::{
    joint_distances_2d, mpjpe_3d, pa_mpjpe, pve_t_sc_from_vertices, MetricError,
};
use crate::rng::rng_for_stream;
use crate::synthgen::{Manifest, ShardReader, SynthError, TrainingPair};

#[derive(Debug, Error)]
pub enum RegressorError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("training dataset is empty")]
    EmptyDataset,
    #[error("loss became non-finite at epoch {epoch}, batch {batch}; aborting")]
    NanLoss { epoch: usize, batch: usize },
    #[error("checkpoint {path}: {detail}")]
    Checkpoint { path: String, detail: String },
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Heatmap(#[from] HeatmapError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

/// How heatmap stacks become network inputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum InputSpec {
    /// Block-average pooled grids, flattened joint-major.
    Pooled { height: usize, width: usize },
    /// Soft-argmax coordinates, normalized to [−1, 1] per axis.
    Coords { temperature: f64 },
}

impl Default for InputSpec {
    fn default() -> Self {
        InputSpec::Pooled {
            height: 16,
            width: 16,
        }
    }
}

impl InputSpec {
    pub fn input_dim(&self, n_joints: usize) -> usize {
        match self {
            InputSpec::Pooled { height, width } => n_joints * height * width,
            InputSpec::Coords { .. } => n_joints * 2,
        }
    }

    /// Featurizes one stack. Pooled mode requires the grid to divide evenly
    /// into the pooled resolution.
    pub fn featurize(&self, stack: &HeatmapStack) -> Result<Vec<f64>, RegressorError> {
        match self {
            InputSpec::Pooled { height, width } => Ok(stack.avg_pool(*height, *width)?),
            InputSpec::Coords { temperature } => {
                let decoded = decode_soft_argmax(stack, *temperature)?;
                let geom = stack.geometry();
                let span_u = geom.width as f64 * geom.stride;
                let span_v = geom.height as f64 * geom.stride;
                let mut out = Vec::with_capacity(decoded.len() * 2);
                for xy in &decoded.coords {
                    out.push(2.0 * (xy[0] / span_u - 0.5));
                    out.push(2.0 * (xy[1] / span_v - 0.5));
                }
                Ok(out)
            }
        }
    }
}

/// Builds the default network for a model and input spec.
pub fn init_net(
    spec: &InputSpec,
    hidden: &[usize],
    n_joints: usize,
    seed: u64,
) -> RegressorNet<f32> {
    RegressorNet::init(spec.input_dim(n_joints), hidden, PRED_DIM, seed)
}

/// Feature-wise affine input normalization, fitted on the training set and
/// persisted with the checkpoint. Pooled heatmap features are sparse and
/// far from unit scale; standardizing them is what lets the dense layers
/// see per-sample contrast.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl Standardizer {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    /// Fits per-feature mean and standard deviation. Near-dead features get
    /// a floor so they pass through as (nearly) zeros instead of amplified
    /// noise.
    pub fn fit(set: &TrainSet) -> Self {
        let dim = set.input_dim;
        let n = set.count.max(1) as f64;
        let mut mean = vec![0.0f64; dim];
        for row in 0..set.count {
            for (m, x) in mean.iter_mut().zip(set.input_row(row)) {
                *m += *x as f64;
            }
        }
        for m in mean.iter_mut() {
            *m /= n;
        }
        let mut var = vec![0.0f64; dim];
        for row in 0..set.count {
            for ((v, m), x) in var.iter_mut().zip(&mean).zip(set.input_row(row)) {
                let d = *x as f64 - *m;
                *v += d * d;
            }
        }
        let std = var
            .iter()
            .map(|v| ((v / n).sqrt() as f32).max(1e-2))
            .collect();
        Self {
            mean: mean.iter().map(|&m| m as f32).collect(),
            std,
        }
    }

    pub fn apply_in_place(&self, row: &mut [f32]) {
        debug_assert_eq!(row.len(), self.mean.len());
        for ((x, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
            *x = (*x - m) / s;
        }
    }

    /// Standardizes every row of a training set in place.
    pub fn apply_to_set(&self, set: &mut TrainSet) {
        let dim = set.input_dim;
        for row in set.inputs.chunks_exact_mut(dim) {
            self.apply_in_place(row);
        }
    }
}

/// Network forward pass returning typed parameters.
pub fn forward(
    net: &RegressorNet<f32>,
    standardizer: &Standardizer,
    spec: &InputSpec,
    heatmaps: &HeatmapStack,
) -> Result<(PoseParams, ShapeParams), RegressorError> {
    let features = spec.featurize(heatmaps)?;
    if features.len() != net.input_dim() {
        return Err(RegressorError::ShapeMismatch(format!(
            "featurized input has {} values, net expects {}",
            features.len(),
            net.input_dim()
        )));
    }
    let mut input: Vec<f32> = features.iter().map(|&v| v as f32).collect();
    standardizer.apply_in_place(&mut input);
    let pred = net.forward_one(&input);
    let pred_f64: Vec<f64> = pred.iter().map(|&v| v as f64).collect();
    split_prediction(&pred_f64)
}

/// Full inference: heatmaps → (θ̂, β̂) → posed body.
pub fn infer_mesh(
    net: &RegressorNet<f32>,
    standardizer: &Standardizer,
    spec: &InputSpec,
    heatmaps: &HeatmapStack,
    model: &BodyModel,
) -> Result<PosedBody, RegressorError> {
    let (theta, beta) = forward(net, standardizer, spec, heatmaps)?;
    Ok(model.pose(&theta, &beta))
}

/// Loads and featurizes a shard dataset into an in-memory training set.
/// Shards are processed in parallel but assembled in manifest order, so the
/// row order is deterministic. With `validate` set, every record is
/// re-derived from its own parameters and compared at stored precision.
/// `jitter` optionally re-renders each record's heatmaps from Gaussian-
/// jittered keypoints (std px, derive seed) before featurization — the
/// training-input augmentation switch; stored records stay ideal.
pub fn load_training_set(
    manifest_path: impl AsRef<std::path::Path>,
    model: &BodyModel,
    intrinsics: &CameraIntrinsics,
    spec: &InputSpec,
    validate: bool,
    jitter: Option<(f64, u64)>,
) -> Result<(Manifest, TrainSet), RegressorError> {
    let manifest_path = manifest_path.as_ref();
    let manifest = Manifest::load(manifest_path)?;
    let input_dim = spec.input_dim(manifest.heatmap.n_joints as usize);
    let paths = manifest.shard_paths(manifest_path);

    let per_shard: Vec<Result<(Vec<f32>, Vec<f32>), RegressorError>> = paths
        .par_iter()
        .map(|path| {
            let reader = ShardReader::open(path)?;
            let header = *reader.header();
            let mut inputs = Vec::new();
            let mut targets = Vec::new();
            for record in reader {
                let pair = record?;
                if validate {
                    crate::synthgen::validate_pair(model, &header, intrinsics, &pair, path)?;
                }
                let features = match jitter {
                    Some((std, seed)) if std > 0.0 => {
                        let mut rng = rng_for_stream(seed ^ 0x6a17, pair.id);
                        let mut kps = pair.keypoints_2d.clone();
                        for (xy, vis) in kps.coords.iter_mut().zip(&kps.visibility) {
                            if *vis {
                                xy[0] += std * crate::rng::standard_normal(&mut rng);
                                xy[1] += std * crate::rng::standard_normal(&mut rng);
                            }
                        }
                        let geometry = pair.heatmaps.geometry();
                        let stack = crate::heatmap::render(
                            &kps,
                            (geometry.height, geometry.width),
                            geometry.stride,
                            header.sigma as f64,
                        )?;
                        spec.featurize(&stack)?
                    }
                    _ => spec.featurize(&pair.heatmaps)?,
                };
                inputs.extend(features.iter().map(|&v| v as f32));
                targets.extend(pair.theta.to_flat().iter().map(|&v| v as f32));
                targets.extend(pair.beta.coeffs.iter().map(|&v| v as f32));
            }
            Ok((inputs, targets))
        })
        .collect();

    let mut inputs = Vec::new();
    let mut targets = Vec::new();
    for shard in per_shard {
        let (i, t) = shard?;
        inputs.extend(i);
        targets.extend(t);
    }
    let set = TrainSet::from_rows(inputs, targets, input_dim)?;
    Ok((manifest, set))
}

/// Report from a finite-difference gradient verification run.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked_params: usize,
    /// Worst (layer, flat parameter index, analytic, numeric).
    pub worst: (usize, usize, f64, f64),
}

/// Verifies analytic parameter gradients of `loss ∘ net` against central
/// finite differences on an f64 copy of the net. Every layer is probed at
/// `samples_per_layer` seeded parameter positions (all, if the layer is
/// small).
#[allow(clippy::too_many_arguments)]
pub fn grad_check(
    net: &RegressorNet<f32>,
    input: &[f64],
    theta_gt: &PoseParams,
    beta_gt: &ShapeParams,
    model: &BodyModel,
    weights: &LossWeights,
    samples_per_layer: usize,
    seed: u64,
) -> Result<GradCheckReport, RegressorError> {
    let net64: RegressorNet<f64> = net.convert();
    if input.len() != net64.input_dim() {
        return Err(RegressorError::ShapeMismatch(format!(
            "input has {} values, net expects {}",
            input.len(),
            net64.input_dim()
        )));
    }
    let loss_of = |net: &RegressorNet<f64>| -> Result<f64, RegressorError> {
        let pred = net.forward_one(input);
        Ok(loss_and_grad(&pred, theta_gt, beta_gt, model, weights)?.0)
    };

    let cache = net64.forward_batch(input, 1);
    let (_, d_pred) = loss_and_grad(&cache.outputs, theta_gt, beta_gt, model, weights)?;
    let analytic = net64.backward(&cache, &d_pred);

    let step = 1e-5;
    let mut rng = rng_for_stream(seed, 0x9c);
    let mut samples: Vec<(usize, usize, f64, f64)> = Vec::new();
    for (l, layer) in net64.layers.iter().enumerate() {
        let total = layer.weights.len() + layer.bias.len();
        let picks: Vec<usize> = if total <= samples_per_layer {
            (0..total).collect()
        } else {
            use rand::Rng;
            (0..samples_per_layer)
                .map(|_| rng.random_range(0..total))
                .collect()
        };
        for flat in picks {
            let mut plus = net64.clone();
            let mut minus = net64.clone();
            let (an, bump_plus, bump_minus): (f64, &mut f64, &mut f64) =
                if flat < layer.weights.len() {
                    (
                        analytic.layers[l].0[flat],
                        &mut plus.layers[l].weights[flat],
                        &mut minus.layers[l].weights[flat],
                    )
                } else {
                    let b = flat - layer.weights.len();
                    (
                        analytic.layers[l].1[b],
                        &mut plus.layers[l].bias[b],
                        &mut minus.layers[l].bias[b],
                    )
                };
            *bump_plus += step;
            *bump_minus -= step;
            let fd = (loss_of(&plus)? - loss_of(&minus)?) / (2.0 * step);
            samples.push((l, flat, an, fd));
        }
    }

    // Relative error with a scale-aware floor: components far below the
    // gradient's overall magnitude are dominated by finite-difference
    // cancellation noise, not by gradient defects.
    let scale = samples
        .iter()
        .map(|(_, _, an, fd)| an.abs().max(fd.abs()))
        .fold(0.0f64, f64::max);
    let floor = (1e-5 * scale).max(1e-12);
    let mut max_rel = 0.0f64;
    let mut worst = (0, 0, 0.0, 0.0);
    for &(l, flat, an, fd) in &samples {
        let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(floor);
        if rel > max_rel {
            max_rel = rel;
            worst = (l, flat, an, fd);
        }
    }
    Ok(GradCheckReport {
        max_rel_error: max_rel,
        checked_params: samples.len(),
        worst,
    })
}

/// Aggregated evaluation over a dataset: the full metric suite the
/// pipeline reports.
#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub count: usize,
    pub mpjpe_3d_mm: f64,
    pub pa_mpjpe_mm: f64,
    pub pve_t_sc_mm: f64,
    pub mpjpe_2d_px: f64,
    /// Present when a px→cm scale was configured.
    pub mpjpe_2d_cm: Option<f64>,
    /// PCK@α with per-frame torso-diameter normalization; absent when the
    /// keypoint layout lacks hips/shoulders.
    pub pck: Option<f64>,
    pub pck_alpha: f64,
}

/// Streaming evaluation accumulator; feed `(pair, prediction)` per record.
pub struct EvalAccumulator<'a> {
    model: &'a BodyModel,
    intrinsics: CameraIntrinsics,
    pck_alpha: f64,
    px_per_cm: Option<f64>,
    count: usize,
    sum_3d: f64,
    sum_pa: f64,
    sum_pve: f64,
    sum_2d: f64,
    count_2d: usize,
    pck_hits: Vec<usize>,
    pck_counts: Vec<usize>,
}

impl<'a> EvalAccumulator<'a> {
    pub fn new(model: &'a BodyModel, intrinsics: CameraIntrinsics) -> Self {
        Self::with_options(model, intrinsics, 0.3, None)
    }

    pub fn with_options(
        model: &'a BodyModel,
        intrinsics: CameraIntrinsics,
        pck_alpha: f64,
        px_per_cm: Option<f64>,
    ) -> Self {
        let n = model.num_keypoints();
        Self {
            model,
            intrinsics,
            pck_alpha,
            px_per_cm,
            count: 0,
            sum_3d: 0.0,
            sum_pa: 0.0,
            sum_pve: 0.0,
            sum_2d: 0.0,
            count_2d: 0,
            pck_hits: vec![0; n],
            pck_counts: vec![0; n],
        }
    }

    pub fn add_prediction(
        &mut self,
        pair: &TrainingPair,
        theta_hat: &PoseParams,
        beta_hat: &ShapeParams,
    ) -> Result<(), RegressorError> {
        let pred_body = self.model.pose(theta_hat, beta_hat);
        let gt_body = self.model.pose(&pair.theta, &pair.beta);

        self.sum_3d += mpjpe_3d(&pred_body.joints, &gt_body.joints)?.mean;
        self.sum_pa += pa_mpjpe(&pred_body.joints, &gt_body.joints)?.mean;

        let pred_t = self.model.t_pose_vertices(beta_hat);
        let gt_t = self.model.t_pose_vertices(&pair.beta);
        self.sum_pve += pve_t_sc_from_vertices(&pred_t, &gt_t)?;

        // 2D error of the reprojected predicted keypoints under the stored
        // ground-truth camera (the regressor does not predict a camera).
        let (coords, _) = project(&pred_body.keypoints_3d, &self.intrinsics, &pair.extrinsics);
        let pred_kps = KeypointSet::visible(coords);
        if let Ok(dists) = joint_distances_2d(&pred_kps, &pair.keypoints_2d) {
            let visible: Vec<f64> = dists.iter().copied().flatten().collect();
            if !visible.is_empty() {
                self.sum_2d += visible.iter().sum::<f64>() / visible.len() as f64;
                self.count_2d += 1;
            }
            if let Some(norm) = crate::metrics::torso_diameter_px(&pair.keypoints_2d) {
                for (j, d) in dists.iter().enumerate() {
                    if let Some(d) = d {
                        self.pck_counts[j] += 1;
                        if *d <= self.pck_alpha * norm {
                            self.pck_hits[j] += 1;
                        }
                    }
                }
            }
        }
        self.count += 1;
        Ok(())
    }

    pub fn add_net(
        &mut self,
        net: &RegressorNet<f32>,
        standardizer: &Standardizer,
        spec: &InputSpec,
        pair: &TrainingPair,
    ) -> Result<(), RegressorError> {
        let (theta, beta) = forward(net, standardizer, spec, &pair.heatmaps)?;
        self.add_prediction(pair, &theta, &beta)
    }

    pub fn finish(&self) -> Result<EvalReport, RegressorError> {
        if self.count == 0 {
            return Err(RegressorError::EmptyDataset);
        }
        let n = self.count as f64;
        let mpjpe_2d_px = if self.count_2d > 0 {
            self.sum_2d / self.count_2d as f64
        } else {
            f64::NAN
        };
        let per_joint_pck: Vec<f64> = self
            .pck_hits
            .iter()
            .zip(&self.pck_counts)
            .filter(|(_, &c)| c > 0)
            .map(|(&h, &c)| h as f64 / c as f64)
            .collect();
        Ok(EvalReport {
            count: self.count,
            mpjpe_3d_mm: self.sum_3d / n,
            pa_mpjpe_mm: self.sum_pa / n,
            pve_t_sc_mm: self.sum_pve / n,
            mpjpe_2d_px,
            mpjpe_2d_cm: self.px_per_cm.map(|scale| mpjpe_2d_px / scale),
            pck: if per_joint_pck.is_empty() {
                None
            } else {
                Some(per_joint_pck.iter().sum::<f64>() / per_joint_pck.len() as f64)
            },
            pck_alpha: self.pck_alpha,
        })
    }
}
