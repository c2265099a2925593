//! Two-branch fusion simulation.
//!
//! Simulates a pair of keypoint-detection branches over synthetic frames:
//! each branch is corrupted on its own half of the frames (disjoint,
//! complementary subsets). Corruption jitters the keypoint positions —
//! which is what creates branch error — and degrades the rendered heatmaps
//! the way an unreliable detector would (attenuated peaks, wider spread, a
//! noise floor), which is what the reliability classifier can see. The
//! classifier is trained on error-derived labels from a train split and
//! scored on the held-out split; fused decoding uses the trained scores.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{
    branch_features, fuse, fusion_label, train_classifier, FusionError, FusionExample,
    FusionTrainConfig,
};
use crate::body_model::BodyModel;
use crate::heatmap::{decode_argmax, render, HeatmapStack, KeypointSet};
use crate::metrics::{joint_distances_2d, MetricError, PerJointAccumulator, Unit};
use crate::rng::{derive_seed, rng_for_stream, standard_normal, ChaCha8Rng};
use crate::synthgen::{generate_record, GenConfig, PoseBank, SynthError, TrainingPair};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
}

/// How a corrupted branch degrades: keypoints jitter (position error), and
/// the rendered heatmaps lose confidence (attenuated peak, inflated σ, and
/// an additive noise floor).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorruptionProfile {
    pub jitter_std_px: f64,
    pub peak_attenuation: f64,
    pub sigma_scale: f64,
    pub noise_floor: f64,
}

impl Default for CorruptionProfile {
    fn default() -> Self {
        Self {
            jitter_std_px: 8.0,
            peak_attenuation: 0.55,
            sigma_scale: 1.8,
            noise_floor: 0.08,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionSimConfig {
    pub frames: u64,
    /// Leading fraction of frames used to train the classifier.
    pub train_fraction: f64,
    pub corruption: CorruptionProfile,
    pub classifier_lr: f64,
    pub classifier_epochs: usize,
    pub seed: u64,
}

impl Default for FusionSimConfig {
    fn default() -> Self {
        Self {
            frames: 1000,
            train_fraction: 0.75,
            corruption: CorruptionProfile::default(),
            classifier_lr: 0.5,
            classifier_epochs: 400,
            seed: 21,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FusionSimReport {
    pub frames: u64,
    pub train_frames: u64,
    pub eval_frames: u64,
    /// Whether a classifier was trained (needs both labels present).
    pub classifier_trained: bool,
    /// Held-out label agreement of the trained classifier.
    pub classifier_accuracy: f64,
    pub branch_first_mpjpe_px: f64,
    pub branch_second_mpjpe_px: f64,
    pub fused_mpjpe_px: f64,
    pub label_zero_count: u64,
    pub label_one_count: u64,
}

/// Renders a branch's heatmaps for a frame: ideal when clean, degraded when
/// corrupted.
fn branch_stack(
    pair: &TrainingPair,
    gen: &GenConfig,
    corrupted: bool,
    profile: &CorruptionProfile,
    rng: &mut ChaCha8Rng,
) -> Result<(HeatmapStack, KeypointSet), SimError> {
    if !corrupted {
        return Ok((pair.heatmaps.clone(), pair.keypoints_2d.clone()));
    }
    let mut kps = pair.keypoints_2d.clone();
    for (xy, vis) in kps.coords.iter_mut().zip(&kps.visibility) {
        if *vis {
            xy[0] += profile.jitter_std_px * standard_normal(rng);
            xy[1] += profile.jitter_std_px * standard_normal(rng);
        }
    }
    let stack = render(
        &kps,
        (gen.heatmap.height, gen.heatmap.width),
        gen.heatmap.stride,
        gen.heatmap.sigma * profile.sigma_scale,
    )
    .map_err(FusionError::from)?;
    let degraded: Vec<f64> = stack
        .data()
        .iter()
        .map(|v| profile.peak_attenuation * v + profile.noise_floor * rng.random::<f64>())
        .collect();
    let stack = HeatmapStack::from_grids(stack.geometry(), stack.n_joints(), degraded)
        .map_err(FusionError::from)?;
    Ok((stack, kps))
}

fn branch_error_px(stack: &HeatmapStack, gt: &KeypointSet) -> Result<f64, SimError> {
    let decoded = decode_argmax(stack);
    let dists = joint_distances_2d(&decoded, gt)?;
    let (sum, n) = dists
        .iter()
        .flatten()
        .fold((0.0, 0usize), |(s, n), d| (s + d, n + 1));
    if n == 0 {
        return Err(SimError::Metric(MetricError::NoOverlap));
    }
    Ok(sum / n as f64)
}

struct FrameData {
    first: HeatmapStack,
    second: HeatmapStack,
    gt: KeypointSet,
    err_first: f64,
    err_second: f64,
    features_first: Vec<f64>,
    features_second: Vec<f64>,
    label: u8,
}

/// Deterministically rebuilds frame `i` of the simulation.
fn build_frame(
    model: &BodyModel,
    bank: &PoseBank,
    gen: &GenConfig,
    sim: &FusionSimConfig,
    i: u64,
) -> Result<FrameData, SimError> {
    let pair = generate_record(model, bank, gen, i)?;
    // The first branch is corrupted on even frames, the second on odd ones:
    // disjoint, complementary halves.
    let first_corrupted = i % 2 == 0;
    let mut rng_first = rng_for_stream(derive_seed(sim.seed, 0xc0_01), i);
    let mut rng_second = rng_for_stream(derive_seed(sim.seed, 0xc0_02), i);
    let (first, _) = branch_stack(&pair, gen, first_corrupted, &sim.corruption, &mut rng_first)?;
    let (second, _) = branch_stack(
        &pair,
        gen,
        !first_corrupted,
        &sim.corruption,
        &mut rng_second,
    )?;
    let err_first = branch_error_px(&first, &pair.keypoints_2d)?;
    let err_second = branch_error_px(&second, &pair.keypoints_2d)?;
    Ok(FrameData {
        features_first: branch_features(&first),
        features_second: branch_features(&second),
        label: fusion_label(err_first, err_second)?,
        err_first,
        err_second,
        gt: pair.keypoints_2d,
        first,
        second,
    })
}

/// Runs the full simulation. Deterministic in `(gen.seed, sim.seed)`.
pub fn run_fusion_sim(
    model: &BodyModel,
    bank: &PoseBank,
    gen: &GenConfig,
    sim: &FusionSimConfig,
) -> Result<FusionSimReport, SimError> {
    if sim.frames < 4 {
        return Err(SimError::InvalidConfig("need at least 4 frames".into()));
    }
    if !(0.0..1.0).contains(&sim.train_fraction) || sim.train_fraction <= 0.0 {
        return Err(SimError::InvalidConfig(format!(
            "train_fraction {} outside (0, 1)",
            sim.train_fraction
        )));
    }
    let gen = gen.canonicalized();
    let n_train = ((sim.frames as f64 * sim.train_fraction) as u64).max(2);

    // Pass 1: branch errors, features, labels.
    let mut examples = Vec::with_capacity(n_train as usize);
    let mut eval_frames: Vec<(Vec<f64>, Vec<f64>, u8)> = Vec::new();
    let n_joints = model.num_keypoints();
    let mut acc_first = PerJointAccumulator::new(n_joints);
    let mut acc_second = PerJointAccumulator::new(n_joints);
    let mut label_counts = [0u64; 2];
    for i in 0..sim.frames {
        let frame = build_frame(model, bank, &gen, sim, i)?;
        label_counts[frame.label as usize] += 1;
        acc_first.add(&joint_distances_2d(&decode_argmax(&frame.first), &frame.gt)?);
        acc_second.add(&joint_distances_2d(
            &decode_argmax(&frame.second),
            &frame.gt,
        )?);
        if i < n_train {
            examples.push(FusionExample {
                f_first: frame.features_first,
                f_second: frame.features_second,
                label: frame.label,
            });
        } else {
            eval_frames.push((frame.features_first, frame.features_second, frame.label));
        }
        let _ = (frame.err_first, frame.err_second);
    }

    // Degenerate case (e.g. zero corruption): every frame ties to label 1 and
    // there is nothing to learn; fall back to an even 0.5 blend.
    let trained = if label_counts[0] > 0 && label_counts[1] > 0 {
        Some(
            train_classifier(
                &examples,
                &FusionTrainConfig {
                    learning_rate: sim.classifier_lr,
                    epochs: sim.classifier_epochs,
                    seed: derive_seed(sim.seed, 0xc1a5),
                },
            )?
            .classifier,
        )
    } else {
        None
    };

    let mut correct = 0u64;
    for (f1, f2, label) in &eval_frames {
        let score = match &trained {
            Some(clf) => clf.classify(f1, f2)?,
            None => 0.5,
        };
        if (score >= 0.5) == (*label == 1) {
            correct += 1;
        }
    }
    let accuracy = if eval_frames.is_empty() {
        0.0
    } else {
        correct as f64 / eval_frames.len() as f64
    };

    // Pass 2: fused decoding with the trained classifier.
    let mut acc_fused = PerJointAccumulator::new(n_joints);
    for i in 0..sim.frames {
        let frame = build_frame(model, bank, &gen, sim, i)?;
        let score = match &trained {
            Some(clf) => clf.classify(&frame.features_first, &frame.features_second)?,
            None => 0.5,
        };
        let fused = fuse(score, &frame.first, &frame.second)?;
        acc_fused.add(&joint_distances_2d(&decode_argmax(&fused), &frame.gt)?);
    }

    Ok(FusionSimReport {
        frames: sim.frames,
        train_frames: n_train,
        eval_frames: sim.frames - n_train,
        classifier_trained: trained.is_some(),
        classifier_accuracy: accuracy,
        branch_first_mpjpe_px: acc_first.finish("first", Unit::Px)?.mean,
        branch_second_mpjpe_px: acc_second.finish("second", Unit::Px)?.mean,
        fused_mpjpe_px: acc_fused.finish("fused", Unit::Px)?.mean,
        label_zero_count: label_counts[0],
        label_one_count: label_counts[1],
    })
}
