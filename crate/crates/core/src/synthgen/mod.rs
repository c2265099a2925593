//! Synthetic training-pair generation: sample (pose, shape, camera), pose
//! the model, project the keypoints, render heatmaps, and persist dataset
//! shards.
//!
//! Determinism contract: every record is generated from an RNG seeded by
//! `derive_seed(seed, record_id)`, so dataset bytes depend only on
//! `(seed, config)` — never on worker count or scheduling. Parameters are
//! quantized to f32 before any geometry runs, which makes the persisted
//! records exactly reproducible from their own stored fields.

pub mod shard;

use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::body_model::{BodyModel, PoseParams, ShapeParams, NUM_JOINTS, NUM_POSE_PARAMS};
use crate::camera::{
    project, sample_camera, CameraError, CameraExtrinsics, CameraIntrinsics, CameraSamplingConfig,
};
use crate::heatmap::{render, HeatmapError, HeatmapStack, KeypointSet};
use crate::rng::{rng_for_stream, standard_normal, uniform_in, ChaCha8Rng};

pub use shard::{read_shard, write_shard, HeatmapPrecision, ShardHeader, ShardReader};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("pose bank source is empty")]
    EmptyBank,
    #[error("pose bank row {row}: {detail}")]
    MalformedPose { row: usize, detail: String },
    #[error("pose bank file {path}: {source}")]
    BankIo {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid generation config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Camera(#[from] CameraError),
    #[error(transparent)]
    Heatmap(#[from] HeatmapError),
    #[error(
        "visibility rejection exhausted after {attempts} attempts for record(s) {record_ids:?}; \
         camera ranges are likely misconfigured"
    )]
    VisibilityExhausted {
        attempts: usize,
        record_ids: Vec<u64>,
    },
    #[error("dataset io at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("shard {path} at byte {offset}: {detail}")]
    Shard {
        path: String,
        offset: u64,
        detail: String,
    },
    #[error("manifest {path}: {detail}")]
    Manifest { path: String, detail: String },
}

/// A bank of poses to sample from.
#[derive(Debug, Clone)]
pub struct PoseBank {
    pub poses: Vec<PoseParams>,
    pub source: String,
    pub weights: Option<Vec<f64>>,
}

impl PoseBank {
    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }
}

/// Where a pose bank comes from: a θ-per-line text file, or the procedural
/// supine generator.
#[derive(Debug, Clone)]
pub enum BankSource {
    File(PathBuf),
    Procedural { count: usize },
}

/// The supine base pose: arms brought down to the sides, elbows slightly
/// bent; everything else at the neutral pose (the template already lies
/// supine).
pub fn supine_base_pose() -> PoseParams {
    let mut base = PoseParams::zeros();
    base.joints[crate::body_model::joints::L_SHOULDER] = [0.0, 1.25, 0.0];
    base.joints[crate::body_model::joints::R_SHOULDER] = [0.0, -1.25, 0.0];
    base.joints[crate::body_model::joints::L_ELBOW] = [0.0, 0.15, 0.0];
    base.joints[crate::body_model::joints::R_ELBOW] = [0.0, -0.15, 0.0];
    base
}

/// Per-joint perturbation limits (radians, offsets from the base pose),
/// loosely following what a lying patient can do: knees and elbows bend one
/// way, spine and head stay within small ranges, hips and shoulders move
/// the most.
pub fn anatomical_limits() -> [[(f64, f64); 3]; NUM_JOINTS] {
    use crate::body_model::joints::*;
    let mut limits = [[(0.0, 0.0); 3]; NUM_JOINTS];
    let sym = |r: f64| (-r, r);
    // The root stays nearly flat on the table: yaw (y) varies the most,
    // roll (z) a little, pitch (x) almost not at all.
    limits[PELVIS] = [sym(0.01), sym(0.06), sym(0.03)];
    for hip in [L_HIP, R_HIP] {
        limits[hip] = [(-0.2, 0.45), sym(0.15), sym(0.2)];
    }
    for knee in [L_KNEE, R_KNEE] {
        limits[knee] = [(0.0, 0.9), sym(0.05), sym(0.05)];
    }
    for ankle in [L_ANKLE, R_ANKLE] {
        limits[ankle] = [sym(0.25), sym(0.1), sym(0.1)];
    }
    for foot in [L_FOOT, R_FOOT] {
        limits[foot] = [sym(0.1), sym(0.1), sym(0.1)];
    }
    // Pitch (x) stays small on the trunk, neck and head for the same
    // reason: the torso rests on the table.
    for spine in [SPINE1, SPINE2, SPINE3] {
        limits[spine] = [sym(0.025), sym(0.05), sym(0.05)];
    }
    limits[NECK] = [(-0.03, 0.04), sym(0.15), sym(0.1)];
    limits[HEAD] = [(-0.04, 0.06), sym(0.25), sym(0.15)];
    for collar in [L_COLLAR, R_COLLAR] {
        limits[collar] = [sym(0.05), sym(0.05), sym(0.05)];
    }
    limits[L_SHOULDER] = [sym(0.3), (-0.5, 0.3), sym(0.3)];
    limits[R_SHOULDER] = [sym(0.3), (-0.3, 0.5), sym(0.3)];
    limits[L_ELBOW] = [sym(0.15), (0.0, 0.9), sym(0.1)];
    limits[R_ELBOW] = [sym(0.15), (-0.9, 0.0), sym(0.1)];
    for wrist in [L_WRIST, R_WRIST] {
        limits[wrist] = [sym(0.25), sym(0.25), sym(0.25)];
    }
    for hand in [L_HAND, R_HAND] {
        limits[hand] = [sym(0.1), sym(0.1), sym(0.1)];
    }
    limits
}

/// Builds a pose bank. Procedural mode synthesizes lying-pose-centric
/// samples: the supine base pose plus per-joint perturbations drawn
/// uniformly within the anatomical limits table. File mode parses one
/// whitespace-separated 72-value θ row per line.
pub fn build_pose_bank(source: &BankSource, seed: u64) -> Result<PoseBank, SynthError> {
    match source {
        BankSource::Procedural { count } => {
            if *count == 0 {
                return Err(SynthError::EmptyBank);
            }
            let base = supine_base_pose();
            let limits = anatomical_limits();
            let mut rng = rng_for_stream(seed, 0xba_4e);
            let poses = (0..*count)
                .map(|_| {
                    let mut theta = base;
                    for (j, joint_limits) in limits.iter().enumerate() {
                        for (axis, (lo, hi)) in joint_limits.iter().enumerate() {
                            theta.joints[j][axis] += uniform_in(&mut rng, *lo, *hi);
                        }
                    }
                    theta
                })
                .collect();
            Ok(PoseBank {
                poses,
                source: format!("procedural:{count}"),
                weights: None,
            })
        }
        BankSource::File(path) => {
            let text = std::fs::read_to_string(path).map_err(|source| SynthError::BankIo {
                path: path.display().to_string(),
                source,
            })?;
            let mut poses = Vec::new();
            for (row, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let values: Result<Vec<f64>, _> =
                    line.split_whitespace().map(str::parse::<f64>).collect();
                let values = values.map_err(|e| SynthError::MalformedPose {
                    row,
                    detail: e.to_string(),
                })?;
                if values.len() != NUM_POSE_PARAMS {
                    return Err(SynthError::MalformedPose {
                        row,
                        detail: format!(
                            "expected {NUM_POSE_PARAMS} values, found {}",
                            values.len()
                        ),
                    });
                }
                if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
                    return Err(SynthError::MalformedPose {
                        row,
                        detail: format!("non-finite value {bad}"),
                    });
                }
                poses.push(PoseParams::from_flat(&values).unwrap());
            }
            if poses.is_empty() {
                return Err(SynthError::EmptyBank);
            }
            Ok(PoseBank {
                poses,
                source: path.display().to_string(),
                weights: None,
            })
        }
    }
}

/// Heatmap rendering parameters for generated pairs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeatmapParams {
    pub height: usize,
    pub width: usize,
    pub stride: f64,
    pub sigma: f64,
}

impl Default for HeatmapParams {
    /// Covers the default 640×480 image: 48×64 cells at stride 10,
    /// σ of two cells.
    fn default() -> Self {
        Self {
            height: 48,
            width: 64,
            stride: 10.0,
            sigma: 20.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub count: u64,
    pub beta_std: f64,
    /// Gaussian augmentation noise added to bank poses; each joint axis
    /// gets std `pose_noise_std ×` its anatomical range width, so the
    /// noise follows the same limits the procedural bank does.
    pub pose_noise_std: f64,
    pub camera: CameraSamplingConfig,
    pub intrinsics: CameraIntrinsics,
    pub heatmap: HeatmapParams,
    pub seed: u64,
    pub shard_size: u64,
    pub heatmap_precision: HeatmapPrecision,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            count: 20_000,
            beta_std: 1.0,
            pose_noise_std: 0.05,
            camera: CameraSamplingConfig::default(),
            intrinsics: CameraIntrinsics::default(),
            heatmap: HeatmapParams::default(),
            seed: 7,
            shard_size: 2048,
            heatmap_precision: HeatmapPrecision::F16,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.count < 1 {
            return Err(SynthError::InvalidConfig("count must be ≥ 1".into()));
        }
        if !(self.beta_std > 0.0) {
            return Err(SynthError::InvalidConfig(format!(
                "beta_std must be > 0, got {}",
                self.beta_std
            )));
        }
        if self.pose_noise_std < 0.0 {
            return Err(SynthError::InvalidConfig(format!(
                "pose_noise_std must be ≥ 0, got {}",
                self.pose_noise_std
            )));
        }
        if self.shard_size < 1 {
            return Err(SynthError::InvalidConfig("shard_size must be ≥ 1".into()));
        }
        if self.heatmap.height == 0 || self.heatmap.width == 0 {
            return Err(SynthError::InvalidConfig("heatmap resolution is zero".into()));
        }
        if self.heatmap.stride <= 0.0 || self.heatmap.sigma <= 0.0 {
            return Err(SynthError::InvalidConfig(
                "heatmap stride and sigma must be positive".into(),
            ));
        }
        self.camera.validate()?;
        Ok(())
    }

    /// Quantizes the continuous knobs to f32 so generated records round-trip
    /// through shard files bit-exactly.
    pub fn canonicalized(&self) -> Self {
        let q = |x: f64| x as f32 as f64;
        let mut out = self.clone();
        out.heatmap.stride = q(out.heatmap.stride);
        out.heatmap.sigma = q(out.heatmap.sigma);
        out
    }
}

/// Maximum resampling attempts before visibility rejection gives up.
pub const MAX_SAMPLE_ATTEMPTS: usize = 100;

/// One synthetic supervision record.
#[derive(Debug, Clone)]
pub struct TrainingPair {
    pub id: u64,
    pub theta: PoseParams,
    pub beta: ShapeParams,
    pub extrinsics: CameraExtrinsics,
    pub keypoints_2d: KeypointSet,
    pub heatmaps: HeatmapStack,
}

fn quantize_pose(theta: &PoseParams) -> PoseParams {
    let mut out = *theta;
    for aa in out.joints.iter_mut() {
        for c in aa.iter_mut() {
            *c = *c as f32 as f64;
        }
    }
    out
}

fn quantize_shape(beta: &ShapeParams) -> ShapeParams {
    let mut out = *beta;
    for c in out.coeffs.iter_mut() {
        *c = *c as f32 as f64;
    }
    out
}

fn quantize_extrinsics(extr: &CameraExtrinsics) -> CameraExtrinsics {
    let mut flat = extr.to_flat();
    for x in flat.iter_mut() {
        *x = *x as f32 as f64;
    }
    CameraExtrinsics::from_flat(&flat).expect("quantized rotation stays orthonormal")
}

/// Deterministically recomputes a pair's keypoints and heatmaps from its
/// parameters; the single code path shared by generation and on-read
/// validation.
pub fn derive_observation(
    model: &BodyModel,
    theta: &PoseParams,
    beta: &ShapeParams,
    extr: &CameraExtrinsics,
    intr: &CameraIntrinsics,
    heatmap: &HeatmapParams,
) -> Result<(KeypointSet, HeatmapStack), SynthError> {
    let body = model.pose(theta, beta);
    let (coords, visibility) = project(&body.keypoints_3d, intr, extr);
    let confidence = visibility
        .iter()
        .map(|&v| if v { 1.0 } else { 0.0 })
        .collect();
    let kps = KeypointSet::new(coords, confidence, visibility)
        .expect("projection output is a valid keypoint set");
    let heatmaps = render(
        &kps,
        (heatmap.height, heatmap.width),
        heatmap.stride,
        heatmap.sigma,
    )?;
    Ok((kps, heatmaps))
}

/// Samples one training pair: a bank pose with Gaussian augmentation noise,
/// a Gaussian shape, and a camera draw, rejecting-and-resampling frames with
/// fewer than half the keypoints visible.
pub fn sample_pair(
    model: &BodyModel,
    bank: &PoseBank,
    cfg: &GenConfig,
    rng: &mut ChaCha8Rng,
    record_id: u64,
) -> Result<TrainingPair, SynthError> {
    if bank.is_empty() {
        return Err(SynthError::EmptyBank);
    }
    let cfg = cfg.canonicalized();
    let min_visible = model.num_keypoints().div_ceil(2);
    for _ in 0..MAX_SAMPLE_ATTEMPTS {
        let idx = match &bank.weights {
            None => rng.random_range(0..bank.len()),
            Some(weights) => {
                let total: f64 = weights.iter().sum();
                let mut pick = rng.random::<f64>() * total;
                let mut chosen = bank.len() - 1;
                for (i, w) in weights.iter().enumerate() {
                    if pick < *w {
                        chosen = i;
                        break;
                    }
                    pick -= w;
                }
                chosen
            }
        };
        let mut theta = bank.poses[idx];
        if cfg.pose_noise_std > 0.0 {
            // Augmentation respects the anatomy: each axis gets Gaussian
            // noise proportional to its limit range, so axes a supine
            // patient cannot move stay still.
            let limits = anatomical_limits();
            for (j, aa) in theta.joints.iter_mut().enumerate() {
                for (axis, c) in aa.iter_mut().enumerate() {
                    let (lo, hi) = limits[j][axis];
                    *c += cfg.pose_noise_std * (hi - lo) * standard_normal(rng);
                }
            }
        }
        let mut beta = ShapeParams::zeros();
        for c in beta.coeffs.iter_mut() {
            *c = cfg.beta_std * standard_normal(rng);
        }
        let extr = sample_camera(&cfg.camera, rng)?;

        let theta = quantize_pose(&theta);
        let beta = quantize_shape(&beta);
        let extr = quantize_extrinsics(&extr);

        let (kps, heatmaps) =
            derive_observation(model, &theta, &beta, &extr, &cfg.intrinsics, &cfg.heatmap)?;
        let visible = kps.visibility.iter().filter(|&&v| v).count();
        if visible < min_visible {
            continue;
        }
        return Ok(TrainingPair {
            id: record_id,
            theta,
            beta,
            extrinsics: extr,
            keypoints_2d: kps,
            heatmaps,
        });
    }
    Err(SynthError::VisibilityExhausted {
        attempts: MAX_SAMPLE_ATTEMPTS,
        record_ids: vec![record_id],
    })
}

/// Generates a record from scratch given only `(cfg.seed, record_id)`.
pub fn generate_record(
    model: &BodyModel,
    bank: &PoseBank,
    cfg: &GenConfig,
    record_id: u64,
) -> Result<TrainingPair, SynthError> {
    let mut rng = rng_for_stream(cfg.seed, record_id);
    sample_pair(model, bank, cfg, &mut rng, record_id)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestShard {
    pub name: String,
    pub count: u64,
}

/// Dataset manifest: shard list plus everything needed to reproduce or
/// validate the dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub seed: u64,
    pub count: u64,
    pub config_hash: String,
    pub visibility_threshold: u64,
    pub bank_source: String,
    pub heatmap: ShardHeader,
    pub shards: Vec<ManifestShard>,
}

impl Manifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, SynthError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| SynthError::Manifest {
            path: path.display().to_string(),
            detail: e.to_string(),
        })?;
        let manifest: Manifest = toml::from_str(&text).map_err(|e| SynthError::Manifest {
            path: path.display().to_string(),
            detail: e.to_string(),
        })?;
        if manifest.format != "spmk-manifest-v1" {
            return Err(SynthError::Manifest {
                path: path.display().to_string(),
                detail: format!("unsupported manifest format `{}`", manifest.format),
            });
        }
        Ok(manifest)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), SynthError> {
        let path = path.as_ref();
        let text = toml::to_string(self).expect("manifest serializes");
        std::fs::write(path, text).map_err(|e| SynthError::Manifest {
            path: path.display().to_string(),
            detail: e.to_string(),
        })
    }

    /// Shard paths relative to the manifest location.
    pub fn shard_paths(&self, manifest_path: &Path) -> Vec<PathBuf> {
        let dir = manifest_path.parent().unwrap_or_else(|| Path::new("."));
        self.shards.iter().map(|s| dir.join(&s.name)).collect()
    }
}

/// Generates `cfg.count` records into shard files under `out_dir` and
/// writes `manifest.toml` last. Shards are generated in parallel; bytes are
/// identical for any worker count.
pub fn generate_dataset(
    model: &BodyModel,
    bank: &PoseBank,
    cfg: &GenConfig,
    out_dir: impl AsRef<Path>,
) -> Result<PathBuf, SynthError> {
    cfg.validate()?;
    if bank.is_empty() {
        return Err(SynthError::EmptyBank);
    }
    let cfg = cfg.canonicalized();
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir).map_err(|e| SynthError::Io {
        path: out_dir.display().to_string(),
        source: e,
    })?;

    let header = ShardHeader {
        precision: cfg.heatmap_precision,
        n_joints: model.num_keypoints() as u16,
        height: cfg.heatmap.height as u16,
        width: cfg.heatmap.width as u16,
        stride: cfg.heatmap.stride as f32,
        sigma: cfg.heatmap.sigma as f32,
    };

    let n_shards = cfg.count.div_ceil(cfg.shard_size);
    let shard_jobs: Vec<(u64, u64, u64)> = (0..n_shards)
        .map(|s| {
            let start = s * cfg.shard_size;
            let end = (start + cfg.shard_size).min(cfg.count);
            (s, start, end)
        })
        .collect();

    let results: Vec<Result<ManifestShard, SynthError>> = shard_jobs
        .par_iter()
        .map(|&(s, start, end)| {
            let name = format!("shard_{s:05}.spmk");
            let path = out_dir.join(&name);
            let mut pairs = Vec::with_capacity((end - start) as usize);
            let mut rejected = Vec::new();
            for id in start..end {
                match generate_record(model, bank, &cfg, id) {
                    Ok(pair) => pairs.push(pair),
                    Err(SynthError::VisibilityExhausted { record_ids, .. }) => {
                        rejected.extend(record_ids);
                    }
                    Err(other) => return Err(other),
                }
            }
            if !rejected.is_empty() {
                return Err(SynthError::VisibilityExhausted {
                    attempts: MAX_SAMPLE_ATTEMPTS,
                    record_ids: rejected,
                });
            }
            write_shard(&path, &header, &pairs)?;
            Ok(ManifestShard {
                name,
                count: end - start,
            })
        })
        .collect();

    let mut shards = Vec::with_capacity(results.len());
    let mut all_rejected = Vec::new();
    for result in results {
        match result {
            Ok(shard) => shards.push(shard),
            Err(SynthError::VisibilityExhausted { record_ids, .. }) => {
                all_rejected.extend(record_ids)
            }
            Err(other) => return Err(other),
        }
    }
    if !all_rejected.is_empty() {
        all_rejected.sort_unstable();
        return Err(SynthError::VisibilityExhausted {
            attempts: MAX_SAMPLE_ATTEMPTS,
            record_ids: all_rejected,
        });
    }

    let manifest = Manifest {
        format: "spmk-manifest-v1".into(),
        seed: cfg.seed,
        count: cfg.count,
        config_hash: crate::config::stable_hash_hex(
            &toml::to_string(&cfg).expect("gen config serializes"),
        ),
        visibility_threshold: model.num_keypoints().div_ceil(2) as u64,
        bank_source: bank.source.clone(),
        heatmap: header,
        shards,
    };
    let manifest_path = out_dir.join("manifest.toml");
    manifest.save(&manifest_path)?;
    Ok(manifest_path)
}

/// Reads every record listed in a manifest, optionally re-validating each
/// record's internal consistency (keypoints and heatmaps re-derived from the
/// stored parameters must match the stored bytes exactly at the stored
/// precision).
pub fn read_dataset(
    manifest_path: impl AsRef<Path>,
    model: Option<&BodyModel>,
    intrinsics: &CameraIntrinsics,
) -> Result<(Manifest, Vec<TrainingPair>), SynthError> {
    let manifest_path = manifest_path.as_ref();
    let manifest = Manifest::load(manifest_path)?;
    let paths = manifest.shard_paths(manifest_path);
    let per_shard: Vec<Result<Vec<TrainingPair>, SynthError>> = paths
        .par_iter()
        .map(|path| {
            let (header, pairs) = read_shard(path)?;
            if header != manifest.heatmap {
                return Err(SynthError::Shard {
                    path: path.display().to_string(),
                    offset: 0,
                    detail: "shard header disagrees with manifest".into(),
                });
            }
            if let Some(model) = model {
                for pair in &pairs {
                    validate_pair(model, &header, intrinsics, pair, path)?;
                }
            }
            Ok(pairs)
        })
        .collect();
    let mut pairs = Vec::with_capacity(manifest.count as usize);
    for shard in per_shard {
        pairs.extend(shard?);
    }
    Ok((manifest, pairs))
}

/// Re-derives a stored record from its own parameters and checks the stored
/// keypoints and heatmaps bit-for-bit at the stored precision.
pub fn validate_pair(
    model: &BodyModel,
    header: &ShardHeader,
    intrinsics: &CameraIntrinsics,
    pair: &TrainingPair,
    path: &Path,
) -> Result<(), SynthError> {
    let params = HeatmapParams {
        height: header.height as usize,
        width: header.width as usize,
        stride: header.stride as f64,
        sigma: header.sigma as f64,
    };
    let (kps, heatmaps) = derive_observation(
        model,
        &pair.theta,
        &pair.beta,
        &pair.extrinsics,
        intrinsics,
        &params,
    )?;
    let fail = |detail: String| SynthError::Shard {
        path: path.display().to_string(),
        offset: 0,
        detail: format!("record {}: {detail}", pair.id),
    };
    for j in 0..kps.len() {
        if kps.visibility[j] != pair.keypoints_2d.visibility[j] {
            return Err(fail(format!("keypoint {j} visibility mismatch")));
        }
        for axis in 0..2 {
            let expect = kps.coords[j][axis] as f32;
            let got = pair.keypoints_2d.coords[j][axis] as f32;
            if expect.to_bits() != got.to_bits() {
                return Err(fail(format!(
                    "keypoint {j} axis {axis}: stored {got}, derived {expect}"
                )));
            }
        }
    }
    for (i, (&derived, &stored)) in heatmaps.data().iter().zip(pair.heatmaps.data()).enumerate() {
        let matches = match header.precision {
            HeatmapPrecision::F32 => (derived as f32).to_bits() == (stored as f32).to_bits(),
            HeatmapPrecision::F16 => {
                half::f16::from_f64(derived).to_bits() == half::f16::from_f64(stored).to_bits()
            }
        };
        if !matches {
            return Err(fail(format!(
                "heatmap cell {i}: stored {stored}, derived {derived}"
            )));
        }
    }
    Ok(())
}
