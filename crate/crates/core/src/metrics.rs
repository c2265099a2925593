//! Evaluation metrics: 2D MPJPE (px or cm), PCK@α, 3D MPJPE, Procrustes-
//! aligned MPJPE, and scale-corrected neutral-pose per-vertex error.
//!
//! Geometry comes in meters and pixels; reports convert at the edge (mm for
//! 3D metrics, px or cm for 2D). All functions are pure and stateless.

use nalgebra::{Matrix3, Vector3};
use serde::Serialize;
use thiserror::Error;

use crate::body_model::{BodyModel, ShapeParams};
use crate::heatmap::KeypointSet;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("no overlapping visible joints between prediction and ground truth")]
    NoOverlap,
    #[error("threshold inputs must be positive: {0}")]
    NonPositiveThreshold(String),
    #[error("degenerate point configuration: {0}")]
    Degenerate(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Unit {
    #[serde(rename = "px")]
    Px,
    #[serde(rename = "cm")]
    Cm,
    #[serde(rename = "mm")]
    Mm,
    #[serde(rename = "fraction")]
    Fraction,
}

impl std::fmt::Display for Unit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Unit::Px => "px",
            Unit::Cm => "cm",
            Unit::Mm => "mm",
            Unit::Fraction => "fraction",
        };
        f.write_str(s)
    }
}

/// A metric aggregate: per-joint values (for per-joint metrics), their mean,
/// the unit, and how many samples went in.
#[derive(Debug, Clone, Serialize)]
pub struct MetricReport {
    pub name: String,
    pub per_joint: Vec<f64>,
    pub mean: f64,
    pub unit: Unit,
    pub count: usize,
}

impl MetricReport {
    fn from_per_joint(name: &str, per_joint: Vec<f64>, unit: Unit, count: usize) -> Self {
        let mean = per_joint.iter().sum::<f64>() / per_joint.len() as f64;
        Self {
            name: name.to_string(),
            per_joint,
            mean,
            unit,
            count,
        }
    }

    fn scalar(name: &str, value: f64, unit: Unit, count: usize) -> Self {
        Self {
            name: name.to_string(),
            per_joint: vec![value],
            mean: value,
            unit,
            count,
        }
    }
}

/// Accumulates per-joint sums over frames; joints are only counted in frames
/// where both prediction and ground truth are visible.
#[derive(Debug, Clone)]
pub struct PerJointAccumulator {
    sums: Vec<f64>,
    counts: Vec<usize>,
    frames: usize,
}

impl PerJointAccumulator {
    pub fn new(n_joints: usize) -> Self {
        Self {
            sums: vec![0.0; n_joints],
            counts: vec![0; n_joints],
            frames: 0,
        }
    }

    pub fn add(&mut self, values: &[Option<f64>]) {
        debug_assert_eq!(values.len(), self.sums.len());
        for (j, v) in values.iter().enumerate() {
            if let Some(v) = v {
                self.sums[j] += v;
                self.counts[j] += 1;
            }
        }
        self.frames += 1;
    }

    pub fn finish(&self, name: &str, unit: Unit) -> Result<MetricReport, MetricError> {
        let per_joint: Vec<f64> = self
            .sums
            .iter()
            .zip(&self.counts)
            .filter(|(_, &c)| c > 0)
            .map(|(s, &c)| s / c as f64)
            .collect();
        if per_joint.is_empty() {
            return Err(MetricError::NoOverlap);
        }
        Ok(MetricReport::from_per_joint(name, per_joint, unit, self.frames))
    }
}

/// Per-joint 2D distances where both sides are visible.
pub fn joint_distances_2d(
    pred: &KeypointSet,
    gt: &KeypointSet,
) -> Result<Vec<Option<f64>>, MetricError> {
    if pred.len() != gt.len() {
        return Err(MetricError::DimensionMismatch(format!(
            "prediction has {} keypoints, ground truth {}",
            pred.len(),
            gt.len()
        )));
    }
    Ok((0..pred.len())
        .map(|j| {
            (pred.visibility[j] && gt.visibility[j]).then(|| {
                let dx = pred.coords[j][0] - gt.coords[j][0];
                let dy = pred.coords[j][1] - gt.coords[j][1];
                (dx * dx + dy * dy).sqrt()
            })
        })
        .collect())
}

/// Single-frame 2D MPJPE over the both-visible joints, in px, or in cm when
/// a px-per-cm scale is supplied.
pub fn mpjpe_2d(
    pred: &KeypointSet,
    gt: &KeypointSet,
    px_per_cm: Option<f64>,
) -> Result<MetricReport, MetricError> {
    if let Some(scale) = px_per_cm {
        if scale <= 0.0 {
            return Err(MetricError::NonPositiveThreshold(format!(
                "px-per-cm scale {scale}"
            )));
        }
    }
    let dists = joint_distances_2d(pred, gt)?;
    let scale = px_per_cm.unwrap_or(1.0);
    let per_joint: Vec<f64> = dists.iter().flatten().map(|d| d / scale).collect();
    if per_joint.is_empty() {
        return Err(MetricError::NoOverlap);
    }
    let unit = if px_per_cm.is_some() { Unit::Cm } else { Unit::Px };
    Ok(MetricReport::from_per_joint("2d_mpjpe", per_joint, unit, 1))
}

/// One frame of a PCK evaluation: predictions, ground truth, and the frame's
/// normalization length in px (conventionally the torso diameter).
pub struct PckFrame<'a> {
    pub pred: &'a KeypointSet,
    pub gt: &'a KeypointSet,
    pub norm_length: f64,
}

/// PCK@α over frames: per joint, the fraction of frames (with the joint
/// visible on both sides) whose error is ≤ α·norm_length. The threshold is
/// closed: an error exactly at the boundary counts as correct.
pub fn pck(frames: &[PckFrame<'_>], alpha: f64) -> Result<MetricReport, MetricError> {
    if alpha <= 0.0 {
        return Err(MetricError::NonPositiveThreshold(format!("alpha {alpha}")));
    }
    let n_joints = frames
        .first()
        .map(|f| f.gt.len())
        .ok_or(MetricError::NoOverlap)?;
    let mut hits = vec![0usize; n_joints];
    let mut counts = vec![0usize; n_joints];
    for frame in frames {
        if frame.norm_length <= 0.0 {
            return Err(MetricError::NonPositiveThreshold(format!(
                "norm_length {}",
                frame.norm_length
            )));
        }
        let dists = joint_distances_2d(frame.pred, frame.gt)?;
        if dists.len() != n_joints {
            return Err(MetricError::DimensionMismatch(
                "inconsistent joint counts across frames".into(),
            ));
        }
        for (j, d) in dists.iter().enumerate() {
            if let Some(d) = d {
                counts[j] += 1;
                if *d <= alpha * frame.norm_length {
                    hits[j] += 1;
                }
            }
        }
    }
    let per_joint: Vec<f64> = hits
        .iter()
        .zip(&counts)
        .filter(|(_, &c)| c > 0)
        .map(|(&h, &c)| h as f64 / c as f64)
        .collect();
    if per_joint.is_empty() {
        return Err(MetricError::NoOverlap);
    }
    Ok(MetricReport::from_per_joint(
        "pck",
        per_joint,
        Unit::Fraction,
        frames.len(),
    ))
}

/// Torso diameter of a frame in px: mid-shoulder to mid-hip distance, using
/// keypoint indices laid out as in [`crate::body_model::DEFAULT_KEYPOINT_JOINTS`]
/// (hips at 2 and 3, shoulders at 8 and 9).
pub fn torso_diameter_px(gt: &KeypointSet) -> Option<f64> {
    let mid = |a: usize, b: usize| -> Option<[f64; 2]> {
        (gt.visibility.get(a).copied().unwrap_or(false)
            && gt.visibility.get(b).copied().unwrap_or(false))
        .then(|| {
            [
                0.5 * (gt.coords[a][0] + gt.coords[b][0]),
                0.5 * (gt.coords[a][1] + gt.coords[b][1]),
            ]
        })
    };
    let hips = mid(2, 3)?;
    let shoulders = mid(8, 9)?;
    let dx = shoulders[0] - hips[0];
    let dy = shoulders[1] - hips[1];
    Some((dx * dx + dy * dy).sqrt())
}

/// The similarity transform `p ↦ s·R·p + t`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityTransform {
    pub scale: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl SimilarityTransform {
    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn apply(&self, p: &[f64; 3]) -> [f64; 3] {
        let q = self.scale * (self.rotation * Vector3::from(*p)) + self.translation;
        [q.x, q.y, q.z]
    }

    /// Residual `Σ‖apply(pred_i) − gt_i‖²`.
    pub fn objective(&self, pred: &[[f64; 3]], gt: &[[f64; 3]]) -> f64 {
        pred.iter()
            .zip(gt)
            .map(|(p, g)| {
                let q = self.apply(p);
                (0..3).map(|c| (q[c] - g[c]) * (q[c] - g[c])).sum::<f64>()
            })
            .sum()
    }
}

/// Closed-form similarity alignment minimizing `Σ‖s·R·pred_i + t − gt_i‖²`:
/// SVD of the centered cross-covariance with a reflection guard that flips
/// the smallest singular direction whenever the naive rotation would have
/// determinant −1.
pub fn procrustes_align(
    pred: &[[f64; 3]],
    gt: &[[f64; 3]],
) -> Result<SimilarityTransform, MetricError> {
    if pred.len() != gt.len() {
        return Err(MetricError::DimensionMismatch(format!(
            "{} prediction points vs {} ground truth",
            pred.len(),
            gt.len()
        )));
    }
    let n = pred.len();
    if n < 3 {
        return Err(MetricError::Degenerate(format!(
            "need at least 3 points, got {n}"
        )));
    }
    let inv_n = 1.0 / n as f64;
    let centroid = |pts: &[[f64; 3]]| -> Vector3<f64> {
        pts.iter().fold(Vector3::zeros(), |acc, p| acc + Vector3::from(*p)) * inv_n
    };
    let mu_p = centroid(pred);
    let mu_g = centroid(gt);

    let mut cross = Matrix3::zeros();
    let mut var_p = 0.0;
    let mut var_g_mat = Matrix3::zeros();
    for (p, g) in pred.iter().zip(gt) {
        let pc = Vector3::from(*p) - mu_p;
        let gc = Vector3::from(*g) - mu_g;
        cross += gc * pc.transpose() * inv_n;
        var_p += pc.norm_squared() * inv_n;
        var_g_mat += gc * gc.transpose() * inv_n;
    }
    // Ground truth must span at least a plane for the rotation to be pinned.
    let gt_eigs = nalgebra::SymmetricEigen::new(var_g_mat).eigenvalues;
    let mut eigs: Vec<f64> = gt_eigs.iter().copied().collect();
    eigs.sort_by(|a, b| b.total_cmp(a));
    if eigs[1] <= 1e-12 * eigs[0].max(1e-300) {
        return Err(MetricError::Degenerate(
            "ground-truth points are collinear (rank < 2)".into(),
        ));
    }
    if var_p <= 0.0 {
        return Err(MetricError::Degenerate(
            "prediction points are all identical".into(),
        ));
    }

    let svd = nalgebra::SVD::new(cross, true, true);
    let mut u = svd.u.ok_or_else(|| {
        MetricError::Degenerate("SVD of cross-covariance failed".into())
    })?;
    let vt = svd
        .v_t
        .ok_or_else(|| MetricError::Degenerate("SVD of cross-covariance failed".into()))?;
    let mut v = vt.transpose();
    let mut d: Vec<(usize, f64)> = svd
        .singular_values
        .iter()
        .copied()
        .enumerate()
        .collect();
    d.sort_by(|a, b| b.1.total_cmp(&a.1));
    // Apply the descending ordering to the factor columns.
    let mut u_sorted = Matrix3::zeros();
    let mut v_sorted = Matrix3::zeros();
    for (dst, (src, _)) in d.iter().enumerate() {
        u_sorted.set_column(dst, &u.column(*src));
        v_sorted.set_column(dst, &v.column(*src));
    }
    u = u_sorted;
    v = v_sorted;

    let mut signs = Vector3::new(1.0, 1.0, 1.0);
    if (u * v.transpose()).determinant() < 0.0 {
        signs.z = -1.0;
    }
    let rotation = u * Matrix3::from_diagonal(&signs) * v.transpose();
    let trace_ds = d[0].1 * signs.x + d[1].1 * signs.y + d[2].1 * signs.z;
    let scale = trace_ds / var_p;
    if !(scale > 0.0) {
        return Err(MetricError::Degenerate(format!(
            "non-positive optimal scale {scale}"
        )));
    }
    let translation = mu_g - scale * (rotation * mu_p);
    Ok(SimilarityTransform {
        scale,
        rotation,
        translation,
    })
}

/// 3D MPJPE in mm (inputs in meters).
pub fn mpjpe_3d(pred: &[[f64; 3]], gt: &[[f64; 3]]) -> Result<MetricReport, MetricError> {
    if pred.len() != gt.len() {
        return Err(MetricError::DimensionMismatch(format!(
            "{} vs {} joints",
            pred.len(),
            gt.len()
        )));
    }
    if pred.is_empty() {
        return Err(MetricError::NoOverlap);
    }
    let per_joint: Vec<f64> = pred
        .iter()
        .zip(gt)
        .map(|(p, g)| {
            1000.0
                * (0..3)
                    .map(|c| (p[c] - g[c]) * (p[c] - g[c]))
                    .sum::<f64>()
                    .sqrt()
        })
        .collect();
    Ok(MetricReport::from_per_joint("3d_mpjpe", per_joint, Unit::Mm, 1))
}

/// Procrustes-aligned 3D MPJPE in mm.
pub fn pa_mpjpe(pred: &[[f64; 3]], gt: &[[f64; 3]]) -> Result<MetricReport, MetricError> {
    let transform = procrustes_align(pred, gt)?;
    let aligned: Vec<[f64; 3]> = pred.iter().map(|p| transform.apply(p)).collect();
    let mut report = mpjpe_3d(&aligned, gt)?;
    report.name = "pa_mpjpe".into();
    Ok(report)
}

/// Scale-corrected neutral-pose per-vertex error in mm: T-pose both shapes,
/// center both vertex sets, apply the closed-form optimal global scale
/// `s* = ⟨v_pred, v_gt⟩ / ⟨v_pred, v_pred⟩`, and report the mean per-vertex
/// distance.
pub fn pve_t_sc(
    beta_pred: &ShapeParams,
    beta_gt: &ShapeParams,
    model: &BodyModel,
) -> Result<MetricReport, MetricError> {
    let pred = model.t_pose_vertices(beta_pred);
    let gt = model.t_pose_vertices(beta_gt);
    let value = pve_t_sc_from_vertices(&pred, &gt)?;
    Ok(MetricReport::scalar("pve_t_sc", value, Unit::Mm, 1))
}

/// The closed-form global scale `s* = ⟨v_pred, v_gt⟩ / ⟨v_pred, v_pred⟩`
/// on centered vertex sets — the minimizer of `Σ‖s·v_pred − v_gt‖²`.
pub fn optimal_scale_centered(pred: &[[f64; 3]], gt: &[[f64; 3]]) -> Result<f64, MetricError> {
    if pred.len() != gt.len() {
        return Err(MetricError::DimensionMismatch(format!(
            "{} vs {} vertices",
            pred.len(),
            gt.len()
        )));
    }
    if pred.is_empty() {
        return Err(MetricError::NoOverlap);
    }
    let inv_n = 1.0 / pred.len() as f64;
    let centroid = |pts: &[[f64; 3]]| -> Vector3<f64> {
        pts.iter().fold(Vector3::zeros(), |acc, p| acc + Vector3::from(*p)) * inv_n
    };
    let mu_p = centroid(pred);
    let mu_g = centroid(gt);
    let mut dot_pg = 0.0;
    let mut dot_pp = 0.0;
    for (p, g) in pred.iter().zip(gt) {
        let pc = Vector3::from(*p) - mu_p;
        let gc = Vector3::from(*g) - mu_g;
        dot_pg += pc.dot(&gc);
        dot_pp += pc.norm_squared();
    }
    if dot_pp <= 0.0 {
        return Err(MetricError::Degenerate(
            "predicted vertices are all identical".into(),
        ));
    }
    Ok(dot_pg / dot_pp)
}

/// The PVE-T-SC core on explicit vertex sets (meters in, mm out).
pub fn pve_t_sc_from_vertices(
    pred: &[[f64; 3]],
    gt: &[[f64; 3]],
) -> Result<f64, MetricError> {
    let s = optimal_scale_centered(pred, gt)?;
    let inv_n = 1.0 / pred.len() as f64;
    let centroid = |pts: &[[f64; 3]]| -> Vector3<f64> {
        pts.iter().fold(Vector3::zeros(), |acc, p| acc + Vector3::from(*p)) * inv_n
    };
    let mu_p = centroid(pred);
    let mu_g = centroid(gt);
    let mean_dist = pred
        .iter()
        .zip(gt)
        .map(|(p, g)| {
            let pc = s * (Vector3::from(*p) - mu_p);
            let gc = Vector3::from(*g) - mu_g;
            (pc - gc).norm()
        })
        .sum::<f64>()
        * inv_n;
    Ok(1000.0 * mean_dist)
}
