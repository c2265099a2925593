//! Parametric statistical body mesh: shape blend shapes, pose blend shapes,
//! joint regression, and linear blend skinning over a kinematic tree.
//!
//! The model follows the usual SMPL structure: 24 joints in a fixed tree,
//! axis-angle pose `θ ∈ R^72` (joint 0 is the global root orientation),
//! 10 shape coefficients `β`, per-vertex shape/pose displacement bases, a
//! sparse nonnegative joint regressor, and skinning weights that partition
//! unity per vertex. Posing happens in this order:
//!
//! 1. shaped template `T + S·β`
//! 2. rest joints `J = W_reg · shaped`
//! 3. pose-corrective displacements `P · vec(R(θ_{1..23}) − I)`
//! 4. per-joint world transforms by kinematic-chain composition
//! 5. linear blend skinning and joint extraction
//!
//! All coordinates are meters. Models are immutable after construction and
//! all operations here are pure functions, so values can be shared freely
//! across threads.

mod io;
mod mini;
pub mod rot;

pub use io::{load_model, save_model};
pub use mini::make_mini_model;

use std::collections::BTreeMap;

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

/// Number of joints in the kinematic tree.
pub const NUM_JOINTS: usize = 24;
/// Number of shape coefficients.
pub const NUM_SHAPE_COEFFS: usize = 10;
/// Length of the vectorized pose-rotation deviation, `9·(J−1)`.
pub const NUM_POSE_BASIS: usize = 9 * (NUM_JOINTS - 1);
/// Flattened pose parameter length, `3·J`.
pub const NUM_POSE_PARAMS: usize = 3 * NUM_JOINTS;

/// Fixed kinematic tree; `None` marks the root. Parents always precede
/// children, so a single forward pass composes the chain.
pub const KINEMATIC_PARENTS: [Option<usize>; NUM_JOINTS] = [
    None,
    Some(0),
    Some(0),
    Some(0),
    Some(1),
    Some(2),
    Some(3),
    Some(4),
    Some(5),
    Some(6),
    Some(7),
    Some(8),
    Some(9),
    Some(9),
    Some(9),
    Some(12),
    Some(13),
    Some(14),
    Some(16),
    Some(17),
    Some(18),
    Some(19),
    Some(20),
    Some(21),
];

/// Joint indices, named for readability at call sites.
pub mod joints {
    pub const PELVIS: usize = 0;
    pub const L_HIP: usize = 1;
    pub const R_HIP: usize = 2;
    pub const SPINE1: usize = 3;
    pub const L_KNEE: usize = 4;
    pub const R_KNEE: usize = 5;
    pub const SPINE2: usize = 6;
    pub const L_ANKLE: usize = 7;
    pub const R_ANKLE: usize = 8;
    pub const SPINE3: usize = 9;
    pub const L_FOOT: usize = 10;
    pub const R_FOOT: usize = 11;
    pub const NECK: usize = 12;
    pub const L_COLLAR: usize = 13;
    pub const R_COLLAR: usize = 14;
    pub const HEAD: usize = 15;
    pub const L_SHOULDER: usize = 16;
    pub const R_SHOULDER: usize = 17;
    pub const L_ELBOW: usize = 18;
    pub const R_ELBOW: usize = 19;
    pub const L_WRIST: usize = 20;
    pub const R_WRIST: usize = 21;
    pub const L_HAND: usize = 22;
    pub const R_HAND: usize = 23;
}

/// The default evaluation keypoints: the 12 limb joints
/// (ankles, knees, hips, wrists, elbows, shoulders), right side first.
pub const DEFAULT_KEYPOINT_JOINTS: [usize; 12] = [
    joints::R_ANKLE,
    joints::R_KNEE,
    joints::R_HIP,
    joints::L_HIP,
    joints::L_KNEE,
    joints::L_ANKLE,
    joints::R_WRIST,
    joints::R_ELBOW,
    joints::R_SHOULDER,
    joints::L_SHOULDER,
    joints::L_ELBOW,
    joints::L_WRIST,
];

/// Axis-angle pose, one 3-vector per joint; joint 0 is the global root.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseParams {
    pub joints: [[f64; 3]; NUM_JOINTS],
}

impl PoseParams {
    pub fn zeros() -> Self {
        Self {
            joints: [[0.0; 3]; NUM_JOINTS],
        }
    }

    pub fn from_flat(flat: &[f64]) -> Option<Self> {
        if flat.len() != NUM_POSE_PARAMS {
            return None;
        }
        let mut joints = [[0.0; 3]; NUM_JOINTS];
        for (j, chunk) in flat.chunks_exact(3).enumerate() {
            joints[j] = [chunk[0], chunk[1], chunk[2]];
        }
        Some(Self { joints })
    }

    pub fn to_flat(&self) -> [f64; NUM_POSE_PARAMS] {
        let mut out = [0.0; NUM_POSE_PARAMS];
        for (j, aa) in self.joints.iter().enumerate() {
            out[3 * j..3 * j + 3].copy_from_slice(aa);
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.joints.iter().flatten().all(|v| v.is_finite())
    }
}

impl Default for PoseParams {
    fn default() -> Self {
        Self::zeros()
    }
}

/// Shape PCA coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ShapeParams {
    pub coeffs: [f64; NUM_SHAPE_COEFFS],
}

impl ShapeParams {
    pub fn zeros() -> Self {
        Self::default()
    }

    pub fn from_slice(s: &[f64]) -> Option<Self> {
        if s.len() != NUM_SHAPE_COEFFS {
            return None;
        }
        let mut coeffs = [0.0; NUM_SHAPE_COEFFS];
        coeffs.copy_from_slice(s);
        Some(Self { coeffs })
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|v| v.is_finite())
    }
}

/// Maps an evaluation keypoint to either a model joint or a mesh vertex.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KeypointSource {
    Joint(usize),
    Vertex(usize),
}

/// A posed body: skinned vertices, world joint positions, and the subset
/// of 3D keypoints selected by the model's keypoint map.
#[derive(Debug, Clone)]
pub struct PosedBody {
    pub vertices: Vec<[f64; 3]>,
    pub joints: [[f64; 3]; NUM_JOINTS],
    pub keypoints_3d: Vec<[f64; 3]>,
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("model file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("model file parse error: {0}")]
    Parse(String),
    #[error("model invariant violated in `{field}`: {detail}")]
    Invariant { field: &'static str, detail: String },
}

/// The parametric body model. Immutable after construction; `pose` and
/// friends are pure.
#[derive(Debug, Clone)]
pub struct BodyModel {
    /// Mean-shape T-pose vertices, `V×3`.
    template_vertices: Vec<[f64; 3]>,
    /// Triangle connectivity, `F×3`.
    faces: Vec<[usize; 3]>,
    /// Shape displacement basis, row-major `(v, axis, k)`, length `V·3·10`.
    shape_dirs: Vec<f64>,
    /// Pose-corrective basis, row-major `(v, axis, b)`, length `V·3·207`.
    pose_dirs: Vec<f64>,
    /// Joint regressor, row-major `(j, v)`, length `J·V`.
    joint_regressor: Vec<f64>,
    /// Skinning weights, row-major `(v, j)`, length `V·J`.
    skin_weights: Vec<f64>,
    kinematic_parents: [Option<usize>; NUM_JOINTS],
    keypoint_map: Vec<KeypointSource>,
    /// Named vertex regions (see the isocentering module).
    regions: BTreeMap<String, Vec<usize>>,
    /// Per-vertex nonzero skinning entries, precomputed for the blend loop.
    sparse_skin: Vec<Vec<(usize, f64)>>,
    pose_dirs_all_zero: bool,
}

impl BodyModel {
    /// Builds a model from raw arrays, validating every invariant.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        template_vertices: Vec<[f64; 3]>,
        faces: Vec<[usize; 3]>,
        shape_dirs: Vec<f64>,
        pose_dirs: Vec<f64>,
        joint_regressor: Vec<f64>,
        skin_weights: Vec<f64>,
        kinematic_parents: [Option<usize>; NUM_JOINTS],
        keypoint_map: Vec<KeypointSource>,
        regions: BTreeMap<String, Vec<usize>>,
    ) -> Result<Self, ModelError> {
        let v = template_vertices.len();
        if v == 0 {
            return Err(ModelError::Invariant {
                field: "template_vertices",
                detail: "empty vertex list".into(),
            });
        }
        check_len("shape_dirs", shape_dirs.len(), v * 3 * NUM_SHAPE_COEFFS)?;
        check_len("pose_dirs", pose_dirs.len(), v * 3 * NUM_POSE_BASIS)?;
        check_len("joint_regressor", joint_regressor.len(), NUM_JOINTS * v)?;
        check_len("skin_weights", skin_weights.len(), v * NUM_JOINTS)?;
        for (name, data) in [
            ("template_vertices", template_vertices.as_flattened()),
            ("shape_dirs", shape_dirs.as_slice()),
            ("pose_dirs", pose_dirs.as_slice()),
        ] {
            if let Some(i) = data.iter().position(|x| !x.is_finite()) {
                return Err(ModelError::Invariant {
                    field: match name {
                        "template_vertices" => "template_vertices",
                        "shape_dirs" => "shape_dirs",
                        _ => "pose_dirs",
                    },
                    detail: format!("non-finite value at flat index {i}"),
                });
            }
        }
        for face in &faces {
            if face.iter().any(|&i| i >= v) {
                return Err(ModelError::Invariant {
                    field: "faces",
                    detail: format!("vertex index out of range in face {face:?}"),
                });
            }
        }
        check_stochastic_rows("joint_regressor", &joint_regressor, NUM_JOINTS, v)?;
        check_stochastic_rows("skin_weights", &skin_weights, v, NUM_JOINTS)?;
        if kinematic_parents[0].is_some() {
            return Err(ModelError::Invariant {
                field: "kinematic_parents",
                detail: "joint 0 must be the root".into(),
            });
        }
        for (j, parent) in kinematic_parents.iter().enumerate().skip(1) {
            match parent {
                Some(p) if *p < j => {}
                Some(p) => {
                    return Err(ModelError::Invariant {
                        field: "kinematic_parents",
                        detail: format!("joint {j} has parent {p} >= child index"),
                    })
                }
                None => {
                    return Err(ModelError::Invariant {
                        field: "kinematic_parents",
                        detail: format!("joint {j} has no parent"),
                    })
                }
            }
        }
        if keypoint_map.is_empty() || keypoint_map.len() > NUM_JOINTS {
            return Err(ModelError::Invariant {
                field: "keypoint_map",
                detail: format!("expected 1..={NUM_JOINTS} keypoints, got {}", keypoint_map.len()),
            });
        }
        for (k, src) in keypoint_map.iter().enumerate() {
            let ok = match src {
                KeypointSource::Joint(j) => *j < NUM_JOINTS,
                KeypointSource::Vertex(i) => *i < v,
            };
            if !ok {
                return Err(ModelError::Invariant {
                    field: "keypoint_map",
                    detail: format!("keypoint {k} references out-of-range {src:?}"),
                });
            }
        }
        for (name, idxs) in &regions {
            if idxs.is_empty() {
                return Err(ModelError::Invariant {
                    field: "regions",
                    detail: format!("region `{name}` is empty"),
                });
            }
            if idxs.iter().any(|&i| i >= v) {
                return Err(ModelError::Invariant {
                    field: "regions",
                    detail: format!("region `{name}` has vertex index out of range"),
                });
            }
        }

        let sparse_skin = skin_weights
            .chunks_exact(NUM_JOINTS)
            .map(|row| {
                row.iter()
                    .enumerate()
                    .filter(|(_, &w)| w != 0.0)
                    .map(|(j, &w)| (j, w))
                    .collect()
            })
            .collect();
        let pose_dirs_all_zero = pose_dirs.iter().all(|&x| x == 0.0);

        Ok(Self {
            template_vertices,
            faces,
            shape_dirs,
            pose_dirs,
            joint_regressor,
            skin_weights,
            kinematic_parents,
            keypoint_map,
            regions,
            sparse_skin,
            pose_dirs_all_zero,
        })
    }

    pub fn num_vertices(&self) -> usize {
        self.template_vertices.len()
    }

    pub fn num_faces(&self) -> usize {
        self.faces.len()
    }

    pub fn num_keypoints(&self) -> usize {
        self.keypoint_map.len()
    }

    pub fn template_vertices(&self) -> &[[f64; 3]] {
        &self.template_vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn shape_dirs(&self) -> &[f64] {
        &self.shape_dirs
    }

    pub fn pose_dirs(&self) -> &[f64] {
        &self.pose_dirs
    }

    pub fn joint_regressor(&self) -> &[f64] {
        &self.joint_regressor
    }

    pub fn skin_weights(&self) -> &[f64] {
        &self.skin_weights
    }

    pub fn kinematic_parents(&self) -> &[Option<usize>; NUM_JOINTS] {
        &self.kinematic_parents
    }

    pub fn keypoint_map(&self) -> &[KeypointSource] {
        &self.keypoint_map
    }

    pub fn region_names(&self) -> impl Iterator<Item = &str> {
        self.regions.keys().map(|s| s.as_str())
    }

    pub fn region_vertices(&self, name: &str) -> Option<&[usize]> {
        self.regions.get(name).map(|v| v.as_slice())
    }

    /// Returns a copy with the given pose-corrective basis swapped in.
    /// Used to exercise the pose-blend term on models built with zeros.
    pub fn with_pose_dirs(&self, pose_dirs: Vec<f64>) -> Result<Self, ModelError> {
        Self::from_parts(
            self.template_vertices.clone(),
            self.faces.clone(),
            self.shape_dirs.clone(),
            pose_dirs,
            self.joint_regressor.clone(),
            self.skin_weights.clone(),
            self.kinematic_parents,
            self.keypoint_map.clone(),
            self.regions.clone(),
        )
    }

    /// Template plus shape displacements, `T + S·β`.
    pub fn shaped_template(&self, beta: &ShapeParams) -> Vec<[f64; 3]> {
        let mut out = self.template_vertices.clone();
        for (v, vertex) in out.iter_mut().enumerate() {
            for axis in 0..3 {
                let base = (v * 3 + axis) * NUM_SHAPE_COEFFS;
                let row = &self.shape_dirs[base..base + NUM_SHAPE_COEFFS];
                let mut d = 0.0;
                for k in 0..NUM_SHAPE_COEFFS {
                    d += row[k] * beta.coeffs[k];
                }
                vertex[axis] += d;
            }
        }
        out
    }

    /// Rest joints regressed from a shaped template.
    pub fn rest_joints(&self, shaped: &[[f64; 3]]) -> [[f64; 3]; NUM_JOINTS] {
        let v = self.template_vertices.len();
        let mut joints = [[0.0; 3]; NUM_JOINTS];
        for j in 0..NUM_JOINTS {
            let row = &self.joint_regressor[j * v..(j + 1) * v];
            let mut acc = [0.0; 3];
            for (w, p) in row.iter().zip(shaped.iter()) {
                if *w != 0.0 {
                    acc[0] += w * p[0];
                    acc[1] += w * p[1];
                    acc[2] += w * p[2];
                }
            }
            joints[j] = acc;
        }
        joints
    }

    /// Per-joint world skinning transforms for the given pose, composed down
    /// the kinematic chain from the given rest joints. Joint `j` maps a
    /// rest-space point as `x ↦ R_j·x + s_j`; each local rotation acts about
    /// its own rest joint. At the neutral pose every `s_j` is exactly zero,
    /// so skinning is an exact identity.
    pub fn world_transforms(
        &self,
        theta: &PoseParams,
        rest_joints: &[[f64; 3]; NUM_JOINTS],
    ) -> ([Matrix3<f64>; NUM_JOINTS], [Vector3<f64>; NUM_JOINTS]) {
        let mut rot = [Matrix3::identity(); NUM_JOINTS];
        let mut skin_trans = [Vector3::zeros(); NUM_JOINTS];
        for j in 0..NUM_JOINTS {
            let local = rot::rodrigues(&theta.joints[j]);
            let r = Vector3::from(rest_joints[j]);
            let pivot = r - local * r;
            match self.kinematic_parents[j] {
                None => {
                    rot[j] = local;
                    skin_trans[j] = pivot;
                }
                Some(p) => {
                    rot[j] = rot[p] * local;
                    skin_trans[j] = rot[p] * pivot + skin_trans[p];
                }
            }
        }
        (rot, skin_trans)
    }

    /// Full posing: shape blending, pose-corrective displacements, kinematic
    /// chain, and linear blend skinning.
    pub fn pose(&self, theta: &PoseParams, beta: &ShapeParams) -> PosedBody {
        let mut shaped = self.shaped_template(beta);
        let rest = self.rest_joints(&shaped);

        if !self.pose_dirs_all_zero {
            let basis = pose_rotation_deviation(theta);
            if basis.iter().any(|&x| x != 0.0) {
                for (v, vertex) in shaped.iter_mut().enumerate() {
                    for axis in 0..3 {
                        let base = (v * 3 + axis) * NUM_POSE_BASIS;
                        let row = &self.pose_dirs[base..base + NUM_POSE_BASIS];
                        let mut d = 0.0;
                        for (pd, b) in row.iter().zip(basis.iter()) {
                            d += pd * b;
                        }
                        vertex[axis] += d;
                    }
                }
            }
        }

        let (rot, skin_trans) = self.world_transforms(theta, &rest);

        // Blend as x + Σ w·(G_j x − x): algebraically Σ w·G_j x for weights
        // that partition unity, and exactly the identity at the neutral pose.
        let vertices: Vec<[f64; 3]> = shaped
            .iter()
            .zip(self.sparse_skin.iter())
            .map(|(p, weights)| {
                let x = Vector3::from(*p);
                let mut acc = x;
                for &(j, w) in weights {
                    acc += w * (rot[j] * x + skin_trans[j] - x);
                }
                [acc.x, acc.y, acc.z]
            })
            .collect();

        let mut joints = [[0.0; 3]; NUM_JOINTS];
        for j in 0..NUM_JOINTS {
            let t = rot[j] * Vector3::from(rest[j]) + skin_trans[j];
            joints[j] = [t.x, t.y, t.z];
        }

        let keypoints_3d = self
            .keypoint_map
            .iter()
            .map(|src| match src {
                KeypointSource::Joint(j) => joints[*j],
                KeypointSource::Vertex(i) => vertices[*i],
            })
            .collect();

        PosedBody {
            vertices,
            joints,
            keypoints_3d,
        }
    }

    /// Neutral-pose vertices for a shape; equals `pose(θ=0, β).vertices`.
    pub fn t_pose_vertices(&self, beta: &ShapeParams) -> Vec<[f64; 3]> {
        self.shaped_template(beta)
    }

    /// World joint positions only, skipping the skinning pass.
    pub fn pose_joints(&self, theta: &PoseParams, beta: &ShapeParams) -> [[f64; 3]; NUM_JOINTS] {
        let shaped = self.shaped_template(beta);
        let rest = self.rest_joints(&shaped);
        let (rot, skin_trans) = self.world_transforms(theta, &rest);
        let mut joints = [[0.0; 3]; NUM_JOINTS];
        for j in 0..NUM_JOINTS {
            let t = rot[j] * Vector3::from(rest[j]) + skin_trans[j];
            joints[j] = [t.x, t.y, t.z];
        }
        joints
    }

    /// World joint positions together with their jacobian w.r.t. the pose
    /// and shape parameters (outputs `J·3`, parameters `72 + 10`).
    pub fn pose_joints_with_jacobian(
        &self,
        theta: &PoseParams,
        beta: &ShapeParams,
    ) -> ([[f64; 3]; NUM_JOINTS], JointJacobian) {
        let shaped = self.shaped_template(beta);
        let rest = self.rest_joints(&shaped);
        let joint_shape = self.joint_shape_dirs();

        // Forward accumulation down the chain. For each joint we keep the
        // sparse set of parameters that can affect it: θ of its ancestors
        // (including itself) and all 10 β coefficients.
        let num_params = NUM_POSE_PARAMS + NUM_SHAPE_COEFFS;
        let mut jac = JointJacobian {
            d: vec![0.0; NUM_JOINTS * 3 * num_params],
        };

        struct Partial {
            param: usize,
            d_rot: Matrix3<f64>,
            d_trans: Vector3<f64>,
        }
        // Joint values come from the same path `pose` uses; the partials
        // track the world joint position t_j = t_parent + R_parent·(r_j −
        // r_parent), which is the same function.
        let (rot, skin_trans) = self.world_transforms(theta, &rest);
        let mut partials: Vec<Vec<Partial>> = Vec::with_capacity(NUM_JOINTS);

        for j in 0..NUM_JOINTS {
            let local = rot::rodrigues(&theta.joints[j]);
            let d_local = rot::rodrigues_jacobian(&theta.joints[j]);
            let r_j = Vector3::from(rest[j]);
            let mut own: Vec<Partial> = Vec::new();

            match self.kinematic_parents[j] {
                None => {
                    for axis in 0..3 {
                        own.push(Partial {
                            param: 3 * j + axis,
                            d_rot: d_local[axis],
                            d_trans: Vector3::zeros(),
                        });
                    }
                    for k in 0..NUM_SHAPE_COEFFS {
                        own.push(Partial {
                            param: NUM_POSE_PARAMS + k,
                            d_rot: Matrix3::zeros(),
                            d_trans: joint_shape[j][k],
                        });
                    }
                }
                Some(p) => {
                    let offset = r_j - Vector3::from(rest[p]);
                    for parent_partial in &partials[p] {
                        let mut d_trans = parent_partial.d_trans + parent_partial.d_rot * offset;
                        if parent_partial.param >= NUM_POSE_PARAMS {
                            let k = parent_partial.param - NUM_POSE_PARAMS;
                            d_trans += rot[p] * (joint_shape[j][k] - joint_shape[p][k]);
                        }
                        own.push(Partial {
                            param: parent_partial.param,
                            d_rot: parent_partial.d_rot * local,
                            d_trans,
                        });
                    }
                    for axis in 0..3 {
                        own.push(Partial {
                            param: 3 * j + axis,
                            d_rot: rot[p] * d_local[axis],
                            d_trans: Vector3::zeros(),
                        });
                    }
                }
            }

            for partial in &own {
                for coord in 0..3 {
                    jac.d[(j * 3 + coord) * num_params + partial.param] = partial.d_trans[coord];
                }
            }
            partials.push(own);
        }

        let mut joints = [[0.0; 3]; NUM_JOINTS];
        for j in 0..NUM_JOINTS {
            let t = rot[j] * Vector3::from(rest[j]) + skin_trans[j];
            joints[j] = [t.x, t.y, t.z];
        }
        (joints, jac)
    }

    /// `d(rest joint j)/d(β_k)` as a `J×10` table of 3-vectors.
    fn joint_shape_dirs(&self) -> Vec<[Vector3<f64>; NUM_SHAPE_COEFFS]> {
        let v = self.template_vertices.len();
        let mut out = vec![[Vector3::zeros(); NUM_SHAPE_COEFFS]; NUM_JOINTS];
        for j in 0..NUM_JOINTS {
            let row = &self.joint_regressor[j * v..(j + 1) * v];
            for (vi, &w) in row.iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                for axis in 0..3 {
                    let base = (vi * 3 + axis) * NUM_SHAPE_COEFFS;
                    for k in 0..NUM_SHAPE_COEFFS {
                        out[j][k][axis] += w * self.shape_dirs[base + k];
                    }
                }
            }
        }
        out
    }
}

/// Jacobian of the 24 world joint positions w.r.t. `(θ, β)`; row-major
/// `(joint·3 + coord, param)` with 82 parameter columns (72 pose + 10 shape).
#[derive(Debug, Clone)]
pub struct JointJacobian {
    pub d: Vec<f64>,
}

impl JointJacobian {
    pub const NUM_PARAMS: usize = NUM_POSE_PARAMS + NUM_SHAPE_COEFFS;

    pub fn entry(&self, joint: usize, coord: usize, param: usize) -> f64 {
        self.d[(joint * 3 + coord) * Self::NUM_PARAMS + param]
    }
}

/// Vectorized `R(θ_j) − I` for joints `1..J`, the pose-corrective basis
/// coordinates. Row-major per joint.
pub fn pose_rotation_deviation(theta: &PoseParams) -> [f64; NUM_POSE_BASIS] {
    let mut out = [0.0; NUM_POSE_BASIS];
    for j in 1..NUM_JOINTS {
        let r = rot::rodrigues(&theta.joints[j]);
        let base = 9 * (j - 1);
        for row in 0..3 {
            for col in 0..3 {
                let id = if row == col { 1.0 } else { 0.0 };
                out[base + 3 * row + col] = r[(row, col)] - id;
            }
        }
    }
    out
}

fn check_len(field: &'static str, got: usize, want: usize) -> Result<(), ModelError> {
    if got != want {
        return Err(ModelError::Invariant {
            field,
            detail: format!("expected {want} elements, got {got}"),
        });
    }
    Ok(())
}

fn check_stochastic_rows(
    field: &'static str,
    data: &[f64],
    rows: usize,
    cols: usize,
) -> Result<(), ModelError> {
    for r in 0..rows {
        let row = &data[r * cols..(r + 1) * cols];
        let mut sum = 0.0;
        for (c, &w) in row.iter().enumerate() {
            if !w.is_finite() || w < 0.0 {
                return Err(ModelError::Invariant {
                    field,
                    detail: format!("row {r} column {c} has invalid weight {w}"),
                });
            }
            sum += w;
        }
        if (sum - 1.0).abs() > 1e-6 {
            return Err(ModelError::Invariant {
                field,
                detail: format!("row {r} sums to {sum}, expected 1 within 1e-6"),
            });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{rng_from_seed, standard_normal};
    use nalgebra::Vector3;

    fn random_pose(rng: &mut impl rand::Rng, scale: f64) -> PoseParams {
        let mut theta = PoseParams::zeros();
        for aa in theta.joints.iter_mut() {
            for c in aa.iter_mut() {
                *c = scale * standard_normal(rng);
            }
        }
        theta
    }

    fn random_shape(rng: &mut impl rand::Rng, scale: f64) -> ShapeParams {
        let mut beta = ShapeParams::zeros();
        for c in beta.coeffs.iter_mut() {
            *c = scale * standard_normal(rng);
        }
        beta
    }

    #[test]
    fn zero_pose_zero_shape_returns_template() {
        let model = make_mini_model(7);
        let body = model.pose(&PoseParams::zeros(), &ShapeParams::zeros());
        for (a, b) in body.vertices.iter().zip(model.template_vertices()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn root_rotation_is_rigid_about_root_joint() {
        let model = make_mini_model(7);
        let rest = model.rest_joints(model.template_vertices());
        let root = Vector3::from(rest[0]);

        let mut theta = PoseParams::zeros();
        theta.joints[0] = [0.0, 0.0, std::f64::consts::FRAC_PI_2];
        let r = rot::rodrigues(&theta.joints[0]);

        let body = model.pose(&theta, &ShapeParams::zeros());
        for (out, tpl) in body.vertices.iter().zip(model.template_vertices()) {
            let expect = r * (Vector3::from(*tpl) - root) + root;
            for c in 0..3 {
                assert!((out[c] - expect[c]).abs() < 1e-9, "vertex mismatch");
            }
        }
        let rest_shaped = model.rest_joints(model.template_vertices());
        for (out, rj) in body.joints.iter().zip(rest_shaped.iter()) {
            let expect = r * (Vector3::from(*rj) - root) + root;
            for c in 0..3 {
                assert!((out[c] - expect[c]).abs() < 1e-9, "joint mismatch");
            }
        }
    }

    #[test]
    fn shape_blending_is_linear_at_zero_pose() {
        let model = make_mini_model(11);
        let mut rng = rng_from_seed(5);
        for _ in 0..20 {
            let b1 = random_shape(&mut rng, 1.0);
            let b2 = random_shape(&mut rng, 1.0);
            let mut sum = ShapeParams::zeros();
            for k in 0..NUM_SHAPE_COEFFS {
                sum.coeffs[k] = b1.coeffs[k] + b2.coeffs[k];
            }
            let zero = PoseParams::zeros();
            let v_sum = model.pose(&zero, &sum).vertices;
            let v1 = model.pose(&zero, &b1).vertices;
            let v2 = model.pose(&zero, &b2).vertices;
            let v0 = model.pose(&zero, &ShapeParams::zeros()).vertices;
            for i in 0..v_sum.len() {
                for c in 0..3 {
                    let resid = v_sum[i][c] - v1[i][c] - v2[i][c] + v0[i][c];
                    assert!(resid.abs() < 1e-9, "nonlinear residual {resid}");
                }
            }
        }
    }

    #[test]
    fn t_pose_matches_pose_at_zero_theta() {
        let model = make_mini_model(3);
        let mut rng = rng_from_seed(9);
        for _ in 0..10 {
            let beta = random_shape(&mut rng, 1.5);
            let via_pose = model.pose(&PoseParams::zeros(), &beta).vertices;
            let direct = model.t_pose_vertices(&beta);
            assert_eq!(via_pose, direct);
        }
    }

    #[test]
    fn t_pose_unit_shape_adds_basis_column() {
        let model = make_mini_model(3);
        let mut beta = ShapeParams::zeros();
        beta.coeffs[0] = 1.0;
        let shaped = model.t_pose_vertices(&beta);
        for (v, (out, tpl)) in shaped.iter().zip(model.template_vertices()).enumerate() {
            for axis in 0..3 {
                let d = model.shape_dirs()[(v * 3 + axis) * NUM_SHAPE_COEFFS];
                assert!((out[axis] - tpl[axis] - d).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn pose_dirs_term_displaces_vertices() {
        let model = make_mini_model(7);
        let v = model.num_vertices();
        let mut rng = rng_from_seed(2);
        let pose_dirs: Vec<f64> = (0..v * 3 * NUM_POSE_BASIS)
            .map(|_| 0.001 * standard_normal(&mut rng))
            .collect();
        let with_dirs = model.with_pose_dirs(pose_dirs.clone()).unwrap();

        let theta = random_pose(&mut rng, 0.2);
        let beta = ShapeParams::zeros();
        let plain = model.pose(&theta, &beta);
        let corrected = with_dirs.pose(&theta, &beta);

        // At θ=0 the deviation basis vanishes and both agree exactly.
        let zero = PoseParams::zeros();
        assert_eq!(
            model.pose(&zero, &beta).vertices,
            with_dirs.pose(&zero, &beta).vertices
        );
        // At a bent pose, the corrective displacements show up.
        let moved = plain
            .vertices
            .iter()
            .zip(corrected.vertices.iter())
            .any(|(a, b)| a != b);
        assert!(moved, "pose-corrective basis had no effect");
    }

    #[test]
    fn joint_jacobian_matches_finite_differences() {
        let model = make_mini_model(13);
        let mut rng = rng_from_seed(21);
        let theta = random_pose(&mut rng, 0.3);
        let beta = random_shape(&mut rng, 0.8);

        let (_, jac) = model.pose_joints_with_jacobian(&theta, &beta);
        let h = 1e-5;
        let mut max_err: f64 = 0.0;
        for param in 0..JointJacobian::NUM_PARAMS {
            let mut tp = theta;
            let mut tm = theta;
            let mut bp = beta;
            let mut bm = beta;
            if param < NUM_POSE_PARAMS {
                tp.joints[param / 3][param % 3] += h;
                tm.joints[param / 3][param % 3] -= h;
            } else {
                bp.coeffs[param - NUM_POSE_PARAMS] += h;
                bm.coeffs[param - NUM_POSE_PARAMS] -= h;
            }
            let jp = model.pose(&tp, &bp).joints;
            let jm = model.pose(&tm, &bm).joints;
            for j in 0..NUM_JOINTS {
                for c in 0..3 {
                    let fd = (jp[j][c] - jm[j][c]) / (2.0 * h);
                    let an = jac.entry(j, c, param);
                    let denom = fd.abs().max(an.abs()).max(1e-6);
                    max_err = max_err.max((fd - an).abs() / denom);
                }
            }
        }
        assert!(max_err < 1e-4, "joint jacobian max rel err {max_err}");
    }

    #[test]
    fn invalid_parent_order_is_rejected() {
        let model = make_mini_model(7);
        let mut parents = *model.kinematic_parents();
        parents[1] = Some(5);
        let err = BodyModel::from_parts(
            model.template_vertices().to_vec(),
            model.faces().to_vec(),
            model.shape_dirs().to_vec(),
            model.pose_dirs().to_vec(),
            model.joint_regressor().to_vec(),
            model.skin_weights().to_vec(),
            parents,
            model.keypoint_map().to_vec(),
            BTreeMap::new(),
        )
        .unwrap_err();
        match err {
            ModelError::Invariant { field, .. } => assert_eq!(field, "kinematic_parents"),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn bad_skin_row_sum_names_field() {
        let model = make_mini_model(7);
        let mut weights = model.skin_weights().to_vec();
        weights[0] *= 0.8;
        weights[1..NUM_JOINTS].iter_mut().for_each(|w| *w *= 0.8);
        let err = BodyModel::from_parts(
            model.template_vertices().to_vec(),
            model.faces().to_vec(),
            model.shape_dirs().to_vec(),
            model.pose_dirs().to_vec(),
            model.joint_regressor().to_vec(),
            weights,
            *model.kinematic_parents(),
            model.keypoint_map().to_vec(),
            BTreeMap::new(),
        )
        .unwrap_err();
        match err {
            ModelError::Invariant { field, .. } => assert_eq!(field, "skin_weights"),
            other => panic!("unexpected error {other:?}"),
        }
    }
}
