//! Procedural desk-scale body model.
//!
//! `make_mini_model` builds a small humanoid with the full 24-joint tree:
//! capsule-sampled limbs, torso and head placed on an adult-sized skeleton
//! lying supine (body axis +z toward the head, +y up off the table, +x the
//! patient's left). Skinning weights come from inverse distance to the two
//! nearest bones; the first shape direction scales overall height by 5% per
//! unit, the second inflates girth, and the rest are small smooth fields.
//! Pose-corrective displacements default to zero.

use std::collections::BTreeMap;

use nalgebra::Vector3;
use rand::Rng;

use super::{
    joints, BodyModel, KeypointSource, DEFAULT_KEYPOINT_JOINTS, KINEMATIC_PARENTS, NUM_JOINTS,
    NUM_POSE_BASIS, NUM_SHAPE_COEFFS,
};
use crate::rng::{rng_from_seed, standard_normal};

/// Designed rest skeleton (meters, supine).
pub const MINI_JOINT_POSITIONS: [[f64; 3]; NUM_JOINTS] = [
    [0.0, 0.0, 0.0],      // pelvis
    [0.09, 0.0, -0.05],   // l_hip
    [-0.09, 0.0, -0.05],  // r_hip
    [0.0, 0.01, 0.11],    // spine1
    [0.10, 0.0, -0.52],   // l_knee
    [-0.10, 0.0, -0.52],  // r_knee
    [0.0, 0.02, 0.23],    // spine2
    [0.105, 0.0, -0.95],  // l_ankle
    [-0.105, 0.0, -0.95], // r_ankle
    [0.0, 0.02, 0.34],    // spine3
    [0.105, 0.06, -1.02], // l_foot
    [-0.105, 0.06, -1.02],// r_foot
    [0.0, 0.01, 0.46],    // neck
    [0.06, 0.01, 0.40],   // l_collar
    [-0.06, 0.01, 0.40],  // r_collar
    [0.0, 0.02, 0.55],    // head
    [0.17, 0.0, 0.42],    // l_shoulder
    [-0.17, 0.0, 0.42],   // r_shoulder
    [0.43, 0.0, 0.42],    // l_elbow
    [-0.43, 0.0, 0.42],   // r_elbow
    [0.68, 0.0, 0.42],    // l_wrist
    [-0.68, 0.0, 0.42],   // r_wrist
    [0.76, 0.0, 0.42],    // l_hand
    [-0.76, 0.0, 0.42],   // r_hand
];

/// A bone is the segment from a joint to one of its children; vertices
/// sampled around it skin to the parent joint, which is the joint whose
/// rotation moves that segment.
struct Bone {
    owner: usize,
    child: usize,
    radius: f64,
    /// Extra scaling of the +y half of the cross section (belly side).
    front_scale: f64,
}

fn bones() -> Vec<Bone> {
    (1..NUM_JOINTS)
        .map(|child| {
            let owner = KINEMATIC_PARENTS[child].expect("non-root");
            let (radius, front_scale) = match child {
                joints::L_HIP | joints::R_HIP => (0.10, 1.15),
                joints::SPINE1 => (0.11, 1.35),
                joints::SPINE2 | joints::SPINE3 => (0.115, 1.35),
                joints::L_KNEE | joints::R_KNEE => (0.070, 1.0),
                joints::L_ANKLE | joints::R_ANKLE => (0.050, 1.0),
                joints::L_FOOT | joints::R_FOOT => (0.035, 1.0),
                joints::NECK => (0.055, 1.1),
                joints::L_COLLAR | joints::R_COLLAR => (0.05, 1.2),
                joints::HEAD => (0.085, 1.1),
                joints::L_SHOULDER | joints::R_SHOULDER => (0.050, 1.0),
                joints::L_ELBOW | joints::R_ELBOW => (0.042, 1.0),
                joints::L_WRIST | joints::R_WRIST => (0.035, 1.0),
                joints::L_HAND | joints::R_HAND => (0.030, 1.0),
                _ => unreachable!(),
            };
            Bone {
                owner,
                child,
                radius,
                front_scale,
            }
        })
        .collect()
}

const RING_POINTS: usize = 7;
const RING_SPACING: f64 = 0.085;

/// Builds a deterministic humanoid model. Identical seeds produce bitwise
/// identical models; any seed satisfies every `BodyModel` invariant.
pub fn make_mini_model(seed: u64) -> BodyModel {
    let mut rng = rng_from_seed(seed);
    let bones = bones();

    let mut vertices: Vec<[f64; 3]> = Vec::new();
    let mut faces: Vec<[usize; 3]> = Vec::new();

    for bone in &bones {
        let start = Vector3::from(MINI_JOINT_POSITIONS[bone.owner]);
        let end = Vector3::from(MINI_JOINT_POSITIONS[bone.child]);
        sample_capsule(
            &mut rng, &start, &end, bone.radius, bone.front_scale, &mut vertices, &mut faces,
        );
    }

    let v = vertices.len();
    assert!(
        (200..=1000).contains(&v),
        "mini model vertex count {v} out of range"
    );

    let skin_weights = skinning_weights(&vertices, &bones);
    let joint_regressor = joint_regressor(&vertices);
    let shape_dirs = shape_directions(&vertices, &mut rng);
    let pose_dirs = vec![0.0; v * 3 * NUM_POSE_BASIS];
    let keypoint_map = DEFAULT_KEYPOINT_JOINTS
        .iter()
        .map(|&j| KeypointSource::Joint(j))
        .collect();
    let regions = body_regions(&vertices, &skin_weights);

    BodyModel::from_parts(
        vertices,
        faces,
        shape_dirs,
        pose_dirs,
        joint_regressor,
        skin_weights,
        KINEMATIC_PARENTS,
        keypoint_map,
        regions,
    )
    .expect("procedural model satisfies its own invariants")
}

/// Rings of points around the bone axis, with spherical cap rings past each
/// end, plus triangle strips joining consecutive rings.
fn sample_capsule(
    rng: &mut impl Rng,
    start: &Vector3<f64>,
    end: &Vector3<f64>,
    radius: f64,
    front_scale: f64,
    vertices: &mut Vec<[f64; 3]>,
    faces: &mut Vec<[usize; 3]>,
) {
    let axis_vec = end - start;
    let len = axis_vec.norm();
    let axis = axis_vec / len;
    // A stable frame perpendicular to the axis.
    let helper = if axis.x.abs() < 0.9 {
        Vector3::x()
    } else {
        Vector3::z()
    };
    let u = axis.cross(&helper).normalize();
    let w = axis.cross(&u);

    let n_rings = ((len / RING_SPACING).ceil() as usize).max(2);
    let mut ring_starts: Vec<usize> = Vec::new();

    // Cap ring behind the start, then the shaft rings, then a cap past the end.
    let cap = 0.55 * radius;
    let cap_radius = radius * (1.0 - (cap / radius) * (cap / radius)).sqrt();
    let mut centers: Vec<(Vector3<f64>, f64)> = Vec::new();
    centers.push((start - cap * axis, cap_radius));
    for i in 0..=n_rings {
        let t = i as f64 / n_rings as f64;
        centers.push((start + t * axis_vec, radius));
    }
    centers.push((end + cap * axis, cap_radius));

    for (center, r) in centers {
        let phase: f64 = rng.random::<f64>() * std::f64::consts::TAU;
        ring_starts.push(vertices.len());
        for k in 0..RING_POINTS {
            let angle = phase + std::f64::consts::TAU * k as f64 / RING_POINTS as f64;
            let mut offset = r * (angle.cos() * u + angle.sin() * w);
            if offset.y > 0.0 {
                offset.y *= front_scale;
            }
            let p = center + offset;
            vertices.push([p.x, p.y, p.z]);
        }
    }

    for pair in ring_starts.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        for k in 0..RING_POINTS {
            let k1 = (k + 1) % RING_POINTS;
            faces.push([a + k, a + k1, b + k]);
            faces.push([a + k1, b + k1, b + k]);
        }
    }
}

/// Inverse-distance weights to the two nearest bones, normalized per vertex.
fn skinning_weights(vertices: &[[f64; 3]], bones: &[Bone]) -> Vec<f64> {
    let mut weights = vec![0.0; vertices.len() * NUM_JOINTS];
    for (vi, vertex) in vertices.iter().enumerate() {
        let p = Vector3::from(*vertex);
        let mut best: [(usize, f64); 2] = [(usize::MAX, f64::INFINITY); 2];
        for (bi, bone) in bones.iter().enumerate() {
            let d = point_segment_distance(
                &p,
                &Vector3::from(MINI_JOINT_POSITIONS[bone.owner]),
                &Vector3::from(MINI_JOINT_POSITIONS[bone.child]),
            );
            if d < best[0].1 {
                best[1] = best[0];
                best[0] = (bi, d);
            } else if d < best[1].1 {
                best[1] = (bi, d);
            }
        }
        let w0 = 1.0 / (best[0].1 + 1e-4);
        let w1 = 1.0 / (best[1].1 + 1e-4);
        let row = &mut weights[vi * NUM_JOINTS..(vi + 1) * NUM_JOINTS];
        // Complement form keeps every row summing to exactly 1.0; the two
        // nearest bones may share an owner joint, which collapses to 1.0.
        let first = w0 / (w0 + w1);
        row[bones[best[0].0].owner] += first;
        row[bones[best[1].0].owner] += 1.0 - first;
    }
    weights
}

fn point_segment_distance(p: &Vector3<f64>, a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    let ab = b - a;
    let t = ((p - a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0);
    (p - (a + t * ab)).norm()
}

/// Each joint regressed from its eight nearest template vertices with
/// inverse-distance weights.
fn joint_regressor(vertices: &[[f64; 3]]) -> Vec<f64> {
    let mut regressor = vec![0.0; NUM_JOINTS * vertices.len()];
    for j in 0..NUM_JOINTS {
        let joint = Vector3::from(MINI_JOINT_POSITIONS[j]);
        let mut dists: Vec<(usize, f64)> = vertices
            .iter()
            .enumerate()
            .map(|(vi, p)| (vi, (Vector3::from(*p) - joint).norm()))
            .collect();
        dists.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        let picked = &dists[..8];
        let raw: Vec<f64> = picked.iter().map(|(_, d)| 1.0 / (d + 1e-3)).collect();
        let total: f64 = raw.iter().sum();
        for ((vi, _), w) in picked.iter().zip(raw.iter()) {
            regressor[j * vertices.len() + vi] = w / total;
        }
    }
    regressor
}

/// Shape basis: column 0 scales the body about the pelvis (≈5% height per
/// unit), column 1 inflates girth radially off the body axis, and the
/// remaining columns are small smooth sinusoidal fields.
fn shape_directions(vertices: &[[f64; 3]], rng: &mut impl Rng) -> Vec<f64> {
    let mut dirs = vec![0.0; vertices.len() * 3 * NUM_SHAPE_COEFFS];
    struct Field {
        freq: f64,
        phase: f64,
        amp: [f64; 3],
    }
    let fields: Vec<Field> = (2..NUM_SHAPE_COEFFS)
        .map(|_| Field {
            freq: 2.0 + 3.0 * rng.random::<f64>(),
            phase: std::f64::consts::TAU * rng.random::<f64>(),
            amp: [
                0.006 * standard_normal(rng),
                0.006 * standard_normal(rng),
                0.006 * standard_normal(rng),
            ],
        })
        .collect();

    for (vi, p) in vertices.iter().enumerate() {
        let set = |dirs: &mut Vec<f64>, axis: usize, k: usize, value: f64| {
            dirs[(vi * 3 + axis) * NUM_SHAPE_COEFFS + k] = value;
        };
        for axis in 0..3 {
            set(&mut dirs, axis, 0, 0.05 * p[axis]);
        }
        set(&mut dirs, 0, 1, 0.05 * p[0]);
        set(&mut dirs, 1, 1, 0.05 * p[1]);
        for (k, field) in fields.iter().enumerate() {
            let s = (field.freq * p[2] + field.phase).sin();
            for axis in 0..3 {
                set(&mut dirs, axis, k + 2, field.amp[axis] * s);
            }
        }
    }
    dirs
}

/// Torso and head vertex bands used by the isocentering module. Regions are
/// pairwise disjoint and exclude the limbs.
fn body_regions(vertices: &[[f64; 3]], skin_weights: &[f64]) -> BTreeMap<String, Vec<usize>> {
    let torso_owned = [joints::PELVIS, joints::SPINE1, joints::SPINE2, joints::SPINE3];
    let z_hips = 0.5 * (MINI_JOINT_POSITIONS[joints::L_HIP][2] + MINI_JOINT_POSITIONS[joints::R_HIP][2]);
    let z_lower_ribs = MINI_JOINT_POSITIONS[joints::SPINE2][2];
    let z_shoulders = MINI_JOINT_POSITIONS[joints::L_SHOULDER][2];
    let z_neck = MINI_JOINT_POSITIONS[joints::NECK][2];

    let mut abdomen = Vec::new();
    let mut thorax = Vec::new();
    let mut head = Vec::new();
    for (vi, p) in vertices.iter().enumerate() {
        let row = &skin_weights[vi * NUM_JOINTS..(vi + 1) * NUM_JOINTS];
        let dominant = row
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(j, _)| j)
            .unwrap();
        let z = p[2];
        if torso_owned.contains(&dominant) {
            if z >= z_hips && z < z_lower_ribs {
                abdomen.push(vi);
            } else if z >= z_lower_ribs && z < z_shoulders {
                thorax.push(vi);
            }
        } else if dominant == joints::NECK && z >= z_neck {
            head.push(vi);
        }
    }

    let mut regions = BTreeMap::new();
    regions.insert("abdomen".to_string(), abdomen);
    regions.insert("thorax".to_string(), thorax);
    regions.insert("head".to_string(), head);
    regions
}
