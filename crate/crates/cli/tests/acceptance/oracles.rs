//! Independent reference implementations used only by the acceptance
//! suite: a brute-force homogeneous-matrix skinning path, a derivative-free
//! similarity-fit minimizer, and a golden-section scalar minimizer. None of
//! them share code with the library paths they check.

use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};
use spmk_core::body_model::{
    rot::rodrigues, BodyModel, PoseParams, ShapeParams, NUM_JOINTS, NUM_POSE_BASIS,
    NUM_SHAPE_COEFFS,
};
use spmk_core::metrics::SimilarityTransform;
use spmk_core::rng::{rng_from_seed, standard_normal};

fn homogeneous(rot: Matrix3<f64>, trans: Vector3<f64>) -> Matrix4<f64> {
    let mut m = Matrix4::identity();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&rot);
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(&trans);
    m
}

/// Dense brute-force linear blend skinning over all joints with recursive
/// homogeneous world matrices.
pub fn naive_lbs(model: &BodyModel, theta: &PoseParams, beta: &ShapeParams) -> Vec<[f64; 3]> {
    let v = model.num_vertices();
    let mut shaped: Vec<[f64; 3]> = model.template_vertices().to_vec();
    for k in 0..NUM_SHAPE_COEFFS {
        for (vi, vertex) in shaped.iter_mut().enumerate() {
            for axis in 0..3 {
                vertex[axis] +=
                    beta.coeffs[k] * model.shape_dirs()[(vi * 3 + axis) * NUM_SHAPE_COEFFS + k];
            }
        }
    }
    let mut rest = [[0.0f64; 3]; NUM_JOINTS];
    for j in 0..NUM_JOINTS {
        for (vi, vertex) in shaped.iter().enumerate() {
            let w = model.joint_regressor()[j * v + vi];
            for axis in 0..3 {
                rest[j][axis] += w * vertex[axis];
            }
        }
    }
    let mut basis = [0.0f64; NUM_POSE_BASIS];
    for j in 1..NUM_JOINTS {
        let r = rodrigues(&theta.joints[j]);
        for row in 0..3 {
            for col in 0..3 {
                let id = if row == col { 1.0 } else { 0.0 };
                basis[9 * (j - 1) + 3 * row + col] = r[(row, col)] - id;
            }
        }
    }
    for (vi, vertex) in shaped.iter_mut().enumerate() {
        for axis in 0..3 {
            for (b, coeff) in basis.iter().enumerate() {
                vertex[axis] += model.pose_dirs()[(vi * 3 + axis) * NUM_POSE_BASIS + b] * coeff;
            }
        }
    }
    let mut world = [Matrix4::identity(); NUM_JOINTS];
    for j in 0..NUM_JOINTS {
        let local = rodrigues(&theta.joints[j]);
        let r_j = Vector3::from(rest[j]);
        match model.kinematic_parents()[j] {
            None => world[j] = homogeneous(local, r_j),
            Some(p) => {
                let offset = r_j - Vector3::from(rest[p]);
                world[j] = world[p] * homogeneous(local, offset);
            }
        }
    }
    let mut skin = [Matrix4::identity(); NUM_JOINTS];
    for j in 0..NUM_JOINTS {
        skin[j] = world[j] * homogeneous(Matrix3::identity(), -Vector3::from(rest[j]));
    }
    shaped
        .iter()
        .enumerate()
        .map(|(vi, p)| {
            let x = Vector4::new(p[0], p[1], p[2], 1.0);
            let mut acc = Vector4::zeros();
            for j in 0..NUM_JOINTS {
                let w = model.skin_weights()[vi * NUM_JOINTS + j];
                acc += w * (skin[j] * x);
            }
            [acc.x, acc.y, acc.z]
        })
        .collect()
}

fn objective(params: &[f64; 7], pred: &[[f64; 3]], gt: &[[f64; 3]]) -> f64 {
    let transform = SimilarityTransform {
        scale: params[3].exp(),
        rotation: rodrigues(&[params[0], params[1], params[2]]),
        translation: Vector3::new(params[4], params[5], params[6]),
    };
    transform.objective(pred, gt)
}

fn nelder_mead(
    start: [f64; 7],
    steps: [f64; 7],
    iterations: usize,
    pred: &[[f64; 3]],
    gt: &[[f64; 3]],
) -> ([f64; 7], f64) {
    let f = |x: &[f64; 7]| objective(x, pred, gt);
    let n = 7usize;
    let mut simplex: Vec<([f64; 7], f64)> = Vec::with_capacity(n + 1);
    simplex.push((start, f(&start)));
    for i in 0..n {
        let mut point = start;
        point[i] += steps[i];
        simplex.push((point, f(&point)));
    }
    for _ in 0..iterations {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        if simplex[n].1 - simplex[0].1 < 1e-16 {
            break;
        }
        let mut centroid = [0.0; 7];
        for (point, _) in &simplex[..n] {
            for k in 0..7 {
                centroid[k] += point[k] / n as f64;
            }
        }
        let worst = simplex[n];
        let mut reflect = [0.0; 7];
        for k in 0..7 {
            reflect[k] = centroid[k] + (centroid[k] - worst.0[k]);
        }
        let fr = f(&reflect);
        if fr < simplex[0].1 {
            let mut expand = [0.0; 7];
            for k in 0..7 {
                expand[k] = centroid[k] + 2.0 * (centroid[k] - worst.0[k]);
            }
            let fe = f(&expand);
            simplex[n] = if fe < fr { (expand, fe) } else { (reflect, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (reflect, fr);
        } else {
            let mut contract = [0.0; 7];
            for k in 0..7 {
                contract[k] = centroid[k] + 0.5 * (worst.0[k] - centroid[k]);
            }
            let fc = f(&contract);
            if fc < worst.1 {
                simplex[n] = (contract, fc);
            } else {
                let best = simplex[0].0;
                for entry in simplex.iter_mut().skip(1) {
                    for k in 0..7 {
                        entry.0[k] = best[k] + 0.5 * (entry.0[k] - best[k]);
                    }
                    entry.1 = f(&entry.0);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    simplex[0]
}

/// Multi-start Nelder-Mead over (axis-angle, log-scale, translation) with a
/// polish pass from the best start.
pub fn numeric_min_objective(pred: &[[f64; 3]], gt: &[[f64; 3]], seed: u64) -> f64 {
    let mut rng = rng_from_seed(seed);
    let coarse = [0.6, 0.6, 0.6, 0.4, 0.4, 0.4, 0.4];
    let mut best = nelder_mead([0.0; 7], coarse, 2000, pred, gt);
    for _ in 0..8 {
        let start = [
            1.5 * standard_normal(&mut rng),
            1.5 * standard_normal(&mut rng),
            1.5 * standard_normal(&mut rng),
            0.4 * standard_normal(&mut rng),
            standard_normal(&mut rng),
            standard_normal(&mut rng),
            standard_normal(&mut rng),
        ];
        let candidate = nelder_mead(start, coarse, 2000, pred, gt);
        if candidate.1 < best.1 {
            best = candidate;
        }
    }
    let fine = [0.02; 7];
    let polished = nelder_mead(best.0, fine, 2000, pred, gt);
    polished.1.min(best.1)
}

/// 1-D minimization: golden-section bracketing followed by a parabolic
/// vertex fit. Pure value comparison bottoms out near √ε for a smooth
/// minimum; the interpolation step recovers the minimizer well below that
/// noise floor.
pub fn scalar_min(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let phi = (5.0f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - phi * (hi - lo);
    let mut d = lo + phi * (hi - lo);
    let mut fc = f(c);
    let mut fd = f(d);
    while (hi - lo) > 1e-6 {
        if fc < fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - phi * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + phi * (hi - lo);
            fd = f(d);
        }
    }
    // Parabolic vertex through three points straddling the bracket.
    let m = 0.5 * (lo + hi);
    let h = 1e-4;
    let (fa, fb, fc) = (f(m - h), f(m), f(m + h));
    let denom = fa - 2.0 * fb + fc;
    if denom.abs() < 1e-300 {
        return m;
    }
    m - h * 0.5 * (fc - fa) / denom
}
