//! Closed-form similarity alignment checked against a derivative-free
//! numeric minimizer over (rotation, log-scale, translation).

use nalgebra::Vector3;
use spmk_core::body_model::rot::rodrigues;
use spmk_core::metrics::{procrustes_align, SimilarityTransform};
use spmk_core::rng::{rng_from_seed, standard_normal};

fn objective(params: &[f64; 7], pred: &[[f64; 3]], gt: &[[f64; 3]]) -> f64 {
    let transform = SimilarityTransform {
        scale: params[3].exp(),
        rotation: rodrigues(&[params[0], params[1], params[2]]),
        translation: Vector3::new(params[4], params[5], params[6]),
    };
    transform.objective(pred, gt)
}

/// Plain Nelder-Mead over the 7 similarity parameters.
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

/// Multi-start Nelder-Mead with a refinement pass from the best point.
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
    let fine = [0.02, 0.02, 0.02, 0.02, 0.02, 0.02, 0.02];
    let polished = nelder_mead(best.0, fine, 2000, pred, gt);
    polished.1.min(best.1)
}

fn random_cloud(rng: &mut impl rand::Rng, n: usize) -> Vec<[f64; 3]> {
    (0..n)
        .map(|_| {
            [
                standard_normal(rng),
                standard_normal(rng),
                standard_normal(rng),
            ]
        })
        .collect()
}

#[test]
fn closed_form_matches_numeric_minimizer() {
    let mut rng = rng_from_seed(42);
    for case in 0..12 {
        let gt = random_cloud(&mut rng, 12);
        let pred = random_cloud(&mut rng, 12);
        let transform = procrustes_align(&pred, &gt).unwrap();
        let closed = transform.objective(&pred, &gt);
        let numeric = numeric_min_objective(&pred, &gt, 1000 + case);
        assert!(
            (closed - numeric).abs() < 1e-6,
            "case {case}: closed {closed} vs numeric {numeric}"
        );
        // The closed form is the global optimum; the numeric search can
        // never genuinely beat it.
        assert!(closed <= numeric + 1e-9);
    }
}

#[test]
fn closed_form_matches_numeric_on_structured_clouds() {
    // Near-degenerate but valid: points close to a plane.
    let mut rng = rng_from_seed(7);
    let gt: Vec<[f64; 3]> = (0..12)
        .map(|_| {
            [
                standard_normal(&mut rng),
                standard_normal(&mut rng),
                0.05 * standard_normal(&mut rng),
            ]
        })
        .collect();
    let pred = random_cloud(&mut rng, 12);
    let transform = procrustes_align(&pred, &gt).unwrap();
    let closed = transform.objective(&pred, &gt);
    let numeric = numeric_min_objective(&pred, &gt, 555);
    assert!(
        (closed - numeric).abs() < 1e-6,
        "closed {closed} vs numeric {numeric}"
    );
}
