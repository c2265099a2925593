//! Projection checked against a homogeneous-matrix oracle, plus the
//! back-projection round trip (back-projection implemented here, for tests
//! only).

use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};
use spmk_core::camera::{project, sample_camera, CameraIntrinsics, CameraSamplingConfig};
use spmk_core::rng::{rng_from_seed, standard_normal};

#[test]
fn projection_matches_homogeneous_matrix_oracle() {
    let intr = CameraIntrinsics::default();
    let mut rng = rng_from_seed(5);
    let extr = sample_camera(&CameraSamplingConfig::default(), &mut rng).unwrap();

    // K·[R|t] as a single homogeneous pipeline.
    let k = Matrix3::new(intr.fx, 0.0, intr.cx, 0.0, intr.fy, intr.cy, 0.0, 0.0, 1.0);
    let mut rt = Matrix4::identity();
    rt.fixed_view_mut::<3, 3>(0, 0).copy_from(&extr.rotation);
    rt.fixed_view_mut::<3, 1>(0, 3).copy_from(&extr.translation);

    let points: Vec<[f64; 3]> = (0..50)
        .map(|_| {
            [
                standard_normal(&mut rng),
                standard_normal(&mut rng),
                standard_normal(&mut rng),
            ]
        })
        .collect();
    let (coords, vis) = project(&points, &intr, &extr);
    for (i, p) in points.iter().enumerate() {
        let cam = rt * Vector4::new(p[0], p[1], p[2], 1.0);
        let pix = k * Vector3::new(cam.x, cam.y, cam.z);
        if cam.z > 1e-6 {
            let expect = [pix.x / pix.z, pix.y / pix.z];
            assert!(
                (coords[i][0] - expect[0]).abs() < 1e-9
                    && (coords[i][1] - expect[1]).abs() < 1e-9,
                "point {i}: {:?} vs {:?}",
                coords[i],
                expect
            );
        } else {
            assert!(!vis[i]);
        }
    }
}

#[test]
fn back_projection_recovers_camera_frame_points() {
    let intr = CameraIntrinsics::default();
    let mut rng = rng_from_seed(9);
    let extr = sample_camera(&CameraSamplingConfig::default(), &mut rng).unwrap();
    for _ in 0..100 {
        let world = [
            0.5 * standard_normal(&mut rng),
            0.2 * standard_normal(&mut rng),
            0.5 * standard_normal(&mut rng),
        ];
        let cam = extr.to_camera(&world);
        let (coords, vis) = project(&[world], &intr, &extr);
        if !vis[0] {
            continue;
        }
        // Back-project at the known depth.
        let x = (coords[0][0] - intr.cx) / intr.fx * cam.z;
        let y = (coords[0][1] - intr.cy) / intr.fy * cam.z;
        assert!((x - cam.x).abs() < 1e-9);
        assert!((y - cam.y).abs() < 1e-9);
    }
}
