//! Axis-angle rotations: Rodrigues' formula and its parameter jacobian.
//!
//! The angle is the vector norm (radians). Below `SMALL_ANGLE` both the
//! rotation and the jacobian switch to second-order Taylor expansions so the
//! `θ → 0` limit is exact rather than a 0/0.

use nalgebra::{Matrix3, Vector3};

/// Angle below which the series expansion takes over.
pub const SMALL_ANGLE: f64 = 1e-7;

/// Skew-symmetric cross-product matrix `[v]×`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rotation matrix for an axis-angle vector.
pub fn rodrigues(axis_angle: &[f64; 3]) -> Matrix3<f64> {
    let aa = Vector3::from(*axis_angle);
    let angle_sq = aa.norm_squared();
    let k = skew(&aa);
    if angle_sq < SMALL_ANGLE * SMALL_ANGLE {
        // sin θ / θ ≈ 1 − θ²/6, (1 − cos θ)/θ² ≈ 1/2 − θ²/24
        let a = 1.0 - angle_sq / 6.0;
        let b = 0.5 - angle_sq / 24.0;
        Matrix3::identity() + a * k + b * (k * k)
    } else {
        let angle = angle_sq.sqrt();
        let a = angle.sin() / angle;
        let b = (1.0 - angle.cos()) / angle_sq;
        Matrix3::identity() + a * k + b * (k * k)
    }
}

/// `∂R/∂a_i` for the three axis-angle components.
///
/// Uses the closed form
/// `∂R/∂a_i = (a_i·[a]× + [a × ((I − R)·e_i)]×) / ‖a‖² · R`
/// away from zero, and the expansion
/// `∂R/∂a_i ≈ [e_i]× + ½([e_i]×[a]× + [a]×[e_i]×)` near zero.
pub fn rodrigues_jacobian(axis_angle: &[f64; 3]) -> [Matrix3<f64>; 3] {
    let aa = Vector3::from(*axis_angle);
    let angle_sq = aa.norm_squared();
    let mut out = [Matrix3::zeros(); 3];
    if angle_sq < 1e-10 {
        let ka = skew(&aa);
        for (i, d) in out.iter_mut().enumerate() {
            let mut e = Vector3::zeros();
            e[i] = 1.0;
            let ke = skew(&e);
            *d = ke + 0.5 * (ke * ka + ka * ke);
        }
    } else {
        let r = rodrigues(axis_angle);
        let ka = skew(&aa);
        let i_minus_r = Matrix3::identity() - r;
        for (i, d) in out.iter_mut().enumerate() {
            let mut e = Vector3::zeros();
            e[i] = 1.0;
            let v = aa.cross(&(i_minus_r * e));
            *d = ((aa[i] * ka + skew(&v)) / angle_sq) * r;
        }
    }
    out
}
