//! Regression loss: parameter-space MSE plus an optional posed-joint MSE,
//! with exact analytic gradients w.r.t. the predicted parameters.
//!
//! `L = w_param·(‖θ̂−θ‖² + ‖β̂−β‖²) + w_joint·(1/J)·Σ_j ‖p_j(θ̂,β̂) − p_j(θ,β)‖²`
//!
//! The joint term differentiates through the kinematic chain via the body
//! model's joint jacobian; axis-angle parameter MSE alone is a poor proxy
//! near ±π, which is why the posed-joint term exists.

use serde::{Deserialize, Serialize};

use super::RegressorError;
use crate::body_model::{
    BodyModel, JointJacobian, PoseParams, ShapeParams, NUM_JOINTS, NUM_POSE_PARAMS,
    NUM_SHAPE_COEFFS,
};

/// Total prediction width: 72 pose + 10 shape values.
pub const PRED_DIM: usize = NUM_POSE_PARAMS + NUM_SHAPE_COEFFS;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub w_param: f64,
    pub w_joint: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            w_param: 1.0,
            w_joint: 0.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), RegressorError> {
        if self.w_param < 0.0 || self.w_joint < 0.0 {
            return Err(RegressorError::InvalidConfig(format!(
                "loss weights must be ≥ 0, got ({}, {})",
                self.w_param, self.w_joint
            )));
        }
        if self.w_param == 0.0 && self.w_joint == 0.0 {
            return Err(RegressorError::InvalidConfig(
                "loss weights must not both be zero".into(),
            ));
        }
        Ok(())
    }
}

pub fn split_prediction(pred: &[f64]) -> Result<(PoseParams, ShapeParams), RegressorError> {
    if pred.len() != PRED_DIM {
        return Err(RegressorError::ShapeMismatch(format!(
            "prediction has {} values, expected {PRED_DIM}",
            pred.len()
        )));
    }
    let theta = PoseParams::from_flat(&pred[..NUM_POSE_PARAMS]).unwrap();
    let beta = ShapeParams::from_slice(&pred[NUM_POSE_PARAMS..]).unwrap();
    Ok((theta, beta))
}

/// Loss value and its exact gradient w.r.t. the 82 predicted values.
pub fn loss_and_grad(
    pred: &[f64],
    theta_gt: &PoseParams,
    beta_gt: &ShapeParams,
    model: &BodyModel,
    weights: &LossWeights,
) -> Result<(f64, Vec<f64>), RegressorError> {
    weights.validate()?;
    let (theta_hat, beta_hat) = split_prediction(pred)?;

    let mut loss = 0.0;
    let mut grad = vec![0.0; PRED_DIM];

    if weights.w_param > 0.0 {
        let gt_flat = theta_gt.to_flat();
        let hat_flat = theta_hat.to_flat();
        for i in 0..NUM_POSE_PARAMS {
            let d = hat_flat[i] - gt_flat[i];
            loss += weights.w_param * d * d;
            grad[i] += 2.0 * weights.w_param * d;
        }
        for k in 0..NUM_SHAPE_COEFFS {
            let d = beta_hat.coeffs[k] - beta_gt.coeffs[k];
            loss += weights.w_param * d * d;
            grad[NUM_POSE_PARAMS + k] += 2.0 * weights.w_param * d;
        }
    }

    if weights.w_joint > 0.0 {
        let (pred_joints, jac) = model.pose_joints_with_jacobian(&theta_hat, &beta_hat);
        let gt_joints = model.pose_joints(theta_gt, beta_gt);
        let inv_j = 1.0 / NUM_JOINTS as f64;
        for j in 0..NUM_JOINTS {
            for c in 0..3 {
                let d = pred_joints[j][c] - gt_joints[j][c];
                loss += weights.w_joint * inv_j * d * d;
                let coeff = 2.0 * weights.w_joint * inv_j * d;
                if coeff != 0.0 {
                    let row = (j * 3 + c) * JointJacobian::NUM_PARAMS;
                    for (g, jv) in grad
                        .iter_mut()
                        .zip(&jac.d[row..row + JointJacobian::NUM_PARAMS])
                    {
                        *g += coeff * jv;
                    }
                }
            }
        }
    }

    Ok((loss, grad))
}
