//! Gaussian keypoint heatmaps: the interchange representation between the
//! detector, fusion, and regressor stages.
//!
//! Grid cell `(r, c)` covers the source-image square
//! `[c·stride, (c+1)·stride) × [r·stride, (r+1)·stride)`, so its center sits
//! at `((c + 0.5)·stride, (r + 0.5)·stride)` px. Rendering writes an
//! unnormalized Gaussian (peak value 1 at the keypoint's continuous
//! position) into every cell of a visible joint's grid; invisible joints get
//! all-zero grids.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum HeatmapError {
    #[error("sigma must be positive, got {0}")]
    NonPositiveSigma(f64),
    #[error("temperature must be positive, got {0}")]
    NonPositiveTemperature(f64),
    #[error("heatmap stacks disagree: {0}")]
    ShapeMismatch(String),
    #[error("invalid grid value at joint {joint}, cell {cell}: {value}")]
    InvalidValue {
        joint: usize,
        cell: usize,
        value: f64,
    },
    #[error("keypoint set invalid: {0}")]
    InvalidKeypoints(String),
    #[error("grid {height}x{width} does not pool evenly to {target_h}x{target_w}")]
    PoolMismatch {
        height: usize,
        width: usize,
        target_h: usize,
        target_w: usize,
    },
}

/// Heatmap geometry: grid resolution and px-per-cell stride.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeatmapGeometry {
    pub height: usize,
    pub width: usize,
    pub stride: f64,
}

impl HeatmapGeometry {
    /// Source-image position of a cell center.
    pub fn cell_center(&self, row: usize, col: usize) -> [f64; 2] {
        [
            (col as f64 + 0.5) * self.stride,
            (row as f64 + 0.5) * self.stride,
        ]
    }

    /// Continuous cell coordinates of a source-image position.
    pub fn to_cell(&self, coords: [f64; 2]) -> [f64; 2] {
        [
            coords[0] / self.stride - 0.5,
            coords[1] / self.stride - 0.5,
        ]
    }
}

/// A stack of per-joint likelihood grids.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapStack {
    geometry: HeatmapGeometry,
    n_joints: usize,
    data: Vec<f64>,
}

impl HeatmapStack {
    /// Wraps raw grids, validating that every value is finite and ≥ 0.
    pub fn from_grids(
        geometry: HeatmapGeometry,
        n_joints: usize,
        data: Vec<f64>,
    ) -> Result<Self, HeatmapError> {
        assert_eq!(data.len(), n_joints * geometry.height * geometry.width);
        let cells = geometry.height * geometry.width;
        for (i, &v) in data.iter().enumerate() {
            if !v.is_finite() || v < 0.0 {
                return Err(HeatmapError::InvalidValue {
                    joint: i / cells,
                    cell: i % cells,
                    value: v,
                });
            }
        }
        Ok(Self {
            geometry,
            n_joints,
            data,
        })
    }

    pub fn geometry(&self) -> HeatmapGeometry {
        self.geometry
    }

    pub fn n_joints(&self) -> usize {
        self.n_joints
    }

    pub fn grid(&self, joint: usize) -> &[f64] {
        let cells = self.geometry.height * self.geometry.width;
        &self.data[joint * cells..(joint + 1) * cells]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.geometry == other.geometry && self.n_joints == other.n_joints
    }

    /// Block-average pooling to `target_h × target_w`; the grid must divide
    /// evenly. Used to build regressor inputs.
    pub fn avg_pool(&self, target_h: usize, target_w: usize) -> Result<Vec<f64>, HeatmapError> {
        let (h, w) = (self.geometry.height, self.geometry.width);
        if target_h == 0 || target_w == 0 || h % target_h != 0 || w % target_w != 0 {
            return Err(HeatmapError::PoolMismatch {
                height: h,
                width: w,
                target_h,
                target_w,
            });
        }
        let (bh, bw) = (h / target_h, w / target_w);
        let norm = 1.0 / (bh * bw) as f64;
        let mut out = vec![0.0; self.n_joints * target_h * target_w];
        for j in 0..self.n_joints {
            let grid = self.grid(j);
            for tr in 0..target_h {
                for tc in 0..target_w {
                    let mut acc = 0.0;
                    for r in tr * bh..(tr + 1) * bh {
                        for c in tc * bw..(tc + 1) * bw {
                            acc += grid[r * w + c];
                        }
                    }
                    out[(j * target_h + tr) * target_w + tc] = acc * norm;
                }
            }
        }
        Ok(out)
    }
}

/// 2D keypoints in the source-image frame.
#[derive(Debug, Clone, PartialEq)]
pub struct KeypointSet {
    pub coords: Vec<[f64; 2]>,
    pub confidence: Vec<f64>,
    pub visibility: Vec<bool>,
}

impl KeypointSet {
    pub fn new(
        coords: Vec<[f64; 2]>,
        confidence: Vec<f64>,
        visibility: Vec<bool>,
    ) -> Result<Self, HeatmapError> {
        if coords.len() != confidence.len() || coords.len() != visibility.len() {
            return Err(HeatmapError::InvalidKeypoints(
                "coords, confidence and visibility lengths differ".into(),
            ));
        }
        for (i, &c) in confidence.iter().enumerate() {
            if !(0.0..=1.0).contains(&c) {
                return Err(HeatmapError::InvalidKeypoints(format!(
                    "confidence[{i}] = {c} outside [0, 1]"
                )));
            }
        }
        for (i, (xy, vis)) in coords.iter().zip(&visibility).enumerate() {
            if *vis && !(xy[0].is_finite() && xy[1].is_finite()) {
                return Err(HeatmapError::InvalidKeypoints(format!(
                    "visible keypoint {i} has non-finite coordinates"
                )));
            }
        }
        Ok(Self {
            coords,
            confidence,
            visibility,
        })
    }

    /// Fully-visible keypoints at unit confidence.
    pub fn visible(coords: Vec<[f64; 2]>) -> Self {
        let n = coords.len();
        Self {
            coords,
            confidence: vec![1.0; n],
            visibility: vec![true; n],
        }
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }
}

/// Renders keypoints into Gaussian grids. A visible joint at offset
/// `(dx, dy)` cells from a cell produces `exp(−(dx²+dy²)·stride²/(2σ²))`
/// in that cell; invisible joints produce all-zero grids.
pub fn render(
    kps: &KeypointSet,
    resolution: (usize, usize),
    stride: f64,
    sigma: f64,
) -> Result<HeatmapStack, HeatmapError> {
    if sigma <= 0.0 {
        return Err(HeatmapError::NonPositiveSigma(sigma));
    }
    let (h, w) = resolution;
    let geometry = HeatmapGeometry {
        height: h,
        width: w,
        stride,
    };
    let inv_two_sigma_sq = 1.0 / (2.0 * sigma * sigma);
    let mut data = vec![0.0; kps.len() * h * w];
    for (j, (xy, vis)) in kps.coords.iter().zip(&kps.visibility).enumerate() {
        if !vis {
            continue;
        }
        let [cu, cv] = geometry.to_cell(*xy);
        let grid = &mut data[j * h * w..(j + 1) * h * w];
        for r in 0..h {
            let dy = (r as f64 - cv) * stride;
            let ey = dy * dy * inv_two_sigma_sq;
            let row = &mut grid[r * w..(r + 1) * w];
            for (c, cell) in row.iter_mut().enumerate() {
                let dx = (c as f64 - cu) * stride;
                *cell = (-(dx * dx * inv_two_sigma_sq + ey)).exp();
            }
        }
    }
    HeatmapStack::from_grids(geometry, kps.len(), data)
}

/// Peak decode: per joint, the source-frame center of the maximum cell
/// (first occurrence in row-major order on ties). Confidence is the peak
/// value clamped to `[0, 1]`; an all-zero grid decodes as invisible.
pub fn decode_argmax(stack: &HeatmapStack) -> KeypointSet {
    let geom = stack.geometry();
    let w = geom.width;
    let mut coords = Vec::with_capacity(stack.n_joints());
    let mut confidence = Vec::with_capacity(stack.n_joints());
    let mut visibility = Vec::with_capacity(stack.n_joints());
    for j in 0..stack.n_joints() {
        let grid = stack.grid(j);
        let (mut best_idx, mut best) = (0usize, f64::NEG_INFINITY);
        for (i, &v) in grid.iter().enumerate() {
            if v > best {
                best = v;
                best_idx = i;
            }
        }
        if best <= 0.0 {
            coords.push([0.0, 0.0]);
            confidence.push(0.0);
            visibility.push(false);
        } else {
            coords.push(geom.cell_center(best_idx / w, best_idx % w));
            confidence.push(best.clamp(0.0, 1.0));
            visibility.push(true);
        }
    }
    KeypointSet {
        coords,
        confidence,
        visibility,
    }
}

/// Differentiable-style decode: the expectation of cell centers under a
/// softmax over log-values at the given temperature, i.e. weights
/// `∝ value^(1/temperature)`. Sharpens toward the argmax as the temperature
/// goes to zero; a uniform grid decodes to the grid center.
pub fn decode_soft_argmax(
    stack: &HeatmapStack,
    temperature: f64,
) -> Result<KeypointSet, HeatmapError> {
    if temperature <= 0.0 {
        return Err(HeatmapError::NonPositiveTemperature(temperature));
    }
    let geom = stack.geometry();
    let (h, w) = (geom.height, geom.width);
    let inv_t = 1.0 / temperature;
    let mut coords = Vec::with_capacity(stack.n_joints());
    let mut confidence = Vec::with_capacity(stack.n_joints());
    let mut visibility = Vec::with_capacity(stack.n_joints());
    for j in 0..stack.n_joints() {
        let grid = stack.grid(j);
        let peak = grid.iter().copied().fold(0.0, f64::max);
        if peak <= 0.0 {
            // No evidence: decode to the grid center, flagged invisible.
            coords.push([0.5 * w as f64 * geom.stride, 0.5 * h as f64 * geom.stride]);
            confidence.push(0.0);
            visibility.push(false);
            continue;
        }
        let mut total = 0.0;
        let mut acc_u = 0.0;
        let mut acc_v = 0.0;
        for r in 0..h {
            for c in 0..w {
                let v = grid[r * w + c];
                if v <= 0.0 {
                    continue;
                }
                let weight = (v / peak).powf(inv_t);
                let center = geom.cell_center(r, c);
                total += weight;
                acc_u += weight * center[0];
                acc_v += weight * center[1];
            }
        }
        coords.push([acc_u / total, acc_v / total]);
        confidence.push(peak.clamp(0.0, 1.0));
        visibility.push(true);
    }
    Ok(KeypointSet {
        coords,
        confidence,
        visibility,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use rand::Rng;

    const RES: (usize, usize) = (64, 64);
    const STRIDE: f64 = 4.0;
    const SIGMA: f64 = 8.0;

    fn single(coords: [f64; 2]) -> KeypointSet {
        KeypointSet::visible(vec![coords])
    }

    #[test]
    fn peak_is_one_at_cell_center() {
        let geom = HeatmapGeometry {
            height: 64,
            width: 64,
            stride: STRIDE,
        };
        let at = geom.cell_center(20, 31);
        let stack = render(&single(at), RES, STRIDE, SIGMA).unwrap();
        let grid = stack.grid(0);
        let max = grid.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(max, 1.0);
        assert_eq!(grid[20 * 64 + 31], 1.0);
    }

    #[test]
    fn invisible_joint_renders_all_zero() {
        let kps = KeypointSet::new(vec![[10.0, 10.0]], vec![0.0], vec![false]).unwrap();
        let stack = render(&kps, RES, STRIDE, SIGMA).unwrap();
        assert!(stack.grid(0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gaussian_values_are_analytic() {
        let geom = HeatmapGeometry {
            height: 64,
            width: 64,
            stride: STRIDE,
        };
        let at = geom.cell_center(30, 30);
        let stack = render(&single(at), RES, STRIDE, SIGMA).unwrap();
        let grid = stack.grid(0);
        for (dr, dc) in [(0i64, 1i64), (2, -3), (-5, 4), (7, 7)] {
            let r = (30 + dr) as usize;
            let c = (30 + dc) as usize;
            let expect =
                (-((dr * dr + dc * dc) as f64) * STRIDE * STRIDE / (2.0 * SIGMA * SIGMA)).exp();
            assert!(
                (grid[r * 64 + c] - expect).abs() < 1e-12,
                "offset ({dr},{dc})"
            );
        }
    }

    #[test]
    fn nonpositive_sigma_is_rejected() {
        let err = render(&single([1.0, 1.0]), RES, STRIDE, 0.0).unwrap_err();
        assert_eq!(err, HeatmapError::NonPositiveSigma(0.0));
    }

    #[test]
    fn argmax_round_trip_at_cell_center_is_exact() {
        let geom = HeatmapGeometry {
            height: 64,
            width: 64,
            stride: STRIDE,
        };
        let at = geom.cell_center(12, 40);
        let stack = render(&single(at), RES, STRIDE, SIGMA).unwrap();
        let decoded = decode_argmax(&stack);
        assert_eq!(decoded.coords[0], at);
        assert_eq!(decoded.confidence[0], 1.0);
        assert!(decoded.visibility[0]);
    }

    #[test]
    fn argmax_quantization_bound_per_axis() {
        let mut rng = rng_from_seed(17);
        for _ in 0..500 {
            let at = [
                rng.random::<f64>() * 64.0 * STRIDE,
                rng.random::<f64>() * 64.0 * STRIDE,
            ];
            let stack = render(&single(at), RES, STRIDE, SIGMA).unwrap();
            let decoded = decode_argmax(&stack);
            assert!(decoded.visibility[0]);
            for axis in 0..2 {
                let err = (decoded.coords[0][axis] - at[axis]).abs();
                assert!(err <= 0.5 * STRIDE + 1e-12, "axis {axis} err {err}");
            }
        }
    }

    #[test]
    fn argmax_tie_breaks_to_first_row_major() {
        let geom = HeatmapGeometry {
            height: 4,
            width: 4,
            stride: 1.0,
        };
        let mut data = vec![0.0; 16];
        data[5] = 0.7;
        data[10] = 0.7;
        let stack = HeatmapStack::from_grids(geom, 1, data).unwrap();
        let decoded = decode_argmax(&stack);
        assert_eq!(decoded.coords[0], geom.cell_center(1, 1));
    }

    #[test]
    fn argmax_all_zero_grid_is_invisible() {
        let geom = HeatmapGeometry {
            height: 8,
            width: 8,
            stride: 2.0,
        };
        let stack = HeatmapStack::from_grids(geom, 1, vec![0.0; 64]).unwrap();
        let decoded = decode_argmax(&stack);
        assert!(!decoded.visibility[0]);
        assert_eq!(decoded.confidence[0], 0.0);
    }

    #[test]
    fn scaling_scales_confidence_not_location() {
        let geom = HeatmapGeometry {
            height: 64,
            width: 64,
            stride: STRIDE,
        };
        let at = [131.0, 99.5];
        let stack = render(&single(at), RES, STRIDE, SIGMA).unwrap();
        let base = decode_argmax(&stack);
        for scale in [0.25, 0.5, 0.9, 1.0] {
            let scaled: Vec<f64> = stack.data().iter().map(|v| v * scale).collect();
            let scaled = HeatmapStack::from_grids(geom, 1, scaled).unwrap();
            let decoded = decode_argmax(&scaled);
            assert_eq!(decoded.coords[0], base.coords[0]);
            assert!((decoded.confidence[0] - scale * base.confidence[0]).abs() < 1e-15);
        }
    }

    #[test]
    fn soft_argmax_recovers_subpixel_positions() {
        let mut rng = rng_from_seed(23);
        let margin = 3.0 * SIGMA; // ≥ 3σ from every border
        for _ in 0..200 {
            let at = [
                margin + rng.random::<f64>() * (64.0 * STRIDE - 2.0 * margin),
                margin + rng.random::<f64>() * (64.0 * STRIDE - 2.0 * margin),
            ];
            let stack = render(&single(at), RES, STRIDE, SIGMA).unwrap();
            let decoded = decode_soft_argmax(&stack, 0.1).unwrap();
            let du = decoded.coords[0][0] - at[0];
            let dv = decoded.coords[0][1] - at[1];
            let err = (du * du + dv * dv).sqrt();
            assert!(err < 0.1, "soft argmax err {err} px at {at:?}");
        }
    }

    #[test]
    fn soft_argmax_uniform_grid_is_image_center() {
        let geom = HeatmapGeometry {
            height: 64,
            width: 64,
            stride: STRIDE,
        };
        let stack = HeatmapStack::from_grids(geom, 1, vec![0.3; 64 * 64]).unwrap();
        let decoded = decode_soft_argmax(&stack, 0.7).unwrap();
        assert!((decoded.coords[0][0] - 128.0).abs() < 1e-9);
        assert!((decoded.coords[0][1] - 128.0).abs() < 1e-9);
    }

    #[test]
    fn soft_argmax_translation_equivariance() {
        let at = [100.0, 120.0];
        let stack = render(&single(at), RES, STRIDE, SIGMA).unwrap();
        let base = decode_soft_argmax(&stack, 0.1).unwrap();
        for shift in [1i64, 3, -2] {
            let shifted = [at[0] + shift as f64 * STRIDE, at[1]];
            let stack = render(&single(shifted), RES, STRIDE, SIGMA).unwrap();
            let decoded = decode_soft_argmax(&stack, 0.1).unwrap();
            let expect = base.coords[0][0] + shift as f64 * STRIDE;
            assert!(
                (decoded.coords[0][0] - expect).abs() < 1e-6,
                "shift {shift}"
            );
            assert!((decoded.coords[0][1] - base.coords[0][1]).abs() < 1e-6);
        }
    }

    #[test]
    fn soft_argmax_needs_positive_temperature() {
        let stack = render(&single([10.0, 10.0]), RES, STRIDE, SIGMA).unwrap();
        assert!(matches!(
            decode_soft_argmax(&stack, 0.0),
            Err(HeatmapError::NonPositiveTemperature(_))
        ));
    }

    #[test]
    fn avg_pool_averages_blocks() {
        let geom = HeatmapGeometry {
            height: 4,
            width: 4,
            stride: 1.0,
        };
        let data: Vec<f64> = (0..16).map(|i| i as f64).collect();
        let stack = HeatmapStack::from_grids(geom, 1, data).unwrap();
        let pooled = stack.avg_pool(2, 2).unwrap();
        assert_eq!(pooled, vec![2.5, 4.5, 10.5, 12.5]);
        assert!(matches!(
            stack.avg_pool(3, 2),
            Err(HeatmapError::PoolMismatch { .. })
        ));
    }

    #[test]
    fn negative_grid_values_are_rejected() {
        let geom = HeatmapGeometry {
            height: 2,
            width: 2,
            stride: 1.0,
        };
        let err = HeatmapStack::from_grids(geom, 1, vec![0.0, -0.1, 0.0, 0.0]).unwrap_err();
        assert!(matches!(err, HeatmapError::InvalidValue { cell: 1, .. }));
    }
}
