//! Table-height isocentering: given a posed mesh in the camera frame and a
//! camera-to-scanner calibration, measure the target body part's thickness
//! along the table normal and the signed table displacement that brings the
//! part's center onto the scanner isocenter.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::Deserialize;
use thiserror::Error;

use crate::body_model::{BodyModel, PosedBody};

#[derive(Debug, Error)]
pub enum IsocenterError {
    #[error("unknown region `{name}`; valid regions: {valid:?}")]
    UnknownRegion { name: String, valid: Vec<String> },
    #[error("region `{0}` selects no vertices")]
    EmptyRegion(String),
    #[error("region index {index} out of range for body with {vertices} vertices")]
    IndexOutOfRange { index: usize, vertices: usize },
    #[error("invalid calibration: {0}")]
    InvalidCalibration(String),
    #[error("calibration file {path}: {detail}")]
    CalibrationFile { path: String, detail: String },
}

/// Rigid camera→scanner transform plus the table geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct ScannerCalibration {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    /// Unit vector along which the patient support moves (scanner frame).
    pub table_normal: Vector3<f64>,
    /// Isocenter position in the scanner frame, meters.
    pub isocenter: Vector3<f64>,
    /// Table surface height along the normal, meters.
    pub table_height: f64,
    /// Optional travel limits for the displacement, mm (min, max).
    pub displacement_limits_mm: Option<(f64, f64)>,
}

impl ScannerCalibration {
    /// Identity calibration: scanner frame equals camera frame, table normal
    /// along +y, isocenter at the origin.
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
            table_normal: Vector3::y(),
            isocenter: Vector3::zeros(),
            table_height: 0.0,
            displacement_limits_mm: None,
        }
    }

    pub fn validate(&self) -> Result<(), IsocenterError> {
        let gram = self.rotation.transpose() * self.rotation;
        let mut dev: f64 = 0.0;
        for r in 0..3 {
            for c in 0..3 {
                let id = if r == c { 1.0 } else { 0.0 };
                dev = dev.max((gram[(r, c)] - id).abs());
            }
        }
        if dev > 1e-9 {
            return Err(IsocenterError::InvalidCalibration(format!(
                "rotation not orthonormal (max |RᵀR − I| = {dev:e})"
            )));
        }
        if (self.rotation.determinant() - 1.0).abs() > 1e-9 {
            return Err(IsocenterError::InvalidCalibration(
                "rotation determinant is not +1".into(),
            ));
        }
        if (self.table_normal.norm() - 1.0).abs() > 1e-9 {
            return Err(IsocenterError::InvalidCalibration(format!(
                "table normal has length {}, expected 1",
                self.table_normal.norm()
            )));
        }
        if let Some((lo, hi)) = self.displacement_limits_mm {
            if lo > hi {
                return Err(IsocenterError::InvalidCalibration(format!(
                    "displacement limits ({lo}, {hi}) inverted"
                )));
            }
        }
        Ok(())
    }

    /// Isocenter height along the table normal, mm.
    pub fn isocenter_height_mm(&self) -> f64 {
        1000.0 * self.table_normal.dot(&self.isocenter)
    }

    pub fn to_scanner(&self, p: &[f64; 3]) -> Vector3<f64> {
        self.rotation * Vector3::from(*p) + self.translation
    }
}

/// A named vertex subset of the body model.
#[derive(Debug, Clone, PartialEq)]
pub struct BodyRegion {
    pub name: String,
    pub indices: Vec<usize>,
}

/// Looks up a named region precomputed on the model template.
pub fn region_mask(model: &BodyModel, name: &str) -> Result<BodyRegion, IsocenterError> {
    match model.region_vertices(name) {
        Some(indices) if !indices.is_empty() => Ok(BodyRegion {
            name: name.to_string(),
            indices: indices.to_vec(),
        }),
        Some(_) => Err(IsocenterError::EmptyRegion(name.to_string())),
        None => Err(IsocenterError::UnknownRegion {
            name: name.to_string(),
            valid: model.region_names().map(str::to_string).collect(),
        }),
    }
}

/// Thickness and displacement result, all mm.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct IsoResult {
    pub region: String,
    pub thickness_mm: f64,
    pub center_height_mm: f64,
    /// Signed table displacement along the normal that centers the part on
    /// the isocenter (after travel-limit clamping, when configured).
    pub displacement_mm: f64,
}

/// Measures the region's extent along the table normal in the scanner frame
/// and the displacement aligning its center with the isocenter.
pub fn thickness(
    body: &PosedBody,
    region: &BodyRegion,
    calib: &ScannerCalibration,
) -> Result<IsoResult, IsocenterError> {
    calib.validate()?;
    if region.indices.is_empty() {
        return Err(IsocenterError::EmptyRegion(region.name.clone()));
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &i in &region.indices {
        let p = body
            .vertices
            .get(i)
            .ok_or(IsocenterError::IndexOutOfRange {
                index: i,
                vertices: body.vertices.len(),
            })?;
        let height = calib.table_normal.dot(&calib.to_scanner(p));
        lo = lo.min(height);
        hi = hi.max(height);
    }
    let thickness_mm = 1000.0 * (hi - lo);
    let center_height_mm = 1000.0 * 0.5 * (hi + lo);
    let mut displacement_mm = calib.isocenter_height_mm() - center_height_mm;
    if let Some((min, max)) = calib.displacement_limits_mm {
        displacement_mm = displacement_mm.clamp(min, max);
    }
    Ok(IsoResult {
        region: region.name.clone(),
        thickness_mm,
        center_height_mm,
        displacement_mm,
    })
}

/// Post-positioning error: how far the true part center ends up from the
/// isocenter after applying the computed displacement, mm.
pub fn iso_error(
    result: &IsoResult,
    gt_center_height_mm: f64,
    calib: &ScannerCalibration,
) -> f64 {
    ((gt_center_height_mm + result.displacement_mm) - calib.isocenter_height_mm()).abs()
}

/// Calibration file: TOML with the rotation row-major, translations in
/// meters, and optional displacement limits in mm.
pub fn load_calibration(path: impl AsRef<Path>) -> Result<ScannerCalibration, IsocenterError> {
    let path = path.as_ref();
    let fail = |detail: String| IsocenterError::CalibrationFile {
        path: path.display().to_string(),
        detail,
    };
    let text = std::fs::read_to_string(path).map_err(|e| fail(e.to_string()))?;

    #[derive(Deserialize)]
    struct Raw {
        rotation: Vec<f64>,
        translation: Vec<f64>,
        table_normal: Vec<f64>,
        isocenter: Vec<f64>,
        table_height: f64,
        displacement_limits_mm: Option<Vec<f64>>,
    }
    let raw: Raw = toml::from_str(&text).map_err(|e| fail(e.to_string()))?;
    if raw.rotation.len() != 9 {
        return Err(fail(format!(
            "rotation must have 9 row-major values, got {}",
            raw.rotation.len()
        )));
    }
    let vec3 = |v: &[f64], name: &str| -> Result<Vector3<f64>, IsocenterError> {
        if v.len() != 3 {
            return Err(fail(format!("{name} must have 3 values, got {}", v.len())));
        }
        Ok(Vector3::new(v[0], v[1], v[2]))
    };
    let r = &raw.rotation;
    let calib = ScannerCalibration {
        rotation: Matrix3::new(r[0], r[1], r[2], r[3], r[4], r[5], r[6], r[7], r[8]),
        translation: vec3(&raw.translation, "translation")?,
        table_normal: vec3(&raw.table_normal, "table_normal")?,
        isocenter: vec3(&raw.isocenter, "isocenter")?,
        table_height: raw.table_height,
        displacement_limits_mm: match raw.displacement_limits_mm {
            None => None,
            Some(v) if v.len() == 2 => Some((v[0], v[1])),
            Some(v) => {
                return Err(fail(format!(
                    "displacement_limits_mm must have 2 values, got {}",
                    v.len()
                )))
            }
        },
    };
    calib.validate()?;
    Ok(calib)
}

pub fn save_calibration(
    calib: &ScannerCalibration,
    path: impl AsRef<Path>,
) -> Result<(), IsocenterError> {
    let path = path.as_ref();
    let mut out = String::new();
    let fmt = |xs: &[f64]| -> String {
        let parts: Vec<String> = xs.iter().map(|x| format!("{x:?}")).collect();
        format!("[{}]", parts.join(", "))
    };
    let mut rot = Vec::with_capacity(9);
    for r in 0..3 {
        for c in 0..3 {
            rot.push(calib.rotation[(r, c)]);
        }
    }
    let _ = writeln!(out, "rotation = {}", fmt(&rot));
    let _ = writeln!(out, "translation = {}", fmt(calib.translation.as_slice()));
    let _ = writeln!(out, "table_normal = {}", fmt(calib.table_normal.as_slice()));
    let _ = writeln!(out, "isocenter = {}", fmt(calib.isocenter.as_slice()));
    let _ = writeln!(out, "table_height = {:?}", calib.table_height);
    if let Some((lo, hi)) = calib.displacement_limits_mm {
        let _ = writeln!(out, "displacement_limits_mm = [{lo:?}, {hi:?}]");
    }
    std::fs::write(path, out).map_err(|e| IsocenterError::CalibrationFile {
        path: path.display().to_string(),
        detail: e.to_string(),
    })
}
