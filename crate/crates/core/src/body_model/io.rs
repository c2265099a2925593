//! Model-parameter file format: a single TOML document, UTF-8, with the
//! array dimensions spelled out in a `dims` table and every array flattened
//! row-major. Keypoint map entries are `"joint:<idx>"` or `"vertex:<idx>"`;
//! the root parent is stored as `-1`.
//!
//! Real SMPL-style releases can be converted into this layout by exporting
//! the template, blend-shape tensors, joint regressor, skinning weights and
//! the parent list in the row-major orders documented here (see the README
//! converter note).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::Deserialize;

use super::{BodyModel, KeypointSource, ModelError, NUM_JOINTS, NUM_POSE_BASIS, NUM_SHAPE_COEFFS};

pub const MODEL_FORMAT_VERSION: i64 = 1;

#[derive(Deserialize)]
struct RawModelFile {
    version: i64,
    dims: RawDims,
    template_vertices: Vec<f64>,
    faces: Vec<i64>,
    shape_dirs: Vec<f64>,
    pose_dirs: Vec<f64>,
    joint_regressor: Vec<f64>,
    skin_weights: Vec<f64>,
    kinematic_parents: Vec<i64>,
    keypoint_map: Vec<String>,
    #[serde(default)]
    regions: BTreeMap<String, Vec<i64>>,
}

#[derive(Deserialize)]
struct RawDims {
    vertices: i64,
    faces: i64,
    joints: i64,
    shape_coeffs: i64,
    pose_basis: i64,
    keypoints: i64,
}

/// Loads and validates a model-parameter file.
pub fn load_model(path: impl AsRef<Path>) -> Result<BodyModel, ModelError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ModelError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_model(&text)
}

fn parse_model(text: &str) -> Result<BodyModel, ModelError> {
    let raw: RawModelFile =
        toml::from_str(text).map_err(|e| ModelError::Parse(e.to_string()))?;
    if raw.version != MODEL_FORMAT_VERSION {
        return Err(ModelError::Parse(format!(
            "unsupported model format version {}",
            raw.version
        )));
    }
    let dims = &raw.dims;
    if dims.joints != NUM_JOINTS as i64 {
        return Err(ModelError::Invariant {
            field: "kinematic_parents",
            detail: format!("expected {} joints, file declares {}", NUM_JOINTS, dims.joints),
        });
    }
    if dims.shape_coeffs != NUM_SHAPE_COEFFS as i64 {
        return Err(ModelError::Invariant {
            field: "shape_dirs",
            detail: format!(
                "expected {} shape coefficients, file declares {}",
                NUM_SHAPE_COEFFS, dims.shape_coeffs
            ),
        });
    }
    if dims.pose_basis != NUM_POSE_BASIS as i64 {
        return Err(ModelError::Invariant {
            field: "pose_dirs",
            detail: format!(
                "expected pose basis {}, file declares {}",
                NUM_POSE_BASIS, dims.pose_basis
            ),
        });
    }
    let v = usize::try_from(dims.vertices)
        .map_err(|_| ModelError::Parse("negative vertex count".into()))?;
    let f = usize::try_from(dims.faces)
        .map_err(|_| ModelError::Parse("negative face count".into()))?;
    let nk = usize::try_from(dims.keypoints)
        .map_err(|_| ModelError::Parse("negative keypoint count".into()))?;

    let expect = |name: &'static str, got: usize, want: usize| -> Result<(), ModelError> {
        if got != want {
            return Err(ModelError::Parse(format!(
                "array `{name}` has {got} elements but dims imply {want}"
            )));
        }
        Ok(())
    };
    expect("template_vertices", raw.template_vertices.len(), v * 3)?;
    expect("faces", raw.faces.len(), f * 3)?;
    expect("shape_dirs", raw.shape_dirs.len(), v * 3 * NUM_SHAPE_COEFFS)?;
    expect("pose_dirs", raw.pose_dirs.len(), v * 3 * NUM_POSE_BASIS)?;
    expect("joint_regressor", raw.joint_regressor.len(), NUM_JOINTS * v)?;
    expect("skin_weights", raw.skin_weights.len(), v * NUM_JOINTS)?;
    expect("kinematic_parents", raw.kinematic_parents.len(), NUM_JOINTS)?;
    expect("keypoint_map", raw.keypoint_map.len(), nk)?;

    let template: Vec<[f64; 3]> = raw
        .template_vertices
        .chunks_exact(3)
        .map(|c| [c[0], c[1], c[2]])
        .collect();
    let mut faces = Vec::with_capacity(f);
    for chunk in raw.faces.chunks_exact(3) {
        let mut face = [0usize; 3];
        for (dst, src) in face.iter_mut().zip(chunk) {
            *dst = usize::try_from(*src)
                .map_err(|_| ModelError::Parse(format!("negative face index {src}")))?;
        }
        faces.push(face);
    }
    let mut parents = [None; NUM_JOINTS];
    for (j, &p) in raw.kinematic_parents.iter().enumerate() {
        parents[j] = if p < 0 {
            None
        } else {
            Some(usize::try_from(p).unwrap())
        };
    }
    let mut keypoint_map = Vec::with_capacity(nk);
    for (k, entry) in raw.keypoint_map.iter().enumerate() {
        let parsed = entry
            .strip_prefix("joint:")
            .map(|rest| rest.parse::<usize>().map(KeypointSource::Joint))
            .or_else(|| {
                entry
                    .strip_prefix("vertex:")
                    .map(|rest| rest.parse::<usize>().map(KeypointSource::Vertex))
            });
        match parsed {
            Some(Ok(src)) => keypoint_map.push(src),
            _ => {
                return Err(ModelError::Parse(format!(
                    "keypoint_map entry {k} (`{entry}`) is not `joint:<idx>` or `vertex:<idx>`"
                )))
            }
        }
    }
    let mut regions = BTreeMap::new();
    for (name, idxs) in raw.regions {
        let mut out = Vec::with_capacity(idxs.len());
        for i in idxs {
            out.push(
                usize::try_from(i)
                    .map_err(|_| ModelError::Parse(format!("negative region index in `{name}`")))?,
            );
        }
        regions.insert(name, out);
    }

    BodyModel::from_parts(
        template,
        faces,
        raw.shape_dirs,
        raw.pose_dirs,
        raw.joint_regressor,
        raw.skin_weights,
        parents,
        keypoint_map,
        regions,
    )
}

/// Writes a model to the parameter-file format.
pub fn save_model(model: &BodyModel, path: impl AsRef<Path>) -> Result<(), ModelError> {
    let path = path.as_ref();
    let text = render_model(model);
    std::fs::write(path, text).map_err(|source| ModelError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn render_model(model: &BodyModel) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "version = {MODEL_FORMAT_VERSION}");
    let _ = writeln!(out);
    write_float_array(
        &mut out,
        "template_vertices",
        model.template_vertices().as_flattened(),
    );
    write_int_array(
        &mut out,
        "faces",
        model.faces().iter().flatten().map(|&i| i as i64),
    );
    write_float_array(&mut out, "shape_dirs", model.shape_dirs());
    write_float_array(&mut out, "pose_dirs", model.pose_dirs());
    write_float_array(&mut out, "joint_regressor", model.joint_regressor());
    write_float_array(&mut out, "skin_weights", model.skin_weights());
    write_int_array(
        &mut out,
        "kinematic_parents",
        model
            .kinematic_parents()
            .iter()
            .map(|p| p.map_or(-1, |x| x as i64)),
    );
    let kp: Vec<String> = model
        .keypoint_map()
        .iter()
        .map(|src| match src {
            KeypointSource::Joint(j) => format!("\"joint:{j}\""),
            KeypointSource::Vertex(i) => format!("\"vertex:{i}\""),
        })
        .collect();
    let _ = writeln!(out, "keypoint_map = [{}]", kp.join(", "));
    let _ = writeln!(out);
    let _ = writeln!(out, "[dims]");
    let _ = writeln!(out, "vertices = {}", model.num_vertices());
    let _ = writeln!(out, "faces = {}", model.num_faces());
    let _ = writeln!(out, "joints = {NUM_JOINTS}");
    let _ = writeln!(out, "shape_coeffs = {NUM_SHAPE_COEFFS}");
    let _ = writeln!(out, "pose_basis = {NUM_POSE_BASIS}");
    let _ = writeln!(out, "keypoints = {}", model.num_keypoints());
    let _ = writeln!(out);
    let _ = writeln!(out, "[regions]");
    for name in model.region_names().collect::<Vec<_>>() {
        let idxs = model.region_vertices(name).unwrap();
        let joined: Vec<String> = idxs.iter().map(|i| i.to_string()).collect();
        let _ = writeln!(out, "{name} = [{}]", joined.join(", "));
    }
    out
}

fn write_float_array(out: &mut String, name: &str, values: &[f64]) {
    out.push_str(name);
    out.push_str(" = [");
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        // {:?} keeps a decimal point so TOML round-trips floats as floats.
        let _ = write!(out, "{v:?}");
    }
    out.push_str("]\n");
}

fn write_int_array(out: &mut String, name: &str, values: impl Iterator<Item = i64>) {
    let joined: Vec<String> = values.map(|v| v.to_string()).collect();
    let _ = writeln!(out, "{name} = [{}]", joined.join(", "));
}

#[cfg(test)]
mod tests {
    use super::super::make_mini_model;
    use super::*;

    #[test]
    fn round_trip_preserves_model_exactly() {
        let model = make_mini_model(7);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mini.toml");
        save_model(&model, &path).unwrap();
        let loaded = load_model(&path).unwrap();
        assert_eq!(loaded.template_vertices(), model.template_vertices());
        assert_eq!(loaded.faces(), model.faces());
        assert_eq!(loaded.shape_dirs(), model.shape_dirs());
        assert_eq!(loaded.pose_dirs(), model.pose_dirs());
        assert_eq!(loaded.joint_regressor(), model.joint_regressor());
        assert_eq!(loaded.skin_weights(), model.skin_weights());
        assert_eq!(loaded.kinematic_parents(), model.kinematic_parents());
        assert_eq!(loaded.keypoint_map(), model.keypoint_map());
        assert_eq!(loaded.num_keypoints(), 12);
        for name in ["abdomen", "thorax", "head"] {
            assert_eq!(
                loaded.region_vertices(name),
                model.region_vertices(name),
                "region {name}"
            );
        }
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = load_model("/nonexistent/mini.toml").unwrap_err();
        assert!(matches!(err, ModelError::Io { .. }));
    }

    #[test]
    fn truncated_file_is_parse_error() {
        let model = make_mini_model(7);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mini.toml");
        save_model(&model, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        std::fs::write(&path, &text[..text.len() / 2]).unwrap();
        let err = load_model(&path).unwrap_err();
        assert!(matches!(err, ModelError::Parse(_)), "got {err:?}");
    }

    #[test]
    fn bad_skin_row_is_invariant_error_naming_field() {
        let model = make_mini_model(7);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mini.toml");
        save_model(&model, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        // Scale the whole skin_weights array; every row then sums to 0.8.
        let start = text.find("skin_weights = [").unwrap();
        let end = start + text[start..].find(']').unwrap();
        let body = &text[start + "skin_weights = [".len()..end];
        let scaled: Vec<String> = body
            .split(", ")
            .map(|tok| format!("{:?}", tok.trim().parse::<f64>().unwrap() * 0.8))
            .collect();
        let patched = format!(
            "{}skin_weights = [{}]{}",
            &text[..start],
            scaled.join(", "),
            &text[end + 1..]
        );
        std::fs::write(&path, patched).unwrap();
        match load_model(&path).unwrap_err() {
            ModelError::Invariant { field, .. } => assert_eq!(field, "skin_weights"),
            other => panic!("unexpected error {other:?}"),
        }
    }
}
