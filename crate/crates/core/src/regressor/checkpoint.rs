//! Checkpoint file: a length-prefixed TOML header (architecture, input
//! spec, lineage hash) followed by the raw little-endian f32 blob — the
//! input standardizer's mean and std, then every layer's weights and
//! biases.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::net::{Activation, DenseLayer, RegressorNet};
use super::{InputSpec, RegressorError, Standardizer};

pub const CHECKPOINT_FORMAT: &str = "spmk-checkpoint-v1";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format: String,
    pub input: InputSpec,
    pub n_joints: usize,
    pub layer_dims: Vec<usize>,
    pub config_hash: String,
    pub trained_epochs: usize,
}

fn err(path: &Path, detail: impl Into<String>) -> RegressorError {
    RegressorError::Checkpoint {
        path: path.display().to_string(),
        detail: detail.into(),
    }
}

pub fn save_checkpoint(
    net: &RegressorNet<f32>,
    standardizer: &Standardizer,
    meta: &CheckpointMeta,
    path: impl AsRef<Path>,
) -> Result<(), RegressorError> {
    let path = path.as_ref();
    if standardizer.mean.len() != net.input_dim() {
        return Err(err(
            path,
            format!(
                "standardizer dim {} does not match net input {}",
                standardizer.mean.len(),
                net.input_dim()
            ),
        ));
    }
    let header = toml::to_string(meta).map_err(|e| err(path, e.to_string()))?;
    let mut file = std::fs::File::create(path).map_err(|e| err(path, e.to_string()))?;
    file.write_all(&(header.len() as u32).to_le_bytes())
        .map_err(|e| err(path, e.to_string()))?;
    file.write_all(header.as_bytes())
        .map_err(|e| err(path, e.to_string()))?;
    let mut blob = Vec::with_capacity((net.num_params() + 2 * net.input_dim()) * 4);
    for value in standardizer.mean.iter().chain(&standardizer.std) {
        blob.extend_from_slice(&value.to_le_bytes());
    }
    for layer in &net.layers {
        for w in &layer.weights {
            blob.extend_from_slice(&w.to_le_bytes());
        }
        for b in &layer.bias {
            blob.extend_from_slice(&b.to_le_bytes());
        }
    }
    file.write_all(&blob).map_err(|e| err(path, e.to_string()))
}

pub fn load_checkpoint(
    path: impl AsRef<Path>,
) -> Result<(RegressorNet<f32>, Standardizer, CheckpointMeta), RegressorError> {
    let path = path.as_ref();
    let mut file = std::fs::File::open(path).map_err(|e| err(path, e.to_string()))?;
    let mut len_buf = [0u8; 4];
    file.read_exact(&mut len_buf)
        .map_err(|_| err(path, "missing header length"))?;
    let header_len = u32::from_le_bytes(len_buf) as usize;
    let mut header = vec![0u8; header_len];
    file.read_exact(&mut header)
        .map_err(|_| err(path, "truncated header"))?;
    let header = String::from_utf8(header).map_err(|_| err(path, "header is not UTF-8"))?;
    let meta: CheckpointMeta = toml::from_str(&header).map_err(|e| err(path, e.to_string()))?;
    if meta.format != CHECKPOINT_FORMAT {
        return Err(err(path, format!("unsupported format `{}`", meta.format)));
    }
    if meta.layer_dims.len() < 2 {
        return Err(err(path, "layer_dims must list input and output sizes"));
    }
    if meta.layer_dims[0] != meta.input.input_dim(meta.n_joints) {
        return Err(err(
            path,
            format!(
                "input spec implies dim {}, layer_dims starts at {}",
                meta.input.input_dim(meta.n_joints),
                meta.layer_dims[0]
            ),
        ));
    }

    let mut blob = Vec::new();
    file.read_to_end(&mut blob)
        .map_err(|e| err(path, e.to_string()))?;
    let input_dim = meta.layer_dims[0];
    let expected: usize = 2 * input_dim
        + meta
            .layer_dims
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum::<usize>();
    if blob.len() != expected * 4 {
        return Err(err(
            path,
            format!("weight blob has {} bytes, expected {}", blob.len(), expected * 4),
        ));
    }

    let mut cursor = 0usize;
    let mut read_f32 = |n: usize| -> Vec<f32> {
        let out = blob[cursor..cursor + 4 * n]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        cursor += 4 * n;
        out
    };
    let standardizer = Standardizer {
        mean: read_f32(input_dim),
        std: read_f32(input_dim),
    };
    if standardizer.std.iter().any(|&s| !(s > 0.0)) {
        return Err(err(path, "standardizer std values must be positive"));
    }
    let n_layers = meta.layer_dims.len() - 1;
    let mut layers = Vec::with_capacity(n_layers);
    for l in 0..n_layers {
        let (in_dim, out_dim) = (meta.layer_dims[l], meta.layer_dims[l + 1]);
        let weights = read_f32(in_dim * out_dim);
        let bias = read_f32(out_dim);
        layers.push(DenseLayer {
            in_dim,
            out_dim,
            weights,
            bias,
            activation: if l + 1 == n_layers {
                Activation::Linear
            } else {
                Activation::Softplus
            },
        });
    }
    let net = RegressorNet { layers };
    if !net.params_finite() {
        return Err(err(path, "non-finite parameters in weight blob"));
    }
    Ok((net, standardizer, meta))
}
