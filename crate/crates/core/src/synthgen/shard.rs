//! Binary shard format for training pairs.
//!
//! Layout (all little-endian):
//!
//! ```text
//! magic        4 bytes  "SPMK"
//! version      u16      format version, currently 1
//! flags        u8       bit 0: heatmaps stored as f16 (else f32)
//! reserved     u8
//! n_joints     u16
//! height       u16
//! width        u16
//! stride       f32      px per heatmap cell
//! sigma        f32      rendering σ in px
//! records      ...      length-prefixed, in ascending record-id order
//! ```
//!
//! Each record: `len: u32` (bytes after the prefix), `id: u64`,
//! `θ: 72×f32`, `β: 10×f32`, extrinsics `12×f32` (rotation row-major then
//! translation), keypoints `n_joints×3×f32` (u, v, visibility), heatmaps
//! `n_joints·height·width` cells as f16 or f32 per the header flag.
//!
//! Values are quantized to the stored precision at generation time, so a
//! reader can re-derive keypoints and heatmaps from the stored parameters
//! and compare bit-for-bit.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{SynthError, TrainingPair};
use crate::body_model::{PoseParams, ShapeParams, NUM_POSE_PARAMS, NUM_SHAPE_COEFFS};
use crate::camera::CameraExtrinsics;
use crate::heatmap::{HeatmapGeometry, HeatmapStack, KeypointSet};

pub const SHARD_MAGIC: [u8; 4] = *b"SPMK";
pub const SHARD_VERSION: u16 = 1;
const HEADER_LEN: u64 = 22;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeatmapPrecision {
    F16,
    F32,
}

impl HeatmapPrecision {
    fn cell_bytes(self) -> usize {
        match self {
            HeatmapPrecision::F16 => 2,
            HeatmapPrecision::F32 => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShardHeader {
    pub precision: HeatmapPrecision,
    pub n_joints: u16,
    pub height: u16,
    pub width: u16,
    pub stride: f32,
    pub sigma: f32,
}

impl ShardHeader {
    fn record_payload_len(&self) -> usize {
        let n = self.n_joints as usize;
        let cells = n * self.height as usize * self.width as usize;
        8 + (NUM_POSE_PARAMS + NUM_SHAPE_COEFFS + 12 + n * 3) * 4
            + cells * self.precision.cell_bytes()
    }
}

fn io_err(path: &Path, source: std::io::Error) -> SynthError {
    SynthError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn shard_err(path: &Path, offset: u64, detail: impl Into<String>) -> SynthError {
    SynthError::Shard {
        path: path.display().to_string(),
        offset,
        detail: detail.into(),
    }
}

/// Writes a shard; records must already be in ascending id order.
pub fn write_shard(
    path: impl AsRef<Path>,
    header: &ShardHeader,
    pairs: &[TrainingPair],
) -> Result<(), SynthError> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut out = BufWriter::new(file);

    out.write_all(&SHARD_MAGIC).map_err(|e| io_err(path, e))?;
    out.write_all(&SHARD_VERSION.to_le_bytes())
        .map_err(|e| io_err(path, e))?;
    let flags: u8 = match header.precision {
        HeatmapPrecision::F16 => 1,
        HeatmapPrecision::F32 => 0,
    };
    out.write_all(&[flags, 0]).map_err(|e| io_err(path, e))?;
    for v in [header.n_joints, header.height, header.width] {
        out.write_all(&v.to_le_bytes()).map_err(|e| io_err(path, e))?;
    }
    out.write_all(&header.stride.to_le_bytes())
        .map_err(|e| io_err(path, e))?;
    out.write_all(&header.sigma.to_le_bytes())
        .map_err(|e| io_err(path, e))?;

    let payload_len = header.record_payload_len();
    let mut buf: Vec<u8> = Vec::with_capacity(payload_len);
    for pair in pairs {
        buf.clear();
        buf.extend_from_slice(&pair.id.to_le_bytes());
        for v in pair.theta.to_flat() {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        for v in pair.beta.coeffs {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        for v in pair.extrinsics.to_flat() {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        for j in 0..pair.keypoints_2d.len() {
            let [u, v] = pair.keypoints_2d.coords[j];
            let vis = if pair.keypoints_2d.visibility[j] { 1.0f32 } else { 0.0 };
            buf.extend_from_slice(&(u as f32).to_le_bytes());
            buf.extend_from_slice(&(v as f32).to_le_bytes());
            buf.extend_from_slice(&vis.to_le_bytes());
        }
        match header.precision {
            HeatmapPrecision::F16 => {
                for &cell in pair.heatmaps.data() {
                    buf.extend_from_slice(&half::f16::from_f64(cell).to_le_bytes());
                }
            }
            HeatmapPrecision::F32 => {
                for &cell in pair.heatmaps.data() {
                    buf.extend_from_slice(&(cell as f32).to_le_bytes());
                }
            }
        }
        debug_assert_eq!(buf.len(), payload_len);
        out.write_all(&(buf.len() as u32).to_le_bytes())
            .map_err(|e| io_err(path, e))?;
        out.write_all(&buf).map_err(|e| io_err(path, e))?;
    }
    out.flush().map_err(|e| io_err(path, e))
}

/// Streaming shard reader; yields records one at a time so large shards
/// never sit fully decoded in memory.
pub struct ShardReader {
    path: std::path::PathBuf,
    input: BufReader<std::fs::File>,
    header: ShardHeader,
    payload_len: usize,
    offset: u64,
}

impl ShardReader {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, SynthError> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| io_err(path, e))?;
        let mut input = BufReader::new(file);

        let mut head = [0u8; HEADER_LEN as usize];
        input
            .read_exact(&mut head)
            .map_err(|_| shard_err(path, 0, "file shorter than the shard header"))?;
        if head[0..4] != SHARD_MAGIC {
            return Err(shard_err(path, 0, "bad magic bytes"));
        }
        let version = u16::from_le_bytes([head[4], head[5]]);
        if version != SHARD_VERSION {
            return Err(shard_err(path, 4, format!("unsupported version {version}")));
        }
        let precision = if head[6] & 1 == 1 {
            HeatmapPrecision::F16
        } else {
            HeatmapPrecision::F32
        };
        let header = ShardHeader {
            precision,
            n_joints: u16::from_le_bytes([head[8], head[9]]),
            height: u16::from_le_bytes([head[10], head[11]]),
            width: u16::from_le_bytes([head[12], head[13]]),
            stride: f32::from_le_bytes([head[14], head[15], head[16], head[17]]),
            sigma: f32::from_le_bytes([head[18], head[19], head[20], head[21]]),
        };
        if header.n_joints == 0 || header.height == 0 || header.width == 0 {
            return Err(shard_err(path, 8, "zero-sized geometry in header"));
        }
        let payload_len = header.record_payload_len();
        Ok(Self {
            path: path.to_path_buf(),
            input,
            header,
            payload_len,
            offset: HEADER_LEN,
        })
    }

    pub fn header(&self) -> &ShardHeader {
        &self.header
    }
}

impl Iterator for ShardReader {
    type Item = Result<TrainingPair, SynthError>;

    fn next(&mut self) -> Option<Self::Item> {
        let mut len_buf = [0u8; 4];
        match self.input.read_exact(&mut len_buf) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => return None,
            Err(e) => return Some(Err(shard_err(&self.path, self.offset, e.to_string()))),
        }
        let len = u32::from_le_bytes(len_buf) as usize;
        if len != self.payload_len {
            return Some(Err(shard_err(
                &self.path,
                self.offset,
                format!("record length {len}, expected {}", self.payload_len),
            )));
        }
        let mut payload = vec![0u8; self.payload_len];
        if self.input.read_exact(&mut payload).is_err() {
            return Some(Err(shard_err(&self.path, self.offset, "truncated record")));
        }
        let record = decode_record(&self.header, &payload, &self.path, self.offset);
        self.offset += 4 + self.payload_len as u64;
        Some(record)
    }
}

/// Reads a whole shard into memory; any structural problem reports the byte
/// offset of the failing record.
pub fn read_shard(path: impl AsRef<Path>) -> Result<(ShardHeader, Vec<TrainingPair>), SynthError> {
    let reader = ShardReader::open(path)?;
    let header = *reader.header();
    let pairs: Result<Vec<TrainingPair>, SynthError> = reader.collect();
    Ok((header, pairs?))
}

fn decode_record(
    header: &ShardHeader,
    payload: &[u8],
    path: &Path,
    offset: u64,
) -> Result<TrainingPair, SynthError> {
    let mut cursor = 0usize;
    let mut take = |n: usize| -> &[u8] {
        let out = &payload[cursor..cursor + n];
        cursor += n;
        out
    };
    let id = u64::from_le_bytes(take(8).try_into().unwrap());
    let read_f32 = |bytes: &[u8]| -> f64 {
        f32::from_le_bytes(bytes.try_into().unwrap()) as f64
    };

    let mut theta_flat = [0.0f64; NUM_POSE_PARAMS];
    for v in theta_flat.iter_mut() {
        *v = read_f32(take(4));
    }
    let theta = PoseParams::from_flat(&theta_flat).unwrap();
    if !theta.is_finite() {
        return Err(shard_err(path, offset, format!("record {id}: non-finite θ")));
    }

    let mut beta = ShapeParams::zeros();
    for v in beta.coeffs.iter_mut() {
        *v = read_f32(take(4));
    }
    if !beta.is_finite() {
        return Err(shard_err(path, offset, format!("record {id}: non-finite β")));
    }

    let mut extr_flat = [0.0f64; 12];
    for v in extr_flat.iter_mut() {
        *v = read_f32(take(4));
    }
    let extrinsics = CameraExtrinsics::from_flat(&extr_flat).map_err(|e| {
        shard_err(path, offset, format!("record {id}: bad extrinsics: {e}"))
    })?;

    let n = header.n_joints as usize;
    let mut coords = Vec::with_capacity(n);
    let mut visibility = Vec::with_capacity(n);
    let mut confidence = Vec::with_capacity(n);
    for _ in 0..n {
        let u = read_f32(take(4));
        let v = read_f32(take(4));
        let vis = read_f32(take(4)) != 0.0;
        coords.push([u, v]);
        visibility.push(vis);
        confidence.push(if vis { 1.0 } else { 0.0 });
    }
    let keypoints_2d = KeypointSet::new(coords, confidence, visibility)
        .map_err(|e| shard_err(path, offset, format!("record {id}: {e}")))?;

    let cells = n * header.height as usize * header.width as usize;
    let mut data = Vec::with_capacity(cells);
    match header.precision {
        HeatmapPrecision::F16 => {
            for _ in 0..cells {
                let bits = u16::from_le_bytes(take(2).try_into().unwrap());
                data.push(half::f16::from_bits(bits).to_f64());
            }
        }
        HeatmapPrecision::F32 => {
            for _ in 0..cells {
                data.push(read_f32(take(4)));
            }
        }
    }
    let geometry = HeatmapGeometry {
        height: header.height as usize,
        width: header.width as usize,
        stride: header.stride as f64,
    };
    let heatmaps = HeatmapStack::from_grids(geometry, n, data)
        .map_err(|e| shard_err(path, offset, format!("record {id}: {e}")))?;

    Ok(TrainingPair {
        id,
        theta,
        beta,
        extrinsics,
        keypoints_2d,
        heatmaps,
    })
}
