//! Checkpoints: a JSON manifest plus a little-endian `f32` blob.
//!
//! The manifest lists every layer (name, weight/bias shapes, normalization
//! flag), the head shape and output activation, the blob file name and its
//! length in bytes. The blob holds each layer's weight then bias, in
//! manifest order.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

use super::{HeadShape, LayerSpec, NetParams, OutputActivation};

pub const FORMAT_VERSION: &str = "AGRL1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerEntry {
    pub name: String,
    pub weight_shape: [usize; 2],
    pub bias_shape: [usize; 1],
    pub layer_norm: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub layers: Vec<LayerEntry>,
    pub head_shape: [usize; 2],
    pub output: OutputActivation,
    pub blob: String,
    pub blob_len: u64,
    #[serde(default)]
    pub meta: BTreeMap<String, String>,
}

fn blob_path(manifest_path: &Path) -> PathBuf {
    manifest_path.with_extension("bin")
}

fn ckpt_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Checkpoint {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

pub fn manifest_for(params: &NetParams<f32>, blob: String, meta: BTreeMap<String, String>) -> Manifest {
    let head = params.head();
    Manifest {
        format: FORMAT_VERSION.to_string(),
        layers: params
            .layers()
            .iter()
            .enumerate()
            .map(|(i, l)| LayerEntry {
                name: format!("layer{i}"),
                weight_shape: [l.fan_in, l.fan_out],
                bias_shape: [l.fan_out],
                layer_norm: l.layer_norm,
            })
            .collect(),
        head_shape: [head.num_goals, head.per_goal],
        output: params.output_activation(),
        blob,
        blob_len: (params.len() * 4) as u64,
        meta,
    }
}

/// Writes `path` (manifest) and its sibling `.bin` blob.
pub fn save(path: &Path, params: &NetParams<f32>, meta: BTreeMap<String, String>) -> Result<()> {
    let blob = blob_path(path);
    let blob_name = blob
        .file_name()
        .and_then(|s| s.to_str())
        .ok_or_else(|| ckpt_err(path, "manifest path has no file name"))?
        .to_string();
    let manifest = manifest_for(params, blob_name, meta);
    let mut bytes = Vec::with_capacity(params.len() * 4);
    for v in params.as_slice() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(&blob, bytes)?;
    fs::write(path, serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

/// Reads a checkpoint back, validating the format tag and blob length.
pub fn load(path: &Path) -> Result<(NetParams<f32>, Manifest)> {
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(path)?)?;
    if manifest.format != FORMAT_VERSION {
        return Err(ckpt_err(
            path,
            format!("unsupported format `{}`", manifest.format),
        ));
    }
    let blob = path.with_file_name(&manifest.blob);
    let bytes = fs::read(&blob)?;
    if bytes.len() as u64 != manifest.blob_len || bytes.len() % 4 != 0 {
        return Err(ckpt_err(
            path,
            format!(
                "blob is {} bytes, manifest says {}",
                bytes.len(),
                manifest.blob_len
            ),
        ));
    }
    let data: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let layers = manifest
        .layers
        .iter()
        .map(|l| {
            if l.bias_shape[0] != l.weight_shape[1] {
                return Err(ckpt_err(path, format!("layer {} has mismatched bias", l.name)));
            }
            Ok(LayerSpec {
                fan_in: l.weight_shape[0],
                fan_out: l.weight_shape[1],
                layer_norm: l.layer_norm,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let head = HeadShape::curried(manifest.head_shape[0], manifest.head_shape[1]);
    let params = NetParams::from_parts(layers, head, manifest.output, data)
        .map_err(|e| ckpt_err(path, e.to_string()))?;
    Ok((params, manifest))
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::numkit::MlpArch;

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let arch = MlpArch::new(7, &[5, 5], HeadShape::curried(3, 4))
            .with_output(OutputActivation::Sigmoid);
        let p = NetParams::<f32>::init(&arch, &mut rng).unwrap();
        let path = dir.path().join("net.json");
        let mut meta = BTreeMap::new();
        meta.insert("role".into(), "leo".into());
        save(&path, &p, meta.clone()).unwrap();
        let (q, m) = load(&path).unwrap();
        assert_eq!(m.meta, meta);
        assert_eq!(m.format, "AGRL1");
        assert_eq!(m.blob_len, (p.len() * 4) as u64);
        let a: Vec<u32> = p.as_slice().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u32> = q.as_slice().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
        assert!(p.same_layout(&q));
    }

    #[test]
    fn truncated_blob_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = NetParams::<f32>::init(&MlpArch::new(3, &[2], HeadShape::single(2)), &mut rng)
            .unwrap();
        let path = dir.path().join("net.json");
        save(&path, &p, BTreeMap::new()).unwrap();
        let bin = path.with_extension("bin");
        let mut bytes = fs::read(&bin).unwrap();
        bytes.truncate(bytes.len() - 4);
        fs::write(&bin, bytes).unwrap();
        assert!(matches!(load(&path), Err(Error::Checkpoint { .. })));
    }
}
