//! Versioned binary checkpoints with a JSON manifest.
//!
//! Layout: the magic `UMXC`, a little-endian `u32` format version, a
//! little-endian `u32` header length, a JSON header describing the model
//! shape, then every parameter as a little-endian `f64` in
//! [`ModelParams::flatten`] order.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{write_atomic, write_json};
use crate::model::{Activation, Layer, ModelKind, ModelParams};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"UMXC";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    kind: ModelKind,
    activation: Activation,
    /// `(inputs, outputs)` of every layer.
    shapes: Vec<(usize, usize)>,
}

/// Manifest entry written next to each checkpoint file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub file: String,
    pub epoch: usize,
    pub config_hash: String,
    pub dataset_fingerprint: String,
    pub train_loss: f64,
    pub train_acc: f64,
}

pub fn encode_checkpoint(params: &ModelParams) -> Vec<u8> {
    let header = Header {
        kind: params.kind,
        activation: params.activation,
        shapes: params
            .layers
            .iter()
            .map(|l| (l.inputs, l.outputs))
            .collect(),
    };
    let header = serde_json::to_vec(&header).unwrap_or_default();
    let flat = params.flatten();
    let mut out = Vec::with_capacity(12 + header.len() + 8 * flat.len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for v in flat {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8], origin: &Path) -> Result<ModelParams> {
    let bad = |message: &str| Error::Artifact {
        path: origin.to_path_buf(),
        message: message.to_string(),
    };
    if bytes.len() < 12 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(bad(&format!("unsupported checkpoint version {version}")));
    }
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let header: Header = bytes
        .get(12..12 + hlen)
        .ok_or_else(|| bad("truncated header"))
        .and_then(|h| serde_json::from_slice(h).map_err(|e| bad(&e.to_string())))?;
    let layers: Vec<Layer> = header
        .shapes
        .iter()
        .map(|&(i, o)| Layer::zeros(i, o))
        .collect();
    let mut params = match header.kind {
        ModelKind::Glm if layers.len() == 1 => ModelParams::glm(layers.into_iter().next().unwrap()),
        ModelKind::Glm => return Err(bad("a GLM has exactly one layer")),
        ModelKind::Mlp => ModelParams::mlp(layers, header.activation)?,
    };
    let body = &bytes[12 + hlen..];
    if body.len() != 8 * params.num_parameters() {
        return Err(bad(&format!(
            "expected {} parameters, found {} bytes",
            params.num_parameters(),
            body.len()
        )));
    }
    let flat: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    params.set_flat(&flat)?;
    Ok(params)
}

/// Writes `<dir>/<stem>.ckpt` and `<dir>/<stem>.json`; returns the
/// checkpoint path.
pub fn save_checkpoint(
    dir: &Path,
    stem: &str,
    params: &ModelParams,
    manifest: &CheckpointManifest,
) -> Result<PathBuf> {
    let path = dir.join(format!("{stem}.ckpt"));
    write_atomic(&path, &encode_checkpoint(params))?;
    write_json(&dir.join(format!("{stem}.json")), manifest)?;
    Ok(path)
}

pub fn load_checkpoint(dir: &Path, stem: &str) -> Result<(ModelParams, CheckpointManifest)> {
    let path = dir.join(format!("{stem}.ckpt"));
    let params = decode_checkpoint(&std::fs::read(&path)?, &path)?;
    let manifest_path = dir.join(format!("{stem}.json"));
    let manifest: CheckpointManifest =
        serde_json::from_str(&std::fs::read_to_string(&manifest_path)?)?;
    if manifest.format_version != CHECKPOINT_VERSION {
        return Err(Error::Artifact {
            path: manifest_path,
            message: format!("manifest version {} unsupported", manifest.format_version),
        });
    }
    Ok((params, manifest))
}
