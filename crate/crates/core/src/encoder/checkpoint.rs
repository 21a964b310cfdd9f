//! Binary checkpoint: `RBE1` magic, `u32` width, `u32` rows, then the rule
//! encoder's and the text encoder's tensors (embedding, projection weight,
//! projection bias) as little-endian `f32`. A JSON manifest sits beside it.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::params::{EncoderConfig, EncoderParams};
use super::tokenizer::RESERVED;
use super::{DualEncoder, EncoderError};

pub const MAGIC: &[u8; 4] = b"RBE1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub d: usize,
    #[serde(rename = "V")]
    pub buckets: u32,
    pub seed: u64,
    pub step: u64,
    pub sha256: String,
}

/// A frozen pair of encoders, rounded to `f32` and fingerprinted.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    encoders: DualEncoder,
    digest: String,
}

impl TrainedModel {
    /// Rounds every parameter to `f32`, so the model equals what a saved
    /// checkpoint of it loads back as.
    pub fn new(mut encoders: DualEncoder) -> Self {
        encoders.rule.quantize();
        encoders.text.quantize();
        let digest = hex::encode(Sha256::digest(to_bytes(&encoders)));
        Self { encoders, digest }
    }

    pub fn encoders(&self) -> &DualEncoder {
        &self.encoders
    }

    pub fn rule(&self) -> &EncoderParams {
        &self.encoders.rule
    }

    pub fn text(&self) -> &EncoderParams {
        &self.encoders.text
    }

    /// SHA-256 of the checkpoint bytes.
    pub fn digest(&self) -> &str {
        &self.digest
    }

    pub fn into_encoders(self) -> DualEncoder {
        self.encoders
    }
}

fn to_bytes(model: &DualEncoder) -> Vec<u8> {
    let cfg = model.rule.config();
    let n: usize = [&model.rule, &model.text]
        .iter()
        .flat_map(|p| p.tensors())
        .map(|t| t.len())
        .sum();
    let mut out = Vec::with_capacity(12 + 4 * n);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(cfg.dim as u32).to_le_bytes());
    out.extend_from_slice(&(cfg.rows() as u32).to_le_bytes());
    for p in [&model.rule, &model.text] {
        for t in p.tensors() {
            for &x in t {
                out.extend_from_slice(&(x as f32).to_le_bytes());
            }
        }
    }
    out
}

fn from_bytes(bytes: &[u8]) -> Result<DualEncoder, EncoderError> {
    let bad = |m: &str| EncoderError::Checkpoint(m.to_owned());
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err(bad("missing RBE1 header"));
    }
    let word =
        |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4-byte slice")) as usize;
    let (dim, rows) = (word(4), word(8));
    if dim < 2 || rows <= RESERVED as usize {
        return Err(bad("invalid dimensions in header"));
    }
    let config = EncoderConfig {
        buckets: (rows - RESERVED as usize) as u32,
        dim,
    };
    let per_encoder = rows * dim + dim * dim + dim;
    if bytes.len() != 12 + 8 * per_encoder {
        return Err(bad(&format!(
            "expected {} bytes for d={dim}, rows={rows}, found {}",
            12 + 8 * per_encoder,
            bytes.len()
        )));
    }
    let mut floats = bytes[12..]
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4-byte chunk"))));
    let mut take = |n: usize| -> Vec<f64> { floats.by_ref().take(n).collect() };
    let mut encoder =
        || EncoderParams::from_parts(config, take(rows * dim), take(dim * dim), take(dim));
    let rule = encoder()?;
    let text = encoder()?;
    if !rule.is_finite() || !text.is_finite() {
        return Err(bad("non-finite parameter"));
    }
    Ok(DualEncoder { rule, text })
}

/// Sidecar manifest path: `model.bin` → `model.json`.
pub fn manifest_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

pub fn save_checkpoint(
    path: &Path,
    model: &TrainedModel,
    seed: u64,
    step: u64,
) -> Result<Manifest, EncoderError> {
    let bytes = to_bytes(&model.encoders);
    let cfg = model.rule().config();
    let manifest = Manifest {
        d: cfg.dim,
        buckets: cfg.buckets,
        seed,
        step,
        sha256: model.digest.clone(),
    };
    std::fs::write(path, &bytes)?;
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| EncoderError::Checkpoint(e.to_string()))?;
    std::fs::write(manifest_path(path), json + "\n")?;
    Ok(manifest)
}

/// Loads a checkpoint, verifying it against its manifest when one exists.
pub fn load_checkpoint(path: &Path) -> Result<(TrainedModel, Option<Manifest>), EncoderError> {
    let bytes = std::fs::read(path)?;
    let encoders = from_bytes(&bytes)?;
    let digest = hex::encode(Sha256::digest(&bytes));
    let manifest = match std::fs::read_to_string(manifest_path(path)) {
        Ok(s) => {
            let m: Manifest =
                serde_json::from_str(&s).map_err(|e| EncoderError::Checkpoint(e.to_string()))?;
            if m.sha256 != digest
                || m.d != encoders.rule.dim()
                || m.buckets != encoders.rule.config().buckets
            {
                return Err(EncoderError::Checkpoint(
                    "manifest does not match checkpoint".into(),
                ));
            }
            Some(m)
        }
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
        Err(e) => return Err(e.into()),
    };
    Ok((TrainedModel { encoders, digest }, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn save_load_round_trip() {
        let cfg = EncoderConfig {
            buckets: 10,
            dim: 3,
        };
        let model = TrainedModel::new(DualEncoder::init(cfg, 11));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bin");
        let manifest = save_checkpoint(&path, &model, 11, 42).unwrap();
        assert_eq!(manifest.step, 42);
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], b"RBE1");
        assert_eq!(bytes.len(), 12 + 8 * (12 * 3 + 9 + 3));
        let (loaded, m) = load_checkpoint(&path).unwrap();
        assert_eq!(loaded, model);
        assert_eq!(m.unwrap(), manifest);
        let json: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("m.json")).unwrap())
                .unwrap();
        assert_eq!(json["V"], 10);
        assert_eq!(json["d"], 3);
    }

    #[test]
    fn detects_corruption() {
        let model = TrainedModel::new(DualEncoder::init(EncoderConfig { buckets: 4, dim: 2 }, 1));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bin");
        save_checkpoint(&path, &model, 1, 0).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[20] ^= 0x40;
        std::fs::write(&path, &bytes).unwrap();
        assert!(load_checkpoint(&path).is_err());
        bytes.truncate(30);
        std::fs::write(&path, &bytes).unwrap();
        std::fs::remove_file(dir.path().join("m.json")).unwrap();
        assert!(load_checkpoint(&path).is_err());
    }
}
