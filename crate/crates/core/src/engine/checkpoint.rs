//! Single-file checkpoints: a magic tag, a JSON header, raw little-endian
//! `f32` tensors and a SHA-256 trailer over everything before it.

use std::io::Write;
use std::path::{Path, PathBuf};

use oarseg_tensor::Tensor;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{io_err as io, EngineError};
use crate::model::{Model, ModelConfig};

const MAGIC: &[u8; 8] = b"OARSEGC1";
const DIGEST_LEN: usize = 32;

/// Training context stored alongside the weights.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub run_name: String,
    pub epoch: usize,
    pub val_dice: Option<f64>,
    pub iteration: u64,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    meta: CheckpointMeta,
    params: Vec<Entry>,
    buffers: Vec<Entry>,
}

fn corrupt(path: &Path, why: impl Into<String>) -> EngineError {
    EngineError::CorruptCheckpoint {
        path: path.to_path_buf(),
        reason: why.into(),
    }
}

/// Writes to a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), EngineError> {
    let tmp: PathBuf = {
        let mut name = path.file_name().unwrap_or_default().to_os_string();
        name.push(".tmp");
        path.with_file_name(name)
    };
    let mut f = std::fs::File::create(&tmp).map_err(io(&tmp))?;
    f.write_all(bytes).map_err(io(&tmp))?;
    f.sync_all().map_err(io(&tmp))?;
    drop(f);
    std::fs::rename(&tmp, path).map_err(io(path))
}

pub fn save_checkpoint(model: &Model, meta: &CheckpointMeta, path: &Path) -> Result<(), EngineError> {
    let entry = |(name, p): &(String, oarseg_tensor::Param)| Entry {
        name: name.clone(),
        shape: p.shape(),
    };
    let header = Header {
        model: model.config().clone(),
        meta: meta.clone(),
        params: model.named_params().iter().map(entry).collect(),
        buffers: model.named_buffers().iter().map(entry).collect(),
    };
    let header = serde_json::to_vec(&header).expect("header serializes");
    let mut bytes = Vec::with_capacity(header.len() + 4 * model.parameter_count() + 64);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&(header.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&header);
    for (_, p) in model.named_params().iter().chain(model.named_buffers()) {
        for v in p.value().data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&bytes);
    bytes.extend_from_slice(&digest);
    write_atomic(path, &bytes)
}

struct Parsed {
    header: Header,
    tensors: Vec<Tensor>,
}

fn parse(path: &Path) -> Result<Parsed, EngineError> {
    let bytes = std::fs::read(path).map_err(io(path))?;
    if bytes.len() < MAGIC.len() + 8 + DIGEST_LEN || &bytes[..MAGIC.len()] != MAGIC {
        return Err(corrupt(path, "not a checkpoint or truncated header"));
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(corrupt(path, "content hash mismatch"));
    }
    let len_at = MAGIC.len();
    let header_len = u64::from_le_bytes(body[len_at..len_at + 8].try_into().unwrap()) as usize;
    let start = len_at + 8;
    let header_bytes = body
        .get(start..start + header_len)
        .ok_or_else(|| corrupt(path, "header length exceeds file"))?;
    let header: Header =
        serde_json::from_slice(header_bytes).map_err(|e| corrupt(path, format!("bad header: {e}")))?;
    let mut data = &body[start + header_len..];
    let mut tensors = Vec::new();
    for e in header.params.iter().chain(&header.buffers) {
        let n: usize = e.shape.iter().product();
        if data.len() < 4 * n {
            return Err(corrupt(path, format!("missing data for {}", e.name)));
        }
        let (chunk, rest) = data.split_at(4 * n);
        let values = chunk.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
        tensors.push(Tensor::new(e.shape.clone(), values));
        data = rest;
    }
    if !data.is_empty() {
        return Err(corrupt(path, "trailing bytes after tensors"));
    }
    Ok(Parsed { header, tensors })
}

fn restore(model: &Model, parsed: Parsed, path: &Path) -> Result<(), EngineError> {
    let slots: Vec<_> = model.named_params().iter().chain(model.named_buffers()).collect();
    let names = parsed.header.params.iter().chain(&parsed.header.buffers);
    if slots.len() != parsed.tensors.len() {
        return Err(corrupt(path, "tensor count differs from the model"));
    }
    for (((name, p), entry), t) in slots.into_iter().zip(names).zip(parsed.tensors) {
        if *name != entry.name || p.shape() != entry.shape {
            return Err(corrupt(path, format!("tensor {} does not match layer {name}", entry.name)));
        }
        p.set_value(t);
    }
    Ok(())
}

/// Rebuilds the stored model and restores its weights.
pub fn load_checkpoint(path: &Path) -> Result<(Model, CheckpointMeta), EngineError> {
    let parsed = parse(path)?;
    let model = Model::new(&parsed.header.model, 0)?;
    let meta = parsed.header.meta.clone();
    restore(&model, parsed, path)?;
    Ok((model, meta))
}

/// Restores weights into `model`; the stored configuration must match.
pub fn load_into(model: &Model, path: &Path) -> Result<CheckpointMeta, EngineError> {
    let parsed = parse(path)?;
    if &parsed.header.model != model.config() {
        return Err(EngineError::ConfigMismatch(format!(
            "{} was saved for {:?}, not {:?}",
            path.display(),
            parsed.header.model,
            model.config()
        )));
    }
    let meta = parsed.header.meta.clone();
    restore(model, parsed, path)?;
    Ok(meta)
}

/// Reads only the stored model configuration.
pub fn checkpoint_config(path: &Path) -> Result<(ModelConfig, CheckpointMeta), EngineError> {
    let parsed = parse(path)?;
    Ok((parsed.header.model, parsed.header.meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{NormKind, Variant};

    fn small() -> ModelConfig {
        ModelConfig {
            base_width: 4,
            depth: 2,
            norm: NormKind::Batch,
            ..ModelConfig::for_variant(Variant::Unet2d, 3)
        }
    }

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let m = Model::new(&small(), 7).unwrap();
        m.named_buffers()[0].1.set_value(Tensor::full(&[4], 0.25));
        let meta = CheckpointMeta {
            run_name: "r".into(),
            epoch: 3,
            val_dice: Some(0.5),
            iteration: 12,
        };
        save_checkpoint(&m, &meta, &path).unwrap();
        let (back, meta_back) = load_checkpoint(&path).unwrap();
        assert_eq!(meta_back, meta);
        for ((na, a), (nb, b)) in m.named_params().iter().chain(m.named_buffers()).zip(back.named_params().iter().chain(back.named_buffers())) {
            assert_eq!(na, nb);
            let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a.value()), bits(&b.value()));
        }
        let fresh = Model::new(&small(), 99).unwrap();
        load_into(&fresh, &path).unwrap();
        assert_eq!(fresh.named_params()[0].1.value().data(), m.named_params()[0].1.value().data());
    }

    #[test]
    fn damage_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&Model::new(&small(), 1).unwrap(), &CheckpointMeta::default(), &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(EngineError::CorruptCheckpoint { .. })));
        let mut flipped = bytes.clone();
        flipped[bytes.len() / 2] ^= 1;
        std::fs::write(&path, &flipped).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(EngineError::CorruptCheckpoint { .. })));
        std::fs::write(&path, b"nope").unwrap();
        assert!(matches!(load_checkpoint(&path), Err(EngineError::CorruptCheckpoint { .. })));
    }

    #[test]
    fn mismatched_config_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&Model::new(&small(), 1).unwrap(), &CheckpointMeta::default(), &path).unwrap();
        let other = Model::new(&ModelConfig { base_width: 8, ..small() }, 1).unwrap();
        assert!(matches!(load_into(&other, &path), Err(EngineError::ConfigMismatch(_))));
    }
}
