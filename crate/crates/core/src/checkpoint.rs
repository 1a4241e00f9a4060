//! Versioned binary archive for network parameters and optimizer state.
//!
//! Layout: magic, `u32` format version, `u64` header length, JSON header,
//! raw little-endian `f32` blobs, then a SHA-256 of everything before it.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::params::{Adam, AdamConfig, ParamId, ParamStore};
use crate::tensor::{numel, Shape, Tensor};

const MAGIC: &[u8; 8] = b"UDACKPT\0";
pub const FORMAT_VERSION: u32 = 1;
pub const SCHEMA: &str = "uda-checkpoint/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Shape,
    offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    schema: String,
    kind: String,
    step: u64,
    seed: u64,
    config: serde_json::Value,
    extra: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

/// In-memory contents of one checkpoint file.
#[derive(Clone, Debug, PartialEq)]
pub struct Archive {
    pub kind: String,
    pub step: u64,
    pub seed: u64,
    pub config: serde_json::Value,
    pub extra: serde_json::Value,
    pub tensors: Vec<(String, Tensor)>,
}

impl Archive {
    pub fn new(kind: &str, step: u64, seed: u64, config: serde_json::Value) -> Self {
        Archive {
            kind: kind.to_string(),
            step,
            seed,
            config,
            extra: serde_json::Value::Null,
            tensors: Vec::new(),
        }
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::Schema(format!("checkpoint has no tensor `{name}`")))
    }

    pub fn push_store(&mut self, prefix: &str, store: &ParamStore) {
        for (_, p) in store.iter() {
            self.tensors.push((format!("{prefix}/{}", p.name), p.value.clone()));
        }
    }

    /// Overwrite every parameter of `store` from the archive, matching by name.
    pub fn load_store(&self, prefix: &str, store: &mut ParamStore) -> Result<()> {
        let ids: Vec<ParamId> = store.iter().map(|(id, _)| id).collect();
        for id in ids {
            let name = format!("{prefix}/{}", store.name(id));
            let t = self.tensor(&name)?;
            if t.shape() != store.get(id).shape() {
                return Err(Error::Schema(format!(
                    "tensor `{name}` has shape {:?}, network expects {:?}",
                    t.shape(),
                    store.get(id).shape()
                )));
            }
            *store.get_mut(id) = t.clone();
        }
        Ok(())
    }

    pub fn push_adam(&mut self, prefix: &str, adam: &Adam, store: &ParamStore) {
        for (slot, &id) in adam.ids.iter().enumerate() {
            self.tensors.push((format!("{prefix}/m/{}", store.name(id)), adam.m[slot].clone()));
            self.tensors.push((format!("{prefix}/v/{}", store.name(id)), adam.v[slot].clone()));
        }
    }

    pub fn load_adam(&self, prefix: &str, config: AdamConfig, step: u64, store: &ParamStore, ids: Vec<ParamId>) -> Result<Adam> {
        let mut adam = Adam::new(config, store, ids);
        adam.step = step;
        for (slot, &id) in adam.ids.iter().enumerate() {
            for (which, dst) in [("m", &mut adam.m[slot]), ("v", &mut adam.v[slot])] {
                let t = self.tensor(&format!("{prefix}/{which}/{}", store.name(id)))?;
                if t.shape() != dst.shape() {
                    return Err(Error::Schema(format!("optimizer state for `{}` has the wrong shape", store.name(id))));
                }
                *dst = t.clone();
            }
        }
        Ok(adam)
    }
}

pub fn write_archive(path: &Path, a: &Archive) -> Result<()> {
    let mut offset = 0;
    let tensors = a
        .tensors
        .iter()
        .map(|(name, t)| {
            let e = TensorEntry {
                name: name.clone(),
                shape: t.shape(),
                offset,
            };
            offset += t.len();
            e
        })
        .collect();
    let header = Header {
        schema: SCHEMA.to_string(),
        kind: a.kind.clone(),
        step: a.step,
        seed: a.seed,
        config: a.config.clone(),
        extra: a.extra.clone(),
        tensors,
    };
    let header = serde_json::to_vec(&header).map_err(|e| Error::Schema(e.to_string()))?;
    let mut buf = Vec::with_capacity(24 + header.len() + offset * 4 + 32);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(header.len() as u64).to_le_bytes());
    buf.extend_from_slice(&header);
    for (_, t) in &a.tensors {
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    // Write then rename so a crash never leaves a truncated archive behind.
    let tmp = path.with_extension("partial");
    std::fs::write(&tmp, &buf)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_archive(path: &Path) -> Result<Archive> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let buf = std::fs::read(path)?;
    let corrupt = |why: &str| Error::Schema(format!("{}: {why}", path.display()));
    if buf.len() < 20 + 32 || &buf[..8] != MAGIC {
        return Err(corrupt("not a checkpoint archive"));
    }
    let (body, digest) = buf.split_at(buf.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(corrupt("checksum mismatch (corrupt or truncated archive)"));
    }
    let version = u32::from_le_bytes(body[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(corrupt(&format!("format version {version}, expected {FORMAT_VERSION}")));
    }
    let hlen = u64::from_le_bytes(body[12..20].try_into().expect("8 bytes")) as usize;
    let hend = 20usize.checked_add(hlen).filter(|&e| e <= body.len()).ok_or_else(|| corrupt("header overruns file"))?;
    let header: Header = serde_json::from_slice(&body[20..hend]).map_err(|e| corrupt(&e.to_string()))?;
    if header.schema != SCHEMA {
        return Err(corrupt(&format!("schema `{}`, expected `{SCHEMA}`", header.schema)));
    }
    let blob = &body[hend..];
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for e in header.tensors {
        let n = numel(e.shape);
        let (start, end) = (e.offset * 4, (e.offset + n) * 4);
        if end > blob.len() {
            return Err(corrupt(&format!("tensor `{}` overruns the data section", e.name)));
        }
        let data = blob[start..end]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect();
        tensors.push((e.name, Tensor::from_vec(e.shape, data)));
    }
    Ok(Archive {
        kind: header.kind,
        step: header.step,
        seed: header.seed,
        config: header.config,
        extra: header.extra,
        tensors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Archive {
        let mut a = Archive::new("test", 12, 3, serde_json::json!({"lr": 0.5}));
        a.tensors.push(("w".into(), Tensor::from_vec([1, 1, 2, 2], vec![1.0, -2.5, f32::MIN_POSITIVE, 3.25])));
        a.tensors.push(("b".into(), Tensor::scalar(7.0)));
        a
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.ckpt");
        write_archive(&p, &sample()).unwrap();
        assert_eq!(read_archive(&p).unwrap(), sample());
    }

    #[test]
    fn corruption_is_a_schema_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.ckpt");
        write_archive(&p, &sample()).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        std::fs::write(&p, &bytes).unwrap();
        assert!(matches!(read_archive(&p), Err(Error::Schema(_))));
        std::fs::write(&p, &bytes[..10]).unwrap();
        assert!(matches!(read_archive(&p), Err(Error::Schema(_))));
    }
}
