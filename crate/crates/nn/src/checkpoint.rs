//! Binary checkpoint format:
//!
//! ```text
//! "RFNN" | version: u32 LE | manifest_len: u64 LE | manifest (JSON, UTF-8) | blobs
//! ```
//!
//! The manifest lists every tensor with its name, shape, dtype and byte offset
//! (relative to the first blob byte) plus free-form model metadata. Blobs are
//! raw little-endian values.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};
use crate::params::ParamStore;
use crate::real::{DType, Real};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"RFNN";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: DType,
    pub offset: u64,
    pub trainable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub meta: serde_json::Value,
    pub tensors: Vec<TensorEntry>,
}

pub fn to_bytes<T: Real>(store: &ParamStore<T>, meta: &serde_json::Value) -> Result<Vec<u8>> {
    let mut blobs = Vec::new();
    let mut tensors = Vec::with_capacity(store.len());
    for (_, p) in store.iter() {
        tensors.push(TensorEntry {
            name: p.name.clone(),
            shape: p.value().shape().to_vec(),
            dtype: T::DTYPE,
            offset: blobs.len() as u64,
            trainable: p.trainable(),
        });
        for &v in p.value().data() {
            v.write_le(&mut blobs);
        }
    }
    let manifest = serde_json::to_vec(&Manifest {
        meta: meta.clone(),
        tensors,
    })
    .map_err(|e| NnError::Checkpoint(e.to_string()))?;
    let mut out = Vec::with_capacity(16 + manifest.len() + blobs.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
    out.extend_from_slice(&manifest);
    out.extend_from_slice(&blobs);
    Ok(out)
}

/// Parses the header and manifest; returns the manifest and the blob section.
pub fn read_manifest(bytes: &[u8]) -> Result<(Manifest, &[u8])> {
    if bytes.len() < 16 || &bytes[..4] != MAGIC {
        return Err(NnError::Checkpoint("missing RFNN magic".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(NnError::Checkpoint(format!("unsupported format version {version}")));
    }
    let mlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let end = 16usize
        .checked_add(mlen)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| NnError::Checkpoint("truncated manifest".into()))?;
    let manifest: Manifest = serde_json::from_slice(&bytes[16..end])
        .map_err(|e| NnError::Checkpoint(format!("bad manifest: {e}")))?;
    Ok((manifest, &bytes[end..]))
}

/// Rebuilds a store. Entries keep their manifest order, so `ParamId`s of a
/// model built with the same architecture stay valid.
pub fn from_bytes<T: Real>(bytes: &[u8]) -> Result<(ParamStore<T>, serde_json::Value)> {
    let (manifest, blobs) = read_manifest(bytes)?;
    let mut store = ParamStore::new();
    for e in &manifest.tensors {
        if e.dtype != T::DTYPE {
            return Err(NnError::Checkpoint(format!(
                "tensor `{}` has dtype {:?}, expected {:?}",
                e.name,
                e.dtype,
                T::DTYPE
            )));
        }
        let n: usize = e.shape.iter().product();
        let size = e.dtype.size();
        let start = e.offset as usize;
        let stop = start + n * size;
        if stop > blobs.len() {
            return Err(NnError::Checkpoint(format!("blob for `{}` out of range", e.name)));
        }
        let data = blobs[start..stop].chunks_exact(size).map(T::read_le).collect();
        store.add(e.name.clone(), Tensor::new(&e.shape, data)?, e.trainable);
    }
    Ok((store, manifest.meta))
}

/// Copies checkpoint values into an existing store, matching by name and shape.
pub fn load_into<T: Real>(store: &mut ParamStore<T>, bytes: &[u8]) -> Result<serde_json::Value> {
    let (loaded, meta) = from_bytes::<T>(bytes)?;
    if loaded.len() != store.len() {
        return Err(NnError::Checkpoint(format!(
            "checkpoint holds {} tensors, model has {}",
            loaded.len(),
            store.len()
        )));
    }
    for (_, p) in loaded.iter() {
        let id = store
            .find(&p.name)
            .ok_or_else(|| NnError::Checkpoint(format!("unknown tensor `{}`", p.name)))?;
        store.set_value(id, p.value().clone())?;
    }
    Ok(meta)
}

pub fn save<T: Real>(path: &Path, store: &ParamStore<T>, meta: &serde_json::Value) -> Result<()> {
    std::fs::write(path, to_bytes(store, meta)?)?;
    Ok(())
}

pub fn load<T: Real>(path: &Path) -> Result<(ParamStore<T>, serde_json::Value)> {
    from_bytes(&std::fs::read(path)?)
}
