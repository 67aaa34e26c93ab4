//! Checkpoint archive: an uncompressed POSIX tar file holding
//!
//! * `manifest.json`: format tag, version, model config, seed, training step
//!   and the path and shape of every stored tensor;
//! * `params/<path>.f32` and `buffers/<path>.f32`: one tensor each, encoded as
//!   `u32 ndim`, `ndim x u32 dims`, then `prod(dims) x f32`, all little-endian.
//!
//! Entries appear in manifest order (sorted by path) with zeroed timestamps and
//! owners, so identical models produce byte-identical archives.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backend::Tensor;
use crate::error::{Error, Result};
use crate::model::{FsfNet, ModelConfig, ParamStore};

pub const FORMAT: &str = "fsfnet-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub path: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub config: ModelConfig,
    pub seed: u64,
    pub step: usize,
    pub params: Vec<TensorEntry>,
    pub buffers: Vec<TensorEntry>,
}

pub fn encode_tensor(t: &Tensor<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 * (1 + t.shape().len() + t.len()));
    out.extend((t.shape().len() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend((d as u32).to_le_bytes());
    }
    for &v in t.data() {
        out.extend(v.to_le_bytes());
    }
    out
}

pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor<f32>> {
    let bad = |why: &str| Error::Checkpoint(format!("tensor record: {why}"));
    let word = |i: usize| -> Result<u32> {
        bytes
            .get(4 * i..4 * i + 4)
            .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
            .ok_or_else(|| bad("truncated header"))
    };
    let ndim = word(0)? as usize;
    let shape: Vec<usize> = (0..ndim)
        .map(|i| word(1 + i).map(|d| d as usize))
        .collect::<Result<_>>()?;
    let n: usize = shape.iter().product();
    let body = &bytes[4 * (1 + ndim)..];
    if body.len() != 4 * n {
        return Err(bad(&format!("{} data bytes for shape {shape:?}", body.len())));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Tensor::new(shape, data)
}

fn header(size: usize) -> tar::Header {
    let mut h = tar::Header::new_ustar();
    h.set_size(size as u64);
    h.set_mode(0o644);
    h.set_mtime(0);
    h.set_uid(0);
    h.set_gid(0);
    h.set_entry_type(tar::EntryType::Regular);
    h
}

/// Serializes `net` to an in-memory archive.
pub fn to_bytes(net: &FsfNet<f32>, seed: u64, step: usize) -> Result<Vec<u8>> {
    let entries = |m: &BTreeMap<String, Tensor<f32>>| {
        m.iter()
            .map(|(k, v)| TensorEntry {
                path: k.clone(),
                shape: v.shape().to_vec(),
            })
            .collect()
    };
    let manifest = Manifest {
        format: FORMAT.into(),
        version: VERSION,
        config: net.config.clone(),
        seed,
        step,
        params: entries(&net.params.params),
        buffers: entries(&net.params.buffers),
    };
    let mut builder = tar::Builder::new(Vec::new());
    let mut append = |name: &str, data: &[u8]| -> Result<()> {
        let mut h = header(data.len());
        builder
            .append_data(&mut h, name, data)
            .map_err(|e| Error::Checkpoint(format!("writing {name}: {e}")))
    };
    append("manifest.json", serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    for (dir, map) in [("params", &net.params.params), ("buffers", &net.params.buffers)] {
        for (k, v) in map {
            append(&format!("{dir}/{k}.f32"), &encode_tensor(v))?;
        }
    }
    builder
        .into_inner()
        .map_err(|e| Error::Checkpoint(format!("finishing archive: {e}")))
}

pub fn save(path: &Path, net: &FsfNet<f32>, seed: u64, step: usize) -> Result<()> {
    let bytes = to_bytes(net, seed, step)?;
    let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn from_bytes(bytes: &[u8]) -> Result<(FsfNet<f32>, Manifest)> {
    let mut archive = tar::Archive::new(bytes);
    let mut files = BTreeMap::new();
    let entries = archive
        .entries()
        .map_err(|e| Error::Checkpoint(format!("reading archive: {e}")))?;
    for entry in entries {
        let mut entry = entry.map_err(|e| Error::Checkpoint(format!("reading entry: {e}")))?;
        let name = entry
            .path()
            .map_err(|e| Error::Checkpoint(format!("entry name: {e}")))?
            .to_string_lossy()
            .into_owned();
        let mut data = Vec::new();
        entry
            .read_to_end(&mut data)
            .map_err(|e| Error::Checkpoint(format!("reading {name}: {e}")))?;
        files.insert(name, data);
    }
    let manifest: Manifest = serde_json::from_slice(
        files
            .get("manifest.json")
            .ok_or_else(|| Error::Checkpoint("missing manifest.json".into()))?,
    )?;
    if manifest.format != FORMAT || manifest.version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format {} v{}",
            manifest.format, manifest.version
        )));
    }
    let mut store = ParamStore {
        params: BTreeMap::new(),
        buffers: BTreeMap::new(),
    };
    for (dir, list, map) in [
        ("params", &manifest.params, &mut store.params),
        ("buffers", &manifest.buffers, &mut store.buffers),
    ] {
        for e in list {
            let name = format!("{dir}/{}.f32", e.path);
            let t = decode_tensor(
                files
                    .get(&name)
                    .ok_or_else(|| Error::Checkpoint(format!("missing {name}")))?,
            )?;
            if t.shape() != e.shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "{name} has shape {:?}, manifest says {:?}",
                    t.shape(),
                    e.shape
                )));
            }
            map.insert(e.path.clone(), t);
        }
    }
    let net = FsfNet::from_params(manifest.config.clone(), store)?;
    Ok((net, manifest))
}

pub fn load(path: &Path) -> Result<(FsfNet<f32>, Manifest)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}
