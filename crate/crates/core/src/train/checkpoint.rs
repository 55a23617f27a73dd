//! Checkpoint directory: `manifest.json` describing every tensor (name, kind,
//! shape, byte offset) and `params.bin`, the concatenated little-endian f32
//! payload. The manifest is written last, so its presence marks a complete
//! checkpoint.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::adam::AdamState;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelGraph};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const BLOB_FILE: &str = "params.bin";
const FORMAT: &str = "mmtsn-checkpoint-1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TensorKind {
    Param,
    AdamM,
    AdamV,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub kind: TensorKind,
    pub shape: Vec<usize>,
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub model: ModelConfig,
    pub step: u64,
    pub blob_bytes: usize,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub graph: ModelGraph,
    pub adam: AdamState,
}

fn encode(graph: &ModelGraph, adam: &AdamState) -> (Manifest, Vec<u8>) {
    let mut blob = Vec::new();
    let mut tensors = Vec::new();
    let params = graph.parameters();
    let sections = [
        (TensorKind::Param, params.iter().map(|(_, t)| t.data()).collect::<Vec<_>>()),
        (TensorKind::AdamM, adam.m.iter().map(Vec::as_slice).collect()),
        (TensorKind::AdamV, adam.v.iter().map(Vec::as_slice).collect()),
    ];
    for (kind, values) in sections {
        for ((name, t), data) in params.iter().zip(values) {
            tensors.push(TensorEntry {
                name: name.clone(),
                kind,
                shape: t.shape().to_vec(),
                offset: blob.len(),
            });
            blob.extend(data.iter().flat_map(|v| v.to_le_bytes()));
        }
    }
    let manifest = Manifest {
        format: FORMAT.into(),
        model: *graph.config(),
        step: adam.step,
        blob_bytes: blob.len(),
        tensors,
    };
    (manifest, blob)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn save_checkpoint(dir: &Path, graph: &ModelGraph, adam: &AdamState) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (manifest, blob) = encode(graph, adam);
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    write_atomic(&dir.join(BLOB_FILE), &blob)?;
    write_atomic(&dir.join(MANIFEST_FILE), text.as_bytes())
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
}

/// Loads a checkpoint, rejecting it unless its model configuration equals
/// `expected` (when given) and every tensor matches the declared shapes.
pub fn load_checkpoint(dir: &Path, expected: Option<&ModelConfig>) -> Result<Checkpoint> {
    let manifest = read_manifest(dir)?;
    if manifest.format != FORMAT {
        return Err(Error::Checkpoint(format!("unsupported format {:?}", manifest.format)));
    }
    if let Some(want) = expected {
        if *want != manifest.model {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {:?}, expected {:?}",
                manifest.model, want
            )));
        }
    }
    let blob_path = dir.join(BLOB_FILE);
    let blob = fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;
    if blob.len() != manifest.blob_bytes {
        return Err(Error::Checkpoint(format!(
            "blob has {} bytes, manifest says {}",
            blob.len(),
            manifest.blob_bytes
        )));
    }
    let decls = manifest.model.declare_parameters();
    if manifest.tensors.len() != 3 * decls.len() {
        return Err(Error::Checkpoint(format!(
            "expected {} tensors, manifest lists {}",
            3 * decls.len(),
            manifest.tensors.len()
        )));
    }
    let mut cursor = 0;
    let mut read = |entry: &TensorEntry, kind: TensorKind, name: &str, shape: &[usize]| -> Result<Vec<f32>> {
        if entry.kind != kind || entry.name != name || entry.shape != shape || entry.offset != cursor {
            return Err(Error::Checkpoint(format!(
                "entry {:?} {} {:?} at {} does not match expected {:?} {name} {:?} at {cursor}",
                entry.kind, entry.name, entry.shape, entry.offset, kind, shape
            )));
        }
        let n: usize = shape.iter().product();
        let bytes = blob
            .get(cursor..cursor + 4 * n)
            .ok_or_else(|| Error::Checkpoint(format!("blob truncated inside {name}")))?;
        cursor += 4 * n;
        let values: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Checkpoint(format!("non-finite value in {name}")));
        }
        Ok(values)
    };
    let mut entries = manifest.tensors.iter();
    let mut section = |kind| -> Result<Vec<Vec<f32>>> {
        decls
            .iter()
            .map(|(name, shape)| read(entries.next().expect("count checked"), kind, name, shape))
            .collect()
    };
    let params = section(TensorKind::Param)?;
    let m = section(TensorKind::AdamM)?;
    let v = section(TensorKind::AdamV)?;
    let values = decls
        .iter()
        .zip(params)
        .map(|((name, shape), data)| (name.clone(), shape.clone(), data))
        .collect();
    let graph = ModelGraph::from_values(manifest.model, values)?;
    Ok(Checkpoint {
        graph,
        adam: AdamState { step: manifest.step, m, v },
    })
}
