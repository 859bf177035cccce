//! Directory archive of named tensors: `manifest.json` plus a little-endian f32 blob.
//!
//! Used for model checkpoints, feature dumps and embedding archives.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::tensor::Tensor;

pub const FORMAT: &str = "ecapa-archive";
pub const VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.json";
pub const BLOB: &str = "params.bin";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchiveKind {
    Checkpoint,
    Features,
    Embeddings,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into the blob, in f32 elements.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub kind: ArchiveKind,
    pub tensors: Vec<TensorEntry>,
    #[serde(default)]
    pub metadata: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Archive {
    pub kind: ArchiveKind,
    pub metadata: serde_json::Value,
    pub tensors: Vec<(String, Tensor)>,
}

impl Archive {
    pub fn new(kind: ArchiveKind, metadata: serde_json::Value) -> Self {
        Self {
            kind,
            metadata,
            tensors: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.push((name.into(), t));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut blob = Vec::new();
        let mut entries = Vec::with_capacity(self.tensors.len());
        let mut offset = 0;
        for (name, t) in &self.tensors {
            entries.push(TensorEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
                offset,
            });
            offset += t.len();
            blob.extend(t.data().iter().flat_map(|&v| (v as f32).to_le_bytes()));
        }
        let manifest = Manifest {
            format: FORMAT.into(),
            version: VERSION,
            kind: self.kind,
            tensors: entries,
            metadata: self.metadata.clone(),
        };
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        let mp = dir.join(MANIFEST);
        std::fs::write(&mp, text).map_err(|e| Error::io(&mp, e))?;
        let bp = dir.join(BLOB);
        std::fs::write(&bp, blob).map_err(|e| Error::io(&bp, e))
    }

    /// Loads an archive, requiring `kind` when given.
    pub fn load(dir: &Path, kind: Option<ArchiveKind>) -> Result<Self> {
        let mp = dir.join(MANIFEST);
        let text = std::fs::read_to_string(&mp).map_err(|e| Error::io(&mp, e))?;
        let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::format(&mp, e.to_string()))?;
        if m.format != FORMAT || m.version != VERSION {
            return Err(Error::format(
                &mp,
                format!("unsupported archive {} v{} (expected {FORMAT} v{VERSION})", m.format, m.version),
            ));
        }
        if let Some(k) = kind {
            if k != m.kind {
                return Err(Error::format(&mp, format!("archive holds {:?}, expected {k:?}", m.kind)));
            }
        }
        let bp = dir.join(BLOB);
        let bytes = std::fs::read(&bp).map_err(|e| Error::io(&bp, e))?;
        if bytes.len() % 4 != 0 {
            return Err(Error::format(&bp, "blob length is not a multiple of 4"));
        }
        let floats: Vec<f64> = bytes
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
            .collect();
        let mut tensors = Vec::with_capacity(m.tensors.len());
        for e in m.tensors {
            let n: usize = e.shape.iter().product();
            let data = floats
                .get(e.offset..e.offset + n)
                .ok_or_else(|| Error::format(&bp, format!("tensor `{}` runs past the blob", e.name)))?;
            let t = Tensor::new(e.shape, data.to_vec()).map_err(|err| Error::format(&mp, err.to_string()))?;
            tensors.push((e.name, t));
        }
        Ok(Self {
            kind: m.kind,
            metadata: m.metadata,
            tensors,
        })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct CheckpointMeta {
    config: ModelConfig,
    num_speakers: usize,
    rng_seed: u64,
    #[serde(default)]
    extra: serde_json::Value,
}

/// Writes every parameter and running statistic of `model`.
pub fn save_checkpoint(model: &Model, dir: &Path, extra: serde_json::Value) -> Result<()> {
    let meta = CheckpointMeta {
        config: model.config.clone(),
        num_speakers: model.num_speakers,
        rng_seed: model.seed,
        extra,
    };
    let mut a = Archive::new(ArchiveKind::Checkpoint, serde_json::to_value(meta).expect("metadata serializes"));
    for (_, p) in model.store.iter() {
        a.push(p.name.clone(), p.value.clone());
    }
    a.save(dir)
}

/// Rebuilds the topology from the stored config and fills in every named tensor.
pub fn load_checkpoint(dir: &Path) -> Result<Model> {
    let a = Archive::load(dir, Some(ArchiveKind::Checkpoint))?;
    let mp = dir.join(MANIFEST);
    let meta: CheckpointMeta =
        serde_json::from_value(a.metadata.clone()).map_err(|e| Error::format(&mp, format!("checkpoint metadata: {e}")))?;
    let mut model = Model::build(meta.config, meta.num_speakers, meta.rng_seed)?;
    if a.tensors.len() != model.store.len() {
        return Err(Error::format(
            &mp,
            format!("{} tensors stored, config defines {}", a.tensors.len(), model.store.len()),
        ));
    }
    for (name, t) in a.tensors {
        let id = model
            .store
            .find(&name)
            .ok_or_else(|| Error::format(&mp, format!("tensor `{name}` is not part of the configured model")))?;
        if model.store.get(id).shape() != t.shape() {
            return Err(Error::format(
                &mp,
                format!("tensor `{name}` has shape {:?}, config expects {:?}", t.shape(), model.store.get(id).shape()),
            ));
        }
        *model.store.get_mut(id) = t;
    }
    Ok(model)
}

/// Extra metadata stored with a checkpoint.
pub fn checkpoint_extra(dir: &Path) -> Result<serde_json::Value> {
    let a = Archive::load(dir, Some(ArchiveKind::Checkpoint))?;
    Ok(a.metadata.get("extra").cloned().unwrap_or(serde_json::Value::Null))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn archive_round_trip_rounds_to_f32() {
        let dir = tempfile::tempdir().unwrap();
        let mut a = Archive::new(ArchiveKind::Features, serde_json::json!({"n": 1}));
        a.push("u1", Tensor::new(vec![2, 2], vec![0.1, -2.0, 3.5, 1e-3]).unwrap());
        a.push("u2", Tensor::vector(vec![7.0]));
        a.save(dir.path()).unwrap();
        let b = Archive::load(dir.path(), Some(ArchiveKind::Features)).unwrap();
        assert_eq!(b.metadata, a.metadata);
        assert_eq!(b.get("u2").unwrap().data(), &[7.0]);
        assert_eq!(b.get("u1").unwrap().data()[0], f64::from(0.1f32));
        assert!(Archive::load(dir.path(), Some(ArchiveKind::Checkpoint)).is_err());
    }

    #[test]
    fn checkpoint_reload_is_stable() {
        let dir = tempfile::tempdir().unwrap();
        let m = Model::build(ModelConfig::tiny(), 3, 5).unwrap();
        save_checkpoint(&m, &dir.path().join("a"), serde_json::Value::Null).unwrap();
        let a = load_checkpoint(&dir.path().join("a")).unwrap();
        save_checkpoint(&a, &dir.path().join("b"), serde_json::Value::Null).unwrap();
        let b = load_checkpoint(&dir.path().join("b")).unwrap();
        assert_eq!(a.store, b.store);
        assert_eq!(a.config, m.config);
    }

    #[test]
    fn config_mismatch_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let m = Model::build(ModelConfig::tiny(), 3, 5).unwrap();
        save_checkpoint(&m, dir.path(), serde_json::Value::Null).unwrap();
        let mp = dir.path().join(MANIFEST);
        let text = std::fs::read_to_string(&mp).unwrap().replace("\"num_speakers\": 3", "\"num_speakers\": 4");
        std::fs::write(&mp, text).unwrap();
        assert!(matches!(load_checkpoint(dir.path()), Err(Error::Format { .. })));
    }
}
