//! On-disk format for [`PolicyWeights`] and [`ExpertTable`].
//!
//! A directory holding `manifest.json` (kind, scalar hyperparameters, and the
//! name, shape and element offset of every tensor) and `tensors.bin`, the
//! concatenated tensors as little-endian `f32`, row-major.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Action, ExpertTable, FeatureScale, ModelConfig, PolicyError, PolicyWeights};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TENSORS_FILE: &str = "tensors.bin";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtifactKind {
    PolicyWeights,
    ExpertTable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into the payload, in `f32` elements.
    pub offset: usize,
}

impl TensorEntry {
    fn len(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub kind: ArtifactKind,
    pub scalars: serde_json::Value,
    pub tensors: Vec<TensorEntry>,
}

fn bad(msg: impl Into<String>) -> PolicyError {
    PolicyError::Format(msg.into())
}

struct Writer {
    entries: Vec<TensorEntry>,
    payload: Vec<u8>,
}

impl Writer {
    fn new() -> Self {
        Self {
            entries: Vec::new(),
            payload: Vec::new(),
        }
    }

    fn push(&mut self, name: String, shape: Vec<usize>, data: impl IntoIterator<Item = f64>) {
        let offset = self.payload.len() / 4;
        for v in data {
            self.payload.extend_from_slice(&(v as f32).to_le_bytes());
        }
        self.entries.push(TensorEntry { name, shape, offset });
    }

    fn finish(self, dir: &Path, kind: ArtifactKind, scalars: serde_json::Value) -> Result<(), PolicyError> {
        fs::create_dir_all(dir)?;
        let manifest = Manifest {
            version: FORMAT_VERSION,
            kind,
            scalars,
            tensors: self.entries,
        };
        let json = serde_json::to_string_pretty(&manifest).map_err(|e| bad(e.to_string()))?;
        fs::write(dir.join(MANIFEST_FILE), json)?;
        fs::write(dir.join(TENSORS_FILE), self.payload)?;
        Ok(())
    }
}

struct Reader {
    manifest: Manifest,
    payload: Vec<f32>,
}

impl Reader {
    fn open(dir: &Path, kind: ArtifactKind) -> Result<Self, PolicyError> {
        let manifest: Manifest =
            serde_json::from_slice(&fs::read(dir.join(MANIFEST_FILE))?).map_err(|e| bad(format!("manifest: {e}")))?;
        if manifest.version != FORMAT_VERSION {
            return Err(bad(format!("unsupported format version {}", manifest.version)));
        }
        if manifest.kind != kind {
            return Err(bad(format!("expected {kind:?}, found {:?}", manifest.kind)));
        }
        let bytes = fs::read(dir.join(TENSORS_FILE))?;
        if bytes.len() % 4 != 0 {
            return Err(bad("payload length is not a multiple of 4"));
        }
        let payload: Vec<f32> = bytes.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
        for t in &manifest.tensors {
            if t.offset + t.len() > payload.len() {
                return Err(bad(format!("tensor {} runs past the payload", t.name)));
            }
        }
        Ok(Self { manifest, payload })
    }

    fn tensor(&self, name: &str, shape: &[usize]) -> Result<Vec<f64>, PolicyError> {
        let t = self
            .manifest
            .tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| bad(format!("missing tensor {name}")))?;
        if t.shape != shape {
            return Err(PolicyError::ShapeMismatch(format!("{name}: stored {:?}, expected {shape:?}", t.shape)));
        }
        Ok(self.payload[t.offset..t.offset + t.len()].iter().map(|&v| v as f64).collect())
    }
}

pub fn save_weights(w: &PolicyWeights, dir: &Path) -> Result<(), PolicyError> {
    w.validate()?;
    let mut out = Writer::new();
    w.for_each(|t| out.push(t.name, t.shape, t.data.iter().copied()));
    let scalars = serde_json::to_value(&w.config).map_err(|e| bad(e.to_string()))?;
    out.finish(dir, ArtifactKind::PolicyWeights, scalars)
}

pub fn load_weights(dir: &Path) -> Result<PolicyWeights, PolicyError> {
    let r = Reader::open(dir, ArtifactKind::PolicyWeights)?;
    let config: ModelConfig =
        serde_json::from_value(r.manifest.scalars.clone()).map_err(|e| bad(format!("model config: {e}")))?;
    let mut w = PolicyWeights::init(&config, 0)?;
    let mut err = None;
    w.for_each_mut(|t| {
        if err.is_some() {
            return;
        }
        match r.tensor(&t.name, &t.shape) {
            Ok(v) => t.data.copy_from_slice(&v),
            Err(e) => err = Some(e),
        }
    });
    if let Some(e) = err {
        return Err(e);
    }
    let mut expected = 0;
    w.for_each(|_| expected += 1);
    if r.manifest.tensors.len() != expected {
        return Err(PolicyError::ShapeMismatch("unexpected extra tensors".into()));
    }
    w.validate()?;
    Ok(w)
}

#[derive(Serialize, Deserialize)]
struct ExpertScalars {
    k: usize,
}

pub fn save_expert(table: &ExpertTable, dir: &Path) -> Result<(), PolicyError> {
    table.validate()?;
    let k = table.k();
    let mut out = Writer::new();
    out.push("centroids".into(), vec![k, 2], table.centroids.iter().flatten().copied());
    out.push("labels".into(), vec![k], table.labels.iter().map(|a| a.index() as f64));
    out.push(
        "scaling".into(),
        vec![2, 2],
        table.scaling.iter().flat_map(|s| [s.mean, s.std]),
    );
    let scalars = serde_json::to_value(ExpertScalars { k }).map_err(|e| bad(e.to_string()))?;
    out.finish(dir, ArtifactKind::ExpertTable, scalars)
}

pub fn load_expert(dir: &Path) -> Result<ExpertTable, PolicyError> {
    let r = Reader::open(dir, ArtifactKind::ExpertTable)?;
    let ExpertScalars { k } =
        serde_json::from_value(r.manifest.scalars.clone()).map_err(|e| bad(format!("expert scalars: {e}")))?;
    let c = r.tensor("centroids", &[k, 2])?;
    let labels = r
        .tensor("labels", &[k])?
        .into_iter()
        .map(|v| Action::from_index(v as usize).filter(|_| v.fract() == 0.0 && v >= 0.0))
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| bad("label outside the action set"))?;
    let s = r.tensor("scaling", &[2, 2])?;
    let table = ExpertTable {
        centroids: c.chunks_exact(2).map(|p| [p[0], p[1]]).collect(),
        labels,
        scaling: [
            FeatureScale { mean: s[0], std: s[1] },
            FeatureScale { mean: s[2], std: s[3] },
        ],
    };
    table.validate()?;
    Ok(table)
}

/// Rounds every parameter through `f32`, matching what a save/load yields.
pub fn round_to_f32(w: &mut PolicyWeights) {
    w.for_each_mut(|t| t.data.iter_mut().for_each(|v| *v = *v as f32 as f64));
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::SegmentState;
    use crate::rtc::SEGMENT_SECONDS;

    fn small() -> ModelConfig {
        ModelConfig {
            d_model: 8,
            heads: 2,
            layers: 2,
            ff_dim: 16,
            embed_hidden: 8,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn weights_round_trip_through_f32() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = PolicyWeights::init(&small(), 3).unwrap();
        save_weights(&w, dir.path()).unwrap();
        let loaded = load_weights(dir.path()).unwrap();
        round_to_f32(&mut w);
        assert_eq!(loaded, w);
        let s = SegmentState::from_flags(vec![0; SEGMENT_SECONDS]).unwrap();
        assert_eq!(super::super::infer(&loaded, &s).unwrap(), super::super::infer(&w, &s).unwrap());
    }

    #[test]
    fn payload_is_little_endian_f32() {
        let dir = tempfile::tempdir().unwrap();
        let w = PolicyWeights::init(&small(), 3).unwrap();
        save_weights(&w, dir.path()).unwrap();
        let bytes = fs::read(dir.path().join(TENSORS_FILE)).unwrap();
        assert_eq!(bytes.len(), 4 * w.param_count());
        let first = f32::from_le_bytes(bytes[..4].try_into().unwrap());
        assert_eq!(first, w.embed_w1[[0, 0]] as f32);
    }

    #[test]
    fn expert_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let table = ExpertTable {
            centroids: vec![[-1.0, -1.0], [0.5, 0.5], [2.0, 2.0]],
            labels: vec![Action::from_index(0).unwrap(), Action::from_index(3).unwrap(), Action::from_index(2).unwrap()],
            scaling: [FeatureScale { mean: 0.5, std: 1.0 }, FeatureScale { mean: 0.25, std: 0.5 }],
        };
        save_expert(&table, dir.path()).unwrap();
        assert_eq!(load_expert(dir.path()).unwrap(), table);
    }

    #[test]
    fn wrong_kind_and_truncation_rejected() {
        let dir = tempfile::tempdir().unwrap();
        save_weights(&PolicyWeights::init(&small(), 3).unwrap(), dir.path()).unwrap();
        assert!(matches!(load_expert(dir.path()), Err(PolicyError::Format(_))));
        let path = dir.path().join(TENSORS_FILE);
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 8]).unwrap();
        assert!(load_weights(dir.path()).is_err());
    }
}
