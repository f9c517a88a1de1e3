//! Binary checkpoint for a trained hybrid model.
//!
//! Layout, all integers little-endian:
//!
//! | field            | bytes                    |
//! |------------------|--------------------------|
//! | magic            | `EMGK`                   |
//! | version          | u32                      |
//! | kind             | u32 (1 = hybrid)         |
//! | descriptor length| u32                      |
//! | descriptor       | UTF-8 JSON               |
//! | blob length      | u64 (number of f32s)     |
//! | blob             | f32 values               |
//!
//! The blob holds CNN parameters, CNN batch-norm buffers and LSTM parameters,
//! in the order listed by the descriptor.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::{DspConfig, NormalizationStats, Protocol};
use crate::error::{Error, Result};
use crate::lstm::{LstmParams, LstmShape};
use crate::nn::cnn::{CnnArch, CnnModel};
use crate::nn::Parameters;
use crate::tensor::Tensor;
use crate::train::{HybridModel, TargetScaler};

use super::write_atomic;

pub const MAGIC: [u8; 4] = *b"EMGK";
pub const FORMAT_VERSION: u32 = 1;
pub const KIND_HYBRID: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Descriptor {
    pub cnn: CnnArch,
    pub lstm: LstmShape,
    pub k: usize,
    pub dsp: DspConfig,
    pub protocol: Protocol,
    pub normalization: NormalizationStats,
    pub targets: TargetScaler,
    pub tensors: Vec<TensorEntry>,
}

fn named_tensors(model: &HybridModel) -> Vec<(String, &Tensor<f32>)> {
    let cnn = model.cnn.param_names().into_iter().zip(model.cnn.params());
    let buffers = model.cnn.buffer_names().into_iter().zip(model.cnn.buffers());
    let lstm = LstmParams::<f32>::param_names()
        .into_iter()
        .map(|n| format!("lstm.{n}"))
        .zip(model.lstm.params());
    cnn.chain(buffers).chain(lstm).collect()
}

fn descriptor(model: &HybridModel) -> Descriptor {
    Descriptor {
        cnn: model.cnn.arch().clone(),
        lstm: model.lstm.shape(),
        k: model.k,
        dsp: model.dsp,
        protocol: model.protocol,
        normalization: model.normalization.clone(),
        targets: model.targets.clone(),
        tensors: named_tensors(model)
            .into_iter()
            .map(|(name, t)| TensorEntry {
                name,
                shape: t.shape().to_vec(),
            })
            .collect(),
    }
}

pub fn to_bytes(model: &HybridModel) -> Result<Vec<u8>> {
    let desc = serde_json::to_vec(&descriptor(model))?;
    let tensors = named_tensors(model);
    let count: usize = tensors.iter().map(|(_, t)| t.len()).sum();
    let mut out = Vec::with_capacity(24 + desc.len() + 4 * count);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&KIND_HYBRID.to_le_bytes());
    out.extend_from_slice(&(desc.len() as u32).to_le_bytes());
    out.extend_from_slice(&desc);
    out.extend_from_slice(&(count as u64).to_le_bytes());
    for (_, t) in tensors {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, field: &'static str) -> Result<&'a [u8]> {
        let left = self.bytes.len() - self.pos;
        if left < n {
            return Err(Error::CorruptCheckpoint {
                field,
                detail: format!("truncated: need {n} bytes, {left} left"),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, field: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, field)?.try_into().unwrap()))
    }

    fn u64(&mut self, field: &'static str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, field)?.try_into().unwrap()))
    }
}

fn corrupt(field: &'static str, detail: impl Into<String>) -> Error {
    Error::CorruptCheckpoint {
        field,
        detail: detail.into(),
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<HybridModel> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(corrupt("magic", format!("expected EMGK, found {magic:?}")));
    }
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            supported: FORMAT_VERSION,
        });
    }
    let kind = r.u32("kind")?;
    if kind != KIND_HYBRID {
        return Err(corrupt("kind", format!("unknown model kind {kind}")));
    }
    let desc_len = r.u32("descriptor")? as usize;
    let desc: Descriptor = serde_json::from_slice(r.take(desc_len, "descriptor")?)
        .map_err(|e| corrupt("descriptor", e.to_string()))?;

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let cnn = CnnModel::<f32>::new(desc.cnn.clone(), &mut rng)
        .map_err(|e| corrupt("descriptor", format!("cnn architecture: {e}")))?;
    let mut model = HybridModel {
        cnn,
        lstm: LstmParams::zeros(desc.lstm),
        normalization: desc.normalization,
        targets: desc.targets,
        dsp: desc.dsp,
        k: desc.k,
        protocol: desc.protocol,
    };
    if model.targets.dims() != desc.lstm.outputs || desc.protocol.dof_count() != desc.lstm.outputs {
        return Err(corrupt("descriptor", "output dimension disagrees with protocol"));
    }
    if desc.lstm.features != model.cnn.feature_dim() {
        return Err(corrupt("descriptor", "lstm input width disagrees with cnn features"));
    }

    let expected = named_tensors(&model);
    if expected.len() != desc.tensors.len() {
        return Err(corrupt(
            "tensors",
            format!("expected {} tensors, found {}", expected.len(), desc.tensors.len()),
        ));
    }
    for ((name, t), entry) in expected.iter().zip(&desc.tensors) {
        if *name != entry.name || t.shape() != entry.shape.as_slice() {
            return Err(corrupt(
                "tensors",
                format!(
                    "expected {name} {:?}, found {} {:?}",
                    t.shape(),
                    entry.name,
                    entry.shape
                ),
            ));
        }
    }
    let total: usize = expected.iter().map(|(_, t)| t.len()).sum();
    let blob_len = r.u64("blob")?;
    if blob_len != total as u64 {
        return Err(corrupt(
            "blob",
            format!("declared {blob_len} values, model needs {total}"),
        ));
    }
    let blob = r.take(4 * total, "blob")?;
    if r.pos != bytes.len() {
        return Err(corrupt(
            "blob",
            format!("{} trailing bytes", bytes.len() - r.pos),
        ));
    }

    let mut values = blob
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()));
    let mut entries = desc.tensors.iter();
    let mut fill = |slots: Vec<&mut Tensor<f32>>| -> Result<()> {
        for t in slots {
            let entry = entries.next().expect("tensor count checked");
            for slot in t.data_mut() {
                *slot = values.next().expect("blob length checked");
            }
            if !t.all_finite() {
                return Err(corrupt("blob", format!("non-finite value in {}", entry.name)));
            }
        }
        Ok(())
    };
    fill(model.cnn.params_mut())?;
    fill(model.cnn.buffers_mut())?;
    fill(model.lstm.params_mut())?;
    Ok(model)
}

pub fn save_model(path: &Path, model: &HybridModel) -> Result<()> {
    write_atomic(path, &to_bytes(model)?)
}

pub fn load_model(path: &Path) -> Result<HybridModel> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{DspConfig, MatrixMode};
    use crate::lstm::HIDDEN_UNITS;

    fn model() -> HybridModel {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dsp = DspConfig::from_millis(100.0, 50.0, 1024.0, MatrixMode::Spectral).unwrap();
        let cnn = CnnModel::new(CnnArch::standard(dsp.matrix_len(), 6, 3), &mut rng).unwrap();
        let shape = LstmShape {
            hidden: HIDDEN_UNITS,
            features: cnn.feature_dim(),
            outputs: 3,
        };
        let mut m = HybridModel {
            cnn,
            lstm: LstmParams::new(shape, &mut rng),
            normalization: NormalizationStats {
                min: vec![-1.0; 6],
                max: vec![1.0; 6],
            },
            targets: TargetScaler {
                mean: vec![0.5, -1.0, 2.0],
                std: vec![10.0, 20.0, 5.0],
            },
            dsp,
            k: 18,
            protocol: Protocol::P4,
        };
        for (i, b) in m.cnn.buffers_mut().into_iter().enumerate() {
            b.fill(0.25 + i as f32);
        }
        m
    }

    #[test]
    fn round_trip_is_exact() {
        let m = model();
        let bytes = to_bytes(&m).unwrap();
        assert_eq!(&bytes[..4], b"EMGK");
        let back = from_bytes(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(to_bytes(&back).unwrap(), bytes);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let m = model();
        save_model(&path, &m).unwrap();
        assert_eq!(load_model(&path).unwrap(), m);
    }

    fn field_of(bytes: &[u8]) -> &'static str {
        match from_bytes(bytes) {
            Err(Error::CorruptCheckpoint { field, .. }) => field,
            other => panic!("expected corrupt checkpoint, got {other:?}"),
        }
    }

    #[test]
    fn corruption_names_the_field() {
        let good = to_bytes(&model()).unwrap();
        let desc_len = u32::from_le_bytes(good[12..16].try_into().unwrap()) as usize;
        let blob_start = 16 + desc_len + 8;

        let mut bad = good.clone();
        bad[0] = b'X';
        assert_eq!(field_of(&bad), "magic");

        let mut bad = good.clone();
        bad[8] = 7;
        assert_eq!(field_of(&bad), "kind");

        let mut bad = good.clone();
        bad[16] = b'#';
        assert_eq!(field_of(&bad), "descriptor");

        assert_eq!(field_of(&good[..blob_start + 10]), "blob");
        assert_eq!(field_of(&good[..2]), "magic");

        let mut bad = good.clone();
        bad.push(0);
        assert_eq!(field_of(&bad), "blob");

        let mut bad = good.clone();
        bad[blob_start..blob_start + 4].copy_from_slice(&f32::NAN.to_le_bytes());
        assert_eq!(field_of(&bad), "blob");

        let text = String::from_utf8(good[16..16 + desc_len].to_vec()).unwrap();
        let renamed = text.replacen("conv1.weight", "conv1.wxyzzy", 1);
        let mut bad = good[..16].to_vec();
        bad.extend_from_slice(renamed.as_bytes());
        bad.extend_from_slice(&good[16 + desc_len..]);
        assert_eq!(field_of(&bad), "tensors");
    }

    #[test]
    fn future_version_is_rejected() {
        let mut bytes = to_bytes(&model()).unwrap();
        bytes[4..8].copy_from_slice(&2u32.to_le_bytes());
        assert!(matches!(
            from_bytes(&bytes),
            Err(Error::UnsupportedVersion { found: 2, supported: 1 })
        ));
    }
}
