//! Binary model checkpoints.
//!
//! Layout: the magic `ULCK`, a little-endian `u32` format version, a
//! little-endian `u32` header length, that many bytes of JSON header, then
//! every tensor as little-endian `f32` in header order. Compute is `f64`, so
//! a round trip reproduces parameters to single-precision rounding.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::nn::{AnyModel, ClassifierModel, ContrastiveModel, MlpSpec, Model};

pub const MAGIC: &[u8; 4] = b"ULCK";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Architecture {
    Contrastive {
        encoder: MlpSpec,
        projector: MlpSpec,
        temperature: f64,
    },
    Classifier {
        encoder: MlpSpec,
        head: MlpSpec,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub architecture: Architecture,
    pub tensors: Vec<TensorEntry>,
    pub seed: u64,
    pub epochs_completed: usize,
}

/// Metadata stored next to the parameters.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CheckpointInfo {
    pub seed: u64,
    pub epochs_completed: usize,
}

fn layer_names(prefix: &str, spec: &MlpSpec) -> Vec<String> {
    (0..spec.widths.len() - 1)
        .flat_map(|l| [format!("{prefix}.{l}.weight"), format!("{prefix}.{l}.bias")])
        .collect()
}

fn architecture(model: &AnyModel) -> Architecture {
    match model {
        AnyModel::Contrastive(m) => Architecture::Contrastive {
            encoder: m.encoder.clone(),
            projector: m.projector.clone(),
            temperature: m.temperature,
        },
        AnyModel::Classifier(m) => Architecture::Classifier {
            encoder: m.encoder.clone(),
            head: m.head.clone(),
        },
    }
}

fn tensor_names(arch: &Architecture) -> Vec<String> {
    match arch {
        Architecture::Contrastive {
            encoder, projector, ..
        } => [
            layer_names("encoder", encoder),
            layer_names("projector", projector),
        ]
        .concat(),
        Architecture::Classifier { encoder, head } => {
            [layer_names("encoder", encoder), layer_names("head", head)].concat()
        }
    }
}

pub fn encode_checkpoint(model: &AnyModel, info: CheckpointInfo) -> Result<Vec<u8>> {
    let arch = architecture(model);
    let tensors = tensor_names(&arch)
        .into_iter()
        .zip(model.params())
        .map(|(name, t)| TensorEntry {
            name,
            shape: t.shape().to_vec(),
        })
        .collect();
    let header = Header {
        architecture: arch,
        tensors,
        seed: info.seed,
        epochs_completed: info.epochs_completed,
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Format(e.to_string()))?;
    let payload: usize = model.params().iter().map(|t| t.numel() * 4).sum();
    let mut out = Vec::with_capacity(12 + json.len() + payload);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for t in model.params() {
        for &v in t.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

fn read_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| {
            Error::Format(format!(
                "file ends inside the fixed header ({} bytes)",
                bytes.len()
            ))
        })
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(AnyModel, CheckpointInfo)> {
    if bytes.get(..4) != Some(MAGIC.as_slice()) {
        return Err(Error::Format("bad magic, not a ULCK checkpoint".into()));
    }
    let version = read_u32(bytes, 4)?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version}, expected {VERSION}"
        )));
    }
    let header_len = read_u32(bytes, 8)? as usize;
    let json = bytes.get(12..12 + header_len).ok_or_else(|| {
        Error::Format(format!(
            "header length {header_len} exceeds file size {}",
            bytes.len()
        ))
    })?;
    let header: Header =
        serde_json::from_slice(json).map_err(|e| Error::Format(format!("header: {e}")))?;

    match &header.architecture {
        Architecture::Contrastive {
            encoder, projector, ..
        } => [encoder, projector],
        Architecture::Classifier { encoder, head } => [encoder, head],
    }
    .iter()
    .try_for_each(|s| s.validate())
    .map_err(|e| Error::Format(format!("header: {e}")))?;
    let names = tensor_names(&header.architecture);
    let expected_shapes: Vec<Vec<usize>> = match &header.architecture {
        Architecture::Contrastive {
            encoder, projector, ..
        } => [encoder.param_shapes(), projector.param_shapes()].concat(),
        Architecture::Classifier { encoder, head } => {
            [encoder.param_shapes(), head.param_shapes()].concat()
        }
    };
    if header.tensors.len() != names.len() {
        return Err(Error::Format(format!(
            "header lists {} tensors, architecture needs {}",
            header.tensors.len(),
            names.len()
        )));
    }
    for ((entry, name), shape) in header.tensors.iter().zip(&names).zip(&expected_shapes) {
        if &entry.name != name || &entry.shape != shape {
            return Err(Error::Format(format!(
                "tensor {:?} {:?} does not match expected {name:?} {shape:?}",
                entry.name, entry.shape
            )));
        }
    }

    let payload = &bytes[12 + header_len..];
    let expected: usize = header
        .tensors
        .iter()
        .map(|t| t.shape.iter().product::<usize>() * 4)
        .sum();
    if payload.len() != expected {
        return Err(Error::Format(format!(
            "payload length mismatch: expected {expected} bytes, got {}",
            payload.len()
        )));
    }
    let mut floats = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64);
    let params: Vec<Tensor> = header
        .tensors
        .iter()
        .map(|t| {
            let n = t.shape.iter().product();
            Tensor::new(t.shape.clone(), floats.by_ref().take(n).collect())
        })
        .collect::<Result<_>>()?;

    let model = match header.architecture {
        Architecture::Contrastive {
            encoder,
            projector,
            temperature,
        } => AnyModel::Contrastive(ContrastiveModel::from_params(
            encoder,
            projector,
            temperature,
            params,
        )?),
        Architecture::Classifier { encoder, head } => {
            AnyModel::Classifier(ClassifierModel::from_params(encoder, head, params)?)
        }
    };
    let info = CheckpointInfo {
        seed: header.seed,
        epochs_completed: header.epochs_completed,
    };
    Ok((model, info))
}

pub fn save_checkpoint(model: &AnyModel, info: CheckpointInfo, path: &Path) -> Result<()> {
    let bytes = encode_checkpoint(model, info)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(AnyModel, CheckpointInfo)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> AnyModel {
        AnyModel::Classifier(
            ClassifierModel::new(MlpSpec::new(vec![3, 5, 4], 1), MlpSpec::new(vec![4, 3], 2))
                .unwrap(),
        )
    }

    #[test]
    fn layout_starts_with_magic_version_and_header_length() {
        let bytes = encode_checkpoint(&model(), CheckpointInfo::default()).unwrap();
        assert_eq!(&bytes[..4], b"ULCK");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        let h = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let floats = 3 * 5 + 5 + 5 * 4 + 4 + 4 * 3 + 3;
        assert_eq!(bytes.len(), 12 + h + 4 * floats);
        let header: Header = serde_json::from_slice(&bytes[12..12 + h]).unwrap();
        assert_eq!(header.tensors[0].name, "encoder.0.weight");
        assert_eq!(header.tensors[5].name, "head.0.bias");
    }

    #[test]
    fn round_trip_is_exact_for_f32_values() {
        let m = model();
        let info = CheckpointInfo {
            seed: 42,
            epochs_completed: 7,
        };
        let (back, got) = decode_checkpoint(&encode_checkpoint(&m, info).unwrap()).unwrap();
        assert_eq!(got, info);
        for (a, b) in m.params().iter().zip(back.params()) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert_eq!(*x as f32 as f64, *y);
            }
        }
    }

    #[test]
    fn corrupt_inputs_are_format_errors() {
        let good = encode_checkpoint(&model(), CheckpointInfo::default()).unwrap();
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(decode_checkpoint(&bad), Err(Error::Format(_))));
        let mut bad = good.clone();
        bad[4] = 9;
        assert!(matches!(decode_checkpoint(&bad), Err(Error::Format(_))));
        match decode_checkpoint(&good[..good.len() - 3]) {
            Err(Error::Format(m)) => assert!(m.contains("expected") && m.contains("got"), "{m}"),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            decode_checkpoint(&good[..6]),
            Err(Error::Format(_))
        ));
    }
}
