//! Binary checkpoint format.
//!
//! ```text
//! "TGOCRCK1"                      8-byte magic
//! u32 LE                          manifest length in bytes
//! UTF-8 JSON                      Manifest
//! f32 LE …                        every tensor listed in `manifest.tensors`, in order
//! u32 LE                          CRC-32 (IEEE) of all preceding bytes
//! ```
//!
//! Dense weights are stored `n_out × n_in`, conv kernels
//! `out × in × kH × kW`, both row-major. Model parameters come first, then
//! the Adadelta accumulators so training can resume exactly.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::Param;
use crate::model::{Architecture, LayerSpec, SequentialModel};
use crate::optim::AdadeltaConfig;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"TGOCRCK1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestLayer {
    #[serde(flatten)]
    pub spec: LayerSpec,
    pub output_shape: Vec<usize>,
    pub parameters: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub layer: usize,
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub architecture: Architecture,
    pub input_shape: Vec<usize>,
    pub classes: usize,
    pub seed: u64,
    pub parameter_count: usize,
    pub epochs_completed: usize,
    pub optimizer: AdadeltaConfig,
    pub layers: Vec<ManifestLayer>,
    pub tensors: Vec<TensorEntry>,
}

const PARAM_NAMES: [&str; 2] = ["weights", "bias"];
const STATE_SUFFIXES: [&str; 2] = ["acc_grad", "acc_delta"];

/// Tensor table in file order.
fn tensor_table(model: &SequentialModel<f32>) -> Vec<TensorEntry> {
    let mut values = Vec::new();
    let mut state = Vec::new();
    for (i, layer) in model.layers().iter().enumerate() {
        let Some(ps) = layer.params() else { continue };
        for (name, p) in PARAM_NAMES.iter().zip(ps.params()) {
            let shape = p.value.dims().to_vec();
            values.push(TensorEntry {
                layer: i,
                name: name.to_string(),
                shape: shape.clone(),
            });
            for suffix in STATE_SUFFIXES {
                state.push(TensorEntry {
                    layer: i,
                    name: format!("{name}.{suffix}"),
                    shape: shape.clone(),
                });
            }
        }
    }
    values.extend(state);
    values
}

fn slot_ref<'a>(model: &'a SequentialModel<f32>, entry: &TensorEntry) -> &'a Tensor<f32> {
    let ps = model.layers()[entry.layer]
        .params()
        .expect("tensor table only lists parameterized layers");
    let (param, field) = entry.name.split_once('.').unwrap_or((&entry.name, ""));
    let p = if param == "weights" { &ps.weights } else { &ps.bias };
    match field {
        "" => &p.value,
        "acc_grad" => &p.acc_grad,
        _ => &p.acc_delta,
    }
}

fn slot<'a>(model: &'a mut SequentialModel<f32>, entry: &TensorEntry) -> &'a mut Tensor<f32> {
    let ps = model.layers_mut()[entry.layer]
        .params_mut()
        .expect("tensor table only lists parameterized layers");
    let (param, field) = entry.name.split_once('.').unwrap_or((&entry.name, ""));
    let p: &mut Param<f32> = if param == "weights" { &mut ps.weights } else { &mut ps.bias };
    match field {
        "" => &mut p.value,
        "acc_grad" => &mut p.acc_grad,
        _ => &mut p.acc_delta,
    }
}

pub fn manifest_for(model: &SequentialModel<f32>, optimizer: &AdadeltaConfig) -> Result<Manifest> {
    let shapes = model.layer_output_dims()?;
    Ok(Manifest {
        format_version: FORMAT_VERSION,
        architecture: model.architecture(),
        input_shape: model.input_dims().to_vec(),
        classes: model.classes(),
        seed: model.seed(),
        parameter_count: model.param_count(),
        epochs_completed: model.epochs_completed,
        optimizer: *optimizer,
        layers: model
            .layer_specs()
            .into_iter()
            .zip(shapes)
            .zip(model.layers())
            .map(|((spec, output_shape), l)| ManifestLayer {
                spec,
                output_shape,
                parameters: l.param_count(),
            })
            .collect(),
        tensors: tensor_table(model),
    })
}

pub fn encode_checkpoint(model: &SequentialModel<f32>, optimizer: &AdadeltaConfig) -> Result<Vec<u8>> {
    let manifest = manifest_for(model, optimizer)?;
    let json = serde_json::to_vec(&manifest).map_err(|e| Error::checkpoint("manifest", e.to_string()))?;
    let mut out = Vec::with_capacity(16 + json.len() + 12 * model.param_count());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for entry in &manifest.tensors {
        for v in slot_ref(model, entry).data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(SequentialModel<f32>, Manifest)> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::checkpoint("magic", "not a checkpoint file (bad magic bytes)"));
    }
    let mut at = MAGIC.len();
    let len_bytes = bytes
        .get(at..at + 4)
        .ok_or_else(|| Error::checkpoint("manifest length", "file truncated"))?;
    let json_len = u32::from_le_bytes(len_bytes.try_into().unwrap()) as usize;
    at += 4;
    let json = bytes
        .get(at..at.saturating_add(json_len))
        .ok_or_else(|| Error::checkpoint("manifest", "file truncated"))?;
    at += json_len;
    let manifest: Manifest =
        serde_json::from_slice(json).map_err(|e| Error::checkpoint("manifest", e.to_string()))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::checkpoint(
            "manifest",
            format!(
                "format version {} is not supported (expected {FORMAT_VERSION})",
                manifest.format_version
            ),
        ));
    }

    let expected_len = manifest
        .tensors
        .iter()
        .try_fold(at + 4, |acc, t| {
            t.shape
                .iter()
                .try_fold(4usize, |n, &d| n.checked_mul(d))
                .and_then(|n| acc.checked_add(n))
        })
        .ok_or_else(|| Error::checkpoint("manifest", "tensor sizes overflow"))?;
    if bytes.len() < expected_len {
        return Err(Error::checkpoint(
            "tensors",
            format!("file truncated: {} of {expected_len} bytes", bytes.len()),
        ));
    }
    if bytes.len() > expected_len {
        return Err(Error::checkpoint(
            "checksum",
            format!("{} unexpected trailing bytes", bytes.len() - expected_len),
        ));
    }
    let stored = u32::from_le_bytes(bytes[expected_len - 4..].try_into().unwrap());
    let actual = crc32fast::hash(&bytes[..expected_len - 4]);
    if stored != actual {
        return Err(Error::checkpoint(
            "checksum",
            format!("CRC-32 mismatch: stored {stored:08x}, computed {actual:08x}"),
        ));
    }

    let specs: Vec<LayerSpec> = manifest.layers.iter().map(|l| l.spec.clone()).collect();
    let mut model = SequentialModel::<f32>::from_specs(
        manifest.architecture,
        &manifest.input_shape,
        &specs,
        manifest.seed,
    )
    .map_err(|e| Error::checkpoint("manifest", format!("layer list does not form a model: {e}")))?;
    if model.param_count() != manifest.parameter_count {
        return Err(Error::checkpoint(
            "manifest",
            format!(
                "declared {} parameters, layers hold {}",
                manifest.parameter_count,
                model.param_count()
            ),
        ));
    }
    if tensor_table(&model) != manifest.tensors {
        return Err(Error::checkpoint("manifest", "tensor table does not match the layer list"));
    }

    for entry in &manifest.tensors {
        let n: usize = entry.shape.iter().product();
        let values: Vec<f32> = bytes[at..at + 4 * n]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        at += 4 * n;
        let section = format!("tensors: layer {} {}", entry.layer, entry.name);
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::checkpoint(section, "non-finite value"));
        }
        *slot(&mut model, entry) =
            Tensor::from_vec(&entry.shape, values).map_err(|e| Error::checkpoint(section, e.to_string()))?;
    }
    model.epochs_completed = manifest.epochs_completed;
    Ok((model, manifest))
}

/// Writes `bytes` to a sibling temp file, syncs it and renames it over
/// `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp_name = path.file_name().unwrap_or_default().to_os_string();
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp: PathBuf = path.with_file_name(tmp_name);
    let mut file = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    file.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    file.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(file);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn save_checkpoint(model: &SequentialModel<f32>, path: &Path, optimizer: &AdadeltaConfig) -> Result<()> {
    write_atomic(path, &encode_checkpoint(model, optimizer)?)
}

pub fn read_checkpoint(path: &Path) -> Result<(SequentialModel<f32>, Manifest)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

pub fn load_checkpoint(path: &Path) -> Result<SequentialModel<f32>> {
    Ok(read_checkpoint(path)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_cnn, build_mlp, CNN_PARAMS};

    fn section(err: Error) -> String {
        match err {
            Error::Checkpoint { section, .. } => section,
            other => panic!("expected checkpoint error, got {other}"),
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let mut model = build_mlp::<f32>(5);
        model.epochs_completed = 3;
        model.layers_mut()[1].params_mut().unwrap().weights.acc_grad.fill(0.25);
        let bytes = encode_checkpoint(&model, &AdadeltaConfig::default()).unwrap();
        let (loaded, manifest) = decode_checkpoint(&bytes).unwrap();
        assert_eq!(manifest.epochs_completed, 3);
        assert_eq!(loaded.epochs_completed, 3);
        for (a, b) in model.layers().iter().zip(loaded.layers()) {
            assert_eq!(a.params(), b.params());
        }
        assert_eq!(encode_checkpoint(&loaded, &AdadeltaConfig::default()).unwrap(), bytes);
    }

    #[test]
    fn manifest_declares_cnn_parameter_count() {
        let bytes = encode_checkpoint(&build_cnn::<f32>(0), &AdadeltaConfig::default()).unwrap();
        let (_, manifest) = decode_checkpoint(&bytes).unwrap();
        assert_eq!(manifest.parameter_count, CNN_PARAMS);
        assert_eq!(manifest.layers[0].output_shape, vec![30, 28, 28]);
    }

    #[test]
    fn corrupted_magic() {
        let mut bytes = encode_checkpoint(&build_cnn::<f32>(0), &AdadeltaConfig::default()).unwrap();
        bytes[0] = b'X';
        assert_eq!(section(decode_checkpoint(&bytes).unwrap_err()), "magic");
    }

    #[test]
    fn flipped_payload_byte_fails_checksum() {
        let mut bytes = encode_checkpoint(&build_cnn::<f32>(0), &AdadeltaConfig::default()).unwrap();
        let n = bytes.len();
        bytes[n - 100] ^= 0x40;
        assert_eq!(section(decode_checkpoint(&bytes).unwrap_err()), "checksum");
    }

    #[test]
    fn truncation_names_a_section() {
        let bytes = encode_checkpoint(&build_cnn::<f32>(0), &AdadeltaConfig::default()).unwrap();
        assert_eq!(section(decode_checkpoint(&bytes[..10]).unwrap_err()), "manifest length");
        assert_eq!(section(decode_checkpoint(&bytes[..40]).unwrap_err()), "manifest");
        assert_eq!(section(decode_checkpoint(&bytes[..bytes.len() - 10]).unwrap_err()), "tensors");
    }

    #[test]
    fn version_mismatch() {
        let bytes = encode_checkpoint(&build_mlp::<f32>(0), &AdadeltaConfig::default()).unwrap();
        let text = String::from_utf8_lossy(&bytes[12..]).into_owned();
        assert!(text.starts_with("{\"format_version\":1,"));
        let mut patched = bytes.clone();
        patched[12 + "{\"format_version\":".len()] = b'7';
        let err = decode_checkpoint(&patched).unwrap_err();
        assert!(err.to_string().contains("version 7"), "{err}");
    }
}
