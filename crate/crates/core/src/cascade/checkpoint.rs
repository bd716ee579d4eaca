//! Checkpoint files.
//!
//! Layout: the 8 magic bytes `FPNRCKPT`, one format-version byte, a `u64`
//! little-endian header length, the JSON header, then every tensor as raw
//! little-endian `f32` in header order. Header offsets count bytes from the
//! start of the payload.

use std::path::Path;

use fpnr_tensor::{Scalar, Tensor};
use serde::{Deserialize, Serialize};

use super::arch::WidthScale;
use super::model::CascadeModel;
use crate::error::{CheckpointError, FpnrError, Result};

pub const MAGIC: &[u8; 8] = b"FPNRCKPT";
pub const FORMAT_VERSION: u8 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    width_scale: WidthScale,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

pub fn encode_checkpoint<T: Scalar>(model: &CascadeModel<T>) -> Vec<u8> {
    let mut tensors = Vec::new();
    let mut payload = Vec::with_capacity(model.num_parameters() * 4);
    for p in model.params().iter() {
        tensors.push(TensorEntry {
            name: p.name.clone(),
            shape: p.value.shape().to_vec(),
            offset: payload.len(),
        });
        for &v in p.value.data() {
            payload.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes());
        }
    }
    let header = serde_json::to_vec(&Header {
        width_scale: model.width_scale(),
        tensors,
    })
    .expect("plain header");
    let mut out = Vec::with_capacity(17 + header.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.push(FORMAT_VERSION);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&payload);
    out
}

fn parse_header(bytes: &[u8]) -> std::result::Result<(Header, &[u8]), CheckpointError> {
    if bytes.len() < MAGIC.len() {
        return Err(if MAGIC.starts_with(bytes) {
            CheckpointError::Truncated("file ends inside the magic bytes".into())
        } else {
            CheckpointError::BadMagic
        });
    }
    if &bytes[..8] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = *bytes
        .get(8)
        .ok_or_else(|| CheckpointError::Truncated("missing version byte".into()))?;
    if version != FORMAT_VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let len_bytes: [u8; 8] = bytes
        .get(9..17)
        .ok_or_else(|| CheckpointError::Truncated("missing header length".into()))?
        .try_into()
        .expect("8 bytes");
    let len = u64::from_le_bytes(len_bytes);
    let end = 17usize
        .checked_add(
            usize::try_from(len)
                .map_err(|_| CheckpointError::Header(format!("header length {len}")))?,
        )
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| {
            CheckpointError::Truncated(format!("header of {len} bytes exceeds the file"))
        })?;
    let header: Header = serde_json::from_slice(&bytes[17..end])
        .map_err(|e| CheckpointError::Header(e.to_string()))?;
    Ok((header, &bytes[end..]))
}

fn fill_model<T: Scalar>(
    model: &mut CascadeModel<T>,
    header: &Header,
    payload: &[u8],
) -> std::result::Result<(), CheckpointError> {
    for entry in &header.tensors {
        if model.params().find(&entry.name).is_none() {
            return Err(CheckpointError::Header(format!(
                "unknown tensor {}",
                entry.name
            )));
        }
    }
    let ids: Vec<_> = model.params().ids().collect();
    for id in ids {
        let param = model.params().get(id);
        let entry = header
            .tensors
            .iter()
            .find(|e| e.name == param.name)
            .ok_or_else(|| CheckpointError::MissingTensor(param.name.clone()))?;
        if entry.shape != param.value.shape() {
            return Err(CheckpointError::ShapeMismatch {
                name: entry.name.clone(),
                expected: param.value.shape().to_vec(),
                found: entry.shape.clone(),
            });
        }
        let n = param.value.len();
        let bytes = entry
            .offset
            .checked_add(n * 4)
            .and_then(|end| payload.get(entry.offset..end))
            .ok_or_else(|| {
                CheckpointError::Truncated(format!("payload of tensor {} is cut short", entry.name))
            })?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| T::from_f64_lossy(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
            .collect();
        model.params_mut().get_mut(id).value =
            Tensor::new(&entry.shape, data).expect("shape checked");
    }
    Ok(())
}

/// Decodes into the architecture the header declares.
pub fn decode_checkpoint<T: Scalar>(
    bytes: &[u8],
) -> std::result::Result<CascadeModel<T>, CheckpointError> {
    let (header, payload) = parse_header(bytes)?;
    let mut model = CascadeModel::new(header.width_scale, 0);
    fill_model(&mut model, &header, payload)?;
    Ok(model)
}

/// Decodes into the architecture of `width_scale`, whatever the header says.
pub fn decode_checkpoint_as<T: Scalar>(
    bytes: &[u8],
    width_scale: WidthScale,
) -> std::result::Result<CascadeModel<T>, CheckpointError> {
    let (header, payload) = parse_header(bytes)?;
    let mut model = CascadeModel::new(width_scale, 0);
    fill_model(&mut model, &header, payload)?;
    Ok(model)
}

/// Writes `model`. Values are stored as `f32`, so an `f64` model is rounded.
pub fn save_checkpoint<T: Scalar>(model: &CascadeModel<T>, path: &Path) -> Result<()> {
    std::fs::write(path, encode_checkpoint(model)).map_err(|e| FpnrError::io(path, e))
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<CascadeModel<T>> {
    let bytes = std::fs::read(path).map_err(|e| FpnrError::io(path, e))?;
    Ok(decode_checkpoint(&bytes)?)
}

pub fn load_checkpoint_as<T: Scalar>(
    path: &Path,
    width_scale: WidthScale,
) -> Result<CascadeModel<T>> {
    let bytes = std::fs::read(path).map_err(|e| FpnrError::io(path, e))?;
    Ok(decode_checkpoint_as(&bytes, width_scale)?)
}
