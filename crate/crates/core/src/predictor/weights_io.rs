//! Versioned weights container.
//!
//! Layout: 8-byte magic `NASPRED1`, a little-endian u64 header length, a JSON
//! header (configuration, encoding version, device list, tensor directory
//! with names/shapes/byte offsets), then the raw tensor payloads as
//! little-endian 32-bit reals in row-major order. Saving and re-loading is
//! byte-exact.

use std::io::{Read, Write};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{ModelWeights, PredictorConfig, TargetMetric};
use crate::scalar::Scalar;
use crate::{Error, Result};

pub const WEIGHTS_MAGIC: &[u8; 8] = b"NASPRED1";

/// Provenance carried alongside the tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightsMeta {
    /// Device names in one-hot index order.
    pub devices: Vec<String>,
    /// Metric this model predicts, when known.
    pub target: Option<TargetMetric>,
    /// Hash of the run configuration that produced the model.
    pub config_hash: Option<String>,
    pub tool_version: String,
}

impl Default for WeightsMeta {
    fn default() -> Self {
        WeightsMeta {
            devices: Vec::new(),
            target: None,
            config_hash: None,
            tool_version: crate::TOOL_VERSION.to_string(),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: [usize; 2],
    /// Byte offset into the payload section.
    offset: u64,
    byte_len: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: PredictorConfig,
    encoding_version: u32,
    target_scale: f64,
    #[serde(flatten)]
    meta: WeightsMeta,
    tensors: Vec<TensorEntry>,
}

/// Serialize the model into the container format.
pub fn save_weights<T: Scalar, W: Write>(
    w: &ModelWeights<T>,
    meta: &WeightsMeta,
    mut writer: W,
) -> Result<()> {
    let mut entries = Vec::new();
    let mut offset = 0u64;
    for ((name, _), tensor) in w.config.tensor_shapes().iter().zip(w.tensors()) {
        let byte_len = (tensor.len() * 4) as u64;
        entries.push(TensorEntry {
            name: name.clone(),
            shape: [tensor.nrows(), tensor.ncols()],
            offset,
            byte_len,
        });
        offset += byte_len;
    }
    let header = Header {
        config: w.config.clone(),
        encoding_version: w.config.encoding_version,
        target_scale: w.target_scale,
        meta: meta.clone(),
        tensors: entries,
    };
    let header_json = serde_json::to_vec(&header)?;
    writer.write_all(WEIGHTS_MAGIC)?;
    writer.write_all(&(header_json.len() as u64).to_le_bytes())?;
    writer.write_all(&header_json)?;
    for tensor in w.tensors() {
        for value in tensor.iter() {
            writer.write_all(&(value.to_real() as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

/// Parse a container back into model weights and its metadata.
pub fn load_weights<T: Scalar, R: Read>(mut reader: R) -> Result<(ModelWeights<T>, WeightsMeta)> {
    let mut magic = [0u8; 8];
    reader.read_exact(&mut magic)?;
    if &magic != WEIGHTS_MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            magic, WEIGHTS_MAGIC
        )));
    }
    let mut len_bytes = [0u8; 8];
    reader.read_exact(&mut len_bytes)?;
    let header_len = u64::from_le_bytes(len_bytes) as usize;
    let mut header_json = vec![0u8; header_len];
    reader.read_exact(&mut header_json)?;
    let header: Header = serde_json::from_slice(&header_json)
        .map_err(|e| Error::Format(format!("bad weights header: {e}")))?;
    if header.encoding_version != header.config.encoding_version {
        return Err(Error::Format(format!(
            "header encoding v{} disagrees with config v{}",
            header.encoding_version, header.config.encoding_version
        )));
    }

    let expected = header.config.tensor_shapes();
    if header.tensors.len() != expected.len() {
        return Err(Error::Format(format!(
            "tensor directory lists {} tensors, config needs {}",
            header.tensors.len(),
            expected.len()
        )));
    }
    let mut tensors = Vec::with_capacity(expected.len());
    let mut cursor = 0u64;
    for (entry, (name, shape)) in header.tensors.iter().zip(&expected) {
        if entry.name != *name || entry.shape != [shape.0, shape.1] {
            return Err(Error::Format(format!(
                "tensor {} shape {:?} does not match config entry {name} {shape:?}",
                entry.name, entry.shape
            )));
        }
        if entry.offset != cursor || entry.byte_len != (shape.0 * shape.1 * 4) as u64 {
            return Err(Error::Format(format!(
                "tensor {} has inconsistent offsets",
                entry.name
            )));
        }
        cursor += entry.byte_len;
        let mut payload = vec![0u8; entry.byte_len as usize];
        reader.read_exact(&mut payload)?;
        let values: Vec<T> = payload
            .chunks_exact(4)
            .map(|chunk| {
                T::from_real(f32::from_le_bytes(chunk.try_into().expect("4 bytes")) as f64)
            })
            .collect();
        let tensor = Array2::from_shape_vec((shape.0, shape.1), values)
            .map_err(|e| Error::Format(format!("tensor {}: {e}", entry.name)))?;
        tensors.push(tensor);
    }

    let model = ModelWeights::from_tensors(header.config, header.target_scale, tensors)?;
    Ok((model, header.meta))
}
