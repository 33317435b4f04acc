//! Weight file: `u64` LE header length, JSON header, then f32 LE data.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Precision, Tensor};

use super::model::{CausalSparseDiT, DiTConfig};

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: DiTConfig,
    tensors: Vec<Entry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    /// Element offset into the data section.
    offset: usize,
}

pub fn encode_weights(model: &CausalSparseDiT) -> Result<Vec<u8>> {
    let mut tensors = Vec::new();
    let mut data: Vec<u8> = Vec::new();
    let mut offset = 0;
    model.visit(&mut |name, t| {
        tensors.push(Entry {
            name,
            shape: t.shape().to_vec(),
            offset,
        });
        offset += t.len();
        for x in t.to_f32_vec() {
            data.extend_from_slice(&x.to_le_bytes());
        }
    });
    let header = serde_json::to_vec(&Header {
        config: *model.config(),
        tensors,
    })?;
    let mut out = Vec::with_capacity(8 + header.len() + data.len());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend(header);
    out.extend(data);
    Ok(out)
}

pub fn decode_weights(bytes: &[u8], precision: Precision) -> Result<CausalSparseDiT> {
    let len_bytes: [u8; 8] = bytes
        .get(..8)
        .and_then(|b| b.try_into().ok())
        .ok_or_else(|| Error::parse(0, "missing header length"))?;
    let hlen = u64::from_le_bytes(len_bytes) as usize;
    let header_bytes = bytes
        .get(8..8usize.saturating_add(hlen))
        .ok_or_else(|| Error::parse(8, "header truncated"))?;
    let header: Header =
        serde_json::from_slice(header_bytes).map_err(|e| Error::parse(8 + e.column(), format!("header: {e}")))?;
    let data_start = 8 + hlen;
    let data = &bytes[data_start..];
    if data.len() % 4 != 0 {
        return Err(Error::parse(data_start, "data section is not a whole number of f32 values"));
    }
    let floats: Vec<f32> = data.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();

    let mut model = CausalSparseDiT::new(header.config, 0, precision)?;
    let by_name: HashMap<&str, &Entry> = header.tensors.iter().map(|e| (e.name.as_str(), e)).collect();
    let mut failure: Option<Error> = None;
    let mut seen = 0;
    model.visit_mut(&mut |name, slot| {
        if failure.is_some() {
            return;
        }
        let Some(e) = by_name.get(name.as_str()) else {
            failure = Some(Error::Config(format!("weight file lacks {name}")));
            return;
        };
        if e.shape != slot.shape() {
            failure = Some(Error::shape("load_weights", slot.shape(), &e.shape));
            return;
        }
        let Some(vals) = floats.get(e.offset..e.offset + slot.len()) else {
            failure = Some(Error::parse(data_start + 4 * e.offset, format!("{name} runs past the data section")));
            return;
        };
        match Tensor::from_vec(e.shape.clone(), vals.to_vec()) {
            Ok(t) => *slot = t.cast(precision),
            Err(err) => failure = Some(err),
        }
        seen += 1;
    });
    if let Some(e) = failure {
        return Err(e);
    }
    if seen != header.tensors.len() {
        return Err(Error::Config(format!(
            "weight file has {} tensors, model uses {seen}",
            header.tensors.len()
        )));
    }
    Ok(model)
}

pub fn save_weights(model: &CausalSparseDiT, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_weights(model)?)?;
    Ok(())
}

pub fn load_weights(path: impl AsRef<Path>, precision: Precision) -> Result<CausalSparseDiT> {
    decode_weights(&fs::read(path)?, precision)
}
