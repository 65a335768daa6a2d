//! `.nnwc` weight container.
//!
//! Layout: 8-byte magic `NNWC0001`, u32 LE header length, UTF-8 JSON header,
//! then the concatenated little-endian f32 parameter blobs. Blob offsets in
//! the header are byte offsets relative to the start of the blob section.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{FuzzError, Result};
use crate::model::{Layer, Model, Padding};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"NNWC0001";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlobRef {
    pub shape: Vec<usize>,
    pub offset: usize,
    pub length: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerHeader {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stride: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub padding: Option<Padding>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<BlobRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias: Option<BlobRef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub name: String,
    pub input_shape: Vec<usize>,
    pub label_count: usize,
    pub layers: Vec<LayerHeader>,
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| FuzzError::io(path, e))?;
    decode(&bytes)
}

pub fn save_model(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode(model)?).map_err(|e| FuzzError::io(path, e))
}

pub fn encode(model: &Model) -> Result<Vec<u8>> {
    let mut blobs: Vec<u8> = Vec::new();
    let mut push = |t: &[f32], shape: Vec<usize>| {
        let offset = blobs.len();
        for v in t {
            blobs.extend_from_slice(&v.to_le_bytes());
        }
        BlobRef {
            shape,
            offset,
            length: t.len() * 4,
        }
    };
    let layers = model
        .layers()
        .iter()
        .map(|layer| {
            let mut h = LayerHeader {
                kind: layer.kind().to_string(),
                stride: None,
                padding: None,
                window: None,
                weight: None,
                bias: None,
            };
            match layer {
                Layer::Conv2d {
                    weight,
                    bias,
                    stride,
                    padding,
                } => {
                    h.stride = Some(*stride);
                    h.padding = Some(*padding);
                    h.weight = Some(push(weight.data(), weight.shape().to_vec()));
                    h.bias = Some(push(bias, vec![bias.len()]));
                }
                Layer::Dense { weight, bias } => {
                    h.weight = Some(push(weight.data(), weight.shape().to_vec()));
                    h.bias = Some(push(bias, vec![bias.len()]));
                }
                Layer::MaxPool2d { window, stride } => {
                    h.window = Some(*window);
                    h.stride = Some(*stride);
                }
                Layer::Relu | Layer::Flatten | Layer::Softmax => {}
            }
            h
        })
        .collect();
    let header = Header {
        name: model.name().to_string(),
        input_shape: model.input_shape().to_vec(),
        label_count: model.label_count(),
        layers,
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(12 + json.len() + blobs.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&blobs);
    Ok(out)
}

/// Splits `magic | u32 len | header | rest` and parses the JSON header.
pub(crate) fn split_container<'a, H: serde::de::DeserializeOwned>(
    bytes: &'a [u8],
    magic: &[u8; 8],
) -> Result<(H, &'a [u8])> {
    if bytes.len() < 12 || &bytes[..8] != magic {
        return Err(FuzzError::MalformedHeader(format!(
            "missing magic {}",
            String::from_utf8_lossy(magic)
        )));
    }
    let len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let end = 12usize
        .checked_add(len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| FuzzError::MalformedHeader(format!("header length {len} exceeds file")))?;
    let header = serde_json::from_slice(&bytes[12..end])
        .map_err(|e| FuzzError::MalformedHeader(e.to_string()))?;
    Ok((header, &bytes[end..]))
}

pub fn decode(bytes: &[u8]) -> Result<Model> {
    let (header, blobs): (Header, _) = split_container(bytes, MAGIC)?;
    if header.layers.is_empty() {
        return Err(FuzzError::EmptyModel);
    }
    let read = |blob: &Option<BlobRef>, what: &str, i: usize| -> Result<Tensor> {
        let blob = blob
            .as_ref()
            .ok_or_else(|| FuzzError::MalformedHeader(format!("layer {i}: missing {what}")))?;
        let count: usize = blob.shape.iter().product();
        if blob.length != count * 4 {
            return Err(FuzzError::ShapeMismatch(format!(
                "layer {i} {what}: shape {:?} needs {} bytes, header says {}",
                blob.shape,
                count * 4,
                blob.length
            )));
        }
        let slice = blob
            .offset
            .checked_add(blob.length)
            .and_then(|end| blobs.get(blob.offset..end))
            .ok_or_else(|| {
                FuzzError::TruncatedBlob(format!(
                    "layer {i} {what}: bytes {}..{} beyond blob section of {}",
                    blob.offset,
                    blob.offset + blob.length,
                    blobs.len()
                ))
            })?;
        let data = slice
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        Tensor::new(blob.shape.clone(), data)
    };
    let mut layers = Vec::with_capacity(header.layers.len());
    for (i, l) in header.layers.iter().enumerate() {
        let layer = match l.kind.as_str() {
            "conv2d" => Layer::Conv2d {
                weight: read(&l.weight, "weight", i)?,
                bias: read(&l.bias, "bias", i)?.into_data(),
                stride: l.stride.unwrap_or(1),
                padding: l.padding.unwrap_or_default(),
            },
            "dense" => Layer::Dense {
                weight: read(&l.weight, "weight", i)?,
                bias: read(&l.bias, "bias", i)?.into_data(),
            },
            "relu" => Layer::Relu,
            "maxpool2d" => {
                let window = l
                    .window
                    .ok_or_else(|| FuzzError::MalformedHeader(format!("layer {i}: maxpool2d without window")))?;
                Layer::MaxPool2d {
                    window,
                    stride: l.stride.unwrap_or(window),
                }
            }
            "flatten" => Layer::Flatten,
            "softmax" => Layer::Softmax,
            other => return Err(FuzzError::UnsupportedLayer(other.to_string())),
        };
        layers.push(layer);
    }
    Model::new(header.name, header.input_shape, header.label_count, layers)
}
