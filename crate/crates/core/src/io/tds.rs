//! `.tds` dataset container and MNIST IDX readers.
//!
//! `.tds` layout: 8-byte magic `TDS00001`, u32 LE header length, JSON header
//! `{"count", "shape", "labels"}`, `count * prod(shape)` LE f32 samples, then
//! `count` u8 labels when `labels` is true.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{FuzzError, Result};
use crate::io::nnwc::split_container;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"TDS00001";

const IDX_IMAGES: u32 = 0x0000_0803;
const IDX_LABELS: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    count: usize,
    shape: Vec<usize>,
    labels: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub sample_shape: Vec<usize>,
    pub samples: Vec<Tensor>,
    pub labels: Option<Vec<u8>>,
}

impl Dataset {
    pub fn new(sample_shape: Vec<usize>, samples: Vec<Tensor>, labels: Option<Vec<u8>>) -> Result<Self> {
        if let Some(bad) = samples.iter().position(|s| s.shape() != sample_shape.as_slice()) {
            return Err(FuzzError::ShapeMismatch(format!(
                "sample {bad} has shape {:?}, expected {sample_shape:?}",
                samples[bad].shape()
            )));
        }
        if let Some(l) = &labels {
            if l.len() != samples.len() {
                return Err(FuzzError::ShapeMismatch(format!(
                    "{} labels for {} samples",
                    l.len(),
                    samples.len()
                )));
            }
        }
        Ok(Dataset {
            sample_shape,
            samples,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn label(&self, i: usize) -> Option<u8> {
        self.labels.as_ref().map(|l| l[i])
    }

    /// All pixels inside `[0, 1]`.
    pub fn check_pixel_range(&self) -> Result<()> {
        for (i, s) in self.samples.iter().enumerate() {
            if s.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(FuzzError::InvalidArgument(format!("sample {i} has pixels outside [0, 1]")));
            }
        }
        Ok(())
    }
}

pub fn encode(ds: &Dataset) -> Result<Vec<u8>> {
    let header = Header {
        count: ds.len(),
        shape: ds.sample_shape.clone(),
        labels: ds.labels.is_some(),
    };
    let json = serde_json::to_vec(&header)?;
    let per = ds.sample_shape.iter().product::<usize>();
    let mut out = Vec::with_capacity(12 + json.len() + ds.len() * (per * 4 + 1));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for s in &ds.samples {
        for v in s.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    if let Some(labels) = &ds.labels {
        out.extend_from_slice(labels);
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<Dataset> {
    let (header, body): (Header, _) = split_container(bytes, MAGIC)?;
    let per: usize = header.shape.iter().product();
    let sample_bytes = header.count * per * 4;
    let label_bytes = if header.labels { header.count } else { 0 };
    if body.len() != sample_bytes + label_bytes {
        return Err(FuzzError::TruncatedBlob(format!(
            "expected {} body bytes, found {}",
            sample_bytes + label_bytes,
            body.len()
        )));
    }
    let samples = body[..sample_bytes]
        .chunks_exact(per * 4)
        .map(|chunk| {
            let data = chunk
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            Tensor::new(header.shape.clone(), data)
        })
        .collect::<Result<Vec<_>>>()?;
    let labels = header.labels.then(|| body[sample_bytes..].to_vec());
    Dataset::new(header.shape, samples, labels)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| FuzzError::io(path, e))?;
    if bytes.len() >= 4 && u32::from_be_bytes(bytes[..4].try_into().expect("4 bytes")) == IDX_IMAGES {
        return decode_idx_images(&bytes, None);
    }
    decode(&bytes)
}

pub fn save_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode(ds)?).map_err(|e| FuzzError::io(path, e))
}

/// MNIST-style IDX pair; pixels are scaled by 1/255 into `[1, rows, cols]`.
pub fn load_idx(images: impl AsRef<Path>, labels: Option<&Path>) -> Result<Dataset> {
    let images = images.as_ref();
    let bytes = std::fs::read(images).map_err(|e| FuzzError::io(images, e))?;
    let label_bytes = labels
        .map(|p| std::fs::read(p).map_err(|e| FuzzError::io(p, e)))
        .transpose()?;
    decode_idx_images(&bytes, label_bytes.as_deref())
}

fn be_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| FuzzError::MalformedHeader("IDX header truncated".into()))
}

pub fn decode_idx_images(images: &[u8], labels: Option<&[u8]>) -> Result<Dataset> {
    if be_u32(images, 0)? != IDX_IMAGES {
        return Err(FuzzError::MalformedHeader("not an IDX image file (magic 0x00000803)".into()));
    }
    let count = be_u32(images, 4)? as usize;
    let rows = be_u32(images, 8)? as usize;
    let cols = be_u32(images, 12)? as usize;
    let body = &images[16..];
    if body.len() != count * rows * cols {
        return Err(FuzzError::TruncatedBlob(format!(
            "IDX images: expected {} pixel bytes, found {}",
            count * rows * cols,
            body.len()
        )));
    }
    let samples = body
        .chunks_exact(rows * cols)
        .map(|c| Tensor::new(vec![1, rows, cols], c.iter().map(|&p| p as f32 / 255.0).collect()))
        .collect::<Result<Vec<_>>>()?;
    let labels = labels
        .map(|l| {
            if be_u32(l, 0)? != IDX_LABELS {
                return Err(FuzzError::MalformedHeader("not an IDX label file (magic 0x00000801)".into()));
            }
            let n = be_u32(l, 4)? as usize;
            if n != count || l.len() != 8 + n {
                return Err(FuzzError::ShapeMismatch(format!("{n} labels for {count} images")));
            }
            Ok(l[8..].to_vec())
        })
        .transpose()?;
    Dataset::new(vec![1, rows, cols], samples, labels)
}
