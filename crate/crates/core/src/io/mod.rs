pub mod nnwc;
pub mod tds;

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{FuzzError, Result};

pub use nnwc::{load_model, save_model};
pub use tds::{load_dataset, load_idx, save_dataset, Dataset};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_digest(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| FuzzError::io(path, e))?;
    Ok(sha256_hex(&bytes))
}
