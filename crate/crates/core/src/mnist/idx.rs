//! IDX container parsing (the MNIST distribution format), gzip aware.

use std::fs;
use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};

pub const LABELS_MAGIC: u32 = 2049;
pub const IMAGES_MAGIC: u32 = 2051;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxFile {
    pub magic: u32,
    pub dims: Vec<usize>,
    pub payload: Vec<u8>,
}

impl IdxFile {
    pub fn count(&self) -> usize {
        self.dims[0]
    }

    pub fn is_images(&self) -> bool {
        self.magic == IMAGES_MAGIC
    }

    /// Row-major grayscale pixels of image `i`.
    pub fn image(&self, i: usize) -> &[u8] {
        let len = self.dims[1] * self.dims[2];
        &self.payload[i * len..(i + 1) * len]
    }

    pub fn image_shape(&self) -> (usize, usize) {
        (self.dims[1], self.dims[2])
    }
}

pub fn parse_idx(bytes: &[u8]) -> Result<IdxFile> {
    if bytes.len() < 4 {
        return Err(Error::TruncatedPayload {
            expected: 4,
            actual: bytes.len(),
        });
    }
    let magic = u32::from_be_bytes(bytes[..4].try_into().unwrap());
    let ndims = match magic {
        LABELS_MAGIC => 1,
        IMAGES_MAGIC => 3,
        other => return Err(Error::BadMagic(other)),
    };
    let header = 4 + 4 * ndims;
    if bytes.len() < header {
        return Err(Error::TruncatedPayload {
            expected: header,
            actual: bytes.len(),
        });
    }
    let dims: Vec<usize> = (0..ndims)
        .map(|d| u32::from_be_bytes(bytes[4 + 4 * d..8 + 4 * d].try_into().unwrap()) as usize)
        .collect();
    let expected: usize = dims.iter().product();
    let payload = &bytes[header..];
    if payload.len() < expected {
        return Err(Error::TruncatedPayload {
            expected,
            actual: payload.len(),
        });
    }
    if payload.len() > expected {
        return Err(Error::format(
            "<idx>",
            format!("{} trailing bytes after payload", payload.len() - expected),
        ));
    }
    Ok(IdxFile {
        magic,
        dims,
        payload: payload.to_vec(),
    })
}

/// Reads an IDX file, transparently inflating `.gz` content.
pub fn read_idx_file(path: &Path) -> Result<IdxFile> {
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bytes = if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        flate2::read::GzDecoder::new(&raw[..])
            .read_to_end(&mut out)
            .map_err(|e| Error::io(path, e))?;
        out
    } else {
        raw
    };
    parse_idx(&bytes).map_err(|e| match e {
        Error::Format { detail, .. } => Error::format(path, detail),
        other => other,
    })
}

/// Encodes an IDX file (used for fixtures and re-export).
pub fn encode_idx(file: &IdxFile) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + 4 * file.dims.len() + file.payload.len());
    out.extend_from_slice(&file.magic.to_be_bytes());
    for &d in &file.dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(&file.payload);
    out
}
