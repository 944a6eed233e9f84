//! Reader for the idx-ubyte format used by MNIST, Fashion-MNIST and EMNIST.

use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;

use crate::error::{Error, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

/// `base` or `base.gz`, whichever exists.
pub fn locate(dir: &Path, base: &str) -> Result<PathBuf> {
    let plain = dir.join(base);
    if plain.is_file() {
        return Ok(plain);
    }
    let gz = dir.join(format!("{base}.gz"));
    if gz.is_file() {
        return Ok(gz);
    }
    Err(Error::ingestion(gz, "file not found (also looked for the uncompressed name)"))
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    let mut file = File::open(path).map_err(|e| Error::ingestion(path, e.to_string()))?;
    let mut raw = Vec::new();
    file.read_to_end(&mut raw).map_err(|e| Error::ingestion(path, e.to_string()))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..]).read_to_end(&mut out).map_err(|e| Error::ingestion(path, format!("gzip: {e}")))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], at: usize) -> Option<u32> {
    bytes.get(at..at + 4).map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

pub fn parse_images(bytes: &[u8], path: &Path) -> Result<IdxImages> {
    let magic = be_u32(bytes, 0).ok_or_else(|| Error::ingestion(path, "truncated header"))?;
    if magic != IMAGES_MAGIC {
        return Err(Error::ingestion(path, format!("bad image magic {magic:#010x}")));
    }
    let header: Option<Vec<u32>> = (1..4).map(|i| be_u32(bytes, 4 * i)).collect();
    let header = header.ok_or_else(|| Error::ingestion(path, "truncated header"))?;
    let (count, rows, cols) = (header[0] as usize, header[1] as usize, header[2] as usize);
    let need = 16 + count * rows * cols;
    if bytes.len() != need {
        return Err(Error::ingestion(path, format!("expected {need} bytes for {count} images of {rows}x{cols}, found {}", bytes.len())));
    }
    Ok(IdxImages { count, rows, cols, pixels: bytes[16..].to_vec() })
}

pub fn parse_labels(bytes: &[u8], path: &Path) -> Result<Vec<u8>> {
    let magic = be_u32(bytes, 0).ok_or_else(|| Error::ingestion(path, "truncated header"))?;
    if magic != LABELS_MAGIC {
        return Err(Error::ingestion(path, format!("bad label magic {magic:#010x}")));
    }
    let count = be_u32(bytes, 4).ok_or_else(|| Error::ingestion(path, "truncated header"))? as usize;
    if bytes.len() != 8 + count {
        return Err(Error::ingestion(path, format!("expected {} bytes for {count} labels, found {}", 8 + count, bytes.len())));
    }
    Ok(bytes[8..].to_vec())
}

pub fn read_images(path: &Path) -> Result<IdxImages> {
    parse_images(&read_bytes(path)?, path)
}

pub fn read_labels(path: &Path) -> Result<Vec<u8>> {
    parse_labels(&read_bytes(path)?, path)
}

/// Encoders, used to build fixtures and converted datasets.
pub fn encode_images(rows: usize, cols: usize, images: &[Vec<u8>]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.len() * rows * cols);
    for v in [IMAGES_MAGIC, images.len() as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    for img in images {
        assert_eq!(img.len(), rows * cols);
        out.extend_from_slice(img);
    }
    out
}

pub fn encode_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}
