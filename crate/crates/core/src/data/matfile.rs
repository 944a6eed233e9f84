//! Minimal MATLAB level-5 MAT-file reader, enough for the SVHN cropped-digit
//! files (`X`: uint8 32x32x3xN, `y`: Nx1 labels), compressed or not.

use std::io::Read;
use std::path::Path;

use flate2::read::ZlibDecoder;

use crate::error::{Error, Result};

const MI_INT8: u32 = 1;
const MI_UINT8: u32 = 2;
const MI_INT16: u32 = 3;
const MI_UINT16: u32 = 4;
const MI_INT32: u32 = 5;
const MI_UINT32: u32 = 6;
const MI_SINGLE: u32 = 7;
const MI_DOUBLE: u32 = 9;
const MI_INT64: u32 = 12;
const MI_UINT64: u32 = 13;
const MI_MATRIX: u32 = 14;
const MI_COMPRESSED: u32 = 15;

#[derive(Debug, Clone, PartialEq)]
pub enum MatData {
    U8(Vec<u8>),
    F64(Vec<f64>),
}

impl MatData {
    pub fn len(&self) -> usize {
        match self {
            MatData::U8(v) => v.len(),
            MatData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get_f64(&self, i: usize) -> f64 {
        match self {
            MatData::U8(v) => f64::from(v[i]),
            MatData::F64(v) => v[i],
        }
    }
}

/// A numeric array in column-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct MatArray {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: MatData,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn u32(&mut self) -> std::result::Result<u32, String> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or("unexpected end of data")?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn done(&self) -> bool {
        self.pos >= self.bytes.len()
    }

    /// Returns (type, payload), handling the packed small-element form and 8-byte padding.
    fn element(&mut self) -> std::result::Result<(u32, &'a [u8]), String> {
        let first = self.u32()?;
        if first >> 16 != 0 {
            let ty = first & 0xffff;
            let n = (first >> 16) as usize;
            let payload = self.take(4)?;
            return Ok((ty, &payload[..n.min(4)]));
        }
        let n = self.u32()? as usize;
        let payload = self.take(n)?;
        if first != MI_COMPRESSED {
            let pad = (8 - n % 8) % 8;
            if self.pos + pad <= self.bytes.len() {
                self.pos += pad;
            }
        }
        Ok((first, payload))
    }
}

fn numeric(ty: u32, payload: &[u8]) -> std::result::Result<MatData, String> {
    macro_rules! conv {
        ($t:ty, $w:expr) => {
            MatData::F64(payload.chunks_exact($w).map(|c| <$t>::from_le_bytes(c.try_into().unwrap()) as f64).collect())
        };
    }
    Ok(match ty {
        MI_UINT8 => MatData::U8(payload.to_vec()),
        MI_INT8 => MatData::F64(payload.iter().map(|&b| f64::from(b as i8)).collect()),
        MI_INT16 => conv!(i16, 2),
        MI_UINT16 => conv!(u16, 2),
        MI_INT32 => conv!(i32, 4),
        MI_UINT32 => conv!(u32, 4),
        MI_INT64 => conv!(i64, 8),
        MI_UINT64 => conv!(u64, 8),
        MI_SINGLE => conv!(f32, 4),
        MI_DOUBLE => conv!(f64, 8),
        other => return Err(format!("unsupported numeric element type {other}")),
    })
}

fn parse_matrix(payload: &[u8]) -> std::result::Result<MatArray, String> {
    let mut c = Cursor { bytes: payload, pos: 0 };
    let (_, _flags) = c.element()?;
    let (dty, dims) = c.element()?;
    if dty != MI_INT32 {
        return Err("dimensions must be int32".into());
    }
    let dims: Vec<usize> = dims.chunks_exact(4).map(|b| i32::from_le_bytes([b[0], b[1], b[2], b[3]]).max(0) as usize).collect();
    let (_, name) = c.element()?;
    let name = String::from_utf8_lossy(name).into_owned();
    let (ty, real) = c.element()?;
    let data = numeric(ty, real)?;
    let expected: usize = dims.iter().product();
    if data.len() != expected {
        return Err(format!("array `{name}` has {} values for dims {dims:?}", data.len()));
    }
    Ok(MatArray { name, dims, data })
}

fn parse_elements(bytes: &[u8], out: &mut Vec<MatArray>) -> std::result::Result<(), String> {
    let mut c = Cursor { bytes, pos: 0 };
    while !c.done() {
        let (ty, payload) = c.element()?;
        match ty {
            MI_MATRIX => out.push(parse_matrix(payload)?),
            MI_COMPRESSED => {
                let mut inflated = Vec::new();
                ZlibDecoder::new(payload).read_to_end(&mut inflated).map_err(|e| format!("zlib: {e}"))?;
                parse_elements(&inflated, out)?;
            }
            _ => {}
        }
    }
    Ok(())
}

pub fn parse(bytes: &[u8], path: &Path) -> Result<Vec<MatArray>> {
    if bytes.len() < 128 {
        return Err(Error::ingestion(path, "shorter than a MAT-file header"));
    }
    if &bytes[126..128] != b"IM" {
        return Err(Error::ingestion(path, "not a little-endian level-5 MAT-file"));
    }
    let mut arrays = Vec::new();
    parse_elements(&bytes[128..], &mut arrays).map_err(|m| Error::ingestion(path, m))?;
    Ok(arrays)
}

pub fn read(path: &Path) -> Result<Vec<MatArray>> {
    let bytes = std::fs::read(path).map_err(|e| Error::ingestion(path, e.to_string()))?;
    parse(&bytes, path)
}

/// Writer for uncompressed/compressed level-5 files holding numeric arrays.
/// Only used to produce fixtures.
pub fn encode(arrays: &[MatArray], compress: bool) -> Vec<u8> {
    fn padded(out: &mut Vec<u8>, ty: u32, payload: &[u8]) {
        out.extend_from_slice(&ty.to_le_bytes());
        out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
        out.extend_from_slice(payload);
        out.resize(out.len() + (8 - payload.len() % 8) % 8, 0);
    }
    let mut out = vec![b' '; 116];
    out[..10].copy_from_slice(b"MATLAB 5.0");
    out.extend_from_slice(&[0; 8]);
    out.extend_from_slice(&0x0100u16.to_le_bytes());
    out.extend_from_slice(b"IM");
    for a in arrays {
        let mut m = Vec::new();
        let class: u32 = match a.data {
            MatData::U8(_) => 9,
            MatData::F64(_) => 6,
        };
        padded(&mut m, MI_UINT32, &[class.to_le_bytes(), 0u32.to_le_bytes()].concat());
        let dims: Vec<u8> = a.dims.iter().flat_map(|&d| (d as i32).to_le_bytes()).collect();
        padded(&mut m, MI_INT32, &dims);
        padded(&mut m, MI_INT8, a.name.as_bytes());
        match &a.data {
            MatData::U8(v) => padded(&mut m, MI_UINT8, v),
            MatData::F64(v) => padded(&mut m, MI_DOUBLE, &v.iter().flat_map(|x| x.to_le_bytes()).collect::<Vec<_>>()),
        }
        let mut element = Vec::new();
        padded(&mut element, MI_MATRIX, &m);
        if compress {
            use flate2::write::ZlibEncoder;
            use std::io::Write;
            let mut enc = ZlibEncoder::new(Vec::new(), flate2::Compression::fast());
            enc.write_all(&element).unwrap();
            let z = enc.finish().unwrap();
            out.extend_from_slice(&MI_COMPRESSED.to_le_bytes());
            out.extend_from_slice(&(z.len() as u32).to_le_bytes());
            out.extend_from_slice(&z);
        } else {
            out.extend_from_slice(&element);
        }
    }
    out
}
