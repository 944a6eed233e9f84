//! Single-file binary container used for checkpoints and buffer archives.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   b"CLGNARCH"
//! version u32
//! hlen    u64
//! header  hlen bytes of JSON: { kind, meta, arrays: [{name, dtype, shape}] }
//! payload arrays back to back, 4 bytes per element
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"CLGNARCH";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum ArrayData {
    F32(Vec<f32>),
    U32(Vec<u32>),
}

impl ArrayData {
    fn len(&self) -> usize {
        match self {
            ArrayData::F32(v) => v.len(),
            ArrayData::U32(v) => v.len(),
        }
    }

    fn dtype(&self) -> &'static str {
        match self {
            ArrayData::F32(_) => "f32",
            ArrayData::U32(_) => "u32",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: ArrayData,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Archive {
    pub kind: String,
    pub meta: serde_json::Value,
    pub arrays: Vec<NamedArray>,
}

#[derive(Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    dtype: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    kind: String,
    meta: serde_json::Value,
    arrays: Vec<ArrayEntry>,
}

impl Archive {
    pub fn new(kind: impl Into<String>, meta: serde_json::Value) -> Self {
        Self { kind: kind.into(), meta, arrays: Vec::new() }
    }

    pub fn push_f32(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.arrays.push(NamedArray { name: name.into(), shape, data: ArrayData::F32(data) });
    }

    pub fn push_u32(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<u32>) {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.arrays.push(NamedArray { name: name.into(), shape, data: ArrayData::U32(data) });
    }

    pub fn get(&self, name: &str) -> Option<&NamedArray> {
        self.arrays.iter().find(|a| a.name == name)
    }

    pub fn f32(&self, name: &str) -> Result<&[f32]> {
        match self.get(name).map(|a| &a.data) {
            Some(ArrayData::F32(v)) => Ok(v),
            Some(_) => Err(Error::Serde(format!("array `{name}` is not f32"))),
            None => Err(Error::Serde(format!("array `{name}` missing"))),
        }
    }

    pub fn u32(&self, name: &str) -> Result<&[u32]> {
        match self.get(name).map(|a| &a.data) {
            Some(ArrayData::U32(v)) => Ok(v),
            Some(_) => Err(Error::Serde(format!("array `{name}` is not u32"))),
            None => Err(Error::Serde(format!("array `{name}` missing"))),
        }
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let header = Header {
            kind: self.kind.clone(),
            meta: self.meta.clone(),
            arrays: self.arrays.iter().map(|a| ArrayEntry { name: a.name.clone(), dtype: a.data.dtype().into(), shape: a.shape.clone() }).collect(),
        };
        let header = serde_json::to_vec(&header)?;
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(header.len() as u64).to_le_bytes())?;
        w.write_all(&header)?;
        for a in &self.arrays {
            match &a.data {
                ArrayData::F32(v) => v.iter().try_for_each(|x| w.write_all(&x.to_le_bytes()))?,
                ArrayData::U32(v) => v.iter().try_for_each(|x| w.write_all(&x.to_le_bytes()))?,
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> std::result::Result<Self, String> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|e| e.to_string())?;
        if &magic != MAGIC {
            return Err("bad magic".into());
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4).map_err(|e| e.to_string())?;
        let version = u32::from_le_bytes(b4);
        if version != FORMAT_VERSION {
            return Err(format!("unsupported archive version {version}"));
        }
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8).map_err(|e| e.to_string())?;
        let hlen = u64::from_le_bytes(b8) as usize;
        let mut header = vec![0u8; hlen];
        r.read_exact(&mut header).map_err(|e| e.to_string())?;
        let header: Header = serde_json::from_slice(&header).map_err(|e| e.to_string())?;
        let mut arrays = Vec::with_capacity(header.arrays.len());
        for entry in header.arrays {
            let len: usize = entry.shape.iter().product();
            let mut bytes = vec![0u8; len * 4];
            r.read_exact(&mut bytes).map_err(|e| format!("array `{}`: {e}", entry.name))?;
            let words = bytes.chunks_exact(4).map(|c| [c[0], c[1], c[2], c[3]]);
            let data = match entry.dtype.as_str() {
                "f32" => ArrayData::F32(words.map(f32::from_le_bytes).collect()),
                "u32" => ArrayData::U32(words.map(u32::from_le_bytes).collect()),
                other => return Err(format!("unknown dtype `{other}`")),
            };
            debug_assert_eq!(data.len(), len);
            arrays.push(NamedArray { name: entry.name, shape: entry.shape, data });
        }
        Ok(Self { kind: header.kind, meta: header.meta, arrays })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::ingestion(path, e.to_string()))?;
        Self::read_from(BufReader::new(file)).map_err(|m| Error::ingestion(path, m))
    }
}
