//! Binary tensor container.
//!
//! Layout (little endian): magic `AF3D`, `u32` version, `u32` entry count,
//! then per entry: `u32` name length, UTF-8 name, `u8` dtype, `u32` rank,
//! `u64` extents, `u64` byte length, raw data, `u32` CRC32 of everything in
//! the entry before the checksum.

use std::collections::HashSet;
use std::path::Path;

use crate::error::{io_err, FaceError, Result};

pub const MAGIC: &[u8; 4] = b"AF3D";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32,
    F64,
    U8,
    I64,
}

impl DType {
    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
            DType::U8 => 1,
            DType::I64 => 8,
        }
    }

    fn code(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::F64 => 1,
            DType::U8 => 2,
            DType::I64 => 3,
        }
    }

    fn from_code(c: u8) -> Result<Self> {
        Ok(match c {
            0 => DType::F32,
            1 => DType::F64,
            2 => DType::U8,
            3 => DType::I64,
            _ => return Err(FaceError::Container(format!("unknown dtype code {c}"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<usize>,
    pub data: Vec<u8>,
}

impl Entry {
    pub fn new(name: &str, dtype: DType, shape: &[usize], data: Vec<u8>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n * dtype.size() != data.len() {
            return Err(FaceError::Container(format!(
                "entry {name}: shape {shape:?} needs {} bytes, got {}",
                n * dtype.size(),
                data.len()
            )));
        }
        Ok(Entry { name: name.to_string(), dtype, shape: shape.to_vec(), data })
    }

    pub fn from_f32(name: &str, shape: &[usize], v: &[f32]) -> Result<Self> {
        Self::new(name, DType::F32, shape, v.iter().flat_map(|x| x.to_le_bytes()).collect())
    }

    pub fn from_f64(name: &str, shape: &[usize], v: &[f64]) -> Result<Self> {
        Self::new(name, DType::F64, shape, v.iter().flat_map(|x| x.to_le_bytes()).collect())
    }

    pub fn from_i64(name: &str, shape: &[usize], v: &[i64]) -> Result<Self> {
        Self::new(name, DType::I64, shape, v.iter().flat_map(|x| x.to_le_bytes()).collect())
    }

    pub fn from_u8(name: &str, shape: &[usize], v: &[u8]) -> Result<Self> {
        Self::new(name, DType::U8, shape, v.to_vec())
    }

    /// Values widened to f64 (integers converted exactly where representable).
    pub fn to_f64(&self) -> Vec<f64> {
        match self.dtype {
            DType::F32 => self.data.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect(),
            DType::F64 => self.data.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
            DType::U8 => self.data.iter().map(|&b| b as f64).collect(),
            DType::I64 => self.data.chunks_exact(8).map(|c| i64::from_le_bytes(c.try_into().unwrap()) as f64).collect(),
        }
    }

    pub fn to_i64(&self) -> Result<Vec<i64>> {
        match self.dtype {
            DType::I64 => Ok(self.data.chunks_exact(8).map(|c| i64::from_le_bytes(c.try_into().unwrap())).collect()),
            _ => Err(FaceError::Container(format!("entry {} is {:?}, expected i64", self.name, self.dtype))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Container {
    pub entries: Vec<Entry>,
}

impl Container {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, e: Entry) -> Result<()> {
        if self.get(&e.name).is_some() {
            return Err(FaceError::Container(format!("duplicate entry name {}", e.name)));
        }
        self.entries.push(e);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn require(&self, name: &str) -> Result<&Entry> {
        self.get(name).ok_or_else(|| FaceError::Container(format!("missing entry {name}")))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for e in &self.entries {
            if !seen.insert(e.name.as_str()) {
                return Err(FaceError::Container(format!("duplicate entry name {}", e.name)));
            }
            let start = out.len();
            out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
            out.extend_from_slice(e.name.as_bytes());
            out.push(e.dtype.code());
            out.extend_from_slice(&(e.shape.len() as u32).to_le_bytes());
            for &d in &e.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            out.extend_from_slice(&(e.data.len() as u64).to_le_bytes());
            out.extend_from_slice(&e.data);
            let crc = crc32fast::hash(&out[start..]);
            out.extend_from_slice(&crc.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { b: bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(FaceError::Container("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(FaceError::Container(format!("version mismatch: file {version}, supported {VERSION}")));
        }
        let count = r.u32()? as usize;
        let mut c = Container::new();
        for _ in 0..count {
            let start = r.pos;
            let nlen = r.u32()? as usize;
            let name =
                String::from_utf8(r.take(nlen)?.to_vec()).map_err(|_| FaceError::Container("entry name is not UTF-8".into()))?;
            let dtype = DType::from_code(r.take(1)?[0])?;
            let rank = r.u32()? as usize;
            let mut shape = Vec::with_capacity(rank.min(16));
            for _ in 0..rank {
                shape.push(r.u64()? as usize);
            }
            let len = r.u64()? as usize;
            let data = r.take(len)?.to_vec();
            let computed = crc32fast::hash(&bytes[start..r.pos]);
            let stored = r.u32()?;
            if computed != stored {
                return Err(FaceError::Container(format!("checksum mismatch in entry {name}")));
            }
            c.push(Entry::new(&name, dtype, &shape, data)?)?;
        }
        if r.pos != bytes.len() {
            return Err(FaceError::Container(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(c)
    }
}

struct Reader<'a> {
    b: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.b.len() - self.pos < n {
            return Err(FaceError::Container(format!("truncated data at byte {}", self.pos)));
        }
        let s = &self.b[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn write_container(path: &Path, c: &Container) -> Result<()> {
    std::fs::write(path, c.to_bytes()?).map_err(|e| io_err(path, e))
}

pub fn read_container(path: &Path) -> Result<Container> {
    let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
    Container::from_bytes(&bytes)
}
