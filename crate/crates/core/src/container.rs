//! Chunked little-endian binary container with named, typed sections.
//!
//! Layout: magic `IDXC`, `u32` version, `u32` section count, then per
//! section: `u16` name length, UTF-8 name, `u8` dtype tag, `u64` element
//! count, raw little-endian payload.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"IDXC";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum Section {
    Bytes(Vec<u8>),
    F32(Vec<f32>),
    F64(Vec<f64>),
    I32(Vec<i32>),
    U64(Vec<u64>),
}

impl Section {
    fn tag(&self) -> u8 {
        match self {
            Section::Bytes(_) => 0,
            Section::F32(_) => 1,
            Section::F64(_) => 2,
            Section::I32(_) => 3,
            Section::U64(_) => 4,
        }
    }

    fn len(&self) -> usize {
        match self {
            Section::Bytes(v) => v.len(),
            Section::F32(v) => v.len(),
            Section::F64(v) => v.len(),
            Section::I32(v) => v.len(),
            Section::U64(v) => v.len(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Container {
    sections: Vec<(String, Section)>,
}

impl Container {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, section: Section) {
        self.sections.push((name.into(), section));
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.sections.iter().map(|(n, _)| n.as_str())
    }

    pub fn get(&self, name: &str) -> Result<&Section> {
        self.sections
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, s)| s)
            .ok_or_else(|| Error::Format(format!("missing section {name:?}")))
    }

    pub fn bytes(&self, name: &str) -> Result<&[u8]> {
        match self.get(name)? {
            Section::Bytes(v) => Ok(v),
            _ => Err(Error::Format(format!("section {name:?} is not bytes"))),
        }
    }

    pub fn f32s(&self, name: &str) -> Result<&[f32]> {
        match self.get(name)? {
            Section::F32(v) => Ok(v),
            _ => Err(Error::Format(format!("section {name:?} is not f32"))),
        }
    }

    pub fn f64s(&self, name: &str) -> Result<&[f64]> {
        match self.get(name)? {
            Section::F64(v) => Ok(v),
            _ => Err(Error::Format(format!("section {name:?} is not f64"))),
        }
    }

    pub fn i32s(&self, name: &str) -> Result<&[i32]> {
        match self.get(name)? {
            Section::I32(v) => Ok(v),
            _ => Err(Error::Format(format!("section {name:?} is not i32"))),
        }
    }

    pub fn u64s(&self, name: &str) -> Result<&[u64]> {
        match self.get(name)? {
            Section::U64(v) => Ok(v),
            _ => Err(Error::Format(format!("section {name:?} is not u64"))),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.sections.len() as u32).to_le_bytes());
        for (name, section) in &self.sections {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(section.tag());
            out.extend_from_slice(&(section.len() as u64).to_le_bytes());
            match section {
                Section::Bytes(v) => out.extend_from_slice(v),
                Section::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                Section::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                Section::I32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                Section::U64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            }
        }
        out
    }

    pub fn from_bytes(data: &[u8]) -> Result<Self> {
        let mut r = Reader { data, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let version = u32::from_le_bytes(r.array()?);
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let count = u32::from_le_bytes(r.array()?) as usize;
        let mut sections = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = u16::from_le_bytes(r.array()?) as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| Error::Format("section name is not UTF-8".into()))?;
            let tag = r.take(1)?[0];
            let n = u64::from_le_bytes(r.array()?) as usize;
            let section = match tag {
                0 => Section::Bytes(r.take(n)?.to_vec()),
                1 => Section::F32(r.chunks::<4>(n)?.map(f32::from_le_bytes).collect()),
                2 => Section::F64(r.chunks::<8>(n)?.map(f64::from_le_bytes).collect()),
                3 => Section::I32(r.chunks::<4>(n)?.map(i32::from_le_bytes).collect()),
                4 => Section::U64(r.chunks::<8>(n)?.map(u64::from_le_bytes).collect()),
                t => return Err(Error::Format(format!("unknown dtype tag {t}"))),
            };
            sections.push((name, section));
        }
        if r.pos != data.len() {
            return Err(Error::Format("trailing bytes".into()));
        }
        Ok(Self { sections })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let data = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&data)
    }
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.data.len())
            .ok_or_else(|| Error::Format("truncated container".into()))?;
        let s = &self.data[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().unwrap())
    }

    fn chunks<const N: usize>(&mut self, count: usize) -> Result<impl Iterator<Item = [u8; N]> + 'a> {
        let bytes = self.take(
            count
                .checked_mul(N)
                .ok_or_else(|| Error::Format("section too large".into()))?,
        )?;
        Ok(bytes.chunks_exact(N).map(|c| c.try_into().unwrap()))
    }
}
