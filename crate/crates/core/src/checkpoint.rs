//! Flat named-tensor container used for model and optimizer checkpoints.
//!
//! Layout (little-endian throughout):
//!
//! ```text
//! magic   "SSMC"            4 bytes
//! version u16 = 1
//! count   u32               number of entries
//! entry × count:
//!   name_len u16, name      UTF-8 bytes
//!   dtype    u8             0 = f32, 1 = f64, 2 = u64
//!   ndim     u8
//!   dims     u32 × ndim
//!   values   product(dims) × sizeof(dtype)
//! ```
//!
//! Entries keep insertion order, so writing the same state twice yields
//! byte-identical files.

use std::fs;
use std::path::Path;

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::tensor::{ParamStore, Tensor};

const MAGIC: &[u8; 4] = b"SSMC";
const VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq)]
pub enum Values {
    F32(Vec<f32>),
    F64(Vec<f64>),
    U64(Vec<u64>),
}

impl Values {
    fn dtype(&self) -> u8 {
        match self {
            Values::F32(_) => 0,
            Values::F64(_) => 1,
            Values::U64(_) => 2,
        }
    }

    fn len(&self) -> usize {
        match self {
            Values::F32(v) => v.len(),
            Values::F64(v) => v.len(),
            Values::U64(v) => v.len(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub shape: Vec<usize>,
    pub values: Values,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    entries: IndexMap<String, Entry>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn entry(&self, name: &str) -> Option<&Entry> {
        self.entries.get(name)
    }

    pub fn put(&mut self, name: impl Into<String>, entry: Entry) -> Result<()> {
        let numel: usize = entry.shape.iter().product();
        if numel != entry.values.len() || entry.shape.len() > u8::MAX as usize {
            return Err(Error::Dimension(format!(
                "entry shape {:?} does not match {} values",
                entry.shape,
                entry.values.len()
            )));
        }
        self.entries.insert(name.into(), entry);
        Ok(())
    }

    pub fn put_tensor(&mut self, name: impl Into<String>, t: &Tensor) {
        let entry = Entry {
            shape: t.shape().to_vec(),
            values: Values::F64(t.data().to_vec()),
        };
        self.entries.insert(name.into(), entry);
    }

    pub fn put_u64s(&mut self, name: impl Into<String>, v: &[u64]) {
        let entry = Entry {
            shape: vec![v.len()],
            values: Values::U64(v.to_vec()),
        };
        self.entries.insert(name.into(), entry);
    }

    pub fn put_f64s(&mut self, name: impl Into<String>, v: &[f64]) {
        let entry = Entry {
            shape: vec![v.len()],
            values: Values::F64(v.to_vec()),
        };
        self.entries.insert(name.into(), entry);
    }

    /// Stores every parameter under `prefix` + its name.
    pub fn put_params(&mut self, prefix: &str, params: &ParamStore) {
        for (name, t) in params.iter() {
            self.put_tensor(format!("{prefix}{name}"), t);
        }
    }

    /// Reads a floating-point entry as a double-precision tensor.
    pub fn tensor(&self, name: &str) -> Result<Tensor> {
        let e = self.require(name)?;
        let data = match &e.values {
            Values::F64(v) => v.clone(),
            Values::F32(v) => v.iter().map(|&x| x as f64).collect(),
            Values::U64(_) => return Err(Error::Format(format!("{name} is not a float entry"))),
        };
        Tensor::new(e.shape.clone(), data)
    }

    pub fn f64s(&self, name: &str) -> Result<Vec<f64>> {
        match &self.require(name)?.values {
            Values::F64(v) => Ok(v.clone()),
            Values::F32(v) => Ok(v.iter().map(|&x| x as f64).collect()),
            Values::U64(_) => Err(Error::Format(format!("{name} is not a float entry"))),
        }
    }

    pub fn u64s(&self, name: &str) -> Result<Vec<u64>> {
        match &self.require(name)?.values {
            Values::U64(v) => Ok(v.clone()),
            _ => Err(Error::Format(format!("{name} is not an integer entry"))),
        }
    }

    pub fn u64(&self, name: &str) -> Result<u64> {
        self.u64s(name)?
            .first()
            .copied()
            .ok_or_else(|| Error::Format(format!("{name} is empty")))
    }

    /// Rebuilds a store with the same names and shapes as `like`, reading
    /// values from `prefix` + name.
    pub fn params_like(&self, prefix: &str, like: &ParamStore) -> Result<ParamStore> {
        let mut out = ParamStore::new();
        for (name, t) in like.iter() {
            let loaded = self.tensor(&format!("{prefix}{name}"))?;
            if loaded.shape() != t.shape() {
                return Err(Error::Format(format!(
                    "{prefix}{name}: stored shape {:?}, expected {:?}",
                    loaded.shape(),
                    t.shape()
                )));
            }
            out.insert(name, loaded);
        }
        Ok(out)
    }

    fn require(&self, name: &str) -> Result<&Entry> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::Format(format!("checkpoint has no entry {name}")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, e) in &self.entries {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(e.values.dtype());
            out.push(e.shape.len() as u8);
            for &d in &e.shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            match &e.values {
                Values::F32(v) => v
                    .iter()
                    .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                Values::F64(v) => v
                    .iter()
                    .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                Values::U64(v) => v
                    .iter()
                    .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("bad checkpoint magic".into()));
        }
        let version = r.u16()?;
        if version != VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let count = r.u32()? as usize;
        let mut ck = Checkpoint::new();
        for _ in 0..count {
            let name_len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::Format("entry name is not UTF-8".into()))?
                .to_string();
            let dtype = r.u8()?;
            let ndim = r.u8()? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.u32()? as usize);
            }
            let numel = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| Error::Format(format!("{name}: extent overflow")))?;
            let values = match dtype {
                0 => Values::F32(
                    r.chunks(numel, 4)?
                        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                ),
                1 => Values::F64(
                    r.chunks(numel, 8)?
                        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                ),
                2 => Values::U64(
                    r.chunks(numel, 8)?
                        .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                ),
                d => return Err(Error::Format(format!("{name}: unknown dtype {d}"))),
            };
            ck.entries.insert(name, Entry { shape, values });
        }
        if r.pos != bytes.len() {
            return Err(Error::Format("trailing bytes after last entry".into()));
        }
        Ok(ck)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

/// Bounds-checked little-endian cursor shared by the binary readers.
pub(crate) struct Reader<'a> {
    pub(crate) buf: &'a [u8],
    pub(crate) pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format(format!("truncated input at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub(crate) fn chunks(
        &mut self,
        count: usize,
        width: usize,
    ) -> Result<std::slice::ChunksExact<'a, u8>> {
        let n = count
            .checked_mul(width)
            .ok_or_else(|| Error::Format("extent overflow".into()))?;
        Ok(self.take(n)?.chunks_exact(width))
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}
