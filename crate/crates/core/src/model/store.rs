//! Named parameter container and its on-disk encoding.
//!
//! File layout (all integers little-endian):
//!
//! ```text
//! "BANW" | u32 version (=1) | u32 count
//! count x { u32 name_len | name (UTF-8) | u8 dtype (0 = f32) | u8 rank | rank x u32 dim | payload }
//! u32 CRC32 of every preceding byte
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, FormatError, Result};
use crate::tensor::{Shape, Tensor};

pub const MAGIC: &[u8; 4] = b"BANW";
pub const VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamRole {
    Kernel,
    Bias,
    NormScale,
    NormShift,
}

impl ParamRole {
    pub fn from_name(name: &str) -> Option<Self> {
        if name.ends_with(".norm.scale") {
            Some(ParamRole::NormScale)
        } else if name.ends_with(".norm.shift") {
            Some(ParamRole::NormShift)
        } else if name.ends_with(".kernel") {
            Some(ParamRole::Kernel)
        } else if name.ends_with(".bias") {
            Some(ParamRole::Bias)
        } else {
            None
        }
    }
}

/// One entry of the parameter inventory a configuration demands.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ParamSpec {
    pub name: String,
    pub dims: Vec<usize>,
    pub role: ParamRole,
}

impl ParamSpec {
    pub fn numel(&self) -> usize {
        self.dims.iter().product()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub dims: Vec<usize>,
    pub values: Vec<f32>,
    pub role: ParamRole,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct WeightStore {
    params: BTreeMap<String, Param>,
}

impl WeightStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, dims: Vec<usize>, values: Vec<f32>) -> Result<()> {
        let name = name.into();
        let role = ParamRole::from_name(&name)
            .ok_or_else(|| Error::InvalidArgument(format!("`{name}` has no recognised role suffix")))?;
        if dims.iter().product::<usize>() != values.len() || dims.is_empty() {
            return Err(Error::ParamShape { name, expected: dims, found: vec![values.len()] });
        }
        self.params.insert(name, Param { dims, values, role });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Param> {
        self.params.get(name).ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Param> {
        self.params.get_mut(name).ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn remove(&mut self, name: &str) -> Option<Param> {
        self.params.remove(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalars across all parameters.
    pub fn scalar_count(&self) -> usize {
        self.params.values().map(|p| p.values.len()).sum()
    }

    /// Fetches `name`, checking it has exactly `dims`.
    pub fn expect(&self, name: &str, dims: &[usize]) -> Result<&Param> {
        let p = self.get(name)?;
        if p.dims != dims {
            return Err(Error::ParamShape { name: name.to_string(), expected: dims.to_vec(), found: p.dims.clone() });
        }
        Ok(p)
    }

    pub fn kernel(&self, name: &str, dims: [usize; 4]) -> Result<Tensor> {
        let p = self.expect(name, &dims)?;
        Tensor::from_vec(Shape::new(dims[0], dims[1], dims[2], dims[3]), p.values.clone())
    }

    pub fn vector(&self, name: &str, len: usize) -> Result<&[f32]> {
        Ok(&self.expect(name, &[len])?.values)
    }

    /// Checks the store holds exactly `inventory`: reports the first missing
    /// or mis-shaped entry in inventory order, then any leftover name.
    pub fn validate(&self, inventory: &[ParamSpec]) -> Result<()> {
        for spec in inventory {
            self.expect(&spec.name, &spec.dims)?;
        }
        if self.params.len() != inventory.len() {
            let wanted: std::collections::HashSet<&str> = inventory.iter().map(|s| s.name.as_str()).collect();
            if let Some(extra) = self.names().find(|n| !wanted.contains(n)) {
                return Err(Error::UnexpectedParam(extra.to_string()));
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + self.scalar_count() * 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (name, p) in &self.params {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(DTYPE_F32);
            out.push(p.dims.len() as u8);
            for &d in &p.dims {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in &p.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8], origin: &str) -> Result<Self> {
        let fail = |kind| Error::format(origin, kind);
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4).map_err(fail)?;
        if magic != MAGIC {
            return Err(fail(FormatError::BadMagic(String::from_utf8_lossy(magic).into_owned())));
        }
        let version = r.u32().map_err(fail)?;
        if version != VERSION {
            return Err(fail(FormatError::Version(version)));
        }
        let count = r.u32().map_err(fail)?;
        let mut store = WeightStore::new();
        for _ in 0..count {
            let len = r.u32().map_err(fail)? as usize;
            let name = std::str::from_utf8(r.take(len).map_err(fail)?)
                .map_err(|e| fail(FormatError::Header(format!("parameter name is not UTF-8: {e}"))))?
                .to_string();
            let dtype = r.u8().map_err(fail)?;
            if dtype != DTYPE_F32 {
                return Err(fail(FormatError::Dtype(dtype)));
            }
            let rank = r.u8().map_err(fail)? as usize;
            let dims = (0..rank)
                .map(|_| r.u32().map(|d| d as usize))
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(fail)?;
            let bytes_needed = dims.iter().try_fold(4usize, |acc, &d| acc.checked_mul(d));
            let payload =
                r.take(bytes_needed.ok_or_else(|| fail(FormatError::Header(format!("`{name}` dimensions overflow"))))?);
            let values =
                payload.map_err(fail)?.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            if ParamRole::from_name(&name).is_none() {
                return Err(fail(FormatError::Header(format!("`{name}` has no recognised role suffix"))));
            }
            store.insert(name, dims, values)?;
        }
        let body_len = r.pos;
        let stored = r.u32().map_err(fail)?;
        let computed = crc32fast::hash(&bytes[..body_len]);
        if stored != computed {
            return Err(fail(FormatError::Checksum { stored, computed }));
        }
        if r.pos != bytes.len() {
            return Err(fail(FormatError::TrailingBytes(bytes.len() - r.pos)));
        }
        Ok(store)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, &path.display().to_string())
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], FormatError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(FormatError::Truncated { expected: self.pos.saturating_add(n), found: self.bytes.len() }),
        }
    }

    fn u8(&mut self) -> std::result::Result<u8, FormatError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> std::result::Result<u32, FormatError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}
