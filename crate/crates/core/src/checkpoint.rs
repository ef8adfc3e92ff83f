//! Binary checkpoint format.
//!
//! ```text
//! magic "LFCK" | version u32 | count u32 |
//!   count × ( name_len u16 | name utf-8 | rank u8 | dims u32 × rank | f32 × numel )
//! ```
//! All integers and floats are little-endian. Entries are written sorted by
//! name so the bytes depend only on the set of tensors, not on the order a
//! model was assembled in.

use std::path::Path;

use crate::error::{Error, Result};
use crate::param::ParamStore;

pub const MAGIC: &[u8; 4] = b"LFCK";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

pub fn encode(entries: &[NamedTensor]) -> Result<Vec<u8>> {
    let mut sorted: Vec<&NamedTensor> = entries.iter().collect();
    sorted.sort_by(|a, b| a.name.cmp(&b.name));
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&u32::try_from(sorted.len()).map_err(|_| too_big("entry count"))?.to_le_bytes());
    for e in sorted {
        let name = e.name.as_bytes();
        out.extend_from_slice(&u16::try_from(name.len()).map_err(|_| too_big("name"))?.to_le_bytes());
        out.extend_from_slice(name);
        out.push(u8::try_from(e.dims.len()).map_err(|_| too_big("rank"))?);
        for &d in &e.dims {
            out.extend_from_slice(&u32::try_from(d).map_err(|_| too_big("dimension"))?.to_le_bytes());
        }
        if e.dims.iter().product::<usize>() != e.data.len() {
            return Err(Error::Checkpoint(format!(
                "{}: dims {:?} do not match {} values",
                e.name,
                e.dims,
                e.data.len()
            )));
        }
        for v in &e.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

fn too_big(what: &str) -> Error {
    Error::Checkpoint(format!("{what} too large for the checkpoint format"))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<NamedTensor>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic, not an LFCK file".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let count = r.u32()? as usize;
    let mut entries = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|e| Error::Checkpoint(format!("entry name is not UTF-8: {e}")))?
            .to_string();
        let rank = r.u8()? as usize;
        let dims = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let numel: usize = dims.iter().product();
        let raw = r.take(numel.checked_mul(4).ok_or_else(|| too_big("payload"))?)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        entries.push(NamedTensor { name, dims, data });
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes after last entry",
            bytes.len() - r.pos
        )));
    }
    Ok(entries)
}

impl ParamStore {
    /// Every parameter and buffer as a named tensor.
    pub fn to_named_tensors(&self) -> Vec<NamedTensor> {
        let mut out: Vec<NamedTensor> = self
            .params()
            .map(|p| NamedTensor {
                name: p.name().to_string(),
                dims: p.shape().to_vec(),
                data: p.value().to_vec(),
            })
            .collect();
        out.extend(self.buffers().map(|b| NamedTensor {
            name: b.name().to_string(),
            dims: b.shape().to_vec(),
            data: b.lock().clone(),
        }));
        out
    }

    /// Overwrites every parameter and buffer from `entries`. The name sets
    /// must match exactly and each shape must agree.
    pub fn load_named_tensors(&mut self, entries: &[NamedTensor]) -> Result<()> {
        let expected = self.params().count() + self.buffers().count();
        for e in entries {
            if let Some(p) = self.get(&e.name) {
                if p.shape() != e.dims.as_slice() {
                    return Err(Error::Checkpoint(format!(
                        "{}: model expects shape {:?}, checkpoint has {:?}",
                        e.name,
                        p.shape(),
                        e.dims
                    )));
                }
            } else if let Some(b) = self.get_buffer(&e.name) {
                if b.shape() != e.dims.as_slice() {
                    return Err(Error::Checkpoint(format!(
                        "{}: model expects shape {:?}, checkpoint has {:?}",
                        e.name,
                        b.shape(),
                        e.dims
                    )));
                }
            } else {
                return Err(Error::Checkpoint(format!("unexpected tensor {:?} in checkpoint", e.name)));
            }
        }
        if entries.len() != expected {
            let present: std::collections::HashSet<&str> = entries.iter().map(|e| e.name.as_str()).collect();
            let missing: Vec<String> = self
                .params()
                .map(|p| p.name().to_string())
                .chain(self.buffers().map(|b| b.name().to_string()))
                .filter(|n| !present.contains(n.as_str()))
                .take(5)
                .collect();
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} tensors, model has {expected}; missing e.g. {missing:?}",
                entries.len()
            )));
        }
        for e in entries {
            if let Some(p) = self.get_mut(&e.name) {
                p.set_value(e.data.clone())?;
            } else if let Some(b) = self.get_buffer(&e.name) {
                *b.lock() = e.data.clone();
            }
        }
        Ok(())
    }

    pub fn checkpoint_bytes(&self) -> Result<Vec<u8>> {
        encode(&self.to_named_tensors())
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, self.checkpoint_bytes()?)?;
        Ok(())
    }

    pub fn load_checkpoint(&mut self, path: &Path) -> Result<()> {
        let bytes = std::fs::read(path)
            .map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
        self.load_named_tensors(&decode(&bytes)?)
    }
}
