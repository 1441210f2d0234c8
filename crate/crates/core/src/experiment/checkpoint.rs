//! Binary weight checkpoints.
//!
//! ```text
//! "ECLW" u32 version  u32 task  u32 n  u32 entries
//! per entry:  str label  u32 slots  (str name  u32 rank  u64 dim * rank) * slots
//!             u64 len  f64 * len
//! ```
//! Integers and reals are little-endian; `str` is a `u32` byte length
//! followed by UTF-8.

use std::path::Path;
use std::sync::Arc;

use crate::numkit::{LayerSlot, Layout, ParamVector};
use crate::trainers::Snapshot;
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"ECLW";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// Ensemble size of the run that produced the snapshot.
    pub n: usize,
    pub snapshot: Snapshot,
}

impl Checkpoint {
    pub fn get(&self, label: &str) -> Result<&ParamVector> {
        self.snapshot.get(label).ok_or_else(|| {
            let have: Vec<&str> = self.snapshot.entries.iter().map(|(l, _)| l.as_str()).collect();
            Error::input(format!("no entry {label:?} in checkpoint (has {})", have.join(", ")))
        })
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend((v as u32).to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len());
    out.extend(s.as_bytes());
}

pub fn encode(ck: &Checkpoint) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend(MAGIC);
    out.extend(VERSION.to_le_bytes());
    put_u32(&mut out, ck.snapshot.task);
    put_u32(&mut out, ck.n);
    put_u32(&mut out, ck.snapshot.entries.len());
    for (label, p) in &ck.snapshot.entries {
        put_str(&mut out, label);
        put_u32(&mut out, p.layout().slots().len());
        for slot in p.layout().slots() {
            put_str(&mut out, &slot.name);
            put_u32(&mut out, slot.shape.len());
            for &d in &slot.shape {
                out.extend((d as u64).to_le_bytes());
            }
        }
        out.extend((p.len() as u64).to_le_bytes());
        for v in p.data() {
            out.extend(v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::Format {
            offset: self.pos as u64,
            message: message.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format {
                offset: self.bytes.len() as u64,
                message: format!("truncated checkpoint: needed {n} more bytes at {}", self.pos),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn u64(&mut self) -> Result<usize> {
        let at = self.pos;
        let v = u64::from_le_bytes(self.take(8)?.try_into().unwrap());
        usize::try_from(v).map_err(|_| Error::Format {
            offset: at as u64,
            message: format!("length {v} does not fit in memory"),
        })
    }

    fn str(&mut self) -> Result<String> {
        let n = self.u32()?;
        let at = self.pos;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Format {
            offset: at as u64,
            message: "label is not UTF-8".into(),
        })
    }
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4).ok() != Some(MAGIC.as_slice()) {
        return Err(Error::Format {
            offset: 0,
            message: "not an ECLW checkpoint".into(),
        });
    }
    let version = r.u32()?;
    if version != VERSION as usize {
        return Err(Error::Format {
            offset: 4,
            message: format!("unsupported checkpoint version {version}"),
        });
    }
    let task = r.u32()?;
    let n = r.u32()?;
    let count = r.u32()?;
    let mut layouts: Vec<Arc<Layout>> = Vec::new();
    let mut entries = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let label = r.str()?;
        let nslots = r.u32()?;
        let mut slots = Vec::with_capacity(nslots.min(1024));
        let mut offset = 0;
        for _ in 0..nslots {
            let name = r.str()?;
            let rank = r.u32()?;
            let shape = (0..rank).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
            let slot = LayerSlot { name, offset, shape };
            offset += slot.len();
            slots.push(slot);
        }
        let layout = Layout::new(slots).map_err(|e| r.err(e.to_string()))?;
        let len = r.u64()?;
        if len != layout.len() {
            return Err(r.err(format!("entry {label:?} has {len} values but its layout needs {}", layout.len())));
        }
        let raw = r.take(len.checked_mul(8).ok_or_else(|| r.err("payload too large"))?)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        let layout = match layouts.iter().find(|l| ***l == layout) {
            Some(l) => l.clone(),
            None => {
                let l = Arc::new(layout);
                layouts.push(l.clone());
                l
            }
        };
        entries.push((label, ParamVector::new(layout, data)?));
    }
    if r.pos != bytes.len() {
        return Err(r.err(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(Checkpoint {
        n,
        snapshot: Snapshot { task, entries },
    })
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    std::fs::write(path, encode(ck)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| match e {
        Error::Format { offset, message } => Error::Format {
            offset,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    })
}
