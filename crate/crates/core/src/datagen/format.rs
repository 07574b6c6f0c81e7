//! Little-endian binary containers.
//!
//! Dataset layout: magic `QPDE0001`, u32 version, u32 trajectory count,
//! u32 rank, `rank` u32 extents of one trajectory, u8 dtype (0 = f32,
//! 1 = f64), the row-major payload of all trajectories, then a u32
//! length-prefixed UTF-8 block of `key=value` lines.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::Dataset;
use crate::error::{Error, Result};

pub const DATASET_MAGIC: &[u8; 8] = b"QPDE0001";
pub const FORMAT_VERSION: u32 = 1;
pub const DTYPE_F32: u8 = 0;
pub const DTYPE_F64: u8 = 1;

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Reader<'a> {
        Reader { buf, pos: 0 }
    }

    pub(crate) fn offset(&self) -> u64 {
        self.pos as u64
    }

    pub(crate) fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::format(
                self.pos as u64,
                format!("truncated {what}: need {n} bytes, {} left", self.buf.len() - self.pos),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn magic(&mut self, magic: &[u8; 8]) -> Result<()> {
        let got = self.take(8, "magic")?;
        if got != magic {
            return Err(Error::format(0, format!("bad magic {:?}, expected {:?}", String::from_utf8_lossy(got), String::from_utf8_lossy(magic))));
        }
        Ok(())
    }

    pub(crate) fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    pub(crate) fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub(crate) fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::format(self.pos as u64, "size overflow"))?, what)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }

    pub(crate) fn text(&mut self, what: &str) -> Result<String> {
        let len = self.u32(what)? as usize;
        let at = self.pos as u64;
        let bytes = self.take(len, what)?;
        String::from_utf8(bytes.to_vec()).map_err(|e| Error::format(at + e.utf8_error().valid_up_to() as u64, format!("{what} is not UTF-8")))
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::format(self.pos as u64, format!("{} trailing bytes", self.buf.len() - self.pos)));
        }
        Ok(())
    }
}

pub(crate) fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn put_text(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

pub(crate) fn encode_map(meta: &BTreeMap<String, String>) -> Result<String> {
    let mut s = String::new();
    for (k, v) in meta {
        if k.contains(['=', '\n']) || v.contains('\n') {
            return Err(Error::Usage(format!("metadata entry {k:?} cannot be stored as a key=value line")));
        }
        s.push_str(k);
        s.push('=');
        s.push_str(v);
        s.push('\n');
    }
    Ok(s)
}

pub(crate) fn decode_map(text: &str, offset: u64) -> Result<BTreeMap<String, String>> {
    text.lines()
        .filter(|l| !l.is_empty())
        .map(|l| {
            l.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| Error::format(offset, format!("metadata line {l:?} has no '='")))
        })
        .collect()
}

pub fn dataset_to_bytes(ds: &Dataset) -> Result<Vec<u8>> {
    let per: usize = ds.shape.iter().product();
    if let Some((i, _)) = ds.trajectories.iter().enumerate().find(|(_, t)| t.len() != per) {
        return Err(Error::Usage(format!("trajectory {i} does not match the shape {:?}", ds.shape)));
    }
    let mut out = Vec::with_capacity(32 + ds.trajectories.len() * per * 4);
    out.extend_from_slice(DATASET_MAGIC);
    put_u32(&mut out, FORMAT_VERSION);
    put_u32(&mut out, ds.trajectories.len() as u32);
    put_u32(&mut out, ds.shape.len() as u32);
    for &e in &ds.shape {
        put_u32(&mut out, e as u32);
    }
    out.push(DTYPE_F32);
    for t in &ds.trajectories {
        for &v in t {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    put_text(&mut out, &encode_map(&ds.meta)?);
    Ok(out)
}

pub fn dataset_from_bytes(buf: &[u8]) -> Result<Dataset> {
    let mut r = Reader::new(buf);
    r.magic(DATASET_MAGIC)?;
    let at = r.offset();
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::format(at, format!("unsupported version {version}")));
    }
    let count = r.u32("trajectory count")? as usize;
    let at = r.offset();
    let rank = r.u32("rank")? as usize;
    if rank == 0 || rank > 8 {
        return Err(Error::format(at, format!("implausible rank {rank}")));
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        let at = r.offset();
        let e = r.u32("extent")? as usize;
        if e == 0 {
            return Err(Error::format(at, "zero extent"));
        }
        shape.push(e);
    }
    let at = r.offset();
    let width = match r.u8("dtype")? {
        DTYPE_F32 => 4,
        DTYPE_F64 => 8,
        t => return Err(Error::format(at, format!("unknown dtype tag {t}"))),
    };
    let per: usize = shape.iter().product();
    let payload_at = r.offset();
    let need = count.checked_mul(per).and_then(|n| n.checked_mul(width));
    match need {
        Some(n) if n <= buf.len() - payload_at as usize => {}
        _ => {
            return Err(Error::format(
                payload_at,
                format!(
                    "header declares {count} x {shape:?} values of {width} bytes but only {} payload bytes remain",
                    buf.len() - payload_at as usize
                ),
            ))
        }
    }
    let mut trajectories = Vec::with_capacity(count);
    for _ in 0..count {
        let bytes = r.take(per * width, "payload")?;
        trajectories.push(if width == 4 {
            bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect()
        } else {
            bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect()
        });
    }
    let at = r.offset();
    let meta = decode_map(&r.text("metadata")?, at)?;
    r.finish()?;
    Ok(Dataset { shape, trajectories, meta })
}

pub fn write_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    let bytes = dataset_to_bytes(ds)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    dataset_from_bytes(&bytes)
}
