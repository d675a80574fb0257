//! Little-endian binary container for named `f32` tensors.
//!
//! Layout: magic `FMCV`, `u32` format version, `u32` header length, UTF-8
//! JSON header, `u32` tensor count, then per tensor `u32` name length, name
//! bytes, `u32` rank, `u64` dims, `f32` payload. The file ends with a `u64`
//! FNV-1a hash over every payload byte.

use std::io::{Read, Write};

use super::{Scalar, Tensor};
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"FMCV";
pub const CHECKPOINT_VERSION: u32 = 1;

struct Fnv(u64);

impl Fnv {
    fn new() -> Self {
        Fnv(0xcbf2_9ce4_8422_2325)
    }
    fn update(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
}

fn io_err(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Checkpoint("checksum mismatch: file is truncated".into())
    } else {
        Error::Checkpoint(format!("read failed: {e}"))
    }
}

fn w_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())
        .map_err(|e| Error::Checkpoint(format!("write failed: {e}")))
}

/// Writes `header` and the tensors (converted to `f32`).
pub fn write_tensors<T: Scalar>(
    w: &mut impl Write,
    header: &str,
    tensors: &[(&str, &Tensor<T>)],
) -> Result<()> {
    let werr = |e: std::io::Error| Error::Checkpoint(format!("write failed: {e}"));
    w.write_all(&CHECKPOINT_MAGIC).map_err(werr)?;
    w_u32(w, CHECKPOINT_VERSION)?;
    w_u32(w, header.len() as u32)?;
    w.write_all(header.as_bytes()).map_err(werr)?;
    w_u32(w, tensors.len() as u32)?;
    let mut hash = Fnv::new();
    for (name, t) in tensors {
        w_u32(w, name.len() as u32)?;
        w.write_all(name.as_bytes()).map_err(werr)?;
        w_u32(w, t.shape().len() as u32)?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes()).map_err(werr)?;
        }
        let mut bytes = Vec::with_capacity(t.numel() * 4);
        for v in t.data() {
            bytes.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
        hash.update(&bytes);
        w.write_all(&bytes).map_err(werr)?;
    }
    w.write_all(&hash.0.to_le_bytes()).map_err(werr)?;
    Ok(())
}

fn r_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(io_err)?;
    Ok(u32::from_le_bytes(b))
}

fn r_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(io_err)?;
    Ok(u64::from_le_bytes(b))
}

fn r_string(r: &mut impl Read, len: usize) -> Result<String> {
    let mut b = vec![0u8; len];
    r.read_exact(&mut b).map_err(io_err)?;
    String::from_utf8(b).map_err(|_| Error::Checkpoint("name is not UTF-8".into()))
}

/// Reads a container written by [`write_tensors`]; returns the header and
/// the named tensors in file order.
pub fn read_tensors(r: &mut impl Read) -> Result<(String, Vec<(String, Tensor<f32>)>)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io_err)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
    }
    let version = r_u32(r)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {version} (expected {CHECKPOINT_VERSION})"
        )));
    }
    let hlen = r_u32(r)? as usize;
    let header = r_string(r, hlen)?;
    let count = r_u32(r)? as usize;
    let mut hash = Fnv::new();
    let mut out = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let nlen = r_u32(r)? as usize;
        let name = r_string(r, nlen)?;
        let rank = r_u32(r)? as usize;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(r_u64(r)? as usize);
        }
        let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let numel = numel
            .filter(|&n| n <= (1 << 31))
            .ok_or_else(|| Error::Checkpoint(format!("tensor {name} has absurd shape {shape:?}")))?;
        let mut bytes = vec![0u8; numel * 4];
        r.read_exact(&mut bytes).map_err(io_err)?;
        hash.update(&bytes);
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        out.push((name, Tensor::new(shape, data)?));
    }
    let stored = r_u64(r)?;
    if stored != hash.0 {
        return Err(Error::Checkpoint(format!(
            "checksum mismatch: stored {stored:016x}, computed {:016x}",
            hash.0
        )));
    }
    Ok((header, out))
}
