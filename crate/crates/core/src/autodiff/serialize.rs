//! Binary weight files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! b"PNAV" | version: u32
//! repeated until EOF:
//!   name_len: u32 | name: UTF-8 bytes | rank: u32 | extents: u64 × rank
//!   payload: f64 × product(extents), row-major
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::array::Array;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"PNAV";
pub const VERSION: u32 = 1;

/// A named parameter tensor.
pub type NamedArray = (String, Array);

pub fn write_weights<W: Write>(mut w: W, params: &[NamedArray]) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    for (name, arr) in params {
        let bytes = name.as_bytes();
        w.write_all(&(bytes.len() as u32).to_le_bytes())?;
        w.write_all(bytes)?;
        w.write_all(&(arr.rank() as u32).to_le_bytes())?;
        for &e in arr.shape() {
            w.write_all(&(e as u64).to_le_bytes())?;
        }
        for v in arr.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()
}

pub fn encode_weights(params: &[NamedArray]) -> Vec<u8> {
    let mut buf = Vec::new();
    write_weights(&mut buf, params).expect("writing to a Vec cannot fail");
    buf
}

pub fn decode_weights(bytes: &[u8]) -> Result<Vec<NamedArray>> {
    let mut r = bytes;
    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic, "magic")?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}")));
    }
    let version = read_u32(&mut r, "version")?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let mut out = Vec::new();
    while !r.is_empty() {
        let len = read_u32(&mut r, "name length")? as usize;
        if len > r.len() {
            return Err(Error::Format("truncated name".into()));
        }
        let (name, rest) = r.split_at(len);
        let name = std::str::from_utf8(name)
            .map_err(|e| Error::Format(format!("name is not UTF-8: {e}")))?
            .to_string();
        r = rest;
        let rank = read_u32(&mut r, "rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u64(&mut r, "extent")? as usize);
        }
        let n: usize = shape.iter().product();
        if n.checked_mul(8).is_none_or(|b| b > r.len()) {
            return Err(Error::Format(format!("truncated payload for {name}")));
        }
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            let mut b = [0u8; 8];
            read_exact(&mut r, &mut b, "payload")?;
            data.push(f64::from_le_bytes(b));
        }
        out.push((name, Array::new(shape, data)?));
    }
    Ok(out)
}

pub fn save_weights(path: &Path, params: &[NamedArray]) -> Result<()> {
    std::fs::write(path, encode_weights(params)).map_err(|e| Error::io(path, e))
}

pub fn load_weights(path: &Path) -> Result<Vec<NamedArray>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_weights(&bytes)
}

fn read_exact(r: &mut &[u8], buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::Format(format!("truncated {what}")))
}

fn read_u32(r: &mut &[u8], what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut &[u8], what: &str) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b, what)?;
    Ok(u64::from_le_bytes(b))
}
