//! Binary checkpoint format.
//!
//! ```text
//! "UAMT" | version: u32 | entry count: u32 |
//!   per entry: name len: u16 | name (UTF-8) | rank: u8 | dims: u32 * rank | values: f64 * prod(dims)
//! ```
//! All integers and reals are little-endian. Values are always stored as
//! 64-bit reals regardless of the in-memory scalar type.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::nnkit::{ParamSet, Scalar};

pub const MAGIC: &[u8; 4] = b"UAMT";
pub const VERSION: u32 = 1;

pub fn encode<S: Scalar>(params: &ParamSet<S>) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(16 + params.num_values() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let count = u32::try_from(params.len()).map_err(|_| Error::Checkpoint("too many entries".into()))?;
    out.extend_from_slice(&count.to_le_bytes());
    for p in params.iter() {
        let name = p.name.as_bytes();
        let len = u16::try_from(name.len())
            .map_err(|_| Error::Checkpoint(format!("entry name `{}` too long", p.name)))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name);
        let rank = u8::try_from(p.shape.len())
            .map_err(|_| Error::Checkpoint(format!("entry `{}` has rank > 255", p.name)))?;
        out.push(rank);
        for &d in &p.shape {
            let d = u32::try_from(d).map_err(|_| Error::Checkpoint(format!("dim {d} exceeds u32")))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in &p.values {
            out.extend_from_slice(&v.as_f64().to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Checkpoint(format!("truncated while reading {what} at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn decode<S: Scalar>(bytes: &[u8]) -> Result<ParamSet<S>> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    if c.take(4, "magic")? != MAGIC {
        return Err(Error::Checkpoint("bad magic bytes".into()));
    }
    let version = c.u32("version")?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported format version {version}")));
    }
    let count = c.u32("entry count")?;
    let mut params = ParamSet::new();
    for _ in 0..count {
        let len = u16::from_le_bytes(c.take(2, "name length")?.try_into().unwrap()) as usize;
        let name = std::str::from_utf8(c.take(len, "name")?)
            .map_err(|e| Error::Checkpoint(format!("entry name is not UTF-8: {e}")))?
            .to_string();
        let rank = c.take(1, "rank")?[0] as usize;
        let shape = (0..rank)
            .map(|_| c.u32("dims").map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let raw = c.take(n * 8, "values")?;
        let values = raw
            .chunks_exact(8)
            .map(|b| S::lit(f64::from_le_bytes(b.try_into().unwrap())))
            .collect();
        params
            .push(name, &shape, values)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
    }
    if c.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - c.pos)));
    }
    Ok(params)
}

pub fn save<S: Scalar>(params: &ParamSet<S>, path: &Path) -> Result<()> {
    let bytes = encode(params)?;
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(&bytes))
        .map_err(|e| Error::io(path, e))
}

pub fn load<S: Scalar>(path: &Path) -> Result<ParamSet<S>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
