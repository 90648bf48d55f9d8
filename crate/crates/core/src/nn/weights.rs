//! `FNW1` weights files: a magic tag followed by named records, each holding a
//! shape and 32-bit float values, all little-endian.

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"FNW1";

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub name: String,
    pub dims: Vec<u32>,
    pub values: Vec<f32>,
}

pub fn encode(records: &[Record]) -> Vec<u8> {
    let mut out = MAGIC.to_vec();
    for r in records {
        out.extend_from_slice(&(r.name.len() as u32).to_le_bytes());
        out.extend_from_slice(r.name.as_bytes());
        out.extend_from_slice(&(r.dims.len() as u32).to_le_bytes());
        for d in &r.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in &r.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Weights(format!("truncated {what} at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<Record>> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::Weights("bad magic (expected FNW1)".into()));
    }
    let mut r = Reader { bytes, pos: 4 };
    let mut records = Vec::new();
    while r.pos < bytes.len() {
        let len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| Error::Weights("record name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32("rank")? as usize;
        if rank > 8 {
            return Err(Error::Weights(format!("{name}: implausible rank {rank}")));
        }
        let dims: Vec<u32> = (0..rank).map(|_| r.u32("dims")).collect::<Result<_>>()?;
        let count = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d as usize));
        let count = count.ok_or_else(|| Error::Weights(format!("{name}: dimension overflow")))?;
        let raw = r.take(count.checked_mul(4).ok_or_else(|| Error::Weights("overflow".into()))?, &name)?;
        let values = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        records.push(Record { name, dims, values });
    }
    Ok(records)
}
