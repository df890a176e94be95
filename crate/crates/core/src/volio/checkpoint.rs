//! Binary checkpoint: magic, version, JSON architecture config, named f32
//! tensors, and a trailing CRC32 of everything before it. All integers are
//! little-endian.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use super::{io_err, write_atomic, IoError};
use crate::hed3d::{Hed3DConfig, Hed3DNet};
use crate::nnengine::Parameter;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"HED3DSG1";
pub const CHECKPOINT_VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub fn encode_checkpoint(net: &Hed3DNet) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    put_u32(&mut out, CHECKPOINT_VERSION);
    let config = serde_json::to_vec(net.config()).expect("config serializes");
    put_u32(&mut out, config.len() as u32);
    out.extend_from_slice(&config);
    put_u32(&mut out, net.parameters().len() as u32);
    for p in net.parameters() {
        put_u32(&mut out, p.name.len() as u32);
        out.extend_from_slice(p.name.as_bytes());
        put_u32(&mut out, p.shape.len() as u32);
        for &d in &p.shape {
            put_u32(&mut out, d as u32);
        }
        for &v in &p.value {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    put_u32(&mut out, crc);
    out
}

pub fn save_checkpoint(net: &Hed3DNet, path: &Path) -> Result<(), IoError> {
    write_atomic(path, &encode_checkpoint(net))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], IoError> {
        if self.bytes.len() - self.pos < n {
            return Err(IoError::Malformed(format!("truncated while reading {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32, IoError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Hed3DNet, IoError> {
    if bytes.len() < CHECKPOINT_MAGIC.len() || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(IoError::BadMagic);
    }
    if bytes.len() < 16 {
        return Err(IoError::Malformed("file too short".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(IoError::ChecksumMismatch { stored, computed });
    }
    let mut c = Cursor { bytes: body, pos: 8 };
    let version = c.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(IoError::VersionMismatch {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let n = c.u32("config length")? as usize;
    let config: Hed3DConfig = serde_json::from_slice(c.take(n, "config")?)
        .map_err(|e| IoError::Malformed(format!("config: {e}")))?;
    let count = c.u32("tensor count")? as usize;
    let mut seen = HashSet::new();
    let mut params = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let len = c.u32("tensor name length")? as usize;
        let name = std::str::from_utf8(c.take(len, "tensor name")?)
            .map_err(|_| IoError::Malformed("tensor name is not UTF-8".into()))?
            .to_string();
        if !seen.insert(name.clone()) {
            return Err(IoError::DuplicateTensor(name));
        }
        let rank = c.u32("tensor rank")? as usize;
        if rank > 8 {
            return Err(IoError::Malformed(format!("tensor {name} has rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(c.u32("tensor dims")? as usize);
        }
        let len = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| IoError::Malformed(format!("tensor {name} is too large")))?;
        let data = c.take(len, &name)?;
        let value = data
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        params.push(Parameter::new(name, shape, value));
    }
    if c.pos != body.len() {
        return Err(IoError::Malformed(format!("{} trailing bytes", body.len() - c.pos)));
    }
    Ok(Hed3DNet::from_parameters(config, params)?)
}

pub fn load_checkpoint(path: &Path) -> Result<Hed3DNet, IoError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    decode_checkpoint(&bytes)
}
