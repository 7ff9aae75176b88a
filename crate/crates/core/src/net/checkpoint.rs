//! Binary checkpoint format.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "FALB"
//! 4       4     u32 format version (1)
//! 8       4     u32 dim
//! 12      4     u32 hidden width
//! 16      4     u32 hidden layers
//! 20      4     u32 time frequencies
//! 24      4     u32 label embedding width
//! 28      4     u32 label count L (classes + null)
//! 32      4*L   u32 label ids: class index, or 0xFFFF_FFFF for null
//! ..      8     u64 parameter count P
//! ..      8*P   f64 parameters, little endian
//! ..      32    SHA-256 of every preceding byte
//! ```
//! All integers are little endian.

use std::path::Path;

use sha2::{Digest, Sha256};

use super::{Architecture, VelocityNet};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"FALB";
pub const CHECKPOINT_VERSION: u32 = 1;
const NULL_ID: u32 = u32::MAX;

pub fn encode_checkpoint(net: &VelocityNet) -> Vec<u8> {
    let a = net.arch();
    let mut out = Vec::with_capacity(64 + 8 * net.params().len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    for v in [
        CHECKPOINT_VERSION,
        a.dim as u32,
        a.hidden as u32,
        a.layers as u32,
        a.freqs as u32,
        a.embed as u32,
        a.n_labels() as u32,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for c in 0..a.n_classes {
        out.extend_from_slice(&(c as u32).to_le_bytes());
    }
    out.extend_from_slice(&NULL_ID.to_le_bytes());
    out.extend_from_slice(&(net.params().len() as u64).to_le_bytes());
    for p in net.params() {
        out.extend_from_slice(&p.to_le_bytes());
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.at + n > self.buf.len() {
            return Err(Error::CorruptCheckpoint("truncated file".into()));
        }
        let s = &self.buf[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<VelocityNet> {
    if bytes.len() < 4 + 4 + 32 {
        return Err(Error::CorruptCheckpoint("truncated file".into()));
    }
    if &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::CorruptCheckpoint("bad magic".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    let mut r = Reader { buf: body, at: 4 };
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::CorruptCheckpoint("checksum mismatch".into()));
    }
    let dim = r.u32()? as usize;
    let hidden = r.u32()? as usize;
    let layers = r.u32()? as usize;
    let freqs = r.u32()? as usize;
    let embed = r.u32()? as usize;
    let n_labels = r.u32()? as usize;
    if n_labels < 2 {
        return Err(Error::CorruptCheckpoint("label table too small".into()));
    }
    for c in 0..n_labels - 1 {
        if r.u32()? != c as u32 {
            return Err(Error::CorruptCheckpoint("unexpected label table".into()));
        }
    }
    if r.u32()? != NULL_ID {
        return Err(Error::CorruptCheckpoint("label table lacks the null label".into()));
    }
    let arch = Architecture {
        dim,
        hidden,
        layers,
        freqs,
        embed,
        n_classes: n_labels - 1,
    };
    let count = r.u64()? as usize;
    if count != arch.param_count() {
        return Err(Error::CorruptCheckpoint(format!(
            "parameter count {count} does not match architecture ({})",
            arch.param_count()
        )));
    }
    let params = (0..count)
        .map(|_| Ok(f64::from_le_bytes(r.take(8)?.try_into().unwrap())))
        .collect::<Result<Vec<f64>>>()?;
    if r.at != body.len() {
        return Err(Error::CorruptCheckpoint("trailing bytes".into()));
    }
    VelocityNet::from_params(arch, params)
}

pub fn save_checkpoint(net: &VelocityNet, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode_checkpoint(net))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<VelocityNet> {
    decode_checkpoint(&std::fs::read(path)?)
}
