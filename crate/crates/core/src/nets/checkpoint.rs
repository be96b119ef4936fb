//! Binary checkpoint of one network. All integers and floats little-endian.
//!
//! ```text
//! offset  size        field
//! 0       8           magic "APGXNET" followed by format version byte 0x01
//! 8       4  u32      L, number of layers
//! 12      4*(L+1) u32 layer sizes s_0 .. s_L
//! ..      4  u32      D, log_std length (0 for a critic, s_L for a policy)
//! ..      for l in 0..L:
//!           8*s_{l+1}*s_l f64   weights of layer l, row-major (out x in)
//!           8*s_{l+1}     f64   biases of layer l
//! ..      8*D         f64   log_std
//! ```
//! Nothing follows the last field.

use std::fs;
use std::path::Path;

use super::mlp::MlpParams;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: [u8; 8] = *b"APGXNET\x01";

pub fn write_checkpoint(params: &MlpParams) -> Vec<u8> {
    let mut out = Vec::with_capacity(32 + 8 * params.num_params());
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&(params.num_layers() as u32).to_le_bytes());
    for &s in &params.sizes {
        out.extend_from_slice(&(s as u32).to_le_bytes());
    }
    out.extend_from_slice(&(params.log_std.len() as u32).to_le_bytes());
    for block in params.blocks() {
        for x in block {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Checkpoint("truncated file".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<MlpParams> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let magic = r.take(8)?;
    if magic[..7] != CHECKPOINT_MAGIC[..7] {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    if magic[7] != CHECKPOINT_MAGIC[7] {
        return Err(Error::Checkpoint(format!("unsupported version {}", magic[7])));
    }
    let layers = r.u32()?;
    if layers == 0 || layers > 64 {
        return Err(Error::Checkpoint(format!("implausible layer count {layers}")));
    }
    let sizes = (0..=layers).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
    let log_std_len = r.u32()?;
    if sizes.contains(&0) || (log_std_len != 0 && log_std_len != sizes[layers]) {
        return Err(Error::Checkpoint("inconsistent shape header".into()));
    }
    let mut params = MlpParams::zeros(&sizes, log_std_len);
    for block in params.blocks_mut() {
        for x in block.iter_mut() {
            *x = r.f64()?;
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    Ok(params)
}

pub fn save_checkpoint(path: &Path, params: &MlpParams) -> std::io::Result<()> {
    fs::write(path, write_checkpoint(params))
}

pub fn load_checkpoint(path: &Path) -> std::io::Result<Result<MlpParams>> {
    Ok(read_checkpoint(&fs::read(path)?))
}
