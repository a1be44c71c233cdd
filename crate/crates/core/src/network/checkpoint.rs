//! Checkpoint files.
//!
//! Layout (little-endian): magic `FRCK`, `u32` version, `u32` descriptor
//! length and the UTF-8 [`NetSpec`] text, `u32` tensor count, then per tensor
//! `u32` rank, `u32` dims and the `f32` values. Tensors follow
//! [`Net::param_groups`] order: conv kernels `[out, in, k, k]` and biases
//! `[out]`, then dense weights `[d_in + 1, d_out]`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Net, NetSpec};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"FRCK";
pub const CHECKPOINT_VERSION: u32 = 1;

fn shapes(net: &Net) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for c in &net.conv {
        out.push(c.kernel_shape().to_vec());
        out.push(vec![c.out_ch]);
    }
    for d in &net.dense {
        out.push(vec![d.weights.rows(), d.weights.cols()]);
    }
    out
}

fn put_u32(w: &mut impl Write, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::InvalidArgument(format!("{v} does not fit in u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

/// Writes `net`; parameters are rounded to `f32`.
pub fn save_checkpoint(net: &Net, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    let desc = net.spec().to_string();
    put_u32(&mut w, desc.len())?;
    w.write_all(desc.as_bytes())?;
    let shapes = shapes(net);
    put_u32(&mut w, shapes.len())?;
    for (shape, values) in shapes.iter().zip(net.param_groups()) {
        put_u32(&mut w, shape.len())?;
        for &d in shape {
            put_u32(&mut w, d)?;
        }
        for &v in values {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let s = self
            .bytes
            .get(self.at..self.at + n)
            .ok_or_else(|| Error::InvalidCheckpoint(format!("truncated at byte {}", self.at)))?;
        self.at += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Net> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    let mut c = Cursor { bytes: &bytes, at: 0 };
    if c.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::InvalidCheckpoint("bad magic".into()));
    }
    let version = c.u32()?;
    if version as u32 != CHECKPOINT_VERSION {
        return Err(Error::InvalidCheckpoint(format!("unsupported version {version}")));
    }
    let len = c.u32()?;
    let desc =
        std::str::from_utf8(c.take(len)?).map_err(|_| Error::InvalidCheckpoint("descriptor is not UTF-8".into()))?;
    let spec: NetSpec = desc.parse()?;
    let mut net = Net::from_spec(&spec).map_err(|e| Error::InvalidCheckpoint(e.to_string()))?;
    let expected = shapes(&net);
    if c.u32()? != expected.len() {
        return Err(Error::InvalidCheckpoint(
            "tensor count does not match the architecture".into(),
        ));
    }
    for (i, (shape, group)) in expected.iter().zip(net.param_groups_mut()).enumerate() {
        let rank = c.u32()?;
        let dims = (0..rank).map(|_| c.u32()).collect::<Result<Vec<_>>>()?;
        if &dims != shape {
            return Err(Error::InvalidCheckpoint(format!(
                "tensor {i} has shape {dims:?}, expected {shape:?}"
            )));
        }
        for v in group.iter_mut() {
            let b = c.take(4)?;
            let x = f32::from_le_bytes([b[0], b[1], b[2], b[3]]);
            if !x.is_finite() {
                return Err(Error::InvalidCheckpoint(format!("tensor {i} holds a non-finite value")));
            }
            *v = f64::from(x);
        }
    }
    if c.at != bytes.len() {
        return Err(Error::InvalidCheckpoint("trailing bytes".into()));
    }
    Ok(net)
}
