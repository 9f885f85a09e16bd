//! Binary checkpoint format.
//!
//! Layout: magic "SAA1", format version (u32 LE), tensor count (u32 LE),
//! then per tensor: name length (u32 LE) + UTF-8 name, rank (u32 LE),
//! dims (u64 LE each), row-major little-endian f64 payload.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::Tensor;
use crate::error::{Result, SaaError};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SAA1";
const VERSION: u32 = 1;

pub fn save_checkpoint(path: &Path, tensors: &[(String, Tensor)]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for (name, t) in tensors {
        let nb = name.as_bytes();
        w.write_all(&(nb.len() as u32).to_le_bytes())?;
        w.write_all(nb)?;
        w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in t.data().iter() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<HashMap<String, (Vec<usize>, Vec<f64>)>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(SaaError::Checkpoint(format!("bad magic {:?}", magic)));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(SaaError::Checkpoint(format!("unsupported version {}", version)));
    }
    let count = read_u32(&mut r)? as usize;
    let mut out = HashMap::with_capacity(count);
    for _ in 0..count {
        let name_len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|e| SaaError::Checkpoint(format!("invalid tensor name: {}", e)))?;
        let rank = read_u32(&mut r)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u64(&mut r)? as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        let mut buf = [0u8; 8];
        for _ in 0..n {
            r.read_exact(&mut buf)?;
            data.push(f64::from_le_bytes(buf));
        }
        out.insert(name, (shape, data));
    }
    Ok(out)
}

/// Load checkpoint values into an existing named-parameter list, validating
/// every shape and requiring every parameter to be present.
pub fn load_into(path: &Path, params: &[(String, Tensor)]) -> Result<()> {
    let map = load_checkpoint(path)?;
    for (name, t) in params {
        let (shape, data) = map
            .get(name)
            .ok_or_else(|| SaaError::Checkpoint(format!("missing tensor {:?}", name)))?;
        if shape != t.shape() {
            return Err(SaaError::Checkpoint(format!(
                "shape mismatch for {:?}: checkpoint {:?}, model {:?}",
                name,
                shape,
                t.shape()
            )));
        }
        t.set_data(|d| d.copy_from_slice(data));
    }
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}
