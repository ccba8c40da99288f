//! Binary parameter checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   8 bytes  "ITAPARAM"
//! version u32      currently 1
//! repeated until end of stream:
//!   name_len u32, name bytes (UTF-8)
//!   rank     u32, extents rank × u64
//!   values   product(extents) × f64, row-major
//! ```

use std::io::{ErrorKind, Read, Write};

use crate::error::AutogradError;
use crate::params::ParamSet;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"ITAPARAM";
pub const VERSION: u32 = 1;

pub fn write_params<W: Write>(mut w: W, params: &ParamSet) -> Result<(), AutogradError> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    for (_, name, t) in params.iter() {
        let bytes = name.as_bytes();
        w.write_all(&(bytes.len() as u32).to_le_bytes())?;
        w.write_all(bytes)?;
        w.write_all(&2u32.to_le_bytes())?;
        w.write_all(&(t.rows() as u64).to_le_bytes())?;
        w.write_all(&(t.cols() as u64).to_le_bytes())?;
        for v in t.as_slice() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, AutogradError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, AutogradError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

/// Reads records until end of stream.
pub fn read_params<R: Read>(mut r: R) -> Result<ParamSet, AutogradError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(AutogradError::Format("bad magic".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(AutogradError::Format(format!("unsupported version {version}")));
    }
    let mut params = ParamSet::new();
    loop {
        let mut len = [0u8; 4];
        match r.read(&mut len[..1])? {
            0 => break,
            _ => r.read_exact(&mut len[1..])?,
        }
        let name_len = u32::from_le_bytes(len) as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name).map_err(truncated)?;
        let name = String::from_utf8(name).map_err(|_| AutogradError::Format("parameter name is not UTF-8".into()))?;
        let rank = read_u32(&mut r).map_err(truncated_err)?;
        let extents = (0..rank).map(|_| read_u64(&mut r).map_err(truncated_err)).collect::<Result<Vec<_>, _>>()?;
        let (rows, cols) = match extents.as_slice() {
            [n] => (1, *n as usize),
            [a, b] => (*a as usize, *b as usize),
            _ => return Err(AutogradError::Format(format!("`{name}`: unsupported rank {rank}"))),
        };
        let mut values = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            let mut b = [0u8; 8];
            r.read_exact(&mut b).map_err(truncated)?;
            values.push(f64::from_le_bytes(b));
        }
        params.insert(name, Tensor::from_vec(rows, cols, values))?;
    }
    Ok(params)
}

fn truncated(e: std::io::Error) -> AutogradError {
    if e.kind() == ErrorKind::UnexpectedEof {
        AutogradError::Format("truncated record".into())
    } else {
        e.into()
    }
}

fn truncated_err(e: AutogradError) -> AutogradError {
    match e {
        AutogradError::Io(io) => truncated(io),
        other => other,
    }
}

/// Reads a checkpoint and checks it against the layout the model expects.
pub fn read_params_matching<R: Read>(r: R, expected: &ParamSet) -> Result<ParamSet, AutogradError> {
    let loaded = read_params(r)?;
    expected.check_layout(&loaded)?;
    Ok(loaded)
}
