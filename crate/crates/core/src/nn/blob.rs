//! Weight blob encoding: a little-endian container for parameter tensor
//! lists. Layout: magic `CDWB`, version u16, dtype byte width u8, tensor
//! count u32, then per tensor `ndim u8, dims u32 x ndim, values`.

use std::io::{Read, Write};

use ndarray::{ArrayD, IxDyn};

use super::NnError;
use crate::scalar::Scalar;

const MAGIC: &[u8; 4] = b"CDWB";
const VERSION: u16 = 1;

pub fn write_weight_blob<F: Scalar, W: Write>(
    params: &[ArrayD<F>],
    mut w: W,
) -> Result<(), NnError> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&[F::DTYPE_BYTES])?;
    w.write_all(&(params.len() as u32).to_le_bytes())?;
    for p in params {
        let shape = p.shape();
        if shape.len() > u8::MAX as usize {
            return Err(NnError::Blob("tensor rank too large".into()));
        }
        w.write_all(&[shape.len() as u8])?;
        for &d in shape {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        match F::DTYPE_BYTES {
            4 => {
                for &v in p.iter() {
                    w.write_all(&(v.as_f64() as f32).to_le_bytes())?;
                }
            }
            8 => {
                for &v in p.iter() {
                    w.write_all(&v.as_f64().to_le_bytes())?;
                }
            }
            other => return Err(NnError::Blob(format!("unsupported dtype width {other}"))),
        }
    }
    Ok(())
}

/// Read a weight blob. Widening (f32 blob into f64 parameters) is allowed;
/// narrowing is refused.
pub fn read_weight_blob<F: Scalar, R: Read>(mut r: R) -> Result<Vec<ArrayD<F>>, NnError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(NnError::Blob(format!("bad magic {magic:?}")));
    }
    let mut u16buf = [0u8; 2];
    r.read_exact(&mut u16buf)?;
    let version = u16::from_le_bytes(u16buf);
    if version != VERSION {
        return Err(NnError::Blob(format!("unsupported version {version}")));
    }
    let mut dtype = [0u8; 1];
    r.read_exact(&mut dtype)?;
    let dtype = dtype[0];
    if dtype > F::DTYPE_BYTES {
        return Err(NnError::Blob(format!(
            "blob stores {dtype}-byte values, cannot narrow to {}-byte parameters",
            F::DTYPE_BYTES
        )));
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf)?;
    let count = u32::from_le_bytes(u32buf) as usize;

    let mut params = Vec::with_capacity(count);
    for _ in 0..count {
        let mut ndim = [0u8; 1];
        r.read_exact(&mut ndim)?;
        let mut shape = Vec::with_capacity(ndim[0] as usize);
        for _ in 0..ndim[0] {
            r.read_exact(&mut u32buf)?;
            shape.push(u32::from_le_bytes(u32buf) as usize);
        }
        let len: usize = shape.iter().product();
        let mut values = Vec::with_capacity(len);
        match dtype {
            4 => {
                let mut raw = vec![0u8; len * 4];
                r.read_exact(&mut raw)?;
                for chunk in raw.chunks_exact(4) {
                    values.push(F::cast(
                        f32::from_le_bytes(chunk.try_into().expect("4 bytes")) as f64,
                    ));
                }
            }
            8 => {
                let mut raw = vec![0u8; len * 8];
                r.read_exact(&mut raw)?;
                for chunk in raw.chunks_exact(8) {
                    values.push(F::cast(f64::from_le_bytes(
                        chunk.try_into().expect("8 bytes"),
                    )));
                }
            }
            other => return Err(NnError::Blob(format!("unsupported dtype width {other}"))),
        }
        params.push(
            ArrayD::from_shape_vec(IxDyn(&shape), values)
                .map_err(|e| NnError::Blob(e.to_string()))?,
        );
    }
    Ok(params)
}
