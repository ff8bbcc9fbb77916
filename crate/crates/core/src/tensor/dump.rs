//! Binary tensor dump: `"FPT1"`, dtype code (u8), rank (u8), rank × u32 LE
//! extents, then the raw little-endian values.

use std::io::{Read, Write};

use super::{DType, Scalar, Tensor};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"FPT1";

/// A tensor read back from a dump, tagged with its element type.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl AnyTensor {
    pub fn dtype(&self) -> DType {
        match self {
            AnyTensor::F32(_) => DType::F32,
            AnyTensor::F64(_) => DType::F64,
        }
    }

    pub fn dims(&self) -> &[usize] {
        match self {
            AnyTensor::F32(t) => t.dims(),
            AnyTensor::F64(t) => t.dims(),
        }
    }

    pub fn to_f64(&self) -> Tensor<f64> {
        match self {
            AnyTensor::F32(t) => t.cast(),
            AnyTensor::F64(t) => t.clone(),
        }
    }
}

pub fn write_tensor<T: Scalar, W: Write>(out: &mut W, t: &Tensor<T>) -> Result<()> {
    let rank = u8::try_from(t.rank()).map_err(|_| Error::dim("rank exceeds 255"))?;
    let mut buf = Vec::with_capacity(6 + 4 * t.rank() + T::BYTES * t.len());
    buf.extend_from_slice(MAGIC);
    buf.push(T::DTYPE.code());
    buf.push(rank);
    for &d in t.dims() {
        let d = u32::try_from(d).map_err(|_| Error::dim("extent exceeds u32"))?;
        buf.extend_from_slice(&d.to_le_bytes());
    }
    for &v in t.data() {
        v.write_le(&mut buf);
    }
    out.write_all(&buf)?;
    Ok(())
}

/// Reads one tensor. Returns `Ok(None)` on a clean end of stream so
/// several dumps can be concatenated in one file.
pub fn read_tensor<R: Read>(input: &mut R) -> Result<Option<AnyTensor>> {
    let mut magic = [0u8; 4];
    match input.read_exact(&mut magic) {
        Ok(()) => {}
        Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    if &magic != MAGIC {
        return Err(Error::Io(format!("bad magic {magic:?}")));
    }
    let mut head = [0u8; 2];
    input.read_exact(&mut head)?;
    let dtype = DType::from_code(head[0])
        .ok_or_else(|| Error::Io(format!("unknown dtype code {}", head[0])))?;
    let mut dims = Vec::with_capacity(head[1] as usize);
    for _ in 0..head[1] {
        let mut d = [0u8; 4];
        input.read_exact(&mut d)?;
        dims.push(u32::from_le_bytes(d) as usize);
    }
    match dtype {
        DType::F32 => Ok(Some(AnyTensor::F32(read_values(input, dims)?))),
        DType::F64 => Ok(Some(AnyTensor::F64(read_values(input, dims)?))),
    }
}

fn read_values<T: Scalar, R: Read>(input: &mut R, dims: Vec<usize>) -> Result<Tensor<T>> {
    let n: usize = dims.iter().product();
    let mut raw = vec![0u8; n * T::BYTES];
    input.read_exact(&mut raw)?;
    let data = raw.chunks_exact(T::BYTES).map(T::read_le).collect();
    Tensor::new(dims, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout_is_exact() {
        let t = Tensor::<f32>::new(vec![1, 2], vec![1.0, -2.0]).unwrap();
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        let mut want = b"FPT1".to_vec();
        want.extend_from_slice(&[0, 2, 1, 0, 0, 0, 2, 0, 0, 0]);
        want.extend_from_slice(&1.0f32.to_le_bytes());
        want.extend_from_slice(&(-2.0f32).to_le_bytes());
        assert_eq!(buf, want);
    }

    #[test]
    fn concatenated_dumps_read_back() {
        let a = Tensor::<f64>::new(vec![3], vec![0.5, 1.5, -7.25]).unwrap();
        let b = Tensor::<f32>::new(vec![2, 1], vec![3.0, 4.0]).unwrap();
        let mut buf = Vec::new();
        write_tensor(&mut buf, &a).unwrap();
        write_tensor(&mut buf, &b).unwrap();
        let mut r = &buf[..];
        assert_eq!(read_tensor(&mut r).unwrap(), Some(AnyTensor::F64(a)));
        assert_eq!(read_tensor(&mut r).unwrap(), Some(AnyTensor::F32(b)));
        assert_eq!(read_tensor(&mut r).unwrap(), None);
    }

    #[test]
    fn rejects_bad_magic() {
        let mut r = &b"NOPE\x00\x00"[..];
        assert!(read_tensor(&mut r).is_err());
    }
}
