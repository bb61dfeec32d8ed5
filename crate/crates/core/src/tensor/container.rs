//! `NOPT` binary tensor container.
//!
//! Layout: magic `NOPT`, `u8` version (1), `u8` dtype (0 = f64, 1 = c128),
//! `u8` rank, `rank` little-endian `u64` extents, then the row-major
//! little-endian payload (complex values as interleaved re/im pairs).

use std::fs;
use std::path::Path;

use num_complex::Complex64;

use super::{ComplexTensor, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"NOPT";
pub const VERSION: u8 = 1;
const DTYPE_REAL: u8 = 0;
const DTYPE_COMPLEX: u8 = 1;

/// Either payload kind read back from a container.
#[derive(Clone, Debug, PartialEq)]
pub enum AnyTensor {
    Real(Tensor),
    Complex(ComplexTensor),
}

fn header(dtype: u8, shape: &[usize], payload_len: usize) -> Result<Vec<u8>> {
    let ndim = u8::try_from(shape.len())
        .map_err(|_| Error::Data(format!("rank {} exceeds 255", shape.len())))?;
    let mut out = Vec::with_capacity(7 + 8 * shape.len() + payload_len);
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(dtype);
    out.push(ndim);
    for &e in shape {
        out.extend_from_slice(&(e as u64).to_le_bytes());
    }
    Ok(out)
}

fn push_f64s(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_real(t: &Tensor) -> Result<Vec<u8>> {
    let mut out = header(DTYPE_REAL, t.shape(), 8 * t.len())?;
    push_f64s(&mut out, t.data());
    Ok(out)
}

pub fn encode_complex(t: &ComplexTensor) -> Result<Vec<u8>> {
    let mut out = header(DTYPE_COMPLEX, t.shape(), 16 * t.len())?;
    push_f64s(&mut out, t.as_f64());
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<AnyTensor> {
    let bad = |msg: &str| Error::Data(format!("tensor container: {msg}"));
    if bytes.len() < 7 || &bytes[..4] != MAGIC {
        return Err(bad("bad magic"));
    }
    if bytes[4] != VERSION {
        return Err(bad(&format!("unsupported version {}", bytes[4])));
    }
    let dtype = bytes[5];
    let ndim = bytes[6] as usize;
    let mut pos = 7;
    let mut shape = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        let chunk = bytes
            .get(pos..pos + 8)
            .ok_or_else(|| bad("truncated header"))?;
        let e = u64::from_le_bytes(chunk.try_into().expect("8 bytes"));
        shape.push(usize::try_from(e).map_err(|_| bad("extent overflows usize"))?);
        pos += 8;
    }
    let count = shape
        .iter()
        .try_fold(1usize, |acc, &e| acc.checked_mul(e))
        .ok_or_else(|| bad("element count overflows"))?;
    let scalars = match dtype {
        DTYPE_REAL => count,
        DTYPE_COMPLEX => count.checked_mul(2).ok_or_else(|| bad("size overflow"))?,
        other => return Err(bad(&format!("unknown dtype code {other}"))),
    };
    let payload = &bytes[pos..];
    if payload.len() != scalars * 8 {
        return Err(bad(&format!(
            "payload holds {} bytes, shape {shape:?} needs {}",
            payload.len(),
            scalars * 8
        )));
    }
    let values: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    if dtype == DTYPE_REAL {
        Ok(AnyTensor::Real(Tensor::new(shape, values)?))
    } else {
        let data = values
            .chunks_exact(2)
            .map(|p| Complex64::new(p[0], p[1]))
            .collect();
        Ok(AnyTensor::Complex(ComplexTensor::new(shape, data)?))
    }
}

pub fn save_real(path: &Path, t: &Tensor) -> Result<()> {
    fs::write(path, encode_real(t)?).map_err(|e| Error::io(path, e))
}

pub fn save_complex(path: &Path, t: &ComplexTensor) -> Result<()> {
    fs::write(path, encode_complex(t)?).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<AnyTensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

pub fn load_real(path: &Path) -> Result<Tensor> {
    match load(path)? {
        AnyTensor::Real(t) => Ok(t),
        AnyTensor::Complex(_) => Err(Error::Data(format!(
            "{}: expected a real tensor, found complex",
            path.display()
        ))),
    }
}

pub fn load_complex(path: &Path) -> Result<ComplexTensor> {
    match load(path)? {
        AnyTensor::Complex(t) => Ok(t),
        AnyTensor::Real(_) => Err(Error::Data(format!(
            "{}: expected a complex tensor, found real",
            path.display()
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout_is_fixed() {
        let t = Tensor::new(vec![1, 2], vec![1.0, -2.0]).unwrap();
        let bytes = encode_real(&t).unwrap();
        assert_eq!(&bytes[..7], b"NOPT\x01\x00\x02");
        assert_eq!(&bytes[7..15], &1u64.to_le_bytes());
        assert_eq!(&bytes[15..23], &2u64.to_le_bytes());
        assert_eq!(&bytes[23..31], &1.0f64.to_le_bytes());
        assert_eq!(bytes.len(), 39);
    }

    #[test]
    fn rejects_corruption() {
        let t = Tensor::full(&[2, 2], 1.0);
        let good = encode_real(&t).unwrap();
        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        assert!(decode(&bad_magic).is_err());
        let mut bad_version = good.clone();
        bad_version[4] = 2;
        assert!(decode(&bad_version).is_err());
        let mut bad_dtype = good.clone();
        bad_dtype[5] = 9;
        assert!(decode(&bad_dtype).is_err());
        assert!(decode(&good[..good.len() - 1]).is_err());
        let mut trailing = good;
        trailing.push(0);
        assert!(decode(&trailing).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(shape in prop::collection::vec(1usize..5, 1..4),
                                   seed in any::<u64>()) {
            let n: usize = shape.iter().product();
            let vals: Vec<f64> = (0..2 * n)
                .map(|i| f64::from_bits(seed.wrapping_mul(i as u64 + 1) >> 2))
                .collect();
            let real = Tensor::new(shape.clone(), vals[..n].to_vec()).unwrap();
            let back = decode(&encode_real(&real).unwrap()).unwrap();
            prop_assert_eq!(back, AnyTensor::Real(real));
            let cplx = ComplexTensor::new(
                shape,
                vals.chunks_exact(2).map(|p| Complex64::new(p[0], p[1])).collect(),
            ).unwrap();
            let back = decode(&encode_complex(&cplx).unwrap()).unwrap();
            prop_assert_eq!(back, AnyTensor::Complex(cplx));
        }
    }
}
