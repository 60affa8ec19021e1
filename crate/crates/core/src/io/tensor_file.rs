use std::path::Path;

use num_complex::Complex;

use super::write_atomic;
use crate::error::{Error, Result};
use crate::tensor::{numel, AnyTensor, Tensor};

const MAGIC: &[u8; 4] = b"BLT1";

fn dtype_code(t: &AnyTensor) -> Result<u8> {
    Ok(match t {
        AnyTensor::Real32(_) => 0,
        AnyTensor::Real64(_) => 1,
        AnyTensor::Complex64(_) => 2,
        AnyTensor::Int32(_) => 3,
        AnyTensor::Complex128(_) => {
            return Err(crate::error::invalid!("complex128 has no tensor file dtype; convert to complex64"))
        }
    })
}

/// Serializes a tensor: magic, dtype code, ndim, `u64` dims, payload, all
/// little-endian.
pub fn encode_tensor(t: &AnyTensor) -> Result<Vec<u8>> {
    let code = dtype_code(t)?;
    let shape = t.shape();
    let mut out = Vec::with_capacity(6 + 8 * shape.len() + numel(shape) * 8);
    out.extend_from_slice(MAGIC);
    out.push(code);
    out.push(u8::try_from(shape.len()).map_err(|_| crate::error::invalid!("too many dimensions"))?);
    for &d in shape {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    match t {
        AnyTensor::Real32(t) => t.data().iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        AnyTensor::Real64(t) => t.data().iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        AnyTensor::Complex64(t) => t.data().iter().for_each(|x| {
            out.extend_from_slice(&x.re.to_le_bytes());
            out.extend_from_slice(&x.im.to_le_bytes());
        }),
        AnyTensor::Int32(t) => t.data().iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        AnyTensor::Complex128(_) => unreachable!("rejected by dtype_code"),
    }
    Ok(out)
}

/// Parses bytes written by [`encode_tensor`]. `path` only labels errors.
pub fn decode_tensor(bytes: &[u8], path: &Path) -> Result<AnyTensor> {
    let fail = |reason: String| Error::Format {
        kind: "tensor",
        path: path.to_path_buf(),
        reason,
    };
    if bytes.len() < 6 || &bytes[..4] != MAGIC {
        return Err(fail("missing BLT1 magic".into()));
    }
    let (code, ndim) = (bytes[4], bytes[5] as usize);
    let elem = match code {
        0 | 3 => 4,
        1 | 2 => 8,
        c => return Err(fail(format!("unknown dtype code {c}"))),
    };
    if ndim == 0 {
        return Err(fail("zero dimensions".into()));
    }
    let header = 6 + 8 * ndim;
    if bytes.len() < header {
        return Err(fail("truncated header".into()));
    }
    let shape: Vec<usize> = bytes[6..header]
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect();
    if shape.contains(&0) {
        return Err(fail(format!("zero-length dimension in {shape:?}")));
    }
    let count = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .and_then(|n| n.checked_mul(elem))
        .ok_or_else(|| fail(format!("shape {shape:?} overflows")))?;
    let payload = &bytes[header..];
    if payload.len() != count {
        return Err(fail(format!("payload has {} bytes, shape {shape:?} needs {count}", payload.len())));
    }
    let words4 = || payload.chunks_exact(4).map(|c| <[u8; 4]>::try_from(c).unwrap());
    let words8 = || payload.chunks_exact(8).map(|c| <[u8; 8]>::try_from(c).unwrap());
    Ok(match code {
        0 => AnyTensor::Real32(Tensor::from_vec(shape, words4().map(f32::from_le_bytes).collect())?),
        1 => AnyTensor::Real64(Tensor::from_vec(shape, words8().map(f64::from_le_bytes).collect())?),
        2 => {
            let parts: Vec<f32> = words4().map(f32::from_le_bytes).collect();
            let data = parts.chunks_exact(2).map(|p| Complex::new(p[0], p[1])).collect();
            AnyTensor::Complex64(Tensor::from_vec(shape, data)?)
        }
        _ => AnyTensor::Int32(Tensor::from_vec(shape, words4().map(i32::from_le_bytes).collect())?),
    })
}

pub fn write_tensor(path: &Path, t: &AnyTensor) -> Result<()> {
    write_atomic(path, &encode_tensor(t)?)
}

pub fn read_tensor(path: &Path) -> Result<AnyTensor> {
    decode_tensor(&super::read_file(path)?, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn real32_round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = AnyTensor::Real32(Tensor::from_fn(&[3, 4, 5], |_| rng.gen::<f32>() * 1e3 - 5e2));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.blt");
        write_tensor(&p, &t).unwrap();
        assert_eq!(read_tensor(&p).unwrap(), t);
    }

    #[test]
    fn complex_payload_is_interleaved() {
        let t = AnyTensor::Complex64(Tensor::from_vec(vec![2], vec![Complex::new(1.5f32, -2.0), Complex::new(0.25, 8.0)]).unwrap());
        let bytes = encode_tensor(&t).unwrap();
        let mut expected = b"BLT1".to_vec();
        expected.extend_from_slice(&[2, 1]);
        expected.extend_from_slice(&2u64.to_le_bytes());
        for x in [1.5f32, -2.0, 0.25, 8.0] {
            expected.extend_from_slice(&x.to_le_bytes());
        }
        assert_eq!(bytes, expected);
        assert_eq!(decode_tensor(&bytes, Path::new("x")).unwrap(), t);
    }

    #[test]
    fn other_dtypes_round_trip() {
        for t in [
            AnyTensor::Real64(Tensor::from_vec(vec![2, 2], vec![1.0, f64::MIN_POSITIVE, -0.0, 3.25]).unwrap()),
            AnyTensor::Int32(Tensor::from_vec(vec![3], vec![0, -7, i32::MAX]).unwrap()),
        ] {
            assert_eq!(decode_tensor(&encode_tensor(&t).unwrap(), Path::new("x")).unwrap(), t);
        }
    }

    #[test]
    fn corrupt_files_rejected() {
        let good = encode_tensor(&AnyTensor::Real32(Tensor::full(&[2, 3], 1.0))).unwrap();
        let p = Path::new("bad.blt");
        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        assert!(decode_tensor(&bad_magic, p).is_err());
        let mut bad_dtype = good.clone();
        bad_dtype[4] = 9;
        assert!(decode_tensor(&bad_dtype, p).unwrap_err().to_string().contains("dtype"));
        assert!(decode_tensor(&good[..good.len() - 1], p).unwrap_err().to_string().contains("payload"));
        let mut zero_dims = good.clone();
        zero_dims[5] = 0;
        assert!(decode_tensor(&zero_dims[..6], p).is_err());
        let mut zero_len = good;
        zero_len[6..14].copy_from_slice(&0u64.to_le_bytes());
        assert!(decode_tensor(&zero_len, p).is_err());
    }
}
