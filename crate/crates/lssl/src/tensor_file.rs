//! Single-tensor file: the 8-byte magic `LSSLTEN1`, a `u8` rank, one
//! little-endian `u32` per dimension, then the row-major `f32` payload.

use std::fs;
use std::path::Path;

use lssl_core::ImageVolume;
use thiserror::Error;

use crate::error::{CliError, Result};

pub const MAGIC: &[u8; 8] = b"LSSLTEN1";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FormatError {
    #[error("bad magic")]
    BadMagic,
    #[error("header truncated")]
    TruncatedHeader,
    #[error("rank must be at least 1")]
    ZeroRank,
    #[error("zero-sized dimension")]
    ZeroDim,
    #[error("payload is {actual} bytes, header implies {expected}")]
    PayloadLength { expected: usize, actual: usize },
    #[error("dimension {0} does not fit the header")]
    DimTooLarge(usize),
}

pub fn encode_tensor(dims: &[usize], data: &[f32]) -> Result<Vec<u8>, FormatError> {
    if dims.is_empty() {
        return Err(FormatError::ZeroRank);
    }
    let rank = u8::try_from(dims.len()).map_err(|_| FormatError::DimTooLarge(dims.len()))?;
    let mut out = Vec::with_capacity(9 + 4 * dims.len() + 4 * data.len());
    out.extend_from_slice(MAGIC);
    out.push(rank);
    for &d in dims {
        let d32 = u32::try_from(d).map_err(|_| FormatError::DimTooLarge(d))?;
        out.extend_from_slice(&d32.to_le_bytes());
    }
    let expected = dims.iter().product::<usize>();
    if expected != data.len() {
        return Err(FormatError::PayloadLength {
            expected: 4 * expected,
            actual: 4 * data.len(),
        });
    }
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_tensor(bytes: &[u8]) -> Result<(Vec<usize>, Vec<f32>), FormatError> {
    if bytes.len() < 8 {
        return Err(if MAGIC.starts_with(bytes) {
            FormatError::TruncatedHeader
        } else {
            FormatError::BadMagic
        });
    }
    if &bytes[..8] != MAGIC {
        return Err(FormatError::BadMagic);
    }
    let rank = *bytes.get(8).ok_or(FormatError::TruncatedHeader)? as usize;
    if rank == 0 {
        return Err(FormatError::ZeroRank);
    }
    let header = 9 + 4 * rank;
    if bytes.len() < header {
        return Err(FormatError::TruncatedHeader);
    }
    let dims: Vec<usize> = bytes[9..header]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")) as usize)
        .collect();
    if dims.contains(&0) {
        return Err(FormatError::ZeroDim);
    }
    let expected = dims
        .iter()
        .try_fold(4usize, |acc, &d| acc.checked_mul(d))
        .ok_or(FormatError::DimTooLarge(usize::MAX))?;
    let payload = &bytes[header..];
    if payload.len() != expected {
        return Err(FormatError::PayloadLength {
            expected,
            actual: payload.len(),
        });
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Ok((dims, data))
}

/// Stores `image` at single precision.
pub fn write_tensor(path: &Path, image: &ImageVolume) -> Result<()> {
    let data: Vec<f32> = image.data().iter().map(|&v| v as f32).collect();
    let bytes = encode_tensor(image.dims(), &data).map_err(|source| CliError::Format {
        path: path.to_path_buf(),
        source,
    })?;
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

pub fn read_tensor(path: &Path) -> Result<ImageVolume> {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(CliError::Missing(path.to_path_buf())),
        Err(e) => return Err(CliError::io(path, e)),
    };
    let (dims, data) = decode_tensor(&bytes).map_err(|source| CliError::Format {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(ImageVolume::new(dims, data.into_iter().map(f64::from).collect())?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn round_trip_32x32() {
        let data: Vec<f32> = (0..1024).map(|i| (i as f32 * 0.37).sin()).collect();
        let bytes = encode_tensor(&[32, 32], &data).unwrap();
        assert_eq!(bytes.len(), 9 + 8 + 4096);
        let (dims, back) = decode_tensor(&bytes).unwrap();
        assert_eq!(dims, vec![32, 32]);
        assert_eq!(
            back.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            data.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn corrupt_magic() {
        let mut bytes = encode_tensor(&[2, 2], &[0.0; 4]).unwrap();
        bytes[3] ^= 0xff;
        assert_eq!(decode_tensor(&bytes), Err(FormatError::BadMagic));
    }

    #[test]
    fn short_payload() {
        let mut bytes = encode_tensor(&[2, 2], &[1.0; 4]).unwrap();
        bytes.truncate(bytes.len() - 4);
        assert_eq!(
            decode_tensor(&bytes),
            Err(FormatError::PayloadLength {
                expected: 16,
                actual: 12
            })
        );
    }

    #[test]
    fn header_cases() {
        assert_eq!(decode_tensor(b"LSSL"), Err(FormatError::TruncatedHeader));
        assert_eq!(decode_tensor(b"LSSLTEN1"), Err(FormatError::TruncatedHeader));
        assert_eq!(decode_tensor(b"LSSLTEN1\x00"), Err(FormatError::ZeroRank));
        assert_eq!(decode_tensor(b"LSSLTEN1\x02\x01\x00\x00\x00"), Err(FormatError::TruncatedHeader));
        assert!(encode_tensor(&[2, 2], &[0.0; 3]).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_fuzz(
            dims in prop::collection::vec(1usize..6, 1..4),
            seed in any::<u32>(),
        ) {
            let n: usize = dims.iter().product();
            let data: Vec<f32> = (0..n)
                .map(|i| f32::from_bits(seed.wrapping_mul(2654435761).wrapping_add(i as u32 * 40503)))
                .collect();
            let bytes = encode_tensor(&dims, &data).unwrap();
            let (d, back) = decode_tensor(&bytes).unwrap();
            prop_assert_eq!(d, dims);
            prop_assert_eq!(
                back.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                data.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            );
        }

        #[test]
        fn decoding_garbage_never_panics(bytes in prop::collection::vec(any::<u8>(), 0..64)) {
            let _ = decode_tensor(&bytes);
            let mut framed = MAGIC.to_vec();
            framed.extend_from_slice(&bytes);
            let _ = decode_tensor(&framed);
        }

        #[test]
        fn any_truncation_is_rejected(dims in prop::collection::vec(1usize..5, 1..3), cut in 1usize..16) {
            let n: usize = dims.iter().product();
            let bytes = encode_tensor(&dims, &vec![0.5; n]).unwrap();
            let cut = cut.min(bytes.len());
            prop_assert!(decode_tensor(&bytes[..bytes.len() - cut]).is_err());
        }
    }
}
