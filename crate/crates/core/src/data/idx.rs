//! Big-endian IDX files as used by MNIST.
//!
//! A file starts with two zero bytes, an element-type byte (only `0x08`,
//! unsigned byte, is supported), and a rank byte. `rank` big-endian `u32`
//! extents follow, then the payload in row-major order.

use std::fmt;
use std::fs;
use std::path::Path;

use super::LabeledDataset;
use crate::error::Result;
use crate::tensor::Tensor;

pub const TYPE_U8: u8 = 0x08;

/// Malformed IDX input. Each variant has a stable [`IdxError::code`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum IdxError {
    /// The first two bytes are not zero.
    BadMagic { found: [u8; 4] },
    /// Element type other than unsigned byte.
    UnsupportedType { type_code: u8 },
    /// The rank byte does not match what the caller expects.
    UnexpectedRank { expected: &'static str, found: u8 },
    /// Header or payload ends early.
    Truncated { expected: usize, actual: usize },
    /// Bytes remain after the payload.
    TrailingBytes { expected: usize, actual: usize },
    /// Image and label files disagree on the sample count.
    CountMismatch { images: usize, labels: usize },
}

impl IdxError {
    pub fn code(&self) -> &'static str {
        match self {
            IdxError::BadMagic { .. } => "IDX_BAD_MAGIC",
            IdxError::UnsupportedType { .. } => "IDX_UNSUPPORTED_TYPE",
            IdxError::UnexpectedRank { .. } => "IDX_BAD_RANK",
            IdxError::Truncated { .. } => "IDX_TRUNCATED",
            IdxError::TrailingBytes { .. } => "IDX_TRAILING_BYTES",
            IdxError::CountMismatch { .. } => "IDX_COUNT_MISMATCH",
        }
    }
}

impl fmt::Display for IdxError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] ", self.code())?;
        match self {
            IdxError::BadMagic { found } => write!(f, "bad magic bytes {found:02x?}"),
            IdxError::UnsupportedType { type_code } => {
                write!(f, "unsupported element type 0x{type_code:02x}")
            }
            IdxError::UnexpectedRank { expected, found } => {
                write!(f, "expected rank {expected}, found {found}")
            }
            IdxError::Truncated { expected, actual } => {
                write!(f, "truncated file: expected {expected} bytes, got {actual}")
            }
            IdxError::TrailingBytes { expected, actual } => {
                write!(f, "expected {expected} bytes, got {actual} (trailing data)")
            }
            IdxError::CountMismatch { images, labels } => {
                write!(f, "{images} images but {labels} labels")
            }
        }
    }
}

impl std::error::Error for IdxError {}

/// Raw decoded IDX content.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

pub fn parse(bytes: &[u8]) -> std::result::Result<IdxArray, IdxError> {
    if bytes.len() < 4 {
        return Err(IdxError::Truncated {
            expected: 4,
            actual: bytes.len(),
        });
    }
    let magic = [bytes[0], bytes[1], bytes[2], bytes[3]];
    if magic[0] != 0 || magic[1] != 0 {
        return Err(IdxError::BadMagic { found: magic });
    }
    if magic[2] != TYPE_U8 {
        return Err(IdxError::UnsupportedType { type_code: magic[2] });
    }
    let rank = magic[3] as usize;
    let header = 4 + 4 * rank;
    if bytes.len() < header {
        return Err(IdxError::Truncated {
            expected: header,
            actual: bytes.len(),
        });
    }
    let dims: Vec<usize> = bytes[4..header]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    let expected = header + dims.iter().product::<usize>();
    if bytes.len() < expected {
        return Err(IdxError::Truncated {
            expected,
            actual: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(IdxError::TrailingBytes {
            expected,
            actual: bytes.len(),
        });
    }
    Ok(IdxArray {
        dims,
        data: bytes[header..].to_vec(),
    })
}

pub fn encode(arr: &IdxArray) -> Vec<u8> {
    let mut out = vec![0, 0, TYPE_U8, arr.dims.len() as u8];
    for &d in &arr.dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(&arr.data);
    out
}

pub fn read(path: &Path) -> Result<IdxArray> {
    Ok(parse(&fs::read(path)?)?)
}

pub fn write(path: &Path, arr: &IdxArray) -> Result<()> {
    crate::checkpoint::write_atomic(path, &encode(arr))
}

/// Turns decoded image and label arrays into a dataset. Images are
/// flattened per sample and scaled to `[0, 1]` by `/255`.
pub fn to_dataset(images: &IdxArray, labels: &IdxArray) -> Result<LabeledDataset> {
    if images.dims.len() < 2 {
        return Err(IdxError::UnexpectedRank {
            expected: ">= 2",
            found: images.dims.len() as u8,
        }
        .into());
    }
    if labels.dims.len() != 1 {
        return Err(IdxError::UnexpectedRank {
            expected: "1",
            found: labels.dims.len() as u8,
        }
        .into());
    }
    let n = images.dims[0];
    if n != labels.dims[0] {
        return Err(IdxError::CountMismatch {
            images: n,
            labels: labels.dims[0],
        }
        .into());
    }
    let width: usize = images.dims[1..].iter().product();
    let features = Tensor::new(
        vec![n, width],
        images.data.iter().map(|&b| f64::from(b) / 255.0).collect(),
    )?;
    let ys: Vec<usize> = labels.data.iter().map(|&b| b as usize).collect();
    let class_count = ys.iter().max().map_or(0, |m| m + 1);
    LabeledDataset::new(features, ys, class_count)
}

pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<LabeledDataset> {
    to_dataset(&read(images_path)?, &read(labels_path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    /// Hand-assembled header following the published format description,
    /// independent of `encode`.
    fn image_file(n: u32, payload_len: usize) -> Vec<u8> {
        let mut b = vec![0x00, 0x00, 0x08, 0x03];
        for d in [n, 28, 28] {
            b.extend_from_slice(&d.to_be_bytes());
        }
        b.extend((0..payload_len).map(|i| (i % 256) as u8));
        b
    }

    #[test]
    fn two_mnist_images() {
        let arr = parse(&image_file(2, 1568)).unwrap();
        assert_eq!(arr.dims, vec![2, 28, 28]);
        assert_eq!(arr.data.len(), 1568);
        let labels = parse(&[0, 0, 8, 1, 0, 0, 0, 2, 7, 3]).unwrap();
        assert_eq!(labels.dims, vec![2]);
        let ds = to_dataset(&arr, &labels).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.feature_dim(), 784);
        assert_eq!(ds.labels, vec![7, 3]);
        assert_eq!(ds.features.data()[255], 1.0);
        assert_eq!(ds.features.data()[1], 1.0 / 255.0);
    }

    #[test]
    fn truncated_payload_names_byte_counts() {
        let err = parse(&image_file(2, 1500)).unwrap_err();
        assert_eq!(
            err,
            IdxError::Truncated {
                expected: 16 + 1568,
                actual: 16 + 1500
            }
        );
        assert!(err.to_string().contains("1584") && err.to_string().contains("1516"));
    }

    #[test]
    fn malformed_headers() {
        assert_eq!(parse(&[1, 0, 8, 1, 0, 0, 0, 0]).unwrap_err().code(), "IDX_BAD_MAGIC");
        assert_eq!(parse(&[0, 0, 0x0d, 1, 0, 0, 0, 0]).unwrap_err().code(), "IDX_UNSUPPORTED_TYPE");
        assert_eq!(parse(&[0, 0, 8, 2, 0, 0]).unwrap_err().code(), "IDX_TRUNCATED");
        assert_eq!(parse(&[0, 0, 8]).unwrap_err().code(), "IDX_TRUNCATED");
        assert_eq!(parse(&[0, 0, 8, 1, 0, 0, 0, 1, 5, 5]).unwrap_err().code(), "IDX_TRAILING_BYTES");
    }

    #[test]
    fn count_mismatch() {
        let images = parse(&image_file(2, 1568)).unwrap();
        let labels = parse(&[0, 0, 8, 1, 0, 0, 0, 1, 4]).unwrap();
        match to_dataset(&images, &labels) {
            Err(Error::Idx(e)) => assert_eq!(e.code(), "IDX_COUNT_MISMATCH"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn encode_matches_hand_header() {
        let arr = IdxArray {
            dims: vec![2, 28, 28],
            data: (0..1568).map(|i| (i % 256) as u8).collect(),
        };
        assert_eq!(encode(&arr), image_file(2, 1568));
    }
}
