//! The `UNDW` weight buffer.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "UNDW"
//! 4       4     version (u32 LE) = 1
//! 8       4     architecture id (u32 LE)
//! 12      4     class count (u32 LE)
//! 16      8     parameter count (u64 LE)
//! 24      8·n   parameters, f64 LE, in layer order
//! ```
//!
//! Layer order for the reference CNN is conv1 kernels `[3,3,3,8]`, conv1 bias,
//! conv2 kernels `[3,3,8,16]`, conv2 bias, dense weights `[N, in]`, dense bias.
//! For the linear model it is the per-class weight images in class order,
//! followed by the bias vector.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// File magic.
pub const MAGIC: [u8; 4] = *b"UNDW";
/// Only supported version.
pub const VERSION: u32 = 1;
/// Header length in bytes.
pub const HEADER_LEN: usize = 24;
/// Architecture id of [`super::ClassifierSpec`].
pub const ARCH_REFERENCE_CNN: u32 = 1;
/// Architecture id of [`super::ToyLinearModel`].
pub const ARCH_TOY_LINEAR: u32 = 2;

/// Decoded buffer contents.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightFile {
    /// Architecture id.
    pub architecture: u32,
    /// Class count.
    pub num_classes: u32,
    /// Flat parameters.
    pub params: Vec<f64>,
}

/// Serializes a parameter buffer.
pub fn encode(architecture: u32, num_classes: u32, params: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * params.len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&architecture.to_le_bytes());
    out.extend_from_slice(&num_classes.to_le_bytes());
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for p in params {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

/// Parses a parameter buffer; checks magic, version and length.
pub fn decode(bytes: &[u8]) -> Result<WeightFile> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::WeightFormat(format!(
            "truncated header ({} bytes)",
            bytes.len()
        )));
    }
    if bytes[..4] != MAGIC {
        return Err(Error::WeightFormat("bad magic".into()));
    }
    let version = u32_at(bytes, 4);
    if version != VERSION {
        return Err(Error::WeightFormat(format!(
            "unsupported version {version}"
        )));
    }
    let architecture = u32_at(bytes, 8);
    let num_classes = u32_at(bytes, 12);
    let mut n = [0u8; 8];
    n.copy_from_slice(&bytes[16..24]);
    let count = u64::from_le_bytes(n);
    let body = &bytes[HEADER_LEN..];
    if (body.len() as u64) != count.saturating_mul(8) {
        return Err(Error::WeightFormat(format!(
            "expected {count} parameters, buffer holds {} bytes",
            body.len()
        )));
    }
    let params = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes([c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7]]))
        .collect();
    Ok(WeightFile {
        architecture,
        num_classes,
        params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_parameter_buffer_length() {
        let b = encode(ARCH_TOY_LINEAR, 2, &[1.5, -2.0]);
        assert_eq!(b.len(), HEADER_LEN + 2 * 8);
        assert_eq!(&b[..4], b"UNDW");
        let f = decode(&b).unwrap();
        assert_eq!(f.params, [1.5, -2.0]);
        assert_eq!(f.num_classes, 2);
    }

    #[test]
    fn corrupt_buffers_are_rejected() {
        let mut b = encode(ARCH_REFERENCE_CNN, 10, &[0.0; 4]);
        assert!(decode(&b[..HEADER_LEN + 8]).is_err());
        assert!(decode(&b[..10]).is_err());
        b[4] = 2;
        assert!(decode(&b).is_err());
        b[4] = 1;
        b[0] = b'X';
        assert!(matches!(decode(&b), Err(Error::WeightFormat(_))));
    }
}
