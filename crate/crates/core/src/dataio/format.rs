//! Feature file format.
//!
//! ```text
//! offset  size     field
//! 0       4        magic "FBAG"
//! 4       4        version (u32, currently 1)
//! 8       8        N (u64)
//! 16      4        d (u32)
//! 20      4        flags (u32, reserved, written as 0)
//! 24      4·N·d    features, f32, row-major
//! ...     8·N      patch indices, u64
//! ```
//!
//! All integers and floats are little-endian. Features are stored in 32 bits
//! and widened to 64 bits on read, so a write/read round trip of an
//! f32-representable bag is exact.

use std::path::Path;

use crate::bag::{FeatureBag, PromptSet};
use crate::error::{FocusError, Result};
use crate::numerics::Tensor2;

pub const MAGIC: [u8; 4] = *b"FBAG";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 24;

/// Total file size for an `n × d` bag.
pub fn file_len(n: u64, d: u32) -> u64 {
    HEADER_LEN as u64 + 4 * n * d as u64 + 8 * n
}

/// Serializes features and indices.
pub fn encode(features: &Tensor2, indices: &[u64]) -> Vec<u8> {
    let (n, d) = features.shape();
    let mut buf = Vec::with_capacity(file_len(n as u64, d as u32) as usize);
    buf.extend_from_slice(&MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(n as u64).to_le_bytes());
    buf.extend_from_slice(&(d as u32).to_le_bytes());
    buf.extend_from_slice(&0u32.to_le_bytes());
    for &v in features.data() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    for &i in indices {
        buf.extend_from_slice(&i.to_le_bytes());
    }
    buf
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().unwrap())
}

fn u64_at(b: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(b[at..at + 8].try_into().unwrap())
}

/// Parses the bytes of a feature file. `path` is only used in errors.
pub fn decode(bytes: &[u8], path: &Path) -> Result<(Tensor2, Vec<u64>)> {
    let truncated = |expected: u64| FocusError::TruncatedFile {
        path: path.to_path_buf(),
        offset: bytes.len() as u64,
        expected,
    };
    let malformed = |reason: String| FocusError::Malformed {
        path: path.to_path_buf(),
        reason,
    };
    if bytes.len() < 4 {
        return Err(truncated(HEADER_LEN as u64));
    }
    let found: [u8; 4] = bytes[..4].try_into().unwrap();
    if found != MAGIC {
        return Err(FocusError::BadMagic {
            path: path.to_path_buf(),
            expected: MAGIC,
            found,
        });
    }
    if bytes.len() < HEADER_LEN {
        return Err(truncated(HEADER_LEN as u64));
    }
    let version = u32_at(bytes, 4);
    if version != VERSION {
        return Err(FocusError::UnsupportedVersion {
            path: path.to_path_buf(),
            version,
        });
    }
    let n = u64_at(bytes, 8);
    let d = u32_at(bytes, 16);
    if n == 0 || d == 0 {
        return Err(malformed(format!("N = {n} and d = {d} must both be positive")));
    }
    let expected = n
        .checked_mul(d as u64)
        .and_then(|nd| nd.checked_mul(4))
        .and_then(|b| b.checked_add(8 * n + HEADER_LEN as u64))
        .ok_or_else(|| malformed(format!("N = {n}, d = {d} overflows")))?;
    if (bytes.len() as u64) < expected {
        return Err(truncated(expected));
    }
    if bytes.len() as u64 > expected {
        return Err(malformed(format!(
            "{} trailing bytes after the index footer",
            bytes.len() as u64 - expected
        )));
    }
    let (n, d) = (n as usize, d as usize);
    let body = &bytes[HEADER_LEN..HEADER_LEN + 4 * n * d];
    let data: Vec<f64> = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    if data.iter().any(|v| !v.is_finite()) {
        return Err(FocusError::NonFiniteValue { op: "read_bag" });
    }
    let footer = &bytes[HEADER_LEN + 4 * n * d..];
    let indices = footer
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((Tensor2::from_vec(n, d, data)?, indices))
}

fn bag_id(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Reads a bag. The id is the file stem; the label is left unset.
pub fn read_bag(path: impl AsRef<Path>) -> Result<FeatureBag> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| FocusError::io(path, e))?;
    let (features, indices) = decode(&bytes, path)?;
    FeatureBag::new(bag_id(path), features, indices, None)
}

pub fn write_bag(bag: &FeatureBag, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode(bag.features(), bag.patch_indices())).map_err(|e| FocusError::io(path, e))
}

/// Reads knowledge prompt rows stored in the feature format.
pub fn read_prompts(path: impl AsRef<Path>, class_names: Vec<String>) -> Result<PromptSet> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| FocusError::io(path, e))?;
    let (features, _) = decode(&bytes, path)?;
    PromptSet::knowledge_only(features, class_names)
}

/// Writes the knowledge rows of `prompts`, indexed `0..t1`.
pub fn write_prompts(prompts: &PromptSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let idx: Vec<u64> = (0..prompts.knowledge.rows() as u64).collect();
    std::fs::write(path, encode(&prompts.knowledge, &idx)).map_err(|e| FocusError::io(path, e))
}
