//! Parameter checkpoints.
//!
//! ```text
//! "FOCP" | version u32 | d u32 | h u32 | d_k u32 | t1 u32 | t2 u32 | S u32
//! then, per tensor in sorted name order:
//!   name_len u32 | name (UTF-8) | rows u32 | cols u32 | rows·cols f32
//! ```
//!
//! Little-endian throughout. Values are stored in 32 bits.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{FocusError, Result};
use crate::model::FocusModel;
use crate::numerics::Tensor2;

pub const MAGIC: [u8; 4] = *b"FOCP";
pub const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CheckpointHeader {
    pub d: u32,
    pub heads: u32,
    pub d_k: u32,
    pub t1: u32,
    pub t2: u32,
    pub classes: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub tensors: BTreeMap<String, Tensor2>,
}

impl Checkpoint {
    /// Snapshot of `model`; `t1` is the knowledge prompt row count it was
    /// trained with (0 without prompts).
    pub fn from_model(model: &FocusModel, t1: usize) -> Self {
        let heads = model.config().heads;
        Checkpoint {
            header: CheckpointHeader {
                d: model.dim() as u32,
                heads: heads as u32,
                d_k: (model.dim() / heads) as u32,
                t1: t1 as u32,
                t2: model.learnable_rows() as u32,
                classes: model.num_classes() as u32,
            },
            tensors: model
                .params
                .iter()
                .map(|(n, t)| (n.to_string(), t.clone().frozen()))
                .collect(),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let h = &self.header;
        let mut buf = MAGIC.to_vec();
        for v in [VERSION, h.d, h.heads, h.d_k, h.t1, h.t2, h.classes] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for (name, t) in &self.tensors {
            buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
            buf.extend_from_slice(name.as_bytes());
            buf.extend_from_slice(&(t.rows() as u32).to_le_bytes());
            buf.extend_from_slice(&(t.cols() as u32).to_le_bytes());
            for &v in t.data() {
                buf.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        buf
    }

    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader { bytes, at: 0, path };
        let magic: [u8; 4] = r.take(4)?.try_into().unwrap();
        if magic != MAGIC {
            return Err(FocusError::BadMagic {
                path: path.to_path_buf(),
                expected: MAGIC,
                found: magic,
            });
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(FocusError::UnsupportedVersion {
                path: path.to_path_buf(),
                version,
            });
        }
        let header = CheckpointHeader {
            d: r.u32()?,
            heads: r.u32()?,
            d_k: r.u32()?,
            t1: r.u32()?,
            t2: r.u32()?,
            classes: r.u32()?,
        };
        let mut tensors = BTreeMap::new();
        while r.at < bytes.len() {
            let len = r.u32()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| FocusError::Malformed {
                path: path.to_path_buf(),
                reason: "tensor name is not UTF-8".into(),
            })?;
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            let data: Vec<f64> = r
                .take(4 * rows * cols)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect();
            let t = Tensor2::from_vec(rows, cols, data)?.ensure_finite("checkpoint")?;
            if let Some(prev) = tensors.keys().next_back() {
                if &name <= prev {
                    return Err(FocusError::Malformed {
                        path: path.to_path_buf(),
                        reason: format!("tensor `{name}` out of sorted order"),
                    });
                }
            }
            tensors.insert(name, t);
        }
        Ok(Checkpoint { header, tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.encode()).map_err(|e| FocusError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| FocusError::io(path, e))?;
        Self::decode(&bytes, path)
    }

    /// Copies the stored values into `model`, whose parameter names and
    /// shapes must match exactly.
    pub fn apply(&self, model: &mut FocusModel) -> Result<()> {
        let names: Vec<String> = model.params.names().map(str::to_string).collect();
        if names.len() != self.tensors.len() || !names.iter().all(|n| self.tensors.contains_key(n)) {
            return Err(FocusError::config(format!(
                "checkpoint tensors {:?} do not match model parameters {:?}",
                self.tensors.keys().collect::<Vec<_>>(),
                names
            )));
        }
        for (name, stored) in &self.tensors {
            let p = model.params.get_mut(name)?;
            if p.shape() != stored.shape() {
                return Err(FocusError::ShapeMismatch {
                    op: "Checkpoint::apply",
                    lhs: p.shape(),
                    rhs: stored.shape(),
                });
            }
            p.data_mut().copy_from_slice(stored.data());
        }
        Ok(())
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.at + n > self.bytes.len() {
            return Err(FocusError::TruncatedFile {
                path: self.path.to_path_buf(),
                offset: self.bytes.len() as u64,
                expected: (self.at + n) as u64,
            });
        }
        let s = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RunConfig;

    fn model(seed: u64) -> FocusModel {
        let cfg = RunConfig {
            heads: 2,
            learnable_prompts: 3,
            ..Default::default()
        };
        FocusModel::new(&cfg, 8, 3, seed).unwrap()
    }

    #[test]
    fn round_trip_restores_f32_values() {
        let m = model(1);
        let ck = Checkpoint::from_model(&m, 3);
        assert_eq!(ck.header.d_k, 4);
        assert_eq!(ck.header.t2, 3);
        let back = Checkpoint::decode(&ck.encode(), Path::new("c")).unwrap();
        assert_eq!(back.header, ck.header);
        let mut other = model(2);
        back.apply(&mut other).unwrap();
        for ((_, a), (_, b)) in m.params.iter().zip(other.params.iter()) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert_eq!(*x as f32, *y as f32);
            }
        }
    }

    #[test]
    fn layout_starts_with_header() {
        let bytes = Checkpoint::from_model(&model(0), 3).encode();
        assert_eq!(&bytes[..4], b"FOCP");
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 8);
        // First tensor in sorted order.
        let len = u32::from_le_bytes(bytes[32..36].try_into().unwrap()) as usize;
        assert_eq!(&bytes[36..36 + len], b"agg.head0.wk");
    }

    #[test]
    fn truncation_and_mismatch_detected() {
        let bytes = Checkpoint::from_model(&model(0), 3).encode();
        assert!(matches!(
            Checkpoint::decode(&bytes[..bytes.len() - 3], Path::new("c")),
            Err(FocusError::TruncatedFile { .. })
        ));
        let ck = Checkpoint::decode(&bytes, Path::new("c")).unwrap();
        let cfg = RunConfig {
            heads: 2,
            learnable_prompts: 1,
            ..Default::default()
        };
        let mut m = FocusModel::new(&cfg, 8, 3, 0).unwrap();
        assert!(ck.apply(&mut m).is_err());
    }
}
