//! RIF1 first-layer weight dumps.
//!
//! All integers little-endian.
//!
//! | bytes        | field                                   |
//! |--------------|-----------------------------------------|
//! | 4            | magic `RIF1`                            |
//! | 4            | `u32` filters `N`                       |
//! | 4            | `u32` channels `C`                      |
//! | 4            | `u32` kernel size `K`                   |
//! | `4*N*C*K*K`  | `f32` weights, `[N,C,K,K]` row-major    |
//! | 8            | `u64` config digest                     |
//! | 4            | `u32` epoch the weights were taken at   |
//! | 4            | `u32` policy name length `L`            |
//! | `L`          | policy name, UTF-8                      |

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::lifecycle::FilterBank;
use crate::tensor::Tensor;

pub const RIF1_MAGIC: &[u8; 4] = b"RIF1";

#[derive(Debug, Error)]
pub enum DumpError {
    #[error("not a RIF1 dump (magic {0:02x?})")]
    BadMagic([u8; 4]),
    #[error("truncated RIF1 dump: {section} needs {missing} more bytes")]
    Truncated { section: &'static str, missing: usize },
    #[error("RIF1 dump has {0} unexpected trailing bytes")]
    TrailingBytes(usize),
    #[error("invalid RIF1 dump: {0}")]
    Invalid(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightDump {
    pub bank: FilterBank<f32>,
    pub config_digest: u64,
    pub epoch: u32,
    pub policy: String,
}

impl WeightDump {
    pub fn encode(&self) -> Vec<u8> {
        let w = self.bank.weights();
        let mut out = Vec::with_capacity(16 + w.len() * 4 + 16 + self.policy.len());
        out.extend_from_slice(RIF1_MAGIC);
        for v in [self.bank.len(), self.bank.channels(), self.bank.kernel_size()] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for &x in w.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out.extend_from_slice(&self.config_digest.to_le_bytes());
        out.extend_from_slice(&self.epoch.to_le_bytes());
        out.extend_from_slice(&(self.policy.len() as u32).to_le_bytes());
        out.extend_from_slice(self.policy.as_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DumpError> {
        let mut pos = 0;
        let mut take = |n: usize, section: &'static str| -> Result<&[u8], DumpError> {
            let left = bytes.len() - pos;
            if left < n {
                return Err(DumpError::Truncated {
                    section,
                    missing: n - left,
                });
            }
            pos += n;
            Ok(&bytes[pos - n..pos])
        };
        let magic: [u8; 4] = take(4, "magic")?.try_into().unwrap();
        if &magic != RIF1_MAGIC {
            return Err(DumpError::BadMagic(magic));
        }
        let mut dims = [0usize; 3];
        for d in dims.iter_mut() {
            *d = u32::from_le_bytes(take(4, "header")?.try_into().unwrap()) as usize;
        }
        let [n, c, k] = dims;
        if n == 0 || c == 0 || k == 0 {
            return Err(DumpError::Invalid(format!("zero dimension in {n}x{c}x{k}x{k}")));
        }
        let payload: Vec<f32> = take(n * c * k * k * 4, "weights")?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        let config_digest = u64::from_le_bytes(take(8, "metadata")?.try_into().unwrap());
        let epoch = u32::from_le_bytes(take(4, "metadata")?.try_into().unwrap());
        let len = u32::from_le_bytes(take(4, "metadata")?.try_into().unwrap()) as usize;
        let policy = String::from_utf8(take(len, "policy name")?.to_vec())
            .map_err(|_| DumpError::Invalid("policy name is not UTF-8".into()))?;
        if pos != bytes.len() {
            return Err(DumpError::TrailingBytes(bytes.len() - pos));
        }
        let weights = Tensor::from_vec(&[n, c, k, k], payload).map_err(|e| DumpError::Invalid(e.to_string()))?;
        let bank = FilterBank::new(weights).map_err(|e| DumpError::Invalid(e.to_string()))?;
        Ok(WeightDump {
            bank,
            config_digest,
            epoch,
            policy,
        })
    }

    pub fn write(&self, path: &Path) -> Result<(), DumpError> {
        fs::write(path, self.encode()).map_err(|source| DumpError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn read(path: &Path) -> Result<Self, DumpError> {
        let bytes = fs::read(path).map_err(|source| DumpError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::decode(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> WeightDump {
        let filters: Vec<Vec<f32>> = (0..5)
            .map(|i| (0..27).map(|j| (i * 31 + j) as f32 * 0.01 - 0.5).collect())
            .collect();
        WeightDump {
            bank: FilterBank::from_filters(3, 3, &filters).unwrap(),
            config_digest: 0xdead_beef_0123_4567,
            epoch: 20,
            policy: "directed_complementary".into(),
        }
    }

    #[test]
    fn layout_and_errors() {
        let d = sample();
        let bytes = d.encode();
        assert_eq!(&bytes[..4], b"RIF1");
        assert_eq!(bytes.len(), 16 + 5 * 27 * 4 + 16 + d.policy.len());
        assert_eq!(WeightDump::decode(&bytes).unwrap(), d);

        let err = WeightDump::decode(&bytes[..40]).unwrap_err();
        assert!(matches!(err, DumpError::Truncated { section: "weights", missing } if missing == 5 * 27 * 4 - 24));
        let mut bad = bytes.clone();
        bad[3] = b'2';
        assert!(matches!(WeightDump::decode(&bad), Err(DumpError::BadMagic(_))));
        let mut long = bytes;
        long.extend_from_slice(&[1, 2]);
        assert!(matches!(WeightDump::decode(&long), Err(DumpError::TrailingBytes(2))));
    }
}
