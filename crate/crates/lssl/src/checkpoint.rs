//! Model checkpoints: the magic `LSSLCKP1`, a little-endian `u64` header
//! length, a JSON header, then every tensor as little-endian `f64` in header
//! order. Round trips are bit exact.

use std::fs;
use std::path::Path;

use lssl_core::{ArchConfig, ModelParams};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::tensor_file::FormatError;

pub const MAGIC: &[u8; 8] = b"LSSLCKP1";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    /// Word position of the training stream, as a decimal string (it is a
    /// 128-bit counter).
    pub word_pos: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub len: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    arch: ArchConfig,
    step: u64,
    epoch: usize,
    rng: RngState,
    tensors: Vec<TensorEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub step: u64,
    pub epoch: usize,
    pub rng_seed: u64,
    pub rng_word_pos: u128,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let p = &self.params;
        let header = Header {
            arch: p.arch.clone(),
            step: self.step,
            epoch: self.epoch,
            rng: RngState {
                seed: self.rng_seed,
                word_pos: self.rng_word_pos.to_string(),
            },
            tensors: vec![
                TensorEntry {
                    name: "theta".into(),
                    len: p.theta.len(),
                },
                TensorEntry {
                    name: "phi".into(),
                    len: p.phi.len(),
                },
                TensorEntry {
                    name: "tau".into(),
                    len: p.tau.len(),
                },
            ],
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(16 + json.len() + 8 * p.param_count());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for v in p.theta.iter().chain(&p.phi).chain(&p.tau) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, CheckpointError> {
        if bytes.len() < 16 {
            return Err(FormatError::TruncatedHeader.into());
        }
        if &bytes[..8] != MAGIC {
            return Err(FormatError::BadMagic.into());
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = &bytes[16..];
        if body.len() < hlen {
            return Err(FormatError::TruncatedHeader.into());
        }
        let header: Header = serde_json::from_slice(&body[..hlen])?;
        let payload = &body[hlen..];
        let expected: usize = header.tensors.iter().map(|t| 8 * t.len).sum();
        if payload.len() != expected {
            return Err(FormatError::PayloadLength {
                expected,
                actual: payload.len(),
            }
            .into());
        }
        let mut values = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
        let mut take = |name: &str| -> std::result::Result<Vec<f64>, CheckpointError> {
            let entry = header
                .tensors
                .iter()
                .find(|t| t.name == name)
                .ok_or_else(|| CheckpointError::Schema(format!("tensor {name} missing")))?;
            Ok(values.by_ref().take(entry.len).collect())
        };
        let (theta, phi, tau) = (take("theta")?, take("phi")?, take("tau")?);
        let params = ModelParams {
            arch: header.arch,
            theta,
            phi,
            tau,
        };
        let reference = ModelParams::zeros(&params.arch).map_err(|e| CheckpointError::Schema(e.to_string()))?;
        if reference.theta.len() != params.theta.len()
            || reference.phi.len() != params.phi.len()
            || reference.tau.len() != params.tau.len()
        {
            return Err(CheckpointError::Schema("tensor sizes do not match the architecture".into()));
        }
        Ok(Self {
            params,
            step: header.step,
            epoch: header.epoch,
            rng_seed: header.rng.seed,
            rng_word_pos: header
                .rng
                .word_pos
                .parse()
                .map_err(|_| CheckpointError::Schema("rng word_pos is not an integer".into()))?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| CliError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = match fs::read(path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(CliError::Missing(path.to_path_buf())),
            Err(e) => return Err(CliError::io(path, e)),
        };
        Self::from_bytes(&bytes).map_err(|e| match e {
            CheckpointError::Format(source) => CliError::Format {
                path: path.to_path_buf(),
                source,
            },
            CheckpointError::Json(source) => CliError::json(path, source),
            CheckpointError::Schema(m) => CliError::Config(format!("{}: {m}", path.display())),
        })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Schema(String),
}

#[cfg(test)]
mod tests {
    use super::*;
    use lssl_core::model::init_model;

    fn sample() -> Checkpoint {
        let mut params = init_model(&ArchConfig::micro(), 4).unwrap();
        params.theta[0] = f64::MIN_POSITIVE;
        params.phi[1] = -0.0;
        Checkpoint {
            params,
            step: 123,
            epoch: 7,
            rng_seed: 17,
            rng_word_pos: u128::MAX - 5,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ck = sample();
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back.params.theta), bits(&ck.params.theta));
        assert_eq!(bits(&back.params.phi), bits(&ck.params.phi));
        assert_eq!(bits(&back.params.tau), bits(&ck.params.tau));
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes(), ck.to_bytes());
    }

    #[test]
    fn corrupt_inputs() {
        let mut bytes = sample().to_bytes();
        assert!(matches!(
            Checkpoint::from_bytes(&bytes[..bytes.len() - 1]),
            Err(CheckpointError::Format(FormatError::PayloadLength { .. }))
        ));
        bytes[0] = b'X';
        assert!(matches!(
            Checkpoint::from_bytes(&bytes),
            Err(CheckpointError::Format(FormatError::BadMagic))
        ));
        assert!(Checkpoint::from_bytes(b"LSSLCKP1").is_err());
    }
}
