//! Representations of a cohort under a checkpoint, cached on disk and keyed
//! by the SHA-256 of the checkpoint bytes and the manifest bytes.

use std::fs;
use std::path::{Path, PathBuf};

use lssl_core::downstream::extract_representations;
use lssl_core::{Cohort, ModelParams, Representation};
use sha2::{Digest, Sha256};

use crate::config::hex;
use crate::error::{CliError, Result};

pub const MAGIC: &[u8; 8] = b"LSSLREP1";

pub fn cache_key(checkpoint_bytes: &[u8], manifest_bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update((checkpoint_bytes.len() as u64).to_le_bytes());
    h.update(checkpoint_bytes);
    h.update(manifest_bytes);
    hex(&h.finalize())
}

pub fn encode_reps(reps: &[Representation]) -> Vec<u8> {
    let k = reps.first().map_or(0, |r| r.len());
    let mut out = Vec::with_capacity(24 + reps.len() * k * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(reps.len() as u64).to_le_bytes());
    out.extend_from_slice(&(k as u64).to_le_bytes());
    for r in reps {
        for v in r.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// `None` for anything that is not a well-formed cache file.
pub fn decode_reps(bytes: &[u8]) -> Option<Vec<Representation>> {
    let rest = bytes.strip_prefix(MAGIC.as_slice())?;
    let n = u64::from_le_bytes(rest.get(0..8)?.try_into().ok()?) as usize;
    let k = u64::from_le_bytes(rest.get(8..16)?.try_into().ok()?) as usize;
    let payload = &rest[16..];
    if payload.len() != n.checked_mul(k)?.checked_mul(8)? {
        return None;
    }
    let values: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if k == 0 {
        return Some(vec![Representation(Vec::new()); n]);
    }
    Some(values.chunks(k).map(|c| Representation(c.to_vec())).collect())
}

pub struct RepCache {
    dir: PathBuf,
}

impl RepCache {
    pub fn new(dir: &Path) -> Self {
        Self { dir: dir.to_path_buf() }
    }

    pub fn path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.lsslrep"))
    }

    /// Cached representations for `key`, computing and storing them on a
    /// miss. A stale or corrupt entry is recomputed.
    pub fn get_or_compute(&self, key: &str, params: &ModelParams, cohort: &Cohort) -> Result<Vec<Representation>> {
        let path = self.path(key);
        if let Ok(bytes) = fs::read(&path) {
            if let Some(reps) = decode_reps(&bytes) {
                if reps.len() == cohort.n_images() && reps.iter().all(|r| r.len() == params.arch.latent_dim) {
                    return Ok(reps);
                }
            }
        }
        let reps = extract_representations(params, &cohort.images)?;
        fs::create_dir_all(&self.dir).map_err(|e| CliError::io(&self.dir, e))?;
        fs::write(&path, encode_reps(&reps)).map_err(|e| CliError::io(&path, e))?;
        Ok(reps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use lssl_core::model::init_model;
    use lssl_core::synthgen::{generate_cohort, GeneratorConfig, Grid};
    use lssl_core::ArchConfig;

    #[test]
    fn round_trip() {
        let reps = vec![Representation(vec![1.0, -2.5]), Representation(vec![f64::MIN_POSITIVE, 3.0])];
        assert_eq!(decode_reps(&encode_reps(&reps)).unwrap(), reps);
        let bytes = encode_reps(&reps);
        assert!(decode_reps(&bytes[..bytes.len() - 1]).is_none());
        assert!(decode_reps(b"LSSLREP0").is_none());
    }

    #[test]
    fn key_depends_on_both_inputs() {
        let a = cache_key(b"ab", b"c");
        assert_ne!(a, cache_key(b"a", b"bc"));
        assert_ne!(a, cache_key(b"ab", b"d"));
        assert_eq!(a, cache_key(b"ab", b"c"));
    }

    #[test]
    fn hit_returns_stored_values() {
        let cfg = GeneratorConfig {
            n_subjects: 4,
            grid: Grid::square(8),
            ..GeneratorConfig::default()
        };
        let cohort = generate_cohort(&cfg, 1).unwrap();
        let params = init_model(&ArchConfig::micro(), 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let cache = RepCache::new(dir.path());
        let first = cache.get_or_compute("k", &params, &cohort).unwrap();
        assert_eq!(first, extract_representations(&params, &cohort.images).unwrap());
        // Overwrite the entry with recognizable values of the right shape.
        let fake: Vec<_> = first.iter().map(|r| Representation(vec![7.0; r.len()])).collect();
        fs::write(cache.path("k"), encode_reps(&fake)).unwrap();
        assert_eq!(cache.get_or_compute("k", &params, &cohort).unwrap(), fake);
        fs::write(cache.path("k"), b"junk").unwrap();
        assert_eq!(cache.get_or_compute("k", &params, &cohort).unwrap(), first);
    }
}
