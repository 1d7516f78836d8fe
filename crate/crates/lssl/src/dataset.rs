//! On-disk datasets: `manifest.jsonl` with one line per image,
//! `generator.json` with the generator settings and seed, and one tensor
//! file per image under `images/`.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use lssl_core::synthgen::{GeneratorConfig, Visit};
use lssl_core::{Cohort, DatasetManifest, FactorVector, Group, SubjectTrajectory};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::tensor_file::{read_tensor, write_tensor};

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const GENERATOR_FILE: &str = "generator.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestLine {
    pub subject_id: String,
    pub group: Group,
    pub visit_index: usize,
    pub time_years: f64,
    pub factors: Vec<f64>,
    pub image_path: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorRecord {
    pub config: GeneratorConfig,
    pub seed: u64,
}

pub fn manifest_lines(manifest: &DatasetManifest) -> Vec<ManifestLine> {
    manifest
        .subjects
        .iter()
        .flat_map(|s| {
            s.visits.iter().enumerate().map(move |(i, v)| ManifestLine {
                subject_id: s.subject_id.clone(),
                group: s.group,
                visit_index: i,
                time_years: v.time_years,
                factors: v.factors.as_slice().to_vec(),
                image_path: v.image_ref.clone(),
            })
        })
        .collect()
}

/// Writes every image and the manifest of `cohort` under `dir`.
pub fn write_dataset(dir: &Path, cohort: &Cohort) -> Result<()> {
    fs::create_dir_all(dir.join("images")).map_err(|e| CliError::io(dir, e))?;
    for (line, image) in manifest_lines(&cohort.manifest).iter().zip(&cohort.images) {
        write_tensor(&dir.join(&line.image_path), image)?;
    }
    let path = dir.join(MANIFEST_FILE);
    let file = fs::File::create(&path).map_err(|e| CliError::io(&path, e))?;
    let mut w = BufWriter::new(file);
    for line in manifest_lines(&cohort.manifest) {
        serde_json::to_writer(&mut w, &line).map_err(|e| CliError::json(&path, e))?;
        w.write_all(b"\n").map_err(|e| CliError::io(&path, e))?;
    }
    w.flush().map_err(|e| CliError::io(&path, e))?;
    let gen = GeneratorRecord {
        config: cohort.manifest.config.clone(),
        seed: cohort.manifest.seed,
    };
    write_json(&dir.join(GENERATOR_FILE), &gen)
}

pub fn read_manifest(dir: &Path) -> Result<DatasetManifest> {
    let path = dir.join(MANIFEST_FILE);
    let file = open_artifact(&path)?;
    let gen: GeneratorRecord = read_json(&dir.join(GENERATOR_FILE))?;
    let mut subjects: Vec<SubjectTrajectory> = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CliError::io(&path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ManifestLine = serde_json::from_str(&line).map_err(|e| CliError::json(&path, e))?;
        let visit = Visit {
            time_years: rec.time_years,
            factors: FactorVector::new(rec.factors)?,
            image_ref: rec.image_path,
        };
        match subjects.last_mut() {
            Some(s) if s.subject_id == rec.subject_id => {
                if rec.visit_index != s.visits.len() || rec.group != s.group {
                    return Err(CliError::Config(format!(
                        "{}:{}: visit out of order for {}",
                        path.display(),
                        n + 1,
                        rec.subject_id
                    )));
                }
                s.visits.push(visit);
            }
            _ => {
                if rec.visit_index != 0 {
                    return Err(CliError::Config(format!(
                        "{}:{}: {} does not start at visit 0",
                        path.display(),
                        n + 1,
                        rec.subject_id
                    )));
                }
                subjects.push(SubjectTrajectory {
                    subject_id: rec.subject_id,
                    group: rec.group,
                    visits: vec![visit],
                });
            }
        }
    }
    let manifest = DatasetManifest {
        subjects,
        config: gen.config,
        seed: gen.seed,
    };
    manifest.validate()?;
    Ok(manifest)
}

/// Reads the manifest and every image it references.
pub fn load_cohort(dir: &Path) -> Result<Cohort> {
    let manifest = read_manifest(dir)?;
    let images = manifest
        .subjects
        .iter()
        .flat_map(|s| s.visits.iter())
        .map(|v| read_tensor(&dir.join(&v.image_ref)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Cohort::new(manifest, images)?)
}

pub fn open_artifact(path: &Path) -> Result<fs::File> {
    fs::File::open(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            CliError::Missing(path.to_path_buf())
        } else {
            CliError::io(path, e)
        }
    })
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let file = open_artifact(path)?;
    serde_json::from_reader(BufReader::new(file)).map_err(|e| CliError::json(path, e))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| CliError::json(path, e))?;
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

pub fn ensure_dir(path: &Path) -> Result<PathBuf> {
    fs::create_dir_all(path).map_err(|e| CliError::io(path, e))?;
    Ok(path.to_path_buf())
}
