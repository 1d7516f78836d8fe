//! Run configuration: one JSON document with a section per stage. Every
//! field has a default and unknown keys are rejected.

use std::path::Path;

use lssl_core::analysis::AnalysisConfig;
use lssl_core::downstream::{BaselineConfig, BaselineKind, ClassifierConfig, HeadKind, Mode};
use lssl_core::rng::derive_seed;
use lssl_core::synthgen::GeneratorConfig;
use lssl_core::trainer::{LambdaSetting, TrainConfig};
use lssl_core::verify::VerifyConfig;
use lssl_core::ArchConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub const SEED_ENV: &str = "LSSL_SEED";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub synthgen: GeneratorConfig,
    pub model: ArchConfig,
    pub objective: ObjectiveSection,
    pub trainer: TrainerSection,
    pub analysis: AnalysisConfig,
    pub verify: VerifySection,
    pub downstream: DownstreamSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 17,
            synthgen: GeneratorConfig::default(),
            model: ArchConfig::desk(),
            objective: ObjectiveSection::default(),
            trainer: TrainerSection::default(),
            analysis: AnalysisConfig::default(),
            verify: VerifySection::default(),
            downstream: DownstreamSection::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObjectiveSection {
    pub lambda: LambdaSetting,
    pub min_gap_years: f64,
}

impl Default for ObjectiveSection {
    fn default() -> Self {
        Self {
            lambda: LambdaSetting::Auto,
            min_gap_years: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerSection {
    pub epochs: usize,
    pub batch_images: usize,
    pub batch_pairs: usize,
    pub learning_rate: f64,
    pub eval_every: usize,
}

impl Default for TrainerSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            epochs: t.epochs,
            batch_images: t.batch_images,
            batch_pairs: t.batch_pairs,
            learning_rate: t.learning_rate,
            eval_every: t.eval_every,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySection {
    /// Size of the held-out cohort generated next to the training cohort.
    pub heldout_subjects: usize,
    pub n_probes: usize,
    pub delta: f64,
    pub probe_seed: u64,
}

impl Default for VerifySection {
    fn default() -> Self {
        let v = VerifyConfig::default();
        Self {
            heldout_subjects: 60,
            n_probes: v.n_probes,
            delta: v.delta,
            probe_seed: v.probe_seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierSection {
    pub mlp_hidden: Option<[usize; 2]>,
    pub gru_projection: usize,
    pub gru_hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for ClassifierSection {
    fn default() -> Self {
        let c = ClassifierConfig::default();
        Self {
            mlp_hidden: None,
            gru_projection: c.gru_projection,
            gru_hidden: c.gru_hidden,
            epochs: c.epochs,
            batch_size: c.batch_size,
            learning_rate: c.learning_rate,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DownstreamSection {
    pub folds: usize,
    /// Independent split and head seeds per setting.
    pub repeats: usize,
    pub heads: Vec<HeadKind>,
    pub modes: Vec<Mode>,
    /// Pretrained encoders compared against the main model.
    pub baselines: Vec<BaselineKind>,
    pub beta: f64,
    pub classifier: ClassifierSection,
}

impl Default for DownstreamSection {
    fn default() -> Self {
        Self {
            folds: 5,
            repeats: 3,
            heads: vec![HeadKind::Mlp, HeadKind::Gru],
            modes: vec![Mode::Frozen],
            baselines: vec![BaselineKind::Ae],
            beta: BaselineConfig::default().beta,
            classifier: ClassifierSection::default(),
        }
    }
}

impl RunConfig {
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.trainer.epochs,
            batch_images: self.trainer.batch_images,
            batch_pairs: self.trainer.batch_pairs,
            learning_rate: self.trainer.learning_rate,
            lambda: self.objective.lambda,
            seed: self.seed,
            min_gap_years: self.objective.min_gap_years,
            eval_every: self.trainer.eval_every,
        }
    }

    pub fn heldout_generator(&self) -> GeneratorConfig {
        GeneratorConfig {
            n_subjects: self.verify.heldout_subjects,
            id_prefix: format!("{}H", self.synthgen.id_prefix),
            ..self.synthgen.clone()
        }
    }

    pub fn heldout_seed(&self) -> u64 {
        derive_seed(self.seed, &[1])
    }

    pub fn verify_config(&self) -> VerifyConfig {
        VerifyConfig {
            n_probes: self.verify.n_probes,
            delta: self.verify.delta,
            probe_seed: self.verify.probe_seed,
        }
    }

    /// Seed for the split and head of repeat `r`.
    pub fn repeat_seed(&self, r: usize) -> u64 {
        derive_seed(self.seed, &[2, r as u64])
    }

    pub fn classifier_config(&self, head: HeadKind, mode: Mode, repeat: usize) -> ClassifierConfig {
        let c = &self.downstream.classifier;
        ClassifierConfig {
            head,
            mode,
            mlp_hidden: c
                .mlp_hidden
                .unwrap_or_else(|| ClassifierConfig::scaled_mlp_hidden(self.model.latent_dim)),
            gru_projection: c.gru_projection,
            gru_hidden: c.gru_hidden,
            epochs: c.epochs,
            batch_size: c.batch_size,
            learning_rate: c.learning_rate,
            seed: self.repeat_seed(repeat),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.synthgen.validate()?;
        self.model.validate()?;
        self.train_config().validate()?;
        if self.model.grid != self.synthgen.grid.size || self.model.dim != self.synthgen.grid.dim {
            return Err(CliError::Config(format!(
                "model expects {}-d grid {} but the generator produces {}-d grid {}",
                self.model.dim, self.model.grid, self.synthgen.grid.dim, self.synthgen.grid.size
            )));
        }
        if self.verify.heldout_subjects == 0 || self.verify.n_probes == 0 || !(self.verify.delta != 0.0) {
            return Err(CliError::Config("verify section needs subjects, probes and a nonzero delta".into()));
        }
        let d = &self.downstream;
        if d.folds < 2 || d.repeats == 0 {
            return Err(CliError::Config("downstream needs folds >= 2 and repeats >= 1".into()));
        }
        if !(d.beta > 0.0) {
            return Err(CliError::Config(format!("beta must be positive, got {}", d.beta)));
        }
        self.classifier_config(HeadKind::Mlp, Mode::Frozen, 0).validate()?;
        if self.analysis.traversal_steps == 0 {
            return Err(CliError::Config("analysis.traversal_steps must be positive".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn sha256(&self) -> String {
        hex(&Sha256::digest(serde_json::to_vec(self).expect("config serializes")))
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// A config file, or the `run_metadata.json` of an earlier run (whose
/// embedded config is checked against its recorded hash). `LSSL_SEED`
/// overrides the seed in either case.
pub fn load_config(path: &Path, seed_override: Option<&str>) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            CliError::Missing(path.to_path_buf())
        } else {
            CliError::io(path, e)
        }
    })?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| CliError::json(path, e))?;
    let mut config: RunConfig = if value.get("config_sha256").is_some() {
        let meta: crate::metadata::RunMetadata = serde_json::from_value(value).map_err(|e| CliError::json(path, e))?;
        if meta.config.sha256() != meta.config_sha256 {
            return Err(CliError::Config(format!(
                "{}: embedded config does not match its recorded hash",
                path.display()
            )));
        }
        meta.config
    } else {
        serde_json::from_value(value).map_err(|e| CliError::json(path, e))?
    };
    if let Some(s) = seed_override {
        config.seed = s
            .trim()
            .parse()
            .map_err(|_| CliError::Config(format!("{SEED_ENV}={s} is not an unsigned integer")))?;
    }
    config.validate()?;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, text: &str) -> std::path::PathBuf {
        let p = dir.join("c.json");
        std::fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn empty_object_gives_defaults() {
        let d = tempfile::tempdir().unwrap();
        let c = load_config(&write(d.path(), "{}"), None).unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.synthgen.n_subjects, 200);
        assert_eq!(c.model.latent_dim, 32);
        assert_eq!(c.trainer.epochs, 30);
        assert_eq!(c.objective.lambda, LambdaSetting::Auto);
        assert_eq!(c.classifier_config(HeadKind::Mlp, Mode::Frozen, 0).mlp_hidden, [32, 4]);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let d = tempfile::tempdir().unwrap();
        for text in [r#"{"sed": 1}"#, r#"{"trainer": {"epoch": 3}}"#, r#"{"synthgen": {"cohort": {"x": 1}}}"#] {
            assert!(matches!(load_config(&write(d.path(), text), None), Err(CliError::Json { .. })), "{text}");
        }
    }

    #[test]
    fn lambda_accepts_number_or_auto() {
        let d = tempfile::tempdir().unwrap();
        let c = load_config(&write(d.path(), r#"{"objective": {"lambda": 0.5}}"#), None).unwrap();
        assert_eq!(c.objective.lambda, LambdaSetting::Fixed(0.5));
        let c = load_config(&write(d.path(), r#"{"objective": {"lambda": "auto"}}"#), None).unwrap();
        assert_eq!(c.objective.lambda, LambdaSetting::Auto);
        assert!(load_config(&write(d.path(), r#"{"objective": {"lambda": "big"}}"#), None).is_err());
    }

    #[test]
    fn seed_override() {
        let d = tempfile::tempdir().unwrap();
        let p = write(d.path(), r#"{"seed": 3}"#);
        assert_eq!(load_config(&p, Some("99")).unwrap().seed, 99);
        assert!(matches!(load_config(&p, Some("x")), Err(CliError::Config(_))));
    }

    #[test]
    fn mismatched_grid_is_rejected() {
        let d = tempfile::tempdir().unwrap();
        let p = write(d.path(), r#"{"model": {"grid": 16}}"#);
        assert!(matches!(load_config(&p, None), Err(CliError::Config(_))));
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let mut b = a.clone();
        assert_eq!(a.sha256(), b.sha256());
        b.seed += 1;
        assert_ne!(a.sha256(), b.sha256());
        assert_eq!(a.sha256().len(), 64);
    }
}
