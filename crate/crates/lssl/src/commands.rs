//! The six pipeline commands. Each reads its inputs from the output tree of
//! earlier commands, writes its own stage directory and a
//! `run_metadata.json` next to its outputs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use lssl_core::analysis::{analyze, AnalysisReport};
use lssl_core::downstream::{
    baseline_pretrain, crossval_split, train_classifier, train_frozen, BaselineConfig, BaselineKind, EvalResult,
    HeadKind, Mode,
};
use lssl_core::model::init_model;
use lssl_core::objective::build_pairs;
use lssl_core::synthgen::{generate_cohort, render_image};
use lssl_core::trainer::train;
use lssl_core::verify::{
    condition1_score, condition2_score, factor_independence_report, DisentanglementReport, ProbeSet,
};
use lssl_core::{Cohort, Group, ModelParams};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cache::{cache_key, RepCache};
use crate::checkpoint::Checkpoint;
use crate::config::{hex, RunConfig};
use crate::dataset::{ensure_dir, load_cohort, read_json, write_dataset, write_json, MANIFEST_FILE};
use crate::error::{CliError, Result};
use crate::metadata::RunMetadata;
use crate::plots;
use crate::tensor_file::{read_tensor, write_tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Generate,
    Train,
    Verify,
    Analyze,
    Classify,
    Plot,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Generate => "generate",
            Command::Train => "train",
            Command::Verify => "verify",
            Command::Analyze => "analyze",
            Command::Classify => "classify",
            Command::Plot => "plot",
        }
    }
}

/// Paths of every artifact under an output root.
#[derive(Clone, Debug)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }
    pub fn data(&self) -> PathBuf {
        self.root.join("data")
    }
    pub fn train_data(&self) -> PathBuf {
        self.data().join("train")
    }
    pub fn heldout_data(&self) -> PathBuf {
        self.data().join("heldout")
    }
    pub fn train_dir(&self) -> PathBuf {
        self.root.join("train")
    }
    pub fn checkpoint(&self) -> PathBuf {
        self.train_dir().join("checkpoint.lsslckpt")
    }
    pub fn best_checkpoint(&self) -> PathBuf {
        self.train_dir().join("best.lsslckpt")
    }
    pub fn diverged_checkpoint(&self) -> PathBuf {
        self.train_dir().join("diverged.lsslckpt")
    }
    pub fn metrics(&self) -> PathBuf {
        self.train_dir().join("metrics.csv")
    }
    pub fn history(&self) -> PathBuf {
        self.train_dir().join("history.json")
    }
    pub fn verify_dir(&self) -> PathBuf {
        self.root.join("verify")
    }
    pub fn report(&self) -> PathBuf {
        self.verify_dir().join("disentanglement_report.json")
    }
    pub fn analysis_dir(&self) -> PathBuf {
        self.root.join("analysis")
    }
    pub fn analysis_json(&self) -> PathBuf {
        self.analysis_dir().join("analysis.json")
    }
    pub fn analysis_csv(&self) -> PathBuf {
        self.analysis_dir().join("analysis.csv")
    }
    pub fn traversal(&self, step: usize) -> PathBuf {
        self.analysis_dir().join("traversal").join(format!("step_{step}.lssl"))
    }
    pub fn classify_dir(&self) -> PathBuf {
        self.root.join("classify")
    }
    pub fn eval_json(&self) -> PathBuf {
        self.classify_dir().join("eval.json")
    }
    pub fn eval_csv(&self) -> PathBuf {
        self.classify_dir().join("eval_accuracy.csv")
    }
    pub fn baseline(&self, kind: BaselineKind) -> PathBuf {
        self.classify_dir().join("baselines").join(format!("{}.lsslckpt", kind.as_str()))
    }
    pub fn rep_cache(&self) -> PathBuf {
        self.classify_dir().join("cache")
    }
    pub fn plots_dir(&self) -> PathBuf {
        self.root.join("plots")
    }
    pub fn stage_dir(&self, command: Command) -> PathBuf {
        match command {
            Command::Generate => self.data(),
            Command::Train => self.train_dir(),
            Command::Verify => self.verify_dir(),
            Command::Analyze => self.analysis_dir(),
            Command::Classify => self.classify_dir(),
            Command::Plot => self.plots_dir(),
        }
    }
}

/// Runs `command` and writes its run metadata.
pub fn run(command: Command, config: &RunConfig, out: &Path) -> Result<()> {
    let layout = Layout::new(out);
    let start = Instant::now();
    match command {
        Command::Generate => cmd_generate(config, &layout),
        Command::Train => cmd_train(config, &layout),
        Command::Verify => cmd_verify(config, &layout),
        Command::Analyze => cmd_analyze(config, &layout),
        Command::Classify => cmd_classify(config, &layout),
        Command::Plot => cmd_plot(&layout),
    }?;
    RunMetadata::new(command.name(), config, start.elapsed().as_secs_f64()).write(&layout.stage_dir(command))
}

pub fn cmd_generate(config: &RunConfig, layout: &Layout) -> Result<()> {
    let train = generate_cohort(&config.synthgen, config.seed)?;
    write_dataset(&layout.train_data(), &train)?;
    let heldout = generate_cohort(&config.heldout_generator(), config.heldout_seed())?;
    write_dataset(&layout.heldout_data(), &heldout)?;
    for (name, c) in [("train", &train), ("heldout", &heldout)] {
        let diseased = c.manifest.subjects.iter().filter(|s| s.group == Group::Diseased).count();
        println!(
            "{name}: {} subjects ({} control, {diseased} diseased), {} images",
            c.manifest.subjects.len(),
            c.manifest.subjects.len() - diseased,
            c.n_images()
        );
    }
    Ok(())
}

fn load_params(layout: &Layout) -> Result<ModelParams> {
    Ok(Checkpoint::load(&layout.checkpoint())?.params)
}

fn check_arch(config: &RunConfig, params: &ModelParams) -> Result<()> {
    if params.arch != config.model {
        return Err(CliError::Config(
            "checkpoint architecture differs from the configured model".into(),
        ));
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MetricsRow {
    pub epoch: usize,
    pub recon: f64,
    pub align: f64,
    pub total: f64,
    pub tau_norm: f64,
    pub wall_seconds: f64,
}

pub fn cmd_train(config: &RunConfig, layout: &Layout) -> Result<()> {
    let cohort = load_cohort(&layout.train_data())?;
    let params = init_model(&config.model, config.seed)?;
    let train_config = config.train_config();
    ensure_dir(&layout.train_dir())?;
    let metrics_path = layout.metrics();
    let csv_err = |e| CliError::Csv {
        path: metrics_path.clone(),
        source: e,
    };
    let mut metrics = csv::Writer::from_path(&metrics_path).map_err(csv_err)?;
    let mut failure: Option<CliError> = None;
    let mut wrote_best = false;
    let start = Instant::now();
    let outcome = train(&cohort, params, &train_config, &mut |event| {
        if failure.is_some() {
            return;
        }
        let s = event.stats;
        let row = MetricsRow {
            epoch: s.epoch,
            recon: s.loss.recon,
            align: s.loss.align,
            total: s.loss.total,
            tau_norm: s.tau_norm,
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        let ckpt = Checkpoint {
            params: event.params.clone(),
            step: event.step,
            epoch: s.epoch,
            rng_seed: config.seed,
            rng_word_pos: event.rng_word_pos,
        };
        let result = metrics
            .serialize(&row)
            .and_then(|_| metrics.flush().map_err(csv::Error::from))
            .map_err(csv_err)
            .and_then(|_| ckpt.save(&layout.checkpoint()))
            .and_then(|_| {
                if event.is_best {
                    wrote_best = true;
                    ckpt.save(&layout.best_checkpoint())
                } else {
                    Ok(())
                }
            });
        if let Err(e) = result {
            failure = Some(e);
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    let outcome = match outcome {
        Ok(o) => o,
        Err(lssl_core::Error::Divergence { epoch, last_finite }) => {
            let ckpt = Checkpoint {
                params: (*last_finite).clone(),
                step: 0,
                epoch: epoch.saturating_sub(1),
                rng_seed: config.seed,
                rng_word_pos: 0,
            };
            ckpt.save(&layout.diverged_checkpoint())?;
            return Err(lssl_core::Error::Divergence { epoch, last_finite }.into());
        }
        Err(e) => return Err(e.into()),
    };
    if !wrote_best {
        fs::copy(layout.checkpoint(), layout.best_checkpoint()).map_err(|e| CliError::io(layout.best_checkpoint(), e))?;
    }
    let mut history = outcome.history;
    history.wall_seconds = Some(start.elapsed().as_secs_f64());
    history.final_checkpoint = Some("checkpoint.lsslckpt".into());
    write_json(&layout.history(), &history)?;
    if let Some(last) = history.epochs.last() {
        println!(
            "trained {} epochs: recon {:.5}, align {:.4}, lambda {:.4}",
            last.epoch, last.loss.recon, last.loss.align, history.lambda
        );
    }
    Ok(())
}

pub fn disentanglement(
    config: &RunConfig,
    params: &ModelParams,
    train: &Cohort,
    heldout: &Cohort,
) -> Result<DisentanglementReport> {
    let pairs = build_pairs(&train.manifest, config.objective.min_gap_years)?;
    let c1 = condition1_score(params, &train.images, &pairs)?;
    let v = config.verify_config();
    let probes = ProbeSet::from_manifest(&heldout.manifest, v.n_probes, v.delta, v.probe_seed)?;
    let grid = config.synthgen.grid;
    let c2 = condition2_score(params, &probes, |alpha| {
        render_image(alpha, grid, 0.0, 0).map(|im| im.quantize_f32())
    })?;
    let heldout_analysis = analyze(params, heldout, &config.analysis)?;
    let correlations = factor_independence_report(&heldout_analysis.records, &heldout.manifest)?;
    Ok(DisentanglementReport::new(c1, c2, correlations))
}

pub fn cmd_verify(config: &RunConfig, layout: &Layout) -> Result<()> {
    let params = load_params(layout)?;
    check_arch(config, &params)?;
    let train = load_cohort(&layout.train_data())?;
    let heldout = load_cohort(&layout.heldout_data())?;
    let report = disentanglement(config, &params, &train, &heldout)?;
    ensure_dir(&layout.verify_dir())?;
    write_json(&layout.report(), &report)?;
    println!(
        "condition 1: mean cosine {:.4}; condition 2: mean ratio {:.4}",
        report.condition1_mean_cosine,
        report.condition2.mean_ratio().unwrap_or(f64::NAN)
    );
    Ok(())
}

/// `analysis.json`: the analysis report plus the disentanglement report
/// when `verify` ran first.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AnalysisFile {
    #[serde(flatten)]
    pub report: AnalysisReport,
    pub disentanglement: Option<DisentanglementReport>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct AnalysisRow {
    pub subject_id: String,
    pub group: Group,
    pub visit_index: usize,
    pub age_years: f64,
    pub psi_raw: f64,
    pub psi_normalized: f64,
    pub slope: Option<f64>,
}

pub fn cmd_analyze(config: &RunConfig, layout: &Layout) -> Result<()> {
    let params = load_params(layout)?;
    check_arch(config, &params)?;
    let cohort = load_cohort(&layout.train_data())?;
    let report = analyze(&params, &cohort, &config.analysis)?;
    let disentanglement = match read_json::<DisentanglementReport>(&layout.report()) {
        Ok(r) => Some(r),
        Err(CliError::Missing(_)) => None,
        Err(e) => return Err(e),
    };
    ensure_dir(&layout.analysis_dir())?;
    ensure_dir(&layout.analysis_dir().join("traversal"))?;
    for (i, image) in report.traversal.images.iter().enumerate() {
        write_tensor(&layout.traversal(i), image)?;
    }
    let path = layout.analysis_csv();
    let csv_err = |e| CliError::Csv {
        path: path.clone(),
        source: e,
    };
    let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
    for r in &report.records {
        for v in &r.visits {
            w.serialize(AnalysisRow {
                subject_id: r.subject_id.clone(),
                group: r.group,
                visit_index: v.visit_index,
                age_years: v.age_years,
                psi_raw: v.psi_raw,
                psi_normalized: v.psi_normalized,
                slope: r.slope,
            })
            .map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| CliError::io(&path, e))?;
    if let (Some(ratio), Some(test)) = (report.slope_ratio, &report.slope_test) {
        println!("slope ratio diseased/control {ratio:.3}, Welch t {:.3}, p {:.3e}", test.t, test.p);
    }
    write_json(&layout.analysis_json(), &AnalysisFile { report, disentanglement })
}

pub fn setting_name(head: HeadKind) -> &'static str {
    match head {
        HeadKind::Mlp => "cross_sectional",
        HeadKind::Gru => "longitudinal",
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalEntry {
    /// `lssl`, a baseline kind, or `none` for a randomly initialized encoder.
    pub method: String,
    pub setting: String,
    pub repeat: usize,
    pub result: EvalResult,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalSummary {
    pub method: String,
    pub mode: Mode,
    pub setting: String,
    /// Every fold of every repeat.
    pub accuracies: Vec<f64>,
    pub mean_accuracy: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalFile {
    pub folds: usize,
    pub repeats: usize,
    pub entries: Vec<EvalEntry>,
    pub summary: Vec<EvalSummary>,
}

impl EvalFile {
    pub fn summary_for(&self, method: &str, mode: Mode, head: HeadKind) -> Option<&EvalSummary> {
        self.summary
            .iter()
            .find(|s| s.method == method && s.mode == mode && s.setting == setting_name(head))
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct AccuracyRow {
    pub method: String,
    pub mode: Mode,
    pub setting: String,
    /// `repeat * folds + fold`.
    pub fold: usize,
    pub epoch: usize,
    pub accuracy: f64,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

/// Pretrains `kind`, or reuses the stored encoder when it was trained from
/// the same settings and manifest.
fn baseline_params(
    config: &RunConfig,
    layout: &Layout,
    kind: BaselineKind,
    cohort: &Cohort,
    manifest_bytes: &[u8],
) -> Result<ModelParams> {
    let path = layout.baseline(kind);
    let key_path = path.with_extension("key");
    let key = {
        let settings = serde_json::json!({
            "kind": kind,
            "model": config.model,
            "trainer": config.train_config(),
            "beta": config.downstream.beta,
            "manifest": sha256_hex(manifest_bytes),
        });
        sha256_hex(settings.to_string().as_bytes())
    };
    if fs::read_to_string(&key_path).is_ok_and(|k| k.trim() == key) {
        if let Ok(ckpt) = Checkpoint::load(&path) {
            return Ok(ckpt.params);
        }
    }
    let baseline = BaselineConfig {
        beta: config.downstream.beta,
    };
    let (params, _) = baseline_pretrain(kind, cohort, &config.model, &config.train_config(), &baseline)?;
    ensure_dir(path.parent().expect("baseline path has a parent"))?;
    Checkpoint {
        params: params.clone(),
        step: 0,
        epoch: config.trainer.epochs,
        rng_seed: config.seed,
        rng_word_pos: 0,
    }
    .save(&path)?;
    fs::write(&key_path, format!("{key}\n")).map_err(|e| CliError::io(&key_path, e))?;
    Ok(params)
}

pub fn cmd_classify(config: &RunConfig, layout: &Layout) -> Result<()> {
    let ckpt_path = layout.checkpoint();
    let ckpt_bytes = fs::read(&ckpt_path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => CliError::Missing(ckpt_path.clone()),
        _ => CliError::io(&ckpt_path, e),
    })?;
    let lssl = Checkpoint::from_bytes(&ckpt_bytes)
        .map_err(|e| CliError::Config(format!("{}: {e}", ckpt_path.display())))?
        .params;
    check_arch(config, &lssl)?;
    let cohort = load_cohort(&layout.train_data())?;
    let manifest_path = layout.train_data().join(MANIFEST_FILE);
    let manifest_bytes = fs::read(&manifest_path).map_err(|e| CliError::io(&manifest_path, e))?;
    ensure_dir(&layout.classify_dir())?;

    let mut methods: Vec<(String, ModelParams, Vec<u8>)> = vec![("lssl".into(), lssl, ckpt_bytes)];
    for &kind in &config.downstream.baselines {
        let params = baseline_params(config, layout, kind, &cohort, &manifest_bytes)?;
        let bytes = fs::read(layout.baseline(kind)).map_err(|e| CliError::io(layout.baseline(kind), e))?;
        methods.push((kind.as_str().into(), params, bytes));
    }

    let d = &config.downstream;
    let cache = RepCache::new(&layout.rep_cache());
    let mut entries = Vec::new();
    for (name, params, bytes) in &methods {
        let pretrained_modes: Vec<Mode> = d.modes.iter().copied().filter(|m| *m != Mode::NoPretrain).collect();
        let reps = if pretrained_modes.contains(&Mode::Frozen) {
            Some(cache.get_or_compute(&cache_key(bytes, &manifest_bytes), params, &cohort)?)
        } else {
            None
        };
        for repeat in 0..d.repeats {
            let folds = crossval_split(&cohort.manifest, d.folds, config.repeat_seed(repeat))?;
            for &mode in &pretrained_modes {
                for &head in &d.heads {
                    let cc = config.classifier_config(head, mode, repeat);
                    let result = match (&reps, mode) {
                        (Some(reps), Mode::Frozen) => train_frozen(&cc, &folds, &cohort.manifest, reps)?,
                        _ => train_classifier(&cc, &folds, &cohort, params)?,
                    };
                    entries.push(EvalEntry {
                        method: name.clone(),
                        setting: setting_name(head).into(),
                        repeat,
                        result,
                    });
                }
            }
        }
    }
    if d.modes.contains(&Mode::NoPretrain) {
        for repeat in 0..d.repeats {
            let folds = crossval_split(&cohort.manifest, d.folds, config.repeat_seed(repeat))?;
            for &head in &d.heads {
                let cc = config.classifier_config(head, Mode::NoPretrain, repeat);
                entries.push(EvalEntry {
                    method: "none".into(),
                    setting: setting_name(head).into(),
                    repeat,
                    result: train_classifier(&cc, &folds, &cohort, &methods[0].1)?,
                });
            }
        }
    }

    let mut grouped: BTreeMap<(String, &'static str, String), Vec<f64>> = BTreeMap::new();
    for e in &entries {
        grouped
            .entry((e.method.clone(), e.result.mode.as_str(), e.setting.clone()))
            .or_default()
            .extend(e.result.accuracies());
    }
    let summary: Vec<EvalSummary> = entries
        .iter()
        .filter(|e| e.repeat == 0)
        .map(|e| {
            let accuracies = grouped[&(e.method.clone(), e.result.mode.as_str(), e.setting.clone())].clone();
            let mean_accuracy = accuracies.iter().sum::<f64>() / accuracies.len().max(1) as f64;
            EvalSummary {
                method: e.method.clone(),
                mode: e.result.mode,
                setting: e.setting.clone(),
                accuracies,
                mean_accuracy,
            }
        })
        .collect();

    let path = layout.eval_csv();
    let csv_err = |e| CliError::Csv {
        path: path.clone(),
        source: e,
    };
    let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
    for e in &entries {
        for f in &e.result.folds {
            for (i, accuracy) in f.curve.iter().enumerate() {
                w.serialize(AccuracyRow {
                    method: e.method.clone(),
                    mode: e.result.mode,
                    setting: e.setting.clone(),
                    fold: e.repeat * d.folds + f.fold,
                    epoch: i + 1,
                    accuracy: *accuracy,
                })
                .map_err(csv_err)?;
            }
        }
    }
    w.flush().map_err(|e| CliError::io(&path, e))?;
    for s in &summary {
        println!("{:>8} {:>10} {:>15}: {:.3}", s.method, s.mode.as_str(), s.setting, s.mean_accuracy);
    }
    write_json(
        &layout.eval_json(),
        &EvalFile {
            folds: d.folds,
            repeats: d.repeats,
            entries,
            summary,
        },
    )
}

/// Mean accuracy per epoch for each (mode, setting) and method, averaged
/// over folds.
pub fn convergence_curves(rows: &[AccuracyRow]) -> BTreeMap<(String, String), Vec<(String, Vec<f64>)>> {
    let mut acc: BTreeMap<(String, String), BTreeMap<String, Vec<(f64, usize)>>> = BTreeMap::new();
    for r in rows {
        let curve = acc
            .entry((r.mode.as_str().to_string(), r.setting.clone()))
            .or_default()
            .entry(r.method.clone())
            .or_default();
        if curve.len() < r.epoch {
            curve.resize(r.epoch, (0.0, 0));
        }
        let slot = &mut curve[r.epoch - 1];
        slot.0 += r.accuracy;
        slot.1 += 1;
    }
    acc.into_iter()
        .map(|(k, methods)| {
            let series = methods
                .into_iter()
                .map(|(m, c)| (m, c.into_iter().map(|(s, n)| s / n.max(1) as f64).collect()))
                .collect();
            (k, series)
        })
        .collect()
}

pub fn read_accuracy_csv(path: &Path) -> Result<Vec<AccuracyRow>> {
    let file = crate::dataset::open_artifact(path)?;
    csv::Reader::from_reader(file)
        .deserialize()
        .collect::<std::result::Result<Vec<AccuracyRow>, _>>()
        .map_err(|e| CliError::Csv {
            path: path.to_path_buf(),
            source: e,
        })
}

/// File names written by `plot`, besides the convergence figures.
pub const SCATTER_FILE: &str = "brain_age_scatter.svg";
pub const BOXPLOT_FILE: &str = "slope_boxplot.svg";
pub const STRIP_FILE: &str = "traversal_strip.png";

pub fn convergence_file(mode: &str, setting: &str) -> String {
    format!("convergence_{mode}_{setting}.svg")
}

pub fn cmd_plot(layout: &Layout) -> Result<()> {
    let analysis: AnalysisFile = read_json(&layout.analysis_json())?;
    let report = &analysis.report;
    if report.records.is_empty() {
        return Err(CliError::Empty(layout.analysis_json()));
    }
    let rows = read_accuracy_csv(&layout.eval_csv())?;
    if rows.is_empty() {
        return Err(CliError::Empty(layout.eval_csv()));
    }
    let dir = ensure_dir(&layout.plots_dir())?;

    let points: Vec<(f64, f64, Group)> = report
        .records
        .iter()
        .flat_map(|r| r.visits.iter().map(move |v| (v.age_years, v.psi_normalized, r.group)))
        .collect();
    let trends: Vec<_> = report
        .groups
        .iter()
        .filter_map(|g| g.trend.clone().map(|t| (g.group, t)))
        .collect();
    plots::brain_age_scatter(&dir.join(SCATTER_FILE), &points, &trends)?;

    let slopes: Vec<(Group, Vec<f64>)> = [Group::Control, Group::Diseased]
        .into_iter()
        .map(|g| {
            let s = report.records.iter().filter(|r| r.group == g).filter_map(|r| r.slope).collect();
            (g, s)
        })
        .collect();
    plots::slope_boxplot(&dir.join(BOXPLOT_FILE), &slopes)?;

    let images = (0..report.traversal.psi_grid.len())
        .map(|i| read_tensor(&layout.traversal(i)))
        .collect::<Result<Vec<_>>>()?;
    plots::traversal_strip(&dir.join(STRIP_FILE), &images)?;

    for ((mode, setting), series) in convergence_curves(&rows) {
        let title = format!("{mode}, {}", setting.replace('_', "-"));
        plots::convergence(&dir.join(convergence_file(&mode, &setting)), &title, &series)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(method: &str, setting: &str, fold: usize, epoch: usize, accuracy: f64) -> AccuracyRow {
        AccuracyRow {
            method: method.into(),
            mode: Mode::Frozen,
            setting: setting.into(),
            fold,
            epoch,
            accuracy,
        }
    }

    #[test]
    fn curves_average_over_folds() {
        let rows = vec![
            row("lssl", "longitudinal", 0, 1, 0.5),
            row("lssl", "longitudinal", 0, 2, 0.7),
            row("lssl", "longitudinal", 1, 1, 0.7),
            row("lssl", "longitudinal", 1, 2, 0.9),
            row("ae", "longitudinal", 0, 1, 0.4),
            row("ae", "cross_sectional", 0, 1, 0.6),
        ];
        let curves = convergence_curves(&rows);
        assert_eq!(curves.len(), 2);
        let long = &curves[&("frozen".to_string(), "longitudinal".to_string())];
        assert_eq!(long.len(), 2);
        let lssl = long.iter().find(|s| s.0 == "lssl").unwrap();
        assert!((lssl.1[0] - 0.6).abs() < 1e-12 && (lssl.1[1] - 0.8).abs() < 1e-12);
    }
}
