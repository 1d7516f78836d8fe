//! Diagnosis classification on top of learned representations: subject-level
//! cross-validation, a cross-sectional MLP head and a longitudinal GRU head,
//! in frozen, fine-tuned and from-scratch modes, plus the autoencoder and
//! variational pretraining baselines.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::math::{exp, sqrt};
use crate::model::{init_model, ArchConfig, EncoderCache, EncoderLayout, ModelParams, Representation};
use crate::nn::{bce_with_logit, relu_backward, relu_forward, Gru, GruStep, Linear};
use crate::optim::Adam;
use crate::rng::{derive_seed, rng_for, Rng};
use crate::synthgen::{Cohort, DatasetManifest, Group};
use crate::trainer::{train, LambdaSetting, TrainConfig};
use crate::{Error, Result};

const SPLIT_STREAM: u64 = 0x7370_6c69_74;
const HEAD_STREAM: u64 = 0x6865_6164;
const VAE_STREAM: u64 = 0x7661_65;

/// Subject id to fold index.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub k: usize,
    pub folds: BTreeMap<String, usize>,
}

impl FoldAssignment {
    pub fn fold_of(&self, subject_id: &str) -> Option<usize> {
        self.folds.get(subject_id).copied()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut out = vec![0; self.k];
        for &f in self.folds.values() {
            out[f] += 1;
        }
        out
    }
}

/// Shuffles subjects within each group, lays the groups end to end and deals
/// them round-robin into `k` folds.
pub fn crossval_split(manifest: &DatasetManifest, k: usize, seed: u64) -> Result<FoldAssignment> {
    let n = manifest.subjects.len();
    if k == 0 || k > n {
        return Err(Error::Split { k, subjects: n });
    }
    let mut rng = rng_for(seed, &[SPLIT_STREAM]);
    let mut order: Vec<&str> = Vec::with_capacity(n);
    for group in [Group::Control, Group::Diseased] {
        let mut ids: Vec<&str> = manifest
            .subjects
            .iter()
            .filter(|s| s.group == group)
            .map(|s| s.subject_id.as_str())
            .collect();
        ids.shuffle(&mut rng);
        order.extend(ids);
    }
    Ok(FoldAssignment {
        k,
        folds: order.iter().enumerate().map(|(i, id)| (String::from(*id), i % k)).collect(),
    })
}

pub fn extract_representations(params: &ModelParams, images: &[crate::ImageVolume]) -> Result<Vec<Representation>> {
    let enc = params.encoder_layout();
    images
        .iter()
        .map(|im| {
            params.check_image(im)?;
            Ok(Representation(enc.forward(&params.theta, im.data()).0))
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    Mlp,
    Gru,
}

impl HeadKind {
    pub fn as_str(self) -> &'static str {
        match self {
            HeadKind::Mlp => "mlp",
            HeadKind::Gru => "gru",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Frozen,
    FineTune,
    NoPretrain,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Frozen => "frozen",
            Mode::FineTune => "fine_tune",
            Mode::NoPretrain => "no_pretrain",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub head: HeadKind,
    pub mode: Mode,
    /// Two hidden widths of the MLP head.
    pub mlp_hidden: [usize; 2],
    pub gru_projection: usize,
    pub gru_hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            head: HeadKind::Gru,
            mode: Mode::Frozen,
            mlp_hidden: [32, 4],
            gru_projection: 16,
            gru_hidden: 16,
            epochs: 60,
            batch_size: 16,
            learning_rate: 1e-3,
            seed: 23,
        }
    }
}

impl ClassifierConfig {
    /// MLP widths `(512, 64)` at `K = 512`, scaled proportionally with K.
    pub fn scaled_mlp_hidden(latent_dim: usize) -> [usize; 2] {
        [latent_dim.max(1), (latent_dim / 8).max(1)]
    }

    pub fn validate(&self) -> Result<()> {
        if self.mlp_hidden.contains(&0) || self.gru_projection == 0 || self.gru_hidden == 0 {
            return Err(Error::Config("classifier widths must be positive".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("classifier epochs and batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("classifier learning_rate must be positive".into()));
        }
        Ok(())
    }
}

/// Classification head over K-dimensional features. The MLP reads a single
/// representation; the GRU reads a subject's representations in visit order
/// and classifies from its final state.
#[derive(Clone, Debug)]
pub struct Head {
    kind: HeadKind,
    layers: Vec<(Linear, usize)>,
    gru: Option<(Gru, usize)>,
    len: usize,
}

pub struct HeadCache {
    inputs: Vec<Vec<f64>>,
    /// Per layer input and ReLU mask (MLP) or projected inputs (GRU).
    acts: Vec<Vec<f64>>,
    masks: Vec<Vec<bool>>,
    projected: Vec<Vec<f64>>,
    steps: Vec<GruStep>,
    h: Vec<f64>,
}

impl Head {
    pub fn new(config: &ClassifierConfig, latent_dim: usize) -> Self {
        let mut cursor = 0;
        let push = |n_in: usize, n_out: usize, cursor: &mut usize| {
            let l = Linear { n_in, n_out };
            let at = *cursor;
            *cursor += l.weight_len() + n_out;
            (l, at)
        };
        match config.head {
            HeadKind::Mlp => {
                let [h1, h2] = config.mlp_hidden;
                let layers = vec![
                    push(latent_dim, h1, &mut cursor),
                    push(h1, h2, &mut cursor),
                    push(h2, 1, &mut cursor),
                ];
                Self {
                    kind: HeadKind::Mlp,
                    layers,
                    gru: None,
                    len: cursor,
                }
            }
            HeadKind::Gru => {
                let proj = push(latent_dim, config.gru_projection, &mut cursor);
                let gru = Gru {
                    n_in: config.gru_projection,
                    hidden: config.gru_hidden,
                };
                let gru_at = cursor;
                cursor += gru.param_len();
                let out = push(config.gru_hidden, 1, &mut cursor);
                Self {
                    kind: HeadKind::Gru,
                    layers: vec![proj, out],
                    gru: Some((gru, gru_at)),
                    len: cursor,
                }
            }
        }
    }

    pub fn kind(&self) -> HeadKind {
        self.kind
    }

    pub fn param_len(&self) -> usize {
        self.len
    }

    pub fn init(&self, rng: &mut Rng) -> Vec<f64> {
        let mut p = vec![0.0; self.len];
        for (l, at) in &self.layers {
            let bound = sqrt(6.0 / l.n_in as f64);
            for v in &mut p[*at..at + l.weight_len()] {
                *v = rng.random_range(-bound..bound);
            }
        }
        if let Some((g, at)) = self.gru {
            let bound = 1.0 / sqrt(g.hidden as f64);
            for v in &mut p[at..at + g.param_len()] {
                *v = rng.random_range(-bound..bound);
            }
        }
        p
    }

    fn split<'a>(&self, p: &'a [f64], i: usize) -> (&'a [f64], &'a [f64]) {
        let (l, at) = self.layers[i];
        (&p[at..at + l.weight_len()], &p[at + l.weight_len()..at + l.weight_len() + l.n_out])
    }

    /// Logit for one sample: a single feature vector for the MLP, a visit
    /// sequence for the GRU.
    pub fn forward(&self, p: &[f64], xs: &[Vec<f64>]) -> (f64, HeadCache) {
        let mut cache = HeadCache {
            inputs: xs.to_vec(),
            acts: Vec::new(),
            masks: Vec::new(),
            projected: Vec::new(),
            steps: Vec::new(),
            h: Vec::new(),
        };
        match self.gru {
            None => {
                let mut x = xs[0].clone();
                let last = self.layers.len() - 1;
                for i in 0..self.layers.len() {
                    let (w, b) = self.split(p, i);
                    let mut y = self.layers[i].0.forward(&x, w, b);
                    cache.acts.push(x);
                    if i < last {
                        cache.masks.push(relu_forward(&mut y));
                    }
                    x = y;
                }
                (x[0], cache)
            }
            Some((gru, at)) => {
                let (w, b) = self.split(p, 0);
                cache.projected = xs.iter().map(|x| self.layers[0].0.forward(x, w, b)).collect();
                let (h, steps) = gru.forward(&p[at..at + gru.param_len()], &cache.projected);
                let (w, b) = self.split(p, 1);
                let logit = self.layers[1].0.forward(&h, w, b)[0];
                cache.steps = steps;
                cache.h = h;
                (logit, cache)
            }
        }
    }

    /// Accumulates parameter gradients for upstream `dlogit`; returns the
    /// gradient with respect to each input vector.
    pub fn backward(&self, p: &[f64], cache: &HeadCache, dlogit: f64, grad: &mut [f64]) -> Vec<Vec<f64>> {
        let gl = |i: usize, x: &[f64], g: &[f64], grad: &mut [f64]| -> Vec<f64> {
            let (l, at) = self.layers[i];
            let (w, _) = self.split(p, i);
            let (gw, gb) = grad[at..at + l.weight_len() + l.n_out].split_at_mut(l.weight_len());
            l.backward(x, w, g, gw, gb)
        };
        match self.gru {
            None => {
                let mut g = vec![dlogit];
                for i in (0..self.layers.len()).rev() {
                    if i < self.layers.len() - 1 {
                        relu_backward(&mut g, &cache.masks[i]);
                    }
                    g = gl(i, &cache.acts[i], &g, grad);
                }
                vec![g]
            }
            Some((gru, at)) => {
                let gh = gl(1, &cache.h, &[dlogit], grad);
                let n = gru.param_len();
                let dproj = gru.backward(&p[at..at + n], &cache.steps, &gh, &mut grad[at..at + n]);
                cache
                    .inputs
                    .iter()
                    .zip(&dproj)
                    .map(|(x, g)| gl(0, x, g, grad))
                    .collect()
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub n_train: usize,
    pub n_test: usize,
    /// Held-out accuracy after the final epoch.
    pub accuracy: f64,
    /// Held-out accuracy after every epoch.
    pub curve: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub head: HeadKind,
    pub mode: Mode,
    pub folds: Vec<FoldResult>,
    pub mean_accuracy: f64,
}

impl EvalResult {
    fn new(head: HeadKind, mode: Mode, folds: Vec<FoldResult>) -> Self {
        let mean_accuracy = folds.iter().map(|f| f.accuracy).sum::<f64>() / folds.len().max(1) as f64;
        Self {
            head,
            mode,
            folds,
            mean_accuracy,
        }
    }

    pub fn accuracies(&self) -> Vec<f64> {
        self.folds.iter().map(|f| f.accuracy).collect()
    }
}

/// A training or test sample: flat image indices (one for the MLP, a whole
/// visit sequence for the GRU) and a binary label.
#[derive(Clone, Debug)]
struct Sample {
    images: Vec<usize>,
    label: f64,
}

fn samples(manifest: &DatasetManifest, head: HeadKind, folds: &FoldAssignment, test_fold: usize) -> Result<(Vec<Sample>, Vec<Sample>)> {
    let offsets = manifest.subject_offsets();
    let (mut tr, mut te) = (Vec::new(), Vec::new());
    for (si, s) in manifest.subjects.iter().enumerate() {
        let fold = folds.fold_of(&s.subject_id).ok_or_else(|| {
            Error::Config(alloc::format!("subject {} has no fold", s.subject_id))
        })?;
        let target = if fold == test_fold { &mut te } else { &mut tr };
        let label = s.group.label();
        let range: Vec<usize> = (offsets[si]..offsets[si + 1]).collect();
        match head {
            HeadKind::Mlp => target.extend(range.into_iter().map(|i| Sample {
                images: vec![i],
                label,
            })),
            HeadKind::Gru => target.push(Sample { images: range, label }),
        }
    }
    let positives = tr.iter().filter(|s| s.label > 0.5).count();
    if positives == 0 || positives == tr.len() {
        return Err(Error::DegenerateLabels);
    }
    Ok((tr, te))
}

/// Per-feature mean and standard deviation over the given images.
#[derive(Clone, Debug)]
struct Standardizer {
    mean: Vec<f64>,
    inv_sd: Vec<f64>,
}

impl Standardizer {
    fn fit<'a>(reps: impl Iterator<Item = &'a [f64]>, k: usize) -> Self {
        let rows: Vec<&[f64]> = reps.collect();
        let n = rows.len().max(1) as f64;
        let mut mean = vec![0.0; k];
        for r in &rows {
            for (m, v) in mean.iter_mut().zip(*r) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; k];
        for r in &rows {
            for ((s, v), m) in var.iter_mut().zip(*r).zip(&mean) {
                *s += (v - m) * (v - m) / n;
            }
        }
        let inv_sd = var
            .iter()
            .map(|v| if *v > 1e-16 { 1.0 / sqrt(*v) } else { 1.0 })
            .collect();
        Self { mean, inv_sd }
    }

    fn apply(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(&self.mean)
            .zip(&self.inv_sd)
            .map(|((v, m), s)| (v - m) * s)
            .collect()
    }
}

fn train_images(train: &[Sample]) -> Vec<usize> {
    let mut idx: Vec<usize> = train.iter().flat_map(|s| s.images.iter().copied()).collect();
    idx.sort_unstable();
    idx.dedup();
    idx
}

fn accuracy(head: &Head, p: &[f64], test: &[Sample], features: &[Vec<f64>]) -> f64 {
    if test.is_empty() {
        return 0.0;
    }
    let correct = test
        .iter()
        .filter(|s| {
            let xs: Vec<Vec<f64>> = s.images.iter().map(|&i| features[i].clone()).collect();
            let (logit, _) = head.forward(p, &xs);
            (logit > 0.0) == (s.label > 0.5)
        })
        .count();
    correct as f64 / test.len() as f64
}

/// Frozen-mode classification on precomputed representations, one entry per
/// image of `manifest` in flat order.
pub fn train_frozen(
    config: &ClassifierConfig,
    folds: &FoldAssignment,
    manifest: &DatasetManifest,
    reps: &[Representation],
) -> Result<EvalResult> {
    config.validate()?;
    if reps.len() != manifest.n_images() {
        return Err(Error::shape(manifest.n_images(), reps.len()));
    }
    let k = reps.first().map(|r| r.len()).ok_or(Error::EmptyDataset)?;
    let head = Head::new(config, k);
    let mut results = Vec::with_capacity(folds.k);
    for fold in 0..folds.k {
        let (tr, te) = samples(manifest, config.head, folds, fold)?;
        let std = Standardizer::fit(train_images(&tr).into_iter().map(|i| reps[i].as_slice()), k);
        let features: Vec<Vec<f64>> = reps.iter().map(|z| std.apply(z.as_slice())).collect();
        let mut rng = rng_for(config.seed, &[HEAD_STREAM, fold as u64]);
        let mut p = head.init(&mut rng);
        let mut opt = Adam::new(p.len(), config.learning_rate);
        let mut order: Vec<usize> = (0..tr.len()).collect();
        let mut curve = Vec::with_capacity(config.epochs);
        for _ in 0..config.epochs {
            order.shuffle(&mut rng);
            for chunk in order.chunks(config.batch_size) {
                let mut grad = vec![0.0; p.len()];
                for &si in chunk {
                    let s = &tr[si];
                    let xs: Vec<Vec<f64>> = s.images.iter().map(|&i| features[i].clone()).collect();
                    let (logit, cache) = head.forward(&p, &xs);
                    let (_, d) = bce_with_logit(logit, s.label);
                    head.backward(&p, &cache, d / chunk.len() as f64, &mut grad);
                }
                opt.step(&mut p, &grad);
            }
            curve.push(accuracy(&head, &p, &te, &features));
        }
        results.push(FoldResult {
            fold,
            n_train: tr.len(),
            n_test: te.len(),
            accuracy: *curve.last().expect("epochs > 0"),
            curve,
        });
    }
    Ok(EvalResult::new(config.head, Mode::Frozen, results))
}

/// End-to-end classification for one fold: the head and the encoder are
/// trained together. Returns the fold result and the tuned encoder weights.
pub fn train_end_to_end_fold(
    config: &ClassifierConfig,
    folds: &FoldAssignment,
    cohort: &Cohort,
    encoder: &ModelParams,
    fold: usize,
) -> Result<(FoldResult, Vec<f64>)> {
    config.validate()?;
    let manifest = &cohort.manifest;
    let (tr, te) = samples(manifest, config.head, folds, fold)?;
    let enc = encoder.encoder_layout();
    let k = encoder.arch.latent_dim;
    let head = Head::new(config, k);
    let mut theta = encoder.theta.clone();

    // Features are standardized with statistics of the starting encoder on
    // the training images; the affine map stays fixed while tuning.
    let initial: Vec<Vec<f64>> = cohort
        .images
        .iter()
        .map(|im| enc.forward(&theta, im.data()).0)
        .collect();
    let std = Standardizer::fit(train_images(&tr).into_iter().map(|i| initial[i].as_slice()), k);

    let mut rng = rng_for(config.seed, &[HEAD_STREAM, fold as u64]);
    let mut p = head.init(&mut rng);
    let mut opt_head = Adam::new(p.len(), config.learning_rate);
    let mut opt_enc = Adam::new(theta.len(), config.learning_rate);
    let mut order: Vec<usize> = (0..tr.len()).collect();
    let mut curve = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let mut grad = vec![0.0; p.len()];
            let mut grad_theta = vec![0.0; theta.len()];
            for &si in chunk {
                let s = &tr[si];
                let fwd: Vec<(Vec<f64>, EncoderCache)> = s
                    .images
                    .iter()
                    .map(|&i| enc.forward(&theta, cohort.images[i].data()))
                    .collect();
                let xs: Vec<Vec<f64>> = fwd.iter().map(|(z, _)| std.apply(z)).collect();
                let (logit, cache) = head.forward(&p, &xs);
                let (_, d) = bce_with_logit(logit, s.label);
                let dxs = head.backward(&p, &cache, d / chunk.len() as f64, &mut grad);
                for ((_, ecache), dx) in fwd.iter().zip(&dxs) {
                    let dz: Vec<f64> = dx.iter().zip(&std.inv_sd).map(|(g, s)| g * s).collect();
                    enc.backward(&theta, ecache, &dz, &mut grad_theta);
                }
            }
            opt_head.step(&mut p, &grad);
            opt_enc.step(&mut theta, &grad_theta);
        }
        let features: Vec<Vec<f64>> = cohort
            .images
            .iter()
            .map(|im| std.apply(&enc.forward(&theta, im.data()).0))
            .collect();
        curve.push(accuracy(&head, &p, &te, &features));
    }
    if !crate::math::all_finite(&theta) {
        return Err(Error::Divergence {
            epoch: config.epochs,
            last_finite: alloc::boxed::Box::new(encoder.clone()),
        });
    }
    Ok((
        FoldResult {
            fold,
            n_train: tr.len(),
            n_test: te.len(),
            accuracy: *curve.last().expect("epochs > 0"),
            curve,
        },
        theta,
    ))
}

/// Cross-validated classification in the configured mode. `pretrained` is
/// only read; in `NoPretrain` mode only its architecture is used.
pub fn train_classifier(
    config: &ClassifierConfig,
    folds: &FoldAssignment,
    cohort: &Cohort,
    pretrained: &ModelParams,
) -> Result<EvalResult> {
    match config.mode {
        Mode::Frozen => {
            let reps = extract_representations(pretrained, &cohort.images)?;
            train_frozen(config, folds, &cohort.manifest, &reps)
        }
        Mode::FineTune | Mode::NoPretrain => {
            let mut results = Vec::with_capacity(folds.k);
            for fold in 0..folds.k {
                let start = if config.mode == Mode::NoPretrain {
                    init_model(&pretrained.arch, derive_seed(config.seed, &[fold as u64]))?
                } else {
                    pretrained.clone()
                };
                results.push(train_end_to_end_fold(config, folds, cohort, &start, fold)?.0);
            }
            Ok(EvalResult::new(config.head, config.mode, results))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    Ae,
    Vae,
    BetaVae,
}

impl BaselineKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BaselineKind::Ae => "ae",
            BaselineKind::Vae => "vae",
            BaselineKind::BetaVae => "beta_vae",
        }
    }
}

/// KL divergence of `N(mu, exp(logvar))` from the standard normal.
pub fn kl_standard_normal(mu: &[f64], logvar: &[f64]) -> f64 {
    0.5 * mu
        .iter()
        .zip(logvar)
        .map(|(m, lv)| exp(*lv) + m * m - 1.0 - lv)
        .sum::<f64>()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VaeLoss {
    /// Sum of squared pixel errors.
    pub recon: f64,
    pub kl: f64,
    pub total: f64,
}

/// Per-image variational loss at a fixed noise draw `eps`, with gradients
/// accumulated into `grad_theta` and `grad_phi` scaled by `weight`.
#[allow(clippy::too_many_arguments)]
pub fn vae_image_loss(
    enc: &EncoderLayout,
    dec: &crate::model::DecoderLayout,
    theta: &[f64],
    phi: &[f64],
    image: &[f64],
    eps: &[f64],
    beta: f64,
    grads: Option<(&mut [f64], &mut [f64], f64)>,
) -> VaeLoss {
    let k = eps.len();
    let (out, ecache) = enc.forward(theta, image);
    let (mu, lv) = out.split_at(k);
    let sd: Vec<f64> = lv.iter().map(|v| exp(0.5 * v)).collect();
    let z: Vec<f64> = (0..k).map(|i| mu[i] + sd[i] * eps[i]).collect();
    let (xhat, dcache) = dec.forward(phi, &z);
    let recon: f64 = xhat.iter().zip(image).map(|(a, b)| (a - b) * (a - b)).sum();
    let kl = kl_standard_normal(mu, lv);
    if let Some((gt, gp, w)) = grads {
        let dx: Vec<f64> = xhat.iter().zip(image).map(|(a, b)| 2.0 * w * (a - b)).collect();
        let dz = dec.backward(phi, &dcache, &dx, gp);
        let mut dout = vec![0.0; 2 * k];
        for i in 0..k {
            dout[i] = dz[i] + w * beta * mu[i];
            dout[k + i] = dz[i] * eps[i] * 0.5 * sd[i] + w * beta * 0.5 * (sd[i] * sd[i] - 1.0);
        }
        enc.backward(theta, &ecache, &dout, gt);
    }
    VaeLoss {
        recon,
        kl,
        total: recon + beta * kl,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub beta: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self { beta: 4.0 }
    }
}

/// Per-epoch mean variational loss.
pub type VaeHistory = Vec<VaeLoss>;

/// Pretrains a baseline encoder with the architecture `arch`. The AE is the
/// main trainer with `lambda = 0`; the variational kinds train an encoder
/// with `2K` outputs and keep the mean rows. Initialization uses
/// `train.seed`, like the main model.
pub fn baseline_pretrain(
    kind: BaselineKind,
    cohort: &Cohort,
    arch: &ArchConfig,
    train_config: &TrainConfig,
    baseline: &BaselineConfig,
) -> Result<(ModelParams, VaeHistory)> {
    train_config.validate()?;
    let init = init_model(arch, train_config.seed)?;
    let beta = match kind {
        BaselineKind::Ae => {
            let cfg = TrainConfig {
                lambda: LambdaSetting::Fixed(0.0),
                ..train_config.clone()
            };
            let out = train(cohort, init, &cfg, &mut |_| {})?;
            return Ok((out.params, Vec::new()));
        }
        BaselineKind::Vae => 1.0,
        BaselineKind::BetaVae => baseline.beta,
    };
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(Error::Config(alloc::format!("beta must be positive, got {beta}")));
    }
    let n = cohort.n_images();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let k = arch.latent_dim;
    let enc = EncoderLayout::new(arch, 2 * k);
    let dec = init.decoder_layout();
    let mut rng = rng_for(train_config.seed, &[VAE_STREAM]);
    let mut theta = vec![0.0; enc.param_len()];
    enc.init(&mut theta, &mut rng);
    // Start every posterior at unit variance: zero the log-variance rows.
    zero_logvar_rows(&enc, &mut theta, k);
    let mut phi = init.phi.clone();

    let mut opt_t = Adam::new(theta.len(), train_config.learning_rate);
    let mut opt_p = Adam::new(phi.len(), train_config.learning_rate);
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::with_capacity(train_config.epochs);
    let mut last_theta = theta.clone();
    for epoch in 1..=train_config.epochs {
        order.shuffle(&mut rng);
        let mut acc = VaeLoss::default();
        let mut batches = 0;
        for chunk in order.chunks(train_config.batch_images) {
            let w = 1.0 / chunk.len() as f64;
            let mut gt = vec![0.0; theta.len()];
            let mut gp = vec![0.0; phi.len()];
            let mut batch = VaeLoss::default();
            for &i in chunk {
                let eps: Vec<f64> = (0..k).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                let l = vae_image_loss(&enc, &dec, &theta, &phi, cohort.images[i].data(), &eps, beta, Some((&mut gt, &mut gp, w)));
                batch.recon += w * l.recon;
                batch.kl += w * l.kl;
                batch.total += w * l.total;
            }
            if !batch.total.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    last_finite: alloc::boxed::Box::new(mean_params(&enc, &last_theta, &phi, &init)),
                });
            }
            opt_t.step(&mut theta, &gt);
            opt_p.step(&mut phi, &gp);
            acc.recon += batch.recon;
            acc.kl += batch.kl;
            acc.total += batch.total;
            batches += 1;
        }
        let b = batches as f64;
        history.push(VaeLoss {
            recon: acc.recon / b,
            kl: acc.kl / b,
            total: acc.total / b,
        });
        last_theta.clone_from(&theta);
    }
    Ok((mean_params(&enc, &theta, &phi, &init), history))
}

fn zero_logvar_rows(enc: &EncoderLayout, theta: &mut [f64], k: usize) {
    // Layout ends with the fully connected weight `[2K][n_in]` and bias `[2K]`.
    let total = theta.len();
    let n_in = (total - enc.truncate_outputs(theta, k).len()) / k - 1;
    let bias = total - 2 * k;
    let weight = bias - 2 * k * n_in;
    theta[weight + k * n_in..bias].fill(0.0);
    theta[bias + k..].fill(0.0);
}

fn mean_params(enc: &EncoderLayout, theta: &[f64], phi: &[f64], init: &ModelParams) -> ModelParams {
    ModelParams {
        arch: init.arch.clone(),
        theta: enc.truncate_outputs(theta, init.arch.latent_dim),
        phi: phi.to_vec(),
        tau: init.tau.clone(),
    }
}
