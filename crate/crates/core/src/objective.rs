//! Reconstruction-plus-alignment objective.
//!
//! `total = mean_I MSE(I, d(g(I))) - lambda * mean_(t,s) cos(g(I_s) - g(I_t), tau)`
//!
//! Both terms are batch means so `lambda = |images| / |pairs|` keeps its
//! balancing role under minibatching.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::math::{dot, norm};
use crate::model::ModelParams;
use crate::nn::PatternHash;
use crate::synthgen::{DatasetManifest, ImageVolume};
use crate::{Error, Result};

/// Floor on `|z_s - z_t|` below which the cosine is undefined.
pub const DEGENERATE_EPS: f64 = 1e-8;

/// Slack on the minimum scan interval, absorbing rounding in visit times.
const GAP_SLACK: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageRef {
    pub time_years: f64,
    /// Flat index into the cohort's image list.
    pub image: usize,
}

/// Ordered within-subject pair: `later.time_years > earlier.time_years`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingPair {
    pub subject_id: String,
    pub earlier: ImageRef,
    pub later: ImageRef,
}

impl TrainingPair {
    pub fn gap(&self) -> f64 {
        self.later.time_years - self.earlier.time_years
    }
}

/// All ordered within-subject pairs at least `min_gap_years` apart.
pub fn build_pairs(manifest: &DatasetManifest, min_gap_years: f64) -> Result<Vec<TrainingPair>> {
    if !(min_gap_years > 0.0) {
        return Err(Error::Config(format!(
            "min_gap_years must be positive, got {min_gap_years}"
        )));
    }
    if manifest.n_images() == 0 {
        return Err(Error::EmptyDataset);
    }
    let offsets = manifest.subject_offsets();
    let mut pairs = Vec::new();
    for (si, subject) in manifest.subjects.iter().enumerate() {
        let v = &subject.visits;
        for i in 0..v.len() {
            for j in i + 1..v.len() {
                let (t, s) = (v[i].time_years, v[j].time_years);
                if s > t && s - t >= min_gap_years - GAP_SLACK {
                    pairs.push(TrainingPair {
                        subject_id: subject.subject_id.clone(),
                        earlier: ImageRef {
                            time_years: t,
                            image: offsets[si] + i,
                        },
                        later: ImageRef {
                            time_years: s,
                            image: offsets[si] + j,
                        },
                    });
                }
            }
        }
    }
    Ok(pairs)
}

/// `|images| / |pairs|`.
pub fn lambda_default(n_images: usize, n_pairs: usize) -> Result<f64> {
    if n_pairs == 0 {
        return Err(Error::NoPairs);
    }
    Ok(n_images as f64 / n_pairs as f64)
}

/// Cosine between `z_s - z_t` and a unit `tau`.
pub fn cosine_alignment(z_s: &[f64], z_t: &[f64], tau: &[f64]) -> Result<f64> {
    if z_s.len() != z_t.len() || z_s.len() != tau.len() {
        return Err(Error::shape(tau.len(), format!("{} / {}", z_s.len(), z_t.len())));
    }
    let d: Vec<f64> = z_s.iter().zip(z_t).map(|(a, b)| a - b).collect();
    let n = norm(&d);
    if n < DEGENERATE_EPS {
        return Err(Error::DegeneratePair(DEGENERATE_EPS));
    }
    Ok((dot(&d, tau) / n).clamp(-1.0, 1.0))
}

/// Mean squared pixel difference.
pub fn reconstruction_loss(image: &ImageVolume, reconstruction: &ImageVolume) -> Result<f64> {
    if image.dims() != reconstruction.dims() {
        return Err(Error::shape(
            format!("{:?}", image.dims()),
            format!("{:?}", reconstruction.dims()),
        ));
    }
    let n = image.len() as f64;
    Ok(image
        .data()
        .iter()
        .zip(reconstruction.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub recon: f64,
    /// Mean cosine over pairs; degenerate pairs count as 0.
    pub align: f64,
    pub total: f64,
    pub n_images: usize,
    pub n_pairs: usize,
    pub n_degenerate: usize,
}

/// Which terms enter the loss; used to isolate one term in gradient checks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LossTerms {
    pub recon: bool,
    pub align: bool,
}

impl Default for LossTerms {
    fn default() -> Self {
        Self {
            recon: true,
            align: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub theta: Vec<f64>,
    pub phi: Vec<f64>,
    pub tau: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(params: &ModelParams) -> Self {
        Self {
            theta: vec![0.0; params.theta.len()],
            phi: vec![0.0; params.phi.len()],
            tau: vec![0.0; params.tau.len()],
        }
    }
}

/// A minibatch: images for the reconstruction term and `(later, earlier)`
/// image pairs for the alignment term.
#[derive(Clone, Debug, Default)]
pub struct Batch<'a> {
    pub images: Vec<&'a ImageVolume>,
    pub pairs: Vec<(&'a ImageVolume, &'a ImageVolume)>,
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub loss: LossBreakdown,
    pub grads: Option<Gradients>,
    /// Fingerprint of every ReLU mask and pooling winner touched.
    pub pattern: PatternHash,
}

/// Forward-only loss.
pub fn total_loss(batch: &Batch<'_>, params: &ModelParams, lambda: f64) -> Result<LossBreakdown> {
    evaluate(batch, params, lambda, LossTerms::default(), false).map(|e| e.loss)
}

/// Loss and its gradient with respect to `theta`, `phi` and `tau`.
pub fn loss_and_gradient(
    batch: &Batch<'_>,
    params: &ModelParams,
    lambda: f64,
) -> Result<(LossBreakdown, Gradients)> {
    let e = evaluate(batch, params, lambda, LossTerms::default(), true)?;
    Ok((e.loss, e.grads.expect("gradients requested")))
}

pub fn evaluate(
    batch: &Batch<'_>,
    params: &ModelParams,
    lambda: f64,
    terms: LossTerms,
    want_grad: bool,
) -> Result<Evaluation> {
    if !(lambda >= 0.0) {
        return Err(Error::Config(format!("lambda must be >= 0, got {lambda}")));
    }
    if batch.images.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let enc = params.encoder_layout();
    let dec = params.decoder_layout();
    let mut grads = want_grad.then(|| Gradients::zeros_like(params));
    let mut pattern = PatternHash::default();
    let mut loss = LossBreakdown {
        n_images: batch.images.len(),
        n_pairs: batch.pairs.len(),
        ..LossBreakdown::default()
    };

    if terms.recon {
        let scale = 1.0 / batch.images.len() as f64;
        for img in &batch.images {
            params.check_image(img)?;
            let (z, ecache) = enc.forward(&params.theta, img.data());
            let (x, dcache) = dec.forward(&params.phi, &z);
            ecache.pattern(&mut pattern);
            dcache.pattern(&mut pattern);
            let p = x.len() as f64;
            let mse = x
                .iter()
                .zip(img.data())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                / p;
            loss.recon += scale * mse;
            if let Some(g) = grads.as_mut() {
                let gx: Vec<f64> = x
                    .iter()
                    .zip(img.data())
                    .map(|(a, b)| 2.0 * (a - b) * scale / p)
                    .collect();
                let gz = dec.backward(&params.phi, &dcache, &gx, &mut g.phi);
                enc.backward(&params.theta, &ecache, &gz, &mut g.theta);
            }
        }
    }

    if terms.align && !batch.pairs.is_empty() {
        let weight = 1.0 / batch.pairs.len() as f64;
        for (later, earlier) in &batch.pairs {
            params.check_image(later)?;
            params.check_image(earlier)?;
            let (zs, cs) = enc.forward(&params.theta, later.data());
            let (zt, ct) = enc.forward(&params.theta, earlier.data());
            cs.pattern(&mut pattern);
            ct.pattern(&mut pattern);
            let d: Vec<f64> = zs.iter().zip(&zt).map(|(a, b)| a - b).collect();
            let n = norm(&d);
            if n < DEGENERATE_EPS {
                loss.n_degenerate += 1;
                continue;
            }
            let c = dot(&d, &params.tau) / n;
            loss.align += weight * c;
            if let Some(g) = grads.as_mut() {
                // d total / d c = -lambda / n_pairs
                let up = -lambda * weight;
                let gd: Vec<f64> = d
                    .iter()
                    .zip(&params.tau)
                    .map(|(di, ti)| up * (ti / n - c * di / (n * n)))
                    .collect();
                for (gt, di) in g.tau.iter_mut().zip(&d) {
                    *gt += up * di / n;
                }
                let gd_neg: Vec<f64> = gd.iter().map(|v| -v).collect();
                enc.backward(&params.theta, &cs, &gd, &mut g.theta);
                enc.backward(&params.theta, &ct, &gd_neg, &mut g.theta);
            }
        }
    }

    loss.total = loss.recon - lambda * loss.align;
    Ok(Evaluation {
        loss,
        grads,
        pattern,
    })
}
