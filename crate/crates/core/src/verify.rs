//! Empirical checks of the disentanglement conditions against the
//! generator's known factors: colinearity of within-subject changes with
//! `tau`, insensitivity of ψ to the non-age factors at finite perturbations,
//! and population correlations of ψ with every factor.

use alloc::vec::Vec;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::analysis::AnalysisRecord;
use crate::math::{abs, dot};
use crate::model::RepresentationModel;
use crate::objective::{cosine_alignment, TrainingPair};
use crate::rng::rng_for;
use crate::stats::{mean, pearson, spearman};
use crate::synthgen::{perturb_factor, DatasetManifest, FactorVector, ImageVolume, AGE_FACTOR};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub base: FactorVector,
    pub factor: usize,
    pub delta: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ProbeSet {
    probes: Vec<Probe>,
}

impl ProbeSet {
    pub fn new(probes: Vec<Probe>) -> Result<Self> {
        for p in &probes {
            if p.delta == 0.0 || !p.delta.is_finite() {
                return Err(Error::Config(alloc::format!("probe delta must be nonzero, got {}", p.delta)));
            }
            if p.factor >= p.base.len() {
                return Err(Error::Index {
                    index: p.factor,
                    len: p.base.len(),
                });
            }
        }
        Ok(Self { probes })
    }

    /// `n_bases` factor vectors drawn (with replacement) from the visits of
    /// `manifest`, each perturbed along every factor by `delta`.
    pub fn from_manifest(manifest: &DatasetManifest, n_bases: usize, delta: f64, seed: u64) -> Result<Self> {
        let visits: Vec<&FactorVector> = manifest
            .subjects
            .iter()
            .flat_map(|s| s.visits.iter().map(|v| &v.factors))
            .collect();
        if visits.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut rng = rng_for(seed, &[0x7072_6f62_65]);
        let mut probes = Vec::new();
        for _ in 0..n_bases {
            let base = visits[rng.random_range(0..visits.len())];
            for factor in 0..base.len() {
                probes.push(Probe {
                    base: base.clone(),
                    factor,
                    delta,
                });
            }
        }
        Self::new(probes)
    }

    pub fn probes(&self) -> &[Probe] {
        &self.probes
    }

    pub fn len(&self) -> usize {
        self.probes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probes.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Condition1 {
    pub mean_cosine: f64,
    pub n_pairs: usize,
    pub n_degenerate: usize,
}

/// Mean cosine between `z(later) - z(earlier)` and `tau` over `pairs`,
/// skipping degenerate pairs. `images` is indexed by the pairs' flat
/// indices.
pub fn condition1_score<M: RepresentationModel + ?Sized>(
    model: &M,
    images: &[ImageVolume],
    pairs: &[TrainingPair],
) -> Result<Condition1> {
    let mut cache: Vec<Option<Vec<f64>>> = alloc::vec![None; images.len()];
    let mut z = |i: usize| -> Result<Vec<f64>> {
        let image = images.get(i).ok_or(Error::Index {
            index: i,
            len: images.len(),
        })?;
        if cache[i].is_none() {
            cache[i] = Some(model.represent(image)?.0);
        }
        Ok(cache[i].clone().expect("filled"))
    };
    let (mut sum, mut used, mut degenerate) = (0.0, 0, 0);
    for p in pairs {
        let zs = z(p.later.image)?;
        let zt = z(p.earlier.image)?;
        match cosine_alignment(&zs, &zt, model.direction()) {
            Ok(c) => {
                sum += c;
                used += 1;
            }
            Err(Error::DegeneratePair(_)) => degenerate += 1,
            Err(e) => return Err(e),
        }
    }
    if used == 0 {
        return Err(Error::DegenerateSet);
    }
    Ok(Condition1 {
        mean_cosine: sum / used as f64,
        n_pairs: used,
        n_degenerate: degenerate,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorRatio {
    pub factor: usize,
    pub n: usize,
    pub mean: f64,
    pub max: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Condition2 {
    pub delta: f64,
    /// Mean `|Δψ|` over the age-factor probes.
    pub reference: f64,
    pub factors: Vec<FactorRatio>,
}

impl Condition2 {
    pub fn mean_ratio(&self) -> Option<f64> {
        (!self.factors.is_empty()).then(|| self.factors.iter().map(|f| f.mean).sum::<f64>() / self.factors.len() as f64)
    }

    pub fn max_ratio(&self) -> Option<f64> {
        self.factors.iter().map(|f| f.max).reduce(f64::max)
    }
}

/// For every non-age probe, `|Δψ|` divided by the mean `|Δψ|` of the
/// age-factor probes. `renderer` turns factors into images and should be
/// noise free.
pub fn condition2_score<M, R>(model: &M, probes: &ProbeSet, mut renderer: R) -> Result<Condition2>
where
    M: RepresentationModel + ?Sized,
    R: FnMut(&FactorVector) -> Result<ImageVolume>,
{
    let mut psi = |alpha: &FactorVector| -> Result<f64> {
        let z = model.represent(&renderer(alpha)?)?;
        Ok(dot(z.as_slice(), model.direction()))
    };
    let mut reference = Vec::new();
    let mut shifts: Vec<(usize, f64)> = Vec::new();
    let mut delta = 0.0;
    for p in probes.probes() {
        let moved = perturb_factor(&p.base, p.factor, p.delta)?;
        let d = abs(psi(&moved)? - psi(&p.base)?);
        delta = p.delta;
        if p.factor == AGE_FACTOR {
            reference.push(d);
        } else {
            shifts.push((p.factor, d));
        }
    }
    let reference = if reference.is_empty() { 0.0 } else { mean(&reference) };
    if !(reference > 0.0) {
        return Err(Error::ZeroReference);
    }
    let mut factors: Vec<FactorRatio> = Vec::new();
    for (j, d) in shifts {
        let r = d / reference;
        match factors.iter_mut().find(|f| f.factor == j) {
            Some(f) => {
                f.mean += r;
                f.max = f.max.max(r);
                f.n += 1;
            }
            None => factors.push(FactorRatio {
                factor: j,
                n: 1,
                mean: r,
                max: r,
            }),
        }
    }
    for f in &mut factors {
        f.mean /= f.n as f64;
    }
    factors.sort_by_key(|f| f.factor);
    Ok(Condition2 {
        delta,
        reference,
        factors,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorCorrelation {
    pub factor: usize,
    /// `None` when either side is constant.
    pub pearson: Option<f64>,
    pub spearman: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorCorrelations {
    pub n: usize,
    pub factors: Vec<FactorCorrelation>,
}

impl FactorCorrelations {
    pub fn get(&self, factor: usize) -> Option<&FactorCorrelation> {
        self.factors.iter().find(|f| f.factor == factor)
    }
}

/// Correlation of normalized ψ with each true factor over every image in
/// `records`, matched to `manifest` by subject id and visit index.
pub fn factor_independence_report(records: &[AnalysisRecord], manifest: &DatasetManifest) -> Result<FactorCorrelations> {
    let mut psis = Vec::new();
    let mut alphas: Vec<&FactorVector> = Vec::new();
    for r in records {
        let subject = manifest
            .subjects
            .iter()
            .find(|s| s.subject_id == r.subject_id)
            .ok_or_else(|| Error::InsufficientData(alloc::format!("subject {} not in manifest", r.subject_id)))?;
        for v in &r.visits {
            let visit = subject.visits.get(v.visit_index).ok_or(Error::Index {
                index: v.visit_index,
                len: subject.visits.len(),
            })?;
            psis.push(v.psi_normalized);
            alphas.push(&visit.factors);
        }
    }
    if psis.len() < 3 {
        return Err(Error::InsufficientData(alloc::format!(
            "need at least 3 images, got {}",
            psis.len()
        )));
    }
    let m = alphas.iter().map(|a| a.len()).min().unwrap_or(0);
    let factors = (0..m)
        .map(|j| {
            let col: Vec<f64> = alphas.iter().map(|a| a.as_slice()[j]).collect();
            FactorCorrelation {
                factor: j,
                pearson: pearson(&psis, &col),
                spearman: spearman(&psis, &col),
            }
        })
        .collect();
    Ok(FactorCorrelations { n: psis.len(), factors })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    pub n_probes: usize,
    pub delta: f64,
    pub probe_seed: u64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            n_probes: 64,
            delta: 0.25,
            probe_seed: 29,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DisentanglementReport {
    pub condition1_mean_cosine: f64,
    pub condition1: Condition1,
    pub condition2: Condition2,
    pub psi_factor_correlations: FactorCorrelations,
}

impl DisentanglementReport {
    pub fn new(condition1: Condition1, condition2: Condition2, psi_factor_correlations: FactorCorrelations) -> Self {
        Self {
            condition1_mean_cosine: condition1.mean_cosine,
            condition1,
            condition2,
            psi_factor_correlations,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use alloc::vec::Vec;
    use proptest::prelude::*;

    use crate::analysis::VisitRecord;
    use crate::model::Representation;
    use crate::objective::{build_pairs, ImageRef};
    use crate::synthgen::{generate_manifest, ventricle_radius, GeneratorConfig, Grid};

    /// Images that carry their factors verbatim in the first pixels.
    fn stamp(alpha: &FactorVector) -> Result<ImageVolume> {
        let mut data = vec![0.0; 16];
        data[..alpha.len()].copy_from_slice(alpha.as_slice());
        ImageVolume::new(vec![4, 4], data)
    }

    /// Reads the stamped factors and maps them linearly through `w`.
    struct Oracle {
        tau: Vec<f64>,
        w: Vec<Vec<f64>>,
    }

    impl RepresentationModel for Oracle {
        fn represent(&self, image: &ImageVolume) -> Result<Representation> {
            let a = &image.data()[..3];
            Ok(Representation(self.w.iter().map(|row| dot(row, a)).collect()))
        }
        fn direction(&self) -> &[f64] {
            &self.tau
        }
    }

    /// z = (f(alpha_1), 0, ...) for the ventricle radius f.
    struct VentricleOracle;

    impl RepresentationModel for VentricleOracle {
        fn represent(&self, image: &ImageVolume) -> Result<Representation> {
            Ok(Representation(vec![ventricle_radius(image.data()[0]), 0.0, 0.0]))
        }
        fn direction(&self) -> &[f64] {
            &[1.0, 0.0, 0.0]
        }
    }

    fn age_oracle() -> Oracle {
        Oracle {
            tau: vec![1.0, 0.0, 0.0],
            w: vec![vec![1.0, 0.0, 0.0], vec![0.0, 0.0, 0.0], vec![0.0, 0.0, 0.0]],
        }
    }

    fn stamped_cohort(n: usize, seed: u64) -> (DatasetManifest, Vec<ImageVolume>) {
        let cfg = GeneratorConfig {
            n_subjects: n,
            grid: Grid::square(8),
            ..GeneratorConfig::default()
        };
        let m = generate_manifest(&cfg, seed).unwrap();
        let images = m
            .subjects
            .iter()
            .flat_map(|s| s.visits.iter().map(|v| stamp(&v.factors).unwrap()))
            .collect();
        (m, images)
    }

    #[test]
    fn condition1_oracle_is_one() {
        let (m, images) = stamped_cohort(20, 1);
        let pairs = build_pairs(&m, 1.0).unwrap();
        let c = condition1_score(&age_oracle(), &images, &pairs).unwrap();
        assert!((c.mean_cosine - 1.0).abs() < 1e-12);
        assert_eq!(c.n_pairs, pairs.len());
    }

    /// Reads a sign stamped in the second pixel, so consecutive pairs can be
    /// made to move along `tau` and against it.
    struct SignOracle;

    impl RepresentationModel for SignOracle {
        fn represent(&self, image: &ImageVolume) -> Result<Representation> {
            Ok(Representation(vec![image.data()[0] * image.data()[1], 0.0]))
        }
        fn direction(&self) -> &[f64] {
            &[1.0, 0.0]
        }
    }

    #[test]
    fn condition1_alternating_is_zero() {
        let mut images = Vec::new();
        let mut pairs = Vec::new();
        for k in 0..6 {
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            for t in [0.0, 1.0] {
                images.push(ImageVolume::new(vec![2, 2], vec![t, sign, 0.0, 0.0]).unwrap());
            }
            pairs.push(TrainingPair {
                subject_id: alloc::format!("s{k}"),
                earlier: ImageRef {
                    time_years: 0.0,
                    image: 2 * k,
                },
                later: ImageRef {
                    time_years: 1.0,
                    image: 2 * k + 1,
                },
            });
        }
        let c = condition1_score(&SignOracle, &images, &pairs).unwrap();
        assert_eq!(c.mean_cosine, 0.0);
    }

    #[test]
    fn condition1_all_degenerate() {
        let (m, images) = stamped_cohort(6, 2);
        let pairs = build_pairs(&m, 1.0).unwrap();
        let flat = Oracle {
            tau: vec![1.0, 0.0, 0.0],
            w: vec![vec![0.0; 3]; 3],
        };
        assert!(matches!(
            condition1_score(&flat, &images, &pairs),
            Err(Error::DegenerateSet)
        ));
    }

    #[test]
    fn condition2_ventricle_oracle_is_zero() {
        let (m, _) = stamped_cohort(20, 3);
        let probes = ProbeSet::from_manifest(&m, 64, 0.25, 5).unwrap();
        assert_eq!(probes.len(), 64 * 3);
        let c = condition2_score(&VentricleOracle, &probes, stamp).unwrap();
        assert!(c.reference > 0.0);
        assert_eq!(c.factors.len(), 2);
        for f in &c.factors {
            assert_eq!((f.mean, f.max), (0.0, 0.0));
            assert_eq!(f.n, 64);
        }
    }

    #[test]
    fn condition2_adversarial_oracle_is_large() {
        let (m, _) = stamped_cohort(20, 3);
        let probes = ProbeSet::from_manifest(&m, 16, 0.25, 5).unwrap();
        let adv = Oracle {
            tau: vec![1.0, 0.0, 0.0],
            w: vec![vec![1e-3, 1.0, 0.0], vec![0.0; 3], vec![0.0; 3]],
        };
        let c = condition2_score(&adv, &probes, stamp).unwrap();
        assert!(c.factors[0].mean > 999.0);
        assert_eq!(c.factors[1].mean, 0.0);

        let pure = Oracle {
            tau: vec![1.0, 0.0, 0.0],
            w: vec![vec![0.0, 1.0, 0.0], vec![0.0; 3], vec![0.0; 3]],
        };
        assert!(matches!(
            condition2_score(&pure, &probes, stamp),
            Err(Error::ZeroReference)
        ));
    }

    #[test]
    fn probe_set_validation() {
        let base = FactorVector::new(vec![0.0, 0.0, 0.0]).unwrap();
        let bad = vec![Probe {
            base: base.clone(),
            factor: 3,
            delta: 0.1,
        }];
        assert!(matches!(ProbeSet::new(bad), Err(Error::Index { .. })));
        let zero = vec![Probe {
            base,
            factor: 0,
            delta: 0.0,
        }];
        assert!(ProbeSet::new(zero).is_err());
    }

    fn records_from(m: &DatasetManifest, psi: impl Fn(&FactorVector) -> f64) -> Vec<AnalysisRecord> {
        m.subjects
            .iter()
            .map(|s| AnalysisRecord {
                subject_id: s.subject_id.clone(),
                group: s.group,
                visits: s
                    .visits
                    .iter()
                    .enumerate()
                    .map(|(i, v)| VisitRecord {
                        visit_index: i,
                        age_years: v.time_years,
                        psi_raw: psi(&v.factors),
                        psi_normalized: psi(&v.factors),
                    })
                    .collect(),
                slope: None,
            })
            .collect()
    }

    #[test]
    fn independence_report_on_true_age() {
        let (m, _) = stamped_cohort(200, 7);
        let rep = factor_independence_report(&records_from(&m, |a| a.age()), &m).unwrap();
        assert!((rep.get(0).unwrap().pearson.unwrap() - 1.0).abs() < 1e-12);
        assert!(rep.get(1).unwrap().pearson.unwrap().abs() < 0.15);
        assert!(rep.get(2).unwrap().pearson.unwrap().abs() < 0.15);

        let flat = factor_independence_report(&records_from(&m, |_| 3.0), &m).unwrap();
        assert!(flat.factors.iter().all(|f| f.pearson.is_none()));
    }

    #[test]
    fn independence_report_needs_three_images() {
        let (m, _) = stamped_cohort(2, 7);
        let mut recs = records_from(&m, |a| a.age());
        recs.truncate(1);
        recs[0].visits.truncate(2);
        assert!(matches!(
            factor_independence_report(&recs, &m),
            Err(Error::InsufficientData(_))
        ));
    }

    proptest! {
        #[test]
        fn condition1_scale_invariant(scale in 0.01f64..100.0, mix in -1.0f64..1.0) {
            let (m, images) = stamped_cohort(10, 11);
            let pairs = build_pairs(&m, 1.0).unwrap();
            let w = vec![vec![1.0, mix, 0.3], vec![0.2, 1.0, -mix], vec![mix, 0.0, 1.0]];
            let base = Oracle { tau: vec![0.6, 0.8, 0.0], w: w.clone() };
            let scaled = Oracle {
                tau: base.tau.clone(),
                w: w.iter().map(|r| r.iter().map(|v| v * scale).collect()).collect(),
            };
            let a = condition1_score(&base, &images, &pairs).unwrap().mean_cosine;
            let b = condition1_score(&scaled, &images, &pairs).unwrap().mean_cosine;
            prop_assert!((a - b).abs() < 1e-9);
        }

        #[test]
        fn condition2_affine_invariant(scale in 0.01f64..100.0, shift in -50.0f64..50.0) {
            let (m, _) = stamped_cohort(10, 13);
            let probes = ProbeSet::from_manifest(&m, 8, 0.25, 1).unwrap();
            let w = vec![vec![1.0, 0.3, -0.2], vec![0.0; 3], vec![0.0; 3]];
            let base = Oracle { tau: vec![1.0, 0.0, 0.0], w: w.clone() };
            let a = condition2_score(&base, &probes, stamp).unwrap();
            let scaled = Oracle {
                tau: base.tau.clone(),
                w: w.iter().map(|r| r.iter().map(|v| v * scale).collect()).collect(),
            };
            // An offset on the image side shifts psi by a constant.
            let b = condition2_score(&scaled, &probes, |al: &FactorVector| {
                let mut im = stamp(al)?;
                im.data_mut()[0] += shift / scale;
                Ok(im)
            }).unwrap();
            for (fa, fb) in a.factors.iter().zip(&b.factors) {
                prop_assert!((fa.mean - fb.mean).abs() < 1e-6 * fa.mean.max(1.0));
            }
        }
    }
}
