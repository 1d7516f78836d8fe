//! Brain-age analysis: projection onto `tau`, moment matching against
//! chronological age, per-subject slopes, group tests, a quadratic trend
//! and decoding of traversals along `tau`.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::math::{dot, sqrt};
use crate::model::{decode, encode, ModelParams, Representation};
use crate::stats::{mean, ols_slope, polyfit, population_variance};
use crate::synthgen::{dark_area, Cohort, Group, ImageVolume};
use crate::{Error, Result};

pub use crate::stats::{welch_t_test, TTest};

/// Tissue level and brain radius of a phantom with all non-age factors at
/// zero; the dark-area counter on decoded traversals uses these.
pub const REFERENCE_TISSUE: f64 = 0.8;
pub const REFERENCE_BRAIN_RADIUS: f64 = 0.7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VisitRecord {
    pub visit_index: usize,
    pub age_years: f64,
    pub psi_raw: f64,
    pub psi_normalized: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisRecord {
    pub subject_id: String,
    pub group: Group,
    pub visits: Vec<VisitRecord>,
    /// Present iff the subject has at least two visits.
    pub slope: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrendFit {
    /// Intercept, linear and quadratic coefficient in years.
    pub coefficients: [f64; 3],
    pub residual_variance: f64,
    pub n: usize,
}

impl TrendFit {
    pub fn eval(&self, age: f64) -> f64 {
        let [a, b, c] = self.coefficients;
        a + b * age + c * age * age
    }
}

/// `psi' = scale * psi + offset`, with `scale > 0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineMap {
    pub scale: f64,
    pub offset: f64,
}

impl AffineMap {
    pub fn apply(&self, psi: f64) -> f64 {
        self.scale * psi + self.offset
    }
}

/// Which images supply the moments that ψ is matched against.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reference {
    #[default]
    Control,
    All,
}

pub fn project_brain_age(z: &[f64], tau: &[f64]) -> Result<f64> {
    if z.len() != tau.len() {
        return Err(Error::shape(tau.len(), z.len()));
    }
    Ok(dot(z, tau))
}

/// Affine map giving `psis` the mean and population standard deviation of
/// `ages`.
pub fn moment_map(psis: &[f64], ages: &[f64]) -> Result<AffineMap> {
    if psis.len() != ages.len() {
        return Err(Error::shape(ages.len(), psis.len()));
    }
    if psis.len() < 2 {
        return Err(Error::InsufficientData(alloc::format!(
            "normalization needs at least 2 values, got {}",
            psis.len()
        )));
    }
    let sd_psi = sqrt(population_variance(psis));
    if !(sd_psi > 0.0) || !sd_psi.is_finite() {
        return Err(Error::DegenerateDistribution("psi has zero spread".into()));
    }
    let scale = sqrt(population_variance(ages)) / sd_psi;
    Ok(AffineMap {
        scale,
        offset: mean(ages) - scale * mean(psis),
    })
}

pub fn normalize_brain_age(psis: &[f64], ages: &[f64]) -> Result<Vec<f64>> {
    let map = moment_map(psis, ages)?;
    Ok(psis.iter().map(|&p| map.apply(p)).collect())
}

/// OLS slope of normalized ψ on age for every subject with two or more
/// visits.
pub fn fit_subject_slopes(records: &[AnalysisRecord]) -> BTreeMap<String, f64> {
    records
        .iter()
        .filter_map(|r| subject_slope(&r.visits).map(|s| (r.subject_id.clone(), s)))
        .collect()
}

fn subject_slope(visits: &[VisitRecord]) -> Option<f64> {
    if visits.len() < 2 {
        return None;
    }
    let ages: Vec<f64> = visits.iter().map(|v| v.age_years).collect();
    let psis: Vec<f64> = visits.iter().map(|v| v.psi_normalized).collect();
    ols_slope(&ages, &psis)
}

/// Quadratic trend with a random-intercept proxy: a pooled quadratic is fit
/// first, each subject's mean residual is removed from its points, and the
/// quadratic is refit on the adjusted data.
pub fn fit_quadratic_trend(ages: &[f64], psis: &[f64], subject_ids: &[&str]) -> Result<TrendFit> {
    let n = ages.len();
    if psis.len() != n || subject_ids.len() != n {
        return Err(Error::shape(n, psis.len().min(subject_ids.len())));
    }
    let mut distinct: Vec<f64> = ages.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(Error::SingularFit(alloc::format!(
            "need 3 distinct ages, got {}",
            distinct.len()
        )));
    }
    let pooled = polyfit(ages, psis, 2)?;
    let fitted = |c: &[f64], a: f64| c[0] + c[1] * a + c[2] * a * a;

    let mut sums: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    for i in 0..n {
        let e = sums.entry(subject_ids[i]).or_insert((0.0, 0));
        e.0 += psis[i] - fitted(&pooled, ages[i]);
        e.1 += 1;
    }
    let adjusted: Vec<f64> = (0..n)
        .map(|i| {
            let (s, c) = sums[subject_ids[i]];
            psis[i] - s / c as f64
        })
        .collect();
    let c = polyfit(ages, &adjusted, 2)?;
    let ssr: f64 = (0..n)
        .map(|i| {
            let r = adjusted[i] - fitted(&c, ages[i]);
            r * r
        })
        .sum();
    Ok(TrendFit {
        coefficients: [c[0], c[1], c[2]],
        residual_variance: if n > 3 { ssr / (n - 3) as f64 } else { 0.0 },
        n,
    })
}

/// `psi * tau` plus the mean of the components of `reps` orthogonal to
/// `tau`.
pub fn traversal_representation(
    psi_target: f64,
    tau: &[f64],
    reps: &[Representation],
) -> Result<Representation> {
    if reps.is_empty() {
        return Err(Error::EmptyInput("traversal needs at least one representation".into()));
    }
    let k = tau.len();
    let mut acc = alloc::vec![0.0; k];
    for z in reps {
        if z.len() != k {
            return Err(Error::shape(k, z.len()));
        }
        let p = dot(z.as_slice(), tau);
        for ((a, zi), ti) in acc.iter_mut().zip(z.as_slice()).zip(tau) {
            *a += zi - p * ti;
        }
    }
    let n = reps.len() as f64;
    Ok(Representation(
        acc.iter().zip(tau).map(|(a, t)| psi_target * t + a / n).collect(),
    ))
}

pub fn simulate_brains(
    psi_grid: &[f64],
    params: &ModelParams,
    reps: &[Representation],
) -> Result<Vec<ImageVolume>> {
    psi_grid
        .iter()
        .map(|&psi| decode(&traversal_representation(psi, &params.tau, reps)?, params))
        .collect()
}

/// `steps` equally spaced values from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, steps: usize) -> Vec<f64> {
    match steps {
        0 => Vec::new(),
        1 => alloc::vec![lo],
        _ => (0..steps)
            .map(|i| lo + (hi - lo) * i as f64 / (steps - 1) as f64)
            .collect(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub reference: Reference,
    pub traversal_steps: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            reference: Reference::Control,
            traversal_steps: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub group: Group,
    pub n_subjects: usize,
    pub n_images: usize,
    pub n_slopes: usize,
    pub mean_slope: Option<f64>,
    pub sd_slope: Option<f64>,
    pub trend: Option<TrendFit>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Traversal {
    /// Raw ψ values (projections onto `tau`) that were decoded.
    pub psi_grid: Vec<f64>,
    pub dark_area: Vec<usize>,
    /// Decoded images that came out constant, as from an untrained decoder.
    pub constant: Vec<bool>,
    #[serde(skip)]
    pub images: Vec<ImageVolume>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub reference: Reference,
    pub normalization: AffineMap,
    pub records: Vec<AnalysisRecord>,
    pub groups: Vec<GroupSummary>,
    /// Diseased slopes against control slopes.
    pub slope_test: Option<TTest>,
    /// Mean diseased slope over mean control slope.
    pub slope_ratio: Option<f64>,
    pub traversal: Traversal,
}

impl AnalysisReport {
    pub fn group(&self, group: Group) -> Option<&GroupSummary> {
        self.groups.iter().find(|g| g.group == group)
    }
}

/// Runs the whole analysis on every image of `cohort`.
pub fn analyze(params: &ModelParams, cohort: &Cohort, config: &AnalysisConfig) -> Result<AnalysisReport> {
    let manifest = &cohort.manifest;
    if manifest.subjects.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut reps = Vec::with_capacity(cohort.n_images());
    let mut psis = Vec::with_capacity(cohort.n_images());
    for image in &cohort.images {
        let z = encode(image, params)?;
        psis.push(project_brain_age(z.as_slice(), &params.tau)?);
        reps.push(z);
    }

    let in_reference = |g: Group| config.reference == Reference::All || g == Group::Control;
    let (mut ref_psi, mut ref_age) = (Vec::new(), Vec::new());
    for idx in manifest.images() {
        if in_reference(manifest.subjects[idx.subject].group) {
            ref_psi.push(psis[idx.flat]);
            ref_age.push(manifest.visit(idx).time_years);
        }
    }
    let map = moment_map(&ref_psi, &ref_age)?;

    let offsets = manifest.subject_offsets();
    let mut records: Vec<AnalysisRecord> = manifest
        .subjects
        .iter()
        .enumerate()
        .map(|(si, s)| {
            let visits: Vec<VisitRecord> = s
                .visits
                .iter()
                .enumerate()
                .map(|(vi, v)| {
                    let psi = psis[offsets[si] + vi];
                    VisitRecord {
                        visit_index: vi,
                        age_years: v.time_years,
                        psi_raw: psi,
                        psi_normalized: map.apply(psi),
                    }
                })
                .collect();
            AnalysisRecord {
                subject_id: s.subject_id.clone(),
                group: s.group,
                visits,
                slope: None,
            }
        })
        .collect();
    for r in &mut records {
        r.slope = subject_slope(&r.visits);
    }

    let mut groups = Vec::new();
    for group in [Group::Control, Group::Diseased] {
        let members: Vec<&AnalysisRecord> = records.iter().filter(|r| r.group == group).collect();
        if members.is_empty() {
            continue;
        }
        let slopes: Vec<f64> = members.iter().filter_map(|r| r.slope).collect();
        let (mut ages, mut ps, mut ids) = (Vec::new(), Vec::new(), Vec::new());
        for r in &members {
            for v in &r.visits {
                ages.push(v.age_years);
                ps.push(v.psi_normalized);
                ids.push(r.subject_id.as_str());
            }
        }
        groups.push(GroupSummary {
            group,
            n_subjects: members.len(),
            n_images: ages.len(),
            n_slopes: slopes.len(),
            mean_slope: (!slopes.is_empty()).then(|| mean(&slopes)),
            sd_slope: (slopes.len() >= 2).then(|| sqrt(crate::stats::sample_variance(&slopes))),
            trend: fit_quadratic_trend(&ages, &ps, &ids).ok(),
        });
    }

    let slopes_of = |g: Group| -> Vec<f64> {
        records.iter().filter(|r| r.group == g).filter_map(|r| r.slope).collect()
    };
    let (sd, sc) = (slopes_of(Group::Diseased), slopes_of(Group::Control));
    let slope_test = welch_t_test(&sd, &sc).ok();
    let slope_ratio = (!sd.is_empty() && !sc.is_empty()).then(|| mean(&sd) / mean(&sc));

    let traversal = traversal_for(params, manifest_reps(&reps, cohort, Group::Control), config)?;

    Ok(AnalysisReport {
        reference: config.reference,
        normalization: map,
        records,
        groups,
        slope_test,
        slope_ratio,
        traversal,
    })
}

/// Control representations when there are any, otherwise all of them.
fn manifest_reps(reps: &[Representation], cohort: &Cohort, group: Group) -> Vec<Representation> {
    let picked: Vec<Representation> = cohort
        .manifest
        .images()
        .filter(|idx| cohort.manifest.subjects[idx.subject].group == group)
        .map(|idx| reps[idx.flat].clone())
        .collect();
    if picked.is_empty() {
        reps.to_vec()
    } else {
        picked
    }
}

/// Decodes a traversal spanning the range of ψ over `reps`.
pub fn traversal_for(
    params: &ModelParams,
    reps: Vec<Representation>,
    config: &AnalysisConfig,
) -> Result<Traversal> {
    let psis: Vec<f64> = reps.iter().map(|z| dot(z.as_slice(), &params.tau)).collect();
    let lo = psis.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = psis.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let psi_grid = linspace(lo, hi, config.traversal_steps);
    let images = simulate_brains(&psi_grid, params, &reps)?;
    Ok(Traversal {
        dark_area: images
            .iter()
            .map(|im| dark_area(im, REFERENCE_TISSUE, REFERENCE_BRAIN_RADIUS))
            .collect(),
        constant: images.iter().map(ImageVolume::is_constant).collect(),
        psi_grid,
        images,
    })
}
