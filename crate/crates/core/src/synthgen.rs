//! Synthetic longitudinal phantoms with known generative factors.
//!
//! Each image is a bright disc ("brain") with a dark central region
//! ("ventricle"). The age factor widens the ventricle, the head-size factor
//! scales the disc, the tissue factor sets the disc intensity:
//!
//! ```text
//! R_b = 0.70 + 0.10 tanh(a2)      R_v = 0.10 + 0.35 sigmoid(a1)
//! T   = 0.8  + 0.2  tanh(a3)
//! I(r) = T sigmoid(12 (R_b - r)) (1 - sigmoid(12 (R_v - r))) + noise
//! ```
//!
//! Subjects follow `a1(t) = c (t - 65) / 15 + b` with `c = 1.0` for controls
//! and `c = 1.5` for the diseased group; `a2` and `a3` are fixed per subject.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use rand::Rng as _;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::math::{sigmoid, sqrt, tanh};
use crate::rng::{derive_seed, rng_for, rng_from_seed};
use crate::{Error, Result};

pub const AGE_FACTOR: usize = 0;
pub const HEAD_SIZE_FACTOR: usize = 1;
pub const TISSUE_FACTOR: usize = 2;

/// Edge sharpness of the logistic boundaries.
pub const SHARPNESS: f64 = 12.0;

/// Ground-truth generative factors; index 0 is the age factor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FactorVector(Vec<f64>);

impl FactorVector {
    pub fn new(alpha: Vec<f64>) -> Result<Self> {
        if alpha.len() < 2 {
            return Err(Error::InvalidFactor(format!(
                "need at least 2 factors, got {}",
                alpha.len()
            )));
        }
        if let Some(bad) = alpha.iter().position(|a| !a.is_finite()) {
            return Err(Error::InvalidFactor(format!("factor {bad} is not finite")));
        }
        Ok(Self(alpha))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn age(&self) -> f64 {
        self.0[AGE_FACTOR]
    }

    pub fn get(&self, j: usize) -> Option<f64> {
        self.0.get(j).copied()
    }

    fn component(&self, j: usize) -> f64 {
        self.0.get(j).copied().unwrap_or(0.0)
    }

    pub fn validate(&self) -> Result<()> {
        Self::new(self.0.clone()).map(|_| ())
    }
}

/// Copy of `alpha` with `alpha[j] += delta`.
pub fn perturb_factor(alpha: &FactorVector, j: usize, delta: f64) -> Result<FactorVector> {
    if j >= alpha.len() {
        return Err(Error::Index {
            index: j,
            len: alpha.len(),
        });
    }
    let mut next = alpha.0.clone();
    next[j] += delta;
    FactorVector::new(next)
}

/// Image lattice: `dim` is 2 or 3, `size` is the edge length G.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grid {
    pub dim: usize,
    pub size: usize,
}

impl Grid {
    pub const fn square(size: usize) -> Self {
        Self { dim: 2, size }
    }

    pub const fn cube(size: usize) -> Self {
        Self { dim: 3, size }
    }

    pub fn dims(&self) -> Vec<usize> {
        alloc::vec![self.size; self.dim]
    }

    pub fn voxels(&self) -> usize {
        self.size.pow(self.dim as u32)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dim == 2 || self.dim == 3) {
            return Err(Error::Config(format!("grid dim must be 2 or 3, got {}", self.dim)));
        }
        if self.size < 8 {
            return Err(Error::Config(format!("grid size must be >= 8, got {}", self.size)));
        }
        Ok(())
    }
}

/// Pixel-center coordinate in [-1, 1] for index `i` of `size`.
#[inline]
pub fn pixel_coordinate(i: usize, size: usize) -> f64 {
    -1.0 + (2.0 * i as f64 + 1.0) / size as f64
}

/// Dense row-major real image, 2-D `[G, G]` or 3-D `[G, G, G]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageVolume {
    dims: Vec<usize>,
    data: Vec<f64>,
}

impl ImageVolume {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = dims.iter().product();
        if dims.is_empty() || expected != data.len() {
            return Err(Error::shape(
                format!("{expected} values for dims {dims:?}"),
                data.len(),
            ));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: Vec<usize>) -> Self {
        let n = dims.iter().product();
        Self {
            dims,
            data: alloc::vec![0.0; n],
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Round every value to the nearest `f32`, matching what the tensor file
    /// format stores.
    pub fn quantize_f32(mut self) -> Self {
        for v in &mut self.data {
            *v = *v as f32 as f64;
        }
        self
    }

    /// True when every value equals the first one.
    pub fn is_constant(&self) -> bool {
        self.data.windows(2).all(|w| w[0] == w[1])
    }
}

pub fn brain_radius(head_size: f64) -> f64 {
    0.70 + 0.10 * tanh(head_size)
}

pub fn ventricle_radius(age: f64) -> f64 {
    0.10 + 0.35 * sigmoid(age)
}

pub fn tissue_level(tissue: f64) -> f64 {
    0.8 + 0.2 * tanh(tissue)
}

/// Noise-free phantom intensity at radius `r`.
pub fn phantom_intensity(alpha: &FactorVector, r: f64) -> f64 {
    let rb = brain_radius(alpha.component(HEAD_SIZE_FACTOR));
    let rv = ventricle_radius(alpha.component(AGE_FACTOR));
    let t = tissue_level(alpha.component(TISSUE_FACTOR));
    t * sigmoid(SHARPNESS * (rb - r)) * (1.0 - sigmoid(SHARPNESS * (rv - r)))
}

fn radius_at(flat: usize, grid: Grid) -> f64 {
    let g = grid.size;
    let x = pixel_coordinate(flat % g, g);
    let y = pixel_coordinate((flat / g) % g, g);
    let z = if grid.dim == 3 {
        pixel_coordinate(flat / (g * g), g)
    } else {
        0.0
    };
    sqrt(x * x + y * y + z * z)
}

/// Render the phantom for `alpha`, adding seeded Gaussian noise.
pub fn render_image(
    alpha: &FactorVector,
    grid: Grid,
    noise_sigma: f64,
    noise_seed: u64,
) -> Result<ImageVolume> {
    alpha.validate()?;
    grid.validate()?;
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(Error::Config(format!("noise_sigma must be >= 0, got {noise_sigma}")));
    }
    let mut data: Vec<f64> = (0..grid.voxels())
        .map(|i| phantom_intensity(alpha, radius_at(i, grid)))
        .collect();
    if noise_sigma > 0.0 {
        let mut rng = rng_from_seed(noise_seed);
        for v in &mut data {
            let e: f64 = rng.sample(StandardNormal);
            *v += noise_sigma * e;
        }
    }
    ImageVolume::new(grid.dims(), data)
}

/// Number of pixels inside the brain disc (`r < brain_radius`) whose
/// intensity is below `0.1 * tissue`. Grows with the ventricle.
pub fn dark_area(image: &ImageVolume, tissue: f64, brain_radius: f64) -> usize {
    let dims = image.dims();
    let grid = Grid {
        dim: dims.len(),
        size: dims[0],
    };
    image
        .data()
        .iter()
        .enumerate()
        .filter(|&(i, &v)| radius_at(i, grid) < brain_radius && v < 0.1 * tissue)
        .count()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    Control,
    Diseased,
}

impl Group {
    pub fn label(self) -> f64 {
        match self {
            Group::Control => 0.0,
            Group::Diseased => 1.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Group::Control => "control",
            Group::Diseased => "diseased",
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Visit {
    pub time_years: f64,
    pub factors: FactorVector,
    pub image_ref: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectTrajectory {
    pub subject_id: String,
    pub group: Group,
    pub visits: Vec<Visit>,
}

impl SubjectTrajectory {
    /// Times strictly increasing, age factor strictly increasing, all other
    /// factors constant across visits.
    pub fn validate(&self) -> Result<()> {
        for w in self.visits.windows(2) {
            let (a, b) = (&w[0], &w[1]);
            if b.time_years <= a.time_years {
                return Err(Error::InvalidFactor(format!(
                    "{}: visit times not strictly increasing",
                    self.subject_id
                )));
            }
            if b.factors.age() <= a.factors.age() {
                return Err(Error::InvalidFactor(format!(
                    "{}: age factor not strictly increasing",
                    self.subject_id
                )));
            }
            if a.factors.len() != b.factors.len()
                || a.factors.as_slice()[1..] != b.factors.as_slice()[1..]
            {
                return Err(Error::InvalidFactor(format!(
                    "{}: non-age factors change across visits",
                    self.subject_id
                )));
            }
        }
        Ok(())
    }
}

/// Trajectory model parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CohortConfig {
    pub baseline_age_min: f64,
    pub baseline_age_max: f64,
    pub min_visits: usize,
    pub max_visits: usize,
    pub visit_interval_years: f64,
    pub center_age: f64,
    pub age_scale_years: f64,
    pub control_rate: f64,
    pub diseased_rate: f64,
    pub offset_sd: f64,
    pub n_factors: usize,
}

impl Default for CohortConfig {
    fn default() -> Self {
        Self {
            baseline_age_min: 50.0,
            baseline_age_max: 80.0,
            min_visits: 2,
            max_visits: 5,
            visit_interval_years: 1.0,
            center_age: 65.0,
            age_scale_years: 15.0,
            control_rate: 1.0,
            diseased_rate: 1.5,
            offset_sd: 0.1,
            n_factors: 3,
        }
    }
}

impl CohortConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.baseline_age_max >= self.baseline_age_min
            && self.min_visits >= 1
            && self.max_visits >= self.min_visits
            && self.visit_interval_years > 0.0
            && self.age_scale_years > 0.0
            && self.control_rate > 0.0
            && self.diseased_rate > 0.0
            && self.offset_sd >= 0.0
            && self.n_factors >= 2;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid cohort config: {self:?}")))
        }
    }

    pub fn rate(&self, group: Group) -> f64 {
        match group {
            Group::Control => self.control_rate,
            Group::Diseased => self.diseased_rate,
        }
    }

    /// Age factor at time `t` for a subject with offset `b`.
    pub fn age_factor(&self, group: Group, t: f64, offset: f64) -> f64 {
        self.rate(group) * (t - self.center_age) / self.age_scale_years + offset
    }
}

/// Draw one subject's trajectory. Image refs are filled in as
/// `images/<subject_id>_v<k>.lssl`.
pub fn sample_subject(
    subject_id: &str,
    rng_seed: u64,
    group: Group,
    cohort: &CohortConfig,
) -> Result<SubjectTrajectory> {
    cohort.validate()?;
    let mut rng = rng_from_seed(rng_seed);
    let baseline = if cohort.baseline_age_max > cohort.baseline_age_min {
        rng.random_range(cohort.baseline_age_min..cohort.baseline_age_max)
    } else {
        cohort.baseline_age_min
    };
    let n_visits = rng.random_range(cohort.min_visits..=cohort.max_visits);
    let offset = if cohort.offset_sd > 0.0 {
        Normal::new(0.0, cohort.offset_sd)
            .map_err(|e| Error::Config(format!("{e}")))?
            .sample(&mut rng)
    } else {
        0.0
    };
    let fixed: Vec<f64> = (1..cohort.n_factors)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();

    let visits = (0..n_visits)
        .map(|k| {
            let t = baseline + k as f64 * cohort.visit_interval_years;
            let mut alpha = Vec::with_capacity(cohort.n_factors);
            alpha.push(cohort.age_factor(group, t, offset));
            alpha.extend_from_slice(&fixed);
            Ok(Visit {
                time_years: t,
                factors: FactorVector::new(alpha)?,
                image_ref: format!("images/{subject_id}_v{k}.lssl"),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SubjectTrajectory {
        subject_id: String::from(subject_id),
        group,
        visits,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub n_subjects: usize,
    pub diseased_fraction: f64,
    pub grid: Grid,
    pub noise_sigma: f64,
    /// Prefix for subject ids, e.g. `S` gives `S0000`, `S0001`, ...
    pub id_prefix: String,
    pub cohort: CohortConfig,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            n_subjects: 200,
            diseased_fraction: 0.5,
            grid: Grid::square(32),
            noise_sigma: 0.02,
            id_prefix: String::from("S"),
            cohort: CohortConfig::default(),
        }
    }
}

impl GeneratorConfig {
    pub fn n_diseased(&self) -> usize {
        libm::round(self.n_subjects as f64 * self.diseased_fraction) as usize
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        self.cohort.validate()?;
        if self.n_subjects == 0 {
            return Err(Error::Config("n_subjects must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.diseased_fraction) {
            return Err(Error::Config("diseased_fraction must lie in [0, 1]".into()));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::Config("noise_sigma must be >= 0".into()));
        }
        Ok(())
    }
}

/// Position of one image inside a manifest.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ImageIndex {
    pub subject: usize,
    pub visit: usize,
    /// Index into the flattened (subject-major, visit-minor) image list.
    pub flat: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub subjects: Vec<SubjectTrajectory>,
    pub config: GeneratorConfig,
    pub seed: u64,
}

impl DatasetManifest {
    pub fn n_images(&self) -> usize {
        self.subjects.iter().map(|s| s.visits.len()).sum()
    }

    pub fn images(&self) -> impl Iterator<Item = ImageIndex> + '_ {
        let mut flat = 0;
        self.subjects.iter().enumerate().flat_map(move |(si, s)| {
            let start = flat;
            flat += s.visits.len();
            (0..s.visits.len()).map(move |v| ImageIndex {
                subject: si,
                visit: v,
                flat: start + v,
            })
        })
    }

    /// Flat index of the first image of every subject, plus the total.
    pub fn subject_offsets(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.subjects.len() + 1);
        let mut acc = 0;
        out.push(0);
        for s in &self.subjects {
            acc += s.visits.len();
            out.push(acc);
        }
        out
    }

    pub fn visit(&self, idx: ImageIndex) -> &Visit {
        &self.subjects[idx.subject].visits[idx.visit]
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for s in &self.subjects {
            if !seen.insert(s.subject_id.as_str()) {
                return Err(Error::Config(format!("duplicate subject id {}", s.subject_id)));
            }
            s.validate()?;
        }
        Ok(())
    }
}

/// Seed of the noise field of one image.
pub fn image_noise_seed(seed: u64, subject_index: usize, visit_index: usize) -> u64 {
    derive_seed(seed, &[1, subject_index as u64, visit_index as u64])
}

/// Seed of one subject's trajectory draw.
pub fn subject_seed(seed: u64, subject_index: usize) -> u64 {
    derive_seed(seed, &[0, subject_index as u64])
}

/// A manifest together with its rendered images, in flat order.
#[derive(Clone, Debug, PartialEq)]
pub struct Cohort {
    pub manifest: DatasetManifest,
    pub images: Vec<ImageVolume>,
}

impl Cohort {
    pub fn new(manifest: DatasetManifest, images: Vec<ImageVolume>) -> Result<Self> {
        if manifest.n_images() != images.len() {
            return Err(Error::shape(
                format!("{} images", manifest.n_images()),
                images.len(),
            ));
        }
        Ok(Self { manifest, images })
    }

    pub fn n_images(&self) -> usize {
        self.images.len()
    }
}

/// Draw trajectories only (no rendering). Subjects `0..n_control` are
/// controls, the rest diseased.
pub fn generate_manifest(config: &GeneratorConfig, seed: u64) -> Result<DatasetManifest> {
    config.validate()?;
    let n_control = config.n_subjects - config.n_diseased();
    let subjects = (0..config.n_subjects)
        .map(|i| {
            let group = if i < n_control {
                Group::Control
            } else {
                Group::Diseased
            };
            let id = format!("{}{:04}", config.id_prefix, i);
            sample_subject(&id, subject_seed(seed, i), group, &config.cohort)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DatasetManifest {
        subjects,
        config: config.clone(),
        seed,
    })
}

/// Render every visit of a manifest. Values are rounded to `f32`.
pub fn render_manifest(manifest: &DatasetManifest) -> Result<Vec<ImageVolume>> {
    let cfg = &manifest.config;
    manifest
        .images()
        .map(|idx| {
            let visit = manifest.visit(idx);
            render_image(
                &visit.factors,
                cfg.grid,
                cfg.noise_sigma,
                image_noise_seed(manifest.seed, idx.subject, idx.visit),
            )
            .map(ImageVolume::quantize_f32)
        })
        .collect()
}

pub fn generate_cohort(config: &GeneratorConfig, seed: u64) -> Result<Cohort> {
    let manifest = generate_manifest(config, seed)?;
    let images = render_manifest(&manifest)?;
    Cohort::new(manifest, images)
}

/// Per-image seed helper for one-off renders outside a manifest.
pub fn probe_rng(seed: u64, index: u64) -> crate::rng::Rng {
    rng_for(seed, &[2, index])
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn alpha(v: &[f64]) -> FactorVector {
        FactorVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn center_intensity_matches_closed_form() {
        // 0.8 * sigmoid(8.4) * (1 - sigmoid(12 * 0.275)), evaluated independently.
        let v = phantom_intensity(&alpha(&[0.0, 0.0, 0.0]), 0.0);
        assert!((v - 0.028_450_553_818_200_407).abs() < 1e-12, "{v}");
    }

    #[test]
    fn ventricle_saturates_for_large_age() {
        assert!((ventricle_radius(60.0) - 0.45).abs() < 1e-12);
        assert!((ventricle_radius(-60.0) - 0.10).abs() < 1e-12);
    }

    #[test]
    fn render_is_deterministic() {
        let a = alpha(&[0.3, -0.2, 0.5]);
        let x = render_image(&a, Grid::square(16), 0.02, 9).unwrap();
        let y = render_image(&a, Grid::square(16), 0.02, 9).unwrap();
        assert_eq!(x, y);
        let z = render_image(&a, Grid::square(16), 0.02, 10).unwrap();
        assert_ne!(x, z);
    }

    #[test]
    fn render_rejects_bad_input() {
        assert!(matches!(
            FactorVector::new(vec![f64::NAN, 0.0]),
            Err(Error::InvalidFactor(_))
        ));
        assert!(render_image(&alpha(&[0.0, 0.0]), Grid::square(4), 0.0, 0).is_err());
        assert!(render_image(&alpha(&[0.0, 0.0]), Grid::square(8), -1.0, 0).is_err());
    }

    #[test]
    fn render_3d_shape() {
        let img = render_image(&alpha(&[0.0, 0.0, 0.0]), Grid::cube(8), 0.0, 0).unwrap();
        assert_eq!(img.dims(), &[8, 8, 8]);
        assert_eq!(img.len(), 512);
    }

    #[test]
    fn perturb_factor_cases() {
        let a = alpha(&[0.1, 0.2, 0.3]);
        assert_eq!(perturb_factor(&a, 0, 0.0).unwrap(), a);
        assert_eq!(
            perturb_factor(&alpha(&[0.0, 0.0, 0.0]), 1, 0.5).unwrap(),
            alpha(&[0.0, 0.5, 0.0])
        );
        assert!(matches!(
            perturb_factor(&a, 3, 1.0),
            Err(Error::Index { index: 3, len: 3 })
        ));
    }

    #[test]
    fn age_perturbation_only_touches_ventricle_annulus() {
        let a = alpha(&[0.0, 0.0, 0.0]);
        let g = Grid::square(32);
        let base = render_image(&a, g, 0.0, 0).unwrap();
        let moved = render_image(&perturb_factor(&a, 0, 0.25).unwrap(), g, 0.0, 0).unwrap();
        let (r0, r1) = (ventricle_radius(0.0), ventricle_radius(0.25));
        for i in 0..g.voxels() {
            let diff = (moved.data()[i] - base.data()[i]).abs();
            let r = radius_at(i, g);
            // Outside a band of ~6 logistic widths around the moving boundary
            // the change is negligible.
            if r < r0 - 0.5 || r > r1 + 0.5 {
                assert!(diff < 1e-3, "pixel {i} r={r} diff={diff}");
            }
        }
        let peak = (0..g.voxels())
            .map(|i| (moved.data()[i] - base.data()[i]).abs())
            .fold(0.0, f64::max);
        assert!(peak > 1e-2);
    }

    #[test]
    fn dark_area_monotone_in_age() {
        let g = Grid::square(32);
        let mut last = 0;
        for k in 0..=60 {
            let a1 = -3.0 + 0.1 * k as f64;
            let img = render_image(&alpha(&[a1, 0.4, -0.7]), g, 0.0, 0).unwrap();
            let area = dark_area(&img, tissue_level(-0.7), brain_radius(0.4));
            assert!(area >= last, "a1={a1}: {area} < {last}");
            last = area;
        }
        assert!(last > 0);
    }

    #[test]
    fn subject_trajectory_model() {
        let cfg = CohortConfig::default();
        let s = sample_subject("D1", 5, Group::Diseased, &cfg).unwrap();
        s.validate().unwrap();
        assert!((2..=5).contains(&s.visits.len()));
        for w in s.visits.windows(2) {
            let step = w[1].factors.age() - w[0].factors.age();
            assert!((step - 0.1).abs() < 1e-12);
            assert!((w[1].time_years - w[0].time_years - 1.0).abs() < 1e-12);
        }
        assert_eq!(s, sample_subject("D1", 5, Group::Diseased, &cfg).unwrap());
        // centering: control with zero offset has a1 = 0 at t = 65
        assert_eq!(cfg.age_factor(Group::Control, 65.0, 0.0), 0.0);
    }

    #[test]
    fn manifest_groups_balanced() {
        let cfg = GeneratorConfig {
            n_subjects: 20,
            grid: Grid::square(8),
            ..GeneratorConfig::default()
        };
        let m = generate_manifest(&cfg, 3).unwrap();
        m.validate().unwrap();
        let diseased = m.subjects.iter().filter(|s| s.group == Group::Diseased).count();
        assert_eq!(diseased, 10);
        let idx: Vec<_> = m.images().collect();
        assert_eq!(idx.len(), m.n_images());
        assert!(idx.iter().enumerate().all(|(i, x)| x.flat == i));
    }
}
