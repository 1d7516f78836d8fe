//! Convolutional encoder, mirrored decoder and the learnable unit
//! direction `tau`.
//!
//! Encoder: `widths.len()` blocks of (3x3 conv -> ReLU -> 2x max-pool), then a
//! fully connected layer to the latent size. Decoder: fully connected layer
//! back to the last block's feature map, then (2x upsample -> 3x3 conv -> ReLU)
//! blocks walking the widths in reverse; the final block maps to one channel
//! and has no ReLU.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::math::{all_finite, norm, sqrt};
use crate::nn::{
    maxpool_backward, maxpool_forward, relu_backward, relu_forward, upsample_backward,
    upsample_forward, Conv, Linear, PatternHash, Spatial,
};
use crate::rng::rng_for;
use crate::synthgen::ImageVolume;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// Weights ~ U(-sqrt(6 / fan_in), sqrt(6 / fan_in)), biases zero.
    #[default]
    HeUniform,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchConfig {
    /// 2 for images, 3 for volumes.
    pub dim: usize,
    /// Edge length of the input.
    pub grid: usize,
    /// Channel width of each encoder block.
    pub widths: Vec<usize>,
    /// Size K of the representation.
    pub latent_dim: usize,
    pub init: InitScheme,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ArchConfig {
    /// 64^3 volumes, widths (16, 32, 64, 16), K = 512.
    pub fn paper() -> Self {
        Self {
            dim: 3,
            grid: 64,
            widths: vec![16, 32, 64, 16],
            latent_dim: 512,
            init: InitScheme::HeUniform,
        }
    }

    /// 32x32 images, widths (8, 16, 32, 8), K = 32.
    pub fn desk() -> Self {
        Self {
            dim: 2,
            grid: 32,
            widths: vec![8, 16, 32, 8],
            latent_dim: 32,
            init: InitScheme::HeUniform,
        }
    }

    /// 8x8 images, K = 4; small enough for exhaustive finite differences.
    pub fn micro() -> Self {
        Self {
            dim: 2,
            grid: 8,
            widths: vec![3, 4],
            latent_dim: 4,
            init: InitScheme::HeUniform,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dim == 2 || self.dim == 3) {
            return Err(Error::Arch(format!("dim must be 2 or 3, got {}", self.dim)));
        }
        if self.widths.is_empty() || self.widths.contains(&0) {
            return Err(Error::Arch(format!("invalid widths {:?}", self.widths)));
        }
        if self.latent_dim == 0 {
            return Err(Error::Arch("latent_dim must be positive".into()));
        }
        let div = 1usize << self.widths.len();
        if self.grid == 0 || self.grid % div != 0 {
            return Err(Error::Arch(format!(
                "grid {} not divisible by 2^{} = {div}",
                self.grid,
                self.widths.len()
            )));
        }
        Ok(())
    }

    pub fn image_dims(&self) -> Vec<usize> {
        vec![self.grid; self.dim]
    }

    fn volume(&self) -> bool {
        self.dim == 3
    }

    fn input_spatial(&self) -> Spatial {
        Spatial::of(self.dim, self.grid)
    }

    fn bottleneck_spatial(&self) -> Spatial {
        let mut s = self.input_spatial();
        for _ in &self.widths {
            s = s.pooled(self.volume());
        }
        s
    }

    fn bottleneck_len(&self) -> usize {
        self.bottleneck_spatial().len() * self.widths[self.widths.len() - 1]
    }
}

/// Offsets of one layer's weight and bias inside a flat parameter vector.
#[derive(Clone, Copy, Debug)]
struct Slot {
    weight: usize,
    bias: usize,
    end: usize,
}

fn slot(cursor: &mut usize, weight_len: usize, bias_len: usize) -> Slot {
    let s = Slot {
        weight: *cursor,
        bias: *cursor + weight_len,
        end: *cursor + weight_len + bias_len,
    };
    *cursor = s.end;
    s
}

/// Layer geometry of an encoder with `out_dim` outputs (K for plain
/// encoders, 2K for the variational baseline).
#[derive(Clone, Debug)]
pub struct EncoderLayout {
    volume: bool,
    convs: Vec<(Conv, Slot)>,
    fc: (Linear, Slot),
    len: usize,
}

impl EncoderLayout {
    pub fn new(arch: &ArchConfig, out_dim: usize) -> Self {
        let volume = arch.volume();
        let mut cursor = 0;
        let mut spatial = arch.input_spatial();
        let mut c_in = 1;
        let mut convs = Vec::with_capacity(arch.widths.len());
        for &c_out in &arch.widths {
            let conv = Conv {
                c_in,
                c_out,
                spatial,
                volume,
            };
            convs.push((conv, slot(&mut cursor, conv.weight_len(), c_out)));
            spatial = spatial.pooled(volume);
            c_in = c_out;
        }
        let fc = Linear {
            n_in: arch.bottleneck_len(),
            n_out: out_dim,
        };
        let fc_slot = slot(&mut cursor, fc.weight_len(), out_dim);
        Self {
            volume,
            convs,
            fc: (fc, fc_slot),
            len: cursor,
        }
    }

    pub fn param_len(&self) -> usize {
        self.len
    }

    pub fn out_dim(&self) -> usize {
        self.fc.0.n_out
    }

    pub fn input_len(&self) -> usize {
        self.convs[0].0.input_len()
    }

    /// Parameter shapes in storage order, `(rows, cols)` per tensor.
    pub fn shapes(&self) -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        for (c, _) in &self.convs {
            let mut w = vec![c.c_out, c.c_in, c.kernel_depth(), 3, 3];
            if !self.volume {
                w.remove(2);
            }
            out.push(w);
            out.push(vec![c.c_out]);
        }
        out.push(vec![self.fc.0.n_out, self.fc.0.n_in]);
        out.push(vec![self.fc.0.n_out]);
        out
    }

    pub fn init(&self, params: &mut [f64], rng: &mut crate::rng::Rng) {
        for (c, s) in &self.convs {
            he_uniform(&mut params[s.weight..s.bias], c.fan_in(), rng);
        }
        let (fc, s) = self.fc;
        he_uniform(&mut params[s.weight..s.bias], fc.n_in, rng);
    }

    /// Parameters of the same encoder restricted to its first `rows`
    /// outputs.
    pub fn truncate_outputs(&self, theta: &[f64], rows: usize) -> Vec<f64> {
        let (fc, s) = self.fc;
        let rows = rows.min(fc.n_out);
        let mut out = theta[..s.weight].to_vec();
        out.extend_from_slice(&theta[s.weight..s.weight + rows * fc.n_in]);
        out.extend_from_slice(&theta[s.bias..s.bias + rows]);
        out
    }

    pub fn forward(&self, theta: &[f64], input: &[f64]) -> (Vec<f64>, EncoderCache) {
        let mut cache = EncoderCache::default();
        let mut x = input.to_vec();
        for (conv, s) in &self.convs {
            let mut y = conv.forward(&x, &theta[s.weight..s.bias], &theta[s.bias..s.end]);
            let mask = relu_forward(&mut y);
            let (pooled, arg) = maxpool_forward(&y, conv.c_out, conv.spatial, self.volume);
            cache.conv_inputs.push(x);
            cache.masks.push(mask);
            cache.argmax.push(arg);
            x = pooled;
        }
        let (fc, s) = self.fc;
        let z = fc.forward(&x, &theta[s.weight..s.bias], &theta[s.bias..s.end]);
        cache.fc_input = x;
        (z, cache)
    }

    /// Accumulates `d loss / d theta` for upstream gradient `grad_z`.
    pub fn backward(&self, theta: &[f64], cache: &EncoderCache, grad_z: &[f64], grad_theta: &mut [f64]) {
        let (fc, s) = self.fc;
        let (gw, gb) = grad_theta[s.weight..s.end].split_at_mut(s.bias - s.weight);
        let mut g = fc.backward(&cache.fc_input, &theta[s.weight..s.bias], grad_z, gw, gb);
        for (i, (conv, s)) in self.convs.iter().enumerate().rev() {
            let mut gy = maxpool_backward(&g, &cache.argmax[i], conv.output_len());
            relu_backward(&mut gy, &cache.masks[i]);
            let (gw, gb) = grad_theta[s.weight..s.end].split_at_mut(s.bias - s.weight);
            match conv.backward(
                &cache.conv_inputs[i],
                &theta[s.weight..s.bias],
                &gy,
                gw,
                gb,
                i > 0,
            ) {
                Some(gx) => g = gx,
                None => break,
            }
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct EncoderCache {
    conv_inputs: Vec<Vec<f64>>,
    masks: Vec<Vec<bool>>,
    argmax: Vec<Vec<u32>>,
    fc_input: Vec<f64>,
}

impl EncoderCache {
    pub fn pattern(&self, h: &mut PatternHash) {
        for m in &self.masks {
            h.mask(m);
        }
        for a in &self.argmax {
            h.indices(a);
        }
    }
}

#[derive(Clone, Debug)]
pub struct DecoderLayout {
    volume: bool,
    fc: (Linear, Slot),
    seed_spatial: Spatial,
    seed_channels: usize,
    convs: Vec<(Conv, Slot)>,
    len: usize,
}

impl DecoderLayout {
    pub fn new(arch: &ArchConfig) -> Self {
        let volume = arch.volume();
        let mut cursor = 0;
        let fc = Linear {
            n_in: arch.latent_dim,
            n_out: arch.bottleneck_len(),
        };
        let fc_slot = slot(&mut cursor, fc.weight_len(), fc.n_out);
        let seed_spatial = arch.bottleneck_spatial();
        let mut channels: Vec<usize> = arch.widths.iter().rev().copied().collect();
        channels.push(1);
        let mut spatial = seed_spatial;
        let mut convs = Vec::with_capacity(arch.widths.len());
        for w in channels.windows(2) {
            spatial = spatial.upsampled(volume);
            let conv = Conv {
                c_in: w[0],
                c_out: w[1],
                spatial,
                volume,
            };
            convs.push((conv, slot(&mut cursor, conv.weight_len(), w[1])));
        }
        Self {
            volume,
            fc: (fc, fc_slot),
            seed_spatial,
            seed_channels: channels[0],
            convs,
            len: cursor,
        }
    }

    pub fn param_len(&self) -> usize {
        self.len
    }

    pub fn shapes(&self) -> Vec<Vec<usize>> {
        let mut out = vec![vec![self.fc.0.n_out, self.fc.0.n_in], vec![self.fc.0.n_out]];
        for (c, _) in &self.convs {
            let mut w = vec![c.c_out, c.c_in, c.kernel_depth(), 3, 3];
            if !self.volume {
                w.remove(2);
            }
            out.push(w);
            out.push(vec![c.c_out]);
        }
        out
    }

    fn init(&self, params: &mut [f64], rng: &mut crate::rng::Rng) {
        let (fc, s) = self.fc;
        he_uniform(&mut params[s.weight..s.bias], fc.n_in, rng);
        for (c, s) in &self.convs {
            he_uniform(&mut params[s.weight..s.bias], c.fan_in(), rng);
        }
    }

    pub fn forward(&self, phi: &[f64], z: &[f64]) -> (Vec<f64>, DecoderCache) {
        let mut cache = DecoderCache {
            z: z.to_vec(),
            ..DecoderCache::default()
        };
        let (fc, s) = self.fc;
        let mut x = fc.forward(z, &phi[s.weight..s.bias], &phi[s.bias..s.end]);
        let mut spatial = self.seed_spatial;
        let mut channels = self.seed_channels;
        let last = self.convs.len() - 1;
        for (i, (conv, s)) in self.convs.iter().enumerate() {
            let up = upsample_forward(&x, channels, spatial, self.volume);
            let mut y = conv.forward(&up, &phi[s.weight..s.bias], &phi[s.bias..s.end]);
            if i < last {
                cache.masks.push(relu_forward(&mut y));
            }
            cache.conv_inputs.push(up);
            x = y;
            spatial = conv.spatial;
            channels = conv.c_out;
        }
        (x, cache)
    }

    /// Accumulates `d loss / d phi`; returns `d loss / d z`.
    pub fn backward(
        &self,
        phi: &[f64],
        cache: &DecoderCache,
        grad_out: &[f64],
        grad_phi: &mut [f64],
    ) -> Vec<f64> {
        let last = self.convs.len() - 1;
        let mut g = grad_out.to_vec();
        for (i, (conv, s)) in self.convs.iter().enumerate().rev() {
            if i < last {
                relu_backward(&mut g, &cache.masks[i]);
            }
            let (gw, gb) = grad_phi[s.weight..s.end].split_at_mut(s.bias - s.weight);
            let gup = conv
                .backward(&cache.conv_inputs[i], &phi[s.weight..s.bias], &g, gw, gb, true)
                .expect("input gradient requested");
            let in_spatial = if i == 0 {
                self.seed_spatial
            } else {
                self.convs[i - 1].0.spatial
            };
            g = upsample_backward(&gup, conv.c_in, in_spatial, self.volume);
        }
        let (fc, s) = self.fc;
        let (gw, gb) = grad_phi[s.weight..s.end].split_at_mut(s.bias - s.weight);
        fc.backward(&cache.z, &phi[s.weight..s.bias], &g, gw, gb)
    }
}

#[derive(Clone, Debug, Default)]
pub struct DecoderCache {
    z: Vec<f64>,
    conv_inputs: Vec<Vec<f64>>,
    masks: Vec<Vec<bool>>,
}

impl DecoderCache {
    pub fn pattern(&self, h: &mut PatternHash) {
        for m in &self.masks {
            h.mask(m);
        }
    }
}

fn he_uniform(w: &mut [f64], fan_in: usize, rng: &mut crate::rng::Rng) {
    let bound = sqrt(6.0 / fan_in.max(1) as f64);
    for v in w {
        *v = rng.random_range(-bound..bound);
    }
}

/// Latent vector produced by the encoder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Representation(pub Vec<f64>);

impl Representation {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Encoder weights `theta`, decoder weights `phi` and the unit direction
/// `tau`, with the architecture that gives them shape.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub arch: ArchConfig,
    pub theta: Vec<f64>,
    pub phi: Vec<f64>,
    pub tau: Vec<f64>,
}

/// Anything that maps an image to a representation and carries a direction.
/// The verifier is written against this so it can be driven by oracle
/// encoders as well as trained models.
pub trait RepresentationModel {
    fn represent(&self, image: &ImageVolume) -> Result<Representation>;
    fn direction(&self) -> &[f64];
}

impl RepresentationModel for ModelParams {
    fn represent(&self, image: &ImageVolume) -> Result<Representation> {
        encode(image, self)
    }

    fn direction(&self) -> &[f64] {
        &self.tau
    }
}

pub fn init_model(arch: &ArchConfig, seed: u64) -> Result<ModelParams> {
    arch.validate()?;
    let enc = EncoderLayout::new(arch, arch.latent_dim);
    let dec = DecoderLayout::new(arch);
    let mut rng = rng_for(seed, &[0x6d6f_6465_6c]);
    let mut theta = vec![0.0; enc.param_len()];
    let mut phi = vec![0.0; dec.param_len()];
    match arch.init {
        InitScheme::HeUniform => {
            enc.init(&mut theta, &mut rng);
            dec.init(&mut phi, &mut rng);
        }
    }
    let mut tau: Vec<f64> = (0..arch.latent_dim)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    normalize_in_place(&mut tau);
    Ok(ModelParams {
        arch: arch.clone(),
        theta,
        phi,
        tau,
    })
}

fn normalize_in_place(v: &mut [f64]) {
    let n = norm(v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    } else if let Some(first) = v.first_mut() {
        *first = 1.0;
    }
}

impl ModelParams {
    /// All weights zero, `tau = e_1`.
    pub fn zeros(arch: &ArchConfig) -> Result<Self> {
        arch.validate()?;
        let mut tau = vec![0.0; arch.latent_dim];
        tau[0] = 1.0;
        Ok(Self {
            theta: vec![0.0; EncoderLayout::new(arch, arch.latent_dim).param_len()],
            phi: vec![0.0; DecoderLayout::new(arch).param_len()],
            tau,
            arch: arch.clone(),
        })
    }

    pub fn encoder_layout(&self) -> EncoderLayout {
        EncoderLayout::new(&self.arch, self.arch.latent_dim)
    }

    pub fn decoder_layout(&self) -> DecoderLayout {
        DecoderLayout::new(&self.arch)
    }

    pub fn tau_norm(&self) -> f64 {
        norm(&self.tau)
    }

    /// Project `tau` back onto the unit sphere.
    pub fn renormalize_tau(&mut self) {
        normalize_in_place(&mut self.tau);
    }

    pub fn param_count(&self) -> usize {
        self.theta.len() + self.phi.len() + self.tau.len()
    }

    pub fn is_finite(&self) -> bool {
        all_finite(&self.theta) && all_finite(&self.phi) && all_finite(&self.tau)
    }

    pub fn check_image(&self, image: &ImageVolume) -> Result<()> {
        let dims = self.arch.image_dims();
        if image.dims() != dims.as_slice() {
            return Err(Error::shape(format!("{dims:?}"), format!("{:?}", image.dims())));
        }
        Ok(())
    }
}

pub fn encode(image: &ImageVolume, params: &ModelParams) -> Result<Representation> {
    params.check_image(image)?;
    let (z, _) = params.encoder_layout().forward(&params.theta, image.data());
    Ok(Representation(z))
}

pub fn decode(z: &Representation, params: &ModelParams) -> Result<ImageVolume> {
    if z.len() != params.arch.latent_dim {
        return Err(Error::shape(params.arch.latent_dim, z.len()));
    }
    let (x, _) = params.decoder_layout().forward(&params.phi, z.as_slice());
    ImageVolume::new(params.arch.image_dims(), x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::{render_image, FactorVector, Grid};

    fn image(arch: &ArchConfig) -> ImageVolume {
        let a = FactorVector::new(vec![0.2, -0.1, 0.3]).unwrap();
        let grid = Grid {
            dim: arch.dim,
            size: arch.grid,
        };
        render_image(&a, grid, 0.02, 1).unwrap()
    }

    #[test]
    fn paper_arch_shapes() {
        let arch = ArchConfig::paper();
        arch.validate().unwrap();
        let enc = EncoderLayout::new(&arch, arch.latent_dim);
        let shapes = enc.shapes();
        assert_eq!(shapes[0], vec![16, 1, 3, 3, 3]);
        assert_eq!(shapes[2], vec![32, 16, 3, 3, 3]);
        assert_eq!(shapes[4], vec![64, 32, 3, 3, 3]);
        assert_eq!(shapes[6], vec![16, 64, 3, 3, 3]);
        // 64 / 2^4 = 4, so the bottleneck is 16 * 4^3 = 1024 features.
        assert_eq!(shapes[8], vec![512, 1024]);
        assert_eq!(shapes[9], vec![512]);
        let dec = DecoderLayout::new(&arch);
        let d = dec.shapes();
        assert_eq!(d[0], vec![1024, 512]);
        assert_eq!(d[2], vec![64, 16, 3, 3, 3]);
        assert_eq!(d[8], vec![1, 16, 3, 3, 3]);
    }

    #[test]
    fn desk_arch_walkthrough() {
        let arch = ArchConfig::desk();
        let enc = EncoderLayout::new(&arch, arch.latent_dim);
        // 32 -> 16 -> 8 -> 4 -> 2, 8 channels: 32 features.
        assert_eq!(enc.shapes()[8], vec![32, 32]);
        let expected_theta = (8 * 9 + 8) + (16 * 8 * 9 + 16) + (32 * 16 * 9 + 32) + (8 * 32 * 9 + 8)
            + (32 * 32 + 32);
        assert_eq!(enc.param_len(), expected_theta);
        let p = init_model(&arch, 3).unwrap();
        assert_eq!(p.theta.len(), expected_theta);
        let z = encode(&image(&arch), &p).unwrap();
        assert_eq!(z.len(), 32);
        let x = decode(&z, &p).unwrap();
        assert_eq!(x.dims(), &[32, 32]);
    }

    #[test]
    fn grid_must_divide() {
        let arch = ArchConfig {
            grid: 8,
            ..ArchConfig::desk()
        };
        assert!(matches!(init_model(&arch, 0), Err(Error::Arch(_))));
    }

    #[test]
    fn tau_is_unit() {
        for seed in 0..20 {
            let p = init_model(&ArchConfig::micro(), seed).unwrap();
            assert!((p.tau_norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_weights() {
        let arch = ArchConfig::desk();
        let p = ModelParams::zeros(&arch).unwrap();
        let z = encode(&image(&arch), &p).unwrap();
        assert!(z.0.iter().all(|&v| v == 0.0));
        let x = decode(&z, &p).unwrap();
        assert!(x.is_constant());
    }

    #[test]
    fn shape_errors() {
        let arch = ArchConfig::desk();
        let p = init_model(&arch, 0).unwrap();
        let small = image(&ArchConfig::micro());
        assert!(matches!(encode(&small, &p), Err(Error::Shape { .. })));
        assert!(matches!(
            decode(&Representation(vec![0.0; 3]), &p),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn forward_is_pure() {
        let arch = ArchConfig::desk();
        let p = init_model(&arch, 9).unwrap();
        let img = image(&arch);
        let a = encode(&img, &p).unwrap();
        assert_eq!(a, encode(&img, &p).unwrap());
        assert_eq!(decode(&a, &p).unwrap(), decode(&a, &p).unwrap());
    }

    #[test]
    fn volume_roundtrip_shape() {
        let arch = ArchConfig {
            dim: 3,
            grid: 8,
            widths: vec![2, 2],
            latent_dim: 3,
            init: InitScheme::HeUniform,
        };
        let p = init_model(&arch, 1).unwrap();
        let img = image(&arch);
        let x = decode(&encode(&img, &p).unwrap(), &p).unwrap();
        assert_eq!(x.dims(), &[8, 8, 8]);
    }
}
