//! Dense layer kernels with hand-written backward passes.
//!
//! Activations are channel-major `[c][d][h][w]` slices. A 2-D image is a
//! volume with `d = 1`, and then kernels and pooling windows have depth 1,
//! so a single code path serves both dimensionalities.

use alloc::vec;
use alloc::vec::Vec;

use crate::math::{sigmoid, tanh};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Spatial {
    pub d: usize,
    pub h: usize,
    pub w: usize,
}

impl Spatial {
    pub fn of(dim: usize, size: usize) -> Self {
        Self {
            d: if dim == 3 { size } else { 1 },
            h: size,
            w: size,
        }
    }

    pub fn len(&self) -> usize {
        self.d * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Depth extent of kernels and pooling windows.
    fn depth_factor(volume: bool) -> usize {
        if volume {
            2
        } else {
            1
        }
    }

    pub fn pooled(&self, volume: bool) -> Self {
        Self {
            d: self.d / Self::depth_factor(volume),
            h: self.h / 2,
            w: self.w / 2,
        }
    }

    pub fn upsampled(&self, volume: bool) -> Self {
        Self {
            d: self.d * Self::depth_factor(volume),
            h: self.h * 2,
            w: self.w * 2,
        }
    }
}

/// 3x3 (or 3x3x3) same-padded, stride-1 convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv {
    pub c_in: usize,
    pub c_out: usize,
    pub spatial: Spatial,
    pub volume: bool,
}

impl Conv {
    pub fn kernel_depth(&self) -> usize {
        if self.volume {
            3
        } else {
            1
        }
    }

    pub fn kernel_volume(&self) -> usize {
        self.kernel_depth() * 9
    }

    pub fn weight_len(&self) -> usize {
        self.c_out * self.c_in * self.kernel_volume()
    }

    pub fn fan_in(&self) -> usize {
        self.c_in * self.kernel_volume()
    }

    pub fn input_len(&self) -> usize {
        self.c_in * self.spatial.len()
    }

    pub fn output_len(&self) -> usize {
        self.c_out * self.spatial.len()
    }

    /// Visit every (kernel tap, output row) pair with the valid column span.
    /// The callback gets `(k, out_row_start, in_row_start, len)` offsets within
    /// one channel plane.
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize, usize)) {
        let s = self.spatial;
        let kd = self.kernel_depth();
        let pad_d = kd / 2;
        for kz in 0..kd {
            for ky in 0..3 {
                for kx in 0..3 {
                    let k = (kz * 3 + ky) * 3 + kx;
                    // output x range such that x + kx - 1 in [0, w)
                    let x0 = if kx == 0 { 1 } else { 0 };
                    let x1 = if kx == 2 { s.w - 1 } else { s.w };
                    if x1 <= x0 {
                        continue;
                    }
                    let len = x1 - x0;
                    for z in 0..s.d {
                        let iz = z as isize + kz as isize - pad_d as isize;
                        if iz < 0 || iz >= s.d as isize {
                            continue;
                        }
                        for y in 0..s.h {
                            let iy = y as isize + ky as isize - 1;
                            if iy < 0 || iy >= s.h as isize {
                                continue;
                            }
                            let out_row = (z * s.h + y) * s.w + x0;
                            let in_row = (iz as usize * s.h + iy as usize) * s.w + x0 + kx - 1;
                            f(k, out_row, in_row, len);
                        }
                    }
                }
            }
        }
    }

    pub fn forward(&self, input: &[f64], weight: &[f64], bias: &[f64]) -> Vec<f64> {
        let plane = self.spatial.len();
        let kv = self.kernel_volume();
        let mut out = vec![0.0; self.output_len()];
        for co in 0..self.c_out {
            let out_c = &mut out[co * plane..(co + 1) * plane];
            out_c.fill(bias[co]);
            for ci in 0..self.c_in {
                let in_c = &input[ci * plane..(ci + 1) * plane];
                let wk = &weight[(co * self.c_in + ci) * kv..(co * self.c_in + ci + 1) * kv];
                self.for_each_tap(|k, o, i, len| {
                    let wv = wk[k];
                    for (dst, src) in out_c[o..o + len].iter_mut().zip(&in_c[i..i + len]) {
                        *dst += wv * src;
                    }
                });
            }
        }
        out
    }

    /// Accumulates weight and bias gradients; returns the input gradient when
    /// `need_input_grad` is set.
    pub fn backward(
        &self,
        input: &[f64],
        weight: &[f64],
        grad_out: &[f64],
        grad_weight: &mut [f64],
        grad_bias: &mut [f64],
        need_input_grad: bool,
    ) -> Option<Vec<f64>> {
        let plane = self.spatial.len();
        let kv = self.kernel_volume();
        let mut grad_in = if need_input_grad {
            Some(vec![0.0; self.input_len()])
        } else {
            None
        };
        for co in 0..self.c_out {
            let go = &grad_out[co * plane..(co + 1) * plane];
            grad_bias[co] += go.iter().sum::<f64>();
            for ci in 0..self.c_in {
                let in_c = &input[ci * plane..(ci + 1) * plane];
                let base = (co * self.c_in + ci) * kv;
                let wk = &weight[base..base + kv];
                let gwk = &mut grad_weight[base..base + kv];
                match grad_in.as_mut() {
                    Some(gi) => {
                        let gi_c = &mut gi[ci * plane..(ci + 1) * plane];
                        self.for_each_tap(|k, o, i, len| {
                            let wv = wk[k];
                            let mut acc = 0.0;
                            for ((g, x), dx) in go[o..o + len]
                                .iter()
                                .zip(&in_c[i..i + len])
                                .zip(&mut gi_c[i..i + len])
                            {
                                acc += g * x;
                                *dx += wv * g;
                            }
                            gwk[k] += acc;
                        });
                    }
                    None => {
                        self.for_each_tap(|k, o, i, len| {
                            let acc: f64 = go[o..o + len]
                                .iter()
                                .zip(&in_c[i..i + len])
                                .map(|(g, x)| g * x)
                                .sum();
                            gwk[k] += acc;
                        });
                    }
                }
            }
        }
        grad_in
    }
}

/// In-place ReLU; returns the activity mask.
pub fn relu_forward(x: &mut [f64]) -> Vec<bool> {
    x.iter_mut()
        .map(|v| {
            let on = *v > 0.0;
            if !on {
                *v = 0.0;
            }
            on
        })
        .collect()
}

pub fn relu_backward(grad: &mut [f64], mask: &[bool]) {
    for (g, &m) in grad.iter_mut().zip(mask) {
        if !m {
            *g = 0.0;
        }
    }
}

/// 2x2 (or 2x2x2) max pooling. Returns pooled values and, for each output,
/// the flat index of the winning input.
pub fn maxpool_forward(
    input: &[f64],
    channels: usize,
    s: Spatial,
    volume: bool,
) -> (Vec<f64>, Vec<u32>) {
    let o = s.pooled(volume);
    let fd = if volume { 2 } else { 1 };
    let mut out = Vec::with_capacity(channels * o.len());
    let mut arg = Vec::with_capacity(channels * o.len());
    for c in 0..channels {
        let base = c * s.len();
        for z in 0..o.d {
            for y in 0..o.h {
                for x in 0..o.w {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_i = 0;
                    for dz in 0..fd {
                        for dy in 0..2 {
                            for dx in 0..2 {
                                let i = base
                                    + ((z * fd + dz) * s.h + y * 2 + dy) * s.w
                                    + x * 2
                                    + dx;
                                if input[i] > best {
                                    best = input[i];
                                    best_i = i;
                                }
                            }
                        }
                    }
                    out.push(best);
                    arg.push(best_i as u32);
                }
            }
        }
    }
    (out, arg)
}

pub fn maxpool_backward(grad_out: &[f64], argmax: &[u32], input_len: usize) -> Vec<f64> {
    let mut g = vec![0.0; input_len];
    for (&go, &i) in grad_out.iter().zip(argmax) {
        g[i as usize] += go;
    }
    g
}

/// Nearest-neighbour 2x upsampling of `s` (2x2 or 2x2x2 replication).
pub fn upsample_forward(input: &[f64], channels: usize, s: Spatial, volume: bool) -> Vec<f64> {
    let o = s.upsampled(volume);
    let fd = if volume { 2 } else { 1 };
    let mut out = Vec::with_capacity(channels * o.len());
    for c in 0..channels {
        let base = c * s.len();
        for z in 0..o.d {
            for y in 0..o.h {
                let row = base + ((z / fd) * s.h + y / 2) * s.w;
                for x in 0..o.w {
                    out.push(input[row + x / 2]);
                }
            }
        }
    }
    out
}

pub fn upsample_backward(grad_out: &[f64], channels: usize, s: Spatial, volume: bool) -> Vec<f64> {
    let o = s.upsampled(volume);
    let fd = if volume { 2 } else { 1 };
    let mut g = vec![0.0; channels * s.len()];
    let mut k = 0;
    for c in 0..channels {
        let base = c * s.len();
        for z in 0..o.d {
            for y in 0..o.h {
                let row = base + ((z / fd) * s.h + y / 2) * s.w;
                for x in 0..o.w {
                    g[row + x / 2] += grad_out[k];
                    k += 1;
                }
            }
        }
    }
    g
}

/// Fully connected layer, weight stored row-major `[out][in]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Linear {
    pub n_in: usize,
    pub n_out: usize,
}

impl Linear {
    pub fn weight_len(&self) -> usize {
        self.n_in * self.n_out
    }

    pub fn forward(&self, x: &[f64], weight: &[f64], bias: &[f64]) -> Vec<f64> {
        (0..self.n_out)
            .map(|o| {
                let row = &weight[o * self.n_in..(o + 1) * self.n_in];
                bias[o] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
            })
            .collect()
    }

    pub fn backward(
        &self,
        x: &[f64],
        weight: &[f64],
        grad_out: &[f64],
        grad_weight: &mut [f64],
        grad_bias: &mut [f64],
    ) -> Vec<f64> {
        let mut gx = vec![0.0; self.n_in];
        for o in 0..self.n_out {
            let g = grad_out[o];
            grad_bias[o] += g;
            if g == 0.0 {
                continue;
            }
            let row = &weight[o * self.n_in..(o + 1) * self.n_in];
            let grow = &mut grad_weight[o * self.n_in..(o + 1) * self.n_in];
            for i in 0..self.n_in {
                grow[i] += g * x[i];
                gx[i] += g * row[i];
            }
        }
        gx
    }
}

/// Single-layer gated recurrent unit.
///
/// ```text
/// r  = sigmoid(W_ir x + b_ir + W_hr h + b_hr)
/// u  = sigmoid(W_iu x + b_iu + W_hu h + b_hu)
/// n  = tanh(W_in x + b_in + r * (W_hn h + b_hn))
/// h' = (1 - u) * n + u * h
/// ```
///
/// Parameter layout: `w_ih [3H][I]`, `w_hh [3H][H]`, `b_ih [3H]`, `b_hh [3H]`,
/// gate blocks ordered (r, u, n).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Gru {
    pub n_in: usize,
    pub hidden: usize,
}

#[derive(Clone, Debug)]
pub struct GruStep {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    r: Vec<f64>,
    u: Vec<f64>,
    n: Vec<f64>,
    hn: Vec<f64>,
}

impl Gru {
    pub fn param_len(&self) -> usize {
        3 * self.hidden * (self.n_in + self.hidden + 2)
    }

    fn split<'a>(&self, p: &'a [f64]) -> (&'a [f64], &'a [f64], &'a [f64], &'a [f64]) {
        let h3 = 3 * self.hidden;
        let (w_ih, rest) = p.split_at(h3 * self.n_in);
        let (w_hh, rest) = rest.split_at(h3 * self.hidden);
        let (b_ih, b_hh) = rest.split_at(h3);
        (w_ih, w_hh, b_ih, b_hh)
    }

    /// Runs the full sequence from a zero state; returns the final hidden
    /// state and per-step caches.
    pub fn forward(&self, params: &[f64], xs: &[Vec<f64>]) -> (Vec<f64>, Vec<GruStep>) {
        let hdim = self.hidden;
        let (w_ih, w_hh, b_ih, b_hh) = self.split(params);
        let ih = Linear {
            n_in: self.n_in,
            n_out: 3 * hdim,
        };
        let hh = Linear {
            n_in: hdim,
            n_out: 3 * hdim,
        };
        let mut h = vec![0.0; hdim];
        let mut steps = Vec::with_capacity(xs.len());
        for x in xs {
            let gi = ih.forward(x, w_ih, b_ih);
            let gh = hh.forward(&h, w_hh, b_hh);
            let r: Vec<f64> = (0..hdim).map(|j| sigmoid(gi[j] + gh[j])).collect();
            let u: Vec<f64> = (0..hdim)
                .map(|j| sigmoid(gi[hdim + j] + gh[hdim + j]))
                .collect();
            let hn: Vec<f64> = gh[2 * hdim..].to_vec();
            let n: Vec<f64> = (0..hdim)
                .map(|j| tanh(gi[2 * hdim + j] + r[j] * hn[j]))
                .collect();
            let h_next: Vec<f64> = (0..hdim)
                .map(|j| (1.0 - u[j]) * n[j] + u[j] * h[j])
                .collect();
            steps.push(GruStep {
                x: x.clone(),
                h_prev: h,
                r,
                u,
                n,
                hn,
            });
            h = h_next;
        }
        (h, steps)
    }

    /// Back-propagates `grad_h` (w.r.t. the final hidden state) through time.
    /// Accumulates into `grad_params`; returns per-step input gradients.
    pub fn backward(
        &self,
        params: &[f64],
        steps: &[GruStep],
        grad_h: &[f64],
        grad_params: &mut [f64],
    ) -> Vec<Vec<f64>> {
        let hdim = self.hidden;
        let h3 = 3 * hdim;
        let (w_ih, w_hh, _, _) = self.split(params);
        let (gw_ih, rest) = grad_params.split_at_mut(h3 * self.n_in);
        let (gw_hh, rest) = rest.split_at_mut(h3 * hdim);
        let (gb_ih, gb_hh) = rest.split_at_mut(h3);
        let ih = Linear {
            n_in: self.n_in,
            n_out: h3,
        };
        let hh = Linear {
            n_in: hdim,
            n_out: h3,
        };
        let mut dh = grad_h.to_vec();
        let mut dxs = vec![Vec::new(); steps.len()];
        for (t, st) in steps.iter().enumerate().rev() {
            let mut d_gi = vec![0.0; h3];
            let mut d_gh = vec![0.0; h3];
            let mut dh_prev = vec![0.0; hdim];
            for j in 0..hdim {
                let (r, u, n) = (st.r[j], st.u[j], st.n[j]);
                let dn = dh[j] * (1.0 - u);
                let du = dh[j] * (st.h_prev[j] - n);
                dh_prev[j] += dh[j] * u;
                let dn_pre = dn * (1.0 - n * n);
                let du_pre = du * u * (1.0 - u);
                let dr = dn_pre * st.hn[j];
                let dr_pre = dr * r * (1.0 - r);
                d_gi[j] = dr_pre;
                d_gh[j] = dr_pre;
                d_gi[hdim + j] = du_pre;
                d_gh[hdim + j] = du_pre;
                d_gi[2 * hdim + j] = dn_pre;
                d_gh[2 * hdim + j] = dn_pre * r;
            }
            dxs[t] = ih.backward(&st.x, w_ih, &d_gi, gw_ih, gb_ih);
            let dh_from_gh = hh.backward(&st.h_prev, w_hh, &d_gh, gw_hh, gb_hh);
            for j in 0..hdim {
                dh_prev[j] += dh_from_gh[j];
            }
            dh = dh_prev;
        }
        dxs
    }
}

/// Binary cross-entropy on a logit; returns `(loss, dloss/dlogit)`.
pub fn bce_with_logit(logit: f64, label: f64) -> (f64, f64) {
    let loss = crate::math::softplus(logit) - label * logit;
    (loss, sigmoid(logit) - label)
}

/// FNV-1a over activation patterns, used to detect when a finite-difference
/// probe crosses a ReLU kink or flips a pooling winner.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PatternHash(pub u64);

impl Default for PatternHash {
    fn default() -> Self {
        Self(0xcbf2_9ce4_8422_2325)
    }
}

impl PatternHash {
    fn push(&mut self, byte: u8) {
        self.0 ^= byte as u64;
        self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
    }

    pub fn mask(&mut self, mask: &[bool]) {
        for &m in mask {
            self.push(m as u8);
        }
    }

    pub fn indices(&mut self, idx: &[u32]) {
        for &i in idx {
            for b in i.to_le_bytes() {
                self.push(b);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn rand_vec(rng: &mut crate::rng::Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn fd<F: FnMut(&[f64]) -> f64>(x: &[f64], mut f: F) -> Vec<f64> {
        let h = 1e-6;
        (0..x.len())
            .map(|i| {
                let mut p = x.to_vec();
                p[i] += h;
                let a = f(&p);
                p[i] -= 2.0 * h;
                let b = f(&p);
                (a - b) / (2.0 * h)
            })
            .collect()
    }

    fn close(a: &[f64], b: &[f64], tol: f64) {
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= tol * (1.0 + x.abs().max(y.abs())), "{x} vs {y}");
        }
    }

    /// Direct O(n * k) convolution used as the reference.
    fn conv_naive(c: &Conv, x: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
        let s = c.spatial;
        let kd = c.kernel_depth() as isize;
        let mut out = vec![0.0; c.output_len()];
        for co in 0..c.c_out {
            for z in 0..s.d as isize {
                for y in 0..s.h as isize {
                    for xx in 0..s.w as isize {
                        let mut acc = b[co];
                        for ci in 0..c.c_in {
                            for kz in 0..kd {
                                for ky in 0..3isize {
                                    for kx in 0..3isize {
                                        let (iz, iy, ix) = (z + kz - kd / 2, y + ky - 1, xx + kx - 1);
                                        if iz < 0
                                            || iy < 0
                                            || ix < 0
                                            || iz >= s.d as isize
                                            || iy >= s.h as isize
                                            || ix >= s.w as isize
                                        {
                                            continue;
                                        }
                                        let k = ((kz * 3 + ky) * 3 + kx) as usize;
                                        acc += w[(co * c.c_in + ci) * c.kernel_volume() + k]
                                            * x[ci * s.len()
                                                + ((iz as usize * s.h) + iy as usize) * s.w
                                                + ix as usize];
                                    }
                                }
                            }
                        }
                        out[co * s.len() + ((z as usize * s.h) + y as usize) * s.w + xx as usize] =
                            acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_naive_2d_and_3d() {
        let mut rng = crate::rng::rng_from_seed(1);
        for (volume, spatial) in [
            (false, Spatial { d: 1, h: 5, w: 4 }),
            (true, Spatial { d: 3, h: 4, w: 4 }),
        ] {
            let c = Conv {
                c_in: 2,
                c_out: 3,
                spatial,
                volume,
            };
            let x = rand_vec(&mut rng, c.input_len());
            let w = rand_vec(&mut rng, c.weight_len());
            let b = rand_vec(&mut rng, 3);
            close(&c.forward(&x, &w, &b), &conv_naive(&c, &x, &w, &b), 1e-12);
        }
    }

    #[test]
    fn conv_backward_matches_fd() {
        let mut rng = crate::rng::rng_from_seed(2);
        let c = Conv {
            c_in: 2,
            c_out: 2,
            spatial: Spatial { d: 1, h: 4, w: 3 },
            volume: false,
        };
        let x = rand_vec(&mut rng, c.input_len());
        let w = rand_vec(&mut rng, c.weight_len());
        let b = rand_vec(&mut rng, 2);
        let probe = rand_vec(&mut rng, c.output_len());
        let loss = |x: &[f64], w: &[f64], b: &[f64]| {
            c.forward(x, w, b).iter().zip(&probe).map(|(o, p)| o * p).sum::<f64>()
        };
        let mut gw = vec![0.0; w.len()];
        let mut gb = vec![0.0; 2];
        let gx = c.backward(&x, &w, &probe, &mut gw, &mut gb, true).unwrap();
        close(&gx, &fd(&x, |x| loss(x, &w, &b)), 1e-7);
        close(&gw, &fd(&w, |w| loss(&x, w, &b)), 1e-7);
        close(&gb, &fd(&b, |b| loss(&x, &w, b)), 1e-7);
    }

    #[test]
    fn pool_and_upsample_are_adjoint_shapes() {
        let s = Spatial { d: 1, h: 4, w: 4 };
        let x: Vec<f64> = (0..16).map(|i| i as f64).collect();
        let (p, arg) = maxpool_forward(&x, 1, s, false);
        assert_eq!(p, vec![5.0, 7.0, 13.0, 15.0]);
        let g = maxpool_backward(&[1.0, 2.0, 3.0, 4.0], &arg, 16);
        assert_eq!(g[5], 1.0);
        assert_eq!(g.iter().sum::<f64>(), 10.0);
        let up = upsample_forward(&p, 1, s.pooled(false), false);
        assert_eq!(up.len(), 16);
        assert_eq!(up[0], 5.0);
        assert_eq!(up[15], 15.0);
        let back = upsample_backward(&vec![1.0; 16], 1, s.pooled(false), false);
        assert_eq!(back, vec![4.0; 4]);
    }

    #[test]
    fn gru_backward_matches_fd() {
        let mut rng = crate::rng::rng_from_seed(3);
        let gru = Gru { n_in: 3, hidden: 4 };
        let p = rand_vec(&mut rng, gru.param_len());
        let xs: Vec<Vec<f64>> = (0..3).map(|_| rand_vec(&mut rng, 3)).collect();
        let probe = rand_vec(&mut rng, 4);
        let loss = |p: &[f64], xs: &[Vec<f64>]| {
            let (h, _) = gru.forward(p, xs);
            h.iter().zip(&probe).map(|(a, b)| a * b).sum::<f64>()
        };
        let (_, steps) = gru.forward(&p, &xs);
        let mut gp = vec![0.0; p.len()];
        let dxs = gru.backward(&p, &steps, &probe, &mut gp);
        close(&gp, &fd(&p, |p| loss(p, &xs)), 1e-7);
        for t in 0..3 {
            let num = fd(&xs[t], |x| {
                let mut ys = xs.clone();
                ys[t] = x.to_vec();
                loss(&p, &ys)
            });
            close(&dxs[t], &num, 1e-7);
        }
    }

    #[test]
    fn gru_is_order_sensitive() {
        let mut rng = crate::rng::rng_from_seed(4);
        let gru = Gru { n_in: 2, hidden: 3 };
        let p = rand_vec(&mut rng, gru.param_len());
        let xs = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![-1.0, 0.5]];
        let mut rev = xs.clone();
        rev.reverse();
        assert_ne!(gru.forward(&p, &xs).0, gru.forward(&p, &rev).0);
    }

    #[test]
    fn bce_gradient() {
        let (l, g) = bce_with_logit(0.0, 1.0);
        assert!((l - core::f64::consts::LN_2).abs() < 1e-12);
        assert!((g + 0.5).abs() < 1e-12);
        let (l, _) = bce_with_logit(800.0, 1.0);
        assert!(l.is_finite() && l < 1e-300 + 1e-12);
    }
}
