//! Convolution, ReLU, batch normalization and the L1 cost.
//!
//! Convolutions are "same" cross-correlations with zero padding of `k / 2`.
//! Work is split across batch items; per-item partial gradients are summed in
//! batch order so results do not depend on the worker count.

use rayon::prelude::*;

use super::Tensor4;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub in_ch: usize,
    pub out_ch: usize,
    pub k: usize,
    /// `(out_ch, in_ch, k, k)` row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads {
    pub grad_x: Tensor4,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvLayer {
    pub fn zeros(in_ch: usize, out_ch: usize, k: usize) -> Result<Self> {
        if k % 2 == 0 || in_ch == 0 || out_ch == 0 {
            return Err(Error::ShapeMismatch(format!(
                "invalid conv layer {}->{} with kernel {}",
                in_ch, out_ch, k
            )));
        }
        Ok(Self {
            in_ch,
            out_ch,
            k,
            weights: vec![0.0; out_ch * in_ch * k * k],
            bias: vec![0.0; out_ch],
        })
    }

    pub fn weight_len(&self) -> usize {
        self.out_ch * self.in_ch * self.k * self.k
    }

    #[inline]
    pub fn weight(&self, o: usize, i: usize, ky: usize, kx: usize) -> f64 {
        self.weights[((o * self.in_ch + i) * self.k + ky) * self.k + kx]
    }

    fn check_input(&self, x: &Tensor4) -> Result<()> {
        if x.channels() != self.in_ch {
            return Err(Error::ShapeMismatch(format!(
                "conv expects {} input channels, got {}",
                self.in_ch,
                x.channels()
            )));
        }
        if self.weights.len() != self.weight_len() || self.bias.len() != self.out_ch {
            return Err(Error::ShapeMismatch("conv parameters have wrong length".into()));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor4) -> Result<Tensor4> {
        self.check_input(x)?;
        let [n, _, h, w] = x.dims();
        let out_len = self.out_ch * h * w;
        let mut out = vec![0.0; n * out_len];
        out.par_chunks_mut(out_len.max(1))
            .enumerate()
            .for_each(|(b, dst)| self.forward_sample(x.sample(b), h, w, dst));
        Tensor4::new([n, self.out_ch, h, w], out)
    }

    fn forward_sample(&self, src: &[f64], h: usize, w: usize, dst: &mut [f64]) {
        let r = self.k / 2;
        let plane = h * w;
        for o in 0..self.out_ch {
            let out_plane = &mut dst[o * plane..(o + 1) * plane];
            out_plane.fill(self.bias[o]);
            for i in 0..self.in_ch {
                let in_plane = &src[i * plane..(i + 1) * plane];
                for ky in 0..self.k {
                    for kx in 0..self.k {
                        let wv = self.weight(o, i, ky, kx);
                        if wv == 0.0 {
                            continue;
                        }
                        let (x_lo, x_hi) = valid_range(w, kx, r);
                        for y in 0..h {
                            let sy = y as isize + ky as isize - r as isize;
                            if sy < 0 || sy >= h as isize {
                                continue;
                            }
                            let srow = &in_plane[sy as usize * w..(sy as usize + 1) * w];
                            let drow = &mut out_plane[y * w..(y + 1) * w];
                            let shift = kx as isize - r as isize;
                            let s = &srow[(x_lo as isize + shift) as usize..(x_hi as isize + shift) as usize];
                            for (d, v) in drow[x_lo..x_hi].iter_mut().zip(s) {
                                *d += wv * v;
                            }
                        }
                    }
                }
            }
        }
    }

    pub fn backward(&self, x: &Tensor4, grad_out: &Tensor4) -> Result<ConvGrads> {
        self.check_input(x)?;
        let [n, _, h, w] = x.dims();
        if grad_out.dims() != [n, self.out_ch, h, w] {
            return Err(Error::ShapeMismatch(format!(
                "conv gradient {:?} does not match output {:?}",
                grad_out.dims(),
                [n, self.out_ch, h, w]
            )));
        }
        let partials: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = (0..n)
            .into_par_iter()
            .map(|b| self.backward_sample(x.sample(b), grad_out.sample(b), h, w))
            .collect();

        let mut grad_x = Vec::with_capacity(x.data().len());
        let mut gw = vec![0.0; self.weight_len()];
        let mut gb = vec![0.0; self.out_ch];
        for (gx, pw, pb) in partials {
            grad_x.extend_from_slice(&gx);
            gw.iter_mut().zip(&pw).for_each(|(a, b)| *a += b);
            gb.iter_mut().zip(&pb).for_each(|(a, b)| *a += b);
        }
        Ok(ConvGrads {
            grad_x: Tensor4::new(x.dims(), grad_x)?,
            weights: gw,
            bias: gb,
        })
    }

    fn backward_sample(
        &self,
        src: &[f64],
        gout: &[f64],
        h: usize,
        w: usize,
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let r = self.k / 2;
        let plane = h * w;
        let mut gx = vec![0.0; self.in_ch * plane];
        let mut gw = vec![0.0; self.weight_len()];
        let mut gb = vec![0.0; self.out_ch];
        for o in 0..self.out_ch {
            let go_plane = &gout[o * plane..(o + 1) * plane];
            gb[o] = go_plane.iter().sum();
            for i in 0..self.in_ch {
                let in_plane = &src[i * plane..(i + 1) * plane];
                let gx_plane = &mut gx[i * plane..(i + 1) * plane];
                for ky in 0..self.k {
                    for kx in 0..self.k {
                        let widx = ((o * self.in_ch + i) * self.k + ky) * self.k + kx;
                        let wv = self.weights[widx];
                        let (x_lo, x_hi) = valid_range(w, kx, r);
                        let shift = kx as isize - r as isize;
                        let mut acc = 0.0;
                        for y in 0..h {
                            let sy = y as isize + ky as isize - r as isize;
                            if sy < 0 || sy >= h as isize {
                                continue;
                            }
                            let sy = sy as usize;
                            let lo = (x_lo as isize + shift) as usize;
                            let hi = (x_hi as isize + shift) as usize;
                            let grow = &go_plane[y * w + x_lo..y * w + x_hi];
                            let srow = &in_plane[sy * w + lo..sy * w + hi];
                            acc += grow.iter().zip(srow).map(|(g, s)| g * s).sum::<f64>();
                            if wv != 0.0 {
                                let xrow = &mut gx_plane[sy * w + lo..sy * w + hi];
                                for (d, g) in xrow.iter_mut().zip(grow) {
                                    *d += wv * g;
                                }
                            }
                        }
                        gw[widx] = acc;
                    }
                }
            }
        }
        (gx, gw, gb)
    }
}

/// Output columns `[lo, hi)` whose tap `kx` reads inside a row of width `w`.
#[inline]
fn valid_range(w: usize, kx: usize, r: usize) -> (usize, usize) {
    let lo = r.saturating_sub(kx);
    let hi = (w + r).saturating_sub(kx).min(w);
    (lo.min(hi), hi)
}

pub fn conv2d_forward(x: &Tensor4, layer: &ConvLayer) -> Result<Tensor4> {
    layer.forward(x)
}

pub fn conv2d_backward(x: &Tensor4, layer: &ConvLayer, grad_out: &Tensor4) -> Result<ConvGrads> {
    layer.backward(x, grad_out)
}

pub fn relu_forward(x: &Tensor4) -> Tensor4 {
    let data = x.data().iter().map(|&v| v.max(0.0)).collect();
    Tensor4::new(x.dims(), data).expect("same shape")
}

/// Passes gradient where the forward input was strictly positive.
pub fn relu_backward(x: &Tensor4, grad_out: &Tensor4) -> Result<Tensor4> {
    if !x.same_dims(grad_out) {
        return Err(Error::ShapeMismatch("relu gradient shape".into()));
    }
    let data = x
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
        .collect();
    Tensor4::new(x.dims(), data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Debug, Clone, PartialEq)]
struct BnCache {
    normalized: Tensor4,
    inv_std: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormLayer {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    /// Weight of the newest batch statistic in the running averages.
    pub momentum: f64,
    pub epsilon: f64,
    cache: Option<BnCache>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BnGrads {
    pub grad_x: Tensor4,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPSILON: f64 = 1e-5;

impl BatchNormLayer {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum: BN_MOMENTUM,
            epsilon: BN_EPSILON,
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn has_cache(&self) -> bool {
        self.cache.is_some()
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }

    fn check(&self, x: &Tensor4) -> Result<()> {
        if x.channels() != self.channels() {
            return Err(Error::ShapeMismatch(format!(
                "batch norm over {} channels given {}",
                self.channels(),
                x.channels()
            )));
        }
        Ok(())
    }

    pub fn forward(&mut self, x: &Tensor4, mode: Mode) -> Result<Tensor4> {
        match mode {
            Mode::Infer => self.forward_infer(x),
            Mode::Train => self.forward_train(x),
        }
    }

    /// Affine per-channel map using the running statistics.
    pub fn forward_infer(&self, x: &Tensor4) -> Result<Tensor4> {
        self.check(x)?;
        let mut out = x.clone();
        for c in 0..self.channels() {
            let scale = self.gamma[c] / (self.running_var[c] + self.epsilon).sqrt();
            let shift = self.beta[c] - self.running_mean[c] * scale;
            for b in 0..x.batch() {
                out.plane_mut(b, c).iter_mut().for_each(|v| *v = *v * scale + shift);
            }
        }
        Ok(out)
    }

    fn forward_train(&mut self, x: &Tensor4) -> Result<Tensor4> {
        self.check(x)?;
        let count = x.batch() * x.plane_len();
        if count < 2 {
            return Err(Error::DegenerateBatch(count));
        }
        let mut normalized = x.clone();
        let mut out = x.clone();
        let mut inv_std = vec![0.0; self.channels()];
        for c in 0..self.channels() {
            let mean = (0..x.batch())
                .map(|b| x.plane(b, c).iter().sum::<f64>())
                .sum::<f64>()
                / count as f64;
            let var = (0..x.batch())
                .map(|b| x.plane(b, c).iter().map(|v| (v - mean) * (v - mean)).sum::<f64>())
                .sum::<f64>()
                / count as f64;
            let istd = 1.0 / (var + self.epsilon).sqrt();
            inv_std[c] = istd;
            for b in 0..x.batch() {
                for (nv, ov) in normalized
                    .plane_mut(b, c)
                    .iter_mut()
                    .zip(out.plane_mut(b, c).iter_mut())
                {
                    let xh = (*nv - mean) * istd;
                    *nv = xh;
                    *ov = self.gamma[c] * xh + self.beta[c];
                }
            }
            let unbiased = var * count as f64 / (count - 1) as f64;
            self.running_mean[c] = (1.0 - self.momentum) * self.running_mean[c] + self.momentum * mean;
            self.running_var[c] = (1.0 - self.momentum) * self.running_var[c] + self.momentum * unbiased;
        }
        self.cache = Some(BnCache {
            normalized,
            inv_std,
        });
        Ok(out)
    }

    /// Gradient of the most recent train-mode forward pass.
    pub fn backward(&self, grad_out: &Tensor4) -> Result<BnGrads> {
        let cache = self.cache.as_ref().ok_or(Error::MissingCache)?;
        let xh = &cache.normalized;
        if !grad_out.same_dims(xh) {
            return Err(Error::ShapeMismatch("batch norm gradient shape".into()));
        }
        let n = xh.batch();
        let count = (n * xh.plane_len()) as f64;
        let mut grad_x = Tensor4::zeros(xh.dims());
        let mut gg = vec![0.0; self.channels()];
        let mut gbeta = vec![0.0; self.channels()];
        for c in 0..self.channels() {
            let mut sum_g = 0.0;
            let mut sum_gx = 0.0;
            for b in 0..n {
                for (g, x) in grad_out.plane(b, c).iter().zip(xh.plane(b, c)) {
                    sum_g += g;
                    sum_gx += g * x;
                }
            }
            gbeta[c] = sum_g;
            gg[c] = sum_gx;
            let k = self.gamma[c] * cache.inv_std[c] / count;
            for b in 0..n {
                let dst = grad_x.plane_mut(b, c);
                for ((d, g), x) in dst.iter_mut().zip(grad_out.plane(b, c)).zip(xh.plane(b, c)) {
                    *d = k * (count * g - sum_g - x * sum_gx);
                }
            }
        }
        Ok(BnGrads {
            grad_x,
            gamma: gg,
            beta: gbeta,
        })
    }
}

pub fn batchnorm_forward(x: &Tensor4, bn: &mut BatchNormLayer, mode: Mode) -> Result<Tensor4> {
    bn.forward(x, mode)
}

pub fn batchnorm_backward(bn: &BatchNormLayer, grad_out: &Tensor4) -> Result<BnGrads> {
    bn.backward(grad_out)
}

/// Mean absolute error and its subgradient (zero where `pred == target`).
pub fn l1_loss(pred: &Tensor4, target: &Tensor4) -> Result<(f64, Tensor4)> {
    if !pred.same_dims(target) {
        return Err(Error::ShapeMismatch(format!(
            "prediction {:?} vs target {:?}",
            pred.dims(),
            target.dims()
        )));
    }
    let count = pred.data().len() as f64;
    let mut loss = 0.0;
    let grad = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(p, t)| {
            let d = p - t;
            loss += d.abs();
            if d > 0.0 {
                1.0 / count
            } else if d < 0.0 {
                -1.0 / count
            } else {
                0.0
            }
        })
        .collect();
    Ok((loss / count, Tensor4::new(pred.dims(), grad)?))
}
