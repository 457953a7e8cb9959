//! Resampling and filtering: Keys bicubic upsampling, MTF-matched Gaussian
//! degradation and the high-pass preprocessing filter.
//!
//! Convolutions use half-sample symmetric reflection at the borders
//! (`... b a | a b c ...`); bicubic interpolation clamps to the edge.
//! Output sample `i` of an upsampling by `f` sits at input coordinate `i / f`,
//! so every `f`-th output sample coincides with an input sample. Decimation
//! keeps offsets `0, f, 2f, ...`, which makes the two grids consistent.

use std::f64::consts::PI;
use std::fmt;

use crate::error::{Error, Result};
use crate::raster::Grid;

/// Keys cubic convolution parameter.
pub const KEYS_A: f64 = -0.5;

/// Default Nyquist gain of the sensor MTF.
pub const DEFAULT_NYQUIST_GAIN: f64 = 0.3;

/// 1-D odd-length kernel applied along rows, then columns.
#[derive(Debug, Clone, PartialEq)]
pub struct SeparableKernel {
    taps: Vec<f64>,
}

impl SeparableKernel {
    pub fn new(taps: Vec<f64>) -> Result<Self> {
        if taps.len() % 2 == 0 {
            return Err(Error::ShapeMismatch(format!(
                "kernel length must be odd, got {}",
                taps.len()
            )));
        }
        if taps.iter().any(|t| !t.is_finite()) {
            return Err(Error::ShapeMismatch("kernel taps must be finite".into()));
        }
        Ok(Self { taps })
    }

    /// The single-tap identity kernel.
    pub fn identity() -> Self {
        Self { taps: vec![1.0] }
    }

    /// Normalized moving average of odd length `size`.
    pub fn boxcar(size: usize) -> Result<Self> {
        if size == 0 {
            return Err(Error::ShapeMismatch("box size must be positive".into()));
        }
        Self::new(vec![1.0 / size as f64; size])
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    pub fn radius(&self) -> usize {
        self.taps.len() / 2
    }

    pub fn sum(&self) -> f64 {
        self.taps.iter().sum()
    }

    /// DTFT of the taps at `f` cycles/sample, centered on the middle tap.
    pub fn frequency_response(&self, f: f64) -> f64 {
        let r = self.radius() as f64;
        let (re, im) = self
            .taps
            .iter()
            .enumerate()
            .fold((0.0, 0.0), |(re, im), (k, &t)| {
                let phase = 2.0 * PI * f * (k as f64 - r);
                (re + t * phase.cos(), im - t * phase.sin())
            });
        (re * re + im * im).sqrt()
    }
}

impl fmt::Display for SeparableKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let taps: Vec<String> = self.taps.iter().map(|t| format!("{:.12}", t)).collect();
        write!(f, "[{}]", taps.join(", "))
    }
}

/// Spatial standard deviation of a Gaussian whose response at the Nyquist
/// frequency of the coarser grid, `1 / (2 ratio)`, equals `nyquist_gain`.
pub fn mtf_sigma(nyquist_gain: f64, ratio: usize) -> f64 {
    ratio as f64 / PI * (-2.0 * nyquist_gain.ln()).sqrt()
}

/// Sampled, normalized Gaussian matching a sensor MTF, truncated at ±⌈4σ⌉.
pub fn mtf_gaussian_kernel(nyquist_gain: f64, ratio: usize) -> Result<SeparableKernel> {
    if !(nyquist_gain > 0.0 && nyquist_gain < 1.0) {
        return Err(Error::InvalidGain(nyquist_gain));
    }
    if ratio < 2 {
        return Err(Error::DegenerateInput(format!(
            "resolution ratio must be at least 2, got {}",
            ratio
        )));
    }
    let sigma = mtf_sigma(nyquist_gain, ratio);
    let radius = (4.0 * sigma).ceil() as isize;
    let mut taps: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= total);
    SeparableKernel::new(taps)
}

/// Maps any integer index into `0..n` by half-sample symmetric reflection.
#[inline]
pub fn reflect_index(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let m = i.rem_euclid(period) as usize;
    if m < n {
        m
    } else {
        2 * n - 1 - m
    }
}

fn convolve_line(src: &[f64], taps: &[f64], dst: &mut [f64], scratch: &mut Vec<f64>) {
    let n = src.len();
    let r = taps.len() / 2;
    scratch.clear();
    scratch.extend((0..n + 2 * r).map(|i| src[reflect_index(i as isize - r as isize, n)]));
    for (i, out) in dst.iter_mut().enumerate() {
        *out = scratch[i..i + taps.len()]
            .iter()
            .zip(taps)
            .map(|(a, b)| a * b)
            .sum();
    }
}

/// Separable convolution with symmetric reflection, output the same size.
pub fn convolve(band: &Grid, kernel: &SeparableKernel) -> Grid {
    let (w, h) = (band.width(), band.height());
    let taps = kernel.taps();
    let mut scratch = Vec::new();

    let mut rows = vec![0.0; w * h];
    for y in 0..h {
        convolve_line(
            &band.data()[y * w..(y + 1) * w],
            taps,
            &mut rows[y * w..(y + 1) * w],
            &mut scratch,
        );
    }

    let mut out = vec![0.0; w * h];
    let mut col = vec![0.0; h];
    let mut col_out = vec![0.0; h];
    for x in 0..w {
        for y in 0..h {
            col[y] = rows[y * w + x];
        }
        convolve_line(&col, taps, &mut col_out, &mut scratch);
        for y in 0..h {
            out[y * w + x] = col_out[y];
        }
    }
    Grid::new(w, h, out).expect("shape preserved")
}

/// Keeps samples at offsets `(0, 0), (factor, 0), ...`.
pub fn decimate(band: &Grid, factor: usize) -> Result<Grid> {
    check_divisible(band, factor)?;
    Ok(Grid::from_fn(
        band.width() / factor,
        band.height() / factor,
        |x, y| band.get(x * factor, y * factor),
    ))
}

fn check_divisible(band: &Grid, factor: usize) -> Result<()> {
    if factor == 0 || band.width() % factor != 0 || band.height() % factor != 0 {
        return Err(Error::NotDivisible {
            width: band.width(),
            height: band.height(),
            factor,
        });
    }
    Ok(())
}

/// Anti-aliasing filter followed by decimation.
pub fn degrade(band: &Grid, kernel: &SeparableKernel, factor: usize) -> Result<Grid> {
    check_divisible(band, factor)?;
    decimate(&convolve(band, kernel), factor)
}

/// `band - convolve(band, kernel)`.
pub fn highpass(band: &Grid, kernel: &SeparableKernel) -> Grid {
    let low = convolve(band, kernel);
    band.zip_map(&low, |a, b| a - b).expect("same shape")
}

/// Keys cubic convolution kernel with `a = -0.5`.
#[inline]
pub fn keys_weight(t: f64) -> f64 {
    let a = KEYS_A;
    let t = t.abs();
    if t <= 1.0 {
        ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0
    } else if t < 2.0 {
        ((a * t - 5.0 * a) * t + 8.0 * a) * t - 4.0 * a
    } else {
        0.0
    }
}

struct Taps1d {
    index: [usize; 4],
    weight: [f64; 4],
}

fn cubic_taps(n_in: usize, factor: usize) -> Vec<Taps1d> {
    (0..n_in * factor)
        .map(|i| {
            let base = i / factor;
            let t = (i % factor) as f64 / factor as f64;
            let mut index = [0; 4];
            let mut weight = [0.0; 4];
            for k in 0..4 {
                let src = base as isize + k as isize - 1;
                index[k] = src.clamp(0, n_in as isize - 1) as usize;
                weight[k] = keys_weight(t - (k as f64 - 1.0));
            }
            Taps1d { index, weight }
        })
        .collect()
}

/// Separable Keys bicubic upsampling by an integer factor.
pub fn bicubic_upsample(band: &Grid, factor: usize) -> Result<Grid> {
    let (w, h) = (band.width(), band.height());
    if w < 2 || h < 2 {
        return Err(Error::DegenerateInput(format!(
            "bicubic upsampling needs at least 2x2 samples, got {}x{}",
            w, h
        )));
    }
    if factor < 2 {
        return Err(Error::DegenerateInput(format!(
            "upsampling factor must be at least 2, got {}",
            factor
        )));
    }
    let (ow, oh) = (w * factor, h * factor);
    let xt = cubic_taps(w, factor);
    let yt = cubic_taps(h, factor);

    // horizontal pass: h x ow
    let src = band.data();
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        let line = &src[y * w..(y + 1) * w];
        for (x, tap) in xt.iter().enumerate() {
            rows[y * ow + x] = (0..4).map(|k| tap.weight[k] * line[tap.index[k]]).sum();
        }
    }

    let mut out = vec![0.0; oh * ow];
    for (y, tap) in yt.iter().enumerate() {
        let dst = &mut out[y * ow..(y + 1) * ow];
        for k in 0..4 {
            let wk = tap.weight[k];
            let row = &rows[tap.index[k] * ow..(tap.index[k] + 1) * ow];
            for (d, s) in dst.iter_mut().zip(row) {
                *d += wk * s;
            }
        }
    }
    Grid::new(ow, oh, out)
}
