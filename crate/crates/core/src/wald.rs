//! Reduced-resolution training pairs.
//!
//! Every band of a scene is blurred by a Gaussian matched to its sensor MTF
//! and decimated by 2. The network then learns to map the degraded pair back
//! to the original 20 m bands, which serve as the reference.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{AblationFlags, Tensor4};
use crate::raster::{Grid, RasterStack, Scene};
use crate::resample::{
    bicubic_upsample, degrade, highpass, mtf_gaussian_kernel, SeparableKernel,
    DEFAULT_NYQUIST_GAIN,
};

pub const SCALE: usize = 2;
pub const DEFAULT_PATCH: usize = 33;
pub const DEFAULT_STRIDE: usize = 17;
pub const DEFAULT_VAL_FRACTION: f64 = 0.1;
pub const DEFAULT_SEED: u64 = 42;

/// Per-band MTF Nyquist gains with a shared fallback.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NyquistGains {
    #[serde(default = "default_gain")]
    pub default: f64,
    #[serde(default)]
    pub bands: BTreeMap<String, f64>,
}

fn default_gain() -> f64 {
    DEFAULT_NYQUIST_GAIN
}

impl Default for NyquistGains {
    fn default() -> Self {
        Self {
            default: DEFAULT_NYQUIST_GAIN,
            bands: BTreeMap::new(),
        }
    }
}

impl NyquistGains {
    pub fn uniform(gain: f64) -> Self {
        Self {
            default: gain,
            bands: BTreeMap::new(),
        }
    }

    pub fn gain(&self, band: &str) -> f64 {
        self.bands.get(band).copied().unwrap_or(self.default)
    }

    pub fn validate(&self) -> Result<()> {
        std::iter::once(self.default)
            .chain(self.bands.values().copied())
            .try_for_each(|g| mtf_gaussian_kernel(g, SCALE).map(|_| ()))
    }
}

/// Kernel whose complement is the high-pass preprocessing filter.
pub fn hpf_kernel(gain: f64) -> Result<SeparableKernel> {
    mtf_gaussian_kernel(gain, SCALE)
}

/// The degraded pair plus the untouched 20 m bands as reference.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedScene {
    pub z_down: RasterStack,
    pub x_down: RasterStack,
    pub reference: RasterStack,
}

fn degrade_stack(stack: &RasterStack, gains: &NyquistGains) -> Result<RasterStack> {
    let grids = stack
        .bands()
        .iter()
        .enumerate()
        .map(|(i, band)| {
            let kernel = mtf_gaussian_kernel(gains.gain(&band.name), SCALE)?;
            degrade(&stack.grid(i), &kernel, SCALE)
        })
        .collect::<Result<Vec<_>>>()?;
    RasterStack::from_grids(
        &stack.band_names(),
        &grids,
        stack.resolution_m() * SCALE as f64,
    )
}

pub fn make_reduced_scene(scene: &Scene, gains: &NyquistGains) -> Result<ReducedScene> {
    let x = &scene.x;
    if x.width() % SCALE != 0 || x.height() % SCALE != 0 {
        return Err(Error::NotDivisible {
            width: x.width(),
            height: x.height(),
            factor: SCALE,
        });
    }
    Ok(ReducedScene {
        z_down: degrade_stack(&scene.z, gains)?,
        x_down: degrade_stack(x, gains)?,
        reference: x.clone(),
    })
}

/// Network input channels and the upsampled bands used by the residual skip.
#[derive(Debug, Clone, PartialEq)]
pub struct InputStack {
    pub channels: Vec<Grid>,
    pub upsampled: Vec<Grid>,
}

/// `[HPF(z) if use_z] ++ [HPF(x~) if use_hpf else x~]`, where `x~` is the
/// bicubic upsampling of `x`. Without HPF the guide bands enter raw as well.
pub fn input_stack(
    z: Option<&RasterStack>,
    x: &RasterStack,
    flags: AblationFlags,
    kernel: &SeparableKernel,
) -> Result<InputStack> {
    let prep = |g: Grid| if flags.use_hpf { highpass(&g, kernel) } else { g };
    let upsampled = x
        .grids()
        .iter()
        .map(|g| bicubic_upsample(g, SCALE))
        .collect::<Result<Vec<_>>>()?;

    let mut channels = Vec::with_capacity(flags.input_channels());
    if flags.use_z {
        let z = z.ok_or_else(|| {
            Error::FlagMismatch("model uses the 10 m guide but none was supplied".into())
        })?;
        if z.width() != SCALE * x.width() || z.height() != SCALE * x.height() {
            return Err(Error::ShapeMismatch(format!(
                "guide {}x{} is not twice the {}x{} target",
                z.width(),
                z.height(),
                x.width(),
                x.height()
            )));
        }
        channels.extend(z.grids().into_iter().map(prep));
    }
    channels.extend(upsampled.iter().cloned().map(prep));
    Ok(InputStack {
        channels,
        upsampled,
    })
}

/// Packs equally sized grids as a batch-1 tensor.
pub fn grids_to_tensor(grids: &[Grid]) -> Result<Tensor4> {
    let first = grids.first().ok_or(Error::EmptyDataset)?;
    let (w, h) = (first.width(), first.height());
    let mut data = Vec::with_capacity(grids.len() * w * h);
    for g in grids {
        if !g.same_shape(first) {
            return Err(Error::ShapeMismatch("channels differ in size".into()));
        }
        data.extend_from_slice(g.data());
    }
    Tensor4::new([1, grids.len(), h, w], data)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    /// `1 x C x h x w` network input.
    pub input: Tensor4,
    /// `1 x 6 x h x w` bicubic-upsampled bands (residual skip source).
    pub upsampled: Tensor4,
    /// `1 x 6 x h x w` reference window.
    pub target: Tensor4,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub examples: Vec<TrainingExample>,
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub rng_seed: u64,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn input_channels(&self) -> Option<usize> {
        self.examples.first().map(|e| e.input.channels())
    }
}

/// Number of windows along an axis of length `n`.
pub fn window_count(n: usize, patch: usize, stride: usize) -> usize {
    if patch > n {
        0
    } else {
        (n - patch) / stride + 1
    }
}

pub fn extract_patches(
    rs: &ReducedScene,
    patch: usize,
    stride: usize,
    flags: AblationFlags,
    kernel: &SeparableKernel,
) -> Result<Dataset> {
    let (w, h) = (rs.reference.width(), rs.reference.height());
    if patch == 0 || patch > w || patch > h {
        return Err(Error::PatchTooLarge {
            patch,
            width: w,
            height: h,
        });
    }
    if stride == 0 {
        return Err(Error::Config("stride must be at least 1".into()));
    }
    let stack = input_stack(Some(&rs.z_down), &rs.x_down, flags, kernel)?;
    let input = grids_to_tensor(&stack.channels)?;
    let upsampled = grids_to_tensor(&stack.upsampled)?;
    let reference = grids_to_tensor(&rs.reference.grids())?;
    if input.width() != w || input.height() != h {
        return Err(Error::ShapeMismatch(format!(
            "input stack {}x{} does not cover the {}x{} reference",
            input.width(),
            input.height(),
            w,
            h
        )));
    }

    let mut examples = Vec::new();
    for wy in 0..window_count(h, patch, stride) {
        for wx in 0..window_count(w, patch, stride) {
            let (x0, y0) = (wx * stride, wy * stride);
            examples.push(TrainingExample {
                input: input.crop(x0, y0, patch, patch)?,
                upsampled: upsampled.crop(x0, y0, patch, patch)?,
                target: reference.crop(x0, y0, patch, patch)?,
            });
        }
    }
    let train = (0..examples.len()).collect();
    Ok(Dataset {
        examples,
        train,
        validation: Vec::new(),
        rng_seed: DEFAULT_SEED,
    })
}

/// Seeded shuffle into disjoint train and validation index sets; validation
/// receives `round(val_fraction * N)` examples, capped so training is never
/// empty.
pub fn split_dataset(mut ds: Dataset, val_fraction: f64, seed: u64) -> Result<Dataset> {
    let n = ds.examples.len();
    if n < 2 {
        return Err(Error::TooFewExamples(n));
    }
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::Config(format!(
            "validation fraction must lie in (0, 1), got {}",
            val_fraction
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_val = ((val_fraction * n as f64).round() as usize).min(n - 1);
    ds.validation = order[..n_val].to_vec();
    ds.train = order[n_val..].to_vec();
    ds.rng_seed = seed;
    Ok(ds)
}
