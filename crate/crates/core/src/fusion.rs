//! End-to-end fusion: input-stack assembly, batch norm, the three-layer CNN,
//! the residual add, training and tiled full-scene inference.
//!
//! The network sees the stack built by [`build_input_stack`] and predicts a
//! detail image `y`; the product is `x~ + y`, where `x~` is the raw bicubic
//! upsampling of the 20 m bands.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::net::{
    l1_loss, sgd_step, AblationFlags, Architecture, FusionModel, ModelGrads, OptimizerState,
    Tensor4,
};
use crate::raster::{Grid, RasterStack, Scene};
use crate::resample::{SeparableKernel, DEFAULT_NYQUIST_GAIN};
use crate::wald::{self, grids_to_tensor, input_stack, Dataset, NyquistGains, SCALE};

pub const DEFAULT_EPOCHS: usize = 200;
pub const DEFAULT_BATCH: usize = 16;
pub const DEFAULT_LR: f64 = 1e-3;
pub const DEFAULT_MOMENTUM: f64 = 0.9;
pub const DEFAULT_TILE: usize = 256;
pub const DEFAULT_OVERLAP: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub patch: usize,
    pub stride: usize,
    pub flags: AblationFlags,
    pub arch: Architecture,
    pub seed: u64,
    pub val_fraction: f64,
    pub nyquist_gains: NyquistGains,
    /// Nyquist gain of the Gaussian whose complement is the input high-pass.
    pub hpf_gain: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: DEFAULT_EPOCHS,
            batch_size: DEFAULT_BATCH,
            learning_rate: DEFAULT_LR,
            momentum: DEFAULT_MOMENTUM,
            patch: wald::DEFAULT_PATCH,
            stride: wald::DEFAULT_STRIDE,
            flags: AblationFlags::default(),
            arch: Architecture::default(),
            seed: wald::DEFAULT_SEED,
            val_fraction: wald::DEFAULT_VAL_FRACTION,
            nyquist_gains: NyquistGains::default(),
            hpf_gain: DEFAULT_NYQUIST_GAIN,
        }
    }
}

impl TrainConfig {
    /// A zero learning rate is accepted so a run can record losses without
    /// moving the parameters.
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "invalid learning rate {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.patch == 0 || self.stride == 0 {
            return Err(Error::Config("patch and stride must be at least 1".into()));
        }
        if self.arch.kernel % 2 == 0 || self.arch.hidden.contains(&0) {
            return Err(Error::Config(format!(
                "invalid architecture {:?}",
                self.arch
            )));
        }
        self.nyquist_gains.validate()?;
        self.hpf_kernel().map(|_| ())
    }

    pub fn hpf_kernel(&self) -> Result<SeparableKernel> {
        wald::hpf_kernel(self.hpf_gain)
    }

    /// Degrades the scene, cuts patches and splits them.
    pub fn dataset(&self, scene: &Scene) -> Result<Dataset> {
        self.validate()?;
        let rs = wald::make_reduced_scene(scene, &self.nyquist_gains)?;
        let ds = wald::extract_patches(&rs, self.patch, self.stride, self.flags, &self.hpf_kernel()?)?;
        wald::split_dataset(ds, self.val_fraction, self.seed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    pub const CSV_HEADER: &'static str = "epoch,train_loss,val_loss,seconds";

    /// Epochs are numbered from 1; an empty `val_loss` cell means no
    /// validation split.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.epochs {
            let val = r.val_loss.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{},{},{},{:.6}", r.epoch, r.train_loss, val, r.seconds);
        }
        out
    }

    pub fn final_val_loss(&self) -> Option<f64> {
        self.epochs.last().and_then(|r| r.val_loss)
    }
}

/// `[HPF(z) if use_z] ++ [HPF(x~) if use_hpf else x~]` as a batch-1 tensor.
pub fn build_input_stack(
    z: Option<&RasterStack>,
    x: &RasterStack,
    flags: AblationFlags,
    kernel: &SeparableKernel,
) -> Result<Tensor4> {
    grids_to_tensor(&input_stack(z, x, flags, kernel)?.channels)
}

fn tensor_to_stack(t: &Tensor4, names: &[String], resolution_m: f64) -> Result<RasterStack> {
    let grids = (0..t.channels())
        .map(|c| Grid::new(t.width(), t.height(), t.plane(0, c).to_vec()))
        .collect::<Result<Vec<_>>>()?;
    RasterStack::from_grids(names, &grids, resolution_m)
}

/// Radius of the receptive field of the three stacked convolutions.
pub fn receptive_radius(model: &FusionModel) -> usize {
    model.layers.iter().map(|l| l.k / 2).sum()
}

fn predict_tiled(model: &FusionModel, input: &Tensor4, tile: usize, overlap: usize) -> Result<Tensor4> {
    let (w, h) = (input.width(), input.height());
    if tile == 0 || (w <= tile && h <= tile) {
        return model.predict_detail(input);
    }
    let step = tile - 2 * overlap;
    let cores: Vec<(usize, usize)> = (0..h)
        .step_by(step)
        .flat_map(|cy| (0..w).step_by(step).map(move |cx| (cx, cy)))
        .collect();
    let pieces = cores
        .par_iter()
        .map(|&(cx, cy)| {
            let (x0, y0) = (cx.saturating_sub(overlap), cy.saturating_sub(overlap));
            let x1 = (cx + step + overlap).min(w);
            let y1 = (cy + step + overlap).min(h);
            model.predict_detail(&input.crop(x0, y0, x1 - x0, y1 - y0)?)
        })
        .collect::<Result<Vec<_>>>()?;

    let channels = model.layers[2].out_ch;
    let mut out = Tensor4::zeros([1, channels, h, w]);
    for (&(cx, cy), piece) in cores.iter().zip(&pieces) {
        let (x0, y0) = (cx.saturating_sub(overlap), cy.saturating_sub(overlap));
        let cw = step.min(w - cx);
        let chh = step.min(h - cy);
        for c in 0..channels {
            let src = piece.plane(0, c);
            let dst = out.plane_mut(0, c);
            for y in cy..cy + chh {
                let s = (y - y0) * piece.width() + (cx - x0);
                dst[y * w + cx..y * w + cx + cw].copy_from_slice(&src[s..s + cw]);
            }
        }
    }
    Ok(out)
}

fn check_tiling(model: &FusionModel, tile: usize, overlap: usize) -> Result<()> {
    if tile == 0 {
        return Ok(());
    }
    if tile <= 2 * overlap {
        return Err(Error::BadTiling { tile, overlap });
    }
    let r = receptive_radius(model);
    if overlap < r {
        return Err(Error::Config(format!(
            "tile overlap {} is below the network's receptive radius {}",
            overlap, r
        )));
    }
    Ok(())
}

fn fuse(
    model: &FusionModel,
    z: Option<&RasterStack>,
    x: &RasterStack,
    kernel: &SeparableKernel,
    tile: usize,
    overlap: usize,
) -> Result<RasterStack> {
    model.validate()?;
    check_tiling(model, tile, overlap)?;
    let stack = input_stack(z, x, model.flags, kernel)?;
    let input = grids_to_tensor(&stack.channels)?;
    if input.channels() != model.input_channels() {
        return Err(Error::FlagMismatch(format!(
            "input stack has {} channels, model expects {}",
            input.channels(),
            model.input_channels()
        )));
    }
    let detail = predict_tiled(model, &input, tile, overlap)?;
    let fused = grids_to_tensor(&stack.upsampled)?.add(&detail)?;
    tensor_to_stack(&fused, &x.band_names(), x.resolution_m() / SCALE as f64)
}

/// `x^ = x~ + CNN(BN_infer(stack))` on the whole image at once.
pub fn forward_sr(
    model: &FusionModel,
    z: Option<&RasterStack>,
    x: &RasterStack,
    kernel: &SeparableKernel,
) -> Result<RasterStack> {
    fuse(model, z, x, kernel, 0, 0)
}

/// Tiled inference. Tiles of side `tile` overlap by `overlap` pixels and only
/// their cores are kept, so the result matches [`forward_sr`] as long as the
/// overlap covers the receptive field. `tile = 0` disables tiling.
pub fn sharpen_scene(
    model: &FusionModel,
    scene: &Scene,
    tile: usize,
    overlap: usize,
    kernel: &SeparableKernel,
) -> Result<RasterStack> {
    fuse(model, Some(&scene.z), &scene.x, kernel, tile, overlap)
}

fn gather<'a>(ds: &'a Dataset, idx: &[usize]) -> Result<(Tensor4, Tensor4, Tensor4)> {
    let pick = |f: fn(&'a wald::TrainingExample) -> &'a Tensor4| {
        Tensor4::stack(&idx.iter().map(|&i| f(&ds.examples[i])).collect::<Vec<_>>())
    };
    Ok((pick(|e| &e.input)?, pick(|e| &e.upsampled)?, pick(|e| &e.target)?))
}

/// Train-mode forward, L1 loss on `skip + detail`, and backward.
pub fn batch_gradients(
    model: &mut FusionModel,
    input: &Tensor4,
    skip: &Tensor4,
    target: &Tensor4,
) -> Result<(f64, ModelGrads)> {
    let cache = model.forward_train(input)?;
    let pred = skip.add(&cache.detail)?;
    let (loss, grad) = l1_loss(&pred, target)?;
    let grads = model.backward(&cache, &grad)?;
    Ok((loss, grads))
}

/// Inference-mode mean L1 over the given examples.
pub fn evaluate_loss(model: &FusionModel, ds: &Dataset, idx: &[usize], batch: usize) -> Result<f64> {
    let mut total = 0.0;
    for chunk in idx.chunks(batch.max(1)) {
        let (input, skip, target) = gather(ds, chunk)?;
        let pred = skip.add(&model.predict_detail(&input)?)?;
        total += l1_loss(&pred, &target)?.0 * chunk.len() as f64;
    }
    Ok(total / idx.len() as f64)
}

#[cfg(not(target_arch = "wasm32"))]
fn clock() -> impl FnMut() -> f64 {
    let start = std::time::Instant::now();
    move || start.elapsed().as_secs_f64()
}

#[cfg(target_arch = "wasm32")]
fn clock() -> impl FnMut() -> f64 {
    || 0.0
}

pub fn train(ds: &Dataset, cfg: &TrainConfig) -> Result<(FusionModel, TrainHistory)> {
    train_with_progress(ds, cfg, |_| {}).map(|(m, _, h)| (m, h))
}

/// Minibatch SGD over `ds.train`, reshuffled each epoch from `cfg.seed`.
/// Calls `progress` after every epoch and also returns the optimizer state.
pub fn train_with_progress(
    ds: &Dataset,
    cfg: &TrainConfig,
    mut progress: impl FnMut(&EpochRecord),
) -> Result<(FusionModel, OptimizerState, TrainHistory)> {
    cfg.validate()?;
    if ds.is_empty() || ds.train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let expected = cfg.flags.input_channels();
    for ex in &ds.examples {
        if ex.input.channels() != expected {
            return Err(Error::ChannelMismatch {
                dataset: ex.input.channels(),
                model: expected,
            });
        }
    }

    let mut model = FusionModel::initialized(cfg.flags, cfg.arch, cfg.seed)?;
    let mut opt = OptimizerState::new(&model, cfg.learning_rate, cfg.momentum)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut history = TrainHistory::default();
    let mut order = ds.train.clone();

    for epoch in 1..=cfg.epochs {
        let mut elapsed = clock();
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let (input, skip, target) = gather(ds, chunk)?;
            let (loss, grads) = batch_gradients(&mut model, &input, &skip, &target)?;
            sgd_step(&mut model, &grads, &mut opt)?;
            sum += loss * chunk.len() as f64;
        }
        model.bn.clear_cache();
        let val_loss = if ds.validation.is_empty() {
            None
        } else {
            Some(evaluate_loss(&model, ds, &ds.validation, cfg.batch_size)?)
        };
        let record = EpochRecord {
            epoch,
            train_loss: sum / order.len() as f64,
            val_loss,
            seconds: elapsed(),
        };
        progress(&record);
        history.epochs.push(record);
    }
    Ok((model, opt, history))
}
