use sen2sharp::compare::baseline_products;
use sen2sharp::metrics::{evaluate, MetricsConfig};
use sen2sharp::preview::{percentile, rgba_from_rgb, STRETCH_HIGH, STRETCH_LOW};
use sen2sharp::raster::{Grid, RasterStack};
use sen2sharp::resample::{highpass, mtf_gaussian_kernel, mtf_sigma};
use sen2sharp::synth::{synth_scene, SynthConfig, SyntheticScene};
use sen2sharp::{Error, Result};
use serde_json::{json, Value};

pub const MIN_SIZE: usize = 32;
pub const MAX_SIZE: usize = 512;
/// Samples of the frequency response between 0 and 0.5 cycles/sample.
pub const RESPONSE_SAMPLES: usize = 101;

pub const VIEW_TRUTH: &str = "truth";
pub const VIEW_GUIDE: &str = "10 m guide";
pub const VIEW_INPUT: &str = "20 m input";

pub fn mtf_summary(nyquist_gain: f64, ratio: usize) -> Result<Value> {
    let k = mtf_gaussian_kernel(nyquist_gain, ratio)?;
    let response: Vec<[f64; 2]> = (0..RESPONSE_SAMPLES)
        .map(|i| {
            let f = 0.5 * i as f64 / (RESPONSE_SAMPLES - 1) as f64;
            [f, k.frequency_response(f)]
        })
        .collect();
    let nyquist = 1.0 / (2.0 * ratio as f64);
    Ok(json!({
        "sigma": mtf_sigma(nyquist_gain, ratio),
        "taps": k.taps(),
        "sum": k.sum(),
        "nyquist": nyquist,
        "gain_at_nyquist": k.frequency_response(nyquist),
        "response": response,
    }))
}

/// A synthetic scene with the classical products precomputed.
pub struct Demo {
    synth: SyntheticScene,
    /// The 20 m input shown on the 10 m grid by pixel replication.
    input: RasterStack,
    products: Vec<(String, RasterStack)>,
}

impl Demo {
    pub fn new(size: usize, seed: u64, nyquist_gain: f64) -> Result<Self> {
        if !(MIN_SIZE..=MAX_SIZE).contains(&size) || size % 2 != 0 {
            return Err(Error::Config(format!(
                "demo size must be even and within {}..={}, got {}",
                MIN_SIZE, MAX_SIZE, size
            )));
        }
        let synth = synth_scene(&SynthConfig {
            width: size,
            height: size,
            seed,
            nyquist_gain,
            ..SynthConfig::default()
        })?;
        let x = &synth.scene.x;
        let grids: Vec<Grid> = x.grids().iter().map(replicate).collect();
        let input = RasterStack::from_grids(&x.band_names(), &grids, synth.scene.z.resolution_m())?;
        let products = baseline_products(&synth.scene.z, x)?;
        Ok(Self { synth, input, products })
    }

    pub fn size(&self) -> usize {
        self.synth.truth.width()
    }

    pub fn views(&self) -> Vec<String> {
        [VIEW_TRUTH, VIEW_GUIDE, VIEW_INPUT]
            .iter()
            .map(|s| s.to_string())
            .chain(self.products.iter().map(|(m, _)| m.clone()))
            .collect()
    }

    fn stack(&self, view: &str) -> Result<&RasterStack> {
        match view {
            VIEW_TRUTH => Ok(&self.synth.truth),
            VIEW_GUIDE => Ok(&self.synth.scene.z),
            VIEW_INPUT => Ok(&self.input),
            _ => self
                .products
                .iter()
                .find(|(m, _)| m == view)
                .map(|(_, s)| s)
                .ok_or_else(|| Error::Config(format!("unknown view {:?}", view))),
        }
    }

    /// RGBA of `view`. The 20 m band views share the stretch limits of the
    /// truth so that their colours are directly comparable.
    pub fn render<S: AsRef<str>>(&self, view: &str, bands: &[S; 3]) -> Result<Vec<u8>> {
        let stack = self.stack(view)?;
        let limits_from = if view == VIEW_GUIDE { stack } else { &self.synth.truth };
        let mut channels = Vec::with_capacity(3);
        for name in bands {
            let name = name.as_ref();
            let lookup = |s: &RasterStack| s.band_index(name).ok_or_else(|| Error::UnknownBand(name.to_string()));
            let band = stack.grid(lookup(stack)?);
            let lim = limits_from.grid(lookup(limits_from)?);
            let (lo, hi) = (
                percentile(lim.data(), STRETCH_LOW),
                percentile(lim.data(), STRETCH_HIGH),
            );
            channels.push(to_bytes(&band, lo, hi));
        }
        let rgb: Vec<u8> = (0..channels[0].len())
            .flat_map(|i| [channels[0][i], channels[1][i], channels[2][i]])
            .collect();
        Ok(rgba_from_rgb(&rgb))
    }

    /// Bicubic and the classical methods scored against the truth.
    pub fn metrics(&self, q_window: usize) -> Result<Value> {
        let cfg = MetricsConfig {
            q_window,
            ..MetricsConfig::default()
        };
        let rows = self
            .products
            .iter()
            .map(|(m, s)| Ok(json!({ "method": m, "report": evaluate(s, &self.synth.truth, &cfg)? })))
            .collect::<Result<Vec<_>>>()?;
        Ok(Value::Array(rows))
    }

    /// Grey RGBA of `band - lowpass(band)`, mid-grey at zero and saturating at
    /// the 98th percentile of the magnitude.
    pub fn highpass(&self, band: &str, nyquist_gain: f64) -> Result<Vec<u8>> {
        let k = mtf_gaussian_kernel(nyquist_gain, 2)?;
        let stack = [&self.synth.truth, &self.synth.scene.z]
            .into_iter()
            .find(|s| s.band_index(band).is_some())
            .ok_or_else(|| Error::UnknownBand(band.to_string()))?;
        let hp = highpass(&stack.grid(stack.band_index(band).unwrap()), &k);
        let mags: Vec<f64> = hp.data().iter().map(|v| v.abs()).collect();
        let m = percentile(&mags, STRETCH_HIGH);
        let grey = to_bytes(&hp, -m, m);
        Ok(grey.iter().flat_map(|&g| [g, g, g, 255]).collect())
    }
}

fn replicate(g: &Grid) -> Grid {
    Grid::from_fn(2 * g.width(), 2 * g.height(), |x, y| g.get(x / 2, y / 2))
}

fn to_bytes(g: &Grid, lo: f64, hi: f64) -> Vec<u8> {
    let span = hi - lo;
    g.data()
        .iter()
        .map(|&v| {
            if span > 0.0 {
                (((v - lo) / span).clamp(0.0, 1.0) * 255.0).round() as u8
            } else {
                0
            }
        })
        .collect()
}
