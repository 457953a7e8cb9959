//! Synthetic Sentinel-2-like scenes for tests and demos.
//!
//! All ten bands are first rendered on the 10 m grid as mixtures of two
//! latent materials laid out in Voronoi parcels, plus a shared fine texture
//! and band-specific smooth fields. The guide bands are kept as rendered; the
//! 20 m bands are blurred with the MTF Gaussian and decimated, and their
//! 10 m renderings are returned as ground truth.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{Grid, RasterStack, Scene, BANDS_10M, BANDS_20M};
use crate::resample::{degrade, mtf_gaussian_kernel, DEFAULT_NYQUIST_GAIN};
use crate::wald::SCALE;

/// Offset and loadings on (material A, material B, texture) per band,
/// 10 m bands first. Visible and SWIR bands follow material A, red-edge and
/// NIR bands follow material B.
const LOADINGS: [(&str, f64, f64, f64, f64); 10] = [
    ("B02", 0.04, 0.10, -0.02, 0.010),
    ("B03", 0.06, 0.12, 0.02, 0.012),
    ("B04", 0.05, 0.18, -0.06, 0.015),
    ("B08", 0.12, 0.05, 0.35, 0.020),
    ("B05", 0.08, 0.14, 0.06, 0.015),
    ("B06", 0.10, 0.08, 0.24, 0.018),
    ("B07", 0.11, 0.06, 0.30, 0.020),
    ("B8A", 0.12, 0.05, 0.34, 0.020),
    ("B11", 0.07, 0.26, 0.05, 0.018),
    ("B12", 0.04, 0.22, -0.04, 0.015),
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    /// Size of the 10 m grid; must be even.
    pub width: usize,
    pub height: usize,
    pub seed: u64,
    /// Mean parcel diameter in 10 m pixels.
    pub parcel_size: f64,
    /// Standard deviation of independent per-pixel noise.
    pub noise: f64,
    /// MTF gain used to produce the 20 m bands.
    pub nyquist_gain: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            width: 512,
            height: 512,
            seed: 1,
            parcel_size: 24.0,
            noise: 0.002,
            nyquist_gain: DEFAULT_NYQUIST_GAIN,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub scene: Scene,
    /// The six 20 m bands as rendered on the 10 m grid.
    pub truth: RasterStack,
}

struct Wave {
    fx: f64,
    fy: f64,
    phase: f64,
    amp: f64,
}

impl Wave {
    fn random(rng: &mut ChaCha8Rng, fmin: f64, fmax: f64, amp: f64) -> Self {
        let theta = rng.gen_range(0.0..std::f64::consts::PI);
        let f = rng.gen_range(fmin..fmax);
        Self {
            fx: f * theta.cos(),
            fy: f * theta.sin(),
            phase: rng.gen_range(0.0..std::f64::consts::TAU),
            amp: amp * rng.gen_range(0.5..1.0),
        }
    }

    fn at(&self, x: f64, y: f64) -> f64 {
        self.amp * (std::f64::consts::TAU * (self.fx * x + self.fy * y) + self.phase).sin()
    }
}

/// Nearest-seed parcel map; each parcel carries abundances of the two
/// materials.
fn parcels(w: usize, h: usize, size: f64, rng: &mut ChaCha8Rng) -> (Grid, Grid) {
    let n = ((w * h) as f64 / (size * size)).ceil().max(1.0) as usize;
    let seeds: Vec<(f64, f64, f64, f64)> = (0..n)
        .map(|_| {
            let a: f64 = rng.gen_range(0.0..1.0);
            let b: f64 = rng.gen_range(0.0..1.0 - 0.5 * a);
            (rng.gen_range(0.0..w as f64), rng.gen_range(0.0..h as f64), a, b)
        })
        .collect();
    let mut ma = Grid::filled(w, h, 0.0);
    let mut mb = Grid::filled(w, h, 0.0);
    for y in 0..h {
        for x in 0..w {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let nearest = seeds
                .iter()
                .min_by(|p, q| {
                    let dp = (p.0 - px).powi(2) + (p.1 - py).powi(2);
                    let dq = (q.0 - px).powi(2) + (q.1 - py).powi(2);
                    dp.total_cmp(&dq)
                })
                .expect("at least one seed");
            ma.set(x, y, nearest.2);
            mb.set(x, y, nearest.3);
        }
    }
    (ma, mb)
}

pub fn synth_scene(cfg: &SynthConfig) -> Result<SyntheticScene> {
    let (w, h) = (cfg.width, cfg.height);
    if w < 8 || h < 8 || w % SCALE != 0 || h % SCALE != 0 {
        return Err(Error::Config(format!(
            "synthetic scene must be even and at least 8x8, got {}x{}",
            w, h
        )));
    }
    if !(cfg.parcel_size >= 1.0) || !(cfg.noise >= 0.0) {
        return Err(Error::Config("parcel size must be >= 1 and noise >= 0".into()));
    }
    let kernel = mtf_gaussian_kernel(cfg.nyquist_gain, SCALE)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (ma, mb) = parcels(w, h, cfg.parcel_size, &mut rng);
    let texture: Vec<Wave> = (0..6).map(|_| Wave::random(&mut rng, 0.08, 0.35, 1.0)).collect();
    let noise = Normal::new(0.0, cfg.noise).map_err(|e| Error::Config(e.to_string()))?;

    let mut bands = Vec::with_capacity(LOADINGS.len());
    for &(_, offset, la, lb, lt) in &LOADINGS {
        let smooth: Vec<Wave> = (0..3).map(|_| Wave::random(&mut rng, 0.002, 0.012, 0.03)).collect();
        let g = Grid::from_fn(w, h, |x, y| {
            let (fx, fy) = (x as f64, y as f64);
            let tex: f64 = texture.iter().map(|t| t.at(fx, fy)).sum::<f64>() / texture.len() as f64;
            let low: f64 = smooth.iter().map(|s| s.at(fx, fy)).sum();
            offset + la * ma.get(x, y) + lb * mb.get(x, y) + lt * tex + low + noise.sample(&mut rng)
        });
        bands.push(g);
    }

    let z = RasterStack::from_grids(&BANDS_10M, &bands[..4], 10.0)?;
    let truth = RasterStack::from_grids(&BANDS_20M, &bands[4..], 10.0)?;
    let x_grids = bands[4..]
        .iter()
        .map(|g| degrade(g, &kernel, SCALE))
        .collect::<Result<Vec<_>>>()?;
    let x = RasterStack::from_grids(&BANDS_20M, &x_grids, 20.0)?;
    Ok(SyntheticScene {
        scene: Scene::new(z, x)?,
        truth,
    })
}
