//! 8-bit renderings of three bands with a per-band percentile stretch.

use crate::error::{Error, Result};
use crate::raster::{Grid, RasterStack};

pub const STRETCH_LOW: f64 = 0.02;
pub const STRETCH_HIGH: f64 = 0.98;

/// Nearest-rank percentile of `values` for `p` in `[0, 1]`.
pub fn percentile(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let i = (p.clamp(0.0, 1.0) * (v.len() - 1) as f64).round() as usize;
    v[i]
}

/// Maps `[p_low, p_high]` of the band linearly onto `0..=255`.
pub fn stretch(band: &Grid, low: f64, high: f64) -> Vec<u8> {
    let (lo, hi) = (percentile(band.data(), low), percentile(band.data(), high));
    let span = hi - lo;
    band.data()
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

/// Interleaved RGB bytes of the three named bands.
pub fn rgb_preview<S: AsRef<str>>(stack: &RasterStack, bands: &[S; 3]) -> Result<Vec<u8>> {
    let channels = bands
        .iter()
        .map(|name| {
            let i = stack
                .band_index(name.as_ref())
                .ok_or_else(|| Error::UnknownBand(name.as_ref().to_string()))?;
            Ok(stretch(&stack.grid(i), STRETCH_LOW, STRETCH_HIGH))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = stack.width() * stack.height();
    Ok((0..n).flat_map(|i| [channels[0][i], channels[1][i], channels[2][i]]).collect())
}

/// Interleaved RGBA bytes (opaque), as expected by browser canvases.
pub fn rgba_from_rgb(rgb: &[u8]) -> Vec<u8> {
    rgb.chunks_exact(3).flat_map(|p| [p[0], p[1], p[2], 255]).collect()
}
