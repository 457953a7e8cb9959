//! Quality indices for a fused product against a reference: the universal
//! image quality index (Q), ERGAS, and the high-pass correlation coefficient.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{Grid, RasterStack};
use crate::resample::reflect_index;

pub const DEFAULT_Q_WINDOW: usize = 32;
pub const DEFAULT_ERGAS_RATIO: f64 = 0.5;
/// Windows and bands whose normalizing term falls below this are skipped.
pub const DEGENERATE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsConfig {
    pub q_window: usize,
    pub ergas_ratio: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            q_window: DEFAULT_Q_WINDOW,
            ergas_ratio: DEFAULT_ERGAS_RATIO,
        }
    }
}

/// Two-pass Pearson correlation; `None` when either side has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    let denom = (saa * sbb).sqrt();
    if !(denom > DEGENERATE_TOL * n) {
        return None;
    }
    // identical inputs are exactly 1, independent of rounding in the ratio
    if a == b {
        return Some(1.0);
    }
    Some((sab / denom).clamp(-1.0, 1.0))
}

fn check_same(a: &Grid, b: &Grid) -> Result<()> {
    if a.same_shape(b) {
        Ok(())
    } else {
        Err(Error::ShapeMismatch(format!(
            "{}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )))
    }
}

/// Outcome of a sliding-window Q computation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QIndex {
    pub value: f64,
    pub windows: usize,
    pub skipped: usize,
}

/// Q over all `window x window` windows at stride 1, skipping windows whose
/// denominator vanishes.
pub fn q_index_detailed(a: &Grid, b: &Grid, window: usize) -> Result<QIndex> {
    check_same(a, b)?;
    let (w, h) = (a.width(), a.height());
    if window == 0 || window > w || window > h {
        return Err(Error::WindowTooLarge {
            window,
            width: w,
            height: h,
        });
    }
    // Shifting by the global means keeps the second moments well conditioned.
    let (ca, cb) = (a.mean(), b.mean());
    let n = (window * window) as f64;
    let (nx, ny) = (w - window + 1, h - window + 1);

    let rows: Vec<(f64, usize)> = (0..ny)
        .into_par_iter()
        .map(|y0| {
            let mut cols = vec![[0.0f64; 5]; w];
            for y in y0..y0 + window {
                for (x, col) in cols.iter_mut().enumerate() {
                    let (u, v) = (a.get(x, y) - ca, b.get(x, y) - cb);
                    col[0] += u;
                    col[1] += v;
                    col[2] += u * u;
                    col[3] += v * v;
                    col[4] += u * v;
                }
            }
            let (mut sum, mut used) = (0.0, 0);
            for x0 in 0..nx {
                let mut s = [0.0f64; 5];
                for col in &cols[x0..x0 + window] {
                    for k in 0..5 {
                        s[k] += col[k];
                    }
                }
                let (mu, mv) = (s[0] / n, s[1] / n);
                let var_a = (s[2] / n - mu * mu).max(0.0);
                let var_b = (s[3] / n - mv * mv).max(0.0);
                let cov = s[4] / n - mu * mv;
                let (ma, mb) = (mu + ca, mv + cb);
                let denom = (var_a + var_b) * (ma * ma + mb * mb);
                if denom >= DEGENERATE_TOL {
                    sum += 4.0 * cov * ma * mb / denom;
                    used += 1;
                }
            }
            (sum, used)
        })
        .collect();

    let windows = nx * ny;
    let (sum, used) = rows.iter().fold((0.0, 0), |(s, u), &(rs, ru)| (s + rs, u + ru));
    let value = if a == b {
        1.0
    } else if used > 0 {
        sum / used as f64
    } else {
        return Err(Error::DegenerateBand(
            "every Q window is flat and the images differ".into(),
        ));
    };
    Ok(QIndex {
        value,
        windows,
        skipped: windows - used,
    })
}

pub fn q_index(a: &Grid, b: &Grid, window: usize) -> Result<f64> {
    q_index_detailed(a, b, window).map(|q| q.value)
}

fn check_stacks(fused: &RasterStack, reference: &RasterStack) -> Result<()> {
    if fused.band_count() != reference.band_count()
        || fused.width() != reference.width()
        || fused.height() != reference.height()
    {
        return Err(Error::ShapeMismatch(format!(
            "fused {}x{}x{} vs reference {}x{}x{}",
            fused.width(),
            fused.height(),
            fused.band_count(),
            reference.width(),
            reference.height(),
            reference.band_count()
        )));
    }
    Ok(())
}

pub fn rmse(a: &Grid, b: &Grid) -> Result<f64> {
    check_same(a, b)?;
    let ss: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok((ss / a.data().len() as f64).sqrt())
}

/// `100 * ratio * sqrt(mean_b(RMSE_b^2 / mu_b^2))` with `mu_b` the reference
/// band mean.
pub fn ergas(fused: &RasterStack, reference: &RasterStack, ratio: f64) -> Result<f64> {
    check_stacks(fused, reference)?;
    let mut acc = 0.0;
    for (i, name) in reference.band_names().iter().enumerate() {
        let r = reference.grid(i);
        let mu = r.mean();
        if mu.abs() < DEGENERATE_TOL {
            return Err(Error::ZeroMeanBand(name.clone()));
        }
        let e = rmse(&fused.grid(i), &r)?;
        acc += (e / mu).powi(2);
    }
    Ok(100.0 * ratio * (acc / reference.band_count() as f64).sqrt())
}

/// 3x3 Laplacian `[0 -1 0; -1 4 -1; 0 -1 0]` with half-sample reflection.
pub fn laplacian(g: &Grid) -> Grid {
    let (w, h) = (g.width(), g.height());
    let at = |x: isize, y: isize| g.get(reflect_index(x, w), reflect_index(y, h));
    Grid::from_fn(w, h, |x, y| {
        let (x, y) = (x as isize, y as isize);
        4.0 * at(x, y) - at(x - 1, y) - at(x + 1, y) - at(x, y - 1) - at(x, y + 1)
    })
}

pub fn hcc_band(a: &Grid, b: &Grid, name: &str) -> Result<f64> {
    check_same(a, b)?;
    pearson(laplacian(a).data(), laplacian(b).data())
        .ok_or_else(|| Error::DegenerateBand(name.to_string()))
}

/// Band-averaged correlation of Laplacian details.
pub fn hcc(fused: &RasterStack, reference: &RasterStack) -> Result<f64> {
    check_stacks(fused, reference)?;
    let names = reference.band_names();
    let mut acc = 0.0;
    for (i, name) in names.iter().enumerate() {
        acc += hcc_band(&fused.grid(i), &reference.grid(i), name)?;
    }
    Ok(acc / names.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandMetrics {
    pub band: String,
    pub q: Option<f64>,
    pub rmse: f64,
    pub hcc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_band: Vec<BandMetrics>,
    pub q_mean: f64,
    pub ergas: f64,
    pub hcc_mean: f64,
    /// Q windows skipped for a vanishing denominator, summed over bands.
    pub skipped_q_windows: usize,
    /// Bands left out of `q_mean` or `hcc_mean` because they were degenerate.
    pub degenerate_bands: Vec<String>,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl MetricsReport {
    pub fn csv_header(&self) -> String {
        let mut out = String::from("method,q_mean,ergas,hcc_mean");
        for b in &self.per_band {
            let _ = write!(out, ",q_{0},rmse_{0},hcc_{0}", b.band);
        }
        out
    }

    pub fn csv_row(&self, method: &str) -> String {
        let mut out = format!("{},{},{},{}", method, self.q_mean, self.ergas, self.hcc_mean);
        for b in &self.per_band {
            let _ = write!(out, ",{},{},{}", fmt_opt(b.q), b.rmse, fmt_opt(b.hcc));
        }
        out
    }
}

fn mean_of(values: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

pub fn evaluate(fused: &RasterStack, reference: &RasterStack, cfg: &MetricsConfig) -> Result<MetricsReport> {
    check_stacks(fused, reference)?;
    let names = reference.band_names();
    let mut per_band = Vec::with_capacity(names.len());
    let mut skipped = 0;
    let mut degenerate = Vec::new();
    for (i, name) in names.iter().enumerate() {
        let (f, r) = (fused.grid(i), reference.grid(i));
        let q = match q_index_detailed(&f, &r, cfg.q_window) {
            Ok(q) => {
                skipped += q.skipped;
                Some(q.value)
            }
            Err(Error::DegenerateBand(_)) => None,
            Err(e) => return Err(e),
        };
        let h = match hcc_band(&f, &r, name) {
            Ok(v) => Some(v),
            Err(Error::DegenerateBand(_)) => None,
            Err(e) => return Err(e),
        };
        if q.is_none() || h.is_none() {
            degenerate.push(name.clone());
        }
        per_band.push(BandMetrics {
            band: name.clone(),
            q,
            rmse: rmse(&f, &r)?,
            hcc: h,
        });
    }
    Ok(MetricsReport {
        q_mean: mean_of(per_band.iter().filter_map(|b| b.q)),
        hcc_mean: mean_of(per_band.iter().filter_map(|b| b.hcc)),
        ergas: ergas(fused, reference, cfg.ergas_ratio)?,
        per_band,
        skipped_q_windows: skipped,
        degenerate_bands: degenerate,
    })
}
