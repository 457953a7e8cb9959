//! Classical sharpening baselines adapted to the six-band case: bicubic,
//! PCA and generalized IHS substitution, and Chavez high-pass injection.
//!
//! Guide ("pan") images are chosen among the 10 m bands by maximum Pearson
//! correlation and matched globally in mean and standard deviation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::pearson;
use crate::raster::{Grid, RasterStack};
use crate::resample::{bicubic_upsample, convolve, SeparableKernel};
use crate::wald::SCALE;

pub const DEFAULT_BOX: usize = 5;
pub const JACOBI_TOL: f64 = 1e-12;
const JACOBI_MAX_SWEEPS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanChoice {
    pub band: String,
    pub pan: String,
    pub correlation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanAssignment {
    pub rule: String,
    pub mapping: Vec<PanChoice>,
}

/// Standard deviation below which a grid counts as constant, relative to
/// `max(1, |mean|)`.
pub const FLAT_TOL: f64 = 1e-12;

pub fn is_flat(g: &Grid) -> bool {
    !(g.std() > FLAT_TOL * g.mean().abs().max(1.0))
}

/// Affine histogram match of `src` to the given mean and standard deviation.
pub fn match_moments(src: &Grid, mean: f64, std: f64, name: &str) -> Result<Grid> {
    let (m, s) = (src.mean(), src.std());
    if is_flat(src) {
        return Err(Error::DegenerateBand(name.to_string()));
    }
    let gain = std / s;
    Ok(src.map(|v| (v - m) * gain + mean))
}

fn check_grid(stack: &RasterStack, g: &Grid, what: &str) -> Result<()> {
    if g.width() != stack.width() || g.height() != stack.height() {
        return Err(Error::ShapeMismatch(format!(
            "{} is {}x{}, bands are {}x{}",
            what,
            g.width(),
            g.height(),
            stack.width(),
            stack.height()
        )));
    }
    Ok(())
}

fn most_correlated(z: &RasterStack, target: &Grid) -> Result<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for i in 0..z.band_count() {
        if let Some(r) = pearson(z.grid(i).data(), target.data()) {
            if best.map_or(true, |(_, b)| r > b) {
                best = Some((i, r));
            }
        }
    }
    best.ok_or_else(|| Error::DegenerateBand("no guide band has non-zero variance".into()))
}

fn check_guide(z: &RasterStack, up: &RasterStack) -> Result<()> {
    if z.width() != up.width() || z.height() != up.height() {
        return Err(Error::ShapeMismatch(format!(
            "guide {}x{} vs upsampled {}x{}",
            z.width(),
            z.height(),
            up.width(),
            up.height()
        )));
    }
    Ok(())
}

/// One matched pan per upsampled band, from the most correlated guide band.
pub fn synth_pan(z: &RasterStack, upsampled: &RasterStack) -> Result<(Vec<Grid>, PanAssignment)> {
    check_guide(z, upsampled)?;
    let names = z.band_names();
    let mut pans = Vec::with_capacity(upsampled.band_count());
    let mut mapping = Vec::with_capacity(upsampled.band_count());
    for (b, band) in upsampled.band_names().into_iter().enumerate() {
        let target = upsampled.grid(b);
        if !(target.std() > 0.0) {
            return Err(Error::DegenerateBand(band));
        }
        let (i, r) = most_correlated(z, &target)?;
        pans.push(match_moments(&z.grid(i), target.mean(), target.std(), &names[i])?);
        mapping.push(PanChoice {
            band,
            pan: names[i].clone(),
            correlation: r,
        });
    }
    Ok((
        pans,
        PanAssignment {
            rule: "max-correlation".into(),
            mapping,
        },
    ))
}

/// Band-mean intensity of a stack.
pub fn intensity(stack: &RasterStack) -> Grid {
    let grids = stack.grids();
    let n = grids.len() as f64;
    Grid::from_fn(stack.width(), stack.height(), |x, y| {
        grids.iter().map(|g| g.get(x, y)).sum::<f64>() / n
    })
}

/// The unmatched guide band most correlated with the band-mean intensity.
pub fn shared_pan(z: &RasterStack, upsampled: &RasterStack) -> Result<(Grid, String)> {
    check_guide(z, upsampled)?;
    let (i, _) = most_correlated(z, &intensity(upsampled))?;
    Ok((z.grid(i), z.band_names()[i].clone()))
}

pub fn sharpen_bicubic(x: &RasterStack) -> Result<RasterStack> {
    let grids = x
        .grids()
        .iter()
        .map(|g| bicubic_upsample(g, SCALE))
        .collect::<Result<Vec<_>>>()?;
    RasterStack::from_grids(&x.band_names(), &grids, x.resolution_m() / SCALE as f64)
}

/// Chavez HPF: `x~_b + pan_b - box(pan_b)`.
pub fn sharpen_hpf(upsampled: &RasterStack, pans: &[Grid], box_size: usize) -> Result<RasterStack> {
    if pans.len() != upsampled.band_count() {
        return Err(Error::ShapeMismatch(format!(
            "{} pans for {} bands",
            pans.len(),
            upsampled.band_count()
        )));
    }
    let kernel = SeparableKernel::boxcar(box_size)?;
    let grids = upsampled
        .grids()
        .iter()
        .zip(pans)
        .map(|(band, pan)| {
            check_grid(upsampled, pan, "pan")?;
            let low = convolve(pan, &kernel);
            let detail = pan.zip_map(&low, |p, l| p - l)?;
            band.zip_map(&detail, |b, d| b + d)
        })
        .collect::<Result<Vec<_>>>()?;
    RasterStack::from_grids(&upsampled.band_names(), &grids, upsampled.resolution_m())
}

/// Generalized IHS: every band receives `pan - I`, with the pan matched to
/// the intensity `I`. A constant pan carries no detail and leaves the bands
/// unchanged.
pub fn sharpen_gihs(upsampled: &RasterStack, pan: &Grid) -> Result<RasterStack> {
    check_grid(upsampled, pan, "pan")?;
    if is_flat(pan) {
        return Ok(upsampled.clone());
    }
    let i = intensity(upsampled);
    let matched = match_moments(pan, i.mean(), i.std(), "pan")?;
    let delta = matched.zip_map(&i, |p, v| p - v)?;
    let grids = upsampled
        .grids()
        .iter()
        .map(|g| g.zip_map(&delta, |b, d| b + d))
        .collect::<Result<Vec<_>>>()?;
    RasterStack::from_grids(&upsampled.band_names(), &grids, upsampled.resolution_m())
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues in descending order with the matching unit
/// eigenvectors as columns of the second result (`vectors[row][col]`).
pub fn symmetric_eigen(a: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let n = a.len();
    if a.iter().any(|r| r.len() != n) {
        return Err(Error::ShapeMismatch("matrix is not square".into()));
    }
    let mut m: Vec<Vec<f64>> = a.to_vec();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    let scale = m.iter().flatten().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);

    for _ in 0..JACOBI_MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i][j] * m[i][j])
            .sum::<f64>()
            .sqrt();
        if off <= JACOBI_TOL * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if m[p][q] == 0.0 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[k][p], m[k][q]);
                    m[k][p] = c * mkp - s * mkq;
                    m[k][q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[p][k], m[q][k]);
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[j][j].total_cmp(&m[i][i]));
    let values = order.iter().map(|&i| m[i][i]).collect();
    let vectors = (0..n).map(|r| order.iter().map(|&c| v[r][c]).collect()).collect();
    Ok((values, vectors))
}

/// Principal components of the pixelwise band vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    pub mean: Vec<f64>,
    pub eigenvalues: Vec<f64>,
    /// `components[k]` is the k-th unit eigenvector (band weights).
    pub components: Vec<Vec<f64>>,
}

impl Pca {
    pub fn fit(bands: &[Grid]) -> Result<Self> {
        let first = bands.first().ok_or(Error::EmptyDataset)?;
        if bands.iter().any(|g| !g.same_shape(first)) {
            return Err(Error::ShapeMismatch("bands differ in size".into()));
        }
        let nb = bands.len();
        let npx = first.data().len() as f64;
        let mean: Vec<f64> = bands.iter().map(|g| g.mean()).collect();
        let mut cov = vec![vec![0.0; nb]; nb];
        for i in 0..nb {
            for j in i..nb {
                let c = bands[i]
                    .data()
                    .iter()
                    .zip(bands[j].data())
                    .map(|(a, b)| (a - mean[i]) * (b - mean[j]))
                    .sum::<f64>()
                    / npx;
                cov[i][j] = c;
                cov[j][i] = c;
            }
        }
        let (eigenvalues, vectors) = symmetric_eigen(&cov)?;
        let components = (0..nb).map(|k| (0..nb).map(|r| vectors[r][k]).collect()).collect();
        Ok(Self {
            mean,
            eigenvalues,
            components,
        })
    }

    pub fn forward(&self, bands: &[Grid]) -> Vec<Grid> {
        self.components
            .iter()
            .map(|w| {
                let mut out = Grid::filled(bands[0].width(), bands[0].height(), 0.0);
                for ((g, wi), mi) in bands.iter().zip(w).zip(&self.mean) {
                    for (o, v) in out.data_mut().iter_mut().zip(g.data()) {
                        *o += wi * (v - mi);
                    }
                }
                out
            })
            .collect()
    }

    pub fn inverse(&self, pcs: &[Grid]) -> Vec<Grid> {
        (0..self.mean.len())
            .map(|b| {
                let mut out = Grid::filled(pcs[0].width(), pcs[0].height(), self.mean[b]);
                for (pc, w) in pcs.iter().zip(&self.components) {
                    for (o, v) in out.data_mut().iter_mut().zip(pc.data()) {
                        *o += w[b] * v;
                    }
                }
                out
            })
            .collect()
    }
}

/// PCA substitution: the pan, matched to the first principal component,
/// replaces it before the inverse transform. The component is oriented so
/// that it correlates positively with the pan. A vanishing first eigenvalue
/// or a constant pan leaves the bands unchanged.
pub fn sharpen_pca(upsampled: &RasterStack, pan: &Grid) -> Result<RasterStack> {
    check_grid(upsampled, pan, "pan")?;
    let bands = upsampled.grids();
    let mut pca = Pca::fit(&bands)?;
    if !(pca.eigenvalues[0] > JACOBI_TOL) || is_flat(pan) {
        return Ok(upsampled.clone());
    }
    let mut pcs = pca.forward(&bands);
    if pearson(pan.data(), pcs[0].data()).unwrap_or(0.0) < 0.0 {
        pca.components[0].iter_mut().for_each(|w| *w = -*w);
        pcs[0] = pcs[0].map(|v| -v);
    }
    pcs[0] = match_moments(pan, pcs[0].mean(), pcs[0].std(), "pan")?;
    RasterStack::from_grids(
        &upsampled.band_names(),
        &pca.inverse(&pcs),
        upsampled.resolution_m(),
    )
}
