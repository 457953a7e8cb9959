//! Multiband raster types and the `.msr` container.
//!
//! A `.msr` file is laid out as
//!
//! ```text
//! "MSR1" | u32 LE header length N | N bytes of JSON | f32 LE samples
//! ```
//!
//! The JSON header carries exactly `width`, `height`, `bands`, `resolution_m`
//! and `dtype` (always `"f32le"`). Samples are band-sequential and row-major.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MSR_MAGIC: &[u8; 4] = b"MSR1";
pub const MSR_DTYPE: &str = "f32le";

/// Sentinel-2 bands sampled at 10 m.
pub const BANDS_10M: [&str; 4] = ["B02", "B03", "B04", "B08"];
/// Sentinel-2 bands sampled at 20 m.
pub const BANDS_20M: [&str; 6] = ["B05", "B06", "B07", "B8A", "B11", "B12"];

/// Row-major 2-D grid of 64-bit samples used for all internal computation.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Grid {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::ShapeMismatch(format!(
                "grid {}x{} needs {} samples, got {}",
                width,
                height,
                width * height,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    pub fn same_shape(&self, other: &Grid) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Grid {
        Grid {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Elementwise combination of two equally shaped grids.
    pub fn zip_map(&self, other: &Grid, f: impl Fn(f64, f64) -> f64) -> Result<Grid> {
        if !self.same_shape(other) {
            return Err(Error::ShapeMismatch(format!(
                "{}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(Grid {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Population standard deviation.
    pub fn std(&self) -> f64 {
        let m = self.mean();
        let var = self.data.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / self.data.len() as f64;
        var.sqrt()
    }

    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Grid {
        let mut data = Vec::with_capacity(w * h);
        for y in y0..y0 + h {
            let row = y * self.width;
            data.extend_from_slice(&self.data[row + x0..row + x0 + w]);
        }
        Grid {
            width: w,
            height: h,
            data,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Band {
    pub name: String,
    pub data: Vec<f32>,
}

/// A georeference-free multiband image. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterStack {
    width: usize,
    height: usize,
    bands: Vec<Band>,
    resolution_m: f64,
}

impl RasterStack {
    pub fn new(width: usize, height: usize, bands: Vec<Band>, resolution_m: f64) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidRaster(format!(
                "dimensions must be positive, got {}x{}",
                width, height
            )));
        }
        if bands.is_empty() {
            return Err(Error::InvalidRaster("at least one band required".into()));
        }
        if !(resolution_m.is_finite() && resolution_m > 0.0) {
            return Err(Error::InvalidRaster(format!(
                "resolution must be positive, got {}",
                resolution_m
            )));
        }
        for band in &bands {
            if band.data.len() != width * height {
                return Err(Error::InvalidRaster(format!(
                    "band {} has {} samples, expected {}",
                    band.name,
                    band.data.len(),
                    width * height
                )));
            }
            check_finite(band)?;
        }
        Ok(Self {
            width,
            height,
            bands,
            resolution_m,
        })
    }

    /// Builds a stack from 64-bit grids, rounding samples to 32 bits.
    pub fn from_grids<S: AsRef<str>>(names: &[S], grids: &[Grid], resolution_m: f64) -> Result<Self> {
        if names.len() != grids.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} band names for {} grids",
                names.len(),
                grids.len()
            )));
        }
        let first = grids
            .first()
            .ok_or_else(|| Error::InvalidRaster("at least one band required".into()))?;
        let bands = names
            .iter()
            .zip(grids)
            .map(|(name, g)| {
                if !g.same_shape(first) {
                    return Err(Error::ShapeMismatch("grids differ in size".into()));
                }
                Ok(Band {
                    name: name.as_ref().to_string(),
                    data: g.data().iter().map(|&v| v as f32).collect(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(first.width(), first.height(), bands, resolution_m)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn resolution_m(&self) -> f64 {
        self.resolution_m
    }

    pub fn bands(&self) -> &[Band] {
        &self.bands
    }

    pub fn band_count(&self) -> usize {
        self.bands.len()
    }

    pub fn band_names(&self) -> Vec<String> {
        self.bands.iter().map(|b| b.name.clone()).collect()
    }

    pub fn band_index(&self, name: &str) -> Option<usize> {
        self.bands.iter().position(|b| b.name == name)
    }

    /// Band `i` widened to 64-bit.
    pub fn grid(&self, i: usize) -> Grid {
        Grid {
            width: self.width,
            height: self.height,
            data: self.bands[i].data.iter().map(|&v| v as f64).collect(),
        }
    }

    pub fn grids(&self) -> Vec<Grid> {
        (0..self.bands.len()).map(|i| self.grid(i)).collect()
    }

    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Self> {
        crop(self, x0, y0, w, h)
    }

    pub fn select_bands<S: AsRef<str>>(&self, names: &[S]) -> Result<Self> {
        select_bands(self, names)
    }
}

fn check_finite(band: &Band) -> Result<()> {
    match band.data.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFiniteSample {
            band: band.name.clone(),
            index,
        }),
        None => Ok(()),
    }
}

/// An aligned 10 m / 20 m acquisition pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub z: RasterStack,
    pub x: RasterStack,
}

impl Scene {
    pub fn new(z: RasterStack, x: RasterStack) -> Result<Self> {
        if z.width() != 2 * x.width() || z.height() != 2 * x.height() {
            return Err(Error::ShapeMismatch(format!(
                "guide {}x{} must be exactly twice the {}x{} target grid",
                z.width(),
                z.height(),
                x.width(),
                x.height()
            )));
        }
        if (z.resolution_m() * 2.0 - x.resolution_m()).abs() > 1e-9 * x.resolution_m() {
            return Err(Error::ShapeMismatch(format!(
                "guide resolution {} m is not half of {} m",
                z.resolution_m(),
                x.resolution_m()
            )));
        }
        Ok(Self { z, x })
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MsrHeader {
    width: usize,
    height: usize,
    bands: Vec<String>,
    resolution_m: f64,
    dtype: String,
}

/// Serializes a stack into the `.msr` byte layout.
pub fn encode_raster(stack: &RasterStack) -> Result<Vec<u8>> {
    for band in &stack.bands {
        check_finite(band)?;
    }
    let header = MsrHeader {
        width: stack.width,
        height: stack.height,
        bands: stack.band_names(),
        resolution_m: stack.resolution_m,
        dtype: MSR_DTYPE.to_string(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::MalformedHeader(e.to_string()))?;
    let payload = stack.width * stack.height * stack.bands.len() * 4;
    let mut out = Vec::with_capacity(8 + json.len() + payload);
    out.extend_from_slice(MSR_MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for band in &stack.bands {
        for v in &band.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_raster(bytes: &[u8]) -> Result<RasterStack> {
    if bytes.len() < 8 || &bytes[..4] != MSR_MAGIC {
        return Err(Error::MalformedHeader("missing MSR1 magic".into()));
    }
    let n = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let body = &bytes[8..];
    if body.len() < n {
        return Err(Error::MalformedHeader(format!(
            "header length {} exceeds file size",
            n
        )));
    }
    let header: MsrHeader =
        serde_json::from_slice(&body[..n]).map_err(|e| Error::MalformedHeader(e.to_string()))?;
    if header.dtype != MSR_DTYPE {
        return Err(Error::MalformedHeader(format!(
            "unsupported dtype {:?}",
            header.dtype
        )));
    }
    if header.width == 0 || header.height == 0 || header.bands.is_empty() {
        return Err(Error::MalformedHeader("empty raster".into()));
    }
    if !(header.resolution_m.is_finite() && header.resolution_m > 0.0) {
        return Err(Error::MalformedHeader("resolution_m must be positive".into()));
    }
    let plane = header.width * header.height;
    let payload = &body[n..];
    let expected = plane * header.bands.len() * 4;
    if payload.len() != expected {
        return Err(Error::SizeMismatch {
            expected,
            actual: payload.len(),
        });
    }
    let bands = header
        .bands
        .into_iter()
        .enumerate()
        .map(|(b, name)| {
            let chunk = &payload[b * plane * 4..(b + 1) * plane * 4];
            let data = chunk
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            Band { name, data }
        })
        .collect();
    RasterStack::new(header.width, header.height, bands, header.resolution_m)
}

pub fn load_raster(path: impl AsRef<Path>) -> Result<RasterStack> {
    decode_raster(&fs::read(path)?)
}

pub fn save_raster(stack: &RasterStack, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_raster(stack)?;
    fs::write(path, bytes)?;
    Ok(())
}

pub fn crop(stack: &RasterStack, x0: usize, y0: usize, w: usize, h: usize) -> Result<RasterStack> {
    if w == 0 || h == 0 || x0 + w > stack.width || y0 + h > stack.height {
        return Err(Error::OutOfBounds {
            x0,
            y0,
            w,
            h,
            width: stack.width,
            height: stack.height,
        });
    }
    let bands = stack
        .bands
        .iter()
        .map(|band| {
            let mut data = Vec::with_capacity(w * h);
            for y in y0..y0 + h {
                let row = y * stack.width;
                data.extend_from_slice(&band.data[row + x0..row + x0 + w]);
            }
            Band {
                name: band.name.clone(),
                data,
            }
        })
        .collect();
    Ok(RasterStack {
        width: w,
        height: h,
        bands,
        resolution_m: stack.resolution_m,
    })
}

pub fn select_bands<S: AsRef<str>>(stack: &RasterStack, names: &[S]) -> Result<RasterStack> {
    if names.is_empty() {
        return Err(Error::InvalidRaster("no bands selected".into()));
    }
    let bands = names
        .iter()
        .map(|name| {
            let name = name.as_ref();
            stack
                .band_index(name)
                .map(|i| stack.bands[i].clone())
                .ok_or_else(|| Error::UnknownBand(name.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RasterStack {
        width: stack.width,
        height: stack.height,
        bands,
        resolution_m: stack.resolution_m,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp(width: usize, height: usize, names: &[&str]) -> RasterStack {
        let bands = names
            .iter()
            .enumerate()
            .map(|(b, n)| Band {
                name: n.to_string(),
                data: (0..width * height).map(|i| (b * 100 + i) as f32).collect(),
            })
            .collect();
        RasterStack::new(width, height, bands, 20.0).unwrap()
    }

    #[test]
    fn decodes_hand_written_fixture() {
        // 3x2, two bands, 10 m.
        let header = br#"{"width":3,"height":2,"bands":["B02","B03"],"resolution_m":10.0,"dtype":"f32le"}"#;
        let mut bytes = b"MSR1".to_vec();
        bytes.extend_from_slice(&[header.len() as u8, 0, 0, 0]);
        bytes.extend_from_slice(header);
        // band B02: 0.0 1.0 2.0 / 3.0 4.0 5.0
        let b02: [[u8; 4]; 6] = [
            [0x00, 0x00, 0x00, 0x00],
            [0x00, 0x00, 0x80, 0x3f],
            [0x00, 0x00, 0x00, 0x40],
            [0x00, 0x00, 0x40, 0x40],
            [0x00, 0x00, 0x80, 0x40],
            [0x00, 0x00, 0xa0, 0x40],
        ];
        // band B03: -1.0 0.5 0.25 / 100.0 -2.5 1e-3
        let b03: [[u8; 4]; 6] = [
            [0x00, 0x00, 0x80, 0xbf],
            [0x00, 0x00, 0x00, 0x3f],
            [0x00, 0x00, 0x80, 0x3e],
            [0x00, 0x00, 0xc8, 0x42],
            [0x00, 0x00, 0x20, 0xc0],
            [0x6f, 0x12, 0x83, 0x3a],
        ];
        for q in b02.iter().chain(&b03) {
            bytes.extend_from_slice(q);
        }
        let s = decode_raster(&bytes).unwrap();
        assert_eq!((s.width(), s.height(), s.band_count()), (3, 2, 2));
        assert_eq!(s.resolution_m(), 10.0);
        assert_eq!(s.bands()[0].name, "B02");
        assert_eq!(s.bands()[0].data, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(s.bands()[1].data, vec![-1.0, 0.5, 0.25, 100.0, -2.5, 1e-3]);
        // and it re-encodes to the same bytes
        assert_eq!(encode_raster(&s).unwrap(), bytes);
    }

    #[test]
    fn short_payload_is_size_mismatch() {
        let s = ramp(4, 3, &["B05"]);
        let mut bytes = encode_raster(&s).unwrap();
        bytes.pop();
        assert!(matches!(
            decode_raster(&bytes),
            Err(Error::SizeMismatch {
                expected: 48,
                actual: 47
            })
        ));
    }

    #[test]
    fn header_errors() {
        let s = ramp(2, 2, &["B05"]);
        let mut bytes = encode_raster(&s).unwrap();
        bytes[0] = b'X';
        assert!(matches!(decode_raster(&bytes), Err(Error::MalformedHeader(_))));

        let header = br#"{"width":1,"height":1,"bands":["a"],"resolution_m":1.0,"dtype":"f32le","extra":1}"#;
        let mut bytes = b"MSR1".to_vec();
        bytes.extend_from_slice(&(header.len() as u32).to_le_bytes());
        bytes.extend_from_slice(header);
        bytes.extend_from_slice(&[0; 4]);
        assert!(matches!(decode_raster(&bytes), Err(Error::MalformedHeader(_))));

        let header = br#"{"width":1,"height":1,"bands":["a"],"resolution_m":1.0}"#;
        let mut bytes = b"MSR1".to_vec();
        bytes.extend_from_slice(&(header.len() as u32).to_le_bytes());
        bytes.extend_from_slice(header);
        bytes.extend_from_slice(&[0; 4]);
        assert!(matches!(decode_raster(&bytes), Err(Error::MalformedHeader(_))));

        let header = br#"{"width":1,"height":1,"bands":["a"],"resolution_m":1.0,"dtype":"f64le"}"#;
        let mut bytes = b"MSR1".to_vec();
        bytes.extend_from_slice(&(header.len() as u32).to_le_bytes());
        bytes.extend_from_slice(header);
        bytes.extend_from_slice(&[0; 4]);
        assert!(matches!(decode_raster(&bytes), Err(Error::MalformedHeader(_))));
    }

    #[test]
    fn non_finite_payload_rejected_on_load() {
        let s = ramp(2, 2, &["B05"]);
        let mut bytes = encode_raster(&s).unwrap();
        let n = bytes.len();
        bytes[n - 4..].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(
            decode_raster(&bytes),
            Err(Error::NonFiniteSample { index: 3, .. })
        ));
    }

    #[test]
    fn nan_stack_rejected_before_write() {
        let s = ramp(2, 2, &["B05"]);
        let mut bad = s.clone();
        bad.bands[0].data[1] = f32::NAN;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.msr");
        assert!(matches!(
            save_raster(&bad, &path),
            Err(Error::NonFiniteSample { .. })
        ));
        assert!(!path.exists());
        assert!(RasterStack::new(2, 2, bad.bands, 20.0).is_err());
    }

    #[test]
    fn constant_payload_layout() {
        let s = RasterStack::new(
            8,
            8,
            vec![Band {
                name: "B05".into(),
                data: vec![0.125; 64],
            }],
            20.0,
        )
        .unwrap();
        let bytes = encode_raster(&s).unwrap();
        let n = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let payload = &bytes[8 + n..];
        assert_eq!(payload.len(), 256);
        for q in payload.chunks_exact(4) {
            assert_eq!(q, 0.125f32.to_le_bytes());
        }
    }

    #[test]
    fn file_round_trip_and_determinism() {
        let s = ramp(5, 3, &BANDS_20M);
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.msr");
        let b = dir.path().join("b.msr");
        save_raster(&s, &a).unwrap();
        save_raster(&s, &b).unwrap();
        assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
        assert_eq!(load_raster(&a).unwrap(), s);
        assert!(matches!(
            load_raster(dir.path().join("missing.msr")),
            Err(Error::Io(_))
        ));
    }

    #[test]
    fn crop_cases() {
        let s = ramp(4, 4, &["B05"]);
        assert_eq!(crop(&s, 0, 0, 4, 4).unwrap(), s);
        let c = crop(&s, 1, 1, 2, 2).unwrap();
        // source indices (1,1),(2,1),(1,2),(2,2) -> 5, 6, 9, 10
        assert_eq!(c.bands()[0].data, vec![5.0, 6.0, 9.0, 10.0]);
        assert!(matches!(crop(&s, 3, 0, 2, 1), Err(Error::OutOfBounds { .. })));
        assert!(matches!(crop(&s, 0, 0, 0, 1), Err(Error::OutOfBounds { .. })));
    }

    #[test]
    fn select_cases() {
        let s = ramp(3, 3, &BANDS_20M);
        assert_eq!(select_bands(&s, &BANDS_20M).unwrap(), s);
        let two = select_bands(&s, &["B12", "B11"]).unwrap();
        assert_eq!(two.band_names(), vec!["B12", "B11"]);
        assert_eq!(two.bands()[0], s.bands()[5]);
        assert_eq!(two.bands()[1], s.bands()[4]);
        assert!(matches!(
            select_bands(&s, &["B99"]),
            Err(Error::UnknownBand(n)) if n == "B99"
        ));
    }

    #[test]
    fn scene_invariants() {
        let mut z = ramp(8, 8, &BANDS_10M);
        z.resolution_m = 10.0;
        let mut x = ramp(4, 4, &BANDS_20M);
        assert!(Scene::new(z.clone(), x.clone()).is_ok());
        x.resolution_m = 30.0;
        assert!(Scene::new(z.clone(), x).is_err());
        assert!(Scene::new(z, ramp(3, 4, &BANDS_20M)).is_err());
    }

    fn arb_stack() -> impl Strategy<Value = RasterStack> {
        (1usize..6, 1usize..6, 1usize..4).prop_flat_map(|(w, h, nb)| {
            (
                proptest::collection::vec(
                    proptest::collection::vec(-1e6f32..1e6f32, w * h),
                    nb,
                ),
                1.0f64..100.0,
            )
                .prop_map(move |(planes, res)| {
                    let bands = planes
                        .into_iter()
                        .enumerate()
                        .map(|(i, data)| Band {
                            name: format!("b{}", i),
                            data,
                        })
                        .collect();
                    RasterStack::new(w, h, bands, res).unwrap()
                })
        })
    }

    proptest! {
        #[test]
        fn encode_decode_identity(s in arb_stack()) {
            let bytes = encode_raster(&s).unwrap();
            let back = decode_raster(&bytes).unwrap();
            prop_assert_eq!(encode_raster(&back).unwrap(), bytes);
            prop_assert_eq!(back, s);
        }

        #[test]
        fn nested_crops_compose(
            s in arb_stack(),
            a in proptest::array::uniform4(0.0f64..1.0),
            b in proptest::array::uniform4(0.0f64..1.0),
        ) {
            // map unit draws onto windows that always fit
            let fit = |u: [f64; 4], w: usize, h: usize| {
                let ww = 1 + (u[2] * w as f64) as usize % w;
                let hh = 1 + (u[3] * h as f64) as usize % h;
                let x0 = (u[0] * (w - ww + 1) as f64) as usize % (w - ww + 1);
                let y0 = (u[1] * (h - hh + 1) as f64) as usize % (h - hh + 1);
                (x0, y0, ww, hh)
            };
            let (ax, ay, aw, ah) = fit(a, s.width(), s.height());
            let (bx, by, bw, bh) = fit(b, aw, ah);
            let outer = crop(&s, ax, ay, aw, ah).unwrap();
            let inner = crop(&outer, bx, by, bw, bh).unwrap();
            prop_assert_eq!(inner, crop(&s, ax + bx, ay + by, bw, bh).unwrap());
        }

        #[test]
        fn selection_preserves_grids(s in arb_stack(), pick in proptest::collection::vec(0usize..3, 1..4)) {
            let names: Vec<String> = pick.iter().map(|&i| format!("b{}", i % s.band_count())).collect();
            let sel = select_bands(&s, &names).unwrap();
            for (band, name) in sel.bands().iter().zip(&names) {
                let src = &s.bands()[s.band_index(name).unwrap()];
                prop_assert_eq!(band, src);
            }
        }
    }
}
