use crate::error::{Error, Result};

/// Dense `(batch, channels, height, width)` tensor, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4 {
    dims: [usize; 4],
    data: Vec<f64>,
}

impl Tensor4 {
    pub fn new(dims: [usize; 4], data: Vec<f64>) -> Result<Self> {
        let len: usize = dims.iter().product();
        if data.len() != len {
            return Err(Error::ShapeMismatch(format!(
                "tensor {:?} needs {} values, got {}",
                dims,
                len,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::ShapeMismatch(format!(
                "tensor value {} is not finite",
                i
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: [usize; 4]) -> Self {
        Self {
            dims,
            data: vec![0.0; dims.iter().product()],
        }
    }

    pub fn filled(dims: [usize; 4], value: f64) -> Self {
        Self {
            dims,
            data: vec![value; dims.iter().product()],
        }
    }

    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    pub fn batch(&self) -> usize {
        self.dims[0]
    }

    pub fn channels(&self) -> usize {
        self.dims[1]
    }

    pub fn height(&self) -> usize {
        self.dims[2]
    }

    pub fn width(&self) -> usize {
        self.dims[3]
    }

    pub fn plane_len(&self) -> usize {
        self.dims[2] * self.dims[3]
    }

    pub fn sample_len(&self) -> usize {
        self.dims[1] * self.plane_len()
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
    pub fn index(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.dims[1] + c) * self.dims[2] + y) * self.dims[3] + x
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.index(n, c, y, x)]
    }

    /// All channels of batch item `n`.
    pub fn sample(&self, n: usize) -> &[f64] {
        let len = self.sample_len();
        &self.data[n * len..(n + 1) * len]
    }

    pub fn plane(&self, n: usize, c: usize) -> &[f64] {
        let len = self.plane_len();
        let start = (n * self.dims[1] + c) * len;
        &self.data[start..start + len]
    }

    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [f64] {
        let len = self.plane_len();
        let start = (n * self.dims[1] + c) * len;
        &mut self.data[start..start + len]
    }

    pub fn same_dims(&self, other: &Tensor4) -> bool {
        self.dims == other.dims
    }

    pub fn scale(&self, k: f64) -> Tensor4 {
        Tensor4 {
            dims: self.dims,
            data: self.data.iter().map(|v| v * k).collect(),
        }
    }

    pub fn add(&self, other: &Tensor4) -> Result<Tensor4> {
        if !self.same_dims(other) {
            return Err(Error::ShapeMismatch(format!(
                "cannot add {:?} and {:?}",
                self.dims, other.dims
            )));
        }
        Ok(Tensor4 {
            dims: self.dims,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        })
    }

    /// Concatenates tensors with identical `(c, h, w)` along the batch axis.
    pub fn stack(items: &[&Tensor4]) -> Result<Tensor4> {
        let first = items.first().ok_or(Error::EmptyDataset)?;
        let [_, c, h, w] = first.dims;
        let mut data = Vec::with_capacity(items.iter().map(|t| t.data.len()).sum());
        let mut n = 0;
        for t in items {
            if t.dims[1..] != [c, h, w] {
                return Err(Error::ShapeMismatch(format!(
                    "cannot stack {:?} with {:?}",
                    t.dims, first.dims
                )));
            }
            data.extend_from_slice(&t.data);
            n += t.dims[0];
        }
        Ok(Tensor4 {
            dims: [n, c, h, w],
            data,
        })
    }

    /// Spatial window `(x0, y0, w, h)` of every plane.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Tensor4> {
        let [n, c, th, tw] = self.dims;
        if x0 + w > tw || y0 + h > th {
            return Err(Error::OutOfBounds {
                x0,
                y0,
                w,
                h,
                width: tw,
                height: th,
            });
        }
        let mut data = Vec::with_capacity(n * c * w * h);
        for b in 0..n {
            for ch in 0..c {
                let plane = self.plane(b, ch);
                for y in y0..y0 + h {
                    data.extend_from_slice(&plane[y * tw + x0..y * tw + x0 + w]);
                }
            }
        }
        Ok(Tensor4 {
            dims: [n, c, h, w],
            data,
        })
    }
}
