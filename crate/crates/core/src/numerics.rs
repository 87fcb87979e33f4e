//! Dense f64 kernels shared by the model, the offset estimator and the metrics.
//!
//! Everything here is a pure function over immutable inputs. Hidden states are
//! [`Tensor3`] values laid out `batch × patches × channels`, row-major, so the
//! channel vector of a token is a contiguous slice.

use crate::error::{Error, Result};

/// Dense `B × P × D` array; the hidden state of one layer at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    data: Vec<f64>,
    batch: usize,
    patches: usize,
    channels: usize,
}

impl Tensor3 {
    pub fn new(batch: usize, patches: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != batch * patches * channels {
            return Err(Error::ShapeMismatch(format!(
                "{} values cannot fill a {batch}x{patches}x{channels} tensor",
                data.len()
            )));
        }
        Ok(Self {
            data,
            batch,
            patches,
            channels,
        })
    }

    pub fn zeros(batch: usize, patches: usize, channels: usize) -> Self {
        Self {
            data: vec![0.0; batch * patches * channels],
            batch,
            patches,
            channels,
        }
    }

    pub fn from_fn(
        batch: usize,
        patches: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(batch * patches * channels);
        for b in 0..batch {
            for i in 0..patches {
                for d in 0..channels {
                    data.push(f(b, i, d));
                }
            }
        }
        Self {
            data,
            batch,
            patches,
            channels,
        }
    }

    /// `(B, P, D)`.
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.batch, self.patches, self.channels)
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn patches(&self) -> usize {
        self.patches
    }

    pub fn channels(&self) -> usize {
        self.channels
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

    pub fn get(&self, b: usize, i: usize, d: usize) -> f64 {
        self.data[(b * self.patches + i) * self.channels + d]
    }

    /// Channel vector of token `i` in batch element `b`.
    pub fn token(&self, b: usize, i: usize) -> &[f64] {
        let start = (b * self.patches + i) * self.channels;
        &self.data[start..start + self.channels]
    }

    pub fn tokens(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact(0) panics; a zero-channel tensor has no tokens worth visiting.
        self.data.chunks_exact(self.channels.max(1))
    }

    /// The `P × D` slab for batch element `b`, copied into a matrix.
    pub fn batch_matrix(&self, b: usize) -> Matrix {
        let n = self.patches * self.channels;
        Matrix {
            data: self.data[b * n..(b + 1) * n].to_vec(),
            rows: self.patches,
            cols: self.channels,
        }
    }

    /// Stack `B` matrices of identical shape `P × D` into a tensor.
    pub fn from_batch_matrices(slabs: &[Matrix]) -> Result<Self> {
        let first = slabs
            .first()
            .ok_or_else(|| Error::ShapeMismatch("no batch slabs".into()))?;
        let (rows, cols) = first.dims();
        let mut data = Vec::with_capacity(slabs.len() * rows * cols);
        for m in slabs {
            if m.dims() != (rows, cols) {
                return Err(Error::ShapeMismatch(format!(
                    "batch slab {:?} differs from {:?}",
                    m.dims(),
                    (rows, cols)
                )));
            }
            data.extend_from_slice(&m.data);
        }
        Tensor3::new(slabs.len(), rows, cols, data)
    }

    pub fn ensure_same_shape(&self, other: &Tensor3) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", self.dims(), other.dims())));
        }
        Ok(())
    }

    pub fn sub(&self, other: &Tensor3) -> Result<Tensor3> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn add(&self, other: &Tensor3) -> Result<Tensor3> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn scale(&self, c: f64) -> Tensor3 {
        self.map(|v| v * c)
    }

    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Tensor3 {
        Tensor3 {
            data: self.data.iter().map(|&v| f(v)).collect(),
            batch: self.batch,
            patches: self.patches,
            channels: self.channels,
        }
    }

    pub fn zip_with(&self, other: &Tensor3, f: impl Fn(f64, f64) -> f64) -> Result<Tensor3> {
        self.ensure_same_shape(other)?;
        Ok(Tensor3 {
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
            batch: self.batch,
            patches: self.patches,
            channels: self.channels,
        })
    }

    /// Frobenius norm over every entry.
    pub fn norm(&self) -> f64 {
        l2_norm(&self.data)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    data: Vec<f64>,
    rows: usize,
    cols: usize,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { data, rows, cols })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            data: vec![0.0; rows * cols],
            rows,
            cols,
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { data, rows, cols }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    pub fn scaled(&self, c: f64) -> Matrix {
        Matrix {
            data: self.data.iter().map(|v| v * c).collect(),
            rows: self.rows,
            cols: self.cols,
        }
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        if self.dims() != other.dims() {
            return Err(Error::ShapeMismatch(format!(
                "cannot add {:?} and {:?}",
                self.dims(),
                other.dims()
            )));
        }
        Ok(Matrix {
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
            rows: self.rows,
            cols: self.cols,
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            data: self.data.iter().map(|&v| f(v)).collect(),
            rows: self.rows,
            cols: self.cols,
        }
    }
}

/// Euclidean norm; 0 for the empty vector.
pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Mean squared deviation from the mean, divisor `len` (population convention).
pub fn population_variance(v: &[f64]) -> Result<f64> {
    if v.is_empty() {
        return Err(Error::EmptyVector);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    Ok(v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n)
}

pub fn mean(v: &[f64]) -> Option<f64> {
    if v.is_empty() {
        None
    } else {
        Some(v.iter().sum::<f64>() / v.len() as f64)
    }
}

/// Clamp into `[0, 1]`.
pub fn clip_unit(x: f64) -> f64 {
    x.clamp(0.0, 1.0)
}

/// Row-wise softmax, stabilized by subtracting each row's maximum.
pub fn softmax_rows(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for r in 0..out.rows {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(Error::ShapeMismatch(format!(
            "cannot multiply {}x{} by {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let out_row = &mut out.data[i * b.cols..(i + 1) * b.cols];
        for k in 0..a.cols {
            let aik = a.data[i * a.cols + k];
            if aik == 0.0 {
                continue;
            }
            let b_row = &b.data[k * b.cols..(k + 1) * b.cols];
            for (o, &bkj) in out_row.iter_mut().zip(b_row) {
                *o += aik * bkj;
            }
        }
    }
    Ok(out)
}
