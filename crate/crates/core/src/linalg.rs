//! Dense row-major matrices over a generic float type.
//!
//! Training runs in `f32`; gradient checks run the same code in `f64`.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive};
use rayon::prelude::*;

use crate::error::{Error, Result};

pub trait Real: Float + FromPrimitive + Default + Debug + Display + Send + Sync + std::iter::Sum + 'static {
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("finite constant")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}

#[derive(Clone, Debug, PartialEq)]
pub struct Mat<F> {
    rows: usize,
    cols: usize,
    data: Vec<F>,
}

impl<F: Real> Mat<F> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![F::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<F>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Mat { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<F>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::Shape(format!(
                    "row {i} has {} columns, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Mat {
            rows: rows.len(),
            cols,
            data,
        })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[F] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [F] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> F {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: F) {
        self.data[i * self.cols + j] = v;
    }

    pub fn as_slice(&self) -> &[F] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<F> {
        self.data
    }

    pub fn par_rows_mut(&mut self) -> rayon::slice::ChunksMut<'_, F> {
        let cols = self.cols.max(1);
        self.data.par_chunks_mut(cols)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn frobenius_sq(&self) -> F {
        self.data.iter().map(|&v| v * v).sum()
    }

    pub fn fill_zero(&mut self) {
        self.data.iter_mut().for_each(|v| *v = F::zero());
    }

    pub fn scale(&mut self, s: F) {
        self.data.iter_mut().for_each(|v| *v = *v * s);
    }

    /// `self += s * other`
    pub fn add_scaled(&mut self, other: &Mat<F>, s: F) -> Result<()> {
        self.check_same_shape(other)?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + s * b;
        }
        Ok(())
    }

    pub fn check_same_shape(&self, other: &Mat<F>) -> Result<()> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::Shape(format!(
                "{}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(())
    }

    /// Stack matrices with equal column counts on top of each other.
    pub fn vstack(parts: &[&Mat<F>]) -> Result<Mat<F>> {
        let cols = parts.first().map_or(0, |m| m.cols);
        let mut data = Vec::new();
        let mut rows = 0;
        for m in parts {
            if m.cols != cols && m.rows > 0 {
                return Err(Error::Shape(format!("vstack {} vs {cols} columns", m.cols)));
            }
            rows += m.rows;
            data.extend_from_slice(&m.data);
        }
        Ok(Mat { rows, cols, data })
    }

    /// Copy rows `start..start+count` into a new matrix.
    pub fn slice_rows(&self, start: usize, count: usize) -> Mat<F> {
        Mat {
            rows: count,
            cols: self.cols,
            data: self.data[start * self.cols..(start + count) * self.cols].to_vec(),
        }
    }

    pub fn gather_rows(&self, idx: &[usize]) -> Mat<F> {
        let mut out = Mat::zeros(idx.len(), self.cols);
        for (k, &i) in idx.iter().enumerate() {
            out.row_mut(k).copy_from_slice(self.row(i));
        }
        out
    }

    pub fn cast<G: Real>(&self) -> Mat<G> {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| G::of(v.as_f64())).collect(),
        }
    }
}

#[inline]
pub fn dot<F: Real>(a: &[F], b: &[F]) -> F {
    a.iter().zip(b).fold(F::zero(), |acc, (&x, &y)| acc + x * y)
}

#[inline]
pub fn norm<F: Real>(a: &[F]) -> F {
    dot(a, a).sqrt()
}

/// `out[i] += s * x[i]`
#[inline]
pub fn axpy<F: Real>(out: &mut [F], s: F, x: &[F]) {
    for (o, &v) in out.iter_mut().zip(x) {
        *o = *o + s * v;
    }
}
