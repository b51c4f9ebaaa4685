use serde::{Deserialize, Serialize};

use super::TranscendError;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, TranscendError> {
        if data.len() != rows * cols {
            return Err(TranscendError::Shape(format!("{} values for a {rows}x{cols} matrix", data.len())));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }
}

/// Patch-level feature map of `rows x cols` cells with `dim` channels,
/// stored as a `(rows * cols) x dim` matrix in row-major cell order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureGrid {
    pub rows: usize,
    pub cols: usize,
    pub values: Matrix,
}

impl FeatureGrid {
    pub fn new(rows: usize, cols: usize, dim: usize, data: Vec<f64>) -> Result<Self, TranscendError> {
        if rows == 0 || cols == 0 || dim == 0 {
            return Err(TranscendError::Shape("feature grid dims must be positive".into()));
        }
        let values = Matrix::from_vec(rows * cols, dim, data)?;
        if !values.is_finite() {
            return Err(TranscendError::NonFinite("feature grid".into()));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn zeros(rows: usize, cols: usize, dim: usize) -> Self {
        Self { rows, cols, values: Matrix::zeros(rows * cols, dim) }
    }

    pub fn dim(&self) -> usize {
        self.values.cols
    }

    pub fn at(&self, r: usize, c: usize) -> &[f64] {
        self.values.row(r * self.cols + c)
    }

    /// Mean over all cells.
    pub fn pooled(&self) -> Vec<f64> {
        let n = self.values.rows as f64;
        let mut out = vec![0.0; self.dim()];
        for r in 0..self.values.rows {
            for (o, v) in out.iter_mut().zip(self.values.row(r)) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|o| *o /= n);
        out
    }
}

/// `steps x dim` sequence of per-frame vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSequence {
    pub values: Matrix,
}

impl FeatureSequence {
    pub fn new(steps: usize, dim: usize, data: Vec<f64>) -> Result<Self, TranscendError> {
        if steps == 0 || dim == 0 {
            return Err(TranscendError::Shape("feature sequence needs at least one step".into()));
        }
        let values = Matrix::from_vec(steps, dim, data)?;
        if !values.is_finite() {
            return Err(TranscendError::NonFinite("feature sequence".into()));
        }
        Ok(Self { values })
    }

    /// One pooled vector per grid.
    pub fn pooled(grids: &[FeatureGrid]) -> Result<Self, TranscendError> {
        let dim = grids.first().map_or(0, FeatureGrid::dim);
        let data = grids.iter().flat_map(FeatureGrid::pooled).collect();
        Self::new(grids.len(), dim, data)
    }

    pub fn steps(&self) -> usize {
        self.values.rows
    }

    pub fn dim(&self) -> usize {
        self.values.cols
    }

    pub fn step(&self, j: usize) -> &[f64] {
        self.values.row(j)
    }
}
