use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tape::{Tape, Var};
use super::tensor::Matrix;
use super::TranscendError;

/// Ordered named parameter blocks of one component.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    names: Vec<String>,
    values: Vec<Matrix>,
}

impl ParamSet {
    pub fn push(&mut self, name: impl Into<String>, value: Matrix) {
        self.names.push(name.into());
        self.values.push(value);
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn blocks(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.index(name).map(|i| &self.values[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Matrix> {
        self.index(name).map(|i| &mut self.values[i])
    }

    pub fn block_count(&self) -> usize {
        self.values.len()
    }

    /// Total number of scalars.
    pub fn size(&self) -> usize {
        self.values.iter().map(Matrix::len).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.values.iter().flat_map(|m| m.data.iter().copied()).collect()
    }

    pub fn assign(&mut self, flat: &[f64]) -> Result<(), TranscendError> {
        if flat.len() != self.size() {
            return Err(TranscendError::Shape(format!("{} values for {} parameters", flat.len(), self.size())));
        }
        let mut off = 0;
        for m in &mut self.values {
            let n = m.len();
            m.data.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    /// Parameter-wise copy from a set with the same layout.
    pub fn copy_from(&mut self, other: &ParamSet) -> Result<(), TranscendError> {
        if self.names != other.names || self.values.iter().zip(&other.values).any(|(a, b)| a.shape() != b.shape()) {
            return Err(TranscendError::Shape("parameter layouts differ".into()));
        }
        self.values.clone_from(&other.values);
        Ok(())
    }

    /// Leaves on `tape`, in block order.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        Bound { vars: self.values.iter().map(|m| tape.leaf(m.clone())).collect() }
    }
}

/// Tape handles for a bound [`ParamSet`], in block order.
#[derive(Debug, Clone)]
pub struct Bound {
    pub vars: Vec<Var>,
}

impl Bound {
    /// Concatenated gradient in block order; blocks the loss does not reach
    /// contribute zeros.
    pub fn grads(&self, tape: &Tape, set: &ParamSet) -> Vec<f64> {
        let mut out = Vec::with_capacity(set.size());
        for (v, m) in self.vars.iter().zip(&set.values) {
            match tape.grad(*v) {
                Some(g) => out.extend_from_slice(g),
                None => out.extend(std::iter::repeat_n(0.0, m.len())),
            }
        }
        out
    }
}

/// Uniform init with variance `1 / fan_in`, values rounded to f32.
pub(crate) fn init_weight<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Matrix {
    let a = (3.0 / rows as f64).sqrt();
    Matrix { rows, cols, data: (0..rows * cols).map(|_| round_f32(rng.gen_range(-a..a))).collect() }
}

pub(crate) fn filled(rows: usize, cols: usize, v: f64) -> Matrix {
    Matrix { rows, cols, data: vec![v; rows * cols] }
}

pub fn round_f32(v: f64) -> f64 {
    v as f32 as f64
}
