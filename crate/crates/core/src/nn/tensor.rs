use std::fmt;

use crate::error::{shape_err, Result};

/// Dense row-major array of `f64` with a gradient slot of the same length.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
    grad: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: &[usize], values: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if shape.contains(&0) {
            return Err(shape_err("tensor", format!("zero-sized dimension in {shape:?}")));
        }
        if n != values.len() {
            return Err(shape_err(
                "tensor",
                format!("shape {shape:?} holds {n} values, got {}", values.len()),
            ));
        }
        Ok(Self { shape: shape.to_vec(), grad: vec![0.0; n], values })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self { shape: shape.to_vec(), values: vec![0.0; n], grad: vec![0.0; n] }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let mut t = Self::zeros(shape);
        t.values.fill(value);
        t
    }

    pub fn scalar(value: f64) -> Self {
        Self { shape: vec![1], values: vec![value], grad: vec![0.0] }
    }

    /// Builds an `rows × cols` matrix from row slices.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(shape_err("tensor", "ragged rows"));
        }
        Self::new(&[rows.len(), cols], rows.concat())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn grad(&self) -> &[f64] {
        &self.grad
    }

    pub fn grad_mut(&mut self) -> &mut [f64] {
        &mut self.grad
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.values.len(), 1);
        self.values[0]
    }

    /// Same data under a new shape with equal element count.
    pub fn reshaped(&self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.len() {
            return Err(shape_err(
                "reshape",
                format!("{:?} -> {shape:?} changes element count", self.shape),
            ));
        }
        Ok(Self { shape: shape.to_vec(), values: self.values.clone(), grad: self.grad.clone() })
    }

    /// Row `r` of a tensor viewed as `shape[0] × rest`.
    pub fn row(&self, r: usize) -> &[f64] {
        let w = self.len() / self.shape[0];
        &self.values[r * w..(r + 1) * w]
    }

    /// Selects leading-axis rows by index into a new tensor.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let w = self.len() / self.shape[0];
        let mut values = Vec::with_capacity(rows.len() * w);
        for &r in rows {
            values.extend_from_slice(&self.values[r * w..(r + 1) * w]);
        }
        let mut shape = self.shape.clone();
        shape[0] = rows.len();
        Self { grad: vec![0.0; values.len()], shape, values }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().chain(&self.grad).all(|v| v.is_finite())
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const SHOWN: usize = 8;
        write!(f, "Tensor{:?} [", self.shape)?;
        for (i, v) in self.values.iter().take(SHOWN).enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{v:.6}")?;
        }
        if self.len() > SHOWN {
            write!(f, ", ... ({} more)", self.len() - SHOWN)?;
        }
        write!(f, "]")
    }
}
