//! Batch-sorted distribution losses for the polar latent.
//!
//! Both losses sort every latent dimension along the batch axis and compare
//! the order statistics with a target: the spring loss with equal spacing on
//! the circle, the quantile loss with quantiles of a normal distribution.
//! The sort permutation is a constant of the forward pass; gradients are
//! routed through it unchanged.

mod special;

use std::collections::hash_map::Entry;
use std::collections::HashMap;
use std::f64::consts::{PI, SQRT_2, TAU};

pub use special::{erf, erf_inv, erfc, erfc_inv};

use crate::error::{shape_err, Error, Result};
use crate::nn::{Backward, Graph, Tensor, Var};

/// Slack allowed on the `[-pi, pi]` range check of the spring loss.
pub const ANGLE_SLACK: f64 = 1e-9;

/// Per-column ascending order of an `S × d` matrix (0-based batch indices).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SortPermutation {
    columns: Vec<Vec<usize>>,
}

impl SortPermutation {
    /// Order of column `i`: `column(i)[s]` is the batch row holding the
    /// `s`-th smallest value.
    pub fn column(&self, i: usize) -> &[usize] {
        &self.columns[i]
    }

    pub fn dims(&self) -> usize {
        self.columns.len()
    }
}

/// Sorts each column of a row-major `rows × cols` matrix independently.
/// Ties keep their original batch order.
pub fn sort_columns(values: &[f64], rows: usize, cols: usize) -> (Vec<f64>, SortPermutation) {
    assert_eq!(values.len(), rows * cols, "sort_columns: matrix size");
    let mut sorted = vec![0.0; values.len()];
    let mut columns = Vec::with_capacity(cols);
    for i in 0..cols {
        let mut order: Vec<usize> = (0..rows).collect();
        order.sort_by(|&a, &b| values[a * cols + i].total_cmp(&values[b * cols + i]));
        for (s, &r) in order.iter().enumerate() {
            sorted[s * cols + i] = values[r * cols + i];
        }
        columns.push(order);
    }
    (sorted, SortPermutation { columns })
}

fn matrix_dims(t: &Tensor, op: &'static str) -> Result<(usize, usize)> {
    match *t.shape() {
        [s, d] => Ok((s, d)),
        _ => Err(shape_err(op, format!("expected S × d matrix, got {:?}", t.shape()))),
    }
}

/// Smallest gap between neighbouring sorted values over all columns.
fn tie_margin(sorted: &[f64], rows: usize, cols: usize) -> f64 {
    let mut margin = f64::INFINITY;
    for s in 1..rows {
        for i in 0..cols {
            margin = margin.min(sorted[s * cols + i] - sorted[(s - 1) * cols + i]);
        }
    }
    margin
}

// ---------------------------------------------------------------------------
// spring loss

struct SpringLoss {
    rows: usize,
    cols: usize,
    sorted: Vec<f64>,
    perm: SortPermutation,
}

impl Backward for SpringLoss {
    fn name(&self) -> &'static str {
        "spring_loss"
    }

    fn backward(&self, _inputs: &[&Tensor], output: &Tensor, grads: &mut [Vec<f64>]) {
        let upstream = output.grad()[0];
        let (rows, cols) = (self.rows, self.cols);
        for i in 0..cols {
            let order = self.perm.column(i);
            let v = |s: usize| self.sorted[s * cols + i];
            let mut local = vec![0.0; rows];
            let wrap = v(0) + TAU - v(rows - 1);
            local[0] += 2.0 * wrap;
            local[rows - 1] -= 2.0 * wrap;
            for s in 0..rows - 1 {
                let gap = v(s) - v(s + 1);
                local[s] += 2.0 * gap;
                local[s + 1] -= 2.0 * gap;
            }
            for (s, &r) in order.iter().enumerate() {
                grads[0][r * cols + i] += upstream * local[s];
            }
        }
    }

    fn kink_margin(&self, _inputs: &[&Tensor], _output: &Tensor) -> f64 {
        tie_margin(&self.sorted, self.rows, self.cols)
    }
}

/// Circular spring loss of an `S × d` angle matrix with entries in `[-pi, pi]`.
///
/// Per column, with `v` the ascending order statistics:
/// `(v_1 + 2pi - v_S)² + Σ_s (v_s - v_{s+1})²`, summed over columns.
/// For fixed `S` the minimum `4pi²/S` per column is reached exactly at
/// equal spacing.
pub fn spring_loss(g: &mut Graph, phi: Var) -> Result<Var> {
    let (rows, cols) = matrix_dims(g.value(phi), "spring_loss")?;
    let values = g.value(phi).values();
    if let Some((k, &value)) = values
        .iter()
        .enumerate()
        .find(|(_, v)| !(v.abs() <= PI + ANGLE_SLACK))
    {
        return Err(Error::AngleOutOfRange { row: k / cols, col: k % cols, value });
    }
    let (sorted, perm) = sort_columns(values, rows, cols);
    let mut loss = 0.0;
    for i in 0..cols {
        let v = |s: usize| sorted[s * cols + i];
        let wrap = v(0) + TAU - v(rows - 1);
        loss += wrap * wrap;
        for s in 0..rows - 1 {
            let gap = v(s) - v(s + 1);
            loss += gap * gap;
        }
    }
    let op = SpringLoss { rows, cols, sorted, perm };
    Ok(g.push(&[phi], Tensor::scalar(loss), Box::new(op)))
}

// ---------------------------------------------------------------------------
// quantile targets

/// Inverse CDF of `N(mean, std)`: `mean + sqrt(2)·std·erf⁻¹(2p - 1)`.
///
/// Evaluated as `mean - sqrt(2)·std·erfc⁻¹(2p)` so both tails keep full
/// relative precision.
pub fn inverse_normal_cdf(p: f64, mean: f64, std: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::ProbabilityOutOfRange(p));
    }
    Ok(mean - SQRT_2 * std * erfc_inv(2.0 * p))
}

/// Mid-point quantiles `q_s = CDF⁻¹((s - 1/2) / S)` of `N(mean, std)`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantileTargets {
    values: Vec<f64>,
    mean: f64,
    std: f64,
}

impl QuantileTargets {
    pub fn new(batch_size: usize, mean: f64, std: f64) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::Config("quantile targets need a batch size of at least 1".into()));
        }
        if !(std > 0.0) {
            return Err(Error::Config(format!("target std must be positive, got {std}")));
        }
        let n = batch_size as f64;
        let values = (1..=batch_size)
            .map(|s| inverse_normal_cdf((s as f64 - 0.5) / n, mean, std))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { values, mean, std })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn std(&self) -> f64 {
        self.std
    }
}

/// Memo of [`QuantileTargets`] keyed by `(S, mean, std)`.
#[derive(Debug, Default)]
pub struct QuantileCache {
    entries: HashMap<(usize, u64, u64), QuantileTargets>,
}

impl QuantileCache {
    pub fn get(&mut self, batch_size: usize, mean: f64, std: f64) -> Result<&QuantileTargets> {
        let key = (batch_size, mean.to_bits(), std.to_bits());
        match self.entries.entry(key) {
            Entry::Occupied(e) => Ok(e.into_mut()),
            Entry::Vacant(e) => Ok(e.insert(QuantileTargets::new(batch_size, mean, std)?)),
        }
    }
}

// ---------------------------------------------------------------------------
// quantile loss

struct QuantileLoss {
    rows: usize,
    cols: usize,
    sorted: Vec<f64>,
    perm: SortPermutation,
    targets: Vec<f64>,
}

impl Backward for QuantileLoss {
    fn name(&self) -> &'static str {
        "quantile_loss"
    }

    fn backward(&self, _inputs: &[&Tensor], output: &Tensor, grads: &mut [Vec<f64>]) {
        let upstream = output.grad()[0];
        for i in 0..self.cols {
            for (s, &r) in self.perm.column(i).iter().enumerate() {
                let residual = self.sorted[s * self.cols + i] - self.targets[s];
                grads[0][r * self.cols + i] += upstream * 2.0 * residual;
            }
        }
    }

    fn kink_margin(&self, _inputs: &[&Tensor], _output: &Tensor) -> f64 {
        tie_margin(&self.sorted, self.rows, self.cols)
    }
}

/// `Σ_i Σ_s (v_{i,s} - q_s)²` over ascending order statistics `v` of each
/// column of an `S × d` matrix.
pub fn quantile_loss(g: &mut Graph, rho: Var, targets: &QuantileTargets) -> Result<Var> {
    let (rows, cols) = matrix_dims(g.value(rho), "quantile_loss")?;
    if targets.len() != rows {
        return Err(shape_err(
            "quantile_loss",
            format!("{} targets for a batch of {rows}", targets.len()),
        ));
    }
    let (sorted, perm) = sort_columns(g.value(rho).values(), rows, cols);
    let mut loss = 0.0;
    for s in 0..rows {
        for i in 0..cols {
            let r = sorted[s * cols + i] - targets.values[s];
            loss += r * r;
        }
    }
    let op = QuantileLoss { rows, cols, sorted, perm, targets: targets.values.clone() };
    Ok(g.push(&[rho], Tensor::scalar(loss), Box::new(op)))
}
