//! Cartesian ↔ polar view of the latent pairs.
//!
//! The regularized radial quantity is the squared radius `rho = x² + y²`;
//! its derivative stays well behaved at the origin, unlike `sqrt`.

use std::f64::consts::{PI, TAU};

use crate::error::{shape_err, Error, Result};
use crate::nn::{Backward, Graph, Tensor, Var};

/// Guard added to `x² + y²` in the angle derivative.
pub const ORIGIN_EPS: f64 = 1e-8;

/// Latent minibatch in both coordinate systems, each matrix `S × d`.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentBatch {
    pub x: Tensor,
    pub y: Tensor,
    pub rho: Tensor,
    pub phi: Tensor,
}

impl LatentBatch {
    /// Derives `rho` and `phi` from Cartesian heads.
    pub fn from_cartesian(x: Tensor, y: Tensor) -> Result<Self> {
        check_pair(&x, &y, "to_polar")?;
        let (rho, phi) = polar_values(x.values(), y.values());
        let shape = x.shape().to_vec();
        Ok(Self { rho: Tensor::new(&shape, rho)?, phi: Tensor::new(&shape, phi)?, x, y })
    }

    pub fn batch_size(&self) -> usize {
        self.x.shape()[0]
    }

    pub fn dims(&self) -> usize {
        self.x.shape()[1]
    }
}

fn check_pair(x: &Tensor, y: &Tensor, op: &'static str) -> Result<()> {
    if x.shape().len() != 2 || x.shape() != y.shape() {
        return Err(shape_err(op, format!("{:?} vs {:?}", x.shape(), y.shape())));
    }
    Ok(())
}

fn polar_values(x: &[f64], y: &[f64]) -> (Vec<f64>, Vec<f64>) {
    x.iter().zip(y).map(|(&a, &b)| (a * a + b * b, b.atan2(a))).unzip()
}

/// Maps an angle into `[-pi, pi]`; odd multiples of `pi` go to `+pi`,
/// matching `atan2(0, -1)`.
pub fn wrap_angle(phi: f64) -> f64 {
    let r = phi.rem_euclid(TAU);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

/// Inverse of the polar map: `x = sqrt(rho)·cos(phi)`, `y = sqrt(rho)·sin(phi)`.
pub fn to_cartesian(rho: &[f64], phi: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if rho.len() != phi.len() {
        return Err(shape_err("to_cartesian", format!("{} radii vs {} angles", rho.len(), phi.len())));
    }
    if let Some(&bad) = rho.iter().find(|&&r| r < 0.0) {
        return Err(Error::NegativeRho(bad));
    }
    Ok(rho
        .iter()
        .zip(phi)
        .map(|(&r, &p)| {
            let radius = r.sqrt();
            (radius * p.cos(), radius * p.sin())
        })
        .unzip())
}

struct SquaredRadius;

impl Backward for SquaredRadius {
    fn name(&self) -> &'static str {
        "rho"
    }

    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grads: &mut [Vec<f64>]) {
        let (x, y) = (inputs[0].values(), inputs[1].values());
        for (i, &g) in output.grad().iter().enumerate() {
            grads[0][i] += 2.0 * x[i] * g;
            grads[1][i] += 2.0 * y[i] * g;
        }
    }
}

struct Angle;

impl Backward for Angle {
    fn name(&self) -> &'static str {
        "phi"
    }

    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grads: &mut [Vec<f64>]) {
        let (x, y) = (inputs[0].values(), inputs[1].values());
        for (i, &g) in output.grad().iter().enumerate() {
            let denom = x[i] * x[i] + y[i] * y[i] + ORIGIN_EPS;
            grads[0][i] -= y[i] / denom * g;
            grads[1][i] += x[i] / denom * g;
        }
    }
}

/// Records `rho = x² + y²` and `phi = atan2(y, x)` on the graph.
pub fn to_polar(g: &mut Graph, x: Var, y: Var) -> Result<(Var, Var)> {
    check_pair(g.value(x), g.value(y), "to_polar")?;
    let shape = g.value(x).shape().to_vec();
    let (rho, phi) = polar_values(g.value(x).values(), g.value(y).values());
    let rho = g.push(&[x, y], Tensor::new(&shape, rho)?, Box::new(SquaredRadius));
    let phi = g.push(&[x, y], Tensor::new(&shape, phi)?, Box::new(Angle));
    Ok((rho, phi))
}
