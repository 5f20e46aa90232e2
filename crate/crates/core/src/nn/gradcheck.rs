//! Central finite-difference checking of analytic gradients.

use rand::seq::index::sample;
use rand::Rng;

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::Result;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Worst per-input relative error `‖a − n‖∞ / max(‖a‖∞, ‖n‖∞)`.
    pub max_rel_error: f64,
    /// Number of coordinates compared.
    pub checked: usize,
    /// Distance of the base point from the nearest kink/tie.
    pub kink_margin: f64,
}

/// Compares backward-pass gradients of a scalar-valued graph with central
/// differences of step `h`.
///
/// `build` receives one leaf per entry of `inputs` and must return a scalar.
/// With `max_coords = Some(k)`, at most `k` randomly chosen coordinates of
/// each input are perturbed.
pub fn check<F, R>(inputs: &[Tensor], h: f64, max_coords: Option<usize>, rng: &mut R, build: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
    R: Rng,
{
    let eval = |tensors: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let leaves: Vec<Var> = tensors.iter().map(|t| g.input(t.clone())).collect();
        let root = build(&mut g, &leaves)?;
        Ok(g.value(root).item())
    };

    let mut g = Graph::new();
    let leaves: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let root = build(&mut g, &leaves)?;
    g.backward(root);
    let kink_margin = g.kink_margin();

    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let mut work = inputs.to_vec();
    for (i, leaf) in leaves.iter().enumerate() {
        let analytic = g.grad(*leaf);
        let n = analytic.len();
        let coords: Vec<usize> = match max_coords {
            Some(k) if k < n => sample(rng, n, k).into_vec(),
            _ => (0..n).collect(),
        };
        let (mut diff, mut scale): (f64, f64) = (0.0, 0.0);
        for &c in &coords {
            let x0 = inputs[i].values()[c];
            work[i].values_mut()[c] = x0 + h;
            let up = eval(&work)?;
            work[i].values_mut()[c] = x0 - h;
            let down = eval(&work)?;
            work[i].values_mut()[c] = x0;
            let numeric = (up - down) / (2.0 * h);
            diff = diff.max((numeric - analytic[c]).abs());
            scale = scale.max(numeric.abs()).max(analytic[c].abs());
        }
        checked += coords.len();
        if scale > 0.0 {
            worst = worst.max(diff / scale);
        }
    }
    Ok(GradCheckReport { max_rel_error: worst, checked, kink_margin })
}
