use rand::Rng;

use super::tensor::Tensor;

/// Glorot-uniform weights in `±sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform<R: Rng>(rng: &mut R, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n = shape.iter().product();
    let values = (0..n).map(|_| rng.gen_range(-limit..=limit)).collect();
    Tensor::new(shape, values).expect("shape product matches")
}
