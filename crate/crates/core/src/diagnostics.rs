//! Latent-space statistics: angular uniformity, radius moments and
//! cross-coordinate correlation, plus CSV export for scatter plots.

use std::f64::consts::{PI, TAU};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::nn::Tensor;
use crate::polar::LatentBatch;

/// Kolmogorov–Smirnov distance between the empirical CDF of `angles` and
/// the uniform CDF on `[-pi, pi]`.
pub fn ks_uniform(angles: &[f64]) -> f64 {
    let mut v = angles.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, &a)| {
            let f = ((a + PI) / TAU).clamp(0.0, 1.0);
            ((i + 1) as f64 / n - f).max(f - i as f64 / n)
        })
        .fold(0.0, f64::max)
}

/// Pearson correlation between the columns of an `S × m` matrix. Pairs
/// involving a constant column are 0; the diagonal is always 1.
pub fn correlation_matrix(data: &Tensor) -> Result<Tensor> {
    let [s, m] = *data.shape() else {
        return Err(shape_err("correlation_matrix", format!("expected a matrix, got {:?}", data.shape())));
    };
    let v = data.values();
    let mut centred = vec![0.0; s * m];
    let mut norms = vec![0.0; m];
    for j in 0..m {
        let mean = (0..s).map(|i| v[i * m + j]).sum::<f64>() / s as f64;
        for i in 0..s {
            centred[i * m + j] = v[i * m + j] - mean;
        }
        norms[j] = (0..s).map(|i| centred[i * m + j].powi(2)).sum::<f64>().sqrt();
    }
    let mut out = vec![0.0; m * m];
    for a in 0..m {
        out[a * m + a] = 1.0;
        for b in a + 1..m {
            let r = if norms[a] > 0.0 && norms[b] > 0.0 {
                let dot: f64 = (0..s).map(|i| centred[i * m + a] * centred[i * m + b]).sum();
                (dot / (norms[a] * norms[b])).clamp(-1.0, 1.0)
            } else {
                0.0
            };
            out[a * m + b] = r;
            out[b * m + a] = r;
        }
    }
    Tensor::new(&[m, m], out)
}

/// Cartesian latents interleaved as `x1, y1, x2, y2, …`.
pub fn interleaved_cartesian(latents: &LatentBatch) -> Result<Tensor> {
    let (s, d) = (latents.batch_size(), latents.dims());
    let mut out = Vec::with_capacity(s * 2 * d);
    for i in 0..s {
        for (x, y) in latents.x.row(i).iter().zip(latents.y.row(i)) {
            out.extend([*x, *y]);
        }
    }
    Tensor::new(&[s, 2 * d], out)
}

fn sig12(v: f64) -> String {
    format!("{v:.11e}")
}

/// CSV with header `x1,y1,…,xd,yd,r1..rd,phi1..phid,label`; `r` is the
/// radius `sqrt(rho)`.
pub fn scatter_csv(latents: &LatentBatch, labels: &[usize]) -> Result<String> {
    let (s, d) = (latents.batch_size(), latents.dims());
    if labels.len() != s {
        return Err(shape_err("scatter_export", format!("{s} latents vs {} labels", labels.len())));
    }
    let mut out = String::new();
    let mut header: Vec<String> = (1..=d).flat_map(|i| [format!("x{i}"), format!("y{i}")]).collect();
    header.extend((1..=d).map(|i| format!("r{i}")));
    header.extend((1..=d).map(|i| format!("phi{i}")));
    header.push("label".into());
    out.push_str(&header.join(","));
    out.push('\n');
    for (i, label) in labels.iter().enumerate() {
        let mut cells = Vec::with_capacity(4 * d + 1);
        for (x, y) in latents.x.row(i).iter().zip(latents.y.row(i)) {
            cells.extend([sig12(*x), sig12(*y)]);
        }
        cells.extend(latents.rho.row(i).iter().map(|r| sig12(r.sqrt())));
        cells.extend(latents.phi.row(i).iter().map(|p| sig12(*p)));
        cells.push(label.to_string());
        let _ = writeln!(out, "{}", cells.join(","));
    }
    Ok(out)
}

pub fn scatter_export(latents: &LatentBatch, labels: &[usize], path: &Path) -> Result<()> {
    fs::write(path, scatter_csv(latents, labels)?)?;
    Ok(())
}

/// Summary of an encoded sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentReport {
    pub samples: usize,
    /// KS distance of each angle column from uniform on `[-pi, pi]`.
    pub ks: Vec<f64>,
    pub rho_mean: Vec<f64>,
    pub rho_std: Vec<f64>,
    /// Correlations over `x1, y1, …, xd, yd`, row-major `2d × 2d`.
    pub correlation: Vec<Vec<f64>>,
}

impl LatentReport {
    pub fn new(latents: &LatentBatch) -> Result<Self> {
        let (s, d) = (latents.batch_size(), latents.dims());
        let column = |t: &Tensor, j: usize| (0..s).map(|i| t.values()[i * d + j]).collect::<Vec<_>>();
        let ks = (0..d).map(|j| ks_uniform(&column(&latents.phi, j))).collect();
        let (mut rho_mean, mut rho_std) = (Vec::with_capacity(d), Vec::with_capacity(d));
        for j in 0..d {
            let c = column(&latents.rho, j);
            let mean = c.iter().sum::<f64>() / s as f64;
            let var = c.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / s as f64;
            rho_mean.push(mean);
            rho_std.push(var.sqrt());
        }
        let corr = correlation_matrix(&interleaved_cartesian(latents)?)?;
        let correlation = corr.values().chunks(2 * d).map(<[f64]>::to_vec).collect();
        Ok(Self { samples: s, ks, rho_mean, rho_std, correlation })
    }

    /// Aligned plain-text rendering.
    pub fn to_text(&self) -> String {
        let d = self.ks.len();
        let mut out = format!("samples: {}\n\n  dim        KS   rho mean    rho std\n", self.samples);
        for j in 0..d {
            let _ = writeln!(out, "{:>5} {:>9.4} {:>10.4} {:>10.4}", j + 1, self.ks[j], self.rho_mean[j], self.rho_std[j]);
        }
        out.push_str("\ncorrelation (x1 y1 x2 y2 ...):\n     ");
        let names: Vec<String> = (1..=d).flat_map(|i| [format!("x{i}"), format!("y{i}")]).collect();
        for n in &names {
            let _ = write!(out, "{n:>7}");
        }
        out.push('\n');
        for (n, row) in names.iter().zip(&self.correlation) {
            let _ = write!(out, "{n:>5}");
            for v in row {
                let _ = write!(out, "{v:>7.3}");
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_xoshiro::Xoshiro256PlusPlus;

    fn batch(x: Vec<f64>, y: Vec<f64>, d: usize) -> LatentBatch {
        let s = x.len() / d;
        LatentBatch::from_cartesian(Tensor::new(&[s, d], x).unwrap(), Tensor::new(&[s, d], y).unwrap()).unwrap()
    }

    #[test]
    fn ks_degenerate_and_quantile_positions() {
        assert_eq!(ks_uniform(&[-PI; 20]), 1.0);
        for s in [1usize, 5, 64] {
            let pts: Vec<f64> = (1..=s).map(|i| -PI + TAU * (i as f64 - 0.5) / s as f64).collect();
            assert!((ks_uniform(&pts) - 0.5 / s as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn ks_of_many_uniform_samples_is_small() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(21);
        let v: Vec<f64> = (0..10_000).map(|_| rng.gen_range(-PI..PI)).collect();
        assert!(ks_uniform(&v) < 0.02);
    }

    #[test]
    fn correlation_conventions() {
        let t = Tensor::from_rows(&[vec![1.0, 1.0, 5.0], vec![2.0, 2.0, 5.0], vec![4.0, 4.0, 5.0]]).unwrap();
        let c = correlation_matrix(&t).unwrap();
        assert!((c.values()[1] - 1.0).abs() < 1e-12);
        assert_eq!(c.values()[2], 0.0);
        assert_eq!(c.values()[5], 0.0);
        assert_eq!([c.values()[0], c.values()[4], c.values()[8]], [1.0; 3]);
    }

    #[test]
    fn independent_columns_are_weakly_correlated() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(22);
        let s = 4000;
        let v: Vec<f64> = (0..s * 4).map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 }).collect();
        let c = correlation_matrix(&Tensor::new(&[s, 4], v).unwrap()).unwrap();
        for a in 0..4 {
            for b in 0..4 {
                if a != b {
                    assert!(c.values()[a * 4 + b].abs() < 3.0 / (s as f64).sqrt());
                }
            }
        }
    }

    #[test]
    fn scatter_single_sample() {
        let csv = scatter_csv(&batch(vec![3.0], vec![4.0], 1), &[7]).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "x1,y1,r1,phi1,label");
        assert_eq!(lines.len(), 2);
        let cells: Vec<f64> = lines[1].split(',').map(|c| c.parse().unwrap()).collect();
        assert_eq!(cells.len(), 5);
        assert_eq!(cells[2], 5.0);
        assert_eq!(cells[4], 7.0);
    }

    #[test]
    fn scatter_header_for_three_dims() {
        let b = batch(vec![0.1; 6], vec![0.2; 6], 3);
        let csv = scatter_csv(&b, &[0, 1]).unwrap();
        assert_eq!(csv.lines().next().unwrap(), "x1,y1,x2,y2,x3,y3,r1,r2,r3,phi1,phi2,phi3,label");
        assert_eq!(csv.lines().nth(1).unwrap().split(',').count(), 13);
        assert!(scatter_csv(&b, &[0]).is_err());
    }

    #[test]
    fn report_round_trips_through_json() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(23);
        let x: Vec<f64> = (0..300).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..300).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let r = LatentReport::new(&batch(x, y, 3)).unwrap();
        assert_eq!(r.ks.len(), 3);
        assert_eq!(r.correlation.len(), 6);
        let back: LatentReport = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
        assert_eq!(back, r);
        assert!(r.to_text().contains("correlation"));
    }

    proptest! {
        #[test]
        fn scatter_values_round_trip(vals in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 2..12)) {
            let (mut x, mut y): (Vec<f64>, Vec<f64>) = vals.into_iter().unzip();
            x.truncate(x.len() / 2 * 2);
            y.truncate(x.len());
            let b = batch(x.clone(), y.clone(), 2);
            let labels: Vec<usize> = (0..b.batch_size()).collect();
            let csv = scatter_csv(&b, &labels).unwrap();
            for (i, line) in csv.lines().skip(1).enumerate() {
                let cells: Vec<f64> = line.split(',').map(|c| c.parse().unwrap()).collect();
                for j in 0..2 {
                    prop_assert!((cells[2 * j] - x[i * 2 + j]).abs() <= 1e-9);
                    prop_assert!((cells[2 * j + 1] - y[i * 2 + j]).abs() <= 1e-9);
                    prop_assert!(cells[6 + j].abs() <= PI);
                }
            }
        }

        #[test]
        fn ks_in_unit_interval_and_order_free(mut v in prop::collection::vec(-PI..=PI, 1..50)) {
            let k = ks_uniform(&v);
            prop_assert!((0.0..=1.0).contains(&k));
            v.reverse();
            prop_assert_eq!(ks_uniform(&v), k);
        }

        #[test]
        fn correlation_symmetric_unit_diagonal(v in prop::collection::vec(-3.0f64..3.0, 12..40)) {
            let s = v.len() / 3;
            let t = Tensor::new(&[s, 3], v[..s * 3].to_vec()).unwrap();
            let c = correlation_matrix(&t).unwrap();
            for a in 0..3 {
                prop_assert_eq!(c.values()[a * 4], 1.0);
                for b in 0..3 {
                    prop_assert_eq!(c.values()[a * 3 + b], c.values()[b * 3 + a]);
                    prop_assert!(c.values()[a * 3 + b].abs() <= 1.0);
                }
            }
        }
    }
}
