//! Minibatch Adam training and held-out evaluation.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::diagnostics::ks_uniform;
use crate::error::{Error, Result};
use crate::mnist::IdxDataset;
use crate::model::{argmax_rows, TaeModel};
use crate::nn::{AdamState, Graph, Tensor};
use crate::polar::LatentBatch;
use crate::regularizers::QuantileTargets;

/// Batches smaller than this make the sorted-sample losses very noisy.
pub const SMALL_BATCH_WARNING: usize = 8;

/// Epoch means of the unweighted loss terms and the training-batch accuracy
/// of the auxiliary classifier.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss_rec: f64,
    pub loss_spring: f64,
    pub loss_quant: f64,
    pub loss_cls: f64,
    pub cls_accuracy: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub records: Vec<EpochRecord>,
}

impl TrainingLog {
    pub const CSV_HEADER: &'static str = "epoch,loss_rec,loss_spring,loss_quant,loss_cls,cls_accuracy";

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.epoch, r.loss_rec, r.loss_spring, r.loss_quant, r.loss_cls, r.cls_accuracy
            );
        }
        out
    }
}

/// Result of one optimisation step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepStats {
    pub total: f64,
    pub rec: f64,
    pub spring: f64,
    pub quant: f64,
    pub cls: f64,
    pub correct: usize,
}

/// Owns the optimiser state and the precomputed quantile targets.
pub struct Trainer {
    adam: AdamState,
    targets: QuantileTargets,
    steps: usize,
}

impl Trainer {
    pub fn new(model: &TaeModel) -> Result<Self> {
        let cfg = model.config();
        if cfg.batch_size < SMALL_BATCH_WARNING {
            log::warn!(
                "batch size {} is below {SMALL_BATCH_WARNING}; spring and quantile losses will be noisy",
                cfg.batch_size
            );
        }
        Ok(Self {
            adam: AdamState::new(cfg.adam(), model.params()),
            targets: model.quantile_targets(cfg.batch_size)?,
            steps: 0,
        })
    }

    /// Forward, backward and one Adam update on a single batch.
    pub fn step(&mut self, model: &mut TaeModel, images: &Tensor, labels: &[usize], epoch: usize) -> Result<StepStats> {
        let mut g = Graph::new();
        let fwd = model.forward(&mut g, images)?;
        // The sorted losses reject NaN angles outright, so catch a blown-up
        // forward pass here and name the term it would have poisoned.
        for (term, v) in [
            ("reconstruction", fwd.recon),
            ("spring", fwd.phi),
            ("quantile", fwd.rho),
            ("classifier", fwd.logits),
        ] {
            if !g.value(v).is_finite() {
                return Err(Error::NonFinite { term, epoch, step: self.steps });
            }
        }
        let vars = model.loss_graph(&mut g, &fwd, images, labels, &self.targets)?;
        let stats = StepStats {
            total: g.value(vars.total).item(),
            rec: g.value(vars.rec).item(),
            spring: g.value(vars.spring).item(),
            quant: g.value(vars.quant).item(),
            cls: g.value(vars.cls).item(),
            correct: argmax_rows(g.value(fwd.logits)).iter().zip(labels).filter(|(p, l)| p == l).count(),
        };
        for (term, v) in [
            ("reconstruction", stats.rec),
            ("spring", stats.spring),
            ("quantile", stats.quant),
            ("classifier", stats.cls),
            ("total", stats.total),
        ] {
            if !v.is_finite() {
                return Err(Error::NonFinite { term, epoch, step: self.steps });
            }
        }
        model.params_mut().zero_grad();
        g.backward(vars.total);
        g.accumulate_param_grads(model.params_mut());
        self.adam.step(model.params_mut());
        self.steps += 1;
        Ok(stats)
    }

    pub fn steps(&self) -> usize {
        self.steps
    }
}

/// Trains for `config.epochs` epochs, calling `on_epoch` after each one.
pub fn train(
    model: &mut TaeModel,
    data: &IdxDataset,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainingLog> {
    let (s, epochs, seed) = (model.config().batch_size, model.config().epochs, model.config().seed);
    if data.len() < s {
        return Err(Error::Config(format!("dataset has {} samples, fewer than batch size {s}", data.len())));
    }
    let mut trainer = Trainer::new(model)?;
    let mut log = TrainingLog::default();
    for epoch in 0..epochs {
        let mut sums = [0.0; 4];
        let (mut correct, mut seen, mut batches) = (0, 0, 0);
        for batch in data.batches(s, seed, epoch as u64) {
            let st = trainer.step(model, &batch.images, &batch.labels, epoch)?;
            for (acc, v) in sums.iter_mut().zip([st.rec, st.spring, st.quant, st.cls]) {
                *acc += v;
            }
            correct += st.correct;
            seen += batch.labels.len();
            batches += 1;
        }
        let n = batches as f64;
        let record = EpochRecord {
            epoch: epoch + 1,
            loss_rec: sums[0] / n,
            loss_spring: sums[1] / n,
            loss_quant: sums[2] / n,
            loss_cls: sums[3] / n,
            cls_accuracy: correct as f64 / seen as f64,
        };
        log::info!(
            "epoch {:>3}: rec {:.5} spring {:.4} quant {:.5} cls {:.4} acc {:.3}",
            record.epoch,
            record.loss_rec,
            record.loss_spring,
            record.loss_quant,
            record.loss_cls,
            record.cls_accuracy
        );
        on_epoch(&record);
        log.records.push(record);
    }
    Ok(log)
}

/// Held-out metrics, computed in fixed-size chunks in dataset order.
#[derive(Clone, Debug)]
pub struct Evaluation {
    /// Per-pixel reconstruction MSE.
    pub mse: f64,
    pub accuracy: f64,
    pub latents: LatentBatch,
    pub labels: Vec<usize>,
}

impl Evaluation {
    pub fn ks(&self) -> Vec<f64> {
        let (s, d) = (self.latents.batch_size(), self.latents.dims());
        let phi = self.latents.phi.values();
        (0..d).map(|j| ks_uniform(&(0..s).map(|i| phi[i * d + j]).collect::<Vec<_>>())).collect()
    }

    pub fn rho_mean(&self) -> f64 {
        let rho = self.latents.rho.values();
        rho.iter().sum::<f64>() / rho.len() as f64
    }
}

pub fn evaluate(model: &TaeModel, data: &IdxDataset, chunk: usize) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(Error::Config("cannot evaluate on an empty dataset".into()));
    }
    let chunk = chunk.max(1);
    let d = model.config().d;
    let (mut sq, mut pixels, mut correct) = (0.0, 0usize, 0usize);
    let (mut xs, mut ys) = (Vec::with_capacity(data.len() * d), Vec::with_capacity(data.len() * d));
    let mut labels = Vec::with_capacity(data.len());
    for start in (0..data.len()).step_by(chunk) {
        let idx: Vec<usize> = (start..(start + chunk).min(data.len())).collect();
        let part = data.select(&idx);
        let lat = model.encode(&part.images)?;
        let recon = model.decode(&lat.x, &lat.y)?;
        sq += recon.values().iter().zip(part.images.values()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        pixels += recon.len();
        let pred = argmax_rows(&model.classify(&lat.phi)?);
        correct += pred.iter().zip(&part.labels).filter(|(p, &l)| **p == l as usize).count();
        xs.extend_from_slice(lat.x.values());
        ys.extend_from_slice(lat.y.values());
        labels.extend(part.labels.iter().map(|&l| l as usize));
    }
    let n = labels.len();
    let latents = LatentBatch::from_cartesian(Tensor::new(&[n, d], xs)?, Tensor::new(&[n, d], ys)?)?;
    Ok(Evaluation { mse: sq / pixels as f64, accuracy: correct as f64 / n as f64, latents, labels })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Arch, TaeConfig};

    fn toy_data(n: usize) -> IdxDataset {
        let mut v = Vec::with_capacity(n * 784);
        for i in 0..n {
            for p in 0..784 {
                let (r, c) = (p / 28, p % 28);
                let on = (r + i) % 7 < 3 || (c * (i % 5 + 1)) % 11 < 2;
                v.push(if on { 0.9 } else { 0.05 });
            }
        }
        let images = Tensor::new(&[n, 1, 28, 28], v).unwrap();
        IdxDataset::new(images, (0..n).map(|i| (i % 10) as u8).collect()).unwrap()
    }

    fn cfg() -> TaeConfig {
        TaeConfig {
            arch: Arch::Dense,
            d: 2,
            batch_size: 16,
            encoder_width: 16,
            dense_hidden: 32,
            classifier_hidden: 8,
            epochs: 1,
            seed: 5,
            ..TaeConfig::default()
        }
    }

    #[test]
    fn all_zero_weights_leave_parameters_unchanged() {
        let c = TaeConfig { lambda_rec: 0.0, lambda_spring: 0.0, lambda_quant: 0.0, lambda_cls: 0.0, ..cfg() };
        let mut m = TaeModel::new(c).unwrap();
        let before = m.clone();
        let log = train(&mut m, &toy_data(64), |_| {}).unwrap();
        assert_eq!(log.records.len(), 1);
        assert_eq!(m, before);
    }

    #[test]
    fn reconstruction_only_training_overfits() {
        let c = TaeConfig { lambda_spring: 0.0, lambda_quant: 0.0, lambda_cls: 0.0, learning_rate: 3e-3, ..cfg() };
        let data = toy_data(64);
        let mut m = TaeModel::new(c).unwrap();
        let before = evaluate(&m, &data, 64).unwrap().mse;
        let mut t = Trainer::new(&m).unwrap();
        for step in 0..200 {
            let b = data.batches(16, 1, step as u64 / 4).nth(step % 4).unwrap();
            t.step(&mut m, &b.images, &b.labels, 0).unwrap();
        }
        let after = evaluate(&m, &data, 64).unwrap().mse;
        assert!(after < before, "{after} !< {before}");
    }

    #[test]
    fn training_is_deterministic_and_logs_csv() {
        let data = toy_data(48);
        let run = || {
            let mut m = TaeModel::new(TaeConfig { epochs: 2, ..cfg() }).unwrap();
            let log = train(&mut m, &data, |_| {}).unwrap();
            (m, log)
        };
        let (m1, l1) = run();
        let (m2, l2) = run();
        assert_eq!(m1, m2);
        assert_eq!(l1.to_csv(), l2.to_csv());
        let csv = l1.to_csv();
        assert!(csv.starts_with("epoch,loss_rec,loss_spring,loss_quant,loss_cls,cls_accuracy\n1,"));
        assert_eq!(csv.lines().count(), 3);
    }

    #[test]
    fn non_finite_loss_names_the_term() {
        let mut m = TaeModel::new(cfg()).unwrap();
        let mut t = Trainer::new(&m).unwrap();
        let mut images = toy_data(16).images;
        images.values_mut()[0] = f64::NAN;
        let err = t.step(&mut m, &images, &[0; 16], 3).unwrap_err();
        assert!(matches!(err, Error::NonFinite { term: "reconstruction", epoch: 3, step: 0 }), "{err}");
    }

    #[test]
    fn evaluation_covers_every_sample() {
        let data = toy_data(37);
        let m = TaeModel::new(cfg()).unwrap();
        let e = evaluate(&m, &data, 16).unwrap();
        assert_eq!(e.labels.len(), 37);
        assert_eq!(e.latents.batch_size(), 37);
        assert_eq!(e.ks().len(), 2);
        assert!(e.mse > 0.0 && (0.0..=1.0).contains(&e.accuracy));
        let whole = evaluate(&m, &data, 37).unwrap();
        assert_eq!(whole.latents, e.latents);
    }
}
