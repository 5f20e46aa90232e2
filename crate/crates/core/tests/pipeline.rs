//! End-to-end checks on synthetic data: train, checkpoint, encode, morph and
//! export without touching the MNIST files.

use tae_core::checkpoint;
use tae_core::diagnostics::{scatter_csv, LatentReport};
use tae_core::mnist::IdxDataset;
use tae_core::model::{Arch, TaeConfig, TaeModel, IMAGE_SIDE};
use tae_core::morphing::{path_set, render_grid, MorphPath, PathMode, PolarPoint, DEFAULT_FRAMES};
use tae_core::nn::{Graph, Tensor, Var};
use tae_core::train::{evaluate, train};

const PIXELS: usize = IMAGE_SIDE * IMAGE_SIDE;

fn synthetic(n: usize) -> IdxDataset {
    let v = (0..n * PIXELS).map(|i| ((i as f64 * 0.731).sin() * 0.5 + 0.5).clamp(0.0, 1.0)).collect();
    let images = Tensor::new(&[n, 1, IMAGE_SIDE, IMAGE_SIDE], v).unwrap();
    IdxDataset::new(images, (0..n).map(|i| (i % 10) as u8).collect()).unwrap()
}

fn tiny(arch: Arch) -> TaeConfig {
    TaeConfig {
        arch,
        d: 3,
        batch_size: 8,
        conv_channels: vec![2, 2, 2],
        encoder_width: 8,
        dense_hidden: 16,
        classifier_hidden: 8,
        epochs: 1,
        seed: 11,
        ..TaeConfig::default()
    }
}

#[test]
fn trained_checkpoint_reloads_and_round_trips_shapes() {
    for arch in [Arch::Dense, Arch::Conv] {
        let data = synthetic(24);
        let mut model = TaeModel::new(tiny(arch)).unwrap();
        let log = train(&mut model, &data, |_| {}).unwrap();
        assert_eq!(log.records.len(), 1);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.tae");
        checkpoint::save(&model, &path).unwrap();
        let loaded = checkpoint::load(&path).unwrap();
        // Gradient buffers are not persisted; values and names must be.
        assert_eq!(loaded.config(), model.config());
        for (a, b) in loaded.params().iter().zip(model.params().iter()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.tensor.values(), b.tensor.values());
        }

        let batch = data.head(5).images;
        let z = loaded.encode(&batch).unwrap();
        for t in [&z.x, &z.y, &z.rho, &z.phi] {
            assert_eq!(t.shape(), &[5, 3]);
        }
        let recon = loaded.decode(&z.x, &z.y).unwrap();
        assert_eq!(recon.shape(), &[5, 1, IMAGE_SIDE, IMAGE_SIDE]);
        assert!(recon.values().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert_eq!(loaded.classify(&z.phi).unwrap().shape(), &[5, 10]);
    }
}

/// Gradient of one loss term (or the total) with respect to every parameter.
fn term_grads(model: &mut TaeModel, images: &Tensor, labels: &[usize], pick: impl Fn(&[Var; 5]) -> Var) -> Vec<f64> {
    let targets = model.quantile_targets(labels.len()).unwrap();
    let mut g = Graph::new();
    let fwd = model.forward(&mut g, images).unwrap();
    let l = model.loss_graph(&mut g, &fwd, images, labels, &targets).unwrap();
    let root = pick(&[l.total, l.rec, l.spring, l.quant, l.cls]);
    model.params_mut().zero_grad();
    g.backward(root);
    g.accumulate_param_grads(model.params_mut());
    model.params().iter().flat_map(|p| p.tensor.grad().to_vec()).collect()
}

#[test]
fn total_gradient_is_weighted_sum_of_term_gradients() {
    let cfg = TaeConfig { lambda_rec: 0.7, lambda_spring: 0.3, lambda_quant: 0.2, lambda_cls: 0.9, ..tiny(Arch::Dense) };
    let (lr, ls, lq, lc) = (cfg.lambda_rec, cfg.lambda_spring, cfg.lambda_quant, cfg.lambda_cls);
    let mut model = TaeModel::new(cfg).unwrap();
    let data = synthetic(8);
    let labels: Vec<usize> = data.labels.iter().map(|&l| l as usize).collect();
    let total = term_grads(&mut model, &data.images, &labels, |v| v[0]);
    let rec = term_grads(&mut model, &data.images, &labels, |v| v[1]);
    let spring = term_grads(&mut model, &data.images, &labels, |v| v[2]);
    let quant = term_grads(&mut model, &data.images, &labels, |v| v[3]);
    let cls = term_grads(&mut model, &data.images, &labels, |v| v[4]);
    for i in 0..total.len() {
        let sum = lr * rec[i] + ls * spring[i] + lq * quant[i] + lc * cls[i];
        assert!((total[i] - sum).abs() <= 1e-12 * (1.0 + sum.abs()), "param {i}: {} vs {sum}", total[i]);
    }
}

#[test]
fn morph_grid_and_scatter_from_a_trained_model() {
    let data = synthetic(16);
    let mut model = TaeModel::new(tiny(Arch::Dense)).unwrap();
    train(&mut model, &data, |_| {}).unwrap();

    let z = model.encode(&data.select(&[2, 9]).images).unwrap();
    let a = PolarPoint::from_batch(&z, 0).unwrap();
    let b = PolarPoint::from_batch(&z, 1).unwrap();
    let rows: Vec<Tensor> = path_set(&a.phi, &b.phi, PathMode::TwoPerDim)
        .iter()
        .map(|k| MorphPath::new(&a, &b, k, DEFAULT_FRAMES).unwrap().decode(&model).unwrap())
        .collect();
    assert_eq!(rows.len(), 8);
    let grid = render_grid(&rows).unwrap();
    assert_eq!((grid.width, grid.height), (12 * 29 - 1, 8 * 29 - 1));

    let eval = evaluate(&model, &data, 5).unwrap();
    let csv = scatter_csv(&eval.latents, &eval.labels).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 17);
    assert!(lines.iter().all(|l| l.split(',').count() == 13));
    let report = LatentReport::new(&eval.latents).unwrap();
    assert_eq!(report.samples, 16);
    assert_eq!(report.correlation.len(), 6);
}
