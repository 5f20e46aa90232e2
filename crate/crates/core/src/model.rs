//! Encoder, X/Y heads, polar latent, auxiliary classifier and decoder.
//!
//! The decoder consumes the concatenated Cartesian heads `[X, Y]` only;
//! `rho` and `phi` shape the latent through the regularizers and feed the
//! classifier, never the decoder.

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::mnist::CLASSES;
use crate::nn::{glorot_uniform, AdamConfig, Graph, Padding, ParamId, ParamStore, Tensor, Var};
use crate::polar::{self, LatentBatch};
use crate::regularizers::{quantile_loss, spring_loss, QuantileTargets};

/// Side length of the square input images.
pub const IMAGE_SIDE: usize = 28;
const PIXELS: usize = IMAGE_SIDE * IMAGE_SIDE;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    /// Three conv+pool stages, mirrored with up-sampling in the decoder.
    Conv,
    /// Fully connected encoder/decoder; much faster, used for CI runs.
    Dense,
}

/// Architecture, loss weights and optimisation settings. Serialised as a
/// flat JSON object; missing keys take the defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaeConfig {
    pub arch: Arch,
    /// Number of circles in the torus; the Cartesian latent has `2d` values.
    pub d: usize,
    pub batch_size: usize,
    /// Output channels of the three encoder convolutions.
    pub conv_channels: Vec<usize>,
    pub kernel_size: usize,
    /// Width of the dense "encoder output" layer feeding both heads.
    pub encoder_width: usize,
    /// Hidden width of the dense architecture.
    pub dense_hidden: usize,
    pub classifier_hidden: usize,
    pub lambda_rec: f64,
    pub lambda_spring: f64,
    pub lambda_quant: f64,
    pub lambda_cls: f64,
    /// Target normal distribution of the squared radius.
    pub rho_mean: f64,
    pub rho_std: f64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TaeConfig {
    fn default() -> Self {
        Self {
            arch: Arch::Conv,
            d: 3,
            batch_size: 128,
            conv_channels: vec![8, 16, 32],
            kernel_size: 3,
            encoder_width: 64,
            dense_hidden: 256,
            classifier_hidden: 32,
            lambda_rec: 1.0,
            lambda_spring: 0.01,
            lambda_quant: 0.01,
            lambda_cls: 0.1,
            rho_mean: 1.0,
            rho_std: 0.1,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-8,
            epochs: 20,
            seed: 0,
        }
    }
}

impl TaeConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.d == 0 {
            return fail("d must be at least 1".into());
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1".into());
        }
        if (self.lambda_spring > 0.0 || self.lambda_quant > 0.0) && self.batch_size < 2 {
            return fail("distribution losses need batch_size >= 2".into());
        }
        for (name, v) in [
            ("lambda_rec", self.lambda_rec),
            ("lambda_spring", self.lambda_spring),
            ("lambda_quant", self.lambda_quant),
            ("lambda_cls", self.lambda_cls),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return fail(format!("{name} must be a non-negative number, got {v}"));
            }
        }
        if !(self.rho_std > 0.0) {
            return fail(format!("rho_std must be positive, got {}", self.rho_std));
        }
        if self.arch == Arch::Conv && self.conv_channels.len() != 3 {
            return fail(format!("conv architecture needs 3 channel counts, got {:?}", self.conv_channels));
        }
        if self.conv_channels.contains(&0) {
            return fail("conv channel counts must be positive".into());
        }
        if self.kernel_size == 0 || self.kernel_size.is_multiple_of(2) {
            return fail(format!("kernel_size must be odd, got {}", self.kernel_size));
        }
        if self.encoder_width == 0 || self.dense_hidden == 0 || self.classifier_hidden == 0 {
            return fail("layer widths must be positive".into());
        }
        if !(self.learning_rate > 0.0) {
            return fail("learning_rate must be positive".into());
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.adam_epsilon,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct DenseLayer {
    weight: ParamId,
    bias: ParamId,
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct ConvLayer {
    kernel: ParamId,
    bias: ParamId,
}

#[derive(Clone, Debug, PartialEq)]
enum Encoder {
    Conv { convs: Vec<ConvLayer>, fc: DenseLayer },
    Dense { fc1: DenseLayer, fc2: DenseLayer },
}

#[derive(Clone, Debug, PartialEq)]
enum Decoder {
    Conv { fc1: DenseLayer, fc2: DenseLayer, seed_side: usize, convs: Vec<ConvLayer>, out: ConvLayer },
    Dense { fc1: DenseLayer, fc2: DenseLayer, out: DenseLayer },
}

struct Builder<'a> {
    params: &'a mut ParamStore,
    rng: Xoshiro256PlusPlus,
}

impl Builder<'_> {
    fn dense(&mut self, name: &str, fan_in: usize, fan_out: usize) -> DenseLayer {
        let w = glorot_uniform(&mut self.rng, &[fan_in, fan_out], fan_in, fan_out);
        DenseLayer {
            weight: self.params.add(format!("{name}.weight"), w),
            bias: self.params.add(format!("{name}.bias"), Tensor::zeros(&[fan_out])),
        }
    }

    fn conv(&mut self, name: &str, c_in: usize, c_out: usize, k: usize) -> ConvLayer {
        let w = glorot_uniform(&mut self.rng, &[c_out, c_in, k, k], c_in * k * k, c_out * k * k);
        ConvLayer {
            kernel: self.params.add(format!("{name}.kernel"), w),
            bias: self.params.add(format!("{name}.bias"), Tensor::zeros(&[c_out])),
        }
    }
}

/// Graph handles produced by one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct Forward {
    pub images: Var,
    pub x: Var,
    pub y: Var,
    pub rho: Var,
    pub phi: Var,
    pub recon: Var,
    pub logits: Var,
}

/// Graph handles of the weighted loss and its four terms.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub total: Var,
    pub rec: Var,
    pub spring: Var,
    pub quant: Var,
    pub cls: Var,
}

/// Unweighted loss terms plus the weighted total.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub rec: f64,
    pub spring: f64,
    pub quant: f64,
    pub cls: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaeModel {
    config: TaeConfig,
    params: ParamStore,
    encoder: Encoder,
    x_head: DenseLayer,
    y_head: DenseLayer,
    decoder: Decoder,
    classifier: [DenseLayer; 3],
}

impl TaeModel {
    /// Freshly initialised model; weights depend only on the config (seed).
    pub fn new(config: TaeConfig) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut b = Builder { params: &mut params, rng: Xoshiro256PlusPlus::seed_from_u64(config.seed) };
        let (d, ew, k) = (config.d, config.encoder_width, config.kernel_size);

        let (encoder, heads, decoder) = match config.arch {
            Arch::Conv => {
                let ch = &config.conv_channels;
                let mut side = IMAGE_SIDE;
                let mut c_in = 1;
                let mut convs = Vec::new();
                for (i, &c) in ch.iter().enumerate() {
                    convs.push(b.conv(&format!("encoder.conv{i}"), c_in, c, k));
                    c_in = c;
                    side = side.div_ceil(2);
                }
                let flat = c_in * side * side;
                let fc = b.dense("encoder.fc", flat, ew);
                let encoder = Encoder::Conv { convs, fc };

                let (hx, hy) = (b.dense("head_x", ew, d), b.dense("head_y", ew, d));
                let fc1 = b.dense("decoder.fc1", 2 * d, ew);
                let fc2 = b.dense("decoder.fc2", ew, flat);
                let mut dconvs = Vec::new();
                let mut c_prev = ch[2];
                for (i, c) in [ch[1], ch[0], ch[0]].into_iter().enumerate() {
                    dconvs.push(b.conv(&format!("decoder.conv{i}"), c_prev, c, k));
                    c_prev = c;
                }
                let out = b.conv("decoder.out", c_prev, 1, k);
                (encoder, (hx, hy), Decoder::Conv { fc1, fc2, seed_side: side, convs: dconvs, out })
            }
            Arch::Dense => {
                let h = config.dense_hidden;
                let encoder = Encoder::Dense { fc1: b.dense("encoder.fc1", PIXELS, h), fc2: b.dense("encoder.fc2", h, ew) };
                let (hx, hy) = (b.dense("head_x", ew, d), b.dense("head_y", ew, d));
                let decoder = Decoder::Dense {
                    fc1: b.dense("decoder.fc1", 2 * d, ew),
                    fc2: b.dense("decoder.fc2", ew, h),
                    out: b.dense("decoder.out", h, PIXELS),
                };
                (encoder, (hx, hy), decoder)
            }
        };
        Self::finish(config, params, encoder, heads, decoder)
    }

    fn finish(
        config: TaeConfig,
        mut params: ParamStore,
        encoder: Encoder,
        heads: (DenseLayer, DenseLayer),
        decoder: Decoder,
    ) -> Result<Self> {
        // The classifier draws from its own stream so that its initial
        // weights do not depend on the encoder/decoder architecture.
        let mut b = Builder {
            params: &mut params,
            rng: Xoshiro256PlusPlus::seed_from_u64(config.seed ^ 0xC1A5_51F1_E500_0000),
        };
        let h = config.classifier_hidden;
        let classifier = [
            b.dense("classifier.fc1", config.d, h),
            b.dense("classifier.fc2", h, h),
            b.dense("classifier.fc3", h, CLASSES),
        ];
        Ok(Self { config, params, encoder, x_head: heads.0, y_head: heads.1, decoder, classifier })
    }

    pub fn config(&self) -> &TaeConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Handles of the classifier parameters.
    pub fn classifier_params(&self) -> Vec<ParamId> {
        self.classifier.iter().flat_map(|l| [l.weight, l.bias]).collect()
    }

    /// Handles of the two latent-head parameters (X head first).
    pub fn head_params(&self) -> Vec<ParamId> {
        [self.x_head, self.y_head].iter().flat_map(|l| [l.weight, l.bias]).collect()
    }

    fn apply_dense(&self, g: &mut Graph, input: Var, layer: DenseLayer) -> Result<Var> {
        let w = g.param(&self.params, layer.weight);
        let b = g.param(&self.params, layer.bias);
        g.dense(input, w, b)
    }

    fn apply_conv(&self, g: &mut Graph, input: Var, layer: ConvLayer) -> Result<Var> {
        let k = g.param(&self.params, layer.kernel);
        let b = g.param(&self.params, layer.bias);
        g.conv2d(input, k, b, Padding::Same)
    }

    fn check_images(&self, images: &Tensor) -> Result<usize> {
        match *images.shape() {
            [s, 1, IMAGE_SIDE, IMAGE_SIDE] => Ok(s),
            _ => Err(shape_err(
                "encode",
                format!("expected [S, 1, {IMAGE_SIDE}, {IMAGE_SIDE}] images, got {:?}", images.shape()),
            )),
        }
    }

    /// Encoder plus both heads; returns `(x, y)` handles of shape `S × d`.
    pub fn encode_graph(&self, g: &mut Graph, images: Var) -> Result<(Var, Var)> {
        let s = self.check_images(g.value(images))?;
        let features = match &self.encoder {
            Encoder::Conv { convs, fc } => {
                let mut h = images;
                // relu and max commute, so pooling first gives the same
                // values on a quarter of the units and keeps rectified zeros
                // from tying inside pooling windows.
                for &layer in convs {
                    h = self.apply_conv(g, h, layer)?;
                    h = g.maxpool2(h)?;
                    h = g.relu(h);
                }
                let flat = g.value(h).len() / s;
                let h = g.reshape(h, &[s, flat])?;
                let h = self.apply_dense(g, h, *fc)?;
                g.relu(h)
            }
            Encoder::Dense { fc1, fc2 } => {
                let h = g.reshape(images, &[s, PIXELS])?;
                let h = self.apply_dense(g, h, *fc1)?;
                let h = g.relu(h);
                let h = self.apply_dense(g, h, *fc2)?;
                g.relu(h)
            }
        };
        let x = self.apply_dense(g, features, self.x_head)?;
        let y = self.apply_dense(g, features, self.y_head)?;
        Ok((x, y))
    }

    /// Decoder from the Cartesian heads to `[S, 1, 28, 28]` pixels in `[0, 1]`.
    pub fn decode_graph(&self, g: &mut Graph, x: Var, y: Var) -> Result<Var> {
        let z = g.concat_cols(x, y)?;
        if g.value(z).shape()[1] != 2 * self.config.d {
            return Err(shape_err(
                "decode",
                format!("latent width {} != 2d = {}", g.value(z).shape()[1], 2 * self.config.d),
            ));
        }
        let s = g.value(z).shape()[0];
        let logits = match &self.decoder {
            Decoder::Conv { fc1, fc2, seed_side, convs, out } => {
                let h = self.apply_dense(g, z, *fc1)?;
                let h = g.relu(h);
                let h = self.apply_dense(g, h, *fc2)?;
                let h = g.relu(h);
                let channels = g.value(h).shape()[1] / (seed_side * seed_side);
                let mut h = g.reshape(h, &[s, channels, *seed_side, *seed_side])?;
                for &layer in convs {
                    h = g.upsample2(h)?;
                    h = self.apply_conv(g, h, layer)?;
                    h = g.relu(h);
                }
                let h = self.apply_conv(g, h, *out)?;
                // 4 → 8 → 16 → 32: trim the border back to 28 × 28.
                g.crop_center(h, IMAGE_SIDE, IMAGE_SIDE)?
            }
            Decoder::Dense { fc1, fc2, out } => {
                let h = self.apply_dense(g, z, *fc1)?;
                let h = g.relu(h);
                let h = self.apply_dense(g, h, *fc2)?;
                let h = g.relu(h);
                let h = self.apply_dense(g, h, *out)?;
                g.reshape(h, &[s, 1, IMAGE_SIDE, IMAGE_SIDE])?
            }
        };
        Ok(g.sigmoid(logits))
    }

    /// Three-layer classifier on the angles.
    pub fn classify_graph(&self, g: &mut Graph, phi: Var) -> Result<Var> {
        let [l1, l2, l3] = self.classifier;
        let h = self.apply_dense(g, phi, l1)?;
        let h = g.relu(h);
        let h = self.apply_dense(g, h, l2)?;
        let h = g.relu(h);
        self.apply_dense(g, h, l3)
    }

    /// Full forward pass: encoder, polar transform, decoder, classifier.
    pub fn forward(&self, g: &mut Graph, images: &Tensor) -> Result<Forward> {
        let images = g.input(images.clone());
        let (x, y) = self.encode_graph(g, images)?;
        let (rho, phi) = polar::to_polar(g, x, y)?;
        let recon = self.decode_graph(g, x, y)?;
        let logits = self.classify_graph(g, phi)?;
        Ok(Forward { images, x, y, rho, phi, recon, logits })
    }

    /// Records the weighted objective
    /// `λ_rec·MSE + λ_spring·spring(phi) + λ_quant·quantile(rho) + λ_cls·CE`.
    pub fn loss_graph(
        &self,
        g: &mut Graph,
        fwd: &Forward,
        images: &Tensor,
        labels: &[usize],
        targets: &QuantileTargets,
    ) -> Result<LossVars> {
        let c = &self.config;
        let rec = g.mse(fwd.recon, images)?;
        let spring = spring_loss(g, fwd.phi)?;
        let quant = quantile_loss(g, fwd.rho, targets)?;
        let cls = g.softmax_cross_entropy(fwd.logits, labels)?;
        let total = g.weighted_sum(&[
            (rec, c.lambda_rec),
            (spring, c.lambda_spring),
            (quant, c.lambda_quant),
            (cls, c.lambda_cls),
        ])?;
        Ok(LossVars { total, rec, spring, quant, cls })
    }

    pub fn quantile_targets(&self, batch_size: usize) -> Result<QuantileTargets> {
        QuantileTargets::new(batch_size, self.config.rho_mean, self.config.rho_std)
    }

    pub fn encode(&self, images: &Tensor) -> Result<LatentBatch> {
        let mut g = Graph::new();
        let input = g.input(images.clone());
        let (x, y) = self.encode_graph(&mut g, input)?;
        LatentBatch::from_cartesian(g.value(x).clone(), g.value(y).clone())
    }

    pub fn decode(&self, x: &Tensor, y: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let (xv, yv) = (g.input(x.clone()), g.input(y.clone()));
        let out = self.decode_graph(&mut g, xv, yv)?;
        Ok(g.value(out).clone())
    }

    pub fn classify(&self, phi: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let p = g.input(phi.clone());
        let out = self.classify_graph(&mut g, p)?;
        Ok(g.value(out).clone())
    }

    /// Loss value and per-term breakdown on one batch (no parameter update).
    pub fn total_loss(&self, images: &Tensor, labels: &[usize]) -> Result<LossBreakdown> {
        let mut g = Graph::new();
        let fwd = self.forward(&mut g, images)?;
        let targets = self.quantile_targets(images.shape()[0])?;
        let vars = self.loss_graph(&mut g, &fwd, images, labels, &targets)?;
        Ok(LossBreakdown {
            total: g.value(vars.total).item(),
            rec: g.value(vars.rec).item(),
            spring: g.value(vars.spring).item(),
            quant: g.value(vars.quant).item(),
            cls: g.value(vars.cls).item(),
        })
    }
}

/// Index of the largest logit in each row.
pub fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    let classes = logits.shape()[1];
    logits
        .values()
        .chunks_exact(classes)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                .0
        })
        .collect()
}
