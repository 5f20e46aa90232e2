//! Layer operations recorded on a [`Graph`].

use super::graph::{Backward, Graph, Var};
use super::linalg::{gemm, Layout};
use super::tensor::Tensor;
use crate::error::{shape_err, Error, Result};

/// Spatial padding of a stride-1 convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// Output keeps the input's spatial size; extra padding goes bottom/right.
    Same,
    /// No padding; output shrinks by `kernel - 1`.
    Valid,
}

fn dims<const N: usize>(t: &Tensor, op: &'static str) -> Result<[usize; N]> {
    t.shape()
        .try_into()
        .map_err(|_| shape_err(op, format!("expected rank {N}, got shape {:?}", t.shape())))
}

// ---------------------------------------------------------------------------
// dense

struct Dense {
    rows: usize,
    fan_in: usize,
    fan_out: usize,
}

impl Backward for Dense {
    fn name(&self) -> &'static str {
        "dense"
    }

    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grads: &mut [Vec<f64>]) {
        let (s, m, n) = (self.rows, self.fan_in, self.fan_out);
        let dy = output.grad();
        // dX = dY · Wᵀ
        gemm(s, n, m, dy, Layout::Normal, inputs[1].values(), Layout::Transposed, 0.0, &mut grads[0]);
        // dW = Xᵀ · dY
        gemm(m, s, n, inputs[0].values(), Layout::Transposed, dy, Layout::Normal, 0.0, &mut grads[1]);
        for row in dy.chunks_exact(n) {
            for (b, g) in grads[2].iter_mut().zip(row) {
                *b += g;
            }
        }
    }
}

// ---------------------------------------------------------------------------
// conv2d

#[derive(Clone, Copy)]
struct ConvGeom {
    channels: usize,
    height: usize,
    width: usize,
    kh: usize,
    kw: usize,
    pad_top: usize,
    pad_left: usize,
    out_h: usize,
    out_w: usize,
}

impl ConvGeom {
    fn patch(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Unfolds one sample `[C, H, W]` into `[C·kh·kw, out_h·out_w]`.
    fn im2col(&self, x: &[f64], cols: &mut [f64]) {
        let p = self.positions();
        for c in 0..self.channels {
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let row = ((c * self.kh + i) * self.kw + j) * p;
                    for oy in 0..self.out_h {
                        let y = (oy + i) as isize - self.pad_top as isize;
                        let dst = &mut cols[row + oy * self.out_w..row + (oy + 1) * self.out_w];
                        if y < 0 || y >= self.height as isize {
                            dst.fill(0.0);
                            continue;
                        }
                        let src = &x[(c * self.height + y as usize) * self.width..][..self.width];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let xx = (ox + j) as isize - self.pad_left as isize;
                            *d = if xx < 0 || xx >= self.width as isize { 0.0 } else { src[xx as usize] };
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`ConvGeom::im2col`]: scatters columns back onto the image.
    fn col2im(&self, cols: &[f64], dx: &mut [f64]) {
        let p = self.positions();
        for c in 0..self.channels {
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let row = ((c * self.kh + i) * self.kw + j) * p;
                    for oy in 0..self.out_h {
                        let y = (oy + i) as isize - self.pad_top as isize;
                        if y < 0 || y >= self.height as isize {
                            continue;
                        }
                        let dst = &mut dx[(c * self.height + y as usize) * self.width..][..self.width];
                        let src = &cols[row + oy * self.out_w..row + (oy + 1) * self.out_w];
                        for (ox, s) in src.iter().enumerate() {
                            let xx = (ox + j) as isize - self.pad_left as isize;
                            if xx >= 0 && xx < self.width as isize {
                                dst[xx as usize] += s;
                            }
                        }
                    }
                }
            }
        }
    }
}

struct Conv2d {
    geom: ConvGeom,
    batch: usize,
    kernels: usize,
}

impl Backward for Conv2d {
    fn name(&self) -> &'static str {
        "conv2d"
    }

    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grads: &mut [Vec<f64>]) {
        let g = self.geom;
        let (patch, pos, k) = (g.patch(), g.positions(), self.kernels);
        let in_len = g.channels * g.height * g.width;
        let x = inputs[0].values();
        let w = inputs[1].values();
        let dy = output.grad();
        let mut cols = vec![0.0; patch * pos];
        let mut dcols = vec![0.0; patch * pos];
        let (gx, rest) = grads.split_at_mut(1);
        let (gw, gb) = rest.split_at_mut(1);
        for s in 0..self.batch {
            let dys = &dy[s * k * pos..(s + 1) * k * pos];
            g.im2col(&x[s * in_len..(s + 1) * in_len], &mut cols);
            // dW += dY · colsᵀ
            gemm(k, pos, patch, dys, Layout::Normal, &cols, Layout::Transposed, 1.0, &mut gw[0]);
            // dcols = Wᵀ · dY
            gemm(patch, k, pos, w, Layout::Transposed, dys, Layout::Normal, 0.0, &mut dcols);
            g.col2im(&dcols, &mut gx[0][s * in_len..(s + 1) * in_len]);
            for (b, row) in gb[0].iter_mut().zip(dys.chunks_exact(pos)) {
                *b += row.iter().sum::<f64>();
            }
        }
    }
}

// ---------------------------------------------------------------------------
// pooling / resampling / reshaping

struct MaxPool2 {
    /// Flat input index of the winner of each output cell.
    argmax: Vec<usize>,
    /// For each output cell, the gap between the winner and the best value
    /// strictly below it. Exact ties are skipped: in practice they come from
    /// constant regions (a bias over zero inputs) whose entries move together.
    gaps: Vec<f64>,
}

impl Backward for MaxPool2 {
    fn name(&self) -> &'static str {
        "maxpool2"
    }

    fn backward(&self, _inputs: &[&Tensor], output: &Tensor, grads: &mut [Vec<f64>]) {
        for (&src, g) in self.argmax.iter().zip(output.grad()) {
            grads[0][src] += g;
        }
    }

    fn kink_margin(&self, _inputs: &[&Tensor], _output: &Tensor) -> f64 {
        self.gaps.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

struct Upsample2 {
    planes: usize,
    height: usize,
    width: usize,
}

impl Backward for Upsample2 {
    fn name(&self) -> &'static str {
        "upsample2"
    }

    fn backward(&self, _inputs: &[&Tensor], output: &Tensor, grads: &mut [Vec<f64>]) {
        let (h, w) = (self.height, self.width);
        let dy = output.grad();
        for p in 0..self.planes {
            for y in 0..2 * h {
                for x in 0..2 * w {
                    grads[0][(p * h + y / 2) * w + x / 2] += dy[(p * 2 * h + y) * 2 * w + x];
                }
            }
        }
    }
}

struct Reshape;

impl Backward for Reshape {
    fn name(&self) -> &'static str {
        "reshape"
    }

    fn backward(&self, _inputs: &[&Tensor], output: &Tensor, grads: &mut [Vec<f64>]) {
        grads[0].copy_from_slice(output.grad());
    }
}

struct CropCenter {
    planes: usize,
    in_hw: [usize; 2],
    out_hw: [usize; 2],
}

impl CropCenter {
    fn for_each(&self, mut f: impl FnMut(usize, usize)) {
        let [ih, iw] = self.in_hw;
        let [oh, ow] = self.out_hw;
        let (top, left) = ((ih - oh) / 2, (iw - ow) / 2);
        for p in 0..self.planes {
            for y in 0..oh {
                for x in 0..ow {
                    f((p * ih + y + top) * iw + x + left, (p * oh + y) * ow + x);
                }
            }
        }
    }
}

impl Backward for CropCenter {
    fn name(&self) -> &'static str {
        "crop_center"
    }

    fn backward(&self, _inputs: &[&Tensor], output: &Tensor, grads: &mut [Vec<f64>]) {
        let dy = output.grad();
        self.for_each(|src, dst| grads[0][src] += dy[dst]);
    }
}

struct ConcatCols {
    rows: usize,
    left: usize,
    right: usize,
}

impl Backward for ConcatCols {
    fn name(&self) -> &'static str {
        "concat_cols"
    }

    fn backward(&self, _inputs: &[&Tensor], output: &Tensor, grads: &mut [Vec<f64>]) {
        let w = self.left + self.right;
        for (r, row) in output.grad().chunks_exact(w).enumerate().take(self.rows) {
            grads[0][r * self.left..(r + 1) * self.left].copy_from_slice(&row[..self.left]);
            grads[1][r * self.right..(r + 1) * self.right].copy_from_slice(&row[self.left..]);
        }
    }
}

// ---------------------------------------------------------------------------
// elementwise

struct Relu;

impl Backward for Relu {
    fn name(&self) -> &'static str {
        "relu"
    }

    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grads: &mut [Vec<f64>]) {
        for ((g, &x), &dy) in grads[0].iter_mut().zip(inputs[0].values()).zip(output.grad()) {
            if x > 0.0 {
                *g += dy;
            }
        }
    }

    fn kink_margin(&self, inputs: &[&Tensor], _output: &Tensor) -> f64 {
        inputs[0].values().iter().map(|x| x.abs()).fold(f64::INFINITY, f64::min)
    }
}

struct Sigmoid;

impl Backward for Sigmoid {
    fn name(&self) -> &'static str {
        "sigmoid"
    }

    fn backward(&self, _inputs: &[&Tensor], output: &Tensor, grads: &mut [Vec<f64>]) {
        for ((g, &y), &dy) in grads[0].iter_mut().zip(output.values()).zip(output.grad()) {
            *g += dy * y * (1.0 - y);
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

// ---------------------------------------------------------------------------
// losses and reductions

struct SoftmaxCrossEntropy {
    probs: Vec<f64>,
    labels: Vec<usize>,
    classes: usize,
}

impl Backward for SoftmaxCrossEntropy {
    fn name(&self) -> &'static str {
        "softmax_cross_entropy"
    }

    fn backward(&self, _inputs: &[&Tensor], output: &Tensor, grads: &mut [Vec<f64>]) {
        let scale = output.grad()[0] / self.labels.len() as f64;
        for (r, &label) in self.labels.iter().enumerate() {
            let row = &self.probs[r * self.classes..(r + 1) * self.classes];
            let g = &mut grads[0][r * self.classes..(r + 1) * self.classes];
            for (c, (gi, &p)) in g.iter_mut().zip(row).enumerate() {
                let onehot = if c == label { 1.0 } else { 0.0 };
                *gi += scale * (p - onehot);
            }
        }
    }
}

struct Mse {
    target: Vec<f64>,
}

impl Backward for Mse {
    fn name(&self) -> &'static str {
        "mse"
    }

    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grads: &mut [Vec<f64>]) {
        let scale = 2.0 * output.grad()[0] / self.target.len() as f64;
        for ((g, &p), &t) in grads[0].iter_mut().zip(inputs[0].values()).zip(&self.target) {
            *g += scale * (p - t);
        }
    }
}

struct WeightedSum {
    weights: Vec<f64>,
}

impl Backward for WeightedSum {
    fn name(&self) -> &'static str {
        "weighted_sum"
    }

    fn backward(&self, _inputs: &[&Tensor], output: &Tensor, grads: &mut [Vec<f64>]) {
        for (g, &w) in grads.iter_mut().zip(&self.weights) {
            for (gi, &dy) in g.iter_mut().zip(output.grad()) {
                *gi += w * dy;
            }
        }
    }
}

struct DotConst {
    coeffs: Vec<f64>,
}

impl Backward for DotConst {
    fn name(&self) -> &'static str {
        "dot_const"
    }

    fn backward(&self, _inputs: &[&Tensor], output: &Tensor, grads: &mut [Vec<f64>]) {
        let dy = output.grad()[0];
        for (g, &c) in grads[0].iter_mut().zip(&self.coeffs) {
            *g += c * dy;
        }
    }
}

// ---------------------------------------------------------------------------
// graph builders

impl Graph {
    /// `out[s, j] = Σ_i input[s, i] · weights[i, j] + bias[j]`.
    pub fn dense(&mut self, input: Var, weights: Var, bias: Var) -> Result<Var> {
        let [s, m] = dims::<2>(self.value(input), "dense")?;
        let [wm, n] = dims::<2>(self.value(weights), "dense")?;
        let [bn] = dims::<1>(self.value(bias), "dense")?;
        if wm != m || bn != n {
            return Err(shape_err(
                "dense",
                format!("input [{s}, {m}], weights [{wm}, {n}], bias [{bn}]"),
            ));
        }
        let mut out = vec![0.0; s * n];
        for row in out.chunks_exact_mut(n) {
            row.copy_from_slice(self.value(bias).values());
        }
        gemm(
            s,
            m,
            n,
            self.value(input).values(),
            Layout::Normal,
            self.value(weights).values(),
            Layout::Normal,
            1.0,
            &mut out,
        );
        let value = Tensor::new(&[s, n], out)?;
        Ok(self.push(&[input, weights, bias], value, Box::new(Dense { rows: s, fan_in: m, fan_out: n })))
    }

    /// Stride-1 cross-correlation of `[S, C, H, W]` with `[K, C, kh, kw]` kernels.
    pub fn conv2d(&mut self, input: Var, kernels: Var, bias: Var, padding: Padding) -> Result<Var> {
        let [s, c, h, w] = dims::<4>(self.value(input), "conv2d")?;
        let [k, kc, kh, kw] = dims::<4>(self.value(kernels), "conv2d")?;
        let [bk] = dims::<1>(self.value(bias), "conv2d")?;
        if kc != c || bk != k {
            return Err(shape_err(
                "conv2d",
                format!("input channels {c}, kernels [{k}, {kc}, {kh}, {kw}], bias [{bk}]"),
            ));
        }
        let (pad_h, pad_w) = match padding {
            Padding::Same => (kh - 1, kw - 1),
            Padding::Valid => (0, 0),
        };
        if kh > h + pad_h || kw > w + pad_w {
            return Err(Error::KernelTooLarge { kernel: [kh, kw], input: [h + pad_h, w + pad_w] });
        }
        let geom = ConvGeom {
            channels: c,
            height: h,
            width: w,
            kh,
            kw,
            pad_top: pad_h / 2,
            pad_left: pad_w / 2,
            out_h: h + pad_h - kh + 1,
            out_w: w + pad_w - kw + 1,
        };
        let (patch, pos) = (geom.patch(), geom.positions());
        let in_len = c * h * w;
        let x = self.value(input).values();
        let kv = self.value(kernels).values();
        let bv = self.value(bias).values();
        let mut out = vec![0.0; s * k * pos];
        let mut cols = vec![0.0; patch * pos];
        for si in 0..s {
            geom.im2col(&x[si * in_len..(si + 1) * in_len], &mut cols);
            let o = &mut out[si * k * pos..(si + 1) * k * pos];
            for (row, &b) in o.chunks_exact_mut(pos).zip(bv) {
                row.fill(b);
            }
            gemm(k, patch, pos, kv, Layout::Normal, &cols, Layout::Normal, 1.0, o);
        }
        let value = Tensor::new(&[s, k, geom.out_h, geom.out_w], out)?;
        Ok(self.push(&[input, kernels, bias], value, Box::new(Conv2d { geom, batch: s, kernels: k })))
    }

    /// 2×2 stride-2 max pooling. Odd sizes are padded with −∞ on the
    /// bottom/right; ties go to the first cell in row-major order.
    pub fn maxpool2(&mut self, input: Var) -> Result<Var> {
        let [s, c, h, w] = dims::<4>(self.value(input), "maxpool2")?;
        let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
        let x = self.value(input).values();
        let n = s * c * oh * ow;
        let mut out = Vec::with_capacity(n);
        let mut argmax = Vec::with_capacity(n);
        let mut gaps = Vec::with_capacity(n);
        for p in 0..s * c {
            let plane = p * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = (f64::NEG_INFINITY, 0usize);
                    let mut second = f64::NEG_INFINITY;
                    for y in 2 * oy..(2 * oy + 2).min(h) {
                        for xx in 2 * ox..(2 * ox + 2).min(w) {
                            let i = plane + y * w + xx;
                            if x[i] > best.0 {
                                second = best.0;
                                best = (x[i], i);
                            } else if x[i] < best.0 && x[i] > second {
                                second = x[i];
                            }
                        }
                    }
                    out.push(best.0);
                    argmax.push(best.1);
                    gaps.push(best.0 - second);
                }
            }
        }
        let value = Tensor::new(&[s, c, oh, ow], out)?;
        Ok(self.push(&[input], value, Box::new(MaxPool2 { argmax, gaps })))
    }

    /// Nearest-neighbour 2× spatial up-sampling.
    pub fn upsample2(&mut self, input: Var) -> Result<Var> {
        let [s, c, h, w] = dims::<4>(self.value(input), "upsample2")?;
        let x = self.value(input).values();
        let mut out = vec![0.0; s * c * 4 * h * w];
        for p in 0..s * c {
            for y in 0..2 * h {
                for xx in 0..2 * w {
                    out[(p * 2 * h + y) * 2 * w + xx] = x[(p * h + y / 2) * w + xx / 2];
                }
            }
        }
        let value = Tensor::new(&[s, c, 2 * h, 2 * w], out)?;
        Ok(self.push(&[input], value, Box::new(Upsample2 { planes: s * c, height: h, width: w })))
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(input).reshaped(shape)?;
        Ok(self.push(&[input], value, Box::new(Reshape)))
    }

    /// Central `h × w` window of every `[S, C, H, W]` plane.
    pub fn crop_center(&mut self, input: Var, h: usize, w: usize) -> Result<Var> {
        let [s, c, ih, iw] = dims::<4>(self.value(input), "crop_center")?;
        if h > ih || w > iw {
            return Err(shape_err("crop_center", format!("cannot crop {ih}×{iw} to {h}×{w}")));
        }
        let op = CropCenter { planes: s * c, in_hw: [ih, iw], out_hw: [h, w] };
        let x = self.value(input).values();
        let mut out = vec![0.0; s * c * h * w];
        op.for_each(|src, dst| out[dst] = x[src]);
        let value = Tensor::new(&[s, c, h, w], out)?;
        Ok(self.push(&[input], value, Box::new(op)))
    }

    /// Joins `[S, p]` and `[S, q]` into `[S, p + q]`.
    pub fn concat_cols(&mut self, left: Var, right: Var) -> Result<Var> {
        let [s, p] = dims::<2>(self.value(left), "concat_cols")?;
        let [s2, q] = dims::<2>(self.value(right), "concat_cols")?;
        if s != s2 {
            return Err(shape_err("concat_cols", format!("row counts {s} and {s2}")));
        }
        let mut out = Vec::with_capacity(s * (p + q));
        for r in 0..s {
            out.extend_from_slice(self.value(left).row(r));
            out.extend_from_slice(self.value(right).row(r));
        }
        let value = Tensor::new(&[s, p + q], out)?;
        Ok(self.push(&[left, right], value, Box::new(ConcatCols { rows: s, left: p, right: q })))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let x = self.value(input);
        let out: Vec<f64> = x.values().iter().map(|&v| v.max(0.0)).collect();
        let value = Tensor::new(x.shape(), out).expect("same shape");
        self.push(&[input], value, Box::new(Relu))
    }

    pub fn sigmoid(&mut self, input: Var) -> Var {
        let x = self.value(input);
        let out: Vec<f64> = x.values().iter().map(|&v| sigmoid(v)).collect();
        let value = Tensor::new(x.shape(), out).expect("same shape");
        self.push(&[input], value, Box::new(Sigmoid))
    }

    /// Mean categorical cross-entropy of `[S, C]` logits against class ids.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let [s, classes] = dims::<2>(self.value(logits), "softmax_cross_entropy")?;
        if labels.len() != s {
            return Err(shape_err(
                "softmax_cross_entropy",
                format!("{s} logit rows but {} labels", labels.len()),
            ));
        }
        if let Some((row, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= classes) {
            return Err(Error::LabelOutOfRange { row, label, classes });
        }
        let z = self.value(logits).values();
        let mut probs = vec![0.0; s * classes];
        let mut loss = 0.0;
        for (r, &label) in labels.iter().enumerate() {
            let row = &z[r * classes..(r + 1) * classes];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = row.iter().map(|&v| (v - max).exp()).sum();
            let log_sum = sum.ln();
            for (p, &v) in probs[r * classes..(r + 1) * classes].iter_mut().zip(row) {
                *p = (v - max - log_sum).exp();
            }
            loss -= row[label] - max - log_sum;
        }
        let value = Tensor::scalar(loss / s as f64);
        let op = SoftmaxCrossEntropy { probs, labels: labels.to_vec(), classes };
        Ok(self.push(&[logits], value, Box::new(op)))
    }

    /// Mean squared error against a constant target of equal length.
    pub fn mse(&mut self, pred: Var, target: &Tensor) -> Result<Var> {
        let p = self.value(pred);
        if p.len() != target.len() {
            return Err(shape_err(
                "mse",
                format!("prediction {:?} vs target {:?}", p.shape(), target.shape()),
            ));
        }
        let n = p.len() as f64;
        let loss = p.values().iter().zip(target.values()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n;
        let op = Mse { target: target.values().to_vec() };
        Ok(self.push(&[pred], Tensor::scalar(loss), Box::new(op)))
    }

    /// `Σ_j w_j · x_j` over equally shaped terms.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        let Some(&(first, _)) = terms.first() else {
            return Err(shape_err("weighted_sum", "no terms"));
        };
        let shape = self.value(first).shape().to_vec();
        let mut out = vec![0.0; self.value(first).len()];
        for &(v, w) in terms {
            let t = self.value(v);
            if t.shape() != shape.as_slice() {
                return Err(shape_err("weighted_sum", format!("{:?} vs {shape:?}", t.shape())));
            }
            for (o, &x) in out.iter_mut().zip(t.values()) {
                *o += w * x;
            }
        }
        let vars: Vec<Var> = terms.iter().map(|t| t.0).collect();
        let weights = terms.iter().map(|t| t.1).collect();
        let value = Tensor::new(&shape, out)?;
        Ok(self.push(&vars, value, Box::new(WeightedSum { weights })))
    }

    /// Scalar `Σ_i c_i · x_i` for constant coefficients.
    pub fn dot_const(&mut self, input: Var, coeffs: &[f64]) -> Result<Var> {
        let x = self.value(input);
        if x.len() != coeffs.len() {
            return Err(shape_err("dot_const", format!("{} values vs {} coefficients", x.len(), coeffs.len())));
        }
        let v = x.values().iter().zip(coeffs).map(|(a, b)| a * b).sum();
        Ok(self.push(&[input], Tensor::scalar(v), Box::new(DotConst { coeffs: coeffs.to_vec() })))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor {
        Tensor::new(shape, v.to_vec()).unwrap()
    }

    #[test]
    fn dense_identity_and_hand_arithmetic() {
        let mut g = Graph::new();
        let x = g.input(t(&[1, 2], &[1.0, 2.0]));
        let w = g.input(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let b = g.input(t(&[2], &[0.0, 0.0]));
        let y = g.dense(x, w, b).unwrap();
        assert_eq!(g.value(y).values(), &[1.0, 2.0]);

        let x = g.input(t(&[1, 2], &[1.0, 1.0]));
        let w = g.input(t(&[2, 1], &[2.0, 3.0]));
        let b = g.input(t(&[1], &[1.0]));
        let y = g.dense(x, w, b).unwrap();
        assert_eq!(g.value(y).values(), &[6.0]);
    }

    #[test]
    fn dense_rejects_mismatched_shapes() {
        let mut g = Graph::new();
        let x = g.input(Tensor::zeros(&[1, 3]));
        let w = g.input(Tensor::zeros(&[2, 2]));
        let b = g.input(Tensor::zeros(&[2]));
        let err = g.dense(x, w, b).unwrap_err();
        assert!(err.to_string().contains("dense"), "{err}");
    }

    #[test]
    fn conv_identity_kernel_and_sum_kernel() {
        let mut g = Graph::new();
        let img: Vec<f64> = (1..=9).map(f64::from).collect();
        let x = g.input(t(&[1, 1, 3, 3], &img));
        let k = g.input(t(&[1, 1, 1, 1], &[1.0]));
        let b = g.input(t(&[1], &[0.0]));
        let y = g.conv2d(x, k, b, Padding::Same).unwrap();
        assert_eq!(g.value(y).values(), img.as_slice());

        let x = g.input(Tensor::filled(&[1, 1, 2, 2], 1.0));
        let k = g.input(Tensor::filled(&[1, 1, 2, 2], 1.0));
        let b = g.input(t(&[1], &[0.0]));
        let y = g.conv2d(x, k, b, Padding::Valid).unwrap();
        assert_eq!(g.value(y).shape(), &[1, 1, 1, 1]);
        assert_eq!(g.value(y).values(), &[4.0]);
    }

    #[test]
    fn conv_same_padding_matches_direct_sum() {
        let mut g = Graph::new();
        let img: Vec<f64> = (0..2 * 4 * 5).map(|i| (i as f64 * 0.3).sin()).collect();
        let ker: Vec<f64> = (0..3 * 2 * 3 * 3).map(|i| (i as f64 * 0.7).cos()).collect();
        let x = g.input(t(&[1, 2, 4, 5], &img));
        let k = g.input(t(&[3, 2, 3, 3], &ker));
        let b = g.input(t(&[3], &[0.1, 0.2, 0.3]));
        let y = g.conv2d(x, k, b, Padding::Same).unwrap();
        assert_eq!(g.value(y).shape(), &[1, 3, 4, 5]);
        let out = g.value(y).values();
        for ko in 0..3 {
            for oy in 0..4 {
                for ox in 0..5 {
                    let mut acc = [0.1, 0.2, 0.3][ko];
                    for c in 0..2 {
                        for i in 0..3 {
                            for j in 0..3 {
                                let (yy, xx) = (oy as isize + i as isize - 1, ox as isize + j as isize - 1);
                                if (0..4).contains(&yy) && (0..5).contains(&xx) {
                                    acc += img[(c * 4 + yy as usize) * 5 + xx as usize]
                                        * ker[((ko * 2 + c) * 3 + i) * 3 + j];
                                }
                            }
                        }
                    }
                    assert!((out[(ko * 4 + oy) * 5 + ox] - acc).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn conv_rejects_oversized_kernel() {
        let mut g = Graph::new();
        let x = g.input(Tensor::zeros(&[1, 1, 2, 2]));
        let k = g.input(Tensor::zeros(&[1, 1, 3, 3]));
        let b = g.input(Tensor::zeros(&[1]));
        assert!(matches!(g.conv2d(x, k, b, Padding::Valid), Err(Error::KernelTooLarge { .. })));
    }

    #[test]
    fn maxpool_basic_tie_and_odd() {
        let mut g = Graph::new();
        let x = g.input(t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let y = g.maxpool2(x).unwrap();
        assert_eq!(g.value(y).values(), &[4.0]);

        let x = g.input(Tensor::filled(&[1, 1, 2, 2], 7.0));
        let y = g.maxpool2(x).unwrap();
        assert_eq!(g.value(y).values(), &[7.0]);
        g.backward(y);
        assert_eq!(g.grad(x), &[1.0, 0.0, 0.0, 0.0]);

        let x = g.input(t(&[1, 1, 3, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0]));
        let y = g.maxpool2(x).unwrap();
        assert_eq!(g.value(y).shape(), &[1, 1, 2, 2]);
        assert_eq!(g.value(y).values(), &[5.0, 6.0, 8.0, 9.0]);
    }

    #[test]
    fn upsample_repeats_and_pool_inverts() {
        let mut g = Graph::new();
        let x = g.input(t(&[1, 1, 1, 1], &[5.0]));
        let y = g.upsample2(x).unwrap();
        assert_eq!(g.value(y).values(), &[5.0; 4]);

        let vals: Vec<f64> = (0..2 * 3 * 3 * 2).map(|i| (i as f64 * 1.3).sin()).collect();
        let x = g.input(t(&[2, 3, 3, 2], &vals));
        let u = g.upsample2(x).unwrap();
        let p = g.maxpool2(u).unwrap();
        assert_eq!(g.value(p).values(), vals.as_slice());
    }

    #[test]
    fn cross_entropy_uniform_saturated_and_bad_label() {
        let mut g = Graph::new();
        let z = g.input(Tensor::zeros(&[3, 10]));
        let l = g.softmax_cross_entropy(z, &[0, 4, 9]).unwrap();
        assert!((g.value(l).item() - 10f64.ln()).abs() < 1e-14);

        let mut logits = vec![0.0; 10];
        logits[3] = 40.0;
        let z = g.input(t(&[1, 10], &logits));
        let l = g.softmax_cross_entropy(z, &[3]).unwrap();
        assert!(g.value(l).item() < 1e-12);

        let z = g.input(Tensor::zeros(&[1, 10]));
        assert!(matches!(g.softmax_cross_entropy(z, &[10]), Err(Error::LabelOutOfRange { .. })));
    }

    #[test]
    fn cross_entropy_gradient_is_softmax_minus_onehot() {
        let mut g = Graph::new();
        let logits = [0.3, -1.2, 2.0, 0.0, 0.5, -0.7, 1.1, 0.2, -2.0, 0.9];
        let z = g.input(t(&[1, 10], &logits));
        let l = g.softmax_cross_entropy(z, &[6]).unwrap();
        g.backward(l);
        let max = 2.0f64;
        let sum: f64 = logits.iter().map(|v| (v - max).exp()).sum();
        for (c, &v) in logits.iter().enumerate() {
            let want = (v - max).exp() / sum - if c == 6 { 1.0 } else { 0.0 };
            assert!((g.grad(z)[c] - want).abs() < 1e-14);
        }
    }

    #[test]
    fn crop_and_concat_shapes() {
        let mut g = Graph::new();
        let vals: Vec<f64> = (0..16).map(f64::from).collect();
        let x = g.input(t(&[1, 1, 4, 4], &vals));
        let c = g.crop_center(x, 2, 2).unwrap();
        assert_eq!(g.value(c).values(), &[5.0, 6.0, 9.0, 10.0]);

        let a = g.input(t(&[2, 1], &[1.0, 2.0]));
        let b = g.input(t(&[2, 2], &[3.0, 4.0, 5.0, 6.0]));
        let j = g.concat_cols(a, b).unwrap();
        assert_eq!(g.value(j).values(), &[1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
    }

    #[test]
    fn backward_of_sum_is_sum_of_backwards() {
        let build = |g: &mut Graph| {
            let x = g.input(t(&[2, 2], &[0.5, -1.0, 2.0, 0.25]));
            let s = g.sigmoid(x);
            let a = g.dot_const(s, &[1.0, 2.0, 3.0, 4.0]).unwrap();
            let b = g.mse(x, &Tensor::filled(&[2, 2], 0.3)).unwrap();
            (x, a, b)
        };
        let mut g = Graph::new();
        let (x, a, b) = build(&mut g);
        let sum = g.weighted_sum(&[(a, 1.0), (b, 1.0)]).unwrap();
        g.backward(sum);
        let joint = g.grad(x).to_vec();

        let mut g = Graph::new();
        let (x, a, b) = build(&mut g);
        g.backward(a);
        g.backward(b);
        for (u, v) in joint.iter().zip(g.grad(x)) {
            assert!((u - v).abs() < 1e-15);
        }
    }
}
