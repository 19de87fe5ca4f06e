//! Elementwise, normalization, pooling and dense layers.

use serde::{Deserialize, Serialize};

use super::tensor::{Param, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-channel batch normalization with affine parameters.
#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub channels: usize,
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
    cache: Option<BnCache>,
}

#[derive(Debug, Clone)]
struct BnCache {
    xhat: Tensor,
    inv_std: Vec<f64>,
}

/// Running statistics of a batch-norm layer, as stored in checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BnStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl BatchNorm2d {
    pub fn new(channels: usize, gamma: Vec<f64>) -> Self {
        BatchNorm2d {
            channels,
            gamma: Param::new(vec![channels], gamma),
            beta: Param::zeros(vec![channels]),
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum: 0.1,
            eps: 1e-5,
            cache: None,
        }
    }

    pub fn stats(&self) -> BnStats {
        BnStats {
            mean: self.running_mean.clone(),
            var: self.running_var.clone(),
        }
    }

    pub fn set_stats(&mut self, stats: &BnStats) {
        self.running_mean.clone_from(&stats.mean);
        self.running_var.clone_from(&stats.var);
    }

    /// Normalizes with the running statistics.
    pub fn apply_eval(&self, x: &Tensor) -> Tensor {
        assert_eq!(x.c, self.channels, "batchnorm channels");
        let hw = x.h * x.w;
        let mut y = Tensor::zeros(x.n, x.c, x.h, x.w);
        for c in 0..x.c {
            let inv = 1.0 / (self.running_var[c] + self.eps).sqrt();
            let (g, b, mu) = (self.gamma.value[c], self.beta.value[c], self.running_mean[c]);
            for n in 0..x.n {
                let off = (n * x.c + c) * hw;
                for j in off..off + hw {
                    y.data[j] = g * (x.data[j] - mu) * inv + b;
                }
            }
        }
        y
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Tensor {
        assert_eq!(x.c, self.channels, "batchnorm channels");
        let hw = x.h * x.w;
        let m = (x.n * hw) as f64;
        let mut y = Tensor::zeros(x.n, x.c, x.h, x.w);
        match mode {
            Mode::Eval => {
                self.cache = None;
                return self.apply_eval(x);
            }
            Mode::Train => {
                let mut xhat = Tensor::zeros(x.n, x.c, x.h, x.w);
                let mut inv_std = vec![0.0; x.c];
                for c in 0..x.c {
                    let mut sum = 0.0;
                    for n in 0..x.n {
                        let off = (n * x.c + c) * hw;
                        sum += x.data[off..off + hw].iter().sum::<f64>();
                    }
                    let mean = sum / m;
                    let mut sq = 0.0;
                    for n in 0..x.n {
                        let off = (n * x.c + c) * hw;
                        sq += x.data[off..off + hw]
                            .iter()
                            .map(|v| (v - mean) * (v - mean))
                            .sum::<f64>();
                    }
                    let var = sq / m;
                    let inv = 1.0 / (var + self.eps).sqrt();
                    inv_std[c] = inv;
                    let (g, b) = (self.gamma.value[c], self.beta.value[c]);
                    for n in 0..x.n {
                        let off = (n * x.c + c) * hw;
                        for j in off..off + hw {
                            let xh = (x.data[j] - mean) * inv;
                            xhat.data[j] = xh;
                            y.data[j] = g * xh + b;
                        }
                    }
                    let unbiased = if m > 1.0 { sq / (m - 1.0) } else { var };
                    self.running_mean[c] =
                        (1.0 - self.momentum) * self.running_mean[c] + self.momentum * mean;
                    self.running_var[c] =
                        (1.0 - self.momentum) * self.running_var[c] + self.momentum * unbiased;
                }
                self.cache = Some(BnCache { xhat, inv_std });
            }
        }
        y
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let BnCache { xhat, inv_std } = self.cache.take().expect("batchnorm backward needs a train-mode forward");
        if self.gamma.grad.len() != self.channels {
            self.gamma.zero_grad();
            self.beta.zero_grad();
        }
        let hw = dy.h * dy.w;
        let m = (dy.n * hw) as f64;
        let mut dx = Tensor::zeros(dy.n, dy.c, dy.h, dy.w);
        for c in 0..dy.c {
            let mut sum_dy = 0.0;
            let mut sum_dy_xhat = 0.0;
            for n in 0..dy.n {
                let off = (n * dy.c + c) * hw;
                for j in off..off + hw {
                    sum_dy += dy.data[j];
                    sum_dy_xhat += dy.data[j] * xhat.data[j];
                }
            }
            self.gamma.grad[c] += sum_dy_xhat;
            self.beta.grad[c] += sum_dy;
            let k = self.gamma.value[c] * inv_std[c] / m;
            for n in 0..dy.n {
                let off = (n * dy.c + c) * hw;
                for j in off..off + hw {
                    dx.data[j] = k * (m * dy.data[j] - sum_dy - xhat.data[j] * sum_dy_xhat);
                }
            }
        }
        dx
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ActKind {
    Relu,
    LeakyRelu(f64),
    Tanh,
}

/// Pointwise activation; caches what its derivative needs.
#[derive(Debug, Clone)]
pub struct Activation {
    pub kind: ActKind,
    cache: Option<Tensor>,
}

impl Activation {
    pub fn new(kind: ActKind) -> Self {
        Activation { kind, cache: None }
    }

    pub fn apply(&self, x: &Tensor) -> Tensor {
        let mut y = x.clone();
        match self.kind {
            ActKind::Relu => y.data.iter_mut().for_each(|v| *v = v.max(0.0)),
            ActKind::LeakyRelu(a) => y.data.iter_mut().for_each(|v| {
                if *v < 0.0 {
                    *v *= a
                }
            }),
            ActKind::Tanh => y.data.iter_mut().for_each(|v| *v = v.tanh()),
        }
        y
    }

    pub fn forward(&mut self, x: &Tensor) -> Tensor {
        let y = self.apply(x);
        // tanh keeps its output, the piecewise-linear ones their input
        self.cache = Some(match self.kind {
            ActKind::Tanh => y.clone(),
            _ => x.clone(),
        });
        y
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let cached = self.cache.take().expect("activation backward without forward");
        let mut dx = dy.clone();
        match self.kind {
            ActKind::Relu => dx.data.iter_mut().zip(&cached.data).for_each(|(d, x)| {
                if *x <= 0.0 {
                    *d = 0.0
                }
            }),
            ActKind::LeakyRelu(a) => dx.data.iter_mut().zip(&cached.data).for_each(|(d, x)| {
                if *x < 0.0 {
                    *d *= a
                }
            }),
            ActKind::Tanh => dx
                .data
                .iter_mut()
                .zip(&cached.data)
                .for_each(|(d, y)| *d *= 1.0 - y * y),
        }
        dx
    }
}

/// Fully connected layer over the flattened sample.
#[derive(Debug, Clone)]
pub struct Linear {
    pub in_features: usize,
    pub out_features: usize,
    /// Shape `[out, in]`.
    pub weight: Param,
    pub bias: Param,
    input: Option<Tensor>,
}

impl Linear {
    pub fn new(in_features: usize, out_features: usize, weight: Vec<f64>) -> Self {
        Linear {
            in_features,
            out_features,
            weight: Param::new(vec![out_features, in_features], weight),
            bias: Param::zeros(vec![out_features]),
            input: None,
        }
    }

    pub fn apply(&self, x: &Tensor) -> Tensor {
        assert_eq!(x.sample_len(), self.in_features, "linear input size");
        let mut y = Tensor::zeros(x.n, self.out_features, 1, 1);
        for i in 0..x.n {
            let row = y.sample_mut(i);
            row.copy_from_slice(&self.bias.value);
        }
        // Y (n×out) += X (n×in) · W^T
        super::conv::gemm(
            x.n,
            self.in_features,
            self.out_features,
            &x.data,
            self.in_features,
            1,
            &self.weight.value,
            1,
            self.in_features,
            1.0,
            &mut y.data,
        );
        y
    }

    pub fn forward(&mut self, x: &Tensor) -> Tensor {
        let y = self.apply(x);
        self.input = Some(x.clone());
        y
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let x = self.input.take().expect("linear backward without forward");
        if self.weight.grad.len() != self.weight.value.len() {
            self.weight.zero_grad();
            self.bias.zero_grad();
        }
        for i in 0..dy.n {
            for (b, d) in self.bias.grad.iter_mut().zip(dy.sample(i)) {
                *b += d;
            }
        }
        // dW (out×in) += dY^T · X
        super::conv::gemm(
            self.out_features,
            dy.n,
            self.in_features,
            &dy.data,
            1,
            self.out_features,
            &x.data,
            self.in_features,
            1,
            1.0,
            &mut self.weight.grad,
        );
        let mut dx = Tensor::zeros(x.n, x.c, x.h, x.w);
        // dX (n×in) = dY · W
        super::conv::gemm(
            dy.n,
            self.out_features,
            self.in_features,
            &dy.data,
            self.out_features,
            1,
            &self.weight.value,
            self.in_features,
            1,
            0.0,
            &mut dx.data,
        );
        dx
    }
}

/// Non-overlapping average pooling with a square window.
pub fn avg_pool(x: &Tensor, k: usize) -> Tensor {
    let (oh, ow) = (x.h / k, x.w / k);
    let mut y = Tensor::zeros(x.n, x.c, oh, ow);
    let scale = 1.0 / (k * k) as f64;
    for nc in 0..x.n * x.c {
        let src = &x.data[nc * x.h * x.w..(nc + 1) * x.h * x.w];
        let dst = &mut y.data[nc * oh * ow..(nc + 1) * oh * ow];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0;
                for i in 0..k {
                    for j in 0..k {
                        acc += src[(oy * k + i) * x.w + ox * k + j];
                    }
                }
                dst[oy * ow + ox] = acc * scale;
            }
        }
    }
    y
}

pub fn avg_pool_backward(dy: &Tensor, k: usize, h: usize, w: usize) -> Tensor {
    let mut dx = Tensor::zeros(dy.n, dy.c, h, w);
    let scale = 1.0 / (k * k) as f64;
    for nc in 0..dy.n * dy.c {
        let src = &dy.data[nc * dy.h * dy.w..(nc + 1) * dy.h * dy.w];
        let dst = &mut dx.data[nc * h * w..(nc + 1) * h * w];
        for oy in 0..dy.h {
            for ox in 0..dy.w {
                let g = src[oy * dy.w + ox] * scale;
                for i in 0..k {
                    for j in 0..k {
                        dst[(oy * k + i) * w + ox * k + j] += g;
                    }
                }
            }
        }
    }
    dx
}

/// Concatenates two tensors along the channel axis.
pub fn concat_channels(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!((a.n, a.h, a.w), (b.n, b.h, b.w));
    let mut y = Tensor::zeros(a.n, a.c + b.c, a.h, a.w);
    let (la, lb) = (a.sample_len(), b.sample_len());
    for i in 0..a.n {
        let dst = y.sample_mut(i);
        dst[..la].copy_from_slice(a.sample(i));
        dst[la..la + lb].copy_from_slice(b.sample(i));
    }
    y
}

/// Splits a channel-concatenated gradient back into its two parts.
pub fn split_channels(y: &Tensor, ca: usize) -> (Tensor, Tensor) {
    let cb = y.c - ca;
    let mut a = Tensor::zeros(y.n, ca, y.h, y.w);
    let mut b = Tensor::zeros(y.n, cb, y.h, y.w);
    let la = a.sample_len();
    for i in 0..y.n {
        let src = y.sample(i);
        a.sample_mut(i).copy_from_slice(&src[..la]);
        b.sample_mut(i).copy_from_slice(&src[la..]);
    }
    (a, b)
}

/// Numerically stable `ln(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Row-wise softmax of a logit vector.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Cross-entropy of `logits` against a target distribution; returns the loss
/// and `d loss / d logits`.
pub fn soft_cross_entropy(logits: &[f64], target: &[f64]) -> (f64, Vec<f64>) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    let loss = target
        .iter()
        .zip(logits)
        .map(|(t, l)| if *t == 0.0 { 0.0 } else { -t * (l - lse) })
        .sum();
    let probs = softmax(logits);
    let tsum: f64 = target.iter().sum();
    let grad = probs
        .iter()
        .zip(target)
        .map(|(p, t)| p * tsum - t)
        .collect();
    (loss, grad)
}
