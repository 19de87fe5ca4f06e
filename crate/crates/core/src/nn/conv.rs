//! 2-D convolution and transposed convolution on NCHW tensors.
//!
//! Both layers lower to matrix products through `im2col`/`col2im` and
//! `matrixmultiply::dgemm`. Weights of [`Conv2d`] may carry a binary mask;
//! the forward pass then uses `weight ⊙ mask`, so stored values under a zero
//! mask entry never influence the output and receive zero gradient.

use super::tensor::{Param, Tensor};

/// Output side length of a convolution.
pub fn conv_out(size: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = size + 2 * pad;
    if padded < k {
        return None;
    }
    Some((padded - k) / stride + 1)
}

/// Unfolds `input` (channels × h × w) into a `(channels·k·k) × (oh·ow)` matrix.
#[allow(clippy::too_many_arguments)]
pub(crate) fn im2col(
    input: &[f64],
    channels: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
    cols: &mut [f64],
) {
    let p = oh * ow;
    debug_assert_eq!(cols.len(), channels * k * k * p);
    for c in 0..channels {
        let plane = &input[c * h * w..(c + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let row = ((c * k + ki) * k + kj) * p;
                let dst = &mut cols[row..row + p];
                for oy in 0..oh {
                    let iy = (oy * stride + ki) as isize - pad as isize;
                    let line = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= h as isize {
                        line.iter_mut().for_each(|v| *v = 0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * stride + kj) as isize - pad as isize;
                        *v = if ix < 0 || ix >= w as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-and-adds columns back into `out`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn col2im(
    cols: &[f64],
    channels: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
    out: &mut [f64],
) {
    let p = oh * ow;
    for c in 0..channels {
        let plane = &mut out[c * h * w..(c + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let row = ((c * k + ki) * k + kj) * p;
                let src = &cols[row..row + p];
                for oy in 0..oh {
                    let iy = (oy * stride + ki) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let line = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..ow {
                        let ix = (ox * stride + kj) as isize - pad as isize;
                        if ix >= 0 && (ix as usize) < w {
                            line[ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// `c (m×n) = alpha · a (m×k) · b (k×n) + beta · c`, with explicit strides.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    debug_assert!(a.len() > (m - 1) * rsa + (k - 1) * csa);
    debug_assert!(b.len() > (k - 1) * rsb + (n - 1) * csb);
    debug_assert!(c.len() >= m * n);
    // SAFETY: the asserted bounds cover every element dgemm touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Grouped 2-D convolution without bias.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub groups: usize,
    /// Shape `[out, in/groups, k, k]`.
    pub weight: Param,
    /// Optional 0/1 mask with the weight's shape.
    pub mask: Option<Vec<f64>>,
    input: Option<Tensor>,
}

impl Conv2d {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        groups: usize,
        weight: Vec<f64>,
    ) -> Self {
        assert!(groups >= 1 && in_channels % groups == 0 && out_channels % groups == 0);
        let shape = vec![out_channels, in_channels / groups, kernel, kernel];
        Conv2d {
            in_channels,
            out_channels,
            kernel,
            stride,
            pad,
            groups,
            weight: Param::new(shape, weight),
            mask: None,
            input: None,
        }
    }

    pub fn weight_len(out_channels: usize, in_channels: usize, groups: usize, kernel: usize) -> usize {
        out_channels * (in_channels / groups) * kernel * kernel
    }

    pub fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        (
            conv_out(h, self.kernel, self.stride, self.pad).expect("kernel larger than input"),
            conv_out(w, self.kernel, self.stride, self.pad).expect("kernel larger than input"),
        )
    }

    fn effective_weight(&self) -> std::borrow::Cow<'_, [f64]> {
        match &self.mask {
            Some(mask) => std::borrow::Cow::Owned(
                self.weight
                    .value
                    .iter()
                    .zip(mask)
                    .map(|(w, m)| w * m)
                    .collect(),
            ),
            None => std::borrow::Cow::Borrowed(&self.weight.value),
        }
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.pad == 0
    }

    /// Forward pass without caching (inference).
    pub fn apply(&self, x: &Tensor) -> Tensor {
        assert_eq!(x.c, self.in_channels, "conv input channels");
        let (oh, ow) = self.output_size(x.h, x.w);
        let mut y = Tensor::zeros(x.n, self.out_channels, oh, ow);
        let weight = self.effective_weight();
        let icg = self.in_channels / self.groups;
        let ocg = self.out_channels / self.groups;
        let kk = icg * self.kernel * self.kernel;
        let p = oh * ow;
        let mut cols = vec![0.0; if self.is_pointwise() { 0 } else { kk * p }];
        for i in 0..x.n {
            let xs = x.sample(i);
            let ys = y.sample_mut(i);
            for g in 0..self.groups {
                let xin = &xs[g * icg * x.h * x.w..(g + 1) * icg * x.h * x.w];
                let colref: &[f64] = if self.is_pointwise() {
                    xin
                } else {
                    im2col(
                        xin, icg, x.h, x.w, self.kernel, self.stride, self.pad, oh, ow, &mut cols,
                    );
                    &cols
                };
                let wg = &weight[g * ocg * kk..(g + 1) * ocg * kk];
                let yg = &mut ys[g * ocg * p..(g + 1) * ocg * p];
                gemm(ocg, kk, p, wg, kk, 1, colref, p, 1, 0.0, yg);
            }
        }
        y
    }

    pub fn forward(&mut self, x: &Tensor) -> Tensor {
        let y = self.apply(x);
        self.input = Some(x.clone());
        y
    }

    /// Accumulates the weight gradient and returns the input gradient.
    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let x = self.input.take().expect("conv backward without forward");
        let (oh, ow) = (dy.h, dy.w);
        let icg = self.in_channels / self.groups;
        let ocg = self.out_channels / self.groups;
        let kk = icg * self.kernel * self.kernel;
        let p = oh * ow;
        let weight = self.effective_weight().into_owned();
        if self.weight.grad.len() != self.weight.value.len() {
            self.weight.zero_grad();
        }
        let mut dw = vec![0.0; weight.len()];
        let mut dx = Tensor::zeros(x.n, x.c, x.h, x.w);
        let pointwise = self.is_pointwise();
        let mut cols = vec![0.0; kk * p];
        let mut dcols = vec![0.0; kk * p];
        for i in 0..x.n {
            let xs = x.sample(i);
            let dys = dy.sample(i);
            let dxs = dx.sample_mut(i);
            for g in 0..self.groups {
                let plane = icg * x.h * x.w;
                let xin = &xs[g * plane..(g + 1) * plane];
                let colref: &[f64] = if pointwise {
                    xin
                } else {
                    im2col(
                        xin, icg, x.h, x.w, self.kernel, self.stride, self.pad, oh, ow, &mut cols,
                    );
                    &cols
                };
                let dyg = &dys[g * ocg * p..(g + 1) * ocg * p];
                // dW_g += dY_g · cols^T
                gemm(
                    ocg,
                    p,
                    kk,
                    dyg,
                    p,
                    1,
                    colref,
                    1,
                    p,
                    1.0,
                    &mut dw[g * ocg * kk..(g + 1) * ocg * kk],
                );
                // dcols = W_g^T · dY_g
                let wg = &weight[g * ocg * kk..(g + 1) * ocg * kk];
                if pointwise {
                    gemm(kk, ocg, p, wg, 1, kk, dyg, p, 1, 1.0, &mut dxs[g * plane..(g + 1) * plane]);
                } else {
                    gemm(kk, ocg, p, wg, 1, kk, dyg, p, 1, 0.0, &mut dcols);
                    col2im(
                        &dcols,
                        icg,
                        x.h,
                        x.w,
                        self.kernel,
                        self.stride,
                        self.pad,
                        oh,
                        ow,
                        &mut dxs[g * plane..(g + 1) * plane],
                    );
                }
            }
        }
        match &self.mask {
            Some(mask) => {
                for ((g, d), m) in self.weight.grad.iter_mut().zip(&dw).zip(mask) {
                    *g += d * m;
                }
            }
            None => {
                for (g, d) in self.weight.grad.iter_mut().zip(&dw) {
                    *g += d;
                }
            }
        }
        dx
    }
}

/// Transposed convolution (fractionally strided), groups = 1, no bias.
#[derive(Debug, Clone)]
pub struct ConvTranspose2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    /// Shape `[in, out, k, k]`.
    pub weight: Param,
    input: Option<Tensor>,
}

impl ConvTranspose2d {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        weight: Vec<f64>,
    ) -> Self {
        ConvTranspose2d {
            in_channels,
            out_channels,
            kernel,
            stride,
            pad,
            weight: Param::new(vec![in_channels, out_channels, kernel, kernel], weight),
            input: None,
        }
    }

    pub fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h - 1) * self.stride + self.kernel - 2 * self.pad,
            (w - 1) * self.stride + self.kernel - 2 * self.pad,
        )
    }

    pub fn apply(&self, x: &Tensor) -> Tensor {
        assert_eq!(x.c, self.in_channels, "deconv input channels");
        let (oh, ow) = self.output_size(x.h, x.w);
        let mut y = Tensor::zeros(x.n, self.out_channels, oh, ow);
        let kk = self.out_channels * self.kernel * self.kernel;
        let p = x.h * x.w;
        let mut cols = vec![0.0; kk * p];
        for i in 0..x.n {
            // cols = W^T · X
            gemm(
                kk,
                self.in_channels,
                p,
                &self.weight.value,
                1,
                kk,
                x.sample(i),
                p,
                1,
                0.0,
                &mut cols,
            );
            col2im(
                &cols,
                self.out_channels,
                oh,
                ow,
                self.kernel,
                self.stride,
                self.pad,
                x.h,
                x.w,
                y.sample_mut(i),
            );
        }
        y
    }

    pub fn forward(&mut self, x: &Tensor) -> Tensor {
        let y = self.apply(x);
        self.input = Some(x.clone());
        y
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let x = self.input.take().expect("deconv backward without forward");
        if self.weight.grad.len() != self.weight.value.len() {
            self.weight.zero_grad();
        }
        let kk = self.out_channels * self.kernel * self.kernel;
        let p = x.h * x.w;
        let mut dcols = vec![0.0; kk * p];
        let mut dx = Tensor::zeros(x.n, x.c, x.h, x.w);
        for i in 0..x.n {
            im2col(
                dy.sample(i),
                self.out_channels,
                dy.h,
                dy.w,
                self.kernel,
                self.stride,
                self.pad,
                x.h,
                x.w,
                &mut dcols,
            );
            // dX = W · dcols
            gemm(
                self.in_channels,
                kk,
                p,
                &self.weight.value,
                kk,
                1,
                &dcols,
                p,
                1,
                0.0,
                dx.sample_mut(i),
            );
            // dW += X · dcols^T
            gemm(
                self.in_channels,
                p,
                kk,
                x.sample(i),
                p,
                1,
                &dcols,
                1,
                p,
                1.0,
                &mut self.weight.grad,
            );
        }
        dx
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(
        x: &Tensor,
        w: &[f64],
        out_c: usize,
        k: usize,
        s: usize,
        p: usize,
        groups: usize,
    ) -> Tensor {
        let oh = conv_out(x.h, k, s, p).unwrap();
        let ow = conv_out(x.w, k, s, p).unwrap();
        let icg = x.c / groups;
        let ocg = out_c / groups;
        let mut y = Tensor::zeros(x.n, out_c, oh, ow);
        for n in 0..x.n {
            for o in 0..out_c {
                let g = o / ocg;
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = 0.0;
                        for ci in 0..icg {
                            let c = g * icg + ci;
                            for ki in 0..k {
                                for kj in 0..k {
                                    let iy = (oy * s + ki) as isize - p as isize;
                                    let ix = (ox * s + kj) as isize - p as isize;
                                    if iy < 0 || ix < 0 || iy >= x.h as isize || ix >= x.w as isize {
                                        continue;
                                    }
                                    acc += w[((o * icg + ci) * k + ki) * k + kj]
                                        * x.data[((n * x.c + c) * x.h + iy as usize) * x.w + ix as usize];
                                }
                            }
                        }
                        y.data[((n * out_c + o) * oh + oy) * ow + ox] = acc;
                    }
                }
            }
        }
        y
    }

    fn ramp(len: usize, scale: f64) -> Vec<f64> {
        (0..len).map(|i| ((i * 37 % 11) as f64 - 5.0) * scale).collect()
    }

    #[test]
    fn grouped_conv_matches_naive() {
        let x = Tensor::from_vec(2, 4, 5, 5, ramp(200, 0.1));
        let w = ramp(Conv2d::weight_len(6, 4, 2, 3), 0.05);
        let conv = Conv2d::new(4, 6, 3, 2, 1, 2, w.clone());
        let got = conv.apply(&x);
        let want = naive_conv(&x, &w, 6, 3, 2, 1, 2);
        assert_eq!(got.shape(), want.shape());
        for (a, b) in got.data.iter().zip(&want.data) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn transposed_conv_is_adjoint_of_conv() {
        // <conv(x), y> == <x, deconv(y)> when both share the same weights.
        let x = Tensor::from_vec(1, 3, 8, 8, ramp(192, 0.1));
        let y = Tensor::from_vec(1, 2, 4, 4, ramp(32, 0.2));
        let w = ramp(2 * 3 * 16, 0.03);
        let conv = Conv2d::new(3, 2, 4, 2, 1, 1, w.clone());
        // deconv weight layout is [in=2, out=3, k, k], same memory as conv [out=2, in=3, k, k]
        let deconv = ConvTranspose2d::new(2, 3, 4, 2, 1, w);
        let cx = conv.apply(&x);
        let dy = deconv.apply(&y);
        assert_eq!(dy.shape(), [1, 3, 8, 8]);
        let lhs: f64 = cx.data.iter().zip(&y.data).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data.iter().zip(&dy.data).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
    }

    #[test]
    fn masked_weights_do_not_contribute() {
        let x = Tensor::from_vec(1, 4, 3, 3, ramp(36, 0.3));
        let w = ramp(8, 0.1);
        let mut conv = Conv2d::new(4, 2, 1, 1, 0, 1, w);
        conv.mask = Some(vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0, 0.0]);
        let before = conv.apply(&x);
        conv.weight.value[1] = 1e6;
        conv.weight.value[7] = -3.0;
        assert_eq!(before, conv.apply(&x));
    }
}
