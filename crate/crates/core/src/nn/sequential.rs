use super::conv::{Conv2d, ConvTranspose2d};
use super::layers::{Activation, BatchNorm2d, BnStats, Linear, Mode};
use super::tensor::{Param, Tensor};

#[derive(Debug, Clone)]
pub enum Layer {
    Linear(Linear),
    /// Reinterprets each flat sample as `(c, h, w)`.
    Reshape { c: usize, h: usize, w: usize },
    Conv(Conv2d),
    Deconv(ConvTranspose2d),
    Norm(BatchNorm2d),
    Act(Activation),
}

/// A chain of layers with a matching backward pass.
#[derive(Debug, Clone, Default)]
pub struct Sequential {
    pub layers: Vec<Layer>,
    input_shapes: Vec<[usize; 4]>,
}

impl Sequential {
    pub fn new(layers: Vec<Layer>) -> Self {
        Sequential {
            layers,
            input_shapes: Vec::new(),
        }
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Tensor {
        self.input_shapes.clear();
        let mut h = x.clone();
        for layer in &mut self.layers {
            self.input_shapes.push(h.shape());
            h = match layer {
                Layer::Linear(l) => l.forward(&h),
                Layer::Reshape { c, h: hh, w } => h.reshape(*c, *hh, *w),
                Layer::Conv(l) => l.forward(&h),
                Layer::Deconv(l) => l.forward(&h),
                Layer::Norm(l) => l.forward(&h, mode),
                Layer::Act(l) => l.forward(&h),
            };
        }
        h
    }

    /// Eval-mode forward that leaves no cached state behind.
    pub fn infer(&self, x: &Tensor) -> Tensor {
        let mut h = x.clone();
        for layer in &self.layers {
            h = match layer {
                Layer::Linear(l) => l.apply(&h),
                Layer::Reshape { c, h: hh, w } => h.reshape(*c, *hh, *w),
                Layer::Conv(l) => l.apply(&h),
                Layer::Deconv(l) => l.apply(&h),
                Layer::Norm(l) => l.apply_eval(&h),
                Layer::Act(l) => l.apply(&h),
            };
        }
        h
    }

    /// Backpropagates `dy`, accumulating parameter gradients; returns the
    /// gradient with respect to the input of the last `forward`.
    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let mut g = dy.clone();
        for (layer, shape) in self.layers.iter_mut().zip(&self.input_shapes).rev() {
            g = match layer {
                Layer::Linear(l) => l.backward(&g),
                Layer::Reshape { .. } => g.reshape(shape[1], shape[2], shape[3]),
                Layer::Conv(l) => l.backward(&g),
                Layer::Deconv(l) => l.backward(&g),
                Layer::Norm(l) => l.backward(&g),
                Layer::Act(l) => l.backward(&g),
            };
        }
        g
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Linear(l) => {
                    out.push(&l.weight);
                    out.push(&l.bias);
                }
                Layer::Conv(l) => out.push(&l.weight),
                Layer::Deconv(l) => out.push(&l.weight),
                Layer::Norm(l) => {
                    out.push(&l.gamma);
                    out.push(&l.beta);
                }
                Layer::Reshape { .. } | Layer::Act(_) => {}
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Linear(l) => {
                    out.push(&mut l.weight);
                    out.push(&mut l.bias);
                }
                Layer::Conv(l) => out.push(&mut l.weight),
                Layer::Deconv(l) => out.push(&mut l.weight),
                Layer::Norm(l) => {
                    out.push(&mut l.gamma);
                    out.push(&mut l.beta);
                }
                Layer::Reshape { .. } | Layer::Act(_) => {}
            }
        }
        out
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn bn_stats(&self) -> Vec<BnStats> {
        self.layers
            .iter()
            .filter_map(|l| match l {
                Layer::Norm(bn) => Some(bn.stats()),
                _ => None,
            })
            .collect()
    }

    pub fn set_bn_stats(&mut self, stats: &[BnStats]) -> Result<(), String> {
        let mut it = stats.iter();
        for layer in &mut self.layers {
            if let Layer::Norm(bn) = layer {
                let s = it.next().ok_or("too few batch-norm statistics")?;
                if s.mean.len() != bn.channels || s.var.len() != bn.channels {
                    return Err("batch-norm statistics have the wrong width".into());
                }
                bn.set_stats(s);
            }
        }
        if it.next().is_some() {
            return Err("too many batch-norm statistics".into());
        }
        Ok(())
    }
}
