use serde::{Deserialize, Serialize};

use super::tensor::Param;

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64, beta1: f64, beta2: f64) -> Self {
        Adam {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// Applies one update using the gradients currently stored in `params`.
    /// A learning rate of zero leaves every parameter untouched.
    pub fn update(&mut self, params: &mut [&mut Param]) {
        if self.m.len() != params.len() {
            self.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.v = params.iter().map(|p| vec![0.0; p.len()]).collect();
        }
        self.step += 1;
        if self.lr == 0.0 {
            return;
        }
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.value.len() {
                let g = p.grad[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                p.value[i] -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}

/// SGD with Nesterov momentum and L2 weight decay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NesterovSgd {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Vec<f64>>,
}

impl NesterovSgd {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        NesterovSgd {
            momentum,
            weight_decay,
            velocity: Vec::new(),
        }
    }

    pub fn update(&mut self, params: &mut [&mut Param], lr: f64) {
        if self.velocity.len() != params.len() {
            self.velocity = params.iter().map(|p| vec![0.0; p.len()]).collect();
        }
        for (p, vel) in params.iter_mut().zip(&mut self.velocity) {
            for i in 0..p.value.len() {
                let g = p.grad[i] + self.weight_decay * p.value[i];
                vel[i] = self.momentum * vel[i] + g;
                p.value[i] -= lr * (g + self.momentum * vel[i]);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = Param::new(vec![2], vec![1.0, -1.0]);
        p.grad = vec![0.5, -3.0];
        let mut opt = Adam::new(0.1, 0.9, 0.999);
        opt.update(&mut [&mut p]);
        assert!((p.value[0] - 0.9).abs() < 1e-6);
        assert!((p.value[1] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn nesterov_minimizes_quadratic() {
        let mut p = Param::new(vec![1], vec![5.0]);
        let mut opt = NesterovSgd::new(0.9, 0.0);
        for _ in 0..200 {
            p.grad = vec![2.0 * p.value[0]];
            opt.update(&mut [&mut p], 0.05);
        }
        assert!(p.value[0].abs() < 1e-3);
    }
}
