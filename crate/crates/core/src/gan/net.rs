//! DCGAN generator and discriminator ladders.
//!
//! The generator projects `z` to a `4×4×c₀` map and doubles the side with
//! each stride-2 transposed convolution until it reaches the image size:
//! `c₀ → c₁ → … → 3`, batch norm and ReLU between, tanh at the end. The
//! discriminator mirrors it with stride-2 convolutions and LeakyReLU(0.2),
//! no batch norm on its first layer, and a linear read-out producing one
//! logit per image.

use rand::Rng;

use super::GanConfig;
use crate::nn::{
    normal_vec, ActKind, Activation, BatchNorm2d, Conv2d, ConvTranspose2d, Layer, Linear, Sequential,
};

const INIT_STD: f64 = 0.02;

pub(crate) fn build_generator<R: Rng>(config: &GanConfig, rng: &mut R) -> Sequential {
    let sched = &config.channel_schedule;
    let c0 = sched[0];
    let mut layers = vec![
        Layer::Linear(Linear::new(
            config.latent_dim,
            c0 * 16,
            normal_vec(rng, config.latent_dim * c0 * 16, 0.0, INIT_STD),
        )),
        Layer::Reshape { c: c0, h: 4, w: 4 },
        Layer::Norm(BatchNorm2d::new(c0, normal_vec(rng, c0, 1.0, INIT_STD))),
        Layer::Act(Activation::new(ActKind::Relu)),
    ];
    for (i, &c_in) in sched.iter().enumerate() {
        let last = i + 1 == sched.len();
        let c_out = if last { 3 } else { sched[i + 1] };
        layers.push(Layer::Deconv(ConvTranspose2d::new(
            c_in,
            c_out,
            4,
            2,
            1,
            normal_vec(rng, c_in * c_out * 16, 0.0, INIT_STD),
        )));
        if last {
            layers.push(Layer::Act(Activation::new(ActKind::Tanh)));
        } else {
            layers.push(Layer::Norm(BatchNorm2d::new(c_out, normal_vec(rng, c_out, 1.0, INIT_STD))));
            layers.push(Layer::Act(Activation::new(ActKind::Relu)));
        }
    }
    Sequential::new(layers)
}

pub(crate) fn build_discriminator<R: Rng>(config: &GanConfig, rng: &mut R) -> Sequential {
    let sched = &config.channel_schedule;
    let mut layers = Vec::new();
    let mut c_in = 3;
    for (i, &c_out) in sched.iter().rev().enumerate() {
        layers.push(Layer::Conv(Conv2d::new(
            c_in,
            c_out,
            4,
            2,
            1,
            1,
            normal_vec(rng, c_out * c_in * 16, 0.0, INIT_STD),
        )));
        if i > 0 {
            layers.push(Layer::Norm(BatchNorm2d::new(c_out, normal_vec(rng, c_out, 1.0, INIT_STD))));
        }
        layers.push(Layer::Act(Activation::new(ActKind::LeakyRelu(0.2))));
        c_in = c_out;
    }
    layers.push(Layer::Linear(Linear::new(
        c_in * 16,
        1,
        normal_vec(rng, c_in * 16, 0.0, INIT_STD),
    )));
    Sequential::new(layers)
}
