//! Central finite differences against the analytic gradients of the three
//! adversarial losses and the classifier loss.

mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use reidgen::condense::{build_condensenet, CondenseConfig, ReidModel};
use reidgen::gan::{GanConfig, GanState, LatentBatch};
use reidgen::nn::{soft_cross_entropy, Mode, Param, Tensor};

use common::{fd_check, fd_close, FD_STEP as H};

fn check<S>(
    what: &str,
    state: &mut S,
    params: for<'a> fn(&'a mut S) -> Vec<&'a mut Param>,
    loss: &dyn Fn(&mut S) -> f64,
) -> usize {
    fd_check(state, params, loss).unwrap_or_else(|e| panic!("{what}: {e}"))
}

fn tiny_gan() -> GanState {
    let cfg = GanConfig {
        latent_dim: 4,
        image_size: 8,
        channel_schedule: vec![6],
        batch_size: 4,
        ..Default::default()
    };
    let state = GanState::init(&cfg, 11).unwrap();
    assert!(state.param_count() <= 5_000, "{}", state.param_count());
    state
}

fn images(n: usize, size: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..n * 3 * size * size).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::from_vec(n, 3, size, size, data)
}

fn d_params(s: &mut GanState) -> Vec<&mut Param> {
    s.discriminator.params_mut()
}

fn g_params(s: &mut GanState) -> Vec<&mut Param> {
    s.generator.params_mut()
}

#[test]
fn discriminator_loss_on_real_samples() {
    let mut s = tiny_gan();
    let x = images(4, 8, 1);
    let n = check("real", &mut s, d_params, &|s| s.real_loss_and_grad(&x));
    assert!(n > 100);
}

#[test]
fn discriminator_loss_on_generated_samples() {
    let mut s = tiny_gan();
    let x = images(4, 8, 2);
    check("fake", &mut s, d_params, &|s| s.fake_loss_and_grad(&x));
}

#[test]
fn generator_loss() {
    let mut s = tiny_gan();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let z = LatentBatch::sample(&mut rng, 4, 4);
    let n = check("generator", &mut s, g_params, &|s| s.generator_loss_and_grad(&z));
    assert!(n > 100);
}

fn tiny_reid() -> ReidModel {
    let cfg = CondenseConfig {
        input_size: 8,
        stem_channels: 8,
        stage_depths: vec![1, 1],
        growth_rates: vec![4, 4],
        num_classes: 4,
        ..Default::default()
    };
    let m = build_condensenet(&cfg, 5).unwrap();
    let count: usize = m.params().iter().map(|p| p.len()).sum();
    assert!(count <= 5_000, "{count}");
    m
}

/// Two hard labels and two uniform_soft synthetic targets.
fn targets() -> Vec<Vec<f64>> {
    vec![
        vec![0.0, 1.0, 0.0, 0.0],
        vec![1.0, 0.0, 0.0, 0.0],
        vec![0.25; 4],
        vec![0.25; 4],
    ]
}

fn reid_loss(m: &mut ReidModel, x: &Tensor, t: &[Vec<f64>]) -> f64 {
    m.zero_grad();
    let logits = m.forward(x, Mode::Train).unwrap();
    let n = t.len() as f64;
    let mut dl = Tensor::zeros(logits.n, 4, 1, 1);
    let mut total = 0.0;
    for (row, target) in t.iter().enumerate() {
        let (l, g) = soft_cross_entropy(logits.sample(row), target);
        total += l / n;
        for (d, g) in dl.sample_mut(row).iter_mut().zip(g) {
            *d = g / n;
        }
    }
    m.backward(&dl);
    total
}

fn reid_params(m: &mut ReidModel) -> Vec<&mut Param> {
    m.params_mut()
}

#[test]
fn classifier_loss_with_soft_targets() {
    let mut m = tiny_reid();
    let x = images(4, 8, 4);
    let t = targets();
    let n = check("classifier", &mut m, reid_params, &|m| reid_loss(m, &x, &t));
    assert!(n > 500);
}

#[test]
fn classifier_loss_after_condensation() {
    let mut m = tiny_reid();
    m.condensation_step(1).unwrap();
    m.condensation_step(2).unwrap();
    let x = images(4, 8, 6);
    let t = targets();
    check("condensed", &mut m, reid_params, &|m| reid_loss(m, &x, &t));
}

#[test]
fn soft_cross_entropy_matches_differences() {
    let logits = [0.3, -1.2, 2.0, 0.1];
    for target in targets() {
        let (_, g) = soft_cross_entropy(&logits, &target);
        for i in 0..4 {
            let mut up = logits;
            let mut down = logits;
            up[i] += H;
            down[i] -= H;
            let n = (soft_cross_entropy(&up, &target).0 - soft_cross_entropy(&down, &target).0) / (2.0 * H);
            assert!(fd_close(g[i], n), "{i}: {} vs {n}", g[i]);
        }
    }
}
