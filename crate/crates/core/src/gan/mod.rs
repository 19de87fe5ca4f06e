//! Semantically gated DCGAN training, warm starts and sampling.
//!
//! `D(x)` is the probability that `x` is an original sample; the "is
//! synthetic" score is `v = 1 − D(x)`. One training iteration is:
//!
//! 1. a discriminator step on real samples that passed the gate `F`,
//!    minimising `−log D(x)`;
//! 2. a discriminator step on `G(z)` minimising `−log(1 − D(G(z)))`, then a
//!    generator step minimising `−log D(G(z))` through the updated `D`.
//!
//! All losses are computed from logits with a stable softplus.

mod checkpoint;
mod net;
mod plan;

use std::path::PathBuf;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{patches_to_tensor, IdentityLabel, Labeling, Origin, Patch, Sample};
use crate::error::{Error, Result};
use crate::nn::layers::{sigmoid, softplus};
use crate::nn::{fingerprint, normal_vec, Adam, Mode, Param, Sequential, Tensor};
use crate::seed;
use crate::semfilter::{filter_samples, Gate};

pub use checkpoint::{export_loss_csv, GanCheckpoint, GAN_CHECKPOINT_FORMAT, GAN_CHECKPOINT_VERSION};
pub use plan::{build_augmentation_plan, AugmentationPlan, GeneratorRef, PlanEntry, PlanMode};

/// Session id given to generated samples.
pub const SYNTHETIC_SESSION: u32 = u32::MAX;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GanConfig {
    pub latent_dim: usize,
    pub image_size: usize,
    /// Generator channel widths from the 4×4 map upward; the discriminator
    /// uses the same widths in reverse.
    pub channel_schedule: Vec<usize>,
    pub lr_generator: f64,
    pub lr_discriminator: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch_size: usize,
    pub max_iterations: u64,
    pub filter_enabled: bool,
    pub filter_threshold: f64,
    /// Emit a checkpoint every this many iterations (0 disables).
    pub checkpoint_every: u64,
}

impl Default for GanConfig {
    fn default() -> Self {
        GanConfig {
            latent_dim: 64,
            image_size: 32,
            channel_schedule: vec![64, 32, 16],
            lr_generator: 2e-4,
            lr_discriminator: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            batch_size: 16,
            max_iterations: 2000,
            filter_enabled: true,
            filter_threshold: 0.0,
            checkpoint_every: 0,
        }
    }
}

impl GanConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim < 1 {
            return Err(Error::Config("latent_dim must be >= 1".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("batch_size must be >= 2".into()));
        }
        if !(0.0..=1.0).contains(&self.filter_threshold) {
            return Err(Error::Config("filter_threshold must lie in [0, 1]".into()));
        }
        if !(self.lr_generator >= 0.0 && self.lr_discriminator >= 0.0) {
            return Err(Error::Config("learning rates must be non-negative".into()));
        }
        let s = self.image_size;
        if s < 8 || !s.is_power_of_two() {
            return Err(Error::Architecture(format!(
                "image_size {s} is not a power of two >= 8"
            )));
        }
        let steps = s.trailing_zeros() as usize - 2;
        if self.channel_schedule.len() != steps {
            return Err(Error::Architecture(format!(
                "image_size {s} needs {steps} upsampling stages, channel_schedule has {}",
                self.channel_schedule.len()
            )));
        }
        if self.channel_schedule.contains(&0) {
            return Err(Error::Architecture("channel widths must be >= 1".into()));
        }
        Ok(())
    }

    /// True when both configs build identically shaped networks.
    pub fn same_architecture(&self, other: &GanConfig) -> bool {
        self.latent_dim == other.latent_dim
            && self.image_size == other.image_size
            && self.channel_schedule == other.channel_schedule
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Scratch,
    WarmStarted { base_id: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub d_loss_real: Option<f64>,
    pub d_loss_fake: f64,
    pub g_loss: f64,
}

/// Counts of real samples fed to `D` and of those re-verified by the gate.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GateAudit {
    pub real_batches: u64,
    pub real_samples: u64,
    pub approved_samples: u64,
}

impl GateAudit {
    pub fn compliance(&self) -> f64 {
        if self.real_samples == 0 {
            1.0
        } else {
            self.approved_samples as f64 / self.real_samples as f64
        }
    }
}

/// A batch of standard-normal latent vectors, shape `(n, latent_dim, 1, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentBatch {
    pub z: Tensor,
}

impl LatentBatch {
    pub fn sample<R: Rng>(rng: &mut R, n: usize, latent_dim: usize) -> Self {
        LatentBatch {
            z: Tensor::from_vec(n, latent_dim, 1, 1, normal_vec(rng, n * latent_dim, 0.0, 1.0)),
        }
    }

    pub fn zeros(n: usize, latent_dim: usize) -> Self {
        LatentBatch {
            z: Tensor::zeros(n, latent_dim, 1, 1),
        }
    }

    pub fn len(&self) -> usize {
        self.z.n
    }

    pub fn is_empty(&self) -> bool {
        self.z.n == 0
    }
}

/// Generator/discriminator pair with optimizer state and training history.
#[derive(Debug, Clone)]
pub struct GanState {
    pub config: GanConfig,
    /// `None` for the generic person generator, `Some(j)` for `G_j`.
    pub class: Option<IdentityLabel>,
    pub generator: Sequential,
    pub discriminator: Sequential,
    pub(crate) g_opt: Adam,
    pub(crate) d_opt: Adam,
    pub iteration: u64,
    pub loss_history: Vec<LossRecord>,
    pub(crate) rng: ChaCha8Rng,
    pub provenance: Provenance,
    pub audit: GateAudit,
    pub(crate) pending_real: Option<f64>,
}

/// Options for [`train_dcgan`] beyond the config.
#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Directory for periodic and divergence checkpoints.
    pub checkpoint_dir: Option<PathBuf>,
}

fn mean(v: impl Iterator<Item = f64>, n: usize) -> f64 {
    v.sum::<f64>() / n as f64
}

impl GanState {
    /// Fresh networks initialised from `seed` (DCGAN `N(0, 0.02)` weights).
    pub fn init(config: &GanConfig, seed_value: u64) -> Result<Self> {
        config.validate()?;
        let mut init_rng = seed::rng(seed_value, "gan-init", 0);
        let generator = net::build_generator(config, &mut init_rng);
        let discriminator = net::build_discriminator(config, &mut init_rng);
        Ok(GanState {
            config: config.clone(),
            class: None,
            generator,
            discriminator,
            g_opt: Adam::new(config.lr_generator, config.beta1, config.beta2),
            d_opt: Adam::new(config.lr_discriminator, config.beta1, config.beta2),
            iteration: 0,
            loss_history: Vec::new(),
            rng: seed::rng(seed_value, "gan-train", 0),
            provenance: Provenance::Scratch,
            audit: GateAudit::default(),
            pending_real: None,
        })
    }

    /// Content id of the current generator weights, e.g. `G3-1a2b3c4d5e6f`.
    pub fn id(&self) -> String {
        let prefix = match self.class {
            None => "G".to_string(),
            Some(j) => format!("G{j}"),
        };
        format!("{prefix}-{}", fingerprint(self.generator.params()))
    }

    pub fn generator_params(&self) -> Vec<&Param> {
        self.generator.params()
    }

    pub fn discriminator_params(&self) -> Vec<&Param> {
        self.discriminator.params()
    }

    pub fn param_count(&self) -> usize {
        self.generator.param_count() + self.discriminator.param_count()
    }

    /// Generator output in eval mode (running batch-norm statistics).
    pub fn generate(&self, z: &LatentBatch) -> Tensor {
        self.generator.infer(&z.z)
    }

    /// Discriminator probability `D(x)` of being original, eval mode.
    pub fn discriminate(&self, images: &Tensor) -> Vec<f64> {
        self.discriminator.infer(images).data.iter().map(|&l| sigmoid(l)).collect()
    }

    fn real_tensor(&self, batch: &[Sample]) -> Result<Tensor> {
        let size = self.config.image_size;
        if let Some(s) = batch.iter().find(|s| s.image.size() != size) {
            return Err(Error::Shape(format!(
                "real sample of side {} fed to a {size}×{size} discriminator",
                s.image.size()
            )));
        }
        Ok(patches_to_tensor(batch.iter().map(|s| &s.image), size))
    }

    /// `−log D(x)` averaged over `real`, with gradients left in `D`'s params.
    pub fn real_loss_and_grad(&mut self, real: &Tensor) -> f64 {
        self.discriminator.zero_grad();
        let logits = self.discriminator.forward(real, Mode::Train);
        let n = logits.n;
        let loss = mean(logits.data.iter().map(|&l| softplus(-l)), n);
        let mut dl = logits.clone();
        dl.data.iter_mut().for_each(|l| *l = -sigmoid(-*l) / n as f64);
        self.discriminator.backward(&dl);
        loss
    }

    /// `−log(1 − D(fake))` averaged, with gradients left in `D`'s params.
    pub fn fake_loss_and_grad(&mut self, fake: &Tensor) -> f64 {
        self.discriminator.zero_grad();
        let logits = self.discriminator.forward(fake, Mode::Train);
        let n = logits.n;
        let loss = mean(logits.data.iter().map(|&l| softplus(l)), n);
        let mut dl = logits.clone();
        dl.data.iter_mut().for_each(|l| *l = sigmoid(*l) / n as f64);
        self.discriminator.backward(&dl);
        loss
    }

    /// `−log D(G(z))` averaged, with gradients left in both nets' params.
    pub fn generator_loss_and_grad(&mut self, z: &LatentBatch) -> f64 {
        self.generator.zero_grad();
        let fake = self.generator.forward(&z.z, Mode::Train);
        self.generator_loss_on(&fake)
    }

    /// Generator loss for a `fake` batch produced by the last train-mode
    /// generator forward; backpropagates into both networks.
    fn generator_loss_on(&mut self, fake: &Tensor) -> f64 {
        self.discriminator.zero_grad();
        let logits = self.discriminator.forward(fake, Mode::Train);
        let n = logits.n;
        let loss = mean(logits.data.iter().map(|&l| softplus(-l)), n);
        let mut dl = logits.clone();
        dl.data.iter_mut().for_each(|l| *l = -sigmoid(-*l) / n as f64);
        let dfake = self.discriminator.backward(&dl);
        self.generator.backward(&dfake);
        loss
    }

    /// Step (1): update `D` on original samples that pass the gate.
    ///
    /// With filtering enabled every element is re-checked against `gate`;
    /// any failure aborts before the update with [`Error::GatingViolation`].
    pub fn discriminator_step_real(&mut self, batch: &[Sample], gate: Option<&Gate>) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::Training("empty real batch".into()));
        }
        let mut approved = 0u64;
        if self.config.filter_enabled {
            let gate = gate.ok_or_else(|| {
                Error::Detector("filtering is enabled but no detector was supplied".into())
            })?;
            for (i, s) in batch.iter().enumerate() {
                if !gate.verdict(s)?.passed() {
                    return Err(Error::GatingViolation { index: i });
                }
                approved += 1;
            }
        }
        let real = self.real_tensor(batch)?;
        let snapshot = self.discriminator.clone();
        let loss = self.real_loss_and_grad(&real);
        if !loss.is_finite() {
            self.discriminator = snapshot;
            return Err(Error::Divergence {
                stage: "discriminator (real)",
                iteration: self.iteration,
                checkpoint: None,
            });
        }
        self.d_opt.update(&mut self.discriminator.params_mut());
        self.audit.real_batches += 1;
        self.audit.real_samples += batch.len() as u64;
        self.audit.approved_samples += approved;
        self.pending_real = Some(loss);
        Ok(loss)
    }

    /// Step (2): update `D` on `G(z)`, then `G` through the updated `D`.
    /// Returns `(d_loss_fake, g_loss)` and closes the iteration.
    pub fn adversarial_step_fake(&mut self, z: &LatentBatch) -> Result<(f64, f64)> {
        if z.is_empty() || z.z.c != self.config.latent_dim {
            return Err(Error::Shape(format!(
                "latent batch must be (n >= 1, {}), got ({}, {})",
                self.config.latent_dim, z.z.n, z.z.c
            )));
        }
        let diverged = |state: &GanState, stage| Error::Divergence {
            stage,
            iteration: state.iteration,
            checkpoint: None,
        };
        let d_snapshot = self.discriminator.clone();
        let g_snapshot = self.generator.clone();
        self.generator.zero_grad();
        let fake = self.generator.forward(&z.z, Mode::Train);
        let d_loss_fake = self.fake_loss_and_grad(&fake);
        if !d_loss_fake.is_finite() {
            self.discriminator = d_snapshot;
            self.generator = g_snapshot;
            return Err(diverged(self, "discriminator (fake)"));
        }
        let d_opt_snapshot = self.d_opt.clone();
        self.d_opt.update(&mut self.discriminator.params_mut());
        let g_loss = self.generator_loss_on(&fake);
        if !g_loss.is_finite() {
            self.discriminator = d_snapshot;
            self.generator = g_snapshot;
            self.d_opt = d_opt_snapshot;
            return Err(diverged(self, "generator"));
        }
        self.g_opt.update(&mut self.generator.params_mut());
        self.loss_history.push(LossRecord {
            d_loss_real: self.pending_real.take(),
            d_loss_fake,
            g_loss,
        });
        self.iteration += 1;
        Ok((d_loss_fake, g_loss))
    }

    /// One full iteration: step (1) on `batch`, step (2) on fresh latents.
    pub fn iterate(&mut self, batch: &[Sample], gate: Option<&Gate>) -> Result<LossRecord> {
        self.discriminator_step_real(batch, gate)?;
        let z = LatentBatch::sample(&mut self.rng, self.config.batch_size, self.config.latent_dim);
        self.adversarial_step_fake(&z)?;
        Ok(*self.loss_history.last().expect("iteration recorded"))
    }
}

/// Runs `iterations` alternating iterations on `samples` (a whole corpus or a
/// class subset `X_j`). With filtering enabled only samples passing `gate`
/// are eligible as real inputs.
pub fn train_dcgan(
    state: &mut GanState,
    samples: &[Sample],
    gate: Option<&Gate>,
    iterations: u64,
    options: &TrainOptions,
) -> Result<()> {
    if iterations == 0 {
        return Ok(());
    }
    let pool: Vec<Sample> = if state.config.filter_enabled {
        let gate = gate.ok_or_else(|| {
            Error::Detector("filtering is enabled but no detector was supplied".into())
        })?;
        let (kept, _) = filter_samples(samples, gate.detector, gate.threshold)?;
        if kept.is_empty() {
            return Err(Error::EmptyFilteredSet);
        }
        kept
    } else {
        if samples.is_empty() {
            return Err(Error::EmptyDataset);
        }
        samples.to_vec()
    };
    let batch_size = state.config.batch_size;
    let every = state.config.checkpoint_every;
    for _ in 0..iterations {
        let batch: Vec<Sample> = (0..batch_size)
            .map(|_| pool[state.rng.gen_range(0..pool.len())].clone())
            .collect();
        match state.iterate(&batch, gate) {
            Ok(_) => {}
            Err(Error::Divergence { stage, iteration, .. }) => {
                let checkpoint = match &options.checkpoint_dir {
                    Some(dir) => Some(write_checkpoint(state, dir, "diverged")?),
                    None => None,
                };
                return Err(Error::Divergence {
                    stage,
                    iteration,
                    checkpoint,
                });
            }
            Err(e) => return Err(e),
        }
        if let (Some(dir), true) = (&options.checkpoint_dir, every > 0) {
            if state.iteration % every == 0 {
                write_checkpoint(state, dir, &format!("iter{:06}", state.iteration))?;
            }
        }
    }
    Ok(())
}

fn write_checkpoint(state: &GanState, dir: &std::path::Path, tag: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(format!("gan_{tag}.json"));
    GanCheckpoint::from_state(state).save(&path)?;
    Ok(path)
}

/// New state for class `target_class` whose networks are copies of `base`'s.
/// Optimizer moments and history start fresh; `target_config` may change
/// training hyper-parameters but not the architecture.
pub fn warm_start(
    base: &GanState,
    target_config: &GanConfig,
    target_class: IdentityLabel,
    seed_value: u64,
) -> Result<GanState> {
    target_config.validate()?;
    if !base.config.same_architecture(target_config) {
        return Err(Error::Architecture(format!(
            "base generator (latent {}, side {}, widths {:?}) does not match target (latent {}, side {}, widths {:?})",
            base.config.latent_dim,
            base.config.image_size,
            base.config.channel_schedule,
            target_config.latent_dim,
            target_config.image_size,
            target_config.channel_schedule
        )));
    }
    Ok(GanState {
        config: target_config.clone(),
        class: Some(target_class),
        generator: base.generator.clone(),
        discriminator: base.discriminator.clone(),
        g_opt: Adam::new(target_config.lr_generator, target_config.beta1, target_config.beta2),
        d_opt: Adam::new(target_config.lr_discriminator, target_config.beta1, target_config.beta2),
        iteration: 0,
        loss_history: Vec::new(),
        rng: seed::rng(seed_value, "gan-train", 0),
        provenance: Provenance::WarmStarted { base_id: base.id() },
        audit: GateAudit::default(),
        pending_real: None,
    })
}

/// Draws `count` synthetic samples from `state`'s generator (eval mode).
/// `ClassLabel` uses the generator's class, or `0` for the generic one.
pub fn sample_generator(state: &GanState, count: usize, seed_value: u64, labeling: Labeling) -> Vec<Sample> {
    const CHUNK: usize = 64;
    let mut rng = seed::rng(seed_value, "gan-sample", 0);
    let size = state.config.image_size;
    let generator_id = state.id();
    let label = match labeling {
        Labeling::ClassLabel => state.class.unwrap_or(IdentityLabel::UNKNOWN),
        _ => IdentityLabel::UNKNOWN,
    };
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let n = CHUNK.min(count - out.len());
        let z = LatentBatch::sample(&mut rng, n, state.config.latent_dim);
        let images = state.generate(&z);
        for i in 0..n {
            out.push(Sample {
                image: Patch::from_chw(size, images.sample(i)),
                label,
                session_id: SYNTHETIC_SESSION,
                tracklet_id: 0,
                origin: Origin::Synthetic {
                    generator_id: generator_id.clone(),
                    labeling,
                },
                face: None,
                source: None,
            });
        }
    }
    out
}
