use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::model::{CondenseConfig, ReidModel};
use crate::data::{patches_to_tensor, Origin, Sample};
use crate::error::{Error, Result};
use crate::gan::AugmentationPlan;
use crate::nn::layers::soft_cross_entropy;
use crate::nn::{Mode, NesterovSgd, Tensor};
use crate::seed;

#[derive(Debug, Clone, Default)]
pub struct ReidTrainOptions {
    pub seed: u64,
    /// Where a checkpoint is written if training diverges.
    pub checkpoint_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: u64,
    pub loss: f64,
    /// Running top-1 accuracy over the epoch's hard-labelled samples.
    pub train_prec1: f64,
    pub lr: f64,
    pub stage: usize,
}

/// Epochs after which condensing stages `1..C` run, for `epochs` total:
/// stage `s` follows epoch `max(1, ⌊s·E / (2(C − 1))⌋)`, so all pruning
/// happens during the first half of training.
pub fn condensation_epochs(factor: usize, epochs: usize) -> Vec<usize> {
    if factor <= 1 {
        return Vec::new();
    }
    (1..factor)
        .map(|s| (s * epochs / (2 * (factor - 1))).max(1))
        .collect()
}

/// Cosine annealing from `lr0` to 0 over `total` steps.
pub fn cosine_lr(lr0: f64, step: usize, total: usize) -> f64 {
    if total == 0 {
        return lr0;
    }
    0.5 * lr0 * (1.0 + (std::f64::consts::PI * step as f64 / total as f64).cos())
}

fn check_labels(train_set: &[Sample], plan: Option<&AugmentationPlan>, n_classes: usize) -> Result<()> {
    for (i, s) in train_set.iter().enumerate() {
        if s.label.index() >= n_classes {
            return Err(Error::Training(format!(
                "sample {i} has label {} but the model has {n_classes} classes",
                s.label
            )));
        }
        if let Origin::Synthetic { labeling, .. } = &s.origin {
            let planned = plan.is_some_and(|p| p.entries.iter().any(|e| e.labeling == *labeling));
            if !planned {
                return Err(Error::Training(format!(
                    "synthetic sample {i} uses {labeling:?} labeling, which the augmentation plan does not declare"
                )));
            }
        }
    }
    Ok(())
}

fn hard_label(target: &[f64]) -> Option<usize> {
    target.iter().position(|&t| t == 1.0)
}

/// Trains `model` for `config.epochs` epochs of Nesterov SGD with a cosine
/// schedule, running condensing stages at [`condensation_epochs`].
/// Original and synthetic samples are mixed without re-weighting.
pub fn train_reid(
    model: &mut ReidModel,
    train_set: &[Sample],
    plan: Option<&AugmentationPlan>,
    config: &CondenseConfig,
    options: &ReidTrainOptions,
) -> Result<Vec<EpochLog>> {
    config.validate_training()?;
    if !model.config.same_architecture(config) {
        return Err(Error::Architecture(
            "training config describes a different architecture than the model".into(),
        ));
    }
    if config.epochs == 0 {
        return Ok(Vec::new());
    }
    if train_set.is_empty() {
        return Err(Error::Training("empty training set".into()));
    }
    let k = model.num_classes();
    check_labels(train_set, plan, k)?;
    let size = model.config.input_size;
    if let Some(s) = train_set.iter().find(|s| s.image.size() != size) {
        return Err(Error::Shape(format!(
            "training patch side {} does not match model input {size}",
            s.image.size()
        )));
    }

    let targets: Vec<Vec<f64>> = train_set.iter().map(|s| s.target(k)).collect();
    let batch = config.batch_size;
    let per_epoch = train_set.len().div_ceil(batch);
    let total = per_epoch * config.epochs;
    let boundaries = condensation_epochs(config.condensation_factor, config.epochs);
    let mut opt = NesterovSgd::new(config.momentum, config.weight_decay);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut step = 0usize;
    let mut logs = Vec::with_capacity(config.epochs);

    for e in 1..=config.epochs {
        let mut rng = seed::rng(options.seed, "reid-shuffle", model.epoch);
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct, mut hard) = (0.0, 0usize, 0usize);
        let mut lr = config.lr;
        for idx in order.chunks(batch) {
            lr = cosine_lr(config.lr, step, total);
            let x = patches_to_tensor(idx.iter().map(|&i| &train_set[i].image), size);
            model.zero_grad();
            let logits = model.forward(&x, Mode::Train)?;
            let n = idx.len() as f64;
            let mut dlogits = Tensor::zeros(logits.n, k, 1, 1);
            let mut batch_loss = 0.0;
            for (row, &i) in idx.iter().enumerate() {
                let l = logits.sample(row);
                let (loss, grad) = soft_cross_entropy(l, &targets[i]);
                batch_loss += loss;
                for (d, g) in dlogits.sample_mut(row).iter_mut().zip(grad) {
                    *d = g / n;
                }
                if let Some(t) = hard_label(&targets[i]) {
                    hard += 1;
                    if super::argmax(l) == t {
                        correct += 1;
                    }
                }
            }
            if !batch_loss.is_finite() {
                let checkpoint = match &options.checkpoint_dir {
                    Some(dir) => {
                        std::fs::create_dir_all(dir).map_err(|err| Error::io(dir, err))?;
                        let path = dir.join("reid_diverged.json");
                        model.save(&path)?;
                        Some(path)
                    }
                    None => None,
                };
                return Err(Error::Divergence {
                    stage: "reid",
                    iteration: step as u64,
                    checkpoint,
                });
            }
            loss_sum += batch_loss;
            model.backward(&dlogits);
            opt.update(&mut model.params_mut(), lr);
            model.enforce_masks();
            step += 1;
        }
        model.epoch += 1;
        for (s, &b) in boundaries.iter().enumerate() {
            let stage = s + 1;
            if e >= b && model.stage < stage {
                model.condensation_step(stage)?;
            }
        }
        logs.push(EpochLog {
            epoch: model.epoch,
            loss: loss_sum / train_set.len() as f64,
            train_prec1: if hard == 0 { 0.0 } else { correct as f64 / hard as f64 },
            lr,
            stage: model.stage,
        });
        log::debug!("reid epoch {} loss {:.4}", model.epoch, loss_sum / train_set.len() as f64);
    }
    Ok(logs)
}

/// Writes `epoch,loss,train_prec1,lr,stage` rows.
pub fn write_train_log(logs: &[EpochLog], path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    let mut write = || -> std::io::Result<()> {
        writeln!(f, "epoch,loss,train_prec1,lr,stage")?;
        for l in logs {
            writeln!(f, "{},{},{},{},{}", l.epoch, l.loss, l.train_prec1, l.lr, l.stage)?;
        }
        f.flush()
    };
    write().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::condense::build_condensenet;

    #[test]
    fn schedule_places_stages_in_first_half() {
        assert_eq!(condensation_epochs(4, 120), vec![20, 40, 60]);
        assert_eq!(condensation_epochs(4, 2), vec![1, 1, 1]);
        assert!(condensation_epochs(1, 30).is_empty());
    }

    #[test]
    fn cosine_ends_at_zero() {
        assert_eq!(cosine_lr(0.1, 0, 10), 0.1);
        assert!(cosine_lr(0.1, 10, 10).abs() < 1e-15);
        assert!((cosine_lr(0.1, 5, 10) - 0.05).abs() < 1e-12);
    }

    #[test]
    fn zero_epochs_is_a_no_op() {
        let cfg = CondenseConfig {
            input_size: 8,
            stage_depths: vec![1],
            growth_rates: vec![4],
            ..Default::default()
        };
        let mut m = build_condensenet(&cfg, 0).unwrap();
        let before = m.clone();
        let train = CondenseConfig { epochs: 0, ..cfg };
        let logs = train_reid(&mut m, &[], None, &train, &ReidTrainOptions::default()).unwrap();
        assert!(logs.is_empty());
        assert_eq!(m.epoch, 0);
        assert_eq!(m.params(), before.params());
    }

    #[test]
    fn empty_training_set_is_an_error() {
        let cfg = CondenseConfig {
            input_size: 8,
            stage_depths: vec![1],
            growth_rates: vec![4],
            epochs: 1,
            ..Default::default()
        };
        let mut m = build_condensenet(&cfg, 0).unwrap();
        assert!(matches!(
            train_reid(&mut m, &[], None, &cfg, &ReidTrainOptions::default()),
            Err(Error::Training(_))
        ));
    }
}
