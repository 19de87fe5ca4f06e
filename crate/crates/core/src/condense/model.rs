use serde::{Deserialize, Serialize};

use crate::data::{patches_to_tensor, Patch, Sample};
use crate::error::{Error, Result};
use crate::nn::layers::{avg_pool, avg_pool_backward, concat_channels, softmax, split_channels};
use crate::nn::{normal_vec, ActKind, Activation, BatchNorm2d, Conv2d, Linear, Mode, Param, Tensor};
use crate::seed;

use super::ScoreVector;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CondenseConfig {
    pub input_size: usize,
    pub stem_channels: usize,
    /// Dense layers per stage; stages are separated by 2×2 average pooling.
    pub stage_depths: Vec<usize>,
    pub growth_rates: Vec<usize>,
    /// Width of the 1×1 bottleneck as a multiple of the growth rate.
    pub bottleneck: usize,
    pub groups: usize,
    pub condensation_factor: usize,
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    /// `N + 1`, the unknown class included.
    pub num_classes: usize,
}

impl Default for CondenseConfig {
    fn default() -> Self {
        CondenseConfig {
            input_size: 32,
            stem_channels: 16,
            stage_depths: vec![2, 2, 2],
            growth_rates: vec![8, 8, 8],
            bottleneck: 4,
            groups: 4,
            condensation_factor: 4,
            epochs: 30,
            lr: 0.1,
            momentum: 0.9,
            weight_decay: 1e-4,
            batch_size: 32,
            num_classes: 4,
        }
    }
}

impl CondenseConfig {
    /// Checks hyper-parameters that matter for training. `epochs` may be 0
    /// here; building a model additionally requires [`Self::validate`].
    pub fn validate_training(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config("lr must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 {
            return Err(Error::Config("momentum must lie in [0, 1), weight_decay >= 0".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("batch_size must be >= 2".into()));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_training()?;
        if self.epochs < 1 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.condensation_factor < 1 || self.groups < 1 || self.bottleneck < 1 {
            return Err(Error::Config(
                "condensation_factor, groups and bottleneck must be >= 1".into(),
            ));
        }
        if self.num_classes < 2 {
            return Err(Error::Config("num_classes must be >= 2".into()));
        }
        let arch = |m: String| Err(Error::Architecture(m));
        if self.stage_depths.is_empty() || self.stage_depths.len() != self.growth_rates.len() {
            return arch("stage_depths and growth_rates must be non-empty and equally long".into());
        }
        let shrink = 1usize << (self.stage_depths.len() - 1);
        if self.input_size < shrink || self.input_size % shrink != 0 {
            return arch(format!(
                "input_size {} cannot be halved {} times",
                self.input_size,
                self.stage_depths.len() - 1
            ));
        }
        let g = self.groups;
        let mut channels = self.stem_channels;
        if channels == 0 {
            return arch("stem_channels must be >= 1".into());
        }
        for (s, (&depth, &growth)) in self.stage_depths.iter().zip(&self.growth_rates).enumerate() {
            if growth == 0 || growth % g != 0 {
                return arch(format!("growth rate {growth} of stage {s} is not divisible by {g} groups"));
            }
            for l in 0..depth {
                if channels % g != 0 {
                    return arch(format!(
                        "layer {l} of stage {s} has {channels} input channels, not divisible by {g} groups"
                    ));
                }
                channels += growth;
            }
        }
        Ok(())
    }

    pub fn same_architecture(&self, other: &CondenseConfig) -> bool {
        self.input_size == other.input_size
            && self.stem_channels == other.stem_channels
            && self.stage_depths == other.stage_depths
            && self.growth_rates == other.growth_rates
            && self.bottleneck == other.bottleneck
            && self.groups == other.groups
            && self.condensation_factor == other.condensation_factor
            && self.num_classes == other.num_classes
    }

    /// Channels entering the classifier head.
    pub fn final_channels(&self) -> usize {
        self.stem_channels
            + self
                .stage_depths
                .iter()
                .zip(&self.growth_rates)
                .map(|(d, g)| d * g)
                .sum::<usize>()
    }
}

fn kaiming<R: rand::Rng>(rng: &mut R, len: usize, k: usize, c_out: usize) -> Vec<f64> {
    normal_vec(rng, len, 0.0, (2.0 / (k * k * c_out) as f64).sqrt())
}

/// 1×1 convolution whose input connections are pruned group by group.
///
/// Output channel `o` belongs to group `o % groups`. All outputs of a group
/// share one set of live inputs.
#[derive(Debug, Clone)]
pub struct LearnedGroupConv {
    pub conv: Conv2d,
    pub groups: usize,
    pub condensation_factor: usize,
    pub stage: usize,
}

impl LearnedGroupConv {
    pub fn new(in_channels: usize, out_channels: usize, groups: usize, factor: usize, weight: Vec<f64>) -> Self {
        let mut conv = Conv2d::new(in_channels, out_channels, 1, 1, 0, 1, weight);
        conv.mask = Some(vec![1.0; in_channels * out_channels]);
        LearnedGroupConv {
            conv,
            groups,
            condensation_factor: factor,
            stage: 0,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.conv.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.conv.out_channels
    }

    pub fn mask(&self) -> &[f64] {
        self.conv.mask.as_deref().expect("learned group conv carries a mask")
    }

    pub fn live_weights(&self) -> usize {
        self.mask().iter().filter(|&&m| m != 0.0).count()
    }

    /// Live inputs of output group `g`.
    pub fn live_inputs(&self, g: usize) -> Vec<usize> {
        let c_in = self.in_channels();
        let mask = self.mask();
        (0..c_in).filter(|&i| mask[g * c_in + i] != 0.0).collect()
    }

    /// Inputs each group keeps after stage `s`: `⌈(C − s)/C · fan_in⌉`.
    pub fn kept_after(&self, s: usize) -> usize {
        let c = self.condensation_factor;
        ((c - s) * self.in_channels()).div_ceil(c)
    }

    /// Mean `|w|` over the outputs of group `g` for every input channel.
    pub fn importance(&self, g: usize) -> Vec<f64> {
        let c_in = self.in_channels();
        let outs: Vec<usize> = (g..self.out_channels()).step_by(self.groups).collect();
        let w = &self.conv.weight.value;
        (0..c_in)
            .map(|i| outs.iter().map(|&o| w[o * c_in + i].abs()).sum::<f64>() / outs.len() as f64)
            .collect()
    }

    /// Masks the least important live inputs of every group until each keeps
    /// `kept_after(stage)`; ties prune the lower input index first.
    pub fn condense(&mut self, stage: usize) -> Result<()> {
        if stage != self.stage + 1 || stage >= self.condensation_factor {
            return Err(Error::Schedule(format!(
                "condensing stage {stage} requested at stage {} with factor {}",
                self.stage, self.condensation_factor
            )));
        }
        let keep = self.kept_after(stage);
        let (c_in, c_out) = (self.in_channels(), self.out_channels());
        let mut drop_sets = Vec::with_capacity(self.groups);
        for g in 0..self.groups {
            let imp = self.importance(g);
            let mut live = self.live_inputs(g);
            live.sort_by(|&a, &b| imp[a].total_cmp(&imp[b]).then(a.cmp(&b)));
            drop_sets.push(live[..live.len() - keep].to_vec());
        }
        let mask = self.conv.mask.as_mut().expect("mask");
        for o in 0..c_out {
            for &i in &drop_sets[o % self.groups] {
                mask[o * c_in + i] = 0.0;
            }
        }
        self.stage = stage;
        self.enforce_mask();
        Ok(())
    }

    /// Zeroes stored weights wherever the mask is 0.
    pub fn enforce_mask(&mut self) {
        let mask = self.conv.mask.as_ref().expect("mask");
        for (w, m) in self.conv.weight.value.iter_mut().zip(mask) {
            if *m == 0.0 {
                *w = 0.0;
            }
        }
    }
}

/// `x ↦ [x, conv3×3(relu(bn(lgc(relu(bn(x))))))]`.
#[derive(Debug, Clone)]
pub struct DenseLayer {
    pub bn1: BatchNorm2d,
    act1: Activation,
    pub lgc: LearnedGroupConv,
    pub bn2: BatchNorm2d,
    act2: Activation,
    pub conv: Conv2d,
}

impl DenseLayer {
    fn new<R: rand::Rng>(c_in: usize, growth: usize, config: &CondenseConfig, rng: &mut R) -> Self {
        let mid = config.bottleneck * growth;
        let g = config.groups;
        DenseLayer {
            bn1: BatchNorm2d::new(c_in, vec![1.0; c_in]),
            act1: Activation::new(ActKind::Relu),
            lgc: LearnedGroupConv::new(c_in, mid, g, config.condensation_factor, kaiming(rng, mid * c_in, 1, mid)),
            bn2: BatchNorm2d::new(mid, vec![1.0; mid]),
            act2: Activation::new(ActKind::Relu),
            conv: Conv2d::new(mid, growth, 3, 1, 1, g, kaiming(rng, growth * (mid / g) * 9, 3, growth)),
        }
    }

    fn apply(&self, x: &Tensor) -> Tensor {
        let h = self.act1.apply(&self.bn1.apply_eval(x));
        let h = self.lgc.conv.apply(&h);
        let h = self.act2.apply(&self.bn2.apply_eval(&h));
        concat_channels(x, &self.conv.apply(&h))
    }

    fn forward(&mut self, x: &Tensor, mode: Mode) -> Tensor {
        let h = self.act1.forward(&self.bn1.forward(x, mode));
        let h = self.lgc.conv.forward(&h);
        let h = self.act2.forward(&self.bn2.forward(&h, mode));
        concat_channels(x, &self.conv.forward(&h))
    }

    fn backward(&mut self, dy: &Tensor, c_in: usize) -> Tensor {
        let (mut dx, dnew) = split_channels(dy, c_in);
        let g = self.conv.backward(&dnew);
        let g = self.bn2.backward(&self.act2.backward(&g));
        let g = self.lgc.conv.backward(&g);
        let g = self.bn1.backward(&self.act1.backward(&g));
        dx.data.iter_mut().zip(&g.data).for_each(|(a, b)| *a += b);
        dx
    }

    fn params(&self) -> [&Param; 6] {
        [
            &self.bn1.gamma,
            &self.bn1.beta,
            &self.lgc.conv.weight,
            &self.bn2.gamma,
            &self.bn2.beta,
            &self.conv.weight,
        ]
    }

    fn params_mut(&mut self) -> [&mut Param; 6] {
        [
            &mut self.bn1.gamma,
            &mut self.bn1.beta,
            &mut self.lgc.conv.weight,
            &mut self.bn2.gamma,
            &mut self.bn2.beta,
            &mut self.conv.weight,
        ]
    }
}

/// The re-identification classifier `R`.
#[derive(Debug, Clone)]
pub struct ReidModel {
    pub config: CondenseConfig,
    pub stem: Conv2d,
    pub stages: Vec<Vec<DenseLayer>>,
    pub head_bn: BatchNorm2d,
    head_act: Activation,
    pub head: Linear,
    /// Completed training epochs.
    pub epoch: u64,
    /// Completed condensing stages.
    pub stage: usize,
    cache: Vec<[usize; 4]>,
}

/// Builds a freshly initialised, fully dense model.
pub fn build_condensenet(config: &CondenseConfig, seed_value: u64) -> Result<ReidModel> {
    config.validate()?;
    let mut rng = seed::rng(seed_value, "condense-init", 0);
    let s = config.stem_channels;
    let stem = Conv2d::new(3, s, 3, 1, 1, 1, kaiming(&mut rng, s * 27, 3, s));
    let mut channels = s;
    let mut stages = Vec::new();
    for (&depth, &growth) in config.stage_depths.iter().zip(&config.growth_rates) {
        let mut layers = Vec::new();
        for _ in 0..depth {
            layers.push(DenseLayer::new(channels, growth, config, &mut rng));
            channels += growth;
        }
        stages.push(layers);
    }
    let k = config.num_classes;
    Ok(ReidModel {
        config: config.clone(),
        stem,
        stages,
        head_bn: BatchNorm2d::new(channels, vec![1.0; channels]),
        head_act: Activation::new(ActKind::Relu),
        head: Linear::new(channels, k, normal_vec(&mut rng, k * channels, 0.0, (1.0 / channels as f64).sqrt())),
        epoch: 0,
        stage: 0,
        cache: Vec::new(),
    })
}

impl ReidModel {
    pub fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    pub fn learned_convs(&self) -> impl Iterator<Item = &LearnedGroupConv> {
        self.stages.iter().flatten().map(|l| &l.lgc)
    }

    pub fn learned_convs_mut(&mut self) -> impl Iterator<Item = &mut LearnedGroupConv> {
        self.stages.iter_mut().flatten().map(|l| &mut l.lgc)
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let s = self.config.input_size;
        if x.c != 3 || x.h != s || x.w != s {
            return Err(Error::Shape(format!(
                "model expects 3×{s}×{s} input, got {}×{}×{}",
                x.c, x.h, x.w
            )));
        }
        Ok(())
    }

    /// Pooled feature vectors `(n, C, 1, 1)` in eval mode; used as
    /// retrieval embeddings.
    pub fn features(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let mut h = self.stem.apply(x);
        for (i, stage) in self.stages.iter().enumerate() {
            if i > 0 {
                h = avg_pool(&h, 2);
            }
            for layer in stage {
                h = layer.apply(&h);
            }
        }
        let h = self.head_act.apply(&self.head_bn.apply_eval(&h));
        Ok(avg_pool(&h, h.h))
    }

    /// Eval-mode logits `(n, N + 1, 1, 1)`.
    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.head.apply(&self.features(x)?))
    }

    /// Training-mode forward that caches what [`Self::backward`] needs.
    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        self.check_input(x)?;
        self.cache.clear();
        let mut h = self.stem.forward(x);
        for i in 0..self.stages.len() {
            if i > 0 {
                self.cache.push(h.shape());
                h = avg_pool(&h, 2);
            }
            for layer in &mut self.stages[i] {
                h = layer.forward(&h, mode);
            }
        }
        let h = self.head_act.forward(&self.head_bn.forward(&h, mode));
        self.cache.push(h.shape());
        let pooled = avg_pool(&h, h.h);
        Ok(self.head.forward(&pooled))
    }

    /// Accumulates parameter gradients for `d loss / d logits`.
    pub fn backward(&mut self, dlogits: &Tensor) {
        let dpooled = self.head.backward(dlogits);
        let [_, _, h, w] = self.cache.pop().expect("backward without forward");
        let g = avg_pool_backward(&dpooled, h, h, w);
        let mut g = self.head_bn.backward(&self.head_act.backward(&g));
        for i in (0..self.stages.len()).rev() {
            for layer in self.stages[i].iter_mut().rev() {
                let c_in = layer.bn1.channels;
                g = layer.backward(&g, c_in);
            }
            if i > 0 {
                let [_, _, h, w] = self.cache.pop().expect("pool shape");
                g = avg_pool_backward(&g, 2, h, w);
            }
        }
        self.stem.backward(&g);
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut out = vec![&self.stem.weight];
        for layer in self.stages.iter().flatten() {
            out.extend(layer.params());
        }
        out.extend([&self.head_bn.gamma, &self.head_bn.beta, &self.head.weight, &self.head.bias]);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = vec![&mut self.stem.weight];
        for layer in self.stages.iter_mut().flatten() {
            out.extend(layer.params_mut());
        }
        out.extend([
            &mut self.head_bn.gamma,
            &mut self.head_bn.beta,
            &mut self.head.weight,
            &mut self.head.bias,
        ]);
        out
    }

    pub fn batch_norms(&self) -> Vec<&BatchNorm2d> {
        let mut out = Vec::new();
        for layer in self.stages.iter().flatten() {
            out.push(&layer.bn1);
            out.push(&layer.bn2);
        }
        out.push(&self.head_bn);
        out
    }

    pub fn batch_norms_mut(&mut self) -> Vec<&mut BatchNorm2d> {
        let mut out = Vec::new();
        for layer in self.stages.iter_mut().flatten() {
            out.push(&mut layer.bn1);
            out.push(&mut layer.bn2);
        }
        out.push(&mut self.head_bn);
        out
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    pub fn enforce_masks(&mut self) {
        for lgc in self.learned_convs_mut() {
            lgc.enforce_mask();
        }
    }

    /// Score vector for one patch.
    pub fn infer(&self, image: &Patch) -> Result<ScoreVector> {
        if image.size() != self.config.input_size {
            return Err(Error::Shape(format!(
                "patch side {} does not match model input {}",
                image.size(),
                self.config.input_size
            )));
        }
        let x = patches_to_tensor(std::iter::once(image), image.size());
        Ok(ScoreVector(softmax(&self.logits(&x)?.data)))
    }

    /// Score vectors for many samples, evaluated in chunks.
    pub fn infer_batch(&self, samples: &[Sample]) -> Result<Vec<ScoreVector>> {
        let logits = self.batched(samples, |x| self.logits(x))?;
        Ok(logits.into_iter().map(|l| ScoreVector(softmax(&l))).collect())
    }

    /// Pooled feature vectors for many samples.
    pub fn embed_batch(&self, samples: &[Sample]) -> Result<Vec<Vec<f64>>> {
        self.batched(samples, |x| self.features(x))
    }

    fn batched(&self, samples: &[Sample], f: impl Fn(&Tensor) -> Result<Tensor>) -> Result<Vec<Vec<f64>>> {
        const CHUNK: usize = 64;
        let size = self.config.input_size;
        let mut out = Vec::with_capacity(samples.len());
        for chunk in samples.chunks(CHUNK) {
            if let Some(s) = chunk.iter().find(|s| s.image.size() != size) {
                return Err(Error::Shape(format!(
                    "patch side {} does not match model input {size}",
                    s.image.size()
                )));
            }
            let y = f(&patches_to_tensor(chunk.iter().map(|s| &s.image), size))?;
            out.extend((0..y.n).map(|i| y.sample(i).to_vec()));
        }
        Ok(out)
    }

    /// Applies condensing stage `stage` to every learned group convolution.
    pub fn condensation_step(&mut self, stage: usize) -> Result<()> {
        let c = self.config.condensation_factor;
        if stage != self.stage + 1 || stage >= c {
            return Err(Error::Schedule(format!(
                "condensing stage {stage} requested after stage {} (factor {c} allows {} stages)",
                self.stage,
                c - 1
            )));
        }
        for lgc in self.learned_convs_mut() {
            lgc.condense(stage)?;
        }
        self.stage = stage;
        Ok(())
    }
}
