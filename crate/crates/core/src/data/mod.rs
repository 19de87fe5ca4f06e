//! Samples, datasets and split construction.
//!
//! Images are stored HWC as `f32` in `[-1, 1]` behind an `Arc`, so subsets and
//! folds share pixel storage.

mod manifest;
mod split;
mod toy;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Tensor;

pub use manifest::{load_dataset, save_patch, write_dataset, write_detections, MANIFEST_HEADER};
pub use split::{holdout_per_class, make_loso_splits, Fold, SplitPlan, DEFAULT_HOLDOUT_FRACTION};
pub use toy::{synth_toy_corpus, ToyCorpusConfig};

/// Identity label `j`; `0` is the `unknown` identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct IdentityLabel(pub u32);

impl IdentityLabel {
    pub const UNKNOWN: IdentityLabel = IdentityLabel(0);

    pub fn is_known(self) -> bool {
        self.0 != 0
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for IdentityLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Square RGB patch, HWC, values in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    size: usize,
    data: Arc<[f32]>,
}

impl Patch {
    pub fn new(size: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != size * size * 3 {
            return Err(Error::Shape(format!(
                "patch of side {size} needs {} values, got {}",
                size * size * 3,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(-1.0..=1.0).contains(*v)) {
            return Err(Error::Schema(format!("pixel value {v} outside [-1, 1]")));
        }
        Ok(Patch {
            size,
            data: data.into(),
        })
    }

    /// All pixels at `-1`.
    pub fn blank(size: usize) -> Self {
        Patch {
            size,
            data: vec![-1.0; size * size * 3].into(),
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn pixels(&self) -> &[f32] {
        &self.data
    }

    /// Writes the patch as CHW `f64` into `out` (length `3·size²`).
    pub fn write_chw(&self, out: &mut [f64]) {
        let hw = self.size * self.size;
        for (p, px) in self.data.chunks_exact(3).enumerate() {
            out[p] = px[0] as f64;
            out[hw + p] = px[1] as f64;
            out[2 * hw + p] = px[2] as f64;
        }
    }

    /// Builds a patch from one CHW sample, clamping into `[-1, 1]`.
    pub fn from_chw(size: usize, chw: &[f64]) -> Self {
        let hw = size * size;
        let mut data = Vec::with_capacity(hw * 3);
        for p in 0..hw {
            for c in 0..3 {
                data.push(chw[c * hw + p].clamp(-1.0, 1.0) as f32);
            }
        }
        Patch {
            size,
            data: data.into(),
        }
    }
}

/// Stacks patches into an `(n, 3, s, s)` tensor.
pub fn patches_to_tensor<'a>(patches: impl ExactSizeIterator<Item = &'a Patch>, size: usize) -> Tensor {
    let n = patches.len();
    let mut t = Tensor::zeros(n, 3, size, size);
    for (i, p) in patches.enumerate() {
        assert_eq!(p.size(), size, "patch size mismatch");
        p.write_chw(t.sample_mut(i));
    }
    t
}

/// How a synthetic sample's training target is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Labeling {
    /// Hard label `j = 0`.
    UnknownClass,
    /// Uniform target distribution over all `N + 1` classes.
    UniformSoft,
    /// Hard label of the generator's identity class.
    ClassLabel,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "origin", rename_all = "snake_case")]
pub enum Origin {
    Original,
    Synthetic { generator_id: String, labeling: Labeling },
}

/// Normalized face-glyph location recorded when a toy sample is rendered.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaceMark {
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: Patch,
    pub label: IdentityLabel,
    pub session_id: u32,
    pub tracklet_id: u32,
    pub origin: Origin,
    /// Rendering metadata, known only for procedurally generated originals.
    pub face: Option<FaceMark>,
    /// Manifest path the sample was read from, if any.
    pub source: Option<String>,
}

impl Sample {
    pub fn is_synthetic(&self) -> bool {
        matches!(self.origin, Origin::Synthetic { .. })
    }

    pub fn generator_id(&self) -> Option<&str> {
        match &self.origin {
            Origin::Synthetic { generator_id, .. } => Some(generator_id),
            Origin::Original => None,
        }
    }

    /// Training target over `n_classes = N + 1` classes.
    pub fn target(&self, n_classes: usize) -> Vec<f64> {
        let mut t = vec![0.0; n_classes];
        match &self.origin {
            Origin::Synthetic {
                labeling: Labeling::UniformSoft,
                ..
            } => t.iter_mut().for_each(|v| *v = 1.0 / n_classes as f64),
            Origin::Synthetic {
                labeling: Labeling::UnknownClass,
                ..
            } => t[0] = 1.0,
            _ => t[self.label.index()] = 1.0,
        }
        t
    }
}

/// Ordered samples plus their session index.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
    n_identities: u32,
    session_index: BTreeMap<u32, Vec<usize>>,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>, n_identities: u32) -> Result<Self> {
        if n_identities < 1 {
            return Err(Error::Schema("a dataset needs N >= 1 identities".into()));
        }
        let mut session_index: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        let mut size = None;
        for (i, s) in samples.iter().enumerate() {
            if s.label.0 > n_identities {
                return Err(Error::Schema(format!(
                    "sample {i} has label {} > N = {n_identities}",
                    s.label
                )));
            }
            match size {
                None => size = Some(s.image.size()),
                Some(sz) if sz != s.image.size() => {
                    return Err(Error::Shape(format!(
                        "sample {i} has patch side {}, expected {sz}",
                        s.image.size()
                    )))
                }
                _ => {}
            }
            session_index.entry(s.session_id).or_default().push(i);
        }
        Ok(Dataset {
            samples,
            n_identities,
            session_index,
        })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<Sample> {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn n_identities(&self) -> u32 {
        self.n_identities
    }

    pub fn n_classes(&self) -> usize {
        self.n_identities as usize + 1
    }

    pub fn patch_size(&self) -> Option<usize> {
        self.samples.first().map(|s| s.image.size())
    }

    pub fn session_index(&self) -> &BTreeMap<u32, Vec<usize>> {
        &self.session_index
    }

    pub fn sessions(&self) -> Vec<u32> {
        self.session_index.keys().copied().collect()
    }

    /// Samples whose session is in `sessions`, in dataset order.
    pub fn select_sessions(&self, sessions: &std::collections::BTreeSet<u32>) -> Dataset {
        self.filtered(|s| sessions.contains(&s.session_id))
    }

    pub fn filtered(&self, keep: impl Fn(&Sample) -> bool) -> Dataset {
        let samples = self.samples.iter().filter(|s| keep(s)).cloned().collect();
        Dataset::new(samples, self.n_identities).expect("subset of a valid dataset")
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let samples = indices.iter().map(|&i| self.samples[i].clone()).collect();
        Dataset::new(samples, self.n_identities).expect("subset of a valid dataset")
    }

    /// Appends samples (e.g. synthetic ones) after the existing ones.
    pub fn extended(&self, extra: impl IntoIterator<Item = Sample>) -> Result<Dataset> {
        let mut samples = self.samples.clone();
        samples.extend(extra);
        Dataset::new(samples, self.n_identities)
    }

    /// Sample count per label, ascending label order.
    pub fn class_counts(&self) -> BTreeMap<IdentityLabel, usize> {
        let mut counts = BTreeMap::new();
        for s in &self.samples {
            *counts.entry(s.label).or_insert(0) += 1;
        }
        counts
    }
}
