use serde::{Deserialize, Serialize};

use crate::data::{IdentityLabel, Labeling};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanMode {
    Generic,
    PerClass,
}

/// Which generator an entry samples from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", content = "class", rename_all = "snake_case")]
pub enum GeneratorRef {
    /// The single "unlabeled person" generator.
    Generic,
    /// `G_j` for identity `j`; `Class(0)` is the unknown-class generator.
    Class(IdentityLabel),
}

impl GeneratorRef {
    pub fn class(self) -> Option<IdentityLabel> {
        match self {
            GeneratorRef::Generic => None,
            GeneratorRef::Class(j) => Some(j),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanEntry {
    pub generator: GeneratorRef,
    pub count: usize,
    pub labeling: Labeling,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationPlan {
    pub mode: PlanMode,
    pub entries: Vec<PlanEntry>,
    /// Size of the original training set the plan augments, when known.
    pub original_count: Option<usize>,
}

impl AugmentationPlan {
    pub fn total_synthetic(&self) -> usize {
        self.entries.iter().map(|e| e.count).sum()
    }

    /// Synthetic-to-original sample ratio, if the original size is recorded.
    pub fn synthesis_ratio(&self) -> Option<f64> {
        self.original_count
            .filter(|&n| n > 0)
            .map(|n| self.total_synthetic() as f64 / n as f64)
    }

    pub fn with_original_count(mut self, n: usize) -> Self {
        self.original_count = Some(n);
        self
    }
}

/// Builds a plan from per-generator counts.
///
/// Generic mode takes one count. Per-class mode takes `N + 1` counts ordered
/// `G_0, G_1, …, G_N`. Without an explicit `labeling` generic samples get a
/// uniform soft target, `G_0` samples the unknown class and `G_j` samples
/// label `j`.
pub fn build_augmentation_plan(
    mode: PlanMode,
    counts: &[usize],
    labeling: Option<Labeling>,
    n_identities: u32,
) -> Result<AugmentationPlan> {
    if let Some(i) = counts.iter().position(|&c| c == 0) {
        return Err(Error::Plan(format!("count for generator {i} must be positive")));
    }
    let entries = match mode {
        PlanMode::Generic => {
            if counts.len() != 1 {
                return Err(Error::Plan(format!(
                    "generic mode takes one count, got {}",
                    counts.len()
                )));
            }
            vec![PlanEntry {
                generator: GeneratorRef::Generic,
                count: counts[0],
                labeling: labeling.unwrap_or(Labeling::UniformSoft),
            }]
        }
        PlanMode::PerClass => {
            let expected = n_identities as usize + 1;
            if counts.len() != expected {
                return Err(Error::Plan(format!(
                    "per-class mode needs {expected} counts (G_0 plus one per identity), got {}",
                    counts.len()
                )));
            }
            counts
                .iter()
                .enumerate()
                .map(|(j, &count)| PlanEntry {
                    generator: GeneratorRef::Class(IdentityLabel(j as u32)),
                    count,
                    labeling: labeling.unwrap_or(if j == 0 {
                        Labeling::UnknownClass
                    } else {
                        Labeling::ClassLabel
                    }),
                })
                .collect()
        }
    };
    Ok(AugmentationPlan {
        mode,
        entries,
        original_count: None,
    })
}
