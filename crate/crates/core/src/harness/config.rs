//! Experiment configuration: a TOML file that may name a preset to inherit
//! from. Tables merge key by key; any other value in the child replaces the
//! parent's.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::condense::CondenseConfig;
use crate::data::{Labeling, ToyCorpusConfig};
use crate::error::{Error, Result};
use crate::gan::GanConfig;

const PRESETS: &[(&str, &str)] = &[
    ("base", include_str!("presets/base.toml")),
    ("no-augmentation", include_str!("presets/no-augmentation.toml")),
    ("augment-generic", include_str!("presets/augment-generic.toml")),
    ("augment-generic-large", include_str!("presets/augment-generic-large.toml")),
    ("filtered-reid", include_str!("presets/filtered-reid.toml")),
    ("augment-filtered-generic", include_str!("presets/augment-filtered-generic.toml")),
    ("augment-per-class", include_str!("presets/augment-per-class.toml")),
    ("smoke", include_str!("presets/smoke.toml")),
];

pub fn preset_names() -> Vec<&'static str> {
    PRESETS.iter().map(|(n, _)| *n).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Toy,
    Manifest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    #[serde(default)]
    pub toy: ToyCorpusConfig,
    /// Seed offset for the toy corpus, so a transfer source can differ from
    /// the target corpus.
    #[serde(default)]
    pub toy_seed: Option<u64>,
    #[serde(default)]
    pub manifest: Option<PathBuf>,
    #[serde(default)]
    pub n_identities: Option<u32>,
    #[serde(default)]
    pub patch_size: Option<usize>,
}

impl DatasetSpec {
    pub fn patch_size(&self) -> usize {
        match self.kind {
            DatasetKind::Toy => self.toy.patch_size,
            DatasetKind::Manifest => self.patch_size.unwrap_or(0),
        }
    }

    pub fn n_identities(&self) -> u32 {
        match self.kind {
            DatasetKind::Toy => self.toy.n_identities,
            DatasetKind::Manifest => self.n_identities.unwrap_or(0),
        }
    }

    fn validate(&self, what: &str) -> Result<()> {
        match self.kind {
            DatasetKind::Toy => self.toy.validate(),
            DatasetKind::Manifest => {
                let path = self
                    .manifest
                    .as_ref()
                    .ok_or_else(|| Error::Config(format!("{what}: manifest path missing")))?;
                if !path.is_file() {
                    return Err(Error::MissingArtifact(path.clone()));
                }
                if self.n_identities.unwrap_or(0) < 1 || self.patch_size.unwrap_or(0) < 1 {
                    return Err(Error::Config(format!(
                        "{what}: manifest datasets need n_identities and patch_size"
                    )));
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitKind {
    Loso,
    Holdout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub kind: SplitKind,
    #[serde(default = "default_fraction")]
    pub holdout_fraction: f64,
    /// Run only these LOSO folds (all when absent).
    #[serde(default)]
    pub folds: Option<Vec<usize>>,
    /// Keep at most this many training samples per class, in dataset order.
    #[serde(default)]
    pub train_per_class: Option<usize>,
}

fn default_fraction() -> f64 {
    crate::data::DEFAULT_HOLDOUT_FRACTION
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorKind {
    Oracle,
    External,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterSpec {
    pub detector: DetectorKind,
    #[serde(default)]
    pub detections: Option<PathBuf>,
    #[serde(default)]
    pub threshold: f64,
    /// Gate the classifier's own training input (no effect on test data).
    #[serde(default)]
    pub reid_input: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GanSpec {
    pub config: GanConfig,
    pub iterations: u64,
    /// Iterations of the generic base when per-class generators warm-start.
    #[serde(default)]
    pub base_iterations: u64,
    #[serde(default)]
    pub warm_start: bool,
    /// Train generators on this corpus instead of the fold's training set.
    #[serde(default)]
    pub source: Option<DatasetSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentMode {
    None,
    Generic,
    PerClass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentSpec {
    pub mode: AugmentMode,
    /// Explicit per-generator counts (one, or `N + 1` ordered `G_0..G_N`).
    #[serde(default)]
    pub counts: Option<Vec<usize>>,
    /// Per-generator count as a fraction of the original training set size.
    #[serde(default)]
    pub ratio: Option<f64>,
    #[serde(default)]
    pub labeling: Option<Labeling>,
    #[serde(default = "yes")]
    pub filter_identity_generators: bool,
    #[serde(default)]
    pub filter_unknown_generator: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSpec {
    pub ks: Vec<usize>,
    #[serde(default)]
    pub retrieval: bool,
    #[serde(default = "yes")]
    pub exclude_same_camera: bool,
    #[serde(default = "default_rank")]
    pub cmc_max_rank: usize,
}

fn default_rank() -> usize {
    50
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub registry_key: Option<String>,
    pub dataset: DatasetSpec,
    pub split: SplitSpec,
    pub filter: FilterSpec,
    pub gan: GanSpec,
    pub augment: AugmentSpec,
    pub condense: CondenseConfig,
    pub eval: EvalSpec,
}

fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn parse_toml(text: &str, origin: &str) -> Result<toml::Value> {
    text.parse::<toml::Table>()
        .map(toml::Value::Table)
        .map_err(|e| Error::Config(format!("{origin}: {e}")))
}

/// Resolves the `preset` chain of `value` (depth-first, base first).
fn resolve(mut value: toml::Value, depth: usize) -> Result<toml::Value> {
    if depth > 8 {
        return Err(Error::Config("preset chain too deep (cycle?)".into()));
    }
    let parent = match value.as_table_mut().and_then(|t| t.remove("preset")) {
        Some(toml::Value::String(name)) => name,
        Some(_) => return Err(Error::Config("preset must be a string".into())),
        None if depth == 0 || value.get("name").and_then(|n| n.as_str()) != Some("base") => "base".to_string(),
        None => return Ok(value),
    };
    let text = PRESETS
        .iter()
        .find(|(n, _)| *n == parent)
        .map(|(_, t)| *t)
        .ok_or_else(|| {
            Error::Config(format!(
                "unknown preset {parent:?}; available: {}",
                preset_names().join(", ")
            ))
        })?;
    let mut merged = resolve(parse_toml(text, &parent)?, depth + 1)?;
    merge(&mut merged, value);
    Ok(merged)
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let resolved = resolve(parse_toml(text, "config")?, 0)?;
        let config: ExperimentConfig = resolved
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        Ok(config)
    }

    pub fn preset(name: &str) -> Result<Self> {
        Self::from_toml_str(&format!("preset = {name:?}"))
    }

    /// Reads a config file; relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::from_toml_str(&text)?;
        if let Some(dir) = path.parent() {
            config.rebase_paths(dir);
        }
        Ok(config)
    }

    fn rebase_paths(&mut self, dir: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(path) = p {
                if path.is_relative() {
                    *path = dir.join(&*path);
                }
            }
        };
        fix(&mut self.dataset.manifest);
        fix(&mut self.filter.detections);
        if let Some(src) = &mut self.gan.source {
            fix(&mut src.manifest);
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output_dir
            .clone()
            .unwrap_or_else(|| PathBuf::from("runs").join(&self.name))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// The config with machine-specific paths removed; used in artifacts
    /// that must be identical across output directories.
    pub fn echo(&self) -> ExperimentConfig {
        ExperimentConfig {
            output_dir: None,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate("dataset")?;
        let size = self.dataset.patch_size();
        let n = self.dataset.n_identities();
        if self.split.kind == SplitKind::Holdout && !(self.split.holdout_fraction > 0.0 && self.split.holdout_fraction < 1.0) {
            return Err(Error::Config("holdout_fraction must lie in (0, 1)".into()));
        }
        if self.split.train_per_class == Some(0) {
            return Err(Error::Config("train_per_class must be >= 1".into()));
        }
        if self.filter.detector == DetectorKind::External {
            match &self.filter.detections {
                Some(p) if p.is_file() => {}
                Some(p) => return Err(Error::MissingArtifact(p.clone())),
                None => return Err(Error::Config("external detector needs a detections file".into())),
            }
        }
        if !(0.0..=1.0).contains(&self.filter.threshold) {
            return Err(Error::Config("filter threshold must lie in [0, 1]".into()));
        }
        let c = &self.condense;
        c.validate()?;
        if c.input_size != size {
            return Err(Error::Config(format!(
                "condense.input_size {} differs from the dataset patch size {size}",
                c.input_size
            )));
        }
        if c.num_classes != n as usize + 1 {
            return Err(Error::Config(format!(
                "condense.num_classes {} must be N + 1 = {}",
                c.num_classes,
                n + 1
            )));
        }
        if self.augment.mode != AugmentMode::None {
            self.gan.config.validate()?;
            if self.gan.config.image_size != size {
                return Err(Error::Config(format!(
                    "gan image_size {} differs from the dataset patch size {size}",
                    self.gan.config.image_size
                )));
            }
            if let Some(src) = &self.gan.source {
                src.validate("gan.source")?;
                if src.patch_size() != size {
                    return Err(Error::Config("gan.source patch size differs from the dataset".into()));
                }
            }
            let a = &self.augment;
            let needed = match a.mode {
                AugmentMode::Generic => 1,
                _ => n as usize + 1,
            };
            match (&a.counts, a.ratio) {
                (Some(counts), None) if counts.len() == needed && counts.iter().all(|&c| c > 0) => {}
                (None, Some(r)) if r > 0.0 && r.is_finite() => {}
                _ => {
                    return Err(Error::Config(format!(
                        "augment needs either {needed} positive counts or a positive ratio"
                    )))
                }
            }
            if self.gan.config.filter_enabled || a.filter_identity_generators || a.filter_unknown_generator {
                if self.filter.detector == DetectorKind::None {
                    return Err(Error::Config("gated generators need a detector".into()));
                }
            }
        }
        if self.filter.reid_input && self.filter.detector == DetectorKind::None {
            return Err(Error::Config("filtering R's input needs a detector".into()));
        }
        if self.eval.ks.is_empty() || self.eval.ks.contains(&0) {
            return Err(Error::Config("eval.ks must be non-empty and positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_resolves_and_validates() {
        for name in preset_names() {
            let c = ExperimentConfig::preset(name).unwrap();
            c.validate().unwrap_or_else(|e| panic!("{name}: {e}"));
        }
    }

    #[test]
    fn presets_inherit() {
        let large = ExperimentConfig::preset("augment-generic-large").unwrap();
        assert_eq!(large.augment.ratio, Some(0.08));
        assert!(!large.gan.config.filter_enabled);
        assert_eq!(large.condense.epochs, 20);
        assert_eq!(large.output_dir(), PathBuf::from("runs/augment-generic-large"));
    }

    #[test]
    fn user_values_override_presets() {
        let c = ExperimentConfig::from_toml_str(
            "preset = \"no-augmentation\"\nseed = 99\n[condense]\nepochs = 2\n",
        )
        .unwrap();
        assert_eq!(c.seed, 99);
        assert_eq!(c.condense.epochs, 2);
        assert_eq!(c.condense.input_size, 16);
    }

    #[test]
    fn unknown_keys_and_presets_are_rejected() {
        assert!(ExperimentConfig::from_toml_str("bogus = 1").is_err());
        assert!(ExperimentConfig::from_toml_str("preset = \"nope\"").is_err());
    }

    #[test]
    fn mismatched_sizes_fail_validation() {
        let c = ExperimentConfig::from_toml_str("[condense]\ninput_size = 32\n").unwrap();
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn missing_manifest_is_reported() {
        let c = ExperimentConfig::from_toml_str(
            "[dataset]\nkind = \"manifest\"\nmanifest = \"/nonexistent/m.csv\"\nn_identities = 3\npatch_size = 16\n",
        )
        .unwrap();
        assert!(matches!(c.validate(), Err(Error::MissingArtifact(_))));
    }
}
