//! The full pipeline: data → split → gate → generators → augmentation →
//! classifier → evaluation, writing every artifact into one run directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{AugmentMode, DatasetKind, DatasetSpec, DetectorKind, ExperimentConfig, SplitKind};
use super::registry::{compare_to_registry, ResultsRegistry};
use crate::condense::{build_condensenet, train_reid, write_train_log, ReidModel, ReidTrainOptions};
use crate::data::{
    holdout_per_class, load_dataset, make_loso_splits, synth_toy_corpus, Dataset, IdentityLabel, Sample,
};
use crate::error::{Error, Result};
use crate::eval::{
    cmc_single_query, evaluate, CmcResult, ConfusionMatrix, EvalReport, RetrievalProtocol, RetrievalSet,
    ScoreMatrix, Scope,
};
use crate::gan::{
    build_augmentation_plan, export_loss_csv, sample_generator, train_dcgan, warm_start, AugmentationPlan,
    GanConfig, GanState, GeneratorRef, PlanMode, TrainOptions,
};
use crate::seed;
use crate::semfilter::{filter_samples, ExternalDetector, Gate, KeypointDetector, NoDetector, OracleDetector};

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Reuse generator and classifier checkpoints already present in the
    /// run directory when they match the configured budget.
    pub resume: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub fold: usize,
    pub stage: String,
    /// `done`, `resumed` or `skipped`.
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    pub artifacts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub fold: usize,
    pub test_sessions: Vec<u32>,
    pub original_train: usize,
    /// Classifier training originals after the optional face gate.
    pub reid_originals: usize,
    pub reid_filter_retention: Option<f64>,
    pub synthetic: usize,
    pub synthesis_ratio: Option<f64>,
    pub test: usize,
}

/// The per-fold evaluation artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalArtifact {
    pub experiment: String,
    pub seed: u64,
    pub fold: FoldSummary,
    pub report: EvalReport,
    pub config: ExperimentConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub experiment: String,
    pub seed: u64,
    pub folds: usize,
    /// Fold means of every metric; confusion counts are summed.
    pub mean: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub experiment: String,
    pub seed: u64,
    pub stages: Vec<StageRecord>,
    pub artifacts: Vec<ArtifactEntry>,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub folds: Vec<EvalArtifact>,
    pub aggregate: Aggregate,
}

pub fn load_spec_dataset(spec: &DatasetSpec, seed_value: u64) -> Result<Dataset> {
    match spec.kind {
        DatasetKind::Toy => synth_toy_corpus(&spec.toy, spec.toy_seed.unwrap_or(seed_value)),
        DatasetKind::Manifest => load_dataset(
            spec.manifest.as_deref().expect("validated"),
            spec.n_identities.expect("validated"),
            spec.patch_size.expect("validated"),
        ),
    }
}

pub fn build_detector(config: &ExperimentConfig) -> Result<Box<dyn KeypointDetector>> {
    Ok(match config.filter.detector {
        DetectorKind::Oracle => Box::new(OracleDetector),
        DetectorKind::External => Box::new(ExternalDetector::from_file(
            config.filter.detections.as_deref().expect("validated"),
        )?),
        DetectorKind::None => Box::new(NoDetector),
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Schema(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_cmc_csv(cmc: &CmcResult, path: &Path) -> Result<()> {
    let mut s = String::from("rank,match_rate\n");
    for (r, v) in cmc.cmc.iter().enumerate() {
        s += &format!("{},{}\n", r + 1, v);
    }
    write_text(path, &s)
}

/// Rows are true classes, columns predictions; `present` is 0 for classes
/// absent from the test set.
pub fn write_confusion_csv(c: &ConfusionMatrix, path: &Path) -> Result<()> {
    let k = c.counts.len();
    let mut s = String::from("true,present");
    for p in 0..k {
        s += &format!(",pred_{p}");
    }
    s.push('\n');
    for (t, row) in c.counts.iter().enumerate() {
        s += &format!("{t},{}", u8::from(c.present[t]));
        for v in row {
            s += &format!(",{v}");
        }
        s.push('\n');
    }
    write_text(path, &s)
}

pub fn cap_per_class(samples: Vec<Sample>, cap: Option<usize>) -> Vec<Sample> {
    let Some(cap) = cap else { return samples };
    let mut seen: BTreeMap<IdentityLabel, usize> = BTreeMap::new();
    samples
        .into_iter()
        .filter(|s| {
            let c = seen.entry(s.label).or_default();
            *c += 1;
            *c <= cap
        })
        .collect()
}

struct FoldCtx<'a> {
    config: &'a ExperimentConfig,
    detector: &'a dyn KeypointDetector,
    dir: PathBuf,
    fold: usize,
    options: RunOptions,
    stages: Vec<StageRecord>,
}

impl FoldCtx<'_> {
    fn rel(&self, name: &str) -> String {
        format!("fold_{}/{name}", self.fold)
    }

    fn record(&mut self, stage: &str, status: &str, reason: Option<String>, artifacts: &[&str]) {
        let artifacts = artifacts.iter().map(|a| self.rel(a)).collect();
        self.stages.push(StageRecord {
            fold: self.fold,
            stage: stage.to_string(),
            status: status.to_string(),
            reason,
            artifacts,
        });
    }

    fn wrap<T>(&self, stage: &str, r: Result<T>) -> Result<T> {
        r.map_err(|e| {
            let checkpoint = match &e {
                Error::Divergence { checkpoint, .. } => checkpoint.clone(),
                _ => None,
            };
            Error::Stage {
                stage: format!("fold {} {stage}", self.fold),
                source: Box::new(e),
                checkpoint,
            }
        })
    }

    /// Trains (or resumes) one generator and writes its checkpoint and loss
    /// curve as `gan_<tag>.json` / `gan_<tag>_loss.csv`.
    fn train_generator(
        &mut self,
        tag: &str,
        mut state: GanState,
        data: &[Sample],
        iterations: u64,
    ) -> Result<GanState> {
        let ck = format!("gan_{tag}.json");
        let loss = format!("gan_{tag}_loss.csv");
        let ck_path = self.dir.join(&ck);
        let stage = format!("gan {tag}");
        if self.options.resume && ck_path.is_file() {
            let loaded = self.wrap(&stage, GanState::load(&ck_path))?;
            if loaded.iteration == iterations && loaded.config == state.config {
                self.record(&stage, "resumed", None, &[&ck, &loss]);
                return Ok(loaded);
            }
            state = loaded;
        }
        let gate = Gate::new(self.detector, self.config.filter.threshold);
        let gate = state.config.filter_enabled.then_some(gate);
        let remaining = iterations.saturating_sub(state.iteration);
        let opts = TrainOptions {
            checkpoint_dir: Some(self.dir.clone()),
        };
        let result = train_dcgan(&mut state, data, gate.as_ref(), remaining, &opts);
        if result.is_err() {
            // best effort: leave the last good state behind for a resume
            let _ = state.save(&ck_path);
        }
        self.wrap(&stage, result)?;
        self.wrap(&stage, state.save(&ck_path))?;
        self.wrap(&stage, export_loss_csv(&state.loss_history, &self.dir.join(&loss)))?;
        self.record(&stage, "done", None, &[&ck, &loss]);
        Ok(state)
    }

    fn augment(&mut self, train: &[Sample]) -> Result<(Vec<Sample>, Option<AugmentationPlan>)> {
        let cfg = self.config;
        let a = &cfg.augment;
        if a.mode == AugmentMode::None {
            self.record("gan", "skipped", Some("augmentation disabled".into()), &[]);
            return Ok((Vec::new(), None));
        }
        let n = cfg.dataset.n_identities();
        let source = match &cfg.gan.source {
            Some(spec) => self
                .wrap("gan source", load_spec_dataset(spec, cfg.seed))?
                .into_samples(),
            None => train.to_vec(),
        };
        let generators = if a.mode == AugmentMode::Generic { 1 } else { n as usize + 1 };
        let counts: Vec<usize> = match (&a.counts, a.ratio) {
            (Some(c), _) => c.clone(),
            (None, Some(r)) => vec![((r * train.len() as f64).round() as usize).max(1); generators],
            (None, None) => unreachable!("validated"),
        };
        let mode = if a.mode == AugmentMode::Generic {
            PlanMode::Generic
        } else {
            PlanMode::PerClass
        };
        let plan = self
            .wrap("plan", build_augmentation_plan(mode, &counts, a.labeling, n))?
            .with_original_count(train.len());
        let fold = self.fold;
        let gan_seed = |what: &str, i: u64| seed::derive(cfg.seed, &format!("fold{fold}-{what}"), i);
        let mut synthetic = Vec::new();
        let base_config = cfg.gan.config.clone();
        match mode {
            PlanMode::Generic => {
                let state = self.wrap("gan G", GanState::init(&base_config, gan_seed("gan-init", 0)))?;
                let state = self.train_generator("G", state, &source, cfg.gan.iterations)?;
                let e = plan.entries[0];
                synthetic.extend(sample_generator(&state, e.count, gan_seed("sample", 0), e.labeling));
            }
            PlanMode::PerClass => {
                let base = if cfg.gan.warm_start {
                    let s = self.wrap("gan G", GanState::init(&base_config, gan_seed("gan-init", 0)))?;
                    Some(self.train_generator("G", s, &source, cfg.gan.base_iterations)?)
                } else {
                    None
                };
                for e in &plan.entries {
                    let GeneratorRef::Class(j) = e.generator else { unreachable!() };
                    let class_data: Vec<Sample> = source.iter().filter(|s| s.label == j).cloned().collect();
                    let tag = format!("G{}", j.0);
                    if class_data.is_empty() {
                        return Err(Error::Stage {
                            stage: format!("fold {} gan {tag}", self.fold),
                            source: Box::new(Error::EmptyDataset),
                            checkpoint: None,
                        });
                    }
                    let gcfg = GanConfig {
                        filter_enabled: if j.is_known() {
                            a.filter_identity_generators
                        } else {
                            a.filter_unknown_generator
                        },
                        ..base_config.clone()
                    };
                    let init_seed = gan_seed("gan-init", j.0 as u64 + 1);
                    let state = match &base {
                        Some(b) => self.wrap(&format!("gan {tag}"), warm_start(b, &gcfg, j, init_seed))?,
                        None => {
                            let mut s = self.wrap(&format!("gan {tag}"), GanState::init(&gcfg, init_seed))?;
                            s.class = Some(j);
                            s
                        }
                    };
                    let state = self.train_generator(&tag, state, &class_data, cfg.gan.iterations)?;
                    synthetic.extend(sample_generator(&state, e.count, gan_seed("sample", j.0 as u64 + 1), e.labeling));
                }
            }
        }
        write_json(&self.dir.join("augmentation_plan.json"), &plan)?;
        self.record("augment", "done", None, &["augmentation_plan.json"]);
        Ok((synthetic, Some(plan)))
    }

    fn run(&mut self, train: Dataset, test: Dataset) -> Result<EvalArtifact> {
        let cfg = self.config;
        std::fs::create_dir_all(&self.dir).map_err(|e| Error::io(&self.dir, e))?;
        let originals = train.into_samples();
        let original_train = originals.len();
        let (synthetic, plan) = self.augment(&originals)?;

        let (reid_originals, retention) = if cfg.filter.reid_input {
            let (kept, stats) = self.wrap(
                "reid filter",
                filter_samples(&originals, self.detector, cfg.filter.threshold),
            )?;
            write_json(&self.dir.join("reid_filter.json"), &stats)?;
            self.record("reid filter", "done", None, &["reid_filter.json"]);
            if kept.is_empty() {
                return Err(Error::Stage {
                    stage: format!("fold {} reid filter", self.fold),
                    source: Box::new(Error::EmptyFilteredSet),
                    checkpoint: None,
                });
            }
            (kept, Some(stats.retention()))
        } else {
            (originals, None)
        };

        let ck_path = self.dir.join("reid.json");
        let model = match self.options.resume && ck_path.is_file() {
            true => {
                let m = self.wrap("reid", ReidModel::load(&ck_path))?;
                if m.epoch == cfg.condense.epochs as u64 && m.config.same_architecture(&cfg.condense) {
                    self.record("reid", "resumed", None, &["reid.json", "reid_log.csv"]);
                    Some(m)
                } else {
                    None
                }
            }
            false => None,
        };
        let model = match model {
            Some(m) => m,
            None => {
                let reid_seed = seed::derive(cfg.seed, "reid", self.fold as u64);
                let mut m = self.wrap("reid", build_condensenet(&cfg.condense, reid_seed))?;
                let mut train_set = reid_originals.clone();
                train_set.extend(synthetic.iter().cloned());
                let opts = ReidTrainOptions {
                    seed: reid_seed,
                    checkpoint_dir: Some(self.dir.clone()),
                };
                let logs = self.wrap("reid", train_reid(&mut m, &train_set, plan.as_ref(), &cfg.condense, &opts))?;
                self.wrap("reid", m.save(&ck_path))?;
                self.wrap("reid", write_train_log(&logs, &self.dir.join("reid_log.csv")))?;
                self.record("reid", "done", None, &["reid.json", "reid_log.csv"]);
                m
            }
        };

        let report = self.wrap("eval", evaluate_model(&model, &reid_originals, &test, cfg))?;
        let mut artifacts = vec!["eval_report.json", "confusion.csv"];
        if let Some(r) = &report.retrieval {
            write_cmc_csv(r, &self.dir.join("cmc.csv"))?;
            artifacts.push("cmc.csv");
        }
        write_confusion_csv(&report.confusion, &self.dir.join("confusion.csv"))?;
        let summary = FoldSummary {
            fold: self.fold,
            test_sessions: test.sessions(),
            original_train,
            reid_originals: reid_originals.len(),
            reid_filter_retention: retention,
            synthetic: synthetic.len(),
            synthesis_ratio: plan.as_ref().and_then(|p| p.synthesis_ratio()),
            test: test.len(),
        };
        let artifact = EvalArtifact {
            experiment: cfg.name.clone(),
            seed: cfg.seed,
            fold: summary,
            report,
            config: cfg.echo(),
        };
        write_json(&self.dir.join("eval_report.json"), &artifact)?;
        self.record("eval", "done", None, &artifacts);
        Ok(artifact)
    }
}

/// Scores `test` with `model` and, when enabled, runs single-query
/// retrieval against the known-identity part of `gallery`.
pub fn evaluate_model(
    model: &ReidModel,
    gallery: &[Sample],
    test: &Dataset,
    config: &ExperimentConfig,
) -> Result<EvalReport> {
    let test_samples = test.samples();
    let scores = model.infer_batch(test_samples)?;
    let labels = test_samples.iter().map(|s| s.label).collect();
    let matrix = ScoreMatrix::from_vectors(scores, labels, config.condense.num_classes)?;
    let retrieval = if config.eval.retrieval {
        let known = |s: &&Sample| s.label.is_known();
        let query: Vec<Sample> = test_samples.iter().filter(known).cloned().collect();
        let gallery: Vec<Sample> = gallery.iter().filter(known).cloned().collect();
        let to_set = |samples: &[Sample]| -> Result<RetrievalSet> {
            Ok(RetrievalSet {
                embeddings: model.embed_batch(samples)?,
                labels: samples.iter().map(|s| s.label).collect(),
                cameras: samples.iter().map(|s| s.session_id).collect(),
            })
        };
        let protocol = RetrievalProtocol {
            exclude_same_camera: config.eval.exclude_same_camera,
            max_rank: Some(config.eval.cmc_max_rank.min(gallery.len())),
        };
        Some(cmc_single_query(&to_set(&query)?, &to_set(&gallery)?, protocol)?)
    } else {
        None
    };
    evaluate(&matrix, &config.eval.ks, retrieval)
}

/// The (train, test) pairs of every configured fold, train capped per class.
pub fn split_folds(config: &ExperimentConfig, dataset: &Dataset) -> Result<Vec<(Dataset, Dataset)>> {
    let pairs = match config.split.kind {
        SplitKind::Loso => {
            let plan = make_loso_splits(dataset)?;
            let wanted: Vec<usize> = match &config.split.folds {
                Some(f) => f.clone(),
                None => (0..plan.folds.len()).collect(),
            };
            let mut out = Vec::new();
            for k in wanted {
                if k >= plan.folds.len() {
                    return Err(Error::Config(format!("fold {k} does not exist ({} folds)", plan.folds.len())));
                }
                out.push(plan.apply(dataset, k));
            }
            out
        }
        SplitKind::Holdout => vec![holdout_per_class(
            dataset,
            config.split.holdout_fraction,
            seed::derive(config.seed, "holdout", 0),
        )?],
    };
    pairs
        .into_iter()
        .map(|(train, test)| {
            let n = train.n_identities();
            Ok((Dataset::new(cap_per_class(train.into_samples(), config.split.train_per_class), n)?, test))
        })
        .collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Fold means of every metric present in all folds; confusion summed.
pub fn aggregate_reports(reports: &[&EvalReport]) -> EvalReport {
    let first = reports[0];
    let mut prec_at = BTreeMap::new();
    for (scope, by_k) in &first.prec_at {
        let mut out = BTreeMap::new();
        for k in by_k.keys() {
            let vals: Option<Vec<f64>> = reports.iter().map(|r| r.prec(*scope, *k)).collect();
            if let Some(v) = vals {
                out.insert(*k, mean(&v));
            }
        }
        prec_at.insert(*scope, out);
    }
    let mean_opt = |f: &dyn Fn(&EvalReport) -> Option<f64>| -> Option<f64> {
        let v: Option<Vec<f64>> = reports.iter().map(|r| f(r)).collect();
        v.map(|v| mean(&v))
    };
    let retrieval = {
        let all: Option<Vec<&CmcResult>> = reports.iter().map(|r| r.retrieval.as_ref()).collect();
        all.map(|rs| {
            let len = rs.iter().map(|r| r.cmc.len()).min().unwrap_or(0);
            CmcResult {
                cmc: (0..len).map(|i| mean(&rs.iter().map(|r| r.cmc[i]).collect::<Vec<_>>())).collect(),
                map: mean(&rs.iter().map(|r| r.map).collect::<Vec<_>>()),
            }
        })
    };
    let k = first.confusion.counts.len();
    let mut confusion = ConfusionMatrix {
        counts: vec![vec![0; k]; k],
        present: vec![false; k],
    };
    for r in reports {
        for t in 0..k {
            confusion.present[t] |= r.confusion.present[t];
            for p in 0..k {
                confusion.counts[t][p] += r.confusion.counts[t][p];
            }
        }
    }
    let warnings = reports
        .iter()
        .enumerate()
        .flat_map(|(i, r)| r.warnings.iter().map(move |w| format!("fold {i}: {w}")))
        .collect();
    EvalReport {
        n_test: reports.iter().map(|r| r.n_test).sum(),
        prec_at,
        map_all: mean_opt(&|r| r.map_all),
        map_pid: mean_opt(&|r| r.map_pid),
        retrieval,
        confusion,
        warnings,
    }
}

fn hash_file(path: &Path) -> Result<String> {
    use sha2::{Digest, Sha256};
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

fn collect_files(dir: &Path, root: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    entries.sort();
    for p in entries {
        if p.is_dir() {
            collect_files(&p, root, out)?;
        } else if p.file_name().is_some_and(|n| n != "manifest.json") {
            out.push(p.strip_prefix(root).expect("under root").to_path_buf());
        }
    }
    Ok(())
}

/// Runs `config` end to end and writes its run directory.
pub fn run_experiment(config: &ExperimentConfig, options: RunOptions) -> Result<RunSummary> {
    config.validate()?;
    let dir = config.output_dir();
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    write_text(&dir.join("config.toml"), &config.echo().to_toml())?;
    let dataset = load_spec_dataset(&config.dataset, config.seed)?;
    let detector = build_detector(config)?;

    let folds = split_folds(config, &dataset)?;

    let mut stages = Vec::new();
    let mut artifacts = Vec::new();
    for (k, (train, test)) in folds.into_iter().enumerate() {
        let mut ctx = FoldCtx {
            config,
            detector: detector.as_ref(),
            dir: dir.join(format!("fold_{k}")),
            fold: k,
            options,
            stages: Vec::new(),
        };
        let result = ctx.run(train, test);
        stages.append(&mut ctx.stages);
        artifacts.push(result?);
        log::info!("{}: fold {k} done", config.name);
    }

    let reports: Vec<&EvalReport> = artifacts.iter().map(|a| &a.report).collect();
    let aggregate = Aggregate {
        experiment: config.name.clone(),
        seed: config.seed,
        folds: artifacts.len(),
        mean: aggregate_reports(&reports),
    };
    write_json(&dir.join("aggregate.json"), &aggregate)?;
    if let Some(key) = &config.registry_key {
        let cmp = compare_to_registry(&ResultsRegistry::embedded(), &aggregate.mean, key)?;
        write_json(&dir.join("comparison.json"), &cmp)?;
        write_text(&dir.join("comparison.txt"), &cmp.to_table())?;
    }

    let mut files = Vec::new();
    collect_files(&dir, &dir, &mut files)?;
    let manifest = RunManifest {
        experiment: config.name.clone(),
        seed: config.seed,
        stages,
        artifacts: files
            .iter()
            .map(|p| {
                Ok(ArtifactEntry {
                    path: p.to_string_lossy().replace('\\', "/"),
                    sha256: hash_file(&dir.join(p))?,
                })
            })
            .collect::<Result<_>>()?,
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(RunSummary {
        dir,
        folds: artifacts,
        aggregate,
    })
}

/// Human-readable one-line-per-metric summary of an aggregate.
pub fn format_aggregate(a: &Aggregate) -> String {
    let mut out = Vec::new();
    let pct = |v: Option<f64>| v.map(|x| format!("{:.2}", 100.0 * x)).unwrap_or_else(|| "-".into());
    for (scope, name) in [(Scope::All, "ALL"), (Scope::Pid, "p-ID")] {
        if let Some(by_k) = a.mean.prec_at.get(&scope) {
            for (k, v) in by_k {
                out.push(format!("{name} prec@{k}: {}", pct(Some(*v))));
            }
        }
    }
    out.push(format!("ALL mAP: {}", pct(a.mean.map_all)));
    out.push(format!("p-ID mAP: {}", pct(a.mean.map_pid)));
    if let Some(r) = &a.mean.retrieval {
        out.push(format!("CMC@1 S-Q: {}", pct(r.cmc.first().copied())));
        out.push(format!("mAP S-Q: {}", pct(Some(r.map))));
    }
    let mut s = out.join("\n");
    s.push('\n');
    s
}
