use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use reidgen::condense::{build_condensenet, train_reid, write_train_log, ReidModel, ReidTrainOptions};
use reidgen::data::{save_patch, write_dataset, write_detections, Dataset, IdentityLabel, Labeling, Sample};
use reidgen::gan::{
    build_augmentation_plan, export_loss_csv, sample_generator, train_dcgan, warm_start, GanState, PlanMode,
    TrainOptions,
};
use reidgen::harness::{
    build_detector, compare_to_registry, emit_plots, evaluate_model, format_aggregate, load_spec_dataset,
    preset_names, run_experiment, split_folds, write_cmc_csv, write_confusion_csv, Aggregate, ExperimentConfig,
    ResultsRegistry, RunOptions,
};
use reidgen::semfilter::{filter_samples, Gate};

#[derive(Parser)]
#[command(name = "reidgen", version, about = "Face-gated GAN augmentation for person re-identification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Built-in preset to start from.
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    /// Experiment config file (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the experiment seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match (&self.preset, &self.config) {
            (_, Some(path)) => ExperimentConfig::load(path)?,
            (Some(name), None) => ExperimentConfig::preset(name)?,
            (None, None) => ExperimentConfig::preset("base")?,
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum GanMode {
    Generic,
    Class,
}

#[derive(Clone, Copy, ValueEnum, PartialEq, Eq)]
enum OnOff {
    On,
    Off,
}

#[derive(Clone, Copy, ValueEnum)]
enum LabelingArg {
    UnknownClass,
    UniformSoft,
    ClassLabel,
}

impl From<LabelingArg> for Labeling {
    fn from(l: LabelingArg) -> Self {
        match l {
            LabelingArg::UnknownClass => Labeling::UnknownClass,
            LabelingArg::UniformSoft => Labeling::UniformSoft,
            LabelingArg::ClassLabel => Labeling::ClassLabel,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Materialise the configured dataset as PNGs, a manifest and a
    /// detections file.
    Prepare {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one generator on a fold's training set.
    TrainGan {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, value_enum, default_value = "generic")]
        mode: GanMode,
        #[arg(long)]
        class_id: Option<u32>,
        #[arg(long, value_enum, default_value = "on")]
        filter: OnOff,
        #[arg(long)]
        iterations: Option<u64>,
        #[arg(long, default_value_t = 0)]
        fold: usize,
        /// Warm-start a class generator from this checkpoint.
        #[arg(long)]
        warm_from: Option<PathBuf>,
        /// Continue training the checkpoint at `--out` if it exists.
        #[arg(long)]
        resume: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Draw samples from a generator checkpoint.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum)]
        labeling: Option<LabelingArg>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the classifier on a fold, optionally adding samples from a
    /// generic generator.
    TrainReid {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, default_value_t = 0)]
        fold: usize,
        #[arg(long)]
        gan: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a classifier checkpoint on a fold's test set.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 0)]
        fold: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Plots and tables for a finished run, or a registry lookup.
    Report {
        /// Run directory written by `run`.
        #[arg(long, required_unless_present = "lookup")]
        run: Option<PathBuf>,
        /// Compare against this published row, e.g. "LIMA row 6".
        #[arg(long)]
        registry: Option<String>,
        /// Print a published row and exit.
        #[arg(long)]
        lookup: Option<String>,
    },
    /// Run the full pipeline from a preset or config file.
    Run {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        resume: bool,
    },
    /// List the built-in presets.
    Presets,
}

fn fold_split(cfg: &ExperimentConfig, fold: usize) -> Result<(Dataset, Dataset)> {
    let mut cfg = cfg.clone();
    if cfg.split.kind == reidgen::harness::SplitKind::Loso {
        cfg.split.folds = Some(vec![fold]);
    } else if fold != 0 {
        bail!("a holdout split has only fold 0");
    }
    let dataset = load_spec_dataset(&cfg.dataset, cfg.seed)?;
    Ok(split_folds(&cfg, &dataset)?.remove(0))
}

fn write_json<T: serde::Serialize>(path: &Path, v: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(v)? + "\n").with_context(|| path.display().to_string())
}

fn write_synthetic(samples: &[Sample], dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir.join("images"))?;
    let mut w = csv::Writer::from_path(dir.join("synthetic.csv"))?;
    w.write_record(["path", "label", "labeling", "generator_id"])?;
    for (i, s) in samples.iter().enumerate() {
        let rel = format!("images/syn_{i:06}.png");
        save_patch(&s.image, &dir.join(&rel))?;
        let labeling = match &s.origin {
            reidgen::data::Origin::Synthetic { labeling, .. } => serde_json::to_value(labeling)?,
            reidgen::data::Origin::Original => unreachable!("generator output"),
        };
        w.write_record([
            rel,
            s.label.to_string(),
            labeling.as_str().unwrap_or_default().to_string(),
            s.generator_id().unwrap_or_default().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Prepare { cfg, out } => {
            let cfg = cfg.load()?;
            let ds = load_spec_dataset(&cfg.dataset, cfg.seed)?;
            let manifest = write_dataset(&ds, &out)?;
            write_detections(&ds, &out.join("detections.csv"))?;
            println!("{} samples → {}", ds.len(), manifest.display());
            for (label, n) in ds.class_counts() {
                println!("  class {label}: {n}");
            }
        }
        Command::TrainGan {
            cfg,
            mode,
            class_id,
            filter,
            iterations,
            fold,
            warm_from,
            resume,
            out,
        } => {
            let cfg = cfg.load()?;
            let (train, _) = fold_split(&cfg, fold)?;
            let mut gcfg = cfg.gan.config.clone();
            gcfg.filter_enabled = filter == OnOff::On;
            let iterations = iterations.unwrap_or(cfg.gan.iterations);
            let init_seed = reidgen::seed::derive(cfg.seed, "cli-gan", fold as u64);
            let (mut state, data) = match mode {
                GanMode::Generic => (GanState::init(&gcfg, init_seed)?, train.into_samples()),
                GanMode::Class => {
                    let j = class_id.context("--mode class needs --class-id")?;
                    if j > cfg.dataset.n_identities() {
                        bail!("class {j} is outside 0..={}", cfg.dataset.n_identities());
                    }
                    let j = IdentityLabel(j);
                    let state = match &warm_from {
                        Some(p) => warm_start(&GanState::load(p)?, &gcfg, j, init_seed)?,
                        None => {
                            let mut s = GanState::init(&gcfg, init_seed)?;
                            s.class = Some(j);
                            s
                        }
                    };
                    let data = train.into_samples().into_iter().filter(|s| s.label == j).collect();
                    (state, data)
                }
            };
            if resume && out.is_file() {
                state = GanState::load(&out)?;
            }
            let detector = build_detector(&cfg)?;
            let gate = Gate::new(detector.as_ref(), cfg.filter.threshold);
            let gate = state.config.filter_enabled.then_some(gate);
            let opts = TrainOptions {
                checkpoint_dir: out.parent().map(Path::to_path_buf),
            };
            let remaining = iterations.saturating_sub(state.iteration);
            train_dcgan(&mut state, &data, gate.as_ref(), remaining, &opts)?;
            state.save(&out)?;
            let loss = out.with_extension("loss.csv");
            export_loss_csv(&state.loss_history, &loss)?;
            println!("{} after {} iterations → {}", state.id(), state.iteration, out.display());
            if state.config.filter_enabled {
                println!(
                    "gate audit: {} of {} real samples approved",
                    state.audit.approved_samples, state.audit.real_samples
                );
            } else {
                println!("face gate disabled");
            }
        }
        Command::Sample {
            checkpoint,
            count,
            seed,
            labeling,
            out,
        } => {
            let state = GanState::load(&checkpoint)?;
            let labeling = labeling.map(Labeling::from).unwrap_or(match state.class {
                None => Labeling::UniformSoft,
                Some(j) if !j.is_known() => Labeling::UnknownClass,
                Some(_) => Labeling::ClassLabel,
            });
            let samples = sample_generator(&state, count, seed, labeling);
            write_synthetic(&samples, &out)?;
            println!("{count} samples from {} → {}", state.id(), out.display());
        }
        Command::TrainReid {
            cfg,
            fold,
            gan,
            count,
            out,
        } => {
            let cfg = cfg.load()?;
            let (train, _) = fold_split(&cfg, fold)?;
            let mut originals = train.into_samples();
            if cfg.filter.reid_input {
                let detector = build_detector(&cfg)?;
                let (kept, stats) = filter_samples(&originals, detector.as_ref(), cfg.filter.threshold)?;
                println!("face gate kept {:.1}% of the training input", 100.0 * stats.retention());
                originals = kept;
            }
            let n_orig = originals.len();
            let mut train_set = originals;
            let plan = match gan {
                Some(path) => {
                    let state = GanState::load(&path)?;
                    if state.class.is_some() {
                        bail!("train-reid only mixes in a generic generator; use `run` for per-class plans");
                    }
                    let plan = build_augmentation_plan(PlanMode::Generic, &[count], None, cfg.dataset.n_identities())?
                        .with_original_count(n_orig);
                    let seed = reidgen::seed::derive(cfg.seed, "cli-sample", fold as u64);
                    train_set.extend(sample_generator(&state, count, seed, plan.entries[0].labeling));
                    Some(plan)
                }
                None => None,
            };
            let reid_seed = reidgen::seed::derive(cfg.seed, "reid", fold as u64);
            let mut model = build_condensenet(&cfg.condense, reid_seed)?;
            let opts = ReidTrainOptions {
                seed: reid_seed,
                checkpoint_dir: out.parent().map(Path::to_path_buf),
            };
            let logs = train_reid(&mut model, &train_set, plan.as_ref(), &cfg.condense, &opts)?;
            model.save(&out)?;
            write_train_log(&logs, &out.with_extension("log.csv"))?;
            if let Some(last) = logs.last() {
                println!(
                    "epoch {} loss {:.4} train prec@1 {:.2}% → {}",
                    last.epoch,
                    last.loss,
                    100.0 * last.train_prec1,
                    out.display()
                );
            }
        }
        Command::Eval {
            cfg,
            checkpoint,
            fold,
            out,
        } => {
            let cfg = cfg.load()?;
            let (train, test) = fold_split(&cfg, fold)?;
            let model = ReidModel::load(&checkpoint)?;
            let report = evaluate_model(&model, train.samples(), &test, &cfg)?;
            std::fs::create_dir_all(&out)?;
            write_json(&out.join("eval_report.json"), &report)?;
            write_confusion_csv(&report.confusion, &out.join("confusion.csv"))?;
            if let Some(r) = &report.retrieval {
                write_cmc_csv(r, &out.join("cmc.csv"))?;
            }
            let agg = Aggregate {
                experiment: cfg.name.clone(),
                seed: cfg.seed,
                folds: 1,
                mean: report,
            };
            print!("{}", format_aggregate(&agg));
        }
        Command::Report { run, registry, lookup } => {
            let reg = ResultsRegistry::embedded();
            if let Some(key) = lookup {
                let row = reg.lookup(&key)?;
                println!("{} row {}: {}", row.table, row.row, row.method);
                for (m, v) in &row.metrics {
                    println!("  {m}: {}", v.map(|x| x.to_string()).unwrap_or_else(|| "-".into()));
                }
                return Ok(());
            }
            let run = run.expect("clap enforces --run");
            let text = std::fs::read_to_string(run.join("aggregate.json"))
                .with_context(|| format!("{} has no aggregate.json", run.display()))?;
            let agg: Aggregate = serde_json::from_str(&text)?;
            print!("{}", format_aggregate(&agg));
            if let Some(key) = registry {
                let cmp = compare_to_registry(&reg, &agg.mean, &key)?;
                print!("{}", cmp.to_table());
            }
            for p in emit_plots(&run)? {
                println!("wrote {}", p.display());
            }
        }
        Command::Run { cfg, out, resume } => {
            let mut cfg = cfg.load()?;
            if out.is_some() {
                cfg.output_dir = out;
            }
            let summary = run_experiment(&cfg, RunOptions { resume })?;
            print!("{}", format_aggregate(&summary.aggregate));
            println!("run directory: {}", summary.dir.display());
        }
        Command::Presets => {
            for name in preset_names() {
                println!("{name}");
            }
        }
    }
    Ok(())
}
