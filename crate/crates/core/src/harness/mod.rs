//! Experiment configuration, presets, the end-to-end pipeline, published
//! results and plotting.

mod config;
mod plots;
mod registry;
mod run;

pub use config::*;
pub use plots::{cmc_svg, confusion_svg, emit_plots, loss_curve_svg};
pub use registry::{
    compare_to_registry, Comparison, ComparisonRow, RegistryEntry, RegistryRow, ResultsRegistry, REGISTRY_CSV,
};
pub use run::{
    aggregate_reports, build_detector, cap_per_class, evaluate_model, split_folds, format_aggregate, load_spec_dataset, run_experiment, write_cmc_csv,
    write_confusion_csv, Aggregate, ArtifactEntry, EvalArtifact, FoldSummary, RunManifest, RunOptions, RunSummary,
    StageRecord,
};
