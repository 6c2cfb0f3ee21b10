//! Stage-wise pipeline over an output directory: data generation, source
//! training, pseudo-label rounds, mean-teacher adaptation, evaluation and
//! reports. Every artifact carries a sidecar with its config hash.

mod artifact;
mod config;
mod stages;

pub use artifact::{is_current, meta_path, read_artifact, read_meta, write_artifact, ArtifactMeta, OutputLock};
pub use config::{sha256_hex, IoConfig, RunConfig, ScenegenConfig, Scope};
pub use stages::{
    adapt, detect_all, eval, gen_data, pseudo_iter, report, run_pipeline, train_source, Arm, EvalRow, Layout, Manifest,
    ManifestEntry, Report, DATASETS, EVAL_OFFSET,
};
