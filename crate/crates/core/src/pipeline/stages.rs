use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adapt::{
    iterative_pseudo_rounds, log_csv, mean_teacher_train, read_pseudo_labels, train_detector, write_pseudo_labels,
    LabelFileHeader, MeanTeacherOutput, PseudoLabelSet, PseudoRounds,
};
use crate::detector::{infer, rasterize_bev, Detection};
use crate::error::{Error, Result};
use crate::evalkit::{
    confidence_density_report, density_csv, density_summary_csv, evaluate, map_csv, map_over_iterations, variance_csv,
    variance_report, DensityRow, EvalReport, IterationAp, Tier, VarianceRow, VarianceSnapshot,
};
use crate::nnkit::{checkpoint, ParamSet};
use crate::pipeline::artifact::{read_artifact, write_artifact};
use crate::pipeline::{sha256_hex, RunConfig, Scope};
use crate::scenegen::{generate_dataset, read_dataset, write_dataset, PointScene};

/// Scene index offset of the evaluation splits.
pub const EVAL_OFFSET: u64 = 100_000;

/// Dataset files written by `gen_data`.
pub const DATASETS: [&str; 5] = ["source_train", "source_eval", "target_train", "target_train_truth", "target_eval"];

/// File layout of one output directory.
#[derive(Clone, Debug)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn dataset(&self, name: &str) -> PathBuf {
        self.root.join("data").join(format!("{name}.jsonl"))
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("data/manifest.json")
    }

    pub fn source_model(&self) -> PathBuf {
        self.root.join("source/source.ckpt")
    }

    pub fn oracle_model(&self) -> PathBuf {
        self.root.join("source/oracle.ckpt")
    }

    pub fn labels(&self, iteration: usize) -> PathBuf {
        self.root.join(format!("pseudo/labels_iter{iteration}.jsonl"))
    }

    pub fn round_model(&self, iteration: usize) -> PathBuf {
        self.root.join(format!("pseudo/model_iter{iteration}.ckpt"))
    }

    pub fn adapt_file(&self, arm: Arm, name: &str) -> PathBuf {
        self.root.join("adapt").join(format!("{}_{name}", arm.name()))
    }

    pub fn eval_csv(&self, seed: u64) -> PathBuf {
        self.root.join(format!("eval/eval_seed{seed}.csv"))
    }

    /// `report/<stem>_seed<seed>.<ext>` for a file name `<stem>.<ext>`.
    pub fn report(&self, name: &str, seed: u64) -> PathBuf {
        let (stem, ext) = name.rsplit_once('.').unwrap_or((name, "csv"));
        self.root.join(format!("report/{stem}_seed{seed}.{ext}"))
    }
}

/// Mean-teacher ablation arm.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Arm {
    Uncertainty,
    Plain,
}

impl Arm {
    pub const ALL: [Arm; 2] = [Arm::Uncertainty, Arm::Plain];

    pub fn of(cfg: &RunConfig) -> Self {
        if cfg.adapt.uncertainty {
            Arm::Uncertainty
        } else {
            Arm::Plain
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Arm::Uncertainty => "uamt",
            Arm::Plain => "mt",
        }
    }

    fn config(self, cfg: &RunConfig) -> RunConfig {
        let mut c = cfg.clone();
        c.adapt.uncertainty = self == Arm::Uncertainty;
        c
    }
}

fn model_bytes(params: &ParamSet) -> Result<Vec<u8>> {
    checkpoint::encode(params)
}

fn load_model(path: &Path, hash: &str, force: bool) -> Result<ParamSet> {
    checkpoint::decode(&read_artifact(path, hash, force)?)
}

fn load_dataset(layout: &Layout, cfg: &RunConfig, name: &str, force: bool) -> Result<Vec<PointScene>> {
    let path = layout.dataset(name);
    read_artifact(&path, &cfg.hash(Scope::Data), force)?;
    read_dataset(&path)
}

/// Writes a file produced by `write` and seals it with a sidecar.
fn sealed(path: &Path, stage: &str, hash: &str, cfg: &RunConfig, write: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    write(path)?;
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    write_artifact(path, &bytes, stage, hash, cfg)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub scenes: usize,
    pub labels_withheld: bool,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub seed: u64,
    pub placement_failures: usize,
    pub files: Vec<ManifestEntry>,
}

/// Source train/eval, target train (labels withheld), the same target
/// scenes with labels for the analyses, and target eval.
pub fn gen_data(cfg: &RunConfig) -> Result<Manifest> {
    let stage = "gen-data";
    let run = || -> Result<Manifest> {
        cfg.validate()?;
        let r = cfg.resolved();
        let layout = Layout::new(&cfg.io.out_dir);
        let hash = cfg.hash(Scope::Data);
        let sg = &r.scenegen;
        let draws = [
            (DATASETS[0], generate_dataset(&sg.source, sg.n_train, 0)?, false),
            (DATASETS[1], generate_dataset(&sg.source, sg.n_eval, EVAL_OFFSET)?, false),
            (DATASETS[2], generate_dataset(&sg.target, sg.n_train, 0)?, true),
            (DATASETS[3], generate_dataset(&sg.target, sg.n_train, 0)?, false),
            (DATASETS[4], generate_dataset(&sg.target, sg.n_eval, EVAL_OFFSET)?, false),
        ];
        let mut manifest = Manifest {
            config_hash: hash.clone(),
            seed: r.seed,
            placement_failures: 0,
            files: Vec::new(),
        };
        for (name, draw, withhold) in draws {
            let path = layout.dataset(name);
            sealed(&path, stage, &hash, cfg, |p| write_dataset(&draw.scenes, p, withhold))?;
            manifest.placement_failures += draw.placement_failures;
            manifest.files.push(ManifestEntry {
                name: name.to_string(),
                scenes: draw.scenes.len(),
                labels_withheld: withhold,
                sha256: sha256_hex(&std::fs::read(&path).map_err(|e| Error::io(&path, e))?),
            });
        }
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        write_artifact(&layout.manifest(), text.as_bytes(), stage, &hash, cfg)?;
        Ok(manifest)
    };
    run().map_err(|e| e.in_stage(stage))
}

/// Trains the source model, or with `oracle` the analysis-only model
/// trained on labeled target scenes.
pub fn train_source(cfg: &RunConfig, oracle: bool, force: bool) -> Result<ParamSet> {
    let stage = "train-source";
    let run = || -> Result<ParamSet> {
        cfg.validate()?;
        let r = cfg.resolved();
        let layout = Layout::new(&cfg.io.out_dir);
        let scenes = load_dataset(&layout, cfg, if oracle { DATASETS[3] } else { DATASETS[0] }, force)?;
        let init = r.detector.arch.init_params(r.seed);
        let out = train_detector(&scenes, &init, &r.detector, &r.source_training)?;
        let hash = cfg.hash(Scope::Source);
        let path = if oracle { layout.oracle_model() } else { layout.source_model() };
        write_artifact(&path, &model_bytes(&out.params)?, stage, &hash, cfg)?;
        let mut log_path = path.clone();
        log_path.set_extension("log.csv");
        write_artifact(&log_path, log_csv(&out.log).as_bytes(), stage, &hash, cfg)?;
        Ok(out.params)
    };
    run().map_err(|e| e.in_stage(stage))
}

/// Iterative pseudo-labelling from the source model; label sets and
/// round models are written as they are produced.
pub fn pseudo_iter(cfg: &RunConfig, force: bool) -> Result<PseudoRounds> {
    let stage = "pseudo-iter";
    let run = || -> Result<PseudoRounds> {
        cfg.validate()?;
        let r = cfg.resolved();
        let layout = Layout::new(&cfg.io.out_dir);
        let source_bytes = read_artifact(&layout.source_model(), &cfg.hash(Scope::Source), force)?;
        let source = checkpoint::decode(&source_bytes)?;
        let scenes = load_dataset(&layout, cfg, DATASETS[2], force)?;
        let hash = cfg.hash(Scope::Pseudo);
        let source_hash = sha256_hex(&source_bytes);
        let rounds = iterative_pseudo_rounds(&source, &scenes, &r.detector, &r.adapt, |set, model| {
            let model_hash = match model {
                Some(m) => {
                    let bytes = model_bytes(m)?;
                    write_artifact(&layout.round_model(set.iteration), &bytes, stage, &hash, cfg)?;
                    sha256_hex(&bytes)
                }
                None => source_hash.clone(),
            };
            let header = LabelFileHeader {
                iteration: set.iteration,
                threshold: set.threshold,
                model_hash,
                config_hash: hash.clone(),
                seed: r.seed,
            };
            sealed(&layout.labels(set.iteration), stage, &hash, cfg, |p| write_pseudo_labels(set, &header, p))
        })?;
        for (j, log) in rounds.logs.iter().enumerate() {
            let mut p = layout.round_model(j + 1);
            p.set_extension("log.csv");
            write_artifact(&p, log_csv(log).as_bytes(), stage, &hash, cfg)?;
        }
        Ok(rounds)
    };
    run().map_err(|e| e.in_stage(stage))
}

fn load_labels(layout: &Layout, cfg: &RunConfig, iteration: usize, force: bool) -> Result<PseudoLabelSet> {
    let path = layout.labels(iteration);
    read_artifact(&path, &cfg.hash(Scope::Pseudo), force)?;
    Ok(read_pseudo_labels(&path)?.0)
}

/// Mean-teacher training on the final pseudo-labels; the arm follows
/// `adapt.uncertainty`.
pub fn adapt(cfg: &RunConfig, force: bool) -> Result<MeanTeacherOutput> {
    let stage = "adapt";
    let run = || -> Result<MeanTeacherOutput> {
        cfg.validate()?;
        let r = cfg.resolved();
        let layout = Layout::new(&cfg.io.out_dir);
        let source = load_model(&layout.source_model(), &cfg.hash(Scope::Source), force)?;
        let scenes = load_dataset(&layout, cfg, DATASETS[2], force)?;
        let truth = load_dataset(&layout, cfg, DATASETS[3], force)?;
        let labels = load_labels(&layout, cfg, r.adapt.iterations, force)?;
        let out = mean_teacher_train(&source, &scenes, &labels, Some(&truth), &r.detector, &r.adapt)?;
        let arm = Arm::of(cfg);
        let hash = cfg.hash(Scope::Adapt);
        write_artifact(&layout.adapt_file(arm, "student.ckpt"), &model_bytes(&out.student)?, stage, &hash, cfg)?;
        write_artifact(&layout.adapt_file(arm, "teacher.ckpt"), &model_bytes(&out.teacher)?, stage, &hash, cfg)?;
        write_artifact(&layout.adapt_file(arm, "log.csv"), log_csv(&out.log).as_bytes(), stage, &hash, cfg)?;
        let snaps = serde_json::to_string(&out.snapshots).expect("snapshots serialize");
        write_artifact(&layout.adapt_file(arm, "snapshots.json"), snaps.as_bytes(), stage, &hash, cfg)?;
        Ok(out)
    };
    run().map_err(|e| e.in_stage(stage))
}

/// One evaluated model.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub model: String,
    pub eval_set: String,
    pub report: EvalReport,
}

impl EvalRow {
    pub fn moderate_ap(&self) -> f64 {
        self.report.moderate_ap()
    }
}

pub fn detect_all(params: &ParamSet, scenes: &[PointScene], cfg: &RunConfig) -> Result<Vec<Vec<Detection>>> {
    let det = &cfg.detector;
    scenes.iter().map(|s| infer(params, &rasterize_bev(s, &det.grid), det)).collect()
}

fn eval_csv(rows: &[EvalRow]) -> String {
    let mut s = String::from("model,eval_set,easy_ap,moderate_ap,hard_ap,moderate_tp,moderate_fp,moderate_gt,config_hash,seed\n");
    for r in rows {
        let ap = |t| r.report.tier(t).ap.map_or("absent".to_string(), |a| format!("{:.4}", 100.0 * a));
        let m = r.report.tier(Tier::Moderate);
        writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            r.model,
            r.eval_set,
            ap(Tier::Easy),
            ap(Tier::Moderate),
            ap(Tier::Hard),
            m.tp,
            m.fp,
            m.n_gt,
            r.report.config_hash,
            r.report.seed
        )
        .expect("string");
    }
    s
}

/// Models that exist in the output directory, in report order. Missing
/// optional models are skipped; present ones must match the config.
fn available_models(layout: &Layout, cfg: &RunConfig, force: bool) -> Result<Vec<(String, ParamSet)>> {
    let mut out = vec![("source".to_string(), load_model(&layout.source_model(), &cfg.hash(Scope::Source), force)?)];
    if layout.oracle_model().exists() {
        out.push(("oracle".into(), load_model(&layout.oracle_model(), &cfg.hash(Scope::Source), force)?));
    }
    for j in 1..=cfg.adapt.iterations {
        let p = layout.round_model(j);
        if p.exists() {
            out.push((format!("self_training_iter{j}"), load_model(&p, &cfg.hash(Scope::Pseudo), force)?));
        }
    }
    for arm in Arm::ALL {
        let hash = arm.config(cfg).hash(Scope::Adapt);
        for net in ["teacher", "student"] {
            let p = layout.adapt_file(arm, &format!("{net}.ckpt"));
            if p.exists() {
                out.push((format!("{}_{net}", arm.name()), load_model(&p, &hash, force)?));
            }
        }
    }
    Ok(out)
}

/// AP of every available model on the target eval split, plus the source
/// model on the source eval split.
pub fn eval(cfg: &RunConfig, force: bool) -> Result<Vec<EvalRow>> {
    let stage = "eval";
    let run = || -> Result<Vec<EvalRow>> {
        cfg.validate()?;
        let r = cfg.resolved();
        let layout = Layout::new(&cfg.io.out_dir);
        let target = load_dataset(&layout, cfg, DATASETS[4], force)?;
        let source_eval = load_dataset(&layout, cfg, DATASETS[1], force)?;
        let hash = cfg.hash(Scope::Adapt);
        let mut rows = Vec::new();
        for (name, params) in available_models(&layout, cfg, force)? {
            let sets: &[(&str, &[PointScene])] = if name == "source" {
                &[("source_eval", &source_eval), ("target_eval", &target)]
            } else {
                &[("target_eval", &target)]
            };
            for (set_name, scenes) in sets {
                let mut report = evaluate(&detect_all(&params, scenes, &r)?, scenes, &r.eval)?;
                report.config_hash = hash.clone();
                report.seed = r.seed;
                rows.push(EvalRow {
                    model: name.clone(),
                    eval_set: set_name.to_string(),
                    report,
                });
            }
        }
        write_artifact(&layout.eval_csv(r.seed), eval_csv(&rows).as_bytes(), stage, &hash, cfg)?;
        Ok(rows)
    };
    run().map_err(|e| e.in_stage(stage))
}

/// Diagnostics written by `report`.
#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    /// Confidence of correct vs incorrect labels per round model.
    pub density: Vec<DensityRow>,
    /// Moderate AP per round; iteration 0 is the source model.
    pub map_curve: Vec<IterationAp>,
    /// Teacher variance on incorrect ROIs, per arm that has been trained.
    pub variance: Vec<(Arm, Vec<VarianceRow>)>,
    pub summary: String,
}

/// Confidence densities, AP per round and teacher variance reports plus a
/// plain-text summary. Label sets for the density report are taken from
/// each round model at the first threshold, so every round is judged over
/// the same confidence range.
pub fn report(cfg: &RunConfig, force: bool) -> Result<Report> {
    let stage = "report";
    let run = || -> Result<Report> {
        cfg.validate()?;
        let r = cfg.resolved();
        let layout = Layout::new(&cfg.io.out_dir);
        let train = load_dataset(&layout, cfg, DATASETS[2], force)?;
        let truth = load_dataset(&layout, cfg, DATASETS[3], force)?;
        let target = load_dataset(&layout, cfg, DATASETS[4], force)?;
        let mut models = vec![load_model(&layout.source_model(), &cfg.hash(Scope::Source), force)?];
        for j in 1..=r.adapt.iterations {
            models.push(load_model(&layout.round_model(j), &cfg.hash(Scope::Pseudo), force)?);
        }
        let floor = r.adapt.delta(0);
        let mut sets = Vec::with_capacity(models.len());
        for (j, m) in models.iter().enumerate() {
            let labels = detect_all(m, &train, &r)?
                .into_iter()
                .map(|d| crate::adapt::threshold_detections(d, floor))
                .collect();
            sets.push((j, labels));
        }
        let density = confidence_density_report(&sets, &truth, r.eval.correct_iou)?;
        let map_curve = map_over_iterations(&models, &target, &r.detector, &r.eval)?;
        let mut variance = Vec::new();
        for arm in Arm::ALL {
            let p = layout.adapt_file(arm, "snapshots.json");
            if !p.exists() {
                continue;
            }
            let bytes = read_artifact(&p, &arm.config(cfg).hash(Scope::Adapt), force)?;
            let snaps: Vec<VarianceSnapshot> = serde_json::from_slice(&bytes).map_err(|e| Error::Format {
                path: p.display().to_string(),
                line: e.line(),
                message: e.to_string(),
            })?;
            variance.push((arm, variance_report(&snaps)?));
        }
        let hash = cfg.hash(Scope::Adapt);
        let seed = r.seed;
        let put = |name: &str, text: &str| write_artifact(&layout.report(name, seed), text.as_bytes(), stage, &hash, cfg);
        put("fig4_density.csv", &density_csv(&density))?;
        put("fig4_summary.csv", &density_summary_csv(&density))?;
        put("fig5_map.csv", &map_csv(&map_curve))?;
        for (arm, rows) in &variance {
            put(&format!("fig6_variance_{}.csv", arm.name()), &variance_csv(rows))?;
        }
        let summary = summary_text(&r, &density, &map_curve, &variance);
        put("summary.txt", &summary)?;
        Ok(Report {
            density,
            map_curve,
            variance,
            summary,
        })
    };
    run().map_err(|e| e.in_stage(stage))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("n/a".to_string(), |x| format!("{x:.4}"))
}

fn summary_text(cfg: &RunConfig, density: &[DensityRow], curve: &[IterationAp], variance: &[(Arm, Vec<VarianceRow>)]) -> String {
    let mut s = String::new();
    writeln!(s, "seed: {}", cfg.seed).expect("string");
    writeln!(s, "config_hash: {}", cfg.hash(Scope::Adapt)).expect("string");
    writeln!(s, "\n[moderate_ap_per_iteration]").expect("string");
    for p in curve {
        writeln!(s, "iter{}: {:.4}", p.iteration, p.moderate_ap).expect("string");
    }
    writeln!(s, "\n[mean_confidence_of_incorrect_labels]").expect("string");
    for d in density {
        writeln!(s, "iter{}: {}", d.iteration, fmt_opt(d.mean_conf_incorrect)).expect("string");
    }
    for (arm, rows) in variance {
        writeln!(s, "\n[teacher_variance_incorrect_rois.{}]", arm.name()).expect("string");
        for r in rows {
            writeln!(
                s,
                "epoch{}: n={} median={} frac_below_1={}",
                r.epoch,
                r.n_incorrect,
                fmt_opt(r.median),
                fmt_opt(r.frac_below_one)
            )
            .expect("string");
        }
    }
    s
}

/// Every stage in order, each skipped when its final artifact is current.
pub fn run_pipeline(cfg: &RunConfig, arms: &[Arm]) -> Result<(Vec<EvalRow>, Report)> {
    use crate::pipeline::artifact::is_current;
    let layout = Layout::new(&cfg.io.out_dir);
    if !is_current(&layout.manifest(), &cfg.hash(Scope::Data)) {
        gen_data(cfg)?;
    }
    if !is_current(&layout.source_model(), &cfg.hash(Scope::Source)) {
        train_source(cfg, false, false)?;
    }
    if !is_current(&layout.labels(cfg.adapt.iterations), &cfg.hash(Scope::Pseudo)) {
        pseudo_iter(cfg, false)?;
    }
    for arm in arms {
        let c = arm.config(cfg);
        if !is_current(&layout.adapt_file(*arm, "snapshots.json"), &c.hash(Scope::Adapt)) {
            adapt(&c, false)?;
        }
    }
    Ok((eval(cfg, false)?, report(cfg, false)?))
}
