use rand::seq::SliceRandom;

use crate::adapt::train::{prepare, BatchAccumulator, DROPOUT_TAG, SHUFFLE_TAG, TEACHER_TAG};
use crate::adapt::{AdaptConfig, PseudoLabelSet, StepLog};
use crate::detector::network::{backbone_forward, roi_forward};
use crate::detector::{
    assign_targets, loss_and_grad, roi_targets, Architecture, DetectorConfig, Detection, GridSpec, ObjectiveOptions,
    RoiSupervision, ScenePass, TeacherTargets,
};
use crate::error::{Error, Result};
use crate::evalkit::{RoiRecord, VarianceSnapshot};
use crate::nnkit::{adam_step, ema_update, sigmoid, AdamState, Grid, ParamSet, RngStream};
use crate::scenegen::PointScene;

pub const MIN_WEIGHT: f64 = 1e-5;
const TEACHER_STREAM: u64 = 0x7465_6163_6865_72;

/// Monte-Carlo dropout statistics of one ROI.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TeacherStat {
    pub mean_logit: f64,
    pub variance: f64,
    pub weight: f64,
    pub pseudo_prob: f64,
}

/// Teacher statistics aligned with `used` (indices into the proposal list).
#[derive(Clone, Debug, PartialEq)]
pub struct TeacherStats {
    pub used: Vec<usize>,
    pub stats: Vec<TeacherStat>,
}

/// Inverse-variance loss weight clipped to `[1e-5, 1]`.
pub fn uncertainty_weight(variance: f64) -> Result<f64> {
    if !(variance >= 0.0) {
        return Err(Error::Internal(format!("teacher variance {variance} is not a non-negative number")));
    }
    Ok(if variance <= 1.0 { 1.0 } else { (1.0 / variance).max(MIN_WEIGHT) })
}

/// Running mean and sum of squared deviations.
#[derive(Clone, Copy, Debug, Default)]
struct Welford {
    n: usize,
    mean: f64,
    m2: f64,
}

impl Welford {
    fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    fn sample_variance(&self) -> f64 {
        self.m2 / (self.n - 1) as f64
    }
}

/// Runs the teacher's ROI head `passes` times with dropout on, pass `t`
/// drawing its masks from `base.split(t)`. With `over_probs` the variance is
/// taken over sigmoid outputs instead of logits.
#[allow(clippy::too_many_arguments)]
pub fn mc_teacher_predict(
    teacher: &ParamSet,
    features: &Grid,
    proposals: &[Detection],
    passes: usize,
    arch: &Architecture,
    grid: &GridSpec,
    base: &RngStream,
    over_probs: bool,
) -> Result<TeacherStats> {
    if passes < 2 {
        return Err(Error::config("Monte-Carlo dropout needs at least 2 passes"));
    }
    let mut used = Vec::new();
    let mut logit_acc: Vec<Welford> = Vec::new();
    let mut prob_acc: Vec<Welford> = Vec::new();
    for t in 0..passes {
        let out = roi_forward(features, proposals, teacher, arch, grid, true, &mut base.split(t as u64))?;
        if t == 0 {
            used = out.used.clone();
            logit_acc = vec![Welford::default(); used.len()];
            prob_acc = logit_acc.clone();
        }
        for (k, z) in out.logits.iter().enumerate() {
            logit_acc[k].push(*z);
            if over_probs {
                prob_acc[k].push(sigmoid(*z));
            }
        }
    }
    let stats = logit_acc
        .iter()
        .zip(&prob_acc)
        .map(|(l, p)| {
            let variance = if over_probs { p.sample_variance() } else { l.sample_variance() };
            Ok(TeacherStat {
                mean_logit: l.mean,
                variance,
                weight: uncertainty_weight(variance)?,
                pseudo_prob: sigmoid(l.mean),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TeacherStats { used, stats })
}

#[derive(Clone, Debug)]
pub struct MeanTeacherOutput {
    pub student: ParamSet,
    pub teacher: ParamSet,
    pub log: Vec<StepLog>,
    /// Per-ROI teacher variance at the first and last epoch; empty without
    /// ground truth to judge the pseudo-labels.
    pub snapshots: Vec<VarianceSnapshot>,
}

impl MeanTeacherOutput {
    /// The network reported as the adapted model.
    pub fn adapted(&self, cfg: &AdaptConfig) -> &ParamSet {
        if cfg.evaluate_teacher {
            &self.teacher
        } else {
            &self.student
        }
    }
}

/// Student/teacher training on pseudo-labeled target scenes. Both networks
/// start from `source`; only the student receives gradients and the teacher
/// follows it by EMA. `truth`, when given, holds the same scenes with real
/// boxes and is used only for the variance snapshots.
pub fn mean_teacher_train(
    source: &ParamSet,
    scenes: &[PointScene],
    labels: &PseudoLabelSet,
    truth: Option<&[PointScene]>,
    det: &DetectorConfig,
    cfg: &AdaptConfig,
) -> Result<MeanTeacherOutput> {
    mean_teacher_observed(source, scenes, labels, truth, det, cfg, |_| {})
}

/// `mean_teacher_train` calling `on_step` with the student after every
/// optimizer step.
pub(crate) fn mean_teacher_observed(
    source: &ParamSet,
    scenes: &[PointScene],
    labels: &PseudoLabelSet,
    truth: Option<&[PointScene]>,
    det: &DetectorConfig,
    cfg: &AdaptConfig,
    mut on_step: impl FnMut(&ParamSet),
) -> Result<MeanTeacherOutput> {
    cfg.validate()?;
    det.validate()?;
    let labeled = labels.apply_to(scenes)?;
    if let Some(t) = truth {
        if t.len() != scenes.len() {
            return Err(Error::config("truth scenes do not match the target scenes"));
        }
    }
    let prepared: Vec<_> = labeled.iter().map(|s| prepare(s, det)).collect();
    let mut student = source.clone();
    let mut teacher = source.clone();
    let mut adam = AdamState::new(&student);
    let base = RngStream::new(cfg.seed, TEACHER_STREAM);
    let opts = ObjectiveOptions {
        student_dropout: cfg.student_dropout,
        use_dir_loss: cfg.dir_loss,
    };
    let n = scenes.len();
    let mut log = Vec::new();
    let mut snapshots = Vec::new();
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let snap = truth.filter(|_| epoch == 0 || epoch + 1 == cfg.epochs);
        let mut rois = Vec::new();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut base.derive(SHUFFLE_TAG, epoch as u64));
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut acc = BatchAccumulator::new();
            let (mut c_sum, mut c_low, mut c_n) = (0.0, 0usize, 0usize);
            for (k, &i) in batch.iter().enumerate() {
                let sample = (epoch * n + b * cfg.batch_size + k) as u64;
                let (input, boxes) = &prepared[i];
                let pass = ScenePass::run(&student, input, det)?;
                let teacher_features = backbone_forward(&teacher, input)?.features;
                let ts = mc_teacher_predict(
                    &teacher,
                    &teacher_features,
                    &pass.proposals,
                    cfg.mc_passes,
                    &det.arch,
                    &det.grid,
                    &base.derive(TEACHER_TAG, sample),
                    cfg.variance_over_probs,
                )?;
                let np = pass.proposals.len();
                let targets = roi_targets(&pass.proposals, boxes, det.loss.roi_fg_iou);
                let mut c = vec![0.0; np];
                let mut probs = vec![0.0; np];
                for (&p, st) in ts.used.iter().zip(&ts.stats) {
                    c[p] = if cfg.uncertainty { st.weight } else { 1.0 };
                    probs[p] = st.pseudo_prob;
                    c_sum += c[p];
                    c_low += usize::from(c[p] <= MIN_WEIGHT);
                    c_n += 1;
                }
                if let Some(t) = snap {
                    let gt = roi_targets(&pass.proposals, &t[i].gt_boxes, det.loss.roi_fg_iou);
                    for (&p, st) in ts.used.iter().zip(&ts.stats) {
                        rois.push(RoiRecord {
                            variance: st.variance,
                            pseudo_positive: targets[p] == 1.0,
                            gt_positive: gt[p] == 1.0,
                        });
                    }
                }
                let tea_w = if cfg.weight_teacher_term { c.clone() } else { vec![1.0; np] };
                let sup = RoiSupervision {
                    targets,
                    weights: c,
                    teacher: Some(TeacherTargets { probs, weights: tea_w }),
                };
                let anchors = assign_targets(&det.grid, boxes);
                let mut ds = base.derive(DROPOUT_TAG, sample);
                let (comps, grads) = loss_and_grad(&student, &pass, &anchors, &sup, det, &opts, &mut ds)?;
                comps.total(step)?;
                acc.add(&comps, grads)?;
            }
            let Some((comps, grads)) = acc.finish() else { continue };
            let total = comps.total(step)?;
            adam_step(&mut student, &grads, &mut adam, &cfg.adam)?;
            on_step(&student);
            if !cfg.per_epoch_ema {
                ema_update(&mut teacher, &student, cfg.alpha)?;
            }
            let (mean_c, frac_lower_clip) = if c_n == 0 {
                (1.0, 0.0)
            } else {
                (c_sum / c_n as f64, c_low as f64 / c_n as f64)
            };
            log.push(StepLog {
                epoch,
                step,
                terms: comps,
                total,
                mean_c,
                frac_lower_clip,
            });
            step += 1;
        }
        if cfg.per_epoch_ema {
            ema_update(&mut teacher, &student, cfg.alpha)?;
        }
        if snap.is_some() {
            snapshots.push(VarianceSnapshot { epoch, rois });
        }
    }
    Ok(MeanTeacherOutput {
        student,
        teacher,
        log,
        snapshots,
    })
}
