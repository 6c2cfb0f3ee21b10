use std::fmt::Write as _;

use rand::seq::SliceRandom;

use crate::adapt::TrainConfig;
use crate::detector::{
    assign_targets, loss_and_grad, rasterize_bev, BBox, DetectorConfig, LossComponents, ObjectiveOptions, RoiSupervision,
    ScenePass,
};
use crate::error::Result;
use crate::nnkit::{adam_step, AdamState, Grid, ParamSet, RngStream};
use crate::scenegen::{global_augment, random_object_scaling, PointScene};

pub(crate) const SHUFFLE_TAG: u64 = 1;
pub(crate) const AUGMENT_TAG: u64 = 2;
pub(crate) const DROPOUT_TAG: u64 = 3;
pub(crate) const TEACHER_TAG: u64 = 4;
const TRAIN_STREAM: u64 = 0x7472_6169_6e;

/// Loss summary of one optimizer step (batch means).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLog {
    pub epoch: usize,
    pub step: usize,
    pub terms: LossComponents,
    pub total: f64,
    /// Mean uncertainty weight over the batch's ROIs (1 without a teacher).
    pub mean_c: f64,
    /// Fraction of ROIs whose weight sits at the lower clip.
    pub frac_lower_clip: f64,
}

pub fn log_csv(log: &[StepLog]) -> String {
    let mut s = String::from("epoch,step,rpn_cls,rpn_reg,rpn_dir,roi_cls_unc,roi_tea,total,mean_c,frac_lower_clip\n");
    for l in log {
        let t = l.terms;
        writeln!(
            s,
            "{},{},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e}",
            l.epoch, l.step, t.rpn_cls, t.rpn_reg, t.rpn_dir, t.roi_cls, t.roi_tea, l.total, l.mean_c, l.frac_lower_clip
        )
        .expect("string");
    }
    s
}

/// Per-epoch mean of the step totals.
pub fn epoch_means(log: &[StepLog]) -> Vec<(usize, f64)> {
    let mut out: Vec<(usize, f64, usize)> = Vec::new();
    for l in log {
        match out.last_mut() {
            Some((e, sum, n)) if *e == l.epoch => {
                *sum += l.total;
                *n += 1;
            }
            _ => out.push((l.epoch, l.total, 1)),
        }
    }
    out.into_iter().map(|(e, s, n)| (e, s / n as f64)).collect()
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub params: ParamSet,
    pub log: Vec<StepLog>,
}

/// Sums per-scene gradients in batch order and returns their mean.
pub(crate) struct BatchAccumulator {
    grads: Option<ParamSet>,
    comps: LossComponents,
    count: usize,
}

impl BatchAccumulator {
    pub fn new() -> Self {
        Self {
            grads: None,
            comps: LossComponents::default(),
            count: 0,
        }
    }

    pub fn add(&mut self, comps: &LossComponents, grads: ParamSet) -> Result<()> {
        match &mut self.grads {
            Some(acc) => acc.add_scaled(&grads, 1.0)?,
            None => self.grads = Some(grads),
        }
        self.comps.add(comps);
        self.count += 1;
        Ok(())
    }

    pub fn finish(self) -> Option<(LossComponents, ParamSet)> {
        let inv = 1.0 / self.count as f64;
        self.grads.map(|mut g| {
            g.scale(inv);
            (self.comps.scaled(inv), g)
        })
    }
}

/// Scene view used by a training step: raster input plus label boxes.
pub(crate) fn prepare(scene: &PointScene, det: &DetectorConfig) -> (Grid, Vec<BBox>) {
    (rasterize_bev(scene, &det.grid), scene.gt_boxes.clone())
}

/// Supervised training on the scenes' boxes with every teacher term zero.
/// Augmentation, when configured, is drawn per (epoch, scene).
pub fn train_detector(scenes: &[PointScene], init: &ParamSet, det: &DetectorConfig, cfg: &TrainConfig) -> Result<TrainOutput> {
    cfg.validate()?;
    det.validate()?;
    let mut params = init.clone();
    let mut adam = AdamState::new(&params);
    let base = RngStream::new(cfg.seed, TRAIN_STREAM);
    let extent = det.grid.extent();
    let fixed: Option<Vec<(Grid, Vec<BBox>)>> = cfg.augment.is_none().then(|| scenes.iter().map(|s| prepare(s, det)).collect());
    let opts = ObjectiveOptions {
        student_dropout: cfg.student_dropout,
        use_dir_loss: true,
    };
    let mut log = Vec::new();
    let mut step = 0;
    let n = scenes.len();
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut base.derive(SHUFFLE_TAG, epoch as u64));
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut acc = BatchAccumulator::new();
            for (k, &i) in batch.iter().enumerate() {
                let sample = (epoch * n + b * cfg.batch_size + k) as u64;
                let owned;
                let (input, boxes) = match (&fixed, &cfg.augment) {
                    (Some(f), _) => (&f[i].0, &f[i].1),
                    (None, Some(aug)) => {
                        let mut rs = base.derive(AUGMENT_TAG, sample);
                        let scaled = random_object_scaling(&scenes[i], aug.object_scale, &extent, &mut rs)?;
                        owned = prepare(&global_augment(&scaled, aug, &extent, &mut rs), det);
                        (&owned.0, &owned.1)
                    }
                    (None, None) => unreachable!("fixed inputs exist without augmentation"),
                };
                let pass = ScenePass::run(&params, input, det)?;
                let anchors = assign_targets(&det.grid, boxes);
                let sup = RoiSupervision::from_boxes(&pass.proposals, boxes, det.loss.roi_fg_iou);
                let mut ds = base.derive(DROPOUT_TAG, sample);
                let (comps, grads) = loss_and_grad(&params, &pass, &anchors, &sup, det, &opts, &mut ds)?;
                comps.total(step)?;
                acc.add(&comps, grads)?;
            }
            let Some((comps, grads)) = acc.finish() else { continue };
            let total = comps.total(step)?;
            adam_step(&mut params, &grads, &mut adam, &cfg.adam)?;
            log.push(StepLog {
                epoch,
                step,
                terms: comps,
                total,
                mean_c: 1.0,
                frac_lower_clip: 0.0,
            });
            step += 1;
        }
    }
    Ok(TrainOutput { params, log })
}
