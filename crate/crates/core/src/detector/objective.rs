//! Whole-scene forward pass, inference and the supervised loss with its
//! gradient with respect to every detector parameter.

use crate::detector::losses::{dir_ce_loss, focal_loss, roi_bce_loss, smooth_l1};
use crate::detector::network::{
    backbone_backward, backbone_forward, roi_backward, roi_forward, rpn_backward, rpn_forward, BackboneCache,
    RpnOutput,
};
use crate::detector::{iou, propose, rank_order, AnchorTargets, BBox, DetectorConfig, Detection, LossComponents};
use crate::error::{Error, Result};
use crate::nnkit::{Grid, ParamSet, RngStream, Scalar};

/// Backbone activations, RPN outputs and the post-NMS proposals of one scene.
#[derive(Clone, Debug)]
pub struct ScenePass<S: Scalar> {
    pub backbone: BackboneCache<S>,
    pub rpn: RpnOutput<S>,
    pub proposals: Vec<Detection>,
}

impl<S: Scalar> ScenePass<S> {
    pub fn run(params: &ParamSet<S>, input: &Grid<S>, cfg: &DetectorConfig) -> Result<Self> {
        let backbone = backbone_forward(params, input)?;
        let rpn = rpn_forward(&backbone.features, params)?;
        let proposals = propose(&rpn, &cfg.grid, &cfg.proposals);
        Ok(Self {
            backbone,
            rpn,
            proposals,
        })
    }

    /// Forward pass that reuses a fixed proposal list (gradient checks,
    /// proposals shared between networks).
    pub fn with_proposals(params: &ParamSet<S>, input: &Grid<S>, proposals: Vec<Detection>) -> Result<Self> {
        let backbone = backbone_forward(params, input)?;
        let rpn = rpn_forward(&backbone.features, params)?;
        Ok(Self {
            backbone,
            rpn,
            proposals,
        })
    }

    pub fn features(&self) -> &Grid<S> {
        &self.backbone.features
    }
}

/// Full inference: proposals rescored by the ROI head with dropout off.
/// Detections come back in descending confidence.
pub fn infer<S: Scalar>(params: &ParamSet<S>, input: &Grid<S>, cfg: &DetectorConfig) -> Result<Vec<Detection>> {
    let pass = ScenePass::run(params, input, cfg)?;
    let mut unused = RngStream::new(0, 0);
    let roi = roi_forward(pass.features(), &pass.proposals, params, &cfg.arch, &cfg.grid, false, &mut unused)?;
    let mut dets: Vec<Detection> = roi
        .used
        .iter()
        .zip(&roi.logits)
        .map(|(&i, z)| pass.proposals[i].with_roi_logit(z.as_f64()))
        .collect();
    dets.sort_by(rank_order);
    Ok(dets)
}

/// 1 where the proposal overlaps some box with IoU at or above `fg_iou`.
pub fn roi_targets(proposals: &[Detection], boxes: &[BBox], fg_iou: f64) -> Vec<f64> {
    proposals
        .iter()
        .map(|p| {
            let best = boxes.iter().map(|b| iou(&p.bbox, b)).fold(0.0, f64::max);
            if best >= fg_iou {
                1.0
            } else {
                0.0
            }
        })
        .collect()
}

/// Teacher-derived soft targets and per-ROI loss weights.
#[derive(Clone, Debug, PartialEq)]
pub struct TeacherTargets {
    pub probs: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Supervision of the ROI head, aligned with `ScenePass::proposals`.
#[derive(Clone, Debug, PartialEq)]
pub struct RoiSupervision {
    pub targets: Vec<f64>,
    pub weights: Vec<f64>,
    pub teacher: Option<TeacherTargets>,
}

impl RoiSupervision {
    /// Unweighted supervision from (pseudo-)ground-truth boxes.
    pub fn from_boxes(proposals: &[Detection], boxes: &[BBox], fg_iou: f64) -> Self {
        let targets = roi_targets(proposals, boxes, fg_iou);
        let weights = vec![1.0; targets.len()];
        Self {
            targets,
            weights,
            teacher: None,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ObjectiveOptions {
    pub student_dropout: bool,
    /// Include the direction loss (off only for ablations).
    pub use_dir_loss: bool,
}

impl Default for ObjectiveOptions {
    fn default() -> Self {
        Self {
            student_dropout: true,
            use_dir_loss: true,
        }
    }
}

fn pick<T: Copy>(xs: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| xs[i]).collect()
}

/// Loss terms of one scene and their gradient with respect to `params`.
pub fn loss_and_grad<S: Scalar>(
    params: &ParamSet<S>,
    pass: &ScenePass<S>,
    anchors: &AnchorTargets,
    roi_sup: &RoiSupervision,
    cfg: &DetectorConfig,
    opts: &ObjectiveOptions,
    stream: &mut RngStream,
) -> Result<(LossComponents, ParamSet<S>)> {
    let n_prop = pass.proposals.len();
    if roi_sup.targets.len() != n_prop || roi_sup.weights.len() != n_prop {
        return Err(Error::config("ROI supervision does not match the proposal list"));
    }
    let lc = &cfg.loss;
    let positive = anchors.positive_mask();

    let cls = focal_loss(&pass.rpn.cls_logit.values, &anchors.labels, lc.focal_gamma, lc.focal_alpha)?;
    let reg_pred: Vec<[S; 4]> = (0..pass.rpn.num_cells()).map(|c| pass.rpn.reg_at(c)).collect();
    let reg = smooth_l1(&reg_pred, &anchors.reg, &positive, lc.smooth_l1_beta)?;
    let dir = if opts.use_dir_loss {
        Some(dir_ce_loss(&pass.rpn.dir_logit.values, &anchors.dir, &positive)?)
    } else {
        None
    };

    let roi = roi_forward(
        pass.features(),
        &pass.proposals,
        params,
        &cfg.arch,
        &cfg.grid,
        opts.student_dropout,
        stream,
    )?;
    let roi_cls = roi_bce_loss(&roi.logits, &pick(&roi_sup.targets, &roi.used), &pick(&roi_sup.weights, &roi.used))?;
    let roi_tea = match &roi_sup.teacher {
        Some(t) => {
            if t.probs.len() != n_prop || t.weights.len() != n_prop {
                return Err(Error::config("teacher targets do not match the proposal list"));
            }
            Some(roi_bce_loss(&roi.logits, &pick(&t.probs, &roi.used), &pick(&t.weights, &roi.used))?)
        }
        None => None,
    };

    let comps = LossComponents {
        rpn_cls: cls.value.as_f64(),
        rpn_reg: reg.value.as_f64(),
        rpn_dir: dir.as_ref().map_or(0.0, |d| d.value.as_f64()),
        roi_cls: roi_cls.value.as_f64(),
        roi_tea: roi_tea.as_ref().map_or(0.0, |t| t.value.as_f64()),
    };

    let mut grads = params.zeros_like();
    let mut d_rpn = pass.rpn.zeros_like();
    d_rpn.cls_logit.values.copy_from_slice(&cls.grad);
    d_rpn.reg.values.copy_from_slice(&reg.grad);
    if let Some(d) = &dir {
        d_rpn.dir_logit.values.copy_from_slice(&d.grad);
    }
    let f = pass.features();
    let mut d_features = Grid::zeros(f.channels, f.height, f.width);
    rpn_backward(params, f, &d_rpn, &mut grads, &mut d_features)?;

    let mut d_logits = roi_cls.grad.clone();
    if let Some(t) = &roi_tea {
        for (a, b) in d_logits.iter_mut().zip(&t.grad) {
            *a += *b;
        }
    }
    roi_backward(params, &cfg.arch, &roi, &d_logits, &mut grads, &mut d_features)?;
    backbone_backward(params, &pass.backbone, d_features, &mut grads)?;
    Ok((comps, grads))
}
