use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::detector::{iou, BBox, GridSpec, Orient, RpnOutput};
use crate::nnkit::{sigmoid, Scalar};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Detection {
    pub bbox: BBox,
    /// `sigmoid(roi_logit)` once the ROI head has run; RPN score before.
    pub confidence: f64,
    pub roi_logit: f64,
}

impl Detection {
    /// Detection whose confidence is `sigmoid(logit)`.
    pub fn new(bbox: BBox, logit: f64) -> Self {
        Self {
            bbox,
            confidence: sigmoid(logit),
            roi_logit: logit,
        }
    }

    pub fn with_roi_logit(mut self, logit: f64) -> Self {
        self.roi_logit = logit;
        self.confidence = sigmoid(logit);
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProposalConfig {
    pub nms_iou: f64,
    pub top_k: usize,
    /// Highest-scoring decoded anchors kept before NMS.
    pub pre_nms_top_k: usize,
}

impl Default for ProposalConfig {
    fn default() -> Self {
        Self {
            nms_iou: 0.1,
            top_k: 50,
            pre_nms_top_k: 256,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct Decoded {
    /// One detection per cell with a finite regression, in cell order.
    pub detections: Vec<Detection>,
    /// Cells dropped because their regression was not finite.
    pub discarded: usize,
}

/// Anchor decoding: center offsets are in cell units, sizes in log space
/// relative to the anchor, orientation from the sign of the direction logit.
pub fn decode_boxes<S: Scalar>(rpn: &RpnOutput<S>, spec: &GridSpec) -> Decoded {
    let mut out = Decoded::default();
    for cell in 0..spec.num_cells() {
        let [dx, dy, dlw, dll] = rpn.reg_at(cell).map(Scalar::as_f64);
        let (ix, iy) = spec.unflat(cell);
        let (ax, ay) = spec.cell_center(ix, iy);
        let bbox = BBox {
            cx: ax + dx * spec.cell_size_x(),
            cy: ay + dy * spec.cell_size_y(),
            w: spec.anchor_w * dlw.exp(),
            l: spec.anchor_l * dll.exp(),
            orient: if rpn.dir_logit.values[cell].as_f64() > 0.0 {
                Orient::AlongY
            } else {
                Orient::AlongX
            },
        };
        if !bbox.is_valid() {
            out.discarded += 1;
            continue;
        }
        out.detections.push(Detection::new(bbox, rpn.cls_logit.values[cell].as_f64()));
    }
    out
}

/// Descending confidence, then ascending cx, then ascending cy.
pub fn rank_order(a: &Detection, b: &Detection) -> Ordering {
    b.confidence
        .total_cmp(&a.confidence)
        .then(a.bbox.cx.total_cmp(&b.bbox.cx))
        .then(a.bbox.cy.total_cmp(&b.bbox.cy))
}

/// Greedy non-maximum suppression: a detection survives unless a
/// higher-ranked survivor overlaps it with IoU above `iou_thresh`.
pub fn nms(dets: &[Detection], iou_thresh: f64, top_k: usize) -> Vec<Detection> {
    let mut sorted = dets.to_vec();
    sorted.sort_by(rank_order);
    let mut keep: Vec<Detection> = Vec::new();
    for d in sorted {
        if keep.len() >= top_k {
            break;
        }
        if keep.iter().all(|k| iou(&k.bbox, &d.bbox) <= iou_thresh) {
            keep.push(d);
        }
    }
    keep
}

/// Decoded anchors → pre-NMS top-k → NMS, keeping only proposals whose
/// center lies inside the grid.
pub fn propose<S: Scalar>(rpn: &RpnOutput<S>, spec: &GridSpec, cfg: &ProposalConfig) -> Vec<Detection> {
    let mut dets = decode_boxes(rpn, spec).detections;
    dets.retain(|d| spec.in_extent(d.bbox.cx, d.bbox.cy));
    if dets.len() > cfg.pre_nms_top_k {
        dets.select_nth_unstable_by(cfg.pre_nms_top_k, rank_order);
        dets.truncate(cfg.pre_nms_top_k);
    }
    nms(&dets, cfg.nms_iou, cfg.top_k)
}
