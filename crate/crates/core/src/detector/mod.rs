//! Micro BEV detector: rasterizer, conv backbone, RPN heads, anchor
//! decoding, NMS, dropout-bearing ROI head and the four base losses.

mod geometry;
mod grid_spec;
pub mod losses;
pub mod network;
mod objective;
mod postprocess;
mod raster;
mod targets;

use serde::{Deserialize, Serialize};

pub use geometry::{iou, BBox, Orient};
pub use grid_spec::GridSpec;
pub use losses::{LossComponents, LossConfig};
pub use network::{roi_forward, rpn_forward, Architecture, RpnOutput};
pub use objective::{infer, loss_and_grad, roi_targets, ObjectiveOptions, RoiSupervision, ScenePass, TeacherTargets};
pub use postprocess::{decode_boxes, nms, propose, rank_order, Decoded, Detection, ProposalConfig};
pub use raster::rasterize_bev;
pub use targets::{assign_targets, encode_box, AnchorLabel, AnchorTargets, IGNORE_DILATION};

use crate::error::Result;

/// Everything needed to build, run and train the detector.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorConfig {
    pub grid: GridSpec,
    pub arch: Architecture,
    pub loss: LossConfig,
    pub proposals: ProposalConfig,
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        self.arch.validate()?;
        if !(0.0..=1.0).contains(&self.proposals.nms_iou) {
            return Err(crate::Error::config("nms_iou must lie in [0, 1]"));
        }
        if self.proposals.top_k == 0 {
            return Err(crate::Error::config("proposal top_k must be positive"));
        }
        Ok(())
    }
}
