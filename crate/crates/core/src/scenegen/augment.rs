use serde::{Deserialize, Serialize};

use crate::detector::BBox;
use crate::error::{Error, Result};
use crate::nnkit::RngStream;
use crate::scenegen::{Extent, Point, PointScene};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentConfig {
    /// Per-object scale factor range `[lo, hi]`.
    pub object_scale: [f64; 2],
    pub global_scale: [f64; 2],
    pub right_angle_rotations: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            object_scale: [0.9, 1.1],
            global_scale: [0.95, 1.05],
            right_angle_rotations: true,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, [lo, hi]) in [("object_scale", self.object_scale), ("global_scale", self.global_scale)] {
            if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
                return Err(Error::config(format!("{name} must satisfy 0 < lo <= hi")));
            }
        }
        Ok(())
    }
}

fn scale_about(p: &Point, cx: f64, cy: f64, s: f64) -> Point {
    Point::new(cx + s * (p.x - cx), cy + s * (p.y - cy), p.intensity)
}

/// Scales each object (box and interior points) about its center by a factor
/// drawn from `[lo, hi]`, in index order. A scaled box that would overlap
/// another box (in its current state) or leave the extent is redrawn once
/// and otherwise left as is.
pub fn random_object_scaling(scene: &PointScene, range: [f64; 2], extent: &Extent, stream: &mut RngStream) -> Result<PointScene> {
    let [lo, hi] = range;
    if !(lo > 0.0 && lo <= hi) {
        return Err(Error::config("object scale range must satisfy 0 < lo <= hi"));
    }
    let mut boxes = scene.gt_boxes.clone();
    // owner box of each point, decided on the unscaled layout
    let owner: Vec<Option<usize>> = scene
        .points
        .iter()
        .map(|p| scene.gt_boxes.iter().position(|b| b.contains(p.x, p.y)))
        .collect();
    let mut factors = vec![1.0; boxes.len()];
    for i in 0..boxes.len() {
        for _attempt in 0..2 {
            let s = stream.uniform_in(lo, hi);
            let cand = scene.gt_boxes[i].scaled(s);
            let clear = extent.holds_box(&cand) && boxes.iter().enumerate().all(|(j, b)| j == i || !b.overlaps(&cand));
            if clear {
                boxes[i] = cand;
                factors[i] = s;
                break;
            }
        }
    }
    let points = scene
        .points
        .iter()
        .zip(&owner)
        .map(|(p, o)| match o {
            Some(i) if factors[*i] != 1.0 => scale_about(p, boxes[*i].cx, boxes[*i].cy, factors[*i]),
            _ => *p,
        })
        .filter(|p| extent.contains(p.x, p.y))
        .collect();
    Ok(PointScene {
        points,
        gt_boxes: boxes,
        ..scene.clone()
    })
}

/// Counter-clockwise rotation by `quarter_turns * 90` degrees, then scaling
/// about the origin.
pub fn similarity_transform(scene: &PointScene, scale: f64, quarter_turns: u32, extent: &Extent) -> PointScene {
    let rot = |x: f64, y: f64| match quarter_turns % 4 {
        0 => (x, y),
        1 => (-y, x),
        2 => (-x, -y),
        _ => (y, -x),
    };
    let flip = quarter_turns % 2 == 1;
    let points = scene
        .points
        .iter()
        .map(|p| {
            let (x, y) = rot(p.x, p.y);
            Point::new(scale * x, scale * y, p.intensity)
        })
        .filter(|p| extent.contains(p.x, p.y))
        .collect();
    let gt_boxes = scene
        .gt_boxes
        .iter()
        .map(|b| {
            let (cx, cy) = rot(b.cx, b.cy);
            BBox {
                cx: scale * cx,
                cy: scale * cy,
                w: scale * b.w,
                l: scale * b.l,
                orient: if flip { b.orient.flipped() } else { b.orient },
            }
        })
        .collect();
    PointScene {
        points,
        gt_boxes,
        ..scene.clone()
    }
}

/// Random global scale and right-angle rotation. The scale is capped so
/// every box stays inside the extent.
pub fn global_augment(scene: &PointScene, cfg: &AugmentConfig, extent: &Extent, stream: &mut RngStream) -> PointScene {
    let mut scale = stream.uniform_in(cfg.global_scale[0], cfg.global_scale[1]);
    let turns = stream.int_in(0, 3) as u32;
    let turns = if cfg.right_angle_rotations { turns } else { 0 };
    let rotated = similarity_transform(scene, 1.0, turns, extent);
    for b in &rotated.gt_boxes {
        let (x0, y0, x1, y1) = b.bounds();
        let reach_x = x0.abs().max(x1.abs());
        let reach_y = y0.abs().max(y1.abs());
        // the margin absorbs rounding in the scaled bounds
        scale = scale.min(extent.half_x() / reach_x * (1.0 - 1e-12)).min(extent.half_y() / reach_y * (1.0 - 1e-12));
    }
    similarity_transform(&rotated, scale, 0, extent)
}
