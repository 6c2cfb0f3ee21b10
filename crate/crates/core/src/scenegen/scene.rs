use serde::{Deserialize, Serialize};

use crate::detector::BBox;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
    pub intensity: f64,
}

impl Point {
    pub fn new(x: f64, y: f64, intensity: f64) -> Self {
        Self { x, y, intensity }
    }

    pub fn range(&self) -> f64 {
        self.x.hypot(self.y)
    }
}

/// Sensor-centered scene area: x in `[-x/2, x/2)`, y in `[-y/2, y/2)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Extent {
    pub x: f64,
    pub y: f64,
}

impl Default for Extent {
    fn default() -> Self {
        Self { x: 32.0, y: 32.0 }
    }
}

impl Extent {
    pub fn half_x(&self) -> f64 {
        self.x / 2.0
    }

    pub fn half_y(&self) -> f64 {
        self.y / 2.0
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= -self.half_x() && x < self.half_x() && y >= -self.half_y() && y < self.half_y()
    }

    /// Closed containment of a box footprint.
    pub fn holds_box(&self, b: &BBox) -> bool {
        let (x0, y0, x1, y1) = b.bounds();
        x0 >= -self.half_x() && y0 >= -self.half_y() && x1 <= self.half_x() && y1 <= self.half_y()
    }
}

/// One BEV sweep: points plus (possibly withheld) ground-truth boxes.
#[derive(Clone, Debug, PartialEq)]
pub struct PointScene {
    pub scene_id: String,
    pub domain_tag: String,
    pub points: Vec<Point>,
    pub gt_boxes: Vec<BBox>,
}

impl PointScene {
    pub fn points_in(&self, b: &BBox) -> usize {
        self.points.iter().filter(|p| b.contains(p.x, p.y)).count()
    }

    /// Checks the scene invariants against an extent: points and boxes
    /// inside, intensities in `[0, 1]`, boxes pairwise disjoint.
    pub fn check_invariants(&self, extent: &Extent) -> Result<(), String> {
        for p in &self.points {
            if !extent.contains(p.x, p.y) {
                return Err(format!("point ({}, {}) outside extent", p.x, p.y));
            }
            if !(0.0..=1.0).contains(&p.intensity) {
                return Err(format!("intensity {} outside [0, 1]", p.intensity));
            }
        }
        for (i, b) in self.gt_boxes.iter().enumerate() {
            if !b.is_valid() || !extent.holds_box(b) {
                return Err(format!("box {i} {b:?} invalid or outside extent"));
            }
            for (j, o) in self.gt_boxes.iter().enumerate().skip(i + 1) {
                if b.overlaps(o) {
                    return Err(format!("boxes {i} and {j} overlap"));
                }
            }
        }
        Ok(())
    }
}
