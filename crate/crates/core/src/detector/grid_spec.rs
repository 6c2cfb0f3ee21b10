use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// BEV raster layout. The scene is centered on the sensor: x spans
/// `[-extent_x / 2, extent_x / 2)` and likewise for y. Row index = y cell,
/// column index = x cell. One anchor of size `anchor_w x anchor_l` sits at
/// every cell center.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub extent_x: f64,
    pub extent_y: f64,
    pub cells_x: usize,
    pub cells_y: usize,
    pub anchor_w: f64,
    pub anchor_l: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            extent_x: 32.0,
            extent_y: 32.0,
            cells_x: 32,
            cells_y: 32,
            anchor_w: 2.0,
            anchor_l: 4.0,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.extent_x > 0.0 && self.extent_y > 0.0) {
            return Err(Error::config("grid extents must be positive"));
        }
        if self.cells_x == 0 || self.cells_y == 0 {
            return Err(Error::config("grid cell counts must be positive"));
        }
        if !(self.anchor_w > 0.0 && self.anchor_l > 0.0) {
            return Err(Error::config("anchor sizes must be positive"));
        }
        Ok(())
    }

    pub fn num_cells(&self) -> usize {
        self.cells_x * self.cells_y
    }

    pub fn cell_size_x(&self) -> f64 {
        self.extent_x / self.cells_x as f64
    }

    pub fn cell_size_y(&self) -> f64 {
        self.extent_y / self.cells_y as f64
    }

    /// Distance from the origin to the middle of the nearest extent edge.
    pub fn radius(&self) -> f64 {
        self.extent_x.max(self.extent_y) / 2.0
    }

    pub fn extent(&self) -> crate::scenegen::Extent {
        crate::scenegen::Extent {
            x: self.extent_x,
            y: self.extent_y,
        }
    }

    pub fn x_min(&self) -> f64 {
        -self.extent_x / 2.0
    }

    pub fn y_min(&self) -> f64 {
        -self.extent_y / 2.0
    }

    pub fn in_extent(&self, x: f64, y: f64) -> bool {
        x >= self.x_min() && x < -self.x_min() && y >= self.y_min() && y < -self.y_min()
    }

    /// `(ix, iy)` of the cell containing `(x, y)`, if inside the extent.
    pub fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        if !self.in_extent(x, y) {
            return None;
        }
        let ix = ((x - self.x_min()) / self.cell_size_x()) as usize;
        let iy = ((y - self.y_min()) / self.cell_size_y()) as usize;
        Some((ix.min(self.cells_x - 1), iy.min(self.cells_y - 1)))
    }

    pub fn cell_center(&self, ix: usize, iy: usize) -> (f64, f64) {
        (
            self.x_min() + (ix as f64 + 0.5) * self.cell_size_x(),
            self.y_min() + (iy as f64 + 0.5) * self.cell_size_y(),
        )
    }

    /// Flat index `iy * cells_x + ix`, matching the grid's row-major planes.
    pub fn flat(&self, ix: usize, iy: usize) -> usize {
        iy * self.cells_x + ix
    }

    pub fn unflat(&self, i: usize) -> (usize, usize) {
        (i % self.cells_x, i / self.cells_x)
    }
}
