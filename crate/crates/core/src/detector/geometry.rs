use serde::{Deserialize, Serialize};

/// Which world axis the box's long side (`l`) runs along.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Orient {
    AlongX = 0,
    AlongY = 1,
}

impl Orient {
    pub fn from_bit(bit: u8) -> Option<Self> {
        match bit {
            0 => Some(Orient::AlongX),
            1 => Some(Orient::AlongY),
            _ => None,
        }
    }

    pub fn bit(self) -> u8 {
        self as u8
    }

    pub fn flipped(self) -> Self {
        match self {
            Orient::AlongX => Orient::AlongY,
            Orient::AlongY => Orient::AlongX,
        }
    }
}

/// Axis-aligned BEV box in meters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub l: f64,
    pub orient: Orient,
}

impl BBox {
    pub fn new(cx: f64, cy: f64, w: f64, l: f64, orient: Orient) -> Self {
        Self { cx, cy, w, l, orient }
    }

    pub fn is_valid(&self) -> bool {
        self.w > 0.0 && self.l > 0.0 && [self.cx, self.cy, self.w, self.l].iter().all(|v| v.is_finite())
    }

    pub fn extent_x(&self) -> f64 {
        match self.orient {
            Orient::AlongX => self.l,
            Orient::AlongY => self.w,
        }
    }

    pub fn extent_y(&self) -> f64 {
        match self.orient {
            Orient::AlongX => self.w,
            Orient::AlongY => self.l,
        }
    }

    pub fn area(&self) -> f64 {
        self.w * self.l
    }

    /// `(x_min, y_min, x_max, y_max)`.
    pub fn bounds(&self) -> (f64, f64, f64, f64) {
        let (hx, hy) = (self.extent_x() / 2.0, self.extent_y() / 2.0);
        (self.cx - hx, self.cy - hy, self.cx + hx, self.cy + hy)
    }

    /// Closed containment test.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        (x - self.cx).abs() <= self.extent_x() / 2.0 && (y - self.cy).abs() <= self.extent_y() / 2.0
    }

    /// Same center and orientation, both sides scaled by `factor`.
    pub fn scaled(&self, factor: f64) -> BBox {
        BBox {
            w: self.w * factor,
            l: self.l * factor,
            ..*self
        }
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let (ax0, ay0, ax1, ay1) = self.bounds();
        let (bx0, by0, bx1, by1) = other.bounds();
        let ix = (ax1.min(bx1) - ax0.max(bx0)).max(0.0);
        let iy = (ay1.min(by1) - ay0.max(by0)).max(0.0);
        ix * iy
    }

    pub fn overlaps(&self, other: &BBox) -> bool {
        self.intersection_area(other) > 0.0
    }
}

/// Axis-aligned intersection over union using orientation-aware extents.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    if a.bounds() == b.bounds() {
        return 1.0;
    }
    let inter = a.intersection_area(b);
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}
