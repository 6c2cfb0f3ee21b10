use crate::detector::{BBox, GridSpec};

/// Classification role of one anchor.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AnchorLabel {
    Negative,
    Positive,
    /// Near a box but not inside it; excluded from the classification loss.
    Ignore,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnchorTargets {
    pub labels: Vec<AnchorLabel>,
    /// `(dx, dy, dlogw, dlogl)`; zero for non-positive anchors.
    pub reg: Vec<[f64; 4]>,
    /// Orientation bit of the assigned box; zero for non-positive anchors.
    pub dir: Vec<f64>,
    /// Index of the assigned ground-truth box for positive anchors.
    pub assigned: Vec<Option<usize>>,
}

impl AnchorTargets {
    pub fn positive_mask(&self) -> Vec<bool> {
        self.labels.iter().map(|l| *l == AnchorLabel::Positive).collect()
    }

    pub fn num_positive(&self) -> usize {
        self.labels.iter().filter(|l| **l == AnchorLabel::Positive).count()
    }
}

/// Footprint dilation defining the ignore ring around each box.
pub const IGNORE_DILATION: f64 = 1.5;

/// Regression target of `gt` relative to the anchor at cell `(ix, iy)`;
/// the exact inverse of the anchor decoding.
pub fn encode_box(spec: &GridSpec, ix: usize, iy: usize, gt: &BBox) -> [f64; 4] {
    let (ax, ay) = spec.cell_center(ix, iy);
    [
        (gt.cx - ax) / spec.cell_size_x(),
        (gt.cy - ay) / spec.cell_size_y(),
        (gt.w / spec.anchor_w).ln(),
        (gt.l / spec.anchor_l).ln(),
    ]
}

/// An anchor is positive iff its cell center lies inside a box; cells with
/// several containing boxes go to the box with the nearer center (lower
/// index on ties). Anchors inside a dilated footprint that are not positive
/// are ignored.
pub fn assign_targets(spec: &GridSpec, gts: &[BBox]) -> AnchorTargets {
    let n = spec.num_cells();
    let mut t = AnchorTargets {
        labels: vec![AnchorLabel::Negative; n],
        reg: vec![[0.0; 4]; n],
        dir: vec![0.0; n],
        assigned: vec![None; n],
    };
    let mut best_dist = vec![f64::INFINITY; n];

    let cell_range = |b: &BBox| {
        let (x0, y0, x1, y1) = b.bounds();
        let ix0 = ((x0 - spec.x_min()) / spec.cell_size_x()).floor().max(0.0) as usize;
        let iy0 = ((y0 - spec.y_min()) / spec.cell_size_y()).floor().max(0.0) as usize;
        let ix1 = (((x1 - spec.x_min()) / spec.cell_size_x()).ceil().max(0.0) as usize).min(spec.cells_x);
        let iy1 = (((y1 - spec.y_min()) / spec.cell_size_y()).ceil().max(0.0) as usize).min(spec.cells_y);
        (ix0.min(ix1), iy0.min(iy1), ix1, iy1)
    };

    for (g, gt) in gts.iter().enumerate() {
        let (ix0, iy0, ix1, iy1) = cell_range(gt);
        for iy in iy0..iy1 {
            for ix in ix0..ix1 {
                let (x, y) = spec.cell_center(ix, iy);
                if !gt.contains(x, y) {
                    continue;
                }
                let cell = spec.flat(ix, iy);
                let d = (x - gt.cx).hypot(y - gt.cy);
                // strict `<` keeps the lower index on ties
                if d < best_dist[cell] {
                    best_dist[cell] = d;
                    t.labels[cell] = AnchorLabel::Positive;
                    t.reg[cell] = encode_box(spec, ix, iy, gt);
                    t.dir[cell] = f64::from(gt.orient.bit());
                    t.assigned[cell] = Some(g);
                }
            }
        }
    }

    for gt in gts {
        let dilated = gt.scaled(IGNORE_DILATION);
        let (ix0, iy0, ix1, iy1) = cell_range(&dilated);
        for iy in iy0..iy1 {
            for ix in ix0..ix1 {
                let cell = spec.flat(ix, iy);
                let (x, y) = spec.cell_center(ix, iy);
                if t.labels[cell] == AnchorLabel::Negative && dilated.contains(x, y) {
                    t.labels[cell] = AnchorLabel::Ignore;
                }
            }
        }
    }
    t
}
