use crate::detector::{iou, rank_order, BBox, Detection};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    /// Matched the ground-truth box with this index.
    Tp(usize),
    Fp,
    /// Overlaps only an ignored ground-truth box; counts as neither.
    Ignored,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MatchResult {
    /// Detections in rank order with their outcome.
    pub ranked: Vec<(Detection, Outcome)>,
    /// For each ground-truth box, the rank position of its match.
    pub gt_match: Vec<Option<usize>>,
}

impl MatchResult {
    pub fn tp(&self) -> usize {
        self.ranked.iter().filter(|(_, o)| matches!(o, Outcome::Tp(_))).count()
    }

    pub fn fp(&self) -> usize {
        self.ranked.iter().filter(|(_, o)| *o == Outcome::Fp).count()
    }
}

/// Greedy matching in descending confidence: each detection takes the
/// unmatched, non-ignored box of highest IoU at or above `iou_thresh`
/// (lower index on ties). A detection that only reaches ignored boxes is
/// ignored.
pub fn match_with_ignore(dets: &[Detection], gts: &[BBox], ignore: &[bool], iou_thresh: f64) -> MatchResult {
    assert_eq!(gts.len(), ignore.len(), "one ignore flag per box");
    let mut sorted = dets.to_vec();
    sorted.sort_by(rank_order);
    let mut gt_match = vec![None; gts.len()];
    let mut ranked = Vec::with_capacity(sorted.len());
    for (rank, d) in sorted.into_iter().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        let mut hits_ignored = false;
        for (g, gt) in gts.iter().enumerate() {
            let v = iou(&d.bbox, gt);
            if v < iou_thresh {
                continue;
            }
            if ignore[g] {
                hits_ignored = true;
            } else if gt_match[g].is_none() && best.is_none_or(|(_, b)| v > b) {
                best = Some((g, v));
            }
        }
        let outcome = match best {
            Some((g, _)) => {
                gt_match[g] = Some(rank);
                Outcome::Tp(g)
            }
            None if hits_ignored => Outcome::Ignored,
            None => Outcome::Fp,
        };
        ranked.push((d, outcome));
    }
    MatchResult { ranked, gt_match }
}

pub fn match_detections(dets: &[Detection], gts: &[BBox], iou_thresh: f64) -> MatchResult {
    match_with_ignore(dets, gts, &vec![false; gts.len()], iou_thresh)
}

/// Largest IoU of `b` with any box in `gts` (0 when empty).
pub fn best_iou(b: &BBox, gts: &[BBox]) -> f64 {
    gts.iter().map(|g| iou(b, g)).fold(0.0, f64::max)
}
