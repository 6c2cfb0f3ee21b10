use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::detector::Detection;
use crate::error::{Error, Result};
use crate::evalkit::{average_precision, counts_in, difficulty_bin, match_with_ignore, pr_curve, Outcome, PrPoint, Tier, TierRules};
use crate::scenegen::PointScene;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// Matching IoU of the AP metric.
    pub iou_thresh: f64,
    /// IoU at which a pseudo-label or ROI counts as correct in the analyses.
    pub correct_iou: f64,
    /// 40 or 11 recall levels.
    pub ap_points: usize,
    pub tiers: TierRules,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            iou_thresh: 0.7,
            correct_iou: 0.5,
            ap_points: 40,
            tiers: TierRules::default(),
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("iou_thresh", self.iou_thresh), ("correct_iou", self.correct_iou)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::config(format!("{name} must lie in (0, 1]")));
            }
        }
        if self.ap_points != 40 && self.ap_points != 11 {
            return Err(Error::config("ap_points must be 40 or 11"));
        }
        self.tiers.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TierResult {
    pub tier: Tier,
    /// Absent when the tier has no ground truth.
    pub ap: Option<f64>,
    pub n_gt: usize,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub pr: Vec<PrPoint>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tiers: Vec<TierResult>,
    pub config: EvalConfig,
    pub config_hash: String,
    pub seed: u64,
}

impl EvalReport {
    pub fn tier(&self, t: Tier) -> &TierResult {
        self.tiers.iter().find(|r| r.tier == t).expect("all tiers are evaluated")
    }

    /// Moderate-tier AP in percent, 0 when the tier is empty.
    pub fn moderate_ap(&self) -> f64 {
        100.0 * self.tier(Tier::Moderate).ap.unwrap_or(0.0)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("tier,ap,n_gt,tp,fp,fn\n");
        for r in &self.tiers {
            let ap = r.ap.map_or("absent".to_string(), |a| format!("{a:.6}"));
            writeln!(s, "{},{ap},{},{},{},{}", r.tier.name(), r.n_gt, r.tp, r.fp, r.fn_).expect("string");
        }
        s
    }
}

/// Per-tier AP over a dataset. `dets[i]` are the detections for `scenes[i]`,
/// whose boxes are the ground truth.
pub fn evaluate(dets: &[Vec<Detection>], scenes: &[PointScene], cfg: &EvalConfig) -> Result<EvalReport> {
    if dets.len() != scenes.len() {
        return Err(Error::Evaluation(format!("{} detection lists for {} scenes", dets.len(), scenes.len())));
    }
    let bins: Vec<Vec<Option<Tier>>> = scenes
        .iter()
        .map(|s| s.gt_boxes.iter().map(|b| difficulty_bin(b, s, &cfg.tiers)).collect())
        .collect();
    let mut tiers = Vec::with_capacity(3);
    for tier in Tier::ALL {
        let mut scored = Vec::new();
        let (mut n_gt, mut tp, mut fp) = (0, 0, 0);
        for ((d, s), b) in dets.iter().zip(scenes).zip(&bins) {
            let ignore: Vec<bool> = b.iter().map(|bin| !counts_in(*bin, tier)).collect();
            n_gt += ignore.iter().filter(|i| !**i).count();
            let m = match_with_ignore(d, &s.gt_boxes, &ignore, cfg.iou_thresh);
            for (det, o) in &m.ranked {
                match o {
                    Outcome::Tp(_) => {
                        tp += 1;
                        scored.push((det.confidence, true));
                    }
                    Outcome::Fp => {
                        fp += 1;
                        scored.push((det.confidence, false));
                    }
                    Outcome::Ignored => {}
                }
            }
        }
        tiers.push(TierResult {
            tier,
            ap: average_precision(&scored, n_gt, cfg.ap_points),
            n_gt,
            tp,
            fp,
            fn_: n_gt - tp,
            pr: pr_curve(&scored, n_gt),
        });
    }
    Ok(EvalReport {
        tiers,
        config: *cfg,
        config_hash: String::new(),
        seed: 0,
    })
}
