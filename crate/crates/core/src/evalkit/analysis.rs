//! Diagnostics of the adaptation run: confidence of correct vs incorrect
//! pseudo-labels per round, teacher variance on wrongly labeled ROIs, and
//! AP per pseudo-label round.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::detector::{infer, rasterize_bev, DetectorConfig, Detection};
use crate::error::{Error, Result};
use crate::evalkit::{best_iou, evaluate, EvalConfig};
use crate::nnkit::ParamSet;
use crate::scenegen::PointScene;

pub const CONFIDENCE_BINS: usize = 20;

fn confidence_bin(c: f64) -> usize {
    ((c * CONFIDENCE_BINS as f64).floor().max(0.0) as usize).min(CONFIDENCE_BINS - 1)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityRow {
    pub iteration: usize,
    pub correct: Vec<usize>,
    pub incorrect: Vec<usize>,
    pub mean_conf_incorrect: Option<f64>,
    pub frac_incorrect_above_08: Option<f64>,
}

impl DensityRow {
    pub fn total(&self) -> usize {
        self.correct.iter().chain(&self.incorrect).sum()
    }
}

/// Histograms of pseudo-label confidence split by correctness against the
/// held-out boxes. `rounds[k] = (iteration, labels per scene)`, aligned
/// with `truth`.
pub fn confidence_density_report(
    rounds: &[(usize, Vec<Vec<Detection>>)],
    truth: &[PointScene],
    correct_iou: f64,
) -> Result<Vec<DensityRow>> {
    if truth.iter().all(|s| s.gt_boxes.is_empty()) {
        return Err(Error::Evaluation("confidence report needs ground truth; none available".into()));
    }
    let mut rows = Vec::with_capacity(rounds.len());
    for (iteration, labels) in rounds {
        if labels.len() != truth.len() {
            return Err(Error::Evaluation(format!(
                "round {iteration}: {} label lists for {} scenes",
                labels.len(),
                truth.len()
            )));
        }
        let mut correct = vec![0; CONFIDENCE_BINS];
        let mut incorrect = vec![0; CONFIDENCE_BINS];
        let (mut sum_bad, mut n_bad, mut n_bad_high) = (0.0, 0usize, 0usize);
        for (dets, scene) in labels.iter().zip(truth) {
            for d in dets {
                let bin = confidence_bin(d.confidence);
                if best_iou(&d.bbox, &scene.gt_boxes) >= correct_iou {
                    correct[bin] += 1;
                } else {
                    incorrect[bin] += 1;
                    sum_bad += d.confidence;
                    n_bad += 1;
                    n_bad_high += usize::from(d.confidence > 0.8);
                }
            }
        }
        rows.push(DensityRow {
            iteration: *iteration,
            correct,
            incorrect,
            mean_conf_incorrect: (n_bad > 0).then(|| sum_bad / n_bad as f64),
            frac_incorrect_above_08: (n_bad > 0).then(|| n_bad_high as f64 / n_bad as f64),
        });
    }
    Ok(rows)
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| format!("{x:.6}"))
}

pub fn density_csv(rows: &[DensityRow]) -> String {
    let mut s = String::from("iteration,bin_lo,bin_hi,correct,incorrect\n");
    for r in rows {
        for b in 0..CONFIDENCE_BINS {
            let lo = b as f64 / CONFIDENCE_BINS as f64;
            let hi = (b + 1) as f64 / CONFIDENCE_BINS as f64;
            writeln!(s, "{},{lo:.2},{hi:.2},{},{}", r.iteration, r.correct[b], r.incorrect[b]).expect("string");
        }
    }
    s
}

pub fn density_summary_csv(rows: &[DensityRow]) -> String {
    let mut s = String::from("iteration,labels,incorrect,mean_conf_incorrect,frac_incorrect_above_0.8\n");
    for r in rows {
        let bad: usize = r.incorrect.iter().sum();
        writeln!(s, "{},{},{bad},{},{}", r.iteration, r.total(), opt(r.mean_conf_incorrect), opt(r.frac_incorrect_above_08))
            .expect("string");
    }
    s
}

/// One scored ROI of a teacher snapshot.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoiRecord {
    pub variance: f64,
    /// ROI class from the pseudo-labels (IoU cut against pseudo boxes).
    pub pseudo_positive: bool,
    /// ROI class from the held-out ground truth.
    pub gt_positive: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VarianceSnapshot {
    pub epoch: usize,
    pub rois: Vec<RoiRecord>,
}

/// Upper edges of the variance bins; a final bin collects the rest.
pub const VARIANCE_EDGES: [f64; 7] = [1e-3, 1e-2, 1e-1, 1.0, 1e1, 1e2, 1e3];

fn variance_bin(v: f64) -> usize {
    VARIANCE_EDGES.iter().position(|e| v < *e).unwrap_or(VARIANCE_EDGES.len())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceRow {
    pub epoch: usize,
    pub histogram: Vec<usize>,
    pub n_incorrect: usize,
    pub median: Option<f64>,
    pub frac_below_one: Option<f64>,
}

fn median(xs: &mut [f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    Some(if n % 2 == 1 { xs[n / 2] } else { 0.5 * (xs[n / 2 - 1] + xs[n / 2]) })
}

/// Teacher variance over ROIs whose pseudo class disagrees with the truth.
pub fn variance_report(snapshots: &[VarianceSnapshot]) -> Result<Vec<VarianceRow>> {
    if snapshots.is_empty() {
        return Err(Error::Evaluation("variance report needs training snapshots; none were logged".into()));
    }
    Ok(snapshots
        .iter()
        .map(|s| {
            let mut vars: Vec<f64> =
                s.rois.iter().filter(|r| r.pseudo_positive != r.gt_positive).map(|r| r.variance).collect();
            let mut histogram = vec![0; VARIANCE_EDGES.len() + 1];
            for v in &vars {
                histogram[variance_bin(*v)] += 1;
            }
            let n = vars.len();
            let below = vars.iter().filter(|v| **v < 1.0).count();
            VarianceRow {
                epoch: s.epoch,
                histogram,
                n_incorrect: n,
                median: median(&mut vars),
                frac_below_one: (n > 0).then(|| below as f64 / n as f64),
            }
        })
        .collect())
}

pub fn variance_csv(rows: &[VarianceRow]) -> String {
    let mut s = String::from("epoch,bin_lo,bin_hi,incorrect_rois\n");
    for r in rows {
        for (b, count) in r.histogram.iter().enumerate() {
            let lo = if b == 0 { 0.0 } else { VARIANCE_EDGES[b - 1] };
            let hi = VARIANCE_EDGES.get(b).map_or("inf".to_string(), |e| format!("{e:e}"));
            writeln!(s, "{},{lo:e},{hi},{count}", r.epoch).expect("string");
        }
    }
    s.push_str("\nepoch,incorrect_rois,median_variance,frac_variance_below_1\n");
    for r in rows {
        writeln!(s, "{},{},{},{}", r.epoch, r.n_incorrect, opt(r.median), opt(r.frac_below_one)).expect("string");
    }
    s
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationAp {
    pub iteration: usize,
    /// Moderate-tier AP in percent.
    pub moderate_ap: f64,
}

/// Runs every model on the labeled evaluation scenes.
pub fn map_over_iterations(
    models: &[ParamSet],
    scenes: &[PointScene],
    det: &DetectorConfig,
    eval: &EvalConfig,
) -> Result<Vec<IterationAp>> {
    let inputs: Vec<_> = scenes.iter().map(|s| rasterize_bev::<f64>(s, &det.grid)).collect();
    models
        .iter()
        .enumerate()
        .map(|(j, params)| {
            let dets = inputs.iter().map(|x| infer(params, x, det)).collect::<Result<Vec<_>>>()?;
            let r = evaluate(&dets, scenes, eval)?;
            Ok(IterationAp {
                iteration: j,
                moderate_ap: r.moderate_ap(),
            })
        })
        .collect()
}

pub fn map_csv(curve: &[IterationAp]) -> String {
    let mut s = String::from("iteration,moderate_ap\n");
    for p in curve {
        writeln!(s, "{},{:.4}", p.iteration, p.moderate_ap).expect("string");
    }
    s
}
