use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adapt::{train_detector, AdaptConfig, StepLog};
use crate::detector::{infer, rasterize_bev, DetectorConfig, Detection};
use crate::error::{Error, Result};
use crate::nnkit::ParamSet;
use crate::scenegen::{create, format_error, format_scene_line, parse_scene_line, read_lines, PointScene};

/// Thresholded detections of one model on the target scenes.
#[derive(Clone, Debug, PartialEq)]
pub struct PseudoLabelSet {
    pub iteration: usize,
    pub threshold: f64,
    pub scene_ids: Vec<String>,
    /// `labels[i]` belongs to `scene_ids[i]`, in descending confidence.
    pub labels: Vec<Vec<Detection>>,
}

impl PseudoLabelSet {
    pub fn total(&self) -> usize {
        self.labels.iter().map(Vec::len).sum()
    }

    /// The target scenes with their boxes replaced by the pseudo-labels.
    pub fn apply_to(&self, scenes: &[PointScene]) -> Result<Vec<PointScene>> {
        if scenes.len() != self.scene_ids.len() {
            return Err(Error::config(format!(
                "{} pseudo-label entries for {} scenes",
                self.scene_ids.len(),
                scenes.len()
            )));
        }
        scenes
            .iter()
            .zip(&self.scene_ids)
            .zip(&self.labels)
            .map(|((s, id), l)| {
                if &s.scene_id != id {
                    return Err(Error::config(format!("pseudo-labels for `{id}` paired with scene `{}`", s.scene_id)));
                }
                Ok(PointScene {
                    gt_boxes: l.iter().map(|d| d.bbox).collect(),
                    ..s.clone()
                })
            })
            .collect()
    }
}

/// Keeps detections whose confidence is at least `delta`.
pub fn threshold_detections(dets: Vec<Detection>, delta: f64) -> Vec<Detection> {
    dets.into_iter().filter(|d| d.confidence >= delta).collect()
}

/// Full inference with dropout off, keeping detections at or above `delta`.
pub fn infer_pseudo_labels(params: &ParamSet, scenes: &[PointScene], det: &DetectorConfig, delta: f64) -> Result<PseudoLabelSet> {
    let mut labels = Vec::with_capacity(scenes.len());
    for s in scenes {
        let dets = infer(params, &rasterize_bev(s, &det.grid), det)?;
        labels.push(threshold_detections(dets, delta));
    }
    Ok(PseudoLabelSet {
        iteration: 0,
        threshold: delta,
        scene_ids: scenes.iter().map(|s| s.scene_id.clone()).collect(),
        labels,
    })
}

/// Output of the iterative pseudo-label rounds.
#[derive(Clone, Debug)]
pub struct PseudoRounds {
    /// Label sets 0..=J.
    pub label_sets: Vec<PseudoLabelSet>,
    /// Models of rounds 1..=J.
    pub models: Vec<ParamSet>,
    pub logs: Vec<Vec<StepLog>>,
}

impl PseudoRounds {
    pub fn last(&self) -> &PseudoLabelSet {
        self.label_sets.last().expect("round 0 always exists")
    }
}

fn check_nonempty(set: &PseudoLabelSet) -> Result<()> {
    if set.total() == 0 {
        return Err(Error::EmptyPseudoLabels {
            round: set.iteration,
            threshold: set.threshold,
        });
    }
    Ok(())
}

/// Self-training: each round restarts from the source model, trains on the
/// previous round's labels and relabels the target with the next threshold.
/// `on_round` sees each label set as soon as it exists.
pub fn iterative_pseudo_rounds(
    source: &ParamSet,
    scenes: &[PointScene],
    det: &DetectorConfig,
    cfg: &AdaptConfig,
    mut on_round: impl FnMut(&PseudoLabelSet, Option<&ParamSet>) -> Result<()>,
) -> Result<PseudoRounds> {
    cfg.validate()?;
    let first = infer_pseudo_labels(source, scenes, det, cfg.delta(0))?;
    check_nonempty(&first)?;
    on_round(&first, None)?;
    let mut out = PseudoRounds {
        label_sets: vec![first],
        models: Vec::new(),
        logs: Vec::new(),
    };
    for j in 1..=cfg.iterations {
        let labeled = out.last().apply_to(scenes)?;
        let trained = train_detector(&labeled, source, det, &cfg.round_training(j))?;
        let mut set = infer_pseudo_labels(&trained.params, scenes, det, cfg.delta(j))?;
        set.iteration = j;
        check_nonempty(&set)?;
        on_round(&set, Some(&trained.params))?;
        out.label_sets.push(set);
        out.models.push(trained.params);
        out.logs.push(trained.log);
    }
    Ok(out)
}

/// First line of a pseudo-label file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelFileHeader {
    pub iteration: usize,
    pub threshold: f64,
    pub model_hash: String,
    pub config_hash: String,
    pub seed: u64,
}

/// Header line, then one scene line per target scene carrying the boxes and
/// their confidences (points omitted).
pub fn write_pseudo_labels(set: &PseudoLabelSet, header: &LabelFileHeader, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(w, "{}", serde_json::to_string(header).expect("header serializes")).map_err(io)?;
    for (id, dets) in set.scene_ids.iter().zip(&set.labels) {
        let scene = PointScene {
            scene_id: id.clone(),
            domain_tag: "pseudo".into(),
            points: Vec::new(),
            gt_boxes: dets.iter().map(|d| d.bbox).collect(),
        };
        let conf: Vec<f64> = dets.iter().map(|d| d.confidence).collect();
        writeln!(w, "{}", format_scene_line(&scene, Some(&conf), false)).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_pseudo_labels(path: &Path) -> Result<(PseudoLabelSet, LabelFileHeader)> {
    let lines = read_lines(path)?;
    let Some((first_no, first)) = lines.first() else {
        return Err(format_error(path, 1, "empty pseudo-label file"));
    };
    let header: LabelFileHeader = serde_json::from_str(first).map_err(|e| format_error(path, *first_no, e.to_string()))?;
    let mut set = PseudoLabelSet {
        iteration: header.iteration,
        threshold: header.threshold,
        scene_ids: Vec::new(),
        labels: Vec::new(),
    };
    for (no, line) in &lines[1..] {
        let (scene, conf) = parse_scene_line(line).map_err(|m| format_error(path, *no, m))?;
        let conf = conf.ok_or_else(|| format_error(path, *no, "missing `confidence`"))?;
        let dets = scene
            .gt_boxes
            .iter()
            .zip(conf)
            .map(|(b, c)| {
                if !(c >= header.threshold && c <= 1.0) {
                    return Err(format_error(path, *no, format!("confidence {c} outside [{}, 1]", header.threshold)));
                }
                Ok(Detection {
                    bbox: *b,
                    confidence: c,
                    roi_logit: (c / (1.0 - c)).ln(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        set.scene_ids.push(scene.scene_id);
        set.labels.push(dets);
    }
    Ok((set, header))
}
