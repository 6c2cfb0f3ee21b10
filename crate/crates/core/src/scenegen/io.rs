//! Line-delimited scene files. Every line is one JSON object with keys
//! `scene_id`, `domain_tag`, `points` (`[x, y, intensity]`) and `gt_boxes`
//! (`[cx, cy, w, l, orient]`), optionally `confidence` (one per box). Reals
//! are written with 17 significant digits so they read back exactly.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::Deserialize;

use crate::detector::{BBox, Orient};
use crate::error::{Error, Result};
use crate::scenegen::{Point, PointScene};

pub(crate) fn push_real(out: &mut String, v: f64) {
    write!(out, "{v:.16e}").expect("writing to a String");
}

fn push_list<T>(out: &mut String, items: &[T], mut f: impl FnMut(&mut String, &T)) {
    out.push('[');
    for (i, it) in items.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        f(out, it);
    }
    out.push(']');
}

fn push_reals(out: &mut String, vs: &[f64]) {
    push_list(out, vs, |o, v| push_real(o, *v));
}

/// One scene as a single line (no trailing newline).
pub fn format_scene_line(scene: &PointScene, confidence: Option<&[f64]>, withhold_labels: bool) -> String {
    let mut s = String::with_capacity(64 + scene.points.len() * 72);
    s.push_str("{\"scene_id\":");
    s.push_str(&serde_json::to_string(&scene.scene_id).expect("string"));
    s.push_str(",\"domain_tag\":");
    s.push_str(&serde_json::to_string(&scene.domain_tag).expect("string"));
    s.push_str(",\"points\":");
    push_list(&mut s, &scene.points, |o, p| push_reals(o, &[p.x, p.y, p.intensity]));
    s.push_str(",\"gt_boxes\":");
    let boxes: &[BBox] = if withhold_labels { &[] } else { &scene.gt_boxes };
    push_list(&mut s, boxes, |o, b| {
        o.push('[');
        for v in [b.cx, b.cy, b.w, b.l] {
            push_real(o, v);
            o.push(',');
        }
        o.push_str(if b.orient == Orient::AlongX { "0" } else { "1" });
        o.push(']');
    });
    if let Some(c) = confidence {
        s.push_str(",\"confidence\":");
        push_reals(&mut s, if withhold_labels { &[] } else { c });
    }
    s.push('}');
    s
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneRecord {
    scene_id: String,
    domain_tag: String,
    points: Vec<[f64; 3]>,
    gt_boxes: Vec<[f64; 5]>,
    #[serde(default)]
    confidence: Option<Vec<f64>>,
}

/// Parses one scene line; the error message does not carry a location.
pub fn parse_scene_line(line: &str) -> std::result::Result<(PointScene, Option<Vec<f64>>), String> {
    let rec: SceneRecord = serde_json::from_str(line).map_err(|e| e.to_string())?;
    let mut gt_boxes = Vec::with_capacity(rec.gt_boxes.len());
    for [cx, cy, w, l, o] in rec.gt_boxes {
        let orient = match o {
            0.0 => Orient::AlongX,
            1.0 => Orient::AlongY,
            _ => return Err(format!("orientation must be 0 or 1, got {o}")),
        };
        let b = BBox::new(cx, cy, w, l, orient);
        if !b.is_valid() {
            return Err(format!("invalid box {b:?}"));
        }
        gt_boxes.push(b);
    }
    if let Some(c) = &rec.confidence {
        if c.len() != gt_boxes.len() {
            return Err(format!("{} confidences for {} boxes", c.len(), gt_boxes.len()));
        }
    }
    let scene = PointScene {
        scene_id: rec.scene_id,
        domain_tag: rec.domain_tag,
        points: rec.points.into_iter().map(|[x, y, i]| Point::new(x, y, i)).collect(),
        gt_boxes,
    };
    Ok((scene, rec.confidence))
}

pub(crate) fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

/// Non-empty lines of a file with their 1-based line numbers.
pub(crate) fn read_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            out.push((i + 1, line));
        }
    }
    Ok(out)
}

pub(crate) fn format_error(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Format {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

/// Writes scenes in order, one per line. `withhold_labels` drops the boxes.
pub fn write_dataset(scenes: &[PointScene], path: &Path, withhold_labels: bool) -> Result<()> {
    let mut w = create(path)?;
    for s in scenes {
        writeln!(w, "{}", format_scene_line(s, None, withhold_labels)).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_dataset(path: &Path) -> Result<Vec<PointScene>> {
    read_lines(path)?
        .into_iter()
        .map(|(n, line)| parse_scene_line(&line).map(|(s, _)| s).map_err(|m| format_error(path, n, m)))
        .collect()
}
