use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::detector::{BBox, Orient};
use crate::error::{Error, Result};
use crate::nnkit::RngStream;
use crate::scenegen::{apply_rain, Extent, Point, PointScene, RainConfig};

/// Placement attempts per object before it is given up.
pub const MAX_PLACEMENT_ATTEMPTS: usize = 1000;

/// Smallest side length a sampled object may have.
const MIN_SIDE: f64 = 0.25;

const RAIN_TAG: u64 = 0x7261_696e;

/// Generator parameters of one domain. The shift axes are object size,
/// surface point density and object count.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainConfig {
    pub tag: String,
    pub extent: Extent,
    /// Inclusive `[min, max]`.
    pub n_objects: [u32; 2],
    pub object_w_mean: f64,
    pub object_l_mean: f64,
    pub object_size_sd: f64,
    pub points_per_m2_surface: f64,
    /// Inclusive `[min, max]` uniform background returns.
    pub clutter_points: [u32; 2],
    /// Per-scene weather corruption; `None` for clear weather.
    pub rain: Option<RainConfig>,
    pub seed: u64,
}

impl DomainConfig {
    pub fn source() -> Self {
        Self {
            tag: "source".into(),
            extent: Extent::default(),
            n_objects: [3, 8],
            object_w_mean: 2.0,
            object_l_mean: 4.6,
            object_size_sd: 0.15,
            points_per_m2_surface: 6.0,
            clutter_points: [150, 300],
            rain: None,
            seed: 1,
        }
    }

    /// Smaller, sparser objects seen through rain.
    pub fn target() -> Self {
        Self {
            tag: "target".into(),
            n_objects: [1, 6],
            object_w_mean: 1.8,
            object_l_mean: 4.0,
            points_per_m2_surface: 3.0,
            rain: Some(RainConfig::default()),
            seed: 2,
            ..Self::source()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.extent.x,
            self.extent.y,
            self.object_w_mean,
            self.object_l_mean,
            self.points_per_m2_surface,
        ];
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::config(format!("domain `{}`: sizes and densities must be positive", self.tag)));
        }
        if !(self.object_size_sd >= 0.0) {
            return Err(Error::config(format!("domain `{}`: object_size_sd must be non-negative", self.tag)));
        }
        if self.n_objects[0] > self.n_objects[1] || self.clutter_points[0] > self.clutter_points[1] {
            return Err(Error::config(format!("domain `{}`: ranges must be [min, max]", self.tag)));
        }
        if let Some(r) = &self.rain {
            r.validate()?;
        }
        Ok(())
    }
}

/// A generated scene plus the number of objects that could not be placed.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneDraw {
    pub scene: PointScene,
    pub placement_failures: usize,
}

fn sample_side(rng: &mut RngStream, mean: f64, sd: f64) -> f64 {
    if sd == 0.0 {
        return mean;
    }
    let n = Normal::new(mean, sd).expect("validated sd");
    n.sample(rng).max(MIN_SIDE)
}

/// Uniform point inside the (closed) box footprint, kept inside the extent.
fn point_in_box(rng: &mut RngStream, b: &BBox, intensity: f64) -> Point {
    let (x0, y0, x1, y1) = b.bounds();
    Point::new(rng.uniform_in(x0, x1), rng.uniform_in(y0, y1), intensity)
}

/// One clear-weather scene. Boxes are rejection-sampled for disjointness;
/// object returns are Poisson in count and uniform over the footprint.
pub fn sample_scene(cfg: &DomainConfig, scene_id: &str, stream: &mut RngStream) -> SceneDraw {
    let ext = cfg.extent;
    let wanted = stream.int_in(u64::from(cfg.n_objects[0]), u64::from(cfg.n_objects[1])) as usize;
    let mut boxes: Vec<BBox> = Vec::with_capacity(wanted);
    let mut failures = 0;
    for _ in 0..wanted {
        let mut w = sample_side(stream, cfg.object_w_mean, cfg.object_size_sd);
        let mut l = sample_side(stream, cfg.object_l_mean, cfg.object_size_sd);
        if w > l {
            std::mem::swap(&mut w, &mut l);
        }
        let orient = if stream.uniform() < 0.5 { Orient::AlongX } else { Orient::AlongY };
        let probe = BBox::new(0.0, 0.0, w, l, orient);
        let (hx, hy) = (probe.extent_x() / 2.0, probe.extent_y() / 2.0);
        let mut placed = false;
        if hx < ext.half_x() && hy < ext.half_y() {
            for _ in 0..MAX_PLACEMENT_ATTEMPTS {
                let cand = BBox {
                    cx: stream.uniform_in(-ext.half_x() + hx, ext.half_x() - hx),
                    cy: stream.uniform_in(-ext.half_y() + hy, ext.half_y() - hy),
                    ..probe
                };
                if ext.holds_box(&cand) && boxes.iter().all(|b| !b.overlaps(&cand)) {
                    boxes.push(cand);
                    placed = true;
                    break;
                }
            }
        }
        if !placed {
            failures += 1;
        }
    }

    let mut points = Vec::new();
    for b in &boxes {
        let lambda = cfg.points_per_m2_surface * b.area();
        let n = Poisson::new(lambda).map(|p| p.sample(stream) as usize).unwrap_or(0);
        for _ in 0..n {
            let intensity = stream.uniform_in(0.2, 1.0);
            let p = point_in_box(stream, b, intensity);
            if ext.contains(p.x, p.y) {
                points.push(p);
            }
        }
    }
    let clutter = stream.int_in(u64::from(cfg.clutter_points[0]), u64::from(cfg.clutter_points[1]));
    for _ in 0..clutter {
        let p = Point::new(
            stream.uniform_in(-ext.half_x(), ext.half_x()),
            stream.uniform_in(-ext.half_y(), ext.half_y()),
            stream.uniform_in(0.0, 0.5),
        );
        if ext.contains(p.x, p.y) {
            points.push(p);
        }
    }
    SceneDraw {
        scene: PointScene {
            scene_id: scene_id.to_string(),
            domain_tag: cfg.tag.clone(),
            points,
            gt_boxes: boxes,
        },
        placement_failures: failures,
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DatasetDraw {
    pub scenes: Vec<PointScene>,
    pub placement_failures: usize,
}

/// `n` scenes of a domain. Scene `i` is drawn from stream `(seed, offset + i)`
/// and, when the domain has rain, corrupted at a rate drawn per scene.
pub fn generate_dataset(cfg: &DomainConfig, n: usize, offset: u64) -> Result<DatasetDraw> {
    cfg.validate()?;
    let mut out = DatasetDraw::default();
    for i in 0..n as u64 {
        let id = offset + i;
        let mut stream = RngStream::new(cfg.seed, id);
        let draw = sample_scene(cfg, &format!("{}-{id:05}", cfg.tag), &mut stream);
        out.placement_failures += draw.placement_failures;
        let mut scene = draw.scene;
        if let Some(rain) = &cfg.rain {
            let mut rs = stream.derive(RAIN_TAG, id);
            let rate = rs.uniform_in(rain.rate_range_mm_per_hr[0], rain.rate_range_mm_per_hr[1]);
            scene = apply_rain(&scene, rate, rain, &mut rs)?;
        }
        out.scenes.push(scene);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_range_gives_clutter_only() {
        let cfg = DomainConfig {
            n_objects: [0, 0],
            clutter_points: [10, 10],
            ..DomainConfig::source()
        };
        let d = sample_scene(&cfg, "s", &mut RngStream::new(1, 1));
        assert!(d.scene.gt_boxes.is_empty());
        assert_eq!(d.scene.points.len(), 10);
    }

    #[test]
    fn scenes_are_deterministic_and_valid() {
        for cfg in [DomainConfig::source(), DomainConfig::target()] {
            let a = generate_dataset(&cfg, 20, 0).unwrap();
            let b = generate_dataset(&cfg, 20, 0).unwrap();
            assert_eq!(a, b);
            for s in &a.scenes {
                s.check_invariants(&cfg.extent).unwrap();
                assert!(s.gt_boxes.iter().all(|b| b.w <= b.l));
            }
        }
    }

    /// Poisson count oracle: mean 32 with variance 32 per box.
    #[test]
    fn object_point_counts_are_poisson() {
        let cfg = DomainConfig {
            n_objects: [1, 1],
            object_w_mean: 2.0,
            object_l_mean: 4.0,
            object_size_sd: 0.0,
            points_per_m2_surface: 4.0,
            clutter_points: [0, 0],
            ..DomainConfig::source()
        };
        let n = 200;
        let total: usize = (0..n)
            .map(|i| {
                let d = sample_scene(&cfg, "s", &mut RngStream::new(9, i));
                assert_eq!(d.scene.gt_boxes.len(), 1);
                assert_eq!(d.scene.points_in(&d.scene.gt_boxes[0]), d.scene.points.len());
                d.scene.points.len()
            })
            .sum();
        let mean = total as f64 / n as f64;
        let sigma = (32.0 / n as f64).sqrt();
        assert!((mean - 32.0).abs() < 3.0 * sigma, "mean {mean}");
    }

    #[test]
    fn crowded_scene_reports_failures() {
        let cfg = DomainConfig {
            extent: Extent { x: 6.0, y: 6.0 },
            n_objects: [5, 5],
            object_size_sd: 0.0,
            ..DomainConfig::source()
        };
        let d = sample_scene(&cfg, "s", &mut RngStream::new(3, 0));
        assert!(d.placement_failures > 0);
        assert_eq!(d.scene.gt_boxes.len() + d.placement_failures, 5);
        d.scene.check_invariants(&cfg.extent).unwrap();
    }

    #[test]
    fn rejects_inverted_ranges() {
        let cfg = DomainConfig {
            n_objects: [4, 2],
            ..DomainConfig::source()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }
}
