use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nnkit::RngStream;
use crate::scenegen::{Extent, Point, PointScene};

/// Toy rain model: range-dependent dropout of returns plus radial jitter.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RainConfig {
    pub rate_range_mm_per_hr: [f64; 2],
    pub drop_coeff: f64,
    pub noise_sd_per_m: f64,
    /// Range at which the drop probability reaches `drop_coeff * rate^0.6`.
    pub extent_radius: f64,
}

impl Default for RainConfig {
    fn default() -> Self {
        Self {
            rate_range_mm_per_hr: [0.0, 100.0],
            drop_coeff: 0.05,
            noise_sd_per_m: 0.002,
            extent_radius: 16.0,
        }
    }
}

impl RainConfig {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.rate_range_mm_per_hr;
        if !(0.0 <= lo && lo <= hi && hi.is_finite()) {
            return Err(Error::config("rain rate range must satisfy 0 <= low <= high"));
        }
        if !(self.drop_coeff >= 0.0 && self.noise_sd_per_m >= 0.0 && self.extent_radius > 0.0) {
            return Err(Error::config("rain coefficients must be non-negative and the radius positive"));
        }
        Ok(())
    }

    pub fn drop_probability(&self, rate: f64, range: f64) -> f64 {
        (self.drop_coeff * rate.powf(0.6) * range / self.extent_radius).min(0.9)
    }
}

/// Drops and jitters points; boxes are untouched. Points pushed past the
/// extent by the jitter are dropped as well.
pub fn apply_rain(scene: &PointScene, rate: f64, cfg: &RainConfig, stream: &mut RngStream) -> Result<PointScene> {
    if !(rate >= 0.0 && rate.is_finite()) {
        return Err(Error::config(format!("rain rate {rate} must be non-negative")));
    }
    if rate == 0.0 {
        return Ok(scene.clone());
    }
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let ext = Extent {
        x: 2.0 * cfg.extent_radius,
        y: 2.0 * cfg.extent_radius,
    };
    let mut points = Vec::with_capacity(scene.points.len());
    for p in &scene.points {
        let r = p.range();
        // both draws are taken for every point so streams stay aligned
        let u = stream.uniform();
        let z: f64 = unit.sample(stream);
        if u < cfg.drop_probability(rate, r) {
            continue;
        }
        let moved = if r > 0.0 {
            let nr = (r + z * cfg.noise_sd_per_m * r * rate / 100.0).max(0.0);
            Point::new(p.x * nr / r, p.y * nr / r, p.intensity)
        } else {
            *p
        };
        if ext.contains(moved.x, moved.y) {
            points.push(moved);
        }
    }
    Ok(PointScene {
        points,
        ..scene.clone()
    })
}
