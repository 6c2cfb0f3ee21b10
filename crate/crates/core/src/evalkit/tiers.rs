use serde::{Deserialize, Serialize};

use crate::detector::BBox;
use crate::error::{Error, Result};
use crate::scenegen::PointScene;

/// Difficulty tier; tiers are cumulative, `Easy ⊆ Moderate ⊆ Hard`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Tier {
    Easy,
    Moderate,
    Hard,
}

impl Tier {
    pub const ALL: [Tier; 3] = [Tier::Easy, Tier::Moderate, Tier::Hard];

    pub fn name(self) -> &'static str {
        match self {
            Tier::Easy => "easy",
            Tier::Moderate => "moderate",
            Tier::Hard => "hard",
        }
    }
}

/// Point-count and range cut-offs of the tiers. Point count stands in for
/// occlusion.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TierRules {
    pub easy_min_points: usize,
    pub easy_max_range: f64,
    pub moderate_min_points: usize,
    pub hard_min_points: usize,
}

impl Default for TierRules {
    fn default() -> Self {
        Self {
            easy_min_points: 40,
            easy_max_range: 8.0,
            moderate_min_points: 15,
            hard_min_points: 5,
        }
    }
}

impl TierRules {
    pub fn validate(&self) -> Result<()> {
        if !(self.easy_min_points >= self.moderate_min_points && self.moderate_min_points >= self.hard_min_points) {
            return Err(Error::config("tier point thresholds must be non-increasing from easy to hard"));
        }
        if !(self.easy_max_range > 0.0) {
            return Err(Error::config("easy_max_range must be positive"));
        }
        Ok(())
    }

    /// Easiest tier the box qualifies for; `None` means ignored everywhere.
    pub fn bin(&self, points: usize, range: f64) -> Option<Tier> {
        if points >= self.easy_min_points && range < self.easy_max_range {
            Some(Tier::Easy)
        } else if points >= self.moderate_min_points {
            Some(Tier::Moderate)
        } else if points >= self.hard_min_points {
            Some(Tier::Hard)
        } else {
            None
        }
    }
}

/// Tier of a ground-truth box from the points it contains and the range of
/// its center.
pub fn difficulty_bin(gt: &BBox, scene: &PointScene, rules: &TierRules) -> Option<Tier> {
    rules.bin(scene.points_in(gt), gt.cx.hypot(gt.cy))
}

/// Whether a box of tier `bin` counts toward the evaluation of `tier`.
pub fn counts_in(bin: Option<Tier>, tier: Tier) -> bool {
    bin.is_some_and(|b| b <= tier)
}
