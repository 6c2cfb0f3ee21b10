//! Micro detector network: two 3x3 conv layers, three 1x1 RPN heads and a
//! dropout-bearing ROI confidence head over pooled 3x3 feature patches.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::detector::{Detection, GridSpec};
use crate::error::{Error, Result};
use crate::nnkit::layers::{conv2d_backward, dense_backward, relu_backward, relu_in_place};
use crate::nnkit::{conv2d, dense, dropout, DropoutMask, Grid, ParamSet, RngStream, Scalar};

pub const CONV1_W: &str = "backbone.conv1.weight";
pub const CONV1_B: &str = "backbone.conv1.bias";
pub const CONV2_W: &str = "backbone.conv2.weight";
pub const CONV2_B: &str = "backbone.conv2.bias";
pub const CLS_W: &str = "rpn.cls.weight";
pub const CLS_B: &str = "rpn.cls.bias";
pub const REG_W: &str = "rpn.reg.weight";
pub const REG_B: &str = "rpn.reg.bias";
pub const DIR_W: &str = "rpn.dir.weight";
pub const DIR_B: &str = "rpn.dir.bias";
pub const FC1_W: &str = "roi.fc1.weight";
pub const FC1_B: &str = "roi.fc1.bias";
pub const FC2_W: &str = "roi.fc2.weight";
pub const FC2_B: &str = "roi.fc2.bias";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub conv1_channels: usize,
    pub conv2_channels: usize,
    pub roi_hidden: usize,
    /// Side of the square feature patch pooled per proposal (odd).
    pub roi_pool: usize,
    pub roi_dropout: f64,
    /// Prior foreground probability used to initialize the classification bias.
    pub cls_prior: f64,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            conv1_channels: 8,
            conv2_channels: 16,
            roi_hidden: 32,
            roi_pool: 3,
            roi_dropout: 0.5,
            cls_prior: 0.01,
        }
    }
}

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        if self.conv1_channels == 0 || self.conv2_channels == 0 || self.roi_hidden == 0 {
            return Err(Error::config("layer widths must be positive"));
        }
        if self.roi_pool % 2 == 0 {
            return Err(Error::config("roi_pool must be odd"));
        }
        if !(0.0..1.0).contains(&self.roi_dropout) {
            return Err(Error::config("roi_dropout must lie in [0, 1)"));
        }
        if !(self.cls_prior > 0.0 && self.cls_prior < 1.0) {
            return Err(Error::config("cls_prior must lie in (0, 1)"));
        }
        Ok(())
    }

    pub fn roi_inputs(&self) -> usize {
        self.conv2_channels * self.roi_pool * self.roi_pool
    }

    /// All parameter entries with zero values, in canonical order.
    pub fn zero_params<S: Scalar>(&self) -> ParamSet<S> {
        let (c1, c2, h) = (self.conv1_channels, self.conv2_channels, self.roi_hidden);
        let layout: [(&str, Vec<usize>); 14] = [
            (CONV1_W, vec![c1, 1, 3, 3]),
            (CONV1_B, vec![c1]),
            (CONV2_W, vec![c2, c1, 3, 3]),
            (CONV2_B, vec![c2]),
            (CLS_W, vec![1, c2, 1, 1]),
            (CLS_B, vec![1]),
            (REG_W, vec![4, c2, 1, 1]),
            (REG_B, vec![4]),
            (DIR_W, vec![1, c2, 1, 1]),
            (DIR_B, vec![1]),
            (FC1_W, vec![h, self.roi_inputs()]),
            (FC1_B, vec![h]),
            (FC2_W, vec![1, h]),
            (FC2_B, vec![1]),
        ];
        let mut ps = ParamSet::new();
        for (name, shape) in layout {
            ps.push_zeros(name, &shape).expect("canonical layout is valid");
        }
        ps
    }

    /// He-normal init for hidden layers, small normals for the heads and a
    /// prior-probability bias on the classification head.
    pub fn init_params<S: Scalar>(&self, seed: u64) -> ParamSet<S> {
        let mut ps = self.zero_params::<S>();
        let mut rng = RngStream::new(seed, 0x1417);
        for p in ps.entries_mut() {
            let sd = if p.name.ends_with(".bias") {
                continue;
            } else if p.name.starts_with("backbone") || p.name == FC1_W {
                let fan_in: usize = p.shape[1..].iter().product();
                (2.0 / fan_in as f64).sqrt()
            } else {
                0.01
            };
            let normal = Normal::new(0.0, sd).expect("positive sd");
            for v in &mut p.values {
                *v = S::lit(normal.sample(&mut rng));
            }
        }
        let prior = self.cls_prior;
        ps.get_mut(CLS_B).expect("cls bias").values[0] = S::lit(-((1.0 - prior) / prior).ln());
        ps
    }
}

/// Intermediate activations of the backbone kept for the backward pass.
#[derive(Clone, Debug)]
pub struct BackboneCache<S: Scalar> {
    pub input: Grid<S>,
    pub pre1: Grid<S>,
    pub act1: Grid<S>,
    pub pre2: Grid<S>,
    pub features: Grid<S>,
}

pub fn backbone_forward<S: Scalar>(params: &ParamSet<S>, input: &Grid<S>) -> Result<BackboneCache<S>> {
    let pre1 = conv2d(input, params.get(CONV1_W)?, params.get(CONV1_B)?, 1)?;
    let mut act1 = pre1.clone();
    relu_in_place(&mut act1.values);
    let pre2 = conv2d(&act1, params.get(CONV2_W)?, params.get(CONV2_B)?, 1)?;
    let mut features = pre2.clone();
    relu_in_place(&mut features.values);
    Ok(BackboneCache {
        input: input.clone(),
        pre1,
        act1,
        pre2,
        features,
    })
}

/// Backpropagates `d_features` through the backbone into `grads`; returns
/// the gradient with respect to the input raster.
pub fn backbone_backward<S: Scalar>(
    params: &ParamSet<S>,
    cache: &BackboneCache<S>,
    mut d_features: Grid<S>,
    grads: &mut ParamSet<S>,
) -> Result<Grid<S>> {
    relu_backward(&cache.pre2.values, &mut d_features.values);
    let mut d_act1 = Grid::zeros(cache.act1.channels, cache.act1.height, cache.act1.width);
    {
        let w2 = params.get(CONV2_W)?;
        let (dw, db) = two_mut(grads, CONV2_W, CONV2_B)?;
        conv2d_backward(&cache.act1, w2, &d_features, dw, db, Some(&mut d_act1));
    }
    relu_backward(&cache.pre1.values, &mut d_act1.values);
    let mut d_input = Grid::zeros(cache.input.channels, cache.input.height, cache.input.width);
    let w1 = params.get(CONV1_W)?;
    let (dw, db) = two_mut(grads, CONV1_W, CONV1_B)?;
    conv2d_backward(&cache.input, w1, &d_act1, dw, db, Some(&mut d_input));
    Ok(d_input)
}

/// Mutable value slices of two distinct entries.
fn two_mut<'a, S: Scalar>(ps: &'a mut ParamSet<S>, a: &str, b: &str) -> Result<(&'a mut [S], &'a mut [S])> {
    let entries = ps.entries_mut();
    let ia = entries
        .iter()
        .position(|p| p.name == a)
        .ok_or_else(|| Error::config(format!("missing parameter `{a}`")))?;
    let ib = entries
        .iter()
        .position(|p| p.name == b)
        .ok_or_else(|| Error::config(format!("missing parameter `{b}`")))?;
    assert_ne!(ia, ib);
    if ia < ib {
        let (lo, hi) = entries.split_at_mut(ib);
        Ok((&mut lo[ia].values, &mut hi[0].values))
    } else {
        let (lo, hi) = entries.split_at_mut(ia);
        Ok((&mut hi[0].values, &mut lo[ib].values))
    }
}

/// Dense per-cell RPN outputs. `reg` channels are `(dx, dy, dlogw, dlogl)`.
#[derive(Clone, Debug, PartialEq)]
pub struct RpnOutput<S: Scalar> {
    pub cls_logit: Grid<S>,
    pub reg: Grid<S>,
    pub dir_logit: Grid<S>,
}

impl<S: Scalar> RpnOutput<S> {
    pub fn zeros_like(&self) -> Self {
        let z = |g: &Grid<S>| Grid::zeros(g.channels, g.height, g.width);
        Self {
            cls_logit: z(&self.cls_logit),
            reg: z(&self.reg),
            dir_logit: z(&self.dir_logit),
        }
    }

    pub fn num_cells(&self) -> usize {
        self.cls_logit.plane_len()
    }

    pub fn reg_at(&self, cell: usize) -> [S; 4] {
        let n = self.num_cells();
        [0, 1, 2, 3].map(|k| self.reg.values[k * n + cell])
    }
}

pub fn rpn_forward<S: Scalar>(features: &Grid<S>, params: &ParamSet<S>) -> Result<RpnOutput<S>> {
    Ok(RpnOutput {
        cls_logit: conv2d(features, params.get(CLS_W)?, params.get(CLS_B)?, 0)?,
        reg: conv2d(features, params.get(REG_W)?, params.get(REG_B)?, 0)?,
        dir_logit: conv2d(features, params.get(DIR_W)?, params.get(DIR_B)?, 0)?,
    })
}

/// Backward of [`rpn_forward`]; accumulates into `grads` and `d_features`.
pub fn rpn_backward<S: Scalar>(
    params: &ParamSet<S>,
    features: &Grid<S>,
    d_rpn: &RpnOutput<S>,
    grads: &mut ParamSet<S>,
    d_features: &mut Grid<S>,
) -> Result<()> {
    for (w, b, d) in [
        (CLS_W, CLS_B, &d_rpn.cls_logit),
        (REG_W, REG_B, &d_rpn.reg),
        (DIR_W, DIR_B, &d_rpn.dir_logit),
    ] {
        let weight = params.get(w)?;
        let (dw, db) = two_mut(grads, w, b)?;
        conv2d_backward(features, weight, d, dw, db, Some(d_features));
    }
    Ok(())
}

/// Per-ROI activations kept for the backward pass.
#[derive(Clone, Debug)]
pub struct RoiCache<S: Scalar> {
    pub cell: (usize, usize),
    pub pooled: Vec<S>,
    pub hidden_pre: Vec<S>,
    pub hidden: Vec<S>,
    pub mask: DropoutMask<S>,
}

#[derive(Clone, Debug)]
pub struct RoiOutput<S: Scalar> {
    /// One logit per entry of `used`.
    pub logits: Vec<S>,
    /// Indices into the proposal list that were scored.
    pub used: Vec<usize>,
    /// Proposals whose center fell outside the grid.
    pub skipped: Vec<usize>,
    pub caches: Vec<RoiCache<S>>,
}

fn pool_patch<S: Scalar>(features: &Grid<S>, ix: usize, iy: usize, size: usize) -> Vec<S> {
    let r = (size / 2) as isize;
    let mut out = Vec::with_capacity(features.channels * size * size);
    for c in 0..features.channels {
        for dy in -r..=r {
            for dx in -r..=r {
                let (y, x) = (iy as isize + dy, ix as isize + dx);
                out.push(if y < 0 || x < 0 || y >= features.height as isize || x >= features.width as isize {
                    S::zero()
                } else {
                    features.at(c, y as usize, x as usize)
                });
            }
        }
    }
    out
}

fn unpool_patch<S: Scalar>(d_features: &mut Grid<S>, ix: usize, iy: usize, size: usize, d_pooled: &[S]) {
    let r = (size / 2) as isize;
    let mut k = 0;
    for c in 0..d_features.channels {
        for dy in -r..=r {
            for dx in -r..=r {
                let (y, x) = (iy as isize + dy, ix as isize + dx);
                if y >= 0 && x >= 0 && y < d_features.height as isize && x < d_features.width as isize {
                    let i = d_features.index(c, y as usize, x as usize);
                    d_features.values[i] += d_pooled[k];
                }
                k += 1;
            }
        }
    }
}

/// Scores each proposal from the feature patch around its center cell.
/// Dropout masks are drawn from `stream` in proposal order.
pub fn roi_forward<S: Scalar>(
    features: &Grid<S>,
    proposals: &[Detection],
    params: &ParamSet<S>,
    arch: &Architecture,
    spec: &GridSpec,
    dropout_enabled: bool,
    stream: &mut RngStream,
) -> Result<RoiOutput<S>> {
    let (fc1_w, fc1_b) = (params.get(FC1_W)?, params.get(FC1_B)?);
    let (fc2_w, fc2_b) = (params.get(FC2_W)?, params.get(FC2_B)?);
    let mut out = RoiOutput {
        logits: Vec::with_capacity(proposals.len()),
        used: Vec::with_capacity(proposals.len()),
        skipped: Vec::new(),
        caches: Vec::with_capacity(proposals.len()),
    };
    for (i, det) in proposals.iter().enumerate() {
        let Some((ix, iy)) = spec.cell_of(det.bbox.cx, det.bbox.cy) else {
            out.skipped.push(i);
            continue;
        };
        let pooled = pool_patch(features, ix, iy, arch.roi_pool);
        let hidden_pre = dense(&pooled, fc1_w, fc1_b)?;
        let mut act = hidden_pre.clone();
        relu_in_place(&mut act);
        let (hidden, mask) = dropout(&act, arch.roi_dropout, stream, dropout_enabled)?;
        let logit = dense(&hidden, fc2_w, fc2_b)?[0];
        out.logits.push(logit);
        out.used.push(i);
        out.caches.push(RoiCache {
            cell: (ix, iy),
            pooled,
            hidden_pre,
            hidden,
            mask,
        });
    }
    Ok(out)
}

/// Backward of [`roi_forward`] given `d_logits` (one per used ROI).
pub fn roi_backward<S: Scalar>(
    params: &ParamSet<S>,
    arch: &Architecture,
    roi: &RoiOutput<S>,
    d_logits: &[S],
    grads: &mut ParamSet<S>,
    d_features: &mut Grid<S>,
) -> Result<()> {
    let fc1_w = params.get(FC1_W)?;
    let fc2_w = params.get(FC2_W)?;
    for (cache, dl) in roi.caches.iter().zip(d_logits) {
        if *dl == S::zero() {
            continue;
        }
        let mut d_hidden = vec![S::zero(); cache.hidden.len()];
        {
            let (dw, db) = two_mut(grads, FC2_W, FC2_B)?;
            dense_backward(&cache.hidden, fc2_w, &[*dl], dw, db, Some(&mut d_hidden));
        }
        cache.mask.apply(&mut d_hidden);
        relu_backward(&cache.hidden_pre, &mut d_hidden);
        let mut d_pooled = vec![S::zero(); cache.pooled.len()];
        {
            let (dw, db) = two_mut(grads, FC1_W, FC1_B)?;
            dense_backward(&cache.pooled, fc1_w, &d_hidden, dw, db, Some(&mut d_pooled));
        }
        unpool_patch(d_features, cache.cell.0, cache.cell.1, arch.roi_pool, &d_pooled);
    }
    Ok(())
}
