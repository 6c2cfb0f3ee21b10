//! The detector's training losses. Each returns its value together with the
//! gradient with respect to its prediction inputs.

use serde::{Deserialize, Serialize};

use crate::detector::AnchorLabel;
use crate::error::{Error, Result};
use crate::nnkit::{sigmoid, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    pub focal_gamma: f64,
    pub focal_alpha: f64,
    pub smooth_l1_beta: f64,
    /// Proposal IoU with a (pseudo-)ground-truth box at which the ROI target is 1.
    pub roi_fg_iou: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            focal_gamma: 2.0,
            focal_alpha: 0.25,
            smooth_l1_beta: 1.0,
            roi_fg_iou: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossOutput<S: Scalar> {
    pub value: S,
    pub grad: Vec<S>,
    /// Set when nothing contributed (all anchors ignored, no positives, ...).
    pub empty: bool,
}

impl<S: Scalar> LossOutput<S> {
    fn empty(n: usize) -> Self {
        Self {
            value: S::zero(),
            grad: vec![S::zero(); n],
            empty: true,
        }
    }
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn softplus<S: Scalar>(x: S) -> S {
    if x > S::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Binary cross-entropy of `sigmoid(logit)` against a (possibly soft) target.
#[inline]
pub fn bce_with_logit<S: Scalar>(logit: S, target: S) -> S {
    target * softplus(-logit) + (S::one() - target) * softplus(logit)
}

/// Sigmoid focal loss, averaged over non-ignored anchors.
pub fn focal_loss<S: Scalar>(logits: &[S], labels: &[AnchorLabel], gamma: f64, alpha: f64) -> Result<LossOutput<S>> {
    if logits.len() != labels.len() {
        return Err(Error::config("focal_loss: logits and labels differ in length"));
    }
    let valid = labels.iter().filter(|l| **l != AnchorLabel::Ignore).count();
    if valid == 0 {
        return Ok(LossOutput::empty(logits.len()));
    }
    let (g, a) = (S::lit(gamma), S::lit(alpha));
    let inv_n = S::one() / S::lit(valid as f64);
    let mut value = S::zero();
    let mut grad = vec![S::zero(); logits.len()];
    for ((z, label), dz) in logits.iter().zip(labels).zip(grad.iter_mut()) {
        // z_t is the logit of the true class: p_t = sigmoid(z_t)
        let (z_t, alpha_t, sign) = match label {
            AnchorLabel::Ignore => continue,
            AnchorLabel::Positive => (*z, a, S::one()),
            AnchorLabel::Negative => (-*z, S::one() - a, -S::one()),
        };
        let p_t = sigmoid(z_t);
        let one_minus = sigmoid(-z_t);
        let log_p = -softplus(-z_t);
        let modulating = one_minus.powf(g);
        value += -alpha_t * modulating * log_p;
        // d/dz_t of -a (1-p)^g ln p = -a (1-p)^g [(1 - p) - g p ln p]
        let d_zt = -alpha_t * modulating * (one_minus - g * p_t * log_p);
        *dz = sign * d_zt * inv_n;
    }
    Ok(LossOutput {
        value: value * inv_n,
        grad,
        empty: false,
    })
}

/// Smooth-L1 over the four regression components of positive anchors.
pub fn smooth_l1<S: Scalar>(pred: &[[S; 4]], target: &[[f64; 4]], positive: &[bool], beta: f64) -> Result<LossOutput<S>> {
    if pred.len() != target.len() || pred.len() != positive.len() {
        return Err(Error::config("smooth_l1: inputs differ in length"));
    }
    let count = positive.iter().filter(|p| **p).count();
    if count == 0 {
        return Ok(LossOutput::empty(pred.len() * 4));
    }
    let b = S::lit(beta);
    let half = S::lit(0.5);
    let inv_n = S::one() / S::lit((count * 4) as f64);
    let mut value = S::zero();
    // laid out component-major like the regression grid
    let n = pred.len();
    let mut grad = vec![S::zero(); n * 4];
    for (i, ((p, t), pos)) in pred.iter().zip(target).zip(positive).enumerate() {
        if !*pos {
            continue;
        }
        for k in 0..4 {
            let x = p[k] - S::lit(t[k]);
            let (v, d) = if x.abs() < b {
                (half * x * x / b, x / b)
            } else {
                (x.abs() - half * b, x.signum())
            };
            value += v;
            grad[k * n + i] = d * inv_n;
        }
    }
    Ok(LossOutput {
        value: value * inv_n,
        grad,
        empty: false,
    })
}

/// Orientation-bit cross-entropy over positive anchors.
pub fn dir_ce_loss<S: Scalar>(logits: &[S], targets: &[f64], positive: &[bool]) -> Result<LossOutput<S>> {
    if logits.len() != targets.len() || logits.len() != positive.len() {
        return Err(Error::config("dir_ce_loss: inputs differ in length"));
    }
    let count = positive.iter().filter(|p| **p).count();
    if count == 0 {
        return Ok(LossOutput::empty(logits.len()));
    }
    let inv_n = S::one() / S::lit(count as f64);
    let mut value = S::zero();
    let mut grad = vec![S::zero(); logits.len()];
    for (((z, t), pos), dz) in logits.iter().zip(targets).zip(positive).zip(grad.iter_mut()) {
        if !*pos {
            continue;
        }
        let t = S::lit(*t);
        value += bce_with_logit(*z, t);
        *dz = (sigmoid(*z) - t) * inv_n;
    }
    Ok(LossOutput {
        value: value * inv_n,
        grad,
        empty: false,
    })
}

/// `(1/N) * sum_i w_i * BCE(sigmoid(logit_i), target_i)` with `N` the number of ROIs.
pub fn roi_bce_loss<S: Scalar>(logits: &[S], targets: &[f64], weights: &[f64]) -> Result<LossOutput<S>> {
    if logits.len() != targets.len() || logits.len() != weights.len() {
        return Err(Error::config("roi_bce_loss: inputs differ in length"));
    }
    if logits.is_empty() {
        return Ok(LossOutput::empty(0));
    }
    if let Some(w) = weights.iter().find(|w| !(**w >= 0.0 && **w <= 1.0)) {
        return Err(Error::config(format!("roi_bce_loss: weight {w} outside [0, 1]")));
    }
    let inv_n = S::one() / S::lit(logits.len() as f64);
    let mut value = S::zero();
    let mut grad = Vec::with_capacity(logits.len());
    for ((z, t), w) in logits.iter().zip(targets).zip(weights) {
        let (t, w) = (S::lit(*t), S::lit(*w));
        value += w * bce_with_logit(*z, t);
        grad.push(w * (sigmoid(*z) - t) * inv_n);
    }
    Ok(LossOutput {
        value: value * inv_n,
        grad,
        empty: false,
    })
}

/// The five loss terms of one training step.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossComponents {
    pub rpn_cls: f64,
    pub rpn_reg: f64,
    pub rpn_dir: f64,
    /// ROI classification against the dataset (pseudo-)labels, C-weighted
    /// when a teacher is present.
    pub roi_cls: f64,
    /// Teacher supervision; zero without a teacher.
    pub roi_tea: f64,
}

impl LossComponents {
    pub const NAMES: [&'static str; 5] = ["rpn_cls", "rpn_reg", "rpn_dir", "roi_cls_unc", "roi_tea"];

    pub fn terms(&self) -> [f64; 5] {
        [self.rpn_cls, self.rpn_reg, self.rpn_dir, self.roi_cls, self.roi_tea]
    }

    /// Unweighted sum; a non-finite term aborts with its name.
    pub fn total(&self, step: usize) -> Result<f64> {
        for (name, v) in Self::NAMES.iter().zip(self.terms()) {
            if !v.is_finite() {
                return Err(Error::NonFiniteLoss {
                    step,
                    term: (*name).to_string(),
                });
            }
        }
        Ok(self.terms().iter().sum())
    }

    pub fn add(&mut self, other: &LossComponents) {
        self.rpn_cls += other.rpn_cls;
        self.rpn_reg += other.rpn_reg;
        self.rpn_dir += other.rpn_dir;
        self.roi_cls += other.roi_cls;
        self.roi_tea += other.roi_tea;
    }

    pub fn scaled(&self, s: f64) -> LossComponents {
        LossComponents {
            rpn_cls: self.rpn_cls * s,
            rpn_reg: self.rpn_reg * s,
            rpn_dir: self.rpn_dir * s,
            roi_cls: self.roi_cls * s,
            roi_tea: self.roi_tea * s,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnkit::RngStream;
    use proptest::prelude::*;

    fn fd<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], i: usize) -> f64 {
        let h = 1e-6;
        let mut up = x.to_vec();
        up[i] += h;
        let mut dn = x.to_vec();
        dn[i] -= h;
        (f(&up) - f(&dn)) / (2.0 * h)
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
    }

    #[test]
    fn focal_examples() {
        let out = focal_loss(&[0.0_f64], &[AnchorLabel::Positive], 2.0, 0.25).unwrap();
        assert!((out.value - 0.25 * 0.25 * 2f64.ln()).abs() < 1e-15);
        assert!((out.value - 0.043321).abs() < 1e-6);
        let perfect = focal_loss(&[800.0_f64, -800.0], &[AnchorLabel::Positive, AnchorLabel::Negative], 2.0, 0.25).unwrap();
        assert_eq!(perfect.value, 0.0);
        let ignored = focal_loss(&[1.0_f64], &[AnchorLabel::Ignore], 2.0, 0.25).unwrap();
        assert!(ignored.empty && ignored.value == 0.0);
    }

    #[test]
    fn focal_reduces_to_half_bce() {
        let mut rng = RngStream::new(3, 3);
        let logits: Vec<f64> = (0..50).map(|_| rng.uniform_in(-4.0, 4.0)).collect();
        let labels: Vec<AnchorLabel> = (0..50)
            .map(|i| if i % 3 == 0 { AnchorLabel::Positive } else { AnchorLabel::Negative })
            .collect();
        let focal = focal_loss(&logits, &labels, 0.0, 0.5).unwrap().value;
        let bce: f64 = logits
            .iter()
            .zip(&labels)
            .map(|(z, l)| bce_with_logit(*z, if *l == AnchorLabel::Positive { 1.0 } else { 0.0 }))
            .sum::<f64>()
            / 50.0;
        assert!((focal - 0.5 * bce).abs() < 1e-14);
    }

    #[test]
    fn focal_gradient() {
        let mut rng = RngStream::new(4, 4);
        let logits: Vec<f64> = (0..30).map(|_| rng.uniform_in(-5.0, 5.0)).collect();
        let labels: Vec<AnchorLabel> = (0..30)
            .map(|i| match i % 4 {
                0 => AnchorLabel::Positive,
                1 => AnchorLabel::Ignore,
                _ => AnchorLabel::Negative,
            })
            .collect();
        for gamma in [0.0, 1.5, 2.0] {
            let out = focal_loss(&logits, &labels, gamma, 0.25).unwrap();
            for i in 0..logits.len() {
                let num = fd(|x| focal_loss(x, &labels, gamma, 0.25).unwrap().value, &logits, i);
                assert!(rel(out.grad[i], num) < 1e-6, "gamma {gamma} i {i}: {} vs {num}", out.grad[i]);
            }
        }
    }

    #[test]
    fn smooth_l1_examples_and_gradient() {
        let t = [[0.0; 4]];
        let z = smooth_l1(&[[0.5, -0.2, 0.0, 3.0_f64]], &[[0.5, -0.2, 0.0, 3.0]], &[true], 1.0).unwrap();
        assert_eq!(z.value, 0.0);
        // x = beta on one component: 0.5 * beta, averaged over 4 components
        let b = smooth_l1(&[[1.0_f64, 0.0, 0.0, 0.0]], &t, &[true], 1.0).unwrap();
        assert!((b.value - 0.5 / 4.0).abs() < 1e-15);
        let two = smooth_l1(&[[2.0_f64, 0.0, 0.0, 0.0]], &t, &[true], 1.0).unwrap();
        assert!((two.value - 1.5 / 4.0).abs() < 1e-15);
        assert!(smooth_l1(&[[2.0_f64; 4]], &t, &[false], 1.0).unwrap().empty);

        let preds = [[0.3, -1.7, 2.2, 0.05_f64], [0.9, 0.1, -0.4, 4.0]];
        let tg = [[0.0, 0.0, 0.5, 0.0], [1.2, 0.0, 0.0, 1.0]];
        let pos = [true, true];
        let out = smooth_l1(&preds, &tg, &pos, 1.0).unwrap();
        let flat: Vec<f64> = preds.iter().flatten().copied().collect();
        let eval = |x: &[f64]| {
            let p = [[x[0], x[1], x[2], x[3]], [x[4], x[5], x[6], x[7]]];
            smooth_l1(&p, &tg, &pos, 1.0).unwrap().value
        };
        for i in 0..2 {
            for k in 0..4 {
                let num = fd(eval, &flat, i * 4 + k);
                assert!(rel(out.grad[k * 2 + i], num) < 1e-6);
            }
        }
    }

    #[test]
    fn dir_examples() {
        let p = dir_ce_loss(&[800.0_f64], &[1.0], &[true]).unwrap();
        assert_eq!(p.value, 0.0);
        let h = dir_ce_loss(&[0.0_f64], &[1.0], &[true]).unwrap();
        assert!((h.value - 2f64.ln()).abs() < 1e-15);
        assert!(dir_ce_loss(&[0.0_f64], &[1.0], &[false]).unwrap().empty);
        let z = 1.37;
        let a = dir_ce_loss(&[z], &[1.0], &[true]).unwrap().value;
        let b = dir_ce_loss(&[-z], &[0.0], &[true]).unwrap().value;
        assert_eq!(a, b);
    }

    #[test]
    fn roi_bce_examples() {
        let perfect = roi_bce_loss(&[800.0_f64, -800.0], &[1.0, 0.0], &[1.0, 1.0]).unwrap();
        assert_eq!(perfect.value, 0.0);
        let one = roi_bce_loss(&[0.0_f64], &[1.0], &[1.0]).unwrap();
        assert!((one.value - 2f64.ln()).abs() < 1e-15);
        let logits = [0.3, -1.2, 2.0_f64];
        let targets = [1.0, 0.0, 0.7];
        let full = roi_bce_loss(&logits, &targets, &[1.0, 0.8, 0.4]).unwrap().value;
        let half = roi_bce_loss(&logits, &targets, &[0.5, 0.4, 0.2]).unwrap().value;
        assert!((half - 0.5 * full).abs() < 1e-15);
        assert!(roi_bce_loss::<f64>(&[], &[], &[]).unwrap().empty);
        assert!(roi_bce_loss(&[0.0_f64], &[1.0], &[2.0]).is_err());
    }

    #[test]
    fn total_loss_cases() {
        assert_eq!(LossComponents::default().total(0).unwrap(), 0.0);
        let c = LossComponents {
            rpn_cls: 1.0,
            rpn_reg: 2.0,
            rpn_dir: 3.0,
            roi_cls: 4.0,
            roi_tea: 5.0,
        };
        assert_eq!(c.total(0).unwrap(), 15.0);
        let bad = LossComponents {
            roi_tea: f64::NAN,
            ..c
        };
        match bad.total(7) {
            Err(Error::NonFiniteLoss { step: 7, term }) => assert_eq!(term, "roi_tea"),
            other => panic!("unexpected {other:?}"),
        }
    }

    proptest! {
        #[test]
        fn losses_non_negative(z in -30.0..30.0f64, t in 0.0..=1.0f64, w in 1e-5..=1.0f64) {
            prop_assert!(roi_bce_loss(&[z], &[t.round()], &[w]).unwrap().value >= 0.0);
            prop_assert!(dir_ce_loss(&[z], &[t.round()], &[true]).unwrap().value >= 0.0);
            let label = if t > 0.5 { AnchorLabel::Positive } else { AnchorLabel::Negative };
            prop_assert!(focal_loss(&[z], &[label], 2.0, 0.25).unwrap().value >= 0.0);
            prop_assert!(smooth_l1(&[[z, t, 0.0, 0.0]], &[[0.0; 4]], &[true], 1.0).unwrap().value >= 0.0);
        }
    }
}
