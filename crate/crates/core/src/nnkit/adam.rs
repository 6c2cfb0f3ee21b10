use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nnkit::{ParamSet, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite())
            || !(0.0..1.0).contains(&self.beta1)
            || !(0.0..1.0).contains(&self.beta2)
            || !(self.eps > 0.0)
        {
            return Err(Error::config(format!("invalid Adam hyperparameters {self:?}")));
        }
        Ok(())
    }
}

/// First/second moment estimates and the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<S: Scalar> {
    pub m: ParamSet<S>,
    pub v: ParamSet<S>,
    pub step: u64,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(params: &ParamSet<S>) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step<S: Scalar>(
    params: &mut ParamSet<S>,
    grads: &ParamSet<S>,
    state: &mut AdamState<S>,
    cfg: &AdamConfig,
) -> Result<()> {
    params.check_aligned(grads, "adam_step(params, grads)")?;
    params.check_aligned(&state.m, "adam_step(params, state)")?;
    params.check_aligned(&state.v, "adam_step(params, state)")?;
    cfg.validate()?;
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (S::lit(cfg.beta1), S::lit(cfg.beta2));
    let bc1 = S::one() - b1.powi(t);
    let bc2 = S::one() - b2.powi(t);
    let (lr, eps) = (S::lit(cfg.lr), S::lit(cfg.eps));
    let entries = params
        .entries_mut()
        .iter_mut()
        .zip(grads.entries())
        .zip(state.m.entries_mut().iter_mut().zip(state.v.entries_mut()));
    for ((p, g), (m, v)) in entries {
        for (((w, g), m), v) in p
            .values
            .iter_mut()
            .zip(&g.values)
            .zip(m.values.iter_mut())
            .zip(v.values.iter_mut())
        {
            *m = b1 * *m + (S::one() - b1) * *g;
            *v = b2 * *v + (S::one() - b2) * *g * *g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *w -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_set(v: f64) -> ParamSet<f64> {
        let mut ps = ParamSet::new();
        ps.push("w", &[1], vec![v]).unwrap();
        ps
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = scalar_set(0.7);
        let g = scalar_set(0.0);
        let mut st = AdamState::new(&p);
        adam_step(&mut p, &g, &mut st, &AdamConfig::default()).unwrap();
        assert_eq!(p.get("w").unwrap().values[0], 0.7);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = scalar_set(0.0);
        let g = scalar_set(1.0);
        let mut st = AdamState::new(&p);
        let cfg = AdamConfig {
            lr: 0.01,
            ..AdamConfig::default()
        };
        adam_step(&mut p, &g, &mut st, &cfg).unwrap();
        // m_hat = v_hat = 1 at t = 1, so the step is lr / (1 + eps)
        let moved = -p.get("w").unwrap().values[0];
        assert!((moved - 0.01).abs() < 1e-9, "moved {moved}");
    }

    #[test]
    fn determinism_and_alignment() {
        let run = || {
            let mut p = scalar_set(1.0);
            let mut st = AdamState::new(&p);
            for k in 0..20 {
                let g = scalar_set((k as f64).sin());
                adam_step(&mut p, &g, &mut st, &AdamConfig::default()).unwrap();
            }
            p.get("w").unwrap().values[0].to_bits()
        };
        assert_eq!(run(), run());

        let mut p = scalar_set(1.0);
        let mut other = ParamSet::new();
        other.push("x", &[1], vec![1.0]).unwrap();
        let mut st = AdamState::new(&p);
        assert!(adam_step(&mut p, &other, &mut st, &AdamConfig::default()).is_err());
    }
}
