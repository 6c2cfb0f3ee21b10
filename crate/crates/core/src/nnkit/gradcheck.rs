//! Central finite-difference check of reverse-mode gradients.

use crate::error::{Error, Result};
use crate::nnkit::{ParamSet, Scalar};

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    /// Finite-difference step.
    pub step: f64,
    /// Denominator floor for the relative error of near-zero gradients.
    pub floor: f64,
    /// Check at most this many values per entry (evenly strided); 0 = all.
    pub max_per_entry: usize,
    pub tolerance: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            floor: 1e-6,
            max_per_entry: 0,
            tolerance: 1e-4,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(entry name, flat index, analytic, numeric)` of the worst value.
    pub worst: Option<(String, usize, f64, f64)>,
    pub checked: usize,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tolerance
    }
}

/// Compares `analytic` against central differences of `loss` around `params`.
///
/// Relative error per value is `|a - n| / max(|a|, |n|, floor)`.
pub fn grad_check<S, F>(
    params: &ParamSet<S>,
    analytic: &ParamSet<S>,
    mut loss: F,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    S: Scalar,
    F: FnMut(&ParamSet<S>) -> Result<S>,
{
    params.check_aligned(analytic, "grad_check")?;
    let base = loss(params)?;
    if !base.is_finite() {
        return Err(Error::Evaluation(format!("non-finite loss {base} at base point")));
    }
    let mut probe = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
        tolerance: opts.tolerance,
    };
    let h = S::lit(opts.step);
    for e in 0..params.len() {
        let n = params.entries()[e].len();
        let stride = if opts.max_per_entry == 0 || n <= opts.max_per_entry {
            1
        } else {
            n.div_ceil(opts.max_per_entry)
        };
        for i in (0..n).step_by(stride) {
            let orig = params.entries()[e].values[i];
            probe.entries_mut()[e].values[i] = orig + h;
            let up = loss(&probe)?;
            probe.entries_mut()[e].values[i] = orig - h;
            let down = loss(&probe)?;
            probe.entries_mut()[e].values[i] = orig;
            if !up.is_finite() || !down.is_finite() {
                return Err(Error::Evaluation(format!(
                    "non-finite loss while perturbing `{}`[{i}]",
                    params.entries()[e].name
                )));
            }
            let numeric = ((up - down) / (h + h)).as_f64();
            let a = analytic.entries()[e].values[i].as_f64();
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(opts.floor);
            report.checked += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(rel);
                report.worst = Some((params.entries()[e].name.clone(), i, a, numeric));
            }
        }
    }
    Ok(report)
}
