use crate::error::{Error, Result};
use crate::nnkit::{ParamSet, Scalar};

/// Mean-teacher weight transfer: `teacher <- alpha * teacher + (1 - alpha) * student`.
///
/// `alpha` is the keep ratio; 1 freezes the teacher, 0 copies the student.
pub fn ema_update<S: Scalar>(teacher: &mut ParamSet<S>, student: &ParamSet<S>, alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::config(format!("EMA keep ratio {alpha} outside [0, 1]")));
    }
    teacher.check_aligned(student, "ema_update")?;
    let keep = S::lit(alpha);
    let take = S::one() - keep;
    for (t, s) in teacher.entries_mut().iter_mut().zip(student.entries()) {
        for (wt, ws) in t.values.iter_mut().zip(&s.values) {
            *wt = keep * *wt + take * *ws;
        }
    }
    Ok(())
}
