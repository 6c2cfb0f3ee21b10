use serde::{Deserialize, Serialize};

/// One point of a precision/recall curve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub recall: f64,
    pub precision: f64,
}

/// Precision/recall at every distinct confidence threshold (detections with
/// equal confidence enter together). `scored` holds `(confidence, is_tp)`.
pub fn pr_curve(scored: &[(f64, bool)], n_gt: usize) -> Vec<PrPoint> {
    let mut s = scored.to_vec();
    s.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut out = Vec::new();
    let (mut tp, mut n) = (0usize, 0usize);
    let mut i = 0;
    while i < s.len() {
        let t = s[i].0;
        while i < s.len() && s[i].0 == t {
            tp += usize::from(s[i].1);
            n += 1;
            i += 1;
        }
        out.push(PrPoint {
            threshold: t,
            recall: if n_gt == 0 { 0.0 } else { tp as f64 / n_gt as f64 },
            precision: tp as f64 / n as f64,
        });
    }
    out
}

/// Interpolated AP: mean over the recall levels of the precision envelope
/// (best precision at recall >= r). `points` = 40 uses r in {1/40 .. 1},
/// 11 uses r in {0, 0.1 .. 1}. `None` when there is no ground truth.
pub fn average_precision(scored: &[(f64, bool)], n_gt: usize, points: usize) -> Option<f64> {
    if n_gt == 0 {
        return None;
    }
    let curve = pr_curve(scored, n_gt);
    let levels: Vec<f64> = match points {
        11 => (0..=10).map(|k| k as f64 / 10.0).collect(),
        n => (1..=n).map(|k| k as f64 / n as f64).collect(),
    };
    let sum: f64 = levels
        .iter()
        .map(|&r| {
            curve
                .iter()
                // tolerance for recall levels like 3/40 vs 0.075 computed differently
                .filter(|p| p.recall >= r - 1e-12)
                .map(|p| p.precision)
                .fold(0.0, f64::max)
        })
        .sum();
    Some(sum / levels.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnkit::RngStream;

    #[test]
    fn perfect_and_empty() {
        assert_eq!(average_precision(&[(0.9, true), (0.8, true)], 2, 40), Some(1.0));
        assert_eq!(average_precision(&[], 3, 40), Some(0.0));
        assert_eq!(average_precision(&[(0.9, false)], 0, 40), None);
    }

    /// TP, FP, TP over two boxes: the envelope is 1 up to recall 1/2 and
    /// 2/3 beyond, so AP = (20 * 1 + 20 * 2/3) / 40.
    #[test]
    fn tp_fp_tp() {
        let ap = average_precision(&[(0.9, true), (0.8, false), (0.7, true)], 2, 40).unwrap();
        assert!((ap - (20.0 + 20.0 * 2.0 / 3.0) / 40.0).abs() < 1e-12);
        let ap11 = average_precision(&[(0.9, true), (0.8, false), (0.7, true)], 2, 11).unwrap();
        assert!((ap11 - (6.0 + 5.0 * 2.0 / 3.0) / 11.0).abs() < 1e-12);
    }

    /// Brute-force oracle: for every recall level, scan every threshold in
    /// the data and recount TP and detections from scratch.
    fn oracle(scored: &[(f64, bool)], n_gt: usize) -> f64 {
        let mut total = 0.0;
        for k in 1..=40 {
            let r = k as f64 / 40.0;
            let mut best: f64 = 0.0;
            for &(t, _) in scored {
                let kept: Vec<_> = scored.iter().filter(|(c, _)| *c >= t).collect();
                let tp = kept.iter().filter(|(_, y)| *y).count();
                if tp as f64 / n_gt as f64 >= r - 1e-12 {
                    best = best.max(tp as f64 / kept.len() as f64);
                }
            }
            total += best;
        }
        total / 40.0
    }

    #[test]
    fn matches_pr_enumeration_oracle() {
        let mut rng = RngStream::new(12, 0);
        for trial in 0..200 {
            let n = 1 + trial % 50;
            let n_gt = 1 + rng.int_in(0, n as u64) as usize;
            let mut tps = 0;
            let scored: Vec<(f64, bool)> = (0..n)
                .map(|_| {
                    let y = tps < n_gt && rng.uniform() < 0.5;
                    tps += usize::from(y);
                    // coarse confidences force ties
                    ((rng.uniform() * 20.0).floor() / 20.0, y)
                })
                .collect();
            let ap = average_precision(&scored, n_gt, 40).unwrap();
            assert!((ap - oracle(&scored, n_gt)).abs() < 1e-9, "trial {trial}");
        }
    }

    #[test]
    fn monotone_under_extra_detections() {
        let mut rng = RngStream::new(13, 0);
        for _ in 0..100 {
            let scored: Vec<(f64, bool)> = (0..10).map(|_| (rng.uniform_in(0.01, 0.99), rng.uniform() < 0.5)).collect();
            let base = average_precision(&scored, 12, 40).unwrap();
            let mut with_fp = scored.clone();
            with_fp.push((0.0, false));
            assert!(average_precision(&with_fp, 12, 40).unwrap() <= base + 1e-15);
            let mut with_tp = scored.clone();
            with_tp.push((1.0, true));
            assert!(average_precision(&with_tp, 12, 40).unwrap() >= base - 1e-15);
        }
    }
}
