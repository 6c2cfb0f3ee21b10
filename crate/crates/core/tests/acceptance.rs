//! Acceptance suite. Each test prints one `criterion N ... PASS|FAIL` line.
//! Criteria 3 to 8 share three desk-scale pipeline runs (seeds 0, 1, 2).

use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use uamt::adapt::{mc_teacher_predict, uncertainty_weight, MIN_WEIGHT};
use uamt::detector::losses::{dir_ce_loss, focal_loss, roi_bce_loss, smooth_l1};
use uamt::detector::network::{roi_forward, CLS_B, FC1_B};
use uamt::detector::{
    assign_targets, iou, loss_and_grad, nms, rank_order, rasterize_bev, AnchorLabel, BBox, DetectorConfig, Detection,
    GridSpec, ObjectiveOptions, Orient, RoiSupervision, ScenePass, TeacherTargets,
};
use uamt::evalkit::average_precision;
use uamt::nnkit::{ema_update, grad_check, GradCheckOptions, Grid, ParamSet, RngStream};
use uamt::pipeline::{run_pipeline, Arm, RunConfig};
use uamt::scenegen::{Point, PointScene};

const SEEDS: [u64; 3] = [0, 1, 2];

fn verdict(n: usize, name: &str, pass: bool, detail: &str) {
    println!("criterion {n} {name}: {} | {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "criterion {n} {name} failed: {detail}");
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

// ---------------------------------------------------------------- criterion 1

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Worst relative error of `grad` against central differences of `f`.
fn fd_error(x: &[f64], grad: &[f64], f: impl Fn(&[f64]) -> f64) -> f64 {
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let (mut p, mut m) = (x.to_vec(), x.to_vec());
        p[i] += h;
        m[i] -= h;
        worst = worst.max(rel(grad[i], (f(&p) - f(&m)) / (2.0 * h)));
    }
    worst
}

fn loss_grad_errors() -> Vec<(&'static str, f64)> {
    let mut rng = RngStream::new(101, 0);
    let n = 24;
    let z: Vec<f64> = (0..n).map(|_| rng.uniform_in(-3.0, 3.0)).collect();
    let labels: Vec<AnchorLabel> = (0..n)
        .map(|i| [AnchorLabel::Negative, AnchorLabel::Positive, AnchorLabel::Ignore][i % 3])
        .collect();
    let pos: Vec<bool> = (0..n).map(|i| i % 3 != 0).collect();
    let t01: Vec<f64> = (0..n).map(|_| rng.uniform()).collect();
    let w: Vec<f64> = (0..n).map(|_| rng.uniform_in(1e-5, 1.0)).collect();
    let dir_t: Vec<f64> = (0..n).map(|i| (i % 2) as f64).collect();
    // smooth-L1 inputs straddle the quadratic/linear switch
    let reg: Vec<f64> = (0..4 * n).map(|_| rng.uniform_in(-2.5, 2.5)).collect();
    let reg_t: Vec<[f64; 4]> = (0..n).map(|_| [0.1, -0.2, 0.3, 0.0]).collect();
    let as_rows = |v: &[f64]| -> Vec<[f64; 4]> { (0..n).map(|i| [v[i], v[n + i], v[2 * n + i], v[3 * n + i]]).collect() };

    let focal = |x: &[f64]| focal_loss(x, &labels, 2.0, 0.25).unwrap();
    let sl1 = |x: &[f64]| smooth_l1(&as_rows(x), &reg_t, &pos, 1.0).unwrap();
    let dir = |x: &[f64]| dir_ce_loss(x, &dir_t, &pos).unwrap();
    let roi = |x: &[f64]| roi_bce_loss(x, &t01, &w).unwrap();
    vec![
        ("rpn_cls focal", fd_error(&z, &focal(&z).grad, |x| focal(x).value)),
        ("rpn_reg smooth-l1", fd_error(&reg, &sl1(&reg).grad, |x| sl1(x).value)),
        ("rpn_dir", fd_error(&z, &dir(&z).grad, |x| dir(x).value)),
        ("roi bce", fd_error(&z, &roi(&z).grad, |x| roi(x).value)),
    ]
}

fn composite_grad_error(with_dropout_and_teacher: bool) -> f64 {
    let cfg = DetectorConfig {
        grid: GridSpec {
            extent_x: 12.0,
            extent_y: 12.0,
            cells_x: 12,
            cells_y: 12,
            ..GridSpec::default()
        },
        ..DetectorConfig::default()
    };
    let boxes = vec![
        BBox::new(-2.5, -1.0, 1.8, 4.2, Orient::AlongY),
        BBox::new(2.2, 2.6, 2.0, 4.4, Orient::AlongX),
    ];
    let mut rng = RngStream::new(12, 0);
    let mut points = Vec::new();
    for b in &boxes {
        let (x0, y0, x1, y1) = b.bounds();
        for _ in 0..40 {
            points.push(Point::new(rng.uniform_in(x0, x1), rng.uniform_in(y0, y1), 0.5));
        }
    }
    for _ in 0..30 {
        points.push(Point::new(rng.uniform_in(-6.0, 6.0), rng.uniform_in(-6.0, 6.0), 0.1));
    }
    let scene = PointScene {
        scene_id: "grad".into(),
        domain_tag: "test".into(),
        points,
        gt_boxes: boxes,
    };
    let input: Grid = rasterize_bev(&scene, &cfg.grid);
    let mut params: ParamSet = cfg.arch.init_params(21);
    params.get_mut(CLS_B).unwrap().values[0] = -1.0;
    let mut r = RngStream::new(5, 5);
    for p in params.entries_mut() {
        if p.name.starts_with("backbone") && p.name.ends_with("bias") || p.name == FC1_B {
            p.values.iter_mut().for_each(|v| *v = r.uniform_in(-0.3, 0.3));
        }
    }
    let pass = ScenePass::run(&params, &input, &cfg).unwrap();
    let anchors = assign_targets(&cfg.grid, &scene.gt_boxes);
    let mut sup = RoiSupervision::from_boxes(&pass.proposals, &scene.gt_boxes, 0.5);
    let n = pass.proposals.len();
    sup.weights = (0..n).map(|i| 0.2 + 0.8 * (i as f64 / n as f64)).collect();
    if with_dropout_and_teacher {
        sup.teacher = Some(TeacherTargets {
            probs: (0..n).map(|i| (i as f64 * 0.37).fract()).collect(),
            weights: (0..n).map(|i| 1.0 - 0.5 * (i as f64 / n as f64)).collect(),
        });
    }
    let opts = ObjectiveOptions {
        student_dropout: with_dropout_and_teacher,
        use_dir_loss: true,
    };
    let stream = RngStream::new(99, 4);
    let (_, grads) = loss_and_grad(&params, &pass, &anchors, &sup, &cfg, &opts, &mut stream.clone()).unwrap();
    let proposals = pass.proposals.clone();
    let report = grad_check(
        &params,
        &grads,
        |p| {
            let pass = ScenePass::with_proposals(p, &input, proposals.clone())?;
            let (c, _) = loss_and_grad(p, &pass, &anchors, &sup, &cfg, &opts, &mut stream.clone())?;
            c.total(0)
        },
        &GradCheckOptions {
            max_per_entry: 40,
            ..GradCheckOptions::default()
        },
    )
    .unwrap();
    report.max_rel_error
}

fn ema_replay_error() -> f64 {
    let mut rng = RngStream::new(7, 7);
    let mut student = ParamSet::new();
    let mut teacher = ParamSet::new();
    student.push("w", &[16], (0..16).map(|_| rng.uniform_in(-1.0, 1.0)).collect()).unwrap();
    teacher.push("w", &[16], (0..16).map(|_| rng.uniform_in(-1.0, 1.0)).collect()).unwrap();
    let t0 = teacher.clone();
    let alpha: f64 = 0.999;
    let k = 500;
    for _ in 0..k {
        ema_update(&mut teacher, &student, alpha).unwrap();
    }
    let decay = alpha.powi(k);
    let s = &student.get("w").unwrap().values;
    let a = &t0.get("w").unwrap().values;
    teacher
        .get("w")
        .unwrap()
        .values
        .iter()
        .enumerate()
        .map(|(i, v)| (v - (s[i] + decay * (a[i] - s[i]))).abs())
        .fold(0.0, f64::max)
}

fn mc_variance_error() -> f64 {
    let det = DetectorConfig::default();
    let mut rng = RngStream::new(3, 3);
    let points: Vec<Point> = (0..600)
        .map(|_| Point::new(rng.uniform_in(-15.0, 15.0), rng.uniform_in(-15.0, 15.0), rng.uniform()))
        .collect();
    let scene = PointScene {
        scene_id: "mc".into(),
        domain_tag: "test".into(),
        points,
        gt_boxes: vec![],
    };
    let params: ParamSet = det.arch.init_params(4);
    let pass = ScenePass::run(&params, &rasterize_bev(&scene, &det.grid), &det).unwrap();
    let base = RngStream::new(11, 2);
    let t = 15;
    let stats =
        mc_teacher_predict(&params, pass.features(), &pass.proposals, t, &det.arch, &det.grid, &base, false).unwrap();
    assert!(!stats.used.is_empty());
    let runs: Vec<Vec<f64>> = (0..t)
        .map(|k| {
            roi_forward(pass.features(), &pass.proposals, &params, &det.arch, &det.grid, true, &mut base.split(k as u64))
                .unwrap()
                .logits
        })
        .collect();
    let mut worst: f64 = 0.0;
    for (r, st) in stats.stats.iter().enumerate() {
        let xs: Vec<f64> = runs.iter().map(|l| l[r]).collect();
        let m = xs.iter().sum::<f64>() / t as f64;
        let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (t - 1) as f64;
        worst = worst.max((st.variance - var).abs() / var.max(1.0)).max((st.mean_logit - m).abs());
    }
    worst
}

fn clip_violations() -> usize {
    let mut rng = RngStream::new(5, 1);
    (0..100_000)
        .filter(|i| {
            let v = if i % 1000 == 0 { 0.0 } else { 10f64.powf(rng.uniform_in(-8.0, 8.0)) };
            let c = uncertainty_weight(v).unwrap();
            let expected = if v <= 1.0 { 1.0 } else { (1.0 / v).max(MIN_WEIGHT) };
            !((MIN_WEIGHT..=1.0).contains(&c) && c == expected)
        })
        .count()
}

#[test]
fn criterion_1_numerical_kernel() {
    let start = Instant::now();
    let mut worst_grad: f64 = 0.0;
    let mut parts = Vec::new();
    for (name, e) in loss_grad_errors() {
        worst_grad = worst_grad.max(e);
        parts.push(format!("{name} {e:.1e}"));
    }
    for (name, flag) in [("composite", false), ("composite+dropout+teacher", true)] {
        let e = composite_grad_error(flag);
        worst_grad = worst_grad.max(e);
        parts.push(format!("{name} {e:.1e}"));
    }
    let ema = ema_replay_error();
    let mc = mc_variance_error();
    let clip = clip_violations();
    let secs = start.elapsed().as_secs_f64();
    let pass = worst_grad <= 1e-4 && ema <= 1e-12 && mc <= 1e-12 && clip == 0 && secs < 60.0;
    verdict(
        1,
        "numerical kernel",
        pass,
        &format!(
            "grad rel err [{}] ema replay {ema:.1e} mc variance {mc:.1e} clip violations {clip}/100000 time {secs:.1}s",
            parts.join(", ")
        ),
    );
}

// ---------------------------------------------------------------- criterion 2

fn random_box(rng: &mut RngStream, spread: f64) -> BBox {
    BBox::new(
        rng.uniform_in(-spread, spread),
        rng.uniform_in(-spread, spread),
        rng.uniform_in(0.5, 2.5),
        rng.uniform_in(1.0, 5.0),
        if rng.uniform() < 0.5 { Orient::AlongX } else { Orient::AlongY },
    )
}

/// Area of intersection and union by uniform sampling of the joint bounds.
fn mc_iou(a: &BBox, b: &BBox, rng: &mut RngStream, samples: usize) -> f64 {
    let (a0, a1, a2, a3) = a.bounds();
    let (b0, b1, b2, b3) = b.bounds();
    let (x0, y0, x1, y1) = (a0.min(b0), a1.min(b1), a2.max(b2), a3.max(b3));
    let inside = |(bx0, by0, bx1, by1): (f64, f64, f64, f64), x: f64, y: f64| x >= bx0 && x <= bx1 && y >= by0 && y <= by1;
    let (mut inter, mut union) = (0usize, 0usize);
    for _ in 0..samples {
        let x = rng.uniform_in(x0, x1);
        let y = rng.uniform_in(y0, y1);
        let (ia, ib) = (inside(a.bounds(), x, y), inside(b.bounds(), x, y));
        inter += usize::from(ia && ib);
        union += usize::from(ia || ib);
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// The unique subset where each box is kept iff no kept box of higher rank
/// overlaps it above the threshold.
fn brute_nms(dets: &[Detection], thr: f64, top_k: usize) -> Vec<Detection> {
    let mut sorted = dets.to_vec();
    sorted.sort_by(rank_order);
    let n = sorted.len();
    let mask = (0u32..1 << n)
        .find(|mask| {
            let kept = |i: usize| mask & (1 << i) != 0;
            (0..n).all(|i| kept(i) == !(0..i).any(|j| kept(j) && iou(&sorted[j].bbox, &sorted[i].bbox) > thr))
        })
        .expect("a consistent subset exists");
    (0..n).filter(|i| mask & (1 << i) != 0).map(|i| sorted[i]).take(top_k).collect()
}

/// Interpolated AP by scanning every threshold present in the data.
fn ap_enumeration(scored: &[(f64, bool)], n_gt: usize) -> f64 {
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
fn criterion_2_oracles() {
    let start = Instant::now();
    let mut rng = RngStream::new(2024, 0);
    let mut worst_iou: f64 = 0.0;
    for _ in 0..1000 {
        let a = random_box(&mut rng, 1.5);
        let b = random_box(&mut rng, 1.5);
        worst_iou = worst_iou.max((iou(&a, &b) - mc_iou(&a, &b, &mut rng, 40_000)).abs());
    }
    let mut nms_bad = 0;
    for trial in 0..500 {
        let n = 1 + trial % 6;
        let dets: Vec<Detection> = (0..n)
            .map(|_| {
                let mut d = Detection::new(random_box(&mut rng, 2.0), 0.0);
                d.confidence = (rng.uniform() * 10.0).floor() / 10.0;
                d
            })
            .collect();
        let thr = [0.1, 0.3, 0.5][trial % 3];
        let top_k = 1 + trial % 5;
        nms_bad += usize::from(nms(&dets, thr, top_k) != brute_nms(&dets, thr, top_k));
    }
    let mut worst_ap: f64 = 0.0;
    for trial in 0..200 {
        let n = 1 + trial % 12;
        let n_gt = 1 + rng.int_in(0, n as u64) as usize;
        let mut tps = 0;
        let scored: Vec<(f64, bool)> = (0..n)
            .map(|_| {
                let y = tps < n_gt && rng.uniform() < 0.6;
                tps += usize::from(y);
                ((rng.uniform() * 10.0).floor() / 10.0, y)
            })
            .collect();
        let ap = average_precision(&scored, n_gt, 40).unwrap();
        worst_ap = worst_ap.max((ap - ap_enumeration(&scored, n_gt)).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = worst_iou <= 0.01 && nms_bad == 0 && worst_ap <= 1e-9 && secs < 120.0;
    verdict(
        2,
        "oracle equivalence",
        pass,
        &format!("max |iou - mc| {worst_iou:.4} nms mismatches {nms_bad}/500 max |ap - oracle| {worst_ap:.1e} time {secs:.1}s"),
    );
}

// ------------------------------------------------------ criteria 3 through 8

#[derive(Debug)]
struct SeedRun {
    seed: u64,
    source_on_source: f64,
    source_on_target: f64,
    /// Self-training rounds 1..=J on the target eval split.
    rounds: Vec<f64>,
    uamt: f64,
    plain: f64,
    /// Mean confidence of incorrect labels for rounds 0..=J.
    conf_incorrect: Vec<f64>,
    /// Fraction of incorrect ROIs with variance below 1 at the first and
    /// last epoch.
    below_one: (f64, f64),
    elapsed: Duration,
}

fn pipeline_config(seed: u64, out: &Path) -> RunConfig {
    let mut c = RunConfig::desk();
    c.seed = seed;
    c.io.out_dir = out.to_path_buf();
    c
}

fn seed_runs() -> &'static [SeedRun] {
    static RUNS: OnceLock<Vec<SeedRun>> = OnceLock::new();
    RUNS.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        SEEDS
            .iter()
            .map(|&seed| {
                let start = Instant::now();
                let cfg = pipeline_config(seed, &dir.path().join(format!("seed{seed}")));
                let (rows, report) = run_pipeline(&cfg, &Arm::ALL).unwrap();
                let ap = |model: &str, set: &str| {
                    rows.iter()
                        .find(|r| r.model == model && r.eval_set == set)
                        .unwrap_or_else(|| panic!("no row for {model} on {set}"))
                        .moderate_ap()
                };
                let net = if cfg.adapt.evaluate_teacher { "teacher" } else { "student" };
                let fig6 = &report.variance.iter().find(|(a, _)| *a == Arm::Uncertainty).unwrap().1;
                let run = SeedRun {
                    seed,
                    source_on_source: ap("source", "source_eval"),
                    source_on_target: ap("source", "target_eval"),
                    rounds: (1..=cfg.adapt.iterations).map(|j| ap(&format!("self_training_iter{j}"), "target_eval")).collect(),
                    uamt: ap(&format!("uamt_{net}"), "target_eval"),
                    plain: ap(&format!("mt_{net}"), "target_eval"),
                    conf_incorrect: report.density.iter().map(|d| d.mean_conf_incorrect.unwrap_or(f64::NAN)).collect(),
                    below_one: (
                        fig6.first().unwrap().frac_below_one.unwrap_or(f64::NAN),
                        fig6.last().unwrap().frac_below_one.unwrap_or(f64::NAN),
                    ),
                    elapsed: start.elapsed(),
                };
                println!("seed run {run:?}");
                run
            })
            .collect()
    })
}

fn per_seed(runs: &[SeedRun], f: impl Fn(&SeedRun) -> String) -> String {
    runs.iter().map(|r| format!("seed {}: {}", r.seed, f(r))).collect::<Vec<_>>().join("; ")
}

#[test]
fn criterion_3_source_gap() {
    let runs = seed_runs();
    let gap = mean(&runs.iter().map(|r| r.source_on_source - r.source_on_target).collect::<Vec<_>>());
    let detail = per_seed(runs, |r| format!("source {:.2} target {:.2}", r.source_on_source, r.source_on_target));
    verdict(3, "source gap", gap >= 10.0, &format!("mean gap {gap:.2} AP points (need >= 10); {detail}"));
}

#[test]
fn criterion_4_pipeline_gain() {
    let runs = seed_runs();
    let gain = mean(&runs.iter().map(|r| r.uamt - r.source_on_target).collect::<Vec<_>>());
    let slowest = runs.iter().map(|r| r.elapsed).max().unwrap();
    let detail = per_seed(runs, |r| {
        format!("source-only {:.2} adapted {:.2} ({:.0}s)", r.source_on_target, r.uamt, r.elapsed.as_secs_f64())
    });
    let pass = gain >= 5.0 && slowest <= Duration::from_secs(15 * 60);
    verdict(4, "full pipeline gain", pass, &format!("mean gain {gain:.2} (need >= 5); {detail}"));
}

#[test]
fn criterion_5_self_training_rounds() {
    let runs = seed_runs();
    let ok = |r: &SeedRun| r.rounds.windows(2).all(|w| w[1] >= w[0] - 1.0);
    let pass = runs.iter().all(ok);
    let detail = per_seed(runs, |r| {
        let v: Vec<String> = r.rounds.iter().map(|a| format!("{a:.2}")).collect();
        format!("[{}] {}", v.join(", "), if ok(r) { "ok" } else { "decreasing" })
    });
    verdict(5, "self-training rounds non-decreasing", pass, &detail);
}

#[test]
fn criterion_6_uncertainty_vs_plain() {
    let runs = seed_runs();
    let gap = mean(&runs.iter().map(|r| r.uamt - r.plain).collect::<Vec<_>>());
    let detail = per_seed(runs, |r| format!("uncertainty {:.2} plain {:.2}", r.uamt, r.plain));
    verdict(6, "uncertainty-aware >= plain mean teacher", gap >= 0.0, &format!("mean gap {gap:.3}; {detail}"));
}

#[test]
fn criterion_7_incorrect_label_confidence() {
    let runs = seed_runs();
    let ok = |r: &SeedRun| r.conf_incorrect.last().unwrap() < r.conf_incorrect.first().unwrap();
    let detail = per_seed(runs, |r| {
        let v: Vec<String> = r.conf_incorrect.iter().map(|c| format!("{c:.3}")).collect();
        format!("[{}]", v.join(", "))
    });
    verdict(7, "incorrect-label confidence falls from iteration 0 to 3", runs.iter().all(ok), &detail);
}

#[test]
fn criterion_8_incorrect_roi_variance() {
    let runs = seed_runs();
    let ok = |r: &SeedRun| r.below_one.1 < r.below_one.0;
    let detail = per_seed(runs, |r| format!("first {:.3} last {:.3}", r.below_one.0, r.below_one.1));
    verdict(8, "fraction of incorrect ROIs with variance < 1 falls", runs.iter().all(ok), &detail);
}

// ---------------------------------------------------------------- criterion 9

fn files_under(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if !p.to_string_lossy().ends_with(".meta.json") {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

#[test]
fn criterion_9_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let small = |name: &str| {
        let mut c = pipeline_config(5, &dir.path().join(name));
        c.scenegen.n_train = 24;
        c.scenegen.n_eval = 12;
        c.source_training.epochs = 6;
        c.adapt.epochs = 2;
        c.adapt.mc_passes = 4;
        c.adapt.delta_schedule = vec![0.05, 0.1, 0.2];
        c
    };
    for name in ["a", "b"] {
        run_pipeline(&small(name), &Arm::ALL).unwrap();
    }
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let files = files_under(&a);
    let differing: Vec<String> = files
        .iter()
        .filter(|f| std::fs::read(a.join(f)).ok() != std::fs::read(b.join(f)).ok())
        .map(|f| f.display().to_string())
        .collect();
    let count = |ext: &str| files.iter().filter(|f| f.to_string_lossy().ends_with(ext)).count();
    let pass = differing.is_empty() && files == files_under(&b) && count(".ckpt") > 0 && count(".csv") > 0;
    verdict(
        9,
        "byte-identical rerun",
        pass,
        &format!(
            "{} files compared ({} checkpoints, {} label/data files, {} csv); differing {:?}",
            files.len(),
            count(".ckpt"),
            count(".jsonl"),
            count(".csv"),
            differing
        ),
    );
}
