//! Acceptance suite: one line per criterion, non-zero exit if any fails.
//!
//! `cargo test --test acceptance` runs everything; `-- 2 4` runs a subset.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use common::{overfit, rng, Overfit};
use rand::Rng;
use sfmk::eval::{depth_metrics, evaluate, inference_fps, EvalConfig};
use sfmk::geometry::{view_synthesis, warp_coordinates, Intrinsics, Pose};
use sfmk::losses::{min_reprojection_with_automask, ssim, total_loss, LossConfig, SourceView};
use sfmk::ndiff::check::CheckReport;
use sfmk::nets::checkpoint::ModelBundle;
use sfmk::nets::{Arch, NetConfig};
use sfmk::pipeline::config::KeyValues;
use sfmk::pipeline::{synth_dataset, synth_scene, ImageTriplet, SceneConfig};
use sfmk::robust::attack::{training_loss_grad, triplet_frames};
use sfmk::robust::{
    corrupt, flip_attack, pgd_attack, pgd_iterations, robustness_sweep, sweep_csv, AttackConfig, Condition, Corruption,
    CorruptionSpec, FlipDirection, SweepSuite, FLIP_EPSILONS, PGD_EPSILONS,
};
use sfmk::train::{lr_schedule, optimizer_step, AdamState, IntrinsicsMode, OptimConfig, OptimKind};
use sfmk::{Array, Graph};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)*) => {
        if !$cond {
            return Err(format!($($fmt)*));
        }
    };
}

fn err(e: sfmk::Error) -> String {
    e.to_string()
}

fn shapes() -> Outcome {
    let start = Instant::now();
    let cfg = NetConfig::full();
    ensure!((cfg.height, cfg.width, cfg.patch_size, cfg.embed_dim) == (192, 640, 16, 768), "full preset is {cfg:?}");
    ensure!(cfg.num_patches() == 480, "N_p = {}", cfg.num_patches());
    let expected: [(&str, [usize; 3]); 5] = [
        ("DN3", [96, 48, 160]),
        ("DN6", [768, 24, 80]),
        ("DN9", [1536, 12, 40]),
        ("DN12", [3072, 6, 20]),
        ("EN", [2048, 12, 40]),
    ];
    let trace = cfg.reassemble_trace().map_err(err)?;
    ensure!(trace.len() == expected.len(), "{} stages traced", trace.len());
    for ((label, shape), (want_label, want)) in trace.iter().zip(expected) {
        ensure!(label == want_label && shape.as_slice() == want, "{label} {shape:?}, expected {want_label} {want:?}");
    }
    let secs = start.elapsed().as_secs_f64();
    ensure!(secs < 10.0, "shape trace took {secs:.1} s");
    Ok(format!("N_p 480, DN3/6/9/12 and EN match, {secs:.2} s"))
}

fn pgd_schedule() -> Outcome {
    let got: Vec<usize> = PGD_EPSILONS.iter().map(|&e| pgd_iterations(e)).collect();
    ensure!(got == [1, 1, 2, 3, 5, 10, 20, 36], "iterations {got:?}");
    Ok(format!("{got:?}"))
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let mut cases = common::primitive_cases();
    cases.extend(common::composite_cases());
    let mut checked = 0;
    let mut worst = 0.0f64;
    let mut tally = |name: &str, r: CheckReport| -> Result<(), String> {
        checked += r.checked;
        worst = worst.max(r.max_abs_err);
        ensure!(r.passed(), "{name}: {:?}", &r.mismatches[..r.mismatches.len().min(3)]);
        Ok(())
    };
    let n_ops = cases.len();
    for (name, case) in cases {
        tally(name, case().map_err(err)?)?;
    }
    for (d, e) in [(Arch::Transformer, Arch::Transformer), (Arch::Conv, Arch::Conv)] {
        tally("total_loss", common::total_loss_case(d, e).map_err(err)?)?;
    }
    let secs = start.elapsed().as_secs_f64();
    ensure!(secs < 300.0, "gradient suite took {secs:.0} s");
    Ok(format!("{n_ops} ops + 2 end-to-end nets, {checked} coordinates, max abs err {worst:.1e}, {secs:.0} s"))
}

fn geometry() -> Outcome {
    let mut r = rng(4);
    // Identity pose reproduces the source at interior pixels.
    let (h, w) = (12, 16);
    let g = Graph::new();
    let image = g.constant(Array::uniform(&[3, h, w], 0.0, 1.0, &mut r));
    let depth = g.constant(Array::uniform(&[h, w], 1.0, 20.0, &mut r));
    let k = g.constant(Intrinsics::new(14.0, 13.0, 7.5, 5.5).map_err(err)?.to_array());
    let pose = g.constant(Pose::identity().to_array());
    let (synth, _) = view_synthesis(&image, &depth, &k, &pose).map_err(err)?;
    let (sv, iv) = (synth.to_array(), image.to_array());
    let mut identity_err = 0.0f64;
    for c in 0..3 {
        for i in 1..h - 1 {
            for j in 1..w - 1 {
                identity_err = identity_err.max((sv.at(&[c, i, j]) - iv.at(&[c, i, j])).abs());
            }
        }
    }
    ensure!(identity_err < 1e-6, "identity warp error {identity_err:e}");

    // project ∘ backproject.
    let mut round_trip = 0.0f64;
    for _ in 0..1000 {
        let k = Intrinsics::new(r.random_range(50.0..800.0), r.random_range(50.0..800.0), r.random_range(0.0..640.0), r.random_range(0.0..192.0))
            .map_err(err)?;
        let (x, y, d) = (r.random_range(0.0..640.0), r.random_range(0.0..192.0), r.random_range(0.1..100.0));
        let p = k.project(k.backproject(x, y, d)).ok_or("point behind camera")?;
        round_trip = round_trip.max((p[0] - x).abs()).max((p[1] - y).abs());
    }
    ensure!(round_trip < 1e-9, "round trip error {round_trip:e}");

    // Sideways translation over a fronto-parallel plane shifts by fx·tx/D.
    let mut shift_err = 0.0f64;
    for _ in 0..50 {
        let (fx, fy) = (r.random_range(5.0..40.0), r.random_range(5.0..40.0));
        let (d, tx) = (r.random_range(2.0..50.0), r.random_range(-0.5..0.5));
        let g = Graph::new();
        let kt = g.constant(Intrinsics::new(fx, fy, 7.5, 5.5).map_err(err)?.to_array());
        let depth = g.constant(Array::full(&[h, w], d));
        let pose = g.constant(Pose::translation_only([tx, 0.0, 0.0]).to_array());
        let flow = warp_coordinates(&depth, &kt, &kt, &pose).map_err(err)?;
        let c = flow.coords.to_array();
        for i in 0..h {
            for j in 0..w {
                shift_err = shift_err.max((c.at(&[0, i, j]) - j as f64 - fx * tx / d).abs());
                shift_err = shift_err.max((c.at(&[1, i, j]) - i as f64).abs());
            }
        }
    }
    ensure!(shift_err < 1e-6, "translation shift error {shift_err:e}");
    Ok(format!("identity {identity_err:.1e}, round trip {round_trip:.1e}, shift {shift_err:.1e}"))
}

struct Oracle {
    abs_rel: f64,
    sq_rel: f64,
    rmse: f64,
    rmse_log: f64,
    deltas: [f64; 3],
}

/// Straight-line metric definitions over valid pixels.
fn oracle_metrics(pred: &[f64], gt: &[f64]) -> Oracle {
    let pairs: Vec<(f64, f64)> = pred.iter().zip(gt).filter(|(_, &g)| g > 0.0 && g <= 80.0).map(|(&p, &g)| (p.clamp(1e-3, 80.0), g)).collect();
    let n = pairs.len() as f64;
    let mean = |f: &dyn Fn(f64, f64) -> f64| pairs.iter().map(|&(p, g)| f(p, g)).sum::<f64>() / n;
    let within = |t: f64| mean(&|p, g| if (p / g).max(g / p) < t { 1.0 } else { 0.0 });
    Oracle {
        abs_rel: mean(&|p, g| (p - g).abs() / g),
        sq_rel: mean(&|p, g| (p - g).powi(2) / g),
        rmse: mean(&|p, g| (p - g).powi(2)).sqrt(),
        rmse_log: mean(&|p, g| (p.ln() - g.ln()).powi(2)).sqrt(),
        deltas: [within(1.25), within(1.25 * 1.25), within(1.25 * 1.25 * 1.25)],
    }
}

fn loss_oracles() -> Outcome {
    // SSIM of two constant images: only the luminance term survives.
    let g = Graph::new();
    let a = g.constant(Array::full(&[3, 8, 8], 0.2));
    let b = g.constant(Array::full(&[3, 8, 8], 0.8));
    let s = ssim(&a, &b).map_err(err)?.to_array();
    let (c1, m1, m2) = (0.01f64.powi(2), 0.2, 0.8);
    let closed = (2.0 * m1 * m2 + c1) / (m1 * m1 + m2 * m2 + c1);
    let ssim_err = s.data().iter().map(|v| (v - closed).abs()).fold(0.0, f64::max);
    ensure!(ssim_err < 1e-6 && (closed - 0.4707).abs() < 1e-4, "ssim {} vs closed form {closed}", s.data()[0]);

    // A static scene is reconstructed exactly by every source: zero loss.
    let scene = synth_scene(&SceneConfig::sized(32, 32).with_motion(Pose::identity())).map_err(err)?;
    let g = Graph::new();
    let t = g.constant(scene.target.clone());
    let ones = Array::ones(&[32, 32]);
    let rep = min_reprojection_with_automask(&t, &[t, t], &[t, t], &[ones.clone(), ones], &LossConfig::default()).map_err(err)?;
    ensure!(rep.loss.item() == 0.0, "static reprojection loss {}", rep.loss.item());
    let cfg = LossConfig { smooth_weight: 0.0, ..LossConfig::default() };
    let disp: Vec<_> = (0..cfg.num_scales).map(|s| g.constant(Array::full(&[32 >> s, 32 >> s], 0.3))).collect();
    let zero_pose = g.constant(Pose::identity().to_array());
    let sources = [SourceView { image: t, pose: zero_pose }, SourceView { image: t, pose: zero_pose }];
    let k = g.constant(scene.intrinsics.expect("synthetic intrinsics").to_array());
    let lb = total_loss(&disp, &t, &sources, &k, &cfg).map_err(err)?;
    // Through the warp the coordinates are exact only up to rounding.
    let warped = lb.total.item();
    ensure!((0.0..1e-12).contains(&warped), "static total loss {warped:e}");

    // Metrics against the straight-line oracle.
    let mut r = rng(9);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let gt: Vec<f64> = (0..10).map(|i| if i == 3 { 0.0 } else { r.random_range(1.0..90.0) }).collect();
        let pred: Vec<f64> = (0..10).map(|_| r.random_range(0.5..95.0)).collect();
        let m = depth_metrics(&Array::from_vec(&[2, 5], pred.clone()).unwrap(), &Array::from_vec(&[2, 5], gt.clone()).unwrap(), &EvalConfig::unscaled())
            .map_err(err)?;
        let o = oracle_metrics(&pred, &gt);
        let diffs = [
            m.abs_rel - o.abs_rel,
            m.sq_rel - o.sq_rel,
            m.rmse - o.rmse,
            m.rmse_log - o.rmse_log,
            m.delta1 - o.deltas[0],
            m.delta2 - o.deltas[1],
            m.delta3 - o.deltas[2],
        ];
        worst = diffs.iter().fold(worst, |acc, d| acc.max(d.abs()));
    }
    ensure!(worst < 1e-10, "metric oracle mismatch {worst:e}");
    Ok(format!("ssim {closed:.6} (err {ssim_err:.1e}), static mask loss 0, warped {warped:.1e}, metrics max diff {worst:.1e}"))
}

/// Scene for the overfit runs: the default desk plane.
fn overfit_scene() -> sfmk::Result<ImageTriplet> {
    synth_scene(&SceneConfig::desk())
}

/// Scene for intrinsics learning: rotation about the vertical axis makes the
/// focal length observable.
fn intrinsics_scene() -> sfmk::Result<ImageTriplet> {
    let mut cfg = SceneConfig::desk();
    cfg.motion.rotation = [0.0, 0.04, 0.0];
    synth_scene(&cfg)
}

fn synthetic_overfit(trained: &mut Option<ModelBundle>) -> Outcome {
    let start = Instant::now();
    let scene = overfit_scene().map_err(err)?;
    let mut lines = Vec::new();
    let mut failures = Vec::new();
    for (d, e) in [(Arch::Conv, Arch::Conv), (Arch::Conv, Arch::Transformer), (Arch::Transformer, Arch::Conv), (Arch::Transformer, Arch::Transformer)] {
        let tag = format!("({},{})", d.code().to_ascii_uppercase(), e.code().to_ascii_uppercase());
        match overfit(&scene, d, e, IntrinsicsMode::Given, 2000, 50, |loss, abs_rel| loss < 0.02 && abs_rel < 0.15) {
            Ok(Overfit { steps, loss, abs_rel, trainer, .. }) => {
                lines.push(format!("{tag} {steps} steps loss {loss:.4} abs_rel {abs_rel:.3}"));
                if !(loss < 0.02 && abs_rel < 0.15) {
                    failures.push(tag.clone());
                }
                if (d, e) == (Arch::Transformer, Arch::Transformer) {
                    *trained = Some(trainer.bundle(KeyValues::default()));
                }
            }
            Err(e) => {
                lines.push(format!("{tag} error: {e}"));
                failures.push(tag);
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let summary = format!("{}; {secs:.0} s", lines.join("; "));
    ensure!(failures.is_empty(), "{summary}");
    ensure!(secs < 900.0, "{summary} (over 15 min)");
    Ok(summary)
}

fn intrinsics_learning() -> Outcome {
    let scene = intrinsics_scene().map_err(err)?;
    let true_fx = scene.intrinsics.expect("synthetic intrinsics").fx;
    let steps = 800;
    let run = |mode| overfit(&scene, Arch::Transformer, Arch::Transformer, mode, steps, steps, |_, _| false).map_err(err);
    let learned = run(IntrinsicsMode::Learned)?;
    let given = run(IntrinsicsMode::Given)?;
    let fx_err = (learned.fx - true_fx).abs() / true_fx;
    let degradation = learned.abs_rel - given.abs_rel;
    let summary = format!(
        "fx {:.2} vs {true_fx:.2} ({:.1}% off), abs_rel learned {:.3} given {:.3} (degradation {degradation:+.3}), {steps} steps",
        learned.fx,
        100.0 * fx_err,
        learned.abs_rel,
        given.abs_rel
    );
    ensure!(fx_err < 0.2 && degradation < 0.05, "{summary}");
    Ok(summary)
}

/// Adam and AdamW written out directly.
fn reference_adam(x: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64], t: i32, lr: f64, wd: f64) {
    let (b1, b2, eps) = (0.9, 0.999, 1e-8);
    for i in 0..x.len() {
        x[i] *= 1.0 - lr * wd;
        m[i] = b1 * m[i] + (1.0 - b1) * g[i];
        v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
        let mh = m[i] / (1.0 - b1.powi(t));
        let vh = v[i] / (1.0 - b2.powi(t));
        x[i] -= lr * mh / (vh.sqrt() + eps);
    }
}

fn optimizer() -> Outcome {
    let mut worst = 0.0f64;
    for (kind, wd) in [(OptimKind::Adam, 0.0), (OptimKind::AdamW, 0.05)] {
        for trial in 0..5u64 {
            let mut r = rng(100 + trial);
            let scale: Vec<f64> = (0..10).map(|_| r.random_range(0.1..5.0)).collect();
            let center: Vec<f64> = (0..10).map(|_| r.random_range(-2.0..2.0)).collect();
            let grad = |x: &[f64]| -> Vec<f64> { x.iter().zip(&scale).zip(&center).map(|((x, a), c)| a * (x - c)).collect() };
            let cfg = OptimConfig { kind, lr: 1e-2, weight_decay: wd, ..OptimConfig::cnn() };
            let x0: Vec<f64> = (0..10).map(|_| r.random_range(-3.0..3.0)).collect();
            let mut x = Array::from_vec(&[10], x0.clone()).unwrap();
            let mut state = AdamState::for_shapes([&[10usize][..]]);
            let (mut xr, mut m, mut v) = (x0, vec![0.0; 10], vec![0.0; 10]);
            for t in 1..=100 {
                let g = Array::from_vec(&[10], grad(x.data())).unwrap();
                optimizer_step(&mut [&mut x], &[g], &mut state, &cfg, cfg.lr).map_err(err)?;
                let gr = grad(&xr);
                reference_adam(&mut xr, &gr, &mut m, &mut v, t, cfg.lr, wd);
                worst = x.data().iter().zip(&xr).fold(worst, |acc, (a, b)| acc.max((a - b).abs()));
            }
        }
    }
    ensure!(worst < 1e-12, "trajectory deviation {worst:e}");
    let cfg = OptimConfig::transformer();
    let lrs: Vec<f64> = [0, 14, 15, 19].iter().map(|&e| lr_schedule(e, &cfg)).collect();
    let want = [cfg.lr, cfg.lr, cfg.lr / 10.0, cfg.lr / 10.0];
    ensure!(lrs.iter().zip(want).all(|(a, b)| (a - b).abs() <= 1e-15 * b), "schedule {lrs:?}");
    Ok(format!("max deviation {worst:.1e} over 100 steps, lr {lrs:?}"))
}

fn robustness(trained: Option<ModelBundle>) -> Outcome {
    let bundle = match trained {
        Some(b) => b,
        None => overfit(&overfit_scene().map_err(err)?, Arch::Transformer, Arch::Transformer, IntrinsicsMode::Given, 300, 300, |_, _| false)
            .map_err(err)?
            .trainer
            .bundle(KeyValues::default()),
    };
    let scene = overfit_scene().map_err(err)?;

    // Corruptions: shape, range and determinism.
    for kind in Corruption::ALL {
        for severity in 1..=5 {
            let spec = CorruptionSpec::new(kind, severity).map_err(err)?;
            let a = corrupt(&scene.target, &spec, 3).map_err(err)?;
            let b = corrupt(&scene.target, &spec, 3).map_err(err)?;
            ensure!(a.shape() == scene.target.shape(), "{kind}@{severity} shape {:?}", a.shape());
            ensure!(a.data().iter().all(|v| (0.0..=1.0).contains(v)), "{kind}@{severity} out of range");
            ensure!(a == b, "{kind}@{severity} not deterministic");
        }
    }

    // PGD stays inside the ball and never lowers the training loss.
    let loss_cfg = LossConfig::default();
    let frames = triplet_frames(&scene);
    let clean_loss = training_loss_grad(&bundle, &scene, &frames, &loss_cfg).map_err(err)?.0;
    let mut max_ratio = 0.0f64;
    let mut pgd_gain = f64::INFINITY;
    for &eps in &PGD_EPSILONS {
        let cfg = AttackConfig::pgd(eps).map_err(err)?;
        let (adv, out) = pgd_attack(&bundle, &scene, &cfg, &loss_cfg).map_err(err)?;
        for (x, x0) in triplet_frames(&adv).iter().zip(&frames) {
            let linf = x.data().iter().zip(x0.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            ensure!(linf <= eps / 255.0 + 1e-12, "pgd eps {eps}: |delta| {:.4}/255", linf * 255.0);
            max_ratio = max_ratio.max(linf * 255.0 / eps);
        }
        ensure!(out.initial_loss == clean_loss, "pgd starts from loss {} not {clean_loss}", out.initial_loss);
        ensure!(out.best_loss >= out.initial_loss, "pgd eps {eps} lowered the loss");
        pgd_gain = pgd_gain.min(out.best_loss - out.initial_loss);
    }

    // Flip attacks descend toward the mirrored prediction.
    let mut flip_drop = Vec::new();
    for direction in [FlipDirection::Horizontal, FlipDirection::Vertical] {
        for &eps in &FLIP_EPSILONS {
            let cfg = AttackConfig::flip(direction, eps).map_err(err)?;
            let (x, out) = flip_attack(&bundle.depth, &scene.target, &cfg, loss_cfg.depth_range).map_err(err)?;
            ensure!(out.best_loss <= out.initial_loss, "{} eps {eps}: {} -> {}", direction.code(), out.initial_loss, out.best_loss);
            let linf = x.data().iter().zip(scene.target.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            ensure!(linf <= eps / 255.0 + 1e-12, "{} eps {eps}: |delta| {:.4}/255", direction.code(), linf * 255.0);
            flip_drop.push(out.initial_loss - out.best_loss);
        }
    }

    // The clean sweep row is bit-identical to evaluation.
    let data = synth_dataset(&SceneConfig::desk().with_seed(40), 3).map_err(err)?;
    let suite = SweepSuite { conditions: vec![Condition::Clean, Condition::Corruption(CorruptionSpec::worst(Corruption::Fog))], seed: 0 };
    let rows = robustness_sweep(&bundle, &data, &suite, &loss_cfg).map_err(err)?;
    let eval_rmse = evaluate(&bundle.depth, &data, &EvalConfig::default()).map_err(err)?.rmse;
    let csv = sweep_csv(&rows);
    let csv_rmse: f64 = csv.lines().nth(1).and_then(|l| l.split(',').nth(4)).and_then(|v| v.parse().ok()).ok_or("bad csv")?;
    ensure!(rows[0].mean_rmse.to_bits() == eval_rmse.to_bits(), "sweep {} vs eval {eval_rmse}", rows[0].mean_rmse);
    ensure!(csv_rmse.to_bits() == eval_rmse.to_bits(), "csv {csv_rmse} vs eval {eval_rmse}");
    Ok(format!(
        "75 corruption cases ok, pgd max |delta| {max_ratio:.2} eps (min gain {pgd_gain:.2e}), flip RMSE drops {}, clean RMSE {eval_rmse:.4} identical",
        flip_drop.iter().map(|d| format!("{d:.3}")).collect::<Vec<_>>().join("/")
    ))
}

fn bench(trained: Option<&ModelBundle>) -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let bundle = match trained {
        Some(b) => b.clone(),
        None => ModelBundle {
            depth: sfmk::nets::DepthNet::new(Arch::Transformer, NetConfig::desk(), 0).map_err(err)?,
            ego: sfmk::nets::EgoNet::new(Arch::Transformer, NetConfig::desk(), 1).map_err(err)?,
            learn_intrinsics: false,
            extra: KeyValues::default(),
        },
    };
    let path = dir.path().join("model.sfmk");
    bundle.save(&path).map_err(err)?;
    let code = sfmk::pipeline::cli::run(["sfmk", "bench", "--checkpoint", path.to_str().unwrap(), "--iters", "3"]);
    ensure!(code == 0, "bench exited with {code}");
    let fps = inference_fps(&bundle.depth, bundle.depth.cfg.height, bundle.depth.cfg.width, 5).map_err(err)?;
    ensure!(fps > 0.0 && fps.is_finite(), "fps {fps}");
    Ok(format!("bench ran, {fps:.1} fps at desk size (no numeric target)"))
}

fn main() {
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let selected = |n: usize| wanted.is_empty() || wanted.contains(&n);
    let mut trained: Option<ModelBundle> = None;
    let mut failed = 0;
    let mut report = |n: usize, name: &str, elapsed: Duration, out: std::thread::Result<Outcome>| {
        let (ok, detail) = match out {
            Ok(Ok(d)) => (true, d),
            Ok(Err(d)) => (false, d),
            Err(p) => (false, format!("panicked: {}", p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())),
        };
        if !ok {
            failed += 1;
        }
        println!("criterion {n:2} {name:<28} {} [{:.1} s] {detail}", if ok { "PASS" } else { "FAIL" }, elapsed.as_secs_f64());
    };
    let mut run = |n: usize, name: &str, f: &mut dyn FnMut() -> Outcome| {
        if selected(n) {
            let t = Instant::now();
            let out = catch_unwind(AssertUnwindSafe(&mut *f));
            report(n, name, t.elapsed(), out);
        }
    };
    run(1, "shape conformance", &mut shapes);
    run(2, "pgd schedule", &mut pgd_schedule);
    run(3, "gradient suite", &mut gradients);
    run(4, "geometry properties", &mut geometry);
    run(5, "loss oracles", &mut loss_oracles);
    run(6, "synthetic overfit", &mut || synthetic_overfit(&mut trained));
    run(7, "intrinsics learning", &mut intrinsics_learning);
    run(8, "optimizer correctness", &mut optimizer);
    run(9, "robustness harness", &mut || robustness(trained.clone()));
    run(10, "bench (not reproduced)", &mut || bench(trained.as_ref()));
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
