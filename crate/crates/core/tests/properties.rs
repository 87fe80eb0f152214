//! Randomised invariants.

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sfmk::eval::{depth_metrics, EvalConfig};
use sfmk::geometry::{backproject, pixel_grid, project, warp_coordinates, Intrinsics, Pose};
use sfmk::losses::{photometric_error, ssim, LossConfig};
use sfmk::pipeline::config::KeyValues;
use sfmk::pipeline::run::{DataSource, RunConfig};
use sfmk::pipeline::{synth_scene, SceneConfig};
use sfmk::robust::attack::pgd_step;
use sfmk::robust::{corrupt, Corruption, CorruptionSpec};
use sfmk::nets::Arch;
use sfmk::train::{lr_schedule, optimizer_step, AdamState, OptimConfig, OptimKind};
use sfmk::{Array, Graph};

fn image(shape: &[usize], seed: u64) -> Array {
    Array::uniform(shape, 0.0, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn intrinsics() -> impl Strategy<Value = Intrinsics> {
    (20.0..200.0f64, 20.0..200.0f64, -5.0..40.0f64, -5.0..40.0f64).prop_map(|(fx, fy, cx, cy)| Intrinsics { fx, fy, cx, cy })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn point_round_trip(k in intrinsics(), x in -10.0..80.0f64, y in -10.0..80.0f64, d in 0.1..100.0f64) {
        let p = k.project(k.backproject(x, y, d)).unwrap();
        prop_assert!((p[0] - x).abs() < 1e-9 && (p[1] - y).abs() < 1e-9);
    }

    #[test]
    fn grid_round_trip(k in intrinsics(), seed in 0u64..1000) {
        let g = Graph::new();
        let depth = g.constant(Array::uniform(&[4, 5], 0.1, 100.0, &mut ChaCha8Rng::seed_from_u64(seed)));
        let kt = g.constant(k.to_array());
        let pts = backproject(&depth, &kt).unwrap();
        let (uv, front) = project(&pts, &kt, &g.constant(Array::zeros(&[6]))).unwrap();
        prop_assert!(front.iter().all(|&f| f));
        let grid = pixel_grid(4, 5).slice_axis(0, 0, 2).unwrap();
        for (a, b) in uv.to_array().data().iter().zip(grid.data()) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn principal_point_shift(k in intrinsics(), delta in -10.0..10.0f64, t in prop::array::uniform3(-0.5..0.5f64), seed in 0u64..1000) {
        let g = Graph::new();
        let depth = g.constant(Array::uniform(&[3, 4], 1.0, 20.0, &mut ChaCha8Rng::seed_from_u64(seed)));
        let pose = g.constant(Pose::translation_only(t).to_array());
        let kt = g.constant(k.to_array());
        let shifted = Intrinsics { cx: k.cx + delta, ..k };
        let a = warp_coordinates(&depth, &kt, &kt, &pose).unwrap().coords.to_array();
        let b = warp_coordinates(&depth, &kt, &g.constant(shifted.to_array()), &pose).unwrap().coords.to_array();
        let n = 12;
        for i in 0..n {
            prop_assert!((b.data()[i] - a.data()[i] - delta).abs() < 1e-9);
            prop_assert!((b.data()[n + i] - a.data()[n + i]).abs() < 1e-9);
        }
    }

    #[test]
    fn photometric_error_is_symmetric(s1 in 0u64..1000, s2 in 0u64..1000) {
        let g = Graph::new();
        let x = g.constant(image(&[3, 6, 7], s1));
        let y = g.constant(image(&[3, 6, 7], s2.wrapping_add(7919)));
        let cfg = LossConfig::default();
        let (pxy, pyx) = (photometric_error(&x, &y, &cfg).unwrap().to_array(), photometric_error(&y, &x, &cfg).unwrap().to_array());
        let (sxy, syx) = (ssim(&x, &y).unwrap().to_array(), ssim(&y, &x).unwrap().to_array());
        for i in 0..pxy.len() {
            prop_assert!((pxy.data()[i] - pyx.data()[i]).abs() < 1e-12);
            prop_assert!(pxy.data()[i] >= 0.0);
        }
        for i in 0..sxy.len() {
            prop_assert!((sxy.data()[i] - syx.data()[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn silog_is_scale_invariant(seed in 0u64..1000, c in 0.5..1.5f64) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let gt = Array::uniform(&[4, 4], 1.0, 50.0, &mut r);
        let pred = Array::uniform(&[4, 4], 1.0, 50.0, &mut r);
        let cfg = EvalConfig::unscaled();
        let a = depth_metrics(&pred, &gt, &cfg).unwrap();
        let b = depth_metrics(&pred.map(|v| v * c), &gt, &cfg).unwrap();
        prop_assert!((a.silog - b.silog).abs() < 1e-9 * a.silog.max(1.0));
        prop_assert!(a.delta1 <= a.delta2 && a.delta2 <= a.delta3);
        prop_assert!(a.abs_rel >= 0.0 && a.rmse >= 0.0 && a.sq_rel >= 0.0);
    }

    #[test]
    fn abs_rel_is_not_scale_invariant(g in 1.0..50.0f64, c in 1.1..1.5f64) {
        let gt = Array::full(&[1, 1], g);
        let cfg = EvalConfig::unscaled();
        let a = depth_metrics(&gt, &gt, &cfg).unwrap();
        let b = depth_metrics(&gt.map(|v| v * c), &gt, &cfg).unwrap();
        prop_assert_eq!(a.abs_rel, 0.0);
        prop_assert!((b.abs_rel - (c - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn single_pixel_metrics(p in 0.5..70.0f64, g in 0.5..70.0f64) {
        let m = depth_metrics(&Array::full(&[1, 1], p), &Array::full(&[1, 1], g), &EvalConfig::unscaled()).unwrap();
        prop_assert_eq!(m.abs_rel, (p - g).abs() / g);
        prop_assert_eq!(m.sq_rel, (p - g) * (p - g) / g);
        prop_assert_eq!(m.rmse, ((p - g) * (p - g)).sqrt());
        prop_assert_eq!(m.rmse_log, ((p.ln() - g.ln()) * (p.ln() - g.ln())).sqrt());
        prop_assert_eq!(m.delta1, f64::from(u8::from(p.max(g) / p.min(g) < 1.25)));
        prop_assert_eq!(m.n_pixels, 1);
    }

    #[test]
    fn adamw_without_decay_is_adam(seed in 0u64..1000, lr in 1e-5..1e-2f64) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let start = Array::uniform(&[10], -1.0, 1.0, &mut r);
        let adam = OptimConfig { kind: OptimKind::Adam, weight_decay: 0.0, ..OptimConfig::cnn() };
        let adamw = OptimConfig { kind: OptimKind::AdamW, ..adam.clone() };
        let (mut a, mut b) = (start.clone(), start);
        let (mut sa, mut sb) = (AdamState::for_shapes([a.shape()]), AdamState::for_shapes([b.shape()]));
        for _ in 0..20 {
            let grad = Array::uniform(&[10], -1.0, 1.0, &mut r);
            optimizer_step(&mut [&mut a], std::slice::from_ref(&grad), &mut sa, &adam, lr).unwrap();
            optimizer_step(&mut [&mut b], &[grad], &mut sb, &adamw, lr).unwrap();
        }
        prop_assert_eq!(a, b);
    }

    #[test]
    fn schedule_steps_once(epoch in 0usize..40) {
        let cfg = OptimConfig::cnn();
        let lr = lr_schedule(epoch, &cfg);
        prop_assert_eq!(lr, if epoch < 15 { 1e-4 } else { 1e-4 / 10.0 });
    }

    #[test]
    fn pgd_step_stays_in_ball_and_box(seed in 0u64..1000, eps in 0.0..32.0f64, steps in 1usize..6) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let x0 = Array::uniform(&[48], 0.0, 1.0, &mut r);
        let mut x = x0.data().to_vec();
        for _ in 0..steps {
            let grad = Array::uniform(&[48], -1.0, 1.0, &mut r);
            pgd_step(&mut x, x0.data(), grad.data(), eps, 1.0, true);
        }
        for (a, b) in x.iter().zip(x0.data()) {
            prop_assert!((a - b).abs() <= eps / 255.0 + 1e-15);
            prop_assert!((0.0..=1.0).contains(a));
        }
        if eps == 0.0 {
            prop_assert_eq!(&x[..], x0.data());
        }
    }

    #[test]
    fn config_round_trip(count in 1usize..50, seed in 0u64..10_000, lr in 1e-6..1e-2f64, epochs in 1usize..40, conv in any::<bool>()) {
        let arch = if conv { Arch::Conv } else { Arch::Transformer };
        let mut cfg = RunConfig::desk(arch, Arch::Transformer);
        cfg.data = DataSource::Synth { count, seed };
        cfg.seed = seed;
        cfg.optim.lr = lr;
        cfg.optim.epochs = epochs;
        let back = RunConfig::from_kv(&KeyValues::parse(&cfg.to_kv().to_text()).unwrap()).unwrap();
        prop_assert_eq!(back, cfg);
    }

    #[test]
    fn synthetic_ground_truth_is_consistent(seed in 0u64..1000) {
        let scene = SceneConfig::desk().with_seed(seed);
        let t = synth_scene(&scene).unwrap();
        let depth = t.depth.as_ref().unwrap();
        let k = t.intrinsics.unwrap();
        for (p, &d) in depth.data().iter().enumerate() {
            let (x, y) = ((p % 64) as f64, (p / 64) as f64);
            let q = k.project(k.backproject(x, y, d)).unwrap();
            prop_assert!((q[0] - x).abs() < 1e-9 && (q[1] - y).abs() < 1e-9);
            let back = scene.motion.inverse().apply(scene.motion.apply(k.backproject(x, y, d)));
            let orig = k.backproject(x, y, d);
            prop_assert!((0..3).all(|i| (back[i] - orig[i]).abs() < 1e-9));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn corruptions_keep_range_and_shape(kind in 0usize..15, severity in 1u8..=5, seed in 0u64..1000) {
        let kind = Corruption::ALL[kind];
        let spec = CorruptionSpec::new(kind, severity).unwrap();
        let x = image(&[3, 16, 24], seed);
        let a = corrupt(&x, &spec, seed).unwrap();
        prop_assert_eq!(a.shape(), x.shape());
        prop_assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert_eq!(&a, &corrupt(&x, &spec, seed).unwrap());
        if !kind.is_stochastic() {
            prop_assert_eq!(&a, &corrupt(&x, &spec, seed + 1).unwrap());
        }
    }
}

#[test]
fn fan_out_accumulates() {
    let g = Graph::new();
    let v = image(&[7], 3);
    let x = g.param(v.clone());
    let loss = x.sin().unwrap().sum().unwrap().add(&x.square().unwrap().sum().unwrap()).unwrap();
    let grads = g.backward(&loss).unwrap();
    let dx = grads.get(&x).unwrap();
    for (d, x) in dx.data().iter().zip(v.data()) {
        assert!((d - (x.cos() + 2.0 * x)).abs() < 1e-14);
    }
}

#[test]
fn forward_is_deterministic() {
    let run = || {
        let g = Graph::new();
        let x = g.constant(image(&[3, 8, 8], 5));
        let y = g.constant(image(&[3, 8, 8], 6));
        photometric_error(&x, &y, &LossConfig::default()).unwrap().to_array()
    };
    assert_eq!(run(), run());
}
