//! Shared fixtures: the finite-difference gradient suite and the synthetic
//! overfit driver.

#![allow(dead_code)]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sfmk::eval::{evaluate_prediction, EvalConfig};
use sfmk::geometry::{warp_coordinates, Pose};
use sfmk::losses::{photometric_error, smoothness, ssim, LossConfig};
use sfmk::ndiff::check::{check_gradients, check_gradients_at, CheckConfig, CheckReport, Mismatch};
use sfmk::nets::{Arch, DepthNet, EgoNet, NetConfig, Session};
use sfmk::pipeline::{synth_scene, ImageTriplet, SceneConfig};
use sfmk::train::{batch_forward, IntrinsicsMode, OptimConfig, OptimKind, SampleImages, TrainConfig, Trainer};
use sfmk::{Array, Graph, Result, Tensor};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform in `[-1, 1]`.
pub fn rnd(shape: &[usize], seed: u64) -> Array {
    Array::uniform(shape, -1.0, 1.0, &mut rng(seed))
}

/// Uniform in `[0.5, 2]`.
pub fn pos(shape: &[usize], seed: u64) -> Array {
    Array::uniform(shape, 0.5, 2.0, &mut rng(seed))
}

/// Magnitudes in `[0.2, 1]` with alternating sign, clear of kinks at 0.
pub fn away_from_zero(shape: &[usize], seed: u64) -> Array {
    let base = Array::uniform(shape, 0.2, 1.0, &mut rng(seed));
    Array::from_fn(shape, |i| if i % 2 == 0 { base.data()[i] } else { -base.data()[i] })
}

/// `Σ w ⊙ t` with fixed pseudo-random weights, reducing any output to a
/// scalar that exercises every element.
pub fn wsum<'g>(t: &Tensor<'g>) -> Result<Tensor<'g>> {
    let w = rnd(&t.shape(), 99);
    t.mul_const(&w)?.sum()
}

pub type Case = Box<dyn Fn() -> Result<CheckReport>>;

macro_rules! case {
    ($name:expr, [$($input:expr),* $(,)?], |$g:ident, $x:ident| $body:expr) => {
        (
            $name,
            Box::new(move || {
                let inputs = vec![$($input),*];
                check_gradients(&inputs, CheckConfig::default(), |$g: &Graph, $x: &[Tensor<'_>]| {
                    let _ = $g;
                    $body
                })
            }) as Case,
        )
    };
}

/// One entry per differentiable primitive.
pub fn primitive_cases() -> Vec<(&'static str, Case)> {
    vec![
        case!("add", [rnd(&[2, 3], 1), rnd(&[2, 3], 2)], |g, x| wsum(&x[0].add(&x[1])?)),
        case!("sub", [rnd(&[2, 3], 1), rnd(&[2, 3], 2)], |g, x| wsum(&x[0].sub(&x[1])?)),
        case!("mul", [rnd(&[2, 3], 1), rnd(&[2, 3], 2)], |g, x| wsum(&x[0].mul(&x[1])?)),
        case!("div", [rnd(&[2, 3], 1), pos(&[2, 3], 2)], |g, x| wsum(&x[0].div(&x[1])?)),
        case!("neg", [rnd(&[5], 1)], |g, x| wsum(&x[0].neg()?)),
        case!("add_scalar", [rnd(&[5], 1)], |g, x| wsum(&x[0].add_scalar(0.3)?)),
        case!("mul_scalar", [rnd(&[5], 1)], |g, x| wsum(&x[0].mul_scalar(-1.7)?)),
        case!("mul_const", [rnd(&[2, 3], 1)], |g, x| wsum(&x[0].mul_const(&rnd(&[2, 3], 5))?)),
        case!("add_const", [rnd(&[2, 3], 1)], |g, x| wsum(&x[0].add_const(&rnd(&[2, 3], 5))?.square()?)),
        case!("powf", [pos(&[6], 1)], |g, x| wsum(&x[0].powf(1.7)?)),
        case!("square", [rnd(&[6], 1)], |g, x| wsum(&x[0].square()?)),
        case!("recip", [pos(&[6], 1)], |g, x| wsum(&x[0].recip()?)),
        case!("abs", [away_from_zero(&[6], 1)], |g, x| wsum(&x[0].abs()?)),
        case!("exp", [rnd(&[6], 1)], |g, x| wsum(&x[0].exp()?)),
        case!("log", [pos(&[6], 1)], |g, x| wsum(&x[0].log()?)),
        case!("sqrt", [pos(&[6], 1)], |g, x| wsum(&x[0].sqrt()?)),
        case!("sin", [rnd(&[6], 1)], |g, x| wsum(&x[0].sin()?)),
        case!("cos", [rnd(&[6], 1)], |g, x| wsum(&x[0].cos()?)),
        case!("sigmoid", [rnd(&[6], 1)], |g, x| wsum(&x[0].sigmoid()?)),
        case!("softplus", [rnd(&[6], 1)], |g, x| wsum(&x[0].softplus()?)),
        case!("relu", [away_from_zero(&[6], 1)], |g, x| wsum(&x[0].relu()?)),
        case!("elu", [away_from_zero(&[6], 1)], |g, x| wsum(&x[0].elu()?)),
        case!("gelu", [rnd(&[6], 1)], |g, x| wsum(&x[0].gelu()?)),
        case!("clamp", [Array::from_vec(&[6], vec![-0.9, -0.3, 0.1, 0.35, 0.8, -0.05]).unwrap()], |g, x| {
            wsum(&x[0].clamp(-0.5, 0.5)?)
        }),
        case!("expand_scalar", [rnd(&[1], 1)], |g, x| wsum(&x[0].expand_scalar(&[2, 3])?)),
        case!("scale_by", [rnd(&[2, 3], 1), rnd(&[1], 2)], |g, x| wsum(&x[0].scale_by(&x[1])?)),
        case!("add_bias", [rnd(&[2, 3, 4], 1), rnd(&[3], 2)], |g, x| wsum(&x[0].add_bias(&x[1], 1)?.square()?)),
        case!("mul_bias", [rnd(&[2, 3, 4], 1), rnd(&[3], 2)], |g, x| wsum(&x[0].mul_bias(&x[1], 1)?)),
        case!("reshape", [rnd(&[2, 6], 1)], |g, x| wsum(&x[0].reshape(&[3, 4])?)),
        case!("permute", [rnd(&[2, 3, 4], 1)], |g, x| wsum(&x[0].permute(&[2, 0, 1])?)),
        case!("transpose_last", [rnd(&[2, 3, 4], 1)], |g, x| wsum(&x[0].transpose_last()?)),
        case!("slice", [rnd(&[2, 5, 3], 1)], |g, x| wsum(&x[0].slice(1, 1, 4)?)),
        case!("concat", [rnd(&[2, 3], 1), rnd(&[2, 2], 2)], |g, x| wsum(&Tensor::concat(&[x[0], x[1]], 1)?)),
        case!("pad_replicate", [rnd(&[2, 3, 4], 1)], |g, x| wsum(&x[0].pad_replicate(1)?)),
        case!("sum", [rnd(&[2, 3], 1)], |g, x| x[0].sum()?.square()),
        case!("mean", [rnd(&[2, 3], 1)], |g, x| x[0].mean()?.square()),
        case!("sum_axis", [rnd(&[2, 3, 4], 1)], |g, x| wsum(&x[0].sum_axis(1)?)),
        case!("mean_axis", [rnd(&[2, 3, 4], 1)], |g, x| wsum(&x[0].mean_axis(0)?)),
        case!("min_axis", [rnd(&[2, 3, 4], 1)], |g, x| wsum(&x[0].min_axis(1)?)),
        case!("conv2d", [rnd(&[2, 2, 5, 5], 1), rnd(&[3, 2, 3, 3], 2), rnd(&[3], 3)], |g, x| {
            wsum(&x[0].conv2d(&x[1], Some(&x[2]), 2, 1)?)
        }),
        case!("conv2d_nobias", [rnd(&[1, 2, 4, 5], 1), rnd(&[2, 2, 2, 3], 2)], |g, x| {
            wsum(&x[0].conv2d(&x[1], None, 1, 0)?)
        }),
        case!("conv_transpose2d", [rnd(&[1, 2, 3, 3], 1), rnd(&[2, 3, 2, 2], 2), rnd(&[3], 3)], |g, x| {
            wsum(&x[0].conv_transpose2d(&x[1], Some(&x[2]), 2, 0)?)
        }),
        case!("avg_pool2d", [rnd(&[1, 2, 4, 6], 1)], |g, x| wsum(&x[0].avg_pool2d(2, 2)?)),
        case!("resize_bilinear", [rnd(&[1, 2, 3, 4], 1)], |g, x| wsum(&x[0].resize_bilinear(5, 7)?)),
        case!("upsample2x", [rnd(&[1, 2, 3, 4], 1)], |g, x| wsum(&x[0].upsample2x()?)),
        case!("matmul", [rnd(&[3, 4], 1), rnd(&[4, 2], 2)], |g, x| wsum(&x[0].matmul(&x[1])?)),
        case!("matmul_shared", [rnd(&[2, 3, 4], 1), rnd(&[4, 2], 2)], |g, x| wsum(&x[0].matmul(&x[1])?)),
        case!("matmul_batched", [rnd(&[2, 3, 4], 1), rnd(&[2, 4, 2], 2)], |g, x| wsum(&x[0].matmul(&x[1])?)),
        case!("softmax", [rnd(&[2, 5], 1)], |g, x| wsum(&x[0].softmax()?)),
        case!("layer_norm", [rnd(&[2, 3, 5], 1), pos(&[5], 2), rnd(&[5], 3)], |g, x| {
            wsum(&x[0].layer_norm(&x[1], &x[2], 1e-6)?)
        }),
        case!("batch_norm_train", [rnd(&[2, 3, 2, 2], 1), pos(&[3], 2), rnd(&[3], 3)], |g, x| {
            wsum(&x[0].batch_norm_train(&x[1], &x[2], 1e-5)?.0)
        }),
        case!("batch_norm_eval", [rnd(&[2, 3, 2, 2], 1), pos(&[3], 2), rnd(&[3], 3)], |g, x| {
            wsum(&x[0].batch_norm_eval(&x[1], &x[2], &rnd(&[3], 4), &pos(&[3], 5), 1e-5)?)
        }),
        case!("sample_bilinear", [rnd(&[2, 4, 5], 1), interior_coords(3, 3, 4, 5, 2)], |g, x| {
            wsum(&x[0].sample_bilinear(&x[1])?)
        }),
    ]
}

/// Coordinates `[2, h, w]` strictly inside a `hs × ws` image and away from
/// integer grid lines.
pub fn interior_coords(h: usize, w: usize, hs: usize, ws: usize, seed: u64) -> Array {
    let mut r = rng(seed);
    let u = Array::uniform(&[2, h, w], 0.1, 0.9, &mut r);
    let cells = Array::uniform(&[2, h, w], 0.0, 1.0, &mut r);
    Array::from_fn(&[2, h, w], |i| {
        let n = if i < h * w { ws - 1 } else { hs - 1 };
        (cells.data()[i] * n as f64).floor().min(n as f64 - 1.0) + u.data()[i]
    })
}

/// Geometry and loss functions built on the primitives.
pub fn composite_cases() -> Vec<(&'static str, Case)> {
    let k = Array::from_vec(&[4], vec![5.3, 4.9, 2.6, 1.9]).unwrap();
    let pose = Array::from_vec(&[6], vec![0.02, -0.03, 0.01, 0.1, -0.05, 0.2]).unwrap();
    let depth = Array::uniform(&[4, 5], 2.0, 6.0, &mut rng(7));
    vec![
        case!("warp_coordinates", [depth.clone(), k.clone(), pose.clone()], |g, x| {
            wsum(&warp_coordinates(&x[0], &x[1], &x[1], &x[2])?.coords)
        }),
        case!("bilinear_sample/coords", [interior_coords(3, 4, 5, 6, 3)], |g, x| {
            wsum(&g.constant(rnd(&[3, 5, 6], 4)).sample_bilinear(&x[0])?)
        }),
        case!("ssim", [Array::uniform(&[3, 5, 6], 0.1, 0.9, &mut rng(1)), Array::uniform(&[3, 5, 6], 0.1, 0.9, &mut rng(2))], |g, x| {
            wsum(&ssim(&x[0], &x[1])?)
        }),
        case!("photometric_error", [Array::uniform(&[3, 5, 6], 0.1, 0.9, &mut rng(1)), Array::uniform(&[3, 5, 6], 0.1, 0.9, &mut rng(2))], |g, x| {
            wsum(&photometric_error(&x[0], &x[1], &LossConfig::default())?)
        }),
        case!("smoothness", [pos(&[1, 6, 7], 1)], |g, x| {
            smoothness(&x[0], &Array::uniform(&[3, 6, 7], 0.0, 1.0, &mut rng(2)))
        }),
    ]
}

/// Desk networks at 16×32 with the pose layer moved off zero so the
/// auto-mask has no ties.
pub fn small_nets(depth_arch: Arch, ego_arch: Arch) -> Result<(DepthNet, EgoNet, ImageTriplet)> {
    let net = NetConfig { height: 16, width: 32, ..NetConfig::desk() };
    let depth = DepthNet::new(depth_arch, net.clone(), 3)?;
    let mut ego = EgoNet::new(ego_arch, net, 4)?;
    let mut r = rng(11);
    for p in ego.params.params_mut() {
        if p.name.contains("pose2") {
            p.value = Array::randn(p.value.shape(), 0.05, &mut r);
        }
    }
    let motion = Pose { rotation: [0.0, 0.01, 0.0], translation: [0.06, 0.02, 0.18] };
    let scene = synth_scene(&SceneConfig::sized(16, 32).with_motion(motion))?;
    Ok((depth, ego, scene))
}

fn e2e_loss(depth: &DepthNet, ego: &EgoNet, t: &ImageTriplet, grads: bool) -> Result<(f64, Vec<Array>, Vec<Array>)> {
    let g = Graph::new();
    // Parameters differentiable, batch norm on running statistics.
    let ds = Session::new(&g, &depth.params, false, true);
    let es = Session::new(&g, &ego.params, false, true);
    let samples = [SampleImages::constants(&g, t)];
    let fwd = batch_forward(&ds, &es, depth, ego, &samples, &[t.intrinsics], IntrinsicsMode::Given, &LossConfig::default())?;
    let loss = fwd.loss.item();
    if !grads {
        return Ok((loss, vec![], vec![]));
    }
    let gr = g.backward(&fwd.loss)?;
    Ok((loss, ds.gradients(&gr), es.gradients(&gr)))
}

/// Total loss through both networks: parameter gradients at a few
/// coordinates of every tensor, plus input-image gradients.
pub fn total_loss_case(depth_arch: Arch, ego_arch: Arch) -> Result<CheckReport> {
    let cfg = CheckConfig::default();
    let (mut depth, mut ego, scene) = small_nets(depth_arch, ego_arch)?;
    let (_, dg, eg) = e2e_loss(&depth, &ego, &scene, true)?;
    let mut report = CheckReport::default();
    let mut r = rng(5);
    for which in 0..2 {
        let n = if which == 0 { depth.params.len() } else { ego.params.len() };
        for i in 0..n {
            let len = if which == 0 { depth.params.params()[i].value.len() } else { ego.params.params()[i].value.len() };
            for _ in 0..2 {
                let j = rand::Rng::random_range(&mut r, 0..len);
                let set = |d: &mut DepthNet, e: &mut EgoNet, v: Option<f64>| -> f64 {
                    let ps = if which == 0 { &mut d.params } else { &mut e.params };
                    let slot = &mut ps.params_mut()[i].value.data_mut()[j];
                    let old = *slot;
                    if let Some(v) = v {
                        *slot = v;
                    }
                    old
                };
                let orig = set(&mut depth, &mut ego, None);
                set(&mut depth, &mut ego, Some(orig + cfg.step));
                let fp = e2e_loss(&depth, &ego, &scene, false)?.0;
                set(&mut depth, &mut ego, Some(orig - cfg.step));
                let fm = e2e_loss(&depth, &ego, &scene, false)?.0;
                set(&mut depth, &mut ego, Some(orig));
                let numeric = (fp - fm) / (2.0 * cfg.step);
                let analytic = if which == 0 { dg[i].data()[j] } else { eg[i].data()[j] };
                let err = (analytic - numeric).abs();
                report.checked += 1;
                report.max_abs_err = report.max_abs_err.max(err);
                if err > cfg.atol + cfg.rtol * numeric.abs() {
                    report.mismatches.push(Mismatch { input: which, index: i * 1_000_000 + j, analytic, numeric });
                }
            }
        }
    }
    // Image gradients at a sample of pixels of each frame.
    let frames = [scene.prev.clone().unwrap(), scene.target.clone(), scene.next.clone().unwrap()];
    let coords: Vec<Vec<usize>> = frames.iter().map(|f| (0..f.len()).step_by(37).collect()).collect();
    let img = check_gradients_at(&frames, &coords, cfg, |g, x| {
        let ds = Session::eval(g, &depth.params);
        let es = Session::eval(g, &ego.params);
        let s = SampleImages { prev: Some(x[0]), target: x[1], next: Some(x[2]) };
        Ok(batch_forward(&ds, &es, &depth, &ego, &[s], &[scene.intrinsics], IntrinsicsMode::Given, &LossConfig::default())?.loss)
    })?;
    report.checked += img.checked;
    report.max_abs_err = report.max_abs_err.max(img.max_abs_err);
    report.mismatches.extend(img.mismatches);
    Ok(report)
}

/// Outcome of an overfit run on one scene.
#[derive(Debug, Clone)]
pub struct Overfit {
    pub steps: usize,
    pub loss: f64,
    pub abs_rel: f64,
    pub fx: f64,
    pub trainer: Trainer,
}

/// AdamW at 1e-4 on one desk-sized scene, evaluating every `every` steps
/// and stopping early once `done(loss, abs_rel)` holds.
pub fn overfit(
    scene: &ImageTriplet,
    depth_arch: Arch,
    ego_arch: Arch,
    mode: IntrinsicsMode,
    max_steps: usize,
    every: usize,
    done: impl Fn(f64, f64) -> bool,
) -> Result<Overfit> {
    let net = NetConfig::desk();
    let optim = OptimConfig { kind: OptimKind::AdamW, lr: 1e-4, batch_size: 1, ..OptimConfig::transformer() };
    let mut trainer = Trainer::new(
        DepthNet::new(depth_arch, net.clone(), 0)?,
        EgoNet::new(ego_arch, net, 1)?,
        TrainConfig { intrinsics: mode, ..TrainConfig::new(optim) },
    )?;
    let gt = scene.depth.as_ref().expect("synthetic scenes carry depth");
    for step in 1..=max_steps {
        let stats = trainer.step(&[scene], 1e-4)?;
        if step % every == 0 || step == max_steps {
            let pred = trainer.depth.predict_depth(&scene.target, trainer.cfg.loss.depth_range)?;
            let abs_rel = evaluate_prediction(&pred, gt, &EvalConfig::default())?.abs_rel;
            if done(stats.loss, abs_rel) || step == max_steps {
                let fx = match mode {
                    IntrinsicsMode::Learned => trainer.predict_intrinsics(scene)?[0],
                    IntrinsicsMode::Given => scene.intrinsics.expect("given").fx,
                };
                return Ok(Overfit { steps: step, loss: stats.loss, abs_rel, fx, trainer });
            }
        }
    }
    unreachable!("loop returns at max_steps")
}
