//! L∞ projected-gradient attacks in 8-bit pixel units: ascent on the
//! self-supervised training loss, and descent toward flipped predictions.

use std::fmt;
use std::str::FromStr;

use log::{info, warn};

use crate::error::{Error, Result};
use crate::ndiff::{Array, Graph};
use crate::nets::checkpoint::ModelBundle;
use crate::nets::{disp_to_depth, DepthNet, DepthRange, Session};
use crate::pipeline::ImageTriplet;
use crate::train::{batch_forward, IntrinsicsMode, SampleImages};

/// Attack strengths evaluated with the training-loss attack.
pub const PGD_EPSILONS: [f64; 8] = [0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0];
/// Attack strengths evaluated with the flip attacks.
pub const FLIP_EPSILONS: [f64; 3] = [1.0, 2.0, 4.0];

/// `min(ε + 4, ⌈1.25 ε⌉)`, rounded up; 0 for `ε ≤ 0`.
pub fn pgd_iterations(epsilon: f64) -> usize {
    if !(epsilon > 0.0) {
        return 0;
    }
    (epsilon + 4.0).min((1.25 * epsilon).ceil()).ceil() as usize
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FlipDirection {
    Horizontal,
    Vertical,
}

impl FlipDirection {
    pub fn code(self) -> &'static str {
        match self {
            FlipDirection::Horizontal => "flip_h",
            FlipDirection::Vertical => "flip_v",
        }
    }

    /// Mirror a `[.., H, W]` array.
    pub fn apply(self, a: &Array) -> Array {
        let axis = a.ndim() - if self == FlipDirection::Horizontal { 1 } else { 2 };
        a.flip_axis(axis)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossSource {
    TrainingLoss,
    Flip(FlipDirection),
}

impl fmt::Display for LossSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LossSource::TrainingLoss => f.write_str("pgd"),
            LossSource::Flip(d) => f.write_str(d.code()),
        }
    }
}

/// `pgd`, `flip-h`/`flip_h` or `flip-v`/`flip_v`.
impl FromStr for LossSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "pgd" => Ok(LossSource::TrainingLoss),
            "flip_h" => Ok(LossSource::Flip(FlipDirection::Horizontal)),
            "flip_v" => Ok(LossSource::Flip(FlipDirection::Vertical)),
            other => Err(Error::InvalidArgument(format!("unknown attack {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AttackConfig {
    /// L∞ radius in 1/255 units.
    pub epsilon: f64,
    /// Step length in 1/255 units.
    pub step_size: f64,
    pub iterations: usize,
    pub loss_source: LossSource,
}

impl AttackConfig {
    /// Unit step and the standard iteration schedule. Strengths outside
    /// the evaluated sets only log a warning.
    pub fn new(epsilon: f64, loss_source: LossSource) -> Result<Self> {
        if !(epsilon >= 0.0) || !epsilon.is_finite() {
            return Err(Error::InvalidArgument(format!("attack strength {epsilon} must be finite and non-negative")));
        }
        let known: &[f64] = match loss_source {
            LossSource::TrainingLoss => &PGD_EPSILONS,
            LossSource::Flip(_) => &FLIP_EPSILONS,
        };
        if epsilon > 0.0 && !known.contains(&epsilon) {
            warn!("{loss_source} attack at unusual strength {epsilon}");
        }
        Ok(Self { epsilon, step_size: 1.0, iterations: pgd_iterations(epsilon), loss_source })
    }

    pub fn pgd(epsilon: f64) -> Result<Self> {
        Self::new(epsilon, LossSource::TrainingLoss)
    }

    pub fn flip(direction: FlipDirection, epsilon: f64) -> Result<Self> {
        Self::new(epsilon, LossSource::Flip(direction))
    }
}

/// One signed-gradient step followed by projection onto the ε-ball around
/// `x0` and the `[0, 1]` box. `ascend` picks the direction.
pub fn pgd_step(x: &mut [f64], x0: &[f64], grad: &[f64], epsilon: f64, step_size: f64, ascend: bool) {
    let (eps, step) = (epsilon / 255.0, step_size / 255.0);
    let dir = if ascend { 1.0 } else { -1.0 };
    for ((v, &o), &g) in x.iter_mut().zip(x0).zip(grad) {
        let s = if g > 0.0 { 1.0 } else if g < 0.0 { -1.0 } else { 0.0 };
        *v = (*v + dir * step * s).clamp(o - eps, o + eps).clamp(0.0, 1.0);
    }
}

/// Result of an attack on one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct AttackOutcome {
    /// Best iterate found, in the input order.
    pub images: Vec<Array>,
    pub initial_loss: f64,
    /// Loss at [`AttackOutcome::images`].
    pub best_loss: f64,
    /// Loss at every visited iterate, starting with the clean input.
    pub trace: Vec<f64>,
}

/// Projected signed-gradient ascent (or descent) of `loss_grad` over a set
/// of images. The best iterate is kept, so the outcome never scores worse
/// than the clean input.
pub fn pgd<F>(inputs: &[Array], cfg: &AttackConfig, ascend: bool, mut loss_grad: F) -> Result<AttackOutcome>
where
    F: FnMut(&[Array]) -> Result<(f64, Vec<Array>)>,
{
    let mut x: Vec<Array> = inputs.to_vec();
    let mut trace = Vec::with_capacity(cfg.iterations + 1);
    let (initial_loss, mut grads) = loss_grad(&x)?;
    trace.push(initial_loss);
    let mut best = (initial_loss, x.clone());
    let better = |a: f64, b: f64| if ascend { a > b } else { a < b };
    for _ in 0..cfg.iterations {
        if grads.len() != x.len() {
            return Err(Error::shape("pgd", format!("{} gradients for {} images", grads.len(), x.len())));
        }
        for ((xi, x0), g) in x.iter_mut().zip(inputs).zip(&grads) {
            if g.shape() != xi.shape() {
                return Err(Error::shape("pgd", format!("gradient {:?} vs image {:?}", g.shape(), xi.shape())));
            }
            pgd_step(xi.data_mut(), x0.data(), g.data(), cfg.epsilon, cfg.step_size, ascend);
        }
        let (loss, g) = loss_grad(&x)?;
        trace.push(loss);
        if better(loss, best.0) {
            best = (loss, x.clone());
        }
        grads = g;
    }
    Ok(AttackOutcome { images: best.1, initial_loss, best_loss: best.0, trace })
}

/// Training loss of `bundle` on one triplet and its gradient with respect
/// to every present frame (`[prev?, target, next?]` order). Networks run in
/// inference mode. A missing neighbour leaves only the feasible pair.
pub fn training_loss_grad(bundle: &ModelBundle, triplet: &ImageTriplet, frames: &[Array], loss_cfg: &crate::losses::LossConfig) -> Result<(f64, Vec<Array>)> {
    let mut t = triplet.clone();
    let mut it = frames.iter().cloned();
    if t.prev.is_some() {
        t.prev = it.next();
    }
    t.target = it.next().ok_or_else(|| Error::InvalidArgument("no target frame".into()))?;
    if t.next.is_some() {
        t.next = it.next();
    }
    let g = Graph::new();
    let ds = Session::eval(&g, &bundle.depth.params);
    let es = Session::eval(&g, &bundle.ego.params);
    let leaves = SampleImages::leaves(&g, &t);
    let mode = if bundle.learn_intrinsics { IntrinsicsMode::Learned } else { IntrinsicsMode::Given };
    let fwd = batch_forward(&ds, &es, &bundle.depth, &bundle.ego, &[leaves], &[t.intrinsics], mode, loss_cfg)?;
    let grads = g.backward(&fwd.loss)?;
    let order = leaves.prev.into_iter().chain([leaves.target]).chain(leaves.next);
    Ok((fwd.loss.item(), order.map(|l| grads.get_or_zeros(&l)).collect()))
}

/// Frames of `triplet` in `[prev?, target, next?]` order.
pub fn triplet_frames(triplet: &ImageTriplet) -> Vec<Array> {
    triplet.prev.iter().chain([&triplet.target]).chain(triplet.next.iter()).cloned().collect()
}

/// PGD ascent on the training loss; returns the perturbed triplet.
pub fn pgd_attack(
    bundle: &ModelBundle,
    triplet: &ImageTriplet,
    cfg: &AttackConfig,
    loss_cfg: &crate::losses::LossConfig,
) -> Result<(ImageTriplet, AttackOutcome)> {
    info!("pgd eps {}: {} iterations", cfg.epsilon, cfg.iterations);
    let frames = triplet_frames(triplet);
    let out = pgd(&frames, cfg, true, |x| training_loss_grad(bundle, triplet, x, loss_cfg))?;
    let mut adv = triplet.clone();
    let mut it = out.images.iter().cloned();
    if adv.prev.is_some() {
        adv.prev = it.next();
    }
    adv.target = it.next().expect("target present");
    if adv.next.is_some() {
        adv.next = it.next();
    }
    Ok((adv, out))
}

/// RMSE between the depth predicted for `image` and `target`, plus the
/// gradient of the mean squared error (same sign as the RMSE gradient).
pub fn depth_rmse_grad(depth: &DepthNet, image: &Array, target: &Array, range: DepthRange) -> Result<(f64, Array)> {
    let &[c, h, w] = image.shape() else {
        return Err(Error::shape("flip attack", format!("image {:?} is not CxHxW", image.shape())));
    };
    let g = Graph::new();
    let s = Session::eval(&g, &depth.params);
    let x = g.param(image.clone());
    let disp = depth.forward(&s, &x.reshape(&[1, c, h, w])?)?;
    let pred = disp_to_depth(&disp[0].reshape(&[h, w])?, range)?;
    let mse = pred.sub(&g.constant(target.clone()))?.square()?.mean()?;
    let grads = g.backward(&mse)?;
    Ok((mse.item().sqrt(), grads.get_or_zeros(&x)))
}

/// Descend the RMSE toward the mirrored clean prediction.
pub fn flip_attack(depth: &DepthNet, image: &Array, cfg: &AttackConfig, range: DepthRange) -> Result<(Array, AttackOutcome)> {
    let LossSource::Flip(direction) = cfg.loss_source else {
        return Err(Error::InvalidArgument("flip_attack needs a flip loss source".into()));
    };
    info!("{} eps {}: {} iterations", direction.code(), cfg.epsilon, cfg.iterations);
    let target = direction.apply(&depth.predict_depth(image, range)?);
    let out = pgd(std::slice::from_ref(image), cfg, false, |x| {
        let (l, g) = depth_rmse_grad(depth, &x[0], &target, range)?;
        Ok((l, vec![g]))
    })?;
    Ok((out.images[0].clone(), out))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iteration_schedule() {
        let got: Vec<usize> = PGD_EPSILONS.iter().map(|&e| pgd_iterations(e)).collect();
        assert_eq!(got, vec![1, 1, 2, 3, 5, 10, 20, 36]);
        assert_eq!(pgd_iterations(0.0), 0);
    }

    #[test]
    fn step_respects_ball_and_box() {
        let x0 = [0.0, 0.5, 1.0, 0.2];
        let mut x = x0;
        for _ in 0..10 {
            pgd_step(&mut x, &x0, &[1.0, -1.0, 1.0, 0.0], 2.0, 1.0, true);
        }
        assert_eq!(x, [2.0 / 255.0, 0.5 - 2.0 / 255.0, 1.0, 0.2]);
    }

    #[test]
    fn linear_model_single_step_is_fgsm() {
        // loss = w · x, gradient w, one step of size eps = FGSM.
        let w = Array::from_vec(&[4], vec![0.3, -2.0, 0.0, 1.0]).unwrap();
        let x0 = Array::full(&[4], 0.5);
        let cfg = AttackConfig { epsilon: 4.0, step_size: 4.0, iterations: 1, loss_source: LossSource::TrainingLoss };
        let out = pgd(&[x0.clone()], &cfg, true, |x| {
            let l = x[0].data().iter().zip(w.data()).map(|(a, b)| a * b).sum();
            Ok((l, vec![w.clone()]))
        })
        .unwrap();
        let e = 4.0 / 255.0;
        assert_eq!(out.images[0].data(), &[0.5 + e, 0.5 - e, 0.5, 0.5 + e]);
    }

    #[test]
    fn zero_epsilon_is_identity() {
        let x0 = Array::full(&[3], 0.25);
        let cfg = AttackConfig::pgd(0.0).unwrap();
        let out = pgd(&[x0.clone()], &cfg, true, |_| Ok((1.0, vec![Array::ones(&[3])]))).unwrap();
        assert_eq!(out.images[0], x0);
    }

    #[test]
    fn attack_names() {
        assert_eq!("flip-h".parse::<LossSource>().unwrap(), LossSource::Flip(FlipDirection::Horizontal));
        assert_eq!("pgd".parse::<LossSource>().unwrap(), LossSource::TrainingLoss);
        assert!("fgsm".parse::<LossSource>().is_err());
    }
}
