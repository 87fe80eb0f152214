//! Appearance-based training objective: SSIM + L1 photometric error,
//! per-pixel minimum reprojection with auto-masking, edge-aware smoothness
//! and the multi-scale total loss.
//!
//! Images are `[C, H, W]` tensors; per-pixel maps are `[H, W]`.

use crate::error::{Error, Result};
use crate::geometry::warp_coordinates;
use crate::ndiff::{Array, Tensor};
use crate::nets::{disp_to_depth, DepthRange};

pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

/// Penalty added to the reprojection error of out-of-view pixels so the
/// per-pixel minimum prefers a source that actually sees the point.
const INVALID_PENALTY: f64 = 1e3;

#[derive(Clone, Debug, PartialEq)]
pub struct LossConfig {
    pub alpha: f64,
    pub smooth_weight: f64,
    pub num_scales: usize,
    /// Side of the square mean-pooling window used for SSIM statistics.
    pub ssim_window: usize,
    pub c1: f64,
    pub c2: f64,
    pub depth_range: DepthRange,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha: 0.85,
            smooth_weight: 1e-3,
            num_scales: 4,
            ssim_window: 3,
            c1: SSIM_C1,
            c2: SSIM_C2,
            depth_range: DepthRange::default(),
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        if self.num_scales == 0 {
            return Err(Error::Config("num_scales must be at least 1".into()));
        }
        if !(self.smooth_weight >= 0.0) {
            return Err(Error::Config(format!("negative smoothness weight {}", self.smooth_weight)));
        }
        if self.ssim_window == 0 || self.ssim_window % 2 == 0 {
            return Err(Error::Config(format!("ssim window {} must be odd", self.ssim_window)));
        }
        Ok(())
    }
}

fn same_shape(op: &'static str, a: &Tensor<'_>, b: &Tensor<'_>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn chw(op: &'static str, t: &Tensor<'_>) -> Result<[usize; 3]> {
    match t.shape().as_slice() {
        &[c, h, w] => Ok([c, h, w]),
        s => Err(Error::shape(op, format!("expected CxHxW, got {s:?}"))),
    }
}

/// Per-pixel SSIM map with the default 3×3 window and constants.
pub fn ssim<'g>(x: &Tensor<'g>, y: &Tensor<'g>) -> Result<Tensor<'g>> {
    ssim_with(x, y, &LossConfig::default())
}

/// Per-pixel SSIM of two `[C, H, W]` images. Local statistics come from
/// mean pooling over an edge-replicated border, so the map has the input
/// shape.
pub fn ssim_with<'g>(x: &Tensor<'g>, y: &Tensor<'g>, cfg: &LossConfig) -> Result<Tensor<'g>> {
    same_shape("ssim", x, y)?;
    let shape = chw("ssim", x)?;
    let k = cfg.ssim_window;
    let pad = k / 2;
    let pool = |t: &Tensor<'g>| t.avg_pool2d(k, 1);
    let xp = x.pad_replicate(pad)?;
    let yp = y.pad_replicate(pad)?;
    let mu_x = pool(&xp)?;
    let mu_y = pool(&yp)?;
    let mu_xx = mu_x.square()?;
    let mu_yy = mu_y.square()?;
    let mu_xy = mu_x.mul(&mu_y)?;
    let sigma_x = pool(&xp.square()?)?.sub(&mu_xx)?;
    let sigma_y = pool(&yp.square()?)?.sub(&mu_yy)?;
    let sigma_xy = pool(&xp.mul(&yp)?)?.sub(&mu_xy)?;
    let num = mu_xy
        .mul_scalar(2.0)?
        .add_scalar(cfg.c1)?
        .mul(&sigma_xy.mul_scalar(2.0)?.add_scalar(cfg.c2)?)?;
    let den = mu_xx
        .add(&mu_yy)?
        .add_scalar(cfg.c1)?
        .mul(&sigma_x.add(&sigma_y)?.add_scalar(cfg.c2)?)?;
    num.div(&den)?.reshape(&shape)
}

/// Per-pixel photometric error `α/2·(1 − SSIM) + (1 − α)·|t − s|`, both
/// terms averaged over channels, `1 − SSIM` clamped to `[0, 2]`. Returns
/// `[H, W]`.
pub fn photometric_error<'g>(target: &Tensor<'g>, synth: &Tensor<'g>, cfg: &LossConfig) -> Result<Tensor<'g>> {
    same_shape("photometric_error", target, synth)?;
    chw("photometric_error", target)?;
    let l1 = target.sub(synth)?.abs()?.mean_axis(0)?;
    if cfg.alpha == 0.0 {
        return Ok(l1);
    }
    let dssim = ssim_with(target, synth, cfg)?.neg()?.add_scalar(1.0)?.clamp(0.0, 2.0)?.mean_axis(0)?;
    dssim.mul_scalar(cfg.alpha / 2.0)?.add(&l1.mul_scalar(1.0 - cfg.alpha)?)
}

/// Per-pixel auto-mask and the masked reprojection loss of one scale.
#[derive(Debug)]
pub struct Reprojection<'g> {
    pub loss: Tensor<'g>,
    /// `[H, W]` 0/1 mask of pixels that contributed.
    pub mask: Array,
}

/// Minimum reprojection error over the sources with auto-masking.
///
/// A pixel contributes when its best warped error does not exceed the best
/// error of the unwarped sources and at least one source sees it. Ties
/// count as contributing, so an identity-initialised pose still receives
/// gradient. The loss is the mean over all pixels of the masked error and
/// is exactly 0 when the mask is empty.
pub fn min_reprojection_with_automask<'g>(
    target: &Tensor<'g>,
    synths: &[Tensor<'g>],
    sources: &[Tensor<'g>],
    masks: &[Array],
    cfg: &LossConfig,
) -> Result<Reprojection<'g>> {
    if synths.is_empty() {
        return Err(Error::InvalidArgument("no source frames".into()));
    }
    if synths.len() != sources.len() || synths.len() != masks.len() {
        return Err(Error::InvalidArgument(format!(
            "{} synthesized, {} sources, {} masks",
            synths.len(),
            sources.len(),
            masks.len()
        )));
    }
    let [_, h, w] = chw("min_reprojection", target)?;
    let mut warped = Vec::with_capacity(synths.len());
    let mut identity = Array::full(&[h, w], f64::INFINITY);
    let target_const = target.detach();
    for ((synth, source), valid) in synths.iter().zip(sources).zip(masks) {
        if valid.shape() != [h, w] {
            return Err(Error::shape("min_reprojection", format!("mask {:?}", valid.shape())));
        }
        let penalty = valid.map(|v| if v > 0.0 { 0.0 } else { INVALID_PENALTY });
        warped.push(photometric_error(target, synth, cfg)?.add_const(&penalty)?.reshape(&[1, h, w])?);
        let id = photometric_error(&target_const, &source.detach(), cfg)?.value();
        identity = identity.zip_map(&id, f64::min)?;
    }
    let l_warped = Tensor::concat(&warped, 0)?.min_axis(0)?;
    let any_valid = masks
        .iter()
        .skip(1)
        .try_fold(masks[0].clone(), |acc, m| acc.zip_map(m, f64::max))?;
    let lw = l_warped.value();
    let mask = Array::from_fn(&[h, w], |i| {
        let keep = lw.data()[i] <= identity.data()[i] && any_valid.data()[i] > 0.0;
        if keep {
            1.0
        } else {
            0.0
        }
    });
    let loss = l_warped.mul_const(&mask)?.mean()?;
    Ok(Reprojection { loss, mask })
}

/// Edge-aware smoothness of a disparity map (`[H, W]`, `[1, H, W]` or
/// `[1, 1, H, W]`) against a `[C, H, W]` image. The disparity is divided by
/// its mean; x and y terms are averaged separately and summed.
pub fn smoothness<'g>(disp: &Tensor<'g>, image: &Array) -> Result<Tensor<'g>> {
    let ds = disp.shape();
    let (h, w) = (ds[ds.len() - 2], ds[ds.len() - 1]);
    if ds.iter().rev().skip(2).any(|&e| e != 1) {
        return Err(Error::shape("smoothness", format!("disparity {ds:?}")));
    }
    let &[c, ih, iw] = image.shape() else {
        return Err(Error::shape("smoothness", format!("image {:?} is not CxHxW", image.shape())));
    };
    if (ih, iw) != (h, w) {
        return Err(Error::shape("smoothness", format!("disparity {h}x{w} vs image {ih}x{iw}")));
    }
    let d = disp.reshape(&[h, w])?;
    let norm = d.div(&d.mean()?.add_scalar(1e-7)?.expand_scalar(&[h, w])?)?;
    let edge_weight = |dx: usize, dy: usize| {
        let (hh, ww) = (h - dy, w - dx);
        Array::from_fn(&[hh, ww], |p| {
            let (i, j) = (p / ww, p % ww);
            let mut s = 0.0;
            for ch in 0..c {
                let a = image.at(&[ch, i, j]);
                let b = image.at(&[ch, i + dy, j + dx]);
                s += (a - b).abs();
            }
            (-s / c as f64).exp()
        })
    };
    let mut total = d.graph().constant(Array::scalar(0.0));
    if w > 1 {
        let gx = norm.slice(1, 1, w)?.sub(&norm.slice(1, 0, w - 1)?)?.abs()?;
        total = total.add(&gx.mul_const(&edge_weight(1, 0))?.mean()?)?;
    }
    if h > 1 {
        let gy = norm.slice(0, 1, h)?.sub(&norm.slice(0, 0, h - 1)?)?.abs()?;
        total = total.add(&gy.mul_const(&edge_weight(0, 1))?.mean()?)?;
    }
    Ok(total)
}

/// One source frame of a training sample: its image and the target→source
/// pose.
#[derive(Clone, Copy, Debug)]
pub struct SourceView<'g> {
    pub image: Tensor<'g>,
    pub pose: Tensor<'g>,
}

/// Scalar loss plus per-scale diagnostics.
#[derive(Debug)]
pub struct LossBreakdown<'g> {
    pub total: Tensor<'g>,
    pub reprojection: Vec<f64>,
    pub smoothness: Vec<f64>,
    /// Fraction of pixels kept by the auto-mask at each scale.
    pub mask_fraction: Vec<f64>,
}

/// Multi-scale self-supervised loss for one target frame.
///
/// `disparities[s]` is the `[H/2^s, W/2^s]` (optionally with leading unit
/// axes) sigmoid output of scale `s`. Each is upscaled to full resolution
/// for the photometric term; smoothness uses the native-scale disparity and
/// an average-pooled target. `k` is `[fx, fy, cx, cy]`.
pub fn total_loss<'g>(
    disparities: &[Tensor<'g>],
    target: &Tensor<'g>,
    sources: &[SourceView<'g>],
    k: &Tensor<'g>,
    cfg: &LossConfig,
) -> Result<LossBreakdown<'g>> {
    cfg.validate()?;
    if disparities.len() < cfg.num_scales {
        return Err(Error::InvalidArgument(format!(
            "{} disparity scales, config needs {}",
            disparities.len(),
            cfg.num_scales
        )));
    }
    if sources.is_empty() {
        return Err(Error::InvalidArgument("no source frames".into()));
    }
    let [_, h, w] = chw("total_loss", target)?;
    let target_value = target.to_array();
    let g = target.graph();
    let mut total = g.constant(Array::scalar(0.0));
    let mut out = LossBreakdown {
        total,
        reprojection: Vec::new(),
        smoothness: Vec::new(),
        mask_fraction: Vec::new(),
    };
    let source_images: Vec<Tensor<'g>> = sources.iter().map(|s| s.image).collect();
    for (s, disp) in disparities.iter().take(cfg.num_scales).enumerate() {
        let ds = disp.shape();
        let (hs, ws) = (ds[ds.len() - 2], ds[ds.len() - 1]);
        let native = disp.reshape(&[hs, ws])?;
        let full = if (hs, ws) == (h, w) { native } else { native.resize_bilinear(h, w)? };
        let depth = disp_to_depth(&full, cfg.depth_range)?;
        let mut synths = Vec::with_capacity(sources.len());
        let mut masks = Vec::with_capacity(sources.len());
        for src in sources {
            let flow = warp_coordinates(&depth, k, k, &src.pose)?;
            synths.push(src.image.sample_bilinear(&flow.coords)?);
            masks.push(flow.valid);
        }
        let rep = min_reprojection_with_automask(target, &synths, &source_images, &masks, cfg)?;
        let scale = 1usize << s;
        let image_s = pooled_image(&target_value, scale, hs, ws)?;
        let smooth = smoothness(&native, &image_s)?;
        out.reprojection.push(rep.loss.item());
        out.smoothness.push(smooth.item());
        out.mask_fraction.push(rep.mask.mean());
        let term = rep.loss.add(&smooth.mul_scalar(cfg.smooth_weight / scale as f64)?)?;
        total = total.add(&term)?;
    }
    out.total = total.mul_scalar(1.0 / cfg.num_scales as f64)?;
    Ok(out)
}

/// Target image average-pooled by `scale`, resized to exactly `hs × ws` if
/// the pyramid does not divide evenly.
fn pooled_image(image: &Array, scale: usize, hs: usize, ws: usize) -> Result<Array> {
    let g = crate::ndiff::Graph::new();
    let t = g.constant(image.clone());
    let pooled = if scale == 1 { t } else { t.avg_pool2d(scale, scale)? };
    let ps = pooled.shape();
    let pooled = if (ps[1], ps[2]) == (hs, ws) { pooled } else { pooled.resize_bilinear(hs, ws)? };
    Ok(pooled.to_array())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndiff::Graph;

    #[test]
    fn ssim_of_identical_images_is_one() {
        let g = Graph::new();
        let x = g.constant(Array::from_fn(&[3, 5, 6], |i| (i as f64 * 0.37).sin().abs()));
        let s = ssim(&x, &x).unwrap().to_array();
        assert!(s.data().iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn ssim_constant_closed_form() {
        let g = Graph::new();
        let a = g.constant(Array::full(&[1, 4, 4], 0.2));
        let b = g.constant(Array::full(&[1, 4, 4], 0.8));
        let expected = (2.0 * 0.2 * 0.8 + SSIM_C1) / (0.2f64.powi(2) + 0.8f64.powi(2) + SSIM_C1);
        let s = ssim(&a, &b).unwrap().to_array();
        assert!(s.data().iter().all(|v| (v - expected).abs() < 1e-9));
        assert!((expected - 0.4707).abs() < 1e-4);
    }

    #[test]
    fn photometric_constant_example() {
        let g = Graph::new();
        let a = g.constant(Array::full(&[3, 4, 4], 0.2));
        let b = g.constant(Array::full(&[3, 4, 4], 0.8));
        let pe = photometric_error(&a, &b, &LossConfig::default()).unwrap().to_array();
        assert!(pe.data().iter().all(|v| (v - 0.3150).abs() < 1e-4));
    }

    #[test]
    fn photometric_alpha_zero_is_l1() {
        let g = Graph::new();
        let a = g.constant(Array::from_fn(&[2, 2, 2], |i| i as f64 * 0.1));
        let b = g.constant(Array::full(&[2, 2, 2], 0.3));
        let cfg = LossConfig { alpha: 0.0, ..LossConfig::default() };
        let pe = photometric_error(&a, &b, &cfg).unwrap().to_array();
        // Pixel 0: channels 0.0 and 0.4 against 0.3.
        assert!((pe.data()[0] - (0.3 + 0.1) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn static_scene_masks_everything() {
        let g = Graph::new();
        let t = g.constant(Array::from_fn(&[3, 4, 4], |i| (i as f64 * 0.13).cos().abs()));
        let bad = g.constant(Array::full(&[3, 4, 4], 0.5));
        let ones = Array::ones(&[4, 4]);
        let r = min_reprojection_with_automask(&t, &[bad, bad], &[t, t], &[ones.clone(), ones], &LossConfig::default())
            .unwrap();
        assert_eq!(r.loss.item(), 0.0);
        assert_eq!(r.mask.sum(), 0.0);
    }

    #[test]
    fn perfect_synthesis_keeps_everything_at_zero_loss() {
        let g = Graph::new();
        let t = g.constant(Array::from_fn(&[3, 4, 4], |i| (i as f64 * 0.13).cos().abs()));
        let src = g.constant(Array::full(&[3, 4, 4], 0.5));
        let ones = Array::ones(&[4, 4]);
        let r = min_reprojection_with_automask(&t, &[t, t], &[src, src], &[ones.clone(), ones], &LossConfig::default())
            .unwrap();
        assert_eq!(r.loss.item(), 0.0);
        assert_eq!(r.mask.mean(), 1.0);
    }

    #[test]
    fn empty_sources_rejected() {
        let g = Graph::new();
        let t = g.constant(Array::zeros(&[3, 2, 2]));
        assert!(min_reprojection_with_automask(&t, &[], &[], &[], &LossConfig::default()).is_err());
    }

    #[test]
    fn ramp_smoothness_equals_slope() {
        let g = Graph::new();
        // 1x4 ramp 1,2,3,4 has mean 2.5, so the normalized slope is 0.4.
        let d = g.constant(Array::from_vec(&[1, 4], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let img = Array::full(&[3, 1, 4], 0.5);
        let s = smoothness(&d, &img).unwrap().item();
        assert!((s - 0.4).abs() < 1e-6);
    }

    #[test]
    fn constant_disparity_is_smooth() {
        let g = Graph::new();
        let d = g.constant(Array::full(&[5, 5], 0.3));
        let img = Array::from_fn(&[3, 5, 5], |i| (i % 7) as f64 / 7.0);
        assert_eq!(smoothness(&d, &img).unwrap().item(), 0.0);
    }

    #[test]
    fn image_edge_discounts_disparity_step() {
        let g = Graph::new();
        let d = g.constant(Array::from_fn(&[4, 4], |i| if i % 4 < 2 { 0.2 } else { 0.6 }));
        let flat = Array::full(&[3, 4, 4], 0.5);
        let edge = Array::from_fn(&[3, 4, 4], |i| if i % 4 < 2 { 0.0 } else { 1.0 });
        let s_flat = smoothness(&d, &flat).unwrap().item();
        let s_edge = smoothness(&d, &edge).unwrap().item();
        assert!(s_edge < s_flat);
    }
}
