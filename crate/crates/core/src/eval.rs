//! Depth metrics with per-image median scaling and an 80 m cap.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ndiff::Array;
use crate::nets::{DepthNet, DepthRange};
use crate::pipeline::image_io::{resize, save_depth_png16};
use crate::pipeline::ImageTriplet;

/// Depth cap in metres.
pub const MAX_DEPTH: f64 = 80.0;
/// Predictions are clamped from below to this depth.
pub const MIN_DEPTH: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalConfig {
    pub cap: f64,
    pub min_depth: f64,
    /// Median-scale each prediction to its ground truth.
    pub scaled: bool,
    /// Restrict evaluation to the Garg crop.
    pub garg_crop: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { cap: MAX_DEPTH, min_depth: MIN_DEPTH, scaled: true, garg_crop: false }
    }
}

impl EvalConfig {
    pub fn unscaled() -> Self {
        Self { scaled: false, ..Self::default() }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MetricsReport {
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub rmse: f64,
    pub rmse_log: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
    pub silog: f64,
    pub sq_err_rel: f64,
    pub n_pixels: usize,
}

pub const CSV_HEADER: &str = "name,abs_rel,sq_rel,rmse,rmse_log,delta1,delta2,delta3,silog,sq_err_rel,n_pixels";

impl MetricsReport {
    fn values(&self) -> [f64; 9] {
        [
            self.abs_rel,
            self.sq_rel,
            self.rmse,
            self.rmse_log,
            self.delta1,
            self.delta2,
            self.delta3,
            self.silog,
            self.sq_err_rel,
        ]
    }

    /// Arithmetic mean of per-image reports; pixel counts add up.
    pub fn mean(reports: &[MetricsReport]) -> Result<MetricsReport> {
        if reports.is_empty() {
            return Err(Error::Data("no reports to aggregate".into()));
        }
        let n = reports.len() as f64;
        let mut acc = [0.0; 9];
        for r in reports {
            acc.iter_mut().zip(r.values()).for_each(|(a, v)| *a += v);
        }
        let m = acc.map(|v| v / n);
        Ok(MetricsReport {
            abs_rel: m[0],
            sq_rel: m[1],
            rmse: m[2],
            rmse_log: m[3],
            delta1: m[4],
            delta2: m[5],
            delta3: m[6],
            silog: m[7],
            sq_err_rel: m[8],
            n_pixels: reports.iter().map(|r| r.n_pixels).sum(),
        })
    }

    pub fn csv_row(&self, name: &str) -> String {
        let mut s = name.to_string();
        for v in self.values() {
            let _ = write!(s, ",{v}");
        }
        let _ = write!(s, ",{}", self.n_pixels);
        s
    }

    /// Fixed-width table with one header line.
    pub fn table(rows: &[(String, MetricsReport)]) -> String {
        let mut s = format!(
            "{:<16} {:>8} {:>8} {:>8} {:>8} {:>7} {:>7} {:>7} {:>8} {:>10}\n",
            "name", "AbsRel", "SqRel", "RMSE", "RMSElog", "d<1.25", "d<1.25²", "d<1.25³", "SILog", "SqErrRel"
        );
        for (name, r) in rows {
            let _ = writeln!(
                s,
                "{:<16} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>7.4} {:>7.4} {:>7.4} {:>8.3} {:>10.3}",
                name, r.abs_rel, r.sq_rel, r.rmse, r.rmse_log, r.delta1, r.delta2, r.delta3, r.silog, r.sq_err_rel
            );
        }
        s
    }
}

pub fn write_csv(path: &Path, rows: &[(String, MetricsReport)]) -> Result<()> {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for (name, r) in rows {
        s.push_str(&r.csv_row(name));
        s.push('\n');
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn check_same_shape(pred: &Array, gt: &Array) -> Result<()> {
    if pred.shape() != gt.shape() {
        return Err(Error::shape("depth metrics", format!("pred {:?} vs gt {:?}", pred.shape(), gt.shape())));
    }
    Ok(())
}

/// `pred · median(gt) / median(pred)` with both medians over `gt > 0`.
pub fn median_scale(pred: &Array, gt: &Array) -> Result<Array> {
    check_same_shape(pred, gt)?;
    let (mut p, mut g): (Vec<f64>, Vec<f64>) =
        pred.data().iter().zip(gt.data()).filter(|(_, g)| **g > 0.0).map(|(p, g)| (*p, *g)).unzip();
    if g.is_empty() {
        return Err(Error::Data("ground truth has no valid pixels".into()));
    }
    let mp = median(&mut p);
    if !(mp > 0.0) {
        return Err(Error::Data(format!("prediction median {mp} is not positive")));
    }
    let ratio = median(&mut g) / mp;
    Ok(pred.map(|v| v * ratio))
}

/// Pixel mask of the Garg crop for an `h × w` image.
pub fn garg_crop_mask(h: usize, w: usize) -> Array {
    let (hf, wf) = (h as f64, w as f64);
    let (r0, r1) = ((0.40810811 * hf) as usize, (0.99189189 * hf) as usize);
    let (c0, c1) = ((0.03594771 * wf) as usize, (0.96405229 * wf) as usize);
    Array::from_fn(&[h, w], |p| {
        let (i, j) = (p / w, p % w);
        f64::from(u8::from(i >= r0 && i < r1 && j >= c0 && j < c1))
    })
}

/// Metrics over pixels with `0 < gt ≤ cap` (and inside `mask` if given).
/// `pred` is clamped to `[min_depth, cap]` first and is used as is: apply
/// [`median_scale`] beforehand for scaled evaluation.
pub fn depth_metrics_masked(pred: &Array, gt: &Array, mask: Option<&Array>, cfg: &EvalConfig) -> Result<MetricsReport> {
    check_same_shape(pred, gt)?;
    let mut n = 0usize;
    let (mut abs_rel, mut sq_rel, mut sq, mut sq_log) = (0.0, 0.0, 0.0, 0.0);
    let mut deltas = [0usize; 3];
    let (mut e_sum, mut e_sq) = (0.0, 0.0);
    let mut sq_err_rel = 0.0;
    for (i, (&p, &g)) in pred.data().iter().zip(gt.data()).enumerate() {
        if !(g > 0.0 && g <= cfg.cap) || mask.is_some_and(|m| m.data()[i] <= 0.0) {
            continue;
        }
        let p = p.clamp(cfg.min_depth, cfg.cap);
        let d = p - g;
        let e = p.ln() - g.ln();
        n += 1;
        abs_rel += d.abs() / g;
        sq_rel += d * d / g;
        sq += d * d;
        sq_log += e * e;
        e_sum += e;
        e_sq += e * e;
        sq_err_rel += d * d / (g * g);
        let ratio = (p / g).max(g / p);
        for (k, c) in deltas.iter_mut().enumerate() {
            if ratio < 1.25f64.powi(k as i32 + 1) {
                *c += 1;
            }
        }
    }
    if n == 0 {
        return Err(Error::Data("no valid ground-truth pixels".into()));
    }
    let nf = n as f64;
    let mean_e = e_sum / nf;
    Ok(MetricsReport {
        abs_rel: abs_rel / nf,
        sq_rel: sq_rel / nf,
        rmse: (sq / nf).sqrt(),
        rmse_log: (sq_log / nf).sqrt(),
        delta1: deltas[0] as f64 / nf,
        delta2: deltas[1] as f64 / nf,
        delta3: deltas[2] as f64 / nf,
        silog: (e_sq / nf - mean_e * mean_e).max(0.0).sqrt() * 100.0,
        sq_err_rel: 100.0 * sq_err_rel / nf,
        n_pixels: n,
    })
}

pub fn depth_metrics(pred: &Array, gt: &Array, cfg: &EvalConfig) -> Result<MetricsReport> {
    depth_metrics_masked(pred, gt, None, cfg)
}

/// Resize `pred` to the ground-truth resolution, optionally median-scale and
/// crop, then compute metrics.
pub fn evaluate_prediction(pred: &Array, gt: &Array, cfg: &EvalConfig) -> Result<MetricsReport> {
    let &[h, w] = gt.shape() else {
        return Err(Error::shape("evaluate", format!("gt {:?} is not HxW", gt.shape())));
    };
    let pred = resize(pred, h, w)?;
    let pred = if cfg.scaled { median_scale(&pred, gt)? } else { pred };
    let crop = cfg.garg_crop.then(|| garg_crop_mask(h, w));
    depth_metrics_masked(&pred, gt, crop.as_ref(), cfg)
}

/// Anything that maps a `[3, H, W]` image to depth `[H', W']`.
pub trait DepthPredictor: Sync {
    fn predict(&self, image: &Array) -> Result<Array>;
}

impl DepthPredictor for DepthNet {
    fn predict(&self, image: &Array) -> Result<Array> {
        self.predict_depth(image, DepthRange::default())
    }
}

/// A [`DepthNet`] with an explicit output range.
pub struct RangedNet<'a> {
    pub net: &'a DepthNet,
    pub range: DepthRange,
}

impl DepthPredictor for RangedNet<'_> {
    fn predict(&self, image: &Array) -> Result<Array> {
        self.net.predict_depth(image, self.range)
    }
}

/// Depth predictions for every triplet's target frame, in dataset order.
pub fn predict_all(model: &dyn DepthPredictor, dataset: &[ImageTriplet]) -> Result<Vec<Array>> {
    dataset.par_iter().map(|t| model.predict(&t.target)).collect()
}

/// Per-image reports for precomputed predictions; triplets without ground
/// truth are an error.
pub fn evaluate_predictions(preds: &[Array], dataset: &[ImageTriplet], cfg: &EvalConfig) -> Result<Vec<MetricsReport>> {
    if preds.len() != dataset.len() {
        return Err(Error::InvalidArgument(format!("{} predictions for {} samples", preds.len(), dataset.len())));
    }
    preds
        .par_iter()
        .zip(dataset)
        .map(|(p, t)| {
            let gt = t.depth.as_ref().ok_or_else(|| Error::Data(format!("{}: no ground-truth depth", t.id)))?;
            evaluate_prediction(p, gt, cfg)
        })
        .collect()
}

/// Mean report of `model` over `dataset`.
pub fn evaluate(model: &dyn DepthPredictor, dataset: &[ImageTriplet], cfg: &EvalConfig) -> Result<MetricsReport> {
    let preds = predict_all(model, dataset)?;
    MetricsReport::mean(&evaluate_predictions(&preds, dataset, cfg)?)
}

/// Frames per second of `model` over `iters` timed forward passes on a
/// mid-gray `[3, H, W]` image, after one warm-up pass.
pub fn inference_fps(model: &dyn DepthPredictor, height: usize, width: usize, iters: usize) -> Result<f64> {
    if iters == 0 {
        return Err(Error::InvalidArgument("iteration count must be positive".into()));
    }
    let image = Array::full(&[3, height, width], 0.5);
    model.predict(&image)?;
    let start = std::time::Instant::now();
    for _ in 0..iters {
        model.predict(&image)?;
    }
    Ok(iters as f64 / start.elapsed().as_secs_f64())
}

/// Write each prediction as `<dir>/<index>.png` (16-bit, depth · 256).
pub fn export_predictions(dir: &Path, preds: &[Array]) -> Result<Vec<std::path::PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    preds
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let path = dir.join(format!("{i:06}.png"));
            save_depth_png16(&path, p)?;
            Ok(path)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arr(v: &[f64]) -> Array {
        Array::from_vec(&[1, v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn perfect_prediction() {
        let gt = arr(&[1.0, 5.0, 20.0]);
        let m = depth_metrics(&gt, &gt, &EvalConfig::default()).unwrap();
        assert_eq!((m.abs_rel, m.rmse, m.silog, m.delta1, m.delta3), (0.0, 0.0, 0.0, 1.0, 1.0));
    }

    #[test]
    fn hand_example() {
        let m = depth_metrics(&arr(&[1.1, 1.8, 4.4]), &arr(&[1.0, 2.0, 4.0]), &EvalConfig::default()).unwrap();
        assert!((m.abs_rel - 0.1).abs() < 1e-12);
        assert_eq!(m.delta1, 1.0);
    }

    #[test]
    fn uniform_scale_offsets() {
        let gt = arr(&[1.0, 3.0, 7.0, 9.0]);
        let m = depth_metrics(&gt.map(|v| 1.3 * v), &gt, &EvalConfig::default()).unwrap();
        assert_eq!((m.delta1, m.delta2), (0.0, 1.0));
        assert!(m.silog < 1e-6);
    }

    #[test]
    fn median_over_valid_pixels_only() {
        let gt = arr(&[0.0, 2.0, 4.0, 0.0, 6.0]);
        let pred = arr(&[100.0, 1.0, 3.0, 100.0, 2.0]);
        // median(gt valid) = 4, median(pred at valid) = median(1, 3, 2) = 2.
        let s = median_scale(&pred, &gt).unwrap();
        assert_eq!(s.data(), &[200.0, 2.0, 6.0, 200.0, 4.0]);
        assert!(median_scale(&pred, &Array::zeros(&[1, 5])).is_err());
    }

    #[test]
    fn cap_excludes_far_pixels() {
        let gt = arr(&[10.0, 90.0]);
        let m = depth_metrics(&arr(&[10.0, 1.0]), &gt, &EvalConfig::default()).unwrap();
        assert_eq!(m.n_pixels, 1);
        assert_eq!(m.abs_rel, 0.0);
    }

    #[test]
    fn crop_mask_bounds() {
        let m = garg_crop_mask(375, 1242);
        assert_eq!(m.at(&[152, 44]), 0.0);
        assert_eq!(m.at(&[153, 44]), 1.0);
        assert_eq!(m.at(&[153, 1197]), 0.0);
    }
}
