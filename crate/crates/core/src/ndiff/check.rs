//! Central finite-difference gradient checking.

use super::array::Array;
use super::graph::{Graph, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct CheckConfig {
    pub step: f64,
    pub rtol: f64,
    pub atol: f64,
}

impl Default for CheckConfig {
    fn default() -> Self {
        Self { step: 1e-5, rtol: 1e-3, atol: 1e-6 }
    }
}

/// One coordinate that failed the tolerance test.
#[derive(Clone, Debug)]
pub struct Mismatch {
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, Default)]
pub struct CheckReport {
    pub checked: usize,
    pub max_abs_err: f64,
    pub mismatches: Vec<Mismatch>,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.mismatches.is_empty()
    }
}

/// Compare the analytic gradient of the scalar `f` with central differences
/// over every coordinate of every input.
pub fn check_gradients<F>(inputs: &[Array], cfg: CheckConfig, f: F) -> Result<CheckReport>
where
    F: for<'g> Fn(&'g Graph, &[Tensor<'g>]) -> Result<Tensor<'g>>,
{
    let coords: Vec<Vec<usize>> = inputs.iter().map(|a| (0..a.len()).collect()).collect();
    check_gradients_at(inputs, &coords, cfg, f)
}

/// Like [`check_gradients`] but only at the listed coordinates of each input.
pub fn check_gradients_at<F>(
    inputs: &[Array],
    coords: &[Vec<usize>],
    cfg: CheckConfig,
    f: F,
) -> Result<CheckReport>
where
    F: for<'g> Fn(&'g Graph, &[Tensor<'g>]) -> Result<Tensor<'g>>,
{
    if coords.len() != inputs.len() {
        return Err(Error::InvalidArgument("one coordinate list per input".into()));
    }
    let analytic: Vec<Array> = {
        let g = Graph::new();
        let leaves: Vec<Tensor<'_>> = inputs.iter().map(|a| g.param(a.clone())).collect();
        let loss = f(&g, &leaves)?;
        let grads = g.backward(&loss)?;
        leaves.iter().map(|t| grads.get_or_zeros(t)).collect()
    };
    let eval = |values: &[Array]| -> Result<f64> {
        let g = Graph::new();
        let leaves: Vec<Tensor<'_>> = values.iter().map(|a| g.constant(a.clone())).collect();
        Ok(f(&g, &leaves)?.item())
    };
    let mut report = CheckReport::default();
    let mut work: Vec<Array> = inputs.to_vec();
    for (k, idxs) in coords.iter().enumerate() {
        for &i in idxs {
            let orig = work[k].data()[i];
            work[k].data_mut()[i] = orig + cfg.step;
            let fp = eval(&work)?;
            work[k].data_mut()[i] = orig - cfg.step;
            let fm = eval(&work)?;
            work[k].data_mut()[i] = orig;
            let numeric = (fp - fm) / (2.0 * cfg.step);
            let a = analytic[k].data()[i];
            let err = (a - numeric).abs();
            report.checked += 1;
            report.max_abs_err = report.max_abs_err.max(err);
            if err > cfg.atol + cfg.rtol * numeric.abs() {
                report.mismatches.push(Mismatch { input: k, index: i, analytic: a, numeric });
            }
        }
    }
    Ok(report)
}
