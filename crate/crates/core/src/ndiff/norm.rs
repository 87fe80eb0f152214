use super::array::Array;
use super::graph::Tensor;
use crate::error::{Error, Result};

/// Per-channel statistics observed by a training-mode batch norm.
#[derive(Clone, Debug)]
pub struct BatchStats {
    pub mean: Array,
    /// Unbiased variance, the form used to update running estimates.
    pub var: Array,
}

impl<'g> Tensor<'g> {
    /// Softmax over the last axis.
    pub fn softmax(&self) -> Result<Tensor<'g>> {
        let x = self.value();
        let n = *x.shape().last().ok_or_else(|| Error::shape("softmax", "rank 0"))?;
        let rows = x.len() / n;
        let mut y = vec![0.0; x.len()];
        for r in 0..rows {
            let src = &x.data()[r * n..(r + 1) * n];
            let m = src.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let dst = &mut y[r * n..(r + 1) * n];
            let mut s = 0.0;
            for (d, &v) in dst.iter_mut().zip(src) {
                *d = (v - m).exp();
                s += *d;
            }
            dst.iter_mut().for_each(|d| *d /= s);
        }
        let out = std::rc::Rc::new(Array::from_vec(x.shape(), y)?);
        let saved = std::rc::Rc::clone(&out);
        self.graph.record("softmax", out, &[*self], move |g, sink| {
            if let Some(buf) = sink.buf(0) {
                let y = saved.data();
                for r in 0..rows {
                    let span = r * n..(r + 1) * n;
                    let dot: f64 = g[span.clone()].iter().zip(&y[span.clone()]).map(|(a, b)| a * b).sum();
                    for i in span {
                        buf[i] += y[i] * (g[i] - dot);
                    }
                }
            }
        })
    }

    /// Layer normalization over the last axis with affine `gamma`, `beta`.
    pub fn layer_norm(&self, gamma: &Tensor<'g>, beta: &Tensor<'g>, eps: f64) -> Result<Tensor<'g>> {
        let x = self.value();
        let (gm, bt) = (gamma.value(), beta.value());
        let n = *x.shape().last().ok_or_else(|| Error::shape("layer_norm", "rank 0"))?;
        if gm.len() != n || bt.len() != n {
            return Err(Error::shape("layer_norm", format!("affine {} for width {n}", gm.len())));
        }
        let rows = x.len() / n;
        let mut xhat = vec![0.0; x.len()];
        let mut inv_std = vec![0.0; rows];
        for r in 0..rows {
            let src = &x.data()[r * n..(r + 1) * n];
            let mean = src.iter().sum::<f64>() / n as f64;
            let var = src.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for (d, &v) in xhat[r * n..(r + 1) * n].iter_mut().zip(src) {
                *d = (v - mean) * is;
            }
        }
        let y: Vec<f64> = xhat
            .iter()
            .enumerate()
            .map(|(i, &v)| v * gm.data()[i % n] + bt.data()[i % n])
            .collect();
        self.graph.record(
            "layer_norm",
            Array::from_vec(x.shape(), y)?,
            &[*self, *gamma, *beta],
            move |g, sink| {
                if let Some(buf) = sink.buf(0) {
                    for r in 0..rows {
                        let span = r * n..(r + 1) * n;
                        let mut m1 = 0.0;
                        let mut m2 = 0.0;
                        for i in span.clone() {
                            let dxh = g[i] * gm.data()[i % n];
                            m1 += dxh;
                            m2 += dxh * xhat[i];
                        }
                        m1 /= n as f64;
                        m2 /= n as f64;
                        for i in span {
                            let dxh = g[i] * gm.data()[i % n];
                            buf[i] += inv_std[r] * (dxh - m1 - xhat[i] * m2);
                        }
                    }
                }
                if let Some(buf) = sink.buf(1) {
                    for (i, &gv) in g.iter().enumerate() {
                        buf[i % n] += gv * xhat[i];
                    }
                }
                if let Some(buf) = sink.buf(2) {
                    for (i, &gv) in g.iter().enumerate() {
                        buf[i % n] += gv;
                    }
                }
            },
        )
    }

    /// Training-mode batch normalization of `[N,C,H,W]` with batch statistics.
    pub fn batch_norm_train(
        &self,
        gamma: &Tensor<'g>,
        beta: &Tensor<'g>,
        eps: f64,
    ) -> Result<(Tensor<'g>, BatchStats)> {
        let x = self.value();
        let (n, c, plane) = nchw_dims("batch_norm", &x, gamma, beta)?;
        let (gm, bt) = (gamma.value(), beta.value());
        let count = (n * plane) as f64;
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for b in 0..n {
            for ch in 0..c {
                let src = &x.data()[(b * c + ch) * plane..(b * c + ch + 1) * plane];
                mean[ch] += src.iter().sum::<f64>();
            }
        }
        mean.iter_mut().for_each(|m| *m /= count);
        for b in 0..n {
            for ch in 0..c {
                let src = &x.data()[(b * c + ch) * plane..(b * c + ch + 1) * plane];
                var[ch] += src.iter().map(|v| (v - mean[ch]).powi(2)).sum::<f64>();
            }
        }
        var.iter_mut().for_each(|v| *v /= count);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut xhat = vec![0.0; x.len()];
        let mut y = vec![0.0; x.len()];
        for (i, (&v, (xh, yv))) in x.data().iter().zip(xhat.iter_mut().zip(y.iter_mut())).enumerate() {
            let ch = (i / plane) % c;
            *xh = (v - mean[ch]) * inv_std[ch];
            *yv = *xh * gm.data()[ch] + bt.data()[ch];
        }
        let unbiased = if count > 1.0 { count / (count - 1.0) } else { 1.0 };
        let stats = BatchStats {
            mean: Array::from_vec(&[c], mean)?,
            var: Array::from_vec(&[c], var.iter().map(|v| v * unbiased).collect())?,
        };
        let out = self.graph.record(
            "batch_norm",
            Array::from_vec(x.shape(), y)?,
            &[*self, *gamma, *beta],
            move |g, sink| {
                let mut sum_g = vec![0.0; c];
                let mut sum_gx = vec![0.0; c];
                for (i, &gv) in g.iter().enumerate() {
                    let ch = (i / plane) % c;
                    sum_g[ch] += gv;
                    sum_gx[ch] += gv * xhat[i];
                }
                if let Some(buf) = sink.buf(0) {
                    for (i, d) in buf.iter_mut().enumerate() {
                        let ch = (i / plane) % c;
                        let dxh_mean = gm.data()[ch] * sum_g[ch] / count;
                        let dxh_x = gm.data()[ch] * sum_gx[ch] / count;
                        *d += inv_std[ch] * (g[i] * gm.data()[ch] - dxh_mean - xhat[i] * dxh_x);
                    }
                }
                if let Some(buf) = sink.buf(1) {
                    buf.iter_mut().zip(&sum_gx).for_each(|(d, v)| *d += v);
                }
                if let Some(buf) = sink.buf(2) {
                    buf.iter_mut().zip(&sum_g).for_each(|(d, v)| *d += v);
                }
            },
        )?;
        Ok((out, stats))
    }

    /// Inference-mode batch normalization with fixed running statistics.
    pub fn batch_norm_eval(
        &self,
        gamma: &Tensor<'g>,
        beta: &Tensor<'g>,
        running_mean: &Array,
        running_var: &Array,
        eps: f64,
    ) -> Result<Tensor<'g>> {
        let x = self.value();
        let (_, c, plane) = nchw_dims("batch_norm", &x, gamma, beta)?;
        if running_mean.len() != c || running_var.len() != c {
            return Err(Error::shape("batch_norm", "running statistics length"));
        }
        let (gm, bt) = (gamma.value(), beta.value());
        let mean = running_mean.data().to_vec();
        let inv_std: Vec<f64> = running_var.data().iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let y: Vec<f64> = x
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let ch = (i / plane) % c;
                (v - mean[ch]) * inv_std[ch] * gm.data()[ch] + bt.data()[ch]
            })
            .collect();
        self.graph.record(
            "batch_norm_eval",
            Array::from_vec(x.shape(), y)?,
            &[*self, *gamma, *beta],
            move |g, sink| {
                if let Some(buf) = sink.buf(0) {
                    for (i, d) in buf.iter_mut().enumerate() {
                        let ch = (i / plane) % c;
                        *d += g[i] * inv_std[ch] * gm.data()[ch];
                    }
                }
                if let Some(buf) = sink.buf(1) {
                    for (i, &gv) in g.iter().enumerate() {
                        let ch = (i / plane) % c;
                        buf[ch] += gv * (x.data()[i] - mean[ch]) * inv_std[ch];
                    }
                }
                if let Some(buf) = sink.buf(2) {
                    for (i, &gv) in g.iter().enumerate() {
                        buf[(i / plane) % c] += gv;
                    }
                }
            },
        )
    }
}

fn nchw_dims(op: &'static str, x: &Array, gamma: &Tensor<'_>, beta: &Tensor<'_>) -> Result<(usize, usize, usize)> {
    let &[n, c, h, w] = x.shape() else {
        return Err(Error::shape(op, format!("expected NCHW, got {:?}", x.shape())));
    };
    if gamma.numel() != c || beta.numel() != c {
        return Err(Error::shape(op, format!("affine params for {c} channels")));
    }
    Ok((n, c, h * w))
}
