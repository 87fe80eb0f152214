use super::array::{numel, permute_data, Array};
use super::graph::Tensor;
use crate::error::{Error, Result};

impl<'g> Tensor<'g> {
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<'g>> {
        let x = self.value();
        if numel(shape) != x.len() {
            return Err(Error::shape("reshape", format!("{:?} -> {shape:?}", x.shape())));
        }
        let out = Array::from_vec(shape, x.data().to_vec())?;
        self.graph.record("reshape", out, &[*self], |g, sink| {
            if let Some(buf) = sink.buf(0) {
                buf.iter_mut().zip(g).for_each(|(d, &gv)| *d += gv);
            }
        })
    }

    pub fn permute(&self, axes: &[usize]) -> Result<Tensor<'g>> {
        let x = self.value();
        let out = x.permute(axes)?;
        let mut inverse = vec![0; axes.len()];
        for (i, &a) in axes.iter().enumerate() {
            inverse[a] = i;
        }
        let out_shape = out.shape().to_vec();
        self.graph.record("permute", out, &[*self], move |g, sink| {
            if let Some(buf) = sink.buf(0) {
                let (_, back) = permute_data(&out_shape, g, &inverse).expect("valid inverse permutation");
                buf.iter_mut().zip(back).for_each(|(d, gv)| *d += gv);
            }
        })
    }

    /// Swap the last two axes.
    pub fn transpose_last(&self) -> Result<Tensor<'g>> {
        let nd = self.shape().len();
        if nd < 2 {
            return Err(Error::shape("transpose_last", "rank < 2"));
        }
        let mut axes: Vec<usize> = (0..nd).collect();
        axes.swap(nd - 1, nd - 2);
        self.permute(&axes)
    }

    /// `[start, end)` along `axis`.
    pub fn slice(&self, axis: usize, start: usize, end: usize) -> Result<Tensor<'g>> {
        let x = self.value();
        let out = x.slice_axis(axis, start, end)?;
        let shape = x.shape().to_vec();
        self.graph.record("slice", out, &[*self], move |g, sink| {
            if let Some(buf) = sink.buf(0) {
                let outer: usize = shape[..axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let n = shape[axis];
                let w = (end - start) * inner;
                for o in 0..outer {
                    let dst = o * n * inner + start * inner;
                    buf[dst..dst + w]
                        .iter_mut()
                        .zip(&g[o * w..(o + 1) * w])
                        .for_each(|(d, &gv)| *d += gv);
                }
            }
        })
    }

    /// Concatenate along `axis`.
    pub fn concat(parts: &[Tensor<'g>], axis: usize) -> Result<Tensor<'g>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat of zero tensors".into()))?;
        let values: Vec<_> = parts.iter().map(|t| t.value()).collect();
        let refs: Vec<&Array> = values.iter().map(|v| v.as_ref()).collect();
        let out = Array::concat(&refs, axis)?;
        let shape = out.shape().to_vec();
        let widths: Vec<usize> = values.iter().map(|v| v.shape()[axis]).collect();
        first.graph.record("concat", out, parts, move |g, sink| {
            let outer: usize = shape[..axis].iter().product();
            let inner: usize = shape[axis + 1..].iter().product();
            let total = shape[axis];
            let mut offset = 0;
            for (i, &w) in widths.iter().enumerate() {
                if let Some(buf) = sink.buf(i) {
                    for o in 0..outer {
                        let src = (o * total + offset) * inner;
                        let dst = o * w * inner;
                        buf[dst..dst + w * inner]
                            .iter_mut()
                            .zip(&g[src..src + w * inner])
                            .for_each(|(d, &gv)| *d += gv);
                    }
                }
                offset += w;
            }
        })
    }

    /// Replicate-pad the last two axes by `pad` on every side.
    pub fn pad_replicate(&self, pad: usize) -> Result<Tensor<'g>> {
        let x = self.value();
        let nd = x.ndim();
        if nd < 2 {
            return Err(Error::shape("pad_replicate", "rank < 2"));
        }
        let (h, w) = (x.shape()[nd - 2], x.shape()[nd - 1]);
        let planes = x.len() / (h * w);
        let (ho, wo) = (h + 2 * pad, w + 2 * pad);
        let src_index = move |i: usize, j: usize| {
            let si = i.saturating_sub(pad).min(h - 1);
            let sj = j.saturating_sub(pad).min(w - 1);
            si * w + sj
        };
        let mut out = vec![0.0; planes * ho * wo];
        for p in 0..planes {
            for i in 0..ho {
                for j in 0..wo {
                    out[p * ho * wo + i * wo + j] = x.data()[p * h * w + src_index(i, j)];
                }
            }
        }
        let mut shape = x.shape().to_vec();
        shape[nd - 2] = ho;
        shape[nd - 1] = wo;
        self.graph.record("pad_replicate", Array::from_vec(&shape, out)?, &[*self], move |g, sink| {
            if let Some(buf) = sink.buf(0) {
                for p in 0..planes {
                    for i in 0..ho {
                        for j in 0..wo {
                            buf[p * h * w + src_index(i, j)] += g[p * ho * wo + i * wo + j];
                        }
                    }
                }
            }
        })
    }

    pub fn sum(&self) -> Result<Tensor<'g>> {
        let x = self.value();
        let n = x.len();
        self.graph.record("sum", Array::scalar(x.sum()), &[*self], move |g, sink| {
            if let Some(buf) = sink.buf(0) {
                debug_assert_eq!(buf.len(), n);
                buf.iter_mut().for_each(|d| *d += g[0]);
            }
        })
    }

    pub fn mean(&self) -> Result<Tensor<'g>> {
        let x = self.value();
        let n = x.len() as f64;
        self.graph.record("mean", Array::scalar(x.sum() / n), &[*self], move |g, sink| {
            if let Some(buf) = sink.buf(0) {
                buf.iter_mut().for_each(|d| *d += g[0] / n);
            }
        })
    }

    /// Sum over `axis`, removing it from the shape.
    pub fn sum_axis(&self, axis: usize) -> Result<Tensor<'g>> {
        self.reduce_axis("sum_axis", axis, false)
    }

    /// Mean over `axis`, removing it from the shape.
    pub fn mean_axis(&self, axis: usize) -> Result<Tensor<'g>> {
        self.reduce_axis("mean_axis", axis, true)
    }

    fn reduce_axis(&self, op: &'static str, axis: usize, average: bool) -> Result<Tensor<'g>> {
        let x = self.value();
        if axis >= x.ndim() {
            return Err(Error::shape(op, format!("axis {axis} on {:?}", x.shape())));
        }
        let outer: usize = x.shape()[..axis].iter().product();
        let inner: usize = x.shape()[axis + 1..].iter().product();
        let n = x.shape()[axis];
        let scale = if average { 1.0 / n as f64 } else { 1.0 };
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for k in 0..n {
                let src = &x.data()[(o * n + k) * inner..(o * n + k + 1) * inner];
                out[o * inner..(o + 1) * inner]
                    .iter_mut()
                    .zip(src)
                    .for_each(|(d, &v)| *d += v);
            }
        }
        out.iter_mut().for_each(|v| *v *= scale);
        let mut shape = x.shape().to_vec();
        shape.remove(axis);
        if shape.is_empty() {
            shape.push(1);
        }
        self.graph.record(op, Array::from_vec(&shape, out)?, &[*self], move |g, sink| {
            if let Some(buf) = sink.buf(0) {
                for o in 0..outer {
                    for k in 0..n {
                        buf[(o * n + k) * inner..(o * n + k + 1) * inner]
                            .iter_mut()
                            .zip(&g[o * inner..(o + 1) * inner])
                            .for_each(|(d, &gv)| *d += gv * scale);
                    }
                }
            }
        })
    }

    /// Minimum over `axis`; the gradient routes to the first minimizer.
    pub fn min_axis(&self, axis: usize) -> Result<Tensor<'g>> {
        let x = self.value();
        if axis >= x.ndim() {
            return Err(Error::shape("min_axis", format!("axis {axis} on {:?}", x.shape())));
        }
        let outer: usize = x.shape()[..axis].iter().product();
        let inner: usize = x.shape()[axis + 1..].iter().product();
        let n = x.shape()[axis];
        let mut out = vec![f64::INFINITY; outer * inner];
        let mut arg = vec![0usize; outer * inner];
        for o in 0..outer {
            for k in 0..n {
                for i in 0..inner {
                    let v = x.data()[(o * n + k) * inner + i];
                    if v < out[o * inner + i] {
                        out[o * inner + i] = v;
                        arg[o * inner + i] = k;
                    }
                }
            }
        }
        let mut shape = x.shape().to_vec();
        shape.remove(axis);
        if shape.is_empty() {
            shape.push(1);
        }
        self.graph.record("min_axis", Array::from_vec(&shape, out)?, &[*self], move |g, sink| {
            if let Some(buf) = sink.buf(0) {
                for o in 0..outer {
                    for i in 0..inner {
                        let k = arg[o * inner + i];
                        buf[(o * n + k) * inner + i] += g[o * inner + i];
                    }
                }
            }
        })
    }
}
