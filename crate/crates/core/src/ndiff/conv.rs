use super::array::Array;
use super::graph::Tensor;
use super::linalg::gemm;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
struct Geom {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Geom {
    fn rows(&self) -> usize {
        self.c * self.kh * self.kw
    }
    fn cols(&self) -> usize {
        self.ho * self.wo
    }
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }
}

fn im2col(x: &[f64], g: &Geom, cols: &mut [f64]) {
    let l = g.cols();
    for c in 0..g.c {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * l..(row + 1) * l];
                for oi in 0..g.ho {
                    let ii = (oi * g.stride + ki) as isize - g.pad as isize;
                    let drow = &mut dst[oi * g.wo..(oi + 1) * g.wo];
                    if ii < 0 || ii >= g.h as isize {
                        drow.iter_mut().for_each(|v| *v = 0.0);
                        continue;
                    }
                    let src = &x[(c * g.h + ii as usize) * g.w..(c * g.h + ii as usize + 1) * g.w];
                    for (oj, d) in drow.iter_mut().enumerate() {
                        let jj = (oj * g.stride + kj) as isize - g.pad as isize;
                        *d = if jj < 0 || jj >= g.w as isize { 0.0 } else { src[jj as usize] };
                    }
                }
            }
        }
    }
}

fn col2im(cols: &[f64], g: &Geom, x: &mut [f64]) {
    let l = g.cols();
    for c in 0..g.c {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * l..(row + 1) * l];
                for oi in 0..g.ho {
                    let ii = (oi * g.stride + ki) as isize - g.pad as isize;
                    if ii < 0 || ii >= g.h as isize {
                        continue;
                    }
                    let base = (c * g.h + ii as usize) * g.w;
                    for oj in 0..g.wo {
                        let jj = (oj * g.stride + kj) as isize - g.pad as isize;
                        if jj >= 0 && (jj as usize) < g.w {
                            x[base + jj as usize] += src[oi * g.wo + oj];
                        }
                    }
                }
            }
        }
    }
}

fn expect_rank4(op: &'static str, a: &Array) -> Result<[usize; 4]> {
    match a.shape() {
        &[n, c, h, w] => Ok([n, c, h, w]),
        s => Err(Error::shape(op, format!("expected rank-4 NCHW, got {s:?}"))),
    }
}

impl<'g> Tensor<'g> {
    /// 2-D cross-correlation. `self` is `[N,C,H,W]`, `weight` is `[O,C,kh,kw]`.
    pub fn conv2d(
        &self,
        weight: &Tensor<'g>,
        bias: Option<&Tensor<'g>>,
        stride: usize,
        pad: usize,
    ) -> Result<Tensor<'g>> {
        let x = self.value();
        let w = weight.value();
        let [n, c, h, wd] = expect_rank4("conv2d", &x)?;
        let [o, wc, kh, kw] = expect_rank4("conv2d", &w)?;
        if wc != c || stride == 0 || h + 2 * pad < kh || wd + 2 * pad < kw {
            return Err(Error::shape(
                "conv2d",
                format!("input {:?}, weight {:?}, stride {stride}, pad {pad}", x.shape(), w.shape()),
            ));
        }
        let geom = Geom {
            c,
            h,
            w: wd,
            kh,
            kw,
            stride,
            pad,
            ho: (h + 2 * pad - kh) / stride + 1,
            wo: (wd + 2 * pad - kw) / stride + 1,
        };
        let (rows, l) = (geom.rows(), geom.cols());
        let mut out = vec![0.0; n * o * l];
        let mut cols = if geom.is_pointwise() { Vec::new() } else { vec![0.0; rows * l] };
        for b in 0..n {
            let xb = &x.data()[b * c * h * wd..(b + 1) * c * h * wd];
            let src: &[f64] = if geom.is_pointwise() {
                xb
            } else {
                im2col(xb, &geom, &mut cols);
                &cols
            };
            gemm(false, false, o, l, rows, 1.0, w.data(), src, 0.0, &mut out[b * o * l..]);
        }
        let mut inputs = vec![*self, *weight];
        if let Some(bt) = bias {
            let bv = bt.value();
            if bv.len() != o {
                return Err(Error::shape("conv2d", format!("bias {:?} for {o} outputs", bv.shape())));
            }
            for (i, v) in out.iter_mut().enumerate() {
                *v += bv.data()[(i / l) % o];
            }
            inputs.push(*bt);
        }
        let shape = [n, o, geom.ho, geom.wo];
        self.graph.record("conv2d", Array::from_vec(&shape, out)?, &inputs, move |g, sink| {
            let want_x = sink.wants(0);
            let want_w = sink.wants(1);
            let mut cols = vec![0.0; if geom.is_pointwise() { 0 } else { rows * l }];
            let mut dcols = vec![0.0; if want_x && !geom.is_pointwise() { rows * l } else { 0 }];
            for b in 0..n {
                let gb = &g[b * o * l..(b + 1) * o * l];
                if want_w {
                    let xb = &x.data()[b * c * h * wd..(b + 1) * c * h * wd];
                    let src: &[f64] = if geom.is_pointwise() {
                        xb
                    } else {
                        im2col(xb, &geom, &mut cols);
                        &cols
                    };
                    let dw = sink.buf(1).unwrap();
                    gemm(false, true, o, rows, l, 1.0, gb, src, 1.0, dw);
                }
                if want_x {
                    let dx = &mut sink.buf(0).unwrap()[b * c * h * wd..(b + 1) * c * h * wd];
                    if geom.is_pointwise() {
                        gemm(true, false, rows, l, o, 1.0, w.data(), gb, 1.0, dx);
                    } else {
                        gemm(true, false, rows, l, o, 1.0, w.data(), gb, 0.0, &mut dcols);
                        col2im(&dcols, &geom, dx);
                    }
                }
            }
            if let Some(db) = sink.buf(2) {
                for (i, &gv) in g.iter().enumerate() {
                    db[(i / l) % o] += gv;
                }
            }
        })
    }

    /// Transposed convolution. `self` is `[N,Cin,H,W]`, `weight` is
    /// `[Cin,Cout,kh,kw]`; output extent is `(H-1)*stride - 2*pad + kh`.
    pub fn conv_transpose2d(
        &self,
        weight: &Tensor<'g>,
        bias: Option<&Tensor<'g>>,
        stride: usize,
        pad: usize,
    ) -> Result<Tensor<'g>> {
        let x = self.value();
        let w = weight.value();
        let [n, cin, h, wd] = expect_rank4("conv_transpose2d", &x)?;
        let [wcin, cout, kh, kw] = expect_rank4("conv_transpose2d", &w)?;
        if wcin != cin || stride == 0 || (h - 1) * stride + kh <= 2 * pad {
            return Err(Error::shape(
                "conv_transpose2d",
                format!("input {:?}, weight {:?}", x.shape(), w.shape()),
            ));
        }
        let ho = (h - 1) * stride + kh - 2 * pad;
        let wo = (wd - 1) * stride + kw - 2 * pad;
        // Geometry of the equivalent forward convolution over the output.
        let geom = Geom { c: cout, h: ho, w: wo, kh, kw, stride, pad, ho: h, wo: wd };
        let (rows, l) = (geom.rows(), geom.cols());
        let mut out = vec![0.0; n * cout * ho * wo];
        let mut cols = vec![0.0; rows * l];
        for b in 0..n {
            let xb = &x.data()[b * cin * l..(b + 1) * cin * l];
            gemm(true, false, rows, l, cin, 1.0, w.data(), xb, 0.0, &mut cols);
            col2im(&cols, &geom, &mut out[b * cout * ho * wo..(b + 1) * cout * ho * wo]);
        }
        let mut inputs = vec![*self, *weight];
        let plane = ho * wo;
        if let Some(bt) = bias {
            let bv = bt.value();
            if bv.len() != cout {
                return Err(Error::shape("conv_transpose2d", "bias length"));
            }
            for (i, v) in out.iter_mut().enumerate() {
                *v += bv.data()[(i / plane) % cout];
            }
            inputs.push(*bt);
        }
        let shape = [n, cout, ho, wo];
        self.graph.record("conv_transpose2d", Array::from_vec(&shape, out)?, &inputs, move |g, sink| {
            let mut cols = vec![0.0; rows * l];
            for b in 0..n {
                im2col(&g[b * cout * plane..(b + 1) * cout * plane], &geom, &mut cols);
                if let Some(dx) = sink.buf(0) {
                    gemm(false, false, cin, l, rows, 1.0, w.data(), &cols, 1.0, &mut dx[b * cin * l..]);
                }
                if let Some(dw) = sink.buf(1) {
                    let xb = &x.data()[b * cin * l..(b + 1) * cin * l];
                    gemm(false, true, cin, rows, l, 1.0, xb, &cols, 1.0, dw);
                }
            }
            if let Some(db) = sink.buf(2) {
                for (i, &gv) in g.iter().enumerate() {
                    db[(i / plane) % cout] += gv;
                }
            }
        })
    }

    /// Average pooling over the last two axes without padding.
    pub fn avg_pool2d(&self, kernel: usize, stride: usize) -> Result<Tensor<'g>> {
        let x = self.value();
        let nd = x.ndim();
        if nd < 2 || kernel == 0 || stride == 0 {
            return Err(Error::shape("avg_pool2d", format!("{:?}", x.shape())));
        }
        let (h, w) = (x.shape()[nd - 2], x.shape()[nd - 1]);
        if h < kernel || w < kernel {
            return Err(Error::shape("avg_pool2d", format!("kernel {kernel} on {h}x{w}")));
        }
        let (ho, wo) = ((h - kernel) / stride + 1, (w - kernel) / stride + 1);
        let planes = x.len() / (h * w);
        let norm = 1.0 / (kernel * kernel) as f64;
        let mut out = vec![0.0; planes * ho * wo];
        for p in 0..planes {
            let src = &x.data()[p * h * w..(p + 1) * h * w];
            for i in 0..ho {
                for j in 0..wo {
                    let mut s = 0.0;
                    for a in 0..kernel {
                        let row = &src[(i * stride + a) * w + j * stride..];
                        s += row[..kernel].iter().sum::<f64>();
                    }
                    out[(p * ho + i) * wo + j] = s * norm;
                }
            }
        }
        let mut shape = x.shape().to_vec();
        shape[nd - 2] = ho;
        shape[nd - 1] = wo;
        self.graph.record("avg_pool2d", Array::from_vec(&shape, out)?, &[*self], move |g, sink| {
            if let Some(buf) = sink.buf(0) {
                for p in 0..planes {
                    for i in 0..ho {
                        for j in 0..wo {
                            let gv = g[(p * ho + i) * wo + j] * norm;
                            for a in 0..kernel {
                                let base = p * h * w + (i * stride + a) * w + j * stride;
                                buf[base..base + kernel].iter_mut().for_each(|d| *d += gv);
                            }
                        }
                    }
                }
            }
        })
    }

    /// Bilinear resize of the last two axes to `(ho, wo)` using half-pixel
    /// centers (`align_corners = false`).
    pub fn resize_bilinear(&self, ho: usize, wo: usize) -> Result<Tensor<'g>> {
        let x = self.value();
        let nd = x.ndim();
        if nd < 2 || ho == 0 || wo == 0 {
            return Err(Error::shape("resize_bilinear", format!("{:?} -> {ho}x{wo}", x.shape())));
        }
        let (h, w) = (x.shape()[nd - 2], x.shape()[nd - 1]);
        let planes = x.len() / (h * w);
        let ys = resize_taps(h, ho);
        let xs = resize_taps(w, wo);
        let mut out = vec![0.0; planes * ho * wo];
        for p in 0..planes {
            let src = &x.data()[p * h * w..(p + 1) * h * w];
            for (i, &(y0, y1, ly)) in ys.iter().enumerate() {
                for (j, &(x0, x1, lx)) in xs.iter().enumerate() {
                    let top = src[y0 * w + x0] * (1.0 - lx) + src[y0 * w + x1] * lx;
                    let bot = src[y1 * w + x0] * (1.0 - lx) + src[y1 * w + x1] * lx;
                    out[(p * ho + i) * wo + j] = top * (1.0 - ly) + bot * ly;
                }
            }
        }
        let mut shape = x.shape().to_vec();
        shape[nd - 2] = ho;
        shape[nd - 1] = wo;
        self.graph.record("resize_bilinear", Array::from_vec(&shape, out)?, &[*self], move |g, sink| {
            if let Some(buf) = sink.buf(0) {
                for p in 0..planes {
                    let dst = &mut buf[p * h * w..(p + 1) * h * w];
                    for (i, &(y0, y1, ly)) in ys.iter().enumerate() {
                        for (j, &(x0, x1, lx)) in xs.iter().enumerate() {
                            let gv = g[(p * ho + i) * wo + j];
                            dst[y0 * w + x0] += gv * (1.0 - ly) * (1.0 - lx);
                            dst[y0 * w + x1] += gv * (1.0 - ly) * lx;
                            dst[y1 * w + x0] += gv * ly * (1.0 - lx);
                            dst[y1 * w + x1] += gv * ly * lx;
                        }
                    }
                }
            }
        })
    }

    /// Bilinear ×2 upsampling of the last two axes.
    pub fn upsample2x(&self) -> Result<Tensor<'g>> {
        let s = self.shape();
        let nd = s.len();
        if nd < 2 {
            return Err(Error::shape("upsample2x", "rank < 2"));
        }
        self.resize_bilinear(2 * s[nd - 2], 2 * s[nd - 1])
    }
}

fn resize_taps(n_in: usize, n_out: usize) -> Vec<(usize, usize, f64)> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|i| {
            let src = ((i as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(n_in - 1);
            let i1 = (i0 + 1).min(n_in - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndiff::Graph;

    #[test]
    fn averaging_kernel_center_is_neighborhood_mean() {
        let g = Graph::new();
        // 4×4 ramp: value = 4*i + j
        let x = g.constant(Array::from_fn(&[1, 1, 4, 4], |i| i as f64));
        let k = g.constant(Array::full(&[1, 1, 3, 3], 1.0 / 9.0));
        let y = x.conv2d(&k, None, 1, 1).unwrap().to_array();
        assert_eq!(y.shape(), &[1, 1, 4, 4]);
        let mean: f64 = [0, 1, 2, 4, 5, 6, 8, 9, 10].iter().map(|&v| v as f64).sum::<f64>() / 9.0;
        assert!((y.at(&[0, 0, 1, 1]) - mean).abs() < 1e-12);
    }

    #[test]
    fn strided_conv_output_extent() {
        let g = Graph::new();
        let x = g.constant(Array::zeros(&[1, 2, 12, 40]));
        let k = g.constant(Array::zeros(&[3, 2, 3, 3]));
        assert_eq!(x.conv2d(&k, None, 2, 1).unwrap().shape(), vec![1, 3, 6, 20]);
    }

    #[test]
    fn transpose_conv_upsamples_by_stride() {
        let g = Graph::new();
        let x = g.constant(Array::ones(&[1, 2, 3, 5]));
        let k = g.constant(Array::ones(&[2, 4, 4, 4]));
        let y = x.conv_transpose2d(&k, None, 4, 0).unwrap().to_array();
        assert_eq!(y.shape(), &[1, 4, 12, 20]);
        assert!(y.data().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn resize_constant_stays_constant() {
        let g = Graph::new();
        let x = g.constant(Array::full(&[1, 3, 5], 0.4));
        let y = x.resize_bilinear(10, 7).unwrap().to_array();
        assert!(y.data().iter().all(|&v| (v - 0.4).abs() < 1e-15));
    }

    #[test]
    fn avg_pool_halves() {
        let g = Graph::new();
        let x = g.constant(Array::from_fn(&[2, 2], |i| i as f64));
        let y = x.avg_pool2d(2, 2).unwrap().to_array();
        assert_eq!(y.data(), &[1.5]);
    }
}
