use std::rc::Rc;

use super::array::Array;
use super::graph::Tensor;
use crate::error::{Error, Result};

fn same_shape(op: &'static str, a: &Array, b: &Array) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

impl<'g> Tensor<'g> {
    /// Elementwise op whose derivative is expressed through input `x` and output `y`.
    fn unary(
        &self,
        op: &'static str,
        f: impl Fn(f64) -> f64,
        df: fn(f64, f64) -> f64,
    ) -> Result<Tensor<'g>> {
        let x = self.value();
        let y = Rc::new(x.map(f));
        let y_saved = Rc::clone(&y);
        self.graph.record(op, y, &[*self], move |g, sink| {
            if let Some(buf) = sink.buf(0) {
                for i in 0..buf.len() {
                    buf[i] += g[i] * df(x.data()[i], y_saved.data()[i]);
                }
            }
        })
    }

    pub fn add(&self, other: &Tensor<'g>) -> Result<Tensor<'g>> {
        let (a, b) = (self.value(), other.value());
        same_shape("add", &a, &b)?;
        let out = a.zip_map(&b, |x, y| x + y)?;
        self.graph.record("add", out, &[*self, *other], |g, sink| {
            for i in 0..2 {
                if let Some(buf) = sink.buf(i) {
                    buf.iter_mut().zip(g).for_each(|(d, &gv)| *d += gv);
                }
            }
        })
    }

    pub fn sub(&self, other: &Tensor<'g>) -> Result<Tensor<'g>> {
        let (a, b) = (self.value(), other.value());
        same_shape("sub", &a, &b)?;
        let out = a.zip_map(&b, |x, y| x - y)?;
        self.graph.record("sub", out, &[*self, *other], |g, sink| {
            if let Some(buf) = sink.buf(0) {
                buf.iter_mut().zip(g).for_each(|(d, &gv)| *d += gv);
            }
            if let Some(buf) = sink.buf(1) {
                buf.iter_mut().zip(g).for_each(|(d, &gv)| *d -= gv);
            }
        })
    }

    pub fn mul(&self, other: &Tensor<'g>) -> Result<Tensor<'g>> {
        let (a, b) = (self.value(), other.value());
        same_shape("mul", &a, &b)?;
        let out = a.zip_map(&b, |x, y| x * y)?;
        self.graph.record("mul", out, &[*self, *other], move |g, sink| {
            if let Some(buf) = sink.buf(0) {
                for i in 0..buf.len() {
                    buf[i] += g[i] * b.data()[i];
                }
            }
            if let Some(buf) = sink.buf(1) {
                for i in 0..buf.len() {
                    buf[i] += g[i] * a.data()[i];
                }
            }
        })
    }

    pub fn div(&self, other: &Tensor<'g>) -> Result<Tensor<'g>> {
        let (a, b) = (self.value(), other.value());
        same_shape("div", &a, &b)?;
        let out = a.zip_map(&b, |x, y| x / y)?;
        self.graph.record("div", out, &[*self, *other], move |g, sink| {
            if let Some(buf) = sink.buf(0) {
                for i in 0..buf.len() {
                    buf[i] += g[i] / b.data()[i];
                }
            }
            if let Some(buf) = sink.buf(1) {
                for i in 0..buf.len() {
                    let bv = b.data()[i];
                    buf[i] -= g[i] * a.data()[i] / (bv * bv);
                }
            }
        })
    }

    pub fn neg(&self) -> Result<Tensor<'g>> {
        self.mul_scalar(-1.0)
    }

    pub fn add_scalar(&self, c: f64) -> Result<Tensor<'g>> {
        let out = self.value().map(|x| x + c);
        self.graph.record("add_scalar", out, &[*self], |g, sink| {
            if let Some(buf) = sink.buf(0) {
                buf.iter_mut().zip(g).for_each(|(d, &gv)| *d += gv);
            }
        })
    }

    pub fn mul_scalar(&self, c: f64) -> Result<Tensor<'g>> {
        let out = self.value().map(|x| x * c);
        self.graph.record("mul_scalar", out, &[*self], move |g, sink| {
            if let Some(buf) = sink.buf(0) {
                buf.iter_mut().zip(g).for_each(|(d, &gv)| *d += c * gv);
            }
        })
    }

    /// `self` multiplied by a constant array of the same shape (masks, weights).
    pub fn mul_const(&self, c: &Array) -> Result<Tensor<'g>> {
        let x = self.value();
        same_shape("mul_const", &x, c)?;
        let out = x.zip_map(c, |a, b| a * b)?;
        let c = c.clone();
        self.graph.record("mul_const", out, &[*self], move |g, sink| {
            if let Some(buf) = sink.buf(0) {
                for i in 0..buf.len() {
                    buf[i] += g[i] * c.data()[i];
                }
            }
        })
    }

    pub fn add_const(&self, c: &Array) -> Result<Tensor<'g>> {
        let x = self.value();
        same_shape("add_const", &x, c)?;
        let out = x.zip_map(c, |a, b| a + b)?;
        self.graph.record("add_const", out, &[*self], |g, sink| {
            if let Some(buf) = sink.buf(0) {
                buf.iter_mut().zip(g).for_each(|(d, &gv)| *d += gv);
            }
        })
    }

    pub fn powf(&self, p: f64) -> Result<Tensor<'g>> {
        let x = self.value();
        let out = x.map(|v| v.powf(p));
        self.graph.record("powf", out, &[*self], move |g, sink| {
            if let Some(buf) = sink.buf(0) {
                for i in 0..buf.len() {
                    buf[i] += g[i] * p * x.data()[i].powf(p - 1.0);
                }
            }
        })
    }

    pub fn square(&self) -> Result<Tensor<'g>> {
        self.unary("square", |x| x * x, |x, _| 2.0 * x)
    }

    pub fn recip(&self) -> Result<Tensor<'g>> {
        self.unary("recip", |x| 1.0 / x, |_, y| -y * y)
    }

    pub fn abs(&self) -> Result<Tensor<'g>> {
        self.unary("abs", f64::abs, |x, _| {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        })
    }

    pub fn exp(&self) -> Result<Tensor<'g>> {
        self.unary("exp", f64::exp, |_, y| y)
    }

    pub fn log(&self) -> Result<Tensor<'g>> {
        self.unary("log", f64::ln, |x, _| 1.0 / x)
    }

    pub fn sqrt(&self) -> Result<Tensor<'g>> {
        self.unary("sqrt", f64::sqrt, |_, y| 0.5 / y)
    }

    pub fn sin(&self) -> Result<Tensor<'g>> {
        self.unary("sin", f64::sin, |x, _| x.cos())
    }

    pub fn cos(&self) -> Result<Tensor<'g>> {
        self.unary("cos", f64::cos, |x, _| -x.sin())
    }

    pub fn sigmoid(&self) -> Result<Tensor<'g>> {
        self.unary("sigmoid", sigmoid, |_, y| y * (1.0 - y))
    }

    pub fn softplus(&self) -> Result<Tensor<'g>> {
        self.unary("softplus", softplus, |x, _| sigmoid(x))
    }

    pub fn relu(&self) -> Result<Tensor<'g>> {
        self.unary("relu", |x| x.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn elu(&self) -> Result<Tensor<'g>> {
        self.unary(
            "elu",
            |x| if x > 0.0 { x } else { x.exp_m1() },
            |x, y| if x > 0.0 { 1.0 } else { y + 1.0 },
        )
    }

    /// GELU, tanh approximation.
    pub fn gelu(&self) -> Result<Tensor<'g>> {
        self.unary("gelu", gelu, gelu_grad)
    }

    /// Clamp into `[lo, hi]`; gradient is zero outside the interval.
    pub fn clamp(&self, lo: f64, hi: f64) -> Result<Tensor<'g>> {
        let x = self.value();
        let out = x.map(|v| v.clamp(lo, hi));
        self.graph.record("clamp", out, &[*self], move |g, sink| {
            if let Some(buf) = sink.buf(0) {
                for i in 0..buf.len() {
                    let v = x.data()[i];
                    if v >= lo && v <= hi {
                        buf[i] += g[i];
                    }
                }
            }
        })
    }

    /// Broadcast a one-element tensor to `shape`.
    pub fn expand_scalar(&self, shape: &[usize]) -> Result<Tensor<'g>> {
        let x = self.value();
        if x.len() != 1 {
            return Err(Error::shape("expand_scalar", format!("source {:?} is not scalar", x.shape())));
        }
        let out = Array::full(shape, x.item());
        self.graph.record("expand_scalar", out, &[*self], |g, sink| {
            if let Some(buf) = sink.buf(0) {
                buf[0] += g.iter().sum::<f64>();
            }
        })
    }

    /// Multiply every element by a one-element tensor.
    pub fn scale_by(&self, s: &Tensor<'g>) -> Result<Tensor<'g>> {
        self.mul(&s.expand_scalar(&self.shape())?)
    }

    /// Add `bias` (length = extent of `axis`) along `axis`.
    pub fn add_bias(&self, bias: &Tensor<'g>, axis: usize) -> Result<Tensor<'g>> {
        let x = self.value();
        let b = bias.value();
        if axis >= x.ndim() || b.len() != x.shape()[axis] {
            return Err(Error::shape(
                "add_bias",
                format!("bias {:?} on {:?} axis {axis}", b.shape(), x.shape()),
            ));
        }
        let n = x.shape()[axis];
        let inner: usize = x.shape()[axis + 1..].iter().product();
        let mut out = (*x).clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v += b.data()[(i / inner) % n];
        }
        self.graph.record("add_bias", out, &[*self, *bias], move |g, sink| {
            if let Some(buf) = sink.buf(0) {
                buf.iter_mut().zip(g).for_each(|(d, &gv)| *d += gv);
            }
            if let Some(buf) = sink.buf(1) {
                for (i, &gv) in g.iter().enumerate() {
                    buf[(i / inner) % n] += gv;
                }
            }
        })
    }

    /// Multiply by `scale` (length = extent of `axis`) along `axis`.
    pub fn mul_bias(&self, scale: &Tensor<'g>, axis: usize) -> Result<Tensor<'g>> {
        let x = self.value();
        let s = scale.value();
        if axis >= x.ndim() || s.len() != x.shape()[axis] {
            return Err(Error::shape(
                "mul_bias",
                format!("scale {:?} on {:?} axis {axis}", s.shape(), x.shape()),
            ));
        }
        let n = x.shape()[axis];
        let inner: usize = x.shape()[axis + 1..].iter().product();
        let mut out = (*x).clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v *= s.data()[(i / inner) % n];
        }
        self.graph.record("mul_bias", out, &[*self, *scale], move |g, sink| {
            if let Some(buf) = sink.buf(0) {
                for (i, d) in buf.iter_mut().enumerate() {
                    *d += g[i] * s.data()[(i / inner) % n];
                }
            }
            if let Some(buf) = sink.buf(1) {
                for (i, &gv) in g.iter().enumerate() {
                    buf[(i / inner) % n] += gv * x.data()[i];
                }
            }
        })
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64, _y: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}
