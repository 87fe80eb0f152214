use super::array::Array;
use super::graph::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy)]
struct Tap {
    i00: usize,
    i01: usize,
    i10: usize,
    i11: usize,
    wx: f64,
    wy: f64,
}

fn tap(x: f64, y: f64, h: usize, w: usize) -> Tap {
    let fx = x.floor();
    let fy = y.floor();
    let clamp = |v: f64, n: usize| v.max(0.0).min((n - 1) as f64) as usize;
    let (x0, x1) = (clamp(fx, w), clamp(fx + 1.0, w));
    let (y0, y1) = (clamp(fy, h), clamp(fy + 1.0, h));
    Tap {
        i00: y0 * w + x0,
        i01: y0 * w + x1,
        i10: y1 * w + x0,
        i11: y1 * w + x1,
        wx: x - fx,
        wy: y - fy,
    }
}

impl<'g> Tensor<'g> {
    /// Bilinearly sample `self` (`[C,Hs,Ws]`) at continuous pixel
    /// coordinates `coords` (`[2,H,W]`, x then y) with clamp-to-edge borders.
    /// Pixel `(i, j)` sits at `(x = j, y = i)`.
    pub fn sample_bilinear(&self, coords: &Tensor<'g>) -> Result<Tensor<'g>> {
        let img = self.value();
        let xy = coords.value();
        let &[c, hs, ws] = img.shape() else {
            return Err(Error::shape("sample_bilinear", format!("image {:?} is not CHW", img.shape())));
        };
        let &[2, h, w] = xy.shape() else {
            return Err(Error::shape("sample_bilinear", format!("coords {:?} is not 2xHxW", xy.shape())));
        };
        let n = h * w;
        let plane = hs * ws;
        let taps: Vec<Tap> = (0..n).map(|p| tap(xy.data()[p], xy.data()[n + p], hs, ws)).collect();
        let mut out = vec![0.0; c * n];
        for ch in 0..c {
            let src = &img.data()[ch * plane..(ch + 1) * plane];
            for (p, t) in taps.iter().enumerate() {
                let top = src[t.i00] * (1.0 - t.wx) + src[t.i01] * t.wx;
                let bot = src[t.i10] * (1.0 - t.wx) + src[t.i11] * t.wx;
                out[ch * n + p] = top * (1.0 - t.wy) + bot * t.wy;
            }
        }
        self.graph.record(
            "sample_bilinear",
            Array::from_vec(&[c, h, w], out)?,
            &[*self, *coords],
            move |g, sink| {
                if let Some(buf) = sink.buf(0) {
                    for ch in 0..c {
                        let dst = &mut buf[ch * plane..(ch + 1) * plane];
                        for (p, t) in taps.iter().enumerate() {
                            let gv = g[ch * n + p];
                            dst[t.i00] += gv * (1.0 - t.wx) * (1.0 - t.wy);
                            dst[t.i01] += gv * t.wx * (1.0 - t.wy);
                            dst[t.i10] += gv * (1.0 - t.wx) * t.wy;
                            dst[t.i11] += gv * t.wx * t.wy;
                        }
                    }
                }
                if let Some(buf) = sink.buf(1) {
                    for ch in 0..c {
                        let src = &img.data()[ch * plane..(ch + 1) * plane];
                        for (p, t) in taps.iter().enumerate() {
                            let gv = g[ch * n + p];
                            let dx = (1.0 - t.wy) * (src[t.i01] - src[t.i00])
                                + t.wy * (src[t.i11] - src[t.i10]);
                            let dy = (1.0 - t.wx) * (src[t.i10] - src[t.i00])
                                + t.wx * (src[t.i11] - src[t.i01]);
                            buf[p] += gv * dx;
                            buf[n + p] += gv * dy;
                        }
                    }
                }
            },
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndiff::Graph;

    #[test]
    fn midpoint_of_two_pixels() {
        let g = Graph::new();
        let img = g.constant(Array::from_vec(&[1, 1, 2], vec![0.2, 0.6]).unwrap());
        let xy = g.constant(Array::from_vec(&[2, 1, 1], vec![0.5, 0.0]).unwrap());
        let v = img.sample_bilinear(&xy).unwrap().item();
        assert!((v - 0.4).abs() < 1e-15);
    }

    #[test]
    fn integer_coordinates_are_exact() {
        let g = Graph::new();
        let img = Array::from_fn(&[2, 3, 4], |i| i as f64 * 0.1);
        let it = g.constant(img.clone());
        let xy = g.constant(Array::from_vec(&[2, 1, 2], vec![3.0, 1.0, 2.0, 0.0]).unwrap());
        let v = it.sample_bilinear(&xy).unwrap().to_array();
        assert_eq!(v.at(&[1, 0, 0]), img.at(&[1, 2, 3]));
        assert_eq!(v.at(&[0, 0, 1]), img.at(&[0, 0, 1]));
    }

    #[test]
    fn out_of_range_clamps_to_edge() {
        let g = Graph::new();
        let img = g.constant(Array::from_vec(&[1, 1, 3], vec![1.0, 2.0, 3.0]).unwrap());
        let xy = g.constant(Array::from_vec(&[2, 1, 2], vec![-5.0, 9.5, 0.0, 0.0]).unwrap());
        let v = img.sample_bilinear(&xy).unwrap().to_array();
        assert_eq!(v.data(), &[1.0, 3.0]);
    }
}
