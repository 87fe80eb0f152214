use super::array::Array;
use super::graph::Tensor;
use crate::error::{Error, Result};

/// `c = alpha * op(a) * op(b) + beta * c` for row-major matrices, where
/// `op(a)` is `m×k` and `op(b)` is `k×n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    trans_a: bool,
    trans_b: bool,
    m: usize,
    n: usize,
    k: usize,
    alpha: f64,
    a: &[f64],
    b: &[f64],
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: bounds asserted above; strides describe the row-major layouts.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl<'g> Tensor<'g> {
    /// Matrix product. Supports `[m,k]·[k,n]`, `[B,m,k]·[k,n]` (shared
    /// right operand) and `[B,m,k]·[B,k,n]` (batched).
    pub fn matmul(&self, other: &Tensor<'g>) -> Result<Tensor<'g>> {
        let a = self.value();
        let b = other.value();
        let (sa, sb) = (a.shape().to_vec(), b.shape().to_vec());
        let mismatch = || Error::shape("matmul", format!("{sa:?} x {sb:?}"));
        let (batch, m, k, n, shared_b) = match (sa.len(), sb.len()) {
            (2, 2) => (1, sa[0], sa[1], sb[1], true),
            (3, 2) => (sa[0], sa[1], sa[2], sb[1], true),
            (3, 3) if sa[0] == sb[0] => (sa[0], sa[1], sa[2], sb[2], false),
            _ => return Err(mismatch()),
        };
        let kb = if shared_b { sb[0] } else { sb[1] };
        if k != kb {
            return Err(mismatch());
        }
        let mut out = vec![0.0; batch * m * n];
        let b_stride = if shared_b { 0 } else { k * n };
        if shared_b {
            // Fold the batch into rows.
            gemm(false, false, batch * m, n, k, 1.0, a.data(), b.data(), 0.0, &mut out);
        } else {
            for i in 0..batch {
                gemm(
                    false,
                    false,
                    m,
                    n,
                    k,
                    1.0,
                    &a.data()[i * m * k..],
                    &b.data()[i * b_stride..],
                    0.0,
                    &mut out[i * m * n..],
                );
            }
        }
        let mut shape = sa.clone();
        *shape.last_mut().unwrap() = n;
        self.graph.record("matmul", Array::from_vec(&shape, out)?, &[*self, *other], move |g, sink| {
            if let Some(da) = sink.buf(0) {
                if shared_b {
                    gemm(false, true, batch * m, k, n, 1.0, g, b.data(), 1.0, da);
                } else {
                    for i in 0..batch {
                        gemm(
                            false,
                            true,
                            m,
                            k,
                            n,
                            1.0,
                            &g[i * m * n..],
                            &b.data()[i * k * n..],
                            1.0,
                            &mut da[i * m * k..],
                        );
                    }
                }
            }
            if let Some(db) = sink.buf(1) {
                if shared_b {
                    gemm(true, false, k, n, batch * m, 1.0, a.data(), g, 1.0, db);
                } else {
                    for i in 0..batch {
                        gemm(
                            true,
                            false,
                            k,
                            n,
                            m,
                            1.0,
                            &a.data()[i * m * k..],
                            &g[i * m * n..],
                            1.0,
                            &mut db[i * k * n..],
                        );
                    }
                }
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndiff::Graph;

    #[test]
    fn ones_matmul() {
        let g = Graph::new();
        let a = g.constant(Array::ones(&[2, 3]));
        let b = g.constant(Array::ones(&[3, 2]));
        let c = a.matmul(&b).unwrap().to_array();
        assert_eq!(c.shape(), &[2, 2]);
        assert!(c.data().iter().all(|&v| v == 3.0));
    }

    #[test]
    fn batched_matches_loop() {
        let g = Graph::new();
        let a = Array::from_fn(&[2, 2, 3], |i| i as f64 * 0.5 - 1.0);
        let b = Array::from_fn(&[2, 3, 2], |i| (i % 5) as f64);
        let c = g.constant(a.clone()).matmul(&g.constant(b.clone())).unwrap().to_array();
        for bi in 0..2 {
            for i in 0..2 {
                for j in 0..2 {
                    let e: f64 = (0..3).map(|t| a.at(&[bi, i, t]) * b.at(&[bi, t, j])).sum();
                    assert!((c.at(&[bi, i, j]) - e).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn rejects_inner_mismatch() {
        let g = Graph::new();
        let a = g.constant(Array::ones(&[2, 3]));
        let b = g.constant(Array::ones(&[2, 2]));
        assert!(a.matmul(&b).is_err());
    }
}
