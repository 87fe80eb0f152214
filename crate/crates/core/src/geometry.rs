//! Pinhole camera model, SE(3) poses and differentiable view synthesis.
//!
//! Pixel `(i, j)` has continuous coordinates `(x = j, y = i)`; there is no
//! half-pixel offset. A pose maps target-camera points into the source
//! camera: `X_s = R X_t + t`, so a target pixel lands in the source image at
//! `p_s ~ K_s (R D(p_t) K_t⁻¹ p_t + t)`.

use crate::error::{Error, Result};
use crate::ndiff::{Array, Graph, Tensor};

/// Below this rotation angle the Rodrigues formula switches to its
/// second-order Taylor expansion.
pub const SMALL_ANGLE: f64 = 1e-7;
/// Source points with depth at or below this are invalid.
pub const MIN_PROJECTED_DEPTH: f64 = 1e-8;

/// Pinhole intrinsics in pixels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        let k = Self { fx, fy, cx, cy };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "focal lengths must be positive, got fx={} fy={}",
                self.fx, self.fy
            )));
        }
        if !(self.cx.is_finite() && self.cy.is_finite()) {
            return Err(Error::InvalidArgument("principal point must be finite".into()));
        }
        Ok(())
    }

    pub fn matrix(&self) -> [[f64; 3]; 3] {
        [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
    }

    pub fn inverse_matrix(&self) -> [[f64; 3]; 3] {
        [
            [1.0 / self.fx, 0.0, -self.cx / self.fx],
            [0.0, 1.0 / self.fy, -self.cy / self.fy],
            [0.0, 0.0, 1.0],
        ]
    }

    /// Intrinsics of the same camera after resizing the image by `(sx, sy)`.
    pub fn scaled(&self, sx: f64, sy: f64) -> Self {
        Self { fx: self.fx * sx, fy: self.fy * sy, cx: self.cx * sx, cy: self.cy * sy }
    }

    /// `[fx, fy, cx, cy]` as a 4-vector.
    pub fn to_array(&self) -> Array {
        Array::from_vec(&[4], vec![self.fx, self.fy, self.cx, self.cy]).expect("4 values")
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        match v {
            &[fx, fy, cx, cy] => Self::new(fx, fy, cx, cy),
            _ => Err(Error::InvalidArgument(format!("intrinsics need 4 values, got {}", v.len()))),
        }
    }

    /// Project a camera-frame point to pixel coordinates.
    pub fn project(&self, p: [f64; 3]) -> Option<[f64; 2]> {
        (p[2] > MIN_PROJECTED_DEPTH)
            .then(|| [self.fx * p[0] / p[2] + self.cx, self.fy * p[1] / p[2] + self.cy])
    }

    /// Camera-frame point at `depth` along the ray through pixel `(x, y)`.
    pub fn backproject(&self, x: f64, y: f64, depth: f64) -> [f64; 3] {
        [depth * (x - self.cx) / self.fx, depth * (y - self.cy) / self.fy, depth]
    }
}

/// Rigid motion as axis-angle rotation plus translation.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Pose {
    pub rotation: [f64; 3],
    pub translation: [f64; 3],
}

impl Pose {
    pub fn identity() -> Self {
        Self::default()
    }

    pub fn new(rotation: [f64; 3], translation: [f64; 3]) -> Result<Self> {
        let p = Self { rotation, translation };
        let angle = p.rotation.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(angle < std::f64::consts::PI) {
            return Err(Error::InvalidArgument(format!(
                "rotation angle {angle} outside the principal branch"
            )));
        }
        Ok(p)
    }

    pub fn translation_only(t: [f64; 3]) -> Self {
        Self { rotation: [0.0; 3], translation: t }
    }

    /// `[rx, ry, rz, tx, ty, tz]`.
    pub fn to_array(&self) -> Array {
        let v = [self.rotation, self.translation].concat();
        Array::from_vec(&[6], v).expect("6 values")
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        match v {
            &[rx, ry, rz, tx, ty, tz] => Self::new([rx, ry, rz], [tx, ty, tz]),
            _ => Err(Error::InvalidArgument(format!("pose needs 6 values, got {}", v.len()))),
        }
    }

    pub fn rotation_matrix(&self) -> [[f64; 3]; 3] {
        rodrigues(self.rotation)
    }

    /// Apply the motion to a point: `R p + t`.
    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let r = self.rotation_matrix();
        let mut out = self.translation;
        for (i, o) in out.iter_mut().enumerate() {
            *o += r[i][0] * p[0] + r[i][1] * p[1] + r[i][2] * p[2];
        }
        out
    }

    /// The reverse motion: rotation `-r`, translation `-Rᵀ t`.
    pub fn inverse(&self) -> Self {
        let r = self.rotation_matrix();
        let t = self.translation;
        let mut ti = [0.0; 3];
        for (i, v) in ti.iter_mut().enumerate() {
            *v = -(r[0][i] * t[0] + r[1][i] * t[1] + r[2][i] * t[2]);
        }
        Self { rotation: self.rotation.map(|v| -v), translation: ti }
    }

    pub fn matrix(&self) -> [[f64; 4]; 4] {
        let r = self.rotation_matrix();
        let t = self.translation;
        [
            [r[0][0], r[0][1], r[0][2], t[0]],
            [r[1][0], r[1][1], r[1][2], t[1]],
            [r[2][0], r[2][1], r[2][2], t[2]],
            [0.0, 0.0, 0.0, 1.0],
        ]
    }
}

/// Rodrigues rotation of an axis-angle vector in plain `f64`.
pub fn rodrigues(r: [f64; 3]) -> [[f64; 3]; 3] {
    let theta2 = r[0] * r[0] + r[1] * r[1] + r[2] * r[2];
    let theta = theta2.sqrt();
    let (a, b) = if theta < SMALL_ANGLE {
        (1.0, 0.5)
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    let s = [[0.0, -r[2], r[1]], [r[2], 0.0, -r[0]], [-r[1], r[0], 0.0]];
    let mut m = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let s2: f64 = (0..3).map(|k| s[i][k] * s[k][j]).sum();
            m[i][j] = if i == j { 1.0 } else { 0.0 } + a * s[i][j] + b * s2;
        }
    }
    m
}

fn scalar_at<'g>(v: &Tensor<'g>, i: usize) -> Result<Tensor<'g>> {
    v.slice(0, i, i + 1)
}

fn assemble_3x3<'g>(g: &'g Graph, entries: [Option<Tensor<'g>>; 9], fill: [f64; 9]) -> Result<Tensor<'g>> {
    let parts: Vec<Tensor<'g>> = entries
        .iter()
        .zip(fill)
        .map(|(e, c)| e.unwrap_or_else(|| g.constant(Array::scalar(c))))
        .collect();
    Tensor::concat(&parts, 0)?.reshape(&[3, 3])
}

fn expect_len(op: &'static str, t: &Tensor<'_>, n: usize) -> Result<()> {
    if t.numel() != n {
        return Err(Error::shape(op, format!("expected {n} values, got {:?}", t.shape())));
    }
    Ok(())
}

/// `K` from a differentiable `[fx, fy, cx, cy]` vector.
pub fn intrinsics_matrix<'g>(k: &Tensor<'g>) -> Result<Tensor<'g>> {
    expect_len("intrinsics_matrix", k, 4)?;
    check_focal(k)?;
    let k = k.reshape(&[4])?;
    let g = k.graph();
    let (fx, fy, cx, cy) = (scalar_at(&k, 0)?, scalar_at(&k, 1)?, scalar_at(&k, 2)?, scalar_at(&k, 3)?);
    assemble_3x3(
        g,
        [Some(fx), None, Some(cx), None, Some(fy), Some(cy), None, None, None],
        [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0],
    )
}

/// Analytic `K⁻¹` from a differentiable `[fx, fy, cx, cy]` vector.
pub fn intrinsics_inverse<'g>(k: &Tensor<'g>) -> Result<Tensor<'g>> {
    expect_len("intrinsics_inverse", k, 4)?;
    check_focal(k)?;
    let k = k.reshape(&[4])?;
    let g = k.graph();
    let inv_fx = scalar_at(&k, 0)?.recip()?;
    let inv_fy = scalar_at(&k, 1)?.recip()?;
    let ox = scalar_at(&k, 2)?.mul(&inv_fx)?.neg()?;
    let oy = scalar_at(&k, 3)?.mul(&inv_fy)?.neg()?;
    assemble_3x3(
        g,
        [Some(inv_fx), None, Some(ox), None, Some(inv_fy), Some(oy), None, None, None],
        [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0],
    )
}

fn check_focal(k: &Tensor<'_>) -> Result<()> {
    let v = k.value();
    if !(v.data()[0] > 0.0 && v.data()[1] > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "non-positive focal length ({}, {})",
            v.data()[0],
            v.data()[1]
        )));
    }
    Ok(())
}

/// Differentiable Rodrigues rotation matrix of an axis-angle 3-vector.
pub fn rotation_matrix<'g>(r: &Tensor<'g>) -> Result<Tensor<'g>> {
    expect_len("rotation_matrix", r, 3)?;
    let r = r.reshape(&[3])?;
    let g = r.graph();
    let (rx, ry, rz) = (scalar_at(&r, 0)?, scalar_at(&r, 1)?, scalar_at(&r, 2)?);
    let skew = assemble_3x3(
        g,
        [None, Some(rz.neg()?), Some(ry), Some(rz), None, Some(rx.neg()?), Some(ry.neg()?), Some(rx), None],
        [0.0; 9],
    )?;
    let skew2 = skew.matmul(&skew)?;
    let eye = g.constant(identity3());
    let theta2 = r.square()?.sum()?;
    if theta2.item().sqrt() < SMALL_ANGLE {
        return eye.add(&skew)?.add(&skew2.mul_scalar(0.5)?);
    }
    let theta = theta2.sqrt()?;
    let a = theta.sin()?.div(&theta)?;
    let b = theta.cos()?.neg()?.add_scalar(1.0)?.div(&theta2)?;
    eye.add(&skew.scale_by(&a)?)?.add(&skew2.scale_by(&b)?)
}

fn identity3() -> Array {
    Array::from_fn(&[3, 3], |i| if i % 4 == 0 { 1.0 } else { 0.0 })
}

/// 4×4 homogeneous transform of a differentiable 6-vector pose
/// `[rx, ry, rz, tx, ty, tz]`.
pub fn pose_to_transform<'g>(pose: &Tensor<'g>) -> Result<Tensor<'g>> {
    expect_len("pose_to_transform", pose, 6)?;
    let p = pose.reshape(&[6])?;
    let angle = p.value().data()[..3].iter().map(|v| v * v).sum::<f64>().sqrt();
    if angle >= std::f64::consts::PI {
        return Err(Error::InvalidArgument(format!("rotation angle {angle} outside principal branch")));
    }
    let g = p.graph();
    let rot = rotation_matrix(&p.slice(0, 0, 3)?)?;
    let t = p.slice(0, 3, 6)?.reshape(&[3, 1])?;
    let top = Tensor::concat(&[rot, t], 1)?;
    let bottom = g.constant(Array::from_vec(&[1, 4], vec![0.0, 0.0, 0.0, 1.0])?);
    Tensor::concat(&[top, bottom], 0)
}

/// Homogeneous pixel grid `[3, H*W]` in row-major pixel order.
pub fn pixel_grid(h: usize, w: usize) -> Array {
    let n = h * w;
    Array::from_fn(&[3, n], |i| {
        let (row, p) = (i / n, i % n);
        match row {
            0 => (p % w) as f64,
            1 => (p / w) as f64,
            _ => 1.0,
        }
    })
}

/// Camera-frame points `[3, H*W]` for every pixel of `depth` (`[H, W]`).
pub fn backproject<'g>(depth: &Tensor<'g>, k: &Tensor<'g>) -> Result<Tensor<'g>> {
    let shape = depth.shape();
    let &[h, w] = shape.as_slice() else {
        return Err(Error::shape("backproject", format!("depth {shape:?} is not HxW")));
    };
    let g = depth.graph();
    let rays = intrinsics_inverse(k)?.matmul(&g.constant(pixel_grid(h, w)))?;
    let d = depth.reshape(&[1, h * w])?;
    let d3 = Tensor::concat(&[d, d, d], 0)?;
    rays.mul(&d3)
}

/// Source-image pixel coordinates `[2, N]` of camera-frame `points`
/// (`[3, N]`) after moving them by `pose` and projecting through `k`.
/// The returned mask flags points with depth at or below
/// [`MIN_PROJECTED_DEPTH`]; bounds are checked by the caller.
pub fn project<'g>(points: &Tensor<'g>, k: &Tensor<'g>, pose: &Tensor<'g>) -> Result<(Tensor<'g>, Vec<bool>)> {
    let shape = points.shape();
    let &[3, n] = shape.as_slice() else {
        return Err(Error::shape("project", format!("points {shape:?} is not 3xN")));
    };
    expect_len("project", pose, 6)?;
    let pose = pose.reshape(&[6])?;
    let rot = rotation_matrix(&pose.slice(0, 0, 3)?)?;
    let moved = rot.matmul(points)?.add_bias(&pose.slice(0, 3, 6)?, 0)?;
    let cam = intrinsics_matrix(k)?.matmul(&moved)?;
    let z = cam.slice(0, 2, 3)?;
    let front: Vec<bool> = z.value().data().iter().map(|&v| v > MIN_PROJECTED_DEPTH).collect();
    let z_safe = safe_depth(&z)?;
    let z2 = Tensor::concat(&[z_safe, z_safe], 0)?;
    let uv = cam.slice(0, 0, 2)?.div(&z2)?;
    debug_assert_eq!(uv.shape(), vec![2, n]);
    Ok((uv, front))
}

/// Replace depths with `|z| < MIN_PROJECTED_DEPTH` by that threshold so the
/// division stays finite; those entries carry no gradient.
fn safe_depth<'g>(z: &Tensor<'g>) -> Result<Tensor<'g>> {
    let v = z.value();
    let small: Vec<bool> = v.data().iter().map(|x| x.abs() < MIN_PROJECTED_DEPTH).collect();
    let out = v.map(|x| if x.abs() < MIN_PROJECTED_DEPTH { MIN_PROJECTED_DEPTH } else { x });
    z.graph().record("safe_depth", out, &[*z], move |g, sink| {
        if let Some(buf) = sink.buf(0) {
            for (i, d) in buf.iter_mut().enumerate() {
                if !small[i] {
                    *d += g[i];
                }
            }
        }
    })
}

/// Continuous source coordinates for each target pixel plus validity.
#[derive(Debug)]
pub struct FlowField<'g> {
    /// `[2, H, W]`: x coordinates then y coordinates.
    pub coords: Tensor<'g>,
    /// `[H, W]`, 1 where the source point is in front of the camera and
    /// inside `[0, W-1] × [0, H-1]`, else 0.
    pub valid: Array,
}

impl FlowField<'_> {
    pub fn valid_fraction(&self) -> f64 {
        self.valid.mean()
    }
}

/// Source-image coordinates of every target pixel under perspective
/// warping with target intrinsics `k_t`, source intrinsics `k_s` and
/// target→source `pose`.
pub fn warp_coordinates<'g>(
    depth: &Tensor<'g>,
    k_t: &Tensor<'g>,
    k_s: &Tensor<'g>,
    pose: &Tensor<'g>,
) -> Result<FlowField<'g>> {
    let shape = depth.shape();
    let &[h, w] = shape.as_slice() else {
        return Err(Error::shape("warp_coordinates", format!("depth {shape:?} is not HxW")));
    };
    let points = backproject(depth, k_t)?;
    let (uv, front) = project(&points, k_s, pose)?;
    let uvv = uv.value();
    let n = h * w;
    let valid = Array::from_fn(&[h, w], |p| {
        let (x, y) = (uvv.data()[p], uvv.data()[n + p]);
        let inside = x >= 0.0 && x <= (w - 1) as f64 && y >= 0.0 && y <= (h - 1) as f64;
        if front[p] && inside {
            1.0
        } else {
            0.0
        }
    });
    Ok(FlowField { coords: uv.reshape(&[2, h, w])?, valid })
}

/// Bilinear, clamp-to-edge sampling of `image` (`[C, H, W]`) at `coords`.
pub fn bilinear_sample<'g>(image: &Tensor<'g>, coords: &Tensor<'g>) -> Result<Tensor<'g>> {
    image.sample_bilinear(coords)
}

/// Reconstruct the target view from `source` using target `depth`, shared
/// intrinsics `k` and target→source `pose`.
pub fn view_synthesis<'g>(
    source: &Tensor<'g>,
    depth: &Tensor<'g>,
    k: &Tensor<'g>,
    pose: &Tensor<'g>,
) -> Result<(Tensor<'g>, Array)> {
    let flow = warp_coordinates(depth, k, k, pose)?;
    let synth = bilinear_sample(source, &flow.coords)?;
    Ok((synth, flow.valid))
}
