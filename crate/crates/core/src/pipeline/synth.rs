//! Analytic test scenes: a textured plane seen by a moving pinhole camera.
//!
//! The plane is `n · X = 1` in the target camera frame, so inverse depth is
//! affine in normalised pixel coordinates. Every frame is ray-cast exactly
//! and shaded with a smooth procedural texture defined on 3-D points, which
//! makes the three views photometrically consistent.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ImageTriplet;
use crate::error::{Error, Result};
use crate::geometry::{Intrinsics, Pose};
use crate::ndiff::Array;

/// Minimum fraction of target pixels that must stay inside both sources.
pub const MIN_IN_FRAME: f64 = 0.8;

#[derive(Clone, Debug, PartialEq)]
pub struct SceneConfig {
    pub height: usize,
    pub width: usize,
    pub seed: u64,
    /// Depth of the plane at the top image row.
    pub far: f64,
    /// Depth of the plane at the bottom image row; equal to `far` for a
    /// fronto-parallel plane.
    pub near: f64,
    /// Target → next-frame motion. The previous frame uses the inverse
    /// motion (constant velocity).
    pub motion: Pose,
    pub intrinsics: Intrinsics,
}

impl SceneConfig {
    /// 64×64 sloped plane with forward, sideways and slight rotational
    /// motion.
    pub fn desk() -> Self {
        Self::sized(64, 64)
    }

    pub fn sized(height: usize, width: usize) -> Self {
        let (h, w) = (height as f64, width as f64);
        Self {
            height,
            width,
            seed: 0,
            far: 12.0,
            near: 3.0,
            motion: Pose { rotation: [0.0, 0.02, 0.0], translation: [0.12, 0.04, 0.35] },
            intrinsics: Intrinsics { fx: 0.8 * w, fy: 0.8 * w, cx: 0.5 * (w - 1.0), cy: 0.5 * (h - 1.0) },
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_motion(mut self, motion: Pose) -> Self {
        self.motion = motion;
        self
    }

    pub fn fronto_parallel(mut self, depth: f64) -> Self {
        self.far = depth;
        self.near = depth;
        self
    }

    /// Plane normal `n` with `1/Z = n · (x_n, y_n, 1)`.
    pub fn plane(&self) -> [f64; 3] {
        let k = self.intrinsics;
        let y0 = -k.cy / k.fy;
        let y1 = (self.height as f64 - 1.0 - k.cy) / k.fy;
        let (i0, i1) = (1.0 / self.far, 1.0 / self.near);
        let ny = if y1 > y0 { (i1 - i0) / (y1 - y0) } else { 0.0 };
        [0.0, ny, i0 - ny * y0]
    }

    fn validate(&self) -> Result<()> {
        self.intrinsics.validate()?;
        if self.height < 2 || self.width < 2 {
            return Err(Error::InvalidArgument("scene needs at least 2x2 pixels".into()));
        }
        if !(self.near > 0.0 && self.far >= self.near) {
            return Err(Error::InvalidArgument(format!("bad plane depths near={} far={}", self.near, self.far)));
        }
        Ok(())
    }
}

/// Smooth RGB texture: a few random plane waves per channel evaluated on
/// world points.
#[derive(Clone, Debug)]
struct Texture {
    waves: Vec<[[f64; 5]; 3]>,
}

impl Texture {
    fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_7e47);
        let waves = (0..6)
            .map(|_| {
                std::array::from_fn(|_| {
                    let theta: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                    let freq: f64 = rng.random_range(2.0..6.0);
                    [
                        freq * theta.cos(),
                        rng.random_range(-0.5..0.5),
                        freq * theta.sin(),
                        rng.random_range(0.0..std::f64::consts::TAU),
                        rng.random_range(0.06..0.12),
                    ]
                })
            })
            .collect();
        Self { waves }
    }

    fn shade(&self, p: [f64; 3]) -> [f64; 3] {
        let mut rgb = [0.5; 3];
        for wave in &self.waves {
            for (c, [ax, ay, az, phase, amp]) in wave.iter().enumerate() {
                rgb[c] += amp * (ax * p[0] + ay * p[1] + az * p[2] + phase).sin();
            }
        }
        rgb.map(|v| v.clamp(0.0, 1.0))
    }
}

/// Renders frames of one scene.
#[derive(Clone, Debug)]
pub struct SceneRenderer {
    cfg: SceneConfig,
    texture: Texture,
    plane: [f64; 3],
}

impl SceneRenderer {
    pub fn new(cfg: SceneConfig) -> Result<Self> {
        cfg.validate()?;
        let texture = Texture::new(cfg.seed);
        let plane = cfg.plane();
        Ok(Self { cfg, texture, plane })
    }

    pub fn config(&self) -> &SceneConfig {
        &self.cfg
    }

    /// Depth of the plane along the target-frame ray through `(x, y)`.
    pub fn target_depth_at(&self, x: f64, y: f64) -> f64 {
        let k = self.cfg.intrinsics;
        let ray = [(x - k.cx) / k.fx, (y - k.cy) / k.fy, 1.0];
        1.0 / dot(self.plane, ray)
    }

    /// Ground-truth target depth `[H, W]`.
    pub fn target_depth(&self) -> Array {
        let (h, w) = (self.cfg.height, self.cfg.width);
        Array::from_fn(&[h, w], |p| self.target_depth_at((p % w) as f64, (p / w) as f64))
    }

    /// Image `[3, H, W]` seen by a camera related to the target camera by
    /// `pose` (`X_cam = R X_target + t`).
    pub fn render(&self, pose: &Pose) -> Result<Array> {
        let (h, w) = (self.cfg.height, self.cfg.width);
        let k = self.cfg.intrinsics;
        let r = pose.rotation_matrix();
        let t = pose.translation;
        // Plane in the camera frame: n_c · X_c = 1 + n_c · t with n_c = R n.
        let nc: [f64; 3] = std::array::from_fn(|i| (0..3).map(|j| r[i][j] * self.plane[j]).sum());
        let offset = 1.0 + dot(nc, t);
        let mut img = Array::zeros(&[3, h, w]);
        for i in 0..h {
            for j in 0..w {
                let ray = [(j as f64 - k.cx) / k.fx, (i as f64 - k.cy) / k.fy, 1.0];
                let denom = dot(nc, ray);
                let z = offset / denom;
                if !(denom > 0.0 && z > 0.0 && z.is_finite()) {
                    return Err(Error::InvalidArgument(format!("camera at {pose:?} does not see the plane at ({i},{j})")));
                }
                let xc = ray.map(|v| v * z);
                // Back to the target frame: X_t = Rᵀ (X_c − t).
                let d = [xc[0] - t[0], xc[1] - t[1], xc[2] - t[2]];
                let xt: [f64; 3] = std::array::from_fn(|a| (0..3).map(|b| r[b][a] * d[b]).sum());
                let rgb = self.texture.shade(xt);
                for (c, v) in rgb.iter().enumerate() {
                    img.set(&[c, i, j], *v);
                }
            }
        }
        Ok(img)
    }

    /// Fraction of target pixels whose plane point projects inside the
    /// camera at `pose`.
    pub fn in_frame_fraction(&self, pose: &Pose) -> f64 {
        let (h, w) = (self.cfg.height, self.cfg.width);
        let k = self.cfg.intrinsics;
        let mut inside = 0usize;
        for i in 0..h {
            for j in 0..w {
                let (x, y) = (j as f64, i as f64);
                let p = pose.apply(k.backproject(x, y, self.target_depth_at(x, y)));
                if let Some([u, v]) = k.project(p) {
                    if u >= 0.0 && u <= (w - 1) as f64 && v >= 0.0 && v <= (h - 1) as f64 {
                        inside += 1;
                    }
                }
            }
        }
        inside as f64 / (h * w) as f64
    }
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Render a triplet with full ground truth. The previous frame sits at the
/// inverse motion, the next frame at `cfg.motion`.
pub fn synth_scene(cfg: &SceneConfig) -> Result<ImageTriplet> {
    let scene = SceneRenderer::new(cfg.clone())?;
    let to_next = cfg.motion;
    let to_prev = to_next.inverse();
    for pose in [&to_prev, &to_next] {
        let f = scene.in_frame_fraction(pose);
        if f < MIN_IN_FRAME {
            return Err(Error::InvalidArgument(format!(
                "motion keeps only {:.0}% of pixels in frame",
                100.0 * f
            )));
        }
    }
    Ok(ImageTriplet {
        id: format!("synth-{}", cfg.seed),
        prev: Some(scene.render(&to_prev)?),
        target: scene.render(&Pose::identity())?,
        next: Some(scene.render(&to_next)?),
        depth: Some(scene.target_depth()),
        intrinsics: Some(cfg.intrinsics),
        poses: Some([to_prev, to_next]),
    })
}

/// `n` scenes with consecutive seeds starting at `cfg.seed`.
pub fn synth_dataset(cfg: &SceneConfig, n: usize) -> Result<Vec<ImageTriplet>> {
    (0..n).map(|i| synth_scene(&cfg.clone().with_seed(cfg.seed + i as u64))).collect()
}
