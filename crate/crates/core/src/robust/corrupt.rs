//! Fifteen image corruptions in four families (noise, blur, weather,
//! digital) at severities 1 to 5.
//!
//! Every constant comes from `corruptions.txt`, compiled into the crate.
//! Stochastic corruptions draw from a generator seeded by the caller, so
//! output is a pure function of `(image, spec, seed)`.

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};

use crate::error::{Error, Result};
use crate::ndiff::Array;
use crate::pipeline::config::KeyValues;

pub const PARAMETER_TABLE: &str = include_str!("corruptions.txt");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Corruption {
    GaussianNoise,
    ShotNoise,
    ImpulseNoise,
    DefocusBlur,
    GlassBlur,
    MotionBlur,
    ZoomBlur,
    Snow,
    Frost,
    Fog,
    Brightness,
    Contrast,
    Elastic,
    Pixelate,
    Jpeg,
}

impl Corruption {
    pub const ALL: [Corruption; 15] = [
        Corruption::GaussianNoise,
        Corruption::ShotNoise,
        Corruption::ImpulseNoise,
        Corruption::DefocusBlur,
        Corruption::GlassBlur,
        Corruption::MotionBlur,
        Corruption::ZoomBlur,
        Corruption::Snow,
        Corruption::Frost,
        Corruption::Fog,
        Corruption::Brightness,
        Corruption::Contrast,
        Corruption::Elastic,
        Corruption::Pixelate,
        Corruption::Jpeg,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Corruption::GaussianNoise => "gaussian_noise",
            Corruption::ShotNoise => "shot_noise",
            Corruption::ImpulseNoise => "impulse_noise",
            Corruption::DefocusBlur => "defocus_blur",
            Corruption::GlassBlur => "glass_blur",
            Corruption::MotionBlur => "motion_blur",
            Corruption::ZoomBlur => "zoom_blur",
            Corruption::Snow => "snow",
            Corruption::Frost => "frost",
            Corruption::Fog => "fog",
            Corruption::Brightness => "brightness",
            Corruption::Contrast => "contrast",
            Corruption::Elastic => "elastic",
            Corruption::Pixelate => "pixelate",
            Corruption::Jpeg => "jpeg",
        }
    }

    /// Whether the output depends on the seed.
    pub fn is_stochastic(self) -> bool {
        !matches!(
            self,
            Corruption::DefocusBlur
                | Corruption::ZoomBlur
                | Corruption::Brightness
                | Corruption::Contrast
                | Corruption::Pixelate
                | Corruption::Jpeg
        )
    }
}

impl fmt::Display for Corruption {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Corruption {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Corruption::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown corruption {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CorruptionSpec {
    pub kind: Corruption,
    /// 1 to 5.
    pub severity: u8,
}

impl CorruptionSpec {
    pub fn new(kind: Corruption, severity: u8) -> Result<Self> {
        if !(1..=5).contains(&severity) {
            return Err(Error::InvalidArgument(format!("severity {severity} outside 1..=5")));
        }
        Ok(Self { kind, severity })
    }

    /// Highest severity.
    pub fn worst(kind: Corruption) -> Self {
        Self { kind, severity: 5 }
    }

    /// Every corruption at `severity`.
    pub fn all(severity: u8) -> Result<Vec<Self>> {
        Corruption::ALL.into_iter().map(|k| Self::new(k, severity)).collect()
    }
}

/// Parsed parameter table.
#[derive(Clone, Debug)]
pub struct ParamTable {
    kv: KeyValues,
}

impl ParamTable {
    pub fn parse(text: &str) -> Result<Self> {
        let kv = KeyValues::parse(text)?;
        let table = Self { kv };
        for (key, _) in table.kv.entries().iter().filter(|(k, _)| k != "version") {
            let values = table.kv.get_list::<f64>(key)?.unwrap_or_default();
            if values.len() != 5 {
                return Err(Error::Config(format!("{key} has {} values, expected 5", values.len())));
            }
        }
        Ok(table)
    }

    /// The compiled-in table.
    pub fn builtin() -> &'static ParamTable {
        static TABLE: OnceLock<ParamTable> = OnceLock::new();
        TABLE.get_or_init(|| ParamTable::parse(PARAMETER_TABLE).expect("builtin corruption table is valid"))
    }

    pub fn version(&self) -> u32 {
        self.kv.get_parsed("version").ok().flatten().unwrap_or(0)
    }

    pub fn get(&self, kind: Corruption, param: &str, severity: u8) -> Result<f64> {
        let key = format!("{}.{param}", kind.name());
        let values = self
            .kv
            .get_list::<f64>(&key)?
            .ok_or_else(|| Error::Config(format!("corruption table lacks {key}")))?;
        values
            .get(usize::from(severity).wrapping_sub(1))
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("severity {severity} outside 1..=5")))
    }
}

/// A `[3, H, W]` image as three row-major planes.
struct Planes {
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl Planes {
    fn from_array(image: &Array) -> Result<Self> {
        let &[3, h, w] = image.shape() else {
            return Err(Error::shape("corrupt", format!("{:?} is not 3xHxW", image.shape())));
        };
        Ok(Self { h, w, data: image.data().to_vec() })
    }

    fn into_array(self) -> Array {
        Array::from_vec(&[3, self.h, self.w], self.data.into_iter().map(|v| v.clamp(0.0, 1.0)).collect())
            .expect("shape preserved")
    }

    fn len(&self) -> usize {
        self.h * self.w
    }

    fn plane(&self, c: usize) -> &[f64] {
        &self.data[c * self.len()..(c + 1) * self.len()]
    }

    fn map_planes(&self, mut f: impl FnMut(&[f64]) -> Vec<f64>) -> Self {
        let data = (0..3).flat_map(|c| f(self.plane(c))).collect();
        Self { h: self.h, w: self.w, data }
    }
}

fn at_clamped(p: &[f64], h: usize, w: usize, i: isize, j: isize) -> f64 {
    let i = i.clamp(0, h as isize - 1) as usize;
    let j = j.clamp(0, w as isize - 1) as usize;
    p[i * w + j]
}

/// Bilinear sample at `(y, x)` with clamp-to-edge.
fn sample(p: &[f64], h: usize, w: usize, y: f64, x: f64) -> f64 {
    let y = y.clamp(0.0, (h - 1) as f64);
    let x = x.clamp(0.0, (w - 1) as f64);
    let (y0, x0) = (y.floor(), x.floor());
    let (fy, fx) = (y - y0, x - x0);
    let (i, j) = (y0 as isize, x0 as isize);
    let v = |di, dj| at_clamped(p, h, w, i + di, j + dj);
    (1.0 - fy) * ((1.0 - fx) * v(0, 0) + fx * v(0, 1)) + fy * ((1.0 - fx) * v(1, 0) + fx * v(1, 1))
}

/// Weighted sum over integer offsets `(dy, dx, weight)`, clamp-to-edge.
fn convolve(p: &[f64], h: usize, w: usize, taps: &[(isize, isize, f64)]) -> Vec<f64> {
    let mut out = vec![0.0; h * w];
    for i in 0..h {
        for j in 0..w {
            out[i * w + j] =
                taps.iter().map(|&(dy, dx, k)| k * at_clamped(p, h, w, i as isize + dy, j as isize + dx)).sum();
        }
    }
    out
}

fn gaussian_blur(p: &[f64], h: usize, w: usize, sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return p.to_vec();
    }
    let r = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-r..=r).map(|d| (-((d * d) as f64) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    let rows: Vec<_> = (-r..=r).zip(&k).map(|(d, &v)| (0, d, v)).collect();
    let cols: Vec<_> = (-r..=r).zip(&k).map(|(d, &v)| (d, 0, v)).collect();
    convolve(&convolve(p, h, w, &rows), h, w, &cols)
}

/// Diamond-square fractal on a `2^n` grid covering `h × w`, scaled to
/// `[0, 1]`. Larger `decay` gives smoother fields.
fn plasma(h: usize, w: usize, decay: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let size = h.max(w).next_power_of_two().max(2);
    let n = size + 1;
    let mut m = vec![0.0; n * n];
    let mut step = size;
    let mut scale = 1.0;
    while step > 1 {
        let half = step / 2;
        for i in (half..n).step_by(step) {
            for j in (half..n).step_by(step) {
                let avg = 0.25
                    * (m[(i - half) * n + j - half]
                        + m[(i - half) * n + j + half.min(n - 1 - j)]
                        + m[(i + half.min(n - 1 - i)) * n + j - half]
                        + m[(i + half.min(n - 1 - i)) * n + j + half.min(n - 1 - j)]);
                m[i * n + j] = avg + scale * rng.random_range(-1.0..1.0);
            }
        }
        for i in (0..n).step_by(half) {
            let start = if (i / half) % 2 == 0 { half } else { 0 };
            for j in (start..n).step_by(step) {
                let mut sum = 0.0;
                let mut cnt = 0.0;
                if i >= half {
                    sum += m[(i - half) * n + j];
                    cnt += 1.0;
                }
                if i + half < n {
                    sum += m[(i + half) * n + j];
                    cnt += 1.0;
                }
                if j >= half {
                    sum += m[i * n + j - half];
                    cnt += 1.0;
                }
                if j + half < n {
                    sum += m[i * n + j + half];
                    cnt += 1.0;
                }
                m[i * n + j] = sum / cnt + scale * rng.random_range(-1.0..1.0);
            }
        }
        step = half;
        scale /= decay;
    }
    let mut out: Vec<f64> = (0..h * w).map(|p| m[(p / w) * n + p % w]).collect();
    let (lo, hi) = out.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = (hi - lo).max(1e-12);
    out.iter_mut().for_each(|v| *v = (*v - lo) / span);
    out
}

/// Mean of `p` sampled along a line from each pixel, one sample per pixel
/// of length.
fn line_blur(p: &[f64], h: usize, w: usize, length: usize, angle: f64) -> Vec<f64> {
    let n = length.max(1);
    let (dy, dx) = (angle.sin(), angle.cos());
    let mut out = vec![0.0; h * w];
    for i in 0..h {
        for j in 0..w {
            let s: f64 = (0..n).map(|k| sample(p, h, w, i as f64 + k as f64 * dy, j as f64 + k as f64 * dx)).sum();
            out[i * w + j] = s / n as f64;
        }
    }
    out
}

/// Apply `spec` to a `[3, H, W]` image in `[0, 1]`. Output is clamped to
/// `[0, 1]` and has the input's shape.
pub fn corrupt(image: &Array, spec: &CorruptionSpec, seed: u64) -> Result<Array> {
    corrupt_with(image, spec, seed, ParamTable::builtin())
}

pub fn corrupt_with(image: &Array, spec: &CorruptionSpec, seed: u64, table: &ParamTable) -> Result<Array> {
    let spec = CorruptionSpec::new(spec.kind, spec.severity)?;
    let x = Planes::from_array(image)?;
    let (h, w) = (x.h, x.w);
    let kind = spec.kind;
    let p = |name: &str| table.get(kind, name, spec.severity);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (0x9e37_79b9_7f4a_7c15u64.wrapping_mul(kind as u64 + 1)));
    let out = match kind {
        Corruption::GaussianNoise => {
            let normal = Normal::new(0.0, p("sigma")?).map_err(|e| Error::Config(e.to_string()))?;
            Planes { data: x.data.iter().map(|v| v + normal.sample(&mut rng)).collect(), ..x }
        }
        Corruption::ShotNoise => {
            let lambda = p("photons")?;
            let data = x
                .data
                .iter()
                .map(|&v| {
                    let rate = v.clamp(0.0, 1.0) * lambda;
                    if rate <= 0.0 {
                        0.0
                    } else {
                        Poisson::new(rate).map(|d| d.sample(&mut rng) / lambda).unwrap_or(v)
                    }
                })
                .collect();
            Planes { data, ..x }
        }
        Corruption::ImpulseNoise => {
            let d = p("density")?;
            let data = x
                .data
                .iter()
                .map(|&v| {
                    let u: f64 = rng.random();
                    if u < 0.5 * d {
                        0.0
                    } else if u < d {
                        1.0
                    } else {
                        v
                    }
                })
                .collect();
            Planes { data, ..x }
        }
        Corruption::DefocusBlur => {
            let r = p("radius")?;
            let ri = r.ceil() as isize;
            let mut taps = Vec::new();
            for dy in -ri..=ri {
                for dx in -ri..=ri {
                    if (dy * dy + dx * dx) as f64 <= r * r {
                        taps.push((dy, dx, 1.0));
                    }
                }
            }
            let n = taps.len() as f64;
            taps.iter_mut().for_each(|t| t.2 /= n);
            x.map_planes(|pl| convolve(pl, h, w, &taps))
        }
        Corruption::GlassBlur => {
            let sigma = p("sigma")?;
            let delta = p("max_delta")? as i64;
            let iterations = p("iterations")? as usize;
            let mut y = x.map_planes(|pl| gaussian_blur(pl, h, w, sigma));
            let n = y.len();
            for _ in 0..iterations {
                for i in (0..h as isize).rev() {
                    for j in (0..w as isize).rev() {
                        let di = rng.random_range(-delta..=delta) as isize;
                        let dj = rng.random_range(-delta..=delta) as isize;
                        let (i2, j2) = (i + di, j + dj);
                        if i2 < 0 || j2 < 0 || i2 >= h as isize || j2 >= w as isize {
                            continue;
                        }
                        let (a, b) = (i as usize * w + j as usize, i2 as usize * w + j2 as usize);
                        for c in 0..3 {
                            y.data.swap(c * n + a, c * n + b);
                        }
                    }
                }
            }
            y.map_planes(|pl| gaussian_blur(pl, h, w, sigma))
        }
        Corruption::MotionBlur => {
            let length = p("length")? as usize;
            let angle = rng.random_range(-std::f64::consts::FRAC_PI_4..std::f64::consts::FRAC_PI_4);
            x.map_planes(|pl| line_blur(pl, h, w, length, angle))
        }
        Corruption::ZoomBlur => {
            let (max_zoom, step) = (p("max_zoom")?, p("step")?);
            let zooms: Vec<f64> = (0..).map(|k| 1.0 + k as f64 * step).take_while(|z| *z < max_zoom - 1e-9).collect();
            let (cy, cx) = (0.5 * (h as f64 - 1.0), 0.5 * (w as f64 - 1.0));
            x.map_planes(|pl| {
                let mut acc = vec![0.0; h * w];
                for z in &zooms {
                    for i in 0..h {
                        for j in 0..w {
                            acc[i * w + j] += sample(pl, h, w, cy + (i as f64 - cy) / z, cx + (j as f64 - cx) / z);
                        }
                    }
                }
                acc.iter().map(|v| v / zooms.len() as f64).collect()
            })
        }
        Corruption::Snow => {
            let density = p("density")?;
            let streak = p("streak")? as usize;
            let lift = p("lift")?;
            let flakes: Vec<f64> = (0..h * w)
                .map(|_| if rng.random::<f64>() < density { rng.random_range(0.6..1.0) } else { 0.0 })
                .collect();
            let angle = rng.random_range(1.1..2.0);
            let streaks = line_blur(&flakes, h, w, streak, angle);
            let peak = streaks.iter().cloned().fold(0.0, f64::max).max(1e-12);
            let gray: Vec<f64> = (0..h * w)
                .map(|q| 0.299 * x.plane(0)[q] + 0.587 * x.plane(1)[q] + 0.114 * x.plane(2)[q])
                .collect();
            let mut data = x.data.clone();
            for c in 0..3 {
                for q in 0..h * w {
                    let v = x.plane(c)[q];
                    let lifted = (1.0 - lift) * v + lift * v.max(1.5 * gray[q] + 0.5);
                    data[c * h * w + q] = lifted + streaks[q] / peak;
                }
            }
            Planes { data, ..x }
        }
        Corruption::Frost => {
            let (a, b) = (p("image")?, p("frost")?);
            let field = plasma(h, w, 1.3, &mut rng);
            let ridges: Vec<f64> = field.iter().map(|v| (1.0 - (2.0 * v - 1.0).abs()).powi(3)).collect();
            let tint = [0.85, 0.92, 1.0];
            let mut data = x.data.clone();
            for c in 0..3 {
                for q in 0..h * w {
                    data[c * h * w + q] = a * x.plane(c)[q] + b * tint[c] * (0.4 + 0.6 * ridges[q]);
                }
            }
            Planes { data, ..x }
        }
        Corruption::Fog => {
            let (blend, decay) = (p("blend")?, p("decay")?);
            let haze = plasma(h, w, decay, &mut rng);
            let mut data = x.data.clone();
            for c in 0..3 {
                for q in 0..h * w {
                    data[c * h * w + q] = (1.0 - blend) * x.plane(c)[q] + blend * (0.6 + 0.4 * haze[q]);
                }
            }
            Planes { data, ..x }
        }
        Corruption::Brightness => {
            // Shift HSV value with hue and saturation fixed.
            let shift = p("shift")?;
            let mut data = x.data.clone();
            for q in 0..h * w {
                let v = (0..3).map(|c| x.plane(c)[q]).fold(0.0, f64::max);
                let v2 = (v + shift).clamp(0.0, 1.0);
                for c in 0..3 {
                    data[c * h * w + q] = if v > 0.0 { x.plane(c)[q] * v2 / v } else { v2 };
                }
            }
            Planes { data, ..x }
        }
        Corruption::Contrast => {
            let f = p("factor")?;
            x.map_planes(|pl| {
                let m = pl.iter().sum::<f64>() / pl.len() as f64;
                pl.iter().map(|v| (v - m) * f + m).collect()
            })
        }
        Corruption::Elastic => {
            let (mag, smooth) = (p("magnitude")?, p("smoothing")?);
            let mut field = || {
                let raw: Vec<f64> = (0..h * w).map(|_| rng.random_range(-1.0..1.0)).collect();
                let s = gaussian_blur(&raw, h, w, smooth);
                let peak = s.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-12);
                s.into_iter().map(|v| v / peak * mag).collect::<Vec<f64>>()
            };
            let (dy, dx) = (field(), field());
            x.map_planes(|pl| {
                (0..h * w)
                    .map(|q| sample(pl, h, w, (q / w) as f64 + dy[q], (q % w) as f64 + dx[q]))
                    .collect()
            })
        }
        Corruption::Pixelate => {
            let f = p("factor")?;
            let hs = ((h as f64 * f).round() as usize).clamp(1, h);
            let ws = ((w as f64 * f).round() as usize).clamp(1, w);
            x.map_planes(|pl| {
                let mut sum = vec![0.0; hs * ws];
                let mut cnt = vec![0.0; hs * ws];
                for i in 0..h {
                    for j in 0..w {
                        let cell = (i * hs / h) * ws + j * ws / w;
                        sum[cell] += pl[i * w + j];
                        cnt[cell] += 1.0;
                    }
                }
                (0..h * w).map(|q| {
                    let cell = ((q / w) * hs / h) * ws + (q % w) * ws / w;
                    sum[cell] / cnt[cell]
                }).collect()
            })
        }
        Corruption::Jpeg => jpeg_round_trip(&x, p("quality")?),
    };
    Ok(out.into_array())
}

const LUMA_TABLE: [f64; 64] = [
    16., 11., 10., 16., 24., 40., 51., 61., 12., 12., 14., 19., 26., 58., 60., 55., 14., 13., 16., 24., 40., 57.,
    69., 56., 14., 17., 22., 29., 51., 87., 80., 62., 18., 22., 37., 56., 68., 109., 103., 77., 24., 35., 55., 64.,
    81., 104., 113., 92., 49., 64., 78., 87., 103., 121., 120., 101., 72., 92., 95., 98., 112., 100., 103., 99.,
];

const CHROMA_TABLE: [f64; 64] = [
    17., 18., 24., 47., 99., 99., 99., 99., 18., 21., 26., 66., 99., 99., 99., 99., 24., 26., 56., 99., 99., 99.,
    99., 99., 47., 66., 99., 99., 99., 99., 99., 99., 99., 99., 99., 99., 99., 99., 99., 99., 99., 99., 99., 99.,
    99., 99., 99., 99., 99., 99., 99., 99., 99., 99., 99., 99., 99., 99., 99., 99., 99., 99., 99., 99.,
];

/// Quantisation table at `quality` (1 to 100) from a base table.
fn scaled_table(base: &[f64; 64], quality: f64) -> [f64; 64] {
    let q = quality.clamp(1.0, 100.0);
    let s = if q < 50.0 { 5000.0 / q } else { 200.0 - 2.0 * q };
    base.map(|t| ((t * s + 50.0) / 100.0).floor().clamp(1.0, 255.0))
}

fn dct_basis() -> [[f64; 8]; 8] {
    std::array::from_fn(|k| {
        std::array::from_fn(|n| {
            let a = if k == 0 { (1.0 / 8.0f64).sqrt() } else { (2.0 / 8.0f64).sqrt() };
            a * ((std::f64::consts::PI * (2 * n + 1) as f64 * k as f64) / 16.0).cos()
        })
    })
}

/// YCbCr conversion, 8×8 orthonormal DCT, quantisation, inverse.
fn jpeg_round_trip(x: &Planes, quality: f64) -> Planes {
    let (h, w) = (x.h, x.w);
    let n = h * w;
    let mut ycc = vec![0.0; 3 * n];
    for q in 0..n {
        let (r, g, b) = (x.plane(0)[q] * 255.0, x.plane(1)[q] * 255.0, x.plane(2)[q] * 255.0);
        ycc[q] = 0.299 * r + 0.587 * g + 0.114 * b - 128.0;
        ycc[n + q] = -0.168736 * r - 0.331264 * g + 0.5 * b;
        ycc[2 * n + q] = 0.5 * r - 0.418688 * g - 0.081312 * b;
    }
    let basis = dct_basis();
    let tables = [scaled_table(&LUMA_TABLE, quality), scaled_table(&CHROMA_TABLE, quality)];
    for c in 0..3 {
        let table = &tables[usize::from(c > 0)];
        let plane = &mut ycc[c * n..(c + 1) * n];
        for bi in (0..h).step_by(8) {
            for bj in (0..w).step_by(8) {
                let mut block = [[0.0; 8]; 8];
                for (u, row) in block.iter_mut().enumerate() {
                    for (v, b) in row.iter_mut().enumerate() {
                        *b = plane[(bi + u).min(h - 1) * w + (bj + v).min(w - 1)];
                    }
                }
                let mut coef = [[0.0; 8]; 8];
                for k in 0..8 {
                    for l in 0..8 {
                        let mut s = 0.0;
                        for u in 0..8 {
                            for v in 0..8 {
                                s += basis[k][u] * basis[l][v] * block[u][v];
                            }
                        }
                        let qt = table[k * 8 + l];
                        coef[k][l] = (s / qt).round() * qt;
                    }
                }
                for u in 0..8 {
                    for v in 0..8 {
                        let (i, j) = (bi + u, bj + v);
                        if i >= h || j >= w {
                            continue;
                        }
                        let mut s = 0.0;
                        for k in 0..8 {
                            for l in 0..8 {
                                s += basis[k][u] * basis[l][v] * coef[k][l];
                            }
                        }
                        plane[i * w + j] = s;
                    }
                }
            }
        }
    }
    let mut data = vec![0.0; 3 * n];
    for q in 0..n {
        let (y, cb, cr) = (ycc[q] + 128.0, ycc[n + q], ycc[2 * n + q]);
        data[q] = (y + 1.402 * cr) / 255.0;
        data[n + q] = (y - 0.344136 * cb - 0.714136 * cr) / 255.0;
        data[2 * n + q] = (y + 1.772 * cb) / 255.0;
    }
    Planes { h, w, data }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant(v: f64) -> Array {
        Array::full(&[3, 16, 16], v)
    }

    fn textured() -> Array {
        Array::from_fn(&[3, 16, 24], |i| 0.5 + 0.4 * ((i as f64) * 0.37).sin())
    }

    #[test]
    fn table_has_every_corruption() {
        let t = ParamTable::builtin();
        assert_eq!(t.version(), 1);
        for kind in Corruption::ALL {
            let spec = CorruptionSpec::worst(kind);
            assert!(corrupt_with(&textured(), &spec, 0, t).is_ok(), "{kind}");
        }
    }

    #[test]
    fn brightness_lifts_gray() {
        let out = corrupt(&constant(0.3), &CorruptionSpec::worst(Corruption::Brightness), 0).unwrap();
        assert!(out.data().iter().all(|v| (v - 0.8).abs() < 1e-12));
    }

    #[test]
    fn constant_images_survive_digital_corruptions() {
        for kind in [Corruption::Contrast, Corruption::Pixelate] {
            let out = corrupt(&constant(0.42), &CorruptionSpec::worst(kind), 3).unwrap();
            assert!(out.data().iter().all(|v| (v - 0.42).abs() < 1e-12), "{kind}");
        }
    }

    #[test]
    fn names_round_trip() {
        for kind in Corruption::ALL {
            assert_eq!(kind.name().parse::<Corruption>().unwrap(), kind);
        }
        assert!("rain".parse::<Corruption>().is_err());
        assert!(CorruptionSpec::new(Corruption::Fog, 6).is_err());
    }

    #[test]
    fn jpeg_keeps_flat_blocks() {
        let out = corrupt(&constant(0.5), &CorruptionSpec::worst(Corruption::Jpeg), 0).unwrap();
        assert!(out.data().iter().all(|v| (v - 0.5).abs() < 2.0 / 255.0));
    }
}
