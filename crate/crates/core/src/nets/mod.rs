//! Depth and ego-motion networks in transformer and convolutional flavours,
//! the intrinsics branch, parameter handling and checkpoints.
//!
//! Networks are plain parameter sets plus a config; a forward pass binds
//! them to a [`Graph`](crate::ndiff::Graph) through a [`Session`].

pub mod checkpoint;
pub mod conv;
pub mod dpt;
pub mod ego;
mod params;
pub mod transformer;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use ego::EgoOutput;
pub use params::{Param, ParamSet, RunningStats, Session, BN_EPS, BN_MOMENTUM};
pub use transformer::{Resample, Stage};

use crate::error::{Error, Result};
use crate::ndiff::{Array, Graph, Tensor};
use crate::pipeline::config::KeyValues;

/// Per-channel input normalisation applied inside every network.
pub const INPUT_MEAN: f64 = 0.45;
pub const INPUT_STD: f64 = 0.225;

/// Hyper-parameters shared by all networks.
#[derive(Clone, Debug, PartialEq)]
pub struct NetConfig {
    pub height: usize,
    pub width: usize,
    pub patch_size: usize,
    pub embed_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub mlp_ratio: usize,
    /// 1-based transformer layers read by the four depth reassemble stages.
    pub tap_layers: [usize; 4],
    pub reassemble_channels: [usize; 4],
    pub ego_channels: usize,
    pub fusion_channels: usize,
    pub head_channels: usize,
    pub pose_channels: usize,
    /// Convolutional baseline encoder widths per stage.
    pub conv_channels: [usize; 4],
    /// Convolutional baseline decoder widths per scale.
    pub decoder_channels: [usize; 4],
}

impl NetConfig {
    /// Full-size configuration: 640×192 input, 16-pixel patches, 768-wide
    /// 12-layer encoder.
    pub fn full() -> Self {
        Self {
            height: 192,
            width: 640,
            patch_size: 16,
            embed_dim: 768,
            num_layers: 12,
            num_heads: 12,
            mlp_ratio: 4,
            tap_layers: [3, 6, 9, 12],
            reassemble_channels: [96, 768, 1536, 3072],
            ego_channels: 2048,
            fusion_channels: 96,
            head_channels: 32,
            pose_channels: 256,
            conv_channels: [64, 128, 256, 512],
            decoder_channels: [16, 32, 64, 128],
        }
    }

    /// CPU-sized configuration with the same topology: 64×64 input,
    /// 8-pixel patches, 32-wide 4-layer encoder.
    pub fn desk() -> Self {
        let scale = |c: usize| (c * 32 / 768).max(1);
        Self {
            height: 64,
            width: 64,
            patch_size: 8,
            embed_dim: 32,
            num_layers: 4,
            num_heads: 4,
            mlp_ratio: 4,
            tap_layers: [1, 2, 3, 4],
            reassemble_channels: [96, 768, 1536, 3072].map(scale),
            ego_channels: scale(2048),
            fusion_channels: 32,
            head_channels: 16,
            pose_channels: 256,
            conv_channels: [16, 32, 64, 128],
            decoder_channels: [8, 16, 32, 64],
        }
    }

    pub fn with_size(mut self, height: usize, width: usize) -> Self {
        self.height = height;
        self.width = width;
        self
    }

    pub fn num_patches(&self) -> usize {
        (self.height / self.patch_size) * (self.width / self.patch_size)
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.patch_size;
        if p == 0 || self.height % p != 0 || self.width % p != 0 {
            return Err(Error::Config(format!(
                "patch size {p} must divide {}x{}",
                self.height, self.width
            )));
        }
        if self.height % 16 != 0 || self.width % 16 != 0 {
            return Err(Error::Config(format!(
                "input {}x{} must be a multiple of 16 for the 4-scale pyramid",
                self.height, self.width
            )));
        }
        if self.num_heads == 0 || self.embed_dim % self.num_heads != 0 {
            return Err(Error::Config(format!(
                "embed dim {} not divisible by {} heads",
                self.embed_dim, self.num_heads
            )));
        }
        let t = self.tap_layers;
        if t[0] < 1 || t[3] > self.num_layers || t.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!(
                "tap layers {t:?} must be strictly increasing within 1..={}",
                self.num_layers
            )));
        }
        for i in 0..4 {
            transformer::resample_for(Stage::Depth(i), self)?;
        }
        let widths = self
            .reassemble_channels
            .iter()
            .chain(&self.conv_channels)
            .chain(&self.decoder_channels)
            .chain([&self.ego_channels, &self.fusion_channels, &self.head_channels, &self.pose_channels]);
        if widths.into_iter().any(|&c| c == 0) || self.mlp_ratio == 0 || self.num_layers == 0 {
            return Err(Error::Config("channel counts and layer counts must be positive".into()));
        }
        Ok(())
    }

    /// `C × H × W` produced by a reassemble stage, from the layer formulas
    /// alone; no parameters are allocated.
    pub fn reassemble_shape(&self, stage: Stage) -> Result<[usize; 3]> {
        let p = self.patch_size;
        let (mut h, mut w) = (self.height / p, self.width / p);
        match transformer::resample_for(stage, self)? {
            Resample::None => {}
            Resample::Up(f) => {
                h *= f;
                w *= f;
            }
            Resample::Down(k) => {
                for _ in 0..k {
                    h = (h + 2 - 3) / 2 + 1;
                    w = (w + 2 - 3) / 2 + 1;
                }
            }
        }
        Ok([stage.channels(self), h, w])
    }

    /// Run every reassemble stage (four depth taps, then the ego stage) on
    /// zero tokens and report the actual output shapes. Only the reassemble
    /// parameters are allocated, so this is cheap at full size.
    pub fn reassemble_trace(&self) -> Result<Vec<(String, Vec<usize>)>> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let stages: Vec<Stage> = (0..4).map(Stage::Depth).chain([Stage::Ego]).collect();
        let mut ps = ParamSet::new();
        for (i, &st) in stages.iter().enumerate() {
            transformer::init_reassemble(&mut ps, &mut rng, &format!("r{i}"), st, self)?;
        }
        let g = Graph::new();
        let s = Session::eval(&g, &ps);
        let grid = (self.height / self.patch_size, self.width / self.patch_size);
        let tokens = g.constant(Array::zeros(&[1, self.num_patches() + 1, self.embed_dim]));
        stages
            .iter()
            .enumerate()
            .map(|(i, &st)| {
                let y = transformer::reassemble(&s, &format!("r{i}"), &tokens, grid, st, self)?;
                Ok((st.label(), y.shape()[1..].to_vec()))
            })
            .collect()
    }

    pub fn to_kv(&self, kv: &mut KeyValues, prefix: &str) {
        let join = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        kv.set(format!("{prefix}height"), self.height);
        kv.set(format!("{prefix}width"), self.width);
        kv.set(format!("{prefix}patch_size"), self.patch_size);
        kv.set(format!("{prefix}embed_dim"), self.embed_dim);
        kv.set(format!("{prefix}num_layers"), self.num_layers);
        kv.set(format!("{prefix}num_heads"), self.num_heads);
        kv.set(format!("{prefix}mlp_ratio"), self.mlp_ratio);
        kv.set(format!("{prefix}tap_layers"), join(&self.tap_layers));
        kv.set(format!("{prefix}reassemble_channels"), join(&self.reassemble_channels));
        kv.set(format!("{prefix}ego_channels"), self.ego_channels);
        kv.set(format!("{prefix}fusion_channels"), self.fusion_channels);
        kv.set(format!("{prefix}head_channels"), self.head_channels);
        kv.set(format!("{prefix}pose_channels"), self.pose_channels);
        kv.set(format!("{prefix}conv_channels"), join(&self.conv_channels));
        kv.set(format!("{prefix}decoder_channels"), join(&self.decoder_channels));
    }

    /// Read every field present under `prefix`, keeping `self` for the rest.
    pub fn from_kv(mut self, kv: &KeyValues, prefix: &str) -> Result<Self> {
        let four = |key: &str, dst: &mut [usize; 4]| -> Result<()> {
            if let Some(v) = kv.get_list::<usize>(&format!("{prefix}{key}"))? {
                *dst = v.try_into().map_err(|v: Vec<usize>| {
                    Error::Config(format!("{prefix}{key} needs 4 values, got {}", v.len()))
                })?;
            }
            Ok(())
        };
        macro_rules! field {
            ($name:ident) => {
                if let Some(v) = kv.get_parsed(&format!("{prefix}{}", stringify!($name)))? {
                    self.$name = v;
                }
            };
        }
        field!(height);
        field!(width);
        field!(patch_size);
        field!(embed_dim);
        field!(num_layers);
        field!(num_heads);
        field!(mlp_ratio);
        field!(ego_channels);
        field!(fusion_channels);
        field!(head_channels);
        field!(pose_channels);
        four("tap_layers", &mut self.tap_layers)?;
        four("reassemble_channels", &mut self.reassemble_channels)?;
        four("conv_channels", &mut self.conv_channels)?;
        four("decoder_channels", &mut self.decoder_channels)?;
        Ok(self)
    }
}

/// Depth range used to turn sigmoid disparity into depth.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DepthRange {
    pub min: f64,
    pub max: f64,
}

impl Default for DepthRange {
    fn default() -> Self {
        Self { min: 0.1, max: 100.0 }
    }
}

impl DepthRange {
    pub fn new(min: f64, max: f64) -> Result<Self> {
        if !(min > 0.0 && max > min) {
            return Err(Error::InvalidArgument(format!("bad depth range [{min}, {max}]")));
        }
        Ok(Self { min, max })
    }

    /// `(a, b)` with `depth = 1 / (a·disp + b)`.
    pub fn coefficients(&self) -> (f64, f64) {
        (1.0 / self.min - 1.0 / self.max, 1.0 / self.max)
    }

    pub fn depth(&self, disp: f64) -> f64 {
        let (a, b) = self.coefficients();
        1.0 / (a * disp + b)
    }

    /// Inverse of [`DepthRange::depth`].
    pub fn disparity(&self, depth: f64) -> f64 {
        let (a, b) = self.coefficients();
        (1.0 / depth - b) / a
    }
}

/// Differentiable `1 / (a·disp + b)`.
pub fn disp_to_depth<'g>(disp: &Tensor<'g>, range: DepthRange) -> Result<Tensor<'g>> {
    let (a, b) = range.coefficients();
    disp.mul_scalar(a)?.add_scalar(b)?.recip()
}

/// Network family.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Arch {
    Transformer,
    Conv,
}

impl Arch {
    pub fn code(self) -> char {
        match self {
            Arch::Transformer => 't',
            Arch::Conv => 'c',
        }
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.code())
    }
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "t" | "transformer" => Ok(Arch::Transformer),
            "c" | "conv" | "cnn" => Ok(Arch::Conv),
            other => Err(Error::Config(format!("unknown architecture {other:?}"))),
        }
    }
}

fn normalise<'g>(x: &Tensor<'g>) -> Result<Tensor<'g>> {
    x.add_scalar(-INPUT_MEAN)?.mul_scalar(1.0 / INPUT_STD)
}

/// A depth network: architecture, config and parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthNet {
    pub arch: Arch,
    pub cfg: NetConfig,
    pub params: ParamSet,
}

impl DepthNet {
    pub fn new(arch: Arch, cfg: NetConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        match arch {
            Arch::Transformer => dpt::init(&mut params, &mut rng, &cfg)?,
            Arch::Conv => conv::init_depth(&mut params, &mut rng, &cfg)?,
        }
        Ok(Self { arch, cfg, params })
    }

    /// Disparity pyramid `[N, 1, H/2^s, W/2^s]`, `s = 0..4`, for `[N, 3, H, W]`
    /// images in `[0, 1]`.
    pub fn forward<'g>(&self, s: &Session<'g, '_>, images: &Tensor<'g>) -> Result<Vec<Tensor<'g>>> {
        let x = normalise(images)?;
        match self.arch {
            Arch::Transformer => Ok(dpt::forward(s, &x, &self.cfg)?.disparities),
            Arch::Conv => Ok(conv::forward_depth(s, &x)?.disparities),
        }
    }

    /// Full-resolution disparity `[H, W]` of one `[3, H, W]` image, inference
    /// mode.
    pub fn predict_disparity(&self, image: &Array) -> Result<Array> {
        let &[c, h, w] = image.shape() else {
            return Err(Error::shape("predict", format!("image {:?} is not CxHxW", image.shape())));
        };
        let g = Graph::new();
        let s = Session::eval(&g, &self.params);
        let x = g.constant(image.clone().reshape(&[1, c, h, w])?);
        let disp = self.forward(&s, &x)?;
        disp[0].to_array().reshape(&[h, w])
    }

    pub fn predict_depth(&self, image: &Array, range: DepthRange) -> Result<Array> {
        Ok(self.predict_disparity(image)?.map(|d| range.depth(d)))
    }
}

/// An ego-motion network, optionally with the intrinsics branch in use.
#[derive(Clone, Debug, PartialEq)]
pub struct EgoNet {
    pub arch: Arch,
    pub cfg: NetConfig,
    pub params: ParamSet,
}

impl EgoNet {
    pub fn new(arch: Arch, cfg: NetConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        match arch {
            Arch::Transformer => ego::init_transformer(&mut params, &mut rng, &cfg)?,
            Arch::Conv => conv::init_ego(&mut params, &mut rng, &cfg)?,
        }
        Ok(Self { arch, cfg, params })
    }

    /// Poses (and intrinsics) for `[N, 6, H, W]` frame pairs in `[0, 1]`.
    pub fn forward<'g>(&self, s: &Session<'g, '_>, pairs: &Tensor<'g>, predict_intrinsics: bool) -> Result<EgoOutput<'g>> {
        let x = normalise(pairs)?;
        match self.arch {
            Arch::Transformer => ego::forward_transformer(s, &x, &self.cfg, predict_intrinsics),
            Arch::Conv => conv::forward_ego(s, &x, predict_intrinsics),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn disparity_endpoints() {
        let r = DepthRange::default();
        assert!((r.depth(1.0) - 0.1).abs() < 1e-12);
        assert!((r.depth(0.0) - 100.0).abs() < 1e-9);
        assert!((r.depth(0.5) - 1.0 / (0.5 * 9.99 + 0.01)).abs() < 1e-12);
        assert!((r.depth(0.5) - 0.1998).abs() < 1e-4);
    }

    #[test]
    fn presets_validate() {
        NetConfig::full().validate().unwrap();
        NetConfig::desk().validate().unwrap();
        assert_eq!(NetConfig::desk().reassemble_channels, [4, 32, 64, 128]);
        assert_eq!(NetConfig::desk().ego_channels, 85);
    }

    #[test]
    fn bad_taps_rejected() {
        let mut c = NetConfig::desk();
        c.tap_layers = [1, 3, 2, 4];
        assert!(c.validate().is_err());
        c.tap_layers = [1, 2, 3, 5];
        assert!(c.validate().is_err());
    }

    #[test]
    fn kv_round_trip() {
        let cfg = NetConfig::desk().with_size(32, 96);
        let mut kv = KeyValues::default();
        cfg.to_kv(&mut kv, "net.");
        let back = NetConfig::full().from_kv(&kv, "net.").unwrap();
        assert_eq!(back, cfg);
    }
}
