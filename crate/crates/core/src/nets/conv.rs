//! Convolutional baseline: residual encoder, skip-connection disparity
//! decoder and the convolutional ego network.

use rand::Rng;

use super::ego::{self, EgoOutput};
use super::params::{ParamSet, Session};
use super::NetConfig;
use crate::error::{Error, Result};
use crate::ndiff::Tensor;

fn init_encoder(ps: &mut ParamSet, rng: &mut impl Rng, prefix: &str, in_channels: usize, cfg: &NetConfig) -> Result<()> {
    let mut cin = in_channels;
    for (i, &c) in cfg.conv_channels.iter().enumerate() {
        let b = format!("{prefix}.stage{i}");
        ps.conv(rng, &format!("{b}.conv1"), c, cin, 3, false)?;
        ps.batch_norm(&format!("{b}.bn1"), c)?;
        ps.conv(rng, &format!("{b}.conv2"), c, c, 3, false)?;
        ps.batch_norm(&format!("{b}.bn2"), c)?;
        ps.conv(rng, &format!("{b}.short"), c, cin, 1, false)?;
        ps.batch_norm(&format!("{b}.bn_short"), c)?;
        cin = c;
    }
    Ok(())
}

/// Residual encoder: four stride-2 stages, stage `s` at `H/2^(s+1)`.
pub fn encoder<'g>(s: &Session<'g, '_>, prefix: &str, x: &Tensor<'g>) -> Result<Vec<Tensor<'g>>> {
    let mut feats = Vec::with_capacity(4);
    let mut x = *x;
    for i in 0..4 {
        let b = format!("{prefix}.stage{i}");
        let h = s.conv(&format!("{b}.conv1"), &x, 2, 1)?;
        let h = s.batch_norm(&format!("{b}.bn1"), &h)?.relu()?;
        let h = s.conv(&format!("{b}.conv2"), &h, 1, 1)?;
        let h = s.batch_norm(&format!("{b}.bn2"), &h)?;
        let short = s.conv(&format!("{b}.short"), &x, 2, 0)?;
        let short = s.batch_norm(&format!("{b}.bn_short"), &short)?;
        x = h.add(&short)?.relu()?;
        feats.push(x);
    }
    Ok(feats)
}

const DEPTH: &str = "depth";
const EGO: &str = "ego";

pub fn init_depth(ps: &mut ParamSet, rng: &mut impl Rng, cfg: &NetConfig) -> Result<()> {
    init_encoder(ps, rng, &format!("{DEPTH}.encoder"), 3, cfg)?;
    let enc = cfg.conv_channels;
    let dec = cfg.decoder_channels;
    for i in (0..4).rev() {
        let b = format!("{DEPTH}.decoder{i}");
        let cin = if i == 3 { enc[3] } else { dec[i + 1] };
        ps.conv(rng, &format!("{b}.up"), dec[i], cin, 3, true)?;
        let skip = if i > 0 { enc[i - 1] } else { 0 };
        ps.conv(rng, &format!("{b}.merge"), dec[i], dec[i] + skip, 3, true)?;
        ps.conv(rng, &format!("{b}.disp"), 1, dec[i], 3, true)?;
    }
    Ok(())
}

fn spatial(t: &Tensor<'_>) -> (usize, usize) {
    let s = t.shape();
    (s[s.len() - 2], s[s.len() - 1])
}

/// Encoder features plus the disparity pyramid of the convolutional depth
/// network.
#[derive(Debug)]
pub struct ConvTrace<'g> {
    pub encoded: Vec<Tensor<'g>>,
    pub disparities: Vec<Tensor<'g>>,
}

/// Convolutional depth network on normalised `[N, 3, H, W]` images.
pub fn forward_depth<'g>(s: &Session<'g, '_>, x: &Tensor<'g>) -> Result<ConvTrace<'g>> {
    let shape = x.shape();
    if shape.len() != 4 || shape[1] != 3 {
        return Err(Error::shape("conv_depth", format!("input {shape:?} is not Nx3xHxW")));
    }
    let encoded = encoder(s, &format!("{DEPTH}.encoder"), x)?;
    let mut disparities: Vec<Option<Tensor<'g>>> = vec![None; 4];
    let mut h = encoded[3];
    for i in (0..4).rev() {
        let b = format!("{DEPTH}.decoder{i}");
        let up = s.conv(&format!("{b}.up"), &h, 1, 1)?.elu()?;
        let merged = if i > 0 {
            let (sh, sw) = spatial(&encoded[i - 1]);
            Tensor::concat(&[up.resize_bilinear(sh, sw)?, encoded[i - 1]], 1)?
        } else {
            up.upsample2x()?
        };
        h = s.conv(&format!("{b}.merge"), &merged, 1, 1)?.elu()?;
        disparities[i] = Some(s.conv(&format!("{b}.disp"), &h, 1, 1)?.sigmoid()?);
    }
    let disparities = disparities.into_iter().map(|d| d.expect("every scale decoded")).collect();
    Ok(ConvTrace { encoded, disparities })
}

pub fn init_ego(ps: &mut ParamSet, rng: &mut impl Rng, cfg: &NetConfig) -> Result<()> {
    init_encoder(ps, rng, &format!("{EGO}.encoder"), 6, cfg)?;
    ego::init_pose_decoder(ps, rng, &format!("{EGO}.decoder"), cfg.conv_channels[3], cfg)
}

/// Convolutional ego network on normalised `[N, 6, H, W]` frame pairs.
pub fn forward_ego<'g>(s: &Session<'g, '_>, pairs: &Tensor<'g>, predict_intrinsics: bool) -> Result<EgoOutput<'g>> {
    let shape = pairs.shape();
    if shape.len() != 4 || shape[1] != 6 {
        return Err(Error::shape("conv_ego", format!("pairs {shape:?} are not Nx6xHxW")));
    }
    let feats = encoder(s, &format!("{EGO}.encoder"), pairs)?;
    ego::pose_decoder(s, &format!("{EGO}.decoder"), &feats[3], (shape[2], shape[3]), predict_intrinsics)
}
