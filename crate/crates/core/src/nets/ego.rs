//! Ego-motion networks: transformer encoder with a single reassemble stage,
//! the shared convolutional pose decoder and the intrinsics branch.

use rand::Rng;

use super::params::{ParamSet, Session};
use super::transformer::{self, Stage};
use super::NetConfig;
use crate::error::{Error, Result};
use crate::ndiff::{Array, Tensor};

/// Scale applied to the raw pose outputs.
pub const POSE_SCALE: f64 = 0.01;

/// Scale applied to the raw intrinsics logits.
pub const INTRINSICS_SCALE: f64 = 0.01;

/// Outputs of an ego-motion network for `N` frame pairs.
#[derive(Clone, Copy, Debug)]
pub struct EgoOutput<'g> {
    /// `[N, 6]`: axis-angle rotation then translation.
    pub pose: Tensor<'g>,
    /// `[N, 4]`: `fx, fy, cx, cy` in pixels, when requested.
    pub intrinsics: Option<Tensor<'g>>,
}

pub(crate) fn init_pose_decoder(
    ps: &mut ParamSet,
    rng: &mut impl Rng,
    prefix: &str,
    in_channels: usize,
    cfg: &NetConfig,
) -> Result<()> {
    let c = cfg.pose_channels;
    ps.conv(rng, &format!("{prefix}.squeeze"), c, in_channels, 1, true)?;
    ps.conv(rng, &format!("{prefix}.pose0"), c, c, 3, true)?;
    ps.conv(rng, &format!("{prefix}.pose1"), c, c, 3, true)?;
    ps.insert(format!("{prefix}.pose2.weight"), Array::zeros(&[6, c, 1, 1]))?;
    ps.insert(format!("{prefix}.pose2.bias"), Array::zeros(&[6]))?;
    // Zero weights: the branch starts at f = (W, H), c = (W, H) / 2.
    let softplus_inv_one = (std::f64::consts::E - 1.0).ln();
    ps.insert(format!("{prefix}.focal.weight"), Array::zeros(&[2, c, 1, 1]))?;
    ps.insert(format!("{prefix}.focal.bias"), Array::full(&[2], softplus_inv_one / INTRINSICS_SCALE))?;
    ps.insert(format!("{prefix}.principal.weight"), Array::zeros(&[2, c, 1, 1]))?;
    ps.insert(format!("{prefix}.principal.bias"), Array::full(&[2], 0.5 / INTRINSICS_SCALE))?;
    Ok(())
}

/// Pose decoder over `[N, C, h, w]` features: pointwise squeeze, two 3×3
/// convolutions and a pointwise layer to six values, averaged spatially and
/// scaled by [`POSE_SCALE`]. The intrinsics branch reads the second 3×3
/// layer before its activation, pools it globally and applies two
/// pointwise layers: softplus for the focal lengths and identity for the
/// principal point, both multiplied by the image size `(W, H)`.
pub fn pose_decoder<'g>(
    s: &Session<'g, '_>,
    prefix: &str,
    features: &Tensor<'g>,
    image_size: (usize, usize),
    predict_intrinsics: bool,
) -> Result<EgoOutput<'g>> {
    let n = features.shape()[0];
    let x = s.conv(&format!("{prefix}.squeeze"), features, 1, 0)?.relu()?;
    let x = s.conv(&format!("{prefix}.pose0"), &x, 1, 1)?.relu()?;
    let pre = s.conv(&format!("{prefix}.pose1"), &x, 1, 1)?;
    let out = s.conv(&format!("{prefix}.pose2"), &pre.relu()?, 1, 0)?;
    let pose = global_pool(&out)?.reshape(&[n, 6])?.mul_scalar(POSE_SCALE)?;
    let intrinsics = if predict_intrinsics {
        if !s.has(&format!("{prefix}.focal.weight")) {
            return Err(Error::InvalidArgument("intrinsics requested but branch weights are absent".into()));
        }
        let pooled = global_pool(&pre)?;
        let c = pooled.shape()[1];
        let pooled = pooled.reshape(&[n, c, 1, 1])?;
        let (h, w) = image_size;
        let size = pooled.graph().constant(Array::from_vec(&[2], vec![w as f64, h as f64])?);
        let focal = s
            .conv(&format!("{prefix}.focal"), &pooled, 1, 0)?
            .mul_scalar(INTRINSICS_SCALE)?
            .softplus()?
            .reshape(&[n, 2])?
            .mul_bias(&size, 1)?;
        let principal = s
            .conv(&format!("{prefix}.principal"), &pooled, 1, 0)?
            .mul_scalar(INTRINSICS_SCALE)?
            .reshape(&[n, 2])?
            .mul_bias(&size, 1)?;
        Some(Tensor::concat(&[focal, principal], 1)?)
    } else {
        None
    };
    Ok(EgoOutput { pose, intrinsics })
}

/// Mean over the two spatial axes: `[N, C, h, w]` to `[N, C]`.
pub fn global_pool<'g>(x: &Tensor<'g>) -> Result<Tensor<'g>> {
    let s = x.shape();
    let &[n, c, h, w] = s.as_slice() else {
        return Err(Error::shape("global_pool", format!("{s:?} is not NCHW")));
    };
    x.reshape(&[n, c, h * w])?.mean_axis(2)
}

const PREFIX: &str = "ego";

/// Parameter names and initialisation of the transformer ego network.
pub fn init_transformer(ps: &mut ParamSet, rng: &mut impl Rng, cfg: &NetConfig) -> Result<()> {
    transformer::init_embed(ps, rng, &format!("{PREFIX}.embed"), 6, cfg)?;
    transformer::init_blocks(ps, rng, &format!("{PREFIX}.blocks"), cfg)?;
    transformer::init_reassemble(ps, rng, &format!("{PREFIX}.reassemble"), Stage::Ego, cfg)?;
    init_pose_decoder(ps, rng, &format!("{PREFIX}.decoder"), cfg.ego_channels, cfg)
}

/// Transformer ego network on normalised `[N, 6, H, W]` frame pairs.
pub fn forward_transformer<'g>(
    s: &Session<'g, '_>,
    pairs: &Tensor<'g>,
    cfg: &NetConfig,
    predict_intrinsics: bool,
) -> Result<EgoOutput<'g>> {
    let grid = transformer::token_grid(pairs, cfg)?;
    let shape = pairs.shape();
    if shape[1] != 6 {
        return Err(Error::shape("ego_forward", format!("pairs {shape:?} need 6 channels")));
    }
    let tokens = transformer::patch_embed(s, &format!("{PREFIX}.embed"), pairs, cfg)?;
    let layers = transformer::transformer_encode(s, &format!("{PREFIX}.blocks"), &tokens, cfg)?;
    let last = layers.last().ok_or_else(|| Error::Config("transformer has no layers".into()))?;
    let features = transformer::reassemble(s, &format!("{PREFIX}.reassemble"), last, grid, Stage::Ego, cfg)?;
    pose_decoder(s, &format!("{PREFIX}.decoder"), &features, (shape[2], shape[3]), predict_intrinsics)
}
