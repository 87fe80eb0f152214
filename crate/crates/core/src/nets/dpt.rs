//! Transformer depth network: encoder taps, reassemble, residual fusion and
//! disparity heads.

use rand::Rng;

use super::params::{ParamSet, Session};
use super::transformer::{self, Stage};
use super::NetConfig;
use crate::error::{Error, Result};
use crate::ndiff::Tensor;

const PREFIX: &str = "depth";

pub(crate) fn init_rcu(ps: &mut ParamSet, rng: &mut impl Rng, prefix: &str, c: usize) -> Result<()> {
    ps.conv(rng, &format!("{prefix}.conv1"), c, c, 3, false)?;
    ps.batch_norm(&format!("{prefix}.bn1"), c)?;
    ps.conv(rng, &format!("{prefix}.conv2"), c, c, 3, false)?;
    ps.batch_norm(&format!("{prefix}.bn2"), c)
}

/// Residual conv unit: `x + BN(conv(ReLU(BN(conv(ReLU(x))))))`.
pub fn residual_unit<'g>(s: &Session<'g, '_>, prefix: &str, x: &Tensor<'g>) -> Result<Tensor<'g>> {
    let h = s.conv(&format!("{prefix}.conv1"), &x.relu()?, 1, 1)?;
    let h = s.batch_norm(&format!("{prefix}.bn1"), &h)?.relu()?;
    let h = s.conv(&format!("{prefix}.conv2"), &h, 1, 1)?;
    let h = s.batch_norm(&format!("{prefix}.bn2"), &h)?;
    x.add(&h)
}

pub(crate) fn init_fusion(ps: &mut ParamSet, rng: &mut impl Rng, prefix: &str, skip_channels: usize, cfg: &NetConfig) -> Result<()> {
    let f = cfg.fusion_channels;
    ps.conv(rng, &format!("{prefix}.skip"), f, skip_channels, 3, false)?;
    init_rcu(ps, rng, &format!("{prefix}.rcu1"), f)?;
    init_rcu(ps, rng, &format!("{prefix}.rcu2"), f)
}

/// One fusion stage. The skip features are projected to the fusion width;
/// with a deeper input they pass a residual unit and are added to it. The
/// sum goes through a second residual unit and is bilinearly resized to
/// `out_size` (twice the input size in the regular pyramid).
pub fn fusion<'g>(
    s: &Session<'g, '_>,
    prefix: &str,
    deep: Option<&Tensor<'g>>,
    skip: &Tensor<'g>,
    out_size: (usize, usize),
) -> Result<Tensor<'g>> {
    let x = s.conv(&format!("{prefix}.skip"), skip, 1, 1)?;
    let x = match deep {
        None => x,
        Some(d) => {
            let (ds, xs) = (d.shape(), x.shape());
            if ds != xs {
                return Err(Error::shape("fusion", format!("deep {ds:?} vs projected skip {xs:?}")));
            }
            d.add(&residual_unit(s, &format!("{prefix}.rcu1"), &x)?)?
        }
    };
    let x = residual_unit(s, &format!("{prefix}.rcu2"), &x)?;
    x.resize_bilinear(out_size.0, out_size.1)
}

pub(crate) fn init_head(ps: &mut ParamSet, rng: &mut impl Rng, prefix: &str, in_channels: usize, cfg: &NetConfig) -> Result<()> {
    ps.conv(rng, &format!("{prefix}.conv1"), cfg.head_channels, in_channels, 3, true)?;
    ps.conv(rng, &format!("{prefix}.conv2"), 1, cfg.head_channels, 1, true)
}

/// Disparity head: 3×3 conv, ReLU, bilinear ×2, pointwise conv to one
/// channel, sigmoid.
pub fn head<'g>(s: &Session<'g, '_>, prefix: &str, x: &Tensor<'g>) -> Result<Tensor<'g>> {
    let h = s.conv(&format!("{prefix}.conv1"), x, 1, 1)?.relu()?.upsample2x()?;
    s.conv(&format!("{prefix}.conv2"), &h, 1, 0)?.sigmoid()
}

/// Parameter names and initialisation of the transformer depth network.
pub fn init(ps: &mut ParamSet, rng: &mut impl Rng, cfg: &NetConfig) -> Result<()> {
    transformer::init_embed(ps, rng, &format!("{PREFIX}.embed"), 3, cfg)?;
    transformer::init_blocks(ps, rng, &format!("{PREFIX}.blocks"), cfg)?;
    for i in 0..4 {
        transformer::init_reassemble(ps, rng, &format!("{PREFIX}.reassemble{i}"), Stage::Depth(i), cfg)?;
        init_fusion(ps, rng, &format!("{PREFIX}.fusion{i}"), cfg.reassemble_channels[i], cfg)?;
        init_head(ps, rng, &format!("{PREFIX}.head{i}"), cfg.fusion_channels, cfg)?;
    }
    Ok(())
}

/// Intermediate feature maps of the transformer depth network.
#[derive(Debug)]
pub struct DptTrace<'g> {
    pub reassembled: Vec<Tensor<'g>>,
    /// Fusion outputs; index `s` feeds the head of scale `s`.
    pub fused: Vec<Tensor<'g>>,
    /// Disparity pyramid `[N, 1, H/2^s, W/2^s]`, `s = 0..4`.
    pub disparities: Vec<Tensor<'g>>,
}

fn spatial(t: &Tensor<'_>) -> (usize, usize) {
    let s = t.shape();
    (s[s.len() - 2], s[s.len() - 1])
}

/// Full forward pass on normalised `[N, 3, H, W]` images.
pub fn forward<'g>(s: &Session<'g, '_>, x: &Tensor<'g>, cfg: &NetConfig) -> Result<DptTrace<'g>> {
    let grid = transformer::token_grid(x, cfg)?;
    let tokens = transformer::patch_embed(s, &format!("{PREFIX}.embed"), x, cfg)?;
    let layers = transformer::transformer_encode(s, &format!("{PREFIX}.blocks"), &tokens, cfg)?;
    let mut reassembled = Vec::with_capacity(4);
    for (i, &tap) in cfg.tap_layers.iter().enumerate() {
        let t = layers
            .get(tap.wrapping_sub(1))
            .ok_or_else(|| Error::Config(format!("tap layer {tap} outside 1..={}", layers.len())))?;
        reassembled.push(transformer::reassemble(s, &format!("{PREFIX}.reassemble{i}"), t, grid, Stage::Depth(i), cfg)?);
    }
    let mut fused: Vec<Option<Tensor<'g>>> = vec![None; 4];
    let mut deep: Option<Tensor<'g>> = None;
    for i in (0..4).rev() {
        let out_size = if i > 0 {
            spatial(&reassembled[i - 1])
        } else {
            let (h, w) = spatial(&reassembled[0]);
            (2 * h, 2 * w)
        };
        let f = fusion(s, &format!("{PREFIX}.fusion{i}"), deep.as_ref(), &reassembled[i], out_size)?;
        fused[i] = Some(f);
        deep = Some(f);
    }
    let fused: Vec<Tensor<'g>> = fused.into_iter().map(|f| f.expect("all stages fused")).collect();
    // fused[0] is the shallowest (largest) stage and feeds scale 0.
    let disparities = fused
        .iter()
        .enumerate()
        .map(|(i, f)| head(s, &format!("{PREFIX}.head{i}"), f))
        .collect::<Result<Vec<_>>>()?;
    Ok(DptTrace { reassembled, fused, disparities })
}
