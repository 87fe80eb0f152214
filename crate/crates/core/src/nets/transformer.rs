//! Patch embedding, pre-norm transformer encoder and the reassemble stages
//! that turn tokens back into feature maps.

use rand::Rng;

use super::params::{ParamSet, Session};
use super::NetConfig;
use crate::error::{Error, Result};
use crate::ndiff::{Array, Tensor};

/// Which reassemble stage: a depth tap (0..4, shallow to deep) or the
/// single ego-motion stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Depth(usize),
    Ego,
}

impl Stage {
    /// Output stride relative to the input image.
    pub fn stride(self, cfg: &NetConfig) -> usize {
        match self {
            Stage::Depth(i) => 4 << i,
            Stage::Ego => cfg.patch_size,
        }
    }

    pub fn channels(self, cfg: &NetConfig) -> usize {
        match self {
            Stage::Depth(i) => cfg.reassemble_channels[i],
            Stage::Ego => cfg.ego_channels,
        }
    }

    pub fn label(self) -> String {
        match self {
            Stage::Depth(i) => format!("DN{}", 3 * (i + 1)),
            Stage::Ego => "EN".to_string(),
        }
    }
}

/// Spatial resampling applied after the pointwise projection.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Resample {
    None,
    /// Transposed convolution with kernel = stride = factor.
    Up(usize),
    /// This many 3×3, stride-2, padding-1 convolutions.
    Down(usize),
}

pub fn resample_for(stage: Stage, cfg: &NetConfig) -> Result<Resample> {
    let (p, s) = (cfg.patch_size, stage.stride(cfg));
    if p == s {
        Ok(Resample::None)
    } else if p > s && p % s == 0 && (p / s).is_power_of_two() {
        Ok(Resample::Up(p / s))
    } else if s % p == 0 && (s / p).is_power_of_two() {
        Ok(Resample::Down((s / p).trailing_zeros() as usize))
    } else {
        Err(Error::Config(format!("patch size {p} cannot reach stride {s} of {}", stage.label())))
    }
}

pub(crate) fn init_embed<R: Rng + ?Sized>(
    ps: &mut ParamSet,
    rng: &mut R,
    prefix: &str,
    in_channels: usize,
    cfg: &NetConfig,
) -> Result<()> {
    let (d, p) = (cfg.embed_dim, cfg.patch_size);
    ps.conv(rng, &format!("{prefix}.patch"), d, in_channels, p, true)?;
    let np = (cfg.height / p) * (cfg.width / p);
    ps.insert(format!("{prefix}.readout"), Array::randn(&[1, 1, d], 0.02, rng))?;
    ps.insert(format!("{prefix}.pos"), Array::randn(&[1, np + 1, d], 0.02, rng))
}

pub(crate) fn init_blocks<R: Rng + ?Sized>(ps: &mut ParamSet, rng: &mut R, prefix: &str, cfg: &NetConfig) -> Result<()> {
    let d = cfg.embed_dim;
    let hidden = d * cfg.mlp_ratio;
    for l in 0..cfg.num_layers {
        let b = format!("{prefix}.{l}");
        ps.norm(&format!("{b}.ln1"), d)?;
        ps.linear(rng, &format!("{b}.qkv"), d, 3 * d)?;
        ps.linear(rng, &format!("{b}.proj"), d, d)?;
        ps.norm(&format!("{b}.ln2"), d)?;
        ps.linear(rng, &format!("{b}.fc1"), d, hidden)?;
        ps.linear(rng, &format!("{b}.fc2"), hidden, d)?;
    }
    Ok(())
}

pub(crate) fn init_reassemble<R: Rng + ?Sized>(
    ps: &mut ParamSet,
    rng: &mut R,
    prefix: &str,
    stage: Stage,
    cfg: &NetConfig,
) -> Result<()> {
    let nc = stage.channels(cfg);
    ps.conv(rng, &format!("{prefix}.project"), nc, cfg.embed_dim, 1, true)?;
    match resample_for(stage, cfg)? {
        Resample::None => {}
        Resample::Up(f) => ps.conv_transpose(rng, &format!("{prefix}.up"), nc, nc, f)?,
        Resample::Down(n) => {
            for i in 0..n {
                ps.conv(rng, &format!("{prefix}.down{i}"), nc, nc, 3, true)?;
            }
        }
    }
    Ok(())
}

/// Token grid `(H/p, W/p)` of an `[N, C, H, W]` input.
pub fn token_grid(x: &Tensor<'_>, cfg: &NetConfig) -> Result<(usize, usize)> {
    let s = x.shape();
    let &[_, _, h, w] = s.as_slice() else {
        return Err(Error::shape("patch_embed", format!("input {s:?} is not NCHW")));
    };
    let p = cfg.patch_size;
    if h % p != 0 || w % p != 0 {
        return Err(Error::shape("patch_embed", format!("patch size {p} does not divide {h}x{w}")));
    }
    Ok((h / p, w / p))
}

fn repeat_batch<'g>(t: &Tensor<'g>, n: usize) -> Result<Tensor<'g>> {
    if n == 1 {
        Ok(*t)
    } else {
        Tensor::concat(&vec![*t; n], 0)
    }
}

/// Non-overlapping `p × p` patches to `[N, N_p + 1, d]` tokens: a strided
/// convolution, a learned readout token in front and learned positional
/// embeddings, bilinearly resized when the token grid differs from the one
/// they were initialised for.
pub fn patch_embed<'g>(s: &Session<'g, '_>, prefix: &str, x: &Tensor<'g>, cfg: &NetConfig) -> Result<Tensor<'g>> {
    let (gh, gw) = token_grid(x, cfg)?;
    let n = x.shape()[0];
    let d = cfg.embed_dim;
    let p = cfg.patch_size;
    let patches = s.conv(&format!("{prefix}.patch"), x, p, 0)?;
    let tokens = patches.reshape(&[n, d, gh * gw])?.permute(&[0, 2, 1])?;
    let readout = repeat_batch(&s.get(&format!("{prefix}.readout"))?, n)?;
    let tokens = Tensor::concat(&[readout, tokens], 1)?;
    let pos = s.get(&format!("{prefix}.pos"))?;
    let (ih, iw) = (cfg.height / p, cfg.width / p);
    let pos = if (ih, iw) == (gh, gw) {
        pos
    } else {
        let head = pos.slice(1, 0, 1)?;
        let grid = pos.slice(1, 1, ih * iw + 1)?.permute(&[0, 2, 1])?.reshape(&[d, ih, iw])?;
        let grid = grid.resize_bilinear(gh, gw)?.reshape(&[1, d, gh * gw])?.permute(&[0, 2, 1])?;
        Tensor::concat(&[head, grid], 1)?
    };
    tokens.add(&repeat_batch(&pos, n)?)
}

/// Multi-head self-attention of `[N, T, d]` tokens. Returns the output and
/// the attention weights `[N·heads, T, T]`.
pub fn attention<'g>(
    s: &Session<'g, '_>,
    prefix: &str,
    x: &Tensor<'g>,
    cfg: &NetConfig,
) -> Result<(Tensor<'g>, Tensor<'g>)> {
    let shape = x.shape();
    let &[n, t, d] = shape.as_slice() else {
        return Err(Error::shape("attention", format!("{shape:?} is not NxTxd")));
    };
    let heads = cfg.num_heads;
    if d % heads != 0 {
        return Err(Error::Config(format!("embed dim {d} not divisible by {heads} heads")));
    }
    let dh = d / heads;
    let qkv = s.linear(&format!("{prefix}.qkv"), x)?;
    let split = |i: usize| -> Result<Tensor<'g>> {
        qkv.slice(2, i * d, (i + 1) * d)?
            .reshape(&[n, t, heads, dh])?
            .permute(&[0, 2, 1, 3])?
            .reshape(&[n * heads, t, dh])
    };
    let (q, k, v) = (split(0)?, split(1)?, split(2)?);
    let scores = q.matmul(&k.transpose_last()?)?.mul_scalar(1.0 / (dh as f64).sqrt())?;
    let attn = scores.softmax()?;
    let out = attn
        .matmul(&v)?
        .reshape(&[n, heads, t, dh])?
        .permute(&[0, 2, 1, 3])?
        .reshape(&[n, t, d])?;
    Ok((s.linear(&format!("{prefix}.proj"), &out)?, attn))
}

/// One pre-norm transformer layer: `x + MHSA(LN(x))`, then `x + MLP(LN(x))`.
pub fn transformer_layer<'g>(s: &Session<'g, '_>, prefix: &str, x: &Tensor<'g>, cfg: &NetConfig) -> Result<Tensor<'g>> {
    let h = s.layer_norm(&format!("{prefix}.ln1"), x)?;
    let (a, _) = attention(s, prefix, &h, cfg)?;
    let x = x.add(&a)?;
    let h = s.layer_norm(&format!("{prefix}.ln2"), &x)?;
    let h = s.linear(&format!("{prefix}.fc1"), &h)?.gelu()?;
    let h = s.linear(&format!("{prefix}.fc2"), &h)?;
    x.add(&h)
}

/// Outputs of every transformer layer, shallowest first.
pub fn transformer_encode<'g>(
    s: &Session<'g, '_>,
    prefix: &str,
    tokens: &Tensor<'g>,
    cfg: &NetConfig,
) -> Result<Vec<Tensor<'g>>> {
    if cfg.embed_dim % cfg.num_heads != 0 {
        return Err(Error::Config(format!(
            "embed dim {} not divisible by {} heads",
            cfg.embed_dim, cfg.num_heads
        )));
    }
    let mut outs = Vec::with_capacity(cfg.num_layers);
    let mut x = *tokens;
    for l in 0..cfg.num_layers {
        x = transformer_layer(s, &format!("{prefix}.{l}"), &x, cfg)?;
        outs.push(x);
    }
    Ok(outs)
}

/// Tokens `[N, N_p + 1, d]` on a `gh × gw` grid to a feature map: drop the
/// readout token, unflatten, project to the stage's channel count and
/// resample to the stage's stride.
pub fn reassemble<'g>(
    s: &Session<'g, '_>,
    prefix: &str,
    tokens: &Tensor<'g>,
    grid: (usize, usize),
    stage: Stage,
    cfg: &NetConfig,
) -> Result<Tensor<'g>> {
    let shape = tokens.shape();
    let (gh, gw) = grid;
    let &[n, t, d] = shape.as_slice() else {
        return Err(Error::shape("reassemble", format!("{shape:?} is not NxTxd")));
    };
    if t != gh * gw + 1 || d != cfg.embed_dim {
        return Err(Error::shape("reassemble", format!("{shape:?} for a {gh}x{gw} grid")));
    }
    let x = tokens.slice(1, 1, t)?.permute(&[0, 2, 1])?.reshape(&[n, d, gh, gw])?;
    let x = s.conv(&format!("{prefix}.project"), &x, 1, 0)?;
    match resample_for(stage, cfg)? {
        Resample::None => Ok(x),
        Resample::Up(f) => s.conv_transpose(&format!("{prefix}.up"), &x, f),
        Resample::Down(k) => {
            let mut x = x;
            for i in 0..k {
                x = s.conv(&format!("{prefix}.down{i}"), &x, 2, 1)?;
            }
            Ok(x)
        }
    }
}
