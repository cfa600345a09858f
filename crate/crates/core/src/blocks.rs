//! Learned building blocks: the dilated dense block, channel attention,
//! the gated feed-forward, their SA-CA composite, inter-level resampling,
//! and cross-level fusion.
//!
//! Every residual branch ends in a zero-initialized projection, so a freshly
//! initialized block is the identity map exactly — training starts from a
//! working (if lazy) network and deep supervision sees sane images from step
//! one.
//!
//! Parameter counts (closed forms, verified by enumeration in tests), with
//! C = channels, G = rddb_growth, h = heads, c' = hidden():
//!   conv(cin, cout, k)   = cout*cin*k^2 + cout
//!   rddb(C, G)           = sum_j conv(C+j*G, G, 3) + conv(C+4G, C, 1)
//!   attention(C, h)      = 2C + conv(C, 3C, 1) + dwconv(3C, 3) + h + conv(C, C, 1)
//!   ffn(C, c')           = 2C + 2*(conv(C, c', 1) + dwconv(c', 3)) + conv(c', C, 1)
//!   saca(C, N, ...)      = rddb + N*(attention + ffn)
//! where dwconv(c, k) = c*k^2 + c (one k-by-k filter per channel).

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::params::{join, ConvParams, Init, NormParams, Params};
use crate::tensor::{concat, layer_norm_channels, Conv2dSpec, Scalar, Tensor};
use crate::{Error, Result};

/// Dilation schedule of the four dense stages. Total reach 1+2+4+1 = 8
/// pixels per side.
pub const RDDB_DILATIONS: [usize; 4] = [1, 2, 4, 1];

const NORM_EPS: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SACAConfig {
    pub channels: usize,
    pub n_layers: usize,
    pub heads: usize,
    pub ffn_expand: f64,
    pub rddb_growth: usize,
}

impl SACAConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 {
            return Err(Error::InvalidArg {
                op: "saca_config",
                what: "channels must be >= 1",
            });
        }
        if self.heads == 0 {
            return Err(Error::InvalidArg {
                op: "saca_config",
                what: "heads must be >= 1",
            });
        }
        if self.channels % self.heads != 0 {
            return Err(Error::NotDivisible {
                op: "saca_config",
                what: "channels",
                value: self.channels,
                divisor: self.heads,
            });
        }
        if self.n_layers == 0 {
            return Err(Error::InvalidArg {
                op: "saca_config",
                what: "n_layers must be >= 1",
            });
        }
        if !(self.ffn_expand > 0.0) {
            return Err(Error::InvalidArg {
                op: "saca_config",
                what: "ffn_expand must be > 0",
            });
        }
        if self.rddb_growth == 0 {
            return Err(Error::InvalidArg {
                op: "saca_config",
                what: "rddb_growth must be >= 1",
            });
        }
        Ok(())
    }

    /// Gated-FFN hidden width c' = round(C * ffn_expand), at least 1.
    pub fn hidden(&self) -> usize {
        let c = num_traits::Float::round(self.channels as f64 * self.ffn_expand) as usize;
        c.max(1)
    }
}

// ---------------------------------------------------------------- RDDB

#[derive(Clone)]
pub struct RddbParams<T: Scalar> {
    pub stages: Vec<ConvParams<T>>,
    pub fuse: ConvParams<T>,
}

impl<T: Scalar> RddbParams<T> {
    pub fn init(init: &mut Init, channels: usize, growth: usize) -> Result<Self> {
        let mut stages = Vec::with_capacity(4);
        for j in 0..4 {
            stages.push(init.conv(channels + j * growth, growth, 3)?);
        }
        Ok(Self {
            stages,
            fuse: init.conv_zero(channels + 4 * growth, channels, 1)?,
        })
    }
}

impl<T: Scalar> Params<T> for RddbParams<T> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<T>)>) {
        for (j, s) in self.stages.iter().enumerate() {
            s.visit(&join(prefix, &alloc::format!("stage{j}")), out);
        }
        self.fuse.visit(&join(prefix, "fuse"), out);
    }

    fn map(
        &self,
        prefix: &str,
        f: &mut dyn FnMut(&str, &Tensor<T>) -> Result<Tensor<T>>,
    ) -> Result<Self> {
        let mut stages = Vec::with_capacity(self.stages.len());
        for (j, s) in self.stages.iter().enumerate() {
            stages.push(s.map(&join(prefix, &alloc::format!("stage{j}")), f)?);
        }
        Ok(Self {
            stages,
            fuse: self.fuse.map(&join(prefix, "fuse"), f)?,
        })
    }
}

/// Four densely connected 3x3 stages at dilations [1,2,4,1], gelu after each,
/// 1x1 fusion back to the input width, residual add.
pub fn rddb_forward<T: Scalar>(x: &Tensor<T>, params: &RddbParams<T>) -> Result<Tensor<T>> {
    if x.rank() != 4 {
        return Err(Error::RankMismatch {
            op: "rddb_forward",
            expected: 4,
            found: x.rank(),
        });
    }
    let mut feats: Vec<Tensor<T>> = vec![x.clone()];
    for (stage, dil) in params.stages.iter().zip(RDDB_DILATIONS) {
        let refs: Vec<&Tensor<T>> = feats.iter().collect();
        let cat = concat(&refs, 1)?;
        feats.push(stage.forward(&cat, Conv2dSpec::same3x3(dil))?.gelu()?);
    }
    let refs: Vec<&Tensor<T>> = feats.iter().collect();
    let cat = concat(&refs, 1)?;
    params.fuse.forward(&cat, Conv2dSpec::unit())?.add(x)
}

// ----------------------------------------------------- channel attention

#[derive(Clone)]
pub struct AttnParams<T: Scalar> {
    pub norm: NormParams<T>,
    pub qkv_point: ConvParams<T>,
    pub qkv_depth: ConvParams<T>,
    pub alpha: Tensor<T>,
    pub out_proj: ConvParams<T>,
}

impl<T: Scalar> AttnParams<T> {
    pub fn init(init: &mut Init, channels: usize, heads: usize) -> Result<Self> {
        Ok(Self {
            norm: init.norm(channels)?,
            qkv_point: init.conv(channels, 3 * channels, 1)?,
            qkv_depth: init.conv(1, 3 * channels, 3)?,
            alpha: init.ones(heads)?,
            out_proj: init.conv_zero(channels, channels, 1)?,
        })
    }
}

impl<T: Scalar> Params<T> for AttnParams<T> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<T>)>) {
        self.norm.visit(&join(prefix, "norm"), out);
        self.qkv_point.visit(&join(prefix, "qkv_point"), out);
        self.qkv_depth.visit(&join(prefix, "qkv_depth"), out);
        out.push((join(prefix, "alpha"), &self.alpha));
        self.out_proj.visit(&join(prefix, "out_proj"), out);
    }

    fn map(
        &self,
        prefix: &str,
        f: &mut dyn FnMut(&str, &Tensor<T>) -> Result<Tensor<T>>,
    ) -> Result<Self> {
        Ok(Self {
            norm: self.norm.map(&join(prefix, "norm"), f)?,
            qkv_point: self.qkv_point.map(&join(prefix, "qkv_point"), f)?,
            qkv_depth: self.qkv_depth.map(&join(prefix, "qkv_depth"), f)?,
            alpha: f(&join(prefix, "alpha"), &self.alpha)?,
            out_proj: self.out_proj.map(&join(prefix, "out_proj"), f)?,
        })
    }
}

fn qkv<T: Scalar>(
    x: &Tensor<T>,
    params: &AttnParams<T>,
    heads: usize,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>, usize, usize)> {
    let (b, c, h, w) = (x.dims()[0], x.dims()[1], x.dims()[2], x.dims()[3]);
    if c % heads != 0 {
        return Err(Error::NotDivisible {
            op: "channel_attention",
            what: "channels",
            value: c,
            divisor: heads,
        });
    }
    let n = layer_norm_channels(x, &params.norm.gain, &params.norm.offset, NORM_EPS)?;
    let t = params.qkv_point.forward(&n, Conv2dSpec::unit())?;
    let t = params
        .qkv_depth
        .forward(&t, Conv2dSpec::same3x3(1).with_groups(3 * c))?;
    let ch = c / heads;
    let hw = h * w;
    // channel-major layout makes the per-head view a plain reshape
    let q = t.slice(1, 0, c)?.reshape(&[b, heads, ch, hw])?;
    let k = t.slice(1, c, 2 * c)?.reshape(&[b, heads, ch, hw])?;
    let v = t.slice(1, 2 * c, 3 * c)?.reshape(&[b, heads, ch, hw])?;
    Ok((q, k, v, ch, hw))
}

/// Per-head channel-by-channel attention probabilities, rows summing to 1:
/// softmax over the key axis of alpha * (Q' K'^T). Shape [B, heads, C/h, C/h].
pub fn channel_attention_probs<T: Scalar>(
    x: &Tensor<T>,
    params: &AttnParams<T>,
    heads: usize,
) -> Result<Tensor<T>> {
    let (q, k, _, _, _) = qkv(x, params, heads)?;
    let logits = q.matmul(&k.transpose_last2()?)?;
    logits.mul_axis(&params.alpha, 1)?.softmax(3)
}

/// Attention over the channel axis: Q,K,V from 1x1 + 3x3 depthwise
/// projections of the normalized input, (C/h)^2 logits per head scaled by a
/// learnable temperature, softmax over key channels, then a zero-initialized
/// output projection and the residual add of the raw input.
pub fn channel_attention<T: Scalar>(
    x: &Tensor<T>,
    params: &AttnParams<T>,
    heads: usize,
) -> Result<Tensor<T>> {
    let (b, c, h, w) = (x.dims()[0], x.dims()[1], x.dims()[2], x.dims()[3]);
    let (q, k, v, ch, hw) = qkv(x, params, heads)?;
    let logits = q.matmul(&k.transpose_last2()?)?;
    let probs = logits.mul_axis(&params.alpha, 1)?.softmax(3)?;
    let mixed = probs.matmul(&v)?; // [b, heads, ch, hw]
    debug_assert_eq!(mixed.dims(), &[b, heads, ch, hw]);
    let mixed = mixed.reshape(&[b, c, h, w])?;
    params
        .out_proj
        .forward(&mixed, Conv2dSpec::unit())?
        .add(x)
}

// ------------------------------------------------------------ gated FFN

#[derive(Clone)]
pub struct FfnParams<T: Scalar> {
    pub norm: NormParams<T>,
    pub gate_point: ConvParams<T>,
    pub gate_depth: ConvParams<T>,
    pub value_point: ConvParams<T>,
    pub value_depth: ConvParams<T>,
    pub out_proj: ConvParams<T>,
}

impl<T: Scalar> FfnParams<T> {
    pub fn init(init: &mut Init, channels: usize, hidden: usize) -> Result<Self> {
        Ok(Self {
            norm: init.norm(channels)?,
            gate_point: init.conv(channels, hidden, 1)?,
            gate_depth: init.conv(1, hidden, 3)?,
            value_point: init.conv(channels, hidden, 1)?,
            value_depth: init.conv(1, hidden, 3)?,
            out_proj: init.conv_zero(hidden, channels, 1)?,
        })
    }
}

impl<T: Scalar> Params<T> for FfnParams<T> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<T>)>) {
        self.norm.visit(&join(prefix, "norm"), out);
        self.gate_point.visit(&join(prefix, "gate_point"), out);
        self.gate_depth.visit(&join(prefix, "gate_depth"), out);
        self.value_point.visit(&join(prefix, "value_point"), out);
        self.value_depth.visit(&join(prefix, "value_depth"), out);
        self.out_proj.visit(&join(prefix, "out_proj"), out);
    }

    fn map(
        &self,
        prefix: &str,
        f: &mut dyn FnMut(&str, &Tensor<T>) -> Result<Tensor<T>>,
    ) -> Result<Self> {
        Ok(Self {
            norm: self.norm.map(&join(prefix, "norm"), f)?,
            gate_point: self.gate_point.map(&join(prefix, "gate_point"), f)?,
            gate_depth: self.gate_depth.map(&join(prefix, "gate_depth"), f)?,
            value_point: self.value_point.map(&join(prefix, "value_point"), f)?,
            value_depth: self.value_depth.map(&join(prefix, "value_depth"), f)?,
            out_proj: self.out_proj.map(&join(prefix, "out_proj"), f)?,
        })
    }
}

/// Two spatial projections of the normalized input; one is squashed through
/// gelu and gates the other elementwise before the zero-initialized output
/// projection and residual add.
pub fn gated_ffn<T: Scalar>(x: &Tensor<T>, params: &FfnParams<T>) -> Result<Tensor<T>> {
    let hidden = params.gate_depth.weight.dims()[0];
    let n = layer_norm_channels(x, &params.norm.gain, &params.norm.offset, NORM_EPS)?;
    let gate = params.gate_point.forward(&n, Conv2dSpec::unit())?;
    let gate = params
        .gate_depth
        .forward(&gate, Conv2dSpec::same3x3(1).with_groups(hidden))?
        .gelu()?;
    let val = params.value_point.forward(&n, Conv2dSpec::unit())?;
    let val = params
        .value_depth
        .forward(&val, Conv2dSpec::same3x3(1).with_groups(hidden))?;
    params
        .out_proj
        .forward(&gate.mul(&val)?, Conv2dSpec::unit())?
        .add(x)
}

// ---------------------------------------------------------- SA-CA block

#[derive(Clone)]
pub struct LayerParams<T: Scalar> {
    pub attn: AttnParams<T>,
    pub ffn: FfnParams<T>,
}

impl<T: Scalar> Params<T> for LayerParams<T> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<T>)>) {
        self.attn.visit(&join(prefix, "attn"), out);
        self.ffn.visit(&join(prefix, "ffn"), out);
    }

    fn map(
        &self,
        prefix: &str,
        f: &mut dyn FnMut(&str, &Tensor<T>) -> Result<Tensor<T>>,
    ) -> Result<Self> {
        Ok(Self {
            attn: self.attn.map(&join(prefix, "attn"), f)?,
            ffn: self.ffn.map(&join(prefix, "ffn"), f)?,
        })
    }
}

#[derive(Clone)]
pub struct SacaParams<T: Scalar> {
    pub rddb: RddbParams<T>,
    pub layers: Vec<LayerParams<T>>,
}

impl<T: Scalar> SacaParams<T> {
    pub fn init(init: &mut Init, cfg: &SACAConfig) -> Result<Self> {
        cfg.validate()?;
        let rddb = RddbParams::init(init, cfg.channels, cfg.rddb_growth)?;
        let mut layers = Vec::with_capacity(cfg.n_layers);
        for _ in 0..cfg.n_layers {
            layers.push(LayerParams {
                attn: AttnParams::init(init, cfg.channels, cfg.heads)?,
                ffn: FfnParams::init(init, cfg.channels, cfg.hidden())?,
            });
        }
        Ok(Self { rddb, layers })
    }
}

impl<T: Scalar> Params<T> for SacaParams<T> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<T>)>) {
        self.rddb.visit(&join(prefix, "rddb"), out);
        for (i, l) in self.layers.iter().enumerate() {
            l.visit(&join(prefix, &alloc::format!("layer{i}")), out);
        }
    }

    fn map(
        &self,
        prefix: &str,
        f: &mut dyn FnMut(&str, &Tensor<T>) -> Result<Tensor<T>>,
    ) -> Result<Self> {
        // visit order: rddb first, then layers
        let rddb = self.rddb.map(&join(prefix, "rddb"), f)?;
        let mut layers = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            layers.push(l.map(&join(prefix, &alloc::format!("layer{i}")), f)?);
        }
        Ok(Self { rddb, layers })
    }
}

/// RDDB once, then n_layers of attention + gated FFN.
pub fn saca_block<T: Scalar>(
    x: &Tensor<T>,
    cfg: &SACAConfig,
    params: &SacaParams<T>,
) -> Result<Tensor<T>> {
    saca_block_fused(x, cfg, params, None)
}

/// Same, optionally splicing fused cross-level features in after the first
/// n_layers/2 transformer layers (requires an even n_layers).
pub fn saca_block_fused<T: Scalar>(
    x: &Tensor<T>,
    cfg: &SACAConfig,
    params: &SacaParams<T>,
    fusion: Option<(&FusionParams<T>, &[&Tensor<T>])>,
) -> Result<Tensor<T>> {
    cfg.validate()?;
    if params.layers.len() != cfg.n_layers {
        return Err(Error::InvalidArg {
            op: "saca_block",
            what: "params were built for a different n_layers",
        });
    }
    if fusion.is_some() && cfg.n_layers % 2 != 0 {
        return Err(Error::NotDivisible {
            op: "saca_block",
            what: "n_layers with mid-block fusion",
            value: cfg.n_layers,
            divisor: 2,
        });
    }
    let mut y = rddb_forward(x, &params.rddb)?;
    for (i, layer) in params.layers.iter().enumerate() {
        if let Some((fuse, injected)) = fusion {
            if i == cfg.n_layers / 2 {
                y = hierarchical_fusion(&y, fuse, injected)?;
            }
        }
        y = channel_attention(&y, &layer.attn, cfg.heads)?;
        y = gated_ffn(&y, &layer.ffn)?;
    }
    Ok(y)
}

// ------------------------------------------------------------ resampling

#[derive(Clone)]
pub struct DownParams<T: Scalar> {
    pub conv: ConvParams<T>,
}

impl<T: Scalar> DownParams<T> {
    pub fn init(init: &mut Init, channels: usize) -> Result<Self> {
        Ok(Self {
            conv: init.conv(4 * channels, 2 * channels, 1)?,
        })
    }
}

impl<T: Scalar> Params<T> for DownParams<T> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<T>)>) {
        self.conv.visit(&join(prefix, "conv"), out);
    }

    fn map(
        &self,
        prefix: &str,
        f: &mut dyn FnMut(&str, &Tensor<T>) -> Result<Tensor<T>>,
    ) -> Result<Self> {
        Ok(Self {
            conv: self.conv.map(&join(prefix, "conv"), f)?,
        })
    }
}

/// [B,C,H,W] -> [B,2C,H/2,W/2]: pixel-unshuffle then 1x1.
pub fn downsample<T: Scalar>(x: &Tensor<T>, params: &DownParams<T>) -> Result<Tensor<T>> {
    params
        .conv
        .forward(&x.pixel_unshuffle(2)?, Conv2dSpec::unit())
}

#[derive(Clone)]
pub struct UpParams<T: Scalar> {
    pub conv: ConvParams<T>,
}

impl<T: Scalar> UpParams<T> {
    /// Zero-initialized: an upsampled contribution starts silent, so decoder
    /// levels begin as pass-throughs of their skip connections.
    pub fn init(init: &mut Init, channels: usize) -> Result<Self> {
        Ok(Self {
            conv: init.conv_zero(channels, 2 * channels, 1)?,
        })
    }
}

impl<T: Scalar> Params<T> for UpParams<T> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<T>)>) {
        self.conv.visit(&join(prefix, "conv"), out);
    }

    fn map(
        &self,
        prefix: &str,
        f: &mut dyn FnMut(&str, &Tensor<T>) -> Result<Tensor<T>>,
    ) -> Result<Self> {
        Ok(Self {
            conv: self.conv.map(&join(prefix, "conv"), f)?,
        })
    }
}

/// [B,C,H,W] -> [B,C/2,2H,2W]: 1x1 to 2C then pixel-shuffle.
pub fn upsample<T: Scalar>(x: &Tensor<T>, params: &UpParams<T>) -> Result<Tensor<T>> {
    if x.rank() != 4 {
        return Err(Error::RankMismatch {
            op: "upsample",
            expected: 4,
            found: x.rank(),
        });
    }
    if x.dims()[1] % 2 != 0 {
        return Err(Error::NotDivisible {
            op: "upsample",
            what: "channels",
            value: x.dims()[1],
            divisor: 2,
        });
    }
    params
        .conv
        .forward(x, Conv2dSpec::unit())?
        .pixel_shuffle(2)
}

// ---------------------------------------------------------------- fusion

#[derive(Clone)]
pub struct FusionParams<T: Scalar> {
    pub projs: Vec<ConvParams<T>>,
    pub fuse: ConvParams<T>,
}

impl<T: Scalar> FusionParams<T> {
    /// `injected_channels` lists the width of each incoming feature. The
    /// final fuse conv starts as [identity | zero]: host state passes
    /// through untouched until training opens the injected slice.
    pub fn init(init: &mut Init, host_channels: usize, injected_channels: &[usize]) -> Result<Self> {
        let mut projs = Vec::with_capacity(injected_channels.len());
        for &c in injected_channels {
            projs.push(init.conv(c, host_channels, 1)?);
        }
        let cin = host_channels * (1 + injected_channels.len());
        Ok(Self {
            projs,
            fuse: init.conv_passthrough(cin, host_channels)?,
        })
    }
}

impl<T: Scalar> Params<T> for FusionParams<T> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<T>)>) {
        for (i, p) in self.projs.iter().enumerate() {
            p.visit(&join(prefix, &alloc::format!("proj{i}")), out);
        }
        self.fuse.visit(&join(prefix, "fuse"), out);
    }

    fn map(
        &self,
        prefix: &str,
        f: &mut dyn FnMut(&str, &Tensor<T>) -> Result<Tensor<T>>,
    ) -> Result<Self> {
        let mut projs = Vec::with_capacity(self.projs.len());
        for (i, p) in self.projs.iter().enumerate() {
            projs.push(p.map(&join(prefix, &alloc::format!("proj{i}")), f)?);
        }
        Ok(Self {
            projs,
            fuse: self.fuse.map(&join(prefix, "fuse"), f)?,
        })
    }
}

/// Splice coarser decoder features into a host state: bilinear-resize each to
/// the host resolution, project to host width, concatenate, fuse with a 1x1
/// back to host width.
pub fn hierarchical_fusion<T: Scalar>(
    host: &Tensor<T>,
    params: &FusionParams<T>,
    injected: &[&Tensor<T>],
) -> Result<Tensor<T>> {
    if injected.len() != params.projs.len() {
        return Err(Error::InvalidArg {
            op: "hierarchical_fusion",
            what: "wrong number of injected features for these params",
        });
    }
    let (h, w) = (host.dims()[2], host.dims()[3]);
    let mut parts: Vec<Tensor<T>> = vec![host.clone()];
    for (feat, proj) in injected.iter().zip(&params.projs) {
        let resized = feat.interpolate_bilinear(h, w, false)?;
        parts.push(proj.forward(&resized, Conv2dSpec::unit())?);
    }
    let refs: Vec<&Tensor<T>> = parts.iter().collect();
    params.fuse.forward(&concat(&refs, 1)?, Conv2dSpec::unit())
}
