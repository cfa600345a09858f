//! The dual-branch network: two three-level encoder–decoders (one per
//! frequency component), deep-supervision image heads at every decoder
//! level, and the learnable composition transform that fuses the branch
//! features into the final image.
//!
//! Checkpoints are a flat list of named f32 tensors with a CRC32 over the
//! body; the layout is pinned by tests and documented on
//! [`encode_checkpoint`].

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use crate::blocks::{
    downsample, saca_block_fused, upsample, DownParams, FusionParams, LayerParams, SACAConfig,
    SacaParams, UpParams,
};
use crate::freq::{decompose, footprint};
use crate::params::{join, ConvParams, Init, Params};
use crate::tensor::{pad2d, Conv2dSpec, PadMode, PadSpec, Scalar, Tensor};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelConfig {
    /// Width at the top level; levels run [C, 2C, 4C].
    pub base_channels: usize,
    /// Transformer layers per encoder level, high branch, fine-to-coarse.
    pub enc_n_high: [usize; 3],
    /// Decoder layers, high branch. Top and mid entries must be even: the
    /// cross-level fusion splits those blocks in half.
    pub dec_n_high: [usize; 3],
    pub enc_n_low: [usize; 3],
    pub dec_n_low: [usize; 3],
    /// Attention heads per level; must divide the level width.
    pub heads: [usize; 3],
    /// Post-fusion transformer depth.
    pub n_f: usize,
    pub ffn_expand: f64,
    pub rddb_growth: usize,
    /// Frequency-split depth L; the minimum workable image side is
    /// `footprint(L)`.
    pub freq_levels: usize,
    /// Stem pixel-unshuffle / head pixel-shuffle factor.
    pub shuffle_factor: usize,
    /// Side length the low-frequency component is resized to for training
    /// and (by default) inference.
    pub low_side: usize,
}

impl ModelConfig {
    /// Small config that trains on a desk CPU in minutes.
    pub fn desk() -> Self {
        Self {
            base_channels: 16,
            enc_n_high: [2, 2, 2],
            dec_n_high: [4, 4, 2],
            enc_n_low: [1, 2, 2],
            dec_n_low: [1, 2, 2],
            heads: [1, 2, 4],
            n_f: 2,
            ffn_expand: 2.0,
            rddb_growth: 16,
            freq_levels: 3,
            shuffle_factor: 2,
            low_side: 64,
        }
    }

    /// Full-size config. Lands at 6,085,940 parameters, within half a
    /// percent of the published model; kept as documentation, not a test
    /// subject — nothing here trains it.
    pub fn paper_scale() -> Self {
        Self {
            base_channels: 39,
            rddb_growth: 39,
            low_side: 512,
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_channels == 0 {
            return Err(Error::InvalidArg {
                op: "model_config",
                what: "base_channels must be >= 1",
            });
        }
        if self.shuffle_factor == 0 {
            return Err(Error::InvalidArg {
                op: "model_config",
                what: "shuffle_factor must be >= 1",
            });
        }
        if !(1..=5).contains(&self.freq_levels) {
            return Err(Error::InvalidArg {
                op: "model_config",
                what: "freq_levels must be in 1..=5",
            });
        }
        if self.n_f == 0 {
            return Err(Error::InvalidArg {
                op: "model_config",
                what: "n_f must be >= 1",
            });
        }
        for level in 0..3 {
            for n in [
                self.enc_n_high[level],
                self.dec_n_high[level],
                self.enc_n_low[level],
                self.dec_n_low[level],
            ] {
                self.saca(level, n).validate()?;
            }
        }
        // fused decoder blocks split around their midpoint
        for level in [0usize, 1] {
            if self.dec_n_high[level] % 2 != 0 {
                return Err(Error::NotDivisible {
                    op: "model_config",
                    what: "dec_n_high at a fused level",
                    value: self.dec_n_high[level],
                    divisor: 2,
                });
            }
        }
        let need = self.shuffle_factor * 4;
        if self.low_side % need != 0 || self.low_side == 0 {
            return Err(Error::NotDivisible {
                op: "model_config",
                what: "low_side",
                value: self.low_side,
                divisor: need,
            });
        }
        Ok(())
    }

    pub fn level_width(&self, level: usize) -> usize {
        self.base_channels << level
    }

    fn saca(&self, level: usize, n_layers: usize) -> SACAConfig {
        SACAConfig {
            channels: self.level_width(level),
            n_layers,
            heads: self.heads[level],
            ffn_expand: self.ffn_expand,
            rddb_growth: self.rddb_growth,
        }
    }

    fn head_channels(&self) -> usize {
        3 * self.shuffle_factor * self.shuffle_factor
    }
}

pub struct BranchOutput<T: Scalar> {
    /// Predicted component images, full / half / quarter of the branch input.
    pub images: [Tensor<T>; 3],
    /// Top decoder feature, captured before its image head.
    pub feat: Tensor<T>,
}

#[derive(Clone)]
pub struct BranchFusion<T: Scalar> {
    pub mid: FusionParams<T>,
    pub top: FusionParams<T>,
}

#[derive(Clone)]
pub struct BranchParams<T: Scalar> {
    pub stem: ConvParams<T>,
    pub enc: Vec<SacaParams<T>>,
    pub down: Vec<DownParams<T>>,
    pub up: Vec<UpParams<T>>,
    pub dec: Vec<SacaParams<T>>,
    pub fusion: Option<BranchFusion<T>>,
    pub heads: Vec<ConvParams<T>>,
}

impl<T: Scalar> BranchParams<T> {
    fn init(init: &mut Init, cfg: &ModelConfig, enc_n: [usize; 3], dec_n: [usize; 3], fused: bool) -> Result<Self> {
        let c = cfg.base_channels;
        let stem = init.conv(3 * cfg.shuffle_factor * cfg.shuffle_factor, c, 3)?;
        let mut enc = Vec::with_capacity(3);
        let mut down = Vec::with_capacity(2);
        for level in 0..3 {
            enc.push(SacaParams::init(init, &cfg.saca(level, enc_n[level]))?);
            if level < 2 {
                down.push(DownParams::init(init, cfg.level_width(level))?);
            }
        }
        let mut up = Vec::with_capacity(2);
        for level in 0..2 {
            // up[level] lifts level+1 features back to level
            up.push(UpParams::init(init, cfg.level_width(level + 1))?);
        }
        let mut dec = Vec::with_capacity(3);
        for level in 0..3 {
            dec.push(SacaParams::init(init, &cfg.saca(level, dec_n[level]))?);
        }
        let fusion = if fused {
            Some(BranchFusion {
                mid: FusionParams::init(init, cfg.level_width(1), &[cfg.level_width(2)])?,
                top: FusionParams::init(
                    init,
                    cfg.level_width(0),
                    &[cfg.level_width(2), cfg.level_width(1)],
                )?,
            })
        } else {
            None
        };
        let mut heads = Vec::with_capacity(3);
        for level in 0..3 {
            heads.push(init.conv(cfg.level_width(level), cfg.head_channels(), 3)?);
        }
        Ok(Self {
            stem,
            enc,
            down,
            up,
            dec,
            fusion,
            heads,
        })
    }
}

impl<T: Scalar> Params<T> for BranchParams<T> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<T>)>) {
        self.stem.visit(&join(prefix, "stem"), out);
        for (i, p) in self.enc.iter().enumerate() {
            p.visit(&join(prefix, &alloc::format!("enc{i}")), out);
        }
        for (i, p) in self.down.iter().enumerate() {
            p.visit(&join(prefix, &alloc::format!("down{i}")), out);
        }
        for (i, p) in self.up.iter().enumerate() {
            p.visit(&join(prefix, &alloc::format!("up{i}")), out);
        }
        for (i, p) in self.dec.iter().enumerate() {
            p.visit(&join(prefix, &alloc::format!("dec{i}")), out);
        }
        if let Some(f) = &self.fusion {
            f.mid.visit(&join(prefix, "fuse_mid"), out);
            f.top.visit(&join(prefix, "fuse_top"), out);
        }
        for (i, p) in self.heads.iter().enumerate() {
            p.visit(&join(prefix, &alloc::format!("head{i}")), out);
        }
    }

    fn map(
        &self,
        prefix: &str,
        f: &mut dyn FnMut(&str, &Tensor<T>) -> Result<Tensor<T>>,
    ) -> Result<Self> {
        // field order must track visit order exactly
        let stem = self.stem.map(&join(prefix, "stem"), f)?;
        let mut enc = Vec::with_capacity(self.enc.len());
        for (i, p) in self.enc.iter().enumerate() {
            enc.push(p.map(&join(prefix, &alloc::format!("enc{i}")), f)?);
        }
        let mut down = Vec::with_capacity(self.down.len());
        for (i, p) in self.down.iter().enumerate() {
            down.push(p.map(&join(prefix, &alloc::format!("down{i}")), f)?);
        }
        let mut up = Vec::with_capacity(self.up.len());
        for (i, p) in self.up.iter().enumerate() {
            up.push(p.map(&join(prefix, &alloc::format!("up{i}")), f)?);
        }
        let mut dec = Vec::with_capacity(self.dec.len());
        for (i, p) in self.dec.iter().enumerate() {
            dec.push(p.map(&join(prefix, &alloc::format!("dec{i}")), f)?);
        }
        let fusion = match &self.fusion {
            Some(fu) => Some(BranchFusion {
                mid: fu.mid.map(&join(prefix, "fuse_mid"), f)?,
                top: fu.top.map(&join(prefix, "fuse_top"), f)?,
            }),
            None => None,
        };
        let mut heads = Vec::with_capacity(self.heads.len());
        for (i, p) in self.heads.iter().enumerate() {
            heads.push(p.map(&join(prefix, &alloc::format!("head{i}")), f)?);
        }
        Ok(Self {
            stem,
            enc,
            down,
            up,
            dec,
            fusion,
            heads,
        })
    }
}

fn image_head<T: Scalar>(
    feat: &Tensor<T>,
    head: &ConvParams<T>,
    shuffle: usize,
) -> Result<Tensor<T>> {
    head.forward(feat, Conv2dSpec::same3x3(1))?
        .pixel_shuffle(shuffle)
}

/// One encoder–decoder branch. The encoder visits three widths [C, 2C, 4C];
/// the decoder mirrors it with zero-initialized upsample contributions added
/// onto same-level encoder skips, so a fresh branch's top feature equals its
/// stem output. High-branch decoders splice the coarser decoder features in
/// at their block midpoints.
pub fn branch_forward<T: Scalar>(
    x: &Tensor<T>,
    params: &BranchParams<T>,
    cfg: &ModelConfig,
) -> Result<BranchOutput<T>> {
    if x.rank() != 4 {
        return Err(Error::RankMismatch {
            op: "branch_forward",
            expected: 4,
            found: x.rank(),
        });
    }
    let need = cfg.shuffle_factor * 4;
    for axis in [2usize, 3] {
        if x.dims()[axis] % need != 0 || x.dims()[axis] == 0 {
            return Err(Error::NotDivisible {
                op: "branch_forward",
                what: "input extents",
                value: x.dims()[axis],
                divisor: need,
            });
        }
    }
    let enc_n = if params.fusion.is_some() {
        cfg.enc_n_high
    } else {
        cfg.enc_n_low
    };
    let dec_n = if params.fusion.is_some() {
        cfg.dec_n_high
    } else {
        cfg.dec_n_low
    };

    let stem = params
        .stem
        .forward(&x.pixel_unshuffle(cfg.shuffle_factor)?, Conv2dSpec::same3x3(1))?;

    let e0 = saca_block_fused(&stem, &cfg.saca(0, enc_n[0]), &params.enc[0], None)?;
    let e1 = saca_block_fused(
        &downsample(&e0, &params.down[0])?,
        &cfg.saca(1, enc_n[1]),
        &params.enc[1],
        None,
    )?;
    let e2 = saca_block_fused(
        &downsample(&e1, &params.down[1])?,
        &cfg.saca(2, enc_n[2]),
        &params.enc[2],
        None,
    )?;

    let f3 = saca_block_fused(&e2, &cfg.saca(2, dec_n[2]), &params.dec[2], None)?;

    let u1 = upsample(&f3, &params.up[1])?.add(&e1)?;
    let injected_mid = [&f3];
    let f2 = saca_block_fused(
        &u1,
        &cfg.saca(1, dec_n[1]),
        &params.dec[1],
        params
            .fusion
            .as_ref()
            .map(|fu| (&fu.mid, injected_mid.as_slice())),
    )?;

    let u0 = upsample(&f2, &params.up[0])?.add(&e0)?;
    let injected_top = [&f3, &f2];
    let f1 = saca_block_fused(
        &u0,
        &cfg.saca(0, dec_n[0]),
        &params.dec[0],
        params
            .fusion
            .as_ref()
            .map(|fu| (&fu.top, injected_top.as_slice())),
    )?;

    let images = [
        image_head(&f1, &params.heads[0], cfg.shuffle_factor)?,
        image_head(&f2, &params.heads[1], cfg.shuffle_factor)?,
        image_head(&f3, &params.heads[2], cfg.shuffle_factor)?,
    ];
    Ok(BranchOutput { images, feat: f1 })
}

// ------------------------------------------------------------------- FCT

#[derive(Clone)]
pub struct FctParams<T: Scalar> {
    pub fuse_low: ConvParams<T>,
    pub fuse_high: ConvParams<T>,
    pub layers: Vec<LayerParams<T>>,
    pub head: ConvParams<T>,
}

impl<T: Scalar> FctParams<T> {
    fn init(init: &mut Init, cfg: &ModelConfig) -> Result<Self> {
        let c = cfg.base_channels;
        let saca = cfg.saca(0, 1);
        let mut layers = Vec::with_capacity(cfg.n_f);
        for _ in 0..cfg.n_f {
            layers.push(LayerParams {
                attn: crate::blocks::AttnParams::init(init, c, cfg.heads[0])?,
                ffn: crate::blocks::FfnParams::init(init, c, saca.hidden())?,
            });
        }
        Ok(Self {
            fuse_low: init.conv(c, c, 1)?,
            fuse_high: init.conv(c, c, 1)?,
            layers,
            head: init.conv(c, cfg.head_channels(), 3)?,
        })
    }
}

impl<T: Scalar> Params<T> for FctParams<T> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<T>)>) {
        self.fuse_low.visit(&join(prefix, "fuse_low"), out);
        self.fuse_high.visit(&join(prefix, "fuse_high"), out);
        for (i, l) in self.layers.iter().enumerate() {
            l.visit(&join(prefix, &alloc::format!("layer{i}")), out);
        }
        self.head.visit(&join(prefix, "head"), out);
    }

    fn map(
        &self,
        prefix: &str,
        f: &mut dyn FnMut(&str, &Tensor<T>) -> Result<Tensor<T>>,
    ) -> Result<Self> {
        let fuse_low = self.fuse_low.map(&join(prefix, "fuse_low"), f)?;
        let fuse_high = self.fuse_high.map(&join(prefix, "fuse_high"), f)?;
        let mut layers = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            layers.push(l.map(&join(prefix, &alloc::format!("layer{i}")), f)?);
        }
        Ok(Self {
            fuse_low,
            fuse_high,
            layers,
            head: self.head.map(&join(prefix, "head"), f)?,
        })
    }
}

/// Fuse the two branch features and decode the final image. The additive
/// 1x1 pair is the concat-conv factored into two half-matrices (it doubles
/// only the bias count); the post-fusion stack is attention + gated FFN
/// without a dense block.
pub fn fct_fuse<T: Scalar>(
    feat_low: &Tensor<T>,
    feat_high: &Tensor<T>,
    params: &FctParams<T>,
    cfg: &ModelConfig,
) -> Result<Tensor<T>> {
    if feat_low.dims() != feat_high.dims() {
        return Err(Error::ShapeMismatch {
            op: "fct_fuse",
            axis: 0,
            expected: feat_high.dims()[0],
            found: feat_low.dims()[0],
        });
    }
    let mut f = params
        .fuse_low
        .forward(feat_low, Conv2dSpec::unit())?
        .add(&params.fuse_high.forward(feat_high, Conv2dSpec::unit())?)?;
    for layer in &params.layers {
        f = crate::blocks::channel_attention(&f, &layer.attn, cfg.heads[0])?;
        f = crate::blocks::gated_ffn(&f, &layer.ffn)?;
    }
    image_head(&f, &params.head, cfg.shuffle_factor)
}

// ----------------------------------------------------------------- model

pub struct Model<T: Scalar> {
    pub config: ModelConfig,
    pub high: BranchParams<T>,
    pub low: BranchParams<T>,
    pub fct: FctParams<T>,
}

impl<T: Scalar> Model<T> {
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut init = Init::new(seed);
        let high = BranchParams::init(&mut init, &config, config.enc_n_high, config.dec_n_high, true)?;
        let low = BranchParams::init(&mut init, &config, config.enc_n_low, config.dec_n_low, false)?;
        let fct = FctParams::init(&mut init, &config)?;
        Ok(Self {
            config,
            high,
            low,
            fct,
        })
    }

    /// Copy with gradient tracking stripped: forward passes through a frozen
    /// model build no tape, which is what inference wants.
    pub fn frozen(&self) -> Result<Self> {
        let mut f = |_: &str, t: &Tensor<T>| Tensor::from_vec("frozen", t.data().to_vec(), t.dims());
        Ok(Self {
            config: self.config,
            high: self.high.map("high", &mut f)?,
            low: self.low.map("low", &mut f)?,
            fct: self.fct.map("fct", &mut f)?,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        encode_checkpoint(&self.named())
    }

    /// Rebuild from checkpoint bytes: every stored entry must match a live
    /// parameter in name and shape, and vice versa.
    pub fn from_bytes(config: ModelConfig, bytes: &[u8]) -> Result<Self> {
        let entries = decode_checkpoint(bytes)?;
        let mut by_name: BTreeMap<String, CkptEntry> =
            entries.into_iter().map(|e| (e.name.clone(), e)).collect();
        let skeleton = Self::init(config, 0)?;
        let mut load = |name: &str, t: &Tensor<T>| -> Result<Tensor<T>> {
            let e = by_name.remove(name).ok_or_else(|| Error::CkptParam {
                name: String::from(name),
                detail: String::from("missing from checkpoint"),
            })?;
            if e.dims != t.dims() {
                return Err(Error::CkptParam {
                    name: String::from(name),
                    detail: alloc::format!(
                        "shape {:?} does not match the live config's {:?}",
                        e.dims,
                        t.dims()
                    ),
                });
            }
            let data: Vec<T> = e.data.iter().map(|&v| T::from64(v as f64)).collect();
            Tensor::var("loaded", data, t.dims())
        };
        let high = skeleton.high.map("high", &mut load)?;
        let low = skeleton.low.map("low", &mut load)?;
        let fct = skeleton.fct.map("fct", &mut load)?;
        if let Some((name, _)) = by_name.into_iter().next() {
            return Err(Error::CkptParam {
                name,
                detail: String::from("not a parameter of this config"),
            });
        }
        Ok(Self {
            config,
            high,
            low,
            fct,
        })
    }
}

impl<T: Scalar> Params<T> for Model<T> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<T>)>) {
        self.high.visit(&join(prefix, "high"), out);
        self.low.visit(&join(prefix, "low"), out);
        self.fct.visit(&join(prefix, "fct"), out);
    }

    fn map(
        &self,
        prefix: &str,
        f: &mut dyn FnMut(&str, &Tensor<T>) -> Result<Tensor<T>>,
    ) -> Result<Self> {
        let high = self.high.map(&join(prefix, "high"), f)?;
        let low = self.low.map(&join(prefix, "low"), f)?;
        Ok(Self {
            config: self.config,
            high,
            low,
            fct: self.fct.map(&join(prefix, "fct"), f)?,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LowMode {
    /// Low branch sees the full-resolution low component.
    Full,
    /// Low component resized to side x side first (the training regime).
    Resize(usize),
}

/// Full pipeline on one image: split, run both branches, fuse. The input is
/// replicate-padded on the bottom/right to the working multiple (and to the
/// split's minimum side), and the output is cropped back.
pub fn infer<T: Scalar>(
    image: &Tensor<T>,
    model: &Model<T>,
    low_mode: LowMode,
) -> Result<Tensor<T>> {
    let cfg = &model.config;
    if image.rank() != 4 {
        return Err(Error::RankMismatch {
            op: "infer",
            expected: 4,
            found: image.rank(),
        });
    }
    let (h, w) = (image.dims()[2], image.dims()[3]);
    let need = cfg.shuffle_factor * 4;
    let floor = footprint(cfg.freq_levels);
    let target = |n: usize| -> usize {
        let n = n.max(floor);
        n.div_ceil(need) * need
    };
    let (th, tw) = (target(h), target(w));
    let padded = if (th, tw) == (h, w) {
        image.clone()
    } else {
        pad2d(
            image,
            &PadSpec {
                mode: PadMode::Replicate,
                top: 0,
                bottom: th - h,
                left: 0,
                right: tw - w,
            },
        )?
    };

    let (low, high) = decompose(&padded, cfg.freq_levels)?;
    let high_out = branch_forward(&high, &model.high, cfg)?;

    let low_in = match low_mode {
        LowMode::Full => low,
        LowMode::Resize(side) => {
            if side % need != 0 || side == 0 {
                return Err(Error::NotDivisible {
                    op: "infer",
                    what: "low resize side",
                    value: side,
                    divisor: need,
                });
            }
            low.interpolate_bilinear(side, side, false)?
        }
    };
    let low_out = branch_forward(&low_in, &model.low, cfg)?;

    let (fh, fw) = (high_out.feat.dims()[2], high_out.feat.dims()[3]);
    let feat_low = low_out.feat.interpolate_bilinear(fh, fw, false)?;
    let out = fct_fuse(&feat_low, &high_out.feat, &model.fct, cfg)?;
    if (th, tw) == (h, w) {
        Ok(out)
    } else {
        out.crop2d(0, 0, h, w)
    }
}

// ------------------------------------------------------------ checkpoint

pub const CKPT_MAGIC: [u8; 8] = *b"FQFM0001";
const DTYPE_F32: u8 = 0;

pub struct CkptEntry {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

/// Layout: 8-byte magic, u32 entry count, then per entry a u32 name length,
/// the UTF-8 name, a dtype tag byte (0 = f32), a rank byte, u32 extents, and
/// the f32 little-endian payload. A CRC32 of everything between the magic
/// and the checksum closes the file.
pub fn encode_checkpoint<T: Scalar>(entries: &[(String, &Tensor<T>)]) -> Vec<u8> {
    let mut body = Vec::new();
    body.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, t) in entries {
        body.extend_from_slice(&(name.len() as u32).to_le_bytes());
        body.extend_from_slice(name.as_bytes());
        body.push(DTYPE_F32);
        body.push(t.rank() as u8);
        for d in t.dims() {
            body.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        for v in t.data() {
            body.extend_from_slice(&(v.to64() as f32).to_le_bytes());
        }
    }
    let mut hasher = crc32fast::Hasher::new();
    hasher.update(&body);
    let crc = hasher.finalize();

    let mut out = Vec::with_capacity(8 + body.len() + 4);
    out.extend_from_slice(&CKPT_MAGIC);
    out.extend_from_slice(&body);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Vec<CkptEntry>> {
    if bytes.len() < 8 || bytes[..8] != CKPT_MAGIC {
        return Err(Error::CkptMagic);
    }
    if bytes.len() < 8 + 4 + 4 {
        return Err(Error::CkptTruncated);
    }
    let body = &bytes[8..bytes.len() - 4];
    let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
    let mut hasher = crc32fast::Hasher::new();
    hasher.update(body);
    let computed = hasher.finalize();
    if stored != computed {
        return Err(Error::CkptChecksum { stored, computed });
    }

    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
        if *pos + n > body.len() {
            return Err(Error::CkptTruncated);
        }
        let s = &body[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };
    let take_u32 = |pos: &mut usize| -> Result<u32> {
        Ok(u32::from_le_bytes(take(pos, 4)?.try_into().unwrap()))
    };

    let count = take_u32(&mut pos)? as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = take_u32(&mut pos)? as usize;
        let name = core::str::from_utf8(take(&mut pos, name_len)?)
            .map_err(|_| Error::CkptTruncated)?;
        let name = String::from(name);
        let dtype = take(&mut pos, 1)?[0];
        if dtype != DTYPE_F32 {
            return Err(Error::CkptDtype(dtype));
        }
        let rank = take(&mut pos, 1)?[0] as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(take_u32(&mut pos)? as usize);
        }
        let numel: usize = dims.iter().product();
        let raw = take(&mut pos, numel * 4)?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        entries.push(CkptEntry { name, dims, data });
    }
    if pos != body.len() {
        return Err(Error::CkptTruncated);
    }
    Ok(entries)
}
