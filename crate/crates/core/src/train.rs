//! Two-stage trainer: deep-supervised per-branch warmup on component crops
//! and resizes, then a joint pass that fuses both branches per sample.
//! Adam with bias correction, a cyclic cosine schedule, global-norm
//! clipping, and per-sample gradient accumulation. Every run is a pure
//! function of (seed, config, data).

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use num_traits::Float;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::freq::decompose;
use crate::model::{branch_forward, decode_checkpoint, fct_fuse, Model};
use crate::moire::SamplePair;
use crate::params::{Init, Params};
use crate::tensor::{conv2d, Conv2dSpec, PadMode, PadSpec, Scalar, Tensor};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Stage1High,
    Stage1Low,
    Stage2Joint,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub stage: Stage,
    pub lr0: f64,
    pub epochs: usize,
    pub batch: usize,
    /// High-branch (and stage-2) square crop side.
    pub crop_side: usize,
    /// Low-branch resize target.
    pub resize_side: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    /// Cosine cycle length in epochs; the schedule restarts at multiples.
    pub cycle_epochs: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: f64,
}

impl TrainConfig {
    pub fn desk(stage: Stage) -> Self {
        Self {
            stage,
            lr0: 2e-4,
            epochs: 1,
            batch: 2,
            crop_side: 64,
            resize_side: 64,
            lambda1: 1.0,
            lambda2: 0.1,
            cycle_epochs: 1,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: 1.0,
        }
    }

    /// `divisor` is the model's working multiple (shuffle factor times the
    /// two downsamples).
    pub fn validate(&self, divisor: usize) -> Result<()> {
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(Error::InvalidArg {
                op: "train_config",
                what: "lr0 must be positive",
            });
        }
        for lambda in [self.lambda1, self.lambda2] {
            if !(lambda >= 0.0 && lambda.is_finite()) {
                return Err(Error::InvalidArg {
                    op: "train_config",
                    what: "lambda weights must be >= 0",
                });
            }
        }
        if self.epochs == 0 || self.batch == 0 || self.cycle_epochs == 0 {
            return Err(Error::InvalidArg {
                op: "train_config",
                what: "epochs, batch, and cycle_epochs must be >= 1",
            });
        }
        for (what, side) in [("crop_side", self.crop_side), ("resize_side", self.resize_side)] {
            if side == 0 || side % divisor != 0 {
                return Err(Error::NotDivisible {
                    op: "train_config",
                    what,
                    value: side,
                    divisor,
                });
            }
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::InvalidArg {
                op: "train_config",
                what: "clip_norm must be positive",
            });
        }
        for beta in [self.beta1, self.beta2] {
            if !(0.0..1.0).contains(&beta) {
                return Err(Error::InvalidArg {
                    op: "train_config",
                    what: "betas must lie in [0, 1)",
                });
            }
        }
        Ok(())
    }
}

/// Pixel window of a high-branch crop within the full image. Origins are
/// even so the window lands on the half-resolution feature grid exactly.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CropBox {
    pub x1: usize,
    pub y1: usize,
    pub x2: usize,
    pub y2: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BranchKind {
    High,
    Low,
}

pub struct Stage1Sample<T: Scalar> {
    pub input: Tensor<T>,
    /// Clean-component targets at full, half, and quarter scale.
    pub targets: [Tensor<T>; 3],
    pub crop: Option<CropBox>,
}

fn draw_even_origin(rng: &mut ChaCha8Rng, room: usize) -> usize {
    2 * rng.random_range(0..=room / 2)
}

fn target_pyramid<T: Scalar>(full: &Tensor<T>) -> Result<[Tensor<T>; 3]> {
    let (h, w) = (full.dims()[2], full.dims()[3]);
    Ok([
        full.clone(),
        full.interpolate_bilinear(h / 2, w / 2, false)?,
        full.interpolate_bilinear(h / 4, w / 4, false)?,
    ])
}

/// Draw one stage-1 training example: the high branch crops a random even-
/// aligned window out of both components' high parts, the low branch
/// resizes the low parts; clean targets come in a three-scale pyramid.
pub fn sample_stage1<T: Scalar>(
    pair: &SamplePair<T>,
    branch: BranchKind,
    cfg: &TrainConfig,
    levels: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Stage1Sample<T>> {
    if pair.moire.dims() != pair.clean.dims() {
        return Err(Error::ShapeMismatch {
            op: "sample_stage1",
            axis: 2,
            expected: pair.clean.dims()[2],
            found: pair.moire.dims()[2],
        });
    }
    let (low_m, high_m) = decompose(&pair.moire, levels)?;
    let (low_c, high_c) = decompose(&pair.clean, levels)?;
    match branch {
        BranchKind::High => {
            let (h, w) = (pair.moire.dims()[2], pair.moire.dims()[3]);
            let s = cfg.crop_side;
            if h < s || w < s {
                return Err(Error::InvalidArg {
                    op: "sample_stage1",
                    what: "image extents below crop_side",
                });
            }
            let y1 = draw_even_origin(rng, h - s);
            let x1 = draw_even_origin(rng, w - s);
            let input = high_m.crop2d(y1, x1, s, s)?;
            let targets = target_pyramid(&high_c.crop2d(y1, x1, s, s)?)?;
            Ok(Stage1Sample {
                input,
                targets,
                crop: Some(CropBox {
                    x1,
                    y1,
                    x2: x1 + s,
                    y2: y1 + s,
                }),
            })
        }
        BranchKind::Low => {
            let s = cfg.resize_side;
            let input = low_m.interpolate_bilinear(s, s, false)?;
            let targets = target_pyramid(&low_c.interpolate_bilinear(s, s, false)?)?;
            Ok(Stage1Sample {
                input,
                targets,
                crop: None,
            })
        }
    }
}

// ---------------------------------------------------------------- losses

pub fn l1_loss<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    a.sub(b)?.abs()?.mean()
}

/// Frozen multi-stage conv pyramid standing in for a pretrained feature
/// network: each stage is a stride-2 zero-padded conv followed by gelu.
/// The default is seed-deterministic random weights; externally computed
/// weights load through [`FeatureExtractor::from_checkpoint_bytes`] with
/// entries named `stage{i}.weight` / `stage{i}.bias`.
pub struct FeatureExtractor<T: Scalar> {
    stages: Vec<(Tensor<T>, Tensor<T>)>,
}

impl<T: Scalar> FeatureExtractor<T> {
    pub fn seeded(seed: u64) -> Result<Self> {
        let mut init = Init::new(seed);
        let mut stages = Vec::new();
        for (cin, cout) in [(3usize, 8usize), (8, 16), (16, 32)] {
            let c = init.conv(cin, cout, 3)?;
            stages.push((
                Tensor::from_vec("fe_weight", c.weight.data().to_vec(), c.weight.dims())?,
                Tensor::from_vec("fe_bias", c.bias.data().to_vec(), c.bias.dims())?,
            ));
        }
        Ok(Self { stages })
    }

    pub fn from_checkpoint_bytes(bytes: &[u8]) -> Result<Self> {
        let entries = decode_checkpoint(bytes)?;
        let mut by_name: BTreeMap<String, (Vec<usize>, Vec<f32>)> = entries
            .into_iter()
            .map(|e| (e.name, (e.dims, e.data)))
            .collect();
        let mut stages = Vec::new();
        let mut chain = 3usize;
        for i in 0usize.. {
            let wname = format!("stage{i}.weight");
            let bname = format!("stage{i}.bias");
            let Some((wdims, wdata)) = by_name.remove(&wname) else {
                break;
            };
            let (bdims, bdata) = by_name.remove(&bname).ok_or_else(|| Error::CkptParam {
                name: bname.clone(),
                detail: String::from("missing bias for its weight"),
            })?;
            if wdims.len() != 4 || wdims[1] != chain {
                return Err(Error::CkptParam {
                    name: wname,
                    detail: format!("want rank-4 weight with {chain} input channels, got {wdims:?}"),
                });
            }
            if bdims != [wdims[0]] {
                return Err(Error::CkptParam {
                    name: bname,
                    detail: format!("bias {bdims:?} does not match {} filters", wdims[0]),
                });
            }
            chain = wdims[0];
            let to_t = |v: &[f32]| -> Vec<T> { v.iter().map(|&x| T::from64(x as f64)).collect() };
            stages.push((
                Tensor::from_vec("fe_weight", to_t(&wdata), &wdims)?,
                Tensor::from_vec("fe_bias", to_t(&bdata), &bdims)?,
            ));
        }
        if stages.is_empty() {
            return Err(Error::CkptParam {
                name: String::from("stage0.weight"),
                detail: String::from("missing from checkpoint"),
            });
        }
        if let Some((name, _)) = by_name.into_iter().next() {
            return Err(Error::CkptParam {
                name,
                detail: String::from("not a stage entry"),
            });
        }
        Ok(Self { stages })
    }

    pub fn n_stages(&self) -> usize {
        self.stages.len()
    }

    pub fn features(&self, x: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        let mut f = x.clone();
        let mut out = Vec::with_capacity(self.stages.len());
        for (w, b) in &self.stages {
            let k = w.dims()[2];
            let spec = Conv2dSpec {
                stride: 2,
                dilation: 1,
                groups: 1,
                pad: PadSpec {
                    mode: PadMode::Zero,
                    top: k / 2,
                    bottom: k / 2,
                    left: k / 2,
                    right: k / 2,
                },
            };
            f = conv2d(&f, w, Some(b), &spec)?.gelu()?;
            out.push(f.clone());
        }
        Ok(out)
    }
}

pub fn perceptual_loss<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    extractor: &FeatureExtractor<T>,
) -> Result<Tensor<T>> {
    let fa = extractor.features(a)?;
    let fb = extractor.features(b)?;
    let mut total: Option<Tensor<T>> = None;
    for (xa, xb) in fa.iter().zip(&fb) {
        let term = l1_loss(xa, xb)?;
        total = Some(match total {
            Some(t) => t.add(&term)?,
            None => term,
        });
    }
    Ok(total.expect("extractor has at least one stage"))
}

pub struct LossParts<T: Scalar> {
    pub total: Tensor<T>,
    pub l1: f64,
    pub lp: f64,
}

/// Deep-supervised composite: sum over the three scales of L1 + lambda * Lp.
pub fn stage1_loss<T: Scalar>(
    images: &[Tensor<T>],
    targets: &[Tensor<T>],
    lambda1: f64,
    extractor: &FeatureExtractor<T>,
) -> Result<LossParts<T>> {
    if images.len() != targets.len() || images.is_empty() {
        return Err(Error::InvalidArg {
            op: "stage1_loss",
            what: "prediction and target scale counts differ",
        });
    }
    let mut total: Option<Tensor<T>> = None;
    let (mut l1_sum, mut lp_sum) = (0.0f64, 0.0f64);
    for (img, gt) in images.iter().zip(targets) {
        let l1 = l1_loss(img, gt)?;
        let lp = perceptual_loss(img, gt, extractor)?;
        l1_sum += l1.data()[0].to64();
        lp_sum += lp.data()[0].to64();
        let term = l1.add(&lp.mul_scalar(T::from64(lambda1))?)?;
        total = Some(match total {
            Some(t) => t.add(&term)?,
            None => term,
        });
    }
    Ok(LossParts {
        total: total.expect("nonempty scales"),
        l1: l1_sum,
        lp: lp_sum,
    })
}

/// Single-scale composite for the joint stage: L1 + lambda * Lp.
pub fn stage2_loss<T: Scalar>(
    pred: &Tensor<T>,
    gt: &Tensor<T>,
    lambda2: f64,
    extractor: &FeatureExtractor<T>,
) -> Result<LossParts<T>> {
    let l1 = l1_loss(pred, gt)?;
    let lp = perceptual_loss(pred, gt, extractor)?;
    let parts = LossParts {
        l1: l1.data()[0].to64(),
        lp: lp.data()[0].to64(),
        total: l1.add(&lp.mul_scalar(T::from64(lambda2))?)?,
    };
    Ok(parts)
}

// ------------------------------------------------------------- optimizer

struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Adam with bias correction. Moments live in f64 keyed by parameter name;
/// parameters missing a gradient entry decay their moments against a zero
/// gradient, which keeps momentum semantics exact.
pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    state: BTreeMap<String, Moments>,
}

impl Adam {
    pub fn new(cfg: &TrainConfig) -> Self {
        Self {
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            t: 0,
            state: BTreeMap::new(),
        }
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    /// One update over a parameter group. `grads` maps full names to
    /// f64 gradients (already scaled for clipping); missing names mean a
    /// zero gradient.
    pub fn step<T: Scalar, P: Params<T>>(
        &mut self,
        params: &P,
        prefix: &str,
        lr: f64,
        grads: &BTreeMap<String, Vec<f64>>,
        scale: f64,
    ) -> Result<P> {
        self.t += 1;
        let t = self.t;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let bias1 = 1.0 - Float::powi(b1, t as i32);
        let bias2 = 1.0 - Float::powi(b2, t as i32);
        let state = &mut self.state;
        params.map(prefix, &mut |name, tensor| {
            let n = tensor.numel();
            let entry = state.entry(String::from(name)).or_insert_with(|| Moments {
                m: alloc::vec![0.0; n],
                v: alloc::vec![0.0; n],
            });
            if entry.m.len() != n {
                return Err(Error::InvalidArg {
                    op: "adam_step",
                    what: "optimizer state shaped for a different model",
                });
            }
            let g = grads.get(name);
            let mut next = Vec::with_capacity(n);
            for (i, p) in tensor.data().iter().enumerate() {
                let gi = g.map_or(0.0, |v| v[i]) * scale;
                entry.m[i] = b1 * entry.m[i] + (1.0 - b1) * gi;
                entry.v[i] = b2 * entry.v[i] + (1.0 - b2) * gi * gi;
                let m_hat = entry.m[i] / bias1;
                let v_hat = entry.v[i] / bias2;
                next.push(T::from64(p.to64() - lr * m_hat / (Float::sqrt(v_hat) + eps)));
            }
            Tensor::var("adam", next, tensor.dims())
        })
    }
}

/// Pull gradients off a parameter group, refusing non-finite ones. Returns
/// the map plus the global L2 norm over everything present.
pub fn gather_grads<T: Scalar, P: Params<T>>(
    params: &P,
    prefix: &str,
    step: usize,
) -> Result<(BTreeMap<String, Vec<f64>>, f64)> {
    let mut named = Vec::new();
    params.visit(prefix, &mut named);
    let mut grads = BTreeMap::new();
    let mut sq = 0.0f64;
    for (name, t) in named {
        if let Some(g) = t.grad() {
            let g64: Vec<f64> = g.iter().map(|v| v.to64()).collect();
            for v in &g64 {
                if !v.is_finite() {
                    return Err(Error::NanGradient { name, step });
                }
                sq += v * v;
            }
            grads.insert(name, g64);
        }
    }
    Ok((grads, Float::sqrt(sq)))
}

// -------------------------------------------------------------- schedule

/// lr0 * 0.5 * (1 + cos(pi * (epoch mod cycle) / cycle)): starts each
/// cycle at lr0, decays toward (but never reaches) zero, restarts.
pub fn cosine_cycle_lr(epoch: usize, cfg: &TrainConfig) -> f64 {
    let c = cfg.cycle_epochs;
    let frac = (epoch % c) as f64 / c as f64;
    cfg.lr0 * 0.5 * (1.0 + Float::cos(core::f64::consts::PI * frac))
}

// ------------------------------------------------------------ train loop

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    pub step: usize,
    pub lr: f64,
    pub l1: f64,
    pub lp: f64,
    pub total: f64,
}

impl LossRecord {
    pub fn line(&self) -> String {
        format!("{},{},{},{},{}", self.step, self.lr, self.l1, self.lp, self.total)
    }
}

fn clip_scale(norm: f64, clip: f64) -> f64 {
    if norm > clip {
        clip / norm
    } else {
        1.0
    }
}

/// Train one branch on its component stream. The other branch and the
/// fusion transform never enter the graph. The log grows one record per
/// optimizer step; on a non-finite loss or gradient the model keeps its
/// last good parameters and the log of every completed step survives.
pub fn train_stage1<T: Scalar>(
    model: &mut Model<T>,
    data: &[SamplePair<T>],
    cfg: &TrainConfig,
    extractor: &FeatureExtractor<T>,
    log: &mut Vec<LossRecord>,
) -> Result<()> {
    cfg.validate(model.config.shuffle_factor * 4)?;
    let kind = match cfg.stage {
        Stage::Stage1High => BranchKind::High,
        Stage::Stage1Low => BranchKind::Low,
        Stage::Stage2Joint => {
            return Err(Error::InvalidArg {
                op: "train_stage1",
                what: "config says stage 2",
            })
        }
    };
    if data.is_empty() {
        return Err(Error::InvalidArg {
            op: "train_stage1",
            what: "no training pairs",
        });
    }
    let mut adam = Adam::new(cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut step = 0usize;
    for epoch in 0..cfg.epochs {
        let lr = cosine_cycle_lr(epoch, cfg);
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch) {
            let inv = 1.0 / chunk.len() as f64;
            let (mut l1_mean, mut lp_mean, mut total_mean) = (0.0, 0.0, 0.0);
            for &i in chunk {
                let s = sample_stage1(&data[i], kind, cfg, model.config.freq_levels, &mut rng)?;
                let branch = match kind {
                    BranchKind::High => &model.high,
                    BranchKind::Low => &model.low,
                };
                let out = branch_forward(&s.input, branch, &model.config)?;
                let parts = stage1_loss(&out.images, &s.targets, cfg.lambda1, extractor)?;
                let v = parts.total.data()[0].to64();
                if !v.is_finite() {
                    return Err(Error::NanLoss { step });
                }
                l1_mean += parts.l1 * inv;
                lp_mean += parts.lp * inv;
                total_mean += v * inv;
                parts.total.mul_scalar(T::from64(inv))?.backward()?;
            }
            let (prefix, branch) = match kind {
                BranchKind::High => ("high", &model.high),
                BranchKind::Low => ("low", &model.low),
            };
            let (grads, norm) = gather_grads(branch, prefix, step)?;
            let scale = clip_scale(norm, cfg.clip_norm);
            let updated = adam.step(branch, prefix, lr, &grads, scale)?;
            match kind {
                BranchKind::High => model.high = updated,
                BranchKind::Low => model.low = updated,
            }
            log.push(LossRecord {
                step,
                lr,
                l1: l1_mean,
                lp: lp_mean,
                total: total_mean,
            });
            step += 1;
        }
    }
    Ok(())
}

/// Joint stage: per sample the high branch sees a crop of the high
/// component, the low branch a resize of the low component; the low feature
/// is lifted onto the full-image feature grid and the crop's window cut out
/// before fusion. All parameters train.
pub fn train_stage2<T: Scalar>(
    model: &mut Model<T>,
    data: &[SamplePair<T>],
    cfg: &TrainConfig,
    extractor: &FeatureExtractor<T>,
    log: &mut Vec<LossRecord>,
) -> Result<()> {
    cfg.validate(model.config.shuffle_factor * 4)?;
    if cfg.stage != Stage::Stage2Joint {
        return Err(Error::InvalidArg {
            op: "train_stage2",
            what: "config says stage 1",
        });
    }
    if data.is_empty() {
        return Err(Error::InvalidArg {
            op: "train_stage2",
            what: "no training pairs",
        });
    }
    let mut adam = Adam::new(cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut step = 0usize;
    for epoch in 0..cfg.epochs {
        let lr = cosine_cycle_lr(epoch, cfg);
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch) {
            let inv = 1.0 / chunk.len() as f64;
            let (mut l1_mean, mut lp_mean, mut total_mean) = (0.0, 0.0, 0.0);
            for &i in chunk {
                let pair = &data[i];
                let (h, w) = (pair.moire.dims()[2], pair.moire.dims()[3]);
                for n in [h, w] {
                    if n % 2 != 0 {
                        return Err(Error::NotDivisible {
                            op: "train_stage2",
                            what: "image extents (feature grid is half resolution)",
                            value: n,
                            divisor: 2,
                        });
                    }
                }
                let s = cfg.crop_side;
                if h < s || w < s {
                    return Err(Error::InvalidArg {
                        op: "train_stage2",
                        what: "image extents below crop_side",
                    });
                }
                let (low_m, high_m) = decompose(&pair.moire, model.config.freq_levels)?;
                let y1 = draw_even_origin(&mut rng, h - s);
                let x1 = draw_even_origin(&mut rng, w - s);

                let high_out =
                    branch_forward(&high_m.crop2d(y1, x1, s, s)?, &model.high, &model.config)?;
                let low_in =
                    low_m.interpolate_bilinear(cfg.resize_side, cfg.resize_side, false)?;
                let low_out = branch_forward(&low_in, &model.low, &model.config)?;

                let full_feat = low_out.feat.interpolate_bilinear(h / 2, w / 2, false)?;
                let feat_low = full_feat.crop2d(y1 / 2, x1 / 2, s / 2, s / 2)?;
                let pred = fct_fuse(&feat_low, &high_out.feat, &model.fct, &model.config)?;
                let gt = pair.clean.crop2d(y1, x1, s, s)?;

                let parts = stage2_loss(&pred, &gt, cfg.lambda2, extractor)?;
                let v = parts.total.data()[0].to64();
                if !v.is_finite() {
                    return Err(Error::NanLoss { step });
                }
                l1_mean += parts.l1 * inv;
                lp_mean += parts.lp * inv;
                total_mean += v * inv;
                parts.total.mul_scalar(T::from64(inv))?.backward()?;
            }
            let (grads, norm) = gather_grads(model, "", step)?;
            let scale = clip_scale(norm, cfg.clip_norm);
            let updated = adam.step(&*model, "", lr, &grads, scale)?;
            *model = updated;
            log.push(LossRecord {
                step,
                lr,
                l1: l1_mean,
                lp: lp_mean,
                total: total_mean,
            });
            step += 1;
        }
    }
    Ok(())
}
