//! Central-difference verification of the backward pass.
//!
//! `check` rebuilds the graph from plain data for every probe, so it verifies
//! exactly what a training step sees: forward, backward, and the leaf
//! accumulation. The relative error uses a unit floor in the denominator,
//! making it an absolute comparison for tiny gradients and a relative one for
//! large ones.
//!
//! The suites at the bottom cover every differentiable op (several shapes and
//! spec variants each), the model blocks, and a narrow end-to-end model; the
//! command line `gradcheck` subcommand and the test suite both run them.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct CheckReport {
    pub name: String,
    pub checked: usize,
    pub max_rel_err: f64,
    pub tol: f64,
}

impl CheckReport {
    pub fn pass(&self) -> bool {
        self.max_rel_err.is_finite() && self.max_rel_err <= self.tol
    }
}

impl core::fmt::Display for CheckReport {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(
            f,
            "{} {} checked={} max_rel_err={:.3e} tol={:.1e}",
            if self.pass() { "ok  " } else { "FAIL" },
            self.name,
            self.checked,
            self.max_rel_err,
            self.tol
        )
    }
}

/// Seeded uniform data in [lo, hi); the shared source of test fixtures.
pub fn uniform(seed: u64, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// Compare autodiff gradients of a scalar-valued build against central
/// differences. `sample` limits probes per input (deterministic spread);
/// `None` probes every element.
pub fn check<F>(
    name: &str,
    inputs: &[(Vec<f64>, Vec<usize>)],
    sample: Option<usize>,
    tol: f64,
    build: F,
) -> Result<CheckReport>
where
    F: Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>,
{
    let vars: Vec<Tensor<f64>> = inputs
        .iter()
        .map(|(d, s)| Tensor::var("gradcheck", d.clone(), s))
        .collect::<Result<_>>()?;
    let root = build(&vars)?;
    root.backward()?;
    let ad: Vec<Vec<f64>> = vars
        .iter()
        .map(|v| v.grad().unwrap_or_else(|| vec![0.0; v.numel()]))
        .collect();

    let eval = |datas: &[Vec<f64>]| -> Result<f64> {
        let ts: Vec<Tensor<f64>> = datas
            .iter()
            .zip(inputs)
            .map(|(d, (_, s))| Tensor::from_vec("gradcheck", d.clone(), s))
            .collect::<Result<_>>()?;
        build(&ts)?.item()
    };

    let mut work: Vec<Vec<f64>> = inputs.iter().map(|(d, _)| d.clone()).collect();
    let mut max_rel = 0.0f64;
    let mut checked = 0usize;
    // h ~ cbrt(eps) balances truncation against cancellation
    let h0 = 6.06e-6;
    for i in 0..work.len() {
        let n = work[i].len();
        let m = sample.map_or(n, |s| s.min(n));
        for t in 0..m {
            let j = t * n / m;
            let x = work[i][j];
            let h = h0 * (1.0 + x.abs());
            let xp = x + h;
            let xm = x - h;
            work[i][j] = xp;
            let fp = eval(&work)?;
            work[i][j] = xm;
            let fm = eval(&work)?;
            work[i][j] = x;
            let fd = (fp - fm) / (xp - xm);
            let a = ad[i][j];
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1.0);
            if rel > max_rel {
                max_rel = rel;
            }
            checked += 1;
        }
    }
    Ok(CheckReport {
        name: String::from(name),
        checked,
        max_rel_err: max_rel,
        tol,
    })
}

/// Weighted sum with fixed seeded weights; turns any op output into a scalar
/// whose gradient exercises every output element.
pub fn proj(t: &Tensor<f64>, seed: u64) -> Result<Tensor<f64>> {
    let w = uniform(seed, t.numel(), -1.0, 1.0);
    let wt = Tensor::from_vec("proj_weights", w, t.dims())?;
    t.mul(&wt)?.sum()
}

/// Gradient-check a parametrized forward: probes the input and every named
/// parameter tensor, `sample` elements of each.
pub fn check_params<P, F>(
    name: &str,
    x: (Vec<f64>, Vec<usize>),
    params: &P,
    sample: Option<usize>,
    tol: f64,
    forward: F,
) -> Result<CheckReport>
where
    P: crate::params::Params<f64>,
    F: Fn(&Tensor<f64>, &P) -> Result<Tensor<f64>>,
{
    let mut inputs = vec![x];
    for (_, t) in params.named() {
        inputs.push((t.data().to_vec(), t.dims().to_vec()));
    }
    check(name, &inputs, sample, tol, |ts| {
        let mut idx = 1usize;
        let rebuilt = params.map("", &mut |_, _| {
            let t = ts[idx].clone();
            idx += 1;
            Ok(t)
        })?;
        proj(&forward(&ts[0], &rebuilt)?, 940)
    })
}

/// Replace every parameter tensor with fresh uniform noise: zero-initialized
/// projections stop being zero, so gradients reach every weight.
pub fn randomized<P: crate::params::Params<f64>>(params: &P, seed: u64, scale: f64) -> Result<P> {
    let mut k = seed;
    params.map("", &mut |_, t| {
        k = k.wrapping_add(0x9e3779b97f4a7c15);
        Tensor::var("randomized", uniform(k, t.numel(), -scale, scale), t.dims())
    })
}

fn input(seed: u64, dims: &[usize]) -> (Vec<f64>, Vec<usize>) {
    let n: usize = dims.iter().product();
    (uniform(seed, n, -1.0, 1.0), dims.to_vec())
}

/// Gradient checks for every tensor op, three or more shapes each.
pub fn op_suite() -> Result<Vec<CheckReport>> {
    use crate::tensor::{conv2d, layer_norm_channels, pad2d, Conv2dSpec, PadMode, PadSpec};

    let tol = 1e-4;
    let mut out = Vec::new();
    let shapes: [&[usize]; 3] = [&[7], &[3, 4], &[2, 3, 2, 2]];

    for (si, dims) in shapes.iter().enumerate() {
        let s = si as u64;
        out.push(check(
            &format!("add/{dims:?}"),
            &[input(s, dims), input(s + 10, dims)],
            None,
            tol,
            |v| proj(&v[0].add(&v[1])?, 900 + s),
        )?);
        out.push(check(
            &format!("sub/{dims:?}"),
            &[input(s + 20, dims), input(s + 30, dims)],
            None,
            tol,
            |v| proj(&v[0].sub(&v[1])?, 901 + s),
        )?);
        out.push(check(
            &format!("mul/{dims:?}"),
            &[input(s + 40, dims), input(s + 50, dims)],
            None,
            tol,
            |v| proj(&v[0].mul(&v[1])?, 902 + s),
        )?);
        out.push(check(
            &format!("add_scalar/{dims:?}"),
            &[input(s + 60, dims)],
            None,
            tol,
            |v| proj(&v[0].add_scalar(0.37)?, 903 + s),
        )?);
        out.push(check(
            &format!("mul_scalar/{dims:?}"),
            &[input(s + 70, dims)],
            None,
            tol,
            |v| proj(&v[0].mul_scalar(-1.91)?, 904 + s),
        )?);
        out.push(check(
            &format!("abs/{dims:?}"),
            &[input(s + 80, dims)],
            None,
            tol,
            |v| proj(&v[0].abs()?, 905 + s),
        )?);
        out.push(check(
            &format!("gelu/{dims:?}"),
            &[input(s + 90, dims)],
            None,
            tol,
            |v| proj(&v[0].gelu()?, 906 + s),
        )?);
        out.push(check(
            &format!("sigmoid/{dims:?}"),
            &[input(s + 100, dims)],
            None,
            tol,
            |v| proj(&v[0].sigmoid()?, 907 + s),
        )?);
        out.push(check(
            &format!("sum/{dims:?}"),
            &[input(s + 110, dims)],
            None,
            tol,
            |v| v[0].sum(),
        )?);
        out.push(check(
            &format!("mean/{dims:?}"),
            &[input(s + 120, dims)],
            None,
            tol,
            |v| v[0].mean(),
        )?);
        out.push(check(
            &format!("reshape/{dims:?}"),
            &[input(s + 130, dims)],
            None,
            tol,
            |v| {
                let n = v[0].numel();
                proj(&v[0].reshape(&[n])?, 908 + s)
            },
        )?);
    }

    for (name, a_dims, b_dims, axis) in [
        ("concat/rank1", &[5][..], &[3][..], 0usize),
        ("concat/rank2_ax0", &[2, 3][..], &[4, 3][..], 0),
        ("concat/rank4_ax1", &[1, 2, 3, 2][..], &[1, 5, 3, 2][..], 1),
    ] {
        out.push(check(
            name,
            &[input(200, a_dims), input(201, b_dims)],
            None,
            tol,
            move |v| proj(&crate::tensor::concat(&[&v[0], &v[1]], axis)?, 910),
        )?);
    }

    for (name, dims, axis, lo, hi) in [
        ("slice/rank1", &[9][..], 0usize, 2usize, 7usize),
        ("slice/rank2", &[4, 5][..], 1, 0, 3),
        ("slice/rank4", &[2, 6, 2, 2][..], 1, 1, 5),
    ] {
        out.push(check(name, &[input(210, dims)], None, tol, move |v| {
            proj(&v[0].slice(axis, lo, hi)?, 911)
        })?);
    }

    for (name, dims, window) in [
        ("crop2d/a", &[1, 2, 6, 7][..], (1usize, 2usize, 4usize, 3usize)),
        ("crop2d/b", &[2, 3, 5, 5][..], (0, 0, 5, 5)),
        ("crop2d/c", &[1, 1, 8, 8][..], (3, 3, 2, 2)),
    ] {
        let (y0, x0, h, w) = window;
        out.push(check(name, &[input(220, dims)], None, tol, move |v| {
            proj(&v[0].crop2d(y0, x0, h, w)?, 912)
        })?);
    }

    for (name, dims) in [
        ("transpose_last2/rank2", &[4, 6][..]),
        ("transpose_last2/rank3", &[3, 2, 5][..]),
        ("transpose_last2/rank4", &[2, 2, 3, 4][..]),
    ] {
        out.push(check(name, &[input(230, dims)], None, tol, move |v| {
            proj(&v[0].transpose_last2()?, 913)
        })?);
    }

    for (name, dims, axis) in [
        ("mul_axis/rank2_ax1", &[3, 4][..], 1usize),
        ("mul_axis/rank3_ax1", &[2, 5, 3][..], 1),
        ("mul_axis/rank4_ax1", &[2, 3, 2, 2][..], 1),
    ] {
        let vlen = dims[axis];
        out.push(check(
            name,
            &[input(240, dims), input(241, &[vlen])],
            None,
            tol,
            move |v| proj(&v[0].mul_axis(&v[1], axis)?, 914),
        )?);
    }

    for (name, dims, axis) in [
        ("softmax/rank1", &[6][..], 0usize),
        ("softmax/rank2_ax1", &[4, 5][..], 1),
        ("softmax/rank3_ax2", &[2, 3, 4][..], 2),
    ] {
        out.push(check(name, &[input(250, dims)], None, tol, move |v| {
            proj(&v[0].softmax(axis)?, 915)
        })?);
    }

    for (name, a_dims, b_dims) in [
        ("matmul/2d", &[3, 4][..], &[4, 5][..]),
        ("matmul/batch3d", &[2, 3, 4][..], &[2, 4, 2][..]),
        ("matmul/broadcast", &[2, 1, 3, 4][..], &[1, 5, 4, 3][..]),
    ] {
        out.push(check(
            name,
            &[input(260, a_dims), input(261, b_dims)],
            None,
            tol,
            move |v| proj(&v[0].matmul(&v[1])?, 916),
        )?);
    }

    for (name, dims, r, up) in [
        ("pixel_shuffle/r2", &[1, 8, 3, 2][..], 2usize, true),
        ("pixel_shuffle/r3", &[2, 9, 2, 2][..], 3, true),
        ("pixel_unshuffle/r2", &[1, 2, 6, 4][..], 2, false),
        ("pixel_unshuffle/r3", &[2, 1, 6, 6][..], 3, false),
    ] {
        out.push(check(name, &[input(270, dims)], None, tol, move |v| {
            let y = if up {
                v[0].pixel_shuffle(r)?
            } else {
                v[0].pixel_unshuffle(r)?
            };
            proj(&y, 917)
        })?);
    }

    for (name, dims, oh, ow, ac) in [
        ("bilinear/up", &[1, 2, 4, 5][..], 9usize, 11usize, false),
        ("bilinear/down", &[1, 2, 8, 8][..], 3, 5, false),
        ("bilinear/up_corners", &[2, 1, 4, 4][..], 7, 7, true),
        ("bilinear/down_corners", &[1, 3, 6, 6][..], 2, 3, true),
    ] {
        out.push(check(name, &[input(280, dims)], None, tol, move |v| {
            proj(&v[0].interpolate_bilinear(oh, ow, ac)?, 918)
        })?);
    }

    for (name, dims, mode) in [
        ("pad2d/zero", &[1, 2, 4, 4][..], PadMode::Zero),
        ("pad2d/replicate", &[1, 2, 4, 4][..], PadMode::Replicate),
        ("pad2d/reflect", &[1, 2, 4, 4][..], PadMode::Reflect),
    ] {
        out.push(check(name, &[input(290, dims)], None, tol, move |v| {
            proj(&pad2d(&v[0], &PadSpec::uniform(mode, 2))?, 919)
        })?);
    }

    for (ci, ch) in [3usize, 5, 8].iter().enumerate() {
        let ch = *ch;
        out.push(check(
            &format!("layer_norm/c{ch}"),
            &[
                input(300 + ci as u64, &[2, ch, 3, 2]),
                input(310 + ci as u64, &[ch]),
                input(320 + ci as u64, &[ch]),
            ],
            None,
            tol,
            move |v| proj(&layer_norm_channels(&v[0], &v[1], &v[2], 1e-6)?, 920),
        )?);
    }

    struct ConvCase {
        name: &'static str,
        in_dims: [usize; 4],
        w_dims: [usize; 4],
        spec: Conv2dSpec,
        bias: bool,
    }
    let conv_cases = [
        ConvCase {
            name: "conv2d/plain3x3",
            in_dims: [1, 3, 6, 6],
            w_dims: [4, 3, 3, 3],
            spec: Conv2dSpec::same3x3(1),
            bias: true,
        },
        ConvCase {
            name: "conv2d/dil2_replicate",
            in_dims: [1, 2, 7, 7],
            w_dims: [2, 2, 3, 3],
            spec: Conv2dSpec {
                stride: 1,
                dilation: 2,
                groups: 1,
                pad: PadSpec::uniform(PadMode::Replicate, 2),
            },
            bias: false,
        },
        ConvCase {
            name: "conv2d/depthwise_dil2",
            in_dims: [2, 4, 8, 8],
            w_dims: [4, 1, 3, 3],
            spec: Conv2dSpec {
                stride: 1,
                dilation: 2,
                groups: 4,
                pad: PadSpec::uniform(PadMode::Zero, 2),
            },
            bias: true,
        },
        ConvCase {
            name: "conv2d/groups2",
            in_dims: [1, 4, 5, 5],
            w_dims: [6, 2, 3, 3],
            spec: Conv2dSpec::same3x3(1).with_groups(2),
            bias: true,
        },
        ConvCase {
            name: "conv2d/stride2",
            in_dims: [1, 3, 9, 7],
            w_dims: [2, 3, 3, 3],
            spec: Conv2dSpec::same3x3(1).with_stride(2),
            bias: true,
        },
        ConvCase {
            name: "conv2d/1x1",
            in_dims: [2, 5, 4, 4],
            w_dims: [3, 5, 1, 1],
            spec: Conv2dSpec::unit(),
            bias: true,
        },
    ];
    for case in conv_cases {
        let spec = case.spec;
        let mut ins = vec![
            input(330, &case.in_dims),
            input(331, &case.w_dims),
        ];
        if case.bias {
            ins.push(input(332, &[case.w_dims[0]]));
        }
        let has_bias = case.bias;
        out.push(check(case.name, &ins, None, tol, move |v| {
            let b = if has_bias { Some(&v[2]) } else { None };
            proj(&conv2d(&v[0], &v[1], b, &spec)?, 921)
        })?);
    }

    Ok(out)
}

/// Gradient checks for every learned block, with all projections randomized
/// away from their zero init so the probes reach every weight.
pub fn block_suite() -> Result<Vec<CheckReport>> {
    use crate::blocks::{
        channel_attention, downsample, gated_ffn, hierarchical_fusion, rddb_forward, saca_block,
        saca_block_fused, upsample, AttnParams, DownParams, FfnParams, FusionParams, RddbParams,
        SACAConfig, SacaParams, UpParams,
    };
    use crate::params::Init;

    let tol = 1e-4;
    let mut out = Vec::new();
    let mut init = Init::new(41);

    let p = randomized(&RddbParams::<f64>::init(&mut init, 8, 4)?, 1001, 0.3)?;
    out.push(check_params(
        "rddb/c8_g4",
        input(1002, &[1, 8, 6, 6]),
        &p,
        Some(8),
        tol,
        |x, p| rddb_forward(x, p),
    )?);

    let p = randomized(&AttnParams::<f64>::init(&mut init, 4, 2)?, 1003, 0.3)?;
    out.push(check_params(
        "channel_attention/c4_h2",
        input(1004, &[1, 4, 5, 5]),
        &p,
        Some(8),
        tol,
        |x, p| channel_attention(x, p, 2),
    )?);

    let p = randomized(&FfnParams::<f64>::init(&mut init, 4, 8)?, 1005, 0.3)?;
    out.push(check_params(
        "gated_ffn/c4_e2",
        input(1006, &[1, 4, 5, 5]),
        &p,
        Some(8),
        tol,
        |x, p| gated_ffn(x, p),
    )?);

    let cfg = SACAConfig {
        channels: 4,
        n_layers: 2,
        heads: 2,
        ffn_expand: 1.5,
        rddb_growth: 2,
    };
    let p = randomized(&SacaParams::<f64>::init(&mut init, &cfg)?, 1007, 0.3)?;
    out.push(check_params(
        "saca_block/two_layers",
        input(1008, &[1, 4, 5, 5]),
        &p,
        Some(6),
        tol,
        move |x, p| saca_block(x, &cfg, p),
    )?);

    let p = randomized(&DownParams::<f64>::init(&mut init, 4)?, 1009, 0.3)?;
    out.push(check_params(
        "downsample/c4",
        input(1010, &[1, 4, 6, 6]),
        &p,
        Some(12),
        tol,
        |x, p| downsample(x, p),
    )?);

    let p = randomized(&UpParams::<f64>::init(&mut init, 4)?, 1011, 0.3)?;
    out.push(check_params(
        "upsample/c4",
        input(1012, &[1, 4, 4, 4]),
        &p,
        Some(12),
        tol,
        |x, p| upsample(x, p),
    )?);

    // fusion gradients must flow into the host, both injected features, and
    // the convs; the injected tensors ride along as extra probed inputs
    let p = randomized(&FusionParams::<f64>::init(&mut init, 4, &[8, 2])?, 1013, 0.3)?;
    let mut inputs = vec![input(1014, &[1, 4, 6, 6])];
    for (_, t) in crate::params::Params::named(&p) {
        inputs.push((t.data().to_vec(), t.dims().to_vec()));
    }
    inputs.push(input(1015, &[1, 8, 3, 3]));
    inputs.push(input(1016, &[1, 2, 12, 12]));
    let n_params = crate::params::Params::named(&p).len();
    out.push(check(
        "hierarchical_fusion/two_feeds",
        &inputs,
        Some(8),
        tol,
        move |ts| {
            let mut idx = 1usize;
            let rebuilt = crate::params::Params::map(&p, "", &mut |_, _| {
                let t = ts[idx].clone();
                idx += 1;
                Ok(t)
            })?;
            let injected = [&ts[n_params + 1], &ts[n_params + 2]];
            proj(&hierarchical_fusion(&ts[0], &rebuilt, &injected)?, 941)
        },
    )?);

    let cfg = SACAConfig {
        channels: 4,
        n_layers: 2,
        heads: 2,
        ffn_expand: 1.0,
        rddb_growth: 2,
    };
    let saca = randomized(&SacaParams::<f64>::init(&mut init, &cfg)?, 1017, 0.3)?;
    let fuse = randomized(&FusionParams::<f64>::init(&mut init, 4, &[6])?, 1018, 0.3)?;
    let mut inputs = vec![input(1019, &[1, 4, 4, 4])];
    for (_, t) in crate::params::Params::named(&saca) {
        inputs.push((t.data().to_vec(), t.dims().to_vec()));
    }
    for (_, t) in crate::params::Params::named(&fuse) {
        inputs.push((t.data().to_vec(), t.dims().to_vec()));
    }
    inputs.push(input(1020, &[1, 6, 2, 2]));
    let n_saca = crate::params::Params::named(&saca).len();
    let n_fuse = crate::params::Params::named(&fuse).len();
    out.push(check(
        "saca_block_fused/mid_injection",
        &inputs,
        Some(4),
        tol,
        move |ts| {
            let mut idx = 1usize;
            let s = crate::params::Params::map(&saca, "", &mut |_, _| {
                let t = ts[idx].clone();
                idx += 1;
                Ok(t)
            })?;
            let f = crate::params::Params::map(&fuse, "", &mut |_, _| {
                let t = ts[idx].clone();
                idx += 1;
                Ok(t)
            })?;
            let injected = [&ts[1 + n_saca + n_fuse]];
            proj(
                &saca_block_fused(&ts[0], &cfg, &s, Some((&f, &injected)))?,
                942,
            )
        },
    )?);

    Ok(out)
}

/// End-to-end gradient check: split, both branches, and the fusion
/// transform on a 16x16 image at width 4, probing a few elements of every
/// parameter tensor in the model.
pub fn model_suite() -> Result<Vec<CheckReport>> {
    use crate::model::{infer, LowMode, Model, ModelConfig};

    let cfg = ModelConfig {
        base_channels: 4,
        enc_n_high: [1, 1, 1],
        dec_n_high: [2, 2, 1],
        enc_n_low: [1, 1, 1],
        dec_n_low: [1, 1, 1],
        heads: [1, 2, 4],
        n_f: 1,
        ffn_expand: 2.0,
        rddb_growth: 2,
        freq_levels: 2,
        shuffle_factor: 2,
        low_side: 8,
    };
    let model: Model<f64> = randomized(&Model::init(cfg, 7)?, 1199, 0.25)?;
    let x = (uniform(1200, 3 * 16 * 16, 0.0, 1.0), vec![1, 3, 16, 16]);
    let report = check_params(
        "model/end_to_end",
        x,
        &model,
        Some(4),
        1e-3,
        |img, m| infer(img, m, LowMode::Full),
    )?;
    Ok(vec![report])
}
