//! 2D convolution (NCHW) with stride, dilation, groups, and explicit padding.
//!
//! Padding is its own differentiable op; `conv2d` composes it with a valid
//! (no-pad) convolution node. The valid conv accumulates every output pixel
//! in f64 no matter the element type, which keeps the f32 path inside oracle
//! tolerance even for wide kernels.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PadMode {
    Zero,
    Replicate,
    Reflect,
}

/// Explicit margins; no implicit "same" arithmetic anywhere.
#[derive(Clone, Copy, Debug)]
pub struct PadSpec {
    pub mode: PadMode,
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

impl PadSpec {
    pub fn none() -> Self {
        PadSpec {
            mode: PadMode::Zero,
            top: 0,
            bottom: 0,
            left: 0,
            right: 0,
        }
    }

    pub fn uniform(mode: PadMode, margin: usize) -> Self {
        PadSpec {
            mode,
            top: margin,
            bottom: margin,
            left: margin,
            right: margin,
        }
    }

    pub fn is_none(&self) -> bool {
        self.top == 0 && self.bottom == 0 && self.left == 0 && self.right == 0
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Conv2dSpec {
    pub stride: usize,
    pub dilation: usize,
    pub groups: usize,
    pub pad: PadSpec,
}

impl Conv2dSpec {
    /// 1x1 / valid: stride 1, dilation 1, one group, no padding.
    pub fn unit() -> Self {
        Conv2dSpec {
            stride: 1,
            dilation: 1,
            groups: 1,
            pad: PadSpec::none(),
        }
    }

    /// 3x3 kernel, zero padding chosen so extents are preserved.
    pub fn same3x3(dilation: usize) -> Self {
        Conv2dSpec {
            stride: 1,
            dilation,
            groups: 1,
            pad: PadSpec::uniform(PadMode::Zero, dilation),
        }
    }

    pub fn with_groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }
}

/// Maps a possibly out-of-range coordinate into [0, n) according to the pad
/// mode; `None` means the zero region.
fn pad_coord(mode: PadMode, i: isize, n: usize) -> Option<usize> {
    let n_i = n as isize;
    if (0..n_i).contains(&i) {
        return Some(i as usize);
    }
    match mode {
        PadMode::Zero => None,
        PadMode::Replicate => Some(if i < 0 { 0 } else { n - 1 }),
        PadMode::Reflect => {
            // mirror about the edge sample: -1 -> 1, n -> n-2
            let r = if i < 0 { -i } else { 2 * (n_i - 1) - i };
            Some(r as usize)
        }
    }
}

/// Pad the two trailing axes of an NCHW tensor.
pub fn pad2d<T: Scalar>(input: &Tensor<T>, pad: &PadSpec) -> Result<Tensor<T>> {
    if input.rank() != 4 {
        return Err(Error::RankMismatch {
            op: "pad2d",
            expected: 4,
            found: input.rank(),
        });
    }
    let [n, c, h, w] = [
        input.dims()[0],
        input.dims()[1],
        input.dims()[2],
        input.dims()[3],
    ];
    if pad.mode == PadMode::Reflect {
        let max_y = h.saturating_sub(1);
        let max_x = w.saturating_sub(1);
        if pad.top > max_y || pad.bottom > max_y || pad.left > max_x || pad.right > max_x {
            return Err(Error::InvalidArg {
                op: "pad2d",
                what: "reflect margin exceeds extent - 1",
            });
        }
    }
    let oh = h + pad.top + pad.bottom;
    let ow = w + pad.left + pad.right;
    let row_map: Vec<Option<usize>> = (0..oh)
        .map(|oy| pad_coord(pad.mode, oy as isize - pad.top as isize, h))
        .collect();
    let col_map: Vec<Option<usize>> = (0..ow)
        .map(|ox| pad_coord(pad.mode, ox as isize - pad.left as isize, w))
        .collect();

    let src = input.data();
    let mut out = vec![T::zero(); n * c * oh * ow];
    for pc in 0..n * c {
        let sp = pc * h * w;
        let dp = pc * oh * ow;
        for (oy, ry) in row_map.iter().enumerate() {
            let Some(sy) = ry else { continue };
            let srow = &src[sp + sy * w..sp + sy * w + w];
            let drow = &mut out[dp + oy * ow..dp + oy * ow + ow];
            for (ox, rx) in col_map.iter().enumerate() {
                if let Some(sx) = rx {
                    drow[ox] = srow[*sx];
                }
            }
        }
    }

    let spec = *pad;
    Tensor::from_op(
        "pad2d",
        out,
        &[n, c, oh, ow],
        vec![input.clone()],
        Box::new(move |ctx, g| {
            let Some(d) = g.accum(&ctx.parents[0]) else {
                return;
            };
            let row_map: Vec<Option<usize>> = (0..oh)
                .map(|oy| pad_coord(spec.mode, oy as isize - spec.top as isize, h))
                .collect();
            let col_map: Vec<Option<usize>> = (0..ow)
                .map(|ox| pad_coord(spec.mode, ox as isize - spec.left as isize, w))
                .collect();
            for pc in 0..n * c {
                let sp = pc * h * w;
                let dp = pc * oh * ow;
                for (oy, ry) in row_map.iter().enumerate() {
                    let Some(sy) = ry else { continue };
                    let grow = &ctx.grad[dp + oy * ow..dp + oy * ow + ow];
                    let drow = &mut d[sp + sy * w..sp + sy * w + w];
                    for (ox, rx) in col_map.iter().enumerate() {
                        if let Some(sx) = rx {
                            drow[*sx] += grow[ox];
                        }
                    }
                }
            }
        }),
    )
}

#[derive(Clone, Copy)]
struct ConvGeom {
    n: usize,
    cin: usize,
    cout: usize,
    /// input channels per group
    icg: usize,
    kh: usize,
    kw: usize,
    /// padded input extents
    ph: usize,
    pw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    dil: usize,
    has_bias: bool,
}

/// input [N, Cin, H, W] * weight [Cout, Cin/groups, kh, kw] -> [N, Cout, oh, ow].
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: &Conv2dSpec,
) -> Result<Tensor<T>> {
    if input.rank() != 4 {
        return Err(Error::RankMismatch {
            op: "conv2d",
            expected: 4,
            found: input.rank(),
        });
    }
    if weight.rank() != 4 {
        return Err(Error::RankMismatch {
            op: "conv2d",
            expected: 4,
            found: weight.rank(),
        });
    }
    if spec.stride == 0 || spec.dilation == 0 || spec.groups == 0 {
        return Err(Error::InvalidArg {
            op: "conv2d",
            what: "stride, dilation and groups must be >= 1",
        });
    }
    let cin = input.dims()[1];
    let cout = weight.dims()[0];
    if cin % spec.groups != 0 {
        return Err(Error::NotDivisible {
            op: "conv2d",
            what: "input channels",
            value: cin,
            divisor: spec.groups,
        });
    }
    if cout % spec.groups != 0 {
        return Err(Error::NotDivisible {
            op: "conv2d",
            what: "output channels",
            value: cout,
            divisor: spec.groups,
        });
    }
    let icg = cin / spec.groups;
    if weight.dims()[1] != icg {
        return Err(Error::ShapeMismatch {
            op: "conv2d",
            axis: 1,
            expected: icg,
            found: weight.dims()[1],
        });
    }
    if let Some(b) = bias {
        if b.rank() != 1 {
            return Err(Error::RankMismatch {
                op: "conv2d",
                expected: 1,
                found: b.rank(),
            });
        }
        if b.numel() != cout {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                axis: 0,
                expected: cout,
                found: b.numel(),
            });
        }
    }

    let padded = if spec.pad.is_none() {
        input.clone()
    } else {
        pad2d(input, &spec.pad)?
    };
    let (ph, pw) = (padded.dims()[2], padded.dims()[3]);
    let (kh, kw) = (weight.dims()[2], weight.dims()[3]);
    let kh_e = (kh - 1) * spec.dilation + 1;
    let kw_e = (kw - 1) * spec.dilation + 1;
    if ph < kh_e || pw < kw_e {
        return Err(Error::InvalidArg {
            op: "conv2d",
            what: "dilated kernel larger than padded input",
        });
    }
    let geom = ConvGeom {
        n: input.dims()[0],
        cin,
        cout,
        icg,
        kh,
        kw,
        ph,
        pw,
        oh: (ph - kh_e) / spec.stride + 1,
        ow: (pw - kw_e) / spec.stride + 1,
        stride: spec.stride,
        dil: spec.dilation,
        has_bias: bias.is_some(),
    };

    let out = conv_forward(padded.data(), weight.data(), bias.map(|b| b.data()), &geom);

    let mut parents = vec![padded, weight.clone()];
    if let Some(b) = bias {
        parents.push(b.clone());
    }
    Tensor::from_op(
        "conv2d",
        out,
        &[geom.n, geom.cout, geom.oh, geom.ow],
        parents,
        Box::new(move |ctx, g| conv_backward(ctx, g, &geom)),
    )
}

fn conv_forward<T: Scalar>(
    x: &[T],
    w: &[T],
    bias: Option<&[T]>,
    geom: &ConvGeom,
) -> Vec<T> {
    let ConvGeom {
        n,
        cin,
        cout,
        icg,
        kh,
        kw,
        ph,
        pw,
        oh,
        ow,
        stride,
        dil,
        ..
    } = *geom;
    let groups = cin / icg;
    let ocg = cout / groups;

    let mut out = Vec::with_capacity(n * cout * oh * ow);
    let mut acc = vec![0.0f64; oh * ow];
    for b in 0..n {
        for oc in 0..cout {
            let grp = oc / ocg;
            let b0 = bias.map_or(0.0, |bv| bv[oc].to64());
            for a in acc.iter_mut() {
                *a = b0;
            }
            for icl in 0..icg {
                let ic = grp * icg + icl;
                let plane = &x[(b * cin + ic) * ph * pw..(b * cin + ic + 1) * ph * pw];
                for ky in 0..kh {
                    for kx in 0..kw {
                        let wv = w[((oc * icg + icl) * kh + ky) * kw + kx].to64();
                        if wv == 0.0 {
                            continue;
                        }
                        for oy in 0..oh {
                            let sy = oy * stride + ky * dil;
                            let srow = &plane[sy * pw + kx * dil..];
                            let arow = &mut acc[oy * ow..oy * ow + ow];
                            if stride == 1 {
                                for (a, &s) in arow.iter_mut().zip(&srow[..ow]) {
                                    *a += wv * s.to64();
                                }
                            } else {
                                for (i, a) in arow.iter_mut().enumerate() {
                                    *a += wv * srow[i * stride].to64();
                                }
                            }
                        }
                    }
                }
            }
            out.extend(acc.iter().map(|&a| T::from64(a)));
        }
    }
    out
}

fn conv_backward<T: Scalar>(
    ctx: &super::BackCtx<'_, T>,
    g: &mut super::GradMap<T>,
    geom: &ConvGeom,
) {
    let ConvGeom {
        n,
        cin,
        cout,
        icg,
        kh,
        kw,
        ph,
        pw,
        oh,
        ow,
        stride,
        dil,
        has_bias,
    } = *geom;
    let groups = cin / icg;
    let ocg = cout / groups;
    let x = ctx.parents[0].data();
    let w = ctx.parents[1].data();

    if has_bias {
        if let Some(db) = g.accum(&ctx.parents[2]) {
            for b in 0..n {
                for oc in 0..cout {
                    let gp = &ctx.grad[(b * cout + oc) * oh * ow..];
                    let mut acc = 0.0f64;
                    for &gv in &gp[..oh * ow] {
                        acc += gv.to64();
                    }
                    db[oc] += T::from64(acc);
                }
            }
        }
    }

    if let Some(dx) = g.accum(&ctx.parents[0]) {
        for b in 0..n {
            for oc in 0..cout {
                let grp = oc / ocg;
                let gplane = &ctx.grad[(b * cout + oc) * oh * ow..(b * cout + oc + 1) * oh * ow];
                for icl in 0..icg {
                    let ic = grp * icg + icl;
                    let dplane = &mut dx[(b * cin + ic) * ph * pw..(b * cin + ic + 1) * ph * pw];
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let wv = w[((oc * icg + icl) * kh + ky) * kw + kx];
                            if wv == T::zero() {
                                continue;
                            }
                            for oy in 0..oh {
                                let sy = oy * stride + ky * dil;
                                let grow = &gplane[oy * ow..oy * ow + ow];
                                let drow = &mut dplane[sy * pw + kx * dil..];
                                if stride == 1 {
                                    for (d, &gv) in drow[..ow].iter_mut().zip(grow) {
                                        *d += wv * gv;
                                    }
                                } else {
                                    for (i, &gv) in grow.iter().enumerate() {
                                        drow[i * stride] += wv * gv;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    if let Some(dw) = g.accum(&ctx.parents[1]) {
        for oc in 0..cout {
            let grp = oc / ocg;
            for icl in 0..icg {
                let ic = grp * icg + icl;
                for ky in 0..kh {
                    for kx in 0..kw {
                        let mut acc = 0.0f64;
                        for b in 0..n {
                            let gplane =
                                &ctx.grad[(b * cout + oc) * oh * ow..(b * cout + oc + 1) * oh * ow];
                            let plane = &x[(b * cin + ic) * ph * pw..(b * cin + ic + 1) * ph * pw];
                            for oy in 0..oh {
                                let sy = oy * stride + ky * dil;
                                let grow = &gplane[oy * ow..oy * ow + ow];
                                let srow = &plane[sy * pw + kx * dil..];
                                if stride == 1 {
                                    for (&gv, &s) in grow.iter().zip(&srow[..ow]) {
                                        acc += gv.to64() * s.to64();
                                    }
                                } else {
                                    for (i, &gv) in grow.iter().enumerate() {
                                        acc += gv.to64() * srow[i * stride].to64();
                                    }
                                }
                            }
                        }
                        dw[((oc * icg + icl) * kh + ky) * kw + kx] += T::from64(acc);
                    }
                }
            }
        }
    }
}
