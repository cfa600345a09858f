//! Channel layer-norm for NCHW feature maps: every spatial position is
//! normalised across its channel vector, then scaled and shifted per channel.
//! Variance is the biased (1/C) estimate.

use alloc::boxed::Box;
use alloc::vec;

use super::{c, Scalar, Tensor};
use crate::error::{Error, Result};

pub fn layer_norm_channels<T: Scalar>(
    x: &Tensor<T>,
    gain: &Tensor<T>,
    offset: &Tensor<T>,
    eps: f64,
) -> Result<Tensor<T>> {
    if x.rank() != 4 {
        return Err(Error::RankMismatch {
            op: "layer_norm",
            expected: 4,
            found: x.rank(),
        });
    }
    let [n, ch, h, w] = [x.dims()[0], x.dims()[1], x.dims()[2], x.dims()[3]];
    for t in [gain, offset] {
        if t.rank() != 1 || t.numel() != ch {
            return Err(Error::ShapeMismatch {
                op: "layer_norm",
                axis: 0,
                expected: ch,
                found: t.numel(),
            });
        }
    }
    let hw = h * w;
    let xd = x.data();
    let gd = gain.data();
    let od = offset.data();
    let mut out = vec![T::zero(); xd.len()];
    for b in 0..n {
        for p in 0..hw {
            let base = b * ch * hw + p;
            let mut mean = 0.0f64;
            for cc in 0..ch {
                mean += xd[base + cc * hw].to64();
            }
            mean /= ch as f64;
            let mut var = 0.0f64;
            for cc in 0..ch {
                let dv = xd[base + cc * hw].to64() - mean;
                var += dv * dv;
            }
            var /= ch as f64;
            let inv = 1.0 / num_traits::Float::sqrt(var + eps);
            for cc in 0..ch {
                let idx = base + cc * hw;
                let xn = (xd[idx].to64() - mean) * inv;
                out[idx] = T::from64(xn * gd[cc].to64() + od[cc].to64());
            }
        }
    }
    Tensor::from_op(
        "layer_norm",
        out,
        x.dims(),
        vec![x.clone(), gain.clone(), offset.clone()],
        Box::new(move |ctx, g| {
            let xd = ctx.parents[0].data();
            let gd = ctx.parents[1].data();
            let chf = ch as f64;
            // per-lane recompute of mean/inv keeps the closure state-free
            let mut lane_stats = vec![(0.0f64, 0.0f64); n * hw];
            for b in 0..n {
                for p in 0..hw {
                    let base = b * ch * hw + p;
                    let mut mean = 0.0f64;
                    for cc in 0..ch {
                        mean += xd[base + cc * hw].to64();
                    }
                    mean /= chf;
                    let mut var = 0.0f64;
                    for cc in 0..ch {
                        let dv = xd[base + cc * hw].to64() - mean;
                        var += dv * dv;
                    }
                    var /= chf;
                    lane_stats[b * hw + p] = (mean, 1.0 / num_traits::Float::sqrt(var + eps));
                }
            }
            if let Some(dx) = g.accum(&ctx.parents[0]) {
                for b in 0..n {
                    for p in 0..hw {
                        let base = b * ch * hw + p;
                        let (mean, inv) = lane_stats[b * hw + p];
                        // dxh[c] = g[c]*gain[c]; fold the two reductions first
                        let mut sum_dxh = 0.0f64;
                        let mut sum_dxh_xn = 0.0f64;
                        for cc in 0..ch {
                            let idx = base + cc * hw;
                            let dxh = ctx.grad[idx].to64() * gd[cc].to64();
                            let xn = (xd[idx].to64() - mean) * inv;
                            sum_dxh += dxh;
                            sum_dxh_xn += dxh * xn;
                        }
                        for cc in 0..ch {
                            let idx = base + cc * hw;
                            let dxh = ctx.grad[idx].to64() * gd[cc].to64();
                            let xn = (xd[idx].to64() - mean) * inv;
                            let v = inv * (dxh - sum_dxh / chf - xn * sum_dxh_xn / chf);
                            dx[idx] += T::from64(v);
                        }
                    }
                }
            }
            if let Some(dgain) = g.accum(&ctx.parents[1]) {
                for b in 0..n {
                    for p in 0..hw {
                        let base = b * ch * hw + p;
                        let (mean, inv) = lane_stats[b * hw + p];
                        for cc in 0..ch {
                            let idx = base + cc * hw;
                            let xn = (xd[idx].to64() - mean) * inv;
                            dgain[cc] += ctx.grad[idx] * c::<T>(xn);
                        }
                    }
                }
            }
            if let Some(doff) = g.accum(&ctx.parents[2]) {
                for b in 0..n {
                    for p in 0..hw {
                        let base = b * ch * hw + p;
                        for cc in 0..ch {
                            doff[cc] += ctx.grad[base + cc * hw];
                        }
                    }
                }
            }
        }),
    )
}
