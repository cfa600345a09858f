//! Bilinear resampling on NCHW tensors. Both coordinate conventions are
//! supported; `align_corners = false` (half-pixel centres, edge clamped)
//! is what the model uses everywhere.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Per output coordinate: the two source taps and their weights.
fn axis_taps(n_in: usize, n_out: usize, align_corners: bool) -> Vec<(usize, usize, f64, f64)> {
    (0..n_out)
        .map(|o| {
            let src = if align_corners {
                if n_out > 1 {
                    o as f64 * (n_in as f64 - 1.0) / (n_out as f64 - 1.0)
                } else {
                    0.0
                }
            } else {
                ((o as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).max(0.0)
            };
            let i0 = (num_traits::Float::floor(src) as usize).min(n_in - 1);
            let i1 = (i0 + 1).min(n_in - 1);
            let f = if i0 == n_in - 1 { 0.0 } else { src - i0 as f64 };
            (i0, i1, 1.0 - f, f)
        })
        .collect()
}

impl<T: Scalar> Tensor<T> {
    pub fn interpolate_bilinear(
        &self,
        oh: usize,
        ow: usize,
        align_corners: bool,
    ) -> Result<Tensor<T>> {
        if self.rank() != 4 {
            return Err(Error::RankMismatch {
                op: "interpolate_bilinear",
                expected: 4,
                found: self.rank(),
            });
        }
        if oh == 0 || ow == 0 {
            return Err(Error::InvalidArg {
                op: "interpolate_bilinear",
                what: "zero output extent",
            });
        }
        let [n, c, h, w] = [self.dims()[0], self.dims()[1], self.dims()[2], self.dims()[3]];
        let ty = axis_taps(h, oh, align_corners);
        let tx = axis_taps(w, ow, align_corners);
        let src = self.data();
        let mut out = Vec::with_capacity(n * c * oh * ow);
        for pc in 0..n * c {
            let plane = &src[pc * h * w..(pc + 1) * h * w];
            for &(y0, y1, wy0, wy1) in &ty {
                let r0 = &plane[y0 * w..y0 * w + w];
                let r1 = &plane[y1 * w..y1 * w + w];
                for &(x0, x1, wx0, wx1) in &tx {
                    let v = wy0 * (wx0 * r0[x0].to64() + wx1 * r0[x1].to64())
                        + wy1 * (wx0 * r1[x0].to64() + wx1 * r1[x1].to64());
                    out.push(T::from64(v));
                }
            }
        }
        Tensor::from_op(
            "interpolate_bilinear",
            out,
            &[n, c, oh, ow],
            vec![self.clone()],
            Box::new(move |ctx, g| {
                if let Some(d) = g.accum(&ctx.parents[0]) {
                    let ty = axis_taps(h, oh, align_corners);
                    let tx = axis_taps(w, ow, align_corners);
                    for pc in 0..n * c {
                        let dplane = &mut d[pc * h * w..(pc + 1) * h * w];
                        let gplane = &ctx.grad[pc * oh * ow..(pc + 1) * oh * ow];
                        for (oy, &(y0, y1, wy0, wy1)) in ty.iter().enumerate() {
                            for (ox, &(x0, x1, wx0, wx1)) in tx.iter().enumerate() {
                                let gv = gplane[oy * ow + ox];
                                dplane[y0 * w + x0] += gv * T::from64(wy0 * wx0);
                                dplane[y0 * w + x1] += gv * T::from64(wy0 * wx1);
                                dplane[y1 * w + x0] += gv * T::from64(wy1 * wx0);
                                dplane[y1 * w + x1] += gv * T::from64(wy1 * wx1);
                            }
                        }
                    }
                }
            }),
        )
    }
}
