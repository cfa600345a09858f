//! Space-to-depth and back. Pure permutations; sub-block order is
//! (channel, dy, dx), i.e. input channel c*r*r + dy*r + dx of a shuffle lands
//! at spatial offset (dy, dx).

use alloc::boxed::Box;
use alloc::vec;

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

impl<T: Scalar> Tensor<T> {
    /// [N, C*r*r, H, W] -> [N, C, H*r, W*r].
    pub fn pixel_shuffle(&self, r: usize) -> Result<Tensor<T>> {
        if self.rank() != 4 {
            return Err(Error::RankMismatch {
                op: "pixel_shuffle",
                expected: 4,
                found: self.rank(),
            });
        }
        if r == 0 {
            return Err(Error::InvalidArg {
                op: "pixel_shuffle",
                what: "factor must be >= 1",
            });
        }
        let [n, cin, h, w] = [self.dims()[0], self.dims()[1], self.dims()[2], self.dims()[3]];
        if cin % (r * r) != 0 {
            return Err(Error::NotDivisible {
                op: "pixel_shuffle",
                what: "channels",
                value: cin,
                divisor: r * r,
            });
        }
        let c = cin / (r * r);
        let (oh, ow) = (h * r, w * r);
        let src = self.data();
        let mut out = vec![T::zero(); src.len()];
        for b in 0..n {
            for ci in 0..cin {
                let (cc, dy, dx) = (ci / (r * r), (ci / r) % r, ci % r);
                let sp = (b * cin + ci) * h * w;
                let dp = (b * c + cc) * oh * ow;
                for y in 0..h {
                    let srow = &src[sp + y * w..sp + y * w + w];
                    let dbase = dp + (y * r + dy) * ow + dx;
                    for (x, &v) in srow.iter().enumerate() {
                        out[dbase + x * r] = v;
                    }
                }
            }
        }
        Tensor::from_op(
            "pixel_shuffle",
            out,
            &[n, c, oh, ow],
            vec![self.clone()],
            Box::new(move |ctx, g| {
                if let Some(d) = g.accum(&ctx.parents[0]) {
                    for b in 0..n {
                        for ci in 0..cin {
                            let (cc, dy, dx) = (ci / (r * r), (ci / r) % r, ci % r);
                            let sp = (b * cin + ci) * h * w;
                            let dp = (b * c + cc) * oh * ow;
                            for y in 0..h {
                                let drow = &mut d[sp + y * w..sp + y * w + w];
                                let gbase = dp + (y * r + dy) * ow + dx;
                                for (x, dv) in drow.iter_mut().enumerate() {
                                    *dv += ctx.grad[gbase + x * r];
                                }
                            }
                        }
                    }
                }
            }),
        )
    }

    /// [N, C, H*r, W*r] -> [N, C*r*r, H, W]; exact inverse of `pixel_shuffle`.
    pub fn pixel_unshuffle(&self, r: usize) -> Result<Tensor<T>> {
        if self.rank() != 4 {
            return Err(Error::RankMismatch {
                op: "pixel_unshuffle",
                expected: 4,
                found: self.rank(),
            });
        }
        if r == 0 {
            return Err(Error::InvalidArg {
                op: "pixel_unshuffle",
                what: "factor must be >= 1",
            });
        }
        let [n, c, ih, iw] = [self.dims()[0], self.dims()[1], self.dims()[2], self.dims()[3]];
        if ih % r != 0 {
            return Err(Error::NotDivisible {
                op: "pixel_unshuffle",
                what: "height",
                value: ih,
                divisor: r,
            });
        }
        if iw % r != 0 {
            return Err(Error::NotDivisible {
                op: "pixel_unshuffle",
                what: "width",
                value: iw,
                divisor: r,
            });
        }
        let (h, w) = (ih / r, iw / r);
        let cout = c * r * r;
        let src = self.data();
        let mut out = vec![T::zero(); src.len()];
        for b in 0..n {
            for co in 0..cout {
                let (cc, dy, dx) = (co / (r * r), (co / r) % r, co % r);
                let sp = (b * c + cc) * ih * iw;
                let dp = (b * cout + co) * h * w;
                for y in 0..h {
                    let sbase = sp + (y * r + dy) * iw + dx;
                    let drow = &mut out[dp + y * w..dp + y * w + w];
                    for (x, dv) in drow.iter_mut().enumerate() {
                        *dv = src[sbase + x * r];
                    }
                }
            }
        }
        Tensor::from_op(
            "pixel_unshuffle",
            out,
            &[n, cout, h, w],
            vec![self.clone()],
            Box::new(move |ctx, g| {
                if let Some(d) = g.accum(&ctx.parents[0]) {
                    for b in 0..n {
                        for co in 0..cout {
                            let (cc, dy, dx) = (co / (r * r), (co / r) % r, co % r);
                            let sp = (b * c + cc) * ih * iw;
                            let dp = (b * cout + co) * h * w;
                            for y in 0..h {
                                let sbase = sp + (y * r + dy) * iw + dx;
                                let grow = &ctx.grad[dp + y * w..dp + y * w + w];
                                for (x, &gv) in grow.iter().enumerate() {
                                    d[sbase + x * r] += gv;
                                }
                            }
                        }
                    }
                }
            }),
        )
    }
}
