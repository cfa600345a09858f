//! Layout ops: reshape, concat, slice, spatial crop, transpose, and a
//! broadcast multiply along one axis. All of them are pure index shuffles,
//! so the backward passes are the inverse shuffles.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use super::elementwise::add_into;
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

impl<T: Scalar> Tensor<T> {
    /// Same data, new extents; element count must match.
    pub fn reshape(&self, dims: &[usize]) -> Result<Tensor<T>> {
        let n: usize = dims.iter().product();
        if n != self.numel() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                axis: 0,
                expected: self.numel(),
                found: n,
            });
        }
        Tensor::from_op(
            "reshape",
            self.data().to_vec(),
            dims,
            vec![self.clone()],
            Box::new(|ctx, g| {
                if let Some(d) = g.accum(&ctx.parents[0]) {
                    add_into(d, ctx.grad);
                }
            }),
        )
    }

    /// Contiguous range [start, end) along `axis`.
    pub fn slice(&self, axis: usize, start: usize, end: usize) -> Result<Tensor<T>> {
        if axis >= self.rank() {
            return Err(Error::AxisOutOfRange {
                op: "slice",
                axis,
                rank: self.rank(),
            });
        }
        let dim = self.dims()[axis];
        if start >= end || end > dim {
            return Err(Error::InvalidArg {
                op: "slice",
                what: "range out of bounds",
            });
        }
        let outer: usize = self.dims()[..axis].iter().product();
        let inner: usize = self.dims()[axis + 1..].iter().product();
        let take = end - start;
        let mut out = Vec::with_capacity(outer * take * inner);
        let src = self.data();
        for o in 0..outer {
            let base = (o * dim + start) * inner;
            out.extend_from_slice(&src[base..base + take * inner]);
        }
        let mut dims = self.dims().to_vec();
        dims[axis] = take;
        Tensor::from_op(
            "slice",
            out,
            &dims,
            vec![self.clone()],
            Box::new(move |ctx, g| {
                if let Some(d) = g.accum(&ctx.parents[0]) {
                    for o in 0..outer {
                        let dst = (o * dim + start) * inner;
                        let src = o * take * inner;
                        add_into(
                            &mut d[dst..dst + take * inner],
                            &ctx.grad[src..src + take * inner],
                        );
                    }
                }
            }),
        )
    }

    /// Crop of the two trailing spatial axes of an NCHW tensor.
    pub fn crop2d(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<Tensor<T>> {
        if self.rank() != 4 {
            return Err(Error::RankMismatch {
                op: "crop2d",
                expected: 4,
                found: self.rank(),
            });
        }
        let [n, c, ih, iw] = [self.dims()[0], self.dims()[1], self.dims()[2], self.dims()[3]];
        if h == 0 || w == 0 || y0 + h > ih || x0 + w > iw {
            return Err(Error::InvalidArg {
                op: "crop2d",
                what: "window out of bounds",
            });
        }
        let src = self.data();
        let mut out = Vec::with_capacity(n * c * h * w);
        for pc in 0..n * c {
            let plane = pc * ih * iw;
            for y in 0..h {
                let row = plane + (y0 + y) * iw + x0;
                out.extend_from_slice(&src[row..row + w]);
            }
        }
        Tensor::from_op(
            "crop2d",
            out,
            &[n, c, h, w],
            vec![self.clone()],
            Box::new(move |ctx, g| {
                if let Some(d) = g.accum(&ctx.parents[0]) {
                    for pc in 0..n * c {
                        let plane = pc * ih * iw;
                        for y in 0..h {
                            let dst = plane + (y0 + y) * iw + x0;
                            let src = (pc * h + y) * w;
                            add_into(&mut d[dst..dst + w], &ctx.grad[src..src + w]);
                        }
                    }
                }
            }),
        )
    }

    /// Swap the two trailing axes.
    pub fn transpose_last2(&self) -> Result<Tensor<T>> {
        let r = self.rank();
        if r < 2 {
            return Err(Error::RankMismatch {
                op: "transpose_last2",
                expected: 2,
                found: r,
            });
        }
        let m = self.dims()[r - 2];
        let n = self.dims()[r - 1];
        let batch: usize = self.dims()[..r - 2].iter().product();
        let src = self.data();
        let mut out = vec![T::zero(); src.len()];
        for b in 0..batch {
            let base = b * m * n;
            for i in 0..m {
                for j in 0..n {
                    out[base + j * m + i] = src[base + i * n + j];
                }
            }
        }
        let mut dims = self.dims().to_vec();
        dims.swap(r - 2, r - 1);
        Tensor::from_op(
            "transpose_last2",
            out,
            &dims,
            vec![self.clone()],
            Box::new(move |ctx, g| {
                if let Some(d) = g.accum(&ctx.parents[0]) {
                    for b in 0..batch {
                        let base = b * m * n;
                        for i in 0..m {
                            for j in 0..n {
                                d[base + i * n + j] += ctx.grad[base + j * m + i];
                            }
                        }
                    }
                }
            }),
        )
    }

    /// Multiply by a rank-1 vector broadcast along `axis`:
    /// out[.., a, ..] = x[.., a, ..] * v[a].
    pub fn mul_axis(&self, v: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
        if v.rank() != 1 {
            return Err(Error::RankMismatch {
                op: "mul_axis",
                expected: 1,
                found: v.rank(),
            });
        }
        if axis >= self.rank() {
            return Err(Error::AxisOutOfRange {
                op: "mul_axis",
                axis,
                rank: self.rank(),
            });
        }
        let dim = self.dims()[axis];
        if v.numel() != dim {
            return Err(Error::ShapeMismatch {
                op: "mul_axis",
                axis,
                expected: dim,
                found: v.numel(),
            });
        }
        let outer: usize = self.dims()[..axis].iter().product();
        let inner: usize = self.dims()[axis + 1..].iter().product();
        let x = self.data();
        let vd = v.data();
        let mut out = Vec::with_capacity(x.len());
        for o in 0..outer {
            for a in 0..dim {
                let base = (o * dim + a) * inner;
                let s = vd[a];
                out.extend(x[base..base + inner].iter().map(|&xv| xv * s));
            }
        }
        Tensor::from_op(
            "mul_axis",
            out,
            self.dims(),
            vec![self.clone(), v.clone()],
            Box::new(move |ctx, g| {
                let vd = ctx.parents[1].data();
                if let Some(d) = g.accum(&ctx.parents[0]) {
                    for o in 0..outer {
                        for a in 0..dim {
                            let base = (o * dim + a) * inner;
                            let s = vd[a];
                            for (d, &gv) in
                                d[base..base + inner].iter_mut().zip(&ctx.grad[base..])
                            {
                                *d += gv * s;
                            }
                        }
                    }
                }
                let x = ctx.parents[0].data();
                if let Some(dv) = g.accum(&ctx.parents[1]) {
                    for o in 0..outer {
                        for a in 0..dim {
                            let base = (o * dim + a) * inner;
                            let mut acc = T::zero();
                            for (&gv, &xv) in ctx.grad[base..base + inner].iter().zip(&x[base..]) {
                                acc += gv * xv;
                            }
                            dv[a] += acc;
                        }
                    }
                }
            }),
        )
    }
}

/// Join along `axis`; all other extents must agree.
pub fn concat<T: Scalar>(parts: &[&Tensor<T>], axis: usize) -> Result<Tensor<T>> {
    let first = *parts.first().ok_or(Error::InvalidArg {
        op: "concat",
        what: "no inputs",
    })?;
    if axis >= first.rank() {
        return Err(Error::AxisOutOfRange {
            op: "concat",
            axis,
            rank: first.rank(),
        });
    }
    let mut cat_dim = 0usize;
    for p in parts {
        if p.rank() != first.rank() {
            return Err(Error::RankMismatch {
                op: "concat",
                expected: first.rank(),
                found: p.rank(),
            });
        }
        for (ax, (&da, &db)) in first.dims().iter().zip(p.dims()).enumerate() {
            if ax != axis && da != db {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    axis: ax,
                    expected: da,
                    found: db,
                });
            }
        }
        cat_dim += p.dims()[axis];
    }
    let outer: usize = first.dims()[..axis].iter().product();
    let inner: usize = first.dims()[axis + 1..].iter().product();
    let mut out = Vec::with_capacity(outer * cat_dim * inner);
    for o in 0..outer {
        for p in parts {
            let block = p.dims()[axis] * inner;
            out.extend_from_slice(&p.data()[o * block..(o + 1) * block]);
        }
    }
    let mut dims = first.dims().to_vec();
    dims[axis] = cat_dim;
    let parents: Vec<Tensor<T>> = parts.iter().map(|p| (*p).clone()).collect();
    Tensor::from_op(
        "concat",
        out,
        &dims,
        parents,
        Box::new(move |ctx, g| {
            let total_block = cat_dim * inner;
            let mut offset = 0usize;
            // Parent order matches forward copy order.
            let blocks: Vec<usize> = ctx
                .parents
                .iter()
                .map(|p| p.dims()[axis] * inner)
                .collect();
            for (p, &block) in ctx.parents.iter().zip(&blocks) {
                if let Some(d) = g.accum(p) {
                    for o in 0..outer {
                        let src = o * total_block + offset;
                        add_into(
                            &mut d[o * block..(o + 1) * block],
                            &ctx.grad[src..src + block],
                        );
                    }
                }
                offset += block;
            }
        }),
    )
}
