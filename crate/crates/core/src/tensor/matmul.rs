//! Batched matrix multiply with broadcasting over leading axes, numpy style:
//! trailing two axes are the matrix, leading axes pair up right-aligned and
//! extents of 1 broadcast.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy)]
struct MatGeom {
    m: usize,
    k: usize,
    n: usize,
    batch: usize,
}

/// For each flat output batch index, the flat batch index into an operand
/// whose (padded) batch dims are `dims` against output batch dims `out`.
fn batch_offsets(out: &[usize], dims: &[usize]) -> Vec<usize> {
    let total: usize = out.iter().product();
    let mut offs = Vec::with_capacity(total);
    for lin in 0..total {
        // decode lin in `out`, re-encode in `dims` with broadcast extents pinned to 0
        let mut rem = lin;
        let mut off = 0usize;
        let mut stride = 1usize;
        let mut strides = vec![0usize; out.len()];
        for i in (0..out.len()).rev() {
            strides[i] = stride;
            stride *= dims[i];
        }
        for i in 0..out.len() {
            let block: usize = out[i + 1..].iter().product();
            let idx = rem / block;
            rem %= block;
            if dims[i] != 1 {
                off += idx * strides[i];
            }
        }
        offs.push(off);
    }
    offs
}

impl<T: Scalar> Tensor<T> {
    pub fn matmul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let (ra, rb) = (self.rank(), other.rank());
        if ra < 2 || rb < 2 {
            return Err(Error::RankMismatch {
                op: "matmul",
                expected: 2,
                found: ra.min(rb),
            });
        }
        let m = self.dims()[ra - 2];
        let k = self.dims()[ra - 1];
        let kb = other.dims()[rb - 2];
        let n = other.dims()[rb - 1];
        if k != kb {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                axis: rb - 2,
                expected: k,
                found: kb,
            });
        }
        let br = ra.max(rb) - 2;
        let mut ba = vec![1usize; br];
        let mut bb = vec![1usize; br];
        ba[br - (ra - 2)..].copy_from_slice(&self.dims()[..ra - 2]);
        bb[br - (rb - 2)..].copy_from_slice(&other.dims()[..rb - 2]);
        let mut bo = vec![1usize; br];
        for i in 0..br {
            if ba[i] != bb[i] && ba[i] != 1 && bb[i] != 1 {
                return Err(Error::ShapeMismatch {
                    op: "matmul",
                    axis: i,
                    expected: ba[i],
                    found: bb[i],
                });
            }
            bo[i] = ba[i].max(bb[i]);
        }
        let batch: usize = bo.iter().product();
        let geom = MatGeom { m, k, n, batch };
        let offs_a = batch_offsets(&bo, &ba);
        let offs_b = batch_offsets(&bo, &bb);

        let a = self.data();
        let b = other.data();
        let mut out = Vec::with_capacity(batch * m * n);
        let mut acc = vec![0.0f64; n];
        for bi in 0..batch {
            let ab = offs_a[bi] * m * k;
            let bb_ = offs_b[bi] * k * n;
            for i in 0..m {
                for v in acc.iter_mut() {
                    *v = 0.0;
                }
                for kk in 0..k {
                    let av = a[ab + i * k + kk].to64();
                    if av == 0.0 {
                        continue;
                    }
                    let brow = &b[bb_ + kk * n..bb_ + kk * n + n];
                    for (s, &bv) in acc.iter_mut().zip(brow) {
                        *s += av * bv.to64();
                    }
                }
                out.extend(acc.iter().map(|&v| T::from64(v)));
            }
        }

        let mut dims = bo;
        dims.push(m);
        dims.push(n);
        // rank-1 batch of size 1 collapses away when both inputs were rank 2
        let dims: Vec<usize> = if ra == 2 && rb == 2 {
            vec![m, n]
        } else {
            dims
        };
        Tensor::from_op(
            "matmul",
            out,
            &dims,
            vec![self.clone(), other.clone()],
            Box::new(move |ctx, g| {
                let MatGeom { m, k, n, batch } = geom;
                let a = ctx.parents[0].data();
                let b = ctx.parents[1].data();
                if let Some(da) = g.accum(&ctx.parents[0]) {
                    // dA[i,kk] = sum_j G[i,j] B[kk,j]
                    for bi in 0..batch {
                        let gb = bi * m * n;
                        let bb_ = offs_b[bi] * k * n;
                        let ab = offs_a[bi] * m * k;
                        for i in 0..m {
                            let grow = &ctx.grad[gb + i * n..gb + i * n + n];
                            for kk in 0..k {
                                let brow = &b[bb_ + kk * n..bb_ + kk * n + n];
                                let mut acc = 0.0f64;
                                for (&gv, &bv) in grow.iter().zip(brow) {
                                    acc += gv.to64() * bv.to64();
                                }
                                da[ab + i * k + kk] += T::from64(acc);
                            }
                        }
                    }
                }
                if let Some(db) = g.accum(&ctx.parents[1]) {
                    // dB[kk,j] = sum_i A[i,kk] G[i,j]
                    for bi in 0..batch {
                        let gb = bi * m * n;
                        let bb_ = offs_b[bi] * k * n;
                        let ab = offs_a[bi] * m * k;
                        for i in 0..m {
                            let grow = &ctx.grad[gb + i * n..gb + i * n + n];
                            for kk in 0..k {
                                let av = a[ab + i * k + kk];
                                if av == T::zero() {
                                    continue;
                                }
                                let drow = &mut db[bb_ + kk * n..bb_ + kk * n + n];
                                for (d, &gv) in drow.iter_mut().zip(grow) {
                                    *d += av * gv;
                                }
                            }
                        }
                    }
                }
            }),
        )
    }
}
