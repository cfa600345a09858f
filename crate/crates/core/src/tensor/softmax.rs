//! Softmax along one axis, max-subtracted so +-1e3 logits stay finite.

use alloc::boxed::Box;
use alloc::vec;
use num_traits::Float;

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

impl<T: Scalar> Tensor<T> {
    pub fn softmax(&self, axis: usize) -> Result<Tensor<T>> {
        if axis >= self.rank() {
            return Err(Error::AxisOutOfRange {
                op: "softmax",
                axis,
                rank: self.rank(),
            });
        }
        let dim = self.dims()[axis];
        let outer: usize = self.dims()[..axis].iter().product();
        let inner: usize = self.dims()[axis + 1..].iter().product();
        let x = self.data();
        let mut out = vec![T::zero(); x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * dim * inner + i;
                let mut mx = f64::NEG_INFINITY;
                for a in 0..dim {
                    mx = mx.max(x[base + a * inner].to64());
                }
                let mut sum = 0.0f64;
                for a in 0..dim {
                    sum += Float::exp(x[base + a * inner].to64() - mx);
                }
                for a in 0..dim {
                    let e = Float::exp(x[base + a * inner].to64() - mx);
                    out[base + a * inner] = T::from64(e / sum);
                }
            }
        }
        Tensor::from_op(
            "softmax",
            out,
            self.dims(),
            vec![self.clone()],
            Box::new(move |ctx, g| {
                if let Some(d) = g.accum(&ctx.parents[0]) {
                    let y = ctx.value;
                    for o in 0..outer {
                        for i in 0..inner {
                            let base = o * dim * inner + i;
                            let mut dot = 0.0f64;
                            for a in 0..dim {
                                let idx = base + a * inner;
                                dot += y[idx].to64() * ctx.grad[idx].to64();
                            }
                            for a in 0..dim {
                                let idx = base + a * inner;
                                d[idx] += y[idx] * (ctx.grad[idx] - T::from64(dot));
                            }
                        }
                    }
                }
            }),
        )
    }
}
