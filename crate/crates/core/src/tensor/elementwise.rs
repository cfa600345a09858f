//! Pointwise ops and full reductions. Derivatives are written against the
//! same closed forms the forward passes use, so finite differences agree to
//! rounding error.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use super::{c, same_shape, Scalar, Tensor};
use crate::error::Result;

pub(crate) fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

impl<T: Scalar> Tensor<T> {
    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        same_shape("add", self, other)?;
        let data: Vec<T> = self
            .data()
            .iter()
            .zip(other.data())
            .map(|(&a, &b)| a + b)
            .collect();
        Tensor::from_op(
            "add",
            data,
            self.dims(),
            vec![self.clone(), other.clone()],
            Box::new(|ctx, g| {
                for p in ctx.parents {
                    if let Some(d) = g.accum(p) {
                        add_into(d, ctx.grad);
                    }
                }
            }),
        )
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        same_shape("sub", self, other)?;
        let data: Vec<T> = self
            .data()
            .iter()
            .zip(other.data())
            .map(|(&a, &b)| a - b)
            .collect();
        Tensor::from_op(
            "sub",
            data,
            self.dims(),
            vec![self.clone(), other.clone()],
            Box::new(|ctx, g| {
                if let Some(d) = g.accum(&ctx.parents[0]) {
                    add_into(d, ctx.grad);
                }
                if let Some(d) = g.accum(&ctx.parents[1]) {
                    for (d, &gv) in d.iter_mut().zip(ctx.grad) {
                        *d += -gv;
                    }
                }
            }),
        )
    }

    /// Hadamard product.
    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        same_shape("mul", self, other)?;
        let data: Vec<T> = self
            .data()
            .iter()
            .zip(other.data())
            .map(|(&a, &b)| a * b)
            .collect();
        Tensor::from_op(
            "mul",
            data,
            self.dims(),
            vec![self.clone(), other.clone()],
            Box::new(|ctx, g| {
                if let Some(d) = g.accum(&ctx.parents[0]) {
                    let b = ctx.parents[1].data();
                    for ((d, &gv), &bv) in d.iter_mut().zip(ctx.grad).zip(b) {
                        *d += gv * bv;
                    }
                }
                if let Some(d) = g.accum(&ctx.parents[1]) {
                    let a = ctx.parents[0].data();
                    for ((d, &gv), &av) in d.iter_mut().zip(ctx.grad).zip(a) {
                        *d += gv * av;
                    }
                }
            }),
        )
    }

    pub fn add_scalar(&self, k: T) -> Result<Tensor<T>> {
        let data: Vec<T> = self.data().iter().map(|&a| a + k).collect();
        Tensor::from_op(
            "add_scalar",
            data,
            self.dims(),
            vec![self.clone()],
            Box::new(|ctx, g| {
                if let Some(d) = g.accum(&ctx.parents[0]) {
                    add_into(d, ctx.grad);
                }
            }),
        )
    }

    pub fn mul_scalar(&self, k: T) -> Result<Tensor<T>> {
        let data: Vec<T> = self.data().iter().map(|&a| a * k).collect();
        Tensor::from_op(
            "mul_scalar",
            data,
            self.dims(),
            vec![self.clone()],
            Box::new(move |ctx, g| {
                if let Some(d) = g.accum(&ctx.parents[0]) {
                    for (d, &gv) in d.iter_mut().zip(ctx.grad) {
                        *d += gv * k;
                    }
                }
            }),
        )
    }

    /// |x|; the derivative at 0 is taken as 0.
    pub fn abs(&self) -> Result<Tensor<T>> {
        let data: Vec<T> = self.data().iter().map(|&a| a.abs()).collect();
        Tensor::from_op(
            "abs",
            data,
            self.dims(),
            vec![self.clone()],
            Box::new(|ctx, g| {
                if let Some(d) = g.accum(&ctx.parents[0]) {
                    let x = ctx.parents[0].data();
                    for ((d, &gv), &xv) in d.iter_mut().zip(ctx.grad).zip(x) {
                        let s = if xv > T::zero() {
                            T::one()
                        } else if xv < T::zero() {
                            -T::one()
                        } else {
                            T::zero()
                        };
                        *d += gv * s;
                    }
                }
            }),
        )
    }

    /// Tanh-approximation gelu: 0.5 x (1 + tanh(s (x + b x^3))),
    /// s = sqrt(2/pi), b = 0.044715.
    pub fn gelu(&self) -> Result<Tensor<T>> {
        let data: Vec<T> = self.data().iter().map(|&x| gelu_val(x)).collect();
        Tensor::from_op(
            "gelu",
            data,
            self.dims(),
            vec![self.clone()],
            Box::new(|ctx, g| {
                if let Some(d) = g.accum(&ctx.parents[0]) {
                    let x = ctx.parents[0].data();
                    for ((d, &gv), &xv) in d.iter_mut().zip(ctx.grad).zip(x) {
                        *d += gv * gelu_grad(xv);
                    }
                }
            }),
        )
    }

    pub fn sigmoid(&self) -> Result<Tensor<T>> {
        let data: Vec<T> = self
            .data()
            .iter()
            .map(|&x| T::one() / (T::one() + (-x).exp()))
            .collect();
        Tensor::from_op(
            "sigmoid",
            data,
            self.dims(),
            vec![self.clone()],
            Box::new(|ctx, g| {
                if let Some(d) = g.accum(&ctx.parents[0]) {
                    // y(1-y) in terms of the already computed output
                    for ((d, &gv), &y) in d.iter_mut().zip(ctx.grad).zip(ctx.value) {
                        *d += gv * y * (T::one() - y);
                    }
                }
            }),
        )
    }

    /// Sum of all elements, as a [1] tensor. Accumulates in f64.
    pub fn sum(&self) -> Result<Tensor<T>> {
        let mut acc = 0.0f64;
        for &v in self.data() {
            acc += v.to_f64().unwrap_or(f64::NAN);
        }
        Tensor::from_op(
            "sum",
            vec![c(acc)],
            &[1],
            vec![self.clone()],
            Box::new(|ctx, g| {
                if let Some(d) = g.accum(&ctx.parents[0]) {
                    let gv = ctx.grad[0];
                    for d in d.iter_mut() {
                        *d += gv;
                    }
                }
            }),
        )
    }

    /// Mean of all elements, as a [1] tensor.
    pub fn mean(&self) -> Result<Tensor<T>> {
        let n = self.numel();
        let mut acc = 0.0f64;
        for &v in self.data() {
            acc += v.to_f64().unwrap_or(f64::NAN);
        }
        let inv_n = T::one() / c::<T>(n as f64);
        Tensor::from_op(
            "mean",
            vec![c(acc / n as f64)],
            &[1],
            vec![self.clone()],
            Box::new(move |ctx, g| {
                if let Some(d) = g.accum(&ctx.parents[0]) {
                    let gv = ctx.grad[0] * inv_n;
                    for d in d.iter_mut() {
                        *d += gv;
                    }
                }
            }),
        )
    }
}

fn gelu_val<T: Scalar>(x: T) -> T {
    let s = c::<T>(0.7978845608028654);
    let b = c::<T>(0.044715);
    let u = s * (x + b * x * x * x);
    c::<T>(0.5) * x * (T::one() + u.tanh())
}

fn gelu_grad<T: Scalar>(x: T) -> T {
    let s = c::<T>(0.7978845608028654);
    let b = c::<T>(0.044715);
    let half = c::<T>(0.5);
    let u = s * (x + b * x * x * x);
    let t = u.tanh();
    let du = s * (T::one() + c::<T>(3.0) * b * x * x);
    half * (T::one() + t) + half * x * (T::one() - t * t) * du
}
