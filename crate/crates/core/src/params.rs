//! Parameter containers: named, enumerable, rebuildable.
//!
//! Every learnable struct implements [`Params`]: `visit` walks the tensors in
//! a fixed order under dotted names ("rddb.stage0.weight"), `map` rebuilds the
//! struct with each tensor replaced. The optimizer steps by mapping, the
//! checkpoint loader maps an initialized skeleton onto stored data, and
//! parameter counting is a visit. One mechanism, no reflection.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::{conv2d, Conv2dSpec, Scalar, Tensor};
use crate::Result;

pub trait Params<T: Scalar>: Sized {
    /// Push `(name, tensor)` pairs in deterministic order.
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<T>)>);

    /// Rebuild with every tensor replaced by `f(name, tensor)`.
    fn map(
        &self,
        prefix: &str,
        f: &mut dyn FnMut(&str, &Tensor<T>) -> Result<Tensor<T>>,
    ) -> Result<Self>;

    fn named(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        self.visit("", &mut out);
        out
    }

    fn param_count(&self) -> usize {
        self.named().iter().map(|(_, t)| t.numel()).sum()
    }
}

pub(crate) fn join(prefix: &str, leaf: &str) -> String {
    if prefix.is_empty() {
        String::from(leaf)
    } else {
        format!("{prefix}.{leaf}")
    }
}

/// Deterministic initializer. Construction order is the parameter order, so a
/// given (config, seed) always yields the same network.
pub struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Kaiming-uniform weights (bound 1/sqrt(fan_in)), zero bias.
    pub fn conv<T: Scalar>(
        &mut self,
        cin_per_group: usize,
        cout: usize,
        k: usize,
    ) -> Result<ConvParams<T>> {
        let fan_in = cin_per_group * k * k;
        let bound = 1.0 / num_traits::Float::sqrt(fan_in as f64);
        let n = cout * fan_in;
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(T::from64(self.rng.random_range(-bound..bound)));
        }
        Ok(ConvParams {
            weight: Tensor::var("weight", data, &[cout, cin_per_group, k, k])?,
            bias: Tensor::var("bias", alloc::vec![T::zero(); cout], &[cout])?,
        })
    }

    /// Zero weights and bias: residual branches start as the identity.
    pub fn conv_zero<T: Scalar>(
        &mut self,
        cin_per_group: usize,
        cout: usize,
        k: usize,
    ) -> Result<ConvParams<T>> {
        Ok(ConvParams {
            weight: Tensor::var(
                "weight",
                alloc::vec![T::zero(); cout * cin_per_group * k * k],
                &[cout, cin_per_group, k, k],
            )?,
            bias: Tensor::var("bias", alloc::vec![T::zero(); cout], &[cout])?,
        })
    }

    /// 1x1 conv preloaded as [identity | zero] over a concatenated input:
    /// the first `cout` input channels pass through, the rest start ignored.
    pub fn conv_passthrough<T: Scalar>(
        &mut self,
        cin: usize,
        cout: usize,
    ) -> Result<ConvParams<T>> {
        let mut data = alloc::vec![T::zero(); cout * cin];
        for o in 0..cout {
            data[o * cin + o] = T::one();
        }
        Ok(ConvParams {
            weight: Tensor::var("weight", data, &[cout, cin, 1, 1])?,
            bias: Tensor::var("bias", alloc::vec![T::zero(); cout], &[cout])?,
        })
    }

    /// LayerNorm affine pair: gain 1, offset 0.
    pub fn norm<T: Scalar>(&mut self, channels: usize) -> Result<NormParams<T>> {
        Ok(NormParams {
            gain: Tensor::var("gain", alloc::vec![T::one(); channels], &[channels])?,
            offset: Tensor::var("offset", alloc::vec![T::zero(); channels], &[channels])?,
        })
    }

    /// Per-head attention temperature, all ones.
    pub fn ones<T: Scalar>(&mut self, n: usize) -> Result<Tensor<T>> {
        Tensor::var("alpha", alloc::vec![T::one(); n], &[n])
    }
}

#[derive(Clone)]
pub struct ConvParams<T: Scalar> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> ConvParams<T> {
    pub fn forward(&self, x: &Tensor<T>, spec: Conv2dSpec) -> Result<Tensor<T>> {
        conv2d(x, &self.weight, Some(&self.bias), &spec)
    }
}

impl<T: Scalar> Params<T> for ConvParams<T> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<T>)>) {
        out.push((join(prefix, "weight"), &self.weight));
        out.push((join(prefix, "bias"), &self.bias));
    }

    fn map(
        &self,
        prefix: &str,
        f: &mut dyn FnMut(&str, &Tensor<T>) -> Result<Tensor<T>>,
    ) -> Result<Self> {
        Ok(Self {
            weight: f(&join(prefix, "weight"), &self.weight)?,
            bias: f(&join(prefix, "bias"), &self.bias)?,
        })
    }
}

#[derive(Clone)]
pub struct NormParams<T: Scalar> {
    pub gain: Tensor<T>,
    pub offset: Tensor<T>,
}

impl<T: Scalar> Params<T> for NormParams<T> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<T>)>) {
        out.push((join(prefix, "gain"), &self.gain));
        out.push((join(prefix, "offset"), &self.offset));
    }

    fn map(
        &self,
        prefix: &str,
        f: &mut dyn FnMut(&str, &Tensor<T>) -> Result<Tensor<T>>,
    ) -> Result<Self> {
        Ok(Self {
            gain: f(&join(prefix, "gain"), &self.gain)?,
            offset: f(&join(prefix, "offset"), &self.offset)?,
        })
    }
}
