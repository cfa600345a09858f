//! Synthetic moire-pair generation: a clean image is modulated by per-channel
//! sinusoidal carriers (texture banding) plus a global color shift, then
//! clamped to [0,1]. Also hosts the synthetic "photo" generator used wherever
//! the tests need natural-looking content without a dataset.

use alloc::vec::Vec;

use num_traits::Float;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

const TAU: f64 = core::f64::consts::TAU;

#[derive(Debug, Clone, PartialEq)]
pub struct MoireParams {
    /// per-channel carrier (fx, fy) in cycles/pixel, each strictly below 0.5
    pub freq: [[f64; 2]; 3],
    pub phase: [f64; 3],
    /// banding strength, 0..=0.5
    pub amplitude: f64,
    /// radial frequency drift, bends the bands
    pub curvature: f64,
    /// global color shift per channel, each in [-0.1, 0.1]
    pub color_shift: [f64; 3],
    /// seed that produced these parameters (0 for hand-built ones)
    pub seed: u64,
}

impl MoireParams {
    pub fn validate(&self) -> Result<()> {
        for ch in &self.freq {
            for &f in ch {
                if !(f.abs() < 0.5) {
                    return Err(Error::Nyquist { value: f });
                }
            }
        }
        if !(0.0..=0.5).contains(&self.amplitude) {
            return Err(Error::InvalidArg {
                op: "moire",
                what: "amplitude outside [0, 0.5]",
            });
        }
        if self.color_shift.iter().any(|d| d.abs() > 0.1) {
            return Err(Error::InvalidArg {
                op: "moire",
                what: "color shift outside [-0.1, 0.1]",
            });
        }
        Ok(())
    }

    /// Draw a parameter set that produces visible colored banding: carriers
    /// well inside Nyquist but above the decomposition cutoff, moderate
    /// amplitude, small shift.
    pub fn sample(seed: u64) -> MoireParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut freq = [[0.0f64; 2]; 3];
        for ch in freq.iter_mut() {
            for f in ch.iter_mut() {
                let m = rng.random_range(0.12f64..0.42);
                *f = if rng.random_range(0.0..1.0f64) < 0.5 { -m } else { m };
            }
        }
        let mut phase = [0.0f64; 3];
        for p in phase.iter_mut() {
            *p = rng.random_range(0.0..TAU);
        }
        let amplitude = rng.random_range(0.1f64..0.3);
        let curvature = rng.random_range(0.0f64..1.5e-4);
        let mut color_shift = [0.0f64; 3];
        for d in color_shift.iter_mut() {
            *d = rng.random_range(-0.08f64..0.08);
        }
        MoireParams {
            freq,
            phase,
            amplitude,
            curvature,
            color_shift,
            seed,
        }
    }
}

/// A training example plus the parameters that degraded it (absent for pairs
/// loaded from disk).
#[derive(Clone)]
pub struct SamplePair<T: Scalar> {
    pub moire: Tensor<T>,
    pub clean: Tensor<T>,
    pub meta: Option<MoireParams>,
}

/// clean [B,3,H,W] in [0,1] -> degraded pair.
pub fn gen_moire_pair<T: Scalar>(clean: &Tensor<T>, params: &MoireParams) -> Result<SamplePair<T>> {
    params.validate()?;
    if clean.rank() != 4 {
        return Err(Error::RankMismatch {
            op: "moire",
            expected: 4,
            found: clean.rank(),
        });
    }
    if clean.dims()[1] != 3 {
        return Err(Error::ShapeMismatch {
            op: "moire",
            axis: 1,
            expected: 3,
            found: clean.dims()[1],
        });
    }
    let [n, _, h, w] = [clean.dims()[0], 3, clean.dims()[2], clean.dims()[3]];
    let src = clean.data();
    let mut out = Vec::with_capacity(src.len());
    for b in 0..n {
        for ch in 0..3 {
            let [fx, fy] = params.freq[ch];
            let phi = params.phase[ch];
            let delta = params.color_shift[ch];
            let base = (b * 3 + ch) * h * w;
            for y in 0..h {
                for x in 0..w {
                    let (xf, yf) = (x as f64, y as f64);
                    let arg =
                        TAU * (fx * xf + fy * yf + params.curvature * (xf * xf + yf * yf)) + phi;
                    let carrier = 1.0 + params.amplitude * Float::sin(arg);
                    let v = src[base + y * w + x].to64() * carrier + delta;
                    out.push(T::from64(v.clamp(0.0, 1.0)));
                }
            }
        }
    }
    Ok(SamplePair {
        moire: Tensor::from_vec("moire", out, clean.dims())?,
        clean: clean.clone(),
        meta: Some(params.clone()),
    })
}

/// Deterministic natural-content stand-in: low-frequency color washes, a few
/// soft disc/stripe shapes, and mild band-limited texture. Smooth enough that
/// the low/high split behaves like it does on photographs.
pub fn synthetic_photo<T: Scalar>(seed: u64, h: usize, w: usize) -> Result<Tensor<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut chans: Vec<Vec<f64>> = Vec::with_capacity(3);

    // background: sum of a handful of very low-frequency plane waves per channel
    for _ in 0..3 {
        let mut plane = alloc::vec![0.0f64; h * w];
        let n_waves = 3;
        let mut waves = Vec::new();
        for _ in 0..n_waves {
            waves.push((
                rng.random_range(-1.2f64..1.2) / w.max(1) as f64,
                rng.random_range(-1.2f64..1.2) / h.max(1) as f64,
                rng.random_range(0.0..TAU),
                rng.random_range(0.08f64..0.22),
            ));
        }
        let offset = rng.random_range(0.35f64..0.65);
        for y in 0..h {
            for x in 0..w {
                let mut v = offset;
                for &(fx, fy, ph, amp) in &waves {
                    v += amp * Float::sin(TAU * (fx * x as f64 + fy * y as f64) + ph);
                }
                plane[y * w + x] = v;
            }
        }
        chans.push(plane);
    }

    // soft shapes: discs with smooth falloff, shared across channels with
    // per-channel tint
    let n_shapes = 4;
    for _ in 0..n_shapes {
        let cx = rng.random_range(0.0..w as f64);
        let cy = rng.random_range(0.0..h as f64);
        let r = rng.random_range(0.12f64..0.35) * w.min(h) as f64;
        let soft = r * 0.35;
        let tint = [
            rng.random_range(-0.25f64..0.25),
            rng.random_range(-0.25f64..0.25),
            rng.random_range(-0.25f64..0.25),
        ];
        for y in 0..h {
            for x in 0..w {
                let d = Float::sqrt(
                    (x as f64 - cx) * (x as f64 - cx) + (y as f64 - cy) * (y as f64 - cy),
                );
                // 1 inside, 0 outside, smooth ramp of width `soft`
                let m = (1.0 - (d - r) / soft).clamp(0.0, 1.0);
                if m > 0.0 {
                    for (ch, plane) in chans.iter_mut().enumerate() {
                        plane[y * w + x] += tint[ch] * m;
                    }
                }
            }
        }
    }

    // gentle texture: one mid-frequency wave per channel, low amplitude
    for plane in chans.iter_mut() {
        let fx = rng.random_range(0.02f64..0.06);
        let fy = rng.random_range(0.02f64..0.06);
        let ph = rng.random_range(0.0..TAU);
        let amp = rng.random_range(0.01f64..0.04);
        for y in 0..h {
            for x in 0..w {
                plane[y * w + x] += amp * Float::sin(TAU * (fx * x as f64 + fy * y as f64) + ph);
            }
        }
    }

    let mut data = Vec::with_capacity(3 * h * w);
    for plane in &chans {
        data.extend(plane.iter().map(|&v| T::from64(v.clamp(0.0, 1.0))));
    }
    Tensor::from_vec("synthetic_photo", data, &[1, 3, h, w])
}

/// Smooth two-axis gradient card, handy for closed-form checks.
pub fn gradient_card<T: Scalar>(h: usize, w: usize) -> Result<Tensor<T>> {
    let mut data = Vec::with_capacity(3 * h * w);
    for ch in 0..3usize {
        for y in 0..h {
            for x in 0..w {
                let v = match ch {
                    0 => x as f64 / w.max(1) as f64,
                    1 => y as f64 / h.max(1) as f64,
                    _ => 0.5 * (x as f64 / w.max(1) as f64 + y as f64 / h.max(1) as f64),
                };
                data.push(T::from64(v));
            }
        }
    }
    Tensor::from_vec("gradient_card", data, &[1, 3, h, w])
}
