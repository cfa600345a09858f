//! Image quality metrics. Both run in f64 regardless of the tensor element
//! type, so reports do not wobble with the compute dtype.

use alloc::vec::Vec;

use num_traits::Float;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Peak signal-to-noise ratio in dB: 10*log10(peak^2 / MSE), capped at
/// 100 dB once MSE drops below 1e-10 so perfect matches stay finite.
pub fn psnr<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, peak: f64) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(shape_err("psnr", a, b));
    }
    if !(peak > 0.0) {
        return Err(Error::InvalidArg {
            op: "psnr",
            what: "peak must be positive",
        });
    }
    let mut acc = 0.0f64;
    for (&x, &y) in a.data().iter().zip(b.data()) {
        let d = x.to64() - y.to64();
        acc += d * d;
    }
    let mse = acc / a.numel() as f64;
    if mse < 1e-10 {
        return Ok(100.0);
    }
    Ok(10.0 * Float::log10(peak * peak / mse))
}

/// Mean structural similarity: 11x11 Gaussian window (sigma 1.5), K1 = 0.01,
/// K2 = 0.03, dynamic range 1, valid windows only, averaged per channel then
/// across channels and batch.
pub fn ssim<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(shape_err("ssim", a, b));
    }
    if a.rank() != 4 {
        return Err(Error::RankMismatch {
            op: "ssim",
            expected: 4,
            found: a.rank(),
        });
    }
    const WIN: usize = 11;
    let [n, c, h, w] = [a.dims()[0], a.dims()[1], a.dims()[2], a.dims()[3]];
    if h < WIN || w < WIN {
        return Err(Error::InvalidArg {
            op: "ssim",
            what: "spatial extents below the 11x11 window",
        });
    }
    let window = gaussian_window(WIN, 1.5);
    const C1: f64 = 0.01 * 0.01;
    const C2: f64 = 0.03 * 0.03;

    let mut total = 0.0f64;
    let planes = n * c;
    for pc in 0..planes {
        let pa = &a.data()[pc * h * w..(pc + 1) * h * w];
        let pb = &b.data()[pc * h * w..(pc + 1) * h * w];
        let mut plane_sum = 0.0f64;
        let positions = (h - WIN + 1) * (w - WIN + 1);
        for y0 in 0..h - WIN + 1 {
            for x0 in 0..w - WIN + 1 {
                let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for dy in 0..WIN {
                    let ra = &pa[(y0 + dy) * w + x0..(y0 + dy) * w + x0 + WIN];
                    let rb = &pb[(y0 + dy) * w + x0..(y0 + dy) * w + x0 + WIN];
                    let wr = &window[dy * WIN..dy * WIN + WIN];
                    for i in 0..WIN {
                        let (xv, yv, wv) = (ra[i].to64(), rb[i].to64(), wr[i]);
                        mx += wv * xv;
                        my += wv * yv;
                        sxx += wv * xv * xv;
                        syy += wv * yv * yv;
                        sxy += wv * xv * yv;
                    }
                }
                let vx = sxx - mx * mx;
                let vy = syy - my * my;
                let cov = sxy - mx * my;
                let v = ((2.0 * mx * my + C1) * (2.0 * cov + C2))
                    / ((mx * mx + my * my + C1) * (vx + vy + C2));
                plane_sum += v;
            }
        }
        total += plane_sum / positions as f64;
    }
    Ok(total / planes as f64)
}

fn gaussian_window(side: usize, sigma: f64) -> Vec<f64> {
    let half = (side / 2) as f64;
    let mut win = Vec::with_capacity(side * side);
    let mut sum = 0.0;
    for y in 0..side {
        for x in 0..side {
            let dy = y as f64 - half;
            let dx = x as f64 - half;
            let v = Float::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
            win.push(v);
            sum += v;
        }
    }
    for v in win.iter_mut() {
        *v /= sum;
    }
    win
}

fn shape_err<T: Scalar>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Error {
    if a.rank() != b.rank() {
        return Error::RankMismatch {
            op,
            expected: a.rank(),
            found: b.rank(),
        };
    }
    for (axis, (&da, &db)) in a.dims().iter().zip(b.dims()).enumerate() {
        if da != db {
            return Error::ShapeMismatch {
                op,
                axis,
                expected: da,
                found: db,
            };
        }
    }
    Error::InvalidArg { op, what: "shape" }
}
