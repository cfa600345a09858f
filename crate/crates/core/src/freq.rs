//! The L-level frequency decomposition and its fixed inverse.
//!
//! One 3x3 smoothing kernel, applied depthwise with dilation 2^i at level i
//! (i = 1..L), splits an image into a smooth low component and a signed
//! high-frequency residual:
//!
//!   low_i  = conv(low_{i-1}, k, dilation 2^i)
//!   high_i = high_{i-1} + low_{i-1} - low_i
//!
//! starting from low_0 = image, high_0 = 0. The recursion telescopes, so
//! low_L + high_L reconstructs the image exactly (up to rounding); the fixed
//! inverse is literally that addition. Replicate padding keeps constants
//! constant, which preserves the image mean at the borders.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::metrics::psnr;
use crate::tensor::{conv2d, Conv2dSpec, PadMode, PadSpec, Scalar, Tensor};

/// Row-major 3x3 smoothing weights; dyadic rationals summing to exactly 1.
pub const KERNEL: [f64; 9] = [
    1.0 / 16.0,
    1.0 / 8.0,
    1.0 / 16.0,
    1.0 / 8.0,
    1.0 / 4.0,
    1.0 / 8.0,
    1.0 / 16.0,
    1.0 / 8.0,
    1.0 / 16.0,
];

/// The smoothing kernel as a depthwise conv weight [C,1,3,3].
pub fn kernel<T: Scalar>(channels: usize) -> Result<Tensor<T>> {
    let mut data = Vec::with_capacity(channels * 9);
    for _ in 0..channels {
        data.extend(KERNEL.iter().map(|&v| T::from64(v)));
    }
    Tensor::from_vec("freq_kernel", data, &[channels, 1, 3, 3])
}

/// Spatial reach of the level-L dilated kernel: 2*2^L + 1.
pub fn footprint(levels: usize) -> usize {
    2 * (1usize << levels) + 1
}

fn smooth<T: Scalar>(x: &Tensor<T>, dilation: usize, k: &Tensor<T>) -> Result<Tensor<T>> {
    let spec = Conv2dSpec {
        stride: 1,
        dilation,
        groups: x.dims()[1],
        pad: PadSpec::uniform(PadMode::Replicate, dilation),
    };
    conv2d(x, k, None, &spec)
}

/// Split [B,C,H,W] into (low, high) with `levels` >= 1 smoothing levels.
/// Extents must fit the level-L kernel footprint.
pub fn decompose<T: Scalar>(
    image: &Tensor<T>,
    levels: usize,
) -> Result<(Tensor<T>, Tensor<T>)> {
    if image.rank() != 4 {
        return Err(Error::RankMismatch {
            op: "decompose",
            expected: 4,
            found: image.rank(),
        });
    }
    if levels == 0 || levels > 16 {
        return Err(Error::InvalidArg {
            op: "decompose",
            what: "levels must be in 1..=16",
        });
    }
    let reach = footprint(levels);
    let (h, w) = (image.dims()[2], image.dims()[3]);
    if h < reach {
        return Err(Error::ImageTooSmall {
            side: "height",
            found: h,
            levels,
            reach,
        });
    }
    if w < reach {
        return Err(Error::ImageTooSmall {
            side: "width",
            found: w,
            levels,
            reach,
        });
    }

    let k = kernel(image.dims()[1])?;
    let mut low = image.clone();
    let mut high: Option<Tensor<T>> = None;
    for i in 1..=levels {
        let next = smooth(&low, 1 << i, &k)?;
        let band = low.sub(&next)?;
        high = Some(match high {
            Some(h) => h.add(&band)?,
            None => band,
        });
        low = next;
    }
    Ok((low, high.expect("levels >= 1")))
}

/// The fixed inverse: low + high, elementwise.
pub fn recompose_fixed<T: Scalar>(low: &Tensor<T>, high: &Tensor<T>) -> Result<Tensor<T>> {
    low.add(high)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResizeReport {
    pub psnr_low: f64,
    pub psnr_high: f64,
}

/// How well each component survives downsampling by `factor` and bilinear
/// restoration, as mean PSNR against the original component.
pub fn resize_robustness_report<T: Scalar>(
    images: &[Tensor<T>],
    factor: f64,
    levels: usize,
) -> Result<ResizeReport> {
    if images.is_empty() {
        return Err(Error::InvalidArg {
            op: "resize_report",
            what: "empty image list",
        });
    }
    if !(factor > 0.0 && factor < 1.0) {
        return Err(Error::InvalidArg {
            op: "resize_report",
            what: "factor must be in (0, 1)",
        });
    }
    let mut sum_low = 0.0f64;
    let mut sum_high = 0.0f64;
    for img in images {
        let (low, high) = decompose(img, levels)?;
        let (h, w) = (img.dims()[2], img.dims()[3]);
        let dh = ((h as f64 * factor) as usize).max(1);
        let dw = ((w as f64 * factor) as usize).max(1);
        for (comp, sum) in [(&low, &mut sum_low), (&high, &mut sum_high)] {
            let restored = comp
                .interpolate_bilinear(dh, dw, false)?
                .interpolate_bilinear(h, w, false)?;
            *sum += psnr(comp, &restored, 1.0)?;
        }
    }
    let n = images.len() as f64;
    Ok(ResizeReport {
        psnr_low: sum_low / n,
        psnr_high: sum_high / n,
    })
}
