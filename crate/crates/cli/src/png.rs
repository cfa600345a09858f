//! PNG plumbing. Dataset images are 8-bit RGB in [0,1]. Frequency
//! components round-trip through 16-bit RGB so the split survives
//! quantization; the high component is offset-encoded (v/2 + 1/2) because
//! it is signed, with a sidecar recording the encoding.

use std::fs;
use std::path::Path;

use demoire_core::Tensor;
use image::{DynamicImage, ImageBuffer, Rgb};

use crate::{usage, CliError};

fn to_tensor(data: Vec<f32>, h: usize, w: usize) -> Result<Tensor<f32>, CliError> {
    Tensor::from_vec("png", data, &[1, 3, h, w]).map_err(CliError::compute)
}

/// 8-bit RGB loader for dataset images. Anything else — 16-bit, grayscale,
/// alpha — is refused so quantization semantics stay pinned.
pub fn load_png(path: &Path) -> Result<Tensor<f32>, CliError> {
    let img = image::open(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let rgb = match img {
        DynamicImage::ImageRgb8(buf) => buf,
        other => {
            return Err(usage(format!(
                "{}: expected 8-bit RGB, found {other:?}",
                path.display()
            )))
        }
    };
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let mut data = vec![0.0f32; 3 * h * w];
    for (x, y, px) in rgb.enumerate_pixels() {
        for c in 0..3 {
            data[c * h * w + y as usize * w + x as usize] = px.0[c] as f32 / 255.0;
        }
    }
    to_tensor(data, h, w)
}

fn plane_view(t: &Tensor<f32>) -> Result<(usize, usize), CliError> {
    if t.rank() != 4 || t.dims()[0] != 1 || t.dims()[1] != 3 {
        return Err(CliError::Compute(format!(
            "expected a [1,3,H,W] image, got {:?}",
            t.dims()
        )));
    }
    Ok((t.dims()[2], t.dims()[3]))
}

/// Clamp to [0,1] and quantize, rounding half away from zero.
pub fn save_png(t: &Tensor<f32>, path: &Path) -> Result<(), CliError> {
    let (h, w) = plane_view(t)?;
    let data = t.data();
    let mut buf: ImageBuffer<Rgb<u8>, Vec<u8>> = ImageBuffer::new(w as u32, h as u32);
    for (x, y, px) in buf.enumerate_pixels_mut() {
        for c in 0..3 {
            let v = data[c * h * w + y as usize * w + x as usize].clamp(0.0, 1.0);
            px.0[c] = (v * 255.0).round() as u8;
        }
    }
    buf.save(path)
        .map_err(|e| usage(format!("{}: {e}", path.display())))
}

pub fn save_png16(t: &Tensor<f32>, path: &Path) -> Result<(), CliError> {
    let (h, w) = plane_view(t)?;
    let data = t.data();
    let mut buf: ImageBuffer<Rgb<u16>, Vec<u16>> = ImageBuffer::new(w as u32, h as u32);
    for (x, y, px) in buf.enumerate_pixels_mut() {
        for c in 0..3 {
            let v = data[c * h * w + y as usize * w + x as usize].clamp(0.0, 1.0);
            px.0[c] = (v * 65535.0).round() as u16;
        }
    }
    buf.save(path)
        .map_err(|e| usage(format!("{}: {e}", path.display())))
}

pub fn load_png16(path: &Path) -> Result<Tensor<f32>, CliError> {
    let img = image::open(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let rgb = match img {
        DynamicImage::ImageRgb16(buf) => buf,
        other => {
            return Err(usage(format!(
                "{}: expected a 16-bit RGB component file, found {other:?}",
                path.display()
            )))
        }
    };
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let mut data = vec![0.0f32; 3 * h * w];
    for (x, y, px) in rgb.enumerate_pixels() {
        for c in 0..3 {
            data[c * h * w + y as usize * w + x as usize] = px.0[c] as f32 / 65535.0;
        }
    }
    to_tensor(data, h, w)
}

const HIGH_ENCODING: &str = "offset-half";

/// Signed high component -> [0,1] via v/2 + 1/2, written 16-bit, with a
/// sidecar naming the encoding and split depth so recompose can invert.
pub fn save_high_component(t: &Tensor<f32>, path: &Path, levels: usize) -> Result<(), CliError> {
    let encoded = t
        .mul_scalar(0.5)
        .and_then(|x| x.add_scalar(0.5))
        .map_err(CliError::compute)?;
    save_png16(&encoded, path)?;
    let meta = format!("encoding={HIGH_ENCODING}\nlevels={levels}\n");
    fs::write(sidecar_path(path), meta).map_err(|e| usage(format!("{}: {e}", path.display())))
}

pub fn load_high_component(path: &Path) -> Result<(Tensor<f32>, usize), CliError> {
    let meta_path = sidecar_path(path);
    let meta = fs::read_to_string(&meta_path)
        .map_err(|e| usage(format!("{}: {e} (is this a decompose output?)", meta_path.display())))?;
    let mut encoding = None;
    let mut levels = None;
    for line in meta.lines() {
        match line.split_once('=') {
            Some(("encoding", v)) => encoding = Some(v.to_string()),
            Some(("levels", v)) => levels = v.parse::<usize>().ok(),
            _ => {}
        }
    }
    if encoding.as_deref() != Some(HIGH_ENCODING) {
        return Err(usage(format!(
            "{}: unknown component encoding {encoding:?}",
            meta_path.display()
        )));
    }
    let levels = levels.ok_or_else(|| usage(format!("{}: missing levels", meta_path.display())))?;
    let decoded = load_png16(path)?
        .add_scalar(-0.5)
        .and_then(|x| x.mul_scalar(2.0))
        .map_err(CliError::compute)?;
    Ok((decoded, levels))
}

pub fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(".meta");
    std::path::PathBuf::from(s)
}
