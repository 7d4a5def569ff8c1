//! Luminance/chrominance color handling.
//!
//! Networks process only the luminance channel; chrominance is upsampled
//! with bicubic interpolation and recombined. Conversion uses BT.601 luma
//! weights with zero-centered chroma, so a gray pixel maps to
//! `(Y, 0, 0)`.

use crate::degrade::{classical_upsample, UpsampleMethod};
use crate::element::Element;
use crate::error::{Error, Result};
use crate::graph::NetworkGraph;
use crate::layers::concat_channels;
use crate::tensor::{Shape, Tensor};

const KR: f64 = 0.299;
const KG: f64 = 0.587;
const KB: f64 = 0.114;

/// Split `[1, 3, H, W]` RGB into zero-centered (Y, U, V) planes:
/// `Y = 0.299 R + 0.587 G + 0.114 B`, `U = (B - Y) / (2 (1 - KB))`,
/// `V = (R - Y) / (2 (1 - KR))`.
pub fn rgb_to_yuv<T: Element>(image: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (n, c, h, w) = image.shape().as_nchw()?;
    if n != 1 || c != 3 {
        return Err(Error::shape(format!("rgb_to_yuv expects [1,3,H,W], got {}", image.shape())));
    }
    let plane = h * w;
    let src = image.values();
    let mut y = Tensor::zeros(Shape::nchw(1, 1, h, w)?);
    let mut u = Tensor::zeros(Shape::nchw(1, 1, h, w)?);
    let mut v = Tensor::zeros(Shape::nchw(1, 1, h, w)?);
    for i in 0..plane {
        let r = src[i].as_f64();
        let g = src[plane + i].as_f64();
        let b = src[2 * plane + i].as_f64();
        let luma = KR * r + KG * g + KB * b;
        y.values_mut()[i] = T::from_f64_c(luma);
        u.values_mut()[i] = T::from_f64_c(0.5 * (b - luma) / (1.0 - KB));
        v.values_mut()[i] = T::from_f64_c(0.5 * (r - luma) / (1.0 - KR));
    }
    Ok((y, u, v))
}

/// Inverse of [`rgb_to_yuv`].
pub fn yuv_to_rgb<T: Element>(y: &Tensor<T>, u: &Tensor<T>, v: &Tensor<T>) -> Result<Tensor<T>> {
    if y.shape() != u.shape() || y.shape() != v.shape() {
        return Err(Error::shape("yuv_to_rgb: plane shapes differ"));
    }
    let (n, c, h, w) = y.shape().as_nchw()?;
    if n != 1 || c != 1 {
        return Err(Error::shape(format!("yuv_to_rgb expects [1,1,H,W] planes, got {}", y.shape())));
    }
    let plane = h * w;
    let mut out = Tensor::zeros(Shape::nchw(1, 3, h, w)?);
    for i in 0..plane {
        let luma = y.values()[i].as_f64();
        let cu = u.values()[i].as_f64();
        let cv = v.values()[i].as_f64();
        let r = luma + 2.0 * (1.0 - KR) * cv;
        let b = luma + 2.0 * (1.0 - KB) * cu;
        let g = (luma - KR * r - KB * b) / KG;
        out.values_mut()[i] = T::from_f64_c(r);
        out.values_mut()[plane + i] = T::from_f64_c(g);
        out.values_mut()[2 * plane + i] = T::from_f64_c(b);
    }
    Ok(out)
}

/// Color upsampling path: luminance through the network, chrominance
/// through bicubic interpolation, recombined to `[1, 3, dH, dW]`.
pub fn upsample_color<T: Element>(
    model: &NetworkGraph<T>,
    rgb_lr: &Tensor<T>,
) -> Result<Tensor<T>> {
    let d = model.descriptor.d as usize;
    if d == 0 {
        return Err(Error::invalid(format!(
            "builder '{}' is not an upsampler",
            model.descriptor.builder
        )));
    }
    let (y, u, v) = rgb_to_yuv(rgb_lr)?;
    let y_hr = model.forward(&y)?;
    let u_hr = classical_upsample(&u, d, UpsampleMethod::Bicubic)?;
    let v_hr = classical_upsample(&v, d, UpsampleMethod::Bicubic)?;
    yuv_to_rgb(&y_hr, &u_hr, &v_hr)
}

/// Stack (Y, U, V) planes back into one 3-channel tensor; occasionally
/// handy for debugging dumps.
pub fn stack_planes<T: Element>(y: &Tensor<T>, u: &Tensor<T>, v: &Tensor<T>) -> Result<Tensor<T>> {
    concat_channels(&concat_channels(y, u)?, v)
}
