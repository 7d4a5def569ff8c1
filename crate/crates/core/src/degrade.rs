//! The observation model relating high- and low-resolution images
//! (Gaussian low-pass filtering followed by decimation), realizable both
//! as a separable filter pipeline and as an explicit sparse matrix, plus
//! classical upsamplers and iterative back-projection.
//!
//! All functions here are pure and safe to call concurrently. Internally
//! they accumulate in f64 regardless of the tensor element type; these
//! paths prepare data and cross-check operators, they are not the
//! training hot loop.

use crate::element::Element;
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Blur-plus-decimation operator: Gaussian std-dev `sigma` (pixels),
/// integer factor `factor`, taps truncated at `kernel_radius` and
/// renormalized so they always sum to one (also at image edges).
#[derive(Debug, Clone, PartialEq)]
pub struct DegradationOperator {
    pub sigma: f64,
    pub factor: usize,
    pub kernel_radius: usize,
}

impl DegradationOperator {
    /// Radius defaults to ceil(3 sigma), which keeps the truncated mass
    /// below 0.3%.
    pub fn new(factor: usize, sigma: f64) -> Result<Self> {
        if !matches!(factor, 4 | 8) {
            return Err(Error::invalid(format!("decimation factor must be 4 or 8, got {factor}")));
        }
        if sigma.is_nan() || sigma <= 0.0 || !sigma.is_finite() {
            return Err(Error::invalid(format!("sigma must be positive, got {sigma}")));
        }
        Ok(DegradationOperator {
            sigma,
            factor,
            kernel_radius: (3.0 * sigma).ceil() as usize,
        })
    }

    /// Default blur widths: sigma 1.2 for 4x, 2.4 for 8x.
    pub fn with_default_sigma(factor: usize) -> Result<Self> {
        let sigma = match factor {
            4 => 1.2,
            8 => 2.4,
            other => {
                return Err(Error::invalid(format!(
                    "no default sigma for factor {other}"
                )))
            }
        };
        DegradationOperator::new(factor, sigma)
    }

    /// Decimation grid offset: floor(d/2), centering the sampling grid.
    pub fn phase_offset(&self) -> usize {
        self.factor / 2
    }

    /// Truncated Gaussian taps for offsets `-radius ..= radius`,
    /// normalized to sum 1.
    pub fn taps(&self) -> Vec<f64> {
        let r = self.kernel_radius as isize;
        let denom = 2.0 * self.sigma * self.sigma;
        let raw: Vec<f64> = (-r..=r)
            .map(|t| (-(t * t) as f64 / denom).exp())
            .collect();
        let sum: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / sum).collect()
    }
}

/// 1D renormalized-edge Gaussian tap weights for output position `center`
/// on an axis of length `n`: taps falling outside the axis are dropped
/// and the rest rescaled to sum 1. Returns (first source index, weights).
fn edge_taps(taps: &[f64], center: usize, n: usize) -> (usize, Vec<f64>) {
    let r = taps.len() / 2;
    let lo = center.saturating_sub(r);
    let hi = (center + r).min(n - 1);
    let slice: Vec<f64> = (lo..=hi).map(|i| taps[i + r - center]).collect();
    let sum: f64 = slice.iter().sum();
    (lo, slice.into_iter().map(|v| v / sum).collect())
}

fn blur_axis(src: &[f64], n_rows: usize, n_cols: usize, taps: &[f64], horizontal: bool) -> Vec<f64> {
    let mut out = vec![0.0; src.len()];
    if horizontal {
        for row in 0..n_rows {
            for col in 0..n_cols {
                let (lo, w) = edge_taps(taps, col, n_cols);
                let mut acc = 0.0;
                for (k, wv) in w.iter().enumerate() {
                    acc += wv * src[row * n_cols + lo + k];
                }
                out[row * n_cols + col] = acc;
            }
        }
    } else {
        for row in 0..n_rows {
            let (lo, w) = edge_taps(taps, row, n_rows);
            for col in 0..n_cols {
                let mut acc = 0.0;
                for (k, wv) in w.iter().enumerate() {
                    acc += wv * src[(lo + k) * n_cols + col];
                }
                out[row * n_cols + col] = acc;
            }
        }
    }
    out
}

/// Apply the observation model: separable Gaussian blur, then keep every
/// `d`-th pixel starting at offset floor(d/2). Single-channel images with
/// spatial dims divisible by `d`.
pub fn degrade<T: Element>(image: &Tensor<T>, op: &DegradationOperator) -> Result<Tensor<T>> {
    let (n, c, h, w) = image.shape().as_nchw()?;
    if c != 1 {
        return Err(Error::shape(format!("degrade expects a single channel, got {c}")));
    }
    let d = op.factor;
    if !h.is_multiple_of(d) || !w.is_multiple_of(d) {
        return Err(Error::shape(format!("degrade: {h}x{w} not divisible by d={d}")));
    }
    let (oh, ow) = (h / d, w / d);
    let off = op.phase_offset();
    let taps = op.taps();
    let mut out = Tensor::zeros(Shape::nchw(n, 1, oh, ow)?);
    for b in 0..n {
        let plane: Vec<f64> = image.values()[b * h * w..(b + 1) * h * w]
            .iter()
            .map(|v| v.as_f64())
            .collect();
        let blurred = blur_axis(&blur_axis(&plane, h, w, &taps, true), h, w, &taps, false);
        let dst = &mut out.values_mut()[b * oh * ow..(b + 1) * oh * ow];
        for y in 0..oh {
            for x in 0..ow {
                dst[y * ow + x] = T::from_f64_c(blurred[(off + d * y) * w + (off + d * x)]);
            }
        }
    }
    Ok(out)
}

/// Compressed sparse rows; each row reproduces one low-resolution pixel
/// of [`degrade`] as a dot product against the flattened image.
#[derive(Debug, Clone)]
pub struct SparseMatrix {
    pub rows: usize,
    pub cols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl SparseMatrix {
    pub fn row_sum(&self, row: usize) -> f64 {
        self.values[self.row_ptr[row]..self.row_ptr[row + 1]].iter().sum()
    }

    pub fn row_support(&self, row: usize) -> usize {
        self.row_ptr[row + 1] - self.row_ptr[row]
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::shape(format!(
                "sparse matvec: {} columns vs vector of {}",
                self.cols,
                x.len()
            )));
        }
        let mut out = vec![0.0; self.rows];
        for (row, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in self.row_ptr[row]..self.row_ptr[row + 1] {
                acc += self.values[k] * x[self.col_idx[k]];
            }
            *o = acc;
        }
        Ok(out)
    }
}

/// Materialize the observation operator for an `h x w` image as an
/// `(h/d * w/d) x (h*w)` sparse matrix. Rows are outer products of the
/// edge-renormalized vertical and horizontal taps, so each row sums to 1.
pub fn build_k_matrix(op: &DegradationOperator, h: usize, w: usize) -> Result<SparseMatrix> {
    let d = op.factor;
    if !h.is_multiple_of(d) || !w.is_multiple_of(d) {
        return Err(Error::shape(format!("build_k_matrix: {h}x{w} not divisible by d={d}")));
    }
    let (oh, ow) = (h / d, w / d);
    let off = op.phase_offset();
    let taps = op.taps();
    let mut row_ptr = Vec::with_capacity(oh * ow + 1);
    let mut col_idx = Vec::new();
    let mut values = Vec::new();
    row_ptr.push(0);
    for y in 0..oh {
        let (vy0, wv) = edge_taps(&taps, off + d * y, h);
        for x in 0..ow {
            let (hx0, wh) = edge_taps(&taps, off + d * x, w);
            for (i, a) in wv.iter().enumerate() {
                for (j, b) in wh.iter().enumerate() {
                    col_idx.push((vy0 + i) * w + (hx0 + j));
                    values.push(a * b);
                }
            }
            row_ptr.push(col_idx.len());
        }
    }
    Ok(SparseMatrix { rows: oh * ow, cols: h * w, row_ptr, col_idx, values })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpsampleMethod {
    Nearest,
    Bilinear,
    /// Catmull-Rom cubic (a = -0.5).
    Bicubic,
}

impl std::str::FromStr for UpsampleMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nearest" => Ok(UpsampleMethod::Nearest),
            "bilinear" => Ok(UpsampleMethod::Bilinear),
            "bicubic" => Ok(UpsampleMethod::Bicubic),
            other => Err(Error::Parse(format!("unknown upsample method '{other}'"))),
        }
    }
}

fn cubic_weight(t: f64) -> f64 {
    // Catmull-Rom: (a+2)|t|^3 - (a+3)|t|^2 + 1 inside the unit interval,
    // a(|t|^3 - 5|t|^2 + 8|t| - 4) out to 2, with a = -0.5.
    let a = -0.5;
    let t = t.abs();
    if t <= 1.0 {
        (a + 2.0) * t * t * t - (a + 3.0) * t * t + 1.0
    } else if t < 2.0 {
        a * (t * t * t - 5.0 * t * t + 8.0 * t - 4.0)
    } else {
        0.0
    }
}

/// Classical `d`-times enlargement. Source coordinates use half-pixel
/// centers (`src = (dst + 0.5)/d - 0.5`) with edge-clamped sampling.
pub fn classical_upsample<T: Element>(
    image: &Tensor<T>,
    d: usize,
    method: UpsampleMethod,
) -> Result<Tensor<T>> {
    let (n, c, h, w) = image.shape().as_nchw()?;
    if d == 0 {
        return Err(Error::invalid("upsample factor must be positive"));
    }
    let (oh, ow) = (h * d, w * d);
    let mut out = Tensor::zeros(Shape::nchw(n, c, oh, ow)?);
    for plane in 0..n * c {
        let src: Vec<f64> = image.values()[plane * h * w..(plane + 1) * h * w]
            .iter()
            .map(|v| v.as_f64())
            .collect();
        let at = |y: isize, x: isize| -> f64 {
            let y = y.clamp(0, h as isize - 1) as usize;
            let x = x.clamp(0, w as isize - 1) as usize;
            src[y * w + x]
        };
        let dst = &mut out.values_mut()[plane * oh * ow..(plane + 1) * oh * ow];
        for oy in 0..oh {
            for ox in 0..ow {
                let v = match method {
                    UpsampleMethod::Nearest => at((oy / d) as isize, (ox / d) as isize),
                    UpsampleMethod::Bilinear => {
                        let sy = (oy as f64 + 0.5) / d as f64 - 0.5;
                        let sx = (ox as f64 + 0.5) / d as f64 - 0.5;
                        let (y0, x0) = (sy.floor(), sx.floor());
                        let (fy, fx) = (sy - y0, sx - x0);
                        let (y0, x0) = (y0 as isize, x0 as isize);
                        (1.0 - fy) * ((1.0 - fx) * at(y0, x0) + fx * at(y0, x0 + 1))
                            + fy * ((1.0 - fx) * at(y0 + 1, x0) + fx * at(y0 + 1, x0 + 1))
                    }
                    UpsampleMethod::Bicubic => {
                        let sy = (oy as f64 + 0.5) / d as f64 - 0.5;
                        let sx = (ox as f64 + 0.5) / d as f64 - 0.5;
                        let (y0, x0) = (sy.floor() as isize, sx.floor() as isize);
                        let mut acc = 0.0;
                        for i in -1..=2 {
                            let wy = cubic_weight(sy - (y0 + i) as f64);
                            if wy == 0.0 {
                                continue;
                            }
                            for j in -1..=2 {
                                let wx = cubic_weight(sx - (x0 + j) as f64);
                                acc += wy * wx * at(y0 + i, x0 + j);
                            }
                        }
                        acc
                    }
                };
                dst[oy * ow + ox] = T::from_f64_c(v);
            }
        }
    }
    Ok(out)
}

/// Iterative back-projection: `x <- x + step * U(observed - degrade(x))`
/// with `U` the bilinear upsampler. Provided for consistency experiments;
/// it is not part of the default inference path.
pub fn back_project<T: Element>(
    estimate: &Tensor<T>,
    observed_lr: &Tensor<T>,
    op: &DegradationOperator,
    iters: usize,
    step: f64,
) -> Result<Tensor<T>> {
    let mut x = estimate.clone();
    for iter in 0..iters {
        let residual = observed_lr.sub(&degrade(&x, op)?)?;
        let correction = classical_upsample(&residual, op.factor, UpsampleMethod::Bilinear)?;
        x = x.add(&correction.scale(T::from_f64_c(step)))?;
        if !x.is_finite() {
            return Err(Error::NonFinite(format!(
                "back-projection produced a non-finite estimate at iteration {iter}"
            )));
        }
    }
    Ok(x)
}
