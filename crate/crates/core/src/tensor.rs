//! Dense tensor storage and the elementwise/linear primitives layers are
//! built on.
//!
//! Tensors are rank 1..=4 with row-major layout; rank-4 tensors are
//! interpreted as NCHW (batch, channels, height, width) with W fastest,
//! which keeps the convolution inner loops contiguous. Tensors are
//! immutable once returned from an operation and safe to share across
//! threads for reading.

use crate::element::Element;
use crate::error::{Error, Result};
use crate::rng::SplitMix64;

/// Shape of a tensor: between 1 and 4 positive extents.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Shape {
    extents: Vec<usize>,
}

impl Shape {
    pub fn new(extents: impl Into<Vec<usize>>) -> Result<Self> {
        let extents = extents.into();
        if extents.is_empty() || extents.len() > 4 {
            return Err(Error::shape(format!(
                "rank must be 1..=4, got {}",
                extents.len()
            )));
        }
        if extents.contains(&0) {
            return Err(Error::shape(format!("zero extent in {extents:?}")));
        }
        Ok(Shape { extents })
    }

    /// Rank-4 NCHW shape.
    pub fn nchw(n: usize, c: usize, h: usize, w: usize) -> Result<Self> {
        Shape::new(vec![n, c, h, w])
    }

    pub fn vector(len: usize) -> Result<Self> {
        Shape::new(vec![len])
    }

    pub fn dims(&self) -> &[usize] {
        &self.extents
    }

    pub fn rank(&self) -> usize {
        self.extents.len()
    }

    pub fn numel(&self) -> usize {
        self.extents.iter().product()
    }

    /// Interpret as NCHW; errors unless rank is exactly 4.
    pub fn as_nchw(&self) -> Result<(usize, usize, usize, usize)> {
        if self.rank() != 4 {
            return Err(Error::shape(format!(
                "expected rank-4 NCHW tensor, got rank {}",
                self.rank()
            )));
        }
        Ok((
            self.extents[0],
            self.extents[1],
            self.extents[2],
            self.extents[3],
        ))
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.extents.iter().map(|e| e.to_string()).collect();
        write!(f, "{}", parts.join("x"))
    }
}

/// How to fill a freshly created tensor.
#[derive(Debug, Clone)]
pub enum FillRule<T> {
    Zeros,
    Constant(T),
    /// Uniform in `[lo, hi)` from a SplitMix64 stream seeded with `seed`,
    /// elements drawn in row-major order.
    Uniform { lo: f64, hi: f64, seed: u64 },
    FromValues(Vec<T>),
}

/// Dense rank-<=4 real array.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Element> Tensor<T> {
    /// Create a tensor of `shape` filled per `rule`. Deterministic for a
    /// given seed; value count must match the shape for `FromValues`.
    pub fn create(shape: Shape, rule: FillRule<T>) -> Result<Self> {
        let n = shape.numel();
        let data = match rule {
            FillRule::Zeros => vec![T::zero(); n],
            FillRule::Constant(c) => vec![c; n],
            FillRule::Uniform { lo, hi, seed } => {
                let mut rng = SplitMix64::new(seed);
                (0..n).map(|_| rng.uniform(lo, hi)).collect()
            }
            FillRule::FromValues(values) => {
                if values.len() != n {
                    return Err(Error::shape(format!(
                        "shape {shape} expects {n} values, got {}",
                        values.len()
                    )));
                }
                values
            }
        };
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Shape) -> Self {
        let n = shape.numel();
        Tensor {
            shape,
            data: vec![T::zero(); n],
        }
    }

    pub fn from_values(shape: Shape, values: Vec<T>) -> Result<Self> {
        Tensor::create(shape, FillRule::FromValues(values))
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn values(&self) -> &[T] {
        &self.data
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    /// Same data, different shape; extent product must match.
    pub fn reshape(&self, shape: Shape) -> Result<Self> {
        if shape.numel() != self.numel() {
            return Err(Error::shape(format!(
                "cannot reshape {} ({} values) to {} ({} values)",
                self.shape,
                self.numel(),
                shape,
                shape.numel()
            )));
        }
        Ok(Tensor {
            shape,
            data: self.data.clone(),
        })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    pub fn add(&self, other: &Tensor<T>) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::shape(format!(
                "add: {} vs {}",
                self.shape, other.shape
            )));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| a + b)
                .collect(),
        })
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::shape(format!(
                "sub: {} vs {}",
                self.shape, other.shape
            )));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| a - b)
                .collect(),
        })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Sum of squared values, accumulated in f64.
    pub fn sum_squares(&self) -> f64 {
        self.data.iter().map(|v| v.as_f64() * v.as_f64()).sum()
    }

    /// Convert elementwise to another precision.
    pub fn cast<U: Element>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64_c(v.as_f64())).collect(),
        }
    }
}

/// `out[i] = sum_j weights[i,j] * input[j] + bias[i]`.
///
/// `weights` is rank-2 `[out, in]`, `input` and `bias` rank-1.
pub fn matvec<T: Element>(weights: &Tensor<T>, input: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let wd = weights.shape().dims();
    if weights.shape().rank() != 2 {
        return Err(Error::shape("matvec: weights must be rank 2"));
    }
    let (out_dim, in_dim) = (wd[0], wd[1]);
    if input.shape().rank() != 1 || input.numel() != in_dim {
        return Err(Error::shape(format!(
            "matvec: input {} does not match weights {}",
            input.shape(),
            weights.shape()
        )));
    }
    if bias.shape().rank() != 1 || bias.numel() != out_dim {
        return Err(Error::shape(format!(
            "matvec: bias {} does not match weights {}",
            bias.shape(),
            weights.shape()
        )));
    }
    let x = input.values();
    let w = weights.values();
    let mut out = Vec::with_capacity(out_dim);
    for i in 0..out_dim {
        out.push(bias.values()[i] + dot(&w[i * in_dim..(i + 1) * in_dim], x));
    }
    Tensor::from_values(Shape::vector(out_dim)?, out)
}

/// Dot product with eight independent accumulators so the loop
/// vectorizes; the summation order is fixed, so results are deterministic.
#[inline]
pub(crate) fn dot<T: Element>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len();
    let chunks = n / 8;
    let mut lane = [T::zero(); 8];
    for t in 0..chunks {
        let a8 = &a[t * 8..t * 8 + 8];
        let b8 = &b[t * 8..t * 8 + 8];
        for l in 0..8 {
            lane[l] = lane[l] + a8[l] * b8[l];
        }
    }
    let mut s = ((lane[0] + lane[4]) + (lane[1] + lane[5])) + ((lane[2] + lane[6]) + (lane[3] + lane[7]));
    for i in chunks * 8..n {
        s = s + a[i] * b[i];
    }
    s
}

/// `dst[x] += s * src[x]` over a row; the forward-convolution inner loop.
#[inline]
pub(crate) fn axpy<T: Element>(s: T, src: &[T], dst: &mut [T]) {
    debug_assert_eq!(src.len(), dst.len());
    for (d, &v) in dst.iter_mut().zip(src) {
        *d = *d + s * v;
    }
}

/// Zero-pad the two spatial dims of an NCHW tensor by `pad_h`/`pad_w`
/// per side; the interior equals the input.
pub fn pad2d<T: Element>(input: &Tensor<T>, pad_h: usize, pad_w: usize) -> Result<Tensor<T>> {
    let (n, c, h, w) = input.shape().as_nchw()?;
    if pad_h == 0 && pad_w == 0 {
        return Ok(input.clone());
    }
    let (hp, wp) = (h + 2 * pad_h, w + 2 * pad_w);
    let mut out = Tensor::zeros(Shape::nchw(n, c, hp, wp)?);
    let src = input.values();
    let dst = out.values_mut();
    for nc in 0..n * c {
        for y in 0..h {
            let s = (nc * h + y) * w;
            let d = (nc * hp + y + pad_h) * wp + pad_w;
            dst[d..d + w].copy_from_slice(&src[s..s + w]);
        }
    }
    Ok(out)
}

/// Remove `pad_h`/`pad_w` pixels from each side; inverse of [`pad2d`].
pub fn crop2d<T: Element>(input: &Tensor<T>, pad_h: usize, pad_w: usize) -> Result<Tensor<T>> {
    let (n, c, hp, wp) = input.shape().as_nchw()?;
    if hp <= 2 * pad_h || wp <= 2 * pad_w {
        return Err(Error::shape(format!(
            "crop2d: margins ({pad_h},{pad_w}) exceed {hp}x{wp}"
        )));
    }
    let (h, w) = (hp - 2 * pad_h, wp - 2 * pad_w);
    let mut out = Tensor::zeros(Shape::nchw(n, c, h, w)?);
    let src = input.values();
    let dst = out.values_mut();
    for nc in 0..n * c {
        for y in 0..h {
            let s = (nc * hp + y + pad_h) * wp + pad_w;
            let d = (nc * h + y) * w;
            dst[d..d + w].copy_from_slice(&src[s..s + w]);
        }
    }
    Ok(out)
}
