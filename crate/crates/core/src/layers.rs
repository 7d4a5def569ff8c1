//! Layer vocabulary: forward and backward passes for convolution,
//! transposed convolution, fully-connected, ReLU, 2x2 max-pooling, channel
//! concatenation, and two-way softmax.
//!
//! Convolutions are evaluated as explicit direct loops; the inner loop
//! always runs over contiguous rows (W fastest) so it vectorizes. Backward
//! passes accumulate parameter gradients into the layer state and return
//! the gradient with respect to the layer input. Every summation order is
//! fixed, so results are deterministic for a fixed input.

// Indexed loops are deliberate here: the kernels are written so the
// innermost loop runs over contiguous rows and vectorizes.
#![allow(clippy::needless_range_loop, clippy::too_many_arguments)]

use crate::element::Element;
use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::tensor::{axpy, dot, pad2d, Shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv,
    Deconv,
    FullyConnected,
    Relu,
    MaxPool,
    Concat,
    Softmax2,
}

impl LayerKind {
    pub fn tag(self) -> u8 {
        match self {
            LayerKind::Conv => 0,
            LayerKind::Deconv => 1,
            LayerKind::FullyConnected => 2,
            LayerKind::Relu => 3,
            LayerKind::MaxPool => 4,
            LayerKind::Concat => 5,
            LayerKind::Softmax2 => 6,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        Ok(match tag {
            0 => LayerKind::Conv,
            1 => LayerKind::Deconv,
            2 => LayerKind::FullyConnected,
            3 => LayerKind::Relu,
            4 => LayerKind::MaxPool,
            5 => LayerKind::Concat,
            6 => LayerKind::Softmax2,
            other => return Err(Error::Parse(format!("unknown layer kind tag {other}"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightInit {
    /// Transposed-convolution weights that reproduce bilinear interpolation.
    Bilinear,
    /// Uniform in +/- sqrt(6 / (fan_in + fan_out)), biases zero.
    UniformScaled,
    Zeros,
}

/// Declarative description of one layer.
///
/// For fully-connected layers `in_channels`/`out_channels` hold the input
/// and output dimensions and the spatial fields are unused.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub kernel: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    pub pad: usize,
    pub weight_init: WeightInit,
    /// Frozen layers keep their parameters fixed during training and are
    /// excluded from trainable parameter counts (used by the LN-Only
    /// variant's bilinear front end).
    pub frozen: bool,
}

impl LayerSpec {
    /// Stride-1 convolution with same-size zero padding of floor(k/2).
    pub fn conv(kernel: usize, in_channels: usize, out_channels: usize) -> Self {
        LayerSpec {
            kind: LayerKind::Conv,
            kernel,
            in_channels,
            out_channels,
            stride: 1,
            pad: kernel / 2,
            weight_init: WeightInit::UniformScaled,
            frozen: false,
        }
    }

    /// Transposed convolution with the standard geometry for which a
    /// bilinear kernel reproduces bilinear d-times interpolation:
    /// kernel 2d, stride d, pad d/2.
    pub fn deconv(factor: usize, in_channels: usize, out_channels: usize) -> Self {
        LayerSpec {
            kind: LayerKind::Deconv,
            kernel: 2 * factor,
            in_channels,
            out_channels,
            stride: factor,
            pad: factor / 2,
            weight_init: WeightInit::Bilinear,
            frozen: false,
        }
    }

    pub fn fully_connected(in_dim: usize, out_dim: usize) -> Self {
        LayerSpec {
            kind: LayerKind::FullyConnected,
            kernel: 0,
            in_channels: in_dim,
            out_channels: out_dim,
            stride: 1,
            pad: 0,
            weight_init: WeightInit::UniformScaled,
            frozen: false,
        }
    }

    pub fn relu() -> Self {
        LayerSpec::parameterless(LayerKind::Relu)
    }

    /// 2x2 max pooling with stride 2.
    pub fn maxpool() -> Self {
        LayerSpec {
            kind: LayerKind::MaxPool,
            kernel: 2,
            in_channels: 0,
            out_channels: 0,
            stride: 2,
            pad: 0,
            weight_init: WeightInit::Zeros,
            frozen: false,
        }
    }

    pub fn concat() -> Self {
        LayerSpec::parameterless(LayerKind::Concat)
    }

    pub fn softmax2() -> Self {
        LayerSpec::parameterless(LayerKind::Softmax2)
    }

    fn parameterless(kind: LayerKind) -> Self {
        LayerSpec {
            kind,
            kernel: 0,
            in_channels: 0,
            out_channels: 0,
            stride: 1,
            pad: 0,
            weight_init: WeightInit::Zeros,
            frozen: false,
        }
    }

    pub fn has_params(&self) -> bool {
        matches!(
            self.kind,
            LayerKind::Conv | LayerKind::Deconv | LayerKind::FullyConnected
        )
    }
}

/// Weights, biases, and the matching gradient and momentum buffers.
/// Shapes of all six tensors agree pairwise by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<T> {
    pub weights: Tensor<T>,
    pub biases: Tensor<T>,
    pub grad_w: Tensor<T>,
    pub grad_b: Tensor<T>,
    pub vel_w: Tensor<T>,
    pub vel_b: Tensor<T>,
}

impl<T: Element> ParamSet<T> {
    fn new(weights: Tensor<T>, biases: Tensor<T>) -> Self {
        let grad_w = Tensor::zeros(weights.shape().clone());
        let grad_b = Tensor::zeros(biases.shape().clone());
        let vel_w = Tensor::zeros(weights.shape().clone());
        let vel_b = Tensor::zeros(biases.shape().clone());
        ParamSet { weights, biases, grad_w, grad_b, vel_w, vel_b }
    }

    pub fn zero_grads(&mut self) {
        self.grad_w.values_mut().fill(T::zero());
        self.grad_b.values_mut().fill(T::zero());
    }

    pub fn param_count(&self) -> usize {
        self.weights.numel() + self.biases.numel()
    }
}

/// Per-layer parameter state; `None` for parameterless kinds.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerState<T> {
    pub params: Option<ParamSet<T>>,
}

impl<T: Element> LayerState<T> {
    /// Initialize parameters for `spec`, drawing from `rng` in a fixed
    /// (weights row-major, then biases) order.
    pub fn init(spec: &LayerSpec, rng: &mut SplitMix64) -> Result<Self> {
        if !spec.has_params() {
            return Ok(LayerState { params: None });
        }
        let k = spec.kernel;
        let (wshape, fan_in, fan_out) = match spec.kind {
            LayerKind::Conv => (
                Shape::new(vec![spec.out_channels, spec.in_channels, k, k])?,
                spec.in_channels * k * k,
                spec.out_channels * k * k,
            ),
            // Transposed convolution stores weights as [in, out, k, k].
            LayerKind::Deconv => (
                Shape::new(vec![spec.in_channels, spec.out_channels, k, k])?,
                spec.in_channels * k * k,
                spec.out_channels * k * k,
            ),
            LayerKind::FullyConnected => (
                Shape::new(vec![spec.out_channels, spec.in_channels])?,
                spec.in_channels,
                spec.out_channels,
            ),
            _ => unreachable!(),
        };
        let weights = match spec.weight_init {
            WeightInit::Zeros => Tensor::zeros(wshape),
            WeightInit::UniformScaled => {
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let mut w = Tensor::zeros(wshape);
                for v in w.values_mut() {
                    *v = rng.uniform(-bound, bound);
                }
                w
            }
            WeightInit::Bilinear => {
                if spec.kind != LayerKind::Deconv {
                    return Err(Error::invalid(
                        "bilinear init only applies to deconv layers",
                    ));
                }
                bilinear_deconv_weights(spec)?
            }
        };
        let biases = Tensor::zeros(Shape::vector(spec.out_channels)?);
        Ok(LayerState { params: Some(ParamSet::new(weights, biases)) })
    }

    pub fn params(&self) -> Result<&ParamSet<T>> {
        self.params
            .as_ref()
            .ok_or_else(|| Error::invalid("layer has no parameters"))
    }

    pub fn params_mut(&mut self) -> Result<&mut ParamSet<T>> {
        self.params
            .as_mut()
            .ok_or_else(|| Error::invalid("layer has no parameters"))
    }
}

/// Bilinear-interpolation weights for a transposed convolution with
/// kernel 2d, stride d, pad d/2: `w[t] = 1 - |t - (d - 0.5)| / d` per
/// axis, identity across channels.
fn bilinear_deconv_weights<T: Element>(spec: &LayerSpec) -> Result<Tensor<T>> {
    let d = spec.stride;
    let k = spec.kernel;
    let taps: Vec<f64> = (0..k)
        .map(|t| 1.0 - ((t as f64) - (d as f64 - 0.5)).abs() / d as f64)
        .collect();
    let mut w = Tensor::zeros(Shape::new(vec![spec.in_channels, spec.out_channels, k, k])?);
    let vals = w.values_mut();
    for c in 0..spec.in_channels.min(spec.out_channels) {
        for i in 0..k {
            for j in 0..k {
                vals[((c * spec.out_channels + c) * k + i) * k + j] =
                    T::from_f64_c(taps[i] * taps[j]);
            }
        }
    }
    Ok(w)
}

// ---------------------------------------------------------------------------
// Convolution (stride 1, same-size padding)
// ---------------------------------------------------------------------------

/// Shared direct-loop kernel: correlate `src` (padded, `[n, cin, hp, wp]`)
/// with `wts` (`[cout, cin, k, k]`), accumulating into `dst`
/// (`[n, cout, h, w]`). `dst` must be pre-filled (bias or zeros).
fn conv_core<T: Element>(
    src: &[T],
    n: usize,
    cin: usize,
    hp: usize,
    wp: usize,
    wts: &[T],
    cout: usize,
    k: usize,
    dst: &mut [T],
    h: usize,
    w: usize,
) {
    for b in 0..n {
        for o in 0..cout {
            let out_base = (b * cout + o) * h * w;
            for c in 0..cin {
                let src_base = (b * cin + c) * hp * wp;
                for i in 0..k {
                    for j in 0..k {
                        let wv = wts[((o * cin + c) * k + i) * k + j];
                        for y in 0..h {
                            let s = src_base + (y + i) * wp + j;
                            let d = out_base + y * w;
                            axpy(wv, &src[s..s + w], &mut dst[d..d + w]);
                        }
                    }
                }
            }
        }
    }
}

fn check_conv_spec(spec: &LayerSpec, c: usize) -> Result<()> {
    if spec.kind != LayerKind::Conv {
        return Err(Error::invalid("conv2d on a non-conv layer"));
    }
    if c != spec.in_channels {
        return Err(Error::shape(format!(
            "conv2d: input has {c} channels, spec expects {}",
            spec.in_channels
        )));
    }
    if spec.stride != 1 || spec.pad != spec.kernel / 2 {
        return Err(Error::invalid(format!(
            "conv2d requires stride 1 and pad floor(k/2), got stride {} pad {}",
            spec.stride, spec.pad
        )));
    }
    Ok(())
}

/// Same-size convolution: `out[o,y,x] = bias[o] + sum w[o,c,i,j] * in_pad[c,y+i,x+j]`.
pub fn conv2d_forward<T: Element>(
    input: &Tensor<T>,
    spec: &LayerSpec,
    state: &LayerState<T>,
) -> Result<Tensor<T>> {
    let (n, c, h, w) = input.shape().as_nchw()?;
    check_conv_spec(spec, c)?;
    let params = state.params()?;
    let k = spec.kernel;
    let pad = spec.pad;
    let padded = pad2d(input, pad, pad)?;
    let (hp, wp) = (h + 2 * pad, w + 2 * pad);
    let oc = spec.out_channels;
    let mut out = Tensor::zeros(Shape::nchw(n, oc, h, w)?);
    {
        let bias = params.biases.values();
        let dst = out.values_mut();
        for b in 0..n {
            for o in 0..oc {
                dst[(b * oc + o) * h * w..(b * oc + o + 1) * h * w].fill(bias[o]);
            }
        }
    }
    conv_core(
        padded.values(),
        n,
        c,
        hp,
        wp,
        params.weights.values(),
        oc,
        k,
        out.values_mut(),
        h,
        w,
    );
    Ok(out)
}

/// Backward pass of [`conv2d_forward`]: accumulates weight/bias gradients
/// into `state` and returns the gradient with respect to the input.
pub fn conv2d_backward<T: Element>(
    grad_out: &Tensor<T>,
    saved_input: &Tensor<T>,
    spec: &LayerSpec,
    state: &mut LayerState<T>,
) -> Result<Tensor<T>> {
    let (n, c, h, w) = saved_input.shape().as_nchw()?;
    check_conv_spec(spec, c)?;
    let oc = spec.out_channels;
    let k = spec.kernel;
    let pad = spec.pad;
    if grad_out.shape().dims() != [n, oc, h, w] {
        return Err(Error::shape(format!(
            "conv2d_backward: grad_out {} does not match output {}x{}x{}x{}",
            grad_out.shape(),
            n,
            oc,
            h,
            w
        )));
    }
    let padded = pad2d(saved_input, pad, pad)?;
    let (hp, wp) = (h + 2 * pad, w + 2 * pad);
    let params = state.params_mut()?;
    let go = grad_out.values();
    let src = padded.values();

    // Bias gradient: per-channel sum of grad_out.
    {
        let gb = params.grad_b.values_mut();
        for b in 0..n {
            for o in 0..oc {
                let base = (b * oc + o) * h * w;
                let mut acc = T::zero();
                for row in go[base..base + h * w].chunks_exact(w) {
                    acc = acc + row.iter().fold(T::zero(), |s, &v| s + v);
                }
                gb[o] = gb[o] + acc;
            }
        }
    }

    // Weight gradient: correlation of the padded input with grad_out.
    {
        let gw = params.grad_w.values_mut();
        for b in 0..n {
            for o in 0..oc {
                let go_base = (b * oc + o) * h * w;
                for ci in 0..c {
                    let src_base = (b * c + ci) * hp * wp;
                    for i in 0..k {
                        for j in 0..k {
                            let mut acc = T::zero();
                            for y in 0..h {
                                let s = src_base + (y + i) * wp + j;
                                acc = acc + dot(&go[go_base + y * w..go_base + (y + 1) * w], &src[s..s + w]);
                            }
                            let idx = ((o * c + ci) * k + i) * k + j;
                            gw[idx] = gw[idx] + acc;
                        }
                    }
                }
            }
        }
    }

    // Input gradient: full correlation of grad_out with the flipped
    // kernel, channels transposed. For odd k at same-size padding the
    // adjoint uses the same pad.
    let wts = params.weights.values();
    let mut flipped = vec![T::zero(); wts.len()];
    for o in 0..oc {
        for ci in 0..c {
            for i in 0..k {
                for j in 0..k {
                    flipped[((ci * oc + o) * k + (k - 1 - i)) * k + (k - 1 - j)] =
                        wts[((o * c + ci) * k + i) * k + j];
                }
            }
        }
    }
    let go_padded = pad2d(grad_out, pad, pad)?;
    let mut grad_in = Tensor::zeros(saved_input.shape().clone());
    conv_core(
        go_padded.values(),
        n,
        oc,
        hp,
        wp,
        &flipped,
        c,
        k,
        grad_in.values_mut(),
        h,
        w,
    );
    Ok(grad_in)
}

// ---------------------------------------------------------------------------
// Transposed convolution
// ---------------------------------------------------------------------------

fn check_deconv_spec(spec: &LayerSpec, c: usize) -> Result<()> {
    if spec.kind != LayerKind::Deconv {
        return Err(Error::invalid("deconv2d on a non-deconv layer"));
    }
    if c != spec.in_channels {
        return Err(Error::shape(format!(
            "deconv2d: input has {c} channels, spec expects {}",
            spec.in_channels
        )));
    }
    if !matches!(spec.stride, 4 | 8) {
        return Err(Error::invalid(format!(
            "deconv2d stride must be 4 or 8, got {}",
            spec.stride
        )));
    }
    if spec.kernel != 2 * spec.stride || spec.pad != spec.stride / 2 {
        return Err(Error::invalid(format!(
            "deconv2d requires kernel 2d and pad d/2, got kernel {} pad {}",
            spec.kernel, spec.pad
        )));
    }
    Ok(())
}

/// Transposed strided convolution; output spatial size is `stride` times
/// the input size.
pub fn deconv2d_forward<T: Element>(
    input: &Tensor<T>,
    spec: &LayerSpec,
    state: &LayerState<T>,
) -> Result<Tensor<T>> {
    let (n, c, h, w) = input.shape().as_nchw()?;
    check_deconv_spec(spec, c)?;
    let params = state.params()?;
    let (s, k, pad, oc) = (spec.stride, spec.kernel, spec.pad, spec.out_channels);
    let (oh, ow) = (h * s, w * s);
    let mut out = Tensor::zeros(Shape::nchw(n, oc, oh, ow)?);
    {
        let bias = params.biases.values();
        let dst = out.values_mut();
        for b in 0..n {
            for o in 0..oc {
                dst[(b * oc + o) * oh * ow..(b * oc + o + 1) * oh * ow].fill(bias[o]);
            }
        }
    }
    let wts = params.weights.values();
    let src = input.values();
    let dst = out.values_mut();
    for b in 0..n {
        for ci in 0..c {
            for o in 0..oc {
                let w_base = (ci * oc + o) * k * k;
                let out_base = (b * oc + o) * oh * ow;
                for y0 in 0..h {
                    for x0 in 0..w {
                        let v = src[((b * c + ci) * h + y0) * w + x0];
                        if v == T::zero() {
                            continue;
                        }
                        // Clip the kernel window to the output bounds.
                        let oy0 = (y0 * s) as isize - pad as isize;
                        let ox0 = (x0 * s) as isize - pad as isize;
                        let i_lo = (-oy0).max(0) as usize;
                        let i_hi = k.min((oh as isize - oy0) as usize);
                        let j_lo = (-ox0).max(0) as usize;
                        let j_hi = k.min((ow as isize - ox0) as usize);
                        for i in i_lo..i_hi {
                            let orow = out_base + ((oy0 + i as isize) as usize) * ow
                                + (ox0 + j_lo as isize) as usize;
                            let wrow = w_base + i * k + j_lo;
                            axpy(
                                v,
                                &wts[wrow..wrow + (j_hi - j_lo)],
                                &mut dst[orow..orow + (j_hi - j_lo)],
                            );
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Backward pass of [`deconv2d_forward`].
pub fn deconv2d_backward<T: Element>(
    grad_out: &Tensor<T>,
    saved_input: &Tensor<T>,
    spec: &LayerSpec,
    state: &mut LayerState<T>,
) -> Result<Tensor<T>> {
    let (n, c, h, w) = saved_input.shape().as_nchw()?;
    check_deconv_spec(spec, c)?;
    let (s, k, pad, oc) = (spec.stride, spec.kernel, spec.pad, spec.out_channels);
    let (oh, ow) = (h * s, w * s);
    if grad_out.shape().dims() != [n, oc, oh, ow] {
        return Err(Error::shape(format!(
            "deconv2d_backward: grad_out {} does not match output {}x{}x{}x{}",
            grad_out.shape(),
            n,
            oc,
            oh,
            ow
        )));
    }
    let params = state.params_mut()?;
    let go = grad_out.values();
    let src = saved_input.values();

    {
        let gb = params.grad_b.values_mut();
        for b in 0..n {
            for o in 0..oc {
                let base = (b * oc + o) * oh * ow;
                let mut acc = T::zero();
                for &v in &go[base..base + oh * ow] {
                    acc = acc + v;
                }
                gb[o] = gb[o] + acc;
            }
        }
    }

    let mut grad_in = Tensor::zeros(saved_input.shape().clone());
    let gin = grad_in.values_mut();
    let wts = params.weights.values();
    let gw = params.grad_w.values_mut();
    for b in 0..n {
        for ci in 0..c {
            for o in 0..oc {
                let w_base = (ci * oc + o) * k * k;
                let out_base = (b * oc + o) * oh * ow;
                for y0 in 0..h {
                    for x0 in 0..w {
                        let oy0 = (y0 * s) as isize - pad as isize;
                        let ox0 = (x0 * s) as isize - pad as isize;
                        let i_lo = (-oy0).max(0) as usize;
                        let i_hi = k.min((oh as isize - oy0) as usize);
                        let j_lo = (-ox0).max(0) as usize;
                        let j_hi = k.min((ow as isize - ox0) as usize);
                        let v = src[((b * c + ci) * h + y0) * w + x0];
                        let mut acc = T::zero();
                        for i in i_lo..i_hi {
                            let orow = out_base + ((oy0 + i as isize) as usize) * ow
                                + (ox0 + j_lo as isize) as usize;
                            let wrow = w_base + i * k + j_lo;
                            let span = j_hi - j_lo;
                            // grad wrt input: correlate grad_out with weights.
                            acc = acc + dot(&wts[wrow..wrow + span], &go[orow..orow + span]);
                            // grad wrt weights: input value times grad_out window.
                            axpy(v, &go[orow..orow + span], &mut gw[wrow..wrow + span]);
                        }
                        gin[((b * c + ci) * h + y0) * w + x0] =
                            gin[((b * c + ci) * h + y0) * w + x0] + acc;
                    }
                }
            }
        }
    }
    Ok(grad_in)
}

// ---------------------------------------------------------------------------
// Fully connected
// ---------------------------------------------------------------------------

/// Flatten an input tensor to `[batch, features]` row view dimensions.
fn fc_flatten_dims<T: Element>(input: &Tensor<T>) -> (usize, usize) {
    let dims = input.shape().dims();
    if dims.len() == 1 {
        (1, dims[0])
    } else {
        (dims[0], dims[1..].iter().product())
    }
}

/// Linear map over flattened per-sample features; output is `[batch, out]`.
/// ReLU is applied by the caller between hidden layers.
pub fn fc_forward<T: Element>(
    input: &Tensor<T>,
    spec: &LayerSpec,
    state: &LayerState<T>,
) -> Result<Tensor<T>> {
    if spec.kind != LayerKind::FullyConnected {
        return Err(Error::invalid("fc_forward on a non-fc layer"));
    }
    let (batch, feat) = fc_flatten_dims(input);
    if feat != spec.in_channels {
        return Err(Error::shape(format!(
            "fc_forward: {feat} features per sample, spec expects {}",
            spec.in_channels
        )));
    }
    let params = state.params()?;
    let (out_dim, in_dim) = (spec.out_channels, spec.in_channels);
    let w = params.weights.values();
    let bias = params.biases.values();
    let x = input.values();
    let mut out = Tensor::zeros(Shape::new(vec![batch, out_dim])?);
    let dst = out.values_mut();
    for b in 0..batch {
        let xrow = &x[b * in_dim..(b + 1) * in_dim];
        for o in 0..out_dim {
            dst[b * out_dim + o] = bias[o] + dot(&w[o * in_dim..(o + 1) * in_dim], xrow);
        }
    }
    Ok(out)
}

/// Backward pass of [`fc_forward`]; returns the input gradient in the
/// saved input's original shape.
pub fn fc_backward<T: Element>(
    grad_out: &Tensor<T>,
    saved_input: &Tensor<T>,
    spec: &LayerSpec,
    state: &mut LayerState<T>,
) -> Result<Tensor<T>> {
    let (batch, feat) = fc_flatten_dims(saved_input);
    let (out_dim, in_dim) = (spec.out_channels, spec.in_channels);
    if feat != in_dim || grad_out.numel() != batch * out_dim {
        return Err(Error::shape("fc_backward: shape mismatch"));
    }
    let params = state.params_mut()?;
    let go = grad_out.values();
    let x = saved_input.values();
    let w = params.weights.values();
    let mut grad_in = Tensor::zeros(saved_input.shape().clone());
    let gin = grad_in.values_mut();
    {
        let gb = params.grad_b.values_mut();
        for b in 0..batch {
            for o in 0..out_dim {
                gb[o] = gb[o] + go[b * out_dim + o];
            }
        }
    }
    {
        let gw = params.grad_w.values_mut();
        for b in 0..batch {
            let xrow = &x[b * in_dim..(b + 1) * in_dim];
            let grow = &mut gin[b * in_dim..(b + 1) * in_dim];
            for o in 0..out_dim {
                let g = go[b * out_dim + o];
                axpy(g, xrow, &mut gw[o * in_dim..(o + 1) * in_dim]);
                axpy(g, &w[o * in_dim..(o + 1) * in_dim], grow);
            }
        }
    }
    Ok(grad_in)
}

// ---------------------------------------------------------------------------
// ReLU
// ---------------------------------------------------------------------------

/// `out = max(0, in)`.
pub fn relu<T: Element>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Subgradient at 0 is 0: `grad_in = grad_out` where input > 0, else 0.
pub fn relu_backward<T: Element>(grad_out: &Tensor<T>, saved_input: &Tensor<T>) -> Result<Tensor<T>> {
    if grad_out.shape() != saved_input.shape() {
        return Err(Error::shape("relu_backward: shape mismatch"));
    }
    let mut out = Tensor::zeros(saved_input.shape().clone());
    let dst = out.values_mut();
    for ((d, &g), &x) in dst.iter_mut().zip(grad_out.values()).zip(saved_input.values()) {
        if x > T::zero() {
            *d = g;
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Max pooling (2x2, stride 2)
// ---------------------------------------------------------------------------

/// 2x2/stride-2 max pooling. Returns the pooled tensor and, per output
/// element, the flat index of its argmax in the input (ties resolved to
/// the first element in row-major scan order).
pub fn maxpool2d<T: Element>(input: &Tensor<T>) -> Result<(Tensor<T>, Vec<u32>)> {
    let (n, c, h, w) = input.shape().as_nchw()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape(format!(
            "maxpool2d requires even spatial dims, got {h}x{w}"
        )));
    }
    let (oh, ow) = (h / 2, w / 2);
    let src = input.values();
    let mut out = Tensor::zeros(Shape::nchw(n, c, oh, ow)?);
    let mut argmax = vec![0u32; out.numel()];
    let dst = out.values_mut();
    for nc in 0..n * c {
        for oy in 0..oh {
            for ox in 0..ow {
                let base = (nc * h + 2 * oy) * w + 2 * ox;
                let cand = [base, base + 1, base + w, base + w + 1];
                let mut best = cand[0];
                for &idx in &cand[1..] {
                    if src[idx] > src[best] {
                        best = idx;
                    }
                }
                let o = (nc * oh + oy) * ow + ox;
                dst[o] = src[best];
                argmax[o] = best as u32;
            }
        }
    }
    Ok((out, argmax))
}

/// Routes each grad element to its argmax position.
pub fn maxpool2d_backward<T: Element>(
    grad_out: &Tensor<T>,
    argmax: &[u32],
    input_shape: &Shape,
) -> Result<Tensor<T>> {
    if grad_out.numel() != argmax.len() {
        return Err(Error::shape("maxpool2d_backward: argmax length mismatch"));
    }
    let mut grad_in = Tensor::zeros(input_shape.clone());
    let gin = grad_in.values_mut();
    for (&g, &idx) in grad_out.values().iter().zip(argmax) {
        gin[idx as usize] = gin[idx as usize] + g;
    }
    Ok(grad_in)
}

// ---------------------------------------------------------------------------
// Channel concatenation
// ---------------------------------------------------------------------------

/// Stack channels, `a` first then `b`; batch and spatial dims must agree.
pub fn concat_channels<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (na, ca, ha, wa) = a.shape().as_nchw()?;
    let (nb, cb, hb, wb) = b.shape().as_nchw()?;
    if na != nb || ha != hb || wa != wb {
        return Err(Error::shape(format!(
            "concat_channels: {} vs {}",
            a.shape(),
            b.shape()
        )));
    }
    let mut out = Tensor::zeros(Shape::nchw(na, ca + cb, ha, wa)?);
    let plane = ha * wa;
    let dst = out.values_mut();
    for n in 0..na {
        let d = n * (ca + cb) * plane;
        dst[d..d + ca * plane].copy_from_slice(&a.values()[n * ca * plane..(n + 1) * ca * plane]);
        dst[d + ca * plane..d + (ca + cb) * plane]
            .copy_from_slice(&b.values()[n * cb * plane..(n + 1) * cb * plane]);
    }
    Ok(out)
}

/// Split a gradient back into the two concatenated inputs, unchanged.
pub fn concat_backward<T: Element>(
    grad_out: &Tensor<T>,
    ca: usize,
    cb: usize,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let (n, c, h, w) = grad_out.shape().as_nchw()?;
    if c != ca + cb {
        return Err(Error::shape(format!(
            "concat_backward: {c} channels cannot split into {ca}+{cb}"
        )));
    }
    let plane = h * w;
    let mut ga = Tensor::zeros(Shape::nchw(n, ca, h, w)?);
    let mut gb = Tensor::zeros(Shape::nchw(n, cb, h, w)?);
    for b in 0..n {
        let s = b * c * plane;
        ga.values_mut()[b * ca * plane..(b + 1) * ca * plane]
            .copy_from_slice(&grad_out.values()[s..s + ca * plane]);
        gb.values_mut()[b * cb * plane..(b + 1) * cb * plane]
            .copy_from_slice(&grad_out.values()[s + ca * plane..s + c * plane]);
    }
    Ok((ga, gb))
}

// ---------------------------------------------------------------------------
// Two-way softmax
// ---------------------------------------------------------------------------

/// Softmax over the last dimension of a `[batch, 2]` tensor.
pub fn softmax2<T: Element>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let dims = input.shape().dims();
    if dims.len() != 2 || dims[1] != 2 {
        return Err(Error::shape(format!(
            "softmax2 expects [batch, 2], got {}",
            input.shape()
        )));
    }
    let mut out = Tensor::zeros(input.shape().clone());
    let src = input.values();
    let dst = out.values_mut();
    for b in 0..dims[0] {
        let (z0, z1) = (src[2 * b], src[2 * b + 1]);
        let m = z0.max(z1);
        let e0 = (z0 - m).exp();
        let e1 = (z1 - m).exp();
        let sum = e0 + e1;
        dst[2 * b] = e0 / sum;
        dst[2 * b + 1] = e1 / sum;
    }
    Ok(out)
}

/// Backward through softmax given the saved output probabilities:
/// `grad_z_i = p_i * (g_i - sum_j g_j p_j)`.
pub fn softmax2_backward<T: Element>(
    grad_out: &Tensor<T>,
    saved_output: &Tensor<T>,
) -> Result<Tensor<T>> {
    if grad_out.shape() != saved_output.shape() {
        return Err(Error::shape("softmax2_backward: shape mismatch"));
    }
    let mut out = Tensor::zeros(grad_out.shape().clone());
    let p = saved_output.values();
    let g = grad_out.values();
    let dst = out.values_mut();
    for b in 0..grad_out.numel() / 2 {
        let dotgp = g[2 * b] * p[2 * b] + g[2 * b + 1] * p[2 * b + 1];
        dst[2 * b] = p[2 * b] * (g[2 * b] - dotgp);
        dst[2 * b + 1] = p[2 * b + 1] * (g[2 * b + 1] - dotgp);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::FillRule;

    fn rand_tensor(shape: Shape, seed: u64) -> Tensor<f64> {
        Tensor::create(shape, FillRule::Uniform { lo: -1.0, hi: 1.0, seed }).unwrap()
    }

    fn layer_with_random_params(spec: &LayerSpec, seed: u64) -> LayerState<f64> {
        let mut rng = SplitMix64::new(seed);
        let mut state = LayerState::init(spec, &mut rng).unwrap();
        if let Some(p) = state.params.as_mut() {
            // Biases also random so their gradients are exercised.
            for v in p.biases.values_mut() {
                *v = rng.uniform(-0.5, 0.5);
            }
        }
        state
    }

    /// Central finite differences of `loss = sum(R .* f(x))` wrt every
    /// weight, bias, and input element, compared against the analytic
    /// backward. Shared harness for all parameterized layers.
    fn finite_diff_layer(
        spec: &LayerSpec,
        input: &Tensor<f64>,
        forward: impl Fn(&Tensor<f64>, &LayerSpec, &LayerState<f64>) -> Tensor<f64>,
        backward: impl Fn(&Tensor<f64>, &Tensor<f64>, &LayerSpec, &mut LayerState<f64>) -> Tensor<f64>,
        tol: f64,
    ) {
        let state = layer_with_random_params(spec, 99);
        let out = forward(input, spec, &state);
        let rweights = rand_tensor(out.shape().clone(), 1234);
        let h = 1e-5;

        let mut st = state.clone();
        st.params_mut().unwrap().zero_grads();
        let grad_in = backward(&rweights, input, spec, &mut st);
        let p = st.params().unwrap();

        let loss = |state: &LayerState<f64>, input: &Tensor<f64>| -> f64 {
            let o = forward(input, spec, state);
            o.values().iter().zip(rweights.values()).map(|(a, b)| a * b).sum()
        };

        let check = |analytic: f64, fd: f64, what: &str| {
            let rel = (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-8);
            assert!(rel < tol, "{what}: analytic {analytic} vs fd {fd} (rel {rel})");
        };

        let nw = p.grad_w.numel();
        let stride = (nw / 24).max(1);
        for idx in (0..nw).step_by(stride) {
            let mut plus = state.clone();
            plus.params_mut().unwrap().weights.values_mut()[idx] += h;
            let mut minus = state.clone();
            minus.params_mut().unwrap().weights.values_mut()[idx] -= h;
            let fd = (loss(&plus, input) - loss(&minus, input)) / (2.0 * h);
            check(p.grad_w.values()[idx], fd, &format!("w[{idx}]"));
        }
        for idx in 0..p.grad_b.numel() {
            let mut plus = state.clone();
            plus.params_mut().unwrap().biases.values_mut()[idx] += h;
            let mut minus = state.clone();
            minus.params_mut().unwrap().biases.values_mut()[idx] -= h;
            let fd = (loss(&plus, input) - loss(&minus, input)) / (2.0 * h);
            check(p.grad_b.values()[idx], fd, &format!("b[{idx}]"));
        }
        let ni = input.numel();
        let stride = (ni / 24).max(1);
        for idx in (0..ni).step_by(stride) {
            let mut plus = input.clone();
            plus.values_mut()[idx] += h;
            let mut minus = input.clone();
            minus.values_mut()[idx] -= h;
            let fd = (loss(&state, &plus) - loss(&state, &minus)) / (2.0 * h);
            check(grad_in.values()[idx], fd, &format!("x[{idx}]"));
        }
    }

    #[test]
    fn conv_identity_kernel_passes_input_through() {
        let spec = LayerSpec::conv(1, 1, 1);
        let mut state = LayerState::init(&spec, &mut SplitMix64::new(0)).unwrap();
        state.params_mut().unwrap().weights.values_mut()[0] = 2.0;
        let input = rand_tensor(Shape::nchw(1, 1, 5, 5).unwrap(), 17);
        let out = conv2d_forward(&input, &spec, &state).unwrap();
        for (o, i) in out.values().iter().zip(input.values()) {
            assert!((o - 2.0 * i).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_all_ones_3x3_frozen_values() {
        // 3x3 input of ones, 3x3 all-ones kernel, pad 1: the output counts
        // the in-bounds taps, so center 9, edges 6, corners 4.
        let spec = LayerSpec::conv(3, 1, 1);
        let mut state = LayerState::init(&spec, &mut SplitMix64::new(0)).unwrap();
        state.params_mut().unwrap().weights.values_mut().fill(1.0);
        let input = Tensor::from_values(Shape::nchw(1, 1, 3, 3).unwrap(), vec![1.0f64; 9]).unwrap();
        let out = conv2d_forward(&input, &spec, &state).unwrap();
        let expect = [4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0];
        assert_eq!(out.values(), &expect);
    }

    #[test]
    fn conv_channel_mismatch_errors() {
        let spec = LayerSpec::conv(3, 2, 4);
        let state = LayerState::init(&spec, &mut SplitMix64::new(0)).unwrap();
        let input = Tensor::<f64>::zeros(Shape::nchw(1, 3, 4, 4).unwrap());
        assert!(conv2d_forward(&input, &spec, &state).is_err());
    }

    #[test]
    fn conv_table2_shape_conv7_64() {
        let spec = LayerSpec::conv(7, 16, 64);
        let state = LayerState::init(&spec, &mut SplitMix64::new(1)).unwrap();
        let input = Tensor::<f64>::zeros(Shape::nchw(1, 16, 32, 32).unwrap());
        let out = conv2d_forward(&input, &spec, &state).unwrap();
        assert_eq!(out.shape().dims(), &[1, 64, 32, 32]);
    }

    #[test]
    fn conv_backward_zero_grad_out_gives_zeros() {
        let spec = LayerSpec::conv(3, 2, 3);
        let mut state = layer_with_random_params(&spec, 5);
        let input = rand_tensor(Shape::nchw(1, 2, 4, 4).unwrap(), 6);
        let gout = Tensor::zeros(Shape::nchw(1, 3, 4, 4).unwrap());
        let gin = conv2d_backward(&gout, &input, &spec, &mut state).unwrap();
        assert!(gin.values().iter().all(|&v| v == 0.0));
        let p = state.params().unwrap();
        assert!(p.grad_w.values().iter().all(|&v| v == 0.0));
        assert!(p.grad_b.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv_backward_matches_finite_differences() {
        let spec = LayerSpec::conv(3, 2, 2);
        let input = rand_tensor(Shape::nchw(1, 2, 5, 5).unwrap(), 42);
        finite_diff_layer(
            &spec,
            &input,
            |x, s, st| conv2d_forward(x, s, st).unwrap(),
            |g, x, s, st| conv2d_backward(g, x, s, st).unwrap(),
            1e-4,
        );
    }

    #[test]
    fn conv_bias_gradient_is_per_channel_sum() {
        let spec = LayerSpec::conv(3, 1, 2);
        let mut state = layer_with_random_params(&spec, 7);
        state.params_mut().unwrap().zero_grads();
        let input = rand_tensor(Shape::nchw(1, 1, 4, 4).unwrap(), 8);
        let gout = rand_tensor(Shape::nchw(1, 2, 4, 4).unwrap(), 9);
        conv2d_backward(&gout, &input, &spec, &mut state).unwrap();
        let gb = state.params().unwrap().grad_b.clone();
        for o in 0..2 {
            let sum: f64 = gout.values()[o * 16..(o + 1) * 16].iter().sum();
            assert!((gb.values()[o] - sum).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_is_shift_equivariant_in_interior() {
        let spec = LayerSpec::conv(3, 1, 1);
        let state = layer_with_random_params(&spec, 21);
        let h = 12;
        let base = rand_tensor(Shape::nchw(1, 1, h, h).unwrap(), 22);
        // Shift the input content by (1, 2).
        let mut shifted = Tensor::<f64>::zeros(base.shape().clone());
        for y in 0..h - 1 {
            for x in 0..h - 2 {
                shifted.values_mut()[(y + 1) * h + (x + 2)] = base.values()[y * h + x];
            }
        }
        let out_a = conv2d_forward(&base, &spec, &state).unwrap();
        let out_b = conv2d_forward(&shifted, &spec, &state).unwrap();
        // Away from the borders the outputs shift identically.
        for y in 2..h - 3 {
            for x in 2..h - 4 {
                let a = out_a.values()[y * h + x];
                let b = out_b.values()[(y + 1) * h + (x + 2)];
                assert!((a - b).abs() < 1e-12, "mismatch at ({y},{x})");
            }
        }
    }

    #[test]
    fn deconv_shapes_16_to_128_at_stride_8() {
        let spec = LayerSpec::deconv(8, 1, 1);
        let state = LayerState::init(&spec, &mut SplitMix64::new(1)).unwrap();
        let input = Tensor::<f64>::zeros(Shape::nchw(1, 1, 16, 16).unwrap());
        let out = deconv2d_forward(&input, &spec, &state).unwrap();
        assert_eq!(out.shape().dims(), &[1, 1, 128, 128]);
    }

    #[test]
    fn deconv_impulse_response_is_kernel() {
        let spec = LayerSpec::deconv(4, 1, 1);
        let state = LayerState::init(&spec, &mut SplitMix64::new(1)).unwrap();
        let mut input = Tensor::<f64>::zeros(Shape::nchw(1, 1, 8, 8).unwrap());
        // impulse away from borders so the whole kernel lands inside
        input.values_mut()[3 * 8 + 3] = 1.0;
        let out = deconv2d_forward(&input, &spec, &state).unwrap();
        let w = state.params().unwrap().weights.clone();
        let k = spec.kernel;
        for i in 0..k {
            for j in 0..k {
                let oy = 3 * 4 + i - spec.pad;
                let ox = 3 * 4 + j - spec.pad;
                let got = out.values()[oy * 32 + ox];
                assert!((got - w.values()[i * k + j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn deconv_is_linear_in_input() {
        let spec = LayerSpec::deconv(4, 1, 1);
        let state = layer_with_random_params(&spec, 31);
        // zero the bias so the map is linear, not affine
        let mut state = state;
        state.params_mut().unwrap().biases.values_mut().fill(0.0);
        let a = rand_tensor(Shape::nchw(1, 1, 6, 6).unwrap(), 32);
        let b = rand_tensor(Shape::nchw(1, 1, 6, 6).unwrap(), 33);
        let combo = a.scale(0.7).add(&b.scale(-1.3)).unwrap();
        let lhs = deconv2d_forward(&combo, &spec, &state).unwrap();
        let fa = deconv2d_forward(&a, &spec, &state).unwrap();
        let fb = deconv2d_forward(&b, &spec, &state).unwrap();
        let rhs = fa.scale(0.7).add(&fb.scale(-1.3)).unwrap();
        for (l, r) in lhs.values().iter().zip(rhs.values()) {
            assert!((l - r).abs() < 1e-10);
        }
    }

    #[test]
    fn deconv_backward_matches_finite_differences() {
        let spec = LayerSpec::deconv(4, 1, 2);
        let input = rand_tensor(Shape::nchw(1, 1, 4, 4).unwrap(), 44);
        finite_diff_layer(
            &spec,
            &input,
            |x, s, st| deconv2d_forward(x, s, st).unwrap(),
            |g, x, s, st| deconv2d_backward(g, x, s, st).unwrap(),
            1e-4,
        );
    }

    #[test]
    fn fc_zero_weights_bias_only() {
        let spec = LayerSpec::fully_connected(4, 3);
        let mut state = LayerState::init(&spec, &mut SplitMix64::new(0)).unwrap();
        state.params_mut().unwrap().weights.values_mut().fill(0.0);
        state
            .params_mut()
            .unwrap()
            .biases
            .values_mut()
            .copy_from_slice(&[1.0, 2.0, 3.0]);
        let input = rand_tensor(Shape::new(vec![2, 4]).unwrap(), 50);
        let out = fc_forward(&input, &spec, &state).unwrap();
        assert_eq!(out.values(), &[1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn fc_backward_matches_finite_differences() {
        let spec = LayerSpec::fully_connected(6, 4);
        let input = rand_tensor(Shape::new(vec![2, 6]).unwrap(), 55);
        finite_diff_layer(
            &spec,
            &input,
            |x, s, st| fc_forward(x, s, st).unwrap(),
            |g, x, s, st| fc_backward(g, x, s, st).unwrap(),
            1e-4,
        );
    }

    #[test]
    fn relu_clamps_and_passes() {
        let t = Tensor::from_values(Shape::vector(3).unwrap(), vec![-3.0f64, 0.0, 2.5]).unwrap();
        assert_eq!(relu(&t).values(), &[0.0, 0.0, 2.5]);
    }

    #[test]
    fn relu_backward_finite_differences_away_from_zero() {
        let input = rand_tensor(Shape::nchw(1, 1, 4, 4).unwrap(), 61);
        let gout = rand_tensor(Shape::nchw(1, 1, 4, 4).unwrap(), 62);
        let gin = relu_backward(&gout, &input).unwrap();
        let h = 1e-5;
        for idx in 0..input.numel() {
            if input.values()[idx].abs() < 1e-3 {
                continue;
            }
            let mut plus = input.clone();
            plus.values_mut()[idx] += h;
            let mut minus = input.clone();
            minus.values_mut()[idx] -= h;
            let f = |t: &Tensor<f64>| -> f64 {
                relu(t).values().iter().zip(gout.values()).map(|(a, b)| a * b).sum()
            };
            let fd = (f(&plus) - f(&minus)) / (2.0 * h);
            let rel = (gin.values()[idx] - fd).abs() / gin.values()[idx].abs().max(fd.abs()).max(1e-8);
            assert!(rel < 1e-4);
        }
    }

    #[test]
    fn maxpool_picks_max_and_halves_dims() {
        let t = Tensor::from_values(Shape::nchw(1, 1, 2, 2).unwrap(), vec![1.0f64, 2.0, 3.0, 4.0]).unwrap();
        let (out, argmax) = maxpool2d(&t).unwrap();
        assert_eq!(out.values(), &[4.0]);
        assert_eq!(argmax, vec![3]);
        assert!(maxpool2d(&Tensor::<f64>::zeros(Shape::nchw(1, 1, 3, 4).unwrap())).is_err());
    }

    #[test]
    fn maxpool_discriminator_path_shapes() {
        let t = Tensor::<f64>::zeros(Shape::nchw(1, 1, 128, 128).unwrap());
        let (p1, _) = maxpool2d(&t).unwrap();
        assert_eq!(p1.shape().dims(), &[1, 1, 64, 64]);
        let (p2, _) = maxpool2d(&p1).unwrap();
        assert_eq!(p2.shape().dims(), &[1, 1, 32, 32]);
    }

    #[test]
    fn maxpool_backward_matches_finite_differences() {
        let input = rand_tensor(Shape::nchw(1, 1, 4, 4).unwrap(), 71);
        let (out, argmax) = maxpool2d(&input).unwrap();
        let gout = rand_tensor(out.shape().clone(), 72);
        let gin = maxpool2d_backward(&gout, &argmax, input.shape()).unwrap();
        let h = 1e-5;
        for idx in 0..input.numel() {
            let mut plus = input.clone();
            plus.values_mut()[idx] += h;
            let mut minus = input.clone();
            minus.values_mut()[idx] -= h;
            let f = |t: &Tensor<f64>| -> f64 {
                let (o, _) = maxpool2d(t).unwrap();
                o.values().iter().zip(gout.values()).map(|(a, b)| a * b).sum()
            };
            let fd = (f(&plus) - f(&minus)) / (2.0 * h);
            let rel = (gin.values()[idx] - fd).abs() / gin.values()[idx].abs().max(fd.abs()).max(1e-8);
            assert!(rel < 1e-4, "input {idx}");
        }
    }

    #[test]
    fn concat_then_split_round_trips() {
        let a = rand_tensor(Shape::nchw(2, 1, 3, 3).unwrap(), 80);
        let b = rand_tensor(Shape::nchw(2, 2, 3, 3).unwrap(), 81);
        let cat = concat_channels(&a, &b).unwrap();
        assert_eq!(cat.shape().dims(), &[2, 3, 3, 3]);
        let (ga, gb) = concat_backward(&cat, 1, 2).unwrap();
        assert_eq!(ga, a);
        assert_eq!(gb, b);
    }

    #[test]
    fn concat_spec_example_two_128_planes() {
        let a = Tensor::<f64>::zeros(Shape::nchw(1, 1, 128, 128).unwrap());
        let b = Tensor::<f64>::zeros(Shape::nchw(1, 1, 128, 128).unwrap());
        let cat = concat_channels(&a, &b).unwrap();
        assert_eq!(cat.shape().dims(), &[1, 2, 128, 128]);
    }

    #[test]
    fn concat_spatial_mismatch_errors() {
        let a = Tensor::<f64>::zeros(Shape::nchw(1, 1, 4, 4).unwrap());
        let b = Tensor::<f64>::zeros(Shape::nchw(1, 1, 5, 4).unwrap());
        assert!(concat_channels(&a, &b).is_err());
    }

    #[test]
    fn softmax2_sums_to_one_and_uniform_on_zeros() {
        let z = Tensor::from_values(Shape::new(vec![2, 2]).unwrap(), vec![0.0f64, 0.0, 3.0, -1.0]).unwrap();
        let p = softmax2(&z).unwrap();
        assert!((p.values()[0] - 0.5).abs() < 1e-12);
        assert!((p.values()[1] - 0.5).abs() < 1e-12);
        for b in 0..2 {
            let s = p.values()[2 * b] + p.values()[2 * b + 1];
            assert!((s - 1.0).abs() < 1e-6);
            assert!(p.values()[2 * b] > 0.0 && p.values()[2 * b] < 1.0);
        }
    }

    #[test]
    fn softmax2_backward_matches_finite_differences() {
        let z = rand_tensor(Shape::new(vec![3, 2]).unwrap(), 91);
        let p = softmax2(&z).unwrap();
        let gout = rand_tensor(p.shape().clone(), 92);
        let gz = softmax2_backward(&gout, &p).unwrap();
        let h = 1e-6;
        for idx in 0..z.numel() {
            let mut plus = z.clone();
            plus.values_mut()[idx] += h;
            let mut minus = z.clone();
            minus.values_mut()[idx] -= h;
            let f = |t: &Tensor<f64>| -> f64 {
                softmax2(t).unwrap().values().iter().zip(gout.values()).map(|(a, b)| a * b).sum()
            };
            let fd = (f(&plus) - f(&minus)) / (2.0 * h);
            let rel = (gz.values()[idx] - fd).abs() / gz.values()[idx].abs().max(fd.abs()).max(1e-8);
            assert!(rel < 1e-4);
        }
    }
}
