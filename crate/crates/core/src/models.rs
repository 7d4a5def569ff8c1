//! Declarative builders for the global upsampling network (GN), the local
//! refinement networks (LN4/LN6/LN8), their composition (GLN), the
//! GN-Only / LN-Only ablation variants, and the discriminator, plus
//! receptive-field analysis.
//!
//! Builders have a `_sized` variant taking the high-resolution side
//! length so the same architectures can be instantiated at toy scale for
//! gradient checking; the plain builders pin the paper-sized 128x128
//! output. The detail stream consumes the raw flattened low-resolution
//! pixel vector, and the upsampling stream occupies channel 0 of the
//! concatenation (recorded in the checkpoint descriptor).

use crate::element::Element;
use crate::error::{Error, Result};
use crate::graph::{BuilderDescriptor, Layer, NetworkGraph, Topology};
use crate::layers::{LayerKind, LayerSpec, LayerState};
use crate::rng::SplitMix64;
use crate::tensor::{Shape, Tensor};

pub const FULL_OUTPUT_SIZE: usize = 128;

fn gn_hidden_widths(d: usize) -> Result<[usize; 3]> {
    match d {
        4 => Ok([512, 256, 512]),
        8 => Ok([256, 256, 256]),
        other => Err(Error::invalid(format!("upsampling factor must be 4 or 8, got {other}"))),
    }
}

/// Kernel/filter-count rows of the refinement stacks, excluding the
/// final single-filter fusion layer.
fn ln_stack(depth: usize) -> Result<Vec<(usize, usize)>> {
    match depth {
        4 => Ok(vec![(5, 16), (7, 64), (5, 16)]),
        6 => Ok(vec![(5, 16), (7, 32), (7, 64), (7, 32), (5, 16)]),
        8 => Ok(vec![
            (5, 16),
            (7, 32),
            (7, 64),
            (7, 64),
            (7, 64),
            (7, 32),
            (5, 16),
        ]),
        other => Err(Error::invalid(format!("refinement depth must be 4, 6 or 8, got {other}"))),
    }
}

fn make_layer<T: Element>(
    name: impl Into<String>,
    spec: LayerSpec,
    rng: &mut SplitMix64,
) -> Result<Layer<T>> {
    let state = LayerState::init(&spec, rng)?;
    Ok(Layer { name: name.into(), spec, state })
}

fn check_sizes(d: usize, out_size: usize) -> Result<usize> {
    if out_size == 0 || !out_size.is_multiple_of(d) {
        return Err(Error::invalid(format!(
            "output size {out_size} is not a positive multiple of d={d}"
        )));
    }
    Ok(out_size / d)
}

/// Detail-generation fc chain: in -> hidden x3 -> out, ReLU after every
/// linear map except the last.
fn detail_stream<T: Element>(
    d: usize,
    in_dim: usize,
    out_dim: usize,
    rng: &mut SplitMix64,
) -> Result<Vec<Layer<T>>> {
    let widths = gn_hidden_widths(d)?;
    let dims = [in_dim, widths[0], widths[1], widths[2], out_dim];
    let mut layers = Vec::new();
    for i in 0..4 {
        layers.push(make_layer(
            format!("detail.fc{i}"),
            LayerSpec::fully_connected(dims[i], dims[i + 1]),
            rng,
        )?);
        if i < 3 {
            layers.push(make_layer(format!("detail.relu{i}"), LayerSpec::relu(), rng)?);
        }
    }
    Ok(layers)
}

fn ln_tail<T: Element>(
    depth: usize,
    in_channels: usize,
    rng: &mut SplitMix64,
) -> Result<Vec<Layer<T>>> {
    let stack = ln_stack(depth)?;
    let mut layers = Vec::new();
    let mut prev = in_channels;
    for (i, &(k, filters)) in stack.iter().enumerate() {
        layers.push(make_layer(format!("ln.conv{i}"), LayerSpec::conv(k, prev, filters), rng)?);
        layers.push(make_layer(format!("ln.relu{i}"), LayerSpec::relu(), rng)?);
        prev = filters;
    }
    // Final fusion layer constructs the image; no ReLU after it.
    layers.push(make_layer("ln.fuse", LayerSpec::conv(5, prev, 1), rng)?);
    Ok(layers)
}

/// Global upsampling network at toy or full scale: bilinear-initialized
/// deconv stream plus the fc detail stream, concatenated to two channels.
pub fn build_gn_sized<T: Element>(d: usize, out_size: usize, seed: u64) -> Result<NetworkGraph<T>> {
    let in_size = check_sizes(d, out_size)?;
    let mut rng = SplitMix64::new(seed);
    let mut layers = vec![make_layer(
        format!("up.deconv{d}"),
        LayerSpec::deconv(d, 1, 1),
        &mut rng,
    )?];
    let detail = detail_stream(d, in_size * in_size, out_size * out_size, &mut rng)?;
    let detail_len = detail.len();
    layers.extend(detail);
    layers.push(make_layer("concat", LayerSpec::concat(), &mut rng)?);
    Ok(NetworkGraph {
        descriptor: BuilderDescriptor {
            builder: "gn".into(),
            d: d as u32,
            depth: 0,
            seed,
            out_size: out_size as u32,
            channel_order: 0,
        },
        layers,
        topology: Topology::TwoStreamConcat { upsample_len: 1, detail_len },
        input_shape: Shape::nchw(1, 1, in_size, in_size)?,
        output_shape: Shape::nchw(1, 2, out_size, out_size)?,
    })
}

pub fn build_gn<T: Element>(d: usize, seed: u64) -> Result<NetworkGraph<T>> {
    build_gn_sized(d, FULL_OUTPUT_SIZE, seed)
}

/// Local refinement network: a stride-1, same-padding convolution stack.
pub fn build_ln<T: Element>(depth: usize, in_channels: usize, seed: u64) -> Result<NetworkGraph<T>> {
    if !matches!(in_channels, 1 | 2) {
        return Err(Error::invalid(format!("ln input channels must be 1 or 2, got {in_channels}")));
    }
    let mut rng = SplitMix64::new(seed);
    let layers = ln_tail(depth, in_channels, &mut rng)?;
    Ok(NetworkGraph {
        descriptor: BuilderDescriptor {
            builder: "ln".into(),
            d: 0,
            depth: depth as u32,
            seed,
            out_size: FULL_OUTPUT_SIZE as u32,
            channel_order: 0,
        },
        layers,
        topology: Topology::Chain,
        input_shape: Shape::nchw(1, in_channels, FULL_OUTPUT_SIZE, FULL_OUTPUT_SIZE)?,
        output_shape: Shape::nchw(1, 1, FULL_OUTPUT_SIZE, FULL_OUTPUT_SIZE)?,
    })
}

/// The composed upsampler: GN streams, concatenation, then the LN stack.
pub fn build_gln_sized<T: Element>(
    d: usize,
    depth: usize,
    out_size: usize,
    seed: u64,
) -> Result<NetworkGraph<T>> {
    let in_size = check_sizes(d, out_size)?;
    let mut rng = SplitMix64::new(seed);
    let mut layers = vec![make_layer(
        format!("up.deconv{d}"),
        LayerSpec::deconv(d, 1, 1),
        &mut rng,
    )?];
    let detail = detail_stream(d, in_size * in_size, out_size * out_size, &mut rng)?;
    let detail_len = detail.len();
    layers.extend(detail);
    layers.push(make_layer("concat", LayerSpec::concat(), &mut rng)?);
    layers.extend(ln_tail(depth, 2, &mut rng)?);
    Ok(NetworkGraph {
        descriptor: BuilderDescriptor {
            builder: "gln".into(),
            d: d as u32,
            depth: depth as u32,
            seed,
            out_size: out_size as u32,
            channel_order: 0,
        },
        layers,
        topology: Topology::TwoStreamConcat { upsample_len: 1, detail_len },
        input_shape: Shape::nchw(1, 1, in_size, in_size)?,
        output_shape: Shape::nchw(1, 1, out_size, out_size)?,
    })
}

pub fn build_gln<T: Element>(d: usize, depth: usize, seed: u64) -> Result<NetworkGraph<T>> {
    build_gln_sized(d, depth, FULL_OUTPUT_SIZE, seed)
}

/// Ablation: the detail fc chain alone, trained to emit the
/// high-resolution image directly.
pub fn build_gn_only_sized<T: Element>(d: usize, out_size: usize, seed: u64) -> Result<NetworkGraph<T>> {
    let in_size = check_sizes(d, out_size)?;
    let mut rng = SplitMix64::new(seed);
    let layers = detail_stream(d, in_size * in_size, out_size * out_size, &mut rng)?;
    Ok(NetworkGraph {
        descriptor: BuilderDescriptor {
            builder: "gn-only".into(),
            d: d as u32,
            depth: 0,
            seed,
            out_size: out_size as u32,
            channel_order: 0,
        },
        layers,
        topology: Topology::Chain,
        input_shape: Shape::nchw(1, 1, in_size, in_size)?,
        output_shape: Shape::nchw(1, 1, out_size, out_size)?,
    })
}

pub fn build_gn_only<T: Element>(d: usize, seed: u64) -> Result<NetworkGraph<T>> {
    build_gn_only_sized(d, FULL_OUTPUT_SIZE, seed)
}

/// Ablation: a frozen bilinear upsampling stage feeding the refinement
/// stack on a single channel. The front end keeps its bilinear weights
/// (frozen, excluded from trainable counts) so the graph stays within the
/// layer vocabulary.
pub fn build_ln_only_sized<T: Element>(
    d: usize,
    depth: usize,
    out_size: usize,
    seed: u64,
) -> Result<NetworkGraph<T>> {
    let in_size = check_sizes(d, out_size)?;
    let mut rng = SplitMix64::new(seed);
    let mut up_spec = LayerSpec::deconv(d, 1, 1);
    up_spec.frozen = true;
    let mut layers = vec![make_layer(format!("up.bilinear{d}"), up_spec, &mut rng)?];
    layers.extend(ln_tail(depth, 1, &mut rng)?);
    Ok(NetworkGraph {
        descriptor: BuilderDescriptor {
            builder: "ln-only".into(),
            d: d as u32,
            depth: depth as u32,
            seed,
            out_size: out_size as u32,
            channel_order: 0,
        },
        layers,
        topology: Topology::Chain,
        input_shape: Shape::nchw(1, 1, in_size, in_size)?,
        output_shape: Shape::nchw(1, 1, out_size, out_size)?,
    })
}

pub fn build_ln_only<T: Element>(d: usize, depth: usize, seed: u64) -> Result<NetworkGraph<T>> {
    build_ln_only_sized(d, depth, FULL_OUTPUT_SIZE, seed)
}

/// Discriminator: two conv/pool stages, fc-50, fc-2, two-way softmax.
/// Class 1 is "reconstructed"; `D(x)` is its probability.
pub fn build_discriminator_sized<T: Element>(input_size: usize, seed: u64) -> Result<NetworkGraph<T>> {
    if !input_size.is_multiple_of(4) || input_size < 8 {
        return Err(Error::invalid(format!(
            "discriminator input size must be a multiple of 4 and >= 8, got {input_size}"
        )));
    }
    let mut rng = SplitMix64::new(seed);
    let flat = (input_size / 4) * (input_size / 4) * 16;
    let layers = vec![
        make_layer("d.conv0", LayerSpec::conv(5, 1, 16), &mut rng)?,
        make_layer("d.relu0", LayerSpec::relu(), &mut rng)?,
        make_layer("d.pool0", LayerSpec::maxpool(), &mut rng)?,
        make_layer("d.conv1", LayerSpec::conv(5, 16, 16), &mut rng)?,
        make_layer("d.relu1", LayerSpec::relu(), &mut rng)?,
        make_layer("d.pool1", LayerSpec::maxpool(), &mut rng)?,
        make_layer("d.fc0", LayerSpec::fully_connected(flat, 50), &mut rng)?,
        make_layer("d.relu2", LayerSpec::relu(), &mut rng)?,
        make_layer("d.fc1", LayerSpec::fully_connected(50, 2), &mut rng)?,
        make_layer("d.softmax", LayerSpec::softmax2(), &mut rng)?,
    ];
    Ok(NetworkGraph {
        descriptor: BuilderDescriptor {
            builder: "discriminator".into(),
            d: 0,
            depth: 0,
            seed,
            out_size: input_size as u32,
            channel_order: 0,
        },
        layers,
        topology: Topology::Chain,
        input_shape: Shape::nchw(1, 1, input_size, input_size)?,
        output_shape: Shape::new(vec![1, 2])?,
    })
}

pub fn build_discriminator<T: Element>(seed: u64) -> Result<NetworkGraph<T>> {
    build_discriminator_sized(FULL_OUTPUT_SIZE, seed)
}

/// Probability that each batch sample was reconstructed by the upsampler,
/// read from a discriminator's `[N, 2]` softmax output.
pub fn reconstructed_probability<T: Element>(disc_output: &Tensor<T>) -> Result<Vec<T>> {
    let dims = disc_output.shape().dims();
    if dims.len() != 2 || dims[1] != 2 {
        return Err(Error::shape(format!(
            "discriminator output must be [N, 2], got {}",
            disc_output.shape()
        )));
    }
    Ok((0..dims[0]).map(|b| disc_output.values()[2 * b + 1]).collect())
}

/// Receptive field of a stride-1 convolution chain: `1 + sum(k - 1)`.
/// Errors for anything other than conv/ReLU chain layers.
pub fn receptive_field<T: Element>(graph: &NetworkGraph<T>) -> Result<usize> {
    if graph.topology != Topology::Chain {
        return Err(Error::invalid("receptive field requires a chain topology"));
    }
    let mut rf = 1usize;
    for layer in &graph.layers {
        match layer.spec.kind {
            LayerKind::Conv => {
                if layer.spec.stride != 1 {
                    return Err(Error::invalid("receptive field requires stride-1 convs"));
                }
                rf += layer.spec.kernel - 1;
            }
            LayerKind::Relu => {}
            other => {
                return Err(Error::invalid(format!(
                    "receptive field undefined for {other:?} layers"
                )))
            }
        }
    }
    Ok(rf)
}
