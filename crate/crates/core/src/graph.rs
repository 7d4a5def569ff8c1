//! Network graphs: an ordered layer stack with either a plain chain
//! topology or the two-stream-then-concat topology used by the global
//! upsampling network.
//!
//! A graph is immutable during forward passes; `backward` and the
//! optimizer need exclusive access. Forward activations are captured in a
//! separate [`Trace`] so a single graph can serve concurrent inference.

use crate::element::Element;
use crate::error::{Error, Result};
use crate::layers::{
    concat_backward, concat_channels, conv2d_backward, conv2d_forward, deconv2d_backward,
    deconv2d_forward, fc_backward, fc_forward, maxpool2d, maxpool2d_backward, relu, relu_backward,
    softmax2, softmax2_backward, LayerKind, LayerSpec, LayerState,
};
use crate::tensor::{Shape, Tensor};

/// Self-describing identity of a built network; stored in checkpoints so
/// any file can be rebuilt without external context.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BuilderDescriptor {
    /// One of `gln`, `gn`, `ln`, `gn-only`, `ln-only`, `discriminator`.
    pub builder: String,
    /// Upsampling factor (4 or 8); 0 where not applicable.
    pub d: u32,
    /// Refinement depth (4, 6 or 8); 0 where not applicable.
    pub depth: u32,
    pub seed: u64,
    /// High-resolution output side length (128 for the paper-sized nets;
    /// smaller for toy-scale instances).
    pub out_size: u32,
    /// 0 = upsampling stream occupies channel 0 of the concatenation.
    pub channel_order: u8,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Topology {
    Chain,
    /// `layers[0..upsample_len]` form the image upsampling stream,
    /// the next `detail_len` layers the detail generation stream; they
    /// are followed by one `Concat` layer and then the chain tail.
    TwoStreamConcat { upsample_len: usize, detail_len: usize },
}

#[derive(Debug, Clone)]
pub struct Layer<T> {
    pub name: String,
    pub spec: LayerSpec,
    pub state: LayerState<T>,
}

#[derive(Debug, Clone)]
pub struct NetworkGraph<T> {
    pub descriptor: BuilderDescriptor,
    pub layers: Vec<Layer<T>>,
    pub topology: Topology,
    /// Canonical single-sample input shape `[1, C, H, W]`; forward accepts
    /// any batch size with matching C/H/W.
    pub input_shape: Shape,
    pub output_shape: Shape,
}

/// Saved activations of one forward pass, aligned with the layer list.
#[derive(Debug, Clone)]
pub struct Trace<T> {
    entries: Vec<TraceEntry<T>>,
}

#[derive(Debug, Clone)]
enum TraceEntry<T> {
    Missing,
    Input(Tensor<T>),
    Pool { input_shape: Shape, argmax: Vec<u32> },
    Softmax { output: Tensor<T> },
    /// Stream outputs entering the concatenation, already channel-ordered.
    Concat { first: Tensor<T>, second: Tensor<T> },
}

impl<T: Element> NetworkGraph<T> {
    /// Inference forward pass.
    pub fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.execute(input, false)?.0)
    }

    /// Forward pass that records the activations needed by [`backward`].
    pub fn forward_trace(&self, input: &Tensor<T>) -> Result<(Tensor<T>, Trace<T>)> {
        let (out, trace) = self.execute(input, true)?;
        Ok((out, trace.expect("trace recorded")))
    }

    fn check_input(&self, input: &Tensor<T>) -> Result<()> {
        let want = self.input_shape.dims();
        let got = input.shape().dims();
        // Fully-convolutional chains accept any spatial size; graphs with
        // fc or deconv layers are pinned to their declared geometry.
        let size_pinned = self.layers.iter().any(|l| {
            matches!(l.spec.kind, LayerKind::FullyConnected | LayerKind::Deconv)
        });
        let ok = got.len() == 4
            && got[1] == want[1]
            && (!size_pinned || got[2..] == want[2..]);
        if !ok {
            return Err(Error::shape(format!(
                "graph {} expects input [N,{},{},{}], got {}",
                self.descriptor.builder,
                want[1],
                want[2],
                want[3],
                input.shape()
            )));
        }
        Ok(())
    }

    fn execute(&self, input: &Tensor<T>, record: bool) -> Result<(Tensor<T>, Option<Trace<T>>)> {
        self.check_input(input)?;
        let mut entries: Vec<TraceEntry<T>> = if record {
            (0..self.layers.len()).map(|_| TraceEntry::Missing).collect()
        } else {
            Vec::new()
        };
        let out = match self.topology {
            Topology::Chain => {
                self.run_span(0, self.layers.len(), input, record.then_some(&mut entries))?
            }
            Topology::TwoStreamConcat { upsample_len, detail_len } => {
                let cat_idx = upsample_len + detail_len;
                let up = self.run_span(0, upsample_len, input, record.then_some(&mut entries))?;
                let detail = self.run_span(
                    upsample_len,
                    cat_idx,
                    input,
                    record.then_some(&mut entries),
                )?;
                // The detail stream ends in a fully-connected layer; shape
                // its output into one image plane matching the upsampling
                // stream before concatenation.
                let (n, _, h, w) = up.shape().as_nchw()?;
                let plane = detail.reshape(Shape::nchw(n, 1, h, w)?)?;
                let (first, second) = if self.descriptor.channel_order == 0 {
                    (up, plane)
                } else {
                    (plane, up)
                };
                let cat = concat_channels(&first, &second)?;
                if record {
                    entries[cat_idx] = TraceEntry::Concat { first, second };
                }
                self.run_span(
                    cat_idx + 1,
                    self.layers.len(),
                    &cat,
                    record.then_some(&mut entries),
                )?
            }
        };
        // Chain variants that end in a fully-connected layer (GN-Only)
        // declare a rank-4 output; apply the final reshape here.
        let out = if out.shape().rank() != self.output_shape.rank()
            && out.numel() % self.output_shape.numel() == 0
        {
            let n = out.shape().dims()[0];
            let d = self.output_shape.dims();
            out.reshape(Shape::nchw(n, d[1], d[2], d[3])?)?
        } else {
            out
        };
        Ok((out, record.then_some(Trace { entries })))
    }

    fn run_span(
        &self,
        start: usize,
        end: usize,
        input: &Tensor<T>,
        mut entries: Option<&mut Vec<TraceEntry<T>>>,
    ) -> Result<Tensor<T>> {
        let mut x = input.clone();
        for idx in start..end {
            let layer = &self.layers[idx];
            let (y, entry) = match layer.spec.kind {
                LayerKind::Conv => (
                    conv2d_forward(&x, &layer.spec, &layer.state)?,
                    TraceEntry::Input(x.clone()),
                ),
                LayerKind::Deconv => (
                    deconv2d_forward(&x, &layer.spec, &layer.state)?,
                    TraceEntry::Input(x.clone()),
                ),
                LayerKind::FullyConnected => (
                    fc_forward(&x, &layer.spec, &layer.state)?,
                    TraceEntry::Input(x.clone()),
                ),
                LayerKind::Relu => (relu(&x), TraceEntry::Input(x.clone())),
                LayerKind::MaxPool => {
                    let (y, argmax) = maxpool2d(&x)?;
                    (y, TraceEntry::Pool { input_shape: x.shape().clone(), argmax })
                }
                LayerKind::Softmax2 => {
                    let y = softmax2(&x)?;
                    let entry = TraceEntry::Softmax { output: y.clone() };
                    (y, entry)
                }
                LayerKind::Concat => {
                    return Err(Error::invalid(format!(
                        "layer {idx} ({}) : concat outside a two-stream topology",
                        layer.name
                    )))
                }
            };
            if let Some(entries) = entries.as_deref_mut() {
                entries[idx] = entry;
            }
            x = y;
        }
        Ok(x)
    }

    /// Reverse pass: accumulates parameter gradients (frozen layers
    /// included in the chain but their parameter gradients are still
    /// recorded; the optimizer skips them) and returns the gradient with
    /// respect to the graph input.
    pub fn backward(&mut self, grad_out: &Tensor<T>, trace: &Trace<T>) -> Result<Tensor<T>> {
        if trace.entries.len() != self.layers.len() {
            return Err(Error::invalid("trace does not match this graph"));
        }
        // Undo the final implicit reshape if the graph output is rank 4
        // but the last layer produced a flat tensor.
        let mut g = grad_out.clone();
        if let Some(last) = self.layers.last() {
            if last.spec.kind == LayerKind::FullyConnected && g.shape().rank() == 4 {
                let n = g.shape().dims()[0];
                g = g.reshape(Shape::new(vec![n, g.numel() / n])?)?;
            }
        }
        match self.topology {
            Topology::Chain => {
                let n = self.layers.len();
                self.backward_span(n, 0, g, trace)
            }
            Topology::TwoStreamConcat { upsample_len, detail_len } => {
                let cat_idx = upsample_len + detail_len;
                let g = self.backward_span(self.layers.len(), cat_idx + 1, g, trace)?;
                let (first, second) = match &trace.entries[cat_idx] {
                    TraceEntry::Concat { first, second } => (first, second),
                    _ => return Err(Error::invalid("missing saved concat activations")),
                };
                let ca = first.shape().dims()[1];
                let cb = second.shape().dims()[1];
                let (gf, gs) = concat_backward(&g, ca, cb)?;
                let (g_up, g_detail) = if self.descriptor.channel_order == 0 {
                    (gf, gs)
                } else {
                    (gs, gf)
                };
                // Detail-stream gradient flows back through the reshape to
                // the fc chain's [N, features] output.
                let n = g_detail.shape().dims()[0];
                let flat = g_detail.reshape(Shape::new(vec![n, g_detail.numel() / n])?)?;
                let g_b = self.backward_span(cat_idx, upsample_len, flat, trace)?;
                let g_a = self.backward_span(upsample_len, 0, g_up, trace)?;
                // Both streams consume the same input image.
                g_a.add(&g_b.reshape(g_a.shape().clone())?)
            }
        }
    }

    fn backward_span(
        &mut self,
        end: usize,
        start: usize,
        grad: Tensor<T>,
        trace: &Trace<T>,
    ) -> Result<Tensor<T>> {
        let mut g = grad;
        for idx in (start..end).rev() {
            let layer = &mut self.layers[idx];
            g = match (&layer.spec.kind, &trace.entries[idx]) {
                (LayerKind::Conv, TraceEntry::Input(x)) => {
                    conv2d_backward(&g, x, &layer.spec, &mut layer.state)?
                }
                (LayerKind::Deconv, TraceEntry::Input(x)) => {
                    deconv2d_backward(&g, x, &layer.spec, &mut layer.state)?
                }
                (LayerKind::FullyConnected, TraceEntry::Input(x)) => {
                    // fc gradients arrive as [N, out] even when the next
                    // layer consumed a reshaped view.
                    let n = if x.shape().rank() == 1 { 1 } else { x.shape().dims()[0] };
                    let flat = if g.shape().rank() != 2 {
                        g.reshape(Shape::new(vec![n, g.numel() / n])?)?
                    } else {
                        g
                    };
                    fc_backward(&flat, x, &layer.spec, &mut layer.state)?
                }
                (LayerKind::Relu, TraceEntry::Input(x)) => relu_backward(&g, x)?,
                (LayerKind::MaxPool, TraceEntry::Pool { input_shape, argmax }) => {
                    maxpool2d_backward(&g, argmax, input_shape)?
                }
                (LayerKind::Softmax2, TraceEntry::Softmax { output }) => {
                    softmax2_backward(&g, output)?
                }
                (kind, TraceEntry::Missing) => {
                    return Err(Error::invalid(format!(
                        "missing saved forward activations for layer {idx} ({kind:?})"
                    )))
                }
                (kind, _) => {
                    return Err(Error::invalid(format!(
                        "trace entry does not match layer {idx} ({kind:?})"
                    )))
                }
            };
        }
        Ok(g)
    }

    pub fn zero_grads(&mut self) {
        for layer in &mut self.layers {
            if let Some(p) = layer.state.params.as_mut() {
                p.zero_grads();
            }
        }
    }

    /// Number of trainable parameters (frozen layers excluded).
    pub fn trainable_param_count(&self) -> usize {
        self.layers
            .iter()
            .filter(|l| !l.spec.frozen)
            .filter_map(|l| l.state.params.as_ref())
            .map(|p| p.param_count())
            .sum()
    }

    /// Total stored parameters including frozen layers.
    pub fn total_param_count(&self) -> usize {
        self.layers
            .iter()
            .filter_map(|l| l.state.params.as_ref())
            .map(|p| p.param_count())
            .sum()
    }

    /// Flat indexing over trainable parameters, ordered per layer as
    /// weights (row-major) then biases. Used by the gradient checker.
    fn locate_param(&self, flat: usize) -> Result<(usize, bool, usize)> {
        let mut offset = flat;
        for (idx, layer) in self.layers.iter().enumerate() {
            if layer.spec.frozen {
                continue;
            }
            if let Some(p) = layer.state.params.as_ref() {
                if offset < p.weights.numel() {
                    return Ok((idx, true, offset));
                }
                offset -= p.weights.numel();
                if offset < p.biases.numel() {
                    return Ok((idx, false, offset));
                }
                offset -= p.biases.numel();
            }
        }
        Err(Error::invalid(format!("parameter index {flat} out of range")))
    }

    pub fn get_param(&self, flat: usize) -> Result<T> {
        let (idx, is_w, off) = self.locate_param(flat)?;
        let p = self.layers[idx].state.params().unwrap();
        Ok(if is_w { p.weights.values()[off] } else { p.biases.values()[off] })
    }

    pub fn set_param(&mut self, flat: usize, value: T) -> Result<()> {
        let (idx, is_w, off) = self.locate_param(flat)?;
        let p = self.layers[idx].state.params_mut().unwrap();
        if is_w {
            p.weights.values_mut()[off] = value;
        } else {
            p.biases.values_mut()[off] = value;
        }
        Ok(())
    }

    pub fn get_grad(&self, flat: usize) -> Result<T> {
        let (idx, is_w, off) = self.locate_param(flat)?;
        let p = self.layers[idx].state.params().unwrap();
        Ok(if is_w { p.grad_w.values()[off] } else { p.grad_b.values()[off] })
    }

    /// Convert the whole graph to another element precision.
    pub fn cast<U: Element>(&self) -> NetworkGraph<U> {
        NetworkGraph {
            descriptor: self.descriptor.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    name: l.name.clone(),
                    spec: l.spec.clone(),
                    state: LayerState {
                        params: l.state.params.as_ref().map(|p| {
                            let weights = p.weights.cast();
                            let biases = p.biases.cast();
                            let mut set = crate::layers::ParamSet {
                                grad_w: Tensor::zeros(weights.shape().clone()),
                                grad_b: Tensor::zeros(biases.shape().clone()),
                                vel_w: Tensor::zeros(weights.shape().clone()),
                                vel_b: Tensor::zeros(biases.shape().clone()),
                                weights,
                                biases,
                            };
                            set.vel_w = p.vel_w.cast();
                            set.vel_b = p.vel_b.cast();
                            set
                        }),
                    },
                })
                .collect(),
            topology: self.topology.clone(),
            input_shape: self.input_shape.clone(),
            output_shape: self.output_shape.clone(),
        }
    }

    /// One line per layer, for reports and the CLI.
    pub fn summary(&self) -> String {
        let mut s = format!(
            "{} (in {}, out {}, {} trainable params)\n",
            self.descriptor.builder,
            self.input_shape,
            self.output_shape,
            self.trainable_param_count()
        );
        for (i, l) in self.layers.iter().enumerate() {
            let extra = match l.spec.kind {
                LayerKind::Conv | LayerKind::Deconv => format!(
                    " k{} {}->{} stride {} pad {}",
                    l.spec.kernel, l.spec.in_channels, l.spec.out_channels, l.spec.stride, l.spec.pad
                ),
                LayerKind::FullyConnected => {
                    format!(" {}->{}", l.spec.in_channels, l.spec.out_channels)
                }
                _ => String::new(),
            };
            s.push_str(&format!("  [{i:2}] {:<16}{extra}\n", l.name));
        }
        s
    }
}
