//! Finite-difference gradient checking for whole graphs.
//!
//! Run this in f64; central differences on f32 losses drown in rounding
//! error before they say anything about the analytic gradients.

use crate::element::Element;
use crate::error::{Error, Result};
use crate::graph::NetworkGraph;
use crate::rng::SplitMix64;
use crate::tensor::Tensor;
use crate::train::{adversarial_term, loss_ms, loss_ms_grad, PROB_EPS};

/// Loss under which a network's parameter gradients are checked.
pub enum LossSpec<'a, T> {
    /// Squared error against a fixed target (summed over pixels,
    /// averaged over batch).
    MeanSquared { target: &'a Tensor<T> },
    /// Reconstruction plus adversarial term through a frozen
    /// discriminator.
    Generator {
        disc: &'a NetworkGraph<T>,
        target: &'a Tensor<T>,
        lambda: f64,
    },
}

fn eval_loss<T: Element>(
    net: &NetworkGraph<T>,
    input: &Tensor<T>,
    loss: &LossSpec<'_, T>,
) -> Result<f64> {
    let out = net.forward(input)?;
    let value = match loss {
        LossSpec::MeanSquared { target } => loss_ms(&out, target)?,
        LossSpec::Generator { disc, target, lambda } => {
            let probs = crate::models::reconstructed_probability(&disc.forward(&out)?)?;
            loss_ms(&out, target)? + lambda * adversarial_term(&probs)?
        }
    };
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("gradient-check loss {value}")));
    }
    Ok(value)
}

/// `L(up) - L(down)` evaluated pairwise per output element, so the two
/// large loss values are never formed and cancelled. Algebraically
/// identical to the plain difference; numerically it keeps central
/// differences meaningful for parameters with tiny gradients.
fn loss_difference<T: Element>(
    up: &Tensor<T>,
    down: &Tensor<T>,
    loss: &LossSpec<'_, T>,
) -> Result<f64> {
    match loss {
        LossSpec::MeanSquared { target } => {
            let n = up.shape().dims()[0] as f64;
            let mut acc = 0.0;
            for ((&p, &m), &t) in up.values().iter().zip(down.values()).zip(target.values()) {
                let (p, m, t) = (p.as_f64(), m.as_f64(), t.as_f64());
                acc += (p - m) * (p + m - 2.0 * t);
            }
            Ok(acc / n)
        }
        LossSpec::Generator { disc, target, lambda } => {
            let ms = loss_difference(up, down, &LossSpec::MeanSquared { target })?;
            if *lambda == 0.0 {
                return Ok(ms);
            }
            let p_up = crate::models::reconstructed_probability(&disc.forward(up)?)?;
            let p_down = crate::models::reconstructed_probability(&disc.forward(down)?)?;
            let n = p_up.len() as f64;
            let mut adv = 0.0;
            for (&pu, &pd) in p_up.iter().zip(&p_down) {
                let (pu, pd) = (pu.as_f64(), pd.as_f64());
                // ln(1-pu) - ln(1-pd), formed without cancellation
                adv -= ((pd - pu) / (1.0 - pd)).ln_1p();
            }
            Ok(ms + lambda * adv / n)
        }
    }
}

/// Populate analytic gradients of `loss` into `net`'s layer states.
fn analytic_grads<T: Element>(
    net: &mut NetworkGraph<T>,
    input: &Tensor<T>,
    loss: &LossSpec<'_, T>,
) -> Result<()> {
    net.zero_grads();
    let (out, trace) = net.forward_trace(input)?;
    let grad = match loss {
        LossSpec::MeanSquared { target } => loss_ms_grad(&out, target)?.1,
        LossSpec::Generator { disc, target, lambda } => {
            let mut grad = loss_ms_grad(&out, target)?.1;
            if *lambda != 0.0 {
                let mut disc = (*disc).clone();
                let (d_out, d_trace) = disc.forward_trace(&out)?;
                let probs = crate::models::reconstructed_probability(&d_out)?;
                let n = probs.len() as f64;
                let mut head = Tensor::zeros(d_out.shape().clone());
                for (i, p) in probs.iter().enumerate() {
                    let p = p.as_f64().clamp(PROB_EPS, 1.0 - PROB_EPS);
                    head.values_mut()[2 * i + 1] = T::from_f64_c(lambda / (n * (1.0 - p)));
                }
                let through = disc.backward(&head, &d_trace)?;
                grad = grad.add(&through)?;
            }
            grad
        }
    };
    net.backward(&grad, &trace)?;
    Ok(())
}

/// Maximum relative error between analytic gradients and central finite
/// differences over up to `max_samples` trainable parameters, sampled
/// without replacement from a SplitMix64 stream.
pub fn grad_check<T: Element>(
    net: &mut NetworkGraph<T>,
    input: &Tensor<T>,
    loss: &LossSpec<'_, T>,
    h: f64,
    max_samples: usize,
    seed: u64,
) -> Result<f64> {
    let count = net.trainable_param_count();
    if count == 0 {
        return Err(Error::invalid("network has no trainable parameters"));
    }
    analytic_grads(net, input, loss)?;

    // Sample parameter indices without replacement.
    let indices: Vec<usize> = if count <= max_samples {
        (0..count).collect()
    } else {
        let mut rng = SplitMix64::new(seed);
        let mut picked = std::collections::BTreeSet::new();
        while picked.len() < max_samples {
            picked.insert(rng.next_index(count));
        }
        picked.into_iter().collect()
    };

    // Base loss must be finite before probing around it.
    eval_loss(net, input, loss)?;

    let mut max_rel = 0.0f64;
    for idx in indices {
        let analytic = net.get_grad(idx)?.as_f64();
        let orig = net.get_param(idx)?;
        let hh = T::from_f64_c(h);
        net.set_param(idx, orig + hh)?;
        let out_up = net.forward(input)?;
        net.set_param(idx, orig - hh)?;
        let out_down = net.forward(input)?;
        net.set_param(idx, orig)?;
        let delta = loss_difference(&out_up, &out_down, loss)?;
        if !delta.is_finite() {
            return Err(Error::NonFinite(format!("finite difference at parameter {idx}")));
        }
        let fd = delta / (2.0 * h);
        let rel = (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-8);
        if rel > max_rel {
            max_rel = rel;
        }
    }
    Ok(max_rel)
}

#[derive(Debug, Clone)]
pub struct GradCheckCase {
    pub name: String,
    pub max_rel_err: f64,
    pub tolerance: f64,
}

impl GradCheckCase {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tolerance
    }
}

/// The standard f64 gradient-check suite: one small network per layer
/// kind, a purely linear net (checked to 1e-7), and the composed
/// upsampler at toy scale (8x8 -> 64x64 analog, checked to 1e-3).
pub fn standard_suite(samples: usize) -> Result<Vec<GradCheckCase>> {
    use crate::graph::{BuilderDescriptor, Layer, Topology};
    use crate::layers::{LayerSpec, LayerState};
    use crate::tensor::{FillRule, Shape};

    fn chain(
        specs: Vec<(&str, LayerSpec)>,
        in_shape: Shape,
        out_shape: Shape,
        seed: u64,
    ) -> NetworkGraph<f64> {
        let mut rng = SplitMix64::new(seed);
        let layers = specs
            .into_iter()
            .map(|(name, spec)| {
                let state = LayerState::init(&spec, &mut rng).expect("layer init");
                Layer { name: name.into(), spec, state }
            })
            .collect();
        NetworkGraph {
            descriptor: BuilderDescriptor {
                builder: "ln".into(),
                d: 0,
                depth: 0,
                seed,
                out_size: 0,
                channel_order: 0,
            },
            layers,
            topology: Topology::Chain,
            input_shape: in_shape,
            output_shape: out_shape,
        }
    }

    let rand = |shape: Shape, seed: u64| -> Result<Tensor<f64>> {
        Tensor::create(shape, FillRule::Uniform { lo: 0.0, hi: 1.0, seed })
    };

    let mut cases = Vec::new();
    // Kink-free nets take the classic h = 1e-4; nets with ReLU use a
    // smaller step so perturbations cannot flip units across zero.
    let mut run = |name: &str,
                   net: &mut NetworkGraph<f64>,
                   input: &Tensor<f64>,
                   loss: &LossSpec<'_, f64>,
                   h: f64,
                   tol: f64|
     -> Result<()> {
        let err = grad_check(net, input, loss, h, samples, 97)?;
        cases.push(GradCheckCase { name: name.to_string(), max_rel_err: err, tolerance: tol });
        Ok(())
    };

    {
        let mut net = chain(
            vec![("fc", LayerSpec::fully_connected(16, 8))],
            Shape::nchw(1, 1, 4, 4)?,
            Shape::new(vec![1, 8])?,
            5,
        );
        let input = rand(Shape::nchw(1, 1, 4, 4)?, 101)?;
        let target = rand(Shape::new(vec![1, 8])?, 102)?;
        run("linear-fc", &mut net, &input, &LossSpec::MeanSquared { target: &target }, 1e-4, 1e-7)?;
    }
    {
        let mut net = chain(
            vec![
                ("conv0", LayerSpec::conv(3, 1, 4)),
                ("relu0", LayerSpec::relu()),
                ("conv1", LayerSpec::conv(3, 4, 1)),
            ],
            Shape::nchw(1, 1, 6, 6)?,
            Shape::nchw(1, 1, 6, 6)?,
            8,
        );
        let input = rand(Shape::nchw(1, 1, 6, 6)?, 103)?;
        let target = rand(Shape::nchw(1, 1, 6, 6)?, 104)?;
        run("conv-relu", &mut net, &input, &LossSpec::MeanSquared { target: &target }, 1e-6, 1e-4)?;
    }
    {
        let mut net = chain(
            vec![("deconv", LayerSpec::deconv(4, 1, 2))],
            Shape::nchw(1, 1, 4, 4)?,
            Shape::nchw(1, 2, 16, 16)?,
            9,
        );
        let input = rand(Shape::nchw(1, 1, 4, 4)?, 105)?;
        let target = rand(Shape::nchw(1, 2, 16, 16)?, 106)?;
        run("deconv", &mut net, &input, &LossSpec::MeanSquared { target: &target }, 1e-4, 1e-4)?;
    }
    {
        let mut net = chain(
            vec![
                ("conv", LayerSpec::conv(3, 1, 2)),
                ("relu", LayerSpec::relu()),
                ("pool", LayerSpec::maxpool()),
                ("fc", LayerSpec::fully_connected(2 * 4 * 4, 6)),
            ],
            Shape::nchw(1, 1, 8, 8)?,
            Shape::new(vec![1, 6])?,
            10,
        );
        let input = rand(Shape::nchw(1, 1, 8, 8)?, 107)?;
        let target = rand(Shape::new(vec![1, 6])?, 108)?;
        run("maxpool", &mut net, &input, &LossSpec::MeanSquared { target: &target }, 1e-6, 1e-4)?;
    }
    {
        let mut net = chain(
            vec![
                ("fc0", LayerSpec::fully_connected(9, 4)),
                ("relu", LayerSpec::relu()),
                ("fc1", LayerSpec::fully_connected(4, 2)),
                ("softmax", LayerSpec::softmax2()),
            ],
            Shape::nchw(1, 1, 3, 3)?,
            Shape::new(vec![1, 2])?,
            11,
        );
        let input = rand(Shape::nchw(1, 1, 3, 3)?, 109)?;
        let target = rand(Shape::new(vec![1, 2])?, 110)?;
        run("softmax2", &mut net, &input, &LossSpec::MeanSquared { target: &target }, 1e-6, 1e-4)?;
    }
    {
        // Two-stream graph exercises the concat layer and both streams.
        let mut net = crate::models::build_gn_sized::<f64>(4, 16, 12)?;
        let input = rand(Shape::nchw(1, 1, 4, 4)?, 111)?;
        let target = rand(Shape::nchw(1, 2, 16, 16)?, 112)?;
        run("concat-gn", &mut net, &input, &LossSpec::MeanSquared { target: &target }, 1e-6, 1e-4)?;
    }
    {
        // The composed upsampler at the 8x toy scale.
        let mut net = crate::models::build_gln_sized::<f64>(8, 4, 64, 13)?;
        let input = rand(Shape::nchw(1, 1, 8, 8)?, 113)?;
        let target = rand(Shape::nchw(1, 1, 64, 64)?, 114)?;
        run("gln-8x-toy", &mut net, &input, &LossSpec::MeanSquared { target: &target }, 1e-6, 1e-4)?;
    }
    {
        // Generator loss through a frozen discriminator.
        let mut net = crate::models::build_gln_sized::<f64>(4, 4, 16, 14)?;
        let disc = crate::models::build_discriminator_sized::<f64>(16, 15)?;
        let input = rand(Shape::nchw(1, 1, 4, 4)?, 115)?;
        let target = rand(Shape::nchw(1, 1, 16, 16)?, 116)?;
        let loss = LossSpec::Generator { disc: &disc, target: &target, lambda: 2.0 };
        run("generator-loss", &mut net, &input, &loss, 1e-6, 1e-4)?;
    }
    Ok(cases)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{BuilderDescriptor, Layer, Topology};
    use crate::layers::{LayerSpec, LayerState};
    use crate::models::{build_discriminator_sized, build_gln_sized};
    use crate::tensor::{FillRule, Shape};

    fn chain_net(specs: Vec<(&str, LayerSpec)>, in_shape: Shape, out_shape: Shape, seed: u64) -> NetworkGraph<f64> {
        let mut rng = SplitMix64::new(seed);
        let layers = specs
            .into_iter()
            .map(|(name, spec)| {
                let state = LayerState::init(&spec, &mut rng).unwrap();
                Layer { name: name.into(), spec, state }
            })
            .collect();
        NetworkGraph {
            descriptor: BuilderDescriptor {
                builder: "ln".into(),
                d: 0,
                depth: 0,
                seed,
                out_size: 0,
                channel_order: 0,
            },
            layers,
            topology: Topology::Chain,
            input_shape: in_shape,
            output_shape: out_shape,
        }
    }

    fn rand(shape: Shape, seed: u64) -> Tensor<f64> {
        Tensor::create(shape, FillRule::Uniform { lo: -1.0, hi: 1.0, seed }).unwrap()
    }

    #[test]
    fn linear_fc_network_is_exact_up_to_rounding() {
        let mut net = chain_net(
            vec![("fc", LayerSpec::fully_connected(16, 8))],
            Shape::nchw(1, 1, 4, 4).unwrap(),
            Shape::new(vec![1, 8]).unwrap(),
            5,
        );
        let input = rand(Shape::nchw(1, 1, 4, 4).unwrap(), 6);
        let target = rand(Shape::new(vec![1, 8]).unwrap(), 7);
        let err = grad_check(&mut net, &input, &LossSpec::MeanSquared { target: &target }, 1e-4, 200, 1)
            .unwrap();
        assert!(err < 1e-7, "linear net error {err}");
    }

    #[test]
    fn conv_relu_toy_net_within_tolerance() {
        let mut net = chain_net(
            vec![
                ("conv0", LayerSpec::conv(3, 1, 4)),
                ("relu0", LayerSpec::relu()),
                ("conv1", LayerSpec::conv(3, 4, 1)),
            ],
            Shape::nchw(1, 1, 6, 6).unwrap(),
            Shape::nchw(1, 1, 6, 6).unwrap(),
            8,
        );
        let input = rand(Shape::nchw(1, 1, 6, 6).unwrap(), 9);
        let target = rand(Shape::nchw(1, 1, 6, 6).unwrap(), 10);
        let err = grad_check(&mut net, &input, &LossSpec::MeanSquared { target: &target }, 1e-4, 200, 2)
            .unwrap();
        assert!(err < 1e-4, "conv net error {err}");
    }

    #[test]
    fn composed_upsampler_toy_scale() {
        let mut net = build_gln_sized::<f64>(8, 4, 32, 3).unwrap();
        let input = Tensor::create(
            Shape::nchw(1, 1, 4, 4).unwrap(),
            FillRule::Uniform { lo: 0.0, hi: 1.0, seed: 11 },
        )
        .unwrap();
        let target = Tensor::create(
            Shape::nchw(1, 1, 32, 32).unwrap(),
            FillRule::Uniform { lo: 0.0, hi: 1.0, seed: 12 },
        )
        .unwrap();
        let err = grad_check(&mut net, &input, &LossSpec::MeanSquared { target: &target }, 1e-4, 60, 3)
            .unwrap();
        assert!(err < 1e-3, "composed net error {err}");
    }

    #[test]
    fn generator_loss_through_frozen_discriminator() {
        let mut net = build_gln_sized::<f64>(4, 4, 16, 4).unwrap();
        let disc = build_discriminator_sized::<f64>(16, 5).unwrap();
        let input = Tensor::create(
            Shape::nchw(1, 1, 4, 4).unwrap(),
            FillRule::Uniform { lo: 0.0, hi: 1.0, seed: 13 },
        )
        .unwrap();
        let target = Tensor::create(
            Shape::nchw(1, 1, 16, 16).unwrap(),
            FillRule::Uniform { lo: 0.0, hi: 1.0, seed: 14 },
        )
        .unwrap();
        let loss = LossSpec::Generator { disc: &disc, target: &target, lambda: 2.0 };
        let err = grad_check(&mut net, &input, &loss, 1e-4, 60, 4).unwrap();
        assert!(err < 1e-3, "generator loss error {err}");
    }

    #[test]
    fn non_finite_loss_is_an_error() {
        let mut net = chain_net(
            vec![("fc", LayerSpec::fully_connected(4, 2))],
            Shape::nchw(1, 1, 2, 2).unwrap(),
            Shape::new(vec![1, 2]).unwrap(),
            20,
        );
        net.layers[0]
            .state
            .params_mut()
            .unwrap()
            .weights
            .values_mut()[0] = f64::NAN;
        let input = rand(Shape::nchw(1, 1, 2, 2).unwrap(), 21);
        let target = rand(Shape::new(vec![1, 2]).unwrap(), 22);
        let r = grad_check(&mut net, &input, &LossSpec::MeanSquared { target: &target }, 1e-4, 10, 5);
        assert!(r.is_err());
    }
}
