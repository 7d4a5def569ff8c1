//! Losses, SGD with momentum, the reconstruction training stage, and the
//! adversarial fine-tuning alternation.
//!
//! The reconstruction loss sums squared error over pixels and averages
//! over the batch only, so learning rates are tied to the pixel scale:
//! the canonical rate is 1e-8 at 0-255 scale, which rescales to about
//! 6.5e-4 (1e-8 * 255^2) at the default 0-1 scale.
//!
//! Training requires exclusive ownership of the model (and discriminator);
//! batch order is a pure function of the config seed, so fixed-seed runs
//! are bitwise reproducible.

use crate::element::Element;
use crate::error::{Error, Result};
use crate::graph::NetworkGraph;
use crate::layers::LayerState;
use crate::models::reconstructed_probability;
use crate::rng::SplitMix64;
use crate::tensor::{Shape, Tensor};

pub use crate::image_io::PixelScale;

/// Probabilities entering the log losses are clamped to
/// `[PROB_EPS, 1 - PROB_EPS]`; the losses are undefined at saturation.
pub const PROB_EPS: f64 = 1e-7;

/// The fixed learning rate equivalent to 1e-8 at byte scale.
pub fn default_learning_rate(scale: PixelScale) -> f64 {
    match scale {
        PixelScale::Unit => 1e-8 * 255.0 * 255.0,
        PixelScale::Byte => 1e-8,
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub iterations: usize,
    pub seed: u64,
    pub pixel_scale: PixelScale,
}

impl TrainConfig {
    /// Mini-batches of 5, momentum 0.9, and the scale-matched fixed
    /// learning rate.
    pub fn new(iterations: usize, seed: u64, pixel_scale: PixelScale) -> Self {
        TrainConfig {
            batch_size: 5,
            learning_rate: default_learning_rate(pixel_scale),
            momentum: 0.9,
            iterations,
            seed,
            pixel_scale,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::invalid("learning rate must be finite and >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LambdaRule {
    Explicit,
    /// Pick lambda so the initial adversarial term equals one tenth of
    /// the reconstruction loss.
    TenthOfMse,
}

#[derive(Debug, Clone)]
pub struct AdvConfig {
    pub lambda: f64,
    pub d_steps: usize,
    pub g_steps: usize,
    pub switches: usize,
    pub lambda_rule: LambdaRule,
}

impl AdvConfig {
    /// Canonical alternation counts: 10 discriminator steps, 50 generator
    /// steps, 10000 switches.
    pub fn canonical(lambda: f64) -> Self {
        AdvConfig {
            lambda,
            d_steps: 10,
            g_steps: 50,
            switches: 10_000,
            lambda_rule: LambdaRule::Explicit,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_steps == 0 || self.g_steps == 0 || self.switches == 0 {
            return Err(Error::invalid("d_steps, g_steps, switches must be >= 1"));
        }
        if self.lambda.is_nan() || self.lambda < 0.0 {
            return Err(Error::invalid(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

/// Mean-squared reconstruction loss: squared error summed over pixels,
/// averaged over the batch dimension only.
pub fn loss_ms<T: Element>(outputs: &Tensor<T>, targets: &Tensor<T>) -> Result<f64> {
    if outputs.shape() != targets.shape() {
        return Err(Error::shape(format!(
            "loss_ms: {} vs {}",
            outputs.shape(),
            targets.shape()
        )));
    }
    let n = outputs.shape().dims()[0] as f64;
    let sum: f64 = outputs
        .values()
        .iter()
        .zip(targets.values())
        .map(|(&o, &t)| {
            let d = o.as_f64() - t.as_f64();
            d * d
        })
        .sum();
    Ok(sum / n)
}

/// Loss plus its gradient with respect to the outputs: `(2/n)(out - target)`.
pub fn loss_ms_grad<T: Element>(outputs: &Tensor<T>, targets: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
    let loss = loss_ms(outputs, targets)?;
    let n = outputs.shape().dims()[0] as f64;
    let scale = T::from_f64_c(2.0 / n);
    let grad = outputs.sub(targets)?.scale(scale);
    Ok((loss, grad))
}

fn checked_prob<T: Element>(p: T) -> Result<f64> {
    let p = p.as_f64();
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::invalid(format!("probability {p} outside (0, 1)")));
    }
    Ok(p.clamp(PROB_EPS, 1.0 - PROB_EPS))
}

/// Discriminator loss. `d_real`/`d_fake` are the probabilities the
/// discriminator assigns to "reconstructed" on true high-resolution
/// images and on reconstructions; it is trained to score fakes high:
/// `-(1/2n) sum[log(1 - D(real)) + log(D(fake))]`.
pub fn loss_d<T: Element>(d_real: &[T], d_fake: &[T]) -> Result<f64> {
    if d_real.len() != d_fake.len() || d_real.is_empty() {
        return Err(Error::invalid("loss_d needs equal, non-empty real/fake batches"));
    }
    let n = d_real.len() as f64;
    let mut acc = 0.0;
    for (&pr, &pf) in d_real.iter().zip(d_fake) {
        acc += (1.0 - checked_prob(pr)?).ln() + checked_prob(pf)?.ln();
    }
    Ok(-acc / (2.0 * n))
}

/// [`loss_d`] with gradients with respect to each probability.
pub fn loss_d_grad<T: Element>(d_real: &[T], d_fake: &[T]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let loss = loss_d(d_real, d_fake)?;
    let n = d_real.len() as f64;
    let g_real = d_real
        .iter()
        .map(|&p| Ok(1.0 / (2.0 * n * (1.0 - checked_prob(p)?))))
        .collect::<Result<Vec<f64>>>()?;
    let g_fake = d_fake
        .iter()
        .map(|&p| Ok(-1.0 / (2.0 * n * checked_prob(p)?)))
        .collect::<Result<Vec<f64>>>()?;
    Ok((loss, g_real, g_fake))
}

/// The adversarial term of the generator loss: `-(1/n) sum log(1 - D(G))`.
/// Positive, and increasing in every probability.
pub fn adversarial_term<T: Element>(d_fake: &[T]) -> Result<f64> {
    if d_fake.is_empty() {
        return Err(Error::invalid("adversarial term of an empty batch"));
    }
    let n = d_fake.len() as f64;
    let mut acc = 0.0;
    for &p in d_fake {
        acc += (1.0 - checked_prob(p)?).ln();
    }
    Ok(-acc / n)
}

/// Combined generator loss: reconstruction plus `lambda` times the
/// adversarial term.
pub fn loss_g<T: Element>(
    outputs: &Tensor<T>,
    targets: &Tensor<T>,
    d_fake: &[T],
    lambda: f64,
) -> Result<f64> {
    let ms = loss_ms(outputs, targets)?;
    if lambda == 0.0 {
        return Ok(ms);
    }
    Ok(ms + lambda * adversarial_term(d_fake)?)
}

// ---------------------------------------------------------------------------
// SGD with momentum
// ---------------------------------------------------------------------------

/// One momentum-SGD update: `v <- momentum*v - lr*g; theta <- theta + v`.
/// Momentum buffers persist across steps; gradients are zeroed after the
/// step. Errors (leaving parameters untouched is not guaranteed) if the
/// update goes non-finite.
pub fn sgd_step<T: Element>(state: &mut LayerState<T>, lr: f64, momentum: f64) -> Result<()> {
    let Some(p) = state.params.as_mut() else {
        return Ok(());
    };
    let lr = T::from_f64_c(lr);
    let m = T::from_f64_c(momentum);
    let mut finite = true;
    for ((theta, v), g) in p
        .weights
        .values_mut()
        .iter_mut()
        .zip(p.vel_w.values_mut())
        .chain(
            p.biases
                .values_mut()
                .iter_mut()
                .zip(p.vel_b.values_mut()),
        )
        .zip(p.grad_w.values().iter().chain(p.grad_b.values()))
    {
        *v = m * *v - lr * *g;
        *theta = *theta + *v;
        finite &= theta.is_finite();
    }
    p.zero_grads();
    if !finite {
        return Err(Error::NonFinite("sgd_step produced a non-finite parameter".into()));
    }
    Ok(())
}

/// Apply [`sgd_step`] to every trainable layer of a graph; frozen layers
/// only have their gradients cleared.
pub fn sgd_step_graph<T: Element>(graph: &mut NetworkGraph<T>, lr: f64, momentum: f64) -> Result<()> {
    for layer in &mut graph.layers {
        if layer.spec.frozen {
            if let Some(p) = layer.state.params.as_mut() {
                p.zero_grads();
            }
            continue;
        }
        sgd_step(&mut layer.state, lr, momentum)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Batch sampling
// ---------------------------------------------------------------------------

/// Seeded epoch sampler: a fresh permutation per epoch, batches drawn
/// without replacement, final partial batch dropped.
pub struct BatchSampler {
    order: Vec<usize>,
    pos: usize,
    batch: usize,
    rng: SplitMix64,
}

impl BatchSampler {
    pub fn new(n: usize, batch: usize, seed: u64) -> Result<Self> {
        if batch == 0 || batch > n {
            return Err(Error::invalid(format!(
                "batch size {batch} incompatible with dataset of {n} pairs"
            )));
        }
        let mut s = BatchSampler {
            order: (0..n).collect(),
            pos: 0,
            batch,
            rng: SplitMix64::new(seed),
        };
        s.reshuffle();
        Ok(s)
    }

    fn reshuffle(&mut self) {
        self.rng.shuffle(&mut self.order);
        self.pos = 0;
    }

    pub fn next_batch(&mut self) -> Vec<usize> {
        if self.pos + self.batch > self.order.len() {
            self.reshuffle();
        }
        let b = self.order[self.pos..self.pos + self.batch].to_vec();
        self.pos += self.batch;
        b
    }
}

/// One training example: the low-resolution input and its target.
type Pair<T> = (Tensor<T>, Tensor<T>);

/// Stack selected pairs into `[B, 1, H, W]` input/target batches.
fn stack_batch<T: Element>(pairs: &[Pair<T>], idxs: &[usize]) -> Result<(Tensor<T>, Tensor<T>)> {
    let stack = |pick: fn(&Pair<T>) -> &Tensor<T>| -> Result<Tensor<T>> {
        let first = pick(&pairs[idxs[0]]);
        let (_, c, h, w) = first.shape().as_nchw()?;
        let mut out = Tensor::zeros(Shape::nchw(idxs.len(), c, h, w)?);
        let plane = c * h * w;
        for (slot, &i) in idxs.iter().enumerate() {
            let t = pick(&pairs[i]);
            if t.shape() != first.shape() {
                return Err(Error::shape("stack_batch: inconsistent pair shapes"));
            }
            out.values_mut()[slot * plane..(slot + 1) * plane].copy_from_slice(t.values());
        }
        Ok(out)
    };
    Ok((stack(|p| &p.0)?, stack(|p| &p.1)?))
}

// ---------------------------------------------------------------------------
// Reconstruction training
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterStat {
    pub iteration: usize,
    pub loss: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TrainLog {
    pub entries: Vec<IterStat>,
}

impl TrainLog {
    /// One `iter <tab> loss` line per iteration.
    pub fn to_tsv(&self) -> String {
        let mut s = String::new();
        for e in &self.entries {
            s.push_str(&format!("{}\t{}\n", e.iteration, e.loss));
        }
        s
    }
}

/// Minimize the reconstruction loss by mini-batch SGD. The observer runs
/// after every update (for checkpoint cadence and progress reporting);
/// returning an error from it aborts training.
pub fn train_reconstruction<T: Element>(
    model: &mut NetworkGraph<T>,
    pairs: &[(Tensor<T>, Tensor<T>)],
    cfg: &TrainConfig,
    mut observer: impl FnMut(usize, f64, &NetworkGraph<T>) -> Result<()>,
) -> Result<TrainLog> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(Error::invalid("empty training set"));
    }
    let mut sampler = BatchSampler::new(pairs.len(), cfg.batch_size, cfg.seed)?;
    let mut log = TrainLog::default();
    let mut initial = None;
    for iteration in 0..cfg.iterations {
        let idxs = sampler.next_batch();
        let (x, target) = stack_batch(pairs, &idxs)?;
        let (out, trace) = model.forward_trace(&x)?;
        let (loss, grad) = loss_ms_grad(&out, &target)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("loss at iteration {iteration}")));
        }
        let initial = *initial.get_or_insert(loss);
        if loss > 1e3 * initial {
            return Err(Error::Divergence { iteration, loss, initial });
        }
        model.backward(&grad, &trace)?;
        sgd_step_graph(model, cfg.learning_rate, cfg.momentum)?;
        log.entries.push(IterStat { iteration, loss });
        observer(iteration, loss, model)?;
    }
    Ok(log)
}

// ---------------------------------------------------------------------------
// Adversarial fine-tuning
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SwitchStat {
    pub switch: usize,
    /// Cumulative generator iterations at the end of this switch.
    pub g_iterations: usize,
    pub loss_ms: f64,
    pub loss_d: f64,
    pub mean_d: f64,
}

#[derive(Debug, Clone)]
pub struct FinetuneLog {
    pub lambda: f64,
    pub entries: Vec<SwitchStat>,
}

impl FinetuneLog {
    /// One `iter <tab> loss <tab> d_loss <tab> mean_D` line per switch.
    pub fn to_tsv(&self) -> String {
        let mut s = String::new();
        for e in &self.entries {
            s.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                e.g_iterations, e.loss_ms, e.loss_d, e.mean_d
            ));
        }
        s
    }
}

/// Discriminator probabilities on a batch, plus the trace for backward.
fn disc_probs<T: Element>(
    disc: &NetworkGraph<T>,
    images: &Tensor<T>,
) -> Result<(Vec<T>, Tensor<T>, crate::graph::Trace<T>)> {
    let (out, trace) = disc.forward_trace(images)?;
    let probs = reconstructed_probability(&out)?;
    Ok((probs, out, trace))
}

/// Gradient tensor on the discriminator's `[N, 2]` output when the loss
/// depends only on the "reconstructed" probability (class 1).
fn prob_grad_tensor<T: Element>(grads: &[f64]) -> Result<Tensor<T>> {
    let mut g = Tensor::zeros(Shape::new(vec![grads.len(), 2])?);
    for (i, &v) in grads.iter().enumerate() {
        g.values_mut()[2 * i + 1] = T::from_f64_c(v);
    }
    Ok(g)
}

/// Alternate discriminator and generator updates. Per switch: `d_steps`
/// SGD updates of the discriminator on its loss with the model frozen,
/// then `g_steps` updates of the model on the combined loss with the
/// discriminator frozen. The generator's batch stream is seeded exactly
/// like [`train_reconstruction`], so a `lambda = 0` run replays the pure
/// reconstruction schedule.
pub fn finetune_adversarial<T: Element>(
    model: &mut NetworkGraph<T>,
    disc: &mut NetworkGraph<T>,
    pairs: &[(Tensor<T>, Tensor<T>)],
    cfg: &TrainConfig,
    adv: &AdvConfig,
    mut observer: impl FnMut(&SwitchStat) -> Result<()>,
) -> Result<FinetuneLog> {
    cfg.validate()?;
    adv.validate()?;
    if pairs.is_empty() {
        return Err(Error::invalid("empty training set"));
    }
    let mut g_sampler = BatchSampler::new(pairs.len(), cfg.batch_size, cfg.seed)?;
    let mut d_sampler = BatchSampler::new(
        pairs.len(),
        cfg.batch_size,
        cfg.seed ^ 0x9E37_79B9_7F4A_7C15,
    )?;

    let lambda = match adv.lambda_rule {
        LambdaRule::Explicit => adv.lambda,
        LambdaRule::TenthOfMse => {
            // Evaluate the initial reconstruction loss and adversarial
            // term over the whole dataset, one pair at a time.
            let mut ms_total = 0.0;
            let mut probs: Vec<T> = Vec::with_capacity(pairs.len());
            for (lr, hr) in pairs {
                let out = model.forward(lr)?;
                ms_total += loss_ms(&out, hr)?;
                let (p, _, _) = disc_probs(disc, &out)?;
                probs.push(p[0]);
            }
            let ms = ms_total / pairs.len() as f64;
            let term = adversarial_term(&probs)?;
            if term <= 0.0 {
                return Err(Error::invalid(
                    "cannot apply the tenth-of-mse rule: zero adversarial term",
                ));
            }
            ms / (10.0 * term)
        }
    };

    let mut log = FinetuneLog { lambda, entries: Vec::new() };
    let mut g_iterations = 0usize;
    for switch in 0..adv.switches {
        // Discriminator phase; model frozen.
        let mut last_ld = f64::NAN;
        for _ in 0..adv.d_steps {
            let idxs = d_sampler.next_batch();
            let (x, real) = stack_batch(pairs, &idxs)?;
            let fakes = model.forward(&x)?;
            let (p_fake, _, tr_fake) = disc_probs(disc, &fakes)?;
            let (p_real, _, tr_real) = disc_probs(disc, &real)?;
            let (ld, g_real, g_fake) = loss_d_grad(&p_real, &p_fake)?;
            if !ld.is_finite() {
                return Err(Error::NonFinite(format!("discriminator loss at switch {switch}")));
            }
            disc.backward(&prob_grad_tensor(&g_fake)?, &tr_fake)?;
            disc.backward(&prob_grad_tensor(&g_real)?, &tr_real)?;
            sgd_step_graph(disc, cfg.learning_rate, cfg.momentum)?;
            last_ld = ld;
        }

        // Generator phase; discriminator frozen.
        let mut last_ms = f64::NAN;
        let mut last_fakes = None;
        for _ in 0..adv.g_steps {
            let idxs = g_sampler.next_batch();
            let (x, target) = stack_batch(pairs, &idxs)?;
            let (out, trace) = model.forward_trace(&x)?;
            let (ms, mut grad) = loss_ms_grad(&out, &target)?;
            if !ms.is_finite() {
                return Err(Error::NonFinite(format!("generator loss at switch {switch}")));
            }
            if lambda > 0.0 {
                let (p_fake, _, tr_d) = disc_probs(disc, &out)?;
                let n = p_fake.len() as f64;
                let g_probs: Vec<f64> = p_fake
                    .iter()
                    .map(|&p| Ok(lambda / (n * (1.0 - checked_prob(p)?))))
                    .collect::<Result<Vec<f64>>>()?;
                let through_disc = disc.backward(&prob_grad_tensor(&g_probs)?, &tr_d)?;
                disc.zero_grads();
                grad = grad.add(&through_disc)?;
            }
            model.backward(&grad, &trace)?;
            sgd_step_graph(model, cfg.learning_rate, cfg.momentum)?;
            last_ms = ms;
            last_fakes = Some(out);
            g_iterations += 1;
        }

        // Monitor D(G(x)) on the final generator batch of this switch.
        let mean_d = match last_fakes {
            Some(fakes) => {
                let (p, _, _) = disc_probs(disc, &fakes)?;
                p.iter().map(|v| v.as_f64()).sum::<f64>() / p.len() as f64
            }
            None => f64::NAN,
        };
        let stat = SwitchStat { switch, g_iterations, loss_ms: last_ms, loss_d: last_ld, mean_d };
        observer(&stat)?;
        log.entries.push(stat);
    }
    Ok(log)
}
