//! Acceptance suite: one test per criterion, each printing a PASS line
//! with the measured numbers (run with `--nocapture` to see them).
//!
//! Paper-scale training is out of reach here; learning criteria run at
//! desk scale on synthetic face-like images.

use std::time::Instant;

use gln_core::checkpoint::{decode, encode};
use gln_core::degrade::{build_k_matrix, degrade, DegradationOperator};
use gln_core::gradcheck::standard_suite;
use gln_core::graph::NetworkGraph;
use gln_core::layers::{LayerKind, LayerSpec, LayerState};
use gln_core::metrics::{evaluate, psnr, ssim, wpsnr, EvalPair};
use gln_core::models::{
    build_discriminator_sized, build_gln, build_gln_sized, build_gn, build_ln, receptive_field,
};
use gln_core::rng::SplitMix64;
use gln_core::tensor::{FillRule, Shape, Tensor};
use gln_core::train::{
    finetune_adversarial, train_reconstruction, AdvConfig, LambdaRule, PixelScale, TrainConfig,
};
use gln_core::Element;

fn rand_image<T: Element>(h: usize, w: usize, seed: u64) -> Tensor<T> {
    Tensor::create(
        Shape::nchw(1, 1, h, w).unwrap(),
        FillRule::Uniform { lo: 0.0, hi: 1.0, seed },
    )
    .unwrap()
}

/// Synthetic face-like toy image: smooth blob base plus sharp-edged
/// rectangles and strong high-frequency texture over the central face
/// area, tapering to a plain margin like an aligned crop.
fn toy_face(size: usize, rng: &mut SplitMix64) -> Tensor<f32> {
    let mut img = vec![0.0f64; size * size];
    let s = size as f64;
    let (gx, gy) = (rng.uniform::<f64>(-0.15, 0.15), rng.uniform::<f64>(-0.15, 0.15));
    let base = rng.uniform::<f64>(0.35, 0.55);
    for y in 0..size {
        for x in 0..size {
            img[y * size + x] = base + gx * (x as f64 / s - 0.5) + gy * (y as f64 / s - 0.5);
        }
    }
    let blob = |cx: f64, cy: f64, sx: f64, sy: f64, amp: f64, img: &mut [f64]| {
        for y in 0..size {
            for x in 0..size {
                let dx = (x as f64 / s - cx) / sx;
                let dy = (y as f64 / s - cy) / sy;
                img[y * size + x] += amp * (-(dx * dx + dy * dy) / 2.0).exp();
            }
        }
    };
    let cx = 0.5 + rng.uniform::<f64>(-0.06, 0.06);
    let cy = 0.5 + rng.uniform::<f64>(-0.06, 0.06);
    blob(cx, cy, 0.28, 0.36, rng.uniform(0.25, 0.4), &mut img);
    blob(cx - 0.14, cy - 0.12, 0.05, 0.035, rng.uniform(-0.45, -0.3), &mut img);
    blob(cx + 0.14, cy - 0.12, 0.05, 0.035, rng.uniform(-0.45, -0.3), &mut img);
    blob(cx, cy + 0.2, 0.12, 0.04, rng.uniform(-0.35, -0.2), &mut img);

    let mask = |x: usize, y: usize| -> f64 {
        let r = (x as f64 / s - 0.5).abs().max((y as f64 / s - 0.5).abs());
        if r < 0.33 {
            1.0
        } else if r < 0.46 {
            let t = (r - 0.33) / 0.13;
            0.5 * (1.0 + (std::f64::consts::PI * t).cos())
        } else {
            0.0
        }
    };
    let m = size / 8;
    for _ in 0..16 {
        let x0 = m + rng.next_index(size * 3 / 4);
        let y0 = m + rng.next_index(size * 3 / 4);
        let wd = 2 + rng.next_index(size / 6);
        let ht = 2 + rng.next_index(size / 6);
        let amp = rng.uniform::<f64>(-0.4, 0.4);
        for y in y0..(y0 + ht).min(size - m) {
            for x in x0..(x0 + wd).min(size - m) {
                img[y * size + x] += amp * mask(x, y);
            }
        }
    }
    for band in 0..3 {
        let fx = rng.uniform::<f64>(0.5, 2.4) + band as f64;
        let fy = rng.uniform::<f64>(0.5, 2.4) + band as f64;
        let ph = rng.uniform::<f64>(0.0, std::f64::consts::TAU);
        let amp = rng.uniform::<f64>(0.12, 0.2);
        for y in 0..size {
            for x in 0..size {
                img[y * size + x] +=
                    amp * mask(x, y) * ((fx * x as f64 + ph).sin() * (fy * y as f64 + ph).cos());
            }
        }
    }
    let vals: Vec<f32> = img.iter().map(|v| v.clamp(0.0, 1.0) as f32).collect();
    Tensor::from_values(Shape::nchw(1, 1, size, size).unwrap(), vals).unwrap()
}

fn toy_pairs(size: usize, d: usize, n: usize, seed: u64) -> Vec<(Tensor<f32>, Tensor<f32>)> {
    let op = DegradationOperator::with_default_sigma(d).unwrap();
    let mut rng = SplitMix64::new(seed);
    (0..n)
        .map(|_| {
            let hr = toy_face(size, &mut rng);
            (degrade(&hr, &op).unwrap(), hr)
        })
        .collect()
}

#[test]
fn criterion_1_gradient_correctness() {
    let started = Instant::now();
    let cases = standard_suite(100).expect("suite runs");
    let elapsed = started.elapsed();
    let mut all_pass = true;
    let mut worst = ("", 0.0f64);
    for c in &cases {
        if c.max_rel_err > worst.1 {
            worst = (Box::leak(c.name.clone().into_boxed_str()), c.max_rel_err);
        }
        if !c.passed() {
            all_pass = false;
            println!("  gradient check {} FAILED: {:.3e} > {:.0e}", c.name, c.max_rel_err, c.tolerance);
        }
    }
    println!(
        "ACCEPTANCE 1 gradient-correctness: {} ({} cases incl. composed 8x toy net, worst {} at {:.2e}, {:.1?})",
        if all_pass && elapsed.as_secs() < 120 { "PASS" } else { "FAIL" },
        cases.len(),
        worst.0,
        worst.1,
        elapsed
    );
    assert!(all_pass);
    assert!(elapsed.as_secs() < 120, "took {elapsed:?}, budget 2 min");
}

#[test]
fn criterion_2_architecture_fidelity() {
    let started = Instant::now();

    // Global network tables for both factors: deconv stream plus the fc
    // chain with its 256-wide code layer, concatenated to 2 channels.
    for (d, in_size, widths) in [(4usize, 32usize, [512, 256, 512]), (8, 16, [256, 256, 256])] {
        let gn = build_gn::<f32>(d, 1).unwrap();
        let fc_dims: Vec<(usize, usize)> = gn
            .layers
            .iter()
            .filter(|l| l.spec.kind == LayerKind::FullyConnected)
            .map(|l| (l.spec.in_channels, l.spec.out_channels))
            .collect();
        assert_eq!(
            fc_dims,
            vec![
                (in_size * in_size, widths[0]),
                (widths[0], widths[1]),
                (widths[1], widths[2]),
                (widths[2], 16384)
            ],
            "{d}x detail stream"
        );
        let deconv = &gn.layers[0].spec;
        assert_eq!((deconv.kernel, deconv.stride, deconv.pad), (2 * d, d, d / 2));
        let out = gn.forward(&rand_image(in_size, in_size, 3)).unwrap();
        assert_eq!(out.shape().dims(), &[1, 2, 128, 128]);
    }

    // Refinement stacks row by row.
    let expect_stacks: [(usize, Vec<(usize, usize)>); 3] = [
        (4, vec![(5, 16), (7, 64), (5, 16), (5, 1)]),
        (6, vec![(5, 16), (7, 32), (7, 64), (7, 32), (5, 16), (5, 1)]),
        (
            8,
            vec![(5, 16), (7, 32), (7, 64), (7, 64), (7, 64), (7, 32), (5, 16), (5, 1)],
        ),
    ];
    for (depth, rows) in &expect_stacks {
        let ln = build_ln::<f32>(*depth, 2, 1).unwrap();
        let got: Vec<(usize, usize)> = ln
            .layers
            .iter()
            .filter(|l| l.spec.kind == LayerKind::Conv)
            .map(|l| (l.spec.kernel, l.spec.out_channels))
            .collect();
        assert_eq!(&got, rows, "refinement stack depth {depth}");
    }

    // Discriminator: conv5-16/pool twice, fc-50, fc-2, softmax.
    let disc = build_discriminator_sized::<f32>(128, 1).unwrap();
    let kinds: Vec<LayerKind> = disc.layers.iter().map(|l| l.spec.kind).collect();
    assert_eq!(
        kinds,
        vec![
            LayerKind::Conv,
            LayerKind::Relu,
            LayerKind::MaxPool,
            LayerKind::Conv,
            LayerKind::Relu,
            LayerKind::MaxPool,
            LayerKind::FullyConnected,
            LayerKind::Relu,
            LayerKind::FullyConnected,
            LayerKind::Softmax2
        ]
    );
    assert_eq!(disc.layers[6].spec.in_channels, 16384);
    assert_eq!(disc.layers[8].spec.out_channels, 2);

    // Receptive fields.
    let rf8 = receptive_field(&build_ln::<f32>(8, 2, 0).unwrap()).unwrap();
    let rf6 = receptive_field(&build_ln::<f32>(6, 2, 0).unwrap()).unwrap();
    let rf4 = receptive_field(&build_ln::<f32>(4, 2, 0).unwrap()).unwrap();
    assert_eq!((rf8, rf6, rf4), (43, 31, 19));

    let elapsed = started.elapsed();
    println!(
        "ACCEPTANCE 2 architecture-fidelity: {} (tables reproduced; rf 43/31/19; {:.1?})",
        if elapsed.as_secs() < 1 { "PASS" } else { "FAIL" },
        elapsed
    );
    assert!(elapsed.as_secs() < 1, "took {elapsed:?}, budget 1 s");
}

#[test]
fn criterion_3_degradation_operator_equivalence() {
    let mut worst = 0.0f64;
    let mut worst_row_dev = 0.0f64;
    for (d, size) in [(4usize, 32usize), (4, 64), (8, 32), (8, 64)] {
        let op = DegradationOperator::with_default_sigma(d).unwrap();
        let k = build_k_matrix(&op, size, size).unwrap();
        for row in 0..k.rows {
            worst_row_dev = worst_row_dev.max((k.row_sum(row) - 1.0).abs());
        }
        for seed in 0..5u64 {
            let img = rand_image::<f64>(size, size, 1000 + seed);
            let via_pipeline = degrade(&img, &op).unwrap();
            let via_matrix = k.matvec(img.values()).unwrap();
            for (a, b) in via_pipeline.values().iter().zip(&via_matrix) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    let pass = worst < 1e-6 && worst_row_dev < 1e-9;
    println!(
        "ACCEPTANCE 3 degradation-equivalence: {} (20 images, max |pipeline - K.x| {:.2e}, max row-sum dev {:.2e})",
        if pass { "PASS" } else { "FAIL" },
        worst,
        worst_row_dev
    );
    assert!(worst < 1e-6);
    assert!(worst_row_dev < 1e-9);
}

#[test]
fn criterion_4_bilinear_deconv_identity() {
    // Direct bilinear-interpolation oracle: each output samples the
    // source at half-pixel-aligned coordinates; out-of-grid taps drop.
    fn bilinear_oracle(input: &Tensor<f64>, d: usize) -> Tensor<f64> {
        let (_, _, h, w) = input.shape().as_nchw().unwrap();
        let mut out = Tensor::zeros(Shape::nchw(1, 1, h * d, w * d).unwrap());
        for oy in 0..h * d {
            for ox in 0..w * d {
                let sy = (oy as f64 + 0.5) / d as f64 - 0.5;
                let sx = (ox as f64 + 0.5) / d as f64 - 0.5;
                let mut acc = 0.0;
                for iy in [sy.floor() as isize, sy.floor() as isize + 1] {
                    for ix in [sx.floor() as isize, sx.floor() as isize + 1] {
                        if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                            continue;
                        }
                        let wy = 1.0 - (sy - iy as f64).abs();
                        let wx = 1.0 - (sx - ix as f64).abs();
                        acc += wy * wx * input.values()[iy as usize * w + ix as usize];
                    }
                }
                out.values_mut()[oy * w * d + ox] = acc;
            }
        }
        out
    }

    let mut worst = 0.0f64;
    for (d, in_size) in [(4usize, 32usize), (8, 16)] {
        let spec = LayerSpec::deconv(d, 1, 1);
        let state = LayerState::<f64>::init(&spec, &mut SplitMix64::new(1)).unwrap();
        let input = rand_image::<f64>(in_size, in_size, 77 + d as u64);
        let got = gln_core::layers::deconv2d_forward(&input, &spec, &state).unwrap();
        let want = bilinear_oracle(&input, d);
        let full = in_size * d;
        for y in 2..full - 2 {
            for x in 2..full - 2 {
                worst = worst.max((got.values()[y * full + x] - want.values()[y * full + x]).abs());
            }
        }
    }
    println!(
        "ACCEPTANCE 4 bilinear-deconv-identity: {} (deconv4 + deconv8 vs direct oracle, max |diff| {:.2e} away from 2px border)",
        if worst < 1e-5 { "PASS" } else { "FAIL" },
        worst
    );
    assert!(worst < 1e-5);
}

#[test]
fn criterion_5_desk_scale_learning() {
    let started = Instant::now();
    let pairs = toy_pairs(128, 4, 10, 4242);
    let eval_pairs: Vec<EvalPair<f32>> = pairs
        .iter()
        .enumerate()
        .map(|(i, (lr, hr))| EvalPair { id: format!("t{i}"), lr: lr.clone(), hr: hr.clone() })
        .collect();

    let mut model = build_gln::<f32>(4, 4, 11).unwrap();
    let cfg = TrainConfig {
        batch_size: 5,
        learning_rate: 1e-6,
        momentum: 0.9,
        iterations: 200,
        seed: 7,
        pixel_scale: PixelScale::Unit,
    };
    assert!(cfg.iterations <= 2000);
    let log = train_reconstruction(&mut model, &pairs, &cfg, |_, _, _| Ok(())).unwrap();
    let initial = log.entries.first().unwrap().loss;
    let last = log.entries.last().unwrap().loss;

    let report = evaluate(&model, &eval_pairs, 1.0, "toy-10").unwrap();
    let model_psnr = report.aggregate("model").unwrap().psnr;
    let bicubic_psnr = report.aggregate("bicubic").unwrap().psnr;
    let elapsed = started.elapsed();

    let pass = last < 0.25 * initial && model_psnr > bicubic_psnr && elapsed.as_secs() < 900;
    println!(
        "ACCEPTANCE 5 desk-scale-learning: {} (loss {initial:.1} -> {last:.1} ({:.1}%), psnr {model_psnr:.2} vs bicubic {bicubic_psnr:.2} dB, {} iters, {:.0?})",
        if pass { "PASS" } else { "FAIL" },
        100.0 * last / initial,
        cfg.iterations,
        elapsed
    );
    assert!(last < 0.25 * initial, "loss only reached {:.1}% of initial", 100.0 * last / initial);
    assert!(
        model_psnr > bicubic_psnr,
        "model {model_psnr:.3} dB did not beat bicubic {bicubic_psnr:.3} dB"
    );
    assert!(elapsed.as_secs() < 900, "took {elapsed:?}, budget 15 min");
}

#[test]
fn criterion_6_adversarial_mechanics() {
    let started = Instant::now();
    // Quarter-scale toy setting keeps the alternation affordable.
    let size = 64;
    let pairs = toy_pairs(size, 4, 10, 777);
    let cfg = TrainConfig {
        batch_size: 5,
        learning_rate: 1e-6,
        momentum: 0.9,
        iterations: 0,
        seed: 13,
        pixel_scale: PixelScale::Unit,
    };

    // Shared warm start: a briefly reconstruction-trained model.
    let mut warm = build_gln_sized::<f32>(4, 4, size, 21).unwrap();
    let warm_cfg = TrainConfig { iterations: 30, ..cfg.clone() };
    train_reconstruction(&mut warm, &pairs, &warm_cfg, |_, _, _| Ok(())).unwrap();

    // Control: pure reconstruction for the same generator-step budget.
    let adv_budget = AdvConfig {
        lambda: 0.0,
        d_steps: 5,
        g_steps: 10,
        switches: 4,
        lambda_rule: LambdaRule::Explicit,
    };
    let g_budget = adv_budget.g_steps * adv_budget.switches;
    let mut control = warm.clone();
    let control_cfg = TrainConfig { iterations: g_budget, seed: 99, ..cfg.clone() };
    let control_log =
        train_reconstruction(&mut control, &pairs, &control_cfg, |_, _, _| Ok(())).unwrap();
    let control_ms = control_log.entries.last().unwrap().loss;

    // Lambda = 0: the alternation must match the control within 5%.
    let mut model0 = warm.clone();
    let mut disc0 = build_discriminator_sized::<f32>(size, 31).unwrap();
    let ft_cfg = TrainConfig { seed: 99, ..cfg.clone() };
    let log0 =
        finetune_adversarial(&mut model0, &mut disc0, &pairs, &ft_cfg, &adv_budget, |_| Ok(()))
            .unwrap();
    let ms0 = log0.entries.last().unwrap().loss_ms;
    let rel_gap = (ms0 - control_ms).abs() / control_ms;

    // Tenth-of-mse rule: probabilities and losses must stay sane.
    let mut model1 = warm.clone();
    let mut disc1 = build_discriminator_sized::<f32>(size, 31).unwrap();
    let adv_tenth = AdvConfig { lambda_rule: LambdaRule::TenthOfMse, ..adv_budget.clone() };
    let log1 =
        finetune_adversarial(&mut model1, &mut disc1, &pairs, &ft_cfg, &adv_tenth, |_| Ok(()))
            .unwrap();
    let mut d_ok = true;
    let mut ld_ok = true;
    for e in &log1.entries {
        d_ok &= e.mean_d > 0.0 && e.mean_d < 1.0;
        ld_ok &= e.loss_d.is_finite();
    }
    let ms1 = log1.entries.last().unwrap().loss_ms;
    let elapsed = started.elapsed();

    let pass = rel_gap <= 0.05 && d_ok && ld_ok && ms1.is_finite() && elapsed.as_secs() < 1200;
    println!(
        "ACCEPTANCE 6 adversarial-mechanics: {} (lambda0 gap {:.3}% of control, lambda {:.3e} by tenth rule, mean D in (0,1): {}, L_MS {:.1} vs control {:.1}, {:.0?})",
        if pass { "PASS" } else { "FAIL" },
        100.0 * rel_gap,
        log1.lambda,
        d_ok,
        ms1,
        control_ms,
        elapsed
    );
    assert!(rel_gap <= 0.05, "lambda=0 final loss {ms0} vs control {control_ms}");
    assert!(d_ok, "mean D left (0,1)");
    assert!(ld_ok, "discriminator loss went non-finite");
    assert!(ms1.is_finite());
    assert!(elapsed.as_secs() < 1200, "took {elapsed:?}, budget 20 min");
}

#[test]
fn criterion_7_metric_oracles() {
    // Closed form from the defining formula: 20 log10(255/16).
    let a = Tensor::create(Shape::nchw(1, 1, 16, 16).unwrap(), FillRule::Constant(100.0f64)).unwrap();
    let b = a.map(|v| v + 16.0);
    let got = psnr(&a, &b, 255.0).unwrap();
    let oracle = 20.0 * (255.0f64 / 16.0).log10();
    let psnr_ok = (got - oracle).abs() < 0.001;

    let img = rand_image::<f64>(16, 16, 5);
    let ssim_got = ssim(&img, &img, 1.0).unwrap();
    let ssim_ok = (ssim_got - 1.0).abs() < 1e-9;

    let flat = Tensor::create(Shape::nchw(1, 1, 16, 16).unwrap(), FillRule::Constant(0.5f64)).unwrap();
    let noisy = flat.map(|v| v + 0.07);
    let wp = wpsnr(&flat, &noisy, 1.0).unwrap();
    let pp = psnr(&flat, &noisy, 1.0).unwrap();
    let wpsnr_ok = wp == pp;

    let pass = psnr_ok && ssim_ok && wpsnr_ok;
    println!(
        "ACCEPTANCE 7 metric-oracles: {} (psnr uniform-16 {got:.4} dB vs closed form {oracle:.4}, ssim(self) {ssim_got:.12}, wpsnr==psnr on flat: {wpsnr_ok})",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(psnr_ok, "psnr {got} vs oracle {oracle}");
    assert!(ssim_ok);
    assert!(wpsnr_ok);
}

#[test]
fn criterion_8_determinism_and_serialization() {
    // Fixed-seed training replays bitwise, logs included.
    let pairs = toy_pairs(16, 4, 10, 31);
    let cfg = TrainConfig {
        batch_size: 5,
        learning_rate: 2e-4,
        momentum: 0.9,
        iterations: 25,
        seed: 17,
        pixel_scale: PixelScale::Unit,
    };
    let run = || {
        let mut model = build_gln_sized::<f32>(4, 4, 16, 3).unwrap();
        let log = train_reconstruction(&mut model, &pairs, &cfg, |_, _, _| Ok(())).unwrap();
        (log.to_tsv(), model)
    };
    let (tsv_a, model_a) = run();
    let (tsv_b, _) = run();
    let logs_identical = tsv_a == tsv_b;

    // Checkpoint round trip preserves forward outputs bitwise.
    let input = rand_image::<f32>(4, 4, 9);
    let before = model_a.forward(&input).unwrap();
    let restored: NetworkGraph<f32> = decode(&encode(&model_a, true)).unwrap();
    let after = restored.forward(&input).unwrap();
    let forward_identical = before.values() == after.values();
    // and save -> load -> save is byte-identical
    let bytes = encode(&model_a, true);
    let bytes_again = encode(&decode::<f32>(&bytes).unwrap(), true);
    let files_identical = bytes == bytes_again;

    let pass = logs_identical && forward_identical && files_identical;
    println!(
        "ACCEPTANCE 8 determinism-serialization: {} (loss logs bitwise: {logs_identical}, forward after round trip bitwise: {forward_identical}, file round trip byte-identical: {files_identical})",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass);
}
