// temporary tuning probe; deleted before ship
use gln_core::degrade::{classical_upsample, degrade, DegradationOperator, UpsampleMethod};
use gln_core::metrics::{evaluate, EvalPair};
use gln_core::models::build_gln_sized;
use gln_core::rng::SplitMix64;
use gln_core::tensor::{Shape, Tensor};
use gln_core::train::{train_reconstruction, PixelScale, TrainConfig};

/// Face-like toy image: smooth blob base + sharp-edged details.
fn toy_face(size: usize, rng: &mut SplitMix64) -> Tensor<f32> {
    let mut img = vec![0.0f64; size * size];
    let s = size as f64;
    // base shading ramp
    let (gx, gy) = (rng.uniform::<f64>(-0.15, 0.15), rng.uniform::<f64>(-0.15, 0.15));
    let base = rng.uniform::<f64>(0.35, 0.55);
    for y in 0..size {
        for x in 0..size {
            img[y * size + x] = base + gx * (x as f64 / s - 0.5) + gy * (y as f64 / s - 0.5);
        }
    }
    // face blob + eye/mouth gaussians
    let mut blob = |cx: f64, cy: f64, sx: f64, sy: f64, amp: f64, img: &mut [f64]| {
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
    // sharp-edged details: random rectangles
    for _ in 0..14 {
        let x0 = rng.next_index(size);
        let y0 = rng.next_index(size);
        let wd = 2 + rng.next_index(size / 6);
        let ht = 2 + rng.next_index(size / 6);
        let amp = rng.uniform::<f64>(-0.4, 0.4);
        for y in y0..(y0 + ht).min(size) {
            for x in x0..(x0 + wd).min(size) {
                img[y * size + x] += amp;
            }
        }
    }
    // strong high-frequency texture at several bands
    for band in 0..3 {
        let fx = rng.uniform::<f64>(0.5, 2.4) + band as f64;
        let fy = rng.uniform::<f64>(0.5, 2.4) + band as f64;
        let ph = rng.uniform::<f64>(0.0, 6.28);
        let amp = rng.uniform::<f64>(0.15, 0.25);
        for y in 0..size {
            for x in 0..size {
                img[y * size + x] +=
                    amp * ((fx * x as f64 + ph).sin() * (fy * y as f64 + ph).cos());
            }
        }
    }
    let vals: Vec<f32> = img.iter().map(|v| v.clamp(0.0, 1.0) as f32).collect();
    Tensor::from_values(Shape::nchw(1, 1, size, size).unwrap(), vals).unwrap()
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let out: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(128);
    let lr: f64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(1e-4);
    let iters: usize = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(100);
    let batch: usize = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(5);
    let op = DegradationOperator::with_default_sigma(4).unwrap();
    let mut rng = SplitMix64::new(4242);
    let pairs: Vec<(Tensor<f32>, Tensor<f32>)> = (0..10)
        .map(|_| {
            let hr = toy_face(out, &mut rng);
            (degrade(&hr, &op).unwrap(), hr)
        })
        .collect();
    let eval_pairs: Vec<EvalPair<f32>> = pairs
        .iter()
        .enumerate()
        .map(|(i, (lr, hr))| EvalPair { id: format!("t{i}"), lr: lr.clone(), hr: hr.clone() })
        .collect();

    // baseline PSNRs
    let mut bps = 0.0;
    let mut bls = 0.0;
    for (lrim, hrim) in &pairs {
        let up = classical_upsample(lrim, 4, UpsampleMethod::Bicubic).unwrap();
        bps += gln_core::metrics::psnr(&up, hrim, 1.0).unwrap();
        let upl = classical_upsample(lrim, 4, UpsampleMethod::Bilinear).unwrap();
        bls += gln_core::metrics::psnr(&upl, hrim, 1.0).unwrap();
    }
    println!("bicubic mean PSNR: {:.3}, bilinear {:.3}", bps / 10.0, bls / 10.0);

    let mut model = build_gln_sized::<f32>(4, 4, out, 11).unwrap();
    let cfg = TrainConfig {
        batch_size: batch,
        learning_rate: lr,
        momentum: 0.9,
        iterations: iters,
        seed: 7,
        pixel_scale: PixelScale::Unit,
    };
    let t = std::time::Instant::now();
    let mut initial = None;
    let r = train_reconstruction(&mut model, &pairs, &cfg, |i, l, m| {
        let init = *initial.get_or_insert(l);
        if (i >= 80 && i % 40 == 39) || i + 1 == iters {
            let mut mp = 0.0;
            for p in &eval_pairs {
                let out = m.forward(&p.lr).unwrap();
                mp += gln_core::metrics::psnr(&out, &p.hr, 1.0).unwrap();
            }
            println!(
                "iter {i}: loss {l:.3} ({:.4} of init), model psnr {:.3}, {:.0}s",
                l / init,
                mp / 10.0,
                t.elapsed().as_secs_f64()
            );
        }
        Ok(())
    });
    match r {
        Ok(_) => println!("done in {:.0}s", t.elapsed().as_secs_f64()),
        Err(e) => println!("FAILED {e}"),
    }
}
