//! Subcommand implementations.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};

use gln_core::checkpoint::{load_checkpoint, save_checkpoint};
use gln_core::color::upsample_color;
use gln_core::dataset::{prepare_dataset, DatasetManifest, Split};
use gln_core::degrade::{back_project, classical_upsample, degrade, DegradationOperator, UpsampleMethod};
use gln_core::gradcheck::standard_suite;
use gln_core::image_io::{image_read, image_write, PixelScale};
use gln_core::metrics::evaluate;
use gln_core::models;
use gln_core::train::{
    finetune_adversarial, train_reconstruction, AdvConfig, LambdaRule, TrainConfig,
};
use gln_core::{NetworkGraph, Scalar, Tensor};

use crate::config::ConfigFile;
use crate::{Cli, Command};

/// Global options resolved against the config file.
struct Globals {
    scale: usize,
    depth: usize,
    seed: u64,
    checkpoint: Option<PathBuf>,
    cfg: ConfigFile,
}

impl Globals {
    fn new(cli: &Cli) -> Result<Self> {
        let cfg = match &cli.config {
            Some(path) => ConfigFile::load(path)?,
            None => ConfigFile::default(),
        };
        let scale = cfg.resolve(cli.scale, "scale", 4)?;
        if !matches!(scale, 4 | 8) {
            bail!("--scale must be 4 or 8, got {scale}");
        }
        let depth = cfg.resolve(cli.ln, "ln", 8)?;
        if !matches!(depth, 4 | 6 | 8) {
            bail!("--ln must be 4, 6, or 8, got {depth}");
        }
        let seed = cfg.resolve(cli.seed, "seed", 0)?;
        let checkpoint = match cli.checkpoint.clone() {
            Some(p) => Some(p),
            None => cfg.resolve_opt::<PathBuf>(None, "checkpoint")?,
        };
        Ok(Globals { scale, depth, seed, checkpoint, cfg })
    }

    fn require_checkpoint(&self) -> Result<&Path> {
        self.checkpoint
            .as_deref()
            .ok_or_else(|| anyhow!("this command needs --checkpoint"))
    }

    fn pixel_scale(&self, flag: &Option<String>) -> Result<PixelScale> {
        let raw = self.cfg.resolve(flag.clone(), "pixel_scale", "unit".to_string())?;
        Ok(raw.parse::<PixelScale>()?)
    }

    fn train_config(
        &self,
        iterations: usize,
        lr: Option<f64>,
        momentum: Option<f64>,
        batch: Option<usize>,
        pixel_scale: PixelScale,
    ) -> Result<TrainConfig> {
        Ok(TrainConfig {
            batch_size: self.cfg.resolve(batch, "batch", 5)?,
            learning_rate: self.cfg.resolve(lr, "lr", 1e-6)?,
            momentum: self.cfg.resolve(momentum, "momentum", 0.9)?,
            iterations,
            seed: self.seed,
            pixel_scale,
        })
    }
}

fn build_model(name: &str, g: &Globals) -> Result<NetworkGraph<Scalar>> {
    Ok(match name {
        "gln" => models::build_gln(g.scale, g.depth, g.seed)?,
        "gn-only" => models::build_gn_only(g.scale, g.seed)?,
        "ln-only" => models::build_ln_only(g.scale, g.depth, g.seed)?,
        other => bail!("unknown model '{other}' (expected gln, gn-only, ln-only)"),
    })
}

fn load_manifest(path: &Path, scale: usize) -> Result<DatasetManifest> {
    let manifest = DatasetManifest::load(path)?;
    if manifest.d != scale {
        bail!(
            "dataset was prepared for {}x but --scale is {}",
            manifest.d,
            scale
        );
    }
    Ok(manifest)
}

fn checkpoint_model(g: &Globals) -> Result<NetworkGraph<Scalar>> {
    let path = g.require_checkpoint()?;
    let model = load_checkpoint::<Scalar>(path)
        .with_context(|| format!("loading {}", path.display()))?;
    Ok(model)
}

/// The descriptor of a loaded checkpoint must agree with the requested
/// scale; depth likewise when the builder has one.
fn check_descriptor(model: &NetworkGraph<Scalar>, g: &Globals, cli_scale: Option<usize>) -> Result<()> {
    if let Some(scale) = cli_scale {
        if model.descriptor.d != 0 && model.descriptor.d as usize != scale {
            bail!(
                "checkpoint is a {}x '{}' model but --scale {} was requested",
                model.descriptor.d,
                model.descriptor.builder,
                scale
            );
        }
    }
    let _ = g;
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    let g = Globals::new(&cli)?;
    match &cli.command {
        Command::Prepare { src, out, sigma } => {
            let sigma = g.cfg.resolve_opt(*sigma, "sigma")?;
            let manifest = prepare_dataset(src, g.scale, sigma, out)?;
            let train = manifest.entries.iter().filter(|e| e.split == Split::Train).count();
            let test = manifest.entries.len() - train;
            println!(
                "prepared {} pairs ({} train / {} test identities-disjoint) at {}x, sigma {}",
                manifest.entries.len(),
                train,
                test,
                manifest.d,
                manifest.sigma
            );
            println!("manifest: {}", out.join(gln_core::dataset::MANIFEST_NAME).display());
        }

        Command::Train {
            dataset,
            out,
            model,
            iterations,
            lr,
            momentum,
            batch,
            pixel_scale,
            log,
            checkpoint_every,
            with_optimizer,
        } => {
            let pixel_scale = g.pixel_scale(pixel_scale)?;
            let manifest = load_manifest(dataset, g.scale)?;
            let pairs_data = manifest.load_pairs::<Scalar>(Split::Train)?;
            let pairs: Vec<(Tensor<Scalar>, Tensor<Scalar>)> =
                pairs_data.into_iter().map(|p| (p.lr, p.hr)).collect();
            let iterations = g.cfg.resolve(*iterations, "iterations", 500)?;
            let cfg = g.train_config(iterations, *lr, *momentum, *batch, pixel_scale)?;
            let mut net = build_model(model, &g)?;
            println!("{}", net.summary());
            println!(
                "training on {} pairs, batch {}, lr {}, momentum {}, {} iterations",
                pairs.len(),
                cfg.batch_size,
                cfg.learning_rate,
                cfg.momentum,
                cfg.iterations
            );
            let cadence = g.cfg.resolve_opt(*checkpoint_every, "checkpoint_every")?;
            let train_log = train_reconstruction(&mut net, &pairs, &cfg, |iter, loss, m| {
                if iter % 50 == 0 {
                    println!("iter {iter}: loss {loss:.5}");
                }
                if let Some(every) = cadence {
                    if every > 0 && (iter + 1) % every == 0 {
                        save_checkpoint(m, out, *with_optimizer)?;
                    }
                }
                Ok(())
            })?;
            save_checkpoint(&net, out, *with_optimizer)?;
            if let Some(log_path) = log {
                std::fs::write(log_path, train_log.to_tsv())?;
            }
            let final_loss = train_log.entries.last().map(|e| e.loss).unwrap_or(f64::NAN);
            println!("done; final loss {final_loss:.5}; checkpoint {}", out.display());
        }

        Command::Finetune {
            dataset,
            out,
            disc_out,
            lambda,
            lambda_rule,
            switches,
            d_steps,
            g_steps,
            lr,
            momentum,
            batch,
            pixel_scale,
            log,
            with_optimizer,
        } => {
            let pixel_scale = g.pixel_scale(pixel_scale)?;
            let manifest = load_manifest(dataset, g.scale)?;
            let pairs: Vec<(Tensor<Scalar>, Tensor<Scalar>)> = manifest
                .load_pairs::<Scalar>(Split::Train)?
                .into_iter()
                .map(|p| (p.lr, p.hr))
                .collect();
            let mut model = checkpoint_model(&g)?;
            check_descriptor(&model, &g, Some(g.scale))?;
            let out_size = model.descriptor.out_size as usize;
            let mut disc = models::build_discriminator_sized::<Scalar>(out_size, g.seed ^ 0xD15C)?;

            let rule = g
                .cfg
                .resolve(lambda_rule.clone(), "lambda_rule", "explicit".to_string())?;
            let lambda_rule = match rule.as_str() {
                "tenth" => LambdaRule::TenthOfMse,
                "explicit" => LambdaRule::Explicit,
                other => bail!("unknown lambda rule '{other}' (expected explicit or tenth)"),
            };
            let adv = AdvConfig {
                lambda: g.cfg.resolve(*lambda, "lambda", 0.0)?,
                d_steps: g.cfg.resolve(*d_steps, "d_steps", 10)?,
                g_steps: g.cfg.resolve(*g_steps, "g_steps", 50)?,
                switches: g.cfg.resolve(*switches, "switches", 100)?,
                lambda_rule,
            };
            let cfg = g.train_config(0, *lr, *momentum, *batch, pixel_scale)?;
            println!(
                "fine-tuning: {} switches of {} D-steps / {} G-steps, lambda {} ({:?})",
                adv.switches, adv.d_steps, adv.g_steps, adv.lambda, adv.lambda_rule
            );
            let ft_log = finetune_adversarial(&mut model, &mut disc, &pairs, &cfg, &adv, |s| {
                if s.switch % 10 == 0 {
                    println!(
                        "switch {}: loss {:.5}, d-loss {:.5}, mean D {:.4}",
                        s.switch, s.loss_ms, s.loss_d, s.mean_d
                    );
                }
                Ok(())
            })?;
            save_checkpoint(&model, out, *with_optimizer)?;
            if let Some(path) = disc_out {
                save_checkpoint(&disc, path, *with_optimizer)?;
            }
            if let Some(path) = log {
                std::fs::write(path, ft_log.to_tsv())?;
            }
            println!("done; lambda was {}; checkpoint {}", ft_log.lambda, out.display());
        }

        Command::Upsample { input, output, color, pixel_scale } => {
            let pixel_scale = g.pixel_scale(pixel_scale)?;
            let model = checkpoint_model(&g)?;
            check_descriptor(&model, &g, cli.scale)?;
            if input.is_dir() {
                std::fs::create_dir_all(output)?;
                let mut names: Vec<PathBuf> = std::fs::read_dir(input)?
                    .filter_map(|e| e.ok().map(|e| e.path()))
                    .filter(|p| {
                        matches!(
                            p.extension().and_then(|e| e.to_str()),
                            Some("pgm") | Some("png")
                        )
                    })
                    .collect();
                names.sort();
                for src in names {
                    let dst = output.join(src.file_name().unwrap());
                    upsample_one(&model, &src, &dst, *color, pixel_scale)?;
                    println!("{} -> {}", src.display(), dst.display());
                }
            } else {
                upsample_one(&model, input, output, *color, pixel_scale)?;
            }
        }

        Command::Evaluate { dataset, split, csv } => {
            let model = checkpoint_model(&g)?;
            check_descriptor(&model, &g, cli.scale)?;
            let manifest = load_manifest(dataset, model.descriptor.d as usize)?;
            let split: Split = split.parse::<Split>()?;
            let pairs = manifest.load_pairs::<Scalar>(split)?;
            let peak = manifest.pixel_scale.peak();
            let report = evaluate(&model, &pairs, peak, &dataset.display().to_string())?;
            print!("{}", report.to_table());
            if let Some(path) = csv {
                std::fs::write(path, report.to_csv())?;
                println!("per-image csv: {}", path.display());
            }
        }

        Command::Gradcheck { samples } => {
            let cases = standard_suite(*samples)?;
            let mut failed = 0;
            for c in &cases {
                println!(
                    "{:<16} max rel err {:>10.3e}  (tol {:>7.0e})  {}",
                    c.name,
                    c.max_rel_err,
                    c.tolerance,
                    if c.passed() { "pass" } else { "FAIL" }
                );
                if !c.passed() {
                    failed += 1;
                }
            }
            if failed > 0 {
                bail!("{failed} gradient check(s) failed");
            }
        }

        Command::Rf => {
            let net = models::build_ln::<Scalar>(g.depth, 2, 0)?;
            println!("{}", models::receptive_field(&net)?);
        }

        Command::Degrade { input, output, sigma, pixel_scale } => {
            let pixel_scale = g.pixel_scale(pixel_scale)?;
            let sigma = g.cfg.resolve_opt(*sigma, "sigma")?;
            let op = match sigma {
                Some(s) => DegradationOperator::new(g.scale, s)?,
                None => DegradationOperator::with_default_sigma(g.scale)?,
            };
            let img = image_read::<Scalar>(input, pixel_scale)?;
            image_write(output, &degrade(&img, &op)?, pixel_scale)?;
        }

        Command::Backproject { observed, estimate, out, iters, step, sigma, pixel_scale } => {
            let pixel_scale = g.pixel_scale(pixel_scale)?;
            let sigma = g.cfg.resolve_opt(*sigma, "sigma")?;
            let op = match sigma {
                Some(s) => DegradationOperator::new(g.scale, s)?,
                None => DegradationOperator::with_default_sigma(g.scale)?,
            };
            let lr_img = image_read::<Scalar>(observed, pixel_scale)?;
            let start = match estimate {
                Some(path) => image_read::<Scalar>(path, pixel_scale)?,
                None => classical_upsample(&lr_img, g.scale, UpsampleMethod::Bicubic)?,
            };
            let refined = back_project(&start, &lr_img, &op, *iters, *step)?;
            image_write(out, &refined, pixel_scale)?;
        }
    }
    Ok(())
}

fn upsample_one(
    model: &NetworkGraph<Scalar>,
    input: &Path,
    output: &Path,
    color: bool,
    pixel_scale: PixelScale,
) -> Result<()> {
    let img = image_read::<Scalar>(input, pixel_scale)?;
    let out = if color {
        upsample_color(model, &img)?
    } else {
        let channels = img.shape().dims()[1];
        if channels != 1 {
            bail!(
                "{} has {channels} channels; pass --color for RGB inputs",
                input.display()
            );
        }
        model.forward(&img)?
    };
    image_write(output, &out, pixel_scale)?;
    Ok(())
}
