use std::path::PathBuf;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::Args;
use lcgode::data::{generate_trial, save_dataset, GenerateConfig};

use crate::config_file::ConfigFile;
use crate::manifest::{sibling_manifest, ManifestBuilder};

use super::indexed_map;

#[derive(Args)]
pub struct GenerateArgs {
    /// Number of trials (architectures) to simulate
    #[arg(long)]
    trials: Option<usize>,

    /// Curve length m (epochs per trial)
    #[arg(long)]
    epochs: Option<usize>,

    /// Multiplicative log-normal noise scale on the loss curves
    #[arg(long)]
    noise: Option<f64>,

    #[arg(long)]
    seed: Option<u64>,

    /// Dataset file to write (JSON Lines)
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn run(args: GenerateArgs, file: &ConfigFile, threads: usize) -> Result<()> {
    let mut config = GenerateConfig::default();
    config.num_trials = file.or_default(args.trials, "trials", config.num_trials)?;
    config.m = file.or_default(args.epochs, "epochs", config.m)?;
    config.noise = file.or_default(args.noise, "noise", config.noise)?;
    config.seed = file.or_default(args.seed, "seed", 0)?;
    config.t_max = file.or_default(None, "t_max", config.t_max)?;
    config.kappa = file.or_default(None, "kappa", config.kappa)?;
    config.a_max = file.or_default(None, "a_max", config.a_max)?;
    let out: PathBuf = file.need(args.out, "out")?;
    // Hyperparameter ranges come as `lo,hi` pairs.
    if let Some(units) = file.want::<String>(None, "units")? {
        config.ranges.units = parse_range(&units).context("key `units`")?;
    }
    if let Some(layers) = file.want::<String>(None, "layers")? {
        let (lo, hi) = parse_range(&layers).context("key `layers`")?;
        config.ranges.num_layers = (lo as usize, hi as usize);
    }

    if config.num_trials < 4 {
        anyhow::bail!("--trials must be at least 4 (minimum for a train/test split)");
    }

    let mut manifest = ManifestBuilder::new(
        "generate",
        config.seed,
        serde_json::json!({ "generate": config, "out": out, "threads": threads }),
    );

    let t0 = Instant::now();
    // Each trial draws from its own counter-derived stream, so striding
    // the index space over workers changes nothing.
    let trials = indexed_map(config.num_trials, threads, |i| {
        generate_trial(&config, i).map_err(Into::into)
    })?;
    manifest.phase("generate", t0.elapsed().as_secs_f64());

    let t1 = Instant::now();
    save_dataset(&out, &trials).with_context(|| format!("writing {}", out.display()))?;
    manifest.phase("write", t1.elapsed().as_secs_f64());

    manifest.output(&out);
    manifest.write(&sibling_manifest(&out))?;
    println!("wrote {} trials to {}", trials.len(), out.display());
    Ok(())
}

fn parse_range(text: &str) -> Result<(f64, f64)> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    if parts.len() != 2 {
        anyhow::bail!("expected `lo,hi`, got `{text}`");
    }
    Ok((parts[0].parse()?, parts[1].parse()?))
}
