use std::path::PathBuf;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::Args;
use lcgode::model::Model;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config_file::ConfigFile;
use crate::manifest::ManifestBuilder;

use super::{check_grid, indexed_map, read_dataset, write_jsonl, PredictionRow};

#[derive(Args)]
pub struct PredictArgs {
    /// Trained checkpoint
    #[arg(long)]
    ckpt: Option<PathBuf>,

    /// Dataset whose trials to extrapolate
    #[arg(long)]
    data: Option<PathBuf>,

    /// Posterior samples per trial; 1 = deterministic posterior mean
    #[arg(long)]
    samples: Option<usize>,

    #[arg(long)]
    seed: Option<u64>,

    /// Directory for predictions.jsonl and the manifest
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn run(args: PredictArgs, file: &ConfigFile, threads: usize) -> Result<()> {
    let ckpt: PathBuf = file.need(args.ckpt, "ckpt")?;
    let data: PathBuf = file.need(args.data, "data")?;
    let samples = file.or_default(args.samples, "samples", 1)?;
    let seed = file.or_default(args.seed, "seed", 0)?;
    let out_dir: PathBuf = file.need(args.out, "out")?;
    if samples == 0 {
        anyhow::bail!("--samples must be at least 1");
    }

    std::fs::create_dir_all(&out_dir)
        .with_context(|| format!("creating {}", out_dir.display()))?;
    let mut manifest = ManifestBuilder::new(
        "predict",
        seed,
        serde_json::json!({
            "ckpt": ckpt, "data": data, "samples": samples, "seed": seed,
            "out": out_dir, "threads": threads,
        }),
    );
    manifest.input(&ckpt)?;
    manifest.input(&data)?;

    let model = Model::load(&ckpt)
        .with_context(|| format!("loading checkpoint {}", ckpt.display()))?;
    let trials = read_dataset(&data)?;
    check_grid(&model, &trials)?;

    let n = model.config.condition_length;
    let t0 = Instant::now();
    // Per-trial sampling streams keyed by trial index: worker assignment
    // cannot change what any trial draws.
    let rows = indexed_map(trials.len(), threads, |i| {
        let trial = &trials[i];
        let values = &trial.curve(model.config.metric).unwrap().values;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let (mean, std) = model.extrapolate(&values[..n], &trial.graph, samples, &mut rng)?;
        Ok(PredictionRow {
            trial_id: trial.trial_id.clone(),
            metric: model.config.metric,
            cond_len: n,
            t_max: model.config.t_max,
            mean,
            std,
        })
    })?;
    manifest.phase("predict", t0.elapsed().as_secs_f64());

    let out_path = out_dir.join("predictions.jsonl");
    write_jsonl(&out_path, &rows)?;
    manifest.output(&out_path);
    manifest.write(&out_dir.join("manifest.json"))?;
    println!(
        "extrapolated {} trials ({} samples each) to {}",
        rows.len(),
        samples,
        out_path.display()
    );
    Ok(())
}
