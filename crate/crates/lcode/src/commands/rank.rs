use std::io::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::Args;
use lcgode::eval::{rank_correlation, regret_and_ranking, speedup, write_json};
use lcgode::model::Model;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config_file::ConfigFile;
use crate::manifest::ManifestBuilder;

use super::{check_grid, indexed_map, read_dataset};

#[derive(Args)]
pub struct RankArgs {
    /// Trained checkpoint
    #[arg(long)]
    ckpt: Option<PathBuf>,

    /// Dataset of candidate trials
    #[arg(long)]
    data: Option<PathBuf>,

    #[arg(long)]
    seed: Option<u64>,

    /// Directory for ranking.json, optima.csv, and the manifest
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct SpeedupAccount {
    /// Epochs to fully train every candidate.
    full_epochs: usize,
    /// Epochs actually spent (the observed prefixes); extrapolation itself
    /// is charged as zero epochs — wall times live in the manifest.
    observed_epochs: usize,
    value: f64,
}

#[derive(Serialize)]
struct RankingSummary {
    metric: String,
    num_trials: usize,
    picked_trial: String,
    regret: f64,
    ranking: usize,
    pearson: Option<f64>,
    kendall_tau: Option<f64>,
    speedup: SpeedupAccount,
}

pub fn run(args: RankArgs, file: &ConfigFile, threads: usize) -> Result<()> {
    let ckpt: PathBuf = file.need(args.ckpt, "ckpt")?;
    let data: PathBuf = file.need(args.data, "data")?;
    let seed = file.or_default(args.seed, "seed", 0)?;
    let out_dir: PathBuf = file.need(args.out, "out")?;

    std::fs::create_dir_all(&out_dir)
        .with_context(|| format!("creating {}", out_dir.display()))?;
    let mut manifest = ManifestBuilder::new(
        "rank",
        seed,
        serde_json::json!({ "ckpt": ckpt, "data": data, "seed": seed, "out": out_dir }),
    );
    manifest.input(&ckpt)?;
    manifest.input(&data)?;

    let model = Model::load(&ckpt)
        .with_context(|| format!("loading checkpoint {}", ckpt.display()))?;
    let trials = read_dataset(&data)?;
    check_grid(&model, &trials)?;
    let metric = model.config.metric;
    let minimize = metric.minimize();
    let n = model.config.condition_length;

    // Best value a curve reaches, in the metric's own direction.
    let optimum = |values: &[f64]| -> f64 {
        values
            .iter()
            .copied()
            .fold(if minimize { f64::MAX } else { f64::MIN }, |a, v| {
                if minimize { a.min(v) } else { a.max(v) }
            })
    };

    let t0 = Instant::now();
    let optima = indexed_map(trials.len(), threads, |i| {
        let trial = &trials[i];
        let values = &trial.curve(metric).unwrap().values;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let (mean, _) = model.extrapolate(&values[..n], &trial.graph, 1, &mut rng)?;
        Ok((optimum(&mean), optimum(values)))
    })?;
    manifest.phase("extrapolate", t0.elapsed().as_secs_f64());

    let ids: Vec<String> = trials.iter().map(|t| t.trial_id.clone()).collect();
    let predicted: Vec<f64> = optima.iter().map(|o| o.0).collect();
    let actual: Vec<f64> = optima.iter().map(|o| o.1).collect();
    let outcome = regret_and_ranking(&ids, &predicted, &actual, minimize)?;
    let corr = rank_correlation(&actual, &predicted)?;

    let full_epochs = trials.len() * model.config.m;
    let observed_epochs = trials.len() * n;
    let summary = RankingSummary {
        metric: metric.name().to_string(),
        num_trials: trials.len(),
        picked_trial: outcome.picked_trial,
        regret: outcome.regret,
        ranking: outcome.ranking,
        pearson: corr.pearson,
        kendall_tau: corr.kendall_tau,
        speedup: SpeedupAccount {
            full_epochs,
            observed_epochs,
            value: speedup(full_epochs as f64, observed_epochs as f64, 0.0)?,
        },
    };

    let json_path = out_dir.join("ranking.json");
    write_json(&json_path, &summary)?;
    let csv_path = out_dir.join("optima.csv");
    let mut csv = std::io::BufWriter::new(std::fs::File::create(&csv_path)?);
    writeln!(csv, "trial_id,predicted_best,true_best")?;
    for (id, (p, a)) in ids.iter().zip(&optima) {
        writeln!(csv, "{id},{p},{a}")?;
    }
    csv.flush()?;

    manifest.output(&json_path);
    manifest.output(&csv_path);
    manifest.write(&out_dir.join("manifest.json"))?;
    println!(
        "picked {} (regret {:.4}, rank {} of {})",
        summary.picked_trial,
        summary.regret,
        summary.ranking,
        summary.num_trials
    );
    Ok(())
}
