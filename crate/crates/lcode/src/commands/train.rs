use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use clap::Args;
use lcgode::data::Metric;
use lcgode::graph_encoder::Pooling;
use lcgode::train::{train, TrainConfig, TrainLog};

use crate::config_file::ConfigFile;
use crate::manifest::{sibling_manifest, ManifestBuilder};

use super::read_dataset;

#[derive(Args)]
pub struct TrainArgs {
    /// Training dataset (JSON Lines)
    #[arg(long)]
    data: Option<PathBuf>,

    /// Curve to model: test_accuracy or test_loss
    #[arg(long)]
    metric: Option<String>,

    /// Observed epochs the model conditions on
    #[arg(long)]
    cond_len: Option<usize>,

    /// Latent state dimension
    #[arg(long)]
    latent_dim: Option<usize>,

    /// Training epochs of the extrapolation model itself
    #[arg(long)]
    epochs: Option<usize>,

    #[arg(long)]
    seed: Option<u64>,

    /// Checkpoint file to write
    #[arg(long)]
    out: Option<PathBuf>,

    /// Train the ablation that ignores the architecture graph
    #[arg(long)]
    ablate_graph: bool,
}

pub fn run(args: TrainArgs, file: &ConfigFile, threads: usize) -> Result<()> {
    let data: PathBuf = file.need(args.data, "data")?;
    let metric = Metric::parse(&file.need::<String>(args.metric, "metric")?)?;
    let seed = file.or_default(args.seed, "seed", 0)?;
    let out: PathBuf = file.need(args.out, "out")?;

    let mut config = TrainConfig::new(metric, seed);
    config.condition_length = file.or_default(args.cond_len, "cond_len", config.condition_length)?;
    config.latent_dim = file.or_default(args.latent_dim, "latent_dim", config.latent_dim)?;
    config.epochs = file.or_default(args.epochs, "epochs", config.epochs)?;
    config.ablate_graph = file.switch(args.ablate_graph, "ablate_graph")?;
    config.learning_rate = file.or_default(None, "learning_rate", config.learning_rate)?;
    config.weight_decay = file.or_default(None, "weight_decay", config.weight_decay)?;
    config.batch_size = file.or_default(None, "batch_size", config.batch_size)?;
    config.kl_weight = file.or_default(None, "kl_weight", config.kl_weight)?;
    config.obs_noise = file.or_default(None, "obs_noise", config.obs_noise)?;
    config.patience = file.or_default(None, "patience", config.patience)?;
    config.val_fraction = file.or_default(None, "val_fraction", config.val_fraction)?;
    config.t_max = file.or_default(None, "t_max", config.t_max)?;
    config.threads = threads;
    if let Some(pooling) = file.want::<String>(None, "pooling")? {
        config.pooling = parse_pooling(&pooling)?;
    }

    let log_path = sibling_log(&out);
    let mut manifest = ManifestBuilder::new(
        "train",
        seed,
        serde_json::json!({ "train": config, "data": data, "out": out }),
    );
    manifest.input(&data)?;

    let t0 = Instant::now();
    let trials = read_dataset(&data)?;
    manifest.phase("load", t0.elapsed().as_secs_f64());

    let t1 = Instant::now();
    let (model, log) = train(&trials, &config)?;
    manifest.phase("train", t1.elapsed().as_secs_f64());

    model.save(&out)?;
    write_log_csv(&log_path, &log)?;
    manifest.output(&out);
    manifest.output(&log_path);
    manifest.write(&sibling_manifest(&out))?;

    match log.best_val_mape {
        Some(v) => println!(
            "trained {} epochs (best epoch {}, val MAPE {v:.4}); checkpoint at {}",
            log.epochs.len(),
            log.best_epoch,
            out.display()
        ),
        None => println!(
            "trained {} epochs (no validation split); checkpoint at {}",
            log.epochs.len(),
            out.display()
        ),
    }
    Ok(())
}

fn parse_pooling(text: &str) -> Result<Pooling> {
    match text {
        "mean" => Ok(Pooling::Mean),
        "max" => Ok(Pooling::Max),
        "learnable" => Ok(Pooling::Learnable),
        other => anyhow::bail!("unknown pooling `{other}` (expected mean, max, or learnable)"),
    }
}

/// `model.json` → `model.log.csv`.
fn sibling_log(out: &Path) -> PathBuf {
    out.with_extension("log.csv")
}

fn write_log_csv(path: &Path, log: &TrainLog) -> Result<()> {
    let mut out = std::io::BufWriter::new(
        std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?,
    );
    writeln!(out, "epoch,train_loss,val_mape,skipped_batches")?;
    for e in &log.epochs {
        let val = e.val_mape.map(|v| v.to_string()).unwrap_or_default();
        writeln!(out, "{},{},{},{}", e.epoch, e.train_loss, val, e.skipped_batches)?;
    }
    out.flush()?;
    Ok(())
}
