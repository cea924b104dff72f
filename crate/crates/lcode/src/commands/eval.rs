use std::collections::BTreeMap;
use std::io::BufRead as _;
use std::path::PathBuf;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::Args;
use lcgode::data::Trial;
use lcgode::eval::{
    mape, rank_correlation, regret_and_ranking, rmse, speedup, write_csv, write_json, TrialRow,
};
use serde::Serialize;

use crate::config_file::ConfigFile;
use crate::manifest::ManifestBuilder;

use super::{read_dataset, PredictionRow};

#[derive(Args)]
pub struct EvalArgs {
    /// Directory holding predictions.jsonl (from `lcode predict`)
    #[arg(long)]
    pred: Option<PathBuf>,

    /// Dataset with the true curves
    #[arg(long)]
    data: Option<PathBuf>,

    /// Absolute epoch counts to score at, e.g. 80,140,200
    #[arg(long, value_delimiter = ',')]
    pred_lens: Option<Vec<usize>>,

    #[arg(long)]
    seed: Option<u64>,

    /// Directory for report.csv, summary.json, and the manifest
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct LengthAggregate {
    pred_len: usize,
    num_trials: usize,
    mape_mean: f64,
    rmse_mean: f64,
    /// Trials whose MAPE denominator hit the guard floor at this length.
    guarded_trials: Vec<String>,
}

#[derive(Serialize)]
struct Selection {
    picked_trial: String,
    regret: f64,
    ranking: usize,
}

#[derive(Serialize)]
struct SpeedupAccount {
    full_epochs: usize,
    observed_epochs: usize,
    value: f64,
}

#[derive(Serialize)]
struct EvalSummary {
    seed: u64,
    config: serde_json::Value,
    num_predictions: usize,
    per_pred_len: Vec<LengthAggregate>,
    /// Predicted-best selection judged on the true optima.
    selection: Selection,
    pearson: Option<f64>,
    kendall_tau: Option<f64>,
    speedup: SpeedupAccount,
}

pub fn run(args: EvalArgs, file: &ConfigFile) -> Result<()> {
    let pred_dir: PathBuf = file.need(args.pred, "pred")?;
    let data: PathBuf = file.need(args.data, "data")?;
    let seed = file.or_default(args.seed, "seed", 0)?;
    let out_dir: PathBuf = file.need(args.out, "out")?;
    let pred_lens: Vec<usize> = match args.pred_lens {
        Some(v) => v,
        None => match file.want::<String>(None, "pred_lens")? {
            Some(text) => text
                .split(',')
                .map(|s| s.trim().parse().context("key `pred_lens`"))
                .collect::<Result<_>>()?,
            None => anyhow::bail!("missing required option --pred-lens"),
        },
    };
    if pred_lens.is_empty() {
        anyhow::bail!("--pred-lens needs at least one length");
    }

    let pred_path = pred_dir.join("predictions.jsonl");
    std::fs::create_dir_all(&out_dir)
        .with_context(|| format!("creating {}", out_dir.display()))?;
    let config_echo = serde_json::json!({
        "pred": pred_dir, "data": data, "pred_lens": pred_lens, "seed": seed, "out": out_dir,
    });
    let mut manifest = ManifestBuilder::new("eval", seed, config_echo.clone());
    manifest.input(&pred_path)?;
    manifest.input(&data)?;

    let t0 = Instant::now();
    let predictions = read_predictions(&pred_path)?;
    let trials = read_dataset(&data)?;
    let by_id: BTreeMap<&str, &Trial> =
        trials.iter().map(|t| (t.trial_id.as_str(), t)).collect();

    // Join each prediction with its true curve up front so every length
    // below works off validated pairs.
    let mut joined = Vec::with_capacity(predictions.len());
    for row in &predictions {
        let trial = by_id.get(row.trial_id.as_str()).ok_or_else(|| {
            anyhow::anyhow!("prediction for trial {} has no matching trial in {}", row.trial_id, data.display())
        })?;
        let curve = trial.curve(row.metric).ok_or_else(|| {
            anyhow::anyhow!("trial {} has no {} curve", row.trial_id, row.metric.name())
        })?;
        let m = curve.m();
        if row.cond_len + row.mean.len() != m {
            anyhow::bail!(
                "trial {}: {} observed + {} predicted epochs but the true curve has {m}",
                row.trial_id,
                row.cond_len,
                row.mean.len()
            );
        }
        joined.push((row, &curve.values));
    }

    let mut rows: Vec<TrialRow> = Vec::new();
    let mut per_pred_len = Vec::new();
    for &pred_len in &pred_lens {
        let mut mape_sum = 0.0;
        let mut rmse_sum = 0.0;
        let mut guarded = Vec::new();
        for (row, truth) in &joined {
            let n = row.cond_len;
            if pred_len <= n || pred_len > truth.len() {
                anyhow::bail!(
                    "pred_len {pred_len} outside the prediction window ({} observed, {} total epochs)",
                    n,
                    truth.len()
                );
            }
            let window_truth = &truth[n..pred_len];
            let window_pred = &row.mean[..pred_len - n];
            let m = mape(window_truth, window_pred)?;
            let r = rmse(window_truth, window_pred)?;
            if m.guarded {
                guarded.push(row.trial_id.clone());
            }
            mape_sum += m.value;
            rmse_sum += r;
            rows.push(TrialRow {
                trial_id: row.trial_id.clone(),
                metric: row.metric.name().to_string(),
                pred_len,
                mape: m.value,
                rmse: r,
            });
        }
        per_pred_len.push(LengthAggregate {
            pred_len,
            num_trials: joined.len(),
            mape_mean: mape_sum / joined.len() as f64,
            rmse_mean: rmse_sum / joined.len() as f64,
            guarded_trials: guarded,
        });
    }

    // Selection quality at the full horizon.
    let minimize = predictions[0].metric.minimize();
    let optimum = |values: &[f64]| -> f64 {
        values
            .iter()
            .copied()
            .fold(if minimize { f64::MAX } else { f64::MIN }, |a, v| {
                if minimize { a.min(v) } else { a.max(v) }
            })
    };
    let ids: Vec<String> = joined.iter().map(|(r, _)| r.trial_id.clone()).collect();
    let predicted: Vec<f64> = joined.iter().map(|(r, _)| optimum(&r.mean)).collect();
    let actual: Vec<f64> = joined.iter().map(|(_, t)| optimum(t)).collect();
    let outcome = regret_and_ranking(&ids, &predicted, &actual, minimize)?;
    let corr = rank_correlation(&actual, &predicted)?;

    let full_epochs: usize = joined.iter().map(|(_, t)| t.len()).sum();
    let observed_epochs: usize = joined.iter().map(|(r, _)| r.cond_len).sum();
    let summary = EvalSummary {
        seed,
        config: config_echo,
        num_predictions: joined.len(),
        per_pred_len,
        selection: Selection {
            picked_trial: outcome.picked_trial,
            regret: outcome.regret,
            ranking: outcome.ranking,
        },
        pearson: corr.pearson,
        kendall_tau: corr.kendall_tau,
        speedup: SpeedupAccount {
            full_epochs,
            observed_epochs,
            value: speedup(full_epochs as f64, observed_epochs as f64, 0.0)?,
        },
    };
    manifest.phase("eval", t0.elapsed().as_secs_f64());

    let csv_path = out_dir.join("report.csv");
    write_csv(&csv_path, &rows).context("writing report.csv")?;
    let json_path = out_dir.join("summary.json");
    write_json(&json_path, &summary).context("writing summary.json")?;
    manifest.output(&csv_path);
    manifest.output(&json_path);
    manifest.write(&out_dir.join("manifest.json"))?;

    for agg in &summary.per_pred_len {
        println!(
            "pred_len {:>4}: MAPE {:.4}  RMSE {:.4}  ({} trials)",
            agg.pred_len, agg.mape_mean, agg.rmse_mean, agg.num_trials
        );
    }
    println!(
        "selection: {} (regret {:.4}, rank {})",
        summary.selection.picked_trial, summary.selection.regret, summary.selection.ranking
    );
    Ok(())
}

fn read_predictions(path: &PathBuf) -> Result<Vec<PredictionRow>> {
    let file = std::fs::File::open(path)
        .with_context(|| format!("opening predictions {}", path.display()))?;
    let mut rows = Vec::new();
    for (lineno, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: PredictionRow = serde_json::from_str(&line)
            .with_context(|| format!("{}:{}", path.display(), lineno + 1))?;
        rows.push(row);
    }
    if rows.is_empty() {
        anyhow::bail!("{} holds no predictions", path.display());
    }
    Ok(rows)
}
