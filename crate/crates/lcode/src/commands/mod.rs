pub mod eval;
pub mod generate;
pub mod predict;
pub mod rank;
pub mod split;
pub mod train;

use std::path::Path;

use anyhow::{Context, Result};
use lcgode::data::{load_dataset, Metric, Trial};
use lcgode::model::Model;
use serde::{Deserialize, Serialize};

/// Load a dataset, surfacing any unknown-key warnings on stderr.
pub fn read_dataset(path: &Path) -> Result<Vec<Trial>> {
    let (trials, warnings) =
        load_dataset(path).with_context(|| format!("loading dataset {}", path.display()))?;
    for w in warnings {
        eprintln!("warning: {w}");
    }
    Ok(trials)
}

/// Check that every trial matches the grid a checkpoint was trained on,
/// naming the first mismatch.
pub fn check_grid(model: &Model, trials: &[Trial]) -> Result<()> {
    let cfg = &model.config;
    for trial in trials {
        let curve = trial.curve(cfg.metric).ok_or_else(|| {
            anyhow::anyhow!(
                "trial {} has no {} curve (checkpoint was trained on it)",
                trial.trial_id,
                cfg.metric.name()
            )
        })?;
        if curve.m() != cfg.m {
            anyhow::bail!(
                "trial {} has {} epochs, checkpoint expects {}",
                trial.trial_id,
                curve.m(),
                cfg.m
            );
        }
        if curve.t_max != cfg.t_max {
            anyhow::bail!(
                "trial {} spans t_max {}, checkpoint expects {}",
                trial.trial_id,
                curve.t_max,
                cfg.t_max
            );
        }
    }
    Ok(())
}

/// One extrapolated curve as stored in `predictions.jsonl`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictionRow {
    pub trial_id: String,
    pub metric: Metric,
    /// Observed epochs the prediction conditions on; the first predicted
    /// value is for epoch cond_len + 1.
    pub cond_len: usize,
    pub t_max: f64,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Apply `f` to every index in order-stable fashion: workers stride over
/// the index space and results land in their slots, so the output never
/// depends on the thread count.
pub fn indexed_map<T, F>(n: usize, threads: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync,
{
    if threads <= 1 || n <= 1 {
        return (0..n).map(f).collect();
    }
    let workers = threads.min(n);
    let slots: Vec<Option<Result<T>>> = std::thread::scope(|scope| {
        let f = &f;
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                scope.spawn(move || {
                    (w..n).step_by(workers).map(|i| (i, f(i))).collect::<Vec<_>>()
                })
            })
            .collect();
        let mut slots: Vec<Option<Result<T>>> = (0..n).map(|_| None).collect();
        for handle in handles {
            for (i, r) in handle.join().expect("worker panicked") {
                slots[i] = Some(r);
            }
        }
        slots
    });
    slots.into_iter().map(|s| s.expect("every slot filled")).collect()
}

/// Serialize one value per line (JSON Lines).
pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    use std::io::Write as _;
    let mut out = std::io::BufWriter::new(
        std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?,
    );
    for row in rows {
        serde_json::to_writer(&mut out, row)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}
