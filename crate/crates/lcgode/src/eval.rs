//! Reported metrics — MAPE, RMSE, regret, ranking, rank correlations,
//! speedup — plus CSV/JSON report emission.
//!
//! Everything here is pure; callers decide what constitutes a "score"
//! (final accuracy, best loss, ...) and in which direction it improves.

use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

// ---------------------------------------------------------------------------
// Pointwise curve errors
// ---------------------------------------------------------------------------

/// Mean absolute percentage error with a guarded denominator.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mape {
    pub value: f64,
    /// True when at least one denominator hit the 1e-8 floor; percentage
    /// errors against near-zero targets are not meaningful and reports
    /// call these trials out.
    pub guarded: bool,
}

const MAPE_DENOM_FLOOR: f64 = 1e-8;

fn check_paired(op: &'static str, truth: &[f64], pred: &[f64]) -> Result<()> {
    if truth.len() != pred.len() {
        return Err(Error::ShapeMismatch {
            op,
            details: format!("{} true values vs {} predictions", truth.len(), pred.len()),
        });
    }
    if truth.is_empty() {
        return Err(Error::InvalidInput(format!("{op} needs at least one point")));
    }
    Ok(())
}

/// MAPE = (1/N) Σ |y_t − ŷ_t| / max(|y_t|, 1e-8).
pub fn mape(truth: &[f64], pred: &[f64]) -> Result<Mape> {
    check_paired("mape", truth, pred)?;
    let mut sum = 0.0;
    let mut guarded = false;
    for (&y, &p) in truth.iter().zip(pred) {
        let denom = y.abs().max(MAPE_DENOM_FLOOR);
        guarded |= y.abs() < MAPE_DENOM_FLOOR;
        sum += (y - p).abs() / denom;
    }
    Ok(Mape { value: sum / truth.len() as f64, guarded })
}

/// Root mean squared error.
pub fn rmse(truth: &[f64], pred: &[f64]) -> Result<f64> {
    check_paired("rmse", truth, pred)?;
    let sum: f64 = truth.iter().zip(pred).map(|(&y, &p)| (y - p) * (y - p)).sum();
    Ok((sum / truth.len() as f64).sqrt())
}

// ---------------------------------------------------------------------------
// Model selection quality
// ---------------------------------------------------------------------------

/// What picking the predicted-best trial would have cost.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionOutcome {
    pub picked_trial: String,
    /// |best true score − true score of the picked trial|.
    pub regret: f64,
    /// Competition rank of the pick under the true scores: 1 + the number
    /// of trials with a strictly better true score.  A pick that ties the
    /// best therefore ranks 1.
    pub ranking: usize,
}

/// Pick the trial whose *predicted* score is best and judge that pick
/// against the *true* scores.  `minimize` says which direction is better
/// (true for loss, false for accuracy).  Equal predicted scores are broken
/// by trial id so the pick is deterministic.
pub fn regret_and_ranking(
    trial_ids: &[String],
    predicted: &[f64],
    actual: &[f64],
    minimize: bool,
) -> Result<SelectionOutcome> {
    if trial_ids.len() != predicted.len() || trial_ids.len() != actual.len() {
        return Err(Error::ShapeMismatch {
            op: "regret_and_ranking",
            details: format!(
                "{} ids, {} predicted, {} actual",
                trial_ids.len(),
                predicted.len(),
                actual.len()
            ),
        });
    }
    if trial_ids.is_empty() {
        return Err(Error::InvalidInput("regret_and_ranking needs at least one trial".into()));
    }
    for (name, scores) in [("predicted", predicted), ("actual", actual)] {
        if let Some(i) = scores.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite {name} score for trial {}",
                trial_ids[i]
            )));
        }
    }

    let better = |a: f64, b: f64| if minimize { a < b } else { a > b };

    let mut pick = 0;
    for i in 1..predicted.len() {
        if better(predicted[i], predicted[pick])
            || (predicted[i] == predicted[pick] && trial_ids[i] < trial_ids[pick])
        {
            pick = i;
        }
    }

    let best_actual = actual
        .iter()
        .copied()
        .fold(actual[0], |acc, v| if better(v, acc) { v } else { acc });
    let regret = (best_actual - actual[pick]).abs();
    let ranking = 1 + actual.iter().filter(|&&v| better(v, actual[pick])).count();

    Ok(SelectionOutcome { picked_trial: trial_ids[pick].clone(), regret, ranking })
}

// ---------------------------------------------------------------------------
// Rank correlations
// ---------------------------------------------------------------------------

/// Agreement between two score lists.  `None` marks a correlation that is
/// undefined (zero variance / all pairs tied) rather than silently NaN.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankCorrelation {
    pub pearson: Option<f64>,
    pub kendall_tau: Option<f64>,
}

/// Pearson r and tie-corrected Kendall τ-b between paired scores.
pub fn rank_correlation(a: &[f64], b: &[f64]) -> Result<RankCorrelation> {
    check_paired("rank_correlation", a, b)?;
    if a.len() < 2 {
        return Err(Error::InvalidInput("rank_correlation needs at least two points".into()));
    }
    Ok(RankCorrelation { pearson: pearson(a, b), kendall_tau: kendall_tau_b(a, b) })
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return None;
    }
    Some(cov / (va * vb).sqrt())
}

/// τ-b = (C − D) / √((n0 − t_a)(n0 − t_b)) where n0 counts all pairs and
/// t_a, t_b count pairs tied within each list.
fn kendall_tau_b(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len();
    let mut concordant = 0i64;
    let mut discordant = 0i64;
    let mut ties_a = 0i64;
    let mut ties_b = 0i64;
    for i in 0..n {
        for j in (i + 1)..n {
            let da = a[i] - a[j];
            let db = b[i] - b[j];
            if da == 0.0 && db == 0.0 {
                ties_a += 1;
                ties_b += 1;
            } else if da == 0.0 {
                ties_a += 1;
            } else if db == 0.0 {
                ties_b += 1;
            } else if (da > 0.0) == (db > 0.0) {
                concordant += 1;
            } else {
                discordant += 1;
            }
        }
    }
    let n0 = (n * (n - 1) / 2) as i64;
    let denom = ((n0 - ties_a) as f64) * ((n0 - ties_b) as f64);
    if denom == 0.0 {
        return None;
    }
    Some((concordant - discordant) as f64 / denom.sqrt())
}

// ---------------------------------------------------------------------------
// Speedup accounting
// ---------------------------------------------------------------------------

/// How much cheaper early-stopped extrapolation is than full training:
/// full_time / (conditioning_time + inference_time).  Times share a unit
/// but the unit itself does not matter.
pub fn speedup(full_time: f64, conditioning_time: f64, inference_time: f64) -> Result<f64> {
    if !(full_time > 0.0) || conditioning_time < 0.0 || inference_time < 0.0 {
        return Err(Error::InvalidInput(format!(
            "speedup needs full_time > 0 and nonnegative components, got ({full_time}, {conditioning_time}, {inference_time})"
        )));
    }
    let denom = conditioning_time + inference_time;
    if !(denom > 0.0) {
        return Err(Error::InvalidInput(
            "speedup denominator (conditioning + inference) must be positive".into(),
        ));
    }
    Ok(full_time / denom)
}

// ---------------------------------------------------------------------------
// Report emission
// ---------------------------------------------------------------------------

/// One CSV row: curve errors for one trial at one prediction length.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub trial_id: String,
    pub metric: String,
    pub pred_len: usize,
    pub mape: f64,
    pub rmse: f64,
}

/// Write rows as `trial_id,metric,pred_len,mape,rmse` with a header line.
/// Floats use the shortest representation that parses back exactly, so
/// reruns are byte-identical.
pub fn write_csv(path: &Path, rows: &[TrialRow]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "trial_id,metric,pred_len,mape,rmse")?;
    for r in rows {
        writeln!(out, "{},{},{},{},{}", r.trial_id, r.metric, r.pred_len, r.mape, r.rmse)?;
    }
    out.flush()?;
    Ok(())
}

/// Write any serializable summary as pretty JSON plus a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

// ---------------------------------------------------------------------------
