//! Mini-batch variational training with validation-based early stopping.
//!
//! The loop is deliberately deterministic: one seed derives fixed-purpose
//! random streams, reparameterization noise is drawn up front in trial
//! order, and gradients reduce in trial order no matter how many worker
//! threads computed them.  Two runs with the same seed and thread count —
//! or different thread counts — produce bit-identical parameters.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, Tape};
use crate::data::{standard_normal, Metric, Trial};
use crate::error::{Error, Result};
use crate::eval::mape;
use crate::graph_encoder::Pooling;
use crate::model::{elbo_on_tape, Model, ModelConfig, TargetTransform};
use crate::optim::AdamW;
use crate::seq_encoder::ObservedPrefix;

// Sub-streams of the training seed.  Keeping them apart means e.g. a
// different validation fraction cannot silently change weight init.
const STREAM_INIT: u64 = 1;
const STREAM_SPLIT: u64 = 2;
const STREAM_EPOCH: u64 = 3;

/// Everything the training loop needs beyond the dataset itself.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub metric: Metric,
    pub latent_dim: usize,
    pub condition_length: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub kl_weight: f64,
    pub obs_noise: f64,
    /// Stop after this many epochs without a validation improvement.
    pub patience: usize,
    /// Fraction of the dataset held out for validation; 0 disables early
    /// stopping and best-epoch selection.
    pub val_fraction: f64,
    /// Horizon the epoch grid is scaled to; must match the dataset.
    pub t_max: f64,
    pub pooling: Pooling,
    /// Zero out the architecture embedding (sequence-only ablation).
    pub ablate_graph: bool,
    /// Worker threads for per-trial gradient passes.  Results do not
    /// depend on this value.
    pub threads: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(metric: Metric, seed: u64) -> TrainConfig {
        TrainConfig {
            metric,
            latent_dim: 16,
            condition_length: 10,
            learning_rate: 1e-3,
            weight_decay: 0.01,
            batch_size: 40,
            epochs: 400,
            kl_weight: 1.0,
            obs_noise: 0.05,
            patience: 50,
            val_fraction: 0.2,
            t_max: 1.0,
            pooling: Pooling::Mean,
            ablate_graph: false,
            threads: 1,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        let positive: [(&str, f64); 6] = [
            ("learning_rate", self.learning_rate),
            ("batch_size", self.batch_size as f64),
            ("epochs", self.epochs as f64),
            ("patience", self.patience as f64),
            ("t_max", self.t_max),
            ("threads", self.threads as f64),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(Error::InvalidInput(format!("{name} must be positive, got {v}")));
            }
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::InvalidInput(format!(
                "val_fraction must lie in [0, 1), got {}",
                self.val_fraction
            )));
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean per-trial negative ELBO over the update steps that ran.
    pub train_loss: f64,
    /// Mean per-trial MAPE on the held-out split, in raw metric units;
    /// absent when val_fraction = 0.
    pub val_mape: Option<f64>,
    /// Batches whose loss or gradient went non-finite and were skipped.
    pub skipped_batches: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
    /// Epoch whose parameters the returned model carries.
    pub best_epoch: usize,
    pub best_val_mape: Option<f64>,
    pub stopped_early: bool,
}

/// A trial reduced to what the loss needs: model-space prefix and targets
/// plus the raw tail for validation scoring.
struct Example<'a> {
    trial: &'a Trial,
    prefix: ObservedPrefix,
    targets: Vec<f64>,
    raw_tail: Vec<f64>,
}

/// Fit a model to the trials and return it with the per-epoch log.  The
/// returned model carries the parameters of the best validation epoch
/// (the final epoch when no validation split is held out).
pub fn train(trials: &[Trial], config: &TrainConfig) -> Result<(Model, TrainLog)> {
    config.validate()?;
    if trials.is_empty() {
        return Err(Error::InvalidInput("training needs at least one trial".into()));
    }

    let m = check_dataset(trials, config)?;
    let (train_idx, val_idx) = split_indices(trials.len(), config);
    if train_idx.is_empty() {
        return Err(Error::InvalidInput(
            "validation split leaves no training trials".into(),
        ));
    }

    // Loss curves train on standardized log-loss; the statistics come from
    // the training split only and ride along in the checkpoint.
    let target_transform = match config.metric {
        Metric::TestAccuracy => TargetTransform::Identity,
        Metric::TestLoss => TargetTransform::fit_log(
            train_idx
                .iter()
                .flat_map(|&i| trials[i].curve(config.metric).unwrap().values.iter().copied()),
        ),
    };

    let model_config = ModelConfig {
        latent_dim: config.latent_dim,
        condition_length: config.condition_length,
        m,
        t_max: config.t_max,
        metric: config.metric,
        ablate_graph: config.ablate_graph,
        obs_noise: config.obs_noise,
        kl_weight: config.kl_weight,
        pooling: config.pooling,
        target_transform,
    };
    let mut model = Model::new(
        model_config,
        &mut stream(config.seed, STREAM_INIT),
    )?;

    let prepare = |idx: &[usize]| -> Result<Vec<Example<'_>>> {
        idx.iter()
            .map(|&i| {
                let trial = &trials[i];
                let values = &trial.curve(config.metric).unwrap().values;
                let (head, tail) = values.split_at(config.condition_length);
                Ok(Example {
                    trial,
                    prefix: model.prepare_prefix(head)?,
                    targets: tail
                        .iter()
                        .map(|&y| model.config.target_transform.apply(y))
                        .collect(),
                    raw_tail: tail.to_vec(),
                })
            })
            .collect()
    };
    let train_set = prepare(&train_idx)?;
    let val_set = prepare(&val_idx)?;

    let mut optimizer =
        AdamW::new(&model.store, config.learning_rate, config.weight_decay);
    let mut epoch_rng = stream(config.seed, STREAM_EPOCH);
    let pred_times = model.config.prediction_times();

    let mut log = TrainLog {
        epochs: Vec::with_capacity(config.epochs),
        best_epoch: 0,
        best_val_mape: None,
        stopped_early: false,
    };
    let mut best_store = model.store.clone();
    let mut best_epoch = 0;
    let mut best_val = f64::INFINITY;
    let mut epochs_since_improvement = 0;
    let mut consecutive_divergent = 0;
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=config.epochs {
        shuffle(&mut order, &mut epoch_rng);

        let mut loss_sum = 0.0;
        let mut loss_count = 0usize;
        let mut skipped = 0usize;

        for batch in order.chunks(config.batch_size) {
            // Noise is drawn sequentially before any fan-out so the draw
            // order never depends on scheduling.
            let noise: Vec<Vec<f64>> = batch
                .iter()
                .map(|_| {
                    (0..config.latent_dim)
                        .map(|_| standard_normal(&mut epoch_rng))
                        .collect()
                })
                .collect();

            // A forward pass that blows up mid-tape is the same failure as
            // a non-finite loss value: skip the step, keep training.
            let per_trial =
                match batch_losses(&model, &train_set, batch, &noise, &pred_times, config.threads) {
                    Ok(v) => v,
                    Err(Error::NonFinite { .. }) | Err(Error::IntegrationDiverged { .. }) => {
                        skipped += 1;
                        continue;
                    }
                    Err(e) => return Err(e),
                };

            let mut total = Gradients::zeros(&model.store);
            let mut batch_loss = 0.0;
            for (value, grads) in &per_trial {
                batch_loss += value;
                total.add_assign(grads);
            }
            batch_loss /= batch.len() as f64;
            total.scale(1.0 / batch.len() as f64);

            let finite = batch_loss.is_finite()
                && total.iter().all(|g| g.data().iter().all(|v| v.is_finite()));
            if !finite {
                skipped += 1;
                continue;
            }
            optimizer.step(&mut model.store, &total);
            loss_sum += batch_loss;
            loss_count += 1;
        }

        let train_loss =
            if loss_count > 0 { loss_sum / loss_count as f64 } else { f64::NAN };
        if train_loss.is_finite() {
            consecutive_divergent = 0;
        } else {
            consecutive_divergent += 1;
            if consecutive_divergent >= 3 {
                return Err(Error::Diverged {
                    epoch,
                    msg: format!(
                        "training loss non-finite for {consecutive_divergent} consecutive epochs \
                         ({skipped} of {} batches skipped in the last one); \
                         lower the learning rate or raise obs_noise",
                        order.chunks(config.batch_size).count()
                    ),
                });
            }
        }

        let val_mape = if val_set.is_empty() {
            None
        } else {
            Some(validation_mape(&model, &val_set)?)
        };

        log.epochs.push(EpochLog { epoch, train_loss, val_mape, skipped_batches: skipped });

        match val_mape {
            Some(v) if v < best_val => {
                best_val = v;
                best_epoch = epoch;
                best_store = model.store.clone();
                epochs_since_improvement = 0;
            }
            Some(_) => {
                epochs_since_improvement += 1;
                if epochs_since_improvement >= config.patience {
                    log.stopped_early = true;
                    break;
                }
            }
            None => {}
        }
    }

    if val_set.is_empty() {
        log.best_epoch = log.epochs.last().map_or(0, |e| e.epoch);
        log.best_val_mape = None;
    } else {
        model.store = best_store;
        log.best_epoch = best_epoch;
        log.best_val_mape = Some(best_val);
    }
    Ok((model, log))
}

fn stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// All trials must carry the chosen metric on one shared grid that agrees
/// with the config; returns the common curve length m.
fn check_dataset(trials: &[Trial], config: &TrainConfig) -> Result<usize> {
    let mut m = 0usize;
    for trial in trials {
        let curve = trial.curve(config.metric).ok_or_else(|| {
            Error::InvalidInput(format!(
                "trial {} has no {} curve",
                trial.trial_id,
                config.metric.name()
            ))
        })?;
        if m == 0 {
            m = curve.m();
        } else if curve.m() != m {
            return Err(Error::InvalidInput(format!(
                "trial {} has {} epochs, expected {m}",
                trial.trial_id,
                curve.m()
            )));
        }
        if curve.t_max != config.t_max {
            return Err(Error::InvalidInput(format!(
                "trial {} spans t_max {}, config says {}",
                trial.trial_id, curve.t_max, config.t_max
            )));
        }
    }
    if config.condition_length >= m {
        return Err(Error::InvalidInput(format!(
            "condition_length {} must leave something to predict from {m} epochs",
            config.condition_length
        )));
    }
    Ok(m)
}

/// Deterministic held-out split: Fisher–Yates over indices on the split
/// stream, last `round(n·val_fraction)` indices become validation.
fn split_indices(n: usize, config: &TrainConfig) -> (Vec<usize>, Vec<usize>) {
    let num_val = ((n as f64) * config.val_fraction).round() as usize;
    let num_val = num_val.min(n.saturating_sub(1));
    let mut idx: Vec<usize> = (0..n).collect();
    shuffle(&mut idx, &mut stream(config.seed, STREAM_SPLIT));
    let val = idx.split_off(n - num_val);
    (idx, val)
}

fn shuffle(idx: &mut [usize], rng: &mut ChaCha8Rng) {
    use rand::Rng;
    for i in (1..idx.len()).rev() {
        let j = rng.gen_range(0..=i);
        idx.swap(i, j);
    }
}

/// Loss value and gradient for each batch element, computed independently
/// per trial and returned in batch order.
fn batch_losses(
    model: &Model,
    examples: &[Example<'_>],
    batch: &[usize],
    noise: &[Vec<f64>],
    pred_times: &[f64],
    threads: usize,
) -> Result<Vec<(f64, Gradients)>> {
    let one = |slot: usize| -> Result<(f64, Gradients)> {
        let ex = &examples[batch[slot]];
        let mut tape = Tape::new();
        let pass =
            model.forward_on_tape(&mut tape, &ex.prefix, pred_times, &ex.trial.graph, &noise[slot])?;
        let elbo = elbo_on_tape(
            &mut tape,
            &pass.pred_nodes,
            &ex.targets,
            pass.mu,
            pass.sigma,
            model.config.latent_dim,
            model.config.obs_noise,
            model.config.kl_weight,
        )?;
        let loss = tape.scale(elbo, -1.0);
        let value = tape.value(loss).item();
        let grads = tape.backward(loss, &model.store)?;
        Ok((value, grads))
    };

    if threads <= 1 || batch.len() <= 1 {
        return (0..batch.len()).map(one).collect();
    }

    let workers = threads.min(batch.len());
    let results: Vec<Option<Result<(f64, Gradients)>>> =
        std::thread::scope(|scope| {
            let one = &one;
            let mut handles = Vec::with_capacity(workers);
            for w in 0..workers {
                handles.push(scope.spawn(move || {
                    (w..batch.len())
                        .step_by(workers)
                        .map(|slot| (slot, one(slot)))
                        .collect::<Vec<_>>()
                }));
            }
            let mut slots: Vec<Option<Result<(f64, Gradients)>>> =
                (0..batch.len()).map(|_| None).collect();
            for handle in handles {
                for (slot, res) in handle.join().expect("worker panicked") {
                    slots[slot] = Some(res);
                }
            }
            slots
        });
    results.into_iter().map(|r| r.expect("every slot filled")).collect()
}

/// Mean per-trial MAPE of the posterior-mean extrapolation against the raw
/// held-out tails.
fn validation_mape(model: &Model, val_set: &[Example<'_>]) -> Result<f64> {
    let mut sum = 0.0;
    for ex in val_set {
        // One sample means zero noise: deterministic, rng untouched.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mean = match model.extrapolate(
            &ex.trial.curve(model.config.metric).unwrap().values[..model.config.condition_length],
            &ex.trial.graph,
            1,
            &mut rng,
        ) {
            Ok((mean, _)) => mean,
            // A model in a blown-up state scores as infinitely bad rather
            // than killing the run; the divergence detector decides.
            Err(Error::NonFinite { .. }) | Err(Error::IntegrationDiverged { .. }) => {
                return Ok(f64::INFINITY)
            }
            Err(e) => return Err(e),
        };
        let m = mape(&ex.raw_tail, &mean)?.value;
        if !m.is_finite() {
            return Ok(f64::INFINITY);
        }
        sum += m;
    }
    Ok(sum / val_set.len() as f64)
}

// ---------------------------------------------------------------------------
