//! End-to-end dry run of the synthetic benchmark: generate trials, train
//! the full model and the graph-ablated one, and print the extrapolation
//! and ranking quality numbers together with wall-clock timings.
//!
//!   cargo run --example benchmark [epochs]

use std::time::Instant;

use lcgode::data::{generate_synthetic_dataset, split, GenerateConfig, Metric, Trial};
use lcgode::eval::{mape, rank_correlation, regret_and_ranking};
use lcgode::model::Model;
use lcgode::train::{train, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn test_mape(model: &Model, test: &[Trial]) -> f64 {
    let n = model.config.condition_length;
    let mut sum = 0.0;
    for t in test {
        let values = &t.curve(Metric::TestAccuracy).unwrap().values;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (mean, _) = model.extrapolate(&values[..n], &t.graph, 1, &mut rng).unwrap();
        sum += mape(&values[n..], &mean).unwrap().value;
    }
    sum / test.len() as f64
}

fn selection(model: &Model, test: &[Trial]) -> (f64, usize) {
    let n = model.config.condition_length;
    let ids: Vec<String> = test.iter().map(|t| t.trial_id.clone()).collect();
    let mut pred_best = Vec::new();
    let mut true_best = Vec::new();
    for t in test {
        let values = &t.curve(Metric::TestAccuracy).unwrap().values;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (mean, _) = model.extrapolate(&values[..n], &t.graph, 1, &mut rng).unwrap();
        pred_best.push(mean.iter().copied().fold(f64::MIN, f64::max));
        true_best.push(values.iter().copied().fold(f64::MIN, f64::max));
    }
    let out = regret_and_ranking(&ids, &pred_best, &true_best, false).unwrap();
    let corr = rank_correlation(&true_best, &pred_best).unwrap();
    println!(
        "  selection: picked {} regret {:.4} ranking {} | pearson {:?} tau {:?}",
        out.picked_trial, out.regret, out.ranking, corr.pearson, corr.kendall_tau
    );
    (out.regret, out.ranking)
}

fn main() {
    let epochs: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(400);

    let mut gen = GenerateConfig::default();
    gen.num_trials = 200;
    gen.m = 60;
    gen.noise = 0.02;
    gen.seed = 0;
    gen.ranges.units = (16.0, 64.0);
    gen.ranges.num_layers = (1, 3);

    let t0 = Instant::now();
    let trials = generate_synthetic_dataset(&gen).unwrap();
    let (train_set, test_set) =
        split(trials, 0.2, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    println!(
        "generated {} train + {} test trials in {:.2?}",
        train_set.len(),
        test_set.len(),
        t0.elapsed()
    );

    let mut cfg = TrainConfig::new(Metric::TestAccuracy, 0);
    cfg.epochs = epochs;

    for ablate in [false, true] {
        cfg.ablate_graph = ablate;
        let label = if ablate { "ablated " } else { "full    " };
        let t1 = Instant::now();
        let (model, log) = train(&train_set, &cfg).unwrap();
        let wall = t1.elapsed();
        let held_out = test_mape(&model, &test_set);
        let last = log.epochs.last().unwrap();
        println!(
            "{label}: {} epochs in {wall:.2?} | best epoch {} val {:.4} | last train loss {:.2} | held-out MAPE {held_out:.4}",
            log.epochs.len(),
            log.best_epoch,
            log.best_val_mape.unwrap(),
            last.train_loss,
        );
        selection(&model, &test_set);
    }
}
