use std::path::PathBuf;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::Args;
use lcgode::data::{save_dataset, split};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config_file::ConfigFile;
use crate::manifest::{sibling_manifest, ManifestBuilder};

use super::read_dataset;

#[derive(Args)]
pub struct SplitArgs {
    /// Dataset to split (JSON Lines)
    #[arg(long)]
    data: Option<PathBuf>,

    /// Fraction of trials that go to the test file
    #[arg(long)]
    test_fraction: Option<f64>,

    #[arg(long)]
    seed: Option<u64>,

    #[arg(long)]
    out_train: Option<PathBuf>,

    #[arg(long)]
    out_test: Option<PathBuf>,
}

pub fn run(args: SplitArgs, file: &ConfigFile) -> Result<()> {
    let data: PathBuf = file.need(args.data, "data")?;
    let test_fraction = file.or_default(args.test_fraction, "test_fraction", 0.2)?;
    let seed = file.or_default(args.seed, "seed", 0)?;
    let out_train: PathBuf = file.need(args.out_train, "out_train")?;
    let out_test: PathBuf = file.need(args.out_test, "out_test")?;

    let mut manifest = ManifestBuilder::new(
        "split",
        seed,
        serde_json::json!({
            "data": data, "test_fraction": test_fraction, "seed": seed,
            "out_train": out_train, "out_test": out_test,
        }),
    );
    manifest.input(&data)?;

    let t0 = Instant::now();
    let trials = read_dataset(&data)?;
    let (train, test) = split(trials, test_fraction, &mut ChaCha8Rng::seed_from_u64(seed))?;
    save_dataset(&out_train, &train)
        .with_context(|| format!("writing {}", out_train.display()))?;
    save_dataset(&out_test, &test)
        .with_context(|| format!("writing {}", out_test.display()))?;
    manifest.phase("split", t0.elapsed().as_secs_f64());

    manifest.output(&out_train);
    manifest.output(&out_test);
    manifest.write(&sibling_manifest(&out_train))?;
    println!(
        "split {} trials into {} train + {} test",
        train.len() + test.len(),
        train.len(),
        test.len()
    );
    Ok(())
}
