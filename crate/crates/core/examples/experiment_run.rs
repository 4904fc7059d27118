// A complete training run driven by a TOML config: manifest, checkpoints,
// per-epoch log and final metrics in an output directory.

use bslrec::config::ExperimentConfig;
use bslrec::experiment::{files, run_training};
use bslrec::synthetic::{planted, PlantedConfig};
use bslrec::Error;

pub fn run_example() -> bslrec::Result<()> {
    let dir = std::env::temp_dir().join(format!("bslrec-example-{}", std::process::id()));
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let ds = planted(&PlantedConfig::default());
    ds.save(&dir.join("train.txt"), &dir.join("test.txt"))?;

    let text = r#"
        train_path = "train.txt"
        test_path = "test.txt"
        embedding_dim = 16
        learning_rate = 0.01
        batch_size = 256
        epochs = 10
        eval_every = 5
        loss = "bsl"
        tau_pos = 0.2
        tau_neg = 0.2
    "#;
    let cfg_path = dir.join("experiment.toml");
    std::fs::write(&cfg_path, text).map_err(|e| Error::io(&cfg_path, e))?;
    let cfg = ExperimentConfig::load(&cfg_path, &["rng_seed=7".to_string()])?;

    let out = dir.join("run");
    let outcome = run_training(&cfg, &out, false)?;
    println!("best epoch {:?}, NDCG@20 {:.4}", outcome.best_epoch, outcome.report.ndcg[&20]);
    let log_path = out.join(files::EPOCHS);
    let log = std::fs::read_to_string(&log_path).map_err(|e| Error::io(&log_path, e))?;
    print!("{log}");
    let _ = std::fs::remove_dir_all(&dir);
    Ok(())
}

#[allow(dead_code)]
fn main() -> bslrec::Result<()> {
    run_example()
}
