// Train a cosine matrix-factorization model with SL on a planted two-cluster
// dataset and compare it with a popularity ranking.

use bslrec::config::{EvalConfig, LossSpec, TrainConfig};
use bslrec::eval::{evaluate, evaluate_scores};
use bslrec::model::train;
use bslrec::synthetic::{planted, PlantedConfig};

pub fn run_example() -> bslrec::Result<()> {
    let ds = planted(&PlantedConfig::default());
    let cfg = TrainConfig {
        embedding_dim: 16,
        learning_rate: 0.01,
        n_negatives: 64,
        batch_size: 256,
        epochs: 30,
        ..TrainConfig::default()
    };
    let (table, log) = train(&ds, &cfg, &LossSpec::sl(0.2))?;
    for l in log.iter().step_by(10) {
        println!("epoch {:>3}  loss {:.4}", l.epoch, l.mean_loss);
    }

    let eval = EvalConfig::default();
    let model = evaluate(&table, &ds, &eval)?;
    let popularity: Vec<f64> = ds.item_popularity().iter().map(|&p| p as f64).collect();
    let baseline = evaluate_scores(&ds, &eval, |_| popularity.clone())?;
    println!(
        "Recall@20 model {:.4} vs popularity {:.4}",
        model.recall[&20], baseline.recall[&20]
    );
    assert!(model.recall[&20] > baseline.recall[&20]);
    Ok(())
}

#[allow(dead_code)]
fn main() -> bslrec::Result<()> {
    run_example()
}
