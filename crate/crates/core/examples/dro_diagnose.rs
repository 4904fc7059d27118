// Worst-case negative weights of a trained model: smaller temperatures
// concentrate the weight on the hardest negatives.

use bslrec::config::{LossSpec, TrainConfig};
use bslrec::dro::entropy;
use bslrec::experiment::{dro_diagnose, DiagnoseOptions};
use bslrec::model::train;
use bslrec::synthetic::{planted, PlantedConfig};

pub fn run_example() -> bslrec::Result<()> {
    let ds = planted(&PlantedConfig::default());
    let cfg = TrainConfig {
        embedding_dim: 16,
        learning_rate: 0.01,
        n_negatives: 64,
        batch_size: 256,
        epochs: 10,
        ..TrainConfig::default()
    };
    let (table, _) = train(&ds, &cfg, &LossSpec::sl(0.1))?;
    let opts = DiagnoseOptions {
        rows_per_batch: 16,
        ..DiagnoseOptions::default()
    };
    let d = dro_diagnose(&table, &ds, &opts)?;
    for &tau in &opts.taus {
        let w: Vec<f64> = d.weights.iter().filter(|w| w.tau == tau && w.row == 0).map(|w| w.weight).collect();
        let eta: f64 = d.etas.iter().filter(|e| e.tau == tau).map(|e| e.eta).sum::<f64>() / opts.rows_per_batch as f64;
        println!("tau={tau:<5} entropy {:.3}  max weight {:.3}  mean eta {eta:.4}", entropy(&w), w.iter().cloned().fold(0.0, f64::max));
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> bslrec::Result<()> {
    run_example()
}
