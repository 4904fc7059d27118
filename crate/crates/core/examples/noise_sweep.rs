// Sweep the false-negative rate and grid-search the temperature in each cell.

use bslrec::config::{EvalConfig, LossSpec, TrainConfig};
use bslrec::experiment::{noise_sweep, write_sweep_csv};
use bslrec::synthetic::{planted, PlantedConfig};

pub fn run_example() -> bslrec::Result<()> {
    let ds = planted(&PlantedConfig {
        n_users: 100,
        n_items: 60,
        ..PlantedConfig::default()
    });
    let cfg = TrainConfig {
        embedding_dim: 16,
        learning_rate: 0.01,
        n_negatives: 32,
        batch_size: 256,
        epochs: 10,
        ..TrainConfig::default()
    };
    let eval = EvalConfig::default();
    let rows = noise_sweep(&ds, &cfg, &LossSpec::sl(0.1), &[0.0, 1.0, 3.0], &[0.1, 0.2], &eval)?;
    write_sweep_csv(&rows, &eval.ks, std::io::stdout())?;
    Ok(())
}

#[allow(dead_code)]
fn main() -> bslrec::Result<()> {
    run_example()
}
