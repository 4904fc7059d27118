// Stop training, write a checkpoint, and resume: the result is bit-identical
// to an uninterrupted run.

use bslrec::config::{LossSpec, TrainConfig};
use bslrec::model::{Checkpoint, Trainer};
use bslrec::synthetic::uniform;

pub fn run_example() -> bslrec::Result<()> {
    let ds = uniform(50, 80, 0.1, 0.2, 3);
    let cfg = TrainConfig {
        embedding_dim: 8,
        learning_rate: 0.01,
        n_negatives: 16,
        batch_size: 64,
        ..TrainConfig::default()
    };
    let spec = LossSpec::sl(0.2);

    let mut straight = Trainer::new(&ds, &cfg, &spec)?;
    for _ in 0..4 {
        straight.run_epoch()?;
    }

    let mut first = Trainer::new(&ds, &cfg, &spec)?;
    first.run_epoch()?;
    first.run_epoch()?;
    let bytes = first.checkpoint().to_bytes();
    println!("checkpoint after epoch 2: {} bytes", bytes.len());

    let mut resumed = Trainer::resume(&ds, &cfg, &spec, Checkpoint::from_bytes(&bytes)?)?;
    resumed.run_epoch()?;
    resumed.run_epoch()?;
    assert_eq!(resumed.table(), straight.table());
    println!("resumed run matches the uninterrupted one");
    Ok(())
}

#[allow(dead_code)]
fn main() -> bslrec::Result<()> {
    run_example()
}
