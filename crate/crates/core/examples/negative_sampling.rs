// False-negative injection through `r_noise` and the in-batch negative mask.

use bslrec::data::Dataset;
use bslrec::sampling::{in_batch_negatives, rng_for, stream, SamplerState};

pub fn run_example() -> bslrec::Result<()> {
    // user 0 has 3 positives among 10 items
    let ds = Dataset::from_lists(1, 10, vec![vec![1, 4, 7]], vec![])?;
    for r in [0.0, 1.0, 3.0] {
        let mut sampler = SamplerState::uniform(rng_for(42, stream::NEGATIVES, 0), r)?;
        let draws = sampler.sample_negatives(&ds, 0, 100_000)?;
        let hit = draws.iter().filter(|&&i| ds.is_train_positive(0, i)).count() as f64 / draws.len() as f64;
        let expected = sampler.positive_probability(&ds, 0);
        println!("r={r}: positive fraction {hit:.4} (closed form {expected:.4})");
        assert!((hit - expected).abs() < 0.01);
    }

    let mask = in_batch_negatives(&[0, 1, 2], &[5, 6, 7])?;
    for (i, row) in mask.dense().iter().enumerate() {
        println!("row {i} negatives: {row:?}");
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> bslrec::Result<()> {
    run_example()
}
