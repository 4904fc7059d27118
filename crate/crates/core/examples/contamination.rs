// Inject false positives into the training split and compare how much SL
// and BSL lose.

use bslrec::config::{BslForm, EvalConfig, LossSpec, PositiveGrouping, TrainConfig};
use bslrec::experiment::grid_search_tau;
use bslrec::sampling::contaminate_positives;
use bslrec::synthetic::{planted, PlantedConfig};

pub fn run_example() -> bslrec::Result<()> {
    let ds = planted(&PlantedConfig::default());
    let (_, report) = contaminate_positives(&ds, 0.4, 1)?;
    println!("40% contamination adds {} training pairs", report.injected);

    let mut bsl = LossSpec::bsl(0.2, 0.2, BslForm::Canonical);
    bsl.grouping = PositiveGrouping::User;
    let eval = EvalConfig::default();
    for (name, spec, grid) in [("SL", LossSpec::sl(0.2), vec![]), ("BSL", bsl, vec![0.05, 0.2])] {
        let mut ndcg = Vec::new();
        for ratio in [0.0, 0.4] {
            let cfg = TrainConfig {
                embedding_dim: 16,
                learning_rate: 0.01,
                n_negatives: 64,
                batch_size: 256,
                epochs: 15,
                pos_noise_ratio: ratio,
                ..TrainConfig::default()
            };
            ndcg.push(grid_search_tau(&ds, &cfg, &spec, &grid, &eval)?.report.ndcg[&20]);
        }
        println!("{name:<4} NDCG@20 clean {:.4}  contaminated {:.4}  drop {:.4}", ndcg[0], ndcg[1], ndcg[0] - ndcg[1]);
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> bslrec::Result<()> {
    run_example()
}
