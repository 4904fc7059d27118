// Popularity-group NDCG shares of SL, BPR and SL without its variance term
// on a Zipf-skewed dataset.

use bslrec::config::{EvalConfig, LossKind, LossSpec, TrainConfig};
use bslrec::experiment::FairnessReport;
use bslrec::model::train;
use bslrec::synthetic::{zipf, ZipfConfig};

pub fn run_example() -> bslrec::Result<()> {
    let ds = zipf(&ZipfConfig::default());
    let cfg = TrainConfig {
        embedding_dim: 16,
        learning_rate: 0.01,
        n_negatives: 64,
        batch_size: 256,
        epochs: 20,
        ..TrainConfig::default()
    };
    let specs = [
        ("sl", LossSpec::sl(0.1)),
        ("bpr", LossSpec::of_kind(LossKind::Bpr)),
        (
            "sl_no_variance",
            LossSpec {
                kind: LossKind::SlNoVariance,
                ..LossSpec::sl(0.1)
            },
        ),
    ];
    let mut tables = Vec::new();
    for (name, spec) in &specs {
        tables.push((name.to_string(), train(&ds, &cfg, spec)?.0));
    }
    let refs: Vec<_> = tables.iter().map(|(n, t)| (n.clone(), t)).collect();
    let report = FairnessReport::new(&refs, &ds, &EvalConfig::default())?;
    report.write_csv(std::io::stdout())?;
    Ok(())
}

#[allow(dead_code)]
fn main() -> bslrec::Result<()> {
    run_example()
}
