// Full-ranking metrics for hand-made scores, with the per-group NDCG split
// and the CSV export.

use bslrec::config::EvalConfig;
use bslrec::data::Dataset;
use bslrec::eval::evaluate_scores;

pub fn run_example() -> bslrec::Result<()> {
    let ds = Dataset::from_lists(
        2,
        6,
        vec![vec![0, 1], vec![2]],
        vec![vec![3], vec![4, 5]],
    )?;
    let eval = EvalConfig {
        ks: vec![1, 3, 5],
        group_k: 5,
        n_groups: 2,
        ..EvalConfig::default()
    };
    // user 0 ranks its test item second, user 1 ranks both test items first
    let report = evaluate_scores(&ds, &eval, |u| match u {
        0 => vec![9.0, 9.0, 0.5, 0.4, 0.1, 0.0],
        _ => vec![0.0, 0.1, 9.0, 0.2, 0.8, 0.9],
    })?;
    print!("{}", report.to_csv_string());
    let total: f64 = report.group_ndcg.iter().sum();
    assert!((total - report.ndcg[&5]).abs() < 1e-12);
    Ok(())
}

#[allow(dead_code)]
fn main() -> bslrec::Result<()> {
    run_example()
}
