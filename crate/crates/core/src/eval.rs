//! Full-ranking evaluation: Recall@K, NDCG@K, popularity-group NDCG
//! decomposition and the variance of scores on non-interacted items.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::EvalConfig;
use crate::data::{popularity_groups, Dataset};
use crate::error::{Error, Result};
use crate::model::EmbeddingTable;
use crate::sampling::{rng_for, stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub recall: BTreeMap<usize, f64>,
    pub ndcg: BTreeMap<usize, f64>,
    /// K used for `group_ndcg`.
    pub group_k: usize,
    /// Per popularity group (0 = least popular), the share of NDCG@group_k
    /// earned by hits on that group's items. Sums to `ndcg[group_k]`.
    pub group_ndcg: Vec<f64>,
    pub neg_score_variance: f64,
    pub n_eval_users: usize,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Flat CSV: one row per (metric, K), then one per group.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["metric", "k", "group", "value"])?;
        for (name, map) in [("recall", &self.recall), ("ndcg", &self.ndcg)] {
            for (k, v) in map {
                w.write_record([name, &k.to_string(), "", &v.to_string()])?;
            }
        }
        for (g, v) in self.group_ndcg.iter().enumerate() {
            w.write_record(["group_ndcg", &self.group_k.to_string(), &g.to_string(), &v.to_string()])?;
        }
        w.write_record(["neg_score_variance", "", "", &self.neg_score_variance.to_string()])?;
        w.write_record(["n_eval_users", "", "", &self.n_eval_users.to_string()])?;
        w.flush().map_err(|e| Error::Csv(e.into()))?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }

    fn share(&self, groups: std::ops::Range<usize>) -> f64 {
        let total: f64 = self.group_ndcg.iter().sum();
        if total == 0.0 {
            return 0.0;
        }
        self.group_ndcg[groups].iter().sum::<f64>() / total
    }

    /// NDCG share of the less popular half of the groups.
    pub fn unpopular_share(&self) -> f64 {
        self.share(0..self.group_ndcg.len() / 2)
    }

    /// NDCG share of the more popular half of the groups. With an odd group
    /// count the middle group belongs to neither half.
    pub fn popular_share(&self) -> f64 {
        let n = self.group_ndcg.len();
        self.share(n - n / 2..n)
    }

    /// NDCG share of the single most popular group.
    pub fn top_group_share(&self) -> f64 {
        let n = self.group_ndcg.len();
        self.share(n.saturating_sub(1)..n)
    }
}

/// Descending score, ascending item id.
fn rank_order(scores: &[f64], a: usize, b: usize) -> Ordering {
    scores[b].total_cmp(&scores[a]).then(a.cmp(&b))
}

/// Top `k` items for a user, excluding `exclude` (sorted).
pub fn top_k(scores: &[f64], exclude: &[usize], k: usize) -> Vec<usize> {
    let mut cand: Vec<usize> = (0..scores.len())
        .filter(|i| exclude.binary_search(i).is_err())
        .collect();
    let k = k.min(cand.len());
    if k == 0 {
        return Vec::new();
    }
    if k < cand.len() {
        cand.select_nth_unstable_by(k - 1, |&a, &b| rank_order(scores, a, b));
        cand.truncate(k);
    }
    cand.sort_unstable_by(|&a, &b| rank_order(scores, a, b));
    cand
}

fn discount(rank: usize) -> f64 {
    // rank is 1-based
    1.0 / ((rank + 1) as f64).log2()
}

fn idcg(k: usize, n_test: usize) -> f64 {
    (1..=k.min(n_test)).map(discount).sum()
}

struct UserResult {
    recall: Vec<f64>,
    ndcg: Vec<f64>,
    groups: Vec<f64>,
    neg_scores: Vec<f64>,
    evaluated: bool,
}

/// Evaluates an arbitrary per-user scoring function. `score(u)` must return
/// one score per item.
pub fn evaluate_scores<F>(ds: &Dataset, cfg: &EvalConfig, score: F) -> Result<EvalReport>
where
    F: Fn(usize) -> Vec<f64> + Sync,
{
    if cfg.ks.is_empty() || cfg.ks.contains(&0) || cfg.group_k == 0 {
        return Err(Error::InvalidArgument("ks must be nonempty with every K >= 1".into()));
    }
    if !(0..ds.n_users()).any(|u| !ds.test_pos(u).is_empty()) {
        return Err(Error::EmptyEvaluation);
    }
    let n_groups = cfg.n_groups.clamp(1, ds.n_items().max(1));
    let groups = popularity_groups(ds, n_groups)?;
    let k_max = cfg.ks.iter().copied().max().unwrap_or(1).max(cfg.group_k);

    let per_user: Vec<UserResult> = (0..ds.n_users())
        .into_par_iter()
        .map(|u| {
            let scores = score(u);
            assert_eq!(scores.len(), ds.n_items(), "score function must cover every item");
            let train = ds.train_pos(u);
            let test = ds.test_pos(u);
            let neg_scores = sample_negative_scores(ds, cfg, u, &scores);
            if test.is_empty() {
                return UserResult {
                    recall: Vec::new(),
                    ndcg: Vec::new(),
                    groups: Vec::new(),
                    neg_scores,
                    evaluated: false,
                };
            }
            let ranked = top_k(&scores, train, k_max);
            let hits: Vec<bool> = ranked.iter().map(|i| test.binary_search(i).is_ok()).collect();
            let mut recall = Vec::with_capacity(cfg.ks.len());
            let mut ndcg = Vec::with_capacity(cfg.ks.len());
            for &k in &cfg.ks {
                let top = &hits[..k.min(hits.len())];
                let n_hits = top.iter().filter(|&&h| h).count();
                let dcg: f64 = top
                    .iter()
                    .enumerate()
                    .filter(|(_, &h)| h)
                    .map(|(r, _)| discount(r + 1))
                    .sum();
                recall.push(n_hits as f64 / test.len() as f64);
                ndcg.push(dcg / idcg(k, test.len()));
            }
            let mut group_share = vec![0.0; n_groups];
            let ideal = idcg(cfg.group_k, test.len());
            for (r, (&item, &hit)) in ranked.iter().zip(&hits).take(cfg.group_k).enumerate() {
                if hit {
                    group_share[groups[item]] += discount(r + 1) / ideal;
                }
            }
            UserResult {
                recall,
                ndcg,
                groups: group_share,
                neg_scores,
                evaluated: true,
            }
        })
        .collect();

    let evaluated: Vec<&UserResult> = per_user.iter().filter(|r| r.evaluated).collect();
    let n_eval = evaluated.len() as f64;
    let mean_at = |pick: &dyn Fn(&UserResult) -> f64| evaluated.iter().map(|r| pick(r)).sum::<f64>() / n_eval;
    let mut recall = BTreeMap::new();
    let mut ndcg = BTreeMap::new();
    for (j, &k) in cfg.ks.iter().enumerate() {
        recall.insert(k, mean_at(&|r| r.recall[j]));
        ndcg.insert(k, mean_at(&|r| r.ndcg[j]));
    }
    let group_ndcg = (0..n_groups).map(|g| mean_at(&|r| r.groups[g])).collect();
    let pooled: Vec<f64> = per_user.iter().flat_map(|r| r.neg_scores.iter().copied()).collect();
    Ok(EvalReport {
        recall,
        ndcg,
        group_k: cfg.group_k,
        group_ndcg,
        neg_score_variance: population_variance(&pooled),
        n_eval_users: evaluated.len(),
    })
}

/// Scores of a uniform sample (without replacement) of the items the user
/// has not interacted with in either split. Each user has its own stream so
/// the sample does not depend on evaluation order.
fn sample_negative_scores(ds: &Dataset, cfg: &EvalConfig, user: usize, scores: &[f64]) -> Vec<f64> {
    let candidates: Vec<usize> = (0..ds.n_items())
        .filter(|&i| !ds.is_train_positive(user, i) && !ds.is_test_positive(user, i))
        .collect();
    let n = cfg.variance_sample.min(candidates.len());
    let mut rng = rng_for(cfg.seed, stream::EVAL, user as u64);
    index::sample(&mut rng, candidates.len(), n)
        .into_iter()
        .map(|j| scores[candidates[j]])
        .collect()
}

fn population_variance(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n
}

/// Full-ranking evaluation of an embedding table.
pub fn evaluate(table: &EmbeddingTable, ds: &Dataset, cfg: &EvalConfig) -> Result<EvalReport> {
    if table.n_users() != ds.n_users() || table.n_items() != ds.n_items() {
        return Err(Error::InvalidArgument(format!(
            "table is {}x{} but dataset is {}x{}",
            table.n_users(),
            table.n_items(),
            ds.n_users(),
            ds.n_items()
        )));
    }
    evaluate_scores(ds, cfg, |u| table.score_all_items(u, cfg.score_mode))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg(ks: &[usize]) -> EvalConfig {
        EvalConfig {
            ks: ks.to_vec(),
            group_k: *ks.iter().max().unwrap(),
            n_groups: 2,
            ..EvalConfig::default()
        }
    }

    fn one_user(test: usize) -> Dataset {
        Dataset::from_lists(1, 5, vec![vec![0]], vec![vec![test]]).unwrap()
    }

    #[test]
    fn perfect_and_second_place_rankings() {
        let ds = one_user(3);
        let first = evaluate_scores(&ds, &cfg(&[20]), |_| vec![9.0, 0.1, 0.2, 1.0, 0.3]).unwrap();
        assert_eq!(first.recall[&20], 1.0);
        assert_eq!(first.ndcg[&20], 1.0);
        let second = evaluate_scores(&ds, &cfg(&[20]), |_| vec![9.0, 0.1, 2.0, 1.0, 0.3]).unwrap();
        assert!((second.ndcg[&20] - 1.0 / 3f64.log2()).abs() < 1e-15);
        assert!((second.ndcg[&20] - 0.6309).abs() < 1e-4);
    }

    #[test]
    fn ties_break_by_item_id() {
        let ds = one_user(4);
        let r = evaluate_scores(&ds, &cfg(&[1, 2]), |_| vec![1.0; 5]).unwrap();
        // candidates 1..=4 all tie, so item 4 ranks last
        assert_eq!(r.recall[&2], 0.0);
        assert_eq!(top_k(&[1.0; 5], &[0], 3), vec![1, 2, 3]);
    }

    #[test]
    fn empty_test_split_is_an_error() {
        let ds = Dataset::from_lists(2, 3, vec![vec![0], vec![1]], vec![]).unwrap();
        assert!(matches!(
            evaluate_scores(&ds, &cfg(&[20]), |_| vec![0.0; 3]),
            Err(Error::EmptyEvaluation)
        ));
    }

    fn brute_force(ds: &Dataset, ks: &[usize], scores: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
        let mut recall = vec![0.0; ks.len()];
        let mut ndcg = vec![0.0; ks.len()];
        let mut n = 0.0;
        for u in 0..ds.n_users() {
            let test = ds.test_pos(u);
            if test.is_empty() {
                continue;
            }
            n += 1.0;
            let mut items: Vec<usize> = (0..ds.n_items()).filter(|i| !ds.train_pos(u).contains(i)).collect();
            items.sort_by(|&a, &b| {
                scores[u][b].partial_cmp(&scores[u][a]).unwrap().then(a.cmp(&b))
            });
            for (j, &k) in ks.iter().enumerate() {
                let mut hits = 0.0;
                let mut dcg = 0.0;
                for (r, item) in items.iter().take(k).enumerate() {
                    if test.contains(item) {
                        hits += 1.0;
                        dcg += 1.0 / ((r + 2) as f64).log2();
                    }
                }
                let ideal: f64 = (0..k.min(test.len())).map(|r| 1.0 / ((r + 2) as f64).log2()).sum();
                recall[j] += hits / test.len() as f64;
                ndcg[j] += dcg / ideal;
            }
        }
        (recall.iter().map(|x| x / n).collect(), ndcg.iter().map(|x| x / n).collect())
    }

    #[test]
    fn matches_brute_force_on_random_fixture() {
        let ds = crate::synthetic::uniform(20, 50, 0.15, 0.3, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        // coarse scores force plenty of ties
        let scores: Vec<Vec<f64>> = (0..20)
            .map(|_| (0..50).map(|_| rng.random_range(0..10) as f64).collect())
            .collect();
        let ks = [1, 5, 10, 20];
        let r = evaluate_scores(&ds, &cfg(&ks), |u| scores[u].clone()).unwrap();
        let (rec, nd) = brute_force(&ds, &ks, &scores);
        for (j, k) in ks.iter().enumerate() {
            assert!((r.recall[k] - rec[j]).abs() < 1e-12);
            assert!((r.ndcg[k] - nd[j]).abs() < 1e-12);
        }
        let total: f64 = r.group_ndcg.iter().sum();
        assert!((total - r.ndcg[&20]).abs() < 1e-9);
    }

    #[test]
    fn monotone_in_k_and_rank_invariant() {
        let ds = crate::synthetic::uniform(15, 40, 0.2, 0.3, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let scores: Vec<Vec<f64>> = (0..15)
            .map(|_| (0..40).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let ks = [1, 3, 5, 10, 20, 40];
        let a = evaluate_scores(&ds, &cfg(&ks), |u| scores[u].clone()).unwrap();
        let b = evaluate_scores(&ds, &cfg(&ks), |u| scores[u].iter().map(|s| (3.0 * s).exp()).collect()).unwrap();
        assert_eq!(a.recall, b.recall);
        assert_eq!(a.ndcg, b.ndcg);
        for w in ks.windows(2) {
            assert!(a.recall[&w[0]] <= a.recall[&w[1]]);
            assert!(a.ndcg[&w[0]] <= a.ndcg[&w[1]] + 1e-15);
        }
    }

    #[test]
    fn single_group_equals_total() {
        let ds = crate::synthetic::uniform(10, 30, 0.2, 0.3, 4);
        let c = EvalConfig {
            n_groups: 1,
            ..cfg(&[20])
        };
        let table = EmbeddingTable::init(10, 30, 8, 1).unwrap();
        let r = evaluate(&table, &ds, &c).unwrap();
        assert_eq!(r.group_ndcg.len(), 1);
        assert!((r.group_ndcg[0] - r.ndcg[&20]).abs() < 1e-9);
    }

    #[test]
    fn variance_is_deterministic_and_zero_for_constant_scores() {
        let ds = crate::synthetic::uniform(10, 30, 0.2, 0.3, 4);
        let r = evaluate_scores(&ds, &cfg(&[20]), |_| vec![0.5; 30]).unwrap();
        assert_eq!(r.neg_score_variance, 0.0);
        let table = EmbeddingTable::init(10, 30, 8, 1).unwrap();
        let a = evaluate(&table, &ds, &cfg(&[20])).unwrap();
        let b = evaluate(&table, &ds, &cfg(&[20])).unwrap();
        assert_eq!(a, b);
        assert!(a.neg_score_variance > 0.0);
    }

    #[test]
    fn shares_split_the_groups() {
        let r = EvalReport {
            recall: BTreeMap::new(),
            ndcg: BTreeMap::new(),
            group_k: 20,
            group_ndcg: vec![0.1, 0.1, 0.2, 0.2, 0.4],
            neg_score_variance: 0.0,
            n_eval_users: 1,
        };
        assert!((r.unpopular_share() - 0.2).abs() < 1e-12);
        assert!((r.popular_share() - 0.6).abs() < 1e-12);
        assert!((r.top_group_share() - 0.4).abs() < 1e-12);
    }

    #[test]
    fn csv_has_one_row_per_metric_and_k() {
        let ds = one_user(3);
        let r = evaluate_scores(&ds, &cfg(&[5, 10, 15, 20]), |_| vec![0.0, 0.1, 0.2, 1.0, 0.3]).unwrap();
        let csv = r.to_csv_string();
        assert_eq!(csv.lines().filter(|l| l.starts_with("recall,")).count(), 4);
        assert_eq!(csv.lines().filter(|l| l.starts_with("ndcg,")).count(), 4);
        let back: EvalReport = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r);
    }
}
