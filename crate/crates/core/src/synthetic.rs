//! Seeded synthetic datasets with known structure.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;

/// Block-structured interactions: users and items are split into clusters and
/// a user interacts with each item of its own cluster with probability
/// `p_in`, with any other item with probability `p_out`.
#[derive(Debug, Clone)]
pub struct PlantedConfig {
    pub n_users: usize,
    pub n_items: usize,
    pub n_clusters: usize,
    pub p_in: f64,
    pub p_out: f64,
    /// Fraction of each user's interactions held out for test.
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        PlantedConfig {
            n_users: 200,
            n_items: 100,
            n_clusters: 2,
            p_in: 0.3,
            p_out: 0.01,
            test_fraction: 0.2,
            seed: 7,
        }
    }
}

pub fn user_cluster(user: usize, n_users: usize, n_clusters: usize) -> usize {
    user * n_clusters / n_users
}

pub fn item_cluster(item: usize, n_items: usize, n_clusters: usize) -> usize {
    item * n_clusters / n_items
}

pub fn planted(cfg: &PlantedConfig) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let lists = (0..cfg.n_users)
        .map(|u| {
            let uc = user_cluster(u, cfg.n_users, cfg.n_clusters);
            (0..cfg.n_items)
                .filter(|&i| {
                    let p = if item_cluster(i, cfg.n_items, cfg.n_clusters) == uc {
                        cfg.p_in
                    } else {
                        cfg.p_out
                    };
                    rng.random::<f64>() < p
                })
                .collect()
        })
        .collect();
    split(cfg.n_users, cfg.n_items, lists, cfg.test_fraction, &mut rng)
}

/// Clustered interactions whose item marginal follows a Zipf law.
///
/// Each user draws `per_user` distinct items; a draw comes from the user's
/// own item cluster with probability `p_in` and from the whole catalogue
/// otherwise, in both cases proportional to `(rank + 1)^-exponent`. Ranks are
/// a seeded permutation of item ids so popularity is not aligned with ids.
#[derive(Debug, Clone)]
pub struct ZipfConfig {
    pub n_users: usize,
    pub n_items: usize,
    pub n_clusters: usize,
    pub per_user: usize,
    pub p_in: f64,
    pub exponent: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for ZipfConfig {
    fn default() -> Self {
        ZipfConfig {
            n_users: 300,
            n_items: 200,
            n_clusters: 4,
            per_user: 20,
            p_in: 0.7,
            exponent: 1.0,
            test_fraction: 0.2,
            seed: 11,
        }
    }
}

pub fn zipf(cfg: &ZipfConfig) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut rank: Vec<usize> = (0..cfg.n_items).collect();
    rank.shuffle(&mut rng);
    let weight: Vec<f64> = rank
        .iter()
        .map(|&r| ((r + 1) as f64).powf(-cfg.exponent))
        .collect();
    let per_user = cfg.per_user.min(cfg.n_items);
    let lists = (0..cfg.n_users)
        .map(|u| {
            let uc = user_cluster(u, cfg.n_users, cfg.n_clusters);
            let mut chosen = vec![false; cfg.n_items];
            let mut items = Vec::with_capacity(per_user);
            while items.len() < per_user {
                let local = rng.random::<f64>() < cfg.p_in;
                let admissible =
                    |i: usize| !chosen[i] && (!local || item_cluster(i, cfg.n_items, cfg.n_clusters) == uc);
                let total: f64 = (0..cfg.n_items).filter(|&i| admissible(i)).map(|i| weight[i]).sum();
                if total <= 0.0 {
                    continue;
                }
                let mut target = rng.random::<f64>() * total;
                let mut pick = None;
                for i in (0..cfg.n_items).filter(|&i| admissible(i)) {
                    pick = Some(i);
                    target -= weight[i];
                    if target <= 0.0 {
                        break;
                    }
                }
                let i = pick.expect("nonempty admissible set");
                chosen[i] = true;
                items.push(i);
            }
            items
        })
        .collect();
    split(cfg.n_users, cfg.n_items, lists, cfg.test_fraction, &mut rng)
}

/// Uniformly random interactions at the given density.
pub fn uniform(n_users: usize, n_items: usize, density: f64, test_fraction: f64, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lists = (0..n_users)
        .map(|_| (0..n_items).filter(|_| rng.random::<f64>() < density).collect())
        .collect();
    split(n_users, n_items, lists, test_fraction, &mut rng)
}

/// Holds out `round(fraction * n)` of each user's items, keeping at least one
/// train item for users with two or more interactions.
fn split(
    n_users: usize,
    n_items: usize,
    lists: Vec<Vec<usize>>,
    fraction: f64,
    rng: &mut ChaCha8Rng,
) -> Dataset {
    let mut train = Vec::with_capacity(n_users);
    let mut test = Vec::with_capacity(n_users);
    for mut items in lists {
        items.shuffle(rng);
        let n = items.len();
        let mut n_test = (fraction * n as f64).round() as usize;
        if n >= 2 {
            n_test = n_test.clamp(1, n - 1);
        } else {
            n_test = 0;
        }
        let held = items.split_off(n - n_test);
        train.push(items);
        test.push(held);
    }
    Dataset::from_lists(n_users, n_items, train, test).expect("generator keeps invariants")
}
