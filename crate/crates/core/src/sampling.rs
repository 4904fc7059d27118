//! Seeded negative samplers, the false-negative (`r_noise`) mixture, positive
//! contamination, and in-batch negative masks.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::NegSampler;
use crate::data::Dataset;
use crate::error::{Error, Result};

/// Stream ids used to derive independent generators from one seed.
pub mod stream {
    pub const SHUFFLE: u64 = 1;
    pub const NEGATIVES: u64 = 2;
    pub const CONTAMINATION: u64 = 3;
    pub const EVAL: u64 = 4;
    pub const INIT: u64 = 5;
    pub const DIAGNOSE: u64 = 6;
}

/// ChaCha8 generator for `(seed, stream)`; `epoch` offsets the stream so that
/// each epoch gets its own sequence and training can resume mid-run.
pub fn rng_for(seed: u64, stream: u64, epoch: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream.wrapping_mul(1 << 32).wrapping_add(epoch));
    rng
}

/// Negative sampler over all items, with positives mixed in at relative
/// weight `r_noise`.
///
/// A draw picks a training positive of the user with probability
/// `r * W(S+) / (r * W(S+) + W(S-))`, where `W` is the base sampler's mass
/// (item count for the uniform sampler, popularity weight otherwise), and a
/// true negative otherwise. Sampling is with replacement.
#[derive(Debug, Clone)]
pub struct SamplerState {
    rng: ChaCha8Rng,
    mode: NegSampler,
    r_noise: f64,
    popularity_weights: Option<Vec<f64>>,
    popularity_index: Option<WeightedIndex<f64>>,
    total_weight: f64,
}

impl SamplerState {
    pub fn uniform(rng: ChaCha8Rng, r_noise: f64) -> Result<Self> {
        check_noise(r_noise)?;
        Ok(SamplerState {
            rng,
            mode: NegSampler::Uniform,
            r_noise,
            popularity_weights: None,
            popularity_index: None,
            total_weight: 0.0,
        })
    }

    pub fn popularity(rng: ChaCha8Rng, r_noise: f64, weights: Vec<f64>) -> Result<Self> {
        check_noise(r_noise)?;
        if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::InvalidArgument("popularity weights must be finite and >= 0".into()));
        }
        let index = WeightedIndex::new(&weights)
            .map_err(|e| Error::InvalidArgument(format!("popularity weights: {e}")))?;
        let total_weight = weights.iter().sum();
        Ok(SamplerState {
            rng,
            mode: NegSampler::Popularity,
            r_noise,
            popularity_weights: Some(weights),
            popularity_index: Some(index),
            total_weight,
        })
    }

    /// Builds the sampler named by `mode`, with popularity weights
    /// `count^exponent` taken from the dataset's train split.
    pub fn for_dataset(
        ds: &Dataset,
        mode: NegSampler,
        r_noise: f64,
        exponent: f64,
        rng: ChaCha8Rng,
    ) -> Result<Self> {
        match mode {
            NegSampler::Uniform => SamplerState::uniform(rng, r_noise),
            NegSampler::Popularity => {
                let weights = ds
                    .item_popularity()
                    .iter()
                    .map(|&c| if c == 0 { 0.0 } else { (c as f64).powf(exponent) })
                    .collect();
                SamplerState::popularity(rng, r_noise, weights)
            }
        }
    }

    pub fn mode(&self) -> NegSampler {
        self.mode
    }

    pub fn r_noise(&self) -> f64 {
        self.r_noise
    }

    pub fn popularity_weights(&self) -> Option<&[f64]> {
        self.popularity_weights.as_deref()
    }

    pub fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    /// Probability that one draw for `user` is a training positive.
    pub fn positive_probability(&self, ds: &Dataset, user: usize) -> f64 {
        let (pos_mass, neg_mass) = self.masses(ds, user);
        let noisy = self.r_noise * pos_mass;
        if noisy + neg_mass <= 0.0 {
            0.0
        } else {
            noisy / (noisy + neg_mass)
        }
    }

    fn masses(&self, ds: &Dataset, user: usize) -> (f64, f64) {
        let positives = ds.train_pos(user);
        match &self.popularity_weights {
            None => {
                let p = positives.len() as f64;
                (p, ds.n_items() as f64 - p)
            }
            Some(w) => {
                let p: f64 = positives.iter().map(|&i| w[i]).sum();
                (p, (self.total_weight - p).max(0.0))
            }
        }
    }

    /// Draws `n` negatives for `user`.
    pub fn sample_negatives(&mut self, ds: &Dataset, user: usize, n: usize) -> Result<Vec<usize>> {
        if n == 0 {
            return Err(Error::InvalidArgument("n must be >= 1".into()));
        }
        let positives = ds.train_pos(user);
        let (pos_mass, neg_mass) = self.masses(ds, user);
        let noisy = self.r_noise * pos_mass;
        if neg_mass <= 0.0 && noisy <= 0.0 {
            return Err(Error::NoNegatives { user });
        }
        let p_pos = noisy / (noisy + neg_mass);
        let positive_index = match &self.popularity_weights {
            Some(w) if p_pos > 0.0 => Some(
                WeightedIndex::new(positives.iter().map(|&i| w[i]))
                    .map_err(|e| Error::InvalidArgument(format!("positive weights: {e}")))?,
            ),
            _ => None,
        };
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let take_positive = p_pos > 0.0 && (p_pos >= 1.0 || self.rng.random::<f64>() < p_pos);
            let item = if take_positive {
                match &positive_index {
                    Some(idx) => positives[idx.sample(&mut self.rng)],
                    None => positives[self.rng.random_range(0..positives.len())],
                }
            } else {
                self.draw_true_negative(ds, user)
            };
            out.push(item);
        }
        Ok(out)
    }

    fn draw_true_negative(&mut self, ds: &Dataset, user: usize) -> usize {
        let positives = ds.train_pos(user);
        loop {
            let item = match &self.popularity_index {
                Some(idx) => idx.sample(&mut self.rng),
                None => self.rng.random_range(0..ds.n_items()),
            };
            if positives.binary_search(&item).is_err() {
                return item;
            }
        }
    }
}

fn check_noise(r_noise: f64) -> Result<()> {
    if r_noise >= 0.0 && r_noise.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("r_noise must be >= 0, got {r_noise}")))
    }
}

/// Outcome of [`contaminate_positives`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContaminationReport {
    pub injected: usize,
    /// Users that had fewer candidate items than requested.
    pub short_users: usize,
}

/// Number of items injected for a user with `n_pos` positives.
pub fn contamination_count(ratio: f64, n_pos: usize) -> usize {
    // tolerate representation error such as 0.1 * 30 = 3.0000000000000004
    (ratio * n_pos as f64 - 1e-9).ceil().max(0.0) as usize
}

/// Adds `ceil(ratio * |S+_u|)` items, drawn uniformly without replacement
/// from the items the user has in neither split, to every user's train set.
pub fn contaminate_positives(ds: &Dataset, ratio: f64, seed: u64) -> Result<(Dataset, ContaminationReport)> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(Error::InvalidArgument(format!("ratio must be in [0, 1), got {ratio}")));
    }
    let mut report = ContaminationReport {
        injected: 0,
        short_users: 0,
    };
    if ratio == 0.0 {
        return Ok((ds.clone(), report));
    }
    let mut rng = rng_for(seed, stream::CONTAMINATION, 0);
    let mut lists = ds.train_lists().to_vec();
    for (user, list) in lists.iter_mut().enumerate() {
        let want = contamination_count(ratio, list.len());
        if want == 0 {
            continue;
        }
        let candidates: Vec<usize> = (0..ds.n_items())
            .filter(|&i| !ds.is_train_positive(user, i) && !ds.is_test_positive(user, i))
            .collect();
        let take = want.min(candidates.len());
        if take < want {
            report.short_users += 1;
        }
        for k in index::sample(&mut rng, candidates.len(), take) {
            list.push(candidates[k]);
        }
        report.injected += take;
    }
    Ok((ds.with_train(lists)?, report))
}

/// In-batch negatives: every other example's item is a negative, only the
/// diagonal is masked.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InBatchMask {
    size: usize,
}

impl InBatchMask {
    pub fn len(&self) -> usize {
        self.size
    }

    pub fn is_empty(&self) -> bool {
        self.size == 0
    }

    /// Batch positions used as negatives for example `i`.
    pub fn negatives(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.size).filter(move |&j| j != i)
    }

    /// Dense mask, `true` where `(i, j)` is a negative pair.
    pub fn dense(&self) -> Vec<Vec<bool>> {
        (0..self.size)
            .map(|i| (0..self.size).map(|j| i != j).collect())
            .collect()
    }
}

pub fn in_batch_negatives(batch_users: &[usize], batch_items: &[usize]) -> Result<InBatchMask> {
    if batch_users.len() != batch_items.len() {
        return Err(Error::InvalidArgument("batch users and items differ in length".into()));
    }
    if batch_users.len() < 2 {
        return Err(Error::InvalidArgument("in-batch negatives need a batch of at least 2".into()));
    }
    Ok(InBatchMask {
        size: batch_users.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic;

    fn user_with(n_pos: usize, n_items: usize) -> Dataset {
        Dataset::from_lists(1, n_items, vec![(0..n_pos).collect()], vec![]).unwrap()
    }

    fn positive_fraction(ds: &Dataset, r: f64, draws: usize, seed: u64) -> f64 {
        let mut st = SamplerState::uniform(rng_for(seed, stream::NEGATIVES, 0), r).unwrap();
        let items = st.sample_negatives(ds, 0, draws).unwrap();
        items.iter().filter(|&&i| ds.is_train_positive(0, i)).count() as f64 / draws as f64
    }

    #[test]
    fn no_noise_never_returns_positives() {
        let ds = user_with(30, 50);
        assert_eq!(positive_fraction(&ds, 0.0, 100_000, 1), 0.0);
    }

    #[test]
    fn symmetric_mixture_is_half() {
        let ds = user_with(25, 50);
        assert!((positive_fraction(&ds, 1.0, 100_000, 2) - 0.5).abs() < 0.01);
    }

    #[test]
    fn mixture_matches_closed_form() {
        let ds = user_with(10, 100);
        let st = SamplerState::uniform(rng_for(0, 0, 0), 3.0).unwrap();
        assert!((st.positive_probability(&ds, 0) - 0.25).abs() < 1e-15);
        assert!((positive_fraction(&ds, 3.0, 100_000, 3) - 0.25).abs() < 0.01);
    }

    #[test]
    fn user_without_negatives_errors_without_noise() {
        let ds = user_with(5, 5);
        let mut st = SamplerState::uniform(rng_for(0, 0, 0), 0.0).unwrap();
        assert!(matches!(st.sample_negatives(&ds, 0, 3), Err(Error::NoNegatives { user: 0 })));
        let mut st = SamplerState::uniform(rng_for(0, 0, 0), 1.0).unwrap();
        assert_eq!(st.sample_negatives(&ds, 0, 3).unwrap().len(), 3);
    }

    #[test]
    fn popularity_sampler_follows_weights() {
        // user 0 has no positives, so with r_noise = 1 the mixture is the base
        let ds = Dataset::from_lists(2, 5, vec![vec![], vec![0, 1, 2, 3, 4]], vec![]).unwrap();
        let weights = vec![1.0, 2.0, 3.0, 4.0, 10.0];
        let mut st = SamplerState::popularity(rng_for(4, 0, 0), 1.0, weights.clone()).unwrap();
        let n = 1_000_000;
        let draws = st.sample_negatives(&ds, 0, n).unwrap();
        let mut counts = [0usize; 5];
        for d in draws {
            counts[d] += 1;
        }
        let total: f64 = weights.iter().sum();
        for (c, w) in counts.iter().zip(&weights) {
            let p = w / total;
            let sigma = (n as f64 * p * (1.0 - p)).sqrt();
            assert!((*c as f64 - n as f64 * p).abs() < 3.0 * sigma, "{counts:?}");
        }
    }

    #[test]
    fn popularity_mixture_uses_weighted_masses() {
        let ds = Dataset::from_lists(1, 4, vec![vec![0]], vec![]).unwrap();
        let st = SamplerState::popularity(rng_for(0, 0, 0), 2.0, vec![3.0, 1.0, 1.0, 1.0]).unwrap();
        assert!((st.positive_probability(&ds, 0) - 6.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let ds = synthetic::uniform(20, 40, 0.2, 0.0, 1);
        let draw = |seed| {
            let mut st = SamplerState::uniform(rng_for(seed, stream::NEGATIVES, 0), 0.5).unwrap();
            (0..20).map(|u| st.sample_negatives(&ds, u, 8).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(draw(9), draw(9));
        assert_ne!(draw(9), draw(10));
    }

    #[test]
    fn zero_ratio_contamination_is_identity() {
        let ds = synthetic::uniform(30, 40, 0.2, 0.2, 1);
        let (out, report) = contaminate_positives(&ds, 0.0, 5).unwrap();
        assert_eq!(out, ds);
        assert_eq!(report.injected, 0);
    }

    #[test]
    fn contamination_injects_fresh_items() {
        let train = vec![(0..10).collect::<Vec<_>>()];
        let test = vec![vec![10, 11]];
        let ds = Dataset::from_lists(1, 40, train, test).unwrap();
        let (out, report) = contaminate_positives(&ds, 0.4, 5).unwrap();
        assert_eq!(report.injected, 4);
        let added: Vec<_> = out.train_pos(0).iter().filter(|&&i| i >= 10).collect();
        assert_eq!(added.len(), 4);
        assert!(added.iter().all(|&&i| i >= 12));
        // the original is untouched
        assert_eq!(ds.train_pos(0).len(), 10);
    }

    #[test]
    fn contamination_count_matches_integer_oracle() {
        let ds = synthetic::uniform(1000, 60, 0.15, 0.2, 3);
        let (out, report) = contaminate_positives(&ds, 0.2, 1).unwrap();
        // ceil(n / 5) in integer arithmetic
        let expected: usize = ds.train_lists().iter().map(|l| l.len().div_ceil(5)).sum();
        assert_eq!(report.injected, expected);
        assert_eq!(report.short_users, 0);
        assert_eq!(out.n_train_interactions(), ds.n_train_interactions() + expected);
        for u in 0..ds.n_users() {
            for &i in out.train_pos(u) {
                assert!(!ds.is_test_positive(u, i));
            }
        }
    }

    #[test]
    fn contamination_records_short_users() {
        let ds = Dataset::from_lists(1, 4, vec![vec![0, 1, 2]], vec![vec![3]]).unwrap();
        let (out, report) = contaminate_positives(&ds, 0.5, 0).unwrap();
        assert_eq!(report, ContaminationReport { injected: 0, short_users: 1 });
        assert_eq!(out.train_pos(0), &[0, 1, 2]);
    }

    #[test]
    fn representation_error_does_not_round_up() {
        assert_eq!(contamination_count(0.1, 30), 3);
        assert_eq!(contamination_count(0.3, 10), 3);
        assert_eq!(contamination_count(0.25, 10), 3);
    }

    #[test]
    fn in_batch_masks() {
        let m = in_batch_negatives(&[0, 1], &[5, 6]).unwrap();
        assert_eq!(m.negatives(0).collect::<Vec<_>>(), vec![1]);
        assert_eq!(m.negatives(1).collect::<Vec<_>>(), vec![0]);
        let m = in_batch_negatives(&[0, 1, 2, 3], &[0, 1, 2, 3]).unwrap();
        let dense = m.dense();
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(dense[i][j], i != j);
            }
        }
        assert!(in_batch_negatives(&[0], &[0]).is_err());
        assert!(in_batch_negatives(&[0, 1], &[0]).is_err());
    }

    #[test]
    fn in_batch_keeps_same_user_positives_as_negatives() {
        // user 7 appears twice: its own other positive is still a negative
        let users = [7, 7, 3];
        let items = [10, 11, 12];
        let m = in_batch_negatives(&users, &items).unwrap();
        let negs: Vec<usize> = m.negatives(0).map(|j| items[j]).collect();
        assert_eq!(negs, vec![11, 12]);
    }
}
