use std::collections::BTreeMap;
use std::ops::Range;

use rand::seq::SliceRandom;

use super::{AdamState, Checkpoint, EmbeddingTable, Normalized};
use crate::config::{BslForm, LossKind, LossSpec, PositiveGrouping, SamplingMode, TrainConfig};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::losses::{compute_loss, ScoreBatch};
use crate::sampling::{contaminate_positives, rng_for, stream, ContaminationReport, SamplerState};

#[derive(Debug, Clone, PartialEq)]
pub enum BatchNegatives {
    /// Sampled negative item ids, one list per row.
    Sampled(Vec<Vec<usize>>),
    /// Every other row's item is a negative.
    InBatch,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingBatch {
    pub users: Vec<usize>,
    pub items: Vec<usize>,
    pub negatives: BatchNegatives,
}

/// Loss value and raw-embedding gradients of one batch, summed per row id.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchGradient {
    pub loss: f64,
    pub users: BTreeMap<usize, Vec<f64>>,
    pub items: BTreeMap<usize, Vec<f64>>,
}

fn uses_user_groups(spec: &LossSpec) -> bool {
    spec.kind == LossKind::Bsl
        && spec.bsl_form == BslForm::Canonical
        && spec.grouping == PositiveGrouping::User
}

/// Contiguous runs of equal users.
fn user_runs(users: &[usize]) -> Vec<Range<usize>> {
    let mut runs = Vec::new();
    let mut start = 0;
    for r in 1..=users.len() {
        if r == users.len() || users[r] != users[start] {
            runs.push(start..r);
            start = r;
        }
    }
    runs
}

fn add_scaled(acc: &mut [f64], v: &[f64], scale: f64) {
    for (a, x) in acc.iter_mut().zip(v) {
        *a += scale * x;
    }
}

/// Forward and backward pass of the loss through cosine scoring.
pub fn batch_gradient(
    table: &EmbeddingTable,
    batch: &TrainingBatch,
    spec: &LossSpec,
) -> Result<BatchGradient> {
    let n = batch.users.len();
    if n == 0 || batch.items.len() != n {
        return Err(Error::InvalidArgument("malformed training batch".into()));
    }
    let neg_items: Vec<Vec<usize>> = match &batch.negatives {
        BatchNegatives::Sampled(lists) => {
            if lists.len() != n {
                return Err(Error::InvalidArgument("one negative list per row required".into()));
            }
            lists.clone()
        }
        BatchNegatives::InBatch => {
            if n < 2 {
                return Err(Error::InvalidArgument("in-batch mode needs >= 2 rows".into()));
            }
            (0..n)
                .map(|a| (0..n).filter(|&b| b != a).map(|b| batch.items[b]).collect())
                .collect()
        }
    };
    // compact local indices so the inner loops touch flat buffers only
    let users = LocalRows::new(table, batch.users.iter().copied(), true);
    let items = LocalRows::new(
        table,
        batch.items.iter().chain(neg_items.iter().flatten()).copied(),
        false,
    );
    let row_user: Vec<usize> = batch.users.iter().map(|&u| users.slot(u)).collect();
    let row_pos: Vec<usize> = batch.items.iter().map(|&i| items.slot(i)).collect();
    let row_neg: Vec<Vec<usize>> = neg_items
        .iter()
        .map(|js| js.iter().map(|&j| items.slot(j)).collect())
        .collect();

    let pos: Vec<f64> = (0..n).map(|r| super::dot(users.unit(row_user[r]), items.unit(row_pos[r]))).collect();
    let neg: Vec<Vec<f64>> = (0..n)
        .map(|r| {
            let uu = users.unit(row_user[r]);
            row_neg[r].iter().map(|&j| super::dot(uu, items.unit(j))).collect()
        })
        .collect();
    let scores = ScoreBatch::new(pos, neg)?;
    let groups = uses_user_groups(spec).then(|| user_runs(&batch.users));
    let res = compute_loss(spec, &scores, groups.as_deref())?;

    let d = table.dim();
    let mut grad_user_unit = vec![0.0; users.ids.len() * d];
    let mut grad_item_unit = vec![0.0; items.ids.len() * d];
    let mut user_touched = vec![false; users.ids.len()];
    let mut item_touched = vec![false; items.ids.len()];
    for r in 0..n {
        let su = row_user[r];
        let pairs = std::iter::once((row_pos[r], res.grad_pos[r]))
            .chain(row_neg[r].iter().copied().zip(res.grad_neg[r].iter().copied()));
        for (si, g) in pairs {
            if g == 0.0 {
                continue;
            }
            add_scaled(&mut grad_user_unit[su * d..(su + 1) * d], items.unit(si), g);
            add_scaled(&mut grad_item_unit[si * d..(si + 1) * d], users.unit(su), g);
            user_touched[su] = true;
            item_touched[si] = true;
        }
    }
    Ok(BatchGradient {
        loss: res.value,
        users: users.backprop_all(&grad_user_unit, &user_touched),
        items: items.backprop_all(&grad_item_unit, &item_touched),
    })
}

/// The distinct rows of one matrix touched by a batch, normalized once.
struct LocalRows {
    /// Sorted global ids; position = local slot.
    ids: Vec<usize>,
    raw: Vec<f64>,
    unit: Vec<f64>,
    norms: Vec<f64>,
    dim: usize,
}

impl LocalRows {
    fn new(table: &EmbeddingTable, ids: impl Iterator<Item = usize>, users: bool) -> Self {
        let mut ids: Vec<usize> = ids.collect();
        ids.sort_unstable();
        ids.dedup();
        let dim = table.dim();
        let mut raw = Vec::with_capacity(ids.len() * dim);
        let mut unit = Vec::with_capacity(ids.len() * dim);
        let mut norms = Vec::with_capacity(ids.len());
        for &id in &ids {
            let v = if users { table.user(id) } else { table.item(id) };
            let nv = Normalized::of(v);
            raw.extend_from_slice(&nv.raw);
            unit.extend_from_slice(&nv.unit);
            norms.push(nv.norm);
        }
        LocalRows {
            ids,
            raw,
            unit,
            norms,
            dim,
        }
    }

    fn slot(&self, id: usize) -> usize {
        self.ids.binary_search(&id).expect("id collected")
    }

    fn unit(&self, slot: usize) -> &[f64] {
        &self.unit[slot * self.dim..(slot + 1) * self.dim]
    }

    fn backprop_all(&self, grad_unit: &[f64], touched: &[bool]) -> BTreeMap<usize, Vec<f64>> {
        let d = self.dim;
        (0..self.ids.len())
            .filter(|&s| touched[s])
            .map(|s| {
                let nv = Normalized {
                    raw: self.raw[s * d..(s + 1) * d].to_vec(),
                    unit: Vec::new(),
                    norm: self.norms[s],
                };
                (self.ids[s], nv.backprop(&grad_unit[s * d..(s + 1) * d]))
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    /// 1-based epoch number.
    pub epoch: usize,
    pub mean_loss: f64,
    pub n_batches: usize,
}

/// Minibatch trainer. Each epoch derives its shuffle and sampler streams from
/// `(rng_seed, epoch)`, so a resumed run reproduces an uninterrupted one.
#[derive(Debug, Clone)]
pub struct Trainer {
    train_data: Dataset,
    cfg: TrainConfig,
    spec: LossSpec,
    table: EmbeddingTable,
    adam: AdamState,
    epoch: usize,
    contamination: ContaminationReport,
    pairs: Vec<(usize, usize)>,
}

impl Trainer {
    pub fn new(ds: &Dataset, cfg: &TrainConfig, spec: &LossSpec) -> Result<Self> {
        cfg.validate()?;
        spec.validate()?;
        let (train_data, contamination) = contaminate_positives(ds, cfg.pos_noise_ratio, cfg.rng_seed)?;
        let table = EmbeddingTable::init(ds.n_users(), ds.n_items(), cfg.embedding_dim, cfg.rng_seed)?;
        let adam = AdamState::new(&table);
        let pairs = train_data.train_pairs();
        Ok(Trainer {
            train_data,
            cfg: cfg.clone(),
            spec: spec.clone(),
            table,
            adam,
            epoch: 0,
            contamination,
            pairs,
        })
    }

    /// Continues from a checkpoint written by a run with the same config.
    pub fn resume(ds: &Dataset, cfg: &TrainConfig, spec: &LossSpec, ckpt: Checkpoint) -> Result<Self> {
        let mut t = Trainer::new(ds, cfg, spec)?;
        let table = ckpt.table;
        if table.n_users() != ds.n_users()
            || table.n_items() != ds.n_items()
            || table.dim() != cfg.embedding_dim
            || ckpt.seed != cfg.rng_seed
            || !ckpt.adam.matches(&table)
        {
            return Err(Error::Checkpoint(
                "checkpoint does not match the dataset or config".into(),
            ));
        }
        t.table = table;
        t.adam = ckpt.adam;
        t.epoch = ckpt.epoch;
        Ok(t)
    }

    pub fn table(&self) -> &EmbeddingTable {
        &self.table
    }

    pub fn into_table(self) -> EmbeddingTable {
        self.table
    }

    pub fn adam(&self) -> &AdamState {
        &self.adam
    }

    /// Number of completed epochs.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// The train split actually optimized (after positive contamination).
    pub fn train_data(&self) -> &Dataset {
        &self.train_data
    }

    pub fn contamination(&self) -> &ContaminationReport {
        &self.contamination
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            table: self.table.clone(),
            adam: self.adam.clone(),
            seed: self.cfg.rng_seed,
            epoch: self.epoch,
        }
    }

    pub fn run_epoch(&mut self) -> Result<EpochLog> {
        let seed = self.cfg.rng_seed;
        let epoch = self.epoch as u64;
        let mut shuffle_rng = rng_for(seed, stream::SHUFFLE, epoch);
        let mut pairs = self.pairs.clone();
        pairs.shuffle(&mut shuffle_rng);
        let mut sampler = SamplerState::for_dataset(
            &self.train_data,
            self.cfg.neg_sampler,
            self.cfg.r_noise,
            self.cfg.pop_exponent,
            rng_for(seed, stream::NEGATIVES, epoch),
        )?;
        let group_by_user = uses_user_groups(&self.spec);
        let mut total = 0.0;
        let mut rows = 0usize;
        let mut n_batches = 0;
        for (b, chunk) in pairs.chunks(self.cfg.batch_size).enumerate() {
            if self.cfg.sampling_mode == SamplingMode::InBatch && chunk.len() < 2 {
                continue;
            }
            let mut chunk = chunk.to_vec();
            if group_by_user {
                chunk.sort_by_key(|&(u, _)| u);
            }
            let users: Vec<usize> = chunk.iter().map(|p| p.0).collect();
            let items: Vec<usize> = chunk.iter().map(|p| p.1).collect();
            let negatives = match self.cfg.sampling_mode {
                SamplingMode::NegativeSampling => BatchNegatives::Sampled(
                    users
                        .iter()
                        .map(|&u| sampler.sample_negatives(&self.train_data, u, self.cfg.n_negatives))
                        .collect::<Result<_>>()?,
                ),
                SamplingMode::InBatch => BatchNegatives::InBatch,
            };
            let batch = TrainingBatch {
                users,
                items,
                negatives,
            };
            let grad = batch_gradient(&self.table, &batch, &self.spec)?;
            if !grad.loss.is_finite() {
                return Err(Error::Diverged {
                    epoch: self.epoch + 1,
                    batch: b,
                });
            }
            self.apply(&grad);
            total += grad.loss * chunk.len() as f64;
            rows += chunk.len();
            n_batches += 1;
        }
        self.epoch += 1;
        Ok(EpochLog {
            epoch: self.epoch,
            mean_loss: if rows == 0 { 0.0 } else { total / rows as f64 },
            n_batches,
        })
    }

    fn apply(&mut self, grad: &BatchGradient) {
        let lr = self.cfg.learning_rate;
        let l2 = self.cfg.l2_reg;
        self.adam.begin_step();
        for (&u, g) in &grad.users {
            let mut g = g.clone();
            add_scaled(&mut g, self.table.user(u), l2);
            self.adam.update_user(&mut self.table, u, &g, lr);
        }
        for (&i, g) in &grad.items {
            let mut g = g.clone();
            add_scaled(&mut g, self.table.item(i), l2);
            self.adam.update_item(&mut self.table, i, &g, lr);
        }
    }
}

/// Trains for `cfg.epochs` epochs and returns the final table and the
/// per-epoch log.
pub fn train(ds: &Dataset, cfg: &TrainConfig, spec: &LossSpec) -> Result<(EmbeddingTable, Vec<EpochLog>)> {
    let mut trainer = Trainer::new(ds, cfg, spec)?;
    let mut log = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        log.push(trainer.run_epoch()?);
    }
    Ok((trainer.into_table(), log))
}
