//! Matrix-factorization backbone scored by cosine similarity.

mod adam;
mod checkpoint;
mod train;

pub use adam::AdamState;
pub use checkpoint::Checkpoint;
pub use train::{
    batch_gradient, train, BatchGradient, BatchNegatives, EpochLog, Trainer, TrainingBatch,
};

use rand::Rng;

use crate::config::ScoreMode;
use crate::error::{Error, Result};
use crate::sampling::{rng_for, stream};

/// Added to vector norms before dividing.
pub const NORM_EPS: f64 = 1e-12;

/// Dense user and item factor matrices, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    n_users: usize,
    n_items: usize,
    users: Vec<f64>,
    items: Vec<f64>,
}

impl EmbeddingTable {
    /// Xavier-uniform initialization with `fan_in = fan_out = dim`.
    pub fn init(n_users: usize, n_items: usize, dim: usize, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("embedding dimension must be >= 1".into()));
        }
        let bound = xavier_bound(dim);
        let mut rng = rng_for(seed, stream::INIT, 0);
        let mut draw = |n: usize| -> Vec<f64> {
            (0..n * dim).map(|_| rng.random_range(-bound..=bound)).collect()
        };
        let users = draw(n_users);
        let items = draw(n_items);
        Ok(EmbeddingTable {
            dim,
            n_users,
            n_items,
            users,
            items,
        })
    }

    pub fn from_parts(
        n_users: usize,
        n_items: usize,
        dim: usize,
        users: Vec<f64>,
        items: Vec<f64>,
    ) -> Result<Self> {
        if dim == 0 || users.len() != n_users * dim || items.len() != n_items * dim {
            return Err(Error::InvalidArgument("embedding shapes do not match".into()));
        }
        if !users.iter().chain(&items).all(|x| x.is_finite()) {
            return Err(Error::InvalidArgument("non-finite embedding entry".into()));
        }
        Ok(EmbeddingTable {
            dim,
            n_users,
            n_items,
            users,
            items,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn user(&self, u: usize) -> &[f64] {
        &self.users[u * self.dim..(u + 1) * self.dim]
    }

    pub fn item(&self, i: usize) -> &[f64] {
        &self.items[i * self.dim..(i + 1) * self.dim]
    }

    pub fn user_mut(&mut self, u: usize) -> &mut [f64] {
        &mut self.users[u * self.dim..(u + 1) * self.dim]
    }

    pub fn item_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.items[i * self.dim..(i + 1) * self.dim]
    }

    pub fn user_matrix(&self) -> &[f64] {
        &self.users
    }

    pub fn item_matrix(&self) -> &[f64] {
        &self.items
    }

    /// Cosine scores of `user` against `items`, with the context needed to
    /// backpropagate score gradients to the raw embeddings.
    pub fn cosine_score(&self, user: usize, items: &[usize]) -> (Vec<f64>, ScoreContext) {
        let u = Normalized::of(self.user(user));
        let item_vecs: Vec<Normalized> = items.iter().map(|&i| Normalized::of(self.item(i))).collect();
        let scores = item_vecs.iter().map(|v| dot(&u.unit, &v.unit)).collect();
        (
            scores,
            ScoreContext {
                user: u,
                items: item_vecs,
            },
        )
    }

    /// Scores of `user` against every item.
    pub fn score_all_items(&self, user: usize, mode: ScoreMode) -> Vec<f64> {
        match mode {
            ScoreMode::Cosine => {
                let u = Normalized::of(self.user(user));
                (0..self.n_items)
                    .map(|i| dot(&u.unit, &Normalized::of(self.item(i)).unit))
                    .collect()
            }
            ScoreMode::InnerProduct => {
                let u = self.user(user);
                (0..self.n_items).map(|i| dot(u, self.item(i))).collect()
            }
        }
    }

    /// Item vectors pre-normalized for repeated cosine scoring.
    pub fn normalized_items(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.items.len());
        for i in 0..self.n_items {
            out.extend(Normalized::of(self.item(i)).unit);
        }
        out
    }
}

pub fn xavier_bound(dim: usize) -> f64 {
    (6.0 / (2 * dim) as f64).sqrt()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// A vector divided by `norm + NORM_EPS`.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalized {
    pub raw: Vec<f64>,
    pub unit: Vec<f64>,
    pub norm: f64,
}

impl Normalized {
    pub fn of(v: &[f64]) -> Self {
        let norm = dot(v, v).sqrt();
        let c = norm + NORM_EPS;
        Normalized {
            raw: v.to_vec(),
            unit: v.iter().map(|x| x / c).collect(),
            norm,
        }
    }

    /// Pulls a gradient w.r.t. the unit vector back to the raw vector:
    /// `g / c - raw (raw . g) / (norm c^2)` with `c = norm + eps`.
    pub fn backprop(&self, grad_unit: &[f64]) -> Vec<f64> {
        let c = self.norm + NORM_EPS;
        let radial = if self.norm > 0.0 {
            dot(&self.raw, grad_unit) / (self.norm * c * c)
        } else {
            0.0
        };
        grad_unit
            .iter()
            .zip(&self.raw)
            .map(|(g, x)| g / c - x * radial)
            .collect()
    }
}

/// Backpropagation context of [`EmbeddingTable::cosine_score`].
#[derive(Debug, Clone)]
pub struct ScoreContext {
    user: Normalized,
    items: Vec<Normalized>,
}

impl ScoreContext {
    /// Raw-embedding gradients `(d/d user, d/d item_k)` for score gradients
    /// `grad_scores[k]`.
    pub fn backprop(&self, grad_scores: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
        let d = self.user.unit.len();
        let mut grad_user_unit = vec![0.0; d];
        let mut grad_items = Vec::with_capacity(self.items.len());
        for (item, &g) in self.items.iter().zip(grad_scores) {
            for (acc, x) in grad_user_unit.iter_mut().zip(&item.unit) {
                *acc += g * x;
            }
            let grad_item_unit: Vec<f64> = self.user.unit.iter().map(|x| g * x).collect();
            grad_items.push(item.backprop(&grad_item_unit));
        }
        (self.user.backprop(&grad_user_unit), grad_items)
    }
}
