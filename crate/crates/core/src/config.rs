//! Training, loss and experiment configuration.
//!
//! Experiment files are flat TOML documents, one `key = value` per line.
//! Every key maps onto a field of [`TrainConfig`], [`LossSpec`] or the
//! evaluation settings; unknown keys are rejected.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Bpr,
    Bce,
    Mse,
    /// Softmax loss.
    Sl,
    /// Softmax loss with the variance penalty removed (first-order surrogate).
    SlNoVariance,
    /// Bilateral softmax loss.
    Bsl,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::Bpr => "bpr",
            LossKind::Bce => "bce",
            LossKind::Mse => "mse",
            LossKind::Sl => "sl",
            LossKind::SlNoVariance => "sl_no_variance",
            LossKind::Bsl => "bsl",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BslForm {
    /// `-tau_pos * log mean_i exp(f_i / tau_pos) + tau_neg * log sum_j exp(f_j / tau_neg)`
    Canonical,
    /// `-f_i / tau_pos + (tau_pos / tau_neg) * log sum_j exp(f_j / tau_neg)`, one positive per row.
    Pseudocode,
}

/// How rows of a training batch are grouped into positive sets for the
/// canonical BSL form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositiveGrouping {
    /// Each row is its own group.
    Row,
    /// Rows of the same user within a batch share one positive part.
    User,
}

/// How per-group BSL values are reduced to the batch value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupReduction {
    /// Every group counts once.
    MeanOverGroups,
    /// Groups are weighted by their number of positives.
    MeanOverRows,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub kind: LossKind,
    pub tau: f64,
    pub tau_pos: f64,
    pub tau_neg: f64,
    pub bce_mse_balance: f64,
    pub bsl_form: BslForm,
    pub grouping: PositiveGrouping,
    pub group_reduction: GroupReduction,
}

impl Default for LossSpec {
    fn default() -> Self {
        LossSpec {
            kind: LossKind::Sl,
            tau: 0.1,
            tau_pos: 0.1,
            tau_neg: 0.1,
            bce_mse_balance: 1.0,
            bsl_form: BslForm::Pseudocode,
            grouping: PositiveGrouping::Row,
            group_reduction: GroupReduction::MeanOverGroups,
        }
    }
}

impl LossSpec {
    pub fn sl(tau: f64) -> Self {
        LossSpec {
            kind: LossKind::Sl,
            tau,
            ..LossSpec::default()
        }
    }

    pub fn bsl(tau_pos: f64, tau_neg: f64, form: BslForm) -> Self {
        LossSpec {
            kind: LossKind::Bsl,
            tau_pos,
            tau_neg,
            bsl_form: form,
            ..LossSpec::default()
        }
    }

    pub fn of_kind(kind: LossKind) -> Self {
        LossSpec {
            kind,
            ..LossSpec::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("tau", self.tau),
            ("tau_pos", self.tau_pos),
            ("tau_neg", self.tau_neg),
            ("bce_mse_balance", self.bce_mse_balance),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be a positive number, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    NegativeSampling,
    InBatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegSampler {
    Uniform,
    Popularity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMode {
    Cosine,
    InnerProduct,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub embedding_dim: usize,
    pub learning_rate: f64,
    pub l2_reg: f64,
    pub n_negatives: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub sampling_mode: SamplingMode,
    pub neg_sampler: NegSampler,
    /// Popularity sampler weights are `count^pop_exponent`.
    pub pop_exponent: f64,
    pub r_noise: f64,
    pub pos_noise_ratio: f64,
    pub rng_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            embedding_dim: 64,
            learning_rate: 1e-3,
            l2_reg: 0.0,
            n_negatives: 64,
            batch_size: 1024,
            epochs: 200,
            sampling_mode: SamplingMode::NegativeSampling,
            neg_sampler: NegSampler::Uniform,
            pop_exponent: 1.0,
            r_noise: 0.0,
            pos_noise_ratio: 0.0,
            rng_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.embedding_dim == 0 {
            return bad("embedding_dim must be >= 1".into());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be >= 0, got {}", self.learning_rate));
        }
        if !(self.l2_reg >= 0.0 && self.l2_reg.is_finite()) {
            return bad(format!("l2_reg must be >= 0, got {}", self.l2_reg));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        match self.sampling_mode {
            SamplingMode::NegativeSampling if self.n_negatives == 0 => {
                return bad("n_negatives must be >= 1 in negative_sampling mode".into());
            }
            SamplingMode::InBatch if self.batch_size < 2 => {
                return bad("batch_size must be >= 2 in in_batch mode".into());
            }
            _ => {}
        }
        if !(self.r_noise >= 0.0 && self.r_noise.is_finite()) {
            return bad(format!("r_noise must be >= 0, got {}", self.r_noise));
        }
        if !(0.0..1.0).contains(&self.pos_noise_ratio) {
            return bad(format!("pos_noise_ratio must be in [0, 1), got {}", self.pos_noise_ratio));
        }
        if !(self.pop_exponent >= 0.0 && self.pop_exponent.is_finite()) {
            return bad(format!("pop_exponent must be >= 0, got {}", self.pop_exponent));
        }
        Ok(())
    }
}

/// Evaluation settings shared by training-time and standalone evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub ks: Vec<usize>,
    /// K at which popularity-group contributions are computed and by which
    /// checkpoints are selected.
    pub group_k: usize,
    pub n_groups: usize,
    /// Non-interacted items sampled per user for the prediction-variance statistic.
    pub variance_sample: usize,
    pub score_mode: ScoreMode,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            ks: vec![20],
            group_k: 20,
            n_groups: 10,
            variance_sample: 100,
            score_mode: ScoreMode::Cosine,
            seed: 0,
        }
    }
}

pub const DEFAULT_TAU_GRID: [f64; 10] = [0.05, 0.07, 0.09, 0.10, 0.11, 0.12, 0.15, 0.20, 0.5, 1.0];

/// The flat on-disk experiment document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub train_path: PathBuf,
    pub test_path: PathBuf,

    pub embedding_dim: usize,
    pub learning_rate: f64,
    pub l2_reg: f64,
    pub n_negatives: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub sampling_mode: SamplingMode,
    pub neg_sampler: NegSampler,
    pub pop_exponent: f64,
    pub r_noise: f64,
    pub pos_noise_ratio: f64,
    pub rng_seed: u64,

    pub loss: LossKind,
    pub tau: f64,
    pub tau_pos: f64,
    pub tau_neg: f64,
    pub bce_mse_balance: f64,
    pub bsl_form: BslForm,
    pub bsl_grouping: PositiveGrouping,
    pub bsl_group_reduction: GroupReduction,

    pub ks: Vec<usize>,
    pub eval_every: usize,
    pub n_groups: usize,
    pub variance_sample: usize,
    pub score_mode: ScoreMode,
    pub tau_grid: Vec<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        let l = LossSpec::default();
        let e = EvalConfig::default();
        ExperimentConfig {
            train_path: PathBuf::from("train.txt"),
            test_path: PathBuf::from("test.txt"),
            embedding_dim: t.embedding_dim,
            learning_rate: t.learning_rate,
            l2_reg: t.l2_reg,
            n_negatives: t.n_negatives,
            batch_size: t.batch_size,
            epochs: t.epochs,
            sampling_mode: t.sampling_mode,
            neg_sampler: t.neg_sampler,
            pop_exponent: t.pop_exponent,
            r_noise: t.r_noise,
            pos_noise_ratio: t.pos_noise_ratio,
            rng_seed: t.rng_seed,
            loss: l.kind,
            tau: l.tau,
            tau_pos: l.tau_pos,
            tau_neg: l.tau_neg,
            bce_mse_balance: l.bce_mse_balance,
            bsl_form: l.bsl_form,
            bsl_grouping: l.grouping,
            bsl_group_reduction: l.group_reduction,
            ks: e.ks,
            eval_every: 5,
            n_groups: e.n_groups,
            variance_sample: e.variance_sample,
            score_mode: e.score_mode,
            tau_grid: DEFAULT_TAU_GRID.to_vec(),
        }
    }
}

impl ExperimentConfig {
    /// Reads a config file and applies `key=value` overrides on top of it.
    ///
    /// Relative dataset paths are resolved against the config file's directory.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read config file {}: {e}", path.display()))
        })?;
        let mut cfg = Self::parse(&text, overrides)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.train_path, &mut cfg.test_path] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn parse(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        for ov in overrides {
            let (key, value) = ov
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {ov:?} is not key=value")))?;
            table.insert(key.trim().to_string(), parse_override(value.trim()));
        }
        let cfg: ExperimentConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.train_config().validate()?;
        self.loss_spec().validate()?;
        if self.ks.is_empty() || self.ks.contains(&0) {
            return Err(Error::Config("ks must be a nonempty list of K >= 1".into()));
        }
        if self.n_groups == 0 {
            return Err(Error::Config("n_groups must be >= 1".into()));
        }
        if self.tau_grid.iter().any(|t| !(*t > 0.0)) {
            return Err(Error::Config("tau_grid entries must be positive".into()));
        }
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            embedding_dim: self.embedding_dim,
            learning_rate: self.learning_rate,
            l2_reg: self.l2_reg,
            n_negatives: self.n_negatives,
            batch_size: self.batch_size,
            epochs: self.epochs,
            sampling_mode: self.sampling_mode,
            neg_sampler: self.neg_sampler,
            pop_exponent: self.pop_exponent,
            r_noise: self.r_noise,
            pos_noise_ratio: self.pos_noise_ratio,
            rng_seed: self.rng_seed,
        }
    }

    pub fn loss_spec(&self) -> LossSpec {
        LossSpec {
            kind: self.loss,
            tau: self.tau,
            tau_pos: self.tau_pos,
            tau_neg: self.tau_neg,
            bce_mse_balance: self.bce_mse_balance,
            bsl_form: self.bsl_form,
            grouping: self.bsl_grouping,
            group_reduction: self.bsl_group_reduction,
        }
    }

    pub fn eval_config(&self) -> EvalConfig {
        let group_k = if self.ks.contains(&20) {
            20
        } else {
            *self.ks.iter().max().unwrap_or(&20)
        };
        EvalConfig {
            ks: self.ks.clone(),
            group_k,
            n_groups: self.n_groups,
            variance_sample: self.variance_sample,
            score_mode: self.score_mode,
            seed: self.rng_seed,
        }
    }

    pub fn set_train_config(&mut self, t: &TrainConfig) {
        self.embedding_dim = t.embedding_dim;
        self.learning_rate = t.learning_rate;
        self.l2_reg = t.l2_reg;
        self.n_negatives = t.n_negatives;
        self.batch_size = t.batch_size;
        self.epochs = t.epochs;
        self.sampling_mode = t.sampling_mode;
        self.neg_sampler = t.neg_sampler;
        self.pop_exponent = t.pop_exponent;
        self.r_noise = t.r_noise;
        self.pos_noise_ratio = t.pos_noise_ratio;
        self.rng_seed = t.rng_seed;
    }

    pub fn set_loss_spec(&mut self, l: &LossSpec) {
        self.loss = l.kind;
        self.tau = l.tau;
        self.tau_pos = l.tau_pos;
        self.tau_neg = l.tau_neg;
        self.bce_mse_balance = l.bce_mse_balance;
        self.bsl_form = l.bsl_form;
        self.bsl_grouping = l.grouping;
        self.bsl_group_reduction = l.group_reduction;
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Override values are TOML literals; bare words are taken as strings.
fn parse_override(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}
