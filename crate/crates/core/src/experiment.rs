//! Reproducible experiment drivers: training runs with manifests and
//! checkpoints, temperature grid searches, noise and contamination sweeps,
//! worst-case weight diagnostics and popularity-group fairness reports.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::IndexedRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{EvalConfig, ExperimentConfig, LossKind, LossSpec, TrainConfig};
use crate::data::{load_dataset, Dataset};
use crate::dro;
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalReport};
use crate::model::{Checkpoint, EmbeddingTable, EpochLog, Trainer};
use crate::sampling::{rng_for, stream, SamplerState};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Hex SHA-256 of a file's contents.
pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Trains to completion and evaluates the final table.
pub fn train_and_evaluate(
    ds: &Dataset,
    cfg: &TrainConfig,
    spec: &LossSpec,
    eval: &EvalConfig,
) -> Result<(EmbeddingTable, Vec<EpochLog>, EvalReport)> {
    let (table, log) = crate::model::train(ds, cfg, spec)?;
    let report = evaluate(&table, ds, eval)?;
    Ok((table, log, report))
}

/// The temperature a grid search varies: `tau` for the softmax losses,
/// `tau_pos` for BSL. Other losses have no temperature.
pub fn with_grid_tau(spec: &LossSpec, tau: f64) -> Option<LossSpec> {
    let mut s = spec.clone();
    match spec.kind {
        LossKind::Sl | LossKind::SlNoVariance => s.tau = tau,
        LossKind::Bsl => s.tau_pos = tau,
        LossKind::Bpr | LossKind::Bce | LossKind::Mse => return None,
    }
    Some(s)
}

fn grid_tau(spec: &LossSpec) -> Option<f64> {
    match spec.kind {
        LossKind::Sl | LossKind::SlNoVariance => Some(spec.tau),
        LossKind::Bsl => Some(spec.tau_pos),
        _ => None,
    }
}

#[derive(Debug, Clone)]
pub struct GridResult {
    /// `None` when the loss has no temperature and a single run was made.
    pub best_tau: Option<f64>,
    pub best_spec: LossSpec,
    pub report: EvalReport,
    pub table: EmbeddingTable,
    /// `(tau, NDCG@group_k)` for every grid point, in grid order.
    pub trials: Vec<(f64, f64)>,
}

/// Trains one model per grid temperature (in parallel) and keeps the one
/// with the highest NDCG at `eval.group_k`; ties go to the earlier grid
/// point. An empty grid, or a loss without a temperature, trains `spec` as is.
pub fn grid_search_tau(
    ds: &Dataset,
    cfg: &TrainConfig,
    spec: &LossSpec,
    grid: &[f64],
    eval: &EvalConfig,
) -> Result<GridResult> {
    let specs: Vec<LossSpec> = if grid.is_empty() || grid_tau(spec).is_none() {
        vec![spec.clone()]
    } else {
        grid.iter().map(|&t| with_grid_tau(spec, t).expect("has temperature")).collect()
    };
    let runs: Vec<(LossSpec, EmbeddingTable, EvalReport)> = specs
        .into_par_iter()
        .map(|s| train_and_evaluate(ds, cfg, &s, eval).map(|(t, _, r)| (s, t, r)))
        .collect::<Result<_>>()?;
    let key = |r: &EvalReport| r.ndcg.get(&eval.group_k).copied().unwrap_or(0.0);
    let trials = runs
        .iter()
        .map(|(s, _, r)| (grid_tau(s).unwrap_or(f64::NAN), key(r)))
        .collect();
    let mut best = 0;
    for (j, run) in runs.iter().enumerate() {
        if key(&run.2) > key(&runs[best].2) {
            best = j;
        }
    }
    let (best_spec, table, report) = runs.into_iter().nth(best).expect("at least one run");
    Ok(GridResult {
        best_tau: grid_tau(&best_spec),
        best_spec,
        report,
        table,
        trials,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EtaSummary {
    pub mean: f64,
    pub median: f64,
}

/// Scores of `n_negatives` uniformly sampled negatives for up to `n_rows`
/// random training pairs, drawn from the diagnose stream.
fn sampled_negative_scores(
    table: &EmbeddingTable,
    ds: &Dataset,
    n_rows: usize,
    n_negatives: usize,
    r_noise: f64,
    seed: u64,
    batch: u64,
) -> Result<Vec<(usize, Vec<usize>, Vec<f64>)>> {
    let pairs = ds.train_pairs();
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("dataset has no training pairs".into()));
    }
    let mut rng = rng_for(seed, stream::DIAGNOSE, 2 * batch);
    let rows: Vec<(usize, usize)> = pairs.choose_multiple(&mut rng, n_rows.min(pairs.len())).copied().collect();
    let mut sampler = SamplerState::uniform(rng_for(seed, stream::DIAGNOSE, 2 * batch + 1), r_noise)?;
    rows.into_iter()
        .map(|(u, _)| {
            let items = sampler.sample_negatives(ds, u, n_negatives)?;
            let (scores, _) = table.cosine_score(u, &items);
            Ok((u, items, scores))
        })
        .collect()
}

/// Mean and median of the per-row radius estimate `Var/(2 tau^2)` over
/// sampled negative scores.
pub fn eta_summary(table: &EmbeddingTable, ds: &Dataset, cfg: &TrainConfig, tau: f64) -> Result<EtaSummary> {
    let rows = sampled_negative_scores(table, ds, 256, cfg.n_negatives, cfg.r_noise, cfg.rng_seed, 0)?;
    let mut etas: Vec<f64> = rows
        .iter()
        .map(|(_, _, s)| dro::estimate_eta(s, &dro::uniform_base(s.len()), tau))
        .collect::<Result<_>>()?;
    etas.sort_by(f64::total_cmp);
    let n = etas.len();
    let median = if n % 2 == 1 {
        etas[n / 2]
    } else {
        0.5 * (etas[n / 2 - 1] + etas[n / 2])
    };
    Ok(EtaSummary {
        mean: etas.iter().sum::<f64>() / n as f64,
        median,
    })
}

/// One cell of a sweep: overrides applied on top of the base train config.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub r_noise: f64,
    pub n_negatives: usize,
    pub pos_noise_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub loss: LossKind,
    pub cell: SweepCell,
    pub best_tau: Option<f64>,
    pub report: EvalReport,
    pub eta: Option<EtaSummary>,
    /// NDCG@group_k for every grid temperature tried.
    pub trials: Vec<(f64, f64)>,
}

/// Cartesian product of the given axes; an empty axis keeps the base value.
pub fn sweep_cells(base: &TrainConfig, r_values: &[f64], negatives: &[usize], contamination: &[f64]) -> Vec<SweepCell> {
    let rs = if r_values.is_empty() { vec![base.r_noise] } else { r_values.to_vec() };
    let ns = if negatives.is_empty() { vec![base.n_negatives] } else { negatives.to_vec() };
    let cs = if contamination.is_empty() { vec![base.pos_noise_ratio] } else { contamination.to_vec() };
    let mut cells = Vec::new();
    for &pos_noise_ratio in &cs {
        for &n_negatives in &ns {
            for &r_noise in &rs {
                cells.push(SweepCell {
                    r_noise,
                    n_negatives,
                    pos_noise_ratio,
                });
            }
        }
    }
    cells
}

/// Re-trains from scratch for every (loss, cell) pair with a temperature grid
/// search inside each, and records the best-temperature metrics.
pub fn sweep(
    ds: &Dataset,
    base: &TrainConfig,
    specs: &[LossSpec],
    cells: &[SweepCell],
    grid: &[f64],
    eval: &EvalConfig,
) -> Result<Vec<SweepRow>> {
    if cells.is_empty() || specs.is_empty() {
        return Err(Error::InvalidArgument("sweep has no cells".into()));
    }
    let jobs: Vec<(&LossSpec, &SweepCell)> = specs.iter().flat_map(|s| cells.iter().map(move |c| (s, c))).collect();
    jobs.into_par_iter()
        .map(|(spec, cell)| {
            let cfg = TrainConfig {
                r_noise: cell.r_noise,
                n_negatives: cell.n_negatives,
                pos_noise_ratio: cell.pos_noise_ratio,
                ..base.clone()
            };
            cfg.validate()?;
            let g = grid_search_tau(ds, &cfg, spec, grid, eval)?;
            let eta = match g.best_tau {
                Some(t) => Some(eta_summary(&g.table, ds, &cfg, t)?),
                None => None,
            };
            Ok(SweepRow {
                loss: spec.kind,
                cell: *cell,
                best_tau: g.best_tau,
                report: g.report,
                eta,
                trials: g.trials,
            })
        })
        .collect()
}

/// False-negative sweep over `r_values` with everything else fixed.
pub fn noise_sweep(
    ds: &Dataset,
    cfg: &TrainConfig,
    spec: &LossSpec,
    r_values: &[f64],
    grid: &[f64],
    eval: &EvalConfig,
) -> Result<Vec<SweepRow>> {
    if r_values.iter().any(|r| !(*r >= 0.0)) {
        return Err(Error::InvalidArgument("r values must be >= 0".into()));
    }
    let cells = sweep_cells(cfg, r_values, &[], &[]);
    sweep(ds, cfg, std::slice::from_ref(spec), &cells, grid, eval)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One CSV row per sweep cell.
pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], ks: &[usize], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = ["loss", "r_noise", "n_negatives", "pos_noise_ratio", "best_tau"]
        .map(String::from)
        .to_vec();
    for k in ks {
        header.push(format!("recall@{k}"));
        header.push(format!("ndcg@{k}"));
    }
    header.extend(["neg_score_variance", "eta_mean", "eta_median"].map(String::from));
    w.write_record(&header)?;
    for row in rows {
        let mut rec = vec![
            row.loss.name().to_string(),
            row.cell.r_noise.to_string(),
            row.cell.n_negatives.to_string(),
            row.cell.pos_noise_ratio.to_string(),
            opt(row.best_tau),
        ];
        for k in ks {
            rec.push(opt(row.report.recall.get(k).copied()));
            rec.push(opt(row.report.ndcg.get(k).copied()));
        }
        rec.push(row.report.neg_score_variance.to_string());
        rec.push(opt(row.eta.map(|e| e.mean)));
        rec.push(opt(row.eta.map(|e| e.median)));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightRow {
    pub batch: usize,
    pub row: usize,
    pub user: usize,
    pub item: usize,
    pub tau: f64,
    pub score: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EtaRow {
    pub batch: usize,
    pub row: usize,
    pub user: usize,
    pub tau: f64,
    pub eta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub tau: f64,
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DroDiagnosis {
    pub weights: Vec<WeightRow>,
    pub etas: Vec<EtaRow>,
    pub histogram: Vec<HistogramBin>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnoseOptions {
    pub taus: Vec<f64>,
    pub n_batches: usize,
    pub rows_per_batch: usize,
    pub n_negatives: usize,
    pub r_noise: f64,
    pub bins: usize,
    pub seed: u64,
}

impl Default for DiagnoseOptions {
    fn default() -> Self {
        DiagnoseOptions {
            taus: vec![0.5, 0.2, 0.1, 0.05],
            n_batches: 1,
            rows_per_batch: 64,
            n_negatives: 64,
            r_noise: 0.0,
            bins: 20,
            seed: 0,
        }
    }
}

/// Samples training rows with uniform negatives and records, per temperature,
/// the worst-case weight of each negative and the radius estimate of each row.
pub fn dro_diagnose(table: &EmbeddingTable, ds: &Dataset, opts: &DiagnoseOptions) -> Result<DroDiagnosis> {
    if opts.taus.is_empty() || opts.taus.iter().any(|t| !(*t > 0.0)) {
        return Err(Error::InvalidArgument("need at least one positive tau".into()));
    }
    if opts.n_batches == 0 || opts.rows_per_batch == 0 || opts.n_negatives == 0 {
        return Err(Error::InvalidArgument("batches, rows and negatives must be >= 1".into()));
    }
    let mut weights = Vec::new();
    let mut etas = Vec::new();
    for b in 0..opts.n_batches {
        let rows = sampled_negative_scores(
            table,
            ds,
            opts.rows_per_batch,
            opts.n_negatives,
            opts.r_noise,
            opts.seed,
            b as u64,
        )?;
        for (r, (user, items, scores)) in rows.iter().enumerate() {
            let base = dro::uniform_base(scores.len());
            for &tau in &opts.taus {
                let w = dro::worst_case_weights(scores, &base, tau)?;
                for ((&item, &score), &weight) in items.iter().zip(scores).zip(&w.weights) {
                    weights.push(WeightRow {
                        batch: b,
                        row: r,
                        user: *user,
                        item,
                        tau,
                        score,
                        weight,
                    });
                }
                etas.push(EtaRow {
                    batch: b,
                    row: r,
                    user: *user,
                    tau,
                    eta: dro::estimate_eta(scores, &base, tau)?,
                });
            }
        }
    }
    let histogram = opts
        .taus
        .iter()
        .flat_map(|&tau| {
            let vals: Vec<f64> = etas.iter().filter(|e| e.tau == tau).map(|e| e.eta).collect();
            histogram(&vals, opts.bins.max(1))
                .into_iter()
                .map(move |(lo, hi, count)| HistogramBin { tau, lo, hi, count })
        })
        .collect();
    Ok(DroDiagnosis {
        weights,
        etas,
        histogram,
    })
}

/// Equal-width bins over `[min, max]`; the last bin is closed.
pub fn histogram(values: &[f64], bins: usize) -> Vec<(f64, f64, usize)> {
    if values.is_empty() || bins == 0 {
        return Vec::new();
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let mut counts = vec![0; bins];
    for &v in values {
        let k = (((v - lo) / width) as usize).min(bins - 1);
        counts[k] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(k, c)| (lo + k as f64 * width, lo + (k + 1) as f64 * width, c))
        .collect()
}

/// Writes any serializable rows as a headed CSV file.
pub fn write_rows_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Side-by-side popularity-group NDCG and score variance for several models.
#[derive(Debug, Clone, PartialEq)]
pub struct FairnessReport {
    pub labels: Vec<String>,
    pub reports: Vec<EvalReport>,
}

impl FairnessReport {
    pub fn new(models: &[(String, &EmbeddingTable)], ds: &Dataset, eval: &EvalConfig) -> Result<Self> {
        if models.is_empty() {
            return Err(Error::InvalidArgument("need at least one model".into()));
        }
        let reports = models.iter().map(|(_, t)| evaluate(t, ds, eval)).collect::<Result<_>>()?;
        Ok(FairnessReport {
            labels: models.iter().map(|(l, _)| l.clone()).collect(),
            reports,
        })
    }

    /// Rows: one per group, then total NDCG, the popularity shares and the
    /// score variance. One column per model.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["row".to_string()];
        header.extend(self.labels.iter().cloned());
        w.write_record(&header)?;
        let n_groups = self.reports[0].group_ndcg.len();
        let k = self.reports[0].group_k;
        let mut emit = |name: String, f: &dyn Fn(&EvalReport) -> f64| -> Result<()> {
            let mut rec = vec![name];
            rec.extend(self.reports.iter().map(|r| f(r).to_string()));
            w.write_record(&rec)?;
            Ok(())
        };
        for g in 0..n_groups {
            emit(format!("group_{g}"), &|r| r.group_ndcg[g])?;
        }
        emit(format!("ndcg@{k}"), &|r| r.ndcg.get(&k).copied().unwrap_or(0.0))?;
        emit("unpopular_share".into(), &|r| r.unpopular_share())?;
        emit("popular_share".into(), &|r| r.popular_share())?;
        emit("top_group_share".into(), &|r| r.top_group_share())?;
        emit("neg_score_variance".into(), &|r| r.neg_score_variance)?;
        w.flush().map_err(|e| Error::Csv(e.into()))?;
        Ok(())
    }
}

/// Snapshot of an experiment, written before training starts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub config: ExperimentConfig,
    pub train_path: PathBuf,
    pub test_path: PathBuf,
    pub train_sha256: String,
    pub test_sha256: String,
    pub seed: u64,
    pub wall_clock_secs: f64,
    pub epoch_secs: Vec<f64>,
}

impl Manifest {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        Ok(Manifest {
            version: VERSION.to_string(),
            config: cfg.clone(),
            train_path: cfg.train_path.clone(),
            test_path: cfg.test_path.clone(),
            train_sha256: sha256_file(&cfg.train_path)?,
            test_sha256: sha256_file(&cfg.test_path)?,
            seed: cfg.rng_seed,
            wall_clock_secs: 0.0,
            epoch_secs: Vec::new(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, serde_json::to_string_pretty(self)? + "\n")
    }

    /// A resumed run must see the same data and the same settings apart from
    /// the epoch budget.
    pub fn check_resumable(&self, other: &Manifest) -> Result<()> {
        if self.train_sha256 != other.train_sha256 || self.test_sha256 != other.test_sha256 {
            return Err(Error::Checkpoint("dataset hash differs from the manifest; refusing to resume".into()));
        }
        let mut a = self.config.clone();
        let mut b = other.config.clone();
        a.epochs = 0;
        b.epochs = 0;
        if a != b {
            return Err(Error::Checkpoint("config differs from the manifest; refusing to resume".into()));
        }
        Ok(())
    }
}

/// File names inside a training output directory.
pub mod files {
    pub const MANIFEST: &str = "manifest.json";
    pub const CONFIG: &str = "config.toml";
    pub const LAST: &str = "last.ckpt";
    pub const BEST: &str = "best.ckpt";
    pub const BEST_INFO: &str = "best.json";
    pub const EPOCHS: &str = "epochs.csv";
    pub const METRICS: &str = "metrics.csv";
    pub const REPORT: &str = "report.json";
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct BestInfo {
    epoch: usize,
    metric: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub table: EmbeddingTable,
    pub report: EvalReport,
    pub best_epoch: Option<usize>,
    pub manifest: Manifest,
}

fn epoch_header(ks: &[usize]) -> Vec<String> {
    let mut h = vec!["epoch".to_string(), "mean_loss".to_string()];
    for k in ks {
        h.push(format!("recall@{k}"));
        h.push(format!("ndcg@{k}"));
    }
    h
}

fn read_epoch_rows(path: &Path, upto: usize) -> Result<Vec<Vec<String>>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let epoch: usize = rec
            .get(0)
            .and_then(|e| e.parse().ok())
            .ok_or_else(|| Error::Checkpoint(format!("bad row in {}", path.display())))?;
        if epoch <= upto {
            rows.push(rec.iter().map(String::from).collect());
        }
    }
    Ok(rows)
}

/// Full training run into `out`: manifest, per-epoch log, best and last
/// checkpoints, final metrics. With `resume`, continues from `last.ckpt`
/// after checking the manifest's dataset hashes and config.
pub fn run_training(cfg: &ExperimentConfig, out: &Path, resume: bool) -> Result<TrainOutcome> {
    cfg.validate()?;
    let ds = load_dataset(&cfg.train_path, &cfg.test_path)?;
    let mut manifest = Manifest::new(cfg)?;
    let manifest_path = out.join(files::MANIFEST);
    let train_cfg = cfg.train_config();
    let spec = cfg.loss_spec();
    let eval_cfg = cfg.eval_config();

    let (mut trainer, mut rows, mut best) = if resume {
        let previous = Manifest::load(&manifest_path)?;
        previous.check_resumable(&manifest)?;
        let ckpt = Checkpoint::load(&out.join(files::LAST))?;
        let done = ckpt.epoch;
        let trainer = Trainer::resume(&ds, &train_cfg, &spec, ckpt)?;
        let rows = read_epoch_rows(&out.join(files::EPOCHS), done)?;
        let best_path = out.join(files::BEST_INFO);
        let best: Option<BestInfo> = if best_path.exists() {
            let text = fs::read_to_string(&best_path).map_err(|e| Error::io(&best_path, e))?;
            Some(serde_json::from_str(&text)?)
        } else {
            None
        };
        manifest.epoch_secs = previous.epoch_secs;
        manifest.epoch_secs.truncate(done);
        (trainer, rows, best)
    } else {
        let trainer = Trainer::new(&ds, &train_cfg, &spec)?;
        create_dir(out)?;
        (trainer, Vec::new(), None)
    };
    manifest.save(&manifest_path)?;
    write_file(&out.join(files::CONFIG), cfg.to_toml())?;

    let started = Instant::now();
    let mut last_report = None;
    while trainer.epoch() < cfg.epochs {
        let t0 = Instant::now();
        let log = trainer.run_epoch()?;
        manifest.epoch_secs.push(t0.elapsed().as_secs_f64());
        let mut row = vec![log.epoch.to_string(), log.mean_loss.to_string()];
        let due = cfg.eval_every > 0 && (log.epoch % cfg.eval_every == 0 || log.epoch == cfg.epochs);
        if due {
            let report = evaluate(trainer.table(), &ds, &eval_cfg)?;
            for k in &eval_cfg.ks {
                row.push(report.recall[k].to_string());
                row.push(report.ndcg[k].to_string());
            }
            let metric = report.ndcg[&eval_cfg.group_k];
            if best.is_none_or(|b| metric > b.metric) {
                best = Some(BestInfo {
                    epoch: log.epoch,
                    metric,
                });
                trainer.checkpoint().save(&out.join(files::BEST))?;
                write_file(&out.join(files::BEST_INFO), serde_json::to_string(&best)?)?;
            }
            last_report = Some(report);
        } else {
            row.extend(std::iter::repeat_n(String::new(), 2 * eval_cfg.ks.len()));
        }
        rows.push(row);
        trainer.checkpoint().save(&out.join(files::LAST))?;
    }

    let mut w = csv::Writer::from_path(out.join(files::EPOCHS))?;
    w.write_record(epoch_header(&eval_cfg.ks))?;
    for r in &rows {
        w.write_record(r)?;
    }
    w.flush().map_err(|e| Error::io(out.join(files::EPOCHS), e))?;
    if trainer.epoch() == 0 || cfg.epochs == 0 {
        trainer.checkpoint().save(&out.join(files::LAST))?;
    }

    let report = match last_report {
        Some(r) if trainer.epoch() == cfg.epochs => r,
        _ => evaluate(trainer.table(), &ds, &eval_cfg)?,
    };
    write_file(&out.join(files::METRICS), report.to_csv_string())?;
    write_file(&out.join(files::REPORT), report.to_json() + "\n")?;
    manifest.wall_clock_secs = started.elapsed().as_secs_f64();
    manifest.save(&manifest_path)?;
    Ok(TrainOutcome {
        best_epoch: best.map(|b| b.epoch),
        table: trainer.into_table(),
        report,
        manifest,
    })
}
