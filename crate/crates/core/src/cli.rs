//! Command-line front end. `run` parses arguments, dispatches a subcommand
//! and maps the outcome to an exit code: 0 success, 1 runtime failure,
//! 2 usage or config error.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::config::{ExperimentConfig, LossKind, ScoreMode};
use crate::data::{load_dataset, load_dataset_remapped, Dataset};
use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::experiment::{self, DiagnoseOptions, FairnessReport};
use crate::model::Checkpoint;
use crate::synthetic;

#[derive(Debug, Parser)]
#[command(name = "bslrec", version, about = "Softmax-family recommendation experiments")]
pub struct Cli {
    /// Overrides the config's rng_seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Worker threads for evaluation and sweeps (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Config override, `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Fixture {
    Planted,
    Zipf,
    Uniform,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate and normalize a dataset, or generate a synthetic one.
    Ingest {
        #[arg(long, required_unless_present = "synthetic")]
        train: Option<PathBuf>,
        #[arg(long, required_unless_present = "synthetic")]
        test: Option<PathBuf>,
        /// Map raw ids to dense 0-based ids.
        #[arg(long)]
        remap: bool,
        #[arg(long, conflicts_with_all = ["train", "test"])]
        synthetic: Option<Fixture>,
    },
    /// Train a model and write manifest, checkpoints, logs and metrics.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Continue from `last.ckpt` in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Evaluate a checkpoint: JSON to stdout, CSV to `<out>/eval.csv`.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, required_unless_present = "config")]
        train: Option<PathBuf>,
        #[arg(long, required_unless_present = "config")]
        test: Option<PathBuf>,
        #[arg(long, conflicts_with_all = ["train", "test"])]
        config: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        ks: Option<Vec<usize>>,
        #[arg(long)]
        n_groups: Option<usize>,
        #[arg(long, value_enum)]
        score_mode: Option<ScoreModeArg>,
    },
    /// Retrain over r_noise, negative-count and contamination cells.
    NoiseSweep {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, value_delimiter = ',')]
        r_values: Vec<f64>,
        #[arg(long, value_delimiter = ',')]
        negatives: Vec<usize>,
        #[arg(long, value_delimiter = ',')]
        contamination: Vec<f64>,
        /// Losses to compare (default: the config's loss).
        #[arg(long, value_delimiter = ',', value_enum)]
        losses: Vec<LossArg>,
    },
    /// Worst-case negative weights and radius estimates for a checkpoint.
    DroDiagnose {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, value_delimiter = ',', default_value = "0.5,0.2,0.1,0.05")]
        taus: Vec<f64>,
        #[arg(long, default_value_t = 1)]
        batches: usize,
        #[arg(long, default_value_t = 64)]
        rows: usize,
        #[arg(long, default_value_t = 20)]
        bins: usize,
    },
    /// Per-popularity-group NDCG and score variance, one column per checkpoint.
    FairnessReport {
        /// `label=path` or `path`; repeatable.
        #[arg(long = "checkpoint", required = true)]
        checkpoints: Vec<String>,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        n_groups: Option<usize>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ScoreModeArg {
    Cosine,
    InnerProduct,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum LossArg {
    Bpr,
    Bce,
    Mse,
    Sl,
    SlNoVariance,
    Bsl,
}

impl From<LossArg> for LossKind {
    fn from(l: LossArg) -> Self {
        match l {
            LossArg::Bpr => LossKind::Bpr,
            LossArg::Bce => LossKind::Bce,
            LossArg::Mse => LossKind::Mse,
            LossArg::Sl => LossKind::Sl,
            LossArg::SlNoVariance => LossKind::SlNoVariance,
            LossArg::Bsl => LossKind::Bsl,
        }
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_usage() {
                2
            } else {
                1
            }
        }
    }
}

fn load_config(args: &ConfigArgs, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut overrides = args.overrides.clone();
    if let Some(s) = seed {
        overrides.push(format!("rng_seed={s}"));
    }
    ExperimentConfig::load(&args.config, &overrides)
}

fn create_out(out: &Path) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))
}

fn write_out(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn check_shape(ckpt: &Checkpoint, ds: &Dataset) -> Result<()> {
    if ckpt.table.n_users() != ds.n_users() || ckpt.table.n_items() != ds.n_items() {
        return Err(Error::Checkpoint(format!(
            "checkpoint is {}x{} but dataset is {}x{}",
            ckpt.table.n_users(),
            ckpt.table.n_items(),
            ds.n_users(),
            ds.n_items()
        )));
    }
    Ok(())
}

#[derive(Serialize)]
struct DatasetStats {
    n_users: usize,
    n_items: usize,
    n_train: usize,
    n_test: usize,
}

pub fn execute(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::InvalidArgument("--threads must be >= 1".into()));
        }
        // fails only if a pool already exists, e.g. when called twice in one process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let out = &cli.out;
    match &cli.command {
        Command::Ingest {
            train,
            test,
            remap,
            synthetic: fixture,
        } => {
            let ds = match (fixture, train, test) {
                (Some(f), _, _) => {
                    let seed = cli.seed;
                    match f {
                        Fixture::Planted => synthetic::planted(&synthetic::PlantedConfig {
                            seed: seed.unwrap_or(synthetic::PlantedConfig::default().seed),
                            ..Default::default()
                        }),
                        Fixture::Zipf => synthetic::zipf(&synthetic::ZipfConfig {
                            seed: seed.unwrap_or(synthetic::ZipfConfig::default().seed),
                            ..Default::default()
                        }),
                        Fixture::Uniform => synthetic::uniform(100, 50, 0.1, 0.2, seed.unwrap_or(0)),
                    }
                }
                (None, Some(tr), Some(te)) if *remap => {
                    let (ds, maps) = load_dataset_remapped(tr, te)?;
                    create_out(out)?;
                    write_out(&out.join("id_maps.json"), serde_json::to_string_pretty(&maps)? + "\n")?;
                    ds
                }
                (None, Some(tr), Some(te)) => load_dataset(tr, te)?,
                _ => return Err(Error::InvalidArgument("ingest needs --train and --test, or --synthetic".into())),
            };
            create_out(out)?;
            ds.save(&out.join("train.txt"), &out.join("test.txt"))?;
            let stats = DatasetStats {
                n_users: ds.n_users(),
                n_items: ds.n_items(),
                n_train: ds.n_train_interactions(),
                n_test: ds.n_test_interactions(),
            };
            let json = serde_json::to_string_pretty(&stats)?;
            write_out(&out.join("stats.json"), json.clone() + "\n")?;
            println!("{json}");
        }
        Command::Train { config, resume } => {
            let cfg = load_config(config, cli.seed)?;
            let outcome = experiment::run_training(&cfg, out, *resume)?;
            println!("{}", outcome.report.to_json());
        }
        Command::Evaluate {
            checkpoint,
            train,
            test,
            config,
            ks,
            n_groups,
            score_mode,
        } => {
            let mut cfg = match config {
                Some(p) => ExperimentConfig::load(p, &[])?,
                None => ExperimentConfig {
                    train_path: train.clone().expect("clap requires train"),
                    test_path: test.clone().expect("clap requires test"),
                    ..ExperimentConfig::default()
                },
            };
            if let Some(ks) = ks {
                cfg.ks = ks.clone();
            }
            if let Some(n) = n_groups {
                cfg.n_groups = *n;
            }
            if let Some(m) = score_mode {
                cfg.score_mode = match m {
                    ScoreModeArg::Cosine => ScoreMode::Cosine,
                    ScoreModeArg::InnerProduct => ScoreMode::InnerProduct,
                };
            }
            if let Some(s) = cli.seed {
                cfg.rng_seed = s;
            }
            cfg.validate()?;
            // load everything before writing anything
            let ckpt = Checkpoint::load(checkpoint)?;
            let ds = load_dataset(&cfg.train_path, &cfg.test_path)?;
            check_shape(&ckpt, &ds)?;
            let report = evaluate(&ckpt.table, &ds, &cfg.eval_config())?;
            create_out(out)?;
            write_out(&out.join("eval.csv"), report.to_csv_string())?;
            println!("{}", report.to_json());
        }
        Command::NoiseSweep {
            config,
            r_values,
            negatives,
            contamination,
            losses,
        } => {
            if r_values.is_empty() && negatives.is_empty() && contamination.is_empty() {
                return Err(Error::InvalidArgument(
                    "empty sweep: give --r-values, --negatives or --contamination".into(),
                ));
            }
            let cfg = load_config(config, cli.seed)?;
            let ds = load_dataset(&cfg.train_path, &cfg.test_path)?;
            let base = cfg.train_config();
            let specs: Vec<_> = if losses.is_empty() {
                vec![cfg.loss_spec()]
            } else {
                losses
                    .iter()
                    .map(|&l| {
                        let mut s = cfg.loss_spec();
                        s.kind = l.into();
                        s
                    })
                    .collect()
            };
            let cells = experiment::sweep_cells(&base, r_values, negatives, contamination);
            let eval = cfg.eval_config();
            let rows = experiment::sweep(&ds, &base, &specs, &cells, &cfg.tau_grid, &eval)?;
            create_out(out)?;
            let path = out.join("sweep.csv");
            let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            experiment::write_sweep_csv(&rows, &eval.ks, file)?;
            let mut stdout = std::io::stdout().lock();
            experiment::write_sweep_csv(&rows, &eval.ks, &mut stdout)?;
            let _ = stdout.flush();
        }
        Command::DroDiagnose {
            checkpoint,
            config,
            taus,
            batches,
            rows,
            bins,
        } => {
            let cfg = load_config(config, cli.seed)?;
            let ckpt = Checkpoint::load(checkpoint)?;
            let ds = load_dataset(&cfg.train_path, &cfg.test_path)?;
            check_shape(&ckpt, &ds)?;
            let opts = DiagnoseOptions {
                taus: taus.clone(),
                n_batches: *batches,
                rows_per_batch: *rows,
                n_negatives: cfg.n_negatives,
                r_noise: cfg.r_noise,
                bins: *bins,
                seed: cfg.rng_seed,
            };
            let d = experiment::dro_diagnose(&ckpt.table, &ds, &opts)?;
            create_out(out)?;
            experiment::write_rows_csv(&out.join("weights.csv"), &d.weights)?;
            experiment::write_rows_csv(&out.join("eta.csv"), &d.etas)?;
            experiment::write_rows_csv(&out.join("eta_hist.csv"), &d.histogram)?;
            for &tau in &opts.taus {
                let entropies: Vec<f64> = (0..opts.n_batches * opts.rows_per_batch)
                    .filter_map(|r| {
                        let w: Vec<f64> = d
                            .weights
                            .iter()
                            .filter(|x| x.tau == tau && x.batch * opts.rows_per_batch + x.row == r)
                            .map(|x| x.weight)
                            .collect();
                        (!w.is_empty()).then(|| crate::dro::entropy(&w))
                    })
                    .collect();
                let mean = entropies.iter().sum::<f64>() / entropies.len().max(1) as f64;
                println!("tau={tau} mean_weight_entropy={mean}");
            }
        }
        Command::FairnessReport {
            checkpoints,
            config,
            n_groups,
        } => {
            let mut cfg = load_config(config, cli.seed)?;
            if let Some(n) = n_groups {
                cfg.n_groups = *n;
            }
            let ds = load_dataset(&cfg.train_path, &cfg.test_path)?;
            let mut loaded = Vec::new();
            for spec in checkpoints {
                let (label, path) = match spec.split_once('=') {
                    Some((l, p)) => (l.to_string(), PathBuf::from(p)),
                    None => {
                        let p = PathBuf::from(spec);
                        let label = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                        (label, p)
                    }
                };
                let ckpt = Checkpoint::load(&path)?;
                check_shape(&ckpt, &ds)?;
                loaded.push((label, ckpt.table));
            }
            let refs: Vec<(String, &_)> = loaded.iter().map(|(l, t)| (l.clone(), t)).collect();
            let report = FairnessReport::new(&refs, &ds, &cfg.eval_config())?;
            create_out(out)?;
            let mut buf = Vec::new();
            report.write_csv(&mut buf)?;
            write_out(&out.join("fairness.csv"), &buf)?;
            std::io::stdout().write_all(&buf).map_err(|e| Error::io("<stdout>", e))?;
        }
    }
    Ok(())
}
