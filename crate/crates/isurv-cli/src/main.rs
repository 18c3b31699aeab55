//! `isurv` command line: synthetic data generation, training, evaluation,
//! nested cross-validation and study sweeps for the imprecise survival models.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use isurv::data::ingest::load_csv;
use isurv::data::synthetic::{make_dataset, SyntheticKind, SyntheticSpec};
use isurv::data::SurvivalDataset;
use isurv::models::{fit, load_model, save_model, ModelConfig, Variant};

use isurv_cli::cv::{nested_cv, CvSpec, SearchSpace};
use isurv_cli::experiment::{evaluate_beran, evaluate_model, prepare, train_prepared};
use isurv_cli::runconfig::{apply_model_overrides, config_hash, parse_config_text};
use isurv_cli::sweep::{run_sweep, rows_to_csv, Study, SweepModel, SweepSpec};

#[derive(Parser)]
#[command(
    name = "isurv",
    about = "Imprecise survival models with trainable attention kernels",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct OutDir {
    /// Output directory (falls back to $ISURV_OUT_DIR, then the working directory).
    #[arg(long)]
    out: Option<PathBuf>,
}

impl OutDir {
    fn resolve(&self) -> Result<PathBuf> {
        let dir = self
            .out
            .clone()
            .or_else(|| std::env::var_os("ISURV_OUT_DIR").map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("."));
        std::fs::create_dir_all(&dir)
            .with_context(|| format!("creating output directory {dir:?}"))?;
        Ok(dir)
    }
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Model variant: isurvm | isurvq | isurvj | isurvjg.
    #[arg(long, default_value = "isurvj")]
    variant: String,
    /// Flat key=value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Inline config overrides, e.g. --set epochs=100 --set lr=0.01.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Training seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl ConfigArgs {
    fn build(&self) -> Result<(ModelConfig, String)> {
        let variant = Variant::parse(&self.variant)?;
        let mut config = ModelConfig::new(variant);
        config.seed = self.seed;
        let file_bytes = match &self.config {
            Some(path) => {
                let bytes = std::fs::read(path).with_context(|| format!("reading {path:?}"))?;
                let kv = parse_config_text(std::str::from_utf8(&bytes)?)?;
                apply_model_overrides(&mut config, &kv)?;
                Some(bytes)
            }
            None => None,
        };
        let mut inline = BTreeMap::new();
        for pair in &self.sets {
            let (key, value) = pair
                .split_once('=')
                .ok_or_else(|| anyhow!("--set expects KEY=VALUE, got '{pair}'"))?;
            inline.insert(key.trim().to_string(), value.trim().to_string());
        }
        apply_model_overrides(&mut config, &inline)?;
        config.validate()?;
        let hash = config_hash(file_bytes.as_deref(), &config)?;
        Ok((config, hash))
    }
}

#[derive(Args, Clone)]
struct CsvInput {
    /// Input CSV file with one row per instance.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "time")]
    time_column: String,
    #[arg(long, default_value = "event")]
    event_column: String,
}

impl CsvInput {
    fn load(&self) -> Result<SurvivalDataset> {
        Ok(load_csv(&self.data, &self.time_column, &self.event_column)?)
    }

    fn tag(&self) -> String {
        self.data
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "dataset".into())
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic train/test pair as CSV files.
    Generate {
        /// friedman1|friedman2|friedman3|interactions|sparse|nonlinear|noisy|linear|quadratic|parabola
        #[arg(long)]
        kind: String,
        #[arg(long, default_value_t = 500)]
        n_train: usize,
        #[arg(long, default_value_t = 300)]
        n_test: usize,
        /// Feature count (kinds enforce their own minimums; parabola is 1-d).
        #[arg(long)]
        d: Option<usize>,
        /// Censoring probability.
        #[arg(long, default_value_t = 0.2)]
        censor: f64,
        /// Weibull shape of the event-time transform.
        #[arg(long)]
        shape: Option<f64>,
        /// Non-zero fraction for the sparse kind.
        #[arg(long, default_value_t = 0.2)]
        sparsity: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        out: OutDir,
    },
    /// Train a model on a CSV file and report training-set metrics.
    Train {
        #[command(flatten)]
        input: CsvInput,
        #[command(flatten)]
        config: ConfigArgs,
        /// Model output path (default `<out>/model.json`).
        #[arg(long)]
        model_file: Option<PathBuf>,
        /// Report output path (default `<out>/train_report.json`).
        #[arg(long)]
        report: Option<PathBuf>,
        #[command(flatten)]
        out: OutDir,
    },
    /// Evaluate a saved model on a CSV file.
    Eval {
        /// Model file produced by `train`.
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        input: CsvInput,
        /// Report output path (default `<out>/eval_report.json`).
        #[arg(long)]
        report: Option<PathBuf>,
        #[command(flatten)]
        out: OutDir,
    },
    /// Nested cross-validation with seeded random hyperparameter search.
    Cv {
        #[command(flatten)]
        input: CsvInput,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value_t = 2)]
        outer_repeats: usize,
        #[arg(long, default_value_t = 3)]
        outer_folds: usize,
        #[arg(long, default_value_t = 2)]
        inner_folds: usize,
        /// Random-search trials per outer fold.
        #[arg(long, default_value_t = 10)]
        trials: usize,
        /// Use the full evaluation protocol (4 repeats of stratified 5-fold
        /// outer CV, 3 inner folds).
        #[arg(long)]
        paper_protocol: bool,
        /// Print the planned protocol as JSON without running it.
        #[arg(long)]
        dry_run: bool,
        #[command(flatten)]
        out: OutDir,
    },
    /// Metric sweeps over feature count, censoring proportion or window size.
    Sweep {
        /// features | censoring | window
        #[arg(long)]
        study: String,
        /// Comma-separated synthetic kinds (defaults depend on the study).
        #[arg(long)]
        kinds: Option<String>,
        /// Comma-separated models, e.g. isurvj,beran.
        #[arg(long)]
        models: Option<String>,
        #[arg(long, default_value_t = 2)]
        reps: usize,
        #[arg(long, default_value_t = 200)]
        n_train: usize,
        #[arg(long, default_value_t = 150)]
        n_test: usize,
        /// Censoring probability for non-censoring studies.
        #[arg(long, default_value_t = 0.2)]
        censor: f64,
        /// Beran kernel temperature.
        #[arg(long, default_value_t = 0.1)]
        beran_tau: f64,
        /// Test instances per point receiving curve files.
        #[arg(long, default_value_t = 5)]
        curve_instances: usize,
        /// Comma-separated swept values overriding the study's full range,
        /// e.g. --points 0,1,2,3 for a short window sweep.
        #[arg(long)]
        points: Option<String>,
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        out: OutDir,
    },
    /// Train several models on one dataset and print a comparison table.
    Compare {
        /// Synthetic kind to generate (alternative to --data/--test).
        #[arg(long)]
        kind: Option<String>,
        /// Training CSV (requires --test).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Test CSV.
        #[arg(long)]
        test: Option<PathBuf>,
        #[arg(long, default_value = "time")]
        time_column: String,
        #[arg(long, default_value = "event")]
        event_column: String,
        /// Comma-separated models.
        #[arg(long, default_value = "isurvm,isurvq,isurvj,isurvjg,beran")]
        models: String,
        #[arg(long, default_value_t = 500)]
        n_train: usize,
        #[arg(long, default_value_t = 300)]
        n_test: usize,
        #[arg(long, default_value_t = 0.2)]
        censor: f64,
        #[arg(long, default_value_t = 0.1)]
        beran_tau: f64,
        /// Repetitions with distinct seeds.
        #[arg(long, default_value_t = 1)]
        reps: usize,
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        out: OutDir,
    },
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => {}
        Err(err) => {
            let line = serde_json::json!({ "error": format!("{err:#}") });
            eprintln!("{line}");
            std::process::exit(1);
        }
    }
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?)
        .with_context(|| format!("writing {path:?}"))?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { kind, n_train, n_test, d, censor, shape, sparsity, seed, out } => {
            let kind = SyntheticKind::parse(&kind)?;
            let mut spec = SyntheticSpec::new(kind);
            spec.n_train = n_train;
            spec.n_test = n_test;
            if let Some(d) = d {
                spec.d = d;
            }
            spec.censor_prob = censor;
            if let Some(shape) = shape {
                spec.weibull_shape = shape;
            }
            spec.sparsity = sparsity;
            spec.seed = seed;
            let (train, test) = make_dataset(&spec)?;
            let dir = out.resolve()?;
            let train_path = dir.join(format!("{}_train.csv", kind.name()));
            let test_path = dir.join(format!("{}_test.csv", kind.name()));
            train.write_csv(&train_path)?;
            test.write_csv(&test_path)?;
            let summary = serde_json::json!({
                "kind": kind.name(),
                "n_train": train.len(),
                "n_test": test.len(),
                "d": train.dim(),
                "censor_fraction_train": train.censoring_fraction(),
                "censor_fraction_test": test.censoring_fraction(),
                "seed": seed,
                "train_file": train_path,
                "test_file": test_path,
            });
            println!("{summary:#}");
            Ok(())
        }

        Command::Train { input, config, model_file, report, out } => {
            let started = Instant::now();
            let (model_config, hash) = config.build()?;
            let dataset = input.load()?;
            let (model, _kept) = fit(&dataset, &model_config)?;
            let eval = evaluate_model(&model, &dataset, &input.tag(), &hash)?;
            let dir = out.resolve()?;
            let model_path = model_file.unwrap_or_else(|| dir.join("model.json"));
            let report_path = report.unwrap_or_else(|| dir.join("train_report.json"));
            save_model(&model_path, &model)?;
            write_json(&report_path, &eval)?;
            println!(
                "{:#}",
                serde_json::json!({
                    "model_file": model_path,
                    "report_file": report_path,
                    "c_index": eval.c_index,
                    "ibs": eval.ibs,
                    "config_hash": hash,
                    "runtime_sec": started.elapsed().as_secs_f64(),
                })
            );
            Ok(())
        }

        Command::Eval { model, input, report, out } => {
            let started = Instant::now();
            let trained = load_model(&model)?;
            let dataset = input.load()?;
            let hash = trained.config.seed;
            let eval = evaluate_model(&trained, &dataset, &input.tag(), &format!("{hash}"))?;
            let dir = out.resolve()?;
            let report_path = report.unwrap_or_else(|| dir.join("eval_report.json"));
            write_json(&report_path, &eval)?;
            println!(
                "{:#}",
                serde_json::json!({
                    "report_file": report_path,
                    "c_index": eval.c_index,
                    "ibs": eval.ibs,
                    "runtime_sec": started.elapsed().as_secs_f64(),
                })
            );
            Ok(())
        }

        Command::Cv {
            input,
            config,
            outer_repeats,
            outer_folds,
            inner_folds,
            trials,
            paper_protocol,
            dry_run,
            out,
        } => {
            let (base, hash) = config.build()?;
            let spec = if paper_protocol {
                CvSpec::full_protocol(trials, config.seed)
            } else {
                CvSpec { outer_repeats, outer_folds, inner_folds, trials, seed: config.seed }
            };
            spec.validate()?;
            let space = SearchSpace::default();
            if dry_run {
                let plan = serde_json::json!({
                    "protocol": if paper_protocol { "full" } else { "desk_scale" },
                    "spec": spec,
                    "search_space": space,
                    "variant": base.variant.name(),
                    "stratification": "event indicator, round-robin within shuffled strata",
                    "config_hash": hash,
                });
                println!("{plan:#}");
                return Ok(());
            }
            let started = Instant::now();
            let dataset = input.load()?;
            let report = nested_cv(&dataset, &base, &spec, &space)?;
            let dir = out.resolve()?;
            for fold in &report.folds {
                write_json(&dir.join(format!("cv_fold_{}_{}.json", fold.repeat, fold.fold)), fold)?;
            }
            let report_path = dir.join("cv_report.json");
            write_json(&report_path, &report)?;
            println!(
                "{:#}",
                serde_json::json!({
                    "report_file": report_path,
                    "mean_c_index": report.mean_c_index,
                    "std_c_index": report.std_c_index,
                    "mean_ibs": report.mean_ibs,
                    "std_ibs": report.std_ibs,
                    "folds": report.folds.len(),
                    "config_hash": hash,
                    "runtime_sec": started.elapsed().as_secs_f64(),
                })
            );
            Ok(())
        }

        Command::Sweep {
            study,
            kinds,
            models,
            reps,
            n_train,
            n_test,
            censor,
            beran_tau,
            curve_instances,
            points,
            config,
            out,
        } => {
            let started = Instant::now();
            let study = Study::parse(&study)?;
            let kinds = match kinds {
                Some(list) => list
                    .split(',')
                    .map(SyntheticKind::parse)
                    .collect::<isurv::Result<Vec<_>>>()?,
                None => study.default_kinds(),
            };
            let models = match models {
                Some(list) => list
                    .split(',')
                    .map(SweepModel::parse)
                    .collect::<Result<Vec<_>>>()?,
                None => match study {
                    Study::Censoring => {
                        vec![SweepModel::Variant(Variant::ISurvJG), SweepModel::Beran]
                    }
                    _ => vec![SweepModel::Variant(Variant::ISurvJ), SweepModel::Beran],
                },
            };
            let points = points
                .map(|list| {
                    list.split(',')
                        .map(|v| v.trim().parse::<f64>().context("parsing --points"))
                        .collect::<Result<Vec<f64>>>()
                })
                .transpose()?;
            let (base_config, hash) = config.build()?;
            let spec = SweepSpec {
                study,
                kinds,
                models,
                reps,
                n_train,
                n_test,
                censor_prob: censor,
                beran_tau,
                base_config,
                seed: config.seed,
                curve_instances,
                points,
            };
            let dir = out.resolve()?;
            let rows = run_sweep(&spec, Some(&dir))?;
            let csv_path = dir.join(format!("sweep_{}.csv", study.name()));
            std::fs::write(&csv_path, rows_to_csv(&rows))?;
            println!(
                "{:#}",
                serde_json::json!({
                    "sweep_file": csv_path,
                    "rows": rows.len(),
                    "config_hash": hash,
                    "runtime_sec": started.elapsed().as_secs_f64(),
                })
            );
            Ok(())
        }

        Command::Compare {
            kind,
            data,
            test,
            time_column,
            event_column,
            models,
            n_train,
            n_test,
            censor,
            beran_tau,
            reps,
            config,
            out,
        } => {
            let started = Instant::now();
            let models: Vec<SweepModel> = models
                .split(',')
                .map(SweepModel::parse)
                .collect::<Result<Vec<_>>>()?;
            let (base_config, hash) = config.build()?;
            let mut results: Vec<serde_json::Value> = Vec::new();
            let mut table: BTreeMap<String, (Vec<f64>, Vec<f64>)> = BTreeMap::new();

            for rep in 0..reps.max(1) {
                let seed = config.seed.wrapping_add(rep as u64);
                let (train_raw, test_raw, tag) = match (&kind, &data, &test) {
                    (Some(kind), None, None) => {
                        let kind = SyntheticKind::parse(kind)?;
                        let mut spec = SyntheticSpec::new(kind);
                        spec.n_train = n_train;
                        spec.n_test = n_test;
                        spec.censor_prob = censor;
                        spec.seed = seed;
                        let (a, b) = make_dataset(&spec)?;
                        (a, b, kind.name().to_string())
                    }
                    (None, Some(train_path), Some(test_path)) => {
                        let a = load_csv(train_path, &time_column, &event_column)?;
                        let b = load_csv(test_path, &time_column, &event_column)?;
                        let tag = train_path
                            .file_stem()
                            .map(|s| s.to_string_lossy().into_owned())
                            .unwrap_or_else(|| "csv".into());
                        (a, b, tag)
                    }
                    _ => bail!("pass either --kind or both --data and --test"),
                };
                let prepared = prepare(&train_raw, &test_raw)?;
                for model in &models {
                    let report = match model {
                        SweepModel::Variant(variant) => {
                            let mut c = base_config.clone();
                            c.variant = *variant;
                            c.seed = seed;
                            let trained = train_prepared(&prepared, &c)?;
                            evaluate_model(&trained, &prepared.test, &tag, &hash)?
                        }
                        SweepModel::Beran => evaluate_beran(&prepared, beran_tau, &tag, seed, &hash)?,
                    };
                    let entry = table.entry(model.name().to_string()).or_default();
                    entry.0.push(report.c_index);
                    entry.1.push(report.ibs);
                    results.push(serde_json::to_value(&report)?);
                }
            }

            println!("{:<10} {:>18} {:>18}", "model", "c-index", "ibs");
            for (name, (cs, ibss)) in &table {
                let mc = cs.iter().sum::<f64>() / cs.len() as f64;
                let mi = ibss.iter().sum::<f64>() / ibss.len() as f64;
                let sc = std_of(cs, mc);
                let si = std_of(ibss, mi);
                println!("{name:<10} {mc:>10.4} ± {sc:<5.4} {mi:>10.4} ± {si:<5.4}");
            }
            let dir = out.resolve()?;
            let path = dir.join("compare.json");
            write_json(&path, &results)?;
            println!(
                "{:#}",
                serde_json::json!({
                    "compare_file": path,
                    "runtime_sec": started.elapsed().as_secs_f64(),
                })
            );
            Ok(())
        }
    }
}

fn std_of(values: &[f64], mean: f64) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (values.len() as f64 - 1.0))
        .sqrt()
}
