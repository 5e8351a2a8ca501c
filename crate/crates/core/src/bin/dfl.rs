use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use dfl_core::criteo::{self, Schema};
use dfl_core::dfm;
use dfl_core::eventlog;
use dfl_core::fsiw;
use dfl_core::harness::{self, CriteoConfig, LambdaStrategy, SweepConfig};
use dfl_core::model;
use dfl_core::optim::{self, BatchSize, Method, NnMode, TrainConfig, TrainData};
use dfl_core::synthetic;
use dfl_core::{DflError, Result, Snapshot, SnapshotConfig};

#[derive(Parser)]
#[command(name = "dfl", about = "Conversion-rate models under delayed feedback", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Plain,
    Ascent,
}

impl From<Mode> for NnMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Plain => NnMode::Plain,
            Mode::Ascent => NnMode::Ascent,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic log: train.tsv, test.tsv and params.txt.
    SynthGen {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        eta: f64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = synthetic::DEFAULT_SAMPLES_PER_DAY)]
        samples_per_day: usize,
        /// Hours per unit of the delay scale.
        #[arg(long, default_value_t = 1.0)]
        delay_unit: f64,
    },
    /// Fit one method on DIR/train.tsv.
    Train {
        #[arg(long)]
        method: Method,
        #[arg(long, default_value_t = synthetic::DEFAULT_TAU)]
        tau: f64,
        /// A fixed L2 strength, or `auto` for cross-validation.
        #[arg(long, default_value = "auto", allow_hyphen_values = true)]
        lambda: String,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model_out: PathBuf,
        /// Snapshot time in hours; read from DIR/params.txt when omitted.
        #[arg(long)]
        snapshot: Option<f64>,
        #[arg(long, default_value_t = 2000)]
        epochs: usize,
        #[arg(long, default_value_t = 0.5)]
        lr: f64,
        /// Mini-batch rows; full batch when omitted.
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long, value_enum, default_value_t = Mode::Plain)]
        nn_mode: Mode,
        #[arg(long, default_value_t = 20)]
        draws: usize,
        #[arg(long, default_value_t = 2)]
        folds: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Score a model file on an event log with true labels.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
    /// Synthetic drift sweep; one CSV row per (method, eta, trial).
    Sweep {
        #[arg(long, default_value = "0,0.25,0.5,1,2,4")]
        etas: String,
        #[arg(long, default_value_t = 20)]
        trials: usize,
        #[arg(long, default_value = "oracle,bl,tw,putw,pnutw,fsiw,dfm,convdf,nndf")]
        methods: String,
        #[arg(long, default_value_t = synthetic::DEFAULT_TAU)]
        tau: f64,
        #[arg(long)]
        out: PathBuf,
        /// Per-(eta, method) aggregates; printed to stdout when omitted.
        #[arg(long)]
        summary: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// `auto` (search in every cell), `calibrated` (search once per eta
        /// and method on an extra draw) or a fixed value.
        #[arg(long, default_value = "auto", allow_hyphen_values = true)]
        lambda: String,
        #[arg(long, default_value_t = 20)]
        draws: usize,
        #[arg(long, default_value_t = 2)]
        folds: usize,
        #[arg(long, default_value_t = 2000)]
        epochs: usize,
        #[arg(long, default_value_t = synthetic::DEFAULT_SAMPLES_PER_DAY)]
        samples_per_day: usize,
        #[arg(long, default_value_t = 1.0)]
        delay_unit: f64,
        /// Run cells on the rayon pool.
        #[arg(long)]
        parallel: bool,
    },
    /// Hash a raw Criteo log into DIR/events.tsv plus DIR/stats.txt.
    CriteoPrep {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        integer_fields: usize,
        #[arg(long, default_value_t = 9)]
        categorical_fields: usize,
    },
    /// Train on the 21 days before each test day and score the day.
    CriteoRun {
        #[arg(long)]
        test_day: i64,
        /// Consecutive test days starting at --test-day; adds an average row.
        #[arg(long, default_value_t = 1)]
        days: i64,
        #[arg(long, default_value = "bl,tw,putw,pnutw,fsiw,dfm,nndf")]
        methods: String,
        #[arg(long)]
        out: PathBuf,
        /// Directory written by criteo-prep.
        #[arg(long, default_value = "criteo")]
        data: PathBuf,
        #[arg(long, default_value_t = criteo::DEFAULT_TAU)]
        tau: f64,
        #[arg(long, default_value_t = 5)]
        epochs: usize,
        #[arg(long, default_value_t = 0.05)]
        lr: f64,
        #[arg(long, default_value_t = 1024)]
        batch_size: usize,
        #[arg(long)]
        max_train_rows: Option<usize>,
    },
}

fn parse_lambda(s: &str) -> Result<Option<f64>> {
    if s.eq_ignore_ascii_case("auto") {
        return Ok(None);
    }
    let v: f64 = s
        .parse()
        .map_err(|_| DflError::Config(format!("lambda must be a number or `auto`, got {s:?}")))?;
    if !(v >= 0.0 && v.is_finite()) {
        return Err(DflError::Config(format!("lambda {v} must be >= 0")));
    }
    Ok(Some(v))
}

fn parse_floats(list: &str) -> Result<Vec<f64>> {
    list.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| DflError::Config(format!("bad number {s:?}")))
        })
        .collect()
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn synth_gen(seed: u64, eta: f64, out: &Path, samples_per_day: usize, delay_unit: f64) -> Result<()> {
    let mut params = synthetic::generate_params(seed, eta)?;
    params.samples_per_day = samples_per_day;
    params.delay_sigma_unit = delay_unit;
    // a separate stream so the log's draws do not replay the parameter draws
    let log_seed = harness::cell_seed(seed, 0, 0, 1);
    let log = synthetic::generate_log(&params, log_seed)?;
    fs::create_dir_all(out)?;
    eventlog::write_events_file(&out.join("train.tsv"), synthetic::DIMENSION, &log.train)?;
    eventlog::write_events_file(&out.join("test.tsv"), synthetic::DIMENSION, &log.test)?;
    synthetic::write_params(create(&out.join("params.txt"))?, log_seed, &params)?;
    println!(
        "wrote {} train and {} test events to {} (snapshot at {} h)",
        log.train.len(),
        log.test.len(),
        out.display(),
        params.snapshot_time()
    );
    Ok(())
}

struct TrainArgs {
    method: Method,
    tau: f64,
    lambda: Option<f64>,
    data: PathBuf,
    model_out: PathBuf,
    snapshot: Option<f64>,
    cfg: TrainConfig,
    draws: usize,
    folds: usize,
}

fn train(a: TrainArgs) -> Result<()> {
    let (_, events) = eventlog::read_events_file(&a.data.join("train.tsv"))?;
    let snapshot_time = match a.snapshot {
        Some(t) => t,
        None => {
            let path = a.data.join("params.txt");
            if !path.exists() {
                return Err(DflError::Config(format!(
                    "no --snapshot given and {} does not exist",
                    path.display()
                )));
            }
            synthetic::read_params(BufReader::new(File::open(path)?))?.1.snapshot_time()
        }
    };
    let snap = Snapshot::build(&events, SnapshotConfig::new(snapshot_time, a.tau)?)?;
    let weights = if a.method == Method::Fsiw {
        let scale = snapshot_time - a.tau;
        let w = fsiw::fit_weight_models(&snap.oracle, scale, &a.cfg.with_lambda(harness::FSIW_AUX_LAMBDA))?;
        Some(fsiw::weights_for(&snap.biased, &w)?)
    } else {
        None
    };
    let base = TrainData::from_snapshot(&snap);
    let data = match &weights {
        Some(w) => base.with_weights(w),
        None => base,
    };
    let lambda = match a.lambda {
        Some(l) => l,
        None => {
            let c = optim::log_uniform_candidates(a.draws, harness::LAMBDA_RANGE.0, harness::LAMBDA_RANGE.1, a.cfg.seed);
            optim::select_lambda(a.method, &data, &c, a.folds, &a.cfg)?.lambda
        }
    };
    let cfg = a.cfg.with_lambda(lambda);
    let out = create(&a.model_out)?;
    let (epochs, converged) = if a.method == Method::Dfm {
        let fit = dfm::train_dfm(&snap.biased, &cfg)?;
        model::write_model_sections(out, "dfm", &[("cvr", &fit.model.cvr), ("hazard", &fit.model.hazard)])?;
        (fit.epochs, fit.converged)
    } else {
        let fit = optim::train(a.method, &data, &cfg)?;
        model::write_model(out, a.method.name(), &fit.model)?;
        (fit.epochs, fit.converged)
    };
    println!(
        "method={} lambda={lambda} epochs={epochs} converged={converged} rows={} oracle_rows={}",
        a.method,
        snap.biased.len(),
        snap.oracle.len()
    );
    Ok(())
}

fn eval(model_path: &Path, test: &Path) -> Result<()> {
    let file = model::read_model(BufReader::new(File::open(model_path)?))?;
    let method: Method = file.method.parse()?;
    let m = file
        .scoring_model()
        .ok_or_else(|| DflError::Config("model file has no weights".into()))?;
    let (_, events) = eventlog::read_events_file(test)?;
    let r = harness::evaluate(method, m, &events)?;
    let na = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_else(|| "NA".into());
    println!("method,n,nll,acc,auc_pr");
    println!("{},{},{},{},{}", method, events.len(), r.nll, r.acc, na(r.auc_pr));
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::SynthGen {
            seed,
            eta,
            out,
            samples_per_day,
            delay_unit,
        } => synth_gen(seed, eta, &out, samples_per_day, delay_unit),
        Command::Train {
            method,
            tau,
            lambda,
            data,
            model_out,
            snapshot,
            epochs,
            lr,
            batch_size,
            nn_mode,
            draws,
            folds,
            seed,
        } => train(TrainArgs {
            method,
            tau,
            lambda: parse_lambda(&lambda)?,
            data,
            model_out,
            snapshot,
            cfg: TrainConfig {
                learning_rate: lr,
                max_epochs: epochs,
                batch_size: batch_size.map_or(BatchSize::Full, BatchSize::Rows),
                nn_mode: nn_mode.into(),
                seed,
                ..TrainConfig::default()
            },
            draws,
            folds,
        }),
        Command::Eval { model, test, format } => match format {
            Format::Csv => eval(&model, &test),
        },
        Command::Sweep {
            etas,
            trials,
            methods,
            tau,
            out,
            summary,
            seed,
            lambda,
            draws,
            folds,
            epochs,
            samples_per_day,
            delay_unit,
            parallel,
        } => {
            let strategy = match lambda.as_str() {
                "calibrated" => LambdaStrategy::Calibrated { draws, folds },
                other => match parse_lambda(other)? {
                    None => LambdaStrategy::PerCell { draws, folds },
                    Some(l) => LambdaStrategy::Fixed(l),
                },
            };
            let cfg = SweepConfig {
                base_seed: seed,
                train: TrainConfig {
                    max_epochs: epochs,
                    ..TrainConfig::default()
                },
                lambda: strategy,
                samples_per_day,
                delay_sigma_unit: delay_unit,
                parallel,
            };
            let methods = optim::parse_methods(&methods)?;
            let result = harness::run_synthetic_sweep(&parse_floats(&etas)?, trials, &methods, tau, &cfg)?;
            let mut f = create(&out)?;
            f.write_all(result.to_csv().as_bytes())?;
            f.flush()?;
            match summary {
                Some(path) => {
                    let mut f = create(&path)?;
                    f.write_all(result.summary_csv().as_bytes())?;
                    f.flush()?;
                }
                None => print!("{}", result.summary_csv()),
            }
            Ok(())
        }
        Command::CriteoPrep {
            input,
            out,
            integer_fields,
            categorical_fields,
        } => {
            let schema = Schema {
                integer_fields,
                categorical_fields,
            };
            fs::create_dir_all(&out)?;
            let reader = BufReader::new(File::open(&input)?);
            let stats = criteo::prepare(reader, create(&out.join("events.tsv"))?, &schema)?;
            fs::write(out.join("stats.txt"), stats.to_text())?;
            print!("{}", stats.to_text());
            Ok(())
        }
        Command::CriteoRun {
            test_day,
            days,
            methods,
            out,
            data,
            tau,
            epochs,
            lr,
            batch_size,
            max_train_rows,
        } => {
            if days < 1 {
                return Err(DflError::Config("--days must be >= 1".into()));
            }
            let methods = optim::parse_methods(&methods)?;
            let cfg = CriteoConfig {
                train: TrainConfig {
                    learning_rate: lr,
                    max_epochs: epochs,
                    batch_size: BatchSize::Rows(batch_size),
                    ..TrainConfig::default()
                },
                max_train_rows,
                ..CriteoConfig::default()
            };
            let (_, events) = eventlog::read_events_file(&data.join("events.tsv"))?;
            let mut rows = Vec::new();
            for day in test_day..test_day + days {
                rows.extend(harness::run_criteo_experiment(&events, day, &methods, tau, &cfg)?);
            }
            if days > 1 {
                let avg = harness::average_rows(&rows);
                rows.extend(avg);
            }
            let csv = harness::criteo_csv(&rows, tau);
            let mut f = create(&out)?;
            f.write_all(csv.as_bytes())?;
            f.flush()?;
            print!("{csv}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                DflError::Config(_) | DflError::InvalidSnapshot { .. } => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
