use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use emgkin::config::{Preset, TrainingConfig};
use emgkin::dsp::{MatrixMode, Protocol};
use emgkin::eval::{
    compare_matrix_modes, evaluate_model, sweep_timesteps, EvalData, EvaluationReport, SplitMode,
    SWEEP_TIME_STEPS,
};
use emgkin::io::{self, SummaryRow};
use emgkin::synth::{generate, generate_session_pair, SynthConfig};
use emgkin::train::train_hybrid;

const THREADS_VAR: &str = "EMGKIN_THREADS";

#[derive(Parser)]
#[command(name = "emgkin", version, about = "sEMG to wrist-angle regression with a CNN-LSTM")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthetic session generator.
    Synth {
        #[command(subcommand)]
        command: SynthCommand,
    },
    /// Train the two-stage model and write a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on held-out data.
    Eval(EvalArgs),
    /// Train and evaluate a family of variants.
    Sweep(SweepArgs),
}

#[derive(Subcommand)]
enum SynthCommand {
    /// Write one synthetic session (or a pair) as CSV files.
    Gen(GenArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    protocol: Protocol,
    /// Session length in seconds.
    #[arg(long, default_value_t = 60.0)]
    duration: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Write two sessions with shifted electrode gains, in `session-a` and `session-b`.
    #[arg(long)]
    pair: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Split {
    Intra,
    Inter,
}

impl From<Split> for SplitMode {
    fn from(s: Split) -> Self {
        match s {
            Split::Intra => SplitMode::Intra,
            Split::Inter => SplitMode::Inter,
        }
    }
}

/// Command-line overrides; each mirrors a config-file key.
#[derive(Args, Default)]
struct Overrides {
    /// Base preset; config-file keys and other flags override it.
    #[arg(long)]
    preset: Option<Preset>,
    #[arg(long)]
    protocol: Option<Protocol>,
    #[arg(long)]
    matrix_mode: Option<MatrixMode>,
    #[arg(long)]
    window_ms: Option<f64>,
    #[arg(long)]
    hop_ms: Option<f64>,
    /// LSTM time steps per sequence.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    cnn_epochs: Option<usize>,
    #[arg(long)]
    cnn_batch: Option<usize>,
    #[arg(long)]
    cnn_lr0: Option<f64>,
    #[arg(long)]
    lstm_epochs: Option<usize>,
    #[arg(long)]
    lstm_batch: Option<usize>,
    #[arg(long)]
    lstm_lr0: Option<f64>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    leaky_slope: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

impl ConfigArgs {
    fn resolve(&self) -> emgkin::Result<TrainingConfig> {
        let o = &self.overrides;
        let mut c = match &self.config {
            Some(path) => TrainingConfig::load_with_preset(path, o.preset)?,
            None => TrainingConfig::from_toml_with_preset("", o.preset)?,
        };
        c.protocol = o.protocol.or(c.protocol);
        c.matrix_mode = o.matrix_mode.unwrap_or(c.matrix_mode);
        c.window_ms = o.window_ms.unwrap_or(c.window_ms);
        c.hop_ms = o.hop_ms.unwrap_or(c.hop_ms);
        c.k = o.k.unwrap_or(c.k);
        c.cnn.epochs = o.cnn_epochs.unwrap_or(c.cnn.epochs);
        c.cnn.batch = o.cnn_batch.unwrap_or(c.cnn.batch);
        c.cnn.lr0 = o.cnn_lr0.unwrap_or(c.cnn.lr0);
        c.lstm.epochs = o.lstm_epochs.unwrap_or(c.lstm.epochs);
        c.lstm.batch = o.lstm_batch.unwrap_or(c.lstm.batch);
        c.lstm.lr0 = o.lstm_lr0.unwrap_or(c.lstm.lr0);
        c.dropout = o.dropout.unwrap_or(c.dropout);
        c.leaky_slope = o.leaky_slope.unwrap_or(c.leaky_slope);
        c.seed = o.seed.unwrap_or(c.seed);
        c.validate()?;
        Ok(c)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// A session directory, or a directory of session directories.
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint path; the loss history goes next to it as `<stem>.loss.csv`.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = Split::Intra)]
    split: Split,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value_t = Split::Intra)]
    split: Split,
    /// Report JSON path; trajectories go next to it as `<stem>.<model>.trajectory.csv`.
    #[arg(long)]
    report: PathBuf,
    /// Also score the CNN-only head and a kernel ridge regression baseline.
    #[arg(long)]
    baselines: bool,
    /// Write 2-D projections of learned and handcrafted test features to this CSV.
    #[arg(long)]
    scatter: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepKind {
    Timesteps,
    Matrixmode,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, value_enum)]
    what: SweepKind,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = Split::Intra)]
    split: Split,
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    path.with_file_name(format!("{stem}.{suffix}"))
}

fn load_data(dir: &Path, split: Split) -> emgkin::Result<EvalData> {
    EvalData::from_sessions(split.into(), io::load_sessions(dir)?)
}

fn synth_gen(args: &GenArgs) -> Result<()> {
    let config = SynthConfig::new(args.protocol, args.duration, args.seed);
    config.validate()?;
    eprintln!(
        "synth: protocol={} duration_s={} seed={} pair={} out={}",
        args.protocol,
        args.duration,
        args.seed,
        args.pair,
        args.out.display()
    );
    if args.pair {
        let (a, b) = generate_session_pair(&config)?;
        io::save_session(&args.out.join("session-a"), &a)?;
        io::save_session(&args.out.join("session-b"), &b)?;
    } else {
        io::save_session(&args.out, &generate(&config)?)?;
    }
    Ok(())
}

fn train(args: &TrainArgs) -> Result<()> {
    let config = args.config.resolve()?;
    eprintln!("config: {config}");
    let data = load_data(&args.data, args.split)?;
    let dsp = config.dsp(data_fs(&data))?;
    let recording = data.training_recording(dsp.samples_for_windows(config.k))?;
    eprintln!(
        "train: data={} split={} session={} samples={}",
        args.data.display(),
        SplitMode::from(args.split),
        recording.session_id(),
        recording.emg_len()
    );
    let start = Instant::now();
    let trained = train_hybrid(&config, &recording)?;
    io::save_model(&args.out, &trained.model)?;
    let loss_path = sibling(&args.out, "loss.csv");
    io::write_loss_history(&loss_path, &trained.history)?;
    eprintln!(
        "wrote {} and {} ({:.1} s)",
        args.out.display(),
        loss_path.display(),
        start.elapsed().as_secs_f64()
    );
    Ok(())
}

fn data_fs(data: &EvalData) -> f64 {
    match data {
        EvalData::Intra(r) => r.emg_fs(),
        EvalData::Inter { train, .. } => train.emg_fs(),
    }
}

fn print_scores(reports: &[EvaluationReport]) {
    for r in reports {
        let scores: Vec<String> = r.dof.iter().map(|d| format!("{}={:.4}", d.name, d.r2)).collect();
        println!("{:<9} k={:<3} {}", r.model, r.k, scores.join(" "));
    }
}

fn eval(args: &EvalArgs) -> Result<()> {
    if !args.model.is_file() {
        return Err(emgkin::Error::Usage(format!("no checkpoint at {}", args.model.display())).into());
    }
    let model = io::load_model(&args.model)?;
    eprintln!(
        "eval: model={} protocol={} k={} matrix_mode={} window={} hop={} split={} baselines={}",
        args.model.display(),
        model.protocol,
        model.k,
        model.dsp.mode,
        model.dsp.window_samples,
        model.dsp.hop_samples,
        SplitMode::from(args.split),
        args.baselines
    );
    let data = load_data(&args.data, args.split)?;
    let (train, test, split) = data.resolve(model.dsp.samples_for_windows(model.k))?;
    let reports = evaluate_model(&model, &train, &test, &split, args.baselines, 0.0)?;
    io::write_reports(&args.report, &reports)?;
    for r in &reports {
        let path = sibling(&args.report, &format!("{}.trajectory.csv", r.model));
        io::write_trajectory_csv(&path, &r.trajectory)?;
    }
    if let Some(path) = &args.scatter {
        io::write_scatter_csv(path, &io::feature_scatter(&model, &test)?)?;
    }
    print_scores(&reports);
    Ok(())
}

fn sweep(args: &SweepArgs) -> Result<()> {
    let config = args.config.resolve()?;
    eprintln!("config: {config}");
    let data = load_data(&args.data, args.split)?;
    let (reports, variants): (Vec<EvaluationReport>, Vec<String>) = match args.what {
        SweepKind::Timesteps => {
            eprintln!("sweep: k in {SWEEP_TIME_STEPS:?}");
            let reports = sweep_timesteps(&config, &data, &SWEEP_TIME_STEPS)?;
            let names = SWEEP_TIME_STEPS.iter().map(|k| format!("k{k}")).collect();
            (reports, names)
        }
        SweepKind::Matrixmode => {
            eprintln!("sweep: matrix_mode in [spectral, temporal]");
            let reports = compare_matrix_modes(&config, &data)?;
            let names = reports.iter().map(|r| r.matrix_mode.to_string()).collect();
            (reports, names)
        }
    };
    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    let mut rows = Vec::new();
    for (report, variant) in reports.iter().zip(&variants) {
        io::write_atomic(
            &args.out.join(format!("{variant}.json")),
            report.to_json()?.as_bytes(),
        )?;
        io::write_trajectory_csv(
            &args.out.join(format!("{variant}.trajectory.csv")),
            &report.trajectory,
        )?;
        rows.push(SummaryRow::from_report(variant, report));
    }
    io::write_summary_csv(&args.out.join("summary.csv"), &rows)?;
    print_scores(&reports);
    Ok(())
}

fn thread_count() -> emgkin::Result<usize> {
    match std::env::var(THREADS_VAR) {
        Err(_) => Ok(1),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(emgkin::Error::Usage(format!(
                "{THREADS_VAR} must be a positive integer, got `{v}`"
            ))),
        },
    }
}

fn run(cli: &Cli) -> Result<()> {
    let threads = thread_count()?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .context("configuring the worker pool")?;
    match &cli.command {
        Command::Synth {
            command: SynthCommand::Gen(args),
        } => synth_gen(args),
        Command::Train(args) => train(args),
        Command::Eval(args) => eval(args),
        Command::Sweep(args) => sweep(args),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<emgkin::Error>() {
        Some(e) if e.is_usage() => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
