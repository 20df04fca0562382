use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use renet::train::{
    best_path, evaluate, gradcheck, load_model, plan, prepare_data, read_metrics, render_svg, tiny_config, tiny_problem,
    train_loop, TrainOptions, GRADCHECK_EPS, GRADCHECK_TOLERANCE,
};
use renet::{CellKind, DType, ModelConfig, Scalar, Split};

#[derive(Parser)]
#[command(name = "renet", version, about = "Train and verify ReNet image classifiers")]
struct Cli {
    /// Worker threads (defaults to all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Element type
    #[arg(long, global = true, default_value = "f32")]
    dtype: DType,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model, keeping the best-on-validation checkpoint
    Train(TrainArgs),
    /// Evaluate a checkpoint on one split
    Eval(EvalArgs),
    /// Compare analytic and finite-difference gradients on a tiny model
    Gradcheck(GradcheckArgs),
    /// Render a metrics log as SVG
    Plot(PlotArgs),
    /// Print the layer shape chain and parameter counts of a config
    DryRun(DryRunArgs),
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Overrides the config seed
    #[arg(long)]
    seed: Option<u64>,
    /// Latest state is written here and the best state to `<path>.best`
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Continue from `--checkpoint`
    #[arg(long)]
    resume: bool,
    /// JSON-lines metrics log
    #[arg(long, default_value = "metrics.jsonl")]
    metrics: PathBuf,
    /// Overrides the config epoch budget
    #[arg(long)]
    max_epochs: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    split: Split,
}

#[derive(Args)]
struct GradcheckArgs {
    /// tanh, gru, lstm or all
    #[arg(long, default_value = "all")]
    cell: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 2)]
    samples: usize,
    #[arg(long, default_value_t = GRADCHECK_TOLERANCE)]
    tolerance: f64,
}

#[derive(Args)]
struct PlotArgs {
    #[arg(long, default_value = "metrics.jsonl")]
    metrics: PathBuf,
    #[arg(long, default_value = "metrics.svg")]
    out: PathBuf,
}

#[derive(Args)]
struct DryRunArgs {
    #[arg(long)]
    config: PathBuf,
}

fn main() -> Result<ExitCode> {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    match (cli.command, cli.dtype) {
        (Command::Train(a), DType::F32) => train::<f32>(a),
        (Command::Train(a), DType::F64) => train::<f64>(a),
        (Command::Eval(a), DType::F32) => eval::<f32>(a),
        (Command::Eval(a), DType::F64) => eval::<f64>(a),
        (Command::Gradcheck(a), _) => run_gradcheck(a),
        (Command::Plot(a), _) => run_plot(a),
        (Command::DryRun(a), _) => dry_run(a),
    }
}

fn load_config(path: &Path) -> Result<ModelConfig> {
    ModelConfig::from_file(path).with_context(|| format!("reading config {}", path.display()))
}

fn train<T: Scalar>(a: TrainArgs) -> Result<ExitCode> {
    let mut cfg = load_config(&a.config)?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(e) = a.max_epochs {
        cfg.max_epochs = e;
    }
    let (data, prep) = prepare_data::<T>(&cfg, a.data_dir.as_deref())?;
    if let Some(w) = prep.stats.as_ref().and_then(|s| s.warning()) {
        eprintln!("warning: {w}");
    }
    println!(
        "{}: {} train / {} valid / {} test samples",
        cfg.dataset,
        data.train.len(),
        data.valid.len(),
        data.test.len()
    );
    if !a.resume && a.metrics.exists() {
        std::fs::remove_file(&a.metrics).with_context(|| format!("clearing {}", a.metrics.display()))?;
    }
    let opts = TrainOptions {
        checkpoint: a.checkpoint.clone(),
        metrics: Some(a.metrics.clone()),
        resume: a.resume,
    };
    let out = train_loop(&cfg, &data, &opts, |r| {
        println!(
            "epoch {:>4}  train_nll {:.5}  train_error {:.4}  valid_error {:.4}  valid_nll {:.5}  ({:.1}s)",
            r.epoch, r.train_nll, r.train_error, r.valid_error, r.valid_nll, r.wall_time_s
        );
    })?;
    let test = evaluate(&out.best_model, &data.test)?;
    println!(
        "best epoch {} valid_error {:.4}; test_error {:.4} test_nll {:.5}",
        out.best_epoch, out.best_valid_error, test.error, test.nll
    );
    if let Some(p) = &a.checkpoint {
        println!("checkpoints: {} (latest), {} (best)", p.display(), best_path(p).display());
    }
    Ok(ExitCode::SUCCESS)
}

fn eval<T: Scalar>(a: EvalArgs) -> Result<ExitCode> {
    let model = load_model::<T>(&a.checkpoint).with_context(|| format!("loading {}", a.checkpoint.display()))?;
    let (data, _) = prepare_data::<T>(&model.config, a.data_dir.as_deref())?;
    let split = data.split(a.split);
    let r = evaluate(&model, split)?;
    println!(
        "{} {}: error {:.4} nll {:.5} over {} samples",
        model.config.dataset,
        a.split.name(),
        r.error,
        r.nll,
        split.len()
    );
    Ok(ExitCode::SUCCESS)
}

fn run_gradcheck(a: GradcheckArgs) -> Result<ExitCode> {
    let kinds: Vec<CellKind> = match a.cell.as_str() {
        "all" => CellKind::ALL.to_vec(),
        s => vec![s.parse()?],
    };
    let mut ok = true;
    for kind in kinds {
        let cfg = tiny_config(kind);
        let (model, samples) = tiny_problem(&cfg, a.seed, a.samples)?;
        let r = gradcheck(&model, &samples, GRADCHECK_EPS)?;
        let pass = r.passed(a.tolerance);
        ok &= pass;
        println!(
            "{:<5} {} parameters  max relative error {:.3e}  max absolute error {:.1e}  {}",
            kind.name(),
            r.checked,
            r.max_rel_error,
            r.max_abs_error,
            if pass { "ok" } else { "FAILED" }
        );
        if !pass {
            for e in r.worst.iter().take(5) {
                println!(
                    "    {}[{}]: analytic {:.6e} numeric {:.6e} rel {:.3e}",
                    e.name, e.index, e.analytic, e.numeric, e.rel_error
                );
            }
        }
    }
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn run_plot(a: PlotArgs) -> Result<ExitCode> {
    let records = read_metrics(&a.metrics)?;
    if records.is_empty() {
        bail!("{} holds no epoch records", a.metrics.display());
    }
    std::fs::write(&a.out, render_svg(&records)).with_context(|| format!("writing {}", a.out.display()))?;
    println!("wrote {} ({} epochs)", a.out.display(), records.len());
    Ok(ExitCode::SUCCESS)
}

fn dims(shape: &[usize]) -> String {
    shape.iter().map(|s| s.to_string()).collect::<Vec<_>>().join("x")
}

fn dry_run(a: DryRunArgs) -> Result<ExitCode> {
    let cfg = load_config(&a.config)?;
    let stages = plan(&cfg)?;
    for s in &stages {
        println!("{:<8} {:>12} -> {:<12} params {}", s.name, dims(&s.input), dims(&s.output), s.params);
    }
    let mut chain = vec![dims(&stages[0].input)];
    chain.extend(stages.iter().take(cfg.renet.len()).map(|s| dims(&s.output)));
    println!("chain {}", chain.join(" -> "));
    println!("total params {}", stages.iter().map(|s| s.params).sum::<usize>());
    Ok(ExitCode::SUCCESS)
}
