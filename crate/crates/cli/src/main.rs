use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nbode::dataset::{sample_on_attractor, Split};
use nbode::eval::{lyapunov_mae, LyapunovComparison};
use nbode::integrate::{lyapunov_spectra, mean_spectrum, StepControl};
use nbode::io;
use nbode::pipeline::{
    build_cover_cache, generate_data, load_run, load_split, run_eval, run_sweep, run_training,
    ExperimentConfig,
};
use nbode::systems::{SystemField, SystemName};
use nbode::train::Method;
use nbode::{Error, Result};

/// Neighborhood-regularized surrogate models of chaotic systems.
#[derive(Parser)]
#[command(name = "nbode", version)]
struct Cli {
    /// Cap on worker threads.
    #[arg(long, global = true, env = "NBODE_THREADS")]
    threads: Option<usize>,
    /// Log progress (repeat for debug output).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate train/val/test splits.
    Generate(GenerateArgs),
    /// Calibrate radii and cache the annulus cover of the train split.
    Neighbors(NeighborsArgs),
    /// Train a model into runs/<name>.
    Train(TrainArgs),
    /// Evaluate a trained run on the clean test and validation splits.
    Eval(EvalArgs),
    /// Lyapunov spectra of the ground truth and optionally a trained model.
    Lyapunov(LyapunovArgs),
    /// Grid search over neighbor count and regularization weight.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    system: Option<String>,
    /// State dimension (Lorenz96 only).
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    n_traj: Option<usize>,
    #[arg(long)]
    n_points: Option<usize>,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct NeighborsArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Rollout horizon the cover must support.
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    target_frac: Option<f64>,
    #[arg(long)]
    multiplier: Option<f64>,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct TrainOverrides {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    name: Option<String>,
    #[arg(long)]
    runs_dir: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    /// vanilla or neighborhood.
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    val_every: Option<usize>,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    o: TrainOverrides,
}

#[derive(Args)]
struct EvalArgs {
    /// Run directory produced by `train`.
    #[arg(long)]
    run: PathBuf,
    /// Evaluation settings replacing the run's own (JSON, same fields as
    /// the `eval` section of a config).
    #[arg(long)]
    eval_config: Option<PathBuf>,
}

#[derive(Args)]
struct LyapunovArgs {
    /// Data directory; initial conditions come from its clean test split.
    #[arg(long, conflicts_with = "system")]
    data: Option<PathBuf>,
    /// Ground truth in raw coordinates, from on-attractor samples.
    #[arg(long)]
    system: Option<String>,
    /// Also compute the spectrum of this run's model (on its data).
    #[arg(long)]
    run: Option<PathBuf>,
    #[arg(long, default_value_t = 1000.0)]
    horizon: f64,
    #[arg(long, default_value_t = 1.0)]
    reorth: f64,
    #[arg(long, default_value_t = 5)]
    ics: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    o: TrainOverrides,
    /// Comma-separated neighbor counts.
    #[arg(long, value_delimiter = ',')]
    ks: Option<Vec<usize>>,
    /// Comma-separated regularization weights.
    #[arg(long, value_delimiter = ',')]
    lambdas: Option<Vec<f64>>,
}

fn base_config(path: &Option<PathBuf>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(ExperimentConfig::default()),
    }
}

fn apply_overrides(o: &TrainOverrides) -> Result<ExperimentConfig> {
    let mut cfg = base_config(&o.config)?;
    if let Some(v) = &o.name {
        cfg.name = v.clone();
    }
    if let Some(v) = &o.runs_dir {
        cfg.runs_dir = v.clone();
    }
    if let Some(v) = &o.data {
        cfg.data.dir = v.clone();
    }
    if let Some(v) = &o.method {
        cfg.train.method = v.parse::<Method>()?;
    }
    let t = &mut cfg.train;
    if let Some(v) = o.lambda {
        t.lambda = v;
    }
    if let Some(v) = o.k {
        t.k = v;
    }
    if let Some(v) = o.steps {
        t.steps = v;
    }
    if let Some(v) = o.batch_size {
        t.batch_size = v;
    }
    if let Some(v) = o.lr {
        t.lr = v;
    }
    if let Some(v) = o.seed {
        t.seed = v;
    }
    if let Some(v) = o.val_every {
        t.val_every = v;
    }
    if t.method == Method::Vanilla {
        t.lambda = 0.0;
    }
    Ok(cfg)
}

fn cmd_generate(a: &GenerateArgs) -> Result<()> {
    let mut cfg = base_config(&a.config)?.data;
    if let Some(s) = &a.system {
        cfg.system = s.parse::<SystemName>()?;
    }
    if let Some(v) = a.dim {
        cfg.dim = v;
    }
    if let Some(v) = a.noise {
        cfg.noise_std = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = &a.out {
        cfg.dir = v.clone();
    }
    if let Some(v) = a.n_traj {
        cfg.generation.n_traj = v;
    }
    if let Some(v) = a.n_points {
        cfg.generation.n_points = v;
    }
    let splits = generate_data(&cfg, a.force)?;
    println!(
        "{}: tau = {:.6}, dt = {:.6e}, {} x {} points per split, written to {}",
        cfg.system.as_str(),
        splits.train.tau,
        splits.train.dt,
        splits.train.n,
        splits.train.m,
        cfg.dir.display()
    );
    Ok(())
}

fn cmd_neighbors(a: &NeighborsArgs) -> Result<()> {
    let base = base_config(&a.config)?;
    let data = a.data.clone().unwrap_or(base.data.dir.clone());
    let mut cal = base.cover;
    if let Some(v) = a.target_frac {
        cal.target_frac = v;
    }
    if let Some(v) = a.multiplier {
        cal.multiplier = v;
    }
    let horizon = a.horizon.unwrap_or(base.train.horizon);
    let cover = build_cover_cache(&data, &cal, horizon, a.force)?;
    let stats = cover.stats();
    println!("r_min = {:.6}, r_max = {:.6}", cover.r_min, cover.r_max);
    println!("{}", serde_json::to_string_pretty(&stats).expect("stats serialize"));
    Ok(())
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let cfg = apply_overrides(&a.o)?;
    let out = run_training(&cfg, a.o.force)?;
    println!(
        "best validation loss {:.6e} at step {} (initial {:.6e}); {} skipped steps; run written to {}",
        out.best_val,
        out.best_step,
        out.initial_val,
        out.skipped_steps,
        cfg.run_dir().display()
    );
    Ok(())
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let overrides = match &a.eval_config {
        Some(p) => Some(io::read_json(p)?),
        None => None,
    };
    let ev = run_eval(&a.run, overrides.as_ref())?;
    println!("{}", serde_json::to_string_pretty(&ev.report).expect("report serialize"));
    Ok(())
}

fn cmd_lyapunov(a: &LyapunovArgs) -> Result<()> {
    let ctrl = StepControl::generation();
    let run = match &a.run {
        Some(r) => Some(load_run(r)?),
        None => None,
    };
    let data = a.data.clone().or_else(|| run.as_ref().map(|(c, _)| c.data.dir.clone()));
    let cmp = if let Some(dir) = data {
        let test = load_split(&dir, Split::Test)?;
        let clean = test.clean_states()?;
        let ics: Vec<Vec<f64>> = (0..test.n.min(a.ics))
            .map(|i| clean[i * test.m * test.d..(i * test.m + 1) * test.d].to_vec())
            .collect();
        let truth = test.ground_truth()?;
        match &run {
            Some((_, model)) => lyapunov_mae(model, &truth, &ics, a.horizon, a.reorth, ctrl)?,
            None => truth_only(&truth, &ics, a.horizon, a.reorth, ctrl)?,
        }
    } else if let Some(name) = &a.system {
        let spec = nbode::systems::SystemSpec::by_name(name.parse::<SystemName>()?);
        let ics = sample_on_attractor(&spec, a.ics, a.seed)?;
        truth_only(&SystemField::raw(spec), &ics, a.horizon, a.reorth, ctrl)?
    } else {
        return Err(Error::Argument("pass --data, --system or --run".into()));
    };
    let text = serde_json::to_string_pretty(&cmp).expect("spectra serialize");
    println!("{text}");
    if let Some(r) = &a.run {
        io::write_json(&r.join("lyapunov.json"), &cmp)?;
    }
    Ok(())
}

fn truth_only(
    truth: &SystemField,
    ics: &[Vec<f64>],
    horizon: f64,
    reorth: f64,
    ctrl: StepControl,
) -> Result<LyapunovComparison> {
    let spec = mean_spectrum(&lyapunov_spectra(truth, ics, horizon, reorth, ctrl)?);
    Ok(LyapunovComparison {
        model: Vec::new(),
        truth: spec,
        mae: f64::NAN,
    })
}

fn cmd_sweep(a: &SweepArgs) -> Result<()> {
    let mut cfg = apply_overrides(&a.o)?;
    if let Some(ks) = &a.ks {
        cfg.sweep.ks = ks.clone();
    }
    if let Some(ls) = &a.lambdas {
        cfg.sweep.lambdas = ls.clone();
    }
    let res = run_sweep(&cfg, a.o.force)?;
    match res.selected_cell() {
        Some(c) => println!("selected K = {}, lambda = {} (score {:.6e})", c.k, c.lambda, c.score.unwrap()),
        None => println!("every cell failed"),
    }
    println!("table written to {}", Path::new(&cfg.run_dir()).join("sweep.csv").display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: could not size the thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match &cli.cmd {
        Command::Generate(a) => cmd_generate(a),
        Command::Neighbors(a) => cmd_neighbors(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Lyapunov(a) => cmd_lyapunov(a),
        Command::Sweep(a) => cmd_sweep(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_usage() { 2 } else { 1 })
        }
    }
}
