use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::info;

use pkd_core::datagen::{gen_window, generate, write_dataset_csv, Phase, Regime, SyntheticSpec};
use pkd_core::exec::with_threads;
use pkd_core::harness::artifacts::{load_predictor, save_cell_models};
use pkd_core::harness::sweep::synthetic_data;
use pkd_core::harness::{emit_report, measure_latency, run_sweep, train_cell, ExperimentConfig};
use pkd_core::indicators::DEFAULT_WINDOW_LEN;
use pkd_core::rng::rng_from;
use pkd_core::Error;

const EXIT_CONFIG: u8 = 2;
const EXIT_TRAINING: u8 = 3;

#[derive(Parser)]
#[command(
    name = "pkd-lab",
    version,
    about = "Prior-knowledge distillation experiments"
)]
struct Cli {
    /// Worker threads for sweeps (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a sweep and write summary.csv, cells.csv, fig4_<regime>.csv and report.json.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Dump a synthetic dataset as `sample_id,x_1..x_n,y,label,phase`.
    Gen {
        #[arg(long)]
        regime: Regime,
        #[arg(long)]
        noise: f64,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Generating-lag shift for the lag-perturbed regime.
        #[arg(long, default_value_t = 0)]
        lag_noise: i64,
        #[arg(long, default_value_t = 3000)]
        n: usize,
        #[arg(long, default_value = "train")]
        phase: Phase,
    },
    /// Time single-window predictions of a saved model.
    Bench {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 100)]
        warmup: usize,
    },
    /// Train the configured models on one grid value and save them with their
    /// training histories.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Grid value to train at (default: the first one).
        #[arg(long)]
        noise: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed_index: usize,
    },
}

fn exit_code(e: &Error) -> u8 {
    if e.is_training_failure() {
        EXIT_TRAINING
    } else {
        EXIT_CONFIG
    }
}

fn run(config: &Path, out: &Path) -> Result<u8, Error> {
    let cfg = ExperimentConfig::load(config)?;
    let report = run_sweep(&cfg)?;
    emit_report(&report, out)?;
    for a in &report.aggregates {
        println!(
            "{:<5} {:>6} mean={:.4} std={:.4} n={}",
            a.model, a.noise_level, a.mean_acc, a.std_acc, a.n_seeds
        );
    }
    for l in &report.latency {
        println!(
            "latency {:<5} {:.2}±{:.2} µs ({} params)",
            l.model, l.stats.mean_us, l.stats.std_us, l.param_count
        );
    }
    let failed = report.failed_cells();
    if failed > 0 {
        eprintln!("{failed} cell(s) failed; see cells.csv");
        return Ok(EXIT_TRAINING);
    }
    Ok(0)
}

fn gen(
    regime: Regime,
    noise: f64,
    seed: u64,
    lag_noise: i64,
    n: usize,
    phase: Phase,
    out: &Path,
) -> Result<u8, Error> {
    let spec = SyntheticSpec::new(regime, noise, n, seed).with_lag_noise(lag_noise);
    let samples = generate(&spec, phase)?;
    write_dataset_csv(out, &samples)?;
    info!("wrote {} samples to {}", samples.len(), out.display());
    Ok(0)
}

fn bench(model: &Path, n: usize, warmup: usize) -> Result<u8, Error> {
    let predictor = load_predictor(model)?;
    let width = predictor.input_width().unwrap_or(DEFAULT_WINDOW_LEN);
    let window = gen_window(width, &mut rng_from(&[0]));
    let stats = measure_latency(predictor.as_ref(), &window, n, warmup)?;
    println!(
        "params={} mean_us={:.3} std_us={:.3} n={}",
        predictor.param_count(),
        stats.mean_us,
        stats.std_us,
        stats.n
    );
    Ok(0)
}

fn train(config: &Path, out: &Path, noise: Option<f64>, seed_index: usize) -> Result<u8, Error> {
    let cfg = ExperimentConfig::load(config)?;
    if cfg.real_data.is_some() {
        return Err(Error::Config(
            "`train` works on synthetic regimes only".into(),
        ));
    }
    let value = noise.unwrap_or(cfg.grid()[0]);
    let data = synthetic_data(&cfg, value, seed_index)?;
    let cell = train_cell(&cfg, &cfg.model_set(), data, value, seed_index)?;
    for file in save_cell_models(&cell, out)? {
        println!("{}", out.join(file).display());
    }
    let failures: Vec<String> = cfg
        .model_set()
        .into_iter()
        .filter_map(|m| match cell.predictor(m) {
            Some(Err(e)) => Some(format!("{m}: {e}")),
            _ => None,
        })
        .collect();
    if failures.is_empty() {
        Ok(0)
    } else {
        eprintln!("{}", failures.join("\n"));
        Ok(EXIT_TRAINING)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = with_threads(cli.threads, || match cli.command {
        Command::Run { config, out } => run(&config, &out),
        Command::Gen {
            regime,
            noise,
            seed,
            out,
            lag_noise,
            n,
            phase,
        } => gen(regime, noise, seed, lag_noise, n, phase, &out),
        Command::Bench { model, n, warmup } => bench(&model, n, warmup),
        Command::Train {
            config,
            out,
            noise,
            seed_index,
        } => train(&config, &out, noise, seed_index),
    });
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
