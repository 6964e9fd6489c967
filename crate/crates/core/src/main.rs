use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fredholm_mri::experiment::{self, ExperimentConfig, Method, Overrides, Scheme};
use fredholm_mri::Result;

#[derive(Parser)]
#[command(version, about = "Multi-coil MRI reconstruction as a Fredholm equation of the second kind")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    shared: Shared,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Write phantom, coil maps, mask and k-space for one acquisition.
    Simulate,
    /// Reconstruct with each requested method and score against the truth.
    Reconstruct,
    /// Singular value analysis over coil subsets and sampling patterns.
    Svd,
    /// Sweep scan times and seeds, scoring every method.
    Compare,
    /// Score an estimate stack against a reference stack.
    Metrics,
}

#[derive(Args)]
struct Shared {
    /// JSON experiment configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory [default: $FREDHOLM_MRI_OUT or ./out].
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed for random masks and noise.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Regularization weight of the column-wise solver.
    #[arg(long, global = true)]
    alpha: Option<f64>,
    /// TV smoothing constant.
    #[arg(long, global = true)]
    beta: Option<f64>,
    /// Sensitivity maps per coil.
    #[arg(long, global = true)]
    maps: Option<usize>,
    /// Singular value threshold for the null-space count.
    #[arg(long, global = true)]
    threshold: Option<f64>,
    #[arg(long, global = true, value_enum)]
    scheme: Option<Scheme>,
    /// Acceleration factor for the accelerated scheme.
    #[arg(long, global = true)]
    rate: Option<usize>,
    /// Fraction of acquired lines for the random scheme.
    #[arg(long = "scan-time", global = true)]
    scan_time: Option<f64>,
    /// Width of the fully sampled centre block.
    #[arg(long, global = true)]
    acs: Option<usize>,
    /// Comma-separated methods to run.
    #[arg(long, global = true, value_enum, value_delimiter = ',')]
    methods: Option<Vec<Method>>,
    /// Directory with existing inputs.
    #[arg(long, global = true)]
    input: Option<PathBuf>,
    /// Reference stack for `metrics`.
    #[arg(long, global = true)]
    truth: Option<PathBuf>,
    /// Estimate stack for `metrics`.
    #[arg(long, global = true)]
    estimate: Option<PathBuf>,
}

fn run(cli: &Cli) -> Result<i32> {
    let s = &cli.shared;
    let mut cfg = match &s.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    cfg.apply(&Overrides {
        out: s.out.clone(),
        seed: s.seed,
        alpha: s.alpha,
        beta: s.beta,
        maps: s.maps,
        threshold: s.threshold,
        scheme: s.scheme,
        rate: s.rate,
        scan_time: s.scan_time,
        acs: s.acs,
        methods: s.methods.clone(),
        input: s.input.clone(),
        truth: s.truth.clone(),
        estimate: s.estimate.clone(),
    });
    let out = experiment::resolve_out(cfg.out.as_deref());
    let report = match cli.command {
        Command::Simulate => {
            let manifest = experiment::cmd_simulate(&cfg, &out)?;
            emit(&manifest);
            return Ok(0);
        }
        Command::Reconstruct => experiment::cmd_reconstruct(&cfg, &out)?,
        Command::Svd => experiment::cmd_svd(&cfg, &out)?,
        Command::Compare => experiment::cmd_compare(&cfg, &out)?,
        Command::Metrics => experiment::cmd_metrics(&cfg, &out)?,
    };
    emit(&report);
    Ok(report.exit_code())
}

fn emit<T: serde::Serialize>(value: &T) {
    let text = serde_json::to_string_pretty(value).expect("reports serialize");
    let _ = writeln!(std::io::stdout(), "{text}");
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(t) = cli.shared.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match run(&cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
