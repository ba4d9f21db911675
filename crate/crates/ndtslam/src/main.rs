use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ndtslam::pipeline;
use ndtslam::{PipelineConfig, PipelineError};

#[derive(Parser)]
#[command(name = "ndtslam", version, about = "NDT graph SLAM with uncertainty-weighted edges")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic street-canyon run.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run NDT odometry and pose-graph optimization over a scan directory.
    Slam {
        #[arg(long)]
        scans: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate an estimated trajectory against ground truth.
    Eval {
        #[arg(long)]
        est: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        buildings: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Coefficients, std mode and traffic label for the report.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Results table to append to; defaults to <out>/results.csv.
        #[arg(long)]
        results: Option<PathBuf>,
    },
    /// Skyplot and urbanization degree at one point.
    Skyplot {
        #[arg(long)]
        buildings: PathBuf,
        /// Observation point as e,n,u.
        #[arg(long, value_parser = parse_pose, allow_hyphen_values = true)]
        pose: [f64; 3],
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_pose(s: &str) -> Result<[f64; 3], String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|_| format!("bad number {p:?}")))
        .collect::<Result<_, _>>()?;
    match v.as_slice() {
        [e, n, u] if v.iter().all(|x| x.is_finite()) => Ok([*e, *n, *u]),
        _ => Err("expected e,n,u".into()),
    }
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    ndtslam::configure_threads()?;
    match cli.command {
        Command::Simulate { config, out } => {
            let cfg = PipelineConfig::load(&config)?;
            let o = pipeline::simulate(&cfg, &out)?;
            println!("{}", o.manifest.display());
            println!("sha256 {}", o.manifest_sha256);
        }
        Command::Slam { scans, config, out } => {
            let cfg = PipelineConfig::load(&config)?;
            let o = pipeline::slam(&scans, &cfg, &out)?;
            println!("{}", o.trajectory.display());
            println!("{}", o.graph.display());
            println!("failed registrations: {} of {}", o.failed, o.frames.len());
        }
        Command::Eval {
            est,
            truth,
            buildings,
            out,
            config,
            results,
        } => {
            let cfg = config.as_deref().map(PipelineConfig::load).transpose()?;
            let report = pipeline::eval(&est, &truth, &buildings, cfg.as_ref(), &out, results.as_deref())?;
            print!("{}", report.text(cfg.as_ref().unwrap_or(&PipelineConfig::default())));
        }
        Command::Skyplot { buildings, pose, out } => {
            let u = pipeline::skyplot(&buildings, pose, &out)?;
            println!("{:.4} {}", u.degree, u.class);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
