use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use iontomo::cli::{self, CliError, ExperimentConfig, PipelineInputs};
use iontomo::sim::Shots;

#[derive(Parser)]
#[command(name = "iontomo", version, about = "Noise-aware tomography and pulse calibration campaigns")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate bright/dark runs and estimate readout errors (JSON).
    ReadoutCalib(Campaign),
    /// Tomography-gate infidelity against sample size (CSV).
    Fig2b(Campaign),
    /// Two-pulse synthesis with reconstructed vs ideal pulse models (CSV).
    Fig3(Campaign),
    /// Cross-talk compensation on an ion pair (CSV).
    Crosstalk(Campaign),
    /// Run the estimators on stored JSON datasets (JSON).
    Pipeline(Pipeline),
}

#[derive(Args)]
struct Campaign {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    /// Comma-separated shot counts (e.g. 1e3,1e4) or `exact`.
    #[arg(long, value_delimiter = ',')]
    shots: Option<Vec<Shots>>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Exit with status 4 if the campaign's acceptance thresholds are missed.
    #[arg(long)]
    check: bool,
}

impl Campaign {
    fn config(&self, experiment: &str) -> Result<ExperimentConfig, CliError> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::from_file(p)?,
            None => ExperimentConfig::default(),
        };
        if cfg.experiment.is_empty() {
            cfg.experiment = experiment.to_string();
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(t) = self.trials {
            cfg.trials = t;
        }
        if let Some(s) = &self.shots {
            cfg.shots = Some(s.clone());
        }
        if let Some(e) = self.epsilon {
            cfg.epsilon = e;
        }
        if let Some(o) = &self.out {
            cfg.out = Some(o.clone());
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct Pipeline {
    /// Bright/dark calibration dataset.
    #[arg(long)]
    readout_data: Option<PathBuf>,
    /// Known readout errors `{"e10", "e01"}`; takes precedence over data.
    #[arg(long)]
    readout_model: Option<PathBuf>,
    #[arg(long)]
    qt_data: Option<PathBuf>,
    /// Known tomography-gate parameters `{"a", "b", "c"}`.
    #[arg(long)]
    qt_model: Option<PathBuf>,
    /// Standard-protocol dataset of one process; repeatable.
    #[arg(long)]
    process_data: Vec<PathBuf>,
    /// Fit the linear pulse model from four calibration-pulse datasets.
    #[arg(long)]
    fit_model: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let (report, out, check) = match cli.command {
        Command::ReadoutCalib(c) => {
            let cfg = c.config("readout-calib")?;
            (cli::cmd_readout_calib(&cfg)?, cfg.out, c.check)
        }
        Command::Fig2b(c) => {
            let cfg = c.config("fig2b")?;
            (cli::cmd_fig2b(&cfg)?, cfg.out, c.check)
        }
        Command::Fig3(c) => {
            let cfg = c.config("fig3")?;
            (cli::cmd_fig3(&cfg)?, cfg.out, c.check)
        }
        Command::Crosstalk(c) => {
            let cfg = c.config("crosstalk")?;
            (cli::cmd_crosstalk(&cfg)?, cfg.out, c.check)
        }
        Command::Pipeline(p) => {
            let inputs = PipelineInputs {
                readout_data: p.readout_data,
                readout_model: p.readout_model,
                qt_data: p.qt_data,
                qt_model: p.qt_model,
                process_data: p.process_data,
                fit_model: p.fit_model,
            };
            (cli::cmd_pipeline(&inputs)?, p.out, false)
        }
    };
    cli::emit(&report, out.as_deref(), check)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
