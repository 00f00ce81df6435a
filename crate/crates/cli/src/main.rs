//! `snails`: command-line front end for the Brownian snails simulator.
//!
//! Exit codes: 0 success, 1 internal error (including a coupling
//! violation), 2 invalid configuration, 3 resource limit exceeded.

mod commands;
mod config;
mod output;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use snails::model::DetectorMode;

use config::{RunConfig, WindowSetting};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Internal(String),
    #[error(transparent)]
    Core(#[from] snails::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Internal(_) => 1,
            CliError::Core(e) => match e {
                snails::Error::InvalidParameter { .. } | snails::Error::Precondition(_) => 2,
                snails::Error::ResourceLimit { .. } => 3,
                _ => 1,
            },
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "snails", version, about = "Brownian snails SIR Monte Carlo simulator and verification harness")]
#[command(after_help = "\
Configuration precedence: flags > environment (SNAIL_SEED) > config file > defaults.
Defaults: d=1, radius=1, diffusion=1, dt=0.01*radius^2/diffusion, detector=bridge,
window=auto (pilot front-speed run), seed=1, workers=1, output=snails-out.
A truncation cap applies even when alpha=0.")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    flags: Flags,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// One trajectory with its full event log.
    Simulate,
    /// Survival curve P(extinction time >= T) and decay-rate fit.
    Survival,
    /// Front envelopes of the removal-free model.
    Shape,
    /// Containment of the ever-infected set under removal in the removal-free set.
    Coupling,
    /// Step-size convergence for both contact detectors.
    Converge,
    /// Origin-cluster statistics of the Gilbert graph.
    Percolation,
    /// Invariance of the Poisson field under free motion.
    Stationarity,
    /// Constants of the extinction argument, printed as JSON.
    Constants,
    /// Counts of particles entering the ball of radius C1*T.
    Entry,
    /// Time spent with I(t) <= 2*C2.
    Occupation,
    /// Integral of the truncated infected count against a sum of exponentials.
    Truncation,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Survival => "survival",
            Command::Shape => "shape",
            Command::Coupling => "coupling",
            Command::Converge => "converge",
            Command::Percolation => "percolation",
            Command::Stationarity => "stationarity",
            Command::Constants => "constants",
            Command::Entry => "entry",
            Command::Occupation => "occupation",
            Command::Truncation => "truncation",
        }
    }
}

#[derive(Args, Debug, Default)]
struct Flags {
    /// JSON config file with `model`, `sim` and `experiment` sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Re-run exactly what a previous manifest.json recorded.
    #[arg(long, global = true, conflicts_with = "config")]
    manifest: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long, short, global = true)]
    output: Option<PathBuf>,

    #[arg(long, global = true, allow_negative_numbers = true)]
    lambda: Option<f64>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    alpha: Option<f64>,
    #[arg(long, global = true)]
    d: Option<usize>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    radius: Option<f64>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    diffusion: Option<f64>,
    #[arg(long, global = true, value_delimiter = ',', allow_negative_numbers = true)]
    drift: Option<Vec<f64>>,
    #[arg(long, global = true)]
    infection_rate: Option<f64>,

    #[arg(long, global = true, allow_negative_numbers = true)]
    dt: Option<f64>,
    #[arg(long, global = true)]
    t_max: Option<f64>,
    #[arg(long, global = true)]
    detector: Option<DetectorMode>,
    /// `auto` or a half-width.
    #[arg(long, global = true)]
    window: Option<WindowSetting>,
    #[arg(long, global = true)]
    truncation: Option<usize>,
    #[arg(long, global = true)]
    max_particles: Option<usize>,
    #[arg(long, global = true)]
    pilot_runs: Option<usize>,

    #[arg(long, global = true)]
    n_runs: Option<usize>,
    #[arg(long, global = true, value_delimiter = ',')]
    horizons: Option<Vec<f64>>,
    #[arg(long, global = true, value_delimiter = ',')]
    times: Option<Vec<f64>>,
    #[arg(long, global = true, value_delimiter = ',')]
    dt_grid: Option<Vec<f64>>,
    #[arg(long, global = true, value_delimiter = ',')]
    lambdas: Option<Vec<f64>>,
    #[arg(long, global = true, value_delimiter = ',')]
    box_sizes: Option<Vec<f64>>,
    #[arg(long, global = true)]
    n_samples: Option<usize>,
    #[arg(long = "c1", global = true, allow_negative_numbers = true)]
    c1: Option<f64>,
    #[arg(long = "c2", global = true, allow_negative_numbers = true)]
    c2: Option<f64>,
    /// Horizon T (constants, entry, occupation, truncation, converge).
    #[arg(long = "T", global = true, allow_negative_numbers = true)]
    horizon: Option<f64>,
    #[arg(long, global = true)]
    cap: Option<usize>,
    #[arg(long, global = true)]
    box_length: Option<f64>,
    #[arg(long, global = true)]
    half_width: Option<f64>,
    #[arg(long, global = true)]
    time: Option<f64>,
}

impl Flags {
    fn as_config(&self) -> RunConfig {
        let mut c = RunConfig::default();
        c.model.lambda = self.lambda;
        c.model.alpha = self.alpha;
        c.model.d = self.d;
        c.model.radius = self.radius;
        c.model.diffusion = self.diffusion;
        c.model.drift = self.drift.clone();
        c.model.infection_rate = self.infection_rate;
        c.sim.dt = self.dt;
        c.sim.t_max = self.t_max;
        c.sim.detector = self.detector;
        c.sim.window = self.window;
        c.sim.truncation = self.truncation;
        c.sim.max_particles = self.max_particles;
        c.sim.pilot_runs = self.pilot_runs;
        c.experiment.n_runs = self.n_runs;
        c.experiment.horizons = self.horizons.clone();
        c.experiment.times = self.times.clone();
        c.experiment.dt_grid = self.dt_grid.clone();
        c.experiment.lambdas = self.lambdas.clone();
        c.experiment.box_sizes = self.box_sizes.clone();
        c.experiment.n_samples = self.n_samples;
        c.experiment.c1 = self.c1;
        c.experiment.c2 = self.c2;
        c.experiment.horizon = self.horizon;
        c.experiment.cap = self.cap;
        c.experiment.box_length = self.box_length;
        c.experiment.half_width = self.half_width;
        c.experiment.time = self.time;
        c.seed = self.seed;
        c.workers = self.workers;
        c.output = self.output.clone();
        c
    }
}

fn resolve_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = if let Some(path) = &cli.flags.manifest {
        let m = commands::Manifest::load(path)?;
        if m.command != cli.command.name() {
            return Err(CliError::Usage(format!(
                "manifest {} records `{}`, not `{}`",
                path.display(),
                m.command,
                cli.command.name()
            )));
        }
        m.config
    } else if let Some(path) = &cli.flags.config {
        RunConfig::load(path)?
    } else {
        RunConfig::default()
    };
    if let Ok(v) = std::env::var("SNAIL_SEED") {
        let seed = v
            .trim()
            .parse::<u64>()
            .map_err(|_| CliError::Usage(format!("invalid value for `SNAIL_SEED`: {v:?}")))?;
        cfg.seed = Some(seed);
    }
    cfg.merge(cli.flags.as_config());
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = resolve_config(&cli).and_then(|cfg| commands::dispatch(cli.command, cfg));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let CliError::Core(snails::Error::ResourceLimit { partial_log, .. }) = &e {
                eprintln!("partial log held {} events; nothing was written", partial_log.len());
            }
            ExitCode::from(e.exit_code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_args(args: &[&str]) -> Result<(), CliError> {
        let cli = Cli::try_parse_from(std::iter::once("snails").chain(args.iter().copied()))
            .map_err(|e| CliError::Usage(e.to_string()))?;
        resolve_config(&cli).and_then(|cfg| commands::dispatch(cli.command, cfg))
    }

    fn out(dir: &std::path::Path) -> String {
        dir.to_string_lossy().into_owned()
    }

    #[test]
    fn exit_codes_follow_error_kind() {
        assert_eq!(CliError::Usage("x".into()).exit_code(), 2);
        assert_eq!(CliError::Internal("x".into()).exit_code(), 1);
        assert_eq!(CliError::Core(snails::Error::InvalidParameter { name: "dt", reason: "bad".into() }).exit_code(), 2);
    }

    #[test]
    fn zero_runs_is_a_usage_error() {
        let dir = tempfile::tempdir().unwrap();
        let o = out(&dir.path().join("o"));
        let err = run_args(&["survival", "--lambda", "1", "--alpha", "1", "--horizons", "1", "--n-runs", "0", "-o", &o]).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("n_runs"), "{err}");
        assert!(!dir.path().join("o").exists());
    }

    #[test]
    fn negative_alpha_is_rejected() {
        let err = run_args(&["simulate", "--lambda", "1", "--alpha", "-1"]).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("alpha"), "{err}");
    }

    #[test]
    fn constants_need_their_inputs() {
        run_args(&["constants", "--alpha", "1", "--c1", "3", "--c2", "2", "--T", "50"]).unwrap();
        assert_eq!(run_args(&["constants", "--alpha", "1"]).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn worker_count_and_manifest_rerun_are_reproducible() {
        let dir = tempfile::tempdir().unwrap();
        let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
        let common = ["survival", "--lambda", "1", "--alpha", "1", "--horizons", "1,3", "--n-runs", "80", "--seed", "5"];
        let mut args: Vec<&str> = common.to_vec();
        let oa = out(&a);
        args.extend(["--workers", "1", "-o", &oa]);
        run_args(&args).unwrap();
        let mut args: Vec<&str> = common.to_vec();
        let ob = out(&b);
        args.extend(["--workers", "4", "-o", &ob]);
        run_args(&args).unwrap();
        let manifest = out(&a.join("manifest.json"));
        let oc = out(&c);
        run_args(&["survival", "--manifest", &manifest, "-o", &oc]).unwrap();
        for f in ["survival.csv", "runs.csv"] {
            let base = std::fs::read(a.join(f)).unwrap();
            assert_eq!(base, std::fs::read(b.join(f)).unwrap(), "{f}");
            assert_eq!(base, std::fs::read(c.join(f)).unwrap(), "{f}");
        }
    }

    #[test]
    fn manifest_must_match_command() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a");
        let oa = out(&a);
        run_args(&["simulate", "--lambda", "1", "--alpha", "1", "--t-max", "2", "-o", &oa]).unwrap();
        let manifest = out(&a.join("manifest.json"));
        let err = run_args(&["survival", "--manifest", &manifest]).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
