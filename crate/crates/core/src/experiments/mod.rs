//! Verification experiments built on repeated independent runs.
//!
//! Run `i` of an experiment always uses stream `i` of the master seed, so
//! results do not depend on the number of workers, and experiments that
//! share a configuration see the same initial fields.

mod constants;
mod convergence;
mod coupling;
mod entry;
mod occupation;
mod shape;
mod stationarity;
mod survival;

pub use constants::{proof_constants, ProofConstants};
pub use convergence::{convergence_study, ConvergenceRow, ConvergenceStudy, Statistic};
pub use coupling::{coupled_logs, coupling_experiment, CouplingReport, Violation};
pub use entry::{entry_experiment, EntryReport};
pub use occupation::{
    estimate_c2, occupation_experiment, truncation_experiment, OccupationReport,
    TruncationReport,
};
pub use shape::{pilot_front_speed, shape_experiment, PilotSpeed, ShapeReport, QUANTILES};
pub use stationarity::{stationarity_check, BoxComparison, StationarityReport, INTERIOR_MARGIN};
pub use survival::{survival_experiment, FitResult, SurvivalCurve, SurvivalReport};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{mix64, Region, RngStream};
use crate::model::{
    run, run_observed, window_for, window_half_width, DetectorMode, ModelParams, RunOutput,
    RunSpec, StepObserver,
};

/// Multiple of `sqrt(2 D t_max)` added to the window beyond the front.
pub const DEFAULT_WINDOW_SIGMAS: f64 = 6.0;

/// Everything a batch of runs shares.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub params: ModelParams,
    pub dt: f64,
    pub detector: DetectorMode,
    /// Front speed used to size the window.
    pub window_speed: f64,
    pub window_sigmas: f64,
    /// Fixed half-width overriding the formula.
    pub window_half_width: Option<f64>,
    pub truncation: Option<usize>,
    pub max_particles: Option<usize>,
    pub seed: u64,
    pub workers: usize,
}

impl SimConfig {
    /// Default step for the model, window speed `window_speed`, one worker.
    pub fn new(params: ModelParams, window_speed: f64, seed: u64) -> Self {
        Self {
            dt: params.default_dt(),
            params,
            detector: DetectorMode::Bridge,
            window_speed,
            window_sigmas: DEFAULT_WINDOW_SIGMAS,
            window_half_width: None,
            truncation: None,
            max_particles: None,
            seed,
            workers: 1,
        }
    }

    pub fn with_dt(mut self, dt: f64) -> Self {
        self.dt = dt;
        self
    }

    pub fn with_detector(mut self, detector: DetectorMode) -> Self {
        self.detector = detector;
        self
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers;
        self
    }

    pub fn with_truncation(mut self, cap: Option<usize>) -> Self {
        self.truncation = cap;
        self
    }

    pub fn with_params(mut self, params: ModelParams) -> Self {
        self.params = params;
        self
    }

    pub fn with_window_half_width(mut self, w: Option<f64>) -> Self {
        self.window_half_width = w;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::invalid("dt", format!("must be > 0, got {}", self.dt)));
        }
        if !(self.window_speed.is_finite() && self.window_speed >= 0.0) {
            return Err(Error::invalid("window_speed", "must be finite and >= 0"));
        }
        if !(self.window_sigmas.is_finite() && self.window_sigmas >= 0.0) {
            return Err(Error::invalid("window_sigmas", "must be finite and >= 0"));
        }
        if let Some(w) = self.window_half_width {
            if !(w.is_finite() && w >= self.params.radius) {
                return Err(Error::invalid(
                    "window",
                    format!("half-width must be at least the radius, got {w}"),
                ));
            }
        }
        Ok(())
    }

    pub fn half_width(&self, t_max: f64) -> f64 {
        self.window_half_width.unwrap_or_else(|| {
            window_half_width(&self.params, t_max, self.window_speed, self.window_sigmas)
        })
    }

    pub fn window(&self, t_max: f64) -> Result<Region> {
        window_for(&self.params, self.half_width(t_max))
    }

    pub fn run_spec(&self, t_max: f64) -> RunSpec {
        RunSpec::new(self.dt, t_max)
            .with_detector(self.detector)
            .with_truncation(self.truncation)
            .with_max_particles(self.max_particles)
    }

    /// Generator of run `index`.
    pub fn stream(&self, index: usize) -> RngStream {
        RngStream::new(self.seed, index as u64)
    }

    /// Generator of pilot run `index`, disjoint from the experiment's own
    /// streams.
    pub fn pilot_stream(&self, index: usize) -> RngStream {
        RngStream::new(mix64(self.seed ^ PILOT_TAG), index as u64)
    }
}

const PILOT_TAG: u64 = 0x7069_6c6f_745f_7275;

pub(crate) fn check_runs(n_runs: usize) -> Result<()> {
    if n_runs == 0 {
        return Err(Error::invalid("n_runs", "must be at least 1"));
    }
    Ok(())
}

/// `n_runs` runs of `spec` over the shared window, in run order.
pub(crate) fn batch(
    cfg: &SimConfig,
    spec: &RunSpec,
    n_runs: usize,
    pilot: bool,
) -> Result<Vec<RunOutput>> {
    let window = cfg.window(spec.t_max)?;
    crate::parallel::map_indexed(n_runs, cfg.workers, |i| {
        let rng = if pilot { cfg.pilot_stream(i) } else { cfg.stream(i) };
        run(&cfg.params, &window, &rng, spec)
    })
}

/// Like [`batch`], with a fresh observer per run whose final value is
/// returned next to the run.
pub(crate) fn observed_batch<O, F>(
    cfg: &SimConfig,
    spec: &RunSpec,
    n_runs: usize,
    pilot: bool,
    make: F,
) -> Result<Vec<(RunOutput, O)>>
where
    O: StepObserver + Send,
    F: Fn() -> O + Sync + Send,
{
    let window = cfg.window(spec.t_max)?;
    crate::parallel::map_indexed(n_runs, cfg.workers, |i| {
        let rng = if pilot { cfg.pilot_stream(i) } else { cfg.stream(i) };
        let mut obs = make();
        let out = run_observed(&cfg.params, &window, &rng, spec, &mut obs)?;
        Ok((out, obs))
    })
}
