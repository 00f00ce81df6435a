use serde::Serialize;

use super::events::EventLog;
use super::params::{DetectorMode, ModelParams};
use super::state::{init_configuration, SimOptions, SimState};
use crate::error::{Error, Result};
use crate::kernel::{Region, RngStream};
use crate::observables::{summarize, RunResult};

/// Time stepping and bookkeeping for one run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunSpec {
    pub dt: f64,
    pub t_max: f64,
    pub detector: DetectorMode,
    #[serde(flatten)]
    pub options: SimOptions,
    /// Thresholds for the occupation-time observable.
    pub occupation_thresholds: Vec<f64>,
}

impl RunSpec {
    pub fn new(dt: f64, t_max: f64) -> Self {
        Self {
            dt,
            t_max,
            detector: DetectorMode::Bridge,
            options: SimOptions::default(),
            occupation_thresholds: Vec::new(),
        }
    }

    pub fn with_detector(mut self, detector: DetectorMode) -> Self {
        self.detector = detector;
        self
    }

    pub fn with_truncation(mut self, cap: Option<usize>) -> Self {
        self.options.truncation = cap;
        self
    }

    pub fn with_max_particles(mut self, cap: Option<usize>) -> Self {
        self.options.max_particles = cap;
        self
    }

    /// Track particles entering the ball of this radius about the origin.
    /// The run then continues to `t_max` even after extinction.
    pub fn with_entry_range(mut self, range: Option<f64>) -> Self {
        self.options.entry_range = range;
        self
    }

    pub fn with_occupation_thresholds(mut self, thresholds: Vec<f64>) -> Self {
        self.occupation_thresholds = thresholds;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::invalid("dt", format!("must be > 0, got {}", self.dt)));
        }
        if !(self.t_max.is_finite() && self.t_max > 0.0) {
            return Err(Error::invalid("t_max", format!("must be > 0, got {}", self.t_max)));
        }
        if self.occupation_thresholds.iter().any(|v| v.is_nan() || *v < 0.0) {
            return Err(Error::invalid("occupation_thresholds", "must be >= 0"));
        }
        Ok(())
    }

    /// Step end times: multiples of `dt`, with a shortened final step landing
    /// on `t_max`.
    pub(crate) fn grid_time(&self, k: u64) -> f64 {
        (k as f64 * self.dt).min(self.t_max)
    }

    pub(crate) fn step_count(&self) -> u64 {
        let n = (self.t_max / self.dt).floor();
        let rest = self.t_max - n * self.dt;
        n as u64 + u64::from(rest > 1e-9 * self.dt)
    }
}

/// Called with the state after initialisation and after every step.
pub trait StepObserver {
    fn observe(&mut self, state: &SimState);
}

impl<F: FnMut(&SimState)> StepObserver for F {
    fn observe(&mut self, state: &SimState) {
        self(state)
    }
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub result: RunResult,
    pub log: EventLog,
}

/// Simulate until extinction or `t_max`. Removal-free runs always reach
/// `t_max`.
pub fn run(
    params: &ModelParams,
    window: &Region,
    rng: &RngStream,
    spec: &RunSpec,
) -> Result<RunOutput> {
    run_observed(params, window, rng, spec, &mut |_: &SimState| {})
}

pub fn run_observed(
    params: &ModelParams,
    window: &Region,
    rng: &RngStream,
    spec: &RunSpec,
    observer: &mut dyn StepObserver,
) -> Result<RunOutput> {
    spec.validate()?;
    let mut state = init_configuration(params, window, rng, &spec.options)?;
    observer.observe(&state);
    let n = spec.step_count();
    let keep_moving = spec.options.entry_range.is_some();
    for k in 1..=n {
        if state.is_extinct() && !keep_moving {
            break;
        }
        let t_end = if k == n { spec.t_max } else { spec.grid_time(k) };
        state.step_to(t_end, spec.detector)?;
        observer.observe(&state);
    }
    let result = summarize(&state, spec);
    Ok(RunOutput {
        result,
        log: state.into_log(),
    })
}
