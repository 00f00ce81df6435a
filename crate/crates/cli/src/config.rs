//! Run configuration: a flat JSON file with `model`, `sim` and `experiment`
//! sections, overridden by command-line flags.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize, Serializer};
use snails::model::{DetectorMode, InfectionRate, ModelParams};

use crate::CliError;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub lambda: Option<f64>,
    pub alpha: Option<f64>,
    pub d: Option<usize>,
    pub radius: Option<f64>,
    pub diffusion: Option<f64>,
    pub drift: Option<Vec<f64>>,
    /// Finite per-pair infection rate; absent means instantaneous.
    pub infection_rate: Option<f64>,
}

/// Window half-width: `auto` (from a pilot front-speed run) or a number.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub enum WindowSetting {
    #[default]
    Auto,
    Fixed(f64),
}

impl Serialize for WindowSetting {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            WindowSetting::Auto => s.serialize_str("auto"),
            WindowSetting::Fixed(w) => s.serialize_f64(*w),
        }
    }
}

impl<'de> Deserialize<'de> for WindowSetting {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = WindowSetting;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("\"auto\" or a positive number")
            }
            fn visit_str<E: de::Error>(self, v: &str) -> Result<WindowSetting, E> {
                if v.eq_ignore_ascii_case("auto") {
                    Ok(WindowSetting::Auto)
                } else {
                    v.parse::<f64>()
                        .map(WindowSetting::Fixed)
                        .map_err(|_| E::custom(format!("expected \"auto\" or a number, got {v:?}")))
                }
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> Result<WindowSetting, E> {
                Ok(WindowSetting::Fixed(v))
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> Result<WindowSetting, E> {
                Ok(WindowSetting::Fixed(v as f64))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> Result<WindowSetting, E> {
                Ok(WindowSetting::Fixed(v as f64))
            }
        }
        d.deserialize_any(V)
    }
}

impl std::str::FromStr for WindowSetting {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(WindowSetting::Auto);
        }
        s.parse::<f64>()
            .map(WindowSetting::Fixed)
            .map_err(|_| format!("expected `auto` or a number, got {s:?}"))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    pub dt: Option<f64>,
    pub t_max: Option<f64>,
    pub detector: Option<DetectorMode>,
    pub window: Option<WindowSetting>,
    pub window_sigmas: Option<f64>,
    /// Front speed the window was sized with (filled in when `window` is
    /// resolved from a pilot run).
    pub window_speed: Option<f64>,
    pub truncation: Option<usize>,
    pub max_particles: Option<usize>,
    pub pilot_runs: Option<usize>,
    pub pilot_horizon: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub n_runs: Option<usize>,
    pub horizons: Option<Vec<f64>>,
    pub times: Option<Vec<f64>>,
    pub dt_grid: Option<Vec<f64>>,
    pub statistics: Option<Vec<snails::experiments::Statistic>>,
    pub lambdas: Option<Vec<f64>>,
    pub box_sizes: Option<Vec<f64>>,
    pub n_samples: Option<usize>,
    pub c1: Option<f64>,
    pub c2: Option<f64>,
    #[serde(rename = "T")]
    pub horizon: Option<f64>,
    pub range: Option<f64>,
    pub cap: Option<usize>,
    pub box_length: Option<f64>,
    pub half_width: Option<f64>,
    pub time: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub sim: SimSection,
    #[serde(default)]
    pub experiment: ExperimentSection,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub output: Option<PathBuf>,
}

pub const DEFAULT_SEED: u64 = 1;
pub const DEFAULT_PILOT_RUNS: usize = 50;
pub const DEFAULT_PILOT_HORIZON: f64 = 20.0;

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
    }

    /// Overlay every value set in `other`.
    pub fn merge(&mut self, other: RunConfig) {
        macro_rules! take {
            ($($sec:ident . $f:ident),*) => {$(
                if other.$sec.$f.is_some() {
                    self.$sec.$f = other.$sec.$f;
                }
            )*};
        }
        take!(
            model.lambda, model.alpha, model.d, model.radius, model.diffusion, model.drift,
            model.infection_rate,
            sim.dt, sim.t_max, sim.detector, sim.window, sim.window_sigmas, sim.window_speed,
            sim.truncation, sim.max_particles, sim.pilot_runs, sim.pilot_horizon,
            experiment.n_runs, experiment.horizons, experiment.times, experiment.dt_grid,
            experiment.statistics, experiment.lambdas, experiment.box_sizes,
            experiment.n_samples, experiment.c1, experiment.c2, experiment.horizon,
            experiment.range, experiment.cap, experiment.box_length, experiment.half_width,
            experiment.time
        );
        if other.seed.is_some() {
            self.seed = other.seed;
        }
        if other.workers.is_some() {
            self.workers = other.workers;
        }
        if other.output.is_some() {
            self.output = other.output;
        }
    }

    /// Model parameters with documented defaults filled in and validated.
    pub fn params(&self) -> Result<ModelParams, CliError> {
        let m = &self.model;
        let lambda = m.lambda.ok_or_else(|| missing("model.lambda"))?;
        let alpha = m.alpha.ok_or_else(|| missing("model.alpha"))?;
        let mut p = ModelParams::new(lambda, alpha)
            .with_dim(m.d.unwrap_or(1))
            .with_radius(m.radius.unwrap_or(1.0))
            .with_diffusion(m.diffusion.unwrap_or(1.0))
            .with_drift(m.drift.clone().unwrap_or_default());
        if let Some(b) = m.infection_rate {
            p = p.with_infection_rate(InfectionRate::Finite(b));
        }
        p.validate()?;
        Ok(p)
    }

    /// Fill in every default so the config records exactly what ran.
    pub fn fill_defaults(&mut self) -> Result<(), CliError> {
        let p = self.params()?;
        let m = &mut self.model;
        m.d = Some(p.dim);
        m.radius = Some(p.radius);
        m.diffusion = Some(p.diffusion);
        m.drift = Some(p.drift.clone());
        let s = &mut self.sim;
        s.dt.get_or_insert(p.default_dt());
        s.detector.get_or_insert(DetectorMode::Bridge);
        s.window.get_or_insert(WindowSetting::Auto);
        s.window_sigmas.get_or_insert(snails::experiments::DEFAULT_WINDOW_SIGMAS);
        s.pilot_runs.get_or_insert(DEFAULT_PILOT_RUNS);
        self.seed.get_or_insert(DEFAULT_SEED);
        self.workers.get_or_insert(1);
        if self.workers == Some(0) {
            return Err(CliError::Usage("invalid value for `workers`: must be at least 1".into()));
        }
        Ok(())
    }

    pub fn t_max(&self) -> Result<f64, CliError> {
        let t = self.sim.t_max.ok_or_else(|| missing("sim.t_max"))?;
        positive("sim.t_max", t)
    }

    pub fn n_runs(&self) -> Result<usize, CliError> {
        let n = self.experiment.n_runs.ok_or_else(|| missing("experiment.n_runs"))?;
        if n == 0 {
            return Err(CliError::Usage("invalid value for `n_runs`: must be at least 1".into()));
        }
        Ok(n)
    }
}

pub fn missing(field: &str) -> CliError {
    CliError::Usage(format!("missing required field `{field}`"))
}

pub fn positive(field: &str, v: f64) -> Result<f64, CliError> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(CliError::Usage(format!("invalid value for `{field}`: must be > 0, got {v}")))
    }
}
