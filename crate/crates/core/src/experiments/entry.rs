use serde::Serialize;

use super::{batch, check_runs, SimConfig};
use crate::error::{Error, Result};
use crate::stats::{DispersionTest, MeanEstimate};

/// Counts of particles entering the ball of radius `range` about the origin
/// before the horizon.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EntryReport {
    pub range: f64,
    pub horizon: f64,
    pub window_half_width: f64,
    pub counts: Vec<usize>,
    /// Mean of `N`.
    pub mean: MeanEstimate,
    /// Mean against variance of `N - 1` (the origin particle always counts).
    pub dispersion: DispersionTest,
    /// `1 + 2 lambda range`, the expected count from particles starting
    /// inside the range (one dimension).
    pub lower_bound: f64,
    /// `5 lambda range`.
    pub upper_bound: f64,
}

impl EntryReport {
    pub fn mean_in_bounds(&self) -> bool {
        self.lower_bound <= self.mean.mean && self.mean.mean <= self.upper_bound
    }
}

/// Runs kept moving to `horizon` (even after extinction) while counting
/// entries. The window is sized from the range rather than the front:
/// `range + sigmas sqrt(2 D T) + |drift| T`.
pub fn entry_experiment(
    cfg: &SimConfig,
    range: f64,
    horizon: f64,
    n_runs: usize,
) -> Result<EntryReport> {
    cfg.validate()?;
    check_runs(n_runs)?;
    if !(range.is_finite() && range >= 0.0) {
        return Err(Error::invalid("range", format!("must be finite and >= 0, got {range}")));
    }
    let p = &cfg.params;
    let w = cfg.window_half_width.unwrap_or_else(|| {
        range
            + cfg.window_sigmas * (2.0 * p.diffusion * horizon).sqrt()
            + p.drift_vector().norm() * horizon
    });
    let cfg = cfg.clone().with_window_half_width(Some(w.max(2.0 * p.radius)));
    let spec = cfg.run_spec(horizon).with_entry_range(Some(range));
    let counts: Vec<usize> = batch(&cfg, &spec, n_runs, false)?
        .into_iter()
        .map(|o| o.result.entry_count.expect("entry tracking on"))
        .collect();
    let xs: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
    let shifted: Vec<f64> = xs.iter().map(|x| x - 1.0).collect();
    Ok(EntryReport {
        range,
        horizon,
        window_half_width: cfg.half_width(horizon),
        mean: MeanEstimate::from_samples(&xs),
        dispersion: DispersionTest::from_samples(&shifted),
        lower_bound: 1.0 + 2.0 * p.lambda * range,
        upper_bound: 5.0 * p.lambda * range,
        counts,
    })
}
