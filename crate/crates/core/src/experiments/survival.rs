use std::io::Write;

use serde::Serialize;

use super::{batch, check_runs, SimConfig};
use crate::error::{Error, Result};
use crate::observables::RunResult;
use crate::stats::{weighted_linear_fit, wilson_interval, Z95};

/// Fits only use horizons with at least this many surviving runs.
pub const MIN_SURVIVORS: usize = 10;

/// Estimates of `P(extinction time >= T)` with Wilson 95% intervals.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SurvivalCurve {
    pub horizons: Vec<f64>,
    pub n_runs: usize,
    pub survivors: Vec<usize>,
    pub estimate: Vec<f64>,
    pub ci_low: Vec<f64>,
    pub ci_high: Vec<f64>,
}

/// Weighted least-squares fit `log P(T) = intercept - c_hat * T`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FitResult {
    pub c_hat: f64,
    pub c_se: f64,
    pub c_ci: (f64, f64),
    pub intercept: f64,
    /// Weighted residual sum of squares.
    pub chi2: f64,
    pub horizons_used: Vec<f64>,
    /// Residual of `log P` at each used horizon in units of its standard
    /// error.
    pub residual_z: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SurvivalReport {
    pub curve: SurvivalCurve,
    pub fit: Option<FitResult>,
    /// Why no fit was produced.
    pub fit_unavailable: Option<String>,
    pub window_half_width: f64,
    pub runs: Vec<RunResult>,
}

/// Run `n_runs` simulations to the largest horizon and estimate the survival
/// function on the horizon grid. A run that is still alive at the largest
/// horizon counts as surviving every horizon.
pub fn survival_experiment(
    cfg: &SimConfig,
    horizons: &[f64],
    n_runs: usize,
) -> Result<SurvivalReport> {
    cfg.validate()?;
    check_runs(n_runs)?;
    if horizons.is_empty() || horizons.iter().any(|h| !(h.is_finite() && *h > 0.0)) {
        return Err(Error::invalid("horizons", "need at least one positive horizon"));
    }
    if horizons.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::invalid("horizons", "must be strictly increasing"));
    }
    let t_max = *horizons.last().expect("nonempty");
    let runs: Vec<RunResult> = batch(cfg, &cfg.run_spec(t_max), n_runs, false)?
        .into_iter()
        .map(|o| o.result)
        .collect();
    let curve = survival_curve(&runs, horizons);
    let (fit, fit_unavailable) = match fit_decay(&curve) {
        Ok(f) => (Some(f), None),
        Err(why) => (None, Some(why)),
    };
    Ok(SurvivalReport {
        curve,
        fit,
        fit_unavailable,
        window_half_width: cfg.half_width(t_max),
        runs,
    })
}

pub(crate) fn survives(r: &RunResult, horizon: f64) -> bool {
    r.censored || r.extinction_time >= horizon
}

fn survival_curve(runs: &[RunResult], horizons: &[f64]) -> SurvivalCurve {
    let n = runs.len();
    let survivors: Vec<usize> = horizons
        .iter()
        .map(|&h| runs.iter().filter(|r| survives(r, h)).count())
        .collect();
    let (ci_low, ci_high) = survivors.iter().map(|&s| wilson_interval(s, n, Z95)).unzip();
    SurvivalCurve {
        horizons: horizons.to_vec(),
        n_runs: n,
        estimate: survivors.iter().map(|&s| s as f64 / n as f64).collect(),
        survivors,
        ci_low,
        ci_high,
    }
}

fn fit_decay(curve: &SurvivalCurve) -> std::result::Result<FitResult, String> {
    let n = curve.n_runs as f64;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut vars = Vec::new();
    for (k, &s) in curve.survivors.iter().enumerate() {
        // a horizon every run survives carries no decay information
        if s < MIN_SURVIVORS || s == curve.n_runs {
            continue;
        }
        let p = curve.estimate[k];
        xs.push(curve.horizons[k]);
        ys.push(p.ln());
        vars.push((1.0 - p) / (n * p));
    }
    if xs.len() < 2 {
        return Err(format!(
            "{} horizon(s) with at least {MIN_SURVIVORS} survivors; need 2",
            xs.len()
        ));
    }
    let ws: Vec<f64> = vars.iter().map(|v| 1.0 / v).collect();
    let fit = weighted_linear_fit(&xs, &ys, &ws).ok_or("degenerate horizon grid")?;
    let c_hat = -fit.slope;
    let residual_z = xs
        .iter()
        .zip(&ys)
        .zip(&vars)
        .map(|((x, y), v)| (y - fit.predict(*x)) / v.sqrt())
        .collect();
    Ok(FitResult {
        c_hat,
        c_se: fit.slope_se,
        c_ci: (c_hat - Z95 * fit.slope_se, c_hat + Z95 * fit.slope_se),
        intercept: fit.intercept,
        chi2: fit.chi2,
        horizons_used: xs,
        residual_z,
    })
}

impl SurvivalCurve {
    pub fn write_csv<W: Write>(&self, out: W, fit: Option<&FitResult>) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["horizon", "n_runs", "survivors", "survival", "ci_low", "ci_high", "used_in_fit"])?;
        for k in 0..self.horizons.len() {
            let used = fit.is_some_and(|f| f.horizons_used.contains(&self.horizons[k]));
            w.write_record([
                format!("{}", self.horizons[k]),
                self.n_runs.to_string(),
                self.survivors[k].to_string(),
                format!("{:.16e}", self.estimate[k]),
                format!("{:.16e}", self.ci_low[k]),
                format!("{:.16e}", self.ci_high[k]),
                used.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}
