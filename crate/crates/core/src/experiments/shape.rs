use std::io::Write;

use serde::Serialize;

use super::{check_runs, observed_batch, SimConfig};
use crate::error::{Error, Result};
use crate::observables::FrontRecorder;
use crate::stats::quantile_sorted;

/// Quantile levels reported for the front envelopes.
pub const QUANTILES: [f64; 6] = [0.05, 0.25, 0.5, 0.75, 0.95, 0.99];

/// Quantile level defining the pilot front speed.
const C1_LEVEL: f64 = 0.99;

/// Front envelopes of removal-free runs.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ShapeReport {
    pub times: Vec<f64>,
    pub n_runs: usize,
    /// Runs whose front came close enough to the window edge that missing
    /// particles could matter; excluded from every statistic.
    pub overflow_runs: Vec<usize>,
    pub window_half_width: f64,
    /// Per time, quantiles (at [`QUANTILES`]) of the largest distance from
    /// the origin of a currently infected particle.
    pub front_quantiles: Vec<Vec<f64>>,
    /// Per time, quantiles of the running supremum of that distance.
    pub sup_quantiles: Vec<Vec<f64>>,
    /// Median current front divided by time.
    pub median_speed: Vec<f64>,
    /// 99th percentile of (sup front) / t at the largest time.
    pub c1_hat: f64,
    /// Fraction of used runs whose sup front reached `2 c1_hat t`.
    pub exceedance: Vec<f64>,
}

impl ShapeReport {
    pub fn used_runs(&self) -> usize {
        self.n_runs - self.overflow_runs.len()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string(), "used_runs".to_string()];
        header.extend(QUANTILES.iter().map(|q| format!("front_q{q}")));
        header.extend(QUANTILES.iter().map(|q| format!("sup_q{q}")));
        header.extend(["median_speed".into(), "exceedance_2c1t".into()]);
        w.write_record(&header)?;
        for (k, t) in self.times.iter().enumerate() {
            let mut rec = vec![t.to_string(), self.used_runs().to_string()];
            rec.extend(self.front_quantiles[k].iter().map(|v| format!("{v:.16e}")));
            rec.extend(self.sup_quantiles[k].iter().map(|v| format!("{v:.16e}")));
            rec.push(format!("{:.16e}", self.median_speed[k]));
            rec.push(format!("{:.16e}", self.exceedance[k]));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Removal-free runs to the largest grid time, recording the infection front
/// at every grid time.
pub fn shape_experiment(cfg: &SimConfig, times: &[f64], n_runs: usize) -> Result<ShapeReport> {
    shape_runs(cfg, times, n_runs, false)
}

fn shape_runs(cfg: &SimConfig, times: &[f64], n_runs: usize, pilot: bool) -> Result<ShapeReport> {
    cfg.validate()?;
    check_runs(n_runs)?;
    if cfg.params.alpha != 0.0 {
        return Err(Error::invalid("alpha", "front envelopes need alpha = 0"));
    }
    if times.is_empty() || times.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
        return Err(Error::invalid("times", "need at least one positive time"));
    }
    let t_max = *times.last().expect("nonempty");
    let spec = cfg.run_spec(t_max);
    let w = cfg.half_width(t_max);
    let guard = 0.5 * cfg.window_sigmas * (2.0 * cfg.params.diffusion * t_max).sqrt();
    let limit = (w - guard).max(cfg.params.radius);

    let recorded = observed_batch(cfg, &spec, n_runs, pilot, || {
        FrontRecorder::new(times).expect("times validated")
    })?;
    let mut overflow_runs = Vec::new();
    let mut series = Vec::new();
    for (i, (_, rec)) in recorded.into_iter().enumerate() {
        if rec.latest_sup() > limit {
            overflow_runs.push(i);
        } else {
            series.push(rec.finish());
        }
    }
    let nt = times.len();
    let mut front_quantiles = Vec::with_capacity(nt);
    let mut sup_quantiles = Vec::with_capacity(nt);
    let mut median_speed = Vec::with_capacity(nt);
    let mut sup_ratios_last = Vec::new();
    for (k, &t) in times.iter().enumerate() {
        let mut cur: Vec<f64> = series.iter().map(|s| s.fronts[k].extent()).collect();
        let mut sup: Vec<f64> = series.iter().map(|s| s.sup_extent[k]).collect();
        cur.sort_by(f64::total_cmp);
        sup.sort_by(f64::total_cmp);
        let q = |v: &[f64], p: f64| if v.is_empty() { f64::NAN } else { quantile_sorted(v, p) };
        front_quantiles.push(QUANTILES.iter().map(|&p| q(&cur, p)).collect());
        sup_quantiles.push(QUANTILES.iter().map(|&p| q(&sup, p)).collect());
        median_speed.push(q(&cur, 0.5) / t);
        if k + 1 == nt {
            sup_ratios_last = sup.iter().map(|s| s / t).collect();
        }
    }
    let c1_hat = if sup_ratios_last.is_empty() {
        f64::NAN
    } else {
        quantile_sorted(&sup_ratios_last, C1_LEVEL)
    };
    let used = series.len().max(1) as f64;
    let exceedance = times
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            series.iter().filter(|s| s.sup_extent[k] >= 2.0 * c1_hat * t).count() as f64 / used
        })
        .collect();
    Ok(ShapeReport {
        times: times.to_vec(),
        n_runs,
        overflow_runs,
        window_half_width: w,
        front_quantiles,
        sup_quantiles,
        median_speed,
        c1_hat,
        exceedance,
    })
}

/// Result of sizing the window from pilot runs.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PilotSpeed {
    /// 99th percentile of (sup front) / t at the pilot horizon.
    pub c1_hat: f64,
    pub horizon: f64,
    pub n_runs: usize,
    /// Window speeds tried; the last one had no overflowing run.
    pub speeds_tried: Vec<f64>,
}

/// Estimate the front speed with removal-free pilot runs (on streams disjoint
/// from the experiment's), doubling the trial window speed until no pilot
/// run overflows. `cfg.window_speed` is the first guess.
pub fn pilot_front_speed(cfg: &SimConfig, horizon: f64, n_runs: usize) -> Result<PilotSpeed> {
    let mut pilot = cfg.clone();
    pilot.params.alpha = 0.0;
    pilot.window_half_width = None;
    if !(pilot.window_speed > 0.0) {
        pilot.window_speed = 1.0;
    }
    let mut speeds_tried = Vec::new();
    for _ in 0..8 {
        speeds_tried.push(pilot.window_speed);
        let rep = shape_runs(&pilot, &[horizon], n_runs, true)?;
        if rep.overflow_runs.is_empty() {
            return Ok(PilotSpeed {
                c1_hat: rep.c1_hat,
                horizon,
                n_runs,
                speeds_tried,
            });
        }
        pilot.window_speed *= 2.0;
    }
    Err(Error::Precondition(format!(
        "pilot fronts kept overflowing the window up to speed {}",
        pilot.window_speed
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelParams;

    #[test]
    fn requires_no_removal() {
        let cfg = SimConfig::new(ModelParams::new(1.0, 1.0), 2.0, 1);
        assert!(shape_experiment(&cfg, &[1.0], 10).is_err());
    }

    #[test]
    fn empty_field_front_is_diffusive() {
        // a lone infected particle: the front is |B_t|, median sqrt(t) * 0.674
        let cfg = SimConfig::new(ModelParams::new(1e-9, 0.0), 0.0, 2).with_dt(0.01);
        let rep = shape_experiment(&cfg, &[1.0, 4.0], 2000).unwrap();
        assert!(rep.overflow_runs.is_empty());
        for (k, t) in [1.0f64, 4.0].iter().enumerate() {
            let median = rep.front_quantiles[k][2];
            let expect = 0.674_489_75 * t.sqrt();
            assert!((median / expect - 1.0).abs() < 0.08, "{median} vs {expect}");
        }
        // growth like sqrt(t), so front / t halves from t = 1 to t = 4
        let r = rep.median_speed[1] / rep.median_speed[0];
        assert!((r - 0.5).abs() < 0.06, "{r}");
    }

    #[test]
    fn overflow_is_flagged() {
        let cfg = SimConfig::new(ModelParams::new(1.0, 0.0), 0.0, 3)
            .with_dt(0.02)
            .with_window_half_width(Some(3.0));
        let rep = shape_experiment(&cfg, &[5.0], 20).unwrap();
        assert!(!rep.overflow_runs.is_empty());
        assert_eq!(rep.used_runs() + rep.overflow_runs.len(), 20);
    }

    #[test]
    fn pilot_widens_window_until_clean() {
        let cfg = SimConfig::new(ModelParams::new(1.0, 0.0), 0.1, 4).with_dt(0.02);
        let pilot = pilot_front_speed(&cfg, 5.0, 30).unwrap();
        assert!(pilot.speeds_tried.len() >= 2, "{pilot:?}");
        assert!(pilot.c1_hat > 0.5 && pilot.c1_hat.is_finite());
    }
}
