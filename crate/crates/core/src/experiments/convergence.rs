use std::io::Write;

use serde::{Deserialize, Serialize};

use super::survival::survives;
use super::{batch, check_runs, SimConfig};
use crate::error::{Error, Result};
use crate::model::DetectorMode;
use crate::stats::{wilson_interval, MeanEstimate, Z95};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Statistic {
    /// `P(extinction time >= horizon)`.
    Survival,
    /// Mean number of infections up to the horizon.
    Infections,
    /// Mean largest distance of an infection from the origin.
    Front,
}

impl Statistic {
    pub const ALL: [Statistic; 3] = [Statistic::Survival, Statistic::Infections, Statistic::Front];

    pub fn as_str(self) -> &'static str {
        match self {
            Statistic::Survival => "survival",
            Statistic::Infections => "infections",
            Statistic::Front => "front",
        }
    }
}

/// Estimates for one detector mode and step size.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub detector: DetectorMode,
    pub dt: f64,
    pub survival: f64,
    pub survival_se: f64,
    pub survival_ci: (f64, f64),
    pub infections: MeanEstimate,
    pub front: MeanEstimate,
}

impl ConvergenceRow {
    /// `(estimate, standard error)` of a statistic.
    pub fn get(&self, stat: Statistic) -> (f64, f64) {
        match stat {
            Statistic::Survival => (self.survival, self.survival_se),
            Statistic::Infections => (self.infections.mean, self.infections.se),
            Statistic::Front => (self.front.mean, self.front.se),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvergenceStudy {
    pub horizon: f64,
    pub n_runs: usize,
    pub statistics: Vec<Statistic>,
    pub rows: Vec<ConvergenceRow>,
}

impl ConvergenceStudy {
    pub fn row(&self, detector: DetectorMode, dt: f64) -> Option<&ConvergenceRow> {
        self.rows.iter().find(|r| r.detector == detector && r.dt == dt)
    }

    /// `|a - b|` over the pooled standard error `sqrt(se_a^2 + se_b^2)`.
    pub fn pooled_z(&self, stat: Statistic, detector: DetectorMode, dt_a: f64, dt_b: f64) -> Option<f64> {
        let (a, sa) = self.row(detector, dt_a)?.get(stat);
        let (b, sb) = self.row(detector, dt_b)?.get(stat);
        Some((a - b).abs() / (sa * sa + sb * sb).sqrt())
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["detector".to_string(), "dt".to_string(), "n_runs".to_string()];
        for s in &self.statistics {
            header.push(s.as_str().to_string());
            header.push(format!("{}_se", s.as_str()));
        }
        w.write_record(&header)?;
        for row in &self.rows {
            let mut rec = vec![row.detector.to_string(), row.dt.to_string(), self.n_runs.to_string()];
            for &s in &self.statistics {
                let (v, se) = row.get(s);
                rec.push(format!("{v:.16e}"));
                rec.push(format!("{se:.16e}"));
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Re-run the same batch at each step size and detector mode. Run `i` uses
/// stream `i` throughout, so the initial fields are shared across rows.
pub fn convergence_study(
    cfg: &SimConfig,
    dts: &[f64],
    horizon: f64,
    n_runs: usize,
    statistics: &[Statistic],
) -> Result<ConvergenceStudy> {
    check_runs(n_runs)?;
    if dts.is_empty() {
        return Err(Error::invalid("dt_grid", "need at least one step size"));
    }
    let statistics = if statistics.is_empty() {
        Statistic::ALL.to_vec()
    } else {
        statistics.to_vec()
    };
    let mut rows = Vec::new();
    for detector in [DetectorMode::Bridge, DetectorMode::Naive] {
        for &dt in dts {
            let c = cfg.clone().with_dt(dt).with_detector(detector);
            c.validate()?;
            let results: Vec<_> = batch(&c, &c.run_spec(horizon), n_runs, false)?
                .into_iter()
                .map(|o| o.result)
                .collect();
            let s = results.iter().filter(|r| survives(r, horizon)).count();
            let p = s as f64 / n_runs as f64;
            let infections: Vec<f64> = results.iter().map(|r| r.total_infections as f64).collect();
            let fronts: Vec<f64> = results.iter().map(|r| r.max_infection_radius).collect();
            rows.push(ConvergenceRow {
                detector,
                dt,
                survival: p,
                survival_se: (p * (1.0 - p) / n_runs as f64).sqrt(),
                survival_ci: wilson_interval(s, n_runs, Z95),
                infections: MeanEstimate::from_samples(&infections),
                front: MeanEstimate::from_samples(&fronts),
            });
        }
    }
    Ok(ConvergenceStudy {
        horizon,
        n_runs,
        statistics,
        rows,
    })
}
