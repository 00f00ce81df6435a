use serde::Serialize;

use super::{batch, check_runs, SimConfig};
use crate::error::{Error, Result};
use crate::stats::MeanEstimate;

/// `C2_hat = mean(∫ I dt) / T` from pilot runs to `horizon`.
pub fn estimate_c2(cfg: &SimConfig, horizon: f64, n_runs: usize) -> Result<MeanEstimate> {
    cfg.validate()?;
    check_runs(n_runs)?;
    let xs: Vec<f64> = batch(cfg, &cfg.run_spec(horizon), n_runs, true)?
        .iter()
        .map(|o| o.result.integral_infected / horizon)
        .collect();
    Ok(MeanEstimate::from_samples(&xs))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OccupationReport {
    pub c2_hat: f64,
    pub threshold: f64,
    pub horizon: f64,
    /// Per run, measure of `{t <= T : I(t) <= threshold}`.
    pub measures: Vec<f64>,
    /// Fraction of runs with measure at least `T / 2`.
    pub fraction_half: f64,
}

/// Measure of the time `I` spends at or below `2 c2_hat`, per run.
pub fn occupation_experiment(
    cfg: &SimConfig,
    c2_hat: f64,
    horizon: f64,
    n_runs: usize,
) -> Result<OccupationReport> {
    cfg.validate()?;
    check_runs(n_runs)?;
    if !(c2_hat.is_finite() && c2_hat >= 0.0) {
        return Err(Error::invalid("C2", format!("must be finite and >= 0, got {c2_hat}")));
    }
    let threshold = 2.0 * c2_hat;
    let spec = cfg.run_spec(horizon).with_occupation_thresholds(vec![threshold]);
    let measures: Vec<f64> = batch(cfg, &spec, n_runs, false)?
        .iter()
        .map(|o| o.result.occupation[0].1)
        .collect();
    let half = measures.iter().filter(|&&m| m >= horizon / 2.0).count();
    Ok(OccupationReport {
        c2_hat,
        threshold,
        horizon,
        fraction_half: half as f64 / n_runs as f64,
        measures,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TruncationReport {
    pub cap: usize,
    pub alpha: f64,
    pub horizon: f64,
    /// Per run `∫ I'(t) dt` over `[0, horizon]`.
    pub integrals: Vec<f64>,
    pub mean: MeanEstimate,
    /// `cap / alpha + 3 s.e.`
    pub mean_bound: f64,
    pub max_infections: usize,
    /// Largest relative gap between the log integral and the summed
    /// lifetimes over all runs.
    pub lifetime_identity_error: f64,
    /// Largest amount by which the Erlang(cap, alpha) CDF exceeds the
    /// empirical CDF of the integrals; negative values mean dominance with
    /// room to spare.
    pub cdf_excess: f64,
    /// Dvoretzky–Kiefer–Wolfowitz 95% band half-width for `n_runs`.
    pub dkw_band: f64,
}

impl TruncationReport {
    pub fn mean_dominated(&self) -> bool {
        self.mean.mean <= self.mean_bound
    }

    pub fn cdf_dominated(&self) -> bool {
        self.cdf_excess <= self.dkw_band
    }
}

/// Runs with at most `cap` infections (origin included), compared against
/// the sum of `cap` independent `Exp(alpha)` lifetimes.
pub fn truncation_experiment(
    cfg: &SimConfig,
    cap: usize,
    horizon: f64,
    n_runs: usize,
) -> Result<TruncationReport> {
    check_runs(n_runs)?;
    let alpha = cfg.params.alpha;
    if alpha <= 0.0 {
        return Err(Error::invalid("alpha", "truncation bound needs alpha > 0"));
    }
    let cfg = cfg.clone().with_truncation(Some(cap));
    cfg.validate()?;
    let results: Vec<_> = batch(&cfg, &cfg.run_spec(horizon), n_runs, false)?
        .into_iter()
        .map(|o| o.result)
        .collect();
    let integrals: Vec<f64> = results.iter().map(|r| r.integral_infected).collect();
    let lifetime_identity_error = results
        .iter()
        .map(|r| {
            let scale = r.lifetime_sum.abs().max(f64::MIN_POSITIVE);
            (r.integral_infected - r.lifetime_sum).abs() / scale
        })
        .fold(0.0, f64::max);
    let mean = MeanEstimate::from_samples(&integrals);
    // signed excess F_erlang - F_emp, maximised over the sample
    let mut sorted = integrals.clone();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let cdf_excess = sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| erlang_cdf(cap, alpha, x) - (i + 1) as f64 / n)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(TruncationReport {
        cap,
        alpha,
        horizon,
        mean_bound: cap as f64 / alpha + 3.0 * mean.se,
        max_infections: results.iter().map(|r| r.total_infections).max().unwrap_or(0),
        lifetime_identity_error,
        cdf_excess,
        dkw_band: ((2.0f64 / 0.05).ln() / (2.0 * n)).sqrt(),
        mean,
        integrals,
    })
}

/// `P(Gamma(k, rate) <= x)` as one minus a Poisson(`rate x`) lower tail.
pub(crate) fn erlang_cdf(k: usize, rate: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let m = rate * x;
    // sum_{j<k} e^{-m} m^j / j!, accumulated in log space
    let mut log_term = -m;
    let mut tail = 0.0;
    for j in 0..k {
        if j > 0 {
            log_term += m.ln() - (j as f64).ln();
        }
        tail += log_term.exp();
    }
    (1.0 - tail).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::RngStream;
    use crate::model::ModelParams;
    use crate::stats::ks_distance;

    #[test]
    fn erlang_cdf_matches_sampled_sums() {
        let mut rng = RngStream::new(11, 0);
        for (k, rate) in [(1usize, 1.0), (3, 2.0), (20, 0.5)] {
            let sums: Vec<f64> = (0..20_000)
                .map(|_| (0..k).map(|_| rng.standard_exponential() / rate).sum())
                .collect();
            let d = ks_distance(&sums, |x| erlang_cdf(k, rate, x));
            assert!(d < 0.015, "k={k} d={d}");
        }
        assert!((erlang_cdf(1, 1.0, 1.0) - (1.0 - (-1.0f64).exp())).abs() < 1e-15);
        assert_eq!(erlang_cdf(5, 1.0, 0.0), 0.0);
    }

    #[test]
    fn truncation_report_basics() {
        let cfg = SimConfig::new(ModelParams::new(1.0, 1.0), 2.5, 1).with_dt(0.02);
        let rep = truncation_experiment(&cfg, 5, 20.0, 300).unwrap();
        assert!(rep.max_infections <= 5);
        assert!(rep.lifetime_identity_error < 1e-12);
        assert!(rep.mean_dominated(), "{:?}", rep.mean);
        assert!(rep.cdf_dominated(), "{}", rep.cdf_excess);
    }

    #[test]
    fn cap_of_one_is_the_origin_lifetime() {
        let cfg = SimConfig::new(ModelParams::new(1.0, 2.0), 2.5, 2).with_dt(0.02);
        let rep = truncation_experiment(&cfg, 1, 30.0, 2000).unwrap();
        assert_eq!(rep.max_infections, 1);
        let d = ks_distance(&rep.integrals, |x| erlang_cdf(1, 2.0, x));
        assert!(d < 0.04, "{d}");
    }

    #[test]
    fn occupation_with_infinite_threshold_is_full() {
        let cfg = SimConfig::new(ModelParams::new(1.0, 1.0), 2.5, 3).with_dt(0.02);
        let rep = occupation_experiment(&cfg, 1e9, 5.0, 20).unwrap();
        assert!(rep.measures.iter().all(|&m| (m - 5.0).abs() < 1e-12));
        assert_eq!(rep.fraction_half, 1.0);
    }

    #[test]
    fn c2_of_lone_particle_is_mean_lifetime_over_t() {
        // lone particle: ∫ I = min(Exp(1), T)
        let cfg = SimConfig::new(ModelParams::new(1e-9, 1.0), 0.0, 4).with_dt(0.01);
        let t = 3.0;
        let est = estimate_c2(&cfg, t, 4000).unwrap();
        let exact = (1.0 - (-t).exp()) / t;
        assert!((est.mean - exact).abs() < 4.0 * est.se, "{} vs {exact}", est.mean);
    }
}
