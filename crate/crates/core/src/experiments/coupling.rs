use serde::Serialize;

use super::{check_runs, SimConfig};
use crate::error::{Error, Result};
use crate::model::{init_configuration, EventKind, EventLog, Health, SimOptions, SimState};

/// A particle infected in the run with removal but susceptible in the
/// removal-free run at the same step.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Violation {
    pub run: usize,
    pub master_seed: u64,
    pub stream_id: u64,
    pub step: u64,
    pub time: f64,
    pub particle: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CouplingReport {
    pub n_runs: usize,
    pub alpha: f64,
    pub t_max: f64,
    /// Runs in which every step satisfied containment.
    pub contained_runs: usize,
    pub steps_checked: u64,
    pub violations: Vec<Violation>,
}

impl CouplingReport {
    pub fn all_contained(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Runs `cfg.params` and its removal-free version in lockstep from the same
/// streams and checks after every step that each particle ever infected with
/// removal is infected without it.
pub fn coupling_experiment(cfg: &SimConfig, t_max: f64, n_runs: usize) -> Result<CouplingReport> {
    cfg.validate()?;
    check_runs(n_runs)?;
    if cfg.params.alpha <= 0.0 {
        return Err(Error::invalid("alpha", "coupling compares alpha > 0 with alpha = 0"));
    }
    let window = cfg.window(t_max)?;
    let spec = cfg.run_spec(t_max);
    let per_run = crate::parallel::map_indexed(n_runs, cfg.workers, |i| {
        let rng = cfg.stream(i);
        let mut zero = cfg.params.clone();
        zero.alpha = 0.0;
        let opts = SimOptions {
            max_particles: cfg.max_particles,
            ..Default::default()
        };
        let mut a = init_configuration(&cfg.params, &window, &rng, &opts)?;
        let mut b = init_configuration(&zero, &window, &rng, &opts)?;
        let mut seen = 0;
        let mut steps = 0;
        let mut bad = check_new(&a, &b, &mut seen, i, &rng);
        let n = spec.step_count();
        for k in 1..=n {
            if bad.is_some() || a.is_extinct() {
                break;
            }
            let t_end = if k == n { t_max } else { spec.grid_time(k) };
            a.step_to(t_end, cfg.detector)?;
            b.step_to(t_end, cfg.detector)?;
            steps += 1;
            bad = check_new(&a, &b, &mut seen, i, &rng);
        }
        Ok((steps, bad))
    })?;
    let steps_checked = per_run.iter().map(|r| r.0).sum();
    let violations: Vec<Violation> = per_run.into_iter().filter_map(|r| r.1).collect();
    Ok(CouplingReport {
        n_runs,
        alpha: cfg.params.alpha,
        t_max,
        contained_runs: n_runs - violations.len(),
        steps_checked,
        violations,
    })
}

/// Check the infections logged in `a` since event `seen`.
fn check_new(
    a: &SimState,
    b: &SimState,
    seen: &mut usize,
    run: usize,
    rng: &crate::kernel::RngStream,
) -> Option<Violation> {
    let events = a.log().events();
    let fresh = &events[*seen..];
    *seen = events.len();
    fresh
        .iter()
        .filter(|e| e.kind == EventKind::Infect)
        .find(|e| b.health(e.particle) == Health::Susceptible)
        .map(|e| Violation {
            run,
            master_seed: rng.master_seed(),
            stream_id: rng.stream_id(),
            step: a.steps(),
            time: a.time(),
            particle: e.particle,
        })
}

/// Event logs of two configurations run from the same stream, for
/// side-by-side comparison.
pub fn coupled_logs(
    first: &SimConfig,
    second: &SimConfig,
    t_max: f64,
    run: usize,
) -> Result<(EventLog, EventLog)> {
    let go = |cfg: &SimConfig| -> Result<EventLog> {
        let out = crate::model::run(&cfg.params, &first.window(t_max)?, &first.stream(run), &cfg.run_spec(t_max))?;
        Ok(out.log)
    };
    Ok((go(first)?, go(second)?))
}
