//! Quantities derived from event logs and state snapshots.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::kernel::Point;
use crate::model::{EventKind, EventLog, Health, RunSpec, SimState, StepObserver};

/// Values sampled at strictly increasing times.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TimeSeries {
    times: Vec<f64>,
    values: Vec<f64>,
}

impl TimeSeries {
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.len() != values.len() {
            return Err(Error::invalid("values", "length differs from times"));
        }
        if times.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::invalid("times", "must be strictly increasing"));
        }
        Ok(Self { times, values })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Per-run summary.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunResult {
    /// Time of the last removal, or the horizon when `censored`.
    pub extinction_time: f64,
    pub censored: bool,
    pub total_infections: usize,
    /// `∫ I(t) dt` over `[0, t_max]`, from the event log.
    pub integral_infected: f64,
    /// Sum over ever-infected particles of their time infected up to
    /// `t_max`, from particle timestamps. Equals `integral_infected` up to
    /// rounding.
    pub lifetime_sum: f64,
    pub entry_count: Option<usize>,
    /// Largest distance from the origin at which an infection happened.
    pub max_infection_radius: f64,
    /// `(threshold, measure of {t <= t_max : I(t) <= threshold})`.
    pub occupation: Vec<(f64, f64)>,
    pub truncated: bool,
    pub particles: usize,
}

/// Summary of a finished (or stopped) run.
pub fn summarize(state: &SimState, spec: &RunSpec) -> RunResult {
    let log = state.log();
    let steps = infected_steps(log);
    let (extinction_time, censored) = if state.is_extinct() {
        let last = log
            .iter()
            .rev()
            .find(|e| e.kind == EventKind::Remove)
            .map_or(0.0, |e| e.time);
        (last, false)
    } else {
        (spec.t_max, true)
    };
    RunResult {
        extinction_time,
        censored,
        total_infections: log.iter().filter(|e| e.kind == EventKind::Infect).count(),
        integral_infected: step_integral(&steps, spec.t_max),
        lifetime_sum: state.lifetime_sum(spec.t_max),
        entry_count: state.entry_count(),
        max_infection_radius: max_infection_radius(log),
        occupation: spec
            .occupation_thresholds
            .iter()
            .map(|&thr| (thr, step_occupation(&steps, thr, spec.t_max)))
            .collect(),
        truncated: state.truncated(),
        particles: state.len(),
    }
}

/// `I(t)` as a right-continuous step function: `(time, value from then on)`,
/// one entry per distinct event time.
fn infected_steps(log: &EventLog) -> Vec<(f64, i64)> {
    let mut out: Vec<(f64, i64)> = Vec::new();
    let mut level = 0i64;
    for e in log.iter() {
        let delta = match e.kind {
            EventKind::Infect => 1,
            EventKind::Remove => -1,
            EventKind::Truncate => 0,
        };
        level += delta;
        match out.last_mut() {
            Some(last) if last.0 == e.time => last.1 = level,
            _ => out.push((e.time, level)),
        }
    }
    out
}

fn step_integral(steps: &[(f64, i64)], horizon: f64) -> f64 {
    let mut total = 0.0;
    for (k, &(t, v)) in steps.iter().enumerate() {
        if t >= horizon {
            break;
        }
        let end = steps.get(k + 1).map_or(horizon, |s| s.0.min(horizon));
        total += v as f64 * (end - t);
    }
    total
}

fn step_occupation(steps: &[(f64, i64)], threshold: f64, horizon: f64) -> f64 {
    // before the first event nothing is infected
    let first = steps.first().map_or(horizon, |s| s.0.min(horizon));
    let mut total = first.max(0.0);
    for (k, &(t, v)) in steps.iter().enumerate() {
        if t >= horizon {
            break;
        }
        let end = steps.get(k + 1).map_or(horizon, |s| s.0.min(horizon));
        if v as f64 <= threshold {
            total += end - t;
        }
    }
    total
}

/// `I(t)` at each grid time, reconstructed from the log.
pub fn infected_count_series(log: &EventLog, grid: &[f64]) -> Result<TimeSeries> {
    log.validate()?;
    let steps = infected_steps(log);
    let values = grid
        .iter()
        .map(|&t| {
            let k = steps.partition_point(|s| s.0 <= t);
            if k == 0 {
                0.0
            } else {
                steps[k - 1].1 as f64
            }
        })
        .collect();
    TimeSeries::new(grid.to_vec(), values)
}

/// `∫_0^horizon I(t) dt`, exact for the piecewise-constant path.
pub fn integral_infected(log: &EventLog, horizon: f64) -> f64 {
    step_integral(&infected_steps(log), horizon)
}

/// Lebesgue measure of `{t in [0, horizon] : I(t) <= threshold}`.
pub fn occupation_time(log: &EventLog, threshold: f64, horizon: f64) -> Result<f64> {
    if threshold.is_nan() || threshold < 0.0 {
        return Err(Error::invalid("threshold", format!("must be >= 0, got {threshold}")));
    }
    Ok(step_occupation(&infected_steps(log), threshold, horizon))
}

pub fn max_infection_radius(log: &EventLog) -> f64 {
    log.iter()
        .filter(|e| e.kind == EventKind::Infect)
        .map(|e| e.position.norm())
        .fold(0.0, f64::max)
}

/// Particles whose sampled position is within `range` of the origin at some
/// snapshot time `<= horizon`. Every snapshot must list the same particles.
pub fn entry_count<'a, I>(snapshots: I, range: f64, horizon: f64) -> usize
where
    I: IntoIterator<Item = (f64, &'a [Point])>,
{
    let r2 = range * range;
    let mut entered: Vec<bool> = Vec::new();
    for (t, pts) in snapshots {
        if t > horizon {
            break;
        }
        if entered.is_empty() {
            entered = vec![false; pts.len()];
        }
        for (e, p) in entered.iter_mut().zip(pts) {
            *e |= p.norm2() <= r2;
        }
    }
    entered.iter().filter(|&&e| e).count()
}

/// Extremes of the currently infected set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum Front {
    /// Leftmost and rightmost infected positions on the line; `(+inf, -inf)`
    /// when nothing is infected.
    Line { left: f64, right: f64 },
    /// Largest distance of an infected particle from the origin in d >= 2;
    /// `-inf` when nothing is infected.
    Radial(f64),
}

impl Front {
    pub fn of(state: &SimState) -> Self {
        let pos = state.positions();
        if state.params().dim == 1 {
            let (mut left, mut right) = (f64::INFINITY, f64::NEG_INFINITY);
            for &i in state.infected() {
                left = left.min(pos[i].x());
                right = right.max(pos[i].x());
            }
            Front::Line { left, right }
        } else {
            Front::Radial(
                state
                    .infected()
                    .iter()
                    .map(|&i| pos[i].norm())
                    .fold(f64::NEG_INFINITY, f64::max),
            )
        }
    }

    /// `max(-L, R)` on the line, the radial extent otherwise.
    pub fn extent(&self) -> f64 {
        match *self {
            Front::Line { left, right } => (-left).max(right),
            Front::Radial(r) => r,
        }
    }
}

/// Observer sampling the infection front at grid times, plus the running
/// supremum of its extent over all steps.
#[derive(Clone, Debug)]
pub struct FrontRecorder {
    grid: Vec<f64>,
    next: usize,
    sup: f64,
    fronts: Vec<Front>,
    sups: Vec<f64>,
    /// Running maximum of the extent over all steps, to the latest one.
    latest_sup: f64,
}

/// Fronts recorded at each grid time.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FrontSeries {
    pub times: Vec<f64>,
    pub fronts: Vec<Front>,
    /// `sup_{s <= t}` of the extent, at step resolution.
    pub sup_extent: Vec<f64>,
}

impl FrontSeries {
    /// `(L, R)` series on the line, or the radial series in d >= 2.
    pub fn split(&self) -> Result<(TimeSeries, Option<TimeSeries>)> {
        let mut a = Vec::with_capacity(self.fronts.len());
        let mut b = Vec::with_capacity(self.fronts.len());
        for f in &self.fronts {
            match *f {
                Front::Line { left, right } => {
                    a.push(left);
                    b.push(right);
                }
                Front::Radial(r) => a.push(r),
            }
        }
        let first = TimeSeries::new(self.times.clone(), a)?;
        let second = if b.is_empty() {
            None
        } else {
            Some(TimeSeries::new(self.times.clone(), b)?)
        };
        Ok((first, second))
    }
}

impl FrontRecorder {
    pub fn new(grid: &[f64]) -> Result<Self> {
        TimeSeries::new(grid.to_vec(), vec![0.0; grid.len()])?;
        Ok(Self {
            grid: grid.to_vec(),
            next: 0,
            sup: f64::NEG_INFINITY,
            fronts: Vec::with_capacity(grid.len()),
            sups: Vec::with_capacity(grid.len()),
            latest_sup: f64::NEG_INFINITY,
        })
    }

    /// Grid times not reached by the run (it went extinct) are filled with
    /// an empty front.
    pub fn finish(mut self) -> FrontSeries {
        let empty_like = self.fronts.last().copied().map(|f| match f {
            Front::Line { .. } => Front::Line {
                left: f64::INFINITY,
                right: f64::NEG_INFINITY,
            },
            Front::Radial(_) => Front::Radial(f64::NEG_INFINITY),
        });
        while self.fronts.len() < self.grid.len() {
            self.fronts.push(empty_like.unwrap_or(Front::Radial(f64::NEG_INFINITY)));
            self.sups.push(self.sup);
        }
        FrontSeries {
            times: self.grid,
            fronts: self.fronts,
            sup_extent: self.sups,
        }
    }

    pub fn latest_sup(&self) -> f64 {
        self.latest_sup
    }
}

impl StepObserver for FrontRecorder {
    fn observe(&mut self, state: &SimState) {
        let front = Front::of(state);
        self.sup = self.sup.max(front.extent());
        self.latest_sup = self.sup;
        let t = state.time();
        while self.next < self.grid.len() && t >= self.grid[self.next] - 1e-9 {
            self.fronts.push(front);
            self.sups.push(self.sup);
            self.next += 1;
        }
    }
}

/// Number of infected particles counted directly from a state.
pub fn count_infected(state: &SimState) -> usize {
    (0..state.len())
        .filter(|&i| state.health(i) == Health::Infected)
        .count()
}

/// One results row per run.
pub fn write_run_rows<W: Write>(
    out: W,
    thresholds: &[f64],
    rows: &[(usize, u64, RunResult)],
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = [
        "run_id",
        "seed",
        "extinction_time",
        "censored",
        "total_infections",
        "integral_I",
        "N_entry",
        "max_inf_radius",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    header.extend(thresholds.iter().map(|t| format!("occupation_le_{t}")));
    w.write_record(&header)?;
    for (run_id, seed, r) in rows {
        let mut rec = vec![
            run_id.to_string(),
            seed.to_string(),
            format!("{:.16e}", r.extinction_time),
            r.censored.to_string(),
            r.total_infections.to_string(),
            format!("{:.16e}", r.integral_infected),
            r.entry_count.map_or(String::new(), |n| n.to_string()),
            format!("{:.16e}", r.max_infection_radius),
        ];
        rec.extend(r.occupation.iter().map(|(_, m)| format!("{m:.16e}")));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
