use serde::Serialize;

use super::events::{Event, EventKind, EventLog};
use super::params::{DetectorMode, InfectionRate, ModelParams};
use crate::error::{Error, Result};
use crate::kernel::{
    gap_crossing_probability, in_range, lane, pair_uniform, sample_exponential, sample_poisson_points,
    Point, Region, RngStream,
};
use crate::neighbor::{cluster_slots, NeighborIndex};

/// Epidemiological state of a particle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum Health {
    Susceptible,
    Infected,
    Removed,
}

/// Snapshot of one particle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Particle {
    pub id: usize,
    /// Position at time 0.
    pub x0: Point,
    pub x: Point,
    pub state: Health,
    pub t_infect: Option<f64>,
    /// Scheduled removal time; `None` while susceptible or when removal is
    /// disabled.
    pub t_remove: Option<f64>,
}

/// A susceptible particle that met an infected one during a step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Contact {
    pub particle: usize,
    pub time: f64,
}

/// Run-level switches that shape a [`SimState`] beyond the model itself.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct SimOptions {
    /// Cap on the total number of infection events, origin included.
    pub truncation: Option<usize>,
    /// Abort initialisation when the configuration holds more particles.
    pub max_particles: Option<usize>,
    /// Track which particles come within this distance of the origin.
    pub entry_range: Option<f64>,
}

/// Gaps larger than `sqrt(CUTOFF * diffusion * dt)` on both ends of a step
/// give a bridge crossing probability below `exp(-CUTOFF)`.
const BRIDGE_CUTOFF: f64 = 50.0;

/// Full state of one run.
///
/// Particle `0` starts infected at the origin; the others are a Poisson
/// sample on the window, numbered in sampling order. Particle data is kept
/// in parallel vectors indexed by id.
#[derive(Clone, Debug)]
pub struct SimState {
    params: ModelParams,
    window: Region,
    t: f64,
    steps: u64,
    x0: Vec<Point>,
    pos: Vec<Point>,
    prev: Vec<Point>,
    health: Vec<Health>,
    t_infect: Vec<Option<f64>>,
    t_remove: Vec<Option<f64>>,
    infected: Vec<usize>,
    index: NeighborIndex,
    index_fresh: bool,
    /// Length of the last step and the largest diffusive displacement in it.
    dt_last: f64,
    max_disp: f64,
    motion: RngStream,
    removal: RngStream,
    contact_key: u64,
    log: EventLog,
    truncation: Option<usize>,
    infections: usize,
    truncated: bool,
    entry_range: Option<f64>,
    entered: Vec<bool>,
    entry_count: usize,
}

/// Build the time-0 state: Poisson field on `window`, infected particle at
/// the origin, and the origin's radius cluster infected immediately.
pub fn init_configuration(
    params: &ModelParams,
    window: &Region,
    rng: &RngStream,
    options: &SimOptions,
) -> Result<SimState> {
    check_setup(params, window, options)?;
    let mut field = rng.substream(lane::FIELD);
    let sample = sample_poisson_points(&mut field, params.lambda, window)?;
    if let Some(cap) = options.max_particles {
        if sample.len() + 1 > cap {
            return Err(Error::ResourceLimit {
                reason: format!("{} particles exceed the cap of {cap}", sample.len() + 1),
                partial_log: Box::new(EventLog::new(params.dim)),
            });
        }
    }
    init_from_points(params, window, rng, options, sample)
}

/// Like [`init_configuration`] with the field given explicitly: particle 0
/// at the origin and particle `k` at `points[k - 1]`.
pub fn init_from_points(
    params: &ModelParams,
    window: &Region,
    rng: &RngStream,
    options: &SimOptions,
    points: Vec<Point>,
) -> Result<SimState> {
    check_setup(params, window, options)?;
    if let Some(k) = points.iter().position(|p| p.0[params.dim..].iter().any(|&c| c != 0.0)) {
        return Err(Error::invalid("points", format!("point {k} has more than {} coordinates", params.dim)));
    }
    let n = points.len() + 1;
    let mut x0 = Vec::with_capacity(n);
    x0.push(Point::ORIGIN);
    x0.extend(points);

    let index_radius = params.radius;
    let index = NeighborIndex::dense(&x0, params.dim, index_radius)?;
    let mut contact = rng.substream(lane::CONTACT);
    let contact_key = rand::RngCore::next_u64(&mut contact);

    let mut state = SimState {
        params: params.clone(),
        window: *window,
        t: 0.0,
        steps: 0,
        pos: x0.clone(),
        prev: x0.clone(),
        health: vec![Health::Susceptible; n],
        t_infect: vec![None; n],
        t_remove: vec![None; n],
        infected: Vec::new(),
        index,
        index_fresh: true,
        dt_last: 0.0,
        max_disp: 0.0,
        motion: rng.substream(lane::MOTION),
        removal: rng.substream(lane::REMOVAL),
        contact_key,
        log: EventLog::new(params.dim),
        truncation: options.truncation,
        infections: 0,
        truncated: false,
        entry_range: options.entry_range,
        entered: Vec::new(),
        entry_count: 0,
        x0,
    };
    state.infect(&[0])?;
    state.infect_closure(&[0], 0.0)?;
    if state.entry_range.is_some() {
        state.entered = vec![false; n];
        state.update_entries();
    }
    Ok(state)
}

fn check_setup(params: &ModelParams, window: &Region, options: &SimOptions) -> Result<()> {
    params.validate()?;
    if window.dim() != params.dim {
        return Err(Error::invalid(
            "window",
            format!("window has dimension {}, model has {}", window.dim(), params.dim),
        ));
    }
    if window.depth(&Point::ORIGIN) < params.radius {
        return Err(Error::invalid(
            "window",
            "must contain the origin with a margin of at least one radius",
        ));
    }
    if let Some(range) = options.entry_range {
        if !(range >= 0.0) {
            return Err(Error::invalid("entry_range", format!("must be >= 0, got {range}")));
        }
    }
    if options.truncation == Some(0) {
        return Err(Error::invalid("truncation", "cap must be at least 1"));
    }
    Ok(())
}

/// Probability that two particles whose separation moved from `d0` to `d1`
/// over a step came within `r` of each other, treating the separation as a
/// Brownian bridge with total variance `var` per coordinate.
///
/// Returns 1 when either endpoint is in range or the straight chord between
/// them passes through the ball; otherwise the one-sided crossing formula
/// for the nearest part of the sphere.
pub fn bridge_contact_probability(d0: &Point, d1: &Point, r: f64, var: f64) -> f64 {
    let r2 = r * r;
    let n1 = d1.norm2();
    let n0 = d0.norm2();
    if n1 <= r2 || n0 <= r2 {
        return 1.0;
    }
    let seg = d1.sub(d0);
    let l2 = seg.norm2();
    if l2 > 0.0 {
        let s = (-d0.dot(&seg) / l2).clamp(0.0, 1.0);
        let mut c = *d0;
        for k in 0..c.0.len() {
            c.0[k] += s * seg.0[k];
        }
        if c.norm2() <= r2 {
            return 1.0;
        }
    }
    gap_crossing_probability(n0.sqrt() - r, n1.sqrt() - r, var)
}

impl SimState {
    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn window(&self) -> &Region {
        &self.window
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    /// Number of completed steps.
    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn len(&self) -> usize {
        self.pos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pos.is_empty()
    }

    pub fn log(&self) -> &EventLog {
        &self.log
    }

    pub fn into_log(self) -> EventLog {
        self.log
    }

    pub fn particle(&self, id: usize) -> Option<Particle> {
        (id < self.len()).then(|| Particle {
            id,
            x0: self.x0[id],
            x: self.pos[id],
            state: self.health[id],
            t_infect: self.t_infect[id],
            t_remove: self.t_remove[id],
        })
    }

    pub fn particles(&self) -> impl Iterator<Item = Particle> + '_ {
        (0..self.len()).filter_map(|i| self.particle(i))
    }

    pub fn positions(&self) -> &[Point] {
        &self.pos
    }

    pub fn health(&self, id: usize) -> Health {
        self.health[id]
    }

    /// Ids of currently infected particles, in no particular order.
    pub fn infected(&self) -> &[usize] {
        &self.infected
    }

    pub fn infected_count(&self) -> usize {
        self.infected.len()
    }

    pub fn is_extinct(&self) -> bool {
        self.infected.is_empty()
    }

    /// Infection events so far, origin included.
    pub fn infections(&self) -> usize {
        self.infections
    }

    /// Whether the truncation cap has suppressed an infection.
    pub fn truncated(&self) -> bool {
        self.truncated
    }

    /// Particles that have been within the entry range of the origin at
    /// some step so far; `None` when entry tracking is off.
    pub fn entry_count(&self) -> Option<usize> {
        self.entry_range.map(|_| self.entry_count)
    }

    /// Move every particle, removed ones included, by drift plus a Gaussian
    /// increment, in id order.
    pub fn advance_positions(&mut self, dt: f64) -> Result<()> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::invalid("dt", format!("must be > 0, got {dt}")));
        }
        self.advance_to(self.t + dt, dt);
        Ok(())
    }

    fn advance_to(&mut self, t_end: f64, dt: f64) {
        // start positions only matter while someone can still transmit
        if !self.infected.is_empty() {
            self.prev.copy_from_slice(&self.pos);
        }
        let d = self.params.dim;
        let sd = (self.params.diffusion * dt).sqrt();
        let drift = self.params.drift_vector();
        let mut max_z2: f64 = 0.0;
        if d == 1 {
            let shift = drift.0[0] * dt;
            for p in self.pos.iter_mut() {
                let z = self.motion.standard_normal();
                max_z2 = max_z2.max(z * z);
                p.0[0] += shift + sd * z;
            }
        } else {
            for p in self.pos.iter_mut() {
                let mut z2 = 0.0;
                for k in 0..d {
                    let z = self.motion.standard_normal();
                    z2 += z * z;
                    p.0[k] += drift.0[k] * dt + sd * z;
                }
                max_z2 = max_z2.max(z2);
            }
        }
        self.max_disp = sd * max_z2.sqrt();
        self.dt_last = dt;
        self.t = t_end;
        self.steps += 1;
        self.index_fresh = false;
        if self.entry_range.is_some() {
            self.update_entries();
        }
    }

    fn update_entries(&mut self) {
        let Some(range) = self.entry_range else { return };
        let r2 = range * range;
        for (p, e) in self.pos.iter().zip(self.entered.iter_mut()) {
            if !*e && p.norm2() <= r2 {
                *e = true;
                self.entry_count += 1;
            }
        }
    }

    /// Remove every infected particle whose clock has rung by the current
    /// time, logging in `(t_remove, id)` order. Returns how many were removed.
    pub fn apply_removals(&mut self) -> usize {
        if self.params.alpha == 0.0 {
            return 0;
        }
        let t = self.t;
        let mut due: Vec<(f64, usize)> = self
            .infected
            .iter()
            .filter_map(|&i| self.t_remove[i].filter(|&tr| tr <= t).map(|tr| (tr, i)))
            .collect();
        if due.is_empty() {
            return 0;
        }
        due.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for &(tr, i) in &due {
            self.health[i] = Health::Removed;
            self.log.push(Event {
                time: tr,
                kind: EventKind::Remove,
                particle: i,
                position: self.pos[i],
            });
        }
        let health = &self.health;
        self.infected.retain(|&i| health[i] == Health::Infected);
        due.len()
    }

    fn ensure_index(&mut self, radius: f64) -> Result<()> {
        if radius > self.index.radius() {
            self.index = NeighborIndex::dense(&self.pos, self.params.dim, radius * 1.25)?;
        } else if !self.index_fresh {
            self.index.refresh(&self.pos);
        }
        self.index_fresh = true;
        Ok(())
    }

    /// Susceptible particles that met a currently infected particle during
    /// the last step, ascending by id. Contact times are the step end.
    ///
    /// Particles removed during the step do not transmit in it.
    pub fn detect_contacts(&mut self, mode: DetectorMode) -> Result<Vec<Contact>> {
        if self.infected.is_empty() {
            return Ok(Vec::new());
        }
        let r = self.params.radius;
        let dt = self.last_dt();
        let finite = match self.params.infection_rate {
            InfectionRate::Instant => None,
            InfectionRate::Finite(beta) => Some(-(-beta * dt).exp_m1()),
        };
        let bridge = finite.is_none() && mode == DetectorMode::Bridge && self.steps > 0;
        let reach = if bridge {
            r + (BRIDGE_CUTOFF * self.params.diffusion * dt).sqrt() + 2.0 * self.max_disp
        } else {
            r
        };
        self.ensure_index(reach)?;
        let var = 2.0 * self.params.diffusion * dt;
        let mut hit = Vec::new();
        for &i in &self.infected {
            let pi = self.pos[i];
            let qi = self.prev[i];
            self.index.for_each_slot_within(&pi, reach, |j| {
                if self.health[j] != Health::Susceptible {
                    return;
                }
                let p = if let Some(q) = finite {
                    if in_range(&pi, &self.pos[j], r) {
                        q
                    } else {
                        0.0
                    }
                } else if bridge {
                    let d1 = self.pos[j].sub(&pi);
                    let d0 = self.prev[j].sub(&qi);
                    bridge_contact_probability(&d0, &d1, r, var)
                } else {
                    1.0
                };
                if p >= 1.0
                    || (p > 0.0 && pair_uniform(self.contact_key, self.steps, i as u64, j as u64) < p)
                {
                    hit.push(j);
                }
            });
        }
        hit.sort_unstable();
        hit.dedup();
        let t = self.t;
        Ok(hit.into_iter().map(|particle| Contact { particle, time: t }).collect())
    }

    fn last_dt(&self) -> f64 {
        self.dt_last
    }

    /// Infect every susceptible particle connected to `seeds` through a chain
    /// of susceptible particles at mutual distance at most the radius, at
    /// time `t`. Under a finite infection rate only the seeds themselves are
    /// infected. Returns the newly infected ids in ascending order.
    pub fn infect_closure(&mut self, seeds: &[usize], t: f64) -> Result<Vec<usize>> {
        if let Some(&bad) = seeds.iter().find(|&&s| s >= self.len()) {
            return Err(Error::invalid("seeds", format!("unknown particle id {bad}")));
        }
        if self.truncated {
            return Ok(Vec::new());
        }
        let mut new: Vec<usize> = match self.params.infection_rate {
            InfectionRate::Instant => {
                self.ensure_index(self.params.radius)?;
                let health = &self.health;
                cluster_slots(&self.index, seeds, self.params.radius, |s| {
                    health[s] == Health::Susceptible
                })
                .into_iter()
                .filter(|&s| health[s] == Health::Susceptible)
                .collect()
            }
            InfectionRate::Finite(_) => seeds
                .iter()
                .copied()
                .filter(|&s| self.health[s] == Health::Susceptible)
                .collect(),
        };
        new.sort_unstable();
        new.dedup();
        if let Some(cap) = self.truncation {
            let room = cap.saturating_sub(self.infections);
            if new.len() > room {
                let first = new[room];
                new.truncate(room);
                self.infect_at(&new, t);
                self.log.push(Event {
                    time: t,
                    kind: EventKind::Truncate,
                    particle: first,
                    position: self.pos[first],
                });
                self.truncated = true;
                return Ok(new);
            }
        }
        self.infect_at(&new, t);
        Ok(new)
    }

    fn infect(&mut self, ids: &[usize]) -> Result<()> {
        self.infect_at(ids, self.t);
        Ok(())
    }

    /// Mark `ids` infected at `t` in the given order, drawing one removal
    /// clock each.
    fn infect_at(&mut self, ids: &[usize], t: f64) {
        for &i in ids {
            debug_assert_eq!(self.health[i], Health::Susceptible);
            self.health[i] = Health::Infected;
            self.t_infect[i] = Some(t);
            if self.params.alpha > 0.0 {
                let life = sample_exponential(&mut self.removal, self.params.alpha)
                    .expect("alpha validated positive");
                self.t_remove[i] = Some(t + life);
            }
            self.infected.push(i);
            self.infections += 1;
            self.log.push(Event {
                time: t,
                kind: EventKind::Infect,
                particle: i,
                position: self.pos[i],
            });
        }
    }

    /// One time step: motion, removals due by the step end, contact
    /// detection among the particles still infected, and chain infection at
    /// the step end.
    pub fn step(&mut self, dt: f64, mode: DetectorMode) -> Result<()> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::invalid("dt", format!("must be > 0, got {dt}")));
        }
        self.step_to(self.t + dt, mode)
    }

    /// Step ending exactly at `t_end`.
    pub(crate) fn step_to(&mut self, t_end: f64, mode: DetectorMode) -> Result<()> {
        let dt = t_end - self.t;
        debug_assert!(dt > 0.0);
        self.advance_to(t_end, dt);
        self.resolve_step(mode)
    }

    /// Everything in a step after motion.
    fn resolve_step(&mut self, mode: DetectorMode) -> Result<()> {
        let t_end = self.t;
        self.apply_removals();
        if self.infected.is_empty() || self.truncated {
            return Ok(());
        }
        let contacts = self.detect_contacts(mode)?;
        if !contacts.is_empty() {
            let seeds: Vec<usize> = contacts.iter().map(|c| c.particle).collect();
            self.infect_closure(&seeds, t_end)?;
        }
        Ok(())
    }

    /// Sum over ever-infected particles of the time spent infected up to
    /// `horizon`.
    pub fn lifetime_sum(&self, horizon: f64) -> f64 {
        self.t_infect
            .iter()
            .zip(&self.t_remove)
            .filter_map(|(ti, tr)| {
                let ti = (*ti)?;
                let end = tr.unwrap_or(f64::INFINITY).min(horizon);
                Some((end - ti).max(0.0))
            })
            .sum()
    }

    /// Brute-force consistency check of the state: timestamps agree with
    /// health, removal clocks of removed particles have passed, and (for
    /// instant infection without truncation) no susceptible particle is in
    /// range of an infected one.
    pub fn check_invariants(&self) -> Result<()> {
        for i in 0..self.len() {
            let ok = match self.health[i] {
                Health::Susceptible => self.t_infect[i].is_none() && self.t_remove[i].is_none(),
                Health::Infected => {
                    self.t_infect[i].is_some()
                        && self.t_remove[i].is_none_or(|tr| tr > self.t)
                        && (self.params.alpha == 0.0) == self.t_remove[i].is_none()
                }
                Health::Removed => match (self.t_infect[i], self.t_remove[i]) {
                    (Some(ti), Some(tr)) => ti <= tr && tr <= self.t,
                    _ => false,
                },
            };
            if !ok {
                return Err(Error::Internal(format!(
                    "particle {i} inconsistent: {:?}",
                    self.particle(i)
                )));
            }
        }
        if self.params.infection_rate == InfectionRate::Instant && !self.truncated {
            let r = self.params.radius;
            for &i in &self.infected {
                for j in 0..self.len() {
                    if self.health[j] == Health::Susceptible && in_range(&self.pos[i], &self.pos[j], r) {
                        return Err(Error::Internal(format!(
                            "susceptible {j} within range of infected {i} at t={}",
                            self.t
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
impl SimState {
    /// Replace the last step's motion by an explicit one.
    fn force_motion(&mut self, to: &[Point], dt: f64) {
        self.prev.copy_from_slice(&self.pos);
        self.pos.copy_from_slice(to);
        self.max_disp = self
            .pos
            .iter()
            .zip(&self.prev)
            .map(|(a, b)| a.dist2(b).sqrt())
            .fold(0.0, f64::max);
        self.dt_last = dt;
        self.t += dt;
        self.steps += 1;
        self.index_fresh = false;
    }

    fn force_removal_clock(&mut self, id: usize, t: f64) {
        self.t_remove[id] = Some(t);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::Region;
    use std::collections::BTreeSet;

    fn line(xs: &[f64]) -> Vec<Point> {
        xs.iter().map(|&x| Point::line(x)).collect()
    }

    fn state_with(params: &ModelParams, points: &[f64], seed: u64) -> SimState {
        let w = Region::interval(-100.0, 100.0).unwrap();
        init_from_points(params, &w, &RngStream::new(seed, 0), &SimOptions::default(), line(points))
            .unwrap()
    }

    /// O(n^2) breadth-first search from point 0 over links of length <= r.
    fn bfs_oracle(points: &[Point], r: f64) -> BTreeSet<usize> {
        let mut seen = vec![false; points.len()];
        seen[0] = true;
        let mut queue = vec![0];
        while let Some(i) = queue.pop() {
            for j in 0..points.len() {
                if !seen[j] && points[i].dist2(&points[j]).sqrt() <= r {
                    seen[j] = true;
                    queue.push(j);
                }
            }
        }
        (0..points.len()).filter(|&i| seen[i]).collect()
    }

    fn infected_set(s: &SimState) -> BTreeSet<usize> {
        s.infected().iter().copied().collect()
    }

    #[test]
    fn origin_starts_infected() {
        let p = ModelParams::new(1.0, 1.0);
        let w = Region::interval(-100.0, 100.0).unwrap();
        let s = init_configuration(&p, &w, &RngStream::new(1, 0), &SimOptions::default()).unwrap();
        let o = s.particle(0).unwrap();
        assert_eq!(o.x0, Point::ORIGIN);
        assert_eq!(o.state, Health::Infected);
        assert_eq!(o.t_infect, Some(0.0));
        assert!(o.t_remove.unwrap() > 0.0);
        assert_eq!(s.log().events()[0].particle, 0);
        assert!(s.particles().skip(1).all(|q| q.x0 != Point::ORIGIN));
        s.check_invariants().unwrap();
    }

    #[test]
    fn field_count_is_poisson() {
        let p = ModelParams::new(1.0, 1.0);
        let w = Region::interval(-100.0, 100.0).unwrap();
        let counts: Vec<f64> = (0..2000)
            .map(|i| {
                let s = init_configuration(&p, &w, &RngStream::new(2, i), &SimOptions::default())
                    .unwrap();
                (s.len() - 1) as f64
            })
            .collect();
        let est = crate::stats::MeanEstimate::from_samples(&counts);
        assert!((est.mean - 200.0).abs() < 4.0 * est.se, "{est:?}");
        assert!((est.variance / 200.0 - 1.0).abs() < 0.15, "{est:?}");
    }

    #[test]
    fn window_must_hold_origin() {
        let p = ModelParams::new(1.0, 1.0);
        let w = Region::interval(0.5, 10.0).unwrap();
        let e = init_configuration(&p, &w, &RngStream::new(1, 0), &SimOptions::default());
        assert!(matches!(e, Err(Error::InvalidParameter { name: "window", .. })));
    }

    #[test]
    fn particle_cap_is_resource_limit() {
        let p = ModelParams::new(1.0, 1.0);
        let w = Region::interval(-100.0, 100.0).unwrap();
        let opts = SimOptions {
            max_particles: Some(50),
            ..Default::default()
        };
        let e = init_configuration(&p, &w, &RngStream::new(1, 0), &opts).unwrap_err();
        assert!(matches!(e, Error::ResourceLimit { .. }));
    }

    #[test]
    fn initial_cluster_matches_bfs_oracle() {
        let p = ModelParams::new(5.0, 1.0);
        let w = Region::interval(-10.0, 10.0).unwrap();
        let mut total = 0usize;
        for i in 0..1000 {
            let s = init_configuration(&p, &w, &RngStream::new(3, i), &SimOptions::default())
                .unwrap();
            let oracle = bfs_oracle(s.positions(), 1.0);
            assert_eq!(infected_set(&s), oracle);
            total += oracle.len();
        }
        // clusters at lambda = 5 are large but finite
        assert!(total > 1000);
    }

    #[test]
    fn hand_checked_closure() {
        let p = ModelParams::new(1.0, 1.0);
        let s = state_with(&p, &[0.8, 1.7, 3.0], 4);
        assert_eq!(infected_set(&s), BTreeSet::from([0, 1, 2]));
        assert_eq!(s.health(3), Health::Susceptible);
        let order: Vec<usize> = s.log().iter().map(|e| e.particle).collect();
        assert_eq!(order, vec![0, 1, 2]);
    }

    #[test]
    fn empty_closure_keeps_state() {
        let p = ModelParams::new(1.0, 1.0);
        let mut s = state_with(&p, &[5.0, -7.0], 5);
        assert_eq!(infected_set(&s), BTreeSet::from([0]));
        let before = s.log().len();
        assert!(s.infect_closure(&[0], 0.0).unwrap().is_empty());
        assert_eq!(s.log().len(), before);
        assert!(s.infect_closure(&[99], 0.0).is_err());
    }

    #[test]
    fn closure_matches_bfs_on_uniform_points() {
        let p = ModelParams::new(1.0, 1.0);
        let w = Region::interval(-30.0, 30.0).unwrap();
        for i in 0..1000 {
            let mut rng = RngStream::new(6, i);
            let pts: Vec<Point> = (0..200).map(|_| Point::line(50.0 * rng.uniform() - 25.0)).collect();
            let s = init_from_points(&p, &w, &rng, &SimOptions::default(), pts).unwrap();
            assert_eq!(infected_set(&s), bfs_oracle(s.positions(), 1.0));
        }
    }

    #[test]
    fn drift_without_noise() {
        let p = ModelParams::new(1.0, 0.0).with_drift(vec![1.0]).with_diffusion(1e-12);
        let mut s = state_with(&p, &[3.0], 7);
        for _ in 0..100 {
            s.advance_positions(0.01).unwrap();
        }
        assert!((s.positions()[0].x() - 1.0).abs() < 1e-5);
        assert!((s.positions()[1].x() - 4.0).abs() < 1e-5);
        assert!((s.time() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn quadratic_variation_matches_diffusion() {
        let p = ModelParams::new(1.0, 0.0).with_diffusion(2.0);
        let mut s = state_with(&p, &[], 8);
        let dt = 1e-2;
        let mut qv = 0.0;
        let n = 100_000;
        for _ in 0..n {
            let x = s.positions()[0].x();
            s.advance_positions(dt).unwrap();
            qv += (s.positions()[0].x() - x).powi(2);
        }
        // sum of n squared N(0, D dt) has mean n D dt and sd sqrt(2n) D dt
        let t = n as f64 * dt;
        let se = (2.0 * n as f64).sqrt() * 2.0 * dt;
        assert!((qv - 2.0 * t).abs() < 3.0 * se, "qv={qv}");
    }

    #[test]
    fn displacement_variance_and_independence() {
        let p = ModelParams::new(1.0, 0.0);
        let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
        let n = 10_000;
        for i in 0..n {
            let mut s = state_with(&p, &[50.0], 100 + i);
            for _ in 0..10 {
                s.advance_positions(0.1).unwrap();
            }
            let a = s.positions()[0].x();
            let b = s.positions()[1].x() - 50.0;
            sx += a;
            sy += b;
            sxx += a * a;
            syy += b * b;
            sxy += a * b;
        }
        let nf = n as f64;
        let var_a = sxx / nf - (sx / nf).powi(2);
        let var_b = syy / nf - (sy / nf).powi(2);
        let cov = sxy / nf - sx * sy / nf / nf;
        let se_var = (2.0 / nf).sqrt();
        assert!((var_a - 1.0).abs() < 3.0 * se_var, "{var_a}");
        assert!((var_b - 1.0).abs() < 3.0 * se_var, "{var_b}");
        assert!(cov.abs() < 4.0 / nf.sqrt(), "{cov}");
    }

    #[test]
    fn in_range_is_certain_and_far_is_impossible() {
        let var = 2.0 * 0.01;
        let p = bridge_contact_probability(&Point::line(0.5), &Point::line(0.5), 1.0, var);
        assert_eq!(p, 1.0);
        let p = bridge_contact_probability(&Point::line(10.0), &Point::line(10.0), 1.0, var);
        assert!(p < 1e-20);
        // crossing over the whole ball within a step is certain
        let p = bridge_contact_probability(&Point::line(1.1), &Point::line(-1.1), 1.0, var);
        assert_eq!(p, 1.0);

        let params = ModelParams::new(1.0, 0.0);
        for i in 0..10_000 {
            let mut s = state_with(&params, &[10.0], 200 + i);
            s.step(0.01, DetectorMode::Bridge).unwrap();
            assert_eq!(s.infected_count(), 1);
        }
    }

    /// Both particle paths as discretely sampled Brownian bridges, with the
    /// barrier widened by the continuity correction `0.5826 sigma sqrt(h)`.
    fn bridge_pair_oracle(gap0: f64, gap1: f64, dt: f64, diffusion: f64, paths: usize) -> f64 {
        let m = 1000;
        let h = dt / m as f64;
        let level = 1.0 + 0.5826 * (2.0 * diffusion * h).sqrt();
        let mut rng = RngStream::new(77, 0);
        let mut hits = 0;
        for _ in 0..paths {
            // infected particle from 0 to 0.4, susceptible keeps the gaps
            let (mut a, a1) = (0.0f64, 0.4f64);
            let (mut b, b1) = (gap0, 0.4 + gap1);
            for k in 0..m {
                let left = dt - k as f64 * h;
                let w = h / left;
                let sd = (diffusion * h * (left - h) / left).sqrt();
                a += (a1 - a) * w + sd * rng.standard_normal();
                b += (b1 - b) * w + sd * rng.standard_normal();
                if (b - a).abs() <= level {
                    hits += 1;
                    break;
                }
            }
        }
        hits as f64 / paths as f64
    }

    #[test]
    fn bridge_detection_frequency_matches_path_oracle() {
        let params = ModelParams::new(1.0, 0.0);
        let dt = 0.05;
        let trials = 200_000;
        let mut hits = 0;
        let mut s = state_with(&params, &[1.2], 9);
        for _ in 0..trials {
            s.force_motion(&line(&[0.4, 1.7]), dt);
            hits += s.detect_contacts(DetectorMode::Bridge).unwrap().len();
            s.force_motion(&line(&[0.0, 1.2]), dt);
        }
        let freq = hits as f64 / trials as f64;
        let oracle = bridge_pair_oracle(1.2, 1.3, dt, 1.0, 100_000);
        assert!((freq / oracle - 1.0).abs() < 0.05, "freq={freq} oracle={oracle}");
        let naive = s.detect_contacts(DetectorMode::Naive).unwrap();
        assert!(naive.is_empty());
    }

    #[test]
    fn removal_within_step_blocks_infection() {
        let params = ModelParams::new(1.0, 1.0);
        let mut s = state_with(&params, &[1.05], 10);
        s.force_removal_clock(0, 0.005);
        s.force_motion(&line(&[0.0, 0.5]), 0.01);
        s.resolve_step(DetectorMode::Bridge).unwrap();
        assert_eq!(s.health(0), Health::Removed);
        assert_eq!(s.health(1), Health::Susceptible);
        let kinds: Vec<EventKind> = s.log().iter().map(|e| e.kind).collect();
        assert_eq!(kinds, vec![EventKind::Infect, EventKind::Remove]);
        assert_eq!(s.log().events()[1].time, 0.005);

        // same motion with the clock beyond the step end infects
        let mut s = state_with(&params, &[1.05], 10);
        s.force_removal_clock(0, 0.02);
        s.force_motion(&line(&[0.0, 0.5]), 0.01);
        s.resolve_step(DetectorMode::Bridge).unwrap();
        assert_eq!(s.health(1), Health::Infected);
        assert_eq!(s.particle(1).unwrap().t_infect, Some(0.01));
    }

    #[test]
    fn removals_ordered_by_clock_then_id() {
        let params = ModelParams::new(1.0, 1.0);
        let mut s = state_with(&params, &[0.5, -0.5, 0.9], 11);
        s.force_removal_clock(0, 0.007);
        s.force_removal_clock(1, 0.003);
        s.force_removal_clock(2, 0.007);
        s.force_removal_clock(3, 0.5);
        s.advance_positions(0.01).unwrap();
        assert_eq!(s.apply_removals(), 3);
        let tail: Vec<(f64, usize)> = s.log().iter().skip(4).map(|e| (e.time, e.particle)).collect();
        assert_eq!(tail, vec![(0.003, 1), (0.007, 0), (0.007, 2)]);
    }

    #[test]
    fn huge_rate_removes_in_first_step() {
        let params = ModelParams::new(1e-9, 1e6);
        for i in 0..100 {
            let mut s = state_with(&params, &[], 300 + i);
            s.step(1.0, DetectorMode::Bridge).unwrap();
            assert!(s.is_extinct());
        }
    }

    #[test]
    fn lifetimes_are_exponential() {
        let params = ModelParams::new(1.0, 1.0);
        let w = Region::interval(-40.0, 40.0).unwrap();
        let mut lifetimes = Vec::new();
        let mut i = 0;
        while lifetimes.len() < 10_000 {
            let mut s =
                init_configuration(&params, &w, &RngStream::new(12, i), &SimOptions::default())
                    .unwrap();
            i += 1;
            while !s.is_extinct() {
                s.step(0.05, DetectorMode::Bridge).unwrap();
            }
            lifetimes.extend(s.particles().filter_map(|q| Some(q.t_remove? - q.t_infect?)));
        }
        let est = crate::stats::MeanEstimate::from_samples(&lifetimes);
        assert!((est.mean - 1.0).abs() < 3.0 * est.se, "{est:?}");
    }

    #[test]
    fn no_removal_without_alpha() {
        let params = ModelParams::new(1.0, 0.0);
        let w = Region::interval(-30.0, 30.0).unwrap();
        let mut s =
            init_configuration(&params, &w, &RngStream::new(13, 0), &SimOptions::default()).unwrap();
        let mut last = s.infected_count();
        for _ in 0..500 {
            s.step(0.01, DetectorMode::Bridge).unwrap();
            assert!(s.infected_count() >= last);
            last = s.infected_count();
            s.check_invariants().unwrap();
        }
        assert!(s.particles().all(|q| q.state != Health::Removed && q.t_remove.is_none()));
    }

    #[test]
    fn extinct_step_is_pure_motion() {
        let params = ModelParams::new(1.0, 1.0);
        let mut s = state_with(&params, &[3.0], 14);
        s.force_removal_clock(0, 0.001);
        s.step(0.01, DetectorMode::Bridge).unwrap();
        assert!(s.is_extinct());
        let log = s.log().clone();
        let x = s.positions()[1];
        for _ in 0..100 {
            s.step(0.01, DetectorMode::Bridge).unwrap();
        }
        assert_eq!(s.log(), &log);
        assert_ne!(s.positions()[1], x);
    }

    #[test]
    fn closure_invariant_holds_every_step() {
        for (d, mode) in [(1, DetectorMode::Bridge), (1, DetectorMode::Naive), (2, DetectorMode::Bridge)] {
            let params = ModelParams::new(1.0, 0.5).with_dim(d);
            let w = Region::cube(d, if d == 1 { 30.0 } else { 8.0 }).unwrap();
            for i in 0..5 {
                let mut s = init_configuration(&params, &w, &RngStream::new(15, i), &SimOptions::default())
                    .unwrap();
                for _ in 0..300 {
                    s.step(0.01, mode).unwrap();
                    s.check_invariants().unwrap();
                }
                s.log().validate().unwrap();
            }
        }
    }

    #[test]
    fn truncation_caps_infections() {
        let params = ModelParams::new(3.0, 0.0);
        let w = Region::interval(-40.0, 40.0).unwrap();
        let opts = SimOptions {
            truncation: Some(5),
            ..Default::default()
        };
        let mut s = init_configuration(&params, &w, &RngStream::new(16, 0), &opts).unwrap();
        for _ in 0..500 {
            s.step(0.01, DetectorMode::Bridge).unwrap();
        }
        assert!(s.truncated());
        assert_eq!(s.infections(), 5);
        let log = s.log().events();
        let cut = log.iter().position(|e| e.kind == EventKind::Truncate).unwrap();
        assert!(log[cut..].iter().all(|e| e.kind != EventKind::Infect));
        assert_eq!(log.iter().filter(|e| e.kind == EventKind::Truncate).count(), 1);
    }

    #[test]
    fn finite_rate_infects_single_particles() {
        let params = ModelParams::new(1.0, 0.0).with_infection_rate(InfectionRate::Finite(1e9));
        // chain 0 - 0.8 - 1.6: only the direct neighbour is infected at t = 0
        // in a finite-rate model, and only after a step
        let mut s = state_with(&params, &[0.8, 1.6], 17);
        assert_eq!(infected_set(&s), BTreeSet::from([0]));
        s.force_motion(&line(&[0.0, 0.8, 1.6]), 0.01);
        s.resolve_step(DetectorMode::Bridge).unwrap();
        assert_eq!(infected_set(&s), BTreeSet::from([0, 1]));
        s.force_motion(&line(&[0.0, 0.8, 1.6]), 0.01);
        s.resolve_step(DetectorMode::Bridge).unwrap();
        assert_eq!(infected_set(&s), BTreeSet::from([0, 1, 2]));

        let slow = ModelParams::new(1.0, 0.0).with_infection_rate(InfectionRate::Finite(1.0));
        let mut hits = 0;
        let n = 20_000;
        for i in 0..n {
            let mut s = state_with(&slow, &[0.5], 400 + i);
            s.force_motion(&line(&[0.0, 0.5]), 0.1);
            s.resolve_step(DetectorMode::Bridge).unwrap();
            hits += usize::from(s.health(1) == Health::Infected);
        }
        let p = 1.0 - (-0.1f64).exp();
        let se = (p * (1.0 - p) / n as f64).sqrt();
        assert!((hits as f64 / n as f64 - p).abs() < 4.0 * se);
    }

    #[test]
    fn replay_is_identical() {
        let params = ModelParams::new(1.0, 1.0);
        let w = Region::interval(-40.0, 40.0).unwrap();
        let go = || {
            let mut s = init_configuration(&params, &w, &RngStream::new(18, 3), &SimOptions::default())
                .unwrap();
            for _ in 0..1000 {
                s.step(0.01, DetectorMode::Bridge).unwrap();
            }
            s.into_log()
        };
        assert_eq!(go(), go());
    }
}
