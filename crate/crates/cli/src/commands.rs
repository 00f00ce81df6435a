use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use snails::experiments::{self as ex, SimConfig, Statistic};
use snails::model::{run, DetectorMode, ModelParams};
use snails::observables::write_run_rows;

use crate::config::{missing, positive, RunConfig, WindowSetting, DEFAULT_PILOT_HORIZON};
use crate::output::OutputSet;
use crate::plot::{line_chart, Series};
use crate::{CliError, Command};

pub const DEFAULT_OUTPUT: &str = "snails-out";

/// Everything needed to reproduce an output directory.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    /// Fully resolved configuration; pilot constants and the window are
    /// frozen in it.
    pub config: RunConfig,
    #[serde(default)]
    pub pilot: Value,
    #[serde(default)]
    pub conventions: Vec<String>,
    #[serde(default)]
    pub outputs: Vec<String>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read manifest {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("manifest {}: {e}", path.display())))
    }
}

struct Ctx {
    cfg: RunConfig,
    out: OutputSet,
    pilot: serde_json::Map<String, Value>,
    conventions: Vec<String>,
}

impl Ctx {
    fn seed(&self) -> u64 {
        self.cfg.seed.expect("defaults filled")
    }

    fn workers(&self) -> usize {
        self.cfg.workers.expect("defaults filled")
    }

    fn base_config(&self) -> Result<SimConfig, CliError> {
        let params = self.cfg.params()?;
        let s = &self.cfg.sim;
        let mut sc = SimConfig::new(params, 0.0, self.seed())
            .with_dt(s.dt.expect("defaults filled"))
            .with_detector(s.detector.expect("defaults filled"))
            .with_workers(self.workers())
            .with_truncation(s.truncation);
        sc.max_particles = s.max_particles;
        sc.window_sigmas = s.window_sigmas.expect("defaults filled");
        Ok(sc)
    }

    /// Shared batch settings, resolving an automatic window from a pilot
    /// front-speed run and freezing the result into the config.
    fn sim_config(&mut self, t_max: f64) -> Result<SimConfig, CliError> {
        let mut sc = self.base_config()?;
        let s = &self.cfg.sim;
        match s.window.expect("defaults filled") {
            WindowSetting::Fixed(w) => {
                sc.window_speed = s.window_speed.unwrap_or(0.0);
                sc.window_half_width = Some(w);
            }
            WindowSetting::Auto => {
                let speed = match s.window_speed {
                    Some(v) => v,
                    None => {
                        let horizon = s.pilot_horizon.unwrap_or(t_max.min(DEFAULT_PILOT_HORIZON));
                        let c1 = self.pilot_c1(&sc, horizon)?;
                        self.cfg.sim.pilot_horizon = Some(horizon);
                        c1
                    }
                };
                sc.window_speed = speed;
                self.cfg.sim.window_speed = Some(speed);
                self.cfg.sim.window = Some(WindowSetting::Fixed(sc.half_width(t_max)));
                self.conventions.push(
                    "window half-width = speed * t_max + sigmas * sqrt(2 D t_max) + |drift| t_max, \
                     speed from the pilot front run"
                        .into(),
                );
            }
        }
        sc.validate()?;
        Ok(sc)
    }

    fn pilot_c1(&mut self, sc: &SimConfig, horizon: f64) -> Result<f64, CliError> {
        let runs = self.cfg.sim.pilot_runs.expect("defaults filled");
        let pilot = ex::pilot_front_speed(sc, horizon, runs)?;
        self.pilot.insert("c1_hat".into(), json!(pilot.c1_hat));
        self.pilot.insert("c1_horizon".into(), json!(pilot.horizon));
        self.pilot.insert("c1_runs".into(), json!(pilot.n_runs));
        self.pilot.insert("window_speeds_tried".into(), json!(pilot.speeds_tried));
        self.conventions.push(
            "C1_hat is the 99th percentile of (running max distance of an infected particle) / t \
             over removal-free pilot runs"
                .into(),
        );
        Ok(pilot.c1_hat)
    }

    fn horizon(&self) -> Result<f64, CliError> {
        let t = self
            .cfg
            .experiment
            .horizon
            .or(self.cfg.sim.t_max)
            .ok_or_else(|| missing("experiment.T"))?;
        positive("T", t)
    }

    fn finish(mut self, command: Command) -> Result<PathBuf, CliError> {
        let dir = self.cfg.output.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT));
        self.conventions
            .push("a susceptible particle at distance exactly equal to the radius is infected".into());
        let mut outputs: Vec<String> = self.out.names().map(String::from).collect();
        outputs.push("manifest.json".into());
        let manifest = Manifest {
            command: command.name().into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config: self.cfg,
            pilot: Value::Object(self.pilot),
            conventions: self.conventions,
            outputs,
        };
        self.out.add_json("manifest.json", &manifest)?;
        self.out.commit(&dir)?;
        Ok(dir)
    }
}

pub fn dispatch(command: Command, mut cfg: RunConfig) -> Result<(), CliError> {
    if command == Command::Constants {
        return constants(&cfg);
    }
    cfg.seed.get_or_insert(crate::config::DEFAULT_SEED);
    cfg.workers.get_or_insert(1);
    if command == Command::Stationarity {
        cfg.model.alpha.get_or_insert(0.0);
    }
    if command != Command::Percolation {
        cfg.fill_defaults()?;
    } else if cfg.workers == Some(0) {
        return Err(CliError::Usage("invalid value for `workers`: must be at least 1".into()));
    }
    let mut ctx = Ctx {
        cfg,
        out: OutputSet::new(),
        pilot: Default::default(),
        conventions: Vec::new(),
    };
    let violation = match command {
        Command::Simulate => simulate(&mut ctx)?,
        Command::Survival => survival(&mut ctx)?,
        Command::Shape => shape(&mut ctx)?,
        Command::Coupling => coupling(&mut ctx)?,
        Command::Converge => converge(&mut ctx)?,
        Command::Percolation => percolation(&mut ctx)?,
        Command::Stationarity => stationarity(&mut ctx)?,
        Command::Entry => entry(&mut ctx)?,
        Command::Occupation => occupation(&mut ctx)?,
        Command::Truncation => truncation(&mut ctx)?,
        Command::Constants => unreachable!(),
    };
    let dir = ctx.finish(command)?;
    println!("wrote {}", dir.display());
    match violation {
        Some(msg) => Err(CliError::Internal(msg)),
        None => Ok(()),
    }
}

type Outcome = Result<Option<String>, CliError>;

fn constants(cfg: &RunConfig) -> Result<(), CliError> {
    let e = &cfg.experiment;
    let c1 = e.c1.ok_or_else(|| missing("experiment.c1"))?;
    let c2 = e.c2.ok_or_else(|| missing("experiment.c2"))?;
    let t = e.horizon.ok_or_else(|| missing("experiment.T"))?;
    let alpha = cfg.model.alpha.ok_or_else(|| missing("model.alpha"))?;
    let pc = ex::proof_constants(c1, c2, alpha, t)?;
    let text = serde_json::to_string_pretty(&pc).map_err(|e| CliError::Internal(e.to_string()))?;
    println!("{text}");
    Ok(())
}

fn simulate(ctx: &mut Ctx) -> Outcome {
    let t_max = ctx.cfg.t_max()?;
    let sc = ctx.sim_config(t_max)?;
    let out = run(&sc.params, &sc.window(t_max)?, &sc.stream(0), &sc.run_spec(t_max))?;
    let seed = ctx.seed();
    ctx.out.add_with("events.csv", |b| out.log.write_csv(b))?;
    ctx.out
        .add_with("run.csv", |b| write_run_rows(b, &[], &[(0, seed, out.result.clone())]))?;
    println!(
        "{} infections, {}",
        out.result.total_infections,
        if out.result.censored {
            format!("alive at t = {t_max}")
        } else {
            format!("extinct at t = {}", out.result.extinction_time)
        }
    );
    Ok(None)
}

fn survival(ctx: &mut Ctx) -> Outcome {
    let horizons = ctx.cfg.experiment.horizons.clone().ok_or_else(|| missing("experiment.horizons"))?;
    let n = ctx.cfg.n_runs()?;
    let t_max = horizons.iter().copied().fold(f64::NAN, f64::max);
    if !t_max.is_finite() {
        return Err(missing("experiment.horizons"));
    }
    ctx.cfg.sim.t_max = Some(t_max);
    let sc = ctx.sim_config(t_max)?;
    let rep = ex::survival_experiment(&sc, &horizons, n)?;
    ctx.out.add_with("survival.csv", |b| rep.curve.write_csv(b, rep.fit.as_ref()))?;
    let seed = ctx.seed();
    let rows: Vec<_> = rep.runs.iter().enumerate().map(|(i, r)| (i, seed, r.clone())).collect();
    ctx.out.add_with("runs.csv", |b| write_run_rows(b, &[], &rows))?;
    let c = &rep.curve;
    let pts = |v: &[f64]| c.horizons.iter().copied().zip(v.iter().copied()).collect::<Vec<_>>();
    let mut series = vec![
        Series { name: "estimate".into(), points: pts(&c.estimate), colour: "black", dashed: false },
        Series { name: "95% low".into(), points: pts(&c.ci_low), colour: "grey", dashed: true },
        Series { name: "95% high".into(), points: pts(&c.ci_high), colour: "grey", dashed: true },
    ];
    if let Some(f) = &rep.fit {
        series.push(Series {
            name: format!("fit c = {:.3}", f.c_hat),
            points: c.horizons.iter().map(|&h| (h, (f.intercept - f.c_hat * h).exp())).collect(),
            colour: "firebrick",
            dashed: false,
        });
    }
    let svg = line_chart("Survival P(extinction time >= T)", "T", "probability", &series, true);
    ctx.out.add("survival.svg", svg.into_bytes());
    ctx.out.add_json(
        "summary.json",
        &json!({
            "fit": rep.fit,
            "fit_unavailable": rep.fit_unavailable,
            "window_half_width": rep.window_half_width,
            "n_runs": n,
        }),
    )?;
    match &rep.fit {
        Some(f) => println!("c_hat = {:.4} (95% CI {:.4} .. {:.4})", f.c_hat, f.c_ci.0, f.c_ci.1),
        None => println!("no fit: {}", rep.fit_unavailable.as_deref().unwrap_or("")),
    }
    Ok(None)
}

fn shape(ctx: &mut Ctx) -> Outcome {
    let times = ctx.cfg.experiment.times.clone().ok_or_else(|| missing("experiment.times"))?;
    let n = ctx.cfg.n_runs()?;
    let t_max = times.iter().copied().fold(f64::NAN, f64::max);
    if !t_max.is_finite() {
        return Err(missing("experiment.times"));
    }
    ctx.cfg.sim.t_max = Some(t_max);
    let sc = ctx.sim_config(t_max)?;
    let rep = ex::shape_experiment(&sc, &times, n)?;
    ctx.out.add_with("shape.csv", |b| rep.write_csv(b))?;
    let colours = ["#9ecae1", "#6baed6", "black", "#6baed6", "#9ecae1", "#c6dbef"];
    let series: Vec<Series> = ex::QUANTILES
        .iter()
        .enumerate()
        .map(|(k, q)| Series {
            name: format!("q{q}"),
            points: times.iter().zip(&rep.front_quantiles).map(|(&t, qs)| (t, qs[k])).collect(),
            colour: colours[k],
            dashed: k != 2,
        })
        .collect();
    let svg = line_chart("Front max |z| over infected z", "t", "distance", &series, false);
    ctx.out.add("shape.svg", svg.into_bytes());
    ctx.conventions.push(
        "shape c1_hat: 99th percentile of (running max front) / t at the largest time".into(),
    );
    ctx.out.add_json(
        "summary.json",
        &json!({
            "c1_hat": rep.c1_hat,
            "median_speed": rep.median_speed,
            "exceedance_2c1t": rep.exceedance,
            "overflow_runs": rep.overflow_runs,
            "used_runs": rep.used_runs(),
            "window_half_width": rep.window_half_width,
        }),
    )?;
    println!("c1_hat = {:.4}, {} of {} runs used", rep.c1_hat, rep.used_runs(), n);
    Ok(None)
}

fn coupling(ctx: &mut Ctx) -> Outcome {
    let t_max = ctx.cfg.t_max()?;
    let n = ctx.cfg.n_runs()?;
    let sc = ctx.sim_config(t_max)?;
    let rep = ex::coupling_experiment(&sc, t_max, n)?;
    ctx.out.add_with("coupling.csv", |b| {
        let mut w = csv::Writer::from_writer(b);
        w.write_record(["run_id", "master_seed", "stream_id", "step", "time", "particle_id"])?;
        for v in &rep.violations {
            w.write_record([
                v.run.to_string(),
                v.master_seed.to_string(),
                v.stream_id.to_string(),
                v.step.to_string(),
                format!("{:.16e}", v.time),
                v.particle.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    })?;
    ctx.out.add_json(
        "summary.json",
        &json!({
            "n_runs": rep.n_runs,
            "contained_runs": rep.contained_runs,
            "steps_checked": rep.steps_checked,
            "violations": rep.violations.len(),
        }),
    )?;
    println!("containment held in {} of {} runs", rep.contained_runs, rep.n_runs);
    Ok(rep.violations.first().map(|v| {
        format!(
            "containment violated in {} run(s); first: run {} (seed {}, stream {}) at step {}, particle {}",
            rep.violations.len(),
            v.run,
            v.master_seed,
            v.stream_id,
            v.step,
            v.particle
        )
    }))
}

fn converge(ctx: &mut Ctx) -> Outcome {
    let dts = ctx.cfg.experiment.dt_grid.clone().ok_or_else(|| missing("experiment.dt_grid"))?;
    let horizon = ctx.horizon()?;
    let n = ctx.cfg.n_runs()?;
    let stats = ctx.cfg.experiment.statistics.clone().unwrap_or_else(|| Statistic::ALL.to_vec());
    ctx.cfg.experiment.statistics = Some(stats.clone());
    let sc = ctx.sim_config(horizon)?;
    let study = ex::convergence_study(&sc, &dts, horizon, n, &stats)?;
    ctx.out.add_with("convergence.csv", |b| study.write_csv(b))?;
    let series: Vec<Series> = [DetectorMode::Bridge, DetectorMode::Naive]
        .into_iter()
        .map(|m| Series {
            name: format!("{m}"),
            points: dts
                .iter()
                .filter_map(|&dt| study.row(m, dt).map(|r| (dt, r.get(stats[0]).0)))
                .collect(),
            colour: if m == DetectorMode::Bridge { "black" } else { "firebrick" },
            dashed: m == DetectorMode::Naive,
        })
        .collect();
    let svg = line_chart(&format!("{} at T = {horizon}", stats[0].as_str()), "dt", stats[0].as_str(), &series, false);
    ctx.out.add("convergence.svg", svg.into_bytes());
    println!("{} rows", study.rows.len());
    Ok(None)
}

fn percolation(ctx: &mut Ctx) -> Outcome {
    let e = &ctx.cfg.experiment;
    let lambdas = e.lambdas.clone().ok_or_else(|| missing("experiment.lambdas"))?;
    let boxes = e.box_sizes.clone().ok_or_else(|| missing("experiment.box_sizes"))?;
    let n = e.n_samples.ok_or_else(|| missing("experiment.n_samples"))?;
    let d = *ctx.cfg.model.d.get_or_insert(1);
    let radius = *ctx.cfg.model.radius.get_or_insert(1.0);
    positive("model.radius", radius)?;
    let scan = snails::neighbor::percolation_scan(&lambdas, d, &boxes, radius, n, ctx.seed(), ctx.workers())?;
    ctx.out.add_with("percolation.csv", |b| scan.write_csv(b))?;
    println!("{} rows", scan.rows.len());
    Ok(None)
}

fn stationarity(ctx: &mut Ctx) -> Outcome {
    let e = &ctx.cfg.experiment;
    let w = e.half_width.ok_or_else(|| missing("experiment.half_width"))?;
    let t = e.time.ok_or_else(|| missing("experiment.time"))?;
    let len = e.box_length.ok_or_else(|| missing("experiment.box_length"))?;
    let n = ctx.cfg.n_runs()?;
    let params: ModelParams = ctx.cfg.params()?;
    let sc = SimConfig::new(params, 0.0, ctx.seed()).with_workers(ctx.workers());
    let rep = ex::stationarity_check(&sc, w, t, len, n)?;
    ctx.out.add_with("stationarity.csv", |b| {
        let mut wr = csv::Writer::from_writer(b);
        wr.write_record([
            "lo", "hi", "margin", "interior", "expected", "mean_t0", "var_t0", "mean_t", "var_t",
            "z_mean", "z_dispersion", "consistent",
        ])?;
        for bx in &rep.boxes {
            wr.write_record([
                bx.lo.to_string(),
                bx.hi.to_string(),
                format!("{:.16e}", bx.margin),
                bx.interior.to_string(),
                bx.expected.to_string(),
                format!("{:.16e}", bx.at_zero.mean),
                format!("{:.16e}", bx.at_zero.variance),
                format!("{:.16e}", bx.at_t.mean),
                format!("{:.16e}", bx.at_t.variance),
                format!("{:.16e}", bx.z_mean),
                format!("{:.16e}", bx.z_dispersion),
                bx.consistent().to_string(),
            ])?;
        }
        wr.flush()?;
        Ok(())
    })?;
    ctx.conventions.push(format!(
        "interior sub-boxes keep a margin of {} sqrt(D t) from the window edge",
        ex::INTERIOR_MARGIN
    ));
    println!(
        "interior boxes {}",
        if rep.interior_consistent() { "consistent with the initial field" } else { "NOT consistent" }
    );
    Ok(None)
}

fn entry(ctx: &mut Ctx) -> Outcome {
    let horizon = ctx.horizon()?;
    let n = ctx.cfg.n_runs()?;
    let base = ctx.base_config()?;
    let c1 = match ctx.cfg.experiment.c1 {
        Some(c) => c,
        None => {
            let c = ctx.pilot_c1(&base, horizon)?;
            ctx.cfg.experiment.c1 = Some(c);
            c
        }
    };
    let mut sc = base;
    if let Some(WindowSetting::Fixed(w)) = ctx.cfg.sim.window {
        sc.window_half_width = Some(w);
    }
    let rep = ex::entry_experiment(&sc, c1 * horizon, horizon, n)?;
    ctx.cfg.sim.window = Some(WindowSetting::Fixed(rep.window_half_width));
    ctx.out.add_with("entry.csv", |b| {
        let mut w = csv::Writer::from_writer(b);
        w.write_record(["run_id", "N_entry"])?;
        for (i, c) in rep.counts.iter().enumerate() {
            w.write_record([i.to_string(), c.to_string()])?;
        }
        w.flush()?;
        Ok(())
    })?;
    ctx.out.add_json(
        "summary.json",
        &json!({
            "c1": c1,
            "range": rep.range,
            "mean_N": rep.mean,
            "dispersion_N_minus_1": rep.dispersion,
            "dispersion_z": rep.dispersion.z(),
            "lower_bound": rep.lower_bound,
            "upper_bound": rep.upper_bound,
            "window_half_width": rep.window_half_width,
        }),
    )?;
    println!("E[N] = {:.3}, dispersion z = {:.2}", rep.mean.mean, rep.dispersion.z());
    Ok(None)
}

fn occupation(ctx: &mut Ctx) -> Outcome {
    let horizon = ctx.horizon()?;
    let n = ctx.cfg.n_runs()?;
    let sc = ctx.sim_config(horizon)?;
    let c2 = match ctx.cfg.experiment.c2 {
        Some(c) => c,
        None => {
            let est = ex::estimate_c2(&sc, horizon, n)?;
            ctx.pilot.insert("c2_hat".into(), json!(est.mean));
            ctx.pilot.insert("c2_se".into(), json!(est.se));
            ctx.pilot.insert("c2_runs".into(), json!(n));
            ctx.conventions.push("C2_hat = mean over pilot runs of (integral of I dt) / T".into());
            ctx.cfg.experiment.c2 = Some(est.mean);
            est.mean
        }
    };
    let rep = ex::occupation_experiment(&sc, c2, horizon, n)?;
    ctx.out.add_with("occupation.csv", |b| {
        let mut w = csv::Writer::from_writer(b);
        w.write_record(["run_id", "measure_le_threshold"])?;
        for (i, m) in rep.measures.iter().enumerate() {
            w.write_record([i.to_string(), format!("{m:.16e}")])?;
        }
        w.flush()?;
        Ok(())
    })?;
    ctx.out.add_json(
        "summary.json",
        &json!({"c2": c2, "threshold": rep.threshold, "fraction_at_least_half": rep.fraction_half}),
    )?;
    println!("fraction with measure >= T/2: {:.4}", rep.fraction_half);
    Ok(None)
}

fn truncation(ctx: &mut Ctx) -> Outcome {
    let horizon = ctx.horizon()?;
    let n = ctx.cfg.n_runs()?;
    let cap = ctx
        .cfg
        .experiment
        .cap
        .or(ctx.cfg.sim.truncation)
        .ok_or_else(|| missing("experiment.cap"))?;
    let sc = ctx.sim_config(horizon)?;
    let rep = ex::truncation_experiment(&sc, cap, horizon, n)?;
    ctx.out.add_with("truncation.csv", |b| {
        let mut w = csv::Writer::from_writer(b);
        w.write_record(["run_id", "integral_I"])?;
        for (i, v) in rep.integrals.iter().enumerate() {
            w.write_record([i.to_string(), format!("{v:.16e}")])?;
        }
        w.flush()?;
        Ok(())
    })?;
    ctx.out.add_json(
        "summary.json",
        &json!({
            "cap": cap,
            "mean": rep.mean,
            "mean_bound": rep.mean_bound,
            "max_infections": rep.max_infections,
            "lifetime_identity_error": rep.lifetime_identity_error,
            "cdf_excess": rep.cdf_excess,
            "dkw_band": rep.dkw_band,
        }),
    )?;
    println!("mean integral {:.4} (bound {:.4})", rep.mean.mean, rep.mean_bound);
    Ok(None)
}
