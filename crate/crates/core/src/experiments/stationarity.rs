use serde::Serialize;

use super::{check_runs, SimConfig};
use crate::error::{Error, Result};
use crate::kernel::{lane, sample_gaussian_increment, sample_poisson_points, Region};
use crate::stats::{DispersionTest, MeanEstimate};

/// Margin, in units of `sqrt(D t)`, a sub-box needs from the window edge to
/// count as interior.
pub const INTERIOR_MARGIN: f64 = 6.0;

/// Agreement threshold in standard errors.
const Z_LIMIT: f64 = 4.0;

/// Counts in one sub-box at time 0 and time `t`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoxComparison {
    /// Extent of the box along the first axis; it spans `[-L/2, L/2]` on the
    /// others.
    pub lo: f64,
    pub hi: f64,
    /// Distance from the box to the window edge along the first axis, less
    /// the drift displacement.
    pub margin: f64,
    pub interior: bool,
    pub expected: f64,
    pub at_zero: MeanEstimate,
    pub at_t: MeanEstimate,
    /// `|mean - expected| / se` at time `t`.
    pub z_mean: f64,
    /// Mean against variance at time `t`.
    pub z_dispersion: f64,
}

impl BoxComparison {
    pub fn consistent(&self) -> bool {
        self.z_mean < Z_LIMIT && self.z_dispersion < Z_LIMIT
    }

    /// Fewer particles than the field intensity predicts, beyond noise.
    pub fn depleted(&self) -> bool {
        (self.expected - self.at_t.mean) / self.at_t.se >= Z_LIMIT
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StationarityReport {
    pub time: f64,
    pub window_half_width: f64,
    pub box_length: f64,
    pub n_runs: usize,
    pub boxes: Vec<BoxComparison>,
}

impl StationarityReport {
    /// Every interior box agrees with the Poisson field.
    pub fn interior_consistent(&self) -> bool {
        self.boxes.iter().filter(|b| b.interior).all(BoxComparison::consistent)
    }
}

/// Move a Poisson field on `[-W, W]^d` freely for time `t` and compare
/// sub-box counts with the initial intensity. Sub-boxes of side `box_length`
/// tile the first axis; only the field and motion are simulated.
pub fn stationarity_check(
    cfg: &SimConfig,
    half_width: f64,
    time: f64,
    box_length: f64,
    n_runs: usize,
) -> Result<StationarityReport> {
    check_runs(n_runs)?;
    cfg.params.validate()?;
    if !(time.is_finite() && time >= 0.0) {
        return Err(Error::invalid("t", format!("must be finite and >= 0, got {time}")));
    }
    if !(box_length > 0.0 && box_length <= 2.0 * half_width) {
        return Err(Error::invalid("box_length", "must be positive and fit in the window"));
    }
    let p = &cfg.params;
    let d = p.dim;
    let window = Region::cube(d, half_width)?;
    let n_boxes = (2.0 * half_width / box_length).floor() as usize;
    let offset = -half_width + 0.5 * (2.0 * half_width - n_boxes as f64 * box_length);
    let boxes: Vec<(f64, f64)> = (0..n_boxes)
        .map(|k| {
            let lo = offset + k as f64 * box_length;
            (lo, lo + box_length)
        })
        .collect();
    let half = 0.5 * box_length;
    let box_of = |x: &crate::kernel::Point| -> Option<usize> {
        if (1..d).any(|k| x.0[k].abs() > half) {
            return None;
        }
        boxes.iter().position(|&(lo, hi)| lo <= x.0[0] && x.0[0] < hi)
    };
    let drift = p.drift_vector();

    let counts = crate::parallel::map_indexed(n_runs, cfg.workers, |i| {
        let stream = cfg.stream(i);
        let mut field = stream.substream(lane::FIELD);
        let mut motion = stream.substream(lane::MOTION);
        let points = sample_poisson_points(&mut field, p.lambda, &window)?;
        let mut c0 = vec![0u32; n_boxes];
        let mut ct = vec![0u32; n_boxes];
        for x in &points {
            if let Some(b) = box_of(x) {
                c0[b] += 1;
            }
            let y = if time > 0.0 {
                let step = sample_gaussian_increment(&mut motion, time, p.diffusion, d)?;
                let mut y = x.add(&step);
                for k in 0..d {
                    y.0[k] += drift.0[k] * time;
                }
                y
            } else {
                *x
            };
            if let Some(b) = box_of(&y) {
                ct[b] += 1;
            }
        }
        Ok((c0, ct))
    })?;

    let expected = p.lambda * box_length.powi(d as i32);
    let spread = INTERIOR_MARGIN * (p.diffusion * time).sqrt();
    let shift = drift.norm() * time;
    let comparisons = boxes
        .iter()
        .enumerate()
        .map(|(b, &(lo, hi))| {
            let at0: Vec<f64> = counts.iter().map(|c| c.0[b] as f64).collect();
            let att: Vec<f64> = counts.iter().map(|c| c.1[b] as f64).collect();
            let at_zero = MeanEstimate::from_samples(&at0);
            let at_t = MeanEstimate::from_samples(&att);
            let disp = DispersionTest::from_samples(&att);
            let margin = (lo + half_width).min(half_width - hi) - shift;
            BoxComparison {
                lo,
                hi,
                margin,
                interior: margin >= spread,
                expected,
                z_mean: (at_t.mean - expected).abs() / at_t.se,
                z_dispersion: disp.z(),
                at_zero,
                at_t,
            }
        })
        .collect();
    Ok(StationarityReport {
        time,
        window_half_width: half_width,
        box_length,
        n_runs,
        boxes: comparisons,
    })
}
