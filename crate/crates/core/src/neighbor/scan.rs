use std::io::Write;

use serde::Serialize;

use super::{gilbert_cluster, NeighborIndex};
use crate::error::{Error, Result};
use crate::kernel::{sample_poisson_points, Point, Region, RngStream};
use crate::parallel::map_indexed;
use crate::stats::MeanEstimate;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PercolationRow {
    pub lambda: f64,
    pub box_size: f64,
    pub n_samples: usize,
    pub mean_cluster_size: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub boundary_touch_freq: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PercolationScan {
    pub dim: usize,
    pub radius: f64,
    pub rows: Vec<PercolationRow>,
}

impl PercolationScan {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "lambda",
            "box_size",
            "mean_cluster_size",
            "ci_low",
            "ci_high",
            "boundary_touch_freq",
        ])?;
        for r in &self.rows {
            w.write_record([
                r.lambda.to_string(),
                r.box_size.to_string(),
                r.mean_cluster_size.to_string(),
                r.ci_low.to_string(),
                r.ci_high.to_string(),
                r.boundary_touch_freq.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Origin-seeded cluster statistics of a Poisson field plus a point at the
/// origin, in the box `[-L/2, L/2]^d` for each intensity and box side `L`.
pub fn percolation_scan(
    lambdas: &[f64],
    dim: usize,
    box_sizes: &[f64],
    radius: f64,
    n_samples: usize,
    seed: u64,
    workers: usize,
) -> Result<PercolationScan> {
    if n_samples == 0 {
        return Err(Error::invalid("n_samples", "must be > 0"));
    }
    let mut rows = Vec::new();
    for (li, &lambda) in lambdas.iter().enumerate() {
        for (bi, &box_size) in box_sizes.iter().enumerate() {
            if !(box_size > 2.0 * radius) {
                return Err(Error::invalid(
                    "box_sizes",
                    format!("box side {box_size} must exceed twice the radius"),
                ));
            }
            let region = Region::cube(dim, box_size / 2.0)?;
            let base = ((li * box_sizes.len() + bi) * n_samples) as u64;
            let samples = map_indexed(n_samples, workers, |s| {
                let mut rng = RngStream::new(seed, base + s as u64);
                let mut pts = vec![Point::ORIGIN];
                pts.extend(sample_poisson_points(&mut rng, lambda, &region)?);
                let index = NeighborIndex::dense(&pts, dim, radius)?.with_bounds(region);
                let c = gilbert_cluster(&index, 0)?;
                Ok((c.size() as f64, c.touches_boundary))
            })?;
            let sizes: Vec<f64> = samples.iter().map(|s| s.0).collect();
            let est = MeanEstimate::from_samples(&sizes);
            let (ci_low, ci_high) = est.ci95();
            rows.push(PercolationRow {
                lambda,
                box_size,
                n_samples,
                mean_cluster_size: est.mean,
                ci_low,
                ci_high,
                boundary_touch_freq: samples.iter().filter(|s| s.1).count() as f64
                    / n_samples as f64,
            });
        }
    }
    Ok(PercolationScan { dim, radius, rows })
}
