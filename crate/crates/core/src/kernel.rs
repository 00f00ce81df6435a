//! Randomness primitives and basic geometry.
//!
//! Every random quantity in a run is drawn from an [`RngStream`], a ChaCha8
//! generator addressed by `(master_seed, stream_id, lane)`. The stream id is
//! the run index; lanes split one run into independent substreams (initial
//! field, motion, removal clocks) so that two coupled runs can share some
//! sources of randomness and not others. Contact decisions use
//! [`pair_uniform`], a stateless hash, so they do not depend on how many
//! draws a run has consumed.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest supported spatial dimension.
pub const MAX_DIM: usize = 3;

/// Substream labels used by the simulator.
pub mod lane {
    pub const FIELD: u64 = 0;
    pub const MOTION: u64 = 1;
    pub const REMOVAL: u64 = 2;
    pub const CONTACT: u64 = 3;
    pub const PILOT: u64 = 4;
}

#[inline]
pub(crate) fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic generator for one run.
#[derive(Clone, Debug)]
pub struct RngStream {
    master_seed: u64,
    stream_id: u64,
    lane: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(master_seed: u64, stream_id: u64) -> Self {
        Self::with_lane(master_seed, stream_id, lane::FIELD)
    }

    fn with_lane(master_seed: u64, stream_id: u64, lane: u64) -> Self {
        let mut key = [0u8; 32];
        let mut s = master_seed ^ mix64(lane.wrapping_mul(0xD134_2543_DE82_EF95));
        for chunk in key.chunks_exact_mut(8) {
            s = mix64(s);
            chunk.copy_from_slice(&s.to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(stream_id);
        Self {
            master_seed,
            stream_id,
            lane,
            rng,
        }
    }

    /// Fresh generator for another lane of the same run. Does not touch `self`.
    pub fn substream(&self, lane: u64) -> Self {
        Self::with_lane(self.master_seed, self.stream_id, lane)
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    pub fn lane(&self) -> u64 {
        self.lane
    }

    #[inline]
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    #[inline]
    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    #[inline]
    pub fn standard_exponential(&mut self) -> f64 {
        Exp1.sample(&mut self.rng)
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// Uniform on `[0, 1)` determined entirely by its arguments.
///
/// Used for per-pair, per-step contact decisions so that coupled runs make
/// the same decision for the same pair at the same step.
#[inline]
pub fn pair_uniform(key: u64, step: u64, a: u64, b: u64) -> f64 {
    let h = mix64(key ^ mix64(step ^ mix64(a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ mix64(b))));
    (h >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Position in up to [`MAX_DIM`] dimensions; unused trailing coordinates stay 0.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Point(pub [f64; MAX_DIM]);

impl Point {
    pub const ORIGIN: Point = Point([0.0; MAX_DIM]);

    pub fn from_slice(coords: &[f64]) -> Result<Self> {
        if coords.is_empty() || coords.len() > MAX_DIM {
            return Err(Error::invalid(
                "d",
                format!("dimension must be in 1..={MAX_DIM}, got {}", coords.len()),
            ));
        }
        let mut p = [0.0; MAX_DIM];
        p[..coords.len()].copy_from_slice(coords);
        Ok(Point(p))
    }

    pub fn line(x: f64) -> Self {
        Point([x, 0.0, 0.0])
    }

    #[inline]
    pub fn x(&self) -> f64 {
        self.0[0]
    }

    #[inline]
    pub fn coords(&self, d: usize) -> &[f64] {
        &self.0[..d]
    }

    #[inline]
    pub fn norm2(&self) -> f64 {
        self.0.iter().map(|c| c * c).sum()
    }

    #[inline]
    pub fn norm(&self) -> f64 {
        self.norm2().sqrt()
    }

    #[inline]
    pub fn dist2(&self, other: &Point) -> f64 {
        let mut s = 0.0;
        for k in 0..MAX_DIM {
            let t = self.0[k] - other.0[k];
            s += t * t;
        }
        s
    }

    #[inline]
    pub fn sub(&self, other: &Point) -> Point {
        let mut out = [0.0; MAX_DIM];
        for (k, o) in out.iter_mut().enumerate() {
            *o = self.0[k] - other.0[k];
        }
        Point(out)
    }

    #[inline]
    pub fn add(&self, other: &Point) -> Point {
        let mut out = [0.0; MAX_DIM];
        for (k, o) in out.iter_mut().enumerate() {
            *o = self.0[k] + other.0[k];
        }
        Point(out)
    }

    #[inline]
    pub fn dot(&self, other: &Point) -> f64 {
        (0..MAX_DIM).map(|k| self.0[k] * other.0[k]).sum()
    }
}

/// Contact predicate shared by every module: Euclidean distance at most `r`.
/// Distance exactly `r` counts as in range.
#[inline]
pub fn in_range(a: &Point, b: &Point, r: f64) -> bool {
    a.dist2(b) <= r * r
}

/// Axis-aligned box `[lo, hi]` in `dim` dimensions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Region {
    dim: usize,
    lo: Point,
    hi: Point,
}

impl Region {
    pub fn new(lo: &[f64], hi: &[f64]) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::invalid("region", "lo and hi differ in dimension"));
        }
        let (lo_p, hi_p) = (Point::from_slice(lo)?, Point::from_slice(hi)?);
        for k in 0..lo.len() {
            if !(lo[k].is_finite() && hi[k].is_finite()) || lo[k] >= hi[k] {
                return Err(Error::invalid(
                    "region",
                    format!("need finite lo < hi on axis {k}, got [{}, {}]", lo[k], hi[k]),
                ));
            }
        }
        Ok(Self {
            dim: lo.len(),
            lo: lo_p,
            hi: hi_p,
        })
    }

    pub fn interval(lo: f64, hi: f64) -> Result<Self> {
        Self::new(&[lo], &[hi])
    }

    /// `[-half_width, half_width]^dim`.
    pub fn cube(dim: usize, half_width: f64) -> Result<Self> {
        if dim == 0 || dim > MAX_DIM {
            return Err(Error::invalid("d", format!("dimension must be in 1..={MAX_DIM}")));
        }
        Self::new(&vec![-half_width; dim], &vec![half_width; dim])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lo(&self) -> &Point {
        &self.lo
    }

    pub fn hi(&self) -> &Point {
        &self.hi
    }

    pub fn volume(&self) -> f64 {
        (0..self.dim).map(|k| self.hi.0[k] - self.lo.0[k]).product()
    }

    pub fn contains(&self, p: &Point) -> bool {
        (0..self.dim).all(|k| p.0[k] >= self.lo.0[k] && p.0[k] <= self.hi.0[k])
    }

    /// Smallest distance from an interior point to the box boundary
    /// (negative outside).
    pub fn depth(&self, p: &Point) -> f64 {
        (0..self.dim)
            .map(|k| (p.0[k] - self.lo.0[k]).min(self.hi.0[k] - p.0[k]))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Homogeneous Poisson point process on `region`.
pub fn sample_poisson_points(
    rng: &mut RngStream,
    intensity: f64,
    region: &Region,
) -> Result<Vec<Point>> {
    if !intensity.is_finite() || intensity < 0.0 {
        return Err(Error::invalid(
            "intensity",
            format!("must be finite and >= 0, got {intensity}"),
        ));
    }
    let mean = intensity * region.volume();
    if mean == 0.0 {
        return Ok(Vec::new());
    }
    let count = Poisson::new(mean)
        .map_err(|e| Error::invalid("intensity", e.to_string()))?
        .sample(rng) as usize;
    let d = region.dim();
    let mut points = Vec::with_capacity(count);
    for _ in 0..count {
        let mut p = Point::ORIGIN;
        for k in 0..d {
            p.0[k] = region.lo.0[k] + (region.hi.0[k] - region.lo.0[k]) * rng.uniform();
        }
        points.push(p);
    }
    Ok(points)
}

/// Brownian increment over `dt`: each coordinate `Normal(0, diffusion * dt)`.
pub fn sample_gaussian_increment(
    rng: &mut RngStream,
    dt: f64,
    diffusion: f64,
    d: usize,
) -> Result<Point> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::invalid("dt", format!("must be > 0, got {dt}")));
    }
    if !(diffusion.is_finite() && diffusion > 0.0) {
        return Err(Error::invalid("diffusion", format!("must be > 0, got {diffusion}")));
    }
    if d == 0 || d > MAX_DIM {
        return Err(Error::invalid("d", format!("dimension must be in 1..={MAX_DIM}")));
    }
    let sd = (diffusion * dt).sqrt();
    let mut p = Point::ORIGIN;
    for c in p.0.iter_mut().take(d) {
        *c = sd * rng.standard_normal();
    }
    Ok(p)
}

pub fn sample_exponential(rng: &mut RngStream, rate: f64) -> Result<f64> {
    if !(rate.is_finite() && rate > 0.0) {
        return Err(Error::invalid("rate", format!("must be > 0, got {rate}")));
    }
    Ok(rng.standard_exponential() / rate)
}

/// Probability that a Brownian bridge from `(0, x0)` to `(dt, x1)` with
/// variance rate `diffusion` reaches `level`, for endpoints strictly above it.
///
/// Endpoints at or below the level mean the crossing already happened; that is
/// a caller error here.
pub fn bridge_crossing_probability(
    x0: f64,
    x1: f64,
    level: f64,
    dt: f64,
    diffusion: f64,
) -> Result<f64> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::invalid("dt", format!("must be > 0, got {dt}")));
    }
    if !(diffusion.is_finite() && diffusion > 0.0) {
        return Err(Error::invalid("diffusion", format!("must be > 0, got {diffusion}")));
    }
    if !(x0 > level && x1 > level) {
        return Err(Error::Precondition(format!(
            "bridge endpoints ({x0}, {x1}) must lie strictly above level {level}"
        )));
    }
    Ok(gap_crossing_probability(x0 - level, x1 - level, diffusion * dt))
}

/// `exp(-2 g0 g1 / var)` for positive gaps; `var` is the variance accumulated
/// over the step.
#[inline]
pub(crate) fn gap_crossing_probability(g0: f64, g1: f64, var: f64) -> f64 {
    (-2.0 * g0 * g1 / var).exp()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mean_var(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        (m, v)
    }

    #[test]
    fn identical_streams_replay() {
        let mut a = RngStream::new(7, 3);
        let mut b = RngStream::new(7, 3);
        let xa: Vec<u64> = (0..32).map(|_| a.next_u64()).collect();
        let xb: Vec<u64> = (0..32).map(|_| b.next_u64()).collect();
        assert_eq!(xa, xb);
    }

    #[test]
    fn distinct_streams_and_lanes_differ() {
        let base = RngStream::new(7, 3);
        let mut other_id = RngStream::new(7, 4);
        let mut other_lane = base.substream(lane::MOTION);
        let mut base = base;
        let x = base.next_u64();
        assert_ne!(x, other_id.next_u64());
        assert_ne!(x, other_lane.next_u64());
        assert_eq!(other_lane.lane(), lane::MOTION);
        assert_eq!(other_lane.stream_id(), 3);
    }

    #[test]
    fn distinct_streams_uncorrelated() {
        let mut a = RngStream::new(1, 0);
        let mut b = RngStream::new(1, 1);
        let n = 100_000;
        let s: f64 = (0..n)
            .map(|_| (a.uniform() - 0.5) * (b.uniform() - 0.5))
            .sum::<f64>()
            / n as f64;
        // sd of the product mean is (1/12)/sqrt(n) ~ 2.6e-4
        assert!(s.abs() < 1.5e-3, "{s}");
    }

    #[test]
    fn poisson_zero_intensity_is_empty() {
        let mut rng = RngStream::new(0, 0);
        let r = Region::interval(-3.0, 3.0).unwrap();
        assert!(sample_poisson_points(&mut rng, 0.0, &r).unwrap().is_empty());
    }

    #[test]
    fn poisson_rejects_bad_input() {
        let mut rng = RngStream::new(0, 0);
        let r = Region::interval(0.0, 1.0).unwrap();
        assert!(sample_poisson_points(&mut rng, f64::NAN, &r).is_err());
        assert!(sample_poisson_points(&mut rng, -1.0, &r).is_err());
        assert!(Region::interval(1.0, 1.0).is_err());
        assert!(Region::new(&[0.0, 0.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn poisson_count_mean_and_variance() {
        // lambda = 2 on [0, 5]: mean = variance = 10
        let r = Region::interval(0.0, 5.0).unwrap();
        let mut rng = RngStream::new(11, 0);
        let counts: Vec<f64> = (0..20_000)
            .map(|_| sample_poisson_points(&mut rng, 2.0, &r).unwrap().len() as f64)
            .collect();
        let (m, v) = mean_var(&counts);
        assert!((m - 10.0).abs() < 4.0 * (10.0f64 / 20_000.0).sqrt(), "{m}");
        // se of sample variance for Poisson ~ sqrt((mu + 2 mu^2)/n)
        assert!((v - 10.0).abs() < 4.0 * ((10.0 + 200.0) / 20_000.0f64).sqrt(), "{v}");
    }

    #[test]
    fn poisson_large_region_mean() {
        // lambda = 1 on [-50, 50], 10^4 repetitions: mean 100 within 3 s.e.
        let r = Region::interval(-50.0, 50.0).unwrap();
        let mut rng = RngStream::new(12, 0);
        let counts: Vec<f64> = (0..10_000)
            .map(|_| sample_poisson_points(&mut rng, 1.0, &r).unwrap().len() as f64)
            .collect();
        let (m, v) = mean_var(&counts);
        let se = (v / counts.len() as f64).sqrt();
        assert!((m - 100.0).abs() < 3.0 * se, "mean {m}, se {se}");
    }

    #[test]
    fn poisson_points_inside_region() {
        let r = Region::new(&[-1.0, 2.0], &[1.0, 5.0]).unwrap();
        let mut rng = RngStream::new(3, 9);
        let pts = sample_poisson_points(&mut rng, 5.0, &r).unwrap();
        assert!(!pts.is_empty());
        assert!(pts.iter().all(|p| r.contains(p) && p.0[2] == 0.0));
    }

    #[test]
    fn gaussian_increment_variance() {
        let mut rng = RngStream::new(5, 0);
        let xs: Vec<f64> = (0..100_000)
            .map(|_| sample_gaussian_increment(&mut rng, 1.0, 1.0, 1).unwrap().x())
            .collect();
        let (_, v) = mean_var(&xs);
        assert!((v - 1.0).abs() < 0.05, "{v}");

        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for _ in 0..100_000 {
            let p = sample_gaussian_increment(&mut rng, 0.25, 4.0, 2).unwrap();
            xs.push(p.0[0]);
            ys.push(p.0[1]);
            assert_eq!(p.0[2], 0.0);
        }
        assert!((mean_var(&xs).1 - 1.0).abs() < 0.05);
        assert!((mean_var(&ys).1 - 1.0).abs() < 0.05);
    }

    #[test]
    fn gaussian_increment_small_dt_scaling() {
        let mut rng = RngStream::new(5, 1);
        let dt = 1e-8;
        let xs: Vec<f64> = (0..10_000)
            .map(|_| sample_gaussian_increment(&mut rng, dt, 1.0, 1).unwrap().x())
            .collect();
        let rms = (xs.iter().map(|x| x * x).sum::<f64>() / xs.len() as f64).sqrt();
        assert!(rms / dt.sqrt() > 0.9 && rms / dt.sqrt() < 1.1, "{rms}");
    }

    #[test]
    fn gaussian_increment_rejects_nonpositive_dt() {
        let mut rng = RngStream::new(0, 0);
        assert!(sample_gaussian_increment(&mut rng, 0.0, 1.0, 1).is_err());
        assert!(sample_gaussian_increment(&mut rng, -1.0, 1.0, 1).is_err());
    }

    #[test]
    fn exponential_moments() {
        let mut rng = RngStream::new(8, 0);
        let n = 100_000;
        for rate in [1.0, 4.0] {
            let xs: Vec<f64> = (0..n).map(|_| sample_exponential(&mut rng, rate).unwrap()).collect();
            let (m, v) = mean_var(&xs);
            let se = (v / n as f64).sqrt();
            assert!((m - 1.0 / rate).abs() < 3.0 * se, "rate {rate}: mean {m}");
        }
        let tail = (0..n)
            .filter(|_| sample_exponential(&mut rng, 0.5).unwrap() > 2.0)
            .count() as f64
            / n as f64;
        let p = (-1.0f64).exp();
        assert!((tail - p).abs() < 4.0 * (p * (1.0 - p) / n as f64).sqrt(), "{tail}");
        assert!(sample_exponential(&mut rng, 0.0).is_err());
    }

    #[test]
    fn bridge_closed_form() {
        let p = bridge_crossing_probability(2.0, 2.0, 1.0, 0.1, 2.0).unwrap();
        assert!((p - (-10.0f64).exp()).abs() < 1e-18);
        assert!((p - 4.54e-5).abs() < 1e-7);
        let p = bridge_crossing_probability(1.0 + 1e-9, 1.0 + 1e-9, 1.0, 1.0, 2.0).unwrap();
        assert!((p - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bridge_precondition() {
        assert!(matches!(
            bridge_crossing_probability(1.0, 2.0, 1.0, 0.1, 1.0),
            Err(Error::Precondition(_))
        ));
        assert!(matches!(
            bridge_crossing_probability(0.5, 2.0, 1.0, 0.1, 1.0),
            Err(Error::Precondition(_))
        ));
        assert!(bridge_crossing_probability(2.0, 2.0, 1.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn pair_uniform_is_stateless_and_spread() {
        assert_eq!(pair_uniform(1, 2, 3, 4), pair_uniform(1, 2, 3, 4));
        assert_ne!(pair_uniform(1, 2, 3, 4), pair_uniform(1, 2, 4, 3));
        let n = 200_000u64;
        let m = (0..n).map(|i| pair_uniform(9, i / 100, i % 10, i % 7)).sum::<f64>() / n as f64;
        assert!((m - 0.5).abs() < 0.003, "{m}");
    }
}
