use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{Point, Region, MAX_DIM};

/// How infection passes between an infected and a susceptible particle
/// within range.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "Option<f64>", into = "Option<f64>")]
pub enum InfectionRate {
    /// Infection on first contact, chained through radius-connected clusters.
    Instant,
    /// Per-pair transmission at this rate while within range.
    Finite(f64),
}

impl From<Option<f64>> for InfectionRate {
    fn from(v: Option<f64>) -> Self {
        v.map_or(InfectionRate::Instant, InfectionRate::Finite)
    }
}

impl From<InfectionRate> for Option<f64> {
    fn from(v: InfectionRate) -> Self {
        match v {
            InfectionRate::Instant => None,
            InfectionRate::Finite(b) => Some(b),
        }
    }
}

/// Contact detection between time steps.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectorMode {
    /// End-of-step distances only.
    #[serde(alias = "NAIVE")]
    Naive,
    /// End-of-step distances plus Brownian-bridge excursions within the step.
    #[default]
    #[serde(alias = "BRIDGE")]
    Bridge,
}

impl std::str::FromStr for DetectorMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "naive" => Ok(DetectorMode::Naive),
            "bridge" => Ok(DetectorMode::Bridge),
            _ => Err(format!("expected `naive` or `bridge`, got {s:?}")),
        }
    }
}

impl std::fmt::Display for DetectorMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DetectorMode::Naive => "naive",
            DetectorMode::Bridge => "bridge",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Intensity of the initial Poisson field, particles per unit volume.
    pub lambda: f64,
    /// Removal rate; 0 disables removal.
    pub alpha: f64,
    #[serde(rename = "d")]
    pub dim: usize,
    pub radius: f64,
    /// Variance rate of each coordinate of the Brownian motion.
    pub diffusion: f64,
    /// Per-axis drift; empty means none.
    #[serde(default)]
    pub drift: Vec<f64>,
    #[serde(default = "instant")]
    pub infection_rate: InfectionRate,
}

fn instant() -> InfectionRate {
    InfectionRate::Instant
}

impl ModelParams {
    /// One dimension, unit radius and diffusion, no drift, instant infection.
    pub fn new(lambda: f64, alpha: f64) -> Self {
        Self {
            lambda,
            alpha,
            dim: 1,
            radius: 1.0,
            diffusion: 1.0,
            drift: Vec::new(),
            infection_rate: InfectionRate::Instant,
        }
    }

    pub fn with_dim(mut self, dim: usize) -> Self {
        self.dim = dim;
        self
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn with_radius(mut self, radius: f64) -> Self {
        self.radius = radius;
        self
    }

    pub fn with_diffusion(mut self, diffusion: f64) -> Self {
        self.diffusion = diffusion;
        self
    }

    pub fn with_drift(mut self, drift: Vec<f64>) -> Self {
        self.drift = drift;
        self
    }

    pub fn with_infection_rate(mut self, rate: InfectionRate) -> Self {
        self.infection_rate = rate;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &'static str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::invalid(name, format!("must be finite and > 0, got {v}")))
            }
        };
        positive("lambda", self.lambda)?;
        positive("radius", self.radius)?;
        positive("diffusion", self.diffusion)?;
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::invalid(
                "alpha",
                format!("must be finite and >= 0, got {}", self.alpha),
            ));
        }
        if self.dim == 0 || self.dim > MAX_DIM {
            return Err(Error::invalid(
                "d",
                format!("must be in 1..={MAX_DIM}, got {}", self.dim),
            ));
        }
        if !self.drift.is_empty() && self.drift.len() != self.dim {
            return Err(Error::invalid(
                "drift",
                format!("needs {} components, got {}", self.dim, self.drift.len()),
            ));
        }
        if self.drift.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("drift", "components must be finite"));
        }
        if let InfectionRate::Finite(b) = self.infection_rate {
            positive("infection_rate", b)?;
        }
        Ok(())
    }

    pub fn drift_vector(&self) -> Point {
        let mut p = Point::ORIGIN;
        for (k, v) in self.drift.iter().enumerate().take(MAX_DIM) {
            p.0[k] = *v;
        }
        p
    }

    /// Step giving an RMS per-step displacement of 10% of the radius.
    pub fn default_dt(&self) -> f64 {
        1e-2 * self.radius * self.radius / self.diffusion
    }
}

/// Half-width of the simulated window `[-W, W]^d`:
/// `W = speed * t_max + sigmas * sqrt(2 * diffusion * t_max) + |drift| * t_max`,
/// never less than twice the radius.
pub fn window_half_width(params: &ModelParams, t_max: f64, speed: f64, sigmas: f64) -> f64 {
    let drift = params.drift_vector().norm();
    let w = speed * t_max + sigmas * (2.0 * params.diffusion * t_max).sqrt() + drift * t_max;
    w.max(2.0 * params.radius)
}

pub fn window_for(params: &ModelParams, half_width: f64) -> Result<Region> {
    Region::cube(params.dim, half_width)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let p = ModelParams::new(1.0, 1.0);
        assert_eq!(p.dim, 1);
        assert_eq!(p.radius, 1.0);
        assert_eq!(p.diffusion, 1.0);
        assert_eq!(p.infection_rate, InfectionRate::Instant);
        assert!((p.default_dt() - 0.01).abs() < 1e-18);
        assert!(p.validate().is_ok());
        assert_eq!(p.with_radius(2.0).with_diffusion(4.0).default_dt(), 0.01);
    }

    #[test]
    fn validation_names_field() {
        let e = ModelParams::new(1.0, -1.0).validate().unwrap_err();
        assert!(e.to_string().contains("`alpha`"), "{e}");
        let e = ModelParams::new(0.0, 1.0).validate().unwrap_err();
        assert!(e.to_string().contains("`lambda`"));
        let e = ModelParams::new(1.0, 1.0).with_drift(vec![1.0, 2.0]).validate().unwrap_err();
        assert!(e.to_string().contains("`drift`"));
        let e = ModelParams::new(1.0, 1.0).with_dim(4).validate().unwrap_err();
        assert!(e.to_string().contains("`d`"));
        let e = ModelParams::new(1.0, 1.0)
            .with_infection_rate(InfectionRate::Finite(0.0))
            .validate()
            .unwrap_err();
        assert!(e.to_string().contains("`infection_rate`"));
    }

    #[test]
    fn infection_rate_serde() {
        let p: ModelParams =
            serde_json::from_str(r#"{"lambda":1,"alpha":0,"d":1,"radius":1,"diffusion":1}"#).unwrap();
        assert_eq!(p.infection_rate, InfectionRate::Instant);
        let p: ModelParams = serde_json::from_str(
            r#"{"lambda":1,"alpha":0,"d":1,"radius":1,"diffusion":1,"infection_rate":2.5}"#,
        )
        .unwrap();
        assert_eq!(p.infection_rate, InfectionRate::Finite(2.5));
        let back = serde_json::to_value(&p).unwrap();
        assert_eq!(back["infection_rate"], 2.5);
    }

    #[test]
    fn window_formula() {
        let p = ModelParams::new(1.0, 1.0);
        let w = window_half_width(&p, 50.0, 2.0, 6.0);
        assert!((w - (100.0 + 6.0 * 10.0)).abs() < 1e-12);
        assert_eq!(window_half_width(&p, 1e-6, 0.0, 0.0), 2.0);
    }
}
