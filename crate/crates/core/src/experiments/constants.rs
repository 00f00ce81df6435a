use serde::Serialize;

use crate::error::{Error, Result};

/// Constants of the extinction argument, instantiated for given `C1`, `C2`,
/// removal rate and horizon.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ProofConstants {
    pub c1: f64,
    pub c2: f64,
    pub alpha: f64,
    pub horizon: f64,
    /// `1 / (200 C1)`.
    pub epsilon: f64,
    /// Number of time slices, `100 C1 T = T / (2 epsilon)`.
    pub m: f64,
    /// `1 - (1 - exp(-alpha epsilon))^(2 C2) / 2`.
    pub p: f64,
    /// `1 - p`, kept separately because `p` rounds to 1 in floating point
    /// once `alpha epsilon` is small.
    pub one_minus_p: f64,
    /// Infection budget of the truncated process, `20 C1 T`.
    pub k_trunc: f64,
}

pub fn proof_constants(c1: f64, c2: f64, alpha: f64, horizon: f64) -> Result<ProofConstants> {
    for (name, v) in [("C1", c1), ("C2", c2), ("alpha", alpha), ("T", horizon)] {
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::invalid(name, format!("must be finite and > 0, got {v}")));
        }
    }
    let epsilon = 1.0 / (200.0 * c1);
    // 1 - e^{-x} computed without cancellation for small x
    let q = -(-alpha * epsilon).exp_m1();
    let one_minus_p = q.powf(2.0 * c2) / 2.0;
    Ok(ProofConstants {
        c1,
        c2,
        alpha,
        horizon,
        epsilon,
        m: horizon / (2.0 * epsilon),
        p: 1.0 - one_minus_p,
        one_minus_p,
        k_trunc: 20.0 * c1 * horizon,
    })
}
