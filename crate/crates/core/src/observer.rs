//! High-gain first-order disturbance observer and its error bound.
//!
//! The observer estimates the lumped disturbance effect b on hdot from the
//! barrier value and the applied input, through an auxiliary state xi:
//!
//! ```text
//! b_hat(x, xi) = k_b h(x) - xi
//! xidot        = k_b (L_f h(x, r) + L_g h(x) u + b_hat(x, xi))
//! ```
//!
//! Along any trajectory this filter obeys `d(b_hat)/dt = k_b (b - b_hat)`, so the
//! estimation error `e = b - b_hat` decays at rate k_b up to the drift of b. When
//! `|db/dt| <= b_h` the error satisfies the envelope returned by
//! [`observer_error_bound`].

use serde::Serialize;
use thiserror::Error;

use crate::plant::PlantModel;

/// Errors raised for invalid observer parameters.
#[derive(Debug, Error)]
pub enum ObserverError {
    #[error("invalid observer parameter `{field}`: {reason}")]
    InvalidParams {
        field: &'static str,
        reason: String,
    },
}

/// Observer gain and the constants entering the error bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ObserverConfig {
    /// Observer gain k_b, 1/s.
    pub k_b: f64,
    /// Lipschitz constant of t -> b(x(t), w(t)), (m/s)/s.
    pub b_h: f64,
    /// Assumed initial error magnitude |e0| = |b(0) - b_hat(0)|, m/s.
    pub e0_abs: f64,
}

impl ObserverConfig {
    pub fn new(k_b: f64, b_h: f64, e0_abs: f64) -> Result<Self, ObserverError> {
        let cfg = Self { k_b, b_h, e0_abs };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ObserverError> {
        if !(self.k_b.is_finite() && self.k_b > 0.0) {
            return Err(ObserverError::InvalidParams {
                field: "k_b",
                reason: format!("must be finite and > 0, got {}", self.k_b),
            });
        }
        if !(self.b_h.is_finite() && self.b_h >= 0.0) {
            return Err(ObserverError::InvalidParams {
                field: "b_h",
                reason: format!("must be finite and >= 0, got {}", self.b_h),
            });
        }
        if !(self.e0_abs.is_finite() && self.e0_abs >= 0.0) {
            return Err(ObserverError::InvalidParams {
                field: "e0_abs",
                reason: format!("must be finite and >= 0, got {}", self.e0_abs),
            });
        }
        Ok(())
    }
}

/// Auxiliary observer state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObserverState {
    /// Auxiliary state xi, m/s.
    pub xi: f64,
}

/// Disturbance estimate `b_hat(x, xi) = k_b h(x) - xi`, m/s.
pub fn b_hat<P: PlantModel>(plant: &P, x: &[f64], xi: f64, k_b: f64) -> f64 {
    k_b * plant.h(x) - xi
}

/// Time derivative of the auxiliary state,
/// `xidot = k_b (L_f h(x, r) + L_g h(x) u + b_hat(x, xi))`, m/s^2.
///
/// `u` is the input the plant is currently subject to in the observer's model
/// of hdot, i.e. the command produced by the feedback law.
pub fn xi_rate<P: PlantModel>(plant: &P, x: &[f64], u: f64, r: f64, xi: f64, k_b: f64) -> f64 {
    k_b * (plant.lie_f_h(x, r) + plant.lie_g_h(x) * u + b_hat(plant, x, xi, k_b))
}

/// Worst-case estimation-error envelope
/// `bound(t) = (|e0| - b_h/k_b) exp(-k_b t) + b_h/k_b`, m/s.
///
/// Valid whenever the true disturbance effect satisfies `|db/dt| <= b_h` and the
/// initial error satisfies `|e(0)| <= e0_abs`.
pub fn observer_error_bound(t: f64, cfg: &ObserverConfig) -> f64 {
    let steady = cfg.b_h / cfg.k_b;
    (cfg.e0_abs - steady) * (-cfg.k_b * t).exp() + steady
}
