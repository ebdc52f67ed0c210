//! Closed-form safety controllers, safety certificates, and the comparison
//! lower bound on the barrier value.
//!
//! All controllers pick the boundary element of the CBF controller set, which
//! is closed-form because the input is scalar and `L_g h` never vanishes:
//!
//! ```text
//! nominal:          u = -(L_f h + alpha h) / L_g h
//! dob:              u = -(L_f h + alpha h + b_hat - sigma) / L_g h
//! worst_case:       u = -(L_f h + alpha h - K p_bar) / L_g h
//! transient_cancel: u = dob with sigma replaced by the error envelope bound(t)
//! ```
//!
//! where `K p_bar` bounds `|b|` given `||p||_inf <= p_bar` and `bound(t)` is
//! [`observer_error_bound`](crate::observer::observer_error_bound).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::observer::{b_hat, observer_error_bound, ObserverConfig};
use crate::plant::{PlantModel, Signals};

/// Errors raised by controller evaluation or certificate construction.
#[derive(Debug, Error)]
pub enum ControllerError {
    #[error("invalid controller parameter `{field}`: {reason}")]
    InvalidParams {
        field: &'static str,
        reason: String,
    },
    #[error("controller `{0:?}` requires `sigma`")]
    MissingSigma(ControllerKind),
    #[error("controller `worst_case` requires `p_bar`")]
    MissingPBar,
    #[error("controller undefined where L_g h(x) = 0")]
    ZeroInputGain,
    #[error("comparison bound undefined at k_b = alpha (k_b = {k_b}, alpha = {alpha})")]
    GainEqualsAlpha { k_b: f64, alpha: f64 },
}

/// The available feedback laws.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerKind {
    Nominal,
    Dob,
    WorstCase,
    TransientCancel,
}

impl ControllerKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ControllerKind::Nominal => "nominal",
            ControllerKind::Dob => "dob",
            ControllerKind::WorstCase => "worst_case",
            ControllerKind::TransientCancel => "transient_cancel",
        }
    }
}

/// Controller selection and gains.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ControllerConfig {
    pub kind: ControllerKind,
    /// Class-K constant alpha, 1/s.
    pub alpha: f64,
    /// Robustness margin sigma, m/s. Used by the dob controller only.
    pub sigma: Option<f64>,
    /// Worst-case disturbance-field bound p_bar, m/s^2. Used by worst_case only.
    pub p_bar: Option<f64>,
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<(), ControllerError> {
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(ControllerError::InvalidParams {
                field: "alpha",
                reason: format!("must be finite and > 0, got {}", self.alpha),
            });
        }
        if let Some(sigma) = self.sigma {
            if !(sigma.is_finite() && sigma >= 0.0) {
                return Err(ControllerError::InvalidParams {
                    field: "sigma",
                    reason: format!("must be finite and >= 0, got {sigma}"),
                });
            }
        }
        if let Some(p_bar) = self.p_bar {
            if !(p_bar.is_finite() && p_bar >= 0.0) {
                return Err(ControllerError::InvalidParams {
                    field: "p_bar",
                    reason: format!("must be finite and >= 0, got {p_bar}"),
                });
            }
        }
        match self.kind {
            ControllerKind::Dob if self.sigma.is_none() => {
                Err(ControllerError::MissingSigma(self.kind))
            }
            ControllerKind::WorstCase if self.p_bar.is_none() => Err(ControllerError::MissingPBar),
            _ => Ok(()),
        }
    }

    /// The robustness margin this controller effectively provides against the
    /// observer error, for certificate purposes.
    ///
    /// The dob controller provides its configured sigma. The transient
    /// cancelling controller applies the full time-varying envelope, which
    /// dominates the error exactly like a constant margin of
    /// `max(|e0|, b_h/k_b)` does. The nominal and worst-case laws carry no
    /// observer-error margin (the worst-case law has its own invariance
    /// argument, outside this certificate).
    pub fn sigma_effective(&self, obs: &ObserverConfig) -> f64 {
        match self.kind {
            ControllerKind::Dob => self.sigma.unwrap_or(0.0),
            ControllerKind::TransientCancel => obs.e0_abs.max(obs.b_h / obs.k_b),
            ControllerKind::Nominal | ControllerKind::WorstCase => 0.0,
        }
    }
}

/// Which of the two provable-safety statements certified the configuration, and the
/// thresholds involved.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SafetyCertificate {
    /// 1, 2, or null when not certified.
    pub statement: Option<u8>,
    /// The verdict implied by `statement`.
    pub verdict: Verdict,
    /// Margin the controller provides, m/s (see `sigma_effective`).
    pub sigma_effective: f64,
    /// Margin needed for statement 1: `max(|e0|, b_h/k_b)`, m/s.
    pub sigma_required_1: f64,
    /// Margin needed for statement 2: `b_h/k_b`, m/s.
    pub sigma_required_2: f64,
    /// Initial-set threshold `(|e0| - b_h/k_b)/(k_b - alpha)`, m.
    /// Only defined when `k_b > alpha`.
    pub c0_threshold: Option<f64>,
    /// Barrier value at the initial state, m.
    pub h_x0: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Verdict {
    #[serde(rename = "provably-safe")]
    ProvablySafe,
    #[serde(rename = "not-certified")]
    NotCertified,
}

fn input_gain_checked<P: PlantModel>(plant: &P, x: &[f64]) -> Result<f64, ControllerError> {
    let lgh = plant.lie_g_h(x);
    if lgh == 0.0 {
        Err(ControllerError::ZeroInputGain)
    } else {
        Ok(lgh)
    }
}

/// Nominal CBF controller `u = -(L_f h + alpha h) / L_g h`, m/s^2.
pub fn nominal_control<P: PlantModel>(
    plant: &P,
    x: &[f64],
    sig: Signals,
    cfg: &ControllerConfig,
) -> Result<f64, ControllerError> {
    let lgh = input_gain_checked(plant, x)?;
    let lfh = plant.lie_f_h(x, sig.r);
    let h = plant.h(x);
    Ok(-(lfh + cfg.alpha * h) / lgh)
}

/// Observer-compensated robust controller
/// `u = -(L_f h + alpha h + b_hat - sigma) / L_g h`, m/s^2.
///
/// Satisfies the robustified CBF inequality with equality:
/// `L_f h + L_g h u + b_hat + alpha h - sigma = 0`.
pub fn dob_control<P: PlantModel>(
    plant: &P,
    x: &[f64],
    sig: Signals,
    xi: f64,
    cfg: &ControllerConfig,
    k_b: f64,
) -> Result<f64, ControllerError> {
    let sigma = cfg
        .sigma
        .ok_or(ControllerError::MissingSigma(ControllerKind::Dob))?;
    let lgh = input_gain_checked(plant, x)?;
    let lfh = plant.lie_f_h(x, sig.r);
    let h = plant.h(x);
    let bh = b_hat(plant, x, xi, k_b);
    Ok(-(lfh + cfg.alpha * h + bh - sigma) / lgh)
}

/// Worst-case robust controller
/// `u = -(L_f h + alpha h - K(x) p_bar) / L_g h`, m/s^2,
///
/// where `K(x) = plant.disturbance_gain(x)` maps the field bound
/// `||p||_inf <= p_bar` to `|b| <= K p_bar`. Guarantees `hdot >= -alpha h` for
/// every admissible disturbance, at the price of always assuming the worst.
pub fn worst_case_control<P: PlantModel>(
    plant: &P,
    x: &[f64],
    sig: Signals,
    cfg: &ControllerConfig,
) -> Result<f64, ControllerError> {
    let p_bar = cfg.p_bar.ok_or(ControllerError::MissingPBar)?;
    let lgh = input_gain_checked(plant, x)?;
    let lfh = plant.lie_f_h(x, sig.r);
    let h = plant.h(x);
    Ok(-(lfh + cfg.alpha * h - plant.disturbance_gain(x) * p_bar) / lgh)
}

/// Baseline that cancels the transient estimation error: the dob law with
/// sigma replaced by the full time-varying envelope
/// `bound(t) = (|e0| - b_h/k_b) exp(-k_b t) + b_h/k_b`.
pub fn transient_cancel_control<P: PlantModel>(
    plant: &P,
    x: &[f64],
    sig: Signals,
    xi: f64,
    cfg: &ControllerConfig,
    obs: &ObserverConfig,
    t: f64,
) -> Result<f64, ControllerError> {
    let lgh = input_gain_checked(plant, x)?;
    let lfh = plant.lie_f_h(x, sig.r);
    let h = plant.h(x);
    let bh = b_hat(plant, x, xi, obs.k_b);
    let sigma_t = observer_error_bound(t, obs);
    Ok(-(lfh + cfg.alpha * h + bh - sigma_t) / lgh)
}

/// Evaluates the two provable-safety statements for a controller/observer pair and an initial
/// barrier value.
///
/// Statement 1 (margin dominates the error for all time) is checked first;
/// statement 2 (margin dominates the steady error, fast observer, shrunken
/// initial set) second. Both required margins are always reported so callers
/// can see the gap.
pub fn certify(cfg: &ControllerConfig, obs: &ObserverConfig, h_x0: f64) -> SafetyCertificate {
    let sigma = cfg.sigma_effective(obs);
    let steady = obs.b_h / obs.k_b;
    let required_1 = obs.e0_abs.max(steady);
    let required_2 = steady;
    let c0_threshold = if obs.k_b > cfg.alpha {
        Some((obs.e0_abs - steady) / (obs.k_b - cfg.alpha))
    } else {
        None
    };
    let statement = if sigma >= required_1 {
        Some(1)
    } else if sigma >= required_2 && c0_threshold.is_some_and(|c0| h_x0 >= c0) {
        Some(2)
    } else {
        None
    };
    SafetyCertificate {
        statement,
        verdict: if statement.is_some() {
            Verdict::ProvablySafe
        } else {
            Verdict::NotCertified
        },
        sigma_effective: sigma,
        sigma_required_1: required_1,
        sigma_required_2: required_2,
        c0_threshold,
        h_x0,
    }
}

/// Comparison lower bound on the barrier value under statement-2
/// conditions:
///
/// ```text
/// y(t) = (h0 + (b_h/k_b - |e0|)/(k_b - alpha)) (exp(-alpha t) - exp(-k_b t))
///        + h0 exp(-k_b t)
///        + ((sigma - b_h/k_b)/alpha) (1 - exp(-alpha t))
/// ```
///
/// Undefined at `k_b = alpha` (removable singularity, rejected rather than
/// implemented as a limit).
pub fn comparison_lower_bound(
    t: f64,
    h_x0: f64,
    cfg: &ControllerConfig,
    obs: &ObserverConfig,
) -> Result<f64, ControllerError> {
    let denom = obs.k_b - cfg.alpha;
    if denom.abs() <= 1e-12 * obs.k_b.abs().max(cfg.alpha.abs()) {
        return Err(ControllerError::GainEqualsAlpha {
            k_b: obs.k_b,
            alpha: cfg.alpha,
        });
    }
    let sigma = cfg.sigma_effective(obs);
    let steady = obs.b_h / obs.k_b;
    let ea = (-cfg.alpha * t).exp();
    let ek = (-obs.k_b * t).exp();
    Ok((h_x0 + (steady - obs.e0_abs) / denom) * (ea - ek) + h_x0 * ek
        + (sigma - steady) / cfg.alpha * (1.0 - ea))
}

/// Shifted barrier of the input-to-state-safe fallback:
/// `h_bar = h - (sigma - E)/alpha` with `E = max(|e0|, b_h/k_b)`.
///
/// Its zero-superlevel set is the set trajectories stay in even when sigma is
/// too small to certify the original safe set.
pub fn issf_shifted_barrier(h: f64, cfg: &ControllerConfig, obs: &ObserverConfig) -> f64 {
    let e = obs.e0_abs.max(obs.b_h / obs.k_b);
    h - (cfg.sigma_effective(obs) - e) / cfg.alpha
}
