//! Scenario configuration: a JSON schema describing one closed-loop run, and
//! its resolution into concrete plant, controller, observer, signal, and
//! integrator objects.
//!
//! Resolution turns symbolic entries into numbers:
//!
//! * `b_h: "auto"` derives the disturbance-effect Lipschitz constant from the
//!   grade signal (closed form for sinusoids, sampled slope for timeseries),
//! * `p_bar: "auto"` derives the worst-case disturbance magnitude the same
//!   way,
//! * `h0: "c0_threshold"` starts exactly on the shrunken-initial-set
//!   threshold of the second provable-safety statement,
//! * the observer state is initialized from a signed initial estimation
//!   error `e0` (or an explicit estimate `b_hat0`),
//! * the input delay is snapped to the integration grid (with a warning when
//!   it moves).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::{
    certify, comparison_lower_bound, dob_control, issf_shifted_barrier, nominal_control,
    transient_cancel_control, worst_case_control, ControllerConfig, ControllerError,
    ControllerKind, SafetyCertificate,
};
use crate::observer::{b_hat, observer_error_bound, ObserverConfig, ObserverError};
use crate::plant::{PlantError, PlantModel, Signals, Truck, TruckParams};
use crate::signals::{
    load_timeseries_data, SignalSource, TimeseriesColumn, TimeseriesError,
};
use crate::sim::{
    integrate, IntegratorConfig, PreHistory, ResolvedInfo, Saturation, SimError, SimSetup,
    Trajectory, TrajectoryMeta,
};

/// Errors raised while loading or resolving a scenario.
#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse config {path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("invalid scenario field `{field}`: {reason}")]
    Invalid {
        field: &'static str,
        reason: String,
    },
    #[error(transparent)]
    Plant(#[from] PlantError),
    #[error(transparent)]
    Controller(#[from] ControllerError),
    #[error(transparent)]
    Observer(#[from] ObserverError),
    #[error(transparent)]
    Timeseries(#[from] TimeseriesError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

fn invalid(field: &'static str, reason: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid {
        field,
        reason: reason.into(),
    }
}

/// A number or the literal string `"auto"`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NumberOrAuto {
    Number(f64),
    Auto(AutoKeyword),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AutoKeyword {
    #[serde(rename = "auto")]
    Auto,
}

/// A number or the literal string `"c0_threshold"`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum H0Spec {
    Value(f64),
    Keyword(H0Keyword),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum H0Keyword {
    #[serde(rename = "c0_threshold")]
    C0Threshold,
}

/// Feedback-law section of a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerSpec {
    pub kind: ControllerKind,
    /// Barrier decay rate, 1/s.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Constant robustness margin (dob only), m/s.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    /// Worst-case disturbance magnitude (worst_case only), m/s^2.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_bar: Option<NumberOrAuto>,
}

fn default_alpha() -> f64 {
    0.25
}

/// Observer section. All fields have defaults; the initial estimate is set
/// either through a signed initial error `e0` (then `b_hat(0) = b(0) - e0`)
/// or directly through `b_hat0`. `e0_abs` overrides the error magnitude the
/// certificates assume (it must dominate the actual initial error).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObserverSpec {
    #[serde(default = "default_k_b")]
    pub k_b: f64,
    /// Disturbance-effect Lipschitz constant, (m/s)/s; "auto" derives it
    /// from the grade signal.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b_h: Option<NumberOrAuto>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub e0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b_hat0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub e0_abs: Option<f64>,
}

fn default_k_b() -> f64 {
    0.55
}

impl Default for ObserverSpec {
    fn default() -> Self {
        Self {
            k_b: default_k_b(),
            b_h: None,
            e0: None,
            b_hat0: None,
            e0_abs: None,
        }
    }
}

/// One scalar input signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SignalSpec {
    Constant {
        value: f64,
    },
    Sinusoid {
        /// Amplitude in the signal's native unit (rad for grade, m/s for
        /// lead speed). Grade signals may use `amplitude_deg` instead.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        amplitude: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        amplitude_deg: Option<f64>,
        /// Angular frequency, rad/s.
        omega: f64,
        /// Phase offset, rad.
        #[serde(default)]
        phase: f64,
    },
    Timeseries {
        /// CSV path, relative to the config file's directory.
        path: String,
        /// Interpret the grade column as degrees and convert to radians.
        #[serde(default)]
        grade_degrees: bool,
    },
}

/// The two exogenous inputs of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalsSpec {
    /// Road grade phi(t).
    pub grade: SignalSpec,
    /// Lead-vehicle speed v1(t).
    pub lead_speed: SignalSpec,
}

/// Input-delay section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DelaySpec {
    /// Input delay, s (snapped to a whole number of integration steps).
    pub tau: f64,
    #[serde(default)]
    pub pre_history: PreHistory,
}

/// Integrator overrides; anything omitted keeps its default.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps_int: Option<f64>,
}

/// Initial condition. Exactly one of `d0` (absolute distance) or `h0`
/// (barrier value, possibly the symbolic threshold) may be given; the
/// default starts on the safety boundary (`h0 = 0`) at the reference speed.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialStateSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h0: Option<H0Spec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v0: Option<f64>,
}

/// Output naming and thinning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trajectory: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metadata: Option<String>,
    /// Keep every k-th sample (plus the final one) when writing the
    /// trajectory CSV. Statistics always use the full resolution.
    #[serde(default = "default_decimation")]
    pub decimation: usize,
}

fn default_decimation() -> usize {
    1
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self {
            trajectory: None,
            metadata: None,
            decimation: default_decimation(),
        }
    }
}

/// Complete scenario file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plant: Option<TruckParams>,
    pub controller: ControllerSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observer: Option<ObserverSpec>,
    pub signals: SignalsSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delay: Option<DelaySpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub integrator: Option<IntegratorSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_state: Option<InitialStateSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub saturation: Option<Saturation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<OutputSpec>,
}

/// A scenario with every symbolic entry resolved to numbers, ready to run.
#[derive(Debug, Clone)]
pub struct ResolvedScenario {
    pub name: String,
    pub truck: Truck,
    pub controller: ControllerConfig,
    pub observer: ObserverConfig,
    pub grade: SignalSource,
    pub lead: SignalSource,
    pub tau: f64,
    pub pre_history: PreHistory,
    pub saturation: Option<Saturation>,
    pub integ: IntegratorConfig,
    /// Initial augmented state `[D0, v0, xi0]`.
    pub z0: [f64; 3],
    pub h0: f64,
    /// Signed actual initial estimation error.
    pub e0_actual: f64,
    pub b_hat0: f64,
    pub certificate: SafetyCertificate,
    pub config_hash: String,
    pub warnings: Vec<String>,
    pub trajectory_name: String,
    pub metadata_name: String,
    pub decimation: usize,
}

/// Reads only the plant-parameter block of a scenario file (defaults when
/// absent), for analysis commands that need no full scenario.
pub fn load_plant_params(path: impl AsRef<Path>) -> Result<TruckParams, ScenarioError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let config: ScenarioConfig =
        serde_json::from_str(&text).map_err(|source| ScenarioError::Parse {
            path: path.display().to_string(),
            source,
        })?;
    let params = config.plant.unwrap_or_default();
    params.validate()?;
    Ok(params)
}

/// Reads and resolves a scenario file. Relative timeseries paths are taken
/// relative to the config file's directory.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<ResolvedScenario, ScenarioError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let config: ScenarioConfig =
        serde_json::from_str(&text).map_err(|source| ScenarioError::Parse {
            path: path.display().to_string(),
            source,
        })?;
    let base = path.parent().map(PathBuf::from).unwrap_or_default();
    resolve_scenario(&config, &base)
}

enum SignalRole {
    Grade,
    LeadSpeed,
}

fn build_source(
    spec: &SignalSpec,
    role: SignalRole,
    base: &Path,
) -> Result<SignalSource, ScenarioError> {
    match spec {
        SignalSpec::Constant { value } => {
            if !value.is_finite() {
                return Err(invalid("signals", format!("constant value {value} is not finite")));
            }
            Ok(SignalSource::Constant(*value))
        }
        SignalSpec::Sinusoid {
            amplitude,
            amplitude_deg,
            omega,
            phase,
        } => {
            let amplitude = match (role, amplitude, amplitude_deg) {
                (SignalRole::Grade, Some(_), Some(_)) => {
                    return Err(invalid(
                        "signals.grade",
                        "give exactly one of `amplitude` (rad) or `amplitude_deg`",
                    ))
                }
                (SignalRole::Grade, Some(a), None) => *a,
                (SignalRole::Grade, None, Some(deg)) => deg.to_radians(),
                (SignalRole::Grade, None, None) => {
                    return Err(invalid(
                        "signals.grade",
                        "sinusoid needs `amplitude` (rad) or `amplitude_deg`",
                    ))
                }
                (SignalRole::LeadSpeed, Some(a), None) => *a,
                (SignalRole::LeadSpeed, _, Some(_)) => {
                    return Err(invalid(
                        "signals.lead_speed",
                        "`amplitude_deg` applies to the grade signal only",
                    ))
                }
                (SignalRole::LeadSpeed, None, None) => {
                    return Err(invalid("signals.lead_speed", "sinusoid needs `amplitude`"))
                }
            };
            if !(amplitude.is_finite() && omega.is_finite() && phase.is_finite()) {
                return Err(invalid("signals", "sinusoid parameters must be finite"));
            }
            Ok(SignalSource::Sinusoid {
                amplitude,
                omega: *omega,
                phase: *phase,
            })
        }
        SignalSpec::Timeseries {
            path,
            grade_degrees,
        } => {
            let column = match role {
                SignalRole::Grade => TimeseriesColumn::Phi,
                SignalRole::LeadSpeed => {
                    if *grade_degrees {
                        return Err(invalid(
                            "signals.lead_speed",
                            "`grade_degrees` applies to the grade signal only",
                        ));
                    }
                    TimeseriesColumn::V1
                }
            };
            let full = base.join(path);
            let mut ts = load_timeseries_data(&full, column)?;
            if *grade_degrees {
                ts.map_values(|deg| deg.to_radians());
            }
            Ok(SignalSource::Timeseries(ts))
        }
    }
}

/// Worst-case |disturbance effect| over a grade signal's range, divided by
/// the plant's disturbance gain: the bound `p_bar` on |a(phi)|.
fn auto_p_bar(params: &TruckParams, grade: &SignalSource) -> f64 {
    match grade {
        SignalSource::Constant(c) => params.grade_accel(*c).abs(),
        SignalSource::Sinusoid { amplitude, .. } => {
            let a = amplitude.abs();
            params
                .grade_accel(a)
                .abs()
                .max(params.grade_accel(-a).abs())
        }
        SignalSource::Timeseries(ts) => ts.max_mapped_abs(|phi| params.grade_accel(phi)),
    }
}

/// Lipschitz constant of `t -> T a(phi(t))` implied by a grade signal:
/// closed form `T g sqrt(1 + gamma^2) A omega` for a sinusoid, zero for a
/// constant, max sampled slope for a timeseries.
fn auto_b_h(params: &TruckParams, grade: &SignalSource) -> f64 {
    match grade {
        SignalSource::Constant(_) => 0.0,
        SignalSource::Sinusoid {
            amplitude, omega, ..
        } => {
            params.t_headway
                * params.grav
                * (1.0 + params.gamma * params.gamma).sqrt()
                * amplitude.abs()
                * omega.abs()
        }
        SignalSource::Timeseries(ts) => {
            ts.max_mapped_slope(|phi| params.t_headway * params.grade_accel(phi))
        }
    }
}

/// File-name-safe version of a scenario name.
pub fn sanitize_name(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

const FNV_OFFSET: u64 = 0xcbf29ce484222325;
const FNV_PRIME: u64 = 0x100000001b3;

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = FNV_OFFSET;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(FNV_PRIME);
    }
    hash
}

/// Fingerprint of the parsed config (stable across key order and whitespace
/// in the source file, since it hashes the canonical serialization).
pub fn config_fingerprint(config: &ScenarioConfig) -> String {
    let canonical = serde_json::to_string(config).expect("scenario configs always serialize");
    format!("{:016x}", fnv1a64(canonical.as_bytes()))
}

/// Resolves a parsed config against defaults and derived quantities.
pub fn resolve_scenario(
    config: &ScenarioConfig,
    base_dir: &Path,
) -> Result<ResolvedScenario, ScenarioError> {
    if config.name.trim().is_empty() {
        return Err(invalid("name", "must be a non-empty string"));
    }
    let mut warnings = Vec::new();
    let params = config.plant.unwrap_or_default();
    let truck = Truck::new(params)?;

    // Signals.
    let grade = build_source(&config.signals.grade, SignalRole::Grade, base_dir)?;
    let lead = build_source(&config.signals.lead_speed, SignalRole::LeadSpeed, base_dir)?;

    // Integrator and duration (bounded by sampled-data extent).
    let integ_spec = config.integrator.clone().unwrap_or_default();
    let step = integ_spec.step.unwrap_or(1e-3);
    let eps_int = integ_spec.eps_int.unwrap_or(1e-3);
    let data_end = [grade.end_time(), lead.end_time()]
        .into_iter()
        .flatten()
        .fold(f64::INFINITY, f64::min);
    let duration = match integ_spec.duration {
        Some(d) => {
            if d > data_end + 1e-9 {
                return Err(invalid(
                    "integrator.duration",
                    format!("{d} s exceeds the timeseries extent {data_end} s"),
                ));
            }
            d
        }
        None => {
            let default = 120.0f64;
            if data_end < default {
                let fitted = (data_end / step).floor() * step;
                warnings.push(format!(
                    "duration defaulted to the timeseries extent ({fitted} s)"
                ));
                fitted
            } else {
                default
            }
        }
    };
    let integ = IntegratorConfig {
        step,
        duration,
        eps_int,
    };
    integ.validate()?;

    // Controller.
    let spec = &config.controller;
    if spec.sigma.is_some() && spec.kind != ControllerKind::Dob {
        return Err(invalid(
            "controller.sigma",
            "applies to the dob controller only",
        ));
    }
    if spec.p_bar.is_some() && spec.kind != ControllerKind::WorstCase {
        return Err(invalid(
            "controller.p_bar",
            "applies to the worst_case controller only",
        ));
    }
    let p_bar = match (spec.kind, spec.p_bar) {
        (ControllerKind::WorstCase, Some(NumberOrAuto::Number(v))) => Some(v),
        (ControllerKind::WorstCase, Some(NumberOrAuto::Auto(_))) => {
            Some(auto_p_bar(&params, &grade))
        }
        (ControllerKind::WorstCase, None) => {
            return Err(invalid(
                "controller.p_bar",
                "worst_case needs `p_bar` (a number or \"auto\")",
            ))
        }
        _ => None,
    };
    let controller = ControllerConfig {
        kind: spec.kind,
        alpha: spec.alpha,
        sigma: spec.sigma,
        p_bar,
    };
    controller.validate()?;

    // Observer gains and error model.
    let obs_spec = config.observer.clone().unwrap_or_default();
    let b_h = match obs_spec.b_h {
        Some(NumberOrAuto::Number(v)) => v,
        Some(NumberOrAuto::Auto(_)) | None => auto_b_h(&params, &grade),
    };
    let v0 = config
        .initial_state
        .as_ref()
        .and_then(|s| s.v0)
        .unwrap_or(params.v_star);
    if !v0.is_finite() {
        return Err(invalid("initial_state.v0", format!("must be finite, got {v0}")));
    }
    // The truck's disturbance effect depends only on the grade, so a
    // provisional distance is safe while the initial barrier value is still
    // unresolved.
    let w0 = grade.eval(0.0);
    let b0 = truck.b(&[params.d_sf + params.t_headway * v0, v0], w0);
    let (e0_actual, b_hat0) = match (obs_spec.e0, obs_spec.b_hat0) {
        (Some(_), Some(_)) => {
            return Err(invalid(
                "observer",
                "give at most one of `e0` and `b_hat0`",
            ))
        }
        (Some(e0), None) => (e0, b0 - e0),
        (None, Some(bh0)) => (b0 - bh0, bh0),
        (None, None) => (0.0, b0),
    };
    if !e0_actual.is_finite() {
        return Err(invalid("observer.e0", "initial error must be finite"));
    }
    let e0_abs = match obs_spec.e0_abs {
        Some(bound) => {
            if bound + 1e-12 < e0_actual.abs() {
                return Err(invalid(
                    "observer.e0_abs",
                    format!(
                        "assumed bound {bound} is below the actual initial error magnitude {}",
                        e0_actual.abs()
                    ),
                ));
            }
            bound
        }
        None => e0_actual.abs(),
    };
    let observer = ObserverConfig::new(obs_spec.k_b, b_h, e0_abs)?;

    // Initial state.
    let init = config.initial_state.clone().unwrap_or_default();
    let h0 = match (init.d0, init.h0) {
        (Some(_), Some(_)) => {
            return Err(invalid(
                "initial_state",
                "give at most one of `d0` and `h0`",
            ))
        }
        (Some(d0), None) => {
            if !d0.is_finite() {
                return Err(invalid("initial_state.d0", format!("must be finite, got {d0}")));
            }
            d0 - params.d_sf - params.t_headway * v0
        }
        (None, Some(H0Spec::Value(h0))) => {
            if !h0.is_finite() {
                return Err(invalid("initial_state.h0", format!("must be finite, got {h0}")));
            }
            h0
        }
        (None, Some(H0Spec::Keyword(H0Keyword::C0Threshold))) => {
            if observer.k_b <= controller.alpha {
                return Err(invalid(
                    "initial_state.h0",
                    format!(
                        "the c0_threshold start needs k_b > alpha, got k_b = {} <= alpha = {}",
                        observer.k_b, controller.alpha
                    ),
                ));
            }
            (observer.e0_abs - observer.b_h / observer.k_b) / (observer.k_b - controller.alpha)
        }
        (None, None) => 0.0,
    };
    let d0 = params.d_sf + params.t_headway * v0 + h0;
    let xi0 = observer.k_b * h0 - b_hat0;

    // Delay (snapped to the grid).
    let (tau, pre_history) = match &config.delay {
        Some(d) => {
            if !(d.tau.is_finite() && d.tau >= 0.0) {
                return Err(invalid("delay.tau", format!("must be finite and >= 0, got {}", d.tau)));
            }
            (d.tau, d.pre_history)
        }
        None => (0.0, PreHistory::default()),
    };
    let m = (tau / step).round();
    let snapped = m * step;
    if (snapped - tau).abs() > 1e-9 {
        warnings.push(format!(
            "input delay {tau} s is not a whole number of steps; snapped to {snapped} s ({m} steps of {step} s)"
        ));
    }

    if let Some(sat) = &config.saturation {
        sat.validate()?;
    }

    let output = config.output.clone().unwrap_or_default();
    if output.decimation == 0 {
        return Err(invalid("output.decimation", "must be >= 1"));
    }
    let stem = sanitize_name(&config.name);
    let trajectory_name = output
        .trajectory
        .clone()
        .unwrap_or_else(|| format!("{stem}_trajectory.csv"));
    let metadata_name = output
        .metadata
        .clone()
        .unwrap_or_else(|| format!("{stem}_metadata.json"));

    let certificate = certify(&controller, &observer, h0);

    Ok(ResolvedScenario {
        name: config.name.clone(),
        truck,
        controller,
        observer,
        grade,
        lead,
        tau,
        pre_history,
        saturation: config.saturation,
        integ,
        z0: [d0, v0, xi0],
        h0,
        e0_actual,
        b_hat0,
        certificate,
        config_hash: config_fingerprint(config),
        warnings,
        trajectory_name,
        metadata_name,
        decimation: output.decimation,
    })
}

/// Runs a resolved scenario and assembles the full trajectory record.
pub fn run_scenario(rs: &ResolvedScenario) -> Result<Trajectory, SimError> {
    let setup = SimSetup {
        plant: &rs.truck,
        grade: &rs.grade,
        lead: &rs.lead,
        k_b: rs.observer.k_b,
        tau: rs.tau,
        pre_history: rs.pre_history,
        saturation: rs.saturation,
        integ: rs.integ,
    };
    let cmd = |z: &[f64], t: f64| -> Result<f64, ControllerError> {
        let x = &z[..2];
        let sig = Signals {
            r: rs.lead.eval(t),
            w: 0.0,
        };
        match rs.controller.kind {
            ControllerKind::Nominal => nominal_control(&rs.truck, x, sig, &rs.controller),
            ControllerKind::Dob => {
                dob_control(&rs.truck, x, sig, z[2], &rs.controller, rs.observer.k_b)
            }
            ControllerKind::WorstCase => worst_case_control(&rs.truck, x, sig, &rs.controller),
            ControllerKind::TransientCancel => {
                transient_cancel_control(&rs.truck, x, sig, z[2], &rs.controller, &rs.observer, t)
            }
        }
    };
    let run = integrate(&setup, cmd, &rs.z0)?;

    let n = run.len();
    let mut traj = Trajectory {
        t: Vec::with_capacity(n),
        d: Vec::with_capacity(n),
        v: Vec::with_capacity(n),
        v1: Vec::with_capacity(n),
        phi: Vec::with_capacity(n),
        u_cmd: run.u_cmd.clone(),
        u_applied: run.u_applied.clone(),
        h: Vec::with_capacity(n),
        b: Vec::with_capacity(n),
        b_hat: Vec::with_capacity(n),
        e: Vec::with_capacity(n),
        e_bound: Vec::with_capacity(n),
        y_bound: Vec::with_capacity(n),
        h_bar: Vec::with_capacity(n),
        meta: TrajectoryMeta {
            scenario: rs.name.clone(),
            config_hash: rs.config_hash.clone(),
            controller: rs.controller.kind.as_str().to_string(),
            step: rs.integ.step,
            duration: rs.integ.duration,
            tau: run.tau,
            tau_adjustment: run.tau_adjustment,
            samples: n,
            certificate: rs.certificate,
            certificate_voided_by_saturation: rs.saturation.is_some() && run.saturated_steps > 0,
            saturated_steps: run.saturated_steps,
            min_h: f64::INFINITY,
            t_min_h: 0.0,
            first_unsafe_t: None,
            min_bound_margin: f64::INFINITY,
            resolved: ResolvedInfo {
                alpha: rs.controller.alpha,
                k_b: rs.observer.k_b,
                sigma: rs.controller.sigma,
                p_bar: rs.controller.p_bar,
                b_h: rs.observer.b_h,
                e0_abs: rs.observer.e0_abs,
                e0_actual: rs.e0_actual,
                b_hat0: rs.b_hat0,
                h0: rs.h0,
                d0: rs.z0[0],
                v0: rs.z0[1],
                xi0: rs.z0[2],
            },
            warnings: rs.warnings.clone(),
        },
    };

    // The comparison lower bound applies under the certificate's second
    // statement (and is undefined at k_b = alpha).
    let y_valid = rs.certificate.statement == Some(2)
        && comparison_lower_bound(0.0, rs.h0, &rs.controller, &rs.observer).is_ok();
    let dob_kind = rs.controller.kind == ControllerKind::Dob;

    for i in 0..n {
        let t = run.t[i];
        let state = run.state(i);
        let (dist, speed, xi) = (state[0], state[1], state[2]);
        let x = [dist, speed];
        let phi = rs.grade.eval(t);
        let h = rs.truck.h(&x);
        let b = rs.truck.b(&x, phi);
        let bh = b_hat(&rs.truck, &x, xi, rs.observer.k_b);
        let e = b - bh;
        let e_bound = observer_error_bound(t, &rs.observer);
        traj.t.push(t);
        traj.d.push(dist);
        traj.v.push(speed);
        traj.v1.push(rs.lead.eval(t));
        traj.phi.push(phi);
        traj.h.push(h);
        traj.b.push(b);
        traj.b_hat.push(bh);
        traj.e.push(e);
        traj.e_bound.push(e_bound);
        traj.y_bound.push(if y_valid {
            comparison_lower_bound(t, rs.h0, &rs.controller, &rs.observer).unwrap_or(f64::NAN)
        } else {
            f64::NAN
        });
        traj.h_bar.push(if dob_kind {
            issf_shifted_barrier(h, &rs.controller, &rs.observer)
        } else {
            f64::NAN
        });

        if h < traj.meta.min_h {
            traj.meta.min_h = h;
            traj.meta.t_min_h = t;
        }
        if h < 0.0 && traj.meta.first_unsafe_t.is_none() {
            traj.meta.first_unsafe_t = Some(t);
        }
        let margin = e_bound - e.abs();
        if margin < traj.meta.min_bound_margin {
            traj.meta.min_bound_margin = margin;
        }
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::io::Write;

    fn parse(json: &str) -> ScenarioConfig {
        serde_json::from_str(json).expect("test config parses")
    }

    fn minimal_dob() -> String {
        r#"{
            "name": "unit",
            "controller": { "kind": "dob", "sigma": 1.96 },
            "observer": { "e0": -5.0 },
            "signals": {
                "grade": { "kind": "sinusoid", "amplitude_deg": 10.0, "omega": 0.3141592653589793 },
                "lead_speed": { "kind": "constant", "value": 20.0 }
            }
        }"#
        .to_string()
    }

    #[test]
    fn defaults_fill_in_and_b_h_derives_from_the_grade() {
        let cfg = parse(&minimal_dob());
        let rs = resolve_scenario(&cfg, Path::new(".")).unwrap();
        assert_eq!(rs.controller.alpha, 0.25);
        assert_eq!(rs.observer.k_b, 0.55);
        assert_relative_eq!(rs.observer.b_h, 1.0758062437083007, max_relative = 1e-12);
        assert_eq!(rs.observer.e0_abs, 5.0);
        assert_eq!(rs.h0, 0.0);
        assert_eq!(rs.z0[1], 20.0);
        assert_eq!(rs.z0[0], 45.0);
        assert_eq!(rs.integ.duration, 120.0);
        assert_eq!(rs.decimation, 1);
        assert_eq!(rs.trajectory_name, "unit_trajectory.csv");
        // The grade starts at 0 but rolling resistance keeps b(0) nonzero:
        // b(0) = T g gamma = 0.11772, so b_hat0 = b(0) - e0 = 5.11772.
        assert_relative_eq!(rs.b_hat0, 5.11772, max_relative = 1e-12);
        // xi0 = k_b h0 - b_hat0 with h0 = 0.
        assert_relative_eq!(rs.z0[2], -5.11772, max_relative = 1e-12);
        assert_relative_eq!(rs.e0_actual, -5.0, max_relative = 1e-12);
    }

    #[test]
    fn c0_threshold_start_matches_the_certificate_threshold() {
        let json = r#"{
            "name": "tight start",
            "controller": { "kind": "dob", "sigma": 1.0 },
            "observer": { "k_b": 1.0758062437083007, "e0": -10.0 },
            "signals": {
                "grade": { "kind": "sinusoid", "amplitude_deg": 10.0, "omega": 0.3141592653589793 },
                "lead_speed": { "kind": "constant", "value": 20.0 }
            },
            "initial_state": { "h0": "c0_threshold" }
        }"#;
        let rs = resolve_scenario(&parse(json), Path::new(".")).unwrap();
        assert_relative_eq!(rs.h0, 10.898440243785645, max_relative = 1e-12);
        assert_eq!(rs.certificate.c0_threshold, Some(rs.h0));
        assert_eq!(rs.trajectory_name, "tight_start_trajectory.csv");
    }

    #[test]
    fn c0_threshold_needs_a_fast_observer() {
        let json = r#"{
            "name": "slow observer",
            "controller": { "kind": "dob", "alpha": 0.6, "sigma": 1.0 },
            "observer": { "k_b": 0.55, "e0": -10.0 },
            "signals": {
                "grade": { "kind": "constant", "value": 0.0 },
                "lead_speed": { "kind": "constant", "value": 20.0 }
            },
            "initial_state": { "h0": "c0_threshold" }
        }"#;
        assert!(matches!(
            resolve_scenario(&parse(json), Path::new(".")),
            Err(ScenarioError::Invalid { field: "initial_state.h0", .. })
        ));
    }

    #[test]
    fn stray_controller_fields_are_rejected() {
        let sigma_on_nominal = r#"{
            "name": "x",
            "controller": { "kind": "nominal", "sigma": 1.0 },
            "signals": {
                "grade": { "kind": "constant", "value": 0.0 },
                "lead_speed": { "kind": "constant", "value": 20.0 }
            }
        }"#;
        assert!(matches!(
            resolve_scenario(&parse(sigma_on_nominal), Path::new(".")),
            Err(ScenarioError::Invalid { field: "controller.sigma", .. })
        ));

        let pbar_on_dob = r#"{
            "name": "x",
            "controller": { "kind": "dob", "sigma": 1.0, "p_bar": 2.0 },
            "signals": {
                "grade": { "kind": "constant", "value": 0.0 },
                "lead_speed": { "kind": "constant", "value": 20.0 }
            }
        }"#;
        assert!(matches!(
            resolve_scenario(&parse(pbar_on_dob), Path::new(".")),
            Err(ScenarioError::Invalid { field: "controller.p_bar", .. })
        ));
    }

    #[test]
    fn worst_case_p_bar_auto_takes_the_sinusoid_extreme() {
        let json = r#"{
            "name": "wc",
            "controller": { "kind": "worst_case", "p_bar": "auto" },
            "signals": {
                "grade": { "kind": "sinusoid", "amplitude_deg": 10.0, "omega": 0.3141592653589793 },
                "lead_speed": { "kind": "constant", "value": 20.0 }
            }
        }"#;
        let rs = resolve_scenario(&parse(json), Path::new(".")).unwrap();
        // Uphill dominates: a(10 deg) > |a(-10 deg)|.
        assert_relative_eq!(
            rs.controller.p_bar.unwrap(),
            1.7614544072548852,
            max_relative = 1e-12
        );
    }

    #[test]
    fn observer_error_fields_are_mutually_exclusive_and_bounded() {
        let both = r#"{
            "name": "x",
            "controller": { "kind": "dob", "sigma": 1.0 },
            "observer": { "e0": -5.0, "b_hat0": 3.0 },
            "signals": {
                "grade": { "kind": "constant", "value": 0.0 },
                "lead_speed": { "kind": "constant", "value": 20.0 }
            }
        }"#;
        assert!(matches!(
            resolve_scenario(&parse(both), Path::new(".")),
            Err(ScenarioError::Invalid { field: "observer", .. })
        ));

        let understated = r#"{
            "name": "x",
            "controller": { "kind": "dob", "sigma": 1.0 },
            "observer": { "e0": -5.0, "e0_abs": 2.0 },
            "signals": {
                "grade": { "kind": "constant", "value": 0.0 },
                "lead_speed": { "kind": "constant", "value": 20.0 }
            }
        }"#;
        assert!(matches!(
            resolve_scenario(&parse(understated), Path::new(".")),
            Err(ScenarioError::Invalid { field: "observer.e0_abs", .. })
        ));
    }

    #[test]
    fn initial_state_rejects_conflicting_anchors() {
        let json = r#"{
            "name": "x",
            "controller": { "kind": "dob", "sigma": 1.0 },
            "signals": {
                "grade": { "kind": "constant", "value": 0.0 },
                "lead_speed": { "kind": "constant", "value": 20.0 }
            },
            "initial_state": { "d0": 50.0, "h0": 3.0 }
        }"#;
        assert!(matches!(
            resolve_scenario(&parse(json), Path::new(".")),
            Err(ScenarioError::Invalid { field: "initial_state", .. })
        ));
    }

    #[test]
    fn explicit_d0_defines_the_barrier_start() {
        let json = r#"{
            "name": "x",
            "controller": { "kind": "dob", "sigma": 1.0 },
            "signals": {
                "grade": { "kind": "constant", "value": 0.0 },
                "lead_speed": { "kind": "constant", "value": 20.0 }
            },
            "initial_state": { "d0": 55.1, "v0": 20.0 }
        }"#;
        let rs = resolve_scenario(&parse(json), Path::new(".")).unwrap();
        assert_relative_eq!(rs.h0, 10.1, max_relative = 1e-12);
    }

    #[test]
    fn duration_may_not_outrun_sampled_data() {
        let dir = tempfile::tempdir().unwrap();
        let csv_path = dir.path().join("short.csv");
        let mut f = fs::File::create(&csv_path).unwrap();
        writeln!(f, "t,v1,phi").unwrap();
        for i in 0..=20 {
            writeln!(f, "{},20.0,0.0", i as f64 * 0.1).unwrap();
        }
        drop(f);

        let json = r#"{
            "name": "x",
            "controller": { "kind": "dob", "sigma": 1.0 },
            "signals": {
                "grade": { "kind": "constant", "value": 0.0 },
                "lead_speed": { "kind": "timeseries", "path": "short.csv" }
            },
            "integrator": { "duration": 10.0 }
        }"#;
        assert!(matches!(
            resolve_scenario(&parse(json), dir.path()),
            Err(ScenarioError::Invalid { field: "integrator.duration", .. })
        ));

        // Without an explicit duration the run fits itself to the data.
        let mut cfg = parse(json);
        cfg.integrator = None;
        let rs = resolve_scenario(&cfg, dir.path()).unwrap();
        assert_relative_eq!(rs.integ.duration, 2.0, max_relative = 1e-9);
        assert!(rs.warnings.iter().any(|w| w.contains("timeseries extent")));
    }

    #[test]
    fn grade_degrees_is_for_the_grade_only() {
        let dir = tempfile::tempdir().unwrap();
        let csv_path = dir.path().join("s.csv");
        let mut f = fs::File::create(&csv_path).unwrap();
        writeln!(f, "t,v1,phi\n0.0,20.0,0.0\n1.0,20.0,0.0").unwrap();
        drop(f);
        let json = r#"{
            "name": "x",
            "controller": { "kind": "dob", "sigma": 1.0 },
            "signals": {
                "grade": { "kind": "constant", "value": 0.0 },
                "lead_speed": { "kind": "timeseries", "path": "s.csv", "grade_degrees": true }
            }
        }"#;
        assert!(matches!(
            resolve_scenario(&parse(json), dir.path()),
            Err(ScenarioError::Invalid { field: "signals.lead_speed", .. })
        ));
    }

    #[test]
    fn fingerprint_is_stable_and_value_sensitive() {
        let a = parse(&minimal_dob());
        let b = parse(&minimal_dob());
        assert_eq!(config_fingerprint(&a), config_fingerprint(&b));
        let mut c = parse(&minimal_dob());
        c.controller.sigma = Some(2.0);
        assert_ne!(config_fingerprint(&a), config_fingerprint(&c));
    }

    #[test]
    fn short_run_produces_consistent_columns() {
        let json = r#"{
            "name": "smoke",
            "controller": { "kind": "dob", "sigma": 1.96 },
            "observer": { "e0": -5.0 },
            "signals": {
                "grade": { "kind": "sinusoid", "amplitude_deg": 10.0, "omega": 0.3141592653589793 },
                "lead_speed": { "kind": "constant", "value": 20.0 }
            },
            "integrator": { "duration": 0.5 }
        }"#;
        let rs = resolve_scenario(&parse(json), Path::new(".")).unwrap();
        let traj = run_scenario(&rs).unwrap();
        assert_eq!(traj.t.len(), 501);
        assert_eq!(traj.meta.samples, 501);
        for i in 0..traj.t.len() {
            assert_relative_eq!(
                traj.e[i],
                traj.b[i] - traj.b_hat[i],
                epsilon = 1e-12
            );
            assert!(traj.e_bound[i] >= 0.0);
            // dob scenario: the shifted barrier column is populated.
            assert!(traj.h_bar[i].is_finite());
        }
        assert!(traj.meta.min_h <= traj.h[0]);
        assert!(traj.meta.min_bound_margin <= 5.0);
        // No delay configured: the plant receives the command immediately.
        assert_eq!(traj.meta.tau, 0.0);
        assert_eq!(traj.u_cmd, traj.u_applied);
    }

    #[test]
    fn round_trip_preserves_the_config() {
        let json = r#"{
            "name": "full",
            "plant": { "v_star": 22.0 },
            "controller": { "kind": "worst_case", "alpha": 0.3, "p_bar": "auto" },
            "observer": { "k_b": 0.6, "b_h": 1.1, "e0": -2.0, "e0_abs": 3.0 },
            "signals": {
                "grade": { "kind": "sinusoid", "amplitude": 0.17, "omega": 0.31, "phase": 0.5 },
                "lead_speed": { "kind": "constant", "value": 21.0 }
            },
            "delay": { "tau": 0.4, "pre_history": "zero" },
            "integrator": { "step": 0.002, "duration": 30.0, "eps_int": 0.001 },
            "initial_state": { "h0": 2.5, "v0": 21.0 },
            "saturation": { "u_min": -6.0, "u_max": 3.0 },
            "output": { "trajectory": "wc.csv", "decimation": 5 }
        }"#;
        let cfg = parse(json);
        let text = serde_json::to_string(&cfg).unwrap();
        let again: ScenarioConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let json = r#"{
            "name": "x",
            "controller": { "kind": "dob", "sigma": 1.0, "extra": true },
            "signals": {
                "grade": { "kind": "constant", "value": 0.0 },
                "lead_speed": { "kind": "constant", "value": 20.0 }
            }
        }"#;
        assert!(serde_json::from_str::<ScenarioConfig>(json).is_err());
    }
}
