//! Fixed-step integration of the augmented closed loop (plant + observer)
//! with an optional constant input delay.
//!
//! The augmented state is `z = [x, xi]`. Commands are produced by a feedback
//! law evaluated on the current state; with a delay `tau` the plant receives
//! the command issued `tau` seconds ago, read from a grid-aligned buffer,
//! while the observer keeps integrating with the current command (the
//! command is what the observer's model of hdot sees as the input).
//!
//! The delay is snapped to an integer number of integration steps and the
//! delayed input is held constant across the four stages of one RK4 step.
//! Without delay the command is re-evaluated at every stage, preserving the
//! classical fourth order.

use thiserror::Error;

use crate::controller::{ControllerError, SafetyCertificate};
use crate::observer::xi_rate;
use crate::plant::PlantModel;
use crate::signals::SignalSource;
use serde::{Deserialize, Serialize};

/// Errors raised while integrating.
#[derive(Debug, Error)]
pub enum SimError {
    #[error("state became non-finite at t = {t} s ({what}); run aborted")]
    NonFinite { t: f64, what: String },
    #[error(transparent)]
    Controller(#[from] ControllerError),
    #[error("invalid integrator setting `{field}`: {reason}")]
    InvalidIntegrator {
        field: &'static str,
        reason: String,
    },
}

/// Fixed-step integrator settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IntegratorConfig {
    /// Step size, s.
    pub step: f64,
    /// Total simulated time, s. Zero yields a single-record trajectory.
    pub duration: f64,
    /// Accepted integration slack for safety margins, in h-units (m).
    pub eps_int: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            step: 1e-3,
            duration: 120.0,
            eps_int: 1e-3,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.step.is_finite() && self.step > 0.0) {
            return Err(SimError::InvalidIntegrator {
                field: "step",
                reason: format!("must be finite and > 0, got {}", self.step),
            });
        }
        if !(self.duration.is_finite() && self.duration >= 0.0) {
            return Err(SimError::InvalidIntegrator {
                field: "duration",
                reason: format!("must be finite and >= 0, got {}", self.duration),
            });
        }
        if self.duration > 0.0 && self.duration < self.step {
            return Err(SimError::InvalidIntegrator {
                field: "duration",
                reason: format!(
                    "must be 0 (single record) or >= step ({}), got {}",
                    self.step, self.duration
                ),
            });
        }
        if !(self.eps_int.is_finite() && self.eps_int > 0.0) {
            return Err(SimError::InvalidIntegrator {
                field: "eps_int",
                reason: format!("must be finite and > 0, got {}", self.eps_int),
            });
        }
        Ok(())
    }

    /// Number of integration steps for the configured duration.
    pub fn n_steps(&self) -> usize {
        if self.duration == 0.0 {
            0
        } else {
            (self.duration / self.step).round().max(1.0) as usize
        }
    }
}

/// What the plant receives before the first delayed command becomes available.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PreHistory {
    /// The feedback law evaluated at the initial state (constant).
    #[default]
    InitialControl,
    /// Zero input.
    Zero,
}

/// Optional actuator clamp. Engaging it voids any safety certificate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Saturation {
    pub u_min: f64,
    pub u_max: f64,
}

impl Saturation {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.u_min.is_finite() && self.u_max.is_finite() && self.u_min < self.u_max) {
            return Err(SimError::InvalidIntegrator {
                field: "saturation",
                reason: format!(
                    "requires finite u_min < u_max, got [{}, {}]",
                    self.u_min, self.u_max
                ),
            });
        }
        Ok(())
    }

    fn apply(&self, u: f64) -> f64 {
        u.clamp(self.u_min, self.u_max)
    }
}

/// Grid-aligned buffer of issued commands realizing the input delay.
///
/// The delay is snapped to `m = round(tau / step)` integration steps; queries
/// reaching before t = 0 return the pre-history value.
#[derive(Debug, Clone)]
pub struct DelayBuffer {
    m: usize,
    tau: f64,
    adjustment: f64,
    pre: f64,
    hist: Vec<f64>,
}

impl DelayBuffer {
    pub fn new(tau: f64, step: f64, pre: f64) -> Self {
        let m = (tau / step).round() as usize;
        let snapped = m as f64 * step;
        Self {
            m,
            tau: snapped,
            adjustment: (snapped - tau).abs(),
            pre,
            hist: Vec::new(),
        }
    }

    /// Snapped delay, s.
    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// Delay in integration steps.
    pub fn steps(&self) -> usize {
        self.m
    }

    /// How far the requested delay was moved to land on the grid, s.
    pub fn adjustment(&self) -> f64 {
        self.adjustment
    }

    /// Records the command issued at the current grid point.
    pub fn push(&mut self, u: f64) {
        self.hist.push(u);
    }

    /// The input the plant receives at grid point `i` (commands up to `i`
    /// must have been pushed).
    pub fn applied(&self, i: usize) -> f64 {
        if i >= self.m {
            self.hist[i - self.m]
        } else {
            self.pre
        }
    }
}

/// Raw integration output: the augmented state and inputs on the time grid.
#[derive(Debug, Clone)]
pub struct RawRun {
    dim: usize,
    pub t: Vec<f64>,
    states: Vec<f64>,
    pub u_cmd: Vec<f64>,
    pub u_applied: Vec<f64>,
    /// Grid points at which the actuator clamp was active.
    pub saturated_steps: usize,
    /// Snapped delay, s.
    pub tau: f64,
    /// Distance the delay was moved to land on the grid, s.
    pub tau_adjustment: f64,
}

impl RawRun {
    /// Augmented state `[x, xi]` at sample `i`.
    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i * self.dim..(i + 1) * self.dim]
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }
}

/// Everything [`integrate`] needs besides the feedback law.
pub struct SimSetup<'a, P: PlantModel> {
    pub plant: &'a P,
    /// Road grade signal w(t), rad.
    pub grade: &'a SignalSource,
    /// Lead-vehicle speed signal r(t), m/s.
    pub lead: &'a SignalSource,
    /// Observer gain used to integrate xi alongside the plant.
    pub k_b: f64,
    /// Input delay before snapping, s.
    pub tau: f64,
    pub pre_history: PreHistory,
    pub saturation: Option<Saturation>,
    pub integ: IntegratorConfig,
}

struct Workspace {
    f: Vec<f64>,
    g: Vec<f64>,
    p: Vec<f64>,
}

impl Workspace {
    fn new(n: usize) -> Self {
        Self {
            f: vec![0.0; n],
            g: vec![0.0; n],
            p: vec![0.0; n],
        }
    }
}

/// Closed-loop rate of `z = [x, xi]`.
///
/// `applied` is the frozen delayed input for this step; `None` means no delay,
/// in which case the plant receives the command re-evaluated at the stage
/// state. The observer row always uses the current command.
#[allow(clippy::too_many_arguments)]
fn closed_loop_rate<P, C>(
    plant: &P,
    cmd: &C,
    grade: &SignalSource,
    lead: &SignalSource,
    saturation: Option<Saturation>,
    k_b: f64,
    z: &[f64],
    t: f64,
    applied: Option<f64>,
    ws: &mut Workspace,
    out: &mut [f64],
) -> Result<(), SimError>
where
    P: PlantModel,
    C: Fn(&[f64], f64) -> Result<f64, ControllerError>,
{
    let n = plant.dim();
    let x = &z[..n];
    let xi = z[n];
    let r = lead.eval(t);
    let w = grade.eval(t);
    let mut u_cmd = cmd(z, t)?;
    if let Some(sat) = saturation {
        u_cmd = sat.apply(u_cmd);
    }
    let u_plant = applied.unwrap_or(u_cmd);
    plant.drift(x, r, &mut ws.f);
    plant.input_field(x, &mut ws.g);
    plant.disturbance_field(x, w, &mut ws.p);
    for (i, slot) in out.iter_mut().enumerate().take(n) {
        *slot = ws.f[i] + ws.g[i] * u_plant + ws.p[i];
    }
    out[n] = xi_rate(plant, x, u_cmd, r, xi, k_b);
    Ok(())
}

/// Advances the augmented state one RK4 step of size `step` from time `t`.
///
/// `applied` carries the delayed input in effect during this step (`None`
/// without delay). Exposed for single-step verification; full runs use
/// [`integrate`].
#[allow(clippy::too_many_arguments)]
pub fn step_closed_loop<P, C>(
    plant: &P,
    cmd: &C,
    grade: &SignalSource,
    lead: &SignalSource,
    saturation: Option<Saturation>,
    k_b: f64,
    z: &[f64],
    t: f64,
    applied: Option<f64>,
    step: f64,
) -> Result<Vec<f64>, SimError>
where
    P: PlantModel,
    C: Fn(&[f64], f64) -> Result<f64, ControllerError>,
{
    let dim = plant.dim() + 1;
    let mut ws = Workspace::new(plant.dim());
    let mut k = vec![vec![0.0; dim]; 4];
    let mut zs = vec![0.0; dim];
    let mut out = z.to_vec();
    rk4_step(
        plant, cmd, grade, lead, saturation, k_b, t, applied, step, &mut ws, &mut k, &mut zs,
        &mut out,
    )?;
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn rk4_step<P, C>(
    plant: &P,
    cmd: &C,
    grade: &SignalSource,
    lead: &SignalSource,
    saturation: Option<Saturation>,
    k_b: f64,
    t: f64,
    applied: Option<f64>,
    step: f64,
    ws: &mut Workspace,
    k: &mut [Vec<f64>],
    zs: &mut [f64],
    z: &mut [f64],
) -> Result<(), SimError>
where
    P: PlantModel,
    C: Fn(&[f64], f64) -> Result<f64, ControllerError>,
{
    let dim = z.len();
    let half = 0.5 * step;
    let rate = |zq: &[f64], tq: f64, ws: &mut Workspace, out: &mut [f64]| {
        closed_loop_rate(
            plant, cmd, grade, lead, saturation, k_b, zq, tq, applied, ws, out,
        )
    };
    let (k1, rest) = k.split_at_mut(1);
    let (k2, rest) = rest.split_at_mut(1);
    let (k3, k4) = rest.split_at_mut(1);
    rate(z, t, ws, &mut k1[0])?;
    for i in 0..dim {
        zs[i] = z[i] + half * k1[0][i];
    }
    rate(zs, t + half, ws, &mut k2[0])?;
    for i in 0..dim {
        zs[i] = z[i] + half * k2[0][i];
    }
    rate(zs, t + half, ws, &mut k3[0])?;
    for i in 0..dim {
        zs[i] = z[i] + step * k3[0][i];
    }
    rate(zs, t + step, ws, &mut k4[0])?;
    let sixth = step / 6.0;
    for i in 0..dim {
        z[i] += sixth * (k1[0][i] + 2.0 * k2[0][i] + 2.0 * k3[0][i] + k4[0][i]);
    }
    Ok(())
}

/// Integrates the closed loop over the configured duration and returns the
/// grid-sampled augmented state and inputs.
///
/// The feedback law `cmd(z, t)` sees the full augmented state. Grid times are
/// computed as `i * step` (never accumulated), so identical setups produce
/// bit-identical runs.
pub fn integrate<P, C>(setup: &SimSetup<'_, P>, cmd: C, z0: &[f64]) -> Result<RawRun, SimError>
where
    P: PlantModel,
    C: Fn(&[f64], f64) -> Result<f64, ControllerError>,
{
    setup.integ.validate()?;
    if let Some(sat) = setup.saturation {
        sat.validate()?;
    }
    let n = setup.plant.dim();
    let dim = n + 1;
    assert_eq!(z0.len(), dim, "initial state must have length n + 1");
    let step = setup.integ.step;
    let n_steps = setup.integ.n_steps();

    let pre = match setup.pre_history {
        PreHistory::Zero => 0.0,
        PreHistory::InitialControl => {
            let mut u = cmd(z0, 0.0)?;
            if let Some(sat) = setup.saturation {
                u = sat.apply(u);
            }
            u
        }
    };
    let mut buffer = DelayBuffer::new(setup.tau, step, pre);
    let delayed = buffer.steps() > 0;

    let mut ws = Workspace::new(n);
    let mut k = vec![vec![0.0; dim]; 4];
    let mut zs = vec![0.0; dim];
    let mut z = z0.to_vec();

    let mut run = RawRun {
        dim,
        t: Vec::with_capacity(n_steps + 1),
        states: Vec::with_capacity((n_steps + 1) * dim),
        u_cmd: Vec::with_capacity(n_steps + 1),
        u_applied: Vec::with_capacity(n_steps + 1),
        saturated_steps: 0,
        tau: buffer.tau(),
        tau_adjustment: buffer.adjustment(),
    };

    for i in 0..=n_steps {
        let t = i as f64 * step;
        for (c, value) in z.iter().enumerate() {
            if !value.is_finite() {
                return Err(SimError::NonFinite {
                    t,
                    what: format!("state component {c} = {value}"),
                });
            }
        }
        let raw_cmd = cmd(&z, t)?;
        let u_cmd = match setup.saturation {
            Some(sat) => sat.apply(raw_cmd),
            None => raw_cmd,
        };
        if !u_cmd.is_finite() {
            return Err(SimError::NonFinite {
                t,
                what: format!("commanded input = {u_cmd}"),
            });
        }
        if setup.saturation.is_some() && u_cmd != raw_cmd {
            run.saturated_steps += 1;
        }
        buffer.push(u_cmd);
        let u_applied = if delayed { buffer.applied(i) } else { u_cmd };

        run.t.push(t);
        run.states.extend_from_slice(&z);
        run.u_cmd.push(u_cmd);
        run.u_applied.push(u_applied);

        if i < n_steps {
            let applied = if delayed { Some(u_applied) } else { None };
            rk4_step(
                setup.plant,
                &cmd,
                setup.grade,
                setup.lead,
                setup.saturation,
                setup.k_b,
                t,
                applied,
                step,
                &mut ws,
                &mut k,
                &mut zs,
                &mut z,
            )?;
        }
    }
    Ok(run)
}

/// Time-indexed record of one simulated scenario, including all observables
/// needed to check the error bound and the safety guarantees.
///
/// Columns `y_bound` (comparison lower bound on h) and `h_bar` (shifted
/// barrier) are NaN where they do not apply: `y_bound` requires a statement-2
/// certificate, `h_bar` the dob controller.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub t: Vec<f64>,
    pub d: Vec<f64>,
    pub v: Vec<f64>,
    pub v1: Vec<f64>,
    pub phi: Vec<f64>,
    pub u_cmd: Vec<f64>,
    pub u_applied: Vec<f64>,
    pub h: Vec<f64>,
    pub b: Vec<f64>,
    pub b_hat: Vec<f64>,
    pub e: Vec<f64>,
    pub e_bound: Vec<f64>,
    pub y_bound: Vec<f64>,
    pub h_bar: Vec<f64>,
    pub meta: TrajectoryMeta,
}

/// Metadata accompanying a trajectory: certification, safety statistics, and
/// the resolved numeric configuration.
#[derive(Debug, Clone, Serialize)]
pub struct TrajectoryMeta {
    pub scenario: String,
    pub config_hash: String,
    pub controller: String,
    pub step: f64,
    pub duration: f64,
    /// Snapped delay, s.
    pub tau: f64,
    pub tau_adjustment: f64,
    pub samples: usize,
    pub certificate: SafetyCertificate,
    /// True when the actuator clamp engaged at least once, which invalidates
    /// the certificate for this run.
    pub certificate_voided_by_saturation: bool,
    pub saturated_steps: usize,
    pub min_h: f64,
    pub t_min_h: f64,
    /// First sample time with h < 0, if any.
    pub first_unsafe_t: Option<f64>,
    /// Minimum over samples of `bound(t) - |e(t)|` (negative means the
    /// observer error escaped its envelope).
    pub min_bound_margin: f64,
    pub resolved: ResolvedInfo,
    pub warnings: Vec<String>,
}

/// Scenario quantities after symbolic resolution, echoed as plain numbers.
#[derive(Debug, Clone, Serialize)]
pub struct ResolvedInfo {
    pub alpha: f64,
    pub k_b: f64,
    pub sigma: Option<f64>,
    pub p_bar: Option<f64>,
    pub b_h: f64,
    pub e0_abs: f64,
    /// Signed actual initial estimation error b(0) - b_hat(0), m/s.
    pub e0_actual: f64,
    pub b_hat0: f64,
    pub h0: f64,
    pub d0: f64,
    pub v0: f64,
    pub xi0: f64,
}
