//! Disturbed control-affine plant interface and the concrete connected-cruise-control truck.
//!
//! The plant family has dynamics
//!
//! ```text
//! xdot = f(x, r) + g(x) u + p(x, w)
//! ```
//!
//! with a scalar control input u, a scalar reference r (lead-vehicle speed for the
//! truck) and a scalar disturbance channel w (road grade for the truck). Safety is
//! encoded by a control barrier function h whose zero-superlevel set is the safe
//! set; the lumped effect of the disturbance on hdot is `b(x, w) = dh/dx . p(x, w)`.
//!
//! The truck model uses headway distance D (m) and ego speed v (m/s):
//!
//! ```text
//! Ddot = v1 - v
//! vdot = u - a(phi) - c v^2,      a(phi) = g (sin phi + gamma cos phi)
//! h(x) = D - D_sf - T v
//! ```

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors raised when constructing a plant from invalid parameters.
#[derive(Debug, Error)]
pub enum PlantError {
    #[error("invalid plant parameter `{field}`: {reason}")]
    InvalidParams {
        field: &'static str,
        reason: String,
    },
}

/// Physical parameters of the connected automated truck.
///
/// Defaults are the bundled truck data set used throughout the examples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TruckParams {
    /// Gravitational acceleration, m/s^2.
    pub grav: f64,
    /// Rolling-resistance coefficient, dimensionless.
    pub gamma: f64,
    /// Air-drag coefficient, 1/m.
    pub c: f64,
    /// Safe stopping distance, m.
    pub d_sf: f64,
    /// Safe time headway, s.
    pub t_headway: f64,
    /// Equilibrium / reference speed, m/s.
    pub v_star: f64,
}

impl Default for TruckParams {
    fn default() -> Self {
        Self {
            grav: 9.81,
            gamma: 0.006,
            c: 0.000428,
            d_sf: 5.0,
            t_headway: 2.0,
            v_star: 20.0,
        }
    }
}

impl TruckParams {
    /// Validates the parameter invariants.
    pub fn validate(&self) -> Result<(), PlantError> {
        let check = |ok: bool, field: &'static str, reason: String| {
            if ok {
                Ok(())
            } else {
                Err(PlantError::InvalidParams { field, reason })
            }
        };
        check(
            self.grav.is_finite() && self.grav > 0.0,
            "grav",
            format!("must be finite and > 0, got {}", self.grav),
        )?;
        check(
            self.gamma.is_finite() && self.gamma >= 0.0,
            "gamma",
            format!("must be finite and >= 0, got {}", self.gamma),
        )?;
        check(
            self.c.is_finite() && self.c >= 0.0,
            "c",
            format!("must be finite and >= 0, got {}", self.c),
        )?;
        check(
            self.d_sf.is_finite() && self.d_sf > 0.0,
            "d_sf",
            format!("must be finite and > 0, got {}", self.d_sf),
        )?;
        check(
            self.t_headway.is_finite() && self.t_headway > 0.0,
            "t_headway",
            format!("must be finite and > 0, got {}", self.t_headway),
        )?;
        check(
            self.v_star.is_finite() && self.v_star >= 0.0,
            "v_star",
            format!("must be finite and >= 0, got {}", self.v_star),
        )?;
        Ok(())
    }

    /// Inverse time headway kappa = 1/T, 1/s.
    pub fn kappa(&self) -> f64 {
        1.0 / self.t_headway
    }

    /// Acceleration demand of the road, `a(phi) = g (sin phi + gamma cos phi)`, m/s^2.
    pub fn grade_accel(&self, phi: f64) -> f64 {
        self.grav * (phi.sin() + self.gamma * phi.cos())
    }
}

/// State of the truck: headway distance and ego speed.
///
/// No sign constraint is imposed so unsafe excursions stay representable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruckState {
    /// Headway distance, m.
    pub d: f64,
    /// Ego speed, m/s.
    pub v: f64,
}

impl TruckState {
    pub fn from_slice(x: &[f64]) -> Self {
        Self { d: x[0], v: x[1] }
    }
}

/// Exogenous signals acting on the plant at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Signals {
    /// Reference signal (lead-vehicle speed v1 for the truck), m/s.
    pub r: f64,
    /// Disturbance signal (road grade phi for the truck), rad.
    pub w: f64,
}

/// Disturbed control-affine plant with a control barrier function.
///
/// The observer, controllers, simulator and stability analysis are written
/// against this interface; the truck is the bundled implementation. States are
/// passed as slices of length `dim()`.
pub trait PlantModel {
    /// State dimension n.
    fn dim(&self) -> usize;

    /// Drift field f(x, r), written into `out` (length n).
    fn drift(&self, x: &[f64], r: f64, out: &mut [f64]);

    /// Input field g(x), written into `out` (length n).
    fn input_field(&self, x: &[f64], out: &mut [f64]);

    /// Disturbance field p(x, w), written into `out` (length n).
    fn disturbance_field(&self, x: &[f64], w: f64, out: &mut [f64]);

    /// Barrier value h(x).
    fn h(&self, x: &[f64]) -> f64;

    /// Barrier gradient dh/dx, written into `out` (length n).
    fn dh_dx(&self, x: &[f64], out: &mut [f64]);

    /// Lie derivative of h along the drift, `L_f h(x, r)`.
    fn lie_f_h(&self, x: &[f64], r: f64) -> f64;

    /// Lie derivative of h along the input field, `L_g h(x)`.
    ///
    /// Must be nonzero wherever the closed-form controllers are evaluated.
    fn lie_g_h(&self, x: &[f64]) -> f64;

    /// Lumped disturbance effect on hdot, `b(x, w) = dh/dx . p(x, w)`.
    fn b(&self, x: &[f64], w: f64) -> f64;

    /// Tightest constant K(x) with `|b(x, w)| <= K(x) p_bar` whenever
    /// `||p(x, w)||_inf <= p_bar`: the 1-norm of dh/dx restricted to the
    /// components the disturbance field can act on.
    fn disturbance_gain(&self, x: &[f64]) -> f64;
}

/// The connected-cruise-control truck plant.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Truck {
    params: TruckParams,
}

impl Truck {
    /// Builds a truck, validating the parameter invariants.
    ///
    /// `t_headway > 0` also guarantees `L_g h = -T != 0` everywhere, which the
    /// closed-form controllers rely on.
    pub fn new(params: TruckParams) -> Result<Self, PlantError> {
        params.validate()?;
        Ok(Self { params })
    }

    pub fn params(&self) -> &TruckParams {
        &self.params
    }

    /// The control-affine fields (f, g, p) at one state.
    pub fn truck_fields(&self, x: TruckState, sig: Signals) -> ([f64; 2], [f64; 2], [f64; 2]) {
        let f = [sig.r - x.v, -self.params.c * x.v * x.v];
        let g = [0.0, 1.0];
        let p = [0.0, -self.params.grade_accel(sig.w)];
        (f, g, p)
    }

    /// Barrier value `h(x) = D - D_sf - T v`, m.
    pub fn cbf_value(&self, x: TruckState) -> f64 {
        x.d - self.params.d_sf - self.params.t_headway * x.v
    }

    /// Lie derivatives `(L_f h, L_g h) = (v1 - v + T c v^2, -T)`.
    pub fn lie_derivatives(&self, x: TruckState, sig: Signals) -> (f64, f64) {
        let lfh = sig.r - x.v + self.params.t_headway * self.params.c * x.v * x.v;
        let lgh = -self.params.t_headway;
        (lfh, lgh)
    }

    /// Disturbance effect on hdot, `b = T a(phi)`, m/s.
    ///
    /// The sign follows from `dh/dx . p = (-T)(-a(phi))`.
    pub fn disturbance_effect(&self, _x: TruckState, phi: f64) -> f64 {
        self.params.t_headway * self.params.grade_accel(phi)
    }
}


impl PlantModel for Truck {
    fn dim(&self) -> usize {
        2
    }

    fn drift(&self, x: &[f64], r: f64, out: &mut [f64]) {
        let (f, _, _) = self.truck_fields(TruckState::from_slice(x), Signals { r, w: 0.0 });
        out.copy_from_slice(&f);
    }

    fn input_field(&self, x: &[f64], out: &mut [f64]) {
        let (_, g, _) = self.truck_fields(TruckState::from_slice(x), Signals { r: 0.0, w: 0.0 });
        out.copy_from_slice(&g);
    }

    fn disturbance_field(&self, x: &[f64], w: f64, out: &mut [f64]) {
        let (_, _, p) = self.truck_fields(TruckState::from_slice(x), Signals { r: 0.0, w });
        out.copy_from_slice(&p);
    }

    fn h(&self, x: &[f64]) -> f64 {
        self.cbf_value(TruckState::from_slice(x))
    }

    fn dh_dx(&self, x: &[f64], out: &mut [f64]) {
        let _ = x;
        out[0] = 1.0;
        out[1] = -self.params.t_headway;
    }

    fn lie_f_h(&self, x: &[f64], r: f64) -> f64 {
        self.lie_derivatives(TruckState::from_slice(x), Signals { r, w: 0.0 })
            .0
    }

    fn lie_g_h(&self, x: &[f64]) -> f64 {
        self.lie_derivatives(TruckState::from_slice(x), Signals { r: 0.0, w: 0.0 })
            .1
    }

    fn b(&self, x: &[f64], w: f64) -> f64 {
        self.disturbance_effect(TruckState::from_slice(x), w)
    }

    fn disturbance_gain(&self, _x: &[f64]) -> f64 {
        // p = [0, -a(phi)] acts on the speed equation only, where dh/dx = -T.
        self.params.t_headway
    }
}
