//! Simulation and analysis toolkit for safety-filtered longitudinal control
//! of a connected automated truck.
//!
//! The closed loop couples three pieces:
//!
//! * a control-affine truck model with a distance-headway safety function
//!   ([`plant`]),
//! * a first-order disturbance observer estimating the effect of unknown
//!   road grade on the safety function, with an explicit error envelope
//!   ([`observer`]),
//! * closed-form safety-filtered feedback laws (a nominal filter, an
//!   exact-compensation law with robustness margin, a worst-case baseline,
//!   and a transient-cancelling variant) together with a certificate
//!   evaluator for formal safety statements ([`controller`]).
//!
//! Around them sit a fixed-step closed-loop integrator with optional input
//! delay ([`sim`]), scenario configuration and resolution ([`scenario`]),
//! delay-margin analysis of the linearized loop ([`stability`]), writers for
//! the produced artifacts ([`output`]), and the command-line interface
//! ([`cli`]).

pub mod cli;
pub mod controller;
pub mod observer;
pub mod output;
pub mod plant;
pub mod scenario;
pub mod signals;
pub mod sim;
pub mod stability;
