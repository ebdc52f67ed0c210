//! Delay-margin analysis of the linearized closed loop.
//!
//! For the truck plant under the exact-compensation (dob) feedback law with
//! an input delay tau, this module provides:
//!
//! * the closed-loop equilibrium and its exact linearization
//!   `zdot = A z + A_tau z(t - tau)` (both a finite-difference linearizer and
//!   hand-derived closed-form matrices, cross-checked in tests),
//! * the characteristic function `H(s)` whose roots are the closed-loop
//!   eigenvalues, via two independent routes (closed form and a determinant
//!   of the linearized matrices),
//! * the stability boundary in the (alpha, k_b) gain plane for a fixed delay,
//!   traced by solving `H(j omega) = 0` for the gains at each frequency,
//! * the critical delay below which every positive gain pair remains stable,
//! * a direct spectral test: rightmost characteristic roots via Chebyshev
//!   collocation of the delay system.

use nalgebra::{DMatrix, Matrix3, Vector3};
use num_complex::Complex64;
use serde::Serialize;
use std::f64::consts::PI;
use thiserror::Error;

use crate::controller::{dob_control, ControllerConfig, ControllerError, ControllerKind};
use crate::observer::xi_rate;
use crate::plant::{PlantError, PlantModel, Signals, Truck, TruckParams};

/// A characteristic root is called stable when its real part lies below this
/// threshold (slightly negative to avoid classifying marginal roots as
/// stable).
pub const STABLE_RE_THRESHOLD: f64 = -1e-9;

/// Default number of Chebyshev collocation intervals for the spectral test.
pub const DEFAULT_COLLOCATION_NODES: usize = 32;

/// Errors raised by the stability analysis.
#[derive(Debug, Error)]
pub enum StabilityError {
    #[error(transparent)]
    Plant(#[from] PlantError),
    #[error(transparent)]
    Controller(#[from] ControllerError),
    #[error("invalid argument `{field}`: {reason}")]
    InvalidArg {
        field: &'static str,
        reason: String,
    },
    #[error("equilibrium analysis needs the exact-compensation (dob) law; got `{kind}`")]
    WrongController { kind: String },
    #[error("equilibrium residual {residual:.3e} still exceeds 1e-10 after refinement")]
    EquilibriumResidual { residual: f64 },
    #[error(
        "no delay-induced stability loss: the linearized drag rate 2 c v* = {drag} \
         is at least the headway rate kappa = {kappa}"
    )]
    NoCriticalDelay { drag: f64, kappa: f64 },
}

fn require_finite(field: &'static str, value: f64) -> Result<(), StabilityError> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(StabilityError::InvalidArg {
            field,
            reason: format!("must be finite, got {value}"),
        })
    }
}

/// Linearization of the closed loop about its equilibrium.
///
/// States are deviations `(D, v, xi)` from `z_star`; inputs are deviations of
/// the lead speed (current `b_r` and delayed `b_r_tau`) and of the road grade
/// (`b_w`):
/// `zdot = A z + A_tau z(t - tau) + b_r dr + b_r_tau dr(t - tau) + b_w dw`.
#[derive(Debug, Clone)]
pub struct LinearizedModel {
    pub a: Matrix3<f64>,
    pub a_tau: Matrix3<f64>,
    pub b_w: Vector3<f64>,
    pub b_r: Vector3<f64>,
    pub b_r_tau: Vector3<f64>,
    pub z_star: [f64; 3],
    pub tau: f64,
}

/// Hand-derived system matrices of the linearized dob closed loop.
///
/// The commanded input reaches the speed equation after the delay, so all
/// feedback terms sit in the middle row of `a_tau`; the observer state
/// integrates `k_b (sigma - alpha h)` (the current command cancels the rest),
/// so its row in `a_tau` is zero and independent of sigma.
pub fn closed_loop_matrices(
    alpha: f64,
    k_b: f64,
    params: &TruckParams,
) -> (Matrix3<f64>, Matrix3<f64>) {
    let kappa = params.kappa();
    let t = params.t_headway;
    let drag = 2.0 * params.c * params.v_star;
    let a = Matrix3::new(
        0.0,
        -1.0,
        0.0,
        //
        0.0,
        -drag,
        0.0,
        //
        -alpha * k_b,
        alpha * k_b * t,
        0.0,
    );
    let a_tau = Matrix3::new(
        0.0,
        0.0,
        0.0,
        //
        (alpha + k_b) * kappa,
        -(alpha + k_b + kappa) + drag,
        -kappa,
        //
        0.0,
        0.0,
        0.0,
    );
    (a, a_tau)
}

/// Closed-loop rate with separate current and delayed arguments.
///
/// The plant's speed equation receives the command evaluated at the delayed
/// state and lead speed; the observer integrates with the current command.
#[allow(clippy::too_many_arguments)]
fn extended_rate(
    truck: &Truck,
    cfg: &ControllerConfig,
    k_b: f64,
    z: &[f64; 3],
    z_tau: &[f64; 3],
    r: f64,
    r_tau: f64,
    w: f64,
) -> Result<[f64; 3], ControllerError> {
    let x = [z[0], z[1]];
    let x_tau = [z_tau[0], z_tau[1]];
    let u_cmd = dob_control(truck, &x, Signals { r, w: 0.0 }, z[2], cfg, k_b)?;
    let u_applied = dob_control(truck, &x_tau, Signals { r: r_tau, w: 0.0 }, z_tau[2], cfg, k_b)?;
    let mut f = [0.0; 2];
    let mut g = [0.0; 2];
    let mut p = [0.0; 2];
    truck.drift(&x, r, &mut f);
    truck.input_field(&x, &mut g);
    truck.disturbance_field(&x, w, &mut p);
    Ok([
        f[0] + g[0] * u_applied + p[0],
        f[1] + g[1] * u_applied + p[1],
        xi_rate(truck, &x, u_cmd, r, z[2], k_b),
    ])
}

fn require_dob(cfg: &ControllerConfig) -> Result<(), StabilityError> {
    if cfg.kind != ControllerKind::Dob {
        return Err(StabilityError::WrongController {
            kind: cfg.kind.as_str().to_string(),
        });
    }
    Ok(())
}

/// Equilibrium `(D*, v*, xi*)` of the dob closed loop at constant lead speed
/// `v_star` and zero grade.
///
/// Closed form: `h* = sigma / alpha`, `D* = D_sf + T v* + h*`,
/// `xi* = k_b h* - T a(0)` (rolling resistance keeps the true input effect
/// nonzero even on flat road). The closed form is then polished by Newton
/// iteration on the full nonlinear rate and the residual is verified.
pub fn find_equilibrium(
    params: &TruckParams,
    cfg: &ControllerConfig,
    k_b: f64,
) -> Result<[f64; 3], StabilityError> {
    require_dob(cfg)?;
    cfg.validate()?;
    let truck = Truck::new(*params)?;
    if !(k_b.is_finite() && k_b > 0.0) {
        return Err(StabilityError::InvalidArg {
            field: "k_b",
            reason: format!("must be finite and > 0, got {k_b}"),
        });
    }
    let sigma = cfg.sigma.expect("validated dob config carries sigma");
    let h_star = sigma / cfg.alpha;
    let v_star = params.v_star;
    let mut z = [
        params.d_sf + params.t_headway * v_star + h_star,
        v_star,
        k_b * h_star - params.t_headway * params.grade_accel(0.0),
    ];

    // Newton refinement on G(z) = extended_rate(z, z); its Jacobian is
    // A + A_tau.
    let (a, a_tau) = closed_loop_matrices(cfg.alpha, k_b, params);
    let jac = a + a_tau;
    let lu = jac.lu();
    let mut residual = f64::INFINITY;
    for _ in 0..6 {
        let rate = extended_rate(&truck, cfg, k_b, &z, &z, v_star, v_star, 0.0)?;
        residual = rate.iter().fold(0.0f64, |m, r| m.max(r.abs()));
        if residual < 1e-13 {
            break;
        }
        let delta = lu
            .solve(&Vector3::new(rate[0], rate[1], rate[2]))
            .ok_or(StabilityError::EquilibriumResidual { residual })?;
        for i in 0..3 {
            z[i] -= delta[i];
        }
    }
    if residual >= 1e-10 {
        return Err(StabilityError::EquilibriumResidual { residual });
    }
    Ok(z)
}

/// Linearizes the closed loop about its equilibrium by central finite
/// differences on the full nonlinear rate.
///
/// This is the reference route; [`closed_loop_matrices`] gives the same `A`
/// and `A_tau` in closed form (cross-checked in tests).
pub fn linearize(
    params: &TruckParams,
    cfg: &ControllerConfig,
    k_b: f64,
    tau: f64,
) -> Result<LinearizedModel, StabilityError> {
    require_finite("tau", tau)?;
    if tau < 0.0 {
        return Err(StabilityError::InvalidArg {
            field: "tau",
            reason: format!("must be >= 0, got {tau}"),
        });
    }
    let truck = Truck::new(*params)?;
    let z_star = find_equilibrium(params, cfg, k_b)?;
    let r_star = params.v_star;

    // rate as a function of the 9 scalar arguments (z, z_tau, r, r_tau, w).
    let eval = |args: &[f64; 9]| -> Result<[f64; 3], StabilityError> {
        let z = [args[0], args[1], args[2]];
        let z_tau = [args[3], args[4], args[5]];
        Ok(extended_rate(
            &truck, cfg, k_b, &z, &z_tau, args[6], args[7], args[8],
        )?)
    };
    let base: [f64; 9] = [
        z_star[0], z_star[1], z_star[2], z_star[0], z_star[1], z_star[2], r_star, r_star, 0.0,
    ];
    let mut columns = [[0.0; 3]; 9];
    for j in 0..9 {
        let step = 1e-6 * base[j].abs().max(1.0);
        let mut hi = base;
        hi[j] += step;
        let mut lo = base;
        lo[j] -= step;
        let fhi = eval(&hi)?;
        let flo = eval(&lo)?;
        for i in 0..3 {
            columns[j][i] = (fhi[i] - flo[i]) / (2.0 * step);
        }
    }
    let col = |j: usize| Vector3::new(columns[j][0], columns[j][1], columns[j][2]);
    Ok(LinearizedModel {
        a: Matrix3::from_columns(&[col(0), col(1), col(2)]),
        a_tau: Matrix3::from_columns(&[col(3), col(4), col(5)]),
        b_r: col(6),
        b_r_tau: col(7),
        b_w: col(8),
        z_star,
        tau,
    })
}

/// Characteristic function of the linearized delayed loop, closed form.
///
/// `H(s) = (s^3 + 2 c v* s^2) e^(s tau) + (alpha + k_b + kappa - 2 c v*) s^2
///         + ((alpha + k_b) kappa + alpha k_b) s + alpha k_b kappa`.
/// Roots of `H` are the closed-loop eigenvalues. The gains enter only through
/// the symmetric combinations `alpha + k_b` and `alpha k_b`.
pub fn characteristic_fn(
    s: Complex64,
    alpha: f64,
    k_b: f64,
    tau: f64,
    params: &TruckParams,
) -> Complex64 {
    let kappa = params.kappa();
    let drag = 2.0 * params.c * params.v_star;
    let p = alpha + k_b;
    let q = alpha * k_b;
    s * s * (s + drag) * (s * tau).exp()
        + (p + kappa - drag) * s * s
        + (p * kappa + q) * s
        + q * kappa
}

/// Characteristic function via the linearized matrices:
/// `det(sI - A - A_tau e^(-s tau)) e^(s tau)`.
///
/// The trailing factor matches the normalization of [`characteristic_fn`];
/// it moves no roots.
pub fn characteristic_det(s: Complex64, model: &LinearizedModel) -> Complex64 {
    let decay = (-s * model.tau).exp();
    let mut m = [[Complex64::new(0.0, 0.0); 3]; 3];
    for (i, row) in m.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            let mut value =
                Complex64::new(-model.a[(i, j)], 0.0) - decay * model.a_tau[(i, j)];
            if i == j {
                value += s;
            }
            *cell = value;
        }
    }
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    det * (s * model.tau).exp()
}

/// One stability-boundary point: at frequency `omega` the gains `(alpha,
/// k_b)` place a characteristic root exactly at `s = j omega`.
///
/// The characteristic function is symmetric in the two gains, so every
/// frequency yields a mirrored pair; `branch` 0 carries `alpha <= k_b` and
/// branch 1 the swapped assignment.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct BoundaryPoint {
    pub omega: f64,
    pub alpha: f64,
    pub k_b: f64,
    pub branch: u8,
}

/// A gain-plane line that belongs to the stability boundary for every delay
/// (the characteristic function has a root at s = 0 on it).
#[derive(Debug, Clone, Serialize)]
pub struct AxisLine {
    /// Which gain vanishes on this line.
    pub parameter: String,
    pub value: f64,
}

/// Rightmost-root classification over a rectangular gain mesh.
#[derive(Debug, Clone, Serialize)]
pub struct StabilityGrid {
    pub alphas: Vec<f64>,
    pub k_bs: Vec<f64>,
    /// Real part of the rightmost characteristic root, row-major with alpha
    /// as the outer index.
    pub rightmost_re: Vec<f64>,
}

impl StabilityGrid {
    pub fn rightmost(&self, i_alpha: usize, i_kb: usize) -> f64 {
        self.rightmost_re[i_alpha * self.k_bs.len() + i_kb]
    }

    pub fn is_stable(&self, i_alpha: usize, i_kb: usize) -> bool {
        self.rightmost(i_alpha, i_kb) < STABLE_RE_THRESHOLD
    }

    pub fn stable_count(&self) -> usize {
        self.rightmost_re
            .iter()
            .filter(|&&re| re < STABLE_RE_THRESHOLD)
            .count()
    }
}

/// Stability boundary of the delayed loop in the (alpha, k_b) plane.
#[derive(Debug, Clone, Serialize)]
pub struct StabilityChart {
    pub tau: f64,
    pub alpha_max: f64,
    pub kb_max: f64,
    pub points: Vec<BoundaryPoint>,
    pub axes: Vec<AxisLine>,
    /// Frequencies at which the linear solve for the gains was singular.
    pub gaps: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<StabilityGrid>,
}

/// Logarithmically spaced grid with exact endpoints.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    assert!(lo > 0.0 && hi > lo && n >= 2, "log grid needs 0 < lo < hi, n >= 2");
    let ratio = hi / lo;
    (0..n)
        .map(|i| {
            if i == n - 1 {
                hi
            } else {
                lo * ratio.powf(i as f64 / (n - 1) as f64)
            }
        })
        .collect()
}

/// Splits `H(j omega) = 0` into the gain-independent part and the
/// coefficients of `P = alpha + k_b` and `Q = alpha k_b`:
/// `H = K + P U + Q V`.
fn boundary_terms(
    omega: f64,
    tau: f64,
    params: &TruckParams,
) -> (Complex64, Complex64, Complex64) {
    let kappa = params.kappa();
    let drag = 2.0 * params.c * params.v_star;
    let s = Complex64::new(0.0, omega);
    let k_term = s * s * (s + drag) * (s * tau).exp() + (kappa - drag) * s * s;
    let u_term = s * s + kappa * s;
    let v_term = s + kappa;
    (k_term, u_term, v_term)
}

/// Solves the 2x2 real system for (P, Q) at one frequency. Returns `None`
/// when the system is singular.
fn solve_pq(omega: f64, tau: f64, params: &TruckParams) -> Option<(f64, f64)> {
    let (k_term, u_term, v_term) = boundary_terms(omega, tau, params);
    let det = u_term.re * v_term.im - u_term.im * v_term.re;
    let kappa = params.kappa();
    // det = -omega (omega^2 + kappa^2) analytically; guard against the
    // numerical zero anyway.
    if det.abs() < 1e-12 * (1.0 + omega * (omega * omega + kappa * kappa)) {
        return None;
    }
    let p = (-k_term.re * v_term.im + k_term.im * v_term.re) / det;
    let q = (-u_term.re * k_term.im + u_term.im * k_term.re) / det;
    Some((p, q))
}

/// Traces the stability boundary for delay `tau` over the given frequency
/// grid, keeping gain pairs inside `(0, alpha_max] x (0, kb_max]`.
///
/// At each frequency the gains solve a linear system in `(P, Q)`; the pair
/// `(alpha, k_b)` is recovered as the roots of `y^2 - P y + Q`. Where the
/// discriminant changes sign between grid points, the crossing (the cusp
/// where the two branches meet, alpha = k_b = P/2) is refined by bisection
/// and emitted on both branches.
pub fn stability_boundary(
    tau: f64,
    params: &TruckParams,
    omegas: &[f64],
    alpha_max: f64,
    kb_max: f64,
) -> Result<StabilityChart, StabilityError> {
    params.validate()?;
    require_finite("tau", tau)?;
    if tau < 0.0 {
        return Err(StabilityError::InvalidArg {
            field: "tau",
            reason: format!("must be >= 0, got {tau}"),
        });
    }
    if !(alpha_max.is_finite() && alpha_max > 0.0 && kb_max.is_finite() && kb_max > 0.0) {
        return Err(StabilityError::InvalidArg {
            field: "alpha_max/kb_max",
            reason: format!("must be finite and > 0, got {alpha_max}/{kb_max}"),
        });
    }
    for &omega in omegas {
        if !(omega.is_finite() && omega > 0.0) {
            return Err(StabilityError::InvalidArg {
                field: "omega",
                reason: format!("frequencies must be finite and > 0, got {omega}"),
            });
        }
    }

    let mut points = Vec::new();
    let mut gaps = Vec::new();
    let in_box = |alpha: f64, k_b: f64| {
        alpha > 0.0 && k_b > 0.0 && alpha <= alpha_max && k_b <= kb_max
    };
    let push_pair = |points: &mut Vec<BoundaryPoint>, omega: f64, p: f64, q: f64| {
        let disc = p * p - 4.0 * q;
        if disc < 0.0 {
            return;
        }
        let root = disc.sqrt();
        let lo = 0.5 * (p - root);
        let hi = 0.5 * (p + root);
        if in_box(lo, hi) {
            points.push(BoundaryPoint {
                omega,
                alpha: lo,
                k_b: hi,
                branch: 0,
            });
        }
        if in_box(hi, lo) {
            points.push(BoundaryPoint {
                omega,
                alpha: hi,
                k_b: lo,
                branch: 1,
            });
        }
    };

    let disc_at = |omega: f64| solve_pq(omega, tau, params).map(|(p, q)| (p, p * p - 4.0 * q));
    let mut prev: Option<(f64, f64)> = None; // (omega, disc)
    for &omega in omegas {
        match solve_pq(omega, tau, params) {
            None => {
                gaps.push(omega);
                prev = None;
            }
            Some((p, q)) => {
                let disc = p * p - 4.0 * q;
                if let Some((omega_prev, disc_prev)) = prev {
                    if disc_prev.signum() != disc.signum() && disc_prev != 0.0 && disc != 0.0 {
                        // Refine the branch-merge frequency (disc = 0).
                        let (mut a, mut fa) = (omega_prev, disc_prev);
                        let mut b = omega;
                        let mut found = true;
                        for _ in 0..60 {
                            let mid = 0.5 * (a + b);
                            match disc_at(mid) {
                                Some((_, fm)) => {
                                    if fm.signum() == fa.signum() {
                                        a = mid;
                                        fa = fm;
                                    } else {
                                        b = mid;
                                    }
                                }
                                None => {
                                    found = false;
                                    break;
                                }
                            }
                        }
                        if found {
                            let omega_c = 0.5 * (a + b);
                            if let Some((pc, _)) = solve_pq(omega_c, tau, params) {
                                let gain = 0.5 * pc;
                                if in_box(gain, gain) {
                                    for branch in [0u8, 1u8] {
                                        points.push(BoundaryPoint {
                                            omega: omega_c,
                                            alpha: gain,
                                            k_b: gain,
                                            branch,
                                        });
                                    }
                                }
                            }
                        }
                    }
                }
                push_pair(&mut points, omega, p, q);
                prev = Some((omega, disc));
            }
        }
    }

    Ok(StabilityChart {
        tau,
        alpha_max,
        kb_max,
        points,
        axes: vec![
            AxisLine {
                parameter: "alpha".to_string(),
                value: 0.0,
            },
            AxisLine {
                parameter: "k_b".to_string(),
                value: 0.0,
            },
        ],
        gaps,
        grid: None,
    })
}

/// Delay at which the stability boundary reaches the origin of the gain
/// plane, so that even vanishingly small positive gains lose stability.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CriticalDelay {
    pub tau_cr: f64,
    pub omega_cr: f64,
}

/// Critical delay of the headway loop.
///
/// In the small-gain limit the characteristic function reduces to the scalar
/// headway dynamics, whose boundary crossing sits at frequency
/// `omega_cr = sqrt(kappa^2 - (2 c v*)^2)` with
/// `tau_cr = arcsin(omega_cr / kappa) / omega_cr`; for c = 0 this reduces to
/// `pi / (2 kappa)`. Below this delay a stable gain region touching the
/// origin survives (large gains can still be unstable); beyond it no gain
/// pair near the origin is stable. Requires `kappa > 2 c v*`.
pub fn critical_delay(params: &TruckParams) -> Result<CriticalDelay, StabilityError> {
    params.validate()?;
    let kappa = params.kappa();
    let drag = 2.0 * params.c * params.v_star;
    let omega_sq = kappa * kappa - drag * drag;
    if omega_sq <= 0.0 {
        return Err(StabilityError::NoCriticalDelay { drag, kappa });
    }
    let omega_cr = omega_sq.sqrt();
    Ok(CriticalDelay {
        tau_cr: (omega_cr / kappa).asin() / omega_cr,
        omega_cr,
    })
}

/// Chebyshev extreme points (descending from 1 to -1) and the matching
/// differentiation matrix (diagonal via the negative-sum trick).
fn chebyshev_diff(n: usize) -> DMatrix<f64> {
    let x: Vec<f64> = (0..=n).map(|j| (j as f64 * PI / n as f64).cos()).collect();
    let c = |i: usize| -> f64 {
        let end = if i == 0 || i == n { 2.0 } else { 1.0 };
        if i.is_multiple_of(2) {
            end
        } else {
            -end
        }
    };
    let mut d = DMatrix::zeros(n + 1, n + 1);
    for i in 0..=n {
        for j in 0..=n {
            if i != j {
                d[(i, j)] = c(i) / c(j) / (x[i] - x[j]);
            }
        }
    }
    for i in 0..=n {
        let off: f64 = (0..=n).filter(|&j| j != i).map(|j| d[(i, j)]).sum();
        d[(i, i)] = -off;
    }
    d
}

/// Rightmost characteristic roots of `zdot = A z(t) + A_tau z(t - tau)`,
/// sorted by descending real part (ties by descending imaginary part).
///
/// Uses Chebyshev collocation with `n` intervals on the delay history: the
/// generator of the solution semigroup is discretized into an
/// `(n+1)m x (n+1)m` matrix whose rightmost eigenvalues converge
/// spectrally to the true roots. With `tau = 0` the roots are exactly
/// `eig(A + A_tau)`.
pub fn rightmost_roots(
    a: &DMatrix<f64>,
    a_tau: &DMatrix<f64>,
    tau: f64,
    n: usize,
) -> Result<Vec<Complex64>, StabilityError> {
    let m = a.nrows();
    if a.ncols() != m || a_tau.nrows() != m || a_tau.ncols() != m || m == 0 {
        return Err(StabilityError::InvalidArg {
            field: "a/a_tau",
            reason: "matrices must be square and of equal size".to_string(),
        });
    }
    require_finite("tau", tau)?;
    if tau < 0.0 {
        return Err(StabilityError::InvalidArg {
            field: "tau",
            reason: format!("must be >= 0, got {tau}"),
        });
    }
    if n < 2 {
        return Err(StabilityError::InvalidArg {
            field: "n",
            reason: format!("needs at least 2 collocation intervals, got {n}"),
        });
    }

    let mut roots: Vec<Complex64> = if tau == 0.0 {
        (a + a_tau).complex_eigenvalues().iter().copied().collect()
    } else {
        let d = chebyshev_diff(n);
        let dim = m * (n + 1);
        let mut big = DMatrix::<f64>::zeros(dim, dim);
        // Node 0 is the present time: apply the delay equation there. Node n
        // sits at t - tau.
        for r in 0..m {
            for c2 in 0..m {
                big[(r, c2)] = a[(r, c2)];
                big[(r, n * m + c2)] = a_tau[(r, c2)];
            }
        }
        // Remaining nodes: spectral differentiation of the history segment,
        // rescaled from [-1, 1] to a window of length tau.
        let scale = 2.0 / tau;
        for j in 1..=n {
            for k in 0..=n {
                let value = scale * d[(j, k)];
                if value != 0.0 {
                    for q in 0..m {
                        big[(j * m + q, k * m + q)] = value;
                    }
                }
            }
        }
        big.complex_eigenvalues().iter().copied().collect()
    };
    roots.sort_by(|x, y| {
        (y.re, y.im)
            .partial_cmp(&(x.re, x.im))
            .expect("eigenvalues are finite")
    });
    Ok(roots)
}

/// Spectral stability test for a gain pair at delay `tau`.
///
/// Returns the verdict together with the rightmost characteristic root; the
/// loop is declared stable when its real part is below
/// [`STABLE_RE_THRESHOLD`].
pub fn is_stable(
    alpha: f64,
    k_b: f64,
    tau: f64,
    params: &TruckParams,
    n: usize,
) -> Result<(bool, Complex64), StabilityError> {
    params.validate()?;
    require_finite("alpha", alpha)?;
    require_finite("k_b", k_b)?;
    let (a, a_tau) = closed_loop_matrices(alpha, k_b, params);
    let a_dyn = DMatrix::from_fn(3, 3, |i, j| a[(i, j)]);
    let a_tau_dyn = DMatrix::from_fn(3, 3, |i, j| a_tau[(i, j)]);
    let roots = rightmost_roots(&a_dyn, &a_tau_dyn, tau, n)?;
    let top = roots[0];
    Ok((top.re < STABLE_RE_THRESHOLD, top))
}

/// Rightmost-root classification over an explicit gain mesh.
pub fn stability_grid(
    tau: f64,
    params: &TruckParams,
    alphas: &[f64],
    k_bs: &[f64],
    n: usize,
) -> Result<StabilityGrid, StabilityError> {
    let mut rightmost_re = Vec::with_capacity(alphas.len() * k_bs.len());
    for &alpha in alphas {
        for &k_b in k_bs {
            let (_, root) = is_stable(alpha, k_b, tau, params, n)?;
            rightmost_re.push(root.re);
        }
    }
    Ok(StabilityGrid {
        alphas: alphas.to_vec(),
        k_bs: k_bs.to_vec(),
        rightmost_re,
    })
}
