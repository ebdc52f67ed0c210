//! Command-line interface.
//!
//! Subcommands:
//!
//! * `simulate <config>`: run a scenario, write trajectory CSV, metadata
//!   JSON, and a plot-spec JSON into the output directory.
//! * `certify <config>`: evaluate the safety certificate without simulating.
//! * `stability-chart --tau <s>`: trace the gain-plane stability boundary
//!   (optionally classifying a gain grid by the rightmost root).
//! * `critical-delay`: print the delay margin of the positive gain quadrant.
//! * `error-bound`: print the observer error envelope as CSV.
//!
//! Exit codes: 0 success; 1 invalid configuration, arguments, or I/O;
//! 2 simulation aborted on non-finite state; 3 simulation finished but the
//! barrier dropped below the integration slack (`min h < -eps_int`);
//! 4 certificate evaluated to not-certified.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::controller::{SafetyCertificate, Verdict};
use crate::observer::ObserverConfig;
use crate::output::{
    default_plotspec, write_bound_csv, write_chart_csv, write_chart_sidecar, write_grid_csv,
    write_json, write_trajectory_csv,
};
use crate::plant::TruckParams;
use crate::scenario::{load_plant_params, load_scenario, run_scenario, sanitize_name};
use crate::sim::SimError;
use crate::stability::{
    critical_delay, log_grid, stability_boundary, stability_grid, CriticalDelay,
    DEFAULT_COLLOCATION_NODES,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_NON_FINITE: i32 = 2;
pub const EXIT_UNSAFE: i32 = 3;
pub const EXIT_NOT_CERTIFIED: i32 = 4;

/// Safety-filtered cruise control: simulation and delay-margin analysis.
#[derive(Debug, Parser)]
#[command(name = "dob-cbf", version, about)]
pub struct Cli {
    /// Directory for generated files (created if missing).
    #[arg(long, global = true, default_value = "out")]
    pub out_dir: PathBuf,
    /// Reserved for future stochastic features; accepted and echoed only.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Suppress the per-run summary on stdout (warnings still go to stderr).
    #[arg(long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a scenario file and write its trajectory, metadata, and plot spec.
    Simulate {
        /// Scenario JSON file.
        config: PathBuf,
    },
    /// Evaluate the safety certificate of a scenario without simulating.
    Certify {
        /// Scenario JSON file.
        config: PathBuf,
    },
    /// Trace the stability boundary in the (alpha, k_b) plane for a delay.
    StabilityChart {
        /// Input delay, s.
        #[arg(long)]
        tau: f64,
        /// Upper edge of the searched alpha range, 1/s.
        #[arg(long, default_value_t = 4.0)]
        alpha_max: f64,
        /// Upper edge of the searched k_b range, 1/s.
        #[arg(long, default_value_t = 4.0)]
        kb_max: f64,
        /// Number of frequencies on the logarithmic sweep grid.
        #[arg(long, default_value_t = 2000)]
        n_omega: usize,
        /// Lowest sweep frequency, rad/s.
        #[arg(long, default_value_t = 1e-4)]
        omega_min: f64,
        /// Highest sweep frequency, rad/s.
        #[arg(long, default_value_t = 10.0)]
        omega_max: f64,
        /// Also classify an N x N gain grid by its rightmost root.
        #[arg(long)]
        grid: Option<usize>,
        /// Chebyshev collocation intervals for the grid classification.
        #[arg(long, default_value_t = DEFAULT_COLLOCATION_NODES)]
        nodes: usize,
        /// Optional scenario file supplying plant parameters.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Print the critical input delay (JSON).
    CriticalDelay {
        /// Optional scenario file supplying plant parameters.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Print the observer error envelope as t,bound CSV.
    ErrorBound {
        /// Observer gain k_b, 1/s.
        #[arg(long)]
        kb: f64,
        /// Disturbance-effect Lipschitz constant, (m/s)/s.
        #[arg(long)]
        bh: f64,
        /// Initial error magnitude |e0|, m/s.
        #[arg(long)]
        e0: f64,
        /// End of the tabulated range, s.
        #[arg(long, default_value_t = 30.0)]
        t_max: f64,
        /// Tabulation step, s.
        #[arg(long, default_value_t = 0.01)]
        dt: f64,
    },
}

/// Parses the process arguments and runs the selected command, returning the
/// process exit code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match &cli.command {
        Command::Simulate { config } => simulate(config, &cli),
        Command::Certify { config } => certify_cmd(config, &cli),
        Command::StabilityChart {
            tau,
            alpha_max,
            kb_max,
            n_omega,
            omega_min,
            omega_max,
            grid,
            nodes,
            config,
        } => stability_chart_cmd(
            *tau,
            *alpha_max,
            *kb_max,
            *n_omega,
            *omega_min,
            *omega_max,
            *grid,
            *nodes,
            config.as_deref(),
            &cli,
        ),
        Command::CriticalDelay { config } => critical_delay_cmd(config.as_deref(), &cli),
        Command::ErrorBound {
            kb,
            bh,
            e0,
            t_max,
            dt,
        } => error_bound_cmd(*kb, *bh, *e0, *t_max, *dt),
    }
}

fn fail(e: impl std::fmt::Display) -> i32 {
    eprintln!("error: {e}");
    EXIT_CONFIG
}

fn ensure_out_dir(dir: &Path) -> Result<(), i32> {
    fs::create_dir_all(dir).map_err(|e| fail(format!("cannot create {}: {e}", dir.display())))
}

fn plant_params_from(config: Option<&Path>) -> Result<TruckParams, i32> {
    match config {
        Some(path) => load_plant_params(path).map_err(fail),
        None => Ok(TruckParams::default()),
    }
}

fn simulate(config: &Path, cli: &Cli) -> i32 {
    let rs = match load_scenario(config) {
        Ok(rs) => rs,
        Err(e) => return fail(e),
    };
    for w in &rs.warnings {
        eprintln!("warning: {w}");
    }
    if let Err(code) = ensure_out_dir(&cli.out_dir) {
        return code;
    }
    let traj = match run_scenario(&rs) {
        Ok(t) => t,
        Err(e @ SimError::NonFinite { .. }) => {
            eprintln!("error: {e}");
            return EXIT_NON_FINITE;
        }
        Err(e) => return fail(e),
    };

    let traj_path = cli.out_dir.join(&rs.trajectory_name);
    let meta_path = cli.out_dir.join(&rs.metadata_name);
    let spec_path = cli
        .out_dir
        .join(format!("{}_plotspec.json", sanitize_name(&rs.name)));
    if let Err(e) = write_trajectory_csv(&traj_path, &traj, rs.decimation) {
        return fail(e);
    }
    if let Err(e) = write_json(&meta_path, &traj.meta, "trajectory metadata") {
        return fail(e);
    }
    let spec = default_plotspec(&rs.name, &rs.trajectory_name, &rs.metadata_name);
    if let Err(e) = write_json(&spec_path, &spec, "plot spec") {
        return fail(e);
    }

    if !cli.quiet {
        println!(
            "scenario {}: {} samples over {} s (step {} s, delay {} s)",
            rs.name, traj.meta.samples, traj.meta.duration, traj.meta.step, traj.meta.tau
        );
        print_certificate_line(&rs.certificate);
        if traj.meta.certificate_voided_by_saturation {
            println!(
                "  actuator clamp engaged on {} steps; the certificate does not cover this run",
                traj.meta.saturated_steps
            );
        }
        println!(
            "  min h = {:.6} m at t = {:.3} s{}",
            traj.meta.min_h,
            traj.meta.t_min_h,
            match traj.meta.first_unsafe_t {
                Some(t) => format!("; first h < 0 at t = {t:.3} s"),
                None => "; h >= 0 throughout".to_string(),
            }
        );
        println!("wrote {}", traj_path.display());
        println!("wrote {}", meta_path.display());
        println!("wrote {}", spec_path.display());
    }

    if traj.meta.min_h < -rs.integ.eps_int {
        eprintln!(
            "safety violation: min h = {:.6} m (below -eps_int = {:.1e})",
            traj.meta.min_h, -rs.integ.eps_int
        );
        return EXIT_UNSAFE;
    }
    EXIT_OK
}

fn print_certificate_line(cert: &SafetyCertificate) {
    let verdict = match cert.verdict {
        Verdict::ProvablySafe => "provably-safe",
        Verdict::NotCertified => "not-certified",
    };
    match cert.statement {
        Some(n) => println!("  certificate: {verdict} (statement {n})"),
        None => println!(
            "  certificate: {verdict} (sigma_eff = {:.4}, required {:.4} or {:.4})",
            cert.sigma_effective, cert.sigma_required_1, cert.sigma_required_2
        ),
    }
}

#[derive(Serialize)]
struct CertifyDoc<'a> {
    scenario: &'a str,
    certificate: &'a SafetyCertificate,
}

fn certify_cmd(config: &Path, _cli: &Cli) -> i32 {
    let rs = match load_scenario(config) {
        Ok(rs) => rs,
        Err(e) => return fail(e),
    };
    for w in &rs.warnings {
        eprintln!("warning: {w}");
    }
    let doc = CertifyDoc {
        scenario: &rs.name,
        certificate: &rs.certificate,
    };
    match serde_json::to_string_pretty(&doc) {
        Ok(text) => println!("{text}"),
        Err(e) => return fail(e),
    }
    match rs.certificate.verdict {
        Verdict::ProvablySafe => EXIT_OK,
        Verdict::NotCertified => EXIT_NOT_CERTIFIED,
    }
}

#[allow(clippy::too_many_arguments)]
fn stability_chart_cmd(
    tau: f64,
    alpha_max: f64,
    kb_max: f64,
    n_omega: usize,
    omega_min: f64,
    omega_max: f64,
    grid: Option<usize>,
    nodes: usize,
    config: Option<&Path>,
    cli: &Cli,
) -> i32 {
    let params = match plant_params_from(config) {
        Ok(p) => p,
        Err(code) => return code,
    };
    if !(omega_min.is_finite() && omega_min > 0.0 && omega_max.is_finite() && omega_max > omega_min)
    {
        return fail(format!(
            "frequency sweep needs 0 < omega_min < omega_max, got [{omega_min}, {omega_max}]"
        ));
    }
    if n_omega < 2 {
        return fail(format!("--n-omega must be at least 2, got {n_omega}"));
    }
    let omegas = log_grid(omega_min, omega_max, n_omega);
    let chart = match stability_boundary(tau, &params, &omegas, alpha_max, kb_max) {
        Ok(c) => c,
        Err(e) => return fail(e),
    };
    let cd = critical_delay(&params).ok();

    let grid_result = match grid {
        Some(0) => return fail("--grid must be at least 1"),
        Some(n) => {
            let alphas: Vec<f64> = (1..=n).map(|i| alpha_max * i as f64 / n as f64).collect();
            let k_bs: Vec<f64> = (1..=n).map(|i| kb_max * i as f64 / n as f64).collect();
            match stability_grid(tau, &params, &alphas, &k_bs, nodes) {
                Ok(g) => Some(g),
                Err(e) => return fail(e),
            }
        }
        None => None,
    };

    if let Err(code) = ensure_out_dir(&cli.out_dir) {
        return code;
    }
    let base = format!("stability_chart_tau{tau}");
    let csv_path = cli.out_dir.join(format!("{base}.csv"));
    let json_path = cli.out_dir.join(format!("{base}.json"));
    if let Err(e) = write_chart_csv(&csv_path, &chart) {
        return fail(e);
    }
    if let Err(e) = write_chart_sidecar(&json_path, &chart, &params, cd) {
        return fail(e);
    }
    let mut grid_path = None;
    if let Some(g) = &grid_result {
        let p = cli.out_dir.join(format!("{base}_grid.csv"));
        if let Err(e) = write_grid_csv(&p, g) {
            return fail(e);
        }
        grid_path = Some(p);
    }

    if !cli.quiet {
        println!(
            "stability boundary at tau = {tau} s: {} points in (0, {alpha_max}] x (0, {kb_max}], {} gaps",
            chart.points.len(),
            chart.gaps.len()
        );
        if let Some(cd) = cd {
            println!(
                "  critical delay: tau_cr = {:.6} s at omega_cr = {:.6} rad/s",
                cd.tau_cr, cd.omega_cr
            );
        }
        if let Some(g) = &grid_result {
            println!(
                "  grid: {} of {} gain pairs stable",
                g.stable_count(),
                g.rightmost_re.len()
            );
        }
        println!("wrote {}", csv_path.display());
        println!("wrote {}", json_path.display());
        if let Some(p) = grid_path {
            println!("wrote {}", p.display());
        }
    }
    EXIT_OK
}

#[derive(Serialize)]
struct CriticalDelayDoc<'a> {
    params: &'a TruckParams,
    #[serde(flatten)]
    critical: CriticalDelay,
}

fn critical_delay_cmd(config: Option<&Path>, _cli: &Cli) -> i32 {
    let params = match plant_params_from(config) {
        Ok(p) => p,
        Err(code) => return code,
    };
    match critical_delay(&params) {
        Ok(cd) => {
            let doc = CriticalDelayDoc {
                params: &params,
                critical: cd,
            };
            match serde_json::to_string_pretty(&doc) {
                Ok(text) => {
                    println!("{text}");
                    EXIT_OK
                }
                Err(e) => fail(e),
            }
        }
        Err(e) => fail(e),
    }
}

fn error_bound_cmd(kb: f64, bh: f64, e0: f64, t_max: f64, dt: f64) -> i32 {
    if !(t_max.is_finite() && t_max >= 0.0 && dt.is_finite() && dt > 0.0) {
        return fail(format!(
            "tabulation needs t_max >= 0 and dt > 0, got t_max = {t_max}, dt = {dt}"
        ));
    }
    let cfg = match ObserverConfig::new(kb, bh, e0) {
        Ok(c) => c,
        Err(e) => return fail(e),
    };
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    if let Err(e) = write_bound_csv(&mut lock, &cfg, t_max, dt) {
        return fail(e);
    }
    EXIT_OK
}
