//! Acceptance gate: one test per release criterion, each printing a PASS
//! line with the measured numbers (visible under `--nocapture`).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use num_complex::Complex64;

use dob_cbf::observer::observer_error_bound;
use dob_cbf::plant::TruckParams;
use dob_cbf::scenario::{
    load_scenario, resolve_scenario, run_scenario, ResolvedScenario, ScenarioConfig,
};
use dob_cbf::sim::Trajectory;
use dob_cbf::stability::{
    characteristic_det, characteristic_fn, critical_delay, is_stable, linearize, log_grid,
    stability_boundary, stability_grid, BoundaryPoint, DEFAULT_COLLOCATION_NODES,
};

fn scenarios_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("..")
        .join("..")
        .join("scenarios")
}

fn parse_config(name: &str) -> ScenarioConfig {
    let path = scenarios_dir().join(name);
    let text = fs::read_to_string(&path)
        .unwrap_or_else(|e| panic!("cannot read {}: {e}", path.display()));
    serde_json::from_str(&text).unwrap_or_else(|e| panic!("cannot parse {name}: {e}"))
}

fn load(name: &str) -> ResolvedScenario {
    load_scenario(scenarios_dir().join(name)).unwrap()
}

fn run(name: &str) -> Trajectory {
    run_scenario(&load(name)).unwrap()
}

/// Mean of `y` over samples with `t >= t0`.
fn tail_mean(t: &[f64], y: &[f64], t0: f64) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (ti, yi) in t.iter().zip(y) {
        if *ti >= t0 {
            sum += yi;
            n += 1;
        }
    }
    sum / n as f64
}

#[test]
fn criterion_1_observer_error_within_bound_for_three_gains() {
    let cfg = parse_config("example2.json");
    let base = scenarios_dir();
    let mut elapsed = 0.0;
    for k_b in [0.25, 0.55, 1.076] {
        let mut c = cfg.clone();
        c.observer.as_mut().unwrap().k_b = k_b;
        let rs = resolve_scenario(&c, &base).unwrap();
        let start = Instant::now();
        let traj = run_scenario(&rs).unwrap();
        elapsed += start.elapsed().as_secs_f64();
        for i in 0..traj.t.len() {
            let bound = observer_error_bound(traj.t[i], &rs.observer);
            assert!(
                traj.e[i].abs() <= bound + 1e-3,
                "k_b = {k_b}: |e({})| = {} exceeds bound {}",
                traj.t[i],
                traj.e[i].abs(),
                bound
            );
        }
    }
    assert!(elapsed < 5.0, "three 120 s runs took {elapsed:.2} s");
    println!(
        "PASS criterion 1: |e(t)| within the exponential bound (+1e-3) for \
         k_b in {{0.25, 0.55, 1.076}}; runtime {elapsed:.2} s"
    );
}

#[test]
fn criterion_2_nominal_controller_fails_under_disturbance() {
    let traj = run("example1.json");
    assert!(
        traj.meta.min_h < 0.0,
        "nominal run stayed safe (min h = {})",
        traj.meta.min_h
    );
    println!(
        "PASS criterion 2: nominal controller violates safety, min h = {:.3} m",
        traj.meta.min_h
    );
}

#[test]
fn criterion_3_large_margin_keeps_set_invariant() {
    let rs = load("example3_case1.json");
    assert_eq!(rs.certificate.statement, Some(1));
    let traj = run_scenario(&rs).unwrap();
    assert!(
        traj.meta.min_h >= -1e-3,
        "min h = {} below -1e-3",
        traj.meta.min_h
    );
    println!(
        "PASS criterion 3: sigma = 10 holds the safe set, min h = {:.6} m",
        traj.meta.min_h
    );
}

#[test]
fn criterion_4_shrunken_start_stays_above_comparison_bound() {
    let rs = load("example3_case3.json");
    assert_eq!(rs.certificate.statement, Some(2));
    // h(x0) = (|e0| - b_h/k_b) / (k_b - alpha) = 9 / (1.0758... - 0.25).
    let expected_h0 = 10.898440243785645;
    assert!(
        (rs.h0 - expected_h0).abs() < 1e-9,
        "resolved h0 = {}, expected {expected_h0}",
        rs.h0
    );
    let traj = run_scenario(&rs).unwrap();
    let mut worst = f64::INFINITY;
    for i in 0..traj.t.len() {
        let slack = traj.h[i] - traj.y_bound[i];
        assert!(
            slack >= -1e-3,
            "h({}) = {} fell below y = {}",
            traj.t[i],
            traj.h[i],
            traj.y_bound[i]
        );
        worst = worst.min(slack);
    }
    assert!(traj.meta.min_h >= -1e-3);
    println!(
        "PASS criterion 4: h(t) >= y(t) - 1e-3 throughout (worst slack {:.2e}), \
         min h = {:.3} m",
        worst, traj.meta.min_h
    );
}

#[test]
fn criterion_5_insufficient_margin_fails_during_transient() {
    let rs = load("example3_case2.json");
    let traj = run_scenario(&rs).unwrap();
    assert!(
        traj.meta.min_h < 0.0,
        "expected a transient violation, min h = {}",
        traj.meta.min_h
    );
    // The violation belongs to the initial observer transient, whose scale
    // is 1/k_b (~0.93 s here).
    assert!(
        traj.meta.t_min_h <= 5.0,
        "violation argmin at t = {} s is not an initial transient",
        traj.meta.t_min_h
    );
    println!(
        "PASS criterion 5: transient violation min h = {:.3} m at t = {:.2} s \
         (1/k_b = {:.2} s)",
        traj.meta.min_h,
        traj.meta.t_min_h,
        1.0 / rs.observer.k_b
    );
}

#[test]
fn criterion_6_worst_case_is_more_conservative_in_steady_state() {
    let wc = run("example3_case4.json");
    let dob = run("example3_case3.json");
    let t_tail = wc.meta.duration - 20.0;
    let wc_mean = tail_mean(&wc.t, &wc.h, t_tail);
    let dob_mean = tail_mean(&dob.t, &dob.h, t_tail);
    assert!(
        wc_mean > dob_mean,
        "worst-case steady h {wc_mean} not above observer-based {dob_mean}"
    );
    println!(
        "PASS criterion 6: steady-state mean h, worst-case {wc_mean:.2} m > \
         observer-based {dob_mean:.2} m"
    );
}

#[test]
fn criterion_7_derived_constants_match_closed_forms() {
    // (a) The sinusoid disturbance-effect slope bound.
    let rs = load("example2.json");
    let b_h = rs.observer.b_h;
    assert!(
        (b_h - 1.0759).abs() <= 1e-3,
        "auto b_h = {b_h}, expected 1.0759 +- 1e-3"
    );

    // (b) Observed |db/dt| in simulation never exceeds the bound.
    let traj = run_scenario(&rs).unwrap();
    let mut max_slope: f64 = 0.0;
    for i in 1..traj.t.len() {
        let slope = (traj.b[i] - traj.b[i - 1]) / (traj.t[i] - traj.t[i - 1]);
        max_slope = max_slope.max(slope.abs());
    }
    assert!(
        max_slope <= b_h + 1e-6,
        "observed max |db/dt| = {max_slope} exceeds b_h = {b_h}"
    );

    // (c) Undisturbed equilibrium: constant grade, so b is constant, the
    // estimate is exact, and h settles at sigma/alpha = 1.96/0.25 = 7.84 m.
    let undisturbed: ScenarioConfig = serde_json::from_str(
        r#"{
            "name": "equilibrium",
            "controller": { "kind": "dob", "alpha": 0.25, "sigma": 1.96 },
            "observer": { "k_b": 0.55, "e0": 0.0 },
            "signals": {
                "grade": { "kind": "constant", "value": 0.0 },
                "lead_speed": { "kind": "constant", "value": 20.0 }
            },
            "initial_state": { "h0": 0.0 },
            "integrator": { "step": 0.001, "duration": 300.0 }
        }"#,
    )
    .unwrap();
    let rs = resolve_scenario(&undisturbed, &scenarios_dir()).unwrap();
    let traj = run_scenario(&rs).unwrap();
    let h_end = *traj.h.last().unwrap();
    assert!(
        (h_end - 7.84).abs() <= 1e-4,
        "equilibrium h = {h_end}, expected sigma/alpha = 7.84"
    );
    println!(
        "PASS criterion 7: b_h = {b_h:.6}, max |db/dt| = {max_slope:.6}, \
         equilibrium h = {h_end:.6} m (sigma/alpha = 7.84)"
    );
}

/// Counts proper intersections between segment (a, b) and the boundary
/// polyline, joining consecutive same-branch points in frequency order.
fn polyline_crossings(points: &[BoundaryPoint], a: (f64, f64), b: (f64, f64)) -> usize {
    fn orient(a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> f64 {
        (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0)
    }
    fn crosses(p1: (f64, f64), p2: (f64, f64), q1: (f64, f64), q2: (f64, f64)) -> bool {
        let d1 = orient(q1, q2, p1);
        let d2 = orient(q1, q2, p2);
        let d3 = orient(p1, p2, q1);
        let d4 = orient(p1, p2, q2);
        (d1 > 0.0) != (d2 > 0.0) && (d3 > 0.0) != (d4 > 0.0)
    }
    let mut count = 0;
    for branch in [0u8, 1u8] {
        let mut prev: Option<(f64, f64)> = None;
        for p in points.iter().filter(|p| p.branch == branch) {
            let cur = (p.alpha, p.k_b);
            if let Some(q) = prev {
                if crosses(a, b, q, cur) {
                    count += 1;
                }
            }
            prev = Some(cur);
        }
    }
    count
}

#[test]
fn criterion_8_delay_stability_classification() {
    let params = TruckParams::default();

    // (a) Spectral oracle at the design point and delay.
    let (stable, root) = is_stable(0.25, 0.55, 0.8, &params, DEFAULT_COLLOCATION_NODES).unwrap();
    assert!(stable, "design point unstable, rightmost root {root}");

    // (b) Boundary curves give the same classification: the segment from a
    // provably stable near-origin anchor to the design point crosses no
    // boundary curve, while a ray into the high-gain region crosses one and
    // lands on a spectrally unstable pair.
    let omegas = log_grid(1e-4, 10.0, 2000);
    let chart = stability_boundary(0.8, &params, &omegas, 4.0, 4.0).unwrap();
    assert!(!chart.points.is_empty());
    let anchor = (0.05, 0.05);
    let (anchor_stable, _) =
        is_stable(anchor.0, anchor.1, 0.8, &params, DEFAULT_COLLOCATION_NODES).unwrap();
    assert!(anchor_stable);
    let to_design = polyline_crossings(&chart.points, anchor, (0.25, 0.55));
    assert_eq!(
        to_design, 0,
        "segment to the design point crosses the boundary {to_design} times"
    );
    let to_high_gain = polyline_crossings(&chart.points, anchor, (0.25, 3.9));
    assert_eq!(to_high_gain % 2, 1, "high-gain ray crossings = {to_high_gain}");
    let (high_stable, high_root) =
        is_stable(0.25, 3.9, 0.8, &params, DEFAULT_COLLOCATION_NODES).unwrap();
    assert!(!high_stable, "(0.25, 3.9) should be unstable, got {high_root}");

    // (c) At tau = 3.2 s every pair on a 20x20 grid over (0, 2]^2 is
    // unstable.
    let gains: Vec<f64> = (1..=20).map(|i| i as f64 * 0.1).collect();
    let grid = stability_grid(3.2, &params, &gains, &gains, DEFAULT_COLLOCATION_NODES).unwrap();
    let n_stable = grid.stable_count();
    assert_eq!(n_stable, 0, "{n_stable} grid pairs still stable at tau = 3.2");

    // (d) Critical delay from the exact formula, near the small-drag
    // approximation pi/(2 kappa).
    let cd = critical_delay(&params).unwrap();
    assert!(
        (cd.tau_cr - 3.075).abs() <= 0.005,
        "tau_cr = {}, expected 3.075 +- 0.005",
        cd.tau_cr
    );
    let approx = std::f64::consts::PI / (2.0 * params.kappa());
    assert!((cd.tau_cr - approx).abs() < 0.1);

    println!(
        "PASS criterion 8: (0.25, 0.55, 0.8) stable by curves and spectrum \
         (rightmost {:.4}); 20x20 grid all unstable at tau = 3.2; tau_cr = {:.4} s",
        root.re, cd.tau_cr
    );
}

#[test]
fn criterion_9_characteristic_function_matches_determinant() {
    let params = TruckParams::default();
    let cfg = dob_cbf::controller::ControllerConfig {
        kind: dob_cbf::controller::ControllerKind::Dob,
        alpha: 0.25,
        sigma: Some(1.96),
        p_bar: None,
    };
    let model = linearize(&params, &cfg, 0.55, 0.8).unwrap();

    // Deterministic 64-bit LCG; samples uniform on the |s| <= 5 disc.
    let mut state: u64 = 42;
    let mut next_unit = move || {
        state = state
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        (state >> 11) as f64 / (1u64 << 53) as f64
    };
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let r = 5.0 * next_unit().sqrt();
        let theta = 2.0 * std::f64::consts::PI * next_unit();
        let s = Complex64::from_polar(r, theta);
        let via_det = characteristic_det(s, &model);
        let closed = characteristic_fn(s, 0.25, 0.55, 0.8, &params);
        let rel = (via_det - closed).norm() / closed.norm();
        assert!(
            rel < 1e-6,
            "mismatch at s = {s}: det {via_det}, closed form {closed}, rel {rel}"
        );
        worst = worst.max(rel);
    }
    println!(
        "PASS criterion 9: determinant path matches the closed form at 100 \
         random points, worst relative error {worst:.2e}"
    );
}

#[test]
fn criterion_10_recorded_signals_run_is_certified_and_safe() {
    let rs = load("example4.json");
    assert_eq!(rs.certificate.statement, Some(2));
    let c0 = rs.certificate.c0_threshold.unwrap();
    assert!(
        (c0 - 10.1).abs() <= 0.05,
        "initial-set threshold = {c0}, expected 10.1 +- 0.05"
    );
    let traj = run_scenario(&rs).unwrap();
    assert!(
        traj.meta.min_h >= -1e-2,
        "min h = {} below -1e-2",
        traj.meta.min_h
    );
    println!(
        "PASS criterion 10: delayed data-driven run certified (threshold \
         {c0:.4} m), min h = {:.3} m",
        traj.meta.min_h
    );
}

#[test]
fn criterion_11_bundled_scenarios_are_byte_deterministic() {
    let bin = env!("CARGO_BIN_EXE_dob-cbf");
    let scenarios = [
        "example1",
        "example2",
        "example3_case1",
        "example3_case2",
        "example3_case3",
        "example3_case4",
        "example3_case6",
        "example4",
    ];
    for name in scenarios {
        let config = scenarios_dir().join(format!("{name}.json"));
        let mut outputs: Vec<Vec<(String, Vec<u8>)>> = Vec::new();
        for _ in 0..2 {
            let dir = tempfile::tempdir().unwrap();
            let out = Command::new(bin)
                .arg("--out-dir")
                .arg(dir.path())
                .arg("--quiet")
                .arg("simulate")
                .arg(&config)
                .output()
                .unwrap();
            assert!(
                matches!(out.status.code(), Some(0) | Some(3)),
                "{name}: unexpected exit {:?}",
                out.status
            );
            let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir.path())
                .unwrap()
                .map(|e| {
                    let e = e.unwrap();
                    (
                        e.file_name().to_string_lossy().into_owned(),
                        fs::read(e.path()).unwrap(),
                    )
                })
                .collect();
            files.sort();
            assert_eq!(files.len(), 3, "{name}: expected 3 output files");
            outputs.push(files);
        }
        assert_eq!(outputs[0], outputs[1], "{name}: outputs differ between runs");
    }
    println!(
        "PASS criterion 11: two runs of all {} bundled scenarios produced \
         byte-identical outputs",
        scenarios.len()
    );
}
