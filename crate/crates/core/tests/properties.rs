//! Randomized algebraic properties of the control laws, the error envelope,
//! the characteristic function, and the certificate logic.

use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use proptest::prelude::*;

use dob_cbf::controller::{
    certify, dob_control, nominal_control, transient_cancel_control, worst_case_control,
    ControllerConfig, ControllerKind,
};
use dob_cbf::observer::{b_hat, observer_error_bound, ObserverConfig};
use dob_cbf::plant::{PlantModel, Signals, Truck, TruckParams};
use dob_cbf::scenario::ScenarioConfig;
use dob_cbf::stability::characteristic_fn;

fn truck() -> Truck {
    Truck::new(TruckParams::default()).unwrap()
}

fn dob_cfg(alpha: f64, sigma: f64) -> ControllerConfig {
    ControllerConfig {
        kind: ControllerKind::Dob,
        alpha,
        sigma: Some(sigma),
        p_bar: None,
    }
}

proptest! {
    /// The nominal law renders the barrier inequality tight:
    /// L_f h + L_g h u + alpha h = 0.
    #[test]
    fn nominal_control_makes_the_barrier_constraint_tight(
        d in 0.1f64..200.0,
        v in 0.0f64..40.0,
        v1 in 0.0f64..40.0,
        alpha in 0.01f64..2.0,
    ) {
        let plant = truck();
        let x = [d, v];
        let sig = Signals { r: v1, w: 0.0 };
        let cfg = ControllerConfig {
            kind: ControllerKind::Nominal,
            alpha,
            sigma: None,
            p_bar: None,
        };
        let u = nominal_control(&plant, &x, sig, &cfg).unwrap();
        let residual = plant.lie_f_h(&x, v1) + plant.lie_g_h(&x) * u + alpha * plant.h(&x);
        let scale = 1.0 + (alpha * plant.h(&x)).abs() + plant.lie_f_h(&x, v1).abs();
        prop_assert!(residual.abs() <= 1e-9 * scale, "residual {residual}");
    }

    /// The observer-compensated law is the nominal law shifted by the
    /// estimate net of the margin, scaled by the headway time.
    #[test]
    fn dob_control_offsets_nominal_by_the_net_estimate(
        d in 0.1f64..200.0,
        v in 0.0f64..40.0,
        v1 in 0.0f64..40.0,
        xi in -20.0f64..20.0,
        alpha in 0.01f64..2.0,
        sigma in 0.0f64..20.0,
        k_b in 0.05f64..3.0,
    ) {
        let plant = truck();
        let x = [d, v];
        let sig = Signals { r: v1, w: 0.0 };
        let cfg = dob_cfg(alpha, sigma);
        let u = dob_control(&plant, &x, sig, xi, &cfg, k_b).unwrap();
        let nominal = nominal_control(&plant, &x, sig, &cfg).unwrap();
        let t_headway = plant.params().t_headway;
        let expected = nominal + (b_hat(&plant, &x, xi, k_b) - sigma) / t_headway;
        prop_assert!((u - expected).abs() <= 1e-10 * (1.0 + u.abs()));
    }

    /// The worst-case law shifts the nominal law down by exactly the
    /// disturbance bound.
    #[test]
    fn worst_case_control_offsets_nominal_by_the_bound(
        d in 0.1f64..200.0,
        v in 0.0f64..40.0,
        v1 in 0.0f64..40.0,
        alpha in 0.01f64..2.0,
        p_bar in 0.0f64..3.0,
    ) {
        let plant = truck();
        let x = [d, v];
        let sig = Signals { r: v1, w: 0.0 };
        let cfg = ControllerConfig {
            kind: ControllerKind::WorstCase,
            alpha,
            sigma: None,
            p_bar: Some(p_bar),
        };
        let u = worst_case_control(&plant, &x, sig, &cfg).unwrap();
        let nominal = nominal_control(&plant, &x, sig, &cfg).unwrap();
        prop_assert!((u - (nominal - p_bar)).abs() <= 1e-12 * (1.0 + u.abs()));
    }

    /// The transient-cancelling law is the dob law with the margin replaced
    /// by the instantaneous error envelope.
    #[test]
    fn transient_cancel_equals_dob_with_the_envelope_margin(
        d in 0.1f64..200.0,
        v in 0.0f64..40.0,
        v1 in 0.0f64..40.0,
        xi in -20.0f64..20.0,
        alpha in 0.01f64..2.0,
        k_b in 0.05f64..3.0,
        b_h in 0.0f64..3.0,
        e0_abs in 0.0f64..15.0,
        t in 0.0f64..60.0,
    ) {
        let plant = truck();
        let x = [d, v];
        let sig = Signals { r: v1, w: 0.0 };
        let obs = ObserverConfig::new(k_b, b_h, e0_abs).unwrap();
        let cfg = ControllerConfig {
            kind: ControllerKind::TransientCancel,
            alpha,
            sigma: None,
            p_bar: None,
        };
        let u = transient_cancel_control(&plant, &x, sig, xi, &cfg, &obs, t).unwrap();
        let equivalent = dob_cfg(alpha, observer_error_bound(t, &obs));
        let via_dob = dob_control(&plant, &x, sig, xi, &equivalent, k_b).unwrap();
        prop_assert!((u - via_dob).abs() <= 1e-12 * (1.0 + u.abs()));
    }

    /// Real-coefficient quasi-polynomial: H(conj s) = conj H(s).
    #[test]
    fn characteristic_function_is_conjugate_symmetric(
        re in -5.0f64..5.0,
        im in -5.0f64..5.0,
        alpha in 0.01f64..4.0,
        k_b in 0.01f64..4.0,
        tau in 0.0f64..4.0,
    ) {
        let params = TruckParams::default();
        let s = Complex64::new(re, im);
        let direct = characteristic_fn(s.conj(), alpha, k_b, tau, &params);
        let mirrored = characteristic_fn(s, alpha, k_b, tau, &params).conj();
        prop_assert!((direct - mirrored).norm() <= 1e-12 * (1.0 + mirrored.norm()));
    }

    /// The error envelope interpolates monotonically between |e0| and the
    /// steady residual b_h/k_b.
    #[test]
    fn error_envelope_decays_toward_the_steady_residual(
        k_b in 0.05f64..3.0,
        b_h in 0.0f64..3.0,
        e0_abs in 0.0f64..15.0,
        t1 in 0.0f64..60.0,
        dt in 0.0f64..60.0,
    ) {
        let obs = ObserverConfig::new(k_b, b_h, e0_abs).unwrap();
        let steady = b_h / k_b;
        let lo = e0_abs.min(steady) - 1e-12;
        let hi = e0_abs.max(steady) + 1e-12;
        let b1 = observer_error_bound(t1, &obs);
        let b2 = observer_error_bound(t1 + dt, &obs);
        prop_assert!(b1 >= lo && b1 <= hi, "bound {b1} outside [{lo}, {hi}]");
        prop_assert!(
            (b2 - steady).abs() <= (b1 - steady).abs() + 1e-12,
            "distance to steady grew: {b1} -> {b2}"
        );
    }

    /// The certificate reproduces the two provable-safety branches exactly.
    #[test]
    fn certificate_matches_the_rederived_branch_conditions(
        alpha in 0.01f64..2.0,
        sigma in 0.0f64..20.0,
        k_b in 0.05f64..3.0,
        b_h in 0.0f64..3.0,
        e0_abs in 0.0f64..15.0,
        h_x0 in -5.0f64..30.0,
    ) {
        let obs = ObserverConfig::new(k_b, b_h, e0_abs).unwrap();
        let cfg = dob_cfg(alpha, sigma);
        let cert = certify(&cfg, &obs, h_x0);
        let steady = b_h / k_b;
        let expected = if sigma >= e0_abs.max(steady) {
            Some(1)
        } else if sigma >= steady && k_b > alpha && h_x0 >= (e0_abs - steady) / (k_b - alpha) {
            Some(2)
        } else {
            None
        };
        prop_assert_eq!(cert.statement, expected);
        prop_assert_eq!(cert.statement.is_some(), cert.verdict == dob_cbf::controller::Verdict::ProvablySafe);
        prop_assert!((cert.sigma_required_1 - e0_abs.max(steady)).abs() < 1e-15);
        prop_assert!((cert.sigma_required_2 - steady).abs() < 1e-15);
    }
}

fn scenarios_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("..")
        .join("..")
        .join("scenarios")
}

#[test]
fn bundled_configs_survive_a_serialization_round_trip() {
    let mut checked = 0;
    for entry in fs::read_dir(scenarios_dir()).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().and_then(|e| e.to_str()) != Some("json") {
            continue;
        }
        let text = fs::read_to_string(&path).unwrap();
        let parsed: ScenarioConfig = serde_json::from_str(&text)
            .unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        let reserialized = serde_json::to_string_pretty(&parsed).unwrap();
        let reparsed: ScenarioConfig = serde_json::from_str(&reserialized).unwrap();
        assert_eq!(parsed, reparsed, "{} round-trip drift", path.display());
        checked += 1;
    }
    assert_eq!(checked, 8, "expected all 8 bundled scenario files");
}
