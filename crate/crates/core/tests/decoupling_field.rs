use std::sync::Arc;

use mfg_select::decoupling_field::{
    cole_hopf_eval, l1_comparison, max_gradient, psi, psi_bound, psi_report, quadrature_oracle,
};
use mfg_select::fields::g_eval;
use mfg_select::{CoefficientTable, EntropyField, Error, ModelParams, ViscousField};

fn table() -> Arc<CoefficientTable> {
    Arc::new(CoefficientTable::from_params(&ModelParams::canonical(), 1e-3).unwrap())
}

// θ^σ₀(t, x) from a 30-digit quadrature of the Cole–Hopf ratio.
const REFERENCE: [(f64, f64, f64, f64); 5] = [
    (0.25, 0.2, 0.3, -0.94691276787102094619),
    (0.5, 0.05, 0.1, -0.94584080343669050193),
    (0.8, -0.1, 0.05, 0.66128147678419853591),
    (0.0, 0.01, 0.02, -1.0),
    (0.3, 0.1, 0.5, -0.39839910744661692125),
];

#[test]
fn closed_form_matches_reference_values() {
    let t = table();
    for (s, x, sig, want) in REFERENCE {
        let got = cole_hopf_eval(&t, s, x, sig).unwrap();
        assert!((got - want).abs() < 1e-9, "({s}, {x}, {sig}): {got} vs {want}");
    }
}

#[test]
fn oracle_matches_reference_values() {
    let t = table();
    for (s, x, sig, want) in REFERENCE {
        let got = quadrature_oracle(&t, s, x, sig).unwrap();
        assert!((got - want).abs() < 1e-9, "({s}, {x}, {sig}): {got} vs {want}");
    }
}

#[test]
fn closed_form_and_oracle_agree_on_lattice() {
    let t = table();
    for sig in [0.5, 0.2, 0.1] {
        let f = ViscousField::new(t.clone(), sig).unwrap();
        for i in 0..21 {
            let s = 0.99 * i as f64 / 20.0;
            for j in 0..21 {
                let x = -1.0 + 2.0 * j as f64 / 20.0;
                let (a, b) = (f.eval(s, x), f.oracle(s, x));
                assert!((a - b).abs() <= 1e-8, "sigma0 {sig}, ({s}, {x}): {a} vs {b}");
            }
        }
    }
}

#[test]
fn zero_and_horizon() {
    let t = table();
    let f = ViscousField::new(t.clone(), 0.2).unwrap();
    for s in [0.0, 0.3, 0.7, 0.95] {
        assert_eq!(f.eval(s, 0.0), 0.0);
        assert!(f.oracle(s, 0.0).abs() < 1e-10);
    }
    for x in [-0.4, -0.1, 0.2, 0.5] {
        assert!((f.eval(1.0, x) - g_eval(x, t.r_delta)).abs() < 1e-15);
    }
    // Lipschitz continuity at the terminal time
    let f1 = ViscousField::new(t.clone(), 1.0).unwrap();
    let near = 0.999;
    for x in [-0.3, 0.05, 0.2, 0.6] {
        let gap = (f1.eval(near, x) - g_eval(x, t.r_delta)).abs();
        assert!(gap < 0.1, "x = {x}: {gap}");
    }
    assert!(matches!(cole_hopf_eval(&t, 0.5, 0.1, 0.0), Err(Error::Invalid(_))));
}

#[test]
fn pde_residual_is_discretisation_error() {
    let t = table();
    let f = ViscousField::new(t, 0.5).unwrap();
    let r1 = f.pde_residual(0.3, 0.1, 1e-4, 1e-4);
    let dt = (f.eval(0.3 + 1e-4, 0.1) - f.eval(0.3 - 1e-4, 0.1)) / 2e-4;
    assert!(r1.abs() <= 1e-3 * (1.0 + dt.abs()), "residual {r1}");
    let a = f.pde_residual(0.3, 0.0, 1e-4, 1e-4);
    let b = f.pde_residual(0.3, -0.0, 1e-4, 1e-4);
    assert_eq!(a, b);
}

#[test]
fn psi_bound_plug_in() {
    // independent evaluation of the three terms at t = 0.1, x = 0.05, λ = 100
    let rt = 0.5 * (1.0 - (-1.8f64).exp());
    let rd = 0.5 * (1.0 - (-1.0f64).exp());
    let lam = 100.0;
    let ratio = (rd / (rt - rd)).sqrt();
    let t1 = (4.0 + 2.0 * ratio) * (-2.0 * lam * 0.05f64).exp();
    let t2 = 2.0 * 2f64.sqrt() / (lam * std::f64::consts::PI * rt).sqrt();
    let t3 = 2.0 * ratio * (-lam * (rt - rd).powi(2) / (2.0 * rt)).exp();
    assert!((t1 - 0.000341993032112167).abs() < 1e-15);
    assert!((t2 - 0.247012857090588065).abs() < 1e-14);
    assert!((t3 - 1.03351899432905679).abs() < 1e-13);

    let b = psi_bound(&table(), 0.1, 0.05, 0.1).unwrap();
    assert!((b - 1.28087384445175702).abs() < 1e-9, "bound {b}");
    assert!((b - (t1 + t2 + t3)).abs() < 1e-9);
}

#[test]
fn psi_bound_decreases_in_lambda_and_rejects_outside_region() {
    let t = table();
    let mut last = f64::INFINITY;
    for sig in [0.3, 0.2, 0.1, 0.05, 0.02] {
        let b = psi_bound(&t, 0.1, 0.05, sig).unwrap();
        assert!(b < last);
        last = b;
    }
    assert!(psi_bound(&t, 0.7, 0.05, 0.1).is_err());
    assert!(psi_bound(&t, 0.1, 0.0, 0.1).is_err());
    assert!(psi_bound(&t, 0.1, 0.2, 0.1).is_err());
}

#[test]
fn psi_is_odd_and_bounded() {
    let t = table();
    let e = EntropyField::new(t.clone());
    for sig in [0.2, 0.1, 0.05] {
        let f = ViscousField::new(t.clone(), sig).unwrap();
        for i in 0..10 {
            let s = 0.45 * i as f64 / 9.0;
            let gap = t.r_at(s) - t.r_delta;
            for j in 1..10 {
                let x = gap * j as f64 / 10.0;
                assert_eq!(psi(&f, &e, s, x), -psi(&f, &e, s, -x));
                let rep = psi_report(&f, &e, s, x).unwrap();
                assert!(rep.holds(1e-6), "{rep:?}");
            }
        }
    }
    let f = ViscousField::new(t.clone(), 0.05).unwrap();
    let x = t.r_at(0.25) - t.r_delta + 0.1;
    assert!(psi(&f, &e, 0.25, x).abs() <= 0.05);
}

#[test]
fn smoothed_field_dominates_and_mass_is_bounded() {
    let t = table();
    let gam = 0.05;
    for sig in [0.3, 0.1] {
        for s in [0.0, 0.5, 0.9] {
            let c = l1_comparison(&t, s, sig, gam).unwrap();
            assert!(c.min_pointwise_diff >= -1e-9, "{c:?}");
            assert!(c.gap_integral <= c.bound + 1e-6, "{c:?}");
        }
    }
    let small = l1_comparison(&t, 0.5, 0.3, 0.005).unwrap();
    let large = l1_comparison(&t, 0.5, 0.3, 0.05).unwrap();
    assert!(small.gap_integral < 0.02 * large.gap_integral);
}

// Fitted once on the canonical configuration (max of σ₀²·|∂ₓθ^σ₀| at t = δ,
// over σ₀ ∈ {0.4, 0.2, 0.1}) and rounded up.
const GRADIENT_ENVELOPE: f64 = 1.0;

#[test]
fn gradient_grows_within_inverse_square_envelope() {
    let t = table();
    let delta = t.delta();
    let mut last = 0.0;
    for sig in [0.4, 0.2, 0.1] {
        let f = ViscousField::new(t.clone(), sig).unwrap();
        let m = max_gradient(&f, delta, 1.0, 2000, 1e-5);
        assert!(m > last, "sigma0 {sig}: {m} after {last}");
        assert!(m <= GRADIENT_ENVELOPE / (sig * sig), "sigma0 {sig}: {m}");
        last = m;
    }
}
