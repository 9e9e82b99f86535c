use mfg_select::coefficients::{riccati_residual, solve_riccati, CoefficientTable, ModelParams, TimeGrid};
use mfg_select::Error;

// Reference values from a 30-digit evaluation of the closed forms.
const K_T: f64 = 0.432332358381693654;
const R_DELTA: f64 = 0.316060279414278839;
const C_DELTA: f64 = 0.0837025486392216599;
const ETA0_KAPPA1: f64 = 2.25636690981087962185;

fn canonical() -> CoefficientTable {
    CoefficientTable::from_params(&ModelParams::canonical(), 1e-3).unwrap()
}

#[test]
fn canonical_clocks_match_closed_forms() {
    let t = canonical();
    assert!((t.k_horizon() - K_T).abs() < 1e-10);
    assert!((t.r0() - K_T).abs() < 1e-10);
    assert!((t.r_delta - R_DELTA).abs() < 1e-10);
    assert!((t.c_delta() - C_DELTA).abs() < 1e-9);
    for (i, &s) in t.grid().nodes().iter().enumerate() {
        assert!((t.eta[i] - 1.0).abs() < 1e-14);
        assert!((t.w[i] - (1.0 - s).exp()).abs() < 1e-11);
        assert!((t.r[i] - 0.5 * (1.0 - (-2.0 * (1.0 - s)).exp())).abs() < 1e-11);
    }
}

#[test]
fn clock_identity_holds_at_every_node() {
    for kappa in [0.0, 0.7, -0.4, 1.5] {
        let p = ModelParams { kappa, ..ModelParams::canonical() };
        let t = CoefficientTable::from_params(&p, 1e-3).unwrap();
        let r0 = t.r0();
        for i in 0..t.grid().len() {
            assert!((t.k[i] + t.r[i] - r0).abs() < 1e-10, "kappa {kappa}, node {i}");
        }
    }
}

#[test]
fn riccati_with_kappa_one() {
    let p = ModelParams { kappa: 1.0, ..ModelParams::canonical() };
    let grid = TimeGrid::for_params(&p, 1e-3).unwrap();
    let eta = solve_riccati(&p, &grid).unwrap();
    assert!((eta[0] - ETA0_KAPPA1).abs() < 1e-9, "eta(0) = {}", eta[0]);
    assert!((eta[eta.len() - 1] - 1.0).abs() < 1e-15);

    // closed form with a, b = kappa +- sqrt(kappa^2 + 1)
    let (a, b) = (1.0 + 2f64.sqrt(), 1.0 - 2f64.sqrt());
    let c = (1.0 - a) / (1.0 - b) * (-(a - b)).exp();
    for (i, &s) in grid.nodes().iter().enumerate().step_by(50) {
        let q = c * ((a - b) * s).exp();
        let exact = (a - b * q) / (1.0 - q);
        assert!((eta[i] - exact).abs() < 1e-9, "t = {s}");
    }
    assert!(riccati_residual(&eta, 1.0, grid.step()) < 1e-7);
}

#[test]
fn interpolation_agrees_with_nodes_and_closed_form() {
    let t = canonical();
    for s in [0.12345f64, 0.5004, 0.77777, 0.9999] {
        let r = 0.5 * (1.0 - (-2.0 * (1.0 - s)).exp());
        assert!((t.r_at(s) - r).abs() < 1e-11, "r at {s}");
        assert!((t.k_at(s) - (K_T - r)).abs() < 1e-11, "k at {s}");
        assert!((t.w_at(s) - (1.0 - s).exp()).abs() < 1e-11, "w at {s}");
    }
    assert_eq!(t.r_at(1.0), 0.0);
    assert_eq!(t.k_at(0.0), 0.0);
}

#[test]
fn delta_snaps_to_a_node() {
    let g = TimeGrid::new(1.0, 0.01, 0.503).unwrap();
    assert_eq!(g.delta_index(), 50);
    assert!((g.delta() - 0.5).abs() < 1e-15);
    assert_eq!(g.len(), 101);
}

#[test]
fn invalid_parameters_are_rejected() {
    let bad = [
        ModelParams { delta: 1.0, ..ModelParams::canonical() },
        ModelParams { delta: 1.3, ..ModelParams::canonical() },
        ModelParams { delta: 0.0, ..ModelParams::canonical() },
        ModelParams { horizon: -1.0, ..ModelParams::canonical() },
        ModelParams { sigma: f64::NAN, ..ModelParams::canonical() },
    ];
    for p in bad {
        assert!(matches!(CoefficientTable::from_params(&p, 1e-3), Err(Error::Invalid(_))), "{p:?}");
    }
    assert!(CoefficientTable::from_params(&ModelParams::canonical(), 0.0).is_err());
}

#[test]
fn csv_has_one_row_per_node() {
    let t = CoefficientTable::from_params(&ModelParams::canonical(), 0.01).unwrap();
    let mut buf = Vec::new();
    t.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "t,eta,w,r,k");
    assert_eq!(lines.len(), 102);
}
