use mfg_select::cost_eval::{
    cost_closed_form, cost_monte_carlo, cost_monte_carlo_full, cost_report, mean_variance_at_equilibrium,
    noise_cost, selection_gap,
};
use mfg_select::{CoefficientTable, ModelParams};

const GAP: f64 = 0.283833820809153173;
const NOISE: f64 = 0.5;

fn canonical() -> (ModelParams, CoefficientTable) {
    let p = ModelParams::canonical();
    let t = CoefficientTable::from_params(&p, 1e-3).unwrap();
    (p, t)
}

#[test]
fn closed_form_costs() {
    let (p, t) = canonical();
    assert!((selection_gap(&t) - GAP).abs() < 1e-10);
    assert!((noise_cost(&p, &t) - NOISE).abs() < 1e-10);
    assert!((cost_closed_form(1.0, &p, &t) - (GAP + NOISE)).abs() < 1e-10);
    assert_eq!(cost_closed_form(1.0, &p, &t), cost_closed_form(-1.0, &p, &t));
    assert!(cost_closed_form(0.0, &p, &t) < cost_closed_form(1.0, &p, &t));
}

#[test]
fn noise_part_scales_with_sigma_squared() {
    let p = ModelParams { sigma: 2.0, ..ModelParams::canonical() };
    let t = CoefficientTable::from_params(&p, 1e-3).unwrap();
    assert!((noise_cost(&p, &t) - 4.0 * NOISE).abs() < 1e-9);
    assert!((selection_gap(&t) - GAP).abs() < 1e-10);
}

#[test]
fn monte_carlo_agrees_with_closed_form() {
    let (p, t) = canonical();
    for a in [-1.0, 0.0, 1.0] {
        let mc = cost_monte_carlo_full(a, 4000, 77, &p, &t).unwrap();
        let exact = cost_closed_form(a, &p, &t);
        assert!((mc.estimate - exact).abs() <= 4.0 * mc.standard_error + 2e-3, "A = {a}: {mc:?} vs {exact}");
        let (m, v) = mean_variance_at_equilibrium(a, t.grid().steps(), &p, &t);
        assert!((mc.terminal_mean - m).abs() <= 4.0 * mc.terminal_mean_se + 2e-3, "A = {a}");
        assert!((mc.terminal_variance / v - 1.0).abs() < 0.1, "A = {a}");
    }
    assert!(cost_monte_carlo(1.0, 50, 1, &p, &t).is_err());
}

#[test]
fn report_lists_three_equilibria() {
    let (p, t) = canonical();
    let r = cost_report(&p, &t, 0, 1).unwrap();
    assert!(r.mc_estimates.is_empty());
    assert_eq!(r.closed_form(-1.0), r.j_minus);
    assert_eq!(r.closed_form(0.0), r.j_zero);
    assert!((r.j_plus - r.j_zero - GAP).abs() < 1e-10);
    let with_mc = cost_report(&p, &t, 200, 1).unwrap();
    assert_eq!(with_mc.mc_estimates.len(), 3);
}

#[test]
fn equilibrium_moments() {
    let (p, t) = canonical();
    let n = t.grid().steps();
    let (m, v) = mean_variance_at_equilibrium(1.0, n, &p, &t);
    assert!((m + t.k_horizon()).abs() < 1e-15);
    assert!((v - t.k_horizon()).abs() < 1e-15);
    assert_eq!(mean_variance_at_equilibrium(0.0, n, &p, &t).0, 0.0);
}
