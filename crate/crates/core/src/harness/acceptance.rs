//! The ten acceptance criteria. Each returns a [`CheckResult`] whose
//! `passed` includes the runtime limit.

use std::sync::Arc;
use std::time::Instant;

use rand::RngExt;
use serde_json::json;

use super::{par_map, CheckResult};
use crate::coefficients::{CoefficientTable, ModelParams};
use crate::cost_eval::{cost_closed_form, cost_monte_carlo};
use crate::decoupling_field::{l1_comparison, psi, psi_bound, ViscousField};
use crate::error::Result;
use crate::fields::{admissible_parameters, equilibrium_path, g_eval, EntropyField};
use crate::mfg_sim::{
    binomial_se, selection_stats, simulate_ensemble, simulate_mu, simulate_with_noise, transition_stats, SelectionReport,
    TransitionPoint,
};
use crate::nplayer_sim::{
    nplayer_selection_stats, simulate_exact_picard, simulate_exact_picard_with_noise, sup_gap_vs_aggregate,
    AggregateModel, PicardConfig,
};
use crate::rng::{self, Domain};

/// Settings shared by all criteria.
#[derive(Debug, Clone)]
pub struct Context {
    pub params: ModelParams,
    pub dt: f64,
    pub seed: u64,
    pub table: Arc<CoefficientTable>,
}

impl Context {
    pub fn new(params: &ModelParams, dt: f64, seed: u64) -> Result<Self> {
        let table = Arc::new(CoefficientTable::from_params(params, dt)?);
        Ok(Self { params: params.clone(), dt, seed, table })
    }
}

pub type Criterion = fn(&Context) -> Result<CheckResult>;

/// (number, name, runtime limit in seconds, check)
pub const CRITERIA: [(usize, &str, f64, Criterion); 10] = [
    (1, "three-equilibria fixed point", 1.0, three_equilibria),
    (2, "minimal-cost selection", 60.0, minimal_cost),
    (3, "Cole-Hopf correctness", 60.0, cole_hopf),
    (4, "viscous gap bound", 60.0, gap_bound),
    (5, "L1 comparison", 60.0, l1_bound),
    (6, "zero-noise selection", 600.0, zero_noise_selection),
    (7, "transition-point statistics", 600.0, transition_point),
    (8, "N-player selection", 600.0, nplayer_selection),
    (9, "exact-vs-aggregate consistency", 900.0, exact_vs_aggregate),
    (10, "symmetry and invariance", 60.0, symmetry),
];

/// Runs criterion `number` (1-based) and applies its runtime limit.
pub fn run_criterion(ctx: &Context, number: usize) -> Result<CheckResult> {
    let (k, name, limit, f) = CRITERIA[number - 1];
    let start = Instant::now();
    let mut c = f(ctx)?;
    c.seconds = start.elapsed().as_secs_f64();
    c.name = format!("criterion {k}: {name}");
    if c.seconds > limit {
        c.passed = false;
        c.detail = format!("{}; runtime {:.1}s exceeds {limit}s", c.detail, c.seconds);
    }
    Ok(c)
}

pub fn run_all(params: &ModelParams, dt: f64, seed: u64, mut report: impl FnMut(&CheckResult)) -> Result<Vec<CheckResult>> {
    let ctx = Context::new(params, dt, seed)?;
    let mut out = Vec::new();
    for k in 1..=CRITERIA.len() {
        let c = run_criterion(&ctx, k)?;
        report(&c);
        out.push(c);
    }
    Ok(out)
}

/// `next ≤ prev + 3·sqrt(se_prev² + se_next²)` for each consecutive pair.
fn non_increasing(values: &[(f64, f64)]) -> bool {
    values.windows(2).all(|w| w[1].0 <= w[0].0 + 3.0 * (w[0].1 * w[0].1 + w[1].1 * w[1].1).sqrt())
}

fn three_equilibria(ctx: &Context) -> Result<CheckResult> {
    let table = &ctx.table;
    let mut worst: f64 = 0.0;
    for a in [-1.0, 0.0, 1.0] {
        let e = equilibrium_path(a, 0.0, table)?;
        worst = worst.max((g_eval(e.mu[e.mu.len() - 1], table.r_delta) - a).abs());
    }
    let xi = 0.05;
    let family = admissible_parameters(xi, table)?;
    for a in family {
        let e = equilibrium_path(a, xi, table)?;
        worst = worst.max((g_eval(e.mu[e.mu.len() - 1], table.r_delta) - a).abs());
    }
    Ok(CheckResult::new(
        "",
        worst <= 1e-9,
        json!({ "max_matching_error": worst, "xi_family": family }),
        format!("max |g(mu_T) - A| = {worst:.1e}; xi=0.05 family {family:?}"),
    ))
}

fn minimal_cost(ctx: &Context) -> Result<CheckResult> {
    let (p, table) = (&ctx.params, &ctx.table);
    let j: Vec<f64> = [-1.0, 0.0, 1.0].iter().map(|&a| cost_closed_form(a, p, table)).collect();
    let symmetric = (j[2] - j[0]).abs() <= f64::EPSILON * j[2].abs();
    let minimal = j[1] < j[0] && j[1] < j[2];
    let mut z = Vec::new();
    for a in [-1.0, 0.0, 1.0] {
        let (est, se) = cost_monte_carlo(a, 100_000, ctx.seed, p, table)?;
        z.push((est - cost_closed_form(a, p, table)).abs() / se);
    }
    let mc_ok = z.iter().all(|&v| v <= 3.0);
    Ok(CheckResult::new(
        "",
        symmetric && minimal && mc_ok,
        json!({ "J": j, "mc_z": z }),
        format!("J = ({:.6}, {:.6}, {:.6}); MC deviations {:.2?} SE", j[0], j[1], j[2], z),
    ))
}

fn cole_hopf(ctx: &Context) -> Result<CheckResult> {
    let table = &ctx.table;
    let horizon = table.horizon();
    let mut worst: f64 = 0.0;
    for sigma0 in [0.5, 0.2, 0.1] {
        let field = ViscousField::new(table.clone(), sigma0)?;
        let errs = par_map(21 * 21, |k| {
            let t = 0.95 * horizon * (k / 21) as f64 / 20.0;
            let x = -0.6 + 0.06 * (k % 21) as f64;
            (field.eval(t, x) - field.oracle(t, x)).abs()
        });
        worst = errs.into_iter().fold(worst, f64::max);
    }
    // second-order stencil: halving both steps quarters the residual
    let field = ViscousField::new(table.clone(), 0.5)?;
    let mut ratios = Vec::new();
    for (t, x) in [(0.3, 0.1), (0.6, -0.2), (0.2, 0.4)] {
        let coarse = field.pde_residual(t, x, 1e-2, 1e-2);
        let fine = field.pde_residual(t, x, 5e-3, 5e-3);
        ratios.push(coarse / fine);
    }
    let order_ok = ratios.iter().all(|r| (3.0..=5.0).contains(r));
    Ok(CheckResult::new(
        "",
        worst <= 1e-8 && order_ok,
        json!({ "max_oracle_gap": worst, "residual_ratios": ratios }),
        format!("max |closed form - oracle| = {worst:.1e}; residual ratios {ratios:.2?}"),
    ))
}

fn gap_bound(ctx: &Context) -> Result<CheckResult> {
    let table = &ctx.table;
    let entropy = EntropyField::new(table.clone());
    let (mut checked, mut violations, mut worst) = (0usize, 0usize, f64::NEG_INFINITY);
    for sigma0 in [0.2, 0.1, 0.05] {
        let field = ViscousField::new(table.clone(), sigma0)?;
        for i in 0..10 {
            let t = 0.05 * i as f64;
            let gap = table.r_at(t) - table.r_delta;
            for j in 1..20 {
                for side in [-1.0, 1.0] {
                    let x = side * gap * j as f64 / 20.0;
                    let excess = psi(&field, &entropy, t, x).abs() - psi_bound(table, t, x, sigma0)?;
                    checked += 1;
                    worst = worst.max(excess);
                    if excess > 1e-6 {
                        violations += 1;
                    }
                }
            }
        }
    }
    Ok(CheckResult::new(
        "",
        violations == 0,
        json!({ "points": checked, "violations": violations, "max_excess": worst }),
        format!("{checked} points, {violations} violations, max |psi| - bound = {worst:.3e}"),
    ))
}

fn l1_bound(ctx: &Context) -> Result<CheckResult> {
    let gamma = 0.05;
    let (mut ok, mut min_diff, mut worst_ratio) = (true, f64::INFINITY, 0.0_f64);
    for sigma0 in [0.3, 0.1] {
        for t in [0.0, 0.5, 0.9] {
            let c = l1_comparison(&ctx.table, t, sigma0, gamma)?;
            ok &= c.min_pointwise_diff >= -1e-9 && c.gap_integral <= c.bound + 1e-6;
            min_diff = min_diff.min(c.min_pointwise_diff);
            worst_ratio = worst_ratio.max(c.gap_integral / c.bound);
        }
    }
    Ok(CheckResult::new(
        "",
        ok,
        json!({ "min_pointwise_diff": min_diff, "max_integral_over_bound": worst_ratio }),
        format!("min diff {min_diff:.1e}; max integral/bound {worst_ratio:.4}"),
    ))
}

fn mfg_reports(ctx: &Context, sigmas: &[f64], paths: usize, tolerance: f64) -> Result<Vec<SelectionReport>> {
    sigmas
        .iter()
        .map(|&s| {
            let field = ViscousField::new(ctx.table.clone(), s)?;
            selection_stats(&simulate_ensemble(&field, paths, ctx.seed)?, tolerance)
        })
        .collect()
}

fn zero_noise_selection(ctx: &Context) -> Result<CheckResult> {
    let sigmas = [0.2, 0.1, 0.05];
    let reports = mfg_reports(ctx, &sigmas, 2000, 0.15)?;
    let last = &reports[2];
    let split_ok = (0.46..=0.54).contains(&last.frac_plus) && last.frac_unclassified <= 0.05;
    let trend: Vec<(f64, f64)> = reports.iter().map(|r| (r.frac_unclassified, r.se_unclassified)).collect();
    let trend_ok = non_increasing(&trend);
    Ok(CheckResult::new(
        "",
        split_ok && trend_ok,
        json!({
            "sigma0": sigmas,
            "frac_plus": reports.iter().map(|r| r.frac_plus).collect::<Vec<_>>(),
            "frac_unclassified": reports.iter().map(|r| r.frac_unclassified).collect::<Vec<_>>(),
        }),
        format!(
            "sigma0=0.05: plus {:.3}, unclassified {:.3}; unclassified across (0.2, 0.1, 0.05) = {:.3?}",
            last.frac_plus,
            last.frac_unclassified,
            trend.iter().map(|t| t.0).collect::<Vec<_>>()
        ),
    ))
}

fn transition_point(ctx: &Context) -> Result<CheckResult> {
    let sigmas = [0.2, 0.1, 0.05];
    let gamma = 0.5 * ctx.table.c_delta();
    let mut late = Vec::new();
    let mut escape = Vec::new();
    for &s in &sigmas {
        let field = ViscousField::new(ctx.table.clone(), s)?;
        let ensemble = simulate_ensemble(&field, 2000, ctx.seed)?;
        let tp = TransitionPoint::standard(s)?;
        let st = transition_stats(&ensemble, &tp, gamma, s.sqrt())?;
        late.push((st.late_fraction(), binomial_se(st.late_fraction(), st.paths)));
        escape.push((st.violation_fraction(), binomial_se(st.violation_fraction(), st.plus_hitters)));
    }
    let (l, e) = (late[2].0, escape[2].0);
    let ok = l <= 0.1 && e <= 0.05 && non_increasing(&late) && non_increasing(&escape);
    let lv: Vec<f64> = late.iter().map(|v| v.0).collect();
    let ev: Vec<f64> = escape.iter().map(|v| v.0).collect();
    Ok(CheckResult::new(
        "",
        ok,
        json!({ "sigma0": sigmas, "late_fraction": lv, "escape_violation_fraction": ev, "gamma": gamma }),
        format!("P(tau > sqrt(sigma0)) across (0.2, 0.1, 0.05) = {lv:.3?}; escape violations = {ev:.3?}"),
    ))
}

fn nplayer_selection(ctx: &Context) -> Result<CheckResult> {
    let ns = [64, 256, 1024];
    let mut reports = Vec::new();
    for n in ns {
        reports.push(nplayer_selection_stats(ctx.table.clone(), ctx.params.sigma, n, 500, 0.15, ctx.seed)?.0);
    }
    let last = &reports[2];
    let split_ok = (0.43..=0.57).contains(&last.frac_plus) && last.frac_unclassified <= 0.10;
    let trend: Vec<(f64, f64)> = reports.iter().map(|r| (r.frac_unclassified, r.se_unclassified)).collect();
    let trend_ok = non_increasing(&trend);
    let uv: Vec<f64> = trend.iter().map(|t| t.0).collect();
    Ok(CheckResult::new(
        "",
        split_ok && trend_ok,
        json!({ "n": ns, "frac_plus": reports.iter().map(|r| r.frac_plus).collect::<Vec<_>>(), "frac_unclassified": uv }),
        format!("N=1024: plus {:.3}, unclassified {:.3}; unclassified across (64, 256, 1024) = {uv:.3?}", last.frac_plus, last.frac_unclassified),
    ))
}

/// Scenario groups ("seeds") per N in criterion 9.
pub const CONSISTENCY_SEEDS: usize = 20;
/// Scenarios per group; all groups share one pooled regression.
pub const SCENARIOS_PER_SEED: usize = 8;

fn exact_vs_aggregate(ctx: &Context) -> Result<CheckResult> {
    let ns = [8usize, 32, 128];
    let config = PicardConfig { scenarios: CONSISTENCY_SEEDS * SCENARIOS_PER_SEED, ..PicardConfig::default() };
    let seed = rng::derive_key(ctx.seed, Domain::Particles, 0);
    let mut medians = Vec::new();
    let mut converged = Vec::new();
    let mut iterations = Vec::new();
    for n in ns {
        let model = AggregateModel::new(ctx.table.clone(), ctx.params.sigma, n)?;
        let sol = simulate_exact_picard(ctx.table.clone(), ctx.params.sigma, n, seed, &config)?;
        let mut gaps = (0..sol.scenarios()).map(|s| sup_gap_vs_aggregate(&sol, &model, s)).collect::<Result<Vec<_>>>()?;
        gaps.sort_by(f64::total_cmp);
        medians.push(gaps[gaps.len() / 2]);
        converged.push(sol.converged);
        iterations.push(sol.iterations);
    }
    let decreasing = medians.windows(2).all(|w| w[1] < w[0]);
    let rate = converged.iter().filter(|&&c| c).count() as f64 / ns.len() as f64;
    Ok(CheckResult::new(
        "",
        decreasing && rate >= 0.9,
        json!({
            "n": ns,
            "median_sup_gap": medians,
            "converged": converged,
            "iterations": iterations,
            "convergence_rate": rate,
        }),
        format!("median sup gap across (8, 32, 128) = {medians:.4?}; converged {converged:?} after {iterations:?} passes"),
    ))
}

fn symmetry(ctx: &Context) -> Result<CheckResult> {
    let table = &ctx.table;
    let steps = table.grid().steps();
    let mut failures: Vec<String> = Vec::new();

    // mean process driven by negated noise
    let field = ViscousField::new(table.clone(), 0.1)?;
    for i in 0..50 {
        let p = simulate_mu(table, &field, 0.1, ctx.seed, i)?;
        let neg: Vec<f64> = p.noise.iter().map(|z| -z).collect();
        let flipped = simulate_with_noise(table, &field, 0.1, 0.0, &neg)?;
        if flipped.iter().zip(&p.values).any(|(a, b)| *a != -*b) {
            failures.push(format!("mfg path {i} not sign-equivariant"));
            break;
        }
    }

    // aggregate path at N = 400 is the sigma0 = 0.05 mean process
    let model = AggregateModel::new(table.clone(), ctx.params.sigma, 400)?;
    let agg = model.simulate(ctx.seed, 0)?;
    let direct = simulate_with_noise(table, &ViscousField::new(table.clone(), 0.05)?, 0.05, 0.0, &agg.increments)?;
    if direct != agg.mu_hat {
        failures.push("aggregate N=400 differs from sigma0=0.05 path".into());
    }
    let neg: Vec<f64> = agg.increments.iter().map(|z| -z).collect();
    if model.run_with_noise(&neg)?.iter().zip(&agg.mu_hat).any(|(a, b)| *a != -*b) {
        failures.push("aggregate path not sign-equivariant".into());
    }

    // exact solver with all increments negated
    let cfg = PicardConfig { scenarios: 4, max_iterations: 4, ..PicardConfig::default() };
    let sol = simulate_exact_picard(table.clone(), ctx.params.sigma, 8, ctx.seed, &cfg)?;
    let neg: Vec<f64> = sol.increments().iter().map(|z| -z).collect();
    let flip = simulate_exact_picard_with_noise(table.clone(), ctx.params.sigma, 8, neg, ctx.seed, &cfg)?;
    for s in 0..cfg.scenarios {
        let (a, b) = (sol.system(s), flip.system(s));
        let negated = |u: &[f64], v: &[f64]| u.iter().zip(v).all(|(x, y)| *x == -*y);
        if !negated(&a.states, &b.states) || !negated(&a.controls, &b.controls) {
            failures.push(format!("exact scenario {s} not sign-equivariant"));
            break;
        }
    }

    // field oddness, monotonicity and bound on random points
    let mut g = rng::stream(ctx.seed, Domain::Validation, 0, 0);
    let (mut odd_err, mut mono_err, mut max_abs) = (0.0_f64, 0.0_f64, 0.0_f64);
    for sigma0 in [0.5, 0.2, 0.1, 0.05, 0.02] {
        let f = ViscousField::new(table.clone(), sigma0)?;
        for _ in 0..2000 {
            let t: f64 = g.random::<f64>() * table.horizon();
            let x: f64 = (g.random::<f64>() - 0.5) * 2.0;
            let y: f64 = x + g.random::<f64>() * 0.5;
            let (fx, fy) = (f.eval(t, x), f.eval(t, y));
            odd_err = odd_err.max((f.eval(t, -x) + fx).abs());
            mono_err = mono_err.max(fy - fx);
            max_abs = max_abs.max(fx.abs());
        }
    }
    if odd_err != 0.0 {
        failures.push(format!("field oddness error {odd_err:e}"));
    }
    if mono_err > 1e-10 {
        failures.push(format!("field increases by {mono_err:e}"));
    }
    if max_abs > 1.0 + 1e-12 {
        failures.push(format!("|theta| reaches {max_abs}"));
    }

    // determinism, including across worker counts
    let a = simulate_ensemble(&field, 64, ctx.seed)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(3)
        .build()
        .map_err(|e| crate::error::Error::Numeric(e.to_string()))?;
    let b = pool.install(|| simulate_ensemble(&field, 64, ctx.seed))?;
    if a.paths != b.paths {
        failures.push("ensembles differ between runs".into());
    }
    let z1 = rng::normals(ctx.seed, Domain::Particles, 3, 5, steps);
    let z2 = rng::normals(ctx.seed, Domain::Particles, 3, 5, steps);
    if z1 != z2 {
        failures.push("noise streams not reproducible".into());
    }

    Ok(CheckResult::new(
        "",
        failures.is_empty(),
        json!({ "odd_error": odd_err, "monotonicity_violation": mono_err.max(0.0), "max_abs": max_abs, "failures": failures }),
        if failures.is_empty() {
            format!("exact sign flips; oddness error {odd_err:e}; max |theta| {max_abs:.6}")
        } else {
            failures.join("; ")
        },
    ))
}
