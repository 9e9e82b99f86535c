//! Costs of the three equilibria, in closed form and by Monte Carlo.
//!
//! At the equilibrium with parameter A the representative state solves
//! dX = [(κ−η)X − A w⁻¹]dt + σ dW with control α = −ηX − A w⁻¹, so
//! E[X_t] = −A w_t k_t and Var[X_t] = w_t² σ² k_t. Plugging these into the
//! quadratic cost makes J_A = A²·(bracket)/2 + (σ² terms).

use rayon::prelude::*;

use crate::coefficients::{cumulative_simpson, CoefficientTable, ModelParams};
use crate::error::{invalid, Result};
use crate::rng::{self, Domain};

fn simpson(f: &[f64], h: f64) -> f64 {
    *cumulative_simpson(f, h).last().expect("non-empty grid")
}

/// Pointwise integrand (1+η²)w²k² − 2ηk + w⁻² of the A² bracket.
pub fn bracket_integrand(table: &CoefficientTable) -> Vec<f64> {
    (0..table.grid().len())
        .map(|i| {
            let (e, w, k) = (table.eta[i], table.w[i], table.k[i]);
            (1.0 + e * e) * w * w * k * k - 2.0 * e * k + 1.0 / (w * w)
        })
        .collect()
}

/// J_{±1} − J_0 = ½[∫(bracket) + (1 − w_T k_T)²].
pub fn selection_gap(table: &CoefficientTable) -> f64 {
    let n = table.grid().steps();
    let running = simpson(&bracket_integrand(table), table.grid().step());
    let terminal = (1.0 - table.w[n] * table.k[n]).powi(2);
    0.5 * (running + terminal)
}

/// ½w_T²σ²k_T + ½∫(1+η²)σ²w²k dt, the part of J_A that does not depend on A.
pub fn noise_cost(params: &ModelParams, table: &CoefficientTable) -> f64 {
    let n = table.grid().steps();
    let s2 = params.sigma * params.sigma;
    let f: Vec<f64> = (0..=n)
        .map(|i| (1.0 + table.eta[i] * table.eta[i]) * s2 * table.w[i] * table.w[i] * table.k[i])
        .collect();
    0.5 * table.w[n] * table.w[n] * s2 * table.k[n] + 0.5 * simpson(&f, table.grid().step())
}

/// J_A for an equilibrium parameter A (only A² enters).
pub fn cost_closed_form(a: f64, params: &ModelParams, table: &CoefficientTable) -> f64 {
    a * a * selection_gap(table) + noise_cost(params, table)
}

/// (E[X_t], Var[X_t]) at node `n` of the A-equilibrium.
pub fn mean_variance_at_equilibrium(a: f64, n: usize, params: &ModelParams, table: &CoefficientTable) -> (f64, f64) {
    let (w, k) = (table.w[n], table.k[n]);
    (-a * w * k, w * w * params.sigma * params.sigma * k)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McCost {
    pub estimate: f64,
    pub standard_error: f64,
    pub terminal_mean: f64,
    pub terminal_mean_se: f64,
    pub terminal_variance: f64,
}

/// Euler simulation of the equilibrium state with trapezoidal running cost.
/// Path i uses stream `(seed, Cost, i)` whatever A is.
pub fn cost_monte_carlo_full(
    a: f64,
    paths: usize,
    seed: u64,
    params: &ModelParams,
    table: &CoefficientTable,
) -> Result<McCost> {
    if paths < 100 {
        return invalid(format!("need at least 100 paths, got {paths}"));
    }
    let n = table.grid().steps();
    let dt = table.grid().step();
    let sq = dt.sqrt();
    let sigma = params.sigma;
    let kappa = params.kappa;
    let per_path: Vec<(f64, f64)> = (0..paths as u64)
        .into_par_iter()
        .map(|i| {
            let z = rng::normals(seed, Domain::Cost, i, 0, n);
            let mut x: f64 = 0.0;
            let mut running = 0.0;
            for j in 0..=n {
                let iw = 1.0 / table.w[j];
                let alpha = -table.eta[j] * x - a * iw;
                let weight = if j == 0 || j == n { 0.5 } else { 1.0 };
                running += weight * 0.5 * (alpha * alpha + x * x) * dt;
                if j < n {
                    x += ((kappa - table.eta[j]) * x - a * iw) * dt + sigma * sq * z[j];
                }
            }
            (running + 0.5 * (x + a) * (x + a), x)
        })
        .collect();
    let m = paths as f64;
    let mean = |f: &dyn Fn(&(f64, f64)) -> f64| per_path.iter().map(f).sum::<f64>() / m;
    let cost = mean(&|p| p.0);
    let cost_var = per_path.iter().map(|p| (p.0 - cost).powi(2)).sum::<f64>() / (m - 1.0);
    let xt = mean(&|p| p.1);
    let xt_var = per_path.iter().map(|p| (p.1 - xt).powi(2)).sum::<f64>() / (m - 1.0);
    Ok(McCost {
        estimate: cost,
        standard_error: (cost_var / m).sqrt(),
        terminal_mean: xt,
        terminal_mean_se: (xt_var / m).sqrt(),
        terminal_variance: xt_var,
    })
}

/// (estimate, standard error) of J_A.
pub fn cost_monte_carlo(
    a: f64,
    paths: usize,
    seed: u64,
    params: &ModelParams,
    table: &CoefficientTable,
) -> Result<(f64, f64)> {
    let r = cost_monte_carlo_full(a, paths, seed, params, table)?;
    Ok((r.estimate, r.standard_error))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub a: f64,
    pub estimate: f64,
    pub standard_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostReport {
    pub j_minus: f64,
    pub j_zero: f64,
    pub j_plus: f64,
    pub mc_estimates: Vec<McEstimate>,
}

impl CostReport {
    pub fn closed_form(&self, a: f64) -> f64 {
        if a < 0.0 {
            self.j_minus
        } else if a > 0.0 {
            self.j_plus
        } else {
            self.j_zero
        }
    }
}

/// Closed forms for A ∈ {−1, 0, 1}, plus Monte Carlo when `paths > 0`.
pub fn cost_report(params: &ModelParams, table: &CoefficientTable, paths: usize, seed: u64) -> Result<CostReport> {
    let mut mc_estimates = Vec::new();
    if paths > 0 {
        for a in [-1.0, 0.0, 1.0] {
            let (estimate, standard_error) = cost_monte_carlo(a, paths, seed, params, table)?;
            mc_estimates.push(McEstimate { a, estimate, standard_error });
        }
    }
    Ok(CostReport {
        j_minus: cost_closed_form(-1.0, params, table),
        j_zero: cost_closed_form(0.0, params, table),
        j_plus: cost_closed_form(1.0, params, table),
        mc_estimates,
    })
}
