//! The common-noise mean process and its selection statistics.
//!
//! μ_{n+1} = μ_n − w_n⁻² θ(t_n, μ_n) Δt + σ₀ w_n⁻¹ √Δt ξ_n, with ξ drawn
//! from the stream `(seed, CommonNoise, path index, 0)`.

use std::sync::Arc;

use rayon::prelude::*;

use crate::coefficients::CoefficientTable;
use crate::decoupling_field::{ViscousField, MIN_FIELD_SIGMA0};
use crate::error::{invalid, numeric, Result};
use crate::fields::{sign, EntropyField};
use crate::rng::{self, Domain};

/// A field the simulators can query at grid nodes.
pub trait DriftField: Sync {
    fn at_node(&self, n: usize, x: f64) -> f64;
}

impl DriftField for ViscousField {
    fn at_node(&self, n: usize, x: f64) -> f64 {
        ViscousField::at_node(self, n, x)
    }
}

impl DriftField for EntropyField {
    fn at_node(&self, n: usize, x: f64) -> f64 {
        let table = self.table();
        if n <= table.grid().delta_index() {
            -sign(x)
        } else {
            self.eval_with_r(table.r[n], x)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdePath {
    pub values: Vec<f64>,
    /// Master seed of the ensemble.
    pub seed: u64,
    /// Position in the ensemble; selects the noise stream.
    pub index: u64,
    /// The standard normal draws ξ_n that drove the path.
    pub noise: Vec<f64>,
}

/// Euler–Maruyama driven by the given standard normal draws.
pub fn simulate_with_noise<F: DriftField + ?Sized>(
    table: &CoefficientTable,
    field: &F,
    sigma0: f64,
    start: f64,
    noise: &[f64],
) -> Result<Vec<f64>> {
    let steps = table.grid().steps();
    if noise.len() < steps {
        return invalid(format!("need {steps} noise draws, got {}", noise.len()));
    }
    let dt = table.grid().step();
    let sq = dt.sqrt();
    let mut mu = Vec::with_capacity(steps + 1);
    mu.push(start);
    let mut x = start;
    for n in 0..steps {
        let iw = 1.0 / table.w[n];
        x = x - iw * iw * field.at_node(n, x) * dt + sigma0 * iw * sq * noise[n];
        if !x.is_finite() {
            return numeric(format!("state became non-finite at step {n}"));
        }
        mu.push(x);
    }
    Ok(mu)
}

/// One path of the mean process from its own noise stream.
pub fn simulate_mu<F: DriftField + ?Sized>(
    table: &CoefficientTable,
    field: &F,
    sigma0: f64,
    seed: u64,
    index: u64,
) -> Result<SdePath> {
    let noise = rng::normals(seed, Domain::CommonNoise, index, 0, table.grid().steps());
    let values = simulate_with_noise(table, field, sigma0, 0.0, &noise)?;
    Ok(SdePath { values, seed, index, noise })
}

#[derive(Debug, Clone)]
pub struct PathEnsemble {
    pub table: Arc<CoefficientTable>,
    pub sigma0: f64,
    pub seed: u64,
    pub paths: Vec<SdePath>,
}

/// `paths` independent paths of the viscous dynamics, in index order.
pub fn simulate_ensemble(field: &ViscousField, paths: usize, seed: u64) -> Result<PathEnsemble> {
    let sigma0 = field.sigma0();
    if sigma0 < MIN_FIELD_SIGMA0 {
        return invalid(format!("sigma0 = {sigma0} is below the field floor {MIN_FIELD_SIGMA0}"));
    }
    let table = field.table().clone();
    let out: Result<Vec<SdePath>> = (0..paths as u64)
        .into_par_iter()
        .map(|i| simulate_mu(&table, field, sigma0, seed, i))
        .collect();
    Ok(PathEnsemble { table, sigma0, seed, paths: out? })
}

/// Largest excess of |μ_n| over Σ_{j<n} w_j⁻²Δt + |σ₀ Σ_{j<n} w_j⁻¹√Δt ξ_j|.
/// Non-positive whenever the drift field is bounded by one.
pub fn drift_envelope_excess(path: &SdePath, table: &CoefficientTable, sigma0: f64) -> f64 {
    let dt = table.grid().step();
    let sq = dt.sqrt();
    let (mut clock, mut noise): (f64, f64) = (0.0, 0.0);
    let mut worst = f64::NEG_INFINITY;
    for (n, mu) in path.values.iter().enumerate() {
        worst = worst.max(mu.abs() - clock - noise.abs());
        if n < path.noise.len() && n < table.w.len() - 1 {
            let iw = 1.0 / table.w[n];
            clock += iw * iw * dt;
            noise += sigma0 * iw * sq * path.noise[n];
        }
    }
    worst
}

/// (ε₀, t₀) = (σ₀²L², σ₀) with L = |ln σ₀|^p.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionPoint {
    pub sigma0: f64,
    pub epsilon0: f64,
    pub t0: f64,
    pub l: f64,
}

/// Default exponent p in L(σ₀) = |ln σ₀|^p.
pub const L_EXPONENT: f64 = 1.0 / 9.0;

impl TransitionPoint {
    pub fn new(sigma0: f64, exponent: f64) -> Result<Self> {
        if !(sigma0 > 0.0 && sigma0 < 1.0) {
            return invalid(format!("transition point needs 0 < sigma0 < 1, got {sigma0}"));
        }
        let l = sigma0.ln().abs().powf(exponent);
        Ok(Self { sigma0, epsilon0: sigma0 * sigma0 * l * l, t0: sigma0, l })
    }

    pub fn standard(sigma0: f64) -> Result<Self> {
        Self::new(sigma0, L_EXPONENT)
    }
}

/// First node with |μ| > ε₀.
pub fn tau_epsilon_index(values: &[f64], epsilon0: f64) -> Option<usize> {
    values.iter().position(|v| v.abs() > epsilon0)
}

/// Time of the first node with |μ| > ε₀, or T.
pub fn tau_epsilon(values: &[f64], table: &CoefficientTable, epsilon0: f64) -> f64 {
    match tau_epsilon_index(values, epsilon0) {
        Some(i) => table.grid().nodes()[i],
        None => table.horizon(),
    }
}

/// First time after τ_{ε₀} at which side·μ drops below
/// σ₀²L + (1−γ)∫_{τ}^t w⁻², or T if that never happens.
pub fn tau_gamma_escape(
    values: &[f64],
    table: &CoefficientTable,
    gamma: f64,
    transition: &TransitionPoint,
    side: f64,
) -> Result<f64> {
    let c_delta = table.c_delta();
    if !(gamma > 0.0 && gamma < c_delta) {
        return invalid(format!("gamma must lie in (0, c_delta) = (0, {c_delta}), got {gamma}"));
    }
    if side != 1.0 && side != -1.0 {
        return invalid("side must be +1 or -1");
    }
    let nodes = table.grid().nodes();
    let Some(start) = tau_epsilon_index(values, transition.epsilon0) else {
        return Ok(table.horizon());
    };
    let floor = transition.sigma0 * transition.sigma0 * transition.l;
    for n in start..values.len() {
        let envelope = floor + (1.0 - gamma) * (table.k[n] - table.k[start]);
        if side * values[n] < envelope {
            return Ok(nodes[n]);
        }
    }
    Ok(table.horizon())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathClass {
    Plus,
    Minus,
    Unclassified,
}

impl PathClass {
    pub fn label(self) -> &'static str {
        match self {
            PathClass::Plus => "plus",
            PathClass::Minus => "minus",
            PathClass::Unclassified => "unclassified",
        }
    }
}

/// "+k" if sup over [δ, T] of |μ − k| is within tolerance, "−k" mirrored.
pub fn classify(values: &[f64], table: &CoefficientTable, tolerance: f64) -> PathClass {
    let from = table.grid().delta_index();
    let dist = |s: f64| {
        values[from..]
            .iter()
            .zip(&table.k[from..])
            .map(|(v, k)| (v - s * k).abs())
            .fold(0.0, f64::max)
    };
    if dist(1.0) <= tolerance {
        PathClass::Plus
    } else if dist(-1.0) <= tolerance {
        PathClass::Minus
    } else {
        PathClass::Unclassified
    }
}

/// Quantile levels reported for hitting times.
pub const HITTING_LEVELS: [f64; 3] = [0.1, 0.5, 0.9];

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionReport {
    pub n_plus: usize,
    pub n_minus: usize,
    pub n_unclassified: usize,
    pub frac_plus: f64,
    pub frac_minus: f64,
    pub frac_unclassified: f64,
    pub se_plus: f64,
    pub se_minus: f64,
    pub se_unclassified: f64,
    /// τ_{ε₀} quantiles at [`HITTING_LEVELS`]; empty without a transition point.
    pub hitting_time_quantiles: Vec<f64>,
    pub tolerance: f64,
}

impl SelectionReport {
    pub fn total(&self) -> usize {
        self.n_plus + self.n_minus + self.n_unclassified
    }
}

/// Binomial standard error of a fraction p over n trials.
pub fn binomial_se(p: f64, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    (p * (1.0 - p) / n as f64).sqrt()
}

/// Empirical quantile by the nearest-rank rule.
pub fn quantile(sorted: &[f64], level: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let rank = (level * sorted.len() as f64).ceil().max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1]
}

pub fn selection_from_paths<'a, I>(
    paths: I,
    table: &CoefficientTable,
    tolerance: f64,
    transition: Option<&TransitionPoint>,
) -> Result<SelectionReport>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    if !(tolerance > 0.0) {
        return invalid("tolerance must be positive");
    }
    let (mut plus, mut minus, mut none) = (0usize, 0usize, 0usize);
    let mut taus = Vec::new();
    for values in paths {
        match classify(values, table, tolerance) {
            PathClass::Plus => plus += 1,
            PathClass::Minus => minus += 1,
            PathClass::Unclassified => none += 1,
        }
        if let Some(tp) = transition {
            taus.push(tau_epsilon(values, table, tp.epsilon0));
        }
    }
    let total = plus + minus + none;
    let frac = |c: usize| if total == 0 { 0.0 } else { c as f64 / total as f64 };
    taus.sort_by(f64::total_cmp);
    let hitting_time_quantiles = if taus.is_empty() {
        Vec::new()
    } else {
        HITTING_LEVELS.iter().map(|&q| quantile(&taus, q)).collect()
    };
    Ok(SelectionReport {
        n_plus: plus,
        n_minus: minus,
        n_unclassified: none,
        frac_plus: frac(plus),
        frac_minus: frac(minus),
        frac_unclassified: frac(none),
        se_plus: binomial_se(frac(plus), total),
        se_minus: binomial_se(frac(minus), total),
        se_unclassified: binomial_se(frac(none), total),
        hitting_time_quantiles,
        tolerance,
    })
}

pub fn selection_stats(ensemble: &PathEnsemble, tolerance: f64) -> Result<SelectionReport> {
    let tp = if ensemble.sigma0 > 0.0 && ensemble.sigma0 < 1.0 {
        Some(TransitionPoint::standard(ensemble.sigma0)?)
    } else {
        None
    };
    selection_from_paths(
        ensemble.paths.iter().map(|p| p.values.as_slice()),
        &ensemble.table,
        tolerance,
        tp.as_ref(),
    )
}

/// Hitting and escape statistics of an ensemble at its transition point.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionStats {
    pub paths: usize,
    /// Paths with τ_{ε₀} > the probe time.
    pub late: usize,
    pub probe_time: f64,
    /// Paths whose first exit of [−ε₀, ε₀] is upward.
    pub plus_hitters: usize,
    /// Among those, paths that later leave the escape envelope before T.
    pub escape_violations: usize,
    pub gamma: f64,
}

impl TransitionStats {
    pub fn late_fraction(&self) -> f64 {
        self.late as f64 / self.paths.max(1) as f64
    }

    pub fn violation_fraction(&self) -> f64 {
        self.escape_violations as f64 / self.plus_hitters.max(1) as f64
    }
}

pub fn transition_stats(
    ensemble: &PathEnsemble,
    transition: &TransitionPoint,
    gamma: f64,
    probe_time: f64,
) -> Result<TransitionStats> {
    let table = &ensemble.table;
    let horizon = table.horizon();
    let (mut late, mut hitters, mut violations) = (0, 0, 0);
    for p in &ensemble.paths {
        let v = &p.values;
        if tau_epsilon(v, table, transition.epsilon0) > probe_time {
            late += 1;
        }
        if let Some(i) = tau_epsilon_index(v, transition.epsilon0) {
            if v[i] > 0.0 {
                hitters += 1;
                if tau_gamma_escape(v, table, gamma, transition, 1.0)? < horizon {
                    violations += 1;
                }
            }
        }
    }
    Ok(TransitionStats {
        paths: ensemble.paths.len(),
        late,
        probe_time,
        plus_hitters: hitters,
        escape_violations: violations,
        gamma,
    })
}

/// Constant in the qualitative lower bound exp(−c·k̄ − c·a²/k̄)/c,
/// chosen once from a pilot run and then frozen.
pub const HITTING_BOUND_C: f64 = 4.0;

const HITTING_STEPS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HittingCheck {
    pub a: f64,
    pub clock: f64,
    pub estimate: f64,
    pub standard_error: f64,
    pub bound: f64,
}

impl HittingCheck {
    pub fn holds(&self) -> bool {
        self.estimate > self.bound
    }
}

/// Probability that dX = −sign(X)dt + dB, X₀ = 0, reaches |X| ≥ a before
/// the clock k̄. The drift always pulls toward zero, the least favourable
/// bounded choice. Paths depend only on the seed, so calls with different
/// `a` and the same seed are coupled.
pub fn hitting_lower_bound_check(a: f64, clock: f64, paths: usize, seed: u64) -> Result<HittingCheck> {
    if !(a >= 1.0) {
        return invalid(format!("a must be at least 1, got {a}"));
    }
    if !(clock > 0.0) || paths == 0 {
        return invalid("clock must be positive and paths non-zero");
    }
    let dt = clock / HITTING_STEPS as f64;
    let sq = dt.sqrt();
    let hits: usize = (0..paths as u64)
        .into_par_iter()
        .map(|i| {
            let mut g = rng::stream(seed, Domain::Hitting, i, 0);
            let mut x: f64 = 0.0;
            for _ in 0..HITTING_STEPS {
                let z: f64 = rand::RngExt::sample(&mut g, rand_distr::StandardNormal);
                x += -sign(x) * dt + sq * z;
                if x.abs() >= a {
                    return 1;
                }
            }
            0
        })
        .sum();
    let estimate = hits as f64 / paths as f64;
    let c = HITTING_BOUND_C;
    Ok(HittingCheck {
        a,
        clock,
        estimate,
        standard_error: binomial_se(estimate, paths),
        bound: (-c * clock - c * a * a / clock).exp() / c,
    })
}
