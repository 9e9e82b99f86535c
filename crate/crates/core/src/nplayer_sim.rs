//! The N-player system, simulated two ways.
//!
//! States are kept rescaled, U^i = w⁻¹X^i, so that
//! dU^i = −w⁻²P^i dt + σw⁻¹dW^i with P^i = wV^i ∈ [−1, 1]. Particle i of
//! run r draws its Brownian increments from stream `(seed, Particles, r, i)`.
//!
//! * The aggregate reduction replaces the mean of the P^i by the viscous
//!   field θ^{σ/√N} and drives the mean with ζ = N^{-1/2}Σξ^i.
//! * The exact solver iterates a Picard map on the feedback
//!   P^i_t ≈ E[g(μ̃^{i,N}_T) | F_t], estimated by least squares on
//!   (μ̃^{i,N}_t, U^i_t) pooled over all particles of a batch of independent
//!   scenarios. A single scenario cannot be used on its own: within it
//!   μ̃^{i,N} is an affine function of U^i, and its cross-section at time t
//!   does not carry the conditional law given F_t.
//!
//! The regression targets carry a control variate: the sum of the later
//! noise increments weighted by the gradient of the current fits. It has
//! zero conditional mean, so the regression function is unchanged, but it
//! removes most of the variance of the ±1 payoff. Once the plain iteration
//! is close, the control variate is switched on, ramp widths are frozen and
//! the damping decays like 1/k, which averages out the remaining jitter
//! between passes.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coefficients::CoefficientTable;
use crate::decoupling_field::{ViscousField, MIN_FIELD_SIGMA0};
use crate::error::{invalid, Result};
use crate::fields::g_eval;
use crate::mfg_sim::{selection_from_paths, simulate_with_noise, SelectionReport};
use crate::rng::{self, Domain};

/// γ_N = N^{−1/4}.
pub fn gamma_n(n: usize) -> f64 {
    (n as f64).powf(-0.25)
}

/// ℓ_N = |ln N|^{1/9}.
pub fn ell_n(n: usize) -> f64 {
    (n as f64).ln().abs().powf(1.0 / 9.0)
}

/// ζ_n = N^{-1/2} Σ_i ξ^i_n, summed in lane order.
pub fn aggregated_noise(seed: u64, run: u64, lanes: &[u64], steps: usize) -> Vec<f64> {
    let mut acc = vec![0.0; steps];
    let mut buf = vec![0.0; steps];
    for &lane in lanes {
        rng::fill_normals(seed, Domain::Particles, run, lane, &mut buf);
        for (a, b) in acc.iter_mut().zip(&buf) {
            *a += b;
        }
    }
    normalise_sum(&mut acc, lanes.len());
    acc
}

fn normalise_sum(acc: &mut [f64], n: usize) {
    let root = (n as f64).sqrt();
    for a in acc.iter_mut() {
        *a /= root;
    }
}

fn default_lanes(n: usize) -> Vec<u64> {
    (0..n as u64).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregatePath {
    pub mu_hat: Vec<f64>,
    /// ζ_n, standard normal in law.
    pub increments: Vec<f64>,
    pub players: usize,
    pub seed: u64,
    pub run: u64,
}

/// The mean dynamics with common noise σ/√N, reusable across runs.
#[derive(Debug, Clone)]
pub struct AggregateModel {
    players: usize,
    field: ViscousField,
}

impl AggregateModel {
    pub fn new(table: Arc<CoefficientTable>, sigma: f64, players: usize) -> Result<Self> {
        if players < 2 {
            return invalid("need at least two players");
        }
        let sigma0 = sigma / (players as f64).sqrt();
        if sigma0 < MIN_FIELD_SIGMA0 {
            let cap = (sigma / MIN_FIELD_SIGMA0).powi(2).floor();
            return invalid(format!(
                "sigma/sqrt(N) = {sigma0} is below the field floor {MIN_FIELD_SIGMA0}; N must be at most {cap}"
            ));
        }
        Ok(Self { players, field: ViscousField::new(table, sigma0)? })
    }

    pub fn sigma0(&self) -> f64 {
        self.field.sigma0()
    }

    pub fn field(&self) -> &ViscousField {
        &self.field
    }

    pub fn players(&self) -> usize {
        self.players
    }

    /// Mean path driven by the given ζ.
    pub fn run_with_noise(&self, zeta: &[f64]) -> Result<Vec<f64>> {
        simulate_with_noise(self.field.table(), &self.field, self.sigma0(), 0.0, zeta)
    }

    pub fn simulate(&self, seed: u64, run: u64) -> Result<AggregatePath> {
        let steps = self.field.table().grid().steps();
        let increments = aggregated_noise(seed, run, &default_lanes(self.players), steps);
        let mu_hat = self.run_with_noise(&increments)?;
        Ok(AggregatePath { mu_hat, increments, players: self.players, seed, run })
    }
}

pub fn simulate_aggregate(table: Arc<CoefficientTable>, sigma: f64, players: usize, seed: u64, run: u64) -> Result<AggregatePath> {
    AggregateModel::new(table, sigma, players)?.simulate(seed, run)
}

/// Settings of the exact solver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PicardConfig {
    pub max_iterations: usize,
    /// Weight of the fresh regression in each update, in (0, 1].
    pub damping: f64,
    /// Largest total degree of the odd polynomial basis in (μ̃^{i,N}, U^i).
    pub degree: usize,
    /// Number of ramp features clamp(m/h) added to the polynomial basis.
    pub ramps: usize,
    /// Subtract the martingale control variate from the regression targets.
    pub control_variate: bool,
    /// Stop once the largest change of V over nodes and particles is below this.
    pub tolerance: f64,
    /// Independent scenarios pooled in the regression.
    pub scenarios: usize,
    pub max_players: usize,
}

impl Default for PicardConfig {
    fn default() -> Self {
        Self {
            max_iterations: 80,
            damping: 0.5,
            degree: 3,
            ramps: 6,
            control_variate: true,
            tolerance: 1e-3,
            scenarios: 160,
            max_players: 256,
        }
    }
}

impl PicardConfig {
    pub fn validate(&self, players: usize) -> Result<()> {
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return invalid(format!("damping must lie in (0, 1], got {}", self.damping));
        }
        if !(self.tolerance > 0.0) {
            return invalid("Picard tolerance must be positive");
        }
        if self.degree == 0 || self.degree > MAX_DEGREE {
            return invalid(format!("basis degree must lie in 1..={MAX_DEGREE}"));
        }
        if self.ramps > MAX_RAMPS {
            return invalid(format!("at most {MAX_RAMPS} ramp features"));
        }
        if self.max_iterations == 0 || self.scenarios < 2 {
            return invalid("need at least one iteration and two scenarios");
        }
        if players < 2 || players > self.max_players {
            return invalid(format!("exact solver needs 2 <= N <= {}, got {players}", self.max_players));
        }
        Ok(())
    }
}

const MAX_DEGREE: usize = 5;
/// The control variate is switched on once the change drops below this
/// multiple of the tolerance.
const PRESOLVE_FACTOR: f64 = 20.0;
const SETTLE_STEPS: f64 = 5.0;
/// Bound on the control-variate slope in m, in units of 1/r_δ.
const GRADIENT_CLIP: f64 = 1.0;
const MAX_RAMPS: usize = 8;
const MAX_BASIS: usize = 12 + MAX_RAMPS;

fn poly_len(degree: usize) -> usize {
    let h = (degree + 1) / 2;
    h * (h + 1)
}

/// Odd monomials m^a u^b with a + b ≤ degree, by increasing total degree,
/// then odd ramps clamp(m/h, −1, 1), one per width. The feedback is odd in
/// (μ̃^{i,N}, U^i) because flipping every increment flips the whole system,
/// so even terms would only fit noise. The ramps span odd piecewise-linear
/// functions of m, which follow the near-sign profile the feedback takes
/// once σ/√N is small.
fn basis(m: f64, u: f64, degree: usize, widths: &[f64], out: &mut [f64; MAX_BASIS]) {
    let mut pm = [1.0; MAX_DEGREE + 1];
    let mut pu = [1.0; MAX_DEGREE + 1];
    for d in 1..=degree {
        pm[d] = pm[d - 1] * m;
        pu[d] = pu[d - 1] * u;
    }
    let mut j = 0;
    for total in (1..=degree).step_by(2) {
        for b in 0..=total {
            out[j] = pm[total - b] * pu[b];
            j += 1;
        }
    }
    for h in widths {
        out[j] = (m / h).clamp(-1.0, 1.0);
        j += 1;
    }
}

/// Fitted feedback at one node.
#[derive(Debug, Clone, Copy, PartialEq)]
struct NodeFit {
    degree: usize,
    ramps: usize,
    /// Ramp widths, in units of the scaled m.
    widths: [f64; MAX_RAMPS],
    scale: [f64; 2],
    coef: [f64; MAX_BASIS],
}

impl NodeFit {
    const ZERO: NodeFit = NodeFit { degree: 0, ramps: 0, widths: [1.0; MAX_RAMPS], scale: [1.0; 2], coef: [0.0; MAX_BASIS] };

    fn raw(&self, m: f64, u: f64) -> f64 {
        let mut b = [0.0; MAX_BASIS];
        basis(m / self.scale[0], u / self.scale[1], self.degree, &self.widths[..self.ramps], &mut b);
        let mut s = 0.0;
        for j in 0..poly_len(self.degree) + self.ramps {
            s += self.coef[j] * b[j];
        }
        s
    }

    fn value(&self, m: f64, u: f64) -> f64 {
        self.raw(m, u).clamp(-1.0, 1.0)
    }

    /// Gradient of `value` in (m, u); zero where the clamp is active.
    fn gradient(&self, m: f64, u: f64) -> (f64, f64) {
        if self.raw(m, u).abs() >= 1.0 {
            return (0.0, 0.0);
        }
        let (x, y) = (m / self.scale[0], u / self.scale[1]);
        let mut pm = [1.0; MAX_DEGREE + 1];
        let mut pu = [1.0; MAX_DEGREE + 1];
        for d in 1..=self.degree {
            pm[d] = pm[d - 1] * x;
            pu[d] = pu[d - 1] * y;
        }
        let (mut gx, mut gy) = (0.0, 0.0);
        let mut j = 0;
        for total in (1..=self.degree).step_by(2) {
            for b in 0..=total {
                let a = total - b;
                if a > 0 {
                    gx += self.coef[j] * a as f64 * pm[a - 1] * pu[b];
                }
                if b > 0 {
                    gy += self.coef[j] * b as f64 * pm[a] * pu[b - 1];
                }
                j += 1;
            }
        }
        for h in &self.widths[..self.ramps] {
            if x.abs() < *h {
                gx += self.coef[j] / h;
            }
            j += 1;
        }
        (gx / self.scale[0], gy / self.scale[1])
    }
}

fn leave_one_out(sum: f64, own: f64, n: usize) -> f64 {
    (sum - own) / (n - 1) as f64
}

/// Least squares of `y` on the odd basis in (m, u) scaled to unit RMS, with
/// ramp widths at the quantiles j/(ramps+1) of |m|. While the normal matrix
/// is numerically singular the ramps are dropped first, then the polynomial
/// degree is lowered.
fn fit_node(
    m: &[f64],
    u: &[f64],
    y: &[f64],
    degree: usize,
    ramps: usize,
    fixed: Option<&NodeFit>,
) -> (NodeFit, bool) {
    let k = y.len() as f64;
    let rms = |v: &[f64]| (v.iter().map(|x| x * x).sum::<f64>() / k).sqrt();
    let scale = [rms(m), rms(u)];
    if !(scale[0] > 1e-14 && scale[1] > 1e-14) {
        // every state at the origin, where an odd feedback vanishes
        return (NodeFit::ZERO, false);
    }
    let mut widths = [1.0; MAX_RAMPS];
    if let Some(f) = fixed.filter(|f| f.ramps == ramps) {
        widths = f.widths;
    } else if ramps > 0 {
        let mut abs: Vec<f64> = m.iter().map(|v| v.abs() / scale[0]).collect();
        for (j, w) in widths[..ramps].iter_mut().enumerate() {
            let rank = ((j + 1) * abs.len() / (ramps + 1)).min(abs.len() - 1);
            *w = *abs.select_nth_unstable_by(rank, f64::total_cmp).1;
        }
    }
    let mut fell_back = false;
    let (mut d, mut r) = (degree, ramps);
    while d >= 1 {
        let p = poly_len(d) + r;
        let mut design = DMatrix::<f64>::zeros(y.len(), p);
        let mut b = [0.0; MAX_BASIS];
        for j in 0..y.len() {
            basis(m[j] / scale[0], u[j] / scale[1], d, &widths[..r], &mut b);
            for c in 0..p {
                design[(j, c)] = b[c];
            }
        }
        let ata = design.tr_mul(&design);
        let atb = design.tr_mul(&DVector::from_column_slice(y));
        let diag_max = (0..p).map(|i| ata[(i, i)]).fold(0.0, f64::max);
        if let Some(ch) = ata.cholesky() {
            let l = ch.l_dirty();
            let pivot_min = (0..p).map(|i| l[(i, i)] * l[(i, i)]).fold(f64::INFINITY, f64::min);
            if pivot_min > 1e-12 * diag_max {
                let sol = ch.solve(&atb);
                let mut coef = [0.0; MAX_BASIS];
                coef[..p].copy_from_slice(sol.as_slice());
                return (NodeFit { degree: d, ramps: r, widths, scale, coef }, fell_back);
            }
        }
        fell_back = true;
        if r > 0 {
            r = 0;
        } else {
            d = d.saturating_sub(2);
        }
    }
    (NodeFit::ZERO, true)
}

/// One scenario of the exact solver, in the original (unscaled) variables.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleSystem {
    pub players: usize,
    /// X^i_t, node-major: `states[node * players + i]`.
    pub states: Vec<f64>,
    /// V^i_t, same layout.
    pub controls: Vec<f64>,
    /// Standard normal draws ξ^i_n with dW^i = √Δt ξ^i_n, same layout over steps.
    pub increments: Vec<f64>,
    pub seed: u64,
    pub run: u64,
}

impl ParticleSystem {
    pub fn nodes(&self) -> usize {
        self.states.len() / self.players
    }

    pub fn state(&self, node: usize, i: usize) -> f64 {
        self.states[node * self.players + i]
    }

    pub fn control(&self, node: usize, i: usize) -> f64 {
        self.controls[node * self.players + i]
    }

    pub fn mean(&self, node: usize) -> f64 {
        self.states[node * self.players..(node + 1) * self.players].iter().sum::<f64>() / self.players as f64
    }
}

/// (N·mean − X^i)/(N − 1).
pub fn leave_one_out_mean(system: &ParticleSystem, i: usize, node: usize) -> Result<f64> {
    let n = system.players;
    if n < 2 {
        return invalid("leave-one-out mean needs N >= 2");
    }
    if i >= n || node >= system.nodes() {
        return invalid("particle or node index out of range");
    }
    Ok((n as f64 * system.mean(node) - system.state(node, i)) / (n - 1) as f64)
}

/// Output of the exact solver for a batch of scenarios.
#[derive(Debug, Clone)]
pub struct ExactSolution {
    table: Arc<CoefficientTable>,
    players: usize,
    scenarios: usize,
    seed: u64,
    /// Rescaled states, `u[(node * scenarios + s) * players + i]`.
    u: Vec<f64>,
    noise: Vec<f64>,
    fits: Vec<NodeFit>,
    pub iterations: usize,
    pub converged: bool,
    /// Largest change of V over nodes and particles in the last update.
    pub final_change: f64,
    /// Whether some node had to lower its basis degree.
    pub rank_fallback: bool,
}

impl ExactSolution {
    pub fn players(&self) -> usize {
        self.players
    }

    pub fn scenarios(&self) -> usize {
        self.scenarios
    }

    /// All draws, laid out as `[(step * scenarios + s) * players + i]`.
    pub fn increments(&self) -> &[f64] {
        &self.noise
    }

    fn block(&self, node: usize, s: usize) -> &[f64] {
        let start = (node * self.scenarios + s) * self.players;
        &self.u[start..start + self.players]
    }

    /// μ̃^N_t of scenario s at every node.
    pub fn mean_path(&self, s: usize) -> Vec<f64> {
        let nodes = self.table.grid().len();
        (0..nodes).map(|n| self.block(n, s).iter().sum::<f64>() / self.players as f64).collect()
    }

    /// w_t P^i_t: the fitted feedback, or the exact target at T.
    pub fn feedback(&self, node: usize, s: usize, i: usize) -> f64 {
        let block = self.block(node, s);
        let sum: f64 = block.iter().sum();
        let m = leave_one_out(sum, block[i], self.players);
        if node == self.table.grid().steps() {
            g_eval(m, self.table.r_delta)
        } else {
            self.fits[node].value(m, block[i])
        }
    }

    /// v^N_t = (1/N)Σ_i w_t V^i_t along scenario s.
    pub fn mean_feedback(&self, s: usize) -> Vec<f64> {
        let nodes = self.table.grid().len();
        (0..nodes)
            .map(|n| (0..self.players).map(|i| self.feedback(n, s, i)).sum::<f64>() / self.players as f64)
            .collect()
    }

    /// g(μ̃^{i,N}_T) for every particle of scenario s.
    pub fn targets(&self, s: usize) -> Vec<f64> {
        let last = self.table.grid().steps();
        let block = self.block(last, s);
        let sum: f64 = block.iter().sum();
        block.iter().map(|&x| g_eval(leave_one_out(sum, x, self.players), self.table.r_delta)).collect()
    }

    /// ζ for scenario s, identical to what the aggregate model draws for run s.
    pub fn aggregated_noise(&self, s: usize) -> Vec<f64> {
        let steps = self.table.grid().steps();
        let mut acc = vec![0.0; steps];
        for (n, a) in acc.iter_mut().enumerate() {
            let start = (n * self.scenarios + s) * self.players;
            for x in &self.noise[start..start + self.players] {
                *a += x;
            }
        }
        normalise_sum(&mut acc, self.players);
        acc
    }

    pub fn system(&self, s: usize) -> ParticleSystem {
        let nodes = self.table.grid().len();
        let n = self.players;
        let mut states = Vec::with_capacity(nodes * n);
        let mut controls = Vec::with_capacity(nodes * n);
        for node in 0..nodes {
            let w = self.table.w[node];
            for (i, u) in self.block(node, s).iter().enumerate() {
                states.push(w * u);
                controls.push(self.feedback(node, s, i) / w);
            }
        }
        let mut increments = Vec::with_capacity((nodes - 1) * n);
        for node in 0..nodes - 1 {
            let start = (node * self.scenarios + s) * n;
            increments.extend_from_slice(&self.noise[start..start + n]);
        }
        ParticleSystem { players: n, states, controls, increments, seed: self.seed, run: s as u64 }
    }
}

/// Exact solver with particle i using lane i.
pub fn simulate_exact_picard(
    table: Arc<CoefficientTable>,
    sigma: f64,
    players: usize,
    seed: u64,
    config: &PicardConfig,
) -> Result<ExactSolution> {
    simulate_exact_picard_with_lanes(table, sigma, &default_lanes(players), seed, config)
}

/// Exact solver with particle i drawing from lane `lanes[i]`.
pub fn simulate_exact_picard_with_lanes(
    table: Arc<CoefficientTable>,
    sigma: f64,
    lanes: &[u64],
    seed: u64,
    config: &PicardConfig,
) -> Result<ExactSolution> {
    let n = lanes.len();
    config.validate(n)?;
    let scen = config.scenarios;
    let steps = table.grid().steps();
    let width = scen * n;
    let mut noise = vec![0.0; steps * width];
    let mut buf = vec![0.0; steps];
    for s in 0..scen {
        for (i, &lane) in lanes.iter().enumerate() {
            rng::fill_normals(seed, Domain::Particles, s as u64, lane, &mut buf);
            for (step, z) in buf.iter().enumerate() {
                noise[step * width + s * n + i] = *z;
            }
        }
    }
    simulate_exact_picard_with_noise(table, sigma, n, noise, seed, config)
}

/// Exact solver driven by given standard normal draws, laid out as
/// `noise[(step * scenarios + s) * players + i]`.
pub fn simulate_exact_picard_with_noise(
    table: Arc<CoefficientTable>,
    sigma: f64,
    players: usize,
    noise: Vec<f64>,
    seed: u64,
    config: &PicardConfig,
) -> Result<ExactSolution> {
    let n = players;
    config.validate(n)?;
    let scen = config.scenarios;
    let steps = table.grid().steps();
    let nodes = steps + 1;
    let width = scen * n;
    if noise.len() != steps * width {
        return invalid(format!("expected {} noise draws, got {}", steps * width, noise.len()));
    }

    let mut sol = ExactSolution {
        table: table.clone(),
        players: n,
        scenarios: scen,
        seed,
        u: vec![0.0; nodes * width],
        noise,
        fits: vec![NodeFit::ZERO; steps],
        iterations: 0,
        converged: false,
        final_change: f64::INFINITY,
        rank_fallback: false,
    };

    let forward = |sol: &mut ExactSolution| {
        let dt = table.grid().step();
        let sq = dt.sqrt();
        for step in 0..steps {
            let iw = 1.0 / table.w[step];
            let (head, tail) = sol.u.split_at_mut((step + 1) * width);
            let now = &head[step * width..];
            let next = &mut tail[..width];
            let fit = &sol.fits[step];
            let z = &sol.noise[step * width..(step + 1) * width];
            for s in 0..scen {
                let block = &now[s * n..(s + 1) * n];
                let sum: f64 = block.iter().sum();
                for i in 0..n {
                    let u = block[i];
                    let p = fit.value(leave_one_out(sum, u, n), u);
                    next[s * n + i] = u - iw * iw * p * dt + sigma * iw * sq * z[s * n + i];
                }
            }
        }
    };

    let dt = table.grid().step();
    forward(&mut sol);
    // fits frozen once the plain iteration is close; they fix the ramp widths
    let mut reference: Option<Vec<NodeFit>> = None;
    let mut settled = 0;
    for iteration in 1..=config.max_iterations {
        // diminishing steps once settled average out the regression jitter
        let rho = config.damping * SETTLE_STEPS / (SETTLE_STEPS + settled as f64);
        let mut payoff = Vec::with_capacity(width);
        for s in 0..scen {
            payoff.extend(sol.targets(s));
        }
        // Σ_{k ≥ step} ∇P_{k+1}(X_k)·(noise at k), built backwards from T with
        // the current fits. Each term has zero mean given F_k, so subtracting
        // the sum from the payoff leaves the regression function unchanged.
        let mut carry = vec![0.0; width];
        let mut results = Vec::with_capacity(steps);
        for step in (0..steps).rev() {
            let old = &sol.fits[step];
            let next = (step + 1 < steps).then(|| &sol.fits[step + 1]);
            let noise_scale = sigma * dt.sqrt() / table.w[step];
            let z = &sol.noise[step * width..(step + 1) * width];
            let mut ms = Vec::with_capacity(width);
            let mut us = Vec::with_capacity(width);
            for s in 0..scen {
                let block = sol.block(step, s);
                let sum: f64 = block.iter().sum();
                let zs = &z[s * n..(s + 1) * n];
                let zsum: f64 = zs.iter().sum();
                for (i, &u) in block.iter().enumerate() {
                    let m = leave_one_out(sum, u, n);
                    if config.control_variate && reference.is_some() {
                        let (gm, gu) = match next {
                            Some(fit) => fit.gradient(m, u),
                            None if m.abs() < table.r_delta => (-1.0 / table.r_delta, 0.0),
                            None => (0.0, 0.0),
                        };
                        let gm = gm.clamp(-GRADIENT_CLIP / table.r_delta, GRADIENT_CLIP / table.r_delta);
                        let dm = noise_scale * leave_one_out(zsum, zs[i], n);
                        carry[s * n + i] += gm * dm + gu * noise_scale * zs[i];
                    }
                    ms.push(m);
                    us.push(u);
                }
            }
            let before: Vec<f64> = (0..width).map(|j| old.raw(ms[j], us[j])).collect();
            let y: Vec<f64> = (0..width).map(|j| (1.0 - rho) * before[j] + rho * (payoff[j] - carry[j])).collect();
            let fixed = reference.as_ref().map(|r| &r[step]);
            let (fit, fell) = fit_node(&ms, &us, &y, config.degree, config.ramps, fixed);
            let change = (0..width)
                .map(|j| (fit.value(ms[j], us[j]) - before[j].clamp(-1.0, 1.0)).abs())
                .fold(0.0, f64::max)
                / table.w[step];
            results.push((fit, fell, change));
        }
        results.reverse();
        let mut change: f64 = 0.0;
        for (step, (fit, fell, c)) in results.into_iter().enumerate() {
            sol.fits[step] = fit;
            sol.rank_fallback |= fell;
            change = change.max(c);
        }
        forward(&mut sol);
        sol.iterations = iteration;
        sol.final_change = change;
        if reference.is_some() {
            settled += 1;
        }
        if reference.is_none() {
            if change < PRESOLVE_FACTOR * config.tolerance {
                reference = Some(sol.fits.clone());
            }
        } else if change < config.tolerance {
            sol.converged = true;
            break;
        }
    }
    Ok(sol)
}

/// sup_t |μ̃^N_t − μ̂^N_t| for scenario s against the aggregate model fed
/// with the same averaged increments.
pub fn sup_gap_vs_aggregate(sol: &ExactSolution, model: &AggregateModel, s: usize) -> Result<f64> {
    let exact = sol.mean_path(s);
    let approx = model.run_with_noise(&sol.aggregated_noise(s))?;
    Ok(exact.iter().zip(&approx).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
}

/// Slack of the comparison −v^N_t ≥ −θ̃^N(t, μ̃^N_t) along scenario s.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComparisonDiagnostic {
    /// γ actually used for g̃; γ_N capped at r_δ/4 because g̃ needs γ < r_δ/2.
    pub gamma: f64,
    pub gamma_capped: bool,
    /// max_t (v^N_t − θ̃^N(t, μ̃^N_t))⁺
    pub slack: f64,
}

pub fn comparison_diagnostic(sol: &ExactSolution, sigma: f64, s: usize) -> Result<ComparisonDiagnostic> {
    let table = sol.table.clone();
    let gamma_target = gamma_n(sol.players);
    let cap = 0.25 * table.r_delta;
    let gamma = gamma_target.min(cap);
    let sigma0 = sigma / (sol.players as f64).sqrt();
    let smoothed = ViscousField::smoothed(table.clone(), sigma0, gamma)?;
    let mean = sol.mean_path(s);
    let v = sol.mean_feedback(s);
    let slack = (0..mean.len())
        .map(|n| (v[n] - smoothed.at_node(n, mean[n])).max(0.0))
        .fold(0.0, f64::max);
    Ok(ComparisonDiagnostic { gamma, gamma_capped: gamma < gamma_target, slack })
}

/// Selection statistics of the aggregate mean over `runs` independent runs.
pub fn nplayer_selection_stats(
    table: Arc<CoefficientTable>,
    sigma: f64,
    players: usize,
    runs: usize,
    tolerance: f64,
    seed: u64,
) -> Result<(SelectionReport, Vec<AggregatePath>)> {
    let model = AggregateModel::new(table.clone(), sigma, players)?;
    let paths: Result<Vec<AggregatePath>> = (0..runs as u64).into_par_iter().map(|r| model.simulate(seed, r)).collect();
    let paths = paths?;
    let report = selection_from_paths(paths.iter().map(|p| p.mu_hat.as_slice()), &table, tolerance, None)?;
    Ok((report, paths))
}
