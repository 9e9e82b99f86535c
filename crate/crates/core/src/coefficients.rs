//! Riccati solution and the deterministic clocks `w`, `r`, `k`.
//!
//! Everything is sampled on one uniform [`TimeGrid`] with the kink time δ
//! snapped to a node, so `r_delta` is a grid quantity. Between nodes the
//! curves are interpolated by cubic Hermite splines using their exact
//! derivatives.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, numeric, Result};

/// Scalar game data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelParams {
    pub kappa: f64,
    pub sigma: f64,
    pub sigma0: f64,
    pub horizon: f64,
    pub delta: f64,
    pub xi: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self::canonical()
    }
}

impl ModelParams {
    /// κ = 0, σ = 1, T = 1, δ = 0.5. With κ = 0 the Riccati solution is η ≡ 1.
    pub fn canonical() -> Self {
        Self { kappa: 0.0, sigma: 1.0, sigma0: 0.0, horizon: 1.0, delta: 0.5, xi: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.kappa, self.sigma, self.sigma0, self.horizon, self.delta, self.xi];
        if all.iter().any(|v| !v.is_finite()) {
            return invalid("model parameters must be finite");
        }
        if self.horizon <= 0.0 {
            return invalid(format!("horizon must be positive, got {}", self.horizon));
        }
        if !(self.delta > 0.0 && self.delta < self.horizon) {
            return invalid(format!("need 0 < delta < horizon, got delta = {}, horizon = {}", self.delta, self.horizon));
        }
        if self.sigma < 0.0 || self.sigma0 < 0.0 {
            return invalid("volatilities must be non-negative");
        }
        Ok(())
    }
}

/// Uniform grid on `[0, T]` with δ on a node.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    nodes: Vec<f64>,
    step: f64,
    delta_index: usize,
}

impl TimeGrid {
    /// The number of steps is `round(T / dt)`; δ is moved to the nearest node.
    pub fn new(horizon: f64, dt: f64, delta: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) || !(horizon > 0.0 && horizon.is_finite()) {
            return invalid(format!("bad grid request: horizon = {horizon}, dt = {dt}"));
        }
        let steps = (horizon / dt).round().max(1.0) as usize;
        if steps < 4 {
            return invalid(format!("grid too coarse: {steps} steps"));
        }
        let step = horizon / steps as f64;
        let delta_index = (delta / step).round() as isize;
        if delta_index <= 0 || delta_index >= steps as isize {
            return invalid(format!("delta = {delta} does not snap to an interior node"));
        }
        let mut nodes: Vec<f64> = (0..=steps).map(|i| i as f64 * step).collect();
        nodes[steps] = horizon;
        Ok(Self { nodes, step, delta_index: delta_index as usize })
    }

    pub fn for_params(params: &ModelParams, dt: f64) -> Result<Self> {
        params.validate()?;
        Self::new(params.horizon, dt, params.delta)
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    /// Number of time steps (one less than the number of nodes).
    pub fn steps(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn horizon(&self) -> f64 {
        self.nodes[self.steps()]
    }

    pub fn delta_index(&self) -> usize {
        self.delta_index
    }

    /// The snapped kink time.
    pub fn delta(&self) -> f64 {
        self.nodes[self.delta_index]
    }

    /// Index of the node equal to `t` up to rounding, if any.
    pub fn node_index(&self, t: f64) -> Option<usize> {
        let pos = t / self.step;
        let i = pos.round();
        if i < 0.0 || i > self.steps() as f64 {
            return None;
        }
        ((pos - i).abs() <= 1e-9).then_some(i as usize)
    }

    /// Index `i` with `nodes[i] <= t < nodes[i + 1]`, clamped to the last interval.
    fn interval(&self, t: f64) -> usize {
        let i = (t / self.step).floor();
        if i <= 0.0 {
            0
        } else {
            (i as usize).min(self.steps() - 1)
        }
    }
}

/// Cumulative integral from node 0 to every node.
///
/// Even nodes get plain composite Simpson; an odd node adds one interval
/// with the three-point rule `h(5f₀ + 8f₁ − f₂)/12`, which keeps fourth order.
pub fn cumulative_simpson(f: &[f64], h: f64) -> Vec<f64> {
    let n = f.len();
    let mut out = vec![0.0; n];
    if n < 3 {
        if n == 2 {
            out[1] = 0.5 * h * (f[0] + f[1]);
        }
        return out;
    }
    for i in 1..n {
        out[i] = if i % 2 == 0 {
            out[i - 2] + h / 3.0 * (f[i - 2] + 4.0 * f[i - 1] + f[i])
        } else if i + 1 < n {
            out[i - 1] + h / 12.0 * (5.0 * f[i - 1] + 8.0 * f[i] - f[i + 1])
        } else {
            out[i - 1] + h / 12.0 * (-f[i - 2] + 8.0 * f[i - 1] + 5.0 * f[i])
        };
    }
    out
}

/// Cumulative integral from every node to the last one.
pub fn reverse_cumulative_simpson(f: &[f64], h: f64) -> Vec<f64> {
    let rev: Vec<f64> = f.iter().rev().copied().collect();
    let mut out = cumulative_simpson(&rev, h);
    out.reverse();
    out
}

fn riccati_rhs(eta: f64, kappa: f64) -> f64 {
    eta * eta - 2.0 * kappa * eta - 1.0
}

/// Backward RK4 for dη/dt = η² − 2κη − 1 with η_T = 1.
pub fn solve_riccati(params: &ModelParams, grid: &TimeGrid) -> Result<Vec<f64>> {
    params.validate()?;
    let n = grid.steps();
    let h = -grid.step();
    let kappa = params.kappa;
    let mut eta = vec![0.0; n + 1];
    eta[n] = 1.0;
    for i in (1..=n).rev() {
        let y = eta[i];
        let k1 = riccati_rhs(y, kappa);
        let k2 = riccati_rhs(y + 0.5 * h * k1, kappa);
        let k3 = riccati_rhs(y + 0.5 * h * k2, kappa);
        let k4 = riccati_rhs(y + h * k3, kappa);
        let next = y + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        if !next.is_finite() {
            return numeric(format!("Riccati solution overflowed at t = {}", grid.nodes()[i - 1]));
        }
        eta[i - 1] = next;
    }
    Ok(eta)
}

/// Largest |dη/dt − (η² − 2κη − 1)| over nodes with a full five-point stencil.
pub fn riccati_residual(eta: &[f64], kappa: f64, step: f64) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 2..eta.len().saturating_sub(2) {
        let d = (eta[i - 2] - 8.0 * eta[i - 1] + 8.0 * eta[i + 1] - eta[i + 2]) / (12.0 * step);
        worst = worst.max((d - riccati_rhs(eta[i], kappa)).abs());
    }
    worst
}

/// Sampled η, w, r, k and the constant r_δ.
#[derive(Debug, Clone)]
pub struct CoefficientTable {
    grid: TimeGrid,
    kappa: f64,
    pub eta: Vec<f64>,
    pub w: Vec<f64>,
    pub r: Vec<f64>,
    pub k: Vec<f64>,
    pub r_delta: f64,
}

const IDENTITY_TOL: f64 = 1e-10;

impl CoefficientTable {
    pub fn build(params: &ModelParams, grid: &TimeGrid, eta: Vec<f64>) -> Result<Self> {
        if eta.len() != grid.len() {
            return invalid("eta must be sampled on every grid node");
        }
        let h = grid.step();
        let drift: Vec<f64> = eta.iter().map(|e| e - params.kappa).collect();
        let log_w = reverse_cumulative_simpson(&drift, h);
        let w: Vec<f64> = log_w.iter().map(|l| l.exp()).collect();
        let inv_w2: Vec<f64> = w.iter().map(|v| 1.0 / (v * v)).collect();
        let k = cumulative_simpson(&inv_w2, h);
        let r = reverse_cumulative_simpson(&inv_w2, h);
        if w.iter().chain(&k).chain(&r).any(|v| !v.is_finite()) {
            return numeric("clock functions are not finite");
        }
        let r0 = r[0];
        if let Some(i) = (0..k.len()).find(|&i| (k[i] + r[i] - r0).abs() > IDENTITY_TOL) {
            return numeric(format!(
                "k + r = r_0 violated at node {i}: {} vs {r0}",
                k[i] + r[i]
            ));
        }
        let r_delta = r[grid.delta_index()];
        if r_delta <= 0.0 {
            return numeric("r_delta must be positive");
        }
        Ok(Self { grid: grid.clone(), kappa: params.kappa, eta, w, r, k, r_delta })
    }

    /// Riccati solve plus clocks in one call.
    pub fn from_params(params: &ModelParams, dt: f64) -> Result<Self> {
        let grid = TimeGrid::for_params(params, dt)?;
        let eta = solve_riccati(params, &grid)?;
        Self::build(params, &grid, eta)
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn horizon(&self) -> f64 {
        self.grid.horizon()
    }

    pub fn delta(&self) -> f64 {
        self.grid.delta()
    }

    /// k_T, which equals r_0.
    pub fn k_horizon(&self) -> f64 {
        self.k[self.grid.steps()]
    }

    pub fn r0(&self) -> f64 {
        self.r[0]
    }

    /// ∫_0^δ w⁻².
    pub fn k_delta(&self) -> f64 {
        self.k[self.grid.delta_index()]
    }

    /// ∫_{δ/2}^δ w⁻² / (2∫_0^T w⁻²), the upper limit for escape-envelope slack.
    pub fn c_delta(&self) -> f64 {
        let half = self.k_at(0.5 * self.delta());
        (self.k_delta() - half) / (2.0 * self.k_horizon())
    }

    fn hermite(&self, t: f64, values: &[f64], slope: impl Fn(usize) -> f64) -> f64 {
        if let Some(i) = self.grid.node_index(t) {
            return values[i];
        }
        let i = self.grid.interval(t);
        let h = self.grid.step();
        let s = (t - self.grid.nodes()[i]) / h;
        let (s2, s3) = (s * s, s * s * s);
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        h00 * values[i] + h10 * h * slope(i) + h01 * values[i + 1] + h11 * h * slope(i + 1)
    }

    pub fn eta_at(&self, t: f64) -> f64 {
        self.hermite(t, &self.eta, |i| riccati_rhs(self.eta[i], self.kappa))
    }

    pub fn w_at(&self, t: f64) -> f64 {
        self.hermite(t, &self.w, |i| (self.kappa - self.eta[i]) * self.w[i])
    }

    pub fn r_at(&self, t: f64) -> f64 {
        if t >= self.horizon() {
            return 0.0;
        }
        self.hermite(t, &self.r, |i| -1.0 / (self.w[i] * self.w[i]))
    }

    pub fn k_at(&self, t: f64) -> f64 {
        self.hermite(t, &self.k, |i| 1.0 / (self.w[i] * self.w[i]))
    }

    /// Writes `t,eta,w,r,k` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "t,eta,w,r,k")?;
        for (i, t) in self.grid.nodes().iter().enumerate() {
            writeln!(out, "{},{},{},{},{}", t, self.eta[i], self.w[i], self.r[i], self.k[i])?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cumulative_simpson_orders() {
        let h = 0.01;
        let quad: Vec<f64> = (0..=101).map(|i| {
            let t = i as f64 * h;
            3.0 * t * t - 2.0 * t
        }).collect();
        let cubic: Vec<f64> = (0..=101).map(|i| (i as f64 * h).powi(3)).collect();
        let (cq, cc) = (cumulative_simpson(&quad, h), cumulative_simpson(&cubic, h));
        for i in 0..=101 {
            let t = i as f64 * h;
            assert!((cq[i] - (t * t * t - t * t)).abs() < 1e-13, "node {i}");
            let err = (cc[i] - t.powi(4) / 4.0).abs();
            if i % 2 == 0 {
                assert!(err < 1e-13, "even node {i}");
            } else {
                assert!(err < h.powi(4), "odd node {i}");
            }
        }
    }

    #[test]
    fn delta_is_snapped() {
        let g = TimeGrid::new(1.0, 1e-3, 0.50004).unwrap();
        assert_eq!(g.delta_index(), 500);
        assert_eq!(g.delta(), 0.5);
        assert!(TimeGrid::new(1.0, 0.1, 1.0).is_err());
    }

    #[test]
    fn interpolation_between_nodes_is_fourth_order() {
        let table = CoefficientTable::from_params(&ModelParams::canonical(), 1e-3).unwrap();
        for &t in &[0.12345, 0.5004, 0.98765] {
            let exact = 0.5 * (1.0 - (-2.0f64 * (1.0 - t)).exp());
            assert!((table.r_at(t) - exact).abs() < 1e-12);
            assert!((table.w_at(t) - (1.0 - t).exp()).abs() < 1e-11);
        }
    }
}
