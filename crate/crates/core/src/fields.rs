//! Terminal data, the entropy solution and the three explicit equilibria.

use std::sync::Arc;

use crate::coefficients::CoefficientTable;
use crate::error::{invalid, numeric, Result};

/// sign with sign(0) = 0.
pub fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `g(y) = intercept + slope·y` on `[lo, hi]`; the outer pieces are unbounded.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffinePiece {
    pub lo: f64,
    pub hi: f64,
    pub intercept: f64,
    pub slope: f64,
}

/// `H(y) = c0 + c1·y + c2·y²` on `[lo, hi]`, where H = −∫₀^y g.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticPiece {
    pub lo: f64,
    pub hi: f64,
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
}

impl QuadraticPiece {
    pub fn eval(&self, y: f64) -> f64 {
        self.c0 + y * (self.c1 + y * self.c2)
    }
}

/// A piecewise-affine, non-increasing terminal condition.
pub trait Terminal: Send + Sync {
    fn eval(&self, x: f64) -> f64;

    /// Affine pieces ordered left to right, covering the real line.
    fn pieces(&self) -> Vec<AffinePiece>;

    /// Whether `eval(-x) == -eval(x)` holds exactly.
    fn is_odd(&self) -> bool;

    /// Interior kinks of g.
    fn breakpoints(&self) -> Vec<f64> {
        let p = self.pieces();
        p[1..].iter().map(|q| q.lo).collect()
    }

    /// Pieces of H(y) = −∫₀^y g(v) dv, continuous across kinks.
    fn potential_pieces(&self) -> Vec<QuadraticPiece> {
        let pieces = self.pieces();
        let home = pieces
            .iter()
            .position(|p| p.lo <= 0.0 && 0.0 <= p.hi)
            .expect("pieces cover the real line");
        let mut out: Vec<QuadraticPiece> = pieces
            .iter()
            .map(|p| QuadraticPiece { lo: p.lo, hi: p.hi, c0: 0.0, c1: -p.intercept, c2: -0.5 * p.slope })
            .collect();
        // fix constants so H is continuous and H(0) = 0
        for i in home + 1..out.len() {
            let a = out[i].lo;
            let left = out[i - 1].eval(a);
            out[i].c0 = 0.0;
            out[i].c0 = left - out[i].eval(a);
        }
        for i in (0..home).rev() {
            let a = out[i].hi;
            let right = out[i + 1].eval(a);
            out[i].c0 = 0.0;
            out[i].c0 = right - out[i].eval(a);
        }
        out
    }

    /// H(y) = −∫₀^y g(v) dv.
    fn potential(&self, y: f64) -> f64 {
        let pieces = self.potential_pieces();
        let p = pieces.iter().find(|p| y <= p.hi).unwrap_or(&pieces[pieces.len() - 1]);
        p.eval(y)
    }
}

/// g(x) = −x/r_δ on |x| ≤ r_δ, −sign(x) outside.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TerminalCondition {
    pub r_delta: f64,
}

impl TerminalCondition {
    pub fn new(r_delta: f64) -> Result<Self> {
        if !(r_delta > 0.0 && r_delta.is_finite()) {
            return invalid(format!("r_delta must be positive, got {r_delta}"));
        }
        Ok(Self { r_delta })
    }

    pub fn from_table(table: &CoefficientTable) -> Self {
        Self { r_delta: table.r_delta }
    }
}

pub fn g_eval(x: f64, r_delta: f64) -> f64 {
    if x.abs() <= r_delta {
        -x / r_delta
    } else {
        -sign(x)
    }
}

impl Terminal for TerminalCondition {
    fn eval(&self, x: f64) -> f64 {
        g_eval(x, self.r_delta)
    }

    fn pieces(&self) -> Vec<AffinePiece> {
        let r = self.r_delta;
        vec![
            AffinePiece { lo: f64::NEG_INFINITY, hi: -r, intercept: 1.0, slope: 0.0 },
            AffinePiece { lo: -r, hi: r, intercept: 0.0, slope: -1.0 / r },
            AffinePiece { lo: r, hi: f64::INFINITY, intercept: -1.0, slope: 0.0 },
        ]
    }

    fn is_odd(&self) -> bool {
        true
    }
}

/// The majorant of g with the kink at r_δ shifted and flattened by γ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothedTerminal {
    pub r_delta: f64,
    pub gamma: f64,
}

impl SmoothedTerminal {
    pub fn new(r_delta: f64, gamma: f64) -> Result<Self> {
        TerminalCondition::new(r_delta)?;
        if !(gamma > 0.0 && gamma < 0.5 * r_delta) {
            return invalid(format!("gamma must lie in (0, r_delta/2) = (0, {}), got {gamma}", 0.5 * r_delta));
        }
        Ok(Self { r_delta, gamma })
    }

    /// Exact value of ∫(g̃ − g) over the line.
    pub fn excess_mass(&self) -> f64 {
        2.0 * self.gamma * self.gamma / self.r_delta
    }
}

pub fn g_tilde_eval(x: f64, r_delta: f64, gamma: f64) -> Result<f64> {
    Ok(SmoothedTerminal::new(r_delta, gamma)?.eval(x))
}

impl Terminal for SmoothedTerminal {
    fn eval(&self, x: f64) -> f64 {
        let (r, gam) = (self.r_delta, self.gamma);
        if x <= r - 2.0 * gam {
            g_eval(x, r)
        } else if x <= r - gam {
            g_eval(r - 2.0 * gam, r)
        } else if x <= r + gam {
            g_eval(x - gam, r)
        } else {
            -1.0
        }
    }

    fn pieces(&self) -> Vec<AffinePiece> {
        let (r, gam) = (self.r_delta, self.gamma);
        vec![
            AffinePiece { lo: f64::NEG_INFINITY, hi: -r, intercept: 1.0, slope: 0.0 },
            AffinePiece { lo: -r, hi: r - 2.0 * gam, intercept: 0.0, slope: -1.0 / r },
            AffinePiece { lo: r - 2.0 * gam, hi: r - gam, intercept: -(r - 2.0 * gam) / r, slope: 0.0 },
            AffinePiece { lo: r - gam, hi: r + gam, intercept: gam / r, slope: -1.0 / r },
            AffinePiece { lo: r + gam, hi: f64::INFINITY, intercept: -1.0, slope: 0.0 },
        ]
    }

    fn is_odd(&self) -> bool {
        false
    }
}

/// The vanishing-viscosity limit θ(t, x).
#[derive(Debug, Clone)]
pub struct EntropyField {
    table: Arc<CoefficientTable>,
}

impl EntropyField {
    pub fn new(table: Arc<CoefficientTable>) -> Self {
        Self { table }
    }

    pub fn table(&self) -> &CoefficientTable {
        &self.table
    }

    /// θ given the remaining clock r_t (with r_t ≥ r_δ meaning t ≤ δ).
    pub fn eval_with_r(&self, r_t: f64, x: f64) -> f64 {
        let gap = self.table.r_delta - r_t;
        if gap <= 0.0 || x.abs() >= gap {
            -sign(x)
        } else {
            -x / gap
        }
    }

    pub fn eval(&self, t: f64, x: f64) -> f64 {
        if t <= self.table.delta() {
            return -sign(x);
        }
        self.eval_with_r(self.table.r_at(t), x)
    }
}

pub fn entropy_eval(table: &Arc<CoefficientTable>, t: f64, x: f64) -> f64 {
    EntropyField::new(table.clone()).eval(t, x)
}

/// (μ, h, z) = (ξ − A·k_t, A, 0).
#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumTriple {
    pub a: f64,
    pub mu: Vec<f64>,
    pub h: f64,
    pub z: f64,
}

const MATCH_TOL: f64 = 1e-9;

/// The three admissible values of A for a given initial mean.
pub fn admissible_parameters(xi: f64, table: &CoefficientTable) -> Result<[f64; 3]> {
    let kd = table.k_delta();
    if xi.abs() >= kd {
        return invalid(format!("|xi| = {} must be below k_delta = {kd}", xi.abs()));
    }
    Ok([-1.0, xi / kd, 1.0])
}

pub fn equilibrium_path(a: f64, xi: f64, table: &CoefficientTable) -> Result<EquilibriumTriple> {
    let allowed = admissible_parameters(xi, table)?;
    if !allowed.iter().any(|b| (a - b).abs() <= 1e-12 * (1.0 + b.abs())) {
        return invalid(format!("A = {a} is not an equilibrium parameter for xi = {xi}; admissible: {allowed:?}"));
    }
    let mu: Vec<f64> = table.k.iter().map(|k| xi - a * k).collect();
    let terminal = g_eval(mu[mu.len() - 1], table.r_delta);
    if (terminal - a).abs() > MATCH_TOL {
        return numeric(format!("terminal matching failed: g(mu_T) = {terminal}, A = {a}"));
    }
    Ok(EquilibriumTriple { a, mu, h: a, z: 0.0 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn potential_matches_closed_form() {
        let g = TerminalCondition::new(0.3).unwrap();
        for &y in &[-2.0, -0.3, -0.1, 0.0, 0.2, 0.3, 1.5] {
            let y: f64 = y;
            let expect = if y.abs() <= 0.3 { y * y / 0.6 } else { 0.15 + (y.abs() - 0.3) };
            assert!((g.potential(y) - expect).abs() < 1e-14, "y = {y}");
        }
    }

    #[test]
    fn smoothed_potential_is_continuous() {
        let s = SmoothedTerminal::new(0.3, 0.05).unwrap();
        let pieces = s.potential_pieces();
        for w in pieces.windows(2) {
            let b = w[0].hi;
            assert!((w[0].eval(b) - w[1].eval(b)).abs() < 1e-14);
        }
        for p in s.pieces().iter().skip(1) {
            let left = s.eval(p.lo - 1e-12);
            assert!((left - (p.intercept + p.slope * p.lo)).abs() < 1e-9);
        }
    }
}
