//! The viscous decoupling field θ^σ₀ via the Cole–Hopf formula.
//!
//! With u = y − x and s = r_t the field is
//!
//! ```text
//! θ(t, x) = −∫ (u/s) e^{E(u)} du / ∫ e^{E(u)} du,   E(u) = λ[H(x+u) − u²/(2s)]
//! ```
//!
//! where H = −∫₀^y g. On every piece where g is affine E is a quadratic,
//! so both integrals are sums of erfcx / Dawson terms. Each piece is split
//! at the vertex of its quadratic; on the resulting monotone segments all
//! exponentials are taken relative to the global maximum of E.

use std::sync::Arc;

use crate::coefficients::CoefficientTable;
use crate::error::{invalid, Result};
use crate::fields::{EntropyField, QuadraticPiece, SmoothedTerminal, Terminal, TerminalCondition};
use crate::quadrature::{integrate_with_breaks, kronrod15};
use crate::special::{dawson, dawson_moment, erfcx, gaussian_tail_moment, SQRT_PI};

/// Smallest σ₀ the simulators evaluate the viscous field at.
pub const MIN_FIELD_SIGMA0: f64 = 0.02;

/// Segments whose exponent varies by less than this are integrated by a
/// 15-point rule instead; the closed forms lose digits when flat.
const FLAT_SPAN: f64 = 0.5;

/// |a|·width² below this is treated as a purely linear exponent.
const LINEAR_CURVATURE: f64 = 1e-13;

#[derive(Clone)]
pub struct ViscousField {
    sigma0: f64,
    lambda: f64,
    table: Arc<CoefficientTable>,
    terminal: Arc<dyn Terminal>,
    potential: Vec<QuadraticPiece>,
}

impl std::fmt::Debug for ViscousField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ViscousField")
            .field("sigma0", &self.sigma0)
            .field("lambda", &self.lambda)
            .field("pieces", &self.potential.len())
            .finish()
    }
}

/// E(u) = a·u² + b·u + c on [lo, hi], monotone in u.
#[derive(Clone, Copy)]
struct Segment {
    a: f64,
    b: f64,
    c: f64,
    lo: f64,
    hi: f64,
}

impl Segment {
    fn at(&self, u: f64) -> f64 {
        if u.is_infinite() {
            return f64::NEG_INFINITY;
        }
        self.c + u * (self.b + u * self.a)
    }

    fn peak(&self) -> f64 {
        self.at(self.lo).max(self.at(self.hi))
    }

    /// (∫ e^{E−M}, ∫ u·e^{E−M}) over the segment.
    fn moments(&self, m: f64) -> (f64, f64) {
        let (e_lo, e_hi) = (self.at(self.lo), self.at(self.hi));
        let (p, q, ep, eq) = if e_lo >= e_hi {
            (self.lo, self.hi, e_lo, e_hi)
        } else {
            (self.hi, self.lo, e_hi, e_lo)
        };
        let width = (q - p).abs();
        let dir = if q > p { 1.0 } else { -1.0 };
        let wp = (ep - m).exp();
        let wq = (eq - m).exp();

        if q.is_finite() && ep - eq < FLAT_SPAN {
            let f0 = |u: f64| (self.at(u) - m).exp();
            let f1 = |u: f64| u * (self.at(u) - m).exp();
            return (kronrod15(&f0, self.lo, self.hi).0, kronrod15(&f1, self.lo, self.hi).0);
        }

        // I0 and the moment about the peak end, ∫|u − p| e^{E−M}
        let (i0, mp) = if q.is_finite() && self.a.abs() * width * width <= LINEAR_CURVATURE {
            let slope = self.b.abs();
            let decay = (-slope * width).exp();
            let i0 = wp * -(-slope * width).exp_m1() / slope;
            let mp = wp * (1.0 - decay * (1.0 + slope * width)) / (slope * slope);
            (i0, mp)
        } else if self.a < 0.0 {
            let beta = (-self.a).sqrt();
            let vertex = -self.b / (2.0 * self.a);
            let zp = beta * (p - vertex).abs();
            let (far0, far1) = if q.is_finite() {
                let zq = beta * (q - vertex).abs();
                let ex = erfcx(zq);
                (wq * ex, wq * (gaussian_tail_moment(zq) + (zq - zp) * 0.5 * SQRT_PI * ex))
            } else {
                (0.0, 0.0)
            };
            let i0 = 0.5 * SQRT_PI / beta * (wp * erfcx(zp) - far0);
            let mp = (wp * gaussian_tail_moment(zp) - far1) / (beta * beta);
            (i0, mp)
        } else {
            let beta = self.a.sqrt();
            let vertex = -self.b / (2.0 * self.a);
            let zp = beta * (p - vertex).abs();
            let zq = beta * (q - vertex).abs();
            let dq = dawson(zq);
            let i0 = (wp * dawson(zp) - wq * dq) / beta;
            let mp = (wp * dawson_moment(zp) - wq * (dawson_moment(zq) + (zp - zq) * dq)) / (beta * beta);
            (i0, mp)
        };
        (i0, p * i0 + dir * mp)
    }
}

impl ViscousField {
    /// Field with the terminal condition g.
    pub fn new(table: Arc<CoefficientTable>, sigma0: f64) -> Result<Self> {
        let g = TerminalCondition::from_table(&table);
        Self::with_terminal(table, sigma0, Arc::new(g))
    }

    /// Field with the smoothed terminal condition g̃.
    pub fn smoothed(table: Arc<CoefficientTable>, sigma0: f64, gamma: f64) -> Result<Self> {
        let g = SmoothedTerminal::new(table.r_delta, gamma)?;
        Self::with_terminal(table, sigma0, Arc::new(g))
    }

    pub fn with_terminal(table: Arc<CoefficientTable>, sigma0: f64, terminal: Arc<dyn Terminal>) -> Result<Self> {
        if !(sigma0 > 0.0 && sigma0.is_finite()) {
            return invalid(format!("sigma0 must be positive for the viscous field, got {sigma0}"));
        }
        let potential = terminal.potential_pieces();
        Ok(Self { sigma0, lambda: 1.0 / (sigma0 * sigma0), table, terminal, potential })
    }

    pub fn sigma0(&self) -> f64 {
        self.sigma0
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn table(&self) -> &Arc<CoefficientTable> {
        &self.table
    }

    pub fn terminal(&self) -> &dyn Terminal {
        self.terminal.as_ref()
    }

    /// θ^σ₀(t, x); equals g(x) at t = T.
    pub fn eval(&self, t: f64, x: f64) -> f64 {
        if t >= self.table.horizon() {
            return self.terminal.eval(x);
        }
        self.eval_with_r(self.table.r_at(t), x)
    }

    /// θ^σ₀ at grid node `n`.
    pub fn at_node(&self, n: usize, x: f64) -> f64 {
        self.eval_with_r(self.table.r[n], x)
    }

    /// θ^σ₀ given the remaining clock s = r_t.
    pub fn eval_with_r(&self, s: f64, x: f64) -> f64 {
        if s <= 0.0 {
            return self.terminal.eval(x);
        }
        if self.terminal.is_odd() {
            if x == 0.0 {
                return 0.0;
            }
            let v = self.ratio(s, x.abs());
            return if x > 0.0 { v } else { -v };
        }
        self.ratio(s, x)
    }

    fn ratio(&self, s: f64, x: f64) -> f64 {
        let lam = self.lambda;
        let mut segs = [Segment { a: 0.0, b: 0.0, c: 0.0, lo: 0.0, hi: 0.0 }; 16];
        let mut n = 0;
        for p in &self.potential {
            let a = lam * (p.c2 - 0.5 / s);
            let b = lam * (p.c1 + 2.0 * p.c2 * x);
            let c = lam * p.eval(x);
            let (lo, hi) = (p.lo - x, p.hi - x);
            if a != 0.0 {
                let v = -b / (2.0 * a);
                if v > lo && v < hi {
                    segs[n] = Segment { a, b, c, lo, hi: v };
                    segs[n + 1] = Segment { a, b, c, lo: v, hi };
                    n += 2;
                    continue;
                }
            }
            segs[n] = Segment { a, b, c, lo, hi };
            n += 1;
        }
        let segs = &segs[..n];
        let m = segs.iter().map(Segment::peak).fold(f64::NEG_INFINITY, f64::max);
        let (mut z0, mut z1) = (0.0, 0.0);
        for seg in segs {
            let (a0, a1) = seg.moments(m);
            z0 += a0;
            z1 += a1;
        }
        -z1 / (s * z0)
    }

    /// Brute-force evaluation: adaptive quadrature of both integrals on a
    /// truncated window, with H obtained by integrating g numerically.
    pub fn oracle(&self, t: f64, x: f64) -> f64 {
        if t >= self.table.horizon() {
            return self.terminal.eval(x);
        }
        let s = self.table.r_at(t);
        let lam = self.lambda;
        let kinks = self.terminal.breakpoints();
        let g = |v: f64| self.terminal.eval(v);
        // ∫₀^y g with one Kronrod panel per affine stretch of g, which is exact
        let mut anchors = vec![0.0];
        anchors.extend(kinks.iter().copied().filter(|&k| k != 0.0));
        anchors.sort_by(f64::total_cmp);
        let origin = anchors.iter().position(|&a| a == 0.0).expect("zero anchor");
        let mut cumulative = vec![0.0; anchors.len()];
        for i in origin + 1..anchors.len() {
            cumulative[i] = cumulative[i - 1] + kronrod15(&g, anchors[i - 1], anchors[i]).0;
        }
        for i in (0..origin).rev() {
            cumulative[i] = cumulative[i + 1] - kronrod15(&g, anchors[i], anchors[i + 1]).0;
        }
        let big_g = |y: f64| -> f64 {
            let i = anchors.partition_point(|&a| a <= y).saturating_sub(1);
            cumulative[i] + kronrod15(&g, anchors[i], y).0
        };
        let h_of = |y: f64| -> f64 { -big_g(y) - (x - y) * (x - y) / (2.0 * s) };
        let radius = 12.0 * s.sqrt() * self.sigma0 + 3.0 * self.table.r0();
        let (lo, hi) = (x - radius, x + radius);
        let samples = 4000;
        let peak = (0..=samples)
            .map(|i| lam * h_of(lo + (hi - lo) * i as f64 / samples as f64))
            .fold(f64::NEG_INFINITY, f64::max);
        let mut breaks = kinks.clone();
        breaks.extend([x - s, x, x + s]);
        let den = integrate_with_breaks(|y| (lam * h_of(y) - peak).exp(), lo, hi, &breaks, 1e-14);
        let num = integrate_with_breaks(|y| (x - y) / s * (lam * h_of(y) - peak).exp(), lo, hi, &breaks, 1e-14);
        num / den
    }

    /// Central-difference residual of ∂_tθ − w⁻²θ∂_xθ + ½σ₀²w⁻²∂²_xθ.
    pub fn pde_residual(&self, t: f64, x: f64, h_t: f64, h_x: f64) -> f64 {
        let th = self.eval(t, x);
        let dt = (self.eval(t + h_t, x) - self.eval(t - h_t, x)) / (2.0 * h_t);
        let (up, dn) = (self.eval(t, x + h_x), self.eval(t, x - h_x));
        let dx = (up - dn) / (2.0 * h_x);
        let dxx = (up - 2.0 * th + dn) / (h_x * h_x);
        let w = self.table.w_at(t);
        let iw2 = 1.0 / (w * w);
        dt - iw2 * th * dx + 0.5 * self.sigma0 * self.sigma0 * iw2 * dxx
    }
}

/// θ^σ₀(t, x) for the terminal condition g.
pub fn cole_hopf_eval(table: &Arc<CoefficientTable>, t: f64, x: f64, sigma0: f64) -> Result<f64> {
    check_time(table, t)?;
    Ok(ViscousField::new(table.clone(), sigma0)?.eval(t, x))
}

pub fn quadrature_oracle(table: &Arc<CoefficientTable>, t: f64, x: f64, sigma0: f64) -> Result<f64> {
    check_time(table, t)?;
    Ok(ViscousField::new(table.clone(), sigma0)?.oracle(t, x))
}

fn check_time(table: &CoefficientTable, t: f64) -> Result<()> {
    if !(0.0..=table.horizon()).contains(&t) {
        return invalid(format!("t = {t} outside [0, {}]", table.horizon()));
    }
    Ok(())
}

/// Ψ = θ^σ₀ − θ.
pub fn psi(field: &ViscousField, entropy: &EntropyField, t: f64, x: f64) -> f64 {
    field.eval(t, x) - entropy.eval(t, x)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsiBoundReport {
    pub t: f64,
    pub x: f64,
    pub sigma0: f64,
    pub psi_abs: f64,
    pub bound: f64,
}

impl PsiBoundReport {
    pub fn holds(&self, slack: f64) -> bool {
        self.psi_abs <= self.bound + slack
    }
}

/// Upper bound on |Ψ(t, x)| valid for t < δ and 0 < |x| < r_t − r_δ.
pub fn psi_bound(table: &CoefficientTable, t: f64, x: f64, sigma0: f64) -> Result<f64> {
    if !(sigma0 > 0.0) {
        return invalid("sigma0 must be positive");
    }
    let rt = table.r_at(t);
    let rd = table.r_delta;
    let gap = rt - rd;
    if gap <= 0.0 {
        return invalid(format!("bound needs t < delta (r_t = {rt} <= r_delta = {rd})"));
    }
    let ax = x.abs();
    if !(ax > 0.0 && ax < gap) {
        return invalid(format!("bound needs 0 < |x| < r_t - r_delta = {gap}, got x = {x}"));
    }
    let lam = 1.0 / (sigma0 * sigma0);
    let ratio = (rd / gap).sqrt();
    let first = (4.0 + 2.0 * ratio) * (-2.0 * lam * ax).exp();
    let second = 2.0 * std::f64::consts::SQRT_2 / (lam * std::f64::consts::PI * rt).sqrt();
    let third = 2.0 * ratio * (-lam * gap * gap / (2.0 * rt)).exp();
    Ok(first + second + third)
}

pub fn psi_report(field: &ViscousField, entropy: &EntropyField, t: f64, x: f64) -> Result<PsiBoundReport> {
    let bound = psi_bound(field.table(), t, x, field.sigma0())?;
    Ok(PsiBoundReport { t, x, sigma0: field.sigma0(), psi_abs: psi(field, entropy, t, x).abs(), bound })
}

/// Comparison of the fields built from g̃ and from g at one time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct L1Comparison {
    pub gap_integral: f64,
    pub min_pointwise_diff: f64,
    pub bound: f64,
}

/// ∫|θ̃^σ₀ − θ^σ₀| over [−3r₀ − 12σ₀, 3r₀ + 12σ₀] and the minimum of
/// θ̃^σ₀ − θ^σ₀ over a uniform lattice of that window.
pub fn l1_comparison(table: &Arc<CoefficientTable>, t: f64, sigma0: f64, gamma: f64) -> Result<L1Comparison> {
    check_time(table, t)?;
    let smooth = ViscousField::smoothed(table.clone(), sigma0, gamma)?;
    let plain = ViscousField::new(table.clone(), sigma0)?;
    let half = 3.0 * table.r0() + 12.0 * sigma0;
    let diff = |x: f64| smooth.eval(t, x) - plain.eval(t, x);
    let mut breaks = smooth.terminal().breakpoints();
    breaks.extend(plain.terminal().breakpoints());
    let gap_integral = integrate_with_breaks(|x| diff(x).abs(), -half, half, &breaks, 1e-11);
    let lattice = 4000;
    let min_pointwise_diff = (0..=lattice)
        .map(|i| diff(-half + 2.0 * half * i as f64 / lattice as f64))
        .fold(f64::INFINITY, f64::min);
    let bound = 2.0 * gamma * gamma / table.r_delta;
    Ok(L1Comparison { gap_integral, min_pointwise_diff, bound })
}

/// Largest centred-difference |∂_xθ^σ₀(t, ·)| over a uniform lattice on [−half, half].
pub fn max_gradient(field: &ViscousField, t: f64, half: f64, points: usize, h: f64) -> f64 {
    (0..=points)
        .map(|i| {
            let x = -half + 2.0 * half * i as f64 / points as f64;
            ((field.eval(t, x + h) - field.eval(t, x - h)) / (2.0 * h)).abs()
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::ModelParams;

    fn table() -> Arc<CoefficientTable> {
        Arc::new(CoefficientTable::from_params(&ModelParams::canonical(), 1e-3).unwrap())
    }

    #[test]
    fn closed_form_agrees_with_oracle_at_a_few_points() {
        let tb = table();
        for &s0 in &[0.5, 0.1, 0.03] {
            let f = ViscousField::new(tb.clone(), s0).unwrap();
            for &(t, x) in &[(0.25, 0.2), (0.5, 0.05), (0.5004, 0.3), (0.8, -0.1), (0.0, 0.01), (0.95, 0.4)] {
                let (a, b) = (f.eval(t, x), f.oracle(t, x));
                assert!((a - b).abs() < 1e-9, "sigma0 {s0} t {t} x {x}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn smoothed_field_agrees_with_oracle() {
        let tb = table();
        let f = ViscousField::smoothed(tb, 0.1, 0.05).unwrap();
        for &(t, x) in &[(0.25, 0.2), (0.6, 0.25), (0.9, 0.3), (0.9, -0.2)] {
            let (a, b) = (f.eval(t, x), f.oracle(t, x));
            assert!((a - b).abs() < 1e-9, "t {t} x {x}: {a} vs {b}");
        }
    }
}
