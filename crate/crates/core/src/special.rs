//! Scaled Gaussian integrals used by the closed-form Cole–Hopf pieces.
//!
//! `erfcx` and the Dawson function come from the `errorfunctions` crate
//! (a port of the Faddeeva package). The two moment functions below are
//! built on them, with asymptotic series where the direct forms cancel.

use errorfunctions::RealErrorFunctions;

pub const SQRT_PI: f64 = 1.772_453_850_905_516;

/// Beyond this argument the asymptotic series are used.
const SERIES_FROM: f64 = 8.0;

pub fn erfcx(x: f64) -> f64 {
    x.erfcx()
}

pub fn dawson(x: f64) -> f64 {
    x.dawson()
}

/// `e^{x²} ∫_x^∞ (ζ − x) e^{−ζ²} dζ = ½ − x·(√π/2)·erfcx(x)` for x ≥ 0.
pub fn gaussian_tail_moment(x: f64) -> f64 {
    if x < SERIES_FROM {
        return 0.5 - x * 0.5 * SQRT_PI * erfcx(x);
    }
    // ½ Σ_{k≥1} (−1)^{k+1} (2k−1)!! / (2x²)^k
    let u = 1.0 / (2.0 * x * x);
    let mut term = u;
    let mut sum: f64 = 0.0;
    let mut k = 1.0;
    while term.abs() > 1e-18 * sum.abs() && k < 60.0 {
        sum += term;
        term *= -(2.0 * k + 1.0) * u;
        k += 1.0;
    }
    0.5 * sum
}

/// `e^{−z²} ∫_0^z (z − ζ) e^{ζ²} dζ = z·D(z) − (1 − e^{−z²})/2` for z ≥ 0.
pub fn dawson_moment(z: f64) -> f64 {
    if z < SERIES_FROM {
        return z * dawson(z) + 0.5 * (-z * z).exp_m1();
    }
    // ½ Σ_{k≥1} (2k−1)!! / (2z²)^k; e^{−z²}/2 is below rounding here
    let u = 1.0 / (2.0 * z * z);
    let mut term = u;
    let mut sum: f64 = 0.0;
    let mut k = 1.0;
    while term > 1e-18 * sum && k < 60.0 {
        sum += term;
        term *= (2.0 * k + 1.0) * u;
        k += 1.0;
    }
    0.5 * sum
}
