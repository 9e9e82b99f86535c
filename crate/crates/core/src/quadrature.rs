//! Adaptive Gauss–Kronrod (7/15) integration on finite intervals.

use std::collections::BinaryHeap;

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];
// Gauss weights at XGK[1], XGK[3], XGK[5], XGK[7]
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// One 15-point Kronrod panel: (Kronrod estimate, embedded Gauss estimate).
pub fn kronrod15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = WGK[7] * fc;
    let mut g = WG[3] * fc;
    for j in 0..7 {
        let dx = h * XGK[j];
        let s = f(c - dx) + f(c + dx);
        k += WGK[j] * s;
        if j % 2 == 1 {
            g += WG[j / 2] * s;
        }
    }
    (k * h, g * h)
}

/// Most panels a single adaptive integration may create.
const MAX_PANELS: usize = 4000;

/// Uniform panels laid down before adapting, so narrow peaks are not missed.
const INITIAL_PANELS: usize = 32;

struct Panel {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}

impl Eq for Panel {}

impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Panel {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn panel<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> Panel {
    let (k, g) = kronrod15(f, a, b);
    Panel { a, b, value: k, error: (k - g).abs() }
}

/// Integrates `f` over `[a, b]`, starting from a uniform split and always bisecting the panel with the largest
/// Kronrod–Gauss difference, until the summed difference is below `abs_tol`
/// or rounding makes further splitting pointless.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, abs_tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let mut heap = BinaryHeap::new();
    let (mut total_err, mut magnitude) = (0.0, 0.0);
    let width = (b - a) / INITIAL_PANELS as f64;
    for i in 0..INITIAL_PANELS {
        let lo = a + width * i as f64;
        let hi = if i + 1 == INITIAL_PANELS { b } else { lo + width };
        let p = panel(&f, lo, hi);
        total_err += p.error;
        magnitude += p.value.abs();
        heap.push(p);
    }
    while heap.len() < MAX_PANELS {
        if total_err <= abs_tol.max(1e-15 * magnitude) {
            break;
        }
        let worst = heap.pop().expect("non-empty");
        let m = 0.5 * (worst.a + worst.b);
        if m <= worst.a || m >= worst.b {
            heap.push(worst);
            break;
        }
        let (l, r) = (panel(&f, worst.a, m), panel(&f, m, worst.b));
        total_err += l.error + r.error - worst.error;
        magnitude += l.value.abs() + r.value.abs() - worst.value.abs();
        heap.push(l);
        heap.push(r);
    }
    let mut panels = heap.into_vec();
    panels.sort_by(|p, q| p.a.total_cmp(&q.a));
    panels.iter().map(|p| p.value).sum()
}

/// Integrates over `[a, b]`, restarting the adaptive rule at each interior breakpoint.
pub fn integrate_with_breaks<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, breaks: &[f64], abs_tol: f64) -> f64 {
    let mut cuts: Vec<f64> = breaks.iter().copied().filter(|&p| p > a && p < b).collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let mut edges = Vec::with_capacity(cuts.len() + 2);
    edges.push(a);
    edges.extend(cuts);
    edges.push(b);
    let share = abs_tol / (edges.len() - 1) as f64;
    edges.windows(2).map(|w| integrate(&f, w[0], w[1], share)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_of_degree_22_is_exact_on_one_panel() {
        let (k, _) = kronrod15(&|x: f64| x.powi(22), -1.0, 1.0);
        assert!((k - 2.0 / 23.0).abs() < 1e-15);
    }

    #[test]
    fn narrow_gaussian() {
        let s = 0.01;
        let v = integrate(|x: f64| (-(x - 0.3) * (x - 0.3) / (2.0 * s * s)).exp(), -2.0, 3.0, 1e-14);
        assert!((v - s * (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-13);
    }
}
