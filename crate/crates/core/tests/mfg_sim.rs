use std::sync::Arc;

use mfg_select::mfg_sim::{
    binomial_se, classify, drift_envelope_excess, hitting_lower_bound_check, quantile, selection_from_paths,
    selection_stats, simulate_ensemble, simulate_mu, simulate_with_noise, tau_epsilon, tau_gamma_escape,
    transition_stats, PathClass, TransitionPoint,
};
use mfg_select::{CoefficientTable, EntropyField, ModelParams, ViscousField};

fn table(dt: f64) -> Arc<CoefficientTable> {
    Arc::new(CoefficientTable::from_params(&ModelParams::canonical(), dt).unwrap())
}

#[test]
fn same_seed_same_path() {
    let t = table(1e-3);
    let f = ViscousField::new(t.clone(), 0.1).unwrap();
    let a = simulate_mu(&t, &f, 0.1, 7, 3).unwrap();
    let b = simulate_mu(&t, &f, 0.1, 7, 3).unwrap();
    let c = simulate_mu(&t, &f, 0.1, 7, 4).unwrap();
    assert_eq!(a.values, b.values);
    assert_ne!(a.values, c.values);
    assert_eq!(a.values[0], 0.0);
    assert_eq!(a.values.len(), t.grid().len());
}

#[test]
fn zero_noise_from_origin_stays_put() {
    let t = table(1e-3);
    let f = ViscousField::new(t.clone(), 0.1).unwrap();
    let zeros = vec![0.0; t.grid().steps()];
    let path = simulate_with_noise(&t, &f, 0.1, 0.0, &zeros).unwrap();
    assert!(path.iter().all(|v| *v == 0.0));
    assert_eq!(classify(&path, &t, 0.15), PathClass::Unclassified);
    assert!(simulate_with_noise(&t, &f, 0.1, 0.0, &zeros[1..]).is_err());
}

#[test]
fn entropy_dynamics_follow_the_rays() {
    // started off the origin, the σ₀ = 0 dynamics move at unit speed in the k clock
    let t = table(1e-3);
    let e = EntropyField::new(t.clone());
    let zeros = vec![0.0; t.grid().steps()];
    let path = simulate_with_noise(&t, &e, 0.0, 1e-3, &zeros).unwrap();
    assert_eq!(classify(&path, &t, 0.01), PathClass::Plus);
    let mirror = simulate_with_noise(&t, &e, 0.0, -1e-3, &zeros).unwrap();
    assert_eq!(classify(&mirror, &t, 0.01), PathClass::Minus);
}

#[test]
fn drift_envelope_holds_pathwise() {
    let t = table(1e-3);
    let f = ViscousField::new(t.clone(), 0.2).unwrap();
    for i in 0..50 {
        let p = simulate_mu(&t, &f, 0.2, 11, i).unwrap();
        assert!(drift_envelope_excess(&p, &t, 0.2) <= 1e-12, "path {i}");
    }
}

#[test]
fn small_noise_selects_the_rays_symmetrically() {
    let t = table(1e-3);
    let f = ViscousField::new(t.clone(), 0.05).unwrap();
    let ens = simulate_ensemble(&f, 2000, 20240601).unwrap();
    let rep = selection_stats(&ens, 0.15).unwrap();
    assert_eq!(rep.total(), 2000);
    assert!(rep.frac_plus + rep.frac_minus >= 0.95, "{rep:?}");
    assert!((rep.frac_plus - 0.5).abs() <= 0.07, "{rep:?}");
    assert_eq!(rep.hitting_time_quantiles.len(), 3);

    let terminal: Vec<f64> = ens.paths.iter().map(|p| p.values[p.values.len() - 1]).collect();
    let n = terminal.len() as f64;
    let mean = terminal.iter().sum::<f64>() / n;
    let var = terminal.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    assert!(mean.abs() <= 3.0 * (var / n).sqrt(), "mean {mean}");
}

#[test]
fn ensemble_is_independent_of_thread_count() {
    let t = table(1e-2);
    let f = ViscousField::new(t.clone(), 0.1).unwrap();
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| simulate_ensemble(&f, 64, 5).unwrap())
    };
    let (a, b) = (run(1), run(3));
    for (p, q) in a.paths.iter().zip(&b.paths) {
        assert_eq!(p.values, q.values);
    }
}

#[test]
fn classification_of_deterministic_rays() {
    let t = table(1e-3);
    let plus: Vec<f64> = t.k.clone();
    let minus: Vec<f64> = t.k.iter().map(|k| -k).collect();
    let rays = [plus.as_slice(), minus.as_slice()];
    let rep = selection_from_paths(rays.iter().copied(), &t, 0.15, None).unwrap();
    assert_eq!((rep.n_plus, rep.n_minus, rep.n_unclassified), (1, 1, 0));
    assert_eq!(rep.frac_plus, 0.5);
    assert!(rep.hitting_time_quantiles.is_empty());
    assert!(selection_from_paths(rays.iter().copied(), &t, 0.0, None).is_err());
}

#[test]
fn transition_point_quantities() {
    let tp = TransitionPoint::standard(0.05).unwrap();
    let l = 0.05f64.ln().abs().powf(1.0 / 9.0);
    assert!((tp.l - l).abs() < 1e-15);
    assert!((tp.epsilon0 - 0.0025 * l * l).abs() < 1e-15);
    assert_eq!(tp.t0, 0.05);
    assert!(TransitionPoint::standard(0.0).is_err());
    assert!(TransitionPoint::standard(1.5).is_err());
}

#[test]
fn hitting_and_escape_times() {
    let t = table(1e-3);
    let tp = TransitionPoint::standard(0.1).unwrap();
    // the +k ray exits [−ε₀, ε₀] when k_t first exceeds ε₀ and never escapes
    let ray = t.k.clone();
    let first = t.k.iter().position(|k| *k > tp.epsilon0).unwrap();
    assert_eq!(tau_epsilon(&ray, &t, tp.epsilon0), t.grid().nodes()[first]);
    assert_eq!(tau_gamma_escape(&ray, &t, 0.05, &tp, 1.0).unwrap(), t.horizon());
    // a path that exits and falls back escapes
    let mut back = ray.clone();
    for v in back.iter_mut().skip(first + 10) {
        *v = 0.0;
    }
    assert!(tau_gamma_escape(&back, &t, 0.05, &tp, 1.0).unwrap() < t.horizon());
    assert!(tau_gamma_escape(&ray, &t, 0.2, &tp, 1.0).is_err());
    // a path that never exits has τ = T
    let flat = vec![0.0; t.grid().len()];
    assert_eq!(tau_epsilon(&flat, &t, tp.epsilon0), t.horizon());
}

#[test]
fn late_hitting_becomes_rare() {
    let t = table(1e-3);
    let mut late = Vec::new();
    for sig in [0.2, 0.05] {
        let f = ViscousField::new(t.clone(), sig).unwrap();
        let ens = simulate_ensemble(&f, 400, 3).unwrap();
        let tp = TransitionPoint::standard(sig).unwrap();
        let st = transition_stats(&ens, &tp, 0.05, 0.1).unwrap();
        assert_eq!(st.paths, 400);
        late.push(st.late_fraction());
    }
    assert!(late[1] <= late[0], "{late:?}");
}

#[test]
fn hitting_probability_lower_bound() {
    let c = hitting_lower_bound_check(1.0, 0.5, 2000, 9).unwrap();
    assert!(c.holds(), "{c:?}");
    let far = hitting_lower_bound_check(2.0, 0.5, 2000, 9).unwrap();
    // coupled paths: reaching 2 implies reaching 1
    assert!(far.estimate <= c.estimate);
    assert!(hitting_lower_bound_check(0.5, 0.5, 10, 9).is_err());
}

#[test]
fn small_helpers() {
    assert_eq!(binomial_se(0.5, 100), 0.05);
    assert_eq!(binomial_se(0.5, 0), 0.0);
    let s = [1.0, 2.0, 3.0, 4.0];
    assert_eq!(quantile(&s, 0.5), 2.0);
    assert_eq!(quantile(&s, 0.9), 4.0);
    assert_eq!(quantile(&s, 0.0), 1.0);
    assert!(quantile(&[], 0.5).is_nan());
}
