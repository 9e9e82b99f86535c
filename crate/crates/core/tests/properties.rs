use std::sync::{Arc, OnceLock};

use proptest::prelude::*;

use mfg_select::cost_eval::selection_gap;
use mfg_select::decoupling_field::{psi, psi_bound};
use mfg_select::fields::{g_eval, g_tilde_eval};
use mfg_select::nplayer_sim::{leave_one_out_mean, ParticleSystem};
use mfg_select::rng::{normals, Domain};
use mfg_select::{CoefficientTable, EntropyField, ModelParams, ViscousField};

fn table() -> &'static Arc<CoefficientTable> {
    static T: OnceLock<Arc<CoefficientTable>> = OnceLock::new();
    T.get_or_init(|| Arc::new(CoefficientTable::from_params(&ModelParams::canonical(), 1e-3).unwrap()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn clocks_are_consistent(kappa in -1.0f64..2.0, delta in 0.1f64..0.9, sigma in 0.1f64..3.0) {
        let p = ModelParams { kappa, delta, sigma, ..ModelParams::canonical() };
        let t = CoefficientTable::from_params(&p, 1e-2).unwrap();
        let r0 = t.r0();
        for i in 0..t.grid().len() {
            prop_assert!((t.k[i] + t.r[i] - r0).abs() < 1e-10);
            prop_assert!(t.w[i] > 0.0);
        }
        prop_assert!(t.k.windows(2).all(|w| w[1] > w[0]));
        prop_assert!(t.r_delta > 0.0 && t.r_delta < r0);
        prop_assert!(selection_gap(&t) > 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn terminal_is_odd_bounded_and_non_increasing(x in -3.0f64..3.0, y in -3.0f64..3.0, r in 0.05f64..1.0) {
        prop_assert_eq!(g_eval(-x, r), -g_eval(x, r));
        prop_assert!(g_eval(x, r).abs() <= 1.0);
        let (lo, hi) = if x < y { (x, y) } else { (y, x) };
        prop_assert!(g_eval(lo, r) >= g_eval(hi, r));
    }

    #[test]
    fn smoothed_terminal_dominates(x in -3.0f64..3.0, frac in 0.01f64..0.49) {
        let r = table().r_delta;
        let gam = frac * r;
        prop_assert!(g_tilde_eval(x, r, gam).unwrap() >= g_eval(x, r));
    }

    #[test]
    fn entropy_field_is_odd_and_bounded(t in 0.0f64..1.0, x in -2.0f64..2.0) {
        let e = EntropyField::new(table().clone());
        prop_assert_eq!(e.eval(t, -x), -e.eval(t, x));
        prop_assert!(e.eval(t, x).abs() <= 1.0);
    }

    #[test]
    fn draws_depend_only_on_their_address(master in any::<u64>(), run in 0u64..1000, lane in 0u64..1000) {
        let a = normals(master, Domain::Particles, run, lane, 8);
        let b = normals(master, Domain::Particles, run, lane, 16);
        prop_assert_eq!(&a[..], &b[..8]);
        let c = normals(master, Domain::CommonNoise, run, lane, 8);
        prop_assert_ne!(a, c);
    }

    #[test]
    fn leave_one_out_of_equal_states(x in -5.0f64..5.0, n in 2usize..40, i in 0usize..40) {
        let sys = ParticleSystem {
            players: n,
            states: vec![x; n],
            controls: vec![0.0; n],
            increments: Vec::new(),
            seed: 0,
            run: 0,
        };
        let i = i % n;
        prop_assert!((leave_one_out_mean(&sys, i, 0).unwrap() - x).abs() <= 1e-12 * (1.0 + x.abs()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn viscous_field_is_odd_bounded_and_monotone(
        t in 0.0f64..0.999,
        x in -1.5f64..1.5,
        dx in 1e-4f64..0.5,
        sigma0 in 0.02f64..1.0,
    ) {
        let f = ViscousField::new(table().clone(), sigma0).unwrap();
        let v = f.eval(t, x);
        prop_assert!((f.eval(t, -x) + v).abs() <= 1e-10);
        prop_assert!(v.abs() <= 1.0 + 1e-12);
        prop_assert!(f.eval(t, x + dx) <= v + 1e-10);
    }

    #[test]
    fn psi_stays_below_its_bound(t in 0.0f64..0.49, frac in 0.01f64..0.99, sigma0 in 0.02f64..0.3) {
        let tab = table();
        let x = frac * (tab.r_at(t) - tab.r_delta);
        let f = ViscousField::new(tab.clone(), sigma0).unwrap();
        let e = EntropyField::new(tab.clone());
        let bound = psi_bound(tab, t, x, sigma0).unwrap();
        prop_assert!(psi(&f, &e, t, x).abs() <= bound + 1e-6);
        prop_assert!(psi(&f, &e, t, -x).abs() <= bound + 1e-6);
    }
}
