//! Property tests: structural invariants of the loping rule, the relaxation
//! functions, the weighted spaces, and the text-format parsers.

use kaczmarz::doping::{format_profile, parse_profile};
use kaczmarz::harness::parse_config;
use kaczmarz::radon::parse_scene;
use kaczmarz::{loping_weight, ParameterVector, RelaxationFunction};
use proptest::prelude::*;

fn vec_strategy(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1e6..1e6f64, len)
}

proptest! {
    #[test]
    fn loping_is_monotone_in_the_residual_and_noise(
        rn in 0.0..1e9f64,
        bump in 0.0..1e9f64,
        tau in 2.0..50.0f64,
        delta in 0.0..1e6f64,
    ) {
        if loping_weight(rn, tau, delta) {
            prop_assert!(loping_weight(rn + bump, tau, delta));
        } else {
            prop_assert!(!loping_weight(rn, tau, delta + 1.0));
        }
    }

    #[test]
    fn exact_data_always_updates(rn in 0.0..1e9f64, tau in 2.0..50.0f64) {
        prop_assert!(loping_weight(rn, tau, 0.0));
    }

    #[test]
    fn the_discrepancy_threshold_itself_still_updates(
        tau in 2.0..50.0f64,
        delta in 1e-9..1e6f64,
    ) {
        prop_assert!(loping_weight(tau * delta, tau, delta));
        prop_assert!(!loping_weight(tau * delta * (1.0 - 1e-12), tau, delta));
    }

    #[test]
    fn clamped_linear_relaxation_is_monotone_bounded_and_sublinear(
        scale in 1e-6..=1.0f64,
        cap in 1e-6..1e6f64,
        s1 in 1e-9..1e12f64,
        s2 in 1e-9..1e12f64,
    ) {
        let phi = RelaxationFunction::ClampedLinear { scale, cap };
        let (lo, hi) = if s1 <= s2 { (s1, s2) } else { (s2, s1) };
        prop_assert!(phi.evaluate(lo) <= phi.evaluate(hi));
        let v = phi.evaluate(lo);
        prop_assert!(v > 0.0);
        prop_assert!(v <= phi.alpha_max());
        prop_assert!(v <= scale * lo);
        prop_assert!(phi.validate_for_bound(1.0).is_ok());
    }

    #[test]
    fn constant_relaxation_validates_against_the_norm_bound(
        c in 1e-9..10.0f64,
        m in 0.1..10.0f64,
    ) {
        let ok = RelaxationFunction::Constant(c).validate_for_bound(m).is_ok();
        prop_assert_eq!(ok, c * m * m <= 1.0 + 1e-12);
    }

    #[test]
    fn weighted_inner_products_behave_like_inner_products(
        dims in (1usize..6, 1usize..6)
            .prop_flat_map(|(r, c)| (Just(r), Just(c), vec_strategy(r * c), vec_strategy(r * c))),
        w in 1e-6..1e3f64,
        lam in -100.0..100.0f64,
    ) {
        let (r, c, av, bv) = dims;
        let a = ParameterVector::new(av, r, c, w).unwrap();
        let b = ParameterVector::new(bv, r, c, w).unwrap();
        prop_assert_eq!(a.inner(&b).unwrap(), b.inner(&a).unwrap());
        let n2 = a.inner(&a).unwrap();
        prop_assert!(n2 >= 0.0);
        prop_assert!((a.norm() * a.norm() - n2).abs() <= 1e-12 * n2.max(1e-300));
        prop_assert_eq!(a.diff_norm(&a).unwrap(), 0.0);
        let mut s = a.clone();
        s.axpy(lam, &b).unwrap();
        prop_assert!(s.norm() <= (a.norm() + lam.abs() * b.norm()) * (1.0 + 1e-12));
    }

    #[test]
    fn clamping_respects_the_bounds(
        dims in (2usize..6, 2usize..6).prop_flat_map(|(r, c)| (Just(r), Just(c), vec_strategy(r * c))),
        lo in -10.0..0.0f64,
        hi in 0.0..10.0f64,
    ) {
        let (r, c, v) = dims;
        let mut x = ParameterVector::new(v, r, c, 1.0).unwrap();
        x.clamp_values(lo, hi);
        prop_assert!(x.values().iter().all(|v| *v >= lo && *v <= hi));
    }

    #[test]
    fn scene_parser_never_panics(text in ".{0,200}") {
        let _ = parse_scene(&text);
    }

    #[test]
    fn profile_parser_never_panics(text in ".{0,200}") {
        let _ = parse_profile(&text);
    }

    #[test]
    fn config_parser_never_panics(text in ".{0,300}") {
        let _ = parse_config(&text);
    }

    #[test]
    fn config_parser_never_panics_on_keyish_input(
        key in "[a-z_]{1,12}",
        val in "[-0-9a-z. ]{0,12}",
    ) {
        let _ = parse_config(&format!("problem = radon\n{key} = {val}\n"));
    }

    #[test]
    fn well_formed_scene_lines_parse(
        cx in -0.9..0.9f64,
        cy in -0.9..0.9f64,
        r in 0.01..0.5f64,
        amp in -2.0..2.0f64,
    ) {
        let text = format!("disc {cx} {cy} {r} {amp}\n# comment\n\ngaussian {cx} {cy} {r} {amp}\n");
        let shapes = parse_scene(&text).unwrap();
        prop_assert_eq!(shapes.len(), 2);
    }

    #[test]
    fn profile_dumps_roundtrip_exactly(
        grid in (2usize..7).prop_flat_map(|m| (Just(m), vec_strategy(m * m))),
    ) {
        let (m, v) = grid;
        let spacing = 1.0 / (m - 1) as f64;
        let x = ParameterVector::new(v, m, m, spacing * spacing).unwrap();
        let y = parse_profile(&format_profile(&x)).unwrap();
        prop_assert_eq!(x.values(), y.values());
        prop_assert_eq!(y.rows(), m);
    }
}
