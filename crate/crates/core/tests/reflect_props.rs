mod common;

use proptest::prelude::*;
use rand::Rng;
use rbsde_core::expectation::{classify_ef, ClassifyMode, Verdict};
use rbsde_core::reflect::{
    check_continuity, check_minimality, dynamics_residual, mokobodzki_witness, snell_envelopes, solve_rbsde,
    truncation_scheme, Barriers, TruncationParams, WitnessOutcome,
};
use rbsde_core::{Driver, OptionalProcess, Point, StoppingTime, TwoPhaseTree};

proptest! {
    #![proptest_config(ProptestConfig { cases: 200, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn solver_output_is_minimal(seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let tree = common::tree(&mut rng, 6);
        let b = common::barriers(&mut rng, &tree);
        let driver = common::linear_driver(&mut rng, &tree);
        let s = solve_rbsde(&tree, &b, &driver, &common::tol()).unwrap();
        let report = check_minimality(&tree, &s, &b, &common::tol());
        prop_assert!(report.pass, "{:?}", report.violations);
        prop_assert!(report.singular && report.inside);
        prop_assert!(dynamics_residual(&tree, &s, &b, &driver) <= 1e-10);
    }

    #[test]
    fn untouched_barriers_do_not_push(seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let tree = common::tree(&mut rng, 6);
        let b = common::barriers(&mut rng, &tree);
        let driver = common::linear_driver(&mut rng, &tree);
        let s = solve_rbsde(&tree, &b, &driver, &common::tol()).unwrap();
        let touches_lower = tree.points().any(|p| s.y.get(p) == b.lower.get(p));
        let touches_upper = tree.points().any(|p| s.y.get(p) == b.upper.get(p));
        let (rp, rm) = s.cumulative(&tree);
        if !touches_lower {
            prop_assert!(tree.points().all(|p| rp.get(p) == 0.0));
        }
        if !touches_upper {
            prop_assert!(tree.points().all(|p| rm.get(p) == 0.0));
        }
    }

    #[test]
    fn left_semicontinuity_bounds_step_pushes(seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let tree = common::tree(&mut rng, 5);
        // nondecreasing lower barrier along edges, nonincreasing upper: left-USC L and left-LSC U
        let step = 0.99 / (2 * tree.steps() + 1) as f64;
        let bump = OptionalProcess::from_fn(&tree, |_| rng.gen_range(0.0..step));
        let mut lower = OptionalProcess::constant(&tree, 0.0);
        let mut upper = OptionalProcess::constant(&tree, 0.0);
        for p in tree.points() {
            let prev = tree.previous(p);
            let (l0, u0): (f64, f64) = prev.map(|q| (lower.get(q), upper.get(q))).unwrap_or((-1.0, 1.0));
            lower.set(p, l0 + bump.get(p));
            upper.set(p, u0 - bump.get(p));
        }
        let xi = (0..tree.path_count()).map(|q| lower.at(tree.leaf(q))).collect();
        let b = Barriers::new(&tree, lower, upper, xi).unwrap();
        let driver = common::linear_driver(&mut rng, &tree);
        let s = solve_rbsde(&tree, &b, &driver, &common::tol()).unwrap();
        let c = check_continuity(&tree, &s, &b, &driver);
        prop_assert!(c.lower_applies && c.upper_applies);
        prop_assert!(c.pass(1e-12), "{:?}", c);
        let s0 = solve_rbsde(&tree, &b, &Driver::zero(), &common::tol()).unwrap();
        prop_assert!(s0.r_plus.step.iter().chain(&s0.r_minus.step).all(|&r| r == 0.0));
    }

    #[test]
    fn snell_envelopes_bracket_and_are_supermartingales(seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let tree = common::tree(&mut rng, 3);
        let b = common::barriers(&mut rng, &tree);
        let (lh, uh) = snell_envelopes(&tree, &b);
        prop_assert!(tree.points().all(|p| lh.get(p) <= b.lower.get(p) && b.upper.get(p) <= uh.get(p)));
        let (zero, term) = (StoppingTime::zero(&tree), StoppingTime::terminal(&tree));
        let f0 = Driver::zero();
        let neg = lh.map(|v| -v);
        for x in [&neg, &uh] {
            let v = classify_ef(&tree, x, &f0, &zero, &term, ClassifyMode::Brute, &common::tol()).unwrap();
            prop_assert!(v.is_super(), "{v}");
        }
    }

    #[test]
    fn witness_lies_between_separated_barriers(seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let tree = common::tree(&mut rng, 6);
        let center = OptionalProcess::from_fn(&tree, |_| rng.gen_range(-1.0..1.0));
        let lower = center.map(|c| c - 0.01 - rng.gen_range(0.0..0.5));
        let upper = center.map(|c| c + 0.01 + rng.gen_range(0.0..0.5));
        let xi = (0..tree.path_count()).map(|p| center.at(tree.leaf(p))).collect();
        let b = Barriers::new(&tree, lower, upper, xi).unwrap();
        match mokobodzki_witness(&tree, &b) {
            WitnessOutcome::Witness(w) => {
                prop_assert!(tree.points().all(|p| b.lower.get(p) <= w.x.get(p) && w.x.get(p) <= b.upper.get(p)));
                prop_assert!(w.cut_times.windows(2).all(|c| c[0].le(&c[1])));
            }
            other => prop_assert!(false, "unexpected {:?}", other),
        }
    }

    #[test]
    fn touching_barriers_report_the_first_contact(seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let tree = common::tree(&mut rng, 5);
        let points: Vec<Point> = tree.points().collect();
        let touch = points[rng.gen_range(0..points.len())];
        let lower = OptionalProcess::constant(&tree, -1.0);
        let mut upper = OptionalProcess::<f64>::constant(&tree, 1.0);
        upper.set(touch, -1.0);
        let xi = (0..tree.path_count()).map(|p| upper.at(tree.leaf(p)).min(0.0)).collect();
        let b = Barriers::new(&tree, lower, upper, xi).unwrap();
        match mokobodzki_witness(&tree, &b) {
            WitnessOutcome::SeparationFailure { point, lower, upper } => {
                prop_assert_eq!(point, touch);
                prop_assert_eq!((lower, upper), (-1.0, -1.0));
            }
            other => prop_assert!(false, "unexpected {:?}", other),
        }
    }

    #[test]
    fn truncation_scheme_is_monotone_and_converges(seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let tree = common::tree(&mut rng, 3);
        let b = common::barriers(&mut rng, &tree);
        let driver = Driver::cubic(rng.gen_range(0.5..3.0));
        let params = TruncationParams {
            cut_step: if rng.gen_bool(0.5) { Some(rng.gen_range(0..=tree.steps())) } else { None },
            ..Default::default()
        };
        let r = truncation_scheme(&tree, &b, &driver, &params, &common::tol()).unwrap();
        prop_assert!(r.monotone, "n {} m {}", r.n_violation, r.m_violation);
        prop_assert!(r.converged, "gap {}", r.limit_gap);
    }
}

#[test]
fn stability_of_the_reflected_solution() {
    let mut rng = common::rng(11);
    for _ in 0..20 {
        let tree = common::tree(&mut rng, 5);
        let b = common::barriers(&mut rng, &tree);
        let driver = common::linear_driver(&mut rng, &tree);
        let base = solve_rbsde(&tree, &b, &driver, &common::tol()).unwrap().y;
        let mut last = f64::INFINITY;
        for h in [0.4, 0.2, 0.1, 0.05] {
            let d = driver.clone();
            let shifted = Driver::custom("shifted", d.lambda, d.mu, move |t, y, z| d.eval(t, y, z) + h);
            let y = solve_rbsde(&tree, &b, &shifted, &common::tol()).unwrap().y;
            let gap = y.max_abs_diff(&base);
            assert!(gap <= last + 1e-12);
            last = gap;
        }
        assert!(last <= 0.05 * tree.horizon() + 1e-12);
    }
}

#[test]
fn martingale_lower_barrier_is_its_own_envelope() {
    let tree = TwoPhaseTree::new(3, 0.2).unwrap();
    let xi: Vec<f64> = (0..8).map(|p| p as f64).collect();
    let m = rbsde_core::solve_bsde(&tree, &xi, &Driver::zero(), None, &common::tol())
        .unwrap()
        .y;
    let b = Barriers::new(&tree, m.clone(), m.map(|v| v + 1.0), xi).unwrap();
    let (lh, _) = snell_envelopes(&tree, &b);
    assert!(lh.max_abs_diff(&m) < 1e-12);
    let v = classify_ef(
        &tree,
        &lh,
        &Driver::zero(),
        &StoppingTime::zero(&tree),
        &StoppingTime::terminal(&tree),
        ClassifyMode::OneStep,
        &common::tol(),
    )
    .unwrap();
    assert_eq!(v, Verdict::Martingale);
}
