mod common;

use proptest::prelude::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rbsde_core::expectation::{
    classify_ef, nonlinear_expectation, nonlinear_expectation_on, solve_bsde, ClassifyMode, Increments, Verdict,
};
use rbsde_core::{Driver, OptionalProcess, StoppingTime, TwoPhaseTree};

fn ordered_pair(rng: &mut ChaCha8Rng, tree: &TwoPhaseTree<f64>) -> (StoppingTime, StoppingTime) {
    let a = StoppingTime::from_fn(tree, |_| rng.gen_bool(0.2));
    let b = StoppingTime::from_fn(tree, |_| rng.gen_bool(0.2));
    (a.min(&b), a.max(&b))
}

/// Random value per realized stopping node of `beta`, spread over its paths.
fn measurable(rng: &mut ChaCha8Rng, tree: &TwoPhaseTree<f64>, beta: &StoppingTime) -> Vec<f64> {
    let node_values = OptionalProcess::from_fn(tree, |_| rng.gen_range(-2.0..2.0));
    (0..tree.path_count())
        .map(|p| node_values.get(beta.stop_point(tree, p)))
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 128, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn comparison(seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let tree = common::tree(&mut rng, 5);
        let driver = common::linear_driver(&mut rng, &tree);
        let (alpha, beta) = ordered_pair(&mut rng, &tree);
        let xi1 = measurable(&mut rng, &tree, &beta);
        let bump = measurable(&mut rng, &tree, &beta);
        let xi2: Vec<f64> = xi1.iter().zip(&bump).map(|(a, b)| a + b.abs()).collect();
        let e1 = nonlinear_expectation(&tree, &alpha, &beta, &xi1, &driver, &common::tol()).unwrap();
        let e2 = nonlinear_expectation(&tree, &alpha, &beta, &xi2, &driver, &common::tol()).unwrap();
        for (a, b) in e1.iter().zip(&e2) {
            prop_assert!(*a <= *b + 1e-12, "{} > {}", a, b);
        }
    }

    #[test]
    fn locality(seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let tree = common::tree(&mut rng, 5);
        let driver = common::linear_driver(&mut rng, &tree);
        let (alpha, beta) = ordered_pair(&mut rng, &tree);
        let xi = measurable(&mut rng, &tree, &beta);
        let full = nonlinear_expectation(&tree, &alpha, &beta, &xi, &driver, &common::tol()).unwrap();
        for atom in alpha.atoms(&tree) {
            let paths = tree.paths_through(atom.node);
            let event: Vec<bool> = (0..tree.path_count()).map(|p| paths.contains(&p)).collect();
            let masked_xi: Vec<f64> = xi.iter().zip(&event).map(|(&x, &e)| if e { x } else { 0.0 }).collect();
            let masked = nonlinear_expectation_on(
                &tree, &alpha, &beta, &masked_xi, &driver, Some(&event), &common::tol(),
            ).unwrap();
            for p in 0..tree.path_count() {
                let lhs = if event[p] { full[p] } else { 0.0 };
                prop_assert!((lhs - masked[p]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn horizon_consistency(seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let short = common::tree(&mut rng, 4);
        let long = TwoPhaseTree::new(short.steps() + 1, short.dt()).unwrap();
        let driver = common::linear_driver(&mut rng, &short);
        let (alpha, beta) = ordered_pair(&mut rng, &short);
        let xi = measurable(&mut rng, &short, &beta);
        let e_short = nonlinear_expectation(&short, &alpha, &beta, &xi, &driver, &common::tol()).unwrap();
        // same stopping rules read on the longer tree; they stop by the old horizon
        let lift = |t: &StoppingTime| StoppingTime::from_fn(&long, |p| {
            let k = long.step_of(p.node);
            k <= short.steps() && t.done(rbsde_core::Point { node: short.node_at(k, long.bits(p.node)), phase: p.phase })
                || k == short.steps()
        });
        let (alpha2, beta2) = (lift(&alpha), lift(&beta));
        let xi2: Vec<f64> = (0..long.path_count()).map(|p| xi[p >> 1]).collect();
        let e_long = nonlinear_expectation(&long, &alpha2, &beta2, &xi2, &driver, &common::tol()).unwrap();
        for p in 0..long.path_count() {
            prop_assert!((e_long[p] - e_short[p >> 1]).abs() <= 1e-12);
        }
    }

    #[test]
    fn drift_sign_decides_the_verdict(seed in any::<u64>(), sign in prop::sample::select(vec![-1.0, 0.0, 1.0])) {
        let mut rng = common::rng(seed);
        let tree = common::tree(&mut rng, 3);
        let driver = common::linear_driver(&mut rng, &tree);
        let xi = common::terminal(&mut rng, &tree);
        let mut inc = |_| sign * rng.gen_range(0.01..0.5);
        let dv = Increments {
            phase: (0..tree.inner_count()).map(&mut inc).collect(),
            step: (0..tree.inner_count()).map(&mut inc).collect(),
        };
        let x = solve_bsde(&tree, &xi, &driver, Some(&dv), &common::tol()).unwrap().y;
        let (zero, term) = (StoppingTime::zero(&tree), StoppingTime::terminal(&tree));
        let expected = match sign as i32 {
            1 => Verdict::Super,
            -1 => Verdict::Sub,
            _ => Verdict::Martingale,
        };
        for mode in [ClassifyMode::OneStep, ClassifyMode::Brute] {
            prop_assert_eq!(classify_ef(&tree, &x, &driver, &zero, &term, mode, &common::tol()).unwrap(), expected);
        }
    }

    #[test]
    fn one_step_and_brute_agree(seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let tree = common::tree(&mut rng, 3);
        let driver = common::linear_driver(&mut rng, &tree);
        let xi = common::terminal(&mut rng, &tree);
        // mixed-sign increments on a random subset of transitions
        let mut inc = |_| if rng.gen_bool(0.5) { 0.0 } else { rng.gen_range(-0.5..0.5) };
        let dv = Increments {
            phase: (0..tree.inner_count()).map(&mut inc).collect(),
            step: (0..tree.inner_count()).map(&mut inc).collect(),
        };
        let x = solve_bsde(&tree, &xi, &driver, Some(&dv), &common::tol()).unwrap().y;
        let (from, to) = ordered_pair(&mut rng, &tree);
        let one = classify_ef(&tree, &x, &driver, &from, &to, ClassifyMode::OneStep, &common::tol()).unwrap();
        let brute = classify_ef(&tree, &x, &driver, &from, &to, ClassifyMode::Brute, &common::tol()).unwrap();
        prop_assert_eq!(one, brute);
    }
}

#[test]
fn stability_in_the_data() {
    let mut rng = common::rng(7);
    for _ in 0..20 {
        let tree = common::tree(&mut rng, 5);
        let driver = common::linear_driver(&mut rng, &tree);
        let xi = common::terminal(&mut rng, &tree);
        let noise: Vec<f64> = (0..tree.path_count()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (zero, term) = (StoppingTime::zero(&tree), StoppingTime::terminal(&tree));
        let base = nonlinear_expectation(&tree, &zero, &term, &xi, &driver, &common::tol()).unwrap()[0];
        let mut last = f64::INFINITY;
        for h in [0.4, 0.2, 0.1, 0.05, 0.025] {
            let xi_h: Vec<f64> = xi.iter().zip(&noise).map(|(x, n)| x + h * n).collect();
            let d = driver.clone();
            let shifted = Driver::custom("shifted", d.lambda, d.mu, move |t, y, z| d.eval(t, y, z) + h);
            let v = nonlinear_expectation(&tree, &zero, &term, &xi_h, &shifted, &common::tol()).unwrap()[0];
            let gap = (v - base).abs();
            assert!(gap <= last + 1e-12, "gap {gap} after {last}");
            last = gap;
        }
        assert!(last < 0.1);
    }
}
