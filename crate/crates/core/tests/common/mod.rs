#![allow(dead_code)]

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rbsde_core::reflect::Barriers;
use rbsde_core::{Driver, OptionalProcess, Point, Tolerances, TwoPhaseTree};

pub fn tol() -> Tolerances<f64> {
    Tolerances::default()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Barriers around a per-node center shared by both phases, so that
/// `L_AFTER <= center <= U_AT` always holds. Widths are zero with some
/// probability to create contact.
pub fn barriers(rng: &mut ChaCha8Rng, tree: &TwoPhaseTree<f64>) -> Barriers<f64> {
    let center = OptionalProcess::from_fn(tree, |_| rng.gen_range(-1.0..1.0));
    let width = |rng: &mut ChaCha8Rng| {
        if rng.gen_bool(0.2) {
            0.0
        } else {
            rng.gen_range(0.0..0.8)
        }
    };
    let lower = OptionalProcess::from_fn(tree, |p| center.at(p.node) - width(rng));
    let upper = OptionalProcess::from_fn(tree, |p| center.at(p.node) + width(rng));
    let xi = (0..tree.path_count())
        .map(|p| {
            let leaf = tree.leaf(p);
            let (l, u) = (lower.at(leaf), upper.at(leaf));
            l + (u - l) * rng.gen_range(0.0..=1.0)
        })
        .collect();
    Barriers::new(tree, lower, upper, xi).unwrap()
}

/// Linear driver `a + b y + c z` with `|c| sqrt(dt) < 1` and `b dt < 1`.
pub fn linear_driver(rng: &mut ChaCha8Rng, tree: &TwoPhaseTree<f64>) -> Driver<f64> {
    let cmax = 0.9 / tree.sqrt_dt();
    Driver::linear(
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..0.5),
        rng.gen_range(-cmax..cmax),
    )
}

pub fn tree(rng: &mut ChaCha8Rng, max_steps: usize) -> TwoPhaseTree<f64> {
    let n = rng.gen_range(1..=max_steps);
    TwoPhaseTree::new(n, rng.gen_range(0.05..0.5)).unwrap()
}

pub fn terminal(rng: &mut ChaCha8Rng, tree: &TwoPhaseTree<f64>) -> Vec<f64> {
    (0..tree.path_count()).map(|_| rng.gen_range(-2.0..2.0)).collect()
}

pub fn points(tree: &TwoPhaseTree<f64>) -> Vec<Point> {
    tree.points().collect()
}

/// Upper semicontinuous `L` and lower semicontinuous `U` on both sides:
/// every `AFTER` value of `L` lies below the neighbouring `AT` values, and
/// symmetrically for `U`.
pub fn semicontinuous_barriers(rng: &mut ChaCha8Rng, tree: &TwoPhaseTree<f64>) -> Barriers<f64> {
    let center: Vec<f64> = (0..tree.node_count()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut lower = OptionalProcess::constant(tree, 0.0);
    let mut upper = OptionalProcess::constant(tree, 0.0);
    for v in tree.nodes() {
        let c = center[v.index()];
        lower.set(
            Point::at(v),
            c - if rng.gen_bool(0.3) {
                0.0
            } else {
                rng.gen_range(0.0..0.6)
            },
        );
        upper.set(
            Point::at(v),
            c + if rng.gen_bool(0.3) {
                0.0
            } else {
                rng.gen_range(0.0..0.6)
            },
        );
    }
    for v in tree.inner_nodes() {
        let (d, u) = tree.children(v).unwrap();
        let lo = lower.at(v).min(lower.at(d)).min(lower.at(u));
        let hi = upper.at(v).max(upper.at(d)).max(upper.at(u));
        lower.set(
            Point::after(v),
            lo - if rng.gen_bool(0.5) {
                0.0
            } else {
                rng.gen_range(0.0..0.3)
            },
        );
        upper.set(
            Point::after(v),
            hi + if rng.gen_bool(0.5) {
                0.0
            } else {
                rng.gen_range(0.0..0.3)
            },
        );
    }
    let xi = (0..tree.path_count())
        .map(|p| {
            let leaf = tree.leaf(p);
            let (l, u) = (lower.at(leaf), upper.at(leaf));
            l + (u - l) * rng.gen_range(0.0..=1.0)
        })
        .collect();
    Barriers::new(tree, lower, upper, xi).unwrap()
}
