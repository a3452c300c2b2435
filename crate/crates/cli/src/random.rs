//! Seeded random scenarios.
//!
//! Every family produces barriers satisfying `L_AFTER(v) <= U_AT(v)`, the
//! tie condition under which stopping-system games have the RBSDE value.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rbsde_core::reflect::Barriers;
use rbsde_core::{OptionalProcess, Point, TwoPhaseTree};
use serde::{Deserialize, Serialize};

use crate::scenario::{process_table, DriverKind, DriverSpec, ScenarioFile, TerminalSpec, SCHEMA_VERSION};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BarrierFamily {
    /// Both phases of a node share a center; widths vanish with probability 0.2.
    #[default]
    Compatible,
    /// `AFTER` values of `L` lie below the neighbouring `AT` values, and
    /// symmetrically for `U`; semicontinuous from both sides.
    Semicontinuous,
    /// Like `Compatible` with strictly positive widths.
    Separated,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DriverFamily {
    Zero,
    Linear,
    Cubic,
}

pub fn barriers(rng: &mut ChaCha8Rng, tree: &TwoPhaseTree<f64>, family: BarrierFamily) -> Barriers<f64> {
    let (lower, upper) = match family {
        BarrierFamily::Compatible => centered(rng, tree, 0.2),
        BarrierFamily::Separated => centered(rng, tree, 0.0),
        BarrierFamily::Semicontinuous => semicontinuous(rng, tree),
    };
    let xi = (0..tree.path_count())
        .map(|p| {
            let leaf = tree.leaf(p);
            let (l, u) = (lower.at(leaf), upper.at(leaf));
            l + (u - l) * rng.gen_range(0.0..=1.0)
        })
        .collect();
    Barriers::new(tree, lower, upper, xi).expect("generated barriers are ordered")
}

fn centered(
    rng: &mut ChaCha8Rng,
    tree: &TwoPhaseTree<f64>,
    p_touch: f64,
) -> (OptionalProcess<f64>, OptionalProcess<f64>) {
    let center: Vec<f64> = (0..tree.node_count()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let width = |rng: &mut ChaCha8Rng| {
        if p_touch > 0.0 && rng.gen_bool(p_touch) {
            0.0
        } else {
            rng.gen_range(0.05..0.8)
        }
    };
    let lower = OptionalProcess::from_fn(tree, |p| center[p.node.index()] - width(rng));
    let upper = OptionalProcess::from_fn(tree, |p| center[p.node.index()] + width(rng));
    (lower, upper)
}

fn semicontinuous(rng: &mut ChaCha8Rng, tree: &TwoPhaseTree<f64>) -> (OptionalProcess<f64>, OptionalProcess<f64>) {
    let center: Vec<f64> = (0..tree.node_count()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut lower = OptionalProcess::constant(tree, 0.0);
    let mut upper = OptionalProcess::constant(tree, 0.0);
    let gap = |rng: &mut ChaCha8Rng, p: f64, hi: f64| if rng.gen_bool(p) { 0.0 } else { rng.gen_range(0.0..hi) };
    for v in tree.nodes() {
        let c = center[v.index()];
        lower.set(Point::at(v), c - gap(rng, 0.3, 0.6));
        upper.set(Point::at(v), c + gap(rng, 0.3, 0.6));
    }
    for v in tree.inner_nodes() {
        let (d, u) = tree.children(v).expect("inner node");
        let lo = lower.at(v).min(lower.at(d)).min(lower.at(u));
        let hi = upper.at(v).max(upper.at(d)).max(upper.at(u));
        lower.set(Point::after(v), lo - gap(rng, 0.5, 0.3));
        upper.set(Point::after(v), hi + gap(rng, 0.5, 0.3));
    }
    (lower, upper)
}

pub fn driver(rng: &mut ChaCha8Rng, tree: &TwoPhaseTree<f64>, family: DriverFamily) -> DriverSpec {
    let kind = match family {
        DriverFamily::Zero => DriverKind::Zero,
        DriverFamily::Linear => {
            let cmax = 0.9 / tree.sqrt_dt();
            DriverKind::Linear {
                a: rng.gen_range(-1.0..1.0),
                b: rng.gen_range(-1.0..0.5),
                c: rng.gen_range(-cmax..cmax),
            }
        }
        DriverFamily::Cubic => DriverKind::Cubic {
            k: rng.gen_range(0.5..3.0),
        },
    };
    DriverSpec {
        kind,
        lambda: None,
        mu: None,
        gamma: None,
        eta: None,
        g: None,
    }
}

/// A self-contained scenario file (explicit tables) drawn from `seed`.
pub fn scenario_file(seed: u64, steps: usize, barrier: BarrierFamily, driver_family: DriverFamily) -> ScenarioFile {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dt = rng.gen_range(0.05..0.5);
    let tree = TwoPhaseTree::new(steps, dt).expect("positive steps and dt");
    let b = barriers(&mut rng, &tree, barrier);
    let driver = driver(&mut rng, &tree, driver_family);
    ScenarioFile {
        version: SCHEMA_VERSION.to_string(),
        name: Some(format!("random-{seed}")),
        steps,
        dt,
        lower: Some(process_table(&tree, &b.lower)),
        upper: Some(process_table(&tree, &b.upper)),
        terminal: Some(TerminalSpec::Table { values: b.terminal }),
        driver,
        tolerances: None,
        seed: Some(seed),
        random: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::build_scenario;
    use rbsde_core::games::tie_compatible;
    use rbsde_core::semicontinuity;

    #[test]
    fn families_have_their_shape() {
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let tree = TwoPhaseTree::new(3, 0.25).unwrap();
            let b = barriers(&mut rng, &tree, BarrierFamily::Semicontinuous);
            assert!(tie_compatible(&tree, &b));
            assert!(semicontinuity(&tree, &b.lower).usc());
            assert!(semicontinuity(&tree, &b.upper).lsc());
            let b = barriers(&mut rng, &tree, BarrierFamily::Separated);
            assert!(tree.points().all(|p| b.lower.get(p) < b.upper.get(p)));
            assert!(tie_compatible(
                &tree,
                &barriers(&mut rng, &tree, BarrierFamily::Compatible)
            ));
        }
    }

    #[test]
    fn generated_files_load_back() {
        let file = scenario_file(3, 2, BarrierFamily::Compatible, DriverFamily::Linear);
        let text = serde_json::to_string(&file).unwrap();
        let back: ScenarioFile = serde_json::from_str(&text).unwrap();
        assert_eq!(back, file);
        build_scenario(back, None).unwrap();
    }
}
