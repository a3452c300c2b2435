//! Scenario files (JSON, schema `v1`) and their materialization.
//!
//! ```json
//! {
//!   "version": "v1",
//!   "steps": 2,
//!   "dt": 0.5,
//!   "lower": { "kind": "constant", "value": -1.0 },
//!   "upper": { "kind": "affine", "a": 1.0, "b": 0.5, "after_shift": 0.1 },
//!   "terminal": { "kind": "constant", "value": 0.0 },
//!   "driver": { "name": "linear", "a": 0.0, "b": -0.5, "c": 0.2 }
//! }
//! ```
//!
//! Tables list values step by step, each step ordered by path bits (first
//! move in the most significant bit, 1 = up). Instead of `lower`, `upper`
//! and `terminal` a `random` block draws them from `seed`.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rbsde_core::reflect::Barriers;
use rbsde_core::{Driver, OptionalProcess, Point, Tolerances, TwoPhaseTree};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::random::{self, BarrierFamily};

pub const SCHEMA_VERSION: &str = "v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub steps: usize,
    pub dt: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower: Option<ProcessSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper: Option<ProcessSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub terminal: Option<TerminalSpec>,
    pub driver: DriverSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerances: Option<ToleranceSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub random: Option<RandomSpec>,
}

/// A barrier process.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ProcessSpec {
    /// `value` at every `AT` point, `after` (default `value`) at every `AFTER` point.
    Constant {
        value: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        after: Option<f64>,
    },
    /// `a + b B` at `AT` points, shifted by `after_shift` at `AFTER` points.
    Affine {
        a: f64,
        b: f64,
        #[serde(default)]
        after_shift: f64,
    },
    /// `at[k]` has `2^k` entries for `k = 0..=N`, `after[k]` for `k = 0..N`.
    Table { at: Vec<Vec<f64>>, after: Vec<Vec<f64>> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum TerminalSpec {
    Constant {
        value: f64,
    },
    /// `a + b B_T`.
    Affine {
        a: f64,
        b: f64,
    },
    /// One value per path.
    Table {
        values: Vec<f64>,
    },
    /// The lower barrier at `T`.
    Lower,
    /// The upper barrier at `T`.
    Upper,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriverSpec {
    #[serde(flatten)]
    pub kind: DriverKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    /// Constant bound `g >= 0` of the growth condition.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g: Option<f64>,
}

/// Driver catalog.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "lowercase")]
pub enum DriverKind {
    Zero,
    Constant {
        c: f64,
    },
    /// `a + b y + c z`
    Linear {
        a: f64,
        b: f64,
        c: f64,
    },
    /// `-k y^3 - y`
    Cubic {
        k: f64,
    },
    /// `sum coef y^y_power z^z_power`; `lambda` and `mu` must be declared.
    Polynomial {
        terms: Vec<Term>,
    },
    /// `max(min(inner, upper), -lower)`
    Truncated {
        inner: Box<DriverSpec>,
        upper: f64,
        lower: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Term {
    pub coef: f64,
    #[serde(default)]
    pub y_power: u32,
    #[serde(default)]
    pub z_power: u32,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToleranceSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub root: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comp: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conv: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub game: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iter: Option<usize>,
}

impl ToleranceSpec {
    pub fn apply(&self, mut tol: Tolerances<f64>) -> Tolerances<f64> {
        let set = |slot: &mut f64, v: Option<f64>| {
            if let Some(v) = v {
                *slot = v;
            }
        };
        set(&mut tol.root, self.root);
        set(&mut tol.comp, self.comp);
        set(&mut tol.conv, self.conv);
        set(&mut tol.game, self.game);
        set(&mut tol.class, self.class);
        if let Some(m) = self.max_iter {
            tol.max_iter = m;
        }
        tol
    }
}

/// Draws `lower`, `upper` and `terminal` from `seed`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomSpec {
    #[serde(default)]
    pub family: BarrierFamily,
}

/// A loaded scenario with the tree and processes built.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub name: String,
    pub file: ScenarioFile,
    pub tree: TwoPhaseTree<f64>,
    pub barriers: Barriers<f64>,
    pub driver: Driver<f64>,
    pub tolerances: Tolerances<f64>,
}

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("{pointer}: {message}")]
    Schema { pointer: String, message: String },
    #[error("barrier violation: {0}")]
    Barrier(rbsde_core::Error),
}

impl LoadError {
    fn schema(pointer: &str, message: impl Into<String>) -> Self {
        LoadError::Schema {
            pointer: pointer.to_string(),
            message: message.into(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            LoadError::Io { .. } => "io",
            LoadError::Schema { .. } => "schema",
            LoadError::Barrier(_) => "barrier",
        }
    }

    pub fn pointer(&self) -> Option<&str> {
        match self {
            LoadError::Schema { pointer, .. } => Some(pointer),
            _ => None,
        }
    }
}

fn json_pointer(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in path.iter() {
        match seg {
            Segment::Seq { index } => out.push_str(&format!("/{index}")),
            Segment::Map { key } => out.push_str(&format!("/{}", key.replace('~', "~0").replace('/', "~1"))),
            Segment::Enum { variant } => out.push_str(&format!("/{variant}")),
            Segment::Unknown => {}
        }
    }
    if out.is_empty() {
        "/".to_string()
    } else {
        out
    }
}

pub fn load_scenario(path: &Path) -> Result<Scenario, LoadError> {
    let text = std::fs::read_to_string(path).map_err(|e| LoadError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let fallback = path.file_stem().map(|s| s.to_string_lossy().into_owned());
    parse_scenario(&text, fallback.as_deref())
}

pub fn parse_scenario(text: &str, fallback_name: Option<&str>) -> Result<Scenario, LoadError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let file: ScenarioFile = serde_path_to_error::deserialize(de).map_err(|e| {
        let pointer = json_pointer(e.path());
        LoadError::schema(&pointer, e.inner().to_string())
    })?;
    build_scenario(file, fallback_name)
}

pub fn build_scenario(file: ScenarioFile, fallback_name: Option<&str>) -> Result<Scenario, LoadError> {
    if file.version != SCHEMA_VERSION {
        return Err(LoadError::schema(
            "/version",
            format!("unsupported version {:?}, expected {SCHEMA_VERSION:?}", file.version),
        ));
    }
    let tree = TwoPhaseTree::new(file.steps, file.dt).map_err(|e| {
        let pointer = if file.steps == 0 { "/steps" } else { "/dt" };
        LoadError::schema(pointer, e.to_string())
    })?;
    if file.steps > 20 {
        return Err(LoadError::schema("/steps", "at most 20 steps are supported"));
    }
    let driver = build_driver(&tree, &file.driver, "/driver")?;
    if !driver.step_solvable(file.dt) {
        return Err(LoadError::schema(
            "/driver/mu",
            format!("dt * max(0, mu) = {} must be below 1", file.dt * driver.mu),
        ));
    }
    let barriers = match (&file.random, &file.lower, &file.upper, &file.terminal) {
        (Some(spec), None, None, None) => {
            let mut rng = ChaCha8Rng::seed_from_u64(file.seed.unwrap_or(0));
            random::barriers(&mut rng, &tree, spec.family)
        }
        (Some(_), ..) => {
            return Err(LoadError::schema(
                "/random",
                "give either `random` or lower/upper/terminal, not both",
            ))
        }
        (None, Some(l), Some(u), Some(t)) => {
            let lower = build_process(&tree, l, "/lower")?;
            let upper = build_process(&tree, u, "/upper")?;
            let terminal = build_terminal(&tree, t, &lower, &upper, "/terminal")?;
            Barriers::new(&tree, lower, upper, terminal).map_err(LoadError::Barrier)?
        }
        (None, l, u, _) => {
            let missing = if l.is_none() {
                "/lower"
            } else if u.is_none() {
                "/upper"
            } else {
                "/terminal"
            };
            return Err(LoadError::schema(missing, "missing field (or give a `random` block)"));
        }
    };
    let tolerances = file.tolerances.clone().unwrap_or_default().apply(Tolerances::default());
    for (name, v) in [
        ("root", tolerances.root),
        ("comp", tolerances.comp),
        ("conv", tolerances.conv),
        ("game", tolerances.game),
        ("class", tolerances.class),
    ] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(LoadError::schema(
                &format!("/tolerances/{name}"),
                "tolerance must be positive",
            ));
        }
    }
    let name = file
        .name
        .clone()
        .or_else(|| fallback_name.map(str::to_string))
        .unwrap_or_else(|| "scenario".to_string());
    Ok(Scenario {
        name,
        file,
        tree,
        barriers,
        driver,
        tolerances,
    })
}

pub fn build_driver(tree: &TwoPhaseTree<f64>, spec: &DriverSpec, pointer: &str) -> Result<Driver<f64>, LoadError> {
    let mut driver = match &spec.kind {
        DriverKind::Zero => Driver::zero(),
        DriverKind::Constant { c } => Driver::constant(*c),
        DriverKind::Linear { a, b, c } => Driver::linear(*a, *b, *c),
        DriverKind::Cubic { k } => {
            if *k < 0.0 {
                return Err(LoadError::schema(&format!("{pointer}/k"), "k must be nonnegative"));
            }
            Driver::cubic(*k)
        }
        DriverKind::Polynomial { terms } => {
            let (Some(lambda), Some(mu)) = (spec.lambda, spec.mu) else {
                return Err(LoadError::schema(
                    pointer,
                    "polynomial drivers must declare lambda and mu",
                ));
            };
            Driver::polynomial(
                terms.iter().map(|t| (t.coef, t.y_power, t.z_power)).collect(),
                lambda,
                mu,
            )
        }
        DriverKind::Truncated { inner, upper, lower } => {
            build_driver(tree, inner, &format!("{pointer}/inner"))?.truncated(*upper, *lower)
        }
    };
    if spec.lambda.is_some() || spec.mu.is_some() {
        let (lambda, mu) = (spec.lambda.unwrap_or(driver.lambda), spec.mu.unwrap_or(driver.mu));
        driver = driver.with_constants(lambda, mu);
    }
    if let Some(gamma) = spec.gamma {
        let eta = spec.eta.unwrap_or(0.0);
        if !(0.0..1.0).contains(&eta) {
            return Err(LoadError::schema(&format!("{pointer}/eta"), "eta must lie in [0, 1)"));
        }
        let g = spec.g.unwrap_or(0.0);
        if g < 0.0 {
            return Err(LoadError::schema(&format!("{pointer}/g"), "g must be nonnegative"));
        }
        driver = driver.with_growth(gamma, eta, Some(OptionalProcess::constant(tree, g)));
    }
    Ok(driver)
}

fn build_process(
    tree: &TwoPhaseTree<f64>,
    spec: &ProcessSpec,
    pointer: &str,
) -> Result<OptionalProcess<f64>, LoadError> {
    let process = match spec {
        ProcessSpec::Constant { value, after } => {
            let after = after.unwrap_or(*value);
            OptionalProcess::from_fn(tree, |p| match p.phase {
                rbsde_core::Phase::At => *value,
                rbsde_core::Phase::After => after,
            })
        }
        ProcessSpec::Affine { a, b, after_shift } => OptionalProcess::from_fn(tree, |p| {
            let base = a + b * tree.brownian(p.node);
            match p.phase {
                rbsde_core::Phase::At => base,
                rbsde_core::Phase::After => base + after_shift,
            }
        }),
        ProcessSpec::Table { at, after } => {
            check_table(tree, at, tree.steps() + 1, &format!("{pointer}/at"))?;
            check_table(tree, after, tree.steps(), &format!("{pointer}/after"))?;
            OptionalProcess::from_fn(tree, |p| {
                let (k, bits) = (tree.step_of(p.node), tree.bits(p.node));
                match p.phase {
                    rbsde_core::Phase::At => at[k][bits],
                    rbsde_core::Phase::After => after[k][bits],
                }
            })
        }
    };
    if let Some(p) = tree.points().find(|&p| !process.get(p).is_finite()) {
        let tp = tree.time_point(p);
        return Err(LoadError::schema(pointer, format!("non-finite value at {tp}")));
    }
    Ok(process)
}

fn check_table(tree: &TwoPhaseTree<f64>, table: &[Vec<f64>], rows: usize, pointer: &str) -> Result<(), LoadError> {
    if table.len() != rows {
        return Err(LoadError::schema(
            pointer,
            format!(
                "expected {rows} steps for a {}-step tree, got {}",
                tree.steps(),
                table.len()
            ),
        ));
    }
    for (k, row) in table.iter().enumerate() {
        if row.len() != 1 << k {
            return Err(LoadError::schema(
                &format!("{pointer}/{k}"),
                format!("step {k} needs {} values, got {}", 1 << k, row.len()),
            ));
        }
    }
    Ok(())
}

fn build_terminal(
    tree: &TwoPhaseTree<f64>,
    spec: &TerminalSpec,
    lower: &OptionalProcess<f64>,
    upper: &OptionalProcess<f64>,
    pointer: &str,
) -> Result<Vec<f64>, LoadError> {
    let leaf = |p: usize| tree.leaf(p);
    let values: Vec<f64> = match spec {
        TerminalSpec::Constant { value } => vec![*value; tree.path_count()],
        TerminalSpec::Affine { a, b } => (0..tree.path_count()).map(|p| a + b * tree.brownian(leaf(p))).collect(),
        TerminalSpec::Table { values } => {
            if values.len() != tree.path_count() {
                return Err(LoadError::schema(
                    &format!("{pointer}/values"),
                    format!("expected {} values, got {}", tree.path_count(), values.len()),
                ));
            }
            values.clone()
        }
        TerminalSpec::Lower => (0..tree.path_count()).map(|p| lower.get(Point::at(leaf(p)))).collect(),
        TerminalSpec::Upper => (0..tree.path_count()).map(|p| upper.get(Point::at(leaf(p)))).collect(),
    };
    if values.iter().any(|v| !v.is_finite()) {
        return Err(LoadError::schema(pointer, "non-finite terminal value"));
    }
    Ok(values)
}

/// Table form of a process, as accepted by [`ProcessSpec::Table`].
pub fn process_table(tree: &TwoPhaseTree<f64>, process: &OptionalProcess<f64>) -> ProcessSpec {
    let row = |k: usize, phase: fn(rbsde_core::NodeId) -> Point| -> Vec<f64> {
        tree.nodes_at(k).map(|n| process.get(phase(n))).collect()
    };
    ProcessSpec::Table {
        at: (0..=tree.steps()).map(|k| row(k, Point::at)).collect(),
        after: (0..tree.steps()).map(|k| row(k, Point::after)).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "version": "v1", "steps": 1, "dt": 1.0,
        "lower": {"kind": "constant", "value": -1},
        "upper": {"kind": "constant", "value": 1},
        "terminal": {"kind": "constant", "value": 0},
        "driver": {"name": "zero"}
    }"#;

    #[test]
    fn minimal_file_loads() {
        let s = parse_scenario(MINIMAL, None).unwrap();
        assert_eq!(s.tree.node_count(), 3);
        assert_eq!(s.name, "scenario");
    }

    #[test]
    fn crossing_barriers_are_rejected_at_the_root() {
        let text = MINIMAL.replace(r#""value": -1"#, r#""value": 1"#).replace(
            r#""upper": {"kind": "constant", "value": 1}"#,
            r#""upper": {"kind": "constant", "value": 0}"#,
        );
        match parse_scenario(&text, None) {
            Err(LoadError::Barrier(rbsde_core::Error::BarrierCrossing { step: 0, path, .. })) => assert_eq!(path, "-"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_driver_names_the_catalog() {
        let text = MINIMAL.replace(r#""name": "zero""#, r#""name": "quartic""#);
        let err = parse_scenario(&text, None).unwrap_err();
        let msg = err.to_string();
        assert_eq!(err.kind(), "schema");
        assert!(msg.contains("quartic"), "{msg}");
        for name in ["zero", "constant", "linear", "cubic", "polynomial", "truncated"] {
            assert!(msg.contains(name), "{msg}");
        }
    }

    #[test]
    fn schema_errors_carry_pointers() {
        // Tagged objects are buffered, so the pointer stops at the object.
        let text = MINIMAL.replace(r#""value": 0}"#, r#""value": "zero"}"#);
        let err = parse_scenario(&text, None).unwrap_err();
        assert_eq!(err.pointer(), Some("/terminal"));
        assert!(err.to_string().contains("expected f64"), "{err}");

        let text = MINIMAL.replace(r#""dt": 1.0"#, r#""dt": "one""#);
        let err = parse_scenario(&text, None).unwrap_err();
        assert_eq!(err.pointer(), Some("/dt"));

        let text = r#"{"version": "v1", "steps": 2, "dt": 0.5,
            "lower": {"kind": "table", "at": [[0], [0, 0]], "after": [[0], [0, 0]]},
            "upper": {"kind": "constant", "value": 1},
            "terminal": {"kind": "constant", "value": 0},
            "driver": {"name": "zero"}}"#;
        let err = parse_scenario(text, None).unwrap_err();
        assert_eq!(err.pointer(), Some("/lower/at"));
    }

    #[test]
    fn table_round_trip() {
        let s = parse_scenario(MINIMAL, None).unwrap();
        let spec = process_table(&s.tree, &s.barriers.upper);
        let rebuilt = build_process(&s.tree, &spec, "/upper").unwrap();
        assert_eq!(rebuilt, s.barriers.upper);
    }

    #[test]
    fn random_block_is_reproducible() {
        let text = r#"{"version": "v1", "steps": 3, "dt": 0.25, "seed": 9,
            "random": {"family": "compatible"}, "driver": {"name": "cubic", "k": 1.0}}"#;
        let a = parse_scenario(text, None).unwrap();
        let b = parse_scenario(text, None).unwrap();
        assert_eq!(a.barriers, b.barriers);
    }
}
