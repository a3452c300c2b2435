//! JSON and CSV views of solver objects.
//!
//! Node-indexed data is laid out step by step, each step ordered by path
//! bits, the same layout scenario tables use.

use rbsde_core::reflect::RbsdeSolution;
use rbsde_core::{Increments, NodeId, OptionalProcess, Phase, Point, StoppingSystem, StoppingTime, TwoPhaseTree};
use serde_json::{json, Value};

fn num(x: f64) -> Value {
    serde_json::Number::from_f64(x)
        .map(Value::Number)
        .unwrap_or(Value::Null)
}

fn rows(tree: &TwoPhaseTree<f64>, steps: usize, f: impl Fn(NodeId) -> f64) -> Value {
    Value::Array(
        (0..steps)
            .map(|k| Value::Array(tree.nodes_at(k).map(|v| num(f(v))).collect()))
            .collect(),
    )
}

pub fn process(tree: &TwoPhaseTree<f64>, p: &OptionalProcess<f64>) -> Value {
    json!({
        "at": rows(tree, tree.steps() + 1, |v| p.at(v)),
        "after": rows(tree, tree.steps(), |v| p.after(v)),
    })
}

/// Values indexed by node, one row per step `0..=N`.
pub fn by_node(tree: &TwoPhaseTree<f64>, values: &[f64]) -> Value {
    rows(tree, tree.steps() + 1, |v| values[v.index()])
}

/// Values indexed by inner node, one row per step `0..N`.
pub fn by_inner_node(tree: &TwoPhaseTree<f64>, values: &[f64]) -> Value {
    rows(tree, tree.steps(), |v| values[v.index()])
}

fn increments(tree: &TwoPhaseTree<f64>, inc: &Increments<f64>) -> Value {
    json!({
        "phase": by_inner_node(tree, &inc.phase),
        "step": by_inner_node(tree, &inc.step),
    })
}

pub fn phase_name(phase: Phase) -> &'static str {
    match phase {
        Phase::At => "at",
        Phase::After => "after",
    }
}

pub fn point(tree: &TwoPhaseTree<f64>, p: Point) -> Value {
    json!({
        "step": tree.step_of(p.node),
        "phase": phase_name(p.phase),
        "node": tree.label(p.node),
    })
}

pub fn stopping_time(tree: &TwoPhaseTree<f64>, tau: &StoppingTime) -> Value {
    Value::Array(
        (0..tree.path_count())
            .map(|path| {
                let p = tau.stop_point(tree, path);
                json!({
                    "path": tree.path_label(path),
                    "step": tree.step_of(p.node),
                    "phase": phase_name(p.phase),
                })
            })
            .collect(),
    )
}

pub fn stopping_system(tree: &TwoPhaseTree<f64>, rho: &StoppingSystem) -> Value {
    Value::Array(
        (0..tree.path_count())
            .map(|path| {
                let p = rho.tau.stop_point(tree, path);
                json!({
                    "path": tree.path_label(path),
                    "step": tree.step_of(p.node),
                    "phase": phase_name(p.phase),
                    "on_time": rho.in_h(tree, path),
                })
            })
            .collect(),
    )
}

pub fn solution(tree: &TwoPhaseTree<f64>, s: &RbsdeSolution<f64>) -> Value {
    json!({
        "y": process(tree, &s.y),
        "z": by_inner_node(tree, &s.z),
        "y_star": by_inner_node(tree, &s.y_star),
        "r_plus": increments(tree, &s.r_plus),
        "r_minus": increments(tree, &s.r_minus),
    })
}

/// Inverse of [`solution`].
pub fn solution_from_json(tree: &TwoPhaseTree<f64>, v: &Value) -> Result<RbsdeSolution<f64>, String> {
    let table = |v: &Value, what: &str, steps: usize| -> Result<Vec<f64>, String> {
        let rows = v.as_array().ok_or(format!("{what}: expected an array"))?;
        if rows.len() != steps {
            return Err(format!("{what}: expected {steps} rows, got {}", rows.len()));
        }
        let mut out = vec![0.0; tree.node_count()];
        for (k, row) in rows.iter().enumerate() {
            let row = row.as_array().ok_or(format!("{what}/{k}: expected an array"))?;
            if row.len() != 1 << k {
                return Err(format!("{what}/{k}: expected {} values", 1 << k));
            }
            for (bits, x) in row.iter().enumerate() {
                out[tree.node_at(k, bits).index()] = x.as_f64().ok_or(format!("{what}/{k}/{bits}: not a number"))?;
            }
        }
        Ok(out)
    };
    let n = tree.steps();
    let inner = |v: &Value, what: &str| -> Result<Vec<f64>, String> {
        let mut t = table(v, what, n)?;
        t.truncate(tree.inner_count());
        Ok(t)
    };
    let inc = |v: &Value, what: &str| -> Result<Increments<f64>, String> {
        Ok(Increments {
            phase: inner(&v["phase"], &format!("{what}/phase"))?,
            step: inner(&v["step"], &format!("{what}/step"))?,
        })
    };
    let at = table(&v["y"]["at"], "y/at", n + 1)?;
    let mut after = table(&v["y"]["after"], "y/after", n)?;
    after.truncate(tree.inner_count());
    let y = OptionalProcess::from_parts(tree, at, after).map_err(|e| e.to_string())?;
    Ok(RbsdeSolution {
        y,
        z: inner(&v["z"], "z")?,
        y_star: inner(&v["y_star"], "y_star")?,
        r_plus: inc(&v["r_plus"], "r_plus")?,
        r_minus: inc(&v["r_minus"], "r_minus")?,
    })
}

/// Transition-level rows: `step,edge,path,y,z,dr_plus,dr_minus`. `y` is the
/// value at the start of the transition and `z` is empty on phase edges.
pub fn solution_csv(tree: &TwoPhaseTree<f64>, s: &RbsdeSolution<f64>) -> String {
    let f = crate::canonical::float;
    let mut out = String::from("step,edge,path,y,z,dr_plus,dr_minus\n");
    for k in 0..tree.steps() {
        for v in tree.nodes_at(k) {
            let i = v.index();
            let label = tree.label(v);
            out.push_str(&format!(
                "{k},phase,{label},{},,{},{}\n",
                f(s.y.at(v)),
                f(s.r_plus.phase[i]),
                f(s.r_minus.phase[i])
            ));
            out.push_str(&format!(
                "{k},step,{label},{},{},{},{}\n",
                f(s.y.after(v)),
                f(s.z[i]),
                f(s.r_plus.step[i]),
                f(s.r_minus.step[i])
            ));
        }
    }
    out
}

pub fn matrix_csv(matrix: &[Vec<f64>]) -> String {
    let mut out = String::new();
    for row in matrix {
        let cells: Vec<String> = row.iter().map(|&x| crate::canonical::float(x)).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}
