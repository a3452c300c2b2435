use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use proptest::prelude::*;
use rbsde_core::reflect::{check_minimality, dynamics_residual, solve_rbsde};
use rbsde_core::Tolerances;
use rbsde_lab::random::{scenario_file, BarrierFamily, DriverFamily};
use rbsde_lab::report::solution_from_json;
use rbsde_lab::{canonical, load_scenario, ScenarioFile};
use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rbsde-lab"))
}

fn examples() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/schema/examples")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn report(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap()
}

const TRIVIAL_N1: &str = r#"{"version": "v1", "steps": 1, "dt": 1.0,
    "lower": {"kind": "constant", "value": -1},
    "upper": {"kind": "constant", "value": 1},
    "terminal": {"kind": "constant", "value": 0},
    "driver": {"name": "zero"}}"#;

#[test]
fn verify_on_the_trivial_scenario_passes_with_zero_residuals() {
    let out = bin()
        .arg("verify")
        .arg(examples().join("trivial.json"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let r = report(&out);
    assert_eq!(r["pass"], true);
    assert_eq!(r["y0"].as_f64(), Some(0.0));
    assert_eq!(r["dynamics_residual"].as_f64(), Some(0.0));
    assert_eq!(r["minimality"]["max_product"].as_f64(), Some(0.0));
    assert_eq!(r["truncation"]["limit_gap"].as_f64(), Some(0.0));
    assert_eq!(r["saddle"]["residual_star"].as_f64(), Some(0.0));
    assert_eq!(r["witness"]["separated"], true);
}

#[test]
fn oracle_on_random_two_step_scenarios() {
    let dir = tempfile::tempdir().unwrap();
    for seed in 0..5 {
        let file = scenario_file(seed, 2, BarrierFamily::Compatible, DriverFamily::Linear);
        let path = write(dir.path(), "s.json", &serde_json::to_string(&file).unwrap());
        let out = bin()
            .args(["oracle", "--mode", "extended"])
            .arg(&path)
            .output()
            .unwrap();
        assert_eq!(out.status.code(), Some(0));
        let r = report(&out);
        let (upper, y) = (
            r["game"]["upper"][0][0].as_f64().unwrap(),
            r["game"]["y"][0][0].as_f64().unwrap(),
        );
        assert!((upper - y).abs() <= 1e-8);
        assert!(r["literal"]["gap"].as_f64().unwrap() <= 1e-8);
    }
}

#[test]
fn game_beyond_the_enumeration_bound_is_rejected() {
    let out = bin()
        .args(["game", "--enum-bound", "3"])
        .arg(examples().join("deep.json"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("enumeration bound exceeded"), "{stderr}");
    let failure: Value = serde_json::from_str(stderr.lines().next().unwrap()).unwrap();
    assert_eq!(failure["status"], "input_error");
}

#[test]
fn loader_errors_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let crossing = TRIVIAL_N1.replace(r#""value": -1"#, r#""value": 1"#).replace(
        r#""upper": {"kind": "constant", "value": 1}"#,
        r#""upper": {"kind": "constant", "value": 0}"#,
    );
    let cases = [
        ("crossing.json", crossing, "barrier", "step 0"),
        (
            "driver.json",
            TRIVIAL_N1.replace(r#""name": "zero""#, r#""name": "exotic""#),
            "schema",
            "polynomial",
        ),
        ("syntax.json", "{\"version\": ".to_string(), "schema", "EOF"),
        ("version.json", TRIVIAL_N1.replace("v1", "v2"), "schema", "/version"),
    ];
    for (name, text, kind, needle) in cases {
        let path = write(dir.path(), name, &text);
        let out = bin().arg("solve").arg(&path).output().unwrap();
        assert_eq!(out.status.code(), Some(2), "{name}");
        let failure: Value = serde_json::from_slice(&out.stderr).unwrap();
        assert_eq!(failure["kind"], kind, "{name}");
        assert!(failure.to_string().contains(needle), "{name}: {failure}");
    }
    let out = bin()
        .arg("solve")
        .arg(dir.path().join("missing.json"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn failed_checks_exit_with_code_one() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(
        dir.path(),
        "big.json",
        r#"{"version": "v1", "steps": 2, "dt": 0.1,
            "lower": {"kind": "constant", "value": 2.0},
            "upper": {"kind": "constant", "value": 3.0},
            "terminal": {"kind": "constant", "value": 3.0},
            "driver": {"name": "cubic", "k": 2.0}}"#,
    );
    // Truncating a driver of size ~50 at level 1 cannot reach the solution.
    let out = bin()
        .args(["approx", "--n-max", "1", "--m-max", "1"])
        .arg(&path)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(report(&out)["failures"][0], "truncation_converged");
    let failure: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(failure["status"], "check_failed");

    let out = bin().arg("approx").arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn reports_are_byte_identical_across_runs() {
    let path = examples().join("linear_affine.json");
    let run = || bin().arg("saddle").arg(&path).output().unwrap().stdout;
    let first = run();
    assert!(!first.is_empty());
    assert_eq!(first, run());
}

#[test]
fn batch_output_is_written_atomically() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("reports");
    let status = bin()
        .args(["solve", "--format", "csv", "--out"])
        .arg(&out_dir)
        .arg(examples().join("trivial.json"))
        .arg(examples().join("linear_affine.json"))
        .env("RBSDE_LAB_THREADS", "2")
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let mut names: Vec<String> = std::fs::read_dir(&out_dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    assert_eq!(
        names,
        [
            "linear_affine.solve.json",
            "linear_affine.solve.solution.csv",
            "trivial.solve.json",
            "trivial.solve.solution.csv"
        ]
    );
    let csv = std::fs::read_to_string(out_dir.join("trivial.solve.solution.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("step,edge,path,y,z,dr_plus,dr_minus"));
    // two steps, three inner nodes, two edges each
    assert_eq!(csv.lines().count(), 1 + 6);
}

#[test]
fn csv_without_an_output_directory_is_rejected() {
    let out = bin()
        .args(["solve", "--format", "csv"])
        .arg(examples().join("trivial.json"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn solution_dump_round_trips_through_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let tol = Tolerances::default();
    for seed in 0..4 {
        let file = scenario_file(seed, 3, BarrierFamily::Compatible, DriverFamily::Cubic);
        let path = write(dir.path(), "s.json", &serde_json::to_string(&file).unwrap());
        let out = bin().arg("solve").arg(&path).output().unwrap();
        let r = report(&out);
        let s = load_scenario(&path).unwrap();
        let fresh = solve_rbsde(&s.tree, &s.barriers, &s.driver, &tol).unwrap();
        let reloaded = solution_from_json(&s.tree, &r["solution"]).unwrap();
        assert_eq!(reloaded, fresh);
        let m = check_minimality(&s.tree, &reloaded, &s.barriers, &tol);
        assert_eq!(m.max_product, r["minimality"]["max_product"].as_f64().unwrap());
        assert_eq!(
            dynamics_residual(&s.tree, &reloaded, &s.barriers, &s.driver),
            r["dynamics_residual"].as_f64().unwrap()
        );
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn canonical_floats_round_trip(x in any::<f64>().prop_filter("finite", |x| x.is_finite())) {
        prop_assert_eq!(canonical::float(x).parse::<f64>().unwrap(), x);
    }

    #[test]
    fn generated_scenarios_survive_serialization(seed in any::<u64>(), steps in 1usize..5) {
        let file = scenario_file(seed, steps, BarrierFamily::Semicontinuous, DriverFamily::Linear);
        let text = serde_json::to_string_pretty(&file).unwrap();
        let back: ScenarioFile = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(&back, &file);
        let s = rbsde_lab::build_scenario(back, None).unwrap();
        prop_assert_eq!(s.tree.steps(), steps);
    }
}
