//! The six commands. Each produces a JSON report plus the list of asserted
//! checks that failed.

use rbsde_core::expectation::{classify_ef_bounded, ClassifyMode};
use rbsde_core::games::{
    epsilon_sweep, game_equals_rbsde, literal_values, saddle_points, tie_compatible, EpsilonSweep, GameMode,
    GameReport, GameTables, SaddleReport,
};
use rbsde_core::reflect::{
    check_continuity, check_minimality, dynamics_residual, mokobodzki_witness, snell_envelopes, solve_rbsde,
    truncation_scheme, Constraint, MinimalityReport, RbsdeSolution, Transition, TruncationParams, TruncationReport,
    WitnessOutcome,
};
use rbsde_core::{semicontinuity, Driver, NodeId, StoppingTime, TimePoint, Tolerances};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::report;
use crate::scenario::{Scenario, ToleranceSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Solve,
    Game,
    Saddle,
    Verify,
    Approx,
    Oracle,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::Game => "game",
            Command::Saddle => "saddle",
            Command::Verify => "verify",
            Command::Approx => "approx",
            Command::Oracle => "oracle",
        }
    }
}

#[derive(Clone, Debug)]
pub struct Options {
    pub mode: GameMode,
    pub epsilons: Vec<f64>,
    pub cut_step: Option<usize>,
    pub enum_bound: usize,
    pub theta_step: usize,
    pub n_max: Option<f64>,
    pub m_max: Option<f64>,
    /// Overrides applied on top of the scenario's own tolerances.
    pub tolerances: ToleranceSpec,
}

impl Default for Options {
    fn default() -> Self {
        Options {
            mode: GameMode::Extended,
            epsilons: vec![0.2, 0.1, 0.05, 0.025],
            cut_step: None,
            enum_bound: rbsde_core::expectation::DEFAULT_ENUM_BOUND,
            theta_step: 0,
            n_max: None,
            m_max: None,
            tolerances: ToleranceSpec::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Outcome {
    pub report: Value,
    /// Names of asserted checks that failed.
    pub failures: Vec<String>,
    /// Extra CSV artifacts as `(suffix, contents)`.
    pub csv: Vec<(String, String)>,
}

impl Outcome {
    pub fn pass(&self) -> bool {
        self.failures.is_empty()
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    /// Bad flags or a scenario outside what a command accepts.
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    Solver(#[from] rbsde_core::Error),
}

impl RunError {
    pub fn is_input(&self) -> bool {
        matches!(
            self,
            RunError::Input(_) | RunError::Solver(rbsde_core::Error::EnumerationBound { .. })
        )
    }
}

/// Collects check results into a report section.
struct Checks {
    failures: Vec<String>,
}

impl Checks {
    fn new() -> Self {
        Checks { failures: Vec::new() }
    }

    fn assert(&mut self, name: &str, ok: bool) -> bool {
        if !ok {
            self.failures.push(name.to_string());
        }
        ok
    }
}

fn mode_name(mode: GameMode) -> &'static str {
    match mode {
        GameMode::Extended => "extended",
        GameMode::Plain => "plain",
    }
}

pub fn run(command: Command, scenario: &Scenario, options: &Options) -> Result<Outcome, RunError> {
    let tol = options.tolerances.apply(scenario.tolerances);
    if options.epsilons.iter().any(|&e| !(e > 0.0 && e.is_finite())) {
        return Err(RunError::Input("epsilon values must be positive".into()));
    }
    if options.theta_step > scenario.tree.steps() {
        return Err(RunError::Input(format!(
            "theta step {} beyond the horizon {}",
            options.theta_step,
            scenario.tree.steps()
        )));
    }
    if let Some(k) = options.cut_step {
        if k > scenario.tree.steps() {
            return Err(RunError::Input(format!(
                "cut step {k} beyond the horizon {}",
                scenario.tree.steps()
            )));
        }
    }
    let mut checks = Checks::new();
    let mut csv = Vec::new();
    let mut body = Map::new();
    match command {
        Command::Solve => solve(scenario, &tol, &mut checks, &mut body, &mut csv)?,
        Command::Game => game(scenario, options, &tol, &mut checks, &mut body, &mut csv)?,
        Command::Saddle => saddle(scenario, options, &tol, &mut checks, &mut body)?,
        Command::Verify => verify(scenario, options, &tol, &mut checks, &mut body)?,
        Command::Approx => approx(scenario, options, &tol, &mut checks, &mut body)?,
        Command::Oracle => oracle(scenario, options, &tol, &mut checks, &mut body)?,
    }
    let mut report = json!({
        "command": command.name(),
        "scenario": scenario.name,
        "steps": scenario.tree.steps(),
        "dt": scenario.tree.dt(),
        "driver": scenario.driver.name(),
        "tolerances": tolerances_json(&tol),
        "pass": checks.failures.is_empty(),
        "failures": checks.failures,
    });
    report.as_object_mut().expect("object").extend(body);
    Ok(Outcome {
        report,
        failures: checks.failures,
        csv,
    })
}

fn tolerances_json(tol: &Tolerances<f64>) -> Value {
    json!({
        "root": tol.root,
        "comp": tol.comp,
        "conv": tol.conv,
        "game": tol.game,
        "class": tol.class,
        "max_iter": tol.max_iter,
    })
}

fn minimality_json(s: &Scenario, m: &MinimalityReport<f64>) -> Value {
    let violations: Vec<Value> = m
        .violations
        .iter()
        .map(|v| {
            json!({
                "node": s.tree.label(v.node),
                "step": s.tree.step_of(v.node),
                "transition": match v.transition { Transition::Phase => "phase", Transition::Step => "step" },
                "constraint": match v.constraint {
                    Constraint::Lower => "lower",
                    Constraint::Upper => "upper",
                    Constraint::Singular => "singular",
                },
                "magnitude": v.magnitude,
            })
        })
        .collect();
    json!({
        "pass": m.pass,
        "max_product": m.max_product,
        "singular": m.singular,
        "inside": m.inside,
        "violations": violations,
    })
}

/// Solution plus the checks every solve asserts.
fn solve_checked(
    s: &Scenario,
    tol: &Tolerances<f64>,
    checks: &mut Checks,
    body: &mut Map<String, Value>,
) -> Result<RbsdeSolution<f64>, RunError> {
    let (tree, b, d) = (&s.tree, &s.barriers, &s.driver);
    let sol = solve_rbsde(tree, b, d, tol)?;
    let minimality = check_minimality(tree, &sol, b, tol);
    let dynamics = dynamics_residual(tree, &sol, b, d);
    let continuity = check_continuity(tree, &sol, b, d);
    let hyp = d.check_hypotheses(tree);
    checks.assert("minimality", minimality.pass);
    checks.assert("dynamics", dynamics <= tol.comp);
    checks.assert("continuity", continuity.pass(tol.comp));
    body.insert("y0".into(), json!(sol.initial()));
    body.insert("minimality".into(), minimality_json(s, &minimality));
    body.insert("dynamics_residual".into(), json!(dynamics));
    body.insert(
        "continuity".into(),
        json!({
            "lower_applies": continuity.lower_applies,
            "lower_excess": continuity.lower_excess,
            "upper_applies": continuity.upper_applies,
            "upper_excess": continuity.upper_excess,
        }),
    );
    body.insert(
        "driver_hypotheses".into(),
        json!({
            "lipschitz_z": hyp.lipschitz_z,
            "monotone_y": hyp.monotone_y,
            "growth_z": hyp.growth_z,
            "eta_in_range": hyp.eta_in_range,
            "g_nonnegative": hyp.g_nonnegative,
        }),
    );
    Ok(sol)
}

fn solve(
    s: &Scenario,
    tol: &Tolerances<f64>,
    checks: &mut Checks,
    body: &mut Map<String, Value>,
    csv: &mut Vec<(String, String)>,
) -> Result<(), RunError> {
    let sol = solve_checked(s, tol, checks, body)?;
    body.insert("solution".into(), report::solution(&s.tree, &sol));
    csv.push(("solution.csv".into(), report::solution_csv(&s.tree, &sol)));
    Ok(())
}

fn semicontinuity_json(s: &Scenario) -> Value {
    let flags = |p| {
        let f = semicontinuity(&s.tree, p);
        json!({"right_usc": f.right_usc, "right_lsc": f.right_lsc, "left_usc": f.left_usc, "left_lsc": f.left_lsc})
    };
    json!({"lower": flags(&s.barriers.lower), "upper": flags(&s.barriers.upper)})
}

fn game_json(s: &Scenario, r: &GameReport<f64>) -> Value {
    json!({
        "mode": mode_name(r.mode),
        "upper": report::by_node(&s.tree, &r.upper),
        "lower": report::by_node(&s.tree, &r.lower),
        "y": report::by_node(&s.tree, &r.y),
        "max_upper_gap": r.max_upper_gap,
        "max_lower_gap": r.max_lower_gap,
        "sandwich": r.sandwich,
        "asserted": r.asserted,
        "pass": r.pass,
    })
}

fn game(
    s: &Scenario,
    o: &Options,
    tol: &Tolerances<f64>,
    checks: &mut Checks,
    body: &mut Map<String, Value>,
    csv: &mut Vec<(String, String)>,
) -> Result<(), RunError> {
    let (tree, b, d) = (&s.tree, &s.barriers, &s.driver);
    let tables = GameTables::build(tree, b, d, o.mode, o.enum_bound, tol)?;
    let sol = solve_rbsde(tree, b, d, tol)?;
    let r = game_equals_rbsde(tree, b, d, &sol, o.mode, o.enum_bound, tol)?;
    checks.assert(&format!("{}_value", mode_name(o.mode)), r.pass);
    body.insert("game".into(), game_json(s, &r));
    body.insert("tie_compatible".into(), json!(tie_compatible(tree, b)));
    body.insert("semicontinuity".into(), semicontinuity_json(s));
    body.insert("strategies_at_root".into(), json!(tables.count_at(0)));
    if tree.steps() <= 2 {
        csv.push((
            "payoffs.csv".into(),
            report::matrix_csv(&tables.matrix(tree, NodeId::ROOT)),
        ));
    }
    Ok(())
}

fn sweep_json(s: &Scenario, sweep: &EpsilonSweep<f64>, tol: &Tolerances<f64>) -> Value {
    let reports: Vec<Value> = sweep
        .reports
        .iter()
        .map(|r| {
            json!({
                "epsilon": r.epsilon,
                "tau": report::stopping_system(&s.tree, &r.tau),
                "sigma": report::stopping_system(&s.tree, &r.sigma),
                "near_lower_excess": r.near_lower_excess,
                "near_upper_excess": r.near_upper_excess,
                "near_contact_holds": r.near_contact_holds(tol.game),
                "residual_upper": r.residual_upper,
                "residual_lower": r.residual_lower,
            })
        })
        .collect();
    json!({
        "reports": reports,
        "constants": sweep.constants,
        "c_fit": sweep.c_fit,
        "stable": sweep.stable,
    })
}

fn saddle_json(s: &Scenario, r: &SaddleReport<f64>, tol: &Tolerances<f64>) -> Value {
    json!({
        "value": r.value,
        "hypotheses": r.hypotheses,
        "tau_star": report::stopping_system(&s.tree, &r.tau_star),
        "sigma_star": report::stopping_system(&s.tree, &r.sigma_star),
        "tau_bar": report::stopping_time(&s.tree, &r.tau_bar),
        "sigma_bar": report::stopping_time(&s.tree, &r.sigma_bar),
        "contact_star": r.contact_star,
        "contact_bar": r.contact_bar,
        "ordered": r.ordered,
        "residual_star": r.residual_star,
        "residual_bar": r.residual_bar,
        "pass": r.pass(tol),
    })
}

/// Exact saddles and the epsilon sweep at `theta`. Saddles are asserted
/// under two-sided semicontinuity, the sweep under tie compatibility.
fn saddle_checks(
    s: &Scenario,
    o: &Options,
    sol: &RbsdeSolution<f64>,
    tol: &Tolerances<f64>,
    checks: &mut Checks,
    body: &mut Map<String, Value>,
) -> Result<(), RunError> {
    let (tree, b, d) = (&s.tree, &s.barriers, &s.driver);
    let theta = StoppingTime::constant(tree, TimePoint::at(o.theta_step));
    let r = saddle_points(tree, b, d, sol, &theta, o.enum_bound, tol)?;
    if r.hypotheses {
        checks.assert("saddle", r.pass(tol));
    }
    let mut warnings = Vec::new();
    if !r.hypotheses {
        warnings.push("barriers lack two-sided semicontinuity: exact saddles not asserted");
    }
    let tables = GameTables::build(tree, b, d, GameMode::Extended, o.enum_bound, tol)?;
    let sweep = epsilon_sweep(tree, b, &tables, &sol.y, &theta, &o.epsilons, tol)?;
    if tie_compatible(tree, b) {
        checks.assert(
            "epsilon_near_contact",
            sweep.reports.iter().all(|r| r.near_contact_holds(tol.game)),
        );
        checks.assert("epsilon_stable", sweep.stable);
    } else {
        warnings.push("barriers not tie-compatible: epsilon sweep not asserted");
    }
    body.insert("theta_step".into(), json!(o.theta_step));
    body.insert("saddle".into(), saddle_json(s, &r, tol));
    body.insert("epsilon_sweep".into(), sweep_json(s, &sweep, tol));
    body.insert("warnings".into(), json!(warnings));
    Ok(())
}

fn saddle(
    s: &Scenario,
    o: &Options,
    tol: &Tolerances<f64>,
    checks: &mut Checks,
    body: &mut Map<String, Value>,
) -> Result<(), RunError> {
    let sol = solve_rbsde(&s.tree, &s.barriers, &s.driver, tol)?;
    saddle_checks(s, o, &sol, tol, checks, body)
}

fn truncation_json(r: &TruncationReport<f64>) -> Value {
    let root = |p: &rbsde_core::OptionalProcess<f64>| p.at(NodeId::ROOT);
    let grid: Vec<Vec<f64>> = r.grid.iter().map(|row| row.iter().map(root).collect()).collect();
    json!({
        "n_levels": r.n_levels,
        "m_levels": r.m_levels,
        "cut_steps": r.cut_steps,
        "grid_y0": grid,
        "upper_limits_y0": r.upper_limits.iter().map(root).collect::<Vec<_>>(),
        "limit_y0": root(&r.limit),
        "reference_y0": root(&r.reference),
        "n_violation": r.n_violation,
        "m_violation": r.m_violation,
        "n_gaps": r.n_gaps,
        "limit_gap": r.limit_gap,
        "monotone": r.monotone,
        "converged": r.converged,
    })
}

fn approx(
    s: &Scenario,
    o: &Options,
    tol: &Tolerances<f64>,
    checks: &mut Checks,
    body: &mut Map<String, Value>,
) -> Result<(), RunError> {
    let params = TruncationParams {
        n_max: o.n_max,
        m_max: o.m_max,
        cut_step: o.cut_step,
    };
    let r = truncation_scheme(&s.tree, &s.barriers, &s.driver, &params, tol)?;
    checks.assert("truncation_monotone", r.monotone);
    checks.assert("truncation_converged", r.converged);
    body.insert("truncation".into(), truncation_json(&r));
    Ok(())
}

fn oracle(
    s: &Scenario,
    o: &Options,
    tol: &Tolerances<f64>,
    checks: &mut Checks,
    body: &mut Map<String, Value>,
) -> Result<(), RunError> {
    let (tree, b, d) = (&s.tree, &s.barriers, &s.driver);
    let sol = solve_rbsde(tree, b, d, tol)?;
    let r = game_equals_rbsde(tree, b, d, &sol, o.mode, o.enum_bound, tol)?;
    checks.assert(&format!("{}_value", mode_name(o.mode)), r.pass);
    body.insert("game".into(), game_json(s, &r));
    body.insert("tie_compatible".into(), json!(tie_compatible(tree, b)));
    // The literal enumeration solves one BSDE per strategy pair.
    if tree.steps() <= 2 {
        let (upper, lower) = literal_values(tree, b, d, o.mode, o.enum_bound, tol)?;
        let gap = (upper - r.upper[0]).abs().max((lower - r.lower[0]).abs());
        checks.assert("literal_agrees", gap <= tol.game);
        body.insert("literal".into(), json!({"upper": upper, "lower": lower, "gap": gap}));
    }
    let (lh, uh) = snell_envelopes(tree, b);
    let (zero, term) = (StoppingTime::zero(tree), StoppingTime::terminal(tree));
    let f0 = Driver::zero();
    let mut agree = true;
    for x in [&sol.y, &lh, &uh] {
        let one = classify_ef_bounded(tree, x, d, &zero, &term, ClassifyMode::OneStep, o.enum_bound, tol)?;
        let brute = classify_ef_bounded(tree, x, d, &zero, &term, ClassifyMode::Brute, o.enum_bound, tol)?;
        agree &= one == brute;
        let one = classify_ef_bounded(tree, x, &f0, &zero, &term, ClassifyMode::OneStep, o.enum_bound, tol)?;
        let brute = classify_ef_bounded(tree, x, &f0, &zero, &term, ClassifyMode::Brute, o.enum_bound, tol)?;
        agree &= one == brute;
    }
    checks.assert("classify_agrees", agree);
    body.insert("classify_agrees".into(), json!(agree));
    Ok(())
}

fn verify(
    s: &Scenario,
    o: &Options,
    tol: &Tolerances<f64>,
    checks: &mut Checks,
    body: &mut Map<String, Value>,
) -> Result<(), RunError> {
    let (tree, b, d) = (&s.tree, &s.barriers, &s.driver);
    let sol = solve_checked(s, tol, checks, body)?;

    let (lh, uh) = snell_envelopes(tree, b);
    let bracket = tree
        .points()
        .map(|p| (lh.get(p) - b.lower.get(p)).max(b.upper.get(p) - uh.get(p)))
        .fold(0.0_f64, f64::max);
    checks.assert("snell_bracket", bracket <= tol.comp);
    let mode = if tree.steps() <= o.enum_bound {
        ClassifyMode::Brute
    } else {
        ClassifyMode::OneStep
    };
    let (zero, term) = (StoppingTime::zero(tree), StoppingTime::terminal(tree));
    let neg = lh.map(|v| -v);
    let mut snell_super = true;
    for x in [&neg, &uh] {
        snell_super &= classify_ef_bounded(tree, x, &Driver::zero(), &zero, &term, mode, o.enum_bound, tol)?.is_super();
    }
    checks.assert("snell_supermartingale", snell_super);
    body.insert(
        "snell".into(),
        json!({"bracket_excess": bracket.max(0.0), "supermartingale": snell_super}),
    );

    let witness = match mokobodzki_witness(tree, b) {
        WitnessOutcome::Witness(w) => {
            let inside = tree
                .points()
                .all(|p| b.lower.get(p) <= w.x.get(p) && w.x.get(p) <= b.upper.get(p));
            checks.assert("witness", inside);
            json!({"separated": true, "inside": inside, "intervals": w.cut_times.len()})
        }
        WitnessOutcome::SeparationFailure { point, lower, upper } => json!({
            "separated": false,
            "failure": report::point(tree, point),
            "lower": lower,
            "upper": upper,
        }),
    };
    body.insert("witness".into(), witness);

    let params = TruncationParams {
        n_max: o.n_max,
        m_max: o.m_max,
        cut_step: o.cut_step,
    };
    let r = truncation_scheme(tree, b, d, &params, tol)?;
    checks.assert("truncation_monotone", r.monotone);
    checks.assert("truncation_converged", r.converged);
    body.insert(
        "truncation".into(),
        json!({"monotone": r.monotone, "converged": r.converged, "limit_gap": r.limit_gap}),
    );

    if tree.steps() <= o.enum_bound {
        let mut games = Map::new();
        for mode in [GameMode::Extended, GameMode::Plain] {
            let g = game_equals_rbsde(tree, b, d, &sol, mode, o.enum_bound, tol)?;
            checks.assert(&format!("{}_value", mode_name(mode)), g.pass);
            games.insert(mode_name(mode).into(), game_json(s, &g));
        }
        body.insert("games".into(), Value::Object(games));
        body.insert("tie_compatible".into(), json!(tie_compatible(tree, b)));
        body.insert("semicontinuity".into(), semicontinuity_json(s));
        saddle_checks(s, o, &sol, tol, checks, body)?;
    } else {
        body.insert(
            "skipped".into(),
            json!([format!(
                "games and saddles: {} steps exceed the enumeration bound {}",
                tree.steps(),
                o.enum_bound
            )]),
        );
    }
    Ok(())
}
