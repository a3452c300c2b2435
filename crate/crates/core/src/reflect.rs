//! Doubly reflected BSDEs: solver, minimality check, Snell envelopes, the
//! separation witness and the truncation scheme.
//!
//! Reflection is applied by clamping after the unconstrained implicit step.
//! For scalar `Y` the clamped value is the only one compatible with both the
//! one-step equation and complementarity: if `y*` lies inside `[L, U]` no
//! push is allowed, and if it lies below `L` the push `L - y*` is the smallest
//! one reaching the barrier (symmetrically above `U`).

use crate::error::{Error, Result};
use crate::expectation::{
    check_solvable, check_terminal, diffusion_moments, implicit_step, BsdeSolution, Driver, Increments,
};
use crate::lattice::{semicontinuity, NodeId, OptionalProcess, Phase, Point, StoppingTime, TwoPhaseTree};
use crate::scalar::{clamp, pos, Scalar, Tolerances};

/// Lower and upper barriers with the terminal value (one per path).
#[derive(Clone, Debug, PartialEq)]
pub struct Barriers<T> {
    pub lower: OptionalProcess<T>,
    pub upper: OptionalProcess<T>,
    pub terminal: Vec<T>,
}

impl<T: Scalar> Barriers<T> {
    /// Validates `L <= U` everywhere and `L_T <= xi <= U_T` on every path.
    pub fn new(
        tree: &TwoPhaseTree<T>,
        lower: OptionalProcess<T>,
        upper: OptionalProcess<T>,
        terminal: Vec<T>,
    ) -> Result<Self> {
        for (what, p) in [("lower barrier", &lower), ("upper barrier", &upper)] {
            if !p.fits(tree) {
                return Err(Error::Shape {
                    what,
                    expected: tree.node_count() + tree.inner_count(),
                    got: p.at_values().len() + p.after_values().len(),
                });
            }
        }
        check_terminal(tree, &terminal)?;
        for p in tree.points() {
            let (l, u) = (lower.get(p), upper.get(p));
            if !(l <= u) {
                let tp = tree.time_point(p);
                return Err(Error::BarrierCrossing {
                    step: tp.step,
                    phase: tp.phase,
                    path: tree.label(p.node),
                    lower: l.as_f64(),
                    upper: u.as_f64(),
                });
            }
        }
        for (path, &xi) in terminal.iter().enumerate() {
            let leaf = tree.leaf(path);
            let (l, u) = (lower.at(leaf), upper.at(leaf));
            if !(l <= xi && xi <= u) {
                return Err(Error::TerminalOutsideBarriers {
                    path: tree.path_label(path),
                    value: xi.as_f64(),
                    lower: l.as_f64(),
                    upper: u.as_f64(),
                });
            }
        }
        Ok(Barriers { lower, upper, terminal })
    }

    /// `L^xi`: `L` before `T`, `xi` at `T`.
    pub fn lower_xi(&self, tree: &TwoPhaseTree<T>) -> OptionalProcess<T> {
        self.with_terminal(tree, &self.lower)
    }

    /// `U^xi`: `U` before `T`, `xi` at `T`.
    pub fn upper_xi(&self, tree: &TwoPhaseTree<T>) -> OptionalProcess<T> {
        self.with_terminal(tree, &self.upper)
    }

    fn with_terminal(&self, tree: &TwoPhaseTree<T>, p: &OptionalProcess<T>) -> OptionalProcess<T> {
        let mut out = p.clone();
        for (path, &xi) in self.terminal.iter().enumerate() {
            out.set(Point::at(tree.leaf(path)), xi);
        }
        out
    }
}

/// Solution `(Y, Z, R+, R-)` with reflection increments split by transition kind.
#[derive(Clone, Debug, PartialEq)]
pub struct RbsdeSolution<T> {
    pub y: OptionalProcess<T>,
    /// `Z` on the diffusion step leaving `AFTER(v)`, by non-terminal node.
    pub z: Vec<T>,
    /// Unconstrained implicit value on the diffusion step leaving `AFTER(v)`.
    pub y_star: Vec<T>,
    pub r_plus: Increments<T>,
    pub r_minus: Increments<T>,
}

impl<T: Scalar> RbsdeSolution<T> {
    pub fn initial(&self) -> T {
        self.y.at(NodeId::ROOT)
    }

    /// Signed increments `R+ - R-` as fed to the BSDE dynamics.
    pub fn net_increments(&self) -> Increments<T> {
        let sub = |a: &[T], b: &[T]| a.iter().zip(b).map(|(&x, &y)| x - y).collect();
        Increments {
            phase: sub(&self.r_plus.phase, &self.r_minus.phase),
            step: sub(&self.r_plus.step, &self.r_minus.step),
        }
    }

    /// Cumulative `R+` and `R-`, both starting at 0 at the root.
    pub fn cumulative(&self, tree: &TwoPhaseTree<T>) -> (OptionalProcess<T>, OptionalProcess<T>) {
        let acc = |inc: &Increments<T>| {
            let mut r = OptionalProcess::constant(tree, T::zero());
            for v in tree.inner_nodes() {
                let after = r.at(v) + inc.phase[v.index()];
                r.set(Point::after(v), after);
                let (down, up) = tree.children(v).expect("inner node");
                r.set(Point::at(down), after + inc.step[v.index()]);
                r.set(Point::at(up), after + inc.step[v.index()]);
            }
            r
        };
        (acc(&self.r_plus), acc(&self.r_minus))
    }

    pub fn as_bsde(&self) -> BsdeSolution<T> {
        BsdeSolution {
            y: self.y.clone(),
            z: self.z.clone(),
        }
    }
}

/// Solves the doubly reflected BSDE by backward recursion.
pub fn solve_rbsde<T: Scalar>(
    tree: &TwoPhaseTree<T>,
    barriers: &Barriers<T>,
    driver: &Driver<T>,
    tol: &Tolerances<T>,
) -> Result<RbsdeSolution<T>> {
    check_solvable(tree, driver)?;
    let (l, u) = (&barriers.lower, &barriers.upper);
    let mut y = OptionalProcess::constant(tree, T::zero());
    let mut z = vec![T::zero(); tree.inner_count()];
    let mut y_star = vec![T::zero(); tree.inner_count()];
    let mut r_plus = Increments::zero(tree);
    let mut r_minus = Increments::zero(tree);
    for (path, &xi) in barriers.terminal.iter().enumerate() {
        y.set(Point::at(tree.leaf(path)), xi);
    }
    for k in (0..tree.steps()).rev() {
        let t = tree.time(k);
        for v in tree.nodes_at(k) {
            let i = v.index();
            let (mean, zk) = diffusion_moments(tree, &y, v);
            let free = implicit_step(driver, t, tree.dt(), mean, zk, T::zero(), true, tol, v)?;
            let after = clamp(free, l.after(v), u.after(v));
            let at = clamp(after, l.at(v), u.at(v));
            z[i] = zk;
            y_star[i] = free;
            r_plus.step[i] = pos(after - free);
            r_minus.step[i] = pos(free - after);
            r_plus.phase[i] = pos(at - after);
            r_minus.phase[i] = pos(after - at);
            y.set(Point::after(v), after);
            y.set(Point::at(v), at);
        }
    }
    Ok(RbsdeSolution {
        y,
        z,
        y_star,
        r_plus,
        r_minus,
    })
}

/// Which complementarity product a violation belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Constraint {
    /// `(Y - L) dR+`
    Lower,
    /// `(U - Y) dR-`
    Upper,
    /// `min(dR+, dR-) = 0`
    Singular,
}

/// Transition kind of an increment.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Transition {
    /// `AT(k) -> AFTER(k)`
    Phase,
    /// `AFTER(k) -> AT(k+1)`
    Step,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Violation<T> {
    pub node: NodeId,
    pub transition: Transition,
    pub constraint: Constraint,
    pub magnitude: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MinimalityReport<T> {
    pub pass: bool,
    /// Largest complementarity product over all transitions.
    pub max_product: T,
    /// True if `R+` and `R-` never move on the same transition.
    pub singular: bool,
    /// True if `L <= Y <= U` everywhere.
    pub inside: bool,
    pub violations: Vec<Violation<T>>,
}

/// Re-verifies the complementarity conditions and the Jordan splitting of `solution`.
pub fn check_minimality<T: Scalar>(
    tree: &TwoPhaseTree<T>,
    solution: &RbsdeSolution<T>,
    barriers: &Barriers<T>,
    tol: &Tolerances<T>,
) -> MinimalityReport<T> {
    let (l, u, y) = (&barriers.lower, &barriers.upper, &solution.y);
    let mut violations = Vec::new();
    let mut max_product = T::zero();
    let mut singular = true;
    let mut push = |node, transition, constraint, magnitude: T| {
        violations.push(Violation {
            node,
            transition,
            constraint,
            magnitude,
        })
    };
    for v in tree.inner_nodes() {
        let i = v.index();
        for (transition, point, dp, dm) in [
            (
                Transition::Step,
                Point::after(v),
                solution.r_plus.step[i],
                solution.r_minus.step[i],
            ),
            (
                Transition::Phase,
                Point::at(v),
                solution.r_plus.phase[i],
                solution.r_minus.phase[i],
            ),
        ] {
            let lower = ((y.get(point) - l.get(point)) * dp).abs();
            let upper = ((u.get(point) - y.get(point)) * dm).abs();
            max_product = max_product.max(lower).max(upper);
            if lower > tol.comp {
                push(v, transition, Constraint::Lower, lower);
            }
            if upper > tol.comp {
                push(v, transition, Constraint::Upper, upper);
            }
            if dp < T::zero() || dm < T::zero() || dp.min(dm) != T::zero() {
                singular = false;
                push(v, transition, Constraint::Singular, dp.min(dm));
            }
        }
    }
    let inside = tree.points().all(|p| l.get(p) <= y.get(p) && y.get(p) <= u.get(p));
    MinimalityReport {
        pass: violations.is_empty() && inside,
        max_product,
        singular,
        inside,
        violations,
    }
}

/// Largest residual of `solution` against the reflected one-step equations.
///
/// The unconstrained value is recovered as `y* = Y_AFTER - dR+ + dR-` and must
/// solve `y* = E[Y_next] + f(t, y*, Z) dt`; the phase step must satisfy
/// `Y_AT = Y_AFTER + dR+ - dR-`.
pub fn dynamics_residual<T: Scalar>(
    tree: &TwoPhaseTree<T>,
    solution: &RbsdeSolution<T>,
    barriers: &Barriers<T>,
    driver: &Driver<T>,
) -> T {
    let net = solution.net_increments();
    let mut worst = (0..tree.path_count())
        .map(|p| (solution.y.at(tree.leaf(p)) - barriers.terminal[p]).abs())
        .fold(T::zero(), T::max);
    for v in tree.inner_nodes() {
        let i = v.index();
        let (mean, z) = diffusion_moments(tree, &solution.y, v);
        let free = solution.y.after(v) - net.step[i];
        let step = free - mean - driver.eval(tree.time(tree.step_of(v)), free, z) * tree.dt();
        let phase = solution.y.at(v) - solution.y.after(v) - net.phase[i];
        worst = worst
            .max(step.abs())
            .max(phase.abs())
            .max((solution.z[i] - z).abs())
            .max((solution.y_star[i] - free).abs());
    }
    worst
}

/// Step-increment bounds implied by one-sided left semicontinuity of a barrier.
///
/// If `L(AT k+1) >= L(AFTER k)` along every edge, a step push `dR+` can only
/// compensate the driver: `dR+ <= (-f(t_k, y*, Z))^+ dt`, in particular it
/// vanishes for `f = 0`. Symmetrically for `U` with `dR- <= f^+ dt`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContinuityReport<T> {
    pub lower_applies: bool,
    pub lower_excess: T,
    pub upper_applies: bool,
    pub upper_excess: T,
}

impl<T: Scalar> ContinuityReport<T> {
    pub fn pass(&self, tol: T) -> bool {
        (!self.lower_applies || self.lower_excess <= tol) && (!self.upper_applies || self.upper_excess <= tol)
    }
}

pub fn check_continuity<T: Scalar>(
    tree: &TwoPhaseTree<T>,
    solution: &RbsdeSolution<T>,
    barriers: &Barriers<T>,
    driver: &Driver<T>,
) -> ContinuityReport<T> {
    let (mut lower_excess, mut upper_excess) = (T::zero(), T::zero());
    for v in tree.inner_nodes() {
        let i = v.index();
        let f = driver.eval(tree.time(tree.step_of(v)), solution.y_star[i], solution.z[i]) * tree.dt();
        lower_excess = lower_excess.max(solution.r_plus.step[i] - pos(-f));
        upper_excess = upper_excess.max(solution.r_minus.step[i] - pos(f));
    }
    ContinuityReport {
        lower_applies: semicontinuity(tree, &barriers.lower).left_usc,
        lower_excess,
        upper_applies: semicontinuity(tree, &barriers.upper).left_lsc,
        upper_excess,
    }
}

/// `L^ = ess inf_tau E[L_tau]` and `U^ = ess sup_tau E[U_tau]` by backward induction.
pub fn snell_envelopes<T: Scalar>(
    tree: &TwoPhaseTree<T>,
    barriers: &Barriers<T>,
) -> (OptionalProcess<T>, OptionalProcess<T>) {
    let envelope = |p: &OptionalProcess<T>, pick: fn(T, T) -> T| {
        let mut out = p.clone();
        for k in (0..tree.steps()).rev() {
            for v in tree.nodes_at(k) {
                let (mean, _) = diffusion_moments(tree, &out, v);
                let after = pick(p.after(v), mean);
                out.set(Point::after(v), after);
                out.set(Point::at(v), pick(p.at(v), after));
            }
        }
        out
    };
    (envelope(&barriers.lower, T::min), envelope(&barriers.upper, T::max))
}

/// Semimartingale between the barriers together with the cut times of its construction.
#[derive(Clone, Debug, PartialEq)]
pub struct Witness<T> {
    pub x: OptionalProcess<T>,
    /// `tau_0 = 0 <= tau_1 <= ...`; `tau_n` is the `n`-th re-anchoring (or `T`).
    pub cut_times: Vec<StoppingTime>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum WitnessOutcome<T> {
    Witness(Witness<T>),
    /// First point (in time order) where `L < U` fails.
    SeparationFailure {
        point: Point,
        lower: T,
        upper: T,
    },
}

/// Builds a process `X` with `L <= X <= U` under strict separation.
///
/// On the grid the left and right limits are single phase values, so strict
/// separation of the limits reduces to `L < U` at every phase point.
pub fn mokobodzki_witness<T: Scalar>(tree: &TwoPhaseTree<T>, barriers: &Barriers<T>) -> WitnessOutcome<T> {
    let (l, u) = (&barriers.lower, &barriers.upper);
    if let Some(point) = tree.points().find(|&p| !(l.get(p) < u.get(p))) {
        return WitnessOutcome::SeparationFailure {
            point,
            lower: l.get(point),
            upper: u.get(point),
        };
    }
    let mid = |p: Point| T::half() * (l.get(p) + u.get(p));
    let inside = |p: Point, c: T| l.get(p) <= c && c <= u.get(p);
    let mut x = OptionalProcess::constant(tree, T::zero());
    // anchor index along the path, or None if the node continues the running midpoint
    let mut index: Vec<usize> = vec![0; tree.node_count()];
    let mut anchored = vec![false; tree.node_count()];
    let mut running: Vec<T> = vec![T::zero(); tree.node_count()];
    for v in tree.nodes() {
        let parent = tree.parent(v);
        let carried = parent.map(|p| running[p.index()]);
        let keep =
            carried.is_some_and(|c| inside(Point::at(v), c) && (tree.is_terminal(v) || inside(Point::after(v), c)));
        let base = parent.map(|p| index[p.index()]).unwrap_or(0);
        if keep {
            let c = carried.expect("checked");
            index[v.index()] = base;
            running[v.index()] = c;
            x.set(Point::at(v), c);
            if !tree.is_terminal(v) {
                x.set(Point::after(v), c);
            }
        } else {
            anchored[v.index()] = true;
            index[v.index()] = if parent.is_some() { base + 1 } else { 0 };
            x.set(Point::at(v), mid(Point::at(v)));
            if !tree.is_terminal(v) {
                let c = mid(Point::after(v));
                running[v.index()] = c;
                x.set(Point::after(v), c);
            }
        }
    }
    let count = tree
        .nodes()
        .filter(|v| anchored[v.index()])
        .map(|v| index[v.index()])
        .max()
        .unwrap_or(0);
    let cut_times = (0..=count)
        .map(|n| {
            StoppingTime::from_fn(tree, |p| {
                p.phase == Phase::At && anchored[p.node.index()] && index[p.node.index()] == n
            })
        })
        .collect();
    WitnessOutcome::Witness(Witness { x, cut_times })
}

/// Parameters of the truncation scheme.
#[derive(Clone, Debug, PartialEq)]
pub struct TruncationParams<T> {
    /// Largest truncation level from above; `None` picks the smallest power of
    /// two dominating the driver along the reference solution.
    pub n_max: Option<T>,
    pub m_max: Option<T>,
    /// First cut step: the `i`-th level keeps the true barriers up to step
    /// `cut_step + i` and swaps in the Snell envelopes afterwards. `None`
    /// means no cut (all cut times equal `T`).
    pub cut_step: Option<usize>,
}

impl<T> Default for TruncationParams<T> {
    fn default() -> Self {
        TruncationParams {
            n_max: None,
            m_max: None,
            cut_step: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TruncationReport<T> {
    pub n_levels: Vec<T>,
    pub m_levels: Vec<T>,
    /// Cut step of each level index (`N` means no cut).
    pub cut_steps: Vec<usize>,
    /// `Y^{n,m}` indexed `[n][m]`.
    pub grid: Vec<Vec<OptionalProcess<T>>>,
    /// `Y^m = sup_n Y^{n,m}`.
    pub upper_limits: Vec<OptionalProcess<T>>,
    /// `inf_m Y^m`.
    pub limit: OptionalProcess<T>,
    pub reference: OptionalProcess<T>,
    /// Largest decrease along `n` (should be 0).
    pub n_violation: T,
    /// Largest increase along `m` (should be 0).
    pub m_violation: T,
    /// `max |Y^{n, m_max} - limit|` for each `n`.
    pub n_gaps: Vec<T>,
    pub limit_gap: T,
    pub monotone: bool,
    pub converged: bool,
}

impl<T: Scalar> TruncationReport<T> {
    pub fn pass(&self) -> bool {
        self.monotone && self.converged
    }
}

fn levels<T: Scalar>(max: T, min_count: usize) -> Vec<T> {
    let mut out = Vec::new();
    let mut level = T::one();
    while level < max || out.len() < min_count {
        out.push(level);
        level = level + level;
    }
    if out.last().is_none_or(|&last| last < max) {
        out.push(max);
    }
    out
}

fn power_of_two_above<T: Scalar>(x: T) -> T {
    let mut level = T::one();
    while level < x {
        level = level + level;
    }
    level
}

/// Barrier with the Snell envelope swapped in strictly after grid step `cut`.
fn cut_barrier<T: Scalar>(
    tree: &TwoPhaseTree<T>,
    original: &OptionalProcess<T>,
    envelope: &OptionalProcess<T>,
    cut: usize,
) -> OptionalProcess<T> {
    OptionalProcess::from_fn(tree, |p| {
        let tp = tree.time_point(p);
        if tp.step < cut || (tp.step == cut && tp.phase == Phase::At) {
            original.get(p)
        } else {
            envelope.get(p)
        }
    })
}

/// Runs the truncation/approximation scheme and checks monotonicity and the double limit.
pub fn truncation_scheme<T: Scalar>(
    tree: &TwoPhaseTree<T>,
    barriers: &Barriers<T>,
    driver: &Driver<T>,
    params: &TruncationParams<T>,
    tol: &Tolerances<T>,
) -> Result<TruncationReport<T>> {
    let reference = solve_rbsde(tree, barriers, driver, tol)?;
    let bound = tree
        .inner_nodes()
        .map(|v| {
            let i = v.index();
            driver
                .eval(tree.time(tree.step_of(v)), reference.y_star[i], reference.z[i])
                .abs()
        })
        .fold(T::zero(), T::max);
    let auto = power_of_two_above(bound.max(T::one()));
    let n_max = params.n_max.unwrap_or(auto);
    let m_max = params.m_max.unwrap_or(auto);
    for (name, v) in [("n_max", n_max), ("m_max", m_max)] {
        if !(v >= T::one()) || !v.is_finite() {
            return Err(Error::InvalidParameter(format!("{name} must be a finite level >= 1")));
        }
    }
    let min_count = params.cut_step.map(|c| tree.steps().saturating_sub(c) + 1).unwrap_or(1);
    let n_levels = levels(n_max, min_count);
    let m_levels = levels(m_max, min_count);
    let cut_of = |i: usize| {
        params
            .cut_step
            .map(|c| (c + i).min(tree.steps()))
            .unwrap_or(tree.steps())
    };
    let (l_hat, u_hat) = snell_envelopes(tree, barriers);

    let mut grid = Vec::with_capacity(n_levels.len());
    for (i, &n) in n_levels.iter().enumerate() {
        let lower = cut_barrier(tree, &barriers.lower, &l_hat, cut_of(i));
        let mut row = Vec::with_capacity(m_levels.len());
        for (j, &m) in m_levels.iter().enumerate() {
            let upper = cut_barrier(tree, &barriers.upper, &u_hat, cut_of(j));
            let b = Barriers {
                lower: lower.clone(),
                upper,
                terminal: barriers.terminal.clone(),
            };
            row.push(solve_rbsde(tree, &b, &driver.truncated(n, m), tol)?.y);
        }
        grid.push(row);
    }

    let mut n_violation = T::zero();
    let mut m_violation = T::zero();
    for i in 0..n_levels.len() {
        for j in 0..m_levels.len() {
            let y = &grid[i][j];
            for p in tree.points() {
                if i + 1 < n_levels.len() {
                    n_violation = n_violation.max(y.get(p) - grid[i + 1][j].get(p));
                }
                if j + 1 < m_levels.len() {
                    m_violation = m_violation.max(grid[i][j + 1].get(p) - y.get(p));
                }
            }
        }
    }
    let upper_limits: Vec<OptionalProcess<T>> = (0..m_levels.len())
        .map(|j| {
            grid.iter()
                .skip(1)
                .fold(grid[0][j].clone(), |acc, row| acc.zip_with(&row[j], T::max))
        })
        .collect();
    let limit = upper_limits
        .iter()
        .skip(1)
        .fold(upper_limits[0].clone(), |acc, y| acc.zip_with(y, T::min));
    let last_m = m_levels.len() - 1;
    let n_gaps = grid.iter().map(|row| row[last_m].max_abs_diff(&limit)).collect();
    let limit_gap = limit.max_abs_diff(&reference.y);
    Ok(TruncationReport {
        cut_steps: (0..n_levels.len().max(m_levels.len())).map(cut_of).collect(),
        n_levels,
        m_levels,
        grid,
        upper_limits,
        limit,
        reference: reference.y,
        monotone: n_violation <= tol.comp && m_violation <= tol.comp,
        converged: limit_gap <= tol.conv,
        n_violation,
        m_violation,
        n_gaps,
        limit_gap,
    })
}
