//! Nonlinear Dynkin games on the tree: payoffs, exhaustive upper and lower
//! values, epsilon-optimal stopping systems and exact saddle points.
//!
//! Strategies stop at grid times only. A player that wants the right limit
//! at `t_k` stops at `AT(k)` with the event `H` switched off, which is how a
//! stopping system reaches the `AFTER` values. The maximizer `tau` stops on
//! the lower barrier and wins ties; the minimizer `sigma` stops on the upper
//! barrier:
//!
//! ```text
//! J = L^u(tau|H)   if tau <= sigma and tau < T
//!   = U^l(sigma|G) if sigma < tau
//!   = xi           if tau = sigma = T
//! ```
//!
//! Exhaustive values are computed from per-node payoff tables: the value of a
//! strategy pair on the subtree of `v` only depends on the decisions at `v` and
//! on the restricted pairs in the two child subtrees, so each table entry is one
//! implicit step applied to two child entries. The tables hold exactly the
//! `E^f` payoff of every pair; min/max folds over them give the values.
//!
//! With the tie rule above the extended value at `AT(k)` is
//! `max(L_AT, L_AFTER, min(U_AT, U_AFTER, y*))`, which equals the reflected
//! solution only where `L_AFTER(k) <= U_AT(k)`. [`game_equals_rbsde`] asserts
//! the identity under that compatibility condition and reports the gap otherwise.

use crate::error::{Error, Result};
use crate::expectation::{implicit_step, nonlinear_expectation, Driver};
use crate::lattice::{
    eval_lower, eval_upper, first_hitting, semicontinuity, NodeId, OptionalProcess, Phase, Point, PointSet,
    StoppingSystem, StoppingTime, TwoPhaseTree,
};
use crate::reflect::{Barriers, RbsdeSolution};
use crate::scalar::{Scalar, Tolerances};

/// Whether players choose stopping systems or plain stopping times.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum GameMode {
    Extended,
    Plain,
}

impl GameMode {
    fn stop_options(self) -> usize {
        match self {
            GameMode::Extended => 2,
            GameMode::Plain => 1,
        }
    }
}

/// Largest payoff table accepted at a single node.
pub const MAX_TABLE_ENTRIES: usize = 1 << 26;

/// Number of strategies on a subtree with `depth` remaining steps.
pub fn strategy_count(mode: GameMode, depth: usize) -> Option<usize> {
    let mut s: usize = 1;
    for _ in 0..depth {
        s = s.checked_mul(s)?.checked_add(mode.stop_options())?;
    }
    Some(s)
}

fn enumeration_guard<T>(tree: &TwoPhaseTree<T>, mode: GameMode, bound: usize) -> Result<Vec<usize>> {
    let err = Error::EnumerationBound {
        steps: tree.steps(),
        bound,
    };
    if tree.steps() > bound {
        return Err(err);
    }
    let counts = (0..=tree.steps())
        .map(|d| strategy_count(mode, d))
        .collect::<Option<Vec<_>>>()
        .ok_or(err.clone())?;
    let top = counts[tree.steps()];
    if top.checked_mul(top).is_none_or(|n| n > MAX_TABLE_ENTRIES) {
        return Err(err);
    }
    Ok(counts)
}

/// Extended payoff `J(tau|H, sigma|G)`, one value per path.
pub fn payoff_extended<T: Scalar>(
    tree: &TwoPhaseTree<T>,
    barriers: &Barriers<T>,
    rho_tau: &StoppingSystem,
    rho_sigma: &StoppingSystem,
) -> Vec<T> {
    let lower = eval_upper(tree, &barriers.lower, rho_tau);
    let upper = eval_lower(tree, &barriers.upper, rho_sigma);
    combine(tree, barriers, &rho_tau.tau, &rho_sigma.tau, &lower, &upper)
}

/// Plain payoff `J_0(tau, sigma)`, one value per path.
pub fn payoff_plain<T: Scalar>(
    tree: &TwoPhaseTree<T>,
    barriers: &Barriers<T>,
    tau: &StoppingTime,
    sigma: &StoppingTime,
) -> Vec<T> {
    let lower = crate::lattice::eval_at(tree, &barriers.lower, tau);
    let upper = crate::lattice::eval_at(tree, &barriers.upper, sigma);
    combine(tree, barriers, tau, sigma, &lower, &upper)
}

fn combine<T: Scalar>(
    tree: &TwoPhaseTree<T>,
    barriers: &Barriers<T>,
    tau: &StoppingTime,
    sigma: &StoppingTime,
    lower: &[T],
    upper: &[T],
) -> Vec<T> {
    let horizon = crate::lattice::TimePoint::at(tree.steps());
    (0..tree.path_count())
        .map(|p| {
            let (t, s) = (tau.time_on_path(tree, p), sigma.time_on_path(tree, p));
            if t <= s && t < horizon {
                lower[p]
            } else if s < t {
                upper[p]
            } else {
                barriers.terminal[p]
            }
        })
        .collect()
}

/// Grid atoms of an evaluation time: the node where `theta` stops on each path.
pub fn theta_atoms<T>(tree: &TwoPhaseTree<T>, theta: &StoppingTime) -> Result<Vec<NodeId>> {
    (0..tree.path_count())
        .map(|p| {
            let pt = theta.stop_point(tree, p);
            if pt.phase == Phase::At {
                Ok(pt.node)
            } else {
                Err(Error::OffGridTheta {
                    path: tree.path_label(p),
                })
            }
        })
        .collect()
}

/// Payoff of every strategy pair on every subtree.
///
/// Strategy indices at a node: in extended mode `0` stops on time, `1` stops
/// taking the right limit; in plain mode `0` stops. The remaining indices
/// continue, encoding `offset + down * S_child + up`. Terminal nodes have the
/// single forced stop `0`.
#[derive(Clone, Debug)]
pub struct GameTables<T> {
    pub mode: GameMode,
    counts: Vec<usize>,
    steps: usize,
    tables: Vec<Vec<T>>,
}

impl<T: Scalar> GameTables<T> {
    pub fn build(
        tree: &TwoPhaseTree<T>,
        barriers: &Barriers<T>,
        driver: &Driver<T>,
        mode: GameMode,
        bound: usize,
        tol: &Tolerances<T>,
    ) -> Result<Self> {
        let counts = enumeration_guard(tree, mode, bound)?;
        crate::expectation::check_solvable(tree, driver)?;
        let (l, u) = (&barriers.lower, &barriers.upper);
        let off = mode.stop_options();
        let mut tables: Vec<Vec<T>> = vec![Vec::new(); tree.node_count()];
        for (path, &xi) in barriers.terminal.iter().enumerate() {
            tables[tree.leaf(path).index()] = vec![xi];
        }
        for k in (0..tree.steps()).rev() {
            let t = tree.time(k);
            let sc = counts[tree.steps() - k - 1];
            let s = counts[tree.steps() - k];
            for v in tree.nodes_at(k) {
                let (down, up) = tree.children(v).expect("inner node");
                let (td, tu) = (&tables[down.index()], &tables[up.index()]);
                let lower_stop = |i: usize| if i == 0 { l.at(v) } else { l.after(v) };
                let upper_stop = |j: usize| if j == 0 { u.at(v) } else { u.after(v) };
                let mut table = vec![T::zero(); s * s];
                for i in 0..s {
                    for j in 0..s {
                        if i < off {
                            table[i * s + j] = lower_stop(i);
                        } else if j < off {
                            table[i * s + j] = upper_stop(j);
                        }
                    }
                }
                for id in 0..sc {
                    for iu in 0..sc {
                        let i = off + id * sc + iu;
                        for jd in 0..sc {
                            let yd = td[id * sc + jd];
                            for ju in 0..sc {
                                let yu = tu[iu * sc + ju];
                                let mean = T::half() * (yu + yd);
                                let z = (yu - yd) / (T::two() * tree.sqrt_dt());
                                let j = off + jd * sc + ju;
                                table[i * s + j] =
                                    implicit_step(driver, t, tree.dt(), mean, z, T::zero(), true, tol, v)?;
                            }
                        }
                    }
                }
                tables[v.index()] = table;
            }
        }
        Ok(GameTables {
            mode,
            counts,
            steps: tree.steps(),
            tables,
        })
    }

    /// Number of strategies on the subtree of a node at `step`.
    pub fn count_at(&self, step: usize) -> usize {
        self.counts[self.steps - step]
    }

    /// Payoff of pair `(i, j)` on the subtree of `node`.
    pub fn payoff<TT>(&self, tree: &TwoPhaseTree<TT>, node: NodeId, i: usize, j: usize) -> T {
        let s = self.count_at(tree.step_of(node));
        self.tables[node.index()][i * s + j]
    }

    /// Payoff matrix on the subtree of `node`, rows indexed by the maximizer.
    pub fn matrix<TT>(&self, tree: &TwoPhaseTree<TT>, node: NodeId) -> Vec<Vec<T>> {
        let s = self.count_at(tree.step_of(node));
        self.tables[node.index()].chunks(s).map(|r| r.to_vec()).collect()
    }

    /// `(upper, lower)` value on the subtree of `node`.
    pub fn values_at_node<TT>(&self, tree: &TwoPhaseTree<TT>, node: NodeId) -> (T, T) {
        let s = self.count_at(tree.step_of(node));
        let table = &self.tables[node.index()];
        let upper = (0..s)
            .map(|j| (0..s).map(|i| table[i * s + j]).fold(T::neg_infinity(), T::max))
            .fold(T::infinity(), T::min);
        let lower = (0..s)
            .map(|i| (0..s).map(|j| table[i * s + j]).fold(T::infinity(), T::min))
            .fold(T::neg_infinity(), T::max);
        (upper, lower)
    }

    /// Best payoff of the maximizer against the fixed minimizer strategy `j`.
    pub fn best_against_sigma<TT>(&self, tree: &TwoPhaseTree<TT>, node: NodeId, j: usize) -> T {
        let s = self.count_at(tree.step_of(node));
        (0..s)
            .map(|i| self.tables[node.index()][i * s + j])
            .fold(T::neg_infinity(), T::max)
    }

    /// Best payoff of the minimizer against the fixed maximizer strategy `i`.
    pub fn best_against_tau<TT>(&self, tree: &TwoPhaseTree<TT>, node: NodeId, i: usize) -> T {
        let s = self.count_at(tree.step_of(node));
        self.tables[node.index()][i * s..(i + 1) * s]
            .iter()
            .copied()
            .fold(T::infinity(), T::min)
    }

    /// Index of the restriction of `system` to the subtree of `node`.
    ///
    /// `system` must stop at grid times and not before `AT(node)` on the paths
    /// through `node`. In plain mode the event is ignored.
    pub fn encode<TT>(&self, tree: &TwoPhaseTree<TT>, node: NodeId, system: &StoppingSystem) -> Result<usize> {
        if let Some(prev) = tree.previous(Point::at(node)) {
            if system.tau.done(prev) {
                return Err(Error::InvalidParameter(format!(
                    "strategy stops before node {}",
                    tree.label(node)
                )));
            }
        }
        self.encode_rec(tree, node, system)
    }

    fn encode_rec<TT>(&self, tree: &TwoPhaseTree<TT>, node: NodeId, system: &StoppingSystem) -> Result<usize> {
        let Some((down, up)) = tree.children(node) else {
            return Ok(0);
        };
        let at = Point::at(node);
        if system.tau.done(at) {
            return Ok(match self.mode {
                GameMode::Extended if !system.on_time(at) => 1,
                _ => 0,
            });
        }
        if system.tau.done(Point::after(node)) {
            return Err(Error::InvalidParameter(format!(
                "strategy stops off the grid after node {}",
                tree.label(node)
            )));
        }
        let sc = self.count_at(tree.step_of(node) + 1);
        let (d, u) = (self.encode_rec(tree, down, system)?, self.encode_rec(tree, up, system)?);
        Ok(self.mode.stop_options() + d * sc + u)
    }

    /// Stopping system for strategy `index` on the subtree of `node`; on the
    /// other paths it stops on time at the step of `node`.
    pub fn decode<TT>(&self, tree: &TwoPhaseTree<TT>, node: NodeId, index: usize) -> StoppingSystem {
        let k = tree.step_of(node);
        let mut stops = PointSet::constant(tree, false);
        let mut on_time = PointSet::constant(tree, true);
        for other in tree.nodes_at(k).filter(|&n| n != node) {
            stops.set(Point::at(other), true);
        }
        self.decode_rec(tree, node, index, &mut stops, &mut on_time);
        let tau = StoppingTime::from_flags(tree, &stops);
        StoppingSystem::new(tree, tau, |p| on_time.get(p)).expect("terminal stops are on time")
    }

    fn decode_rec<TT>(
        &self,
        tree: &TwoPhaseTree<TT>,
        node: NodeId,
        index: usize,
        stops: &mut PointSet,
        on_time: &mut PointSet,
    ) {
        let Some((down, up)) = tree.children(node) else {
            stops.set(Point::at(node), true);
            return;
        };
        let off = self.mode.stop_options();
        if index < off {
            stops.set(Point::at(node), true);
            on_time.set(Point::at(node), index == 0);
            return;
        }
        let sc = self.count_at(tree.step_of(node) + 1);
        let rest = index - off;
        self.decode_rec(tree, down, rest / sc, stops, on_time);
        self.decode_rec(tree, up, rest % sc, stops, on_time);
    }
}

/// Upper and lower values, one per path (constant on the atoms of `F_theta`).
#[derive(Clone, Debug, PartialEq)]
pub struct GameValues<T> {
    pub upper: Vec<T>,
    pub lower: Vec<T>,
}

/// Exhaustive upper and lower values at `theta`.
#[allow(clippy::too_many_arguments)]
pub fn brute_force_values<T: Scalar>(
    tree: &TwoPhaseTree<T>,
    barriers: &Barriers<T>,
    driver: &Driver<T>,
    theta: &StoppingTime,
    mode: GameMode,
    bound: usize,
    tol: &Tolerances<T>,
) -> Result<GameValues<T>> {
    let atoms = theta_atoms(tree, theta)?;
    let tables = GameTables::build(tree, barriers, driver, mode, bound, tol)?;
    let (upper, lower) = atoms.iter().map(|&v| tables.values_at_node(tree, v)).unzip();
    Ok(GameValues { upper, lower })
}

/// Values at time 0 by materializing every pair of strategies and applying
/// `E^f` to the path-wise payoff. Independent of [`GameTables`] payoffs;
/// meant as a cross-check on small trees.
pub fn literal_values<T: Scalar>(
    tree: &TwoPhaseTree<T>,
    barriers: &Barriers<T>,
    driver: &Driver<T>,
    mode: GameMode,
    bound: usize,
    tol: &Tolerances<T>,
) -> Result<(T, T)> {
    let counts = enumeration_guard(tree, mode, bound)?;
    let s = counts[tree.steps()];
    let index = GameTables::<T> {
        mode,
        counts,
        steps: tree.steps(),
        tables: Vec::new(),
    };
    let systems: Vec<StoppingSystem> = (0..s).map(|i| index.decode(tree, NodeId::ROOT, i)).collect();
    let zero = StoppingTime::zero(tree);
    let mut table = vec![T::zero(); s * s];
    for (i, a) in systems.iter().enumerate() {
        for (j, b) in systems.iter().enumerate() {
            let j_payoff = match mode {
                GameMode::Extended => payoff_extended(tree, barriers, a, b),
                GameMode::Plain => payoff_plain(tree, barriers, &a.tau, &b.tau),
            };
            let stop = a.tau.min(&b.tau);
            table[i * s + j] = nonlinear_expectation(tree, &zero, &stop, &j_payoff, driver, tol)?[0];
        }
    }
    let upper = (0..s)
        .map(|j| (0..s).map(|i| table[i * s + j]).fold(T::neg_infinity(), T::max))
        .fold(T::infinity(), T::min);
    let lower = (0..s)
        .map(|i| (0..s).map(|j| table[i * s + j]).fold(T::infinity(), T::min))
        .fold(T::neg_infinity(), T::max);
    Ok((upper, lower))
}

/// `L_AFTER(k) <= U_AT(k)` at every non-terminal node: under this condition the
/// extended game with the maximizer winning ties has the reflected solution as value.
pub fn tie_compatible<T: Scalar>(tree: &TwoPhaseTree<T>, barriers: &Barriers<T>) -> bool {
    tree.inner_nodes()
        .all(|v| barriers.lower.after(v) <= barriers.upper.at(v))
}

/// Comparison of exhaustive game values with the reflected solution at every node.
#[derive(Clone, Debug, PartialEq)]
pub struct GameReport<T> {
    pub mode: GameMode,
    /// Upper value at `AT(v)` for every node `v`.
    pub upper: Vec<T>,
    pub lower: Vec<T>,
    /// Reflected solution at `AT(v)`.
    pub y: Vec<T>,
    pub max_upper_gap: T,
    pub max_lower_gap: T,
    /// `lower <= Y <= upper` within tolerance at every node.
    pub sandwich: bool,
    /// True if the hypotheses of the value identity hold, so equality is asserted.
    pub asserted: bool,
    pub pass: bool,
}

impl<T: Scalar> GameReport<T> {
    pub fn equal(&self, tol: T) -> bool {
        self.max_upper_gap <= tol && self.max_lower_gap <= tol
    }
}

/// Checks `lower = Y = upper` at every node, where the hypotheses allow it.
///
/// Extended mode asserts equality when the barriers are tie-compatible
/// ([`tie_compatible`]); plain mode when `L` is right upper and `U` right
/// lower semicontinuous. Otherwise the gap is reported only.
pub fn game_equals_rbsde<T: Scalar>(
    tree: &TwoPhaseTree<T>,
    barriers: &Barriers<T>,
    driver: &Driver<T>,
    solution: &RbsdeSolution<T>,
    mode: GameMode,
    bound: usize,
    tol: &Tolerances<T>,
) -> Result<GameReport<T>> {
    let tables = GameTables::build(tree, barriers, driver, mode, bound, tol)?;
    let (upper, lower): (Vec<T>, Vec<T>) = tree.nodes().map(|v| tables.values_at_node(tree, v)).unzip();
    let y: Vec<T> = tree.nodes().map(|v| solution.y.at(v)).collect();
    let gap = |a: &[T]| a.iter().zip(&y).map(|(&a, &b)| (a - b).abs()).fold(T::zero(), T::max);
    let (max_upper_gap, max_lower_gap) = (gap(&upper), gap(&lower));
    let sandwich = (0..y.len()).all(|i| lower[i] <= y[i] + tol.game && y[i] <= upper[i] + tol.game);
    let asserted = match mode {
        GameMode::Extended => tie_compatible(tree, barriers),
        GameMode::Plain => {
            semicontinuity(tree, &barriers.lower).right_usc && semicontinuity(tree, &barriers.upper).right_lsc
        }
    };
    let equal = max_upper_gap <= tol.game && max_lower_gap <= tol.game;
    Ok(GameReport {
        mode,
        upper,
        lower,
        y,
        max_upper_gap,
        max_lower_gap,
        sandwich,
        asserted,
        pass: !asserted || equal,
    })
}

/// Epsilon-optimal stopping systems at `theta` and their diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct EpsilonReport<T> {
    pub epsilon: T,
    /// `tau^eps | H^eps`, first time `Y <= L^xi + eps`.
    pub tau: StoppingSystem,
    /// `sigma^eps | G^eps`, first time `Y >= U^xi - eps`.
    pub sigma: StoppingSystem,
    /// `max (Y - L^{xi,u} - eps)^+` at `tau^eps | H^eps`.
    pub near_lower_excess: T,
    /// `max (U^{xi,l} - eps - Y)^+` at `sigma^eps | G^eps`.
    pub near_upper_excess: T,
    /// `max_tau E^f(J(tau, sigma^eps)) - Y_theta`, floored at 0.
    pub residual_upper: T,
    /// `Y_theta - min_sigma E^f(J(tau^eps, sigma))`, floored at 0.
    pub residual_lower: T,
}

impl<T: Scalar> EpsilonReport<T> {
    pub fn residual(&self) -> T {
        self.residual_upper.max(self.residual_lower)
    }

    pub fn near_contact_holds(&self, tol: T) -> bool {
        self.near_lower_excess <= tol && self.near_upper_excess <= tol
    }
}

/// Builds the epsilon-optimal systems from `y` (the reflected solution) and
/// measures their optimality against every opposing extended strategy.
pub fn epsilon_saddle<T: Scalar>(
    tree: &TwoPhaseTree<T>,
    barriers: &Barriers<T>,
    tables: &GameTables<T>,
    y: &OptionalProcess<T>,
    theta: &StoppingTime,
    epsilon: T,
) -> Result<EpsilonReport<T>> {
    if !(epsilon > T::zero()) {
        return Err(Error::InvalidParameter("epsilon must be positive".into()));
    }
    if tables.mode != GameMode::Extended {
        return Err(Error::InvalidParameter("epsilon systems need extended tables".into()));
    }
    let atoms = theta_atoms(tree, theta)?;
    let (lxi, uxi) = (barriers.lower_xi(tree), barriers.upper_xi(tree));
    let near_lower = PointSet::from_fn(tree, |p| y.get(p) <= lxi.get(p) + epsilon);
    let near_upper = PointSet::from_fn(tree, |p| y.get(p) >= uxi.get(p) - epsilon);
    let tau = first_hitting(tree, &near_lower, theta).grid_system(tree);
    let sigma = first_hitting(tree, &near_upper, theta).grid_system(tree);

    let excess = |a: Vec<T>, b: Vec<T>| a.iter().zip(&b).map(|(&a, &b)| a - b).fold(T::zero(), T::max);
    let y_tau = eval_upper(tree, y, &tau);
    let l_tau: Vec<T> = eval_upper(tree, &lxi, &tau).into_iter().map(|v| v + epsilon).collect();
    let y_sigma = eval_lower(tree, y, &sigma);
    let u_sigma: Vec<T> = eval_lower(tree, &uxi, &sigma)
        .into_iter()
        .map(|v| v - epsilon)
        .collect();

    let (mut residual_upper, mut residual_lower) = (T::zero(), T::zero());
    for v in dedup(atoms) {
        let yv = y.at(v);
        let j = tables.encode(tree, v, &sigma)?;
        let i = tables.encode(tree, v, &tau)?;
        residual_upper = residual_upper.max(tables.best_against_sigma(tree, v, j) - yv);
        residual_lower = residual_lower.max(yv - tables.best_against_tau(tree, v, i));
    }
    Ok(EpsilonReport {
        epsilon,
        tau,
        sigma,
        near_lower_excess: excess(y_tau, l_tau),
        near_upper_excess: excess(u_sigma, y_sigma),
        residual_upper,
        residual_lower,
    })
}

fn dedup(mut nodes: Vec<NodeId>) -> Vec<NodeId> {
    nodes.sort();
    nodes.dedup();
    nodes
}

/// Epsilon reports over a decreasing sweep with the fitted constants `residual / eps`.
#[derive(Clone, Debug, PartialEq)]
pub struct EpsilonSweep<T> {
    pub reports: Vec<EpsilonReport<T>>,
    pub constants: Vec<T>,
    /// `max` of the fitted constants.
    pub c_fit: T,
    /// Each halving step grows the constant by at most a factor 4 (beyond the
    /// absolute tolerance).
    pub stable: bool,
}

pub fn epsilon_sweep<T: Scalar>(
    tree: &TwoPhaseTree<T>,
    barriers: &Barriers<T>,
    tables: &GameTables<T>,
    y: &OptionalProcess<T>,
    theta: &StoppingTime,
    epsilons: &[T],
    tol: &Tolerances<T>,
) -> Result<EpsilonSweep<T>> {
    let mut eps = epsilons.to_vec();
    eps.sort_by(|a, b| b.partial_cmp(a).expect("finite epsilon"));
    let reports = eps
        .iter()
        .map(|&e| epsilon_saddle(tree, barriers, tables, y, theta, e))
        .collect::<Result<Vec<_>>>()?;
    let constants: Vec<T> = reports.iter().map(|r| r.residual() / r.epsilon).collect();
    let four = T::lit(4.0);
    let stable = reports
        .windows(2)
        .zip(constants.windows(2))
        .all(|(r, c)| c[1] <= four * c[0] + tol.game / r[1].epsilon);
    Ok(EpsilonSweep {
        c_fit: constants.iter().copied().fold(T::zero(), T::max),
        reports,
        constants,
        stable,
    })
}

/// Saddle-point candidates at `theta` and their verification against plain strategies.
#[derive(Clone, Debug, PartialEq)]
pub struct SaddleReport<T> {
    /// Reflected solution at `theta`, one value per path.
    pub value: Vec<T>,
    /// Both barriers have the one-sided semicontinuity the saddle results need.
    pub hypotheses: bool,
    pub tau_star: StoppingSystem,
    pub sigma_star: StoppingSystem,
    pub tau_bar: StoppingTime,
    pub sigma_bar: StoppingTime,
    /// `max |Y - L^xi|` at `tau*` and `max |Y - U^xi|` at `sigma*`.
    pub contact_star: T,
    /// Same at `tau_bar`, `sigma_bar`.
    pub contact_bar: T,
    /// `tau* <= tau_bar` and `sigma* <= sigma_bar`.
    pub ordered: bool,
    /// `max(sup_tau J(tau, sigma*) - Y, Y - inf_sigma J(tau*, sigma))^+` over atoms.
    pub residual_star: T,
    pub residual_bar: T,
}

impl<T: Scalar> SaddleReport<T> {
    pub fn pass(&self, tol: &Tolerances<T>) -> bool {
        self.contact_star <= tol.root
            && self.contact_bar <= tol.root
            && self.ordered
            && self.residual_star <= tol.game
            && self.residual_bar <= tol.game
    }
}

/// First contact times `tau*`, `sigma*` and first growth times `tau_bar`,
/// `sigma_bar` after `theta`, checked as saddle points of the plain game.
#[allow(clippy::too_many_arguments)]
pub fn saddle_points<T: Scalar>(
    tree: &TwoPhaseTree<T>,
    barriers: &Barriers<T>,
    driver: &Driver<T>,
    solution: &RbsdeSolution<T>,
    theta: &StoppingTime,
    bound: usize,
    tol: &Tolerances<T>,
) -> Result<SaddleReport<T>> {
    let atoms = theta_atoms(tree, theta)?;
    let tables = GameTables::build(tree, barriers, driver, GameMode::Plain, bound, tol)?;
    let y = &solution.y;
    let (lxi, uxi) = (barriers.lower_xi(tree), barriers.upper_xi(tree));
    let sl = semicontinuity(tree, &barriers.lower);
    let su = semicontinuity(tree, &barriers.upper);
    let hypotheses = sl.usc() && su.lsc();

    let on_lower = PointSet::from_fn(tree, |p| (y.get(p) - lxi.get(p)).abs() <= tol.root);
    let on_upper = PointSet::from_fn(tree, |p| (y.get(p) - uxi.get(p)).abs() <= tol.root);
    let tau_star = first_hitting(tree, &on_lower, theta).grid_system(tree);
    let sigma_star = first_hitting(tree, &on_upper, theta).grid_system(tree);

    let grows = |inc: &crate::expectation::Increments<T>, v: NodeId| {
        inc.phase[v.index()] > T::zero() || inc.step[v.index()] > T::zero()
    };
    let tau_bar = StoppingTime::from_fn(tree, |p| {
        p.phase == Phase::At && theta.done(p) && !tree.is_terminal(p.node) && grows(&solution.r_plus, p.node)
    });
    let sigma_bar = StoppingTime::from_fn(tree, |p| {
        p.phase == Phase::At && theta.done(p) && !tree.is_terminal(p.node) && grows(&solution.r_minus, p.node)
    });

    let gap = |a: Vec<T>, b: Vec<T>| a.iter().zip(&b).map(|(&a, &b)| (a - b).abs()).fold(T::zero(), T::max);
    let contact_star = gap(eval_upper(tree, y, &tau_star), eval_upper(tree, &lxi, &tau_star)).max(gap(
        eval_lower(tree, y, &sigma_star),
        eval_lower(tree, &uxi, &sigma_star),
    ));
    let at = crate::lattice::eval_at;
    let contact_bar = gap(at(tree, y, &tau_bar), at(tree, &lxi, &tau_bar))
        .max(gap(at(tree, y, &sigma_bar), at(tree, &uxi, &sigma_bar)));
    let ordered = tau_star.tau.le(&tau_bar) && sigma_star.tau.le(&sigma_bar);

    let whole = |t: &StoppingTime| StoppingSystem::whole(tree, t.clone());
    let residual = |tau: &StoppingSystem, sigma: &StoppingSystem| -> Result<T> {
        let mut worst = T::zero();
        for &v in &dedup(atoms.clone()) {
            let yv = y.at(v);
            let i = tables.encode(tree, v, tau)?;
            let j = tables.encode(tree, v, sigma)?;
            worst = worst
                .max(tables.best_against_sigma(tree, v, j) - yv)
                .max(yv - tables.best_against_tau(tree, v, i));
        }
        Ok(worst)
    };
    let residual_star = residual(&tau_star, &sigma_star)?;
    let residual_bar = residual(&whole(&tau_bar), &whole(&sigma_bar))?;
    Ok(SaddleReport {
        value: atoms.iter().map(|&v| y.at(v)).collect(),
        hypotheses,
        tau_star,
        sigma_star,
        tau_bar,
        sigma_bar,
        contact_star,
        contact_bar,
        ordered,
        residual_star,
        residual_bar,
    })
}
