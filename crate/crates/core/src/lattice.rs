//! Finite two-phase filtration tree.
//!
//! Time runs over the grid `t_k = k * dt`, `k = 0..=N`. Every grid time carries
//! two phase points: `AT(k)` (the value at `t_k`) and `AFTER(k)` (the right limit
//! `t_k+`, which also stands for the open interval `(t_k, t_{k+1})`). The order is
//! `AT(k) < AFTER(k) < AT(k+1)`; the terminal time has no `AFTER` point.
//!
//! Nodes form a binary path tree stored in heap order: the root is node 0 and
//! node `i` has children `2i + 1` (down move) and `2i + 2` (up move). A node at
//! step `k` is identified by the `k` path bits leading to it (1 = up, first move
//! in the most significant position). Per-path quantities are indexed by the
//! `N`-bit path number of the leaf.
//!
//! On this grid the one-sided limits of the continuous theory collapse:
//! the right limit at `AT(k)` is the `AFTER(k)` value and the left limit at
//! `AT(k+1)` is the `AFTER(k)` value of the parent. `limsup` and `liminf`
//! therefore coincide, but both accessors are kept so that code paths reading
//! one or the other stay distinguishable. Chains of stopping times are trivial
//! on a finite grid and are not modelled.

use std::fmt;
use std::io::{self, Write};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Phase {
    At,
    After,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Phase::At => f.write_str("AT"),
            Phase::After => f.write_str("AFTER"),
        }
    }
}

/// Position on the time axis. The derived order is `(step, phase)`
/// lexicographic, which is exactly `AT(k) < AFTER(k) < AT(k+1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TimePoint {
    pub step: usize,
    pub phase: Phase,
}

impl TimePoint {
    pub fn at(step: usize) -> Self {
        TimePoint { step, phase: Phase::At }
    }

    pub fn after(step: usize) -> Self {
        TimePoint {
            step,
            phase: Phase::After,
        }
    }
}

impl fmt::Display for TimePoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({})", self.phase, self.step)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub usize);

impl NodeId {
    pub const ROOT: NodeId = NodeId(0);

    pub fn index(self) -> usize {
        self.0
    }
}

/// A phase point of a node: the atom of the filtration together with a time point.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Point {
    pub node: NodeId,
    pub phase: Phase,
}

impl Point {
    pub fn at(node: NodeId) -> Self {
        Point { node, phase: Phase::At }
    }

    pub fn after(node: NodeId) -> Self {
        Point {
            node,
            phase: Phase::After,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TwoPhaseTree<T> {
    steps: usize,
    dt: T,
    sqrt_dt: T,
}

impl<T: Scalar> TwoPhaseTree<T> {
    /// Builds the path tree with `steps` Brownian steps of length `dt`.
    pub fn new(steps: usize, dt: T) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidTree("need at least one step".into()));
        }
        if steps >= usize::BITS as usize - 2 {
            return Err(Error::InvalidTree(format!("{steps} steps do not fit in memory")));
        }
        if !(dt > T::zero()) || !dt.is_finite() {
            return Err(Error::InvalidTree(format!("dt must be positive, got {dt}")));
        }
        Ok(TwoPhaseTree {
            steps,
            dt,
            sqrt_dt: dt.sqrt(),
        })
    }

    pub fn dt(&self) -> T {
        self.dt
    }

    pub fn sqrt_dt(&self) -> T {
        self.sqrt_dt
    }

    pub fn horizon(&self) -> T {
        self.time(self.steps)
    }

    pub fn time(&self, step: usize) -> T {
        T::lit(step as f64) * self.dt
    }

    /// Probability of each child; the tree is symmetric.
    pub fn child_probability(&self) -> T {
        T::half()
    }

    /// Brownian value `B` accumulated along the path to `node`.
    pub fn brownian(&self, node: NodeId) -> T {
        let k = self.step_of(node);
        let ups = self.bits(node).count_ones() as f64;
        T::lit(2.0 * ups - k as f64) * self.sqrt_dt
    }
}

impl<T> TwoPhaseTree<T> {
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn node_count(&self) -> usize {
        (1usize << (self.steps + 1)) - 1
    }

    /// Number of non-terminal nodes; in heap order they are exactly `0..inner_count()`.
    pub fn inner_count(&self) -> usize {
        (1usize << self.steps) - 1
    }

    pub fn path_count(&self) -> usize {
        1usize << self.steps
    }

    pub fn step_of(&self, node: NodeId) -> usize {
        (usize::BITS - 1 - (node.0 + 1).leading_zeros()) as usize
    }

    /// Path bits of `node` (its `step_of(node)` moves, 1 = up).
    pub fn bits(&self, node: NodeId) -> usize {
        node.0 + 1 - (1usize << self.step_of(node))
    }

    pub fn node_at(&self, step: usize, bits: usize) -> NodeId {
        debug_assert!(step <= self.steps && bits < (1usize << step));
        NodeId((1usize << step) - 1 + bits)
    }

    pub fn is_terminal(&self, node: NodeId) -> bool {
        node.0 >= self.inner_count()
    }

    /// `(down, up)` children of a non-terminal node.
    pub fn children(&self, node: NodeId) -> Option<(NodeId, NodeId)> {
        if self.is_terminal(node) {
            None
        } else {
            Some((NodeId(2 * node.0 + 1), NodeId(2 * node.0 + 2)))
        }
    }

    pub fn parent(&self, node: NodeId) -> Option<NodeId> {
        if node.0 == 0 {
            None
        } else {
            Some(NodeId((node.0 - 1) / 2))
        }
    }

    pub fn nodes_at(&self, step: usize) -> impl Iterator<Item = NodeId> {
        ((1usize << step) - 1..(1usize << (step + 1)) - 1).map(NodeId)
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> {
        (0..self.node_count()).map(NodeId)
    }

    pub fn inner_nodes(&self) -> impl Iterator<Item = NodeId> {
        (0..self.inner_count()).map(NodeId)
    }

    pub fn leaf(&self, path: usize) -> NodeId {
        self.node_at(self.steps, path)
    }

    /// Node visited by `path` at `step`.
    pub fn node_on_path(&self, path: usize, step: usize) -> NodeId {
        self.node_at(step, path >> (self.steps - step))
    }

    /// Paths passing through `node`, as a contiguous range of path numbers.
    pub fn paths_through(&self, node: NodeId) -> std::ops::Range<usize> {
        let shift = self.steps - self.step_of(node);
        let b = self.bits(node);
        (b << shift)..((b + 1) << shift)
    }

    /// True if `node` lies in the subtree rooted at `root` (including `root`).
    pub fn in_subtree(&self, node: NodeId, root: NodeId) -> bool {
        let (kn, kr) = (self.step_of(node), self.step_of(root));
        kn >= kr && (self.bits(node) >> (kn - kr)) == self.bits(root)
    }

    pub fn time_point(&self, point: Point) -> TimePoint {
        TimePoint {
            step: self.step_of(point.node),
            phase: point.phase,
        }
    }

    /// Immediate predecessor phase point along the path (`None` at the root `AT`).
    pub fn previous(&self, point: Point) -> Option<Point> {
        match point.phase {
            Phase::After => Some(Point::at(point.node)),
            Phase::At => self.parent(point.node).map(Point::after),
        }
    }

    /// All phase points in forward time order, level by level.
    pub fn points(&self) -> impl Iterator<Item = Point> + '_ {
        (0..=self.steps).flat_map(move |k| {
            let at = self.nodes_at(k).map(Point::at);
            let after: Box<dyn Iterator<Item = Point>> = if k < self.steps {
                Box::new(self.nodes_at(k).map(Point::after))
            } else {
                Box::new(std::iter::empty())
            };
            at.chain(after)
        })
    }

    /// Human readable path label, e.g. `"UD"`; the root is `"-"`.
    pub fn label(&self, node: NodeId) -> String {
        let k = self.step_of(node);
        if k == 0 {
            return "-".to_string();
        }
        let b = self.bits(node);
        (0..k)
            .map(|i| if (b >> (k - 1 - i)) & 1 == 1 { 'U' } else { 'D' })
            .collect()
    }

    pub fn path_label(&self, path: usize) -> String {
        self.label(self.leaf(path))
    }
}

/// Convenience constructor mirroring the `build_tree` operation.
pub fn build_tree<T: Scalar>(steps: usize, dt: T) -> Result<TwoPhaseTree<T>> {
    TwoPhaseTree::new(steps, dt)
}

/// A value at every phase point: `at` for all nodes, `after` for non-terminal nodes.
///
/// Adaptedness is structural: a value is attached to a node, i.e. to the path
/// prefix leading to it.
#[derive(Clone, Debug, PartialEq)]
pub struct OptionalProcess<V> {
    at: Vec<V>,
    after: Vec<V>,
}

/// Boolean process: a set of phase points.
pub type PointSet = OptionalProcess<bool>;

impl<V: Copy> OptionalProcess<V> {
    pub fn from_fn<T>(tree: &TwoPhaseTree<T>, mut f: impl FnMut(Point) -> V) -> Self {
        let at = tree.nodes().map(|n| f(Point::at(n))).collect();
        let after = tree.inner_nodes().map(|n| f(Point::after(n))).collect();
        OptionalProcess { at, after }
    }

    pub fn constant<T>(tree: &TwoPhaseTree<T>, value: V) -> Self {
        OptionalProcess {
            at: vec![value; tree.node_count()],
            after: vec![value; tree.inner_count()],
        }
    }

    pub fn from_parts<T>(tree: &TwoPhaseTree<T>, at: Vec<V>, after: Vec<V>) -> Result<Self> {
        if at.len() != tree.node_count() {
            return Err(Error::Shape {
                what: "AT values",
                expected: tree.node_count(),
                got: at.len(),
            });
        }
        if after.len() != tree.inner_count() {
            return Err(Error::Shape {
                what: "AFTER values",
                expected: tree.inner_count(),
                got: after.len(),
            });
        }
        Ok(OptionalProcess { at, after })
    }

    pub fn fits<T>(&self, tree: &TwoPhaseTree<T>) -> bool {
        self.at.len() == tree.node_count() && self.after.len() == tree.inner_count()
    }

    pub fn at(&self, node: NodeId) -> V {
        self.at[node.0]
    }

    /// Value at `AFTER(node)`. Panics for terminal nodes.
    pub fn after(&self, node: NodeId) -> V {
        self.after[node.0]
    }

    pub fn get(&self, point: Point) -> V {
        match point.phase {
            Phase::At => self.at[point.node.0],
            Phase::After => self.after[point.node.0],
        }
    }

    pub fn set(&mut self, point: Point, value: V) {
        match point.phase {
            Phase::At => self.at[point.node.0] = value,
            Phase::After => self.after[point.node.0] = value,
        }
    }

    pub fn at_values(&self) -> &[V] {
        &self.at
    }

    pub fn after_values(&self) -> &[V] {
        &self.after
    }

    /// `limsup_{s -> t+}`; on the grid the single `AFTER` value (`None` at the terminal time).
    pub fn right_limsup(&self, node: NodeId) -> Option<V> {
        self.after.get(node.0).copied()
    }

    /// `liminf_{s -> t+}`; same field as [`Self::right_limsup`] on the grid.
    pub fn right_liminf(&self, node: NodeId) -> Option<V> {
        self.after.get(node.0).copied()
    }

    /// `limsup_{s -> t-}` at `AT(node)`: the parent's `AFTER` value (`None` at the root).
    pub fn left_limsup<T>(&self, tree: &TwoPhaseTree<T>, node: NodeId) -> Option<V> {
        tree.parent(node).map(|p| self.after[p.0])
    }

    pub fn left_liminf<T>(&self, tree: &TwoPhaseTree<T>, node: NodeId) -> Option<V> {
        self.left_limsup(tree, node)
    }

    pub fn map<W: Copy>(&self, mut f: impl FnMut(V) -> W) -> OptionalProcess<W> {
        OptionalProcess {
            at: self.at.iter().map(|&v| f(v)).collect(),
            after: self.after.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_with<W: Copy, X: Copy>(
        &self,
        other: &OptionalProcess<W>,
        mut f: impl FnMut(V, W) -> X,
    ) -> OptionalProcess<X> {
        OptionalProcess {
            at: self.at.iter().zip(&other.at).map(|(&a, &b)| f(a, b)).collect(),
            after: self.after.iter().zip(&other.after).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    /// Values along `path` in time order.
    pub fn along_path<T>(&self, tree: &TwoPhaseTree<T>, path: usize) -> Vec<(TimePoint, V)> {
        let mut out = Vec::with_capacity(2 * tree.steps() + 1);
        for k in 0..=tree.steps() {
            let node = tree.node_on_path(path, k);
            out.push((TimePoint::at(k), self.at(node)));
            if k < tree.steps() {
                out.push((TimePoint::after(k), self.after(node)));
            }
        }
        out
    }
}

impl<T: Scalar> OptionalProcess<T> {
    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.at
            .iter()
            .zip(&other.at)
            .chain(self.after.iter().zip(&other.after))
            .map(|(&a, &b)| (a - b).abs())
            .fold(T::zero(), T::max)
    }

    /// `self <= other + tol` at every phase point.
    pub fn le_everywhere(&self, other: &Self, tol: T) -> bool {
        self.at
            .iter()
            .zip(&other.at)
            .chain(self.after.iter().zip(&other.after))
            .all(|(&a, &b)| a <= b + tol)
    }

    pub fn all_finite(&self) -> bool {
        self.at.iter().chain(&self.after).all(|v| v.is_finite())
    }

    /// Writes `step,phase,path,value` rows in time order.
    pub fn write_csv<W: Write>(&self, tree: &TwoPhaseTree<T>, mut w: W) -> io::Result<()> {
        writeln!(w, "step,phase,path,value")?;
        for p in tree.points() {
            let tp = tree.time_point(p);
            writeln!(
                w,
                "{},{},{},{:.16e}",
                tp.step,
                tp.phase,
                tree.label(p.node),
                self.get(p).as_f64()
            )?;
        }
        Ok(())
    }
}

/// Stopping time on the phase grid, stored as the set of phase points where it
/// has already stopped. Every path stops at the latest at `AT(N)`.
#[derive(Clone, Debug, PartialEq)]
pub struct StoppingTime {
    done: PointSet,
}

impl StoppingTime {
    /// Stops at the first flagged phase point of every path (and at `T` if none).
    pub fn from_fn<T>(tree: &TwoPhaseTree<T>, mut flag: impl FnMut(Point) -> bool) -> Self {
        let mut done = PointSet::constant(tree, false);
        for p in tree.points() {
            let before = tree.previous(p).map(|q| done.get(q)).unwrap_or(false);
            let terminal = p.phase == Phase::At && tree.is_terminal(p.node);
            done.set(p, before || terminal || flag(p));
        }
        StoppingTime { done }
    }

    pub fn from_flags<T>(tree: &TwoPhaseTree<T>, flags: &PointSet) -> Self {
        Self::from_fn(tree, |p| flags.get(p))
    }

    /// Deterministic stopping time at `time` (clamped to the horizon).
    pub fn constant<T>(tree: &TwoPhaseTree<T>, time: TimePoint) -> Self {
        Self::from_fn(tree, |p| tree.time_point(p) >= time)
    }

    pub fn zero<T>(tree: &TwoPhaseTree<T>) -> Self {
        Self::constant(tree, TimePoint::at(0))
    }

    pub fn terminal<T>(tree: &TwoPhaseTree<T>) -> Self {
        Self::constant(tree, TimePoint::at(tree.steps()))
    }

    /// `tau <= point` on the paths through `point`.
    pub fn done(&self, point: Point) -> bool {
        self.done.get(point)
    }

    pub fn done_set(&self) -> &PointSet {
        &self.done
    }

    /// True if `point` is the realized stopping point on the paths through it.
    pub fn stops_at<T>(&self, tree: &TwoPhaseTree<T>, point: Point) -> bool {
        self.done.get(point) && !tree.previous(point).map(|q| self.done.get(q)).unwrap_or(false)
    }

    pub fn stop_point<T>(&self, tree: &TwoPhaseTree<T>, path: usize) -> Point {
        for k in 0..=tree.steps() {
            let node = tree.node_on_path(path, k);
            if self.done.at(node) {
                return Point::at(node);
            }
            if k < tree.steps() && self.done.after(node) {
                return Point::after(node);
            }
        }
        unreachable!("every path stops at the horizon")
    }

    pub fn stop_points<T>(&self, tree: &TwoPhaseTree<T>) -> Vec<Point> {
        (0..tree.path_count()).map(|p| self.stop_point(tree, p)).collect()
    }

    /// Realized stopping points, each listed once.
    pub fn atoms<T>(&self, tree: &TwoPhaseTree<T>) -> Vec<Point> {
        tree.points().filter(|&p| self.stops_at(tree, p)).collect()
    }

    pub fn time_on_path<T>(&self, tree: &TwoPhaseTree<T>, path: usize) -> TimePoint {
        tree.time_point(self.stop_point(tree, path))
    }

    /// Path-wise `self <= other`.
    pub fn le(&self, other: &StoppingTime) -> bool {
        // self <= other iff whenever other has stopped, self has stopped too.
        other
            .done
            .at
            .iter()
            .zip(&self.done.at)
            .chain(other.done.after.iter().zip(&self.done.after))
            .all(|(&o, &s)| !o || s)
    }

    /// First path (if any) on which `self <= other` fails.
    pub fn first_violation_of_le<T>(&self, tree: &TwoPhaseTree<T>, other: &StoppingTime) -> Option<usize> {
        (0..tree.path_count()).find(|&p| self.time_on_path(tree, p) > other.time_on_path(tree, p))
    }

    pub fn min(&self, other: &StoppingTime) -> StoppingTime {
        StoppingTime {
            done: self.done.zip_with(&other.done, |a, b| a || b),
        }
    }

    pub fn max(&self, other: &StoppingTime) -> StoppingTime {
        StoppingTime {
            done: self.done.zip_with(&other.done, |a, b| a && b),
        }
    }

    /// True if the time never stops at an `AFTER` point.
    pub fn is_grid<T>(&self, tree: &TwoPhaseTree<T>) -> bool {
        tree.inner_nodes().all(|n| !self.stops_at(tree, Point::after(n)))
    }

    /// Moves every `AFTER(k)` stop to `AT(k)` of the same node: the grid time of the stop.
    pub fn to_grid<T>(&self, tree: &TwoPhaseTree<T>) -> StoppingTime {
        StoppingTime::from_fn(tree, |p| {
            p.phase == Phase::At && self.done(Point::after(p.node)) || self.done(p)
        })
    }
}

/// A stopping time `tau` together with an event `H` observed at `tau` (the
/// player takes the value at `tau` on `H` and its right limit off `H`).
/// `{tau = T}` is always contained in `H`.
#[derive(Clone, Debug, PartialEq)]
pub struct StoppingSystem {
    pub tau: StoppingTime,
    on_time: PointSet,
}

impl StoppingSystem {
    /// `H` is read at the realized stopping points only; the terminal points must be in `H`.
    pub fn new<T>(tree: &TwoPhaseTree<T>, tau: StoppingTime, mut on_time: impl FnMut(Point) -> bool) -> Result<Self> {
        let flags = PointSet::from_fn(tree, |p| tau.stops_at(tree, p) && on_time(p));
        for node in tree.nodes_at(tree.steps()) {
            let p = Point::at(node);
            if tau.stops_at(tree, p) && !flags.get(p) {
                return Err(Error::InvalidStoppingSystem { path: tree.label(node) });
            }
        }
        Ok(StoppingSystem { tau, on_time: flags })
    }

    /// `tau` with `H = Omega`.
    pub fn whole<T>(tree: &TwoPhaseTree<T>, tau: StoppingTime) -> Self {
        let on_time = PointSet::from_fn(tree, |p| tau.stops_at(tree, p));
        StoppingSystem { tau, on_time }
    }

    /// Membership in `H` of the realized stopping point `point`.
    pub fn on_time(&self, point: Point) -> bool {
        self.on_time.get(point)
    }

    pub fn in_h<T>(&self, tree: &TwoPhaseTree<T>, path: usize) -> bool {
        self.on_time(self.tau.stop_point(tree, path))
    }
}

fn eval_system<T: Scalar>(
    tree: &TwoPhaseTree<T>,
    process: &OptionalProcess<T>,
    rho: &StoppingSystem,
    right: impl Fn(NodeId) -> Option<T>,
) -> Vec<T> {
    (0..tree.path_count())
        .map(|path| {
            let p = rho.tau.stop_point(tree, path);
            if rho.on_time(p) {
                process.get(p)
            } else {
                // Off H the stop is before T, so the right limit exists.
                right(p.node).unwrap_or_else(|| process.get(p))
            }
        })
        .collect()
}

/// `phi^u` at `tau|H`: `phi_tau` on `H`, the right limsup off `H`. One value per path.
pub fn eval_upper<T: Scalar>(tree: &TwoPhaseTree<T>, process: &OptionalProcess<T>, rho: &StoppingSystem) -> Vec<T> {
    eval_system(tree, process, rho, |n| process.right_limsup(n))
}

/// `phi^l` at `tau|H`: `phi_tau` on `H`, the right liminf off `H`. One value per path.
pub fn eval_lower<T: Scalar>(tree: &TwoPhaseTree<T>, process: &OptionalProcess<T>, rho: &StoppingSystem) -> Vec<T> {
    eval_system(tree, process, rho, |n| process.right_liminf(n))
}

/// `phi_tau`, one value per path.
pub fn eval_at<T: Scalar>(tree: &TwoPhaseTree<T>, process: &OptionalProcess<T>, tau: &StoppingTime) -> Vec<T> {
    (0..tree.path_count())
        .map(|path| process.get(tau.stop_point(tree, path)))
        .collect()
}

/// Result of [`first_hitting`].
#[derive(Clone, Debug, PartialEq)]
pub struct Hitting {
    pub time: StoppingTime,
    /// At each realized stopping point: whether the condition holds there
    /// (as opposed to the horizon cap being reached without a hit).
    pub hit: PointSet,
}

impl Hitting {
    /// The system `tau|H` with `H` = hit points, completed by `{tau = T}`.
    pub fn system<T>(&self, tree: &TwoPhaseTree<T>) -> StoppingSystem {
        StoppingSystem::new(tree, self.time.clone(), |p| {
            self.hit.get(p) || (p.phase == Phase::At && tree.is_terminal(p.node))
        })
        .expect("terminal points are added to H")
    }

    /// Grid version: a hit at `AFTER(k)` becomes a stop at the grid time `t_k`
    /// taking the right limit (`H` excludes that path); a hit at `AT(k)` is on time.
    pub fn grid_system<T>(&self, tree: &TwoPhaseTree<T>) -> StoppingSystem {
        let time = self.time.to_grid(tree);
        let on_time = |p: Point| -> bool {
            if tree.is_terminal(p.node) {
                return true;
            }
            // p is an AT point here since the grid time never stops at AFTER.
            if self.time.stops_at(tree, p) {
                self.hit.get(p)
            } else {
                // the original time stopped at AFTER(node): right-limit stop
                false
            }
        };
        StoppingSystem::new(tree, time, on_time).expect("terminal points are added to H")
    }
}

/// First phase point `>= theta` where `condition` holds, capped at `T`.
pub fn first_hitting<T>(tree: &TwoPhaseTree<T>, condition: &PointSet, theta: &StoppingTime) -> Hitting {
    let time = StoppingTime::from_fn(tree, |p| theta.done(p) && condition.get(p));
    let hit = PointSet::from_fn(tree, |p| time.stops_at(tree, p) && theta.done(p) && condition.get(p));
    Hitting { time, hit }
}

/// One-sided semicontinuity flags of a process on the grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Semicontinuity {
    /// `X(AT k) >= X(AFTER k)` everywhere.
    pub right_usc: bool,
    /// `X(AT k) <= X(AFTER k)` everywhere.
    pub right_lsc: bool,
    /// `X(AT k+1) >= X(AFTER k)` along every edge.
    pub left_usc: bool,
    /// `X(AT k+1) <= X(AFTER k)` along every edge.
    pub left_lsc: bool,
}

impl Semicontinuity {
    pub fn usc(&self) -> bool {
        self.right_usc && self.left_usc
    }

    pub fn lsc(&self) -> bool {
        self.right_lsc && self.left_lsc
    }
}

pub fn semicontinuity<T: Scalar>(tree: &TwoPhaseTree<T>, process: &OptionalProcess<T>) -> Semicontinuity {
    let mut flags = Semicontinuity {
        right_usc: true,
        right_lsc: true,
        left_usc: true,
        left_lsc: true,
    };
    for node in tree.inner_nodes() {
        let (at, after) = (process.at(node), process.after(node));
        flags.right_usc &= at >= after;
        flags.right_lsc &= at <= after;
        let (down, up) = tree.children(node).expect("inner node");
        for child in [down, up] {
            flags.left_usc &= process.at(child) >= after;
            flags.left_lsc &= process.at(child) <= after;
        }
    }
    flags
}

/// True if `values` (one per path) is constant on every atom of `F_tau`.
pub fn is_measurable_at<T: Scalar>(tree: &TwoPhaseTree<T>, values: &[T], tau: &StoppingTime, tol: T) -> bool {
    tau.atoms(tree).into_iter().all(|p| {
        let mut paths = tree.paths_through(p.node);
        let first = values[paths.next().expect("non-empty")];
        paths.all(|q| (values[q] - first).abs() <= tol)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tree(n: usize, dt: f64) -> TwoPhaseTree<f64> {
        TwoPhaseTree::new(n, dt).unwrap()
    }

    #[test]
    fn build_tree_examples() {
        let t = tree(1, 1.0);
        assert_eq!(t.node_count(), 3);
        let mut leaves: Vec<f64> = t.nodes_at(1).map(|n| t.brownian(n)).collect();
        leaves.sort_by(f64::total_cmp);
        assert_eq!(leaves, vec![-1.0, 1.0]);
        assert_eq!(t.brownian(NodeId::ROOT), 0.0);

        let t = tree(2, 0.5);
        assert_eq!(t.node_count(), 7);
        let s = 0.5f64.sqrt();
        let mut leaves: Vec<f64> = t.nodes_at(2).map(|n| t.brownian(n)).collect();
        leaves.sort_by(f64::total_cmp);
        assert!((leaves[0] + 2.0 * s).abs() < 1e-15);
        assert_eq!(leaves[1], 0.0);
        assert_eq!(leaves[2], 0.0);
        assert!((leaves[3] - 2.0 * s).abs() < 1e-15);

        assert!(TwoPhaseTree::new(0, 1.0).is_err());
        assert!(TwoPhaseTree::new(2, 0.0).is_err());
    }

    #[test]
    fn heap_layout_is_consistent() {
        let t = tree(3, 1.0);
        for node in t.nodes() {
            let k = t.step_of(node);
            assert_eq!(t.node_at(k, t.bits(node)), node);
            if let Some((d, u)) = t.children(node) {
                assert_eq!(t.parent(d), Some(node));
                assert_eq!(t.parent(u), Some(node));
                assert_eq!(t.bits(u), 2 * t.bits(node) + 1);
                assert!((t.brownian(u) - t.brownian(node) - 1.0).abs() < 1e-15);
                assert!((t.brownian(d) - t.brownian(node) + 1.0).abs() < 1e-15);
            }
        }
        assert_eq!(t.paths_through(NodeId(2)), 4..8);
        assert_eq!(t.label(t.node_at(2, 0b10)), "UD");
        assert!(t.in_subtree(t.node_at(3, 0b101), t.node_at(1, 1)));
        assert!(!t.in_subtree(t.node_at(3, 0b001), t.node_at(1, 1)));
    }

    #[test]
    fn time_points_are_totally_ordered() {
        let n = 4;
        let mut pts = Vec::new();
        for k in 0..=n {
            pts.push(TimePoint::at(k));
            if k < n {
                pts.push(TimePoint::after(k));
            }
        }
        for (i, a) in pts.iter().enumerate() {
            for (j, b) in pts.iter().enumerate() {
                assert_eq!(a.cmp(b), i.cmp(&j), "{a} vs {b}");
            }
        }
        // forward iteration visits points in non-decreasing time order
        let t = tree(3, 1.0);
        let order: Vec<TimePoint> = t.points().map(|p| t.time_point(p)).collect();
        assert!(order.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn eval_examples() {
        let t = tree(1, 1.0);
        let c = OptionalProcess::constant(&t, 3.0);
        let tau = StoppingTime::zero(&t);
        let rho = StoppingSystem::new(&t, tau.clone(), |_| false).unwrap();
        assert_eq!(eval_upper(&t, &c, &rho), vec![3.0, 3.0]);

        let mut phi = OptionalProcess::constant(&t, 0.0);
        phi.set(Point::at(NodeId::ROOT), 1.0);
        phi.set(Point::after(NodeId::ROOT), 2.0);
        let on_h = StoppingSystem::whole(&t, tau.clone());
        assert_eq!(eval_upper(&t, &phi, &on_h), vec![1.0, 1.0]);
        assert_eq!(eval_lower(&t, &phi, &on_h), vec![1.0, 1.0]);
        assert_eq!(eval_upper(&t, &phi, &rho), vec![2.0, 2.0]);
        assert_eq!(eval_lower(&t, &phi, &rho), vec![2.0, 2.0]);
    }

    #[test]
    fn system_requires_terminal_in_h() {
        let t = tree(1, 1.0);
        let tau = StoppingTime::terminal(&t);
        assert!(matches!(
            StoppingSystem::new(&t, tau, |_| false),
            Err(Error::InvalidStoppingSystem { .. })
        ));
    }

    #[test]
    fn first_hitting_examples() {
        let t = tree(1, 1.0);
        let zero = StoppingTime::zero(&t);
        let all = PointSet::constant(&t, true);
        let h = first_hitting(&t, &all, &zero);
        assert_eq!(h.time, zero);
        assert!(h.hit.at(NodeId::ROOT));

        let none = PointSet::constant(&t, false);
        let h = first_hitting(&t, &none, &zero);
        assert_eq!(h.time, StoppingTime::terminal(&t));
        assert!(t.nodes().all(|n| !h.hit.at(n)));
        assert!(h.system(&t).in_h(&t, 0));

        // condition only at AT(1) on the up path
        let up = t.node_at(1, 1);
        let cond = PointSet::from_fn(&t, |p| p == Point::at(up));
        let h = first_hitting(&t, &cond, &zero);
        assert_eq!(h.time.stop_point(&t, 1), Point::at(up));
        assert!(h.hit.at(up));
        let down = t.node_at(1, 0);
        assert_eq!(h.time.stop_point(&t, 0), Point::at(down));
        assert!(!h.hit.at(down));

        // condition only at AFTER(0): grid version stops at AT(0) taking the right limit
        let cond = PointSet::from_fn(&t, |p| p == Point::after(NodeId::ROOT));
        let h = first_hitting(&t, &cond, &zero);
        assert_eq!(h.time.stop_point(&t, 0), Point::after(NodeId::ROOT));
        let g = h.grid_system(&t);
        assert_eq!(g.tau, zero);
        assert!(!g.in_h(&t, 0));
    }

    #[test]
    fn first_hitting_respects_theta() {
        let t = tree(2, 1.0);
        let all = PointSet::constant(&t, true);
        let theta = StoppingTime::constant(&t, TimePoint::at(1));
        let h = first_hitting(&t, &all, &theta);
        assert_eq!(h.time, theta);
    }

    #[test]
    fn semicontinuity_examples() {
        let t = tree(1, 1.0);
        let c = OptionalProcess::constant(&t, 1.0);
        let s = semicontinuity(&t, &c);
        assert!(s.right_usc && s.right_lsc && s.left_usc && s.left_lsc);

        let mut x = OptionalProcess::constant(&t, 1.0);
        x.set(Point::at(NodeId::ROOT), 0.0);
        let s = semicontinuity(&t, &x);
        assert!(!s.right_usc && s.right_lsc);

        let mut x = OptionalProcess::constant(&t, 1.0);
        x.set(Point::after(NodeId::ROOT), 2.0);
        let s = semicontinuity(&t, &x);
        assert!(!s.left_usc && s.left_lsc);
    }

    #[test]
    fn ordering_min_max_and_grid() {
        let t = tree(2, 1.0);
        let a = StoppingTime::constant(&t, TimePoint::after(0));
        let b = StoppingTime::constant(&t, TimePoint::at(1));
        assert!(a.le(&b) && !b.le(&a));
        assert_eq!(a.min(&b), a);
        assert_eq!(a.max(&b), b);
        assert!(!a.is_grid(&t));
        assert_eq!(a.to_grid(&t), StoppingTime::zero(&t));
        assert_eq!(b.first_violation_of_le(&t, &a), Some(0));
    }

    #[test]
    fn measurability_scan() {
        let t = tree(2, 1.0);
        let tau = StoppingTime::constant(&t, TimePoint::at(1));
        assert!(is_measurable_at(&t, &[1.0, 1.0, 2.0, 2.0], &tau, 0.0));
        assert!(!is_measurable_at(&t, &[1.0, 0.0, 2.0, 2.0], &tau, 0.0));
    }

    #[test]
    fn csv_has_one_row_per_point() {
        let t = tree(2, 1.0);
        let x = OptionalProcess::from_fn(&t, |p| t.step_of(p.node) as f64);
        let mut buf = Vec::new();
        x.write_csv(&t, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + t.node_count() + t.inner_count());
        assert!(text.lines().nth(1).unwrap().starts_with("0,AT,-,"));
    }
}
