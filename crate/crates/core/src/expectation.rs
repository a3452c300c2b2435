//! Backward recursion for BSDEs on the two-phase tree and the nonlinear
//! expectation `E^f` built on it.
//!
//! One diffusion step runs from `AFTER(k)` to `AT(k+1)` and is solved
//! implicitly:
//!
//! ```text
//! Z = (Y_up - Y_down) / (2 sqrt(dt))
//! y = (Y_up + Y_down) / 2 + f(t_k, y, Z) dt + dV_step
//! ```
//!
//! The phase step `AT(k) -> AFTER(k)` carries no noise and no driver time:
//! `Y_AT = Y_AFTER + dV_phase`. On a finite tree every integrability class
//! coincides, so a single operator `E^f` is exposed.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::lattice::{NodeId, OptionalProcess, Point, StoppingTime, TwoPhaseTree};
use crate::scalar::{Scalar, Tolerances};

pub type DriverFn<T> = Arc<dyn Fn(T, T, T) -> T + Send + Sync>;

/// Catalog family of a driver.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DriverTag {
    Zero,
    Constant,
    Linear,
    Truncated,
    Custom,
}

/// Generator `f(t, y, z)` with its declared constants.
///
/// `lambda` is the Lipschitz constant in `z`, `mu` the monotonicity constant in
/// `y`. `gamma`, `eta` and `g` describe the growth condition in `z`; they are
/// validated but play no role in the recursion.
#[derive(Clone)]
pub struct Driver<T> {
    f: DriverFn<T>,
    tag: DriverTag,
    name: String,
    pub lambda: T,
    pub mu: T,
    pub gamma: Option<T>,
    pub eta: T,
    pub g: Option<OptionalProcess<T>>,
}

impl<T: Scalar> fmt::Debug for Driver<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Driver")
            .field("name", &self.name)
            .field("tag", &self.tag)
            .field("lambda", &self.lambda)
            .field("mu", &self.mu)
            .finish_non_exhaustive()
    }
}

impl<T: Scalar> Driver<T> {
    pub fn custom(name: impl Into<String>, lambda: T, mu: T, f: impl Fn(T, T, T) -> T + Send + Sync + 'static) -> Self {
        Driver {
            f: Arc::new(f),
            tag: DriverTag::Custom,
            name: name.into(),
            lambda,
            mu,
            gamma: None,
            eta: T::zero(),
            g: None,
        }
    }

    pub fn zero() -> Self {
        let mut d = Self::custom("zero", T::zero(), T::zero(), |_, _, _| T::zero());
        d.tag = DriverTag::Zero;
        d
    }

    pub fn constant(c: T) -> Self {
        let mut d = Self::custom("constant", T::zero(), T::zero(), move |_, _, _| c);
        d.tag = DriverTag::Constant;
        d
    }

    /// `f = a + b y + c z`.
    pub fn linear(a: T, b: T, c: T) -> Self {
        let mut d = Self::custom("linear", c.abs(), b, move |_, y, z| a + b * y + c * z);
        d.tag = DriverTag::Linear;
        d
    }

    /// `f = -k y^3 - y`: monotone with `mu = -1`, unbounded growth in `y`.
    pub fn cubic(k: T) -> Self {
        Self::custom("cubic", T::zero(), -T::one(), move |_, y, _| -k * y * y * y - y)
    }

    /// `f = sum c y^p z^q` over `(c, p, q)` terms, with declared constants.
    pub fn polynomial(terms: Vec<(T, u32, u32)>, lambda: T, mu: T) -> Self {
        Self::custom("polynomial", lambda, mu, move |_, y, z| {
            terms
                .iter()
                .map(|&(c, p, q)| c * y.powi(p as i32) * z.powi(q as i32))
                .fold(T::zero(), |a, b| a + b)
        })
    }

    /// `max(min(f, upper), -lower)`.
    pub fn truncated(&self, upper: T, lower: T) -> Self {
        let inner = Arc::clone(&self.f);
        Driver {
            f: Arc::new(move |t, y, z| inner(t, y, z).min(upper).max(-lower)),
            tag: DriverTag::Truncated,
            name: format!("truncated({})", self.name),
            lambda: self.lambda,
            // Truncation by constants keeps f monotone in y, but only with mu^+.
            mu: self.mu.max(T::zero()),
            gamma: self.gamma,
            eta: self.eta,
            g: self.g.clone(),
        }
    }

    pub fn with_growth(mut self, gamma: T, eta: T, g: Option<OptionalProcess<T>>) -> Self {
        self.gamma = Some(gamma);
        self.eta = eta;
        self.g = g;
        self
    }

    pub fn with_constants(mut self, lambda: T, mu: T) -> Self {
        self.lambda = lambda;
        self.mu = mu;
        self
    }

    pub fn tag(&self) -> DriverTag {
        self.tag
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn eval(&self, t: T, y: T, z: T) -> T {
        (self.f)(t, y, z)
    }

    /// True if the implicit step is uniquely solvable: `dt * max(0, mu) < 1`.
    pub fn step_solvable(&self, dt: T) -> bool {
        dt * self.mu.max(T::zero()) < T::one()
    }

    /// Spot-checks the declared constants on a fixed sample grid at every grid time.
    pub fn check_hypotheses(&self, tree: &TwoPhaseTree<T>) -> HypothesisReport {
        let samples: Vec<T> = [-4.0, -2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0, 4.0]
            .iter()
            .map(|&v| T::lit(v))
            .collect();
        let slack = |scale: T| T::tol(1e-9) * (T::one() + scale.abs());
        let mut report = HypothesisReport {
            lipschitz_z: true,
            monotone_y: true,
            growth_z: self.gamma.map(|_| true),
            eta_in_range: self.eta >= T::zero() && self.eta < T::one(),
            g_nonnegative: true,
        };
        if let Some(g) = &self.g {
            report.g_nonnegative =
                g.fits(tree) && g.at_values().iter().chain(g.after_values()).all(|&v| v >= T::zero());
        }
        for k in 0..tree.steps() {
            let t = tree.time(k);
            // the bound has to hold at every node, so the smallest g_t binds
            let g_t = self
                .g
                .as_ref()
                .filter(|g| g.fits(tree))
                .map(|g| {
                    tree.nodes_at(k)
                        .map(|n| g.at(n).min(g.after(n)))
                        .fold(T::infinity(), T::min)
                })
                .unwrap_or(T::zero());
            for &y in &samples {
                for &z in &samples {
                    let fyz = self.eval(t, y, z);
                    for &z2 in &samples {
                        let d = (fyz - self.eval(t, y, z2)).abs();
                        if d > self.lambda * (z - z2).abs() + slack(fyz) {
                            report.lipschitz_z = false;
                        }
                    }
                    for &y2 in &samples {
                        let lhs = (y - y2) * (fyz - self.eval(t, y2, z));
                        if lhs > self.mu * (y - y2) * (y - y2) + slack(lhs) {
                            report.monotone_y = false;
                        }
                    }
                    if let Some(gamma) = self.gamma {
                        let d = (fyz - self.eval(t, y, T::zero())).abs();
                        if d > gamma * (g_t + y.abs() + z.abs()).powf(self.eta) + slack(d) {
                            report.growth_z = Some(false);
                        }
                    }
                }
            }
        }
        report
    }
}

/// Outcome of [`Driver::check_hypotheses`]. `growth_z` is `None` when no growth data is declared.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HypothesisReport {
    pub lipschitz_z: bool,
    pub monotone_y: bool,
    pub growth_z: Option<bool>,
    pub eta_in_range: bool,
    pub g_nonnegative: bool,
}

impl HypothesisReport {
    pub fn all_hold(&self) -> bool {
        self.lipschitz_z && self.monotone_y && self.growth_z != Some(false) && self.eta_in_range && self.g_nonnegative
    }
}

/// Signed increments of a finite-variation process, indexed by non-terminal node.
#[derive(Clone, Debug, PartialEq)]
pub struct Increments<T> {
    /// Jump on `AT(v) -> AFTER(v)`.
    pub phase: Vec<T>,
    /// Increment on the diffusion step leaving `AFTER(v)`.
    pub step: Vec<T>,
}

impl<T: Scalar> Increments<T> {
    pub fn zero(tree: &TwoPhaseTree<T>) -> Self {
        Increments {
            phase: vec![T::zero(); tree.inner_count()],
            step: vec![T::zero(); tree.inner_count()],
        }
    }

    fn check(&self, tree: &TwoPhaseTree<T>) -> Result<()> {
        for (what, v) in [("phase increments", &self.phase), ("step increments", &self.step)] {
            if v.len() != tree.inner_count() {
                return Err(Error::Shape {
                    what,
                    expected: tree.inner_count(),
                    got: v.len(),
                });
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BsdeSolution<T> {
    pub y: OptionalProcess<T>,
    /// `Z` on the diffusion step leaving `AFTER(v)`, indexed by non-terminal node.
    pub z: Vec<T>,
}

impl<T: Scalar> BsdeSolution<T> {
    pub fn initial(&self) -> T {
        self.y.at(NodeId::ROOT)
    }
}

/// Solves `g(y) = 0` for an increasing `g`, starting from `guess`.
///
/// The bracket is grown geometrically from the guess, then refined by the
/// Illinois variant of false position. Returns `Err(iterations)` if the cap is hit.
pub(crate) fn solve_increasing<T: Scalar>(
    g: impl Fn(T) -> T,
    guess: T,
    tol: T,
    max_iter: usize,
) -> std::result::Result<T, RootFailure> {
    let eval = |y: T| {
        let v = g(y);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(RootFailure::NonFinite)
        }
    };
    let g0 = eval(guess)?;
    if g0.abs() <= tol {
        return Ok(guess);
    }
    let mut iter = 0;
    let mut step = g0.abs().max(tol);
    let (mut lo, mut glo, mut hi, mut ghi);
    if g0 > T::zero() {
        hi = guess;
        ghi = g0;
        loop {
            lo = hi - step;
            glo = eval(lo)?;
            iter += 1;
            if glo <= T::zero() {
                break;
            }
            hi = lo;
            ghi = glo;
            step = step + step;
            if iter >= max_iter {
                return Err(RootFailure::Iterations(iter));
            }
        }
    } else {
        lo = guess;
        glo = g0;
        loop {
            hi = lo + step;
            ghi = eval(hi)?;
            iter += 1;
            if ghi >= T::zero() {
                break;
            }
            lo = hi;
            glo = ghi;
            step = step + step;
            if iter >= max_iter {
                return Err(RootFailure::Iterations(iter));
            }
        }
    }
    if glo == T::zero() {
        return Ok(lo);
    }
    if ghi == T::zero() {
        return Ok(hi);
    }
    let mut side = 0i8;
    while iter < max_iter {
        iter += 1;
        let mut mid = (lo * ghi - hi * glo) / (ghi - glo);
        if !(mid > lo && mid < hi) {
            mid = T::half() * (lo + hi);
        }
        if mid <= lo || mid >= hi {
            // bracket is down to adjacent floats
            return Ok(if glo.abs() <= ghi.abs() { lo } else { hi });
        }
        let gm = eval(mid)?;
        if gm.abs() <= tol || hi - lo <= tol * (T::one() + mid.abs()) {
            return Ok(mid);
        }
        if gm < T::zero() {
            lo = mid;
            glo = gm;
            if side == -1 {
                ghi = ghi * T::half();
            }
            side = -1;
        } else {
            hi = mid;
            ghi = gm;
            if side == 1 {
                glo = glo * T::half();
            }
            side = 1;
        }
    }
    Err(RootFailure::Iterations(iter))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum RootFailure {
    NonFinite,
    Iterations(usize),
}

/// One implicit diffusion step at non-terminal `node`:
/// solves `y = mean + f(t, y, z) dt + dv` (driver skipped when `active` is false).
#[allow(clippy::too_many_arguments)]
pub(crate) fn implicit_step<T: Scalar>(
    driver: &Driver<T>,
    t: T,
    dt: T,
    mean: T,
    z: T,
    dv: T,
    active: bool,
    tol: &Tolerances<T>,
    node: NodeId,
) -> Result<T> {
    if !active || driver.tag == DriverTag::Zero {
        return Ok(mean + dv);
    }
    let guess = mean + driver.eval(t, mean, z) * dt + dv;
    if !guess.is_finite() {
        return Err(Error::NonFiniteDriver { node: node.index() });
    }
    if driver.tag == DriverTag::Constant {
        return Ok(guess);
    }
    solve_increasing(
        |y| y - mean - driver.eval(t, y, z) * dt - dv,
        guess,
        tol.root,
        tol.max_iter,
    )
    .map_err(|e| match e {
        RootFailure::NonFinite => Error::NonFiniteDriver { node: node.index() },
        RootFailure::Iterations(iterations) => Error::RootNotConverged {
            node: node.index(),
            iterations,
        },
    })
}

/// Mean and `Z` of the diffusion step leaving `node`, from the children's `AT` values.
pub(crate) fn diffusion_moments<T: Scalar>(tree: &TwoPhaseTree<T>, y: &OptionalProcess<T>, node: NodeId) -> (T, T) {
    let (down, up) = tree.children(node).expect("non-terminal node");
    let (yd, yu) = (y.at(down), y.at(up));
    (T::half() * (yu + yd), (yu - yd) / (T::two() * tree.sqrt_dt()))
}

pub(crate) fn check_terminal<T>(tree: &TwoPhaseTree<T>, terminal: &[T]) -> Result<()> {
    if terminal.len() != tree.path_count() {
        return Err(Error::Shape {
            what: "terminal values",
            expected: tree.path_count(),
            got: terminal.len(),
        });
    }
    Ok(())
}

pub(crate) fn check_solvable<T: Scalar>(tree: &TwoPhaseTree<T>, driver: &Driver<T>) -> Result<()> {
    if !driver.step_solvable(tree.dt()) {
        return Err(Error::InvalidParameter(format!(
            "dt * max(0, mu) = {} must be below 1 for the implicit step",
            (tree.dt() * driver.mu).as_f64()
        )));
    }
    Ok(())
}

/// Solves the BSDE with terminal values `terminal` (one per path) and optional
/// increments `dv` added to the dynamics.
pub fn solve_bsde<T: Scalar>(
    tree: &TwoPhaseTree<T>,
    terminal: &[T],
    driver: &Driver<T>,
    dv: Option<&Increments<T>>,
    tol: &Tolerances<T>,
) -> Result<BsdeSolution<T>> {
    solve_bsde_active(tree, terminal, driver, dv, None, tol)
}

/// As [`solve_bsde`], with the driver switched off on the diffusion steps
/// leaving every non-terminal node `v` where `active[v]` is false.
pub fn solve_bsde_active<T: Scalar>(
    tree: &TwoPhaseTree<T>,
    terminal: &[T],
    driver: &Driver<T>,
    dv: Option<&Increments<T>>,
    active: Option<&[bool]>,
    tol: &Tolerances<T>,
) -> Result<BsdeSolution<T>> {
    check_terminal(tree, terminal)?;
    check_solvable(tree, driver)?;
    if let Some(dv) = dv {
        dv.check(tree)?;
    }
    if let Some(a) = active {
        if a.len() != tree.inner_count() {
            return Err(Error::Shape {
                what: "driver activity mask",
                expected: tree.inner_count(),
                got: a.len(),
            });
        }
    }
    let mut y = OptionalProcess::constant(tree, T::zero());
    let mut z = vec![T::zero(); tree.inner_count()];
    for (path, &v) in terminal.iter().enumerate() {
        y.set(Point::at(tree.leaf(path)), v);
    }
    for k in (0..tree.steps()).rev() {
        let t = tree.time(k);
        for node in tree.nodes_at(k) {
            let (mean, zk) = diffusion_moments(tree, &y, node);
            z[node.index()] = zk;
            let (d_step, d_phase) = dv
                .map(|d| (d.step[node.index()], d.phase[node.index()]))
                .unwrap_or((T::zero(), T::zero()));
            let on = active.map(|a| a[node.index()]).unwrap_or(true);
            let after = implicit_step(driver, t, tree.dt(), mean, zk, d_step, on, tol, node)?;
            y.set(Point::after(node), after);
            y.set(Point::at(node), after + d_phase);
        }
    }
    Ok(BsdeSolution { y, z })
}

/// Largest one-step residual of `sol` against the BSDE dynamics.
pub fn bsde_residual<T: Scalar>(
    tree: &TwoPhaseTree<T>,
    sol: &BsdeSolution<T>,
    driver: &Driver<T>,
    dv: Option<&Increments<T>>,
) -> T {
    let mut worst = T::zero();
    for node in tree.inner_nodes() {
        let k = tree.step_of(node);
        let (mean, z) = diffusion_moments(tree, &sol.y, node);
        let (d_step, d_phase) = dv
            .map(|d| (d.step[node.index()], d.phase[node.index()]))
            .unwrap_or((T::zero(), T::zero()));
        let after = sol.y.after(node);
        let r1 = after - mean - driver.eval(tree.time(k), after, z) * tree.dt() - d_step;
        let r2 = sol.y.at(node) - after - d_phase;
        worst = worst.max(r1.abs()).max(r2.abs()).max((sol.z[node.index()] - z).abs());
    }
    worst
}

fn check_ordered<T>(tree: &TwoPhaseTree<T>, alpha: &StoppingTime, beta: &StoppingTime) -> Result<()> {
    match alpha.first_violation_of_le(tree, beta) {
        Some(path) => Err(Error::NotOrdered {
            path: tree.path_label(path),
        }),
        None => Ok(()),
    }
}

fn check_measurable<T: Scalar>(tree: &TwoPhaseTree<T>, xi: &[T], beta: &StoppingTime) -> Result<()> {
    for p in beta.atoms(tree) {
        let mut paths = tree.paths_through(p.node);
        let first = xi[paths.next().expect("non-empty atom")];
        if paths.any(|q| xi[q] != first) {
            return Err(Error::NotMeasurable { node: p.node.index() });
        }
    }
    Ok(())
}

/// Driver activity for `E^f_{., beta}`: the diffusion step leaving `AFTER(v)` is
/// active iff it lies before `beta`, and (if given) `v` lies in `event`.
fn activity<T>(tree: &TwoPhaseTree<T>, beta: &StoppingTime, event: Option<&[bool]>) -> Vec<bool> {
    tree.inner_nodes()
        .map(|v| !beta.done(Point::after(v)) && event.map(|e| e[tree.paths_through(v).start]).unwrap_or(true))
        .collect()
}

/// Full solution process behind `E^f_{., beta}(xi)`: driver zeroed after `beta`,
/// terminal value frozen along each path after `beta`.
pub fn nonlinear_expectation_process<T: Scalar>(
    tree: &TwoPhaseTree<T>,
    beta: &StoppingTime,
    xi: &[T],
    driver: &Driver<T>,
    tol: &Tolerances<T>,
) -> Result<BsdeSolution<T>> {
    check_terminal(tree, xi)?;
    check_measurable(tree, xi, beta)?;
    let active = activity(tree, beta, None);
    solve_bsde_active(tree, xi, driver, None, Some(&active), tol)
}

/// `E^f_{alpha, beta}(xi)`, one value per path (constant on the atoms of `F_alpha`).
pub fn nonlinear_expectation<T: Scalar>(
    tree: &TwoPhaseTree<T>,
    alpha: &StoppingTime,
    beta: &StoppingTime,
    xi: &[T],
    driver: &Driver<T>,
    tol: &Tolerances<T>,
) -> Result<Vec<T>> {
    nonlinear_expectation_on(tree, alpha, beta, xi, driver, None, tol)
}

/// `E^{f_A}_{alpha, beta}(xi)` with `f_A = 1_A f` for an event `A` in `F_alpha`
/// (one flag per path). With `event = None` this is [`nonlinear_expectation`].
pub fn nonlinear_expectation_on<T: Scalar>(
    tree: &TwoPhaseTree<T>,
    alpha: &StoppingTime,
    beta: &StoppingTime,
    xi: &[T],
    driver: &Driver<T>,
    event: Option<&[bool]>,
    tol: &Tolerances<T>,
) -> Result<Vec<T>> {
    check_terminal(tree, xi)?;
    check_ordered(tree, alpha, beta)?;
    check_measurable(tree, xi, beta)?;
    if let Some(e) = event {
        if e.len() != tree.path_count() {
            return Err(Error::Shape {
                what: "event flags",
                expected: tree.path_count(),
                got: e.len(),
            });
        }
    }
    let active = activity(tree, beta, event);
    let sol = solve_bsde_active(tree, xi, driver, None, Some(&active), tol)?;
    Ok((0..tree.path_count())
        .map(|p| sol.y.get(alpha.stop_point(tree, p)))
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Super,
    Sub,
    Martingale,
    Neither,
}

impl Verdict {
    fn from_flags(is_super: bool, is_sub: bool) -> Self {
        match (is_super, is_sub) {
            (true, true) => Verdict::Martingale,
            (true, false) => Verdict::Super,
            (false, true) => Verdict::Sub,
            (false, false) => Verdict::Neither,
        }
    }

    pub fn is_super(self) -> bool {
        matches!(self, Verdict::Super | Verdict::Martingale)
    }

    pub fn is_sub(self) -> bool {
        matches!(self, Verdict::Sub | Verdict::Martingale)
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Super => "super",
            Verdict::Sub => "sub",
            Verdict::Martingale => "martingale",
            Verdict::Neither => "neither",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClassifyMode {
    OneStep,
    Brute,
}

/// Default cap on the tree depth for exhaustive enumeration.
pub const DEFAULT_ENUM_BOUND: usize = 3;

/// Every stopping time of the tree, phase-resolved (123 at three steps).
pub fn all_stopping_times<T>(tree: &TwoPhaseTree<T>, bound: usize) -> Result<Vec<StoppingTime>> {
    if tree.steps() > bound {
        return Err(Error::EnumerationBound {
            steps: tree.steps(),
            bound,
        });
    }
    // Each choice lists the phase points where the time stops, subtree by subtree.
    fn rec<T>(tree: &TwoPhaseTree<T>, node: NodeId) -> Vec<Vec<Point>> {
        let Some((down, up)) = tree.children(node) else {
            return vec![vec![Point::at(node)]];
        };
        let mut out = vec![vec![Point::at(node)], vec![Point::after(node)]];
        let (d, u) = (rec(tree, down), rec(tree, up));
        for a in &d {
            for b in &u {
                out.push(a.iter().chain(b).copied().collect());
            }
        }
        out
    }
    Ok(rec(tree, NodeId::ROOT)
        .into_iter()
        .map(|stops| StoppingTime::from_fn(tree, |p| stops.contains(&p)))
        .collect())
}

/// Classifies `process` as an `E^f` super/sub-martingale on the stochastic
/// interval `[from, to]`.
pub fn classify_ef<T: Scalar>(
    tree: &TwoPhaseTree<T>,
    process: &OptionalProcess<T>,
    driver: &Driver<T>,
    from: &StoppingTime,
    to: &StoppingTime,
    mode: ClassifyMode,
    tol: &Tolerances<T>,
) -> Result<Verdict> {
    classify_ef_bounded(tree, process, driver, from, to, mode, DEFAULT_ENUM_BOUND, tol)
}

#[allow(clippy::too_many_arguments)]
pub fn classify_ef_bounded<T: Scalar>(
    tree: &TwoPhaseTree<T>,
    process: &OptionalProcess<T>,
    driver: &Driver<T>,
    from: &StoppingTime,
    to: &StoppingTime,
    mode: ClassifyMode,
    bound: usize,
    tol: &Tolerances<T>,
) -> Result<Verdict> {
    check_ordered(tree, from, to)?;
    check_solvable(tree, driver)?;
    let eps = tol.class;
    let (mut is_super, mut is_sub) = (true, true);
    let mut record = |x: T, e: T| {
        is_super &= x >= e - eps;
        is_sub &= x <= e + eps;
    };
    match mode {
        ClassifyMode::OneStep => {
            for node in tree.inner_nodes() {
                let at = Point::at(node);
                if from.done(at) && !to.done(at) {
                    record(process.at(node), process.after(node));
                }
                let after = Point::after(node);
                if from.done(after) && !to.done(after) {
                    let (mean, z) = diffusion_moments(tree, process, node);
                    let t = tree.time(tree.step_of(node));
                    let e = implicit_step(driver, t, tree.dt(), mean, z, T::zero(), true, tol, node)?;
                    record(process.after(node), e);
                }
            }
        }
        ClassifyMode::Brute => {
            for rho in all_stopping_times(tree, bound)? {
                let tau = rho.min(to).max(from);
                let xi: Vec<T> = (0..tree.path_count())
                    .map(|p| process.get(tau.stop_point(tree, p)))
                    .collect();
                let sol = nonlinear_expectation_process(tree, &tau, &xi, driver, tol)?;
                // every sigma in [from, tau] is covered by comparing at all points of the interval
                for p in tree.points() {
                    let upto = tree.previous(p).map(|q| !tau.done(q)).unwrap_or(true);
                    if from.done(p) && upto {
                        record(process.get(p), sol.y.get(p));
                    }
                }
            }
        }
    }
    Ok(Verdict::from_flags(is_super, is_sub))
}
