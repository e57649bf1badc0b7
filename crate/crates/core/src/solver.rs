//! Catching-up time stepping with Volterra memory.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::gronwall::{apriori_constants, BoundsReport};
use crate::problem::{ProblemSpec, TimeGrid, Trajectory, Vector};
use crate::quadrature::integrate;

/// Gaps at or below this (relative to the trajectory size) count as exact.
pub const EXACT_GAP: f64 = 1e-13;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MemoryRule {
    #[default]
    LeftRectangle,
    Trapezoid,
}

impl FromStr for MemoryRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "left" | "left-rectangle" => Ok(Self::LeftRectangle),
            "trap" | "trapezoid" => Ok(Self::Trapezoid),
            other => Err(Error::Parse(format!(
                "unknown memory rule `{other}` (expected left or trap)"
            ))),
        }
    }
}

impl fmt::Display for MemoryRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::LeftRectangle => "left",
            Self::Trapezoid => "trap",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Refine {
    pub target: f64,
    pub max_doublings: usize,
}

#[derive(Clone, Debug)]
pub struct SolveOptions {
    pub steps: usize,
    /// Explicit grid; overrides `steps` when set.
    pub grid: Option<TimeGrid>,
    pub memory_rule: MemoryRule,
    pub projection_tol: f64,
    pub refine: Option<Refine>,
    /// Use the separable factorization of `f₂` when the kernel declares one.
    pub separable: bool,
    /// Compute the a priori constants and the velocity margin when the
    /// growth data allow it.
    pub bounds: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            steps: 100,
            grid: None,
            memory_rule: MemoryRule::LeftRectangle,
            projection_tol: 1e-10,
            refine: None,
            separable: true,
            bounds: true,
        }
    }
}

impl SolveOptions {
    pub fn with_steps(steps: usize) -> Self {
        Self {
            steps,
            ..Self::default()
        }
    }

    pub fn memory(mut self, rule: MemoryRule) -> Self {
        self.memory_rule = rule;
        self
    }

    pub fn without_bounds(mut self) -> Self {
        self.bounds = false;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Domain("steps must be at least 1".into()));
        }
        if !(self.projection_tol > 0.0) {
            return Err(Error::Domain(format!(
                "projection tolerance must be positive, got {}",
                self.projection_tol
            )));
        }
        if let Some(r) = &self.refine {
            if !(r.target > 0.0) {
                return Err(Error::Domain(format!(
                    "refine target must be positive, got {}",
                    r.target
                )));
            }
        }
        Ok(())
    }

    fn grid_for(&self, prob: &ProblemSpec) -> Result<TimeGrid> {
        match &self.grid {
            Some(g) => {
                if g.horizon() != prob.horizon {
                    return Err(Error::Domain(
                        "grid horizon differs from the problem horizon".into(),
                    ));
                }
                Ok(g.clone())
            }
            None => TimeGrid::uniform(prob.horizon, self.steps),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RefineLevel {
    pub steps: usize,
    /// Sup-node distance to the next (doubled) level.
    pub gap: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SolveReport {
    #[serde(skip)]
    pub trajectory: Trajectory,
    pub steps: usize,
    pub memory_rule: MemoryRule,
    /// `max_k d_{C(t_k)}(x_k)`.
    pub feasibility: f64,
    /// `max_k (‖v_k‖ − bound)`; negative when the speed bound holds.
    pub velocity_margin: Option<f64>,
    pub cauchy_gap: Option<f64>,
    pub refinement: Vec<RefineLevel>,
    pub bounds: Option<BoundsReport>,
    /// Why `bounds` is absent, when it is.
    pub bounds_unavailable: Option<String>,
}

/// Quadrature weights `c_j` with `mem_k = Σ_j c_j f₂(t_k, t_j, x_j)`, `j ≤ k`.
fn memory_weights(grid: &TimeGrid, k: usize, rule: MemoryRule) -> Vec<f64> {
    let mut w = vec![0.0; k + 1];
    for j in 0..k {
        let h = grid.step_size(j);
        match rule {
            MemoryRule::LeftRectangle => w[j] += h,
            MemoryRule::Trapezoid => {
                w[j] += 0.5 * h;
                w[j + 1] += 0.5 * h;
            }
        }
    }
    w
}

/// `∫_{T₀}^{t_k} f₂(t_k, s, x(θ(s))) ds` by the chosen rule, from the node
/// states `states[0..=k]`.
pub fn memory_term(
    prob: &ProblemSpec,
    grid: &TimeGrid,
    states: &[Vector],
    k: usize,
    rule: MemoryRule,
) -> Result<Vector> {
    let d = prob.dim();
    if prob.f2.is_zero() || k == 0 {
        return Ok(Vector::zeros(d));
    }
    if states.len() <= k {
        return Err(Error::Domain(format!(
            "memory at node {k} needs {} states, got {}",
            k + 1,
            states.len()
        )));
    }
    let tk = grid.node(k);
    let mut sum = Vector::zeros(d);
    for (j, c) in memory_weights(grid, k, rule).into_iter().enumerate() {
        if c != 0.0 {
            sum += prob.f2.call(tk, grid.node(j), &states[j])? * c;
        }
    }
    Ok(sum)
}

/// Incremental memory: `O(1)` per step with a separable kernel, a direct sum
/// otherwise.
struct Memory<'a> {
    prob: &'a ProblemSpec,
    rule: MemoryRule,
    separable: bool,
    /// Running `Σ c_j ψ(t_j, x_j)` up to the current node.
    acc: Option<Vector>,
    last_psi: Option<Vector>,
}

impl<'a> Memory<'a> {
    fn new(prob: &'a ProblemSpec, rule: MemoryRule, use_separable: bool) -> Self {
        Self {
            prob,
            rule,
            separable: use_separable && prob.f2.separable.is_some() && !prob.f2.is_zero(),
            acc: None,
            last_psi: None,
        }
    }

    fn psi(&self, s: f64, x: &Vector) -> Result<Vector> {
        let sep = self.prob.f2.separable.as_ref().expect("separable kernel");
        let v = (sep.psi)(s, x);
        if v.iter().all(|c| c.is_finite()) {
            Ok(v)
        } else {
            Err(Error::Evaluation(format!("psi not finite at s = {s}")))
        }
    }

    /// Memory at node `k`; called once per `k` in increasing order.
    fn at(&mut self, grid: &TimeGrid, states: &[Vector], k: usize) -> Result<Vector> {
        if !self.separable {
            return memory_term(self.prob, grid, states, k, self.rule);
        }
        let psi_k = self.psi(grid.node(k), &states[k])?;
        if k == 0 {
            self.acc = Some(Vector::zeros(psi_k.len()));
            self.last_psi = Some(psi_k);
            return Ok(Vector::zeros(self.prob.dim()));
        }
        let h = grid.step_size(k - 1);
        let prev = self.last_psi.take().expect("memory advanced in order");
        let acc = self.acc.as_mut().expect("memory advanced in order");
        match self.rule {
            MemoryRule::LeftRectangle => *acc += prev * h,
            MemoryRule::Trapezoid => *acc += (prev + &psi_k) * (0.5 * h),
        }
        self.last_psi = Some(psi_k);
        let sep = self.prob.f2.separable.as_ref().expect("separable kernel");
        let phi = (sep.phi)(grid.node(k));
        let m = phi * &*acc;
        if m.iter().all(|c| c.is_finite()) {
            Ok(m)
        } else {
            Err(Error::Evaluation(format!(
                "memory not finite at t = {}",
                grid.node(k)
            )))
        }
    }
}

/// One catching-up step from `x_k` with a precomputed memory term.
fn advance(
    prob: &ProblemSpec,
    grid: &TimeGrid,
    k: usize,
    xk: &Vector,
    memory: &Vector,
    tol: f64,
) -> Result<Vector> {
    let tk = grid.node(k);
    let t_next = grid.node(k + 1);
    let h = grid.step_size(k);
    let drift = prob.f1.call(tk, xk)? + memory;
    let r = prob.prox_radius;
    if r.is_finite() {
        let variation = prob.set.variation(tk, t_next)?;
        let push = drift.norm() * h;
        if push + variation >= 0.5 * r {
            return Err(Error::StepTooCoarse {
                k,
                t: tk,
                drift: push,
                variation,
                radius: r,
            });
        }
    }
    let y = xk - drift * h;
    match prob.set.project(t_next, &y, tol) {
        Ok(x) => Ok(x),
        Err(Error::ReachExceeded { bound, radius }) => Err(Error::StepTooCoarse {
            k,
            t: tk,
            drift: bound,
            variation: 0.0,
            radius,
        }),
        Err(e) => Err(e),
    }
}

/// `x_{k+1} = Proj_{C(t_{k+1})}(x_k − h_k [f₁(t_k, x_k) + mem_k])`.
pub fn step(
    prob: &ProblemSpec,
    grid: &TimeGrid,
    states: &[Vector],
    k: usize,
    opts: &SolveOptions,
) -> Result<Vector> {
    if k >= grid.steps() || states.len() <= k {
        return Err(Error::Domain(format!(
            "no step {k} on a grid of {} steps",
            grid.steps()
        )));
    }
    let memory = memory_term(prob, grid, states, k, opts.memory_rule)?;
    advance(prob, grid, k, &states[k], &memory, opts.projection_tol)
}

fn wrap(k: usize, t: f64, e: Error) -> Error {
    match e {
        e @ (Error::StepTooCoarse { .. } | Error::Step { .. }) => e,
        e => Error::Step {
            k,
            t,
            source: Box::new(e),
        },
    }
}

/// Node states only, no diagnostics.
pub fn integrate_trajectory(
    prob: &ProblemSpec,
    grid: &TimeGrid,
    opts: &SolveOptions,
) -> Result<Trajectory> {
    let mut states = Vec::with_capacity(grid.nodes().len());
    states.push(prob.x0.clone());
    let mut memory = Memory::new(prob, opts.memory_rule, opts.separable);
    for k in 0..grid.steps() {
        let tk = grid.node(k);
        let m = memory.at(grid, &states, k).map_err(|e| wrap(k, tk, e))?;
        let next = advance(prob, grid, k, &states[k], &m, opts.projection_tol)
            .map_err(|e| wrap(k, tk, e))?;
        states.push(next);
    }
    Trajectory::from_states(grid.clone(), states)
}

/// Largest `‖v_k‖ − bound_k`, with the bound taken as its maximum over the
/// endpoints and midpoint of the step.
pub fn velocity_margin(
    prob: &ProblemSpec,
    traj: &Trajectory,
    bounds: &BoundsReport,
) -> Result<f64> {
    let grid = &traj.grid;
    let mut worst = f64::NEG_INFINITY;
    let mut prev = bounds.speed_bound(prob, grid.node(0))?;
    for k in 0..grid.steps() {
        let (a, b) = (grid.node(k), grid.node(k + 1));
        let mid = bounds.speed_bound(prob, 0.5 * (a + b))?;
        let next = bounds.speed_bound(prob, b)?;
        let bound = prev.max(mid).max(next);
        worst = worst.max(traj.speed(k) - bound);
        prev = next;
    }
    Ok(worst)
}

fn feasibility(prob: &ProblemSpec, traj: &Trajectory) -> f64 {
    traj.grid
        .nodes()
        .iter()
        .zip(&traj.states)
        .map(|(t, x)| prob.set.distance(*t, x))
        .fold(0.0, f64::max)
}

pub fn solve(prob: &ProblemSpec, opts: &SolveOptions) -> Result<SolveReport> {
    opts.validate()?;
    let mut grid = opts.grid_for(prob)?;
    let mut traj = integrate_trajectory(prob, &grid, opts)?;
    let mut refinement = Vec::new();
    if let Some(refine) = opts.refine {
        for _ in 0..refine.max_doublings {
            let finer = grid.refined();
            let next = integrate_trajectory(prob, &finer, opts)?;
            let gap = traj.sup_distance(&next)?;
            refinement.push(RefineLevel {
                steps: grid.steps(),
                gap,
            });
            grid = finer;
            traj = next;
            if gap <= refine.target {
                break;
            }
        }
    }

    let (bounds, bounds_unavailable) = if opts.bounds {
        match apriori_constants(prob) {
            Ok(b) => (Some(b), None),
            Err(e) => (None, Some(e.to_string())),
        }
    } else {
        (None, Some("not requested".to_string()))
    };
    let velocity_margin = match &bounds {
        Some(b) => Some(velocity_margin(prob, &traj, b)?),
        None => None,
    };
    Ok(SolveReport {
        steps: grid.steps(),
        memory_rule: opts.memory_rule,
        feasibility: feasibility(prob, &traj),
        velocity_margin,
        cauchy_gap: refinement.last().map(|l| l.gap),
        refinement,
        bounds,
        bounds_unavailable,
        trajectory: traj,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct StabilityReport {
    pub separation: f64,
    /// `sup_k ‖x_a(t_k) − x_b(t_k)‖ / ‖a − b‖`.
    pub ratio: f64,
    /// `exp(∫(K+1))`, `K = max{L₁^η + α/r, L₂^η}`.
    pub certificate: Option<f64>,
    pub eta: f64,
    pub pass: Option<bool>,
}

/// Solves from `a` and `b` and compares the spread with the Lipschitz
/// certificate.
pub fn stability_probe(
    prob: &ProblemSpec,
    opts: &SolveOptions,
    a: &Vector,
    b: &Vector,
) -> Result<StabilityReport> {
    let separation = (a - b).norm();
    if separation == 0.0 {
        return Err(Error::Degenerate("stability probe needs a != b".into()));
    }
    opts.validate()?;
    let grid = opts.grid_for(prob)?;
    let pa = prob.with_initial(a.clone())?;
    let pb = prob.with_initial(b.clone())?;
    let (ta, tb) = std::thread::scope(|s| {
        let ha = s.spawn(|| integrate_trajectory(&pa, &grid, opts));
        let tb = integrate_trajectory(&pb, &grid, opts);
        (ha.join().expect("solver thread panicked"), tb)
    });
    let (ta, tb) = (ta?, tb?);
    let spread = ta.sup_distance(&tb)?;
    let ratio = spread / separation;
    let eta = ta.sup_norm().max(tb.sup_norm());

    let certificate = match (&prob.f1.lipschitz, &prob.f2.lipschitz) {
        (Some(l1), Some(l2)) => {
            let r = prob.prox_radius;
            let normal: Option<(BoundsReport, BoundsReport)> = if r.is_finite() {
                Some((apriori_constants(&pa)?, apriori_constants(&pb)?))
            } else {
                None
            };
            let k = |t: f64| -> f64 {
                let alpha = match &normal {
                    Some((ba, bb)) => {
                        let va = ba.normal_bound(&pa, t).unwrap_or(f64::NAN);
                        let vb = bb.normal_bound(&pb, t).unwrap_or(f64::NAN);
                        va.max(vb) / r
                    }
                    None => 0.0,
                };
                (l1(eta, t) + alpha).max(l2(eta, t)) + 1.0
            };
            let h = prob.horizon;
            Some(integrate(k, h.t_start, h.t_end)?.exp())
        }
        _ => None,
    };
    let pass = certificate.map(|c| ratio <= c * (1.0 + 10.0 * opts.projection_tol / separation));
    Ok(StabilityReport {
        separation,
        ratio,
        certificate,
        eta,
        pass,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct ConvergenceStudy {
    pub steps: Vec<usize>,
    /// `gaps[i]` is the sup-node distance between levels `i` and `i + 1`.
    pub gaps: Vec<f64>,
    /// Negated least-squares slope of `log₂ gap` against the level index.
    pub order: Option<f64>,
    pub exact: bool,
    pub strictly_decreasing: bool,
}

impl ConvergenceStudy {
    /// Gaps that shrink at every level, or that all sit at rounding level.
    pub fn is_cauchy(&self) -> bool {
        self.exact || self.strictly_decreasing
    }
}

/// Solves at `n, 2n, …, 2^levels·n` (levels run concurrently) and fits the
/// empirical order of the consecutive gaps.
pub fn convergence_study(
    prob: &ProblemSpec,
    opts: &SolveOptions,
    levels: usize,
) -> Result<ConvergenceStudy> {
    opts.validate()?;
    if levels == 0 {
        return Err(Error::Domain(
            "a convergence study needs at least one level".into(),
        ));
    }
    let base = opts.grid_for(prob)?;
    let mut grids = vec![base];
    for _ in 0..levels {
        let next = grids.last().expect("nonempty").refined();
        grids.push(next);
    }
    let runs: Vec<Result<Trajectory>> = std::thread::scope(|s| {
        let handles: Vec<_> = grids
            .iter()
            .map(|g| s.spawn(move || integrate_trajectory(prob, g, opts)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("solver thread panicked"))
            .collect()
    });
    let trajs = runs.into_iter().collect::<Result<Vec<_>>>()?;
    let mut gaps = Vec::with_capacity(levels);
    for pair in trajs.windows(2) {
        gaps.push(pair[0].sup_distance(&pair[1])?);
    }
    let scale = trajs.iter().map(Trajectory::sup_norm).fold(1.0, f64::max);
    let exact = gaps.iter().all(|g| *g <= EXACT_GAP * scale);
    let strictly_decreasing = gaps.windows(2).all(|w| w[1] < w[0]);
    let order = if exact || gaps.len() < 2 || gaps.iter().any(|g| *g <= 0.0) {
        None
    } else {
        let n = gaps.len() as f64;
        let xs: Vec<f64> = (0..gaps.len()).map(|i| i as f64).collect();
        let ys: Vec<f64> = gaps.iter().map(|g| g.log2()).collect();
        let mx = xs.iter().sum::<f64>() / n;
        let my = ys.iter().sum::<f64>() / n;
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
        Some(-sxy / sxx)
    };
    Ok(ConvergenceStudy {
        steps: grids.iter().map(TimeGrid::steps).collect(),
        gaps,
        order,
        exact,
        strictly_decreasing,
    })
}
