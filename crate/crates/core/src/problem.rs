//! Problem description shared by every module: horizon, grids, the
//! perturbation `f₁`, the Volterra kernel `f₂`, and discrete trajectories.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::sets::MovingSet;

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

/// `(t, x) ↦ f₁(t, x)`.
pub type FieldFn = Arc<dyn Fn(f64, &Vector) -> Vector + Send + Sync>;
/// `(t, s, x) ↦ f₂(t, s, x)` for `s ≤ t`.
pub type KernelFn = Arc<dyn Fn(f64, f64, &Vector) -> Vector + Send + Sync>;
pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
pub type ScalarFn2 = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
/// `(η, t) ↦ L^η(t)`, the Lipschitz modulus on the ball of radius `η`.
pub type LipschitzFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
pub type MatrixFn = Arc<dyn Fn(f64) -> Matrix + Send + Sync>;
pub type PsiFn = Arc<dyn Fn(f64, &Vector) -> Vector + Send + Sync>;

/// Absolute tolerance on `d_{C(T₀)}(x₀)` accepted as feasible.
pub const FEASIBILITY_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct Horizon {
    pub t_start: f64,
    pub t_end: f64,
}

impl Horizon {
    pub fn new(t_start: f64, t_end: f64) -> Result<Self> {
        if !t_start.is_finite() || !t_end.is_finite() || t_end <= t_start {
            return Err(Error::Domain(format!(
                "horizon needs finite t_start < t_end, got [{t_start}, {t_end}]"
            )));
        }
        Ok(Self { t_start, t_end })
    }

    pub fn length(&self) -> f64 {
        self.t_end - self.t_start
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.t_start && t <= self.t_end
    }

    pub(crate) fn check(&self, t: f64) -> Result<()> {
        if self.contains(t) {
            Ok(())
        } else {
            Err(Error::Domain(format!(
                "time {t} outside horizon [{}, {}]",
                self.t_start, self.t_end
            )))
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TimeGrid {
    horizon: Horizon,
    nodes: Vec<f64>,
}

impl TimeGrid {
    pub fn uniform(horizon: Horizon, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Domain("a grid needs at least one step".into()));
        }
        let h = horizon.length() / steps as f64;
        let mut nodes: Vec<f64> = (0..steps).map(|k| horizon.t_start + k as f64 * h).collect();
        nodes.push(horizon.t_end);
        Ok(Self { horizon, nodes })
    }

    pub fn from_nodes(nodes: Vec<f64>) -> Result<Self> {
        if nodes.len() < 2 {
            return Err(Error::Domain("a grid needs at least two nodes".into()));
        }
        if nodes.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Domain(
                "grid nodes must be strictly increasing".into(),
            ));
        }
        let horizon = Horizon::new(nodes[0], *nodes.last().unwrap())?;
        Ok(Self { horizon, nodes })
    }

    pub fn horizon(&self) -> Horizon {
        self.horizon
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn node(&self, k: usize) -> f64 {
        self.nodes[k]
    }

    /// Number of steps `n` (one less than the node count).
    pub fn steps(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn step_size(&self, k: usize) -> f64 {
        self.nodes[k + 1] - self.nodes[k]
    }

    pub fn max_step(&self) -> f64 {
        self.nodes
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(0.0, f64::max)
    }

    /// Grid with every step halved.
    pub fn refined(&self) -> Self {
        let mut nodes = Vec::with_capacity(2 * self.nodes.len() - 1);
        for w in self.nodes.windows(2) {
            nodes.push(w[0]);
            nodes.push(0.5 * (w[0] + w[1]));
        }
        nodes.push(*self.nodes.last().unwrap());
        Self {
            horizon: self.horizon,
            nodes,
        }
    }

    /// Index `k` with `t ∈ (t_k, t_{k+1}]`, or 0 at `t = T₀`.
    pub fn interval_index(&self, t: f64) -> Result<usize> {
        self.horizon.check(t)?;
        if t == self.horizon.t_start {
            return Ok(0);
        }
        let first_ge = self.nodes.partition_point(|&node| node < t);
        Ok(first_ge - 1)
    }

    /// The delay map `θ(t) = t_k` for `t ∈ (t_k, t_{k+1}]`, `θ(T₀) = T₀`.
    pub fn delay_map(&self, t: f64) -> Result<f64> {
        Ok(self.nodes[self.interval_index(t)?])
    }
}

/// Carathéodory perturbation `f₁` with its optional growth and Lipschitz data.
#[derive(Clone)]
pub struct PerturbationSpec {
    pub eval: FieldFn,
    /// `β₁` with `‖f₁(t,x)‖ ≤ β₁(t)(1 + ‖x‖)`.
    pub growth_beta1: Option<ScalarFn>,
    pub lipschitz: Option<LipschitzFn>,
}

impl PerturbationSpec {
    pub fn new(eval: impl Fn(f64, &Vector) -> Vector + Send + Sync + 'static) -> Self {
        Self {
            eval: Arc::new(eval),
            growth_beta1: None,
            lipschitz: None,
        }
    }

    pub fn zero(dim: usize) -> Self {
        Self::new(move |_, _| Vector::zeros(dim))
            .with_growth(|_| 0.0)
            .with_lipschitz(|_, _| 0.0)
    }

    /// `f₁(t, x) = A x` with `β₁ = L₁ = ‖A‖₂`.
    pub fn linear(a: Matrix) -> Self {
        let norm = crate::linalg::operator_norm(&a);
        Self::new(move |_, x| &a * x)
            .with_growth(move |_| norm)
            .with_lipschitz(move |_, _| norm)
    }

    pub fn with_growth(mut self, beta1: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        self.growth_beta1 = Some(Arc::new(beta1));
        self
    }

    pub fn with_lipschitz(mut self, l: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        self.lipschitz = Some(Arc::new(l));
        self
    }

    pub fn call(&self, t: f64, x: &Vector) -> Result<Vector> {
        let v = (self.eval)(t, x);
        if v.iter().all(|c| c.is_finite()) {
            Ok(v)
        } else {
            Err(Error::Evaluation(format!("f1 not finite at t = {t}")))
        }
    }
}

impl fmt::Debug for PerturbationSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PerturbationSpec")
            .field("growth_beta1", &self.growth_beta1.is_some())
            .field("lipschitz", &self.lipschitz.is_some())
            .finish()
    }
}

/// `‖f₂(t,s,x)‖ ≤ g(t,s) + α(t)‖x‖`.
#[derive(Clone)]
pub struct AffineGrowth {
    pub g: ScalarFn2,
    pub alpha: ScalarFn,
}

/// Factorization `f₂(t,s,x) = Φ(t) ψ(s,x)` with `Φ(t)` of size `d × q`.
#[derive(Clone)]
pub struct Separable {
    pub phi: MatrixFn,
    pub psi: PsiFn,
}

#[derive(Clone)]
pub struct KernelSpec {
    pub eval: KernelFn,
    pub growth_beta2: Option<ScalarFn2>,
    pub affine_growth: Option<AffineGrowth>,
    pub lipschitz: Option<LipschitzFn>,
    pub separable: Option<Separable>,
    is_zero: bool,
}

impl KernelSpec {
    pub fn new(eval: impl Fn(f64, f64, &Vector) -> Vector + Send + Sync + 'static) -> Self {
        Self {
            eval: Arc::new(eval),
            growth_beta2: None,
            affine_growth: None,
            lipschitz: None,
            separable: None,
            is_zero: false,
        }
    }

    /// The empty memory `f₂ ≡ 0`, with all growth data identically zero.
    pub fn zero(dim: usize) -> Self {
        let mut k = Self::new(move |_, _, _| Vector::zeros(dim))
            .with_growth(|_, _| 0.0)
            .with_affine_growth(|_, _| 0.0, |_| 0.0)
            .with_lipschitz(|_, _| 0.0);
        k.is_zero = true;
        k
    }

    /// Kernel given only through its factorization `Φ(t) ψ(s, x)`.
    pub fn separable(
        phi: impl Fn(f64) -> Matrix + Send + Sync + 'static,
        psi: impl Fn(f64, &Vector) -> Vector + Send + Sync + 'static,
    ) -> Self {
        let phi: MatrixFn = Arc::new(phi);
        let psi: PsiFn = Arc::new(psi);
        let (phi2, psi2) = (phi.clone(), psi.clone());
        let mut k = Self::new(move |t, s, x| phi2(t) * psi2(s, x));
        k.separable = Some(Separable { phi, psi });
        k
    }

    pub fn with_growth(mut self, beta2: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        self.growth_beta2 = Some(Arc::new(beta2));
        self
    }

    pub fn with_affine_growth(
        mut self,
        g: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        alpha: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.affine_growth = Some(AffineGrowth {
            g: Arc::new(g),
            alpha: Arc::new(alpha),
        });
        self
    }

    pub fn with_lipschitz(mut self, l: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        self.lipschitz = Some(Arc::new(l));
        self
    }

    pub fn with_separable(
        mut self,
        phi: impl Fn(f64) -> Matrix + Send + Sync + 'static,
        psi: impl Fn(f64, &Vector) -> Vector + Send + Sync + 'static,
    ) -> Self {
        self.separable = Some(Separable {
            phi: Arc::new(phi),
            psi: Arc::new(psi),
        });
        self
    }

    pub fn is_zero(&self) -> bool {
        self.is_zero
    }

    pub fn call(&self, t: f64, s: f64, x: &Vector) -> Result<Vector> {
        debug_assert!(s <= t, "kernel queried outside the triangle: s={s} > t={t}");
        let v = (self.eval)(t, s, x);
        if v.iter().all(|c| c.is_finite()) {
            Ok(v)
        } else {
            Err(Error::Evaluation(format!(
                "f2 not finite at (t, s) = ({t}, {s})"
            )))
        }
    }
}

impl fmt::Debug for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KernelSpec")
            .field("zero", &self.is_zero)
            .field("growth_beta2", &self.growth_beta2.is_some())
            .field("affine_growth", &self.affine_growth.is_some())
            .field("lipschitz", &self.lipschitz.is_some())
            .field("separable", &self.separable.is_some())
            .finish()
    }
}

#[derive(Clone)]
pub struct ProblemSpec {
    pub horizon: Horizon,
    pub set: Arc<dyn MovingSet>,
    pub f1: PerturbationSpec,
    pub f2: KernelSpec,
    pub x0: Vector,
    /// Prox-regularity radius `r`; `+∞` for convex sets.
    pub prox_radius: f64,
}

impl ProblemSpec {
    /// Validates `x₀ ∈ C(T₀)` and `r > 0`; the radius is taken from the set.
    pub fn new(
        horizon: Horizon,
        set: Arc<dyn MovingSet>,
        f1: PerturbationSpec,
        f2: KernelSpec,
        x0: Vector,
    ) -> Result<Self> {
        let prox_radius = set.prox_radius();
        Self::with_radius(horizon, set, f1, f2, x0, prox_radius)
    }

    pub fn with_radius(
        horizon: Horizon,
        set: Arc<dyn MovingSet>,
        f1: PerturbationSpec,
        f2: KernelSpec,
        x0: Vector,
        prox_radius: f64,
    ) -> Result<Self> {
        if x0.len() != set.dim() {
            return Err(Error::Domain(format!(
                "x0 has dimension {} but the set lives in dimension {}",
                x0.len(),
                set.dim()
            )));
        }
        if !(prox_radius > 0.0) {
            return Err(Error::Domain(format!(
                "prox radius must be positive, got {prox_radius}"
            )));
        }
        if x0.iter().any(|c| !c.is_finite()) {
            return Err(Error::Domain("x0 has non-finite components".into()));
        }
        let dist = set.distance(horizon.t_start, &x0);
        if !(dist <= FEASIBILITY_TOL) {
            return Err(Error::Domain(format!(
                "x0 = {:?} is not in C(T0): distance {dist:.3e} exceeds {FEASIBILITY_TOL:e}",
                x0.as_slice()
            )));
        }
        Ok(Self {
            horizon,
            set,
            f1,
            f2,
            x0,
            prox_radius,
        })
    }

    pub fn dim(&self) -> usize {
        self.x0.len()
    }

    /// Same problem started from another initial point.
    pub fn with_initial(&self, x0: Vector) -> Result<Self> {
        Self::with_radius(
            self.horizon,
            self.set.clone(),
            self.f1.clone(),
            self.f2.clone(),
            x0,
            self.prox_radius,
        )
    }
}

impl fmt::Debug for ProblemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemSpec")
            .field("horizon", &self.horizon)
            .field("x0", &self.x0.as_slice())
            .field("prox_radius", &self.prox_radius)
            .field("f1", &self.f1)
            .field("f2", &self.f2)
            .finish()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub grid: TimeGrid,
    pub states: Vec<Vector>,
    pub velocities: Vec<Vector>,
}

impl Trajectory {
    pub fn from_states(grid: TimeGrid, states: Vec<Vector>) -> Result<Self> {
        if states.len() != grid.nodes().len() {
            return Err(Error::Domain(format!(
                "{} states for {} grid nodes",
                states.len(),
                grid.nodes().len()
            )));
        }
        let velocities = (0..grid.steps())
            .map(|k| (&states[k + 1] - &states[k]) / grid.step_size(k))
            .collect();
        Ok(Self {
            grid,
            states,
            velocities,
        })
    }

    pub fn dim(&self) -> usize {
        self.states[0].len()
    }

    pub fn interpolate(&self, t: f64) -> Result<Vector> {
        self.grid.horizon().check(t)?;
        let nodes = self.grid.nodes();
        let first_ge = nodes.partition_point(|&node| node < t);
        if first_ge < nodes.len() && nodes[first_ge] == t {
            return Ok(self.states[first_ge].clone());
        }
        let k = first_ge - 1;
        let theta = (t - nodes[k]) / self.grid.step_size(k);
        Ok(&self.states[k] + (&self.states[k + 1] - &self.states[k]) * theta)
    }

    pub fn speed(&self, k: usize) -> f64 {
        self.velocities[k].norm()
    }

    /// `max_k ‖x_k‖`.
    pub fn sup_norm(&self) -> f64 {
        self.states.iter().map(|x| x.norm()).fold(0.0, f64::max)
    }

    /// `max_k ‖self(t_k) − other(t_k)‖` over this trajectory's nodes; `other`
    /// is evaluated by interpolation (exact when it shares the nodes).
    pub fn sup_distance(&self, other: &Trajectory) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for (t, x) in self.grid.nodes().iter().zip(&self.states) {
            worst = worst.max((x - other.interpolate(*t)?).norm());
        }
        Ok(worst)
    }
}
