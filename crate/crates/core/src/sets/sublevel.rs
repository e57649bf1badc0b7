use std::fmt;
use std::sync::Arc;

use nalgebra::Cholesky;

use crate::error::{Error, Result};
use crate::linalg::project_polyhedron;
use crate::problem::{Matrix, ScalarFn, Vector};
use crate::sets::MovingSet;

pub const PROJECTION_MAX_ITERS: usize = 200;
pub const PROJECTION_TOL: f64 = 1e-10;
const RESTORATION_MAX_ITERS: usize = 100;

type ValueFn = Arc<dyn Fn(f64, &Vector) -> f64 + Send + Sync>;
type GradientFn = Arc<dyn Fn(f64, &Vector) -> Vector + Send + Sync>;

/// One inequality `g(t, x) ≤ 0` with its spatial gradient.
#[derive(Clone)]
pub struct Constraint {
    pub value: ValueFn,
    pub gradient: GradientFn,
}

impl Constraint {
    pub fn new(
        value: impl Fn(f64, &Vector) -> f64 + Send + Sync + 'static,
        gradient: impl Fn(f64, &Vector) -> Vector + Send + Sync + 'static,
    ) -> Self {
        Self {
            value: Arc::new(value),
            gradient: Arc::new(gradient),
        }
    }

    /// `⟨a, x⟩ − b(t) ≤ 0`.
    pub fn affine(a: Vector, b: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        let a2 = a.clone();
        Self::new(move |t, x| a.dot(x) - b(t), move |_, _| a2.clone())
    }
}

/// `C(t) = {x : gᵢ(t,x) ≤ 0, i = 1..m}` together with the constants that make
/// it uniformly prox-regular and give it an absolutely continuous variation.
#[derive(Clone)]
pub struct SublevelSet {
    dim: usize,
    constraints: Vec<Constraint>,
    /// Hypomonotonicity constant of the gradients.
    pub gamma: Option<f64>,
    /// Slater-type constant.
    pub delta: Option<f64>,
    /// Radius of the neighbourhood on which the hypotheses hold (may be `+∞`).
    pub rho: Option<f64>,
    /// Unit witness direction with `⟨∇gᵢ, y⟩ ≤ −δ`.
    pub witness: Option<Vector>,
    /// `w` with `|gᵢ(t,x) − gᵢ(s,x)| ≤ |w(t) − w(s)|`.
    pub w: Option<ScalarFn>,
    /// `ẇ`, when known in closed form.
    pub w_rate: Option<ScalarFn>,
}

#[derive(Clone, Debug)]
pub struct SublevelProjection {
    pub point: Vector,
    /// KKT multipliers `μ ≥ 0` with `z − y + Σ μᵢ ∇gᵢ(t, z) = 0`.
    pub multipliers: Vector,
    pub iterations: usize,
    pub stationarity: f64,
}

#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct SlaterReport {
    /// `max ⟨∇gᵢ(t,x), y⟩ + δ` over the samples.
    pub max_margin: f64,
    pub pass: bool,
    pub worst_time: f64,
    pub worst_constraint: usize,
    pub samples: usize,
}

impl SublevelSet {
    pub fn new(dim: usize, constraints: Vec<Constraint>) -> Result<Self> {
        if constraints.is_empty() {
            return Err(Error::Domain(
                "a sublevel set needs at least one constraint".into(),
            ));
        }
        Ok(Self {
            dim,
            constraints,
            gamma: None,
            delta: None,
            rho: None,
            witness: None,
            w: None,
            w_rate: None,
        })
    }

    pub fn with_constants(mut self, gamma: f64, delta: f64, rho: f64) -> Self {
        self.gamma = Some(gamma);
        self.delta = Some(delta);
        self.rho = Some(rho);
        self
    }

    pub fn with_witness(mut self, witness: Vector) -> Self {
        self.witness = Some(witness);
        self
    }

    pub fn with_variation(mut self, w: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        self.w = Some(Arc::new(w));
        self
    }

    pub fn with_variation_rate(
        mut self,
        w_rate: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.w_rate = Some(Arc::new(w_rate));
        self
    }

    pub fn constraint_count(&self) -> usize {
        self.constraints.len()
    }

    pub fn values(&self, t: f64, x: &Vector) -> Vector {
        Vector::from_iterator(
            self.constraints.len(),
            self.constraints.iter().map(|c| (c.value)(t, x)),
        )
    }

    /// Rows are the gradients `∇ₓgᵢ(t, x)ᵀ`.
    pub fn jacobian(&self, t: f64, x: &Vector) -> Matrix {
        let mut j = Matrix::zeros(self.constraints.len(), self.dim);
        for (i, c) in self.constraints.iter().enumerate() {
            j.set_row(i, &(c.gradient)(t, x).transpose());
        }
        j
    }

    /// `r = min{ρ, δ/γ}`.
    pub fn prox_radius_sublevel(&self) -> Result<f64> {
        let (Some(gamma), Some(delta), Some(rho)) = (self.gamma, self.delta, self.rho) else {
            return Err(Error::DataMissing(
                "prox radius needs gamma, delta and rho".into(),
            ));
        };
        if gamma < 0.0 || !(delta > 0.0) || !(rho > 0.0) {
            return Err(Error::Domain(format!(
                "need gamma >= 0, delta > 0, rho > 0 (got {gamma}, {delta}, {rho})"
            )));
        }
        let ratio = if gamma == 0.0 {
            f64::INFINITY
        } else {
            delta / gamma
        };
        Ok(rho.min(ratio))
    }

    /// `|w(t) − w(s)| / δ`.
    pub fn variation_sublevel(&self, s: f64, t: f64) -> Result<f64> {
        let w = self
            .w
            .as_ref()
            .ok_or_else(|| Error::DataMissing("variation needs the modulus w".into()))?;
        let delta = self
            .delta
            .ok_or_else(|| Error::DataMissing("variation needs delta".into()))?;
        if s == t {
            return Ok(0.0);
        }
        let v = (w(t) - w(s)).abs() / delta;
        crate::error::check_finite(v, "variation")
    }

    /// Samples `max ⟨∇gᵢ(t,x), y⟩ + δ` over the given times and points.
    pub fn check_uniform_slater(&self, times: &[f64], points: &[Vector]) -> Result<SlaterReport> {
        let y = self
            .witness
            .as_ref()
            .ok_or_else(|| Error::DataMissing("Slater check needs a witness direction".into()))?;
        let delta = self
            .delta
            .ok_or_else(|| Error::DataMissing("Slater check needs delta".into()))?;
        let mut report = SlaterReport {
            max_margin: f64::NEG_INFINITY,
            pass: true,
            worst_time: f64::NAN,
            worst_constraint: 0,
            samples: 0,
        };
        for &t in times {
            for x in points {
                for (i, c) in self.constraints.iter().enumerate() {
                    let margin = (c.gradient)(t, x).dot(y) + delta;
                    report.samples += 1;
                    if margin > report.max_margin {
                        report.max_margin = margin;
                        report.worst_time = t;
                        report.worst_constraint = i;
                    }
                }
            }
        }
        report.pass = report.max_margin <= 0.0;
        Ok(report)
    }

    /// Moves `y` onto `C(t)` by Newton steps along the gradient of the most
    /// violated constraint. Gives an upper bound on the distance.
    fn restore_feasibility(&self, t: f64, y: &Vector) -> Option<Vector> {
        let mut z = y.clone();
        for _ in 0..RESTORATION_MAX_ITERS {
            let g = self.values(t, &z);
            let (i, worst) = g
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |acc, (i, v)| {
                    if *v > acc.1 {
                        (i, *v)
                    } else {
                        acc
                    }
                });
            if worst <= 0.0 {
                return Some(z);
            }
            let grad = (self.constraints[i].gradient)(t, &z);
            let n2 = grad.norm_squared();
            if !(n2 > 0.0) {
                return None;
            }
            // overshoot slightly so the iterate lands strictly inside
            z -= grad * ((worst + 1e-14 * (1.0 + z.norm())) / n2);
        }
        None
    }

    fn hessian(&self, i: usize, t: f64, z: &Vector) -> Matrix {
        let h = 1e-6 * z.norm().max(1.0);
        let grad = &self.constraints[i].gradient;
        let mut hess = Matrix::zeros(self.dim, self.dim);
        for j in 0..self.dim {
            let mut plus = z.clone();
            let mut minus = z.clone();
            plus[j] += h;
            minus[j] -= h;
            let col = (grad(t, &plus) - grad(t, &minus)) / (2.0 * h);
            hess.set_column(j, &col);
        }
        (&hess + hess.transpose()) * 0.5
    }

    /// Nearest point of `C(t)` to `y` by sequential quadratic programming on
    /// `½‖z − y‖²` with the constraint curvature in the model Hessian. Each
    /// subproblem is a polyhedral projection solved through its dual.
    pub fn project_sublevel(&self, t: f64, y: &Vector, tol: f64) -> Result<SublevelProjection> {
        let m = self.constraints.len();
        let g_y = self.values(t, y);
        if g_y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Evaluation(format!(
                "constraint not finite at t = {t}"
            )));
        }
        if g_y.iter().all(|v| *v <= 0.0) {
            return Ok(SublevelProjection {
                point: y.clone(),
                multipliers: Vector::zeros(m),
                iterations: 0,
                stationarity: 0.0,
            });
        }
        let radius = self.prox_radius_sublevel().unwrap_or(f64::INFINITY);
        let mut z = self.restore_feasibility(t, y).unwrap_or_else(|| y.clone());
        let mut mu = Vector::zeros(m);
        let scale = y.norm().max(1.0);

        for iter in 1..=PROJECTION_MAX_ITERS {
            let g = self.values(t, &z);
            let jac = self.jacobian(t, &z);
            let mut b = Matrix::identity(self.dim, self.dim);
            for i in 0..m {
                if mu[i] > 0.0 {
                    b += self.hessian(i, t, &z) * mu[i];
                }
            }
            let chol =
                Cholesky::new(b).or_else(|| Cholesky::new(Matrix::identity(self.dim, self.dim)));
            let chol = chol.expect("identity is positive definite");
            let l = chol.l();
            let l_inv = l.clone().try_inverse().ok_or(Error::ProjectionFailure {
                iterations: iter,
                residual: f64::NAN,
            })?;
            // q = Lᵀp; project u = -L⁻¹(z - y) onto {q : J L⁻ᵀ q ≤ -g}
            let u = -(&l_inv * (&z - y));
            let a = &jac * l_inv.transpose();
            let (q, new_mu) = project_polyhedron(&a, &(-&g), &u)?;
            let p = l_inv.transpose() * q;
            z += &p;
            mu = new_mu;
            if !z.iter().all(|c| c.is_finite()) {
                return Err(Error::ProjectionFailure {
                    iterations: iter,
                    residual: f64::INFINITY,
                });
            }
            if p.norm() <= tol * scale {
                let g_final = self.values(t, &z);
                let stationarity = (&z - y + self.jacobian(t, &z).transpose() * &mu).norm();
                let violation = g_final.iter().fold(0.0f64, |a, v| a.max(*v));
                if violation > tol.max(1e-12) || stationarity > 1e3 * tol * scale {
                    return Err(Error::ProjectionFailure {
                        iterations: iter,
                        residual: violation.max(stationarity),
                    });
                }
                let dist = (y - &z).norm();
                if dist >= radius {
                    return Err(Error::ReachExceeded {
                        bound: dist,
                        radius,
                    });
                }
                return Ok(SublevelProjection {
                    point: z,
                    multipliers: mu,
                    iterations: iter,
                    stationarity,
                });
            }
        }
        Err(Error::ProjectionFailure {
            iterations: PROJECTION_MAX_ITERS,
            residual: (&z - y + self.jacobian(t, &z).transpose() * &mu).norm(),
        })
    }
}

impl MovingSet for SublevelSet {
    fn dim(&self) -> usize {
        self.dim
    }

    fn distance(&self, t: f64, y: &Vector) -> f64 {
        let g = self.values(t, y);
        if g.iter().all(|v| *v <= 0.0) {
            return 0.0;
        }
        match self.project_sublevel(t, y, 1e-12) {
            Ok(p) => (y - p.point).norm(),
            // beyond the reach only an upper bound is available
            Err(_) => self
                .restore_feasibility(t, y)
                .map_or(f64::INFINITY, |z| (y - z).norm()),
        }
    }

    fn project(&self, t: f64, y: &Vector, tol: f64) -> Result<Vector> {
        Ok(self.project_sublevel(t, y, tol)?.point)
    }

    fn variation(&self, s: f64, t: f64) -> Result<f64> {
        self.variation_sublevel(s, t)
    }

    fn variation_rate(&self, t: f64) -> Result<f64> {
        let delta = self
            .delta
            .ok_or_else(|| Error::DataMissing("variation needs delta".into()))?;
        if let Some(rate) = &self.w_rate {
            let r = rate(t).abs() / delta;
            if r.is_finite() {
                return Ok(r);
            }
        }
        let h = 1e-6 * t.abs().max(1.0);
        let forward = self.variation(t, t + h)? / h;
        Ok(forward)
    }

    fn prox_radius(&self) -> f64 {
        self.prox_radius_sublevel().unwrap_or(f64::INFINITY)
    }

    fn as_sublevel(&self) -> Option<&SublevelSet> {
        Some(self)
    }

    fn describe(&self) -> String {
        format!(
            "sublevel set of {} constraint(s) in R^{}",
            self.constraints.len(),
            self.dim
        )
    }
}

impl fmt::Debug for SublevelSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SublevelSet")
            .field("dim", &self.dim)
            .field("constraints", &self.constraints.len())
            .field("gamma", &self.gamma)
            .field("delta", &self.delta)
            .field("rho", &self.rho)
            .finish()
    }
}
