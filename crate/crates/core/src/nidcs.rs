//! Integro-differential complementarity systems
//! `−ẋ = f₁ + ∫f₂ + ∇g(t,x)ᵀz`, `0 ≤ z ⊥ g(t,x) ≤ 0`, solved as sweeping
//! processes over `C(t) = {g ≤ 0}`.

use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{nnls, rank};
use crate::problem::{
    Horizon, KernelSpec, Matrix, PerturbationSpec, ProblemSpec, TimeGrid, Trajectory, Vector,
    FEASIBILITY_TOL,
};
use crate::sets::SublevelSet;
use crate::solver::{memory_term, MemoryRule};

/// Constraints with `gᵢ ≥ −ACTIVATION_TOL` are treated as active.
pub const ACTIVATION_TOL: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct NidcsSpec {
    pub horizon: Horizon,
    pub f1: PerturbationSpec,
    pub f2: KernelSpec,
    pub set: SublevelSet,
    pub x0: Vector,
}

/// The equivalent sweeping process, with `r = min{ρ, δ/γ}`.
pub fn compile(spec: &NidcsSpec) -> Result<ProblemSpec> {
    let r = spec.set.prox_radius_sublevel()?;
    let g0 = spec.set.values(spec.horizon.t_start, &spec.x0);
    if let Some((i, worst)) = g0
        .iter()
        .enumerate()
        .find(|(_, v)| !(**v <= FEASIBILITY_TOL))
    {
        return Err(Error::Domain(format!(
            "x0 = {:?} violates constraint {} at T0 (g = {worst:.3e})",
            spec.x0.as_slice(),
            i + 1
        )));
    }
    ProblemSpec::with_radius(
        spec.horizon,
        Arc::new(spec.set.clone()),
        spec.f1.clone(),
        spec.f2.clone(),
        spec.x0.clone(),
        r,
    )
}

#[derive(Clone, Debug, Serialize)]
pub struct MultiplierPath {
    #[serde(skip)]
    pub grid: TimeGrid,
    #[serde(skip)]
    pub z: Vec<Vector>,
    /// `|⟨z_k, g(t_k, x_k)⟩|`.
    pub complementarity: Vec<f64>,
    /// `min_i z_{k,i}`.
    pub dual_min: Vec<f64>,
    /// `max_i g_i(t_k, x_k)`.
    pub primal: Vec<f64>,
    /// `‖∇g(t_k,x_k)ᵀ z_k − ρ_{k−1}‖`.
    pub stationarity: Vec<f64>,
    /// Active gradients linearly dependent: `z_k` is the minimum-norm choice.
    pub degenerate: Vec<bool>,
}

impl MultiplierPath {
    pub fn max_complementarity(&self) -> f64 {
        self.complementarity.iter().copied().fold(0.0, f64::max)
    }

    pub fn max_primal(&self) -> f64 {
        self.primal
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_dual(&self) -> f64 {
        self.dual_min.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Multipliers at one node from the normal residual `rho`.
fn solve_node(
    set: &SublevelSet,
    t: f64,
    x: &Vector,
    rho: &Vector,
    k: usize,
) -> Result<(Vector, f64, bool)> {
    let m = set.constraint_count();
    let g = set.values(t, x);
    let active: Vec<usize> = (0..m).filter(|&i| g[i] >= -ACTIVATION_TOL).collect();
    let mut z = Vector::zeros(m);
    if active.is_empty() {
        return Ok((z, rho.norm(), false));
    }
    let jac = set.jacobian(t, x);
    let e = Matrix::from_fn(x.len(), active.len(), |r, c| jac[(active[c], r)]);
    let za = nnls(&e, rho).map_err(|err| Error::Recovery {
        k,
        reason: err.to_string(),
    })?;
    for (c, &i) in active.iter().enumerate() {
        z[i] = za[c];
    }
    let residual = (&e * &za - rho).norm();
    Ok((z, residual, rank(&e) < active.len()))
}

/// Recovers `z` along a solved trajectory. Step `k` gives the normal residual
/// `ρ_k = −v_k − f₁(t_k,x_k) − mem_k`, matched against the active gradients at
/// `(t_{k+1}, x_{k+1})` where the projection acted; node 0 uses `ρ_0` with the
/// gradients at `(T₀, x₀)`.
pub fn recover_with(
    set: &SublevelSet,
    prob: &ProblemSpec,
    traj: &Trajectory,
    rule: MemoryRule,
) -> Result<MultiplierPath> {
    let grid = &traj.grid;
    let n = grid.steps();
    let mut residuals = Vec::with_capacity(n);
    for k in 0..n {
        let tk = grid.node(k);
        let mem = memory_term(prob, grid, &traj.states, k, rule).map_err(|e| Error::Recovery {
            k,
            reason: e.to_string(),
        })?;
        let f1 = prob
            .f1
            .call(tk, &traj.states[k])
            .map_err(|e| Error::Recovery {
                k,
                reason: e.to_string(),
            })?;
        residuals.push(-&traj.velocities[k] - f1 - mem);
    }

    let mut path = MultiplierPath {
        grid: grid.clone(),
        z: Vec::with_capacity(n + 1),
        complementarity: Vec::with_capacity(n + 1),
        dual_min: Vec::with_capacity(n + 1),
        primal: Vec::with_capacity(n + 1),
        stationarity: Vec::with_capacity(n + 1),
        degenerate: Vec::with_capacity(n + 1),
    };
    for node in 0..=n {
        let t = grid.node(node);
        let x = &traj.states[node];
        let rho = if node == 0 {
            residuals
                .first()
                .cloned()
                .unwrap_or_else(|| Vector::zeros(x.len()))
        } else {
            residuals[node - 1].clone()
        };
        let (z, stationarity, degenerate) = solve_node(set, t, x, &rho, node)?;
        let g = set.values(t, x);
        path.complementarity.push(z.dot(&g).abs());
        path.dual_min
            .push(z.iter().copied().fold(f64::INFINITY, f64::min));
        path.primal
            .push(g.iter().copied().fold(f64::NEG_INFINITY, f64::max));
        path.stationarity.push(stationarity);
        path.degenerate.push(degenerate);
        path.z.push(z);
    }
    Ok(path)
}

pub fn recover_multiplier(
    spec: &NidcsSpec,
    traj: &Trajectory,
    rule: MemoryRule,
) -> Result<MultiplierPath> {
    let prob = compile(spec)?;
    recover_with(&spec.set, &prob, traj, rule)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sets::Constraint;
    use crate::solver::{solve, SolveOptions};

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    fn half_line_spec(x0: f64) -> NidcsSpec {
        let set = SublevelSet::new(1, vec![Constraint::affine(v(&[-1.0]), |_| 0.0)])
            .unwrap()
            .with_constants(0.0, 1.0, f64::INFINITY)
            .with_witness(v(&[1.0]))
            .with_variation(|_| 0.0);
        NidcsSpec {
            horizon: Horizon::new(0.0, 1.0).unwrap(),
            f1: PerturbationSpec::new(|_, _| v(&[1.0])).with_growth(|_| 1.0),
            f2: KernelSpec::zero(1),
            set,
            x0: v(&[x0]),
        }
    }

    #[test]
    fn pushed_half_line_has_unit_multiplier() {
        let spec = half_line_spec(0.0);
        let prob = compile(&spec).unwrap();
        assert_eq!(prob.prox_radius, f64::INFINITY);
        let traj = solve(&prob, &SolveOptions::with_steps(50))
            .unwrap()
            .trajectory;
        assert!(traj.states.iter().all(|x| x[0] == 0.0));
        let path = recover_multiplier(&spec, &traj, MemoryRule::LeftRectangle).unwrap();
        for z in &path.z {
            assert!((z[0] - 1.0).abs() < 1e-12);
        }
        assert!(path.max_complementarity() <= 1e-12);
    }

    #[test]
    fn interior_nodes_have_zero_multiplier() {
        // x0 = 1 drifts left with unit speed and reaches the wall at t = 1
        let spec = half_line_spec(1.0);
        let traj = solve(&compile(&spec).unwrap(), &SolveOptions::with_steps(40))
            .unwrap()
            .trajectory;
        let path = recover_multiplier(&spec, &traj, MemoryRule::LeftRectangle).unwrap();
        for k in 0..30 {
            assert_eq!(path.z[k][0], 0.0);
            assert!(path.stationarity[k] < 1e-12);
        }
    }

    #[test]
    fn inactive_slot_stays_zero() {
        // g1 = −x1 active, g2 = x2 − 5 slack
        let set = SublevelSet::new(
            2,
            vec![
                Constraint::affine(v(&[-1.0, 0.0]), |_| 0.0),
                Constraint::affine(v(&[0.0, 1.0]), |_| 5.0),
            ],
        )
        .unwrap()
        .with_constants(0.0, 1.0, f64::INFINITY)
        .with_variation(|_| 0.0);
        let spec = NidcsSpec {
            horizon: Horizon::new(0.0, 1.0).unwrap(),
            f1: PerturbationSpec::new(|_, _| v(&[2.0, 0.0])),
            f2: KernelSpec::zero(2),
            set,
            x0: v(&[0.0, 1.0]),
        };
        let traj = solve(&compile(&spec).unwrap(), &SolveOptions::with_steps(20))
            .unwrap()
            .trajectory;
        let path = recover_multiplier(&spec, &traj, MemoryRule::LeftRectangle).unwrap();
        for z in &path.z {
            assert!((z[0] - 2.0).abs() < 1e-12);
            assert_eq!(z[1], 0.0);
        }
    }

    #[test]
    fn infeasible_start_is_rejected() {
        assert!(matches!(
            compile(&half_line_spec(-0.5)),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn parabola_compiles_with_half_radius() {
        let set = SublevelSet::new(
            2,
            vec![Constraint::new(
                |t, x| t.cbrt() - x[0] - x[1] * x[1],
                |_, x| v(&[-1.0, -2.0 * x[1]]),
            )],
        )
        .unwrap()
        .with_constants(2.0, 1.0, f64::INFINITY)
        .with_variation(|t| t.cbrt());
        let spec = NidcsSpec {
            horizon: Horizon::new(0.0, 1.0).unwrap(),
            f1: PerturbationSpec::zero(2),
            f2: KernelSpec::zero(2),
            set,
            x0: v(&[0.0, 0.0]),
        };
        let prob = compile(&spec).unwrap();
        assert_eq!(prob.prox_radius, 0.5);
        let traj = solve(&prob, &SolveOptions::with_steps(200))
            .unwrap()
            .trajectory;
        // boundary point x1 = t^(1/3) − x2² tracks the moving parabola
        let last = traj.states.last().unwrap();
        assert!((spec.set.values(1.0, last)[0]).abs() < 1e-9);
        let path = recover_multiplier(&spec, &traj, MemoryRule::LeftRectangle).unwrap();
        assert!(path.min_dual() >= 0.0);
        assert!(path.max_complementarity() <= 1e-6);
    }
}
