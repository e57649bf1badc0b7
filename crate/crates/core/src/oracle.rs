//! Reference integrators with numerics independent of the catching-up solver.

use crate::error::{Error, Result};
use crate::problem::{
    Horizon, KernelSpec, PerturbationSpec, ProblemSpec, TimeGrid, Trajectory, Vector,
};
use crate::solver::{integrate_trajectory, MemoryRule, SolveOptions};

pub const DEFAULT_FINE_STEPS: usize = 1 << 14;

/// Trapezoid memory `∫_{T₀}^{t_k} f₂(t_k, s, x(s)) ds` over `states[0..=k]`.
fn trapezoid_memory(f2: &KernelSpec, nodes: &[f64], states: &[Vector], k: usize) -> Result<Vector> {
    let mut sum = Vector::zeros(states[0].len());
    if f2.is_zero() {
        return Ok(sum);
    }
    let tk = nodes[k];
    let mut left = if k > 0 {
        Some(f2.call(tk, nodes[0], &states[0])?)
    } else {
        None
    };
    for j in 0..k {
        let right = f2.call(tk, nodes[j + 1], &states[j + 1])?;
        sum += (left.take().expect("left value") + &right) * (0.5 * (nodes[j + 1] - nodes[j]));
        left = Some(right);
    }
    Ok(sum)
}

/// Heun's method for `ẋ = −f₁(t,x) − ∫_{T₀}^t f₂(t,s,x(s)) ds` with trapezoid
/// memory. No constraint is enforced.
pub fn volterra_reference(
    f1: &PerturbationSpec,
    f2: &KernelSpec,
    x0: &Vector,
    horizon: Horizon,
    n: usize,
) -> Result<Trajectory> {
    let grid = TimeGrid::uniform(horizon, n)?;
    let nodes = grid.nodes().to_vec();
    let mut states = Vec::with_capacity(n + 1);
    states.push(x0.clone());
    for k in 0..n {
        let h = grid.step_size(k);
        let xk = states[k].clone();
        let slope = -(f1.call(nodes[k], &xk)? + trapezoid_memory(f2, &nodes, &states, k)?);
        let predicted = &xk + &slope * h;
        states.push(predicted.clone());
        let end =
            -(f1.call(nodes[k + 1], &predicted)? + trapezoid_memory(f2, &nodes, &states, k + 1)?);
        let next = xk + (slope + end) * (0.5 * h);
        if next.iter().any(|c| !c.is_finite()) {
            return Err(Error::Evaluation(format!(
                "reference diverged at t = {}",
                nodes[k + 1]
            )));
        }
        states[k + 1] = next;
    }
    Trajectory::from_states(grid, states)
}

/// The solver itself at `n_fine` steps with trapezoid memory.
pub fn fine_grid_oracle(prob: &ProblemSpec, n_fine: usize) -> Result<Trajectory> {
    let opts = SolveOptions::with_steps(n_fine)
        .memory(MemoryRule::Trapezoid)
        .without_bounds();
    let grid = TimeGrid::uniform(prob.horizon, n_fine)?;
    integrate_trajectory(prob, &grid, &opts)
}
