//! Two-loop RLC circuit with ideal diodes and time-varying capacitors.
//!
//! State `x = (x₁, x₂)` holds the inductor currents. The diodes force
//! `x₁ ≥ i(t)` and `x₂ ≥ 0`, so `C(t) = (i(t), 0) + ℝ₊²`.

use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::operator_norm;
use crate::nidcs::recover_with;
use crate::problem::{
    Horizon, KernelSpec, Matrix, MatrixFn, PerturbationSpec, ProblemSpec, ScalarFn, Trajectory,
    Vector,
};
use crate::sets::{Constraint, FixedSet, SublevelSet, TranslatedFixedSet, VariationModulus};
use crate::solver::MemoryRule;

/// Capacitances are sampled at this many points when checking for zeros.
const CAPACITANCE_SAMPLES: usize = 2048;

#[derive(Clone)]
pub struct CircuitParams {
    pub horizon: Horizon,
    pub r1: f64,
    pub r2: f64,
    pub l1: f64,
    pub l2: f64,
    pub c1: ScalarFn,
    pub c2: ScalarFn,
    pub c3: ScalarFn,
    /// Source current `i(t)`.
    pub source: ScalarFn,
    /// `|i′(t)|` when known; otherwise the variation is sampled.
    pub source_speed: Option<ScalarFn>,
    pub x0: Vector,
}

impl std::fmt::Debug for CircuitParams {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CircuitParams")
            .field("horizon", &self.horizon)
            .field("r1", &self.r1)
            .field("r2", &self.r2)
            .field("l1", &self.l1)
            .field("l2", &self.l2)
            .field("x0", &self.x0.as_slice())
            .finish_non_exhaustive()
    }
}

impl CircuitParams {
    /// Unit resistances, inductances and capacitances.
    pub fn unit(
        horizon: Horizon,
        source: impl Fn(f64) -> f64 + Send + Sync + 'static,
        x0: Vector,
    ) -> Self {
        let one: ScalarFn = Arc::new(|_| 1.0);
        Self {
            horizon,
            r1: 1.0,
            r2: 1.0,
            l1: 1.0,
            l2: 1.0,
            c1: one.clone(),
            c2: one.clone(),
            c3: one,
            source: Arc::new(source),
            source_speed: None,
            x0,
        }
    }

    pub fn with_source_speed(mut self, speed: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        self.source_speed = Some(Arc::new(speed));
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.l1 > 0.0 && self.l2 > 0.0) {
            return Err(Error::InvalidCircuit(format!(
                "inductances must be positive (L1 = {}, L2 = {})",
                self.l1, self.l2
            )));
        }
        if !(self.r1 >= 0.0 && self.r2 >= 0.0) {
            return Err(Error::InvalidCircuit(format!(
                "resistances must be nonnegative (R1 = {}, R2 = {})",
                self.r1, self.r2
            )));
        }
        if self.x0.len() != 2 {
            return Err(Error::InvalidCircuit(format!(
                "x0 must have 2 components, got {}",
                self.x0.len()
            )));
        }
        let h = self.horizon;
        for (name, c) in [("C1", &self.c1), ("C2", &self.c2), ("C3", &self.c3)] {
            let mut prev: Option<f64> = None;
            for j in 0..=CAPACITANCE_SAMPLES {
                let t = h.t_start + h.length() * j as f64 / CAPACITANCE_SAMPLES as f64;
                let v = c(t);
                let crossed = prev.is_some_and(|p| p.signum() != v.signum());
                if !v.is_finite() || v == 0.0 || crossed {
                    return Err(Error::InvalidCircuit(format!(
                        "capacitance {name} vanishes or changes sign near t = {t}"
                    )));
                }
                prev = Some(v);
            }
        }
        Ok(())
    }
}

#[derive(Clone)]
pub struct CircuitMatrices {
    pub a1: Matrix,
    pub a2: MatrixFn,
    pub w: Arc<dyn Fn(f64) -> Vector + Send + Sync>,
    /// `(t, s) ↦ (i(s)/(L₁C₁(t)), 0)`.
    pub forcing: Arc<dyn Fn(f64, f64) -> Vector + Send + Sync>,
}

pub fn circuit_matrices(p: &CircuitParams) -> CircuitMatrices {
    let (r1, r2, l1, l2) = (p.r1, p.r2, p.l1, p.l2);
    let a1 = Matrix::from_row_slice(2, 2, &[(r1 + r2) / l1, -r2 / l1, -r2 / l2, (r1 + r2) / l2]);
    let (c1, c2, c3) = (p.c1.clone(), p.c2.clone(), p.c3.clone());
    let a2: MatrixFn = Arc::new(move |t| {
        let (c1, c2, c3) = (c1(t), c2(t), c3(t));
        Matrix::from_row_slice(
            2,
            2,
            &[
                1.0 / (l1 * c1) + 1.0 / (l1 * c3),
                -1.0 / (l1 * c3),
                -1.0 / (l2 * c3),
                1.0 / (l2 * c2) + 1.0 / (l2 * c3),
            ],
        )
    });
    let source = p.source.clone();
    let w = Arc::new(move |t: f64| Vector::from_vec(vec![source(t), 0.0]));
    let (source, c1) = (p.source.clone(), p.c1.clone());
    let forcing =
        Arc::new(move |t: f64, s: f64| Vector::from_vec(vec![source(s) / (l1 * c1(t)), 0.0]));
    CircuitMatrices { a1, a2, w, forcing }
}

/// `−ẋ ∈ N_{C(t)}(x) + A₁x + ∫(A₂(t)x(s) + w(s)/(L₁C₁(t))) ds`.
pub fn build_circuit_problem(p: &CircuitParams) -> Result<ProblemSpec> {
    p.validate()?;
    let m = circuit_matrices(p);
    let modulus = match &p.source_speed {
        Some(speed) => {
            let speed = speed.clone();
            VariationModulus::Speed(Arc::new(move |t| speed(t).abs()))
        }
        None => VariationModulus::SampledShift,
    };
    let w = m.w.clone();
    let set = TranslatedFixedSet::new(2, FixedSet::Orthant, move |t| w(t), modulus)?;

    let f1 = PerturbationSpec::linear(m.a1.clone());

    let l1 = p.l1;
    let (a2, c1) = (m.a2.clone(), p.c1.clone());
    let phi = move |t: f64| {
        let a = a2(t);
        let gain = 1.0 / (l1 * c1(t));
        Matrix::from_row_slice(
            2,
            3,
            &[a[(0, 0)], a[(0, 1)], gain, a[(1, 0)], a[(1, 1)], 0.0],
        )
    };
    let source = p.source.clone();
    let psi = move |s: f64, x: &Vector| Vector::from_vec(vec![x[0], x[1], source(s)]);

    let (a2, source, c1) = (m.a2.clone(), p.source.clone(), p.c1.clone());
    let g = move |t: f64, s: f64| source(s).abs() / (l1 * c1(t)).abs();
    let g2 = g.clone();
    let alpha = move |t: f64| operator_norm(&a2(t));
    let alpha2 = alpha.clone();
    let alpha3 = alpha.clone();
    let f2 = KernelSpec::separable(phi, psi)
        .with_affine_growth(g, alpha)
        .with_growth(move |t, s| alpha2(t).max(g2(t, s)))
        .with_lipschitz(move |_, t| alpha3(t));

    if p.x0[0] < (p.source)(p.horizon.t_start) - 1e-9 || p.x0[1] < -1e-9 {
        return Err(Error::InvalidCircuit(format!(
            "x0 = {:?} needs x0_1 >= i(T0) = {} and x0_2 >= 0",
            p.x0.as_slice(),
            (p.source)(p.horizon.t_start)
        )));
    }
    ProblemSpec::new(p.horizon, Arc::new(set), f1, f2, p.x0.clone())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DiodeRecord {
    pub t: f64,
    pub x1: f64,
    pub x2: f64,
    pub i_src: f64,
    pub i_d1: f64,
    pub i_d2: f64,
    pub v_d1: f64,
    pub v_d2: f64,
    pub comp_gap1: f64,
    pub comp_gap2: f64,
}

/// Diode currents `(x₁ − i, x₂)`, voltages `V_{D_k} = −L_k z_k` from the
/// recovered multipliers of `g = (i − x₁, −x₂)`, and `|V_D i_D|`.
pub fn diode_waveforms(
    p: &CircuitParams,
    prob: &ProblemSpec,
    traj: &Trajectory,
    rule: MemoryRule,
) -> Result<Vec<DiodeRecord>> {
    let source = p.source.clone();
    let constraints = SublevelSet::new(
        2,
        vec![
            Constraint::new(
                move |t, x| source(t) - x[0],
                |_, _| Vector::from_vec(vec![-1.0, 0.0]),
            ),
            Constraint::affine(Vector::from_vec(vec![0.0, -1.0]), |_| 0.0),
        ],
    )?;
    let path = recover_with(&constraints, prob, traj, rule)?;
    let mut out = Vec::with_capacity(traj.states.len());
    for (k, (t, x)) in traj.grid.nodes().iter().zip(&traj.states).enumerate() {
        let i_src = (p.source)(*t);
        let (i_d1, i_d2) = (x[0] - i_src, x[1]);
        let z = &path.z[k];
        let (v_d1, v_d2) = (-p.l1 * z[0], -p.l2 * z[1]);
        out.push(DiodeRecord {
            t: *t,
            x1: x[0],
            x2: x[1],
            i_src,
            i_d1,
            i_d2,
            v_d1,
            v_d2,
            comp_gap1: (v_d1 * i_d1).abs(),
            comp_gap2: (v_d2 * i_d2).abs(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::TimeGrid;
    use crate::solver::{memory_term, solve, SolveOptions};

    fn default_params() -> CircuitParams {
        CircuitParams::unit(
            Horizon::new(0.0, 2.0).unwrap(),
            |t| t.sin().max(0.0),
            Vector::from_vec(vec![1.0, 1.0]),
        )
    }

    #[test]
    fn unit_matrices() {
        let m = circuit_matrices(&default_params());
        let expected = Matrix::from_row_slice(2, 2, &[2.0, -1.0, -1.0, 2.0]);
        assert_eq!(m.a1, expected);
        for t in [0.0, 0.7, 2.0] {
            assert_eq!((m.a2)(t), expected);
        }
    }

    #[test]
    fn zero_source_gives_static_orthant() {
        let p = CircuitParams::unit(
            Horizon::new(0.0, 1.0).unwrap(),
            |_| 0.0,
            Vector::from_vec(vec![0.5, 0.5]),
        );
        let prob = build_circuit_problem(&p).unwrap();
        assert_eq!(prob.set.variation(0.0, 1.0).unwrap(), 0.0);
        let traj = solve(&prob, &SolveOptions::with_steps(200))
            .unwrap()
            .trajectory;
        assert!(traj.states.iter().all(|x| x[0] >= 0.0 && x[1] >= 0.0));
    }

    #[test]
    fn vanishing_capacitance_is_invalid() {
        let mut p = default_params();
        p.horizon = Horizon::new(0.0, 1.0).unwrap();
        p.c3 = Arc::new(|t| t - 0.5);
        assert!(matches!(
            build_circuit_problem(&p),
            Err(Error::InvalidCircuit(_))
        ));
    }

    #[test]
    fn separable_kernel_matches_direct_formula() {
        let mut p = default_params();
        p.c1 = Arc::new(|t| 1.0 + 0.5 * t.sin());
        p.c3 = Arc::new(|t| 2.0 + t);
        let prob = build_circuit_problem(&p).unwrap();
        let m = circuit_matrices(&p);
        let grid = TimeGrid::uniform(prob.horizon, 40).unwrap();
        let states: Vec<Vector> = (0..=40)
            .map(|k| Vector::from_vec(vec![1.0 + 0.1 * k as f64, (k as f64).cos()]))
            .collect();
        let direct = KernelSpec::new(move |t, s, x| (m.a2)(t) * x + (m.forcing)(t, s));
        let mut direct_prob = prob.clone();
        direct_prob.f2 = direct;
        for k in [1, 17, 40] {
            let a = memory_term(&prob, &grid, &states, k, MemoryRule::Trapezoid).unwrap();
            let b = memory_term(&direct_prob, &grid, &states, k, MemoryRule::Trapezoid).unwrap();
            assert!((a - &b).norm() <= 1e-12 * b.norm().max(1.0));
        }
    }

    #[test]
    fn default_run_is_feasible_and_complementary() {
        let p =
            default_params().with_source_speed(|t| if t.sin() > 0.0 { t.cos().abs() } else { 0.0 });
        let prob = build_circuit_problem(&p).unwrap();
        let traj = solve(&prob, &SolveOptions::with_steps(1000).without_bounds())
            .unwrap()
            .trajectory;
        let waves = diode_waveforms(&p, &prob, &traj, MemoryRule::LeftRectangle).unwrap();
        for r in &waves {
            assert!(r.i_d1 >= -1e-9 && r.i_d2 >= -1e-9);
            assert!(r.v_d1 <= 0.0 && r.v_d2 <= 0.0);
            assert!(r.comp_gap1 <= 1e-6 && r.comp_gap2 <= 1e-6);
            if r.i_d1 > 1e-6 {
                assert_eq!(r.v_d1, 0.0);
            }
        }
    }
}
