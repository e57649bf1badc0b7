use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg::project_polyhedron;
use crate::problem::{Matrix, ScalarFn, ScalarFn2, Vector};
use crate::quadrature::integrate;
use crate::sets::{MovingSet, VARIATION_PANELS};

/// Fixed closed convex set `K`.
#[derive(Clone, Debug)]
pub enum FixedSet {
    /// `ℝ₊ᵈ`.
    Orthant,
    Box {
        lower: Vector,
        upper: Vector,
    },
    Ball {
        center: Vector,
        radius: f64,
    },
    /// `{x : ⟨normal, x⟩ ≤ offset}`.
    HalfSpace {
        normal: Vector,
        offset: f64,
    },
    /// `{x : A x ≤ b}`.
    Polyhedron {
        a: Matrix,
        b: Vector,
    },
}

impl FixedSet {
    fn validate(&self, dim: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::Domain(msg));
        match self {
            FixedSet::Orthant => Ok(()),
            FixedSet::Box { lower, upper } => {
                if lower.len() != dim || upper.len() != dim {
                    return bad(format!("box bounds must have dimension {dim}"));
                }
                if lower.iter().zip(upper.iter()).any(|(l, u)| l > u) {
                    return bad("box has lower > upper".into());
                }
                Ok(())
            }
            FixedSet::Ball { center, radius } => {
                if center.len() != dim {
                    return bad(format!("ball center must have dimension {dim}"));
                }
                if !(*radius > 0.0) {
                    return bad(format!("ball radius must be positive, got {radius}"));
                }
                Ok(())
            }
            FixedSet::HalfSpace { normal, .. } => {
                if normal.len() != dim || normal.norm() == 0.0 {
                    return bad(format!(
                        "half-space normal must be nonzero of dimension {dim}"
                    ));
                }
                Ok(())
            }
            FixedSet::Polyhedron { a, b } => {
                if a.ncols() != dim || a.nrows() != b.len() || a.nrows() == 0 {
                    return bad(format!(
                        "polyhedron needs A with {dim} columns and b with one entry per row"
                    ));
                }
                Ok(())
            }
        }
    }

    /// Projection onto `K` (closed form except for the polyhedron).
    pub fn project(&self, y: &Vector) -> Result<Vector> {
        Ok(match self {
            // components already at zero stay at zero
            FixedSet::Orthant => y.map(|c| if c < 0.0 { 0.0 } else { c }),
            FixedSet::Box { lower, upper } => {
                Vector::from_fn(y.len(), |i, _| y[i].clamp(lower[i], upper[i]))
            }
            FixedSet::Ball { center, radius } => {
                let offset = y - center;
                let norm = offset.norm();
                if norm <= *radius {
                    y.clone()
                } else {
                    center + offset * (*radius / norm)
                }
            }
            FixedSet::HalfSpace { normal, offset } => {
                let excess = normal.dot(y) - offset;
                if excess <= 0.0 {
                    y.clone()
                } else {
                    y - normal * (excess / normal.norm_squared())
                }
            }
            FixedSet::Polyhedron { a, b } => project_polyhedron(a, b, y)?.0,
        })
    }

    fn name(&self) -> &'static str {
        match self {
            FixedSet::Orthant => "orthant",
            FixedSet::Box { .. } => "box",
            FixedSet::Ball { .. } => "ball",
            FixedSet::HalfSpace { .. } => "half-space",
            FixedSet::Polyhedron { .. } => "polyhedron",
        }
    }
}

/// How `∫_s^t ‖ẇ‖` is obtained for a translated set.
#[derive(Clone)]
pub enum VariationModulus {
    /// `w` is constant.
    Static,
    /// `τ ↦ ‖ẇ(τ)‖`, integrated by adaptive quadrature.
    Speed(ScalarFn),
    /// `(s, t) ↦ ∫_s^t ‖ẇ‖` supplied directly.
    Integral(ScalarFn2),
    /// Polygonal arc length of `w` on a fine partition. Approximate: it
    /// underestimates the variation of a shift that oscillates faster than
    /// the partition.
    SampledShift,
}

/// `C(t) = w(t) + K` with `K` fixed, closed and convex.
#[derive(Clone)]
pub struct TranslatedFixedSet {
    base: FixedSet,
    dim: usize,
    shift: Arc<dyn Fn(f64) -> Vector + Send + Sync>,
    modulus: VariationModulus,
}

impl TranslatedFixedSet {
    pub fn new(
        dim: usize,
        base: FixedSet,
        shift: impl Fn(f64) -> Vector + Send + Sync + 'static,
        modulus: VariationModulus,
    ) -> Result<Self> {
        base.validate(dim)?;
        Ok(Self {
            base,
            dim,
            shift: Arc::new(shift),
            modulus,
        })
    }

    /// `K` itself, not moving.
    pub fn fixed(dim: usize, base: FixedSet) -> Result<Self> {
        Self::new(
            dim,
            base,
            move |_| Vector::zeros(dim),
            VariationModulus::Static,
        )
    }

    pub fn base(&self) -> &FixedSet {
        &self.base
    }

    pub fn shift(&self, t: f64) -> Vector {
        (self.shift)(t)
    }

    pub fn modulus(&self) -> &VariationModulus {
        &self.modulus
    }

    /// `w(t) + Proj_K(y − w(t))`.
    pub fn project_point(&self, t: f64, y: &Vector) -> Result<Vector> {
        let w = self.shift(t);
        let local = y - &w;
        Ok(w + self.base.project(&local)?)
    }
}

impl MovingSet for TranslatedFixedSet {
    fn dim(&self) -> usize {
        self.dim
    }

    fn distance(&self, t: f64, y: &Vector) -> f64 {
        match self.project_point(t, y) {
            Ok(p) => (y - p).norm(),
            Err(_) => f64::INFINITY,
        }
    }

    fn project(&self, t: f64, y: &Vector, _tol: f64) -> Result<Vector> {
        self.project_point(t, y)
    }

    fn variation(&self, s: f64, t: f64) -> Result<f64> {
        let (lo, hi) = if s <= t { (s, t) } else { (t, s) };
        if lo == hi {
            return Ok(0.0);
        }
        match &self.modulus {
            VariationModulus::Static => Ok(0.0),
            VariationModulus::Speed(speed) => Ok(integrate(|tau| speed(tau), lo, hi)?.abs()),
            VariationModulus::Integral(f) => Ok(f(lo, hi).abs()),
            VariationModulus::SampledShift => {
                let h = (hi - lo) / VARIATION_PANELS as f64;
                let mut total = 0.0;
                let mut prev = self.shift(lo);
                for j in 1..=VARIATION_PANELS {
                    let tau = if j == VARIATION_PANELS {
                        hi
                    } else {
                        lo + j as f64 * h
                    };
                    let next = self.shift(tau);
                    total += (&next - &prev).norm();
                    prev = next;
                }
                Ok(total)
            }
        }
    }

    fn variation_rate(&self, t: f64) -> Result<f64> {
        match &self.modulus {
            VariationModulus::Static => Ok(0.0),
            VariationModulus::Speed(speed) => Ok(speed(t).abs()),
            _ => {
                let h = 1e-6 * t.abs().max(1.0);
                Ok(self.variation(t, t + h)? / h)
            }
        }
    }

    fn total_variation(&self, s: f64, t: f64) -> Result<f64> {
        match &self.modulus {
            // the speed and integral moduli already are ∫‖ẇ‖
            VariationModulus::Speed(_) | VariationModulus::Integral(_) => self.variation(s, t),
            VariationModulus::Static => Ok(0.0),
            VariationModulus::SampledShift => self.variation(s, t),
        }
    }

    fn prox_radius(&self) -> f64 {
        f64::INFINITY
    }

    fn describe(&self) -> String {
        format!("w(t) + {} in R^{}", self.base.name(), self.dim)
    }
}
