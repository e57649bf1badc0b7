//! Moving sets `t ↦ C(t)` with distance/projection oracles and variation
//! moduli.

mod sublevel;
mod translated;

pub use sublevel::{Constraint, SlaterReport, SublevelProjection, SublevelSet, PROJECTION_TOL};
pub use translated::{FixedSet, TranslatedFixedSet, VariationModulus};

use crate::error::Result;
use crate::problem::Vector;

/// Number of sub-intervals used when a total variation has to be assembled
/// from the two-point modulus.
pub(crate) const VARIATION_PANELS: usize = 256;

/// A time-indexed closed set that is `r`-prox-regular and moves with an
/// absolutely continuous variation `υ`:
/// `C(t) ⊂ C(s) + |υ(t) − υ(s)|·B`.
pub trait MovingSet: Send + Sync {
    fn dim(&self) -> usize;

    /// `d_{C(t)}(y)`.
    fn distance(&self, t: f64, y: &Vector) -> f64;

    /// Nearest point of `C(t)` to `y`; unique whenever `d_{C(t)}(y) < r`.
    fn project(&self, t: f64, y: &Vector, tol: f64) -> Result<Vector>;

    /// `|υ(t) − υ(s)|`.
    fn variation(&self, s: f64, t: f64) -> Result<f64>;

    /// `|υ̇(t)|`. The default is a forward difference of [`Self::variation`].
    fn variation_rate(&self, t: f64) -> Result<f64> {
        let h = 1e-6 * t.abs().max(1.0);
        let forward = self.variation(t, t + h)? / h;
        if forward.is_finite() {
            Ok(forward)
        } else {
            Ok(self.variation(t - h, t)? / h)
        }
    }

    /// `∫_s^t |υ̇|`, assembled from the two-point modulus on a fine partition.
    fn total_variation(&self, s: f64, t: f64) -> Result<f64> {
        let (lo, hi) = if s <= t { (s, t) } else { (t, s) };
        if lo == hi {
            return Ok(0.0);
        }
        let h = (hi - lo) / VARIATION_PANELS as f64;
        let mut total = 0.0;
        for j in 0..VARIATION_PANELS {
            let a = lo + j as f64 * h;
            let b = if j + 1 == VARIATION_PANELS { hi } else { a + h };
            total += self.variation(a, b)?;
        }
        Ok(total)
    }

    /// Prox-regularity radius `r` (`+∞` for convex sets).
    fn prox_radius(&self) -> f64;

    fn contains(&self, t: f64, y: &Vector, tol: f64) -> bool {
        self.distance(t, y) <= tol
    }

    /// Inequality description `{x : gᵢ(t,x) ≤ 0}` when the set has one.
    fn as_sublevel(&self) -> Option<&SublevelSet> {
        None
    }

    fn describe(&self) -> String;
}
