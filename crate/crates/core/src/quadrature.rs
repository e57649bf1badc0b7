//! Adaptive Simpson quadrature used by the bound evaluators.
//!
//! Every integral is split into at least [`MIN_PANELS`] equal panels and each
//! panel is refined recursively until the local Richardson estimate meets its
//! share of the requested relative tolerance.

use crate::error::{Error, Result};

pub const DEFAULT_REL_TOL: f64 = 1e-8;
pub const MIN_PANELS: usize = 64;
const MAX_DEPTH: u32 = 40;

fn simpson(fa: f64, fm: f64, fb: f64, h: f64) -> f64 {
    h / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn refine<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    eps: f64,
    depth: u32,
) -> Result<f64> {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    if !flm.is_finite() || !frm.is_finite() {
        return Err(Error::Evaluation(format!(
            "integrand not finite near t = {lm}"
        )));
    }
    let left = simpson(fa, flm, fm, m - a);
    let right = simpson(fm, frm, fb, b - m);
    let delta = left + right - whole;
    if depth >= MAX_DEPTH || delta.abs() <= 15.0 * eps {
        return Ok(left + right + delta / 15.0);
    }
    Ok(refine(f, a, m, fa, flm, fm, left, 0.5 * eps, depth + 1)?
        + refine(f, m, b, fm, frm, fb, right, 0.5 * eps, depth + 1)?)
}

fn eval_checked<F: Fn(f64) -> f64>(f: &F, t: f64) -> Result<f64> {
    let v = f(t);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Evaluation(format!(
            "integrand not finite at t = {t} ({v})"
        )))
    }
}

/// Integrates `f` over a single interval with an absolute tolerance.
fn adaptive<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, eps: f64) -> Result<f64> {
    let fa = eval_checked(f, a)?;
    let fb = eval_checked(f, b)?;
    let fm = eval_checked(f, 0.5 * (a + b))?;
    let whole = simpson(fa, fm, fb, b - a);
    refine(f, a, b, fa, fm, fb, whole, eps, 0)
}

/// `∫_a^b f` to relative tolerance `rel_tol`; `b < a` flips the sign.
pub fn integrate_tol<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, rel_tol: f64) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    if b < a {
        return integrate_tol(f, b, a, rel_tol).map(|v| -v);
    }
    let h = (b - a) / MIN_PANELS as f64;
    let mut coarse = Vec::with_capacity(MIN_PANELS);
    let mut scale = 0.0;
    let mut left = eval_checked(&f, a)?;
    for j in 0..MIN_PANELS {
        let lo = a + j as f64 * h;
        let hi = if j + 1 == MIN_PANELS { b } else { lo + h };
        let mid = eval_checked(&f, 0.5 * (lo + hi))?;
        let right = eval_checked(&f, hi)?;
        let s = simpson(left, mid, right, hi - lo);
        scale += s.abs();
        coarse.push((lo, hi, left, mid, right, s));
        left = right;
    }
    let eps = rel_tol * scale.max(f64::MIN_POSITIVE) / MIN_PANELS as f64;
    let mut total = 0.0;
    for (lo, hi, fa, fm, fb, s) in coarse {
        total += refine(&f, lo, hi, fa, fm, fb, s, eps, 0)?;
    }
    Ok(total)
}

pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64) -> Result<f64> {
    integrate_tol(f, a, b, DEFAULT_REL_TOL)
}

/// Cumulative integral `P(s) = ∫_a^s f` on `[a, b]`.
///
/// Panel totals are cached at construction; evaluating `P(s)` only integrates
/// the partial panel containing `s`.
pub struct Primitive<F: Fn(f64) -> f64> {
    f: F,
    a: f64,
    h: f64,
    cumulative: Vec<f64>,
    eps: f64,
}

impl<F: Fn(f64) -> f64> Primitive<F> {
    pub fn new(f: F, a: f64, b: f64) -> Result<Self> {
        Self::with_tol(f, a, b, DEFAULT_REL_TOL)
    }

    pub fn with_tol(f: F, a: f64, b: f64, rel_tol: f64) -> Result<Self> {
        if !(b > a) {
            return Err(Error::Domain(format!(
                "primitive needs a < b, got [{a}, {b}]"
            )));
        }
        let h = (b - a) / MIN_PANELS as f64;
        let mut scale = 0.0;
        let mut panel_values = Vec::with_capacity(MIN_PANELS);
        for j in 0..MIN_PANELS {
            let lo = a + j as f64 * h;
            let hi = lo + h;
            let s = simpson(
                eval_checked(&f, lo)?,
                eval_checked(&f, 0.5 * (lo + hi))?,
                eval_checked(&f, hi)?,
                h,
            );
            scale += s.abs();
            panel_values.push(s);
        }
        let eps = rel_tol * scale.max(f64::MIN_POSITIVE) / MIN_PANELS as f64;
        let mut cumulative = vec![0.0; MIN_PANELS + 1];
        for j in 0..MIN_PANELS {
            let lo = a + j as f64 * h;
            cumulative[j + 1] = cumulative[j] + adaptive(&f, lo, lo + h, eps)?;
        }
        Ok(Self {
            f,
            a,
            h,
            cumulative,
            eps,
        })
    }

    pub fn total(&self) -> f64 {
        self.cumulative[MIN_PANELS]
    }

    pub fn eval(&self, s: f64) -> Result<f64> {
        let offset = (s - self.a) / self.h;
        if offset <= 0.0 {
            return Ok(0.0);
        }
        let j = (offset.floor() as usize).min(MIN_PANELS);
        if j == MIN_PANELS {
            return Ok(self.total());
        }
        let lo = self.a + j as f64 * self.h;
        if s <= lo {
            return Ok(self.cumulative[j]);
        }
        Ok(self.cumulative[j] + adaptive(&self.f, lo, s, self.eps)?)
    }

    /// `∫_s^t f`.
    pub fn between(&self, s: f64, t: f64) -> Result<f64> {
        Ok(self.eval(t)? - self.eval(s)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_is_exact() {
        let v = integrate(|x| 3.0 * x * x, 0.0, 2.0).unwrap();
        assert!((v - 8.0).abs() < 1e-12);
    }

    #[test]
    fn exponential_meets_relative_tolerance() {
        let v = integrate(f64::exp, 0.0, 3.0).unwrap();
        let exact = 3f64.exp() - 1.0;
        assert!(((v - exact) / exact).abs() < 1e-8);
    }

    #[test]
    fn reversed_limits_flip_sign() {
        let a = integrate(f64::sin, 0.0, 1.0).unwrap();
        let b = integrate(f64::sin, 1.0, 0.0).unwrap();
        assert_eq!(a, -b);
    }

    #[test]
    fn nan_integrand_is_an_error() {
        assert!(matches!(
            integrate(|x| if x > 0.5 { f64::NAN } else { 1.0 }, 0.0, 1.0),
            Err(Error::Evaluation(_))
        ));
    }

    #[test]
    fn primitive_matches_direct_integration() {
        let p = Primitive::new(|x: f64| x.cos(), 0.0, 2.0).unwrap();
        for &s in &[0.0, 0.013, 0.7, 1.99, 2.0] {
            assert!((p.eval(s).unwrap() - s.sin()).abs() < 1e-10, "s={s}");
        }
        assert!((p.between(0.5, 1.5).unwrap() - (1.5f64.sin() - 0.5f64.sin())).abs() < 1e-10);
    }
}
