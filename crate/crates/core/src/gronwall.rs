//! Gronwall-type bound evaluators and the a priori constants `M`, `M̃` of the
//! sweeping process.

use std::sync::Arc;

use serde::Serialize;

use crate::error::{check_finite, Error, Result};
use crate::problem::{Horizon, ProblemSpec, ScalarFn};
use crate::quadrature::{integrate, Primitive};

/// Default `ϵ` for [`gronwall_like_bound`].
pub const DEFAULT_EPSILON: f64 = 1e-12;
/// Per-window β-mass must stay strictly below this.
pub const WINDOW_MASS: f64 = 0.25;
const MAX_WINDOWS: usize = 4096;
const REPORT_SAMPLES: usize = 11;

fn check_time(h: &Horizon, t: f64) -> Result<()> {
    if h.contains(t) {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "t = {t} outside [{}, {}]",
            h.t_start, h.t_end
        )))
    }
}

/// Data of `(1−α) w′ ≤ a w + b w^α`.
#[derive(Clone)]
pub struct GronwallInput {
    pub horizon: Horizon,
    pub a: ScalarFn,
    pub b: ScalarFn,
    pub alpha_exponent: f64,
    pub w0: f64,
}

impl GronwallInput {
    pub fn new(
        horizon: Horizon,
        a: impl Fn(f64) -> f64 + Send + Sync + 'static,
        b: impl Fn(f64) -> f64 + Send + Sync + 'static,
        alpha_exponent: f64,
        w0: f64,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&alpha_exponent) {
            return Err(Error::Domain(format!(
                "exponent must lie in [0, 1), got {alpha_exponent}"
            )));
        }
        if !(w0 >= 0.0) || !w0.is_finite() {
            return Err(Error::Domain(format!(
                "w0 must be finite and nonnegative, got {w0}"
            )));
        }
        Ok(Self {
            horizon,
            a: Arc::new(a),
            b: Arc::new(b),
            alpha_exponent,
            w0,
        })
    }
}

/// `[w0^{1−α} e^{∫a} + ∫ e^{∫_s^t a} b(s) ds]^{1/(1−α)}`.
pub fn gronwall_bound(inp: &GronwallInput, t: f64) -> Result<f64> {
    let h = &inp.horizon;
    check_time(h, t)?;
    let q = 1.0 - inp.alpha_exponent;
    let start = inp.w0.powf(q);
    if t == h.t_start {
        return Ok(inp.w0);
    }
    let a = Primitive::new(|s| (inp.a)(s), h.t_start, t)?;
    let total = a.total();
    let forcing = integrate(
        |s| {
            let b = (inp.b)(s);
            if b < 0.0 {
                return f64::NAN;
            }
            (total - a.eval(s).unwrap_or(f64::NAN)).exp() * b
        },
        h.t_start,
        t,
    )?;
    let inner = start * total.exp() + forcing;
    check_finite(inner.max(0.0).powf(1.0 / q), "Gronwall bound")
}

/// `ρ0 e^{∫(b+1)} + ∫ a(s) e^{∫_s^t (b+1)} ds` with `b = max{b₁, b₂}`, the
/// bound for `ρ′ ≤ a + b₁ρ + b₂∫ρ`.
pub fn gronwall_integral_bound(
    horizon: &Horizon,
    a: &dyn Fn(f64) -> f64,
    b1: &dyn Fn(f64) -> f64,
    b2: &dyn Fn(f64) -> f64,
    rho0: f64,
    t: f64,
) -> Result<f64> {
    check_time(horizon, t)?;
    if t == horizon.t_start {
        return Ok(rho0);
    }
    let growth = Primitive::new(|s| b1(s).max(b2(s)) + 1.0, horizon.t_start, t)?;
    let total = growth.total();
    let forcing = integrate(
        |s| a(s) * (total - growth.eval(s).unwrap_or(f64::NAN)).exp(),
        horizon.t_start,
        t,
    )?;
    check_finite(rho0 * total.exp() + forcing, "integral Gronwall bound")
}

/// Data of `ρ′ ≤ ε + ϵ + K₁ρ + K₂√ρ ∫√ρ`.
#[derive(Clone)]
pub struct GronwallLikeInput {
    pub horizon: Horizon,
    pub k1: ScalarFn,
    pub k2: ScalarFn,
    pub eps_fn: ScalarFn,
    pub eps_const: f64,
    pub rho0: f64,
}

impl GronwallLikeInput {
    pub fn new(
        horizon: Horizon,
        k1: impl Fn(f64) -> f64 + Send + Sync + 'static,
        k2: impl Fn(f64) -> f64 + Send + Sync + 'static,
        eps_fn: impl Fn(f64) -> f64 + Send + Sync + 'static,
        eps_const: f64,
        rho0: f64,
    ) -> Result<Self> {
        if !(eps_const > 0.0) {
            return Err(Error::Domain(format!(
                "epsilon must be positive, got {eps_const}"
            )));
        }
        if !(rho0 >= 0.0) {
            return Err(Error::Domain(format!(
                "rho0 must be nonnegative, got {rho0}"
            )));
        }
        Ok(Self {
            horizon,
            k1: Arc::new(k1),
            k2: Arc::new(k2),
            eps_fn: Arc::new(eps_fn),
            eps_const,
            rho0,
        })
    }
}

/// Bound on `√ρ(t)`: the four-term right-hand side with
/// `K = max{K₁/2, K₂/2}` and `λ(s) = √(∫_{T₀}^s ε + ϵ)`.
pub fn gronwall_like_bound(inp: &GronwallLikeInput, t: f64) -> Result<f64> {
    let h = &inp.horizon;
    check_time(h, t)?;
    let eps = inp.eps_const;
    let root_eps = eps.sqrt();
    if t == h.t_start {
        return Ok((inp.rho0 + eps).sqrt());
    }
    let k = |s: f64| 0.5 * (inp.k1)(s).max((inp.k2)(s));
    let growth = Primitive::new(|s| k(s) + 1.0, h.t_start, t)?;
    let forcing = Primitive::new(|s| (inp.eps_fn)(s), h.t_start, t)?;
    let total = growth.total();
    let e = |s: f64| (total - growth.eval(s).unwrap_or(f64::NAN)).exp();
    let lambda = |s: f64| (forcing.eval(s).unwrap_or(f64::NAN) + eps).sqrt();

    let term1 = (inp.rho0 + eps).sqrt() * total.exp();
    let term2 = 0.5 * root_eps * integrate(e, h.t_start, t)?;
    let term3 = 2.0 * (lambda(t) - root_eps * total.exp());
    let term4 = 2.0 * integrate(|s| (k(s) + 1.0) * e(s) * lambda(s), h.t_start, t)?;
    check_finite(term1 + term2 + term3 + term4, "Gronwall-like bound")
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Window {
    pub start: f64,
    pub end: f64,
    /// `∫[β₁ + ∫β₂]` over the window.
    pub mass: f64,
    /// `∫|υ̇|` over the window.
    pub variation: f64,
    /// `2(‖x_start‖ + ∫|υ̇| + ½)`, with `‖x_start‖` the previous window's `M`.
    pub m: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundSample {
    pub t: f64,
    pub normal_bound: f64,
    pub speed_bound: f64,
}

/// A priori constants of the process.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundsReport {
    pub horizon: Horizon,
    /// `∫_{T₀}^T [β₁ + ∫β₂]`, when `β₁, β₂` are known.
    pub beta_mass: Option<f64>,
    pub windows: Vec<Window>,
    pub single_window: bool,
    /// `M` of the last window (the largest).
    pub m: Option<f64>,
    pub m_tilde: Option<f64>,
    pub total_variation: f64,
    pub samples: Vec<BoundSample>,
}

fn beta2_inner(prob: &ProblemSpec, tau: f64) -> Result<f64> {
    if prob.f2.is_zero() || tau == prob.horizon.t_start {
        return Ok(0.0);
    }
    let beta2 = prob
        .f2
        .growth_beta2
        .as_ref()
        .ok_or_else(|| Error::DataMissing("beta2 (growth of f2) not supplied".into()))?;
    integrate(|s| beta2(tau, s), prob.horizon.t_start, tau)
}

fn g_inner(prob: &ProblemSpec, tau: f64) -> Result<f64> {
    if prob.f2.is_zero() || tau == prob.horizon.t_start {
        return Ok(0.0);
    }
    let affine =
        prob.f2.affine_growth.as_ref().ok_or_else(|| {
            Error::DataMissing("affine growth g, alpha of f2 not supplied".into())
        })?;
    integrate(|s| (affine.g)(tau, s), prob.horizon.t_start, tau)
}

fn beta1(prob: &ProblemSpec) -> Result<&ScalarFn> {
    prob.f1
        .growth_beta1
        .as_ref()
        .ok_or_else(|| Error::DataMissing("beta1 (growth of f1) not supplied".into()))
}

/// Smallest uniform split of the horizon whose windows all carry β-mass
/// strictly below 1/4.
fn split_windows(
    prob: &ProblemSpec,
    density: &dyn Fn(f64) -> f64,
) -> Result<(f64, Vec<(f64, f64, f64)>)> {
    let h = prob.horizon;
    let cumulative = Primitive::new(density, h.t_start, h.t_end)?;
    let mass = check_finite(cumulative.total(), "beta mass")?;
    let first = (4.0 * mass).floor() as usize + 1;
    for p in first..=MAX_WINDOWS.max(first) {
        let width = h.length() / p as f64;
        let mut windows = Vec::with_capacity(p);
        let mut ok = true;
        for i in 0..p {
            let a = h.t_start + i as f64 * width;
            let b = if i + 1 == p { h.t_end } else { a + width };
            let m = cumulative.between(a, b)?;
            if m >= WINDOW_MASS {
                ok = false;
                break;
            }
            windows.push((a, b, m));
        }
        if ok {
            return Ok((mass, windows));
        }
    }
    Err(Error::Evaluation(format!(
        "beta mass {mass} cannot be split into {MAX_WINDOWS} windows below 1/4"
    )))
}

/// Windows, `M` per window, `M̃`, and samples of the normal and speed bounds.
pub fn apriori_constants(prob: &ProblemSpec) -> Result<BoundsReport> {
    let h = prob.horizon;
    let b1 = beta1(prob)?.clone();
    let has_beta2 = prob.f2.is_zero() || prob.f2.growth_beta2.is_some();
    let has_affine = prob.f2.is_zero() || prob.f2.affine_growth.is_some();
    if !has_beta2 && !has_affine {
        return Err(Error::DataMissing(
            "f2 needs beta2 or the affine growth pair (g, alpha)".into(),
        ));
    }
    let total_variation = prob.set.total_variation(h.t_start, h.t_end)?;

    let mut report = BoundsReport {
        horizon: h,
        beta_mass: None,
        windows: Vec::new(),
        single_window: false,
        m: None,
        m_tilde: None,
        total_variation,
        samples: Vec::new(),
    };

    if has_beta2 {
        let density = |tau: f64| b1(tau) + beta2_inner(prob, tau).unwrap_or(f64::NAN);
        let (mass, splits) = split_windows(prob, &density)?;
        let mut x_norm = prob.x0.norm();
        for (a, b, m) in splits {
            let variation = prob.set.total_variation(a, b)?;
            let big_m = 2.0 * (x_norm + variation + 0.5);
            report.windows.push(Window {
                start: a,
                end: b,
                mass: m,
                variation,
                m: big_m,
            });
            x_norm = big_m;
        }
        report.beta_mass = Some(mass);
        report.single_window = report.windows.len() == 1;
        report.m = report.windows.last().map(|w| w.m);
    }

    if has_affine {
        let alpha = |t: f64| prob.f2.affine_growth.as_ref().map_or(0.0, |g| (g.alpha)(t));
        let exponent = integrate(|t| 2.0 * b1(t).max(alpha(t)) + 1.0, h.t_start, h.t_end)?;
        let forcing = integrate(
            |s| {
                let rate = prob.set.variation_rate(s).unwrap_or(f64::NAN);
                rate + 2.0 * b1(s) + 2.0 * g_inner(prob, s).unwrap_or(f64::NAN)
            },
            h.t_start,
            h.t_end,
        )?;
        let e = exponent.exp();
        report.m_tilde = Some(check_finite(prob.x0.norm() * e + e * forcing, "M tilde")?);
    }

    for j in 0..REPORT_SAMPLES {
        let t = h.t_start + h.length() * j as f64 / (REPORT_SAMPLES - 1) as f64;
        let t = if j + 1 == REPORT_SAMPLES { h.t_end } else { t };
        report.samples.push(BoundSample {
            t,
            normal_bound: report.normal_bound(prob, t)?,
            speed_bound: report.speed_bound(prob, t)?,
        });
    }
    Ok(report)
}

impl BoundsReport {
    fn window_m(&self, t: f64) -> Option<f64> {
        self.windows
            .iter()
            .find(|w| t <= w.end)
            .or(self.windows.last())
            .map(|w| w.m)
    }

    /// Pieces `(|υ̇|, β₁-part, memory part)` of both bounds at `t`, each with
    /// its `M`-based and `M̃`-based variant.
    fn parts(&self, prob: &ProblemSpec, t: f64) -> Result<(f64, Option<f64>, Option<f64>)> {
        check_time(&self.horizon, t)?;
        let rate = prob.set.variation_rate(t)?;
        let b1 = beta1(prob)?(t);
        let with_m = match self.window_m(t) {
            Some(m) => Some((1.0 + m) * (b1 + beta2_inner(prob, t)?)),
            None => None,
        };
        let with_m_tilde = match self.m_tilde {
            Some(mt) => {
                let alpha = prob.f2.affine_growth.as_ref().map_or(0.0, |g| (g.alpha)(t));
                Some((1.0 + mt) * b1 + g_inner(prob, t)? + self.horizon.length() * alpha * mt)
            }
            None => None,
        };
        Ok((rate, with_m, with_m_tilde))
    }

    /// Bound on `‖ẋ + f₁ + ∫f₂‖`, the smaller of the `M` and `M̃` variants.
    pub fn normal_bound(&self, prob: &ProblemSpec, t: f64) -> Result<f64> {
        let (rate, a, b) = self.parts(prob, t)?;
        let forcing = a.unwrap_or(f64::INFINITY).min(b.unwrap_or(f64::INFINITY));
        Ok(rate + forcing)
    }

    /// Bound on `‖ẋ(t)‖`: the normal bound plus `‖f₁‖ + ∫‖f₂‖`, which obey the
    /// same forcing estimate.
    pub fn speed_bound(&self, prob: &ProblemSpec, t: f64) -> Result<f64> {
        let (rate, a, b) = self.parts(prob, t)?;
        let forcing = a.unwrap_or(f64::INFINITY).min(b.unwrap_or(f64::INFINITY));
        Ok(rate + 2.0 * forcing)
    }
}
