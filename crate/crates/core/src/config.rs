//! TOML problem descriptions.
//!
//! ```toml
//! x0 = [0.0]
//!
//! [horizon]
//! t_start = 0.0
//! t_end = 1.0
//!
//! [set]
//! kind = "translated"
//! base = "orthant"
//! shift = ["t"]
//!
//! [solve]
//! steps = 1000
//! ```
//!
//! Function-valued fields are expressions (see [`crate::expr`]) or plain
//! numbers. Variables: `t` and `x1..xd` (plus `x` when `d = 1`) for `f1` and
//! the constraints, `t, s, x1..xd` for `f2`, `s, x1..xd` for `psi`, `t, s` for
//! `beta2` and `g`, `eta, t` for Lipschitz moduli.

use std::path::Path;
use std::sync::Arc;

use serde::Deserialize;

use crate::circuits::{build_circuit_problem, CircuitParams};
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::nidcs::{compile, NidcsSpec};
use crate::problem::{Horizon, KernelSpec, Matrix, PerturbationSpec, ProblemSpec, Vector};
use crate::sets::{Constraint, FixedSet, SublevelSet, TranslatedFixedSet, VariationModulus};
use crate::solver::{MemoryRule, Refine, SolveOptions};

#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
pub enum Scalar {
    Num(f64),
    Text(String),
}

impl Scalar {
    fn parse(&self, vars: &[&str], what: &str) -> Result<Expr> {
        match self {
            Scalar::Num(v) => Ok(Expr::Num(*v)),
            Scalar::Text(s) => {
                Expr::parse(s, vars).map_err(|e| Error::Parse(format!("{what}: {e}")))
            }
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HorizonSection {
    pub t_start: f64,
    pub t_end: f64,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SetSection {
    pub kind: String,
    pub base: Option<String>,
    pub lower: Option<Vec<f64>>,
    pub upper: Option<Vec<f64>>,
    pub center: Option<Vec<f64>>,
    pub radius: Option<f64>,
    pub normal: Option<Vec<f64>>,
    pub offset: Option<f64>,
    pub a: Option<Vec<Vec<f64>>>,
    pub b: Option<Vec<f64>>,
    pub shift: Option<Vec<Scalar>>,
    pub shift_speed: Option<Scalar>,
    pub constraints: Option<Vec<Scalar>>,
    pub gradients: Option<Vec<Vec<Scalar>>>,
    pub gamma: Option<f64>,
    pub delta: Option<f64>,
    pub rho: Option<f64>,
    pub variation: Option<Scalar>,
    pub witness: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct F1Section {
    pub expr: Option<Vec<Scalar>>,
    pub matrix: Option<Vec<Vec<f64>>>,
    pub beta1: Option<Scalar>,
    pub lipschitz: Option<Scalar>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct F2Section {
    pub expr: Option<Vec<Scalar>>,
    pub beta2: Option<Scalar>,
    pub g: Option<Scalar>,
    pub alpha: Option<Scalar>,
    pub lipschitz: Option<Scalar>,
    pub phi: Option<Vec<Vec<Scalar>>>,
    pub psi: Option<Vec<Scalar>>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveSection {
    pub steps: Option<usize>,
    pub memory: Option<String>,
    pub projection_tol: Option<f64>,
    pub refine_target: Option<f64>,
    pub max_doublings: Option<usize>,
    pub bounds: Option<bool>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CircuitSection {
    pub r1: f64,
    pub r2: f64,
    pub l1: f64,
    pub l2: f64,
    pub c1: Scalar,
    pub c2: Scalar,
    pub c3: Scalar,
    pub source: Scalar,
    pub source_speed: Option<Scalar>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub x0: Vec<f64>,
    pub horizon: HorizonSection,
    pub set: Option<SetSection>,
    #[serde(default)]
    pub f1: F1Section,
    pub f2: Option<F2Section>,
    #[serde(default)]
    pub solve: SolveSection,
    pub circuit: Option<CircuitSection>,
}

/// A validated problem with its solver options.
#[derive(Clone, Debug)]
pub struct LoadedConfig {
    pub problem: ProblemSpec,
    /// Inequality description; multipliers are recovered when present.
    pub sublevel: Option<SublevelSet>,
    pub circuit: Option<CircuitParams>,
    pub options: SolveOptions,
    /// `bounds = true` was set explicitly: missing growth data is an error.
    pub bounds_required: bool,
}

fn state_vars(d: usize, prefix: &[&str]) -> Vec<String> {
    let mut v: Vec<String> = prefix.iter().map(|s| s.to_string()).collect();
    v.extend((1..=d).map(|i| format!("x{i}")));
    if d == 1 {
        v.push("x".into());
    }
    v
}

/// Slot array `prefix ++ x (++ x₁ again when d = 1)`.
fn slots(prefix: &[f64], x: &Vector) -> Vec<f64> {
    let mut v = Vec::with_capacity(prefix.len() + x.len() + 1);
    v.extend_from_slice(prefix);
    v.extend(x.iter().copied());
    if x.len() == 1 {
        v.push(x[0]);
    }
    v
}

fn parse_all(items: &[Scalar], vars: &[String], what: &str) -> Result<Vec<Expr>> {
    let names: Vec<&str> = vars.iter().map(String::as_str).collect();
    items
        .iter()
        .enumerate()
        .map(|(i, s)| s.parse(&names, &format!("{what}[{}]", i + 1)))
        .collect()
}

fn parse_one(item: &Scalar, vars: &[&str], what: &str) -> Result<Expr> {
    item.parse(vars, what)
}

fn time_fn(e: Expr) -> impl Fn(f64) -> f64 + Send + Sync + Clone + 'static {
    let e = Arc::new(e);
    move |t| e.eval(&[t])
}

fn two_fn(e: Expr) -> impl Fn(f64, f64) -> f64 + Send + Sync + Clone + 'static {
    let e = Arc::new(e);
    move |a, b| e.eval(&[a, b])
}

fn vec_of(v: &[f64]) -> Vector {
    Vector::from_column_slice(v)
}

fn matrix_of(rows: &[Vec<f64>], what: &str) -> Result<Matrix> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || c == 0 || rows.iter().any(|row| row.len() != c) {
        return Err(Error::Domain(format!(
            "{what} must be a nonempty rectangular matrix"
        )));
    }
    Ok(Matrix::from_fn(r, c, |i, j| rows[i][j]))
}

fn check_len(what: &str, got: usize, d: usize) -> Result<()> {
    if got == d {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "{what} has {got} entries, expected {d}"
        )))
    }
}

fn base_set(s: &SetSection, d: usize) -> Result<FixedSet> {
    let need = |name: &str| Error::Domain(format!("set base needs `{name}`"));
    let base = s.base.as_deref().ok_or_else(|| need("base"))?;
    Ok(match base {
        "orthant" => FixedSet::Orthant,
        "box" => FixedSet::Box {
            lower: vec_of(s.lower.as_deref().ok_or_else(|| need("lower"))?),
            upper: vec_of(s.upper.as_deref().ok_or_else(|| need("upper"))?),
        },
        "ball" => FixedSet::Ball {
            center: s.center.as_deref().map_or_else(|| Vector::zeros(d), vec_of),
            radius: s.radius.ok_or_else(|| need("radius"))?,
        },
        "halfspace" => FixedSet::HalfSpace {
            normal: vec_of(s.normal.as_deref().ok_or_else(|| need("normal"))?),
            offset: s.offset.ok_or_else(|| need("offset"))?,
        },
        "polyhedron" => FixedSet::Polyhedron {
            a: matrix_of(s.a.as_deref().ok_or_else(|| need("a"))?, "set.a")?,
            b: vec_of(s.b.as_deref().ok_or_else(|| need("b"))?),
        },
        other => return Err(Error::Parse(format!("unknown set base `{other}`"))),
    })
}

fn translated_set(s: &SetSection, d: usize) -> Result<TranslatedFixedSet> {
    let base = base_set(s, d)?;
    let Some(shift) = &s.shift else {
        return TranslatedFixedSet::fixed(d, base);
    };
    check_len("set.shift", shift.len(), d)?;
    let exprs = parse_all(shift, &["t".to_string()], "set.shift")?;
    let modulus = match &s.shift_speed {
        Some(speed) => VariationModulus::Speed(Arc::new(time_fn(parse_one(
            speed,
            &["t"],
            "set.shift_speed",
        )?))),
        None if exprs.iter().all(|e| !e.depends_on(0)) => VariationModulus::Static,
        None => {
            let rates: Vec<Expr> = exprs.iter().map(|e| e.derivative(0)).collect();
            VariationModulus::Speed(Arc::new(move |t| {
                rates
                    .iter()
                    .map(|r| r.eval(&[t]).powi(2))
                    .sum::<f64>()
                    .sqrt()
            }))
        }
    };
    let exprs = Arc::new(exprs);
    TranslatedFixedSet::new(
        d,
        base,
        move |t| Vector::from_iterator(exprs.len(), exprs.iter().map(|e| e.eval(&[t]))),
        modulus,
    )
}

fn sublevel_set(s: &SetSection, d: usize) -> Result<SublevelSet> {
    let cons = s
        .constraints
        .as_ref()
        .ok_or_else(|| Error::Domain("sublevel set needs `constraints`".into()))?;
    let vars = state_vars(d, &["t"]);
    let values = parse_all(cons, &vars, "set.constraints")?;
    let gradients: Vec<Vec<Expr>> = match &s.gradients {
        Some(grads) => {
            check_len("set.gradients", grads.len(), values.len())?;
            grads
                .iter()
                .enumerate()
                .map(|(i, row)| {
                    check_len(&format!("set.gradients[{}]", i + 1), row.len(), d)?;
                    parse_all(row, &vars, "set.gradients")
                })
                .collect::<Result<_>>()?
        }
        None => values
            .iter()
            .map(|g| {
                (1..=d)
                    .map(|i| {
                        let dg = g.derivative(i);
                        if d == 1 {
                            // the alias `x` sits in slot d + 1
                            crate::expr::Expr::Add(Box::new(dg), Box::new(g.derivative(d + 1)))
                        } else {
                            dg
                        }
                    })
                    .collect()
            })
            .collect(),
    };
    let constraints = values
        .into_iter()
        .zip(gradients)
        .map(|(g, grad)| {
            let grad = Arc::new(grad);
            Constraint::new(
                move |t, x| g.eval(&slots(&[t], x)),
                move |t, x| {
                    let v = slots(&[t], x);
                    Vector::from_iterator(grad.len(), grad.iter().map(|e| e.eval(&v)))
                },
            )
        })
        .collect();
    let mut set = SublevelSet::new(d, constraints)?;
    set.gamma = s.gamma;
    set.delta = s.delta;
    set.rho = s.rho;
    if let Some(w) = &s.witness {
        check_len("set.witness", w.len(), d)?;
        set.witness = Some(vec_of(w));
    }
    if let Some(w) = &s.variation {
        let w = parse_one(w, &["t"], "set.variation")?;
        let rate = w.derivative(0);
        set = set
            .with_variation(time_fn(w))
            .with_variation_rate(time_fn(rate));
    }
    Ok(set)
}

fn perturbation(f: &F1Section, d: usize) -> Result<PerturbationSpec> {
    let vars = state_vars(d, &["t"]);
    let mut spec = match (&f.expr, &f.matrix) {
        (Some(_), Some(_)) => {
            return Err(Error::Domain(
                "f1 takes either `expr` or `matrix`, not both".into(),
            ))
        }
        (None, Some(m)) => {
            let a = matrix_of(m, "f1.matrix")?;
            if a.nrows() != d || a.ncols() != d {
                return Err(Error::Domain(format!("f1.matrix must be {d}x{d}")));
            }
            PerturbationSpec::linear(a)
        }
        (Some(exprs), None) => {
            check_len("f1.expr", exprs.len(), d)?;
            let exprs = Arc::new(parse_all(exprs, &vars, "f1.expr")?);
            PerturbationSpec::new(move |t, x| {
                let v = slots(&[t], x);
                Vector::from_iterator(exprs.len(), exprs.iter().map(|e| e.eval(&v)))
            })
        }
        (None, None) => PerturbationSpec::zero(d),
    };
    if let Some(b) = &f.beta1 {
        spec = spec.with_growth(time_fn(parse_one(b, &["t"], "f1.beta1")?));
    }
    if let Some(l) = &f.lipschitz {
        spec = spec.with_lipschitz(two_fn(parse_one(l, &["eta", "t"], "f1.lipschitz")?));
    }
    Ok(spec)
}

fn kernel(f: &F2Section, d: usize) -> Result<KernelSpec> {
    let separable = match (&f.phi, &f.psi) {
        (Some(phi), Some(psi)) => {
            check_len("f2.phi rows", phi.len(), d)?;
            let q = psi.len();
            let entries: Vec<Expr> = phi
                .iter()
                .enumerate()
                .map(|(i, row)| {
                    check_len(&format!("f2.phi[{}]", i + 1), row.len(), q)?;
                    parse_all(row, &["t".to_string()], "f2.phi")
                })
                .collect::<Result<Vec<_>>>()?
                .into_iter()
                .flatten()
                .collect();
            let psi = Arc::new(parse_all(psi, &state_vars(d, &["s"]), "f2.psi")?);
            let entries = Arc::new(entries);
            Some((
                move |t: f64| Matrix::from_fn(d, q, |i, j| entries[i * q + j].eval(&[t])),
                move |s: f64, x: &Vector| {
                    let v = slots(&[s], x);
                    Vector::from_iterator(psi.len(), psi.iter().map(|e| e.eval(&v)))
                },
            ))
        }
        (None, None) => None,
        _ => return Err(Error::Domain("f2 needs both `phi` and `psi`".into())),
    };
    let mut spec = match (&f.expr, separable) {
        (Some(exprs), sep) => {
            check_len("f2.expr", exprs.len(), d)?;
            let exprs = Arc::new(parse_all(exprs, &state_vars(d, &["t", "s"]), "f2.expr")?);
            let k = KernelSpec::new(move |t, s, x| {
                let v = slots(&[t, s], x);
                Vector::from_iterator(exprs.len(), exprs.iter().map(|e| e.eval(&v)))
            });
            match sep {
                Some((phi, psi)) => k.with_separable(phi, psi),
                None => k,
            }
        }
        (None, Some((phi, psi))) => KernelSpec::separable(phi, psi),
        (None, None) => return Err(Error::Domain("f2 needs `expr` or `phi`/`psi`".into())),
    };
    if let Some(b) = &f.beta2 {
        spec = spec.with_growth(two_fn(parse_one(b, &["t", "s"], "f2.beta2")?));
    }
    match (&f.g, &f.alpha) {
        (Some(g), Some(alpha)) => {
            spec = spec.with_affine_growth(
                two_fn(parse_one(g, &["t", "s"], "f2.g")?),
                time_fn(parse_one(alpha, &["t"], "f2.alpha")?),
            );
        }
        (None, None) => {}
        _ => {
            return Err(Error::Domain(
                "f2 affine growth needs both `g` and `alpha`".into(),
            ))
        }
    }
    if let Some(l) = &f.lipschitz {
        spec = spec.with_lipschitz(two_fn(parse_one(l, &["eta", "t"], "f2.lipschitz")?));
    }
    Ok(spec)
}

fn options(s: &SolveSection) -> Result<SolveOptions> {
    let mut o = SolveOptions::default();
    if let Some(n) = s.steps {
        o.steps = n;
    }
    if let Some(m) = &s.memory {
        o.memory_rule = m.parse::<MemoryRule>()?;
    }
    if let Some(tol) = s.projection_tol {
        o.projection_tol = tol;
    }
    if let Some(target) = s.refine_target {
        o.refine = Some(Refine {
            target,
            max_doublings: s.max_doublings.unwrap_or(6),
        });
    }
    if let Some(b) = s.bounds {
        o.bounds = b;
    }
    Ok(o)
}

fn circuit_params(c: &CircuitSection, horizon: Horizon, x0: Vector) -> Result<CircuitParams> {
    let t = &["t"];
    let source = parse_one(&c.source, t, "circuit.source")?;
    let speed = match &c.source_speed {
        Some(s) => parse_one(s, t, "circuit.source_speed")?,
        None => source.derivative(0),
    };
    let speed = time_fn(speed);
    Ok(CircuitParams {
        horizon,
        r1: c.r1,
        r2: c.r2,
        l1: c.l1,
        l2: c.l2,
        c1: Arc::new(time_fn(parse_one(&c.c1, t, "circuit.c1")?)),
        c2: Arc::new(time_fn(parse_one(&c.c2, t, "circuit.c2")?)),
        c3: Arc::new(time_fn(parse_one(&c.c3, t, "circuit.c3")?)),
        source: Arc::new(time_fn(source)),
        source_speed: Some(Arc::new(move |t| speed(t).abs())),
        x0,
    })
}

impl ConfigFile {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(e.message().to_string()))
    }

    pub fn build(&self) -> Result<LoadedConfig> {
        let horizon = Horizon::new(self.horizon.t_start, self.horizon.t_end)?;
        let d = self.x0.len();
        if d == 0 {
            return Err(Error::Domain("x0 must be nonempty".into()));
        }
        let x0 = vec_of(&self.x0);
        let options = options(&self.solve)?;
        let bounds_required = self.solve.bounds == Some(true);

        if let Some(c) = &self.circuit {
            if self.set.is_some()
                || self.f2.is_some()
                || self.f1.expr.is_some()
                || self.f1.matrix.is_some()
            {
                return Err(Error::Domain(
                    "a circuit config builds its own set, f1 and f2; remove those sections".into(),
                ));
            }
            let params = circuit_params(c, horizon, x0)?;
            let problem = build_circuit_problem(&params)?;
            return Ok(LoadedConfig {
                problem,
                sublevel: None,
                circuit: Some(params),
                options,
                bounds_required,
            });
        }

        let set = self
            .set
            .as_ref()
            .ok_or_else(|| Error::Domain("config needs a [set] or a [circuit] section".into()))?;
        let f1 = perturbation(&self.f1, d)?;
        let f2 = match &self.f2 {
            Some(f) => kernel(f, d)?,
            None => KernelSpec::zero(d),
        };
        match set.kind.as_str() {
            "translated" => {
                let set = translated_set(set, d)?;
                let problem = ProblemSpec::new(horizon, Arc::new(set), f1, f2, x0)?;
                Ok(LoadedConfig {
                    problem,
                    sublevel: None,
                    circuit: None,
                    options,
                    bounds_required,
                })
            }
            "sublevel" => {
                let set = sublevel_set(set, d)?;
                let spec = NidcsSpec {
                    horizon,
                    f1,
                    f2,
                    set: set.clone(),
                    x0,
                };
                let problem = compile(&spec)?;
                Ok(LoadedConfig {
                    problem,
                    sublevel: Some(set),
                    circuit: None,
                    options,
                    bounds_required,
                })
            }
            other => Err(Error::Parse(format!(
                "unknown set kind `{other}` (expected translated or sublevel)"
            ))),
        }
    }
}

pub fn parse_config(text: &str) -> Result<LoadedConfig> {
    ConfigFile::from_toml(text)?.build()
}

pub fn load_config(path: &Path) -> Result<LoadedConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Parse(format!("cannot read {}: {e}", path.display())))?;
    parse_config(&text)
}
