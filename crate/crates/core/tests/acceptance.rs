//! Acceptance checks, one PASS/FAIL line per criterion. Exits nonzero if any
//! criterion fails.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use idsweep::circuits::{circuit_matrices, diode_waveforms};
use idsweep::config::{load_config, parse_config, LoadedConfig};
use idsweep::gronwall::{
    apriori_constants, gronwall_bound, gronwall_integral_bound, gronwall_like_bound, GronwallInput,
    GronwallLikeInput,
};
use idsweep::nidcs::recover_with;
use idsweep::oracle::volterra_reference;
use idsweep::sets::{Constraint, FixedSet};
use idsweep::solver::{convergence_study, solve, stability_probe, MemoryRule, SolveOptions};
use idsweep::{
    Horizon, KernelSpec, PerturbationSpec, ProblemSpec, SublevelSet, TranslatedFixedSet, Vector,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn sample_configs() -> Vec<(String, LoadedConfig)> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(configs_dir())
        .expect("configs directory")
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            let name = p.file_stem().unwrap().to_string_lossy().into_owned();
            let cfg = load_config(&p).unwrap_or_else(|e| panic!("{name}: {e}"));
            (name, cfg)
        })
        .collect()
}

fn config(name: &str) -> LoadedConfig {
    load_config(&configs_dir().join(format!("{name}.toml"))).unwrap()
}

fn v(xs: &[f64]) -> Vector {
    Vector::from_column_slice(xs)
}

fn opts(steps: usize, rule: MemoryRule) -> SolveOptions {
    SolveOptions::with_steps(steps)
        .memory(rule)
        .without_bounds()
}

fn err<E: std::fmt::Display>(what: &str) -> impl FnOnce(E) -> String + '_ {
    move |e| format!("{what}: {e}")
}

fn within(limit: Duration, started: Instant, what: &str) -> Result<(), String> {
    let took = started.elapsed();
    if took <= limit {
        Ok(())
    } else {
        Err(format!("{what} took {took:?}, limit {limit:?}"))
    }
}

// 1
fn feasibility() -> Check {
    let configs = sample_configs();
    if configs.len() < 6 {
        return Err(format!("only {} sample configs", configs.len()));
    }
    let mut worst = 0.0f64;
    for (name, cfg) in &configs {
        let t0 = Instant::now();
        let report =
            solve(&cfg.problem, &opts(1000, cfg.options.memory_rule)).map_err(err(name))?;
        within(Duration::from_secs(5), t0, name)?;
        if !(report.feasibility <= 1e-9) {
            return Err(format!("{name}: max distance {:.3e}", report.feasibility));
        }
        worst = worst.max(report.feasibility);
    }
    Ok(format!(
        "{} configs, max distance {worst:.2e}",
        configs.len()
    ))
}

// 2
fn closed_form() -> Check {
    let mut worst = 0.0f64;
    for x0 in [-1.0f64, 0.0, 0.5] {
        let text = format!(
            "x0 = [{x0:?}]\n[horizon]\nt_start = -1.0\nt_end = 1.0\n\
             [set]\nkind = \"translated\"\nbase = \"orthant\"\nshift = [\"t\"]\n"
        );
        let cfg = parse_config(&text).map_err(err("config"))?;
        let traj = solve(&cfg.problem, &opts(100, MemoryRule::LeftRectangle))
            .map_err(err("solve"))?
            .trajectory;
        for (t, x) in traj.grid.nodes().iter().zip(&traj.states) {
            worst = worst.max((x[0] - x0.max(*t)).abs());
        }
    }
    if worst <= 1e-10 {
        Ok(format!("sup error {worst:.2e}"))
    } else {
        Err(format!("sup error {worst:.3e} > 1e-10"))
    }
}

fn huge_ball(f1: PerturbationSpec, f2: KernelSpec, x0: f64) -> ProblemSpec {
    let set = TranslatedFixedSet::fixed(
        1,
        FixedSet::Ball {
            center: v(&[0.0]),
            radius: 1e6,
        },
    )
    .unwrap();
    ProblemSpec::new(
        Horizon::new(0.0, 1.0).unwrap(),
        Arc::new(set),
        f1,
        f2,
        v(&[x0]),
    )
    .unwrap()
}

// 3
fn interior_reduction() -> Check {
    let cfg = config("interior_volterra");
    let p = &cfg.problem;
    let traj = solve(p, &opts(2000, MemoryRule::Trapezoid))
        .map_err(err("solve"))?
        .trajectory;
    // f₁ = −x, f₂ = −x restated independently of the config
    let reference = volterra_reference(
        &PerturbationSpec::new(|_, x| -x),
        &KernelSpec::new(|_, _, x| -x),
        &v(&[1.0]),
        p.horizon,
        2000,
    )
    .map_err(err("reference"))?;
    let gap = traj.sup_distance(&reference).map_err(err("compare"))?;
    if !(gap <= 5e-3) {
        return Err(format!("Volterra gap {gap:.3e} > 5e-3"));
    }

    // −ẋ = ∫x, x(0) = 1: x = cos t. The analytic check validates the
    // reference integrator; the first-order solver's error is reported.
    let cos_err = |traj: &idsweep::Trajectory| {
        traj.grid
            .nodes()
            .iter()
            .zip(&traj.states)
            .map(|(t, x)| (x[0] - t.cos()).abs())
            .fold(0.0, f64::max)
    };
    let memory = KernelSpec::new(|_, _, x| x.clone());
    let reference = volterra_reference(
        &PerturbationSpec::zero(1),
        &memory,
        &v(&[1.0]),
        p.horizon,
        1000,
    )
    .map_err(err("cos reference"))?;
    let oracle_err = cos_err(&reference);
    let cos = huge_ball(PerturbationSpec::zero(1), memory, 1.0);
    let solver_err = cos_err(
        &solve(&cos, &opts(1000, MemoryRule::Trapezoid))
            .map_err(err("cos solve"))?
            .trajectory,
    );
    let detail =
        format!("Volterra gap {gap:.2e}, cos error {oracle_err:.2e} (solver {solver_err:.2e})");
    if oracle_err <= 1e-4 {
        Ok(detail)
    } else {
        Err(detail + " > 1e-4")
    }
}

// 4
fn convergence_order() -> Check {
    let cfg = config("interior_volterra");
    let mut out = Vec::new();
    for (rule, need) in [
        (MemoryRule::Trapezoid, 0.9),
        (MemoryRule::LeftRectangle, 0.45),
    ] {
        let study = convergence_study(&cfg.problem, &opts(125, rule), 5).map_err(err("study"))?;
        let order = study.order.ok_or("no fitted order")?;
        if !(order >= need) {
            return Err(format!("{rule}: order {order:.3} < {need}"));
        }
        out.push(format!("{rule} {order:.3}"));
    }
    Ok(format!("orders: {}", out.join(", ")))
}

// 5
fn cauchy() -> Check {
    let mut exact = Vec::new();
    let mut worst_rule_gap = 0.0f64;
    for (name, cfg) in sample_configs() {
        let study = convergence_study(&cfg.problem, &opts(250, cfg.options.memory_rule), 4)
            .map_err(err(&name))?;
        if study.gaps.len() < 4 || !study.is_cauchy() {
            return Err(format!("{name}: gaps {:?}", study.gaps));
        }
        if study.exact {
            exact.push(name.clone());
        }
        let left =
            solve(&cfg.problem, &opts(4000, MemoryRule::LeftRectangle)).map_err(err(&name))?;
        let trap = solve(&cfg.problem, &opts(4000, MemoryRule::Trapezoid)).map_err(err(&name))?;
        let d = left
            .trajectory
            .sup_distance(&trap.trajectory)
            .map_err(err(&name))?;
        if !(d <= 1e-3) {
            return Err(format!("{name}: left/trap gap {d:.3e} at n = 4000"));
        }
        worst_rule_gap = worst_rule_gap.max(d);
    }
    Ok(format!(
        "all gaps decreasing (exact: {}), left/trap gap {worst_rule_gap:.2e}",
        exact.join(" ")
    ))
}

// 6
fn velocity_bound() -> Check {
    let mut checked = Vec::new();
    let mut worst = 0.0f64;
    for (name, cfg) in sample_configs() {
        let p = &cfg.problem;
        let bounds = match apriori_constants(p) {
            Ok(b) if b.single_window => b,
            _ => continue,
        };
        let traj = solve(p, &opts(2000, cfg.options.memory_rule))
            .map_err(err(&name))?
            .trajectory;
        let g = &traj.grid;
        for k in 0..g.steps() {
            let (a, b) = (g.node(k), g.node(k + 1));
            let mut bound = 0.0f64;
            for t in [a, 0.5 * (a + b), b] {
                bound = bound.max(bounds.speed_bound(p, t).map_err(err(&name))?);
            }
            let ratio = traj.speed(k) / bound;
            if !(ratio <= 1.05) {
                return Err(format!(
                    "{name}: speed {:.4e} vs bound {bound:.4e} at t = {a}",
                    traj.speed(k)
                ));
            }
            worst = worst.max(ratio);
        }
        checked.push(name);
    }
    if checked.is_empty() {
        return Err("no single-window config".into());
    }
    Ok(format!("{}; max speed/bound {worst:.3}", checked.join(" ")))
}

/// Classical RK4 on `[t0, t1]`, recording every node.
fn rk4<const N: usize>(
    f: impl Fn(f64, &[f64; N]) -> [f64; N],
    y0: [f64; N],
    t0: f64,
    t1: f64,
    n: usize,
) -> Vec<(f64, [f64; N])> {
    let h = (t1 - t0) / n as f64;
    let axpy = |y: &[f64; N], k: &[f64; N], c: f64| -> [f64; N] {
        std::array::from_fn(|i| y[i] + c * k[i])
    };
    let mut out = Vec::with_capacity(n + 1);
    let mut y = y0;
    out.push((t0, y));
    for i in 0..n {
        let t = t0 + i as f64 * h;
        let k1 = f(t, &y);
        let k2 = f(t + h / 2.0, &axpy(&y, &k1, h / 2.0));
        let k3 = f(t + h / 2.0, &axpy(&y, &k2, h / 2.0));
        let k4 = f(t + h, &axpy(&y, &k3, h));
        y = std::array::from_fn(|j| y[j] + h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]));
        let t_next = if i + 1 == n {
            t1
        } else {
            t0 + (i + 1) as f64 * h
        };
        out.push((t_next, y));
    }
    out
}

/// `c0 + c1 (1 + sin(ω t + φ)) / 2`, nonnegative when `c0, c1 ≥ 0`.
fn random_coeff(
    rng: &mut ChaCha8Rng,
    scale: f64,
) -> impl Fn(f64) -> f64 + Send + Sync + Copy + 'static {
    let c0 = rng.gen_range(0.0..scale);
    let c1 = rng.gen_range(0.0..scale);
    let w = rng.gen_range(0.5..4.0);
    let phi = rng.gen_range(0.0..std::f64::consts::TAU);
    move |t: f64| c0 + c1 * (1.0 + (w * t + phi).sin()) / 2.0
}

const RK4_STEPS: usize = 4000;
const CHECK_EVERY: usize = 100;

fn dominated(what: &str, i: usize, t: f64, value: f64, bound: f64) -> Result<(), String> {
    if value <= bound * (1.0 + 1e-6) + 1e-12 {
        Ok(())
    } else {
        Err(format!(
            "{what} instance {i}: {value:.10e} > bound {bound:.10e} at t = {t}"
        ))
    }
}

// 7
fn gronwall_domination() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut tightest = [f64::INFINITY; 3];

    for i in 0..50 {
        let t1 = rng.gen_range(0.5..2.0);
        let h = Horizon::new(0.0, t1).unwrap();
        let a = random_coeff(&mut rng, 1.5);
        let b = random_coeff(&mut rng, 1.5);
        let alpha = rng.gen_range(0.0..0.8);
        let w0 = rng.gen_range(0.0..2.0);
        let inp = GronwallInput::new(h, a, b, alpha, w0).map_err(err("one-step input"))?;
        let path = rk4(
            |t, y| [(a(t) * y[0] + b(t) * y[0].max(0.0).powf(alpha)) / (1.0 - alpha)],
            [w0],
            0.0,
            t1,
            RK4_STEPS,
        );
        for (t, y) in path.iter().step_by(CHECK_EVERY) {
            let bound = gronwall_bound(&inp, *t).map_err(err("one-step bound"))?;
            dominated("one-step", i, *t, y[0], bound)?;
            if y[0] > 0.0 {
                tightest[0] = tightest[0].min(bound / y[0]);
            }
        }
    }

    for i in 0..50 {
        let t1 = rng.gen_range(0.5..2.0);
        let h = Horizon::new(0.0, t1).unwrap();
        let a = random_coeff(&mut rng, 2.0);
        let b1 = random_coeff(&mut rng, 1.5);
        let b2 = random_coeff(&mut rng, 1.5);
        let rho0 = rng.gen_range(0.0..2.0);
        let path = rk4(
            |t, y| [a(t) + b1(t) * y[0] + b2(t) * y[1], y[0]],
            [rho0, 0.0],
            0.0,
            t1,
            RK4_STEPS,
        );
        for (t, y) in path.iter().step_by(CHECK_EVERY) {
            let bound = gronwall_integral_bound(&h, &a, &b1, &b2, rho0, *t)
                .map_err(err("integral bound"))?;
            dominated("integral", i, *t, y[0], bound)?;
            if y[0] > 0.0 {
                tightest[1] = tightest[1].min(bound / y[0]);
            }
        }
    }

    for i in 0..50 {
        let t1 = rng.gen_range(0.5..2.0);
        let h = Horizon::new(0.0, t1).unwrap();
        let k1 = random_coeff(&mut rng, 2.0);
        let k2 = random_coeff(&mut rng, 2.0);
        let eps_fn = random_coeff(&mut rng, 1.0);
        let eps = 10f64.powf(rng.gen_range(-12.0..-2.0));
        let rho0 = rng.gen_range(0.0..1.0);
        let inp =
            GronwallLikeInput::new(h, k1, k2, eps_fn, eps, rho0).map_err(err("like input"))?;
        let path = rk4(
            |t, y| {
                let r = y[0].max(0.0).sqrt();
                [eps_fn(t) + eps + k1(t) * y[0] + k2(t) * r * y[1], r]
            },
            [rho0, 0.0],
            0.0,
            t1,
            RK4_STEPS,
        );
        for (t, y) in path.iter().step_by(CHECK_EVERY) {
            let bound = gronwall_like_bound(&inp, *t).map_err(err("like bound"))?;
            let root = y[0].max(0.0).sqrt();
            dominated("Gronwall-like", i, *t, root, bound)?;
            if root > 0.0 {
                tightest[2] = tightest[2].min(bound / root);
            }
        }
    }
    Ok(format!(
        "150 instances; min bound/solution {:.6} {:.3} {:.3}",
        tightest[0], tightest[1], tightest[2]
    ))
}

fn random_start(rng: &mut ChaCha8Rng, p: &ProblemSpec) -> Option<Vector> {
    let t0 = p.horizon.t_start;
    let y = Vector::from_fn(p.dim(), |i, _| p.x0[i] + rng.gen_range(-0.5..0.5));
    if p.set.distance(t0, &y) == 0.0 {
        return Some(y);
    }
    p.set.project(t0, &y, 1e-13).ok()
}

// 8
fn stability() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst = 0.0f64;
    let mut pairs = 0;
    for (name, cfg) in sample_configs() {
        let p = &cfg.problem;
        let o = opts(500, cfg.options.memory_rule);
        let mut done = 0;
        let mut tries = 0;
        while done < 20 {
            tries += 1;
            if tries > 2000 {
                return Err(format!("{name}: could not draw 20 feasible pairs"));
            }
            let (Some(a), Some(b)) = (random_start(&mut rng, p), random_start(&mut rng, p)) else {
                continue;
            };
            if (&a - &b).norm() < 1e-3 {
                continue;
            }
            let r = stability_probe(p, &o, &a, &b).map_err(err(&name))?;
            let cert = r
                .certificate
                .ok_or_else(|| format!("{name}: no certificate (Lipschitz data missing)"))?;
            if !(r.ratio <= cert * 1.01) {
                return Err(format!(
                    "{name}: ratio {:.4e} > certificate {cert:.4e}",
                    r.ratio
                ));
            }
            worst = worst.max(r.ratio / cert);
            done += 1;
        }
        pairs += done;
    }
    Ok(format!("{pairs} pairs; max ratio/certificate {worst:.3e}"))
}

// 9
fn complementarity() -> Check {
    let mut out = Vec::new();
    for name in ["nidcs_halfline", "parabola"] {
        let cfg = config(name);
        let set = cfg.sublevel.as_ref().ok_or("not a sublevel config")?;
        let rule = cfg.options.memory_rule;
        let traj = solve(&cfg.problem, &opts(1000, rule))
            .map_err(err(name))?
            .trajectory;
        let path = recover_with(set, &cfg.problem, &traj, rule).map_err(err(name))?;
        let (dual, primal, comp) = (
            path.min_dual(),
            path.max_primal(),
            path.max_complementarity(),
        );
        if !(dual >= 0.0 && primal <= 1e-6 && comp <= 1e-6) {
            return Err(format!(
                "{name}: min z {dual:.3e}, max g {primal:.3e}, max |<z,g>| {comp:.3e}"
            ));
        }
        if name == "nidcs_halfline" {
            let dev = path
                .z
                .iter()
                .map(|z| (z[0] - 1.0).abs())
                .fold(0.0, f64::max);
            if !(dev <= 1e-6) {
                return Err(format!("z = 1 case off by {dev:.3e}"));
            }
        }
        out.push(format!("{name} |<z,g>| {comp:.1e}"));
    }
    Ok(out.join(", "))
}

// 10
fn circuit() -> Check {
    let started = Instant::now();
    let cfg = config("circuit_default");
    let params = cfg.circuit.as_ref().ok_or("no circuit")?;
    let rule = cfg.options.memory_rule;
    let traj = solve(&cfg.problem, &opts(1000, rule))
        .map_err(err("default"))?
        .trajectory;
    let records = diode_waveforms(params, &cfg.problem, &traj, rule).map_err(err("waveforms"))?;
    let mut gap = 0.0f64;
    for r in &records {
        if !(r.x1 >= r.i_src - 1e-9 && r.x2 >= -1e-9) {
            return Err(format!("infeasible state at t = {}", r.t));
        }
        gap = gap.max(r.comp_gap1).max(r.comp_gap2);
    }
    if !(gap <= 1e-6) {
        return Err(format!("complementarity gap {gap:.3e}"));
    }

    let cfg = config("circuit_shifted");
    let params = cfg.circuit.as_ref().ok_or("no circuit")?;
    let traj = solve(&cfg.problem, &opts(2000, MemoryRule::Trapezoid))
        .map_err(err("shifted"))?
        .trajectory;
    let m = circuit_matrices(params);
    let (a2, forcing) = (m.a2.clone(), m.forcing.clone());
    let reference = volterra_reference(
        &PerturbationSpec::linear(m.a1.clone()),
        &KernelSpec::new(move |t, s, x| a2(t) * x + forcing(t, s)),
        &params.x0,
        params.horizon,
        2000,
    )
    .map_err(err("reference"))?;
    let d = traj.sup_distance(&reference).map_err(err("compare"))?;
    if !(d <= 1e-3) {
        return Err(format!("shifted source: oracle gap {d:.3e}"));
    }
    within(Duration::from_secs(5), started, "circuit checks")?;
    Ok(format!("max gap {gap:.1e}; shifted oracle gap {d:.2e}"))
}

// 11
fn prox_toolkit() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let half_plane = || Constraint::affine(v(&[-1.0, 0.0]), |_| 0.0);
    for _ in 0..200 {
        let gamma = if rng.gen_bool(0.2) {
            0.0
        } else {
            rng.gen_range(0.01..10.0)
        };
        let delta = rng.gen_range(0.01..10.0);
        let rho = if rng.gen_bool(0.2) {
            f64::INFINITY
        } else {
            rng.gen_range(0.01..10.0)
        };
        let set = SublevelSet::new(2, vec![half_plane()])
            .unwrap()
            .with_constants(gamma, delta, rho)
            .with_variation(|t| t.cbrt());
        let expect = if gamma == 0.0 {
            rho
        } else {
            rho.min(delta / gamma)
        };
        let r = set.prox_radius_sublevel().map_err(err("radius"))?;
        if r != expect {
            return Err(format!(
                "r({gamma}, {delta}, {rho}) = {r}, expected {expect}"
            ));
        }
        let (s, t) = (rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0));
        let got = set.variation_sublevel(s, t).map_err(err("variation"))?;
        let want = (t.cbrt() - s.cbrt()).abs() / delta;
        if got != want {
            return Err(format!("variation({s}, {t}) = {got}, expected {want}"));
        }
    }

    let cfg = config("parabola");
    let set = cfg
        .sublevel
        .as_ref()
        .ok_or("parabola is not a sublevel config")?;
    let r = cfg.problem.prox_radius;
    if r != 0.5 {
        return Err(format!("parabola radius {r}, expected 1/2"));
    }
    for t in [0.0, 0.001, 0.125, 0.3, 0.5, 1.0] {
        let got = set.variation_sublevel(0.0, t).map_err(err("variation"))?;
        let want = f64::cbrt(t);
        if (got - want).abs() > 4.0 * f64::EPSILON * want.max(1.0) {
            return Err(format!("parabola variation at {t}: {got} vs {want}"));
        }
    }
    Ok(
        "radius min{rho, delta/gamma} and variation w/delta exact on 200 draws; parabola r = 1/2"
            .into(),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Check); 11] = [
        ("feasibility invariant", feasibility),
        ("closed-form sweeping", closed_form),
        ("interior reduction", interior_reduction),
        ("convergence order", convergence_order),
        ("Cauchy gaps", cauchy),
        ("velocity bound", velocity_bound),
        ("Gronwall domination", gronwall_domination),
        ("stability certificate", stability),
        ("complementarity", complementarity),
        ("circuit", circuit),
        ("prox-regularity toolkit", prox_toolkit),
    ];
    let only: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !only.is_empty() && !only.contains(&n) {
            continue;
        }
        let started = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {n:>2} {name}: PASS ({detail}; {secs:.2}s)"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n:>2} {name}: FAIL ({detail}; {secs:.2}s)");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
