use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use idsweep::circuits::diode_waveforms;
use idsweep::config::{load_config, LoadedConfig};
use idsweep::gronwall::{apriori_constants, BoundsReport};
use idsweep::nidcs::recover_with;
use idsweep::solver::{convergence_study, solve, MemoryRule};
use idsweep::Error;
use serde_json::json;

#[derive(Parser)]
#[command(
    name = "idsweep",
    version,
    about = "Catching-up solver for integro-differential sweeping processes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a problem and write the trajectory CSV plus a JSON report.
    Solve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        /// left | trap
        #[arg(long)]
        memory: Option<MemoryRule>,
    },
    /// Solve at n, 2n, ..., 2^K n and report the gaps between levels.
    Converge {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        levels: usize,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        memory: Option<MemoryRule>,
    },
    /// Solve a circuit config and write the diode waveforms.
    Circuit {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Print the a priori bound constants.
    Bounds {
        #[arg(long)]
        config: PathBuf,
    },
}

enum Failure {
    Lib(Error),
    Io(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn io<E: Display>(what: &Path) -> impl FnOnce(E) -> Failure + '_ {
    move |e| Failure::Io(format!("{}: {e}", what.display()))
}

/// 17 significant digits; `-0` prints as `0`.
fn num(v: f64) -> String {
    format!("{:.16e}", v + 0.0)
}

/// 6 significant digits, for human-readable tables.
fn short(v: f64) -> String {
    format!("{v:.5e}")
}

fn load(
    path: &Path,
    steps: Option<usize>,
    memory: Option<MemoryRule>,
) -> Result<LoadedConfig, Failure> {
    let mut cfg = load_config(path)?;
    if let Some(n) = steps {
        cfg.options.steps = n;
    }
    if let Some(m) = memory {
        cfg.options.memory_rule = m;
    }
    Ok(cfg)
}

fn report_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".report.json");
    PathBuf::from(s)
}

fn cmd_solve(
    config: &Path,
    steps: Option<usize>,
    out: &Path,
    memory: Option<MemoryRule>,
) -> Result<(), Failure> {
    let cfg = load(config, steps, memory)?;
    if cfg.bounds_required {
        apriori_constants(&cfg.problem)?;
    }
    let report = solve(&cfg.problem, &cfg.options)?;
    let traj = &report.trajectory;
    let multipliers = match &cfg.sublevel {
        Some(set) => Some(recover_with(
            set,
            &cfg.problem,
            traj,
            cfg.options.memory_rule,
        )?),
        None => None,
    };

    let d = traj.dim();
    let mut header = vec!["t".to_string()];
    header.extend((1..=d).map(|i| format!("x_{i}")));
    header.push("dist".into());
    header.push("speed".into());
    if let Some(p) = &multipliers {
        header.extend((1..=p.z[0].len()).map(|i| format!("z_{i}")));
    }
    let mut w = csv::Writer::from_path(out).map_err(io(out))?;
    w.write_record(&header).map_err(io(out))?;
    let n = traj.grid.steps();
    for (k, (&t, x)) in traj.grid.nodes().iter().zip(&traj.states).enumerate() {
        let mut row = vec![num(t)];
        row.extend(x.iter().map(|v| num(*v)));
        row.push(num(cfg.problem.set.distance(t, x)));
        row.push(num(traj.speed(k.min(n - 1))));
        if let Some(p) = &multipliers {
            row.extend(p.z[k].iter().map(|v| num(*v)));
        }
        w.write_record(&row).map_err(io(out))?;
    }
    w.flush().map_err(io(out))?;

    let rp = report_path(out);
    let doc = json!({
        "config": config.display().to_string(),
        "solve": report,
        "multipliers": multipliers.as_ref().map(|p| json!({
            "max_complementarity": p.max_complementarity(),
            "max_primal": p.max_primal(),
            "min_dual": p.min_dual(),
            "degenerate_nodes": p.degenerate.iter().filter(|d| **d).count(),
        })),
    });
    let text = serde_json::to_string_pretty(&doc).map_err(io(&rp))?;
    std::fs::write(&rp, text + "\n").map_err(io(&rp))?;

    println!("steps       {}", report.steps);
    println!("memory      {}", report.memory_rule);
    println!("feasibility {}", short(report.feasibility));
    match report.velocity_margin {
        Some(m) => println!("v margin    {}", short(m)),
        None => println!(
            "v margin    unavailable ({})",
            report.bounds_unavailable.as_deref().unwrap_or("no bounds")
        ),
    }
    println!("wrote {} and {}", out.display(), rp.display());
    Ok(())
}

fn cmd_converge(
    config: &Path,
    levels: usize,
    steps: Option<usize>,
    memory: Option<MemoryRule>,
) -> Result<(), Failure> {
    let cfg = load(config, steps, memory)?;
    let study = convergence_study(&cfg.problem, &cfg.options, levels)?;
    println!("{:>10}  {:>14}", "n", "gap");
    for (n, gap) in study.steps.iter().zip(&study.gaps) {
        println!("{n:>10}  {:>14}", short(*gap));
    }
    if study.exact {
        println!("order exact");
    } else {
        match study.order {
            Some(p) => println!("order {}", short(p)),
            None => println!("order undetermined"),
        }
    }
    println!("cauchy {}", study.is_cauchy());
    Ok(())
}

fn cmd_circuit(config: &Path, out: &Path, steps: Option<usize>) -> Result<(), Failure> {
    let cfg = load(config, steps, None)?;
    let params = cfg.circuit.as_ref().ok_or_else(|| {
        Error::InvalidCircuit(format!("{} has no [circuit] section", config.display()))
    })?;
    let opts = cfg.options.clone().without_bounds();
    let report = solve(&cfg.problem, &opts)?;
    let records = diode_waveforms(params, &cfg.problem, &report.trajectory, opts.memory_rule)?;

    let mut w = csv::Writer::from_path(out).map_err(io(out))?;
    w.write_record([
        "t",
        "x1",
        "x2",
        "i_src",
        "iD1",
        "iD2",
        "vD1",
        "vD2",
        "comp_gap1",
        "comp_gap2",
    ])
    .map_err(io(out))?;
    let mut worst_gap = 0.0f64;
    for r in &records {
        worst_gap = worst_gap.max(r.comp_gap1).max(r.comp_gap2);
        let row = [
            r.t,
            r.x1,
            r.x2,
            r.i_src,
            r.i_d1,
            r.i_d2,
            r.v_d1,
            r.v_d2,
            r.comp_gap1,
            r.comp_gap2,
        ];
        w.write_record(row.iter().map(|v| num(*v)))
            .map_err(io(out))?;
    }
    w.flush().map_err(io(out))?;
    println!("steps       {}", report.steps);
    println!("feasibility {}", short(report.feasibility));
    println!("max gap     {}", short(worst_gap));
    println!("wrote {}", out.display());
    Ok(())
}

fn print_bounds(b: &BoundsReport) {
    let opt = |v: Option<f64>| v.map_or("n/a".to_string(), short);
    println!(
        "horizon         [{}, {}]",
        b.horizon.t_start, b.horizon.t_end
    );
    println!("beta mass       {}", opt(b.beta_mass));
    println!("total variation {}", short(b.total_variation));
    println!("M               {}", opt(b.m));
    println!("M~              {}", opt(b.m_tilde));
    println!("single window   {}", b.single_window);
    if !b.windows.is_empty() {
        println!(
            "{:>12} {:>12} {:>12} {:>12} {:>12}",
            "start", "end", "mass", "variation", "M"
        );
        for w in &b.windows {
            println!(
                "{:>12} {:>12} {:>12} {:>12} {:>12}",
                short(w.start),
                short(w.end),
                short(w.mass),
                short(w.variation),
                short(w.m)
            );
        }
    }
}

fn cmd_bounds(config: &Path) -> Result<(), Failure> {
    let cfg = load(config, None, None)?;
    let b = apriori_constants(&cfg.problem)?;
    print_bounds(&b);
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Solve {
            config,
            steps,
            out,
            memory,
        } => cmd_solve(config, *steps, out, *memory),
        Command::Converge {
            config,
            levels,
            steps,
            memory,
        } => cmd_converge(config, *levels, *steps, *memory),
        Command::Circuit { config, out, steps } => cmd_circuit(config, out, *steps),
        Command::Bounds { config } => cmd_bounds(config),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Lib(e)) => {
            let code = if e.is_parse() {
                1
            } else if e.is_validation() {
                2
            } else {
                3
            };
            eprintln!("error: {e}");
            ExitCode::from(code)
        }
        Err(Failure::Io(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}
