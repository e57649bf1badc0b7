use std::path::Path;

use idsweep::config::load_config;
use idsweep::gronwall::apriori_constants;
use idsweep::nidcs::recover_with;
use idsweep::solver::{solve, SolveOptions};

fn each_config(mut f: impl FnMut(&str, idsweep::config::LoadedConfig)) {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let name = path.file_stem().unwrap().to_string_lossy().into_owned();
            let cfg = load_config(&path).unwrap_or_else(|e| panic!("{name}: {e}"));
            f(&name, cfg);
            n += 1;
        }
    }
    assert!(n >= 6);
}

#[test]
fn every_sample_has_growth_and_lipschitz_data() {
    each_config(|name, cfg| {
        let p = &cfg.problem;
        assert!(p.f1.lipschitz.is_some(), "{name}");
        assert!(p.f2.lipschitz.is_some(), "{name}");
        let b = apriori_constants(p).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert!(b.m.is_some_and(f64::is_finite), "{name}");
    });
}

#[test]
fn every_sample_solves_with_its_own_options() {
    each_config(|name, cfg| {
        let report = solve(&cfg.problem, &cfg.options).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert!(report.feasibility <= 1e-9, "{name}");
        let margin = report
            .velocity_margin
            .unwrap_or_else(|| panic!("{name}: no margin"));
        assert!(margin.is_finite(), "{name}");
        if let Some(set) = &cfg.sublevel {
            let path = recover_with(
                set,
                &cfg.problem,
                &report.trajectory,
                cfg.options.memory_rule,
            )
            .unwrap();
            assert!(path.min_dual() >= 0.0, "{name}");
        }
    });
}

#[test]
fn refinement_stops_at_the_target() {
    let cfg =
        load_config(&Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/moving_ball.toml"))
            .unwrap();
    let mut opts = SolveOptions::with_steps(50).without_bounds();
    opts.refine = Some(idsweep::solver::Refine {
        target: 1e-3,
        max_doublings: 8,
    });
    let report = solve(&cfg.problem, &opts).unwrap();
    let last = report.refinement.last().unwrap();
    assert!(last.gap <= 1e-3);
    assert!(report.refinement[..report.refinement.len() - 1]
        .iter()
        .all(|l| l.gap > 1e-3));
    assert_eq!(report.steps, 2 * last.steps);
}
