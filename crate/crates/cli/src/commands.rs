//! The four pipelines behind the subcommands. Each one realizes the
//! configured problem, runs the corresponding kernel, and writes its
//! artifacts into the output directory; the returned code is the process
//! exit status (0 clean, 3 when an inequality check failed).

use std::fmt::Write as _;
use std::path::Path;

use jkolab_core::*;

use crate::config::{self, Cli, CommandKind, RunConfig};

pub fn dispatch(cli: Cli) -> Result<u8> {
    let (kind, args) = cli.into_parts();
    let cfg = config::resolve(kind, &args)?;
    std::fs::create_dir_all(&cfg.out)?;
    config::write_effective(&cfg)?;
    match kind {
        CommandKind::Step => step(&cfg),
        CommandKind::Run => trajectory(&cfg, true),
        CommandKind::Check => trajectory(&cfg, false),
        CommandKind::Study => study(&cfg),
    }
}

fn realize(cfg: &RunConfig) -> Result<(Potential, Density)> {
    let grid = Grid1D::new(cfg.domain.0, cfg.domain.1, cfg.n)?;
    let v = cfg.v.realize(grid)?;
    let rho0 = cfg.rho0.realize(grid, &v, cfg.floor)?;
    Ok((v, rho0))
}

fn jko_config(cfg: &RunConfig) -> Result<JkoConfig> {
    let mut jk = JkoConfig::new(cfg.taus[0], cfg.m)?;
    jk.newton_tol = cfg.newton_tol;
    jk.validate()?;
    Ok(jk)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut json = serde_json::to_string_pretty(value)?;
    json.push('\n');
    std::fs::write(path, json)?;
    Ok(())
}

fn step(cfg: &RunConfig) -> Result<u8> {
    let (v, rho0) = realize(cfg)?;
    let jk = jko_config(cfg)?;
    let res = jko_step(&rho0, &v, &jk)?;
    write_json(&cfg.out.join("step.json"), &res)?;

    let mut s = String::from("one minimizing-movement step\n");
    s.push_str(&config::header(cfg));
    writeln!(s, "newton iterations = {}", res.newton_iters).unwrap();
    writeln!(s, "w2 movement = {:.6e}", res.w2).unwrap();
    writeln!(s, "energy: {:.12e} -> {:.12e}", res.j_prev, res.j_next).unwrap();
    writeln!(s, "optimality residual = {:.6e}", res.optimality_residual).unwrap();
    std::fs::write(cfg.out.join("summary.txt"), s)?;
    Ok(0)
}

/// `run` and `check` share the whole pipeline; `run` additionally writes
/// the final density as a table that `--rho0 tabulated:` can reload.
fn trajectory(cfg: &RunConfig, persist_state: bool) -> Result<u8> {
    let (v, rho0) = realize(cfg)?;
    let jk = jko_config(cfg)?;
    let traj = run_trajectory(&rho0, &v, &jk, cfg.horizon)?;
    let reports = suite(&traj, &v)?;

    write_step_table(&cfg.out, &traj, &reports)?;
    write_json(&cfg.out.join("diagnostics.json"), &reports)?;
    if persist_state {
        let last = traj.densities.last().expect("trajectory has at least the initial state");
        write_density_table(&cfg.out.join("final_density.csv"), last)?;
    }

    let good = reports.iter().filter(|r| r.satisfied).count();
    let mut s = String::from("minimizing-movement trajectory\n");
    s.push_str(&config::header(cfg));
    let total_w2: f64 = traj.steps.iter().map(|st| st.w2).sum();
    writeln!(s, "steps = {}, total w2 movement = {:.6e}", traj.steps.len(), total_w2).unwrap();
    if let (Some(first), Some(last)) = (traj.steps.first(), traj.steps.last()) {
        writeln!(s, "energy: {:.12e} -> {:.12e}", first.j_prev, last.j_next).unwrap();
    }
    writeln!(s, "\ninequality checks: {good}/{} satisfied", reports.len()).unwrap();
    for r in reports.iter().filter(|r| !r.satisfied) {
        writeln!(
            s,
            "  FAILED {} at step {:?}: margin {:.3e}, tol {:.1e}",
            r.name, r.context.step, r.margin, r.tol
        )
        .unwrap();
    }
    std::fs::write(cfg.out.join("summary.txt"), s)?;
    Ok(if good == reports.len() { 0 } else { 3 })
}

fn study(cfg: &RunConfig) -> Result<u8> {
    let sc = StudyConfig {
        domain: cfg.domain,
        n: cfg.n,
        m: Some(cfg.m),
        v: cfg.v.clone(),
        rho0: cfg.rho0.clone(),
        taus: cfg.taus.clone(),
        horizon: cfg.horizon,
        dt_ref: cfg.dt_ref,
        floor: cfg.floor,
        newton_tol: cfg.newton_tol,
        ..StudyConfig::default()
    };
    let res = run_study(&sc)?;
    emit_report(&res, &cfg.out)?;
    Ok(if res.all_satisfied { 0 } else { 3 })
}

const PER_STEP_CHECKS: [&str; 4] =
    ["energy_decrease", "flow_interchange", "lp_decay_p2", "fp_decay_p2"];

fn write_step_table(
    dir: &Path,
    traj: &JkoTrajectory,
    reports: &[InequalityReport],
) -> Result<()> {
    let mut csv = String::from("step,t,w2,j_next,optimality_residual,newton_iters");
    for name in PER_STEP_CHECKS {
        csv.push_str(",margin_");
        csv.push_str(name);
    }
    csv.push('\n');
    for (k, st) in traj.steps.iter().enumerate() {
        write!(
            csv,
            "{},{:.16e},{:.16e},{:.16e},{:.16e},{}",
            k + 1,
            (k + 1) as f64 * traj.tau,
            st.w2,
            st.j_next,
            st.optimality_residual,
            st.newton_iters
        )
        .unwrap();
        for name in PER_STEP_CHECKS {
            csv.push(',');
            let margin = reports
                .iter()
                .find(|r| r.name == name && r.context.step == Some(k))
                .map(|r| r.margin);
            if let Some(mg) = margin {
                write!(csv, "{mg:.16e}").unwrap();
            }
        }
        csv.push('\n');
    }
    std::fs::write(dir.join("errors.csv"), csv)?;
    Ok(())
}

fn write_density_table(path: &Path, rho: &Density) -> Result<()> {
    let centers = rho.grid().centers();
    let mut csv = String::from("x,value\n");
    for (x, r) in centers.iter().zip(rho.values()) {
        writeln!(csv, "{x:.16e},{r:.16e}").unwrap();
    }
    std::fs::write(path, csv)?;
    Ok(())
}
