//! Invocation parsing: command-line flags, the optional `--json-config`
//! file, and the merge of the two into one validated [`RunConfig`]. Flags
//! always win over file values, and every run echoes the merged result to
//! `effective-config.json`, in the same schema the config file uses, so a
//! finished run can be reproduced with `--json-config` alone.

use std::fmt;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use jkolab_core::{DensityFamily, Error, PotentialFamily, Result, DEFAULT_FLOOR};

#[derive(Parser)]
#[command(
    name = "jkolab",
    version,
    about = "Minimizing-movement solver for one-dimensional drift-diffusion flows"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Advance a single step and write the result as JSON.
    Step(CommonArgs),
    /// March the scheme to the horizon and record the trajectory.
    Run(CommonArgs),
    /// Convergence study across a list of step sizes.
    Study(CommonArgs),
    /// Evaluate the inequality suite; exit 3 if any check fails.
    Check(CommonArgs),
}

impl Cli {
    pub fn into_parts(self) -> (CommandKind, CommonArgs) {
        match self.command {
            Command::Step(a) => (CommandKind::Step, a),
            Command::Run(a) => (CommandKind::Run, a),
            Command::Study(a) => (CommandKind::Study, a),
            Command::Check(a) => (CommandKind::Check, a),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CommandKind {
    Step,
    Run,
    Study,
    Check,
}

impl fmt::Display for CommandKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CommandKind::Step => "step",
            CommandKind::Run => "run",
            CommandKind::Study => "study",
            CommandKind::Check => "check",
        })
    }
}

#[derive(Args, Clone, Debug, Default)]
pub struct CommonArgs {
    /// JSON file holding any of the other options; flags override it.
    #[arg(long = "json-config", value_name = "FILE")]
    json_config: Option<PathBuf>,

    /// Domain endpoints as `A,B` (default 0,1).
    #[arg(long, value_name = "A,B")]
    domain: Option<String>,

    /// Number of grid cells (default 256).
    #[arg(long)]
    n: Option<usize>,

    /// Quantile segments for the inner solver (default 4*n).
    #[arg(long)]
    m: Option<usize>,

    /// Drift potential: zero | quadratic:CENTER,STRENGTH | doublewell | tabulated:FILE.
    #[arg(long = "V", value_name = "SPEC")]
    v: Option<String>,

    /// Initial density: uniform | cosine:AMPLITUDE,FREQUENCY | gibbs | tabulated:FILE.
    #[arg(long, value_name = "SPEC")]
    rho0: Option<String>,

    /// Step size (step, run, check).
    #[arg(long)]
    tau: Option<f64>,

    /// Comma-separated step sizes (study).
    #[arg(long = "tau-list", value_name = "TAU1,TAU2,...")]
    tau_list: Option<String>,

    /// Time horizon; every step size must divide it.
    #[arg(long = "T")]
    horizon: Option<f64>,

    /// Reference-solver time step (default min(tau)/40).
    #[arg(long = "dt-ref")]
    dt_ref: Option<f64>,

    /// Stationarity tolerance of the inner Newton solver.
    #[arg(long = "newton-tol")]
    newton_tol: Option<f64>,

    /// Density floor (default 1e-10).
    #[arg(long)]
    floor: Option<f64>,

    /// Output directory (default `out`).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Seed for randomized corpora; echoed into the effective config.
    #[arg(long)]
    seed: Option<u64>,
}

/// File counterpart of [`CommonArgs`]. `command` is accepted so that an
/// `effective-config.json` echoed by a previous run loads unchanged; the
/// subcommand itself still comes from the command line.
#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    command: Option<String>,
    domain: Option<(f64, f64)>,
    n: Option<usize>,
    m: Option<usize>,
    #[serde(rename = "V")]
    v: Option<String>,
    rho0: Option<String>,
    tau: Option<f64>,
    tau_list: Option<Vec<f64>>,
    #[serde(alias = "T")]
    horizon: Option<f64>,
    dt_ref: Option<f64>,
    newton_tol: Option<f64>,
    floor: Option<f64>,
    out: Option<PathBuf>,
    seed: Option<u64>,
}

/// A fully resolved invocation.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub command: CommandKind,
    pub domain: (f64, f64),
    pub n: usize,
    pub m: usize,
    pub v: PotentialFamily,
    pub rho0: DensityFamily,
    pub taus: Vec<f64>,
    pub horizon: f64,
    pub dt_ref: f64,
    pub newton_tol: f64,
    pub floor: f64,
    pub out: PathBuf,
    pub seed: u64,
}

fn missing(flag: &str) -> Error {
    Error::InvalidInput(format!("missing required option {flag}"))
}

fn parse_pair(s: &str, what: &str) -> Result<(f64, f64)> {
    let mut it = s.split(',');
    let err = || Error::InvalidInput(format!("{what}: expected 'A,B', got '{s}'"));
    let a: f64 = it.next().ok_or_else(err)?.trim().parse().map_err(|_| err())?;
    let b: f64 = it.next().ok_or_else(err)?.trim().parse().map_err(|_| err())?;
    if it.next().is_some() {
        return Err(err());
    }
    Ok((a, b))
}

fn parse_tau_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|part| {
            part.trim().parse().map_err(|_| {
                Error::InvalidInput(format!("--tau-list: cannot parse '{part}' as a number"))
            })
        })
        .collect()
}

fn require_table(path: &str, flag: &str) -> Result<()> {
    if Path::new(path).exists() {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!(
            "{flag}: tabulated file '{path}' does not exist"
        )))
    }
}

/// Merge flags over the optional file, fill defaults, validate everything
/// that can be validated before touching the numerics.
pub fn resolve(kind: CommandKind, args: &CommonArgs) -> Result<RunConfig> {
    let file: FileConfig = match &args.json_config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                Error::InvalidInput(format!("--json-config {}: {e}", path.display()))
            })?;
            serde_json::from_str(&text).map_err(|e| {
                Error::InvalidInput(format!("--json-config {}: {e}", path.display()))
            })?
        }
        None => FileConfig::default(),
    };
    let _ = file.command;

    let domain = match (&args.domain, file.domain) {
        (Some(s), _) => parse_pair(s, "--domain")?,
        (None, Some(d)) => d,
        (None, None) => (0.0, 1.0),
    };
    if !(domain.1 > domain.0) {
        return Err(Error::InvalidInput(format!(
            "--domain: need A < B, got {},{}",
            domain.0, domain.1
        )));
    }

    let n = args.n.or(file.n).unwrap_or(256);
    let m = args.m.or(file.m).unwrap_or(4 * n);

    let v: PotentialFamily = args.v.clone().or(file.v).ok_or_else(|| missing("--V"))?.parse()?;
    let rho0: DensityFamily =
        args.rho0.clone().or(file.rho0).ok_or_else(|| missing("--rho0"))?.parse()?;
    if let PotentialFamily::Tabulated { path } = &v {
        require_table(path, "--V")?;
    }
    if let DensityFamily::Tabulated { path } = &rho0 {
        require_table(path, "--rho0")?;
    }

    let single = args.tau.or(file.tau);
    let list = match (&args.tau_list, file.tau_list) {
        (Some(s), _) => Some(parse_tau_list(s)?),
        (None, Some(l)) => Some(l),
        (None, None) => None,
    };
    let taus = match (single, list) {
        (Some(_), Some(_)) => {
            return Err(Error::InvalidInput(
                "give either --tau or --tau-list, not both".into(),
            ))
        }
        (Some(t), None) => vec![t],
        (None, Some(l)) if !l.is_empty() => l,
        _ => return Err(missing("--tau (or --tau-list)")),
    };
    if kind != CommandKind::Study && taus.len() != 1 {
        return Err(Error::InvalidInput(format!(
            "{kind} takes exactly one step size, got {} (use the study subcommand for lists)",
            taus.len()
        )));
    }
    for &t in &taus {
        if !(t > 0.0) || !t.is_finite() {
            return Err(Error::InvalidInput(format!(
                "--tau: step sizes must be positive, got {t}"
            )));
        }
    }

    let horizon = args.horizon.or(file.horizon);
    let horizon = match kind {
        CommandKind::Step => horizon.unwrap_or(taus[0]),
        _ => horizon.ok_or_else(|| missing("--T"))?,
    };
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(Error::InvalidInput(format!("--T: horizon must be positive, got {horizon}")));
    }
    if kind != CommandKind::Step {
        for &t in &taus {
            let k = horizon / t;
            if k < 0.5 || (k - k.round()).abs() > 1e-9 * k.max(1.0) {
                return Err(Error::InvalidInput(format!(
                    "--tau {t} does not divide the horizon {horizon}"
                )));
            }
        }
    }

    let min_tau = taus.iter().cloned().fold(f64::INFINITY, f64::min);
    let dt_ref = args.dt_ref.or(file.dt_ref).unwrap_or(min_tau / 40.0);
    if !(dt_ref > 0.0) || !dt_ref.is_finite() {
        return Err(Error::InvalidInput(format!("--dt-ref must be positive, got {dt_ref}")));
    }
    if kind == CommandKind::Study && dt_ref > min_tau / 10.0 * (1.0 + 1e-12) {
        return Err(Error::InvalidInput(format!(
            "--dt-ref {dt_ref} exceeds min(tau)/10 = {}; the reference would not resolve the study",
            min_tau / 10.0
        )));
    }

    let newton_tol = args.newton_tol.or(file.newton_tol).unwrap_or(1e-10);
    let floor = args.floor.or(file.floor).unwrap_or(DEFAULT_FLOOR);
    let out = args.out.clone().or(file.out).unwrap_or_else(|| PathBuf::from("out"));
    let seed = args.seed.or(file.seed).unwrap_or(0);

    Ok(RunConfig {
        command: kind,
        domain,
        n,
        m,
        v,
        rho0,
        taus,
        horizon,
        dt_ref,
        newton_tol,
        floor,
        out,
        seed,
    })
}

#[derive(Serialize)]
struct Echo<'a> {
    command: String,
    domain: [f64; 2],
    n: usize,
    m: usize,
    #[serde(rename = "V")]
    v: String,
    rho0: String,
    tau_list: &'a [f64],
    #[serde(rename = "T")]
    horizon: f64,
    dt_ref: f64,
    newton_tol: f64,
    floor: f64,
    out: String,
    seed: u64,
}

pub fn write_effective(cfg: &RunConfig) -> Result<()> {
    let echo = Echo {
        command: cfg.command.to_string(),
        domain: [cfg.domain.0, cfg.domain.1],
        n: cfg.n,
        m: cfg.m,
        v: cfg.v.to_string(),
        rho0: cfg.rho0.to_string(),
        tau_list: &cfg.taus,
        horizon: cfg.horizon,
        dt_ref: cfg.dt_ref,
        newton_tol: cfg.newton_tol,
        floor: cfg.floor,
        out: cfg.out.display().to_string(),
        seed: cfg.seed,
    };
    let mut json = serde_json::to_string_pretty(&echo)?;
    json.push('\n');
    std::fs::write(cfg.out.join("effective-config.json"), json)?;
    Ok(())
}

/// Shared opening lines of every `summary.txt`.
pub fn header(cfg: &RunConfig) -> String {
    let mut s = String::new();
    s.push_str(&format!(
        "domain [{}, {}], n = {}, m = {}\n",
        cfg.domain.0, cfg.domain.1, cfg.n, cfg.m
    ));
    s.push_str(&format!("V = {}\nrho0 = {}\n", cfg.v, cfg.rho0));
    if cfg.taus.len() == 1 {
        s.push_str(&format!("tau = {:e}, T = {:e}\n", cfg.taus[0], cfg.horizon));
    } else {
        let list: Vec<String> = cfg.taus.iter().map(|t| format!("{t:e}")).collect();
        s.push_str(&format!("tau list = {}, T = {:e}\n", list.join(", "), cfg.horizon));
    }
    s
}
