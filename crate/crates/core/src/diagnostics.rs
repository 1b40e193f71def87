//! Inequality checks carried along the discrete flow.
//!
//! Every check is normalized to the form `lhs >= rhs` and reported with its
//! slack `margin = lhs - rhs`; a check passes when the margin is no worse
//! than `-tol`. Equality-style checks (two quantities that must agree) bound
//! the margin from both sides. The reports serialize directly into the
//! `diagnostics.json` emitted by the command-line tools.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fokker_planck::{dissipation_f2_terms, FpSolution};
use crate::functionals::{entropy_j, fisher_fp, gibbs_density, same_grid, Density, Potential};
use crate::grid::{deriv1, deriv2, integrate, GridFunction};
use crate::jko::{eps_identity, JkoStepResult, JkoTrajectory};
use crate::transport::{displacement_sup, quantile_curve, TransportPlan};

/// Where in a run a report was produced.
#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize, PartialEq)]
pub struct CheckContext {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub tau: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub step: Option<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct InequalityReport {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    /// `lhs - rhs`; nonnegative when the inequality holds strictly.
    pub margin: f64,
    pub tol: f64,
    pub satisfied: bool,
    pub context: CheckContext,
}

impl InequalityReport {
    pub fn one_sided(name: &str, lhs: f64, rhs: f64, tol: f64, context: CheckContext) -> Self {
        let margin = lhs - rhs;
        InequalityReport {
            name: name.to_string(),
            lhs,
            rhs,
            margin,
            tol,
            satisfied: margin >= -tol,
            context,
        }
    }

    pub fn equality(name: &str, lhs: f64, rhs: f64, tol: f64, context: CheckContext) -> Self {
        let margin = lhs - rhs;
        InequalityReport {
            name: name.to_string(),
            lhs,
            rhs,
            margin,
            tol,
            satisfied: margin.abs() <= tol,
            context,
        }
    }
}

fn step_ctx(tau: f64, step: Option<usize>) -> CheckContext {
    CheckContext { tau: Some(tau), step }
}

/// `J(rho_prev) >= J(rho_next) + w2^2 / (2 tau)`, which the step construction
/// makes exact up to rounding.
pub fn check_energy_decrease(step: &JkoStepResult, tau: f64, idx: Option<usize>) -> InequalityReport {
    let rhs = step.j_next + step.w2 * step.w2 / (2.0 * tau);
    InequalityReport::one_sided("energy_decrease", step.j_prev, rhs, 1e-9, step_ctx(tau, idx))
}

/// Summed movement against the total energy drop available above the Gibbs
/// ground state: `2 (J(rho_0) - J(gibbs)) >= sum_k w2_k^2 / tau`.
pub fn check_w2_telescope(traj: &JkoTrajectory, v: &Potential) -> Result<InequalityReport> {
    let rho0 = &traj.densities[0];
    let gibbs = gibbs_density(v, rho0.floor())?;
    let j0 = entropy_j(rho0, v)?;
    let jg = entropy_j(&gibbs, v)?;
    let lhs = 2.0 * (j0 - jg);
    let rhs: f64 = traj.steps.iter().map(|s| s.w2 * s.w2 / traj.tau).sum();
    Ok(InequalityReport::one_sided(
        "w2_telescope",
        lhs,
        rhs,
        1e-6,
        CheckContext { tau: Some(traj.tau), step: None },
    ))
}

fn l2_sq(d: &Density) -> f64 {
    integrate(&d.as_fn().zip(d.as_fn(), |a, b| a * b))
}

/// One-step interchange of the squared L2 norm with the movement term:
/// `int rho_prev^2 >= int rho_next^2 + 2 tau int (rho' + rho V') rho'`
/// with the dissipation evaluated at the new state. Gradients live on cell
/// interfaces, matching the flux form of the drift-diffusion operator; at
/// the scheme's own confined fixed point the interface flux is a cubic
/// remainder paired with a downhill difference, so the dissipation is
/// biased below its continuum value there and the margin cannot dip under
/// zero just because the grid is finite.
pub fn check_flow_interchange(
    step: &JkoStepResult,
    v: &Potential,
    tau: f64,
    idx: Option<usize>,
) -> InequalityReport {
    let rho_next = &step.rho_next;
    let rho_prev = &step.plan.target;
    let grid = rho_next.grid();
    let h = grid.h();
    let r = rho_next.values();
    let vv = v.values();
    let mut diss = 0.0;
    for i in 0..grid.n - 1 {
        let dr = (r[i + 1] - r[i]) / h;
        let dv = (vv[i + 1] - vv[i]) / h;
        let avg = 0.5 * (r[i] + r[i + 1]);
        diss += h * (dr + avg * dv) * dr;
    }
    let lhs = l2_sq(rho_prev);
    let rhs = l2_sq(rho_next) + 2.0 * tau * diss;
    InequalityReport::one_sided("flow_interchange", lhs, rhs, 1e-6, step_ctx(tau, idx))
}

/// `p`-norm growth control by the drift Lipschitz bound:
/// `int rho_prev^p >= (1 - tau p (p-1) lip^2 / 4) int rho_next^p`.
/// The coefficient must stay positive for the bound to carry information.
pub fn check_lp_decay(
    step: &JkoStepResult,
    v: &Potential,
    tau: f64,
    p: u32,
    idx: Option<usize>,
) -> Result<InequalityReport> {
    let pf = p as f64;
    let shrink = tau * pf * (pf - 1.0) * v.lip() * v.lip() / 4.0;
    if shrink >= 1.0 {
        return Err(Error::SmallnessViolated(format!(
            "tau p (p-1) lip^2 / 4 = {shrink} >= 1; decrease tau"
        )));
    }
    let norm_p = |d: &Density| {
        integrate(&GridFunction {
            grid: d.grid(),
            values: d.values().iter().map(|&r| r.powi(p as i32)).collect(),
        })
    };
    let lhs = norm_p(&step.plan.target);
    let rhs = (1.0 - shrink) * norm_p(&step.rho_next);
    Ok(InequalityReport::one_sided(
        &format!("lp_decay_p{p}"),
        lhs,
        rhs,
        1e-8,
        step_ctx(tau, idx),
    ))
}

/// Relative Fisher information decay under the curvature bound:
/// `F_p(rho_prev) >= (1 + p lambda tau) F_p(rho_next)`.
pub fn check_fp_decay(
    step: &JkoStepResult,
    v: &Potential,
    tau: f64,
    p: u32,
    idx: Option<usize>,
) -> Result<InequalityReport> {
    let factor = 1.0 + p as f64 * v.lambda() * tau;
    if factor <= 0.0 {
        return Err(Error::SmallnessViolated(format!(
            "1 + p lambda tau = {factor} <= 0; decrease tau"
        )));
    }
    let lhs = fisher_fp(&step.plan.target, v, p)?;
    let rhs = factor * fisher_fp(&step.rho_next, v, p)?;
    let tol = 1e-6 * (1.0 + lhs.abs());
    Ok(InequalityReport::one_sided(
        &format!("fp_decay_p{p}"),
        lhs,
        rhs,
        tol,
        step_ctx(tau, idx),
    ))
}

/// Propagation of the initial band of `log rho + V` along the whole
/// trajectory: every iterate stays inside `[min, max]` of the initial values,
/// up to an allowance of 1e-5. The reported `lhs` is the worst slack over all
/// iterates and cells.
pub fn check_maxmin(traj: &JkoTrajectory, v: &Potential) -> InequalityReport {
    let band = |d: &Density| {
        let lv = d.log_values();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for (l, vv) in lv.values.iter().zip(v.values()) {
            lo = lo.min(l + vv);
            hi = hi.max(l + vv);
        }
        (lo, hi)
    };
    let (a, b) = band(&traj.densities[0]);
    let mut slack = f64::INFINITY;
    for d in &traj.densities[1..] {
        let (lo, hi) = band(d);
        slack = slack.min(lo - a).min(b - hi);
    }
    if traj.densities.len() == 1 {
        slack = 0.0;
    }
    InequalityReport::one_sided(
        "maxmin_band",
        slack,
        0.0,
        1e-5,
        CheckContext { tau: Some(traj.tau), step: None },
    )
}

fn h_prime(p: u32, z: f64) -> f64 {
    if p == 2 {
        z
    } else {
        z.abs().powi(p as i32 - 2) * z
    }
}

fn h_second(p: u32, z: f64) -> f64 {
    if p == 2 {
        1.0
    } else {
        (p as f64 - 1.0) * z.abs().powi(p as i32 - 2)
    }
}

/// The pieces of the five-gradients identity for `H(z) = |z|^p / p`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct FiveGradientsParts {
    /// `int rho' H'(phi') + int g' H'(psi')`.
    pub cross: f64,
    /// `int rho H''(phi') phi''^2 / (1 - phi'')`.
    pub interior: f64,
    /// Endpoint term at the left boundary, outward normal -1.
    pub boundary_lower: f64,
    /// Endpoint term at the right boundary, outward normal +1.
    pub boundary_upper: f64,
}

/// Evaluate all four pieces of the identity
///
/// ```text
/// int (rho' H'(phi') + g' H'(psi')) =
///     int rho H''(phi') phi''^2 / (1 - phi'')  +  boundary terms,
/// ```
///
/// with `phi' = id - T` taken from the plan's map and `phi''` from the
/// stored potential. The boundary terms use the true endpoint values of the
/// maps, which the quantile anchors pin to the identity there, so for fully
/// supported densities they vanish exactly rather than approximately.
pub fn five_gradients_parts(
    rho: &Density,
    g: &Density,
    p: u32,
    plan: &TransportPlan,
) -> Result<FiveGradientsParts> {
    if p < 2 {
        return Err(Error::InvalidInput(format!("need p >= 2, got {p}")));
    }
    same_grid(rho.grid(), g.grid(), "five_gradients_parts")?;
    same_grid(rho.grid(), plan.source.grid(), "five_gradients_parts")?;
    let grid = rho.grid();

    let dr = deriv1(rho.as_fn());
    let dg = deriv1(g.as_fn());
    let centers = grid.centers();
    let cross_rho = integrate(&GridFunction {
        grid,
        values: (0..grid.n)
            .map(|i| dr.values[i] * h_prime(p, centers[i] - plan.t_map.values[i]))
            .collect(),
    });
    let cross_g = integrate(&GridFunction {
        grid,
        values: (0..grid.n)
            .map(|i| dg.values[i] * h_prime(p, centers[i] - plan.s_map.values[i]))
            .collect(),
    });

    let phi2 = deriv2(&plan.phi);
    let mut interior = vec![0.0; grid.n];
    for i in 0..grid.n {
        let c = phi2.values[i];
        if 1.0 - c <= 1e-10 {
            return Err(Error::MonotonicityLoss(format!(
                "transport map degenerates near x = {} (1 - phi'' = {:.3e})",
                centers[i],
                1.0 - c
            )));
        }
        let slope = centers[i] - plan.t_map.values[i];
        interior[i] = rho.values()[i] * h_second(p, slope) * c * c / (1.0 - c);
    }

    let t_curve = quantile_curve(g);
    let s_curve = quantile_curve(rho);
    let n = grid.n;
    let at_a = rho.values()[0] * h_prime(p, grid.a - t_curve.eval(0.0))
        + g.values()[0] * h_prime(p, grid.a - s_curve.eval(0.0));
    let at_b = rho.values()[n - 1] * h_prime(p, grid.b - t_curve.eval(1.0))
        + g.values()[n - 1] * h_prime(p, grid.b - s_curve.eval(1.0));

    Ok(FiveGradientsParts {
        cross: cross_rho + cross_g,
        interior: integrate(&GridFunction { grid, values: interior }),
        boundary_lower: -at_a,
        boundary_upper: at_b,
    })
}

/// Five-gradients check: the identity holds within `1e-3 (1 + |lhs|)` and
/// the interior and both boundary remainders are individually nonnegative
/// within 1e-8.
pub fn check_five_gradients(
    rho: &Density,
    g: &Density,
    p: u32,
    plan: &TransportPlan,
) -> Result<InequalityReport> {
    let parts = five_gradients_parts(rho, g, p, plan)?;
    let lhs = parts.cross;
    let rhs = parts.interior + parts.boundary_lower + parts.boundary_upper;
    let tol = 1e-3 * (1.0 + lhs.abs());
    let mut report = InequalityReport::equality(
        &format!("five_gradients_p{p}"),
        lhs,
        rhs,
        tol,
        CheckContext::default(),
    );
    report.satisfied = report.satisfied
        && parts.interior >= -1e-8
        && parts.boundary_lower >= -1e-8
        && parts.boundary_upper >= -1e-8;
    Ok(report)
}

/// Fisher information budget along a discrete flow:
/// `F_2(rho_0) - F_2(rho_N) >= sum_k tau (hess_k + curv_k)` with the
/// dissipation integrals taken at the right endpoints. The shortfall
/// `max(0, -margin)` is this scheme's measured time-discretization defect and
/// must shrink as tau does.
pub fn check_f2_dissipation_jko(traj: &JkoTrajectory, v: &Potential) -> Result<InequalityReport> {
    let f_start = fisher_fp(&traj.densities[0], v, 2)?;
    let f_end = fisher_fp(traj.densities.last().unwrap(), v, 2)?;
    let lhs = f_start - f_end;
    let mut rhs = 0.0;
    for step in &traj.steps {
        let (hess, curv) = dissipation_f2_terms(&step.rho_next, v);
        rhs += traj.tau * (hess + curv);
    }
    let tol = 0.05 * (1.0 + lhs.abs());
    Ok(InequalityReport::one_sided(
        "f2_dissipation",
        lhs,
        rhs,
        tol,
        CheckContext { tau: Some(traj.tau), step: None },
    ))
}

/// Continuum counterpart of the discrete dissipation budget: trapezoid
/// accumulation of both Fisher dissipation integrals over a stored reference
/// solution.
pub fn pde_f2_budget(sol: &FpSolution, v: &Potential) -> f64 {
    let rates: Vec<f64> = sol
        .states
        .iter()
        .map(|d| {
            let (hess, curv) = dissipation_f2_terms(d, v);
            hess + curv
        })
        .collect();
    let mut acc = 0.0;
    for j in 1..rates.len() {
        acc += 0.5 * (sol.times[j] - sol.times[j - 1]) * (rates[j] + rates[j - 1]);
    }
    acc
}

/// Agreement between the quadrature and closed-form values of the
/// time-smoothing gap.
pub fn check_eps_identity(traj: &JkoTrajectory, eps: f64) -> Result<InequalityReport> {
    let (computed, closed) = eps_identity(traj, eps)?;
    let tol = 1e-8 * (1.0 + computed.abs());
    Ok(InequalityReport::equality(
        "eps_identity",
        computed,
        closed,
        tol,
        CheckContext { tau: Some(traj.tau), step: None },
    ))
}

/// Least-squares power-law fit in log-log coordinates; returns
/// `(exponent, constant, rms residual)`.
pub(crate) fn fit_power_law(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rms = (lx
        .iter()
        .zip(&ly)
        .map(|(x, y)| {
            let r = y - (slope * x + intercept);
            r * r
        })
        .sum::<f64>()
        / n)
        .sqrt();
    (slope, intercept.exp(), rms)
}

/// Displacement and map-Hessian scaling measured over a tau family.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ScalingReport {
    pub taus: Vec<f64>,
    /// Per tau: `max_k sup |id - T_k|`.
    pub sup_displacement: Vec<f64>,
    /// Per tau: `max_k w2_k`.
    pub sup_w2: Vec<f64>,
    /// Per tau: `max_k sup |phi_k''|`.
    pub sup_phi_second: Vec<f64>,
    pub exponent_vs_tau: f64,
    pub exponent_vs_w2: f64,
    /// Fitted decay exponent of the map Hessian sup against tau.
    pub beta_hessian: f64,
    pub constant_vs_tau: f64,
    pub fit_residual_vs_tau: f64,
    pub fit_residual_vs_w2: f64,
    /// Theoretical floors in one dimension: 1/3 against tau, 2/3 against w2.
    pub target_exponent_vs_tau: f64,
    pub target_exponent_vs_w2: f64,
    /// Set when displacements sit at rounding level (equilibrium start);
    /// exponents are then zeroed and nothing is asserted.
    pub degenerate: bool,
    pub satisfied: bool,
}

/// Fit displacement suprema across trajectories computed at different tau.
/// Requires at least four tau values in geometric progression.
pub fn fit_displacement_scaling(trajs: &[JkoTrajectory]) -> Result<ScalingReport> {
    if trajs.len() < 4 {
        return Err(Error::InsufficientData(format!(
            "need at least 4 trajectories for a scaling fit, got {}",
            trajs.len()
        )));
    }
    let taus: Vec<f64> = trajs.iter().map(|t| t.tau).collect();
    let ratio = taus[1] / taus[0];
    for w in taus.windows(2) {
        let r = w[1] / w[0];
        if !(r > 0.0) || (r - ratio).abs() > 1e-9 * ratio.abs() || (r - 1.0).abs() < 1e-9 {
            return Err(Error::InsufficientData(
                "tau values must form a non-constant geometric progression".into(),
            ));
        }
    }

    let mut sup_displacement = Vec::with_capacity(trajs.len());
    let mut sup_w2 = Vec::with_capacity(trajs.len());
    let mut sup_phi_second = Vec::with_capacity(trajs.len());
    for traj in trajs {
        let mut disp = 0.0f64;
        let mut w2 = 0.0f64;
        let mut phi2 = 0.0f64;
        for step in &traj.steps {
            disp = disp.max(displacement_sup(&step.plan));
            w2 = w2.max(step.w2);
            let dd = deriv2(&step.plan.phi);
            phi2 = phi2.max(dd.values.iter().fold(0.0f64, |m, &x| m.max(x.abs())));
        }
        sup_displacement.push(disp);
        sup_w2.push(w2);
        sup_phi_second.push(phi2);
    }

    let degenerate = sup_displacement.iter().any(|&d| d <= 1e-12)
        || sup_w2.iter().any(|&w| w <= 1e-12)
        || sup_phi_second.iter().any(|&c| c <= 1e-12);
    if degenerate {
        return Ok(ScalingReport {
            taus,
            sup_displacement,
            sup_w2,
            sup_phi_second,
            exponent_vs_tau: 0.0,
            exponent_vs_w2: 0.0,
            beta_hessian: 0.0,
            constant_vs_tau: 0.0,
            fit_residual_vs_tau: 0.0,
            fit_residual_vs_w2: 0.0,
            target_exponent_vs_tau: 1.0 / 3.0,
            target_exponent_vs_w2: 2.0 / 3.0,
            degenerate: true,
            satisfied: true,
        });
    }

    let (exp_tau, c_tau, rms_tau) = fit_power_law(&taus, &sup_displacement);
    let (exp_w2, _, rms_w2) = fit_power_law(&sup_w2, &sup_displacement);
    let (beta, _, _) = fit_power_law(&taus, &sup_phi_second);
    let satisfied =
        exp_tau >= 1.0 / 3.0 - 0.1 && exp_w2 >= 2.0 / 3.0 - 0.1 && beta > 0.0;
    Ok(ScalingReport {
        taus,
        sup_displacement,
        sup_w2,
        sup_phi_second,
        exponent_vs_tau: exp_tau,
        exponent_vs_w2: exp_w2,
        beta_hessian: beta,
        constant_vs_tau: c_tau,
        fit_residual_vs_tau: rms_tau,
        fit_residual_vs_w2: rms_w2,
        target_exponent_vs_tau: 1.0 / 3.0,
        target_exponent_vs_w2: 2.0 / 3.0,
        degenerate: false,
        satisfied,
    })
}

/// Run every per-step and whole-trajectory check.
pub fn suite(traj: &JkoTrajectory, v: &Potential) -> Result<Vec<InequalityReport>> {
    let tau = traj.tau;
    let mut reports = Vec::new();
    for (k, step) in traj.steps.iter().enumerate() {
        let idx = Some(k);
        reports.push(check_energy_decrease(step, tau, idx));
        reports.push(check_flow_interchange(step, v, tau, idx));
        reports.push(check_lp_decay(step, v, tau, 2, idx)?);
        reports.push(check_fp_decay(step, v, tau, 2, idx)?);
    }
    reports.push(check_maxmin(traj, v));
    reports.push(check_w2_telescope(traj, v)?);
    reports.push(check_f2_dissipation_jko(traj, v)?);
    reports.push(check_eps_identity(traj, 0.25)?);
    Ok(reports)
}
