//! Reference solver for the drift-diffusion equation
//! `d rho / dt = (rho' + rho V')'` with no-flux boundaries.
//!
//! Space is discretized in conservation form on the cell grid: the flux
//! through the interface between cells `c` and `c+1` is
//!
//! ```text
//! q_{c+1/2} = (rho_{c+1} - rho_c) / h + (rho_c + rho_{c+1})/2 * (V_{c+1} - V_c) / h
//! ```
//!
//! and vanishes at both ends. Time stepping is implicit Euler, so each step
//! solves one tridiagonal system. The scheme conserves mass exactly by
//! telescoping, keeps positivity whenever the per-cell potential increments
//! stay below 2 (the matrix is then an M-matrix), and is stationary on the
//! discrete Gibbs state up to the quadrature error of the centered drift.

use crate::error::{Error, Result};
use crate::functionals::{fisher_fp, same_grid, Density, Potential};
use crate::grid::{deriv1, deriv2, integrate, GridFunction};

/// Fluxes through the `n - 1` interior interfaces.
pub fn interface_fluxes(rho: &Density, v: &Potential) -> Vec<f64> {
    let h = rho.grid().h();
    let r = rho.values();
    let vv = v.values();
    (0..rho.grid().n - 1)
        .map(|c| (r[c + 1] - r[c]) / h + 0.5 * (r[c] + r[c + 1]) * (vv[c + 1] - vv[c]) / h)
        .collect()
}

fn solve_tridiag(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &[f64]) -> Option<Vec<f64>> {
    let n = diag.len();
    let mut d = diag.to_vec();
    let mut x = rhs.to_vec();
    for i in 1..n {
        if d[i - 1] == 0.0 {
            return None;
        }
        let w = sub[i - 1] / d[i - 1];
        d[i] -= w * sup[i - 1];
        x[i] -= w * x[i - 1];
    }
    if d[n - 1] == 0.0 {
        return None;
    }
    x[n - 1] /= d[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = (x[i] - sup[i] * x[i + 1]) / d[i];
    }
    Some(x)
}

/// One implicit Euler step of size `dt`.
pub fn fp_step(rho: &Density, v: &Potential, dt: f64) -> Result<Density> {
    same_grid(rho.grid(), v.grid(), "fp_step")?;
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidInput(format!("dt must be positive, got {dt}")));
    }
    let grid = rho.grid();
    let n = grid.n;
    let h = grid.h();
    let vv = v.values();
    let dv: Vec<f64> = (0..n - 1).map(|c| vv[c + 1] - vv[c]).collect();
    if dv.iter().any(|d| d.abs() >= 2.0) {
        return Err(Error::SmallnessViolated(
            "potential increment per cell reaches 2; refine the grid to keep the \
             implicit step inverse-positive"
                .into(),
        ));
    }

    // Rows of I - dt*L, where (L rho)_c = (q_{c+1/2} - q_{c-1/2}) / h.
    let s = dt / (h * h);
    let mut sub = vec![0.0; n - 1];
    let mut diag = vec![0.0; n];
    let mut sup = vec![0.0; n - 1];
    for c in 0..n {
        let mut center = 0.0;
        if c + 1 < n {
            center += -1.0 + 0.5 * dv[c];
            sup[c] = -s * (1.0 + 0.5 * dv[c]);
        }
        if c > 0 {
            center += -1.0 - 0.5 * dv[c - 1];
            sub[c - 1] = -s * (1.0 - 0.5 * dv[c - 1]);
        }
        diag[c] = 1.0 - s * center;
    }

    let next = solve_tridiag(&sub, &diag, &sup, rho.values())
        .ok_or_else(|| Error::NonConvergence { iters: 1, residual: f64::NAN })?;
    let (density, _) = Density::project(GridFunction { grid, values: next }, rho.floor())?;
    Ok(density)
}

/// Implicit Euler trajectory with stored snapshots.
#[derive(Clone, Debug)]
pub struct FpSolution {
    pub dt: f64,
    pub horizon: f64,
    /// Times of the stored states; `times[0] = 0`.
    pub times: Vec<f64>,
    pub states: Vec<Density>,
}

impl FpSolution {
    /// Snapshot at time `t`, which must match a stored time to within
    /// relative 1e-9 of the horizon.
    pub fn at_time(&self, t: f64) -> Result<&Density> {
        let tol = 1e-9 * self.horizon.max(1.0);
        let idx = self
            .times
            .binary_search_by(|probe| probe.partial_cmp(&t).unwrap())
            .unwrap_or_else(|i| i);
        for j in [idx.saturating_sub(1), idx, idx + 1] {
            if j < self.times.len() && (self.times[j] - t).abs() <= tol {
                return Ok(&self.states[j]);
            }
        }
        Err(Error::InsufficientData(format!(
            "no stored snapshot at t = {t} (dt = {}, every {} steps)",
            self.dt,
            (self.times.get(1).copied().unwrap_or(self.horizon) / self.dt).round()
        )))
    }
}

/// Run the implicit scheme to `horizon`, storing every `snap_every`-th state
/// (plus the initial one). Both `horizon / dt` and the number of steps
/// divided by `snap_every` must be integers.
pub fn fp_solve(
    rho0: &Density,
    v: &Potential,
    dt: f64,
    horizon: f64,
    snap_every: usize,
) -> Result<FpSolution> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidInput(format!("dt must be positive, got {dt}")));
    }
    let steps_f = horizon / dt;
    let n_steps = steps_f.round();
    if !(horizon > 0.0) || n_steps < 1.0 || (steps_f - n_steps).abs() > 1e-9 * steps_f.max(1.0) {
        return Err(Error::InvalidInput(format!(
            "horizon {horizon} is not a positive integer multiple of dt = {dt}"
        )));
    }
    let n_steps = n_steps as usize;
    if snap_every == 0 || n_steps % snap_every != 0 {
        return Err(Error::InvalidInput(format!(
            "snapshot stride {snap_every} does not divide the {n_steps} steps"
        )));
    }

    let mut times = Vec::with_capacity(n_steps / snap_every + 1);
    let mut states = Vec::with_capacity(n_steps / snap_every + 1);
    times.push(0.0);
    states.push(rho0.clone());
    let mut current = rho0.clone();
    for k in 1..=n_steps {
        current = fp_step(&current, v, dt)?;
        if k % snap_every == 0 {
            times.push(k as f64 * dt);
            states.push(current.clone());
        }
    }
    Ok(FpSolution { dt, horizon, times, states })
}

/// The two dissipation integrals controlling the decay of the quadratic
/// relative Fisher information: with `u = log rho + V`,
///
/// ```text
/// d/dt F_2(rho) = -( int |u''|^2 rho  +  int |u'|^2 V'' rho ).
/// ```
///
/// Returns `(hessian_term, curvature_term)` in that order.
pub fn dissipation_f2_terms(rho: &Density, v: &Potential) -> (f64, f64) {
    let grid = rho.grid();
    let u = rho.log_values().zip(v.as_fn(), |l, vv| l + vv);
    let du = deriv1(&u);
    let ddu = deriv2(&u);
    let ddv = deriv2(v.as_fn());
    let hess = GridFunction {
        grid,
        values: (0..grid.n)
            .map(|i| ddu.values[i] * ddu.values[i] * rho.values()[i])
            .collect(),
    };
    let curv = GridFunction {
        grid,
        values: (0..grid.n)
            .map(|i| du.values[i] * du.values[i] * ddv.values[i] * rho.values()[i])
            .collect(),
    };
    (integrate(&hess), integrate(&curv))
}

fn trapezoid_over_snapshots(sol: &FpSolution, mut f: impl FnMut(&Density) -> f64) -> f64 {
    let vals: Vec<f64> = sol.states.iter().map(|d| f(d)).collect();
    let mut acc = 0.0;
    for j in 1..vals.len() {
        acc += 0.5 * (sol.times[j] - sol.times[j - 1]) * (vals[j] + vals[j - 1]);
    }
    acc
}

/// Residual of the squared-norm balance law along the stored solution:
///
/// ```text
/// | int rho_T^2 - int rho_0^2 + 2 int_0^T int (|rho'|^2 + rho rho' V') |
/// ```
///
/// with the time integral by trapezoid over the snapshots. Vanishes as
/// `dt, h -> 0`.
pub fn dissipation_l2(sol: &FpSolution, v: &Potential) -> Result<f64> {
    same_grid(sol.states[0].grid(), v.grid(), "dissipation_l2")?;
    let dv = deriv1(v.as_fn());
    let rate = |d: &Density| {
        let dr = deriv1(d.as_fn());
        let grid = d.grid();
        integrate(&GridFunction {
            grid,
            values: (0..grid.n)
                .map(|i| (dr.values[i] + d.values()[i] * dv.values[i]) * dr.values[i])
                .collect(),
        })
    };
    let l2 = |d: &Density| integrate(&d.as_fn().zip(d.as_fn(), |a, b| a * b));
    let total = trapezoid_over_snapshots(sol, rate);
    Ok((l2(sol.states.last().unwrap()) - l2(&sol.states[0]) + 2.0 * total).abs())
}

/// Residual of the Fisher-information balance law along the stored solution:
///
/// ```text
/// | F_2(rho_T) - F_2(rho_0) + int_0^T ( int |u''|^2 rho + int |u'|^2 V'' rho ) |
/// ```
///
/// with `u = log rho + V` and trapezoid time quadrature.
pub fn dissipation_f2(sol: &FpSolution, v: &Potential) -> Result<f64> {
    same_grid(sol.states[0].grid(), v.grid(), "dissipation_f2")?;
    let f_start = fisher_fp(&sol.states[0], v, 2)?;
    let f_end = fisher_fp(sol.states.last().unwrap(), v, 2)?;
    let total = trapezoid_over_snapshots(sol, |d| {
        let (hess, curv) = dissipation_f2_terms(d, v);
        hess + curv
    });
    Ok((f_end - f_start + total).abs())
}
