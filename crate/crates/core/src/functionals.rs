//! Probability densities, confining potentials, and the driving functionals:
//! relative entropy `J` and the generalized Fisher information `F_p`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{deriv1, deriv2, integrate, Grid1D, GridFunction};

/// Default lower bound kept between densities and zero.
pub const DEFAULT_FLOOR: f64 = 1e-10;

/// Strictly positive probability density on a grid.
///
/// Invariants enforced at construction: every value is at least `floor`,
/// `floor > 0`, and the midpoint-rule mass equals one within `1e-10`.
#[derive(Clone, Debug, Serialize)]
pub struct Density {
    f: GridFunction,
    floor: f64,
}

impl Density {
    pub fn new(f: GridFunction, floor: f64) -> Result<Self> {
        if !(floor > 0.0) || !floor.is_finite() {
            return Err(Error::InvalidDensity(format!("floor must be positive, got {floor}")));
        }
        if let Some((i, &v)) = f.values.iter().enumerate().find(|(_, &v)| v < floor) {
            return Err(Error::InvalidDensity(format!(
                "value {v:.6e} in cell {i} lies below the floor {floor:.1e}"
            )));
        }
        let mass = integrate(&f);
        if (mass - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidDensity(format!(
                "mass is {mass:.15} instead of 1"
            )));
        }
        Ok(Density { f, floor })
    }

    /// Clamp raw samples to the floor and rescale to unit mass.
    ///
    /// Returns the density together with the applied renormalization factor
    /// (the mass before rescaling), which callers may want to inspect.
    pub fn project(f: GridFunction, floor: f64) -> Result<(Self, f64)> {
        if !(floor > 0.0) || !floor.is_finite() {
            return Err(Error::InvalidDensity(format!("floor must be positive, got {floor}")));
        }
        let mut g = f.map(|v| v.max(floor));
        let factor = integrate(&g);
        if !(factor > 0.0) || !factor.is_finite() {
            return Err(Error::InvalidDensity(format!("cannot normalize mass {factor}")));
        }
        // Re-clamping after a rescale can itself add mass, so alternate the
        // two until they agree; the added mass shrinks by a factor of order
        // `floor` per round, which makes this a two-pass affair in practice.
        for _ in 0..8 {
            let mass = integrate(&g);
            if (mass - 1.0).abs() <= 1e-15 {
                break;
            }
            g = g.map(|v| (v / mass).max(floor));
        }
        let d = Density { f: g, floor };
        Ok((d, factor))
    }

    #[inline]
    pub fn grid(&self) -> Grid1D {
        self.f.grid
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.f.values
    }

    #[inline]
    pub fn as_fn(&self) -> &GridFunction {
        &self.f
    }

    #[inline]
    pub fn floor(&self) -> f64 {
        self.floor
    }

    pub fn log_values(&self) -> GridFunction {
        self.f.map(f64::ln)
    }

    /// Euclidean-in-L2 distance between two densities on the same grid.
    pub fn l2_distance(&self, other: &Density) -> f64 {
        let diff = self.f.zip(&other.f, |u, v| u - v);
        integrate(&diff.zip(&diff, |u, v| u * v)).sqrt()
    }
}

/// Confining potential with certified first- and second-derivative bounds.
///
/// `lip` bounds `|V'|` from above and `lambda` bounds `V''` from below; the
/// decay estimates in the diagnostics module consume exactly these two
/// numbers, so families that know them analytically should pass them in.
#[derive(Clone, Debug, Serialize)]
pub struct Potential {
    v: GridFunction,
    lip: f64,
    lambda: f64,
}

impl Potential {
    pub fn new(v: GridFunction, lip: f64, lambda: f64) -> Result<Self> {
        let dmax = deriv1(&v).values.iter().fold(0.0f64, |m, d| m.max(d.abs()));
        let ddmin = deriv2(&v).values.iter().fold(f64::INFINITY, |m, &d| m.min(d));
        let tol = 1e-8 * (1.0 + dmax.abs());
        if lip + tol < dmax {
            return Err(Error::InvalidInput(format!(
                "lip = {lip} is below the observed derivative bound {dmax}"
            )));
        }
        if lambda > ddmin + 1e-8 * (1.0 + ddmin.abs()) {
            return Err(Error::InvalidInput(format!(
                "lambda = {lambda} exceeds the observed convexity bound {ddmin}"
            )));
        }
        Ok(Potential { v, lip, lambda })
    }

    /// Derive the bounds from the sampled values themselves.
    pub fn from_samples(v: GridFunction) -> Self {
        let lip = deriv1(&v).values.iter().fold(0.0f64, |m, d| m.max(d.abs()));
        let lambda = deriv2(&v).values.iter().fold(f64::INFINITY, |m, &d| m.min(d));
        Potential { v, lip, lambda }
    }

    #[inline]
    pub fn grid(&self) -> Grid1D {
        self.v.grid
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.v.values
    }

    #[inline]
    pub fn as_fn(&self) -> &GridFunction {
        &self.v
    }

    #[inline]
    pub fn lip(&self) -> f64 {
        self.lip
    }

    #[inline]
    pub fn lambda(&self) -> f64 {
        self.lambda
    }
}

pub(crate) fn same_grid(g1: Grid1D, g2: Grid1D, what: &str) -> Result<()> {
    if g1 != g2 {
        return Err(Error::InvalidInput(format!(
            "{what}: grids differ ({:?} vs {:?})",
            g1, g2
        )));
    }
    Ok(())
}

/// Relative entropy `J(rho) = \int rho log rho + \int rho V`.
pub fn entropy_j(rho: &Density, v: &Potential) -> Result<f64> {
    same_grid(rho.grid(), v.grid(), "entropy_j")?;
    if rho.values().iter().any(|&r| r < rho.floor()) {
        return Err(Error::InvalidDensity("density dipped below its floor".into()));
    }
    let h = rho.grid().h();
    let mut total = 0.0;
    for (&r, &vv) in rho.values().iter().zip(v.values()) {
        total += r * r.ln() + r * vv;
    }
    Ok(h * total)
}

/// Generalized Fisher information
/// `F_p(rho) = (1/p) \int |rho'/rho + V'|^p rho` for integer `p >= 2`.
pub fn fisher_fp(rho: &Density, v: &Potential, p: u32) -> Result<f64> {
    same_grid(rho.grid(), v.grid(), "fisher_fp")?;
    if p < 2 {
        return Err(Error::InvalidInput(format!("fisher_fp needs p >= 2, got {p}")));
    }
    let dr = deriv1(rho.as_fn());
    let dv = deriv1(v.as_fn());
    let h = rho.grid().h();
    let mut total = 0.0;
    for i in 0..rho.grid().n {
        let slope = dr.values[i] / rho.values()[i] + dv.values[i];
        total += slope.abs().powi(p as i32) * rho.values()[i];
    }
    Ok(h * total / p as f64)
}

/// Normalized Gibbs measure `exp(-V)/Z` on the grid of `v`.
pub fn gibbs_density(v: &Potential, floor: f64) -> Result<Density> {
    let vmin = v.values().iter().cloned().fold(f64::INFINITY, f64::min);
    let w = v.as_fn().map(|vv| (-(vv - vmin)).exp());
    let z = integrate(&w);
    let (d, _) = Density::project(w.map(|wv| wv / z), floor)?;
    Ok(d)
}

/// Second derivative of `log rho + V`; shared by several dissipation checks.
pub fn log_gibbs_hessian(rho: &Density, v: &Potential) -> GridFunction {
    let u = rho.log_values().zip(v.as_fn(), |l, vv| l + vv);
    deriv2(&u)
}
