//! Uniform cell-centered grids on an interval and low-order calculus on them.
//!
//! Every field in the crate lives on the midpoints of `n` equal cells of
//! `[a, b]`. Quadrature is the midpoint rule, first derivatives use central
//! differences with second-order one-sided stencils at the ends, and second
//! derivatives use the usual three-point stencil with four-point one-sided
//! closures. All of these are exact on quadratics, which several oracle
//! tests below rely on.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform grid: `n` cells of width `h = (b - a)/n`, data at cell centers.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid1D {
    pub a: f64,
    pub b: f64,
    pub n: usize,
}

impl Grid1D {
    pub fn new(a: f64, b: f64, n: usize) -> Result<Self> {
        if !a.is_finite() || !b.is_finite() || !(b > a) {
            return Err(Error::InvalidGrid(format!(
                "interval [{a}, {b}] is not a bounded interval with a < b"
            )));
        }
        if n < 8 {
            return Err(Error::InvalidGrid(format!("need at least 8 cells, got {n}")));
        }
        Ok(Grid1D { a, b, n })
    }

    #[inline]
    pub fn h(&self) -> f64 {
        (self.b - self.a) / self.n as f64
    }

    /// Center of cell `i`.
    #[inline]
    pub fn x(&self, i: usize) -> f64 {
        self.a + (i as f64 + 0.5) * self.h()
    }

    /// Left edge of cell `i`; `edge(n) == b`.
    #[inline]
    pub fn edge(&self, i: usize) -> f64 {
        self.a + i as f64 * self.h()
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.x(i)).collect()
    }

    /// Index of the cell containing `x`, clamping to the boundary cells.
    #[inline]
    pub fn cell_of(&self, x: f64) -> usize {
        let i = ((x - self.a) / self.h()).floor();
        (i.max(0.0) as usize).min(self.n - 1)
    }
}

/// Real-valued field sampled at the cell centers of a [`Grid1D`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridFunction {
    pub grid: Grid1D,
    pub values: Vec<f64>,
}

impl GridFunction {
    pub fn new(grid: Grid1D, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n {
            return Err(Error::InvalidInput(format!(
                "grid has {} cells but {} values were supplied",
                grid.n,
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite sample {v}")));
        }
        Ok(GridFunction { grid, values })
    }

    pub fn from_fn(grid: Grid1D, f: impl Fn(f64) -> f64) -> Self {
        let values = (0..grid.n).map(|i| f(grid.x(i))).collect();
        GridFunction { grid, values }
    }

    pub fn constant(grid: Grid1D, c: f64) -> Self {
        GridFunction { grid, values: vec![c; grid.n] }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        GridFunction {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip(&self, other: &GridFunction, f: impl Fn(f64, f64) -> f64) -> GridFunction {
        debug_assert_eq!(self.grid, other.grid);
        GridFunction {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&u, &v)| f(u, v))
                .collect(),
        }
    }

    /// Piecewise-linear interpolation through the cell-center samples,
    /// extended by the boundary values outside `[x(0), x(n-1)]`.
    pub fn eval(&self, x: f64) -> f64 {
        let g = self.grid;
        let n = g.n;
        if x <= g.x(0) {
            return self.values[0];
        }
        if x >= g.x(n - 1) {
            return self.values[n - 1];
        }
        let t = (x - g.x(0)) / g.h();
        let i = (t.floor() as usize).min(n - 2);
        let w = t - i as f64;
        self.values[i] * (1.0 - w) + self.values[i + 1] * w
    }
}

/// Midpoint-rule integral over the whole interval.
pub fn integrate(f: &GridFunction) -> f64 {
    f.grid.h() * f.values.iter().sum::<f64>()
}

/// First derivative: central differences inside, one-sided second-order
/// stencils `(-3 f0 + 4 f1 - f2) / 2h` at the two boundary cells.
pub fn deriv1(f: &GridFunction) -> GridFunction {
    let n = f.grid.n;
    let h = f.grid.h();
    let v = &f.values;
    let mut d = vec![0.0; n];
    d[0] = (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * h);
    for i in 1..n - 1 {
        d[i] = (v[i + 1] - v[i - 1]) / (2.0 * h);
    }
    d[n - 1] = (3.0 * v[n - 1] - 4.0 * v[n - 2] + v[n - 3]) / (2.0 * h);
    GridFunction { grid: f.grid, values: d }
}

/// Second derivative: three-point stencil inside, four-point one-sided
/// closures `(2 f0 - 5 f1 + 4 f2 - f3) / h^2` at the boundary cells.
pub fn deriv2(f: &GridFunction) -> GridFunction {
    let n = f.grid.n;
    let h2 = f.grid.h() * f.grid.h();
    let v = &f.values;
    let mut d = vec![0.0; n];
    d[0] = (2.0 * v[0] - 5.0 * v[1] + 4.0 * v[2] - v[3]) / h2;
    for i in 1..n - 1 {
        d[i] = (v[i + 1] - 2.0 * v[i] + v[i - 1]) / h2;
    }
    d[n - 1] = (2.0 * v[n - 1] - 5.0 * v[n - 2] + 4.0 * v[n - 3] - v[n - 4]) / h2;
    GridFunction { grid: f.grid, values: d }
}

/// Discrete Sobolev norm: `sqrt(sum_{j <= order} ||deriv^j f||_{L2}^2)`
/// for `order` in `{0, 1, 2}`.
pub fn sobolev_norm(f: &GridFunction, order: usize) -> f64 {
    assert!(order <= 2, "orders above 2 are not defined on this stencil set");
    let mut total = integrate(&f.zip(f, |u, v| u * v));
    if order >= 1 {
        let d = deriv1(f);
        total += integrate(&d.zip(&d, |u, v| u * v));
    }
    if order >= 2 {
        let d = deriv2(f);
        total += integrate(&d.zip(&d, |u, v| u * v));
    }
    total.sqrt()
}
