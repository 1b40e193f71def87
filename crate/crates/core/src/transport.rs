//! Exact one-dimensional optimal transport between grid densities.
//!
//! A grid density is piecewise constant, so its CDF is piecewise linear and
//! invertible in closed form. Everything in this module exploits that: the
//! quadratic transport cost is integrated exactly by merging the breakpoints
//! of the two quantile functions, the monotone maps are exact compositions
//! `T = X_g \circ F_rho`, and the Kantorovich potentials are obtained by
//! exact piecewise integration of the displacement. No sampling resolution
//! enters any of these quantities.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::functionals::{same_grid, Density};
use crate::grid::{integrate, GridFunction};

/// Quantile function sampled at the mid-levels `s_j = (j + 1/2)/m`.
#[derive(Clone, Debug, Serialize)]
pub struct QuantileFn {
    pub m: usize,
    /// Domain endpoints; the interpolant is anchored at `(0, a)` and `(1, b)`.
    pub a: f64,
    pub b: f64,
    /// Strictly increasing positions `x_j = X(s_j)` inside `[a, b]`.
    pub x: Vec<f64>,
}

impl QuantileFn {
    pub fn new(a: f64, b: f64, x: Vec<f64>) -> Result<Self> {
        let m = x.len();
        if m < 2 {
            return Err(Error::InvalidInput(format!("need at least 2 quantile nodes, got {m}")));
        }
        let mut prev = a;
        for (j, &xi) in x.iter().enumerate() {
            if !(xi > prev) || xi >= b {
                return Err(Error::MonotonicityLoss(format!(
                    "quantile node {j} at {xi} does not increase strictly inside ({a}, {b})"
                )));
            }
            prev = xi;
        }
        Ok(QuantileFn { m, a, b, x })
    }

    #[inline]
    pub fn s(&self, j: usize) -> f64 {
        (j as f64 + 0.5) / self.m as f64
    }

    /// Piecewise-linear evaluation with the `(0, a)` and `(1, b)` anchors.
    pub fn eval(&self, s: f64) -> f64 {
        let s = s.clamp(0.0, 1.0);
        let m = self.m as f64;
        let t = s * m - 0.5;
        if t <= 0.0 {
            let w = s / (0.5 / m);
            return self.a + w * (self.x[0] - self.a);
        }
        if t >= (self.m - 1) as f64 {
            let w = (s - self.s(self.m - 1)) / (0.5 / m);
            return self.x[self.m - 1] + w * (self.b - self.x[self.m - 1]);
        }
        let j = t.floor() as usize;
        let w = t - j as f64;
        self.x[j] * (1.0 - w) + self.x[j + 1] * w
    }
}

/// Monotone rearrangement data between two densities on a common grid.
///
/// `t_map` pushes `source` onto `target`, `s_map` is its inverse, and the
/// potentials satisfy `grad phi = id - T`, `grad psi = id - S`, both
/// normalized to integrate to zero. `w2` is the exact quadratic cost.
#[derive(Clone, Debug, Serialize)]
pub struct TransportPlan {
    pub source: Density,
    pub target: Density,
    pub t_map: GridFunction,
    pub s_map: GridFunction,
    pub phi: GridFunction,
    pub psi: GridFunction,
    pub w2: f64,
}

/// Piecewise-linear nondecreasing curve through knots `(s_i, x_i)`.
#[derive(Clone, Debug)]
pub(crate) struct PlCurve {
    s: Vec<f64>,
    x: Vec<f64>,
}

impl PlCurve {
    pub(crate) fn eval(&self, s: f64) -> f64 {
        let s = s.clamp(self.s[0], *self.s.last().unwrap());
        match self.s.binary_search_by(|probe| probe.partial_cmp(&s).unwrap()) {
            Ok(i) => self.x[i],
            Err(i) => {
                let (s0, s1) = (self.s[i - 1], self.s[i]);
                let w = (s - s0) / (s1 - s0);
                self.x[i - 1] * (1.0 - w) + self.x[i] * w
            }
        }
    }
}

/// Normalized cumulative masses at the `n + 1` cell edges.
fn edge_masses(rho: &Density) -> Vec<f64> {
    let n = rho.grid().n;
    let h = rho.grid().h();
    let mut cum = Vec::with_capacity(n + 1);
    cum.push(0.0);
    let mut acc = 0.0;
    for &v in rho.values() {
        acc += h * v;
        cum.push(acc);
    }
    let total = cum[n];
    for c in cum.iter_mut() {
        *c /= total;
    }
    cum[n] = 1.0;
    cum
}

/// Exact quantile function of the piecewise-constant density.
pub(crate) fn quantile_curve(rho: &Density) -> PlCurve {
    let g = rho.grid();
    let s = edge_masses(rho);
    let x = (0..=g.n).map(|i| g.edge(i)).collect();
    PlCurve { s, x }
}

/// Exact CDF of the piecewise-constant density at an arbitrary point.
fn cdf_at(edges_mass: &[f64], rho: &Density, x: f64) -> f64 {
    let g = rho.grid();
    if x <= g.a {
        return 0.0;
    }
    if x >= g.b {
        return 1.0;
    }
    let c = g.cell_of(x);
    let inside = (x - g.edge(c)) / g.h();
    edges_mass[c] + inside * (edges_mass[c + 1] - edges_mass[c])
}

/// Cumulative mass up to and including each cell.
pub fn cdf(rho: &Density) -> GridFunction {
    let m = edge_masses(rho);
    GridFunction {
        grid: rho.grid(),
        values: m[1..].to_vec(),
    }
}

/// Quantile nodes `X((j + 1/2)/m)` by exact inversion of the CDF.
pub fn quantile(rho: &Density, m: usize) -> Result<QuantileFn> {
    if m < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 quantile nodes, got {m}")));
    }
    let curve = quantile_curve(rho);
    let x = (0..m)
        .map(|j| curve.eval((j as f64 + 0.5) / m as f64))
        .collect();
    QuantileFn::new(rho.grid().a, rho.grid().b, x)
}

/// Exact `\int_0^1 (c1(s) - c2(s))^2 ds` for two piecewise-linear curves.
pub(crate) fn pl_l2_sq(c1: &PlCurve, c2: &PlCurve) -> f64 {
    let mut knots: Vec<f64> = c1.s.iter().chain(c2.s.iter()).cloned().collect();
    knots.sort_by(|a, b| a.partial_cmp(b).unwrap());
    knots.dedup();
    let mut total = 0.0;
    for w in knots.windows(2) {
        let (s0, s1) = (w[0], w[1]);
        let ds = s1 - s0;
        if ds <= 0.0 {
            continue;
        }
        let d0 = c1.eval(s0) - c2.eval(s0);
        let dm = c1.eval(0.5 * (s0 + s1)) - c2.eval(0.5 * (s0 + s1));
        let d1 = c1.eval(s1) - c2.eval(s1);
        // Simpson is exact here: the integrand is quadratic on the interval.
        total += ds / 6.0 * (d0 * d0 + 4.0 * dm * dm + d1 * d1);
    }
    total
}

/// Quadratic Wasserstein distance between two densities on the same grid.
pub fn w2_distance(rho: &Density, g: &Density) -> Result<f64> {
    same_grid(rho.grid(), g.grid(), "w2_distance")?;
    Ok(pl_l2_sq(&quantile_curve(rho), &quantile_curve(g)).sqrt())
}

/// Exact antiderivative values of `y - T(y)` at the cell centers, where
/// `T = X_target(F_source)`. The integrand is piecewise linear with kinks at
/// the source cell edges and wherever `F_source` crosses a knot level of the
/// target quantile; integrating piece by piece keeps the result exact.
fn potential_values(source: &Density, target_curve: &PlCurve, src_edges: &[f64]) -> Vec<f64> {
    let g = source.grid();
    let n = g.n;
    let disp = |y: f64| y - target_curve.eval(cdf_at(src_edges, source, y));

    let mut breaks: Vec<f64> = (0..=n).map(|i| g.edge(i)).collect();
    let src_quant = PlCurve {
        s: src_edges.to_vec(),
        x: (0..=n).map(|i| g.edge(i)).collect(),
    };
    for &level in &target_curve.s {
        if level > 0.0 && level < 1.0 {
            breaks.push(src_quant.eval(level));
        }
    }
    breaks.sort_by(|a, b| a.partial_cmp(b).unwrap());
    breaks.dedup_by(|a, b| (*a - *b).abs() < 1e-15);

    let mut phi = vec![0.0; n];
    let mut acc = 0.0;
    let mut next_center = 0usize;
    for w in breaks.windows(2) {
        let (p0, p1) = (w[0], w[1]);
        if p1 <= p0 {
            continue;
        }
        let d0 = disp(p0);
        let d1 = disp(p1);
        while next_center < n && g.x(next_center) <= p1 {
            let xc = g.x(next_center);
            phi[next_center] = acc + (xc - p0) * 0.5 * (d0 + disp(xc));
            next_center += 1;
        }
        acc += (p1 - p0) * 0.5 * (d0 + d1);
    }
    phi
}

/// Monotone transport data between `rho` and `g`, with exact cost and maps.
pub fn optimal_plan(rho: &Density, g: &Density) -> Result<TransportPlan> {
    same_grid(rho.grid(), g.grid(), "optimal_plan")?;
    let grid = rho.grid();
    let src_edges = edge_masses(rho);
    let tgt_edges = edge_masses(g);
    let src_curve = quantile_curve(rho);
    let tgt_curve = quantile_curve(g);

    let t_map = GridFunction {
        grid,
        values: (0..grid.n)
            .map(|i| tgt_curve.eval(cdf_at(&src_edges, rho, grid.x(i))))
            .collect(),
    };
    let s_map = GridFunction {
        grid,
        values: (0..grid.n)
            .map(|i| src_curve.eval(cdf_at(&tgt_edges, g, grid.x(i))))
            .collect(),
    };

    let mut phi = GridFunction {
        grid,
        values: potential_values(rho, &tgt_curve, &src_edges),
    };
    let mut psi = GridFunction {
        grid,
        values: potential_values(g, &src_curve, &tgt_edges),
    };
    let phi_mean = integrate(&phi) / (grid.b - grid.a);
    let psi_mean = integrate(&psi) / (grid.b - grid.a);
    phi = phi.map(|v| v - phi_mean);
    psi = psi.map(|v| v - psi_mean);

    let w2 = pl_l2_sq(&src_curve, &tgt_curve).sqrt();
    Ok(TransportPlan {
        source: rho.clone(),
        target: g.clone(),
        t_map,
        s_map,
        phi,
        psi,
        w2,
    })
}

/// Largest displacement `max_i |x_i - T(x_i)|` of the plan.
pub fn displacement_sup(plan: &TransportPlan) -> f64 {
    let grid = plan.t_map.grid;
    plan.t_map
        .values
        .iter()
        .enumerate()
        .fold(0.0f64, |m, (i, &t)| m.max((grid.x(i) - t).abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functionals::DEFAULT_FLOOR;
    use crate::grid::Grid1D;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn unit_grid(n: usize) -> Grid1D {
        Grid1D::new(0.0, 1.0, n).unwrap()
    }

    fn uniform(n: usize) -> Density {
        Density::new(GridFunction::constant(unit_grid(n), 1.0), DEFAULT_FLOOR).unwrap()
    }

    fn cosine_density(n: usize, amp: f64, freq: f64) -> Density {
        let f = GridFunction::from_fn(unit_grid(n), |x| 1.0 + amp * (freq * PI * x).cos());
        Density::project(f, DEFAULT_FLOOR).unwrap().0
    }

    /// Nearly `height * 1_{[lo, hi]}`, floored elsewhere.
    fn block_density(n: usize, lo: f64, hi: f64) -> Density {
        let g = unit_grid(n);
        let f = GridFunction::from_fn(g, |x| if x > lo && x < hi { 1.0 } else { 1e-9 });
        Density::project(f, 1e-12).unwrap().0
    }

    #[test]
    fn cdf_of_uniform_tracks_position() {
        let d = uniform(64);
        let f = cdf(&d);
        for i in 0..64 {
            assert!((f.values[i] - f.grid.x(i)).abs() <= f.grid.h() / 2.0 + 1e-12);
        }
        assert!((f.values[63] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cdf_increments_are_cell_masses() {
        let d = cosine_density(128, 0.3, 1.0);
        let f = cdf(&d);
        let h = f.grid.h();
        for i in 1..128 {
            let inc = f.values[i] - f.values[i - 1];
            assert!((inc - h * d.values()[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn cdf_of_half_block_hits_half_at_quarter() {
        let d = block_density(128, 0.0, 0.5);
        let f = cdf(&d);
        let g = f.grid;
        let i = (0..128).min_by_key(|&i| ((g.x(i) - 0.25).abs() * 1e9) as u64).unwrap();
        assert!((f.values[i] - 0.5).abs() < 2.5 * g.h());
    }

    #[test]
    fn quantile_of_uniform_is_affine() {
        let d = uniform(64);
        let q = quantile(&d, 32).unwrap();
        for j in 0..32 {
            assert!((q.x[j] - q.s(j)).abs() < 1e-12);
        }
    }

    #[test]
    fn quantile_inverts_cdf_exactly() {
        let d = cosine_density(128, 0.4, 2.0);
        let q = quantile(&d, 257).unwrap();
        let edges = edge_masses(&d);
        for j in 0..q.m {
            let back = cdf_at(&edges, &d, q.x[j]);
            assert!((back - q.s(j)).abs() < 1e-12);
        }
    }

    #[test]
    fn quantile_of_half_block_concentrates_left() {
        let d = block_density(256, 0.0, 0.5);
        let q = quantile(&d, 64).unwrap();
        // Median of the block sits at 1/4.
        let mid = q.eval(0.5);
        assert!((mid - 0.25).abs() < 1e-2, "median {mid}");
    }

    #[test]
    fn quantile_eval_hits_anchors() {
        let d = cosine_density(64, 0.2, 1.0);
        let q = quantile(&d, 16).unwrap();
        assert_eq!(q.eval(0.0), 0.0);
        assert_eq!(q.eval(1.0), 1.0);
    }

    #[test]
    fn w2_of_identical_densities_vanishes() {
        let d = cosine_density(128, 0.3, 1.0);
        assert!(w2_distance(&d, &d).unwrap() < 1e-12);
    }

    #[test]
    fn w2_between_disjoint_blocks_is_the_shift() {
        let a = block_density(256, 0.0, 0.5);
        let b = block_density(256, 0.5, 1.0);
        let w = w2_distance(&a, &b).unwrap();
        assert!((w - 0.5).abs() < 2e-2, "w2 {w}");
    }

    #[test]
    fn w2_uniform_to_half_block_matches_closed_form() {
        // Quantile difference is s/2, so W2^2 = 1/12.
        let a = uniform(256);
        let b = block_density(256, 0.0, 0.5);
        let w = w2_distance(&a, &b).unwrap();
        let exact = 0.5 / 3.0f64.sqrt();
        assert!((w - exact).abs() < 2e-2, "w2 {w} vs {exact}");
    }

    #[test]
    fn plan_on_identical_densities_is_the_identity() {
        let d = cosine_density(128, 0.3, 1.0);
        let p = optimal_plan(&d, &d).unwrap();
        for i in 0..128 {
            assert!((p.t_map.values[i] - p.t_map.grid.x(i)).abs() < 1e-12);
            assert!(p.phi.values[i].abs() < 1e-12);
        }
        assert!(p.w2 < 1e-12);
        assert!(displacement_sup(&p) < 1e-12);
    }

    #[test]
    fn contraction_to_half_interval_has_quadratic_potential() {
        // T(x) = x/2, so phi = x^2/4 - 1/12 after normalization.
        let src = uniform(512);
        let tgt = block_density(512, 0.0, 0.5);
        let p = optimal_plan(&src, &tgt).unwrap();
        let g = p.phi.grid;
        for i in 0..512 {
            let x = g.x(i);
            assert!((p.t_map.values[i] - x / 2.0).abs() < 1e-2);
            assert!((p.phi.values[i] - (x * x / 4.0 - 1.0 / 12.0)).abs() < 1e-2);
        }
    }

    #[test]
    fn plan_cost_equals_w2_distance() {
        let a = cosine_density(512, 0.3, 1.0);
        let b = cosine_density(512, 0.2, 2.0);
        let p = optimal_plan(&a, &b).unwrap();
        let w = w2_distance(&a, &b).unwrap();
        assert!((p.w2 - w).abs() < 1e-12);
    }

    #[test]
    fn pushforward_moments_match() {
        let src = cosine_density(512, 0.3, 1.0);
        let tgt = cosine_density(512, 0.25, 2.0);
        let p = optimal_plan(&src, &tgt).unwrap();
        let lhs = integrate(&p.t_map.zip(src.as_fn(), |t, r| t * r));
        let rhs = integrate(&GridFunction::from_fn(unit_grid(512), |x| x).zip(tgt.as_fn(), |y, g| y * g));
        assert!((lhs - rhs).abs() < 2e-6, "moment gap {:.3e}", (lhs - rhs).abs());

        let lhs2 = integrate(&p.t_map.zip(src.as_fn(), |t, r| t * t * r));
        let rhs2 = integrate(&GridFunction::from_fn(unit_grid(512), |x| x * x).zip(tgt.as_fn(), |y, g| y * g));
        assert!((lhs2 - rhs2).abs() < 2e-6, "second moment gap {:.3e}", (lhs2 - rhs2).abs());
    }

    #[test]
    fn duality_gap_is_constant() {
        let src = cosine_density(512, 0.3, 1.0);
        let tgt = cosine_density(512, 0.25, 2.0);
        let p = optimal_plan(&src, &tgt).unwrap();
        let g = p.phi.grid;
        let gaps: Vec<f64> = (0..512)
            .map(|i| {
                let x = g.x(i);
                let t = p.t_map.values[i];
                p.phi.values[i] + p.psi.eval(t) - 0.5 * (x - t) * (x - t)
            })
            .collect();
        let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
        let dev = gaps.iter().fold(0.0f64, |m, gp| m.max((gp - mean).abs()));
        assert!(dev < 1e-3, "duality deviation {dev:.3e}");
    }

    #[test]
    fn maps_invert_each_other() {
        let src = cosine_density(256, 0.3, 1.0);
        let tgt = cosine_density(256, 0.2, 2.0);
        let p = optimal_plan(&src, &tgt).unwrap();
        let g = p.t_map.grid;
        for i in 8..248 {
            let x = g.x(i);
            let roundtrip = p.s_map.eval(p.t_map.values[i]);
            assert!((roundtrip - x).abs() < 3.0 * g.h(), "cell {i}");
        }
    }

    #[test]
    fn displacement_sup_sees_a_translation() {
        let n = 512;
        let g = unit_grid(n);
        let bump = |c: f64| {
            let f = GridFunction::from_fn(g, |x| (-(x - c).powi(2) / 0.01).exp().max(1e-9));
            Density::project(f, 1e-12).unwrap().0
        };
        let p = optimal_plan(&bump(0.45), &bump(0.55)).unwrap();
        let d = displacement_sup(&p);
        assert!(d > 0.08 && d < 0.13, "displacement {d}");
    }

    proptest! {
        #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

        #[test]
        fn t_map_is_monotone_into_the_domain(
            a1 in -0.35f64..0.35,
            a2 in -0.2f64..0.2,
            b1 in -0.35f64..0.35,
        ) {
            let n = 96;
            let src = Density::project(
                GridFunction::from_fn(unit_grid(n), |x| 1.0 + a1 * (PI * x).cos() + a2 * (2.0 * PI * x).cos()),
                DEFAULT_FLOOR,
            ).unwrap().0;
            let tgt = Density::project(
                GridFunction::from_fn(unit_grid(n), |x| 1.0 + b1 * (PI * x).cos()),
                DEFAULT_FLOOR,
            ).unwrap().0;
            let p = optimal_plan(&src, &tgt).unwrap();
            for w in p.t_map.values.windows(2) {
                prop_assert!(w[1] >= w[0] - 1e-14);
            }
            for &t in &p.t_map.values {
                prop_assert!((0.0..=1.0).contains(&t));
            }
        }

        #[test]
        fn w2_is_symmetric_and_triangular(
            a in -0.3f64..0.3,
            b in -0.3f64..0.3,
            c in -0.3f64..0.3,
        ) {
            let n = 64;
            let mk = |amp: f64, freq: f64| Density::project(
                GridFunction::from_fn(unit_grid(n), |x| 1.0 + amp * (freq * PI * x).cos()),
                DEFAULT_FLOOR,
            ).unwrap().0;
            let (da, db, dc) = (mk(a, 1.0), mk(b, 2.0), mk(c, 3.0));
            let ab = w2_distance(&da, &db).unwrap();
            let ba = w2_distance(&db, &da).unwrap();
            prop_assert!((ab - ba).abs() < 1e-14);
            let ac = w2_distance(&da, &dc).unwrap();
            let bc = w2_distance(&db, &dc).unwrap();
            prop_assert!(ac <= ab + bc + 1e-8);
        }

        #[test]
        fn potentials_are_mean_free(amp in -0.3f64..0.3) {
            let n = 64;
            let src = Density::project(
                GridFunction::from_fn(unit_grid(n), |x| 1.0 + amp * (PI * x).cos()),
                DEFAULT_FLOOR,
            ).unwrap().0;
            let tgt = uniform(n);
            let p = optimal_plan(&src, &tgt).unwrap();
            prop_assert!(integrate(&p.phi).abs() < 1e-12);
            prop_assert!(integrate(&p.psi).abs() < 1e-12);
        }
    }
}
