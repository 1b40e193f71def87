//! Named potential and initial-density families.
//!
//! Configuration files and the command line describe problem instances with
//! short strings such as `quadratic:0.5,4` or `cosine:0.3,1`; this module
//! parses those strings and realizes them on a grid. Tabulated data comes
//! from two-column CSV files and is resampled by linear interpolation.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functionals::{gibbs_density, Density, Potential};
use crate::grid::{deriv1, deriv2, Grid1D, GridFunction};

/// Drift potential family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PotentialFamily {
    Zero,
    Quadratic { center: f64, strength: f64 },
    DoubleWell,
    Tabulated { path: String },
}

/// Initial-density family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DensityFamily {
    Uniform,
    Cosine { amplitude: f64, frequency: u32 },
    Gibbs,
    Tabulated { path: String },
}

impl fmt::Display for PotentialFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PotentialFamily::Zero => write!(f, "zero"),
            PotentialFamily::Quadratic { center, strength } => {
                write!(f, "quadratic:{center},{strength}")
            }
            PotentialFamily::DoubleWell => write!(f, "doublewell"),
            PotentialFamily::Tabulated { path } => write!(f, "tabulated:{path}"),
        }
    }
}

impl fmt::Display for DensityFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DensityFamily::Uniform => write!(f, "uniform"),
            DensityFamily::Cosine { amplitude, frequency } => {
                write!(f, "cosine:{amplitude},{frequency}")
            }
            DensityFamily::Gibbs => write!(f, "gibbs"),
            DensityFamily::Tabulated { path } => write!(f, "tabulated:{path}"),
        }
    }
}

fn two_floats(args: &str, what: &str) -> Result<(f64, f64)> {
    let mut it = args.splitn(2, ',');
    let first = it.next().unwrap_or("");
    let second = it.next().ok_or_else(|| {
        Error::InvalidInput(format!("{what} needs two comma-separated arguments, got '{args}'"))
    })?;
    let a: f64 = first
        .trim()
        .parse()
        .map_err(|_| Error::InvalidInput(format!("{what}: cannot parse '{first}' as a number")))?;
    let b: f64 = second
        .trim()
        .parse()
        .map_err(|_| Error::InvalidInput(format!("{what}: cannot parse '{second}' as a number")))?;
    Ok((a, b))
}

impl FromStr for PotentialFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (head, args) = match s.split_once(':') {
            Some((h, a)) => (h.trim(), Some(a.trim())),
            None => (s.trim(), None),
        };
        match (head, args) {
            ("zero", None) => Ok(PotentialFamily::Zero),
            ("doublewell", None) => Ok(PotentialFamily::DoubleWell),
            ("quadratic", Some(a)) => {
                let (center, strength) = two_floats(a, "quadratic")?;
                if strength < 0.0 {
                    return Err(Error::InvalidInput(format!(
                        "quadratic strength must be nonnegative, got {strength}"
                    )));
                }
                Ok(PotentialFamily::Quadratic { center, strength })
            }
            ("tabulated", Some(p)) if !p.is_empty() => {
                Ok(PotentialFamily::Tabulated { path: p.to_string() })
            }
            _ => Err(Error::InvalidInput(format!(
                "unknown potential '{s}'; expected zero, quadratic:CENTER,STRENGTH, \
                 doublewell, or tabulated:PATH"
            ))),
        }
    }
}

impl FromStr for DensityFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (head, args) = match s.split_once(':') {
            Some((h, a)) => (h.trim(), Some(a.trim())),
            None => (s.trim(), None),
        };
        match (head, args) {
            ("uniform", None) => Ok(DensityFamily::Uniform),
            ("gibbs", None) => Ok(DensityFamily::Gibbs),
            ("cosine", Some(a)) => {
                let (amplitude, freq) = two_floats(a, "cosine")?;
                if freq < 0.0 || freq.fract() != 0.0 || freq > u32::MAX as f64 {
                    return Err(Error::InvalidInput(format!(
                        "cosine frequency must be a nonnegative integer, got {freq}"
                    )));
                }
                if amplitude.abs() >= 1.0 {
                    return Err(Error::InvalidInput(format!(
                        "cosine amplitude must satisfy |a| < 1 to stay positive, got {amplitude}"
                    )));
                }
                Ok(DensityFamily::Cosine { amplitude, frequency: freq as u32 })
            }
            ("tabulated", Some(p)) if !p.is_empty() => {
                Ok(DensityFamily::Tabulated { path: p.to_string() })
            }
            _ => Err(Error::InvalidInput(format!(
                "unknown density '{s}'; expected uniform, cosine:AMPLITUDE,FREQUENCY, \
                 gibbs, or tabulated:PATH"
            ))),
        }
    }
}

/// Load a two-column `x,value` CSV table. A single leading header line is
/// tolerated; the abscissae must be strictly increasing.
fn load_table(path: &str) -> Result<Vec<(f64, f64)>> {
    let text = std::fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut fields = line.splitn(2, ',');
        let xs = fields.next().unwrap_or("").trim();
        let ys = fields.next().unwrap_or("").trim();
        match (xs.parse::<f64>(), ys.parse::<f64>()) {
            (Ok(x), Ok(y)) => rows.push((x, y)),
            _ if rows.is_empty() && lineno == 0 => continue,
            _ => {
                return Err(Error::InvalidInput(format!(
                    "{path}:{}: expected 'x,value', got '{line}'",
                    lineno + 1
                )))
            }
        }
    }
    if rows.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "{path}: need at least two data rows, got {}",
            rows.len()
        )));
    }
    for w in rows.windows(2) {
        if w[1].0 <= w[0].0 {
            return Err(Error::InvalidInput(format!(
                "{path}: abscissae must be strictly increasing ({} then {})",
                w[0].0, w[1].0
            )));
        }
    }
    Ok(rows)
}

fn interp(table: &[(f64, f64)], x: f64) -> f64 {
    let (x0, y0) = table[0];
    let (xn, yn) = table[table.len() - 1];
    if x <= x0 {
        return y0;
    }
    if x >= xn {
        return yn;
    }
    let idx = table.partition_point(|&(t, _)| t <= x);
    let (xl, yl) = table[idx - 1];
    let (xr, yr) = table[idx];
    yl + (yr - yl) * (x - xl) / (xr - xl)
}

impl PotentialFamily {
    pub fn realize(&self, grid: Grid1D) -> Result<Potential> {
        match self {
            PotentialFamily::Zero => {
                Potential::new(GridFunction::from_fn(grid, |_| 0.0), 0.0, 0.0)
            }
            PotentialFamily::Quadratic { center, strength } => {
                let c = *center;
                let s = *strength;
                let f = GridFunction::from_fn(grid, |x| s * (x - c) * (x - c));
                let lip = 2.0 * s * (grid.a - c).abs().max((grid.b - c).abs());
                Potential::new(f, lip, 2.0 * s)
            }
            PotentialFamily::DoubleWell => {
                let mid = 0.5 * (grid.a + grid.b);
                let f = GridFunction::from_fn(grid, |x| {
                    let u = x - mid;
                    6.0 * (u * u - 0.09).powi(2)
                });
                from_samples(f)
            }
            PotentialFamily::Tabulated { path } => {
                let table = load_table(path)?;
                from_samples(GridFunction::from_fn(grid, |x| interp(&table, x)))
            }
        }
    }
}

/// Build a potential from raw samples, estimating the Lipschitz and
/// curvature constants from grid derivatives.
fn from_samples(f: GridFunction) -> Result<Potential> {
    let lip = deriv1(&f).values.iter().fold(0.0f64, |m, &x| m.max(x.abs()));
    let lambda = deriv2(&f).values.iter().fold(f64::INFINITY, |m, &x| m.min(x));
    Potential::new(f, lip, lambda)
}

impl DensityFamily {
    pub fn realize(&self, grid: Grid1D, v: &Potential, floor: f64) -> Result<Density> {
        match self {
            DensityFamily::Uniform => {
                let h = 1.0 / (grid.b - grid.a);
                Ok(Density::project(GridFunction::from_fn(grid, |_| h), floor)?.0)
            }
            DensityFamily::Cosine { amplitude, frequency } => {
                let amp = *amplitude;
                let k = *frequency as f64;
                let len = grid.b - grid.a;
                let f = GridFunction::from_fn(grid, |x| {
                    (1.0 + amp * (k * std::f64::consts::PI * (x - grid.a) / len).cos()) / len
                });
                Ok(Density::project(f, floor)?.0)
            }
            DensityFamily::Gibbs => gibbs_density(v, floor),
            DensityFamily::Tabulated { path } => {
                let table = load_table(path)?;
                let f = GridFunction::from_fn(grid, |x| interp(&table, x));
                Ok(Density::project(f, floor)?.0)
            }
        }
    }
}

/// Draw a smooth random density as a short cosine series; amplitudes are
/// large enough that the floor clamp activates on some draws.
pub fn random_floored_density<R: Rng>(grid: Grid1D, floor: f64, rng: &mut R) -> Result<Density> {
    // The first mode may exceed 1 in magnitude, so raw profiles regularly dip
    // below zero and exercise the clamp; higher modes only add texture.
    let mut coeffs = vec![rng.gen_range(0.6..1.25) * if rng.gen::<bool>() { 1.0 } else { -1.0 }];
    for j in 2..=4 {
        let cap = 0.4 / j as f64;
        coeffs.push(rng.gen_range(-cap..cap));
    }
    let len = grid.b - grid.a;
    let f = GridFunction::from_fn(grid, |x| {
        let xh = (x - grid.a) / len;
        let mut val = 1.0;
        for (j, a) in coeffs.iter().enumerate() {
            val += a * ((j + 1) as f64 * std::f64::consts::PI * xh).cos();
        }
        val / len
    });
    Ok(Density::project(f, floor)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functionals::DEFAULT_FLOOR;
    use crate::grid::integrate;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::io::Write;

    fn unit_grid(n: usize) -> Grid1D {
        Grid1D::new(0.0, 1.0, n).unwrap()
    }

    #[test]
    fn family_strings_parse_and_round_trip() {
        let cases = [
            ("zero", PotentialFamily::Zero),
            ("quadratic:0.5,4", PotentialFamily::Quadratic { center: 0.5, strength: 4.0 }),
            ("doublewell", PotentialFamily::DoubleWell),
            ("tabulated:v.csv", PotentialFamily::Tabulated { path: "v.csv".into() }),
        ];
        for (s, expect) in cases {
            let parsed: PotentialFamily = s.parse().unwrap();
            assert_eq!(parsed, expect);
            assert_eq!(parsed.to_string().parse::<PotentialFamily>().unwrap(), expect);
        }
        let cases = [
            ("uniform", DensityFamily::Uniform),
            ("cosine:0.3,1", DensityFamily::Cosine { amplitude: 0.3, frequency: 1 }),
            ("gibbs", DensityFamily::Gibbs),
            ("tabulated:rho.csv", DensityFamily::Tabulated { path: "rho.csv".into() }),
        ];
        for (s, expect) in cases {
            let parsed: DensityFamily = s.parse().unwrap();
            assert_eq!(parsed, expect);
            assert_eq!(parsed.to_string().parse::<DensityFamily>().unwrap(), expect);
        }
    }

    #[test]
    fn malformed_family_strings_are_rejected() {
        for s in [
            "quadratic",
            "quadratic:1",
            "quadratic:a,b",
            "quadratic:0.5,-1",
            "zero:1",
            "tabulated:",
            "banana",
        ] {
            assert!(s.parse::<PotentialFamily>().is_err(), "accepted '{s}'");
        }
        for s in ["cosine", "cosine:0.3", "cosine:1.5,1", "cosine:0.3,1.5", "gibbs:x", "what"] {
            assert!(s.parse::<DensityFamily>().is_err(), "accepted '{s}'");
        }
    }

    #[test]
    fn quadratic_realization_has_analytic_constants() {
        let fam: PotentialFamily = "quadratic:0.5,4".parse().unwrap();
        let v = fam.realize(unit_grid(64)).unwrap();
        assert!((v.lip() - 4.0).abs() < 1e-12);
        assert!((v.lambda() - 8.0).abs() < 1e-12);
        let centers = unit_grid(64).centers();
        for (val, x) in v.values().iter().zip(&centers) {
            assert!((val - 4.0 * (x - 0.5) * (x - 0.5)).abs() < 1e-14);
        }
    }

    #[test]
    fn double_well_realization_has_negative_curvature() {
        let v = PotentialFamily::DoubleWell.realize(unit_grid(256)).unwrap();
        assert!(v.lambda() < -2.0, "lambda = {}", v.lambda());
        assert!(v.lip() > 1.5 && v.lip() < 2.5, "lip = {}", v.lip());
    }

    #[test]
    fn density_families_are_unit_mass_and_floored() {
        let grid = unit_grid(128);
        let v = PotentialFamily::Quadratic { center: 0.5, strength: 4.0 }
            .realize(grid)
            .unwrap();
        for fam in [
            DensityFamily::Uniform,
            DensityFamily::Cosine { amplitude: 0.3, frequency: 1 },
            DensityFamily::Cosine { amplitude: 0.0, frequency: 0 },
            DensityFamily::Gibbs,
        ] {
            let d = fam.realize(grid, &v, DEFAULT_FLOOR).unwrap();
            assert!((integrate(d.as_fn()) - 1.0).abs() < 1e-12, "{fam}");
            assert!(d.values().iter().all(|&r| r >= DEFAULT_FLOOR), "{fam}");
        }
        let flat = DensityFamily::Cosine { amplitude: 0.0, frequency: 0 }
            .realize(grid, &v, DEFAULT_FLOOR)
            .unwrap();
        for r in flat.values() {
            assert!((r - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn tabulated_files_resample_by_linear_interpolation() {
        let dir = tempfile::tempdir().unwrap();
        let vpath = dir.path().join("v.csv");
        let mut fh = std::fs::File::create(&vpath).unwrap();
        writeln!(fh, "x,value").unwrap();
        for i in 0..=10 {
            let x = i as f64 / 10.0;
            writeln!(fh, "{x},{}", 2.0 * x).unwrap();
        }
        drop(fh);
        let fam = PotentialFamily::Tabulated { path: vpath.to_str().unwrap().to_string() };
        let v = fam.realize(unit_grid(32)).unwrap();
        let centers = unit_grid(32).centers();
        for (val, x) in v.values().iter().zip(&centers) {
            assert!((val - 2.0 * x).abs() < 1e-12);
        }
        assert!((v.lip() - 2.0).abs() < 1e-9);

        let dpath = dir.path().join("rho.csv");
        let mut fh = std::fs::File::create(&dpath).unwrap();
        writeln!(fh, "0.0,0.5").unwrap();
        writeln!(fh, "1.0,1.5").unwrap();
        drop(fh);
        let fam = DensityFamily::Tabulated { path: dpath.to_str().unwrap().to_string() };
        let d = fam.realize(unit_grid(64), &v, DEFAULT_FLOOR).unwrap();
        assert!((integrate(d.as_fn()) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bad_tables_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.csv");
        std::fs::write(&p, "0.0,1.0\n0.0,2.0\n").unwrap();
        let fam = PotentialFamily::Tabulated { path: p.to_str().unwrap().to_string() };
        assert!(matches!(fam.realize(unit_grid(8)), Err(Error::InvalidInput(_))));

        std::fs::write(&p, "0.0,1.0\n").unwrap();
        assert!(fam.realize(unit_grid(8)).is_err());

        std::fs::write(&p, "0.0,1.0\nnot,numbers\n").unwrap();
        assert!(fam.realize(unit_grid(8)).is_err());

        let fam = PotentialFamily::Tabulated { path: "/nonexistent/v.csv".to_string() };
        assert!(matches!(fam.realize(unit_grid(8)), Err(Error::Io(_))));
    }

    #[test]
    fn random_densities_are_valid_and_seeded() {
        let grid = unit_grid(256);
        let mut hit_floor = false;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let d = random_floored_density(grid, 1e-8, &mut rng).unwrap();
            assert!((integrate(d.as_fn()) - 1.0).abs() < 1e-12);
            assert!(d.values().iter().all(|&r| r >= 1e-8));
            if d.values().iter().any(|&r| r < 2e-8) {
                hit_floor = true;
            }
        }
        assert!(hit_floor, "expected at least one draw to clamp at the floor");

        let mut r1 = ChaCha8Rng::seed_from_u64(3);
        let mut r2 = ChaCha8Rng::seed_from_u64(3);
        let a = random_floored_density(grid, 1e-8, &mut r1).unwrap();
        let b = random_floored_density(grid, 1e-8, &mut r2).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }
}
