//! Minimizing-movement solver for one-dimensional drift-diffusion flows.
//!
//! The crate advances a probability density on an interval by repeatedly
//! solving the variational step problem: minimize relative entropy plus a
//! quadratic transport penalty against the previous iterate. The inner
//! problem is posed on quantiles, where one-dimensional optimal transport is
//! exact, and solved by a damped Newton iteration. Around the stepper sit
//!
//! * exact piecewise-linear transport maps, Kantorovich potentials and
//!   Wasserstein distances ([`transport`]),
//! * an implicit finite-volume reference solver for the same equation
//!   ([`fokker_planck`]),
//! * a suite of inequality checks that the scheme is expected to satisfy
//!   along its iterates ([`diagnostics`]),
//! * convergence studies over families of step sizes with machine-readable
//!   reports ([`study`]).
//!
//! Everything is deterministic: reruns of the same configuration produce
//! bitwise-identical iterates and reports.

pub mod diagnostics;
pub mod error;
pub mod families;
pub mod fokker_planck;
pub mod functionals;
pub mod grid;
pub mod jko;
pub mod study;
pub mod transport;

pub use error::{Error, Result};
pub use families::{random_floored_density, DensityFamily, PotentialFamily};
pub use fokker_planck::{dissipation_f2, dissipation_f2_terms, dissipation_l2, fp_solve, fp_step, FpSolution};
pub use functionals::{entropy_j, fisher_fp, gibbs_density, Density, Potential, DEFAULT_FLOOR};
pub use grid::{deriv1, deriv2, integrate, sobolev_norm, Grid1D, GridFunction};
pub use jko::{
    eps_identity, interpolate_eps, jko_step, run_trajectory, JkoConfig, JkoStepResult,
    JkoTrajectory,
};
pub use transport::{
    cdf, displacement_sup, optimal_plan, quantile, w2_distance, QuantileFn, TransportPlan,
};

pub use diagnostics::{
    check_energy_decrease, check_eps_identity, check_f2_dissipation_jko, check_five_gradients,
    check_flow_interchange, check_fp_decay, check_lp_decay, check_maxmin, check_w2_telescope,
    fit_displacement_scaling, five_gradients_parts, pde_f2_budget, suite, CheckContext,
    FiveGradientsParts, InequalityReport, ScalingReport,
};
pub use study::{
    emit_report, render_summary, run_study, MonotoneFlag, OracleGap, OrderFit, StudyConfig,
    StudyNorm, StudyResult,
};
