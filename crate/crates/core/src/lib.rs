//! Numerical core for gradient flows on control space driven by rough
//! (fractional Brownian) initial conditions.
//!
//! The pieces, bottom-up:
//!
//! * [`vector_fields`]: polynomial driving fields `V_1..V_d` on `R^n`, their
//!   Jacobians, second derivatives and Lie brackets, plus the two nilpotent
//!   benchmark families.
//! * [`rough_driver`]: fractional Brownian sample paths on a uniform grid.
//! * [`flow`]: the corrected Euler recursion, its exact reverse-mode
//!   gradient, backward Jacobians and the discretized Malliavin matrix.
//! * [`descent`]: gradient descent on the control increments with telemetry
//!   and Lojasiewicz-type convergence certificates.
//! * [`spectral`]: trigonometric dyadic blocks, Sobolev surrogate norms,
//!   q-variation and the piecewise-linear projection gap.

pub mod descent;
pub mod error;
pub mod flow;
pub mod linalg;
pub mod rng;
pub mod rough_driver;
pub mod spectral;
pub mod vector_fields;

pub use descent::{
    certificate_c1r, certificate_decay, run_descent, C1rReport, DecayReport, DescentConfig, IterRecord, Objective,
    RunRecord,
};
pub use error::{Error, Result};
pub use flow::{
    adjoint_gradient, backward_jacobians, dual_grad_norm, evolve, gradient_check, loj_ratio, malliavin,
    malliavin_channels, ControlIncrements, Cost, FlowResult, GradientCheck, LojRatio, MalliavinReport, QuadraticCost,
};
pub use rough_driver::{
    covariance_check, sample_fbm, zero_driver, CovarianceReport, DriverKind, FbmMethod, Grid, RoughDriver,
};
pub use spectral::{
    bernstein_check, bh1l2_probe, delta_b_statistics, dyadic_spectrum, pwl_projection_gap, qvar_norm, sobolev_norm,
    BernsteinReport, DeltaBReport, DyadicSpectrum, GapReport, ProbeReport, SobolevNorm,
};
pub use vector_fields::{
    bracket, make_step2_family, make_step3_family, BracketReport, FamilyId, PolyTerm, VectorFieldFamily, VectorFields,
};
