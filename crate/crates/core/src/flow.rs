//! Forward recursion, exact reverse-mode gradient and Malliavin matrix.
//!
//! One step of the scheme, with `tau = dt^(2H)`:
//!
//! ```text
//! X_{l+1} = X_l + sum_i V_i(X_l) (w_l^i + h_l^i) + 1/2 sum_i DV_i(X_l) V_i(X_l) tau
//! ```
//!
//! The second-order term replaces the level-2 iterated integrals by their
//! expectation. Gradients differentiate this discrete map exactly, correction
//! term included, so they agree with finite differences of the discrete loss.
//!
//! Control geometry: controls are increment matrices with inner product
//! `<u, v> = (1/dt) sum u(l,i) v(l,i)`. The Riesz gradient under that metric
//! is `dt * dL/dh`, so a descent step of size `ds` moves the increments by
//! `ds * dt * dL/dh` and `|grad L|^2 = dt * sum (dL/dh)^2`.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::smallest_eigenpair;
use crate::rough_driver::{Grid, RoughDriver};
use crate::vector_fields::VectorFields;

/// Control increments `h_{t_l, t_{l+1}}`, the optimization variable.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlIncrements {
    pub grid: Grid,
    /// Entry `(l, i)` is the control increment of channel `i` on step `l`.
    pub data: DMatrix<f64>,
}

impl ControlIncrements {
    pub fn zeros(grid: Grid, channels: usize) -> Self {
        Self {
            grid,
            data: DMatrix::zeros(grid.steps(), channels),
        }
    }

    pub fn new(grid: Grid, data: DMatrix<f64>) -> Result<Self> {
        if data.nrows() != grid.steps() {
            return Err(Error::ShapeMismatch(format!(
                "{} control rows for a {}-step grid",
                data.nrows(),
                grid.steps()
            )));
        }
        Ok(Self { grid, data })
    }

    /// Inner product `(1/dt) sum u v` of piecewise-constant controls.
    pub fn inner(&self, other: &Self) -> f64 {
        self.data.dot(&other.data) / self.grid.dt()
    }

    pub fn norm(&self) -> f64 {
        self.inner(self).sqrt()
    }
}

/// Terminal cost `g(X_1)` with its gradient.
pub trait Cost: Send + Sync {
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64]) -> Vec<f64>;
}

/// `g(x) = 1/2 |x - target|^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticCost {
    pub target: Vec<f64>,
}

impl QuadraticCost {
    pub fn new(target: Vec<f64>) -> Self {
        Self { target }
    }
}

impl Cost for QuadraticCost {
    fn value(&self, x: &[f64]) -> f64 {
        0.5 * x.iter().zip(&self.target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.target).map(|(a, b)| a - b).collect()
    }
}

#[derive(Debug, Clone)]
pub struct FlowResult {
    /// `(L+1) x n`; row `l` is `X_{t_l}`.
    pub trajectory: DMatrix<f64>,
    pub endpoint: Vec<f64>,
    pub loss: f64,
    /// `L x d` matrix of `dL/dh(l, i)` when requested.
    pub adjoint: Option<DMatrix<f64>>,
    /// `J_{1 <- t_l}` for `l = 0..=L` when requested.
    pub jacobians: Option<Vec<DMatrix<f64>>>,
}

impl FlowResult {
    /// CSV dump: header `t,x0,..`, one row per grid time.
    pub fn write_trajectory_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let (rows, n) = self.trajectory.shape();
        let header: Vec<String> = std::iter::once("t".to_string())
            .chain((0..n).map(|p| format!("x{p}")))
            .collect();
        writeln!(out, "{}", header.join(","))?;
        let steps = rows - 1;
        for l in 0..rows {
            write!(out, "{}", l as f64 / steps as f64)?;
            for p in 0..n {
                write!(out, ",{}", self.trajectory[(l, p)])?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

fn check_shapes<F: VectorFields + ?Sized>(
    fam: &F,
    x: &[f64],
    driver: &RoughDriver,
    h: &ControlIncrements,
) -> Result<()> {
    let n = fam.dim_state();
    let d = fam.dim_control();
    if x.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "initial point has length {}, expected {n}",
            x.len()
        )));
    }
    if driver.channels() != d {
        return Err(Error::ShapeMismatch(format!(
            "driver has {} channels, family has {d}",
            driver.channels()
        )));
    }
    if h.data.ncols() != d || h.grid != driver.grid || h.data.nrows() != driver.grid.steps() {
        return Err(Error::ShapeMismatch(format!(
            "control is {}x{}, driver grid is {}x{d}",
            h.data.nrows(),
            h.data.ncols(),
            driver.grid.steps()
        )));
    }
    Ok(())
}

/// Correction weight `dt^(2H)`.
fn correction_weight(driver: &RoughDriver) -> f64 {
    driver.grid.dt().powf(2.0 * driver.hurst)
}

/// Runs the forward recursion and stores the whole trajectory (row-major, `(L+1) * n`).
fn forward<F: VectorFields + ?Sized>(
    fam: &F,
    x: &[f64],
    driver: &RoughDriver,
    h: &ControlIncrements,
) -> Result<Vec<f64>> {
    let n = fam.dim_state();
    let d = fam.dim_control();
    let steps = driver.grid.steps();
    let half_tau = 0.5 * correction_weight(driver);
    let mut traj = vec![0.0; (steps + 1) * n];
    traj[..n].copy_from_slice(x);
    let mut v = vec![0.0; n];
    for l in 0..steps {
        let (done, rest) = traj.split_at_mut((l + 1) * n);
        let cur = &done[l * n..];
        let next = &mut rest[..n];
        next.copy_from_slice(cur);
        for i in 0..d {
            fam.eval_into(i, cur, &mut v);
            let dz = driver.increments[(l, i)] + h.data[(l, i)];
            for (nx, vi) in next.iter_mut().zip(&v) {
                *nx += vi * dz;
            }
            // next += 1/2 tau DV_i V_i
            for vi in v.iter_mut() {
                *vi *= half_tau;
            }
            fam.jvp_add(i, cur, &v, next);
        }
        if next.iter().any(|a| !a.is_finite()) {
            return Err(Error::NonFinite { step: l });
        }
    }
    Ok(traj)
}

fn to_result(traj: Vec<f64>, n: usize, cost: &dyn Cost) -> FlowResult {
    let rows = traj.len() / n;
    let trajectory = DMatrix::from_row_slice(rows, n, &traj);
    let endpoint = traj[(rows - 1) * n..].to_vec();
    let loss = cost.value(&endpoint);
    FlowResult {
        trajectory,
        endpoint,
        loss,
        adjoint: None,
        jacobians: None,
    }
}

/// Forward integration of the controlled dynamics from `x`.
pub fn evolve<F: VectorFields + ?Sized>(
    fam: &F,
    x: &[f64],
    driver: &RoughDriver,
    h: &ControlIncrements,
    cost: &dyn Cost,
) -> Result<FlowResult> {
    check_shapes(fam, x, driver, h)?;
    let traj = forward(fam, x, driver, h)?;
    Ok(to_result(traj, fam.dim_state(), cost))
}

/// Forward pass plus the exact gradient `dL/dh(l, i)` of the discrete loss.
pub fn adjoint_gradient<F: VectorFields + ?Sized>(
    fam: &F,
    x: &[f64],
    driver: &RoughDriver,
    h: &ControlIncrements,
    cost: &dyn Cost,
) -> Result<FlowResult> {
    check_shapes(fam, x, driver, h)?;
    let n = fam.dim_state();
    let d = fam.dim_control();
    let steps = driver.grid.steps();
    let half_tau = 0.5 * correction_weight(driver);
    let traj = forward(fam, x, driver, h)?;

    let mut grad = DMatrix::zeros(steps, d);
    let mut lam = cost.gradient(&traj[steps * n..]);
    let mut next_lam = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    for l in (0..steps).rev() {
        let xl = &traj[l * n..(l + 1) * n];
        next_lam.copy_from_slice(&lam);
        for i in 0..d {
            fam.eval_into(i, xl, &mut v);
            grad[(l, i)] = lam.iter().zip(&v).map(|(a, b)| a * b).sum();
            let dz = driver.increments[(l, i)] + h.data[(l, i)];
            // A_l^T lam, with A_l = I + sum_i dz_i DV_i + 1/2 tau sum_i (D^2V_i[V_i, .] + DV_i DV_i)
            tmp.iter_mut().for_each(|t| *t = 0.0);
            fam.vjp_add(i, xl, &lam, &mut tmp);
            for (nl, t) in next_lam.iter_mut().zip(&tmp) {
                *nl += dz * t;
            }
            let first: Vec<f64> = tmp.iter().map(|t| half_tau * t).collect();
            fam.vjp_add(i, xl, &first, &mut next_lam);
            for vi in v.iter_mut() {
                *vi *= half_tau;
            }
            fam.hess_vjp_add(i, xl, &v, &lam, &mut next_lam);
        }
        std::mem::swap(&mut lam, &mut next_lam);
    }
    let mut out = to_result(traj, n, cost);
    out.adjoint = Some(grad);
    Ok(out)
}

/// Step Jacobian `A_l = dX_{l+1}/dX_l` at state `xl`.
fn step_jacobian<F: VectorFields + ?Sized>(
    fam: &F,
    xl: &[f64],
    dz: impl Fn(usize) -> f64,
    half_tau: f64,
) -> DMatrix<f64> {
    let n = fam.dim_state();
    let mut a = DMatrix::identity(n, n);
    for i in 0..fam.dim_control() {
        let j = fam.jac(i, xl);
        let v = fam.eval(i, xl);
        a += &j * dz(i);
        a += (fam.hess_dir(i, xl, &v) + &j * &j) * half_tau;
    }
    a
}

fn jacobian_chain<F: VectorFields + ?Sized>(
    fam: &F,
    traj: &[f64],
    driver: &RoughDriver,
    h: &ControlIncrements,
) -> Vec<DMatrix<f64>> {
    let n = fam.dim_state();
    let steps = driver.grid.steps();
    let half_tau = 0.5 * correction_weight(driver);
    let mut jacs = vec![DMatrix::identity(n, n); steps + 1];
    for l in (0..steps).rev() {
        let xl = &traj[l * n..(l + 1) * n];
        let a = step_jacobian(fam, xl, |i| driver.increments[(l, i)] + h.data[(l, i)], half_tau);
        jacs[l] = &jacs[l + 1] * a;
    }
    jacs
}

/// `J_{1 <- t_l}` for `l = 0..=L`, with `J_{1 <- t_L} = I`.
pub fn backward_jacobians<F: VectorFields + ?Sized>(
    fam: &F,
    x: &[f64],
    driver: &RoughDriver,
    h: &ControlIncrements,
) -> Result<Vec<DMatrix<f64>>> {
    check_shapes(fam, x, driver, h)?;
    let traj = forward(fam, x, driver, h)?;
    Ok(jacobian_chain(fam, &traj, driver, h))
}

#[derive(Debug, Clone, Serialize)]
pub struct MalliavinReport {
    /// Row-major `n x n` when serialized.
    #[serde(serialize_with = "ser_matrix")]
    pub matrix: DMatrix<f64>,
    /// Smallest eigenvalue `c_w(h)^2`, clamped at zero.
    pub smallest_eig: f64,
    #[serde(serialize_with = "ser_vector")]
    pub eigvec: DVector<f64>,
}

impl MalliavinReport {
    /// `c_w(h)`.
    pub fn c_w(&self) -> f64 {
        self.smallest_eig.sqrt()
    }
}

fn ser_matrix<S: serde::Serializer>(m: &DMatrix<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
    rows.serialize(s)
}

fn ser_vector<S: serde::Serializer>(v: &DVector<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    v.as_slice().serialize(s)
}

/// Discretized Malliavin matrix `dt * sum_l sum_i phi_i(l) phi_i(l)^T`,
/// `phi_i(l) = J_{1 <- t_{l+1}} V_i(X_{t_l})`.
pub fn malliavin<F: VectorFields + ?Sized>(
    fam: &F,
    x: &[f64],
    driver: &RoughDriver,
    h: &ControlIncrements,
) -> Result<MalliavinReport> {
    let all: Vec<usize> = (0..fam.dim_control()).collect();
    malliavin_channels(fam, x, driver, h, &all)
}

/// Malliavin matrix restricted to the listed control channels.
pub fn malliavin_channels<F: VectorFields + ?Sized>(
    fam: &F,
    x: &[f64],
    driver: &RoughDriver,
    h: &ControlIncrements,
    channels: &[usize],
) -> Result<MalliavinReport> {
    check_shapes(fam, x, driver, h)?;
    if let Some(&c) = channels.iter().find(|&&c| c >= fam.dim_control()) {
        return Err(Error::InvalidParameter(format!("channel {c} out of range")));
    }
    let n = fam.dim_state();
    let traj = forward(fam, x, driver, h)?;
    let jacs = jacobian_chain(fam, &traj, driver, h);
    let mut m = DMatrix::zeros(n, n);
    for l in 0..driver.grid.steps() {
        let xl = &traj[l * n..(l + 1) * n];
        for &i in channels {
            let phi = &jacs[l + 1] * DVector::from_vec(fam.eval(i, xl));
            m.ger(1.0, &phi, &phi, 1.0);
        }
    }
    m *= driver.grid.dt();
    let m = (&m + m.transpose()) * 0.5;
    let (lambda, eigvec) = smallest_eigenpair(&m)?;
    Ok(MalliavinReport {
        matrix: m,
        smallest_eig: lambda.max(0.0),
        eigvec,
    })
}

/// Norm of the Riesz gradient under the control inner product:
/// `sqrt(dt * sum (dL/dh)^2)` with `dt = 1 / rows`.
pub fn dual_grad_norm(partials: &DMatrix<f64>) -> f64 {
    let dt = 1.0 / partials.nrows() as f64;
    (dt * partials.norm_squared()).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LojRatio {
    /// `|grad L| / sqrt(L)`.
    pub ratio: f64,
    /// `sqrt(2) * c_w(h)`, the lower bound for the quadratic cost.
    pub lower_bound: f64,
}

impl LojRatio {
    pub fn holds(&self, slack: f64) -> bool {
        self.ratio >= self.lower_bound - slack
    }
}

/// Lojasiewicz ratio `|grad L| / sqrt(L)` next to its Malliavin lower bound.
pub fn loj_ratio(report: &MalliavinReport, partials: &DMatrix<f64>, loss: f64) -> Result<LojRatio> {
    if loss <= 0.0 {
        return Err(Error::AtMinimum);
    }
    Ok(LojRatio {
        ratio: dual_grad_norm(partials) / loss.sqrt(),
        lower_bound: std::f64::consts::SQRT_2 * report.c_w(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradientCheck {
    /// Largest `|fd - adjoint| / scale` over all entries, where
    /// `scale = max(|adjoint|, 1e-3 * max |adjoint|)`.
    pub max_rel_err: f64,
    /// `(l, i)` of the worst entry.
    pub worst: (usize, usize),
    pub adjoint_value: f64,
    pub fd_value: f64,
}

/// Compares every entry of the adjoint gradient with central differences
/// of step `eps`.
pub fn gradient_check<F: VectorFields + ?Sized>(
    fam: &F,
    x: &[f64],
    driver: &RoughDriver,
    h: &ControlIncrements,
    cost: &dyn Cost,
    eps: f64,
) -> Result<GradientCheck> {
    let adj = adjoint_gradient(fam, x, driver, h, cost)?
        .adjoint
        .expect("adjoint_gradient fills the gradient");
    let floor = 1e-3 * adj.amax();
    let mut out = GradientCheck {
        max_rel_err: 0.0,
        worst: (0, 0),
        adjoint_value: adj[(0, 0)],
        fd_value: f64::NAN,
    };
    let mut hp = h.clone();
    for l in 0..adj.nrows() {
        for i in 0..adj.ncols() {
            let orig = hp.data[(l, i)];
            hp.data[(l, i)] = orig + eps;
            let fp = evolve(fam, x, driver, &hp, cost)?.loss;
            hp.data[(l, i)] = orig - eps;
            let fm = evolve(fam, x, driver, &hp, cost)?.loss;
            hp.data[(l, i)] = orig;
            let fd = (fp - fm) / (2.0 * eps);
            let a = adj[(l, i)];
            let rel = (fd - a).abs() / a.abs().max(floor).max(f64::MIN_POSITIVE);
            if rel > out.max_rel_err || out.fd_value.is_nan() {
                out = GradientCheck {
                    max_rel_err: rel,
                    worst: (l, i),
                    adjoint_value: a,
                    fd_value: fd,
                };
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rough_driver::{sample_fbm, zero_driver};
    use crate::vector_fields::{make_step2_family, make_step3_family, VectorFieldFamily};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-scale..scale)).collect()
    }

    fn random_control(rng: &mut ChaCha8Rng, grid: Grid, d: usize, scale: f64) -> ControlIncrements {
        let data = DMatrix::from_fn(grid.steps(), d, |_, _| rng.random_range(-scale..scale));
        ControlIncrements::new(grid, data).unwrap()
    }

    fn identity_fields(n: usize) -> VectorFieldFamily {
        VectorFieldFamily::constant(&DMatrix::identity(n, n)).unwrap()
    }

    #[test]
    fn zero_driver_zero_control_is_stationary() {
        let fam = make_step3_family();
        let g = Grid::new(10).unwrap();
        let x = vec![0.3, -0.2, 1.0, 0.5, -1.5];
        let y = vec![1.0; 5];
        let cost = QuadraticCost::new(y.clone());
        // zero driver has hurst 1/2 so the correction term is active; pick
        // constant fields so that DV V vanishes
        let cst = identity_fields(5);
        let drv = zero_driver(g, 5);
        let res = evolve(&cst, &x, &drv, &ControlIncrements::zeros(g, 5), &cost).unwrap();
        for l in 0..=10 {
            assert_eq!(res.trajectory.row(l).iter().copied().collect::<Vec<_>>(), x);
        }
        assert!((res.loss - cost.value(&x)).abs() < 1e-15);
        // step-3 fields at the origin also have DV_i V_i = 0
        let origin = vec![0.0; 5];
        let res = evolve(
            &fam,
            &origin,
            &zero_driver(g, 2),
            &ControlIncrements::zeros(g, 2),
            &cost,
        )
        .unwrap();
        assert!(res.endpoint.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn step2_area_is_discrete_levy_area() {
        let fam = make_step2_family(2).unwrap();
        let g = Grid::new(200).unwrap();
        let drv = sample_fbm(g, 2, 0.5, 77).unwrap();
        let res = evolve(
            &fam,
            &[0.0; 3],
            &drv,
            &ControlIncrements::zeros(g, 2),
            &QuadraticCost::new(vec![0.0; 3]),
        )
        .unwrap();
        // independent accumulator of 1/2 sum (x1 dw2 - x2 dw1)
        let (mut x1, mut x2, mut area) = (0.0, 0.0, 0.0);
        for l in 0..200 {
            let (a, b) = (drv.increments[(l, 0)], drv.increments[(l, 1)]);
            area += 0.5 * (x1 * b - x2 * a);
            x1 += a;
            x2 += b;
        }
        assert!((res.endpoint[2] - area).abs() < 1e-12);
        assert!((res.endpoint[0] - x1).abs() < 1e-12);
    }

    #[test]
    fn smooth_driver_self_convergence() {
        let fam = make_step3_family();
        let x = [0.2, -0.1, 0.3, 0.0, 0.1];
        let cost = QuadraticCost::new(vec![0.0; 5]);
        let run = |steps: usize| {
            let g = Grid::new(steps).unwrap();
            let drv = RoughDriver::from_path_fn(g, 2, |t| vec![t, t * t]).unwrap();
            evolve(&fam, &x, &drv, &ControlIncrements::zeros(g, 2), &cost)
                .unwrap()
                .endpoint
        };
        let reference = run(100_000);
        let err = |e: Vec<f64>| {
            e.iter()
                .zip(&reference)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt()
        };
        let errs: Vec<f64> = [100, 200, 400].iter().map(|&s| err(run(s))).collect();
        assert!(errs[0] > errs[1] && errs[1] > errs[2], "{errs:?}");
    }

    fn fd_check<F: VectorFields>(fam: &F, seed: u64, hurst: f64, steps: usize) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = Grid::new(steps).unwrap();
        let (n, d) = (fam.dim_state(), fam.dim_control());
        let x = random_vec(&mut rng, n, 1.0);
        let y = random_vec(&mut rng, n, 1.0);
        let drv = sample_fbm(g, d, hurst, seed).unwrap();
        let h = random_control(&mut rng, g, d, 0.1);
        gradient_check(fam, &x, &drv, &h, &QuadraticCost::new(y), 1e-5)
            .unwrap()
            .max_rel_err
    }

    #[test]
    fn adjoint_matches_finite_differences() {
        let s2 = make_step2_family(2).unwrap();
        let s3 = make_step3_family();
        for (k, h) in [0.3, 0.5, 0.8].iter().enumerate() {
            assert!(fd_check(&s2, k as u64, *h, 20) < 1e-5);
            assert!(fd_check(&s3, 10 + k as u64, *h, 20) < 1e-5);
        }
    }

    #[test]
    fn gradient_vanishes_at_target() {
        let fam = make_step3_family();
        let g = Grid::new(15).unwrap();
        let x = vec![0.4, 0.1, -0.3, 0.2, 0.0];
        // constant identity fields: zero driver keeps x fixed
        let cst = identity_fields(5);
        let res = adjoint_gradient(
            &cst,
            &x,
            &zero_driver(g, 5),
            &ControlIncrements::zeros(g, 5),
            &QuadraticCost::new(x.clone()),
        )
        .unwrap();
        assert!(res.adjoint.unwrap().iter().all(|&v| v == 0.0));
        assert_eq!(fam.dim_control(), 2);
    }

    #[test]
    fn constant_fields_gradient_is_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cols = DMatrix::from_fn(3, 2, |_, _| rng.random_range(-1.0..1.0));
        let fam = VectorFieldFamily::constant(&cols).unwrap();
        let g = Grid::new(12).unwrap();
        let drv = sample_fbm(g, 2, 0.4, 1).unwrap();
        let h = random_control(&mut rng, g, 2, 0.3);
        let y = vec![0.5, -0.5, 2.0];
        let res = adjoint_gradient(&fam, &[0.0; 3], &drv, &h, &QuadraticCost::new(y.clone())).unwrap();
        let adj = res.adjoint.unwrap();
        let r: Vec<f64> = res.endpoint.iter().zip(&y).map(|(a, b)| a - b).collect();
        for i in 0..2 {
            let expected: f64 = (0..3).map(|p| cols[(p, i)] * r[p]).sum();
            for l in 0..12 {
                assert!((adj[(l, i)] - expected).abs() < 1e-14);
            }
        }
        for j in backward_jacobians(&fam, &[0.0; 3], &drv, &h).unwrap() {
            assert_eq!(j, DMatrix::identity(3, 3));
        }
    }

    #[test]
    fn jacobian_chain_matches_initial_point_sensitivity() {
        let fam = make_step3_family();
        let g = Grid::new(30).unwrap();
        let drv = sample_fbm(g, 2, 0.6, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let h = random_control(&mut rng, g, 2, 0.2);
        let x = random_vec(&mut rng, 5, 1.0);
        let jacs = backward_jacobians(&fam, &x, &drv, &h).unwrap();
        assert_eq!(jacs[30], DMatrix::identity(5, 5));
        let cost = QuadraticCost::new(vec![0.0; 5]);
        let eps = 1e-6;
        let mut fd = DMatrix::zeros(5, 5);
        for q in 0..5 {
            let mut xp = x.clone();
            xp[q] += eps;
            let mut xm = x.clone();
            xm[q] -= eps;
            let ep = evolve(&fam, &xp, &drv, &h, &cost).unwrap().endpoint;
            let em = evolve(&fam, &xm, &drv, &h, &cost).unwrap().endpoint;
            for p in 0..5 {
                fd[(p, q)] = (ep[p] - em[p]) / (2.0 * eps);
            }
        }
        let rel = (&jacs[0] - &fd).norm() / fd.norm();
        assert!(rel < 1e-5, "rel {rel}");
    }

    #[test]
    fn adjoint_equals_jacobian_formula() {
        let fam = make_step3_family();
        let g = Grid::new(25).unwrap();
        let drv = sample_fbm(g, 2, 0.35, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let h = random_control(&mut rng, g, 2, 0.2);
        let x = random_vec(&mut rng, 5, 1.0);
        let y = random_vec(&mut rng, 5, 1.0);
        let res = adjoint_gradient(&fam, &x, &drv, &h, &QuadraticCost::new(y.clone())).unwrap();
        let adj = res.adjoint.unwrap();
        let jacs = backward_jacobians(&fam, &x, &drv, &h).unwrap();
        let r = DVector::from_iterator(5, res.endpoint.iter().zip(&y).map(|(a, b)| a - b));
        for l in 0..25 {
            let xl: Vec<f64> = res.trajectory.row(l).iter().copied().collect();
            for i in 0..2 {
                let phi = &jacs[l + 1] * DVector::from_vec(fam.eval(i, &xl));
                assert!((r.dot(&phi) - adj[(l, i)]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn non_finite_state_aborts_with_step() {
        // V(x) = x^2 blows up in finite time under a large control
        let fam = VectorFieldFamily::from_terms(1, &[vec![crate::PolyTerm::new(0, 1.0, &[0, 0])]]).unwrap();
        let g = Grid::new(20).unwrap();
        let h = ControlIncrements::new(g, DMatrix::from_element(20, 1, 50.0)).unwrap();
        let err = evolve(&fam, &[1.0], &zero_driver(g, 1), &h, &QuadraticCost::new(vec![0.0])).unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }));
    }

    #[test]
    fn shape_errors() {
        let fam = make_step3_family();
        let g = Grid::new(5).unwrap();
        let cost = QuadraticCost::new(vec![0.0; 5]);
        let drv = zero_driver(g, 2);
        assert!(evolve(&fam, &[0.0; 4], &drv, &ControlIncrements::zeros(g, 2), &cost).is_err());
        assert!(evolve(
            &fam,
            &[0.0; 5],
            &zero_driver(g, 3),
            &ControlIncrements::zeros(g, 3),
            &cost
        )
        .is_err());
        let g2 = Grid::new(6).unwrap();
        assert!(evolve(&fam, &[0.0; 5], &drv, &ControlIncrements::zeros(g2, 2), &cost).is_err());
    }

    #[test]
    fn malliavin_of_orthonormal_constant_fields_is_identity() {
        let fam = identity_fields(4);
        let g = Grid::new(16).unwrap();
        let drv = sample_fbm(g, 4, 0.5, 2).unwrap();
        let rep = malliavin(&fam, &[0.0; 4], &drv, &ControlIncrements::zeros(g, 4)).unwrap();
        assert!((&rep.matrix - DMatrix::<f64>::identity(4, 4)).norm() < 1e-12);
        assert!((rep.smallest_eig - 1.0).abs() < 1e-12);
    }

    #[test]
    fn malliavin_rank_deficient_single_field() {
        let cols = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let fam = VectorFieldFamily::constant(&cols).unwrap();
        let g = Grid::new(8).unwrap();
        let rep = malliavin(&fam, &[0.0; 2], &zero_driver(g, 1), &ControlIncrements::zeros(g, 1)).unwrap();
        assert_eq!(rep.smallest_eig, 0.0);
        assert!((rep.eigvec[1].abs() - 1.0).abs() < 1e-12 && rep.eigvec[0].abs() < 1e-12);
    }

    #[test]
    fn malliavin_step2_brownian_nondegenerate() {
        let fam = make_step2_family(2).unwrap();
        let g = Grid::new(50).unwrap();
        let positive = (0..50)
            .filter(|&s| {
                let drv = sample_fbm(g, 2, 0.5, s).unwrap();
                malliavin(&fam, &[0.0; 3], &drv, &ControlIncrements::zeros(g, 2))
                    .unwrap()
                    .smallest_eig
                    > 0.0
            })
            .count();
        assert_eq!(positive, 50);
    }

    #[test]
    fn malliavin_monotone_in_channels() {
        let fam = make_step2_family(4).unwrap();
        let g = Grid::new(30).unwrap();
        for seed in 0..5 {
            let drv = sample_fbm(g, 4, 0.5, seed).unwrap();
            let h = ControlIncrements::zeros(g, 4);
            let x = vec![0.1; 10];
            let mut prev = -1.0;
            for k in 1..=4 {
                let chans: Vec<usize> = (0..k).collect();
                let rep = malliavin_channels(&fam, &x, &drv, &h, &chans).unwrap();
                assert!(rep.smallest_eig >= prev - 1e-12);
                prev = rep.smallest_eig;
            }
        }
    }

    #[test]
    fn malliavin_json_layout() {
        let fam = identity_fields(2);
        let g = Grid::new(4).unwrap();
        let rep = malliavin(&fam, &[0.0; 2], &zero_driver(g, 2), &ControlIncrements::zeros(g, 2)).unwrap();
        let v = serde_json::to_value(&rep).unwrap();
        assert_eq!(v["matrix"], serde_json::json!([[1.0, 0.0], [0.0, 1.0]]));
        assert_eq!(v["smallest_eig"].as_f64().unwrap(), rep.smallest_eig);
        assert_eq!(v["eigvec"].as_array().unwrap().len(), 2);
    }

    #[test]
    fn loj_ratio_cases() {
        let fam = identity_fields(3);
        let g = Grid::new(10).unwrap();
        let h = ControlIncrements::zeros(g, 3);
        let drv = zero_driver(g, 3);
        let x = vec![1.0, 2.0, -1.0];
        let rep = malliavin(&fam, &x, &drv, &h).unwrap();
        let res = adjoint_gradient(&fam, &x, &drv, &h, &QuadraticCost::new(vec![0.0; 3])).unwrap();
        let r = loj_ratio(&rep, res.adjoint.as_ref().unwrap(), res.loss).unwrap();
        assert!((r.ratio - std::f64::consts::SQRT_2).abs() < 1e-14);
        assert!(r.holds(1e-12));
        let at_min = adjoint_gradient(&fam, &x, &drv, &h, &QuadraticCost::new(x.clone())).unwrap();
        assert_eq!(
            loj_ratio(&rep, at_min.adjoint.as_ref().unwrap(), at_min.loss),
            Err(Error::AtMinimum)
        );
    }

    #[test]
    fn control_norm_metric() {
        let g = Grid::new(4).unwrap();
        let h = ControlIncrements::new(g, DMatrix::from_element(4, 1, 0.25)).unwrap();
        // rate 1 on [0, 1]: L2 norm 1
        assert!((h.norm() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn trajectory_csv_layout() {
        let fam = identity_fields(1);
        let g = Grid::new(2).unwrap();
        let h = ControlIncrements::new(g, DMatrix::from_element(2, 1, 1.0)).unwrap();
        let res = evolve(&fam, &[0.0], &zero_driver(g, 1), &h, &QuadraticCost::new(vec![0.0])).unwrap();
        let mut buf = Vec::new();
        res.write_trajectory_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "t,x0\n0,0\n0.5,1\n1,2\n");
    }
}
