//! `roughflow verify`: named numerical checks with measured values and
//! tolerances, grouped in suites.
//!
//! Every check is a plain function of its sizes and seed so the same code
//! backs both the CLI defaults and the acceptance target.

use std::f64::consts::{PI, SQRT_2};

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use roughflow_core::linalg::smallest_eigenpair;
use roughflow_core::rng::{aux_rng, derive_seed};
use roughflow_core::spectral::{
    basis, bernstein_check, bh1l2_probe, block_of, delta_b_statistics, dyadic_spectrum, pwl_projection_gap, qvar_norm,
    truncation_family,
};
use roughflow_core::vector_fields::{bracket_value, double_bracket, numeric_jacobian, DOUBLE_BRACKET_STEP};
use roughflow_core::{
    adjoint_gradient, covariance_check, dual_grad_norm, gradient_check, make_step2_family, make_step3_family,
    malliavin, run_descent, sample_fbm, zero_driver, ControlIncrements, DescentConfig, Grid, Objective, QuadraticCost,
    VectorFieldFamily, VectorFields,
};
use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub suite: String,
    pub name: String,
    pub passed: bool,
    pub measured: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl Check {
    fn new(suite: &str, name: &str, passed: bool, measured: f64, tolerance: f64, detail: String) -> Self {
        Self {
            suite: suite.into(),
            name: name.into(),
            passed,
            measured,
            tolerance,
            detail,
        }
    }

    /// `measured < tolerance`.
    fn below(suite: &str, name: &str, measured: f64, tolerance: f64, detail: String) -> Self {
        Self::new(suite, name, measured < tolerance, measured, tolerance, detail)
    }

    fn failed(suite: &str, name: &str, err: impl std::fmt::Display) -> Self {
        Self::new(suite, name, false, f64::NAN, f64::NAN, format!("error: {err}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    All,
    VectorFields,
    RoughDriver,
    Flow,
    Descent,
    Spectral,
}

/// Additive corruption of one Jacobian entry, `DV_field[row, col] += delta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct JacobianFault {
    pub field: usize,
    pub row: usize,
    pub col: usize,
    pub delta: f64,
}

impl JacobianFault {
    /// Perturbs the last row, first column of `DV_0`.
    pub fn default_for(n: usize) -> Self {
        Self {
            field: 0,
            row: n - 1,
            col: 0,
            delta: 0.5,
        }
    }
}

/// Test double: a family whose Jacobian is wrong in one entry. Values and
/// second derivatives pass through unchanged.
pub struct FaultyJacobian<F> {
    pub inner: F,
    pub fault: JacobianFault,
}

impl<F: VectorFields> VectorFields for FaultyJacobian<F> {
    fn dim_state(&self) -> usize {
        self.inner.dim_state()
    }
    fn dim_control(&self) -> usize {
        self.inner.dim_control()
    }
    fn eval_into(&self, i: usize, x: &[f64], out: &mut [f64]) {
        self.inner.eval_into(i, x, out)
    }
    fn jac(&self, i: usize, x: &[f64]) -> DMatrix<f64> {
        let mut j = self.inner.jac(i, x);
        if i == self.fault.field {
            j[(self.fault.row, self.fault.col)] += self.fault.delta;
        }
        j
    }
    fn hess_vjp_add(&self, i: usize, x: &[f64], u: &[f64], lam: &[f64], out: &mut [f64]) {
        self.inner.hess_vjp_add(i, x, u, lam, out)
    }
}

fn normal_vec<R: Rng>(rng: &mut R, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

fn uniform_vec<R: Rng>(rng: &mut R, n: usize, r: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-r..r)).collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

// ---------------------------------------------------------------- vector fields

/// `max |[[V_i, V_j], V_k](x)|` over random points and all index triples.
pub fn check_step2_nilpotency(d: usize, points: usize, seed: u64) -> Check {
    const S: &str = "vector_fields";
    let fam = match make_step2_family(d) {
        Ok(f) => f,
        Err(e) => return Check::failed(S, "step2_nilpotency", e),
    };
    let mut rng = aux_rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..points {
        let x = uniform_vec(&mut rng, fam.dim_state(), 2.0);
        for i in 0..d {
            for j in 0..d {
                for k in 0..d {
                    worst = worst.max(norm(&double_bracket(&fam, i, j, k, &x, DOUBLE_BRACKET_STEP)));
                }
            }
        }
    }
    Check::below(
        S,
        "step2_nilpotency",
        worst,
        1e-6,
        format!("d = {d}, {points} points, step {DOUBLE_BRACKET_STEP}"),
    )
}

/// `[V1,V2] = (0,0,1,x1/2,x2/2)`, `[V1,[V1,V2]] = e4`, `[V2,[V1,V2]] = e5`.
pub fn check_step3_closed_forms(points: usize, seed: u64) -> Check {
    let fam = make_step3_family();
    let mut rng = aux_rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..points {
        let x = uniform_vec(&mut rng, 5, 2.0);
        let b = bracket_value(&fam, 0, 1, &x);
        let closed = [0.0, 0.0, 1.0, 0.5 * x[0], 0.5 * x[1]];
        worst = worst.max(b.iter().zip(closed).map(|(a, c)| (a - c).abs()).fold(0.0, f64::max));
        for (k, e) in [(0usize, 3usize), (1, 4)] {
            // [V_k, [V1, V2]] = -[[V1, V2], V_k]
            let v = double_bracket(&fam, 0, 1, k, &x, DOUBLE_BRACKET_STEP);
            for (p, a) in v.iter().enumerate() {
                let target = if p == e { 1.0 } else { 0.0 };
                worst = worst.max((-a - target).abs());
            }
        }
    }
    Check::below(
        "vector_fields",
        "step3_closed_forms",
        worst,
        1e-8,
        format!("{points} points"),
    )
}

/// Relative Frobenius error of analytic vs central-difference Jacobians.
pub fn check_jacobians(points: usize, seed: u64) -> Check {
    let fams = [make_step3_family(), make_step2_family(3).expect("d = 3")];
    let mut rng = aux_rng(seed);
    let mut worst: f64 = 0.0;
    for fam in &fams {
        for _ in 0..points {
            let x = uniform_vec(&mut rng, fam.dim_state(), 2.0);
            for i in 0..fam.dim_control() {
                let a = fam.jac(i, &x);
                let n = numeric_jacobian(fam, i, &x, 1e-6);
                worst = worst.max((&a - &n).norm() / a.norm().max(1.0));
            }
        }
    }
    Check::below(
        "vector_fields",
        "jacobian_fd",
        worst,
        1e-6,
        format!("step3 and step2(3), {points} points each"),
    )
}

/// Smallest eigenvalue of the Gram matrix of `{V_i} u {[V_i, V_j]}` for step2(2).
pub fn check_step2_ellipticity(points: usize, seed: u64) -> Check {
    let fam = make_step2_family(2).expect("d = 2");
    let mut rng = aux_rng(seed);
    let mut worst = f64::INFINITY;
    for _ in 0..points {
        let x = uniform_vec(&mut rng, 3, 2.0);
        let cols = [fam.eval(0, &x), fam.eval(1, &x), bracket_value(&fam, 0, 1, &x)];
        let m = DMatrix::from_fn(3, 3, |r, c| cols[c][r]);
        match smallest_eigenpair(&(&m * m.transpose())) {
            Ok((l, _)) => worst = worst.min(l),
            Err(e) => return Check::failed("vector_fields", "step2_ellipticity", e),
        }
    }
    Check::new(
        "vector_fields",
        "step2_ellipticity",
        worst > 0.0,
        worst,
        0.0,
        format!("min eigenvalue over {points} points"),
    )
}

// ---------------------------------------------------------------- rough driver

/// Covariance of `(B_1/4, B_1/2, B_1)` within `z_tol` standard errors, and
/// `E|B_t|^2 / t^2H` in `[0.9, 1.1]`.
pub fn check_fbm_covariance(hurst: f64, samples: usize, z_tol: f64, seed: u64) -> Check {
    let name = format!("fbm_covariance_h{hurst}");
    let grid = Grid::new(64).expect("positive");
    match covariance_check(grid, hurst, &[0.25, 0.5, 1.0], samples, seed) {
        Ok(rep) => {
            let ss_ok = rep.self_similarity.iter().all(|(_, r)| (0.9..=1.1).contains(r));
            Check::new(
                "rough_driver",
                &name,
                rep.max_z < z_tol && ss_ok,
                rep.max_z,
                z_tol,
                format!(
                    "{samples} samples via {:?}; self-similarity ratios {:?}",
                    rep.method,
                    rep.self_similarity
                        .iter()
                        .map(|(_, r)| (r * 1e4).round() / 1e4)
                        .collect::<Vec<_>>()
                ),
            )
        }
        Err(e) => Check::failed("rough_driver", &name, e),
    }
}

pub fn check_fbm_determinism(seed: u64) -> Check {
    let g = Grid::new(128).expect("positive");
    let mut diff: f64 = 0.0;
    for h in [0.3, 0.5, 0.8] {
        let a = sample_fbm(g, 2, h, seed).expect("valid");
        let b = sample_fbm(g, 2, h, seed).expect("valid");
        diff = diff.max((&a.increments - &b.increments).amax());
    }
    Check::new(
        "rough_driver",
        "fbm_determinism",
        diff == 0.0,
        diff,
        0.0,
        "same seed, same increments".into(),
    )
}

// ---------------------------------------------------------------- flow

fn instance_family(k: usize) -> (&'static str, VectorFieldFamily) {
    if k.is_multiple_of(2) {
        ("step2(2)", make_step2_family(2).expect("d = 2"))
    } else {
        ("step3", make_step3_family())
    }
}

/// Adjoint vs central differences on `instances` random problems, cycling
/// through {step2(2), step3} x H in {0.3, 0.5, 0.8} at L = 20.
pub fn check_gradients(instances: usize, seed: u64, fault: Option<JacobianFault>) -> Check {
    const S: &str = "flow";
    let grid = Grid::new(20).expect("positive");
    let hursts = [0.3, 0.5, 0.8];
    let mut worst: Option<(f64, String)> = None;
    for k in 0..instances {
        let (label, fam) = instance_family(k);
        let hurst = hursts[(k / 2) % 3];
        let mut rng = aux_rng(derive_seed(seed, k as u64, 0));
        let (n, d) = (fam.dim_state(), fam.dim_control());
        let x = normal_vec(&mut rng, n, 1.0);
        let y = normal_vec(&mut rng, n, 1.0);
        let h = ControlIncrements::new(
            grid,
            DMatrix::from_fn(20, d, |_, _| 0.1 * rng.sample::<f64, _>(StandardNormal)),
        )
        .expect("shape");
        let drv = match sample_fbm(grid, d, hurst, derive_seed(seed, k as u64, 1)) {
            Ok(v) => v,
            Err(e) => return Check::failed(S, "gradient_fd", e),
        };
        let cost = QuadraticCost::new(y);
        let res = match fault {
            Some(f) => {
                let bad = FaultyJacobian { inner: &fam, fault: f };
                gradient_check(&bad, &x, &drv, &h, &cost, 1e-5)
            }
            None => gradient_check(&fam, &x, &drv, &h, &cost, 1e-5),
        };
        let chk = match res {
            Ok(c) => c,
            Err(e) => return Check::failed(S, "gradient_fd", e),
        };
        if worst.as_ref().is_none_or(|w| chk.max_rel_err > w.0) {
            let (l, i) = chk.worst;
            worst = Some((
                chk.max_rel_err,
                format!(
                    "worst entry dL/dh(l={l}, i={i}) in instance {k} ({label}, H={hurst}): adjoint {:.6e} vs fd {:.6e}",
                    chk.adjoint_value, chk.fd_value
                ),
            ));
        }
    }
    let (measured, mut detail) = worst.unwrap_or((0.0, "no instances".into()));
    if let Some(f) = fault {
        detail.push_str(&format!(
            "; injected fault DV_{}[{},{}] += {}",
            f.field, f.row, f.col, f.delta
        ));
    }
    Check::below(S, "gradient_fd", measured, 1e-5, detail)
}

/// `|grad L|^2 = (X - y)^T M (X - y)` and `|grad L| >= sqrt(2) c_w sqrt(L)` at
/// random controls on step3.
pub fn check_malliavin_identity(instances: usize, seed: u64) -> Check {
    const S: &str = "flow";
    let fam = make_step3_family();
    let grid = Grid::new(50).expect("positive");
    let mut worst: f64 = 0.0;
    let mut bound_ok = true;
    for k in 0..instances {
        let mut rng = aux_rng(derive_seed(seed, k as u64, 0));
        let x = normal_vec(&mut rng, 5, 1.0);
        let y = normal_vec(&mut rng, 5, 1.0);
        let h = ControlIncrements::new(
            grid,
            DMatrix::from_fn(50, 2, |_, _| 0.2 * rng.sample::<f64, _>(StandardNormal)),
        )
        .expect("shape");
        let drv = match sample_fbm(grid, 2, [0.3, 0.5, 0.7][k % 3], derive_seed(seed, k as u64, 1)) {
            Ok(v) => v,
            Err(e) => return Check::failed(S, "malliavin_identity", e),
        };
        let (res, m) = match (
            adjoint_gradient(&fam, &x, &drv, &h, &QuadraticCost::new(y.clone())),
            malliavin(&fam, &x, &drv, &h),
        ) {
            (Ok(r), Ok(m)) => (r, m),
            (Err(e), _) | (_, Err(e)) => return Check::failed(S, "malliavin_identity", e),
        };
        let g2 = dual_grad_norm(res.adjoint.as_ref().expect("gradient")).powi(2);
        let r: Vec<f64> = res.endpoint.iter().zip(&y).map(|(a, b)| a - b).collect();
        let rmr: f64 = (0..5)
            .map(|p| (0..5).map(|q| r[p] * m.matrix[(p, q)] * r[q]).sum::<f64>())
            .sum();
        worst = worst.max((g2 - rmr).abs() / g2.max(1e-300));
        bound_ok &= g2.sqrt() >= SQRT_2 * m.c_w() * res.loss.sqrt() - 1e-9;
    }
    Check::new(
        S,
        "malliavin_identity",
        worst < 1e-8 && bound_ok,
        worst,
        1e-8,
        format!("relative gap of |grad|^2 vs (X-y)^T M (X-y); Lojasiewicz bound held: {bound_ok}"),
    )
}

// ---------------------------------------------------------------- descent

/// Constant orthonormal fields: `L^{k+1} = (1 - ds)^2 L^k`.
pub fn check_constant_field_recursion() -> Check {
    const S: &str = "descent";
    let fam = VectorFieldFamily::constant(&DMatrix::identity(4, 4)).expect("finite");
    let g = Grid::new(25).expect("positive");
    let mut cfg = DescentConfig::new(0.1, 40, vec![0.0; 4], vec![1.0, -1.0, 2.0, 0.5]);
    cfg.stop_loss = 0.0;
    match run_descent(&fam, &zero_driver(g, 4), &cfg) {
        Ok(rec) => {
            let worst = rec
                .entries
                .windows(2)
                .map(|w| (w[1].loss / w[0].loss - 0.81).abs())
                .fold(0.0, f64::max);
            Check::below(
                S,
                "constant_field_recursion",
                worst,
                1e-10,
                "per-step ratio vs 0.81".into(),
            )
        }
        Err(e) => Check::failed(S, "constant_field_recursion", e),
    }
}

/// Loss nonincreasing at every logged step for `seeds` random problems.
pub fn check_monotone(fam: &VectorFieldFamily, label: &str, seeds: usize, iterations: usize, seed: u64) -> Check {
    const S: &str = "descent";
    let name = format!("monotone_{label}");
    let g = Grid::new(100).expect("positive");
    let mut worst_rise: f64 = 0.0;
    let mut where_ = String::from("none");
    for s in 0..seeds {
        let mut rng = aux_rng(derive_seed(seed, s as u64, 0));
        let x = normal_vec(&mut rng, fam.dim_state(), 1.0);
        let y = normal_vec(&mut rng, fam.dim_state(), 1.0);
        let drv = match sample_fbm(g, fam.dim_control(), 0.5, derive_seed(seed, s as u64, 1)) {
            Ok(v) => v,
            Err(e) => return Check::failed(S, &name, e),
        };
        let mut cfg = DescentConfig::new(0.1, iterations, x, y);
        cfg.stop_loss = 0.0;
        let rec = match run_descent(fam, &drv, &cfg) {
            Ok(r) => r,
            Err(e) => return Check::failed(S, &name, e),
        };
        if let Some(a) = rec.abort {
            return Check::failed(S, &name, format!("seed {s} aborted at iteration {}", a.iter));
        }
        for w in rec.entries.windows(2) {
            let rise = (w[1].loss - w[0].loss) / w[0].loss.max(1e-300);
            if rise > worst_rise {
                worst_rise = rise;
                where_ = format!("seed {s}, iteration {}", w[1].iter);
            }
        }
    }
    Check::new(
        S,
        &name,
        worst_rise <= 1e-12,
        worst_rise,
        1e-12,
        format!("largest relative rise at {where_}; {seeds} seeds x {iterations} iterations"),
    )
}

/// `(L(h - ds grad) - L(h)) / ds = -|grad|^2 (1 + o(1))` at `ds = 0.01`.
pub fn check_energy_identity(trials: usize, seed: u64) -> Check {
    const S: &str = "descent";
    let fam = make_step3_family();
    let g = Grid::new(100).expect("positive");
    let mut worst: f64 = 0.0;
    for t in 0..trials {
        let mut rng = aux_rng(derive_seed(seed, t as u64, 0));
        let pairs = vec![(normal_vec(&mut rng, 5, 1.0), normal_vec(&mut rng, 5, 1.0))];
        let drv = match sample_fbm(g, 2, 0.5, derive_seed(seed, t as u64, 1)) {
            Ok(v) => v,
            Err(e) => return Check::failed(S, "energy_identity", e),
        };
        let h = ControlIncrements::new(
            g,
            DMatrix::from_fn(100, 2, |_, _| 0.05 * rng.sample::<f64, _>(StandardNormal)),
        )
        .expect("shape");
        let obj = Objective::new(&fam, &drv, &pairs);
        let (loss, partials) = match obj.evaluate(&h) {
            Ok(v) => v,
            Err(e) => return Check::failed(S, "energy_identity", e),
        };
        let gn2 = dual_grad_norm(&partials).powi(2);
        let ds = 0.01;
        let mut next = h.clone();
        next.data -= &partials * (ds * g.dt());
        let after = obj.loss(&next).unwrap_or(f64::NAN);
        worst = worst.max(((after - loss) / ds + gn2).abs() / gn2);
    }
    Check::below(
        S,
        "energy_identity",
        worst,
        0.1,
        format!("{trials} random iterates at ds = 0.01"),
    )
}

// ---------------------------------------------------------------- spectral

pub fn check_parseval() -> Check {
    let steps = 4096;
    let f: Vec<f64> = (0..=steps)
        .map(|l| {
            let t = l as f64 / steps as f64;
            0.4 + basis(3, t) - 0.6 * basis(10, t) + 0.3 * basis(27, t) + 0.1 * basis(120, t)
        })
        .collect();
    match dyadic_spectrum(&f, 6) {
        Ok(s) => {
            let rel = (s.coeff_energy() - s.l2_norm_sq).abs() / s.l2_norm_sq;
            Check::below(
                "spectral",
                "parseval",
                rel,
                1e-3,
                format!("band-limited f at L = {steps}"),
            )
        }
        Err(e) => Check::failed("spectral", "parseval", e),
    }
}

/// `f = e_{2m+1}`: block ratio equals `2^n / (2 pi m)` and lies in `[1/(4 pi), 1/pi]`.
pub fn check_bernstein() -> Check {
    let steps = 4096;
    let mut worst: f64 = 0.0;
    let mut inside = true;
    for m in [1usize, 2, 3, 5, 8, 13, 21, 30, 50, 62] {
        let k = 2 * m + 1;
        let w = 2.0 * PI * m as f64;
        let f: Vec<f64> = (0..=steps).map(|l| basis(k, l as f64 / steps as f64)).collect();
        let df: Vec<f64> = (0..=steps)
            .map(|l| -w * basis(k + 1, l as f64 / steps as f64))
            .collect();
        let (sf, sd) = match (dyadic_spectrum(&f, 7), dyadic_spectrum(&df, 7)) {
            (Ok(a), Ok(b)) => (a, b),
            (Err(e), _) | (_, Err(e)) => return Check::failed("spectral", "bernstein", e),
        };
        let rep = bernstein_check(&sf, &sd);
        if rep.ratios.len() != 1 {
            return Check::failed(
                "spectral",
                "bernstein",
                format!("m = {m}: {} non-empty blocks", rep.ratios.len()),
            );
        }
        let (n, r) = rep.ratios[0];
        let exact = 2f64.powi(block_of(k) as i32) / w;
        worst = worst.max((r - exact).abs());
        inside &= n == block_of(k) && (1.0 / (4.0 * PI) - 1e-12..=1.0 / PI + 1e-12).contains(&r);
    }
    Check::new(
        "spectral",
        "bernstein",
        worst < 1e-6 && inside,
        worst,
        1e-6,
        format!("single modes; all ratios inside [1/(4 pi), 1/pi]: {inside}"),
    )
}

fn brute_force_qvar(f: &[f64], q: f64) -> f64 {
    let inner = f.len().saturating_sub(2);
    let mut best: f64 = 0.0;
    for mask in 0u32..(1 << inner) {
        let mut prev = 0;
        let mut s = 0.0;
        for b in 0..inner {
            if mask & (1 << b) != 0 {
                s += (f[b + 1] - f[prev]).abs().powf(q);
                prev = b + 1;
            }
        }
        s += (f[f.len() - 1] - f[prev]).abs().powf(q);
        best = best.max(s);
    }
    best.powf(1.0 / q)
}

/// DP q-variation vs exhaustive partition search, `L <= 12`.
pub fn check_qvar_brute_force(paths: usize, seed: u64) -> Check {
    let mut worst: f64 = 0.0;
    for p in 0..paths {
        let steps = 2 + p % 11;
        let drv = match sample_fbm(
            Grid::new(steps).expect("positive"),
            1,
            0.3 + 0.1 * (p % 5) as f64,
            derive_seed(seed, p as u64, 0),
        ) {
            Ok(v) => v,
            Err(e) => return Check::failed("spectral", "qvar_brute_force", e),
        };
        let f: Vec<f64> = drv.path_values().column(0).iter().copied().collect();
        for q in [1.2, 1.5, 1.9] {
            let dp = qvar_norm(&f, q).unwrap_or(f64::NAN);
            worst = worst.max((dp - brute_force_qvar(&f, q)).abs());
        }
    }
    Check::below(
        "spectral",
        "qvar_brute_force",
        worst,
        1e-12,
        format!("{paths} paths, L <= 12, q in {{1.2, 1.5, 1.9}}"),
    )
}

/// Mean energy and cross moment of Brownian derivative blocks. Returns the
/// mean check, the cross-moment check and an informational variance line.
pub fn check_delta_b(n_block: usize, samples: usize, resolution: usize, seed: u64) -> Vec<Check> {
    const S: &str = "spectral";
    let rep = match delta_b_statistics(n_block, samples, resolution, seed) {
        Ok(r) => r,
        Err(e) => return vec![Check::failed(S, "delta_b_mean", e)],
    };
    let z_mean = (rep.energy_mean - rep.expected_mean).abs() / rep.energy_mean_se;
    let z_cross = rep.cross_mean.abs() / rep.cross_mean_se;
    let z_var = |v: f64| (rep.energy_var - v).abs() / rep.energy_var_se;
    vec![
        Check::below(
            S,
            "delta_b_mean",
            z_mean,
            3.0,
            format!(
                "mean {:.4} vs {} (se {:.4})",
                rep.energy_mean, rep.expected_mean, rep.energy_mean_se
            ),
        ),
        Check::below(
            S,
            "delta_b_cross",
            z_cross,
            3.0,
            format!("cross moment {:.4} (se {:.4})", rep.cross_mean, rep.cross_mean_se),
        ),
        Check::new(
            S,
            "delta_b_variance_report",
            true,
            rep.energy_var,
            rep.var_candidates[rep.var_closer],
            format!(
                "sample variance {:.3} (se {:.3}); {} at {:.2} se, {} at {:.2} se; closer: {}",
                rep.energy_var,
                rep.energy_var_se,
                rep.var_candidates[0],
                z_var(rep.var_candidates[0]),
                rep.var_candidates[1],
                z_var(rep.var_candidates[1]),
                rep.var_candidates[rep.var_closer]
            ),
        ),
    ]
}

/// `h(t) = int_0^t B`: a C^1 path with Brownian derivative.
pub fn integrated_brownian(steps: usize, seed: u64) -> roughflow_core::Result<Vec<f64>> {
    let b = sample_fbm(Grid::new(steps)?, 1, 0.5, seed)?.path_values();
    let dt = 1.0 / steps as f64;
    let mut h = vec![0.0; steps + 1];
    for l in 0..steps {
        h[l + 1] = h[l] + 0.5 * dt * (b[(l, 0)] + b[(l + 1, 0)]);
    }
    Ok(h)
}

/// Worst fitted slope of the projection gap ratio over `seeds` inputs.
pub fn check_pwl_rate(seeds: usize, q: f64, seed: u64) -> Check {
    const S: &str = "spectral";
    let bound = 1.0 / q - 1.0 + 0.15;
    let mut worst = f64::NEG_INFINITY;
    let mut slopes = Vec::new();
    for s in 0..seeds {
        let h = match integrated_brownian(1024, derive_seed(seed, s as u64, 0)) {
            Ok(h) => h,
            Err(e) => return Check::failed(S, "pwl_rate", e),
        };
        match pwl_projection_gap(&h, &[4, 8, 16, 32], q).map(|r| r.slope) {
            Ok(Some(sl)) => {
                worst = worst.max(sl);
                slopes.push((sl * 1000.0).round() / 1000.0);
            }
            Ok(None) => return Check::failed(S, "pwl_rate", "gap vanished; slope undefined"),
            Err(e) => return Check::failed(S, "pwl_rate", e),
        }
    }
    Check::new(
        S,
        "pwl_rate",
        worst <= bound,
        worst,
        bound,
        format!("q = {q}, n in {{4,8,16,32}}, integrated Brownian inputs; slopes {slopes:?}"),
    )
}

/// Irregularity probe floor over low-block truncations of `B^1` and their
/// doubles, `d = 2` channels. Returns the floor check and the scaling check.
pub fn check_bh1l2(seeds: usize, delta: f64, seed: u64) -> Vec<Check> {
    const S: &str = "spectral";
    let steps = 1024;
    let max_block = 7;
    let mut floor = f64::INFINITY;
    let mut scaled_floor = f64::INFINITY;
    let mut scaling_ok = true;
    let mut mesh_ok = true;
    for s in 0..seeds {
        let paths = match sample_fbm(
            Grid::new(steps).expect("positive"),
            2,
            0.5,
            derive_seed(seed, s as u64, 0),
        ) {
            Ok(d) => d.path_values(),
            Err(e) => return vec![Check::failed(S, "bh1l2_floor", e)],
        };
        let b: Vec<Vec<f64>> = (0..2).map(|i| paths.column(i).iter().copied().collect()).collect();
        let family = match truncation_family(&b[0], max_block) {
            Ok(f) => f,
            Err(e) => return vec![Check::failed(S, "bh1l2_floor", e)],
        };
        let doubled: Vec<Vec<f64>> = family.iter().map(|h| h.iter().map(|v| 2.0 * v).collect()).collect();
        let (base, twice) = match (
            bh1l2_probe(&b, &family, delta, max_block),
            bh1l2_probe(&b, &doubled, delta, max_block),
        ) {
            (Ok(a), Ok(t)) => (a, t),
            (Err(e), _) | (_, Err(e)) => return vec![Check::failed(S, "bh1l2_floor", e)],
        };
        floor = floor.min(base.floor);
        scaled_floor = scaled_floor.min(twice.floor);
        scaling_ok &= twice.floor >= base.floor;
        mesh_ok &= base.mesh_min_h0 >= base.eig_min_h0 - 1e-12 && base.mesh_min_h0 <= 1.01 * base.eig_min_h0 + 1e-12;
    }
    vec![
        Check::new(
            S,
            "bh1l2_floor",
            floor > 0.0 && floor.is_finite() && mesh_ok,
            floor,
            0.0,
            format!("{seeds} seeds, delta = {delta}, L = {steps}, blocks <= {max_block}; mesh agrees with Gram eigenvalue: {mesh_ok}"),
        ),
        Check::new(
            S,
            "bh1l2_scaling",
            scaling_ok,
            scaled_floor,
            floor,
            "doubled family floor vs recorded floor".into(),
        ),
    ]
}

// ---------------------------------------------------------------- suites

pub fn run_suite(suite: Suite, fault: Option<JacobianFault>) -> Vec<Check> {
    let all = suite == Suite::All;
    let mut out = Vec::new();
    if all || suite == Suite::VectorFields {
        out.push(check_step2_nilpotency(2, 100, 1));
        out.push(check_step2_nilpotency(4, 20, 2));
        out.push(check_step3_closed_forms(100, 3));
        out.push(check_jacobians(50, 4));
        out.push(check_step2_ellipticity(20, 5));
    }
    if all || suite == Suite::RoughDriver {
        for h in [0.3, 0.5, 0.8] {
            out.push(check_fbm_covariance(h, 5000, 4.0, 6));
        }
        out.push(check_fbm_determinism(7));
    }
    if all || suite == Suite::Flow {
        out.push(check_gradients(30, 8, fault));
        out.push(check_malliavin_identity(10, 9));
    }
    if all || suite == Suite::Descent {
        out.push(check_constant_field_recursion());
        out.push(check_monotone(&make_step3_family(), "step3", 10, 200, 10));
        out.push(check_monotone(
            &make_step2_family(2).expect("d = 2"),
            "step2_d2",
            10,
            200,
            11,
        ));
        out.push(check_energy_identity(5, 12));
    }
    if all || suite == Suite::Spectral {
        out.push(check_parseval());
        out.push(check_bernstein());
        out.push(check_qvar_brute_force(30, 13));
        out.extend(check_delta_b(3, 2000, 1 << 12, 14));
        out.push(check_pwl_rate(10, 1.5, 15));
        out.extend(check_bh1l2(20, 0.75, 16));
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub suite: Suite,
    pub passed: bool,
    pub checks: Vec<Check>,
}

pub fn report(suite: Suite, fault: Option<JacobianFault>) -> Report {
    let checks = run_suite(suite, fault);
    Report {
        suite,
        passed: checks.iter().all(|c| c.passed),
        checks,
    }
}
