//! Gradient descent on control increments and convergence certificates.
//!
//! The update is `h <- h - ds * dt * dL/dh`, i.e. an explicit Euler step of
//! size `ds` for the gradient flow under the control inner product described
//! in [`crate::flow`]. For several `(x_m, y_m)` pairs the loss is the average
//! `(1/N) sum_m 1/2 |X_1^{x_m} - y_m|^2` over one shared control.

use std::io::Write;
use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{adjoint_gradient, dual_grad_norm, evolve, malliavin, ControlIncrements, QuadraticCost};
use crate::linalg::linear_fit;
use crate::rough_driver::RoughDriver;
use crate::vector_fields::VectorFields;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescentConfig {
    pub step_size: f64,
    pub iterations: usize,
    pub stop_loss: f64,
    pub log_every: usize,
    /// `(x_m, y_m)` initial/target pairs sharing one control.
    pub pairs: Vec<(Vec<f64>, Vec<f64>)>,
    /// Compute `c_w(h)` at logged iterations divisible by this cadence.
    /// Only used for single-pair runs.
    pub malliavin_every: Option<usize>,
}

impl DescentConfig {
    pub fn new(step_size: f64, iterations: usize, x: Vec<f64>, y: Vec<f64>) -> Self {
        Self {
            step_size,
            iterations,
            stop_loss: 1e-12,
            log_every: 1,
            pairs: vec![(x, y)],
            malliavin_every: None,
        }
    }

    pub fn validate(&self, dim_state: usize) -> Result<()> {
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "step size {} must be positive",
                self.step_size
            )));
        }
        if self.iterations == 0 || self.log_every == 0 {
            return Err(Error::InvalidParameter(
                "iterations and log_every must be positive".into(),
            ));
        }
        if self.stop_loss.is_nan() || self.stop_loss < 0.0 {
            return Err(Error::InvalidParameter("stop_loss must be nonnegative".into()));
        }
        if self.pairs.is_empty() {
            return Err(Error::InvalidParameter("need at least one (x, y) pair".into()));
        }
        if self.malliavin_every == Some(0) {
            return Err(Error::InvalidParameter("malliavin cadence must be positive".into()));
        }
        for (x, y) in &self.pairs {
            if x.len() != dim_state || y.len() != dim_state {
                return Err(Error::ShapeMismatch(format!(
                    "pair dimensions ({}, {}) do not match n = {dim_state}",
                    x.len(),
                    y.len()
                )));
            }
        }
        Ok(())
    }
}

/// Averaged multi-pair loss as a function of the shared control.
pub struct Objective<'a, F: VectorFields + ?Sized> {
    fam: &'a F,
    driver: &'a RoughDriver,
    points: Vec<Vec<f64>>,
    costs: Vec<QuadraticCost>,
}

impl<'a, F: VectorFields + ?Sized> Objective<'a, F> {
    pub fn new(fam: &'a F, driver: &'a RoughDriver, pairs: &[(Vec<f64>, Vec<f64>)]) -> Self {
        Self {
            fam,
            driver,
            points: pairs.iter().map(|(x, _)| x.clone()).collect(),
            costs: pairs.iter().map(|(_, y)| QuadraticCost::new(y.clone())).collect(),
        }
    }

    pub fn loss(&self, h: &ControlIncrements) -> Result<f64> {
        let mut total = 0.0;
        for (x, c) in self.points.iter().zip(&self.costs) {
            total += evolve(self.fam, x, self.driver, h, c)?.loss;
        }
        Ok(total / self.points.len() as f64)
    }

    /// Loss and the averaged partials `dL/dh`.
    pub fn evaluate(&self, h: &ControlIncrements) -> Result<(f64, DMatrix<f64>)> {
        let mut total = 0.0;
        let mut grad = DMatrix::zeros(h.data.nrows(), h.data.ncols());
        for (x, c) in self.points.iter().zip(&self.costs) {
            let res = adjoint_gradient(self.fam, x, self.driver, h, c)?;
            total += res.loss;
            grad += res.adjoint.expect("adjoint requested");
        }
        let n = self.points.len() as f64;
        Ok((total / n, grad / n))
    }

    /// Per-pair partials, for checking the averaging.
    pub fn per_pair_partials(&self, h: &ControlIncrements) -> Result<Vec<DMatrix<f64>>> {
        self.points
            .iter()
            .zip(&self.costs)
            .map(|(x, c)| {
                Ok(adjoint_gradient(self.fam, x, self.driver, h, c)?
                    .adjoint
                    .expect("adjoint requested"))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterRecord {
    pub iter: usize,
    pub loss: f64,
    pub grad_norm: f64,
    pub control_norm: f64,
    pub c_w: Option<f64>,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Abort {
    pub iter: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub entries: Vec<IterRecord>,
    pub abort: Option<Abort>,
    /// Set when the loss dropped below `stop_loss` before the last iteration.
    pub stopped_early: bool,
    pub final_control: ControlIncrements,
}

impl RunRecord {
    pub fn last(&self) -> Option<&IterRecord> {
        self.entries.last()
    }

    /// CSV with columns `iter,loss,grad_norm,control_norm,c_w,wall_ms`.
    /// A missing `c_w` is an empty field; an abort is a trailing `#` comment.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "iter,loss,grad_norm,control_norm,c_w,wall_ms")?;
        for e in &self.entries {
            let cw = e.c_w.map(|c| format!("{c:e}")).unwrap_or_default();
            writeln!(
                out,
                "{},{:e},{:e},{:e},{},{:.3}",
                e.iter, e.loss, e.grad_norm, e.control_norm, cw, e.wall_ms
            )?;
        }
        if let Some(a) = &self.abort {
            writeln!(out, "# abort at iteration {}: {}", a.iter, a.reason)?;
        }
        Ok(())
    }
}

/// Plain gradient descent from `h = 0`.
///
/// Evaluates `h^0, .., h^K` and logs every `log_every` iterations plus the
/// final one. A non-finite state ends the run with an abort marker; the
/// telemetry gathered so far is kept.
pub fn run_descent<F: VectorFields + ?Sized>(fam: &F, driver: &RoughDriver, cfg: &DescentConfig) -> Result<RunRecord> {
    cfg.validate(fam.dim_state())?;
    if driver.channels() != fam.dim_control() {
        return Err(Error::ShapeMismatch(format!(
            "driver has {} channels, family has {}",
            driver.channels(),
            fam.dim_control()
        )));
    }
    let objective = Objective::new(fam, driver, &cfg.pairs);
    let dt = driver.grid.dt();
    let mut h = ControlIncrements::zeros(driver.grid, fam.dim_control());
    let mut entries = Vec::new();
    let mut abort = None;
    let mut stopped_early = false;
    let start = Instant::now();

    for k in 0..=cfg.iterations {
        let (loss, partials) = match objective.evaluate(&h) {
            Ok(v) => v,
            Err(Error::NonFinite { step }) => {
                abort = Some(Abort {
                    iter: k,
                    reason: format!("non-finite state at time step {step}"),
                });
                break;
            }
            Err(e) => return Err(e),
        };
        if !loss.is_finite() || partials.iter().any(|g| !g.is_finite()) {
            abort = Some(Abort {
                iter: k,
                reason: "non-finite loss or gradient".into(),
            });
            break;
        }
        let stop = loss < cfg.stop_loss && k < cfg.iterations;
        if k % cfg.log_every == 0 || k == cfg.iterations || stop {
            let c_w = match cfg.malliavin_every {
                Some(every) if cfg.pairs.len() == 1 && k % every == 0 => {
                    Some(malliavin(fam, &cfg.pairs[0].0, driver, &h)?.c_w())
                }
                _ => None,
            };
            entries.push(IterRecord {
                iter: k,
                loss,
                grad_norm: dual_grad_norm(&partials),
                control_norm: h.norm(),
                c_w,
                wall_ms: start.elapsed().as_secs_f64() * 1e3,
            });
        }
        if stop {
            stopped_early = true;
            break;
        }
        if k < cfg.iterations {
            h.data -= partials * (cfg.step_size * dt);
        }
    }
    Ok(RunRecord {
        entries,
        abort,
        stopped_early,
        final_control: h,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct C1rReport {
    /// Largest `c` with `|grad L| (1 + |h|) >= c sqrt(L)` at every logged iterate
    /// (`+inf` when every logged loss is zero).
    pub fitted_c: f64,
    pub supplied_c: f64,
    pub supplied_holds: bool,
    /// `exp((2 / c_fit) sqrt(L(0))) - 1`.
    pub radius_bound: f64,
    pub realized_norm: f64,
    pub radius_respected: bool,
}

/// Checks the `c / (1 + |h|)` Lojasiewicz condition along a run.
pub fn certificate_c1r(record: &RunRecord, c: f64) -> Result<C1rReport> {
    if record.entries.is_empty() {
        return Err(Error::InsufficientData("empty run record".into()));
    }
    if let Some(a) = &record.abort {
        return Err(Error::InvalidParameter(format!("run aborted at iteration {}", a.iter)));
    }
    let ratio = |e: &IterRecord| e.grad_norm * (1.0 + e.control_norm) / e.loss.sqrt();
    let fitted_c = record
        .entries
        .iter()
        .filter(|e| e.loss > 0.0)
        .map(ratio)
        .fold(f64::INFINITY, f64::min);
    let supplied_holds = record
        .entries
        .iter()
        .all(|e| e.grad_norm * (1.0 + e.control_norm) >= c * e.loss.sqrt());
    let l0 = record.entries[0].loss;
    let radius_bound = ((2.0 / fitted_c) * l0.sqrt()).exp() - 1.0;
    let realized_norm = record.entries.last().expect("non-empty").control_norm;
    Ok(C1rReport {
        fitted_c,
        supplied_c: c,
        supplied_holds,
        radius_bound,
        realized_norm,
        radius_respected: realized_norm <= radius_bound,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayReport {
    /// Slope of `ln L` against the iteration index over the tail window.
    pub slope: f64,
    /// Implied per-iteration contraction `exp(slope)`.
    pub rate: f64,
    pub r_squared: f64,
    pub tail_points: usize,
}

/// Minimum number of tail points for a decay fit.
pub const MIN_TAIL_POINTS: usize = 10;

/// Log-linear fit over the final quarter of the logged iterates.
pub fn certificate_decay(record: &RunRecord) -> Result<DecayReport> {
    let n = record.entries.len();
    let tail = n / 4;
    if tail < MIN_TAIL_POINTS {
        return Err(Error::InsufficientData(format!(
            "{tail} tail points, need at least {MIN_TAIL_POINTS}"
        )));
    }
    let window = &record.entries[n - tail..];
    if window.iter().any(|e| e.loss.is_nan() || e.loss <= 0.0) {
        return Err(Error::InsufficientData("non-positive loss in the tail window".into()));
    }
    let xs: Vec<f64> = window.iter().map(|e| e.iter as f64).collect();
    let ys: Vec<f64> = window.iter().map(|e| e.loss.ln()).collect();
    let (slope, _, r_squared) = linear_fit(&xs, &ys);
    Ok(DecayReport {
        slope,
        rate: slope.exp(),
        r_squared,
        tail_points: tail,
    })
}
