//! Rough initial conditions: fractional Brownian paths on a uniform grid.
//!
//! Paths are stored as increments `w_{t_l, t_{l+1}}` (an `L x d` matrix).
//! Fractional Gaussian noise is synthesized exactly by circulant embedding
//! (Davies-Harte); if the embedding is not nonnegative definite the dense
//! Cholesky factor of the increment covariance is used instead.

use std::io::Write;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::channel_rng;

/// Uniform grid `t_l = l / L` on `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grid {
    steps: usize,
}

impl Grid {
    pub fn new(steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidParameter("grid needs at least one step".into()));
        }
        Ok(Self { steps })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.steps as f64
    }

    pub fn time(&self, l: usize) -> f64 {
        l as f64 / self.steps as f64
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.steps).map(|l| self.time(l)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DriverKind {
    Fbm,
    Zero,
    Deterministic,
}

/// Which synthesis route to use for fractional Gaussian noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FbmMethod {
    /// Circulant embedding, falling back to Cholesky when it fails.
    Auto,
    CirculantEmbedding,
    Cholesky,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoughDriver {
    pub grid: Grid,
    pub hurst: f64,
    /// Entry `(l, i)` is the increment of channel `i` over `[t_l, t_{l+1}]`.
    pub increments: DMatrix<f64>,
    pub seed: u64,
    pub kind: DriverKind,
    /// Synthesis route that actually ran (`None` for non-random drivers).
    pub method: Option<FbmMethod>,
}

impl RoughDriver {
    pub fn channels(&self) -> usize {
        self.increments.ncols()
    }

    /// `(L+1) x d` matrix of path values; row 0 is zero.
    pub fn path_values(&self) -> DMatrix<f64> {
        prefix_sum(&self.increments)
    }

    /// Driver whose increments are the differences of `w` sampled on the grid.
    pub fn from_path_fn(grid: Grid, channels: usize, w: impl Fn(f64) -> Vec<f64>) -> Result<Self> {
        let mut inc = DMatrix::zeros(grid.steps(), channels);
        let mut prev = w(0.0);
        check_len(&prev, channels)?;
        for l in 0..grid.steps() {
            let next = w(grid.time(l + 1));
            check_len(&next, channels)?;
            for i in 0..channels {
                inc[(l, i)] = next[i] - prev[i];
            }
            prev = next;
        }
        Ok(Self {
            grid,
            hurst: 0.5,
            increments: inc,
            seed: 0,
            kind: DriverKind::Deterministic,
            method: None,
        })
    }

    /// Driver with the given increments and nominal Hurst parameter.
    pub fn from_increments(grid: Grid, hurst: f64, increments: DMatrix<f64>) -> Result<Self> {
        if increments.nrows() != grid.steps() {
            return Err(Error::ShapeMismatch(format!(
                "{} increment rows for a {}-step grid",
                increments.nrows(),
                grid.steps()
            )));
        }
        Ok(Self {
            grid,
            hurst,
            increments,
            seed: 0,
            kind: DriverKind::Deterministic,
            method: None,
        })
    }

    /// CSV dump: header `t,w0,w1,..`, one row per grid time.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let values = self.path_values();
        let header: Vec<String> = std::iter::once("t".to_string())
            .chain((0..self.channels()).map(|i| format!("w{i}")))
            .collect();
        writeln!(out, "{}", header.join(","))?;
        for l in 0..=self.grid.steps() {
            write!(out, "{}", self.grid.time(l))?;
            for i in 0..self.channels() {
                write!(out, ",{}", values[(l, i)])?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

fn check_len(v: &[f64], channels: usize) -> Result<()> {
    if v.len() != channels {
        return Err(Error::ShapeMismatch(format!(
            "path function returned {} channels, expected {channels}",
            v.len()
        )));
    }
    Ok(())
}

pub(crate) fn prefix_sum(inc: &DMatrix<f64>) -> DMatrix<f64> {
    let (l, d) = inc.shape();
    let mut out = DMatrix::zeros(l + 1, d);
    for i in 0..d {
        for r in 0..l {
            out[(r + 1, i)] = out[(r, i)] + inc[(r, i)];
        }
    }
    out
}

pub fn zero_driver(grid: Grid, channels: usize) -> RoughDriver {
    RoughDriver {
        grid,
        hurst: 0.5,
        increments: DMatrix::zeros(grid.steps(), channels),
        seed: 0,
        kind: DriverKind::Zero,
        method: None,
    }
}

/// `d` independent fBm channels with `E[B_s B_t] = (s^2H + t^2H - |t-s|^2H) / 2`.
///
/// Channel `i` draws its Gaussians from stream `i + 1` of the seed (see
/// [`crate::rng`]), so the output is a pure function of the arguments.
pub fn sample_fbm(grid: Grid, channels: usize, hurst: f64, seed: u64) -> Result<RoughDriver> {
    sample_fbm_with(grid, channels, hurst, seed, FbmMethod::Auto)
}

pub fn sample_fbm_with(grid: Grid, channels: usize, hurst: f64, seed: u64, method: FbmMethod) -> Result<RoughDriver> {
    check_hurst(hurst)?;
    if channels == 0 {
        return Err(Error::InvalidParameter("need at least one channel".into()));
    }
    let sampler = FgnSampler::new(grid, hurst, method)?;
    let mut increments = DMatrix::zeros(grid.steps(), channels);
    for i in 0..channels {
        let noise = sampler.sample(seed, i);
        increments.set_column(i, &nalgebra::DVector::from_vec(noise));
    }
    Ok(RoughDriver {
        grid,
        hurst,
        increments,
        seed,
        kind: DriverKind::Fbm,
        method: Some(sampler.method()),
    })
}

fn check_hurst(hurst: f64) -> Result<()> {
    if !(hurst > 0.0 && hurst < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "Hurst parameter {hurst} outside (0, 1)"
        )));
    }
    Ok(())
}

/// Autocovariance of fractional Gaussian noise at lag `k`, for unit spacing.
pub fn fgn_autocovariance(hurst: f64, k: usize) -> f64 {
    let h2 = 2.0 * hurst;
    let k = k as f64;
    0.5 * ((k + 1.0).powf(h2) - 2.0 * k.powf(h2) + (k - 1.0).abs().powf(h2))
}

/// `E[B_s B_t] = (s^2H + t^2H - |t - s|^2H) / 2`.
pub fn fbm_covariance(hurst: f64, s: f64, t: f64) -> f64 {
    let h2 = 2.0 * hurst;
    0.5 * (s.powf(h2) + t.powf(h2) - (t - s).abs().powf(h2))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CovarianceEntry {
    pub s: f64,
    pub t: f64,
    pub empirical: f64,
    pub exact: f64,
    pub std_err: f64,
    /// `|empirical - exact| / std_err`.
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CovarianceReport {
    pub hurst: f64,
    pub samples: usize,
    pub method: FbmMethod,
    /// Upper triangle of the covariance of `(B_t)` over the requested times.
    pub entries: Vec<CovarianceEntry>,
    pub max_z: f64,
    /// `E|B_t|^2 / t^2H` for each requested time.
    pub self_similarity: Vec<(f64, f64)>,
}

/// Monte-Carlo covariance of one fBm channel at grid times `times` (which
/// must be multiples of `1/L`). Sample `j` uses seed `derive_seed(seed, j, 0)`.
pub fn covariance_check(grid: Grid, hurst: f64, times: &[f64], samples: usize, seed: u64) -> Result<CovarianceReport> {
    if samples < 2 {
        return Err(Error::InsufficientData("need at least two samples".into()));
    }
    let steps = grid.steps();
    let idx: Vec<usize> = times
        .iter()
        .map(|&t| {
            let l = (t * steps as f64).round();
            if (l / steps as f64 - t).abs() > 1e-12 || !(1.0..=steps as f64).contains(&l) {
                Err(Error::InvalidParameter(format!(
                    "time {t} is not a positive grid point"
                )))
            } else {
                Ok(l as usize)
            }
        })
        .collect::<Result<_>>()?;
    check_hurst(hurst)?;
    let sampler = FgnSampler::new(grid, hurst, FbmMethod::Auto)?;
    let values: Vec<Vec<f64>> = (0..samples)
        .map(|j| {
            let inc = sampler.sample(crate::rng::derive_seed(seed, j as u64, 0), 0);
            let mut acc = 0.0;
            let mut path = Vec::with_capacity(steps + 1);
            path.push(0.0);
            for v in inc {
                acc += v;
                path.push(acc);
            }
            idx.iter().map(|&l| path[l]).collect()
        })
        .collect();
    let n = samples as f64;
    let mut entries = Vec::new();
    for a in 0..times.len() {
        for b in a..times.len() {
            let prods: Vec<f64> = values.iter().map(|v| v[a] * v[b]).collect();
            let mean = prods.iter().sum::<f64>() / n;
            let var = prods.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (n - 1.0);
            let std_err = (var / n).sqrt();
            let exact = fbm_covariance(hurst, times[a], times[b]);
            entries.push(CovarianceEntry {
                s: times[a],
                t: times[b],
                empirical: mean,
                exact,
                std_err,
                z: (mean - exact).abs() / std_err,
            });
        }
    }
    let max_z = entries.iter().map(|e| e.z).fold(0.0, f64::max);
    let self_similarity = entries
        .iter()
        .filter(|e| e.s == e.t)
        .map(|e| (e.t, e.empirical / e.t.powf(2.0 * hurst)))
        .collect();
    Ok(CovarianceReport {
        hurst,
        samples,
        method: sampler.method(),
        entries,
        max_z,
        self_similarity,
    })
}

enum Factor {
    /// `sqrt(lambda_k / M)` for the `M = 2L` circulant, with its FFT plan.
    Circulant(Vec<f64>, Arc<dyn Fft<f64>>),
    /// Lower Cholesky factor of the `L x L` increment covariance.
    Cholesky(DMatrix<f64>),
}

/// Reusable fractional Gaussian noise sampler for one `(grid, H)` pair.
pub struct FgnSampler {
    steps: usize,
    scale: f64,
    factor: Factor,
}

impl FgnSampler {
    pub fn new(grid: Grid, hurst: f64, method: FbmMethod) -> Result<Self> {
        let steps = grid.steps();
        let scale = grid.dt().powf(hurst);
        let factor = match method {
            FbmMethod::Cholesky => Factor::Cholesky(cholesky_factor(steps, hurst)?),
            FbmMethod::CirculantEmbedding => {
                let f = circulant_factor(steps, hurst).ok_or_else(|| {
                    Error::InvalidParameter(format!(
                        "circulant embedding is not nonnegative definite for L = {steps}, H = {hurst}"
                    ))
                })?;
                Factor::Circulant(f, plan(2 * steps))
            }
            FbmMethod::Auto => match circulant_factor(steps, hurst) {
                Some(f) => Factor::Circulant(f, plan(2 * steps)),
                None => Factor::Cholesky(cholesky_factor(steps, hurst)?),
            },
        };
        Ok(Self { steps, scale, factor })
    }

    pub fn method(&self) -> FbmMethod {
        match self.factor {
            Factor::Circulant(..) => FbmMethod::CirculantEmbedding,
            Factor::Cholesky(_) => FbmMethod::Cholesky,
        }
    }

    /// Increments for channel `channel` of seed `seed`.
    pub fn sample(&self, seed: u64, channel: usize) -> Vec<f64> {
        let mut rng = channel_rng(seed, channel);
        let l = self.steps;
        match &self.factor {
            Factor::Circulant(sqrt_lambda, fft) => {
                let mut buf: Vec<Complex<f64>> = sqrt_lambda
                    .iter()
                    .map(|&s| {
                        let re: f64 = StandardNormal.sample(&mut rng);
                        let im: f64 = StandardNormal.sample(&mut rng);
                        Complex::new(s * re, s * im)
                    })
                    .collect();
                fft.process(&mut buf);
                buf[..l].iter().map(|c| c.re * self.scale).collect()
            }
            Factor::Cholesky(chol) => {
                let z: Vec<f64> = (0..l).map(|_| StandardNormal.sample(&mut rng)).collect();
                let z = nalgebra::DVector::from_vec(z);
                (chol * z).iter().map(|v| v * self.scale).collect()
            }
        }
    }
}

fn plan(len: usize) -> Arc<dyn Fft<f64>> {
    FftPlanner::new().plan_fft_forward(len)
}

/// Square roots of the scaled circulant eigenvalues, or `None` when some
/// eigenvalue is materially negative.
fn circulant_factor(steps: usize, hurst: f64) -> Option<Vec<f64>> {
    let m = 2 * steps;
    let mut row: Vec<Complex<f64>> = Vec::with_capacity(m);
    for k in 0..=steps {
        row.push(Complex::new(fgn_autocovariance(hurst, k), 0.0));
    }
    for k in (1..steps).rev() {
        row.push(Complex::new(fgn_autocovariance(hurst, k), 0.0));
    }
    plan(m).process(&mut row);
    let max = row.iter().map(|c| c.re.abs()).fold(0.0, f64::max);
    let tol = 1e-10 * max.max(1.0);
    if row.iter().any(|c| c.re < -tol) {
        return None;
    }
    Some(row.iter().map(|c| (c.re.max(0.0) / m as f64).sqrt()).collect())
}

fn cholesky_factor(steps: usize, hurst: f64) -> Result<DMatrix<f64>> {
    let cov = DMatrix::from_fn(steps, steps, |r, c| fgn_autocovariance(hurst, r.abs_diff(c)));
    nalgebra::linalg::Cholesky::new(cov)
        .map(|c| c.l())
        .ok_or_else(|| Error::InvalidParameter("increment covariance is not positive definite".into()))
}
