//! Fourier and path-regularity toolbox.
//!
//! Trigonometric basis on `[0, 1]`:
//!
//! ```text
//! e_0 = 1,  e_{2m+1} = sqrt(2) cos(2 pi m t),  e_{2m+2} = sqrt(2) sin(2 pi m t)
//! ```
//!
//! The `m = 0` pair is degenerate (`e_1` would duplicate the constant and
//! `e_2` vanishes), so indices 1 and 2 are treated as null modes with zero
//! coefficients. Dyadic block `n` collects indices
//! `I_n = [2^(n+1) - 1, 2^(n+2) - 1)`; sine/cosine pairs never straddle blocks.
//! Block 0 is therefore always empty.
//!
//! Sobolev norms are the Littlewood-Paley surrogate
//! `|f|_{H^delta}^2 = sum_n 2^(2 n delta) |Delta_n f|^2`, which is equivalent
//! (not equal) to the Slobodeckij norm and ignores the mean.

use std::f64::consts::{PI, SQRT_2};
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{linear_fit, smallest_eigenpair};
use crate::rng::{channel_rng, derive_seed};

/// `e_k(t)`.
pub fn basis(k: usize, t: f64) -> f64 {
    match k {
        0 => 1.0,
        1 | 2 => 0.0,
        k if k % 2 == 1 => SQRT_2 * (2.0 * PI * ((k - 1) / 2) as f64 * t).cos(),
        k => SQRT_2 * (2.0 * PI * ((k - 2) / 2) as f64 * t).sin(),
    }
}

/// Frequency `m` of basis index `k >= 1`.
pub fn frequency(k: usize) -> usize {
    if k % 2 == 1 {
        (k - 1) / 2
    } else {
        (k - 2) / 2
    }
}

/// Index range `I_n` as a half-open range.
pub fn block_range(n: usize) -> std::ops::Range<usize> {
    ((1usize << (n + 1)) - 1)..((1usize << (n + 2)) - 1)
}

/// Block containing index `k >= 1`.
pub fn block_of(k: usize) -> usize {
    debug_assert!(k >= 1);
    // 2^(n+1) - 1 <= k < 2^(n+2) - 1  <=>  2^(n+1) <= k + 1 < 2^(n+2)
    (usize::BITS - 1 - (k + 1).leading_zeros()) as usize - 1
}

/// Largest coefficient index used when blocks `0..=max_block` are kept.
pub fn max_index(max_block: usize) -> usize {
    block_range(max_block).end - 1
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DyadicSpectrum {
    /// `gamma_k` for `k = 0..=max_index(max_block)`.
    pub coeffs: Vec<f64>,
    pub max_block: usize,
    /// `|Delta_n f|^2` for `n = 0..=max_block`.
    pub block_energy: Vec<f64>,
    /// Trapezoidal `int_0^1 f^2` of the samples (NaN when built from coefficients).
    pub l2_norm_sq: f64,
}

impl DyadicSpectrum {
    pub fn from_coeffs(coeffs: Vec<f64>, max_block: usize) -> Result<Self> {
        let need = max_index(max_block) + 1;
        if coeffs.len() < need {
            return Err(Error::InsufficientData(format!(
                "{} coefficients, block {max_block} needs {need}",
                coeffs.len()
            )));
        }
        let mut coeffs = coeffs;
        coeffs.truncate(need);
        let block_energy = (0..=max_block)
            .map(|n| block_range(n).map(|k| coeffs[k] * coeffs[k]).sum())
            .collect();
        Ok(Self {
            coeffs,
            max_block,
            block_energy,
            l2_norm_sq: f64::NAN,
        })
    }

    pub fn coeff_energy(&self) -> f64 {
        self.coeffs.iter().map(|c| c * c).sum()
    }

    /// CSV with columns `k,gamma`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "k,gamma")?;
        for (k, g) in self.coeffs.iter().enumerate() {
            writeln!(out, "{k},{g:e}")?;
        }
        Ok(())
    }
}

fn nyquist_guard(steps: usize, max_block: usize) -> Result<()> {
    if (1usize << (max_block + 2)) >= steps {
        return Err(Error::InvalidParameter(format!(
            "block {max_block} needs 2^{} < L, got L = {steps}",
            max_block + 2
        )));
    }
    Ok(())
}

/// Trapezoidal `int_0^1 f e_k` for samples of `f` on the uniform grid.
pub fn dyadic_spectrum(samples: &[f64], max_block: usize) -> Result<DyadicSpectrum> {
    if samples.len() < 2 {
        return Err(Error::InsufficientData("need at least two samples".into()));
    }
    let steps = samples.len() - 1;
    nyquist_guard(steps, max_block)?;
    let dt = 1.0 / steps as f64;
    let weight = |l: usize| if l == 0 || l == steps { 0.5 * dt } else { dt };
    let kmax = max_index(max_block);
    let mut coeffs = vec![0.0; kmax + 1];
    for (l, &f) in samples.iter().enumerate() {
        let t = l as f64 * dt;
        let w = weight(l) * f;
        coeffs[0] += w;
        for m in 1..=frequency(kmax) {
            let (s, c) = (2.0 * PI * m as f64 * t).sin_cos();
            coeffs[2 * m + 1] += w * SQRT_2 * c;
            if 2 * m + 2 <= kmax {
                coeffs[2 * m + 2] += w * SQRT_2 * s;
            }
        }
    }
    let mut spec = DyadicSpectrum::from_coeffs(coeffs, max_block)?;
    spec.l2_norm_sq = samples.iter().enumerate().map(|(l, f)| weight(l) * f * f).sum();
    Ok(spec)
}

/// Riemann-Stieltjes coefficients `gamma_k = sum_l e_k(t_l) dB_l` of the
/// derivative of a path given by its increments.
pub fn stieltjes_coeffs(increments: &[f64], max_block: usize) -> Result<DyadicSpectrum> {
    let steps = increments.len();
    nyquist_guard(steps, max_block)?;
    let kmax = max_index(max_block);
    let coeffs = (0..=kmax)
        .map(|k| {
            increments
                .iter()
                .enumerate()
                .map(|(l, db)| basis(k, l as f64 / steps as f64) * db)
                .sum()
        })
        .collect();
    DyadicSpectrum::from_coeffs(coeffs, max_block)
}

/// Samples of `sum_k coeffs[k] e_k` on an `L`-step grid.
pub fn synthesize(coeffs: &[f64], steps: usize) -> Vec<f64> {
    (0..=steps)
        .map(|l| {
            let t = l as f64 / steps as f64;
            coeffs.iter().enumerate().map(|(k, c)| c * basis(k, t)).sum()
        })
        .collect()
}

fn lp_norm_sq(block_energy: &[f64], delta: f64) -> f64 {
    block_energy
        .iter()
        .enumerate()
        .map(|(n, e)| 2f64.powf(2.0 * n as f64 * delta) * e)
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SobolevNorm {
    pub delta: f64,
    pub value: f64,
}

/// Littlewood-Paley surrogate `sqrt(sum_n 2^(2 n delta) |Delta_n f|^2)`.
pub fn sobolev_norm(spectrum: &DyadicSpectrum, delta: f64) -> Result<SobolevNorm> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::InvalidParameter(format!("delta = {delta} outside (0, 1]")));
    }
    Ok(SobolevNorm {
        delta,
        value: lp_norm_sq(&spectrum.block_energy, delta).sqrt(),
    })
}

/// Dual norm `sup <f, h'> / |h|_{H^delta}` over controls `h = int_0^t h'` whose
/// derivative lives in blocks `0..=max_block`, computed from quadrature of the
/// primitives of the basis functions.
pub fn dual_norm(samples: &[f64], delta: f64, max_block: usize) -> Result<f64> {
    let steps = samples.len() - 1;
    let f = dyadic_spectrum(samples, max_block)?;
    let ks: Vec<usize> = (3..=max_index(max_block)).collect();
    let dt = 1.0 / steps as f64;
    // primitives H_k(t) = int_0^t e_k, trapezoidal
    let spectra: Vec<DyadicSpectrum> = ks
        .iter()
        .map(|&k| {
            let mut acc = 0.0;
            let prim: Vec<f64> = std::iter::once(0.0)
                .chain((1..=steps).map(|l| {
                    acc += 0.5 * dt * (basis(k, (l - 1) as f64 * dt) + basis(k, l as f64 * dt));
                    acc
                }))
                .collect();
            dyadic_spectrum(&prim, max_block)
        })
        .collect::<Result<_>>()?;
    let weights: Vec<f64> = (0..=max_index(max_block))
        .map(|j| {
            if j < 3 {
                0.0
            } else {
                2f64.powf(2.0 * block_of(j) as f64 * delta)
            }
        })
        .collect();
    let q = DMatrix::from_fn(ks.len(), ks.len(), |a, b| {
        weights
            .iter()
            .enumerate()
            .map(|(j, w)| w * spectra[a].coeffs[j] * spectra[b].coeffs[j])
            .sum()
    });
    let a = DVector::from_iterator(ks.len(), ks.iter().map(|&k| f.coeffs[k]));
    let chol = nalgebra::linalg::Cholesky::new(q)
        .ok_or_else(|| Error::Eigensolve("Gram matrix of the H^delta ball is singular".into()))?;
    Ok(a.dot(&chol.solve(&a)).max(0.0).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BernsteinReport {
    /// `(n, 2^n |Delta_n f| / |Delta_n f'|)` for non-empty blocks.
    pub ratios: Vec<(usize, f64)>,
    pub min: Option<f64>,
    pub max: Option<f64>,
}

/// Per-block ratio `2^n |Delta_n f| / |Delta_n f'|`.
///
/// Blocks where the derivative spectrum carries less than `1e-12` of its
/// largest block energy are skipped.
pub fn bernstein_check(f: &DyadicSpectrum, df: &DyadicSpectrum) -> BernsteinReport {
    let blocks = f.block_energy.len().min(df.block_energy.len());
    let peak = df.block_energy.iter().cloned().fold(0.0, f64::max);
    let ratios: Vec<(usize, f64)> = (0..blocks)
        .filter(|&n| peak > 0.0 && df.block_energy[n] > 1e-12 * peak)
        .map(|n| (n, 2f64.powi(n as i32) * (f.block_energy[n] / df.block_energy[n]).sqrt()))
        .collect();
    let min = ratios.iter().map(|r| r.1).reduce(f64::min);
    let max = ratios.iter().map(|r| r.1).reduce(f64::max);
    BernsteinReport { ratios, min, max }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeltaBReport {
    pub n_block: usize,
    pub samples: usize,
    pub resolution: usize,
    /// Sample mean of `|Delta_n(B)'|^2`.
    pub energy_mean: f64,
    pub energy_mean_se: f64,
    /// Expected mean `2^(n+1)`.
    pub expected_mean: f64,
    pub energy_var: f64,
    pub energy_var_se: f64,
    /// Candidate variances: `2^(n+1)` and `2 * 2^(n+1)` (sum of chi-square(1)).
    pub var_candidates: [f64; 2],
    /// Index into `var_candidates` of the candidate closer in standard errors.
    pub var_closer: usize,
    /// Cross moment `<Delta_n(B)', Delta_n(B~)'>` for independent copies.
    pub cross_mean: f64,
    pub cross_mean_se: f64,
    pub cross_var: f64,
}

struct Moments {
    mean: f64,
    var: f64,
    mean_se: f64,
    var_se: f64,
}

fn moments(xs: &[f64]) -> Moments {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let m4 = xs.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
    Moments {
        mean,
        var,
        mean_se: (var / n).sqrt(),
        var_se: ((m4 - var * var).max(0.0) / n).sqrt(),
    }
}

/// Monte-Carlo moments of the dyadic energy of Brownian derivative blocks.
///
/// Sample `s` uses seed `derive_seed(seed, s, 0)`; channels 0 and 1 of that
/// seed give the two independent Brownian motions.
pub fn delta_b_statistics(n_block: usize, samples: usize, resolution: usize, seed: u64) -> Result<DeltaBReport> {
    if resolution < (1usize << (n_block + 4)) {
        return Err(Error::InvalidParameter(format!(
            "resolution {resolution} below 2^{}",
            n_block + 4
        )));
    }
    if samples < 2 {
        return Err(Error::InsufficientData("need at least two samples".into()));
    }
    let range = block_range(n_block);
    let table: Vec<Vec<f64>> = range
        .clone()
        .map(|k| {
            (0..resolution)
                .map(|l| basis(k, l as f64 / resolution as f64))
                .collect()
        })
        .collect();
    let sd = (1.0 / resolution as f64).sqrt();
    let block_coeffs = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
        let db: Vec<f64> = (0..resolution)
            .map(|_| sd * rng.sample::<f64, _>(StandardNormal))
            .collect();
        table
            .iter()
            .map(|row| row.iter().zip(&db).map(|(e, b)| e * b).sum())
            .collect()
    };
    let mut energy = Vec::with_capacity(samples);
    let mut cross = Vec::with_capacity(samples);
    for s in 0..samples {
        let sseed = derive_seed(seed, s as u64, 0);
        let g = block_coeffs(&mut channel_rng(sseed, 0));
        let g2 = block_coeffs(&mut channel_rng(sseed, 1));
        energy.push(g.iter().map(|v| v * v).sum::<f64>());
        cross.push(g.iter().zip(&g2).map(|(a, b)| a * b).sum::<f64>());
    }
    let e = moments(&energy);
    let c = moments(&cross);
    let size = range.len() as f64;
    let var_candidates = [size, 2.0 * size];
    let dist = |v: f64| (e.var - v).abs();
    let var_closer = if dist(var_candidates[0]) <= dist(var_candidates[1]) {
        0
    } else {
        1
    };
    Ok(DeltaBReport {
        n_block,
        samples,
        resolution,
        energy_mean: e.mean,
        energy_mean_se: e.mean_se,
        expected_mean: size,
        energy_var: e.var,
        energy_var_se: e.var_se,
        var_candidates,
        var_closer,
        cross_mean: c.mean,
        cross_mean_se: c.mean_se,
        cross_var: c.var,
    })
}

/// Unit directions used to minimize over `sum lambda_i^2 = 1`.
///
/// `d = 1`: `{+1, -1}`; `d = 2`: 64 equally spaced angles; `d = 3`: 512-point
/// Fibonacci sphere; larger `d`: 4096 normalized Gaussian draws (fixed seed).
pub fn sphere_mesh(d: usize) -> Vec<Vec<f64>> {
    match d {
        0 => Vec::new(),
        1 => vec![vec![1.0], vec![-1.0]],
        2 => (0..64)
            .map(|j| {
                let a = 2.0 * PI * j as f64 / 64.0;
                vec![a.cos(), a.sin()]
            })
            .collect(),
        3 => {
            let n = 512;
            let golden = PI * (3.0 - 5f64.sqrt());
            (0..n)
                .map(|j| {
                    let z = 1.0 - 2.0 * (j as f64 + 0.5) / n as f64;
                    let r = (1.0 - z * z).sqrt();
                    let phi = golden * j as f64;
                    vec![r * phi.cos(), r * phi.sin(), z]
                })
                .collect()
        }
        _ => {
            let mut rng = channel_rng(0x5EED, 0);
            (0..4096)
                .map(|_| {
                    let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
                    let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
                    v.into_iter().map(|a| a / n).collect()
                })
                .collect()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeEntry {
    /// `min_lambda |sum lambda_i B^i - h - c*|_{H^(1-delta)}`.
    pub m_h: f64,
    pub h_norm: f64,
    /// `m_h * (1 + h_norm)`.
    pub product: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeReport {
    pub delta: f64,
    pub max_block: usize,
    pub entries: Vec<ProbeEntry>,
    /// `min` of the products over the family.
    pub floor: f64,
    /// Exact `min_{|lambda| = 1} |sum lambda_i B^i - c*|_{H^(1-delta)}` from the
    /// smallest eigenvalue of the weighted Gram matrix (the `h = 0` case).
    pub eig_min_h0: f64,
    /// Mesh minimum for `h = 0`; never below `eig_min_h0`.
    pub mesh_min_h0: f64,
}

/// Irregularity probe: how well low-norm controls can cancel a Brownian
/// combination in `H^(1-delta)`.
///
/// `b_paths` are `d` sampled paths and `h_family` scalar paths on the same
/// grid. The constant `c` is optimized exactly by dropping `gamma_0`.
pub fn bh1l2_probe(b_paths: &[Vec<f64>], h_family: &[Vec<f64>], delta: f64, max_block: usize) -> Result<ProbeReport> {
    if !(delta > 0.5 && delta <= 1.0) {
        return Err(Error::InvalidParameter(format!("delta = {delta} outside (1/2, 1]")));
    }
    if h_family.is_empty() {
        return Err(Error::InsufficientData("empty control family".into()));
    }
    if b_paths.is_empty() {
        return Err(Error::InsufficientData("no Brownian paths".into()));
    }
    let len = b_paths[0].len();
    if b_paths.iter().chain(h_family).any(|p| p.len() != len) {
        return Err(Error::ShapeMismatch("paths must share one grid".into()));
    }
    let d = b_paths.len();
    let rough = 1.0 - delta;
    let weights: Vec<f64> = (0..=max_index(max_block))
        .map(|k| {
            if k == 0 {
                0.0
            } else {
                2f64.powf(2.0 * block_of(k) as f64 * rough)
            }
        })
        .collect();
    let bs: Vec<DyadicSpectrum> = b_paths
        .iter()
        .map(|p| dyadic_spectrum(p, max_block))
        .collect::<Result<_>>()?;
    let wdot = |a: &[f64], b: &[f64]| -> f64 { weights.iter().zip(a).zip(b).map(|((w, x), y)| w * x * y).sum() };
    let gram = DMatrix::from_fn(d, d, |i, j| wdot(&bs[i].coeffs, &bs[j].coeffs));
    let mesh = sphere_mesh(d);
    let quad = |lam: &[f64], b: &[f64], c: f64| -> f64 {
        let mut v = c;
        for i in 0..d {
            v -= 2.0 * lam[i] * b[i];
            for j in 0..d {
                v += lam[i] * lam[j] * gram[(i, j)];
            }
        }
        v.max(0.0)
    };

    let mut entries = Vec::with_capacity(h_family.len());
    for h in h_family {
        let hs = dyadic_spectrum(h, max_block)?;
        let b: Vec<f64> = bs.iter().map(|s| wdot(&s.coeffs, &hs.coeffs)).collect();
        let c = wdot(&hs.coeffs, &hs.coeffs);
        let m_h = mesh
            .iter()
            .map(|lam| quad(lam, &b, c))
            .fold(f64::INFINITY, f64::min)
            .sqrt();
        let h_norm = lp_norm_sq(&hs.block_energy, delta).sqrt();
        entries.push(ProbeEntry {
            m_h,
            h_norm,
            product: m_h * (1.0 + h_norm),
        });
    }
    let floor = entries.iter().map(|e| e.product).fold(f64::INFINITY, f64::min);
    let (lmin, _) = smallest_eigenpair(&gram)?;
    let zeros = vec![0.0; d];
    let mesh_min_h0 = mesh
        .iter()
        .map(|lam| quad(lam, &zeros, 0.0))
        .fold(f64::INFINITY, f64::min)
        .sqrt();
    Ok(ProbeReport {
        delta,
        max_block,
        entries,
        floor,
        eig_min_h0: lmin.max(0.0).sqrt(),
        mesh_min_h0,
    })
}

/// Low-frequency truncations of `path`: element `j` keeps blocks `0..j`
/// (without the mean), for `j = 0..max_block`. The top block is never
/// included, so every member leaves something to cancel.
pub fn truncation_family(path: &[f64], max_block: usize) -> Result<Vec<Vec<f64>>> {
    let steps = path.len() - 1;
    let spec = dyadic_spectrum(path, max_block)?;
    Ok((0..max_block)
        .map(|j| {
            let mut c = vec![0.0; spec.coeffs.len()];
            for n in 0..j {
                for k in block_range(n) {
                    c[k] = spec.coeffs[k];
                }
            }
            synthesize(&c, steps)
        })
        .collect())
}

/// Exact q-variation over partitions with nodes on the sample grid:
/// `(max sum |f(t_{j+1}) - f(t_j)|^q)^(1/q)`, dynamic programming in `O(L^2)`.
pub fn qvar_norm(samples: &[f64], q: f64) -> Result<f64> {
    if q.is_nan() || q < 1.0 {
        return Err(Error::InvalidParameter(format!("q = {q} must be >= 1")));
    }
    if samples.len() < 2 {
        return Ok(0.0);
    }
    // best[j] = max over partitions of [t_0, t_j] ending at t_j
    let mut best = vec![0.0f64; samples.len()];
    for j in 1..samples.len() {
        best[j] = (0..j)
            .map(|i| best[i] + (samples[j] - samples[i]).abs().powf(q))
            .fold(0.0, f64::max);
    }
    Ok(best[samples.len() - 1].powf(1.0 / q))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapEntry {
    pub n: usize,
    /// `|h - pi_n h|_{q-var}`.
    pub gap: f64,
    /// `gap / |h|_{H^1}`.
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapReport {
    pub q: f64,
    pub h1_norm: f64,
    pub entries: Vec<GapEntry>,
    /// Least-squares slope of `ln ratio` against `ln n` (two or more entries).
    pub slope: Option<f64>,
}

/// Piecewise-linear interpolation of `h` at `n` equally spaced nodes.
pub fn pwl_interpolate(h: &[f64], n: usize) -> Result<Vec<f64>> {
    let steps = h.len() - 1;
    if n == 0 || !steps.is_multiple_of(n) {
        return Err(Error::InvalidParameter(format!(
            "coarse grid {n} does not divide fine grid {steps}"
        )));
    }
    let r = steps / n;
    Ok((0..=steps)
        .map(|l| {
            let i = (l / r).min(n - 1);
            let s = (l - i * r) as f64 / r as f64;
            (1.0 - s) * h[i * r] + s * h[(i + 1) * r]
        })
        .collect())
}

/// `H^1` seminorm `sqrt(int |h'|^2)` of the piecewise-linear interpolant.
pub fn h1_norm(h: &[f64]) -> f64 {
    let steps = (h.len() - 1) as f64;
    (h.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum::<f64>() * steps).sqrt()
}

/// Projection gap `|h - pi_n h|_{q-var} / |h|_{H^1}` for each coarse size `n`.
pub fn pwl_projection_gap(h: &[f64], coarse: &[usize], q: f64) -> Result<GapReport> {
    if !(q > 1.0 && q < 2.0) {
        return Err(Error::InvalidParameter(format!("q = {q} outside (1, 2)")));
    }
    if h.len() < 2 {
        return Err(Error::InsufficientData("need at least two samples".into()));
    }
    let norm = h1_norm(h);
    let mut entries = Vec::with_capacity(coarse.len());
    for &n in coarse {
        let proj = pwl_interpolate(h, n)?;
        let diff: Vec<f64> = h.iter().zip(&proj).map(|(a, b)| a - b).collect();
        let gap = qvar_norm(&diff, q)?;
        entries.push(GapEntry {
            n,
            gap,
            ratio: if norm > 0.0 { gap / norm } else { 0.0 },
        });
    }
    let slope = if entries.len() >= 2 && entries.iter().all(|e| e.ratio > 0.0) {
        let xs: Vec<f64> = entries.iter().map(|e| (e.n as f64).ln()).collect();
        let ys: Vec<f64> = entries.iter().map(|e| e.ratio.ln()).collect();
        Some(linear_fit(&xs, &ys).0)
    } else {
        None
    };
    Ok(GapReport {
        q,
        h1_norm: norm,
        entries,
        slope,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rough_driver::{sample_fbm, Grid};

    fn sample_fn(steps: usize, f: impl Fn(f64) -> f64) -> Vec<f64> {
        (0..=steps).map(|l| f(l as f64 / steps as f64)).collect()
    }

    #[test]
    fn blocks_partition_indices() {
        let mut next = 3;
        for n in 1..10 {
            let r = block_range(n);
            assert_eq!(r.start, next);
            assert_eq!(r.len(), 1 << (n + 1));
            // pairs (2m+1, 2m+2) stay together
            assert_eq!(r.start % 2, 1);
            assert_eq!(r.end % 2, 1);
            for k in r.clone() {
                assert_eq!(block_of(k), n);
            }
            next = r.end;
        }
        assert_eq!(block_range(0), 1..3);
        assert_eq!(block_of(1), 0);
        assert_eq!(block_of(2), 0);
    }

    #[test]
    fn single_mode_coefficients() {
        let f = sample_fn(512, |t| basis(3, t));
        let s = dyadic_spectrum(&f, 5).unwrap();
        assert!((s.coeffs[3] - 1.0).abs() < 1e-12);
        for (k, g) in s.coeffs.iter().enumerate() {
            if k != 3 {
                assert!(g.abs() < 1e-3);
            }
        }
    }

    #[test]
    fn constant_has_only_mean() {
        let s = dyadic_spectrum(&vec![2.5; 129], 4).unwrap();
        assert!((s.coeffs[0] - 2.5).abs() < 1e-14);
        assert!(s.coeffs[1..].iter().all(|g| g.abs() < 1e-12));
    }

    #[test]
    fn identity_function_sine_coefficients() {
        // int_0^1 t sqrt(2) sin(2 pi m t) dt = -sqrt(2) / (2 pi m)
        let s = dyadic_spectrum(&sample_fn(2048, |t| t), 3).unwrap();
        for m in 1..=4 {
            let expected = -SQRT_2 / (2.0 * PI * m as f64);
            assert!((s.coeffs[2 * m + 2] - expected).abs() < 1e-3);
        }
    }

    #[test]
    fn nyquist_guard_rejects() {
        assert!(dyadic_spectrum(&vec![0.0; 65], 4).is_err());
        assert!(dyadic_spectrum(&vec![0.0; 65], 3).is_ok());
    }

    #[test]
    fn parseval_for_band_limited() {
        let f = sample_fn(4096, |t| 0.3 + basis(5, t) - 0.7 * basis(12, t) + 0.2 * basis(40, t));
        let s = dyadic_spectrum(&f, 6).unwrap();
        assert!((s.coeff_energy() - s.l2_norm_sq).abs() < 1e-3 * s.l2_norm_sq);
    }

    #[test]
    fn sobolev_single_block() {
        for k in [3, 6, 9, 20, 33] {
            let f = sample_fn(1024, |t| basis(k, t));
            let s = dyadic_spectrum(&f, 5).unwrap();
            let n = block_of(k) as f64;
            let v = sobolev_norm(&s, 0.6).unwrap().value;
            assert!((v - 2f64.powf(n * 0.6)).abs() < 1e-9, "k {k}");
        }
        let z = dyadic_spectrum(&vec![0.0; 65], 3).unwrap();
        assert_eq!(sobolev_norm(&z, 0.5).unwrap().value, 0.0);
        assert!(sobolev_norm(&z, 0.0).is_err());
    }

    #[test]
    fn sobolev_of_brownian_matches_expected_block_sums() {
        // E |Delta_n B|^2 = sum over m in the block of 1 / (pi^2 m^2)
        let steps = 1024;
        let max_block = 6;
        let expected: f64 = (1..=max_block)
            .map(|n| {
                let ms = block_range(n).step_by(2).map(frequency);
                2f64.powi(n as i32) * ms.map(|m| 1.0 / (PI * PI * (m * m) as f64)).sum::<f64>()
            })
            .sum();
        let g = Grid::new(steps).unwrap();
        let vals: Vec<f64> = (0..500u64)
            .map(|s| {
                let b = sample_fbm(g, 1, 0.5, s).unwrap().path_values();
                let p: Vec<f64> = b.column(0).iter().copied().collect();
                sobolev_norm(&dyadic_spectrum(&p, max_block).unwrap(), 0.5)
                    .unwrap()
                    .value
                    .powi(2)
            })
            .collect();
        let m = moments(&vals);
        assert!((m.mean - expected).abs() < 4.0 * m.mean_se, "{} vs {expected}", m.mean);
    }

    #[test]
    fn bernstein_single_mode_ratio() {
        for m in [3usize, 5, 9, 17, 30] {
            let k = 2 * m + 1;
            let w = 2.0 * PI * m as f64;
            let f = sample_fn(4096, |t| basis(k, t));
            let df = sample_fn(4096, |t| -w * basis(k + 1, t));
            let rep = bernstein_check(&dyadic_spectrum(&f, 6).unwrap(), &dyadic_spectrum(&df, 6).unwrap());
            assert_eq!(rep.ratios.len(), 1);
            let (n, r) = rep.ratios[0];
            assert_eq!(n, block_of(k));
            let exact = 2f64.powi(n as i32) / w;
            assert!((r - exact).abs() < 1e-6);
            assert!((1.0 / (4.0 * PI)..=1.0 / PI).contains(&r));
        }
        let z = dyadic_spectrum(&vec![0.0; 257], 5).unwrap();
        let rep = bernstein_check(&z, &z);
        assert!(rep.ratios.is_empty() && rep.min.is_none());
    }

    #[test]
    fn delta_b_moments() {
        let rep = delta_b_statistics(3, 2000, 1 << 7, 1).unwrap();
        assert_eq!(rep.expected_mean, 16.0);
        assert!((rep.energy_mean - 16.0).abs() < 3.0 * rep.energy_mean_se);
        assert!((rep.energy_var - 32.0).abs() < 5.0 * rep.energy_var_se);
        assert!(rep.cross_mean.abs() < 3.0 * rep.cross_mean_se);
        assert!(delta_b_statistics(3, 10, 64, 1).is_err());
    }

    fn brute_force_qvar(f: &[f64], q: f64) -> f64 {
        let inner = f.len() - 2;
        let mut best: f64 = 0.0;
        for mask in 0u32..(1 << inner) {
            let mut nodes = vec![0];
            nodes.extend((0..inner).filter(|b| mask & (1 << b) != 0).map(|b| b + 1));
            nodes.push(f.len() - 1);
            let s: f64 = nodes.windows(2).map(|w| (f[w[1]] - f[w[0]]).abs().powf(q)).sum();
            best = best.max(s);
        }
        best.powf(1.0 / q)
    }

    #[test]
    fn qvar_matches_brute_force() {
        let g = Grid::new(12).unwrap();
        for seed in 0..5 {
            let b = sample_fbm(g, 1, 0.4, seed).unwrap().path_values();
            let p: Vec<f64> = b.column(0).iter().copied().collect();
            for q in [1.2, 1.5, 1.9] {
                let dp = qvar_norm(&p, q).unwrap();
                assert!((dp - brute_force_qvar(&p, q)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn qvar_special_cases() {
        let mono = [0.0, 0.5, 0.7, 2.0, 3.5];
        assert!((qvar_norm(&mono, 1.7).unwrap() - 3.5).abs() < 1e-12);
        let p: [f64; 5] = [0.0, 1.0, -0.5, 0.25, 2.0];
        let tv: f64 = p.windows(2).map(|w| (w[1] - w[0]).abs()).sum();
        assert!((qvar_norm(&p, 1.0).unwrap() - tv).abs() < 1e-12);
        // sawtooth with K unit teeth: 2K at q = 2
        let saw: Vec<f64> = (0..=10).map(|l| (l % 2) as f64).collect();
        assert!((qvar_norm(&saw, 2.0).unwrap().powi(2) - 10.0).abs() < 1e-12);
        assert!((brute_force_qvar(&saw, 2.0).powi(2) - 10.0).abs() < 1e-12);
        assert!(qvar_norm(&saw, 0.5).is_err());
    }

    #[test]
    fn projection_fixed_point() {
        let h = pwl_interpolate(&sample_fn(64, |t| (3.0 * t).sin()), 8).unwrap();
        let rep = pwl_projection_gap(&h, &[8, 16], 1.5).unwrap();
        assert!(rep.entries.iter().all(|e| e.gap < 1e-12));
        assert!(pwl_projection_gap(&h, &[7], 1.5).is_err());
        assert!(pwl_projection_gap(&h, &[8], 2.0).is_err());
    }

    #[test]
    fn hat_function_ratio() {
        // hat of width 1/n centred in the first coarse cell, unit H^1 norm:
        // ratio = 2^(1/q - 1) n^(-1/2)
        let q = 1.5;
        for n in [4usize, 8, 16] {
            let steps = 256;
            let peak = 1.0 / (2.0 * (n as f64).sqrt());
            let h = sample_fn(steps, |t| {
                let c = 0.5 / n as f64;
                (peak * (1.0 - (t - c).abs() / c)).max(0.0)
            });
            assert!((h1_norm(&h) - 1.0).abs() < 1e-12);
            let rep = pwl_projection_gap(&h, &[n], q).unwrap();
            let expected = 2f64.powf(1.0 / q - 1.0) / (n as f64).sqrt();
            assert!((rep.entries[0].ratio - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn probe_trivial_family() {
        let g = Grid::new(256).unwrap();
        let b = sample_fbm(g, 1, 0.5, 3).unwrap().path_values();
        let p: Vec<f64> = b.column(0).iter().copied().collect();
        let rep = bh1l2_probe(std::slice::from_ref(&p), &[vec![0.0; 257]], 0.75, 5).unwrap();
        let s = dyadic_spectrum(&p, 5).unwrap();
        let direct = lp_norm_sq(&s.block_energy, 0.25).sqrt();
        assert!((rep.entries[0].m_h - direct).abs() < 1e-12);
        assert!(rep.floor > 0.0);
        assert!((rep.eig_min_h0 - direct).abs() < 1e-9);
        assert!(bh1l2_probe(std::slice::from_ref(&p), &[], 0.75, 5).is_err());
        assert!(bh1l2_probe(&[p], &[vec![0.0; 257]], 0.5, 5).is_err());
    }

    #[test]
    fn mesh_sizes() {
        assert_eq!(sphere_mesh(2).len(), 64);
        assert_eq!(sphere_mesh(3).len(), 512);
        for v in sphere_mesh(3) {
            assert!((v.iter().map(|a| a * a).sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn dual_norm_equivalent_to_rough_surrogate() {
        // dual norm against the H^delta ball vs the H^(1-delta) surrogate:
        // per mode the ratio is 2 pi m / 2^n, in [pi (1 - 2^-n), 4 pi)
        let delta = 0.75;
        let steps = 1024;
        for k in [3usize, 8, 13, 22, 40, 61] {
            let f = sample_fn(steps, |t| basis(k, t));
            let dual = dual_norm(&f, delta, 4).unwrap();
            let lp = sobolev_norm(&dyadic_spectrum(&f, 4).unwrap(), 1.0 - delta)
                .unwrap()
                .value;
            let r = dual / lp;
            assert!(r > PI / 2.0 && r < 4.0 * PI, "k {k}: {r}");
        }
    }
}
