//! Driving vector fields on `R^n`.
//!
//! Every family in this crate is polynomial (degree at most 3 per component),
//! so values, Jacobians and second derivatives are computed exactly from a
//! sparse term table. The flow engine only talks to the [`VectorFields`]
//! trait, which lets tests wrap a family (e.g. to inject a faulty Jacobian).
//!
//! Bracket convention: `[V_i, V_j](x) = DV_j(x) V_i(x) - DV_i(x) V_j(x)`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Nested finite-difference step used for double brackets.
pub const DOUBLE_BRACKET_STEP: f64 = 1e-4;

/// Access to `d` smooth vector fields on `R^n` and their derivatives.
///
/// The `*_add` methods accumulate into `out` so that sums over fields can be
/// assembled without temporaries.
pub trait VectorFields: Send + Sync {
    fn dim_state(&self) -> usize;
    fn dim_control(&self) -> usize;

    /// Writes `V_i(x)` into `out`.
    fn eval_into(&self, i: usize, x: &[f64], out: &mut [f64]);

    /// Dense Jacobian `DV_i(x)`, row `p` holding the gradient of component `p`.
    fn jac(&self, i: usize, x: &[f64]) -> DMatrix<f64>;

    /// `out += DV_i(x) v`
    fn jvp_add(&self, i: usize, x: &[f64], v: &[f64], out: &mut [f64]) {
        let j = self.jac(i, x);
        for (p, o) in out.iter_mut().enumerate() {
            *o += (0..v.len()).map(|q| j[(p, q)] * v[q]).sum::<f64>();
        }
    }

    /// `out += DV_i(x)^T lam`
    fn vjp_add(&self, i: usize, x: &[f64], lam: &[f64], out: &mut [f64]) {
        let j = self.jac(i, x);
        for (q, o) in out.iter_mut().enumerate() {
            *o += (0..lam.len()).map(|p| j[(p, q)] * lam[p]).sum::<f64>();
        }
    }

    /// `out_q += sum_p lam_p sum_r d_q d_r V_i^p(x) u_r`
    fn hess_vjp_add(&self, i: usize, x: &[f64], u: &[f64], lam: &[f64], out: &mut [f64]);

    fn eval(&self, i: usize, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim_state()];
        self.eval_into(i, x, &mut out);
        out
    }

    /// Matrix of `D^2 V_i(x)[u, .]`, entry `(p, q) = sum_r d_q d_r V_i^p(x) u_r`.
    fn hess_dir(&self, i: usize, x: &[f64], u: &[f64]) -> DMatrix<f64> {
        let n = self.dim_state();
        let mut m = DMatrix::zeros(n, n);
        let mut lam = vec![0.0; n];
        let mut row = vec![0.0; n];
        for p in 0..n {
            lam[p] = 1.0;
            row.iter_mut().for_each(|r| *r = 0.0);
            self.hess_vjp_add(i, x, u, &lam, &mut row);
            for q in 0..n {
                m[(p, q)] = row[q];
            }
            lam[p] = 0.0;
        }
        m
    }
}

impl<T: VectorFields + ?Sized> VectorFields for &T {
    fn dim_state(&self) -> usize {
        (**self).dim_state()
    }
    fn dim_control(&self) -> usize {
        (**self).dim_control()
    }
    fn eval_into(&self, i: usize, x: &[f64], out: &mut [f64]) {
        (**self).eval_into(i, x, out)
    }
    fn jac(&self, i: usize, x: &[f64]) -> DMatrix<f64> {
        (**self).jac(i, x)
    }
    fn jvp_add(&self, i: usize, x: &[f64], v: &[f64], out: &mut [f64]) {
        (**self).jvp_add(i, x, v, out)
    }
    fn vjp_add(&self, i: usize, x: &[f64], lam: &[f64], out: &mut [f64]) {
        (**self).vjp_add(i, x, lam, out)
    }
    fn hess_vjp_add(&self, i: usize, x: &[f64], u: &[f64], lam: &[f64], out: &mut [f64]) {
        (**self).hess_vjp_add(i, x, u, lam, out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FamilyId {
    Step2Canonical(usize),
    Step3Canonical,
    Custom,
}

/// One monomial term `coeff * x[vars[0]] * ... * x[vars[k-1]]` contributing to
/// component `component` of a field. An empty `vars` is a constant term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolyTerm {
    pub component: usize,
    pub coeff: f64,
    #[serde(default)]
    pub vars: Vec<usize>,
}

impl PolyTerm {
    pub fn new(component: usize, coeff: f64, vars: &[usize]) -> Self {
        Self {
            component,
            coeff,
            vars: vars.to_vec(),
        }
    }
}

/// Compact term: at most three factors.
#[derive(Debug, Clone, Copy)]
struct Term {
    comp: usize,
    coeff: f64,
    deg: usize,
    vars: [usize; 3],
}

impl Term {
    #[inline]
    fn product_except(&self, x: &[f64], skip_a: usize, skip_b: usize) -> f64 {
        let mut p = self.coeff;
        for k in 0..self.deg {
            if k != skip_a && k != skip_b {
                p *= x[self.vars[k]];
            }
        }
        p
    }

    #[inline]
    fn value(&self, x: &[f64]) -> f64 {
        self.product_except(x, usize::MAX, usize::MAX)
    }
}

/// A family of polynomial vector fields, immutable after construction.
#[derive(Debug, Clone)]
pub struct VectorFieldFamily {
    dim_state: usize,
    family_id: FamilyId,
    fields: Vec<Vec<Term>>,
}

impl VectorFieldFamily {
    /// Builds a family from per-field term tables.
    pub fn from_terms(dim_state: usize, fields: &[Vec<PolyTerm>]) -> Result<Self> {
        Self::build(dim_state, fields, FamilyId::Custom)
    }

    fn build(dim_state: usize, fields: &[Vec<PolyTerm>], family_id: FamilyId) -> Result<Self> {
        if dim_state == 0 {
            return Err(Error::InvalidParameter("state dimension must be positive".into()));
        }
        if fields.is_empty() {
            return Err(Error::InvalidParameter("at least one vector field required".into()));
        }
        let mut compiled = Vec::with_capacity(fields.len());
        for (i, terms) in fields.iter().enumerate() {
            let mut out = Vec::with_capacity(terms.len());
            for t in terms {
                if t.component >= dim_state {
                    return Err(Error::InvalidParameter(format!(
                        "field {i}: component {} out of range for n = {dim_state}",
                        t.component
                    )));
                }
                if t.vars.len() > 3 {
                    return Err(Error::InvalidParameter(format!(
                        "field {i}: monomial degree {} exceeds 3",
                        t.vars.len()
                    )));
                }
                if let Some(&v) = t.vars.iter().find(|&&v| v >= dim_state) {
                    return Err(Error::InvalidParameter(format!(
                        "field {i}: variable index {v} out of range for n = {dim_state}"
                    )));
                }
                if !t.coeff.is_finite() {
                    return Err(Error::InvalidParameter(format!("field {i}: non-finite coefficient")));
                }
                let mut vars = [0usize; 3];
                vars[..t.vars.len()].copy_from_slice(&t.vars);
                out.push(Term {
                    comp: t.component,
                    coeff: t.coeff,
                    deg: t.vars.len(),
                    vars,
                });
            }
            compiled.push(out);
        }
        Ok(Self {
            dim_state,
            family_id,
            fields: compiled,
        })
    }

    /// Constant fields `V_i = columns[i]`.
    pub fn constant(columns: &DMatrix<f64>) -> Result<Self> {
        let n = columns.nrows();
        let fields: Vec<Vec<PolyTerm>> = (0..columns.ncols())
            .map(|i| {
                (0..n)
                    .filter(|&p| columns[(p, i)] != 0.0)
                    .map(|p| PolyTerm::new(p, columns[(p, i)], &[]))
                    .collect()
            })
            .collect();
        Self::from_terms(n, &fields)
    }

    pub fn family_id(&self) -> FamilyId {
        self.family_id
    }

    /// The term table, e.g. for writing a family back to a config file.
    pub fn terms(&self) -> Vec<Vec<PolyTerm>> {
        self.fields
            .iter()
            .map(|f| {
                f.iter()
                    .map(|t| PolyTerm::new(t.comp, t.coeff, &t.vars[..t.deg]))
                    .collect()
            })
            .collect()
    }
}

impl VectorFields for VectorFieldFamily {
    fn dim_state(&self) -> usize {
        self.dim_state
    }

    fn dim_control(&self) -> usize {
        self.fields.len()
    }

    fn eval_into(&self, i: usize, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for t in &self.fields[i] {
            out[t.comp] += t.value(x);
        }
    }

    fn jac(&self, i: usize, x: &[f64]) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim_state, self.dim_state);
        for t in &self.fields[i] {
            for a in 0..t.deg {
                m[(t.comp, t.vars[a])] += t.product_except(x, a, usize::MAX);
            }
        }
        m
    }

    fn jvp_add(&self, i: usize, x: &[f64], v: &[f64], out: &mut [f64]) {
        for t in &self.fields[i] {
            for a in 0..t.deg {
                out[t.comp] += t.product_except(x, a, usize::MAX) * v[t.vars[a]];
            }
        }
    }

    fn vjp_add(&self, i: usize, x: &[f64], lam: &[f64], out: &mut [f64]) {
        for t in &self.fields[i] {
            let l = lam[t.comp];
            if l == 0.0 {
                continue;
            }
            for a in 0..t.deg {
                out[t.vars[a]] += l * t.product_except(x, a, usize::MAX);
            }
        }
    }

    fn hess_vjp_add(&self, i: usize, x: &[f64], u: &[f64], lam: &[f64], out: &mut [f64]) {
        for t in &self.fields[i] {
            let l = lam[t.comp];
            if l == 0.0 || t.deg < 2 {
                continue;
            }
            for a in 0..t.deg {
                for b in 0..t.deg {
                    if a != b {
                        out[t.vars[a]] += l * t.product_except(x, a, b) * u[t.vars[b]];
                    }
                }
            }
        }
    }
}

/// Index of the area coordinate `(m, j)`, `m < j`, in the step-2 family.
///
/// Area coordinates follow the `d` base coordinates in row-major
/// upper-triangular order: `(0,1), (0,2), .., (0,d-1), (1,2), ..`.
pub fn step2_area_index(d: usize, m: usize, j: usize) -> usize {
    debug_assert!(m < j && j < d);
    // rows 0..m contribute (d-1) + (d-2) + ... + (d-m) entries
    let before = m * d - m * (m + 1) / 2;
    d + before + (j - m - 1)
}

/// Step-2 nilpotent family on `R^d x so(d)`, `n = d(d+1)/2`:
///
/// `V_i = d_i + 1/2 ( sum_{j<i} x_j d_{j,i} - sum_{j>i} x_j d_{i,j} )`.
pub fn make_step2_family(d: usize) -> Result<VectorFieldFamily> {
    if d == 0 {
        return Err(Error::InvalidParameter("step-2 family needs d >= 1".into()));
    }
    let n = d * (d + 1) / 2;
    let mut fields = Vec::with_capacity(d);
    for i in 0..d {
        let mut terms = vec![PolyTerm::new(i, 1.0, &[])];
        for j in 0..i {
            terms.push(PolyTerm::new(step2_area_index(d, j, i), 0.5, &[j]));
        }
        for j in (i + 1)..d {
            terms.push(PolyTerm::new(step2_area_index(d, i, j), -0.5, &[j]));
        }
        fields.push(terms);
    }
    VectorFieldFamily::build(n, &fields, FamilyId::Step2Canonical(d))
}

/// Step-3 nilpotent family with `d = 2`, `n = 5`:
///
/// ```text
/// V1 = d1 - x2/2 d3 - (x1 x2/12 + x3/2) d4 - x2^2/12 d5
/// V2 = d2 + x1/2 d3 + x1^2/12 d4 + (x1 x2/12 - x3/2) d5
/// ```
/// (1-based coordinates as displayed; the code is 0-based).
pub fn make_step3_family() -> VectorFieldFamily {
    let v1 = vec![
        PolyTerm::new(0, 1.0, &[]),
        PolyTerm::new(2, -0.5, &[1]),
        PolyTerm::new(3, -1.0 / 12.0, &[0, 1]),
        PolyTerm::new(3, -0.5, &[2]),
        PolyTerm::new(4, -1.0 / 12.0, &[1, 1]),
    ];
    let v2 = vec![
        PolyTerm::new(1, 1.0, &[]),
        PolyTerm::new(2, 0.5, &[0]),
        PolyTerm::new(3, 1.0 / 12.0, &[0, 0]),
        PolyTerm::new(4, 1.0 / 12.0, &[0, 1]),
        PolyTerm::new(4, -0.5, &[2]),
    ];
    VectorFieldFamily::build(5, &[v1, v2], FamilyId::Step3Canonical).expect("step-3 table is well formed")
}

#[derive(Debug, Clone, PartialEq)]
pub struct BracketReport {
    pub point: Vec<f64>,
    pub pair: (usize, usize),
    pub bracket_value: Vec<f64>,
    /// `max_k |[[V_i, V_j], V_k](x)|`, by central differences of the analytic bracket.
    pub double_bracket_max: f64,
}

/// `[V_i, V_j](x)` from the analytic Jacobians.
pub fn bracket_value<F: VectorFields + ?Sized>(fam: &F, i: usize, j: usize, x: &[f64]) -> Vec<f64> {
    let n = fam.dim_state();
    let vi = fam.eval(i, x);
    let vj = fam.eval(j, x);
    let mut out = vec![0.0; n];
    fam.jvp_add(j, x, &vi, &mut out);
    let mut tmp = vec![0.0; n];
    fam.jvp_add(i, x, &vj, &mut tmp);
    out.iter_mut().zip(&tmp).for_each(|(o, t)| *o -= t);
    out
}

/// `[W, V_k](x)` where `W = [V_i, V_j]`, differentiating `W` numerically.
pub fn double_bracket<F: VectorFields + ?Sized>(
    fam: &F,
    i: usize,
    j: usize,
    k: usize,
    x: &[f64],
    step: f64,
) -> Vec<f64> {
    let n = fam.dim_state();
    let vk = fam.eval(k, x);
    let shifted = |sign: f64| -> Vec<f64> {
        let xs: Vec<f64> = x.iter().zip(&vk).map(|(a, v)| a + sign * step * v).collect();
        bracket_value(fam, i, j, &xs)
    };
    let plus = shifted(1.0);
    let minus = shifted(-1.0);
    // DV_k(x) W(x)
    let w = bracket_value(fam, i, j, x);
    let mut out = vec![0.0; n];
    fam.jvp_add(k, x, &w, &mut out);
    // - DW(x) V_k(x)
    for (o, (p, m)) in out.iter_mut().zip(plus.iter().zip(&minus)) {
        *o -= (p - m) / (2.0 * step);
    }
    out
}

pub fn bracket<F: VectorFields + ?Sized>(fam: &F, i: usize, j: usize, x: &[f64]) -> Result<BracketReport> {
    let d = fam.dim_control();
    if i >= d || j >= d {
        return Err(Error::InvalidParameter(format!(
            "bracket indices ({i}, {j}) out of range for d = {d}"
        )));
    }
    if x.len() != fam.dim_state() {
        return Err(Error::ShapeMismatch(format!(
            "point has length {}, expected {}",
            x.len(),
            fam.dim_state()
        )));
    }
    let bracket_value = bracket_value(fam, i, j, x);
    let double_bracket_max = (0..d)
        .map(|k| norm(&double_bracket(fam, i, j, k, x, DOUBLE_BRACKET_STEP)))
        .fold(0.0, f64::max);
    Ok(BracketReport {
        point: x.to_vec(),
        pair: (i, j),
        bracket_value,
        double_bracket_max,
    })
}

/// Central finite-difference Jacobian of `V_i` at `x`.
pub fn numeric_jacobian<F: VectorFields + ?Sized>(fam: &F, i: usize, x: &[f64], step: f64) -> DMatrix<f64> {
    let n = fam.dim_state();
    let mut m = DMatrix::zeros(n, n);
    let mut xp = x.to_vec();
    for q in 0..n {
        xp[q] = x[q] + step;
        let plus = fam.eval(i, &xp);
        xp[q] = x[q] - step;
        let minus = fam.eval(i, &xp);
        xp[q] = x[q];
        for p in 0..n {
            m[(p, q)] = (plus[p] - minus[p]) / (2.0 * step);
        }
    }
    m
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_point(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() < tol)
    }

    #[test]
    fn step2_rejects_zero() {
        assert!(make_step2_family(0).is_err());
    }

    #[test]
    fn step2_dimensions() {
        assert_eq!(make_step2_family(10).unwrap().dim_state(), 55);
        assert_eq!(make_step2_family(2).unwrap().dim_state(), 3);
        assert_eq!(make_step2_family(1).unwrap().dim_state(), 1);
    }

    #[test]
    fn step2_area_indices_are_a_bijection() {
        let d = 6;
        let mut seen = vec![false; d * (d + 1) / 2];
        for m in 0..d {
            for j in (m + 1)..d {
                let k = step2_area_index(d, m, j);
                assert!(!seen[k]);
                seen[k] = true;
            }
        }
        assert!(seen[d..].iter().all(|&s| s));
        assert_eq!(step2_area_index(4, 0, 1), 4);
        assert_eq!(step2_area_index(4, 1, 2), 7);
        assert_eq!(step2_area_index(4, 2, 3), 9);
    }

    #[test]
    fn step2_origin_values() {
        let fam = make_step2_family(2).unwrap();
        assert_eq!(fam.eval(0, &[0.0; 3]), vec![1.0, 0.0, 0.0]);
        assert_eq!(fam.eval(1, &[0.0; 3]), vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn step2_bracket_is_area_direction() {
        let fam = make_step2_family(2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let x = random_point(&mut rng, 3);
            let b = bracket(&fam, 0, 1, &x).unwrap();
            assert!(close(&b.bracket_value, &[0.0, 0.0, 1.0], 1e-14));
            // finite-difference cross-check of the same bracket
            let j0 = numeric_jacobian(&fam, 0, &x, 1e-5);
            let j1 = numeric_jacobian(&fam, 1, &x, 1e-5);
            let v0 = nalgebra::DVector::from_vec(fam.eval(0, &x));
            let v1 = nalgebra::DVector::from_vec(fam.eval(1, &x));
            let fd = &j1 * &v0 - &j0 * &v1;
            assert!(close(fd.as_slice(), &[0.0, 0.0, 1.0], 1e-8));
        }
    }

    #[test]
    fn step3_matches_displayed_brackets() {
        let fam = make_step3_family();
        assert_eq!(fam.eval(0, &[0.0; 5]), vec![1.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(fam.eval(1, &[0.0; 5]), vec![0.0, 1.0, 0.0, 0.0, 0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let x = random_point(&mut rng, 5);
            let v3 = bracket_value(&fam, 0, 1, &x);
            assert!(close(&v3, &[0.0, 0.0, 1.0, 0.5 * x[0], 0.5 * x[1]], 1e-12));
            // [V1,[V1,V2]] = e4 and [V2,[V1,V2]] = e5, i.e. [W, V_k] = -[V_k, W]
            let w1 = double_bracket(&fam, 0, 1, 0, &x, DOUBLE_BRACKET_STEP);
            let w2 = double_bracket(&fam, 0, 1, 1, &x, DOUBLE_BRACKET_STEP);
            assert!(close(&w1, &[0.0, 0.0, 0.0, -1.0, 0.0], 1e-8), "{w1:?}");
            assert!(close(&w2, &[0.0, 0.0, 0.0, 0.0, -1.0], 1e-8), "{w2:?}");
        }
    }

    #[test]
    fn bracket_antisymmetry_and_diagonal() {
        let fam = make_step3_family();
        let x = [0.3, -1.2, 0.7, 2.0, -0.4];
        assert!(bracket(&fam, 1, 1, &x).unwrap().bracket_value.iter().all(|&v| v == 0.0));
        let a = bracket_value(&fam, 0, 1, &x);
        let b = bracket_value(&fam, 1, 0, &x);
        assert!(a.iter().zip(&b).all(|(p, q)| *p == -*q));
    }

    #[test]
    fn bracket_rejects_bad_indices() {
        let fam = make_step3_family();
        assert!(bracket(&fam, 0, 2, &[0.0; 5]).is_err());
        assert!(bracket(&fam, 0, 1, &[0.0; 4]).is_err());
    }

    #[test]
    fn step2_double_brackets_vanish() {
        for d in [2, 3, 4] {
            let fam = make_step2_family(d).unwrap();
            let n = fam.dim_state();
            let mut rng = ChaCha8Rng::seed_from_u64(d as u64);
            for _ in 0..25 {
                let x = random_point(&mut rng, n);
                for i in 0..d {
                    for j in 0..d {
                        assert!(bracket(&fam, i, j, &x).unwrap().double_bracket_max < 1e-8);
                    }
                }
            }
        }
    }

    #[test]
    fn analytic_jacobian_matches_finite_differences() {
        let fams = [make_step2_family(3).unwrap(), make_step3_family()];
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for fam in &fams {
            for _ in 0..50 {
                let x = random_point(&mut rng, fam.dim_state());
                for i in 0..fam.dim_control() {
                    let a = fam.jac(i, &x);
                    let f = numeric_jacobian(fam, i, &x, 1e-5);
                    let err = (&a - &f).norm() / a.norm().max(1e-300);
                    assert!(err < 1e-6, "rel err {err}");
                }
            }
        }
    }

    #[test]
    fn sparse_products_agree_with_dense_jacobian() {
        let fam = make_step3_family();
        let x = [0.4, -0.9, 1.3, 0.2, -2.0];
        let v = [1.0, 2.0, -1.0, 0.5, 0.25];
        let j = fam.jac(1, &x);
        let dense_jv = &j * nalgebra::DVector::from_row_slice(&v);
        let dense_vj = j.transpose() * nalgebra::DVector::from_row_slice(&v);
        let mut jv = vec![0.0; 5];
        fam.jvp_add(1, &x, &v, &mut jv);
        let mut vj = vec![0.0; 5];
        fam.vjp_add(1, &x, &v, &mut vj);
        assert!(close(&jv, dense_jv.as_slice(), 1e-14));
        assert!(close(&vj, dense_vj.as_slice(), 1e-14));
    }

    #[test]
    fn hessian_direction_matches_jacobian_differences() {
        let fam = make_step3_family();
        let x = [0.4, -0.9, 1.3, 0.2, -2.0];
        let u = [0.3, 1.1, -0.7, 0.0, 0.9];
        for i in 0..2 {
            let h = fam.hess_dir(i, &x, &u);
            let xp: Vec<f64> = x.iter().zip(&u).map(|(a, b)| a + 1e-5 * b).collect();
            let xm: Vec<f64> = x.iter().zip(&u).map(|(a, b)| a - 1e-5 * b).collect();
            let fd = (fam.jac(i, &xp) - fam.jac(i, &xm)) / 2e-5;
            assert!((&h - &fd).norm() < 1e-8);
        }
    }

    #[test]
    fn step2_gram_matrix_is_elliptic() {
        let fam = make_step2_family(2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..20 {
            let x = random_point(&mut rng, 3);
            let cols = [fam.eval(0, &x), fam.eval(1, &x), bracket_value(&fam, 0, 1, &x)];
            let mut g = DMatrix::<f64>::zeros(3, 3);
            for c in &cols {
                let v = nalgebra::DVector::from_row_slice(c);
                g += &v * v.transpose();
            }
            let eig = g.symmetric_eigen();
            assert!(eig.eigenvalues.min() > 0.0);
        }
    }

    #[test]
    fn custom_family_validation() {
        assert!(VectorFieldFamily::from_terms(2, &[vec![PolyTerm::new(2, 1.0, &[])]]).is_err());
        assert!(VectorFieldFamily::from_terms(2, &[vec![PolyTerm::new(0, 1.0, &[0, 0, 1, 1])]]).is_err());
        assert!(VectorFieldFamily::from_terms(2, &[vec![PolyTerm::new(0, 1.0, &[5])]]).is_err());
        let fam = VectorFieldFamily::from_terms(2, &[vec![PolyTerm::new(0, 2.0, &[0, 1, 1])]]).unwrap();
        assert_eq!(fam.family_id(), FamilyId::Custom);
        assert_eq!(fam.eval(0, &[3.0, 2.0]), vec![24.0, 0.0]);
        assert_eq!(fam.terms()[0][0].vars, vec![0, 1, 1]);
    }
}
