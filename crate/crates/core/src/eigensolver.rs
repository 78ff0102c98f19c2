//! Lowest eigenpair of an implicit Hermitian operator by subspace expansion.
//!
//! The operator actually diagonalized is `H - gamma |A1><A1|` where `A1` is the
//! first basis vector (the reference). Only the (1,1) element of the projected
//! matrix depends on `gamma`, so the same basis can be re-solved for any shift
//! without touching the operator again.

use ndarray::{Array1, Array2};

use crate::error::{ImpsError, Result};
use crate::tensor::{decompose_site, eigh, inner, SiteTensor, Side, C64, ZERO};

pub trait LinearOperator {
    fn dim(&self) -> usize;
    fn apply(&self, x: &Array1<C64>) -> Array1<C64>;
    /// Trace of the operator, if cheaply available.
    fn trace(&self) -> Option<f64> {
        None
    }
}

pub struct DenseOperator(pub Array2<C64>);

impl LinearOperator for DenseOperator {
    fn dim(&self) -> usize {
        self.0.nrows()
    }
    fn apply(&self, x: &Array1<C64>) -> Array1<C64> {
        self.0.dot(x)
    }
    fn trace(&self) -> Option<f64> {
        Some(self.0.diag().iter().map(|z| z.re).sum())
    }
}

/// Compressed sparse rows.
#[derive(Clone, Debug)]
pub struct SparseOperator {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<C64>,
}

impl SparseOperator {
    /// Duplicate entries are summed.
    pub fn from_triplets(n: usize, mut entries: Vec<(usize, usize, C64)>) -> Result<Self> {
        if let Some(e) = entries.iter().find(|e| e.0 >= n || e.1 >= n) {
            return Err(ImpsError::Dimension(format!("entry ({}, {}) outside {}x{}", e.0, e.1, n, n)));
        }
        entries.sort_by_key(|e| (e.0, e.1));
        let mut row_ptr = vec![0; n + 1];
        let mut cols = Vec::with_capacity(entries.len());
        let mut vals: Vec<C64> = Vec::with_capacity(entries.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in entries {
            if last == Some((i, j)) {
                *vals.last_mut().unwrap() += v;
                continue;
            }
            row_ptr[i + 1] += 1;
            cols.push(j);
            vals.push(v);
            last = Some((i, j));
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        Ok(SparseOperator { n, row_ptr, cols, vals })
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn to_dense(&self) -> Array2<C64> {
        let mut m = Array2::zeros((self.n, self.n));
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                m[[i, self.cols[k]]] += self.vals[k];
            }
        }
        m
    }
}

impl LinearOperator for SparseOperator {
    fn dim(&self) -> usize {
        self.n
    }
    fn apply(&self, x: &Array1<C64>) -> Array1<C64> {
        Array1::from_shape_fn(self.n, |i| (self.row_ptr[i]..self.row_ptr[i + 1]).map(|k| self.vals[k] * x[self.cols[k]]).sum())
    }
    fn trace(&self) -> Option<f64> {
        let mut t = 0.0;
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                if self.cols[k] == i {
                    t += self.vals[k].re;
                }
            }
        }
        Some(t)
    }
}

fn norm(v: &Array1<C64>) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Orthonormal vectors with cached operator applications and the projected matrix.
#[derive(Clone, Debug)]
pub struct SubspaceBasis {
    vectors: Vec<Array1<C64>>,
    applied: Vec<Array1<C64>>,
    h: Array2<C64>,
}

/// Relative norm below which a candidate counts as linearly dependent.
const DEPENDENT: f64 = 1e-10;

impl SubspaceBasis {
    pub fn new() -> Self {
        SubspaceBasis { vectors: Vec::new(), applied: Vec::new(), h: Array2::zeros((0, 0)) }
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn vectors(&self) -> &[Array1<C64>] {
        &self.vectors
    }

    pub fn applied(&self) -> &[Array1<C64>] {
        &self.applied
    }

    /// Projected matrix of the unshifted operator.
    pub fn projected(&self) -> &Array2<C64> {
        &self.h
    }

    /// Projected matrix with `h[0][0] -= gamma`.
    pub fn shifted(&self, gamma: f64) -> Array2<C64> {
        let mut h = self.h.clone();
        if !h.is_empty() {
            h[[0, 0]] -= gamma;
        }
        h
    }

    /// Two passes of Gram-Schmidt; `None` when nothing independent survives.
    pub fn orthogonalize(&self, v: &Array1<C64>) -> Option<Array1<C64>> {
        let n0 = norm(v);
        if !(n0 > 0.0) || !n0.is_finite() {
            return None;
        }
        let mut w = v.clone();
        for _ in 0..2 {
            for b in &self.vectors {
                let p = inner(b, &w);
                w.scaled_add(-p, b);
            }
        }
        let n1 = norm(&w);
        if n1 < DEPENDENT * n0 {
            return None;
        }
        Some(w.mapv(|z| z / n1))
    }

    /// Orthogonalize `v`, apply the operator once and extend the projected matrix.
    /// Returns false when `v` was dependent.
    pub fn push(&mut self, v: &Array1<C64>, op: &dyn LinearOperator) -> bool {
        let Some(u) = self.orthogonalize(v) else { return false };
        let hu = op.apply(&u);
        self.push_applied(u, hu);
        true
    }

    fn push_applied(&mut self, u: Array1<C64>, hu: Array1<C64>) {
        let k = self.len();
        let mut h = Array2::zeros((k + 1, k + 1));
        h.slice_mut(ndarray::s![..k, ..k]).assign(&self.h);
        for i in 0..k {
            let x = inner(&self.vectors[i], &hu);
            h[[i, k]] = x;
            h[[k, i]] = x.conj();
        }
        h[[k, k]] = C64::new(inner(&u, &hu).re, 0.0);
        self.h = h;
        self.vectors.push(u);
        self.applied.push(hu);
    }

    /// Ritz values (ascending) and coefficient columns of `H - gamma |A1><A1|`.
    pub fn ritz(&self, gamma: f64) -> Result<(Array1<f64>, Array2<C64>)> {
        if self.is_empty() {
            return Err(ImpsError::Precondition("empty basis".into()));
        }
        eigh(&self.shifted(gamma))
    }

    pub fn combine(&self, coeffs: ndarray::ArrayView1<C64>) -> Array1<C64> {
        combine(&self.vectors, coeffs)
    }

    pub fn combine_applied(&self, coeffs: ndarray::ArrayView1<C64>) -> Array1<C64> {
        combine(&self.applied, coeffs)
    }

    /// `(H - gamma |A1><A1|) v - e v` for `v = sum c_i A_i`.
    pub fn residual(&self, coeffs: ndarray::ArrayView1<C64>, e: f64, gamma: f64) -> Array1<C64> {
        let mut r = self.combine_applied(coeffs);
        r.scaled_add(C64::new(-e, 0.0), &self.combine(coeffs));
        r.scaled_add(-coeffs[0] * gamma, &self.vectors[0]);
        r
    }

    /// Largest deviation of the Gram matrix from the identity.
    pub fn gram_deviation(&self) -> f64 {
        let mut dev = 0.0f64;
        for (i, a) in self.vectors.iter().enumerate() {
            for (j, b) in self.vectors.iter().enumerate() {
                let target = if i == j { 1.0 } else { 0.0 };
                dev = dev.max((inner(a, b) - target).norm());
            }
        }
        dev
    }

    /// Keep `A1` plus the given coefficient columns; no operator applications.
    /// Orthogonalization happens in coefficient space, which is exact because
    /// the old basis is orthonormal.
    pub fn restart(&mut self, keep: &Array2<C64>) {
        let k = self.len();
        let mut unit = Array1::zeros(k);
        unit[0] = C64::new(1.0, 0.0);
        let mut coeffs = vec![unit];
        for col in keep.columns() {
            let mut c = col.to_owned();
            for _ in 0..2 {
                for prev in &coeffs {
                    let p = inner(prev, &c);
                    c.scaled_add(-p, prev);
                }
            }
            let n = norm(&c);
            if n < DEPENDENT {
                continue;
            }
            c.mapv_inplace(|z| z / n);
            coeffs.push(c);
        }
        let m = coeffs.len();
        let cm = Array2::from_shape_fn((k, m), |(i, j)| coeffs[j][i]);
        let h = crate::tensor::adjoint(&cm).dot(&self.h).dot(&cm);
        let vectors = coeffs.iter().map(|c| self.combine(c.view())).collect();
        let applied = coeffs.iter().map(|c| self.combine_applied(c.view())).collect();
        self.vectors = vectors;
        self.applied = applied;
        self.h = crate::tensor::hermitian_part(&h);
    }
}

impl Default for SubspaceBasis {
    fn default() -> Self {
        Self::new()
    }
}

fn combine(vs: &[Array1<C64>], coeffs: ndarray::ArrayView1<C64>) -> Array1<C64> {
    let mut out = Array1::zeros(vs[0].len());
    for (v, c) in vs.iter().zip(coeffs.iter()) {
        if *c != ZERO {
            out.scaled_add(*c, v);
        }
    }
    out
}
#[derive(Clone, Debug)]
pub struct SolveOptions {
    /// Converged when `|r| <= tol * max(1, |e0|)`.
    pub tol: f64,
    pub max_iter: usize,
    pub max_basis: usize,
    /// Ritz vectors kept (besides `A1`) on a thick restart.
    pub keep: usize,
    /// Extra Ritz pairs returned besides the lowest.
    pub n_extra: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions { tol: 1e-10, max_iter: 400, max_basis: 40, keep: 3, n_extra: 3 }
    }
}

/// Ritz pair reported with its unshifted Rayleigh quotient and `H v`.
#[derive(Clone, Debug)]
pub struct RitzPair {
    pub value: f64,
    pub vector: Array1<C64>,
    pub applied: Array1<C64>,
}

#[derive(Clone, Debug)]
pub struct SolveResult {
    /// Lowest eigenvalue of `H - gamma |A1><A1|`.
    pub e0: f64,
    pub v0: Array1<C64>,
    /// Lowest pair first, then up to `n_extra` more, all from the final basis.
    pub pairs: Vec<RitzPair>,
    pub iterations: usize,
    pub converged: bool,
    pub residual: f64,
    pub basis: SubspaceBasis,
}

/// Basis-alteration hook: receives a candidate and the current basis, returns a
/// replacement (already orthonormalized) or `None` to keep the candidate as is.
pub type Alteration<'a> = &'a dyn Fn(&Array1<C64>, &SubspaceBasis) -> Option<Array1<C64>>;

fn ritz_pairs(basis: &SubspaceBasis, vecs: &Array2<C64>, count: usize) -> Vec<RitzPair> {
    (0..count.min(vecs.ncols()))
        .map(|i| {
            let c = vecs.column(i);
            let v = basis.combine(c);
            let hv = basis.combine_applied(c);
            let value = inner(&v, &hv).re;
            RitzPair { value, vector: v, applied: hv }
        })
        .collect()
}

/// Lowest eigenpair of `H - gamma |seed_0><seed_0|`.
pub fn solve_lowest(
    op: &dyn LinearOperator,
    seeds: &[Array1<C64>],
    gamma: f64,
    opts: &SolveOptions,
    precond: Option<&DavidsonPreconditioner>,
    alter: Option<Alteration>,
) -> Result<SolveResult> {
    let n = op.dim();
    if seeds.is_empty() {
        return Err(ImpsError::Precondition("no seed vectors".into()));
    }
    if let Some(s) = seeds.iter().find(|s| s.len() != n) {
        return Err(ImpsError::Dimension(format!("seed of length {} for operator of dimension {}", s.len(), n)));
    }
    let mut basis = SubspaceBasis::new();
    if !basis.push(&seeds[0], op) {
        return Err(ImpsError::Precondition("first seed is zero or not finite".into()));
    }
    for s in &seeds[1..] {
        if basis.len() >= n {
            break;
        }
        match alter.and_then(|f| f(s, &basis)) {
            Some(v) => basis.push(&v, op),
            None => basis.push(s, op),
        };
    }

    let mut iterations = 0;
    let mut converged = false;
    let (mut vals, mut vecs) = basis.ritz(gamma)?;
    let mut res_norm;
    loop {
        let r = basis.residual(vecs.column(0), vals[0], gamma);
        res_norm = norm(&r);
        if res_norm <= opts.tol * vals[0].abs().max(1.0) || basis.len() >= n {
            converged = true;
            break;
        }
        if iterations >= opts.max_iter {
            break;
        }
        if basis.len() >= opts.max_basis {
            let m = (opts.keep.max(1)).min(vecs.ncols());
            basis.restart(&vecs.slice(ndarray::s![.., ..m]).to_owned());
            (vals, vecs) = basis.ritz(gamma)?;
        }
        let t = match precond {
            Some(d) => d.apply(&r),
            None => r.clone(),
        };
        let pushed = match alter.and_then(|f| f(&t, &basis)) {
            Some(v) => basis.push(&v, op),
            None => basis.push(&t, op),
        } || basis.push(&r, op);
        if !pushed {
            break;
        }
        iterations += 1;
        (vals, vecs) = basis.ritz(gamma)?;
    }
    let pairs = ritz_pairs(&basis, &vecs, 1 + opts.n_extra);
    let v0 = pairs[0].vector.clone();
    Ok(SolveResult { e0: vals[0], v0, pairs, iterations, converged, residual: res_norm, basis })
}

/// Expand by the residual of the lowest Ritz pair. Returns false when the pair
/// is already converged to `tol` or the residual is dependent.
pub fn residual_expand(basis: &mut SubspaceBasis, op: &dyn LinearOperator, gamma: f64, tol: f64) -> Result<bool> {
    let (vals, vecs) = basis.ritz(gamma)?;
    let r = basis.residual(vecs.column(0), vals[0], gamma);
    if norm(&r) <= tol * vals[0].abs().max(1.0) {
        return Ok(false);
    }
    Ok(basis.push(&r, op))
}

/// Approximate inverse of `E0 - H` from a handful of known eigenpairs, with the
/// unknown part of the spectrum replaced by its average `alpha`.
#[derive(Clone, Debug)]
pub struct DavidsonPreconditioner {
    pairs: Vec<RitzPair>,
    active: Vec<bool>,
    alpha: f64,
    /// Optional per-component replacement for `alpha` (the operator diagonal).
    diagonal: Option<Array1<f64>>,
    e0_proxy: f64,
    n: usize,
}

/// Default `E0` offset below the lowest known eigenvalue.
pub fn default_shift(e0: f64) -> f64 {
    1e-3 * e0.abs() + 1e-8
}

/// Terms with `e_i - e0 > DROP_RATIO (e_1 - e0)` are left out.
pub const DROP_RATIO: f64 = 100.0;

pub fn build_davidson(pairs: &[RitzPair], trace: f64, n: usize, epsilon_shift: f64) -> Result<DavidsonPreconditioner> {
    let k = pairs.len();
    if k == 0 || n <= k {
        return Err(ImpsError::Precondition(format!("Davidson needs 1 <= k < N (k={}, N={})", k, n)));
    }
    let sum: f64 = pairs.iter().map(|p| p.value).sum();
    let alpha = (trace - sum) / (n - k) as f64;
    let e0 = pairs[0].value;
    let e0_proxy = e0 - epsilon_shift;
    if !((e0_proxy - alpha).abs() > 1e-14 * alpha.abs().max(1.0)) {
        return Err(ImpsError::Degenerate("E0 proxy coincides with the average eigenvalue".into()));
    }
    let gap1 = pairs.get(1).map(|p| p.value - e0);
    let active = pairs
        .iter()
        .enumerate()
        .map(|(i, p)| {
            // i = 0 is the troublesome term and never enters
            i >= 1 && (e0_proxy - p.value).abs() > 0.0 && gap1.is_none_or(|g| p.value - e0 <= DROP_RATIO * g.max(0.0) || i == 1)
        })
        .collect();
    Ok(DavidsonPreconditioner { pairs: pairs.to_vec(), active, alpha, diagonal: None, e0_proxy, n })
}

impl DavidsonPreconditioner {
    /// Preconditioner with no known pairs beyond `e0`: a multiple of the identity.
    pub fn scalar(e0: f64, trace: f64, n: usize, epsilon_shift: f64) -> Self {
        DavidsonPreconditioner {
            pairs: Vec::new(),
            active: Vec::new(),
            alpha: (trace - e0) / (n - 1).max(1) as f64,
            diagonal: None,
            e0_proxy: e0 - epsilon_shift,
            n,
        }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn e0_proxy(&self) -> f64 {
        self.e0_proxy
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn pairs(&self) -> &[RitzPair] {
        &self.pairs
    }

    pub fn is_active(&self, i: usize) -> bool {
        self.active.get(i).copied().unwrap_or(false)
    }

    /// Replace the scalar `alpha` by the operator diagonal. The known pairs are
    /// still inverted exactly; the unknown part becomes `(E0 - diag)^-1`.
    pub fn with_diagonal(mut self, diag: Array1<f64>) -> Result<Self> {
        if diag.len() != self.n {
            return Err(ImpsError::Dimension(format!("diagonal of length {} for dimension {}", diag.len(), self.n)));
        }
        self.diagonal = Some(diag);
        Ok(self)
    }

    pub fn has_diagonal(&self) -> bool {
        self.diagonal.is_some()
    }

    /// `(E0-alpha)^-1 (r + sum_{i>=1} (H-alpha)|e_i><e_i|r> / (E0-e_i))`, with
    /// `alpha` read as a diagonal matrix when one is set.
    pub fn apply(&self, r: &Array1<C64>) -> Array1<C64> {
        let mut out = r.clone();
        for (p, on) in self.pairs.iter().zip(&self.active) {
            if !on {
                continue;
            }
            let w = inner(&p.vector, r) / (self.e0_proxy - p.value);
            out.scaled_add(w, &p.applied);
            match &self.diagonal {
                None => out.scaled_add(-w * self.alpha, &p.vector),
                Some(dg) => out.zip_mut_with(&(&p.vector * &dg.mapv(|x| C64::new(x, 0.0))), |o, v| *o -= w * v),
            }
        }
        match &self.diagonal {
            None => out.mapv_inplace(|z| z / (self.e0_proxy - self.alpha)),
            Some(dg) => out.zip_mut_with(dg, |z, a| {
                // E0 sits below every diagonal entry of a Hermitian operator; guard anyway
                let den = self.e0_proxy - a;
                let den = if den.abs() < 1e-12 { -1e-12 } else { den };
                *z /= den
            }),
        }
        out
    }
}

/// `sum_s Q_L,s^dagger A_s`
pub fn lambda_bar_left(a: &SiteTensor, q_l: &SiteTensor) -> Array2<C64> {
    (0..a.d()).fold(Array2::zeros((q_l.chi_r(), a.chi_r())), |acc, s| {
        acc + crate::tensor::adjoint(&q_l.slice_s(s)).dot(&a.slice_s(s))
    })
}

/// `sum_s A_s Q_R,s^dagger`
pub fn lambda_bar_right(a: &SiteTensor, q_r: &SiteTensor) -> Array2<C64> {
    (0..a.d()).fold(Array2::zeros((a.chi_l(), q_r.chi_l())), |acc, s| {
        acc + a.slice_s(s).dot(&crate::tensor::adjoint(&q_r.slice_s(s)))
    })
}

/// `1/2 A + 1/4 (Q_L lambda_R + lambda_L Q_R)`, which is `A` itself whenever
/// `A = Q_L lambda = lambda Q_R`.
pub fn symmetrize_invariance(a: &SiteTensor, q_l: &SiteTensor, q_r: &SiteTensor) -> SiteTensor {
    let lr = lambda_bar_right(a, q_r);
    let ll = lambda_bar_left(a, q_l);
    let x = q_l.times_right(&lr).data + ll_times(&ll, q_r);
    SiteTensor::new(a.data.mapv(|z| z * 0.5) + x.mapv(|z| z * 0.25))
}

fn ll_times(m: &Array2<C64>, q: &SiteTensor) -> ndarray::Array3<C64> {
    q.times_left(m).data
}

/// Invariance-enforcing replacement for a basis candidate, orthonormalized
/// against `basis`; `None` when nothing independent is left.
pub fn alter_basis_invariance(
    candidate: &Array1<C64>,
    q_l: &SiteTensor,
    q_r: &SiteTensor,
    basis: &SubspaceBasis,
) -> Option<Array1<C64>> {
    let a = SiteTensor::from_vector(candidate, q_l.shape()).ok()?;
    basis.orthogonalize(&symmetrize_invariance(&a, q_l, q_r).to_vector())
}

/// Relative mismatch `|lambda_L - lambda_R| / |lambda|` of a center tensor.
pub fn invariance_gap(a: &SiteTensor) -> Result<f64> {
    let (_, ll) = decompose_site(a, Side::Left)?;
    let (_, lr) = decompose_site(a, Side::Right)?;
    Ok(crate::tensor::frobenius(&(&ll - &lr)) / crate::tensor::frobenius(&ll).max(1e-300))
}
