//! Dense complex tensors, Einstein-summation contraction and the matrix
//! factorizations (SVD, polar site decomposition, Takagi) used everywhere else.
//!
//! Storage is row-major. A site tensor `A` has axes `(alpha_l, alpha_r, s)`.

use ndarray::{s, Array1, Array2, Array3, ArrayBase, ArrayD, Axis, Data, Dimension, IxDyn, ShapeBuilder};
use ndarray_linalg::{Eig, Eigh, JobSvd, SVDDC, SVD, UPLO};
use num_complex::Complex64;
use rand::Rng;

use crate::error::{ImpsError, Result};

pub type C64 = Complex64;

pub const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
pub const ONE: C64 = C64 { re: 1.0, im: 0.0 };

#[inline]
pub fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

/// n-dimensional complex array with row-major layout.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseTensor {
    data: ArrayD<C64>,
}

impl DenseTensor {
    pub fn from_array<D: Dimension>(a: ndarray::Array<C64, D>) -> Self {
        DenseTensor { data: a.into_dyn().as_standard_layout().into_owned() }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        DenseTensor { data: ArrayD::zeros(IxDyn(shape)) }
    }

    pub fn from_shape_vec(shape: &[usize], v: Vec<C64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != v.len() {
            return Err(ImpsError::Dimension(format!(
                "shape {:?} needs {} entries, got {}",
                shape,
                expected,
                v.len()
            )));
        }
        Ok(DenseTensor { data: ArrayD::from_shape_vec(IxDyn(shape), v)? })
    }

    pub fn shape(&self) -> &[usize] {
        self.data.shape()
    }

    pub fn ndim(&self) -> usize {
        self.data.ndim()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn array(&self) -> &ArrayD<C64> {
        &self.data
    }

    pub fn into_array(self) -> ArrayD<C64> {
        self.data
    }

    /// Entries in row-major order.
    pub fn as_slice(&self) -> &[C64] {
        self.data.as_slice().expect("standard layout")
    }

    pub fn norm(&self) -> f64 {
        frobenius(&self.data)
    }

    pub fn conj(&self) -> Self {
        DenseTensor { data: self.data.mapv(|z| z.conj()) }
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != self.len() {
            return Err(ImpsError::Dimension(format!(
                "cannot reshape {:?} into {:?}",
                self.shape(),
                shape
            )));
        }
        let v = self.as_slice().to_vec();
        Self::from_shape_vec(shape, v)
    }

    /// Axis permutation: output axis `i` is input axis `perm[i]`.
    pub fn transpose(&self, perm: &[usize]) -> Result<Self> {
        check_perm(perm, self.ndim())?;
        let p = self.data.view().permuted_axes(IxDyn(perm));
        Ok(DenseTensor { data: p.as_standard_layout().into_owned() })
    }
}

fn check_perm(perm: &[usize], n: usize) -> Result<()> {
    let mut seen = vec![false; n];
    if perm.len() != n {
        return Err(ImpsError::Dimension(format!("permutation {:?} for {} axes", perm, n)));
    }
    for &p in perm {
        if p >= n || seen[p] {
            return Err(ImpsError::Dimension(format!("invalid permutation {:?}", perm)));
        }
        seen[p] = true;
    }
    Ok(())
}

/// Sum over the paired axes of `a` and `b`. The result carries the unpaired
/// axes of `a` followed by the unpaired axes of `b`, each in original order.
pub fn contract(a: &DenseTensor, b: &DenseTensor, pairs: &[(usize, usize)]) -> Result<DenseTensor> {
    let (na, nb) = (a.ndim(), b.ndim());
    let mut used_a = vec![false; na];
    let mut used_b = vec![false; nb];
    for &(ia, ib) in pairs {
        if ia >= na || ib >= nb {
            return Err(ImpsError::Dimension(format!(
                "axis pair ({}, {}) out of range for ranks ({}, {})",
                ia, ib, na, nb
            )));
        }
        if used_a[ia] || used_b[ib] {
            return Err(ImpsError::Dimension(format!("axis pair ({}, {}) repeated", ia, ib)));
        }
        if a.shape()[ia] != b.shape()[ib] {
            return Err(ImpsError::Dimension(format!(
                "axis {} of a has extent {} but axis {} of b has extent {}",
                ia,
                a.shape()[ia],
                ib,
                b.shape()[ib]
            )));
        }
        used_a[ia] = true;
        used_b[ib] = true;
    }
    let free_a: Vec<usize> = (0..na).filter(|&i| !used_a[i]).collect();
    let free_b: Vec<usize> = (0..nb).filter(|&i| !used_b[i]).collect();

    let mut perm_a = free_a.clone();
    perm_a.extend(pairs.iter().map(|p| p.0));
    let mut perm_b: Vec<usize> = pairs.iter().map(|p| p.1).collect();
    perm_b.extend(free_b.iter().copied());

    let rows: usize = free_a.iter().map(|&i| a.shape()[i]).product();
    let inner: usize = pairs.iter().map(|p| a.shape()[p.0]).product();
    let cols: usize = free_b.iter().map(|&i| b.shape()[i]).product();

    let ta = a.transpose(&perm_a)?;
    let tb = b.transpose(&perm_b)?;
    let ma = Array2::from_shape_vec((rows, inner), ta.into_array().into_raw_vec_and_offset().0)?;
    let mb = Array2::from_shape_vec((inner, cols), tb.into_array().into_raw_vec_and_offset().0)?;
    let prod = ma.dot(&mb);

    let mut shape: Vec<usize> = free_a.iter().map(|&i| a.shape()[i]).collect();
    shape.extend(free_b.iter().map(|&i| b.shape()[i]));
    DenseTensor::from_shape_vec(&shape, prod.into_raw_vec_and_offset().0)
}

pub fn frobenius<S, D>(a: &ArrayBase<S, D>) -> f64
where
    S: Data<Elem = C64>,
    D: Dimension,
{
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn adjoint<S: Data<Elem = C64>>(m: &ArrayBase<S, ndarray::Ix2>) -> Array2<C64> {
    m.t().mapv(|z| z.conj())
}

/// `<x|y>` with the bra conjugated.
pub fn inner<S1, S2, D>(x: &ArrayBase<S1, D>, y: &ArrayBase<S2, D>) -> C64
where
    S1: Data<Elem = C64>,
    S2: Data<Elem = C64>,
    D: Dimension,
{
    x.iter().zip(y.iter()).map(|(a, b)| a.conj() * b).sum()
}

pub fn all_finite<S, D>(a: &ArrayBase<S, D>) -> bool
where
    S: Data<Elem = C64>,
    D: Dimension,
{
    a.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

pub fn identity(n: usize) -> Array2<C64> {
    Array2::from_diag(&Array1::from_elem(n, ONE))
}

/// Thin singular value decomposition `m = U diag(d) V^dagger`.
#[derive(Clone, Debug)]
pub struct Factorization {
    pub u: Array2<C64>,
    pub d: Array1<f64>,
    pub v: Array2<C64>,
}

impl Factorization {
    pub fn reconstruct(&self) -> Array2<C64> {
        let mut ud = self.u.clone();
        for (j, mut col) in ud.axis_iter_mut(Axis(1)).enumerate() {
            col.mapv_inplace(|z| z * self.d[j]);
        }
        ud.dot(&adjoint(&self.v))
    }
}

pub fn svd<S: Data<Elem = C64>>(m: &ArrayBase<S, ndarray::Ix2>) -> Result<Factorization> {
    if !all_finite(m) {
        return Err(ImpsError::NonFinite("svd input".into()));
    }
    let owned = m.to_owned();
    let (u, d, vt) = match owned.svddc(JobSvd::Some) {
        Ok(r) => r,
        // divide-and-conquer occasionally fails to converge; fall back to the QR variant
        Err(_) => {
            let (u, d, vt) = owned.svd(true, true)?;
            let k = d.len();
            let u = u.map(|u| u.slice(s![.., ..k]).to_owned());
            let vt = vt.map(|v| v.slice(s![..k, ..]).to_owned());
            (u, d, vt)
        }
    };
    let u = u.ok_or_else(|| ImpsError::Numerical("svd returned no U".into()))?;
    let vt = vt.ok_or_else(|| ImpsError::Numerical("svd returned no V".into()))?;
    Ok(Factorization { u, d, v: adjoint(&vt) })
}

/// Hermitian eigendecomposition, eigenvalues ascending.
pub fn eigh<S: Data<Elem = C64>>(m: &ArrayBase<S, ndarray::Ix2>) -> Result<(Array1<f64>, Array2<C64>)> {
    // row-major input comes back with conjugated eigenvectors, so hand LAPACK
    // a column-major copy
    let h = hermitian_part(m);
    let mut f = Array2::zeros(h.raw_dim().f());
    f.assign(&h);
    let (w, v) = f.eigh(UPLO::Lower)?;
    Ok((w, v.as_standard_layout().into_owned()))
}

pub fn hermitian_part<S: Data<Elem = C64>>(m: &ArrayBase<S, ndarray::Ix2>) -> Array2<C64> {
    let mut h = m.to_owned();
    let a = adjoint(m);
    h.zip_mut_with(&a, |x, y| *x = (*x + *y) * 0.5);
    h
}

/// General (non-Hermitian) eigendecomposition, right eigenvectors in columns.
pub fn eig<S: Data<Elem = C64>>(m: &ArrayBase<S, ndarray::Ix2>) -> Result<(Array1<C64>, Array2<C64>)> {
    if !all_finite(m) {
        return Err(ImpsError::NonFinite("eig input".into()));
    }
    let (w, v) = m.to_owned().eig()?;
    Ok((w, v))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

/// Site tensor `A[alpha_l, alpha_r, s]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SiteTensor {
    pub data: Array3<C64>,
}

impl SiteTensor {
    pub fn new(data: Array3<C64>) -> Self {
        SiteTensor { data: data.as_standard_layout().into_owned() }
    }

    pub fn zeros(chi_l: usize, chi_r: usize, d: usize) -> Self {
        SiteTensor { data: Array3::zeros((chi_l, chi_r, d)) }
    }

    pub fn random<R: Rng>(rng: &mut R, chi_l: usize, chi_r: usize, d: usize) -> Self {
        let data = Array3::from_shape_fn((chi_l, chi_r, d), |_| {
            C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        });
        SiteTensor { data }
    }

    pub fn chi_l(&self) -> usize {
        self.data.shape()[0]
    }
    pub fn chi_r(&self) -> usize {
        self.data.shape()[1]
    }
    pub fn d(&self) -> usize {
        self.data.shape()[2]
    }
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.chi_l(), self.chi_r(), self.d())
    }

    pub fn norm(&self) -> f64 {
        frobenius(&self.data)
    }

    pub fn normalized(&self) -> Result<Self> {
        let n = self.norm();
        if n == 0.0 || !n.is_finite() {
            return Err(ImpsError::Degenerate("cannot normalize zero site tensor".into()));
        }
        Ok(SiteTensor { data: self.data.mapv(|z| z / n) })
    }

    /// Flat vector in `(alpha_l, alpha_r, s)` order.
    pub fn to_vector(&self) -> Array1<C64> {
        Array1::from(self.data.as_standard_layout().iter().copied().collect::<Vec<_>>())
    }

    pub fn from_vector(v: &Array1<C64>, shape: (usize, usize, usize)) -> Result<Self> {
        let a = Array3::from_shape_vec(shape, v.to_vec())?;
        Ok(SiteTensor { data: a })
    }

    /// Matrix `A_s` for one physical index.
    pub fn slice_s(&self, s: usize) -> Array2<C64> {
        self.data.index_axis(Axis(2), s).to_owned()
    }

    /// `sum_b A[a,b,s] m[b,c]`
    pub fn times_right(&self, m: &Array2<C64>) -> SiteTensor {
        let (cl, cr, d) = self.shape();
        let mut out = Array3::zeros((cl, m.shape()[1], d));
        for s in 0..d {
            let r = self.data.index_axis(Axis(2), s).dot(m);
            out.index_axis_mut(Axis(2), s).assign(&r);
        }
        let _ = cr;
        SiteTensor { data: out }
    }

    /// `sum_a m[c,a] A[a,b,s]`
    pub fn times_left(&self, m: &Array2<C64>) -> SiteTensor {
        let d = self.d();
        let mut out = Array3::zeros((m.shape()[0], self.chi_r(), d));
        for s in 0..d {
            let r = m.dot(&self.data.index_axis(Axis(2), s));
            out.index_axis_mut(Axis(2), s).assign(&r);
        }
        SiteTensor { data: out }
    }

    /// Matrix with rows `(alpha_l, s)` and columns `alpha_r`.
    pub fn left_matrix(&self) -> Array2<C64> {
        let (cl, cr, d) = self.shape();
        let p = self.data.view().permuted_axes([0, 2, 1]);
        let v: Vec<C64> = p.as_standard_layout().iter().copied().collect();
        Array2::from_shape_vec((cl * d, cr), v).expect("shape")
    }

    pub fn from_left_matrix(m: &Array2<C64>, cl: usize, d: usize) -> Self {
        let cr = m.shape()[1];
        let v: Vec<C64> = m.as_standard_layout().iter().copied().collect();
        let a = Array3::from_shape_vec((cl, d, cr), v).expect("shape");
        SiteTensor::new(a.permuted_axes([0, 2, 1]).as_standard_layout().into_owned())
    }

    /// Matrix with rows `alpha_l` and columns `(alpha_r, s)`.
    pub fn right_matrix(&self) -> Array2<C64> {
        let (cl, cr, d) = self.shape();
        let v: Vec<C64> = self.data.as_standard_layout().iter().copied().collect();
        Array2::from_shape_vec((cl, cr * d), v).expect("shape")
    }

    pub fn from_right_matrix(m: &Array2<C64>, d: usize) -> Self {
        let cl = m.shape()[0];
        let cr = m.shape()[1] / d;
        let v: Vec<C64> = m.as_standard_layout().iter().copied().collect();
        SiteTensor { data: Array3::from_shape_vec((cl, cr, d), v).expect("shape") }
    }

    /// Swap the two bond axes.
    pub fn bond_transposed(&self) -> SiteTensor {
        SiteTensor::new(self.data.view().permuted_axes([1, 0, 2]).to_owned())
    }
}

/// Polar split of a site tensor: `A = Q lambda` (left) or `A = lambda Q` (right)
/// with `Q = U V^dagger` isometric and `lambda` Hermitian positive semidefinite.
/// No singular values are discarded.
pub fn decompose_site(a: &SiteTensor, side: Side) -> Result<(SiteTensor, Array2<C64>)> {
    let (cl, cr, d) = a.shape();
    let n = a.norm();
    if n == 0.0 {
        return Err(ImpsError::Degenerate("decompose_site on zero tensor".into()));
    }
    if !n.is_finite() {
        return Err(ImpsError::NonFinite("decompose_site input".into()));
    }
    match side {
        Side::Left => {
            if cl * d < cr {
                return Err(ImpsError::Dimension(format!(
                    "left isometry needs chi_l*d >= chi_r, got {}*{} < {}",
                    cl, d, cr
                )));
            }
            let f = svd(&a.left_matrix())?;
            let q = f.u.dot(&adjoint(&f.v));
            let lam = scaled_gram(&f.v, &f.d);
            Ok((SiteTensor::from_left_matrix(&q, cl, d), lam))
        }
        Side::Right => {
            if cr * d < cl {
                return Err(ImpsError::Dimension(format!(
                    "right isometry needs chi_r*d >= chi_l, got {}*{} < {}",
                    cr, d, cl
                )));
            }
            let f = svd(&a.right_matrix())?;
            let q = f.u.dot(&adjoint(&f.v));
            let lam = scaled_gram(&f.u, &f.d);
            Ok((SiteTensor::from_right_matrix(&q, d), lam))
        }
    }
}

/// `W diag(d) W^dagger`, made exactly Hermitian.
fn scaled_gram(w: &Array2<C64>, d: &Array1<f64>) -> Array2<C64> {
    let mut wd = w.clone();
    for (j, mut col) in wd.axis_iter_mut(Axis(1)).enumerate() {
        col.mapv_inplace(|z| z * d[j]);
    }
    hermitian_part(&wd.dot(&adjoint(w)))
}

/// Takagi factorization `s = U diag(d) U^T` of a complex symmetric matrix,
/// `d` real, non-negative and descending.
///
/// Uses the real symmetric embedding `[[Re s, Im s], [Im s, -Re s]]`, whose
/// positive eigenpairs `(x, y)` give Takagi vectors `x + i y`.
pub fn takagi<S: Data<Elem = C64>>(sm: &ArrayBase<S, ndarray::Ix2>) -> Result<(Array2<C64>, Array1<f64>)> {
    let n = sm.nrows();
    if sm.ncols() != n {
        return Err(ImpsError::Dimension("takagi needs a square matrix".into()));
    }
    let norm = frobenius(sm);
    let asym = frobenius(&(sm.to_owned() - &sm.t()));
    if norm > 0.0 && asym / norm >= 1e-10 {
        return Err(ImpsError::Precondition(format!(
            "takagi input not symmetric (relative asymmetry {:.3e})",
            asym / norm
        )));
    }
    if n == 0 {
        return Ok((Array2::zeros((0, 0)), Array1::zeros(0)));
    }
    let sym = (sm.to_owned() + &sm.t()).mapv(|z| z * 0.5);
    let mut big = Array2::<f64>::zeros((2 * n, 2 * n));
    for i in 0..n {
        for j in 0..n {
            let z = sym[[i, j]];
            big[[i, j]] = z.re;
            big[[i, j + n]] = z.im;
            big[[i + n, j]] = z.im;
            big[[i + n, j + n]] = -z.re;
        }
    }
    let (w, v) = big.eigh(UPLO::Lower)?;
    // eigenvalues ascending: the top n are the Takagi values
    let mut u = Array2::<C64>::zeros((n, n));
    let mut d = Array1::<f64>::zeros(n);
    for k in 0..n {
        let col = 2 * n - 1 - k;
        d[k] = w[col].max(0.0);
        for i in 0..n {
            u[[i, k]] = C64::new(v[[i, col]], v[[i + n, col]]);
        }
    }
    // vectors of (near-)zero Takagi values may come out non-orthogonal; they only
    // need to span the remaining space, so re-orthonormalize them
    let tiny = 1e-10 * d[0].max(f64::MIN_POSITIVE);
    let first_small = (0..n).find(|&k| d[k] <= tiny).unwrap_or(n);
    if first_small < n {
        for k in first_small..n {
            d[k] = 0.0;
        }
        orthonormal_completion(&mut u, first_small);
    }
    Ok((u, d))
}

/// Replace columns `from..` of `u` with an orthonormal completion of the
/// first `from` (assumed orthonormal) columns, preferring the existing columns.
pub fn orthonormal_completion(u: &mut Array2<C64>, from: usize) {
    let (rows, cols) = u.dim();
    let mut candidates: Vec<Array1<C64>> = (from..cols).map(|k| u.column(k).to_owned()).collect();
    for i in 0..rows {
        let mut e = Array1::zeros(rows);
        e[i] = ONE;
        candidates.push(e);
    }
    let mut k = from;
    let mut cand = candidates.into_iter();
    while k < cols {
        let Some(mut x) = cand.next() else { break };
        for _ in 0..2 {
            for j in 0..k {
                let col = u.column(j).to_owned();
                let ov = inner(&col, &x);
                x.scaled_add(-ov, &col);
            }
        }
        let nx = frobenius(&x);
        if nx > 1e-8 {
            u.column_mut(k).assign(&x.mapv(|z| z / nx));
            k += 1;
        }
    }
}

/// Hermitian square root of a positive semidefinite matrix (negative
/// eigenvalues from round-off are clipped).
pub fn psd_sqrt(m: &Array2<C64>) -> Result<Array2<C64>> {
    let (w, v) = eigh(m)?;
    let mut vs = v.clone();
    for (j, mut col) in vs.axis_iter_mut(Axis(1)).enumerate() {
        let s = w[j].max(0.0).sqrt();
        col.mapv_inplace(|z| z * s);
    }
    Ok(vs.dot(&adjoint(&v)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<C64> {
        Array2::from_shape_fn((r, c), |_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
    }

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> DenseTensor {
        let n: usize = shape.iter().product();
        let v = (0..n).map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
        DenseTensor::from_shape_vec(shape, v).unwrap()
    }

    // brute-force oracle: loop over every index combination
    fn contract_loop(a: &DenseTensor, b: &DenseTensor, pairs: &[(usize, usize)]) -> DenseTensor {
        let free_a: Vec<usize> = (0..a.ndim()).filter(|i| !pairs.iter().any(|p| p.0 == *i)).collect();
        let free_b: Vec<usize> = (0..b.ndim()).filter(|i| !pairs.iter().any(|p| p.1 == *i)).collect();
        let mut shape: Vec<usize> = free_a.iter().map(|&i| a.shape()[i]).collect();
        shape.extend(free_b.iter().map(|&i| b.shape()[i]));
        let sum_shape: Vec<usize> = pairs.iter().map(|p| a.shape()[p.0]).collect();
        let mut out = ArrayD::<C64>::zeros(IxDyn(&shape));
        for (oidx, o) in out.indexed_iter_mut() {
            let oidx = oidx.slice().to_vec();
            let total: usize = sum_shape.iter().product();
            for flat in 0..total {
                let mut rem = flat;
                let mut sidx = vec![0; sum_shape.len()];
                for k in (0..sum_shape.len()).rev() {
                    sidx[k] = rem % sum_shape[k];
                    rem /= sum_shape[k];
                }
                let mut ia = vec![0; a.ndim()];
                let mut ib = vec![0; b.ndim()];
                for (k, &ax) in free_a.iter().enumerate() {
                    ia[ax] = oidx[k];
                }
                for (k, &ax) in free_b.iter().enumerate() {
                    ib[ax] = oidx[free_a.len() + k];
                }
                for (k, p) in pairs.iter().enumerate() {
                    ia[p.0] = sidx[k];
                    ib[p.1] = sidx[k];
                }
                *o += a.array()[IxDyn(&ia)] * b.array()[IxDyn(&ib)];
            }
        }
        DenseTensor::from_array(out)
    }

    #[test]
    fn contract_identity_vector() {
        let id = DenseTensor::from_array(identity(2));
        let v = DenseTensor::from_shape_vec(&[2], vec![c(3.0), C64::new(0.0, 2.0)]).unwrap();
        let r = contract(&id, &v, &[(1, 0)]).unwrap();
        assert_eq!(r, v);
    }

    #[test]
    fn contract_is_matrix_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = rand_mat(&mut rng, 2, 2);
        let n = rand_mat(&mut rng, 2, 2);
        let r = contract(&DenseTensor::from_array(m.clone()), &DenseTensor::from_array(n.clone()), &[(1, 0)]).unwrap();
        let expect = m.dot(&n);
        for (x, y) in r.as_slice().iter().zip(expect.iter()) {
            assert!((x - y).norm() < 1e-14);
        }
    }

    #[test]
    fn contract_shape_mismatch_names_axes() {
        let a = DenseTensor::zeros(&[2, 3]);
        let b = DenseTensor::zeros(&[4, 2]);
        let err = contract(&a, &b, &[(1, 0)]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("axis 1 of a") && msg.contains("axis 0 of b"), "{}", msg);
    }

    #[test]
    fn left_orthogonal_q_gives_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = SiteTensor::random(&mut rng, 4, 6, 3);
        let (q, _) = decompose_site(&a, Side::Left).unwrap();
        let qt = DenseTensor::from_array(q.data.clone());
        // contract over physical and left axes: sum_{a,s} Q*[a,b',s] Q[a,b,s]
        let g = contract(&qt.conj(), &qt, &[(0, 0), (2, 2)]).unwrap();
        let g = g.array().clone().into_dimensionality::<ndarray::Ix2>().unwrap();
        assert!(frobenius(&(g - identity(6))) < 1e-12);
    }

    #[test]
    fn svd_diagonal_and_rank_one() {
        let m = Array2::from_diag(&Array1::from(vec![c(3.0), c(1.0)]));
        let f = svd(&m).unwrap();
        assert!((f.d[0] - 3.0).abs() < 1e-14 && (f.d[1] - 1.0).abs() < 1e-14);
        assert!((f.u[[0, 0]].norm() - 1.0).abs() < 1e-14);

        let u = Array1::from(vec![c(1.0), c(2.0), C64::new(0.0, 1.0)]);
        let v = Array1::from(vec![c(2.0), c(-1.0)]);
        let outer = Array2::from_shape_fn((3, 2), |(i, j)| u[i] * v[j]);
        let f = svd(&outer).unwrap();
        let expect = frobenius(&u) * frobenius(&v);
        assert!((f.d[0] - expect).abs() < 1e-12);
        assert!(f.d[1].abs() < 1e-12);
    }

    #[test]
    fn svd_reconstructs_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = rand_mat(&mut rng, 8, 5);
        let f = svd(&m).unwrap();
        assert!(frobenius(&(f.reconstruct() - &m)) / frobenius(&m) < 1e-12);
        assert!(frobenius(&(adjoint(&f.u).dot(&f.u) - identity(5))) < 1e-12);
        assert!(frobenius(&(adjoint(&f.v).dot(&f.v) - identity(5))) < 1e-12);
        for k in 1..5 {
            assert!(f.d[k - 1] >= f.d[k] && f.d[k] >= 0.0);
        }
    }

    #[test]
    fn svd_rejects_nan() {
        let mut m = Array2::<C64>::zeros((2, 2));
        m[[0, 1]] = C64::new(f64::NAN, 0.0);
        assert!(matches!(svd(&m), Err(ImpsError::NonFinite(_))));
    }

    #[test]
    fn decompose_orthogonal_input_gives_identity_lambda() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = SiteTensor::random(&mut rng, 3, 5, 2);
        let (q, _) = decompose_site(&a, Side::Left).unwrap();
        let (q2, lam) = decompose_site(&q, Side::Left).unwrap();
        assert!(frobenius(&(lam - identity(5))) < 1e-12);
        assert!(frobenius(&(q2.data - &q.data)) < 1e-12);
    }

    #[test]
    fn decompose_reconstructs_both_sides() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for &(cl, cr, d) in &[(4, 4, 2), (3, 5, 2), (5, 3, 3), (1, 1, 2)] {
            let a = SiteTensor::random(&mut rng, cl, cr, d);
            let (ql, ll) = decompose_site(&a, Side::Left).unwrap();
            let rec = ql.times_right(&ll);
            assert!(frobenius(&(rec.data - &a.data)) / a.norm() < 1e-12);
            assert!(frobenius(&(ll.clone() - adjoint(&ll))) < 1e-12);
            let (w, _) = eigh(&ll).unwrap();
            assert!(w.iter().all(|&x| x > -1e-12));
            assert!((frobenius(&ll) - a.norm()).abs() < 1e-12 * a.norm());

            let (qr, lr) = decompose_site(&a, Side::Right).unwrap();
            let rec = qr.times_left(&lr);
            assert!(frobenius(&(rec.data - &a.data)) / a.norm() < 1e-12);
            let mr = qr.right_matrix();
            assert!(frobenius(&(mr.dot(&adjoint(&mr)) - identity(cl))) < 1e-12);
            assert!((frobenius(&lr) - a.norm()).abs() < 1e-12 * a.norm());
        }
    }

    #[test]
    fn decompose_zero_is_degenerate() {
        let a = SiteTensor::zeros(2, 2, 2);
        assert!(matches!(decompose_site(&a, Side::Left), Err(ImpsError::Degenerate(_))));
    }

    #[test]
    fn takagi_diagonal() {
        let m = Array2::from_diag(&Array1::from(vec![c(2.0), c(1.0)]));
        let (u, d) = takagi(&m).unwrap();
        assert!((d[0] - 2.0).abs() < 1e-14 && (d[1] - 1.0).abs() < 1e-14);
        let rec = u.dot(&Array2::from_diag(&d.mapv(c))).dot(&u.t());
        assert!(frobenius(&(rec - &m)) < 1e-12);
    }

    #[test]
    fn takagi_swap_matrix() {
        let m = Array2::from_shape_vec((2, 2), vec![ZERO, ONE, ONE, ZERO]).unwrap();
        let (u, d) = takagi(&m).unwrap();
        assert!((d[0] - 1.0).abs() < 1e-12 && (d[1] - 1.0).abs() < 1e-12);
        let rec = u.dot(&Array2::from_diag(&d.mapv(c))).dot(&u.t());
        assert!(frobenius(&(rec - &m)) < 1e-10);
    }

    #[test]
    fn takagi_random_complex_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = rand_mat(&mut rng, 6, 6);
        let m = &a + &a.t();
        let (u, d) = takagi(&m).unwrap();
        let rec = u.dot(&Array2::from_diag(&d.mapv(c))).dot(&u.t());
        assert!(frobenius(&(rec - &m)) / frobenius(&m) < 1e-10);
        assert!(frobenius(&(adjoint(&u).dot(&u) - identity(6))) < 1e-10);
        for k in 1..6 {
            assert!(d[k - 1] >= d[k]);
        }
    }

    #[test]
    fn takagi_rank_deficient() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let v = rand_mat(&mut rng, 5, 2);
        let m = v.dot(&v.t());
        let (u, d) = takagi(&m).unwrap();
        let rec = u.dot(&Array2::from_diag(&d.mapv(c))).dot(&u.t());
        assert!(frobenius(&(rec - &m)) / frobenius(&m) < 1e-10);
        assert!(frobenius(&(adjoint(&u).dot(&u) - identity(5))) < 1e-10);
    }

    #[test]
    fn takagi_rejects_asymmetric() {
        let m = Array2::from_shape_vec((2, 2), vec![ZERO, ONE, ZERO, ZERO]).unwrap();
        assert!(matches!(takagi(&m), Err(ImpsError::Precondition(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]

        #[test]
        fn contract_matches_loop_and_is_associative(seed in 0u64..10_000, e in prop::collection::vec(1usize..=4, 4)) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            // a: (e0, e1, e2), b: (e1, e3), c: (e3, e2)
            let a = rand_tensor(&mut rng, &[e[0], e[1], e[2]]);
            let b = rand_tensor(&mut rng, &[e[1], e[3]]);
            let cc = rand_tensor(&mut rng, &[e[3], e[2]]);
            let ab = contract(&a, &b, &[(1, 0)]).unwrap();
            let ab_loop = contract_loop(&a, &b, &[(1, 0)]);
            for (x, y) in ab.as_slice().iter().zip(ab_loop.as_slice()) {
                prop_assert!((x - y).norm() < 1e-13);
            }
            // (ab) has axes (e0, e2, e3); contract with c over e3 and e2
            let left = contract(&ab, &cc, &[(2, 0), (1, 1)]).unwrap();
            let bc = contract(&b, &cc, &[(1, 0)]).unwrap();
            let right = contract(&a, &bc, &[(1, 0), (2, 1)]).unwrap();
            let oracle = contract_loop(&ab_loop, &cc, &[(2, 0), (1, 1)]);
            for ((x, y), z) in left.as_slice().iter().zip(right.as_slice()).zip(oracle.as_slice()) {
                prop_assert!((x - y).norm() < 1e-13);
                prop_assert!((x - z).norm() < 1e-13);
            }
        }

        #[test]
        fn svd_is_idempotent_on_singular_values(seed in 0u64..10_000, r in 1usize..7, cc in 1usize..7) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = rand_mat(&mut rng, r, cc);
            let f = svd(&m).unwrap();
            let g = svd(&f.reconstruct()).unwrap();
            for (x, y) in f.d.iter().zip(g.d.iter()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn transpose_preserves_entries(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = rand_tensor(&mut rng, &[2, 3, 4]);
            let p = t.transpose(&[2, 0, 1]).unwrap();
            let mut a: Vec<(f64, f64)> = t.as_slice().iter().map(|z| (z.re, z.im)).collect();
            let mut b: Vec<(f64, f64)> = p.as_slice().iter().map(|z| (z.re, z.im)).collect();
            a.sort_by(|x, y| x.partial_cmp(y).unwrap());
            b.sort_by(|x, y| x.partial_cmp(y).unwrap());
            prop_assert_eq!(a, b);
            prop_assert_eq!(p.shape(), &[4, 2, 3]);
        }
    }

    #[test]
    fn eigh_vectors_satisfy_eigen_equation_for_complex_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        let h = hermitian_part(&rand_mat(&mut rng, 7, 7));
        let (w, v) = eigh(&h).unwrap();
        for i in 0..7 {
            let r = h.dot(&v.column(i)) - v.column(i).mapv(|z| z * w[i]);
            assert!(frobenius(&r) < 1e-13);
        }
        let m = rand_mat(&mut rng, 6, 6);
        let (we, ve) = eig(&m).unwrap();
        for i in 0..6 {
            let r = m.dot(&ve.column(i)) - ve.column(i).mapv(|z| z * we[i]);
            assert!(frobenius(&r) < 1e-12);
        }
    }
}
