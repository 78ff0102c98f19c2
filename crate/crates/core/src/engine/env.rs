//! Environments and the effective single-site operator.
//!
//! Environments are stored as `E[bra, mu, ket]`. Every contraction is reduced
//! to three matrix products.

use ndarray::{Array1, Array2, Array3, Array4, ArrayD, Axis, IxDyn};

use crate::eigensolver::LinearOperator;
use crate::error::{ImpsError, Result};
use crate::mpo::Mpo;
use crate::tensor::{all_finite, SiteTensor, C64, ONE};

/// Reshape any contiguous-able array into a matrix (copies if needed).
fn matrix<D: ndarray::Dimension>(a: ndarray::ArrayView<C64, D>, rows: usize, cols: usize) -> Array2<C64> {
    let v: Vec<C64> = a.as_standard_layout().iter().copied().collect();
    Array2::from_shape_vec((rows, cols), v).expect("matrix reshape")
}

fn dyn_view(a: &Array2<C64>, shape: &[usize]) -> ArrayD<C64> {
    ArrayD::from_shape_vec(IxDyn(shape), a.iter().copied().collect()).expect("reshape")
}

/// Bulk tensor as the matrix `[(mu, s), (nu, s')]`.
fn w_left(w: &Array4<C64>) -> Array2<C64> {
    let (m, _, d, _) = w.dim();
    // W[mu, nu, s', s] -> [mu, s, nu, s']
    matrix(w.view().permuted_axes([0, 3, 1, 2]), m * d, m * d)
}

/// Bulk tensor as the matrix `[(nu, s), (mu, s')]`.
fn w_right(w: &Array4<C64>) -> Array2<C64> {
    let (m, _, d, _) = w.dim();
    matrix(w.view().permuted_axes([1, 3, 0, 2]), m * d, m * d)
}

/// Left environment with the new site absorbed:
/// `L'[b', nu, b] = sum conj(Q[a',b',s']) L[a',mu,a] W[mu,nu,s',s] Q[a,b,s]`.
pub fn absorb_left(l: &Array3<C64>, q: &SiteTensor, w: &Array4<C64>) -> Result<Array3<C64>> {
    let (xl, m, xk) = l.dim();
    let (ql, qr, d) = q.shape();
    if xl != ql || xk != ql || w.dim().0 != m || w.dim().2 != d {
        return Err(ImpsError::Dimension(format!(
            "absorb_left: env {:?}, site {:?}, mpo {:?}",
            l.dim(),
            q.shape(),
            w.dim()
        )));
    }
    // T1[(a', mu), (b, s)]
    let t1 = matrix(l.view(), xl * m, xk).dot(&matrix(q.data.view(), ql, qr * d));
    // -> [(a', b), (mu, s)]
    let t1 = dyn_view(&t1, &[xl, m, qr, d]);
    let t1 = matrix(t1.view().permuted_axes(IxDyn(&[0, 2, 1, 3])), xl * qr, m * d);
    // T2[(a', b), (nu, s')]
    let t2 = t1.dot(&w_left(w));
    // -> [(a', s'), (nu, b)]
    let t2 = dyn_view(&t2, &[xl, qr, m, d]);
    let t2 = matrix(t2.view().permuted_axes(IxDyn(&[0, 3, 2, 1])), xl * d, m * qr);
    // conj(Q) as [b', (a', s')]
    let qc = matrix(q.data.view().permuted_axes([1, 0, 2]), qr, ql * d).mapv(|z| z.conj());
    let out = qc.dot(&t2);
    Ok(Array3::from_shape_vec((qr, m, qr), out.into_raw_vec_and_offset().0)?)
}

/// Right environment with the new site absorbed:
/// `R'[a', mu, a] = sum conj(Q[a',b',s']) R[b',nu,b] W[mu,nu,s',s] Q[a,b,s]`.
pub fn absorb_right(r: &Array3<C64>, q: &SiteTensor, w: &Array4<C64>) -> Result<Array3<C64>> {
    let (xb, m, xk) = r.dim();
    let (ql, qr, d) = q.shape();
    if xb != qr || xk != qr || w.dim().0 != m || w.dim().2 != d {
        return Err(ImpsError::Dimension(format!(
            "absorb_right: env {:?}, site {:?}, mpo {:?}",
            r.dim(),
            q.shape(),
            w.dim()
        )));
    }
    // Q as [(a, s), b] then R as [b, (nu, b')]
    let qm = matrix(q.data.view().permuted_axes([0, 2, 1]), ql * d, qr);
    let rm = matrix(r.view().permuted_axes([2, 1, 0]), xk, m * xb);
    let t1 = qm.dot(&rm); // [(a, s), (nu, b')]
    let t1 = dyn_view(&t1, &[ql, d, m, xb]);
    // -> [(a, b'), (nu, s)]
    let t1 = matrix(t1.view().permuted_axes(IxDyn(&[0, 3, 2, 1])), ql * xb, m * d);
    let t2 = t1.dot(&w_right(w)); // [(a, b'), (mu, s')]
    let t2 = dyn_view(&t2, &[ql, xb, m, d]);
    // -> [(b', s'), (mu, a)]
    let t2 = matrix(t2.view().permuted_axes(IxDyn(&[1, 3, 2, 0])), xb * d, m * ql);
    // conj(Q) as [a', (b', s')]
    let qc = matrix(q.data.view(), ql, qr * d).mapv(|z| z.conj());
    let out = qc.dot(&t2);
    Ok(Array3::from_shape_vec((ql, m, ql), out.into_raw_vec_and_offset().0)?)
}

/// Trivial left environment (nothing absorbed yet).
pub fn left_boundary(m: usize) -> Array3<C64> {
    let mut l = Array3::zeros((1, m, 1));
    l[[0, m - 1, 0]] = ONE;
    l
}

/// Trivial right environment.
pub fn right_boundary(m: usize) -> Array3<C64> {
    let mut r = Array3::zeros((1, m, 1));
    r[[0, 0, 0]] = ONE;
    r
}

/// `sum_a E[a, mu, a]` per slot.
fn partial_trace(e: &Array3<C64>) -> Array1<C64> {
    let (x, m, _) = e.dim();
    Array1::from_shape_fn(m, |mu| (0..x).map(|a| e[[a, mu, a]]).sum())
}

/// Effective single-site operator
/// `(H A)[a',b',s'] = sum L[a',mu,a] W[mu,nu,s',s] A[a,b,s] R[b',nu,b]`.
pub struct EffectiveOperator {
    l: Array3<C64>,
    r: Array3<C64>,
    w: Array4<C64>,
    wl: Array2<C64>,
    shape: (usize, usize, usize),
}

impl EffectiveOperator {
    pub fn new(l: &Array3<C64>, w: &Array4<C64>, r: &Array3<C64>) -> Result<Self> {
        let (xl, m, xl2) = l.dim();
        let (xr, m2, xr2) = r.dim();
        let (wm, wm2, d, d2) = w.dim();
        if xl != xl2 || xr != xr2 || m != m2 || m != wm || m != wm2 || d != d2 {
            return Err(ImpsError::Dimension(format!(
                "effective operator: L {:?}, W {:?}, R {:?}",
                l.dim(),
                w.dim(),
                r.dim()
            )));
        }
        if !all_finite(l) || !all_finite(r) {
            return Err(ImpsError::NonFinite("environment".into()));
        }
        Ok(EffectiveOperator { l: l.clone(), r: r.clone(), w: w.clone(), wl: w_left(w), shape: (xl, xr, d) })
    }

    pub fn from_mpo(l: &Array3<C64>, mpo: &Mpo, r: &Array3<C64>) -> Result<Self> {
        Self::new(l, mpo.bulk(), r)
    }

    pub fn site_shape(&self) -> (usize, usize, usize) {
        self.shape
    }

    pub fn apply_site(&self, a: &SiteTensor) -> SiteTensor {
        let (xl, xr, d) = self.shape;
        let m = self.w.dim().0;
        let t1 = matrix(self.l.view(), xl * m, xl).dot(&matrix(a.data.view(), xl, xr * d));
        let t1 = dyn_view(&t1, &[xl, m, xr, d]);
        let t1 = matrix(t1.view().permuted_axes(IxDyn(&[0, 2, 1, 3])), xl * xr, m * d);
        let t2 = t1.dot(&self.wl); // [(a', b), (nu, s')]
        let t2 = dyn_view(&t2, &[xl, xr, m, d]);
        let t2 = matrix(t2.view().permuted_axes(IxDyn(&[0, 3, 2, 1])), xl * d, m * xr);
        // R as [(nu, b), b']
        let rm = matrix(self.r.view().permuted_axes([1, 2, 0]), m * xr, xr);
        let out = t2.dot(&rm); // [(a', s'), b']
        let out = Array3::from_shape_vec((xl, d, xr), out.into_raw_vec_and_offset().0).expect("shape");
        SiteTensor::new(out.permuted_axes([0, 2, 1]).as_standard_layout().into_owned())
    }

    /// Real part of the diagonal, in site-vector order.
    pub fn diagonal(&self) -> Array1<f64> {
        let (xl, xr, d) = self.shape;
        let m = self.w.dim().0;
        let ld = Array2::from_shape_fn((xl, m), |(a, mu)| self.l[[a, mu, a]]);
        let rd = Array2::from_shape_fn((xr, m), |(b, nu)| self.r[[b, nu, b]]);
        let mut out = Array3::<f64>::zeros((xl, xr, d));
        for s in 0..d {
            let wd = Array2::from_shape_fn((m, m), |(mu, nu)| self.w[[mu, nu, s, s]]);
            let v = ld.dot(&wd).dot(&rd.t()); // [a, b]
            out.index_axis_mut(Axis(2), s).assign(&v.mapv(|z| z.re));
        }
        Array1::from(out.into_raw_vec_and_offset().0)
    }

    pub fn dense(&self) -> Array2<C64> {
        let n = self.dim();
        let mut h = Array2::zeros((n, n));
        for j in 0..n {
            let mut e = Array1::zeros(n);
            e[j] = ONE;
            h.column_mut(j).assign(&self.apply(&e));
        }
        h
    }
}

impl LinearOperator for EffectiveOperator {
    fn dim(&self) -> usize {
        self.shape.0 * self.shape.1 * self.shape.2
    }

    fn apply(&self, x: &Array1<C64>) -> Array1<C64> {
        let a = SiteTensor::from_vector(x, self.shape).expect("vector length");
        self.apply_site(&a).to_vector()
    }

    fn trace(&self) -> Option<f64> {
        let tl = partial_trace(&self.l);
        let tr = partial_trace(&self.r);
        let m = tl.len();
        let d = self.shape.2;
        let mut t = C64::new(0.0, 0.0);
        for mu in 0..m {
            for nu in 0..m {
                let tw: C64 = (0..d).map(|s| self.w[[mu, nu, s, s]]).sum();
                t += tl[mu] * tw * tr[nu];
            }
        }
        Some(t.re)
    }
}
