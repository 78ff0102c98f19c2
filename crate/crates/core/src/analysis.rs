//! Post-convergence observables of a uniform state: transfer matrix and
//! period, local expectations, two-point correlations, entanglement entropy,
//! Luttinger fits and the choice among degenerate ground states.
//!
//! States are held in the mixed gauge `... Q_L Q_L C Q_R Q_R ...` with the
//! center matrix `C` sitting in front of site 0.

use ndarray::{Array1, Array2};
use ndarray_linalg::Solve;

use crate::error::{ImpsError, Result};
use crate::mpo::{kron, Mpo};
use crate::tensor::{decompose_site, eig, eigh, frobenius, identity, inner, svd, Side, SiteTensor, C64, ZERO};

/// Default tolerance of `|1 - |lambda||` for unimodular eigenvalues.
pub const PERIOD_TOL: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct UniformMps {
    pub ql: SiteTensor,
    pub qr: SiteTensor,
    pub center: Array2<C64>,
}

impl UniformMps {
    /// From a center tensor `A = Q_L lambda_L = lambda_R Q_R`; the center
    /// matrix is `lambda_R`, so site 0 is the site of `A`.
    pub fn from_center(a: &SiteTensor) -> Result<Self> {
        let a = a.normalized()?;
        let (ql, _) = decompose_site(&a, Side::Left)?;
        let (qr, lr) = decompose_site(&a, Side::Right)?;
        Ok(UniformMps { ql, qr, center: lr })
    }

    pub fn bond_dim(&self) -> usize {
        self.center.nrows()
    }

    pub fn phys_dim(&self) -> usize {
        self.qr.d()
    }

    /// Same isometries with another center matrix (normalized).
    pub fn with_center(&self, c: Array2<C64>) -> Result<Self> {
        let n = frobenius(&c);
        if n == 0.0 {
            return Err(ImpsError::Degenerate("zero center matrix".into()));
        }
        Ok(UniformMps { ql: self.ql.clone(), qr: self.qr.clone(), center: c.mapv(|z| z / n) })
    }

    /// `lambda_L` of `A = Q_L lambda_L` where `A = C Q_R`.
    pub fn lambda_left(&self) -> Result<Array2<C64>> {
        let a = self.qr.times_left(&self.center);
        Ok(decompose_site(&a, Side::Left)?.1)
    }

    /// Left environment `C^dagger C` in front of site 0.
    fn start(&self) -> Array2<C64> {
        crate::tensor::adjoint(&self.center).dot(&self.center)
    }
}

fn slices(q: &SiteTensor) -> Vec<Array2<C64>> {
    (0..q.d()).map(|s| q.slice_s(s)).collect()
}

/// `sum_{s s'} O[s,s'] Q_s^dagger l Q_{s'}`; plain transfer without `op`.
fn step_right(qs: &[Array2<C64>], l: &Array2<C64>, op: Option<&Array2<C64>>) -> Array2<C64> {
    let d = qs.len();
    let chi = qs[0].ncols();
    let mut out = Array2::<C64>::zeros((chi, chi));
    match op {
        None => {
            for q in qs {
                out += &crate::tensor::adjoint(q).dot(&l.dot(q));
            }
        }
        Some(o) => {
            let lq: Vec<Array2<C64>> = qs.iter().map(|q| l.dot(q)).collect();
            for s in 0..d {
                let qa = crate::tensor::adjoint(&qs[s]);
                let mut acc = Array2::<C64>::zeros(lq[0].dim());
                for (sp, m) in lq.iter().enumerate() {
                    let w = o[[s, sp]];
                    if w != ZERO {
                        acc.scaled_add(w, m);
                    }
                }
                out += &qa.dot(&acc);
            }
        }
    }
    out
}

fn trace(m: &Array2<C64>) -> C64 {
    m.diag().sum()
}

fn check_op(op: &Array2<C64>, d: usize) -> Result<()> {
    if op.dim() != (d, d) {
        return Err(ImpsError::Dimension(format!("operator {:?} on sites of dimension {}", op.dim(), d)));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TransferSide {
    Left,
    Right,
}

/// `T[(a a'), (b b')] = sum_s Q_s[a,b] conj(Q_s[a',b'])`.
#[derive(Clone, Debug)]
pub struct TransferMatrix {
    pub data: Array2<C64>,
    pub side: TransferSide,
}

impl TransferMatrix {
    /// Eigenvalues sorted by decreasing modulus.
    pub fn spectrum(&self) -> Result<Vec<C64>> {
        let (w, _) = eig(&self.data)?;
        let mut w = w.to_vec();
        w.sort_by(|a, b| b.norm().total_cmp(&a.norm()));
        Ok(w)
    }
}

pub fn transfer_matrix(q: &SiteTensor, side: TransferSide) -> TransferMatrix {
    let chi = q.chi_l();
    let mut data = Array2::<C64>::zeros((chi * chi, q.chi_r() * q.chi_r()));
    for qs in slices(q) {
        data += &kron(&qs, &qs.mapv(|z| z.conj()));
    }
    TransferMatrix { data, side }
}

/// Number of eigenvalues with `|1 - |lambda|| < tol`.
pub fn detect_periodicity(t: &TransferMatrix, tol: f64) -> Result<usize> {
    let q = t.spectrum()?.iter().filter(|z| (1.0 - z.norm()).abs() < tol).count();
    if q == 0 {
        return Err(ImpsError::Numerical("transfer matrix has no unimodular eigenvalue".into()));
    }
    Ok(q)
}

/// Period of the state from the left transfer matrix.
pub fn period(mps: &UniformMps, tol: f64) -> Result<usize> {
    detect_periodicity(&transfer_matrix(&mps.ql, TransferSide::Left), tol)
}

/// Right fixed point `rho = sum_s Q_s rho Q_s^dagger` of a left isometry,
/// Hermitian with unit trace.
pub fn right_fixed_point(ql: &SiteTensor) -> Result<Array2<C64>> {
    let chi = ql.chi_l();
    let n = chi * chi;
    let t = transfer_matrix(ql, TransferSide::Left).data;
    // (I - T + v w^T) x = v with w = vec(I) the left eigenvector
    let v = identity(chi).mapv(|z| z / chi as f64).into_shape_with_order(n)?;
    let mut m = -t;
    for i in 0..n {
        m[[i, i]] += 1.0;
    }
    for a in 0..chi {
        let col = a * chi + a;
        for i in 0..n {
            m[[i, col]] += v[i];
        }
    }
    let x = m.solve(&v)?;
    let x = x.into_shape_with_order((chi, chi))?;
    let h = crate::tensor::hermitian_part(&x);
    let tr = trace(&h).re;
    if !(tr.abs() > 0.0) || !tr.is_finite() {
        return Err(ImpsError::Numerical("right fixed point has vanishing trace".into()));
    }
    Ok(h.mapv(|z| z / tr))
}

/// Energy per site of the uniform state generated by `ql` under a
/// lower-triangular MPO, from the fixed-point recursion of the left
/// environment slots.
pub fn energy_per_site(ql: &SiteTensor, mpo: &Mpo) -> Result<f64> {
    if ql.chi_l() != ql.chi_r() {
        return Err(ImpsError::Dimension("energy needs a square isometry".into()));
    }
    let d = ql.d();
    if mpo.phys_dim() != d {
        return Err(ImpsError::Dimension("MPO and state disagree on the site dimension".into()));
    }
    let chi = ql.chi_l();
    let m = mpo.bond_dim();
    let last = m - 1;
    let rho = right_fixed_point(ql)?;
    let qs = slices(ql);
    let mut l: Vec<Option<Array2<C64>>> = vec![None; m];
    l[last] = Some(identity(chi));
    for mu in (0..last).rev() {
        let mut y = Array2::<C64>::zeros((chi, chi));
        for nu in mu + 1..m {
            let blk = mpo.block(nu, mu);
            if blk.iter().all(|z| *z == ZERO) {
                continue;
            }
            if let Some(ln) = &l[nu] {
                y += &step_right(&qs, ln, Some(&blk));
            }
        }
        let diag = mpo.block(mu, mu);
        if diag.iter().all(|z| *z == ZERO) {
            l[mu] = Some(y);
            continue;
        }
        if mu == 0 {
            if frobenius(&(&diag - &identity(d))) > 1e-14 {
                return Err(ImpsError::Precondition("slot 0 must carry the identity".into()));
            }
            return Ok(trace(&y.dot(&rho)).re);
        }
        // (I - M) x = y with M: X -> sum D[s',s] Q_{s'}^dagger X Q_s
        let n = chi * chi;
        let mut mat = Array2::<C64>::zeros((n, n));
        for sp in 0..d {
            for s in 0..d {
                let w = diag[[sp, s]];
                if w != ZERO {
                    let k = kron(&crate::tensor::adjoint(&qs[sp]), &qs[s].t().to_owned());
                    mat.scaled_add(-w, &k);
                }
            }
        }
        for i in 0..n {
            mat[[i, i]] += 1.0;
        }
        let x = mat.solve(&y.into_shape_with_order(n)?)?;
        l[mu] = Some(x.into_shape_with_order((chi, chi))?);
    }
    Err(ImpsError::Precondition("MPO has no identity slot 0".into()))
}

/// `<O>` on site 0.
pub fn expectation_local(mps: &UniformMps, op: &Array2<C64>) -> Result<C64> {
    check_op(op, mps.phys_dim())?;
    let norm = trace(&mps.start()).re;
    let qs = slices(&mps.qr);
    Ok(trace(&step_right(&qs, &mps.start(), Some(op))) / norm)
}

/// Real parts of `<O_j>` for `j = 0..len`.
pub fn density_profile(mps: &UniformMps, op: &Array2<C64>, len: usize) -> Result<Vec<f64>> {
    check_op(op, mps.phys_dim())?;
    let qs = slices(&mps.qr);
    let mut l = mps.start();
    let norm = trace(&l).re;
    let mut out = Vec::with_capacity(len);
    for _ in 0..len {
        out.push(trace(&step_right(&qs, &l, Some(op))).re / norm);
        l = step_right(&qs, &l, None);
    }
    Ok(out)
}

/// Average of `<O>` over one period.
pub fn average_density(mps: &UniformMps, op: &Array2<C64>, q: usize) -> Result<f64> {
    let p = density_profile(mps, op, q.max(1))?;
    Ok(p.iter().sum::<f64>() / p.len() as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationSeries {
    pub r: Vec<usize>,
    pub values: Vec<f64>,
    pub connected: bool,
    pub names: (String, String),
    /// Largest imaginary part discarded from the values.
    pub max_imag: f64,
}

/// `<O1_0 O2_r>` for `r = 1..=r_max` (real parts), optionally minus
/// `<O1_0><O2_r>`.
pub fn correlation(
    mps: &UniformMps,
    op1: (&str, &Array2<C64>),
    op2: (&str, &Array2<C64>),
    r_max: usize,
    connected: bool,
) -> Result<CorrelationSeries> {
    let d = mps.phys_dim();
    check_op(op1.1, d)?;
    check_op(op2.1, d)?;
    let qs = slices(&mps.qr);
    let l0 = mps.start();
    let norm = trace(&l0).re;
    let e1 = trace(&step_right(&qs, &l0, Some(op1.1))) / norm;
    let mut x = step_right(&qs, &l0, Some(op1.1));
    let mut l = step_right(&qs, &l0, None);
    let mut values = Vec::with_capacity(r_max);
    let mut max_imag: f64 = 0.0;
    for _ in 1..=r_max {
        let mut v = trace(&step_right(&qs, &x, Some(op2.1))) / norm;
        if connected {
            v -= e1 * trace(&step_right(&qs, &l, Some(op2.1))) / norm;
        }
        if !v.re.is_finite() {
            return Err(ImpsError::NonFinite("correlation value".into()));
        }
        max_imag = max_imag.max(v.im.abs());
        values.push(v.re);
        x = step_right(&qs, &x, None);
        l = step_right(&qs, &l, None);
    }
    Ok(CorrelationSeries {
        r: (1..=r_max).collect(),
        values,
        connected,
        names: (op1.0.to_string(), op2.0.to_string()),
        max_imag,
    })
}

/// `S = -sum p log2 p` with `p` the normalized squared singular values of
/// `lambda`.
pub fn entanglement_entropy(lambda: &Array2<C64>) -> Result<f64> {
    let f = svd(lambda)?;
    let total: f64 = f.d.iter().map(|v| v * v).sum();
    if !(total > 0.0) {
        return Err(ImpsError::Degenerate("entropy of a zero matrix".into()));
    }
    Ok(f
        .d
        .iter()
        .map(|v| v * v / total)
        .filter(|&p| p > 0.0)
        .map(|p| -p * p.log2())
        .sum::<f64>()
        .max(0.0))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LuttingerFit {
    pub k_nn: f64,
    pub const1: f64,
    /// RMS of the density fit residuals.
    pub residual_nn: f64,
    pub k_cc: f64,
    pub const2: f64,
    /// RMS of the log residuals of the hopping fit.
    pub residual_cc: f64,
}

fn window_points(series: &CorrelationSeries, window: (usize, usize)) -> Vec<(f64, f64)> {
    series
        .r
        .iter()
        .zip(&series.values)
        .filter(|(r, _)| **r >= window.0 && **r <= window.1)
        .map(|(&r, &v)| (r as f64, v))
        .collect()
}

/// Amplitude and squared residual of `y ~ c f` for fixed `f`.
fn linear_amplitude(pts: &[(f64, f64)], f: impl Fn(f64) -> f64) -> Option<(f64, f64)> {
    let (mut sff, mut sfy) = (0.0, 0.0);
    for &(r, y) in pts {
        let v = f(r);
        sff += v * v;
        sfy += v * y;
    }
    if sff < 1e-300 {
        return None;
    }
    let c = sfy / sff;
    let res = pts.iter().map(|&(r, y)| (y - c * f(r)).powi(2)).sum();
    Some((c, res))
}

/// Fit `<n_0 n_r> = rho0^2 + const1 cos(2 pi rho0 r) r^(-2K)` and
/// `<c+_0 c_r> = const2 r^(-1/(2K))` on `window` (inclusive).
pub fn fit_luttinger(
    nn: &CorrelationSeries,
    cc: &CorrelationSeries,
    rho0: f64,
    window: (usize, usize),
) -> Result<LuttingerFit> {
    let base = if nn.connected { 0.0 } else { rho0 * rho0 };
    let pts: Vec<(f64, f64)> = window_points(nn, window).into_iter().map(|(r, y)| (r, y - base)).collect();
    if pts.len() < 3 {
        return Err(ImpsError::Fit(format!("density window {:?} holds {} points", window, pts.len())));
    }
    let shape = |k: f64| move |r: f64| (2.0 * std::f64::consts::PI * rho0 * r).cos() * r.powf(-2.0 * k);
    let cost = |lk: f64| linear_amplitude(&pts, shape(lk.exp())).map_or(f64::INFINITY, |(_, res)| res);
    // coarse scan in log K, then golden section around the best point
    let (lo, hi, n) = (0.01f64.ln(), 50f64.ln(), 400);
    let grid: Vec<f64> = (0..=n).map(|i| lo + (hi - lo) * i as f64 / n as f64).collect();
    let best = (0..=n).min_by(|&i, &j| cost(grid[i]).total_cmp(&cost(grid[j]))).unwrap();
    if !cost(grid[best]).is_finite() {
        return Err(ImpsError::Fit("density oscillation vanishes on the window".into()));
    }
    let (mut a, mut b) = (grid[best.saturating_sub(1)], grid[(best + 1).min(n)]);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = b - g * (b - a);
    let mut x2 = a + g * (b - a);
    let (mut f1, mut f2) = (cost(x1), cost(x2));
    for _ in 0..200 {
        if (b - a).abs() < 1e-14 {
            break;
        }
        if f1 < f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - g * (b - a);
            f1 = cost(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + g * (b - a);
            f2 = cost(x2);
        }
    }
    let k_nn = (0.5 * (a + b)).exp();
    let (const1, res) = linear_amplitude(&pts, shape(k_nn)).expect("checked above");
    let residual_nn = (res / pts.len() as f64).sqrt();

    let pts = window_points(cc, window);
    if pts.len() < 2 {
        return Err(ImpsError::Fit(format!("hopping window {:?} holds {} points", window, pts.len())));
    }
    if pts.iter().any(|&(_, y)| !(y > 0.0)) {
        return Err(ImpsError::Fit("hopping correlation must be positive for a power law".into()));
    }
    let xs: Vec<f64> = pts.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = pts.iter().map(|p| p.1.ln()).collect();
    let np = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / np;
    let my = ys.iter().sum::<f64>() / np;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    if !(slope < 0.0) {
        return Err(ImpsError::Fit(format!("hopping correlation does not decay (slope {:.3e})", slope)));
    }
    let icpt = my - slope * mx;
    let residual_cc =
        (xs.iter().zip(&ys).map(|(x, y)| (y - icpt - slope * x).powi(2)).sum::<f64>() / np).sqrt();
    Ok(LuttingerFit { k_nn, const1, residual_nn, k_cc: -1.0 / (2.0 * slope), const2: icpt.exp(), residual_cc })
}

#[derive(Clone, Debug)]
pub struct GroundStateSelection {
    /// Normalized replacement for the center matrix.
    pub gamma: Array2<C64>,
    /// Achieved `<O_0>`.
    pub value: f64,
    /// Dimension of the space of equivalent center matrices.
    pub dimension: usize,
    /// Several center matrices reach the optimum.
    pub degenerate: bool,
}

/// Center matrix maximizing `<O_0>` among those that keep the state a
/// ground state: the span of unimodular eigenvectors of
/// `X -> sum_s Q_L,s^dagger X Q_R,s`, which contains every shifted copy of
/// `lambda`.
pub fn select_ground_state(
    ql: &SiteTensor,
    qr: &SiteTensor,
    lambda: &Array2<C64>,
    op: &Array2<C64>,
    tol: f64,
) -> Result<GroundStateSelection> {
    let chi = lambda.nrows();
    let d = qr.d();
    check_op(op, d)?;
    if ql.shape() != (chi, chi, d) || qr.shape() != (chi, chi, d) {
        return Err(ImpsError::Dimension("isometries and lambda disagree".into()));
    }
    let n = chi * chi;
    let qls = slices(ql);
    let qrs = slices(qr);
    let mut f = Array2::<C64>::zeros((n, n));
    for s in 0..d {
        f += &kron(&crate::tensor::adjoint(&qls[s]), &qrs[s].t().to_owned());
    }
    let (w, v) = eig(&f)?;
    let mut basis: Vec<Array1<C64>> = Vec::new();
    let lam = lambda.iter().copied().collect::<Array1<C64>>();
    let mut cands: Vec<Array1<C64>> =
        (0..w.len()).filter(|&i| (1.0 - w[i].norm()).abs() < tol).map(|i| v.column(i).to_owned()).collect();
    if cands.is_empty() {
        cands.push(lam.clone());
    }
    for mut c in cands {
        for _ in 0..2 {
            for b in &basis {
                let p = inner(b, &c);
                c.scaled_add(-p, b);
            }
        }
        let nc = frobenius(&c);
        if nc > 1e-6 * frobenius(&lam).max(1e-300) && basis.len() < n {
            basis.push(c.mapv(|z| z / nc));
        }
    }
    let mats: Vec<Array2<C64>> =
        basis.iter().map(|b| Array2::from_shape_vec((chi, chi), b.to_vec()).expect("square")).collect();
    // <Psi(g_i)| O_0 |Psi(g_j)> = sum O[s,s'] tr((g_i Q_s)^dagger g_j Q_s')
    let gq: Vec<Vec<Array2<C64>>> = mats.iter().map(|g| qrs.iter().map(|q| g.dot(q)).collect()).collect();
    let k = mats.len();
    let mut form = Array2::<C64>::zeros((k, k));
    for i in 0..k {
        for j in 0..k {
            let mut acc = ZERO;
            for s in 0..d {
                for sp in 0..d {
                    let o = op[[s, sp]];
                    if o != ZERO {
                        acc += o * inner(&gq[i][s], &gq[j][sp]);
                    }
                }
            }
            form[[i, j]] = acc;
        }
    }
    let (vals, vecs) = eigh(&crate::tensor::hermitian_part(&form))?;
    let top = vals[k - 1];
    let degenerate = k > 1 && top - vals[k - 2] < tol * top.abs().max(1.0);
    let mut gamma = Array2::<C64>::zeros((chi, chi));
    for (i, m) in mats.iter().enumerate() {
        gamma.scaled_add(vecs[[i, k - 1]], m);
    }
    // fix the global phase so the trace is real and non-negative
    let tr = trace(&gamma);
    if tr.norm() > 1e-14 {
        let ph = tr.conj() / tr.norm();
        gamma.mapv_inplace(|z| z * ph);
    }
    Ok(GroundStateSelection { gamma, value: top, dimension: k, degenerate })
}
