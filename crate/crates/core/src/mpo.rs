//! Matrix product operators for translation-invariant chains.
//!
//! Slot convention (lower triangular): slot 0 carries the finished Hamiltonian,
//! the last slot carries the identity "nothing placed yet". The bulk tensor is
//! `W[mu_l, mu_r, s', s]`; a local term lives at `W[last, 0]`. A left environment
//! starts in the last slot, a right environment in slot 0.

use std::fmt::Write as _;

use ndarray::{s, Array1, Array2, Array4};
use ndarray_linalg::{JobSvd, LeastSquaresSvd, SVDDC};

use crate::error::{ImpsError, Result};
use crate::tensor::{c, identity, C64, ONE, ZERO};

#[derive(Clone, Debug, PartialEq)]
pub struct Mpo {
    bulk: Array4<C64>,
    left_boundary: Vec<Array2<C64>>,
    right_boundary: Vec<Array2<C64>>,
    local_slot: (usize, usize),
}

impl Mpo {
    /// Wrap a bulk tensor `W[mu_l, mu_r, s', s]` obeying the slot convention.
    pub fn from_bulk(bulk: Array4<C64>) -> Result<Self> {
        let sh = bulk.shape();
        if sh[0] != sh[1] || sh[2] != sh[3] || sh[0] < 2 {
            return Err(ImpsError::Dimension(format!("mpo bulk shape {:?}", sh)));
        }
        let m = sh[0];
        let mut mpo = Mpo {
            bulk: bulk.as_standard_layout().into_owned(),
            left_boundary: Vec::new(),
            right_boundary: Vec::new(),
            local_slot: (m - 1, 0),
        };
        mpo.refresh_boundaries();
        Ok(mpo)
    }

    fn refresh_boundaries(&mut self) {
        let m = self.bond_dim();
        self.left_boundary = (0..m).map(|mu| self.block(m - 1, mu)).collect();
        self.right_boundary = (0..m).map(|mu| self.block(mu, 0)).collect();
    }

    pub fn bulk(&self) -> &Array4<C64> {
        &self.bulk
    }

    pub fn bond_dim(&self) -> usize {
        self.bulk.shape()[0]
    }

    pub fn phys_dim(&self) -> usize {
        self.bulk.shape()[2]
    }

    /// `H_[L]`: the row of operators the leftmost site carries.
    pub fn left_boundary(&self) -> &[Array2<C64>] {
        &self.left_boundary
    }

    /// `H_[R]`: the column of operators the rightmost site carries.
    pub fn right_boundary(&self) -> &[Array2<C64>] {
        &self.right_boundary
    }

    pub fn local_slot(&self) -> (usize, usize) {
        self.local_slot
    }

    pub fn block(&self, mu_l: usize, mu_r: usize) -> Array2<C64> {
        self.bulk.slice(s![mu_l, mu_r, .., ..]).to_owned()
    }

    pub fn local_term(&self) -> Array2<C64> {
        self.block(self.local_slot.0, self.local_slot.1)
    }

    /// Returns a copy with `op` added to the local slot.
    pub fn add_local_term(&self, op: &Array2<C64>) -> Result<Mpo> {
        let d = self.phys_dim();
        if op.dim() != (d, d) {
            return Err(ImpsError::Dimension(format!(
                "local term is {:?}, physical dimension is {}",
                op.dim(),
                d
            )));
        }
        let mut out = self.clone();
        let (a, b) = self.local_slot;
        let mut blk = out.bulk.slice_mut(s![a, b, .., ..]);
        blk += op;
        out.refresh_boundaries();
        Ok(out)
    }

    /// Dense operator on `n` sites (site 1 is the most significant index).
    pub fn to_dense(&self, n: usize) -> Array2<C64> {
        let m = self.bond_dim();
        let mut slots: Vec<Array2<C64>> = vec![Array2::zeros((1, 1)); m];
        slots[m - 1][[0, 0]] = ONE;
        for _ in 0..n {
            slots = self.extend_right(&slots);
        }
        slots.swap_remove(0)
    }

    /// One more site on the right of an open-ended left block.
    pub fn extend_right(&self, slots: &[Array2<C64>]) -> Vec<Array2<C64>> {
        let m = self.bond_dim();
        let dim = slots[0].nrows() * self.phys_dim();
        let mut out = vec![Array2::zeros((dim, dim)); m];
        for (mu, x) in slots.iter().enumerate() {
            if x.iter().all(|z| *z == ZERO) {
                continue;
            }
            for (nu, o) in out.iter_mut().enumerate() {
                let w = self.block(mu, nu);
                if w.iter().all(|z| *z == ZERO) {
                    continue;
                }
                *o += &kron(x, &w);
            }
        }
        out
    }

    /// One more site on the left of an open-ended right block, with the new
    /// site as the least significant index (mirrored ordering).
    pub fn extend_left_mirrored(&self, slots: &[Array2<C64>]) -> Vec<Array2<C64>> {
        let m = self.bond_dim();
        let dim = slots[0].nrows() * self.phys_dim();
        let mut out = vec![Array2::zeros((dim, dim)); m];
        for (nu, y) in slots.iter().enumerate() {
            if y.iter().all(|z| *z == ZERO) {
                continue;
            }
            for (mu, o) in out.iter_mut().enumerate() {
                let w = self.block(mu, nu);
                if w.iter().all(|z| *z == ZERO) {
                    continue;
                }
                *o += &kron(y, &w);
            }
        }
        out
    }

    /// Open left block of `k` sites, natural order.
    pub fn left_block(&self, k: usize) -> Vec<Array2<C64>> {
        let m = self.bond_dim();
        let mut slots: Vec<Array2<C64>> = vec![Array2::zeros((1, 1)); m];
        slots[m - 1][[0, 0]] = ONE;
        for _ in 0..k {
            slots = self.extend_right(&slots);
        }
        slots
    }

    /// Open right block of `k` sites in mirrored order (the site farthest from
    /// the cut is the most significant index).
    pub fn right_block_mirrored(&self, k: usize) -> Vec<Array2<C64>> {
        let m = self.bond_dim();
        let mut slots: Vec<Array2<C64>> = vec![Array2::zeros((1, 1)); m];
        slots[0][[0, 0]] = ONE;
        for _ in 0..k {
            slots = self.extend_left_mirrored(&slots);
        }
        slots
    }

    /// Open right block of `k` sites in natural order.
    pub fn right_block(&self, k: usize) -> Vec<Array2<C64>> {
        let m = self.bond_dim();
        let mut slots: Vec<Array2<C64>> = vec![Array2::zeros((1, 1)); m];
        slots[0][[0, 0]] = ONE;
        for _ in 0..k {
            let dim = slots[0].nrows() * self.phys_dim();
            let mut out = vec![Array2::zeros((dim, dim)); m];
            for (nu, y) in slots.iter().enumerate() {
                for (mu, o) in out.iter_mut().enumerate() {
                    let w = self.block(mu, nu);
                    if w.iter().all(|z| *z == ZERO) {
                        continue;
                    }
                    *o += &kron(&w, y);
                }
            }
            slots = out;
        }
        slots
    }
}

pub fn kron(a: &Array2<C64>, b: &Array2<C64>) -> Array2<C64> {
    let (ar, ac) = a.dim();
    let (br, bc) = b.dim();
    let mut out = Array2::zeros((ar * br, ac * bc));
    for i in 0..ar {
        for j in 0..ac {
            let x = a[[i, j]];
            if x == ZERO {
                continue;
            }
            let mut blk = out.slice_mut(s![i * br..(i + 1) * br, j * bc..(j + 1) * bc]);
            blk.zip_mut_with(b, |o, y| *o = x * y);
        }
    }
    out
}

pub mod ops {
    //! Single-site operators. Pauli matrices use the basis (up, down);
    //! boson operators use occupations 0..=n_max.
    use super::*;

    pub fn sx() -> Array2<C64> {
        Array2::from_shape_vec((2, 2), vec![ZERO, ONE, ONE, ZERO]).unwrap()
    }
    pub fn sy() -> Array2<C64> {
        Array2::from_shape_vec((2, 2), vec![ZERO, C64::new(0.0, -1.0), C64::new(0.0, 1.0), ZERO]).unwrap()
    }
    pub fn sz() -> Array2<C64> {
        Array2::from_shape_vec((2, 2), vec![ONE, ZERO, ZERO, c(-1.0)]).unwrap()
    }
    pub fn id(d: usize) -> Array2<C64> {
        identity(d)
    }
    /// Annihilator truncated at `n_max` bosons.
    pub fn annihilate(n_max: usize) -> Array2<C64> {
        let d = n_max + 1;
        let mut a = Array2::zeros((d, d));
        for n in 1..d {
            a[[n - 1, n]] = c((n as f64).sqrt());
        }
        a
    }
    pub fn create(n_max: usize) -> Array2<C64> {
        annihilate(n_max).t().to_owned()
    }
    pub fn number(n_max: usize) -> Array2<C64> {
        Array2::from_diag(&Array1::from_iter((0..=n_max).map(|n| c(n as f64))))
    }
}

fn put(w: &mut Array4<C64>, a: usize, b: usize, op: &Array2<C64>) {
    w.slice_mut(s![a, b, .., ..]).assign(op);
}

/// `H = -J sum sz_i sz_{i+1} - h sum sx_i`
pub fn build_ising_mpo(j: f64, h: f64) -> Mpo {
    let mut w = Array4::zeros((3, 3, 2, 2));
    put(&mut w, 0, 0, &ops::id(2));
    put(&mut w, 1, 0, &ops::sz().mapv(|z| z * -j));
    put(&mut w, 2, 0, &ops::sx().mapv(|z| z * -h));
    put(&mut w, 2, 1, &ops::sz());
    put(&mut w, 2, 2, &ops::id(2));
    Mpo::from_bulk(w).expect("valid bulk")
}

/// `H = sum Jx sx_i sx_{i+1} + Jy sy_i sy_{i+1} + Jz sz_i sz_{i+1}` (Pauli matrices).
pub fn build_heisenberg_mpo(jx: f64, jy: f64, jz: f64) -> Mpo {
    let mut w = Array4::zeros((5, 5, 2, 2));
    put(&mut w, 0, 0, &ops::id(2));
    put(&mut w, 1, 0, &ops::sx().mapv(|z| z * jx));
    put(&mut w, 2, 0, &ops::sy().mapv(|z| z * jy));
    put(&mut w, 3, 0, &ops::sz().mapv(|z| z * jz));
    put(&mut w, 4, 1, &ops::sx());
    put(&mut w, 4, 2, &ops::sy());
    put(&mut w, 4, 3, &ops::sz());
    put(&mut w, 4, 4, &ops::id(2));
    Mpo::from_bulk(w).expect("valid bulk")
}

/// `H = J sum_{i>j} lambda^(i-j-1) sz_j sz_i`
pub fn build_exp_decay_mpo(j: f64, lambda: f64) -> Result<Mpo> {
    if !(lambda.abs() < 1.0) {
        return Err(ImpsError::Precondition(format!("|lambda| = {} is not decaying", lambda.abs())));
    }
    let mut w = Array4::zeros((3, 3, 2, 2));
    put(&mut w, 0, 0, &ops::id(2));
    put(&mut w, 1, 0, &ops::sz().mapv(|z| z * j));
    put(&mut w, 1, 1, &ops::id(2).mapv(|z| z * lambda));
    put(&mut w, 2, 1, &ops::sz());
    put(&mut w, 2, 2, &ops::id(2));
    Mpo::from_bulk(w)
}

/// Bose-Hubbard chain with a long-range density-density tail:
///
/// `H = -t sum (b+_i b_{i+1} + h.c.) + U/2 sum n(n-1) - mu sum n + V sum_{i<j} K(j-i) n_i n_j`
///
/// with `K(r) = sum_l a_l lambda_l^(r-1)` taken from `fit`.
/// Slots: 0 finished H, 1 pending `b+`, 2 pending `b`, 3.. density channels, last identity.
pub fn build_dipolar_bose_hubbard_mpo(v: f64, u: f64, mu: f64, t: f64, n_max: usize, fit: &ExpSumFit) -> Result<Mpo> {
    if n_max < 1 {
        return Err(ImpsError::Precondition("n_max must be at least 1".into()));
    }
    fit.validate()?;
    let d = n_max + 1;
    let ne = fit.n_exp();
    let m = ne + 4;
    let last = m - 1;
    let b = ops::annihilate(n_max);
    let bd = ops::create(n_max);
    let n = ops::number(n_max);
    let local = n.dot(&(&n - &ops::id(d))).mapv(|z| z * (u / 2.0)) - n.mapv(|z| z * mu);

    let mut w = Array4::zeros((m, m, d, d));
    put(&mut w, 0, 0, &ops::id(d));
    put(&mut w, 1, 0, &b.mapv(|z| z * -t));
    put(&mut w, 2, 0, &bd.mapv(|z| z * -t));
    put(&mut w, last, 1, &bd);
    put(&mut w, last, 2, &b);
    for l in 0..ne {
        let ch = 3 + l;
        put(&mut w, ch, 0, &n.mapv(|z| z * (v * fit.coefficients[l])));
        put(&mut w, ch, ch, &ops::id(d).mapv(|z| z * fit.rates[l]));
        put(&mut w, last, ch, &n);
    }
    put(&mut w, last, 0, &local);
    put(&mut w, last, last, &ops::id(d));
    Mpo::from_bulk(w)
}

/// Exponential-sum approximation `K(r) = sum_i a_i lambda_i^(r-1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpSumFit {
    pub coefficients: Vec<f64>,
    pub rates: Vec<f64>,
    pub max_rel_error: f64,
    pub r_max: usize,
}

impl ExpSumFit {
    pub fn n_exp(&self) -> usize {
        self.rates.len()
    }

    pub fn kernel(&self, r: usize) -> f64 {
        let p = (r as i32) - 1;
        self.coefficients.iter().zip(&self.rates).map(|(a, l)| a * l.powi(p)).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.coefficients.len() != self.rates.len() || self.rates.is_empty() {
            return Err(ImpsError::Precondition("exp-sum fit needs matching, non-empty a and lambda".into()));
        }
        if let Some(l) = self.rates.iter().find(|l| !(**l > 0.0 && **l < 1.0)) {
            return Err(ImpsError::Precondition(format!("rate {} outside (0,1)", l)));
        }
        Ok(())
    }

    /// Plain-text form: one `a lambda` pair per line, 17 significant digits.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# n_exp {} r_max {} max_rel_error {:.16e}", self.n_exp(), self.r_max, self.max_rel_error);
        for (a, l) in self.coefficients.iter().zip(&self.rates) {
            let _ = writeln!(s, "{:.16e} {:.16e}", a, l);
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut fit = ExpSumFit { coefficients: vec![], rates: vec![], max_rel_error: f64::NAN, r_max: 0 };
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                let tok: Vec<&str> = rest.split_whitespace().collect();
                for w in tok.windows(2) {
                    match w[0] {
                        "r_max" => fit.r_max = w[1].parse().unwrap_or(0),
                        "max_rel_error" => fit.max_rel_error = w[1].parse().unwrap_or(f64::NAN),
                        _ => {}
                    }
                }
                continue;
            }
            let v: Vec<f64> = line
                .split_whitespace()
                .map(|x| x.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| ImpsError::Format(format!("line {}: {}", ln + 1, e)))?;
            if v.len() != 2 {
                return Err(ImpsError::Format(format!("line {}: expected `a lambda`", ln + 1)));
            }
            fit.coefficients.push(v[0]);
            fit.rates.push(v[1]);
        }
        fit.validate()?;
        Ok(fit)
    }
}

#[derive(Clone, Debug)]
pub struct FitOptions {
    /// Fits whose achieved maximum relative error exceeds this are rejected.
    pub error_ceiling: f64,
    pub lm_iterations: usize,
    pub minimax_rounds: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { error_ceiling: 1e-2, lm_iterations: 1000, minimax_rounds: 40 }
    }
}

/// Fit `r^-k` on `r = 1..=r_max` with `n_exp` decaying exponentials.
pub fn fit_power_law(k: f64, n_exp: usize, r_max: usize) -> Result<ExpSumFit> {
    fit_power_law_with(k, n_exp, r_max, &FitOptions::default())
}

pub fn fit_power_law_with(k: f64, n_exp: usize, r_max: usize, opts: &FitOptions) -> Result<ExpSumFit> {
    if !(k > 0.0) || n_exp < 1 || r_max < 2 * n_exp {
        return Err(ImpsError::Precondition(format!(
            "fit_power_law needs k > 0, n_exp >= 1, r_max >= 2 n_exp (k={}, n_exp={}, r_max={})",
            k, n_exp, r_max
        )));
    }
    let target: Vec<f64> = (1..=r_max).map(|r| (r as f64).powf(-k)).collect();
    // r^-k = Gamma(k)^-1 int t^(k-1) e^(-rt) dt; seed the rates on a log grid over
    // the t range that matters, since nodes with t r_max << 1 or t >> k have no
    // leverage on the fit
    let x_lo = (3.0 / r_max as f64).ln();
    let x_hi = k.max(1.0).ln();
    run_fit(&target, log_grid(x_lo, x_hi, n_exp, k.ln()), opts)
}

fn log_grid(lo: f64, hi: f64, n: usize, single: f64) -> Vec<f64> {
    if n == 1 {
        return vec![single];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// Fit tabulated positive data `target[r-1]`, `r = 1..=len`.
pub fn fit_exp_sum(target: &[f64], n_exp: usize, opts: &FitOptions) -> Result<ExpSumFit> {
    if n_exp < 1 || target.len() < 2 * n_exp {
        return Err(ImpsError::Precondition("fit_exp_sum needs n_exp >= 1 and len >= 2 n_exp".into()));
    }
    if target.iter().any(|t| !(*t > 0.0) || !t.is_finite()) {
        return Err(ImpsError::Precondition("exp-sum fit needs positive finite data".into()));
    }
    let r_max = target.len() as f64;
    run_fit(target, log_grid((3.0 / r_max).ln(), 0.0, n_exp, 0.0), opts)
}

/// `lambda = exp(-exp(theta))` keeps every rate inside (0, 1).
fn rates_of(theta: &[f64]) -> Vec<f64> {
    theta.iter().map(|t| (-t.clamp(-40.0, 6.0).exp()).exp()).collect()
}

/// Relative errors of `sum a_i lambda_i^(r-1)` against the target.
fn rel_errors(target: &[f64], params: &[f64]) -> Vec<f64> {
    let n = params.len() / 2;
    let rates = rates_of(&params[n..]);
    let mut acc = vec![0.0; target.len()];
    for (j, &l) in rates.iter().enumerate() {
        let mut p = params[j];
        for v in acc.iter_mut() {
            *v += p;
            p *= l;
        }
    }
    acc.iter().zip(target).map(|(v, t)| (v - t) / t).collect()
}

/// Weighted relative-error basis `Phi[r, j] = sqrt(w_r) lambda_j^r / y_r` and its
/// SVD-based projection.
fn project(target: &[f64], sw: &[f64], theta: &[f64]) -> Option<Projection> {
    let nr = target.len();
    let n = theta.len();
    let rates = rates_of(theta);
    let mut phi = Array2::<f64>::zeros((nr, n));
    for (j, &l) in rates.iter().enumerate() {
        let mut p = 1.0;
        for r in 0..nr {
            phi[[r, j]] = sw[r] * p / target[r];
            p *= l;
        }
    }
    let y = Array1::from(sw.to_vec());
    let (u, sv, vt) = phi.svddc(JobSvd::Some).ok()?;
    let (u, vt) = (u?, vt?);
    let cut = sv[0] * 1e-15;
    let k = sv.iter().take_while(|x| **x > cut).count();
    let uk = u.slice(s![.., ..k]).to_owned();
    let uty = uk.t().dot(&y);
    let mut a = Array1::<f64>::zeros(n);
    for i in 0..k {
        a.scaled_add(uty[i] / sv[i], &vt.row(i));
    }
    // -P_perp y directly; phi a - y cancels badly when phi is ill-conditioned
    let res = uk.dot(&uty) - &y;
    // rows of S^-1 V^T restricted to the kept singular values
    let mut svt = vt.slice(s![..k, ..]).to_owned();
    for i in 0..k {
        svt.row_mut(i).mapv_inplace(|x| x / sv[i]);
    }
    Some(Projection { a, res, uk, svt, phi })
}

struct Projection {
    a: Array1<f64>,
    res: Array1<f64>,
    uk: Array2<f64>,
    svt: Array2<f64>,
    phi: Array2<f64>,
}

/// Levenberg-Marquardt over the log-rates with the coefficients projected out
/// (Kaufman's approximation to the variable-projection Jacobian).
fn levenberg_marquardt(target: &[f64], weights: &[f64], theta: &mut Vec<f64>, iters: usize) {
    let nr = target.len();
    let n = theta.len();
    let sw: Vec<f64> = weights.iter().map(|w| w.sqrt()).collect();
    let Some(mut cur) = project(target, &sw, theta) else { return };
    let mut f = cur.res.dot(&cur.res);
    let mut damping: f64 = 1e-3;
    for _ in 0..iters {
        let Projection { a, res, uk, svt, phi } = &cur;
        // Golub-Pereyra: J_j = P_perp dPhi_j a_j - pinv(Phi)^T dPhi_j^T res
        let mut jac = Array2::<f64>::zeros((nr, n));
        for j in 0..n {
            let dt = theta[j].clamp(-40.0, 6.0).exp();
            let mut dcol = Array1::<f64>::zeros(nr);
            for r in 0..nr {
                dcol[r] = -(r as f64) * dt * phi[[r, j]];
            }
            let col = &dcol * a[j];
            let proj = uk.dot(&uk.t().dot(&col));
            let second = uk.dot(&svt.column(j)) * dcol.dot(res);
            jac.column_mut(j).assign(&(&col - &proj - &second));
        }
        let mut scale: Vec<f64> = (0..n).map(|j| jac.column(j).dot(&jac.column(j)).sqrt()).collect();
        // columns with no leverage (rates pinned near 0 or 1) are held in place
        let top = scale.iter().fold(0.0f64, |m, x| m.max(*x)).max(1e-300);
        scale.iter_mut().for_each(|x| {
            if *x < 1e-8 * top {
                *x = 1e8 * top
            }
        });
        let mut improved = false;
        for _ in 0..16 {
            let mut aug = Array2::<f64>::zeros((nr + n, n));
            aug.slice_mut(s![..nr, ..]).assign(&jac);
            for j in 0..n {
                aug[[nr + j, j]] = damping.sqrt() * scale[j];
            }
            let mut rhs = Array1::<f64>::zeros(nr + n);
            rhs.slice_mut(s![..nr]).assign(&res.mapv(|x| -x));
            let Ok(step) = aug.least_squares(&rhs) else { break };
            // trust region on the log-rates: at most 0.5 per coordinate
            let cand: Vec<f64> = theta.iter().zip(step.solution.iter()).map(|(t, s)| t + s.clamp(-0.5, 0.5)).collect();
            if let Some(next) = project(target, &sw, &cand) {
                let fc = next.res.dot(&next.res);
                if fc.is_finite() && fc < f {
                    *theta = cand;
                    cur = next;
                    f = fc;
                    damping = (damping / 5.0).max(1e-15);
                    improved = true;
                    break;
                }
            }
            damping *= 8.0;
        }
        if !improved {
            return;
        }
    }
}

fn coefficients_for(target: &[f64], weights: &[f64], theta: &[f64]) -> Option<Vec<f64>> {
    let sw: Vec<f64> = weights.iter().map(|w| w.sqrt()).collect();
    project(target, &sw, theta).map(|p| p.a.to_vec())
}

fn max_abs(e: &[f64]) -> f64 {
    e.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn run_fit(target: &[f64], mut theta: Vec<f64>, opts: &FitOptions) -> Result<ExpSumFit> {
    let nr = target.len();
    let n = theta.len();
    let mut weights = vec![1.0; nr];
    let eval = |w: &[f64], th: &[f64]| -> Option<(f64, Vec<f64>)> {
        let a = coefficients_for(target, w, th)?;
        let mut p = a.clone();
        p.extend_from_slice(th);
        Some((max_abs(&rel_errors(target, &p)), p))
    };
    levenberg_marquardt(target, &weights, &mut theta, opts.lm_iterations);
    let mut best = eval(&weights, &theta).ok_or_else(|| ImpsError::Fit("projection SVD failed".into()))?;
    // Lawson reweighting pushes the least-squares optimum toward minimax
    let mut flat = 0;
    for _ in 0..opts.minimax_rounds {
        if flat >= 4 {
            break;
        }
        let Some((_, p)) = eval(&weights, &theta) else { break };
        let e = rel_errors(target, &p);
        for (w, e) in weights.iter_mut().zip(&e) {
            *w *= e.abs().max(1e-300);
        }
        let s: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w *= nr as f64 / s);
        levenberg_marquardt(target, &weights, &mut theta, 40);
        match eval(&weights, &theta) {
            Some(c) if c.0 < best.0 => {
                flat = if c.0 > 0.95 * best.0 { flat + 1 } else { 0 };
                best = c;
            }
            _ => flat += 1,
        }
    }
    let params = best.1;
    let mut fit = ExpSumFit {
        coefficients: params[..n].to_vec(),
        rates: rates_of(&params[n..]),
        max_rel_error: 0.0,
        r_max: nr,
    };
    // report the error of exactly what is returned
    fit.max_rel_error = (1..=nr).map(|r| ((fit.kernel(r) - target[r - 1]) / target[r - 1]).abs()).fold(0.0, f64::max);
    if fit.rates.iter().any(|l| !(*l > 0.0 && *l < 1.0)) || fit.coefficients.iter().any(|a| !a.is_finite()) {
        return Err(ImpsError::Fit("fit produced rates outside (0,1) or non-finite weights".into()));
    }
    if !(fit.max_rel_error <= opts.error_ceiling) {
        return Err(ImpsError::Fit(format!(
            "max relative error {:.3e} above ceiling {:.3e} (n_exp={}, r_max={})",
            fit.max_rel_error,
            opts.error_ceiling,
            fit.n_exp(),
            nr
        )));
    }
    Ok(fit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::frobenius;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    // oracle: operator `op` on site j (0-based) of n sites
    fn at(n: usize, j: usize, op: &Array2<C64>) -> Array2<C64> {
        let d = op.nrows();
        let mut m = Array2::from_elem((1, 1), ONE);
        for i in 0..n {
            m = kron(&m, &if i == j { op.clone() } else { identity(d) });
        }
        m
    }

    fn max_rel(a: &Array2<C64>, b: &Array2<C64>) -> f64 {
        let scale = b.iter().fold(0.0f64, |m, z| m.max(z.norm())).max(1e-300);
        a.iter().zip(b.iter()).fold(0.0f64, |m, (x, y)| m.max((x - y).norm())) / scale
    }

    #[test]
    fn ising_bond_dimension_and_two_sites() {
        let mpo = build_ising_mpo(1.3, 0.7);
        assert_eq!(mpo.bond_dim(), 3);
        let h = mpo.to_dense(2);
        let expect = kron(&ops::sz(), &ops::sz()).mapv(|z| z * -1.3)
            - (kron(&ops::sx(), &identity(2)) + kron(&identity(2), &ops::sx())).mapv(|z| z * 0.7);
        assert!(max_rel(&h, &expect) < 1e-15);
        assert_eq!(mpo.left_boundary().len(), 3);
        assert_eq!(mpo.right_boundary()[2], ops::sx().mapv(|z| z * -0.7));
    }

    #[test]
    fn ising_five_sites_matches_dense_sum() {
        let n = 5;
        let mpo = build_ising_mpo(1.0, 1.0);
        let mut expect = Array2::zeros((32, 32));
        for i in 0..n {
            expect = expect - at(n, i, &ops::sx());
            if i + 1 < n {
                expect = expect - at(n, i, &ops::sz()).dot(&at(n, i + 1, &ops::sz()));
            }
        }
        assert!(max_rel(&mpo.to_dense(n), &expect) < 1e-13);
    }

    #[test]
    fn heisenberg_matches_dense_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (jx, jy, jz) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let mpo = build_heisenberg_mpo(jx, jy, jz);
        assert_eq!(mpo.bond_dim(), 5);
        let n = 4;
        let mut expect = Array2::zeros((16, 16));
        for i in 0..n - 1 {
            for (j, op) in [(jx, ops::sx()), (jy, ops::sy()), (jz, ops::sz())] {
                expect = expect + at(n, i, &op).dot(&at(n, i + 1, &op)).mapv(|z| z * j);
            }
        }
        assert!(max_rel(&mpo.to_dense(n), &expect) < 1e-13);
        // Jx = Jy = 0 leaves the z part only
        let z = build_heisenberg_mpo(0.0, 0.0, 0.8).to_dense(3);
        let ez = (at(3, 0, &ops::sz()).dot(&at(3, 1, &ops::sz())) + at(3, 1, &ops::sz()).dot(&at(3, 2, &ops::sz())))
            .mapv(|x| x * 0.8);
        assert!(max_rel(&z, &ez) < 1e-14);
    }

    #[test]
    fn exp_decay_cases() {
        let nn = build_exp_decay_mpo(1.0, 0.0).unwrap().to_dense(4);
        let mut expect = Array2::zeros((16, 16));
        for i in 0..3 {
            expect = expect + at(4, i, &ops::sz()).dot(&at(4, i + 1, &ops::sz()));
        }
        assert!(max_rel(&nn, &expect) < 1e-15);

        // weight of sz_1 sz_3 is lambda^(3-1-1) = 0.5: read it off the |uuu> vs flipped-3rd diagonal
        let h = build_exp_decay_mpo(1.0, 0.5).unwrap().to_dense(3);
        // diag(up,up,up) = 1 + 1 + 0.5, diag(up,up,down) = 1 - 1 - 0.5
        assert!((h[[0, 0]].re - 2.5).abs() < 1e-15);
        assert!((h[[1, 1]].re + 0.5).abs() < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let lam: f64 = rng.random_range(0.0..1.0);
        let n = 6;
        let mut expect = Array2::zeros((64, 64));
        for j in 0..n {
            for i in j + 1..n {
                expect = expect + at(n, j, &ops::sz()).dot(&at(n, i, &ops::sz())).mapv(|z| z * 0.9 * lam.powi((i - j - 1) as i32));
            }
        }
        assert!(max_rel(&build_exp_decay_mpo(0.9, lam).unwrap().to_dense(n), &expect) < 1e-12);
        assert!(matches!(build_exp_decay_mpo(1.0, 1.0), Err(ImpsError::Precondition(_))));
    }

    #[test]
    fn bose_hubbard_onsite_and_hop() {
        let fit = ExpSumFit { coefficients: vec![1.0], rates: vec![0.5], max_rel_error: 0.0, r_max: 10 };
        let h1 = build_dipolar_bose_hubbard_mpo(0.0, 2.0, 0.0, 0.0, 2, &fit).unwrap().to_dense(1);
        let expect = Array2::from_diag(&Array1::from(vec![c(0.0), c(0.0), c(2.0)]));
        assert!(max_rel(&h1, &expect) < 1e-15);

        let h2 = build_dipolar_bose_hubbard_mpo(0.0, 0.0, 0.0, 1.0, 1, &fit).unwrap().to_dense(2);
        let b = ops::annihilate(1);
        let bd = ops::create(1);
        let hop = (kron(&bd, &b) + kron(&b, &bd)).mapv(|z| -z);
        assert!(max_rel(&h2, &hop) < 1e-15);
        assert_eq!(build_dipolar_bose_hubbard_mpo(0.0, 0.0, 0.0, 1.0, 1, &fit).unwrap().bond_dim(), 5);
    }

    #[test]
    fn bose_hubbard_random_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let fit = ExpSumFit {
            coefficients: (0..4).map(|_| rng.random_range(-1.0..1.0)).collect(),
            rates: (0..4).map(|_| rng.random_range(0.05..0.95)).collect(),
            max_rel_error: 0.0,
            r_max: 10,
        };
        let (v, u, mu, t) = (rng.random_range(0.0..2.0), rng.random_range(0.0..2.0), rng.random_range(-1.0..1.0), rng.random_range(0.0..1.0));
        let n_max = 2;
        let n = 4;
        let mpo = build_dipolar_bose_hubbard_mpo(v, u, mu, t, n_max, &fit).unwrap();
        assert_eq!(mpo.bond_dim(), 8);
        let (b, bd, num) = (ops::annihilate(n_max), ops::create(n_max), ops::number(n_max));
        let dim = 3usize.pow(n as u32);
        let mut expect = Array2::zeros((dim, dim));
        for i in 0..n {
            let ni = at(n, i, &num);
            expect = expect + ni.dot(&(&ni - &identity(dim))).mapv(|z| z * (u / 2.0)) - ni.mapv(|z| z * mu);
            if i + 1 < n {
                let h = at(n, i, &bd).dot(&at(n, i + 1, &b));
                expect = expect - (&h + &crate::tensor::adjoint(&h)).mapv(|z| z * t);
            }
            for j in i + 1..n {
                expect = expect + ni.dot(&at(n, j, &num)).mapv(|z| z * v * fit.kernel(j - i));
            }
        }
        assert!(max_rel(&mpo.to_dense(n), &expect) < 1e-12);
    }

    #[test]
    fn add_local_term_shifts_and_zero_is_identity() {
        let mpo = build_ising_mpo(1.0, 1.0);
        assert_eq!(mpo.add_local_term(&Array2::zeros((2, 2))).unwrap(), mpo);
        let shifted = mpo.add_local_term(&identity(2).mapv(|z| z * -0.3)).unwrap();
        let diff = shifted.to_dense(4) - mpo.to_dense(4);
        assert!(frobenius(&(diff + identity(16).mapv(|z| z * 1.2))) < 1e-13);
        let field = mpo.add_local_term(&ops::sx().mapv(|z| z * -0.25)).unwrap();
        let expect = build_ising_mpo(1.0, 1.25).to_dense(4);
        assert!(max_rel(&field.to_dense(4), &expect) < 1e-14);
        assert!(matches!(mpo.add_local_term(&identity(3)), Err(ImpsError::Dimension(_))));
    }

    #[test]
    fn hermitian_dense_contractions() {
        let mpo = build_heisenberg_mpo(0.3, -0.7, 1.1);
        for n in 2..=5 {
            let h = mpo.to_dense(n);
            assert!(frobenius(&(&h - &crate::tensor::adjoint(&h))) < 1e-12);
        }
    }

    #[test]
    fn mirrored_right_block_matches_reversed_dense() {
        let mpo = build_exp_decay_mpo(0.7, 0.4).unwrap();
        let r = mpo.right_block_mirrored(3);
        let natural = mpo.right_block(3);
        // the identity slot of a right block holds the full 3-site Hamiltonian
        let h = mpo.to_dense(3);
        assert!(max_rel(&natural[2], &h) < 1e-15);
        // mirrored order: permute site indices (s1 s2 s3) -> (s3 s2 s1)
        let perm = |x: usize| ((x & 1) << 2) | (x & 2) | ((x >> 2) & 1);
        let mut hp = Array2::zeros((8, 8));
        for i in 0..8 {
            for j in 0..8 {
                hp[[perm(i), perm(j)]] = h[[i, j]];
            }
        }
        assert!(max_rel(&r[2], &hp) < 1e-15);
    }

    #[test]
    fn single_exponential_is_exact() {
        let target: Vec<f64> = (1..=40i32).map(|r| 0.7 * 0.83f64.powi(r - 1)).collect();
        let fit = fit_exp_sum(&target, 1, &FitOptions::default()).unwrap();
        assert!(fit.max_rel_error < 1e-12, "{}", fit.max_rel_error);
        assert!((fit.rates[0] - 0.83).abs() < 1e-10);
    }

    // verified by direct evaluation on the whole grid, not by the reported value
    fn direct_max_rel(fit: &ExpSumFit, k: f64, r_max: usize) -> f64 {
        (1..=r_max)
            .map(|r| {
                let y = (r as f64).powf(-k);
                let v: f64 = fit.coefficients.iter().zip(&fit.rates).map(|(a, l)| a * l.powi(r as i32 - 1)).sum();
                ((v - y) / y).abs()
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn inverse_cube_twenty_terms() {
        let fit = fit_power_law(3.0, 20, 1000).unwrap();
        let direct = direct_max_rel(&fit, 3.0, 1000);
        assert!(direct < 1e-6, "{direct:e}");
        assert!((direct - fit.max_rel_error).abs() <= 1e-3 * direct);
        assert!(fit.rates.iter().all(|l| *l > 0.0 && *l < 1.0));

        let ten = fit_power_law(3.0, 10, 1000).unwrap();
        assert!(direct_max_rel(&ten, 3.0, 1000) >= direct);
    }

    #[test]
    fn ceiling_rejects_poor_fits() {
        let opts = FitOptions { error_ceiling: 1e-6, ..Default::default() };
        assert!(matches!(fit_power_law_with(3.0, 2, 100, &opts), Err(ImpsError::Fit(_))));
    }

    #[test]
    fn fit_text_round_trip() {
        let fit = fit_power_law(3.0, 8, 200).unwrap();
        let back = ExpSumFit::from_text(&fit.to_text()).unwrap();
        assert_eq!(back.coefficients, fit.coefficients);
        assert_eq!(back.rates, fit.rates);
        assert_eq!(back.r_max, 200);
    }

    #[test]
    fn fit_preconditions() {
        assert!(matches!(fit_power_law(3.0, 20, 30), Err(ImpsError::Precondition(_))));
        assert!(matches!(fit_power_law(0.0, 2, 30), Err(ImpsError::Precondition(_))));
    }
}
