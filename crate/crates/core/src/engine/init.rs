//! Environments from the exact ground state of a short open chain.

use ndarray::{Array1, Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::eigensolver::{solve_lowest, LinearOperator, SolveOptions};
use crate::error::{ImpsError, Result};
use crate::mpo::Mpo;
use crate::tensor::{adjoint, frobenius, svd, takagi, C64};

/// Largest dense state vector the initializer will build.
pub const MAX_INIT_DIM: usize = 1 << 22;

/// `H = sum_mu X[mu] (x) Y[mu]` acting on `psi[x, y]` as `sum X psi Y^T`.
pub struct SplitOperator {
    x: Vec<Array2<C64>>,
    y: Vec<Array2<C64>>,
    dx: usize,
    dy: usize,
}

impl SplitOperator {
    pub fn new(x: Vec<Array2<C64>>, y: Vec<Array2<C64>>) -> Result<Self> {
        if x.len() != y.len() || x.is_empty() {
            return Err(ImpsError::Dimension("split operator needs matching slot lists".into()));
        }
        let dx = x[0].nrows();
        let dy = y[0].nrows();
        // drop slot pairs that vanish on either side
        let keep: Vec<usize> = (0..x.len())
            .filter(|&m| x[m].iter().any(|z| z.norm() > 0.0) && y[m].iter().any(|z| z.norm() > 0.0))
            .collect();
        let x = keep.iter().map(|&m| x[m].clone()).collect();
        let y = keep.iter().map(|&m| y[m].t().to_owned()).collect();
        Ok(SplitOperator { x, y, dx, dy })
    }
}

impl LinearOperator for SplitOperator {
    fn dim(&self) -> usize {
        self.dx * self.dy
    }
    fn apply(&self, v: &Array1<C64>) -> Array1<C64> {
        let psi = Array2::from_shape_vec((self.dx, self.dy), v.to_vec()).expect("length");
        let mut out = Array2::<C64>::zeros((self.dx, self.dy));
        for (x, yt) in self.x.iter().zip(&self.y) {
            out += &x.dot(&psi).dot(yt);
        }
        Array1::from(out.into_raw_vec_and_offset().0)
    }
    fn trace(&self) -> Option<f64> {
        let t: C64 = self.x.iter().zip(&self.y).map(|(x, y)| x.diag().sum() * y.diag().sum()).sum();
        Some(t.re)
    }
}

/// Result of the initialization: environments around a hole between sites
/// `k` and `k+1` of the `2k`-site ground state.
#[derive(Clone, Debug)]
pub struct Initialization {
    pub left: Array3<C64>,
    pub right: Array3<C64>,
    /// Kept Schmidt values of the split, descending.
    pub lambda: Array1<f64>,
    pub n0: usize,
    pub ground_energy: f64,
    /// Whether the symmetric (Takagi) factorization was used.
    pub mirrored: bool,
}

impl Initialization {
    /// `sum D_a D_b L[a,mu,b] R[a,mu,b]`: energy of the hole state.
    pub fn rayleigh_quotient(&self) -> f64 {
        let (x, m, _) = self.left.dim();
        let d = &self.lambda;
        let mut e = C64::new(0.0, 0.0);
        let norm: f64 = d.iter().map(|v| v * v).sum();
        for a in 0..x {
            for b in 0..x {
                for mu in 0..m {
                    e += d[a] * d[b] * self.left[[a, mu, b]] * self.right[[a, mu, b]];
                }
            }
        }
        e.re / norm
    }
}

/// Smallest even site count whose half-chain space holds `chi` states.
pub fn sites_for_chi(chi: usize, d: usize, n0: usize) -> usize {
    let mut k = n0 / 2;
    while d.pow(k as u32) < chi {
        k += 1;
    }
    2 * k
}

/// `U^dagger X U` per slot, or `U^T Y conj(U)` for the right half.
fn project(u: &Array2<C64>, blocks: &[Array2<C64>], right: bool) -> Array3<C64> {
    let chi = u.ncols();
    let mut out = Array3::zeros((chi, blocks.len(), chi));
    let uc = u.mapv(|z| z.conj());
    for (mu, x) in blocks.iter().enumerate() {
        let p = if right { u.t().dot(x).dot(&uc) } else { adjoint(u).dot(x).dot(u) };
        out.index_axis_mut(ndarray::Axis(1), mu).assign(&p);
    }
    out
}

/// Build `L`, `R` from the `n0`-site ground state, keeping at most `chi`
/// Schmidt vectors.
pub fn initialize(mpo: &Mpo, n0: usize, chi: usize, seed: u64) -> Result<Initialization> {
    if n0 == 0 || n0 % 2 != 0 {
        return Err(ImpsError::Precondition(format!("init_sites must be even and positive, got {}", n0)));
    }
    if chi == 0 {
        return Err(ImpsError::Precondition("chi must be at least 1".into()));
    }
    let d = mpo.phys_dim();
    let k = n0 / 2;
    let half = d.checked_pow(k as u32).ok_or_else(|| ImpsError::Precondition("init space too large".into()))?;
    if half.saturating_mul(half) > MAX_INIT_DIM {
        return Err(ImpsError::Precondition(format!(
            "dense initialization of {} sites with d={} is too large",
            n0, d
        )));
    }
    let x = mpo.left_block(k);
    let y = mpo.right_block_mirrored(k);
    let op = SplitOperator::new(x.clone(), y.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = Array1::from_shape_fn(op.dim(), |_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
    let opts = SolveOptions { tol: 1e-12, max_iter: 3000, max_basis: 60, keep: 8, n_extra: 0 };
    let res = solve_lowest(&op, &[start], 0.0, &opts, None, None)?;
    if !res.converged {
        return Err(ImpsError::Numerical(format!(
            "initial ground state did not converge (residual {:.3e})",
            res.residual
        )));
    }
    let psi = Array2::from_shape_vec((half, half), res.v0.to_vec())?;
    let asym = frobenius(&(&psi - &psi.t())) / frobenius(&psi);
    let keep = chi.min(half);
    let (u, v, dvals, mirrored) = match (asym < 1e-10).then(|| takagi(&psi)) {
        Some(Ok((u, dv))) => (u.clone(), u.mapv(|z| z.conj()), dv, true),
        _ => {
            let f = svd(&psi)?;
            (f.u, f.v, f.d, false)
        }
    };
    let u = u.slice(ndarray::s![.., ..keep]).to_owned();
    let v = v.slice(ndarray::s![.., ..keep]).to_owned();
    let lambda = dvals.slice(ndarray::s![..keep]).to_owned();
    let left = project(&u, &x, false);
    let right = project(&v, &y, true);
    Ok(Initialization { left, right, lambda, n0, ground_energy: res.e0, mirrored })
}
