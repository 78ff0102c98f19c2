//! Bond-dimension growth, repeated insertion of a converged tensor, and the
//! mirror projection of a center tensor.

use ndarray::{s, Array1, Array2, Array3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{ImpsError, Result};
use crate::tensor::{adjoint, all_finite, frobenius, inner, svd, SiteTensor, C64, ONE, ZERO};

/// Embed environments and a center tensor into bond dimension `chi_big` with
/// `u = [I | 0]`: `L' = u^T L u`, `R' = u^T R u`, `A'_s = u^T A_s u`.
pub fn embed_bond(
    l: &Array3<C64>,
    r: &Array3<C64>,
    a: &SiteTensor,
    chi_big: usize,
) -> Result<(Array3<C64>, Array3<C64>, SiteTensor)> {
    let chi = l.dim().0;
    if r.dim().0 != chi || a.chi_l() != chi || a.chi_r() != chi {
        return Err(ImpsError::Dimension("embed_bond needs square, matching bonds".into()));
    }
    if chi_big < chi {
        return Err(ImpsError::Precondition(format!("u must be an isometry: {} < {}", chi_big, chi)));
    }
    let pad = |e: &Array3<C64>| {
        let mut out = Array3::zeros((chi_big, e.dim().1, chi_big));
        out.slice_mut(s![..chi, .., ..chi]).assign(e);
        out
    };
    let mut ab = Array3::zeros((chi_big, chi_big, a.d()));
    ab.slice_mut(s![..chi, ..chi, ..]).assign(&a.data);
    Ok((pad(l), pad(r), SiteTensor::new(ab)))
}

/// Isometry `Q = U_r V_r^dagger + X N^dagger` for a matrix of rank `r`:
/// the polar factor on the row space of `m`, completed on its null space by
/// orthonormal columns `X` supported on the rows `allowed` (random directions
/// if an RNG is given, unit vectors otherwise).
fn completed_polar(m: &Array2<C64>, allowed: &[usize], rng: Option<&mut ChaCha8Rng>) -> Result<Array2<C64>> {
    let (rows, cols) = m.dim();
    if allowed.len() < cols {
        return Err(ImpsError::Precondition(format!(
            "completion space of dimension {} cannot hold {} columns",
            allowed.len(),
            cols
        )));
    }
    let f = svd(m)?;
    let tiny = 1e-12 * f.d.get(0).copied().unwrap_or(0.0);
    let rank = f.d.iter().filter(|&&v| v > tiny).count();
    let ur = f.u.slice(s![.., ..rank]).to_owned();
    let vr = f.v.slice(s![.., ..rank]).to_owned();
    let mut q = ur.dot(&adjoint(&vr));
    if rank == cols {
        return Ok(q);
    }
    // orthonormal basis of the null space of m (columns rank.. of the full V)
    let mut vfull = Array2::<C64>::zeros((cols, cols));
    vfull.slice_mut(s![.., ..f.v.ncols()]).assign(&f.v);
    crate::tensor::orthonormal_completion(&mut vfull, rank);
    let nullv = vfull.slice(s![.., rank..]).to_owned();

    let basis: Vec<Array1<C64>> = ur.columns().into_iter().map(|c| c.to_owned()).collect();
    let mut extra: Vec<Array1<C64>> = Vec::new();
    let mut candidates: Box<dyn FnMut(usize) -> Array1<C64>> = match rng {
        Some(g) => Box::new(move |_| {
            let mut v = Array1::zeros(rows);
            for &i in allowed {
                v[i] = C64::new(g.random_range(-1.0..1.0), g.random_range(-1.0..1.0));
            }
            v
        }),
        None => Box::new(|k| {
            let mut v = Array1::zeros(rows);
            v[allowed[k % allowed.len()]] = ONE;
            v
        }),
    };
    let mut k = 0;
    while extra.len() < cols - rank {
        if k > 4 * allowed.len() + 16 {
            return Err(ImpsError::Numerical("could not complete isometry".into()));
        }
        let mut v = candidates(k);
        k += 1;
        for _ in 0..2 {
            for b in basis.iter().chain(extra.iter()) {
                let p = inner(b, &v);
                v.scaled_add(-p, b);
            }
        }
        let n = frobenius(&v);
        if n < 1e-8 {
            continue;
        }
        extra.push(v.mapv(|z| z / n));
    }
    for (j, x) in extra.iter().enumerate() {
        let nj = nullv.column(j);
        for r in 0..rows {
            for c in 0..cols {
                q[[r, c]] += x[r] * nj[c].conj();
            }
        }
    }
    Ok(q)
}

/// Left and right isometries for the embedded tensor `ab` whose nonzero block
/// has bond dimension `chi_small`. Completion columns stay inside the
/// embedded space, so the absorbed environments keep an identity slot.
pub fn completed_isometries(
    ab: &SiteTensor,
    chi_small: usize,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<(SiteTensor, SiteTensor)> {
    let (cl, _, d) = ab.shape();
    let allowed: Vec<usize> = (0..chi_small).flat_map(|a| (0..d).map(move |s| a * d + s)).collect();
    let ql = completed_polar(&ab.left_matrix(), &allowed, rng.as_deref_mut())?;
    let ql = SiteTensor::from_left_matrix(&ql, cl, d);
    // right: polar factor of M^T is the transpose of the polar factor of M
    let mt = ab.right_matrix().t().to_owned();
    let qt = completed_polar(&mt, &allowed, rng)?;
    let qr = SiteTensor::from_right_matrix(&qt.t().to_owned(), d);
    Ok((ql, qr))
}

/// `I^p E` through a `k`-dimensional Krylov projection of the linear map
/// `insert` (one absorption of a fixed tensor).
pub fn krylov_insert(
    env: &Array3<C64>,
    insert: &dyn Fn(&Array3<C64>) -> Result<Array3<C64>>,
    p: u64,
    k: usize,
) -> Result<Array3<C64>> {
    if k < 2 {
        return Err(ImpsError::Precondition(format!("Krylov basis needs at least 2 vectors, got {}", k)));
    }
    let shape = env.dim();
    let flat = |e: &Array3<C64>| Array1::from(e.iter().copied().collect::<Vec<_>>());
    let norm0 = frobenius(env);
    if norm0 == 0.0 {
        return Ok(env.clone());
    }
    let mut basis: Vec<Array1<C64>> = vec![flat(env).mapv(|z| z / norm0)];
    let mut images: Vec<Array1<C64>> = Vec::new();
    while images.len() < basis.len() {
        let j = images.len();
        let e = Array3::from_shape_vec(shape, basis[j].to_vec())?;
        let img = flat(&insert(&e)?);
        if !all_finite(&img) {
            return Err(ImpsError::NonFinite("Krylov insertion overflowed".into()));
        }
        images.push(img.clone());
        if basis.len() < k {
            let mut v = img;
            for _ in 0..2 {
                for b in &basis {
                    let c = inner(b, &v);
                    v.scaled_add(-c, b);
                }
            }
            let n = frobenius(&v);
            let scale = frobenius(&images[j]).max(1e-300);
            if n > 1e-13 * scale {
                basis.push(v.mapv(|z| z / n));
            }
        }
    }
    let m = basis.len();
    let proj = Array2::from_shape_fn((m, m), |(i, j)| inner(&basis[i], &images[j]));
    // repeated squaring on the projected map
    let mut result = Array1::<C64>::zeros(m);
    result[0] = C64::new(norm0, 0.0);
    let mut power = proj;
    let mut e = p;
    while e > 0 {
        if e & 1 == 1 {
            result = power.dot(&result);
        }
        e >>= 1;
        if e > 0 {
            power = power.dot(&power);
        }
        if !all_finite(&power) || !all_finite(&result) {
            return Err(ImpsError::NonFinite("projected insertion power overflowed (energy not subtracted?)".into()));
        }
    }
    let mut out = Array1::<C64>::zeros(basis[0].len());
    for (c, b) in result.iter().zip(&basis) {
        if *c != ZERO {
            out.scaled_add(*c, b);
        }
    }
    Ok(Array3::from_shape_vec(shape, out.to_vec())?)
}

/// `A_s <- (A_s + A_s^T) / 2`, renormalized.
pub fn mirror_symmetrize(a: &SiteTensor) -> Result<SiteTensor> {
    if a.chi_l() != a.chi_r() {
        return Err(ImpsError::Dimension("mirror symmetry needs equal bond dimensions".into()));
    }
    let t = a.data.view().permuted_axes([1, 0, 2]);
    let sym = (&a.data + &t).mapv(|z| z * 0.5);
    let n = frobenius(&sym);
    if n <= 1e-14 * frobenius(&a.data) || n == 0.0 {
        return Err(ImpsError::Degenerate("center tensor is mirror antisymmetric".into()));
    }
    Ok(SiteTensor::new(sym.mapv(|z| z / n)))
}

/// Largest `|A_s - A_s^T|` entry.
pub fn mirror_defect(a: &SiteTensor) -> f64 {
    let t = a.data.view().permuted_axes([1, 0, 2]);
    (&a.data - &t).iter().map(|z| z.norm()).fold(0.0, f64::max)
}
