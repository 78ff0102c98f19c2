//! Self-checks against dense oracles. Each check returns a one-line detail
//! on success and names the violated invariant on failure.

use imps_core::eigensolver::{solve_lowest, SolveOptions, SparseOperator};
use imps_core::engine::{Engine, EngineConfig};
use imps_core::mpo::{self, kron, ops, ExpSumFit, Mpo};
use imps_core::tensor::{adjoint, eigh, identity, C64};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::CliError;

type Check = fn(&Faults) -> Result<String, String>;

#[derive(Default)]
struct Faults {
    broken_mpo_slot: bool,
}

const CHECKS: &[(&str, &str, Check)] = &[
    ("mpo-ising", "dense contraction of the Ising MPO equals the direct sum, n <= 5", mpo_ising),
    ("mpo-heisenberg", "dense contraction of the XYZ MPO equals the direct sum, n <= 5", mpo_heisenberg),
    ("mpo-exp-decay", "dense contraction of the exponential-decay MPO equals the direct sum, n <= 5", mpo_exp_decay),
    ("mpo-dipolar", "dipolar Bose-Hubbard MPO (4 exponentials, n_max = 2) equals the direct sum, n <= 5", mpo_dipolar),
    ("mpo-structure", "builders are lower triangular with identity corner slots", mpo_structure),
    ("init-exact", "initial Rayleigh quotient equals the 8-site dense ground energy", init_exact),
    ("solver-oracle", "Davidson lowest eigenvalue of a sparse symmetric operator matches dense diagonalization", solver_oracle),
    ("checkpoint", "restored engine continues bit-identically", checkpoint_resume),
];

pub fn cmd_validate(list: bool, only: &[String], inject: Option<&str>) -> Result<(), CliError> {
    if list {
        for (name, what, _) in CHECKS {
            println!("{:<16}{}", name, what);
        }
        return Ok(());
    }
    let mut faults = Faults::default();
    match inject {
        None => {}
        Some("broken-mpo-slot") => faults.broken_mpo_slot = true,
        Some(other) => return Err(CliError::Usage(format!("unknown fault {:?}", other))),
    }
    for name in only {
        if !CHECKS.iter().any(|(n, _, _)| n == name) {
            return Err(CliError::Usage(format!("unknown check {:?} (see --list)", name)));
        }
    }
    let mut failed = Vec::new();
    for (name, _, check) in CHECKS {
        if !only.is_empty() && !only.iter().any(|o| o == name) {
            continue;
        }
        match check(&faults) {
            Ok(detail) => println!("ok    {:<16}{}", name, detail),
            Err(why) => {
                println!("FAIL  {:<16}{}", name, why);
                failed.push(*name);
            }
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Failure(format!("failed checks: {}", failed.join(", "))))
    }
}

fn at(n: usize, j: usize, op: &Array2<C64>) -> Array2<C64> {
    let d = op.nrows();
    let mut m = identity(1);
    for i in 0..n {
        m = kron(&m, &if i == j { op.clone() } else { identity(d) });
    }
    m
}

fn scaled(m: &Array2<C64>, x: f64) -> Array2<C64> {
    m.mapv(|z| z * x)
}

fn max_rel(a: &Array2<C64>, b: &Array2<C64>) -> f64 {
    let scale = b.iter().fold(0.0f64, |m, z| m.max(z.norm())).max(1e-300);
    a.iter().zip(b.iter()).fold(0.0f64, |m, (x, y)| m.max((x - y).norm())) / scale
}

/// Corrupts the first coupling slot when the fault is armed.
fn maybe_break(m: Mpo, f: &Faults) -> Mpo {
    if !f.broken_mpo_slot {
        return m;
    }
    let mut w = m.bulk().clone();
    w.slice_mut(ndarray::s![1, 0, .., ..]).mapv_inplace(|z| z * 1.5);
    Mpo::from_bulk(w).expect("same shape")
}

fn compare(m: &Mpo, direct: impl Fn(usize) -> Array2<C64>) -> Result<String, String> {
    let mut worst: f64 = 0.0;
    for n in 1..=5 {
        let err = max_rel(&m.to_dense(n), &direct(n));
        if !(err < 1e-12) {
            return Err(format!("dense equivalence broken at n = {}: max relative error {:.3e}", n, err));
        }
        worst = worst.max(err);
    }
    Ok(format!("max relative error {:.1e}", worst))
}

fn mpo_ising(f: &Faults) -> Result<String, String> {
    let (j, h) = (1.3, 0.7);
    compare(&maybe_break(mpo::build_ising_mpo(j, h), f), |n| {
        let mut e = Array2::zeros((1 << n, 1 << n));
        for i in 0..n {
            e = e - scaled(&at(n, i, &ops::sx()), h);
            if i + 1 < n {
                e = e - scaled(&at(n, i, &ops::sz()).dot(&at(n, i + 1, &ops::sz())), j);
            }
        }
        e
    })
}

fn mpo_heisenberg(f: &Faults) -> Result<String, String> {
    let js = [0.3, -0.8, 1.1];
    compare(&maybe_break(mpo::build_heisenberg_mpo(js[0], js[1], js[2]), f), |n| {
        let mut e = Array2::zeros((1 << n, 1 << n));
        for i in 0..n.saturating_sub(1) {
            for (jk, p) in js.iter().zip([ops::sx(), ops::sy(), ops::sz()]) {
                e = e + scaled(&at(n, i, &p).dot(&at(n, i + 1, &p)), *jk);
            }
        }
        e
    })
}

fn mpo_exp_decay(f: &Faults) -> Result<String, String> {
    let (j, lam) = (0.9, 0.6);
    let m = mpo::build_exp_decay_mpo(j, lam).map_err(|e| e.to_string())?;
    compare(&maybe_break(m, f), |n| {
        let mut e = Array2::zeros((1 << n, 1 << n));
        for a in 0..n {
            for b in a + 1..n {
                e = e + scaled(&at(n, a, &ops::sz()).dot(&at(n, b, &ops::sz())), j * lam.powi((b - a - 1) as i32));
            }
        }
        e
    })
}

fn mpo_dipolar(f: &Faults) -> Result<String, String> {
    let fit = ExpSumFit {
        coefficients: vec![0.7, -0.2, 0.4, 0.1],
        rates: vec![0.1, 0.35, 0.6, 0.85],
        max_rel_error: 0.0,
        r_max: 10,
    };
    let (v, u, mu, t, n_max) = (1.0, 0.8, 0.3, 0.25, 2);
    let m = mpo::build_dipolar_bose_hubbard_mpo(v, u, mu, t, n_max, &fit).map_err(|e| e.to_string())?;
    let (b, bd, num) = (ops::annihilate(n_max), ops::create(n_max), ops::number(n_max));
    compare(&maybe_break(m, f), |n| {
        let dim = 3usize.pow(n as u32);
        let mut e = Array2::zeros((dim, dim));
        for i in 0..n {
            let ni = at(n, i, &num);
            e = e + scaled(&ni.dot(&(&ni - &identity(dim))), u / 2.0) - scaled(&ni, mu);
            if i + 1 < n {
                let hop = at(n, i, &bd).dot(&at(n, i + 1, &b));
                e = e - scaled(&(&hop + &adjoint(&hop)), t);
            }
            for j in i + 1..n {
                let k: f64 = fit.coefficients.iter().zip(&fit.rates).map(|(a, l)| a * l.powi((j - i - 1) as i32)).sum();
                e = e + scaled(&ni.dot(&at(n, j, &num)), v * k);
            }
        }
        e
    })
}

fn mpo_structure(f: &Faults) -> Result<String, String> {
    let fit = ExpSumFit { coefficients: vec![1.0], rates: vec![0.5], max_rel_error: 0.0, r_max: 4 };
    let all = [
        ("ising", maybe_break(mpo::build_ising_mpo(1.0, 1.0), f)),
        ("heisenberg", mpo::build_heisenberg_mpo(1.0, 1.0, 1.0)),
        ("exp-decay", mpo::build_exp_decay_mpo(1.0, 0.5).map_err(|e| e.to_string())?),
        ("dipolar", mpo::build_dipolar_bose_hubbard_mpo(1.0, 1.0, 0.5, 0.1, 2, &fit).map_err(|e| e.to_string())?),
    ];
    for (name, m) in &all {
        let last = m.bond_dim() - 1;
        let id = identity(m.phys_dim());
        if m.block(0, 0) != id || m.block(last, last) != id {
            return Err(format!("{}: corner slots are not identities", name));
        }
        for a in 0..=last {
            for b in a + 1..=last {
                if m.block(a, b).iter().any(|z| z.norm() > 0.0) {
                    return Err(format!("{}: slot ({}, {}) above the diagonal is nonzero", name, a, b));
                }
            }
        }
    }
    Ok(format!("{} builders", all.len()))
}

fn init_exact(f: &Faults) -> Result<String, String> {
    let m = maybe_break(mpo::build_ising_mpo(1.0, 1.0), f);
    let cfg = EngineConfig { chi: 16, init_sites: 8, ..Default::default() };
    let eng = Engine::new(m, cfg).map_err(|e| e.to_string())?;
    // independent oracle: the 8-site chain written out directly
    let n = 8;
    let mut h = Array2::zeros((1 << n, 1 << n));
    for i in 0..n {
        h = h - at(n, i, &ops::sx());
        if i + 1 < n {
            h = h - at(n, i, &ops::sz()).dot(&at(n, i + 1, &ops::sz()));
        }
    }
    let e0 = eigh(&h).map_err(|e| e.to_string())?.0[0];
    let err = (eng.init_energy() - e0).abs();
    if err < 1e-10 {
        Ok(format!("|E_init - E_dense| = {:.1e}", err))
    } else {
        Err(format!("initial Rayleigh quotient {} differs from dense ground energy {} by {:.3e}", eng.init_energy(), e0, err))
    }
}

fn solver_oracle(_: &Faults) -> Result<String, String> {
    let n = 300;
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut entries = Vec::new();
    for i in 0..n {
        entries.push((i, i, C64::new(i as f64 * 0.05 + rng.random::<f64>(), 0.0)));
        for _ in 0..4 {
            let j = (rng.random::<f64>() * n as f64) as usize % n;
            if j != i {
                let x = C64::new(rng.random::<f64>() - 0.5, 0.0);
                entries.push((i, j, x));
                entries.push((j, i, x));
            }
        }
    }
    let op = SparseOperator::from_triplets(n, entries).map_err(|e| e.to_string())?;
    let dense = eigh(&op.to_dense()).map_err(|e| e.to_string())?.0[0];
    let seed = Array1::from_iter((0..n).map(|_| C64::new(rng.random::<f64>() - 0.5, 0.0)));
    let opts = SolveOptions { tol: 1e-10, max_iter: 2000, ..Default::default() };
    let r = solve_lowest(&op, &[seed], 0.0, &opts, None, None).map_err(|e| e.to_string())?;
    let err = (r.pairs[0].value - dense).abs();
    if r.converged && err < 1e-9 {
        Ok(format!("{} iterations, |error| = {:.1e}", r.iterations, err))
    } else {
        Err(format!("lowest eigenvalue {} vs dense {} (converged {})", r.pairs[0].value, dense, r.converged))
    }
}

fn checkpoint_resume(_: &Faults) -> Result<String, String> {
    let cfg = EngineConfig { chi: 4, init_sites: 4, seed: 3, ..Default::default() };
    let mut a = Engine::new(mpo::build_ising_mpo(1.0, 1.2), cfg).map_err(|e| e.to_string())?;
    for _ in 0..5 {
        a.step().map_err(|e| e.to_string())?;
    }
    let bytes = a.to_bytes();
    let mut b = Engine::from_bytes(&bytes).map_err(|e| e.to_string())?;
    if b.to_bytes() != bytes {
        return Err("re-serialized checkpoint differs".into());
    }
    for _ in 0..5 {
        let (ra, rb) = (a.step().map_err(|e| e.to_string())?, b.step().map_err(|e| e.to_string())?);
        if ra != rb {
            return Err(format!("round {} differs after restore", ra.round));
        }
    }
    Ok(format!("{} bytes", bytes.len()))
}
