//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run a subset with `cargo test -p imps-core --test acceptance -- 3 5`.
//! Every oracle here is computed independently of the library: quadrature
//! for the Ising chain, brute force over periodic patterns for the classical
//! staircase, dense diagonalization for the eigensolver.

use std::f64::consts::PI;
use std::time::{Duration, Instant};

use imps_core::analysis::{self, UniformMps, PERIOD_TOL};
use imps_core::eigensolver::{
    build_davidson, default_shift, invariance_gap, solve_lowest, LinearOperator, SolveOptions, SparseOperator,
};
use imps_core::engine::{absorb_left, compute_gain_gamma, krylov_insert, Engine, EngineConfig, TwoLevel};
use imps_core::mpo::{self, kron, ops, ExpSumFit, FitOptions, Mpo};
use imps_core::tensor::{adjoint, eigh, frobenius, identity, C64};
use ndarray::{Array1, Array2, Array3};
use ndarray_linalg::{EigValsh, UPLO};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// Tolerances, pinned.
const MPO_REL: f64 = 1e-12;
const INIT_ABS: f64 = 1e-10;
const GAPPED_ABS: f64 = 1e-6;
const CRITICAL_ABS: f64 = 1e-4;
const ENTROPY_REL: f64 = 0.25;
const STAIRCASE_DMU: f64 = 0.02;
const SMO_DELTA_A: f64 = 1e-8;
const SMO_RHO: f64 = 1e-3;
const INVARIANCE_GAP: f64 = 1e-6;
const PATTERN_ABS: f64 = 0.05;
const SOLVER_ABS: f64 = 1e-9;
const DAVIDSON_RATIO: f64 = 0.5;
const KRYLOV_REL: f64 = 1e-10;
const KRYLOV_ENERGY: f64 = 1e-8;
/// Measured 3.8e-9 when the fitter was first built.
const FIT20_BOUND: f64 = 1e-8;
const GAIN_REL: f64 = 0.05;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

// ---------------------------------------------------------------- oracles

/// Composite Simpson rule on `[a, b]` with `n` (even) intervals.
fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

/// Ground energy per site of `-sum sz sz - h sum sx`.
fn tfi_energy(h: f64) -> f64 {
    -simpson(|k| (1.0 + h * h + 2.0 * h * k.cos()).sqrt(), 0.0, PI, 200_000) / PI
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

fn dense_tfi(n: usize, h: f64) -> Array2<C64> {
    let mut e = Array2::zeros((1 << n, 1 << n));
    for i in 0..n {
        e = e - scaled(&at(n, i, &ops::sx()), h);
        if i + 1 < n {
            e = e - at(n, i, &ops::sz()).dot(&at(n, i + 1, &ops::sz()));
        }
    }
    e
}

/// `sum_{k >= 0, m + k q >= 1} (m + k q)^-3`, the lattice sum of one residue
/// class, summed directly with an integral tail.
fn residue_sum(m: usize, q: usize) -> f64 {
    let terms = 200_000usize;
    let start = if m == 0 { 1 } else { 0 };
    let mut s = 0.0;
    for k in (start..terms).rev() {
        s += ((m + k * q) as f64).powi(-3);
    }
    let x = (m + terms * q) as f64;
    s + 1.0 / (2.0 * q as f64 * x * x)
}

/// Classical hardcore `1/r^3` lattice gas: lower convex hull of the minimal
/// interaction energy per site over all occupation patterns with period
/// `q <= q_max`. Returns hull vertices `(rho, e)` sorted by density.
fn classical_hull(q_max: usize) -> Vec<(f64, f64)> {
    let mut best: Vec<(usize, usize, f64)> = vec![(0, 1, 0.0)];
    for q in 1..=q_max {
        let w: Vec<f64> = (0..q).map(|m| residue_sum(m, q)).collect();
        let mut by_count = vec![f64::INFINITY; q + 1];
        for pat in 0u32..(1 << q) {
            let occ: Vec<usize> = (0..q).filter(|i| pat >> i & 1 == 1).collect();
            let mut e = 0.0;
            // each site interacts with every occupied site to its right, all images
            for &i in &occ {
                for &j in &occ {
                    e += w[(j + q - i) % q];
                }
            }
            let n = occ.len();
            by_count[n] = by_count[n].min(e / q as f64);
        }
        for (n, e) in by_count.into_iter().enumerate() {
            best.push((n, q, e));
        }
    }
    let mut pts: Vec<(f64, f64)> = best.iter().map(|&(n, q, e)| (n as f64 / q as f64, e)).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    pts.dedup_by(|b, a| (a.0 - b.0).abs() < 1e-12);
    let mut hull: Vec<(f64, f64)> = Vec::new();
    for p in pts {
        while hull.len() >= 2 {
            let (a, b) = (hull[hull.len() - 2], hull[hull.len() - 1]);
            if (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0) <= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(p);
    }
    hull
}

/// Oracle density at chemical potential `mu` and the plateau edges in `mu`.
fn classical_density(hull: &[(f64, f64)], mu: f64) -> f64 {
    hull.iter().min_by(|a, b| (a.1 - mu * a.0).total_cmp(&(b.1 - mu * b.0))).unwrap().0
}

fn classical_edges(hull: &[(f64, f64)]) -> Vec<f64> {
    hull.windows(2).map(|w| (w[1].1 - w[0].1) / (w[1].0 - w[0].0)).collect()
}

// ------------------------------------------------------------- criteria

fn c1_mpo_equivalence() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut check = |name: &str, m: &Mpo, direct: &dyn Fn(usize) -> Array2<C64>| -> Option<String> {
        for n in 1..=5 {
            let err = max_rel(&m.to_dense(n), &direct(n));
            worst = worst.max(err);
            if !(err < MPO_REL) {
                return Some(format!("{} n={} err {:.2e}", name, n, err));
            }
        }
        None
    };
    let mut fails = Vec::new();
    let (j, h) = (0.8, 1.3);
    fails.extend(check("ising", &mpo::build_ising_mpo(j, h), &|n| {
        let mut e = Array2::zeros((1 << n, 1 << n));
        for i in 0..n {
            e = e - scaled(&at(n, i, &ops::sx()), h);
            if i + 1 < n {
                e = e - scaled(&at(n, i, &ops::sz()).dot(&at(n, i + 1, &ops::sz())), j);
            }
        }
        e
    }));
    let js = [0.4, -0.7, 1.2];
    fails.extend(check("heisenberg", &mpo::build_heisenberg_mpo(js[0], js[1], js[2]), &|n| {
        let mut e = Array2::zeros((1 << n, 1 << n));
        for i in 0..n.saturating_sub(1) {
            for (jk, p) in js.iter().zip([ops::sx(), ops::sy(), ops::sz()]) {
                e = e + scaled(&at(n, i, &p).dot(&at(n, i + 1, &p)), *jk);
            }
        }
        e
    }));
    let (je, lam) = (1.1, 0.45);
    fails.extend(check("exp-decay", &mpo::build_exp_decay_mpo(je, lam).unwrap(), &|n| {
        let mut e = Array2::zeros((1 << n, 1 << n));
        for a in 0..n {
            for b in a + 1..n {
                e = e + scaled(&at(n, a, &ops::sz()).dot(&at(n, b, &ops::sz())), je * lam.powi((b - a - 1) as i32));
            }
        }
        e
    }));
    let fit = mpo::fit_power_law_with(3.0, 4, 1000, &FitOptions { error_ceiling: 1.0, ..Default::default() }).unwrap();
    let (v, u, mu, t, n_max) = (1.0, 2.0, 0.4, 0.3, 2);
    let m = mpo::build_dipolar_bose_hubbard_mpo(v, u, mu, t, n_max, &fit).unwrap();
    let (b, bd, num) = (ops::annihilate(n_max), ops::create(n_max), ops::number(n_max));
    fails.extend(check("dipolar", &m, &|n| {
        let dim = 3usize.pow(n as u32);
        let mut e = Array2::zeros((dim, dim));
        for i in 0..n {
            let ni = at(n, i, &num);
            e = e + scaled(&ni.dot(&(&ni - &identity(dim))), u / 2.0) - scaled(&ni, mu);
            if i + 1 < n {
                let hop = at(n, i, &bd).dot(&at(n, i + 1, &b));
                e = e - scaled(&(&hop + &adjoint(&hop)), t);
            }
            for jj in i + 1..n {
                let r = jj - i;
                let k: f64 = fit.coefficients.iter().zip(&fit.rates).map(|(a, l)| a * l.powi(r as i32 - 1)).sum();
                e = e + scaled(&ni.dot(&at(n, jj, &num)), v * k);
            }
        }
        e
    }));
    outcome(fails.is_empty(), format!("4 models, n <= 5, max rel err {:.1e} (< {:.0e}) {}", worst, MPO_REL, fails.join("; ")))
}

fn c2_initialization() -> Outcome {
    let h = 1.0;
    let eng = Engine::new(mpo::build_ising_mpo(1.0, h), EngineConfig { chi: 16, init_sites: 8, ..Default::default() }).unwrap();
    let e = eigh(&dense_tfi(8, h)).unwrap().0[0];
    let err = (eng.init_energy() - e).abs();
    outcome(err < INIT_ABS, format!("n0=8: E_init={:.15} dense={:.15} |diff|={:.1e}", eng.init_energy(), e, err))
}

fn uniform_energy(eng: &Engine) -> f64 {
    let m = UniformMps::from_center(eng.center()).unwrap();
    analysis::energy_per_site(&m.ql, eng.mpo()).unwrap()
}

fn c3_gapped_tfi() -> Outcome {
    let h = 1.5;
    let mut eng = Engine::new(mpo::build_ising_mpo(1.0, h), EngineConfig { chi: 16, ..Default::default() }).unwrap();
    let last = eng.run(|_| {}).unwrap().unwrap();
    let e = uniform_energy(&eng);
    let exact = tfi_energy(h);
    let err = (e - exact).abs();
    outcome(
        last.converged && err < GAPPED_ABS,
        format!("chi=16 h=1.5: e={:.15} quadrature={:.15} |diff|={:.1e} converged={} rounds={}", e, exact, err, last.converged, last.round),
    )
}

fn c4_critical_tfi() -> Outcome {
    let mut eng =
        Engine::new(mpo::build_ising_mpo(1.0, 1.0), EngineConfig { chi: 32, max_rounds: 300, ..Default::default() }).unwrap();
    let last = eng.run(|_| {}).unwrap().unwrap();
    let e = uniform_energy(&eng);
    let exact = tfi_energy(1.0);
    let err = (e - exact).abs();
    let quad_check = (exact + 4.0 / PI).abs();
    outcome(
        err < CRITICAL_ABS,
        format!("chi=32 h=1 after {} rounds: e={:.12} quadrature={:.12} (vs -4/pi {:.0e}) |diff|={:.1e}", last.round, e, exact, quad_check, err),
    )
}

/// Critical chain on one symmetry-broken branch: a small field `-0.05 sz`
/// only in the initial state, no gain function, periodic insertion of
/// converged copies to speed up the slow critical convergence.
fn critical_entropy_run(eng: &mut Engine, rounds: usize, p: u64) -> Vec<f64> {
    let mut trace = Vec::new();
    for i in 1..=rounds {
        eng.step().unwrap();
        if i % 100 == 0 {
            eng.insert_copies(p, 30).unwrap();
        }
        if i % 500 == 0 {
            let m = UniformMps::from_center(eng.center()).unwrap();
            trace.push(analysis::entanglement_entropy(&m.center).unwrap());
        }
    }
    trace
}

fn c5_entropy_scaling() -> Outcome {
    let cfg = EngineConfig { chi: 16, gain_function: false, max_rounds: usize::MAX, ..Default::default() };
    let mut eng = Engine::with_bias(mpo::build_ising_mpo(1.0, 1.0), cfg, &ops::sz().mapv(|z| z * -0.05)).unwrap();
    let s16 = critical_entropy_run(&mut eng, 3000, 2000);
    eng.grow_bond_dimension(32, 0.0).unwrap();
    let s32 = critical_entropy_run(&mut eng, 3000, 300);
    let (a, b) = (*s16.last().unwrap(), *s32.last().unwrap());
    let drift16 = a - s16[s16.len() - 2];
    let drift32 = b - s32[s32.len() - 2];
    let c: f64 = 0.5;
    let target = 1.0 / ((12.0 / c).sqrt() + 1.0);
    let rel = ((b - a) - target).abs() / target;
    outcome(
        rel < ENTROPY_REL,
        format!(
            "S16={:.5} (last 500 rounds {:+.1e}) S32={:.5} ({:+.1e}) dS={:.5} target={:.5} rel dev={:.3}",
            a, drift16, b, drift32, b - a, target, rel
        ),
    )
}

fn hardcore_mpo(fit: &ExpSumFit, mu: f64, t: f64) -> Mpo {
    mpo::build_dipolar_bose_hubbard_mpo(1.0, 0.0, mu, t, 1, fit).unwrap()
}

fn c6_staircase() -> Outcome {
    let start = Instant::now();
    let fit = mpo::fit_power_law(3.0, 12, 1000).unwrap();
    let hull = classical_hull(10);
    let edges = classical_edges(&hull);
    let mut mismatches = Vec::new();
    let mut excused = 0;
    let (mut saw_third, mut saw_half) = (false, false);
    for i in 0..41 {
        let mu = 1.2 * i as f64 / 40.0;
        let mut eng = Engine::new(hardcore_mpo(&fit, mu, 0.0), EngineConfig { chi: 16, max_rounds: 1000, ..Default::default() }).unwrap();
        eng.run(|_| {}).unwrap();
        let m = UniformMps::from_center(eng.center()).unwrap();
        let q = analysis::period(&m, PERIOD_TOL).unwrap_or(0);
        let rho = analysis::average_density(&m, &ops::number(1), q.max(1)).unwrap();
        let want = classical_density(&hull, mu);
        saw_third |= (rho - 1.0 / 3.0).abs() < 1e-6;
        saw_half |= (rho - 0.5).abs() < 1e-6;
        let near_edge = edges.iter().any(|e| (e - mu).abs() <= STAIRCASE_DMU);
        excused += near_edge as usize;
        if (rho - want).abs() > 1e-6 && !near_edge {
            mismatches.push(format!("mu={:.2}: rho={:.4} oracle {:.4}", mu, rho, want));
        }
    }
    let third = hull.iter().position(|p| (p.0 - 1.0 / 3.0).abs() < 1e-12);
    let half = hull.iter().position(|p| (p.0 - 0.5).abs() < 1e-12);
    let span = |k: Option<usize>| {
        k.map_or("absent".to_string(), |k| {
            format!("mu in [{:.4}, {:.4}]", edges[k - 1], edges.get(k).copied().unwrap_or(f64::INFINITY))
        })
    };
    let elapsed = start.elapsed();
    outcome(
        saw_third && saw_half && mismatches.is_empty() && elapsed < Duration::from_secs(15 * 60),
        format!(
            "41 points: 1/3 plateau {} (oracle {}), 1/2 plateau {} (oracle {}), {} points within {} of an edge excused, {} off-oracle elsewhere {} [{:.0?}]",
            saw_third,
            span(third),
            saw_half,
            span(half),
            excused,
            STAIRCASE_DMU,
            mismatches.len(),
            mismatches.join("; "),
            elapsed
        ),
    )
}

struct LobeRun {
    min_delta_a: f64,
    /// Smallest and largest `Delta A` over rounds 101..=600.
    tail: (f64, f64),
    q: usize,
    rho: f64,
    rounds: u64,
    gap: f64,
    engine: Engine,
}

fn lobe_run(fit: &ExpSumFit, smo: bool, invariance: bool) -> LobeRun {
    let cfg = EngineConfig { chi: 16, smo, enforce_invariance: invariance, max_rounds: 600, ..Default::default() };
    let mut eng = Engine::new(hardcore_mpo(fit, 0.6, 0.05), cfg).unwrap();
    let mut min_delta_a = f64::INFINITY;
    let mut gap = f64::NAN;
    let mut rounds = 0;
    let mut tail = (f64::INFINITY, 0.0f64);
    eng.run(|r| {
        min_delta_a = min_delta_a.min(r.delta_a);
        if r.round > 100 {
            tail = (tail.0.min(r.delta_a), tail.1.max(r.delta_a));
        }
        gap = r.invariance_gap;
        rounds = r.round;
    })
    .unwrap();
    let m = UniformMps::from_center(eng.center()).unwrap();
    let q = analysis::period(&m, PERIOD_TOL).unwrap_or(0);
    let rho = analysis::average_density(&m, &ops::number(1), q.max(1)).unwrap();
    LobeRun { min_delta_a, tail, q, rho, rounds, gap, engine: eng }
}

fn c7_smo_necessity() -> Outcome {
    let fit = mpo::fit_power_law(3.0, 12, 1000).unwrap();
    let on = lobe_run(&fit, true, false);
    let off = lobe_run(&fit, false, false);
    let conv = |r: &LobeRun| r.min_delta_a < SMO_DELTA_A;
    let shape = |r: &LobeRun| r.q == 2 && (r.rho - 0.5).abs() < SMO_RHO;
    // Without SMO the pass condition (convergence and the q = 2 pattern) must
    // fail, with Delta A oscillating instead of decaying over 500 rounds.
    let stalled = off.rounds >= 600 && off.tail.0 > 1e3 * SMO_DELTA_A;
    outcome(
        conv(&on) && shape(&on) && !(conv(&off) && shape(&off)) && stalled,
        format!(
            "SMO on: min dA={:.1e} q={} rho={:.6} ({} rounds) | SMO off: dA in [{:.1e}, {:.1e}] over rounds 101..{}, q={} rho={:.6}",
            on.min_delta_a, on.q, on.rho, on.rounds, off.tail.0, off.tail.1, off.rounds, off.q, off.rho
        ),
    )
}

fn c8_invariance() -> Outcome {
    let fit = mpo::fit_power_law(3.0, 12, 1000).unwrap();
    let run = lobe_run(&fit, true, true);
    let gap = invariance_gap(run.engine.center()).unwrap();
    let m = UniformMps::from_center(run.engine.center()).unwrap();
    let n = ops::number(1);
    let sel = analysis::select_ground_state(&m.ql, &m.qr, &m.center, &n, 1e-8).unwrap();
    let chosen = m.with_center(sel.gamma.clone()).unwrap();
    let profile = analysis::density_profile(&chosen, &n, 4).unwrap();
    // classical pattern of the 1/2 plateau at t = 0: alternate occupation
    let pattern = [1.0, 0.0, 1.0, 0.0];
    let dev = profile.iter().zip(pattern).map(|(p, c)| (p - c).abs()).fold(0.0, f64::max);
    let uniform = analysis::density_profile(&m, &n, 2).unwrap();
    outcome(
        run.engine.converged() && gap < INVARIANCE_GAP && dev < PATTERN_ABS,
        format!(
            "converged={} in {} rounds, gap={:.1e} (last round {:.1e}), uniform profile {:.4?}, selected {:.4?} (dim {}), max dev from 1010 {:.3}",
            run.engine.converged(),
            run.rounds,
            gap,
            run.gap,
            uniform,
            profile,
            sel.dimension,
            dev
        ),
    )
}

fn sparse_random(rng: &mut ChaCha8Rng, n: usize) -> SparseOperator {
    let mut e = Vec::new();
    for i in 0..n {
        e.push((i, i, C64::new(rng.random_range(-1.0..1.0), 0.0)));
        for _ in 0..5 {
            let j = rng.random_range(0..n);
            let x = C64::new(rng.random_range(-1.0..1.0), 0.0);
            e.push((i, j, x));
            e.push((j, i, x));
        }
    }
    SparseOperator::from_triplets(n, e).unwrap()
}

/// Diagonal-dominant and ill-conditioned: a near-degenerate bottom pair
/// under a spectrum spread over three decades.
fn ill_conditioned(rng: &mut ChaCha8Rng, n: usize) -> (SparseOperator, Array1<f64>) {
    let mut e: Vec<(usize, usize, C64)> = (0..n)
        .map(|i| {
            let v = match i {
                0 => 1.0,
                1 => 1.01,
                _ => i as f64,
            };
            (i, i, C64::new(v, 0.0))
        })
        .collect();
    for _ in 0..n {
        let (i, j) = (rng.random_range(0..n), rng.random_range(0..n));
        let x = C64::new(rng.random_range(-1e-3..1e-3), 0.0);
        e.push((i, j, x));
        e.push((j, i, x));
    }
    let mut diag = Array1::zeros(n);
    for &(i, j, x) in &e {
        if i == j {
            diag[i] += x.re;
        }
    }
    (SparseOperator::from_triplets(n, e).unwrap(), diag)
}

fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Array1<C64> {
    Array1::from_shape_fn(n, |_| C64::new(rng.random_range(-1.0..1.0), 0.0))
}

fn c9_eigensolver() -> Outcome {
    let start = Instant::now();
    let n = 2000;
    let opts = SolveOptions { tol: 1e-10, max_iter: 5000, max_basis: 40, ..Default::default() };
    let mut worst: f64 = 0.0;
    // the dense oracle is excluded from the time budget
    let mut oracle = Duration::ZERO;
    for seed in 0..2 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let op = sparse_random(&mut rng, n);
        // eigenvalues only, real symmetric LAPACK path
        let t = Instant::now();
        let exact = op.to_dense().mapv(|z| z.re).eigvalsh(UPLO::Lower).unwrap()[0];
        oracle += t.elapsed();
        let r = solve_lowest(&op, &[rand_vec(&mut rng, n)], 0.0, &opts, None, None).unwrap();
        worst = worst.max((r.e0 - exact).abs());
    }
    let opts = SolveOptions { tol: 1e-9, max_iter: 5000, ..Default::default() };
    let (mut diag_ratio, mut scalar_ratio) = (Vec::new(), Vec::new());
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let (prior, _) = ill_conditioned(&mut rng, n);
        let (now, now_diag) = ill_conditioned(&mut rng, n);
        let v0 = rand_vec(&mut rng, n);
        let prev = solve_lowest(&prior, &[rand_vec(&mut rng, n)], 0.0, &opts, None, None).unwrap();
        let scalar = build_davidson(&prev.pairs, now.trace().unwrap(), n, default_shift(prev.e0)).unwrap();
        let diagonal = scalar.clone().with_diagonal(now_diag).unwrap();
        let plain = solve_lowest(&now, &[v0.clone()], 0.0, &opts, None, None).unwrap();
        let with_s = solve_lowest(&now, &[v0.clone()], 0.0, &opts, Some(&scalar), None).unwrap();
        let with_d = solve_lowest(&now, &[v0], 0.0, &opts, Some(&diagonal), None).unwrap();
        if !(plain.converged && with_s.converged && with_d.converged) {
            return outcome(false, format!("seed {}: a run did not converge", seed));
        }
        diag_ratio.push(with_d.iterations as f64 / plain.iterations as f64);
        scalar_ratio.push(with_s.iterations as f64 / plain.iterations as f64);
    }
    let median = |v: &mut Vec<f64>| {
        v.sort_by(|a, b| a.total_cmp(b));
        0.5 * (v[9] + v[10])
    };
    let (md, ms) = (median(&mut diag_ratio), median(&mut scalar_ratio));
    let elapsed = start.elapsed() - oracle;
    outcome(
        worst < SOLVER_ABS && md <= DAVIDSON_RATIO && elapsed < Duration::from_secs(60),
        format!(
            "N=2000: max |e0 - dense|={:.1e}; median iteration ratio diagonal-Davidson {:.3}, scalar-Davidson {:.3}; solver time {:.0?} (dense oracle {:.0?})",
            worst, md, ms, elapsed, oracle
        ),
    )
}

fn c10_krylov() -> Outcome {
    let start = Instant::now();
    let mut eng = Engine::new(mpo::build_ising_mpo(1.0, 1.5), EngineConfig { chi: 16, ..Default::default() }).unwrap();
    eng.run(|_| {}).unwrap();
    let ql = eng.left_isometry().unwrap();
    let shifted = eng.mpo().add_local_term(&identity(2).mapv(|z| z * -eng.state().shift)).unwrap();
    let w = shifted.bulk().clone();
    let ins = |e: &Array3<C64>| absorb_left(e, &ql, &w);
    let l0 = eng.left().clone();
    let eight = krylov_insert(&l0, &ins, 8, 12).unwrap();
    let mut direct = l0.clone();
    for _ in 0..8 {
        direct = ins(&direct).unwrap();
    }
    let rel = frobenius(&(&eight - &direct)) / frobenius(&direct);

    let before = uniform_energy(&eng);
    let rq_before = eng.rayleigh_quotient(eng.center()).unwrap();
    eng.insert_copies(100_000, 30).unwrap();
    let rq_after = eng.rayleigh_quotient(eng.center()).unwrap();
    for _ in 0..5 {
        eng.step().unwrap();
    }
    let after = uniform_energy(&eng);
    let de = (after - before).abs();
    let elapsed = start.elapsed();
    outcome(
        rel < KRYLOV_REL && de < KRYLOV_ENERGY && elapsed < Duration::from_secs(60),
        format!(
            "p=8,k=12 rel err {:.1e}; p=1e5: e/site {:.15} -> {:.15} (|diff| {:.1e}), center <H> moved {:.1e} over 2e5 sites [{:.1?}]",
            rel,
            before,
            after,
            de,
            rq_after - rq_before,
            elapsed
        ),
    )
}

fn direct_max_rel(fit: &ExpSumFit) -> f64 {
    (1..=fit.r_max)
        .map(|r| {
            let k: f64 = fit.coefficients.iter().zip(&fit.rates).map(|(a, l)| a * l.powi(r as i32 - 1)).sum();
            (k * (r as f64).powi(3) - 1.0).abs()
        })
        .fold(0.0, f64::max)
}

fn c11_power_law_fit() -> Outcome {
    let f20 = mpo::fit_power_law(3.0, 20, 1000).unwrap();
    let f10 = mpo::fit_power_law(3.0, 10, 1000).unwrap();
    let (e20, e10) = (direct_max_rel(&f20), direct_max_rel(&f10));
    outcome(
        e20 < FIT20_BOUND && e20 < e10,
        format!("r^-3, r <= 1000: N_exp=20 max rel err {:.2e} (bound {:.0e}), N_exp=10 {:.2e}", e20, FIT20_BOUND, e10),
    )
}

fn c12_gain_algebra() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut worst: f64 = 0.0;
    let mut lines = Vec::new();
    for c in [0.5, 0.9] {
        let mut dev: f64 = 0.0;
        for _ in 0..50 {
            let a = rng.random_range(-1.0..1.0);
            let b = a + rng.random_range(0.5..3.0);
            // a small optimal step, where the quadratic picture holds
            let cx = -(b - a) * rng.random_range(0.001..0.05);
            let mut two = TwoLevel { a, b, cx, eps0: 0.0 };
            let (e0, eps0) = two.optimum(0.0);
            two.eps0 = eps0;
            let g = compute_gain_gamma(&two, c, f64::INFINITY, 0.0);
            let (eg, _) = two.optimum(g);
            let ratio = (a - eg) / (a - e0);
            dev = dev.max((ratio / (1.0 - (1.0 - c) * (1.0 - c)) - 1.0).abs());
        }
        lines.push(format!("c={}: max rel dev {:.1e}", c, dev));
        worst = worst.max(dev);
    }
    outcome(worst < GAIN_REL, format!("{} (50 problems each)", lines.join(", ")))
}

fn main() {
    let criteria: [(u32, &str, fn() -> Outcome); 12] = [
        (1, "MPO oracle equivalence", c1_mpo_equivalence),
        (2, "initialization exactness", c2_initialization),
        (3, "gapped TFI energy", c3_gapped_tfi),
        (4, "critical TFI energy", c4_critical_tfi),
        (5, "entropy scaling", c5_entropy_scaling),
        (6, "devil's staircase, classical limit", c6_staircase),
        (7, "SMO necessity", c7_smo_necessity),
        (8, "invariance enforcement and selection", c8_invariance),
        (9, "eigensolver", c9_eigensolver),
        (10, "Krylov insertion", c10_krylov),
        (11, "power-law fit", c11_power_law_fit),
        (12, "gain-function algebra", c12_gain_algebra),
    ];
    let only: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = Vec::new();
    for (k, name, f) in criteria {
        if !only.is_empty() && !only.contains(&k) {
            continue;
        }
        let t = Instant::now();
        let o = f();
        println!(
            "criterion {:>2} {:<40} {}  {} [{:.1?}]",
            k,
            name,
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            t.elapsed()
        );
        if !o.pass {
            failed.push(k);
        }
    }
    if !failed.is_empty() {
        println!("failed criteria: {:?}", failed);
        std::process::exit(1);
    }
}
