//! The iteration loop: optimize the center tensor against the current
//! environments, absorb it on both sides, and fold the result into weighted
//! superpositions of the environments.

pub mod checkpoint;
pub mod env;
pub mod gain;
pub mod growth;
pub mod init;

use std::collections::VecDeque;

use ndarray::{Array1, Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::eigensolver::{
    alter_basis_invariance, build_davidson, default_shift, solve_lowest, symmetrize_invariance, DavidsonPreconditioner,
    LinearOperator, RitzPair, SolveOptions, SubspaceBasis,
};
use crate::error::{ImpsError, Result};
use crate::mpo::Mpo;
use crate::tensor::{all_finite, decompose_site, frobenius, identity, inner, Side, SiteTensor, C64};

pub use checkpoint::{checkpoint, restore};
pub use env::{absorb_left, absorb_right, left_boundary, right_boundary, EffectiveOperator};
pub use gain::{compute_gain_gamma, energy_shift, AverageConstants, CPolicy, DeviationAverage, TwoLevel};
pub use growth::{embed_bond, krylov_insert, mirror_symmetrize};
pub use init::{initialize, Initialization};

/// Which Davidson-type preconditioner the eigensolver gets.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DavidsonMode {
    Off,
    /// Unknown spectrum replaced by its average.
    Scalar,
    /// Unknown spectrum replaced by the operator diagonal.
    Diagonal,
}

#[derive(Clone, Debug)]
pub struct EngineConfig {
    pub chi: usize,
    /// Sites of the exact initial state (even). Raised automatically until the
    /// half chain can hold `chi` states.
    pub init_sites: usize,
    pub c_policy: CPolicy,
    pub delta_max_factor: f64,
    pub gamma_floor: f64,
    pub average: AverageConstants,
    /// Weighted superposition of old and new environments.
    pub smo: bool,
    pub gain_function: bool,
    pub energy_subtraction: bool,
    pub enforce_invariance: bool,
    pub mirror_symmetry: bool,
    /// Previous reference tensors offered to the solver as extra seeds.
    pub recycle: usize,
    pub davidson: DavidsonMode,
    pub solver: SolveOptions,
    /// Convergence: `Delta A < tol` for `window` consecutive rounds.
    pub tol: f64,
    pub window: usize,
    pub max_rounds: usize,
    pub seed: u64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            chi: 16,
            init_sites: 8,
            c_policy: CPolicy::Heuristic,
            delta_max_factor: 10.0,
            gamma_floor: 1e-12,
            average: AverageConstants::default(),
            smo: true,
            gain_function: true,
            energy_subtraction: true,
            enforce_invariance: false,
            mirror_symmetry: false,
            recycle: 3,
            davidson: DavidsonMode::Diagonal,
            solver: SolveOptions { tol: 1e-12, max_iter: 60, max_basis: 32, keep: 3, n_extra: 3 },
            tol: 1e-9,
            window: 20,
            max_rounds: 2000,
            seed: 0,
        }
    }
}

impl EngineConfig {
    /// Plain loop: no superposition weights, no gain function.
    pub fn basic(chi: usize) -> Self {
        EngineConfig { chi, smo: false, gain_function: false, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.chi == 0 {
            return Err(ImpsError::Precondition("chi must be at least 1".into()));
        }
        if self.init_sites == 0 || self.init_sites % 2 != 0 {
            return Err(ImpsError::Precondition(format!("init_sites must be even, got {}", self.init_sites)));
        }
        if !(self.tol > 0.0) || !(self.solver.tol > 0.0) {
            return Err(ImpsError::Precondition("tolerances must be positive".into()));
        }
        if self.window == 0 {
            return Err(ImpsError::Precondition("convergence window must be positive".into()));
        }
        if !(self.delta_max_factor > 0.0) || self.gamma_floor < 0.0 {
            return Err(ImpsError::Precondition("delta_max_factor > 0 and gamma_floor >= 0 required".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceState {
    pub a_refer: SiteTensor,
    pub avg_dev: DeviationAverage,
    pub last_xi: f64,
    pub round: u64,
    pub energy_history: Vec<f64>,
    pub gamma_floor: f64,
    /// Gain strength of the last round, reused for the next solve.
    pub gamma: f64,
    /// Shift folded into the local term at the last absorption.
    pub shift: f64,
    /// Weight of the new environment at the last absorption.
    pub weight: f64,
    pub last_eigenvalue: Option<f64>,
    /// Consecutive rounds with `Delta A < tol`.
    pub below_tol: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    pub round: u64,
    /// Estimate from the eigenvalue drift; `None` in the first rounds.
    pub energy_per_site: Option<f64>,
    /// `<A|H|A>` of the accepted tensor.
    pub eigenvalue: f64,
    /// `<A_r|H|A_r>` of the reference.
    pub refer_energy: f64,
    pub delta_a: f64,
    pub delta_a0: f64,
    pub xi: f64,
    pub gamma: f64,
    pub c: f64,
    pub iterations: usize,
    pub solver_converged: bool,
    pub shift: f64,
    /// `|lambda_L - lambda_R| / |lambda|` of the accepted tensor.
    pub invariance_gap: f64,
    pub converged: bool,
}

/// Everything needed to continue a run.
#[derive(Clone, Debug)]
pub struct Engine {
    mpo: Mpo,
    config: EngineConfig,
    pub(crate) left: Array3<C64>,
    pub(crate) right: Array3<C64>,
    /// Last accepted center tensor (unit norm).
    pub(crate) center: SiteTensor,
    pub(crate) state: ConvergenceState,
    pub(crate) prev_pairs: Vec<RitzPair>,
    pub(crate) history: VecDeque<Array1<C64>>,
    pub(crate) prev_q: Option<(SiteTensor, SiteTensor)>,
    pub(crate) recycle_off: bool,
    /// Next round starts over without gain or weights (after init or growth).
    pub(crate) restart: bool,
    pub(crate) init_energy: f64,
    pub(crate) rng: ChaCha8Rng,
}

fn phase_to_real(z: C64) -> C64 {
    let n = z.norm();
    if n > 0.0 {
        z.conj() / n
    } else {
        C64::new(1.0, 0.0)
    }
}

fn vec_norm(v: &Array1<C64>) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

impl Engine {
    pub fn new(mpo: Mpo, config: EngineConfig) -> Result<Self> {
        config.validate()?;
        let d = mpo.phys_dim();
        let n0 = init::sites_for_chi(config.chi, d, config.init_sites);
        let init = initialize(&mpo, n0, config.chi, config.seed)?;
        Self::from_initialization(mpo, config, init)
    }

    /// Like [`Engine::new`], but the initial environments are built for
    /// `H + bias` so a degenerate ground space starts on one branch. The
    /// iteration itself uses the unbiased `mpo`.
    pub fn with_bias(mpo: Mpo, config: EngineConfig, bias: &Array2<C64>) -> Result<Self> {
        config.validate()?;
        let d = mpo.phys_dim();
        let n0 = init::sites_for_chi(config.chi, d, config.init_sites);
        let biased = mpo.add_local_term(bias)?;
        let init = initialize(&biased, n0, config.chi, config.seed)?;
        Self::from_initialization(mpo, config, init)
    }

    pub fn from_initialization(mpo: Mpo, config: EngineConfig, init: Initialization) -> Result<Self> {
        config.validate()?;
        let d = mpo.phys_dim();
        let chi = init.lambda.len();
        let norm = init.lambda.iter().map(|v| v * v).sum::<f64>().sqrt();
        // the Schmidt values on the diagonal of every physical slice
        let center = SiteTensor::new(Array3::from_shape_fn((chi, chi, d), |(a, b, _)| {
            if a == b {
                C64::new(init.lambda[a] / norm / (d as f64).sqrt(), 0.0)
            } else {
                C64::new(0.0, 0.0)
            }
        }));
        let state = ConvergenceState {
            a_refer: center.clone(),
            avg_dev: DeviationAverage::new(config.average),
            last_xi: 1.0,
            round: 0,
            energy_history: Vec::new(),
            gamma_floor: config.gamma_floor,
            gamma: 0.0,
            shift: 0.0,
            weight: 1.0,
            last_eigenvalue: None,
            below_tol: 0,
        };
        let rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_1a55);
        Ok(Engine {
            mpo,
            config,
            left: init.left.clone(),
            right: init.right.clone(),
            center,
            state,
            prev_pairs: Vec::new(),
            history: VecDeque::new(),
            prev_q: None,
            recycle_off: false,
            restart: true,
            init_energy: init.rayleigh_quotient(),
            rng,
        })
    }

    pub fn mpo(&self) -> &Mpo {
        &self.mpo
    }
    pub fn config(&self) -> &EngineConfig {
        &self.config
    }
    pub fn config_mut(&mut self) -> &mut EngineConfig {
        &mut self.config
    }
    pub fn state(&self) -> &ConvergenceState {
        &self.state
    }
    pub fn left(&self) -> &Array3<C64> {
        &self.left
    }
    pub fn right(&self) -> &Array3<C64> {
        &self.right
    }
    pub fn center(&self) -> &SiteTensor {
        &self.center
    }
    pub fn bond_dim(&self) -> usize {
        self.left.dim().0
    }
    /// Energy of the initial hole state (equals the exact `n0`-site energy
    /// when no Schmidt values were cut).
    pub fn init_energy(&self) -> f64 {
        self.init_energy
    }
    pub fn converged(&self) -> bool {
        self.state.below_tol >= self.config.window
    }

    pub fn effective_operator(&self) -> Result<EffectiveOperator> {
        EffectiveOperator::from_mpo(&self.left, &self.mpo, &self.right)
    }

    /// Left-orthonormal tensor of the last accepted center.
    pub fn left_isometry(&self) -> Result<SiteTensor> {
        Ok(decompose_site(&self.center, Side::Left)?.0)
    }

    fn random_vector(&mut self, n: usize) -> Array1<C64> {
        Array1::from_shape_fn(n, |_| C64::new(self.rng.random_range(-1.0..1.0), self.rng.random_range(-1.0..1.0)))
    }

    fn preconditioner(&self, op: &EffectiveOperator) -> Option<DavidsonPreconditioner> {
        if self.config.davidson == DavidsonMode::Off || self.prev_pairs.is_empty() {
            return None;
        }
        let n = op.dim();
        if self.prev_pairs[0].vector.len() != n {
            return None;
        }
        let trace = op.trace()?;
        let p = build_davidson(&self.prev_pairs, trace, n, default_shift(self.prev_pairs[0].value)).ok()?;
        match self.config.davidson {
            DavidsonMode::Diagonal => p.with_diagonal(op.diagonal()).ok(),
            _ => Some(p),
        }
    }

    /// One round of the loop.
    pub fn step(&mut self) -> Result<StepReport> {
        let first = self.restart;
        let cfg = self.config.clone();
        let op = self.effective_operator()?;
        let shape = op.site_shape();
        let n = op.dim();
        if self.state.a_refer.shape() != shape {
            return Err(ImpsError::Dimension(format!(
                "reference {:?} does not fit environments {:?}",
                self.state.a_refer.shape(),
                shape
            )));
        }

        // reference pushed toward lambda_L = lambda_R before it becomes A1
        if cfg.enforce_invariance && !first {
            if let Some((ql, qr)) = &self.prev_q {
                if ql.shape() == shape {
                    if let Ok(a) = symmetrize_invariance(&self.state.a_refer, ql, qr).normalized() {
                        self.state.a_refer = a;
                    }
                }
            }
        }
        let a_ref = self.state.a_refer.normalized()?;
        self.state.a_refer = a_ref.clone();
        let ref_vec = a_ref.to_vector();

        let mut seeds = vec![ref_vec.clone()];
        if first {
            let r = self.random_vector(n);
            seeds.push(r);
        } else if !self.recycle_off {
            seeds.extend(self.history.iter().filter(|h| h.len() == n).cloned());
        }
        let gamma_prev = if first || !cfg.gain_function { 0.0 } else { self.state.gamma };
        let precond = if first { None } else { self.preconditioner(&op) };
        let prev_q = self.prev_q.clone().filter(|(q, _)| q.shape() == shape && cfg.enforce_invariance && !first);
        let alter_fn = |cand: &Array1<C64>, basis: &SubspaceBasis| {
            let (ql, qr) = prev_q.as_ref()?;
            alter_basis_invariance(cand, ql, qr, basis)
        };
        let alter: Option<&dyn Fn(&Array1<C64>, &SubspaceBasis) -> Option<Array1<C64>>> =
            if prev_q.is_some() { Some(&alter_fn) } else { None };
        let res = solve_lowest(&op, &seeds, gamma_prev, &cfg.solver, precond.as_ref(), alter)?;
        let basis = &res.basis;
        let h = basis.projected().clone();

        // unconstrained optimum within the basis
        let (vals0, vecs0) = basis.ritz(0.0)?;
        let mut c0 = vecs0.column(0).to_owned();
        let ph = phase_to_real(c0[0]);
        c0.mapv_inplace(|z| z * ph);
        let overlap0 = c0[0].re.clamp(-1.0, 1.0);
        let eps0 = c0.iter().skip(1).map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let delta_a0 = (2.0 - 2.0 * overlap0).max(0.0).sqrt();
        let refer_energy = h[[0, 0]].re;

        let (gamma, c) = if first || !cfg.gain_function {
            (0.0, 1.0)
        } else {
            let c = cfg.c_policy.c(delta_a0);
            let delta_max = self.state.avg_dev.get().map_or(f64::INFINITY, |a| cfg.delta_max_factor * a);
            let target = (c * delta_a0).min(delta_max);
            // distance target -> weight of the orthogonal component
            let target_eps = if target < 2.0 { target * (1.0 - target * target / 4.0).sqrt() } else { 1.0 };
            let two = if eps0 > 1e-300 {
                let mut bvec = c0.clone();
                bvec[0] = C64::new(0.0, 0.0);
                bvec.mapv_inplace(|z| z / eps0);
                let hb = h.dot(&bvec);
                TwoLevel { a: refer_energy, b: inner(&bvec, &hb).re, cx: hb[0].re, eps0 }
            } else {
                TwoLevel { a: refer_energy, b: refer_energy, cx: 0.0, eps0: 0.0 }
            };
            let c_eff = if eps0 > 0.0 { target_eps / eps0 } else { 1.0 };
            (compute_gain_gamma(&two, c_eff, f64::INFINITY, cfg.gamma_floor), c)
        };

        let (_, vecs) = basis.ritz(gamma)?;
        let mut coeff = vecs.column(0).to_owned();
        let ph = phase_to_real(coeff[0]);
        coeff.mapv_inplace(|z| z * ph);
        let mut a_vec = basis.combine(coeff.view());
        let mut eigenvalue = inner(&coeff, &h.dot(&coeff)).re;
        let nrm = vec_norm(&a_vec);
        a_vec.mapv_inplace(|z| z / nrm);
        eigenvalue /= nrm * nrm;
        let mut a = SiteTensor::from_vector(&a_vec, shape)?;
        if cfg.mirror_symmetry {
            a = mirror_symmetrize(&a)?;
            let v = a.to_vector();
            let ph = phase_to_real(inner(&ref_vec, &v));
            a = SiteTensor::new(a.data.mapv(|z| z * ph));
            let v = a.to_vector();
            eigenvalue = inner(&v, &op.apply(&v)).re;
        }
        if !eigenvalue.is_finite() || !all_finite(&a.data) {
            return Err(ImpsError::NonFinite(format!("round {} eigenvector", self.state.round + 1)));
        }
        let delta_a = frobenius(&(&a.data - &a_ref.data));

        let xi = if first || !cfg.smo { 1.0 } else { self.state.avg_dev.weight(delta_a) };
        let (ql, lam_l) = decompose_site(&a, Side::Left)?;
        let (qr, lam_r) = decompose_site(&a, Side::Right)?;
        let invariance_gap = if lam_l.dim() == lam_r.dim() {
            frobenius(&(&lam_l - &lam_r)) / frobenius(&lam_l).max(1e-300)
        } else {
            f64::NAN
        };

        // energy bookkeeping: f_{n+1} - f_n = 2 w_n (e - s_n)
        let energy_per_site = match self.state.last_eigenvalue {
            Some(f_prev) if !first => Some(self.state.shift + (eigenvalue - f_prev) / (2.0 * self.state.weight)),
            _ => None,
        };
        let w = if cfg.smo && !first { xi / (1.0 + xi) } else { 1.0 };
        let shift = if cfg.energy_subtraction { energy_shift(eigenvalue, w) } else { 0.0 };
        let mpo_shifted;
        let wt = if shift != 0.0 {
            mpo_shifted = self.mpo.add_local_term(&identity(shape.2).mapv(|z| z * -shift))?;
            mpo_shifted.bulk()
        } else {
            self.mpo.bulk()
        };
        let l_new = absorb_left(&self.left, &ql, wt)?;
        let r_new = absorb_right(&self.right, &qr, wt)?;
        if cfg.smo && !first {
            let s = 1.0 / (1.0 + xi);
            self.left = (&self.left + &l_new.mapv(|z| z * xi)).mapv(|z| z * s);
            self.right = (&self.right + &r_new.mapv(|z| z * xi)).mapv(|z| z * s);
        } else {
            self.left = l_new;
            self.right = r_new;
        }
        if !all_finite(&self.left) || !all_finite(&self.right) {
            return Err(ImpsError::NonFinite(format!("round {} environments", self.state.round + 1)));
        }

        // bookkeeping for the next round
        if !first {
            self.history.push_front(ref_vec);
            self.history.truncate(cfg.recycle);
        } else {
            self.history.clear();
        }
        self.recycle_off = vals0.len() > 1 && vals0[1] - vals0[0] < 1e-8 * vals0[0].abs().max(1.0);
        self.prev_pairs = (0..vals0.len().min(1 + cfg.solver.n_extra))
            .map(|i| {
                let col = vecs0.column(i);
                RitzPair { value: vals0[i], vector: basis.combine(col), applied: basis.combine_applied(col) }
            })
            .collect();
        self.prev_q = Some((ql, qr));
        self.state.avg_dev.push(delta_a);
        self.state.a_refer = if first {
            a.clone()
        } else {
            SiteTensor::new(&self.state.a_refer.data + &a.data.mapv(|z| z * xi)).normalized()?
        };
        self.state.last_xi = xi;
        self.state.gamma = gamma;
        self.state.shift = shift;
        self.state.weight = w;
        self.state.last_eigenvalue = Some(eigenvalue);
        self.state.round += 1;
        if let Some(e) = energy_per_site {
            self.state.energy_history.push(e);
        }
        self.state.below_tol = if !first && delta_a < cfg.tol { self.state.below_tol + 1 } else { 0 };
        self.center = a;
        self.restart = false;

        Ok(StepReport {
            round: self.state.round,
            energy_per_site,
            eigenvalue,
            refer_energy,
            delta_a,
            delta_a0,
            xi,
            gamma,
            c,
            iterations: res.iterations,
            solver_converged: res.converged,
            shift,
            invariance_gap,
            converged: self.converged(),
        })
    }

    /// Step until converged or `max_rounds` reached, calling `observe` after
    /// every round.
    pub fn run<F: FnMut(&StepReport)>(&mut self, mut observe: F) -> Result<Option<StepReport>> {
        let mut last = None;
        while (self.state.round as usize) < self.config.max_rounds {
            let r = self.step()?;
            observe(&r);
            let done = r.converged;
            last = Some(r);
            if done {
                break;
            }
        }
        Ok(last)
    }

    /// Larger bond dimension: environments and reference are embedded with
    /// `u = [I | 0]`, then the current reference is absorbed once (without
    /// superposition) through isometries completed inside the embedded space.
    /// Returns the Rayleigh quotient of the reference before and after the
    /// embedding.
    pub fn grow_bond_dimension(&mut self, chi_big: usize, noise: f64) -> Result<(f64, f64)> {
        let chi = self.bond_dim();
        if chi_big < chi {
            return Err(ImpsError::Precondition(format!("cannot shrink bond dimension {} to {}", chi, chi_big)));
        }
        let a = self.state.a_refer.normalized()?;
        let op = self.effective_operator()?;
        let v = a.to_vector();
        let before = inner(&v, &op.apply(&v)).re;
        if chi_big == chi {
            return Ok((before, before));
        }
        let d = self.mpo.phys_dim();
        if chi_big > chi * d {
            return Err(ImpsError::Precondition(format!(
                "one growth step can reach at most chi*d = {}, asked for {}",
                chi * d,
                chi_big
            )));
        }
        let a = if noise > 0.0 {
            let r = SiteTensor::random(&mut self.rng, chi, chi, d);
            SiteTensor::new(&a.data + &r.data.mapv(|z| z * noise)).normalized()?
        } else {
            a
        };
        let (l, r, ab) = embed_bond(&self.left, &self.right, &a, chi_big)?;
        let op_big = EffectiveOperator::from_mpo(&l, &self.mpo, &r)?;
        let vb = ab.to_vector();
        let after = inner(&vb, &op_big.apply(&vb)).re;

        let (ql, qr) = growth::completed_isometries(&ab, chi, if noise > 0.0 { Some(&mut self.rng) } else { None })?;
        let shift = if self.config.energy_subtraction { self.state.shift } else { 0.0 };
        let mpo_shifted = self.mpo.add_local_term(&identity(d).mapv(|z| z * -shift))?;
        self.left = absorb_left(&l, &ql, mpo_shifted.bulk())?;
        self.right = absorb_right(&r, &qr, mpo_shifted.bulk())?;
        self.config.chi = chi_big;
        self.state.a_refer = ab.clone();
        self.center = ab;
        self.state.below_tol = 0;
        self.state.last_eigenvalue = None;
        self.prev_pairs.clear();
        self.history.clear();
        self.prev_q = None;
        self.restart = true;
        Ok((before, after))
    }

    /// Insert `p` further copies of the converged left/right isometries into
    /// the environments through a `k`-dimensional Krylov projection.
    pub fn insert_copies(&mut self, p: u64, k: usize) -> Result<()> {
        let (ql, qr) = self
            .prev_q
            .clone()
            .ok_or_else(|| ImpsError::Precondition("no optimized tensor to insert".into()))?;
        if !self.config.energy_subtraction {
            return Err(ImpsError::Precondition("copy insertion needs energy subtraction".into()));
        }
        let shift = self.state.shift;
        let d = self.mpo.phys_dim();
        let shifted = self.mpo.add_local_term(&identity(d).mapv(|z| z * -shift))?;
        let w = shifted.bulk().clone();
        let wl = w.clone();
        self.left = krylov_insert(&self.left, &|e: &Array3<C64>| absorb_left(e, &ql, &wl), p, k)?;
        self.right = krylov_insert(&self.right, &|e: &Array3<C64>| absorb_right(e, &qr, &w), p, k)?;
        self.state.last_eigenvalue = None;
        Ok(())
    }

    /// `<A|H|A>` of the given tensor against the current environments.
    pub fn rayleigh_quotient(&self, a: &SiteTensor) -> Result<f64> {
        let op = self.effective_operator()?;
        let v = a.to_vector();
        let n = inner(&v, &v).re;
        Ok(inner(&v, &op.apply(&v)).re / n)
    }
}

#[cfg(test)]
mod tests;
