//! Binary checkpoints: magic, format version, then the full engine state with
//! every float stored as little-endian `f64` and arrays as shape plus data.

use std::collections::VecDeque;
use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array, Array1, Array3, Array4, Dimension, IxDyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    AverageConstants, ConvergenceState, CPolicy, DavidsonMode, DeviationAverage, Engine, EngineConfig,
};
use crate::eigensolver::{RitzPair, SolveOptions};
use crate::error::{ImpsError, Result};
use crate::mpo::Mpo;
use crate::tensor::{SiteTensor, C64};

pub const MAGIC: &[u8; 8] = b"IMPSCKPT";
pub const VERSION: u32 = 1;

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u64(&mut self, v: u64) {
        self.0.write_u64::<LittleEndian>(v).expect("vec write");
    }
    fn usize(&mut self, v: usize) {
        self.u64(v as u64);
    }
    fn f64(&mut self, v: f64) {
        self.0.write_f64::<LittleEndian>(v).expect("vec write");
    }
    fn bool(&mut self, v: bool) {
        self.u8(v as u8);
    }
    fn opt_f64(&mut self, v: Option<f64>) {
        self.bool(v.is_some());
        self.f64(v.unwrap_or(0.0));
    }
    fn array<D: Dimension>(&mut self, a: &Array<C64, D>) {
        self.u64(a.ndim() as u64);
        for &n in a.shape() {
            self.usize(n);
        }
        for z in a.iter() {
            self.f64(z.re);
            self.f64(z.im);
        }
    }
    fn site(&mut self, a: &SiteTensor) {
        self.array(&a.data);
    }
}

struct Reader<'a>(Cursor<&'a [u8]>);

fn truncated<E>(_: E) -> ImpsError {
    ImpsError::Format("checkpoint is truncated".into())
}

impl<'a> Reader<'a> {
    fn u8(&mut self) -> Result<u8> {
        self.0.read_u8().map_err(truncated)
    }
    fn u64(&mut self) -> Result<u64> {
        self.0.read_u64::<LittleEndian>().map_err(truncated)
    }
    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| ImpsError::Format("size does not fit this platform".into()))
    }
    fn f64(&mut self) -> Result<f64> {
        self.0.read_f64::<LittleEndian>().map_err(truncated)
    }
    fn bool(&mut self) -> Result<bool> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            v => Err(ImpsError::Format(format!("invalid flag byte {}", v))),
        }
    }
    fn opt_f64(&mut self) -> Result<Option<f64>> {
        let some = self.bool()?;
        let v = self.f64()?;
        Ok(some.then_some(v))
    }
    fn array_dyn(&mut self, ndim: usize) -> Result<Array<C64, IxDyn>> {
        let got = self.usize()?;
        if got != ndim {
            return Err(ImpsError::Format(format!("expected a {}-index array, found {}", ndim, got)));
        }
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(self.usize()?);
        }
        let n = shape.iter().try_fold(1usize, |acc, &s| acc.checked_mul(s));
        let n = n.ok_or_else(|| ImpsError::Format("array size overflows".into()))?;
        let remaining = self.0.get_ref().len() as u64 - self.0.position();
        if (n as u64).saturating_mul(16) > remaining {
            return Err(ImpsError::Format("checkpoint is truncated".into()));
        }
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            let re = self.f64()?;
            let im = self.f64()?;
            data.push(C64::new(re, im));
        }
        Ok(Array::from_shape_vec(IxDyn(&shape), data)?)
    }
    fn array1(&mut self) -> Result<Array1<C64>> {
        Ok(self.array_dyn(1)?.into_dimensionality()?)
    }
    fn array3(&mut self) -> Result<Array3<C64>> {
        Ok(self.array_dyn(3)?.into_dimensionality()?)
    }
    fn array4(&mut self) -> Result<Array4<C64>> {
        Ok(self.array_dyn(4)?.into_dimensionality()?)
    }
    fn site(&mut self) -> Result<SiteTensor> {
        Ok(SiteTensor::new(self.array3()?))
    }
}

fn write_config(w: &mut Writer, c: &EngineConfig) {
    w.usize(c.chi);
    w.usize(c.init_sites);
    match c.c_policy {
        CPolicy::Heuristic => {
            w.u8(0);
            w.f64(0.0);
        }
        CPolicy::Constant(v) => {
            w.u8(1);
            w.f64(v);
        }
    }
    w.f64(c.delta_max_factor);
    w.f64(c.gamma_floor);
    w.f64(c.average.decay);
    w.f64(c.average.fresh);
    w.f64(c.average.cap);
    w.bool(c.smo);
    w.bool(c.gain_function);
    w.bool(c.energy_subtraction);
    w.bool(c.enforce_invariance);
    w.bool(c.mirror_symmetry);
    w.usize(c.recycle);
    w.u8(match c.davidson {
        DavidsonMode::Off => 0,
        DavidsonMode::Scalar => 1,
        DavidsonMode::Diagonal => 2,
    });
    w.f64(c.solver.tol);
    w.usize(c.solver.max_iter);
    w.usize(c.solver.max_basis);
    w.usize(c.solver.keep);
    w.usize(c.solver.n_extra);
    w.f64(c.tol);
    w.usize(c.window);
    w.usize(c.max_rounds);
    w.u64(c.seed);
}

fn read_config(r: &mut Reader) -> Result<EngineConfig> {
    let chi = r.usize()?;
    let init_sites = r.usize()?;
    let tag = r.u8()?;
    let cval = r.f64()?;
    let c_policy = match tag {
        0 => CPolicy::Heuristic,
        1 => CPolicy::Constant(cval),
        t => return Err(ImpsError::Format(format!("unknown step policy tag {}", t))),
    };
    let delta_max_factor = r.f64()?;
    let gamma_floor = r.f64()?;
    let average = AverageConstants { decay: r.f64()?, fresh: r.f64()?, cap: r.f64()? };
    let smo = r.bool()?;
    let gain_function = r.bool()?;
    let energy_subtraction = r.bool()?;
    let enforce_invariance = r.bool()?;
    let mirror_symmetry = r.bool()?;
    let recycle = r.usize()?;
    let davidson = match r.u8()? {
        0 => DavidsonMode::Off,
        1 => DavidsonMode::Scalar,
        2 => DavidsonMode::Diagonal,
        t => return Err(ImpsError::Format(format!("unknown preconditioner tag {}", t))),
    };
    let solver = SolveOptions {
        tol: r.f64()?,
        max_iter: r.usize()?,
        max_basis: r.usize()?,
        keep: r.usize()?,
        n_extra: r.usize()?,
    };
    Ok(EngineConfig {
        chi,
        init_sites,
        c_policy,
        delta_max_factor,
        gamma_floor,
        average,
        smo,
        gain_function,
        energy_subtraction,
        enforce_invariance,
        mirror_symmetry,
        recycle,
        davidson,
        solver,
        tol: r.f64()?,
        window: r.usize()?,
        max_rounds: r.usize()?,
        seed: r.u64()?,
    })
}

fn write_state(w: &mut Writer, s: &ConvergenceState) {
    w.site(&s.a_refer);
    w.f64(s.avg_dev.consts.decay);
    w.f64(s.avg_dev.consts.fresh);
    w.f64(s.avg_dev.consts.cap);
    w.u64(s.avg_dev.count);
    w.f64(s.avg_dev.value);
    w.f64(s.last_xi);
    w.u64(s.round);
    w.usize(s.energy_history.len());
    for &e in &s.energy_history {
        w.f64(e);
    }
    w.f64(s.gamma_floor);
    w.f64(s.gamma);
    w.f64(s.shift);
    w.f64(s.weight);
    w.opt_f64(s.last_eigenvalue);
    w.usize(s.below_tol);
}

fn read_state(r: &mut Reader) -> Result<ConvergenceState> {
    let a_refer = r.site()?;
    let consts = AverageConstants { decay: r.f64()?, fresh: r.f64()?, cap: r.f64()? };
    let avg_dev = DeviationAverage { consts, count: r.u64()?, value: r.f64()? };
    let last_xi = r.f64()?;
    let round = r.u64()?;
    let n = r.usize()?;
    let mut energy_history = Vec::with_capacity(n.min(1 << 20));
    for _ in 0..n {
        energy_history.push(r.f64()?);
    }
    Ok(ConvergenceState {
        a_refer,
        avg_dev,
        last_xi,
        round,
        energy_history,
        gamma_floor: r.f64()?,
        gamma: r.f64()?,
        shift: r.f64()?,
        weight: r.f64()?,
        last_eigenvalue: r.opt_f64()?,
        below_tol: r.usize()?,
    })
}

/// Serialize the complete engine, including solver history and RNG position.
pub fn checkpoint(engine: &Engine) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.0.write_u32::<LittleEndian>(VERSION).expect("vec write");
    write_config(&mut w, &engine.config);
    w.array(engine.mpo.bulk());
    w.array(&engine.left);
    w.array(&engine.right);
    w.site(&engine.center);
    write_state(&mut w, &engine.state);
    w.usize(engine.prev_pairs.len());
    for p in &engine.prev_pairs {
        w.f64(p.value);
        w.array(&p.vector);
        w.array(&p.applied);
    }
    w.usize(engine.history.len());
    for h in &engine.history {
        w.array(h);
    }
    match &engine.prev_q {
        Some((ql, qr)) => {
            w.bool(true);
            w.site(ql);
            w.site(qr);
        }
        None => w.bool(false),
    }
    w.bool(engine.recycle_off);
    w.bool(engine.restart);
    w.f64(engine.init_energy);
    w.0.extend_from_slice(&engine.rng.get_seed());
    w.u64(engine.rng.get_stream());
    let pos = engine.rng.get_word_pos();
    w.u64(pos as u64);
    w.u64((pos >> 64) as u64);
    w.0
}

/// Inverse of [`checkpoint`].
pub fn restore(bytes: &[u8]) -> Result<Engine> {
    if bytes.len() < 12 || &bytes[..8] != MAGIC {
        return Err(ImpsError::Format("not a checkpoint file (bad magic)".into()));
    }
    let mut r = Reader(Cursor::new(bytes));
    r.0.set_position(8);
    let version = r.0.read_u32::<LittleEndian>().map_err(truncated)?;
    if version != VERSION {
        return Err(ImpsError::Format(format!(
            "checkpoint version {} is not supported (expected {})",
            version, VERSION
        )));
    }
    let config = read_config(&mut r)?;
    let mpo = Mpo::from_bulk(r.array4()?)?;
    let left = r.array3()?;
    let right = r.array3()?;
    let center = r.site()?;
    let state = read_state(&mut r)?;
    let n = r.usize()?;
    let mut prev_pairs = Vec::new();
    for _ in 0..n {
        let value = r.f64()?;
        prev_pairs.push(RitzPair { value, vector: r.array1()?, applied: r.array1()? });
    }
    let n = r.usize()?;
    let mut history = VecDeque::new();
    for _ in 0..n {
        history.push_back(r.array1()?);
    }
    let prev_q = if r.bool()? { Some((r.site()?, r.site()?)) } else { None };
    let recycle_off = r.bool()?;
    let restart = r.bool()?;
    let init_energy = r.f64()?;
    let mut seed = [0u8; 32];
    r.0.read_exact(&mut seed).map_err(truncated)?;
    let stream = r.u64()?;
    let lo = r.u64()? as u128;
    let hi = r.u64()? as u128;
    if (r.0.position() as usize) != bytes.len() {
        return Err(ImpsError::Format("trailing bytes after checkpoint".into()));
    }
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(stream);
    rng.set_word_pos(lo | (hi << 64));

    let chi = center.chi_l();
    let m = mpo.bond_dim();
    if left.dim() != (chi, m, chi) || right.dim() != (chi, m, chi) || center.shape() != (chi, chi, mpo.phys_dim()) {
        return Err(ImpsError::Format("checkpoint tensors have inconsistent shapes".into()));
    }
    Ok(Engine {
        mpo,
        config,
        left,
        right,
        center,
        state,
        prev_pairs,
        history,
        prev_q,
        recycle_off,
        restart,
        init_energy,
        rng,
    })
}

impl Engine {
    pub fn to_bytes(&self) -> Vec<u8> {
        checkpoint(self)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        restore(bytes)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, checkpoint(self))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        restore(&std::fs::read(path)?)
    }
}
