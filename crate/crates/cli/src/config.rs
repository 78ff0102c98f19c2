//! Run configuration: a TOML file with `[model]`, `[engine]`, `[sweep]`,
//! `[output]` and `[run]` sections. Every field except the model kind has a
//! default.

use std::path::{Path, PathBuf};

use imps_core::engine::{CPolicy, DavidsonMode, EngineConfig};
use imps_core::eigensolver::SolveOptions;
use imps_core::mpo::{self, ops, ExpSumFit, Mpo};
use imps_core::tensor::C64;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelKind,
    #[serde(default)]
    pub engine: EngineSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub run: RunSection,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelKind {
    /// `-J sum sz sz - h sum sx`
    Ising {
        #[serde(default = "one")]
        j: f64,
        h: f64,
    },
    Heisenberg {
        jx: f64,
        jy: f64,
        jz: f64,
    },
    ExpDecay {
        #[serde(default = "one")]
        j: f64,
        lambda: f64,
    },
    /// Bose-Hubbard chain with a `V / r^3` density tail.
    Dipolar {
        #[serde(default = "one")]
        v: f64,
        #[serde(default)]
        u: f64,
        #[serde(default)]
        mu: f64,
        #[serde(default)]
        t: f64,
        #[serde(default = "one_usize")]
        n_max: usize,
        #[serde(default = "default_n_exp")]
        n_exp: usize,
        #[serde(default = "default_r_max")]
        r_max: usize,
    },
}

fn one() -> f64 {
    1.0
}
fn one_usize() -> usize {
    1
}
fn default_n_exp() -> usize {
    8
}
fn default_r_max() -> usize {
    1000
}

#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct EngineSection {
    pub chi: Option<usize>,
    /// Field `-init_bias * init_bias_op` added only while building the
    /// initial state.
    pub init_bias: Option<f64>,
    pub init_bias_op: Option<String>,
    pub init_sites: Option<usize>,
    /// Constant step fraction; the heuristic policy when absent.
    pub c: Option<f64>,
    pub delta_max_factor: Option<f64>,
    pub gamma_floor: Option<f64>,
    pub smo: Option<bool>,
    pub gain_function: Option<bool>,
    pub energy_subtraction: Option<bool>,
    pub enforce_invariance: Option<bool>,
    pub mirror_symmetry: Option<bool>,
    pub recycle: Option<usize>,
    /// "off", "scalar" or "diagonal".
    pub davidson: Option<String>,
    pub solver_tol: Option<f64>,
    pub solver_max_iter: Option<usize>,
    pub solver_max_basis: Option<usize>,
    pub tol: Option<f64>,
    pub window: Option<usize>,
    pub max_rounds: Option<usize>,
}

/// A list of values or an inclusive linear range.
#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(untagged)]
pub enum Grid {
    List(Vec<f64>),
    Range { from: f64, to: f64, count: usize },
}

impl Grid {
    pub fn values(&self) -> Vec<f64> {
        match self {
            Grid::List(v) => v.clone(),
            Grid::Range { from, to, count } => match count {
                0 => Vec::new(),
                1 => vec![*from],
                n => (0..*n).map(|i| from + (to - from) * i as f64 / (*n - 1) as f64).collect(),
            },
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub t: Grid,
    pub mu: Grid,
}

#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
    /// Write a checkpoint every this many rounds (0: only at the end).
    #[serde(default)]
    pub checkpoint_every: usize,
}

#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(default)]
    pub seed: u64,
    /// Not echoed: results must not depend on it.
    #[serde(default, skip_serializing)]
    pub workers: Option<usize>,
}

pub fn load(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {}", path.display(), e)))?;
    parse(&text).map_err(|e| match e {
        CliError::Usage(m) => CliError::Usage(format!("{}: {}", path.display(), m)),
        other => other,
    })
}

pub fn parse(text: &str) -> Result<RunConfig, CliError> {
    let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Usage(describe(text, &e)))?;
    cfg.check()?;
    Ok(cfg)
}

/// `toml` reports byte spans; turn them into a line number.
fn describe(text: &str, e: &toml::de::Error) -> String {
    let msg = e.message().trim().to_string();
    match e.span() {
        Some(span) => {
            let line = text[..span.start.min(text.len())].matches('\n').count() + 1;
            format!("line {}: {}", line, msg)
        }
        None => msg,
    }
}

impl RunConfig {
    fn check(&self) -> Result<(), CliError> {
        if let Some(op) = &self.engine.init_bias_op {
            operator(op, self.phys_dim()).map_err(CliError::Usage)?;
        }
        if let Some(sw) = &self.sweep {
            if !matches!(self.model, ModelKind::Dipolar { .. }) {
                return Err(CliError::Usage("[sweep] needs model kind \"dipolar\" (grids over t and mu)".into()));
            }
            if sw.t.values().is_empty() || sw.mu.values().is_empty() {
                return Err(CliError::Usage("sweep grids must be non-empty".into()));
            }
        }
        if let Some(d) = &self.engine.davidson {
            davidson_mode(d)?;
        }
        self.engine_config().validate().map_err(|e| CliError::Usage(e.to_string()))
    }

    pub fn phys_dim(&self) -> usize {
        match self.model {
            ModelKind::Dipolar { n_max, .. } => n_max + 1,
            _ => 2,
        }
    }

    pub fn engine_config(&self) -> EngineConfig {
        let e = &self.engine;
        let base = EngineConfig::default();
        EngineConfig {
            chi: e.chi.unwrap_or(base.chi),
            init_sites: e.init_sites.unwrap_or(base.init_sites),
            c_policy: e.c.map_or(CPolicy::Heuristic, CPolicy::Constant),
            delta_max_factor: e.delta_max_factor.unwrap_or(base.delta_max_factor),
            gamma_floor: e.gamma_floor.unwrap_or(base.gamma_floor),
            average: base.average,
            smo: e.smo.unwrap_or(base.smo),
            gain_function: e.gain_function.unwrap_or(base.gain_function),
            energy_subtraction: e.energy_subtraction.unwrap_or(base.energy_subtraction),
            enforce_invariance: e.enforce_invariance.unwrap_or(base.enforce_invariance),
            mirror_symmetry: e.mirror_symmetry.unwrap_or(base.mirror_symmetry),
            recycle: e.recycle.unwrap_or(base.recycle),
            davidson: e.davidson.as_deref().map_or(base.davidson, |d| davidson_mode(d).unwrap_or(base.davidson)),
            solver: SolveOptions {
                tol: e.solver_tol.unwrap_or(base.solver.tol),
                max_iter: e.solver_max_iter.unwrap_or(base.solver.max_iter),
                max_basis: e.solver_max_basis.unwrap_or(base.solver.max_basis),
                ..base.solver
            },
            tol: e.tol.unwrap_or(base.tol),
            window: e.window.unwrap_or(base.window),
            max_rounds: e.max_rounds.unwrap_or(base.max_rounds),
            seed: self.run.seed,
        }
    }

    /// Copy with the dipolar `t` and `mu` replaced.
    pub fn at_point(&self, t_new: f64, mu_new: f64) -> RunConfig {
        let mut c = self.clone();
        if let ModelKind::Dipolar { t, mu, .. } = &mut c.model {
            *t = t_new;
            *mu = mu_new;
        }
        c.sweep = None;
        c
    }

    pub fn build_mpo(&self, fit_cache: Option<&ExpSumFit>) -> Result<Mpo, CliError> {
        let fail = |e: imps_core::error::ImpsError| CliError::Usage(format!("model: {}", e));
        Ok(match self.model {
            ModelKind::Ising { j, h } => mpo::build_ising_mpo(j, h),
            ModelKind::Heisenberg { jx, jy, jz } => mpo::build_heisenberg_mpo(jx, jy, jz),
            ModelKind::ExpDecay { j, lambda } => mpo::build_exp_decay_mpo(j, lambda).map_err(fail)?,
            ModelKind::Dipolar { v, u, mu, t, n_max, .. } => {
                let fit = match fit_cache {
                    Some(f) => f.clone(),
                    None => self.kernel_fit()?.expect("dipolar model has a kernel"),
                };
                mpo::build_dipolar_bose_hubbard_mpo(v, u, mu, t, n_max, &fit).map_err(fail)?
            }
        })
    }

    /// The `1/r^3` exponential-sum fit of a dipolar model.
    pub fn kernel_fit(&self) -> Result<Option<ExpSumFit>, CliError> {
        match self.model {
            ModelKind::Dipolar { n_exp, r_max, .. } => mpo::fit_power_law(3.0, n_exp, r_max)
                .map(Some)
                .map_err(|e| CliError::Usage(format!("kernel fit: {}", e))),
            _ => Ok(None),
        }
    }

    pub fn bias(&self) -> Option<Array2<C64>> {
        let bias = self.engine.init_bias.unwrap_or(0.0);
        if bias == 0.0 {
            return None;
        }
        let name = self.engine.init_bias_op.as_deref().unwrap_or(match self.model {
            ModelKind::Dipolar { .. } => "n",
            _ => "sz",
        });
        let op = operator(name, self.phys_dim()).ok()?;
        Some(op.mapv(|z| z * -bias))
    }

    /// The effective configuration as `# `-prefixed lines.
    pub fn echo(&self) -> String {
        let text = toml::to_string(self).unwrap_or_default();
        text.lines().map(|l| format!("# {}\n", l)).collect()
    }
}

fn davidson_mode(s: &str) -> Result<DavidsonMode, CliError> {
    match s {
        "off" => Ok(DavidsonMode::Off),
        "scalar" => Ok(DavidsonMode::Scalar),
        "diagonal" => Ok(DavidsonMode::Diagonal),
        other => Err(CliError::Usage(format!("unknown davidson mode {:?} (off, scalar, diagonal)", other))),
    }
}

/// Single-site operator by name. Boson names work for any dimension, Pauli
/// names only for `d = 2`.
pub fn operator(name: &str, d: usize) -> Result<Array2<C64>, String> {
    let pauli = |m: Array2<C64>| if d == 2 { Ok(m) } else { Err(format!("operator {} needs d = 2, state has d = {}", name, d)) };
    match name {
        "n" => Ok(ops::number(d - 1)),
        "b" => Ok(ops::annihilate(d - 1)),
        "bdag" => Ok(ops::create(d - 1)),
        "id" => Ok(ops::id(d)),
        "sx" => pauli(ops::sx()),
        "sy" => pauli(ops::sy()),
        "sz" => pauli(ops::sz()),
        other => Err(format!("unknown operator {:?} (n, b, bdag, id, sx, sy, sz)", other)),
    }
}
