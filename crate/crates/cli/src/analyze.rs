use std::path::Path;

use imps_core::analysis::{self, TransferSide, UniformMps, PERIOD_TOL};
use imps_core::engine::Engine;
use imps_core::tensor::C64;
use ndarray::Array2;

use crate::config::operator;
use crate::output::{num, Table};
use crate::CliError;

/// One parsed `--request`.
#[derive(Clone, Debug, PartialEq)]
pub enum Request {
    Energy,
    Entropy,
    Period,
    Spectrum(usize),
    Profile { len: usize, op: String },
    Corr { a: String, b: String, from: usize, to: usize, connected: bool },
    Luttinger { from: usize, to: usize, rho0: Option<f64> },
    Select { op: String, len: usize },
}

fn range(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once("..").ok_or_else(|| format!("expected R1..R2, got {:?}", s))?;
    let a: usize = a.parse().map_err(|_| format!("bad range start {:?}", a))?;
    let b: usize = b.parse().map_err(|_| format!("bad range end {:?}", b))?;
    if a == 0 || b < a {
        return Err(format!("range {}..{} must satisfy 1 <= R1 <= R2", a, b));
    }
    Ok((a, b))
}

fn pair(s: &str) -> Result<(String, String), String> {
    match s {
        "nn" => Ok(("n".into(), "n".into())),
        "cc" => Ok(("bdag".into(), "b".into())),
        "zz" => Ok(("sz".into(), "sz".into())),
        _ => s
            .split_once('-')
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .ok_or_else(|| format!("expected A-B or nn/cc/zz, got {:?}", s)),
    }
}

pub fn parse_request(s: &str) -> Result<Request, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let num_arg = |i: usize, default: usize| -> Result<usize, String> {
        parts.get(i).map_or(Ok(default), |p| p.parse().map_err(|_| format!("bad number {:?} in {:?}", p, s)))
    };
    match parts[0] {
        "energy" if parts.len() == 1 => Ok(Request::Energy),
        "entropy" if parts.len() == 1 => Ok(Request::Entropy),
        "period" if parts.len() == 1 => Ok(Request::Period),
        "spectrum" if parts.len() <= 2 => Ok(Request::Spectrum(num_arg(1, 6)?)),
        "profile" if parts.len() <= 3 => Ok(Request::Profile {
            len: num_arg(1, 8)?,
            op: parts.get(2).unwrap_or(&"n").to_string(),
        }),
        "corr" if (3..=4).contains(&parts.len()) => {
            let (a, b) = pair(parts[1])?;
            let (from, to) = range(parts[2])?;
            let connected = match parts.get(3) {
                None => false,
                Some(&"connected") => true,
                Some(x) => return Err(format!("unknown corr flag {:?}", x)),
            };
            Ok(Request::Corr { a, b, from, to, connected })
        }
        "luttinger" if (2..=3).contains(&parts.len()) => {
            let (from, to) = range(parts[1])?;
            let rho0 = match parts.get(2) {
                Some(p) => Some(p.parse().map_err(|_| format!("bad density {:?}", p))?),
                None => None,
            };
            Ok(Request::Luttinger { from, to, rho0 })
        }
        "select" if (2..=3).contains(&parts.len()) => Ok(Request::Select { op: parts[1].to_string(), len: num_arg(2, 8)? }),
        _ => Err(format!("unknown request {:?}", s)),
    }
}

impl Request {
    fn file_name(&self) -> String {
        match self {
            Request::Energy => "energy.csv".into(),
            Request::Entropy => "entropy.csv".into(),
            Request::Period => "period.csv".into(),
            Request::Spectrum(_) => "spectrum.csv".into(),
            Request::Profile { op, .. } => format!("profile_{}.csv", op),
            Request::Corr { a, b, connected, .. } => {
                format!("corr_{}_{}{}.csv", a, b, if *connected { "_connected" } else { "" })
            }
            Request::Luttinger { .. } => "luttinger.csv".into(),
            Request::Select { op, .. } => format!("select_{}.csv", op),
        }
    }
}

struct Context<'a> {
    engine: &'a Engine,
    mps: UniformMps,
    header: String,
}

impl Context<'_> {
    fn op(&self, name: &str) -> Result<Array2<C64>, CliError> {
        operator(name, self.mps.phys_dim()).map_err(CliError::Usage)
    }

    fn period(&self) -> Result<usize, CliError> {
        Ok(analysis::period(&self.mps, PERIOD_TOL)?)
    }

    fn scalar(&self, name: &'static str, value: String) -> Table {
        let mut t = Table::new(self.header.clone(), &[name]);
        t.push(&[value]);
        t
    }

    fn run(&self, req: &Request) -> Result<Table, CliError> {
        Ok(match req {
            Request::Energy => self.scalar("energy_per_site", num(analysis::energy_per_site(&self.mps.ql, self.engine.mpo())?)),
            Request::Entropy => self.scalar("entropy_bits", num(analysis::entanglement_entropy(&self.mps.center)?)),
            Request::Period => self.scalar("q", self.period()?.to_string()),
            Request::Spectrum(n) => {
                let sp = analysis::transfer_matrix(&self.mps.ql, TransferSide::Left).spectrum()?;
                let mut t = Table::new(self.header.clone(), &["index", "re", "im", "modulus", "correlation_length"]);
                for (i, z) in sp.iter().take(*n).enumerate() {
                    let m = z.norm();
                    t.push(&[i.to_string(), num(z.re), num(z.im), num(m), num(-1.0 / m.ln())]);
                }
                t
            }
            Request::Profile { len, op } => {
                let p = analysis::density_profile(&self.mps, &self.op(op)?, *len)?;
                let mut t = Table::new(self.header.clone(), &["site", "value"]);
                for (j, v) in p.iter().enumerate() {
                    t.push(&[j.to_string(), num(*v)]);
                }
                t
            }
            Request::Corr { a, b, from, to, connected } => {
                let s = analysis::correlation(&self.mps, (a, &self.op(a)?), (b, &self.op(b)?), *to, *connected)?;
                let mut t = Table::new(self.header.clone(), &["r", "value"]);
                for (r, v) in s.r.iter().zip(&s.values).filter(|(r, _)| **r >= *from) {
                    t.push(&[r.to_string(), num(*v)]);
                }
                t
            }
            Request::Luttinger { from, to, rho0 } => {
                let n = self.op("n")?;
                let rho0 = match rho0 {
                    Some(r) => *r,
                    None => analysis::average_density(&self.mps, &n, self.period()?)?,
                };
                let nn = analysis::correlation(&self.mps, ("n", &n), ("n", &n), *to, false)?;
                let cc = analysis::correlation(&self.mps, ("bdag", &self.op("bdag")?), ("b", &self.op("b")?), *to, false)?;
                let f = analysis::fit_luttinger(&nn, &cc, rho0, (*from, *to))?;
                let mut t = Table::new(
                    self.header.clone(),
                    &["rho0", "k_nn", "const1", "residual_nn", "k_cc", "const2", "residual_cc"],
                );
                t.push(&[num(rho0), num(f.k_nn), num(f.const1), num(f.residual_nn), num(f.k_cc), num(f.const2), num(f.residual_cc)]);
                t
            }
            Request::Select { op, len } => {
                let o = self.op(op)?;
                let sel = analysis::select_ground_state(&self.mps.ql, &self.mps.qr, &self.mps.center, &o, 1e-8)?;
                let chosen = self.mps.with_center(sel.gamma.clone())?;
                let p = analysis::density_profile(&chosen, &o, *len)?;
                let header = format!(
                    "{}# selected value {} over a {}-dimensional space{}\n",
                    self.header,
                    num(sel.value),
                    sel.dimension,
                    if sel.degenerate { " (degenerate optimum)" } else { "" }
                );
                let mut t = Table::new(header, &["site", "value"]);
                for (j, v) in p.iter().enumerate() {
                    t.push(&[j.to_string(), num(*v)]);
                }
                t
            }
        })
    }
}

pub fn cmd_analyze(checkpoint: &Path, requests: &[String], out: Option<&Path>) -> Result<(), CliError> {
    let reqs: Vec<Request> = requests
        .iter()
        .map(|r| parse_request(r).map_err(CliError::Usage))
        .collect::<Result<_, _>>()?;
    let engine = Engine::load(checkpoint).map_err(|e| CliError::Usage(format!("{}: {}", checkpoint.display(), e)))?;
    let header = format!(
        "# checkpoint {} round {} chi {} converged {}\n",
        checkpoint.display(),
        engine.state().round,
        engine.bond_dim(),
        engine.converged()
    );
    let ctx = Context { mps: UniformMps::from_center(engine.center())?, engine: &engine, header };
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Usage(format!("cannot create {}: {}", dir.display(), e)))?;
    }
    for (i, req) in reqs.iter().enumerate() {
        let table = ctx.run(req)?;
        match out {
            Some(dir) => table.write(&dir.join(req.file_name()))?,
            None => {
                if i > 0 {
                    println!();
                }
                print!("{}", table.render());
            }
        }
    }
    Ok(())
}
