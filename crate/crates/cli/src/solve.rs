use std::path::Path;

use imps_core::analysis::{self, UniformMps, PERIOD_TOL};
use imps_core::engine::{Engine, StepReport};
use imps_core::mpo::{ops, ExpSumFit};
use rayon::prelude::*;

use crate::config::{self, RunConfig};
use crate::output::{num, out_dir, Stream, Table};
use crate::{CliError, Overrides};

const REPORT_COLUMNS: &[&str] = &[
    "round",
    "energy_estimate",
    "eigenvalue",
    "delta_a",
    "xi",
    "gamma",
    "c",
    "iterations",
    "shift",
    "invariance_gap",
];

fn report_row(r: &StepReport) -> Vec<String> {
    vec![
        r.round.to_string(),
        r.energy_per_site.map_or("nan".into(), num),
        num(r.eigenvalue),
        num(r.delta_a),
        num(r.xi),
        num(r.gamma),
        num(r.c),
        r.iterations.to_string(),
        num(r.shift),
        num(r.invariance_gap),
    ]
}

/// Quantities of the state an engine currently holds.
#[derive(Clone, Debug)]
pub struct Summary {
    pub rounds: u64,
    pub energy: f64,
    pub q: usize,
    pub entropy: f64,
    pub density: f64,
    pub delta_a: f64,
    pub converged: bool,
}

pub fn summarize(engine: &Engine) -> Result<Summary, CliError> {
    let mps = UniformMps::from_center(engine.center())?;
    let energy = analysis::energy_per_site(&mps.ql, engine.mpo())?;
    // an unconverged state may have no clean unimodular eigenvalue
    let q = analysis::period(&mps, PERIOD_TOL).unwrap_or(0);
    let d = mps.phys_dim();
    let density = analysis::average_density(&mps, &ops::number(d - 1), q)?;
    Ok(Summary {
        rounds: engine.state().round,
        energy,
        q,
        entropy: analysis::entanglement_entropy(&mps.center)?,
        density,
        delta_a: engine.state().avg_dev.get().unwrap_or(f64::NAN),
        converged: engine.converged(),
    })
}

fn apply_overrides(cfg: &mut RunConfig, o: &Overrides) {
    if let Some(s) = o.seed {
        cfg.run.seed = s;
    }
    if let Some(c) = o.chi {
        cfg.engine.chi = Some(c);
    }
    if let Some(m) = o.max_rounds {
        cfg.engine.max_rounds = Some(m);
    }
    if let Some(d) = &o.out {
        cfg.output.dir = Some(d.clone());
    }
}

fn load_config(o: &Overrides) -> Result<Option<RunConfig>, CliError> {
    match &o.config {
        Some(p) => {
            let mut c = config::load(p)?;
            apply_overrides(&mut c, o);
            Ok(Some(c))
        }
        None => Ok(None),
    }
}

fn new_engine(cfg: &RunConfig, fit: Option<&ExpSumFit>) -> Result<Engine, CliError> {
    let mpo = cfg.build_mpo(fit)?;
    let ec = cfg.engine_config();
    Ok(match cfg.bias() {
        Some(b) => Engine::with_bias(mpo, ec, &b)?,
        None => Engine::new(mpo, ec)?,
    })
}

/// Step until converged or out of rounds; `each` sees every report.
fn drive(engine: &mut Engine, mut each: impl FnMut(&Engine, &StepReport) -> Result<(), CliError>) -> Result<(), CliError> {
    while !engine.converged() && (engine.state().round as usize) < engine.config().max_rounds {
        let r = engine.step()?;
        each(engine, &r)?;
    }
    Ok(())
}

pub fn cmd_solve(o: &Overrides, resume: Option<&Path>) -> Result<(), CliError> {
    let cfg = load_config(o)?;
    let (mut engine, header) = match resume {
        Some(path) => {
            let mut e = Engine::load(path).map_err(|err| CliError::Usage(format!("resume {}: {}", path.display(), err)))?;
            if let Some(m) = o.max_rounds.or(cfg.as_ref().and_then(|c| c.engine.max_rounds)) {
                e.config_mut().max_rounds = m;
            }
            if let Some(chi) = o.chi {
                grow_to(&mut e, chi)?;
            }
            let mut h = format!("# resumed from {} at round {}\n", path.display(), e.state().round);
            if let Some(c) = &cfg {
                h.push_str(&c.echo());
            }
            (e, h)
        }
        None => {
            let c = cfg
                .as_ref()
                .ok_or_else(|| CliError::Usage("solve needs --config (or --resume)".into()))?;
            (new_engine(c, None)?, c.echo())
        }
    };
    let dir = out_dir(o.out.as_deref().or(cfg.as_ref().and_then(|c| c.output.dir.as_deref())))?;
    let every = cfg.as_ref().map_or(0, |c| c.output.checkpoint_every);
    let ckpt = dir.join("state.ckpt");
    let mut stream = Stream::create(&dir.join("report.csv"), &header, REPORT_COLUMNS, resume.is_some())?;
    drive(&mut engine, |e, r| {
        stream.row(&report_row(r))?;
        if every > 0 && r.round % every as u64 == 0 {
            e.save(&ckpt)?;
        }
        Ok(())
    })?;
    engine.save(&ckpt)?;

    let s = summarize(&engine)?;
    let mut table = Table::new(header.clone(), &["rounds", "energy_per_site", "q", "density", "entropy_bits", "delta_a", "converged"]);
    table.push(&[
        s.rounds.to_string(),
        num(s.energy),
        s.q.to_string(),
        num(s.density),
        num(s.entropy),
        num(s.delta_a),
        s.converged.to_string(),
    ]);
    table.write(&dir.join("summary.csv"))?;
    write_center(&engine, &header, &dir.join("center.csv"))?;

    println!("rounds          {}", s.rounds);
    println!("energy_per_site {}", num(s.energy));
    println!("period          {}", s.q);
    println!("entropy_bits    {}", num(s.entropy));
    println!("converged       {}", s.converged);
    println!("output          {}", dir.display());
    if !s.energy.is_finite() {
        return Err(CliError::Failure("energy is not finite".into()));
    }
    if !s.converged {
        return Err(CliError::Failure(format!("not converged after {} rounds", s.rounds)));
    }
    Ok(())
}

fn grow_to(e: &mut Engine, chi: usize) -> Result<(), CliError> {
    let d = e.mpo().phys_dim();
    while e.bond_dim() < chi {
        let next = chi.min(e.bond_dim() * d);
        e.grow_bond_dimension(next, 0.0)?;
    }
    if e.bond_dim() > chi {
        return Err(CliError::Usage(format!("checkpoint has chi = {}, cannot shrink to {}", e.bond_dim(), chi)));
    }
    Ok(())
}

fn write_center(engine: &Engine, header: &str, path: &Path) -> Result<(), CliError> {
    let a = engine.center();
    let mut t = Table::new(header.to_string(), &["alpha_l", "alpha_r", "s", "re", "im"]);
    for ((i, j, s), z) in a.data.indexed_iter() {
        t.push(&[i.to_string(), j.to_string(), s.to_string(), num(z.re), num(z.im)]);
    }
    t.write(path)
}

pub fn cmd_sweep(o: &Overrides, workers: Option<usize>) -> Result<(), CliError> {
    let cfg = load_config(o)?.ok_or_else(|| CliError::Usage("sweep needs --config".into()))?;
    let sweep = cfg.sweep.clone().ok_or_else(|| CliError::Usage("config has no [sweep] section".into()))?;
    let workers = workers.or(cfg.run.workers).unwrap_or(0);
    let fit = cfg.kernel_fit()?;
    let points: Vec<(f64, f64)> = sweep
        .t
        .values()
        .into_iter()
        .flat_map(|t| sweep.mu.values().into_iter().map(move |mu| (t, mu)))
        .collect();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Usage(format!("worker pool: {}", e)))?;
    let results: Vec<Result<Summary, String>> = pool.install(|| {
        points
            .par_iter()
            .map(|&(t, mu)| {
                let pc = cfg.at_point(t, mu);
                let mut e = new_engine(&pc, fit.as_ref()).map_err(|e| e.to_string())?;
                drive(&mut e, |_, _| Ok(())).map_err(|e| e.to_string())?;
                summarize(&e).map_err(|e| e.to_string())
            })
            .collect()
    });

    let dir = out_dir(cfg.output.dir.as_deref())?;
    let mut table = Table::new(
        cfg.echo(),
        &["t", "mu", "rho", "q", "energy_per_site", "entropy_bits", "converged", "rounds"],
    );
    let mut failed = 0;
    for (&(t, mu), r) in points.iter().zip(&results) {
        match r {
            Ok(s) => {
                if !s.converged {
                    failed += 1;
                }
                table.push(&[
                    num(t),
                    num(mu),
                    num(s.density),
                    s.q.to_string(),
                    num(s.energy),
                    num(s.entropy),
                    s.converged.to_string(),
                    s.rounds.to_string(),
                ]);
            }
            Err(msg) => {
                failed += 1;
                eprintln!("imps: point t={} mu={}: {}", t, mu, msg);
                let nan = num(f64::NAN);
                table.push(&[num(t), num(mu), nan.clone(), "0".into(), nan.clone(), nan, "false".into(), "0".into()]);
            }
        }
    }
    let path = dir.join("sweep.csv");
    table.write(&path)?;
    println!("{} points, {} unconverged -> {}", points.len(), failed, path.display());
    if failed > 0 {
        return Err(CliError::Failure(format!("{} of {} points did not converge", failed, points.len())));
    }
    Ok(())
}
