use std::path::Path;

use gyrochap_core::demchenko::ClosedForm;
use gyrochap_core::hamiltonization::hamiltonization_equivalence;
use gyrochap_core::integrals::{drift_report, integral_suite};
use gyrochap_core::integrator::Sampling;
use gyrochap_core::model::{hamiltonian, random_state};
use gyrochap_core::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{self, Config, Flow};
use crate::output::{fmt_f64, Staged};
use crate::simulate::{integrate_reduced, options};
use crate::{pool, Failure};

#[derive(Debug, Clone, Serialize)]
pub struct RunRow {
    pub run: usize,
    pub seed: u64,
    pub h: f64,
    pub max_drift: f64,
    /// sup |γ_reduced − γ_twisted| after the time change (symmetric family only).
    pub equivalence_gamma: Option<f64>,
    /// sup |u_closed − u_numeric| (isotropic n = 3, 4 only).
    pub closed_form_u: Option<f64>,
    /// Why a comparison was skipped.
    pub note: Option<String>,
}

#[derive(Debug, Serialize)]
pub struct CompareOut {
    pub seed: u64,
    pub runs: Vec<RunRow>,
    pub worst_drift: f64,
    pub worst_equivalence_gamma: Option<f64>,
    pub worst_closed_form_u: Option<f64>,
}

fn worst<F: Fn(&RunRow) -> Option<f64>>(rows: &[RunRow], f: F) -> Option<f64> {
    rows.iter().filter_map(f).reduce(f64::max)
}

fn one(cfg: &Config, run: usize, seed: u64) -> Result<RunRow, Failure> {
    let sys = cfg.system.resolve()?;
    let spec = &sys.spec;
    let n = spec.n();
    let init = if run == 0 && cfg.initial.is_some() {
        config::initial_state(cfg, n, seed)?
    } else {
        random_state(&mut ChaCha8Rng::seed_from_u64(seed), n, cfg.compare.p_scale)
    };
    let grid = cfg.run.grid();
    let opts = options(cfg).with_sampling(Sampling::Times(grid.clone()));
    let tr = integrate_reduced(&sys, Flow::Reduced, &init, *grid.last().unwrap(), &opts)?;
    let drift = drift_report(&tr, &integral_suite(spec))?;
    let mut notes = Vec::new();

    let equivalence_gamma = if spec.in_symmetric_family() {
        let r = hamiltonization_equivalence(spec, &init, cfg.run.t_end, grid.len().clamp(2, 2000), &options(cfg))?;
        Some(r.gamma_discrepancy)
    } else {
        None
    };

    let closed_form_u = match &sys.demchenko {
        Some(ds) if n == 3 || n == 4 => match ClosedForm::new(ds, &init) {
            Ok(cf) => {
                let mut sup: f64 = 0.0;
                for (&t, y) in tr.times.iter().zip(&tr.states) {
                    let (u, _) = cf.u(t)?;
                    sup = sup.max((u - y[0] * y[0] - y[1] * y[1]).abs());
                }
                Some(sup)
            }
            Err(e @ Error::Uncertified { .. }) => return Err(e.into()),
            Err(e) => {
                notes.push(format!("closed form skipped: {e}"));
                None
            }
        },
        _ => None,
    };

    Ok(RunRow {
        run,
        seed,
        h: hamiltonian(spec, &init),
        max_drift: drift.max_drift(),
        equivalence_gamma,
        closed_form_u,
        note: if notes.is_empty() { None } else { Some(notes.join("; ")) },
    })
}

pub fn compare(cfg: &Config, seed: u64, threads: usize) -> Result<(CompareOut, Staged), Failure> {
    cfg.system.resolve()?;
    let runs = cfg.compare.runs;
    if runs == 0 {
        return Err(Failure::Config("compare.runs must be positive".into()));
    }
    let results = pool::map(runs, threads, |i| one(cfg, i, seed.wrapping_add(i as u64)));
    let rows = results.into_iter().collect::<Result<Vec<_>, _>>()?;

    let header: Vec<String> = ["run", "seed", "h", "max_drift", "equivalence_gamma", "closed_form_u"]
        .map(String::from)
        .to_vec();
    let opt = |v: Option<f64>| v.map_or_else(String::new, fmt_f64);
    let lines = rows.iter().map(|r| {
        format!(
            "{},{},{},{},{},{}",
            r.run,
            r.seed,
            fmt_f64(r.h),
            fmt_f64(r.max_drift),
            opt(r.equivalence_gamma),
            opt(r.closed_form_u)
        )
    });
    let mut staged = Staged::default();
    staged.csv_lines("compare.csv", &header, lines);
    let report = CompareOut {
        seed,
        worst_drift: rows.iter().map(|r| r.max_drift).fold(0.0, f64::max),
        worst_equivalence_gamma: worst(&rows, |r| r.equivalence_gamma),
        worst_closed_form_u: worst(&rows, |r| r.closed_form_u),
        runs: rows,
    };
    staged.json("compare.json", &report);
    Ok((report, staged))
}

pub fn run(config_path: &Path, out: &Path, seed: u64) -> Result<(), Failure> {
    let cfg = config::load(config_path)?;
    let (report, staged) = compare(&cfg, seed, pool::thread_limit()?)?;
    println!(
        "{} runs; worst drift {:.2e}, equivalence {:?}, closed form {:?}",
        report.runs.len(),
        report.worst_drift,
        report.worst_equivalence_gamma,
        report.worst_closed_form_u
    );
    staged.commit(out)?;
    Ok(())
}
