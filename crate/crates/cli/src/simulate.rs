use std::path::Path;

use gyrochap_core::full_flow::{full_residuals, reconstruct_full, FullResidualReport};
use gyrochap_core::hamiltonization::{rescale_momenta, unrescale_momenta};
use gyrochap_core::integrals::{drift_report, integral_suite};
use gyrochap_core::integrator::{integrate, project_state, Options, Sampling, StepStats, Trajectory};
use gyrochap_core::model::{ReducedState, RollingSpec};
use gyrochap_core::reduced::{demchenko_field, reduced_field, twisted_field, twisted_hamiltonian};
use serde::Serialize;

use crate::config::{self, Config, Flow, System};
use crate::output::{indexed, matrix_header, Staged};
use crate::Failure;

#[derive(Debug, Serialize)]
pub struct Steps {
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
}

impl From<StepStats> for Steps {
    fn from(s: StepStats) -> Self {
        Steps {
            accepted: s.accepted,
            rejected: s.rejected,
            evaluations: s.evaluations,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct Constraints {
    /// max |⟨γ,γ⟩ − 1|
    pub norm: f64,
    /// max |⟨γ,p⟩|
    pub tangency: f64,
}

#[derive(Debug, Serialize)]
pub struct IntegralDrift {
    pub name: String,
    pub initial: f64,
    pub max_drift: f64,
    pub worst_time: f64,
}

#[derive(Debug, Serialize)]
pub struct FullResiduals {
    pub orthonormality: f64,
    pub no_twist: f64,
    pub rolling: f64,
    pub kinematic: f64,
    pub admissible: f64,
    pub lambda0: f64,
    pub richardson_gap: f64,
    pub samples: usize,
}

impl From<FullResidualReport> for FullResiduals {
    fn from(r: FullResidualReport) -> Self {
        FullResiduals {
            orthonormality: r.orthonormality,
            no_twist: r.no_twist,
            rolling: r.rolling,
            kinematic: r.kinematic,
            admissible: r.admissible,
            lambda0: r.lambda0,
            richardson_gap: r.richardson_gap,
            samples: r.samples,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct DriftOut {
    pub flow: &'static str,
    pub n: usize,
    pub t_end: f64,
    pub samples: usize,
    pub steps: Steps,
    pub constraints: Constraints,
    pub max_drift: f64,
    pub integrals: Vec<IntegralDrift>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub full: Option<FullResiduals>,
}

pub fn options(cfg: &Config) -> Options {
    Options::default().with_tolerances(cfg.run.rtol, cfg.run.atol)
}

/// Reduced (or Demchenko) flow from `init`, sampled as requested.
pub fn integrate_reduced(sys: &System, flow: Flow, init: &ReducedState, t_end: f64, opts: &Options) -> Result<Trajectory, Failure> {
    let n = sys.spec.n();
    let proj = |y: &mut [f64]| project_state(y, n);
    let tr = match flow {
        Flow::Demchenko => {
            let ds = sys
                .demchenko
                .as_ref()
                .ok_or_else(|| Failure::Config("the demchenko flow needs the isotropic family".into()))?;
            integrate(demchenko_field(ds), &init.to_vec(), 0.0, t_end, opts, Some(&proj))?
        }
        _ => integrate(reduced_field(&sys.spec), &init.to_vec(), 0.0, t_end, opts, Some(&proj))?,
    };
    Ok(tr)
}

fn constraints(states: &[Vec<f64>], n: usize) -> Constraints {
    let mut c = Constraints { norm: 0.0, tangency: 0.0 };
    for y in states {
        let (g, p) = y.split_at(n);
        let gg: f64 = g.iter().map(|v| v * v).sum();
        let gp: f64 = g.iter().zip(p).map(|(a, b)| a * b).sum();
        c.norm = c.norm.max((gg - 1.0).abs());
        c.tangency = c.tangency.max(gp.abs());
    }
    c
}

fn drifts(spec: &RollingSpec, tr: &Trajectory) -> Result<Vec<IntegralDrift>, Failure> {
    let rep = drift_report(tr, &integral_suite(spec))?;
    Ok(rep
        .entries
        .into_iter()
        .map(|e| IntegralDrift {
            name: e.name,
            initial: e.initial,
            max_drift: e.max_drift,
            worst_time: e.worst_time,
        })
        .collect())
}

fn state_of(y: &[f64], n: usize) -> ReducedState {
    ReducedState {
        gamma: nalgebra::DVector::from_column_slice(&y[..n]),
        p: nalgebra::DVector::from_column_slice(&y[n..2 * n]),
    }
}

pub fn run(config_path: &Path, out: &Path, seed: u64) -> Result<(), Failure> {
    let cfg = config::load(config_path)?;
    let staged = simulate(&cfg, seed)?;
    staged.commit(out)?;
    Ok(())
}

pub fn simulate(cfg: &Config, seed: u64) -> Result<Staged, Failure> {
    let sys = cfg.system.resolve()?;
    let spec = &sys.spec;
    let n = spec.n();
    let init = config::initial_state(cfg, n, seed)?;
    let flow = cfg.run.flow;
    let grid = cfg.run.grid();
    let mut header: Vec<String> = vec!["t".into()];
    header.extend(indexed("gamma", n));
    header.extend(indexed("p", n));
    let mut staged = Staged::default();
    let mut full = None;

    let (tr, integrals) = match flow {
        Flow::Reduced | Flow::Demchenko => {
            let tr = integrate_reduced(&sys, flow, &init, cfg.run.t_end, &options(cfg).with_sampling(Sampling::Uniform(cfg.run.sample_dt)))?;
            let d = drifts(spec, &tr)?;
            (tr, d)
        }
        Flow::Twisted => {
            let field = twisted_field(spec)?;
            let tilde = rescale_momenta(spec, &init);
            let proj = |y: &mut [f64]| project_state(y, n);
            let opts = options(cfg).with_sampling(Sampling::Uniform(cfg.run.sample_dt));
            let tr = integrate(field, &tilde.to_vec(), 0.0, cfg.run.t_end, &opts, Some(&proj))?;
            // the reduced integrals survive the time change once momenta are unscaled
            let back = Trajectory {
                times: tr.times.clone(),
                states: tr.states.iter().map(|y| unrescale_momenta(spec, &state_of(y, n)).to_vec()).collect(),
                segments: Vec::new(),
                meta: tr.meta.clone(),
            };
            let mut d = drifts(spec, &back)?;
            let h0 = twisted_hamiltonian(spec, &tilde);
            let mut worst = IntegralDrift {
                name: "H_twisted".into(),
                initial: h0,
                max_drift: 0.0,
                worst_time: 0.0,
            };
            for (t, y) in tr.times.iter().zip(&tr.states) {
                let dev = (twisted_hamiltonian(spec, &state_of(y, n)) - h0).abs() / h0.abs().max(1.0);
                if dev > worst.max_drift {
                    worst.max_drift = dev;
                    worst.worst_time = *t;
                }
            }
            d.push(worst);
            header[0] = "tau".into();
            header.truncate(n + 1);
            header.extend(indexed("ptilde", n));
            (tr, d)
        }
        Flow::Full => {
            let (g0, r0) = config::initial_config(cfg, spec, &init)?;
            let opts = options(cfg).with_dense(true).with_sampling(Sampling::Times(grid.clone()));
            let tr = integrate_reduced(&sys, Flow::Reduced, &init, *grid.last().unwrap(), &opts)?;
            let ft = reconstruct_full(spec, &tr, &g0, &r0)?;
            full = Some(FullResiduals::from(full_residuals(spec, &ft)?));
            let mut fh: Vec<String> = vec!["t".into()];
            fh.extend(matrix_header("g", n));
            fh.extend(indexed("r", n));
            fh.extend(matrix_header("omega", n));
            let rows = ft.to_rows();
            staged.csv("full.csv", &fh, ft.times.iter().copied().zip(rows.iter().map(|r| r.as_slice())));
            let d = drifts(spec, &tr)?;
            (tr, d)
        }
    };

    let report = DriftOut {
        flow: flow.name(),
        n,
        t_end: cfg.run.t_end,
        samples: tr.len(),
        steps: tr.meta.stats.into(),
        constraints: constraints(&tr.states, n),
        max_drift: integrals.iter().map(|e| e.max_drift).fold(0.0, f64::max),
        integrals,
        full,
    };
    staged.csv("trajectory.csv", &header, tr.times.iter().copied().zip(tr.states.iter().map(|y| y.as_slice())));
    staged.json("drift.json", &report);
    Ok(staged)
}
