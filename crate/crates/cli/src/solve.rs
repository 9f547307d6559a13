use std::path::Path;

use gyrochap_core::demchenko::{
    classify_case_at, cubic_for_state, inequality_case_n3, stationary_motion, weierstrass_invariants, CaseTag,
    ClosedForm, G3Formula, InequalityCase,
};
use gyrochap_core::integrator::Sampling;
use gyrochap_core::Error;
use serde::Serialize;

use crate::config::{self, Config, Flow};
use crate::output::{indexed, Staged};
use crate::simulate::{integrate_reduced, options};
use crate::Failure;

#[derive(Debug, Serialize)]
pub struct RootOut {
    pub value: f64,
    pub multiplicity: usize,
}

#[derive(Debug, Serialize)]
pub struct CubicOut {
    /// a₀u³ + a₁u² + a₂u + a₃
    pub coeffs: [f64; 4],
    pub quadratic: bool,
    pub discriminant_rel: f64,
    pub roots: Vec<RootOut>,
}

#[derive(Debug, Serialize)]
pub struct CaseOut {
    pub tag: &'static str,
    pub u_bounds: Option<(f64, f64)>,
    /// √u at the bounds: the annulus swept by (γ₁, γ₂).
    pub rho_bounds: Option<(f64, f64)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inequality_case: Option<&'static str>,
}

#[derive(Debug, Serialize)]
pub struct InvariantsOut {
    pub g2: f64,
    pub g3: f64,
    pub formula: &'static str,
    pub certified: bool,
    pub g3_derived: f64,
    pub g3_alternate: f64,
    pub derived_residual: f64,
    pub alternate_residual: f64,
}

#[derive(Debug, Serialize)]
pub struct StationaryOut {
    pub u: f64,
    pub rho1: f64,
    pub alpha1: f64,
    pub alpha3: Option<f64>,
    pub constraint_residual: f64,
}

#[derive(Debug, Serialize)]
pub struct DiscrepancyOut {
    /// sup |u_closed − u_numeric|
    pub u_sup: f64,
    /// sup over all state components
    pub state_sup: f64,
    pub samples: usize,
}

#[derive(Debug, Serialize)]
pub struct SolveOut {
    pub n: usize,
    pub tau: f64,
    pub epsilon: f64,
    pub blocks: Vec<f64>,
    pub energy_h: f64,
    pub cubic: CubicOut,
    pub case: CaseOut,
    pub weierstrass: Option<InvariantsOut>,
    pub period: f64,
    pub stationary: Option<StationaryOut>,
    pub discrepancy: DiscrepancyOut,
}

pub fn run(config_path: &Path, out: &Path, seed: u64) -> Result<(), Failure> {
    let cfg = config::load(config_path)?;
    let (report, staged) = solve(&cfg, seed)?;
    println!(
        "case {}; u sup discrepancy {:.2e} over {} samples",
        report.case.tag, report.discrepancy.u_sup, report.discrepancy.samples
    );
    staged.commit(out)?;
    Ok(())
}

pub fn solve(cfg: &Config, seed: u64) -> Result<(SolveOut, Staged), Failure> {
    let sys = cfg.system.resolve()?;
    let ds = sys
        .demchenko
        .clone()
        .ok_or_else(|| Failure::Config("solve-demchenko needs the isotropic family".into()))?;
    let n = ds.n();
    if n != 3 && n != 4 {
        return Err(Failure::Config(format!("closed form exists for n = 3 and 4, not n = {n}")));
    }
    let init = config::initial_state(cfg, n, seed)?;
    let poly = cubic_for_state(&ds, &init)?;
    let u0 = init.gamma[0].powi(2) + init.gamma[1].powi(2);
    let case = classify_case_at(&poly, Some(u0));
    let weierstrass = match weierstrass_invariants(&poly) {
        Ok(w) => Some(InvariantsOut {
            g2: w.g2,
            g3: w.g3,
            formula: match w.formula {
                G3Formula::Derived => "derived",
                G3Formula::Alternate => "alternate",
            },
            certified: true,
            g3_derived: w.g3_derived,
            g3_alternate: w.g3_alternate,
            derived_residual: w.derived_residual,
            alternate_residual: w.alternate_residual,
        }),
        Err(Error::Degenerate(_)) => None,
        Err(e) => return Err(e.into()),
    };
    let stationary = match case {
        CaseTag::DoubleRootStationary { .. } => {
            let s = stationary_motion(&poly)?;
            Some(StationaryOut {
                u: s.u,
                rho1: s.rho1,
                alpha1: s.alpha1,
                alpha3: s.alpha3,
                constraint_residual: s.constraint_residual,
            })
        }
        _ => None,
    };
    let cf = ClosedForm::new(&ds, &init)?;
    let grid = cfg.run.grid();
    let closed = cf.trajectory(&grid)?;
    let opts = options(cfg).with_sampling(Sampling::Times(grid.clone()));
    let numeric = integrate_reduced(&sys, Flow::Demchenko, &init, *grid.last().unwrap(), &opts)?;

    let mut disc = DiscrepancyOut {
        u_sup: 0.0,
        state_sup: 0.0,
        samples: grid.len(),
    };
    let mut rows = Vec::with_capacity(grid.len());
    for ((&t, a), b) in grid.iter().zip(&closed.states).zip(&numeric.states) {
        let (u, ud) = cf.u(t)?;
        let un = b[0] * b[0] + b[1] * b[1];
        disc.u_sup = disc.u_sup.max((u - un).abs());
        disc.state_sup = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(disc.state_sup, f64::max);
        let mut row = vec![u, ud];
        row.extend_from_slice(a);
        rows.push(row);
    }

    let mut header: Vec<String> = vec!["t".into(), "u".into(), "udot".into()];
    header.extend(indexed("gamma", n));
    header.extend(indexed("p", n));
    let mut staged = Staged::default();
    staged.csv("closed_form.csv", &header, grid.iter().copied().zip(rows.iter().map(|r| r.as_slice())));

    let s = poly.source;
    let report = SolveOut {
        n,
        tau: ds.tau(),
        epsilon: ds.epsilon(),
        blocks: ds.blocks().to_vec(),
        energy_h: s.h,
        cubic: CubicOut {
            coeffs: poly.coeffs,
            quadratic: poly.is_quadratic(),
            discriminant_rel: poly.discriminant_rel(),
            roots: poly
                .real_roots()
                .into_iter()
                .map(|r| RootOut {
                    value: r.value,
                    multiplicity: r.multiplicity,
                })
                .collect(),
        },
        case: CaseOut {
            tag: case.name(),
            u_bounds: case.bounds(),
            rho_bounds: case.bounds().map(|(a, b)| (a.max(0.0).sqrt(), b.max(0.0).sqrt())),
            inequality_case: inequality_case_n3(&poly).map(|c| match c {
                InequalityCase::A => "A",
                InequalityCase::B => "B",
                InequalityCase::Neither => "neither",
            }),
        },
        weierstrass,
        period: cf.period(),
        stationary,
        discrepancy: disc,
    };
    staged.json("demchenko.json", &report);
    Ok((report, staged))
}
