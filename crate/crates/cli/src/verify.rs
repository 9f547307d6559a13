use std::path::Path;

use gyrochap_core::hamiltonization::{
    check_magnetic_closedness, check_phi_simple, hamiltonization_equivalence, measure_divergence_check, theta_form_check,
};
use gyrochap_core::model::{gyro_tensor_c, random_state, random_tangent, sigma_coefficient, sigma_eval};
use gyrochap_core::reduced::jk_force;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{self, CheckEntry, CheckName, Config, Expect, System};
use crate::output::Staged;
use crate::simulate::options;
use crate::{pool, Failure};

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub residual: f64,
    pub threshold: f64,
    pub samples: usize,
    pub outcome: &'static str,
    pub expected: &'static str,
    pub matches: bool,
}

#[derive(Debug, Serialize)]
pub struct VerifyOut {
    pub n: usize,
    pub epsilon: f64,
    pub seed: u64,
    pub checks: Vec<CheckResult>,
    pub all_match: bool,
}

fn label(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}

fn check_name(c: CheckName) -> &'static str {
    match c {
        CheckName::Measure => "measure",
        CheckName::PhiSimple => "phi_simple",
        CheckName::Closedness => "closedness",
        CheckName::Theta => "theta",
        CheckName::SigmaZero => "sigma_zero",
        CheckName::JkZero => "jk_zero",
        CheckName::Equivalence => "equivalence",
    }
}

fn default_samples(c: CheckName) -> usize {
    match c {
        CheckName::Measure | CheckName::SigmaZero | CheckName::JkZero => 1000,
        CheckName::PhiSimple => 500,
        CheckName::Closedness | CheckName::Theta | CheckName::Equivalence => 200,
    }
}

fn threshold(c: CheckName) -> f64 {
    match c {
        CheckName::Measure | CheckName::Closedness | CheckName::Theta | CheckName::Equivalence => 1e-6,
        CheckName::PhiSimple => 1e-9,
        CheckName::SigmaZero | CheckName::JkZero => 1e-12,
    }
}

/// Residual, sample count, and whether theory says the check passes for this system.
fn evaluate(cfg: &Config, sys: &System, c: CheckName, samples: usize, seed: u64) -> Result<(f64, usize, bool), Failure> {
    let spec = &sys.spec;
    let n = spec.n();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(match c {
        CheckName::Measure => (measure_divergence_check(spec, samples, &mut rng).max_abs, samples, true),
        CheckName::PhiSimple => {
            let r = check_phi_simple(spec, samples, &mut rng)?;
            (r.tensor_residual.max(r.quadratic_residual), samples, true)
        }
        CheckName::Closedness => {
            let r = check_magnetic_closedness(spec, samples, &mut rng);
            (r.max_abs, samples, r.expected_closed)
        }
        CheckName::Theta => (theta_form_check(spec, samples, &mut rng)?.max_residual, samples, true),
        CheckName::SigmaZero => {
            let mut worst: f64 = 0.0;
            for _ in 0..samples {
                let g = random_state(&mut rng, n, 0.0).gamma;
                let (x, y, z) = (random_tangent(&mut rng, &g), random_tangent(&mut rng, &g), random_tangent(&mut rng, &g));
                worst = worst.max(sigma_eval(spec, &g, &x, &y, &z)?.abs());
                worst = worst.max(gyro_tensor_c(spec, &g, &x, &y)?.amax());
            }
            (worst, samples, sigma_coefficient(spec.epsilon()) == 0.0)
        }
        CheckName::JkZero => {
            let worst = (0..samples)
                .map(|_| jk_force(spec, &random_state(&mut rng, n, 1.0)).amax())
                .fold(0.0, f64::max);
            (worst, samples, spec.is_isotropic())
        }
        CheckName::Equivalence => {
            let init = config::initial_state(cfg, n, seed)?;
            let r = hamiltonization_equivalence(spec, &init, cfg.run.t_end, samples, &options(cfg))?;
            (r.gamma_discrepancy, r.samples, true)
        }
    })
}

pub fn verify(cfg: &Config, seed: u64, threads: usize) -> Result<VerifyOut, Failure> {
    let sys = cfg.system.resolve()?;
    let entries: Vec<CheckEntry> = if cfg.checks.is_empty() {
        [CheckName::Measure, CheckName::PhiSimple, CheckName::Closedness].map(CheckEntry::Name).to_vec()
    } else {
        cfg.checks.clone()
    };
    let results = pool::map(entries.len(), threads, |i| {
        let e = &entries[i];
        let c = e.name();
        let samples = e.samples().unwrap_or_else(|| default_samples(c));
        evaluate(cfg, &sys, c, samples, seed.wrapping_add(i as u64)).map(|(residual, samples, theory)| {
            let pass = residual <= threshold(c);
            let expected = match e.expect() {
                Some(Expect::Pass) => true,
                Some(Expect::Fail) => false,
                None => theory,
            };
            CheckResult {
                name: check_name(c),
                residual,
                threshold: threshold(c),
                samples,
                outcome: label(pass),
                expected: label(expected),
                matches: pass == expected,
            }
        })
    });
    let checks = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    Ok(VerifyOut {
        n: sys.spec.n(),
        epsilon: sys.spec.epsilon(),
        seed,
        all_match: checks.iter().all(|c| c.matches),
        checks,
    })
}

pub fn run(config_path: &Path, out: &Path, seed: u64) -> Result<(), Failure> {
    let cfg = config::load(config_path)?;
    let report = verify(&cfg, seed, pool::thread_limit()?)?;
    for c in &report.checks {
        println!(
            "{}: {} (residual {:.2e}, threshold {:.0e}, {} samples; expected {})",
            c.name, c.outcome, c.residual, c.threshold, c.samples, c.expected
        );
    }
    let mut staged = Staged::default();
    staged.json("verify.json", &report);
    staged.commit(out)?;
    if report.all_match {
        Ok(())
    } else {
        let bad: Vec<_> = report.checks.iter().filter(|c| !c.matches).map(|c| c.name).collect();
        Err(Failure::Mismatch(format!("checks differ from expectation: {}", bad.join(", "))))
    }
}
