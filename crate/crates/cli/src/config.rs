//! The JSON configuration document shared by every subcommand.

use std::path::Path;

use gyrochap_core::model::{Contact, DemchenkoSpec, Radii, ReducedState, RollingSpec};
use gyrochap_core::SpecError;
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::Failure;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub system: SystemCfg,
    #[serde(default)]
    pub initial: Option<InitialCfg>,
    #[serde(default)]
    pub run: RunCfg,
    #[serde(default)]
    pub checks: Vec<CheckEntry>,
    #[serde(default)]
    pub compare: CompareCfg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Special,
    Isotropic,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemCfg {
    pub n: usize,
    pub family: Family,
    #[serde(default)]
    pub a: Option<Vec<f64>>,
    #[serde(rename = "D", default)]
    pub d: Option<f64>,
    #[serde(default)]
    pub tau: Option<f64>,
    pub epsilon: f64,
    /// One-based `[i, j, value]` triples.
    #[serde(default)]
    pub kappa: Vec<(usize, usize, f64)>,
    #[serde(default)]
    pub radii: Option<RadiiCfg>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadiiCfg {
    pub ball: f64,
    pub sphere: f64,
    pub contact: ContactCfg,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContactCfg {
    Outside,
    Inside,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialCfg {
    pub gamma: Vec<f64>,
    pub p: Vec<f64>,
    /// Rows of g(0); identity when absent.
    #[serde(default)]
    pub g0: Option<Vec<Vec<f64>>>,
    /// Center position r(0); (b ± a)·g0·γ(0) when absent.
    #[serde(default)]
    pub r0: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Flow {
    Reduced,
    Twisted,
    Demchenko,
    Full,
}

impl Flow {
    pub fn name(self) -> &'static str {
        match self {
            Flow::Reduced => "reduced",
            Flow::Twisted => "twisted",
            Flow::Demchenko => "demchenko",
            Flow::Full => "full",
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunCfg {
    pub t_end: f64,
    pub sample_dt: f64,
    pub rtol: f64,
    pub atol: f64,
    pub flow: Flow,
}

impl Default for RunCfg {
    fn default() -> Self {
        RunCfg {
            t_end: 10.0,
            sample_dt: 0.01,
            rtol: 1e-10,
            atol: 1e-12,
            flow: Flow::Reduced,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckName {
    Measure,
    PhiSimple,
    Closedness,
    Theta,
    SigmaZero,
    JkZero,
    Equivalence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Expect {
    Pass,
    Fail,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum CheckEntry {
    Name(CheckName),
    Detailed {
        name: CheckName,
        #[serde(default)]
        expect: Option<Expect>,
        #[serde(default)]
        samples: Option<usize>,
    },
}

impl CheckEntry {
    pub fn name(&self) -> CheckName {
        match self {
            CheckEntry::Name(n) => *n,
            CheckEntry::Detailed { name, .. } => *name,
        }
    }

    pub fn expect(&self) -> Option<Expect> {
        match self {
            CheckEntry::Name(_) => None,
            CheckEntry::Detailed { expect, .. } => *expect,
        }
    }

    pub fn samples(&self) -> Option<usize> {
        match self {
            CheckEntry::Name(_) => None,
            CheckEntry::Detailed { samples, .. } => *samples,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareCfg {
    pub runs: usize,
    /// Scale of the random initial momenta.
    pub p_scale: f64,
}

impl Default for CompareCfg {
    fn default() -> Self {
        CompareCfg { runs: 8, p_scale: 1.0 }
    }
}

/// A validated system: the general spec, plus its Demchenko view when isotropic.
#[derive(Debug, Clone)]
pub struct System {
    pub spec: RollingSpec,
    pub demchenko: Option<DemchenkoSpec>,
}

pub fn load(path: &Path) -> Result<Config, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
    parse(&text)
}

pub fn parse(text: &str) -> Result<Config, Failure> {
    let cfg: Config = serde_json::from_str(text).map_err(|e| Failure::Config(format!("malformed config: {e}")))?;
    cfg.run.validate()?;
    Ok(cfg)
}

fn spec_err(e: SpecError) -> Failure {
    Failure::Config(format!("{e:?}: {e}"))
}

impl RunCfg {
    fn validate(&self) -> Result<(), Failure> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.t_end) || !positive(self.sample_dt) || self.sample_dt > self.t_end {
            return Err(Failure::Config("run needs 0 < sample_dt <= t_end".into()));
        }
        if !positive(self.rtol) || !positive(self.atol) {
            return Err(Failure::Config("run tolerances must be positive".into()));
        }
        Ok(())
    }

    /// 0, dt, 2dt, … up to t_end (never past it).
    pub fn grid(&self) -> Vec<f64> {
        let k = (self.t_end / self.sample_dt * (1.0 + 1e-12)).floor() as usize;
        (0..=k).map(|i| i as f64 * self.sample_dt).collect()
    }
}

impl SystemCfg {
    pub fn resolve(&self) -> Result<System, Failure> {
        let n = self.n;
        if n < 3 {
            return Err(spec_err(SpecError::UnsupportedDimension(n)));
        }
        let mut kappa = DMatrix::zeros(n, n);
        for &(i, j, v) in &self.kappa {
            if i == 0 || j == 0 || i > n || j > n || i == j {
                return Err(Failure::Config(format!("kappa entry [{i}, {j}] is not a pair of distinct indices in 1..={n}")));
            }
            kappa[(i - 1, j - 1)] += v;
            kappa[(j - 1, i - 1)] -= v;
        }
        let radii = self.radii.map(|r| Radii {
            ball: r.ball,
            sphere: r.sphere,
            contact: match r.contact {
                ContactCfg::Outside => Contact::Outside,
                ContactCfg::Inside => Contact::Inside,
            },
        });
        match self.family {
            Family::Special => {
                if self.tau.is_some() {
                    return Err(Failure::Config("tau belongs to the isotropic family; give a[] and D instead".into()));
                }
                let a = self.a.clone().ok_or_else(|| Failure::Config("special family needs a[]".into()))?;
                if a.len() != n {
                    return Err(spec_err(SpecError::DimensionMismatch { expected: n, found: a.len() }));
                }
                let spec = RollingSpec::new(DVector::from_vec(a), self.d.unwrap_or(0.0), self.epsilon, kappa, radii)
                    .map_err(spec_err)?;
                Ok(System { spec, demchenko: None })
            }
            Family::Isotropic => {
                if self.a.is_some() || self.d.is_some_and(|d| d != 0.0) {
                    return Err(Failure::Config("isotropic family takes tau, not a[] or D".into()));
                }
                let tau = self.tau.ok_or_else(|| Failure::Config("isotropic family needs tau".into()))?;
                let mut blocks = vec![0.0; n / 2];
                for i in 0..n {
                    for j in 0..n {
                        let v = kappa[(i, j)];
                        if v == 0.0 {
                            continue;
                        }
                        if i % 2 == 0 && j == i + 1 {
                            blocks[i / 2] = v;
                        } else if !(j % 2 == 0 && i == j + 1) {
                            return Err(spec_err(SpecError::NotBlockDiagonal));
                        }
                    }
                }
                let ds = DemchenkoSpec::new(n, tau, self.epsilon, &blocks).map_err(spec_err)?;
                let spec = RollingSpec::new(DVector::from_element(n, tau.sqrt()), 0.0, self.epsilon, kappa, radii)
                    .map_err(spec_err)?;
                Ok(System { spec, demchenko: Some(ds) })
            }
        }
    }
}

/// The configured initial state, or a seeded random one.
pub fn initial_state(cfg: &Config, n: usize, seed: u64) -> Result<ReducedState, Failure> {
    match &cfg.initial {
        Some(init) => {
            if init.gamma.len() != n || init.p.len() != n {
                return Err(Failure::Config(format!("initial gamma and p need {n} entries")));
            }
            ReducedState::new(DVector::from_vec(init.gamma.clone()), DVector::from_vec(init.p.clone()))
                .map_err(|e| Failure::Config(format!("initial state: {e}")))
        }
        None => Ok(gyrochap_core::model::random_state(&mut ChaCha8Rng::seed_from_u64(seed), n, 1.0)),
    }
}

/// g(0) and r(0) for full reconstruction.
pub fn initial_config(cfg: &Config, spec: &RollingSpec, st: &ReducedState) -> Result<(DMatrix<f64>, DVector<f64>), Failure> {
    let n = spec.n();
    let init = cfg.initial.as_ref();
    let g0 = match init.and_then(|i| i.g0.as_ref()) {
        Some(rows) => {
            if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                return Err(Failure::Config(format!("g0 must be {n}x{n}")));
            }
            DMatrix::from_fn(n, n, |i, j| rows[i][j])
        }
        None => DMatrix::identity(n, n),
    };
    let r0 = match init.and_then(|i| i.r0.as_ref()) {
        Some(r) if r.len() != n => return Err(Failure::Config(format!("r0 needs {n} entries"))),
        Some(r) => DVector::from_vec(r.clone()),
        None => &g0 * &st.gamma * spec.center_distance(),
    };
    Ok((g0, r0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn system(json: &str) -> Result<System, Failure> {
        parse(json)?.system.resolve()
    }

    #[test]
    fn kappa_is_one_based() {
        let s = system(r#"{"system": {"n": 3, "family": "special", "a": [1, 1.2, 1.5], "D": 0.1, "epsilon": 0.7, "kappa": [[1, 3, 0.4]]}}"#).unwrap();
        let k = s.spec.kappa().matrix();
        assert_eq!(k[(0, 2)], 0.4);
        assert_eq!(k[(2, 0)], -0.4);
        assert!(s.demchenko.is_none());
    }

    #[test]
    fn isotropic_blocks() {
        let s = system(r#"{"system": {"n": 4, "family": "isotropic", "tau": 1.3, "epsilon": 0.9, "kappa": [[1, 2, 0.8], [3, 4, -0.5]]}}"#).unwrap();
        assert_eq!(s.demchenko.unwrap().blocks(), &[0.8, -0.5]);
        assert!(s.spec.is_isotropic());
    }

    #[test]
    fn rejections() {
        let bad = [
            r#"{"system": {"n": 3, "family": "isotropic", "tau": 1, "epsilon": 1, "kappa": [[1, 3, 0.4]]}}"#,
            r#"{"system": {"n": 3, "family": "special", "a": [1, 1], "epsilon": 1}}"#,
            r#"{"system": {"n": 3, "family": "special", "a": [1, 1, 1], "epsilon": 1, "kappa": [[0, 1, 1]]}}"#,
            r#"{"system": {"n": 3, "family": "special", "a": [1, 1, 1], "epsilon": 1}, "run": {"t_end": -1}}"#,
            r#"{"system": {"n": 3, "family": "special", "a": [1, 1, 1], "epsilon": 1, "typo": 0}}"#,
        ];
        for b in bad {
            assert!(matches!(parse(b).and_then(|c| c.system.resolve()), Err(Failure::Config(_))), "{b}");
        }
    }

    #[test]
    fn indefinite_operator_is_named() {
        let Err(Failure::Config(msg)) = system(r#"{"system": {"n": 3, "family": "special", "a": [1, 1, 1], "D": 2, "epsilon": 1}}"#) else {
            panic!()
        };
        assert!(msg.contains("IndefiniteOperator"), "{msg}");
    }

    #[test]
    fn grid_stops_at_t_end() {
        let run = RunCfg { t_end: 1.0, sample_dt: 0.1, ..RunCfg::default() };
        let g = run.grid();
        assert_eq!(g.len(), 11);
        assert!((g[10] - 1.0).abs() < 1e-15);
    }
}
