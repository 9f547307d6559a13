//! First integrals of the reduced flows, drift monitoring, and a numeric
//! magnetic Dirac bracket.

#[allow(unused_imports)] // std builds resolve these as inherent methods
use num_traits::Float;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use nalgebra::{DVector, Matrix2};

use crate::error::{Error, Result};
use crate::integrator::Trajectory;
use crate::model::{hamiltonian, DemchenkoSpec, ReducedState, RollingSpec};
use crate::so_n::{SkewMat, VecN};

/// 𝒜(γ) = a₃ + (a₁−a₃)γ₁² + (a₂−a₃)γ₂².
pub(crate) fn cal_a_formula(a: &VecN, gamma: &VecN) -> f64 {
    a[2] + (a[0] - a[2]) * gamma[0] * gamma[0] + (a[1] - a[2]) * gamma[1] * gamma[1]
}

/// 𝒩(γ) = ε𝒜^{1/(2ε)−1}.
pub(crate) fn multiplier(spec: &RollingSpec, gamma: &VecN) -> f64 {
    let eps = spec.epsilon();
    eps * cal_a_formula(spec.a(), gamma).powf(0.5 / eps - 1.0)
}

/// Φ₁₂ = 𝒩(γ)(γ₁p₂−γ₂p₁) + (κ₁₂/(a₁−a₃))𝒜^{1/(2ε)}, evaluated for any
/// spec with a₁ ≠ a₃ (conserved only when a₁ = a₂).
pub fn phi_12(spec: &RollingSpec, state: &ReducedState) -> Result<f64> {
    let a = spec.a();
    if a[0] == a[2] {
        return Err(Error::Degenerate("phi_12 needs a1 != a3"));
    }
    let g = &state.gamma;
    let p = &state.p;
    let eps = spec.epsilon();
    let cal = cal_a_formula(a, g);
    let k12 = spec.kappa().get(0, 1);
    Ok(multiplier(spec, g) * (g[0] * p[1] - g[1] * p[0]) + k12 / (a[0] - a[2]) * cal.powf(0.5 / eps))
}

/// Φᵢⱼ = 𝒩(γ)(γᵢpⱼ − γⱼpᵢ), zero-based indices.
pub fn phi_ij(spec: &RollingSpec, state: &ReducedState, i: usize, j: usize) -> f64 {
    let g = &state.gamma;
    let p = &state.p;
    multiplier(spec, g) * (g[i] * p[j] - g[j] * p[i])
}

/// γᵢpⱼ − γⱼpᵢ + (κᵢⱼ/2ε²)(γᵢ² + γⱼ²) for the isotropic system.
pub fn demchenko_phi(epsilon: f64, kij: f64, state: &ReducedState, i: usize, j: usize) -> f64 {
    let g = &state.gamma;
    let p = &state.p;
    g[i] * p[j] - g[j] * p[i] + kij / (2.0 * epsilon * epsilon) * (g[i] * g[i] + g[j] * g[j])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum IntegralKind {
    Energy,
    Phi12,
    PhiIj(usize, usize),
    DemchenkoPhi { i: usize, j: usize, kappa: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedIntegral {
    pub name: String,
    pub kind: IntegralKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntegralSuite {
    spec: RollingSpec,
    pub integrals: Vec<NamedIntegral>,
    /// Set when no family beyond the energy applies.
    pub unsupported: bool,
}

impl IntegralSuite {
    pub fn names(&self) -> Vec<&str> {
        self.integrals.iter().map(|i| i.name.as_str()).collect()
    }

    pub fn len(&self) -> usize {
        self.integrals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.integrals.is_empty()
    }

    pub fn spec(&self) -> &RollingSpec {
        &self.spec
    }

    pub fn eval_one(&self, kind: IntegralKind, state: &ReducedState) -> f64 {
        match kind {
            IntegralKind::Energy => hamiltonian(&self.spec, state),
            IntegralKind::Phi12 => phi_12(&self.spec, state).unwrap_or(f64::NAN),
            IntegralKind::PhiIj(i, j) => phi_ij(&self.spec, state, i, j),
            IntegralKind::DemchenkoPhi { i, j, kappa } => {
                demchenko_phi(self.spec.epsilon(), kappa, state, i, j)
            }
        }
    }

    pub fn eval(&self, state: &ReducedState) -> Vec<f64> {
        self.integrals.iter().map(|i| self.eval_one(i.kind, state)).collect()
    }
}

fn named(kind: IntegralKind) -> NamedIntegral {
    let name = match kind {
        IntegralKind::Energy => String::from("h"),
        IntegralKind::Phi12 => String::from("Phi12"),
        IntegralKind::PhiIj(i, j) | IntegralKind::DemchenkoPhi { i, j, .. } => {
            format!("Phi{}{}", i + 1, j + 1)
        }
    };
    NamedIntegral { name, kind }
}

/// The first integrals known for `spec`: always h; Φ₁₂ and Φᵢⱼ (3 ≤ i < j)
/// when a₁ = a₂ ≠ a₃ = … = aₙ with κ = κ₁₂e₁∧e₂; the block forms when 𝔸 is
/// isotropic and κ block-diagonal.
pub fn integral_suite(spec: &RollingSpec) -> IntegralSuite {
    let n = spec.n();
    let a = spec.a();
    let mut out = alloc::vec![named(IntegralKind::Energy)];
    let mut supported = false;
    let a12_equal = (a[0] - a[1]).abs() <= 1e-12 * a[0];
    if spec.in_symmetric_family() && a12_equal && !spec.is_isotropic() {
        supported = true;
        out.push(named(IntegralKind::Phi12));
        for i in 2..n {
            for j in (i + 1)..n {
                out.push(named(IntegralKind::PhiIj(i, j)));
            }
        }
    } else if let (true, Some(blocks)) = (spec.is_isotropic(), spec.kappa_blocks()) {
        supported = true;
        for (b, &kappa) in blocks.iter().enumerate() {
            out.push(named(IntegralKind::DemchenkoPhi {
                i: 2 * b,
                j: 2 * b + 1,
                kappa,
            }));
        }
        if spec.kappa_is_12_only() {
            for i in 2..n {
                for j in (i + 1)..n {
                    if i % 2 == 0 && j == i + 1 {
                        continue;
                    }
                    out.push(named(IntegralKind::PhiIj(i, j)));
                }
            }
        }
    }
    IntegralSuite {
        spec: spec.clone(),
        integrals: out,
        unsupported: !supported,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DriftEntry {
    pub name: String,
    pub initial: f64,
    /// max |F(t) − F(0)| / max(1, |F(0)|)
    pub max_drift: f64,
    pub worst_time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DriftReport {
    pub entries: Vec<DriftEntry>,
}

impl DriftReport {
    pub fn max_drift(&self) -> f64 {
        self.entries.iter().map(|e| e.max_drift).fold(0.0, f64::max)
    }

    pub fn get(&self, name: &str) -> Option<&DriftEntry> {
        self.entries.iter().find(|e| e.name == name)
    }
}

/// Per-integral drift along `traj`; states are read as `[γ, p, …]`.
pub fn drift_report(traj: &Trajectory, suite: &IntegralSuite) -> Result<DriftReport> {
    if traj.is_empty() {
        return Err(Error::EmptyTrajectory);
    }
    let n = suite.spec.n();
    let state_at = |y: &[f64]| ReducedState {
        gamma: DVector::from_column_slice(&y[..n]),
        p: DVector::from_column_slice(&y[n..2 * n]),
    };
    let f0 = suite.eval(&state_at(&traj.states[0]));
    let mut entries: Vec<DriftEntry> = suite
        .integrals
        .iter()
        .zip(&f0)
        .map(|(i, &v)| DriftEntry {
            name: i.name.clone(),
            initial: v,
            max_drift: 0.0,
            worst_time: traj.times[0],
        })
        .collect();
    for (t, y) in traj.times.iter().zip(&traj.states) {
        let f = suite.eval(&state_at(y));
        for (e, v) in entries.iter_mut().zip(f) {
            let d = (v - e.initial).abs() / e.initial.abs().max(1.0);
            if d > e.max_drift || d.is_nan() {
                e.max_drift = if d.is_nan() { f64::INFINITY } else { d };
                e.worst_time = *t;
            }
        }
    }
    Ok(DriftReport { entries })
}

/// Ambient gradient of f at y by 5-point central differences.
fn gradient(f: &dyn Fn(&[f64]) -> f64, y: &[f64]) -> Vec<f64> {
    let h = 1e-3;
    let mut z = y.to_vec();
    (0..y.len())
        .map(|i| {
            let mut at = |d: f64| {
                z[i] = y[i] + d;
                let v = f(&z);
                z[i] = y[i];
                v
            };
            (8.0 * (at(h) - at(-h)) - (at(2.0 * h) - at(-2.0 * h))) / (12.0 * h)
        })
        .collect()
}

/// {f,g} = ⟨f_γ,g_p⟩ − ⟨f_p,g_γ⟩ + ⟨f_p, F g_p⟩ on ℝ²ⁿ.
fn magnetic_bracket(df: &[f64], dg: &[f64], f: &SkewMat) -> f64 {
    let n = df.len() / 2;
    let m = f.matrix();
    let mut s = 0.0;
    for i in 0..n {
        s += df[i] * dg[n + i] - df[n + i] * dg[i];
        for j in 0..n {
            s += df[n + i] * m[(i, j)] * dg[n + j];
        }
    }
    s
}

/// Dirac bracket of f and g on ⟨γ,γ⟩ = 1, ⟨γ,p⟩ = 0, for the magnetic
/// structure whose equations read ṗ = −H_γ + F·H_p (+ multipliers).
/// Ambient gradients are taken numerically.
pub fn dirac_bracket(
    f: &dyn Fn(&[f64]) -> f64,
    g: &dyn Fn(&[f64]) -> f64,
    state: &ReducedState,
    magnetic: &SkewMat,
) -> Result<f64> {
    let n = state.n();
    if magnetic.dim() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: magnetic.dim(),
        });
    }
    let y = state.to_vec();
    let df = gradient(f, &y);
    let dg = gradient(g, &y);
    // constraint gradients: ψ₁ = ⟨γ,γ⟩ − 1, ψ₂ = ⟨γ,p⟩
    let dpsi1: Vec<f64> = (0..2 * n).map(|k| if k < n { 2.0 * y[k] } else { 0.0 }).collect();
    let dpsi2: Vec<f64> = (0..2 * n).map(|k| if k < n { y[n + k] } else { y[k - n] }).collect();
    let psis = [&dpsi1, &dpsi2];
    let c = Matrix2::from_fn(|a, b| magnetic_bracket(psis[a], psis[b], magnetic));
    let cinv = c.try_inverse().ok_or(Error::Singular("constraint bracket matrix"))?;
    let mut out = magnetic_bracket(&df, &dg, magnetic);
    for a in 0..2 {
        for b in 0..2 {
            out -= magnetic_bracket(&df, psis[a], magnetic) * cinv[(a, b)] * magnetic_bracket(psis[b], &dg, magnetic);
        }
    }
    Ok(out)
}

/// Dirac bracket for the isotropic system, F = κ/ε².
pub fn demchenko_bracket(
    spec: &DemchenkoSpec,
    f: &dyn Fn(&[f64]) -> f64,
    g: &dyn Fn(&[f64]) -> f64,
    state: &ReducedState,
) -> Result<f64> {
    let e2 = spec.epsilon() * spec.epsilon();
    dirac_bracket(f, g, state, &spec.kappa().scale(1.0 / e2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrator::{integrate, project_state, Options};
    use crate::model::{validate_spec, SpecParams};
    use crate::reduced::{demchenko_field, reduced_field};
    use crate::so_n::basis_vector;
    use alloc::vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn spec(a: &[f64], eps: f64, kappa: &[(usize, usize, f64)]) -> RollingSpec {
        validate_spec(&SpecParams {
            a: a.to_vec(),
            d: 0.0,
            epsilon: eps,
            kappa: kappa.to_vec(),
            radii: None,
        })
        .unwrap()
    }

    fn random_state(rng: &mut ChaCha8Rng, n: usize) -> ReducedState {
        let g = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let p = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        ReducedState::projected(g, p)
    }

    fn unit(n: usize, i: usize, j: usize) -> ReducedState {
        ReducedState::new(basis_vector(n, i), basis_vector(n, j)).unwrap()
    }

    #[test]
    fn isotropic_three_dim_value() {
        let (k, eps) = (0.7, 0.6);
        let s = spec(&[1.3, 1.3, 1.3], eps, &[(0, 1, k)]);
        let suite = integral_suite(&s);
        assert_eq!(suite.names(), vec!["h", "Phi12"]);
        let v = suite.eval(&unit(3, 0, 1));
        assert!((v[1] - (1.0 + k / (2.0 * eps * eps))).abs() < 1e-15);
    }

    #[test]
    fn isotropic_four_dim_second_block() {
        let (k12, k34, eps) = (0.3, -0.9, 1.4);
        let s = spec(&[2.0; 4], eps, &[(0, 1, k12), (2, 3, k34)]);
        let suite = integral_suite(&s);
        assert_eq!(suite.names(), vec!["h", "Phi12", "Phi34"]);
        let v = suite.eval(&unit(4, 2, 3));
        assert!((v[2] - (1.0 + k34 / (2.0 * eps * eps))).abs() < 1e-15);
    }

    #[test]
    fn noether_reduction() {
        // κ₁₂ = 0: Φ₁₂ is the rescaled angular momentum 𝒩(γ₁p₂ − γ₂p₁)
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let s = spec(&[1.5, 1.5, 0.7, 0.7], 0.8, &[]);
        for _ in 0..20 {
            let st = random_state(&mut rng, 4);
            let cal = s.cal_a_quadratic(&st.gamma);
            let nn = 0.8 * cal.powf(0.5 / 0.8 - 1.0);
            let want = nn * (st.gamma[0] * st.p[1] - st.gamma[1] * st.p[0]);
            assert!((phi_12(&s, &st).unwrap() - want).abs() < 1e-14);
        }
        let suite = integral_suite(&s);
        assert_eq!(suite.names(), vec!["h", "Phi12", "Phi34"]);
        assert!(!suite.unsupported);
    }

    #[test]
    fn unsupported_family_is_flagged() {
        let s = spec(&[1.0, 2.0, 3.0], 1.0, &[(0, 2, 0.4)]);
        let suite = integral_suite(&s);
        assert!(suite.unsupported);
        assert_eq!(suite.names(), vec!["h"]);
    }

    #[test]
    fn equilibrium_has_zero_drift() {
        let s = spec(&[1.5, 1.5, 0.7, 0.7, 0.7], 2.0, &[(0, 1, 0.5)]);
        let st = ReducedState::new(basis_vector(5, 2), DVector::zeros(5)).unwrap();
        let proj = |y: &mut [f64]| project_state(y, 5);
        let tr = integrate(reduced_field(&s), &st.to_vec(), 0.0, 10.0, &Options::default(), Some(&proj)).unwrap();
        let rep = drift_report(&tr, &integral_suite(&s)).unwrap();
        assert_eq!(rep.max_drift(), 0.0);
    }

    #[test]
    fn empty_trajectory_rejected() {
        let s = spec(&[1.0, 1.0, 1.0], 1.0, &[]);
        let tr = Trajectory {
            times: vec![],
            states: vec![],
            segments: vec![],
            meta: Default::default(),
        };
        assert!(matches!(drift_report(&tr, &integral_suite(&s)), Err(Error::EmptyTrajectory)));
    }

    #[test]
    fn integrable_case_conserves_all() {
        let s = spec(&[1.5, 1.5, 0.7, 0.7, 0.7], 0.7, &[(0, 1, 0.9)]);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let st = random_state(&mut rng, 5);
        let proj = |y: &mut [f64]| project_state(y, 5);
        let tr = integrate(reduced_field(&s), &st.to_vec(), 0.0, 100.0, &Options::default(), Some(&proj)).unwrap();
        let rep = drift_report(&tr, &integral_suite(&s)).unwrap();
        assert_eq!(rep.entries.len(), 1 + 1 + 3);
        assert!(rep.max_drift() <= 1e-8, "{rep:?}");
    }

    #[test]
    fn demchenko_blocks_conserved() {
        let ds = DemchenkoSpec::new(4, 1.3, 0.9, &[0.8, -0.4]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let st = random_state(&mut rng, 4);
        let proj = |y: &mut [f64]| project_state(y, 4);
        let tr = integrate(demchenko_field(&ds), &st.to_vec(), 0.0, 100.0, &Options::default(), Some(&proj)).unwrap();
        let rep = drift_report(&tr, &integral_suite(&ds.to_rolling_spec())).unwrap();
        assert!(rep.max_drift() <= 1e-8, "{rep:?}");
    }

    #[test]
    fn bracket_of_block_integrals_vanishes() {
        let (eps, k12, k34) = (0.9, 0.8, -0.4);
        let ds = DemchenkoSpec::new(4, 1.3, eps, &[k12, k34]).unwrap();
        let tau = ds.tau();
        let as_state = |y: &[f64]| ReducedState {
            gamma: DVector::from_column_slice(&y[..4]),
            p: DVector::from_column_slice(&y[4..]),
        };
        let f12 = move |y: &[f64]| demchenko_phi(eps, k12, &as_state(y), 0, 1);
        let f34 = move |y: &[f64]| demchenko_phi(eps, k34, &as_state(y), 2, 3);
        let h = move |y: &[f64]| eps * eps / (2.0 * tau) * y[4..].iter().map(|v| v * v).sum::<f64>();
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for _ in 0..100 {
            let st = random_state(&mut rng, 4);
            assert!(demchenko_bracket(&ds, &f12, &f34, &st).unwrap().abs() <= 1e-9);
            assert!(demchenko_bracket(&ds, &f12, &h, &st).unwrap().abs() <= 1e-9);
            assert!(demchenko_bracket(&ds, &f34, &h, &st).unwrap().abs() <= 1e-9);
        }
    }

    #[test]
    fn bracket_reproduces_flow() {
        // {γᵢ, H}_d and {pᵢ, H}_d give the isotropic vector field
        let ds = DemchenkoSpec::new(4, 1.3, 0.9, &[0.8, -0.4]).unwrap();
        let tau = ds.tau();
        let e2 = 0.81;
        let h = move |y: &[f64]| e2 / (2.0 * tau) * y[4..].iter().map(|v| v * v).sum::<f64>();
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let st = random_state(&mut rng, 4);
        let d = crate::reduced::demchenko_rhs(&ds, &st).unwrap().to_vec();
        for k in 0..8 {
            let coord = move |y: &[f64]| y[k];
            let v = demchenko_bracket(&ds, &coord, &h, &st).unwrap();
            assert!((v - d[k]).abs() < 1e-10, "{k}: {v} {}", d[k]);
        }
    }

    #[test]
    fn unequal_a_breaks_phi12() {
        let s = spec(&[1.9, 1.1, 0.6, 0.6], 0.8, &[(0, 1, 0.9)]);
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let st = random_state(&mut rng, 4);
        let proj = |y: &mut [f64]| project_state(y, 4);
        let tr = integrate(reduced_field(&s), &st.to_vec(), 0.0, 100.0, &Options::default(), Some(&proj)).unwrap();
        let f0 = phi_12(&s, &st).unwrap();
        let worst = tr
            .states
            .iter()
            .map(|y| (phi_12(&s, &ReducedState::from_slice(y).unwrap()).unwrap() - f0).abs())
            .fold(0.0, f64::max);
        assert!(worst / f0.abs().max(1.0) > 1e-3);
    }
}
