//! Chaplygin multiplier, momentum rescaling, invariant measure, and numeric
//! checkers for the Hamiltonization conditions.

#[allow(unused_imports)] // std builds resolve these as inherent methods
use num_traits::Float;
use alloc::vec;
use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::integrals::cal_a_formula;
use crate::integrator::{integrate, project_state, Options, Sampling};
use crate::model::{
    gyro_tensor_c, random_state, random_tangent, sigma_eval, tangent_basis, metric_eval, ReducedState,
    RollingSpec,
};
use crate::reduced::{reduced_rhs_slice, twisted_field};
use crate::so_n::{lie_inner, wedge, VecN};

/// 𝒜(γ) = a₃ + (a₁−a₃)γ₁² + (a₂−a₃)γ₂², defined for a₃ = … = aₙ.
pub fn cal_a(spec: &RollingSpec, gamma: &VecN) -> Result<f64> {
    if !spec.tail_is_uniform() {
        return Err(Error::UnsupportedFamily("cal_A needs a3 = ... = an"));
    }
    if gamma.len() != spec.n() {
        return Err(Error::DimensionMismatch {
            expected: spec.n(),
            found: gamma.len(),
        });
    }
    Ok(cal_a_formula(spec.a(), gamma))
}

/// 𝒩(γ) = ε⟨𝔸γ,γ⟩^{1/(2ε)−1}.
pub fn multiplier_n(spec: &RollingSpec, gamma: &VecN) -> f64 {
    let eps = spec.epsilon();
    eps * spec.cal_a_quadratic(gamma).powf(0.5 / eps - 1.0)
}

/// X(ln 𝒩) for tangent X.
fn dlog_multiplier(spec: &RollingSpec, gamma: &VecN, x: &VecN) -> f64 {
    let s = 0.5 / spec.epsilon() - 1.0;
    let ag = gamma.component_mul(spec.a());
    2.0 * s * ag.dot(x) / ag.dot(gamma)
}

/// (γ, p) ↦ (γ, 𝒩(γ)p).
pub fn rescale_momenta(spec: &RollingSpec, state: &ReducedState) -> ReducedState {
    ReducedState {
        gamma: state.gamma.clone(),
        p: &state.p * multiplier_n(spec, &state.gamma),
    }
}

/// (γ, p̃) ↦ (γ, p̃/𝒩(γ)).
pub fn unrescale_momenta(spec: &RollingSpec, tilde: &ReducedState) -> ReducedState {
    ReducedState {
        gamma: tilde.gamma.clone(),
        p: &tilde.p / multiplier_n(spec, &tilde.gamma),
    }
}

/// ν = (⟨𝔸γ,γ⟩/a₃)^{(n−2)/(2ε)+2−n}, normalized so that ν(e₃) = 1.
pub fn measure_density(spec: &RollingSpec, gamma: &VecN) -> f64 {
    let n = spec.n() as f64;
    let e = (n - 2.0) / (2.0 * spec.epsilon()) + 2.0 - n;
    (spec.cal_a_quadratic(gamma) / spec.a()[2]).powf(e)
}

/// (det 𝐈|_{γ∧ℝⁿ})^{1/(2ε)−1}, the determinant computed on the orthonormal
/// basis γ∧u_k of γ∧ℝⁿ.
pub fn measure_density_det(spec: &RollingSpec, gamma: &VecN) -> Result<f64> {
    let u = tangent_basis(gamma);
    let m = u.ncols();
    let mut basis = Vec::with_capacity(m);
    for k in 0..m {
        basis.push(wedge(gamma, &u.column(k).into_owned())?);
    }
    let images: Vec<_> = basis.iter().map(|b| spec.inertia_apply(b)).collect::<Result<_>>()?;
    let mut gram = DMatrix::zeros(m, m);
    for k in 0..m {
        for l in 0..m {
            gram[(k, l)] = lie_inner(&images[k], &basis[l])?;
        }
    }
    Ok(gram.determinant().powf(0.5 / spec.epsilon() - 1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DivergenceReport {
    pub max_abs: f64,
    pub mean_abs: f64,
    pub samples: usize,
}

/// νF in the chart (q, P) ↦ (γ, p) with γ = (γ₀+Uq)/|γ₀+Uq| and P = Jᵀp,
/// J = ∂γ/∂q; (q, P) are canonical, so the Liouville volume is dq dP.
fn chart_flux(
    spec: &RollingSpec,
    density: &dyn Fn(&VecN) -> f64,
    gamma0: &VecN,
    u: &DMatrix<f64>,
    z: &[f64],
    out: &mut [f64],
) {
    let n = spec.n();
    let m = n - 1;
    let q = DVector::from_column_slice(&z[..m]);
    let pq = DVector::from_column_slice(&z[m..]);
    let v = gamma0 + u * &q;
    let r = v.norm();
    let gamma = &v / r;
    let a = u.transpose() * &gamma;
    let j = (u - &gamma * a.transpose()) / r;
    let g = j.transpose() * &j;
    let ginv = g.try_inverse().expect("chart Jacobian has full rank near its center");
    let p = &j * (&ginv * &pq);
    let mut y = vec![0.0; 2 * n];
    y[..n].copy_from_slice(gamma.as_slice());
    y[n..].copy_from_slice(p.as_slice());
    let mut dy = vec![0.0; 2 * n];
    reduced_rhs_slice(spec, &y, &mut dy);
    let gdot = DVector::from_column_slice(&dy[..n]);
    let pdot = DVector::from_column_slice(&dy[n..]);
    let qdot = &ginv * (j.transpose() * &gdot);
    // Ṗ_k = ⟨ṗ, J_k⟩ + ⟨p, ∂_{q̇}J_k⟩, ∂_{q_l}J_k = −(J_l a_k + γ⟨J_l,u_k⟩ + J_k a_l)/r
    let p_gdot = p.dot(&gdot);
    let a_qdot = a.dot(&qdot);
    let nu = density(&gamma);
    for k in 0..m {
        out[k] = nu * qdot[k];
        let pk = pdot.dot(&j.column(k)) - (p_gdot * a[k] + pq[k] * a_qdot) / r;
        out[m + k] = nu * pk;
    }
}

fn chart_divergence(
    spec: &RollingSpec,
    density: &dyn Fn(&VecN) -> f64,
    state: &ReducedState,
) -> f64 {
    let n = spec.n();
    let m = n - 1;
    let u = tangent_basis(&state.gamma);
    let mut z0 = vec![0.0; 2 * m];
    let pq = u.transpose() * &state.p;
    z0[m..].copy_from_slice(pq.as_slice());
    let mut out = vec![0.0; 2 * m];
    let mut deriv = |h: f64| {
        let mut total = 0.0;
        for i in 0..2 * m {
            let mut z = z0.clone();
            z[i] += h;
            chart_flux(spec, density, &state.gamma, &u, &z, &mut out);
            let fp = out[i];
            z[i] = z0[i] - h;
            chart_flux(spec, density, &state.gamma, &u, &z, &mut out);
            total += (fp - out[i]) / (2.0 * h);
        }
        total
    };
    let h = 1e-5;
    let d1 = deriv(h);
    let d2 = deriv(h / 2.0);
    (4.0 * d2 - d1) / 3.0
}

/// div(ρ·X_red) at random states, for an arbitrary density ρ.
pub fn divergence_check_with<R: Rng + ?Sized>(
    spec: &RollingSpec,
    density: &dyn Fn(&VecN) -> f64,
    samples: usize,
    rng: &mut R,
) -> DivergenceReport {
    let mut max_abs: f64 = 0.0;
    let mut sum = 0.0;
    for _ in 0..samples {
        let st = random_state(rng, spec.n(), 1.0);
        let d = chart_divergence(spec, density, &st).abs();
        max_abs = if d.is_nan() { f64::INFINITY } else { max_abs.max(d) };
        sum += d;
    }
    DivergenceReport {
        max_abs,
        mean_abs: if samples > 0 { sum / samples as f64 } else { 0.0 },
        samples,
    }
}

/// div(ν·X_red) for the closed-form density ν.
pub fn measure_divergence_check<R: Rng + ?Sized>(
    spec: &RollingSpec,
    samples: usize,
    rng: &mut R,
) -> DivergenceReport {
    divergence_check_with(spec, &|g: &VecN| measure_density(spec, g), samples, rng)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhiSimpleReport {
    /// max |C(X,Y) − 𝒩⁻¹X(𝒩)Y + 𝒩⁻¹Y(𝒩)X|
    pub tensor_residual: f64,
    /// max |Σ(X,Z,X) − Z(ln𝒩)g(X,X) + X(ln𝒩)g(X,Z)|
    pub quadratic_residual: f64,
    pub samples: usize,
}

/// Both forms of the ln𝒩-simplicity condition at random (γ, X, Y).
pub fn check_phi_simple<R: Rng + ?Sized>(
    spec: &RollingSpec,
    samples: usize,
    rng: &mut R,
) -> Result<PhiSimpleReport> {
    let n = spec.n();
    let mut tensor_residual: f64 = 0.0;
    let mut quadratic_residual: f64 = 0.0;
    for _ in 0..samples {
        let gamma = random_state(rng, n, 0.0).gamma;
        let x = random_tangent(rng, &gamma);
        let y = random_tangent(rng, &gamma) * rng.random_range(0.5..2.0);
        let c = gyro_tensor_c(spec, &gamma, &x, &y)?;
        let want = &y * dlog_multiplier(spec, &gamma, &x) - &x * dlog_multiplier(spec, &gamma, &y);
        tensor_residual = tensor_residual.max((c - want).amax());
        // quadratic form in the velocity X, covector evaluated on Z = y
        let lhs = sigma_eval(spec, &gamma, &x, &y, &x)?;
        let rhs = dlog_multiplier(spec, &gamma, &y) * metric_eval(spec, &gamma, &x, &x)?
            - dlog_multiplier(spec, &gamma, &x) * metric_eval(spec, &gamma, &x, &y)?;
        quadratic_residual = quadratic_residual.max((lhs - rhs).abs());
    }
    Ok(PhiSimpleReport {
        tensor_residual,
        quadratic_residual,
        samples,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClosednessReport {
    /// max |d(𝒩f)(X,Y,Z)| over tangent triples.
    pub max_abs: f64,
    /// What the theory predicts: n = 3, κ = 0, constant 𝒩, or the symmetric family.
    pub expected_closed: bool,
    pub samples: usize,
}

/// Exterior derivative of 𝒩f with f(X,Y) = (1/ε²)⟨X, κY⟩, by central
/// differences along tangent directions.
pub fn check_magnetic_closedness<R: Rng + ?Sized>(
    spec: &RollingSpec,
    samples: usize,
    rng: &mut R,
) -> ClosednessReport {
    let n = spec.n();
    let e2 = spec.epsilon() * spec.epsilon();
    let k = spec.kappa();
    let form = |g: &VecN, x: &VecN, y: &VecN| multiplier_n(spec, g) * x.dot(&k.apply(y)) / e2;
    let dir = |g: &VecN, d: &VecN, x: &VecN, y: &VecN| {
        let at = |h: f64| form(&(g + d * h), x, y);
        let fd = |h: f64| (at(h) - at(-h)) / (2.0 * h);
        let h = 1e-4;
        (4.0 * fd(h / 2.0) - fd(h)) / 3.0
    };
    let mut max_abs: f64 = 0.0;
    for _ in 0..samples {
        let g = random_state(rng, n, 0.0).gamma;
        let u = tangent_basis(&g);
        let col = |i: usize| u.column(i).into_owned();
        for a in 0..n - 1 {
            for b in (a + 1)..n - 1 {
                for c in (b + 1)..n - 1 {
                    let (x, y, z) = (col(a), col(b), col(c));
                    let d = dir(&g, &x, &y, &z) - dir(&g, &y, &x, &z) + dir(&g, &z, &x, &y);
                    max_abs = max_abs.max(d.abs());
                }
            }
        }
    }
    let constant_n = spec.is_isotropic() || spec.epsilon() == 0.5;
    ClosednessReport {
        max_abs,
        expected_closed: n == 3 || k.is_zero() || constant_n || spec.in_symmetric_family(),
        samples,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThetaReport {
    /// max |tr C(X,·) − X(ln ν)|
    pub max_residual: f64,
    pub samples: usize,
}

/// Θ(X) = tr C(X,·) against the derivative of ln ν along X, with ν from
/// the determinant route.
pub fn theta_form_check<R: Rng + ?Sized>(
    spec: &RollingSpec,
    samples: usize,
    rng: &mut R,
) -> Result<ThetaReport> {
    let n = spec.n();
    let mut max_residual: f64 = 0.0;
    for _ in 0..samples {
        let g = random_state(rng, n, 0.0).gamma;
        let x = random_tangent(rng, &g);
        let u = tangent_basis(&g);
        let mut theta = 0.0;
        for k in 0..n - 1 {
            let uk = u.column(k).into_owned();
            theta += uk.dot(&gyro_tensor_c(spec, &g, &x, &uk)?);
        }
        let ln_nu = |h: f64| -> Result<f64> {
            let gh = (&g + &x * h).normalize();
            Ok(measure_density_det(spec, &gh)?.ln())
        };
        let fd = |h: f64| -> Result<f64> { Ok((ln_nu(h)? - ln_nu(-h)?) / (2.0 * h)) };
        let h = 1e-3;
        let dln = (4.0 * fd(h / 2.0)? - fd(h)?) / 3.0;
        max_residual = max_residual.max((theta - dln).abs());
    }
    Ok(ThetaReport {
        max_residual,
        samples,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquivalenceReport {
    /// sup over samples of |γ_reduced(t) − γ_twisted(τ(t))|
    pub gamma_discrepancy: f64,
    /// same for p against p̃/𝒩
    pub p_discrepancy: f64,
    /// τ(horizon)
    pub tau_end: f64,
    pub samples: usize,
}

/// Integrates the reduced flow in t together with τ̇ = 𝒩(γ), and the
/// twisted flow in τ from the rescaled initial state, then compares them at
/// matching times.
pub fn hamiltonization_equivalence(
    spec: &RollingSpec,
    init: &ReducedState,
    horizon: f64,
    samples: usize,
    opts: &Options,
) -> Result<EquivalenceReport> {
    if !spec.in_symmetric_family() {
        return Err(Error::UnsupportedFamily(
            "Hamiltonization needs a3 = ... = an and kappa = k12 e1^e2",
        ));
    }
    if samples < 2 {
        return Err(Error::TooFewSamples { needed: 2, found: samples });
    }
    let n = spec.n();
    let aug = |_: f64, y: &[f64], dy: &mut [f64]| {
        reduced_rhs_slice(spec, &y[..2 * n], &mut dy[..2 * n]);
        dy[2 * n] = multiplier_n(spec, &DVector::from_column_slice(&y[..n]));
    };
    let mut y0 = init.to_vec();
    y0.push(0.0);
    let proj = |y: &mut [f64]| project_state(y, n);
    let dt = horizon / (samples - 1) as f64;
    let grid: Vec<f64> = (0..samples).map(|k| k as f64 * dt).collect();
    let o1 = opts.clone().with_sampling(Sampling::Times(grid));
    let red = integrate(aug, &y0, 0.0, horizon, &o1, Some(&proj))?;

    let sign = spec.epsilon().signum();
    let taus: Vec<f64> = red.states.iter().map(|y| sign * y[2 * n]).collect();
    let tau_end = *taus.last().ok_or(Error::EmptyTrajectory)?;
    let field = twisted_field(spec)?;
    let signed = |t: f64, y: &[f64], dy: &mut [f64]| {
        field(t, y, dy);
        if sign < 0.0 {
            dy.iter_mut().for_each(|v| *v = -*v);
        }
    };
    let o2 = opts.clone().with_sampling(Sampling::Times(taus.clone()));
    let tw = integrate(signed, &rescale_momenta(spec, init).to_vec(), 0.0, tau_end, &o2, Some(&proj))?;
    if tw.len() != red.len() {
        return Err(Error::TooFewSamples {
            needed: red.len(),
            found: tw.len(),
        });
    }
    let mut gamma_discrepancy: f64 = 0.0;
    let mut p_discrepancy: f64 = 0.0;
    for (a, b) in red.states.iter().zip(&tw.states) {
        let gb = DVector::from_column_slice(&b[..n]);
        let nn = multiplier_n(spec, &gb);
        for i in 0..n {
            gamma_discrepancy = gamma_discrepancy.max((a[i] - b[i]).abs());
            p_discrepancy = p_discrepancy.max((a[n + i] - b[n + i] / nn).abs());
        }
    }
    Ok(EquivalenceReport {
        gamma_discrepancy,
        p_discrepancy,
        tau_end: sign * tau_end,
        samples: red.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{validate_spec, SpecParams};
    use crate::so_n::basis_vector;
    use proptest::prelude::*;
    use rand::SeedableRng;
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

    #[test]
    fn cal_a_values() {
        let s = spec(&[1.7, 1.2, 0.6, 0.6], 1.0, &[]);
        assert!((cal_a(&s, &basis_vector(4, 0)).unwrap() - 1.7).abs() < 1e-15);
        assert_eq!(cal_a(&s, &basis_vector(4, 2)).unwrap(), 0.6);
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        for _ in 0..100 {
            let g = random_state(&mut rng, 4, 0.0).gamma;
            let q: f64 = (0..4).map(|i| s.a()[i] * g[i] * g[i]).sum();
            assert!((cal_a(&s, &g).unwrap() - q).abs() < 1e-13);
        }
        let bad = spec(&[1.0, 2.0, 3.0, 4.0], 1.0, &[]);
        assert!(cal_a(&bad, &basis_vector(4, 0)).is_err());
    }

    #[test]
    fn multiplier_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let g = random_state(&mut rng, 4, 0.0).gamma;
        let s = spec(&[1.7, 1.2, 0.6, 0.6], 0.5, &[]);
        assert_eq!(multiplier_n(&s, &g), 0.5);
        let s = spec(&[2.0, 2.0, 2.0], 1.0, &[]);
        // ⟨𝔸γ,γ⟩ = 2 on the sphere
        assert!((multiplier_n(&s, &basis_vector(3, 1)) - 2f64.powf(-0.5)).abs() < 1e-15);
        let s = spec(&[1.7, 1.2, 0.6, 0.6], -1.0, &[]);
        let q = s.cal_a_quadratic(&g);
        assert!((multiplier_n(&s, &g) + q.powf(-1.5)).abs() < 1e-14);
    }

    #[test]
    fn rescaling_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let s = spec(&[1.7, 1.2, 0.6, 0.6], 0.8, &[]);
        for _ in 0..20 {
            let st = random_state(&mut rng, 4, 1.0);
            let t = rescale_momenta(&s, &st);
            assert!(t.gamma.dot(&t.p).abs() < 1e-15);
            let back = unrescale_momenta(&s, &t);
            assert!((back.p - &st.p).amax() < 1e-14);
        }
        let zero = ReducedState::new(basis_vector(4, 0), DVector::zeros(4)).unwrap();
        assert_eq!(rescale_momenta(&s, &zero).p, DVector::zeros(4));
        let half = spec(&[1.7, 1.2, 0.6, 0.6], 0.5, &[]);
        let st = random_state(&mut rng, 4, 1.0);
        assert!((rescale_momenta(&half, &st).p - &st.p / 2.0).amax() < 1e-16);
    }

    #[test]
    fn density_routes_agree_up_to_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for &(ref a, eps) in &[
            (vec![1.7, 1.2, 0.6], 1.0),
            (vec![1.7, 1.2, 0.6, 0.9], 0.7),
            (vec![0.8, 1.2, 1.6, 0.9, 1.1], -1.0),
        ] {
            let s = spec(a, eps, &[]);
            let ratios: Vec<f64> = (0..100)
                .map(|_| {
                    let g = random_state(&mut rng, a.len(), 0.0).gamma;
                    measure_density_det(&s, &g).unwrap() / measure_density(&s, &g)
                })
                .collect();
            let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
            let var = ratios.iter().map(|r| (r / mean - 1.0).powi(2)).sum::<f64>() / ratios.len() as f64;
            assert!(var < 1e-18, "{var}");
            for r in &ratios {
                assert!((r / mean - 1.0).abs() < 1e-10);
            }
        }
        let e3 = basis_vector(4, 2);
        let s = spec(&[1.7, 1.2, 0.6, 0.9], 0.7, &[]);
        assert!((measure_density(&s, &e3) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn density_special_cases() {
        let iso = spec(&[1.3; 4], 0.7, &[]);
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        for _ in 0..10 {
            let g = random_state(&mut rng, 4, 0.0).gamma;
            assert!((measure_density(&iso, &g) - 1.0).abs() < 1e-14);
        }
        let s = spec(&[1.7, 1.2, 0.6], 1.0, &[]);
        let g = random_state(&mut rng, 3, 0.0).gamma;
        let want = (s.cal_a_quadratic(&g) / 0.6).powf(-0.5);
        assert!((measure_density(&s, &g) - want).abs() < 1e-14);
    }

    #[test]
    fn divergence_vanishes_for_measure() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        for &(ref a, eps, ref k) in &[
            (vec![1.3, 1.3, 1.3], 1.0, vec![(0, 1, 0.5)]),
            (vec![1.7, 1.2, 0.6], 2.0, vec![(0, 2, 0.4)]),
            (vec![1.7, 1.2, 0.6, 0.9], 0.7, vec![(0, 1, 0.3), (1, 3, -0.7)]),
            (vec![0.8, 1.2, 1.6, 0.9, 1.1], -1.0, vec![]),
        ] {
            let s = spec(a, eps, k);
            let r = measure_divergence_check(&s, 30, &mut rng);
            assert!(r.max_abs <= 1e-6, "{a:?} {r:?}");
        }
    }

    #[test]
    fn wrong_exponent_is_detected() {
        let mut rng = ChaCha8Rng::seed_from_u64(26);
        let s = spec(&[1.7, 1.2, 0.6, 0.9], 0.7, &[(0, 1, 0.3)]);
        let wrong = |g: &VecN| measure_density(&s, g) * s.cal_a_quadratic(g);
        let r = divergence_check_with(&s, &wrong, 30, &mut rng);
        assert!(r.max_abs > 1e-2, "{r:?}");
    }

    #[test]
    fn phi_simple_holds() {
        let mut rng = ChaCha8Rng::seed_from_u64(27);
        for &(ref a, eps) in &[
            (vec![1.7, 1.7, 0.6, 0.6], 0.7),
            (vec![1.7, 1.2, 0.6], 2.0),
            (vec![1.7, 1.2, 0.6, 0.6, 0.6], -1.0),
        ] {
            let s = spec(a, eps, &[(0, 1, 0.4)]);
            let r = check_phi_simple(&s, 100, &mut rng).unwrap();
            assert!(r.tensor_residual <= 1e-9 && r.quadratic_residual <= 1e-9, "{r:?}");
        }
        for s in [spec(&[1.7, 1.2, 0.6], 0.5, &[]), spec(&[1.1; 4], 0.8, &[])] {
            let r = check_phi_simple(&s, 20, &mut rng).unwrap();
            assert!(r.tensor_residual <= 1e-14, "{r:?}");
        }
    }

    #[test]
    fn closedness_expectations() {
        let mut rng = ChaCha8Rng::seed_from_u64(28);
        let s = spec(&[1.7, 1.2, 0.6], 0.7, &[(0, 1, 0.4), (0, 2, -0.3), (1, 2, 0.9)]);
        let r = check_magnetic_closedness(&s, 20, &mut rng);
        assert!(r.expected_closed && r.max_abs <= 1e-8, "{r:?}");
        let s = spec(&[1.7, 1.2, 0.6, 0.6, 0.6], 0.7, &[(0, 1, 0.4)]);
        let r = check_magnetic_closedness(&s, 20, &mut rng);
        assert!(r.expected_closed && r.max_abs <= 1e-8, "{r:?}");
        let s = spec(&[1.7, 1.2, 0.6, 0.9], 0.7, &[(0, 1, 0.4), (2, 3, 0.8)]);
        let r = check_magnetic_closedness(&s, 20, &mut rng);
        assert!(!r.expected_closed && r.max_abs > 1e-3, "{r:?}");
        let s = spec(&[1.7, 1.2, 0.6, 0.9], 0.7, &[]);
        let r = check_magnetic_closedness(&s, 5, &mut rng);
        assert_eq!(r.max_abs, 0.0);
    }

    #[test]
    fn theta_is_log_density_derivative() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for &(ref a, eps) in &[
            (vec![1.7, 1.7, 0.6, 0.6], 0.7),
            (vec![1.7, 1.2, 0.6], 2.0),
            (vec![1.3; 4], 0.9),
            (vec![1.7, 1.2, 0.6, 0.6], 0.5),
        ] {
            let s = spec(a, eps, &[]);
            let r = theta_form_check(&s, 50, &mut rng).unwrap();
            assert!(r.max_residual <= 1e-8, "{a:?} {r:?}");
        }
    }

    #[test]
    fn equivalence_on_round_sphere() {
        let s = spec(&[1.0, 1.0, 1.0], 1.0, &[]);
        let st = ReducedState::new(basis_vector(3, 0), basis_vector(3, 1) * 0.7).unwrap();
        let r = hamiltonization_equivalence(&s, &st, 20.0, 101, &Options::default()).unwrap();
        assert!(r.gamma_discrepancy <= 1e-9, "{r:?}");
    }

    #[test]
    fn equivalence_in_symmetric_family() {
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        for &(ref a, eps) in &[
            (vec![1.7, 1.2, 0.6], 0.8),
            (vec![1.7, 1.7, 0.6, 0.6, 0.6], 2.0),
            (vec![1.4, 1.4, 0.9, 0.9], -1.0),
        ] {
            let s = spec(a, eps, &[(0, 1, 0.6)]);
            let st = random_state(&mut rng, a.len(), 1.0);
            let r = hamiltonization_equivalence(&s, &st, 20.0, 201, &Options::default()).unwrap();
            assert!(r.gamma_discrepancy <= 1e-6 && r.p_discrepancy <= 1e-6, "{a:?} {r:?}");
        }
        let bad = spec(&[1.0, 2.0, 3.0, 4.0], 1.0, &[]);
        let st = random_state(&mut rng, 4, 1.0);
        assert!(hamiltonization_equivalence(&bad, &st, 1.0, 10, &Options::default()).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn multiplier_never_vanishes(
            a in proptest::collection::vec(0.2f64..3.0, 4),
            eps in prop_oneof![Just(-1.0), Just(0.5), Just(1.0), Just(2.0), -3.0f64..-0.1, 0.1f64..3.0],
            seed in any::<u64>(),
        ) {
            let s = spec(&a, eps, &[]);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..50 {
                let g = random_state(&mut rng, 4, 0.0).gamma;
                let v = multiplier_n(&s, &g);
                prop_assert!(v.is_finite() && v.abs() > 0.0);
                prop_assert_eq!(v.signum(), eps.signum());
            }
        }
    }
}
