//! Vector fields on T*S^{n−1}: the reduced gyroscopic flow, the isotropic
//! (Demchenko) flow, and the twisted Hamiltonian flow with Dirac multipliers.

#[allow(unused_imports)] // std builds resolve these as inherent methods
use num_traits::Float;
use alloc::vec;
use alloc::vec::Vec;
use nalgebra::{DVector, Matrix2, Vector2};

use crate::error::{Error, Result};
use crate::model::{inertia_wedge_apply, legendre_inverse_unchecked, DemchenkoSpec, ReducedState, RollingSpec};
use crate::so_n::VecN;

#[derive(Debug, Clone, PartialEq)]
pub struct StateDerivative {
    pub dgamma: VecN,
    pub dp: VecN,
}

impl StateDerivative {
    /// (⟨γ, dγ⟩, ⟨dγ, p⟩ + ⟨γ, dp⟩): time derivatives of the two constraints.
    pub fn constraint_rates(&self, state: &ReducedState) -> (f64, f64) {
        (
            2.0 * state.gamma.dot(&self.dgamma),
            self.dgamma.dot(&state.p) + state.gamma.dot(&self.dp),
        )
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.dgamma.iter().chain(self.dp.iter()).copied().collect()
    }
}

fn check_state(n: usize, state: &ReducedState) -> Result<()> {
    if state.gamma.len() != n || state.p.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: state.gamma.len(),
        });
    }
    let v = state.constraint_violation();
    if v > crate::model::MANIFOLD_TOL * state.p.norm().max(1.0) {
        return Err(Error::OffManifold(v));
    }
    Ok(())
}

fn split(v: Vec<f64>, n: usize) -> StateDerivative {
    StateDerivative {
        dgamma: DVector::from_column_slice(&v[..n]),
        dp: DVector::from_column_slice(&v[n..2 * n]),
    }
}

/// Reduced flow on a flat `[γ, p]` slice; `dy` receives `[γ̇, ṗ]`.
pub fn reduced_rhs_slice(spec: &RollingSpec, y: &[f64], dy: &mut [f64]) {
    let n = spec.n();
    let a = spec.a();
    let eps = spec.epsilon();
    let e2 = eps * eps;
    let e3 = e2 * eps;
    let k = spec.kappa().matrix();
    let (g, p) = (&y[..n], &y[n..2 * n]);

    let mut cal = 0.0;
    let mut c = 0.0;
    for i in 0..n {
        cal += a[i] * g[i] * g[i];
        c += g[i] * p[i] / a[i];
    }
    let (dg, dp) = dy.split_at_mut(n);
    let s = e2 / cal;
    let mut h2 = 0.0;
    let mut axx = 0.0;
    let mut agx = 0.0;
    for i in 0..n {
        let x = s * (p[i] / a[i] - c * g[i]);
        dg[i] = x;
        h2 += x * p[i];
        axx += a[i] * x * x;
        agx += a[i] * g[i] * x;
    }
    // 𝐈(γ∧X)X = 𝔸γ⟨𝔸X,X⟩ − 𝔸X⟨𝔸γ,X⟩, ⟨X, κγ⟩, κX
    let mut ixx_g = 0.0;
    let mut x_kg = 0.0;
    for i in 0..n {
        let ixx = a[i] * (g[i] * axx - dg[i] * agx);
        ixx_g += ixx * g[i];
        let mut kx = 0.0;
        let mut kg = 0.0;
        for j in 0..n {
            kx += k[(i, j)] * dg[j];
            kg += k[(i, j)] * g[j];
        }
        x_kg += dg[i] * kg;
        dp[i] = (1.0 - eps) / e3 * ixx + kx / e2;
    }
    let mu = (eps - 1.0) / e3 * ixx_g - h2 + x_kg / e2;
    for i in 0..n {
        dp[i] += mu * g[i];
    }
}

/// γ̇ = X_γ, ṗ = ((1−ε)/ε³)𝐈(γ∧X_γ)X_γ + (1/ε²)κX_γ + μγ.
pub fn reduced_rhs(spec: &RollingSpec, state: &ReducedState) -> Result<StateDerivative> {
    check_state(spec.n(), state)?;
    let y = state.to_vec();
    let mut dy = vec![0.0; y.len()];
    reduced_rhs_slice(spec, &y, &mut dy);
    Ok(split(dy, spec.n()))
}

/// The reduced field as an integrator callback.
pub fn reduced_field(spec: &RollingSpec) -> impl Fn(f64, &[f64], &mut [f64]) + '_ {
    move |_, y, dy| reduced_rhs_slice(spec, y, dy)
}

pub fn demchenko_rhs_slice(spec: &DemchenkoSpec, y: &[f64], dy: &mut [f64]) {
    let n = spec.n();
    let tau = spec.tau();
    let e2 = spec.epsilon() * spec.epsilon();
    let k = spec.kappa().matrix();
    let (g, p) = (&y[..n], &y[n..2 * n]);
    let (dg, dp) = dy.split_at_mut(n);
    let mut pp = 0.0;
    let mut pkg = 0.0;
    for i in 0..n {
        pp += p[i] * p[i];
        let mut kp = 0.0;
        let mut kg = 0.0;
        for j in 0..n {
            kp += k[(i, j)] * p[j];
            kg += k[(i, j)] * g[j];
        }
        pkg += p[i] * kg;
        dg[i] = e2 / tau * p[i];
        dp[i] = kp / tau;
    }
    let mu = pkg / tau - e2 / tau * pp;
    for i in 0..n {
        dp[i] += mu * g[i];
    }
}

/// γ̇ = (ε²/τ)p, ṗ = (1/τ)κp + μγ, μ = (1/τ)⟨p,κγ⟩ − (ε²/τ)⟨p,p⟩.
pub fn demchenko_rhs(spec: &DemchenkoSpec, state: &ReducedState) -> Result<StateDerivative> {
    check_state(spec.n(), state)?;
    let y = state.to_vec();
    let mut dy = vec![0.0; y.len()];
    demchenko_rhs_slice(spec, &y, &mut dy);
    Ok(split(dy, spec.n()))
}

pub fn demchenko_field(spec: &DemchenkoSpec) -> impl Fn(f64, &[f64], &mut [f64]) + '_ {
    move |_, y, dy| demchenko_rhs_slice(spec, y, dy)
}

/// The covector δγ ↦ ((2ε−1)/ε³)⟨𝐈(γ∧X_γ)X_γ, δγ⟩ on the tangent space,
/// represented by its tangential part.
pub fn jk_force(spec: &RollingSpec, state: &ReducedState) -> VecN {
    let x = legendre_inverse_unchecked(spec, &state.gamma, &state.p);
    let k = crate::model::sigma_coefficient(spec.epsilon());
    let f = inertia_wedge_apply(spec, &state.gamma, &x, &x) * k;
    let normal = f.dot(&state.gamma);
    f - &state.gamma * normal
}

/// (1/ε²)𝐈(γ∧X)X, the velocity-quadratic force of the metric alone.
pub fn geodesic_force(spec: &RollingSpec, state: &ReducedState) -> VecN {
    let x = legendre_inverse_unchecked(spec, &state.gamma, &state.p);
    let e2 = spec.epsilon() * spec.epsilon();
    inertia_wedge_apply(spec, &state.gamma, &x, &x) / e2
}

/// (1/ε²)κX.
pub fn magnetic_force(spec: &RollingSpec, state: &ReducedState) -> VecN {
    let x = legendre_inverse_unchecked(spec, &state.gamma, &state.p);
    let e2 = spec.epsilon() * spec.epsilon();
    spec.kappa().apply(&x) / e2
}

/// Multipliers of the constrained magnetic flow
/// γ' = H_p − λ₂γ, p' = −H_γ + 2λ₁γ + λ₂p + F(γ'),
/// chosen so that ⟨γ,γ⟩ and ⟨γ,p⟩ are conserved.
fn solve_multipliers(
    gamma: &VecN,
    p: &VecN,
    h_p: &VecN,
    minus_h_gamma: &VecN,
    f: &dyn Fn(&VecN) -> VecN,
) -> Result<(f64, f64)> {
    let gg = gamma.dot(gamma);
    let fg_g = f(gamma).dot(gamma);
    let m = Matrix2::new(0.0, -2.0 * gg, 2.0 * gg, -fg_g);
    let rhs = Vector2::new(
        -2.0 * gamma.dot(h_p),
        -minus_h_gamma.dot(gamma) - f(h_p).dot(gamma) - p.dot(h_p),
    );
    let lu = m.lu();
    let sol = lu
        .solve(&rhs)
        .ok_or(Error::Singular("Dirac multiplier system"))?;
    Ok((sol[0], sol[1]))
}

fn constrained_rhs(
    gamma: &VecN,
    p: &VecN,
    h_p: &VecN,
    minus_h_gamma: &VecN,
    f: &dyn Fn(&VecN) -> VecN,
) -> Result<(StateDerivative, (f64, f64))> {
    let (l1, l2) = solve_multipliers(gamma, p, h_p, minus_h_gamma, f)?;
    let dgamma = h_p - gamma * l2;
    let dp = minus_h_gamma + gamma * (2.0 * l1) + p * l2 + f(&dgamma);
    Ok((StateDerivative { dgamma, dp }, (l1, l2)))
}

fn require_symmetric_family(spec: &RollingSpec) -> Result<()> {
    if !spec.in_symmetric_family() {
        return Err(Error::UnsupportedFamily(
            "twisted flow needs a3 = ... = an and kappa = k12 e1^e2",
        ));
    }
    Ok(())
}

/// 𝒜(γ) = a₃ + (a₁−a₃)γ₁² + (a₂−a₃)γ₂² and its ambient gradient.
fn cal_a_with_gradient(spec: &RollingSpec, gamma: &VecN) -> (f64, VecN) {
    let a = spec.a();
    let d1 = a[0] - a[2];
    let d2 = a[1] - a[2];
    let val = a[2] + d1 * gamma[0] * gamma[0] + d2 * gamma[1] * gamma[1];
    let mut grad = DVector::zeros(gamma.len());
    grad[0] = 2.0 * d1 * gamma[0];
    grad[1] = 2.0 * d2 * gamma[1];
    (val, grad)
}

struct TwistedParts {
    h_p: VecN,
    minus_h_gamma: VecN,
    c: f64,
}

fn twisted_parts(spec: &RollingSpec, gamma: &VecN, pt: &VecN) -> TwistedParts {
    let eps = spec.epsilon();
    let (cal, grad) = cal_a_with_gradient(spec, gamma);
    let s = 1.0 - 1.0 / eps;
    let ainv_p = pt.component_div(spec.a());
    let q = pt.dot(&ainv_p);
    let h_p = ainv_p * cal.powf(s);
    let minus_h_gamma = grad * (-0.5 * s * cal.powf(s - 1.0) * q);
    let c = spec.kappa().get(0, 1) / eps * cal.powf(1.0 / (2.0 * eps) - 1.0);
    TwistedParts {
        h_p,
        minus_h_gamma,
        c,
    }
}

fn e12_apply(c: f64) -> impl Fn(&VecN) -> VecN {
    move |v: &VecN| {
        let mut out = DVector::zeros(v.len());
        out[0] = c * v[1];
        out[1] = -c * v[0];
        out
    }
}

/// h* = ½𝒜^{1−1/ε}⟨p̃, 𝔸⁻¹p̃⟩.
pub fn twisted_hamiltonian(spec: &RollingSpec, tilde: &ReducedState) -> f64 {
    let (cal, _) = cal_a_with_gradient(spec, &tilde.gamma);
    let ainv_p = tilde.p.component_div(spec.a());
    0.5 * cal.powf(1.0 - 1.0 / spec.epsilon()) * tilde.p.dot(&ainv_p)
}

/// (λ₁, λ₂) for the twisted flow at (γ, p̃).
pub fn dirac_multipliers(spec: &RollingSpec, tilde: &ReducedState) -> Result<(f64, f64)> {
    require_symmetric_family(spec)?;
    let parts = twisted_parts(spec, &tilde.gamma, &tilde.p);
    let f = e12_apply(parts.c);
    solve_multipliers(&tilde.gamma, &tilde.p, &parts.h_p, &parts.minus_h_gamma, &f)
}

/// The magnetic Hamiltonian flow of h* in the (γ, p̃) chart.
pub fn twisted_rhs(spec: &RollingSpec, tilde: &ReducedState) -> Result<StateDerivative> {
    require_symmetric_family(spec)?;
    check_state(spec.n(), tilde)?;
    twisted_rhs_unchecked(spec, &tilde.gamma, &tilde.p).map(|(d, _)| d)
}

fn twisted_rhs_unchecked(
    spec: &RollingSpec,
    gamma: &VecN,
    pt: &VecN,
) -> Result<(StateDerivative, (f64, f64))> {
    let parts = twisted_parts(spec, gamma, pt);
    let f = e12_apply(parts.c);
    constrained_rhs(gamma, pt, &parts.h_p, &parts.minus_h_gamma, &f)
}

/// Twisted flow as an integrator callback. Fails up front for specs outside
/// the symmetric family.
pub fn twisted_field(spec: &RollingSpec) -> Result<impl Fn(f64, &[f64], &mut [f64]) + '_> {
    require_symmetric_family(spec)?;
    let n = spec.n();
    Ok(move |_: f64, y: &[f64], dy: &mut [f64]| {
        let g = DVector::from_column_slice(&y[..n]);
        let p = DVector::from_column_slice(&y[n..2 * n]);
        match twisted_rhs_unchecked(spec, &g, &p) {
            Ok((d, _)) => {
                dy[..n].copy_from_slice(d.dgamma.as_slice());
                dy[n..2 * n].copy_from_slice(d.dp.as_slice());
            }
            Err(_) => dy.iter_mut().for_each(|v| *v = f64::NAN),
        }
    })
}

/// Multipliers of the isotropic system written with Dirac constraints:
/// H = (ε²/2τ)⟨p,p⟩, magnetic term (1/ε²)κ.
pub fn demchenko_dirac_multipliers(spec: &DemchenkoSpec, state: &ReducedState) -> Result<(f64, f64)> {
    let e2 = spec.epsilon() * spec.epsilon();
    let h_p = &state.p * (e2 / spec.tau());
    let zero = DVector::zeros(spec.n());
    let k = spec.kappa().clone();
    let f = move |v: &VecN| k.apply(v) / e2;
    solve_multipliers(&state.gamma, &state.p, &h_p, &zero, &f)
}

/// γ̇ = (ε²/τ)p − λ₂γ, ṗ = 2λ₁γ + λ₂p + (1/τ)κp − (λ₂/ε²)κγ.
pub fn demchenko_dirac_rhs(spec: &DemchenkoSpec, state: &ReducedState) -> Result<StateDerivative> {
    let e2 = spec.epsilon() * spec.epsilon();
    let h_p = &state.p * (e2 / spec.tau());
    let zero = DVector::zeros(spec.n());
    let k = spec.kappa().clone();
    let f = move |v: &VecN| k.apply(v) / e2;
    constrained_rhs(&state.gamma, &state.p, &h_p, &zero, &f).map(|(d, _)| d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrator::{integrate, project_state, Options};
    use crate::model::{hamiltonian, legendre, validate_spec, SpecParams};
    use crate::so_n::basis_vector;
    use alloc::vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn spec(a: &[f64], d: f64, eps: f64, kappa: &[(usize, usize, f64)]) -> RollingSpec {
        validate_spec(&SpecParams {
            a: a.to_vec(),
            d,
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

    fn random_spec(rng: &mut ChaCha8Rng, n: usize) -> RollingSpec {
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..2.0)).collect();
        let mut kap = vec![];
        for i in 0..n {
            for j in (i + 1)..n {
                kap.push((i, j, rng.random_range(-1.0..1.0)));
            }
        }
        let eps = [-1.0, 0.5, 1.0, 2.0, 0.7][rng.random_range(0..5)];
        spec(&a, 0.1, eps, &kap)
    }

    #[test]
    fn great_circle_example() {
        let s = spec(&[1.0, 1.0, 1.0], 0.0, 1.0, &[]);
        let st = ReducedState::new(basis_vector(3, 0), basis_vector(3, 1)).unwrap();
        let d = reduced_rhs(&s, &st).unwrap();
        assert_eq!(d.dgamma, basis_vector(3, 1));
        assert_eq!(d.dp, -basis_vector(3, 0));
    }

    #[test]
    fn derivative_is_tangent_to_constraints() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let n = rng.random_range(3..7);
            let s = random_spec(&mut rng, n);
            let st = random_state(&mut rng, n);
            let d = reduced_rhs(&s, &st).unwrap();
            let (r1, r2) = d.constraint_rates(&st);
            assert!(r1.abs() < 1e-12 && r2.abs() < 1e-11, "{r1} {r2}");
        }
    }

    #[test]
    fn isotropic_matches_demchenko() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for &n in &[3usize, 4, 5] {
            let tau: f64 = 1.7;
            let blocks = [0.8, -0.3];
            let ds = DemchenkoSpec::new(n, tau, 0.6, &blocks[..n / 2]).unwrap();
            let rs = ds.to_rolling_spec();
            for _ in 0..20 {
                let st = random_state(&mut rng, n);
                let a = reduced_rhs(&rs, &st).unwrap();
                let b = demchenko_rhs(&ds, &st).unwrap();
                assert!((&a.dgamma - &b.dgamma).amax() < 1e-13);
                assert!((&a.dp - &b.dp).amax() < 1e-13);
                let (r1, r2) = b.constraint_rates(&st);
                assert!(r1.abs() < 1e-13 && r2.abs() < 1e-13);
            }
        }
    }

    #[test]
    fn demchenko_three_dim_entries() {
        // the n = 3 equations written out coordinate by coordinate
        let (tau, eps, k) = (2.0, 0.8, 0.7);
        let ds = DemchenkoSpec::new(3, tau, eps, &[k]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let st = random_state(&mut rng, 3);
        let (g, p) = (&st.gamma, &st.p);
        let e2 = eps * eps;
        let mu = k / tau * (p[0] * g[1] - p[1] * g[0]) - e2 / tau * p.norm_squared();
        let d = demchenko_rhs(&ds, &st).unwrap();
        let want_dp = [k / tau * p[1] + mu * g[0], -k / tau * p[0] + mu * g[1], mu * g[2]];
        for i in 0..3 {
            assert!((d.dgamma[i] - e2 / tau * p[i]).abs() < 1e-15);
            assert!((d.dp[i] - want_dp[i]).abs() < 1e-14);
        }
        // κ = 0: μ = −(ε²/τ)⟨p,p⟩
        let free = DemchenkoSpec::new(3, tau, eps, &[]).unwrap();
        let d = demchenko_rhs(&free, &st).unwrap();
        let mu0 = -e2 / tau * p.norm_squared();
        assert!((&d.dp - g * mu0).amax() < 1e-15);
    }

    #[test]
    fn half_epsilon_force_is_normal() {
        // at ε = 1/2 the quadratic force equals the geodesic one tangentially
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let base = random_spec(&mut rng, 4);
            let s = base.with_epsilon(0.5).unwrap();
            let st = random_state(&mut rng, 4);
            assert!(jk_force(&s, &st).amax() < 1e-15);
        }
    }

    /// ∂l/∂γ of l(γ,v) = (1/2ε²)(⟨𝔸v,v⟩⟨𝔸γ,γ⟩ − ⟨𝔸γ,v⟩²) by central differences.
    fn lagrangian_gradient(s: &RollingSpec, g: &VecN, v: &VecN) -> VecN {
        let e2 = s.epsilon() * s.epsilon();
        let l = |g: &VecN| {
            let ag = g.component_mul(s.a());
            let av = v.component_mul(s.a());
            (av.dot(v) * ag.dot(g) - ag.dot(v).powi(2)) / (2.0 * e2)
        };
        let h = 1e-5;
        DVector::from_fn(g.len(), |i, _| {
            let mut gp = g.clone();
            let mut gm = g.clone();
            gp[i] += h;
            gm[i] -= h;
            (l(&gp) - l(&gm)) / (2.0 * h)
        })
    }

    #[test]
    fn force_decomposition() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let n = rng.random_range(3..6);
            let s = random_spec(&mut rng, n);
            let st = random_state(&mut rng, n);
            let d = reduced_rhs(&s, &st).unwrap();
            let x = legendre_inverse_unchecked(&s, &st.gamma, &st.p);
            let geo = lagrangian_gradient(&s, &st.gamma, &x);
            let geo_closed = geodesic_force(&s, &st);
            assert!((&geo - &geo_closed).amax() < 1e-8 * (1.0 + geo.amax()));
            let mag = magnetic_force(&s, &st);
            let rest = &d.dp - geo_closed - mag;
            let rest_t = &rest - &st.gamma * rest.dot(&st.gamma);
            let jk = jk_force(&s, &st);
            // raise both covectors with the inverse metric
            let a = legendre_inverse_unchecked(&s, &st.gamma, &rest_t);
            let b = legendre_inverse_unchecked(&s, &st.gamma, &jk);
            assert!((&a + &b).amax() < 1e-10 * (1.0 + b.amax()));
        }
    }

    #[test]
    fn zero_kappa_matches_plain_field() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = [0.7, 1.3, 0.9, 1.8];
        let s = spec(&a, 0.2, 2.0, &[]);
        for _ in 0..20 {
            let st = random_state(&mut rng, 4);
            let d = reduced_rhs(&s, &st).unwrap();
            // non-gyroscopic field written independently
            let x = legendre_inverse_unchecked(&s, &st.gamma, &st.p);
            let eps: f64 = 2.0;
            let ixx = inertia_wedge_apply(&s, &st.gamma, &x, &x);
            let h = hamiltonian(&s, &st);
            let mu = (eps - 1.0) / eps.powi(3) * ixx.dot(&st.gamma) - 2.0 * h;
            let dp = ixx * ((1.0 - eps) / eps.powi(3)) + &st.gamma * mu;
            assert!((&d.dgamma - &x).amax() < 1e-14);
            assert!((d.dp - dp).amax() < 1e-13);
        }
    }

    #[test]
    fn dirac_multipliers_isotropic_closed_forms() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (tau, eps) = (1.4, 0.9);
        let ds = DemchenkoSpec::new(4, tau, eps, &[0.6, -1.1]).unwrap();
        for _ in 0..50 {
            let st = random_state(&mut rng, 4);
            let (l1, l2) = demchenko_dirac_multipliers(&ds, &st).unwrap();
            let kg = ds.kappa().apply(&st.gamma);
            let want_l1 = (st.p.dot(&kg) / tau - eps * eps / tau * st.p.norm_squared()) / 2.0;
            assert!(l2.abs() < 1e-14);
            assert!((l1 - want_l1).abs() < 1e-13);
            let a = demchenko_dirac_rhs(&ds, &st).unwrap();
            let b = demchenko_rhs(&ds, &st).unwrap();
            assert!((a.dgamma - b.dgamma).amax() < 1e-13);
            assert!((a.dp - b.dp).amax() < 1e-13);
        }
    }

    #[test]
    fn twisted_constraint_rates_vanish() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            let n = rng.random_range(3..7);
            let a1 = rng.random_range(0.5..2.0);
            let a2 = rng.random_range(0.5..2.0);
            let a3 = rng.random_range(0.5..2.0);
            let mut a = vec![a3; n];
            a[0] = a1;
            a[1] = a2;
            let eps = [-1.0, 0.5, 1.0, 2.0, 0.7][rng.random_range(0..5)];
            let s = spec(&a, 0.0, eps, &[(0, 1, rng.random_range(-1.0..1.0))]);
            let st = random_state(&mut rng, n);
            let d = twisted_rhs(&s, &st).unwrap();
            let (r1, r2) = d.constraint_rates(&st);
            assert!(r1.abs() < 1e-12 && r2.abs() < 1e-12, "{r1} {r2}");
        }
    }

    #[test]
    fn twisted_rejects_general_specs() {
        let s = spec(&[1.0, 2.0, 3.0, 4.0], 0.0, 1.0, &[(0, 1, 0.3)]);
        let st = ReducedState::new(basis_vector(4, 0), basis_vector(4, 1)).unwrap();
        assert!(matches!(twisted_rhs(&s, &st), Err(Error::UnsupportedFamily(_))));
        let s = spec(&[1.0, 1.0, 3.0, 3.0], 0.0, 1.0, &[(0, 1, 0.3), (2, 3, 0.1)]);
        assert!(dirac_multipliers(&s, &st).is_err());
    }

    #[test]
    fn twisted_free_round_sphere_is_geodesic() {
        let s = spec(&[1.0, 1.0, 1.0], 0.0, 1.0, &[]);
        let st = ReducedState::new(basis_vector(3, 0), basis_vector(3, 1) * 2.0).unwrap();
        let d = twisted_rhs(&s, &st).unwrap();
        assert!((&d.dgamma - basis_vector(3, 1) * 2.0).amax() < 1e-15);
        assert!((&d.dp + basis_vector(3, 0) * 4.0).amax() < 1e-15);
    }

    #[test]
    fn twisted_flow_conserves_energy_and_momentum() {
        let (a1, a3, k, eps) = (1.6, 0.8, 0.7, 0.8);
        let s = spec(&[a1, a1, a3, a3], 0.0, eps, &[(0, 1, k)]);
        let g0 = DVector::from_vec(vec![0.6, 0.3, -0.5, 0.2]);
        let st = ReducedState::projected(g0, DVector::from_vec(vec![0.1, 0.5, 0.2, -0.4]));
        let field = twisted_field(&s).unwrap();
        let proj = |y: &mut [f64]| project_state(y, 4);
        let tr = integrate(&field, &st.to_vec(), 0.0, 50.0, &Options::default(), Some(&proj)).unwrap();
        let phi = |t: &ReducedState| {
            let (cal, _) = cal_a_with_gradient(&s, &t.gamma);
            t.gamma[0] * t.p[1] - t.gamma[1] * t.p[0]
                + k / (a1 - a3) * cal.powf(1.0 / (2.0 * eps))
        };
        let h0 = twisted_hamiltonian(&s, &st);
        let f0 = phi(&st);
        for y in &tr.states {
            let t = ReducedState::from_slice(y).unwrap();
            assert!((twisted_hamiltonian(&s, &t) - h0).abs() <= 1e-9 * h0.max(1.0));
            assert!((phi(&t) - f0).abs() <= 1e-9 * f0.abs().max(1.0));
        }
    }

    #[test]
    fn energy_is_conserved_along_reduced_flow() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..3 {
            let s = random_spec(&mut rng, 4);
            let st = random_state(&mut rng, 4);
            let proj = |y: &mut [f64]| project_state(y, 4);
            let f = reduced_field(&s);
            let tr = integrate(&f, &st.to_vec(), 0.0, 100.0, &Options::default(), Some(&proj)).unwrap();
            let h0 = hamiltonian(&s, &st);
            for y in &tr.states {
                let t = ReducedState::from_slice(y).unwrap();
                assert!((hamiltonian(&s, &t) - h0).abs() <= 1e-8 * h0.max(1e-300));
                assert!(t.constraint_violation() <= 1e-9);
            }
        }
    }

    #[test]
    fn magnetic_time_reversal() {
        // (γ(t), p(t)) for κ gives (γ(−t), −p(−t)) for −κ
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let s = random_spec(&mut rng, 4);
        let flipped = s.with_kappa(s.kappa().scale(-1.0)).unwrap();
        let st = random_state(&mut rng, 4);
        let proj = |y: &mut [f64]| project_state(y, 4);
        let fwd = integrate(reduced_field(&s), &st.to_vec(), 0.0, 5.0, &Options::default(), Some(&proj)).unwrap();
        let end = fwd.last_state().unwrap().to_vec();
        let mut rev0 = end.clone();
        rev0[4..].iter_mut().for_each(|v| *v = -*v);
        let back = integrate(reduced_field(&flipped), &rev0, 0.0, 5.0, &Options::default(), Some(&proj)).unwrap();
        let fin = back.last_state().unwrap();
        for i in 0..4 {
            assert!((fin[i] - st.gamma[i]).abs() < 1e-8);
            assert!((fin[4 + i] + st.p[i]).abs() < 1e-8);
        }
        // sanity: legendre of the velocity reproduces the momentum
        let x = legendre_inverse_unchecked(&s, &st.gamma, &st.p);
        assert!((legendre(&s, &st.gamma, &x).unwrap() - &st.p).amax() < 1e-11);
    }
}
