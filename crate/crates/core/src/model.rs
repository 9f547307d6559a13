//! System parameters, reduced states, and the reduced Lagrangian geometry:
//! metric, Legendre transform, Hamiltonian, and the Σ / C tensors.

#[allow(unused_imports)] // std builds resolve these as inherent methods
use num_traits::Float;
use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result, SpecError};
use crate::so_n::{basis_vector, inertia_scale, wedge, SkewMat, VecN};

/// Tolerance for "is this a unit vector / tangent vector".
pub const MANIFOLD_TOL: f64 = 1e-10;

/// Which side of the fixed sphere the ball touches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Contact {
    /// ε = b/(b + a): ball rolls on the outside.
    Outside,
    /// ε = b/(b − a): ball inside the sphere, or the sphere inside a shell.
    Inside,
}

impl Contact {
    pub fn sign(self) -> f64 {
        match self {
            Contact::Outside => 1.0,
            Contact::Inside => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Radii {
    pub ball: f64,
    pub sphere: f64,
    pub contact: Contact,
}

impl Radii {
    /// b ± a.
    pub fn center_distance(&self) -> f64 {
        self.sphere + self.contact.sign() * self.ball
    }

    pub fn epsilon(&self) -> f64 {
        self.sphere / self.center_distance()
    }
}

/// Unvalidated parameters as they come from a config file.
#[derive(Debug, Clone, PartialEq)]
pub struct SpecParams {
    pub a: Vec<f64>,
    pub d: f64,
    pub epsilon: f64,
    /// Zero-based `(i, j, value)` entries of κ = Σ value · e_i ∧ e_j.
    pub kappa: Vec<(usize, usize, f64)>,
    pub radii: Option<Radii>,
}

/// A validated rolling system: 𝐈(e_i ∧ e_j) = a_i a_j e_i ∧ e_j, D, ε, κ.
#[derive(Debug, Clone, PartialEq)]
pub struct RollingSpec {
    a: VecN,
    d: f64,
    epsilon: f64,
    kappa: SkewMat,
    radii: Option<Radii>,
}

pub fn validate_spec(raw: &SpecParams) -> core::result::Result<RollingSpec, SpecError> {
    let n = raw.a.len();
    if n < 3 {
        return Err(SpecError::UnsupportedDimension(n));
    }
    let mut kappa = DMatrix::zeros(n, n);
    for &(i, j, v) in &raw.kappa {
        if i >= n || j >= n {
            return Err(SpecError::DimensionMismatch {
                expected: n,
                found: i.max(j) + 1,
            });
        }
        kappa[(i, j)] += v;
        kappa[(j, i)] -= v;
    }
    RollingSpec::new(DVector::from_vec(raw.a.clone()), raw.d, raw.epsilon, kappa, raw.radii)
}

impl RollingSpec {
    pub fn new(
        a: VecN,
        d: f64,
        epsilon: f64,
        kappa: DMatrix<f64>,
        radii: Option<Radii>,
    ) -> core::result::Result<Self, SpecError> {
        let n = a.len();
        if n < 3 {
            return Err(SpecError::UnsupportedDimension(n));
        }
        if kappa.nrows() != n || kappa.ncols() != n {
            return Err(SpecError::DimensionMismatch {
                expected: n,
                found: kappa.nrows(),
            });
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(SpecError::NonFinite("a"));
        }
        if !d.is_finite() {
            return Err(SpecError::NonFinite("D"));
        }
        if !epsilon.is_finite() {
            return Err(SpecError::NonFinite("epsilon"));
        }
        if kappa.iter().any(|v| !v.is_finite()) {
            return Err(SpecError::NonFinite("kappa"));
        }
        for (index, &value) in a.iter().enumerate() {
            if value <= 0.0 {
                return Err(SpecError::NonPositiveInertia { index, value });
            }
        }
        if d < 0.0 {
            return Err(SpecError::NegativeD(d));
        }
        for i in 0..n {
            for j in (i + 1)..n {
                let product = a[i] * a[j];
                if product <= d {
                    return Err(SpecError::IndefiniteOperator { i, j, product, d });
                }
            }
        }
        if epsilon == 0.0 {
            return Err(SpecError::ZeroEpsilon);
        }
        let asym = crate::so_n::asymmetry(&kappa);
        if asym > crate::so_n::SKEW_TOL * kappa.amax().max(f64::MIN_POSITIVE) {
            return Err(SpecError::NonSkewKappa(asym));
        }
        let kappa = SkewMat::from_matrix(kappa).map_err(|_| SpecError::UnsupportedDimension(n))?;
        if let Some(r) = radii {
            if !(r.ball > 0.0 && r.sphere > 0.0) || r.center_distance() == 0.0 {
                return Err(SpecError::InconsistentRadii {
                    epsilon,
                    from_radii: f64::NAN,
                });
            }
            let from_radii = r.epsilon();
            if (from_radii - epsilon).abs() > 1e-12 * epsilon.abs().max(1.0) {
                return Err(SpecError::InconsistentRadii { epsilon, from_radii });
            }
        }
        Ok(RollingSpec {
            a,
            d,
            epsilon,
            kappa,
            radii,
        })
    }

    pub fn n(&self) -> usize {
        self.a.len()
    }

    pub fn a(&self) -> &VecN {
        &self.a
    }

    pub fn d(&self) -> f64 {
        self.d
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn kappa(&self) -> &SkewMat {
        &self.kappa
    }

    pub fn radii(&self) -> Option<Radii> {
        self.radii
    }

    /// b ± a. Without explicit radii the sphere radius is normalized to 1.
    pub fn center_distance(&self) -> f64 {
        match self.radii {
            Some(r) => r.center_distance(),
            None => 1.0 / self.epsilon,
        }
    }

    /// 𝐈(X) = 𝕀(X) + D·X.
    pub fn inertia_apply(&self, x: &SkewMat) -> Result<SkewMat> {
        inertia_scale(&self.a, x)
    }

    /// 𝕀(X) = 𝐈(X) − D·X, the inertia operator of the ball itself.
    pub fn ball_inertia_apply(&self, x: &SkewMat) -> Result<SkewMat> {
        self.inertia_apply(x)?.sub(&x.scale(self.d))
    }

    /// ⟨𝔸γ, γ⟩.
    pub fn cal_a_quadratic(&self, gamma: &VecN) -> f64 {
        gamma.iter().zip(self.a.iter()).map(|(g, a)| a * g * g).sum()
    }

    pub fn is_isotropic(&self) -> bool {
        let a0 = self.a[0];
        self.a.iter().all(|&v| (v - a0).abs() <= 1e-12 * a0)
    }

    /// a₃ = … = aₙ.
    pub fn tail_is_uniform(&self) -> bool {
        let a2 = self.a[2];
        self.a.iter().skip(2).all(|&v| (v - a2).abs() <= 1e-12 * a2)
    }

    /// κ has at most the (1,2) entry nonzero.
    pub fn kappa_is_12_only(&self) -> bool {
        let k = self.kappa.matrix();
        let n = self.n();
        (0..n).all(|i| (0..n).all(|j| k[(i, j)] == 0.0 || (i.min(j) == 0 && i.max(j) == 1)))
    }

    /// The a₃=…=aₙ, κ = κ₁₂e₁∧e₂ family carrying the Chaplygin multiplier.
    pub fn in_symmetric_family(&self) -> bool {
        self.tail_is_uniform() && self.kappa_is_12_only()
    }

    /// Block values κ₁₂, κ₃₄, … when κ is block-diagonal in consecutive pairs.
    pub fn kappa_blocks(&self) -> Option<Vec<f64>> {
        kappa_blocks(&self.kappa)
    }

    pub fn as_demchenko(&self) -> Option<DemchenkoSpec> {
        if !self.is_isotropic() {
            return None;
        }
        let blocks = self.kappa_blocks()?;
        DemchenkoSpec::new(self.n(), self.a[0] * self.a[0], self.epsilon, &blocks).ok()
    }

    pub fn with_epsilon(&self, epsilon: f64) -> core::result::Result<Self, SpecError> {
        RollingSpec::new(self.a.clone(), self.d, epsilon, self.kappa.matrix().clone(), None)
    }

    pub fn with_kappa(&self, kappa: SkewMat) -> core::result::Result<Self, SpecError> {
        RollingSpec::new(self.a.clone(), self.d, self.epsilon, kappa.into_matrix(), self.radii)
    }
}

fn kappa_blocks(kappa: &SkewMat) -> Option<Vec<f64>> {
    let n = kappa.dim();
    let k = kappa.matrix();
    for i in 0..n {
        for j in 0..n {
            if i / 2 != j / 2 && k[(i, j)] != 0.0 {
                return None;
            }
        }
    }
    Some((0..n / 2).map(|b| k[(2 * b, 2 * b + 1)]).collect())
}

/// Isotropic inertia 𝔸 = √τ·Id with κ = κ₁₂e₁∧e₂ + κ₃₄e₃∧e₄ + ….
#[derive(Debug, Clone, PartialEq)]
pub struct DemchenkoSpec {
    n: usize,
    tau: f64,
    epsilon: f64,
    kappa: SkewMat,
    blocks: Vec<f64>,
}

impl DemchenkoSpec {
    /// `blocks[k]` is the coefficient of e_{2k+1} ∧ e_{2k+2}; missing blocks are zero.
    pub fn new(n: usize, tau: f64, epsilon: f64, blocks: &[f64]) -> core::result::Result<Self, SpecError> {
        if n < 3 {
            return Err(SpecError::UnsupportedDimension(n));
        }
        if !tau.is_finite() || !epsilon.is_finite() || blocks.iter().any(|b| !b.is_finite()) {
            return Err(SpecError::NonFinite("demchenko parameters"));
        }
        if tau <= 0.0 {
            return Err(SpecError::NonPositiveTau(tau));
        }
        if epsilon == 0.0 {
            return Err(SpecError::ZeroEpsilon);
        }
        if blocks.len() > n / 2 {
            return Err(SpecError::NotBlockDiagonal);
        }
        let mut full = alloc::vec![0.0; n / 2];
        full[..blocks.len()].copy_from_slice(blocks);
        let entries: Vec<_> = full
            .iter()
            .enumerate()
            .map(|(b, &v)| (2 * b, 2 * b + 1, v))
            .collect();
        let kappa =
            SkewMat::from_entries(n, &entries).map_err(|_| SpecError::UnsupportedDimension(n))?;
        Ok(DemchenkoSpec {
            n,
            tau,
            epsilon,
            kappa,
            blocks: full,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn kappa(&self) -> &SkewMat {
        &self.kappa
    }

    /// κ₁₂, κ₃₄, …
    pub fn blocks(&self) -> &[f64] {
        &self.blocks
    }

    pub fn block(&self, k: usize) -> f64 {
        self.blocks.get(k).copied().unwrap_or(0.0)
    }

    pub fn to_rolling_spec(&self) -> RollingSpec {
        RollingSpec::new(
            DVector::from_element(self.n, self.tau.sqrt()),
            0.0,
            self.epsilon,
            self.kappa.matrix().clone(),
            None,
        )
        .expect("a validated Demchenko spec is a valid rolling spec")
    }
}

/// A point (γ, p) of T*S^{n−1} ⊂ ℝ²ⁿ.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedState {
    pub gamma: VecN,
    pub p: VecN,
}

impl ReducedState {
    /// Accepts states within `MANIFOLD_TOL` of the constraint surface and
    /// projects them onto it.
    pub fn new(gamma: VecN, p: VecN) -> Result<Self> {
        if gamma.len() != p.len() {
            return Err(Error::DimensionMismatch {
                expected: gamma.len(),
                found: p.len(),
            });
        }
        if gamma.len() < 3 {
            return Err(Error::UnsupportedDimension(gamma.len()));
        }
        if gamma.iter().chain(p.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState(0.0));
        }
        let v1 = (gamma.norm_squared() - 1.0).abs();
        let v2 = gamma.dot(&p).abs();
        if v1 > MANIFOLD_TOL || v2 > MANIFOLD_TOL * p.norm().max(1.0) {
            return Err(Error::OffManifold(v1.max(v2)));
        }
        Ok(Self::projected(gamma, p))
    }

    /// Projects an arbitrary (γ, p) with γ ≠ 0 onto the constraint surface.
    pub fn projected(gamma: VecN, p: VecN) -> Self {
        let gamma = gamma.normalize();
        let p = &p - &gamma * gamma.dot(&p);
        ReducedState { gamma, p }
    }

    pub fn from_slice(y: &[f64]) -> Result<Self> {
        let n = y.len() / 2;
        Self::new(
            DVector::from_column_slice(&y[..n]),
            DVector::from_column_slice(&y[n..2 * n]),
        )
    }

    pub fn n(&self) -> usize {
        self.gamma.len()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.gamma.iter().chain(self.p.iter()).copied().collect()
    }

    /// max(|⟨γ,γ⟩ − 1|, |⟨γ,p⟩|).
    pub fn constraint_violation(&self) -> f64 {
        (self.gamma.norm_squared() - 1.0).abs().max(self.gamma.dot(&self.p).abs())
    }
}

/// A random point of T*S^{n−1}: γ uniform-ish on the sphere, p with entries
/// of order `p_scale`.
pub fn random_state<R: rand::Rng + ?Sized>(rng: &mut R, n: usize, p_scale: f64) -> ReducedState {
    loop {
        let g = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        if g.norm() < 0.1 {
            continue;
        }
        let p = DVector::from_fn(n, |_, _| p_scale * rng.random_range(-1.0..1.0));
        return ReducedState::projected(g, p);
    }
}

/// A random unit vector tangent at γ.
pub fn random_tangent<R: rand::Rng + ?Sized>(rng: &mut R, gamma: &VecN) -> VecN {
    loop {
        let v = DVector::from_fn(gamma.len(), |_, _| rng.random_range(-1.0..1.0));
        let t = &v - gamma * gamma.dot(&v);
        if t.norm() > 0.1 {
            return t.normalize();
        }
    }
}

fn check_dims(spec: &RollingSpec, vs: &[&VecN]) -> Result<()> {
    for v in vs {
        if v.len() != spec.n() {
            return Err(Error::DimensionMismatch {
                expected: spec.n(),
                found: v.len(),
            });
        }
    }
    Ok(())
}

fn check_unit(gamma: &VecN) -> Result<()> {
    let dev = gamma.norm() - 1.0;
    if dev.abs() > MANIFOLD_TOL {
        return Err(Error::NonUnit(dev));
    }
    Ok(())
}

fn check_tangent(gamma: &VecN, v: &VecN) -> Result<()> {
    let d = gamma.dot(v);
    if d.abs() > MANIFOLD_TOL * v.norm().max(1.0) {
        return Err(Error::NonTangent(d));
    }
    Ok(())
}

fn a_times(spec: &RollingSpec, v: &VecN) -> VecN {
    v.component_mul(spec.a())
}

/// g(X, Y) = (1/ε²)(⟨𝔸X,Y⟩⟨𝔸γ,γ⟩ − ⟨𝔸γ,X⟩⟨𝔸γ,Y⟩).
pub fn metric_eval(spec: &RollingSpec, gamma: &VecN, x: &VecN, y: &VecN) -> Result<f64> {
    check_dims(spec, &[gamma, x, y])?;
    check_unit(gamma)?;
    check_tangent(gamma, x)?;
    check_tangent(gamma, y)?;
    let ag = a_times(spec, gamma);
    let e2 = spec.epsilon() * spec.epsilon();
    Ok((a_times(spec, x).dot(y) * ag.dot(gamma) - ag.dot(x) * ag.dot(y)) / e2)
}

/// g(X, Y) = −(1/ε²)⟨𝐈(γ∧X)γ, Y⟩, evaluated through the inertia operator.
pub fn metric_from_inertia(spec: &RollingSpec, gamma: &VecN, x: &VecN, y: &VecN) -> Result<f64> {
    check_dims(spec, &[gamma, x, y])?;
    let ix = spec.inertia_apply(&wedge(gamma, x)?)?;
    let e2 = spec.epsilon() * spec.epsilon();
    Ok(-ix.apply(gamma).dot(y) / e2)
}

/// p = (1/ε²)(⟨𝔸γ,γ⟩𝔸γ̇ − ⟨𝔸γ,γ̇⟩𝔸γ).
pub fn legendre(spec: &RollingSpec, gamma: &VecN, gamma_dot: &VecN) -> Result<VecN> {
    check_dims(spec, &[gamma, gamma_dot])?;
    check_unit(gamma)?;
    check_tangent(gamma, gamma_dot)?;
    let ag = a_times(spec, gamma);
    let cal = ag.dot(gamma);
    let e2 = spec.epsilon() * spec.epsilon();
    Ok((a_times(spec, gamma_dot) * cal - &ag * ag.dot(gamma_dot)) / e2)
}

/// γ̇ = (ε²/⟨𝔸γ,γ⟩)(𝔸⁻¹p − ⟨γ,𝔸⁻¹p⟩γ).
pub fn legendre_inverse(spec: &RollingSpec, gamma: &VecN, p: &VecN) -> Result<VecN> {
    check_dims(spec, &[gamma, p])?;
    check_unit(gamma)?;
    check_tangent(gamma, p)?;
    Ok(legendre_inverse_unchecked(spec, gamma, p))
}

pub(crate) fn legendre_inverse_unchecked(spec: &RollingSpec, gamma: &VecN, p: &VecN) -> VecN {
    let ainv_p = p.component_div(spec.a());
    let cal = spec.cal_a_quadratic(gamma);
    let c = gamma.dot(&ainv_p);
    let e2 = spec.epsilon() * spec.epsilon();
    (ainv_p - gamma * c) * (e2 / cal)
}

/// h = (ε²/2)⟨p,𝔸⁻¹p⟩/⟨𝔸γ,γ⟩.
pub fn hamiltonian(spec: &RollingSpec, state: &ReducedState) -> f64 {
    let ainv_p = state.p.component_div(spec.a());
    let e2 = spec.epsilon() * spec.epsilon();
    0.5 * e2 * state.p.dot(&ainv_p) / spec.cal_a_quadratic(&state.gamma)
}

/// (2ε − 1)/ε³.
pub fn sigma_coefficient(epsilon: f64) -> f64 {
    (2.0 * epsilon - 1.0) / (epsilon * epsilon * epsilon)
}

/// 𝐈(γ∧X)Y = 𝔸γ⟨𝔸X,Y⟩ − 𝔸X⟨𝔸γ,Y⟩, without forming matrices.
pub(crate) fn inertia_wedge_apply(spec: &RollingSpec, gamma: &VecN, x: &VecN, y: &VecN) -> VecN {
    let ag = a_times(spec, gamma);
    let ax = a_times(spec, x);
    &ag * ax.dot(y) - &ax * ag.dot(y)
}

/// Σ(X,Y,Z) = ((2ε−1)/ε³)⟨𝐈(γ∧X)Y, Z⟩.
pub fn sigma_eval(spec: &RollingSpec, gamma: &VecN, x: &VecN, y: &VecN, z: &VecN) -> Result<f64> {
    check_dims(spec, &[gamma, x, y, z])?;
    check_unit(gamma)?;
    for v in [x, y, z] {
        check_tangent(gamma, v)?;
    }
    let k = sigma_coefficient(spec.epsilon());
    if k == 0.0 {
        return Ok(0.0);
    }
    Ok(k * inertia_wedge_apply(spec, gamma, x, y).dot(z))
}

/// Orthonormal basis of γ^⊥ (columns), by Gram–Schmidt on e_i − ⟨e_i,γ⟩γ
/// with the coordinate most aligned with γ dropped.
pub fn tangent_basis(gamma: &VecN) -> DMatrix<f64> {
    let n = gamma.len();
    let drop = gamma.iamax();
    let mut cols: Vec<VecN> = Vec::with_capacity(n - 1);
    for i in (0..n).filter(|&i| i != drop) {
        let mut v = basis_vector(n, i) - gamma * gamma[i];
        for _ in 0..2 {
            for c in &cols {
                v -= c * c.dot(&v);
            }
            v -= gamma * gamma.dot(&v);
        }
        cols.push(v.normalize());
    }
    DMatrix::from_columns(&cols)
}

/// Gram matrix of the metric in the basis `u`.
pub(crate) fn metric_gram(spec: &RollingSpec, gamma: &VecN, u: &DMatrix<f64>) -> DMatrix<f64> {
    let m = u.ncols();
    let ag = a_times(spec, gamma);
    let cal = ag.dot(gamma);
    let e2 = spec.epsilon() * spec.epsilon();
    let au: Vec<VecN> = (0..m).map(|i| a_times(spec, &u.column(i).into_owned())).collect();
    let agu: Vec<f64> = (0..m).map(|i| ag.dot(&u.column(i))).collect();
    DMatrix::from_fn(m, m, |i, j| (au[i].dot(&u.column(j)) * cal - agu[i] * agu[j]) / e2)
}

/// The tangent vector C(Y,Z) with g(X, C(Y,Z)) = Σ(X,Y,Z) for all tangent X.
pub fn gyro_tensor_c(spec: &RollingSpec, gamma: &VecN, y: &VecN, z: &VecN) -> Result<VecN> {
    check_dims(spec, &[gamma, y, z])?;
    check_unit(gamma)?;
    check_tangent(gamma, y)?;
    check_tangent(gamma, z)?;
    let n = spec.n();
    let k = sigma_coefficient(spec.epsilon());
    if k == 0.0 {
        return Ok(DVector::zeros(n));
    }
    let u = tangent_basis(gamma);
    let gram = metric_gram(spec, gamma, &u);
    let rhs = DVector::from_fn(n - 1, |i, _| {
        k * inertia_wedge_apply(spec, gamma, &u.column(i).into_owned(), y).dot(z)
    });
    let chol = gram
        .cholesky()
        .ok_or(Error::Singular("metric Gram matrix"))?;
    let c = chol.solve(&rhs);
    Ok(u * c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params(a: &[f64], d: f64, eps: f64) -> SpecParams {
        SpecParams {
            a: a.to_vec(),
            d,
            epsilon: eps,
            kappa: alloc::vec![],
            radii: None,
        }
    }

    fn e(n: usize, i: usize) -> VecN {
        basis_vector(n, i)
    }

    #[test]
    fn validation_examples() {
        assert!(validate_spec(&params(&[1.0, 1.0, 1.0], 0.5, 1.0)).is_ok());
        assert!(matches!(
            validate_spec(&params(&[1.0, 1.0, 1.0], 2.0, 1.0)),
            Err(SpecError::IndefiniteOperator { .. })
        ));
        assert_eq!(
            validate_spec(&params(&[1.0, 1.0, 1.0], 0.0, 0.0)),
            Err(SpecError::ZeroEpsilon)
        );
        assert!(matches!(
            validate_spec(&params(&[1.0, -1.0, 1.0], 0.0, 1.0)),
            Err(SpecError::NonPositiveInertia { index: 1, .. })
        ));
        let mut p = params(&[1.0, 1.0, 1.0], 0.0, 0.5);
        p.radii = Some(Radii {
            ball: 1.0,
            sphere: 1.0,
            contact: Contact::Outside,
        });
        assert!(validate_spec(&p).is_ok());
        p.epsilon = 0.4;
        assert!(matches!(
            validate_spec(&p),
            Err(SpecError::InconsistentRadii { .. })
        ));
        let bad = RollingSpec::new(
            DVector::from_element(3, 1.0),
            0.0,
            1.0,
            DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]),
            None,
        );
        assert!(matches!(bad, Err(SpecError::NonSkewKappa(_))));
    }

    #[test]
    fn metric_examples() {
        let s = validate_spec(&params(&[1.0, 1.0, 1.0], 0.0, 1.0)).unwrap();
        assert_eq!(metric_eval(&s, &e(3, 0), &e(3, 1), &e(3, 1)).unwrap(), 1.0);
        let tau: f64 = 2.5;
        let eps = 0.7;
        let iso = validate_spec(&params(&[tau.sqrt(); 4], 0.0, eps)).unwrap();
        let g = DVector::from_vec(alloc::vec![0.5, 0.5, 0.5, 0.5]);
        let x = DVector::from_vec(alloc::vec![1.0, -1.0, 0.0, 0.0]);
        let y = DVector::from_vec(alloc::vec![0.0, 0.0, 1.0, -1.0]);
        let gxx = metric_eval(&iso, &g, &x, &x).unwrap();
        assert!((gxx - tau / (eps * eps) * 2.0).abs() < 1e-13);
        assert!(metric_eval(&iso, &g, &x, &y).unwrap().abs() < 1e-14);
        assert!(matches!(
            metric_eval(&s, &e(3, 0), &e(3, 0), &e(3, 1)),
            Err(Error::NonTangent(_))
        ));
    }

    #[test]
    fn legendre_examples() {
        let s = validate_spec(&params(&[1.0, 1.0, 1.0], 0.0, 1.0)).unwrap();
        let z = DVector::zeros(3);
        assert_eq!(legendre(&s, &e(3, 0), &z).unwrap(), z);
        assert_eq!(legendre(&s, &e(3, 0), &e(3, 1)).unwrap(), e(3, 1));
        assert_eq!(legendre_inverse(&s, &e(3, 0), &z).unwrap(), z);
        let st = ReducedState::new(e(3, 0), e(3, 1)).unwrap();
        assert_eq!(hamiltonian(&s, &st), 0.5);
    }

    #[test]
    fn isotropic_hamiltonian() {
        let tau: f64 = 3.0;
        let eps = -1.3;
        let s = validate_spec(&params(&[tau.sqrt(); 3], 0.0, eps)).unwrap();
        let st = ReducedState::projected(
            DVector::from_vec(alloc::vec![0.3, 0.4, 0.5]),
            DVector::from_vec(alloc::vec![1.0, -0.2, 0.1]),
        );
        let h = hamiltonian(&s, &st);
        assert!((h - eps * eps / (2.0 * tau) * st.p.norm_squared()).abs() < 1e-14);
    }

    #[test]
    fn sigma_zero_at_half_and_isotropic() {
        let s = validate_spec(&params(&[1.0, 2.0, 3.0, 0.5], 0.1, 0.5)).unwrap();
        let g = e(4, 0);
        let (x, y, z) = (e(4, 1), e(4, 2), e(4, 3));
        assert_eq!(sigma_eval(&s, &g, &x, &y, &z).unwrap(), 0.0);
        assert_eq!(gyro_tensor_c(&s, &g, &x, &y).unwrap(), DVector::zeros(4));
        let iso = validate_spec(&params(&[1.5; 4], 0.0, 2.0)).unwrap();
        // isotropic: ⟨𝐈(γ∧X)Y, Z⟩ = τ(⟨X,Y⟩⟨γ,Z⟩ − ...) vanishes on tangent vectors
        let gg = DVector::from_vec(alloc::vec![0.5, 0.5, 0.5, 0.5]);
        let x = DVector::from_vec(alloc::vec![1.0, -1.0, 0.0, 0.0]);
        let y = DVector::from_vec(alloc::vec![1.0, 1.0, -1.0, -1.0]);
        let z = DVector::from_vec(alloc::vec![0.0, 0.0, 1.0, -1.0]);
        assert!(sigma_eval(&iso, &gg, &x, &y, &z).unwrap().abs() < 1e-15);
    }

    #[test]
    fn tangent_basis_is_orthonormal() {
        let g = DVector::from_vec(alloc::vec![0.1, -0.7, 0.2, 0.3, 0.5]).normalize();
        let u = tangent_basis(&g);
        assert_eq!(u.ncols(), 4);
        let gram = u.transpose() * &u;
        assert!((gram - DMatrix::<f64>::identity(4, 4)).amax() < 1e-14);
        assert!((u.transpose() * &g).amax() < 1e-14);
    }

    #[test]
    fn kappa_blocks_detection() {
        let s = RollingSpec::new(
            DVector::from_element(5, 1.0),
            0.0,
            1.0,
            SkewMat::from_entries(5, &[(0, 1, 0.3), (2, 3, -0.2)]).unwrap().into_matrix(),
            None,
        )
        .unwrap();
        assert_eq!(s.kappa_blocks(), Some(alloc::vec![0.3, -0.2]));
        let t = s
            .with_kappa(SkewMat::from_entries(5, &[(0, 2, 0.3)]).unwrap())
            .unwrap();
        assert_eq!(t.kappa_blocks(), None);
        let d = s.as_demchenko().unwrap();
        assert_eq!(d.tau(), 1.0);
        assert_eq!(d.to_rolling_spec(), s);
    }

    #[test]
    fn state_constructor_tolerance() {
        let g = DVector::from_vec(alloc::vec![1.0 + 1e-11, 0.0, 0.0]);
        let st = ReducedState::new(g, e(3, 1)).unwrap();
        assert!(st.constraint_violation() < 1e-15);
        let g = DVector::from_vec(alloc::vec![1.0 + 1e-6, 0.0, 0.0]);
        assert!(matches!(
            ReducedState::new(g, e(3, 1)),
            Err(Error::OffManifold(_))
        ));
    }

    #[derive(Debug, Clone)]
    struct Sample {
        spec: RollingSpec,
        gamma: VecN,
        x: VecN,
        y: VecN,
        z: VecN,
    }

    fn tangent(g: &VecN, v: Vec<f64>) -> VecN {
        let v = DVector::from_vec(v);
        &v - g * g.dot(&v)
    }

    fn sample(n: usize) -> impl Strategy<Value = Sample> {
        (
            prop::collection::vec(0.3f64..3.0, n),
            prop::sample::select(alloc::vec![-1.0, 0.5, 1.0, 2.0, 0.8]),
            prop::collection::vec(-1.0f64..1.0, n),
            prop::collection::vec(-1.0f64..1.0, n),
            prop::collection::vec(-1.0f64..1.0, n),
            prop::collection::vec(-1.0f64..1.0, n),
        )
            .prop_filter_map("degenerate gamma", move |(a, eps, g, x, y, z)| {
                let g = DVector::from_vec(g);
                if g.norm() < 0.1 {
                    return None;
                }
                let gamma = g.normalize();
                let amin = a.iter().cloned().fold(f64::INFINITY, f64::min);
                let spec = validate_spec(&SpecParams {
                    a,
                    d: 0.5 * amin * amin,
                    epsilon: eps,
                    kappa: alloc::vec![],
                    radii: None,
                })
                .ok()?;
                Some(Sample {
                    x: tangent(&gamma, x),
                    y: tangent(&gamma, y),
                    z: tangent(&gamma, z),
                    gamma,
                    spec,
                })
            })
    }

    proptest! {
        #[test]
        fn metric_forms_agree_and_are_positive(s in sample(5)) {
            let a = metric_eval(&s.spec, &s.gamma, &s.x, &s.y).unwrap();
            let b = metric_from_inertia(&s.spec, &s.gamma, &s.x, &s.y).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
            let c = metric_eval(&s.spec, &s.gamma, &s.y, &s.x).unwrap();
            prop_assert!((a - c).abs() <= 1e-13 * (1.0 + a.abs()));
            if s.x.norm() > 1e-6 {
                prop_assert!(metric_eval(&s.spec, &s.gamma, &s.x, &s.x).unwrap() > 0.0);
            }
        }

        #[test]
        fn legendre_round_trips(s in sample(4)) {
            let p = legendre(&s.spec, &s.gamma, &s.x).unwrap();
            prop_assert!(p.dot(&s.gamma).abs() <= 1e-13 * (1.0 + p.norm()));
            let back = legendre_inverse(&s.spec, &s.gamma, &p).unwrap();
            prop_assert!((&back - &s.x).amax() <= 1e-11 * (1.0 + s.x.amax()));
            let v = legendre_inverse(&s.spec, &s.gamma, &s.y).unwrap();
            let pp = legendre(&s.spec, &s.gamma, &v).unwrap();
            prop_assert!((&pp - &s.y).amax() <= 1e-11 * (1.0 + s.y.amax()));
            // g(γ̇, Y) = ⟨p, Y⟩
            let gz = metric_eval(&s.spec, &s.gamma, &s.x, &s.z).unwrap();
            prop_assert!((gz - p.dot(&s.z)).abs() <= 1e-12 * (1.0 + gz.abs()));
            let st = ReducedState::new(s.gamma.clone(), s.y.clone()).unwrap();
            let h = hamiltonian(&s.spec, &st);
            prop_assert!((h - 0.5 * v.dot(&st.p)).abs() <= 1e-12 * (1.0 + h));
            prop_assert!(h >= 0.0);
        }

        #[test]
        fn sigma_and_c_antisymmetry(s in sample(5)) {
            let a = sigma_eval(&s.spec, &s.gamma, &s.x, &s.y, &s.z).unwrap();
            let b = sigma_eval(&s.spec, &s.gamma, &s.x, &s.z, &s.y).unwrap();
            prop_assert!((a + b).abs() <= 1e-12 * (1.0 + a.abs()));
            let cyz = gyro_tensor_c(&s.spec, &s.gamma, &s.y, &s.z).unwrap();
            let czy = gyro_tensor_c(&s.spec, &s.gamma, &s.z, &s.y).unwrap();
            prop_assert!((&cyz + &czy).amax() <= 1e-12 * (1.0 + cyz.amax()));
            prop_assert!(cyz.dot(&s.gamma).abs() <= 1e-12 * (1.0 + cyz.amax()));
            let lhs = metric_eval(&s.spec, &s.gamma, &s.x, &cyz).unwrap();
            prop_assert!((lhs - a).abs() <= 1e-10 * (1.0 + a.abs()));
        }

        #[test]
        fn hamiltonian_symmetric_under_plane_rotation(
            a1 in 0.5f64..2.0, a3 in 0.5f64..2.0, th in 0.0f64..6.3,
            g in prop::collection::vec(-1.0f64..1.0, 4),
            p in prop::collection::vec(-1.0f64..1.0, 4))
        {
            let g = DVector::from_vec(g);
            prop_assume!(g.norm() > 0.1);
            let spec = validate_spec(&SpecParams {
                a: alloc::vec![a1, a1, a3, a3], d: 0.0, epsilon: 0.7,
                kappa: alloc::vec![(0, 1, 0.4)], radii: None,
            }).unwrap();
            let st = ReducedState::projected(g, DVector::from_vec(p));
            let mut r = DMatrix::<f64>::identity(4, 4);
            r[(0, 0)] = th.cos(); r[(0, 1)] = -th.sin();
            r[(1, 0)] = th.sin(); r[(1, 1)] = th.cos();
            let rs = ReducedState::projected(&r * &st.gamma, &r * &st.p);
            let h0 = hamiltonian(&spec, &st);
            prop_assert!((h0 - hamiltonian(&spec, &rs)).abs() <= 1e-13 * (1.0 + h0));
        }
    }
}
