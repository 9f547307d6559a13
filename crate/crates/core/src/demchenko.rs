//! Closed-form integration of the isotropic (Demchenko) system for n = 3, 4:
//! the cubic for u = γ₁² + γ₂², its Weierstrass reduction, case analysis,
//! stationary motions, and trajectory synthesis.

#[allow(unused_imports)] // std builds resolve these as inherent methods
use num_traits::Float;
use alloc::vec;
use alloc::vec::Vec;
use nalgebra::{DVector, Matrix3};
use rand::rngs::SmallRng;
use rand::{Rng, SeedableRng};

use crate::elliptic::{jacobi_sncndn, Lattice, Weierstrass};
use crate::error::{Error, Result};
use crate::integrator::{integrate, project_state, Options, Sampling, Trajectory, TrajectoryMeta};
use crate::model::{DemchenkoSpec, ReducedState};
use crate::quadrature::integrate_gk;

/// The data a cubic was built from. For n = 3, κ₃₄ = Φ₃₄ = 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CubicSource {
    pub dim: usize,
    pub epsilon: f64,
    pub tau: f64,
    pub k12: f64,
    pub k34: f64,
    pub h: f64,
    pub phi12: f64,
    pub phi34: f64,
}

/// a₀u³ + a₁u² + a₂u + a₃ with u̇² equal to it along the motion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CubicPoly {
    pub coeffs: [f64; 4],
    pub source: CubicSource,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Root {
    pub value: f64,
    pub multiplicity: usize,
}

const LEADING_TOL: f64 = 1e-14;
/// Relative discriminant below which two roots are taken as one double root.
pub const DOUBLE_ROOT_TOL: f64 = 1e-10;

impl CubicPoly {
    pub fn dim(&self) -> usize {
        self.source.dim
    }

    fn scale(&self) -> f64 {
        self.coeffs.iter().fold(0.0f64, |m, c| m.max(c.abs()))
    }

    pub fn eval(&self, u: f64) -> f64 {
        let [a0, a1, a2, a3] = self.coeffs;
        ((a0 * u + a1) * u + a2) * u + a3
    }

    pub fn derivative(&self, u: f64) -> f64 {
        let [a0, a1, a2, _] = self.coeffs;
        (3.0 * a0 * u + 2.0 * a1) * u + a2
    }

    /// True when the u³ coefficient vanishes (κ₁₂² = κ₃₄², or κ₁₂ = 0 for n = 3).
    pub fn is_quadratic(&self) -> bool {
        self.coeffs[0].abs() <= LEADING_TOL * self.scale()
    }

    /// Discriminant divided by the largest of its terms.
    pub fn discriminant_rel(&self) -> f64 {
        let [a, b, c, d] = self.coeffs;
        if self.is_quadratic() {
            let t = [b * b, 4.0 * b * d, c * c];
            let disc = c * c - 4.0 * b * d;
            return disc / t.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        }
        let t = [
            18.0 * a * b * c * d,
            -4.0 * b * b * b * d,
            b * b * c * c,
            -4.0 * a * c * c * c,
            -27.0 * a * a * d * d,
        ];
        let s: f64 = t.iter().sum();
        s / t.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE)
    }

    /// Real roots in increasing order, double roots merged.
    pub fn real_roots(&self) -> Vec<Root> {
        let [a0, a1, a2, a3] = self.coeffs;
        let double = self.discriminant_rel().abs() <= DOUBLE_ROOT_TOL;
        let mut out = Vec::new();
        if self.is_quadratic() {
            if a1 == 0.0 {
                if a2 != 0.0 {
                    out.push(Root { value: -a3 / a2, multiplicity: 1 });
                }
                return out;
            }
            let disc = a2 * a2 - 4.0 * a1 * a3;
            if double {
                out.push(Root { value: -a2 / (2.0 * a1), multiplicity: 2 });
            } else if disc > 0.0 {
                let q = -0.5 * (a2 + a2.signum() * disc.sqrt());
                let (mut r1, mut r2) = if q != 0.0 { (q / a1, a3 / q) } else { (0.0, 0.0) };
                if r1 > r2 {
                    core::mem::swap(&mut r1, &mut r2);
                }
                out.push(Root { value: r1, multiplicity: 1 });
                out.push(Root { value: r2, multiplicity: 1 });
            }
            return out;
        }
        if double {
            // the double root is a critical point; the simple one follows from Vieta
            let (b, c) = (2.0 * a1, a2);
            let a = 3.0 * a0;
            let disc = (b * b - 4.0 * a * c).max(0.0).sqrt();
            let cands = [(-b + disc) / (2.0 * a), (-b - disc) / (2.0 * a)];
            let r = if self.eval(cands[0]).abs() <= self.eval(cands[1]).abs() {
                cands[0]
            } else {
                cands[1]
            };
            let simple = -a1 / a0 - 2.0 * r;
            if (simple - r).abs() <= 1e-7 * r.abs().max(1.0) {
                out.push(Root { value: r, multiplicity: 3 });
            } else {
                out.push(Root { value: r, multiplicity: 2 });
                out.push(Root { value: simple, multiplicity: 1 });
            }
            out.sort_by(|x, y| x.value.total_cmp(&y.value));
            return out;
        }
        let m = Matrix3::new(-a1 / a0, -a2 / a0, -a3 / a0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0);
        let eig = m.complex_eigenvalues();
        for z in eig.iter() {
            if z.im.abs() <= 1e-9 * z.re.abs().max(1.0) {
                out.push(Root {
                    value: self.polish(z.re),
                    multiplicity: 1,
                });
            }
        }
        out.sort_by(|x, y| x.value.total_cmp(&y.value));
        out
    }

    fn polish(&self, mut r: f64) -> f64 {
        for _ in 0..3 {
            let d = self.derivative(r);
            if d == 0.0 {
                break;
            }
            let next = r - self.eval(r) / d;
            if self.eval(next).abs() < self.eval(r).abs() {
                r = next;
            } else {
                break;
            }
        }
        r
    }
}

fn check_energy(h: f64) -> Result<()> {
    if !(h > 0.0) {
        return Err(Error::Equilibrium(h));
    }
    Ok(())
}

/// Q₃(u) = (κ₁₂²/τ²)(u−1)(u² − (4ε²/κ₁₂²)(2hτ+κ₁₂Φ)u + 4ε⁴Φ²/κ₁₂²), expanded;
/// for κ₁₂ = 0 the limit (1−u)(8ε²hu/τ − 4ε⁴Φ²/τ²) is returned.
pub fn cubic_q3(epsilon: f64, tau: f64, k12: f64, h: f64, phi: f64) -> Result<CubicPoly> {
    check_energy(h)?;
    let e2 = epsilon * epsilon;
    let t2 = tau * tau;
    // (κ²/τ²)·Q₂(u) = (κ²/τ²)u² − (4ε²/τ²)(2hτ+κΦ)u + 4ε⁴Φ²/τ²
    let q = [
        k12 * k12 / t2,
        -4.0 * e2 * (2.0 * h * tau + k12 * phi) / t2,
        4.0 * e2 * e2 * phi * phi / t2,
    ];
    // (u − 1)(q0u² + q1u + q2)
    let coeffs = [q[0], q[1] - q[0], q[2] - q[1], -q[2]];
    Ok(CubicPoly {
        coeffs,
        source: CubicSource {
            dim: 3,
            epsilon,
            tau,
            k12,
            k34: 0.0,
            h,
            phi12: phi,
            phi34: 0.0,
        },
    })
}

/// P₃ for n = 4.
pub fn cubic_p3(epsilon: f64, tau: f64, k12: f64, k34: f64, h: f64, phi12: f64, phi34: f64) -> Result<CubicPoly> {
    check_energy(h)?;
    let e2 = epsilon * epsilon;
    let t2 = tau * tau;
    let w = 2.0 * e2 * phi34 - k34;
    let a0 = (k12 * k12 - k34 * k34) / t2;
    let a1 = -8.0 * e2 * h / tau - 2.0 * k34 / t2 * w - k12 * k12 / t2 - 4.0 * e2 * k12 * phi12 / t2;
    let a2 = 8.0 * e2 * h / tau - w * w / t2 + 4.0 * e2 * k12 * phi12 / t2 + 4.0 * e2 * e2 * phi12 * phi12 / t2;
    let a3 = -4.0 * e2 * e2 * phi12 * phi12 / t2;
    Ok(CubicPoly {
        coeffs: [a0, a1, a2, a3],
        source: CubicSource {
            dim: 4,
            epsilon,
            tau,
            k12,
            k34,
            h,
            phi12,
            phi34,
        },
    })
}

/// h = (ε²/2τ)⟨p,p⟩.
pub fn demchenko_energy(spec: &DemchenkoSpec, st: &ReducedState) -> f64 {
    spec.epsilon() * spec.epsilon() / (2.0 * spec.tau()) * st.p.norm_squared()
}

/// γᵢpⱼ − γⱼpᵢ + (κ/2ε²)(γᵢ² + γⱼ²) for the block (2b, 2b+1).
pub fn demchenko_block_integral(spec: &DemchenkoSpec, st: &ReducedState, block: usize) -> f64 {
    crate::integrals::demchenko_phi(spec.epsilon(), spec.block(block), st, 2 * block, 2 * block + 1)
}

/// The cubic determined by the integrals at `st`.
pub fn cubic_for_state(spec: &DemchenkoSpec, st: &ReducedState) -> Result<CubicPoly> {
    let h = demchenko_energy(spec, st);
    let phi12 = demchenko_block_integral(spec, st, 0);
    match spec.n() {
        3 => cubic_q3(spec.epsilon(), spec.tau(), spec.block(0), h, phi12),
        4 => cubic_p3(
            spec.epsilon(),
            spec.tau(),
            spec.block(0),
            spec.block(1),
            h,
            phi12,
            demchenko_block_integral(spec, st, 1),
        ),
        n => Err(Error::UnsupportedDimension(n)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum G3Formula {
    /// a₀a₁a₂/48 − a₁³/216 − a₀²a₃/16
    Derived,
    /// a₀a₁a₂/4 − a₁³/216 − a₀²a₃/16
    Alternate,
}

/// g₂, g₃ for the substitution u = (4/a₀)z − a₁/(3a₀).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeierstrassInvariants {
    pub g2: f64,
    /// The certified g₃.
    pub g3: f64,
    pub formula: G3Formula,
    pub g3_derived: f64,
    pub g3_alternate: f64,
    /// Max relative defect of 4z³ − g₂z − g₃ = (a₀²/16)P(u(z)) over the test points.
    pub derived_residual: f64,
    pub alternate_residual: f64,
    pub a0: f64,
    pub a1: f64,
    /// Relative discriminant of the cubic is below [`DOUBLE_ROOT_TOL`].
    pub degenerate: bool,
}

/// Identities must hold to this relative accuracy to certify.
pub const CERTIFICATION_TOL: f64 = 1e-12;

impl WeierstrassInvariants {
    pub fn u_of_z(&self, z: f64) -> f64 {
        4.0 / self.a0 * z - self.a1 / (3.0 * self.a0)
    }

    pub fn z_of_u(&self, u: f64) -> f64 {
        self.a0 * u / 4.0 + self.a1 / 12.0
    }

    pub fn weierstrass(&self) -> Result<Weierstrass> {
        Weierstrass::new(self.g2, self.g3)
    }
}

/// max over `zs` of |4z³ − g₂z − g₃ − (a₀²/16)P(u(z))| / (term magnitudes).
pub fn certification_residual(poly: &CubicPoly, g2: f64, g3: f64, zs: &[f64]) -> f64 {
    let [a0, a1, ..] = poly.coeffs;
    let mut worst: f64 = 0.0;
    for &z in zs {
        let u = 4.0 / a0 * z - a1 / (3.0 * a0);
        let lhs = 4.0 * z * z * z - g2 * z - g3;
        let rhs = a0 * a0 / 16.0 * poly.eval(u);
        let [c0, c1, c2, c3] = poly.coeffs;
        let terms = (4.0 * z * z * z).abs()
            + (g2 * z).abs()
            + g3.abs()
            + a0 * a0 / 16.0 * ((c0 * u * u * u).abs() + (c1 * u * u).abs() + (c2 * u).abs() + c3.abs());
        worst = worst.max((lhs - rhs).abs() / terms.max(f64::MIN_POSITIVE));
    }
    worst
}

/// Computes g₂ and both candidate g₃ values and certifies them at 100
/// pseudo-random z; fails with [`Error::Uncertified`] if neither passes.
pub fn weierstrass_invariants(poly: &CubicPoly) -> Result<WeierstrassInvariants> {
    if poly.is_quadratic() {
        return Err(Error::Degenerate("a0 = 0: the quadratic branch applies"));
    }
    let [a0, a1, a2, a3] = poly.coeffs;
    let g2 = a1 * a1 / 12.0 - a0 * a2 / 4.0;
    let g3_derived = a0 * a1 * a2 / 48.0 - a1 * a1 * a1 / 216.0 - a0 * a0 * a3 / 16.0;
    let g3_alternate = a0 * a1 * a2 / 4.0 - a1 * a1 * a1 / 216.0 - a0 * a0 * a3 / 16.0;
    let mut rng = SmallRng::seed_from_u64(0x5eed);
    let zs: Vec<f64> = (0..100)
        .map(|_| {
            let u: f64 = rng.random_range(-1.0..2.0);
            a0 * u / 4.0 + a1 / 12.0
        })
        .collect();
    let derived_residual = certification_residual(poly, g2, g3_derived, &zs);
    let alternate_residual = certification_residual(poly, g2, g3_alternate, &zs);
    let (g3, formula) = if derived_residual <= CERTIFICATION_TOL {
        (g3_derived, G3Formula::Derived)
    } else if alternate_residual <= CERTIFICATION_TOL {
        (g3_alternate, G3Formula::Alternate)
    } else {
        return Err(Error::Uncertified {
            derived: derived_residual,
            alternate: alternate_residual,
        });
    };
    Ok(WeierstrassInvariants {
        g2,
        g3,
        formula,
        g3_derived,
        g3_alternate,
        derived_residual,
        alternate_residual,
        a0,
        a1,
        degenerate: poly.discriminant_rel().abs() <= DOUBLE_ROOT_TOL,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CaseTag {
    /// Two simple roots 0 ≤ u₁ < u₂ < 1 bound the motion.
    TwoRootsInterior { u1: f64, u2: f64 },
    /// The motion starts at u₁ and tends to a double root at u = 1.
    OneRootInterior { u1: f64 },
    /// Interior double root: u is constant.
    DoubleRootStationary { u: f64 },
    /// u₁ < 1 < u₂ with a simple root at 1; u oscillates in [u₁, 1].
    RootSpansOne { u1: f64, u2: f64 },
    /// P < 0 on (0, 1).
    NoMotion,
}

impl CaseTag {
    pub fn name(&self) -> &'static str {
        match self {
            CaseTag::TwoRootsInterior { .. } => "A-two-roots-interior",
            CaseTag::OneRootInterior { .. } => "A-one-root-interior",
            CaseTag::DoubleRootStationary { .. } => "A-double-root-stationary",
            CaseTag::RootSpansOne { .. } => "B-root-spans-one",
            CaseTag::NoMotion => "no-motion",
        }
    }

    /// (min u, max u) reached, when there is motion.
    pub fn bounds(&self) -> Option<(f64, f64)> {
        match *self {
            CaseTag::TwoRootsInterior { u1, u2 } => Some((u1, u2)),
            CaseTag::OneRootInterior { u1 } => Some((u1, 1.0)),
            CaseTag::DoubleRootStationary { u } => Some((u, u)),
            CaseTag::RootSpansOne { u1, .. } => Some((u1, 1.0)),
            CaseTag::NoMotion => None,
        }
    }
}

const ROOT_EDGE_TOL: f64 = 1e-9;

/// Root-based classification, picking the first interval of (0, 1) where
/// the polynomial is positive.
pub fn classify_case(poly: &CubicPoly) -> CaseTag {
    classify_case_at(poly, None)
}

/// As [`classify_case`], preferring the interval that contains `u0`.
pub fn classify_case_at(poly: &CubicPoly, u0: Option<f64>) -> CaseTag {
    let roots = poly.real_roots();
    for r in &roots {
        if r.multiplicity >= 2 && r.value > ROOT_EDGE_TOL && r.value < 1.0 - ROOT_EDGE_TOL {
            let near = u0.is_none_or(|u| (u - r.value).abs() <= 1e-6);
            if near {
                return CaseTag::DoubleRootStationary { u: r.value };
            }
        }
    }
    let mut cuts = vec![0.0];
    for r in &roots {
        if r.value > ROOT_EDGE_TOL && r.value < 1.0 - ROOT_EDGE_TOL {
            cuts.push(r.value);
        }
    }
    cuts.push(1.0);
    let mut chosen = None;
    for w in cuts.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        if hi - lo <= 0.0 || poly.eval(0.5 * (lo + hi)) <= 0.0 {
            continue;
        }
        let contains = u0.map(|u| u >= lo - 1e-9 && u <= hi + 1e-9);
        match contains {
            Some(true) => {
                chosen = Some((lo, hi));
                break;
            }
            Some(false) => {}
            None => {
                chosen = Some((lo, hi));
                break;
            }
        }
    }
    let Some((lo, hi)) = chosen else {
        return CaseTag::NoMotion;
    };
    if hi < 1.0 {
        return CaseTag::TwoRootsInterior { u1: lo, u2: hi };
    }
    let at_one = roots
        .iter()
        .find(|r| (r.value - 1.0).abs() <= 1e-7)
        .copied();
    match at_one {
        Some(r) if r.multiplicity >= 2 => CaseTag::OneRootInterior { u1: lo },
        _ => {
            let u2 = roots
                .iter()
                .map(|r| r.value)
                .filter(|&v| v > 1.0 + 1e-7)
                .fold(f64::INFINITY, f64::min);
            CaseTag::RootSpansOne { u1: lo, u2 }
        }
    }
}

/// û, where φ̇₁ = (2ε²Φ₁₂ − κ₁₂u)/(2τu) vanishes: φ₁ reverses inside the
/// annulus when û ∈ (u₁, u₂). None for κ₁₂ = 0.
pub fn phi1_turning_point(poly: &CubicPoly) -> Option<f64> {
    let s = poly.source;
    if s.k12 == 0.0 {
        return None;
    }
    Some(2.0 * s.epsilon * s.epsilon * s.phi12 / s.k12)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InequalityCase {
    A,
    B,
    Neither,
}

/// The n = 3 case from the parameter inequalities
/// hτ+κΦ > 0, 2hτ+κΦ < κ²/2ε², 2hτ+κΦ−ε²Φ² < κ²/4ε² (A) and
/// 2hτ+κΦ−ε²Φ² > κ²/4ε² (B).
pub fn inequality_case_n3(poly: &CubicPoly) -> Option<InequalityCase> {
    let s = poly.source;
    if s.dim != 3 || s.k12 == 0.0 {
        return None;
    }
    let (h, t, k, f, e2) = (s.h, s.tau, s.k12, s.phi12, s.epsilon * s.epsilon);
    let q1 = 2.0 * h * t + k * f - e2 * f * f;
    if q1 > k * k / (4.0 * e2) {
        return Some(InequalityCase::B);
    }
    if h * t + k * f > 0.0 && 2.0 * h * t + k * f < k * k / (2.0 * e2) && q1 < k * k / (4.0 * e2) {
        return Some(InequalityCase::A);
    }
    Some(InequalityCase::Neither)
}

/// The two quantities whose vanishing makes the n = 3 discriminant zero:
/// (hτ + κΦ, 2hτ + κΦ − ε²Φ² − κ²/4ε²).
pub fn discriminant_conditions_n3(poly: &CubicPoly) -> (f64, f64) {
    let s = poly.source;
    let (h, t, k, f, e2) = (s.h, s.tau, s.k12, s.phi12, s.epsilon * s.epsilon);
    (h * t + k * f, 2.0 * h * t + k * f - e2 * f * f - k * k / (4.0 * e2))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StationaryMotion {
    pub u: f64,
    pub rho1: f64,
    /// φ̇₁
    pub alpha1: f64,
    /// φ̇₃ (n = 4 only)
    pub alpha3: Option<f64>,
    /// κ₁₂α₁ − κ₃₄α₃ + τ(α₁² − α₃²) for n = 4; τα² + κα for n = 3
    /// (zero at u = 1, where γ₃ = 0 imposes nothing).
    pub constraint_residual: f64,
}

/// Stationary motion at a double root of the cubic.
pub fn stationary_motion(poly: &CubicPoly) -> Result<StationaryMotion> {
    let disc = poly.discriminant_rel();
    if disc.abs() > DOUBLE_ROOT_TOL {
        return Err(Error::NotDoubleRoot(disc));
    }
    let u = poly
        .real_roots()
        .into_iter()
        .find(|r| r.multiplicity >= 2 && r.value > -ROOT_EDGE_TOL && r.value < 1.0 + ROOT_EDGE_TOL)
        .map(|r| r.value.clamp(0.0, 1.0))
        .ok_or(Error::NotDoubleRoot(disc))?;
    let s = poly.source;
    let e2 = s.epsilon * s.epsilon;
    let alpha1 = (2.0 * e2 * s.phi12 - s.k12 * u) / (2.0 * s.tau * u);
    if s.dim == 3 {
        let residual = if (1.0 - u).abs() <= 1e-9 {
            0.0
        } else {
            s.tau * alpha1 * alpha1 + s.k12 * alpha1
        };
        return Ok(StationaryMotion {
            u,
            rho1: u.sqrt(),
            alpha1,
            alpha3: None,
            constraint_residual: residual,
        });
    }
    let v = 1.0 - u;
    let alpha3 = (2.0 * e2 * s.phi34 - s.k34 * v) / (2.0 * s.tau * v);
    let residual = s.k12 * alpha1 - s.k34 * alpha3 + s.tau * (alpha1 * alpha1 - alpha3 * alpha3);
    Ok(StationaryMotion {
        u,
        rho1: u.sqrt(),
        alpha1,
        alpha3: Some(alpha3),
        constraint_residual: residual,
    })
}

#[derive(Debug, Clone, PartialEq)]
enum UBranch {
    Constant(f64),
    /// u = c + R sin(ωt + ψ)
    Harmonic { c: f64, r: f64, omega: f64, psi: f64 },
    /// z = oval(s0 + σt)
    Oval { w: Weierstrass, s0: f64, sigma: f64 },
}

/// How γ₃ is recovered for n = 3.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Gamma3 {
    /// γ₃ = sign·√(1 − u)
    Sqrt(f64),
    /// γ₃ = C·cn(λ(s0 + σt)) (oval touching u = 1)
    Cn { c: f64 },
    /// γ₃ = C·sin(π/4 − θ/2), θ = ωt + ψ (harmonic branch touching u = 1)
    HalfAngle { c: f64 },
}

/// A closed-form solution from one initial state.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedForm {
    spec: DemchenkoSpec,
    poly: CubicPoly,
    case: CaseTag,
    invariants: Option<WeierstrassInvariants>,
    branch: UBranch,
    gamma3: Gamma3,
    phi1_0: f64,
    phi3_0: f64,
}

impl ClosedForm {
    pub fn new(spec: &DemchenkoSpec, init: &ReducedState) -> Result<Self> {
        let n = spec.n();
        if n != 3 && n != 4 {
            return Err(Error::UnsupportedDimension(n));
        }
        let st = ReducedState::new(init.gamma.clone(), init.p.clone())?;
        let poly = cubic_for_state(spec, &st)?;
        let (e2, tau) = (spec.epsilon() * spec.epsilon(), spec.tau());
        let g = &st.gamma;
        let gd = &st.p * (e2 / tau);
        let u0 = g[0] * g[0] + g[1] * g[1];
        let ud0 = 2.0 * (g[0] * gd[0] + g[1] * gd[1]);
        if u0 <= 1e-12 || (n == 4 && 1.0 - u0 <= 1e-12) {
            return Err(Error::Degenerate("initial state on a polar circle"));
        }
        let case = classify_case_at(&poly, Some(u0));
        let scale = poly.coeffs.iter().fold(0.0f64, |m, c| m.max(c.abs()));
        let stationary = ud0.abs() <= 1e-10 * scale.sqrt().max(1e-300)
            && poly.derivative(u0).abs() <= 1e-8 * scale;
        let mut invariants = None;
        let branch = if stationary {
            UBranch::Constant(u0)
        } else if poly.is_quadratic() {
            let [_, a1, a2, _] = poly.coeffs;
            if !(a1 < 0.0) {
                return Err(Error::Domain("unbounded quadratic motion"));
            }
            let omega = (-a1).sqrt();
            let c = -a2 / (2.0 * a1);
            let r = ((u0 - c).powi(2) + (ud0 / omega).powi(2)).sqrt();
            let psi = (u0 - c).atan2(ud0 / omega);
            UBranch::Harmonic { c, r, omega, psi }
        } else {
            let inv = weierstrass_invariants(&poly)?;
            let w = inv.weierstrass()?;
            let z0 = inv.z_of_u(u0);
            let s0 = w.invert_oval(z0)?;
            let (_, dz) = w.oval(s0)?;
            let sigma = if ud0 == 0.0 || dz == 0.0 {
                1.0
            } else {
                (ud0 * inv.a0 * dz).signum()
            };
            invariants = Some(inv);
            UBranch::Oval { w, s0, sigma }
        };
        let sign3 = |v: f64, fallback: f64| if v != 0.0 { v.signum() } else { fallback.signum() };
        let gamma3 = if n == 4 {
            Gamma3::Sqrt(1.0)
        } else {
            match &branch {
                UBranch::Oval { w, s0, sigma } => {
                    let inv = invariants.as_ref().expect("oval branch carries invariants");
                    let z1 = inv.z_of_u(1.0);
                    match w.lattice {
                        Lattice::ThreeReal { e2, e3, lambda, m, .. }
                            if (z1 - e2).abs() <= 1e-9 * e2.abs().max(e3.abs()).max(1e-300) =>
                        {
                            let mag = (4.0 / inv.a0 * (e2 - e3)).sqrt();
                            let (sn, cn, dn) = jacobi_sncndn(lambda * s0, m);
                            let c = if cn.abs() > 1e-8 {
                                mag * sign3(g[2], 1.0) * cn.signum()
                            } else {
                                // γ̇₃ = −Cλσ sn dn
                                -mag * sign3(gd[2], 1.0) * (sigma * sn * dn).signum()
                            };
                            Gamma3::Cn { c }
                        }
                        _ => Gamma3::Sqrt(sign3(g[2], gd[2])),
                    }
                }
                UBranch::Harmonic { c, r, psi, omega } if (c + r - 1.0).abs() <= 1e-9 => {
                    let mag = (2.0 * r).sqrt();
                    let arg = core::f64::consts::FRAC_PI_4 - psi / 2.0;
                    let cc = if arg.sin().abs() > 1e-8 {
                        mag * sign3(g[2], 1.0) * arg.sin().signum()
                    } else {
                        // γ̇₃ = −C(ω/2)cos(arg)
                        -mag * sign3(gd[2], 1.0) * (omega * arg.cos()).signum()
                    };
                    Gamma3::HalfAngle { c: cc }
                }
                _ => Gamma3::Sqrt(sign3(g[2], gd[2])),
            }
        };
        let phi3_0 = if n == 4 { g[3].atan2(g[2]) } else { 0.0 };
        Ok(ClosedForm {
            spec: spec.clone(),
            poly,
            case,
            invariants,
            branch,
            gamma3,
            phi1_0: g[1].atan2(g[0]),
            phi3_0,
        })
    }

    pub fn poly(&self) -> &CubicPoly {
        &self.poly
    }

    pub fn case(&self) -> CaseTag {
        self.case
    }

    pub fn invariants(&self) -> Option<&WeierstrassInvariants> {
        self.invariants.as_ref()
    }

    /// Period of u(t); infinite for asymptotic motions, zero for constant u.
    pub fn period(&self) -> f64 {
        match &self.branch {
            UBranch::Constant(_) => 0.0,
            UBranch::Harmonic { omega, .. } => 2.0 * core::f64::consts::PI / omega,
            UBranch::Oval { w, .. } => w.real_period(),
        }
    }

    /// (u(t), u̇(t)).
    pub fn u(&self, t: f64) -> Result<(f64, f64)> {
        match &self.branch {
            UBranch::Constant(u) => Ok((*u, 0.0)),
            UBranch::Harmonic { c, r, omega, psi } => {
                let th = omega * t + psi;
                Ok((c + r * th.sin(), r * omega * th.cos()))
            }
            UBranch::Oval { w, s0, sigma } => {
                let inv = self.invariants.as_ref().expect("oval branch carries invariants");
                let (z, dz) = w.oval(s0 + sigma * t)?;
                Ok((inv.u_of_z(z), 4.0 / inv.a0 * sigma * dz))
            }
        }
    }

    /// (γ₃, γ̇₃) for n = 3.
    fn gamma3(&self, t: f64, u: f64, ud: f64) -> Result<(f64, f64)> {
        match (self.gamma3, &self.branch) {
            (Gamma3::Cn { c }, UBranch::Oval { w, s0, sigma }) => match w.lattice {
                Lattice::ThreeReal { lambda, m, .. } => {
                    let (sn, cn, dn) = jacobi_sncndn(lambda * (s0 + sigma * t), m);
                    Ok((c * cn, -c * lambda * sigma * sn * dn))
                }
                _ => Err(Error::Domain("cn form needs three real roots")),
            },
            (Gamma3::HalfAngle { c }, UBranch::Harmonic { omega, psi, .. }) => {
                let arg = core::f64::consts::FRAC_PI_4 - (omega * t + psi) / 2.0;
                Ok((c * arg.sin(), -c * omega / 2.0 * arg.cos()))
            }
            (Gamma3::Sqrt(s), _) => {
                let v = (1.0 - u).max(0.0).sqrt();
                if v == 0.0 {
                    return Err(Error::Degenerate("gamma3 vanishes on the sqrt branch"));
                }
                Ok((s * v, -s * ud / (2.0 * v)))
            }
            _ => Err(Error::Domain("inconsistent gamma3 representation")),
        }
    }

    fn rates(&self, u: f64) -> (f64, f64) {
        let s = self.poly.source;
        let e2 = s.epsilon * s.epsilon;
        let r1 = (2.0 * e2 * s.phi12 - s.k12 * u) / (2.0 * s.tau * u);
        let v = 1.0 - u;
        let r3 = if s.dim == 4 {
            (2.0 * e2 * s.phi34 - s.k34 * v) / (2.0 * s.tau * v)
        } else {
            0.0
        };
        (r1, r3)
    }

    /// φ̇₁ at time t along the closed-form u.
    pub fn phi1_rate(&self, t: f64) -> f64 {
        match self.u(t) {
            Ok((u, _)) => self.rates(u).0,
            Err(_) => f64::NAN,
        }
    }

    fn angle_increments(&self, a: f64, b: f64) -> Result<(f64, f64)> {
        let tol = 1e-13;
        let q1 = integrate_gk(|t| self.phi1_rate(t), a, b, tol, tol);
        let q3 = if self.poly.source.dim == 4 {
            integrate_gk(
                |t| self.u(t).map(|(u, _)| self.rates(u).1).unwrap_or(f64::NAN),
                a,
                b,
                tol,
                tol,
            )
        } else {
            q1
        };
        if !q1.value.is_finite() || !q3.value.is_finite() {
            return Err(Error::NonFiniteState(a));
        }
        Ok((q1.value, if self.poly.source.dim == 4 { q3.value } else { 0.0 }))
    }

    fn state_at(&self, t: f64, phi1: f64, phi3: f64) -> Result<Vec<f64>> {
        let (u, ud) = self.u(t)?;
        if !(u > 0.0 && u <= 1.0 + 1e-9) {
            return Err(Error::Domain("u left [0, 1]"));
        }
        let (r1, r3) = self.rates(u);
        let rho = u.sqrt();
        let rhod = ud / (2.0 * rho);
        let n = self.spec.n();
        let k = self.spec.tau() / (self.spec.epsilon() * self.spec.epsilon());
        let (c1, s1) = (phi1.cos(), phi1.sin());
        let mut g = vec![rho * c1, rho * s1, 0.0, 0.0];
        let mut gd = vec![rhod * c1 - rho * r1 * s1, rhod * s1 + rho * r1 * c1, 0.0, 0.0];
        if n == 3 {
            let (g3, gd3) = self.gamma3(t, u, ud)?;
            g[2] = g3;
            gd[2] = gd3;
        } else {
            let v = (1.0 - u).max(0.0).sqrt();
            if v == 0.0 {
                return Err(Error::Degenerate("rho3 vanishes"));
            }
            let vd = -ud / (2.0 * v);
            let (c3, s3) = (phi3.cos(), phi3.sin());
            g[2] = v * c3;
            g[3] = v * s3;
            gd[2] = vd * c3 - v * r3 * s3;
            gd[3] = vd * s3 + v * r3 * c3;
        }
        let mut y: Vec<f64> = g[..n].to_vec();
        y.extend(gd[..n].iter().map(|v| k * v));
        Ok(y)
    }

    /// Samples (γ, p) at `times` (increasing, ≥ 0).
    pub fn trajectory(&self, times: &[f64]) -> Result<Trajectory> {
        if times.windows(2).any(|w| !(w[1] > w[0])) || times.first().is_some_and(|&t| t < 0.0) {
            return Err(Error::InvalidOptions("times must be increasing and nonnegative"));
        }
        let mut states = Vec::with_capacity(times.len());
        let (mut phi1, mut phi3) = (self.phi1_0, self.phi3_0);
        let mut prev = 0.0;
        for &t in times {
            if t > prev {
                let (d1, d3) = self.angle_increments(prev, t)?;
                phi1 += d1;
                phi3 += d3;
                prev = t;
            }
            states.push(self.state_at(t, phi1, phi3)?);
        }
        Ok(Trajectory {
            times: times.to_vec(),
            states,
            segments: Vec::new(),
            meta: TrajectoryMeta::default(),
        })
    }
}

/// Closed-form (γ, p) at `times` from `init`.
pub fn closed_form_trajectory(spec: &DemchenkoSpec, init: &ReducedState, times: &[f64]) -> Result<Trajectory> {
    ClosedForm::new(spec, init)?.trajectory(times)
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnboundednessReport {
    pub period: f64,
    /// φ₁(t_{k+1}) − φ₁(t_k) over consecutive periods.
    pub increments: Vec<f64>,
    /// Least-squares slope of φ₁(kT) against k.
    pub slope: f64,
    /// max |φ₁(kT) − (intercept + slope·k)|
    pub fit_residual: f64,
    /// (1/T)∫₀ᵀ φ̇₁ dt along the closed-form u.
    pub mean_rate: f64,
    pub pass: bool,
}

/// Integrates the isotropic flow over `periods` periods of u together with
/// φ̇₁ = (γ₁γ̇₂ − γ₂γ̇₁)/(γ₁² + γ₂²) and checks that φ₁ grows linearly.
pub fn phi1_unboundedness_witness(
    spec: &DemchenkoSpec,
    init: &ReducedState,
    periods: usize,
    opts: &Options,
) -> Result<UnboundednessReport> {
    if periods < 2 {
        return Err(Error::TooFewSamples { needed: 2, found: periods });
    }
    let cf = ClosedForm::new(spec, init)?;
    let period = cf.period();
    if !(period.is_finite() && period > 0.0) {
        return Err(Error::NonPeriodic);
    }
    let n = spec.n();
    let rate = spec.epsilon() * spec.epsilon() / spec.tau();
    let field = crate::reduced::demchenko_field(spec);
    let aug = |t: f64, y: &[f64], dy: &mut [f64]| {
        field(t, &y[..2 * n], &mut dy[..2 * n]);
        let (g1, g2) = (y[0], y[1]);
        dy[2 * n] = rate * (g1 * y[n + 1] - g2 * y[n]) / (g1 * g1 + g2 * g2);
    };
    let mut y0 = init.to_vec();
    y0.push(init.gamma[1].atan2(init.gamma[0]));
    let times: Vec<f64> = (0..=periods).map(|k| k as f64 * period).collect();
    let o = opts.clone().with_sampling(Sampling::Times(times));
    let proj = |y: &mut [f64]| project_state(y, n);
    let tr = integrate(aug, &y0, 0.0, period * periods as f64, &o, Some(&proj))?;
    let phis: Vec<f64> = tr.states.iter().map(|y| y[2 * n]).collect();
    let increments: Vec<f64> = phis.windows(2).map(|w| w[1] - w[0]).collect();
    let m = phis.len() as f64;
    let kbar = (m - 1.0) / 2.0;
    let pbar = phis.iter().sum::<f64>() / m;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (k, p) in phis.iter().enumerate() {
        sxy += (k as f64 - kbar) * (p - pbar);
        sxx += (k as f64 - kbar).powi(2);
    }
    let slope = sxy / sxx;
    let intercept = pbar - slope * kbar;
    let fit_residual = phis
        .iter()
        .enumerate()
        .map(|(k, p)| (p - intercept - slope * k as f64).abs())
        .fold(0.0, f64::max);
    let q = integrate_gk(|t| cf.phi1_rate(t), 0.0, period, 1e-13, 1e-13);
    let mean_rate = q.value / period;
    let pass = increments.iter().all(|d| d.abs() > 1e-9 && d.signum() == slope.signum())
        && fit_residual <= 1e-6
        && slope.signum() == mean_rate.signum();
    Ok(UnboundednessReport {
        period,
        increments,
        slope,
        fit_residual,
        mean_rate,
        pass,
    })
}

/// (γ, p) with γ = (ρ₁cos φ₁, ρ₁sin φ₁, ρ₃cos φ₃, ρ₃sin φ₃), φᵢ = αᵢt, for
/// building stationary and test states in n = 4.
pub fn polar_state_n4(spec: &DemchenkoSpec, u: f64, phi1: f64, phi3: f64, ud: f64, alpha1: f64, alpha3: f64) -> ReducedState {
    let rho = u.sqrt();
    let v = (1.0 - u).sqrt();
    let rd = ud / (2.0 * rho);
    let vd = -ud / (2.0 * v);
    let k = spec.tau() / (spec.epsilon() * spec.epsilon());
    let g = DVector::from_vec(vec![rho * phi1.cos(), rho * phi1.sin(), v * phi3.cos(), v * phi3.sin()]);
    let gd = DVector::from_vec(vec![
        rd * phi1.cos() - rho * alpha1 * phi1.sin(),
        rd * phi1.sin() + rho * alpha1 * phi1.cos(),
        vd * phi3.cos() - v * alpha3 * phi3.sin(),
        vd * phi3.sin() + v * alpha3 * phi3.cos(),
    ]);
    ReducedState { gamma: g, p: gd * k }
}
