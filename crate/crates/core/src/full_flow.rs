//! The unreduced system on SO(n) × S: the submersion to the sphere,
//! horizontal-lift reconstruction, and residuals of the full equations.

#[allow(unused_imports)] // std builds resolve these as inherent methods
use num_traits::Float;
use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::integrator::Trajectory;
use crate::model::{legendre_inverse_unchecked, RollingSpec};
use crate::so_n::{commutator, orthogonality_defect, project_to_gamma_plane, reorthonormalize, so_exponential, wedge, SkewMat, VecN};

/// Orthonormality and radius tolerance for accepted configurations.
pub const CONFIG_TOL: f64 = 1e-9;

/// A point (g, r) of SO(n) × S with the body angular velocity ω = g⁻¹ġ.
#[derive(Debug, Clone, PartialEq)]
pub struct FullConfig {
    pub g: DMatrix<f64>,
    pub r: VecN,
    pub omega: SkewMat,
}

/// γ = g⁻¹r/(b ± a).
pub fn submersion_pi(spec: &RollingSpec, g: &DMatrix<f64>, r: &VecN) -> Result<VecN> {
    let n = spec.n();
    if g.nrows() != n || g.ncols() != n || r.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: r.len(),
        });
    }
    let defect = orthogonality_defect(g);
    if defect > CONFIG_TOL {
        return Err(Error::OffManifold(defect));
    }
    let c = spec.center_distance();
    let dev = r.norm() - c.abs();
    if dev.abs() > CONFIG_TOL * c.abs().max(1.0) {
        return Err(Error::InconsistentInitialData(dev));
    }
    Ok(g.transpose() * r / c)
}

pub fn config_pi(spec: &RollingSpec, cfg: &FullConfig) -> Result<VecN> {
    submersion_pi(spec, &cfg.g, &cfg.r)
}

/// ω = (1/ε)γ ∧ γ̇ and ṙ = (b ± a)(1 − 1/ε)gγ̇.
pub fn horizontal_lift_velocity(spec: &RollingSpec, gamma: &VecN, gamma_dot: &VecN, g: &DMatrix<f64>) -> Result<(SkewMat, VecN)> {
    let t = gamma.dot(gamma_dot);
    if t.abs() > 1e-10 * gamma_dot.norm().max(1.0) {
        return Err(Error::NonTangent(t));
    }
    let eps = spec.epsilon();
    let omega = wedge(gamma, gamma_dot)?.scale(1.0 / eps);
    let rdot = g * gamma_dot * (spec.center_distance() * (1.0 - 1.0 / eps));
    Ok((omega, rdot))
}

/// ṙ − (1 − ε)(gωg⁻¹)r, which vanishes under rolling without slipping
/// (the coefficient ±a/(b ± a) equals 1 − ε).
pub fn rolling_defect(spec: &RollingSpec, g: &DMatrix<f64>, omega: &SkewMat, r: &VecN, rdot: &VecN) -> VecN {
    let big = g * omega.matrix() * g.transpose();
    rdot - big * r * (1.0 - spec.epsilon())
}

#[derive(Debug, Clone, PartialEq)]
pub struct FullTrajectory {
    pub times: Vec<f64>,
    pub configs: Vec<FullConfig>,
}

impl FullTrajectory {
    /// Rows laid out as `[g (row-major), r, ω (row-major)]`.
    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.configs
            .iter()
            .map(|c| {
                let n = c.r.len();
                let mut row = Vec::with_capacity(2 * n * n + n);
                for i in 0..n {
                    for j in 0..n {
                        row.push(c.g[(i, j)]);
                    }
                }
                row.extend(c.r.iter());
                for i in 0..n {
                    for j in 0..n {
                        row.push(c.omega.matrix()[(i, j)]);
                    }
                }
                row
            })
            .collect()
    }

    /// Applies (g, r) → (Rg, Rr).
    pub fn rotated(&self, rot: &DMatrix<f64>) -> FullTrajectory {
        FullTrajectory {
            times: self.times.clone(),
            configs: self
                .configs
                .iter()
                .map(|c| FullConfig {
                    g: rot * &c.g,
                    r: rot * &c.r,
                    omega: c.omega.clone(),
                })
                .collect(),
        }
    }
}

/// Default largest Lie step used by [`reconstruct_full`].
pub const RECONSTRUCT_STEP: f64 = 1e-3;

fn omega_at(spec: &RollingSpec, y: &[f64]) -> Result<SkewMat> {
    let n = spec.n();
    let mut gamma = DVector::from_column_slice(&y[..n]);
    gamma /= gamma.norm();
    let mut p = DVector::from_column_slice(&y[n..2 * n]);
    p -= &gamma * gamma.dot(&p);
    let gd = legendre_inverse_unchecked(spec, &gamma, &p);
    Ok(wedge(&gamma, &gd)?.scale(1.0 / spec.epsilon()))
}

/// Horizontal lift of a reduced trajectory through (g0, r0), sampled at the
/// reduced trajectory's times. The trajectory needs dense output.
pub fn reconstruct_full(spec: &RollingSpec, reduced: &Trajectory, g0: &DMatrix<f64>, r0: &VecN) -> Result<FullTrajectory> {
    reconstruct_full_with(spec, reduced, g0, r0, RECONSTRUCT_STEP)
}

/// As [`reconstruct_full`] with an explicit largest Lie step. ġ = gω is
/// advanced by the two-exponential commutator-free Gauss scheme (order 4),
/// re-orthonormalized after every step; r = (b ± a)gγ.
pub fn reconstruct_full_with(
    spec: &RollingSpec,
    reduced: &Trajectory,
    g0: &DMatrix<f64>,
    r0: &VecN,
    max_step: f64,
) -> Result<FullTrajectory> {
    if reduced.is_empty() {
        return Err(Error::EmptyTrajectory);
    }
    if !reduced.has_dense() {
        return Err(Error::MissingDenseOutput);
    }
    if !(max_step > 0.0) {
        return Err(Error::InvalidOptions("max_step must be positive"));
    }
    let n = spec.n();
    let gamma0 = submersion_pi(spec, g0, r0)?;
    let y0 = &reduced.states[0];
    let dev = (&gamma0 - DVector::from_column_slice(&y0[..n])).amax();
    if dev > 1e-8 {
        return Err(Error::InconsistentInitialData(dev));
    }
    let c = spec.center_distance();
    let s3 = 3f64.sqrt();
    let (c1, c2) = (0.5 - s3 / 6.0, 0.5 + s3 / 6.0);
    let (w1, w2) = (0.25 + s3 / 6.0, 0.25 - s3 / 6.0);
    let mut g = g0.clone();
    let mut t = reduced.times[0];
    let mut configs = Vec::with_capacity(reduced.len());
    for (k, (&tk, y)) in reduced.times.iter().zip(&reduced.states).enumerate() {
        if k > 0 {
            let span = tk - t;
            let steps = (span / max_step).ceil().max(1.0) as usize;
            let h = span / steps as f64;
            for s in 0..steps {
                let t0 = t + s as f64 * h;
                let o1 = omega_at(spec, &reduced.eval(t0 + c1 * h)?)?;
                let o2 = omega_at(spec, &reduced.eval(t0 + c2 * h)?)?;
                // g is multiplied on the right, so the earlier-weighted factor comes first
                let first = o1.scale(w1 * h).add(&o2.scale(w2 * h))?;
                let second = o1.scale(w2 * h).add(&o2.scale(w1 * h))?;
                g = reorthonormalize(&(g * so_exponential(&first) * so_exponential(&second)));
            }
            t = tk;
        }
        let mut gamma = DVector::from_column_slice(&y[..n]);
        gamma /= gamma.norm();
        configs.push(FullConfig {
            r: &g * &gamma * c,
            omega: omega_at(spec, y)?,
            g: g.clone(),
        });
    }
    Ok(FullTrajectory {
        times: reduced.times.clone(),
        configs,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FullResidualReport {
    /// max ‖gᵀg − I‖ (max entry)
    pub orthonormality: f64,
    /// max ‖ω − P_γ(ω)‖
    pub no_twist: f64,
    /// max |ṙ − (1 − ε)(gωg⁻¹)r|, ṙ by finite differences
    pub rolling: f64,
    /// max ‖g⁻¹ġ − ω‖, ġ by finite differences
    pub kinematic: f64,
    /// max ‖P_γ(𝐈ω̇ − [𝐈ω, ω] − [κ, ω])‖
    pub admissible: f64,
    /// max ‖(1 − P_γ)(𝐈ω̇ − [𝐈ω, ω] − [κ, ω])‖, i.e. |λ₀|
    pub lambda0: f64,
    /// max over samples of the gap between the 5-point estimates at spacing δ and 2δ
    pub richardson_gap: f64,
    /// Samples where derivatives were evaluated.
    pub samples: usize,
}

/// Samples on each side needed by the differencing stencil.
const HALF_STENCIL: usize = 4;

/// 5-point centered derivative at spacing `stride`·dt, Richardson-combined with
/// twice the spacing. Returns (estimate, gap between the two spacings).
fn derivative<F>(f: F, i: usize, dt: f64) -> (DMatrix<f64>, f64)
where
    F: Fn(usize) -> DMatrix<f64>,
{
    let d = |s: usize| {
        let h = s as f64 * dt;
        (f(i - 2 * s) - f(i - s) * 8.0 + f(i + s) * 8.0 - f(i + 2 * s)) / (12.0 * h)
    };
    let d1 = d(1);
    let d2 = d(2);
    let gap = (&d1 - &d2).amax();
    ((d1 * 16.0 - d2) / 15.0, gap)
}

/// Residuals of the unreduced equations along a uniformly sampled
/// full trajectory.
pub fn full_residuals(spec: &RollingSpec, traj: &FullTrajectory) -> Result<FullResidualReport> {
    let m = traj.configs.len();
    if m < 2 * HALF_STENCIL + 1 {
        return Err(Error::TooFewSamples {
            needed: 2 * HALF_STENCIL + 1,
            found: m,
        });
    }
    let dt = (traj.times[m - 1] - traj.times[0]) / (m - 1) as f64;
    for w in traj.times.windows(2) {
        if ((w[1] - w[0]) - dt).abs() > 1e-9 * dt.abs().max(1e-300) {
            return Err(Error::InvalidOptions("full residuals need uniform sampling"));
        }
    }
    let mut rep = FullResidualReport::default();
    let mut gammas = Vec::with_capacity(m);
    for cfg in &traj.configs {
        rep.orthonormality = rep.orthonormality.max(orthogonality_defect(&cfg.g));
        let gamma = config_pi(spec, cfg)?;
        let gamma = &gamma / gamma.norm();
        let twist = cfg.omega.sub(&project_to_gamma_plane(&cfg.omega, &gamma)?)?;
        rep.no_twist = rep.no_twist.max(twist.norm());
        gammas.push(gamma);
    }
    let kappa = spec.kappa();
    for i in HALF_STENCIL..m - HALF_STENCIL {
        let cfg = &traj.configs[i];
        let (rdot, gap_r) = derivative(|k| DMatrix::from_column_slice(traj.configs[k].r.len(), 1, traj.configs[k].r.as_slice()), i, dt);
        let rdot = DVector::from_column_slice(rdot.as_slice());
        rep.rolling = rep.rolling.max(rolling_defect(spec, &cfg.g, &cfg.omega, &cfg.r, &rdot).amax());
        let (gdot, gap_g) = derivative(|k| traj.configs[k].g.clone(), i, dt);
        rep.kinematic = rep.kinematic.max((cfg.g.transpose() * gdot - cfg.omega.matrix()).amax());
        let (wdot, gap_w) = derivative(|k| traj.configs[k].omega.matrix().clone(), i, dt);
        let wdot = SkewMat::from_matrix(wdot)?;
        let k = spec.inertia_apply(&cfg.omega)?;
        let x = spec
            .inertia_apply(&wdot)?
            .sub(&commutator(&k, &cfg.omega)?)?
            .sub(&commutator(kappa, &cfg.omega)?)?;
        let px = project_to_gamma_plane(&x, &gammas[i])?;
        rep.admissible = rep.admissible.max(px.norm());
        rep.lambda0 = rep.lambda0.max(x.sub(&px)?.norm());
        rep.richardson_gap = rep.richardson_gap.max(gap_r).max(gap_g).max(gap_w);
        rep.samples += 1;
    }
    Ok(rep)
}
