//! Carlson's R_F, Jacobi elliptic functions, and the Weierstrass ℘ function
//! for real invariants, including its degenerate (trigonometric, hyperbolic,
//! rational) forms.

#[allow(unused_imports)] // std builds resolve these as inherent methods
use num_traits::{Euclid, Float};
use core::f64::consts::FRAC_PI_2;

use crate::error::{Error, Result};

/// R_F(x, y, z) = ½∫₀^∞ dt / √((t+x)(t+y)(t+z)).
pub fn carlson_rf(x: f64, y: f64, z: f64) -> Result<f64> {
    if !(x >= 0.0 && y >= 0.0 && z >= 0.0) {
        return Err(Error::Domain("carlson_rf needs nonnegative arguments"));
    }
    let zeros = [x, y, z].iter().filter(|v| **v == 0.0).count();
    if zeros >= 2 {
        return Err(Error::Domain("carlson_rf needs at most one zero argument"));
    }
    if !(x.is_finite() && y.is_finite() && z.is_finite()) {
        return Err(Error::Domain("carlson_rf needs finite arguments"));
    }
    const ERRTOL: f64 = 1e-3;
    let (mut x, mut y, mut z) = (x, y, z);
    let (mut ave, mut dx, mut dy, mut dz);
    loop {
        let (sx, sy, sz) = (x.sqrt(), y.sqrt(), z.sqrt());
        let lambda = sx * (sy + sz) + sy * sz;
        x = 0.25 * (x + lambda);
        y = 0.25 * (y + lambda);
        z = 0.25 * (z + lambda);
        ave = (x + y + z) / 3.0;
        dx = (ave - x) / ave;
        dy = (ave - y) / ave;
        dz = (ave - z) / ave;
        if dx.abs().max(dy.abs()).max(dz.abs()) <= ERRTOL {
            break;
        }
    }
    let e2 = dx * dy - dz * dz;
    let e3 = dx * dy * dz;
    Ok((1.0 + (e2 / 24.0 - 0.1 - 3.0 * e3 / 44.0) * e2 + e3 / 14.0) / ave.sqrt())
}

/// Complete integral K(m) = R_F(0, 1 − m, 1), m < 1.
pub fn elliptic_k(m: f64) -> Result<f64> {
    if m >= 1.0 {
        return Err(Error::Domain("K(m) diverges for m >= 1"));
    }
    carlson_rf(0.0, 1.0 - m, 1.0)
}

/// Incomplete integral F(φ | m) for φ ∈ [0, π/2].
pub fn elliptic_f(phi: f64, m: f64) -> Result<f64> {
    if !(0.0..=FRAC_PI_2 + 1e-15).contains(&phi) {
        return Err(Error::Domain("elliptic_f expects phi in [0, pi/2]"));
    }
    let (s, c) = phi.sin_cos();
    if s == 0.0 {
        return Ok(0.0);
    }
    Ok(s * carlson_rf(c * c, 1.0 - m * s * s, 1.0)?)
}

/// (sn, cn, dn)(u | m) for 0 ≤ m ≤ 1 via descending Landen / AGM.
pub fn jacobi_sncndn(u: f64, m: f64) -> (f64, f64, f64) {
    if m <= 0.0 {
        return (u.sin(), u.cos(), 1.0);
    }
    if m >= 1.0 {
        let s = 1.0 / u.cosh();
        return (u.tanh(), s, s);
    }
    const CA: f64 = 1e-9;
    let mut em = [0.0f64; 16];
    let mut en = [0.0f64; 16];
    let mut emc = 1.0 - m;
    let mut a = 1.0;
    let mut dn = 1.0;
    let mut c = 1.0;
    let mut l = 0;
    for i in 0..16 {
        l = i;
        em[i] = a;
        emc = emc.sqrt();
        en[i] = emc;
        c = 0.5 * (a + emc);
        if (a - emc).abs() <= CA * a {
            break;
        }
        emc *= a;
        a = c;
    }
    let uu = u * c;
    let mut sn = uu.sin();
    let mut cn = uu.cos();
    if sn != 0.0 {
        let mut a = cn / sn;
        c *= a;
        for ii in (0..=l).rev() {
            let b = em[ii];
            a *= c;
            c *= dn;
            dn = (en[ii] + a) / (b + a);
            a = c / b;
        }
        let a = 1.0 / (c * c + 1.0).sqrt();
        sn = if sn >= 0.0 { a } else { -a };
        cn = c * sn;
    }
    (sn, cn, dn)
}

/// Shape of the period lattice for real invariants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Lattice {
    /// Three real roots e1 ≥ e2 ≥ e3, not all equal; m = (e2−e3)/(e1−e3).
    ThreeReal { e1: f64, e2: f64, e3: f64, lambda: f64, m: f64 },
    /// One real root e2 (negative discriminant).
    OneReal { e2: f64, h: f64, m: f64 },
    /// g2 = g3 = 0.
    Triple,
}

/// ℘ for real invariants g2, g3.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Weierstrass {
    pub g2: f64,
    pub g3: f64,
    pub lattice: Lattice,
}

/// Relative discriminant below which roots are treated as coincident.
pub const DEGENERACY_TOL: f64 = 1e-12;

impl Weierstrass {
    pub fn new(g2: f64, g3: f64) -> Result<Self> {
        if !(g2.is_finite() && g3.is_finite()) {
            return Err(Error::Domain("non-finite invariants"));
        }
        if g2 == 0.0 && g3 == 0.0 {
            return Ok(Weierstrass {
                g2,
                g3,
                lattice: Lattice::Triple,
            });
        }
        let disc = g2 * g2 * g2 - 27.0 * g3 * g3;
        let scale = (g2 * g2 * g2).abs().max(27.0 * g3 * g3);
        let rel = disc / scale;
        if rel.abs() <= DEGENERACY_TOL {
            // double root at −3g3/(2g2), simple root at 3g3/g2
            let d = -1.5 * g3 / g2;
            let s = 3.0 * g3 / g2;
            return Ok(if s > d {
                Self::from_roots_unchecked(g2, g3, s, d, d)
            } else {
                Self::from_roots_unchecked(g2, g3, d, d, s)
            });
        }
        if disc > 0.0 {
            let mut r = real_roots_trig(g2, g3);
            for e in r.iter_mut() {
                *e = newton_polish(g2, g3, *e);
            }
            r.sort_by(|a, b| b.total_cmp(a));
            Ok(Self::from_roots_unchecked(g2, g3, r[0], r[1], r[2]))
        } else {
            let e2 = newton_polish(g2, g3, single_real_root(g2, g3));
            let h = (3.0 * e2 * e2 - 0.25 * g2).sqrt();
            Ok(Weierstrass {
                g2,
                g3,
                lattice: Lattice::OneReal {
                    e2,
                    h,
                    m: (0.5 - 0.75 * e2 / h).clamp(0.0, 1.0),
                },
            })
        }
    }

    /// Builds ℘ from three real roots e1 ≥ e2 ≥ e3 summing to zero.
    pub fn from_roots(e1: f64, e2: f64, e3: f64) -> Result<Self> {
        if !(e1 >= e2 && e2 >= e3) {
            return Err(Error::Domain("roots must be ordered e1 >= e2 >= e3"));
        }
        let scale = e1.abs().max(e3.abs());
        if (e1 + e2 + e3).abs() > 1e-10 * scale.max(1e-300) {
            return Err(Error::Domain("roots must sum to zero"));
        }
        let g2 = -4.0 * (e1 * e2 + e1 * e3 + e2 * e3);
        let g3 = 4.0 * e1 * e2 * e3;
        if e1 == e3 {
            return Ok(Weierstrass {
                g2,
                g3,
                lattice: Lattice::Triple,
            });
        }
        Ok(Self::from_roots_unchecked(g2, g3, e1, e2, e3))
    }

    fn from_roots_unchecked(g2: f64, g3: f64, e1: f64, e2: f64, e3: f64) -> Self {
        let lambda = (e1 - e3).sqrt();
        let m = ((e2 - e3) / (e1 - e3)).clamp(0.0, 1.0);
        Weierstrass {
            g2,
            g3,
            lattice: Lattice::ThreeReal {
                e1,
                e2,
                e3,
                lambda,
                m,
            },
        }
    }

    /// Largest real root of 4z³ − g2 z − g3.
    pub fn largest_root(&self) -> f64 {
        match self.lattice {
            Lattice::ThreeReal { e1, .. } => e1,
            Lattice::OneReal { e2, .. } => e2,
            Lattice::Triple => 0.0,
        }
    }

    /// Real period of ℘ (infinite for the hyperbolic and rational cases).
    pub fn real_period(&self) -> f64 {
        match self.lattice {
            Lattice::ThreeReal { lambda, m, .. } => match elliptic_k(m) {
                Ok(k) => 2.0 * k / lambda,
                Err(_) => f64::INFINITY,
            },
            Lattice::OneReal { h, m, .. } => match elliptic_k(m) {
                Ok(k) => 2.0 * k / h.sqrt(),
                Err(_) => f64::INFINITY,
            },
            Lattice::Triple => f64::INFINITY,
        }
    }

    /// (℘(t), ℘′(t)).
    pub fn p(&self, t: f64) -> Result<(f64, f64)> {
        let period = self.real_period();
        let dist = if period.is_finite() {
            let r = Euclid::rem_euclid(&t, &period);
            r.min(period - r)
        } else {
            t.abs()
        };
        let threshold = if period.is_finite() {
            1e-6 * period
        } else {
            0.0
        };
        if dist <= threshold || dist == 0.0 {
            return Err(Error::PoleProximity(t));
        }
        match self.lattice {
            Lattice::ThreeReal {
                e1, e3, lambda, m, ..
            } => {
                let (sn, cn, dn) = jacobi_sncndn(lambda * t, m);
                let d = e1 - e3;
                Ok((
                    e3 + d / (sn * sn),
                    -2.0 * d * lambda * cn * dn / (sn * sn * sn),
                ))
            }
            Lattice::OneReal { e2, h, m } => {
                let rh = h.sqrt();
                let (sn, cn, dn) = jacobi_sncndn(2.0 * rh * t, m);
                let om = 1.0 - cn;
                Ok((e2 + h * (1.0 + cn) / om, -4.0 * h * rh * sn * dn / (om * om)))
            }
            Lattice::Triple => Ok((1.0 / (t * t), -2.0 / (t * t * t))),
        }
    }

    /// The A ∈ (0, ω] with ℘(A) = z0 on the real branch, times `branch`'s sign.
    pub fn invert(&self, z0: f64, branch: f64) -> Result<f64> {
        let root = self.largest_root();
        if !(z0 >= root) {
            return Err(Error::BelowRealBranch { z: z0, root });
        }
        let sign = if branch < 0.0 { -1.0 } else { 1.0 };
        let a = match self.lattice {
            Lattice::ThreeReal { e1, e2, e3, .. } => {
                if z0 == e1 && e1 == e2 {
                    return Err(Error::Domain("double root at the top of the real branch"));
                }
                carlson_rf(z0 - e1, z0 - e2, z0 - e3)?
            }
            Lattice::OneReal { e2, h, m } => {
                let c = ((z0 - e2 - h) / (z0 - e2 + h)).clamp(-1.0, 1.0);
                let phi = c.acos();
                let f = if phi <= FRAC_PI_2 {
                    elliptic_f(phi, m)?
                } else {
                    2.0 * elliptic_k(m)? - elliptic_f(core::f64::consts::PI - phi, m)?
                };
                f / (2.0 * h.sqrt())
            }
            Lattice::Triple => {
                if z0 <= 0.0 {
                    return Err(Error::Domain("z0 must be positive for the rational case"));
                }
                1.0 / z0.sqrt()
            }
        };
        Ok(sign * a)
    }

    /// For three real roots: the bounded branch z(s) = ℘(s + ω₃) =
    /// e3 + (e2 − e3) sn²(λs | m), oscillating in [e3, e2]. Returns (z, dz/ds).
    pub fn oval(&self, s: f64) -> Result<(f64, f64)> {
        match self.lattice {
            Lattice::ThreeReal {
                e2, e3, lambda, m, ..
            } => {
                let (sn, cn, dn) = jacobi_sncndn(lambda * s, m);
                let w = e2 - e3;
                Ok((e3 + w * sn * sn, 2.0 * w * lambda * sn * cn * dn))
            }
            _ => Err(Error::Domain("the bounded branch needs three real roots")),
        }
    }

    /// The s ∈ [0, ω₁] with oval(s) = z, z ∈ [e3, e2].
    pub fn invert_oval(&self, z: f64) -> Result<f64> {
        match self.lattice {
            Lattice::ThreeReal {
                e2, e3, lambda, m, ..
            } => {
                let w = e2 - e3;
                let tol = 1e-9 * (e2.abs().max(e3.abs())).max(w);
                if z < e3 - tol || z > e2 + tol {
                    return Err(Error::Domain("z outside the bounded branch"));
                }
                if w == 0.0 {
                    return Ok(0.0);
                }
                let x = ((z - e3) / w).clamp(0.0, 1.0);
                Ok(elliptic_f(x.sqrt().asin(), m)? / lambda)
            }
            _ => Err(Error::Domain("the bounded branch needs three real roots")),
        }
    }

    /// Half-period ω₁ = K(m)/λ of the bounded branch (infinite when m = 1).
    pub fn half_period(&self) -> f64 {
        self.real_period() / 2.0
    }
}

/// (℘(t), ℘′(t)).
pub fn weierstrass_p(t: f64, w: &Weierstrass) -> Result<(f64, f64)> {
    w.p(t)
}

/// Solves ℘(A) = z0 on the real branch; `branch` selects ±A.
pub fn invert_weierstrass(z0: f64, w: &Weierstrass, branch: f64) -> Result<f64> {
    w.invert(z0, branch)
}

fn real_roots_trig(g2: f64, g3: f64) -> [f64; 3] {
    // z³ + pz + q with p = −g2/4, q = −g3/4
    let p = -0.25 * g2;
    let q = -0.25 * g3;
    let r = 2.0 * (-p / 3.0).sqrt();
    let arg = ((3.0 * q / (2.0 * p)) * (-3.0 / p).sqrt()).clamp(-1.0, 1.0);
    let th = arg.acos() / 3.0;
    let tau = 2.0 * core::f64::consts::PI / 3.0;
    [r * th.cos(), r * (th - tau).cos(), r * (th - 2.0 * tau).cos()]
}

fn single_real_root(g2: f64, g3: f64) -> f64 {
    // Cardano for z³ + pz + q with one real root
    let p = -0.25 * g2;
    let q = -0.25 * g3;
    let d = (q * q / 4.0 + p * p * p / 27.0).max(0.0).sqrt();
    (-q / 2.0 + d).cbrt() + (-q / 2.0 - d).cbrt()
}

fn newton_polish(g2: f64, g3: f64, mut z: f64) -> f64 {
    for _ in 0..3 {
        let f = 4.0 * z * z * z - g2 * z - g3;
        let df = 12.0 * z * z - g2;
        if df == 0.0 {
            break;
        }
        let step = f / df;
        if !step.is_finite() {
            break;
        }
        z -= step;
    }
    z
}
