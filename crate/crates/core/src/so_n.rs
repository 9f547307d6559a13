//! Linear algebra on so(n): wedge products, the invariant inner product,
//! commutators, the diagonal inertia operator, and the exponential map.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type VecN = DVector<f64>;

/// Relative asymmetry accepted by [`SkewMat::try_new`].
pub const SKEW_TOL: f64 = 1e-14;

/// An element of so(n), stored as a dense skew-symmetric matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SkewMat(DMatrix<f64>);

impl SkewMat {
    /// Antisymmetrizes `m` as (m - m^T)/2.
    pub fn from_matrix(m: DMatrix<f64>) -> Result<Self> {
        check_square(&m)?;
        let t = m.transpose();
        Ok(SkewMat((m - t) * 0.5))
    }

    /// Like [`SkewMat::from_matrix`] but rejects inputs that are not
    /// skew-symmetric up to `SKEW_TOL` of the largest entry.
    pub fn try_new(m: DMatrix<f64>) -> Result<Self> {
        check_square(&m)?;
        let asym = asymmetry(&m);
        if asym > SKEW_TOL * m.amax().max(f64::MIN_POSITIVE) {
            return Err(Error::NonSkew(asym));
        }
        Self::from_matrix(m)
    }

    pub fn zeros(n: usize) -> Result<Self> {
        if n < 3 {
            return Err(Error::UnsupportedDimension(n));
        }
        Ok(SkewMat(DMatrix::zeros(n, n)))
    }

    /// Builds sum of `v * e_i ∧ e_j` over zero-based `(i, j, v)` triples.
    pub fn from_entries(n: usize, entries: &[(usize, usize, f64)]) -> Result<Self> {
        let mut m = DMatrix::zeros(n, n);
        if n < 3 {
            return Err(Error::UnsupportedDimension(n));
        }
        for &(i, j, v) in entries {
            if i >= n || j >= n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: i.max(j) + 1,
                });
            }
            m[(i, j)] += v;
            m[(j, i)] -= v;
        }
        Ok(SkewMat(m))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn apply(&self, v: &VecN) -> VecN {
        &self.0 * v
    }

    pub fn scale(&self, s: f64) -> SkewMat {
        SkewMat(&self.0 * s)
    }

    pub fn add(&self, other: &SkewMat) -> Result<SkewMat> {
        same_dim(self.dim(), other.dim())?;
        Ok(SkewMat(&self.0 + &other.0))
    }

    pub fn sub(&self, other: &SkewMat) -> Result<SkewMat> {
        same_dim(self.dim(), other.dim())?;
        Ok(SkewMat(&self.0 - &other.0))
    }

    /// Frobenius norm of the matrix.
    pub fn norm(&self) -> f64 {
        self.0.norm()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&x| x == 0.0)
    }
}

fn check_square(m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch {
            expected: m.nrows(),
            found: m.ncols(),
        });
    }
    if m.nrows() < 3 {
        return Err(Error::UnsupportedDimension(m.nrows()));
    }
    Ok(())
}

fn same_dim(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::DimensionMismatch {
            expected: a,
            found: b,
        });
    }
    Ok(())
}

/// Largest |m_ij + m_ji|.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in i..n.min(m.ncols()) {
            worst = worst.max((m[(i, j)] + m[(j, i)]).abs());
        }
    }
    worst
}

/// a ∧ b = a bᵀ − b aᵀ.
pub fn wedge(a: &VecN, b: &VecN) -> Result<SkewMat> {
    same_dim(a.len(), b.len())?;
    if a.len() < 3 {
        return Err(Error::UnsupportedDimension(a.len()));
    }
    Ok(SkewMat(a * b.transpose() - b * a.transpose()))
}

/// ⟨X, Y⟩ = −½ tr(XY).
pub fn lie_inner(x: &SkewMat, y: &SkewMat) -> Result<f64> {
    same_dim(x.dim(), y.dim())?;
    // tr(XY) = sum_ij X_ij Y_ji = -sum_ij X_ij Y_ij
    Ok(0.5 * x.0.dot(&y.0))
}

pub fn commutator(x: &SkewMat, y: &SkewMat) -> Result<SkewMat> {
    same_dim(x.dim(), y.dim())?;
    SkewMat::from_matrix(&x.0 * &y.0 - &y.0 * &x.0)
}

/// Orthogonal projection of X onto γ ∧ ℝⁿ, P(X) = (Xγ) ∧ γ.
pub fn project_to_gamma_plane(x: &SkewMat, gamma: &VecN) -> Result<SkewMat> {
    same_dim(x.dim(), gamma.len())?;
    let dev = gamma.norm() - 1.0;
    if dev.abs() > 1e-12 {
        return Err(Error::NonUnit(dev));
    }
    wedge(&x.apply(gamma), gamma)
}

/// 𝐈(X) with (𝐈X)_ij = a_i a_j X_ij, i.e. 𝔸X𝔸.
pub fn inertia_scale(a: &VecN, x: &SkewMat) -> Result<SkewMat> {
    same_dim(a.len(), x.dim())?;
    let n = a.len();
    let mut m = x.0.clone();
    for i in 0..n {
        for j in 0..n {
            m[(i, j)] *= a[i] * a[j];
        }
    }
    Ok(SkewMat(m))
}

/// Rotation exp(X) by scaling and squaring of the Taylor series.
pub fn so_exponential(x: &SkewMat) -> DMatrix<f64> {
    let n = x.dim();
    let norm = x.0.iter().fold(0.0f64, |acc, v| acc.max(v.abs())) * n as f64;
    let mut squarings = 0u32;
    let mut scale = 1.0;
    while norm * scale > 0.25 {
        scale *= 0.5;
        squarings += 1;
    }
    let y = &x.0 * scale;
    let mut result = DMatrix::identity(n, n);
    let mut term = DMatrix::identity(n, n);
    for k in 1..=20 {
        term = &term * &y / k as f64;
        result += &term;
        if term.amax() < 1e-18 {
            break;
        }
    }
    for _ in 0..squarings {
        result = &result * &result;
    }
    result
}

/// Nearest orthogonal matrix by Newton–Schulz polar iteration; `g` must
/// already be close to orthogonal.
pub fn reorthonormalize(g: &DMatrix<f64>) -> DMatrix<f64> {
    let n = g.nrows();
    let mut q = g.clone();
    for _ in 0..3 {
        let e = q.transpose() * &q;
        let corr = DMatrix::identity(n, n) * 1.5 - e * 0.5;
        q = &q * corr;
    }
    q
}

/// ‖gᵀg − I‖ in the max-entry norm.
pub fn orthogonality_defect(g: &DMatrix<f64>) -> f64 {
    let n = g.nrows();
    (g.transpose() * g - DMatrix::identity(n, n)).amax()
}

pub fn basis_vector(n: usize, i: usize) -> VecN {
    let mut v = DVector::zeros(n);
    v[i] = 1.0;
    v
}
