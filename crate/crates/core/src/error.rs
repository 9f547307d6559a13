use thiserror::Error;

/// Rejections produced while validating a [`crate::model::RollingSpec`].
#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpecError {
    #[error("inertia entry a[{index}] = {value} is not positive")]
    NonPositiveInertia { index: usize, value: f64 },
    #[error("operator is indefinite: a[{i}]*a[{j}] = {product} <= D = {d}")]
    IndefiniteOperator {
        i: usize,
        j: usize,
        product: f64,
        d: f64,
    },
    #[error("epsilon must be nonzero")]
    ZeroEpsilon,
    #[error("kappa is not skew-symmetric (asymmetry {0:e})")]
    NonSkewKappa(f64),
    #[error("radii give epsilon = {from_radii}, spec says {epsilon}")]
    InconsistentRadii { epsilon: f64, from_radii: f64 },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("dimension {0} is not supported (need n >= 3)")]
    UnsupportedDimension(usize),
    #[error("parameter {0} is not finite")]
    NonFinite(&'static str),
    #[error("D = {0} is negative")]
    NegativeD(f64),
    #[error("tau = {0} is not positive")]
    NonPositiveTau(f64),
    #[error("kappa is not block-diagonal in consecutive pairs")]
    NotBlockDiagonal,
}

/// Everything else that can go wrong in the numerical kernel.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("dimension {0} is not supported (need n >= 3)")]
    UnsupportedDimension(usize),
    #[error("matrix is not skew-symmetric (asymmetry {0:e})")]
    NonSkew(f64),
    #[error("gamma is not a unit vector (|gamma| - 1 = {0:e})")]
    NonUnit(f64),
    #[error("vector is not tangent at gamma (<gamma, v> = {0:e})")]
    NonTangent(f64),
    #[error("state is off the constraint surface by {0:e}")]
    OffManifold(f64),
    #[error("spec is outside the supported family: {0}")]
    UnsupportedFamily(&'static str),
    #[error("singular linear system: {0}")]
    Singular(&'static str),
    #[error("step size underflow at t = {t} (h = {h:e})")]
    StepSizeUnderflow { t: f64, h: f64 },
    #[error("non-finite state encountered at t = {0}")]
    NonFiniteState(f64),
    #[error("step budget of {0} exhausted")]
    TooManySteps(usize),
    #[error("invalid integrator options: {0}")]
    InvalidOptions(&'static str),
    #[error("need at least {needed} samples, found {found}")]
    TooFewSamples { needed: usize, found: usize },
    #[error("trajectory carries no dense output")]
    MissingDenseOutput,
    #[error("trajectory is empty")]
    EmptyTrajectory,
    #[error("initial data inconsistent by {0:e}")]
    InconsistentInitialData(f64),
    #[error("energy h = {0} is not positive (equilibrium)")]
    Equilibrium(f64),
    #[error("degenerate case: {0}")]
    Degenerate(&'static str),
    #[error("argument outside the domain: {0}")]
    Domain(&'static str),
    #[error("t = {0} is too close to a pole")]
    PoleProximity(f64),
    #[error("z = {z} lies below the real branch (largest root {root})")]
    BelowRealBranch { z: f64, root: f64 },
    #[error("neither g3 candidate certifies (residuals {derived:e}, {alternate:e})")]
    Uncertified { derived: f64, alternate: f64 },
    #[error("not a double root (relative discriminant {0:e})")]
    NotDoubleRoot(f64),
    #[error("motion is not periodic")]
    NonPeriodic,
}

pub type Result<T> = core::result::Result<T, Error>;
