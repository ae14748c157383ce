use thiserror::Error;

/// Failure modes shared by every computational module.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("gradient of the level set vanishes at the query point (|grad xi| = {0:e})")]
    DegenerateGradient(f64),
    #[error("velocity must be nonzero")]
    ZeroVelocity,
    #[error("point lies outside the closed domain (xi = {0:e})")]
    OutsideDomain(f64),
    #[error("no backward exit found along the ray (numerical failure)")]
    NoExit,
    #[error("grazing ray: |n.v|/|v| = {0:e} is below the grazing tolerance")]
    GrazingRay(f64),
    #[error("kinetic distance vanishes, log ratio undefined")]
    ZeroWeight,
    #[error("velocity in the wrong half space: {0}")]
    WrongHalfSpace(&'static str),
    #[error("integral diverges: a + eps = {sum} must be below b = {b}")]
    DivergentIntegral { sum: f64, b: f64 },
    #[error("index {i} out of range for l = {l}")]
    IndexError { i: usize, l: usize },
    #[error("omega is not a unit vector (|omega| = {0})")]
    NonUnitOmega(f64),
    #[error("k_rho is singular at u = v")]
    SingularPoint,
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("domain is not strictly convex: {0}")]
    NotConvex(String),
    #[error("particle stuck at a grazing wall point after repeated resampling")]
    StuckParticle,
}

pub type Result<T> = std::result::Result<T, Error>;
