use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("point {point:?} lies outside the domain {domain}")]
    Domain { point: Vec<f64>, domain: String },

    #[error("time {t} outside the admissible range [0, {max}]")]
    TimeRange { t: f64, max: f64 },

    #[error("segment {segment} has no closed-form flow map at {point:?}")]
    NoClosedForm { segment: usize, point: Vec<f64> },

    #[error("gradient mass {0:e} is below the 1e-14 threshold")]
    ZeroGradient(f64),

    #[error("point {0:?} is off the track")]
    PointOffTrack(Vec<f64>),

    #[error("amplitude search failed after {probes} probes (best ratio {best_ratio})")]
    AmplitudeSearchFailed { probes: usize, best_ratio: f64 },

    #[error("no growth data: maximal local average {0:e} of |grad rho|^2 is below 1e-12")]
    NoGrowthData(f64),

    #[error("density point at {point:?} failed the multiscale stability check")]
    UnstableDensityPoint { point: Vec<f64> },

    #[error("slot {slot} rejected: mass {mass:e} < bound {bound:e} after {halvings} halvings")]
    SlotRejected {
        slot: usize,
        mass: f64,
        bound: f64,
        halvings: usize,
    },

    #[error("super-critical exponent: gamma = {0} <= 0")]
    SuperCritical(f64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
