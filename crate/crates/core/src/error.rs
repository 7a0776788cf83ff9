use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: String,
        actual: String,
    },

    #[error("invalid argument `{name}`: {reason}")]
    InvalidArgument { name: &'static str, reason: String },

    #[error("non-finite state at step {step} (t = {t}); the step may be too large or the flow unstable")]
    NonFinite { step: usize, t: f64 },

    #[error("state norm {norm:.3e} exceeded the escape threshold at step {step} (t = {t})")]
    Escape { step: usize, t: f64, norm: f64 },

    #[error("matrix {what} is not positive definite (min eigenvalue {min_eig:.3e})")]
    NotPositiveDefinite { what: &'static str, min_eig: f64 },

    #[error("matrix {what} left the positive semidefinite cone (min eigenvalue {min_eig:.3e}) at t = {t}")]
    Indefinite {
        what: &'static str,
        min_eig: f64,
        t: f64,
    },

    #[error("{what} is not Hurwitz (spectral abscissa {abscissa:.3e})")]
    NotHurwitz { what: &'static str, abscissa: f64 },

    #[error("singular linear system in {context}")]
    Singular { context: &'static str },

    #[error("rank condition failed for {matrix}: sigma_min = {sigma_min:.3e}")]
    RankDeficient { matrix: &'static str, sigma_min: f64 },

    #[error("communication graph is disconnected")]
    Disconnected,

    #[error("no stabilizing initial gain found for the pair (A, B)")]
    NoStabilizingGain,

    #[error("{what} did not converge: residual {residual:.3e} > tolerance {tolerance:.3e}")]
    NotConverged {
        what: &'static str,
        residual: f64,
        tolerance: f64,
        history: Vec<(f64, f64)>,
    },
}

impl Error {
    pub(crate) fn dim(context: &'static str, expected: impl ToString, actual: impl ToString) -> Self {
        Error::Dimension {
            context,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub(crate) fn arg(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidArgument {
            name,
            reason: reason.into(),
        }
    }

    /// True for failures caused by the numerics rather than by malformed input.
    pub fn is_numerical(&self) -> bool {
        !matches!(
            self,
            Error::Dimension { .. } | Error::InvalidArgument { .. } | Error::Disconnected
        )
    }
}
