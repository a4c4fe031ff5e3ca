use nalgebra::Matrix4;
use num_complex::Complex64;
use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("{what} = {value} is outside its domain [{lo}, {hi}]")]
    Domain {
        what: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("parameter {name} = {value} violates its box bound [{lo}, {hi}]")]
    ParameterBounds {
        name: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error(
        "QBER {q} is infeasible for this alignment: the inherent bounds are \
         q_min = {q_min:.6}, q_max = {q_max:.6}"
    )]
    InfeasibleQber { q: f64, q_min: f64, q_max: f64 },

    #[error("equality constraint {name} violated with residual {residual:e}")]
    ConstraintViolation { name: &'static str, residual: f64 },

    #[error("metric is not positive semidefinite: smallest eigenvalue {min_eigenvalue:e}")]
    NotPositiveSemidefinite { min_eigenvalue: f64 },

    #[error("numerical failure: {message}")]
    Numerical {
        message: String,
        gamma: Box<Matrix4<Complex64>>,
    },

    #[error(
        "threshold bisection has no sign change on [{lo}, {hi}] \
         (Q_AE - q = {f_lo:e} and {f_hi:e})"
    )]
    BracketFailure {
        lo: f64,
        hi: f64,
        f_lo: f64,
        f_hi: f64,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("metric parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
}

pub(crate) fn check_probability(what: &'static str, p: f64) -> Result<f64> {
    const SLACK: f64 = 1e-12;
    if !p.is_finite() || !(-SLACK..=1.0 + SLACK).contains(&p) {
        return Err(Error::Domain {
            what,
            value: p,
            lo: 0.0,
            hi: 1.0,
        });
    }
    Ok(p.clamp(0.0, 1.0))
}
