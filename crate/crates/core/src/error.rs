use std::fmt;

/// Errors raised by the library. Each variant corresponds to one failure class.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("weighting error: {0}")]
    Weighting(String),
    #[error("fit did not converge: {message} (best residual {best_residual:.3e})")]
    Fit { message: String, best_residual: f64 },
    #[error("model order selection failed: no N <= {n_max} reached tol {tol:.1e} (residuals {})", Trace(.trace))]
    Selection { n_max: usize, tol: f64, trace: Vec<f64> },
    #[error("reduction refused, scale separation violated: {0}")]
    ScaleSeparation(String),
    #[error("structural error: {0}")]
    Structural(String),
    #[error("instability: {0}")]
    Instability(String),
    #[error("stiffness: {0}; use steady_state for long horizons")]
    Stiffness(String),
    #[error("resolution error: {0}")]
    Resolution(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

struct Trace<'a>(&'a [f64]);

impl fmt::Display for Trace<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, r) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "N={}: {:.3e}", i + 1, r)?;
        }
        Ok(())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
