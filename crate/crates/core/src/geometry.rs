//! Information radiation patterns and geometric recoil suppression.
//!
//! Mirrors of half-angle `theta_m` about the cavity axis (y) block two caps of
//! the emission sphere. The recoil rate that survives is the fraction of the
//! information radiation pattern that escapes through the open solid angle.
//!
//! ```
//! use recoil::geometry::{gamma_geometric_closed, PatternKind};
//! let r = gamma_geometric_closed(60f64.to_radians(), PatternKind::ComY).unwrap();
//! assert!((r - 11.5 / 128.0).abs() < 1e-12);
//! ```

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad::{integrate_adaptive, AdaptiveOptions};

/// Centre-of-mass pattern for motion along y, in polar angle `theta` from z and
/// azimuth `phi` from x.
pub fn irp_com_y(theta: f64, phi: f64) -> f64 {
    let (st, sp, cp) = (theta.sin(), phi.sin(), phi.cos());
    sp * sp * st * st * (1.0 - cp * cp * st * st)
}

/// Librational pattern for rotation about z.
pub fn irp_libr_z(theta: f64) -> f64 {
    let s = theta.sin();
    s * s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PatternKind {
    ComY,
    LibrationZ,
    User,
}

impl fmt::Display for PatternKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PatternKind::ComY => "com-y",
            PatternKind::LibrationZ => "libration-z",
            PatternKind::User => "user",
        })
    }
}

impl FromStr for PatternKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "com-y" | "com" => Ok(PatternKind::ComY),
            "libration-z" | "libration" | "libr" => Ok(PatternKind::LibrationZ),
            "user" => Ok(PatternKind::User),
            other => Err(Error::Usage(format!(
                "unknown radiation pattern kind `{other}` (expected com-y, libration-z or user)"
            ))),
        }
    }
}

type Evaluator = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// A nonnegative angular pattern `Phi(theta, phi)`. Normalization is irrelevant
/// to the suppression ratio.
#[derive(Clone)]
pub struct RadiationPattern {
    kind: PatternKind,
    eval: Evaluator,
}

impl fmt::Debug for RadiationPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RadiationPattern").field("kind", &self.kind).finish()
    }
}

impl RadiationPattern {
    pub fn com_y() -> Self {
        RadiationPattern { kind: PatternKind::ComY, eval: Arc::new(irp_com_y) }
    }

    pub fn libration_z() -> Self {
        RadiationPattern { kind: PatternKind::LibrationZ, eval: Arc::new(|t, _| irp_libr_z(t)) }
    }

    /// Wraps a user pattern. Negative values are reported by [`gamma_geometric`].
    pub fn user<F>(f: F) -> Self
    where
        F: Fn(f64, f64) -> f64 + Send + Sync + 'static,
    {
        RadiationPattern { kind: PatternKind::User, eval: Arc::new(f) }
    }

    /// Built-in pattern for `kind`; `User` has no built-in evaluator.
    pub fn builtin(kind: PatternKind) -> Result<Self> {
        match kind {
            PatternKind::ComY => Ok(Self::com_y()),
            PatternKind::LibrationZ => Ok(Self::libration_z()),
            PatternKind::User => Err(Error::Usage("user patterns must be supplied as a closure".into())),
        }
    }

    pub fn kind(&self) -> PatternKind {
        self.kind
    }

    pub fn eval(&self, theta: f64, phi: f64) -> f64 {
        (self.eval)(theta, phi)
    }
}

fn check_angle(theta_m: f64) -> Result<()> {
    if !(0.0..=FRAC_PI_2).contains(&theta_m) {
        return Err(Error::Domain(format!("mirror half-angle {theta_m} rad outside [0, pi/2]")));
    }
    Ok(())
}

/// Integral of the pattern over the band `theta_m <= Theta <= pi - theta_m`,
/// where `Theta` is measured from the y axis and `Psi` winds around it.
fn band_integral(p: &RadiationPattern, theta_m: f64, opts: AdaptiveOptions) -> Result<f64> {
    let mut failure = None;
    let outer = integrate_adaptive(
        |big_theta| {
            let (s, c) = big_theta.sin_cos();
            let inner = integrate_adaptive(
                |psi| {
                    let (x, z) = (s * psi.cos(), s * psi.sin());
                    let theta = z.clamp(-1.0, 1.0).acos();
                    let phi = c.atan2(x);
                    let v = p.eval(theta, phi);
                    if v < 0.0 && failure.is_none() {
                        failure = Some(Error::Domain(format!(
                            "radiation pattern negative ({v:e}) at theta = {theta}, phi = {phi}"
                        )));
                    }
                    v
                },
                0.0,
                2.0 * PI,
                opts,
            );
            match inner {
                Ok(e) => e.value * s,
                Err(e) => {
                    failure.get_or_insert(e);
                    f64::NAN
                }
            }
        },
        theta_m,
        PI - theta_m,
        opts,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(outer?.value)
}

/// Quadrature options used by [`gamma_geometric`] when none are given.
pub fn default_quad() -> AdaptiveOptions {
    AdaptiveOptions { abs_tol: 1e-12, rel_tol: 1e-10, max_intervals: 500 }
}

/// Fraction of the pattern escaping between two caps of half-angle `theta_m`
/// about the ±y axis, by two-dimensional adaptive quadrature.
pub fn gamma_geometric(theta_m: f64, pattern: &RadiationPattern, opts: AdaptiveOptions) -> Result<f64> {
    check_angle(theta_m)?;
    if theta_m == FRAC_PI_2 {
        return Ok(0.0);
    }
    let full = band_integral(pattern, 0.0, opts)?;
    if full <= 0.0 {
        return Err(Error::Numeric("radiation pattern integrates to zero".into()));
    }
    if theta_m == 0.0 {
        return Ok(1.0);
    }
    Ok(band_integral(pattern, theta_m, opts)? / full)
}

/// Closed-form suppression ratio for the built-in patterns.
pub fn gamma_geometric_closed(theta_m: f64, kind: PatternKind) -> Result<f64> {
    check_angle(theta_m)?;
    let c = theta_m.cos();
    match kind {
        PatternKind::ComY => Ok(c.powi(3) * (3.0 * (2.0 * theta_m).cos() + 13.0) / 16.0),
        PatternKind::LibrationZ => Ok((15.0 * c + (3.0 * theta_m).cos()) / 16.0),
        PatternKind::User => Err(Error::Usage("no closed form for user-supplied patterns; use gamma_geometric".into())),
    }
}

/// One row of the suppression table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioRow {
    pub theta_m_deg: f64,
    pub ratio_com: f64,
    pub ratio_libr: f64,
}

/// Closed-form ratios on `points` evenly spaced angles from 0 to 90 degrees.
pub fn ratio_table(points: usize) -> Result<Vec<RatioRow>> {
    if points < 2 {
        return Err(Error::Domain("ratio table needs at least two angles".into()));
    }
    (0..points)
        .map(|i| {
            let deg = 90.0 * i as f64 / (points - 1) as f64;
            let t = deg.to_radians().min(FRAC_PI_2);
            Ok(RatioRow {
                theta_m_deg: deg,
                ratio_com: gamma_geometric_closed(t, PatternKind::ComY)?,
                ratio_libr: gamma_geometric_closed(t, PatternKind::LibrationZ)?,
            })
        })
        .collect()
}

/// Writes `theta_m_deg,ratio_com,ratio_libr` rows.
pub fn write_ratio_table<W: std::io::Write>(out: W, rows: &[RatioRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(|e| Error::Io(e.into()))?;
    }
    w.flush()?;
    Ok(())
}
