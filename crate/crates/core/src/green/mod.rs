//! Providers of the imaginary part of the dyadic Green's tensor, `Im G(r, r′, ω)`.
//!
//! All providers are immutable after construction and safe to share across
//! threads.

use nalgebra::{Matrix3, Vector3};

use crate::error::Result;

mod free;
mod mirror;
mod modal;
mod tabulated;

pub use free::{im_g_free, FreeSpace};
pub use mirror::{im_g_mirror, ImageMirror, MirrorGeometry, IMAGE_TOL, MAX_IMAGE_ORDER};
pub use modal::{ModalCavity, ModeParity, QuasiNormalMode};
pub use tabulated::{load_tabulated, StencilSpec, TabulatedGreens, TabulatedSidecar};

/// Evaluator of `Im G(r, r′, ω)` in units of 1/m.
pub trait GreensProvider: Send + Sync {
    /// Full 3×3 tensor.
    fn im_g(&self, r: &Vector3<f64>, rp: &Vector3<f64>, omega: f64) -> Result<Matrix3<f64>>;

    /// The `xx` entry; providers may override with a cheaper path.
    fn im_g_xx(&self, r: &Vector3<f64>, rp: &Vector3<f64>, omega: f64) -> Result<f64> {
        Ok(self.im_g(r, rp, omega)?[(0, 0)])
    }

    /// Frequency band on which the provider is valid (rad/s).
    fn band(&self) -> (f64, f64) {
        (0.0, f64::INFINITY)
    }

    /// Human-readable geometry descriptor, used as the provider id in outputs.
    fn descriptor(&self) -> String;

    /// Whether `Im G` contains the vacuum term `Im G₀`.
    fn includes_vacuum(&self) -> bool {
        true
    }

    /// Narrow spectral features as (center, width) pairs in rad/s. Quadrature
    /// over ω refines its grid around them.
    fn resonances(&self) -> Vec<(f64, f64)> {
        Vec::new()
    }
}

/// A provider with `Im G ≡ 0`, useful as a reference case.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct NullProvider;

impl GreensProvider for NullProvider {
    fn im_g(&self, _: &Vector3<f64>, _: &Vector3<f64>, _: f64) -> Result<Matrix3<f64>> {
        Ok(Matrix3::zeros())
    }

    fn descriptor(&self) -> String {
        "null".into()
    }

    fn includes_vacuum(&self) -> bool {
        false
    }
}
