use nalgebra::{Matrix3, Vector3};
use std::f64::consts::PI;

use super::GreensProvider;
use crate::consts::C;
use crate::error::Result;

/// Analytic vacuum provider.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FreeSpace;

impl GreensProvider for FreeSpace {
    fn im_g(&self, r: &Vector3<f64>, rp: &Vector3<f64>, omega: f64) -> Result<Matrix3<f64>> {
        Ok(im_g_free(r, rp, omega))
    }

    fn descriptor(&self) -> String {
        "free-space".into()
    }
}

/// Imaginary part of the vacuum dyadic Green's tensor (units 1/m).
///
/// `Im G₀ = (k/4π)[A(x)𝟙 + B(x) n̂n̂]` with `x = k|r − r′|`,
/// `A = (2j₀ − j₂)/3` and `B = j₂`.
///
/// ```
/// use nalgebra::Vector3;
/// use recoil::green::im_g_free;
/// let w = 1.2e15;
/// let g = im_g_free(&Vector3::zeros(), &Vector3::zeros(), w);
/// let expect = w / (6.0 * std::f64::consts::PI * recoil::consts::C);
/// assert!((g[(0, 0)] / expect - 1.0).abs() < 1e-14);
/// assert_eq!(g[(0, 1)], 0.0);
/// ```
pub fn im_g_free(r: &Vector3<f64>, rp: &Vector3<f64>, omega: f64) -> Matrix3<f64> {
    let k = omega / C;
    free_from_separation(&(r - rp), k)
}

pub(crate) fn free_from_separation(d: &Vector3<f64>, k: f64) -> Matrix3<f64> {
    let rho = d.norm();
    let x = k * rho;
    let (a, b_over_x2) = ab(x);
    let kd = d * k;
    let pre = k / (4.0 * PI);
    Matrix3::from_diagonal_element(pre * a) + kd * kd.transpose() * (pre * b_over_x2)
}

/// `xx` entry only, for the hot loops of the image series.
pub(crate) fn free_xx_from_separation(d: &Vector3<f64>, k: f64) -> f64 {
    let x = k * d.norm();
    let (a, b_over_x2) = ab(x);
    k / (4.0 * PI) * (a + b_over_x2 * (k * d.x).powi(2))
}

/// Returns `(A(x), B(x)/x²)`.
fn ab(x: f64) -> (f64, f64) {
    if x < 0.5 {
        let j0 = bessel_series(x, 0);
        let j2_over_x2 = bessel_series(x, 2);
        let j2 = j2_over_x2 * x * x;
        ((2.0 * j0 - j2) / 3.0, j2_over_x2)
    } else {
        let (s, c) = x.sin_cos();
        let j0 = s / x;
        let j2 = (3.0 / (x * x) - 1.0) * s / x - 3.0 * c / (x * x);
        ((2.0 * j0 - j2) / 3.0, j2 / (x * x))
    }
}

/// `j_n(x)/xⁿ` by its power series; accurate to machine precision for x < 0.5.
fn bessel_series(x: f64, n: i32) -> f64 {
    let y = -0.5 * x * x;
    let mut dfact = 1.0;
    for m in (1..=(2 * n + 1)).step_by(2) {
        dfact *= m as f64;
    }
    let mut term = 1.0 / dfact;
    let mut sum = term;
    for k in 1..12 {
        term *= y / (k as f64 * (2 * n + 2 * k + 1) as f64);
        sum += term;
    }
    sum
}
