//! Independent oracles shared by the integration tests. Nothing here calls the
//! library routine it is used to check.

#![allow(dead_code)]

use std::f64::consts::PI;

use num_complex::Complex64;
use recoil::spectral::{MotionKind, SpectralDensity, SpectralMeta};
use recoil::Axis;

pub const C: f64 = 299_792_458.0;
pub const EPS0: f64 = 8.854_187_812_8e-12;

/// `|E|²` of a paraxial Gaussian beam, written out from the textbook profile.
pub fn gaussian_intensity(e0: f64, waist: f64, wavelength: f64, x: f64, y: f64, z: f64) -> f64 {
    let zr = PI * waist * waist / wavelength;
    let w2 = waist * waist * (1.0 + (z / zr).powi(2));
    e0 * e0 * waist * waist / w2 * (-2.0 * (x * x + y * y) / w2).exp()
}

/// On-axis phase `k z − atan(z/z_R)`.
pub fn gaussian_axial_phase(waist: f64, wavelength: f64, z: f64) -> f64 {
    let zr = PI * waist * waist / wavelength;
    2.0 * PI / wavelength * z - (z / zr).atan()
}

/// `Ω_y = √(U_yy/M)` with `U = −(α/4)|E|²`, by a fourth-order five-point stencil.
pub fn hessian_trap_frequency_y(alpha: f64, mass: f64, e0: f64, waist: f64, wavelength: f64) -> f64 {
    let u = |y: f64| -0.25 * alpha * gaussian_intensity(e0, waist, wavelength, 0.0, y, 0.0);
    let h = 1e-2 * waist;
    let d2 = (-u(2.0 * h) + 16.0 * u(h) - 30.0 * u(0.0) + 16.0 * u(-h) - u(-2.0 * h)) / (12.0 * h * h);
    (d2 / mass).sqrt()
}

/// Full axial force on a point dipole in a Gaussian beam in free space:
/// gradient force plus radiation pressure from the radiative part of the
/// polarizability, `Im α_eff = α²k³/(6πε₀)`.
pub fn free_space_axial_force(alpha: f64, e0: f64, waist: f64, wavelength: f64, z: f64) -> f64 {
    let k = 2.0 * PI / wavelength;
    let h = 1e-4 * wavelength;
    let i = |z: f64| gaussian_intensity(e0, waist, wavelength, 0.0, 0.0, z);
    let phi = |z: f64| gaussian_axial_phase(waist, wavelength, z);
    let grad = 0.25 * alpha * (i(z + h) - i(z - h)) / (2.0 * h);
    let dphi = (phi(z + h) - phi(z - h)) / (2.0 * h);
    let scat = 0.5 * alpha * alpha * k.powi(3) / (6.0 * PI * EPS0) * i(z) * dphi;
    grad + scat
}

/// Axial force in the Lamb-Dicke model that defines the equilibrium shift:
/// harmonic trap stiffness from a finite-difference Hessian of `|E|²`, plus the
/// radiation-reaction force `(α²k²/2ε₀)·Im G₀(0,0)·|E₀|²·∂_zφ` evaluated at the
/// focus, with `Im G₀(0,0)` from angular quadrature.
pub fn free_space_axial_force_lamb_dicke(alpha: f64, e0: f64, waist: f64, wavelength: f64) -> impl Fn(f64) -> f64 {
    let k = 2.0 * PI / wavelength;
    let h = 1e-3 * PI * waist * waist / wavelength;
    let i = |z: f64| gaussian_intensity(e0, waist, wavelength, 0.0, 0.0, z);
    let i2 = (-i(2.0 * h) + 16.0 * i(h) - 30.0 * i(0.0) + 16.0 * i(-h) - i(-2.0 * h)) / (12.0 * h * h);
    let phi = |z: f64| gaussian_axial_phase(waist, wavelength, z);
    let dphi = (phi(h) - phi(-h)) / (2.0 * h);
    let g0 = im_g_free_coincident_by_angles(k, 400);
    let push = alpha * alpha * k * k / (2.0 * EPS0) * g0 * i(0.0) * dphi;
    move |z| 0.25 * alpha * i2 * z + push
}

/// Bisection root of `f` on a sign-changing bracket.
pub fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let mut flo = f(lo);
    assert!(flo * f(hi) <= 0.0, "root not bracketed");
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if fm * flo <= 0.0 {
            hi = mid;
        } else {
            lo = mid;
            flo = fm;
        }
    }
    0.5 * (lo + hi)
}

/// Model spectral density of two coupled lossy modes, inverting the 2×2
/// matrix `Λ − iκ/2 − δ` by Cramer's rule.
pub fn jmod_two_mode(g: [f64; 2], kappa: [f64; 2], lambda: [[f64; 2]; 2], delta: f64) -> f64 {
    let i = Complex64::i();
    let a = lambda[0][0] - i * kappa[0] / 2.0 - delta;
    let d = lambda[1][1] - i * kappa[1] / 2.0 - delta;
    let b = Complex64::from(lambda[0][1]);
    let det = a * d - b * b;
    let q = (g[0] * g[0] * d - 2.0 * g[0] * g[1] * b + g[1] * g[1] * a) / det;
    q.im / PI
}

/// Sum of Lorentzians for uncoupled modes.
pub fn lorentzian_sum(g: &[f64], kappa: &[f64], centers: &[f64], delta: f64) -> f64 {
    g.iter()
        .zip(kappa)
        .zip(centers)
        .map(|((g, k), c)| g * g * (k / 2.0) / (PI * ((delta - c).powi(2) + k * k / 4.0)))
        .sum()
}

/// Far-field free-space `Im G_xx(r, r)` at wavenumber `k` by integrating the
/// transverse projector over the sphere: `k/(16π²)∫(1 − n_x²)dΩ = k/(6π)`.
pub fn im_g_free_coincident_by_angles(k: f64, n: usize) -> f64 {
    let mut s = 0.0;
    for i in 0..n {
        let t = PI * (i as f64 + 0.5) / n as f64;
        for j in 0..2 * n {
            let p = PI * (j as f64 + 0.5) / n as f64;
            let nx = t.sin() * p.cos();
            s += (1.0 - nx * nx) * t.sin();
        }
    }
    k / (16.0 * PI * PI) * s * (PI / n as f64) * (PI / n as f64)
}

/// `SpectralDensity` sampling `f` on a uniform detuning grid.
pub fn sampled_density(
    omega0: f64,
    big_omega: f64,
    lo: f64,
    hi: f64,
    points: usize,
    f: impl Fn(f64) -> f64,
) -> SpectralDensity {
    let dets: Vec<f64> = (0..points).map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64).collect();
    let meta = SpectralMeta {
        motion: MotionKind::CenterOfMass,
        axis: Axis::Y,
        provider: "synthetic".into(),
        step_m: 0.0,
        r0_m: [0.0; 3],
        omega0,
        mechanical_frequency: big_omega,
        gamma_fs: None,
        config_hash: None,
        tool_version: None,
    };
    SpectralDensity::new(dets.iter().map(|d| omega0 + d).collect(), dets.iter().map(|&d| f(d)).collect(), meta)
        .expect("valid synthetic density")
}
