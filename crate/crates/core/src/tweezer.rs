//! Optical tweezer field, trap frequencies, zero-point amplitudes and the
//! equilibrium displacement of the trapped particle.

use std::f64::consts::PI;

use nalgebra::Vector3;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::consts::{C, EPS0, HBAR};
use crate::error::{Error, Result};
use crate::green::{im_g_free, GreensProvider};
use crate::quad::{principal_value, PvOptions};

/// Focused zeroth-order Gaussian beam, polarized along x and propagating along z.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TweezerParams {
    /// Field amplitude at the focus (V/m).
    pub e0: f64,
    /// Beam waist (m).
    pub waist: f64,
    /// Vacuum wavelength (m).
    pub wavelength: f64,
}

impl TweezerParams {
    pub fn new(e0: f64, waist: f64, wavelength: f64) -> Result<Self> {
        let p = TweezerParams { e0, waist, wavelength };
        p.validate()?;
        Ok(p)
    }

    /// Field amplitude from the beam power: `P = πW_t²ε₀cE₀²/4`.
    pub fn from_power(power: f64, waist: f64, wavelength: f64) -> Result<Self> {
        if !(power > 0.0) {
            return Err(Error::Validation(format!("laser power must be positive, got {power}")));
        }
        let e0 = (4.0 * power / (PI * waist * waist * EPS0 * C)).sqrt();
        Self::new(e0, waist, wavelength)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("e0", self.e0), ("waist", self.waist), ("wavelength", self.wavelength)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Validation(format!("tweezer {name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    pub fn omega0(&self) -> f64 {
        2.0 * PI * C / self.wavelength
    }

    pub fn k0(&self) -> f64 {
        2.0 * PI / self.wavelength
    }

    pub fn rayleigh_range(&self) -> f64 {
        PI * self.waist * self.waist / self.wavelength
    }
}

/// Point-dipole particle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParticleParams {
    /// Polarizability α (C·m²/V).
    pub alpha: f64,
    /// Mass (kg).
    pub mass: f64,
    /// Radius (m).
    pub radius: f64,
}

impl ParticleParams {
    pub fn new(alpha: f64, mass: f64, radius: f64) -> Result<Self> {
        let p = ParticleParams { alpha, mass, radius };
        p.validate()?;
        Ok(p)
    }

    /// Dielectric sphere: `α = 4πε₀R³(ε−1)/(ε+2)`, `M = (4/3)πR³ρ`.
    pub fn sphere(radius: f64, permittivity: f64, density: f64) -> Result<Self> {
        if !(permittivity > 1.0 && density > 0.0) {
            return Err(Error::Validation(format!(
                "sphere needs ε > 1 and ρ > 0, got ε = {permittivity}, ρ = {density}"
            )));
        }
        let v = 4.0 / 3.0 * PI * radius.powi(3);
        Self::new(3.0 * EPS0 * v * (permittivity - 1.0) / (permittivity + 2.0), density * v, radius)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("mass", self.mass), ("radius", self.radius)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Validation(format!("particle {name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// Point-dipole validity flag `k₀R < 1`.
    pub fn point_dipole_valid(&self, p: &TweezerParams) -> bool {
        p.k0() * self.radius < 1.0
    }
}

/// Anisotropic particle librating about the polarization axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LibrationalParams {
    /// Polarizability anisotropy Δα = α₃ − α₁ (C·m²/V).
    pub delta_alpha: f64,
    /// Moment of inertia (kg·m²).
    pub inertia: f64,
}

impl LibrationalParams {
    pub fn new(delta_alpha: f64, inertia: f64) -> Result<Self> {
        let p = LibrationalParams { delta_alpha, inertia };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta_alpha > 0.0) {
            return Err(Error::Validation(format!(
                "Δα must be positive (long axis along the polarization), got {}",
                self.delta_alpha
            )));
        }
        if !(self.inertia > 0.0) {
            return Err(Error::Validation(format!("moment of inertia must be positive, got {}", self.inertia)));
        }
        Ok(())
    }

    /// Zero-point angle `ξ₀ = √(ħ/(2IΩ))`.
    pub fn xi0(&self, omega: f64) -> Result<f64> {
        zero_point_motion(self.inertia, omega)
    }
}

/// A tweezer field profile. The Gaussian beam is the default; a closure can
/// stand in for scattering-corrected fields.
pub trait FieldProfile: Sync {
    fn amplitude(&self, r: &Vector3<f64>) -> Complex64;
}

impl FieldProfile for TweezerParams {
    fn amplitude(&self, r: &Vector3<f64>) -> Complex64 {
        gaussian_field(r, self)
    }
}

/// Wraps a closure as a [`FieldProfile`].
pub struct CustomField<F>(pub F);

impl<F: Fn(&Vector3<f64>) -> Complex64 + Sync> FieldProfile for CustomField<F> {
    fn amplitude(&self, r: &Vector3<f64>) -> Complex64 {
        (self.0)(r)
    }
}

/// Complex amplitude `ℰ_tw(r)` of the Gaussian tweezer.
///
/// ```
/// use nalgebra::Vector3;
/// use recoil::tweezer::{gaussian_field, TweezerParams};
/// let p = TweezerParams::new(1.0e7, 1.0e-6, 1.55e-6).unwrap();
/// let at_zr = gaussian_field(&Vector3::new(0.0, 0.0, p.rayleigh_range()), &p);
/// assert!((at_zr.norm() - 1.0e7 / 2f64.sqrt()).abs() < 1e-6);
/// ```
pub fn gaussian_field(r: &Vector3<f64>, p: &TweezerParams) -> Complex64 {
    let zr = p.rayleigh_range();
    let k0 = p.k0();
    let (x, y, z) = (r.x, r.y, r.z);
    let rho2 = x * x + y * y;
    let w2 = p.waist * p.waist * (1.0 + (z / zr).powi(2));
    let gouy = (z / zr).atan() - 0.5 * k0 * z * rho2 / (z * z + zr * zr);
    let amp = p.e0 * p.waist / w2.sqrt() * (-rho2 / w2).exp();
    Complex64::from_polar(amp, k0 * z - gouy)
}

/// Center-of-mass trap frequencies `(Ω_x, Ω_y, Ω_z)` in rad/s.
///
/// ```
/// use recoil::tweezer::{mechanical_frequencies, ParticleParams, TweezerParams};
/// let p = TweezerParams::new(1.0e7, 1.0e-6, 1.55e-6).unwrap();
/// let part = ParticleParams::new(1e-32, 3e-18, 70e-9).unwrap();
/// let [wx, wy, wz] = mechanical_frequencies(&part, &p);
/// assert_eq!(wx, wy);
/// let ratio = 1.55e-6 / (std::f64::consts::PI * 2f64.sqrt() * 1.0e-6);
/// assert!((wz / wx - ratio).abs() < 1e-12);
/// ```
pub fn mechanical_frequencies(part: &ParticleParams, p: &TweezerParams) -> [f64; 3] {
    let wx = (part.alpha * p.e0 * p.e0 / (part.mass * p.waist * p.waist)).sqrt();
    let wz = wx * p.wavelength / (PI * 2f64.sqrt() * p.waist);
    [wx, wx, wz]
}

/// Librational frequency `Ω = √(Δα/(2I))·|E₀|`.
pub fn librational_frequency(lp: &LibrationalParams, p: &TweezerParams) -> f64 {
    (lp.delta_alpha / (2.0 * lp.inertia)).sqrt() * p.e0.abs()
}

/// Zero-point amplitude `√(ħ/(2MΩ))`. Also gives ξ₀ with `M → I`.
///
/// ```
/// use recoil::tweezer::zero_point_motion;
/// let r0 = zero_point_motion(1.0, recoil::consts::HBAR / 2.0).unwrap();
/// assert!((r0 - 1.0).abs() < 1e-15);
/// assert!(zero_point_motion(1.0, 0.0).is_err());
/// ```
pub fn zero_point_motion(mass: f64, omega: f64) -> Result<f64> {
    if !(omega > 0.0) {
        return Err(Error::Domain(format!("frequency must be positive, got {omega}")));
    }
    if !(mass > 0.0) {
        return Err(Error::Domain(format!("mass must be positive, got {mass}")));
    }
    Ok((HBAR / (2.0 * mass * omega)).sqrt())
}

/// Options for the frequency integral defining the `O` tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuadratureOptions {
    /// Integration band as multiples of ω₀.
    pub band: (f64, f64),
    /// Finite-difference step in units of λ₀.
    pub step: f64,
    /// Remove the vacuum part of Im G from the principal value; the vacuum
    /// reactive self-interaction is already contained in the measured α.
    pub subtract_free_space: bool,
    /// Add the on-shell residue `iπω₀² Im G(ω₀)` of the retarded kernel
    /// (radiation reaction, i.e. the scattering force).
    pub include_resonant_term: bool,
    #[serde(skip)]
    pub pv: PvOptions,
}

impl Default for QuadratureOptions {
    fn default() -> Self {
        QuadratureOptions {
            band: (0.1, 10.0),
            step: 1e-3,
            subtract_free_space: true,
            include_resonant_term: true,
            pv: PvOptions::default(),
        }
    }
}

/// Lamb-Dicke threshold on `|R₀|` in units of λ₀.
pub const LAMB_DICKE_FRACTION: f64 = 0.1;

/// Equilibrium of the trapped particle in the presence of a structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumState {
    /// Equilibrium position R₀ (m).
    pub position: [f64; 3],
    /// Coherent field ⟨Ê(0)⟩ as (Re, Im) pairs per component (V/m).
    pub field: [(f64, f64); 3],
    /// `|R₀| < 0.1·λ₀`.
    pub lamb_dicke: bool,
    pub diagnostics: Option<EquilibriumDiagnostics>,
}

/// Intermediate quantities of [`equilibrium_shift`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumDiagnostics {
    /// `Re ∂_{z′}O_xx` at the origin (V²/m³).
    pub d_zp: f64,
    /// `Re ∂_z∂_{z′}O_xx` at the origin (V²/m⁴).
    pub d_z_zp: f64,
    /// `(E₀λ₀/πW_t²)²` (V²/m⁴).
    pub trap_term: f64,
    /// Largest number of grid doublings used by any principal value.
    pub pv_refinements: usize,
}

impl EquilibriumState {
    /// Particle at the focus with no coherent field.
    pub fn at_focus() -> Self {
        EquilibriumState { position: [0.0; 3], field: [(0.0, 0.0); 3], lamb_dicke: true, diagnostics: None }
    }

    pub fn r0(&self) -> Vector3<f64> {
        Vector3::from(self.position)
    }
}

/// Equilibrium displacement `R₀` and coherent field `⟨Ê(0)⟩`.
///
/// The tensor `O(r,r′) = αℰ(r)ℰ*(r′)K(r,r′)/(2πε₀c²)` uses the retarded kernel
/// `K = PV∫ω²Im G/(ω−ω₀)dω + iπω₀²Im G(ω₀)` (see [`QuadratureOptions`]);
/// force balance on the z axis gives
/// `R₀ = 2Re∂_{z′}O_xx / [(E₀λ₀/πW_t²)² − 2Re∂_z∂_{z′}O_xx]`.
pub fn equilibrium_shift(
    part: &ParticleParams,
    p: &TweezerParams,
    g: &dyn GreensProvider,
    quad: &QuadratureOptions,
) -> Result<EquilibriumState> {
    equilibrium_shift_with_field(part, p, p, g, quad)
}

/// [`equilibrium_shift`] with a user-supplied field profile.
pub fn equilibrium_shift_with_field(
    part: &ParticleParams,
    p: &TweezerParams,
    field: &dyn FieldProfile,
    g: &dyn GreensProvider,
    quad: &QuadratureOptions,
) -> Result<EquilibriumState> {
    part.validate()?;
    p.validate()?;
    let w0 = p.omega0();
    let (lo, hi) = (quad.band.0 * w0, quad.band.1 * w0);
    let (blo, bhi) = g.band();
    if !(lo > 0.0 && lo < w0 && hi > w0) {
        return Err(Error::Validation(format!("quadrature band must bracket ω₀, got {:?} × ω₀", quad.band)));
    }
    if lo < blo || hi > bhi {
        return Err(Error::Domain(format!(
            "quadrature band [{lo:e}, {hi:e}] exceeds provider band [{blo:e}, {bhi:e}]"
        )));
    }
    let pre = part.alpha / (2.0 * PI * EPS0 * C * C);
    let features = g.resonances();
    let subtract = quad.subtract_free_space && g.includes_vacuum();
    let mut refinements = 0usize;

    let mut kernel = |r: &Vector3<f64>, rp: &Vector3<f64>, comp: Option<usize>| -> Result<Complex64> {
        let pick = |w: f64| -> Result<f64> {
            let v = match comp {
                None => g.im_g_xx(r, rp, w)?,
                Some(j) => g.im_g(r, rp, w)?[(j, 0)],
            };
            Ok(v)
        };
        let free = |w: f64| match comp {
            None => im_g_free(r, rp, w)[(0, 0)],
            Some(j) => im_g_free(r, rp, w)[(j, 0)],
        };
        // errors from the provider are captured and re-raised after the integral
        let failure = std::cell::RefCell::new(None);
        let integrand = |w: f64| match pick(w) {
            Ok(v) => {
                let s = if subtract { v - free(w) } else { v };
                w * w * s
            }
            Err(e) => {
                failure.borrow_mut().get_or_insert(e);
                0.0
            }
        };
        let est = principal_value(integrand, w0, lo, hi, &features, &quad.pv);
        if let Some(e) = failure.into_inner() {
            return Err(e);
        }
        let est = est?;
        refinements = refinements.max(est.refinements);
        let resonant = if quad.include_resonant_term { PI * w0 * w0 * pick(w0)? } else { 0.0 };
        Ok(Complex64::new(est.value, resonant))
    };

    let ez = Vector3::z();
    let o = Vector3::zeros();
    let mut o_tensor = |r: &Vector3<f64>, rp: &Vector3<f64>| -> Result<Complex64> {
        let k = kernel(r, rp, None)?;
        Ok(field.amplitude(r) * field.amplitude(rp).conj() * k * pre)
    };

    let h = quad.step * p.wavelength;
    let mut d1 =
        |h: f64| -> Result<Complex64> { Ok((o_tensor(&o, &(ez * h))? - o_tensor(&o, &(-ez * h))?) / (2.0 * h)) };
    let d_zp = (d1(0.5 * h)? * 4.0 - d1(h)?) / 3.0;
    let mut o_tensor = |r: &Vector3<f64>, rp: &Vector3<f64>| -> Result<Complex64> {
        let k = kernel(r, rp, None)?;
        Ok(field.amplitude(r) * field.amplitude(rp).conj() * k * pre)
    };
    let mut d2 = |h: f64| -> Result<Complex64> {
        let (a, b) = (ez * h, -ez * h);
        Ok((o_tensor(&a, &a)? - o_tensor(&a, &b)? - o_tensor(&b, &a)? + o_tensor(&b, &b)?) / (4.0 * h * h))
    };
    let d_z_zp = (d2(0.5 * h)? * 4.0 - d2(h)?) / 3.0;

    let trap = (p.e0 / p.rayleigh_range()).powi(2);
    let denom = trap - 2.0 * d_z_zp.re;
    if !(denom > 0.0) {
        return Err(Error::Numeric(format!(
            "no stable equilibrium: trap term {trap:e} − 2Re∂z∂z′O {:e} is not positive",
            2.0 * d_z_zp.re
        )));
    }
    let z0 = 2.0 * d_zp.re / denom;

    // ⟨Ê(0)⟩ = [O_{·x}(0,0)/|ℰ(0)|²]·Re[(1 + 2|R₀|∂_z)ℰ*](0)
    let mut column = [Complex64::new(0.0, 0.0); 3];
    for (j, c) in column.iter_mut().enumerate() {
        *c = kernel(&o, &o, Some(j))? * pre;
    }
    let dfield = (field.amplitude(&(ez * h)) - field.amplitude(&(-ez * h))) / (2.0 * h);
    let drive = (field.amplitude(&o).conj() + dfield.conj() * (2.0 * z0.abs())).re;
    let coh = column.map(|c| {
        let v = c * drive;
        (v.re, v.im)
    });

    Ok(EquilibriumState {
        position: [0.0, 0.0, z0],
        field: coh,
        lamb_dicke: z0.abs() < LAMB_DICKE_FRACTION * p.wavelength,
        diagnostics: Some(EquilibriumDiagnostics {
            d_zp: d_zp.re,
            d_z_zp: d_z_zp.re,
            trap_term: trap,
            pv_refinements: refinements,
        }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::green::{FreeSpace, NullProvider};

    pub(crate) fn typical() -> (TweezerParams, ParticleParams) {
        let p = TweezerParams::from_power(0.4, 1.0e-6, 1.5568e-6).unwrap();
        let part = ParticleParams::sphere(71.5e-9, 2.07, 2200.0).unwrap();
        (p, part)
    }

    #[test]
    fn focus_and_waist_values() {
        let (p, _) = typical();
        let f = gaussian_field(&Vector3::zeros(), &p);
        assert!((f - Complex64::new(p.e0, 0.0)).norm() < 1e-9 * p.e0);
        let w = gaussian_field(&Vector3::new(p.waist, 0.0, 0.0), &p);
        assert!((w.norm() - p.e0 / std::f64::consts::E).abs() < 1e-9 * p.e0);
        // on axis at z_R the phase is k₀z_R − π/4
        let zr = p.rayleigh_range();
        let a = gaussian_field(&Vector3::new(0.0, 0.0, zr), &p);
        let expect = (p.k0() * zr - PI / 4.0).rem_euclid(2.0 * PI);
        let got = a.arg().rem_euclid(2.0 * PI);
        assert!((got - expect).abs() < 1e-9);
    }

    #[test]
    fn intensity_gradient_vanishes_at_focus() {
        let (p, _) = typical();
        let h = 1e-3 * p.wavelength;
        for ax in crate::Axis::ALL {
            let e = ax.unit() * h;
            let grad = (gaussian_field(&e, &p).norm_sqr() - gaussian_field(&-e, &p).norm_sqr()) / (2.0 * h);
            assert!(grad.abs() < 1e-8 * p.e0 * p.e0 * p.k0());
        }
    }

    #[test]
    fn frequencies_scale_with_field() {
        let (p, part) = typical();
        let a = mechanical_frequencies(&part, &p);
        let q = TweezerParams { e0: 2.0 * p.e0, ..p };
        let b = mechanical_frequencies(&part, &q);
        for i in 0..3 {
            assert!((b[i] / a[i] - 2.0).abs() < 1e-14);
        }
    }

    #[test]
    fn libration_scalings() {
        let (p, _) = typical();
        let lp = LibrationalParams::new(1e-33, 1e-32).unwrap();
        let w = librational_frequency(&lp, &p);
        let w4 = librational_frequency(&LibrationalParams { delta_alpha: 4e-33, ..lp }, &p);
        assert!((w4 / w - 2.0).abs() < 1e-14);
        assert_eq!(librational_frequency(&lp, &TweezerParams { e0: 0.0, ..p }), 0.0);
        let xi = lp.xi0(w).unwrap();
        assert!((xi * xi * 2.0 * lp.inertia * w / HBAR - 1.0).abs() < 1e-14);
    }

    #[test]
    fn null_provider_gives_no_shift() {
        let (p, part) = typical();
        let eq = equilibrium_shift(&part, &p, &NullProvider, &QuadratureOptions::default()).unwrap();
        assert_eq!(eq.position, [0.0; 3]);
        assert_eq!(eq.field, [(0.0, 0.0); 3]);
        assert!(eq.lamb_dicke);
    }

    #[test]
    fn free_space_pushes_downstream() {
        let (p, part) = typical();
        let eq = equilibrium_shift(&part, &p, &FreeSpace, &QuadratureOptions::default()).unwrap();
        assert!(eq.position[2] > 0.0);
        assert_eq!(eq.position[0], 0.0);
        assert!(eq.lamb_dicke);
        // radiation-reaction field i·αk³E₀/(12πε₀) along x
        let k = p.k0();
        let expect = part.alpha * k.powi(3) * p.e0 / (12.0 * PI * EPS0);
        assert!(eq.field[0].0.abs() < 1e-9 * expect);
        assert!((eq.field[0].1 / expect - 1.0).abs() < 1e-6);
    }

    #[test]
    fn invalid_band_rejected() {
        let (p, part) = typical();
        let q = QuadratureOptions { band: (2.0, 10.0), ..Default::default() };
        assert!(equilibrium_shift(&part, &p, &FreeSpace, &q).is_err());
    }
}
