//! Optomechanical spectral densities `J_i(ω)` for center-of-mass and
//! librational motion.

use std::f64::consts::PI;
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::consts::{C, EPS0, HBAR};
use crate::error::{Error, Result};
use crate::green::{FreeSpace, GreensProvider};
use crate::tweezer::{
    librational_frequency, mechanical_frequencies, zero_point_motion, EquilibriumState, FieldProfile,
    LibrationalParams, ParticleParams, TweezerParams,
};
use crate::Axis;

/// Which degree of freedom a spectral density describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionKind {
    CenterOfMass,
    Libration,
}

/// Metadata carried with every spectral density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralMeta {
    pub motion: MotionKind,
    pub axis: Axis,
    /// Provider descriptor.
    pub provider: String,
    /// Finite-difference step (m); zero for librational densities.
    pub step_m: f64,
    /// Point at which the density was evaluated (m).
    pub r0_m: [f64; 3],
    /// Laser frequency ω₀ (rad/s); the rotating-frame origin.
    pub omega0: f64,
    /// Mechanical (or librational) frequency Ω (rad/s).
    pub mechanical_frequency: f64,
    /// Free-space recoil rate 2πJ_fs(ω₀) for the same motion, when computed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_fs: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_version: Option<String>,
}

/// `J(ω)` sampled on a strictly increasing grid of absolute frequencies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralDensity {
    pub omegas: Vec<f64>,
    pub values: Vec<f64>,
    pub meta: SpectralMeta,
}

/// Tolerance on negative samples relative to the maximum.
pub const NEGATIVITY_TOL: f64 = 1e-12;

impl SpectralDensity {
    pub fn new(omegas: Vec<f64>, values: Vec<f64>, meta: SpectralMeta) -> Result<Self> {
        let s = SpectralDensity { omegas, values, meta };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        validate_grid(&self.omegas)?;
        if self.values.len() != self.omegas.len() {
            return Err(Error::Validation(format!(
                "{} values for {} frequencies",
                self.values.len(),
                self.omegas.len()
            )));
        }
        let max = self.values.iter().cloned().fold(0.0, f64::max);
        if let Some((i, v)) =
            self.values.iter().enumerate().find(|(_, v)| !v.is_finite() || **v < -NEGATIVITY_TOL * max)
        {
            return Err(Error::Validation(format!("J({:e}) = {v:e} is negative or non-finite", self.omegas[i])));
        }
        Ok(())
    }

    /// Detunings `ω − ω₀`.
    pub fn detunings(&self) -> Vec<f64> {
        self.omegas.iter().map(|w| w - self.meta.omega0).collect()
    }

    /// Linear interpolation of J; out-of-grid queries clamp to the edge values.
    pub fn interpolate(&self, omega: f64) -> f64 {
        let w = &self.omegas;
        let n = w.len();
        if omega <= w[0] {
            return self.values[0];
        }
        if omega >= w[n - 1] {
            return self.values[n - 1];
        }
        let i = w.partition_point(|x| *x <= omega) - 1;
        let t = (omega - w[i]) / (w[i + 1] - w[i]);
        self.values[i] * (1.0 - t) + self.values[i + 1] * t
    }

    /// Writes `omega_rad_s,J_rad_s` CSV plus a `.json` metadata sidecar.
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = File::create(path)?;
        writeln!(f, "omega_rad_s,J_rad_s")?;
        for (w, j) in self.omegas.iter().zip(&self.values) {
            writeln!(f, "{w:e},{j:e}")?;
        }
        let mut s = File::create(sidecar(path))?;
        serde_json::to_writer_pretty(&mut s, &self.meta).map_err(|e| Error::Io(std::io::Error::other(e)))?;
        writeln!(s)?;
        Ok(())
    }

    /// Reads a CSV written by [`SpectralDensity::write`] and its sidecar.
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.split(',').map(str::trim).eq(["omega_rad_s", "J_rad_s"]) => {}
            _ => return Err(Error::Parse(format!("{}: line 1: expected header omega_rad_s,J_rad_s", path.display()))),
        }
        let mut omegas = Vec::new();
        let mut values = Vec::new();
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            if cols.len() != 2 {
                return Err(Error::Parse(format!(
                    "{}: line {}: expected 2 columns, found {}",
                    path.display(),
                    i + 1,
                    cols.len()
                )));
            }
            let parse = |c: usize| {
                cols[c]
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("{}: line {}, column {}: {e}", path.display(), i + 1, c + 1)))
            };
            omegas.push(parse(0)?);
            values.push(parse(1)?);
        }
        let side = sidecar(path);
        let meta: SpectralMeta = serde_json::from_str(&std::fs::read_to_string(&side)?)
            .map_err(|e| Error::Parse(format!("{}: {e}", side.display())))?;
        SpectralDensity::new(omegas, values, meta)
    }
}

fn sidecar(path: &Path) -> PathBuf {
    path.with_extension("json")
}

pub(crate) fn validate_grid(omegas: &[f64]) -> Result<()> {
    if omegas.len() < 2 {
        return Err(Error::Validation(format!("frequency grid needs at least 2 points, got {}", omegas.len())));
    }
    if let Some(w) = omegas.windows(2).find(|w| !(w[1] > w[0]) || !w[1].is_finite()) {
        return Err(Error::Validation(format!("frequency grid not strictly increasing at {:e}", w[1])));
    }
    Ok(())
}

/// Uniform grid of `points` absolute frequencies spanning `ω₀ ± half_span`.
pub fn detuning_grid(omega0: f64, half_span: f64, points: usize) -> Result<Vec<f64>> {
    if points < 2 || !(half_span > 0.0) {
        return Err(Error::Validation(format!(
            "grid needs ≥ 2 points and a positive span, got {points} points, half-span {half_span:e}"
        )));
    }
    let step = 2.0 * half_span / (points - 1) as f64;
    Ok((0..points).map(|i| omega0 - half_span + step * i as f64).collect())
}

/// Finite-difference options for [`spectral_density_com`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StencilOptions {
    /// Step in units of λ₀.
    pub step: f64,
    /// One Richardson refinement with `h/2`.
    pub richardson: bool,
    /// Evaluate at the focus instead of the shifted equilibrium R₀.
    pub at_focus: bool,
}

impl Default for StencilOptions {
    fn default() -> Self {
        StencilOptions { step: 1e-3, richardson: true, at_focus: false }
    }
}

/// `α²r₀²ω²/(4ħπε₀c²)`.
fn com_prefactor(alpha: f64, r0: f64, omega: f64) -> f64 {
    alpha * alpha * r0 * r0 * omega * omega / (4.0 * HBAR * PI * EPS0 * C * C)
}

/// Center-of-mass spectral density along `axis`.
///
/// `J_i(ω) = [α²r_{i0}²ω²/(4ħπε₀c²)]·∂_{r_i}∂_{r′_i}[ℰ(r)Im G_xx(r,r′,ω)ℰ*(r′)]` at
/// `r = r′ = R₀`, by the four-point cross stencil.
pub fn spectral_density_com(
    axis: Axis,
    grid: &[f64],
    g: &dyn GreensProvider,
    p: &TweezerParams,
    part: &ParticleParams,
    eq: &EquilibriumState,
    opts: &StencilOptions,
) -> Result<SpectralDensity> {
    spectral_density_com_with_field(axis, grid, g, p, p, part, eq, opts)
}

/// [`spectral_density_com`] with a user-supplied tweezer profile.
#[allow(clippy::too_many_arguments)]
pub fn spectral_density_com_with_field(
    axis: Axis,
    grid: &[f64],
    g: &dyn GreensProvider,
    p: &TweezerParams,
    field: &dyn FieldProfile,
    part: &ParticleParams,
    eq: &EquilibriumState,
    opts: &StencilOptions,
) -> Result<SpectralDensity> {
    validate_grid(grid)?;
    check_band(g, grid)?;
    let big_omega = mechanical_frequencies(part, p)[axis.index()];
    let r0 = zero_point_motion(part.mass, big_omega)?;
    let center = if opts.at_focus { Vector3::zeros() } else { eq.r0() };
    let h = opts.step * p.wavelength;
    let e = axis.unit();
    let values = grid
        .par_iter()
        .map(|&w| {
            let d = mixed_derivative(g, field, &center, &e, w, h, opts.richardson)?;
            Ok(com_prefactor(part.alpha, r0, w) * d)
        })
        .collect::<Result<Vec<f64>>>()?;
    SpectralDensity::new(
        grid.to_vec(),
        values,
        SpectralMeta {
            motion: MotionKind::CenterOfMass,
            axis,
            provider: g.descriptor(),
            step_m: h,
            r0_m: center.into(),
            omega0: p.omega0(),
            mechanical_frequency: big_omega,
            gamma_fs: None,
            config_hash: None,
            tool_version: None,
        },
    )
}

fn mixed_derivative(
    g: &dyn GreensProvider,
    field: &dyn FieldProfile,
    center: &Vector3<f64>,
    e: &Vector3<f64>,
    omega: f64,
    h: f64,
    richardson: bool,
) -> Result<f64> {
    let f = |s: f64, t: f64| -> Result<f64> {
        let r = center + e * s;
        let rp = center + e * t;
        let v = field.amplitude(&r) * field.amplitude(&rp).conj() * g.im_g_xx(&r, &rp, omega)?;
        Ok(v.re)
    };
    let stencil = |h: f64| -> Result<f64> { Ok((f(h, h)? - f(h, -h)? - f(-h, h)? + f(-h, -h)?) / (4.0 * h * h)) };
    let dh = stencil(h)?;
    if richardson {
        Ok((4.0 * stencil(0.5 * h)? - dh) / 3.0)
    } else {
        Ok(dh)
    }
}

fn check_band(g: &dyn GreensProvider, grid: &[f64]) -> Result<()> {
    let (lo, hi) = g.band();
    let (a, b) = (grid[0], grid[grid.len() - 1]);
    if a < lo || b > hi {
        return Err(Error::Domain(format!("grid [{a:e}, {b:e}] exceeds provider band [{lo:e}, {hi:e}]")));
    }
    Ok(())
}

/// Librational spectral density about `axis ∈ {y, z}`:
/// `J_i(ω) = [Δα²ξ₀²ω²|E₀|²/(4ħπε₀c²)]·Im G_ii(R₀, R₀, ω)`.
pub fn spectral_density_libr(
    axis: Axis,
    grid: &[f64],
    g: &dyn GreensProvider,
    p: &TweezerParams,
    lp: &LibrationalParams,
    eq: &EquilibriumState,
) -> Result<SpectralDensity> {
    if axis == Axis::X {
        return Err(Error::Usage("libration is defined about the y or z axis only".into()));
    }
    validate_grid(grid)?;
    check_band(g, grid)?;
    let big_omega = librational_frequency(lp, p);
    let xi0 = lp.xi0(big_omega)?;
    let r0 = eq.r0();
    let i = axis.index();
    let pre = lp.delta_alpha.powi(2) * xi0 * xi0 * p.e0 * p.e0 / (4.0 * HBAR * PI * EPS0 * C * C);
    let values =
        grid.par_iter().map(|&w| Ok(pre * w * w * g.im_g(&r0, &r0, w)?[(i, i)])).collect::<Result<Vec<f64>>>()?;
    SpectralDensity::new(
        grid.to_vec(),
        values,
        SpectralMeta {
            motion: MotionKind::Libration,
            axis,
            provider: g.descriptor(),
            step_m: 0.0,
            r0_m: r0.into(),
            omega0: p.omega0(),
            mechanical_frequency: big_omega,
            gamma_fs: None,
            config_hash: None,
            tool_version: None,
        },
    )
}

/// Free-space recoil heating rate `Γ_fs = 2π·J_fs,i(ω₀)`.
///
/// ```
/// use recoil::spectral::free_space_recoil;
/// use recoil::tweezer::{EquilibriumState, ParticleParams, TweezerParams};
/// use recoil::Axis;
/// let p = TweezerParams::from_power(0.4, 1.0e-6, 1.5568e-6).unwrap();
/// let part = ParticleParams::sphere(71.5e-9, 2.07, 2200.0).unwrap();
/// let eq = EquilibriumState::at_focus();
/// let gx = free_space_recoil(recoil::Axis::X, &p, &part, &eq).unwrap();
/// let gy = free_space_recoil(Axis::Y, &p, &part, &eq).unwrap();
/// // a dipole scatters twice as much along y as along its own axis
/// assert!((gy / gx - 2.0).abs() < 1e-6);
/// ```
pub fn free_space_recoil(axis: Axis, p: &TweezerParams, part: &ParticleParams, eq: &EquilibriumState) -> Result<f64> {
    free_space_recoil_at(axis, p, part, eq, p.omega0())
}

/// `2π·J_fs,i(ω)` at an arbitrary frequency, e.g. the sidebands `ω₀ ± Ω_i`.
pub fn free_space_recoil_at(
    axis: Axis,
    p: &TweezerParams,
    part: &ParticleParams,
    eq: &EquilibriumState,
    omega: f64,
) -> Result<f64> {
    let big_omega = mechanical_frequencies(part, p)[axis.index()];
    let r0 = zero_point_motion(part.mass, big_omega)?;
    let opts = StencilOptions::default();
    let h = opts.step * p.wavelength;
    let d = mixed_derivative(&FreeSpace, p, &eq.r0(), &axis.unit(), omega, h, opts.richardson)?;
    Ok(2.0 * PI * com_prefactor(part.alpha, r0, omega) * d)
}

/// Closed-form free-space `J_i(ω)` at the focus:
/// `[α²r₀²ω²/(4ħπε₀c²)]·E₀²·(ω/6πc)·F_i`, with `F_x = k²/5`, `F_y = 2k²/5`,
/// `F_z = k′² + 2k²/5`, `k = ω/c`, `k′ = k₀ − 1/z_R`.
pub fn free_space_com_at_focus(axis: Axis, p: &TweezerParams, part: &ParticleParams, omega: f64) -> Result<f64> {
    let big_omega = mechanical_frequencies(part, p)[axis.index()];
    let r0 = zero_point_motion(part.mass, big_omega)?;
    let k = omega / C;
    let kp = p.k0() - 1.0 / p.rayleigh_range();
    let factor = match axis {
        Axis::X => k * k / 5.0,
        Axis::Y => 2.0 * k * k / 5.0,
        Axis::Z => kp * kp + 2.0 * k * k / 5.0,
    };
    Ok(com_prefactor(part.alpha, r0, omega) * p.e0 * p.e0 * omega / (6.0 * PI * C) * factor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::green::{ImageMirror, MirrorGeometry};

    fn setup() -> (TweezerParams, ParticleParams) {
        let p = TweezerParams::from_power(0.4, 1.0e-6, 1.5568e-6).unwrap();
        let part = ParticleParams::sphere(71.5e-9, 2.07, 2200.0).unwrap();
        (p, part)
    }

    #[test]
    fn free_space_matches_closed_form() {
        let (p, part) = setup();
        let eq = EquilibriumState::at_focus();
        let w0 = p.omega0();
        let grid = [0.99 * w0, w0, 1.01 * w0];
        for axis in Axis::ALL {
            let j = spectral_density_com(axis, &grid, &FreeSpace, &p, &part, &eq, &StencilOptions::default()).unwrap();
            for (w, v) in grid.iter().zip(&j.values) {
                let exact = free_space_com_at_focus(axis, &p, &part, *w).unwrap();
                assert!((v / exact - 1.0).abs() < 1e-8, "{axis}: {v} vs {exact}");
            }
        }
    }

    #[test]
    fn recoil_matches_textbook_rate() {
        // 2πJ_y = α²k⁵E₀²/(60πε₀MΩ) for a y-oscillator (textbook dipole recoil)
        let (p, part) = setup();
        let eq = EquilibriumState::at_focus();
        let gy = free_space_recoil(Axis::Y, &p, &part, &eq).unwrap();
        let omega = mechanical_frequencies(&part, &p)[1];
        let k = p.k0();
        let textbook = part.alpha.powi(2) * k.powi(5) * p.e0 * p.e0 / (60.0 * PI * EPS0 * part.mass * omega);
        assert!((gy / textbook - 1.0).abs() < 1e-7);
    }

    #[test]
    fn alpha_doubling_quadruples_recoil_at_fixed_zero_point() {
        // the α² prefactor at fixed r₀
        let (p, part) = setup();
        let w = p.omega0();
        assert!((com_prefactor(2.0 * part.alpha, 1e-12, w) / com_prefactor(part.alpha, 1e-12, w) - 4.0).abs() < 1e-14);
        // with r₀ taken from the trap (Ω ∝ √α), Γ_fs ∝ α^(3/2)
        let eq = EquilibriumState::at_focus();
        let a = free_space_recoil(Axis::X, &p, &part, &eq).unwrap();
        let part2 = ParticleParams { alpha: 2.0 * part.alpha, ..part };
        let c = free_space_recoil(Axis::X, &p, &part2, &eq).unwrap();
        assert!((c / a - 2f64.powf(1.5)).abs() < 1e-9);
    }

    #[test]
    fn libration_free_space_closed_form_and_isotropy() {
        let (p, _) = setup();
        let lp = LibrationalParams::new(2e-33, 3e-32).unwrap();
        let w0 = p.omega0();
        let grid = [w0, 1.001 * w0];
        let eq = EquilibriumState::at_focus();
        let jy = spectral_density_libr(Axis::Y, &grid, &FreeSpace, &p, &lp, &eq).unwrap();
        let jz = spectral_density_libr(Axis::Z, &grid, &FreeSpace, &p, &lp, &eq).unwrap();
        let om = librational_frequency(&lp, &p);
        let xi0 = lp.xi0(om).unwrap();
        for (i, w) in grid.iter().enumerate() {
            let exact = lp.delta_alpha.powi(2) * xi0 * xi0 * w.powi(3) * p.e0 * p.e0
                / (24.0 * HBAR * PI * PI * EPS0 * C.powi(3));
            assert!((jy.values[i] / exact - 1.0).abs() < 1e-13);
            assert_eq!(jy.values[i], jz.values[i]);
        }
        assert!(spectral_density_libr(Axis::X, &grid, &FreeSpace, &p, &lp, &eq).is_err());
    }

    #[test]
    fn stencil_leaving_region_is_domain_error() {
        let (p, part) = setup();
        let geom = MirrorGeometry::half_space(Axis::Y, 1e-9).unwrap();
        let g = ImageMirror::new(geom).unwrap();
        let w0 = p.omega0();
        let r = spectral_density_com(
            Axis::Y,
            &[w0, 1.001 * w0],
            &g,
            &p,
            &part,
            &EquilibriumState::at_focus(),
            &StencilOptions::default(),
        );
        assert!(matches!(r, Err(Error::Domain(_))));
    }

    #[test]
    fn csv_round_trip() {
        let (p, part) = setup();
        let w0 = p.omega0();
        let grid = detuning_grid(w0, 1e7, 5).unwrap();
        let j = spectral_density_com(
            Axis::Y,
            &grid,
            &FreeSpace,
            &p,
            &part,
            &EquilibriumState::at_focus(),
            &StencilOptions::default(),
        )
        .unwrap();
        let dir = std::env::temp_dir().join(format!("recoil-spectral-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("j.csv");
        j.write(&path).unwrap();
        let back = SpectralDensity::read(&path).unwrap();
        assert_eq!(back, j);
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn grid_validation() {
        assert!(detuning_grid(1.0, 1.0, 0).is_err());
        assert!(validate_grid(&[1.0, 1.0]).is_err());
        assert!(validate_grid(&[1.0]).is_err());
    }
}
