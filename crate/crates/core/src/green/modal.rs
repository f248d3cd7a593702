use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::GreensProvider;
use crate::consts::C;
use crate::error::{Error, Result};
use crate::Axis;

/// Whether the particle sits at a node or an antinode of the standing wave.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeParity {
    /// `sin(k_c s)`: maximal gradient at the origin.
    Node,
    /// `cos(k_c s)`: maximal field at the origin.
    Antinode,
}

/// A lossy Gaussian standing-wave mode polarized along x.
///
/// The mode function `u(r) = sin|cos(k_c s)·exp(−ρ²/W_c²)` along the cavity
/// axis `s` is normalized to the volume `V = πW_c²L_c/4`, and contributes
/// `Im G_xx = c²u(r)u(r′)/(2ωV)·(κ/2)/((ω_c − ω)² + κ²/4)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuasiNormalMode {
    pub omega_c: f64,
    pub kappa: f64,
    pub waist: f64,
    pub length: f64,
    pub axis: Axis,
    pub parity: ModeParity,
}

impl QuasiNormalMode {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in
            [("omega_c", self.omega_c), ("kappa", self.kappa), ("waist", self.waist), ("length", self.length)]
        {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Validation(format!("mode {name} must be positive, got {v}")));
            }
        }
        if self.axis == Axis::X {
            return Err(Error::Validation("an x-polarized mode cannot propagate along x".into()));
        }
        Ok(())
    }

    pub fn volume(&self) -> f64 {
        std::f64::consts::PI * self.waist * self.waist * self.length / 4.0
    }

    pub fn profile(&self, r: &Vector3<f64>) -> f64 {
        let kc = self.omega_c / C;
        let a = self.axis.index();
        let s = r[a];
        let rho2 = r.norm_squared() - s * s;
        let longitudinal = match self.parity {
            ModeParity::Node => (kc * s).sin(),
            ModeParity::Antinode => (kc * s).cos(),
        };
        longitudinal * (-rho2 / (self.waist * self.waist)).exp()
    }

    pub fn lineshape(&self, omega: f64) -> f64 {
        let h = 0.5 * self.kappa;
        h / ((self.omega_c - omega).powi(2) + h * h)
    }

    fn im_g_xx(&self, r: &Vector3<f64>, rp: &Vector3<f64>, omega: f64) -> f64 {
        C * C * self.profile(r) * self.profile(rp) / (2.0 * omega * self.volume()) * self.lineshape(omega)
    }
}

/// A base provider (typically plates) plus quasinormal cavity modes that the
/// planar image model cannot produce.
pub struct ModalCavity<B> {
    pub base: B,
    pub modes: Vec<QuasiNormalMode>,
}

impl<B: GreensProvider> ModalCavity<B> {
    pub fn new(base: B, modes: Vec<QuasiNormalMode>) -> Result<Self> {
        for m in &modes {
            m.validate()?;
        }
        Ok(ModalCavity { base, modes })
    }
}

impl<B: GreensProvider> GreensProvider for ModalCavity<B> {
    fn im_g(&self, r: &Vector3<f64>, rp: &Vector3<f64>, omega: f64) -> Result<Matrix3<f64>> {
        let mut g = self.base.im_g(r, rp, omega)?;
        g[(0, 0)] += self.modes.iter().map(|m| m.im_g_xx(r, rp, omega)).sum::<f64>();
        Ok(g)
    }

    fn im_g_xx(&self, r: &Vector3<f64>, rp: &Vector3<f64>, omega: f64) -> Result<f64> {
        Ok(self.base.im_g_xx(r, rp, omega)? + self.modes.iter().map(|m| m.im_g_xx(r, rp, omega)).sum::<f64>())
    }

    fn band(&self) -> (f64, f64) {
        self.base.band()
    }

    fn descriptor(&self) -> String {
        let modes: Vec<String> = self
            .modes
            .iter()
            .map(|m| format!("mode(ω_c={:e}, κ={:e}, W={:e}, L={:e})", m.omega_c, m.kappa, m.waist, m.length))
            .collect();
        format!("{} + {}", self.base.descriptor(), modes.join(" + "))
    }

    fn includes_vacuum(&self) -> bool {
        self.base.includes_vacuum()
    }

    fn resonances(&self) -> Vec<(f64, f64)> {
        let mut r = self.base.resonances();
        r.extend(self.modes.iter().map(|m| (m.omega_c, m.kappa)));
        r
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::green::FreeSpace;

    fn mode() -> QuasiNormalMode {
        QuasiNormalMode {
            omega_c: 1.2e15,
            kappa: 1e6,
            waist: 5e-6,
            length: 1e-4,
            axis: Axis::Y,
            parity: ModeParity::Node,
        }
    }

    #[test]
    fn profile_norm_matches_volume() {
        // ∫|u|² over one period along the axis times L/λ_c·2 periods per λ_c ... check directly
        let m = mode();
        let kc = m.omega_c / C;
        let n = 4000;
        let period = std::f64::consts::PI / kc;
        let mean_sq: f64 =
            (0..n).map(|i| (kc * (i as f64 + 0.5) * period / n as f64).sin().powi(2)).sum::<f64>() / n as f64;
        let transverse = std::f64::consts::PI * m.waist * m.waist / 2.0;
        assert!((mean_sq * m.length * transverse / m.volume() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn node_has_no_field_but_maximal_gradient() {
        let cav = ModalCavity::new(FreeSpace, vec![mode()]).unwrap();
        let o = Vector3::zeros();
        let free = FreeSpace.im_g_xx(&o, &o, 1.2e15).unwrap();
        assert_eq!(cav.im_g_xx(&o, &o, 1.2e15).unwrap(), free);
        assert_eq!(cav.resonances(), vec![(1.2e15, 1e6)]);
    }

    #[test]
    fn rejects_bad_modes() {
        let mut m = mode();
        m.kappa = 0.0;
        assert!(ModalCavity::new(FreeSpace, vec![m]).is_err());
    }
}
