//! Adiabatic elimination of broad and detuned modes, and the single-mode
//! cavity estimates (Laguerre-Gaussian coupling, diffraction-limited decay,
//! finesse).

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::consts::{C, EPS0, HBAR};
use crate::error::{Error, Result};
use crate::fewmode::{ClassifyThresholds, FewModeModel, FitReport, ModeLabel};
use crate::tweezer::{zero_point_motion, ParticleParams, TweezerParams};

/// Recoil-rate contribution of one eliminated mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contribution {
    pub mode: usize,
    #[serde(rename = "Gamma_beta")]
    pub gamma_beta: f64,
    pub label: ModeLabel,
}

/// Linewidth contribution `4Λ₁β²/κ_β` of one broad mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KappaContribution {
    pub mode: usize,
    pub kappa_beta: f64,
}

/// The reduced coherent-scattering model: one cavity mode coupled to the
/// motion, plus recoil heating from everything eliminated.
///
/// In background-only reductions there is no cavity and `omega_c`, `g` and
/// `kappa` are absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReducedModel {
    pub omega_c: Option<f64>,
    pub g: Option<f64>,
    pub kappa: Option<f64>,
    #[serde(rename = "Gamma")]
    pub gamma: f64,
    #[serde(rename = "Omega")]
    pub omega: f64,
    /// Laser frequency ω₀ (rad/s).
    pub omega0: f64,
    pub contributions: Vec<Contribution>,
    #[serde(default)]
    pub kappa_contributions: Vec<KappaContribution>,
    /// Model choices that affect the numbers.
    #[serde(default)]
    pub notes: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_version: Option<String>,
}

impl ReducedModel {
    /// Cavity detuning `ω_c − ω₀`, if there is a cavity.
    pub fn detuning(&self) -> Option<f64> {
        self.omega_c.map(|w| w - self.omega0)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, v: f64| Error::Validation(format!("{what} = {v:e} is invalid"));
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(bad("Gamma", self.gamma));
        }
        if !(self.omega > 0.0 && self.omega.is_finite()) {
            return Err(bad("Omega", self.omega));
        }
        match (self.omega_c, self.g, self.kappa) {
            (None, None, None) => {}
            (Some(w), Some(g), Some(k)) => {
                if !w.is_finite() {
                    return Err(bad("omega_c", w));
                }
                if !g.is_finite() {
                    return Err(bad("g", g));
                }
                if !(k > 0.0 && k.is_finite()) {
                    return Err(bad("kappa", k));
                }
            }
            _ => return Err(Error::Validation("omega_c, g and kappa must be all present or all absent".into())),
        }
        let sum: f64 = self.contributions.iter().map(|c| c.gamma_beta).sum();
        if (sum - self.gamma).abs() > 1e-12 * self.gamma.max(f64::MIN_POSITIVE) {
            return Err(Error::Validation(format!(
                "Gamma = {:e} differs from the sum of its contributions {sum:e}",
                self.gamma
            )));
        }
        Ok(())
    }
}

/// Frame in which a few-mode model lives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub omega0: f64,
    pub mechanical_frequency: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReduceOptions {
    pub thresholds: ClassifyThresholds,
    /// Eliminate every mode; requires that none is labelled narrow.
    pub background_only: bool,
}

/// Lorentzian-tail recoil rate `g²κ/(Λ² + κ²/4)` of an eliminated mode,
/// i.e. `2πJ_β(ω₀)`.
pub fn eliminated_rate(g: f64, kappa: f64, detuning: f64) -> f64 {
    g * g * kappa / (detuning * detuning + kappa * kappa / 4.0)
}

const DETUNED_NOTE: &str =
    "detuned modes contribute the Lorentzian tail g^2 kappa/(Lambda^2 + kappa^2/4) at the laser frequency (model choice)";

/// Eliminates broad and detuned modes, keeping the single narrow mode.
///
/// ```
/// use nalgebra::DMatrix;
/// use recoil::fewmode::{FewModeModel, ModeLabel};
/// use recoil::reduce::{adiabatic_reduce, Frame, ReduceOptions};
/// let m = FewModeModel::new(
///     vec![10.0, 1e3],
///     vec![1e3, 4e6],
///     DMatrix::from_row_slice(2, 2, &[0.0, 1e3, 1e3, 0.0]),
/// ).unwrap();
/// let frame = Frame { omega0: 1e15, mechanical_frequency: 1e5 };
/// let r = adiabatic_reduce(&m, &[ModeLabel::Narrow, ModeLabel::Broad], frame, &ReduceOptions::default()).unwrap();
/// assert_eq!(r.gamma, 1.0);
/// assert_eq!(r.kappa, Some(1e3 + 1.0));
/// ```
pub fn adiabatic_reduce(
    m: &FewModeModel,
    labels: &[ModeLabel],
    frame: Frame,
    opts: &ReduceOptions,
) -> Result<ReducedModel> {
    m.validate()?;
    if labels.len() != m.n() {
        return Err(Error::Validation(format!("{} labels for {} modes", labels.len(), m.n())));
    }
    let r = opts.thresholds.ratio;
    let narrow: Vec<usize> = (0..m.n()).filter(|&b| labels[b] == ModeLabel::Narrow).collect();
    let keep = if opts.background_only {
        if !narrow.is_empty() {
            return Err(Error::Structural(format!("background-only reduction but mode(s) {narrow:?} are narrow")));
        }
        None
    } else {
        match narrow.as_slice() {
            [one] => Some(*one),
            [] => {
                return Err(Error::Structural(
                    "no narrow mode to keep; use background-only mode for a featureless density".into(),
                ))
            }
            many => {
                return Err(Error::Structural(format!(
                    "{} narrow modes {many:?}; exactly one is supported",
                    many.len()
                )))
            }
        }
    };

    let mut contributions = Vec::new();
    let mut kappa_contributions = Vec::new();
    let mut notes = Vec::new();
    for b in (0..m.n()).filter(|&b| Some(b) != keep) {
        let (g, k, d) = (m.g[b], m.kappa[b], m.lambda[(b, b)]);
        if let Some(one) = keep {
            let (g1, k1, d1, c) = (m.g[one], m.kappa[one], m.lambda[(one, one)], m.lambda[(one, b)]);
            match labels[b] {
                ModeLabel::Broad => {
                    let scales = [
                        ("kappa_1", k1),
                        ("g_1", g1.abs()),
                        ("g_b", g.abs()),
                        ("|Lambda_bb|", d.abs()),
                        ("|Lambda_1b|", c.abs()),
                    ];
                    check_ratio(&format!("kappa_{}", b + 1), k, &scales, r)?;
                    kappa_contributions.push(KappaContribution { mode: b, kappa_beta: 4.0 * c * c / k });
                }
                ModeLabel::Detuned => {
                    let scales = [
                        ("kappa_1", k1),
                        ("kappa_b", k),
                        ("g_1", g1.abs()),
                        ("g_b", g.abs()),
                        ("|Lambda_1b|", c.abs()),
                    ];
                    check_ratio(&format!("|Lambda_{0}{0} - Lambda_11|", b + 1), (d - d1).abs(), &scales, r)?;
                    if notes.is_empty() {
                        notes.push(DETUNED_NOTE.to_string());
                    }
                }
                ModeLabel::Narrow => unreachable!("narrow modes other than the kept one were rejected"),
            }
        } else if labels[b] == ModeLabel::Detuned && notes.is_empty() {
            notes.push(DETUNED_NOTE.to_string());
        }
        contributions.push(Contribution { mode: b, gamma_beta: eliminated_rate(g, k, d), label: labels[b] });
    }
    let gamma = contributions.iter().map(|c| c.gamma_beta).sum();
    let (omega_c, g, kappa) = match keep {
        Some(one) => {
            let k = m.kappa[one] + kappa_contributions.iter().map(|c| c.kappa_beta).sum::<f64>();
            (Some(m.lambda[(one, one)] + frame.omega0), Some(m.g[one]), Some(k))
        }
        None => (None, None, None),
    };
    let out = ReducedModel {
        omega_c,
        g,
        kappa,
        gamma,
        omega: frame.mechanical_frequency,
        omega0: frame.omega0,
        contributions,
        kappa_contributions,
        notes,
        config_hash: None,
        tool_version: None,
    };
    out.validate()?;
    Ok(out)
}

fn check_ratio(name: &str, big: f64, scales: &[(&str, f64)], threshold: f64) -> Result<()> {
    let (which, s) = scales.iter().cloned().fold(("", 0.0), |acc, x| if x.1 > acc.1 { x } else { acc });
    if s > 0.0 && big < threshold * s {
        return Err(Error::ScaleSeparation(format!("{name}/{which} = {:.3} < {threshold}", big / s)));
    }
    Ok(())
}

/// Reduces a fit report with its own labels and frame.
pub fn reduce_fit(report: &FitReport, opts: &ReduceOptions) -> Result<ReducedModel> {
    let frame = Frame { omega0: report.omega0, mechanical_frequency: report.mechanical_frequency };
    adiabatic_reduce(&report.model()?, &report.labels, frame, opts)
}

/// Symmetric two-mirror cavity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CavityGeometry {
    /// Mirror curvature radius R (m).
    pub curvature_radius: f64,
    /// Mirror separation L_c (m).
    pub length: f64,
    /// Mirror half-angle θ_m seen from the center (rad).
    pub theta_m: f64,
    /// Resonant wavelength (m).
    pub wavelength: f64,
    /// Mode waist W_c at the cavity center (m).
    pub waist: f64,
}

impl CavityGeometry {
    /// With `waist = None` the fundamental-mode waist of the stable resonator,
    /// `W_c² = (λ/2π)·√(L(2R − L))`, is used.
    pub fn new(curvature_radius: f64, length: f64, theta_m: f64, wavelength: f64, waist: Option<f64>) -> Result<Self> {
        if !(curvature_radius > 0.0 && length > 0.0 && wavelength > 0.0) {
            return Err(Error::Domain("R, L_c and the wavelength must be positive".into()));
        }
        if !(theta_m > 0.0 && theta_m < PI / 2.0) {
            return Err(Error::Domain(format!("theta_m = {theta_m} outside (0, pi/2)")));
        }
        let waist = match waist {
            Some(w) if w > 0.0 => w,
            Some(w) => return Err(Error::Domain(format!("waist must be positive, got {w:e}"))),
            None => {
                if length >= 2.0 * curvature_radius {
                    return Err(Error::Domain(format!(
                        "L_c = {length:e} >= 2R: no stable fundamental mode; supply the waist"
                    )));
                }
                (wavelength / (2.0 * PI) * (length * (2.0 * curvature_radius - length)).sqrt()).sqrt()
            }
        };
        let g = CavityGeometry { curvature_radius, length, theta_m, wavelength, waist };
        let a = g.mirror_radius()?;
        if a >= curvature_radius {
            return Err(Error::Domain(format!("mirror radius {a:e} >= R")));
        }
        Ok(g)
    }

    /// `L_c < 2R`.
    pub fn is_stable(&self) -> bool {
        self.length < 2.0 * self.curvature_radius
    }

    /// Mirror aperture radius `a` from `(L/2 − R + √(R² − a²))·tanθ_m = a`.
    pub fn mirror_radius(&self) -> Result<f64> {
        let r = self.curvature_radius;
        let s = self.length / 2.0 - r;
        let t = self.theta_m.tan();
        // a²(1 + 1/t²) − 2as/t + s² − R² = 0
        let qa = 1.0 + 1.0 / (t * t);
        let qb = -2.0 * s / t;
        let qc = s * s - r * r;
        let disc = qb * qb - 4.0 * qa * qc;
        if disc < 0.0 {
            return Err(Error::Domain("mirror edge equation has no real solution".into()));
        }
        let a = (-qb + disc.sqrt()) / (2.0 * qa);
        if !(a > 0.0) || a / t - s < -1e-12 * r {
            return Err(Error::Domain(format!("theta_m = {} does not intersect the mirror sphere", self.theta_m)));
        }
        Ok(a)
    }

    /// `V_c = πW_c²L_c/4`.
    pub fn mode_volume(&self) -> f64 {
        PI * self.waist * self.waist * self.length / 4.0
    }

    pub fn omega_c(&self) -> f64 {
        2.0 * PI * C / self.wavelength
    }

    /// Gaussian beam radius `W(y)` of the cavity mode.
    pub fn beam_radius(&self, y: f64) -> f64 {
        let zr = PI * self.waist * self.waist / self.wavelength;
        self.waist * (1.0 + (y / zr).powi(2)).sqrt()
    }

    /// Beam radius at the mirror, `w_m = W(L_c/2)`.
    pub fn mirror_beam_radius(&self) -> f64 {
        self.beam_radius(self.length / 2.0)
    }

    /// Fraction of the intensity outside the mirror aperture, `e^{−2a²/w_m²}`.
    pub fn diffraction_loss(&self) -> Result<f64> {
        let a = self.mirror_radius()?;
        let w = self.mirror_beam_radius();
        Ok((-2.0 * a * a / (w * w)).exp())
    }
}

/// Laguerre-Gaussian estimate `g_LG = (2ħε₀V_c/ω_c)^{-1/2}·αE₀ω_c r_{y0}/(2c)`.
pub fn lg_coupling_estimate(
    geom: &CavityGeometry,
    p: &TweezerParams,
    part: &ParticleParams,
    omega_y: f64,
) -> Result<f64> {
    let wc = geom.omega_c();
    let ry0 = zero_point_motion(part.mass, omega_y)?;
    Ok((2.0 * HBAR * EPS0 * geom.mode_volume() / wc).powf(-0.5) * part.alpha * p.e0 * wc * ry0 / (2.0 * C))
}

/// Cavity decay rate from a round-trip diffraction loss: `κ = c·Loss/(L√(1 − Loss))`.
pub fn kappa_from_loss(loss: f64, length: f64) -> Result<f64> {
    if !(loss > 0.0 && loss < 1.0) {
        return Err(Error::Domain(format!("loss = {loss} outside (0, 1)")));
    }
    if !(length > 0.0) {
        return Err(Error::Domain(format!("length must be positive, got {length:e}")));
    }
    Ok(C * loss / (length * (1.0 - loss).sqrt()))
}

/// Diffraction-limited decay rate of the fundamental mode.
pub fn diffraction_kappa_estimate(geom: &CavityGeometry) -> Result<f64> {
    kappa_from_loss(geom.diffraction_loss()?, geom.length)
}

/// Finesse `F = πP_s^{1/4}/(1 − P_s^{1/2})` from the round-trip survival fraction.
///
/// ```
/// let loss = 0.01_f64;
/// let f = recoil::reduce::finesse((1.0 - loss).powi(2)).unwrap();
/// assert!((f - 312.58).abs() < 0.01);
/// ```
pub fn finesse(survival: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&survival) {
        return Err(Error::Domain(format!("survival fraction {survival} outside [0, 1)")));
    }
    Ok(PI * survival.powf(0.25) / (1.0 - survival.sqrt()))
}

/// Waist of a Gaussian `A·e^{−ρ²/W²}` fitted to field-amplitude samples.
///
/// Weighted linear least squares on `ln|E|` against `ρ²` with weights `|E|²`,
/// so the noisy tails barely count.
pub fn fit_gaussian_waist(rho: &[f64], amplitude: &[f64]) -> Result<f64> {
    if rho.len() != amplitude.len() || rho.len() < 2 {
        return Err(Error::Validation("need at least two (rho, |E|) pairs of equal length".into()));
    }
    let (mut sw, mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (r, e) in rho.iter().zip(amplitude) {
        let e = e.abs();
        if e == 0.0 {
            continue;
        }
        let (x, y, w) = (r * r, e.ln(), e * e);
        sw += w;
        sx += w * x;
        sy += w * y;
        sxx += w * x * x;
        sxy += w * x * y;
    }
    let det = sw * sxx - sx * sx;
    if !(det > 0.0) {
        return Err(Error::Numeric("field samples do not span distinct radii".into()));
    }
    let slope = (sw * sxy - sx * sy) / det;
    if !(slope < 0.0) {
        return Err(Error::Numeric(format!("field does not decay with radius (slope {slope:e})")));
    }
    Ok((-1.0 / slope).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn frame() -> Frame {
        Frame { omega0: 1.2e15, mechanical_frequency: 2.0e5 }
    }

    #[test]
    fn arithmetic_fixtures() {
        let m = FewModeModel::new(vec![1e2, 1e3], vec![1e3, 4e6], DMatrix::from_row_slice(2, 2, &[0.0, 1e3, 1e3, 0.0]))
            .unwrap();
        let r =
            adiabatic_reduce(&m, &[ModeLabel::Narrow, ModeLabel::Broad], frame(), &ReduceOptions::default()).unwrap();
        assert_eq!(r.gamma, 1.0);
        assert_eq!(r.kappa, Some(1001.0));
        assert_eq!(r.omega_c, Some(1.2e15));
        assert_eq!(r.contributions.len(), 1);
        assert_eq!(r.contributions[0].mode, 1);
    }

    #[test]
    fn all_narrow_is_structural() {
        let m = FewModeModel::new(vec![1.0, 1.0], vec![1.0, 2.0], DMatrix::zeros(2, 2)).unwrap();
        let e = adiabatic_reduce(&m, &[ModeLabel::Narrow, ModeLabel::Narrow], frame(), &ReduceOptions::default());
        assert!(matches!(e, Err(Error::Structural(_))));
    }

    #[test]
    fn weak_separation_is_refused() {
        let m = FewModeModel::new(vec![1.0, 1.0], vec![1.0, 5.0], DMatrix::zeros(2, 2)).unwrap();
        let e = adiabatic_reduce(&m, &[ModeLabel::Narrow, ModeLabel::Broad], frame(), &ReduceOptions::default());
        match e {
            Err(Error::ScaleSeparation(msg)) => assert!(msg.contains("kappa_2/kappa_1"), "{msg}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn detuned_mode_contributes_its_tail() {
        let m = FewModeModel::new(
            vec![10.0, 1e3, 2e3],
            vec![1e3, 4e6, 1e5],
            DMatrix::from_row_slice(3, 3, &[0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 5e6]),
        )
        .unwrap();
        let labels = [ModeLabel::Narrow, ModeLabel::Broad, ModeLabel::Detuned];
        let r = adiabatic_reduce(&m, &labels, frame(), &ReduceOptions::default()).unwrap();
        let tail = 4e6 * 1e5 / (25e12 + 2.5e9);
        assert!((r.contributions[1].gamma_beta - tail).abs() < 1e-12 * tail);
        assert!((r.gamma - 1.0 - tail).abs() < 1e-12);
        assert_eq!(r.notes.len(), 1);
    }

    #[test]
    fn background_only() {
        let m = FewModeModel::new(vec![1e3], vec![1e9], DMatrix::zeros(1, 1)).unwrap();
        let opts = ReduceOptions { background_only: true, ..Default::default() };
        let r = adiabatic_reduce(&m, &[ModeLabel::Broad], frame(), &opts).unwrap();
        assert_eq!(r.kappa, None);
        assert!((r.gamma - 4e6 / 1e9).abs() < 1e-18);
        let json = serde_json::to_value(&r).unwrap();
        for k in ["omega_c", "g", "kappa", "Gamma", "Omega", "contributions"] {
            assert!(json.get(k).is_some(), "{k}");
        }
    }

    #[test]
    fn finesse_limits() {
        assert_eq!(finesse(0.0).unwrap(), 0.0);
        assert!(finesse(1.0).is_err());
        let mut last = 0.0;
        for p in [0.1, 0.5, 0.9, 0.99, 0.999999] {
            let f = finesse(p).unwrap();
            assert!(f > last);
            last = f;
        }
    }

    #[test]
    fn kappa_loss_substitution() {
        let l = 60e-6;
        let k = kappa_from_loss(0.01, l).unwrap();
        assert!((k - C * 0.01 / (l * 0.99f64.sqrt())).abs() < 1e-9 * k);
        assert!(kappa_from_loss(1.0, l).is_err());
    }

    #[test]
    fn mirror_radius_solves_edge_relation() {
        let g = CavityGeometry::new(110e-6, 100e-6, 0.4, 1.55e-6, None).unwrap();
        let a = g.mirror_radius().unwrap();
        let r = g.curvature_radius;
        let lhs = (g.length / 2.0 - r + (r * r - a * a).sqrt()) * g.theta_m.tan();
        assert!((lhs - a).abs() < 1e-12 * a);
    }

    #[test]
    fn large_mirrors_do_not_leak() {
        let small = CavityGeometry::new(110e-6, 100e-6, 0.1, 1.55e-6, None).unwrap();
        let big = CavityGeometry::new(110e-6, 100e-6, 0.6, 1.55e-6, None).unwrap();
        assert!(diffraction_kappa_estimate(&big).unwrap() < 1e-3 * diffraction_kappa_estimate(&small).unwrap());
    }

    #[test]
    fn lg_coupling_scalings() {
        let p = TweezerParams::new(1e7, 1e-6, 1.55e-6).unwrap();
        let part = ParticleParams::new(1e-32, 3e-18, 70e-9).unwrap();
        let g1 = CavityGeometry::new(110e-6, 100e-6, 0.4, 1.55e-6, Some(5e-6)).unwrap();
        let g4 = CavityGeometry { waist: 10e-6, ..g1.clone() };
        let a = lg_coupling_estimate(&g1, &p, &part, 1e5).unwrap();
        let b = lg_coupling_estimate(&g4, &p, &part, 1e5).unwrap();
        assert!((a / b - 2.0).abs() < 1e-12);
        let p2 = TweezerParams { e0: 2e7, ..p };
        assert!((lg_coupling_estimate(&g1, &p2, &part, 1e5).unwrap() / a - 2.0).abs() < 1e-12);
    }

    #[test]
    fn gaussian_waist_recovered() {
        let rho: Vec<f64> = (0..60).map(|i| i as f64 * 0.2e-6).collect();
        let amp: Vec<f64> = rho.iter().map(|r| 3.0 * (-(r / 4e-6).powi(2)).exp()).collect();
        assert!((fit_gaussian_waist(&rho, &amp).unwrap() - 4e-6).abs() < 1e-15);
    }
}
