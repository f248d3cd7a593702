//! Pipeline configuration.
//!
//! Units are part of the field names. Frequencies are detunings from the laser
//! frequency in Hz (cyclic); they are converted to absolute rad/s on use.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use recoil::green::{
    load_tabulated, FreeSpace, GreensProvider, ImageMirror, MirrorGeometry, ModalCavity, ModeParity, QuasiNormalMode,
};
use recoil::tweezer::{LibrationalParams, ParticleParams, TweezerParams};
use recoil::{Axis, Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const SCHEMA: &str = "recoil-pipeline/1";

fn schema() -> String {
    SCHEMA.into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default = "schema")]
    pub schema: String,
    #[serde(default)]
    pub particle: ParticleBlock,
    #[serde(default)]
    pub tweezer: TweezerBlock,
    #[serde(default)]
    pub libration: Option<LibrationBlock>,
    #[serde(default)]
    pub motion: MotionBlock,
    #[serde(default)]
    pub provider: ProviderBlock,
    #[serde(default)]
    pub cavity_modes: Vec<CavityModeBlock>,
    #[serde(default)]
    pub equilibrium: EquilibriumChoice,
    #[serde(default)]
    pub grid: GridBlock,
    #[serde(default)]
    pub fit: FitBlock,
    #[serde(default)]
    pub reduction: ReductionBlock,
    #[serde(default)]
    pub dynamics: DynamicsBlock,
    #[serde(default)]
    pub geometry: GeometryBlock,
    /// Overridden by `--out`.
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults deserialize")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParticleBlock {
    pub radius_m: f64,
    pub permittivity: f64,
    pub density_kg_m3: f64,
}

impl Default for ParticleBlock {
    fn default() -> Self {
        ParticleBlock { radius_m: 70e-9, permittivity: 2.07, density_kg_m3: 2200.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TweezerBlock {
    pub power_w: f64,
    pub waist_m: f64,
    pub wavelength_m: f64,
}

impl Default for TweezerBlock {
    fn default() -> Self {
        TweezerBlock { power_w: 0.4, waist_m: 0.8e-6, wavelength_m: 1.55e-6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LibrationBlock {
    pub delta_alpha_c_m2_per_v: f64,
    pub inertia_kg_m2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MotionKindChoice {
    #[default]
    Com,
    Libration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MotionBlock {
    pub kind: MotionKindChoice,
    pub axis: Axis,
}

impl Default for MotionBlock {
    fn default() -> Self {
        MotionBlock { kind: MotionKindChoice::Com, axis: Axis::Y }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProviderBlock {
    #[default]
    FreeSpace,
    HalfSpace {
        axis: Axis,
        position_m: f64,
    },
    ParallelPlates {
        axis: Axis,
        separation_m: f64,
        #[serde(default = "default_images")]
        n_img: usize,
        #[serde(default = "one")]
        reflectivity: f64,
    },
    Tabulated {
        path: PathBuf,
    },
}

fn default_images() -> usize {
    8
}

fn one() -> f64 {
    1.0
}

/// Quasi-normal cavity mode added on top of the provider.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CavityModeBlock {
    /// Resonance minus laser frequency (Hz).
    pub detuning_hz: f64,
    /// Energy decay rate divided by 2π (Hz).
    pub kappa_hz: f64,
    pub waist_m: f64,
    pub length_m: f64,
    pub axis: Axis,
    pub parity: ModeParity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EquilibriumChoice {
    #[default]
    Focus,
    Solve,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridBlock {
    /// Half-width of the window around the laser frequency (Hz).
    pub half_span_hz: f64,
    pub points: usize,
}

impl Default for GridBlock {
    fn default() -> Self {
        GridBlock { half_span_hz: 4e6, points: 801 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(untagged)]
pub enum Order {
    Fixed(usize),
    #[default]
    #[serde(with = "auto")]
    Auto,
}

mod auto {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str("auto")
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<(), D::Error> {
        let s = String::deserialize(d)?;
        if s == "auto" {
            Ok(())
        } else {
            Err(serde::de::Error::custom(format!("expected a mode count or \"auto\", got \"{s}\"")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitBlock {
    pub order: Order,
    pub tol: f64,
    pub n_max: usize,
    pub seed: u64,
    pub restarts: usize,
}

impl Default for FitBlock {
    fn default() -> Self {
        FitBlock { order: Order::Auto, tol: 1e-3, n_max: 4, seed: 0, restarts: 8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReductionBlock {
    pub ratio: f64,
    pub detune: f64,
    pub background_only: bool,
}

impl Default for ReductionBlock {
    fn default() -> Self {
        ReductionBlock { ratio: 10.0, detune: 10.0, background_only: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DynamicsBlock {
    pub horizon_s: f64,
    pub samples: usize,
    pub initial_occupation: f64,
    pub include_recoil: bool,
    /// Also evolve the discretized continuum with this many modes.
    pub continuum_modes: Option<usize>,
    pub steady_state: bool,
    pub rtol: f64,
    pub atol: f64,
}

impl Default for DynamicsBlock {
    fn default() -> Self {
        DynamicsBlock {
            horizon_s: 1e-4,
            samples: 100,
            initial_occupation: 0.0,
            include_recoil: true,
            continuum_modes: None,
            steady_state: false,
            rtol: 1e-10,
            atol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometryBlock {
    pub points: usize,
    /// Integrate numerically instead of using the closed forms.
    pub quadrature: bool,
}

impl Default for GeometryBlock {
    fn default() -> Self {
        GeometryBlock { points: 91, quadrature: false }
    }
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::Validation(msg.into())
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: PipelineConfig =
            serde_json::from_str(&text).map_err(|e| Error::Validation(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != SCHEMA {
            return Err(invalid(format!("schema `{}` not supported (expected `{SCHEMA}`)", self.schema)));
        }
        if self.grid.points < 2 {
            return Err(invalid(format!("grid.points must be at least 2, got {}", self.grid.points)));
        }
        if !(self.grid.half_span_hz > 0.0) {
            return Err(invalid("grid.half_span_hz must be positive"));
        }
        if self.fit.n_max == 0 || matches!(self.fit.order, Order::Fixed(0)) {
            return Err(invalid("fit order and fit.n_max must be at least 1"));
        }
        if !(self.fit.tol > 0.0) {
            return Err(invalid("fit.tol must be positive"));
        }
        if !(self.dynamics.horizon_s > 0.0) || self.dynamics.samples == 0 {
            return Err(invalid("dynamics.horizon_s must be positive and dynamics.samples nonzero"));
        }
        if !(self.dynamics.initial_occupation >= 0.0) {
            return Err(invalid("dynamics.initial_occupation must be nonnegative"));
        }
        if self.geometry.points < 2 {
            return Err(invalid("geometry.points must be at least 2"));
        }
        if self.motion.kind == MotionKindChoice::Libration && self.libration.is_none() {
            return Err(invalid("libration motion needs a libration block"));
        }
        self.tweezer()?;
        self.particle()?;
        Ok(())
    }

    /// SHA-256 of the canonical serialization (after flag overrides).
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn tweezer(&self) -> Result<TweezerParams> {
        let t = &self.tweezer;
        TweezerParams::from_power(t.power_w, t.waist_m, t.wavelength_m)
    }

    pub fn particle(&self) -> Result<ParticleParams> {
        let p = &self.particle;
        ParticleParams::sphere(p.radius_m, p.permittivity, p.density_kg_m3)
    }

    pub fn libration(&self) -> Result<Option<LibrationalParams>> {
        self.libration.as_ref().map(|l| LibrationalParams::new(l.delta_alpha_c_m2_per_v, l.inertia_kg_m2)).transpose()
    }

    /// Provider with any cavity modes layered on top.
    pub fn provider(&self, omega0: f64) -> Result<Box<dyn GreensProvider>> {
        let modes = self
            .cavity_modes
            .iter()
            .map(|c| {
                let m = QuasiNormalMode {
                    omega_c: omega0 + 2.0 * PI * c.detuning_hz,
                    kappa: 2.0 * PI * c.kappa_hz,
                    waist: c.waist_m,
                    length: c.length_m,
                    axis: c.axis,
                    parity: c.parity,
                };
                m.validate()?;
                Ok(m)
            })
            .collect::<Result<Vec<_>>>()?;
        fn layer<B: GreensProvider + 'static>(base: B, modes: Vec<QuasiNormalMode>) -> Result<Box<dyn GreensProvider>> {
            if modes.is_empty() {
                Ok(Box::new(base))
            } else {
                Ok(Box::new(ModalCavity::new(base, modes)?))
            }
        }
        match &self.provider {
            ProviderBlock::FreeSpace => layer(FreeSpace, modes),
            ProviderBlock::HalfSpace { axis, position_m } => {
                layer(ImageMirror::new(MirrorGeometry::half_space(*axis, *position_m)?)?, modes)
            }
            ProviderBlock::ParallelPlates { axis, separation_m, n_img, reflectivity } => {
                let g = MirrorGeometry::ParallelPlates {
                    axis: *axis,
                    separation: *separation_m,
                    n_img: *n_img,
                    reflectivity: *reflectivity,
                };
                layer(ImageMirror::new(g)?, modes)
            }
            ProviderBlock::Tabulated { path } => layer(load_tabulated(path, Default::default())?, modes),
        }
    }
}
