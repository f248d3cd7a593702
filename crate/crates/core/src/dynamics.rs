//! Gaussian open-system dynamics of one mechanical mode coupled to optical
//! modes.
//!
//! Quadratures are `q = b + b†`, `p = i(b† − b)` for every mode, so the vacuum
//! has covariance `σ = 𝟙` and `[q, p] = 2i`. State vectors are ordered
//! `(q_m, p_m, q_1, p_1, …, q_M, p_M)`.
//!
//! The moments obey `x̄' = A x̄` and `σ' = Aσ + σAᵀ + D`. In the rotating frame
//! with `H = Ω b†b + Σ Λ_ab c_a†c_b + Σ g_β (c_β + c_β†) q_m`:
//!
//! ```text
//! q_m' = Ω p_m                      p_m' = −Ω q_m − 2 Σ g_β q_β
//! q_β' = Σ Λ_βγ p_γ − κ_β q_β/2      p_β' = −Σ Λ_βγ q_γ − κ_β p_β/2 − 2 g_β q_m
//! ```
//!
//! Loss at rate κ_β into vacuum adds `κ_β` to both diagonal entries of `D`.
//! The recoil term `−(Γ/2)[q, [q, ρ]]` leaves `q` alone and gives
//! `d⟨p²⟩/dt = (Γ/2)·⟨[[p², q], q]⟩ = 4Γ`, hence `D_pp += 4Γ` and
//! `d⟨n⟩/dt = Γ` for `g = 0`.

use std::f64::consts::PI;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use ode_solvers::dop_shared::{IntegrationError, OutputType, System};
use ode_solvers::Dopri5;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fewmode::FewModeModel;
use crate::reduce::ReducedModel;
use crate::spectral::SpectralDensity;

/// Quadrature convention recorded with serialized states.
pub const CONVENTION: &str = "q = b + b^dag, p = i(b^dag - b); vacuum sigma = 1";

/// Tolerance of the physicality check `σ + iJ ≥ 0`.
pub const PHYSICALITY_TOL: f64 = 1e-9;

/// A mechanical mode plus `M` optical modes with quadratic couplings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    /// Mechanical frequency Ω (rad/s).
    pub omega_m: f64,
    /// Optical detunings `Λ_ββ` (rad/s).
    pub detunings: Vec<f64>,
    /// Off-diagonal `Λ_ab`, `a < b`.
    pub mode_couplings: Vec<(usize, usize, f64)>,
    /// Optical decay rates κ_β (rad/s).
    pub kappa: Vec<f64>,
    /// Couplings `g_β` to `q_m` (rad/s).
    pub g: Vec<f64>,
    /// Recoil (q-dephasing) rate Γ (rad/s).
    pub gamma: f64,
    /// Optional mechanical energy damping into a zero-temperature bath (rad/s).
    #[serde(default)]
    pub mech_damping: f64,
    /// Recurrence time `2π/Δω` of a discretized continuum; the validity horizon.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recurrence_time: Option<f64>,
}

impl LinearModel {
    pub fn optical_modes(&self) -> usize {
        self.detunings.len()
    }

    /// Phase-space dimension `2(M + 1)`.
    pub fn dim(&self) -> usize {
        2 * (self.optical_modes() + 1)
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.optical_modes();
        if self.kappa.len() != m || self.g.len() != m {
            return Err(Error::Validation(format!(
                "{m} detunings, {} decay rates, {} couplings",
                self.kappa.len(),
                self.g.len()
            )));
        }
        if !(self.omega_m > 0.0 && self.omega_m.is_finite()) {
            return Err(Error::Validation(format!("mechanical frequency {:e} must be positive", self.omega_m)));
        }
        if let Some(k) = self.kappa.iter().find(|k| !(**k >= 0.0 && k.is_finite())) {
            return Err(Error::Validation(format!("negative or non-finite decay rate {k:e}")));
        }
        if !(self.mech_damping >= 0.0 && self.mech_damping.is_finite()) {
            return Err(Error::Validation(format!("negative mechanical damping {:e}", self.mech_damping)));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::Validation(format!("negative or non-finite recoil rate {:e}", self.gamma)));
        }
        if let Some((a, b, _)) = self.mode_couplings.iter().find(|(a, b, _)| !(a < b && *b < m)) {
            return Err(Error::Validation(format!("bad mode coupling index ({a}, {b})")));
        }
        if self.detunings.iter().chain(&self.g).any(|v| !v.is_finite()) {
            return Err(Error::Validation("non-finite detuning or coupling".into()));
        }
        Ok(())
    }

    /// Dense drift matrix `A`.
    pub fn drift(&self) -> DMatrix<f64> {
        let d = self.dim();
        let mut a = DMatrix::zeros(d, d);
        a[(0, 1)] = self.omega_m;
        a[(1, 0)] = -self.omega_m;
        a[(0, 0)] = -self.mech_damping / 2.0;
        a[(1, 1)] = -self.mech_damping / 2.0;
        for b in 0..self.optical_modes() {
            let (q, p) = (2 + 2 * b, 3 + 2 * b);
            a[(1, q)] = -2.0 * self.g[b];
            a[(q, p)] = self.detunings[b];
            a[(p, q)] = -self.detunings[b];
            a[(q, q)] = -self.kappa[b] / 2.0;
            a[(p, p)] = -self.kappa[b] / 2.0;
            a[(p, 0)] = -2.0 * self.g[b];
        }
        for &(i, j, v) in &self.mode_couplings {
            let (qi, pi, qj, pj) = (2 + 2 * i, 3 + 2 * i, 2 + 2 * j, 3 + 2 * j);
            a[(qi, pj)] = v;
            a[(qj, pi)] = v;
            a[(pi, qj)] = -v;
            a[(pj, qi)] = -v;
        }
        a
    }

    /// Dense (diagonal) diffusion matrix `D`.
    pub fn diffusion(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_vec(self.diffusion_diagonal()))
    }

    fn diffusion_diagonal(&self) -> Vec<f64> {
        let mut d = vec![self.mech_damping, self.mech_damping + 4.0 * self.gamma];
        for k in &self.kappa {
            d.push(*k);
            d.push(*k);
        }
        d
    }

    /// `out = rA` for a row vector `r`, without forming `A`.
    fn row_times_drift(&self, r: &[f64], out: &mut [f64]) {
        let w = self.omega_m;
        let h = self.mech_damping / 2.0;
        out[0] = -w * r[1] - h * r[0];
        out[1] = w * r[0] - h * r[1];
        for b in 0..self.optical_modes() {
            let (q, p) = (2 + 2 * b, 3 + 2 * b);
            let (g, l, h) = (self.g[b], self.detunings[b], self.kappa[b] / 2.0);
            out[0] -= 2.0 * g * r[p];
            out[q] = -2.0 * g * r[1] - l * r[p] - h * r[q];
            out[p] = l * r[q] - h * r[p];
        }
        for &(i, j, v) in &self.mode_couplings {
            let (qi, pi, qj, pj) = (2 + 2 * i, 3 + 2 * i, 2 + 2 * j, 3 + 2 * j);
            out[qj] -= v * r[pi];
            out[qi] -= v * r[pj];
            out[pj] += v * r[qi];
            out[pi] += v * r[qj];
        }
    }
}

/// Where a linear model comes from.
#[derive(Debug, Clone, Copy)]
pub enum ModelSource<'a> {
    Reduced(&'a ReducedModel),
    /// Few-mode model with the mechanical frequency Ω.
    FewMode(&'a FewModeModel, f64),
}

/// Assembles the linear model of a reduced or few-mode description.
///
/// ```
/// use recoil::dynamics::{build_linear_model, ModelSource};
/// use recoil::reduce::ReducedModel;
/// let r = ReducedModel {
///     omega_c: Some(1.0e15 + 2.0e5), g: Some(1.0e4), kappa: Some(1.0e5),
///     gamma: 10.0, omega: 2.0e5, omega0: 1.0e15,
///     contributions: vec![], kappa_contributions: vec![], notes: vec![],
///     config_hash: None, tool_version: None,
/// };
/// let m = build_linear_model(ModelSource::Reduced(&r), false).unwrap();
/// assert_eq!(m.dim(), 4);
/// assert_eq!(m.gamma, 0.0);
/// ```
pub fn build_linear_model(source: ModelSource<'_>, include_recoil: bool) -> Result<LinearModel> {
    let m = match source {
        ModelSource::Reduced(r) => {
            let gamma = if include_recoil { r.gamma } else { 0.0 };
            match (r.detuning(), r.g, r.kappa) {
                (Some(d), Some(g), Some(k)) => LinearModel {
                    omega_m: r.omega,
                    detunings: vec![d],
                    mode_couplings: vec![],
                    kappa: vec![k],
                    g: vec![g],
                    gamma,
                    mech_damping: 0.0,
                    recurrence_time: None,
                },
                _ => LinearModel {
                    omega_m: r.omega,
                    detunings: vec![],
                    mode_couplings: vec![],
                    kappa: vec![],
                    g: vec![],
                    gamma,
                    mech_damping: 0.0,
                    recurrence_time: None,
                },
            }
        }
        ModelSource::FewMode(f, omega) => {
            f.validate()?;
            let n = f.n();
            let mut couplings = Vec::new();
            for a in 0..n {
                for b in a + 1..n {
                    if f.lambda[(a, b)] != 0.0 {
                        couplings.push((a, b, f.lambda[(a, b)]));
                    }
                }
            }
            LinearModel {
                omega_m: omega,
                detunings: (0..n).map(|b| f.lambda[(b, b)]).collect(),
                mode_couplings: couplings,
                kappa: f.kappa.clone(),
                g: f.g.clone(),
                gamma: 0.0,
                mech_damping: 0.0,
                recurrence_time: None,
            }
        }
    };
    m.validate()?;
    Ok(m)
}

/// Discretizes `J` into `modes` lossless modes on a uniform grid with
/// couplings `g_k = √(J(ω_k)Δω)`.
///
/// `horizon`, when given, must stay below the recurrence time `2π/Δω`.
pub fn discretize_continuum(
    j: &SpectralDensity,
    modes: usize,
    omega_m: f64,
    horizon: Option<f64>,
) -> Result<LinearModel> {
    j.validate()?;
    if modes < 2 {
        return Err(Error::Resolution(format!("need at least 2 modes, got {modes}")));
    }
    let det = j.detunings();
    let (lo, hi) = (det[0], det[det.len() - 1]);
    let dw = (hi - lo) / modes as f64;
    if !(lo < -omega_m - dw && hi > omega_m + dw) {
        return Err(Error::Resolution(format!(
            "band [{lo:e}, {hi:e}] rad/s around the laser does not enclose both sidebands ±{omega_m:e}"
        )));
    }
    let t_rec = 2.0 * PI / dw;
    if let Some(t) = horizon {
        if t >= t_rec {
            return Err(Error::Resolution(format!(
                "horizon {t:e} s exceeds the recurrence time {t_rec:e} s of {modes} modes; increase M"
            )));
        }
    }
    let detunings: Vec<f64> = (0..modes).map(|k| lo + (k as f64 + 0.5) * dw).collect();
    let g = detunings.iter().map(|d| (j.interpolate(j.meta.omega0 + d).max(0.0) * dw).sqrt()).collect();
    let m = LinearModel {
        omega_m,
        kappa: vec![0.0; modes],
        mode_couplings: vec![],
        detunings,
        g,
        gamma: 0.0,
        mech_damping: 0.0,
        recurrence_time: Some(t_rec),
    };
    m.validate()?;
    Ok(m)
}

/// First and second moments of all quadratures.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianState {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

/// A [`GaussianState`] in plain vectors with its convention spelled out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SerializedState {
    pub convention: String,
    pub mean: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
}

impl GaussianState {
    pub fn vacuum(dim: usize) -> Self {
        GaussianState { mean: DVector::zeros(dim), cov: DMatrix::identity(dim, dim) }
    }

    /// Vacuum everywhere except a thermal mechanical mode with occupation `n`.
    pub fn thermal_mechanics(dim: usize, n: f64) -> Self {
        let mut s = Self::vacuum(dim);
        s.cov[(0, 0)] = 2.0 * n + 1.0;
        s.cov[(1, 1)] = 2.0 * n + 1.0;
        s
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Smallest eigenvalue of `σ + iJ`; non-negative for physical states.
    pub fn physicality_margin(&self) -> f64 {
        let d = self.dim();
        let h = DMatrix::from_fn(d, d, |i, j| {
            let mut v = Complex64::new(self.cov[(i, j)], 0.0);
            if i / 2 == j / 2 && i != j {
                v.im = if i % 2 == 0 { 1.0 } else { -1.0 };
            }
            v
        });
        h.symmetric_eigenvalues().min()
    }

    pub fn is_physical(&self) -> bool {
        let scale = self.cov.amax().max(1.0);
        self.physicality_margin() >= -PHYSICALITY_TOL * scale
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if !d.is_multiple_of(2) || self.cov.nrows() != d || self.cov.ncols() != d {
            return Err(Error::Validation("state dimensions must be even and consistent".into()));
        }
        let asym = (&self.cov - self.cov.transpose()).amax();
        if asym > 1e-12 * self.cov.amax().max(1.0) {
            return Err(Error::Validation(format!("covariance not symmetric (asymmetry {asym:e})")));
        }
        if !self.is_physical() {
            return Err(Error::Validation(format!(
                "state violates sigma + iJ >= 0 (margin {:e})",
                self.physicality_margin()
            )));
        }
        Ok(())
    }

    pub fn serialize(&self) -> SerializedState {
        SerializedState {
            convention: CONVENTION.to_string(),
            mean: self.mean.iter().copied().collect(),
            cov: (0..self.dim()).map(|i| self.cov.row(i).iter().copied().collect()).collect(),
        }
    }
}

/// `n = (σ_qq + σ_pp + q̄² + p̄² − 2)/4` for mode `mode` (0 is the mechanics).
///
/// ```
/// use recoil::dynamics::{phonon_occupation, GaussianState};
/// let mut s = GaussianState::vacuum(2);
/// assert_eq!(phonon_occupation(&s, 0), 0.0);
/// s.mean[0] = 2.0;
/// assert_eq!(phonon_occupation(&s, 0), 1.0);
/// ```
pub fn phonon_occupation(s: &GaussianState, mode: usize) -> f64 {
    let (q, p) = (2 * mode, 2 * mode + 1);
    (s.cov[(q, q)] + s.cov[(p, p)] + s.mean[q].powi(2) + s.mean[p].powi(2) - 2.0) / 4.0
}

/// Integrator tolerances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DtOptions {
    pub rtol: f64,
    /// Absolute tolerance, multiplied by the largest initial covariance entry.
    pub atol: f64,
    pub max_steps: u32,
}

impl Default for DtOptions {
    fn default() -> Self {
        DtOptions { rtol: 1e-12, atol: 1e-12, max_steps: 1_000_000 }
    }
}

#[derive(Clone)]
struct Moments<'a> {
    a: &'a DMatrix<f64>,
    d: &'a [f64],
}

impl System<f64, DVector<f64>> for Moments<'_> {
    fn system(&self, _t: f64, y: &DVector<f64>, dy: &mut DVector<f64>) {
        let n = self.d.len();
        let mean = y.rows(0, n);
        dy.rows_mut(0, n).copy_from(&(self.a * mean));
        let sigma = DMatrix::from_column_slice(n, n, &y.as_slice()[n..]);
        let a_sigma = self.a * &sigma;
        let mut ds = &a_sigma + a_sigma.transpose();
        for (i, v) in self.d.iter().enumerate() {
            ds[(i, i)] += v;
        }
        dy.rows_mut(n, n * n).copy_from_slice(ds.as_slice());
    }
}

fn integration_error(e: IntegrationError) -> Error {
    Error::Stiffness(format!("{e:?}"))
}

/// Runs Dopri5 from 0 to `t_end`, restarting at each of `samples` equal
/// intervals so every reported state is an accepted step rather than an
/// interpolant; returns `samples + 1` states including the initial one.
fn integrate<S: System<f64, DVector<f64>> + Clone>(
    sys: S,
    y0: DVector<f64>,
    t_end: f64,
    samples: usize,
    rtol: f64,
    atol: f64,
    max_steps: u32,
) -> Result<Vec<(f64, DVector<f64>)>> {
    let dt = t_end / samples as f64;
    let mut out = Vec::with_capacity(samples + 1);
    out.push((0.0, y0));
    if t_end == 0.0 {
        return Ok(out);
    }
    let mut steps = 0u32;
    for k in 0..samples {
        let y = out[k].1.clone();
        let (t0, t1) = (dt * k as f64, dt * (k + 1) as f64);
        let mut solver = Dopri5::from_param(
            sys.clone(),
            t0,
            t1,
            0.0,
            y,
            rtol,
            atol,
            0.9,
            0.04,
            0.2,
            10.0,
            t1 - t0,
            0.0,
            max_steps.saturating_sub(steps).max(1),
            1000,
            OutputType::Sparse,
        );
        let stats = solver.integrate().map_err(integration_error)?;
        steps += stats.accepted_steps + stats.rejected_steps;
        let y = solver.y_out().last().cloned().expect("solver returns the final state");
        out.push((t1, y));
    }
    Ok(out)
}

fn check_state(m: &LinearModel, s: &GaussianState) -> Result<()> {
    m.validate()?;
    if s.dim() != m.dim() {
        return Err(Error::Validation(format!("state has dimension {}, model {}", s.dim(), m.dim())));
    }
    s.validate()
}

/// Evolves mean and covariance, returning the state at `samples + 1` equally
/// spaced times in `[0, t_end]`. Physicality is checked at every sample.
pub fn evolve_trajectory(
    m: &LinearModel,
    s0: &GaussianState,
    t_end: f64,
    samples: usize,
    opts: &DtOptions,
) -> Result<Vec<(f64, GaussianState)>> {
    check_state(m, s0)?;
    if !(t_end >= 0.0) || samples == 0 {
        return Err(Error::Validation("need t_end >= 0 and at least one sample".into()));
    }
    let n = m.dim();
    let a = m.drift();
    let d = m.diffusion_diagonal();
    let mut y0 = DVector::zeros(n + n * n);
    y0.rows_mut(0, n).copy_from(&s0.mean);
    y0.rows_mut(n, n * n).copy_from_slice(s0.cov.as_slice());
    let scale = s0.cov.amax().max(1.0);
    let raw = integrate(Moments { a: &a, d: &d }, y0, t_end, samples, opts.rtol, opts.atol * scale, opts.max_steps)?;
    raw.into_iter().map(|(t, y)| unpack_state(t, n, &y)).collect()
}

fn unpack_state(t: f64, n: usize, y: &DVector<f64>) -> Result<(f64, GaussianState)> {
    let cov = DMatrix::from_column_slice(n, n, &y.as_slice()[n..n + n * n]);
    let s = GaussianState { mean: y.rows(0, n).into_owned(), cov: (&cov + cov.transpose()) / 2.0 };
    if !s.is_physical() {
        return Err(Error::Numeric(format!(
            "state lost physicality at t = {t:e} (margin {:e}); tighten tolerances",
            s.physicality_margin()
        )));
    }
    Ok((t, s))
}

/// Like [`evolve_trajectory`], but steps with the exact one-interval
/// propagator `exp(L·dt)` of the vectorized moment equations instead of an
/// adaptive integrator. Cost grows as `dim⁶`, so this is for small models
/// whose rates span many decades (a fitted broad mode), where the adaptive
/// integrator reports stiffness.
pub fn evolve_trajectory_exact(
    m: &LinearModel,
    s0: &GaussianState,
    t_end: f64,
    samples: usize,
) -> Result<Vec<(f64, GaussianState)>> {
    check_state(m, s0)?;
    if !(t_end >= 0.0) || samples == 0 {
        return Err(Error::Validation("need t_end >= 0 and at least one sample".into()));
    }
    let n = m.dim();
    let a = m.drift();
    let d = m.diffusion();
    let dt = t_end / samples as f64;
    let phi = (&a * dt).exp();
    // [vec σ; 1]' = [[I⊗A + A⊗I, vec D], [0, 0]]·[vec σ; 1]
    let nn = n * n;
    let mut gen = DMatrix::zeros(nn + 1, nn + 1);
    let eye = DMatrix::<f64>::identity(n, n);
    gen.view_mut((0, 0), (nn, nn)).copy_from(&(eye.kronecker(&a) + a.kronecker(&eye)));
    gen.view_mut((0, nn), (nn, 1)).copy_from_slice(d.as_slice());
    let step = (gen * dt).exp();
    let mut y = DVector::zeros(n + nn);
    y.rows_mut(0, n).copy_from(&s0.mean);
    y.rows_mut(n, nn).copy_from_slice(s0.cov.as_slice());
    let mut out = vec![unpack_state(0.0, n, &y)?];
    let mut v = DVector::zeros(nn + 1);
    for k in 1..=samples {
        let mean = &phi * y.rows(0, n);
        v.rows_mut(0, nn).copy_from(&y.rows(n, nn));
        v[nn] = 1.0;
        let w = &step * &v;
        y.rows_mut(0, n).copy_from(&mean);
        y.rows_mut(n, nn).copy_from(&w.rows(0, nn));
        out.push(unpack_state(dt * k as f64, n, &y)?);
    }
    Ok(out)
}

/// State at time `t`.
pub fn evolve_covariance(m: &LinearModel, s0: &GaussianState, t: f64, opts: &DtOptions) -> Result<GaussianState> {
    let mut traj = evolve_trajectory(m, s0, t, 1, opts)?;
    Ok(traj.pop().expect("trajectory has at least one state").1)
}

/// Solves `Aσ + σAᵀ + D = 0`.
pub fn steady_state(m: &LinearModel) -> Result<GaussianState> {
    m.validate()?;
    let a = m.drift();
    let n = a.nrows();
    let eig = a.complex_eigenvalues();
    if let Some(l) = eig.iter().find(|l| l.re >= 0.0) {
        return Err(Error::Instability(format!(
            "drift matrix is not Hurwitz: eigenvalue {:e}{:+e}i has non-negative real part",
            l.re, l.im
        )));
    }
    let id = DMatrix::<f64>::identity(n, n);
    let lyap = id.kronecker(&a) + a.kronecker(&id);
    let rhs = -DVector::from_column_slice(m.diffusion().as_slice());
    let x = lyap.lu().solve(&rhs).ok_or_else(|| Error::Numeric("Lyapunov system is singular".into()))?;
    let cov = DMatrix::from_column_slice(n, n, x.as_slice());
    Ok(GaussianState { mean: DVector::zeros(n), cov: (&cov + cov.transpose()) / 2.0 })
}

/// Mechanical moments at one time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MechanicalSample {
    pub t: f64,
    pub n: f64,
    pub sigma_qq: f64,
    pub sigma_pp: f64,
    pub sigma_qp: f64,
    pub mean_q: f64,
    pub mean_p: f64,
}

/// Initial mechanical state for [`evolve_mechanics`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeState {
    pub mean: [f64; 2],
    pub cov: [[f64; 2]; 2],
}

impl ModeState {
    pub fn thermal(n: f64) -> Self {
        ModeState { mean: [0.0; 2], cov: [[2.0 * n + 1.0, 0.0], [0.0, 2.0 * n + 1.0]] }
    }
}

#[derive(Clone)]
struct Adjoint<'a> {
    m: &'a LinearModel,
    d: Vec<f64>,
}

impl System<f64, DVector<f64>> for Adjoint<'_> {
    fn system(&self, _t: f64, y: &DVector<f64>, dy: &mut DVector<f64>) {
        let n = self.d.len();
        let (rq, rest) = y.as_slice().split_at(n);
        let rp = &rest[..n];
        let out = dy.as_mut_slice();
        {
            let (oq, orest) = out.split_at_mut(n);
            self.m.row_times_drift(rq, oq);
            self.m.row_times_drift(rp, &mut orest[..n]);
        }
        let (mut qq, mut pp, mut qp) = (0.0, 0.0, 0.0);
        for i in 0..n {
            let d = self.d[i];
            if d != 0.0 {
                qq += rq[i] * d * rq[i];
                pp += rp[i] * d * rp[i];
                qp += rq[i] * d * rp[i];
            }
        }
        out[2 * n] = qq;
        out[2 * n + 1] = pp;
        out[2 * n + 2] = qp;
    }
}

/// Mechanical moments for optical modes starting in vacuum, at `samples + 1`
/// equally spaced times in `[0, t_end]`.
///
/// Propagates only the two mechanical rows of `e^{At}` (`r' = rA`) together
/// with `∫ r D rᵀ dt`, so the cost is linear in the number of modes. This is
/// what makes thousand-mode continua tractable.
pub fn evolve_mechanics(
    m: &LinearModel,
    mech0: &ModeState,
    t_end: f64,
    samples: usize,
    opts: &DtOptions,
) -> Result<Vec<MechanicalSample>> {
    m.validate()?;
    if !(t_end >= 0.0) || samples == 0 {
        return Err(Error::Validation("need t_end >= 0 and at least one sample".into()));
    }
    if let Some(t_rec) = m.recurrence_time {
        if t_end >= t_rec {
            return Err(Error::Resolution(format!("horizon {t_end:e} s beyond the recurrence time {t_rec:e} s")));
        }
    }
    let n = m.dim();
    let mut y0 = DVector::zeros(2 * n + 3);
    y0[0] = 1.0;
    y0[n + 1] = 1.0;
    let raw =
        integrate(Adjoint { m, d: m.diffusion_diagonal() }, y0, t_end, samples, opts.rtol, opts.atol, opts.max_steps)?;
    let c = &mech0.cov;
    Ok(raw
        .into_iter()
        .map(|(t, y)| {
            let rq = &y.as_slice()[..n];
            let rp = &y.as_slice()[n..2 * n];
            // r σ₀ rᵀ with σ₀ = mechanics ⊕ vacuum
            let init = |a: &[f64], b: &[f64]| {
                let mech = a[0] * (c[0][0] * b[0] + c[0][1] * b[1]) + a[1] * (c[1][0] * b[0] + c[1][1] * b[1]);
                let vac: f64 = a[2..].iter().zip(&b[2..]).map(|(x, y)| x * y).sum();
                mech + vac
            };
            let sigma_qq = init(rq, rq) + y[2 * n];
            let sigma_pp = init(rp, rp) + y[2 * n + 1];
            let sigma_qp = init(rq, rp) + y[2 * n + 2];
            let mean_q = rq[0] * mech0.mean[0] + rq[1] * mech0.mean[1];
            let mean_p = rp[0] * mech0.mean[0] + rp[1] * mech0.mean[1];
            MechanicalSample {
                t,
                n: (sigma_qq + sigma_pp + mean_q * mean_q + mean_p * mean_p - 2.0) / 4.0,
                sigma_qq,
                sigma_pp,
                sigma_qp,
                mean_q,
                mean_p,
            }
        })
        .collect())
}

/// One row of a trajectory file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub t_s: f64,
    pub n_mech: f64,
    pub n_cav: Option<f64>,
    pub sigma_qq: f64,
    pub sigma_pp: f64,
}

impl TrajectoryRow {
    pub fn from_state(t: f64, s: &GaussianState) -> Self {
        TrajectoryRow {
            t_s: t,
            n_mech: phonon_occupation(s, 0),
            n_cav: (s.dim() > 2).then(|| phonon_occupation(s, 1)),
            sigma_qq: s.cov[(0, 0)],
            sigma_pp: s.cov[(1, 1)],
        }
    }

    pub fn from_mechanics(s: &MechanicalSample) -> Self {
        TrajectoryRow { t_s: s.t, n_mech: s.n, n_cav: None, sigma_qq: s.sigma_qq, sigma_pp: s.sigma_pp }
    }
}

/// Writes `t_s,n_mech,n_cav,sigma_qq,sigma_pp` CSV; an absent cavity leaves `n_cav` empty.
pub fn write_trajectory(path: &Path, rows: &[TrajectoryRow]) -> Result<()> {
    let mut f = File::create(path)?;
    writeln!(f, "t_s,n_mech,n_cav,sigma_qq,sigma_pp")?;
    for r in rows {
        let cav = r.n_cav.map(|v| format!("{v:e}")).unwrap_or_default();
        writeln!(f, "{:e},{:e},{cav},{:e},{:e}", r.t_s, r.n_mech, r.sigma_qq, r.sigma_pp)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mech_only(gamma: f64) -> LinearModel {
        LinearModel {
            omega_m: 1.0,
            detunings: vec![],
            mode_couplings: vec![],
            kappa: vec![],
            g: vec![],
            gamma,
            mech_damping: 0.0,
            recurrence_time: None,
        }
    }

    fn cooling() -> LinearModel {
        LinearModel {
            omega_m: 1.0,
            detunings: vec![1.0],
            mode_couplings: vec![],
            kappa: vec![0.5],
            g: vec![0.05],
            gamma: 1e-3,
            mech_damping: 0.0,
            recurrence_time: None,
        }
    }

    #[test]
    fn occupation_examples() {
        let s = GaussianState::thermal_mechanics(2, 3.5);
        assert!((phonon_occupation(&s, 0) - 3.5).abs() < 1e-15);
    }

    #[test]
    fn linear_heating_is_exact() {
        for gamma in [1e-2, 1.0, 1e2] {
            let s =
                evolve_covariance(&mech_only(gamma), &GaussianState::vacuum(2), 1.0, &DtOptions::default()).unwrap();
            let n = phonon_occupation(&s, 0);
            assert!((n - gamma).abs() < 1e-8 * gamma, "{gamma}: {n}");
        }
    }

    #[test]
    fn vacuum_is_stationary_without_recoil() {
        let s = evolve_covariance(&mech_only(0.0), &GaussianState::vacuum(2), 10.0, &DtOptions::default()).unwrap();
        assert!((&s.cov - DMatrix::identity(2, 2)).amax() < 1e-12);
    }

    #[test]
    fn rotation_conserves_phonons() {
        let mut s0 = GaussianState::thermal_mechanics(2, 2.0);
        s0.mean[0] = 3.0;
        let t = 2.0 * PI * 1000.0;
        let s = evolve_covariance(&mech_only(0.0), &s0, t, &DtOptions::default()).unwrap();
        let n0 = phonon_occupation(&s0, 0);
        let drift = (phonon_occupation(&s, 0) - n0).abs() / n0;
        assert!(drift < 1e-8, "{drift:e}");
    }

    #[test]
    fn damped_mode_relaxes_to_vacuum() {
        let m = LinearModel { g: vec![0.0], ..cooling() };
        let mut s0 = GaussianState::vacuum(4);
        s0.cov[(2, 2)] = 9.0;
        s0.cov[(3, 3)] = 9.0;
        let s = evolve_covariance(&m, &s0, 100.0, &DtOptions::default()).unwrap();
        assert!(phonon_occupation(&s, 1).abs() < 1e-9);
    }

    #[test]
    fn lyapunov_matches_long_time_evolution() {
        let m = cooling();
        let ss = steady_state(&m).unwrap();
        let s =
            evolve_covariance(&m, &GaussianState::thermal_mechanics(4, 5.0), 2000.0, &DtOptions::default()).unwrap();
        let diff = (&s.cov - &ss.cov).amax();
        assert!(diff < 1e-6 * ss.cov.amax(), "{diff:e}");
        assert!(ss.is_physical());
    }

    #[test]
    fn damped_modes_steady_state_is_vacuum() {
        let m = LinearModel { g: vec![0.0], gamma: 0.0, mech_damping: 1.0, ..cooling() };
        let ss = steady_state(&m).unwrap();
        assert!((&ss.cov - DMatrix::identity(4, 4)).amax() < 1e-12);
    }

    #[test]
    fn undamped_heating_is_unstable() {
        assert!(matches!(steady_state(&mech_only(1.0)), Err(Error::Instability(_))));
    }

    #[test]
    fn adjoint_rows_match_dense_evolution() {
        let m = LinearModel {
            omega_m: 1.0,
            detunings: vec![1.0, -3.0, 0.5],
            mode_couplings: vec![(0, 1, 0.3), (1, 2, -0.2)],
            kappa: vec![0.5, 2.0, 0.0],
            g: vec![0.1, -0.2, 0.05],
            gamma: 0.01,
            mech_damping: 0.3,
            recurrence_time: None,
        };
        let mut s0 = GaussianState::thermal_mechanics(m.dim(), 4.0);
        s0.mean[0] = 1.5;
        s0.mean[1] = -0.5;
        let mech = ModeState { mean: [1.5, -0.5], cov: [[9.0, 0.0], [0.0, 9.0]] };
        let dense = evolve_trajectory(&m, &s0, 20.0, 10, &DtOptions::default()).unwrap();
        let rows = evolve_mechanics(&m, &mech, 20.0, 10, &DtOptions::default()).unwrap();
        assert_eq!(dense.len(), rows.len());
        for ((t, s), r) in dense.iter().zip(&rows) {
            assert!((t - r.t).abs() < 1e-12);
            assert!((phonon_occupation(s, 0) - r.n).abs() < 1e-7, "{t}: {} vs {}", phonon_occupation(s, 0), r.n);
            assert!((s.cov[(0, 1)] - r.sigma_qp).abs() < 1e-7);
        }
    }

    #[test]
    fn exact_propagator_matches_integrator() {
        let m = LinearModel {
            omega_m: 1.0,
            detunings: vec![1.0, -3.0],
            mode_couplings: vec![(0, 1, 0.3)],
            kappa: vec![0.5, 2.0],
            g: vec![0.1, -0.2],
            gamma: 0.01,
            mech_damping: 0.0,
            recurrence_time: None,
        };
        let mut s0 = GaussianState::thermal_mechanics(m.dim(), 4.0);
        s0.mean[0] = 1.5;
        let a = evolve_trajectory(&m, &s0, 20.0, 10, &DtOptions::default()).unwrap();
        let b = evolve_trajectory_exact(&m, &s0, 20.0, 10).unwrap();
        for ((_, x), (_, y)) in a.iter().zip(&b) {
            assert!((&x.cov - &y.cov).amax() < 1e-8);
            assert!((&x.mean - &y.mean).amax() < 1e-8);
        }
    }

    #[test]
    fn exact_propagator_handles_a_very_broad_mode() {
        // a 1e9-wide mode heats at 4g²/κ
        let (g, k) = (1e3, 1e9);
        let m = LinearModel {
            omega_m: 1.0,
            detunings: vec![0.0],
            mode_couplings: vec![],
            kappa: vec![k],
            g: vec![g],
            gamma: 0.0,
            mech_damping: 0.0,
            recurrence_time: None,
        };
        let s0 = GaussianState::vacuum(m.dim());
        let t = 10.0;
        let traj = evolve_trajectory_exact(&m, &s0, t, 5).unwrap();
        let n = phonon_occupation(&traj[5].1, 0);
        let expect = 4.0 * g * g / k * t;
        assert!((n / expect - 1.0).abs() < 1e-3, "{n} vs {expect}");
    }

    #[test]
    fn negative_rates_rejected() {
        let m = LinearModel { kappa: vec![-1.0], ..cooling() };
        assert!(matches!(m.validate(), Err(Error::Validation(_))));
    }
}
