//! Few-mode (pseudomode) model of a spectral density.
//!
//! `N` lossy modes with couplings `g`, decay rates `κ` and a real symmetric
//! frequency/coupling matrix `Λ` (rotating frame, `Λ_ββ = ω_β − ω₀`) give
//!
//! ```text
//! J_mod(δ) = π⁻¹ gᵀ Im[(Λ − i·diag(κ/2) − δ𝟙)⁻¹] g
//! ```
//!
//! where `δ = ω − ω₀`. The fit minimizes a weighted log residual with
//! Levenberg-Marquardt from several seeded starting points.

use std::f64::consts::PI;

use levenberg_marquardt::{LeastSquaresProblem, LevenbergMarquardt};
use nalgebra::storage::Owned;
use nalgebra::{DMatrix, DVector, Dyn};
use num_complex::Complex64;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::SpectralDensity;

/// N discrete lossy modes.
#[derive(Debug, Clone, PartialEq)]
pub struct FewModeModel {
    pub g: Vec<f64>,
    pub kappa: Vec<f64>,
    pub lambda: DMatrix<f64>,
}

impl FewModeModel {
    pub fn new(g: Vec<f64>, kappa: Vec<f64>, lambda: DMatrix<f64>) -> Result<Self> {
        let m = FewModeModel { g, kappa, lambda };
        m.validate()?;
        Ok(m)
    }

    /// Builds Λ from row-major nested vectors.
    pub fn from_rows(g: Vec<f64>, kappa: Vec<f64>, lambda: &[Vec<f64>]) -> Result<Self> {
        let n = lambda.len();
        if lambda.iter().any(|r| r.len() != n) {
            return Err(Error::Validation("Lambda must be square".into()));
        }
        let l = DMatrix::from_fn(n, n, |i, j| lambda[i][j]);
        Self::new(g, kappa, l)
    }

    pub fn n(&self) -> usize {
        self.g.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.g.len();
        if n == 0 {
            return Err(Error::Validation("model needs at least one mode".into()));
        }
        if self.kappa.len() != n || self.lambda.nrows() != n || self.lambda.ncols() != n {
            return Err(Error::Validation(format!(
                "inconsistent sizes: {} couplings, {} decay rates, {}x{} Lambda",
                n,
                self.kappa.len(),
                self.lambda.nrows(),
                self.lambda.ncols()
            )));
        }
        if let Some((i, k)) = self.kappa.iter().enumerate().find(|(_, k)| !(**k > 0.0 && k.is_finite())) {
            return Err(Error::Validation(format!("kappa[{i}] = {k:e} must be positive")));
        }
        if self.g.iter().chain(self.lambda.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Validation("non-finite coupling or Lambda entry".into()));
        }
        let scale = self.lambda.amax().max(f64::MIN_POSITIVE);
        for i in 0..n {
            for j in 0..i {
                if (self.lambda[(i, j)] - self.lambda[(j, i)]).abs() > 1e-12 * scale {
                    return Err(Error::Validation(format!("Lambda not symmetric at ({i}, {j})")));
                }
            }
        }
        Ok(())
    }

    /// Λ as row-major nested vectors.
    pub fn lambda_rows(&self) -> Vec<Vec<f64>> {
        (0..self.n()).map(|i| self.lambda.row(i).iter().copied().collect()).collect()
    }

    /// Same model with every rate multiplied by `s`; `J_mod` scales as
    /// `J'(sδ) = s·J(δ)`.
    pub fn scaled(&self, s: f64) -> FewModeModel {
        FewModeModel {
            g: self.g.iter().map(|g| g * s).collect(),
            kappa: self.kappa.iter().map(|k| k * s).collect(),
            lambda: &self.lambda * s,
        }
    }

    /// Sign-flips modes to `g ≥ 0` and sorts by `Λ_ββ` (ties by κ).
    pub fn canonicalize(&self) -> FewModeModel {
        let n = self.n();
        let s: Vec<f64> = self.g.iter().map(|g| if *g < 0.0 { -1.0 } else { 1.0 }).collect();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            self.lambda[(a, a)].total_cmp(&self.lambda[(b, b)]).then(self.kappa[a].total_cmp(&self.kappa[b]))
        });
        FewModeModel {
            g: order.iter().map(|&i| self.g[i] * s[i]).collect(),
            kappa: order.iter().map(|&i| self.kappa[i]).collect(),
            lambda: DMatrix::from_fn(n, n, |i, j| {
                let (a, b) = (order[i], order[j]);
                self.lambda[(a, b)] * s[a] * s[b]
            }),
        }
    }

    fn resolvent_vector(&self, delta: f64) -> DVector<Complex64> {
        let n = self.n();
        let m = DMatrix::from_fn(n, n, |i, j| {
            let mut v = Complex64::new(self.lambda[(i, j)], 0.0);
            if i == j {
                v -= Complex64::new(delta, self.kappa[i] / 2.0);
            }
            v
        });
        let g = DVector::from_iterator(n, self.g.iter().map(|g| Complex64::new(*g, 0.0)));
        // M has a strictly negative-definite imaginary part, so it is never singular.
        m.lu().solve(&g).expect("resolvent is invertible for positive kappa")
    }
}

/// Evaluates `J_mod(δ)` at detuning `δ = ω − ω₀`.
pub fn eval_jmod(m: &FewModeModel, delta: f64) -> f64 {
    let x = m.resolvent_vector(delta);
    let q: Complex64 = m.g.iter().zip(x.iter()).map(|(g, x)| g * x).sum();
    q.im / PI
}

/// `J_mod` and its gradient with respect to `[g, ln κ, upper(Λ)]`.
///
/// The fit itself uses `h = g/√κ` in place of `g`: for a broad mode `J ≈ 2h²/π`
/// then decouples from `ln κ`, which otherwise forms a long curved valley.
fn jmod_with_gradient(m: &FewModeModel, delta: f64, grad: &mut [f64]) -> f64 {
    let n = m.n();
    let x = m.resolvent_vector(delta);
    let q: Complex64 = m.g.iter().zip(x.iter()).map(|(g, x)| g * x).sum();
    for b in 0..n {
        grad[b] = 2.0 * x[b].im / PI;
        grad[n + b] = m.kappa[b] * (x[b] * x[b]).re / (2.0 * PI);
    }
    let mut k = 2 * n;
    for a in 0..n {
        for b in a..n {
            let f = if a == b { 1.0 } else { 2.0 };
            grad[k] = -f * (x[a] * x[b]).im / PI;
            k += 1;
        }
    }
    q.im / PI
}

/// Upper bound on ln κ in scaled units (window half-width 1). A wider mode is
/// flat to ~10⁻¹² across the window, so the fit cannot tell it apart.
const LN_KAPPA_MAX: f64 = 13.8;

fn n_params(n: usize) -> usize {
    2 * n + n * (n + 1) / 2
}

fn pack(m: &FewModeModel) -> DVector<f64> {
    let n = m.n();
    let mut p = Vec::with_capacity(n_params(n));
    p.extend(m.g.iter().zip(&m.kappa).map(|(g, k)| g / k.sqrt()));
    p.extend(m.kappa.iter().map(|k| k.ln()));
    for a in 0..n {
        for b in a..n {
            p.push(m.lambda[(a, b)]);
        }
    }
    DVector::from_vec(p)
}

fn unpack(p: &DVector<f64>, n: usize) -> FewModeModel {
    let mut lambda = DMatrix::zeros(n, n);
    let mut k = 2 * n;
    for a in 0..n {
        for b in a..n {
            lambda[(a, b)] = p[k];
            lambda[(b, a)] = p[k];
            k += 1;
        }
    }
    let kappa: Vec<f64> = p.rows(n, n).iter().map(|z| z.min(LN_KAPPA_MAX).exp()).collect();
    FewModeModel { g: (0..n).map(|b| p[b] * kappa[b].sqrt()).collect(), kappa, lambda }
}

/// Mode classification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeLabel {
    Narrow,
    Broad,
    Detuned,
}

/// Ratios used by [`classify_modes`] and by the reduction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifyThresholds {
    /// κ_β must exceed this multiple of every competing scale to count as broad.
    pub ratio: f64,
    /// |Λ_ββ| must exceed this multiple of κ_β to count as detuned.
    pub detune: f64,
}

impl Default for ClassifyThresholds {
    fn default() -> Self {
        ClassifyThresholds { ratio: 10.0, detune: 10.0 }
    }
}

/// Labels each mode broad, detuned or narrow.
///
/// `frame_offset` is the detuning of the classification frame from the
/// model's ω₀ (normally zero). The competing decay scale for mode β is the
/// smallest κ among the other modes.
pub fn classify_modes(m: &FewModeModel, frame_offset: f64, th: &ClassifyThresholds) -> Vec<ModeLabel> {
    let n = m.n();
    (0..n)
        .map(|b| {
            let kb = m.kappa[b];
            let lb = (m.lambda[(b, b)] - frame_offset).abs();
            let k_other = (0..n).filter(|&a| a != b).map(|a| m.kappa[a]).fold(f64::INFINITY, f64::min);
            let k_other = if k_other.is_finite() { k_other } else { 0.0 };
            let scale = k_other.max(lb).max(m.g[b].abs());
            if kb > th.ratio * scale {
                ModeLabel::Broad
            } else if lb > th.detune * kb {
                ModeLabel::Detuned
            } else {
                ModeLabel::Narrow
            }
        })
        .collect()
}

/// Options for [`fit_fewmode`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub seed: u64,
    pub restarts: usize,
    /// Per-sample weights for the log residual; uniform when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    /// Restrict the fit to detunings inside this window (rad/s).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub window: Option<(f64, f64)>,
    pub thresholds: ClassifyThresholds,
    /// Patience handed to the optimizer (evaluations per parameter).
    pub patience: usize,
    /// A restart that runs out of patience still counts as converged when its
    /// relative RMS is below this; what remains is an unidentifiable drift of
    /// a broad mode along a flat background.
    pub accept_residual: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            seed: 0,
            restarts: 8,
            weights: None,
            window: None,
            thresholds: ClassifyThresholds::default(),
            patience: 200,
            accept_residual: 1e-9,
        }
    }
}

/// Optimizer bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    /// Objective evaluations of the winning restart.
    pub evaluations: usize,
    pub restarts: usize,
    pub converged_restarts: usize,
    /// Index of the winning restart.
    pub best_restart: usize,
    pub converged: bool,
    pub weighting: String,
}

/// Result of a fit, in absolute rad/s.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    #[serde(rename = "N")]
    pub n: usize,
    pub g: Vec<f64>,
    pub kappa: Vec<f64>,
    #[serde(rename = "Lambda")]
    pub lambda: Vec<Vec<f64>>,
    /// Weighted relative RMS of `(J_mod − J)/J` on the fit grid.
    pub residual: f64,
    pub labels: Vec<ModeLabel>,
    pub seed: u64,
    /// Laser frequency the detunings refer to (rad/s).
    pub omega0: f64,
    /// Mechanical frequency carried over from the samples (rad/s).
    pub mechanical_frequency: f64,
    pub diagnostics: FitDiagnostics,
}

impl FitReport {
    pub fn model(&self) -> Result<FewModeModel> {
        FewModeModel::from_rows(self.g.clone(), self.kappa.clone(), &self.lambda)
    }
}

struct LogProblem<'a> {
    x: &'a [f64],
    ln_y: &'a [f64],
    sqrt_w: &'a [f64],
    n: usize,
    p: DVector<f64>,
}

impl LeastSquaresProblem<f64, Dyn, Dyn> for LogProblem<'_> {
    type ResidualStorage = Owned<f64, Dyn>;
    type JacobianStorage = Owned<f64, Dyn, Dyn>;
    type ParameterStorage = Owned<f64, Dyn>;

    fn set_params(&mut self, p: &DVector<f64>) {
        self.p.copy_from(p);
    }

    fn params(&self) -> DVector<f64> {
        self.p.clone()
    }

    fn residuals(&self) -> Option<DVector<f64>> {
        let m = unpack(&self.p, self.n);
        let mut r = DVector::zeros(self.x.len());
        for (k, x) in self.x.iter().enumerate() {
            let j = eval_jmod(&m, *x);
            if !(j > 0.0) {
                return None;
            }
            r[k] = self.sqrt_w[k] * (j.ln() - self.ln_y[k]);
        }
        Some(r)
    }

    fn jacobian(&self) -> Option<DMatrix<f64>> {
        let m = unpack(&self.p, self.n);
        let np = self.p.len();
        let mut jac = DMatrix::zeros(self.x.len(), np);
        let mut grad = vec![0.0; np];
        for (k, x) in self.x.iter().enumerate() {
            let j = jmod_with_gradient(&m, *x, &mut grad);
            if !(j > 0.0) {
                return None;
            }
            for b in 0..self.n {
                // chain rule from (g, ln κ) to (h, ln κ)
                let dg = grad[b];
                grad[b] = dg * m.kappa[b].sqrt();
                grad[self.n + b] += dg * m.g[b] / 2.0;
            }
            for (c, d) in grad.iter().enumerate() {
                let pinned = c >= self.n && c < 2 * self.n && self.p[c] > LN_KAPPA_MAX;
                jac[(k, c)] = if pinned { 0.0 } else { self.sqrt_w[k] * d / j };
            }
        }
        Some(jac)
    }
}

/// Scaled, masked fit data.
struct FitData {
    x: Vec<f64>,
    y: Vec<f64>,
    w: Vec<f64>,
    scale: f64,
    center: f64,
}

fn prepare(samples: &SpectralDensity, opts: &FitOptions) -> Result<FitData> {
    samples.validate()?;
    let det = samples.detunings();
    if let Some(w) = &opts.weights {
        if w.len() != det.len() {
            return Err(Error::Weighting(format!("{} weights for {} samples", w.len(), det.len())));
        }
        if w.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::Weighting("weights must be finite and non-negative".into()));
        }
    }
    let (lo, hi) = opts.window.unwrap_or((f64::NEG_INFINITY, f64::INFINITY));
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut ws = Vec::new();
    for (k, (d, j)) in det.iter().zip(&samples.values).enumerate() {
        if *d < lo || *d > hi {
            continue;
        }
        let w = opts.weights.as_ref().map_or(1.0, |w| w[k]);
        if w == 0.0 {
            continue;
        }
        if !(*j > 0.0) {
            return Err(Error::Weighting(format!(
                "J({:e}) = {j:e} is not positive; the log residual needs it masked (weight 0)",
                samples.omegas[k]
            )));
        }
        xs.push(*d);
        ys.push(*j);
        ws.push(w);
    }
    if xs.len() < 2 {
        return Err(Error::Validation(format!("only {} samples inside the fit window", xs.len())));
    }
    let center = 0.0;
    let scale = (xs[xs.len() - 1] - xs[0]) / 2.0;
    if !(scale > 0.0) {
        return Err(Error::Validation("fit window has zero width".into()));
    }
    let x = xs.iter().map(|d| (d - center) / scale).collect();
    let y = ys.iter().map(|j| j / scale).collect();
    Ok(FitData { x, y, w: ws, scale, center })
}

struct Peak {
    index: usize,
    prominence: f64,
}

/// Local maxima ranked by topographic prominence.
fn find_peaks(y: &[f64]) -> Vec<Peak> {
    let n = y.len();
    let mut peaks = Vec::new();
    for i in 1..n.saturating_sub(1) {
        if !(y[i] > y[i - 1] && y[i] >= y[i + 1]) {
            continue;
        }
        let mut left_min = y[i];
        for j in (0..i).rev() {
            if y[j] > y[i] {
                break;
            }
            left_min = left_min.min(y[j]);
        }
        let mut right_min = y[i];
        for &v in &y[i + 1..] {
            if v > y[i] {
                break;
            }
            right_min = right_min.min(v);
        }
        peaks.push(Peak { index: i, prominence: y[i] - left_min.max(right_min) });
    }
    peaks.sort_by(|a, b| b.prominence.total_cmp(&a.prominence).then(a.index.cmp(&b.index)));
    peaks
}

/// Full width at the half-prominence level, linearly interpolated.
fn fwhm(x: &[f64], y: &[f64], p: &Peak) -> f64 {
    let i = p.index;
    let half = y[i] - p.prominence / 2.0;
    let cross = |j0: usize, j1: usize| {
        let t = (half - y[j0]) / (y[j1] - y[j0]);
        x[j0] + t * (x[j1] - x[j0])
    };
    let mut left = x[0];
    for j in (0..i).rev() {
        if y[j] < half {
            left = cross(j, j + 1);
            break;
        }
    }
    let mut right = x[x.len() - 1];
    for (j, &yj) in y.iter().enumerate().skip(i + 1) {
        if yj < half {
            right = cross(j - 1, j);
            break;
        }
    }
    (right - left).max(x[1] - x[0])
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s[s.len() / 2]
}

/// Deterministic initial guess in scaled units (window half-width = 1).
fn initial_guess(d: &FitData, n: usize) -> FewModeModel {
    let width = d.x[d.x.len() - 1] - d.x[0];
    let bg = median(&d.y);
    let peaks = find_peaks(&d.y);
    let significant: Vec<&Peak> = peaks.iter().filter(|p| p.prominence > 0.1 * bg).collect();
    let n_narrow = if n == 1 { significant.len().min(1) } else { significant.len().min(n - 1) };
    let mut g = Vec::with_capacity(n);
    let mut kappa = Vec::with_capacity(n);
    let mut diag = Vec::with_capacity(n);
    for p in significant.iter().take(n_narrow) {
        let k = fwhm(&d.x, &d.y, p);
        g.push((PI * k * p.prominence / 2.0).sqrt());
        kappa.push(k);
        diag.push(d.x[p.index]);
    }
    let n_broad = n - n_narrow;
    for b in 0..n_broad {
        // Extra broad modes are spread across the window.
        let pos = if n_broad == 1 { 0.0 } else { -0.5 + b as f64 / (n_broad - 1) as f64 };
        let k = width;
        g.push((PI * k * bg / 2.0 / n_broad as f64).sqrt());
        kappa.push(k);
        diag.push(pos * width / 2.0);
    }
    FewModeModel { g, kappa, lambda: DMatrix::from_diagonal(&DVector::from_vec(diag)) }
}

fn jitter(m: &FewModeModel, rng: &mut ChaCha8Rng) -> FewModeModel {
    let n = m.n();
    let mut out = m.clone();
    for b in 0..n {
        out.g[b] *= rng.random_range(-0.5f64..0.5).exp();
        out.kappa[b] *= rng.random_range(-1.0f64..1.0).exp();
        out.lambda[(b, b)] += rng.random_range(-0.5..0.5) * m.kappa[b];
    }
    for a in 0..n {
        for b in a + 1..n {
            let v = rng.random_range(-0.5..0.5) * (m.kappa[a] * m.kappa[b]).sqrt().min(1.0);
            out.lambda[(a, b)] = v;
            out.lambda[(b, a)] = v;
        }
    }
    out
}

struct Attempt {
    model: FewModeModel,
    residual: f64,
    evaluations: usize,
    converged: bool,
}

fn relative_rms(m: &FewModeModel, d: &FitData) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for ((x, y), w) in d.x.iter().zip(&d.y).zip(&d.w) {
        let r = (eval_jmod(m, *x) - y) / y;
        num += w * r * r;
        den += w;
    }
    (num / den).sqrt()
}

fn run_restart(d: &FitData, start: FewModeModel, opts: &FitOptions) -> Attempt {
    let n = start.n();
    let ln_y: Vec<f64> = d.y.iter().map(|y| y.ln()).collect();
    let sqrt_w: Vec<f64> = d.w.iter().map(|w| w.sqrt()).collect();
    let problem = LogProblem { x: &d.x, ln_y: &ln_y, sqrt_w: &sqrt_w, n, p: pack(&start) };
    let (problem, report) = LevenbergMarquardt::new().with_patience(opts.patience).minimize(problem);
    let model = unpack(&problem.p, n);
    let residual = relative_rms(&model, d);
    let width = d.x[d.x.len() - 1] - d.x[0];
    let off_diag_ok = (0..n).all(|a| (0..n).all(|b| a == b || model.lambda[(a, b)].abs() <= width));
    let ok_reason = report.termination.was_successful()
        || matches!(report.termination, levenberg_marquardt::TerminationReason::NoImprovementPossible(_))
        || residual < opts.accept_residual;
    Attempt {
        converged: ok_reason && residual.is_finite() && off_diag_ok && model.validate().is_ok(),
        residual,
        evaluations: report.number_of_evaluations,
        model,
    }
}

/// Fits an `n`-mode model to `samples` by weighted log least squares.
pub fn fit_fewmode(samples: &SpectralDensity, n: usize, opts: &FitOptions) -> Result<FitReport> {
    if n == 0 {
        return Err(Error::Validation("mode count must be at least 1".into()));
    }
    let d = prepare(samples, opts)?;
    let base = initial_guess(&d, n);
    let restarts = opts.restarts.max(1);
    let attempts: Vec<Attempt> = (0..restarts)
        .into_par_iter()
        .map(|r| {
            let start = if r == 0 {
                base.clone()
            } else {
                let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
                rng.set_stream(r as u64);
                jitter(&base, &mut rng)
            };
            run_restart(&d, start, opts)
        })
        .collect();
    let converged = attempts.iter().filter(|a| a.converged).count();
    let best = attempts
        .iter()
        .enumerate()
        .filter(|(_, a)| a.converged)
        .min_by(|(i, a), (j, b)| a.residual.total_cmp(&b.residual).then(i.cmp(j)));
    let Some((best_idx, best)) = best else {
        let best_residual = attempts.iter().map(|a| a.residual).filter(|r| r.is_finite()).fold(f64::INFINITY, f64::min);
        return Err(Error::Fit {
            message: format!("no restart out of {restarts} converged for N = {n}"),
            best_residual,
        });
    };
    let scaled = best.model.canonicalize();
    let mut model = scaled.scaled(d.scale);
    for b in 0..n {
        model.lambda[(b, b)] += d.center;
    }
    let labels = classify_modes(&model, 0.0, &opts.thresholds);
    Ok(FitReport {
        n,
        lambda: model.lambda_rows(),
        g: model.g,
        kappa: model.kappa,
        residual: best.residual,
        labels,
        seed: opts.seed,
        omega0: samples.meta.omega0,
        mechanical_frequency: samples.meta.mechanical_frequency,
        diagnostics: FitDiagnostics {
            evaluations: best.evaluations,
            restarts,
            converged_restarts: converged,
            best_restart: best_idx,
            converged: true,
            weighting: if opts.weights.is_some() { "log, user weights" } else { "log, uniform" }.into(),
        },
    })
}

/// Fits `N = 1..=n_max` and returns the first fit with residual below `tol`.
pub fn select_model_order(samples: &SpectralDensity, tol: f64, n_max: usize, opts: &FitOptions) -> Result<FitReport> {
    if !(tol > 0.0) || n_max == 0 {
        return Err(Error::Validation(format!("need tol > 0 and n_max ≥ 1, got {tol:e}, {n_max}")));
    }
    let mut trace = Vec::with_capacity(n_max);
    for n in 1..=n_max {
        match fit_fewmode(samples, n, opts) {
            Ok(r) if r.residual < tol => return Ok(r),
            Ok(r) => trace.push(r.residual),
            Err(Error::Fit { best_residual, .. }) => trace.push(best_residual),
            Err(e) => return Err(e),
        }
    }
    Err(Error::Selection { n_max, tol, trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{MotionKind, SpectralMeta};
    use crate::Axis;
    use proptest::prelude::*;

    fn lorentzian(g: f64, k: f64, c: f64, d: f64) -> f64 {
        g * g / PI * (k / 2.0) / ((d - c).powi(2) + k * k / 4.0)
    }

    pub(crate) fn samples_from(m: &FewModeModel, lo: f64, hi: f64, points: usize) -> SpectralDensity {
        let omegas: Vec<f64> = (0..points).map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64).collect();
        let values = omegas.iter().map(|w| eval_jmod(m, *w)).collect();
        let meta = SpectralMeta {
            motion: MotionKind::CenterOfMass,
            axis: Axis::Y,
            provider: "synthetic".into(),
            step_m: 0.0,
            r0_m: [0.0; 3],
            omega0: 0.0,
            mechanical_frequency: 1.0,
            gamma_fs: None,
            config_hash: None,
            tool_version: None,
        };
        SpectralDensity::new(omegas, values, meta).unwrap()
    }

    fn two_mode(g: [f64; 2], k: [f64; 2], l11: f64, l12: f64, l22: f64) -> FewModeModel {
        FewModeModel::new(g.to_vec(), k.to_vec(), DMatrix::from_row_slice(2, 2, &[l11, l12, l12, l22])).unwrap()
    }

    #[test]
    fn single_mode_peak() {
        let m = FewModeModel::new(vec![1.0], vec![2.0], DMatrix::zeros(1, 1)).unwrap();
        assert!((eval_jmod(&m, 0.0) - 1.0 / PI).abs() < 1e-15);
        assert!((eval_jmod(&m, 1.0) - 0.5 / PI).abs() < 1e-15);
        assert!((eval_jmod(&m, -1.0) - 0.5 / PI).abs() < 1e-15);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let m = two_mode([0.7, -2.0], [0.3, 5.0], 0.4, 0.9, -1.5);
        let x = [-1.3, 0.37, 2.2];
        let ln_y = [0.1, -0.2, 0.3];
        let sqrt_w = [1.0, 0.5, 2.0];
        let mut prob = LogProblem { x: &x, ln_y: &ln_y, sqrt_w: &sqrt_w, n: 2, p: pack(&m) };
        let jac = prob.jacobian().unwrap();
        let p0 = prob.p.clone();
        for c in 0..p0.len() {
            let h = 1e-6;
            let mut pp = p0.clone();
            pp[c] += h;
            prob.set_params(&pp);
            let rp = prob.residuals().unwrap();
            pp[c] -= 2.0 * h;
            prob.set_params(&pp);
            let rm = prob.residuals().unwrap();
            for k in 0..x.len() {
                let fd = (rp[k] - rm[k]) / (2.0 * h);
                assert!((fd - jac[(k, c)]).abs() < 1e-6 * (1.0 + fd.abs()), "({k}, {c}): {fd} vs {}", jac[(k, c)]);
            }
        }
    }

    #[test]
    fn classification_examples() {
        let th = ClassifyThresholds::default();
        let m = FewModeModel::new(vec![1e4, 1e4], vec![1e3, 1e7], DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1e4]))
            .unwrap();
        assert_eq!(classify_modes(&m, 0.0, &th), vec![ModeLabel::Narrow, ModeLabel::Broad]);
        let m = FewModeModel::new(vec![1e3], vec![1e6], DMatrix::from_element(1, 1, 1e9)).unwrap();
        assert_eq!(classify_modes(&m, 0.0, &th), vec![ModeLabel::Detuned]);
        let m = two_mode([1.0, 1.0], [1.0, 2.0], 0.0, 0.0, 0.1);
        assert_eq!(classify_modes(&m, 0.0, &th), vec![ModeLabel::Narrow, ModeLabel::Narrow]);
    }

    #[test]
    fn canonical_form_is_gauge_invariant() {
        let m = two_mode([-0.7, 2.0], [0.3, 5.0], 1.4, 0.9, -1.5);
        let c = m.canonicalize();
        assert!(c.g.iter().all(|g| *g >= 0.0));
        assert!(c.lambda[(0, 0)] <= c.lambda[(1, 1)]);
        for d in [-3.0, 0.0, 0.2, 4.0] {
            assert!((eval_jmod(&m, d) - eval_jmod(&c, d)).abs() < 1e-14);
        }
    }

    #[test]
    fn lorentzian_plus_offset_classifies_broad() {
        let truth = two_mode([0.5, 6.0], [0.2, 400.0], 1.0, 0.0, 0.0);
        let s = samples_from(&truth, -10.0, 10.0, 401);
        let r = fit_fewmode(&s, 2, &FitOptions::default()).unwrap();
        let narrow = r.labels.iter().position(|l| *l == ModeLabel::Narrow).unwrap();
        let broad = r.labels.iter().position(|l| *l == ModeLabel::Broad).unwrap();
        assert!((r.lambda[narrow][narrow] - 1.0).abs() < 1e-3);
        assert!(r.kappa[broad] > 20.0);
        assert!(r.residual < 1e-6);
    }

    #[test]
    fn nonpositive_sample_is_a_weighting_error() {
        let truth = two_mode([0.5, 6.0], [0.2, 400.0], 1.0, 0.0, 0.0);
        let mut s = samples_from(&truth, -10.0, 10.0, 101);
        s.values[3] = 0.0;
        assert!(matches!(fit_fewmode(&s, 2, &FitOptions::default()), Err(Error::Weighting(_))));
        let mut w = vec![1.0; 101];
        w[3] = 0.0;
        let opts = FitOptions { weights: Some(w), ..FitOptions::default() };
        assert!(fit_fewmode(&s, 2, &opts).is_ok());
    }

    #[test]
    fn flat_background_selects_one_mode() {
        let truth = FewModeModel::new(vec![1e4], vec![1e8], DMatrix::zeros(1, 1)).unwrap();
        let s = samples_from(&truth, -10.0, 10.0, 201);
        let r = select_model_order(&s, 1e-3, 3, &FitOptions::default()).unwrap();
        assert_eq!(r.n, 1);
        assert_eq!(r.labels, vec![ModeLabel::Broad]);
    }

    #[test]
    fn report_json_fields() {
        let truth = two_mode([0.5, 6.0], [0.2, 400.0], 1.0, 0.0, 0.0);
        let s = samples_from(&truth, -10.0, 10.0, 201);
        let r = fit_fewmode(&s, 2, &FitOptions::default()).unwrap();
        let v = serde_json::to_value(&r).unwrap();
        for k in ["N", "g", "kappa", "Lambda", "residual", "labels", "seed"] {
            assert!(v.get(k).is_some(), "{k}");
        }
        let back: FitReport = serde_json::from_value(v).unwrap();
        assert_eq!(back, r);
    }

    proptest! {
        #[test]
        fn diagonal_lambda_is_lorentzian_sum(
            g1 in 0.1f64..5.0, g2 in -5.0f64..5.0,
            k1 in 0.01f64..10.0, k2 in 0.01f64..100.0,
            c1 in -10.0f64..10.0, c2 in -10.0f64..10.0,
            d in -30.0f64..30.0,
        ) {
            let m = two_mode([g1, g2], [k1, k2], c1, 0.0, c2);
            let direct = lorentzian(g1, k1, c1, d) + lorentzian(g2, k2, c2, d);
            prop_assert!((eval_jmod(&m, d) - direct).abs() <= 1e-12 * direct);
        }

        #[test]
        fn gauge_invariance(
            g1 in -5.0f64..5.0, g2 in -5.0f64..5.0,
            k1 in 0.01f64..10.0, k2 in 0.01f64..100.0,
            l11 in -5.0f64..5.0, l12 in -3.0f64..3.0, l22 in -5.0f64..5.0,
            d in -30.0f64..30.0,
        ) {
            let m = two_mode([g1, g2], [k1, k2], l11, l12, l22);
            let swapped = two_mode([-g2, g1], [k2, k1], l22, -l12, l11);
            let a = eval_jmod(&m, d);
            prop_assert!(a >= 0.0);
            prop_assert!((a - eval_jmod(&swapped, d)).abs() <= 1e-12 * a.max(1e-300));
        }
    }
}
