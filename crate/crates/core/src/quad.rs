//! One-dimensional quadrature: adaptive Gauss-Kronrod and Cauchy principal values.

use std::num::NonZeroUsize;

use gauss_quad::GaussLegendre;

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];

const WG: [f64; 4] =
    [0.129_484_966_168_869_7, 0.279_705_391_489_276_7, 0.381_830_050_505_118_9, 0.417_959_183_673_469_4];

/// Tolerances for [`integrate_adaptive`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptiveOptions {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_intervals: usize,
}

impl Default for AdaptiveOptions {
    fn default() -> Self {
        AdaptiveOptions { abs_tol: 1e-12, rel_tol: 1e-10, max_intervals: 2000 }
    }
}

/// Result of an adaptive integration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
    pub intervals: usize,
}

fn gk15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let x = h * XGK[j];
        let s = f(c - x) + f(c + x);
        kronrod += WGK[j] * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    (kronrod * h, ((kronrod - gauss) * h).abs())
}

/// Globally adaptive G7K15 quadrature of `f` over `[a, b]`.
///
/// ```
/// use recoil::quad::{integrate_adaptive, AdaptiveOptions};
/// let est = integrate_adaptive(|x| x.sin(), 0.0, std::f64::consts::PI, AdaptiveOptions::default()).unwrap();
/// assert!((est.value - 2.0).abs() < 1e-12);
/// ```
pub fn integrate_adaptive<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, opts: AdaptiveOptions) -> Result<Estimate> {
    if a == b {
        return Ok(Estimate { value: 0.0, error: 0.0, intervals: 0 });
    }
    let (v, e) = gk15(&mut f, a, b);
    let mut parts = vec![(a, b, v, e)];
    let mut value = v;
    let mut error = e;
    loop {
        if !value.is_finite() {
            return Err(Error::Numeric(format!("non-finite integrand on [{a:e}, {b:e}]")));
        }
        if error <= opts.abs_tol.max(opts.rel_tol * value.abs()) {
            return Ok(Estimate { value, error, intervals: parts.len() });
        }
        if parts.len() >= opts.max_intervals {
            return Err(Error::Numeric(format!(
                "adaptive quadrature on [{a:e}, {b:e}] did not reach tolerance: \
                 estimate {value:e}, error {error:e} after {} intervals",
                parts.len()
            )));
        }
        let worst = parts.iter().enumerate().max_by(|x, y| x.1 .3.total_cmp(&y.1 .3)).map(|(i, _)| i).unwrap();
        let (lo, hi, pv, pe) = parts.swap_remove(worst);
        let mid = 0.5 * (lo + hi);
        let (v1, e1) = gk15(&mut f, lo, mid);
        let (v2, e2) = gk15(&mut f, mid, hi);
        value += v1 + v2 - pv;
        error += e1 + e2 - pe;
        parts.push((lo, mid, v1, e1));
        parts.push((mid, hi, v2, e2));
        // recompute occasionally to avoid drift from the running sums
        if parts.len() % 64 == 0 {
            value = parts.iter().map(|p| p.2).sum();
            error = parts.iter().map(|p| p.3).sum();
        }
    }
}

/// Options for [`principal_value`].
#[derive(Debug, Clone, PartialEq)]
pub struct PvOptions {
    /// Gauss-Legendre points per panel.
    pub order: usize,
    /// Geometric grading levels toward the pole.
    pub grading_levels: usize,
    /// Relative change between successive refinements accepted as converged.
    pub rel_tol: f64,
    /// Maximum number of panel doublings.
    pub max_refinements: usize,
}

impl Default for PvOptions {
    fn default() -> Self {
        PvOptions { order: 8, grading_levels: 40, rel_tol: 1e-10, max_refinements: 10 }
    }
}

/// A converged principal-value estimate and its refinement history.
#[derive(Debug, Clone, PartialEq)]
pub struct PvEstimate {
    pub value: f64,
    pub refinements: usize,
    pub history: Vec<f64>,
}

/// Cauchy principal value of `∫_a^b f(ω)/(ω − ω₀) dω` with `a < ω₀ < b`.
///
/// The symmetric part around the pole is folded into the regular integrand
/// `[f(ω₀+u) − f(ω₀−u)]/u`; the rest is integrated directly. Panels are graded
/// geometrically toward the pole and refined around `features` (center, width)
/// pairs. The panel count is doubled until two successive estimates agree to
/// `rel_tol`.
pub fn principal_value<F: Fn(f64) -> f64>(
    f: F,
    omega0: f64,
    a: f64,
    b: f64,
    features: &[(f64, f64)],
    opts: &PvOptions,
) -> Result<PvEstimate> {
    if !(a < omega0 && omega0 < b) {
        return Err(Error::Domain(format!(
            "principal value needs a < ω₀ < b, got [{a:e}, {b:e}] with ω₀ = {omega0:e}"
        )));
    }
    let delta = (omega0 - a).min(b - omega0);
    let sym_edges = graded_edges(0.0, delta, opts.grading_levels, features, omega0, true);
    let (tail_lo, tail_hi) = if b - omega0 > delta { (omega0 + delta, b) } else { (a, omega0 - delta) };
    let tail_edges = if tail_hi > tail_lo { tail_edges(tail_lo, tail_hi, omega0, features) } else { Vec::new() };
    let rule = GaussLegendre::new(NonZeroUsize::new(opts.order.max(1)).unwrap());
    let nodes: Vec<(f64, f64)> = rule.as_node_weight_pairs().to_vec();

    let sym = |u: f64| (f(omega0 + u) - f(omega0 - u)) / u;
    let tail = |w: f64| f(w) / (w - omega0);

    let mut history = Vec::new();
    let mut prev: Option<(f64, f64)> = None;
    for level in 0..=opts.max_refinements {
        let split = 1usize << level;
        let (s1, m1) = composite(&sym, &sym_edges, split, &nodes);
        let (s2, m2) = composite(&tail, &tail_edges, split, &nodes);
        let value = s1 + s2;
        let magnitude = m1 + m2;
        history.push(value);
        if let Some((pv, pm)) = prev {
            let scale = magnitude.max(pm);
            if (value - pv).abs() <= opts.rel_tol * scale.max(f64::MIN_POSITIVE) || scale == 0.0 {
                return Ok(PvEstimate { value, refinements: level, history });
            }
        }
        prev = Some((value, magnitude));
    }
    Err(Error::Numeric(format!(
        "principal value unstable under grid refinement around ω₀ = {omega0:e}: \
         estimates {history:?}"
    )))
}

fn composite<F: Fn(f64) -> f64>(f: &F, edges: &[f64], split: usize, nodes: &[(f64, f64)]) -> (f64, f64) {
    let mut sum = 0.0;
    let mut mag = 0.0;
    for w in edges.windows(2) {
        let step = (w[1] - w[0]) / split as f64;
        for s in 0..split {
            let lo = w[0] + step * s as f64;
            let c = lo + 0.5 * step;
            let h = 0.5 * step;
            for &(x, wt) in nodes {
                let v = wt * h * f(c + h * x);
                sum += v;
                mag += v.abs();
            }
        }
    }
    (sum, mag)
}

/// Panel edges on `[lo, hi]` graded toward `lo`, with extra breakpoints
/// around resonant features expressed as pole offsets.
fn graded_edges(lo: f64, hi: f64, levels: usize, features: &[(f64, f64)], omega0: f64, folded: bool) -> Vec<f64> {
    let mut edges = vec![lo, hi];
    let mut x = hi;
    for _ in 0..levels {
        x *= 0.5;
        edges.push(lo + x);
    }
    for &(center, width) in features {
        let u = if folded { (center - omega0).abs() } else { center };
        push_feature(&mut edges, u, width, lo, hi);
    }
    finish(edges)
}

fn tail_edges(lo: f64, hi: f64, omega0: f64, features: &[(f64, f64)]) -> Vec<f64> {
    let mut edges = vec![lo, hi];
    // roughly uniform in log(ω − ω₀)
    let (dlo, dhi) = ((lo - omega0).abs(), (hi - omega0).abs());
    let n = ((dhi.max(dlo) / dhi.min(dlo)).ln() / 0.25).ceil().max(1.0) as usize;
    let r = (dhi / dlo).powf(1.0 / n as f64);
    let sign = if hi > omega0 { 1.0 } else { -1.0 };
    let mut d = dlo;
    for _ in 1..n {
        d *= r;
        edges.push(omega0 + sign * d);
    }
    for &(center, width) in features {
        push_feature(&mut edges, center, width, lo, hi);
    }
    finish(edges)
}

fn push_feature(edges: &mut Vec<f64>, center: f64, width: f64, lo: f64, hi: f64) {
    if !(width > 0.0) {
        return;
    }
    edges.push(center);
    let mut k = 0.25;
    while k <= 4096.0 {
        edges.push(center - k * width);
        edges.push(center + k * width);
        k *= 2.0;
    }
    edges.retain(|&e| e >= lo && e <= hi);
}

fn finish(mut edges: Vec<f64>) -> Vec<f64> {
    edges.sort_by(f64::total_cmp);
    edges.dedup_by(|a, b| (*a - *b).abs() <= 1e-15 * a.abs().max(b.abs()));
    edges
}
