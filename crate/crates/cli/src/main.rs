//! `recoil-cli`: spectral density → few-mode fit → reduction → dynamics, plus
//! the geometric suppression table.
//!
//! Exit codes: 0 success, 1 I/O, 2 validation, 3 reduction refused,
//! 4 dynamics instability.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod config;

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use recoil::dynamics::{
    build_linear_model, discretize_continuum, evolve_mechanics, evolve_trajectory, evolve_trajectory_exact,
    phonon_occupation, steady_state, write_trajectory, DtOptions, GaussianState, ModeState, ModelSource, TrajectoryRow,
};
use recoil::fewmode::{fit_fewmode, select_model_order, ClassifyThresholds, FitOptions, FitReport};
use recoil::geometry::{default_quad, gamma_geometric, ratio_table, write_ratio_table, RadiationPattern, RatioRow};
use recoil::green::FreeSpace;
use recoil::reduce::{reduce_fit, ReduceOptions, ReducedModel};
use recoil::spectral::{
    detuning_grid, free_space_recoil, spectral_density_com, spectral_density_libr, SpectralDensity, StencilOptions,
};
use recoil::tweezer::{equilibrium_shift, EquilibriumState, QuadratureOptions};
use recoil::Error;
use serde::Serialize;
use serde_json::{json, Value};

use config::{EquilibriumChoice, MotionKindChoice, Order, PipelineConfig};

const TOOL_VERSION: &str = concat!("recoil-cli ", env!("CARGO_PKG_VERSION"));

#[derive(Parser)]
#[command(version, about = "Recoil heating of levitated particles near structures")]
struct Cli {
    /// Pipeline configuration (JSON, schema recoil-pipeline/1).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides fit.seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, short, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute J(ω) and the free-space reference.
    Jspec,
    /// Fit a few-mode model to a spectral density CSV.
    Fit { input: PathBuf },
    /// Adiabatically eliminate broad and detuned modes of a fit.
    Reduce { input: PathBuf },
    /// Evolve the reduced model, optionally alongside the few-mode model and
    /// the discretized continuum.
    Simulate {
        model: PathBuf,
        #[arg(long)]
        fewmode: Option<PathBuf>,
        #[arg(long)]
        jspec: Option<PathBuf>,
    },
    /// Geometric suppression ratios versus mirror half-angle.
    Geo,
}

struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Io(_) => 1,
            Error::ScaleSeparation(_) | Error::Structural(_) => 3,
            Error::Instability(_) | Error::Stiffness(_) | Error::Numeric(_) => 4,
            _ => 2,
        };
        Failure { code, message: e.to_string() }
    }
}

type CliResult<T> = Result<T, Failure>;

struct Run {
    cfg: PipelineConfig,
    hash: String,
    out: PathBuf,
    verbose: bool,
}

impl Run {
    fn log(&self, msg: impl AsRef<str>) {
        if self.verbose {
            eprintln!("{}", msg.as_ref());
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn stamp(&self, v: Value) -> Value {
        let mut v = v;
        if let Value::Object(m) = &mut v {
            m.insert("config_hash".into(), self.hash.clone().into());
            m.insert("tool_version".into(), TOOL_VERSION.into());
        }
        v
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> CliResult<PathBuf> {
        let v = serde_json::to_value(value).map_err(|e| Error::Validation(e.to_string()))?;
        let mut text = serde_json::to_string_pretty(&self.stamp(v)).map_err(|e| Error::Validation(e.to_string()))?;
        text.push('\n');
        let p = self.path(name);
        fs::write(&p, text).map_err(Error::Io)?;
        self.log(format!("wrote {}", p.display()));
        Ok(p)
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text =
        fs::read_to_string(path).map_err(|e| Failure { code: 1, message: format!("{}: {e}", path.display()) })?;
    serde_json::from_str(&text).map_err(|e| Error::Validation(format!("{}: {e}", path.display())).into())
}

fn cmd_jspec(run: &Run) -> CliResult<()> {
    let cfg = &run.cfg;
    let tw = cfg.tweezer()?;
    let part = cfg.particle()?;
    let omega0 = tw.omega0();
    let provider = cfg.provider(omega0)?;
    let grid = detuning_grid(omega0, 2.0 * PI * cfg.grid.half_span_hz, cfg.grid.points)?;
    let (eq, stencil) = match cfg.equilibrium {
        EquilibriumChoice::Focus => {
            (EquilibriumState::at_focus(), StencilOptions { at_focus: true, ..Default::default() })
        }
        EquilibriumChoice::Solve => {
            run.log("solving force balance");
            (
                equilibrium_shift(&part, &tw, provider.as_ref(), &QuadratureOptions::default())?,
                StencilOptions::default(),
            )
        }
    };
    let axis = cfg.motion.axis;
    run.log(format!("evaluating J on {} points with {}", grid.len(), provider.descriptor()));
    let (mut j, mut fs_ref) = match cfg.motion.kind {
        MotionKindChoice::Com => {
            let mut j = spectral_density_com(axis, &grid, provider.as_ref(), &tw, &part, &eq, &stencil)?;
            let r = spectral_density_com(axis, &grid, &FreeSpace, &tw, &part, &eq, &stencil)?;
            j.meta.gamma_fs = Some(free_space_recoil(axis, &tw, &part, &eq)?);
            (j, r)
        }
        MotionKindChoice::Libration => {
            let lp = cfg.libration()?.expect("validated");
            let mut j = spectral_density_libr(axis, &grid, provider.as_ref(), &tw, &lp, &eq)?;
            let r = spectral_density_libr(axis, &grid, &FreeSpace, &tw, &lp, &eq)?;
            j.meta.gamma_fs = Some(2.0 * PI * r.interpolate(omega0));
            (j, r)
        }
    };
    fs_ref.meta.gamma_fs = j.meta.gamma_fs;
    for s in [&mut j, &mut fs_ref] {
        s.meta.config_hash = Some(run.hash.clone());
        s.meta.tool_version = Some(TOOL_VERSION.into());
    }
    j.write(&run.path("jspec.csv"))?;
    fs_ref.write(&run.path("jspec_fs.csv"))?;
    run.log(format!("wrote {}", run.path("jspec.csv").display()));
    println!(
        "J(omega0) = {:.6e} rad/s, free-space Gamma = {:.6e} 1/s",
        j.interpolate(omega0),
        j.meta.gamma_fs.unwrap_or(f64::NAN)
    );
    Ok(())
}

fn cmd_fit(run: &Run, input: &Path) -> CliResult<()> {
    if !input.exists() {
        return Err(Failure { code: 1, message: format!("{}: no such file", input.display()) });
    }
    let samples = SpectralDensity::read(input)?;
    let f = &run.cfg.fit;
    let opts = FitOptions {
        seed: f.seed,
        restarts: f.restarts,
        thresholds: ClassifyThresholds { ratio: run.cfg.reduction.ratio, detune: run.cfg.reduction.detune },
        ..Default::default()
    };
    let report = match f.order {
        Order::Fixed(n) => fit_fewmode(&samples, n, &opts)?,
        Order::Auto => select_model_order(&samples, f.tol, f.n_max, &opts)?,
    };
    run.write_json("fit.json", &report)?;
    println!("N = {}, residual = {:.3e}, labels = {:?}", report.n, report.residual, report.labels);
    Ok(())
}

fn cmd_reduce(run: &Run, input: &Path) -> CliResult<()> {
    let report: FitReport = read_json(input)?;
    let r = &run.cfg.reduction;
    let opts = ReduceOptions {
        thresholds: ClassifyThresholds { ratio: r.ratio, detune: r.detune },
        background_only: r.background_only,
    };
    let mut model = reduce_fit(&report, &opts)?;
    model.config_hash = Some(run.hash.clone());
    model.tool_version = Some(TOOL_VERSION.into());
    run.write_json("reduced.json", &model)?;
    let sum: f64 = model.contributions.iter().map(|c| c.gamma_beta).sum();
    println!(
        "omega_c = {}, g = {}, kappa = {}, Gamma = {:.6e} 1/s (sum of {} contributions {:.6e})",
        opt(model.omega_c),
        opt(model.g),
        opt(model.kappa),
        model.gamma,
        model.contributions.len(),
        sum
    );
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "none".into(), |x| format!("{x:.6e}"))
}

fn sample_rows(traj: &[(f64, GaussianState)]) -> Vec<TrajectoryRow> {
    traj.iter().map(|(t, s)| TrajectoryRow::from_state(*t, s)).collect()
}

fn cmd_simulate(run: &Run, model_path: &Path, fewmode: Option<&Path>, jspec: Option<&Path>) -> CliResult<()> {
    let d = &run.cfg.dynamics;
    let reduced: ReducedModel = read_json(model_path)?;
    reduced.validate()?;
    let opts = DtOptions { rtol: d.rtol, atol: d.atol, ..Default::default() };
    let lin = build_linear_model(ModelSource::Reduced(&reduced), d.include_recoil)?;
    let s0 = GaussianState::thermal_mechanics(lin.dim(), d.initial_occupation);
    let mut meta = json!({
        "Gamma": reduced.gamma,
        "Omega": reduced.omega,
        "horizon_s": d.horizon_s,
        "initial_occupation": d.initial_occupation,
        "include_recoil": d.include_recoil,
    });

    if d.steady_state {
        let ss = steady_state(&lin)?;
        meta["steady_state_n_mech"] = phonon_occupation(&ss, 0).into();
        meta["steady_state"] = serde_json::to_value(ss.serialize()).map_err(|e| Error::Validation(e.to_string()))?;
    }

    run.log(format!("evolving reduced model ({} modes)", lin.optical_modes()));
    let traj = evolve_trajectory(&lin, &s0, d.horizon_s, d.samples, &opts)?;
    let rows = sample_rows(&traj);
    write_trajectory(&run.path("trajectory_reduced.csv"), &rows)?;
    let (first, last) = (rows.first().expect("samples"), rows.last().expect("samples"));
    let slope = (last.n_mech - first.n_mech) / (last.t_s - first.t_s);
    meta["heating_slope"] = slope.into();
    let mut files = vec!["trajectory_reduced.csv"];

    if let Some(p) = fewmode {
        let report: FitReport = read_json(p)?;
        let fm = report.model()?;
        let lin = build_linear_model(ModelSource::FewMode(&fm, report.mechanical_frequency), true)?;
        run.log(format!("evolving few-mode model ({} modes)", lin.optical_modes()));
        let s0 = GaussianState::thermal_mechanics(lin.dim(), d.initial_occupation);
        let traj = match evolve_trajectory(&lin, &s0, d.horizon_s, d.samples, &opts) {
            Err(Error::Stiffness(why)) => {
                run.log(format!("stiff ({why}); switching to the exact propagator"));
                meta["fewmode_propagator"] = "matrix_exponential".into();
                evolve_trajectory_exact(&lin, &s0, d.horizon_s, d.samples)?
            }
            other => {
                meta["fewmode_propagator"] = "dopri5".into();
                other?
            }
        };
        write_trajectory(&run.path("trajectory_fewmode.csv"), &sample_rows(&traj))?;
        files.push("trajectory_fewmode.csv");
    }

    if let (Some(p), Some(m)) = (jspec, d.continuum_modes) {
        let j = SpectralDensity::read(p)?;
        let lin = discretize_continuum(&j, m, j.meta.mechanical_frequency, Some(d.horizon_s))?;
        run.log(format!("evolving discretized continuum ({m} modes)"));
        let samples = evolve_mechanics(&lin, &ModeState::thermal(d.initial_occupation), d.horizon_s, d.samples, &opts)?;
        let rows: Vec<_> = samples.iter().map(TrajectoryRow::from_mechanics).collect();
        write_trajectory(&run.path("trajectory_continuum.csv"), &rows)?;
        files.push("trajectory_continuum.csv");
    }

    meta["files"] = files.into();
    run.write_json("simulate.json", &meta)?;
    println!("heating slope {slope:.6e} 1/s, Gamma {:.6e} 1/s", reduced.gamma);
    Ok(())
}

fn cmd_geo(run: &Run) -> CliResult<()> {
    let g = &run.cfg.geometry;
    let mut rows = ratio_table(g.points)?;
    if g.quadrature {
        let (com, libr) = (RadiationPattern::com_y(), RadiationPattern::libration_z());
        for r in rows.iter_mut() {
            let t = r.theta_m_deg.to_radians().min(PI / 2.0);
            *r = RatioRow {
                theta_m_deg: r.theta_m_deg,
                ratio_com: gamma_geometric(t, &com, default_quad())?,
                ratio_libr: gamma_geometric(t, &libr, default_quad())?,
            };
        }
    }
    let p = run.path("geometry.csv");
    let f = fs::File::create(&p).map_err(Error::Io)?;
    write_ratio_table(f, &rows)?;
    let method = if g.quadrature { "quadrature" } else { "closed_form" };
    run.write_json("geometry.json", &json!({ "method": method, "points": g.points }))?;
    println!("wrote {} ({} angles, {method})", p.display(), rows.len());
    Ok(())
}

fn execute(cli: Cli) -> CliResult<()> {
    let mut cfg = match &cli.config {
        Some(p) if !p.exists() => return Err(Failure { code: 1, message: format!("{}: no such file", p.display()) }),
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.fit.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = Some(out.clone());
    }
    cfg.validate()?;
    let out = cfg.output_dir.clone().unwrap_or_else(|| PathBuf::from("out"));
    fs::create_dir_all(&out).map_err(Error::Io)?;
    let run = Run { hash: cfg.hash(), cfg, out, verbose: cli.verbose };
    run.log(format!("config hash {}", run.hash));
    match &cli.command {
        Command::Jspec => cmd_jspec(&run),
        Command::Fit { input } => cmd_fit(&run, input),
        Command::Reduce { input } => cmd_reduce(&run, input),
        Command::Simulate { model, fewmode, jspec } => cmd_simulate(&run, model, fewmode.as_deref(), jspec.as_deref()),
        Command::Geo => cmd_geo(&run),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
