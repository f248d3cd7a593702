use std::collections::BTreeMap;
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::GreensProvider;
use crate::error::{Error, Result};
use crate::Axis;

/// Schema identifier written into every sidecar.
pub const SCHEMA: &str = "recoil.tabulated-greens/1";

const HEADER: [&str; 5] = ["omega_rad_s", "ix", "iz", "re_gxx", "im_gxx"];

/// Where the stencil points sit: `r = center + ix·step·ê_axis`, `r′ = center + iz·step·ê_axis`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StencilSpec {
    pub axis: Axis,
    pub step_m: f64,
    pub center_m: [f64; 3],
}

/// JSON sidecar accompanying the CSV samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabulatedSidecar {
    pub schema: String,
    pub stencil: StencilSpec,
    pub omega_unit: String,
    pub gxx_unit: String,
    /// `cubic` (default) or `linear`.
    #[serde(default = "default_interp")]
    pub interpolation: String,
    /// Whether `re_gxx` carries data; analytic exports only know `Im G`.
    #[serde(default)]
    pub real_part: bool,
}

fn default_interp() -> String {
    "cubic".into()
}

/// Interpolating provider built from solver exports of `G_xx` on a spatial stencil.
#[derive(Debug, Clone, PartialEq)]
pub struct TabulatedGreens {
    pub sidecar: TabulatedSidecar,
    pub omegas: Vec<f64>,
    /// (ix, iz) → (Re G_xx, Im G_xx) per frequency.
    pub samples: BTreeMap<(i8, i8), Vec<(f64, f64)>>,
    source: String,
}

/// File formats accepted by [`load_tabulated`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TabulatedFormat {
    /// CSV samples plus a `.json` sidecar with the same stem.
    #[default]
    CsvWithSidecar,
}

/// Loads a tabulated Green's tensor (`<stem>.csv` + `<stem>.json`).
pub fn load_tabulated(path: &Path, format: TabulatedFormat) -> Result<TabulatedGreens> {
    match format {
        TabulatedFormat::CsvWithSidecar => TabulatedGreens::read(path),
    }
}

fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

const CROSS: [(i8, i8); 4] = [(1, 1), (1, -1), (-1, 1), (-1, -1)];

impl TabulatedGreens {
    /// Samples `provider` on the stencil at the given frequencies.
    pub fn sample(
        provider: &dyn GreensProvider,
        stencil: StencilSpec,
        omegas: &[f64],
        with_center: bool,
    ) -> Result<Self> {
        let mut pairs: Vec<(i8, i8)> = CROSS.to_vec();
        if with_center {
            pairs.push((0, 0));
        }
        let mut samples = BTreeMap::new();
        for &(ix, iz) in &pairs {
            let r = stencil_point(&stencil, ix);
            let rp = stencil_point(&stencil, iz);
            let v = omegas.iter().map(|&w| Ok((0.0, provider.im_g_xx(&r, &rp, w)?))).collect::<Result<Vec<_>>>()?;
            samples.insert((ix, iz), v);
        }
        let t = TabulatedGreens {
            sidecar: TabulatedSidecar {
                schema: SCHEMA.into(),
                stencil,
                omega_unit: "rad/s".into(),
                gxx_unit: "1/m".into(),
                interpolation: default_interp(),
                real_part: false,
            },
            omegas: omegas.to_vec(),
            samples,
            source: provider.descriptor(),
        };
        t.validate()?;
        Ok(t)
    }

    /// Writes `<stem>.csv` and `<stem>.json`.
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(csv_io)?;
        w.write_record(HEADER).map_err(csv_io)?;
        for (k, &omega) in self.omegas.iter().enumerate() {
            for (&(ix, iz), v) in &self.samples {
                let (re, im) = v[k];
                w.write_record([
                    format!("{omega:e}"),
                    ix.to_string(),
                    iz.to_string(),
                    format!("{re:e}"),
                    format!("{im:e}"),
                ])
                .map_err(csv_io)?;
            }
        }
        w.flush()?;
        let mut f = File::create(sidecar_path(path))?;
        serde_json::to_writer_pretty(&mut f, &self.sidecar).map_err(|e| Error::Io(std::io::Error::other(e)))?;
        writeln!(f)?;
        Ok(())
    }

    fn read(path: &Path) -> Result<Self> {
        let side = sidecar_path(path);
        let text = std::fs::read_to_string(&side)?;
        let sidecar: TabulatedSidecar =
            serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", side.display())))?;
        if sidecar.schema != SCHEMA {
            return Err(Error::Validation(format!(
                "{}: unsupported schema {:?}, expected {SCHEMA:?}",
                side.display(),
                sidecar.schema
            )));
        }
        if !(sidecar.stencil.step_m > 0.0) {
            return Err(Error::Validation(format!("{}: stencil step must be positive", side.display())));
        }

        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(csv_io)?;
        let headers = rdr.headers().map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?.clone();
        if headers.iter().collect::<Vec<_>>() != HEADER {
            return Err(Error::Parse(format!(
                "{}: line 1: expected header {:?}, found {:?}",
                path.display(),
                HEADER.join(","),
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }

        let mut omegas: Vec<f64> = Vec::new();
        let mut samples: BTreeMap<(i8, i8), Vec<(f64, f64)>> = BTreeMap::new();
        for (i, rec) in rdr.records().enumerate() {
            let line = i + 2;
            let rec = rec.map_err(|e| Error::Parse(format!("{}: line {line}: {e}", path.display())))?;
            if rec.len() != 5 {
                return Err(Error::Parse(format!(
                    "{}: line {line}: expected 5 columns, found {}",
                    path.display(),
                    rec.len()
                )));
            }
            let num = |col: usize| -> Result<f64> {
                rec[col].parse::<f64>().map_err(|e| {
                    Error::Parse(format!("{}: line {line}, column {} ({}): {e}", path.display(), col + 1, HEADER[col]))
                })
            };
            let idx = |col: usize| -> Result<i8> {
                match rec[col].parse::<i8>() {
                    Ok(v @ -1..=1) => Ok(v),
                    _ => Err(Error::Parse(format!(
                        "{}: line {line}, column {} ({}): stencil index must be -1, 0 or 1, found {:?}",
                        path.display(),
                        col + 1,
                        HEADER[col],
                        &rec[col]
                    ))),
                }
            };
            let omega = num(0)?;
            let (ix, iz) = (idx(1)?, idx(2)?);
            let (re, im) = (num(3)?, num(4)?);
            match omegas.last() {
                Some(&last) if omega == last => {}
                Some(&last) if omega < last => {
                    return Err(Error::Validation(format!(
                        "{}: line {line}: frequency grid not strictly increasing ({omega:e} after {last:e})",
                        path.display()
                    )));
                }
                _ => {
                    if let Some(&last) = omegas.last() {
                        check_row_block(&samples, omegas.len(), path, line, last)?;
                    }
                    omegas.push(omega);
                }
            }
            let col = samples.entry((ix, iz)).or_default();
            if col.len() == omegas.len() {
                return Err(Error::Validation(format!(
                    "{}: line {line}: duplicated frequency {omega:e} for stencil pair ({ix}, {iz})",
                    path.display()
                )));
            }
            if col.len() + 1 != omegas.len() {
                return Err(Error::Validation(format!(
                    "{}: line {line}: stencil pair ({ix}, {iz}) missing at earlier frequencies",
                    path.display()
                )));
            }
            col.push((re, im));
        }
        if let Some(&last) = omegas.last() {
            check_row_block(&samples, omegas.len(), path, 0, last)?;
        }
        let t = TabulatedGreens { sidecar, omegas, samples, source: path.display().to_string() };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.omegas.len() < 2 {
            return Err(Error::Validation("tabulated grid needs at least two frequencies".into()));
        }
        if let Some(w) = self.omegas.windows(2).find(|w| !(w[1] > w[0])) {
            return Err(Error::Validation(format!("frequency grid not strictly increasing at {:e}", w[1])));
        }
        for p in CROSS {
            if !self.samples.contains_key(&p) {
                return Err(Error::Validation(format!(
                    "stencil mismatch: pair {p:?} required by the mixed-derivative stencil is missing"
                )));
            }
        }
        for (p, v) in &self.samples {
            if v.len() != self.omegas.len() {
                return Err(Error::Validation(format!(
                    "stencil mismatch: pair {p:?} has {} samples for {} frequencies",
                    v.len(),
                    self.omegas.len()
                )));
            }
        }
        match self.sidecar.interpolation.as_str() {
            "cubic" | "linear" => Ok(()),
            other => Err(Error::Validation(format!("unknown interpolation {other:?}"))),
        }
    }

    fn index_of(&self, r: &Vector3<f64>) -> Result<i8> {
        let s = &self.sidecar.stencil;
        let c = Vector3::from(s.center_m);
        let d = r - c;
        let a = s.axis.index();
        let tol = 1e-9 * s.step_m;
        let off = d.norm_squared() - d[a] * d[a];
        if off.max(0.0).sqrt() > tol {
            return Err(Error::Domain(format!(
                "stencil mismatch: point ({:e}, {:e}, {:e}) is off the tabulated stencil axis",
                r.x, r.y, r.z
            )));
        }
        for i in -1i8..=1 {
            if (d[a] - f64::from(i) * s.step_m).abs() <= tol {
                return Ok(i);
            }
        }
        Err(Error::Domain(format!(
            "stencil mismatch: offset {:e} m is not a multiple of the tabulated step {:e} m",
            d[a], s.step_m
        )))
    }

    /// Interpolated `(Re G_xx, Im G_xx)` at a stencil pair.
    pub fn gxx(&self, ix: i8, iz: i8, omega: f64) -> Result<(f64, f64)> {
        let col = self
            .samples
            .get(&(ix, iz))
            .ok_or_else(|| Error::Domain(format!("stencil mismatch: pair ({ix}, {iz}) not tabulated")))?;
        let w = &self.omegas;
        let n = w.len();
        if !(omega >= w[0] && omega <= w[n - 1]) {
            return Err(Error::Domain(format!("ω = {omega:e} outside tabulated band [{:e}, {:e}]", w[0], w[n - 1])));
        }
        let i = match w.binary_search_by(|x| x.total_cmp(&omega)) {
            Ok(i) => return Ok(col[i]),
            Err(i) => i - 1,
        };
        let cubic = self.sidecar.interpolation == "cubic" && i >= 1 && i + 2 < n;
        let idx: Vec<usize> = if cubic { (i - 1..=i + 2).collect() } else { vec![i, i + 1] };
        let mut re = 0.0;
        let mut im = 0.0;
        for &j in &idx {
            let mut basis = 1.0;
            for &m in &idx {
                if m != j {
                    basis *= (omega - w[m]) / (w[j] - w[m]);
                }
            }
            re += basis * col[j].0;
            im += basis * col[j].1;
        }
        Ok((re, im))
    }
}

fn check_row_block(
    samples: &BTreeMap<(i8, i8), Vec<(f64, f64)>>,
    count: usize,
    path: &Path,
    line: usize,
    omega: f64,
) -> Result<()> {
    for (p, v) in samples {
        if v.len() != count {
            let at = if line > 0 { format!("before line {line}") } else { "at end of file".into() };
            return Err(Error::Validation(format!(
                "{}: {at}: stencil pair {p:?} missing at ω = {omega:e}",
                path.display()
            )));
        }
    }
    Ok(())
}

fn stencil_point(s: &StencilSpec, i: i8) -> Vector3<f64> {
    let mut r = Vector3::from(s.center_m);
    r[s.axis.index()] += f64::from(i) * s.step_m;
    r
}

fn csv_io(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse(format!("{other:?}")),
    }
}

impl GreensProvider for TabulatedGreens {
    fn im_g(&self, _: &Vector3<f64>, _: &Vector3<f64>, _: f64) -> Result<Matrix3<f64>> {
        Err(Error::Domain("tabulated provider stores only the xx component".into()))
    }

    fn im_g_xx(&self, r: &Vector3<f64>, rp: &Vector3<f64>, omega: f64) -> Result<f64> {
        let (ix, iz) = (self.index_of(r)?, self.index_of(rp)?);
        Ok(self.gxx(ix, iz, omega)?.1)
    }

    fn band(&self) -> (f64, f64) {
        (self.omegas[0], *self.omegas.last().unwrap())
    }

    fn descriptor(&self) -> String {
        format!("tabulated({})", self.source)
    }
}
