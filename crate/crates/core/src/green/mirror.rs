use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::free::{free_from_separation, free_xx_from_separation};
use super::GreensProvider;
use crate::consts::C;
use crate::error::{Error, Result};
use crate::Axis;

/// Perfect-mirror geometries handled by the image method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MirrorGeometry {
    /// Planar mirror normal to `axis` at coordinate `position`. The vacuum is
    /// the side containing the origin.
    HalfSpace { axis: Axis, position: f64 },
    /// Two planar mirrors normal to `axis` at `±separation/2`.
    ParallelPlates {
        axis: Axis,
        separation: f64,
        /// Starting truncation order; each order adds two images.
        n_img: usize,
        /// Amplitude reflectivity applied per reflection (1 for perfect mirrors).
        #[serde(default = "one")]
        reflectivity: f64,
    },
}

fn one() -> f64 {
    1.0
}

/// Cap on the auto-increased image order.
pub const MAX_IMAGE_ORDER: usize = 1 << 21;

/// Relative Cauchy criterion for the image series.
pub const IMAGE_TOL: f64 = 1e-6;

impl MirrorGeometry {
    pub fn half_space(axis: Axis, position: f64) -> Result<Self> {
        let g = MirrorGeometry::HalfSpace { axis, position };
        g.validate()?;
        Ok(g)
    }

    pub fn parallel_plates(axis: Axis, separation: f64, n_img: usize) -> Result<Self> {
        let g = MirrorGeometry::ParallelPlates { axis, separation, n_img, reflectivity: 1.0 };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            MirrorGeometry::HalfSpace { position, .. } => {
                if !(position.is_finite() && position != 0.0) {
                    return Err(Error::Validation(format!(
                        "half-space mirror position must be finite and nonzero, got {position}"
                    )));
                }
            }
            MirrorGeometry::ParallelPlates { separation, n_img, reflectivity, .. } => {
                if !(separation > 0.0 && separation.is_finite()) {
                    return Err(Error::Validation(format!("plate separation must be positive, got {separation}")));
                }
                if n_img < 1 {
                    return Err(Error::Validation("n_img must be at least 1".into()));
                }
                if !(0.0..=1.0).contains(&reflectivity) {
                    return Err(Error::Validation(format!("reflectivity must lie in [0, 1], got {reflectivity}")));
                }
            }
        }
        Ok(())
    }

    fn check_inside(&self, r: &Vector3<f64>) -> Result<()> {
        let inside = match *self {
            MirrorGeometry::HalfSpace { axis, position } => {
                let y = r[axis.index()];
                if position > 0.0 {
                    y < position
                } else {
                    y > position
                }
            }
            MirrorGeometry::ParallelPlates { axis, separation, .. } => r[axis.index()].abs() < 0.5 * separation,
        };
        if inside {
            Ok(())
        } else {
            Err(Error::Domain(format!("point ({:e}, {:e}, {:e}) lies on or behind a mirror", r.x, r.y, r.z)))
        }
    }
}

/// Image-dipole provider for perfectly conducting planar mirrors.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageMirror {
    pub geometry: MirrorGeometry,
}

impl ImageMirror {
    pub fn new(geometry: MirrorGeometry) -> Result<Self> {
        geometry.validate()?;
        Ok(ImageMirror { geometry })
    }

    /// Image-series evaluation with the truncation order actually used.
    pub fn evaluate(&self, r: &Vector3<f64>, rp: &Vector3<f64>, omega: f64) -> Result<(Matrix3<f64>, usize)> {
        im_g_mirror_with_order(r, rp, omega, &self.geometry)
    }
}

impl GreensProvider for ImageMirror {
    fn im_g(&self, r: &Vector3<f64>, rp: &Vector3<f64>, omega: f64) -> Result<Matrix3<f64>> {
        Ok(self.evaluate(r, rp, omega)?.0)
    }

    fn im_g_xx(&self, r: &Vector3<f64>, rp: &Vector3<f64>, omega: f64) -> Result<f64> {
        check_args(&self.geometry, r, rp, omega)?;
        let k = omega / C;
        match self.geometry {
            MirrorGeometry::HalfSpace { .. } => {
                Ok(free_xx_from_separation(&(r - rp), k) + half_space_image(r, rp, k, &self.geometry)[(0, 0)])
            }
            MirrorGeometry::ParallelPlates { .. } => {
                let mut direct = Matrix3::zeros();
                direct[(0, 0)] = free_xx_from_separation(&(r - rp), k);
                let (s, _) =
                    converge(|order| plates_sum(r, rp, k, &self.geometry, order, true), direct, &self.geometry)?;
                Ok(s[(0, 0)])
            }
        }
    }

    fn descriptor(&self) -> String {
        match self.geometry {
            MirrorGeometry::HalfSpace { axis, position } => {
                format!("half-space(axis={axis}, position={position:e})")
            }
            MirrorGeometry::ParallelPlates { axis, separation, reflectivity, .. } => {
                format!("parallel-plates(axis={axis}, L={separation:e}, r={reflectivity})")
            }
        }
    }
}

/// `Im G` for a mirror geometry: free-space term plus the image-dipole series.
///
/// ```
/// use nalgebra::Vector3;
/// use recoil::green::{im_g_free, im_g_mirror, MirrorGeometry};
/// use recoil::Axis;
/// let w = 1.2e15;
/// let far = MirrorGeometry::half_space(Axis::Z, 1.0).unwrap();
/// let o = Vector3::zeros();
/// let ratio = im_g_mirror(&o, &o, w, &far).unwrap()[(0, 0)] / im_g_free(&o, &o, w)[(0, 0)];
/// assert!((ratio - 1.0).abs() < 1e-3);
/// ```
pub fn im_g_mirror(r: &Vector3<f64>, rp: &Vector3<f64>, omega: f64, geom: &MirrorGeometry) -> Result<Matrix3<f64>> {
    Ok(im_g_mirror_with_order(r, rp, omega, geom)?.0)
}

fn check_args(geom: &MirrorGeometry, r: &Vector3<f64>, rp: &Vector3<f64>, omega: f64) -> Result<()> {
    if !(omega > 0.0) {
        return Err(Error::Domain(format!("ω must be positive, got {omega}")));
    }
    geom.check_inside(r)?;
    geom.check_inside(rp)
}

fn im_g_mirror_with_order(
    r: &Vector3<f64>,
    rp: &Vector3<f64>,
    omega: f64,
    geom: &MirrorGeometry,
) -> Result<(Matrix3<f64>, usize)> {
    geom.validate()?;
    check_args(geom, r, rp, omega)?;
    let k = omega / C;
    let free = free_from_separation(&(r - rp), k);
    match geom {
        MirrorGeometry::HalfSpace { .. } => Ok((free + half_space_image(r, rp, k, geom), 1)),
        MirrorGeometry::ParallelPlates { .. } => converge(|order| plates_sum(r, rp, k, geom, order, false), free, geom),
    }
}

/// Flip matrix for one reflection: components parallel to the mirror change sign.
fn flip(axis: Axis) -> Matrix3<f64> {
    let mut m = -Matrix3::identity();
    m[(axis.index(), axis.index())] = 1.0;
    m
}

fn half_space_image(r: &Vector3<f64>, rp: &Vector3<f64>, k: f64, geom: &MirrorGeometry) -> Matrix3<f64> {
    let MirrorGeometry::HalfSpace { axis, position } = *geom else { unreachable!() };
    let mut img = *rp;
    img[axis.index()] = 2.0 * position - rp[axis.index()];
    free_from_separation(&(r - img), k) * flip(axis)
}

/// Image sum (without the direct term) through reflection order `order`.
fn plates_sum(
    r: &Vector3<f64>,
    rp: &Vector3<f64>,
    k: f64,
    geom: &MirrorGeometry,
    order: usize,
    xx_only: bool,
) -> Matrix3<f64> {
    let MirrorGeometry::ParallelPlates { axis, separation: l, reflectivity, .. } = *geom else { unreachable!() };
    let a = axis.index();
    let m = flip(axis);
    let mut sum = Matrix3::zeros();
    let mut weight = 1.0;
    for n in 1..=order {
        weight *= reflectivity;
        if weight == 0.0 {
            break;
        }
        let odd = n % 2 == 1;
        // two images of order n: one per side
        let positions: [f64; 2] = if odd {
            let j = ((n - 1) / 2) as f64;
            [(2.0 * j + 1.0) * l - rp[a], -(2.0 * j + 1.0) * l - rp[a]]
        } else {
            let j = (n / 2) as f64;
            [rp[a] + 2.0 * j * l, rp[a] - 2.0 * j * l]
        };
        for p in positions {
            let mut img = *rp;
            img[a] = p;
            let d = r - img;
            if xx_only {
                let v = free_xx_from_separation(&d, k);
                // the xx entry of G·M is G_xx·M_xx
                sum[(0, 0)] += weight * v * if odd { m[(0, 0)] } else { 1.0 };
            } else {
                let g = free_from_separation(&d, k);
                sum += if odd { g * m * weight } else { g * weight };
            }
        }
    }
    sum
}

/// Doubles the image order from the geometry's starting value until the
/// relative change (Frobenius norm) drops below [`IMAGE_TOL`].
fn converge<F: Fn(usize) -> Matrix3<f64>>(
    f: F,
    direct: Matrix3<f64>,
    geom: &MirrorGeometry,
) -> Result<(Matrix3<f64>, usize)> {
    let MirrorGeometry::ParallelPlates { n_img, .. } = *geom else { unreachable!() };
    let mut n = n_img;
    let mut prev = direct + f(n);
    loop {
        let next = direct + f(2 * n);
        let scale = next.norm().max(prev.norm());
        if (next - prev).norm() <= IMAGE_TOL * scale || scale == 0.0 {
            return Ok((prev, n));
        }
        if 2 * n >= MAX_IMAGE_ORDER {
            return Err(Error::Numeric(format!(
                "image series not Cauchy-convergent at order {}: relative change {:e}",
                2 * n,
                (next - prev).norm() / scale
            )));
        }
        n *= 2;
        prev = next;
    }
}
