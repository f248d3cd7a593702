//! Photon-recoil heating of optically levitated nanoparticles near
//! electromagnetic structures.
//!
//! The pipeline runs from Green's tensors ([`green`]) and the tweezer field
//! ([`tweezer`]) to optomechanical spectral densities ([`spectral`]), fits them
//! with a few-mode model ([`fewmode`]), eliminates fast modes to a
//! coherent-scattering model ([`reduce`]), simulates Gaussian dynamics
//! ([`dynamics`]) and evaluates geometric recoil suppression ([`geometry`]).
//!
//! The guide in `book/` walks through each stage; its snippets are compiled as
//! doctests of this crate.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fmt;

use serde::{Deserialize, Serialize};

pub mod consts;
pub mod dynamics;
pub mod error;
pub mod fewmode;
pub mod geometry;
pub mod green;
pub mod quad;
pub mod reduce;
pub mod spectral;
pub mod tweezer;

pub use error::{Error, Result};

/// Cartesian axis. The tweezer is polarized along x and propagates along z.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn unit(self) -> nalgebra::Vector3<f64> {
        let mut v = nalgebra::Vector3::zeros();
        v[self.index()] = 1.0;
        v
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::X => "x",
            Axis::Y => "y",
            Axis::Z => "z",
        })
    }
}

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../README.md")]
    mod readme {}
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/tweezer.md")]
    mod tweezer {}
    #[doc = include_str!("../../../book/src/green.md")]
    mod green {}
    #[doc = include_str!("../../../book/src/spectral.md")]
    mod spectral {}
    #[doc = include_str!("../../../book/src/fewmode.md")]
    mod fewmode {}
    #[doc = include_str!("../../../book/src/reduce.md")]
    mod reduce {}
    #[doc = include_str!("../../../book/src/dynamics.md")]
    mod dynamics {}
    #[doc = include_str!("../../../book/src/geometry.md")]
    mod geometry {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
