//! Small dense linear algebra, polar decomposition, interpolation kernels
//! and elastic moduli conversion.

mod kernel;
mod mat3;
mod polar;

pub use kernel::{quadratic_bspline, quadratic_bspline_stencil, KernelStencil};
pub use mat3::{Mat3, Vec3};
pub use polar::{polar_decompose, svd3, Svd3};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lamé parameters in Pa.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LameParams {
    pub mu: f64,
    pub lambda: f64,
}

impl LameParams {
    /// Inverse conversion back to `(E, ν)`.
    pub fn young_poisson(&self) -> (f64, f64) {
        let (mu, la) = (self.mu, self.lambda);
        (mu * (3.0 * la + 2.0 * mu) / (la + mu), la / (2.0 * (la + mu)))
    }
}

pub fn lame_from_young_poisson(young: f64, nu: f64) -> Result<LameParams> {
    if !(young > 0.0) || !young.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "Young's modulus {young} must be positive and finite"
        )));
    }
    if !(nu > -1.0 && nu < 0.5) {
        return Err(Error::IncompressibilityLimit { nu });
    }
    Ok(LameParams {
        mu: young / (2.0 * (1.0 + nu)),
        lambda: young * nu / ((1.0 + nu) * (1.0 - 2.0 * nu)),
    })
}
