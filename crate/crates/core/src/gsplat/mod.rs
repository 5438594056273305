//! 3D Gaussian primitives, their coupling to simulated particles, and a CPU
//! splatting rasterizer.

mod camera;
mod ply;
mod primitive;
mod render;

pub use camera::{Camera, NEAR_PLANE};
pub use ply::{read_ply, write_ply};
pub use primitive::{
    couple_from_particle, covariance_from_rotation_scale, CouplingMode, GaussianPrimitive, Quat,
};
pub use render::{
    photometric_loss, render, render_detailed, Image, RenderOutput, LOW_PASS,
    TRANSMITTANCE_CUTOFF,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mpm::Particle;

/// Gaussian set, index-aligned with the particle system when coupled.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianScene {
    pub primitives: Vec<GaussianPrimitive>,
    pub background: [f64; 3],
}

impl GaussianScene {
    pub fn new(primitives: Vec<GaussianPrimitive>, background: [f64; 3]) -> Self {
        GaussianScene {
            primitives,
            background,
        }
    }

    pub fn len(&self) -> usize {
        self.primitives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.primitives.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        for (i, g) in self.primitives.iter().enumerate() {
            g.validate().map_err(|e| match e {
                Error::InvalidParameter(m) => Error::InvalidParameter(format!("primitive {i}: {m}")),
                other => other,
            })?;
        }
        Ok(())
    }

    /// Deformed copy of this rest scene; primitive `i` follows particle `i`.
    pub fn coupled(&self, particles: &[Particle], mode: CouplingMode) -> Result<GaussianScene> {
        if particles.len() != self.primitives.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} primitives but {} particles",
                self.primitives.len(),
                particles.len()
            )));
        }
        let primitives = self
            .primitives
            .iter()
            .zip(particles)
            .map(|(g, p)| couple_from_particle(g, &p.f, p.x, mode))
            .collect::<Result<_>>()?;
        Ok(GaussianScene {
            primitives,
            background: self.background,
        })
    }

    /// Same as [`GaussianScene::coupled`] from raw per-particle state.
    pub fn coupled_from_state(
        &self,
        positions: &[crate::mathcore::Vec3],
        deformation: &[crate::mathcore::Mat3],
        mode: CouplingMode,
    ) -> Result<GaussianScene> {
        if positions.len() != self.primitives.len() || deformation.len() != self.primitives.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} primitives but {} particle states",
                self.primitives.len(),
                positions.len()
            )));
        }
        let primitives = self
            .primitives
            .iter()
            .zip(positions.iter().zip(deformation))
            .map(|(g, (x, f))| couple_from_particle(g, f, *x, mode))
            .collect::<Result<_>>()?;
        Ok(GaussianScene {
            primitives,
            background: self.background,
        })
    }
}
