//! Hybrid Lagrangian-Eulerian time stepping (MLS-MPM with APIC transfers).
//!
//! One step clears the grid, transfers particle mass and momentum to the
//! grid (with the stress impulse fused into the affine term), integrates
//! grid velocities with external forces and boundary conditions, and
//! transfers velocities back to update particle velocity, affine matrix,
//! deformation gradient and position.
//!
//! Every parallel phase is either a per-particle map or a per-node gather
//! with a fixed summation order, so results are bitwise identical for any
//! worker count. The `serial` switch selects the single-threaded reference
//! path.

mod grid;
mod rollout;
mod transfer;

pub use grid::{grid_update, Boundaries, Boundary, Grid, GridForcing, GridSpec, Grip};
pub use rollout::{FrameSnapshot, Rollout, ROLLOUT_MAGIC, ROLLOUT_VERSION};
pub use transfer::{
    clamp_deformation, g2p, p2g, G2pStats, TransferScratch, DET_CLAMP_THRESHOLD,
    SINGULAR_VALUE_FLOOR,
};

use serde::{Deserialize, Serialize};

use crate::constitutive::MaterialModel;
use crate::error::{Error, Result};
use crate::mathcore::{Mat3, Vec3};

/// Lagrangian material point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Particle {
    /// kg
    pub mass: f64,
    /// m
    pub x: Vec3,
    /// m/s
    pub v: Vec3,
    /// Affine velocity matrix (1/s).
    pub c: Mat3,
    /// Elastic deformation gradient.
    pub f: Mat3,
    /// Rest volume (m³).
    pub volume0: f64,
    /// Index into the scene's material list.
    pub material: usize,
}

impl Particle {
    /// Particle at rest in its undeformed configuration.
    pub fn at_rest(x: Vec3, mass: f64, volume0: f64, material: usize) -> Self {
        Particle {
            mass,
            x,
            v: Vec3::ZERO,
            c: Mat3::ZERO,
            f: Mat3::IDENTITY,
            volume0,
            material,
        }
    }
}

/// Named timing presets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimProfile {
    /// Sub-step 2e-5 s, 2000 sub-steps per 4e-2 s frame, 50 frames, 200³ grid.
    Paper,
    /// Sub-step 2e-4 s, 200 sub-steps per frame, 20 frames, 64³ grid.
    Desk,
}

impl SimProfile {
    pub fn dt(self) -> f64 {
        match self {
            SimProfile::Paper => 2e-5,
            SimProfile::Desk => 2e-4,
        }
    }

    pub fn substeps_per_frame(self) -> usize {
        match self {
            SimProfile::Paper => 2000,
            SimProfile::Desk => 200,
        }
    }

    pub fn frame_count(self) -> usize {
        match self {
            SimProfile::Paper => 50,
            SimProfile::Desk => 20,
        }
    }

    pub fn grid_resolution(self) -> usize {
        match self {
            SimProfile::Paper => 200,
            SimProfile::Desk => 64,
        }
    }

    /// Candidates sampled per preference round.
    pub fn candidates(self) -> usize {
        match self {
            SimProfile::Paper => 3,
            SimProfile::Desk => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SimProfile::Paper => "paper",
            SimProfile::Desk => "desk",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Sub-step size (s).
    pub dt: f64,
    pub substeps_per_frame: usize,
    pub frame_count: usize,
    pub grid: GridSpec,
    pub forcing: GridForcing,
    /// Drucker-Prager friction coefficient for plastic classes.
    pub friction: f64,
    /// Abort when more than this fraction of particles is clamped in a frame.
    pub clamp_abort_fraction: f64,
}

impl SimConfig {
    pub fn from_profile(profile: SimProfile, domain_origin: Vec3, domain_extent: f64) -> Self {
        SimConfig {
            dt: profile.dt(),
            substeps_per_frame: profile.substeps_per_frame(),
            frame_count: profile.frame_count(),
            grid: GridSpec::cube(domain_origin, domain_extent, profile.grid_resolution()),
            forcing: GridForcing::default(),
            friction: crate::constitutive::default_friction(),
            clamp_abort_fraction: 0.01,
        }
    }

    pub fn frame_time(&self) -> f64 {
        self.dt * self.substeps_per_frame as f64
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt {} must be positive", self.dt));
        }
        if self.substeps_per_frame == 0 || self.frame_count == 0 {
            return bad("substeps and frames must be positive".into());
        }
        if !(self.grid.dx > 0.0 && self.grid.dx.is_finite()) {
            return bad(format!("grid spacing {} must be positive", self.grid.dx));
        }
        let min_cells = 2 * self.forcing.boundaries.band + 3;
        if self.grid.cells.iter().any(|&c| c < min_cells) {
            return bad(format!("grid needs at least {min_cells} cells per axis"));
        }
        if !self.forcing.gravity.is_finite() || !self.forcing.body_force.is_finite() {
            return bad("external forces must be finite".into());
        }
        Ok(())
    }
}

/// Stepper state: configuration, materials and reusable grid storage.
pub struct Simulator {
    config: SimConfig,
    materials: Vec<MaterialModel>,
    grid: Grid,
    scratch: TransferScratch,
    time: f64,
    serial: bool,
}

impl Simulator {
    pub fn new(config: SimConfig, materials: Vec<MaterialModel>) -> Result<Self> {
        config.validate()?;
        if materials.is_empty() {
            return Err(Error::InvalidParameter("no materials".into()));
        }
        Ok(Simulator {
            grid: Grid::new(config.grid),
            config,
            materials,
            scratch: TransferScratch::default(),
            time: 0.0,
            serial: false,
        })
    }

    /// Use the single-threaded reference path.
    pub fn serial(mut self, serial: bool) -> Self {
        self.serial = serial;
        self
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    /// Clears the grid and runs the particle-to-grid transfer only.
    pub fn transfer_to_grid(&mut self, particles: &[Particle]) -> Result<&Grid> {
        p2g(
            particles,
            &mut self.grid,
            self.config.dt,
            &self.materials,
            &mut self.scratch,
            self.serial,
        )?;
        Ok(&self.grid)
    }

    /// One sub-step: P2G, grid update, G2P.
    pub fn step(&mut self, particles: &mut [Particle]) -> Result<G2pStats> {
        let dt = self.config.dt;
        p2g(
            particles,
            &mut self.grid,
            dt,
            &self.materials,
            &mut self.scratch,
            self.serial,
        )?;
        grid_update(
            &mut self.grid,
            dt,
            self.time,
            &self.config.forcing,
            self.serial,
        );
        let stats = g2p(&self.grid, particles, dt, &self.materials, self.serial)?;
        self.time += dt;
        Ok(stats)
    }

    /// Advances one frame and returns the number of distinct particles that
    /// needed clamping during it.
    pub fn advance_frame(&mut self, particles: &mut [Particle]) -> Result<usize> {
        let mut clamped = vec![false; particles.len()];
        for _ in 0..self.config.substeps_per_frame {
            for i in self.step(particles)?.clamped {
                clamped[i] = true;
            }
        }
        Ok(clamped.into_iter().filter(|&c| c).count())
    }

    /// Runs `frame_count` frames and records a snapshot after each.
    pub fn run(&mut self, particles: &mut [Particle]) -> Result<Rollout> {
        let n = particles.len();
        let mut rollout = Rollout::with_capacity(n, self.config.frame_count);
        for frame in 0..self.config.frame_count {
            let clamped = self.advance_frame(particles)?;
            if clamped as f64 > self.config.clamp_abort_fraction * n as f64 {
                return Err(Error::SimulationAborted {
                    frame,
                    clamped,
                    total: n,
                });
            }
            rollout.push(FrameSnapshot::capture(particles), clamped);
        }
        Ok(rollout)
    }
}

/// Single sub-step on a particle state.
pub fn step(
    particles: &mut [Particle],
    config: &SimConfig,
    materials: &[MaterialModel],
) -> Result<G2pStats> {
    Simulator::new(config.clone(), materials.to_vec())?.step(particles)
}

/// Full rollout from an initial particle state.
pub fn simulate(
    mut particles: Vec<Particle>,
    config: &SimConfig,
    materials: &[MaterialModel],
) -> Result<Rollout> {
    Simulator::new(config.clone(), materials.to_vec())?.run(&mut particles)
}

/// Total linear momentum `Σ m_p v_p`.
pub fn total_momentum(particles: &[Particle]) -> Vec3 {
    particles
        .iter()
        .fold(Vec3::ZERO, |acc, p| acc + p.v * p.mass)
}

pub fn total_mass(particles: &[Particle]) -> f64 {
    particles.iter().map(|p| p.mass).sum()
}
