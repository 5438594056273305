use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::mathcore::Vec3;

/// Placement of the background grid: `cells` cells of size `dx` per axis,
/// nodes at `origin + index·dx` for `index ∈ 0..=cells`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub origin: Vec3,
    pub dx: f64,
    pub cells: [usize; 3],
}

impl GridSpec {
    /// Cubic domain of side `extent` split into `resolution` cells per axis.
    pub fn cube(origin: Vec3, extent: f64, resolution: usize) -> Self {
        GridSpec {
            origin,
            dx: extent / resolution as f64,
            cells: [resolution; 3],
        }
    }

    #[inline]
    pub fn nodes_per_axis(&self) -> [u64; 3] {
        self.cells.map(|c| c as u64 + 1)
    }

    #[inline]
    pub fn key(&self, idx: [i64; 3]) -> u64 {
        let n = self.nodes_per_axis();
        idx[0] as u64 + n[0] * (idx[1] as u64 + n[1] * idx[2] as u64)
    }

    #[inline]
    pub fn index_of(&self, key: u64) -> [usize; 3] {
        let n = self.nodes_per_axis();
        [
            (key % n[0]) as usize,
            ((key / n[0]) % n[1]) as usize,
            (key / (n[0] * n[1])) as usize,
        ]
    }

    #[inline]
    pub fn node_position(&self, idx: [usize; 3]) -> Vec3 {
        Vec3([
            self.origin[0] + idx[0] as f64 * self.dx,
            self.origin[1] + idx[1] as f64 * self.dx,
            self.origin[2] + idx[2] as f64 * self.dx,
        ])
    }

    /// Upper corner of the domain.
    pub fn max_corner(&self) -> Vec3 {
        self.node_position(self.cells)
    }

    /// Stride between consecutive keys along each axis.
    #[inline]
    pub fn strides(&self) -> [u64; 3] {
        let n = self.nodes_per_axis();
        [1, n[0], n[0] * n[1]]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    /// Nodes in the band are brought to rest.
    Sticky,
    /// Nodes in the band lose their velocity component normal to the face.
    Slip,
}

/// Boundary handling for the low and high face of each axis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Boundaries {
    pub faces: [[Boundary; 2]; 3],
    /// Width of the boundary band in cells.
    pub band: usize,
}

impl Boundaries {
    pub fn uniform(b: Boundary) -> Self {
        Boundaries {
            faces: [[b; 2]; 3],
            band: 2,
        }
    }

    /// Sticky floor (low y face), slip walls elsewhere.
    pub fn sticky_floor() -> Self {
        let mut faces = [[Boundary::Slip; 2]; 3];
        faces[1][0] = Boundary::Sticky;
        Boundaries { faces, band: 2 }
    }
}

impl Default for Boundaries {
    fn default() -> Self {
        Self::sticky_floor()
    }
}

/// Axis-aligned region whose nodes are driven at a prescribed velocity.
/// The box moves with that velocity.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grip {
    pub min: Vec3,
    pub max: Vec3,
    pub velocity: Vec3,
}

impl Grip {
    pub fn contains(&self, x: Vec3, time: f64) -> bool {
        let off = self.velocity * time;
        (0..3).all(|d| x[d] >= self.min[d] + off[d] && x[d] <= self.max[d] + off[d])
    }
}

/// External forcing applied during the grid update.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GridForcing {
    pub gravity: Vec3,
    /// Constant body force per unit mass (N/kg).
    pub body_force: Vec3,
    pub boundaries: Boundaries,
    pub grips: Vec<Grip>,
}

/// Sparse background grid holding only nodes touched by some particle
/// stencil. Keys are sorted, so lookups are binary searches and iteration
/// order is fixed.
#[derive(Clone, Debug)]
pub struct Grid {
    pub spec: GridSpec,
    pub keys: Vec<u64>,
    pub mass: Vec<f64>,
    pub momentum: Vec<Vec3>,
}

impl Grid {
    pub fn new(spec: GridSpec) -> Self {
        Grid {
            spec,
            keys: Vec::new(),
            mass: Vec::new(),
            momentum: Vec::new(),
        }
    }

    pub fn clear(&mut self) {
        self.keys.clear();
        self.mass.clear();
        self.momentum.clear();
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    #[inline]
    pub fn find(&self, key: u64) -> Option<usize> {
        self.keys.binary_search(&key).ok()
    }

    pub fn total_mass(&self) -> f64 {
        self.mass.iter().sum()
    }

    pub fn total_momentum(&self) -> Vec3 {
        self.momentum.iter().fold(Vec3::ZERO, |a, p| a + *p)
    }

    /// Node velocity `p_i / m_i`, zero for empty nodes.
    #[inline]
    pub fn velocity(&self, i: usize) -> Vec3 {
        let m = self.mass[i];
        if m > 0.0 {
            self.momentum[i] * (1.0 / m)
        } else {
            Vec3::ZERO
        }
    }

    /// Sets every node's velocity to `field(x_i)`; used by tests that probe
    /// the grid-to-particle transfer with analytic fields.
    pub fn set_velocity_field(&mut self, field: impl Fn(Vec3) -> Vec3) {
        for i in 0..self.keys.len() {
            let x = self.spec.node_position(self.spec.index_of(self.keys[i]));
            self.momentum[i] = field(x) * self.mass[i];
        }
    }
}

/// Symplectic Euler grid update: `v_i = p_i/m_i + dt (g + b)`, then
/// grip velocities and boundary conditions; momentum is rewritten as
/// `m_i v_i`.
pub fn grid_update(grid: &mut Grid, dt: f64, time: f64, forcing: &GridForcing, serial: bool) {
    let spec = grid.spec;
    let accel = forcing.gravity + forcing.body_force;
    let band = forcing.boundaries.band;
    let update = |(key, (m, p)): (&u64, (&f64, &mut Vec3))| {
        if *m <= 0.0 {
            *p = Vec3::ZERO;
            return;
        }
        let idx = spec.index_of(*key);
        let mut v = *p * (1.0 / *m) + accel * dt;
        if !forcing.grips.is_empty() {
            let x = spec.node_position(idx);
            if let Some(g) = forcing.grips.iter().find(|g| g.contains(x, time)) {
                v = g.velocity;
            }
        }
        for d in 0..3 {
            let side = if idx[d] < band {
                Some(0)
            } else if idx[d] > spec.cells[d].saturating_sub(band) {
                Some(1)
            } else {
                None
            };
            if let Some(s) = side {
                match forcing.boundaries.faces[d][s] {
                    Boundary::Sticky => v = Vec3::ZERO,
                    Boundary::Slip => v[d] = 0.0,
                }
            }
        }
        *p = v * *m;
    };
    if serial {
        grid.keys
            .iter()
            .zip(grid.mass.iter().zip(grid.momentum.iter_mut()))
            .for_each(update);
    } else {
        grid.keys
            .par_iter()
            .zip(grid.mass.par_iter().zip(grid.momentum.par_iter_mut()))
            .with_min_len(256)
            .for_each(update);
    }
}
