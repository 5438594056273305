use super::Vec3;
use crate::error::{Error, Result};

/// Quadratic B-spline weights over the 3×3×3 node neighborhood of a particle.
///
/// Nodes sit at `origin + index·dx`. Axis `d` covers node indices
/// `base[d] .. base[d] + 3`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelStencil {
    pub base: [i64; 3],
    pub w: [[f64; 3]; 3],
    /// Derivative of each axis weight with respect to the particle
    /// position, in 1/length.
    pub dw: [[f64; 3]; 3],
}

impl KernelStencil {
    /// Weight of node `base + (a, b, c)`.
    #[inline]
    pub fn weight(&self, a: usize, b: usize, c: usize) -> f64 {
        self.w[0][a] * self.w[1][b] * self.w[2][c]
    }

    /// Gradient of the weight of node `base + (a, b, c)` with respect to
    /// the particle position.
    #[inline]
    pub fn gradient(&self, a: usize, b: usize, c: usize) -> Vec3 {
        let (w, dw) = (&self.w, &self.dw);
        Vec3([
            dw[0][a] * w[1][b] * w[2][c],
            w[0][a] * dw[1][b] * w[2][c],
            w[0][a] * w[1][b] * dw[2][c],
        ])
    }
}

/// Evaluates the 1D quadratic B-spline at offset `u` (in cells).
pub fn quadratic_bspline(u: f64) -> f64 {
    let a = u.abs();
    if a < 0.5 {
        0.75 - a * a
    } else if a < 1.5 {
        0.5 * (1.5 - a) * (1.5 - a)
    } else {
        0.0
    }
}

/// Stencil for a particle at `x_p` on a grid with `cells` cells per axis.
///
/// The particle must lie at least one cell inside every face so that the
/// whole stencil addresses existing nodes.
pub fn quadratic_bspline_stencil(
    x_p: Vec3,
    grid_origin: Vec3,
    dx: f64,
    cells: [usize; 3],
) -> Result<KernelStencil> {
    if !(dx > 0.0) {
        return Err(Error::InvalidParameter(format!("cell size {dx} must be positive")));
    }
    let inv_dx = 1.0 / dx;
    let mut base = [0i64; 3];
    let mut w = [[0.0; 3]; 3];
    let mut dw = [[0.0; 3]; 3];
    for d in 0..3 {
        let xi = (x_p[d] - grid_origin[d]) * inv_dx;
        if !(xi >= 1.0 && xi <= cells[d] as f64 - 1.0) {
            return Err(Error::OutOfDomain {
                particle: None,
                position: x_p.0,
            });
        }
        let b = (xi - 0.5).floor();
        let fx = xi - b;
        base[d] = b as i64;
        w[d] = [
            0.5 * (1.5 - fx) * (1.5 - fx),
            0.75 - (fx - 1.0) * (fx - 1.0),
            0.5 * (fx - 0.5) * (fx - 0.5),
        ];
        dw[d] = [
            -(1.5 - fx) * inv_dx,
            -2.0 * (fx - 1.0) * inv_dx,
            (fx - 0.5) * inv_dx,
        ];
    }
    Ok(KernelStencil { base, w, dw })
}
