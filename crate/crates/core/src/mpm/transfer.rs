use rayon::prelude::*;

use super::grid::{Grid, GridSpec};
use super::Particle;
use crate::constitutive::MaterialModel;
use crate::error::{Error, Result};
use crate::mathcore::{quadratic_bspline_stencil, svd3, KernelStencil, Mat3, Vec3};

/// Below this determinant the deformation gradient is clamped.
pub const DET_CLAMP_THRESHOLD: f64 = 1e-8;
/// Floor applied to singular values when clamping.
pub const SINGULAR_VALUE_FLOOR: f64 = 1e-3;

const MIN_PAR_LEN: usize = 64;

#[derive(Clone, Copy, Debug)]
struct Prepared {
    key: u64,
    stencil: KernelStencil,
    momentum: Vec3,
    affine: Mat3,
}

/// Reusable buffers for the particle-to-grid transfer.
#[derive(Debug, Default)]
pub struct TransferScratch {
    prepared: Vec<Prepared>,
    order: Vec<u32>,
    /// `(base key, start, end)` ranges into `order`, sorted by key.
    bins: Vec<(u64, u32, u32)>,
}

fn stencil_for(p: &Particle, idx: usize, spec: &GridSpec) -> Result<KernelStencil> {
    quadratic_bspline_stencil(p.x, spec.origin, spec.dx, spec.cells).map_err(|e| match e {
        Error::OutOfDomain { position, .. } => Error::OutOfDomain {
            particle: Some(idx),
            position,
        },
        other => other,
    })
}

fn with_particle_context(e: Error, idx: usize) -> Error {
    match e {
        Error::InvertedElement { det, context } => Error::InvertedElement {
            det,
            context: format!("particle {idx}: {context}"),
        },
        Error::NonFinite(what) => Error::NonFinite(format!("particle {idx}: {what}")),
        other => other,
    }
}

fn first_error<T>(results: Vec<Result<T>>) -> Result<Vec<T>> {
    results.into_iter().collect()
}

/// Particle-to-grid transfer with the stress impulse fused into the affine
/// momentum term:
///
/// `m_i = Σ_p w_ip m_p`,
/// `p_i = Σ_p w_ip [m_p v_p + (m_p C_p − dt V⁰_p (4/dx²) τ_p)(x_i − x_p)]`.
///
/// Each node sums its contributions in a fixed order (by particle cell, then
/// particle index), so the result does not depend on the worker count.
pub fn p2g(
    particles: &[Particle],
    grid: &mut Grid,
    dt: f64,
    materials: &[MaterialModel],
    scratch: &mut TransferScratch,
    serial: bool,
) -> Result<()> {
    let spec = grid.spec;
    let inertia = 4.0 / (spec.dx * spec.dx);

    let prepare = |(idx, p): (usize, &Particle)| -> Result<Prepared> {
        let stencil = stencil_for(p, idx, &spec)?;
        let model = materials.get(p.material).ok_or_else(|| {
            Error::InvalidParameter(format!(
                "particle {idx} references missing material {}",
                p.material
            ))
        })?;
        let tau = model
            .kirchhoff(&p.f)
            .map_err(|e| with_particle_context(e, idx))?;
        Ok(Prepared {
            key: spec.key(stencil.base),
            stencil,
            momentum: p.v * p.mass,
            affine: p.c * p.mass - tau * (dt * p.volume0 * inertia),
        })
    };
    let prepared: Vec<Result<Prepared>> = if serial {
        particles.iter().enumerate().map(prepare).collect()
    } else {
        particles
            .par_iter()
            .enumerate()
            .with_min_len(MIN_PAR_LEN)
            .map(prepare)
            .collect()
    };
    scratch.prepared = first_error(prepared)?;
    let prepared = &scratch.prepared;

    scratch.order.clear();
    scratch.order.extend(0..particles.len() as u32);
    scratch
        .order
        .sort_unstable_by_key(|&i| (prepared[i as usize].key, i));

    scratch.bins.clear();
    let mut start = 0usize;
    while start < scratch.order.len() {
        let key = prepared[scratch.order[start] as usize].key;
        let mut end = start + 1;
        while end < scratch.order.len() && prepared[scratch.order[end] as usize].key == key {
            end += 1;
        }
        scratch.bins.push((key, start as u32, end as u32));
        start = end;
    }

    let strides = spec.strides();
    grid.clear();
    for &(key, _, _) in &scratch.bins {
        for c in 0..3u64 {
            for b in 0..3u64 {
                let row = key + b * strides[1] + c * strides[2];
                grid.keys.extend([row, row + 1, row + 2]);
            }
        }
    }
    grid.keys.sort_unstable();
    grid.keys.dedup();

    let bins = &scratch.bins;
    let order = &scratch.order;
    let gather = |key: &u64| -> (f64, Vec3) {
        let idx = spec.index_of(*key);
        let xi = spec.node_position(idx);
        let mut mass = 0.0;
        let mut mom = Vec3::ZERO;
        for dz in 0..3usize {
            if idx[2] < dz {
                break;
            }
            for dy in 0..3usize {
                if idx[1] < dy {
                    break;
                }
                let row = key - dy as u64 * strides[1] - dz as u64 * strides[2];
                let lo = row.saturating_sub(idx[0].min(2) as u64);
                let mut b = bins.partition_point(|bin| bin.0 < lo);
                while b < bins.len() && bins[b].0 <= row {
                    let (bkey, s, e) = bins[b];
                    let dx_off = (row - bkey) as usize;
                    for &pi in &order[s as usize..e as usize] {
                        let prep = &prepared[pi as usize];
                        let p = &particles[pi as usize];
                        let w = prep.stencil.weight(dx_off, dy, dz);
                        mass += w * p.mass;
                        mom += (prep.momentum + prep.affine * (xi - p.x)) * w;
                    }
                    b += 1;
                }
            }
        }
        (mass, mom)
    };
    let sums: Vec<(f64, Vec3)> = if serial {
        grid.keys.iter().map(gather).collect()
    } else {
        grid.keys
            .par_iter()
            .with_min_len(MIN_PAR_LEN)
            .map(gather)
            .collect()
    };
    grid.mass.extend(sums.iter().map(|s| s.0));
    grid.momentum.extend(sums.iter().map(|s| s.1));
    Ok(())
}

/// Per-call diagnostics of [`g2p`].
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct G2pStats {
    /// Indices of particles whose deformation gradient needed clamping.
    pub clamped: Vec<usize>,
}

/// Clamps a near-degenerate deformation gradient by lifting its singular
/// values to at least [`SINGULAR_VALUE_FLOOR`]. Returns `None` if no clamp
/// was needed.
pub fn clamp_deformation(f: &Mat3) -> Option<Mat3> {
    if f.determinant() > DET_CLAMP_THRESHOLD {
        return None;
    }
    let svd = svd3(f);
    let sigma = svd.sigma.0.map(|s| s.max(SINGULAR_VALUE_FLOOR));
    Some(svd.u * Mat3::diag(sigma) * svd.v.transpose())
}

fn row_start(grid: &Grid, key: u64) -> Option<usize> {
    let i = grid.find(key)?;
    if i + 2 < grid.keys.len() && grid.keys[i + 2] == key + 2 {
        Some(i)
    } else {
        None
    }
}

/// Grid-to-particle transfer: velocity, affine matrix, deformation gradient
/// (with plastic projection and clamping) and position updates.
///
/// Particles are kept inside the interior margin of the grid.
pub fn g2p(
    grid: &Grid,
    particles: &mut [Particle],
    dt: f64,
    materials: &[MaterialModel],
    serial: bool,
) -> Result<G2pStats> {
    let spec = grid.spec;
    let inertia = 4.0 / (spec.dx * spec.dx);
    let strides = spec.strides();
    let lo = spec.origin + Vec3::splat(spec.dx);
    let hi = spec.origin
        + Vec3([
            (spec.cells[0] as f64 - 1.0) * spec.dx,
            (spec.cells[1] as f64 - 1.0) * spec.dx,
            (spec.cells[2] as f64 - 1.0) * spec.dx,
        ]);

    let update = |(idx, p): (usize, &mut Particle)| -> Result<bool> {
        let stencil = stencil_for(p, idx, &spec)?;
        let base_key = spec.key(stencil.base);
        let mut v = Vec3::ZERO;
        let mut c = Mat3::ZERO;
        let mut grad_v = Mat3::ZERO;
        for dz in 0..3usize {
            for dy in 0..3usize {
                let row = base_key + dy as u64 * strides[1] + dz as u64 * strides[2];
                let start = row_start(grid, row);
                for dx_off in 0..3usize {
                    let vi = match start {
                        Some(s) => grid.velocity(s + dx_off),
                        None => match grid.find(row + dx_off as u64) {
                            Some(n) => grid.velocity(n),
                            None => continue,
                        },
                    };
                    let node = [
                        stencil.base[0] as usize + dx_off,
                        stencil.base[1] as usize + dy,
                        stencil.base[2] as usize + dz,
                    ];
                    let w = stencil.weight(dx_off, dy, dz);
                    let offset = spec.node_position(node) - p.x;
                    v += vi * w;
                    c += vi.outer(&offset) * w;
                    grad_v += vi.outer(&stencil.gradient(dx_off, dy, dz));
                }
            }
        }
        let mut f = (Mat3::IDENTITY + grad_v * dt) * p.f;
        if !f.is_finite() || !v.is_finite() {
            return Err(Error::NonFinite(format!("particle {idx}: state after transfer")));
        }
        let clamped = match clamp_deformation(&f) {
            Some(fc) => {
                f = fc;
                true
            }
            None => false,
        };
        let model = &materials[p.material];
        f = model.project(&f).map_err(|e| with_particle_context(e, idx))?;

        p.v = v;
        p.c = c * inertia;
        p.f = f;
        let x = p.x + v * dt;
        p.x = Vec3([
            x[0].clamp(lo[0], hi[0]),
            x[1].clamp(lo[1], hi[1]),
            x[2].clamp(lo[2], hi[2]),
        ]);
        Ok(clamped)
    };

    let results: Vec<Result<bool>> = if serial {
        particles.iter_mut().enumerate().map(update).collect()
    } else {
        particles
            .par_iter_mut()
            .enumerate()
            .with_min_len(MIN_PAR_LEN)
            .map(update)
            .collect()
    };
    let flags = first_error(results)?;
    Ok(G2pStats {
        clamped: flags
            .into_iter()
            .enumerate()
            .filter_map(|(i, c)| c.then_some(i))
            .collect(),
    })
}
