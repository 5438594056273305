use super::{Mat3, Vec3};
use crate::error::{Error, Result};

/// Signed singular value decomposition `F = U diag(σ) Vᵀ`.
///
/// `U` and `V` are proper rotations. Singular values are sorted in
/// descending magnitude; the last one carries the sign of `det F`.
#[derive(Clone, Copy, Debug)]
pub struct Svd3 {
    pub u: Mat3,
    pub sigma: Vec3,
    pub v: Mat3,
}

impl Svd3 {
    pub fn reconstruct(&self) -> Mat3 {
        self.u * Mat3::diag(self.sigma.0) * self.v.transpose()
    }
}

const MAX_SWEEPS: usize = 24;

/// One-sided (Hestenes) Jacobi SVD of a 3×3 matrix.
///
/// Orthogonalizes the columns of `F·V` directly, which keeps small singular
/// values accurate instead of squaring the condition number through `FᵀF`.
pub fn svd3(f: &Mat3) -> Svd3 {
    let mut a = [f.col(0), f.col(1), f.col(2)];
    let mut v = [
        Vec3::new(1.0, 0.0, 0.0),
        Vec3::new(0.0, 1.0, 0.0),
        Vec3::new(0.0, 0.0, 1.0),
    ];

    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for (p, q) in [(0usize, 1usize), (0, 2), (1, 2)] {
            let alpha = a[p].norm_squared();
            let beta = a[q].norm_squared();
            let gamma = a[p].dot(&a[q]);
            if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                continue;
            }
            rotated = true;
            let zeta = (beta - alpha) / (2.0 * gamma);
            let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
            let c = 1.0 / (1.0 + t * t).sqrt();
            let s = c * t;
            let (ap, aq) = (a[p], a[q]);
            a[p] = ap * c - aq * s;
            a[q] = ap * s + aq * c;
            let (vp, vq) = (v[p], v[q]);
            v[p] = vp * c - vq * s;
            v[q] = vp * s + vq * c;
        }
        if !rotated {
            break;
        }
    }

    let mut sigma = [a[0].norm(), a[1].norm(), a[2].norm()];
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| sigma[j].total_cmp(&sigma[i]));
    let a = order.map(|i| a[i]);
    let mut v = order.map(|i| v[i]);
    sigma = order.map(|i| sigma[i]);

    let scale = sigma[0];
    let tiny = scale * 1e-14;
    let mut u = [Vec3::ZERO; 3];
    if scale == 0.0 {
        u = [
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
            Vec3::new(0.0, 0.0, 1.0),
        ];
    } else {
        u[0] = a[0] * (1.0 / sigma[0]);
        u[1] = if sigma[1] > tiny {
            let c = a[1] * (1.0 / sigma[1]);
            // re-orthogonalize against u0 to absorb residual coupling
            (c - u[0] * u[0].dot(&c)).normalized()
        } else {
            any_orthogonal(&u[0])
        };
        u[2] = u[0].cross(&u[1]);
        if sigma[2] > tiny {
            // keep the orientation implied by the data column
            if u[2].dot(&a[2]) < 0.0 {
                u[2] = -u[2];
            }
        }
    }

    let mut um = Mat3::from_cols(u[0], u[1], u[2]);
    let mut vm = Mat3::from_cols(v[0], v[1], v[2]);

    if vm.determinant() < 0.0 {
        v[2] = -v[2];
        vm = Mat3::from_cols(v[0], v[1], v[2]);
        u[2] = -u[2];
        um = Mat3::from_cols(u[0], u[1], u[2]);
    }
    if um.determinant() < 0.0 {
        u[2] = -u[2];
        um = Mat3::from_cols(u[0], u[1], u[2]);
        sigma[2] = -sigma[2];
    }

    Svd3 {
        u: um,
        sigma: Vec3(sigma),
        v: vm,
    }
}

fn any_orthogonal(n: &Vec3) -> Vec3 {
    let pick = if n[0].abs() < 0.9 {
        Vec3::new(1.0, 0.0, 0.0)
    } else {
        Vec3::new(0.0, 1.0, 0.0)
    };
    (pick - *n * n.dot(&pick)).normalized()
}

/// Polar decomposition `F = R S` with `R` a proper rotation and `S`
/// symmetric positive semi-definite, computed through [`svd3`].
pub fn polar_decompose(f: &Mat3) -> Result<(Mat3, Mat3)> {
    let det = f.determinant();
    if !f.is_finite() || !det.is_finite() {
        return Err(Error::NonFinite("deformation gradient".into()));
    }
    if det <= 0.0 {
        return Err(Error::InvertedElement {
            det,
            context: "polar decomposition".into(),
        });
    }
    let svd = svd3(f);
    let r = svd.u * svd.v.transpose();
    let s = svd.v * Mat3::diag(svd.sigma.0) * svd.v.transpose();
    Ok((r, s.symmetric_part()))
}
