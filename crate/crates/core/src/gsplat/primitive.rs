use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mathcore::{polar_decompose, svd3, Mat3, Vec3};

/// Unit quaternion `w + xi + yj + zk`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quat {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quat {
    pub const IDENTITY: Quat = Quat {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Quat { w, x, y, z }
    }

    pub fn from_axis_angle(axis: Vec3, angle: f64) -> Self {
        let a = axis.normalized();
        let (s, c) = (0.5 * angle).sin_cos();
        Quat::new(c, a[0] * s, a[1] * s, a[2] * s)
    }

    pub fn norm(&self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn normalized(&self) -> Quat {
        let n = self.norm();
        Quat::new(self.w / n, self.x / n, self.y / n, self.z / n)
    }

    /// Hamilton product; `a * b` applies `b` first.
    pub fn mul(&self, b: &Quat) -> Quat {
        let a = self;
        Quat::new(
            a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
            a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
            a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
        )
    }

    pub fn to_matrix(&self) -> Mat3 {
        let Quat { w, x, y, z } = *self;
        Mat3([
            [
                1.0 - 2.0 * (y * y + z * z),
                2.0 * (x * y - w * z),
                2.0 * (x * z + w * y),
            ],
            [
                2.0 * (x * y + w * z),
                1.0 - 2.0 * (x * x + z * z),
                2.0 * (y * z - w * x),
            ],
            [
                2.0 * (x * z - w * y),
                2.0 * (y * z + w * x),
                1.0 - 2.0 * (x * x + y * y),
            ],
        ])
    }

    /// Quaternion of a proper rotation matrix (Shepperd's method), with
    /// non-negative `w`.
    pub fn from_matrix(m: &Mat3) -> Quat {
        let tr = m.trace();
        let q = if tr > 0.0 {
            let s = (tr + 1.0).sqrt() * 2.0;
            Quat::new(
                0.25 * s,
                (m[(2, 1)] - m[(1, 2)]) / s,
                (m[(0, 2)] - m[(2, 0)]) / s,
                (m[(1, 0)] - m[(0, 1)]) / s,
            )
        } else if m[(0, 0)] > m[(1, 1)] && m[(0, 0)] > m[(2, 2)] {
            let s = (1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt() * 2.0;
            Quat::new(
                (m[(2, 1)] - m[(1, 2)]) / s,
                0.25 * s,
                (m[(0, 1)] + m[(1, 0)]) / s,
                (m[(0, 2)] + m[(2, 0)]) / s,
            )
        } else if m[(1, 1)] > m[(2, 2)] {
            let s = (1.0 + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]).sqrt() * 2.0;
            Quat::new(
                (m[(0, 2)] - m[(2, 0)]) / s,
                (m[(0, 1)] + m[(1, 0)]) / s,
                0.25 * s,
                (m[(1, 2)] + m[(2, 1)]) / s,
            )
        } else {
            let s = (1.0 + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]).sqrt() * 2.0;
            Quat::new(
                (m[(1, 0)] - m[(0, 1)]) / s,
                (m[(0, 2)] + m[(2, 0)]) / s,
                (m[(1, 2)] + m[(2, 1)]) / s,
                0.25 * s,
            )
        };
        let q = q.normalized();
        if q.w < 0.0 {
            Quat::new(-q.w, -q.x, -q.y, -q.z)
        } else {
            q
        }
    }
}

/// Renderable 3D Gaussian.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianPrimitive {
    pub mean: Vec3,
    pub rotation: Quat,
    /// Per-axis standard deviations (m).
    pub scale: Vec3,
    pub opacity: f64,
    /// Spherical-harmonics coefficients, one RGB triple per basis function
    /// (1, 4 or 9 entries for degree 0, 1, 2). Entry 0 is the view-independent
    /// color itself.
    pub sh: Vec<[f64; 3]>,
}

impl GaussianPrimitive {
    pub fn new(mean: Vec3, scale: Vec3, opacity: f64, rgb: [f64; 3]) -> Self {
        GaussianPrimitive {
            mean,
            rotation: Quat::IDENTITY,
            scale,
            opacity,
            sh: vec![rgb],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if (self.rotation.norm() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "rotation quaternion norm {} is not 1",
                self.rotation.norm()
            )));
        }
        if !(self.scale.min_elem() > 0.0) || !self.scale.is_finite() {
            return Err(Error::InvalidParameter("scales must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.opacity) {
            return Err(Error::InvalidParameter(format!(
                "opacity {} outside [0, 1]",
                self.opacity
            )));
        }
        if !matches!(self.sh.len(), 1 | 4 | 9) {
            return Err(Error::InvalidParameter(format!(
                "{} SH coefficients; expected 1, 4 or 9",
                self.sh.len()
            )));
        }
        if !self.mean.is_finite() {
            return Err(Error::NonFinite("gaussian mean".into()));
        }
        Ok(())
    }

    pub fn sh_degree(&self) -> usize {
        match self.sh.len() {
            1 => 0,
            4 => 1,
            _ => 2,
        }
    }

    pub fn covariance(&self) -> Mat3 {
        covariance_from_rotation_scale(&self.rotation, &self.scale)
    }

    /// RGB seen from direction `dir` (unit vector from the camera toward
    /// the primitive), clamped to `[0, 1]`.
    pub fn color(&self, dir: Vec3) -> [f64; 3] {
        let basis = sh_basis(dir);
        let mut rgb = [0.0; 3];
        for (k, coef) in self.sh.iter().enumerate().take(9) {
            for ch in 0..3 {
                rgb[ch] += basis[k] * coef[ch];
            }
        }
        rgb.map(|c| c.clamp(0.0, 1.0))
    }
}

/// Real SH basis up to degree 2 with the DC term normalized to 1.
fn sh_basis(d: Vec3) -> [f64; 9] {
    const C1: f64 = 0.488_602_511_902_919_9;
    const C2: [f64; 5] = [
        1.092_548_430_592_079_2,
        -1.092_548_430_592_079_2,
        0.315_391_565_252_520_05,
        -1.092_548_430_592_079_2,
        0.546_274_215_296_039_6,
    ];
    let (x, y, z) = (d[0], d[1], d[2]);
    [
        1.0,
        -C1 * y,
        C1 * z,
        -C1 * x,
        C2[0] * x * y,
        C2[1] * y * z,
        C2[2] * (2.0 * z * z - x * x - y * y),
        C2[3] * x * z,
        C2[4] * (x * x - y * y),
    ]
}

/// `Σ = R S Sᵀ Rᵀ` with `S = diag(s)`.
pub fn covariance_from_rotation_scale(rotation: &Quat, scale: &Vec3) -> Mat3 {
    let r = rotation.to_matrix();
    let m = r * Mat3::diag(scale.0);
    (m * m.transpose()).symmetric_part()
}

/// How a particle's deformation gradient reshapes its primitive.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CouplingMode {
    /// Rotation from the polar factor `R`, scale from `diag(S)`, both
    /// composed with the rest shape.
    #[default]
    PolarDiagonal,
    /// Full covariance transport `Σ_t = F Σ₀ Fᵀ`.
    FullCovariance,
}

/// Updates a rest-state primitive `g0` from its particle's deformation
/// gradient and position.
pub fn couple_from_particle(
    g0: &GaussianPrimitive,
    f: &Mat3,
    x: Vec3,
    mode: CouplingMode,
) -> Result<GaussianPrimitive> {
    let mut g = g0.clone();
    g.mean = x;
    match mode {
        CouplingMode::PolarDiagonal => {
            let (r, s) = polar_decompose(f)?;
            g.rotation = Quat::from_matrix(&r).mul(&g0.rotation).normalized();
            g.scale = s.diagonal().hadamard(&g0.scale);
        }
        CouplingMode::FullCovariance => {
            let det = f.determinant();
            if !(det > 0.0) {
                return Err(Error::InvertedElement {
                    det,
                    context: "gaussian coupling".into(),
                });
            }
            // Σ_t = M Mᵀ with M = F R₀ S₀; its principal axes are the left
            // singular vectors of M and its standard deviations the singular
            // values.
            let m = *f * g0.rotation.to_matrix() * Mat3::diag(g0.scale.0);
            let svd = svd3(&m);
            g.rotation = Quat::from_matrix(&svd.u);
            g.scale = Vec3(svd.sigma.0.map(f64::abs));
        }
    }
    Ok(g)
}
