//! Scene construction: a procedural shape or a Gaussian cloud becomes an
//! index-aligned particle system with a material, initial velocity, camera
//! and scenario forcing.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::constitutive::{MaterialClass, MaterialModel, MaterialSpec};
use crate::error::{Error, Result};
use crate::gsplat::{read_ply, Camera, GaussianPrimitive, GaussianScene};
use crate::mathcore::Vec3;
use crate::mpm::{GridForcing, GridSpec, Grip, Particle, SimConfig, SimProfile};
use crate::policy::{ParamTransform, PhysicsPolicy};
use crate::preference::{farthest_point_sampling, DEFAULT_TRACKED_POINTS};

pub const SCENE_FORMAT_VERSION: u32 = 1;
/// Default gravitational acceleration for the drop scenario (m/s²).
pub const DEFAULT_GRAVITY: f64 = 9.8;
/// Default grip pull speed for the stretch scenario (m/s).
pub const DEFAULT_PULL_SPEED: f64 = 0.5;
/// Grip width as a fraction of the object's extent along the pull axis.
pub const GRIP_FRACTION: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Cube,
    Sphere,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Source {
    Procedural {
        shape: Shape,
        center: Vec3,
        /// Edge length (cube) or diameter (sphere), m.
        extent: f64,
        /// Target particle count; the jittered grid may round it.
        particles: usize,
        #[serde(default)]
        seed: u64,
        /// Jitter amplitude as a fraction of the grid spacing, in `[0, 1)`.
        #[serde(default = "default_jitter")]
        jitter: f64,
    },
    /// ASCII PLY Gaussian cloud; relative paths resolve against the scene
    /// file's directory.
    Cloud { path: PathBuf },
}

fn default_jitter() -> f64 {
    0.5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum MaterialSource {
    Spec(MaterialSpec),
    /// Policy JSON; the material is its decoded mean and most likely class.
    Policy(PathBuf),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    /// Gravity `(0, −magnitude, 0)`.
    Drop,
    /// Two grips at opposite ends along x pulled apart at `magnitude` m/s.
    Stretch,
    /// Constant body force `magnitude · direction` (N/kg), no gravity.
    Force,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraSpec {
    pub eye: Vec3,
    pub target: Vec3,
    #[serde(default = "default_up")]
    pub up: Vec3,
    /// Vertical field of view (degrees).
    #[serde(default = "default_fov")]
    pub fov_deg: f64,
    #[serde(default = "default_image_size")]
    pub width: usize,
    #[serde(default = "default_image_size")]
    pub height: usize,
}

fn default_up() -> Vec3 {
    Vec3::new(0.0, 1.0, 0.0)
}

fn default_fov() -> f64 {
    40.0
}

fn default_image_size() -> usize {
    256
}

impl CameraSpec {
    pub fn camera(&self) -> Result<Camera> {
        Camera::look_at(
            self.eye,
            self.target,
            self.up,
            self.fov_deg.to_radians(),
            self.width,
            self.height,
        )
    }
}

/// Cubic simulation domain.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Domain {
    pub origin: Vec3,
    pub extent: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Appearance {
    pub color: [f64; 3],
    pub opacity: f64,
    /// Primitive standard deviation relative to the particle spacing.
    pub scale_factor: f64,
}

impl Default for Appearance {
    fn default() -> Self {
        Appearance {
            color: [0.85, 0.35, 0.3],
            opacity: 0.9,
            scale_factor: 0.6,
        }
    }
}

/// Top-level scene document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub version: u32,
    pub source: Source,
    pub material: MaterialSource,
    #[serde(default)]
    pub initial_velocity: Vec3,
    pub scenario: Scenario,
    /// Gravity (drop), pull speed (stretch) or force per unit mass (force);
    /// defaults per scenario when absent.
    #[serde(default)]
    pub magnitude: Option<f64>,
    /// Force direction for the force scenario (normalized on use).
    #[serde(default)]
    pub direction: Option<Vec3>,
    pub camera: CameraSpec,
    #[serde(default = "default_tracked")]
    pub tracked_points: usize,
    /// Defaults to a cube four times the object size, resting it a quarter
    /// of the way up.
    #[serde(default)]
    pub domain: Option<Domain>,
    #[serde(default)]
    pub appearance: Appearance,
    #[serde(default = "default_background")]
    pub background: [f64; 3],
    /// Directory against which relative paths resolve; not serialized.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

fn default_tracked() -> usize {
    DEFAULT_TRACKED_POINTS
}

fn default_background() -> [f64; 3] {
    [1.0, 1.0, 1.0]
}

impl SceneSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: SceneSpec = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut spec = Self::from_json(&std::fs::read_to_string(path)?)?;
        spec.base_dir = path.parent().map(Path::to_path_buf);
        Ok(spec)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scene serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != SCENE_FORMAT_VERSION {
            return Err(Error::InvalidParameter(format!(
                "scene version {} unsupported (expected {SCENE_FORMAT_VERSION})",
                self.version
            )));
        }
        if let Source::Procedural {
            extent,
            particles,
            jitter,
            ..
        } = &self.source
        {
            if !(*extent > 0.0 && extent.is_finite()) {
                return Err(Error::InvalidParameter(format!("extent {extent} must be positive")));
            }
            if *particles == 0 {
                return Err(Error::InvalidParameter("particle count must be positive".into()));
            }
            if !(0.0..1.0).contains(jitter) {
                return Err(Error::InvalidParameter(format!("jitter {jitter} outside [0, 1)")));
            }
        }
        if let MaterialSource::Spec(m) = &self.material {
            m.validate()?;
        }
        if let Some(m) = self.magnitude {
            if !m.is_finite() {
                return Err(Error::InvalidParameter("scenario magnitude must be finite".into()));
            }
        }
        if let Some(d) = self.direction {
            if !(d.is_finite() && d.norm() > 0.0) {
                return Err(Error::InvalidParameter("force direction must be nonzero".into()));
            }
        }
        if let Some(d) = &self.domain {
            if !(d.extent > 0.0 && d.extent.is_finite()) {
                return Err(Error::InvalidParameter("domain extent must be positive".into()));
            }
        }
        if !self.initial_velocity.is_finite() {
            return Err(Error::InvalidParameter("initial velocity must be finite".into()));
        }
        self.camera.camera()?;
        Ok(())
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        match &self.base_dir {
            Some(base) if p.is_relative() => base.join(p),
            _ => p.to_path_buf(),
        }
    }
}

/// Jittered grid points inside `shape`; returns the points, the spacing and
/// the analytic shape volume.
fn procedural_points(
    shape: Shape,
    center: Vec3,
    extent: f64,
    target: usize,
    seed: u64,
    jitter: f64,
) -> (Vec<Vec3>, f64, f64) {
    let volume = match shape {
        Shape::Cube => extent.powi(3),
        Shape::Sphere => std::f64::consts::PI / 6.0 * extent.powi(3),
    };
    // cells per axis over the bounding cube
    let n = match shape {
        Shape::Cube => (target as f64).cbrt().round().max(1.0) as usize,
        Shape::Sphere => (target as f64 * 6.0 / std::f64::consts::PI).cbrt().round().max(1.0) as usize,
    };
    let h = extent / n as f64;
    let lo = center - Vec3::splat(0.5 * extent);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pts = Vec::with_capacity(n * n * n);
    let r2 = 0.25 * extent * extent;
    for k in 0..n {
        for j in 0..n {
            for i in 0..n {
                let mut x = lo + Vec3::new(i as f64 + 0.5, j as f64 + 0.5, k as f64 + 0.5) * h;
                for d in 0..3 {
                    let u: f64 = rng.gen_range(-0.5..0.5);
                    x[d] += u * jitter * h;
                }
                if shape == Shape::Sphere && (x - center).norm_squared() > r2 {
                    continue;
                }
                pts.push(x);
            }
        }
    }
    (pts, h, volume)
}

/// Volume of the voxels (edge `h`) occupied by at least one point.
fn occupancy_volume(points: &[Vec3], h: f64) -> f64 {
    let lo = points.iter().fold(Vec3::splat(f64::INFINITY), |m, p| {
        Vec3::new(m[0].min(p[0]), m[1].min(p[1]), m[2].min(p[2]))
    });
    let mut cells: Vec<[i64; 3]> = points
        .iter()
        .map(|p| {
            let q = (*p - lo) * (1.0 / h);
            [q[0].floor() as i64, q[1].floor() as i64, q[2].floor() as i64]
        })
        .collect();
    cells.sort_unstable();
    cells.dedup();
    cells.len() as f64 * h.powi(3)
}

/// Scene ready for simulation. Particles are generated per material so that
/// candidate parameters can reuse one geometry.
#[derive(Clone, Debug)]
pub struct BuiltScene {
    pub rest_positions: Vec<Vec3>,
    /// Rest volume per particle (m³).
    pub volume0: f64,
    pub initial_velocity: Vec3,
    pub material: MaterialSpec,
    pub gaussians: GaussianScene,
    pub camera: Camera,
    pub tracked_ids: Vec<usize>,
    pub domain: Domain,
    pub forcing: GridForcing,
}

impl BuiltScene {
    pub fn particle_count(&self) -> usize {
        self.rest_positions.len()
    }

    /// Particles at rest for material `spec` (mass = ρ·V0).
    pub fn particles(&self, spec: &MaterialSpec) -> Vec<Particle> {
        self.rest_positions
            .iter()
            .map(|&x| {
                let mut p = Particle::at_rest(x, spec.density * self.volume0, self.volume0, 0);
                p.v = self.initial_velocity;
                p
            })
            .collect()
    }

    pub fn material_model(&self, spec: &MaterialSpec, friction: f64) -> Result<MaterialModel> {
        MaterialModel::new(spec, friction)
    }

    /// Simulation settings for a timing profile on this scene's domain and
    /// forcing.
    pub fn sim_config(&self, profile: SimProfile) -> SimConfig {
        let mut cfg = SimConfig::from_profile(profile, self.domain.origin, self.domain.extent);
        cfg.forcing = self.forcing.clone();
        cfg
    }

    pub fn grid_spec(&self, resolution: usize) -> GridSpec {
        GridSpec::cube(self.domain.origin, self.domain.extent, resolution)
    }
}

fn decode_policy_material(path: &Path) -> Result<MaterialSpec> {
    let policy = PhysicsPolicy::from_json(&std::fs::read_to_string(path)?)?;
    let (young, poisson, density) = ParamTransform::inverse(policy.mu_theta);
    let probs = policy.class_probs();
    let best = (0..MaterialClass::COUNT)
        .max_by(|&a, &b| probs[a].total_cmp(&probs[b]).then(b.cmp(&a)))
        .expect("classes exist");
    let spec = MaterialSpec {
        class: MaterialClass::ALL[best],
        young,
        poisson,
        density,
    };
    spec.validate()?;
    Ok(spec)
}

/// Builds particles, primitives, camera and forcing from a scene document.
pub fn build(spec: &SceneSpec) -> Result<BuiltScene> {
    spec.validate()?;
    let material = match &spec.material {
        MaterialSource::Spec(m) => *m,
        MaterialSource::Policy(p) => decode_policy_material(&spec.resolve(p))?,
    };
    let app = &spec.appearance;
    let (positions, volume_total, gaussians) = match &spec.source {
        Source::Procedural {
            shape,
            center,
            extent,
            particles,
            seed,
            jitter,
        } => {
            let (pts, h, volume) = procedural_points(*shape, *center, *extent, *particles, *seed, *jitter);
            let prims = pts
                .iter()
                .map(|&x| GaussianPrimitive::new(x, Vec3::splat(app.scale_factor * h), app.opacity, app.color))
                .collect();
            (pts, volume, prims)
        }
        Source::Cloud { path } => {
            let path = spec.resolve(path);
            let file = std::fs::File::open(&path).map_err(|e| {
                Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
            })?;
            let prims = read_ply(std::io::BufReader::new(file))?;
            let pts: Vec<Vec3> = prims.iter().map(|g| g.mean).collect();
            if pts.is_empty() {
                return Err(Error::InvalidParameter("cloud has no primitives".into()));
            }
            let lo = pts.iter().fold(Vec3::splat(f64::INFINITY), |m, p| {
                Vec3::new(m[0].min(p[0]), m[1].min(p[1]), m[2].min(p[2]))
            });
            let hi = pts.iter().fold(Vec3::splat(f64::NEG_INFINITY), |m, p| {
                Vec3::new(m[0].max(p[0]), m[1].max(p[1]), m[2].max(p[2]))
            });
            let size = hi - lo;
            let bbox = size[0].max(1e-9) * size[1].max(1e-9) * size[2].max(1e-9);
            let h = (bbox / pts.len() as f64).cbrt().max(1e-6);
            (pts.clone(), occupancy_volume(&pts, h), prims)
        }
    };
    if positions.is_empty() {
        return Err(Error::InvalidParameter("scene has zero particles".into()));
    }
    let n = positions.len();

    let lo = positions.iter().fold(Vec3::splat(f64::INFINITY), |m, p| {
        Vec3::new(m[0].min(p[0]), m[1].min(p[1]), m[2].min(p[2]))
    });
    let hi = positions.iter().fold(Vec3::splat(f64::NEG_INFINITY), |m, p| {
        Vec3::new(m[0].max(p[0]), m[1].max(p[1]), m[2].max(p[2]))
    });
    let size = (hi - lo).max_elem().max(1e-3);
    let domain = spec.domain.unwrap_or_else(|| {
        let extent = 4.0 * size;
        let c = (lo + hi) * 0.5;
        Domain {
            origin: Vec3::new(c[0] - 0.5 * extent, lo[1] - 0.25 * extent, c[2] - 0.5 * extent),
            extent,
        }
    });

    let mut forcing = GridForcing::default();
    match spec.scenario {
        Scenario::Drop => {
            let g = spec.magnitude.unwrap_or(DEFAULT_GRAVITY);
            forcing.gravity = Vec3::new(0.0, -g, 0.0);
        }
        Scenario::Force => {
            let dir = spec.direction.unwrap_or(Vec3::new(1.0, 0.0, 0.0)).normalized();
            forcing.body_force = dir * spec.magnitude.unwrap_or(DEFAULT_GRAVITY);
        }
        Scenario::Stretch => {
            let speed = spec.magnitude.unwrap_or(DEFAULT_PULL_SPEED);
            let width = GRIP_FRACTION * (hi[0] - lo[0]).max(1e-6);
            let pad = Vec3::new(0.0, size, size);
            let left = Grip {
                min: Vec3::new(domain.origin[0], lo[1], lo[2]) - pad,
                max: Vec3::new(lo[0] + width, hi[1], hi[2]) + pad,
                velocity: Vec3::new(-speed, 0.0, 0.0),
            };
            let right = Grip {
                min: Vec3::new(hi[0] - width, lo[1], lo[2]) - pad,
                max: Vec3::new(domain.origin[0] + domain.extent, hi[1], hi[2]) + pad,
                velocity: Vec3::new(speed, 0.0, 0.0),
            };
            forcing.grips = vec![left, right];
        }
    }

    let tracked_ids = farthest_point_sampling(&positions, spec.tracked_points);
    Ok(BuiltScene {
        volume0: volume_total / n as f64,
        rest_positions: positions,
        initial_velocity: spec.initial_velocity,
        material,
        gaussians: GaussianScene::new(gaussians, spec.background),
        camera: spec.camera.camera()?,
        tracked_ids,
        domain,
        forcing,
    })
}
