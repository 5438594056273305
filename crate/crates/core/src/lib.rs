//! Material point method dynamics coupled to 3D Gaussian primitives, a
//! software splatting renderer, and physical parameter identification by
//! direct preference optimization of a probabilistic parameter policy.

pub mod constitutive;
pub mod dpo;
pub mod error;
pub mod gsplat;
pub mod mathcore;
pub mod mpm;
pub mod policy;
pub mod preference;
pub mod scene;

pub use constitutive::{MaterialClass, MaterialModel, MaterialSpec, PlasticParams};
pub use dpo::{DpoConfig, ReferencePolicy};
pub use error::{Error, Result};
pub use gsplat::{Camera, GaussianPrimitive, GaussianScene, Image};
pub use mathcore::{LameParams, Mat3, Vec3};
pub use mpm::{Particle, Rollout, SimConfig};
pub use policy::{PhysicsPolicy, SampledParams};
pub use preference::{PreferencePair, RankedCandidates, TrajectorySet};
pub use scene::SceneSpec;
