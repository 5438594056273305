//! Stress evaluation and plasticity for the supported material families.
//!
//! Jelly uses compressible Neo-Hookean elasticity, metal uses fixed
//! corotational elasticity, and the granular/cohesive classes (sand, snow,
//! plasticine) use Drucker-Prager plasticity on top of a fixed corotational
//! elastic predictor. Plastic flow is applied by projecting the elastic
//! deformation gradient, so the stored `F` is always the elastic part.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mathcore::{lame_from_young_poisson, polar_decompose, svd3, LameParams, Mat3};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaterialClass {
    Metal,
    Jelly,
    Plasticine,
    Snow,
    Sand,
}

impl MaterialClass {
    pub const COUNT: usize = 5;
    pub const ALL: [MaterialClass; 5] = [
        MaterialClass::Metal,
        MaterialClass::Jelly,
        MaterialClass::Plasticine,
        MaterialClass::Snow,
        MaterialClass::Sand,
    ];

    /// Position in [`MaterialClass::ALL`], used as the class-logit index.
    pub fn index(self) -> usize {
        match self {
            MaterialClass::Metal => 0,
            MaterialClass::Jelly => 1,
            MaterialClass::Plasticine => 2,
            MaterialClass::Snow => 3,
            MaterialClass::Sand => 4,
        }
    }

    pub fn from_index(i: usize) -> Option<MaterialClass> {
        Self::ALL.get(i).copied()
    }

    pub fn model(self) -> ConstitutiveModel {
        match self {
            MaterialClass::Jelly => ConstitutiveModel::NeoHookean,
            MaterialClass::Metal => ConstitutiveModel::FixedCorotational,
            MaterialClass::Sand | MaterialClass::Snow | MaterialClass::Plasticine => {
                ConstitutiveModel::DruckerPrager
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MaterialClass::Metal => "metal",
            MaterialClass::Jelly => "jelly",
            MaterialClass::Plasticine => "plasticine",
            MaterialClass::Snow => "snow",
            MaterialClass::Sand => "sand",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConstitutiveModel {
    NeoHookean,
    FixedCorotational,
    DruckerPrager,
}

/// Material class plus the continuous parameters `[E, ν, ρ]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialSpec {
    pub class: MaterialClass,
    /// Young's modulus (Pa).
    pub young: f64,
    /// Poisson's ratio.
    pub poisson: f64,
    /// Density (kg/m³).
    pub density: f64,
}

impl MaterialSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.young > 0.0 && self.young.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "Young's modulus {} must be positive",
                self.young
            )));
        }
        if !(self.poisson > -1.0 && self.poisson < 0.5) {
            return Err(Error::IncompressibilityLimit { nu: self.poisson });
        }
        if !(self.density > 0.0 && self.density.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "density {} must be positive",
                self.density
            )));
        }
        Ok(())
    }

    pub fn lame(&self) -> Result<LameParams> {
        lame_from_young_poisson(self.young, self.poisson)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlasticParams {
    /// Cohesion `k` (Pa).
    pub cohesion: f64,
    /// Dimensionless friction coefficient multiplying `tr τ`.
    pub friction: f64,
}

impl PlasticParams {
    /// Class cohesion with the default friction coefficient.
    pub fn for_class(class: MaterialClass) -> Result<Self> {
        Ok(PlasticParams {
            cohesion: cohesion_for_class(class)?,
            friction: default_friction(),
        })
    }
}

/// Default friction angle in degrees.
pub const DEFAULT_FRICTION_ANGLE_DEG: f64 = 25.0;

/// `α = √(2/3) · 2 sin φ / (3 − sin φ)` at the default friction angle.
pub fn default_friction() -> f64 {
    friction_from_angle(DEFAULT_FRICTION_ANGLE_DEG)
}

pub fn friction_from_angle(degrees: f64) -> f64 {
    let s = degrees.to_radians().sin();
    (2.0f64 / 3.0).sqrt() * 2.0 * s / (3.0 - s)
}

pub fn cohesion_for_class(class: MaterialClass) -> Result<f64> {
    match class {
        MaterialClass::Sand => Ok(0.0),
        MaterialClass::Snow => Ok(1000.0),
        MaterialClass::Plasticine => Ok(5000.0),
        MaterialClass::Metal | MaterialClass::Jelly => Err(Error::NotPlastic(class)),
    }
}

fn positive_det(f: &Mat3, context: &str) -> Result<f64> {
    let det = f.determinant();
    if !det.is_finite() || !f.is_finite() {
        return Err(Error::NonFinite(context.to_string()));
    }
    if det <= 0.0 {
        return Err(Error::InvertedElement {
            det,
            context: context.to_string(),
        });
    }
    Ok(det)
}

/// `τ = μ J^(−2/3) dev(F Fᵀ) + (λ/2)(J² − 1) I`
pub fn kirchhoff_neo_hookean(f: &Mat3, lame: &LameParams) -> Result<Mat3> {
    let j = positive_det(f, "neo-hookean stress")?;
    let b = *f * f.transpose();
    let tau = b.deviatoric() * (lame.mu * j.powf(-2.0 / 3.0))
        + Mat3::scaled_identity(0.5 * lame.lambda * (j * j - 1.0));
    Ok(tau)
}

/// First Piola-Kirchhoff stress `P = 2μ(F − R) + λ(J − 1) J F⁻ᵀ`.
pub fn first_piola_fixed_corotational(f: &Mat3, lame: &LameParams) -> Result<Mat3> {
    let j = positive_det(f, "fixed-corotational stress")?;
    let (r, _) = polar_decompose(f)?;
    let f_inv_t = f.inverse_transpose().ok_or(Error::InvertedElement {
        det: j,
        context: "fixed-corotational stress".into(),
    })?;
    Ok((*f - r) * (2.0 * lame.mu) + f_inv_t * (lame.lambda * (j - 1.0) * j))
}

/// Kirchhoff stress `τ = P Fᵀ` of the fixed corotational model.
pub fn kirchhoff_fixed_corotational(f: &Mat3, lame: &LameParams) -> Result<Mat3> {
    let p = first_piola_fixed_corotational(f, lame)?;
    Ok((p * f.transpose()).symmetric_part())
}

/// `f(τ) = ‖dev τ‖ + α tr τ − k`; non-positive values are elastic.
pub fn drucker_prager_yield(tau: &Mat3, plastic: &PlasticParams) -> f64 {
    tau.deviatoric().frobenius_norm() + plastic.friction * tau.trace() - plastic.cohesion
}

/// Yield value for a deformation with principal stretches `sigma`, using
/// the closed-form principal Kirchhoff stresses of the fixed corotational
/// model: `τ_i = 2μ σ_i (σ_i − 1) + λ J (J − 1)`.
fn principal_yield(sigma: [f64; 3], lame: &LameParams, plastic: &PlasticParams) -> f64 {
    let j = sigma[0] * sigma[1] * sigma[2];
    let vol = lame.lambda * j * (j - 1.0);
    let tau = sigma.map(|s| 2.0 * lame.mu * s * (s - 1.0) + vol);
    let mean = (tau[0] + tau[1] + tau[2]) / 3.0;
    let dev = tau.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>().sqrt();
    dev + plastic.friction * (tau[0] + tau[1] + tau[2]) - plastic.cohesion
}

const BISECTION_STEPS: usize = 200;

/// Largest-admissible point on the segment from `bad` (yielded) to `good`
/// (admissible), to within floating-point resolution of the parameter.
fn bisect(mut bad: f64, mut good: f64, admissible: impl Fn(f64) -> bool) -> f64 {
    for _ in 0..BISECTION_STEPS {
        let mid = 0.5 * (bad + good);
        if mid == bad || mid == good {
            break;
        }
        if admissible(mid) {
            good = mid;
        } else {
            bad = mid;
        }
    }
    good
}

/// Drucker-Prager return mapping on the elastic deformation gradient.
///
/// Works on the principal Hencky strains `ε = ln σ` of the trial state.
/// A yielded shear state is pulled toward the hydrostatic axis by shrinking
/// the deviatoric strain at fixed volume until the yield value reaches zero.
/// If even the purely hydrostatic state violates the criterion (tension past
/// the cone apex), the volumetric strain is shrunk toward zero as well.
pub fn drucker_prager_return_map(
    f_trial: &Mat3,
    lame: &LameParams,
    plastic: &PlasticParams,
) -> Result<Mat3> {
    positive_det(f_trial, "return mapping")?;
    let tau = kirchhoff_fixed_corotational(f_trial, lame)?;
    if drucker_prager_yield(&tau, plastic) <= 0.0 {
        return Ok(*f_trial);
    }

    let svd = svd3(f_trial);
    let eps = svd.sigma.0.map(f64::ln);
    let eps_mean = (eps[0] + eps[1] + eps[2]) / 3.0;
    let eps_dev = eps.map(|e| e - eps_mean);

    let shear_reduced = |t: f64| eps_dev.map(|e| (eps_mean + (1.0 - t) * e).exp());
    let admissible_shear = |t: f64| principal_yield(shear_reduced(t), lame, plastic) <= 0.0;

    let sigma = if admissible_shear(1.0) {
        shear_reduced(bisect(0.0, 1.0, admissible_shear))
    } else {
        let hydrostatic = |s: f64| [(s * eps_mean).exp(); 3];
        let admissible_volume = |s: f64| principal_yield(hydrostatic(s), lame, plastic) <= 0.0;
        hydrostatic(bisect(1.0, 0.0, admissible_volume))
    };

    Ok(svd.u * Mat3::diag(sigma) * svd.v.transpose())
}

/// Everything the stepper needs to evaluate one material.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaterialModel {
    pub class: MaterialClass,
    pub lame: LameParams,
    pub plastic: Option<PlasticParams>,
}

impl MaterialModel {
    /// Builds the model for a material spec; plastic classes get their
    /// cohesion constant and the given friction coefficient.
    pub fn new(spec: &MaterialSpec, friction: f64) -> Result<Self> {
        spec.validate()?;
        let plastic = match spec.class.model() {
            ConstitutiveModel::DruckerPrager => Some(PlasticParams {
                cohesion: cohesion_for_class(spec.class)?,
                friction,
            }),
            _ => None,
        };
        Ok(MaterialModel {
            class: spec.class,
            lame: spec.lame()?,
            plastic,
        })
    }

    pub fn kirchhoff(&self, f: &Mat3) -> Result<Mat3> {
        match self.class.model() {
            ConstitutiveModel::NeoHookean => kirchhoff_neo_hookean(f, &self.lame),
            ConstitutiveModel::FixedCorotational | ConstitutiveModel::DruckerPrager => {
                kirchhoff_fixed_corotational(f, &self.lame)
            }
        }
    }

    /// Plastic projection; identity for purely elastic classes.
    pub fn project(&self, f: &Mat3) -> Result<Mat3> {
        match &self.plastic {
            Some(p) => drucker_prager_return_map(f, &self.lame, p),
            None => Ok(*f),
        }
    }
}
