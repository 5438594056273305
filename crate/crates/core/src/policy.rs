//! Probabilistic physical-parameter policy: a diagonal Gaussian over the
//! transformed continuous parameters `[log10 E, logit((ν+1)/1.5), log10 ρ]`
//! and a categorical distribution over material classes.
//!
//! Gradients are returned as flat vectors in the layout of
//! [`PhysicsPolicy::params`]: three means, three log-variances, then one
//! logit per class in [`MaterialClass::ALL`] order.

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::constitutive::{MaterialClass, MaterialSpec};
use crate::error::{Error, Result};

/// Continuous dimensions of `θ`.
pub const THETA_DIM: usize = 3;
/// Length of the flat parameter vector.
pub const PARAM_COUNT: usize = 2 * THETA_DIM + MaterialClass::COUNT;
/// Smallest standard deviation a policy may reach.
pub const SIGMA_FLOOR: f64 = 1e-6;
/// `ln(SIGMA_FLOOR²)`.
pub fn log_var_floor() -> f64 {
    2.0 * SIGMA_FLOOR.ln()
}

pub const TRANSFORM_TAG: &str = "log10E-logitnu-log10rho";
pub const POLICY_FORMAT_VERSION: u32 = 1;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Fixed bijection between physical `[E, ν, ρ]` and the unconstrained space
/// the policy lives in.
pub struct ParamTransform;

impl ParamTransform {
    pub const YOUNG_RANGE: (f64, f64) = (1.0, 1e9);
    pub const DENSITY_RANGE: (f64, f64) = (1.0, 1e5);

    pub fn forward(young: f64, poisson: f64, density: f64) -> Result<[f64; 3]> {
        let (elo, ehi) = Self::YOUNG_RANGE;
        if !(young >= elo && young <= ehi) {
            return Err(Error::OutOfRange {
                what: "Young's modulus",
                value: young,
            });
        }
        if !(poisson > -1.0 && poisson < 0.5) {
            return Err(Error::OutOfRange {
                what: "Poisson's ratio",
                value: poisson,
            });
        }
        let (rlo, rhi) = Self::DENSITY_RANGE;
        if !(density >= rlo && density <= rhi) {
            return Err(Error::OutOfRange {
                what: "density",
                value: density,
            });
        }
        let p = (poisson + 1.0) / 1.5;
        Ok([young.log10(), (p / (1.0 - p)).ln(), density.log10()])
    }

    pub fn inverse(raw: [f64; 3]) -> (f64, f64, f64) {
        let s = 1.0 / (1.0 + (-raw[1]).exp());
        (10f64.powf(raw[0]), 1.5 * s - 1.0, 10f64.powf(raw[2]))
    }

    pub fn forward_spec(spec: &MaterialSpec) -> Result<[f64; 3]> {
        Self::forward(spec.young, spec.poisson, spec.density)
    }
}

/// One draw from the policy.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampledParams {
    /// Decoded physical parameters and class.
    pub theta: MaterialSpec,
    /// Transformed-space vector that was sampled.
    pub raw: [f64; 3],
}

impl SampledParams {
    pub fn from_raw(raw: [f64; 3], class: MaterialClass) -> Self {
        let (young, poisson, density) = ParamTransform::inverse(raw);
        SampledParams {
            theta: MaterialSpec {
                class,
                young,
                poisson,
                density,
            },
            raw,
        }
    }

    pub fn from_spec(spec: &MaterialSpec) -> Result<Self> {
        Ok(SampledParams {
            theta: *spec,
            raw: ParamTransform::forward_spec(spec)?,
        })
    }

    pub fn class(&self) -> MaterialClass {
        self.theta.class
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicsPolicy {
    #[serde(default = "format_version")]
    pub version: u32,
    #[serde(default = "transform_tag")]
    pub transform: String,
    pub mu_theta: [f64; 3],
    pub log_var_theta: [f64; 3],
    /// One logit per class in [`MaterialClass::ALL`] order.
    pub class_logits: [f64; MaterialClass::COUNT],
}

fn format_version() -> u32 {
    POLICY_FORMAT_VERSION
}

fn transform_tag() -> String {
    TRANSFORM_TAG.to_string()
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

impl PhysicsPolicy {
    pub fn new(mu_theta: [f64; 3], log_var_theta: [f64; 3], class_logits: [f64; 5]) -> Result<Self> {
        let p = PhysicsPolicy {
            version: POLICY_FORMAT_VERSION,
            transform: TRANSFORM_TAG.to_string(),
            mu_theta,
            log_var_theta,
            class_logits,
        };
        p.validate()?;
        Ok(p)
    }

    /// Policy centered on `spec` with transformed-space standard deviations
    /// `sigma` and uniform class logits except `+confidence` on `spec.class`.
    pub fn centered(spec: &MaterialSpec, sigma: [f64; 3], confidence: f64) -> Result<Self> {
        let mut logits = [0.0; MaterialClass::COUNT];
        logits[spec.class.index()] = confidence;
        Self::new(
            ParamTransform::forward_spec(spec)?,
            sigma.map(|s| (s * s).ln().max(log_var_floor())),
            logits,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != POLICY_FORMAT_VERSION {
            return Err(Error::InvalidParameter(format!(
                "policy version {} unsupported (expected {POLICY_FORMAT_VERSION})",
                self.version
            )));
        }
        if self.transform != TRANSFORM_TAG {
            return Err(Error::InvalidParameter(format!(
                "policy transform '{}' unsupported",
                self.transform
            )));
        }
        let floor = log_var_floor() - 1e-9;
        if self.log_var_theta.iter().any(|&v| !v.is_finite() || v < floor) {
            return Err(Error::InvalidParameter(format!(
                "log-variances {:?} must be finite and at least ln(1e-12)",
                self.log_var_theta
            )));
        }
        if self.mu_theta.iter().chain(&self.class_logits).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("policy parameters".into()));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let p: PhysicsPolicy = serde_json::from_str(text)?;
        p.validate()?;
        Ok(p)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("policy serializes")
    }

    pub fn sigma(&self) -> [f64; 3] {
        self.log_var_theta.map(|lv| (0.5 * lv).exp())
    }

    pub fn class_probs(&self) -> Vec<f64> {
        log_softmax(&self.class_logits).into_iter().map(f64::exp).collect()
    }

    /// Flat parameter vector: means, log-variances, class logits.
    pub fn params(&self) -> [f64; PARAM_COUNT] {
        let mut out = [0.0; PARAM_COUNT];
        out[..3].copy_from_slice(&self.mu_theta);
        out[3..6].copy_from_slice(&self.log_var_theta);
        out[6..].copy_from_slice(&self.class_logits);
        out
    }

    /// Inverse of [`PhysicsPolicy::params`]; log-variances are clamped to
    /// the floor.
    pub fn set_params(&mut self, p: &[f64; PARAM_COUNT]) {
        self.mu_theta.copy_from_slice(&p[..3]);
        for d in 0..3 {
            self.log_var_theta[d] = p[3 + d].max(log_var_floor());
        }
        self.class_logits.copy_from_slice(&p[6..]);
    }

    /// `raw = μ + σ ⊙ ε`; the class is drawn from the softmax unless fixed.
    pub fn sample_with<R: Rng>(&self, rng: &mut R, fixed_class: Option<MaterialClass>) -> SampledParams {
        let sigma = self.sigma();
        let mut raw = [0.0; 3];
        for d in 0..3 {
            let eps: f64 = rng.sample(StandardNormal);
            raw[d] = self.mu_theta[d] + sigma[d] * eps;
        }
        let class = match fixed_class {
            Some(c) => c,
            None => {
                let dist = WeightedIndex::new(self.class_probs()).expect("softmax is a distribution");
                MaterialClass::ALL[dist.sample(rng)]
            }
        };
        SampledParams::from_raw(raw, class)
    }

    pub fn sample(&self, seed: u64) -> SampledParams {
        self.sample_with(&mut ChaCha8Rng::seed_from_u64(seed), None)
    }

    /// Continuous-part log-density in transformed space.
    pub fn log_density(&self, raw: &[f64; 3]) -> f64 {
        (0..3)
            .map(|d| {
                let lv = self.log_var_theta[d];
                let r = raw[d] - self.mu_theta[d];
                -0.5 * (LN_2PI + lv) - 0.5 * r * r * (-lv).exp()
            })
            .sum()
    }

    pub fn log_prob(&self, params: &SampledParams) -> f64 {
        self.log_density(&params.raw) + log_softmax(&self.class_logits)[params.class().index()]
    }

    /// `∇ log π(params)` with respect to [`PhysicsPolicy::params`].
    pub fn grad_log_prob(&self, params: &SampledParams) -> [f64; PARAM_COUNT] {
        let mut g = [0.0; PARAM_COUNT];
        for d in 0..3 {
            let inv_var = (-self.log_var_theta[d]).exp();
            let r = params.raw[d] - self.mu_theta[d];
            g[d] = r * inv_var;
            g[3 + d] = 0.5 * (r * r * inv_var - 1.0);
        }
        let probs = self.class_probs();
        let c = params.class().index();
        for k in 0..MaterialClass::COUNT {
            g[6 + k] = if k == c { 1.0 } else { 0.0 } - probs[k];
        }
        g
    }

    /// Negative log-likelihood of a ground-truth material and its gradient.
    pub fn nll_loss_and_grad(&self, theta_gt: &MaterialSpec) -> Result<(f64, [f64; PARAM_COUNT])> {
        let target = SampledParams::from_spec(theta_gt)?;
        let g = self.grad_log_prob(&target);
        Ok((-self.log_prob(&target), g.map(|v| -v)))
    }

    /// Mean NLL over a supervision set.
    pub fn nll(&self, supervision: &[MaterialSpec]) -> Result<f64> {
        if supervision.is_empty() {
            return Err(Error::EmptySupervision);
        }
        let mut total = 0.0;
        for s in supervision {
            total += -self.log_prob(&SampledParams::from_spec(s)?);
        }
        Ok(total / supervision.len() as f64)
    }
}

/// Outcome of [`pretrain`].
#[derive(Clone, Debug)]
pub struct PretrainReport {
    pub policy: PhysicsPolicy,
    /// Mean NLL before the first step and after every step.
    pub history: Vec<f64>,
}

/// Minimizes the mean NLL of `supervision` under the policy.
///
/// The objective separates into one term per continuous dimension plus the
/// class cross-entropy, and each term takes its own step with a backtracking
/// line search, so the total NLL never increases. Continuous dimensions step
/// along the natural gradient (`Δμ = η(x̄ − μ)`, `Δ log σ² = −η(1 − E[r²]/σ²)`)
/// with `η ≤ 1`; the class logits follow the plain gradient. Every step
/// size starts at `lr`, doubles after an accepted step and halves on
/// rejection.
pub fn pretrain(
    policy: &PhysicsPolicy,
    supervision: &[MaterialSpec],
    steps: usize,
    lr: f64,
) -> Result<PretrainReport> {
    if supervision.is_empty() {
        return Err(Error::EmptySupervision);
    }
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::InvalidParameter(format!("learning rate {lr} must be positive")));
    }
    policy.validate()?;
    let xs: Vec<[f64; 3]> = supervision
        .iter()
        .map(ParamTransform::forward_spec)
        .collect::<Result<_>>()?;
    let n = xs.len() as f64;
    let classes: Vec<usize> = supervision.iter().map(|s| s.class.index()).collect();
    let floor = log_var_floor();

    let dim_loss = |d: usize, mu: f64, lv: f64| -> f64 {
        let inv = (-lv).exp();
        xs.iter()
            .map(|x| 0.5 * (LN_2PI + lv) + 0.5 * (x[d] - mu).powi(2) * inv)
            .sum::<f64>()
            / n
    };
    let class_loss = |logits: &[f64]| -> f64 {
        let ls = log_softmax(logits);
        classes.iter().map(|&c| -ls[c]).sum::<f64>() / n
    };

    let mut p = policy.clone();
    let mut eta = [lr; 4];
    let mut history = Vec::with_capacity(steps + 1);
    history.push(p.nll(supervision)?);
    for _ in 0..steps {
        for d in 0..3 {
            let (mu, lv) = (p.mu_theta[d], p.log_var_theta[d]);
            let inv = (-lv).exp();
            let mean = xs.iter().map(|x| x[d]).sum::<f64>() / n;
            let msr = xs.iter().map(|x| (x[d] - mu).powi(2)).sum::<f64>() / n * inv;
            let current = dim_loss(d, mu, lv);
            loop {
                let cand_mu = mu + eta[d] * (mean - mu);
                let cand_lv = (lv - eta[d] * (1.0 - msr)).max(floor);
                if dim_loss(d, cand_mu, cand_lv) <= current {
                    p.mu_theta[d] = cand_mu;
                    p.log_var_theta[d] = cand_lv;
                    eta[d] = (2.0 * eta[d]).min(1.0);
                    break;
                }
                eta[d] *= 0.5;
                if eta[d] < 1e-300 {
                    break;
                }
            }
        }

        let probs = p.class_probs();
        let mut grad = [0.0; MaterialClass::COUNT];
        for &c in &classes {
            for k in 0..MaterialClass::COUNT {
                grad[k] += (probs[k] - if k == c { 1.0 } else { 0.0 }) / n;
            }
        }
        let current = class_loss(&p.class_logits);
        loop {
            let mut cand = p.class_logits;
            for k in 0..MaterialClass::COUNT {
                cand[k] -= eta[3] * grad[k];
            }
            if class_loss(&cand) <= current {
                p.class_logits = cand;
                eta[3] = (2.0 * eta[3]).min(1e6);
                break;
            }
            eta[3] *= 0.5;
            if eta[3] < 1e-300 {
                break;
            }
        }
        history.push(p.nll(supervision)?);
    }
    p.validate()?;
    Ok(PretrainReport { policy: p, history })
}
