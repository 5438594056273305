//! Direct preference optimization of the physics policy.
//!
//! For a pair `(φ_w, φ_l)` with log-ratios `Δ_x = log π(φ_x) − log π_ref(φ_x)`
//! the loss is `−log σ(β(Δ_w − Δ_l))`, averaged over pairs.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constitutive::{MaterialModel, MaterialSpec};
use crate::error::{Error, Result};
use crate::mpm::{SimConfig, Simulator};
use crate::policy::{PhysicsPolicy, SampledParams, PARAM_COUNT};
use crate::preference::{rank_and_pair, track, trajectory_distance, PreferencePair, TrajectorySet};
use crate::scene::BuiltScene;

pub const DPO_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Adam,
    Sgd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DpoConfig {
    pub version: u32,
    /// Temperature `β`.
    pub beta: f64,
    /// Candidates sampled per round (`K`).
    pub candidates: usize,
    pub rounds: usize,
    pub lr: f64,
    pub optimizer: Optimizer,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    /// Optimizer steps taken on each round's pairs.
    pub steps_per_round: usize,
    /// Train on all pairs collected so far instead of the current round's.
    pub replay: bool,
    /// Sample the material class from the policy instead of holding it at
    /// the scene's class.
    pub include_class: bool,
    /// Pairs whose distance gap (px) does not exceed this are treated as
    /// ties and dropped.
    pub min_margin: f64,
}

impl Default for DpoConfig {
    fn default() -> Self {
        DpoConfig {
            version: DPO_FORMAT_VERSION,
            beta: 0.1,
            candidates: 4,
            rounds: 30,
            lr: 5e-2,
            optimizer: Optimizer::Adam,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            steps_per_round: 1,
            replay: false,
            include_class: false,
            min_margin: 1e-3,
        }
    }
}

impl DpoConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let c: DpoConfig = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.version != DPO_FORMAT_VERSION {
            return bad(format!("dpo config version {} unsupported", self.version));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return bad(format!("beta {} must be positive", self.beta));
        }
        if self.candidates < 2 {
            return Err(Error::InsufficientCandidates(self.candidates));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate {} must be positive", self.lr));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return bad("moment decays must lie in [0, 1)".into());
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon must be positive".into());
        }
        if self.rounds == 0 || self.steps_per_round == 0 {
            return bad("rounds and steps_per_round must be positive".into());
        }
        if !(self.min_margin >= 0.0 && self.min_margin.is_finite()) {
            return bad(format!("min_margin {} must be non-negative", self.min_margin));
        }
        Ok(())
    }
}

/// Frozen policy snapshot anchoring the log-ratios.
#[derive(Clone, Debug, PartialEq)]
pub struct ReferencePolicy(PhysicsPolicy);

impl ReferencePolicy {
    pub fn new(policy: &PhysicsPolicy) -> Self {
        ReferencePolicy(policy.clone())
    }

    pub fn policy(&self) -> &PhysicsPolicy {
        &self.0
    }
}

/// `−log σ(z)`, stable for large `|z|`.
fn neg_log_sigmoid(z: f64) -> f64 {
    if z > 0.0 {
        (-z).exp().ln_1p()
    } else {
        -z + z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn margin(policy: &PhysicsPolicy, reference: &ReferencePolicy, pair: &PreferencePair) -> f64 {
    let r = reference.policy();
    let dw = policy.log_prob(&pair.winner) - r.log_prob(&pair.winner);
    let dl = policy.log_prob(&pair.loser) - r.log_prob(&pair.loser);
    dw - dl
}

pub fn dpo_loss(
    policy: &PhysicsPolicy,
    reference: &ReferencePolicy,
    pairs: &[PreferencePair],
    beta: f64,
) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::EmptyPairs);
    }
    let total: f64 = pairs
        .iter()
        .map(|p| neg_log_sigmoid(beta * margin(policy, reference, p)))
        .sum();
    Ok(total / pairs.len() as f64)
}

/// Gradient of [`dpo_loss`] in the layout of [`PhysicsPolicy::params`].
pub fn dpo_grad(
    policy: &PhysicsPolicy,
    reference: &ReferencePolicy,
    pairs: &[PreferencePair],
    beta: f64,
) -> Result<[f64; PARAM_COUNT]> {
    if pairs.is_empty() {
        return Err(Error::EmptyPairs);
    }
    let mut g = [0.0; PARAM_COUNT];
    let scale = 1.0 / pairs.len() as f64;
    for p in pairs {
        let coef = -beta * sigmoid(-beta * margin(policy, reference, p)) * scale;
        let gw = policy.grad_log_prob(&p.winner);
        let gl = policy.grad_log_prob(&p.loser);
        for k in 0..PARAM_COUNT {
            g[k] += coef * (gw[k] - gl[k]);
        }
    }
    Ok(g)
}

/// First and second moment estimates of the adaptive optimizer.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub m: [f64; PARAM_COUNT],
    pub v: [f64; PARAM_COUNT],
    pub t: u64,
}

impl Default for OptimizerState {
    fn default() -> Self {
        OptimizerState {
            m: [0.0; PARAM_COUNT],
            v: [0.0; PARAM_COUNT],
            t: 0,
        }
    }
}

/// One optimizer update on the DPO loss over `pairs`.
pub fn dpo_step(
    policy: &PhysicsPolicy,
    reference: &ReferencePolicy,
    pairs: &[PreferencePair],
    config: &DpoConfig,
    state: &OptimizerState,
) -> Result<(PhysicsPolicy, OptimizerState)> {
    let g = dpo_grad(policy, reference, pairs, config.beta)?;
    if let Some(k) = g.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!(
            "DPO gradient component {k} over {} pairs (policy μ = {:?}, log σ² = {:?})",
            pairs.len(),
            policy.mu_theta,
            policy.log_var_theta
        )));
    }
    let mut params = policy.params();
    let mut next = state.clone();
    match config.optimizer {
        Optimizer::Sgd => {
            for k in 0..PARAM_COUNT {
                params[k] -= config.lr * g[k];
            }
        }
        Optimizer::Adam => {
            next.t += 1;
            let bc1 = 1.0 - config.beta1.powi(next.t as i32);
            let bc2 = 1.0 - config.beta2.powi(next.t as i32);
            for k in 0..PARAM_COUNT {
                next.m[k] = config.beta1 * next.m[k] + (1.0 - config.beta1) * g[k];
                next.v[k] = config.beta2 * next.v[k] + (1.0 - config.beta2) * g[k] * g[k];
                let mhat = next.m[k] / bc1;
                let vhat = next.v[k] / bc2;
                params[k] -= config.lr * mhat / (vhat.sqrt() + config.epsilon);
            }
        }
    }
    let mut out = policy.clone();
    out.set_params(&params);
    Ok((out, next))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateLog {
    pub index: usize,
    pub params: SampledParams,
    pub distance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    pub round: usize,
    pub candidates: Vec<CandidateLog>,
    pub pairs: usize,
    /// DPO loss on the training pairs before this round's update; `None`
    /// when the round produced no pairs.
    pub loss: Option<f64>,
    /// Smallest distance seen so far.
    pub best_distance: f64,
    pub mu_theta: [f64; 3],
    pub sigma_theta: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentifyReport {
    pub policy: PhysicsPolicy,
    pub rounds: Vec<RoundLog>,
}

impl IdentifyReport {
    /// `round,candidate,E,nu,rho,distance,loss` rows.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["round", "candidate", "E", "nu", "rho", "distance", "loss"])
            .map_err(|e| Error::format("round csv", e.to_string()))?;
        for r in &self.rounds {
            let loss = r.loss.map(|l| format!("{l:?}")).unwrap_or_default();
            for c in &r.candidates {
                wr.write_record([
                    r.round.to_string(),
                    c.index.to_string(),
                    format!("{:?}", c.params.theta.young),
                    format!("{:?}", c.params.theta.poisson),
                    format!("{:?}", c.params.theta.density),
                    format!("{:?}", c.distance),
                    loss.clone(),
                ])
                .map_err(|e| Error::format("round csv", e.to_string()))?;
            }
        }
        wr.flush()?;
        Ok(())
    }
}

/// Simulates `theta` on the scene and tracks its reference points.
pub fn rollout_tracks(scene: &BuiltScene, theta: &MaterialSpec, sim: &SimConfig) -> Result<TrajectorySet> {
    let model = MaterialModel::new(theta, sim.friction)?;
    let mut particles = scene.particles(theta);
    let rollout = Simulator::new(sim.clone(), vec![model])?.run(&mut particles)?;
    track(&rollout, &scene.camera, &scene.tracked_ids)
}

/// Identification loop: per round sample `K` candidates, simulate and track
/// each, rank them by distance to `reference`, and take DPO steps on the
/// resulting pairs. Candidates of a round run concurrently; results do not
/// depend on the worker count.
pub fn identify(
    scene: &BuiltScene,
    reference: &TrajectorySet,
    init_policy: &PhysicsPolicy,
    config: &DpoConfig,
    sim: &SimConfig,
) -> Result<IdentifyReport> {
    identify_with(scene, reference, init_policy, config, sim, |_| {})
}

/// [`identify`] with a callback after every round.
pub fn identify_with(
    scene: &BuiltScene,
    reference: &TrajectorySet,
    init_policy: &PhysicsPolicy,
    config: &DpoConfig,
    sim: &SimConfig,
    mut on_round: impl FnMut(&RoundLog),
) -> Result<IdentifyReport> {
    config.validate()?;
    init_policy.validate()?;
    if reference.particle_ids() != scene.tracked_ids.as_slice() {
        return Err(Error::IncomparableTrajectories(
            "reference tracks do not follow the scene's tracked particles".into(),
        ));
    }
    let frozen = ReferencePolicy::new(init_policy);
    let fixed_class = (!config.include_class).then_some(scene.material.class);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut policy = init_policy.clone();
    let mut state = OptimizerState::default();
    let mut replay: Vec<PreferencePair> = Vec::new();
    let mut best = f64::INFINITY;
    let mut rounds = Vec::with_capacity(config.rounds);

    for round in 0..config.rounds {
        let with_round = |e: Error| Error::Round {
            round,
            source: Box::new(e),
        };
        let samples: Vec<SampledParams> = (0..config.candidates)
            .map(|_| policy.sample_with(&mut rng, fixed_class))
            .collect();
        let distances: Vec<f64> = samples
            .par_iter()
            .map(|s| {
                s.theta.validate()?;
                let tracks = rollout_tracks(scene, &s.theta, sim)?;
                trajectory_distance(&tracks, reference)
            })
            .collect::<Vec<Result<f64>>>()
            .into_iter()
            .collect::<Result<_>>()
            .map_err(with_round)?;
        let scored: Vec<(SampledParams, f64)> = samples.iter().copied().zip(distances.iter().copied()).collect();
        let (_, mut pairs) = rank_and_pair(&scored).map_err(with_round)?;
        pairs.retain(|p| p.margin > config.min_margin);
        best = distances.iter().copied().fold(best, f64::min);

        let training: &[PreferencePair] = if config.replay {
            replay.extend(pairs.iter().cloned());
            &replay
        } else {
            &pairs
        };
        let loss = if training.is_empty() {
            None
        } else {
            let loss = dpo_loss(&policy, &frozen, training, config.beta).map_err(with_round)?;
            for _ in 0..config.steps_per_round {
                let (p, s) = dpo_step(&policy, &frozen, training, config, &state).map_err(with_round)?;
                policy = p;
                state = s;
            }
            Some(loss)
        };
        let log = RoundLog {
            round,
            candidates: samples
                .iter()
                .zip(&distances)
                .enumerate()
                .map(|(index, (params, distance))| CandidateLog {
                    index,
                    params: *params,
                    distance: *distance,
                })
                .collect(),
            pairs: pairs.len(),
            loss,
            best_distance: best,
            mu_theta: policy.mu_theta,
            sigma_theta: policy.sigma(),
        };
        on_round(&log);
        rounds.push(log);
    }
    Ok(IdentifyReport { policy, rounds })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constitutive::MaterialClass;

    fn policy() -> PhysicsPolicy {
        PhysicsPolicy::new([5.0, 0.5, 3.0], [0.1, -1.0, -0.5], [0.0, 1.0, 0.0, 0.0, 0.0]).unwrap()
    }

    fn pair(w: [f64; 3], l: [f64; 3]) -> PreferencePair {
        PreferencePair {
            winner: SampledParams::from_raw(w, MaterialClass::Jelly),
            loser: SampledParams::from_raw(l, MaterialClass::Jelly),
            margin: 1.0,
        }
    }

    #[test]
    fn loss_at_reference_is_log_two() {
        let p = policy();
        let r = ReferencePolicy::new(&p);
        let pairs = vec![pair([5.2, 0.4, 3.1], [4.0, 0.9, 2.5]), pair([6.0, 0.5, 3.0], [5.0, 0.5, 3.0])];
        for beta in [1e-3, 0.1, 1.0, 50.0] {
            assert!((dpo_loss(&p, &r, &pairs, beta).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
        }
        assert!(matches!(dpo_loss(&p, &r, &[], 0.1), Err(Error::EmptyPairs)));
    }

    #[test]
    fn hand_evaluated_logistic() {
        // Shift the mean so that the winner's log-ratio is exactly 1 while
        // the loser sits where the ratio vanishes.
        let r = PhysicsPolicy::new([0.0; 3], [0.0; 3], [0.0; 5]).unwrap();
        let mut p = r.clone();
        p.mu_theta[0] = 0.5;
        // log-ratio at x: (x·0.5 − 0.125) → 1 at x = 2.25, 0 at x = 0.25
        let pr = pair([2.25, 0.0, 0.0], [0.25, 0.0, 0.0]);
        let loss = dpo_loss(&p, &ReferencePolicy::new(&r), &[pr], 1.0).unwrap();
        assert!((loss - 0.313_261_687_518_222_8).abs() < 1e-12);
    }

    #[test]
    fn gradient_at_reference() {
        let p = policy();
        let r = ReferencePolicy::new(&p);
        let pr = pair([5.3, 0.2, 3.4], [4.1, 0.6, 2.9]);
        let g = dpo_grad(&p, &r, &[pr.clone()], 0.1).unwrap();
        let gw = p.grad_log_prob(&pr.winner);
        let gl = p.grad_log_prob(&pr.loser);
        for k in 0..PARAM_COUNT {
            assert!((g[k] + 0.05 * (gw[k] - gl[k])).abs() < 1e-15);
        }
        let same = pair([5.3, 0.2, 3.4], [5.3, 0.2, 3.4]);
        assert!(dpo_grad(&p, &r, &[same], 0.1).unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn zero_gradient_leaves_policy_unchanged() {
        let p = policy();
        let r = ReferencePolicy::new(&p);
        let same = pair([5.3, 0.2, 3.4], [5.3, 0.2, 3.4]);
        let (q, _) = dpo_step(&p, &r, &[same], &DpoConfig::default(), &OptimizerState::default()).unwrap();
        assert_eq!(q, p);
    }

    #[test]
    fn repeated_steps_widen_the_winner_gap() {
        let p0 = policy();
        let r = ReferencePolicy::new(&p0);
        let pr = pair([5.5, 0.5, 3.0], [4.5, 0.5, 3.0]);
        let cfg = DpoConfig::default();
        let mut p = p0.clone();
        let mut state = OptimizerState::default();
        let gap = |p: &PhysicsPolicy| p.log_prob(&pr.winner) - p.log_prob(&pr.loser);
        let mut last = gap(&p);
        for _ in 0..100 {
            let (q, s) = dpo_step(&p, &r, &[pr.clone()], &cfg, &state).unwrap();
            p = q;
            state = s;
            let g = gap(&p);
            assert!(g > last);
            last = g;
        }
    }

    #[test]
    fn config_validation() {
        assert!(DpoConfig::default().validate().is_ok());
        let mut c = DpoConfig::default();
        c.beta = 0.0;
        assert!(c.validate().is_err());
        c = DpoConfig::default();
        c.candidates = 1;
        assert!(matches!(c.validate(), Err(Error::InsufficientCandidates(1))));
        assert!(DpoConfig::from_json(r#"{"beta": 0.2, "rounds": 3}"#).unwrap().beta == 0.2);
        assert!(DpoConfig::from_json(r#"{"betta": 0.2}"#).is_err());
    }
}
