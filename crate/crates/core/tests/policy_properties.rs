//! Policy transform, sampling and likelihood properties, plus analytic
//! gradients of the NLL and preference losses against central finite
//! differences.

use gaussphys::constitutive::{MaterialClass, MaterialSpec};
use gaussphys::dpo::{dpo_grad, dpo_loss, ReferencePolicy};
use gaussphys::policy::{ParamTransform, PhysicsPolicy, SampledParams, PARAM_COUNT};
use gaussphys::preference::PreferencePair;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FD_STEP: f64 = 1e-5;
const FD_RTOL: f64 = 1e-5;

fn class() -> impl Strategy<Value = MaterialClass> {
    (0usize..MaterialClass::COUNT).prop_map(|i| MaterialClass::ALL[i])
}

fn policy() -> impl Strategy<Value = PhysicsPolicy> {
    (
        (2.0f64..8.0, -2.0f64..2.0, 1.5f64..4.0),
        proptest::array::uniform3(-4.0f64..1.0),
        proptest::array::uniform5(-2.0f64..2.0),
    )
        .prop_map(|((e, n, r), lv, logits)| PhysicsPolicy::new([e, n, r], lv, logits).unwrap())
}

fn spec() -> impl Strategy<Value = MaterialSpec> {
    (class(), 0.0f64..9.0, -0.95f64..0.49, 0.0f64..5.0).prop_map(|(class, le, poisson, lr)| {
        MaterialSpec {
            class,
            young: 10f64.powf(le),
            poisson,
            density: 10f64.powf(lr),
        }
    })
}

fn sampled() -> impl Strategy<Value = SampledParams> {
    ((2.0f64..8.0, -3.0f64..3.0, 1.0f64..4.5), class())
        .prop_map(|((a, b, c), class)| SampledParams::from_raw([a, b, c], class))
}

fn perturbed(p: &PhysicsPolicy, k: usize, h: f64) -> PhysicsPolicy {
    let mut params = p.params();
    params[k] += h;
    let mut out = p.clone();
    out.set_params(&params);
    out
}

fn central_difference(p: &PhysicsPolicy, f: impl Fn(&PhysicsPolicy) -> f64) -> [f64; PARAM_COUNT] {
    let mut g = [0.0; PARAM_COUNT];
    for (k, gk) in g.iter_mut().enumerate() {
        *gk = (f(&perturbed(p, k, FD_STEP)) - f(&perturbed(p, k, -FD_STEP))) / (2.0 * FD_STEP);
    }
    g
}

fn assert_gradient_close(analytic: &[f64], numeric: &[f64]) -> Result<(), TestCaseError> {
    let scale = analytic.iter().fold(1e-3f64, |m, v| m.max(v.abs()));
    for (k, (a, n)) in analytic.iter().zip(numeric).enumerate() {
        prop_assert!(
            (a - n).abs() <= FD_RTOL * scale,
            "component {k}: analytic {a}, finite difference {n}"
        );
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn nll_gradient_matches_finite_differences(p in policy(), target in spec()) {
        let (_, g) = p.nll_loss_and_grad(&target).unwrap();
        let fd = central_difference(&p, |q| q.nll_loss_and_grad(&target).unwrap().0);
        assert_gradient_close(&g, &fd)?;
    }

    #[test]
    fn dpo_gradient_matches_finite_differences(
        p in policy(),
        r in policy(),
        raw_pairs in proptest::collection::vec((sampled(), sampled()), 1..6),
        beta in 0.01f64..2.0,
    ) {
        let reference = ReferencePolicy::new(&r);
        let pairs: Vec<PreferencePair> = raw_pairs
            .into_iter()
            .map(|(winner, loser)| PreferencePair { winner, loser, margin: 1.0 })
            .collect();
        let g = dpo_grad(&p, &reference, &pairs, beta).unwrap();
        let fd = central_difference(&p, |q| dpo_loss(q, &reference, &pairs, beta).unwrap());
        assert_gradient_close(&g, &fd)?;
    }

    #[test]
    fn loss_at_reference_is_log_two(
        p in policy(),
        raw_pairs in proptest::collection::vec((sampled(), sampled()), 1..6),
        beta in 0.001f64..100.0,
    ) {
        let pairs: Vec<PreferencePair> = raw_pairs
            .into_iter()
            .map(|(winner, loser)| PreferencePair { winner, loser, margin: 1.0 })
            .collect();
        let loss = dpo_loss(&p, &ReferencePolicy::new(&p), &pairs, beta).unwrap();
        prop_assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn transform_round_trips(s in spec()) {
        let raw = ParamTransform::forward_spec(&s).unwrap();
        let (e, nu, rho) = ParamTransform::inverse(raw);
        prop_assert!(((e - s.young) / s.young).abs() < 1e-12);
        prop_assert!((nu - s.poisson).abs() < 1e-12);
        prop_assert!(((rho - s.density) / s.density).abs() < 1e-12);
    }

    #[test]
    fn inverse_lands_in_the_physical_domain(raw in proptest::array::uniform3(-30.0f64..30.0)) {
        let (e, nu, rho) = ParamTransform::inverse(raw);
        prop_assert!(e > 0.0 && rho > 0.0);
        prop_assert!(nu > -1.0 && nu < 0.5 || raw[1].abs() > 20.0);
    }

    #[test]
    fn samples_are_physically_valid(p in policy(), seed in any::<u64>()) {
        let s = p.sample(seed);
        prop_assert!(s.theta.validate().is_ok());
        prop_assert!((p.log_prob(&s)).is_finite());
    }
}

#[test]
fn sample_moments_match_the_policy() {
    let p = PhysicsPolicy::new([5.0, -0.4, 3.0], [(0.7f64).powi(2).ln(), -3.0, 0.5], [0.0, 2.0, -1.0, 0.5, 0.0])
        .unwrap();
    let n = 40_000;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut sum = [0.0; 3];
    let mut sum_sq = [0.0; 3];
    let mut counts = [0usize; MaterialClass::COUNT];
    for _ in 0..n {
        let s = p.sample_with(&mut rng, None);
        for d in 0..3 {
            sum[d] += s.raw[d];
            sum_sq[d] += s.raw[d] * s.raw[d];
        }
        counts[s.class().index()] += 1;
    }
    let sigma = p.sigma();
    for d in 0..3 {
        let mean = sum[d] / n as f64;
        let var = sum_sq[d] / n as f64 - mean * mean;
        assert!((mean - p.mu_theta[d]).abs() < 5.0 * sigma[d] / (n as f64).sqrt());
        assert!((var / (sigma[d] * sigma[d]) - 1.0).abs() < 0.05);
    }
    for (k, prob) in p.class_probs().iter().enumerate() {
        let freq = counts[k] as f64 / n as f64;
        assert!((freq - prob).abs() < 5.0 * (prob * (1.0 - prob) / n as f64).sqrt());
    }
}

#[test]
fn density_integrates_to_one() {
    let p = PhysicsPolicy::new([5.0, 0.3, 3.0], [-1.0, 0.2, -2.5], [0.0; 5]).unwrap();
    let sigma = p.sigma();
    let half = sigma.map(|s| 8.0 * s);
    let volume: f64 = half.iter().map(|h| 2.0 * h).product();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 400_000;
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..n {
        let raw: [f64; 3] =
            std::array::from_fn(|d| p.mu_theta[d] + rng.gen_range(-half[d]..half[d]));
        let v = p.log_density(&raw).exp() * volume;
        sum += v;
        sum_sq += v * v;
    }
    let mean = sum / n as f64;
    let stderr = ((sum_sq / n as f64 - mean * mean) / n as f64).sqrt();
    assert!((mean - 1.0).abs() < 5.0 * stderr, "integral {mean} ± {stderr}");

    let class_total: f64 = p.class_probs().iter().sum();
    assert!((class_total - 1.0).abs() < 1e-12);
}
