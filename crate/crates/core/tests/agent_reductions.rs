mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ersac_core::agent::{losses, Agent, Backend, BatchSegment, ErsacConfig, LossStep, Segment, TargetKind};
use ersac_core::approx::NetConfig;
use ersac_core::mdp::{build_deep_sea, DeepSeaSpec};
use ersac_core::replay::VTraceConfig;
use ersac_core::uncertainty::EnsembleConfig;

fn small_net() -> NetConfig {
    NetConfig {
        hidden: vec![16, 16],
        ensemble: EnsembleConfig {
            heads: 4,
            ..Default::default()
        },
        ..Default::default()
    }
}

fn episode_segments(agent: &mut Agent, depth: usize, seed: u64) -> Vec<Segment> {
    let ds = build_deep_sea(&DeepSeaSpec::new(depth));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut segs = Vec::new();
    agent
        .run_episode(ds.mdp(), &mut rng, |_, s, _| {
            segs.push(s);
            Ok(())
        })
        .unwrap();
    segs
}

#[test]
fn sampled_policy_gradient_matches_exact_gradient() {
    for seed in 0..2 {
        let cmp = common::sampled_policy_gradient(seed, 100_000);
        assert!(cmp.within(3.0), "seed {seed}: {cmp:?}");
    }
}

#[test]
fn zero_uncertainty_fixed_tau_is_soft_actor_critic() {
    for seed in 0..3 {
        let r = common::actor_critic_reduction(seed);
        assert!(r.bitwise_equal_to_vanilla, "seed {seed}");
        assert!(r.oracle_rel_error < 1e-6, "seed {seed}: {}", r.oracle_rel_error);
    }
}

#[test]
fn vtrace_on_own_behavior_reproduces_td_lambda_targets() {
    let ds = build_deep_sea(&DeepSeaSpec::new(8));
    let cfg = ErsacConfig {
        net: small_net(),
        rollout: 5,
        ..Default::default()
    };
    let mut agent = Agent::new(ds.mdp(), cfg, 3).unwrap();
    for seg in episode_segments(&mut agent, 8, 4) {
        let on = agent
            .batch_gradient(&[BatchSegment {
                segment: &seg,
                target: TargetKind::OnPolicy,
                online: true,
            }])
            .unwrap();
        let off = agent
            .batch_gradient(&[BatchSegment {
                segment: &seg,
                target: TargetKind::VTrace(VTraceConfig::default()),
                online: true,
            }])
            .unwrap();
        let bits = |v: &[Vec<f64>]| v.iter().flatten().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&on.k_hat), bits(&off.k_hat));
        assert_eq!(on.grad.flat(), off.grad.flat());
    }
}

#[test]
fn tau_falls_while_entropy_exceeds_bonus() {
    let ds = build_deep_sea(&DeepSeaSpec::new(6));
    let cfg = ErsacConfig {
        net: small_net(),
        backend: Backend::Counts {
            sigma: 0.0,
            pseudo_count: 1.0,
        },
        tau_init: 0.05,
        tau_lr: 1e-2,
        tau_min: 1e-3,
        ..Default::default()
    };
    let mut agent = Agent::new(ds.mdp(), cfg, 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut taus = vec![agent.tau()];
    while agent.tau() > 1e-3 && taus.len() < 10_000 {
        agent
            .run_episode(ds.mdp(), &mut rng, |a, s, _| {
                let r = a.step(&s)?;
                taus.push(r.tau);
                Ok(())
            })
            .unwrap();
    }
    assert_eq!(*taus.last().unwrap(), 1e-3);
    let before_clip = taus.iter().position(|&t| t == 1e-3).unwrap();
    assert!(taus[..=before_clip].windows(2).all(|w| w[1] < w[0]));
}

fn lp_strategy() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0f64..3.0, 2..5).prop_map(|z| common::log_softmax(&z))
}

proptest! {
    #[test]
    fn targets_enter_gradients_only_as_constants(
        lp in lp_strategy(),
        action_seed in 0usize..100,
        value in -2.0f64..2.0,
        k_hat in -2.0f64..2.0,
        shift in -2.0f64..2.0,
        weight in 0.1f64..1.0,
        tau in 0.01f64..2.0,
    ) {
        let action = action_seed % lp.len();
        let step = |k: f64| LossStep { log_probs: &lp, action, value, k_hat: k, sigma2: 0.3, weight };
        let (_, a) = losses(&[step(k_hat)], tau).unwrap();
        let (_, b) = losses(&[step(k_hat + shift)], tau).unwrap();
        // Shifting the target moves the logit adjoint along -w * grad log pi(a) only.
        for (i, (x, y)) in a[0].logits.iter().zip(&b[0].logits).enumerate() {
            let p = lp[i].exp();
            let score = if i == action { 1.0 - p } else { -p };
            prop_assert!((y - x + weight * shift * score).abs() < 1e-10);
        }
        // The value adjoint sees the target only through the regression residual.
        prop_assert!((a[0].value - 2.0 * (value - (k_hat - tau * lp[action]))).abs() < 1e-12);
        prop_assert!((b[0].value - a[0].value + 2.0 * shift).abs() < 1e-10);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]
    #[test]
    fn tau_stays_positive_and_bounded(seed in 0u64..1000, tau_lr in 1e-4f64..10.0, tau_init in 1e-3f64..5.0) {
        let ds = build_deep_sea(&DeepSeaSpec::new(5));
        let cfg = ErsacConfig { net: small_net(), tau_lr, tau_init, ..Default::default() };
        let (lo, hi) = (cfg.tau_min, cfg.tau_max);
        let mut agent = Agent::new(ds.mdp(), cfg, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..10 {
            agent.run_episode(ds.mdp(), &mut rng, |a, s, _| {
                let r = a.step(&s)?;
                assert!(r.tau > 0.0 && (lo..=hi).contains(&r.tau));
                Ok(())
            }).unwrap();
        }
    }
}
