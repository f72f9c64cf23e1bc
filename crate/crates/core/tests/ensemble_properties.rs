use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ersac_core::uncertainty::{CountUncertainty, EnsembleConfig, EnsembleInput, EnsembleSample, RewardEnsemble};

fn one_hot(i: usize, n: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[i] = 1.0;
    v
}

#[test]
fn trained_input_is_less_uncertain_than_untrained_input() {
    let (dim, inits) = (6, 12);
    let (mut trained, mut untrained) = (0.0, 0.0);
    for seed in 0..inits {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = EnsembleConfig {
            heads: 10,
            ..Default::default()
        };
        let mut ens = RewardEnsemble::new(dim, dim, 2, &cfg, &mut rng).unwrap();
        let seen = one_hot(0, dim);
        let unseen = one_hot(3, dim);
        for _ in 0..2_000 {
            let target_noise: Vec<f64> = (0..10).map(|_| 0.3 * rng.random_range(-1.0..1.0)).collect();
            let s = EnsembleSample {
                features: seen.clone(),
                obs: seen.clone(),
                action: 1,
                reward: 0.2,
                target_noise,
            };
            ens.update(&[s], 0.05).unwrap();
        }
        trained += ens.sigma2(EnsembleInput { features: &seen, obs: &seen }, 1) / inits as f64;
        untrained += ens.sigma2(EnsembleInput { features: &unseen, obs: &unseen }, 1) / inits as f64;
    }
    assert!(trained < untrained, "trained {trained}, untrained {untrained}");
}

proptest! {
    #[test]
    fn count_uncertainty_strictly_decreases(sigma in 0.01f64..10.0, pseudo in 0.01f64..10.0, visits in 1usize..200) {
        let mut c = CountUncertainty::with_shape(&[1], 2, sigma, pseudo);
        let mut prev = c.sigma2(0, 0, 0);
        for _ in 0..visits {
            c.observe(0, 0, 0);
            let now = c.sigma2(0, 0, 0);
            prop_assert!(now < prev);
            prev = now;
        }
        prop_assert_eq!(c.sigma2(0, 0, 1), sigma * sigma / pseudo);
    }

    #[test]
    fn priors_survive_any_training_schedule(
        seed in 0u64..10_000,
        schedule in prop::collection::vec((0usize..5, 0usize..3, -1.0f64..1.0, 0.0f64..0.5), 1..40),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = EnsembleConfig { heads: 4, ..Default::default() };
        let mut ens = RewardEnsemble::new(5, 5, 3, &cfg, &mut rng).unwrap();
        let fingerprint = ens.prior_fingerprint();
        let priors = ens.priors().to_vec();
        for (x, a, r, lr) in schedule {
            let obs = one_hot(x, 5);
            let s = EnsembleSample { features: obs.clone(), obs, action: a, reward: r, target_noise: vec![r; 4] };
            ens.update(&[s], lr).unwrap();
        }
        prop_assert_eq!(ens.prior_fingerprint(), fingerprint);
        prop_assert_eq!(ens.priors(), &priors[..]);
    }
}
