mod common;

use common::*;
use harvest_core::belief_runtime::{belief_update, max_belief_action, mixed_action, Belief};
use harvest_core::mdp_core::{Action, MdpDims, Policy, PolicyClass};
use harvest_core::solar_hmm::HmmParams;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Policy whose power at battery 3 equals the solar state index.
fn state_coded_policy() -> Policy {
    let dims = MdpDims { n_h: 4, n_c: 2, n_b: 4 };
    let actions = (0..dims.n_states())
        .map(|s| {
            let (z, _, n) = dims.unpack(s);
            Action { w: z.min(n), m: 0 }
        })
        .collect();
    Policy { dims, class: PolicyClass::Composite, actions, thresholds: None }
}

#[test]
fn fifty_steps_match_the_direct_filter() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..10 {
        let p = random_hmm(3, &mut rng);
        let (_, obs) = p.sample(50, &p.stationary, &mut rng);
        let want = direct_filter(&obs, &p, &p.stationary);
        let mut b = Belief::stationary(&p);
        for (t, &x) in obs.iter().enumerate() {
            b = belief_update(&b, x, &p);
            assert!(max_abs_diff(&b.zeta, &want[t]) <= 1e-9, "step {t}");
            assert_eq!(b.last_obs, Some(x));
        }
        assert_eq!(b.resets, 0);
    }
}

#[test]
fn filtering_beats_the_prior_guess() {
    let p = HmmParams::solar_five_minute();
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let (states, obs) = p.sample(10_000, &p.stationary, &mut rng);
    let mut b = Belief::stationary(&p);
    let (mut hits, mut on_truth) = (0usize, 0.0);
    for (&z, &x) in states.iter().zip(&obs) {
        b = belief_update(&b, x, &p);
        hits += usize::from(b.argmax() == z);
        on_truth += b.zeta[z];
    }
    let prior_best = p.stationary.iter().cloned().fold(0.0, f64::max);
    let prior_on_truth: f64 = p.stationary.iter().map(|v| v * v).sum();
    assert!(hits as f64 / 1e4 > prior_best + 0.2, "accuracy {}", hits as f64 / 1e4);
    assert!(on_truth / 1e4 > prior_on_truth + 0.2);
}

#[test]
fn mixed_action_follows_the_belief() {
    let policy = state_coded_policy();
    let b = Belief::from_distribution(vec![0.1, 0.2, 0.3, 0.4]);
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let mut counts = [0usize; 4];
    let n = 100_000;
    for _ in 0..n {
        counts[mixed_action(&b, &policy, 1, 3, &mut rng).w] += 1;
    }
    for (j, &c) in counts.iter().enumerate() {
        assert!((c as f64 / n as f64 - b.zeta[j]).abs() <= 0.01, "state {j}: {c}");
    }
    assert_eq!(max_belief_action(&b, &policy, 1, 3).w, 3);
}

#[test]
fn mixed_actions_are_reproducible() {
    let policy = state_coded_policy();
    let b = Belief::from_distribution(vec![0.25; 4]);
    let draw = |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..1000).map(|_| mixed_action(&b, &policy, 0, 3, &mut rng).w).collect::<Vec<_>>()
    };
    assert_eq!(draw(5), draw(5));
    assert_ne!(draw(5), draw(6));
}

proptest! {
    #[test]
    fn beliefs_stay_normalized(seed in any::<u64>(), n in 1usize..5, xs in prop::collection::vec(-1e3f64..1e3, 1..30)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_hmm(n, &mut rng);
        let mut b = Belief::stationary(&p);
        for &x in &xs {
            b = belief_update(&b, x, &p);
            prop_assert!(b.zeta.iter().all(|&v| v >= 0.0 && v.is_finite()));
            prop_assert!((b.zeta.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }
}
