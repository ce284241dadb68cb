//! Online Bayes filter over hidden solar states and belief-driven action
//! selection.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::mdp_core::{Action, Policy};
use crate::solar_hmm::{log_sum_exp, sample_index, state_log_likelihoods, HmmParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Belief {
    pub zeta: Vec<f64>,
    pub last_obs: Option<f64>,
    /// Updates that found the observation impossible and fell back to υ.
    pub resets: usize,
}

impl Belief {
    /// Prior belief: the stationary distribution υ.
    pub fn stationary(hmm: &HmmParams) -> Self {
        Belief { zeta: hmm.stationary.clone(), last_obs: None, resets: 0 }
    }

    pub fn from_distribution(zeta: Vec<f64>) -> Self {
        Belief { zeta, last_obs: None, resets: 0 }
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (j, &p) in self.zeta.iter().enumerate() {
            if p > self.zeta[best] {
                best = j;
            }
        }
        best
    }
}

/// ζ'_j ∝ Σ_i ζ_i a_ij f_j(x_t), evaluated in log domain.
pub fn belief_update(belief: &Belief, x_t: f64, hmm: &HmmParams) -> Belief {
    let ll = state_log_likelihoods(x_t, hmm);
    belief_update_with_log_likelihoods(belief, &ll, hmm, Some(x_t))
}

/// Same update with caller-supplied per-state log-likelihoods.
pub fn belief_update_with_log_likelihoods(
    belief: &Belief,
    log_lik: &[f64],
    hmm: &HmmParams,
    obs: Option<f64>,
) -> Belief {
    let n = hmm.n_states;
    let mut log_post = vec![0.0; n];
    for j in 0..n {
        let pred: f64 = (0..n).map(|i| belief.zeta[i] * hmm.transitions[i][j]).sum();
        log_post[j] = pred.ln() + log_lik[j];
    }
    let z = log_sum_exp(&log_post);
    if !z.is_finite() {
        let mut b = Belief::stationary(hmm);
        b.last_obs = obs;
        b.resets = belief.resets + 1;
        return b;
    }
    let mut zeta: Vec<f64> = log_post.iter().map(|&l| (l - z).exp()).collect();
    let s: f64 = zeta.iter().sum();
    zeta.iter_mut().for_each(|p| *p /= s);
    Belief { zeta, last_obs: obs, resets: belief.resets }
}

/// How the runtime maps a belief to a solar state for policy lookup.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BeliefMode {
    /// Sample the solar state from ζ.
    #[default]
    Mixed,
    /// Use argmax ζ.
    MaxBelief,
    /// Use the true hidden state (oracle, for analytic cross-checks).
    TrueState,
}

/// Samples j ~ ζ and applies the per-state policy.
pub fn mixed_action<R: Rng + ?Sized>(belief: &Belief, policy: &Policy, x: usize, n: usize, rng: &mut R) -> Action {
    let j = sample_index(&belief.zeta, rng);
    policy.action(j, x, n)
}

pub fn max_belief_action(belief: &Belief, policy: &Policy, x: usize, n: usize) -> Action {
    policy.action(belief.argmax(), x, n)
}
