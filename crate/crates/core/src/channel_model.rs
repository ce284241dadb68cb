//! Rayleigh fading as a finite-state Markov channel, plus a Jakes
//! sum-of-sinusoids gain generator for simulation.
//!
//! Transition matrices are stored `[from][to]`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

use crate::solar_hmm::sample_index;

pub const DEFAULT_OSCILLATORS: usize = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChannelError {
    #[error("invalid channel config: {0}")]
    InvalidConfig(String),
    #[error("channel state {state}: {what} = {value} lies outside [0,1]; Doppler too fast for this quantization")]
    InvalidTransition { state: usize, what: &'static str, value: f64 },
}

/// Channel quantization. `boundaries` holds the interior thresholds
/// Γ_1 < … < Γ_{N_C−1}; Γ_0 = 0 and Γ_{N_C} = ∞ are implied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelConfig {
    pub boundaries: Vec<f64>,
    pub gamma0: f64,
    /// Doppler frequency times T_L.
    pub fd_norm: f64,
}

impl ChannelConfig {
    /// Γ = {0, 0.3, 0.6, 1, 2, 3, ∞} with unit mean power.
    pub fn standard_grid(fd_norm: f64) -> Self {
        ChannelConfig { boundaries: vec![0.3, 0.6, 1.0, 2.0, 3.0], gamma0: 1.0, fd_norm }
    }

    pub fn n_states(&self) -> usize {
        self.boundaries.len() + 1
    }

    /// Γ_i for i in 0..=N_C.
    pub fn threshold(&self, i: usize) -> f64 {
        if i == 0 {
            0.0
        } else if i > self.boundaries.len() {
            f64::INFINITY
        } else {
            self.boundaries[i - 1]
        }
    }

    pub fn validate(&self) -> Result<(), ChannelError> {
        let bad = |m: &str| Err(ChannelError::InvalidConfig(m.into()));
        if !(self.gamma0 > 0.0 && self.gamma0.is_finite()) {
            return bad("gamma0 must be positive");
        }
        if !(self.fd_norm > 0.0 && self.fd_norm.is_finite()) {
            return bad("fd_norm must be positive");
        }
        let mut prev = 0.0;
        for &b in &self.boundaries {
            if !(b > prev && b.is_finite()) {
                return bad("thresholds must be finite and strictly increasing above 0");
            }
            prev = b;
        }
        Ok(())
    }

    /// Stationary probability of state i for exponential channel power.
    pub fn state_probability(&self, i: usize) -> f64 {
        (-self.threshold(i) / self.gamma0).exp() - (-self.threshold(i + 1) / self.gamma0).exp()
    }

    /// Level-crossing rate per period at threshold `g`.
    pub fn crossing_rate(&self, g: f64) -> f64 {
        if g.is_infinite() {
            return 0.0;
        }
        (2.0 * PI * g / self.gamma0).sqrt() * self.fd_norm * (-g / self.gamma0).exp()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelFsmc {
    pub stationary: Vec<f64>,
    /// `transitions[from][to]`, tridiagonal.
    pub transitions: Vec<Vec<f64>>,
}

impl ChannelFsmc {
    pub fn n_states(&self) -> usize {
        self.stationary.len()
    }

    /// Tabular export: `from,to,probability`, plus stationary rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("kind,from,to,probability\n");
        for (i, p) in self.stationary.iter().enumerate() {
            out.push_str(&format!("stationary,{i},{i},{p}\n"));
        }
        for (i, row) in self.transitions.iter().enumerate() {
            for (k, p) in row.iter().enumerate() {
                out.push_str(&format!("transition,{i},{k},{p}\n"));
            }
        }
        out
    }
}

pub fn build_fsmc(cfg: &ChannelConfig) -> Result<ChannelFsmc, ChannelError> {
    cfg.validate()?;
    let n = cfg.n_states();
    let stationary: Vec<f64> = (0..n).map(|i| cfg.state_probability(i)).collect();
    let mut transitions = vec![vec![0.0; n]; n];
    for i in 0..n {
        let p = stationary[i];
        let up = if i + 1 < n { cfg.crossing_rate(cfg.threshold(i + 1)) / p } else { 0.0 };
        let down = if i > 0 { cfg.crossing_rate(cfg.threshold(i)) / p } else { 0.0 };
        for (what, v) in [("up-transition", up), ("down-transition", down)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(ChannelError::InvalidTransition { state: i, what, value: v });
            }
        }
        let stay = 1.0 - up - down;
        if !(0.0..=1.0).contains(&stay) {
            return Err(ChannelError::InvalidTransition { state: i, what: "self-transition", value: stay });
        }
        if i + 1 < n {
            transitions[i][i + 1] = up;
        }
        if i > 0 {
            transitions[i][i - 1] = down;
        }
        transitions[i][i] = stay;
    }
    Ok(ChannelFsmc { stationary, transitions })
}

/// Index i with Γ_i ≤ γ < Γ_{i+1}.
pub fn quantize_gain(gamma: f64, cfg: &ChannelConfig) -> usize {
    cfg.boundaries.iter().take_while(|&&b| b <= gamma).count()
}

/// Rayleigh power gains at the management-period rate with the default
/// oscillator count.
pub fn jakes_generate(gamma0: f64, fd_norm: f64, n_periods: usize, seed: u64) -> Vec<f64> {
    JakesGenerator::new(gamma0, fd_norm, DEFAULT_OSCILLATORS, seed).take(n_periods).collect()
}

/// Sum-of-sinusoids generator with equally spaced arrival angles, a random
/// rotation and random per-oscillator phases. Oscillators advance by phasor
/// rotation and are re-synchronised from the closed form periodically.
#[derive(Debug, Clone)]
pub struct JakesGenerator {
    gamma0: f64,
    scale: f64,
    omega_i: Vec<f64>,
    omega_q: Vec<f64>,
    phase_i: Vec<f64>,
    phase_q: Vec<f64>,
    rot_i: Vec<(f64, f64)>,
    rot_q: Vec<(f64, f64)>,
    cur_i: Vec<(f64, f64)>,
    cur_q: Vec<(f64, f64)>,
    t: u64,
}

const RESYNC_EVERY: u64 = 1024;

impl JakesGenerator {
    pub fn new(gamma0: f64, fd_norm: f64, oscillators: usize, seed: u64) -> Self {
        let m = oscillators.max(1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let theta: f64 = rng.gen_range(-PI..PI);
        let mut omega_i = Vec::with_capacity(m);
        let mut omega_q = Vec::with_capacity(m);
        let mut phase_i = Vec::with_capacity(m);
        let mut phase_q = Vec::with_capacity(m);
        for n in 1..=m {
            let alpha = (2.0 * PI * n as f64 - PI + theta) / (4.0 * m as f64);
            omega_i.push(2.0 * PI * fd_norm * alpha.cos());
            omega_q.push(2.0 * PI * fd_norm * alpha.sin());
            phase_i.push(rng.gen_range(-PI..PI));
            phase_q.push(rng.gen_range(-PI..PI));
        }
        let rot = |w: &Vec<f64>| w.iter().map(|&w| (w.cos(), w.sin())).collect::<Vec<_>>();
        let mut g = JakesGenerator {
            gamma0,
            scale: (1.0 / m as f64).sqrt(),
            rot_i: rot(&omega_i),
            rot_q: rot(&omega_q),
            cur_i: vec![(1.0, 0.0); m],
            cur_q: vec![(1.0, 0.0); m],
            omega_i,
            omega_q,
            phase_i,
            phase_q,
            t: 0,
        };
        g.resync();
        g
    }

    fn resync(&mut self) {
        let t = self.t as f64;
        for k in 0..self.omega_i.len() {
            let a = self.omega_i[k] * t + self.phase_i[k];
            let b = self.omega_q[k] * t + self.phase_q[k];
            self.cur_i[k] = (a.cos(), a.sin());
            self.cur_q[k] = (b.cos(), b.sin());
        }
    }

    fn advance(cur: &mut [(f64, f64)], rot: &[(f64, f64)]) {
        for (c, r) in cur.iter_mut().zip(rot) {
            *c = (c.0 * r.0 - c.1 * r.1, c.0 * r.1 + c.1 * r.0);
        }
    }
}

impl Iterator for JakesGenerator {
    type Item = f64;

    fn next(&mut self) -> Option<f64> {
        let hi: f64 = self.cur_i.iter().map(|c| c.0).sum::<f64>() * self.scale;
        let hq: f64 = self.cur_q.iter().map(|c| c.0).sum::<f64>() * self.scale;
        self.t += 1;
        if self.t % RESYNC_EVERY == 0 {
            self.resync();
        } else {
            Self::advance(&mut self.cur_i, &self.rot_i);
            Self::advance(&mut self.cur_q, &self.rot_q);
        }
        Some(self.gamma0 * (hi * hi + hq * hq))
    }
}

/// Channel gains drawn from the FSMC itself: states follow the Markov chain
/// started from its stationary law, gains are sampled from the exponential
/// law conditioned on the state's interval.
pub fn fsmc_generate(fsmc: &ChannelFsmc, cfg: &ChannelConfig, n_periods: usize, seed: u64) -> (Vec<f64>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut states = Vec::with_capacity(n_periods);
    let mut gains = Vec::with_capacity(n_periods);
    let mut s = sample_index(&fsmc.stationary, &mut rng);
    for t in 0..n_periods {
        if t > 0 {
            s = sample_index(&fsmc.transitions[s], &mut rng);
        }
        let lo = (-cfg.threshold(s) / cfg.gamma0).exp();
        let hi = (-cfg.threshold(s + 1) / cfg.gamma0).exp();
        let u: f64 = rng.gen();
        let mut g = (-cfg.gamma0 * (lo - u * (lo - hi)).ln()).max(cfg.threshold(s));
        let upper = cfg.threshold(s + 1);
        if g >= upper {
            g = upper.next_down();
        }
        states.push(s);
        gains.push(g);
    }
    (gains, states)
}
