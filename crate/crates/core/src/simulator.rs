//! Monte Carlo evaluation of transmission policies.
//!
//! An episode first draws its exogenous processes (irradiance, channel
//! gains, harvested quanta) and then drives a policy over them, so several
//! policies can be compared on common random numbers. Each period the node
//! observes the irradiance mean, updates its belief, reads the channel
//! state, acts, spends energy, collects bits and finally stores the harvest.
//!
//! RNG streams are ChaCha8 streams of the master seed: 1 irradiance,
//! 2 channel, 3 belief sampling, 4 initial battery, 5 packet draws.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use statrs::distribution::{ContinuousCDF, StudentsT};
use std::collections::BTreeMap;
use thiserror::Error;

use crate::belief_runtime::{belief_update_with_log_likelihoods, max_belief_action, mixed_action, Belief, BeliefMode};
use crate::channel_model::{
    build_fsmc, fsmc_generate, quantize_gain, ChannelConfig, ChannelError, JakesGenerator, DEFAULT_OSCILLATORS,
};
use crate::energy_model::{recharge_step, BatterySimState, EnergyConfig, EnergyError};
use crate::mdp_core::{ber_bound, reward, reward_from_ber, Action, MdpError, Policy, RadioConfig};
use crate::solar_hmm::{sample_index, state_log_likelihoods, HmmParams};

pub const STREAM_IRRADIANCE: u64 = 1;
pub const STREAM_CHANNEL: u64 = 2;
pub const STREAM_BELIEF: u64 = 3;
pub const STREAM_INIT: u64 = 4;
pub const STREAM_PACKETS: u64 = 5;

/// Batches used for confidence intervals.
pub const CI_BATCHES: usize = 20;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("recorded irradiance holds {available} periods, {required} required")]
    InsufficientData { available: usize, required: usize },
    #[error("t-TFR horizon {horizon} exceeds the {available} periods of future data")]
    HorizonTooLong { horizon: usize, available: usize },
    #[error("period {t}: action w={w} infeasible at battery {battery}")]
    Infeasible { t: usize, w: usize, battery: usize },
    #[error("period {t}: energy causality violated")]
    Causality { t: usize },
    #[error("energy conservation violated: {0}")]
    Conservation(String),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Energy(#[from] EnergyError),
    #[error(transparent)]
    Mdp(#[from] MdpError),
}

pub type Result<T> = std::result::Result<T, SimError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum IrradianceSource {
    /// Per-period means from measured data, consumed in order. The belief
    /// restarts from υ at the start of every sequence.
    Recorded { sequences: Vec<Vec<f64>> },
    /// One continuous chain sampled from `generator`, started from its
    /// stationary law; negative draws are clamped at 0.
    Synthetic { generator: HmmParams },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ChannelSource {
    Jakes {
        oscillators: usize,
    },
    /// Gains sampled from the FSMC chain itself (ablation).
    Fsmc,
}

impl Default for ChannelSource {
    fn default() -> Self {
        ChannelSource::Jakes { oscillators: DEFAULT_OSCILLATORS }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicySource {
    Solved { policy: Policy, belief: BeliefMode },
    MyopicI { modulation: usize },
    MyopicII { modulation: usize },
    TTfr { horizon: usize, modulation: usize },
}

impl PolicySource {
    pub fn label(&self, radio: &RadioConfig) -> String {
        let name = |m: &usize| radio.modulations.get(*m).map(|x| x.name.clone()).unwrap_or_default();
        match self {
            PolicySource::Solved { policy, .. } => match policy.class {
                crate::mdp_core::PolicyClass::Composite => "composite".into(),
                crate::mdp_core::PolicyClass::OnOff { modulation } => format!("onoff-{}", name(&modulation)),
            },
            PolicySource::MyopicI { modulation } => format!("myopic1-{}", name(modulation)),
            PolicySource::MyopicII { modulation } => format!("myopic2-{}", name(modulation)),
            PolicySource::TTfr { horizon, modulation } => format!("ttfr{horizon}-{}", name(modulation)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BitAccounting {
    /// Bits per period = reward · T_L.
    #[default]
    Expected,
    /// Successful packets drawn as Binomial(D, P_f).
    Bernoulli,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_periods: usize,
    pub seed: u64,
    pub radio: RadioConfig,
    pub energy: EnergyConfig,
    pub channel: ChannelConfig,
    pub n_b: usize,
    /// N_P for Myopic II; defaults to N_B.
    #[serde(default)]
    pub n_power: Option<usize>,
    /// Model used by the belief filter.
    pub model: HmmParams,
    pub policy: PolicySource,
    pub irradiance: IrradianceSource,
    #[serde(default)]
    pub channel_source: ChannelSource,
    #[serde(default)]
    pub bits: BitAccounting,
    /// Fixed starting battery; uniform over 0..N_B when absent.
    #[serde(default)]
    pub initial_battery: Option<usize>,
    /// Normalized SNR γ_C in dB, carried for reporting.
    #[serde(default)]
    pub gamma_c_db: Option<f64>,
    #[serde(default)]
    pub record_trace: bool,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SimError::InvalidConfig(m));
        if self.n_periods == 0 {
            return bad("n_periods must be at least 1".into());
        }
        if self.n_b == 0 {
            return bad("n_b must be at least 1".into());
        }
        self.radio.validate()?;
        self.energy.validate()?;
        self.channel.validate()?;
        if let Some(b) = self.initial_battery {
            if b >= self.n_b {
                return bad(format!("initial battery {b} exceeds N_B - 1"));
            }
        }
        if self.n_power() == 0 {
            return bad("n_power must be at least 1".into());
        }
        let n_mod = self.radio.modulations.len();
        match &self.policy {
            PolicySource::Solved { policy, belief } => {
                let d = policy.dims;
                if d.n_h != self.model.n_states || d.n_c != self.channel.n_states() || d.n_b != self.n_b {
                    return bad("policy dimensions do not match the simulation".into());
                }
                if policy.actions.iter().any(|a| a.m >= n_mod) {
                    return bad("policy uses an unknown modulation".into());
                }
                if *belief == BeliefMode::TrueState && matches!(self.irradiance, IrradianceSource::Recorded { .. }) {
                    return bad("true-state mode needs synthetic irradiance".into());
                }
            }
            PolicySource::MyopicI { modulation } | PolicySource::MyopicII { modulation } => {
                if *modulation >= n_mod {
                    return bad("unknown modulation".into());
                }
            }
            PolicySource::TTfr { horizon, modulation } => {
                if *modulation >= n_mod || *horizon == 0 {
                    return bad("t-TFR needs a known modulation and a positive horizon".into());
                }
            }
        }
        if let IrradianceSource::Recorded { sequences } = &self.irradiance {
            let available: usize = sequences.iter().map(Vec::len).sum();
            if available < self.n_periods {
                return Err(SimError::InsufficientData { available, required: self.n_periods });
            }
        }
        Ok(())
    }

    pub fn n_power(&self) -> usize {
        self.n_power.unwrap_or(self.n_b)
    }

    /// Stable short hash of the serialized configuration.
    pub fn config_hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(text.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    fn exogenous_key(&self) -> String {
        serde_json::to_string(&(
            self.n_periods,
            self.seed,
            &self.energy,
            &self.channel,
            &self.irradiance,
            &self.channel_source,
            self.n_b,
        ))
        .expect("config serializes")
    }
}

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Exogenous processes of one episode.
#[derive(Debug, Clone)]
pub struct Exogenous {
    pub irradiance: Vec<f64>,
    pub true_state: Option<Vec<usize>>,
    /// True where a recorded sequence begins.
    pub sequence_start: Vec<bool>,
    pub gains: Vec<f64>,
    pub channel_state: Vec<usize>,
    pub harvest: Vec<f64>,
    /// Whole quanta produced by accumulate-and-floor, before battery clamping.
    pub raw_quanta: Vec<usize>,
}

pub fn generate_exogenous(cfg: &SimConfig) -> Result<Exogenous> {
    let n = cfg.n_periods;
    let (irradiance, true_state, sequence_start) = match &cfg.irradiance {
        IrradianceSource::Recorded { sequences } => {
            let mut x = Vec::with_capacity(n);
            let mut starts = Vec::with_capacity(n);
            'outer: for seq in sequences {
                for (k, &v) in seq.iter().enumerate() {
                    if x.len() == n {
                        break 'outer;
                    }
                    x.push(v.max(0.0));
                    starts.push(k == 0);
                }
            }
            if x.len() < n {
                return Err(SimError::InsufficientData { available: x.len(), required: n });
            }
            (x, None, starts)
        }
        IrradianceSource::Synthetic { generator } => {
            let mut rng = stream_rng(cfg.seed, STREAM_IRRADIANCE);
            let normals: Vec<Normal<f64>> = (0..generator.n_states)
                .map(|j| Normal::new(generator.means[j], generator.std_dev(j)).expect("valid variance"))
                .collect();
            let mut s = sample_index(&generator.stationary, &mut rng);
            let mut x = Vec::with_capacity(n);
            let mut states = Vec::with_capacity(n);
            for t in 0..n {
                if t > 0 {
                    s = sample_index(&generator.transitions[s], &mut rng);
                }
                states.push(s);
                x.push(normals[s].sample(&mut rng).max(0.0));
            }
            let mut starts = vec![false; n];
            starts[0] = true;
            (x, Some(states), starts)
        }
    };

    let (gains, channel_state) = match cfg.channel_source {
        ChannelSource::Jakes { oscillators } => {
            let seed = stream_rng(cfg.seed, STREAM_CHANNEL).next_u64();
            let g: Vec<f64> =
                JakesGenerator::new(cfg.channel.gamma0, cfg.channel.fd_norm, oscillators, seed).take(n).collect();
            let s = g.iter().map(|&v| quantize_gain(v, &cfg.channel)).collect();
            (g, s)
        }
        ChannelSource::Fsmc => {
            let fsmc = build_fsmc(&cfg.channel)?;
            let seed = stream_rng(cfg.seed, STREAM_CHANNEL).next_u64();
            fsmc_generate(&fsmc, &cfg.channel, n, seed)
        }
    };

    let e_u = cfg.energy.e_unit();
    let harvest: Vec<f64> = irradiance.iter().map(|&x| cfg.energy.harvested_energy(x)).collect();
    let mut raw_quanta = Vec::with_capacity(n);
    let mut acc = BatterySimState { residual: 0.0, quanta_in_battery: 0 };
    for &e in &harvest {
        let r = recharge_step(acc, e, usize::MAX, e_u);
        raw_quanta.push(r.quanta_added);
        acc = BatterySimState { residual: r.state.residual, quanta_in_battery: 0 };
    }
    Ok(Exogenous { irradiance, true_state, sequence_start, gains, channel_state, harvest, raw_quanta })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodRecord {
    pub irradiance: f64,
    pub quanta_added: usize,
    pub overflow: usize,
    /// Battery level when the action is chosen.
    pub battery: usize,
    pub gain: f64,
    pub channel_state: usize,
    pub belief: Vec<f64>,
    pub action: Action,
    /// Effective packets D_E delivered this period.
    pub packets: f64,
    pub bits: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimAggregates {
    pub n_periods: usize,
    pub avg_net_bit_rate: f64,
    pub total_bits: f64,
    pub outage_periods: usize,
    pub transmit_periods: usize,
    pub overflow_quanta: usize,
    pub quanta_harvested: usize,
    pub quanta_stored: usize,
    pub quanta_spent: usize,
    pub initial_battery: usize,
    pub final_battery: usize,
    pub belief_resets: usize,
    /// Per-batch average rates.
    pub batch_rates: Vec<f64>,
    pub ci95: (f64, f64),
}

impl SimAggregates {
    /// Realized harvest rate q̄_T in quanta per period.
    pub fn harvest_rate(&self) -> f64 {
        self.quanta_harvested as f64 / self.n_periods as f64
    }

    /// Upper bound on any on-off run over this trace: transmissions cannot
    /// exceed initial storage plus harvest, nor the number of periods.
    pub fn onoff_rate_bound(&self, radio: &RadioConfig, channel: &ChannelConfig, m: usize) -> f64 {
        let budget = (self.initial_battery + self.quanta_harvested) as f64 / self.n_periods as f64;
        let best = channel.n_states() - 1;
        budget.min(1.0) * reward_from_ber(ber_bound(best, 1, m, radio, channel), m, radio)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTrace {
    pub label: String,
    pub config_hash: String,
    pub aggregates: SimAggregates,
    /// Decision-time visits of (true solar, channel, battery), when the
    /// solar state is known.
    pub state_visits: Option<Vec<u64>>,
    pub records: Option<Vec<PeriodRecord>>,
}

impl SimTrace {
    /// Line-per-period CSV dump.
    pub fn records_csv(&self) -> Option<String> {
        let recs = self.records.as_ref()?;
        let mut out =
            String::from("t,irradiance,quanta_added,overflow,battery,gain,channel_state,w,m,packets,bits,belief\n");
        for (t, r) in recs.iter().enumerate() {
            let belief: Vec<String> = r.belief.iter().map(|b| b.to_string()).collect();
            out.push_str(&format!(
                "{t},{},{},{},{},{},{},{},{},{},{},{}\n",
                r.irradiance,
                r.quanta_added,
                r.overflow,
                r.battery,
                r.gain,
                r.channel_state,
                r.action.w,
                r.action.m,
                r.packets,
                r.bits,
                belief.join(";")
            ));
        }
        Some(out)
    }
}

pub fn myopic_policy_i(_x: usize, n: usize, modulation: usize) -> Action {
    Action { w: n.min(1), m: modulation }
}

pub fn myopic_policy_ii(_x: usize, n: usize, n_power: usize, modulation: usize) -> Action {
    Action { w: n.min(n_power.saturating_sub(1)), m: modulation }
}

/// Horizon DP over (period, battery) for on-off spending with perfect
/// knowledge of per-period rewards and harvested quanta. Returns the
/// transmit schedule; ties favour silence.
pub fn t_tfr_oracle(
    horizon: usize,
    future_rewards: &[f64],
    future_quanta: &[usize],
    battery: usize,
    n_b: usize,
) -> Result<Vec<bool>> {
    let available = future_rewards.len().min(future_quanta.len());
    if horizon > available {
        return Err(SimError::HorizonTooLong { horizon, available });
    }
    if n_b == 0 || battery >= n_b {
        return Err(SimError::InvalidConfig("battery level out of range".into()));
    }
    let cap = n_b - 1;
    let mut value = vec![vec![0.0; n_b]; horizon + 1];
    let mut on = vec![vec![false; n_b]; horizon];
    for h in (0..horizon).rev() {
        let q = future_quanta[h];
        for b in 0..n_b {
            let off = value[h + 1][(b + q).min(cap)];
            let mut best = off;
            if b >= 1 {
                let v_on = future_rewards[h] + value[h + 1][(b - 1 + q).min(cap)];
                if v_on > off {
                    best = v_on;
                    on[h][b] = true;
                }
            }
            value[h][b] = best;
        }
    }
    let mut schedule = Vec::with_capacity(horizon);
    let mut b = battery;
    for h in 0..horizon {
        let act = on[h][b];
        schedule.push(act);
        b = (b - usize::from(act) + future_quanta[h]).min(cap);
    }
    Ok(schedule)
}

pub fn run_episode(cfg: &SimConfig) -> Result<SimTrace> {
    cfg.validate()?;
    let exo = generate_exogenous(cfg)?;
    run_with_exogenous(cfg, &exo)
}

/// Drives the configured policy over pre-drawn exogenous processes.
pub fn run_with_exogenous(cfg: &SimConfig, exo: &Exogenous) -> Result<SimTrace> {
    cfg.validate()?;
    let n = cfg.n_periods;
    let n_b = cfg.n_b;
    let cap = n_b - 1;
    let n_power = cfg.n_power();
    let n_mod = cfg.radio.modulations.len();
    let n_c = cfg.channel.n_states();
    let e_u = cfg.energy.e_unit();
    let t_l = cfg.radio.period_s;
    let d_packets = cfg.radio.packets_per_period()?;
    let max_w = n_power.max(2);

    // reward_tab[(x * max_w + w) * n_mod + m]
    let mut reward_tab = vec![0.0; n_c * max_w * n_mod];
    for x in 0..n_c {
        for w in 1..max_w {
            for m in 0..n_mod {
                reward_tab[(x * max_w + w) * n_mod + m] = reward(x, w, w, m, &cfg.radio, &cfg.channel)?;
            }
        }
    }
    let bits_per_packet = |m: usize| cfg.radio.modulations[m].bits_per_symbol as f64 * cfg.radio.packet_symbols;

    let mut init_rng = stream_rng(cfg.seed, STREAM_INIT);
    let b0 = cfg.initial_battery.unwrap_or_else(|| init_rng.gen_range(0..n_b));
    let mut belief_rng = stream_rng(cfg.seed, STREAM_BELIEF);
    let mut packet_rng = stream_rng(cfg.seed, STREAM_PACKETS);

    let mut battery = BatterySimState { residual: 0.0, quanta_in_battery: b0 };
    let mut belief = Belief::stationary(&cfg.model);
    let mut records = cfg.record_trace.then(|| Vec::with_capacity(n));
    let mut visits = exo.true_state.as_ref().map(|_| vec![0u64; cfg.model.n_states * n_c * n_b]);

    let mut schedule: Vec<bool> = Vec::new();
    let mut schedule_pos = 0usize;

    let batch_len = (n / CI_BATCHES).max(1);
    let mut batch_bits = Vec::with_capacity(CI_BATCHES + 1);
    let mut cur_batch = 0.0;
    let mut cur_len = 0usize;

    let (mut spent, mut stored, mut overflow, mut outage, mut transmit) = (0usize, 0usize, 0usize, 0usize, 0usize);
    let mut total_bits = 0.0;

    for t in 0..n {
        let x_t = exo.irradiance[t];
        if exo.sequence_start[t] && t > 0 {
            let resets = belief.resets;
            belief = Belief::stationary(&cfg.model);
            belief.resets = resets;
        }
        let ll = state_log_likelihoods(x_t, &cfg.model);
        belief = belief_update_with_log_likelihoods(&belief, &ll, &cfg.model, Some(x_t));
        let ch = exo.channel_state[t];
        let level = battery.quanta_in_battery;
        if let (Some(v), Some(states)) = (visits.as_mut(), exo.true_state.as_ref()) {
            v[(states[t] * n_c + ch) * n_b + level] += 1;
        }

        let action = match &cfg.policy {
            PolicySource::Solved { policy, belief: mode } => match mode {
                BeliefMode::Mixed => mixed_action(&belief, policy, ch, level, &mut belief_rng),
                BeliefMode::MaxBelief => max_belief_action(&belief, policy, ch, level),
                BeliefMode::TrueState => {
                    let z = exo.true_state.as_ref().expect("validated")[t];
                    policy.action(z, ch, level)
                }
            },
            PolicySource::MyopicI { modulation } => myopic_policy_i(ch, level, *modulation),
            PolicySource::MyopicII { modulation } => myopic_policy_ii(ch, level, n_power, *modulation),
            PolicySource::TTfr { horizon, modulation } => {
                if schedule_pos == schedule.len() {
                    let h = (*horizon).min(n - t);
                    let rewards: Vec<f64> = (t..t + h)
                        .map(|k| reward_tab[(exo.channel_state[k] * max_w + 1) * n_mod + modulation])
                        .collect();
                    schedule = t_tfr_oracle(h, &rewards, &exo.raw_quanta[t..t + h], level, n_b)?;
                    schedule_pos = 0;
                }
                let on = schedule[schedule_pos];
                schedule_pos += 1;
                Action { w: usize::from(on), m: *modulation }
            }
        };

        if action.w > level || action.w >= max_w.max(n_power) {
            return Err(SimError::Infeasible { t, w: action.w, battery: level });
        }
        if level == 0 {
            outage += 1;
        }
        let rate = if action.w == 0 { 0.0 } else { reward_tab[(ch * max_w + action.w) * n_mod + action.m] };
        let (packets, bits) = if action.w == 0 {
            (0.0, 0.0)
        } else {
            match cfg.bits {
                BitAccounting::Expected => {
                    let bits = rate * t_l;
                    (bits / bits_per_packet(action.m), bits)
                }
                BitAccounting::Bernoulli => {
                    let p_f = rate / (bits_per_packet(action.m) / cfg.radio.packet_duration());
                    let k =
                        Binomial::new(d_packets, p_f.clamp(0.0, 1.0)).expect("valid binomial").sample(&mut packet_rng);
                    (k as f64, k as f64 * bits_per_packet(action.m))
                }
            }
        };
        if action.w > 0 {
            transmit += 1;
        }
        spent += action.w;
        battery.quanta_in_battery -= action.w;
        let r = recharge_step(battery, exo.harvest[t], n_b, e_u);
        battery = r.state;
        stored += r.quanta_added;
        overflow += r.overflow;
        if r.quanta_harvested() != exo.raw_quanta[t] {
            return Err(SimError::Conservation(format!("period {t}: harvest disagrees with the exogenous trace")));
        }
        if spent > b0 + stored || battery.quanta_in_battery > cap {
            return Err(SimError::Causality { t });
        }
        total_bits += bits;
        cur_batch += bits;
        cur_len += 1;
        if cur_len == batch_len && batch_bits.len() < CI_BATCHES {
            batch_bits.push(cur_batch / (cur_len as f64 * t_l));
            cur_batch = 0.0;
            cur_len = 0;
        }
        if let Some(recs) = records.as_mut() {
            recs.push(PeriodRecord {
                irradiance: x_t,
                quanta_added: r.quanta_added,
                overflow: r.overflow,
                battery: level,
                gain: exo.gains[t],
                channel_state: ch,
                belief: belief.zeta.clone(),
                action,
                packets,
                bits,
            });
        }
    }

    let harvested = stored + overflow;
    let final_battery = battery.quanta_in_battery;
    if b0 + stored != spent + final_battery {
        return Err(SimError::Conservation(format!(
            "initial {b0} + stored {stored} != spent {spent} + final {final_battery}"
        )));
    }
    if harvested != exo.raw_quanta.iter().sum::<usize>() {
        return Err(SimError::Conservation("harvest total disagrees with the exogenous trace".into()));
    }
    let avg = total_bits / (n as f64 * t_l);
    let ci95 = batch_ci(&batch_bits, avg);
    let aggregates = SimAggregates {
        n_periods: n,
        avg_net_bit_rate: avg,
        total_bits,
        outage_periods: outage,
        transmit_periods: transmit,
        overflow_quanta: overflow,
        quanta_harvested: harvested,
        quanta_stored: stored,
        quanta_spent: spent,
        initial_battery: b0,
        final_battery,
        belief_resets: belief.resets,
        batch_rates: batch_bits,
        ci95,
    };
    Ok(SimTrace {
        label: cfg.policy.label(&cfg.radio),
        config_hash: cfg.config_hash(),
        aggregates,
        state_visits: visits,
        records,
    })
}

/// Student-t 95% interval from batch means; degenerate to the point
/// estimate with fewer than two batches.
pub fn batch_ci(batches: &[f64], center: f64) -> (f64, f64) {
    let k = batches.len();
    if k < 2 {
        return (center, center);
    }
    let half = t_quantile(k - 1) * std_error(batches);
    (center - half, center + half)
}

pub fn std_error(samples: &[f64]) -> f64 {
    let k = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / k;
    let var = samples.iter().map(|b| (b - mean) * (b - mean)).sum::<f64>() / (k - 1.0);
    (var / k).sqrt()
}

pub fn t_quantile(dof: usize) -> f64 {
    StudentsT::new(0.0, 1.0, dof as f64).expect("positive dof").inverse_cdf(0.975)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub config_hash: String,
    pub policy: String,
    pub gamma_c_db: Option<f64>,
    pub n_b: usize,
    pub metric: String,
    pub value: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

pub const METRICS: [&str; 4] = ["avg_net_bit_rate", "outage_fraction", "overflow_quanta", "harvest_rate"];

/// Runs every configuration; configurations sharing their exogenous inputs
/// reuse one draw. Results keep the input order.
pub fn sweep(configs: &[SimConfig]) -> Result<Vec<SimTrace>> {
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, c) in configs.iter().enumerate() {
        c.validate()?;
        groups.entry(c.exogenous_key()).or_default().push(i);
    }
    let mut out: Vec<Option<SimTrace>> = vec![None; configs.len()];
    for idx in groups.values() {
        let exo = generate_exogenous(&configs[idx[0]])?;
        let traces: Vec<(usize, SimTrace)> = idx
            .par_iter()
            .map(|&i| run_with_exogenous(&configs[i], &exo).map(|t| (i, t)))
            .collect::<Result<Vec<_>>>()?;
        for (i, t) in traces {
            out[i] = Some(t);
        }
    }
    Ok(out.into_iter().map(|t| t.expect("every config ran")).collect())
}

/// One row per (config, metric).
pub fn results_rows(configs: &[SimConfig], traces: &[SimTrace], metrics: &[&str]) -> Vec<SweepRow> {
    let mut rows = Vec::new();
    for (c, t) in configs.iter().zip(traces) {
        let a = &t.aggregates;
        for &metric in metrics {
            let (value, lo, hi) = match metric {
                "avg_net_bit_rate" => (a.avg_net_bit_rate, a.ci95.0, a.ci95.1),
                "outage_fraction" => {
                    let v = a.outage_periods as f64 / a.n_periods as f64;
                    (v, v, v)
                }
                "overflow_quanta" => (a.overflow_quanta as f64, a.overflow_quanta as f64, a.overflow_quanta as f64),
                "harvest_rate" => (a.harvest_rate(), a.harvest_rate(), a.harvest_rate()),
                _ => continue,
            };
            rows.push(SweepRow {
                config_hash: t.config_hash.clone(),
                policy: t.label.clone(),
                gamma_c_db: c.gamma_c_db,
                n_b: c.n_b,
                metric: metric.into(),
                value,
                ci_low: lo,
                ci_high: hi,
            });
        }
    }
    rows
}

pub fn rows_to_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("config_hash,policy,gamma_c_db,n_b,metric,value,ci_low,ci_high\n");
    for r in rows {
        let snr = r.gamma_c_db.map(|g| g.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.config_hash, r.policy, snr, r.n_b, r.metric, r.value, r.ci_low, r.ci_high
        ));
    }
    out
}

/// γ_U from the normalized SNR γ_C, which is referenced to 10³ μW.
pub fn snr_unit_from_gamma_c(gamma_c_db: f64, p_unit_uw: f64) -> f64 {
    p_unit_uw / 1e3 * 10f64.powf(gamma_c_db / 10.0)
}
