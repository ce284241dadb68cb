mod common;

use common::*;
use harvest_core::belief_runtime::{belief_update, Belief, BeliefMode};
use harvest_core::config::{solve_system, ExperimentConfig};
use harvest_core::mdp_core::{MdpDims, Policy, PolicyClass};
use harvest_core::policy_analysis::{expected_net_bit_rate, stationary_under_policy};
use harvest_core::simulator::{
    results_rows, run_episode, sweep, t_quantile, t_tfr_oracle, ChannelSource, IrradianceSource, PolicySource,
    SimConfig, SimError, SimTrace,
};
use harvest_core::solar_hmm::HmmParams;
use proptest::prelude::*;

fn hmm() -> HmmParams {
    HmmParams::solar_five_minute()
}

fn base(cfg: &ExperimentConfig, policy: PolicySource, seed: u64, periods: usize) -> SimConfig {
    let mut c = cfg.sim_config(&hmm(), &hmm(), policy, seed).unwrap();
    c.n_periods = periods;
    c
}

/// Irradiance that harvests `quanta` energy units per period.
fn irradiance_for(cfg: &SimConfig, quanta: f64) -> f64 {
    quanta * cfg.energy.e_unit() / cfg.energy.harvested_energy(1.0)
}

fn zero_kappa_policy(cfg: &ExperimentConfig) -> Policy {
    let dims = MdpDims { n_h: 4, n_c: 6, n_b: cfg.n_b };
    Policy::from_thresholds(dims, 0, &vec![vec![0; 6]; 4])
}

/// Paired 95% interval on the batch-mean difference a − b.
fn paired(a: &SimTrace, b: &SimTrace) -> (f64, f64) {
    let d: Vec<f64> = a.aggregates.batch_rates.iter().zip(&b.aggregates.batch_rates).map(|(x, y)| x - y).collect();
    let k = d.len() as f64;
    let mean = d.iter().sum::<f64>() / k;
    let var = d.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (k - 1.0);
    let half = t_quantile(d.len() - 1) * (var / k).sqrt();
    (mean - half, mean + half)
}

#[test]
fn no_sunlight_drains_the_initial_charge() {
    let cfg = ExperimentConfig::evaluation();
    for policy in [
        PolicySource::MyopicI { modulation: 0 },
        PolicySource::Solved { policy: zero_kappa_policy(&cfg), belief: BeliefMode::Mixed },
        PolicySource::TTfr { horizon: 12, modulation: 0 },
    ] {
        let mut c = base(&cfg, policy, 1, 100);
        c.irradiance = IrradianceSource::Recorded { sequences: vec![vec![0.0; 100]] };
        c.initial_battery = Some(5);
        c.record_trace = true;
        let t = run_episode(&c).unwrap();
        let a = &t.aggregates;
        assert_eq!(a.transmit_periods, 5, "{}", t.label);
        assert_eq!(a.quanta_harvested, 0);
        assert_eq!(a.final_battery, 0);
        let recs = t.records.as_ref().unwrap();
        let last_on = recs.iter().rposition(|r| r.action.w > 0).unwrap();
        assert!(recs[last_on + 1..].iter().all(|r| r.battery == 0 && r.action.w == 0));
        assert_eq!(a.outage_periods, 100 - last_on - 1);
        check_trace(&t, c.n_b).unwrap();
    }
}

#[test]
fn perfect_channel_saturates_at_the_peak_rate() {
    let mut cfg = ExperimentConfig::evaluation();
    cfg.gamma_c_db = Some(200.0);
    for policy in [
        PolicySource::MyopicI { modulation: 0 },
        PolicySource::Solved { policy: zero_kappa_policy(&cfg), belief: BeliefMode::Mixed },
    ] {
        let mut c = base(&cfg, policy, 2, 5000);
        let x = irradiance_for(&c, 1.5);
        c.irradiance = IrradianceSource::Recorded { sequences: vec![vec![x; 5000]] };
        c.initial_battery = Some(1);
        let a = run_episode(&c).unwrap().aggregates;
        assert_eq!(a.transmit_periods, 5000);
        assert!((a.avg_net_bit_rate - 2e5).abs() < 1e-6, "{}", a.avg_net_bit_rate);
    }
}

#[test]
fn recorded_data_must_cover_the_run() {
    let cfg = ExperimentConfig::evaluation();
    let mut c = base(&cfg, PolicySource::MyopicI { modulation: 0 }, 3, 100);
    c.irradiance = IrradianceSource::Recorded { sequences: vec![vec![1.0; 40], vec![1.0; 40]] };
    assert!(matches!(run_episode(&c), Err(SimError::InsufficientData { available: 80, required: 100 })));
}

#[test]
fn belief_restarts_with_each_recorded_sequence() {
    let cfg = ExperimentConfig::evaluation();
    let s = solve_system(&cfg, &hmm(), PolicyClass::OnOff { modulation: 0 }).unwrap();
    let mut c = base(&cfg, PolicySource::Solved { policy: s.policy, belief: BeliefMode::Mixed }, 4, 30);
    let day1: Vec<f64> = (0..10).map(|k| 1e4 * k as f64).collect();
    let day2: Vec<f64> = vec![9e4, 2e3, 5e4, 1e4, 7e4, 3e4, 8e4, 6e4, 4e4, 1e3];
    let day3 = day1.clone();
    c.irradiance = IrradianceSource::Recorded { sequences: vec![day1.clone(), day2.clone(), day3] };
    c.record_trace = true;
    let t = run_episode(&c).unwrap();
    let recs = t.records.as_ref().unwrap();
    let p = hmm();
    for (start, day) in [(0, &day1), (10, &day2), (20, &day1)] {
        let mut b = Belief::stationary(&p);
        for (k, &x) in day.iter().enumerate() {
            b = belief_update(&b, x, &p);
            assert!(max_abs_diff(&recs[start + k].belief, &b.zeta) < 1e-12, "period {}", start + k);
        }
    }
    assert_eq!(recs[0].belief, recs[20].belief);
    check_trace(&t, c.n_b).unwrap();
}

#[test]
fn episodes_are_deterministic() {
    let mut cfg = ExperimentConfig::evaluation();
    cfg.gamma_c_db = Some(5.0);
    let s = solve_system(&cfg, &hmm(), PolicyClass::Composite).unwrap();
    let mk = |seed, policy: PolicySource| {
        let mut c = base(&cfg, policy, seed, 20_000);
        c.record_trace = true;
        c
    };
    let solved = PolicySource::Solved { policy: s.policy, belief: BeliefMode::Mixed };
    let cfgs = vec![
        mk(1, solved.clone()),
        mk(2, solved),
        mk(1, PolicySource::MyopicII { modulation: 2 }),
        mk(1, PolicySource::TTfr { horizon: 24, modulation: 0 }),
    ];
    let forward = sweep(&cfgs).unwrap();
    let mut reversed_cfgs = cfgs.clone();
    reversed_cfgs.reverse();
    let mut backward = sweep(&reversed_cfgs).unwrap();
    backward.reverse();
    assert_eq!(forward, backward);
    assert_eq!(forward[0], run_episode(&cfgs[0]).unwrap());
    assert_ne!(forward[0].aggregates.total_bits, forward[1].aggregates.total_bits);
    for (t, c) in forward.iter().zip(&cfgs) {
        check_trace(t, c.n_b).unwrap();
    }
}

#[test]
fn single_config_sweep_row_matches_the_episode() {
    let cfg = ExperimentConfig::evaluation();
    let c = base(&cfg, PolicySource::MyopicI { modulation: 0 }, 5, 10_000);
    let traces = sweep(std::slice::from_ref(&c)).unwrap();
    let rows = results_rows(std::slice::from_ref(&c), &traces, &["avg_net_bit_rate"]);
    assert_eq!(rows.len(), 1);
    let direct = run_episode(&c).unwrap().aggregates;
    assert_eq!(rows[0].value, direct.avg_net_bit_rate);
    assert_eq!((rows[0].ci_low, rows[0].ci_high), direct.ci95);
    assert_eq!(rows[0].config_hash, c.config_hash());
}

#[test]
fn onoff_runs_stay_below_the_realized_bound() {
    for snr in [-5.0, 5.0, 20.0] {
        let mut cfg = ExperimentConfig::evaluation();
        cfg.gamma_c_db = Some(snr);
        for m in 0..3 {
            let s = solve_system(&cfg, &hmm(), PolicyClass::OnOff { modulation: m }).unwrap();
            for policy in [
                PolicySource::Solved { policy: s.policy.clone(), belief: BeliefMode::Mixed },
                PolicySource::MyopicI { modulation: m },
                PolicySource::TTfr { horizon: 24, modulation: m },
            ] {
                let mut c = base(&cfg, policy, 6, 30_000);
                c.record_trace = true;
                let t = run_episode(&c).unwrap();
                let a = &t.aggregates;
                assert!(a.avg_net_bit_rate <= a.onoff_rate_bound(&c.radio, &c.channel, m) * (1.0 + 1e-12));
                check_trace(&t, c.n_b).unwrap();
            }
        }
    }
}

#[test]
fn threshold_setup_simulation_matches_the_analytic_rate() {
    let cfg = ExperimentConfig::threshold_setup();
    let s = solve_system(&cfg, &hmm(), PolicyClass::OnOff { modulation: 1 }).unwrap();
    let nu = stationary_under_policy(&s.policy, &s.model).unwrap();
    let analytic = expected_net_bit_rate(&nu, &s.policy, &s.model);
    let mut c = base(&cfg, PolicySource::Solved { policy: s.policy, belief: BeliefMode::TrueState }, 7, 1_000_000);
    // Jakes fading at f_D = 0.05 jumps past neighbouring levels, which the
    // chain model cannot represent; compare against the chain channel.
    c.channel_source = ChannelSource::Fsmc;
    let sim = run_episode(&c).unwrap().aggregates.avg_net_bit_rate;
    assert!(((sim - analytic) / analytic).abs() <= 0.03, "sim {sim} analytic {analytic}");
}

fn buffer_sweep_traces(sizes: &[usize]) -> Vec<SimTrace> {
    let cfgs: Vec<SimConfig> = sizes
        .iter()
        .map(|&n_b| {
            let mut cfg = ExperimentConfig::evaluation();
            cfg.gamma_c_db = Some(0.0);
            cfg.energy.panel_area = 8.0;
            cfg.n_b = n_b;
            let s = solve_system(&cfg, &hmm(), PolicyClass::Composite).unwrap();
            base(&cfg, PolicySource::Solved { policy: s.policy, belief: BeliefMode::Mixed }, 8, 200_000)
        })
        .collect();
    sweep(&cfgs).unwrap()
}

#[test]
fn larger_buffers_help() {
    let sizes = [2, 4, 8, 12, 16];
    let traces = buffer_sweep_traces(&sizes);
    for k in 1..sizes.len() {
        let (_, hi) = paired(&traces[k], &traces[k - 1]);
        assert!(hi >= 0.0, "N_B {} below N_B {}", sizes[k], sizes[k - 1]);
    }
    let ratio = traces[4].aggregates.avg_net_bit_rate / traces[0].aggregates.avg_net_bit_rate;
    assert!((ratio - 1.5).abs() <= 0.25 * 1.5, "ratio {ratio}");
}

/// Best total reward over every on-off schedule that respects causality.
fn brute_force(rewards: &[f64], quanta: &[usize], battery: usize, n_b: usize) -> f64 {
    let h = rewards.len();
    let mut best = 0.0f64;
    for mask in 0u32..(1 << h) {
        let (mut b, mut total, mut ok) = (battery, 0.0, true);
        for t in 0..h {
            let on = mask >> t & 1 == 1;
            if on {
                if b == 0 {
                    ok = false;
                    break;
                }
                b -= 1;
                total += rewards[t];
            }
            b = (b + quanta[t]).min(n_b - 1);
        }
        if ok {
            best = best.max(total);
        }
    }
    best
}

proptest! {
    #[test]
    fn ttfr_matches_brute_force(
        rewards in prop::collection::vec(0.0f64..10.0, 1..9),
        quanta_seed in prop::collection::vec(0usize..3, 9),
        n_b in 1usize..6,
        battery_seed in 0usize..6,
    ) {
        let h = rewards.len();
        let quanta = &quanta_seed[..h];
        let battery = battery_seed % n_b;
        let schedule = t_tfr_oracle(h, &rewards, quanta, battery, n_b).unwrap();
        let (mut b, mut total) = (battery, 0.0);
        for t in 0..h {
            if schedule[t] {
                prop_assert!(b >= 1);
                b -= 1;
                total += rewards[t];
            }
            b = (b + quanta[t]).min(n_b - 1);
        }
        prop_assert!((total - brute_force(&rewards, quanta, battery, n_b)).abs() <= 1e-9);
    }
}
