//! Independent reference implementations used as oracles by the
//! integration tests.
#![allow(dead_code)]

use harvest_core::mdp_core::{Action, MdpDims, MdpModel, PolicyClass};
use harvest_core::simulator::SimTrace;
use harvest_core::solar_hmm::HmmParams;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

pub fn gauss_pdf(x: f64, mu: f64, var: f64) -> f64 {
    let d = x - mu;
    (-d * d / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
}

pub struct Enumerated {
    pub gamma: Vec<Vec<f64>>,
    pub xi: Vec<Vec<Vec<f64>>>,
    pub likelihood: f64,
}

/// Posteriors by summing over every hidden path.
pub fn enumerate_paths(obs: &[f64], p: &HmmParams) -> Enumerated {
    let n = p.n_states;
    let t_len = obs.len();
    let mut gamma = vec![vec![0.0; n]; t_len];
    let mut xi = vec![vec![vec![0.0; n]; n]; t_len.saturating_sub(1)];
    let mut total = 0.0;
    let mut path = vec![0usize; t_len];
    let count = n.pow(t_len as u32);
    for code in 0..count {
        let mut c = code;
        for s in path.iter_mut() {
            *s = c % n;
            c /= n;
        }
        let mut w = p.initial[path[0]] * gauss_pdf(obs[0], p.means[path[0]], p.variances[path[0]]);
        for t in 1..t_len {
            w *= p.transitions[path[t - 1]][path[t]] * gauss_pdf(obs[t], p.means[path[t]], p.variances[path[t]]);
        }
        total += w;
        for t in 0..t_len {
            gamma[t][path[t]] += w;
        }
        for t in 0..t_len.saturating_sub(1) {
            xi[t][path[t]][path[t + 1]] += w;
        }
    }
    gamma.iter_mut().flatten().for_each(|g| *g /= total);
    xi.iter_mut().flatten().flatten().for_each(|g| *g /= total);
    Enumerated { gamma, xi, likelihood: total }
}

pub fn random_distribution<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / s).collect()
}

pub fn random_hmm<R: Rng>(n: usize, rng: &mut R) -> HmmParams {
    let means = (0..n).map(|j| j as f64 * 2.0 + rng.gen_range(-0.5..0.5)).collect();
    let variances = (0..n).map(|_| rng.gen_range(0.3..2.0)).collect();
    let transitions = (0..n).map(|_| random_distribution(n, rng)).collect();
    HmmParams::new(means, variances, transitions, random_distribution(n, rng)).unwrap()
}

/// Normalized filter in linear domain, starting from `prior`.
pub fn direct_filter(obs: &[f64], p: &HmmParams, prior: &[f64]) -> Vec<Vec<f64>> {
    let n = p.n_states;
    let mut z = prior.to_vec();
    let mut out = Vec::with_capacity(obs.len());
    for &x in obs {
        let mut next = vec![0.0; n];
        for j in 0..n {
            let mut pred = 0.0;
            for i in 0..n {
                pred += z[i] * p.transitions[i][j];
            }
            next[j] = pred * gauss_pdf(x, p.means[j], p.variances[j]);
        }
        let s: f64 = next.iter().sum();
        next.iter_mut().for_each(|v| *v /= s);
        out.push(next.clone());
        z = next;
    }
    out
}

/// Composite adaptive Simpson quadrature.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, eps: f64) -> f64 {
    fn rec<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        eps: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * eps {
            return left + right + delta / 15.0;
        }
        rec(f, a, m, fa, flm, fm, left, eps / 2.0, depth - 1) + rec(f, m, b, fm, frm, fb, right, eps / 2.0, depth - 1)
    }
    let pieces = 64;
    let h = (b - a) / pieces as f64;
    (0..pieces)
        .map(|k| {
            let (l, r) = (a + k as f64 * h, a + (k + 1) as f64 * h);
            let (fl, fm, fr) = (f(l), f(0.5 * (l + r)), f(r));
            let whole = (r - l) / 6.0 * (fl + 4.0 * fm + fr);
            rec(f, l, r, fl, fm, fr, whole, eps / pieces as f64, 40)
        })
        .sum()
}

/// Full transition matrix and reward vector of a deterministic policy.
pub fn policy_chain(model: &MdpModel, actions: &[Action]) -> (DMatrix<f64>, DVector<f64>) {
    let d = model.dims;
    let n = d.n_states();
    let mut p = DMatrix::zeros(n, n);
    let mut r = DVector::zeros(n);
    for s in 0..n {
        let (z, x, b) = d.unpack(s);
        let a = actions[s];
        r[s] = model.reward(x, a.w, a.m);
        let brow = model.battery_row(z, b, a.w);
        for z2 in 0..d.n_h {
            for x2 in 0..d.n_c {
                for (k, &pb) in brow.iter().enumerate() {
                    p[(s, d.index(z2, x2, k))] += model.solar_trans[z][z2] * model.channel_trans[x][x2] * pb;
                }
            }
        }
    }
    (p, r)
}

/// Exact discounted value of a fixed policy: (I − λP)⁻¹ r.
pub fn policy_value(model: &MdpModel, actions: &[Action], discount: f64) -> Vec<f64> {
    let (p, r) = policy_chain(model, actions);
    let n = r.len();
    let m = DMatrix::identity(n, n) - p * discount;
    m.lu().solve(&r).expect("I - λP is invertible").iter().copied().collect()
}

/// sup_s |max_a (r + λ P v) − v(s)|, with P formed from the raw tables.
pub fn bellman_residual(model: &MdpModel, v: &[f64], discount: f64) -> f64 {
    let d = model.dims;
    let mut worst: f64 = 0.0;
    for s in 0..d.n_states() {
        let (z, x, b) = d.unpack(s);
        let mut best = f64::NEG_INFINITY;
        for a in model.actions(b) {
            let brow = model.battery_row(z, b, a.w);
            let mut future = 0.0;
            for z2 in 0..d.n_h {
                for x2 in 0..d.n_c {
                    for (k, &pb) in brow.iter().enumerate() {
                        future += model.solar_trans[z][z2] * model.channel_trans[x][x2] * pb * v[d.index(z2, x2, k)];
                    }
                }
            }
            best = best.max(model.reward(x, a.w, a.m) + discount * future);
        }
        worst = worst.max((best - v[s]).abs());
    }
    worst
}

pub fn policy_count(model: &MdpModel) -> u128 {
    (0..model.n_states()).map(|s| model.actions(model.dims.unpack(s).2).len() as u128).product()
}

/// Pointwise maximum of the exact values of every deterministic policy.
pub fn optimal_by_enumeration(model: &MdpModel, discount: f64) -> Vec<f64> {
    let n = model.n_states();
    let choices: Vec<Vec<Action>> = (0..n).map(|s| model.actions(model.dims.unpack(s).2)).collect();
    let mut idx = vec![0usize; n];
    let mut best = vec![f64::NEG_INFINITY; n];
    loop {
        let actions: Vec<Action> = (0..n).map(|s| choices[s][idx[s]]).collect();
        for (b, v) in best.iter_mut().zip(policy_value(model, &actions, discount)) {
            *b = b.max(v);
        }
        let mut s = 0;
        loop {
            if s == n {
                return best;
            }
            idx[s] += 1;
            if idx[s] < choices[s].len() {
                break;
            }
            idx[s] = 0;
            s += 1;
        }
    }
}

/// Random model with arbitrary stochastic tables and non-negative rewards.
pub fn random_mdp<R: Rng>(dims: MdpDims, class: PolicyClass, n_mod: usize, rng: &mut R) -> MdpModel {
    let (n_power, modulations) = match &class {
        PolicyClass::Composite => (dims.n_b, (0..n_mod).collect::<Vec<_>>()),
        PolicyClass::OnOff { modulation } => (2.min(dims.n_b), vec![*modulation]),
    };
    let solar = (0..dims.n_h).map(|_| random_distribution(dims.n_h, rng)).collect();
    let channel = (0..dims.n_c).map(|_| random_distribution(dims.n_c, rng)).collect();
    let battery = (0..dims.n_h)
        .map(|_| (0..dims.n_b).map(|_| (0..n_power).map(|_| random_distribution(dims.n_b, rng)).collect()).collect())
        .collect();
    let reward = (0..dims.n_c)
        .map(|_| {
            (0..n_power)
                .map(|w| (0..n_mod).map(|_| if w == 0 { 0.0 } else { rng.gen_range(0.0..10.0) }).collect())
                .collect()
        })
        .collect();
    MdpModel::from_parts(dims, class, n_power, modulations, n_mod, solar, channel, battery, reward).unwrap()
}

/// Level-crossing transition matrix of the six-level grid at f_D = 0.05,
/// from the exact Rayleigh joint law (Bessel-series bivariate density,
/// correlation J₀(2π f_D)²), rows = from state.
pub const EXACT_JAKES_TRANSITIONS: [[f64; 6]; 6] = [
    [0.8055, 0.1779, 0.0163, 0.0003, 0.0, 0.0],
    [0.2401, 0.5061, 0.2323, 0.0215, 0.0, 0.0],
    [0.0234, 0.2465, 0.4996, 0.2299, 0.0006, 0.0],
    [0.0003, 0.0178, 0.1789, 0.7010, 0.1006, 0.0014],
    [0.0, 0.0, 0.0013, 0.2735, 0.6039, 0.1213],
    [0.0, 0.0, 0.0, 0.0064, 0.2084, 0.7851],
];

pub fn empirical_transitions(states: &[usize], n: usize) -> Vec<Vec<f64>> {
    let mut counts = vec![vec![0.0; n]; n];
    for w in states.windows(2) {
        counts[w[0]][w[1]] += 1.0;
    }
    for row in counts.iter_mut() {
        let s: f64 = row.iter().sum();
        if s > 0.0 {
            row.iter_mut().for_each(|c| *c /= s);
        }
    }
    counts
}

pub fn occupancy(states: &[usize], n: usize) -> Vec<f64> {
    let mut c = vec![0.0; n];
    for &s in states {
        c[s] += 1.0;
    }
    c.iter().map(|v| v / states.len() as f64).collect()
}

pub fn tv_distance(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Replays a recorded trace and checks energy causality and conservation
/// at every step. Returns the number of steps checked.
pub fn check_trace(trace: &SimTrace, n_b: usize) -> Result<usize, String> {
    let recs = trace.records.as_ref().ok_or("trace has no records")?;
    let a = &trace.aggregates;
    let cap = n_b - 1;
    let mut level = a.initial_battery;
    let (mut spent, mut stored, mut overflow) = (0usize, 0usize, 0usize);
    for (t, r) in recs.iter().enumerate() {
        if r.battery != level {
            return Err(format!("t={t}: recorded battery {} but replay has {level}", r.battery));
        }
        if r.action.w > level {
            return Err(format!("t={t}: spends {} with {level} stored", r.action.w));
        }
        level = level - r.action.w + r.quanta_added;
        if level > cap {
            return Err(format!("t={t}: battery {level} above {cap}"));
        }
        if r.overflow > 0 && level != cap {
            return Err(format!("t={t}: overflow with battery not full"));
        }
        spent += r.action.w;
        stored += r.quanta_added;
        overflow += r.overflow;
        if spent > a.initial_battery + stored {
            return Err(format!("t={t}: cumulative spend exceeds storage plus harvest"));
        }
        if r.action.w == 0 && r.bits != 0.0 {
            return Err(format!("t={t}: bits delivered while silent"));
        }
    }
    if level != a.final_battery || spent != a.quanta_spent || stored != a.quanta_stored || overflow != a.overflow_quanta
    {
        return Err("aggregates disagree with the replay".into());
    }
    if stored + overflow != a.quanta_harvested {
        return Err("harvest split does not add up".into());
    }
    Ok(recs.len())
}
