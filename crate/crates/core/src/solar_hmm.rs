//! Gaussian hidden Markov model of solar irradiance.
//!
//! Training uses Baum-Welch EM with log-domain forward/backward passes so
//! day-long sequences do not underflow. Multiple daily sequences are pooled
//! by summing sufficient statistics.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::path::Path;
use thiserror::Error;

use crate::linalg::{self, BalanceError};

pub const MODEL_FORMAT: &str = "harvest-hmm";
pub const MODEL_VERSION: u32 = 1;

const PROB_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum HmmError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("observation at t={t} has zero likelihood under every state")]
    ZeroLikelihood { t: usize },
    #[error("non-finite observation at t={t}")]
    NonFiniteObservation { t: usize },
    #[error("non-finite log-likelihood at iteration {iteration}")]
    NonFiniteLikelihood { iteration: usize },
    #[error("stationary distribution: {0}")]
    Balance(#[from] BalanceError),
    #[error("model file: {0}")]
    Io(#[from] std::io::Error),
    #[error("model document: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, HmmError>;

/// Trained solar model: per-state Gaussians, transitions `a[i][j] = P(j | i)`,
/// initial and stationary distributions. States are sorted by mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HmmParams {
    pub n_states: usize,
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
    pub transitions: Vec<Vec<f64>>,
    pub initial: Vec<f64>,
    pub stationary: Vec<f64>,
}

impl HmmParams {
    /// Builds a model, computing the stationary distribution from `transitions`.
    pub fn new(means: Vec<f64>, variances: Vec<f64>, transitions: Vec<Vec<f64>>, initial: Vec<f64>) -> Result<Self> {
        let stationary = stationary_distribution(&transitions)?;
        let p = HmmParams { n_states: means.len(), means, variances, transitions, initial, stationary };
        p.validate()?;
        Ok(p)
    }

    /// Builds a model whose initial distribution equals its stationary one.
    pub fn with_stationary_start(means: Vec<f64>, variances: Vec<f64>, transitions: Vec<Vec<f64>>) -> Result<Self> {
        let stationary = stationary_distribution(&transitions)?;
        HmmParams::new(means, variances, transitions, stationary)
    }

    /// The four-state 5-minute model. Variances are stored in (μW/cm²)²,
    /// i.e. the published values scaled by 10⁸.
    pub fn solar_five_minute() -> Self {
        HmmParams::with_stationary_start(
            vec![1.75e4, 4.21e4, 7.02e4, 9.38e4],
            vec![0.65e8, 1.04e8, 2.34e8, 0.54e8],
            vec![
                vec![0.979, 0.015, 0.006, 0.0],
                vec![0.005, 0.988, 0.007, 0.0],
                vec![0.006, 0.009, 0.975, 0.010],
                vec![0.0, 0.0, 0.007, 0.993],
            ],
        )
        .expect("built-in model is valid")
    }

    /// The four-state 15-minute model, same variance units as above.
    pub fn solar_fifteen_minute() -> Self {
        HmmParams::with_stationary_start(
            vec![1.79e4, 4.56e4, 7.60e4, 9.46e4],
            vec![0.71e8, 1.48e8, 1.55e8, 0.31e8],
            vec![
                vec![0.938, 0.057, 0.005, 0.0],
                vec![0.023, 0.955, 0.022, 0.0],
                vec![0.0, 0.032, 0.950, 0.018],
                vec![0.004, 0.0, 0.023, 0.973],
            ],
        )
        .expect("built-in model is valid")
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_states;
        let bad = |m: String| Err(HmmError::InvalidParams(m));
        if n == 0 {
            return bad("n_states must be at least 1".into());
        }
        if self.means.len() != n || self.variances.len() != n || self.initial.len() != n || self.stationary.len() != n {
            return bad("vector lengths differ from n_states".into());
        }
        if self.transitions.len() != n || self.transitions.iter().any(|r| r.len() != n) {
            return bad("transition matrix is not n_states x n_states".into());
        }
        for (j, &v) in self.variances.iter().enumerate() {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("variance of state {j} is {v}"));
            }
        }
        if self.means.iter().any(|m| !m.is_finite()) {
            return bad("non-finite mean".into());
        }
        if self.means.windows(2).any(|w| w[0] > w[1]) {
            return bad("states are not sorted by ascending mean".into());
        }
        check_distribution("initial", &self.initial)?;
        check_distribution("stationary", &self.stationary)?;
        for (i, row) in self.transitions.iter().enumerate() {
            check_distribution(&format!("transition row {i}"), row)?;
        }
        let residual = linalg::row_residual(&self.transitions, &self.stationary);
        if residual > 1e-10 {
            return bad(format!("stationary distribution balance residual {residual:e}"));
        }
        Ok(())
    }

    pub fn std_dev(&self, j: usize) -> f64 {
        self.variances[j].sqrt()
    }

    /// Reorders states so means ascend. Returns the permutation applied
    /// (`order[new] = old`).
    pub fn sort_by_mean(&mut self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.n_states).collect();
        order.sort_by(|&a, &b| self.means[a].total_cmp(&self.means[b]).then(a.cmp(&b)));
        if order.iter().enumerate().all(|(i, &o)| i == o) {
            return order;
        }
        let pick = |v: &Vec<f64>| order.iter().map(|&o| v[o]).collect::<Vec<f64>>();
        self.means = pick(&self.means);
        self.variances = pick(&self.variances);
        self.initial = pick(&self.initial);
        self.stationary = pick(&self.stationary);
        self.transitions = order.iter().map(|&oi| order.iter().map(|&oj| self.transitions[oi][oj]).collect()).collect();
        order
    }

    /// Samples a hidden path and observations of length `len`, starting from `start`.
    pub fn sample<R: Rng + ?Sized>(&self, len: usize, start: &[f64], rng: &mut R) -> (Vec<usize>, Vec<f64>) {
        let mut states = Vec::with_capacity(len);
        let mut obs = Vec::with_capacity(len);
        let normals: Vec<Normal<f64>> =
            (0..self.n_states).map(|j| Normal::new(self.means[j], self.std_dev(j)).expect("valid variance")).collect();
        let mut s = sample_index(start, rng);
        for t in 0..len {
            if t > 0 {
                s = sample_index(&self.transitions[s], rng);
            }
            states.push(s);
            obs.push(normals[s].sample(rng));
        }
        (states, obs)
    }
}

fn check_distribution(name: &str, p: &[f64]) -> Result<()> {
    if p.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
        return Err(HmmError::InvalidParams(format!("{name} has entries outside [0,1]")));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > PROB_TOL {
        return Err(HmmError::InvalidParams(format!("{name} sums to {s}")));
    }
    Ok(())
}

/// Draws an index from a discrete distribution.
pub fn sample_index<R: Rng + ?Sized>(p: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &pi) in p.iter().enumerate() {
        acc += pi;
        if u < acc {
            return i;
        }
    }
    p.iter().rposition(|&x| x > 0.0).unwrap_or(p.len() - 1)
}

pub fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}

/// Gaussian log-density of `x` under each state's emission.
pub fn state_log_likelihoods(x: f64, params: &HmmParams) -> Vec<f64> {
    (0..params.n_states)
        .map(|j| {
            let v = params.variances[j];
            let d = x - params.means[j];
            -0.5 * (2.0 * PI * v).ln() - d * d / (2.0 * v)
        })
        .collect()
}

/// Gaussian densities f_j(x).
pub fn state_likelihoods(x: f64, params: &HmmParams) -> Vec<f64> {
    state_log_likelihoods(x, params).into_iter().map(f64::exp).collect()
}

/// Posteriors from one forward/backward pass. Indexing is `[t][i]` and
/// `xi[t][i][j]` for the transition between t and t+1.
#[derive(Debug, Clone)]
pub struct EStepResult {
    pub log_alpha: Vec<Vec<f64>>,
    pub log_beta: Vec<Vec<f64>>,
    pub gamma: Vec<Vec<f64>>,
    pub xi: Vec<Vec<Vec<f64>>>,
    pub log_likelihood: f64,
}

pub fn forward_backward(obs: &[f64], params: &HmmParams) -> Result<EStepResult> {
    if obs.is_empty() {
        return Err(HmmError::InvalidInput("observation sequence is empty".into()));
    }
    let n = params.n_states;
    let len = obs.len();
    let log_a: Vec<Vec<f64>> = params.transitions.iter().map(|r| r.iter().map(|x| x.ln()).collect()).collect();
    let mut log_b = Vec::with_capacity(len);
    for (t, &x) in obs.iter().enumerate() {
        if !x.is_finite() {
            return Err(HmmError::NonFiniteObservation { t });
        }
        log_b.push(state_log_likelihoods(x, params));
    }

    let mut log_alpha = vec![vec![0.0; n]; len];
    let mut scratch = vec![0.0; n];
    for i in 0..n {
        log_alpha[0][i] = params.initial[i].ln() + log_b[0][i];
    }
    if log_sum_exp(&log_alpha[0]) == f64::NEG_INFINITY {
        return Err(HmmError::ZeroLikelihood { t: 0 });
    }
    for t in 1..len {
        for j in 0..n {
            for i in 0..n {
                scratch[i] = log_alpha[t - 1][i] + log_a[i][j];
            }
            log_alpha[t][j] = log_sum_exp(&scratch) + log_b[t][j];
        }
        if log_sum_exp(&log_alpha[t]) == f64::NEG_INFINITY {
            return Err(HmmError::ZeroLikelihood { t });
        }
    }
    let log_likelihood = log_sum_exp(&log_alpha[len - 1]);

    let mut log_beta = vec![vec![0.0; n]; len];
    for t in (0..len - 1).rev() {
        for i in 0..n {
            for j in 0..n {
                scratch[j] = log_a[i][j] + log_b[t + 1][j] + log_beta[t + 1][j];
            }
            log_beta[t][i] = log_sum_exp(&scratch);
        }
    }

    let mut gamma = vec![vec![0.0; n]; len];
    for t in 0..len {
        for i in 0..n {
            scratch[i] = log_alpha[t][i] + log_beta[t][i];
        }
        let z = log_sum_exp(&scratch);
        for i in 0..n {
            gamma[t][i] = (scratch[i] - z).exp();
        }
    }

    let mut xi = vec![vec![vec![0.0; n]; n]; len.saturating_sub(1)];
    let mut pair = vec![0.0; n * n];
    for t in 0..len.saturating_sub(1) {
        for i in 0..n {
            for j in 0..n {
                pair[i * n + j] = log_alpha[t][i] + log_a[i][j] + log_b[t + 1][j] + log_beta[t + 1][j];
            }
        }
        let z = log_sum_exp(&pair);
        for i in 0..n {
            for j in 0..n {
                xi[t][i][j] = (pair[i * n + j] - z).exp();
            }
        }
    }

    Ok(EStepResult { log_alpha, log_beta, gamma, xi, log_likelihood })
}

/// Result of one EM iteration. `log_likelihood` belongs to the input
/// parameters (the E-step model).
#[derive(Debug, Clone)]
pub struct EmStepOutcome {
    pub params: HmmParams,
    pub log_likelihood: f64,
    pub starved_states: Vec<usize>,
}

/// Posterior mass below which a state is considered starved.
pub const STARVATION_MASS: f64 = 1e-8;

pub fn em_step(obs_set: &[Vec<f64>], params: &HmmParams, variance_floor: f64) -> Result<EmStepOutcome> {
    if obs_set.is_empty() {
        return Err(HmmError::InvalidInput("no observation sequences".into()));
    }
    if let Some(k) = obs_set.iter().position(|s| s.len() < 2) {
        return Err(HmmError::InvalidInput(format!("sequence {k} is shorter than 2")));
    }
    params.validate()?;
    let n = params.n_states;
    let posteriors: Vec<EStepResult> =
        obs_set.par_iter().map(|s| forward_backward(s, params)).collect::<Result<Vec<_>>>()?;

    let mut ll = 0.0;
    let mut occ = vec![0.0; n];
    let mut occ_from = vec![0.0; n];
    let mut trans = vec![vec![0.0; n]; n];
    let mut sum_x = vec![0.0; n];
    let mut first = vec![0.0; n];
    for (seq, post) in obs_set.iter().zip(&posteriors) {
        ll += post.log_likelihood;
        for i in 0..n {
            first[i] += post.gamma[0][i];
        }
        for (t, &x) in seq.iter().enumerate() {
            for i in 0..n {
                let g = post.gamma[t][i];
                occ[i] += g;
                sum_x[i] += g * x;
                if t + 1 < seq.len() {
                    occ_from[i] += g;
                }
            }
        }
        for xt in &post.xi {
            for i in 0..n {
                for j in 0..n {
                    trans[i][j] += xt[i][j];
                }
            }
        }
    }

    let mut means = params.means.clone();
    let mut starved = Vec::new();
    for i in 0..n {
        if occ[i] > STARVATION_MASS {
            means[i] = sum_x[i] / occ[i];
        } else {
            starved.push(i);
        }
    }
    let mut sum_sq = vec![0.0; n];
    for (seq, post) in obs_set.iter().zip(&posteriors) {
        for (t, &x) in seq.iter().enumerate() {
            for i in 0..n {
                let d = x - means[i];
                sum_sq[i] += post.gamma[t][i] * d * d;
            }
        }
    }
    let mut variances = params.variances.clone();
    for i in 0..n {
        variances[i] = if occ[i] > STARVATION_MASS { sum_sq[i] / occ[i] } else { params.variances[i] };
        variances[i] = variances[i].max(variance_floor);
    }

    let mut transitions = params.transitions.clone();
    for i in 0..n {
        if occ_from[i] > STARVATION_MASS {
            let row_sum: f64 = trans[i].iter().sum();
            transitions[i] = trans[i].iter().map(|&x| x / row_sum).collect();
        }
    }
    let k = obs_set.len() as f64;
    let mut initial: Vec<f64> = first.iter().map(|&x| x / k).collect();
    let s: f64 = initial.iter().sum();
    initial.iter_mut().for_each(|x| *x /= s);

    let stationary = stationary_distribution(&transitions)?;
    let mut next = HmmParams { n_states: n, means, variances, transitions, initial, stationary };
    let order = next.sort_by_mean();
    let starved_states = starved.iter().map(|&old| order.iter().position(|&o| o == old).unwrap()).collect();
    next.validate()?;
    Ok(EmStepOutcome { params: next, log_likelihood: ll, starved_states })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum EmInit {
    /// Equal-mass bins of the sorted pooled data.
    Quantile,
    Explicit(HmmParams),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmStop {
    pub max_iters: usize,
    /// Relative change in log-likelihood that ends training.
    pub ll_tol: f64,
}

impl Default for EmStop {
    fn default() -> Self {
        EmStop { max_iters: 500, ll_tol: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    /// Log-likelihood of each successive iterate, starting with the initial model.
    pub log_likelihood_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub variance_floor: f64,
    pub n_sequences: usize,
    pub n_observations: usize,
    pub starvation_events: usize,
}

/// Floor applied to every variance: 1e-6 of the pooled data variance.
pub fn variance_floor(obs_set: &[Vec<f64>]) -> f64 {
    let all: Vec<f64> = obs_set.iter().flatten().copied().collect();
    let (_, var) = mean_var(&all);
    if var > 0.0 {
        1e-6 * var
    } else {
        1e-12
    }
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var)
}

/// Deterministic quantile initialization.
pub fn quantile_init(obs_set: &[Vec<f64>], n_states: usize, floor: f64) -> Result<HmmParams> {
    let mut all: Vec<f64> = obs_set.iter().flatten().copied().collect();
    if all.len() < n_states {
        return Err(HmmError::InvalidInput("fewer observations than states".into()));
    }
    all.sort_by(f64::total_cmp);
    let len = all.len();
    let mut means = Vec::with_capacity(n_states);
    let mut variances = Vec::with_capacity(n_states);
    for k in 0..n_states {
        let bin = &all[k * len / n_states..(k + 1) * len / n_states];
        let (m, v) = mean_var(bin);
        means.push(m);
        variances.push(v.max(floor));
    }
    let u = 1.0 / n_states as f64;
    let transitions =
        (0..n_states).map(|i| (0..n_states).map(|j| if i == j { 0.9 + 0.1 * u } else { 0.1 * u }).collect()).collect();
    HmmParams::new(means, variances, transitions, vec![u; n_states])
}

pub fn em_train(
    obs_set: &[Vec<f64>],
    n_states: usize,
    init: &EmInit,
    stop: EmStop,
) -> Result<(HmmParams, TrainingReport)> {
    if n_states == 0 {
        return Err(HmmError::InvalidInput("n_states must be at least 1".into()));
    }
    let n_obs: usize = obs_set.iter().map(Vec::len).sum();
    if n_obs < 10 * n_states {
        return Err(HmmError::InvalidInput(format!(
            "{n_obs} observations is fewer than 10 per state for {n_states} states"
        )));
    }
    let floor = variance_floor(obs_set);
    let mut params = match init {
        EmInit::Quantile => quantile_init(obs_set, n_states, floor)?,
        EmInit::Explicit(p) => {
            if p.n_states != n_states {
                return Err(HmmError::InvalidInput("explicit init has the wrong state count".into()));
            }
            let mut p = p.clone();
            p.sort_by_mean();
            p.validate()?;
            p
        }
    };

    let mut trace = Vec::new();
    let mut converged = false;
    let mut starvation_events = 0;
    let mut iterations = 0;
    while iterations < stop.max_iters {
        let out = em_step(obs_set, &params, floor)?;
        if !out.log_likelihood.is_finite() {
            return Err(HmmError::NonFiniteLikelihood { iteration: iterations });
        }
        starvation_events += out.starved_states.len();
        trace.push(out.log_likelihood);
        params = out.params;
        iterations += 1;
        if trace.len() >= 2 {
            let (prev, cur) = (trace[trace.len() - 2], trace[trace.len() - 1]);
            if (cur - prev).abs() <= stop.ll_tol * cur.abs() {
                converged = true;
                break;
            }
        }
    }
    trace.push(total_log_likelihood(obs_set, &params)?);
    let report = TrainingReport {
        log_likelihood_trace: trace,
        iterations,
        converged,
        variance_floor: floor,
        n_sequences: obs_set.len(),
        n_observations: n_obs,
        starvation_events,
    };
    Ok((params, report))
}

pub fn total_log_likelihood(obs_set: &[Vec<f64>], params: &HmmParams) -> Result<f64> {
    let lls = obs_set
        .par_iter()
        .map(|s| forward_backward(s, params).map(|r| r.log_likelihood))
        .collect::<Result<Vec<f64>>>()?;
    Ok(lls.iter().sum())
}

/// Solves the balance equation of a row-stochastic matrix.
pub fn stationary_distribution(a: &[Vec<f64>]) -> Result<Vec<f64>> {
    for (i, row) in a.iter().enumerate() {
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > 1e-9 || row.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
            return Err(HmmError::InvalidParams(format!("transition row {i} is not a distribution")));
        }
    }
    Ok(linalg::stationary_rows(a)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub format: String,
    pub version: u32,
    pub params: HmmParams,
    #[serde(default)]
    pub metadata: serde_json::Value,
}

impl ModelDocument {
    pub fn new(params: HmmParams, metadata: serde_json::Value) -> Self {
        ModelDocument { format: MODEL_FORMAT.into(), version: MODEL_VERSION, params, metadata }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelDocument = serde_json::from_str(text).map_err(|e| HmmError::Format(e.to_string()))?;
        if doc.format != MODEL_FORMAT {
            return Err(HmmError::Format(format!("unexpected format tag {:?}", doc.format)));
        }
        if doc.version != MODEL_VERSION {
            return Err(HmmError::Format(format!("unsupported model version {}", doc.version)));
        }
        doc.params.validate()?;
        Ok(doc)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        ModelDocument::from_json(&std::fs::read_to_string(path)?)
    }
}
