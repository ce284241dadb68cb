//! Composite MDP over (solar, channel, battery) states and its discounted
//! value-iteration solver.
//!
//! States are indexed `(z * N_C + x) * N_B + n`. Actions are a power level
//! `w` (in energy quanta) and a modulation index `m` into
//! [`RadioConfig::modulations`].

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel_model::{ChannelConfig, ChannelFsmc};
use crate::energy_model::EnergyQuantaPmf;
use crate::solar_hmm::HmmParams;

pub const POLICY_FORMAT: &str = "harvest-policy";
pub const VALUE_FORMAT: &str = "harvest-value";
pub const EXPORT_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MdpError {
    #[error("invalid radio config: {0}")]
    InvalidRadio(String),
    #[error("invalid solver config: {0}")]
    InvalidSolver(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("action w={w} is infeasible at battery state {n}")]
    Infeasible { w: usize, n: usize },
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("unknown modulation {0:?}")]
    UnknownModulation(String),
}

pub type Result<T> = std::result::Result<T, MdpError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Modulation {
    pub name: String,
    /// χ_m, bits per symbol.
    pub bits_per_symbol: u32,
    pub alpha: f64,
    pub beta: f64,
}

impl Modulation {
    pub fn qpsk() -> Self {
        Modulation { name: "qpsk".into(), bits_per_symbol: 2, alpha: 1.0, beta: 2.0 }
    }

    pub fn psk8() -> Self {
        let s = (std::f64::consts::PI / 8.0).sin();
        Modulation { name: "8psk".into(), bits_per_symbol: 3, alpha: 2.0 / 3.0, beta: 2.0 * s * s }
    }

    pub fn qam16() -> Self {
        Modulation { name: "16qam".into(), bits_per_symbol: 4, alpha: 3.0 / 4.0, beta: 3.0 / 15.0 }
    }

    pub fn standard_set() -> Vec<Modulation> {
        vec![Modulation::qpsk(), Modulation::psk8(), Modulation::qam16()]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadioConfig {
    /// R_S, symbols per second.
    pub symbol_rate: f64,
    /// L_S, symbols per packet.
    pub packet_symbols: f64,
    pub modulations: Vec<Modulation>,
    /// γ_U = P_U γ_0 / N_0, linear.
    pub snr_unit: f64,
    /// T_L in seconds.
    pub period_s: f64,
}

impl RadioConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(MdpError::InvalidRadio(m));
        if !(self.symbol_rate > 0.0) || !(self.packet_symbols > 0.0) || !(self.period_s > 0.0) {
            return bad("symbol_rate, packet_symbols and period_s must be positive".into());
        }
        if !(self.snr_unit >= 0.0) || !self.snr_unit.is_finite() {
            return bad("snr_unit must be finite and non-negative".into());
        }
        if self.modulations.is_empty() {
            return bad("at least one modulation is required".into());
        }
        for m in &self.modulations {
            if m.bits_per_symbol < 1 || !(m.alpha > 0.0) || !(m.beta > 0.0) {
                return bad(format!("modulation {} has invalid constants", m.name));
            }
        }
        self.packets_per_period()?;
        Ok(())
    }

    /// T_P = L_S / R_S.
    pub fn packet_duration(&self) -> f64 {
        self.packet_symbols / self.symbol_rate
    }

    /// D = T_L / T_P, required to be a positive integer.
    pub fn packets_per_period(&self) -> Result<u64> {
        let d = self.period_s / self.packet_duration();
        let r = d.round();
        if r < 1.0 || (d - r).abs() > 1e-9 * r {
            return Err(MdpError::InvalidRadio(format!("T_L/T_P = {d} is not a positive integer")));
        }
        Ok(r as u64)
    }

    pub fn modulation_index(&self, name: &str) -> Result<usize> {
        let key = name.to_ascii_lowercase();
        self.modulations
            .iter()
            .position(|m| m.name.eq_ignore_ascii_case(&key))
            .ok_or_else(|| MdpError::UnknownModulation(name.into()))
    }

    /// χ_m R_S, the error-free bit rate.
    pub fn peak_rate(&self, m: usize) -> f64 {
        self.modulations[m].bits_per_symbol as f64 * self.symbol_rate
    }
}

/// Closed-form BER bound η averaged over channel state `i`, clamped to
/// [0, 1]. The flag reports whether clamping occurred.
pub fn ber_bound_flagged(i: usize, w: usize, m: usize, radio: &RadioConfig, channel: &ChannelConfig) -> (f64, bool) {
    let md = &radio.modulations[m];
    let k = w as f64 * md.beta * radio.snr_unit + 2.0;
    let c = k / (2.0 * channel.gamma0);
    let lo = channel.threshold(i);
    let hi = channel.threshold(i + 1);
    let num = (-c * lo).exp() - (-c * hi).exp();
    let eta = md.alpha / k * num / channel.state_probability(i);
    if eta > 1.0 {
        (1.0, true)
    } else {
        (eta.max(0.0), false)
    }
}

pub fn ber_bound(i: usize, w: usize, m: usize, radio: &RadioConfig, channel: &ChannelConfig) -> f64 {
    ber_bound_flagged(i, w, m, radio, channel).0
}

/// Net bit rate χ_m R_S (1 − η)^{χ_m L_S} for a given bit error bound.
pub fn reward_from_ber(eta: f64, m: usize, radio: &RadioConfig) -> f64 {
    let chi = radio.modulations[m].bits_per_symbol as f64;
    let bits = chi * radio.packet_symbols;
    bits / radio.packet_duration() * (bits * (-eta).ln_1p()).exp()
}

/// Reward of action (w, m) at channel state i and battery state n, bits/s.
pub fn reward(i: usize, n: usize, w: usize, m: usize, radio: &RadioConfig, channel: &ChannelConfig) -> Result<f64> {
    if w > n {
        return Err(MdpError::Infeasible { w, n });
    }
    if w == 0 {
        return Ok(0.0);
    }
    Ok(reward_from_ber(ber_bound(i, w, m, radio, channel), m, radio))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MdpDims {
    pub n_h: usize,
    pub n_c: usize,
    pub n_b: usize,
}

impl MdpDims {
    pub fn n_states(&self) -> usize {
        self.n_h * self.n_c * self.n_b
    }

    pub fn index(&self, z: usize, x: usize, n: usize) -> usize {
        (z * self.n_c + x) * self.n_b + n
    }

    pub fn unpack(&self, s: usize) -> (usize, usize, usize) {
        let n = s % self.n_b;
        let zx = s / self.n_b;
        (zx / self.n_c, zx % self.n_c, n)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicyClass {
    /// Power levels 0..N_B with every modulation.
    Composite,
    /// Transmit one quantum with a single modulation, or stay silent.
    OnOff { modulation: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Action {
    pub w: usize,
    pub m: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MdpModel {
    pub dims: MdpDims,
    pub class: PolicyClass,
    /// N_P.
    pub n_power: usize,
    /// Modulation indices available to the policy class.
    pub modulations: Vec<usize>,
    pub n_modulations_total: usize,
    pub solar_trans: Vec<Vec<f64>>,
    pub channel_trans: Vec<Vec<f64>>,
    /// `[j][n][w][k]` flattened.
    battery_trans: Vec<f64>,
    /// `[x][w][m]` flattened over all modulations.
    reward: Vec<f64>,
}

impl MdpModel {
    /// Assembles a model from explicit tables. `battery[j][n][w]` is a
    /// distribution over next battery states; `reward[x][w][m]` must vanish
    /// at w = 0.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        dims: MdpDims,
        class: PolicyClass,
        n_power: usize,
        modulations: Vec<usize>,
        n_modulations_total: usize,
        solar_trans: Vec<Vec<f64>>,
        channel_trans: Vec<Vec<f64>>,
        battery: Vec<Vec<Vec<Vec<f64>>>>,
        reward: Vec<Vec<Vec<f64>>>,
    ) -> Result<Self> {
        let dim = |m: String| Err(MdpError::Dimension(m));
        let MdpDims { n_h, n_c, n_b } = dims;
        if n_h == 0 || n_c == 0 || n_b == 0 || n_power == 0 || modulations.is_empty() {
            return dim("every dimension must be at least 1".into());
        }
        if modulations.iter().any(|&m| m >= n_modulations_total) {
            return dim("modulation index out of range".into());
        }
        if solar_trans.len() != n_h || solar_trans.iter().any(|r| r.len() != n_h) {
            return dim(format!("solar transitions must be {n_h}x{n_h}"));
        }
        if channel_trans.len() != n_c || channel_trans.iter().any(|r| r.len() != n_c) {
            return dim(format!("channel transitions must be {n_c}x{n_c}"));
        }
        if battery.len() != n_h
            || battery
                .iter()
                .any(|b| b.len() != n_b || b.iter().any(|bn| bn.len() != n_power || bn.iter().any(|r| r.len() != n_b)))
        {
            return dim("battery transitions must be [N_H][N_B][N_P][N_B]".into());
        }
        if reward.len() != n_c
            || reward.iter().any(|r| r.len() != n_power || r.iter().any(|rw| rw.len() != n_modulations_total))
        {
            return dim("reward must be [N_C][N_P][N_M]".into());
        }
        let battery_trans: Vec<f64> = battery.into_iter().flatten().flatten().flatten().collect();
        let reward: Vec<f64> = reward.into_iter().flatten().flatten().collect();
        let model = MdpModel {
            dims,
            class,
            n_power,
            modulations,
            n_modulations_total,
            solar_trans,
            channel_trans,
            battery_trans,
            reward,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(MdpError::InvalidModel(m));
        let is_dist = |row: &[f64]| {
            row.iter().all(|&p| (0.0..=1.0 + 1e-12).contains(&p)) && (row.iter().sum::<f64>() - 1.0).abs() <= 1e-9
        };
        for (i, r) in self.solar_trans.iter().enumerate() {
            if !is_dist(r) {
                return bad(format!("solar transition row {i} is not a distribution"));
            }
        }
        for (i, r) in self.channel_trans.iter().enumerate() {
            if !is_dist(r) {
                return bad(format!("channel transition row {i} is not a distribution"));
            }
        }
        for j in 0..self.dims.n_h {
            for n in 0..self.dims.n_b {
                for w in 0..=self.max_power(n) {
                    if !is_dist(self.battery_row(j, n, w)) {
                        return bad(format!("battery row (j={j}, n={n}, w={w}) is not a distribution"));
                    }
                }
            }
        }
        for x in 0..self.dims.n_c {
            for m in 0..self.n_modulations_total {
                if self.reward(x, 0, m) != 0.0 {
                    return bad("reward must be zero when w = 0".into());
                }
                for w in 1..self.n_power {
                    let r = self.reward(x, w, m);
                    if !(r >= 0.0 && r.is_finite()) {
                        return bad(format!("reward at (x={x}, w={w}, m={m}) is {r}"));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn n_states(&self) -> usize {
        self.dims.n_states()
    }

    /// Highest feasible power at battery state n.
    pub fn max_power(&self, n: usize) -> usize {
        n.min(self.n_power - 1)
    }

    pub fn battery_row(&self, j: usize, n: usize, w: usize) -> &[f64] {
        let nb = self.dims.n_b;
        let start = ((j * nb + n) * self.n_power + w) * nb;
        &self.battery_trans[start..start + nb]
    }

    pub fn reward(&self, x: usize, w: usize, m: usize) -> f64 {
        self.reward[(x * self.n_power + w) * self.n_modulations_total + m]
    }

    /// Feasible actions at battery state n in tie-breaking order: lowest
    /// power first, then lowest modulation. Silence appears once.
    pub fn actions(&self, n: usize) -> Vec<Action> {
        let mut out = vec![Action { w: 0, m: self.modulations[0] }];
        for w in 1..=self.max_power(n) {
            for &m in &self.modulations {
                out.push(Action { w, m });
            }
        }
        out
    }
}

/// Battery transition row for harvest PMF `pmf_row`, starting level n and
/// spend w. Mass that would exceed the top level is lumped into it.
pub fn battery_transition_row(pmf_row: &[f64], n: usize, w: usize, n_b: usize) -> Vec<f64> {
    let mut row = vec![0.0; n_b];
    let base = n - w;
    let top = n_b - 1;
    for k in base..top {
        row[k] = pmf_row.get(k - base).copied().unwrap_or(0.0);
    }
    row[top] = pmf_row.iter().skip(top - base).sum();
    row
}

pub fn build_mdp(
    hmm: &HmmParams,
    pmf: &EnergyQuantaPmf,
    fsmc: &ChannelFsmc,
    radio: &RadioConfig,
    channel: &ChannelConfig,
    n_b: usize,
    class: PolicyClass,
) -> Result<MdpModel> {
    radio.validate()?;
    if n_b < 1 {
        return Err(MdpError::Dimension("N_B must be at least 1".into()));
    }
    if pmf.n_states() != hmm.n_states {
        return Err(MdpError::Dimension("PMF and solar model disagree on the state count".into()));
    }
    if fsmc.n_states() != channel.n_states() {
        return Err(MdpError::Dimension("FSMC and channel config disagree on the state count".into()));
    }
    let dims = MdpDims { n_h: hmm.n_states, n_c: fsmc.n_states(), n_b };
    let (n_power, modulations) = match &class {
        PolicyClass::Composite => (n_b, (0..radio.modulations.len()).collect::<Vec<_>>()),
        PolicyClass::OnOff { modulation } => {
            if *modulation >= radio.modulations.len() {
                return Err(MdpError::Dimension("on-off modulation index out of range".into()));
            }
            (2.min(n_b), vec![*modulation])
        }
    };
    let battery =
        (0..dims.n_h)
            .map(|j| {
                (0..n_b)
                    .map(|n| {
                        (0..n_power)
                            .map(|w| {
                                if w <= n {
                                    battery_transition_row(&pmf.probs[j], n, w, n_b)
                                } else {
                                    unit_row(n_b, n)
                                }
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
    let n_mod = radio.modulations.len();
    let mut reward_tab = vec![vec![vec![0.0; n_mod]; n_power]; dims.n_c];
    for (x, rx) in reward_tab.iter_mut().enumerate() {
        for (w, rw) in rx.iter_mut().enumerate().skip(1) {
            for (m, slot) in rw.iter_mut().enumerate() {
                *slot = reward(x, w, w, m, radio, channel)?;
            }
        }
    }
    MdpModel::from_parts(
        dims,
        class,
        n_power,
        modulations,
        n_mod,
        hmm.transitions.clone(),
        fsmc.transitions.clone(),
        battery,
        reward_tab,
    )
}

/// Placeholder row for infeasible (n, w) pairs; never read by the solver.
fn unit_row(n_b: usize, n: usize) -> Vec<f64> {
    let mut r = vec![0.0; n_b];
    r[n] = 1.0;
    r
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// λ in [0, 1).
    pub discount: f64,
    pub epsilon: f64,
    pub max_sweeps: usize,
}

impl SolverConfig {
    pub fn new(discount: f64) -> Self {
        SolverConfig { discount, epsilon: 1e-6, max_sweeps: 100_000 }
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn with_max_sweeps(mut self, max_sweeps: usize) -> Self {
        self.max_sweeps = max_sweeps;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.discount) {
            return Err(MdpError::InvalidSolver(format!("discount {} must lie in [0,1)", self.discount)));
        }
        if !(self.epsilon > 0.0) {
            return Err(MdpError::InvalidSolver("epsilon must be positive".into()));
        }
        if self.max_sweeps == 0 {
            return Err(MdpError::InvalidSolver("max_sweeps must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueFunction {
    pub dims: MdpDims,
    pub v: Vec<f64>,
    pub residual: f64,
    pub sweeps: usize,
    pub converged: bool,
    pub discount: f64,
    /// Sup-norm change of each sweep.
    pub residual_trace: Vec<f64>,
}

impl ValueFunction {
    pub fn at(&self, z: usize, x: usize, n: usize) -> f64 {
        self.v[self.dims.index(z, x, n)]
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("# {VALUE_FORMAT} v{EXPORT_VERSION}\nz,x,n,value\n");
        for s in 0..self.dims.n_states() {
            let (z, x, n) = self.dims.unpack(s);
            out.push_str(&format!("{z},{x},{n},{}\n", self.v[s]));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub dims: MdpDims,
    pub class: PolicyClass,
    pub actions: Vec<Action>,
    /// κ[z][x] when every (z, x) row has the on-off threshold shape.
    pub thresholds: Option<Vec<Vec<usize>>>,
}

impl Policy {
    pub fn action(&self, z: usize, x: usize, n: usize) -> Action {
        self.actions[self.dims.index(z, x, n)]
    }

    /// Builds an on-off policy from thresholds: silent for n ≤ κ, on above.
    pub fn from_thresholds(dims: MdpDims, modulation: usize, kappa: &[Vec<usize>]) -> Self {
        let mut actions = Vec::with_capacity(dims.n_states());
        for z in 0..dims.n_h {
            for x in 0..dims.n_c {
                for n in 0..dims.n_b {
                    let w = usize::from(n > kappa[z][x]);
                    actions.push(Action { w, m: modulation });
                }
            }
        }
        let mut p = Policy { dims, class: PolicyClass::OnOff { modulation }, actions, thresholds: None };
        p.thresholds = p.derive_thresholds();
        p
    }

    /// κ per (z, x) if every row is off up to κ and on above it.
    pub fn derive_thresholds(&self) -> Option<Vec<Vec<usize>>> {
        let d = self.dims;
        let mut out = vec![vec![0; d.n_c]; d.n_h];
        for z in 0..d.n_h {
            for x in 0..d.n_c {
                let ws: Vec<usize> = (0..d.n_b).map(|n| self.action(z, x, n).w).collect();
                if ws.iter().any(|&w| w > 1) {
                    return None;
                }
                let kappa = ws.iter().rposition(|&w| w == 0).unwrap_or(0);
                if ws[..=kappa].iter().any(|&w| w != 0) || ws[kappa + 1..].iter().any(|&w| w != 1) {
                    return None;
                }
                out[z][x] = kappa;
            }
        }
        Some(out)
    }

    pub fn is_feasible(&self, n_power: usize) -> bool {
        (0..self.dims.n_states()).all(|s| {
            let (_, _, n) = self.dims.unpack(s);
            self.actions[s].w <= n.min(n_power - 1)
        })
    }

    pub fn to_csv(&self, modulation_names: &[String]) -> String {
        let mut out = format!("# {POLICY_FORMAT} v{EXPORT_VERSION}\nz,x,n,w,m,modulation\n");
        for s in 0..self.dims.n_states() {
            let (z, x, n) = self.dims.unpack(s);
            let a = self.actions[s];
            let name = modulation_names.get(a.m).map(String::as_str).unwrap_or("?");
            out.push_str(&format!("{z},{x},{n},{},{},{name}\n", a.w, a.m));
        }
        out
    }
}

/// Versioned JSON envelope for policy and value exports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionDocument {
    pub format: String,
    pub version: u32,
    pub modulation_names: Vec<String>,
    pub solver: SolverConfig,
    pub policy: Policy,
    pub value: ValueFunction,
    #[serde(default)]
    pub config: serde_json::Value,
}

impl SolutionDocument {
    pub fn new(
        policy: Policy,
        value: ValueFunction,
        solver: SolverConfig,
        radio: &RadioConfig,
        config: serde_json::Value,
    ) -> Self {
        SolutionDocument {
            format: POLICY_FORMAT.into(),
            version: EXPORT_VERSION,
            modulation_names: radio.modulations.iter().map(|m| m.name.clone()).collect(),
            solver,
            policy,
            value,
            config,
        }
    }

    pub fn from_json(text: &str) -> std::result::Result<Self, String> {
        let doc: SolutionDocument = serde_json::from_str(text).map_err(|e| e.to_string())?;
        if doc.format != POLICY_FORMAT || doc.version != EXPORT_VERSION {
            return Err(format!("unsupported policy document {} v{}", doc.format, doc.version));
        }
        Ok(doc)
    }
}

/// Expected next-period value `W[z][x][k] = Σ_j A[z][j] Σ_l T[x][l] V[j][l][k]`,
/// flattened as `(z * N_C + x) * N_B + k`.
pub fn continuation(model: &MdpModel, v: &[f64]) -> Vec<f64> {
    let MdpDims { n_h, n_c, n_b } = model.dims;
    let mut u = vec![0.0; n_h * n_c * n_b];
    for j in 0..n_h {
        for x in 0..n_c {
            let out = &mut u[(j * n_c + x) * n_b..(j * n_c + x + 1) * n_b];
            for (l, &t) in model.channel_trans[x].iter().enumerate() {
                if t == 0.0 {
                    continue;
                }
                let src = &v[(j * n_c + l) * n_b..(j * n_c + l + 1) * n_b];
                for k in 0..n_b {
                    out[k] += t * src[k];
                }
            }
        }
    }
    let mut w = vec![0.0; n_h * n_c * n_b];
    for z in 0..n_h {
        for (j, &a) in model.solar_trans[z].iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            for x in 0..n_c {
                let dst = (z * n_c + x) * n_b;
                let src = (j * n_c + x) * n_b;
                for k in 0..n_b {
                    w[dst + k] += a * u[src + k];
                }
            }
        }
    }
    w
}

/// Action values at state (z, x, n) given a continuation table.
pub fn q_value(model: &MdpModel, cont: &[f64], discount: f64, z: usize, x: usize, n: usize, a: Action) -> f64 {
    let n_b = model.dims.n_b;
    let wrow = &cont[(z * model.dims.n_c + x) * n_b..(z * model.dims.n_c + x + 1) * n_b];
    let brow = model.battery_row(z, n, a.w);
    let future: f64 = brow.iter().zip(wrow).map(|(p, w)| p * w).sum();
    model.reward(x, a.w, a.m) + discount * future
}

/// One Bellman backup: new values and the greedy actions.
pub fn backup(model: &MdpModel, v: &[f64], discount: f64) -> (Vec<f64>, Vec<Action>) {
    let cont = continuation(model, v);
    let d = model.dims;
    let mut out = vec![0.0; d.n_states()];
    let mut act = Vec::with_capacity(d.n_states());
    let actions_by_n: Vec<Vec<Action>> = (0..d.n_b).map(|n| model.actions(n)).collect();
    for s in 0..d.n_states() {
        let (z, x, n) = d.unpack(s);
        let mut best = f64::NEG_INFINITY;
        let mut best_a = actions_by_n[n][0];
        for &a in &actions_by_n[n] {
            let q = q_value(model, &cont, discount, z, x, n, a);
            if q > best {
                best = q;
                best_a = a;
            }
        }
        out[s] = best;
        act.push(best_a);
    }
    (out, act)
}

pub fn bellman_residual(model: &MdpModel, v: &[f64], discount: f64) -> f64 {
    let (tv, _) = backup(model, v, discount);
    tv.iter().zip(v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

pub fn value_iteration(model: &MdpModel, cfg: &SolverConfig) -> Result<(ValueFunction, Policy)> {
    cfg.validate()?;
    let mut v = vec![0.0; model.n_states()];
    let mut trace = Vec::new();
    let mut actions;
    let mut converged = false;
    loop {
        let (next, act) = backup(model, &v, cfg.discount);
        let residual = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        trace.push(residual);
        v = next;
        actions = act;
        if residual <= cfg.epsilon {
            converged = true;
            break;
        }
        if trace.len() >= cfg.max_sweeps {
            break;
        }
    }
    let residual = *trace.last().unwrap();
    let value = ValueFunction {
        dims: model.dims,
        v,
        residual,
        sweeps: trace.len(),
        converged,
        discount: cfg.discount,
        residual_trace: trace,
    };
    let mut policy = Policy { dims: model.dims, class: model.class.clone(), actions, thresholds: None };
    if matches!(model.class, PolicyClass::OnOff { .. }) {
        policy.thresholds = policy.derive_thresholds();
    }
    Ok((value, policy))
}
