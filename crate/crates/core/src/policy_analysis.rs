//! Structural checks and closed-form performance of solved on-off policies:
//! battery monotonicity of V, threshold shape, energy-deficiency regions,
//! the stationary law of the induced chain, its expected net bit rate and
//! the harvest-limited upper bound.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel_model::ChannelConfig;
use crate::energy_model::EnergyQuantaPmf;
use crate::linalg::{self, BalanceError};
use crate::mdp_core::{
    ber_bound, continuation, q_value, reward_from_ber, Action, MdpDims, MdpModel, Policy, PolicyClass, RadioConfig,
    ValueFunction,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("analysis requires an on-off policy")]
    NotOnOff,
    #[error("policy, value and model dimensions disagree")]
    Dimension,
    #[error("harvest PMF of solar state {state} puts {mass:e} outside {{0, 1}}")]
    Support { state: usize, mass: f64 },
    #[error("threshold {kappa} out of range for {n_b} battery states")]
    Kappa { kappa: usize, n_b: usize },
    #[error("induced chain: {0}")]
    Balance(#[from] BalanceError),
}

pub type Result<T> = std::result::Result<T, AnalysisError>;

/// Relative tolerance separating genuine sign changes of Θ from round-off.
pub const THETA_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeficiencyRegion {
    pub kappa: usize,
    /// φ(z,x,0), the lower bound; absent for κ = 0.
    pub phi_lower: Option<f64>,
    /// φ(z,x,1), the upper bound; absent for κ = N_B − 1.
    pub phi_upper: Option<f64>,
    /// The region clipped to [0, 1].
    pub lower: f64,
    pub upper: f64,
    pub r1: f64,
}

impl DeficiencyRegion {
    pub fn contains(&self, p: f64) -> bool {
        self.lower <= p && p <= self.upper
    }

    pub fn is_empty(&self) -> bool {
        self.lower > self.upper
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdAnalysis {
    pub dims: MdpDims,
    /// κ[z][x]: highest battery level at which the policy stays silent.
    pub thresholds: Vec<Vec<usize>>,
    /// Θ[z][x][y] = Q(on) − Q(off); `None` at y = 0 where only silence is feasible.
    pub theta: Vec<Vec<Vec<Option<f64>>>>,
    pub is_threshold: Vec<Vec<bool>>,
    /// Θ ≤ 0 up to κ and Θ ≥ 0 above it, up to round-off.
    pub theta_consistent: Vec<Vec<bool>>,
    /// Θ(κ) < 0 ≤ Θ(κ+1), using only the right inequality when κ = 0.
    pub strict_bracket: Vec<Vec<bool>>,
    /// V(z,x,y−1) ≤ V(z,x,y) for all y.
    pub value_monotone: Vec<Vec<bool>>,
    pub tolerance: f64,
    pub deficiency_regions: Option<Vec<Vec<DeficiencyRegion>>>,
}

impl ThresholdAnalysis {
    pub fn all_threshold(&self) -> bool {
        self.is_threshold.iter().flatten().all(|&b| b)
    }

    pub fn all_monotone(&self) -> bool {
        self.value_monotone.iter().flatten().all(|&b| b)
    }
}

fn onoff_modulation(policy: &Policy) -> Result<usize> {
    match policy.class {
        PolicyClass::OnOff { modulation } => Ok(modulation),
        PolicyClass::Composite => Err(AnalysisError::NotOnOff),
    }
}

pub fn check_threshold(policy: &Policy, v: &ValueFunction, model: &MdpModel) -> Result<ThresholdAnalysis> {
    let m = onoff_modulation(policy)?;
    let d = model.dims;
    if policy.dims != d || v.dims != d {
        return Err(AnalysisError::Dimension);
    }
    let scale = v.v.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    let tol = THETA_TOL * (1.0 + scale);
    let cont = continuation(model, &v.v);
    let mut out = ThresholdAnalysis {
        dims: d,
        thresholds: vec![vec![0; d.n_c]; d.n_h],
        theta: vec![vec![vec![None; d.n_b]; d.n_c]; d.n_h],
        is_threshold: vec![vec![false; d.n_c]; d.n_h],
        theta_consistent: vec![vec![false; d.n_c]; d.n_h],
        strict_bracket: vec![vec![false; d.n_c]; d.n_h],
        value_monotone: vec![vec![false; d.n_c]; d.n_h],
        tolerance: tol,
        deficiency_regions: None,
    };
    for z in 0..d.n_h {
        for x in 0..d.n_c {
            let ws: Vec<usize> = (0..d.n_b).map(|n| policy.action(z, x, n).w).collect();
            let kappa = ws.iter().rposition(|&w| w == 0).unwrap_or(0);
            let shape = ws[0] == 0
                && ws.iter().all(|&w| w <= 1)
                && ws[..=kappa].iter().all(|&w| w == 0)
                && ws[kappa + 1..].iter().all(|&w| w == 1);

            let mut theta = vec![None; d.n_b];
            if model.n_power > 1 {
                for (y, slot) in theta.iter_mut().enumerate().skip(1) {
                    let on = q_value(model, &cont, v.discount, z, x, y, Action { w: 1, m });
                    let off = q_value(model, &cont, v.discount, z, x, y, Action { w: 0, m });
                    *slot = Some(on - off);
                }
            }
            let vals: Vec<f64> = theta.iter().flatten().copied().collect();
            // Signs with round-off ties mapped to 0; a single change means no
            // positive entry precedes a negative one.
            let signs: Vec<i8> = vals
                .iter()
                .map(|&t| {
                    if t > tol {
                        1
                    } else if t < -tol {
                        -1
                    } else {
                        0
                    }
                })
                .collect();
            let first_pos = signs.iter().position(|&s| s > 0);
            let single_change = match first_pos {
                Some(p) => signs[p..].iter().all(|&s| s >= 0),
                None => true,
            };
            let consistent = (1..d.n_b).all(|y| {
                let t = theta[y].unwrap_or(0.0);
                if y <= kappa {
                    t <= tol
                } else {
                    t >= -tol
                }
            });
            let strict = {
                let right = kappa + 1 >= d.n_b || theta[kappa + 1].map_or(true, |t| t >= 0.0);
                let left = kappa == 0 || theta[kappa].map_or(true, |t| t < 0.0);
                right && left
            };
            let monotone = (1..d.n_b).all(|y| v.at(z, x, y - 1) <= v.at(z, x, y) + tol);

            out.thresholds[z][x] = kappa;
            out.theta[z][x] = theta;
            out.is_threshold[z][x] = shape && single_change && consistent;
            out.theta_consistent[z][x] = consistent;
            out.strict_bracket[z][x] = strict;
            out.value_monotone[z][x] = monotone;
        }
    }
    Ok(out)
}

/// Ξ(z,x,y) = E[V(j,l,min(N_B−1,y+1)) − V(j,l,min(N_B−1,y))] over the
/// solar and channel transitions out of (z, x).
pub fn xi_difference(cont: &[f64], dims: MdpDims, z: usize, x: usize, y: usize) -> f64 {
    let top = dims.n_b - 1;
    let base = (z * dims.n_c + x) * dims.n_b;
    cont[base + (y + 1).min(top)] - cont[base + y.min(top)]
}

fn check_support(pmf: &EnergyQuantaPmf) -> Result<()> {
    for (j, row) in pmf.probs.iter().enumerate() {
        let mass: f64 = row.iter().skip(2).sum();
        if mass > 1e-9 {
            return Err(AnalysisError::Support { state: j, mass });
        }
    }
    Ok(())
}

/// Interval for P(Q = 0 | S_H = z) compatible with threshold κ at (z, x).
/// `r1` overrides the one-quantum reward R₁(x) of the model.
pub fn deficiency_region(
    z: usize,
    x: usize,
    kappa: usize,
    v: &ValueFunction,
    model: &MdpModel,
    pmf: &EnergyQuantaPmf,
    r1: Option<f64>,
) -> Result<DeficiencyRegion> {
    check_support(pmf)?;
    let d = model.dims;
    if kappa >= d.n_b {
        return Err(AnalysisError::Kappa { kappa, n_b: d.n_b });
    }
    if v.dims != d {
        return Err(AnalysisError::Dimension);
    }
    let m = model.modulations[0];
    let r1 = r1.unwrap_or_else(|| if model.n_power > 1 { model.reward(x, 1, m) } else { 0.0 });
    let cont = continuation(model, &v.v);
    let lambda = v.discount;
    let xi = |y: isize| -> f64 {
        if y < 0 {
            f64::NAN
        } else {
            xi_difference(&cont, d, z, x, y as usize)
        }
    };
    let phi = |n: isize| -> f64 {
        let k = kappa as isize;
        let num = r1 / lambda - xi(k + n);
        let den = xi(k + n - 1) - xi(k + n);
        num / den
    };
    let top = d.n_b - 1;
    let (phi_lower, phi_upper) = if d.n_b == 1 {
        (None, None)
    } else if kappa == 0 {
        (None, Some(phi(1)))
    } else if kappa == top {
        (Some(phi(0)), None)
    } else {
        (Some(phi(0)), Some(phi(1)))
    };
    let clip = |p: f64| if p.is_nan() { p } else { p.clamp(0.0, 1.0) };
    let lower = phi_lower.map_or(0.0, clip);
    let upper = phi_upper.map_or(1.0, clip);
    Ok(DeficiencyRegion { kappa, phi_lower, phi_upper, lower, upper, r1 })
}

/// Fills `analysis.deficiency_regions` at the policy's own thresholds.
pub fn attach_deficiency_regions(
    analysis: &mut ThresholdAnalysis,
    v: &ValueFunction,
    model: &MdpModel,
    pmf: &EnergyQuantaPmf,
) -> Result<()> {
    let d = model.dims;
    let mut regions = Vec::with_capacity(d.n_h);
    for z in 0..d.n_h {
        let mut row = Vec::with_capacity(d.n_c);
        for x in 0..d.n_c {
            row.push(deficiency_region(z, x, analysis.thresholds[z][x], v, model, pmf, None)?);
        }
        regions.push(row);
    }
    analysis.deficiency_regions = Some(regions);
    Ok(())
}

/// D_z: intersection of the per-channel regions of one solar state.
pub fn solar_state_region(regions: &[DeficiencyRegion]) -> (f64, f64) {
    regions.iter().fold((0.0f64, 1.0f64), |(lo, hi), r| (lo.max(r.lower), hi.min(r.upper)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationaryAnalysis {
    pub dims: MdpDims,
    /// ν over (z, x, n) in the model's state order.
    pub nu: Vec<f64>,
    /// Π_{j,i}[p][q]: probability of battery p after battery q.
    pub pi_matrices: Vec<Vec<Vec<Vec<f64>>>>,
    /// Φ[row][col] with column = source state.
    pub phi: Vec<Vec<f64>>,
    pub residual: f64,
}

impl StationaryAnalysis {
    pub fn at(&self, z: usize, x: usize, n: usize) -> f64 {
        self.nu[self.dims.index(z, x, n)]
    }

    /// Marginal over battery levels.
    pub fn battery_marginal(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dims.n_b];
        for (s, p) in self.nu.iter().enumerate() {
            out[s % self.dims.n_b] += p;
        }
        out
    }
}

/// Stationary law of the chain induced by a fixed policy.
pub fn stationary_under_policy(policy: &Policy, model: &MdpModel) -> Result<StationaryAnalysis> {
    let d = model.dims;
    if policy.dims != d {
        return Err(AnalysisError::Dimension);
    }
    let nb = d.n_b;
    let mut pi = vec![vec![vec![vec![0.0; nb]; nb]; d.n_c]; d.n_h];
    for (j, pj) in pi.iter_mut().enumerate() {
        for (i, pji) in pj.iter_mut().enumerate() {
            for q in 0..nb {
                let w = policy.action(j, i, q).w;
                let row = model.battery_row(j, q, w);
                for p in 0..nb {
                    pji[p][q] = row[p];
                }
            }
        }
    }
    let n = d.n_states();
    let mut phi = DMatrix::zeros(n, n);
    for j in 0..d.n_h {
        for i in 0..d.n_c {
            for z in 0..d.n_h {
                let a = model.solar_trans[j][z];
                if a == 0.0 {
                    continue;
                }
                for x in 0..d.n_c {
                    let t = model.channel_trans[i][x];
                    if t == 0.0 {
                        continue;
                    }
                    for q in 0..nb {
                        for p in 0..nb {
                            phi[(d.index(z, x, p), d.index(j, i, q))] = a * t * pi[j][i][p][q];
                        }
                    }
                }
            }
        }
    }
    let nu = linalg::stationary_columns(&phi)?;
    let residual = linalg::column_residual(&phi, &nu);
    let phi_rows = (0..n).map(|r| (0..n).map(|c| phi[(r, c)]).collect()).collect();
    Ok(StationaryAnalysis { dims: d, nu, pi_matrices: pi, phi: phi_rows, residual })
}

/// Long-run average reward of `policy` under ν, bits/s.
pub fn expected_net_bit_rate(nu: &StationaryAnalysis, policy: &Policy, model: &MdpModel) -> f64 {
    (0..model.n_states())
        .map(|s| {
            let a = policy.actions[s];
            let (_, x, _) = model.dims.unpack(s);
            nu.nu[s] * model.reward(x, a.w, a.m)
        })
        .sum()
}

/// min{q̄, 1} times the best-channel one-quantum rate of modulation `m`.
pub fn rate_upper_bound(q_bar: f64, radio: &RadioConfig, channel: &ChannelConfig, m: usize) -> f64 {
    let best = channel.n_states() - 1;
    q_bar.clamp(0.0, 1.0) * reward_from_ber(ber_bound(best, 1, m, radio, channel), m, radio)
}
