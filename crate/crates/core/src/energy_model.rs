//! Energy-quanta arrival model.
//!
//! Harvested energy per period is Gaussian in each solar state; the battery
//! counts it in quanta of `E_U = P_U * T_L`. Units: power μW, energy μJ,
//! irradiance μW/cm².

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use std::f64::consts::{PI, SQRT_2};
use thiserror::Error;

use crate::solar_hmm::HmmParams;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnergyError {
    #[error("invalid energy config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyConfig {
    /// Basic transmission power P_U in μW.
    pub p_unit: f64,
    /// Management period T_L in seconds.
    pub period_s: f64,
    /// Solar panel area Ω_S in cm².
    pub panel_area: f64,
    /// Conversion efficiency ϑ.
    pub efficiency: f64,
    /// PMF support is 0..=q_max; `None` picks the default from the model.
    #[serde(default)]
    pub q_max: Option<usize>,
}

impl EnergyConfig {
    pub fn validate(&self) -> Result<(), EnergyError> {
        let bad = |m: &str| Err(EnergyError::InvalidConfig(m.into()));
        if !(self.p_unit > 0.0 && self.p_unit.is_finite()) {
            return bad("p_unit must be positive");
        }
        if !(self.period_s > 0.0 && self.period_s.is_finite()) {
            return bad("period_s must be positive");
        }
        if !(self.panel_area > 0.0 && self.panel_area.is_finite()) {
            return bad("panel_area must be positive");
        }
        if !(self.efficiency > 0.0 && self.efficiency <= 1.0) {
            return bad("efficiency must lie in (0, 1]");
        }
        if self.q_max == Some(0) {
            return bad("q_max must be at least 1");
        }
        Ok(())
    }

    /// One energy quantum E_U in μJ.
    pub fn e_unit(&self) -> f64 {
        self.p_unit * self.period_s
    }

    /// Harvested energy (μJ) over one period at mean irradiance `x`.
    pub fn harvested_energy(&self, x: f64) -> f64 {
        x * self.panel_area * self.period_s * self.efficiency
    }

    /// Irradiance that harvests exactly `quanta` energy quanta per period.
    pub fn irradiance_for_quanta(&self, quanta: f64) -> f64 {
        quanta * self.e_unit() / (self.panel_area * self.period_s * self.efficiency)
    }

    pub fn default_q_max(&self, hmm: &HmmParams) -> usize {
        let scale = self.panel_area * self.period_s * self.efficiency / self.e_unit();
        let top = hmm.means.iter().map(|&m| m * scale).fold(0.0, f64::max);
        2 * (top.ceil().max(0.0) as usize) + 5
    }
}

/// P(Q = q | S_H = j) for q = 0..=q_max.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyQuantaPmf {
    pub probs: Vec<Vec<f64>>,
    /// μ̄_j in μJ.
    pub scaled_mean: Vec<f64>,
    /// ρ̄_j in μJ².
    pub scaled_var: Vec<f64>,
    pub e_unit: f64,
    pub q_max: usize,
    /// Gaussian mass below zero energy, assigned to Q = 0.
    pub negative_mass: Vec<f64>,
    /// Mass lumped into q_max beyond its own closed-form value.
    pub truncated_mass: Vec<f64>,
    /// |Σ q p_j(q) − μ̄_j/E_U| per state.
    pub mean_deviation: Vec<f64>,
    /// Allowed deviation (negative + truncated mass)·q_max + 0.5 per state.
    pub mean_tolerance: Vec<f64>,
}

impl EnergyQuantaPmf {
    pub fn n_states(&self) -> usize {
        self.probs.len()
    }

    pub fn mean_quanta(&self, j: usize) -> f64 {
        self.probs[j].iter().enumerate().map(|(q, p)| q as f64 * p).sum()
    }

    /// Long-run mean quanta per period under solar distribution `weights`.
    pub fn mean_rate(&self, weights: &[f64]) -> f64 {
        weights.iter().enumerate().map(|(j, w)| w * self.mean_quanta(j)).sum()
    }

    pub fn prob(&self, j: usize, q: usize) -> f64 {
        self.probs[j].get(q).copied().unwrap_or(0.0)
    }

    /// Largest q with probability above `tol` in any state.
    pub fn support_max(&self, tol: f64) -> usize {
        self.probs
            .iter()
            .flat_map(|row| row.iter().enumerate().filter(|(_, &p)| p > tol).map(|(q, _)| q))
            .max()
            .unwrap_or(0)
    }

    /// Tabular export: `state,q,probability`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("state,q,probability\n");
        for (j, row) in self.probs.iter().enumerate() {
            for (q, p) in row.iter().enumerate() {
                out.push_str(&format!("{j},{q},{p}\n"));
            }
        }
        out
    }
}

/// Two-point PMF for a known harvest `e_h`, indexed by quanta count.
pub fn quanta_pmf_deterministic(e_h: f64, e_unit: f64) -> Vec<f64> {
    let e_h = e_h.max(0.0);
    let q = (e_h / e_unit).floor();
    let frac = (e_h - q * e_unit) / e_unit;
    let q = q as usize;
    let mut p = vec![0.0; q + 2];
    p[q] = 1.0 - frac;
    p[q + 1] = frac;
    if frac == 0.0 {
        p.pop();
    }
    p
}

fn g1(i: f64, mu: f64, rho: f64, e_u: f64) -> f64 {
    let s = (2.0 * rho).sqrt();
    0.5 * (erfc((i * e_u - mu) / s) - erfc(((i + 1.0) * e_u - mu) / s))
}

fn g2(i: f64, mu: f64, rho: f64, e_u: f64) -> f64 {
    let c = (rho / (2.0 * PI * e_u * e_u)).sqrt();
    let a = (i - 1.0) * e_u - mu;
    let b = i * e_u - mu;
    c * ((-a * a / (2.0 * rho)).exp() - (-b * b / (2.0 * rho)).exp())
}

/// Closed-form quanta probability before tail handling, for harvest
/// energy ~ N(mu, rho) in μJ.
pub fn quanta_probability_raw(i: usize, mu: f64, rho: f64, e_u: f64) -> f64 {
    let r = mu / e_u;
    if i == 0 {
        (1.0 - r) * g1(0.0, mu, rho, e_u) - g2(1.0, mu, rho, e_u)
    } else {
        let f = i as f64;
        ((f + 1.0) - r) * g1(f, mu, rho, e_u) - g2(f + 1.0, mu, rho, e_u)
            + (r - (f - 1.0)) * g1(f - 1.0, mu, rho, e_u)
            + g2(f, mu, rho, e_u)
    }
}

pub fn quanta_pmf_gaussian(hmm: &HmmParams, cfg: &EnergyConfig) -> Result<EnergyQuantaPmf, EnergyError> {
    cfg.validate()?;
    let e_u = cfg.e_unit();
    let q_max = cfg.q_max.unwrap_or_else(|| cfg.default_q_max(hmm));
    let scale = cfg.panel_area * cfg.period_s * cfg.efficiency;
    let n = hmm.n_states;
    let mut out = EnergyQuantaPmf {
        probs: Vec::with_capacity(n),
        scaled_mean: Vec::with_capacity(n),
        scaled_var: Vec::with_capacity(n),
        e_unit: e_u,
        q_max,
        negative_mass: Vec::with_capacity(n),
        truncated_mass: Vec::with_capacity(n),
        mean_deviation: Vec::with_capacity(n),
        mean_tolerance: Vec::with_capacity(n),
    };
    for j in 0..n {
        let mu = hmm.means[j] * scale;
        let rho = hmm.variances[j] * scale * scale;
        let neg = 0.5 * erfc(mu / (SQRT_2 * rho.sqrt()));
        let mut p = vec![0.0; q_max + 1];
        for (i, slot) in p.iter_mut().enumerate().take(q_max) {
            *slot = quanta_probability_raw(i, mu, rho, e_u).max(0.0);
        }
        p[0] += neg;
        let head: f64 = p[..q_max].iter().sum();
        let raw_top = quanta_probability_raw(q_max, mu, rho, e_u).max(0.0);
        p[q_max] = (1.0 - head).max(0.0);
        let total: f64 = p.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            p.iter_mut().for_each(|x| *x /= total);
        }
        let trunc = (p[q_max] - raw_top).max(0.0);
        let mean: f64 = p.iter().enumerate().map(|(q, x)| q as f64 * x).sum();
        out.mean_deviation.push((mean - mu / e_u).abs());
        out.mean_tolerance.push((neg + trunc) * q_max as f64 + 0.5);
        out.negative_mass.push(neg);
        out.truncated_mass.push(trunc);
        out.scaled_mean.push(mu);
        out.scaled_var.push(rho);
        out.probs.push(p);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatterySimState {
    /// Residual energy E_R in μJ, kept in [0, E_U).
    pub residual: f64,
    pub quanta_in_battery: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RechargeOutcome {
    pub state: BatterySimState,
    /// Quanta actually stored.
    pub quanta_added: usize,
    /// Quanta discarded because the battery was full.
    pub overflow: usize,
}

impl RechargeOutcome {
    /// Whole quanta produced this period, stored or not.
    pub fn quanta_harvested(&self) -> usize {
        self.quanta_added + self.overflow
    }
}

/// Accumulate-and-floor recharge with saturation at `n_b − 1`.
pub fn recharge_step(state: BatterySimState, e_h: f64, n_b: usize, e_unit: f64) -> RechargeOutcome {
    let accumulated = state.residual + e_h.max(0.0);
    let mut q = (accumulated / e_unit).floor();
    let mut residual = accumulated - q * e_unit;
    if residual >= e_unit {
        q += 1.0;
        residual -= e_unit;
    } else if residual < 0.0 {
        q -= 1.0;
        residual += e_unit;
    }
    let q = q as usize;
    let cap = n_b - 1;
    let level = (state.quanta_in_battery + q).min(cap);
    let added = level - state.quanta_in_battery.min(level);
    RechargeOutcome {
        state: BatterySimState { residual, quanta_in_battery: level },
        quanta_added: added,
        overflow: q - added,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn threshold_energy() -> EnergyConfig {
        EnergyConfig { p_unit: 1.8e4, period_s: 300.0, panel_area: 0.1, efficiency: 1.0, q_max: None }
    }

    #[test]
    fn deterministic_pmf_cases() {
        let e = 10.0;
        assert_eq!(quanta_pmf_deterministic(5.0, e), vec![0.5, 0.5]);
        assert_eq!(quanta_pmf_deterministic(30.0, e), vec![0.0, 0.0, 0.0, 1.0]);
        let p = quanta_pmf_deterministic(12.5, e);
        assert_eq!(p.len(), 3);
        assert!((p[1] - 0.75).abs() < 1e-15 && (p[2] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn rows_sum_to_one_and_are_nonnegative() {
        let pmf = quanta_pmf_gaussian(&HmmParams::solar_five_minute(), &threshold_energy()).unwrap();
        for row in &pmf.probs {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(row.iter().all(|&p| p >= 0.0));
        }
        for j in 0..pmf.n_states() {
            assert!(pmf.mean_deviation[j] <= pmf.mean_tolerance[j]);
        }
    }

    #[test]
    fn state_zero_mean_matches_scaled_mean() {
        let cfg = threshold_energy();
        let pmf = quanta_pmf_gaussian(&HmmParams::solar_five_minute(), &cfg).unwrap();
        let expected = 1.75e4 * 0.1 * 300.0 / (1.8e4 * 300.0);
        assert!((pmf.scaled_mean[0] / pmf.e_unit - expected).abs() < 1e-15);
        assert!((pmf.mean_quanta(0) - expected).abs() < 1e-3);
    }

    #[test]
    fn scaled_moments_are_exact() {
        let cfg = EnergyConfig { p_unit: 4e4, period_s: 300.0, panel_area: 1.0, efficiency: 0.2, q_max: None };
        let hmm = HmmParams::solar_five_minute();
        let pmf = quanta_pmf_gaussian(&hmm, &cfg).unwrap();
        let s = cfg.panel_area * cfg.period_s * cfg.efficiency;
        for j in 0..4 {
            assert_eq!(pmf.scaled_mean[j], hmm.means[j] * s);
            assert_eq!(pmf.scaled_var[j], hmm.variances[j] * s * s);
        }
    }

    #[test]
    fn vanishing_variance_approaches_deterministic() {
        let means = vec![0.37e4, 1.16e4];
        let hmm =
            HmmParams::with_stationary_start(means.clone(), vec![1e-12, 1e-12], vec![vec![0.5, 0.5], vec![0.5, 0.5]])
                .unwrap();
        let cfg = EnergyConfig { p_unit: 1e3, period_s: 1.0, panel_area: 1.0, efficiency: 1.0, q_max: Some(20) };
        let pmf = quanta_pmf_gaussian(&hmm, &cfg).unwrap();
        for (j, &m) in means.iter().enumerate() {
            let det = quanta_pmf_deterministic(m, 1e3);
            for q in 0..=20 {
                let d = det.get(q).copied().unwrap_or(0.0);
                assert!((pmf.probs[j][q] - d).abs() < 1e-6, "state {j} q {q}");
            }
        }
    }

    #[test]
    fn recharge_examples() {
        let s = BatterySimState { residual: 0.0, quanta_in_battery: 0 };
        let r = recharge_step(s, 25.0, 12, 10.0);
        assert_eq!(r.state.quanta_in_battery, 2);
        assert_eq!(r.quanta_added, 2);
        assert!((r.state.residual - 5.0).abs() < 1e-12);

        let full = BatterySimState { residual: 3.0, quanta_in_battery: 11 };
        let r = recharge_step(full, 47.0, 12, 10.0);
        assert_eq!(r.state.quanta_in_battery, 11);
        assert_eq!(r.quanta_added, 0);
        assert_eq!(r.overflow, 5);
        assert!(r.state.residual.abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        let mut c = threshold_energy();
        c.efficiency = 1.5;
        assert!(c.validate().is_err());
        c.efficiency = 0.2;
        c.q_max = Some(0);
        assert!(c.validate().is_err());
    }
}
