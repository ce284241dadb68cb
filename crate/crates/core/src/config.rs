//! Experiment configuration document and the pipeline that turns it into a
//! solved MDP or a simulation config.
//!
//! γ_C is referenced to a 10³ μW transmit power, so γ_U = (P_U / 10³)·γ_C.

use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

use crate::belief_runtime::BeliefMode;
use crate::channel_model::{build_fsmc, ChannelConfig, ChannelFsmc, DEFAULT_OSCILLATORS};
use crate::energy_model::{quanta_pmf_gaussian, EnergyConfig, EnergyQuantaPmf};
use crate::mdp_core::{
    build_mdp, value_iteration, MdpModel, Modulation, Policy, PolicyClass, RadioConfig, SolverConfig, ValueFunction,
};
use crate::simulator::{
    snr_unit_from_gamma_c, BitAccounting, ChannelSource, IrradianceSource, PolicySource, SimConfig,
};
use crate::solar_hmm::{HmmParams, ModelDocument};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Field { path: String, message: String },
    #[error("model file {path}: {message}")]
    Model { path: PathBuf, message: String },
    #[error("pipeline: {0}")]
    Pipeline(String),
}

pub type Result<T> = std::result::Result<T, ConfigError>;

fn field<T>(path: &str, message: impl Into<String>) -> Result<T> {
    Err(ConfigError::Field { path: path.into(), message: message.into() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadioSection {
    pub symbol_rate: f64,
    pub packet_symbols: f64,
    /// Names from the standard set: qpsk, 8psk, 16qam.
    pub modulations: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSection {
    pub boundaries: Vec<f64>,
    pub gamma0: f64,
    pub fd_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    /// `solar-5min`, `solar-15min`, or absent when `path` is set.
    #[serde(default)]
    pub preset: Option<String>,
    #[serde(default)]
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySection {
    /// `composite` or `onoff`.
    pub class: String,
    /// On-off modulation name.
    #[serde(default)]
    pub modulation: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub discount: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_max_sweeps")]
    pub max_sweeps: usize,
}

fn default_epsilon() -> f64 {
    1e-6
}

fn default_max_sweeps() -> usize {
    100_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    pub n_periods: usize,
    #[serde(default)]
    pub belief: BeliefMode,
    /// `jakes` or `fsmc`.
    #[serde(default = "default_channel_source")]
    pub channel_source: String,
    #[serde(default = "default_oscillators")]
    pub oscillators: usize,
    #[serde(default)]
    pub bits: BitAccounting,
    #[serde(default)]
    pub initial_battery: Option<usize>,
    /// N_P for Myopic II; N_B when absent.
    #[serde(default)]
    pub n_power: Option<usize>,
    #[serde(default = "default_horizon")]
    pub ttfr_horizon: usize,
    /// Myopic I modulation.
    #[serde(default = "default_myopic1")]
    pub myopic1_modulation: String,
    /// Myopic II modulation.
    #[serde(default = "default_myopic2")]
    pub myopic2_modulation: String,
}

fn default_channel_source() -> String {
    "jakes".into()
}

fn default_oscillators() -> usize {
    DEFAULT_OSCILLATORS
}

fn default_horizon() -> usize {
    24
}

fn default_myopic1() -> String {
    "qpsk".into()
}

fn default_myopic2() -> String {
    "16qam".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub n_b: usize,
    /// Normalized SNR in dB; exactly one of `gamma_c_db` and `gamma_u_db`.
    #[serde(default)]
    pub gamma_c_db: Option<f64>,
    #[serde(default)]
    pub gamma_u_db: Option<f64>,
    pub energy: EnergyConfig,
    pub channel: ChannelSection,
    pub radio: RadioSection,
    pub model: ModelSection,
    pub policy: PolicySection,
    pub solver: SolverSection,
    pub sim: SimSection,
}

impl ExperimentConfig {
    /// Evaluation setup at γ_C = 6 dB, Ω_S = 1 cm².
    pub fn evaluation() -> Self {
        ExperimentConfig {
            version: CONFIG_VERSION,
            n_b: 12,
            gamma_c_db: Some(6.0),
            gamma_u_db: None,
            energy: EnergyConfig { p_unit: 4e4, period_s: 300.0, panel_area: 1.0, efficiency: 0.2, q_max: None },
            channel: ChannelSection { boundaries: vec![0.3, 0.6, 1.0, 2.0, 3.0], gamma0: 1.0, fd_norm: 0.05 },
            radio: RadioSection {
                symbol_rate: 1e5,
                packet_symbols: 1e3,
                modulations: vec!["qpsk".into(), "8psk".into(), "16qam".into()],
            },
            model: ModelSection { preset: Some("solar-5min".into()), path: None },
            policy: PolicySection { class: "composite".into(), modulation: None },
            solver: SolverSection { discount: 0.99, epsilon: default_epsilon(), max_sweeps: default_max_sweeps() },
            sim: SimSection {
                n_periods: 100_000,
                belief: BeliefMode::Mixed,
                channel_source: default_channel_source(),
                oscillators: DEFAULT_OSCILLATORS,
                bits: BitAccounting::Expected,
                initial_battery: None,
                n_power: None,
                ttfr_horizon: default_horizon(),
                myopic1_modulation: default_myopic1(),
                myopic2_modulation: default_myopic2(),
            },
        }
    }

    /// Threshold figure setup: N_B = 8, 8PSK on-off, λ = 0.5, Ω_S = 0.1 cm²,
    /// P_U = 1.8×10⁴ μW, with the quoted 6 dB read as γ_C.
    pub fn threshold_setup() -> Self {
        let mut c = ExperimentConfig::evaluation();
        c.n_b = 8;
        c.gamma_c_db = Some(6.0);
        c.energy = EnergyConfig { p_unit: 1.8e4, period_s: 300.0, panel_area: 0.1, efficiency: 1.0, q_max: None };
        c.policy = PolicySection { class: "onoff".into(), modulation: Some("8psk".into()) };
        c.solver.discount = 0.5;
        c
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return field("version", format!("unsupported version {}, expected {CONFIG_VERSION}", self.version));
        }
        if self.n_b == 0 {
            return field("n_b", "must be at least 1");
        }
        match (self.gamma_c_db, self.gamma_u_db) {
            (Some(g), None) | (None, Some(g)) if g.is_finite() => {}
            (Some(_), Some(_)) => return field("gamma_c_db", "set only one of gamma_c_db and gamma_u_db"),
            _ => return field("gamma_c_db", "a finite gamma_c_db or gamma_u_db is required"),
        }
        self.energy.validate().or_else(|e| field("energy", e.to_string()))?;
        self.channel_config().validate().or_else(|e| field("channel", e.to_string()))?;
        if self.radio.modulations.is_empty() {
            return field("radio.modulations", "at least one modulation is required");
        }
        for (i, name) in self.radio.modulations.iter().enumerate() {
            if standard_modulation(name).is_none() {
                return field(&format!("radio.modulations[{i}]"), format!("unknown modulation {name:?}"));
            }
        }
        self.radio_config()?.validate().or_else(|e| field("radio", e.to_string()))?;
        match (&self.model.preset, &self.model.path) {
            (Some(p), None) => {
                if preset_model(p).is_none() {
                    return field("model.preset", format!("unknown preset {p:?}"));
                }
            }
            (None, Some(_)) => {}
            _ => return field("model", "set exactly one of preset and path"),
        }
        self.policy_class().map(|_| ())?;
        self.solver_config().validate().or_else(|e| field("solver", e.to_string()))?;
        if self.sim.n_periods == 0 {
            return field("sim.n_periods", "must be at least 1");
        }
        if !matches!(self.sim.channel_source.as_str(), "jakes" | "fsmc") {
            return field("sim.channel_source", "expected jakes or fsmc");
        }
        if self.sim.oscillators == 0 {
            return field("sim.oscillators", "must be at least 1");
        }
        if let Some(b) = self.sim.initial_battery {
            if b >= self.n_b {
                return field("sim.initial_battery", format!("{b} exceeds N_B - 1"));
            }
        }
        if self.sim.ttfr_horizon == 0 {
            return field("sim.ttfr_horizon", "must be at least 1");
        }
        self.modulation("sim.myopic1_modulation", &self.sim.myopic1_modulation)?;
        self.modulation("sim.myopic2_modulation", &self.sim.myopic2_modulation)?;
        Ok(())
    }

    pub fn gamma_c_linear(&self) -> f64 {
        match (self.gamma_c_db, self.gamma_u_db) {
            (Some(g), _) => 10f64.powf(g / 10.0),
            (None, Some(u)) => 10f64.powf(u / 10.0) * 1e3 / self.energy.p_unit,
            _ => f64::NAN,
        }
    }

    /// Reported γ_C in dB, derived from γ_U when only that is given.
    pub fn gamma_c_db(&self) -> f64 {
        10.0 * self.gamma_c_linear().log10()
    }

    pub fn snr_unit(&self) -> f64 {
        snr_unit_from_gamma_c(self.gamma_c_db(), self.energy.p_unit)
    }

    pub fn channel_config(&self) -> ChannelConfig {
        ChannelConfig {
            boundaries: self.channel.boundaries.clone(),
            gamma0: self.channel.gamma0,
            fd_norm: self.channel.fd_norm,
        }
    }

    pub fn radio_config(&self) -> Result<RadioConfig> {
        let modulations = self
            .radio
            .modulations
            .iter()
            .enumerate()
            .map(|(i, n)| {
                standard_modulation(n).ok_or_else(|| ConfigError::Field {
                    path: format!("radio.modulations[{i}]"),
                    message: format!("unknown modulation {n:?}"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(RadioConfig {
            symbol_rate: self.radio.symbol_rate,
            packet_symbols: self.radio.packet_symbols,
            modulations,
            snr_unit: self.snr_unit(),
            period_s: self.energy.period_s,
        })
    }

    fn modulation(&self, path: &str, name: &str) -> Result<usize> {
        self.radio.modulations.iter().position(|m| m.eq_ignore_ascii_case(name)).ok_or_else(|| ConfigError::Field {
            path: path.into(),
            message: format!("modulation {name:?} is not in radio.modulations"),
        })
    }

    pub fn policy_class(&self) -> Result<PolicyClass> {
        match self.policy.class.as_str() {
            "composite" => Ok(PolicyClass::Composite),
            "onoff" => {
                let name = self.policy.modulation.as_deref().ok_or_else(|| ConfigError::Field {
                    path: "policy.modulation".into(),
                    message: "required for the onoff class".into(),
                })?;
                Ok(PolicyClass::OnOff { modulation: self.modulation("policy.modulation", name)? })
            }
            other => field("policy.class", format!("expected composite or onoff, got {other:?}")),
        }
    }

    pub fn solver_config(&self) -> SolverConfig {
        SolverConfig::new(self.solver.discount)
            .with_epsilon(self.solver.epsilon)
            .with_max_sweeps(self.solver.max_sweeps)
    }

    /// Loads the solar model; relative paths resolve against `base`.
    pub fn load_model(&self, base: &Path) -> Result<HmmParams> {
        if let Some(p) = &self.model.preset {
            return preset_model(p).ok_or_else(|| ConfigError::Field {
                path: "model.preset".into(),
                message: format!("unknown preset {p:?}"),
            });
        }
        let path = self.model.path.as_ref().map(|p| base.join(p)).ok_or_else(|| ConfigError::Field {
            path: "model".into(),
            message: "set exactly one of preset and path".into(),
        })?;
        ModelDocument::load(&path).map(|d| d.params).map_err(|e| ConfigError::Model { path, message: e.to_string() })
    }

    pub fn myopic1_modulation(&self) -> Result<usize> {
        self.modulation("sim.myopic1_modulation", &self.sim.myopic1_modulation)
    }

    pub fn myopic2_modulation(&self) -> Result<usize> {
        self.modulation("sim.myopic2_modulation", &self.sim.myopic2_modulation)
    }

    pub fn channel_source(&self) -> ChannelSource {
        match self.sim.channel_source.as_str() {
            "fsmc" => ChannelSource::Fsmc,
            _ => ChannelSource::Jakes { oscillators: self.sim.oscillators },
        }
    }

    /// Simulation config for `policy` with synthetic irradiance drawn from
    /// `generator` and filtered with `model`.
    pub fn sim_config(
        &self,
        model: &HmmParams,
        generator: &HmmParams,
        policy: PolicySource,
        seed: u64,
    ) -> Result<SimConfig> {
        Ok(SimConfig {
            n_periods: self.sim.n_periods,
            seed,
            radio: self.radio_config()?,
            energy: self.energy,
            channel: self.channel_config(),
            n_b: self.n_b,
            n_power: self.sim.n_power,
            model: model.clone(),
            policy,
            irradiance: IrradianceSource::Synthetic { generator: generator.clone() },
            channel_source: self.channel_source(),
            bits: self.sim.bits,
            initial_battery: self.sim.initial_battery,
            gamma_c_db: Some(self.gamma_c_db()),
            record_trace: false,
        })
    }
}

pub fn standard_modulation(name: &str) -> Option<Modulation> {
    Modulation::standard_set().into_iter().find(|m| m.name.eq_ignore_ascii_case(name))
}

pub fn preset_model(name: &str) -> Option<HmmParams> {
    match name {
        "solar-5min" => Some(HmmParams::solar_five_minute()),
        "solar-15min" => Some(HmmParams::solar_fifteen_minute()),
        _ => None,
    }
}

/// Everything produced by one solve.
#[derive(Debug, Clone)]
pub struct SolvedSystem {
    pub radio: RadioConfig,
    pub channel: ChannelConfig,
    pub pmf: EnergyQuantaPmf,
    pub fsmc: ChannelFsmc,
    pub model: MdpModel,
    pub value: ValueFunction,
    pub policy: Policy,
    pub solver: SolverConfig,
}

pub fn solve_system(cfg: &ExperimentConfig, hmm: &HmmParams, class: PolicyClass) -> Result<SolvedSystem> {
    let radio = cfg.radio_config()?;
    let channel = cfg.channel_config();
    let perr = |e: &dyn std::fmt::Display| ConfigError::Pipeline(e.to_string());
    let pmf = quanta_pmf_gaussian(hmm, &cfg.energy).map_err(|e| perr(&e))?;
    let fsmc = build_fsmc(&channel).map_err(|e| perr(&e))?;
    let model = build_mdp(hmm, &pmf, &fsmc, &radio, &channel, cfg.n_b, class).map_err(|e| perr(&e))?;
    let solver = cfg.solver_config();
    let (value, policy) = value_iteration(&model, &solver).map_err(|e| perr(&e))?;
    Ok(SolvedSystem { radio, channel, pmf, fsmc, model, value, policy, solver })
}
