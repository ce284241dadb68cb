//! Solar energy harvesting transmission toolkit.
//!
//! A Gaussian HMM of irradiance feeds an energy-quanta model; together with
//! a finite-state fading channel it defines a discounted MDP whose solved
//! policies are analysed in closed form and evaluated by simulation.

pub mod belief_runtime;
pub mod channel_model;
pub mod config;
pub mod data_ingest;
pub mod energy_model;
pub mod linalg;
pub mod mdp_core;
pub mod policy_analysis;
pub mod simulator;
pub mod solar_hmm;
