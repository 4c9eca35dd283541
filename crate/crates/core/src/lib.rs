//! Simulation and deterministic oracles for neutron branching processes:
//! geometry, cross sections, an event-driven branching engine, a grid
//! solver for the mean semigroup and the extinction probability, the
//! prolific/doomed skeletal decomposition, martingale and growth
//! diagnostics, and a branching Brownian motion cross-check.

pub mod asymptotics;
pub mod bbm_strip;
pub mod cross_sections;
pub mod mbp_engine;
pub mod phase_space;
pub mod presets;
pub mod rod_oracle;
pub mod skeleton;
pub mod stats;
