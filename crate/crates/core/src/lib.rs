//! Reinforcement-learning agents against industrial node servers.
//!
//! A node server hosts an [`address_space::AddressSpace`] and speaks the
//! binary protocol in [`wire`]. The [`mapper`] browses one or more servers,
//! derives finite action and observation spaces from the RL markers it finds,
//! and drives an [`agents::Agent`] through episodes by writing actuators and
//! consuming sensor-change notifications. [`plant_sim`] provides a simulated
//! sorting plant behind the same protocol.

pub mod address_space;
pub mod agents;
pub mod cli;
pub mod client;
pub mod mapper;
pub mod plant_sim;
pub mod server;
pub mod wire;
