//! Wafer-scale neuromorphic simulation, mapping and interconnect planning.

pub mod aer;
pub mod config;
pub mod des;
pub mod kernel;
pub mod network;
pub mod neuron;
pub mod noc;
pub mod sync;
pub mod mapper;
pub mod ibplanner;
