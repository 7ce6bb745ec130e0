pub mod agents;
pub mod config;
pub mod dataset;
pub mod eval;
pub mod evolution;
pub mod lmsr;
pub mod market;
pub mod rng;
pub mod runner;
pub mod service;
