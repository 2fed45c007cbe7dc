pub mod agent;
pub mod constraints;
pub mod env;
pub mod gateway;
pub mod generation;
pub mod metrics;
pub mod profiler;
pub mod reasoning;
pub mod rng;
pub mod rules;
