pub mod cav;
pub mod driver;
pub mod fixtures;
pub mod harness;
pub mod map;
pub mod metrics;
pub mod mlp;
pub mod planner;
pub mod predictor;
pub mod protocol;
pub mod sim;
pub mod sweep;
