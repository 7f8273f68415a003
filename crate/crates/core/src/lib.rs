pub mod agent;
pub mod baselines;
pub mod dynamics;
pub mod env;
pub mod eval;
pub mod nn;
pub mod trajectories;
