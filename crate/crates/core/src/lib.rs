pub mod dataset;
pub mod dhpm;
pub mod experiment;
pub mod grid;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod pinn;
pub mod spectral;
