pub mod config;
pub mod gate;
pub mod harness;
pub mod objective;
pub mod optim;
pub mod seed;
pub mod simulator;
pub mod theory;
