#![no_std]
extern crate alloc;

pub mod agents;
pub mod executor;
pub mod grounding;
pub mod gsl;
pub mod policy;
pub mod rng;
pub mod scene;
pub mod sim;
pub mod types;
