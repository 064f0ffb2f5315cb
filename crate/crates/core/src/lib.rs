//! Hierarchical-QP whole-body follower for legged robots.
//!
//! The crate is organised bottom-up: [`model`] and [`dynamics`] describe the
//! robot, [`qp`] and [`hqp`] solve prioritized quadratic programs, [`tasks`]
//! turns dynamics and terrain knowledge into prioritized tasks, [`follower`]
//! runs one control tick, and [`sim`] closes the loop against a
//! forward-dynamics simulation with terramechanics contact.

pub mod dynamics;
pub mod experiment;
pub mod follower;
pub mod hqp;
pub mod model;
pub mod qp;
pub mod sim;
pub mod tasks;
pub mod terrain;
