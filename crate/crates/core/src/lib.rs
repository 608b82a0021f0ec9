//! Quadrotor trajectory tracking with nonlinear MPC.
//!
//! The crate contains two NMPC formulations sharing one multiple-shooting
//! Gauss-Newton SQP solver:
//!
//! * a *standard* controller whose prediction model ends at the motors, and
//! * a *LoL* controller whose prediction model also contains the flight
//!   controller's rate PID, its mixer and the rotor dynamics, with the mixer
//!   outputs constrained linearly inside the optimal control problem.
//!
//! Both emit the cascaded command a flight stack expects (collective thrust or
//! throttle plus body rates). [`plant`] simulates that flight stack at 1 kHz,
//! [`trajectories`] builds benchmark references and [`bench`] runs scenario
//! matrices and aggregates tracking and prediction metrics.

pub mod bench;
pub mod cli;
pub mod controllers;
pub mod error;
pub mod integrator;
pub mod log;
pub mod model;
pub mod ocp;
pub mod params;
pub mod plant;
pub mod qp;
pub mod selftest;
pub mod so3;
pub mod trajectories;

pub use error::{Error, Result};
pub use params::VehicleParams;

/// Scalar type the dynamics are written against: `f64` or a forward-mode dual number.
pub trait Real: num_dual::DualNum<Primitive = f64> + Copy {}

impl<T: num_dual::DualNum<Primitive = f64> + Copy> Real for T {}
