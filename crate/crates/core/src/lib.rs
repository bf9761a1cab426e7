//! Hierarchical whole-body control for planar wheeled inverted pendulum humanoids.
//!
//! The stack has two layers. A high-level planner runs trajectory optimization
//! and receding-horizon control over a one-link wheeled inverted pendulum
//! model ([`wipm`], [`ddp`], [`mpc`]) and hands a CoM pitch target to a
//! low-level QP controller ([`wbc`]). The QP acts on the manipulator dynamics
//! after wheel elimination ([`isolation`]). [`sim`] closes the loop on the
//! full articulated model ([`dynamics`]).

pub mod ddp;
pub mod diagnostics;
pub mod dynamics;
pub mod error;
pub mod isolation;
pub mod kinematics;
pub mod model;
pub mod mpc;
pub mod output;
pub mod qp;
pub mod sim;
pub mod wbc;
pub mod wipm;

pub use error::{Error, Result};
pub use model::{load_description, RobotDescription, RobotState};
