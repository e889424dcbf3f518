//! Lagrangian flapping-wing dynamics, blade-element aerodynamics and an
//! online neural-network surrogate trained with a square-root cubature
//! Kalman filter.

pub mod aero;
pub mod ckf;
pub mod exprgraph;
pub mod multibody;
pub mod neuralnet;
pub mod simulate;
pub mod surrogate;
pub mod table;
