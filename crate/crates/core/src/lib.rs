//! Simulation library for active 6-DoF pose estimation and tracking of
//! objects whose symmetries make single views ambiguous.

pub mod ambiguity;
pub mod bench;
pub mod diffusion;
pub mod estimator;
pub mod geometry;
pub mod nbv;
pub mod scene;
pub mod seeding;
pub mod tracking;
