//! Proprioceptive contact estimation and contact-aided invariant EKF odometry
//! for legged robots.

pub mod baselines;
pub mod config;
pub mod contactnet;
pub mod dataio;
pub mod evalkit;
pub mod gaitsim;
pub mod inekf;
pub mod kinematics;
pub mod labelgen;
pub mod liegroup;
pub mod pipeline;
