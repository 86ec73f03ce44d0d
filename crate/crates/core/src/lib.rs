//! Event-triggered, adaptive-horizon nonlinear MPC with a dual-mode LQR
//! fallback, and the policy-gradient machinery that tunes its meta-parameters.

pub mod dual;
pub mod plant;
pub mod ocp;
pub mod riccati;
pub mod mlp;
pub mod policy;
pub mod closedloop;
pub mod ppo;
