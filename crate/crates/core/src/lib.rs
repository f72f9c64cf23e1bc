//! Epistemic-risk-seeking actor-critic.
//!
//! * [`mdp`]: layered finite-horizon MDPs, DeepSea, exact values.
//! * [`klearning`]: exact K-learning oracle, the temperature saddle point and
//!   regret diagnostics.
//! * [`uncertainty`]: count-based and ensemble uncertainty.
//! * [`approx`]: networks, gradients and optimizers.
//! * [`agent`]: the online actor-critic and its baselines.
//! * [`replay`]: prioritized replay with V-trace targets.
//! * [`harness`]: solve detection, sweeps and ablations.
//! * [`checkpoint`]: binary snapshots of agents and replay buffers.

pub mod agent;
pub mod approx;
pub mod checkpoint;
pub mod harness;
pub mod klearning;
pub mod mdp;
pub mod replay;
pub mod uncertainty;
