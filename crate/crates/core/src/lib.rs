//! Tabular distributional reinforcement learning with quantile
//! representations.
//!
//! The crate models a policy-evaluated Markov reward process and provides
//! two families of algorithms over m-quantile return representations:
//! quantile dynamic programming (exact projected Bellman iteration) and
//! quantile temporal-difference learning (its stochastic counterpart),
//! together with the diagnostics used to study them: Wasserstein distances,
//! expected-update vector fields and Lyapunov measurements, fixed-point
//! approximation-error bounds, and quantile back-up diagrams.

pub mod analysis;
pub mod bellman;
pub mod config;
pub mod dist;
pub mod dynamics;
pub mod error;
pub mod exact;
pub mod mdp;
pub mod qdp;
pub mod qtd;
pub mod quantile;
pub mod reference;

pub use analysis::{
    backup_diagram, backup_diagram_with_tolerance, bound_factor, check_w1_bound,
    distance_to_fixed_point_set, monte_carlo_returns, sample_truncated_return,
    truncation_horizon, BackupDiagram, BackupEdge, BoundReport,
};
pub use bellman::{bellman_target_cdf, bellman_target_finite, td_target, TargetCdf};
pub use config::{Algo, ExperimentConfig};
pub use dist::{ContinuousCdf, FiniteDistribution, RewardModel};
pub use dynamics::{
    di_interval, euler_integrate, expected_update, lyapunov_general, lyapunov_simple,
    IntervalMapValue,
};
pub use error::{Error, Result};
pub use exact::{parse_decimal, polish_fixed_point, rat_to_f64, ExactMrp, Rat};
pub use mdp::{compile_mrp, Mdp, Mrp, Policy, Transition};
pub use qdp::{is_qdp_fixed_point, qdp_solve, qdp_step_continuous, qdp_step_discrete};
pub use qtd::{
    mc_quantile_update, qtd_update, run_asynchronous, run_monte_carlo, run_synchronous, td_run,
    RunRecord, StateSource, StepSchedule,
};
pub use quantile::{project, tau_levels, InterpolationParams, QuantileTable};
