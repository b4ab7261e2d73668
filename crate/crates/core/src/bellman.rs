//! The distributional Bellman operator applied to quantile tables.
//!
//! For a table θ the target at state x is the law of R_x + γθ(X′, J) with
//! X′ ∼ P(·|x) and J uniform on {1..m}. With finite-support rewards that
//! law is materialized exactly ([`bellman_target_finite`]); in general it
//! is exposed as a lazily evaluated CDF ([`bellman_target_cdf`]), the
//! object the continuous dynamic-programming step root-finds on.

use crate::dist::{FiniteDistribution, RewardModel};
use crate::error::{Error, Result};
use crate::mdp::{Mrp, Transition};
use crate::quantile::QuantileTable;

/// Lazily evaluated CDF of the Bellman target at one state.
///
/// `eval(t) = Σ_k w_k · F_R(t − s_k)` over components (w_k, s_k), where
/// w_k = P(x′|x)/m and s_k = γθ(x′,j); `eval_left` uses the reward CDF's
/// left limits. Terminal states carry the single component (1, 0) with a
/// Dirac-0 reward, which makes `eval` the step function at 0.
#[derive(Debug, Clone)]
pub struct TargetCdf {
    state: usize,
    reward: RewardModel,
    components: Vec<(f64, f64)>,
}

impl TargetCdf {
    /// State this target belongs to.
    pub fn state(&self) -> usize {
        self.state
    }

    /// `P(R + γθ(X′,J) ≤ t)`.
    pub fn eval(&self, t: f64) -> f64 {
        self.components
            .iter()
            .map(|&(w, s)| w * self.reward.cdf(t - s))
            .sum::<f64>()
            .clamp(0.0, 1.0)
    }

    /// `P(R + γθ(X′,J) < t)`.
    pub fn eval_left(&self, t: f64) -> f64 {
        self.components
            .iter()
            .map(|&(w, s)| w * self.reward.cdf_left_limit(t - s))
            .sum::<f64>()
            .clamp(0.0, 1.0)
    }

    /// The mixture components (weight, shift) with the shift already
    /// containing the discount factor.
    pub fn components(&self) -> &[(f64, f64)] {
        &self.components
    }

    /// Reward model the component CDFs are shifted copies of.
    pub fn reward(&self) -> &RewardModel {
        &self.reward
    }
}

fn check_shape(mrp: &Mrp, table: &QuantileTable) -> Result<()> {
    if table.num_states() != mrp.num_states() {
        return Err(Error::Validation(format!(
            "table has {} states, model has {}",
            table.num_states(),
            mrp.num_states()
        )));
    }
    Ok(())
}

/// Exact Bellman target at `x`: atoms r + γθ(x′,j) with probabilities
/// P(x′,r|x)/m, merged and sorted. Terminal states yield δ_0.
pub fn bellman_target_finite(
    mrp: &Mrp,
    table: &QuantileTable,
    x: usize,
) -> Result<FiniteDistribution> {
    check_shape(mrp, table)?;
    if mrp.is_terminal(x) {
        return FiniteDistribution::dirac(0.0);
    }
    let gamma = mrp.gamma();
    let m = table.m();
    let inv_m = 1.0 / m as f64;
    let mut atoms = Vec::new();
    for (y, r, p) in mrp.enumerate_transitions(x)? {
        for j in 0..m {
            atoms.push((r + gamma * table.get(y, j), p * inv_m));
        }
    }
    FiniteDistribution::new(atoms)
}

/// Bellman target at `x` as a lazily evaluated CDF; works for any reward
/// model. Terminal states yield the step function at 0.
pub fn bellman_target_cdf(mrp: &Mrp, table: &QuantileTable, x: usize) -> Result<TargetCdf> {
    check_shape(mrp, table)?;
    if mrp.is_terminal(x) {
        return Ok(TargetCdf {
            state: x,
            reward: RewardModel::dirac(0.0)?,
            components: vec![(1.0, 0.0)],
        });
    }
    let gamma = mrp.gamma();
    let m = table.m();
    let inv_m = 1.0 / m as f64;
    let mut components = Vec::new();
    for (y, &p) in mrp.transition_row(x).iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        for j in 0..m {
            components.push((p * inv_m, gamma * table.get(y, j)));
        }
    }
    Ok(TargetCdf { state: x, reward: mrp.reward(x).clone(), components })
}

/// Classical TD target r + γV(x′) for the value baseline.
pub fn td_target(v: &[f64], t: Transition, gamma: f64) -> f64 {
    t.reward + gamma * v[t.next_state]
}
