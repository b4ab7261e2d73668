//! Finite Markov decision processes, policies, and the induced Markov
//! reward process.
//!
//! Everything downstream (dynamic programming, stochastic updates,
//! diagnostics) operates on an [`Mrp`]: a row-stochastic transition matrix
//! P(x′|x) together with one reward model per state, so that conditionally
//! on x the reward and the next state are independent. An [`Mdp`] plus a
//! [`Policy`] compiles down to that representation with [`compile_mrp`].
//!
//! Terminal states are modeled as absorbing with a Dirac-0 reward, which
//! keeps every operator total: the return from a terminal state is exactly
//! zero and no code path needs an "episode ended" special value.

use rand::RngCore;

use crate::dist::{ContinuousCdf, FiniteDistribution, RewardModel, PROB_TOL};
use crate::error::{Error, Result};

/// One sampled environment step: in `state`, observed `reward`, moved to
/// `next_state`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub state: usize,
    pub reward: f64,
    pub next_state: usize,
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::Domain(format!("discount must lie in [0,1), got {gamma}")));
    }
    Ok(())
}

fn check_stochastic_row(row: &[f64], num_states: usize, what: &str) -> Result<()> {
    if row.len() != num_states {
        return Err(Error::Validation(format!(
            "{what}: row has length {}, expected {num_states}",
            row.len()
        )));
    }
    let mut total = 0.0;
    for &p in row {
        if !p.is_finite() || p < 0.0 {
            return Err(Error::Validation(format!("{what}: bad probability {p}")));
        }
        total += p;
    }
    if (total - 1.0).abs() > PROB_TOL {
        return Err(Error::Validation(format!(
            "{what}: probabilities sum to {total}, expected 1 within {PROB_TOL}"
        )));
    }
    Ok(())
}

/// Absorbing row e_x used for terminal states.
fn absorbing_row(x: usize, num_states: usize) -> Vec<f64> {
    let mut row = vec![0.0; num_states];
    row[x] = 1.0;
    row
}

/// Finite MDP: transition rows and reward models per state-action pair.
#[derive(Debug, Clone)]
pub struct Mdp {
    transition: Vec<Vec<Vec<f64>>>,
    rewards: Vec<Vec<RewardModel>>,
    gamma: f64,
    terminal: Vec<bool>,
}

impl Mdp {
    /// Build and validate. `transition[x][a]` is a probability vector over
    /// next states and `rewards[x][a]` the reward model for taking action
    /// `a` in `x`. Rows supplied for terminal states are replaced by the
    /// absorbing convention (self-loop, Dirac-0 reward).
    pub fn new(
        transition: Vec<Vec<Vec<f64>>>,
        rewards: Vec<Vec<RewardModel>>,
        gamma: f64,
        terminal: Vec<bool>,
    ) -> Result<Self> {
        check_gamma(gamma)?;
        let num_states = transition.len();
        if num_states == 0 {
            return Err(Error::Validation("MDP needs at least one state".into()));
        }
        if rewards.len() != num_states || terminal.len() != num_states {
            return Err(Error::Validation(format!(
                "shape mismatch: {num_states} transition rows, {} reward rows, {} terminal flags",
                rewards.len(),
                terminal.len()
            )));
        }
        let num_actions = transition[0].len();
        if num_actions == 0 {
            return Err(Error::Validation("MDP needs at least one action".into()));
        }
        let mut transition = transition;
        let mut rewards = rewards;
        for x in 0..num_states {
            if transition[x].len() != num_actions || rewards[x].len() != num_actions {
                return Err(Error::Validation(format!(
                    "state x{} has {} transition rows and {} rewards, expected {num_actions}",
                    x + 1,
                    transition[x].len(),
                    rewards[x].len()
                )));
            }
            if terminal[x] {
                for a in 0..num_actions {
                    transition[x][a] = absorbing_row(x, num_states);
                    rewards[x][a] = RewardModel::dirac(0.0)?;
                }
            } else {
                for (a, row) in transition[x].iter().enumerate() {
                    check_stochastic_row(row, num_states, &format!("state x{} action {a}", x + 1))?;
                }
            }
        }
        Ok(Self { transition, rewards, gamma, terminal })
    }

    pub fn num_states(&self) -> usize {
        self.transition.len()
    }

    pub fn num_actions(&self) -> usize {
        self.transition[0].len()
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn is_terminal(&self, x: usize) -> bool {
        self.terminal[x]
    }

    pub fn terminal_flags(&self) -> &[bool] {
        &self.terminal
    }

    /// Transition probabilities for (x, a).
    pub fn transition_row(&self, x: usize, a: usize) -> &[f64] {
        &self.transition[x][a]
    }

    /// Reward model for (x, a).
    pub fn reward(&self, x: usize, a: usize) -> &RewardModel {
        &self.rewards[x][a]
    }
}

/// Stochastic policy: one probability vector over actions per state.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    probs: Vec<Vec<f64>>,
}

impl Policy {
    /// Build and validate; rows must sum to 1 within `1e-12`.
    pub fn new(probs: Vec<Vec<f64>>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Validation("policy needs at least one state".into()));
        }
        let num_actions = probs[0].len();
        if num_actions == 0 {
            return Err(Error::Validation("policy needs at least one action".into()));
        }
        for (x, row) in probs.iter().enumerate() {
            check_stochastic_row(row, num_actions, &format!("policy row for state x{}", x + 1))?;
        }
        Ok(Self { probs })
    }

    /// Uniform policy over `num_actions` actions in every state.
    pub fn uniform(num_states: usize, num_actions: usize) -> Result<Self> {
        if num_states == 0 || num_actions == 0 {
            return Err(Error::Validation("policy shape must be positive".into()));
        }
        Ok(Self { probs: vec![vec![1.0 / num_actions as f64; num_actions]; num_states] })
    }

    pub fn num_states(&self) -> usize {
        self.probs.len()
    }

    pub fn num_actions(&self) -> usize {
        self.probs[0].len()
    }

    /// Action probabilities in state `x`.
    pub fn probs(&self, x: usize) -> &[f64] {
        &self.probs[x]
    }
}

/// Markov reward process: the policy-induced view of an MDP, or a model
/// built directly when there is only one action.
#[derive(Debug, Clone)]
pub struct Mrp {
    transition: Vec<Vec<f64>>,
    rewards: Vec<RewardModel>,
    gamma: f64,
    terminal: Vec<bool>,
}

impl Mrp {
    /// Build and validate. Rows supplied for terminal states are replaced
    /// by the absorbing convention (self-loop, Dirac-0 reward).
    pub fn new(
        transition: Vec<Vec<f64>>,
        rewards: Vec<RewardModel>,
        gamma: f64,
        terminal: Vec<bool>,
    ) -> Result<Self> {
        check_gamma(gamma)?;
        let num_states = transition.len();
        if num_states == 0 {
            return Err(Error::Validation("MRP needs at least one state".into()));
        }
        if rewards.len() != num_states || terminal.len() != num_states {
            return Err(Error::Validation(format!(
                "shape mismatch: {num_states} transition rows, {} rewards, {} terminal flags",
                rewards.len(),
                terminal.len()
            )));
        }
        let mut transition = transition;
        let mut rewards = rewards;
        for x in 0..num_states {
            if terminal[x] {
                transition[x] = absorbing_row(x, num_states);
                rewards[x] = RewardModel::dirac(0.0)?;
            } else {
                check_stochastic_row(&transition[x], num_states, &format!("state x{}", x + 1))?;
            }
        }
        Ok(Self { transition, rewards, gamma, terminal })
    }

    pub fn num_states(&self) -> usize {
        self.transition.len()
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn is_terminal(&self, x: usize) -> bool {
        self.terminal[x]
    }

    pub fn terminal_flags(&self) -> &[bool] {
        &self.terminal
    }

    /// Transition probabilities out of `x`.
    pub fn transition_row(&self, x: usize) -> &[f64] {
        &self.transition[x]
    }

    /// Reward model at `x`.
    pub fn reward(&self, x: usize) -> &RewardModel {
        &self.rewards[x]
    }

    /// True when every state's reward model has finite support.
    pub fn has_finite_rewards(&self) -> bool {
        self.rewards.iter().all(|r| r.is_finite_support())
    }

    /// Reward support bounds over all states, `None` if any state's reward
    /// is unbounded.
    pub fn reward_bounds(&self) -> Option<(f64, f64)> {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for r in &self.rewards {
            let (a, b) = r.bounded_support()?;
            lo = lo.min(a);
            hi = hi.max(b);
        }
        Some((lo, hi))
    }

    /// Bounds on the achievable return: reward bounds scaled by 1/(1−γ).
    /// Terminal states already contribute 0 through their Dirac-0 reward.
    pub fn return_bounds(&self) -> Option<(f64, f64)> {
        let (r_lo, r_hi) = self.reward_bounds()?;
        let scale = 1.0 / (1.0 - self.gamma);
        Some((r_lo * scale, r_hi * scale))
    }

    /// Largest absolute reward value, `None` if unbounded.
    pub fn max_abs_reward(&self) -> Option<f64> {
        let (lo, hi) = self.reward_bounds()?;
        Some(lo.abs().max(hi.abs()))
    }

    /// Draw one step from `x`: reward from the state's reward model, next
    /// state from the transition row, independently. Terminal states
    /// short-circuit to `(x, 0, x)` without consuming randomness.
    ///
    /// Panics if `x` is out of range.
    pub fn sample_transition(&self, x: usize, rng: &mut dyn RngCore) -> Transition {
        if self.terminal[x] {
            return Transition { state: x, reward: 0.0, next_state: x };
        }
        let reward = self.rewards[x].sample(rng);
        let u: f64 = rand::Rng::random(&mut &mut *rng);
        let row = &self.transition[x];
        let mut acc = 0.0;
        let mut next_state = row.len() - 1;
        for (y, &p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                next_state = y;
                break;
            }
        }
        Transition { state: x, reward, next_state }
    }

    /// Full support of the joint (next state, reward) distribution out of
    /// `x`, as `(next_state, reward_value, probability)` triples.
    /// Probabilities sum to 1.
    ///
    /// Panics if `x` is out of range.
    pub fn enumerate_transitions(&self, x: usize) -> Result<Vec<(usize, f64, f64)>> {
        if self.terminal[x] {
            return Ok(vec![(x, 0.0, 1.0)]);
        }
        let atoms = match &self.rewards[x] {
            RewardModel::Finite(d) => d,
            RewardModel::Continuous(_) => {
                return Err(Error::UnsupportedModel(format!(
                    "cannot enumerate transitions out of x{}: continuous reward model",
                    x + 1
                )));
            }
        };
        let mut out = Vec::new();
        for (y, &p) in self.transition[x].iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            for (&r, &q) in atoms.locations().iter().zip(atoms.probabilities()) {
                out.push((y, r, p * q));
            }
        }
        Ok(out)
    }

    /// Expected discounted return per state, by direct solve of
    /// (I − γP)V = r̄ with r̄ the per-state mean reward.
    pub fn value_function(&self) -> Result<Vec<f64>> {
        let n = self.num_states();
        let mut a = vec![vec![0.0; n]; n];
        let mut b = vec![0.0; n];
        for x in 0..n {
            for y in 0..n {
                a[x][y] = if x == y { 1.0 } else { 0.0 } - self.gamma * self.transition[x][y];
            }
            b[x] = self.rewards[x].mean();
        }
        solve_dense(a, b)
    }
}

/// Compile an MDP and a policy into the induced MRP:
/// P(x′|x) = Σ_a π(a|x) P(x′|x,a), with the reward model at `x` the
/// π(·|x)-weighted mixture of per-action models. Finite-support models are
/// mixed exactly; any continuous component yields a weighted-CDF mixture.
pub fn compile_mrp(mdp: &Mdp, policy: &Policy) -> Result<Mrp> {
    if policy.num_states() != mdp.num_states() || policy.num_actions() != mdp.num_actions() {
        return Err(Error::Validation(format!(
            "policy shape {}×{} does not match MDP shape {}×{}",
            policy.num_states(),
            policy.num_actions(),
            mdp.num_states(),
            mdp.num_actions()
        )));
    }
    let n = mdp.num_states();
    let mut transition = Vec::with_capacity(n);
    let mut rewards = Vec::with_capacity(n);
    for x in 0..n {
        let pi = policy.probs(x);
        let mut row = vec![0.0; n];
        let mut parts: Vec<(f64, RewardModel)> = Vec::new();
        for (a, &w) in pi.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            for (y, &p) in mdp.transition_row(x, a).iter().enumerate() {
                row[y] += w * p;
            }
            parts.push((w, mdp.reward(x, a).clone()));
        }
        let reward = mix_reward_models(parts)?;
        transition.push(row);
        rewards.push(reward);
    }
    Mrp::new(transition, rewards, mdp.gamma(), mdp.terminal_flags().to_vec())
}

/// Weighted mixture of reward models; exact when all parts have finite
/// support, lazy weighted-CDF otherwise.
fn mix_reward_models(parts: Vec<(f64, RewardModel)>) -> Result<RewardModel> {
    match parts.len() {
        0 => Err(Error::Validation("no positive-probability actions".into())),
        1 => Ok(parts.into_iter().next().expect("one part").1),
        _ => {
            if parts.iter().all(|(_, r)| r.is_finite_support()) {
                let finite: Vec<(f64, FiniteDistribution)> = parts
                    .into_iter()
                    .map(|(w, r)| match r {
                        RewardModel::Finite(d) => (w, d),
                        RewardModel::Continuous(_) => unreachable!("checked finite"),
                    })
                    .collect();
                Ok(RewardModel::Finite(FiniteDistribution::mix(&finite)?))
            } else {
                Ok(RewardModel::Continuous(ContinuousCdf::mixture(parts)?))
            }
        }
    }
}

/// Solve `A v = b` by Gaussian elimination with partial pivoting. The
/// matrices here are I − γP with γ < 1, strictly diagonally dominant, so
/// a vanishing pivot indicates a bug rather than an input problem.
fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Result<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .expect("non-empty range");
        if a[pivot][col].abs() < 1e-300 {
            return Err(Error::Numeric(format!("singular linear system at column {col}")));
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut v = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for k in row + 1..n {
            acc -= a[row][k] * v[k];
        }
        v[row] = acc / a[row][row];
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn two_state_mdp() -> Mdp {
        // Two actions: a1 goes to x1, a2 goes to x2.
        let transition = vec![
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
        ];
        let rewards = vec![
            vec![RewardModel::dirac(2.0).unwrap(), RewardModel::dirac(-1.0).unwrap()],
            vec![RewardModel::dirac(0.0).unwrap(), RewardModel::dirac(0.0).unwrap()],
        ];
        Mdp::new(transition, rewards, 0.9, vec![false, false]).unwrap()
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(Mdp::new(vec![], vec![], 0.5, vec![]).is_err());
        let bad_gamma = Mrp::new(
            vec![vec![1.0]],
            vec![RewardModel::dirac(0.0).unwrap()],
            1.0,
            vec![false],
        );
        assert!(bad_gamma.is_err());
        let bad_row = Mrp::new(
            vec![vec![0.4, 0.4]],
            vec![RewardModel::dirac(0.0).unwrap(), RewardModel::dirac(0.0).unwrap()],
            0.5,
            vec![false, false],
        );
        assert!(bad_row.is_err());
        assert!(Policy::new(vec![vec![0.3, 0.3]]).is_err());
    }

    #[test]
    fn uniform_policy_mixes_rows_and_rewards() {
        let mdp = two_state_mdp();
        let pi = Policy::uniform(2, 2).unwrap();
        let mrp = compile_mrp(&mdp, &pi).unwrap();
        assert_eq!(mrp.transition_row(0), &[0.5, 0.5]);
        match mrp.reward(0) {
            RewardModel::Finite(d) => {
                assert_eq!(d.locations(), &[-1.0, 2.0]);
                assert_eq!(d.probabilities(), &[0.5, 0.5]);
            }
            RewardModel::Continuous(_) => panic!("expected exact finite mixture"),
        }
    }

    #[test]
    fn deterministic_policy_keeps_matrices() {
        let mdp = two_state_mdp();
        let pi = Policy::new(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let mrp = compile_mrp(&mdp, &pi).unwrap();
        assert_eq!(mrp.transition_row(0), &[1.0, 0.0]);
        assert_eq!(mrp.transition_row(1), &[0.0, 1.0]);
    }

    #[test]
    fn terminal_states_become_absorbing() {
        let mrp = Mrp::new(
            vec![vec![0.0, 1.0], vec![0.7, 0.3]],
            vec![RewardModel::dirac(1.0).unwrap(), RewardModel::dirac(5.0).unwrap()],
            0.9,
            vec![false, true],
        )
        .unwrap();
        assert_eq!(mrp.transition_row(1), &[0.0, 1.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let t = mrp.sample_transition(1, &mut rng);
        assert_eq!(t, Transition { state: 1, reward: 0.0, next_state: 1 });
        assert_eq!(mrp.enumerate_transitions(1).unwrap(), vec![(1, 0.0, 1.0)]);
    }

    #[test]
    fn sampling_matches_model() {
        let mrp = Mrp::new(
            vec![vec![1.0]],
            vec![RewardModel::Finite(
                FiniteDistribution::new([(0.0, 0.5), (1.0, 0.5)]).unwrap(),
            )],
            0.5,
            vec![false],
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let mean: f64 =
            (0..n).map(|_| mrp.sample_transition(0, &mut rng).reward).sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() < 0.01, "empirical mean {mean}");
    }

    #[test]
    fn deterministic_mrp_samples_are_fixed() {
        let mrp = Mrp::new(
            vec![vec![0.0, 1.0], vec![1.0, 0.0]],
            vec![RewardModel::dirac(3.0).unwrap(), RewardModel::dirac(-1.0).unwrap()],
            0.5,
            vec![false, false],
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..20 {
            let t = mrp.sample_transition(0, &mut rng);
            assert_eq!((t.reward, t.next_state), (3.0, 1));
        }
    }

    #[test]
    fn enumeration_products() {
        let mrp = Mrp::new(
            vec![vec![0.5, 0.5], vec![1.0, 0.0]],
            vec![
                RewardModel::dirac(2.0).unwrap(),
                RewardModel::Finite(FiniteDistribution::new([(0.0, 0.5), (1.0, 0.5)]).unwrap()),
            ],
            0.9,
            vec![false, false],
        )
        .unwrap();
        assert_eq!(mrp.enumerate_transitions(0).unwrap(), vec![(0, 2.0, 0.5), (1, 2.0, 0.5)]);
        assert_eq!(mrp.enumerate_transitions(1).unwrap(), vec![(0, 0.0, 0.5), (0, 1.0, 0.5)]);
        for x in 0..2 {
            let total: f64 =
                mrp.enumerate_transitions(x).unwrap().iter().map(|&(_, _, p)| p).sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn enumeration_rejects_continuous_rewards() {
        let mrp = Mrp::new(
            vec![vec![1.0]],
            vec![RewardModel::gaussian(0.0, 1.0).unwrap()],
            0.5,
            vec![false],
        )
        .unwrap();
        assert!(matches!(mrp.enumerate_transitions(0), Err(Error::UnsupportedModel(_))));
    }

    #[test]
    fn value_of_self_loop() {
        let mrp = Mrp::new(
            vec![vec![1.0]],
            vec![RewardModel::dirac(1.0).unwrap()],
            0.5,
            vec![false],
        )
        .unwrap();
        assert_eq!(mrp.value_function().unwrap(), vec![2.0]);
    }

    #[test]
    fn value_zero_at_terminal() {
        let mrp = Mrp::new(
            vec![vec![0.0, 1.0], vec![0.0, 0.0]],
            vec![RewardModel::dirac(3.0).unwrap(), RewardModel::dirac(9.0).unwrap()],
            0.5,
            vec![false, true],
        )
        .unwrap();
        let v = mrp.value_function().unwrap();
        assert_eq!(v[1], 0.0);
        assert!((v[0] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn return_bounds_scale_rewards() {
        let mrp = Mrp::new(
            vec![vec![1.0]],
            vec![RewardModel::uniform(0.0, 1.0).unwrap()],
            0.5,
            vec![false],
        )
        .unwrap();
        assert_eq!(mrp.return_bounds(), Some((0.0, 2.0)));
        let unbounded = Mrp::new(
            vec![vec![1.0]],
            vec![RewardModel::gaussian(0.0, 1.0).unwrap()],
            0.5,
            vec![false],
        )
        .unwrap();
        assert_eq!(unbounded.return_bounds(), None);
    }
}
