//! Stochastic quantile learning: the QTD row update, synchronous and
//! asynchronous run loops, and the Monte Carlo / classical-TD baselines.
//!
//! The QTD increment at coordinate (x,i) for a sampled transition
//! (x, r, x′) is α·(1/m)·Σ_j [τ_i − 1{r + γθ(x′,j) − θ(x,i) < 0}].
//! The inequality is strict: a target atom exactly equal to θ(x,i)
//! contributes τ_i rather than τ_i − 1, which is what makes quantile-set
//! interiors attainable rest points of the associated differential
//! inclusion. All indicators in one update read the pre-update table.
//!
//! Reproducibility: runs are seeded with a single integer; state x draws
//! its transitions from stream x+1 of a counter-based generator seeded
//! with that integer, and control flow (state selection, episode resets)
//! uses stream 0. Synchronous and asynchronous runs therefore see
//! identical per-state sample sequences, and on a single-state model they
//! produce identical trajectories.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bellman::td_target;
use crate::error::{Error, Result};
use crate::mdp::{Mrp, Transition};
use crate::quantile::{tau_levels, QuantileTable};

/// Step-size sequence α_k.
#[derive(Debug, Clone, PartialEq)]
pub enum StepSchedule {
    /// α_k = c/(1+k)^ρ with ρ ∈ (0.5, 1]: satisfies Σα_k = ∞ and
    /// α_k = o(1/log k), and keeps per-state subsequences usable.
    Polynomial { c: f64, rho: f64 },
    /// α_k = α. Does not meet the convergence conditions; for
    /// experiments only.
    Constant { alpha: f64 },
}

impl StepSchedule {
    /// Polynomial schedule c/(1+k)^ρ, requiring c > 0 and ρ ∈ (0.5, 1].
    pub fn polynomial(c: f64, rho: f64) -> Result<Self> {
        if !(c > 0.0) || !c.is_finite() {
            return Err(Error::Domain(format!("schedule scale must be positive, got {c}")));
        }
        if !(rho > 0.5 && rho <= 1.0) {
            return Err(Error::Domain(format!("schedule exponent must lie in (0.5, 1], got {rho}")));
        }
        Ok(Self::Polynomial { c, rho })
    }

    /// Constant schedule, requiring α > 0.
    pub fn constant(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::Domain(format!("step size must be positive, got {alpha}")));
        }
        Ok(Self::Constant { alpha })
    }

    /// Default schedule used by the experiment configs: polynomial(0.5, 0.7).
    pub fn default_polynomial() -> Self {
        Self::Polynomial { c: 0.5, rho: 0.7 }
    }

    /// Step size for (zero-based) step k.
    pub fn alpha(&self, k: usize) -> f64 {
        match *self {
            Self::Polynomial { c, rho } => c / (1.0 + k as f64).powf(rho),
            Self::Constant { alpha } => alpha,
        }
    }
}

/// How the asynchronous run picks the state to update.
#[derive(Debug, Clone, PartialEq)]
pub enum StateSource {
    /// Follow sampled trajectories; terminal visits reset to a uniformly
    /// random state.
    Trajectory,
    /// Draw the state i.i.d. from fixed positive weights each step.
    Iid(Vec<f64>),
}

/// Everything a run produces: periodic table snapshots, the final table,
/// and the seed that reproduces it.
#[derive(Debug, Clone)]
pub struct RunRecord {
    snapshots: Vec<(usize, QuantileTable)>,
    final_table: QuantileTable,
    seed: u64,
}

impl RunRecord {
    /// Snapshots as (step, table), strictly increasing in step. Always
    /// contains the initial table at step 0 and the final table at the
    /// last step.
    pub fn snapshots(&self) -> &[(usize, QuantileTable)] {
        &self.snapshots
    }

    /// Table after the last step.
    pub fn final_table(&self) -> &QuantileTable {
        &self.final_table
    }

    /// Seed the run was started from.
    pub fn seed(&self) -> u64 {
        self.seed
    }
}

/// One ChaCha stream per state (stream x+1), plus stream 0 for control
/// flow; all derived from one seed.
fn per_state_rngs(seed: u64, num_states: usize) -> Vec<ChaCha8Rng> {
    (0..num_states)
        .map(|x| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(x as u64 + 1);
            rng
        })
        .collect()
}

fn control_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0);
    rng
}

/// QTD increments for row `t.state`, all indicators evaluated against
/// `table`.
fn qtd_row_increments(table: &QuantileTable, t: Transition, alpha: f64, gamma: f64) -> Vec<f64> {
    let m = table.m();
    let taus = tau_levels(m).expect("m ≥ 1 by table invariant");
    let row = table.row(t.state);
    let next = table.row(t.next_state);
    let inv_m = 1.0 / m as f64;
    taus.iter()
        .enumerate()
        .map(|(i, &tau)| {
            let mut acc = 0.0;
            for &theta_next in next {
                let indicator = if t.reward + gamma * theta_next - row[i] < 0.0 { 1.0 } else { 0.0 };
                acc += tau - indicator;
            }
            alpha * inv_m * acc
        })
        .collect()
}

/// One QTD update for a sampled transition; only row `t.state` changes.
/// The per-coordinate increment always lies in [−α(1−τ_i), ατ_i].
pub fn qtd_update(table: &QuantileTable, t: Transition, alpha: f64, gamma: f64) -> QuantileTable {
    debug_assert!(alpha >= 0.0, "negative step size {alpha}");
    let inc = qtd_row_increments(table, t, alpha, gamma);
    let mut out = table.clone();
    let row = out.row_mut(t.state);
    for (v, d) in row.iter_mut().zip(inc) {
        *v += d;
    }
    out
}

fn check_run_shapes(mrp: &Mrp, m: usize, init: &QuantileTable) -> Result<()> {
    if init.num_states() != mrp.num_states() || init.m() != m {
        return Err(Error::Validation(format!(
            "initial table is {}×{}, expected {}×{}",
            init.num_states(),
            init.m(),
            mrp.num_states(),
            m
        )));
    }
    Ok(())
}

struct SnapshotLog {
    snapshots: Vec<(usize, QuantileTable)>,
    every: usize,
}

impl SnapshotLog {
    fn new(init: &QuantileTable, every: usize) -> Self {
        Self { snapshots: vec![(0, init.clone())], every }
    }

    fn record(&mut self, step: usize, table: &QuantileTable) {
        if self.every > 0 && step % self.every == 0 {
            self.snapshots.push((step, table.clone()));
        }
    }

    fn finish(mut self, steps: usize, table: &QuantileTable) -> Vec<(usize, QuantileTable)> {
        if self.snapshots.last().map(|(s, _)| *s) != Some(steps) {
            self.snapshots.push((steps, table.clone()));
        }
        self.snapshots
    }
}

/// Synchronous QTD: at every step each state applies the row update from
/// its own independently sampled transition, with all indicator
/// evaluations against the step's starting table.
pub fn run_synchronous(
    mrp: &Mrp,
    m: usize,
    schedule: &StepSchedule,
    steps: usize,
    init: &QuantileTable,
    seed: u64,
    snapshot_every: usize,
) -> Result<RunRecord> {
    check_run_shapes(mrp, m, init)?;
    let mut rngs = per_state_rngs(seed, mrp.num_states());
    let mut table = init.clone();
    let mut log = SnapshotLog::new(init, snapshot_every);
    for k in 0..steps {
        let alpha = schedule.alpha(k);
        let mut next = table.clone();
        for (x, rng) in rngs.iter_mut().enumerate() {
            let t = mrp.sample_transition(x, rng);
            let inc = qtd_row_increments(&table, t, alpha, mrp.gamma());
            let row = next.row_mut(x);
            for (v, d) in row.iter_mut().zip(inc) {
                *v += d;
            }
        }
        table = next;
        log.record(k + 1, &table);
    }
    Ok(RunRecord { snapshots: log.finish(steps, &table), final_table: table, seed })
}

/// Check that every state can reach every other through transition edges,
/// with terminal states linking to all states via the uniform reset.
fn check_all_reachable(mrp: &Mrp) -> Result<()> {
    let n = mrp.num_states();
    for start in 0..n {
        let mut seen = vec![false; n];
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(x) = stack.pop() {
            let push = |y: usize, seen: &mut Vec<bool>, stack: &mut Vec<usize>| {
                if !seen[y] {
                    seen[y] = true;
                    stack.push(y);
                }
            };
            if mrp.is_terminal(x) {
                for y in 0..n {
                    push(y, &mut seen, &mut stack);
                }
            } else {
                for (y, &p) in mrp.transition_row(x).iter().enumerate() {
                    if p > 0.0 {
                        push(y, &mut seen, &mut stack);
                    }
                }
            }
        }
        if let Some(missing) = seen.iter().position(|&s| !s) {
            return Err(Error::Validation(format!(
                "state x{} is unreachable from x{} under trajectory sampling",
                missing + 1,
                start + 1
            )));
        }
    }
    Ok(())
}

/// Asynchronous QTD: one state updated per step, each state consuming its
/// own step-size sequence through a per-state visit counter.
pub fn run_asynchronous(
    mrp: &Mrp,
    m: usize,
    schedule: &StepSchedule,
    steps: usize,
    init: &QuantileTable,
    seed: u64,
    state_source: &StateSource,
    snapshot_every: usize,
) -> Result<RunRecord> {
    check_run_shapes(mrp, m, init)?;
    let n = mrp.num_states();
    let weights = match state_source {
        StateSource::Trajectory => {
            check_all_reachable(mrp)?;
            None
        }
        StateSource::Iid(w) => {
            if w.len() != n {
                return Err(Error::Validation(format!(
                    "{} state weights for {n} states",
                    w.len()
                )));
            }
            if w.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
                return Err(Error::Validation("state weights must be strictly positive".into()));
            }
            let total: f64 = w.iter().sum();
            Some(w.iter().map(|v| v / total).collect::<Vec<_>>())
        }
    };
    let mut rngs = per_state_rngs(seed, n);
    let mut control = control_rng(seed);
    let mut counts = vec![0usize; n];
    let mut table = init.clone();
    let mut log = SnapshotLog::new(init, snapshot_every);
    // Trajectory mode starts from a uniformly random state.
    let mut current: usize = control.random_range(0..n);
    for k in 0..steps {
        let x = match &weights {
            Some(w) => sample_index(w, &mut control),
            None => current,
        };
        let t = mrp.sample_transition(x, &mut rngs[x]);
        let alpha = schedule.alpha(counts[x]);
        counts[x] += 1;
        let inc = qtd_row_increments(&table, t, alpha, mrp.gamma());
        let row = table.row_mut(x);
        for (v, d) in row.iter_mut().zip(inc) {
            *v += d;
        }
        if weights.is_none() {
            current = if mrp.is_terminal(x) { control.random_range(0..n) } else { t.next_state };
        }
        log.record(k + 1, &table);
    }
    Ok(RunRecord { snapshots: log.finish(steps, &table), final_table: table, seed })
}

fn sample_index(weights: &[f64], rng: &mut dyn RngCore) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.len() - 1
}

/// Synchronous Monte Carlo quantile regression: every step each state
/// updates its row against an independently sampled truncated return,
/// bypassing bootstrapping entirely.
pub fn run_monte_carlo(
    mrp: &Mrp,
    m: usize,
    schedule: &StepSchedule,
    steps: usize,
    init: &QuantileTable,
    seed: u64,
    horizon: usize,
    snapshot_every: usize,
) -> Result<RunRecord> {
    check_run_shapes(mrp, m, init)?;
    let taus = tau_levels(m)?;
    let mut rngs = per_state_rngs(seed, mrp.num_states());
    let mut table = init.clone();
    let mut log = SnapshotLog::new(init, snapshot_every);
    for k in 0..steps {
        let alpha = schedule.alpha(k);
        let mut next = table.clone();
        for (x, rng) in rngs.iter_mut().enumerate() {
            let g = crate::analysis::sample_truncated_return(mrp, x, horizon, rng);
            let row_now = table.row(x);
            let row = next.row_mut(x);
            for i in 0..m {
                let indicator = if g < row_now[i] { 1.0 } else { 0.0 };
                row[i] += alpha * (taus[i] - indicator);
            }
        }
        table = next;
        log.record(k + 1, &table);
    }
    Ok(RunRecord { snapshots: log.finish(steps, &table), final_table: table, seed })
}

/// Monte Carlo quantile-regression update of row `x` against a sampled
/// full return: θ(x,i) += α(τ_i − 1{g < θ(x,i)}).
pub fn mc_quantile_update(
    table: &QuantileTable,
    x: usize,
    return_sample: f64,
    alpha: f64,
) -> QuantileTable {
    debug_assert!(alpha >= 0.0, "negative step size {alpha}");
    let taus = tau_levels(table.m()).expect("m ≥ 1 by table invariant");
    let mut out = table.clone();
    let row = out.row_mut(x);
    for (v, &tau) in row.iter_mut().zip(&taus) {
        let indicator = if return_sample < *v { 1.0 } else { 0.0 };
        *v += alpha * (tau - indicator);
    }
    out
}

/// Synchronous classical TD on the value function, the scalar baseline:
/// every state per step applies V(x) += α(r + γV(x′) − V(x)) from an
/// independent transition, reading the step's starting values.
pub fn td_run(
    mrp: &Mrp,
    schedule: &StepSchedule,
    steps: usize,
    init: &[f64],
    seed: u64,
) -> Result<Vec<f64>> {
    if init.len() != mrp.num_states() {
        return Err(Error::Validation(format!(
            "initial values have length {}, expected {}",
            init.len(),
            mrp.num_states()
        )));
    }
    let mut rngs = per_state_rngs(seed, mrp.num_states());
    let mut v = init.to_vec();
    for k in 0..steps {
        let alpha = schedule.alpha(k);
        let mut next = v.clone();
        for (x, rng) in rngs.iter_mut().enumerate() {
            let t = mrp.sample_transition(x, rng);
            next[x] += alpha * (td_target(&v, t, mrp.gamma()) - v[x]);
        }
        v = next;
    }
    Ok(v)
}
