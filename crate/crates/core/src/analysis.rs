//! Ground truth and diagnostics: truncated-horizon Monte Carlo return
//! distributions, Wasserstein-1 gap measurement against the a-priori
//! fixed-point approximation bound, distance to the fixed-point family,
//! and atom-level back-up diagrams of deterministic-reward fixed points.

use rand::{Rng, RngCore};

use crate::bellman::bellman_target_cdf;
use crate::dist::FiniteDistribution;
use crate::dynamics::lyapunov_general;
use crate::error::{Error, Result};
use crate::mdp::Mrp;
use crate::qdp::{is_qdp_fixed_point, qdp_solve};
use crate::quantile::{tau_levels, InterpolationParams, QuantileTable};

/// Truncation error target for Monte Carlo return sampling.
pub const MC_TRUNCATION: f64 = 1e-6;
const BOOTSTRAP_RESAMPLES: usize = 20;
const BOUND_SOLVE_TOL: f64 = 1e-9;
const BOUND_SOLVE_ITERS: usize = 1_000_000;

/// Measured Wasserstein-1 gap against the closed-form bound.
///
/// `bound` is (v_max − v_min)/(2m(1−γ)), scaled by (1 − γ^k) when the
/// model is declared deterministic after `k` steps. `mc_margin` is the
/// slack attributable to the measurement itself: the Monte Carlo
/// truncation target plus three bootstrap standard deviations of the
/// measured gap.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub measured_w1: f64,
    pub bound: f64,
    pub m: usize,
    pub gamma: f64,
    pub v_min: f64,
    pub v_max: f64,
    pub k: Option<usize>,
    pub mc_margin: f64,
}

impl BoundReport {
    /// Whether the measurement respects the bound up to measurement slack.
    pub fn holds(&self) -> bool {
        self.measured_w1 <= self.bound + self.mc_margin
    }

    /// Line-oriented plain-text form, one `key value` pair per line.
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("measured_w1 {}\n", self.measured_w1));
        out.push_str(&format!("bound {}\n", self.bound));
        out.push_str(&format!("m {}\n", self.m));
        out.push_str(&format!("gamma {}\n", self.gamma));
        out.push_str(&format!("v_min {}\n", self.v_min));
        out.push_str(&format!("v_max {}\n", self.v_max));
        match self.k {
            Some(k) => out.push_str(&format!("deterministic_after_k {k}\n")),
            None => out.push_str("deterministic_after_k none\n"),
        }
        out.push_str(&format!("mc_margin {}\n", self.mc_margin));
        out.push_str(&format!("holds {}\n", self.holds()));
        out
    }
}

/// One incoming arrow of a back-up diagram: the target atom
/// reward + γ·θ(source_state, source_i) that lands exactly on the
/// diagrammed coordinate, with its probability weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BackupEdge {
    pub source_state: usize,
    pub source_i: usize,
    pub reward: f64,
    pub weight: f64,
}

/// Atom-level structure of a fixed point with deterministic-support
/// rewards: which target atoms each coordinate backs up from.
#[derive(Debug, Clone, PartialEq)]
pub struct BackupDiagram {
    edges: Vec<Vec<Vec<BackupEdge>>>,
    resolved: Vec<Vec<bool>>,
}

impl BackupDiagram {
    /// Edges feeding coordinate (x,i).
    pub fn edges(&self, x: usize, i: usize) -> &[BackupEdge] {
        &self.edges[x][i]
    }

    /// Whether any target atom matched coordinate (x,i). A coordinate in
    /// the interior of a flat stretch of the target CDF has no matching
    /// atom and stays unresolved.
    pub fn resolved(&self, x: usize, i: usize) -> bool {
        self.resolved[x][i]
    }

    pub fn num_states(&self) -> usize {
        self.edges.len()
    }

    pub fn m(&self) -> usize {
        self.edges.first().map_or(0, |row| row.len())
    }
}

/// Smallest horizon H with γ^H·r_abs/(1−γ) ≤ epsilon: truncating returns
/// after H steps keeps the discarded tail below `epsilon`.
pub fn truncation_horizon(gamma: f64, r_abs: f64, epsilon: f64) -> usize {
    if gamma <= 0.0 || r_abs <= 0.0 {
        return 1;
    }
    let ratio = epsilon * (1.0 - gamma) / r_abs;
    if ratio >= 1.0 {
        return 1;
    }
    (ratio.ln() / gamma.ln()).ceil().max(1.0) as usize
}

/// One truncated discounted return sampled from `x`. Stops early on
/// terminal absorption, which contributes exactly zero reward.
pub fn sample_truncated_return(mrp: &Mrp, x: usize, horizon: usize, rng: &mut dyn RngCore) -> f64 {
    let mut state = x;
    let mut acc = 0.0;
    let mut discount = 1.0;
    for _ in 0..horizon {
        if mrp.is_terminal(state) {
            break;
        }
        let t = mrp.sample_transition(state, rng);
        acc += discount * t.reward;
        discount *= mrp.gamma();
        state = t.next_state;
    }
    acc
}

/// Empirical distribution of `n_samples` truncated returns from `x`.
pub fn monte_carlo_returns(
    mrp: &Mrp,
    x: usize,
    horizon: usize,
    n_samples: usize,
    rng: &mut dyn RngCore,
) -> Result<FiniteDistribution> {
    if n_samples == 0 {
        return Err(Error::Domain("need at least one return sample".into()));
    }
    let samples: Vec<f64> =
        (0..n_samples).map(|_| sample_truncated_return(mrp, x, horizon, rng)).collect();
    FiniteDistribution::empirical(&samples)
}

fn bootstrap_resample(
    dist: &FiniteDistribution,
    n: usize,
    rng: &mut dyn RngCore,
) -> Result<FiniteDistribution> {
    let cumulative: Vec<f64> = dist
        .probabilities()
        .iter()
        .scan(0.0, |acc, p| {
            *acc += p;
            Some(*acc)
        })
        .collect();
    let mut counts = vec![0usize; dist.len()];
    for _ in 0..n {
        let u: f64 = rng.random();
        let idx = cumulative.partition_point(|&c| c <= u).min(dist.len() - 1);
        counts[idx] += 1;
    }
    let inv_n = 1.0 / n as f64;
    FiniteDistribution::new(
        dist.locations()
            .iter()
            .zip(&counts)
            .filter(|(_, &c)| c > 0)
            .map(|(&loc, &c)| (loc, c as f64 * inv_n)),
    )
}

/// Measure the worst-state Wasserstein-1 gap between the interpolated
/// fixed point and Monte Carlo ground truth, and compare it to the
/// closed-form bound. Requires bounded reward supports; the bound is
/// meaningless otherwise.
pub fn check_w1_bound(
    mrp: &Mrp,
    m: usize,
    lambda: &InterpolationParams,
    n_samples: usize,
    deterministic_after_k: Option<usize>,
    rng: &mut dyn RngCore,
) -> Result<BoundReport> {
    let (v_min, v_max) = mrp.return_bounds().ok_or_else(|| {
        Error::UnsupportedModel("approximation bound needs bounded reward supports".into())
    })?;
    if n_samples == 0 {
        return Err(Error::Domain("need at least one return sample".into()));
    }
    let gamma = mrp.gamma();
    let mut bound = (v_max - v_min) / (2.0 * m as f64 * (1.0 - gamma));
    if let Some(k) = deterministic_after_k {
        bound *= 1.0 - gamma.powi(k as i32);
    }

    let init = QuantileTable::zeros(mrp.num_states(), m)?;
    let (fixed, _) = qdp_solve(mrp, lambda, &init, BOUND_SOLVE_TOL, BOUND_SOLVE_ITERS)?;

    let r_abs = mrp.max_abs_reward().expect("bounded by reward_bounds check");
    let horizon = truncation_horizon(gamma, r_abs, MC_TRUNCATION);
    let mut measured_w1: f64 = 0.0;
    let mut bootstrap_max = [0.0f64; BOOTSTRAP_RESAMPLES];
    for x in 0..mrp.num_states() {
        let truth = monte_carlo_returns(mrp, x, horizon, n_samples, rng)?;
        let approx = fixed.to_distribution(x)?;
        measured_w1 = measured_w1.max(approx.wasserstein1(&truth));
        for slot in bootstrap_max.iter_mut() {
            let resampled = bootstrap_resample(&truth, n_samples, rng)?;
            *slot = slot.max(approx.wasserstein1(&resampled));
        }
    }
    let mean = bootstrap_max.iter().sum::<f64>() / BOOTSTRAP_RESAMPLES as f64;
    let var = bootstrap_max.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
        / (BOOTSTRAP_RESAMPLES - 1) as f64;
    let mc_margin = MC_TRUNCATION + 3.0 * var.sqrt();

    Ok(BoundReport {
        measured_w1,
        bound,
        m,
        gamma,
        v_min,
        v_max,
        k: deterministic_after_k,
        mc_margin,
    })
}

/// Distance from `table` to the fixed-point family; the convergence
/// diagnostic used by run summaries. Identical to [`lyapunov_general`].
pub fn distance_to_fixed_point_set(
    mrp: &Mrp,
    table: &QuantileTable,
    lambda_samples: usize,
    rng: &mut dyn RngCore,
) -> Result<f64> {
    lyapunov_general(mrp, table, lambda_samples, rng)
}

fn build_backup_diagram(
    mrp: &Mrp,
    fixed_point: &QuantileTable,
    tolerance: Option<f64>,
) -> Result<BackupDiagram> {
    if !mrp.has_finite_rewards() {
        return Err(Error::Validation(
            "back-up diagrams need finite reward supports".into(),
        ));
    }
    if fixed_point.num_states() != mrp.num_states() {
        return Err(Error::Validation(format!(
            "table has {} states, model has {}",
            fixed_point.num_states(),
            mrp.num_states()
        )));
    }
    match tolerance {
        None => {
            if !is_qdp_fixed_point(mrp, fixed_point, 1e-9)? {
                return Err(Error::Validation("table is not a fixed point".into()));
            }
        }
        // A probability-domain check would reject tables whose solver
        // round-off puts a coordinate an ulp below its own target atom
        // (the CDF jumps by the atom's whole mass there). Ask instead
        // that a true τ_i-quantile lies within the matching tolerance of
        // every coordinate.
        Some(tol) => {
            let taus = tau_levels(fixed_point.m())?;
            for x in 0..mrp.num_states() {
                let target = bellman_target_cdf(mrp, fixed_point, x)?;
                for (i, &tau) in taus.iter().enumerate() {
                    let theta = fixed_point.get(x, i);
                    if !(target.eval(theta + tol) >= tau && target.eval_left(theta - tol) <= tau)
                    {
                        return Err(Error::Validation(format!(
                            "coordinate (x{}, {}) is more than {tol} from a fixed point",
                            x + 1,
                            i + 1
                        )));
                    }
                }
            }
        }
    }
    let m = fixed_point.m();
    let gamma = mrp.gamma();
    let inv_m = 1.0 / m as f64;
    let matches = |value: f64, theta: f64| match tolerance {
        None => value == theta,
        Some(tol) => (value - theta).abs() <= tol,
    };
    let mut edges = Vec::with_capacity(mrp.num_states());
    let mut resolved = Vec::with_capacity(mrp.num_states());
    for x in 0..mrp.num_states() {
        let atoms = mrp.enumerate_transitions(x)?;
        let mut state_edges = Vec::with_capacity(m);
        let mut state_resolved = Vec::with_capacity(m);
        for i in 0..m {
            let theta = fixed_point.get(x, i);
            let mut coord_edges = Vec::new();
            for &(y, r, p) in &atoms {
                for j in 0..m {
                    if matches(r + gamma * fixed_point.get(y, j), theta) {
                        coord_edges.push(BackupEdge {
                            source_state: y,
                            source_i: j,
                            reward: r,
                            weight: p * inv_m,
                        });
                    }
                }
            }
            state_resolved.push(!coord_edges.is_empty());
            state_edges.push(coord_edges);
        }
        edges.push(state_edges);
        resolved.push(state_resolved);
    }
    Ok(BackupDiagram { edges, resolved })
}

/// Back-up diagram with exact (bitwise) atom matching. At a fixed point
/// of a deterministic-reward model every matching atom is produced by the
/// same arithmetic that produced θ(x,i), so exact equality is the honest
/// test; coordinates with no match are reported unresolved, not errors.
pub fn backup_diagram(mrp: &Mrp, fixed_point: &QuantileTable) -> Result<BackupDiagram> {
    build_backup_diagram(mrp, fixed_point, None)
}

/// Back-up diagram matching atoms within an absolute tolerance, for
/// tables that carry solver round-off.
pub fn backup_diagram_with_tolerance(
    mrp: &Mrp,
    fixed_point: &QuantileTable,
    tolerance: f64,
) -> Result<BackupDiagram> {
    if !(tolerance >= 0.0) {
        return Err(Error::Domain(format!("tolerance must be nonnegative, got {tolerance}")));
    }
    build_backup_diagram(mrp, fixed_point, Some(tolerance))
}

/// Worst-case CDF distance factor of a quantile-level vector:
/// max(τ₁, max_i (τ_{i+1} − τ_i)/2, 1 − τ_m). The evenly spread midpoint
/// levels minimise this at 1/(2m).
pub fn bound_factor(taus: &[f64]) -> Result<f64> {
    if taus.is_empty() {
        return Err(Error::Domain("need at least one quantile level".into()));
    }
    for pair in taus.windows(2) {
        if !(pair[0] <= pair[1]) {
            return Err(Error::Domain("quantile levels must be sorted ascending".into()));
        }
    }
    if !(taus[0] > 0.0) || !(taus[taus.len() - 1] < 1.0) {
        return Err(Error::Domain("quantile levels must lie strictly inside (0, 1)".into()));
    }
    let mut factor = taus[0].max(1.0 - taus[taus.len() - 1]);
    for pair in taus.windows(2) {
        factor = factor.max((pair[1] - pair[0]) / 2.0);
    }
    Ok(factor)
}
