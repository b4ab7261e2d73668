//! Quantile dynamic programming: the projected Bellman step Π^λ T and its
//! fixed-point iteration.
//!
//! Two step implementations are provided. The discrete step materializes
//! the target atom list exactly and reads quantiles off the sorted
//! cumulative sums; it requires finite-support rewards. The continuous
//! step root-finds each quantile on the lazily evaluated target CDF by
//! bisection and works for any reward model whose CDF is evaluable.
//!
//! Iterating either step contracts in the per-state sup-Wasserstein-∞
//! metric at rate γ, which turns the successive-difference stopping rule
//! of [`qdp_solve`] into an a-posteriori error bound: stopping when
//! `max|θ_{k+1} − θ_k| ≤ tol·(1−γ)/γ` leaves the iterate within `tol` of
//! the fixed point.

use crate::bellman::{bellman_target_cdf, bellman_target_finite};
use crate::dist::RewardModel;
use crate::error::{Error, Result};
use crate::mdp::Mrp;
use crate::quantile::{project, tau_levels, InterpolationParams, QuantileTable};

/// Default sup-norm tolerance for [`qdp_solve`] on finite-support models.
pub const DEFAULT_TOL_INF: f64 = 1e-10;
/// Default bisection bracket width for the continuous step.
pub const DEFAULT_BISECTION_TOL: f64 = 1e-8;

fn check_lambda_shape(mrp: &Mrp, table: &QuantileTable, lambda: &InterpolationParams) -> Result<()> {
    if lambda.num_states() != mrp.num_states() || lambda.m() != table.m() {
        return Err(Error::Validation(format!(
            "interpolation parameters are {}×{}, expected {}×{}",
            lambda.num_states(),
            lambda.m(),
            mrp.num_states(),
            table.m()
        )));
    }
    Ok(())
}

/// One synchronous step θ ↦ Π^λ T θ with exact target enumeration.
/// Every row of the output is nondecreasing.
pub fn qdp_step_discrete(
    mrp: &Mrp,
    table: &QuantileTable,
    lambda: &InterpolationParams,
) -> Result<QuantileTable> {
    check_lambda_shape(mrp, table, lambda)?;
    let m = table.m();
    let mut rows = Vec::with_capacity(mrp.num_states());
    for x in 0..mrp.num_states() {
        let nu = bellman_target_finite(mrp, table, x)?;
        rows.push(project(&nu, m, lambda.row(x))?);
    }
    QuantileTable::new(rows)
}

/// One synchronous step computed by bisection on the target CDF:
/// θ′(x,i) approximates inf{t : F_target(t) ≥ τ_i} with bracket width
/// ≤ `tol`. Intended for continuous, strictly increasing reward CDFs,
/// where every λ-projection coincides; rows come out nondecreasing.
pub fn qdp_step_continuous(mrp: &Mrp, table: &QuantileTable, tol: f64) -> Result<QuantileTable> {
    if !(tol > 0.0) {
        return Err(Error::Domain(format!("bisection tolerance must be positive, got {tol}")));
    }
    let taus = tau_levels(table.m())?;
    let mut rows = Vec::with_capacity(mrp.num_states());
    for x in 0..mrp.num_states() {
        if mrp.is_terminal(x) {
            rows.push(vec![0.0; table.m()]);
            continue;
        }
        let target = bellman_target_cdf(mrp, table, x)?;
        let (mut lo, mut hi) = initial_bracket(mrp.reward(x), target.components());
        let mut row = Vec::with_capacity(table.m());
        for &tau in &taus {
            // Quantiles are monotone in τ: the previous output is a valid
            // lower end for the next search.
            if let Some(&prev) = row.last() {
                if target.eval(prev) >= tau {
                    row.push(prev);
                    continue;
                }
                lo = prev;
            }
            hi = hi.max(lo);
            lo = expand_down(&target, lo, tau)?;
            hi = expand_up(&target, hi, tau)?;
            while hi - lo > tol {
                let mid = 0.5 * (lo + hi);
                if !(mid > lo && mid < hi) {
                    break;
                }
                if target.eval(mid) >= tau {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            row.push(hi);
            lo = hi;
        }
        rows.push(row);
    }
    QuantileTable::new(rows)
}

/// Initial root bracket: reward support (exact bounds or hint) shifted by
/// the extreme discounted table values.
fn initial_bracket(reward: &RewardModel, components: &[(f64, f64)]) -> (f64, f64) {
    let (s_lo, s_hi) = components
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(_, s)| (lo.min(s), hi.max(s)));
    let (r_lo, r_hi) = match reward {
        RewardModel::Finite(d) => d.support_bounds(),
        RewardModel::Continuous(c) => c.support_hint().unwrap_or((0.0, 0.0)),
    };
    let mut lo = r_lo + s_lo;
    let mut hi = r_hi + s_hi;
    if !(lo < hi) {
        lo -= 0.5;
        hi += 0.5;
    }
    (lo, hi)
}

const MAX_DOUBLINGS: usize = 60;

fn expand_down(target: &crate::bellman::TargetCdf, mut lo: f64, tau: f64) -> Result<f64> {
    let mut step = 1.0;
    for _ in 0..MAX_DOUBLINGS {
        if target.eval(lo) < tau {
            return Ok(lo);
        }
        lo -= step;
        step *= 2.0;
    }
    Err(Error::Numeric(format!(
        "no lower bracket for target quantile τ={tau} after {MAX_DOUBLINGS} doublings"
    )))
}

fn expand_up(target: &crate::bellman::TargetCdf, mut hi: f64, tau: f64) -> Result<f64> {
    let mut step = 1.0;
    for _ in 0..MAX_DOUBLINGS {
        if target.eval(hi) >= tau {
            return Ok(hi);
        }
        hi += step;
        step *= 2.0;
    }
    Err(Error::Numeric(format!(
        "no upper bracket for target quantile τ={tau} after {MAX_DOUBLINGS} doublings"
    )))
}

/// Iterate the projected Bellman step to its fixed point.
///
/// Dispatches to the discrete step when every reward model has finite
/// support and to the continuous step otherwise (with bracket width
/// `min(1e-8, stopping_threshold/10)`). Stops when successive iterates
/// differ by at most `tol_inf·(1−γ)/γ` in sup norm, which bounds the
/// sup-norm distance to the fixed point by `tol_inf`; returns the final
/// table and the number of steps taken.
pub fn qdp_solve(
    mrp: &Mrp,
    lambda: &InterpolationParams,
    init: &QuantileTable,
    tol_inf: f64,
    max_iters: usize,
) -> Result<(QuantileTable, usize)> {
    if !(tol_inf > 0.0) {
        return Err(Error::Domain(format!("tolerance must be positive, got {tol_inf}")));
    }
    check_lambda_shape(mrp, init, lambda)?;
    let gamma = mrp.gamma();
    let threshold =
        if gamma == 0.0 { f64::INFINITY } else { tol_inf * (1.0 - gamma) / gamma };
    let discrete = mrp.has_finite_rewards();
    let bisect_tol = DEFAULT_BISECTION_TOL.min(threshold / 10.0).max(1e-15);
    let mut current = init.clone();
    for iter in 1..=max_iters {
        let next = if discrete {
            qdp_step_discrete(mrp, &current, lambda)?
        } else {
            qdp_step_continuous(mrp, &current, bisect_tol)?
        };
        let diff = next.sup_distance(&current);
        current = next;
        if diff <= threshold {
            return Ok((current, iter));
        }
    }
    Err(Error::NonConvergence { iters: max_iters, last: Box::new(current) })
}

/// Check whether θ is a fixed point of Π^λ T for *some* λ: every θ(x,i)
/// must be a τ_i-quantile of the Bellman target at x, within `tol` on the
/// CDF level.
pub fn is_qdp_fixed_point(mrp: &Mrp, table: &QuantileTable, tol: f64) -> Result<bool> {
    let taus = tau_levels(table.m())?;
    for x in 0..mrp.num_states() {
        let target = bellman_target_cdf(mrp, table, x)?;
        for (i, &tau) in taus.iter().enumerate() {
            let v = table.get(x, i);
            if !(target.eval_left(v) - tol <= tau && tau <= target.eval(v) + tol) {
                return Ok(false);
            }
        }
    }
    Ok(true)
}
