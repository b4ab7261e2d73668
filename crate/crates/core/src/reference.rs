//! Slow reference implementations used for differential testing: direct
//! cumulative scans over explicit atom lists. These favour obviousness
//! over speed, share no code with the production routines, and exist so
//! tests can cross-check the optimized paths against an independently
//! written oracle of the same definitions.

use crate::error::Result;
use crate::mdp::Mrp;
use crate::quantile::{InterpolationParams, QuantileTable};

/// Canonical form of an atom list: sorted by value with equal values
/// merged. A distribution does not distinguish how mass at a point was
/// delivered, so grouping is a no-op mathematically; doing it before the
/// scan also pins down the float summation order so that exact rational
/// ties (cumulative mass landing precisely on a quantile level) resolve
/// the same way no matter how the caller split the atoms.
fn canonical(atoms: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut sorted = atoms.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut merged: Vec<(f64, f64)> = Vec::with_capacity(sorted.len());
    for (v, p) in sorted {
        match merged.last_mut() {
            Some(last) if last.0 == v => last.1 += p,
            _ => merged.push((v, p)),
        }
    }
    merged
}

/// Least τ-quantile by scan: the first atom value whose cumulative mass
/// reaches τ.
pub fn least_quantile_scan(atoms: &[(f64, f64)], tau: f64) -> f64 {
    let atoms = canonical(atoms);
    let mut cum = 0.0;
    for &(v, p) in &atoms {
        cum += p;
        if cum >= tau {
            return v;
        }
    }
    atoms.last().expect("non-empty atom list").0
}

/// Greatest τ-quantile by scan: the first atom value whose cumulative
/// mass strictly exceeds τ.
pub fn greatest_quantile_scan(atoms: &[(f64, f64)], tau: f64) -> f64 {
    let atoms = canonical(atoms);
    let mut cum = 0.0;
    for &(v, p) in &atoms {
        cum += p;
        if cum > tau {
            return v;
        }
    }
    atoms.last().expect("non-empty atom list").0
}

/// Interpolated quantile projection by scan, one output per level
/// τ_i = (2i−1)/(2m).
pub fn project_scan(atoms: &[(f64, f64)], m: usize, lambda: &[f64]) -> Vec<f64> {
    (0..m)
        .map(|i| {
            let tau = (2 * i + 1) as f64 / (2 * m) as f64;
            let lo = least_quantile_scan(atoms, tau);
            let lam = lambda[i];
            if lam == 0.0 {
                lo
            } else {
                let hi = greatest_quantile_scan(atoms, tau);
                ((1.0 - lam) * lo + lam * hi).clamp(lo, hi)
            }
        })
        .collect()
}

/// One projected Bellman step by direct enumeration: for every state,
/// list every target atom reward + γθ(next, j) with its joint
/// probability, then project by scan. Only meaningful for
/// finite-support reward models.
pub fn qdp_step_scan(
    mrp: &Mrp,
    table: &QuantileTable,
    lambda: &InterpolationParams,
) -> Result<QuantileTable> {
    let n = mrp.num_states();
    let m = table.m();
    let gamma = mrp.gamma();
    let inv_m = 1.0 / m as f64;
    let mut rows = Vec::with_capacity(n);
    for x in 0..n {
        if mrp.is_terminal(x) {
            // Episodes end here: the target is the point mass at zero,
            // whose projection is a row of zeros for any λ.
            rows.push(vec![0.0; m]);
            continue;
        }
        let reward = match mrp.reward(x) {
            crate::dist::RewardModel::Finite(d) => d,
            crate::dist::RewardModel::Continuous(_) => {
                return Err(crate::error::Error::UnsupportedModel(
                    "reference step needs finite reward supports".into(),
                ))
            }
        };
        let mut atoms = Vec::new();
        for (y, &p) in mrp.transition_row(x).iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            for (&rv, &rp) in reward.locations().iter().zip(reward.probabilities()) {
                for j in 0..m {
                    atoms.push((rv + gamma * table.get(y, j), p * rp * inv_m));
                }
            }
        }
        rows.push(project_scan(&atoms, m, lambda.row(x)));
    }
    QuantileTable::new(rows)
}
