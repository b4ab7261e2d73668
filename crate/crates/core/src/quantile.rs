//! Quantile parameter tables and the λ-interpolated projection.
//!
//! A [`QuantileTable`] holds θ ∈ ℝ^{X×m}: `m` quantile estimates per state
//! at the fixed levels τ_i = (2i−1)/(2m). Its distribution view at a state
//! is the equally weighted Dirac mixture (1/m) Σ_i δ_{θ(x,i)}.
//!
//! [`project`] implements the projection Π^λ onto that representation:
//! entry i is the λ-interpolation between the least and greatest
//! τ_i-quantiles of the input distribution.

use crate::dist::FiniteDistribution;
use crate::error::{Error, Result};

/// Quantile levels τ_i = (2i−1)/(2m) for i = 1..m.
pub fn tau_levels(m: usize) -> Result<Vec<f64>> {
    if m == 0 {
        return Err(Error::Domain("quantile count m must be positive".into()));
    }
    Ok((1..=m).map(|i| (2 * i - 1) as f64 / (2 * m) as f64).collect())
}

/// θ ∈ ℝ^{X×m}: per-state quantile estimates.
///
/// Entries are finite but not necessarily sorted within a state; the
/// stochastic (QTD) iterates are unsorted in general, while dynamic
/// programming steps produce rows nondecreasing in i.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileTable {
    theta: Vec<Vec<f64>>,
    m: usize,
}

impl QuantileTable {
    /// Build from explicit per-state rows, all of equal length `m ≥ 1`.
    pub fn new(theta: Vec<Vec<f64>>) -> Result<Self> {
        if theta.is_empty() {
            return Err(Error::Validation("quantile table needs at least one state".into()));
        }
        let m = theta[0].len();
        if m == 0 {
            return Err(Error::Validation("quantile table needs m ≥ 1".into()));
        }
        for (x, row) in theta.iter().enumerate() {
            if row.len() != m {
                return Err(Error::Validation(format!(
                    "row for state x{} has length {}, expected {m}",
                    x + 1,
                    row.len()
                )));
            }
            for &v in row {
                if !v.is_finite() {
                    return Err(Error::Validation(format!(
                        "non-finite entry {v} in row for state x{}",
                        x + 1
                    )));
                }
            }
        }
        Ok(Self { theta, m })
    }

    /// All-zero table for `num_states` states and `m` quantiles.
    pub fn zeros(num_states: usize, m: usize) -> Result<Self> {
        Self::new(vec![vec![0.0; m]; num_states])
    }

    /// Table with every entry equal to `value`.
    pub fn constant(num_states: usize, m: usize, value: f64) -> Result<Self> {
        Self::new(vec![vec![value; m]; num_states])
    }

    /// Number of states.
    pub fn num_states(&self) -> usize {
        self.theta.len()
    }

    /// Number of quantiles per state.
    pub fn m(&self) -> usize {
        self.m
    }

    /// Row view for a state.
    pub fn row(&self, x: usize) -> &[f64] {
        &self.theta[x]
    }

    /// Mutable row view for a state.
    pub fn row_mut(&mut self, x: usize) -> &mut [f64] {
        &mut self.theta[x]
    }

    /// All rows.
    pub fn rows(&self) -> &[Vec<f64>] {
        &self.theta
    }

    /// Entry θ(x, i) with `i` zero-based.
    pub fn get(&self, x: usize, i: usize) -> f64 {
        self.theta[x][i]
    }

    /// Set entry θ(x, i) with `i` zero-based.
    pub fn set(&mut self, x: usize, i: usize, value: f64) {
        self.theta[x][i] = value;
    }

    /// Largest absolute entry-wise difference to another table of the same
    /// shape.
    pub fn sup_distance(&self, other: &Self) -> f64 {
        assert_eq!(self.theta.len(), other.theta.len(), "state count mismatch");
        assert_eq!(self.m, other.m, "quantile count mismatch");
        let mut worst = 0.0f64;
        for (a, b) in self.theta.iter().zip(&other.theta) {
            for (&u, &v) in a.iter().zip(b) {
                worst = worst.max((u - v).abs());
            }
        }
        worst
    }

    /// Distribution view at state `x`: the equally weighted mixture
    /// (1/m) Σ_i δ_{θ(x,i)} with duplicate locations merged.
    pub fn to_distribution(&self, x: usize) -> Result<FiniteDistribution> {
        if x >= self.theta.len() {
            return Err(Error::Validation(format!(
                "state index {x} out of range for {} states",
                self.theta.len()
            )));
        }
        let w = 1.0 / self.m as f64;
        FiniteDistribution::new(self.theta[x].iter().map(|&z| (z, w)))
    }
}

/// Interpolation parameters λ ∈ [0,1]^{X×m} selecting where inside each
/// flat quantile region the projection lands (0 = least quantile,
/// 1 = greatest).
#[derive(Debug, Clone, PartialEq)]
pub struct InterpolationParams {
    lambda: Vec<Vec<f64>>,
}

impl InterpolationParams {
    /// Build from per-state rows; every entry must lie in [0, 1].
    pub fn new(lambda: Vec<Vec<f64>>) -> Result<Self> {
        if lambda.is_empty() {
            return Err(Error::Validation("interpolation parameters need at least one state".into()));
        }
        for (x, row) in lambda.iter().enumerate() {
            if row.is_empty() {
                return Err(Error::Validation(format!("empty λ row for state x{}", x + 1)));
            }
            for &v in row {
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::Validation(format!(
                        "λ entry {v} for state x{} outside [0,1]",
                        x + 1
                    )));
                }
            }
        }
        Ok(Self { lambda })
    }

    /// Constant λ across all coordinates.
    pub fn constant(num_states: usize, m: usize, value: f64) -> Result<Self> {
        Self::new(vec![vec![value; m]; num_states])
    }

    /// Row view for a state.
    pub fn row(&self, x: usize) -> &[f64] {
        &self.lambda[x]
    }

    /// Entry λ(x, i) with `i` zero-based.
    pub fn get(&self, x: usize, i: usize) -> f64 {
        self.lambda[x][i]
    }

    /// Number of states.
    pub fn num_states(&self) -> usize {
        self.lambda.len()
    }

    /// Number of entries per state.
    pub fn m(&self) -> usize {
        self.lambda[0].len()
    }
}

/// Project a distribution onto `m` quantile atoms:
/// `out_i = (1−λ_i)·F⁻¹(τ_i) + λ_i·F̄⁻¹(τ_i)`.
///
/// The output is nondecreasing in i (quantiles are monotone in τ and the
/// interpolation stays inside each quantile interval).
pub fn project(nu: &FiniteDistribution, m: usize, lambda_row: &[f64]) -> Result<Vec<f64>> {
    let taus = tau_levels(m)?;
    if lambda_row.len() != m {
        return Err(Error::Validation(format!(
            "λ row has length {}, expected {m}",
            lambda_row.len()
        )));
    }
    for &l in lambda_row {
        if !(0.0..=1.0).contains(&l) {
            return Err(Error::Validation(format!("λ entry {l} outside [0,1]")));
        }
    }
    let mut out = Vec::with_capacity(m);
    for (i, &tau) in taus.iter().enumerate() {
        let lo = nu.inv_cdf(tau)?;
        let lam = lambda_row[i];
        // Avoid the second scan in the common pure-left case.
        let v = if lam == 0.0 {
            lo
        } else {
            let hi = nu.right_inv_cdf(tau)?;
            // The naive lerp can round a hair outside [lo, hi], which
            // would break the monotonicity promise above; clamp it back.
            ((1.0 - lam) * lo + lam * hi).clamp(lo, hi)
        };
        out.push(v);
    }
    Ok(out)
}
