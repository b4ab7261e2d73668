//! Mean dynamics of the quantile update: the expected-update vector
//! field, its set-valued refinement at CDF discontinuities, forward Euler
//! integration, and Lyapunov functions measuring distance to the fixed
//! point (or fixed-point family when projections are not unique).

use rand::{Rng, RngCore};

use crate::bellman::bellman_target_cdf;
use crate::error::{Error, Result};
use crate::mdp::Mrp;
use crate::qdp::qdp_solve;
use crate::quantile::{tau_levels, InterpolationParams, QuantileTable};

/// Default Euler step width.
pub const DEFAULT_EULER_DT: f64 = 0.01;
/// Default Euler integration horizon (in continuous time).
pub const DEFAULT_EULER_HORIZON: f64 = 200.0;

/// Solver tolerance for fixed points computed as Lyapunov candidates;
/// looser than the main solver default because candidate distances only
/// need a few digits.
const LYAPUNOV_SOLVE_TOL: f64 = 1e-6;
const LYAPUNOV_SOLVE_ITERS: usize = 200_000;
/// Corner enumeration is exhaustive up to this many coordinates.
const MAX_CORNER_COORDS: usize = 12;
/// Coordinates enumerated when the table is too large for full corners.
const SUBSET_CORNER_COORDS: usize = 10;

/// Set-valued update at one coordinate: the interval swept between the
/// left and right CDF limits of the Bellman target at θ(x,i).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntervalMapValue {
    pub lo: f64,
    pub hi: f64,
}

impl IntervalMapValue {
    /// Whether the interval contains `v`.
    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }
}

/// Expected update per coordinate: entry (x,i) is
/// τ_i − P(R + γθ(X′,J) < θ(x,i)), the drift of the mean ODE. Strict
/// inequality means the CDF enters through its left limit; where the
/// target CDF is continuous this is just τ_i − F(θ(x,i)).
pub fn expected_update(mrp: &Mrp, table: &QuantileTable) -> Result<Vec<Vec<f64>>> {
    let taus = tau_levels(table.m())?;
    let mut out = Vec::with_capacity(mrp.num_states());
    for x in 0..mrp.num_states() {
        let target = bellman_target_cdf(mrp, table, x)?;
        let row = table.row(x);
        out.push(taus.iter().zip(row).map(|(&tau, &v)| tau - target.eval_left(v)).collect());
    }
    Ok(out)
}

/// Interval of admissible drifts at coordinate (x,i):
/// [τ_i − F(θ(x,i)), τ_i − F(θ(x,i)−)]. Degenerate (lo = hi) wherever the
/// target CDF is continuous at θ(x,i); the width equals the probability
/// mass sitting exactly on θ(x,i).
pub fn di_interval(mrp: &Mrp, table: &QuantileTable, x: usize, i: usize) -> Result<IntervalMapValue> {
    let taus = tau_levels(table.m())?;
    let target = bellman_target_cdf(mrp, table, x)?;
    let v = table.get(x, i);
    Ok(IntervalMapValue { lo: taus[i] - target.eval(v), hi: taus[i] - target.eval_left(v) })
}

/// Forward Euler on the mean ODE: θ ← θ + dt·expected_update(θ),
/// recording (t, table) at every step including t = 0. Meant for targets
/// with continuous, strictly increasing CDFs, where the field is
/// single-valued; on discontinuous fields it is only a heuristic.
pub fn euler_integrate(
    mrp: &Mrp,
    init: &QuantileTable,
    dt: f64,
    horizon: f64,
) -> Result<Vec<(f64, QuantileTable)>> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::Domain(format!("step width must be positive, got {dt}")));
    }
    if !(horizon >= 0.0) || !horizon.is_finite() {
        return Err(Error::Domain(format!("horizon must be nonnegative, got {horizon}")));
    }
    let steps = (horizon / dt).round() as usize;
    let mut table = init.clone();
    let mut trajectory = Vec::with_capacity(steps + 1);
    trajectory.push((0.0, table.clone()));
    for k in 1..=steps {
        let field = expected_update(mrp, &table)?;
        for x in 0..table.num_states() {
            let row = table.row_mut(x);
            for (v, g) in row.iter_mut().zip(&field[x]) {
                *v += dt * g;
            }
        }
        trajectory.push((k as f64 * dt, table.clone()));
    }
    Ok(trajectory)
}

/// Sup-norm distance to a known fixed point. Panics if shapes disagree.
pub fn lyapunov_simple(table: &QuantileTable, fixed_point: &QuantileTable) -> f64 {
    table.sup_distance(fixed_point)
}

/// Distance from `table` to the family of interpolated fixed points,
/// approximated by minimising the sup-norm distance over solved
/// candidates: all 0/1 corner parameter tables when the table has at most
/// 12 coordinates (a random 10-coordinate subset otherwise), plus
/// `lambda_samples` uniform draws, plus shrinking local refinement around
/// the best draw. Each candidate costs one solver call. The result is an
/// upper bound on the true distance; with continuous reward models every
/// parameter choice yields the same fixed point and a single solve
/// suffices.
pub fn lyapunov_general(
    mrp: &Mrp,
    table: &QuantileTable,
    lambda_samples: usize,
    rng: &mut dyn RngCore,
) -> Result<f64> {
    if lambda_samples == 0 {
        return Err(Error::Domain("need at least one parameter sample".into()));
    }
    let n = table.num_states();
    let m = table.m();
    let solve_distance = |lambda: &InterpolationParams| -> Result<f64> {
        let (fixed, _) = qdp_solve(mrp, lambda, table, LYAPUNOV_SOLVE_TOL, LYAPUNOV_SOLVE_ITERS)?;
        Ok(table.sup_distance(&fixed))
    };

    if !mrp.has_finite_rewards() {
        let lambda = InterpolationParams::constant(n, m, 0.0)?;
        return solve_distance(&lambda);
    }

    let dim = n * m;
    let mut best = f64::INFINITY;
    let mut best_lambda = vec![0.0; dim];
    let consider = |flat: &[f64], best: &mut f64, best_lambda: &mut Vec<f64>| -> Result<()> {
        let rows = flat.chunks(m).map(|c| c.to_vec()).collect();
        let d = solve_distance(&InterpolationParams::new(rows)?)?;
        if d < *best {
            *best = d;
            *best_lambda = flat.to_vec();
        }
        Ok(())
    };

    let corner_coords: Vec<usize> = if dim <= MAX_CORNER_COORDS {
        (0..dim).collect()
    } else {
        let mut picked = Vec::with_capacity(SUBSET_CORNER_COORDS);
        while picked.len() < SUBSET_CORNER_COORDS {
            let c = rng.random_range(0..dim);
            if !picked.contains(&c) {
                picked.push(c);
            }
        }
        picked
    };
    let mut flat = vec![0.0; dim];
    for pattern in 0u32..(1u32 << corner_coords.len()) {
        flat.iter_mut().for_each(|v| *v = 0.0);
        for (bit, &coord) in corner_coords.iter().enumerate() {
            if pattern >> bit & 1 == 1 {
                flat[coord] = 1.0;
            }
        }
        consider(&flat, &mut best, &mut best_lambda)?;
    }

    for _ in 0..lambda_samples {
        flat.iter_mut().for_each(|v| *v = rng.random());
        consider(&flat, &mut best, &mut best_lambda)?;
    }

    // Local refinement: resample in shrinking boxes around the best
    // parameter found so far.
    let per_round = lambda_samples.div_ceil(4);
    for radius in [0.3, 0.1, 0.03] {
        let center = best_lambda.clone();
        for _ in 0..per_round {
            for (v, &c) in flat.iter_mut().zip(&center) {
                let lo = (c - radius).max(0.0);
                let hi = (c + radius).min(1.0);
                *v = lo + (hi - lo) * rng.random::<f64>();
            }
            consider(&flat, &mut best, &mut best_lambda)?;
        }
    }

    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::RewardModel;
    use crate::qdp::is_qdp_fixed_point;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn gaussian_cycle() -> Mrp {
        Mrp::new(
            vec![vec![0.0, 1.0], vec![1.0, 0.0]],
            vec![RewardModel::gaussian(2.0, 1.0).unwrap(), RewardModel::gaussian(-1.0, 1.0).unwrap()],
            0.5,
            vec![false, false],
        )
        .unwrap()
    }

    fn deterministic_half() -> Mrp {
        Mrp::new(
            vec![vec![0.5, 0.5], vec![0.5, 0.5]],
            vec![RewardModel::dirac(2.0).unwrap(), RewardModel::dirac(-1.0).unwrap()],
            0.5,
            vec![false, false],
        )
        .unwrap()
    }

    #[test]
    fn expected_update_hand_values() {
        let mrp = deterministic_half();
        let table = QuantileTable::zeros(2, 1).unwrap();
        let field = expected_update(&mrp, &table).unwrap();
        // Both targets from x₁ sit at 2 > 0 and both from x₂ at −1 < 0.
        assert_eq!(field[0], vec![0.5]);
        assert_eq!(field[1], vec![-0.5]);
    }

    #[test]
    fn expected_update_bounded_per_coordinate() {
        let mrp = deterministic_half();
        let taus = tau_levels(3).unwrap();
        for v in [-10.0, -0.5, 0.0, 1.4, 2.0, 50.0] {
            let table = QuantileTable::constant(2, 3, v).unwrap();
            let field = expected_update(&mrp, &table).unwrap();
            for row in &field {
                for (i, g) in row.iter().enumerate() {
                    assert!(taus[i] - 1.0 <= *g && *g <= taus[i]);
                }
            }
        }
    }

    #[test]
    fn expected_update_vanishes_at_continuous_fixed_point() {
        let mrp = gaussian_cycle();
        let lambda = InterpolationParams::constant(2, 1, 0.0).unwrap();
        let init = QuantileTable::zeros(2, 1).unwrap();
        let (fixed, _) = qdp_solve(&mrp, &lambda, &init, 1e-9, 10_000).unwrap();
        let field = expected_update(&mrp, &fixed).unwrap();
        for row in &field {
            for g in row {
                assert!(g.abs() < 1e-6, "residual drift {g}");
            }
        }
    }

    #[test]
    fn interval_at_atom_spans_its_mass() {
        let mrp = Mrp::new(
            vec![vec![1.0]],
            vec![RewardModel::dirac(0.0).unwrap()],
            0.0,
            vec![false],
        )
        .unwrap();
        let table = QuantileTable::zeros(1, 1).unwrap();
        let iv = di_interval(&mrp, &table, 0, 0).unwrap();
        assert_eq!(iv, IntervalMapValue { lo: -0.5, hi: 0.5 });
        assert!(iv.contains(0.0));
    }

    #[test]
    fn interval_degenerate_for_continuous_targets() {
        let mrp = gaussian_cycle();
        let table = QuantileTable::new(vec![vec![0.3], vec![-1.7]]).unwrap();
        for x in 0..2 {
            let iv = di_interval(&mrp, &table, x, 0).unwrap();
            assert_eq!(iv.lo, iv.hi);
        }
    }

    #[test]
    fn interval_contains_expected_update() {
        let mrp = deterministic_half();
        for v in [-3.0, 0.0, 1.5, 2.0, 8.0] {
            let table = QuantileTable::constant(2, 2, v).unwrap();
            let field = expected_update(&mrp, &table).unwrap();
            for x in 0..2 {
                for i in 0..2 {
                    let iv = di_interval(&mrp, &table, x, i).unwrap();
                    assert!(iv.contains(field[x][i]));
                }
            }
        }
    }

    #[test]
    fn zero_in_all_intervals_iff_fixed_point() {
        let mrp = Mrp::new(
            vec![vec![1.0]],
            vec![RewardModel::dirac(1.0).unwrap()],
            0.5,
            vec![false],
        )
        .unwrap();
        let fixed = QuantileTable::constant(1, 1, 2.0).unwrap();
        assert!(di_interval(&mrp, &fixed, 0, 0).unwrap().contains(0.0));
        assert!(is_qdp_fixed_point(&mrp, &fixed, 1e-12).unwrap());
        let off = QuantileTable::constant(1, 1, 2.1).unwrap();
        assert!(!di_interval(&mrp, &off, 0, 0).unwrap().contains(0.0));
        assert!(!is_qdp_fixed_point(&mrp, &off, 1e-12).unwrap());
    }

    #[test]
    fn euler_stays_at_continuous_fixed_point() {
        let mrp = gaussian_cycle();
        let lambda = InterpolationParams::constant(2, 1, 0.0).unwrap();
        let init = QuantileTable::zeros(2, 1).unwrap();
        let (fixed, _) = qdp_solve(&mrp, &lambda, &init, 1e-9, 10_000).unwrap();
        let trajectory = euler_integrate(&mrp, &fixed, 0.01, 1.0).unwrap();
        assert_eq!(trajectory.len(), 101);
        for (_, table) in &trajectory {
            assert!(table.sup_distance(&fixed) < 1e-5);
        }
    }

    #[test]
    fn euler_converges_to_attractor() {
        let mrp = gaussian_cycle();
        let lambda = InterpolationParams::constant(2, 1, 0.0).unwrap();
        let zeros = QuantileTable::zeros(2, 1).unwrap();
        let (fixed, _) = qdp_solve(&mrp, &lambda, &zeros, 1e-9, 10_000).unwrap();
        let trajectory =
            euler_integrate(&mrp, &zeros, DEFAULT_EULER_DT, DEFAULT_EULER_HORIZON).unwrap();
        let (_, last) = trajectory.last().unwrap();
        assert!(last.sup_distance(&fixed) < 1e-2);
    }

    #[test]
    fn euler_rejects_bad_parameters() {
        let mrp = gaussian_cycle();
        let init = QuantileTable::zeros(2, 1).unwrap();
        assert!(euler_integrate(&mrp, &init, 0.0, 1.0).is_err());
        assert!(euler_integrate(&mrp, &init, 0.01, -1.0).is_err());
    }

    #[test]
    fn simple_lyapunov_is_sup_distance() {
        let a = QuantileTable::zeros(2, 2).unwrap();
        let mut b = a.clone();
        assert_eq!(lyapunov_simple(&a, &b), 0.0);
        b.set(1, 0, 0.3);
        assert_eq!(lyapunov_simple(&a, &b), 0.3);
    }

    #[test]
    fn general_lyapunov_matches_simple_when_unique() {
        let mrp = gaussian_cycle();
        let lambda = InterpolationParams::constant(2, 1, 0.0).unwrap();
        let zeros = QuantileTable::zeros(2, 1).unwrap();
        let (fixed, _) = qdp_solve(&mrp, &lambda, &zeros, 1e-9, 10_000).unwrap();
        let table = QuantileTable::new(vec![vec![1.0], vec![1.0]]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let general = lyapunov_general(&mrp, &table, 4, &mut rng).unwrap();
        let simple = lyapunov_simple(&table, &fixed);
        assert!((general - simple).abs() < 1e-4, "general {general} vs simple {simple}");
    }

    #[test]
    fn general_lyapunov_explores_interpolated_family() {
        let mrp = deterministic_half();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        // Extreme fixed points: found by the corner sweep directly.
        let corner = QuantileTable::new(vec![vec![2.0], vec![0.0]]).unwrap();
        let at_corner = lyapunov_general(&mrp, &corner, 50, &mut rng).unwrap();
        assert!(at_corner < 1e-5, "corner distance {at_corner}");
        // Interior fixed point (equal-weight interpolation): needs the
        // sampled candidates.
        let interior = QuantileTable::new(vec![vec![2.5], vec![-0.5]]).unwrap();
        let at_interior = lyapunov_general(&mrp, &interior, 800, &mut rng).unwrap();
        assert!(at_interior < 0.05, "interior distance {at_interior}");
        // Far outside the family: every candidate stays far away.
        let outside = QuantileTable::new(vec![vec![5.0], vec![5.0]]).unwrap();
        let far = lyapunov_general(&mrp, &outside, 100, &mut rng).unwrap();
        assert!(far > 3.5, "outside distance {far}");
    }

    #[test]
    fn general_lyapunov_rejects_zero_samples() {
        let mrp = deterministic_half();
        let table = QuantileTable::zeros(2, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(lyapunov_general(&mrp, &table, 0, &mut rng).is_err());
    }
}
