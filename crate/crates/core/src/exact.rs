//! Exact rational mirror of a finite-reward model, used to polish
//! converged quantile tables onto exact float fixed points.
//!
//! Iterating the projected Bellman step in f64 stalls a few ulp away from
//! deterministic fixed points: with γ = 0.9 the affine recursion
//! t ← 2 + γt creeps towards 20 but rounds to 19.99999999999999 and stays
//! there, even though 20 itself satisfies fl(2 + fl(0.9·20)) = 20. The cure
//! implemented here: freeze the quantile *assignment* (which target atom
//! each θ(x,i) reads from) at the converged table, solve the resulting
//! affine system in exact rational arithmetic with model data taken from
//! decimal strings rather than floats, verify the solution is a genuine
//! fixed point by one exact projected step, and round each coordinate
//! correctly to f64.

use std::cmp::Ordering;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{FromPrimitive, One, Signed, ToPrimitive, Zero};

use crate::error::{Error, Result};
use crate::quantile::{InterpolationParams, QuantileTable};

/// Exact rational scalar.
pub type Rat = BigRational;

/// Parse a decimal literal (optional sign, fraction, exponent) into an
/// exact rational: "0.9" becomes 9/10, not the nearest binary float.
pub fn parse_decimal(s: &str) -> Result<Rat> {
    let t = s.trim();
    let bad = || Error::Config(format!("invalid decimal literal {s:?}"));
    let (neg, t) = match t.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, t.strip_prefix('+').unwrap_or(t)),
    };
    let (mantissa, exp) = match t.split_once(['e', 'E']) {
        Some((m, e)) => (m, e.parse::<i64>().map_err(|_| bad())?),
        None => (t, 0),
    };
    let (int_part, frac_part) = match mantissa.split_once('.') {
        Some((i, f)) => (i, f),
        None => (mantissa, ""),
    };
    if int_part.is_empty() && frac_part.is_empty() {
        return Err(bad());
    }
    let mut digits = String::with_capacity(int_part.len() + frac_part.len());
    digits.push_str(int_part);
    digits.push_str(frac_part);
    if !digits.bytes().all(|b| b.is_ascii_digit()) {
        return Err(bad());
    }
    let mut num: BigInt = digits.parse().map_err(|_| bad())?;
    if neg {
        num = -num;
    }
    let scale = exp - frac_part.len() as i64;
    let ten = BigInt::from(10);
    Ok(if scale >= 0 {
        Rat::from_integer(num * ten.pow(scale as u32))
    } else {
        Rat::new(num, ten.pow((-scale) as u32))
    })
}

/// Exact value of a float; every finite f64 is a dyadic rational.
pub fn f64_to_rat(v: f64) -> Result<Rat> {
    Rat::from_f64(v).ok_or_else(|| Error::Numeric(format!("cannot represent {v} exactly")))
}

/// Correctly rounded (to nearest, ties to even) conversion of a rational
/// to f64. Exact for the normal range; subnormal results may carry one
/// extra rounding.
pub fn rat_to_f64(r: &Rat) -> f64 {
    if r.is_zero() {
        return 0.0;
    }
    let neg = r.is_negative();
    let a = r.numer().abs();
    let b = r.denom().clone();
    // Scale so the integer quotient keeps a handful of guard bits below
    // the 53-bit mantissa.
    let shift = 57 + b.bits() as i64 - a.bits() as i64;
    let (num, den) = if shift >= 0 { (a << shift as usize, b) } else { (a, b << (-shift) as usize) };
    let q = &num / &den;
    let sticky = !(num % &den).is_zero();
    let extra = q.bits() as i64 - 53;
    debug_assert!(extra >= 2, "quotient too short: {} bits", q.bits());
    let head = &q >> extra as usize;
    let low = &q - (&head << extra as usize);
    let half: BigInt = BigInt::one() << (extra - 1) as usize;
    let round_up = match low.cmp(&half) {
        Ordering::Greater => true,
        Ordering::Less => false,
        Ordering::Equal => sticky || head.bit(0),
    };
    let mut mant = head.to_u64().expect("53-bit mantissa");
    if round_up {
        mant += 1;
    }
    let mag = ldexp(mant as f64, extra - shift);
    if neg {
        -mag
    } else {
        mag
    }
}

/// x · 2^e, scaling in chunks so no intermediate power of two overflows.
fn ldexp(mut x: f64, mut e: i64) -> f64 {
    while e > 1023 {
        x *= 2f64.powi(1023);
        e -= 1023;
    }
    while e < -1022 {
        x *= 2f64.powi(-1022);
        e += 1022;
    }
    x * 2f64.powi(e as i32)
}

/// Quantile levels (2i−1)/(2m) as exact rationals.
pub fn exact_tau_levels(m: usize) -> Result<Vec<Rat>> {
    if m == 0 {
        return Err(Error::Domain("quantile count m must be positive".into()));
    }
    Ok((1..=m).map(|i| Rat::new(BigInt::from(2 * i as i64 - 1), BigInt::from(2 * m as i64))).collect())
}

/// Finite-reward Markov reward process with exact rational data. Reward
/// models are atom lists (value, probability). Terminal states follow the
/// absorbing convention (self-loop, Dirac-0 reward).
#[derive(Debug, Clone)]
pub struct ExactMrp {
    transition: Vec<Vec<Rat>>,
    rewards: Vec<Vec<(Rat, Rat)>>,
    gamma: Rat,
    terminal: Vec<bool>,
}

impl ExactMrp {
    pub fn new(
        transition: Vec<Vec<Rat>>,
        rewards: Vec<Vec<(Rat, Rat)>>,
        gamma: Rat,
        terminal: Vec<bool>,
    ) -> Result<Self> {
        if gamma.is_negative() || gamma >= Rat::one() {
            return Err(Error::Domain(format!("discount must lie in [0,1), got {gamma}")));
        }
        let n = transition.len();
        if n == 0 {
            return Err(Error::Validation("exact MRP needs at least one state".into()));
        }
        if rewards.len() != n || terminal.len() != n {
            return Err(Error::Validation("exact MRP shape mismatch".into()));
        }
        let mut transition = transition;
        let mut rewards = rewards;
        for x in 0..n {
            if terminal[x] {
                let mut row = vec![Rat::zero(); n];
                row[x] = Rat::one();
                transition[x] = row;
                rewards[x] = vec![(Rat::zero(), Rat::one())];
                continue;
            }
            if transition[x].len() != n {
                return Err(Error::Validation(format!("transition row for x{} wrong length", x + 1)));
            }
            if transition[x].iter().any(|p| p.is_negative())
                || transition[x].iter().sum::<Rat>() != Rat::one()
            {
                return Err(Error::Validation(format!(
                    "transition row for x{} must be exactly stochastic",
                    x + 1
                )));
            }
            let atoms = &mut rewards[x];
            if atoms.is_empty()
                || atoms.iter().any(|(_, p)| !p.is_positive())
                || atoms.iter().map(|(_, p)| p).sum::<Rat>() != Rat::one()
            {
                return Err(Error::Validation(format!(
                    "reward atoms for x{} must have positive probabilities summing to 1",
                    x + 1
                )));
            }
            atoms.sort_by(|u, v| u.0.cmp(&v.0));
        }
        Ok(Self { transition, rewards, gamma, terminal })
    }

    pub fn num_states(&self) -> usize {
        self.transition.len()
    }

    pub fn gamma(&self) -> &Rat {
        &self.gamma
    }

    pub fn is_terminal(&self, x: usize) -> bool {
        self.terminal[x]
    }

    /// Transition probabilities out of `x`.
    pub fn transition_row(&self, x: usize) -> &[Rat] {
        &self.transition[x]
    }

    /// Reward atoms (value, probability) at `x`, sorted by value.
    pub fn reward_atoms(&self, x: usize) -> &[(Rat, Rat)] {
        &self.rewards[x]
    }
}

/// One target atom with its origin: value = reward + γθ(y, j).
struct SourcedAtom {
    value: Rat,
    prob: Rat,
    y: usize,
    j: usize,
    reward: Rat,
}

/// Sorted target atom list at a non-terminal state, atoms kept separate
/// (no merging) so each retains its (y, j, reward) origin.
fn target_atoms(exact: &ExactMrp, theta: &[Vec<Rat>], x: usize) -> Vec<SourcedAtom> {
    let m = theta[0].len();
    let inv_m = Rat::new(BigInt::one(), BigInt::from(m as i64));
    let mut atoms = Vec::new();
    for (y, p) in exact.transition[x].iter().enumerate() {
        if p.is_zero() {
            continue;
        }
        for (rv, rp) in &exact.rewards[x] {
            for (j, t) in theta[y].iter().enumerate() {
                atoms.push(SourcedAtom {
                    value: rv + &exact.gamma * t,
                    prob: p * rp * &inv_m,
                    y,
                    j,
                    reward: rv.clone(),
                });
            }
        }
    }
    atoms.sort_by(|u, v| u.value.cmp(&v.value));
    atoms
}

/// Indices of the atoms realizing F⁻¹(τ) and F̄⁻¹(τ) in a sorted atom
/// list with total mass 1; τ must lie in (0,1).
fn quantile_sources(atoms: &[SourcedAtom], tau: &Rat) -> (usize, usize) {
    let mut cum = Rat::zero();
    let mut lo = None;
    for (k, atom) in atoms.iter().enumerate() {
        cum += &atom.prob;
        if lo.is_none() && cum >= *tau {
            lo = Some(k);
        }
        if cum > *tau {
            return (lo.expect("cum ≥ τ before cum > τ"), k);
        }
    }
    let last = atoms.len() - 1;
    (lo.unwrap_or(last), last)
}

/// One exact projected Bellman step on a rational table.
pub fn exact_qdp_step(
    exact: &ExactMrp,
    theta: &[Vec<Rat>],
    lambda: &[Vec<Rat>],
    taus: &[Rat],
) -> Vec<Vec<Rat>> {
    let mut out = Vec::with_capacity(theta.len());
    for x in 0..exact.num_states() {
        if exact.is_terminal(x) {
            out.push(vec![Rat::zero(); taus.len()]);
            continue;
        }
        let atoms = target_atoms(exact, theta, x);
        let mut row = Vec::with_capacity(taus.len());
        for (i, tau) in taus.iter().enumerate() {
            let (a, b) = quantile_sources(&atoms, tau);
            let lam = &lambda[x][i];
            row.push((Rat::one() - lam) * &atoms[a].value + lam * &atoms[b].value);
        }
        out.push(row);
    }
    out
}

/// Solve A v = b exactly. Returns `None` only for a singular system.
fn solve_rational(mut a: Vec<Vec<Rat>>, mut b: Vec<Rat>) -> Option<Vec<Rat>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).find(|&r| !a[r][col].is_zero())?;
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            if a[row][col].is_zero() {
                continue;
            }
            let f = &a[row][col] / &a[col][col];
            for k in col..n {
                let t = &f * &a[col][k];
                a[row][k] -= t;
            }
            let t = &f * &b[col];
            b[row] -= t;
        }
    }
    let mut v = vec![Rat::zero(); n];
    for row in (0..n).rev() {
        let mut acc = b[row].clone();
        for k in row + 1..n {
            acc -= &a[row][k] * &v[k];
        }
        v[row] = acc / &a[row][row];
    }
    Some(v)
}

/// Size cap for the exact linear solve.
const MAX_POLISH_DIM: usize = 64;

/// Attempt to replace a converged table with the exact fixed point of the
/// projected Bellman step.
///
/// Freezes the quantile assignment at `approx`, solves the induced affine
/// system exactly, and accepts the solution only if (a) one exact
/// projected step maps it to itself and (b) it lies within `slack` of
/// `approx` in sup norm. Returns `Ok(None)` when polishing does not apply
/// (too large a system, assignment not self-consistent, solution too far)
/// — callers should then keep the f64 iterate.
pub fn polish_fixed_point(
    exact: &ExactMrp,
    lambda: &InterpolationParams,
    approx: &QuantileTable,
    slack: f64,
) -> Result<Option<QuantileTable>> {
    let num_states = exact.num_states();
    let m = approx.m();
    if approx.num_states() != num_states || lambda.num_states() != num_states || lambda.m() != m {
        return Err(Error::Validation(format!(
            "shape mismatch: model {num_states} states, table {}×{}, λ {}×{}",
            approx.num_states(),
            m,
            lambda.num_states(),
            lambda.m()
        )));
    }
    let n = num_states * m;
    if n > MAX_POLISH_DIM {
        return Ok(None);
    }
    let theta: Vec<Vec<Rat>> = (0..num_states)
        .map(|x| approx.row(x).iter().map(|&v| f64_to_rat(v)).collect::<Result<_>>())
        .collect::<Result<_>>()?;
    let lam: Vec<Vec<Rat>> = (0..num_states)
        .map(|x| lambda.row(x).iter().map(|&v| f64_to_rat(v)).collect::<Result<_>>())
        .collect::<Result<_>>()?;
    let taus = exact_tau_levels(m)?;

    let idx = |x: usize, i: usize| x * m + i;
    let mut a = vec![vec![Rat::zero(); n]; n];
    let mut b = vec![Rat::zero(); n];
    for x in 0..num_states {
        if exact.is_terminal(x) {
            for i in 0..m {
                a[idx(x, i)][idx(x, i)] = Rat::one();
            }
            continue;
        }
        let atoms = target_atoms(exact, &theta, x);
        for i in 0..m {
            let row = idx(x, i);
            a[row][row] = Rat::one();
            let (ka, kb) = quantile_sources(&atoms, &taus[i]);
            let wa = Rat::one() - &lam[x][i];
            let wb = lam[x][i].clone();
            for (k, w) in [(ka, wa), (kb, wb)] {
                if w.is_zero() {
                    continue;
                }
                let atom = &atoms[k];
                let coeff = &w * &exact.gamma;
                a[row][idx(atom.y, atom.j)] -= coeff;
                b[row] += w * &atom.reward;
            }
        }
    }
    let Some(solution) = solve_rational(a, b) else {
        return Ok(None);
    };
    let solved: Vec<Vec<Rat>> =
        (0..num_states).map(|x| solution[x * m..(x + 1) * m].to_vec()).collect();

    // The assignment was frozen at `approx`; accept only if the solution
    // is a fixed point under a fresh assignment.
    if exact_qdp_step(exact, &solved, &lam, &taus) != solved {
        return Ok(None);
    }
    let mut drift = 0.0f64;
    for x in 0..num_states {
        for i in 0..m {
            drift = drift.max(rat_to_f64(&(&solved[x][i] - &theta[x][i])).abs());
        }
    }
    if !(drift <= slack) {
        return Ok(None);
    }
    let rows: Vec<Vec<f64>> =
        solved.iter().map(|row| row.iter().map(rat_to_f64).collect()).collect();
    Ok(Some(QuantileTable::new(rows)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::{FiniteDistribution, RewardModel};
    use crate::mdp::Mrp;
    use crate::qdp::qdp_solve;

    fn rat(s: &str) -> Rat {
        parse_decimal(s).unwrap()
    }

    #[test]
    fn decimal_parsing() {
        assert_eq!(rat("0.9"), Rat::new(9.into(), 10.into()));
        assert_eq!(rat("20"), Rat::from_integer(20.into()));
        assert_eq!(rat("-1.25e2"), Rat::from_integer((-125).into()));
        assert_eq!(rat("1e-3"), Rat::new(1.into(), 1000.into()));
        assert_eq!(rat("+0.5"), Rat::new(1.into(), 2.into()));
        for bad in ["", "abc", "1.2.3", "--1", "1e", "0x10"] {
            assert!(parse_decimal(bad).is_err(), "accepted {bad:?}");
        }
    }

    #[test]
    fn rational_rounding_matches_float_parsing() {
        for s in
            ["0.9", "0.1", "-3.5", "20", "0.123456789", "1e-20", "6.02e23", "-0.000244140625"]
        {
            let via_rat = rat_to_f64(&rat(s));
            let via_str: f64 = s.parse().unwrap();
            assert_eq!(via_rat.to_bits(), via_str.to_bits(), "mismatch for {s}");
        }
        assert_eq!(rat_to_f64(&Rat::new(1.into(), 3.into())), 1.0 / 3.0);
        assert_eq!(rat_to_f64(&Rat::zero()), 0.0);
        // Tie halfway between 2^53 and 2^53 + 2 rounds to the even side.
        let tie = Rat::from_integer(BigInt::from((1i64 << 53) + 1));
        assert_eq!(rat_to_f64(&tie), 9007199254740992.0);
    }

    #[test]
    fn float_round_trip_is_exact() {
        for v in [0.9, -7.0, 19.99999999999999, f64::MIN_POSITIVE, 1.0 / 3.0] {
            assert_eq!(rat_to_f64(&f64_to_rat(v).unwrap()), v);
        }
        assert!(f64_to_rat(f64::NAN).is_err());
    }

    fn example_mrp_exact() -> ExactMrp {
        ExactMrp::new(
            vec![vec![rat("0.6"), rat("0.4")], vec![rat("0"), rat("1")]],
            vec![vec![(rat("2"), rat("1"))], vec![(rat("-1"), rat("1"))]],
            rat("0.9"),
            vec![false, false],
        )
        .unwrap()
    }

    fn example_mrp_f64() -> Mrp {
        Mrp::new(
            vec![vec![0.6, 0.4], vec![0.0, 1.0]],
            vec![RewardModel::dirac(2.0).unwrap(), RewardModel::dirac(-1.0).unwrap()],
            0.9,
            vec![false, false],
        )
        .unwrap()
    }

    #[test]
    fn polish_reaches_exact_twenty() {
        let mrp = example_mrp_f64();
        let lambda = InterpolationParams::constant(2, 2, 0.0).unwrap();
        let init = QuantileTable::zeros(2, 2).unwrap();
        let (approx, _) = qdp_solve(&mrp, &lambda, &init, 1e-10, 10_000).unwrap();
        // The float iteration stalls a few ulp short of the deterministic
        // return values.
        assert!((approx.get(0, 1) - 20.0).abs() < 1e-9);
        assert_ne!(approx.get(0, 1), 20.0);

        let polished =
            polish_fixed_point(&example_mrp_exact(), &lambda, &approx, 1e-6).unwrap().unwrap();
        assert_eq!(polished.get(0, 0), -7.0);
        assert_eq!(polished.get(0, 1), 20.0);
        assert_eq!(polished.row(1), &[-10.0, -10.0]);
    }

    #[test]
    fn polish_rejects_wrong_assignments() {
        // From the zero table the frozen assignment maps every x₁ entry to
        // the self-loop atom; the induced solution is not a true fixed
        // point and must be rejected by the verification step.
        let zero = QuantileTable::zeros(2, 2).unwrap();
        let lambda = InterpolationParams::constant(2, 2, 0.0).unwrap();
        let out = polish_fixed_point(&example_mrp_exact(), &lambda, &zero, 1e9).unwrap();
        assert!(out.is_none());
    }

    #[test]
    fn polish_respects_slack() {
        let mrp = example_mrp_f64();
        let lambda = InterpolationParams::constant(2, 2, 0.0).unwrap();
        let init = QuantileTable::zeros(2, 2).unwrap();
        let (approx, _) = qdp_solve(&mrp, &lambda, &init, 1e-10, 10_000).unwrap();
        let out = polish_fixed_point(&example_mrp_exact(), &lambda, &approx, 1e-18).unwrap();
        assert!(out.is_none(), "drift larger than slack must disable polishing");
    }

    #[test]
    fn exact_step_matches_float_step_on_dyadic_data() {
        // All quantities dyadic: γ=0.5, reward atoms at 1 and -0.5.
        let exact = ExactMrp::new(
            vec![vec![rat("0.5"), rat("0.5")], vec![rat("1"), rat("0")]],
            vec![
                vec![(rat("1"), rat("0.5")), (rat("-0.5"), rat("0.5"))],
                vec![(rat("0.25"), rat("1"))],
            ],
            rat("0.5"),
            vec![false, false],
        )
        .unwrap();
        let mrp = Mrp::new(
            vec![vec![0.5, 0.5], vec![1.0, 0.0]],
            vec![
                RewardModel::Finite(
                    FiniteDistribution::new([(1.0, 0.5), (-0.5, 0.5)]).unwrap(),
                ),
                RewardModel::dirac(0.25).unwrap(),
            ],
            0.5,
            vec![false, false],
        )
        .unwrap();
        let table = QuantileTable::new(vec![vec![-1.0, 0.5], vec![0.75, 2.0]]).unwrap();
        let theta: Vec<Vec<Rat>> =
            table.rows().iter().map(|r| r.iter().map(|&v| f64_to_rat(v).unwrap()).collect()).collect();
        let lambda = InterpolationParams::constant(2, 2, 1.0).unwrap();
        let lam: Vec<Vec<Rat>> = vec![vec![Rat::one(); 2]; 2];
        let taus = exact_tau_levels(2).unwrap();

        let exact_next = exact_qdp_step(&exact, &theta, &lam, &taus);
        let float_next = crate::qdp::qdp_step_discrete(&mrp, &table, &lambda).unwrap();
        for x in 0..2 {
            for i in 0..2 {
                assert_eq!(rat_to_f64(&exact_next[x][i]), float_next.get(x, i));
            }
        }
    }

    #[test]
    fn exact_mrp_validation() {
        assert!(ExactMrp::new(
            vec![vec![rat("0.5"), rat("0.4")]],
            vec![vec![(rat("0"), rat("1"))]],
            rat("0.5"),
            vec![false],
        )
        .is_err());
        assert!(ExactMrp::new(
            vec![vec![rat("1")]],
            vec![vec![(rat("0"), rat("1"))]],
            rat("1"),
            vec![false],
        )
        .is_err());
    }
}
