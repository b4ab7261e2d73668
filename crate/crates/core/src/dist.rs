//! Probability distributions on the real line.
//!
//! Two representations are provided:
//!
//! * [`FiniteDistribution`] — a sorted atom list with exact CDF, generalized
//!   inverse CDF, and Wasserstein-distance queries. This is the workhorse for
//!   quantile mixtures and finite-support Bellman targets.
//! * [`ContinuousCdf`] — a lazily evaluated CDF (with left limits, an
//!   optional analytic inverse, and a sampler) for reward families such as
//!   Gaussian and uniform.
//!
//! Both generalized inverses follow the usual conventions:
//! `F⁻¹(τ) = inf { y : F(y) ≥ τ }` (least τ-quantile) and
//! `F̄⁻¹(τ) = inf { y : F(y) > τ }` (greatest τ-quantile).

use std::fmt;
use std::sync::Arc;

use rand::RngCore;
use rand_distr::Distribution as RandDistribution;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Tolerance for probability normalization checks.
pub const PROB_TOL: f64 = 1e-12;

/// Normalization tolerance for an `n`-term probability vector. Summing n
/// rounded terms accumulates error linear in n, so the flat [`PROB_TOL`]
/// would spuriously reject large empirical resamples; four ulps per atom
/// covers the worst-case drift with headroom.
fn sum_tol(n: usize) -> f64 {
    PROB_TOL.max(n as f64 * 4.0 * f64::EPSILON)
}

/// A probability distribution with finitely many atoms.
///
/// Atoms are kept sorted by location with strictly increasing locations;
/// duplicate locations are merged at construction so that CDF scans are
/// unambiguous. Probabilities are all positive and sum to one within
/// [`PROB_TOL`].
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteDistribution {
    locations: Vec<f64>,
    probabilities: Vec<f64>,
    // Cumulative sums, cумulative[i] = P(Z <= locations[i]); last entry ~ 1.
    cumulative: Vec<f64>,
}

impl FiniteDistribution {
    /// Build a distribution from (location, probability) pairs.
    ///
    /// Pairs need not be sorted; zero-probability entries are rejected,
    /// duplicates are merged. Errors if any probability is non-positive or
    /// non-finite, any location is non-finite, the list is empty, or the
    /// probabilities do not sum to 1 within `1e-12`.
    pub fn new(atoms: impl IntoIterator<Item = (f64, f64)>) -> Result<Self> {
        let mut pairs: Vec<(f64, f64)> = atoms.into_iter().collect();
        if pairs.is_empty() {
            return Err(Error::Validation("distribution needs at least one atom".into()));
        }
        for &(loc, p) in &pairs {
            if !loc.is_finite() {
                return Err(Error::Validation(format!("non-finite atom location {loc}")));
            }
            if !p.is_finite() || p <= 0.0 {
                return Err(Error::Validation(format!(
                    "atom probability must be positive and finite, got {p}"
                )));
            }
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));

        let mut locations: Vec<f64> = Vec::with_capacity(pairs.len());
        let mut probabilities: Vec<f64> = Vec::with_capacity(pairs.len());
        for (loc, p) in pairs {
            match locations.last() {
                Some(&prev) if prev == loc => {
                    *probabilities.last_mut().expect("non-empty") += p;
                }
                _ => {
                    locations.push(loc);
                    probabilities.push(p);
                }
            }
        }

        let mut cumulative = Vec::with_capacity(probabilities.len());
        let mut acc = 0.0;
        for &p in &probabilities {
            acc += p;
            cumulative.push(acc);
        }
        let tol = sum_tol(probabilities.len());
        if (acc - 1.0).abs() > tol {
            return Err(Error::Validation(format!(
                "probabilities sum to {acc}, expected 1 within {tol}"
            )));
        }

        Ok(Self { locations, probabilities, cumulative })
    }

    /// The Dirac distribution δ_c.
    pub fn dirac(c: f64) -> Result<Self> {
        Self::new([(c, 1.0)])
    }

    /// Empirical distribution of a sample (each point weighted 1/n).
    pub fn empirical(samples: &[f64]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Validation("empirical distribution of an empty sample".into()));
        }
        let w = 1.0 / samples.len() as f64;
        // Sort once here rather than paying the generic merge path's
        // per-atom overhead on million-point samples.
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mut locations: Vec<f64> = Vec::new();
        let mut counts: Vec<usize> = Vec::new();
        for &s in &sorted {
            if !s.is_finite() {
                return Err(Error::Validation(format!("non-finite sample value {s}")));
            }
            match locations.last() {
                Some(&prev) if prev == s => *counts.last_mut().expect("non-empty") += 1,
                _ => {
                    locations.push(s);
                    counts.push(1);
                }
            }
        }
        let probabilities: Vec<f64> = counts.iter().map(|&c| c as f64 * w).collect();
        let mut cumulative = Vec::with_capacity(probabilities.len());
        let mut acc = 0.0;
        for &p in &probabilities {
            acc += p;
            cumulative.push(acc);
        }
        Ok(Self { locations, probabilities, cumulative })
    }

    /// Atom locations, strictly increasing.
    pub fn locations(&self) -> &[f64] {
        &self.locations
    }

    /// Atom probabilities, aligned with [`locations`](Self::locations).
    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    /// Number of distinct atoms.
    pub fn len(&self) -> usize {
        self.locations.len()
    }

    /// Always false by construction; present for API symmetry.
    pub fn is_empty(&self) -> bool {
        self.locations.is_empty()
    }

    /// Mean of the distribution.
    pub fn mean(&self) -> f64 {
        self.locations
            .iter()
            .zip(&self.probabilities)
            .map(|(&z, &p)| z * p)
            .sum()
    }

    /// `F(t) = P(Z ≤ t)`: total probability of atoms at or below `t`.
    pub fn cdf_at(&self, t: f64) -> f64 {
        // locations[..idx] are <= t
        let idx = self.locations.partition_point(|&z| z <= t);
        if idx == 0 {
            0.0
        } else {
            self.cumulative[idx - 1].min(1.0)
        }
    }

    /// Left limit `F(t−) = P(Z < t)`: probability strictly below `t`.
    pub fn cdf_left_limit(&self, t: f64) -> f64 {
        let idx = self.locations.partition_point(|&z| z < t);
        if idx == 0 {
            0.0
        } else {
            self.cumulative[idx - 1].min(1.0)
        }
    }

    /// Least τ-quantile `F⁻¹(τ) = inf { y : F(y) ≥ τ }`.
    ///
    /// Errors unless `0 < τ < 1`.
    pub fn inv_cdf(&self, tau: f64) -> Result<f64> {
        check_tau(tau)?;
        let idx = self.cumulative.partition_point(|&c| c < tau);
        Ok(self.locations[idx.min(self.len() - 1)])
    }

    /// Greatest τ-quantile `F̄⁻¹(τ) = inf { y : F(y) > τ }`.
    ///
    /// Errors unless `0 < τ < 1`.
    pub fn right_inv_cdf(&self, tau: f64) -> Result<f64> {
        check_tau(tau)?;
        let idx = self.cumulative.partition_point(|&c| c <= tau);
        Ok(self.locations[idx.min(self.len() - 1)])
    }

    /// Membership in the set of τ-quantiles: true iff
    /// `F(z−) ≤ τ ≤ F(z)` holds and `z` is either an atom location or sits
    /// in the interior of a flat region at level exactly τ.
    pub fn is_tau_quantile(&self, tau: f64, z: f64) -> bool {
        if !(0.0 < tau && tau < 1.0) {
            return false;
        }
        let lo = self.cdf_left_limit(z);
        let hi = self.cdf_at(z);
        if !(lo <= tau && tau <= hi) {
            return false;
        }
        self.locations.binary_search_by(|probe| probe.total_cmp(&z)).is_ok() || hi == tau
    }

    /// Exact Wasserstein-1 distance `∫₀¹ |F⁻¹_ν(t) − F⁻¹_ν′(t)| dt`,
    /// evaluated in closed form over the merged cumulative-breakpoint grid.
    pub fn wasserstein1(&self, other: &Self) -> f64 {
        merged_quantile_segments(self, other)
            .map(|(len, a, b)| len * (a - b).abs())
            .sum()
    }

    /// Exact Wasserstein-∞ distance `sup_{t∈(0,1)} |F⁻¹_ν(t) − F⁻¹_ν′(t)|`,
    /// the maximum quantile gap over the merged breakpoint grid.
    pub fn wasserstein_inf(&self, other: &Self) -> f64 {
        merged_quantile_segments(self, other)
            .filter(|&(len, _, _)| len > 0.0)
            .map(|(_, a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Weighted mixture of several distributions. Weights must be positive
    /// and sum to 1 within `1e-12`.
    pub fn mix(parts: &[(f64, FiniteDistribution)]) -> Result<Self> {
        if parts.is_empty() {
            return Err(Error::Validation("mix of an empty part list".into()));
        }
        let total: f64 = parts.iter().map(|(w, _)| w).sum();
        if (total - 1.0).abs() > PROB_TOL {
            return Err(Error::Validation(format!(
                "mixture weights sum to {total}, expected 1 within {PROB_TOL}"
            )));
        }
        for &(w, _) in parts {
            if !(w > 0.0) {
                return Err(Error::Validation(format!("mixture weight must be positive, got {w}")));
            }
        }
        let atoms = parts.iter().flat_map(|(w, d)| {
            d.locations
                .iter()
                .zip(&d.probabilities)
                .map(move |(&z, &p)| (z, w * p))
        });
        Self::new(atoms)
    }

    /// Pushforward under `z ↦ scale·z + shift` with `scale ≥ 0`.
    ///
    /// `scale = 0` collapses everything onto δ_shift.
    pub fn affine_pushforward(&self, scale: f64, shift: f64) -> Result<Self> {
        if !(scale >= 0.0) {
            return Err(Error::Domain(format!("affine pushforward needs scale ≥ 0, got {scale}")));
        }
        Self::new(
            self.locations
                .iter()
                .zip(&self.probabilities)
                .map(|(&z, &p)| (scale * z + shift, p)),
        )
    }

    /// Draw one value using the inverse-CDF method on a single uniform.
    pub fn sample(&self, rng: &mut dyn RngCore) -> f64 {
        let u: f64 = rand::Rng::random(&mut &mut *rng);
        let idx = self.cumulative.partition_point(|&c| c < u);
        self.locations[idx.min(self.len() - 1)]
    }

    /// Smallest and largest atom locations.
    pub fn support_bounds(&self) -> (f64, f64) {
        (self.locations[0], *self.locations.last().expect("non-empty"))
    }
}

impl fmt::Display for FiniteDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (k, (z, p)) in self.locations.iter().zip(&self.probabilities).enumerate() {
            if k > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{z}: {p}")?;
        }
        write!(f, "}}")
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if tau.is_finite() && 0.0 < tau && tau < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("quantile level must lie in (0,1), got {tau}")))
    }
}

/// Iterate the segments of the merged quantile grid of two distributions.
///
/// Yields `(segment_length, F⁻¹_a, F⁻¹_b)` for each maximal interval of
/// (0,1) on which both quantile functions are constant. Zero-length
/// segments (coinciding breakpoints) are yielded with length 0.
fn merged_quantile_segments<'a>(
    a: &'a FiniteDistribution,
    b: &'a FiniteDistribution,
) -> impl Iterator<Item = (f64, f64, f64)> + 'a {
    MergedSegments { a, b, ia: 0, ib: 0, prev: 0.0, done: false }
}

struct MergedSegments<'a> {
    a: &'a FiniteDistribution,
    b: &'a FiniteDistribution,
    ia: usize,
    ib: usize,
    prev: f64,
    done: bool,
}

impl Iterator for MergedSegments<'_> {
    type Item = (f64, f64, f64);

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        // A side whose breakpoints are exhausted keeps its last atom; its
        // cumulative totals can lag the other side's by a rounding ulp.
        let ca = self.a.cumulative.get(self.ia).copied().unwrap_or(f64::INFINITY);
        let cb = self.b.cumulative.get(self.ib).copied().unwrap_or(f64::INFINITY);
        if ca.is_infinite() && cb.is_infinite() {
            self.done = true;
            return None;
        }
        let cut = ca.min(cb);
        let item = (
            (cut - self.prev).max(0.0),
            self.a.locations[self.ia.min(self.a.len() - 1)],
            self.b.locations[self.ib.min(self.b.len() - 1)],
        );
        self.prev = cut;
        if ca <= cut {
            self.ia += 1;
        }
        if cb <= cut {
            self.ib += 1;
        }
        Some(item)
    }
}

/// A distribution described by its CDF. Used for continuous reward families
/// and for lazily evaluated mixtures of them.
///
/// `cdf` must be nondecreasing with limits 0/1; when a `support_hint`
/// `(lower, upper)` is given, `left_limit(lower) ≤ 1e-9` and
/// `cdf(upper) ≥ 1−1e-9` are checked at construction.
/// `left_limit(t) = P(Z < t)`; for the continuous built-ins it equals
/// `cdf`.
#[derive(Clone)]
pub struct ContinuousCdf {
    cdf: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    left_limit: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    inv_cdf: Option<Arc<dyn Fn(f64) -> f64 + Send + Sync>>,
    support_hint: Option<(f64, f64)>,
    sampler: Arc<dyn Fn(&mut dyn RngCore) -> f64 + Send + Sync>,
}

impl fmt::Debug for ContinuousCdf {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ContinuousCdf")
            .field("support_hint", &self.support_hint)
            .field("has_inv_cdf", &self.inv_cdf.is_some())
            .finish()
    }
}

const CDF_LIMIT_TOL: f64 = 1e-9;

impl ContinuousCdf {
    /// Build from explicit closures. See the type docs for the invariants;
    /// the 0/1 limit check runs against `support_hint` when present.
    pub fn from_parts(
        cdf: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
        left_limit: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
        inv_cdf: Option<Arc<dyn Fn(f64) -> f64 + Send + Sync>>,
        support_hint: Option<(f64, f64)>,
        sampler: Arc<dyn Fn(&mut dyn RngCore) -> f64 + Send + Sync>,
    ) -> Result<Self> {
        if let Some((lo, hi)) = support_hint {
            if !(lo < hi) {
                return Err(Error::Validation(format!(
                    "support hint must satisfy lower < upper, got ({lo}, {hi})"
                )));
            }
            // Left limit at the lower endpoint: an atom sitting exactly at
            // `lo` (a Dirac mixture component, say) is still inside the
            // hinted support.
            let at_lo = left_limit(lo);
            let at_hi = cdf(hi);
            if at_lo > CDF_LIMIT_TOL || at_hi < 1.0 - CDF_LIMIT_TOL {
                return Err(Error::Validation(format!(
                    "cdf not 0/1 at support hint endpoints: F({lo}−)={at_lo}, F({hi})={at_hi}"
                )));
            }
        }
        Ok(Self { cdf, left_limit, inv_cdf, support_hint, sampler })
    }

    /// Gaussian N(μ, σ²), σ > 0. The support hint spans μ ± 8σ.
    pub fn gaussian(mean: f64, std_dev: f64) -> Result<Self> {
        if !(std_dev > 0.0) || !std_dev.is_finite() || !mean.is_finite() {
            return Err(Error::Domain(format!(
                "gaussian needs finite mean and positive std dev, got N({mean}, {std_dev}²)"
            )));
        }
        let normal = Normal::new(mean, std_dev).expect("validated parameters");
        let cdf = Arc::new(move |t: f64| normal.cdf(t));
        let inv = Arc::new(move |u: f64| normal.inverse_cdf(u));
        let sampler_dist = rand_distr::Normal::new(mean, std_dev).expect("validated parameters");
        let sampler = Arc::new(move |rng: &mut dyn RngCore| sampler_dist.sample(&mut &mut *rng));
        Self::from_parts(
            cdf.clone(),
            cdf,
            Some(inv),
            Some((mean - 8.0 * std_dev, mean + 8.0 * std_dev)),
            sampler,
        )
    }

    /// Uniform on [a, b], a < b.
    pub fn uniform(a: f64, b: f64) -> Result<Self> {
        if !(a < b) || !a.is_finite() || !b.is_finite() {
            return Err(Error::Domain(format!("uniform needs a < b, got [{a}, {b}]")));
        }
        let width = b - a;
        let cdf = Arc::new(move |t: f64| ((t - a) / width).clamp(0.0, 1.0));
        let inv = Arc::new(move |u: f64| a + u * width);
        let sampler =
            Arc::new(move |rng: &mut dyn RngCore| rand::Rng::random_range(&mut &mut *rng, a..b));
        Self::from_parts(cdf.clone(), cdf, Some(inv), Some((a, b)), sampler)
    }

    /// Weighted mixture of continuous and finite components, evaluated
    /// lazily. Weights must be positive and sum to 1 within `1e-12`.
    pub fn mixture(parts: Vec<(f64, RewardModel)>) -> Result<Self> {
        if parts.is_empty() {
            return Err(Error::Validation("mixture of an empty part list".into()));
        }
        let total: f64 = parts.iter().map(|(w, _)| w).sum();
        if (total - 1.0).abs() > PROB_TOL {
            return Err(Error::Validation(format!(
                "mixture weights sum to {total}, expected 1 within {PROB_TOL}"
            )));
        }
        let mut hint: Option<(f64, f64)> = None;
        for (w, part) in &parts {
            if !(*w > 0.0) {
                return Err(Error::Validation(format!("mixture weight must be positive, got {w}")));
            }
            let part_hint = match part {
                RewardModel::Finite(d) => Some(d.support_bounds()),
                RewardModel::Continuous(c) => c.support_hint,
            };
            hint = match (hint, part_hint) {
                (None, h) => h,
                (h, None) => h,
                (Some((lo, hi)), Some((plo, phi))) => Some((lo.min(plo), hi.max(phi))),
            };
        }
        let parts = Arc::new(parts);

        let p1 = parts.clone();
        let cdf = Arc::new(move |t: f64| {
            p1.iter().map(|(w, m)| w * m.cdf(t)).sum::<f64>().clamp(0.0, 1.0)
        });
        let p2 = parts.clone();
        let left = Arc::new(move |t: f64| {
            p2.iter().map(|(w, m)| w * m.cdf_left_limit(t)).sum::<f64>().clamp(0.0, 1.0)
        });
        let p3 = parts.clone();
        let sampler = Arc::new(move |rng: &mut dyn RngCore| {
            let u: f64 = rand::Rng::random(&mut &mut *rng);
            let mut acc = 0.0;
            for (w, m) in p3.iter() {
                acc += w;
                if u < acc {
                    return m.sample(rng);
                }
            }
            p3.last().expect("non-empty").1.sample(rng)
        });
        Self::from_parts(cdf, left, None, hint, sampler)
    }

    /// `F(t)`.
    pub fn cdf(&self, t: f64) -> f64 {
        (self.cdf)(t)
    }

    /// `F(t−)`.
    pub fn cdf_left_limit(&self, t: f64) -> f64 {
        (self.left_limit)(t)
    }

    /// Analytic inverse CDF when available.
    pub fn inv_cdf(&self, u: f64) -> Option<f64> {
        self.inv_cdf.as_ref().map(|f| f(u))
    }

    /// Rough support bounds used to seed root-finding brackets.
    pub fn support_hint(&self) -> Option<(f64, f64)> {
        self.support_hint
    }

    /// Draw one value.
    pub fn sample(&self, rng: &mut dyn RngCore) -> f64 {
        (self.sampler)(rng)
    }
}

/// Reward distribution attached to a state (or state-action pair): either an
/// exact finite-support distribution or a lazily evaluated continuous CDF.
#[derive(Debug, Clone)]
pub enum RewardModel {
    Finite(FiniteDistribution),
    Continuous(ContinuousCdf),
}

impl RewardModel {
    /// Dirac reward δ_c (represented with finite support).
    pub fn dirac(c: f64) -> Result<Self> {
        Ok(Self::Finite(FiniteDistribution::dirac(c)?))
    }

    /// Gaussian reward N(μ, σ²).
    pub fn gaussian(mean: f64, std_dev: f64) -> Result<Self> {
        Ok(Self::Continuous(ContinuousCdf::gaussian(mean, std_dev)?))
    }

    /// Uniform reward on [a, b].
    pub fn uniform(a: f64, b: f64) -> Result<Self> {
        Ok(Self::Continuous(ContinuousCdf::uniform(a, b)?))
    }

    /// True for the finite-support variant.
    pub fn is_finite_support(&self) -> bool {
        matches!(self, Self::Finite(_))
    }

    /// `F(t)`.
    pub fn cdf(&self, t: f64) -> f64 {
        match self {
            Self::Finite(d) => d.cdf_at(t),
            Self::Continuous(c) => c.cdf(t),
        }
    }

    /// `F(t−)`.
    pub fn cdf_left_limit(&self, t: f64) -> f64 {
        match self {
            Self::Finite(d) => d.cdf_left_limit(t),
            Self::Continuous(c) => c.cdf_left_limit(t),
        }
    }

    /// Draw one value.
    pub fn sample(&self, rng: &mut dyn RngCore) -> f64 {
        match self {
            Self::Finite(d) => d.sample(rng),
            Self::Continuous(c) => c.sample(rng),
        }
    }

    /// Support bounds if the model is bounded: exact for finite support,
    /// the support hint for uniform-like models, `None` for unbounded
    /// families (Gaussian).
    pub fn bounded_support(&self) -> Option<(f64, f64)> {
        match self {
            Self::Finite(d) => Some(d.support_bounds()),
            Self::Continuous(c) => {
                // A hint is only a bracketing aid in general; treat it as a
                // true bound only when the CDF is exactly 0/1 there.
                let (lo, hi) = c.support_hint()?;
                if c.cdf(lo) == 0.0 && c.cdf(hi) == 1.0 {
                    Some((lo, hi))
                } else {
                    None
                }
            }
        }
    }

    /// Mean reward. Exact for finite support; for continuous models uses
    /// the analytic inverse CDF midpoint rule over a fine grid fallback.
    pub fn mean(&self) -> f64 {
        match self {
            Self::Finite(d) => d.mean(),
            Self::Continuous(c) => {
                if let Some(inv) = &c.inv_cdf {
                    // 4096-point midpoint rule on the quantile integral.
                    let n = 4096;
                    (0..n).map(|k| inv((k as f64 + 0.5) / n as f64)).sum::<f64>() / n as f64
                } else {
                    let (lo, hi) = c.support_hint.unwrap_or((-1e3, 1e3));
                    // E[Z] = hi - ∫ F over [lo,hi] + lo·F(lo) side terms; a
                    // plain CDF quadrature is enough for diagnostics.
                    let n = 4096;
                    let h = (hi - lo) / n as f64;
                    let integral: f64 =
                        (0..n).map(|k| c.cdf(lo + (k as f64 + 0.5) * h)).sum::<f64>() * h;
                    hi - integral
                }
            }
        }
    }
}
