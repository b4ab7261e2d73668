//! Acceptance suite: one test per release criterion, each asserting its
//! stated tolerance and runtime budget against the bundled experiment
//! configs. Run with `cargo test --test acceptance`; every test prints
//! the usual one-line pass/fail verdict.

use std::path::PathBuf;
use std::process::Command;
use std::time::{Duration, Instant};

use qtd_core::reference::{greatest_quantile_scan, least_quantile_scan, project_scan, qdp_step_scan};
use qtd_core::{
    check_w1_bound, distance_to_fixed_point_set, euler_integrate, lyapunov_simple,
    monte_carlo_returns, polish_fixed_point, project, qdp_solve, qdp_step_continuous,
    qdp_step_discrete, run_asynchronous, run_synchronous, tau_levels, truncation_horizon,
    ExperimentConfig, FiniteDistribution, InterpolationParams, Mrp, QuantileTable, RewardModel,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn config_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn load(name: &str) -> ExperimentConfig {
    ExperimentConfig::load(&config_path(name)).expect("bundled config must load")
}

fn zeros(n: usize, m: usize) -> QuantileTable {
    QuantileTable::constant(n, m, 0.0).unwrap()
}

fn lambda_zero(n: usize, m: usize) -> InterpolationParams {
    InterpolationParams::constant(n, m, 0.0).unwrap()
}

/// Supremum-Wasserstein distance between equal-shape tables, computed
/// directly on sorted rows.
fn table_winf(a: &QuantileTable, b: &QuantileTable) -> f64 {
    let mut worst = 0.0f64;
    for x in 0..a.num_states() {
        let mut ra = a.row(x).to_vec();
        let mut rb = b.row(x).to_vec();
        ra.sort_by(f64::total_cmp);
        rb.sort_by(f64::total_cmp);
        for (va, vb) in ra.iter().zip(&rb) {
            worst = worst.max((va - vb).abs());
        }
    }
    worst
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

fn assert_budget(start: Instant, limit: Duration, what: &str) {
    let elapsed = start.elapsed();
    assert!(
        elapsed <= limit,
        "{what} took {elapsed:?}, budget {limit:?}"
    );
}

/// The two-state model with Dirac rewards 2 and −1 at γ=0.9 has a
/// rational fixed point whose upper quantile at the first state is the
/// round number 20; the rational polish must recover it exactly.
#[test]
fn criterion_01_exact_fixed_point_value() {
    let start = Instant::now();
    let cfg = load("example63.json");
    let mrp = cfg.build_mrp().unwrap();
    let exact = cfg.build_exact().unwrap().expect("decimal model mirrors exactly");
    let lambda = cfg.interpolation().unwrap().expect("concrete λ");
    let init = zeros(mrp.num_states(), cfg.m);
    let (approx, _) = qdp_solve(&mrp, &lambda, &init, 1e-10, cfg.max_iters()).unwrap();
    let polished = polish_fixed_point(&exact, &lambda, &approx, 1e-6)
        .unwrap()
        .expect("assignment must verify");
    assert_eq!(polished.get(0, 1), 20.0, "upper quantile at the first state");
    assert_budget(start, Duration::from_secs(1), "exact fixed-point solve");
}

fn random_probs(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let weights: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..1.0)).collect();
    let total: f64 = weights.iter().sum();
    weights.iter().map(|w| w / total).collect()
}

fn random_dist(rng: &mut ChaCha8Rng, max_atoms: usize) -> FiniteDistribution {
    let k = rng.random_range(1..=max_atoms);
    let probs = random_probs(rng, k);
    FiniteDistribution::new(
        probs.into_iter().map(|p| (rng.random_range(-5.0..5.0), p)),
    )
    .unwrap()
}

fn random_triple(rng: &mut ChaCha8Rng) -> (Mrp, QuantileTable, QuantileTable, InterpolationParams) {
    let n = rng.random_range(1..=3usize);
    let m = rng.random_range(1..=3usize);
    let gamma = rng.random_range(0.2..0.95);
    let transition: Vec<Vec<f64>> = (0..n).map(|_| random_probs(rng, n)).collect();
    let rewards: Vec<RewardModel> =
        (0..n).map(|_| RewardModel::Finite(random_dist(rng, 3))).collect();
    let mrp = Mrp::new(transition, rewards, gamma, vec![false; n]).unwrap();
    let random_table = |rng: &mut ChaCha8Rng| {
        QuantileTable::new(
            (0..n)
                .map(|_| (0..m).map(|_| rng.random_range(-5.0..5.0)).collect())
                .collect(),
        )
        .unwrap()
    };
    let ta = random_table(rng);
    let tb = random_table(rng);
    let lambda = InterpolationParams::new(
        (0..n)
            .map(|_| (0..m).map(|_| rng.random_range(0.0..=1.0)).collect())
            .collect(),
    )
    .unwrap();
    (mrp, ta, tb, lambda)
}

/// One projected Bellman step contracts the supremum-Wasserstein
/// distance by γ on 1000 random triples, and the projection alone never
/// expands it on 1000 random distribution pairs.
#[test]
fn criterion_02_contraction_suite() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xC027);
    for case in 0..1000 {
        let (mrp, ta, tb, lambda) = random_triple(&mut rng);
        let sa = qdp_step_discrete(&mrp, &ta, &lambda).unwrap();
        let sb = qdp_step_discrete(&mrp, &tb, &lambda).unwrap();
        let before = table_winf(&ta, &tb);
        let after = table_winf(&sa, &sb);
        assert!(
            after <= mrp.gamma() * before + 1e-12,
            "case {case}: step expanded {after} > {} * {before}",
            mrp.gamma()
        );
    }
    for case in 0..1000 {
        let da = random_dist(&mut rng, 8);
        let db = random_dist(&mut rng, 8);
        let m = rng.random_range(1..=4usize);
        let lam: Vec<f64> = (0..m).map(|_| rng.random_range(0.0..=1.0)).collect();
        let pa = project(&da, m, &lam).unwrap();
        let pb = project(&db, m, &lam).unwrap();
        let after = pa
            .iter()
            .zip(&pb)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0f64, f64::max);
        assert!(
            after <= da.wasserstein_inf(&db) + 1e-12,
            "case {case}: projection expanded the distance"
        );
    }
    assert_budget(start, Duration::from_secs(10), "contraction suite");
}

/// Iterates from zeros approach the fixed point geometrically at rate γ
/// on every bundled model. Distances are recorded while γ^k ≥ 1e-2;
/// below that the float floor of the reference solve would dominate.
#[test]
fn criterion_03_geometric_convergence() {
    let start = Instant::now();
    let configs = [
        "example63.json",
        "fig2_chain.json",
        "fig3_det_half.json",
        "fig3_dirac.json",
        "fig3_gaussian.json",
        "selfloop.json",
        "uniform_bound.json",
    ];
    for name in configs {
        let cfg = load(name);
        let mrp = cfg.build_mrp().unwrap();
        let lambda = cfg.interpolation().unwrap().expect("concrete λ");
        let init = zeros(mrp.num_states(), cfg.m);
        let (hat, _) = qdp_solve(&mrp, &lambda, &init, 1e-12, 1_000_000).unwrap();
        let discrete = (0..mrp.num_states())
            .all(|x| matches!(mrp.reward(x), RewardModel::Finite(_)));
        let w0 = table_winf(&init, &hat);
        let gamma = mrp.gamma();
        let mut table = init;
        let mut factor = 1.0;
        let mut k = 0usize;
        loop {
            factor *= gamma;
            k += 1;
            if factor < 1e-2 {
                break;
            }
            table = if discrete {
                qdp_step_discrete(&mrp, &table, &lambda).unwrap()
            } else {
                qdp_step_continuous(&mrp, &table, 1e-13).unwrap()
            };
            let dist = table_winf(&table, &hat);
            assert!(
                dist <= factor * w0 * (1.0 + 1e-9),
                "{name}: step {k} at distance {dist}, allowed {}",
                factor * w0
            );
        }
    }
    assert_budget(start, Duration::from_secs(5), "geometric convergence");
}

fn final_distances_sync(name: &str) -> Vec<f64> {
    let cfg = load(name);
    let mrp = cfg.build_mrp().unwrap();
    let schedule = cfg.build_schedule().unwrap();
    let init = cfg.build_init().unwrap();
    cfg.seeds
        .iter()
        .map(|&seed| {
            let record =
                run_synchronous(&mrp, cfg.m, &schedule, cfg.steps, &init, seed, 0).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(0xD1A6 ^ seed);
            distance_to_fixed_point_set(&mrp, record.final_table(), cfg.lambda_samples, &mut rng)
                .unwrap()
        })
        .collect()
}

/// Synchronous stochastic runs land near the fixed point (set): median
/// final distance over ten seeds below 0.05 on the Gaussian two-cycle
/// and below 0.1 on the fair-coin model whose fixed points form a
/// genuine set.
#[test]
fn criterion_04_synchronous_convergence() {
    let start = Instant::now();
    let gaussian = final_distances_sync("fig3_gaussian.json");
    assert_eq!(gaussian.len(), 10);
    let med = median(gaussian);
    assert!(med < 0.05, "gaussian median distance {med} ≥ 0.05");
    let coin = final_distances_sync("fig3_det_half.json");
    assert_eq!(coin.len(), 10);
    let med = median(coin);
    assert!(med < 0.1, "fair-coin median distance {med} ≥ 0.1");
    assert_budget(start, Duration::from_secs(60), "synchronous runs");
}

/// Asynchronous runs driven by an iid state source reach the same 0.05
/// median threshold on the Gaussian two-cycle.
#[test]
fn criterion_05_asynchronous_convergence() {
    let start = Instant::now();
    let cfg = load("fig3_gaussian.json");
    let mrp = cfg.build_mrp().unwrap();
    let schedule = cfg.build_schedule().unwrap();
    let source = cfg.build_state_source().unwrap();
    let init = cfg.build_init().unwrap();
    let distances: Vec<f64> = cfg
        .seeds
        .iter()
        .map(|&seed| {
            let record = run_asynchronous(
                &mrp, cfg.m, &schedule, cfg.steps, &init, seed, &source, 0,
            )
            .unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(0xD1A6 ^ seed);
            distance_to_fixed_point_set(&mrp, record.final_table(), cfg.lambda_samples, &mut rng)
                .unwrap()
        })
        .collect();
    assert_eq!(distances.len(), 10);
    let med = median(distances);
    assert!(med < 0.05, "median distance {med} ≥ 0.05");
    assert_budget(start, Duration::from_secs(60), "asynchronous runs");
}

/// The closed-form approximation bound holds against measured Monte
/// Carlo distances: 0.2 plus sampling margin for the uniform-reward
/// self-loop, and only the truncation error for a fully deterministic
/// model whose bound collapses to zero.
#[test]
fn criterion_06_fixed_point_quality_bounds() {
    let start = Instant::now();
    let cfg = load("uniform_bound.json");
    let mrp = cfg.build_mrp().unwrap();
    let lambda = cfg.interpolation().unwrap().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0xB07D);
    let report = check_w1_bound(&mrp, cfg.m, &lambda, 1_000_000, None, &mut rng).unwrap();
    assert!((report.bound - 0.2).abs() < 1e-15, "formula bound is 0.2, got {}", report.bound);
    assert!(
        report.measured_w1 <= report.bound + report.mc_margin,
        "uniform-reward bound violated: {} > {} + {}",
        report.measured_w1,
        report.bound,
        report.mc_margin
    );

    let cfg = load("selfloop.json");
    let mrp = cfg.build_mrp().unwrap();
    let lambda = cfg.interpolation().unwrap().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0xB07D);
    let report =
        check_w1_bound(&mrp, cfg.m, &lambda, 1_000_000, cfg.mdp.deterministic_after_k, &mut rng)
            .unwrap();
    assert_eq!(report.bound, 0.0, "deterministic model has a zero bound");
    assert!(
        report.measured_w1 <= report.mc_margin,
        "deterministic error {} exceeds truncation margin {}",
        report.measured_w1,
        report.mc_margin
    );
    assert_budget(start, Duration::from_secs(30), "quality bounds");
}

/// Finer quantile resolutions approximate the true return distribution
/// strictly better: measured w̄₁ against one shared Monte Carlo sample
/// decreases across m ∈ {2, 5, 20, 100}.
#[test]
fn criterion_07_error_decreases_with_resolution() {
    let start = Instant::now();
    let cfg = load("example63.json");
    let mrp = cfg.build_mrp().unwrap();
    let exact = cfg.build_exact().unwrap().expect("decimal model mirrors exactly");
    let n = mrp.num_states();
    let horizon = truncation_horizon(mrp.gamma(), mrp.max_abs_reward().unwrap(), 1e-6);
    let mut rng = ChaCha8Rng::seed_from_u64(0x7D0);
    let truth: Vec<FiniteDistribution> = (0..n)
        .map(|x| monte_carlo_returns(&mrp, x, horizon, 1_000_000, &mut rng).unwrap())
        .collect();
    let mut previous = f64::INFINITY;
    for m in [2usize, 5, 20, 100] {
        let lambda = lambda_zero(n, m);
        let init = zeros(n, m);
        let (approx, _) = qdp_solve(&mrp, &lambda, &init, 1e-10, 1_000_000).unwrap();
        let table = polish_fixed_point(&exact, &lambda, &approx, 1e-6)
            .unwrap()
            .unwrap_or(approx);
        let inv_m = 1.0 / m as f64;
        let w1 = (0..n)
            .map(|x| {
                let dist = FiniteDistribution::new(
                    table.row(x).iter().map(|&v| (v, inv_m)),
                )
                .unwrap();
                dist.wasserstein1(&truth[x])
            })
            .fold(0.0f64, f64::max);
        assert!(
            w1 < previous,
            "m={m}: error {w1} did not drop below {previous}"
        );
        previous = w1;
    }
    assert_budget(start, Duration::from_secs(60), "resolution sweep");
}

/// The sup-norm distance to the fixed point acts as a Lyapunov function
/// for the continuous-time dynamics: along Euler trajectories from 20
/// random starts it decreases strictly at every step until the
/// trajectory is within 0.1 of the fixed point.
#[test]
fn criterion_08_lyapunov_descent() {
    let start = Instant::now();
    let cfg = load("fig3_gaussian.json");
    let mrp = cfg.build_mrp().unwrap();
    let n = mrp.num_states();
    let lambda = lambda_zero(n, cfg.m);
    let init = zeros(n, cfg.m);
    let (hat, _) = qdp_solve(&mrp, &lambda, &init, 1e-12, 1_000_000).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0x1DE5);
    for trial in 0..20 {
        let table = QuantileTable::new(
            (0..n)
                .map(|_| (0..cfg.m).map(|_| rng.random_range(-8.0..8.0)).collect())
                .collect(),
        )
        .unwrap();
        let path = euler_integrate(&mrp, &table, 0.01, 60.0).unwrap();
        let mut last = f64::INFINITY;
        let mut reached = false;
        for (t, point) in &path {
            let d = lyapunov_simple(point, &hat);
            if d < 0.1 {
                reached = true;
                break;
            }
            assert!(
                d < last,
                "trial {trial}: distance rose to {d} at t={t} (was {last})"
            );
            last = d;
        }
        assert!(reached, "trial {trial}: never got within 0.1 of the fixed point");
    }
    assert_budget(start, Duration::from_secs(10), "descent trajectories");
}

/// The optimized quantile routines agree with scan-based references:
/// 10^4 random distributions for the generalized inverses and the
/// projection, 10^3 random small models for the full projected step.
#[test]
fn criterion_09_oracle_equivalence() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x09AC);
    for case in 0..10_000 {
        let dist = random_dist(&mut rng, 8);
        let atoms: Vec<(f64, f64)> = dist
            .locations()
            .iter()
            .copied()
            .zip(dist.probabilities().iter().copied())
            .collect();
        let m = rng.random_range(1..=4usize);
        for &tau in &tau_levels(m).unwrap() {
            assert_eq!(
                dist.inv_cdf(tau).unwrap(),
                least_quantile_scan(&atoms, tau),
                "case {case}: least quantile at {tau}"
            );
            assert_eq!(
                dist.right_inv_cdf(tau).unwrap(),
                greatest_quantile_scan(&atoms, tau),
                "case {case}: greatest quantile at {tau}"
            );
        }
        let lam: Vec<f64> = (0..m).map(|_| rng.random_range(0.0..=1.0)).collect();
        assert_eq!(
            project(&dist, m, &lam).unwrap(),
            project_scan(&atoms, m, &lam),
            "case {case}: projection"
        );
    }
    for case in 0..1_000 {
        let (mrp, table, _, lambda) = random_triple(&mut rng);
        let got = qdp_step_discrete(&mrp, &table, &lambda).unwrap();
        let want = qdp_step_scan(&mrp, &table, &lambda).unwrap();
        assert_eq!(got.rows(), want.rows(), "case {case}: projected step");
    }
    assert_budget(start, Duration::from_secs(30), "oracle suites");
}

/// Repeated CLI invocations with the same config and seed produce
/// byte-identical files, across the solver, the stochastic runner, and
/// the Monte Carlo bound report.
#[test]
fn criterion_10_cli_determinism() {
    let exe = env!("CARGO_BIN_EXE_qtd");
    let cases: [(&str, &str, &[&str]); 3] = [
        ("qdp", "example63.json", &["fixed_point.csv", "iters.txt"]),
        ("qtd", "fig3_dirac.json", &["run_0.csv", "run_7.csv", "summary.csv"]),
        ("bound", "selfloop.json", &["bound.txt"]),
    ];
    for (subcommand, config, files) in cases {
        let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
        for dir in &dirs {
            let status = Command::new(exe)
                .arg(subcommand)
                .arg("--config")
                .arg(config_path(config))
                .arg("--out")
                .arg(dir.path())
                .status()
                .unwrap();
            assert!(status.success(), "{subcommand} on {config} failed");
        }
        for file in files {
            let a = std::fs::read(dirs[0].path().join(file)).unwrap();
            let b = std::fs::read(dirs[1].path().join(file)).unwrap();
            assert!(!a.is_empty(), "{file} empty for {subcommand}");
            assert_eq!(a, b, "{file} differs between runs of {subcommand} on {config}");
        }
    }
}
