//! Experiment runner: loads a JSON experiment config and emits CSV or
//! plain-text artifacts for each pipeline (fixed-point solving,
//! stochastic runs, vector-field and trajectory dumps, bound checks,
//! back-up diagrams).
//!
//! Exit codes: 0 success, 2 config error, 3 solver non-convergence,
//! 4 runtime error. All outputs use `,` separators, `.` decimals, and LF
//! line endings; states are labelled `x1`, `x2`, … and quantile indices
//! are 1-based, matching the config file's conventions.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use qtd_core::config::{Algo, ExperimentConfig};
use qtd_core::error::{Error, Result};
use qtd_core::exact::polish_fixed_point;
use qtd_core::quantile::{tau_levels, InterpolationParams, QuantileTable};
use qtd_core::{
    backup_diagram, check_w1_bound, distance_to_fixed_point_set, euler_integrate,
    expected_update, qdp_solve, run_asynchronous, run_monte_carlo, run_synchronous, td_run,
    truncation_horizon, Mrp, RunRecord,
};

/// Allowed drift between the float solve and the exact fixed point when
/// polishing; anything larger means the float solve stopped somewhere
/// unrelated and is reported as-is.
const POLISH_SLACK: f64 = 1e-6;
/// Stream index for the summary-distance generator, distinct from the
/// per-state sampling streams used inside runs.
const DIAGNOSTIC_STREAM: u64 = 0x5EED;

#[derive(Parser)]
#[command(name = "qtd", version, about = "Tabular quantile distributional RL experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the projected fixed point by dynamic programming
    Qdp(CommonArgs),
    /// Run the stochastic algorithm selected by the config across seeds
    Qtd(CommonArgs),
    /// Dump the expected-update field over a grid (2-coordinate models)
    Field(FieldArgs),
    /// Measure the Wasserstein-1 gap against the closed-form bound
    Bound(CommonArgs),
    /// Emit the back-up diagram of the solved fixed point
    Backup(CommonArgs),
    /// Integrate the mean dynamics and dump the trajectory
    Trajectory(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Experiment config file (JSON)
    #[arg(long)]
    config: PathBuf,
    /// Output directory, created if missing
    #[arg(long)]
    out: PathBuf,
    /// Use this single seed instead of the config's seed list
    #[arg(long)]
    seed_override: Option<u64>,
}

#[derive(Args)]
struct FieldArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Grid as `a0:a1:n,b0:b1:n` over the two free coordinates
    #[arg(long)]
    grid: Option<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Config(_) => 2,
                Error::NonConvergence { .. } => 3,
                _ => 4,
            })
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Qdp(args) => cmd_qdp(&args),
        Command::Qtd(args) => cmd_qtd(&args),
        Command::Field(args) => cmd_field(&args),
        Command::Bound(args) => cmd_bound(&args),
        Command::Backup(args) => cmd_backup(&args),
        Command::Trajectory(args) => cmd_trajectory(&args),
    }
}

fn load(args: &CommonArgs) -> Result<ExperimentConfig> {
    let config = ExperimentConfig::load(&args.config)?;
    std::fs::create_dir_all(&args.out)
        .map_err(|e| Error::Validation(format!("output directory {}: {e}", args.out.display())))?;
    Ok(config)
}

fn write_file(path: &Path, content: &str) -> Result<()> {
    std::fs::write(path, content)
        .map_err(|e| Error::Validation(format!("writing {}: {e}", path.display())))
}

fn state_label(x: usize) -> String {
    format!("x{}", x + 1)
}

/// Require a concrete interpolation parameter (not the `"corners"`
/// sweep, which only the qdp command understands).
fn concrete_lambda(config: &ExperimentConfig) -> Result<InterpolationParams> {
    config.interpolation()?.ok_or_else(|| {
        Error::Config("this command needs a concrete lambda, not \"corners\"".into())
    })
}

struct Solved {
    table: QuantileTable,
    iters: usize,
}

/// Solve the fixed point in floats, then snap to the exact rational
/// solution when the config admits one and the float table is close
/// enough to identify the quantile assignment.
fn solve_fixed_point(
    config: &ExperimentConfig,
    mrp: &Mrp,
    lambda: &InterpolationParams,
) -> Result<Solved> {
    let init = config.build_init()?;
    let (table, iters) = qdp_solve(mrp, lambda, &init, config.tol_inf()?, config.max_iters())?;
    if let Some(exact) = config.build_exact()? {
        if let Some(polished) = polish_fixed_point(&exact, lambda, &table, POLISH_SLACK)? {
            return Ok(Solved { table: polished, iters });
        }
    }
    Ok(Solved { table, iters })
}

fn fixed_point_csv(table: &QuantileTable) -> Result<String> {
    let taus = tau_levels(table.m())?;
    let mut out = String::from("state,i,tau,theta\n");
    for x in 0..table.num_states() {
        for (i, &tau) in taus.iter().enumerate() {
            writeln!(out, "{},{},{},{}", state_label(x), i + 1, tau, table.get(x, i)).unwrap();
        }
    }
    Ok(out)
}

fn cmd_qdp(args: &CommonArgs) -> Result<()> {
    let config = load(args)?;
    let mrp = config.build_mrp()?;
    match config.interpolation()? {
        Some(lambda) => {
            let solved = solve_fixed_point(&config, &mrp, &lambda)?;
            write_file(&args.out.join("fixed_point.csv"), &fixed_point_csv(&solved.table)?)?;
            write_file(&args.out.join("iters.txt"), &format!("{}\n", solved.iters))
        }
        None => {
            let dim = config.mdp.states * config.m;
            if dim > 12 {
                return Err(Error::Config(format!(
                    "corners sweep over {dim} coordinates is too large (max 12)"
                )));
            }
            let mut iters_lines = String::new();
            for pattern in 0u32..(1u32 << dim) {
                let rows = (0..config.mdp.states)
                    .map(|x| {
                        (0..config.m)
                            .map(|i| f64::from(pattern >> (x * config.m + i) & 1))
                            .collect()
                    })
                    .collect();
                let lambda = InterpolationParams::new(rows)?;
                let solved = solve_fixed_point(&config, &mrp, &lambda)?;
                let name = format!("fixed_point_corner{pattern}.csv");
                write_file(&args.out.join(name), &fixed_point_csv(&solved.table)?)?;
                writeln!(iters_lines, "corner{pattern} {}", solved.iters).unwrap();
            }
            write_file(&args.out.join("iters.txt"), &iters_lines)
        }
    }
}

fn run_csv(record: &RunRecord) -> String {
    let mut out = format!("# seed {}\n", record.seed());
    out.push_str("step,state,i,theta\n");
    for (step, table) in record.snapshots() {
        for x in 0..table.num_states() {
            for i in 0..table.m() {
                writeln!(out, "{},{},{},{}", step, state_label(x), i + 1, table.get(x, i))
                    .unwrap();
            }
        }
    }
    out
}

/// Rough reward magnitude for truncation-horizon sizing; falls back to
/// the CDF support hint for unbounded models.
fn reward_scale(mrp: &Mrp) -> f64 {
    if let Some(r) = mrp.max_abs_reward() {
        return r.max(1.0);
    }
    let mut scale: f64 = 1.0;
    for x in 0..mrp.num_states() {
        if let qtd_core::RewardModel::Continuous(cdf) = mrp.reward(x) {
            if let Some((lo, hi)) = cdf.support_hint() {
                scale = scale.max(lo.abs()).max(hi.abs());
            }
        }
    }
    scale
}

fn cmd_qtd(args: &CommonArgs) -> Result<()> {
    let config = load(args)?;
    let mrp = config.build_mrp()?;
    let schedule = config.build_schedule()?;
    let init = config.build_init()?;
    let seeds = match args.seed_override {
        Some(s) => vec![s],
        None => config.seeds.clone(),
    };
    let distances: Vec<(u64, f64)> = seeds
        .par_iter()
        .map(|&seed| -> Result<(u64, f64)> {
            let (record, distance) = match config.algo {
                Algo::Qdp => {
                    return Err(Error::Config(
                        "algo \"qdp\" runs under the qdp command".into(),
                    ))
                }
                Algo::QtdSync => {
                    let record = run_synchronous(
                        &mrp,
                        config.m,
                        &schedule,
                        config.steps,
                        &init,
                        seed,
                        config.snapshot_every,
                    )?;
                    let d = final_distance(&config, &mrp, &record)?;
                    (record, d)
                }
                Algo::QtdAsync => {
                    let source = config.build_state_source()?;
                    let record = run_asynchronous(
                        &mrp,
                        config.m,
                        &schedule,
                        config.steps,
                        &init,
                        seed,
                        &source,
                        config.snapshot_every,
                    )?;
                    let d = final_distance(&config, &mrp, &record)?;
                    (record, d)
                }
                Algo::Mc => {
                    let horizon =
                        truncation_horizon(mrp.gamma(), reward_scale(&mrp), config.mc_truncation()?);
                    let record = run_monte_carlo(
                        &mrp,
                        config.m,
                        &schedule,
                        config.steps,
                        &init,
                        seed,
                        horizon,
                        config.snapshot_every,
                    )?;
                    let d = final_distance(&config, &mrp, &record)?;
                    (record, d)
                }
                Algo::Td => {
                    let v0 = vec![0.0; mrp.num_states()];
                    let v = td_run(&mrp, &schedule, config.steps, &v0, seed)?;
                    let truth = mrp.value_function()?;
                    let d = v
                        .iter()
                        .zip(&truth)
                        .map(|(a, b)| (a - b).abs())
                        .fold(0.0f64, f64::max);
                    let mut out = format!("# seed {seed}\nstep,state,i,theta\n");
                    for (x, value) in v.iter().enumerate() {
                        writeln!(out, "{},{},1,{}", config.steps, state_label(x), value).unwrap();
                    }
                    write_file(&args.out.join(format!("run_{seed}.csv")), &out)?;
                    return Ok((seed, d));
                }
            };
            write_file(&args.out.join(format!("run_{seed}.csv")), &run_csv(&record))?;
            Ok((seed, distance))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut summary = String::from("seed,distance\n");
    for (seed, distance) in &distances {
        writeln!(summary, "{seed},{distance}").unwrap();
    }
    write_file(&args.out.join("summary.csv"), &summary)
}

/// Distance from the final table to the fixed-point family, with a
/// deterministic per-seed generator so repeated invocations agree byte
/// for byte.
fn final_distance(config: &ExperimentConfig, mrp: &Mrp, record: &RunRecord) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(record.seed());
    rng.set_stream(DIAGNOSTIC_STREAM);
    distance_to_fixed_point_set(mrp, record.final_table(), config.lambda_samples, &mut rng)
}

fn parse_axis(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() != 3 {
        return Err(Error::Config(format!("grid axis {spec:?} is not of the form a0:a1:n")));
    }
    let a0: f64 = parts[0]
        .parse()
        .map_err(|_| Error::Config(format!("grid axis {spec:?}: bad number {:?}", parts[0])))?;
    let a1: f64 = parts[1]
        .parse()
        .map_err(|_| Error::Config(format!("grid axis {spec:?}: bad number {:?}", parts[1])))?;
    let n: usize = parts[2]
        .parse()
        .map_err(|_| Error::Config(format!("grid axis {spec:?}: bad count {:?}", parts[2])))?;
    if n == 0 {
        return Err(Error::Config(format!("grid axis {spec:?} needs at least one point")));
    }
    if n == 1 {
        return Ok(vec![a0]);
    }
    let step = (a1 - a0) / (n - 1) as f64;
    Ok((0..n).map(|k| a0 + k as f64 * step).collect())
}

fn cmd_field(args: &FieldArgs) -> Result<()> {
    let config = load(&args.common)?;
    let mrp = config.build_mrp()?;
    let dim = config.mdp.states * config.m;
    if dim != 2 {
        return Err(Error::Config(format!(
            "field dumps need exactly 2 free coordinates, this model has {dim}"
        )));
    }
    let grid = args.grid.as_deref().unwrap_or("-5:5:21,-5:5:21");
    let (first, second) = grid
        .split_once(',')
        .ok_or_else(|| Error::Config(format!("grid {grid:?} is not of the form a0:a1:n,b0:b1:n")))?;
    let axis_a = parse_axis(first)?;
    let axis_b = parse_axis(second)?;
    let mut out = String::from("coord1,coord2,g1,g2\n");
    for &a in &axis_a {
        for &b in &axis_b {
            let flat = [a, b];
            let rows = (0..config.mdp.states)
                .map(|x| flat[x * config.m..(x + 1) * config.m].to_vec())
                .collect();
            let table = QuantileTable::new(rows)?;
            let field = expected_update(&mrp, &table)?;
            let g: Vec<f64> = field.into_iter().flatten().collect();
            writeln!(out, "{a},{b},{},{}", g[0], g[1]).unwrap();
        }
    }
    write_file(&args.common.out.join("field.csv"), &out)
}

fn cmd_bound(args: &CommonArgs) -> Result<()> {
    let config = load(args)?;
    let mrp = config.build_mrp()?;
    let lambda = concrete_lambda(&config)?;
    let seed = args.seed_override.unwrap_or(config.seeds[0]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(DIAGNOSTIC_STREAM);
    let report = check_w1_bound(
        &mrp,
        config.m,
        &lambda,
        config.mc_samples,
        config.mdp.deterministic_after_k,
        &mut rng,
    )?;
    write_file(&args.out.join("bound.txt"), &report.render())
}

fn cmd_backup(args: &CommonArgs) -> Result<()> {
    let config = load(args)?;
    let mrp = config.build_mrp()?;
    let lambda = concrete_lambda(&config)?;
    let solved = solve_fixed_point(&config, &mrp, &lambda)?;
    let diagram = backup_diagram(&mrp, &solved.table)?;
    let mut out = String::from("x,i,source_x,source_i,reward,weight\n");
    for x in 0..diagram.num_states() {
        for i in 0..diagram.m() {
            for e in diagram.edges(x, i) {
                writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    state_label(x),
                    i + 1,
                    state_label(e.source_state),
                    e.source_i + 1,
                    e.reward,
                    e.weight
                )
                .unwrap();
            }
        }
    }
    write_file(&args.out.join("backup.csv"), &out)
}

fn cmd_trajectory(args: &CommonArgs) -> Result<()> {
    let config = load(args)?;
    let mrp = config.build_mrp()?;
    let init = config.build_init()?;
    let trajectory = euler_integrate(&mrp, &init, config.euler_dt()?, config.euler_horizon()?)?;
    let mut out = String::from("t,state,i,theta\n");
    for (t, table) in &trajectory {
        for x in 0..table.num_states() {
            for i in 0..table.m() {
                writeln!(out, "{},{},{},{}", t, state_label(x), i + 1, table.get(x, i)).unwrap();
            }
        }
    }
    write_file(&args.out.join("trajectory.csv"), &out)
}
