//! Experiment configuration: a JSON model describing the Markov model,
//! the algorithm to run, and its parameters.
//!
//! Numeric fields are captured as JSON number literals rather than
//! parsed floats, so a model whose probabilities, rewards, and discount
//! are written in decimal can also be mirrored into exact rational
//! arithmetic (see [`ExperimentConfig::build_exact`]). The float build
//! rounds each literal once, which matches what a hand-written float
//! model would contain.

use std::path::Path;

use serde::Deserialize;
use serde_json::Number;

use crate::dist::{FiniteDistribution, RewardModel};
use crate::error::{Error, Result};
use crate::exact::{parse_decimal, ExactMrp, Rat};
use crate::mdp::{compile_mrp, Mdp, Mrp, Policy};
use crate::qtd::{StateSource, StepSchedule};
use crate::quantile::{InterpolationParams, QuantileTable};

/// Algorithm selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
pub enum Algo {
    #[serde(rename = "qdp")]
    Qdp,
    #[serde(rename = "qtd-sync")]
    QtdSync,
    #[serde(rename = "qtd-async")]
    QtdAsync,
    #[serde(rename = "td")]
    Td,
    #[serde(rename = "mc")]
    Mc,
}

/// Reward distribution description.
#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum RewardConfig {
    Dirac { value: Number },
    Finite { atoms: Vec<(Number, Number)> },
    Gaussian { mean: Number, std: Number },
    Uniform { lo: Number, hi: Number },
}

impl RewardConfig {
    fn build(&self, what: &str) -> Result<RewardModel> {
        let model = match self {
            Self::Dirac { value } => RewardModel::dirac(num_f64(value, what)?),
            Self::Finite { atoms } => {
                let atoms = atoms
                    .iter()
                    .map(|(v, p)| Ok((num_f64(v, what)?, num_f64(p, what)?)))
                    .collect::<Result<Vec<_>>>()?;
                FiniteDistribution::new(atoms).map(RewardModel::Finite)
            }
            Self::Gaussian { mean, std } => {
                RewardModel::gaussian(num_f64(mean, what)?, num_f64(std, what)?)
            }
            Self::Uniform { lo, hi } => {
                RewardModel::uniform(num_f64(lo, what)?, num_f64(hi, what)?)
            }
        };
        model.map_err(|e| Error::Config(format!("{what}: {e}")))
    }

    /// Exact atom list for finite-support kinds; None for continuous.
    fn exact_atoms(&self, what: &str) -> Result<Option<Vec<(Rat, Rat)>>> {
        match self {
            Self::Dirac { value } => {
                Ok(Some(vec![(num_rat(value, what)?, Rat::from_integer(1.into()))]))
            }
            Self::Finite { atoms } => Ok(Some(
                atoms
                    .iter()
                    .map(|(v, p)| Ok((num_rat(v, what)?, num_rat(p, what)?)))
                    .collect::<Result<Vec<_>>>()?,
            )),
            Self::Gaussian { .. } | Self::Uniform { .. } => Ok(None),
        }
    }
}

/// Transition matrix: one row per state, or one row per (state, action).
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum TransitionSpec {
    PerStateAction(Vec<Vec<Vec<Number>>>),
    PerState(Vec<Vec<Number>>),
}

/// Reward models: one per state, or one per (state, action).
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum RewardSpec {
    PerStateAction(Vec<Vec<RewardConfig>>),
    PerState(Vec<RewardConfig>),
}

/// Markov model description. `terminal` lists 1-based state indices,
/// matching the `x<k>` labels used in all emitted artifacts.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MdpConfig {
    pub states: usize,
    #[serde(default)]
    pub actions: Option<usize>,
    pub transitions: TransitionSpec,
    pub rewards: RewardSpec,
    pub gamma: Number,
    #[serde(default)]
    pub terminal: Vec<usize>,
    #[serde(default)]
    pub deterministic_after_k: Option<usize>,
}

/// Interpolation parameter: one value for every coordinate, a full
/// per-coordinate matrix, or `"corners"` to sweep all 0/1 tables.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum LambdaSpec {
    Corners(CornersTag),
    Scalar(Number),
    Matrix(Vec<Vec<Number>>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
pub enum CornersTag {
    #[serde(rename = "corners")]
    Corners,
}

impl Default for LambdaSpec {
    fn default() -> Self {
        Self::Scalar(Number::from(0u32))
    }
}

/// Step-size schedule description.
#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ScheduleConfig {
    Polynomial { c: Number, rho: Number },
    Constant { alpha: Number },
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self::Polynomial { c: Number::from_f64(0.5).unwrap(), rho: Number::from_f64(0.7).unwrap() }
    }
}

/// State selection for asynchronous runs.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum StateSourceConfig {
    Named(TrajectoryTag),
    Iid { iid: Vec<Number> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
pub enum TrajectoryTag {
    #[serde(rename = "trajectory")]
    Trajectory,
}

impl Default for StateSourceConfig {
    fn default() -> Self {
        Self::Named(TrajectoryTag::Trajectory)
    }
}

/// Optional numeric knobs; anything omitted uses the library defaults.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    #[serde(default)]
    pub tol_inf: Option<Number>,
    #[serde(default)]
    pub max_iters: Option<usize>,
    #[serde(default)]
    pub mc_truncation: Option<Number>,
}

/// A full experiment: model, algorithm, and run parameters.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mdp: MdpConfig,
    pub algo: Algo,
    pub m: usize,
    #[serde(default)]
    pub lambda: LambdaSpec,
    #[serde(default)]
    pub policy: Option<Vec<Vec<Number>>>,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub steps: usize,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub snapshot_every: usize,
    #[serde(default)]
    pub state_source: StateSourceConfig,
    #[serde(default = "default_lambda_samples")]
    pub lambda_samples: usize,
    #[serde(default = "default_mc_samples")]
    pub mc_samples: usize,
    #[serde(default)]
    pub init: Option<Vec<Vec<Number>>>,
    #[serde(default)]
    pub dt: Option<Number>,
    #[serde(default)]
    pub horizon: Option<Number>,
    #[serde(default)]
    pub tolerances: Tolerances,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_lambda_samples() -> usize {
    2000
}

fn default_mc_samples() -> usize {
    1_000_000
}

fn num_f64(n: &Number, what: &str) -> Result<f64> {
    let v = n.as_f64().ok_or_else(|| Error::Config(format!("{what}: {n} is not a float")))?;
    if !v.is_finite() {
        return Err(Error::Config(format!("{what}: {n} is not finite")));
    }
    Ok(v)
}

fn num_rat(n: &Number, what: &str) -> Result<Rat> {
    parse_decimal(&n.to_string()).map_err(|e| Error::Config(format!("{what}: {e}")))
}

impl ExperimentConfig {
    /// Parse a config from a JSON string and check everything the run
    /// will need: syntax errors keep serde_json's line/column
    /// diagnostics, and every model component is built once up front so
    /// invariant violations surface before any run starts.
    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.build_mrp()?;
        config.build_exact()?;
        config.build_schedule()?;
        config.interpolation()?;
        config.build_state_source()?;
        config.build_init()?;
        config.euler_dt()?;
        config.euler_horizon()?;
        config.tol_inf()?;
        config.mc_truncation()?;
        Ok(config)
    }

    /// Load a config file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    fn validate(&self) -> Result<()> {
        if self.mdp.states == 0 {
            return Err(Error::Config("model needs at least one state".into()));
        }
        if self.m == 0 {
            return Err(Error::Config("m must be at least 1".into()));
        }
        for &t in &self.mdp.terminal {
            if t == 0 || t > self.mdp.states {
                return Err(Error::Config(format!(
                    "terminal state x{t} out of range 1..={}",
                    self.mdp.states
                )));
            }
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("need at least one seed".into()));
        }
        if self.lambda_samples == 0 {
            return Err(Error::Config("lambda_samples must be at least 1".into()));
        }
        Ok(())
    }

    fn terminal_flags(&self) -> Vec<bool> {
        let mut flags = vec![false; self.mdp.states];
        for &t in &self.mdp.terminal {
            flags[t - 1] = true;
        }
        flags
    }

    /// Build the float Markov reward process this experiment runs on.
    /// Action-form models are averaged under the configured policy
    /// (uniform when omitted).
    pub fn build_mrp(&self) -> Result<Mrp> {
        self.validate()?;
        let n = self.mdp.states;
        let gamma = num_f64(&self.mdp.gamma, "gamma")?;
        let terminal = self.terminal_flags();
        match (&self.mdp.transitions, &self.mdp.rewards) {
            (TransitionSpec::PerState(rows), RewardSpec::PerState(rewards)) => {
                let transition = rows
                    .iter()
                    .enumerate()
                    .map(|(x, row)| {
                        row.iter()
                            .map(|p| num_f64(p, &format!("transition row for x{}", x + 1)))
                            .collect::<Result<Vec<_>>>()
                    })
                    .collect::<Result<Vec<_>>>()?;
                let rewards = rewards
                    .iter()
                    .enumerate()
                    .map(|(x, r)| r.build(&format!("reward for x{}", x + 1)))
                    .collect::<Result<Vec<_>>>()?;
                Mrp::new(transition, rewards, gamma, terminal)
                    .map_err(|e| Error::Config(e.to_string()))
            }
            (TransitionSpec::PerStateAction(rows), RewardSpec::PerStateAction(rewards)) => {
                let transition = rows
                    .iter()
                    .enumerate()
                    .map(|(x, per_action)| {
                        per_action
                            .iter()
                            .enumerate()
                            .map(|(a, row)| {
                                row.iter()
                                    .map(|p| {
                                        num_f64(
                                            p,
                                            &format!("transition row for x{} action {}", x + 1, a + 1),
                                        )
                                    })
                                    .collect::<Result<Vec<_>>>()
                            })
                            .collect::<Result<Vec<_>>>()
                    })
                    .collect::<Result<Vec<_>>>()?;
                let rewards = rewards
                    .iter()
                    .enumerate()
                    .map(|(x, per_action)| {
                        per_action
                            .iter()
                            .enumerate()
                            .map(|(a, r)| {
                                r.build(&format!("reward for x{} action {}", x + 1, a + 1))
                            })
                            .collect::<Result<Vec<_>>>()
                    })
                    .collect::<Result<Vec<_>>>()?;
                let num_actions = self.mdp.actions.unwrap_or_else(|| {
                    transition.first().map_or(1, |per_action| per_action.len())
                });
                let mdp = Mdp::new(transition, rewards, gamma, terminal)
                    .map_err(|e| Error::Config(e.to_string()))?;
                let policy = match &self.policy {
                    Some(rows) => {
                        let probs = rows
                            .iter()
                            .enumerate()
                            .map(|(x, row)| {
                                row.iter()
                                    .map(|p| num_f64(p, &format!("policy row for x{}", x + 1)))
                                    .collect::<Result<Vec<_>>>()
                            })
                            .collect::<Result<Vec<_>>>()?;
                        Policy::new(probs).map_err(|e| Error::Config(e.to_string()))?
                    }
                    None => Policy::uniform(n, num_actions)
                        .map_err(|e| Error::Config(e.to_string()))?,
                };
                compile_mrp(&mdp, &policy).map_err(|e| Error::Config(e.to_string()))
            }
            _ => Err(Error::Config(
                "transitions and rewards must both be per-state or both per-action".into(),
            )),
        }
    }

    /// Exact rational mirror of the model, available when the config is
    /// in per-state form and every reward has finite support. Continuous
    /// rewards have no exact finite description, and policy averaging is
    /// deliberately left to the float path.
    pub fn build_exact(&self) -> Result<Option<ExactMrp>> {
        self.validate()?;
        let (rows, rewards) = match (&self.mdp.transitions, &self.mdp.rewards) {
            (TransitionSpec::PerState(rows), RewardSpec::PerState(rewards)) => (rows, rewards),
            _ => return Ok(None),
        };
        let mut atoms = Vec::with_capacity(rewards.len());
        for (x, r) in rewards.iter().enumerate() {
            match r.exact_atoms(&format!("reward for x{}", x + 1))? {
                Some(a) => atoms.push(a),
                None => return Ok(None),
            }
        }
        let transition = rows
            .iter()
            .enumerate()
            .map(|(x, row)| {
                row.iter()
                    .map(|p| num_rat(p, &format!("transition row for x{}", x + 1)))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let gamma = num_rat(&self.mdp.gamma, "gamma")?;
        ExactMrp::new(transition, atoms, gamma, self.terminal_flags())
            .map_err(|e| Error::Config(e.to_string()))
            .map(Some)
    }

    /// Interpolation parameters; None when the config says `"corners"`.
    pub fn interpolation(&self) -> Result<Option<InterpolationParams>> {
        let n = self.mdp.states;
        match &self.lambda {
            LambdaSpec::Corners(_) => Ok(None),
            LambdaSpec::Scalar(v) => {
                let v = num_f64(v, "lambda")?;
                InterpolationParams::constant(n, self.m, v)
                    .map_err(|e| Error::Config(e.to_string()))
                    .map(Some)
            }
            LambdaSpec::Matrix(rows) => {
                let rows = rows
                    .iter()
                    .enumerate()
                    .map(|(x, row)| {
                        row.iter()
                            .map(|v| num_f64(v, &format!("lambda row for x{}", x + 1)))
                            .collect::<Result<Vec<_>>>()
                    })
                    .collect::<Result<Vec<_>>>()?;
                let params = InterpolationParams::new(rows)
                    .map_err(|e| Error::Config(e.to_string()))?;
                if params.num_states() != n || params.m() != self.m {
                    return Err(Error::Config(format!(
                        "lambda matrix is {}×{}, expected {}×{}",
                        params.num_states(),
                        params.m(),
                        n,
                        self.m
                    )));
                }
                Ok(Some(params))
            }
        }
    }

    /// Step-size schedule.
    pub fn build_schedule(&self) -> Result<StepSchedule> {
        match &self.schedule {
            ScheduleConfig::Polynomial { c, rho } => {
                StepSchedule::polynomial(num_f64(c, "schedule.c")?, num_f64(rho, "schedule.rho")?)
            }
            ScheduleConfig::Constant { alpha } => {
                StepSchedule::constant(num_f64(alpha, "schedule.alpha")?)
            }
        }
        .map_err(|e| Error::Config(e.to_string()))
    }

    /// State source for asynchronous runs.
    pub fn build_state_source(&self) -> Result<StateSource> {
        match &self.state_source {
            StateSourceConfig::Named(TrajectoryTag::Trajectory) => Ok(StateSource::Trajectory),
            StateSourceConfig::Iid { iid } => {
                let weights = iid
                    .iter()
                    .map(|w| num_f64(w, "state_source.iid"))
                    .collect::<Result<Vec<_>>>()?;
                Ok(StateSource::Iid(weights))
            }
        }
    }

    /// Solver stopping tolerance, defaulting to the library value.
    pub fn tol_inf(&self) -> Result<f64> {
        match &self.tolerances.tol_inf {
            Some(v) => num_f64(v, "tolerances.tol_inf"),
            None => Ok(crate::qdp::DEFAULT_TOL_INF),
        }
    }

    /// Solver iteration cap.
    pub fn max_iters(&self) -> usize {
        self.tolerances.max_iters.unwrap_or(1_000_000)
    }

    /// Monte Carlo truncation target.
    pub fn mc_truncation(&self) -> Result<f64> {
        match &self.tolerances.mc_truncation {
            Some(v) => num_f64(v, "tolerances.mc_truncation"),
            None => Ok(crate::analysis::MC_TRUNCATION),
        }
    }

    /// Initial table for runs and integrations; zeros when omitted.
    pub fn build_init(&self) -> Result<QuantileTable> {
        match &self.init {
            None => QuantileTable::zeros(self.mdp.states, self.m)
                .map_err(|e| Error::Config(e.to_string())),
            Some(rows) => {
                let rows = rows
                    .iter()
                    .enumerate()
                    .map(|(x, row)| {
                        row.iter()
                            .map(|v| num_f64(v, &format!("init row for x{}", x + 1)))
                            .collect::<Result<Vec<_>>>()
                    })
                    .collect::<Result<Vec<_>>>()?;
                let table =
                    QuantileTable::new(rows).map_err(|e| Error::Config(e.to_string()))?;
                if table.num_states() != self.mdp.states || table.m() != self.m {
                    return Err(Error::Config(format!(
                        "init table is {}×{}, expected {}×{}",
                        table.num_states(),
                        table.m(),
                        self.mdp.states,
                        self.m
                    )));
                }
                Ok(table)
            }
        }
    }

    /// Euler step width; library default when omitted.
    pub fn euler_dt(&self) -> Result<f64> {
        match &self.dt {
            Some(v) => num_f64(v, "dt"),
            None => Ok(crate::dynamics::DEFAULT_EULER_DT),
        }
    }

    /// Euler horizon; library default when omitted.
    pub fn euler_horizon(&self) -> Result<f64> {
        match &self.horizon {
            Some(v) => num_f64(v, "horizon"),
            None => Ok(crate::dynamics::DEFAULT_EULER_HORIZON),
        }
    }
}
