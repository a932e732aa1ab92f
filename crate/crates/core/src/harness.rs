//! Experiment configuration and the four-row comparison grid.
//!
//! Configuration is a flat `key=value` text file. Blank lines and lines
//! starting with `#` are ignored, every key is optional and unknown keys are
//! rejected. [`KEYS`] documents each one.

use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::intrinsic::IntrinsicConfig;
use crate::trainer::evaluate::sample_variance;
use crate::trainer::rollout::mean;
use crate::trainer::{
    derive_seed, evaluate_policy, train_alternating, CriticInput, MetricsRecord, PolicyOptions, PopulationSetup,
    RunConfig, TrainConfig,
};
use crate::trajectory;

/// One row of the comparison table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GridRow {
    /// Plain policies on both sides, no belief machinery.
    Baseline,
    /// Belief bottleneck on both sides, no second-order prediction.
    FirstOrderBoth,
    /// As `FirstOrderBoth`, plus second-order beliefs and intrinsic reward for
    /// the good agents.
    SecondOrderGood,
    /// As `FirstOrderBoth`, plus second-order beliefs and intrinsic reward for
    /// the adversary.
    SecondOrderAdv,
}

impl GridRow {
    pub const ALL: [GridRow; 4] = [
        GridRow::Baseline,
        GridRow::FirstOrderBoth,
        GridRow::SecondOrderGood,
        GridRow::SecondOrderAdv,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GridRow::Baseline => "baseline",
            GridRow::FirstOrderBoth => "first_order_both",
            GridRow::SecondOrderGood => "second_order_good",
            GridRow::SecondOrderAdv => "second_order_adv",
        }
    }

    pub fn from_name(name: &str) -> Option<GridRow> {
        GridRow::ALL.into_iter().find(|r| r.name() == name)
    }

    /// `(1st-order good, 1st-order adv, 2nd-order good, 2nd-order adv)`.
    pub fn flags(self) -> [bool; 4] {
        match self {
            GridRow::Baseline => [false, false, false, false],
            GridRow::FirstOrderBoth => [true, true, false, false],
            GridRow::SecondOrderGood => [true, true, true, false],
            GridRow::SecondOrderAdv => [true, true, false, true],
        }
    }
}

impl fmt::Display for GridRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub env: EnvConfig,
    pub train: TrainConfig,
    pub policy: PolicyOptions,
    pub good_intrinsic: IntrinsicConfig,
    pub adv_intrinsic: IntrinsicConfig,
    pub row: GridRow,
    pub seeds: Vec<u64>,
    pub eval_episodes: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            env: EnvConfig::default(),
            train: TrainConfig::default(),
            policy: PolicyOptions::default(),
            good_intrinsic: IntrinsicConfig::default(),
            adv_intrinsic: IntrinsicConfig::default(),
            row: GridRow::FirstOrderBoth,
            seeds: vec![1, 2, 3, 4, 5],
            eval_episodes: 20,
        }
    }
}

/// Every accepted key with a one-line description.
pub const KEYS: &[(&str, &str)] = &[
    (
        "row",
        "grid row: baseline, first_order_both, second_order_good or second_order_adv",
    ),
    ("seeds", "comma-separated training seeds"),
    ("eval_episodes", "evaluation episodes per trained cell"),
    ("n_landmarks", "number of landmarks"),
    ("n_good", "number of good agents"),
    ("max_steps", "episode horizon"),
    ("world_halfwidth", "half side length of the square arena"),
    ("capture_radius", "distance at which the adversary captures a landmark"),
    ("dt", "integration step"),
    ("damping", "fraction of velocity lost per step"),
    ("max_speed", "speed cap"),
    ("accel_good", "acceleration of good agents"),
    ("accel_adv", "acceleration of the adversary"),
    (
        "weighted_good_reward",
        "weight each good agent's distance by its coefficient",
    ),
    (
        "literal_adv_bonus_signs",
        "use the literal signs of the adversary capture terms",
    ),
    ("alpha", "weight of the PPO loss"),
    ("beta", "weight of the belief loss"),
    ("gamma", "weight of the residual disentanglement loss"),
    ("delta", "weight of the supervised second-order loss"),
    ("epsilon", "PPO clip range"),
    ("gae_lambda", "GAE lambda"),
    ("discount", "discount factor"),
    ("rollout_len", "steps per environment per update"),
    ("n_envs", "parallel environments"),
    ("minibatches", "minibatches per epoch"),
    ("epochs", "epochs per update"),
    ("lr", "policy learning rate"),
    ("var_lr", "variational model learning rate"),
    ("max_grad_norm", "per-head gradient norm clip"),
    ("club_warmup_updates", "updates using the larger variational step ratio"),
    ("club_warmup_ratio", "variational steps per policy step during warm-up"),
    ("swap_interval", "environment steps between population swaps"),
    ("total_steps", "environment steps per run, both populations together"),
    ("value_coef", "value loss weight"),
    ("entropy_coef", "entropy bonus weight"),
    ("normalize_advantages", "normalize advantages per minibatch"),
    ("hidden", "comma-separated hidden widths of every policy head"),
    ("residual_dim", "width of the residual code"),
    ("var_hidden", "comma-separated hidden widths of the variational model"),
    ("actor_sees_second_order", "feed second-order beliefs to the actor"),
    ("critic", "critic input: local or global"),
    ("good_lambda", "intrinsic reward weight of the good agents"),
    ("adv_lambda", "intrinsic reward weight of the adversary"),
    (
        "good_tom_clip",
        "bound on the good agents' intrinsic reward magnitude, or none",
    ),
    (
        "adv_tom_clip",
        "bound on the adversary's intrinsic reward magnitude, or none",
    ),
];

fn bad(key: &str, expected: &'static str, value: &str) -> Error {
    Error::BadValue {
        key: key.to_string(),
        expected,
        value: value.to_string(),
    }
}

fn real(key: &str, v: &str) -> Result<f64> {
    v.parse().map_err(|_| bad(key, "a real number", v))
}

fn count(key: &str, v: &str) -> Result<usize> {
    v.parse().map_err(|_| bad(key, "a non-negative integer", v))
}

fn flag(key: &str, v: &str) -> Result<bool> {
    v.parse().map_err(|_| bad(key, "true or false", v))
}

fn list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',')
        .map(|x| x.trim().parse())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| bad(key, "a comma-separated list of non-negative integers", v))
}

fn optional_real(key: &str, v: &str) -> Result<Option<f64>> {
    if v == "none" {
        Ok(None)
    } else {
        v.parse().map(Some).map_err(|_| bad(key, "a real number or none", v))
    }
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let (e, t, p) = (&mut self.env, &mut self.train, &mut self.policy);
        match key {
            "row" => self.row = GridRow::from_name(v).ok_or_else(|| bad(key, "a grid row name", v))?,
            "seeds" => self.seeds = list(key, v)?,
            "eval_episodes" => self.eval_episodes = count(key, v)?,
            "n_landmarks" => e.n_landmarks = count(key, v)?,
            "n_good" => e.n_good = count(key, v)?,
            "max_steps" => e.max_steps = count(key, v)?,
            "world_halfwidth" => e.world_halfwidth = real(key, v)?,
            "capture_radius" => e.capture_radius = real(key, v)?,
            "dt" => e.dt = real(key, v)?,
            "damping" => e.damping = real(key, v)?,
            "max_speed" => e.max_speed = real(key, v)?,
            "accel_good" => e.accel_good = real(key, v)?,
            "accel_adv" => e.accel_adv = real(key, v)?,
            "weighted_good_reward" => e.weighted_good_reward = flag(key, v)?,
            "literal_adv_bonus_signs" => e.literal_adv_bonus_signs = flag(key, v)?,
            "alpha" => t.alpha = real(key, v)?,
            "beta" => t.beta = real(key, v)?,
            "gamma" => t.gamma = real(key, v)?,
            "delta" => t.delta = real(key, v)?,
            "epsilon" => t.epsilon = real(key, v)?,
            "gae_lambda" => t.gae_lambda = real(key, v)?,
            "discount" => t.discount = real(key, v)?,
            "rollout_len" => t.rollout_len = count(key, v)?,
            "n_envs" => t.n_envs = count(key, v)?,
            "minibatches" => t.minibatches = count(key, v)?,
            "epochs" => t.epochs = count(key, v)?,
            "lr" => t.lr = real(key, v)?,
            "var_lr" => t.var_lr = real(key, v)?,
            "max_grad_norm" => t.max_grad_norm = real(key, v)?,
            "club_warmup_updates" => t.club_warmup_updates = count(key, v)?,
            "club_warmup_ratio" => t.club_warmup_ratio = count(key, v)?,
            "swap_interval" => t.swap_interval = count(key, v)?,
            "total_steps" => t.total_steps = count(key, v)?,
            "value_coef" => t.value_coef = real(key, v)?,
            "entropy_coef" => t.entropy_coef = real(key, v)?,
            "normalize_advantages" => t.normalize_advantages = flag(key, v)?,
            "hidden" => p.hidden = list(key, v)?,
            "residual_dim" => p.residual_dim = count(key, v)?,
            "var_hidden" => p.var_hidden = list(key, v)?,
            "actor_sees_second_order" => p.actor_sees_second_order = flag(key, v)?,
            "critic" => {
                p.critic = match v {
                    "local" => CriticInput::Local,
                    "global" => CriticInput::Global,
                    _ => return Err(bad(key, "local or global", v)),
                }
            }
            "good_lambda" => self.good_intrinsic.lambda = real(key, v)?,
            "adv_lambda" => self.adv_intrinsic.lambda = real(key, v)?,
            "good_tom_clip" => self.good_intrinsic.clip = optional_real(key, v)?,
            "adv_tom_clip" => self.adv_intrinsic.clip = optional_real(key, v)?,
            _ => return Err(Error::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    /// All keys with their current values, in [`KEYS`] order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let (e, t, p) = (&self.env, &self.train, &self.policy);
        let clip = |c: Option<f64>| c.map_or_else(|| "none".to_string(), |c| c.to_string());
        let values = [
            self.row.name().to_string(),
            join(&self.seeds),
            self.eval_episodes.to_string(),
            e.n_landmarks.to_string(),
            e.n_good.to_string(),
            e.max_steps.to_string(),
            e.world_halfwidth.to_string(),
            e.capture_radius.to_string(),
            e.dt.to_string(),
            e.damping.to_string(),
            e.max_speed.to_string(),
            e.accel_good.to_string(),
            e.accel_adv.to_string(),
            e.weighted_good_reward.to_string(),
            e.literal_adv_bonus_signs.to_string(),
            t.alpha.to_string(),
            t.beta.to_string(),
            t.gamma.to_string(),
            t.delta.to_string(),
            t.epsilon.to_string(),
            t.gae_lambda.to_string(),
            t.discount.to_string(),
            t.rollout_len.to_string(),
            t.n_envs.to_string(),
            t.minibatches.to_string(),
            t.epochs.to_string(),
            t.lr.to_string(),
            t.var_lr.to_string(),
            t.max_grad_norm.to_string(),
            t.club_warmup_updates.to_string(),
            t.club_warmup_ratio.to_string(),
            t.swap_interval.to_string(),
            t.total_steps.to_string(),
            t.value_coef.to_string(),
            t.entropy_coef.to_string(),
            t.normalize_advantages.to_string(),
            join(&p.hidden),
            p.residual_dim.to_string(),
            join(&p.var_hidden),
            p.actor_sees_second_order.to_string(),
            match p.critic {
                CriticInput::Local => "local".to_string(),
                CriticInput::Global => "global".to_string(),
            },
            self.good_intrinsic.lambda.to_string(),
            self.adv_intrinsic.lambda.to_string(),
            clip(self.good_intrinsic.clip),
            clip(self.adv_intrinsic.clip),
        ];
        KEYS.iter().map(|(k, _)| *k).zip(values).collect()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("line {}: expected key=value, got `{line}`", n + 1)))?;
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn serialize(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig("seeds must not be empty".into()));
        }
        for row in GridRow::ALL {
            self.run_config(row, 0).validate()?;
        }
        Ok(())
    }

    /// The trainer configuration of one grid cell.
    pub fn run_config(&self, row: GridRow, seed: u64) -> RunConfig {
        let [_, _, good_second, adv_second] = row.flags();
        let setup = |second: bool, intrinsic: IntrinsicConfig| match (row, second) {
            (GridRow::Baseline, _) => PopulationSetup::baseline(),
            (_, true) => PopulationSetup::second_order(intrinsic),
            (_, false) => PopulationSetup::first_order(),
        };
        RunConfig {
            env: self.env.clone(),
            train: TrainConfig {
                seed,
                ..self.train.clone()
            },
            policy: self.policy.clone(),
            good: setup(good_second, self.good_intrinsic),
            adv: setup(adv_second, self.adv_intrinsic),
        }
    }

    /// `#`-prefixed header lines recording everything needed to rerun a cell.
    pub fn provenance(&self, row: GridRow, seed: u64) -> String {
        let t = &self.train;
        let mut out = format!(
            "# tomrl metrics\n# row={row}\n# seed={seed}\n# optimizer=adam, per-head gradient clipping\n\
             # n_envs={}\n# minibatches={}\n",
            t.n_envs, t.minibatches
        );
        for (k, v) in self.entries() {
            if k != "row" && k != "seeds" {
                out.push_str(&format!("# {k}={v}\n"));
            }
        }
        out
    }
}

/// Evaluation result of one trained `(row, seed)` cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub row: GridRow,
    pub seed: u64,
    pub good_mean: f64,
    pub good_var: f64,
    pub adv_mean: f64,
    pub adv_var: f64,
}

impl CellResult {
    pub const HEADER: &'static str = "row,seed,good_mean,good_var,adv_mean,adv_var";

    fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.row, self.seed, self.good_mean, self.good_var, self.adv_mean, self.adv_var
        )
    }
}

/// Seed aggregate of one grid row.
#[derive(Debug, Clone, PartialEq)]
pub struct RowSummary {
    pub row: GridRow,
    pub n_seeds: usize,
    pub good_mean: f64,
    pub good_var: f64,
    pub good_stderr: f64,
    pub adv_mean: f64,
    pub adv_var: f64,
    pub adv_stderr: f64,
}

impl RowSummary {
    pub const HEADER: &'static str = "row,first_order_good,first_order_adv,second_order_good,second_order_adv,\
        n_seeds,good_mean,good_var,good_stderr,adv_mean,adv_var,adv_stderr";

    /// Mean and across-seed variance of the per-seed evaluation means.
    pub fn from_cells(row: GridRow, cells: &[&CellResult]) -> Self {
        let good: Vec<f64> = cells.iter().map(|c| c.good_mean).collect();
        let adv: Vec<f64> = cells.iter().map(|c| c.adv_mean).collect();
        let n = cells.len();
        let (good_var, adv_var) = (sample_variance(&good), sample_variance(&adv));
        Self {
            row,
            n_seeds: n,
            good_mean: mean(&good),
            good_var,
            good_stderr: (good_var / n as f64).sqrt(),
            adv_mean: mean(&adv),
            adv_var,
            adv_stderr: (adv_var / n as f64).sqrt(),
        }
    }

    fn to_csv(&self) -> String {
        let yn = |b: bool| if b { "Yes" } else { "No" };
        let f = self.row.flags();
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.row,
            yn(f[0]),
            yn(f[1]),
            yn(f[2]),
            yn(f[3]),
            self.n_seeds,
            self.good_mean,
            self.good_var,
            self.good_stderr,
            self.adv_mean,
            self.adv_var,
            self.adv_stderr
        )
    }
}

/// Trains and evaluates one cell, writing into `dir`:
///
/// - `metrics.csv`: provenance header, then one line per policy update
/// - `checkpoints/`: parameters at every swap and at the end
/// - `trajectory.csv`: every evaluation step
/// - `eval.csv`: per-episode evaluation returns
pub fn run_cell(cfg: &ExperimentConfig, row: GridRow, seed: u64, dir: &Path) -> Result<CellResult> {
    let rc = cfg.run_config(row, seed);
    rc.validate()?;
    fs::create_dir_all(dir)?;
    let mut metrics = BufWriter::new(File::create(dir.join("metrics.csv"))?);
    write!(metrics, "{}", cfg.provenance(row, seed))?;
    writeln!(metrics, "{}", MetricsRecord::HEADER)?;
    let mut write_record = |r: &MetricsRecord| -> Result<()> {
        writeln!(metrics, "{}", r.to_csv())?;
        Ok(())
    };
    let outcome = train_alternating(&rc, &mut write_record, Some(&dir.join("checkpoints")));
    metrics.flush()?;
    let outcome = outcome?;

    let report = evaluate_policy(
        &rc.env,
        &outcome.good.params,
        &outcome.adv.params,
        cfg.eval_episodes,
        derive_seed(seed, 300),
    )?;
    trajectory::write_csv(
        BufWriter::new(File::create(dir.join("trajectory.csv"))?),
        rc.env.n_agents(),
        &report.trajectory,
    )?;
    let mut eval = BufWriter::new(File::create(dir.join("eval.csv"))?);
    writeln!(eval, "episode,good_return,adv_return")?;
    for (i, (g, a)) in report.episode_returns.iter().enumerate() {
        writeln!(eval, "{i},{g},{a}")?;
    }
    eval.flush()?;
    Ok(CellResult {
        row,
        seed,
        good_mean: report.good_mean,
        good_var: report.good_var,
        adv_mean: report.adv_mean,
        adv_var: report.adv_var,
    })
}

fn write_results(out: &Path, cells: &[CellResult]) -> Result<Vec<RowSummary>> {
    let mut summaries = Vec::new();
    for row in GridRow::ALL {
        let done: Vec<&CellResult> = cells.iter().filter(|c| c.row == row).collect();
        if !done.is_empty() {
            summaries.push(RowSummary::from_cells(row, &done));
        }
    }
    let mut text = format!("{}\n", RowSummary::HEADER);
    for s in &summaries {
        text.push_str(&s.to_csv());
        text.push('\n');
    }
    fs::write(out.join("results.csv"), text)?;
    Ok(summaries)
}

/// Runs every `(row, seed)` cell under `out/<row>/seed<seed>/`.
///
/// `cells.csv` and `results.csv` are rewritten after each finished cell, so
/// an interrupted grid keeps everything completed so far.
pub fn run_grid(cfg: &ExperimentConfig, rows: &[GridRow], seeds: &[u64], out: &Path) -> Result<Vec<RowSummary>> {
    fs::create_dir_all(out)?;
    fs::write(out.join("config.txt"), cfg.serialize())?;
    let mut cells = Vec::new();
    let mut summaries = write_results(out, &cells)?;
    for &row in rows {
        for &seed in seeds {
            let dir = out.join(row.name()).join(format!("seed{seed}"));
            cells.push(run_cell(cfg, row, seed, &dir)?);
            let mut text = format!("{}\n", CellResult::HEADER);
            for c in &cells {
                text.push_str(&c.to_csv());
                text.push('\n');
            }
            fs::write(out.join("cells.csv"), text)?;
            summaries = write_results(out, &cells)?;
        }
    }
    Ok(summaries)
}
