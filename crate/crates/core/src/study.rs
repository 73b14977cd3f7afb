//! Experiment orchestration: single runs, paired random-search tuning
//! studies, sensitivity sweeps, gap/quality correlation studies and
//! stability-over-seeds studies, with CSV/JSON reporting.
//!
//! Every run is identified by `(arm, trial_id, seed)`; hyperparameter draws
//! come from a per-trial RNG stream so both arms of a paired study see the
//! same draws and seeds regardless of execution order.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::losses::GanVariant;
use crate::metrics::{
    self, fmt_f64, write_json, write_rows, BootstrapCurve, Correlation, Direction, SignTest, Summary, TTest,
    DEFAULT_CONFIDENCE, DEFAULT_N_BOOT,
};
use crate::parallel;
use crate::sched::{Interpolation, SchedulerParams};
use crate::serde_nonfinite;
use crate::trainer::{self, DannTask, DannTaskSpec, GanTask, GanTaskSpec, RunRecord, TrainConfig};

/// Exit status of a command, mirrored by the binary's process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    AllDiverged,
}

impl Outcome {
    pub fn exit_code(self) -> i32 {
        match self {
            Outcome::Success => 0,
            Outcome::AllDiverged => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskConfig {
    Gan(GanTaskSpec),
    Dann(DannTaskSpec),
}

impl TaskConfig {
    pub fn direction(&self) -> Direction {
        match self {
            TaskConfig::Gan(_) => Direction::Min,
            TaskConfig::Dann(_) => Direction::Max,
        }
    }

    pub fn variant_name(&self) -> &'static str {
        match self {
            TaskConfig::Gan(s) => s.variant.name(),
            TaskConfig::Dann(_) => "dann",
        }
    }
}

/// How the adversary's learning rate evolves in a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    /// Gap-aware scheduler with exponential interpolation.
    Scheduler,
    /// Gap-aware scheduler with linear interpolation.
    Linear,
    /// Loss-independent `rho^(s/T)` decay of both players' rates.
    Decay,
    /// Constant rates.
    None,
}

impl Arm {
    pub fn name(self) -> &'static str {
        match self {
            Arm::Scheduler => "scheduler",
            Arm::Linear => "linear",
            Arm::Decay => "decay",
            Arm::None => "none",
        }
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Arm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scheduler" | "on" => Ok(Arm::Scheduler),
            "linear" => Ok(Arm::Linear),
            "decay" => Ok(Arm::Decay),
            "none" | "off" => Ok(Arm::None),
            other => Err(Error::Config(format!("unknown arm '{other}'"))),
        }
    }
}

/// Closed interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lo: f64,
    pub hi: f64,
}

impl Bounds {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    fn validate(&self, name: &str, positive: bool) -> Result<()> {
        let ok = self.lo.is_finite() && self.hi.is_finite() && self.lo <= self.hi && (!positive || self.lo > 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("{name} bounds must be finite and ordered{}: {self:?}", if positive { " and positive" } else { "" })))
        }
    }

    fn uniform<R: Rng>(&self, rng: &mut R) -> f64 {
        if self.lo == self.hi {
            self.lo
        } else {
            rng.gen_range(self.lo..=self.hi)
        }
    }

    fn log_uniform<R: Rng>(&self, rng: &mut R) -> f64 {
        if self.lo == self.hi {
            self.lo
        } else {
            rng.gen_range(self.lo.ln()..=self.hi.ln()).exp()
        }
    }
}

/// Random-search distributions. Learning rate, clip and decay rate are
/// log-uniform; `beta1` and `v_star` uniform; `lambda` a finite choice set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchSpace {
    pub lr: Bounds,
    /// Draw independent rates for the two players instead of one shared rate.
    pub decoupled: bool,
    /// Only used with Adam.
    pub beta1: Option<Bounds>,
    /// Only used by WGAN tasks.
    pub clip: Option<Bounds>,
    /// Only used by DANN tasks.
    pub lambda: Vec<f64>,
    /// Only used by DANN tasks.
    pub v_star: Bounds,
    /// Only used by the decay arm.
    pub rho: Bounds,
}

impl Default for SearchSpace {
    fn default() -> Self {
        let log4 = 4f64.ln();
        Self {
            lr: Bounds::new(1e-5, 1e-3),
            decoupled: false,
            beta1: Some(Bounds::new(0.0, 1.0 - 1e-9)),
            clip: Some(Bounds::new(1e-3, 1e-1)),
            lambda: vec![0.01, 0.1, 1.0],
            v_star: Bounds::new(0.5 * log4, log4),
            rho: Bounds::new(1e-4, 1e-1),
        }
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        self.lr.validate("lr", true)?;
        if let Some(b) = self.beta1 {
            b.validate("beta1", false)?;
            if b.lo < 0.0 || b.hi >= 1.0 {
                return Err(Error::Config("beta1 bounds must lie in [0, 1)".into()));
            }
        }
        if let Some(c) = self.clip {
            c.validate("clip", true)?;
        }
        if self.lambda.is_empty() || self.lambda.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(Error::Config("lambda choices must be a non-empty set of values >= 0".into()));
        }
        self.v_star.validate("v_star", true)?;
        if self.v_star.hi > 4f64.ln() + 1e-12 {
            return Err(Error::Config("v_star must not exceed log 4".into()));
        }
        self.rho.validate("rho", true)?;
        if self.rho.hi > 1.0 {
            return Err(Error::Config("rho must not exceed 1".into()));
        }
        Ok(())
    }
}

/// One set of hyperparameters. Fields a task does not use stay `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct HyperParams {
    pub lr_g: f64,
    pub lr_d: f64,
    #[serde(default)]
    pub beta1: Option<f64>,
    #[serde(default)]
    pub clip: Option<f64>,
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default)]
    pub v_star: Option<f64>,
    #[serde(default)]
    pub rho: Option<f64>,
}

/// Draws the hyperparameters of trial `trial_id` from its own stream.
pub fn draw_hyperparams(
    space: &SearchSpace,
    task: &TaskConfig,
    train: &TrainConfig,
    base_seed: u64,
    trial_id: usize,
    stream_offset: u64,
) -> HyperParams {
    let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
    rng.set_stream(1_000 + stream_offset * 1_000_000 + trial_id as u64);
    // fixed draw order so that toggling one option never shifts the others
    let lr_g = space.lr.log_uniform(&mut rng);
    let lr_d_indep = space.lr.log_uniform(&mut rng);
    let beta1 = space.beta1.map(|b| b.uniform(&mut rng));
    let clip = space.clip.map(|b| b.log_uniform(&mut rng));
    let lambda = space.lambda[rng.gen_range(0..space.lambda.len())];
    let v_star = space.v_star.uniform(&mut rng);
    let rho = space.rho.log_uniform(&mut rng);

    let is_adam = train.optimizer.beta1().is_some();
    let (is_wgan, is_dann) = match task {
        TaskConfig::Gan(s) => (s.variant == GanVariant::Wasserstein, false),
        TaskConfig::Dann(_) => (false, true),
    };
    HyperParams {
        lr_g,
        lr_d: if space.decoupled { lr_d_indep } else { lr_g },
        beta1: if is_adam { beta1.or(train.optimizer.beta1()) } else { None },
        clip: if is_wgan { clip.or(train.clip) } else { train.clip },
        lambda: is_dann.then_some(lambda),
        v_star: is_dann.then_some(v_star),
        rho: Some(rho),
    }
}

fn default_n_trials() -> usize {
    30
}

fn default_one() -> usize {
    1
}

fn default_arms() -> Vec<Arm> {
    vec![Arm::Scheduler, Arm::None]
}

fn default_budgets() -> Vec<usize> {
    vec![1, 2, 5, 10, 20, 30]
}

fn default_true() -> bool {
    true
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub param: String,
    pub grid: Vec<f64>,
    #[serde(default = "default_sweep_seeds")]
    pub seeds: usize,
}

fn default_sweep_seeds() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct CorrelateConfig {
    /// Drop runs whose metric is worse than this (failed-run outlier cut).
    #[serde(default)]
    pub outlier_threshold: Option<f64>,
    /// Report `ln(gap)` in the scatter; ranks (and so the correlation) are unchanged.
    #[serde(default)]
    pub log_gap: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityArm {
    pub name: String,
    pub arm: Arm,
    #[serde(default)]
    pub hparams: Option<HyperParams>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityConfig {
    #[serde(default = "default_stability_seeds")]
    pub seeds: usize,
    #[serde(default)]
    pub hparams: Option<HyperParams>,
    #[serde(default = "default_stability_arms")]
    pub arms: Vec<StabilityArm>,
}

fn default_stability_seeds() -> usize {
    20
}

fn default_stability_arms() -> Vec<StabilityArm> {
    [Arm::Scheduler, Arm::None]
        .into_iter()
        .map(|arm| StabilityArm { name: arm.name().into(), arm, hparams: None })
        .collect()
}

impl Default for StabilityConfig {
    fn default() -> Self {
        Self { seeds: default_stability_seeds(), hparams: None, arms: default_stability_arms() }
    }
}

/// A whole experiment as one JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub task: TaskConfig,
    #[serde(default)]
    pub train: TrainConfig,
    /// Scheduler parameters for the scheduled arms; `ideal_loss` is always
    /// replaced by the task's own constant (or the drawn `v_star`).
    #[serde(default)]
    pub scheduler: Option<SchedulerParams>,
    /// Target adversary loss for DANN runs that do not draw one (default log 4).
    #[serde(default)]
    pub v_star: Option<f64>,
    #[serde(default)]
    pub search: SearchSpace,
    #[serde(default = "default_n_trials")]
    pub n_trials: usize,
    #[serde(default = "default_one")]
    pub seeds_per_trial: usize,
    #[serde(default)]
    pub base_seed: u64,
    /// Worker threads; `None` uses all cores, `1` runs sequentially.
    #[serde(default)]
    pub parallelism: Option<usize>,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    /// Share hyperparameter draws and seeds between arms.
    #[serde(default = "default_true")]
    pub paired: bool,
    #[serde(default = "default_arms")]
    pub arms: Vec<Arm>,
    #[serde(default = "default_budgets")]
    pub budgets: Vec<usize>,
    #[serde(default = "default_n_boot")]
    pub n_boot: usize,
    #[serde(default = "default_confidence")]
    pub confidence: f64,
    /// Also write a JSON-lines trace for every run of a study.
    #[serde(default)]
    pub write_traces: bool,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
    #[serde(default)]
    pub correlate: CorrelateConfig,
    #[serde(default)]
    pub stability: StabilityConfig,
}

fn default_n_boot() -> usize {
    DEFAULT_N_BOOT
}

fn default_confidence() -> f64 {
    DEFAULT_CONFIDENCE
}

impl ExperimentConfig {
    pub fn new(task: TaskConfig, train: TrainConfig) -> Self {
        Self {
            task,
            train,
            scheduler: None,
            v_star: None,
            search: SearchSpace::default(),
            n_trials: default_n_trials(),
            seeds_per_trial: 1,
            base_seed: 0,
            parallelism: None,
            output: default_output(),
            paired: true,
            arms: default_arms(),
            budgets: default_budgets(),
            n_boot: DEFAULT_N_BOOT,
            confidence: DEFAULT_CONFIDENCE,
            write_traces: false,
            sweep: None,
            correlate: CorrelateConfig::default(),
            stability: StabilityConfig::default(),
        }
    }

    /// Reads a JSON config and applies `key=value` overrides (dotted paths,
    /// values parsed as JSON when possible, else taken as strings).
    pub fn load(path: &Path, overrides: &[(String, String)]) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json_str(&text, overrides)
    }

    pub fn from_json_str(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let mut value: Value = serde_json::from_str(text).map_err(|e| Error::Config(format!("malformed config: {e}")))?;
        for (k, v) in overrides {
            apply_override(&mut value, k, v)?;
        }
        let cfg: Self = serde_json::from_value(value).map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.search.validate()?;
        if self.n_trials == 0 || self.seeds_per_trial == 0 {
            return Err(Error::Config("n_trials and seeds_per_trial must be >= 1".into()));
        }
        if self.arms.is_empty() {
            return Err(Error::Config("at least one arm is required".into()));
        }
        if self.budgets.contains(&0) || self.n_boot == 0 {
            return Err(Error::Config("budgets and n_boot must be >= 1".into()));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(Error::Config("confidence must lie in (0, 1)".into()));
        }
        if self.parallelism == Some(0) {
            return Err(Error::Config("parallelism must be >= 1".into()));
        }
        if let Some(p) = &self.scheduler {
            p.validate()?;
        }
        if let Some(v) = self.v_star {
            if !(v > 0.0 && v <= 4f64.ln() + 1e-12) {
                return Err(Error::Config(format!("v_star must lie in (0, log 4], got {v}")));
            }
        }
        if let TaskConfig::Dann(s) = &self.task {
            if !(s.lambda.is_finite() && s.lambda >= 0.0) {
                return Err(Error::Config("lambda must be >= 0".into()));
            }
        }
        Ok(())
    }

    /// The hyperparameters already present in the training template.
    pub fn template_hparams(&self) -> HyperParams {
        let train = &self.train;
        let (lambda, v_star) = match &self.task {
            TaskConfig::Dann(s) => (Some(s.lambda), Some(self.v_star.unwrap_or(4f64.ln()))),
            TaskConfig::Gan(_) => (None, None),
        };
        HyperParams {
            lr_g: train.lr_g,
            lr_d: train.lr_d,
            beta1: train.optimizer.beta1(),
            clip: train.clip,
            lambda,
            v_star,
            rho: train.baseline_decay,
        }
    }

    /// Switches the training template's gap-aware scheduler on (with the
    /// configured or default parameters) or off.
    pub fn set_scheduler(&mut self, on: bool) {
        if on {
            let ideal = self.ideal_loss(&self.template_hparams());
            self.train.scheduler = Some(self.scheduler_for(Arm::Scheduler, ideal));
            self.train.baseline_decay = None;
        } else {
            self.train.scheduler = None;
        }
    }

    /// Scheduler parameters for a scheduled arm, given the target loss.
    fn scheduler_for(&self, arm: Arm, ideal_loss: f64) -> SchedulerParams {
        let base = match (&self.scheduler, &self.task) {
            (Some(p), _) => SchedulerParams { ideal_loss, ..*p },
            (None, TaskConfig::Gan(s)) => SchedulerParams::default_for(s.variant),
            (None, TaskConfig::Dann(_)) => SchedulerParams::for_ideal_loss(ideal_loss),
        };
        let interpolation = if arm == Arm::Linear { Interpolation::Linear } else { base.interpolation };
        SchedulerParams { ideal_loss, interpolation, ..base }
    }

    /// Training configuration for one run of `arm` at `hp` and `seed`.
    pub fn run_config(&self, arm: Arm, hp: &HyperParams, seed: u64) -> TrainConfig {
        let ideal = self.ideal_loss(hp);
        let mut cfg = self.train.clone();
        cfg.seed = seed;
        cfg.lr_g = hp.lr_g;
        cfg.lr_d = hp.lr_d;
        if let (crate::optim::OptimizerKind::Adam { .. }, Some(b)) = (cfg.optimizer, hp.beta1) {
            cfg.optimizer = crate::optim::OptimizerKind::Adam { beta1: b };
        }
        cfg.clip = hp.clip;
        cfg.scheduler = None;
        cfg.baseline_decay = None;
        match arm {
            Arm::Scheduler | Arm::Linear => cfg.scheduler = Some(self.scheduler_for(arm, ideal)),
            Arm::Decay => cfg.baseline_decay = Some(hp.rho.unwrap_or(0.01)),
            Arm::None => {}
        }
        cfg
    }

    fn ideal_loss(&self, hp: &HyperParams) -> f64 {
        match &self.task {
            TaskConfig::Gan(s) => s.variant.ideal_disc_loss(),
            TaskConfig::Dann(_) => hp.v_star.unwrap_or(4f64.ln()),
        }
    }
}

/// Sets `key` (a dotted path, e.g. `train.lr_d`) in a JSON document.
pub fn apply_override(doc: &mut Value, key: &str, raw: &str) -> Result<()> {
    let parsed = serde_json::from_str::<Value>(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if part.is_empty() {
            return Err(Error::Config(format!("bad override key '{key}'")));
        }
        let obj = match node {
            Value::Object(m) => m,
            Value::Null => {
                *node = Value::Object(Default::default());
                node.as_object_mut().expect("object")
            }
            _ => return Err(Error::Config(format!("override '{key}': '{part}' is not inside an object"))),
        };
        if i + 1 == parts.len() {
            obj.insert((*part).to_string(), parsed);
            return Ok(());
        }
        node = obj.entry((*part).to_string()).or_insert(Value::Null);
    }
    Ok(())
}

/// Builds a fresh task for `seed` and trains it.
pub fn run_once(cfg: &ExperimentConfig, arm: Arm, hp: &HyperParams, seed: u64) -> Result<RunRecord> {
    let train = cfg.run_config(arm, hp, seed);
    match &cfg.task {
        TaskConfig::Gan(spec) => {
            let mut task = GanTask::from_spec(spec, seed)?;
            trainer::train_gan(&mut task, &train)
        }
        TaskConfig::Dann(spec) => {
            let lambda = hp.lambda.unwrap_or(spec.lambda);
            let mut task = DannTask::from_spec(&DannTaskSpec { lambda, ..spec.clone() }, seed)?;
            trainer::train_dann(&mut task, &train, hp.v_star.unwrap_or(4f64.ln()))
        }
    }
}

/// One completed run of a study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub arm: Arm,
    pub trial_id: usize,
    pub seed: u64,
    pub hparams: HyperParams,
    #[serde(with = "serde_nonfinite")]
    pub final_metric: f64,
    #[serde(with = "serde_nonfinite")]
    pub test_metric: f64,
    #[serde(with = "serde_nonfinite")]
    pub final_gap: f64,
    #[serde(with = "serde_nonfinite::option")]
    pub gen_gap: Option<f64>,
    pub diverged: bool,
}

impl TrialRow {
    fn new(arm: Arm, trial_id: usize, seed: u64, hparams: HyperParams, rec: &RunRecord) -> Self {
        let s = &rec.summary;
        Self {
            arm,
            trial_id,
            seed,
            hparams,
            final_metric: s.best_metric,
            test_metric: s.test_metric,
            final_gap: s.final_gap,
            gen_gap: s.final_gen_gap,
            diverged: s.diverged,
        }
    }
}

pub const TRIALS_HEADER: [&str; 14] = [
    "trial_id",
    "seed",
    "variant",
    "scheduler",
    "lr_g",
    "lr_d",
    "beta1",
    "clip",
    "lambda",
    "v_star",
    "final_metric",
    "final_gap",
    "gen_gap",
    "diverged",
];

fn opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

fn trial_record(variant: &str, r: &TrialRow) -> Vec<String> {
    vec![
        r.trial_id.to_string(),
        r.seed.to_string(),
        variant.to_string(),
        r.arm.name().to_string(),
        fmt_f64(r.hparams.lr_g),
        fmt_f64(r.hparams.lr_d),
        opt(r.hparams.beta1),
        opt(r.hparams.clip),
        opt(r.hparams.lambda),
        opt(r.hparams.v_star),
        fmt_f64(r.final_metric),
        fmt_f64(r.final_gap),
        opt(r.gen_gap),
        r.diverged.to_string(),
    ]
}

/// Writes the fixed-schema trial CSV.
pub fn write_trials_csv(path: &Path, variant: &str, rows: &[TrialRow]) -> Result<()> {
    let records: Vec<Vec<String>> = rows.iter().map(|r| trial_record(variant, r)).collect();
    write_rows(path, &TRIALS_HEADER, &records)
}

/// Serialized form of a single run: summary plus evaluation trace.
#[derive(Debug, Serialize)]
struct RunFile<'a> {
    arm: Arm,
    trial_id: usize,
    seed: u64,
    hparams: &'a HyperParams,
    ideal_loss: f64,
    summary: &'a trainer::RunSummary,
    evals: &'a [trainer::EvalRecord],
}

fn write_run_file(dir: &Path, cfg: &ExperimentConfig, job: &Job, rec: &RunRecord) -> Result<()> {
    let arm_dir = dir.join("runs").join(job.arm.name());
    fs::create_dir_all(&arm_dir)?;
    let stem = format!("t{}_s{}", job.trial_id, job.seed);
    let file = RunFile {
        arm: job.arm,
        trial_id: job.trial_id,
        seed: job.seed,
        hparams: &job.hparams,
        ideal_loss: rec.ideal_loss,
        summary: &rec.summary,
        evals: &rec.evals,
    };
    write_json(arm_dir.join(format!("{stem}.json")), &file)?;
    if cfg.write_traces {
        rec.write_jsonl(&arm_dir.join(format!("{stem}.jsonl")))?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
struct Job {
    arm: Arm,
    trial_id: usize,
    seed: u64,
    hparams: HyperParams,
}

/// Runs every job on the worker pool; results come back in job order.
fn run_jobs(cfg: &ExperimentConfig, jobs: Vec<Job>, out: Option<&Path>) -> Result<Vec<TrialRow>> {
    let results = parallel::map_indexed(jobs, cfg.parallelism, |_, job| -> Result<TrialRow> {
        let rec = run_once(cfg, job.arm, &job.hparams, job.seed)?;
        if let Some(dir) = out {
            write_run_file(dir, cfg, &job, &rec)?;
        }
        Ok(TrialRow::new(job.arm, job.trial_id, job.seed, job.hparams, &rec))
    });
    results.into_iter().collect()
}

fn seed_for(cfg: &ExperimentConfig, arm_index: usize, trial_id: usize, j: usize) -> u64 {
    let arm_offset = if cfg.paired { 0 } else { arm_index * cfg.n_trials * cfg.seeds_per_trial };
    cfg.base_seed + (arm_offset + trial_id * cfg.seeds_per_trial + j) as u64
}

fn outcome_of(rows: &[TrialRow]) -> Outcome {
    if !rows.is_empty() && rows.iter().all(|r| r.diverged) {
        Outcome::AllDiverged
    } else {
        Outcome::Success
    }
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize)]
struct TrainSummaryFile<'a> {
    variant: &'static str,
    seed: u64,
    ideal_loss: f64,
    summary: &'a trainer::RunSummary,
    evals: &'a [trainer::EvalRecord],
}

/// Runs the training template once and writes `trace.jsonl` and
/// `summary.json` under the output directory.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<(RunRecord, Outcome)> {
    let hp = cfg.template_hparams();
    let arm = if cfg.train.scheduler.is_some() {
        Arm::Scheduler
    } else if cfg.train.baseline_decay.is_some() {
        Arm::Decay
    } else {
        Arm::None
    };
    let mut explicit = cfg.clone();
    if let Some(p) = cfg.train.scheduler {
        explicit.scheduler = Some(p);
    }
    let rec = run_once(&explicit, arm, &hp, cfg.train.seed)?;
    fs::create_dir_all(&cfg.output)?;
    rec.write_jsonl(&cfg.output.join("trace.jsonl"))?;
    write_json(
        cfg.output.join("summary.json"),
        &TrainSummaryFile {
            variant: cfg.task.variant_name(),
            seed: cfg.train.seed,
            ideal_loss: rec.ideal_loss,
            summary: &rec.summary,
            evals: &rec.evals,
        },
    )?;
    let outcome = if rec.summary.diverged { Outcome::AllDiverged } else { Outcome::Success };
    Ok((rec, outcome))
}

// ---------------------------------------------------------------------------
// tune
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmResult {
    pub arm: Arm,
    /// Per-trial tuning metric: validation metric averaged over seeds.
    pub trial_metrics: Vec<f64>,
    pub curve: BootstrapCurve,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub rows: Vec<TrialRow>,
    pub arms: Vec<ArmResult>,
}

impl TuneResult {
    pub fn arm(&self, arm: Arm) -> Option<&ArmResult> {
        self.arms.iter().find(|a| a.arm == arm)
    }
}

/// Paired random-search study: `n_trials` draws x `seeds_per_trial` seeds
/// for every arm, then a bootstrap best-of-k curve per arm.
pub fn cmd_tune(cfg: &ExperimentConfig) -> Result<(TuneResult, Outcome)> {
    let mut jobs = Vec::new();
    for (a, &arm) in cfg.arms.iter().enumerate() {
        for t in 0..cfg.n_trials {
            let offset = if cfg.paired { 0 } else { a as u64 + 1 };
            let hp = draw_hyperparams(&cfg.search, &cfg.task, &cfg.train, cfg.base_seed, t, offset);
            for j in 0..cfg.seeds_per_trial {
                jobs.push(Job { arm, trial_id: t, seed: seed_for(cfg, a, t, j), hparams: hp });
            }
        }
    }
    fs::create_dir_all(&cfg.output)?;
    let rows = run_jobs(cfg, jobs, Some(&cfg.output))?;
    write_trials_csv(&cfg.output.join("trials.csv"), cfg.task.variant_name(), &rows)?;

    let direction = cfg.task.direction();
    let mut arms = Vec::new();
    for &arm in &cfg.arms {
        let trial_metrics: Vec<f64> = (0..cfg.n_trials)
            .map(|t| {
                let ms: Vec<f64> = rows.iter().filter(|r| r.arm == arm && r.trial_id == t).map(|r| r.final_metric).collect();
                ms.iter().sum::<f64>() / ms.len() as f64
            })
            .collect();
        let budgets: Vec<usize> = cfg.budgets.iter().copied().filter(|&k| k <= cfg.n_trials).collect();
        let budgets = if budgets.is_empty() { vec![1] } else { budgets };
        // the same resampling stream for every arm: paired bootstrap indices
        let curve = metrics::bootstrap_best_curve(&trial_metrics, &budgets, cfg.n_boot, cfg.confidence, direction, cfg.base_seed)?;
        curve.write_csv(&cfg.output.join(format!("curve_{}.csv", arm.name())))?;
        arms.push(ArmResult { arm, trial_metrics, curve });
    }
    let result = TuneResult { rows, arms };
    write_json(cfg.output.join("study.json"), &result)?;
    let outcome = outcome_of(&result.rows);
    Ok((result, outcome))
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    HMin,
    FMax,
    XMin,
    XMax,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::HMin => "h_min",
            SweepParam::FMax => "f_max",
            SweepParam::XMin => "x_min",
            SweepParam::XMax => "x_max",
        }
    }

    /// `params` with this field set to `value`, validated.
    pub fn apply(self, params: SchedulerParams, value: f64) -> Result<SchedulerParams> {
        let mut p = params;
        match self {
            SweepParam::HMin => p.h_min = value,
            SweepParam::FMax => p.f_max = value,
            SweepParam::XMin => p.x_min = value,
            SweepParam::XMax => p.x_max = value,
        }
        p.validate().map_err(|e| Error::Config(format!("{} = {value}: {e}", self.name())))?;
        Ok(p)
    }
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "h_min" => Ok(SweepParam::HMin),
            "f_max" => Ok(SweepParam::FMax),
            "x_min" => Ok(SweepParam::XMin),
            "x_max" => Ok(SweepParam::XMax),
            other => Err(Error::Config(format!("unknown sweep parameter '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    #[serde(with = "serde_nonfinite")]
    pub mean_metric: f64,
    #[serde(with = "serde_nonfinite")]
    pub stderr: f64,
}

/// Varies one scheduler parameter over `grid`, others at their defaults,
/// and reports the mean validation metric over `seeds` runs per value.
pub fn cmd_sweep(cfg: &ExperimentConfig, param: SweepParam, grid: &[f64], seeds: usize) -> Result<(Vec<SweepRow>, Outcome)> {
    if grid.is_empty() || seeds == 0 {
        return Err(Error::Config("sweep needs a non-empty grid and at least one seed".into()));
    }
    let hp = cfg.template_hparams();
    let base = cfg.scheduler_for(Arm::Scheduler, cfg.ideal_loss(&hp));
    let mut per_value = Vec::with_capacity(grid.len());
    for &v in grid {
        let mut c = cfg.clone();
        c.scheduler = Some(param.apply(base, v)?);
        per_value.push(c);
    }
    let jobs: Vec<(usize, u64)> = (0..grid.len())
        .flat_map(|g| (0..seeds).map(move |j| (g, j as u64)))
        .collect();
    let runs = parallel::map_indexed(jobs, cfg.parallelism, |_, (g, j)| {
        run_once(&per_value[g], Arm::Scheduler, &hp, cfg.base_seed + j).map(|r| (g, r.summary))
    });
    let runs = runs.into_iter().collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::with_capacity(grid.len());
    for (g, &value) in grid.iter().enumerate() {
        let ms: Vec<f64> = runs.iter().filter(|(i, _)| *i == g).map(|(_, s)| s.best_metric).collect();
        let s = metrics::summarize(&ms)?;
        rows.push(SweepRow { value, mean_metric: s.mean, stderr: s.stderr });
    }
    fs::create_dir_all(&cfg.output)?;
    let records: Vec<Vec<String>> = rows
        .iter()
        .map(|r| vec![param.name().to_string(), fmt_f64(r.value), fmt_f64(r.mean_metric), fmt_f64(r.stderr)])
        .collect();
    write_rows(cfg.output.join("sweep.csv"), &["param", "value", "mean_metric", "stderr"], &records)?;
    let outcome = if runs.iter().all(|(_, s)| s.diverged) { Outcome::AllDiverged } else { Outcome::Success };
    Ok((rows, outcome))
}

// ---------------------------------------------------------------------------
// correlate
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrelationStatus {
    Ok,
    /// Fewer than three usable runs.
    Unavailable,
    /// A variable has no spread, so ranks carry no information.
    Undefined,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub status: CorrelationStatus,
    pub n_runs: usize,
    pub n_diverged: usize,
    pub n_outliers: usize,
    pub n_used: usize,
    pub log_gap: bool,
    pub outlier_threshold: Option<f64>,
    pub correlation: Option<Correlation>,
}

/// Spearman correlation of `(trial_id, gap, metric)` points after dropping
/// non-finite points and, optionally, metrics worse than `threshold`.
pub fn correlation_report(
    points: &[(usize, f64, f64)],
    direction: Direction,
    settings: &CorrelateConfig,
) -> (Vec<(usize, f64, f64)>, CorrelationReport) {
    let finite: Vec<_> = points.iter().copied().filter(|(_, g, m)| g.is_finite() && m.is_finite()).collect();
    let n_diverged = points.len() - finite.len();
    let kept: Vec<_> = finite
        .iter()
        .copied()
        .filter(|&(_, _, m)| match settings.outlier_threshold {
            Some(t) => !direction.is_better(t, m),
            None => true,
        })
        .map(|(i, g, m)| (i, if settings.log_gap { g.ln() } else { g }, m))
        .collect();
    let n_outliers = finite.len() - kept.len();
    let gaps: Vec<f64> = kept.iter().map(|p| p.1).collect();
    let ms: Vec<f64> = kept.iter().map(|p| p.2).collect();
    let (status, correlation) = if kept.len() < 3 {
        (CorrelationStatus::Unavailable, None)
    } else {
        match metrics::spearman(&gaps, &ms) {
            Ok(c) if c.rho.is_finite() => (CorrelationStatus::Ok, Some(c)),
            _ => (CorrelationStatus::Undefined, None),
        }
    };
    let report = CorrelationReport {
        status,
        n_runs: points.len(),
        n_diverged,
        n_outliers,
        n_used: kept.len(),
        log_gap: settings.log_gap,
        outlier_threshold: settings.outlier_threshold,
        correlation,
    };
    (kept, report)
}

/// Random-hyperparameter runs without the scheduler; rank correlation
/// between the final optimality gap and the final quality metric.
pub fn cmd_correlate(cfg: &ExperimentConfig) -> Result<(CorrelationReport, Outcome)> {
    let jobs: Vec<Job> = (0..cfg.n_trials)
        .map(|t| Job {
            arm: Arm::None,
            trial_id: t,
            seed: cfg.base_seed + t as u64,
            hparams: draw_hyperparams(&cfg.search, &cfg.task, &cfg.train, cfg.base_seed, t, 0),
        })
        .collect();
    fs::create_dir_all(&cfg.output)?;
    let rows = run_jobs(cfg, jobs, Some(&cfg.output))?;
    let points: Vec<(usize, f64, f64)> = rows.iter().map(|r| (r.trial_id, r.final_gap, r.final_metric)).collect();
    let (kept, report) = correlation_report(&points, cfg.task.direction(), &cfg.correlate);
    let records: Vec<Vec<String>> = kept.iter().map(|&(t, g, m)| vec![t.to_string(), fmt_f64(g), fmt_f64(m)]).collect();
    write_rows(cfg.output.join("scatter.csv"), &["trial_id", "gap", "metric"], &records)?;
    write_trials_csv(&cfg.output.join("trials.csv"), cfg.task.variant_name(), &rows)?;
    write_json(cfg.output.join("correlation.json"), &report)?;
    Ok((report, outcome_of(&rows)))
}

// ---------------------------------------------------------------------------
// stability
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilitySummary {
    pub name: String,
    pub arm: Arm,
    pub hparams: HyperParams,
    pub n_diverged: usize,
    pub metric: Option<Summary>,
    pub test_metric: Option<Summary>,
    pub gap: Option<Summary>,
    pub gen_gap: Option<Summary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub first: String,
    pub second: String,
    /// Welch test on the optimality gap (`p_less`: first arm smaller).
    pub gap_t_test: Option<TTest>,
    /// Paired sign test on the gap over shared seeds.
    pub gap_sign_test: Option<SignTest>,
    /// Welch test on the held-out test metric.
    pub test_metric_t_test: Option<TTest>,
    pub metric_sign_test: Option<SignTest>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityResult {
    pub rows: Vec<(String, TrialRow)>,
    pub arms: Vec<StabilitySummary>,
    pub comparison: Option<Comparison>,
}

impl StabilityResult {
    pub fn column(&self, name: &str, f: impl Fn(&TrialRow) -> f64) -> Vec<f64> {
        self.rows.iter().filter(|(n, _)| n == name).map(|(_, r)| f(r)).collect()
    }
}

fn finite_summary(xs: &[f64]) -> Option<Summary> {
    let f: Vec<f64> = xs.iter().copied().filter(|x| x.is_finite()).collect();
    metrics::summarize(&f).ok()
}

/// Fixed hyperparameters, many seeds, one row per (arm, seed). Seeds are
/// shared between arms so the sign tests are paired.
pub fn cmd_stability(cfg: &ExperimentConfig) -> Result<(StabilityResult, Outcome)> {
    let st = &cfg.stability;
    if st.seeds == 0 || st.arms.is_empty() {
        return Err(Error::Config("stability needs at least one seed and one arm".into()));
    }
    let default_hp = st.hparams.unwrap_or_else(|| cfg.template_hparams());
    let arms: Vec<(String, Arm, HyperParams)> =
        st.arms.iter().map(|a| (a.name.clone(), a.arm, a.hparams.unwrap_or(default_hp))).collect();
    let mut names = std::collections::HashSet::new();
    if !arms.iter().all(|(n, _, _)| names.insert(n.clone())) {
        return Err(Error::Config("stability arm names must be unique".into()));
    }
    let jobs: Vec<(usize, u64)> =
        (0..arms.len()).flat_map(|a| (0..st.seeds).map(move |j| (a, j as u64))).collect();
    let results = parallel::map_indexed(jobs, cfg.parallelism, |_, (a, j)| -> Result<(String, TrialRow)> {
        let (name, arm, hp) = &arms[a];
        let seed = cfg.base_seed + j;
        let rec = run_once(cfg, *arm, hp, seed)?;
        Ok((name.clone(), TrialRow::new(*arm, 0, seed, *hp, &rec)))
    });
    let rows = results.into_iter().collect::<Result<Vec<_>>>()?;

    let mut result = StabilityResult { rows, arms: Vec::new(), comparison: None };
    for (name, arm, hp) in &arms {
        let rows: Vec<&TrialRow> = result.rows.iter().filter(|(n, _)| n == name).map(|(_, r)| r).collect();
        let col = |f: &dyn Fn(&TrialRow) -> f64| rows.iter().map(|r| f(r)).collect::<Vec<f64>>();
        result.arms.push(StabilitySummary {
            name: name.clone(),
            arm: *arm,
            hparams: *hp,
            n_diverged: rows.iter().filter(|r| r.diverged).count(),
            metric: finite_summary(&col(&|r| r.final_metric)),
            test_metric: finite_summary(&col(&|r| r.test_metric)),
            gap: finite_summary(&col(&|r| r.final_gap)),
            gen_gap: finite_summary(&col(&|r| r.gen_gap.unwrap_or(f64::NAN))),
        });
    }
    if arms.len() >= 2 {
        let (a, b) = (&arms[0].0, &arms[1].0);
        let gap_a = result.column(a, |r| r.final_gap);
        let gap_b = result.column(b, |r| r.final_gap);
        let m_a = result.column(a, |r| r.test_metric);
        let m_b = result.column(b, |r| r.test_metric);
        let finite = |xs: &[f64]| xs.iter().copied().filter(|x| x.is_finite()).collect::<Vec<f64>>();
        result.comparison = Some(Comparison {
            first: a.clone(),
            second: b.clone(),
            gap_t_test: metrics::welch_t_test(&finite(&gap_a), &finite(&gap_b)).ok(),
            gap_sign_test: metrics::sign_test(&gap_a, &gap_b).ok(),
            test_metric_t_test: metrics::welch_t_test(&finite(&m_a), &finite(&m_b)).ok(),
            metric_sign_test: metrics::sign_test(&m_a, &m_b).ok(),
        });
    }

    fs::create_dir_all(&cfg.output)?;
    let records: Vec<Vec<String>> = result
        .rows
        .iter()
        .map(|(name, r)| {
            vec![
                name.clone(),
                r.arm.name().to_string(),
                r.seed.to_string(),
                fmt_f64(r.final_metric),
                fmt_f64(r.test_metric),
                fmt_f64(r.final_gap),
                opt(r.gen_gap),
                r.diverged.to_string(),
            ]
        })
        .collect();
    write_rows(
        cfg.output.join("stability.csv"),
        &["name", "scheduler", "seed", "final_metric", "test_metric", "final_gap", "gen_gap", "diverged"],
        &records,
    )?;
    let mut summary_rows = Vec::new();
    for s in &result.arms {
        for (quantity, sum) in [("metric", s.metric), ("test_metric", s.test_metric), ("gap", s.gap), ("gen_gap", s.gen_gap)] {
            if let Some(x) = sum {
                summary_rows.push(vec![
                    s.name.clone(),
                    quantity.to_string(),
                    x.n.to_string(),
                    fmt_f64(x.mean),
                    fmt_f64(x.stderr),
                    fmt_f64(x.q1),
                    fmt_f64(x.median),
                    fmt_f64(x.q3),
                ]);
            }
        }
    }
    write_rows(
        cfg.output.join("stability_summary.csv"),
        &["name", "quantity", "n", "mean", "stderr", "q1", "median", "q3"],
        &summary_rows,
    )?;
    write_json(cfg.output.join("stability.json"), &result)?;
    let outcome = if result.rows.iter().all(|(_, r)| r.diverged) { Outcome::AllDiverged } else { Outcome::Success };
    Ok((result, outcome))
}
