//! Two-player minibatch training loops for GANs and DANN with batch-level
//! gap-aware scheduling of the adversary's learning rate.
//!
//! Every run is fully determined by its task, its [`TrainConfig`] and the
//! seed inside it. Independent ChaCha streams feed network initialisation,
//! minibatches, noise and the fixed evaluation sets.

use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{sample_noise, DannDomains, RingGaussians};
use crate::error::{Error, Result};
use crate::losses::{self, DannOutputs, DiscBatchOutputs, GanVariant};
use crate::metrics::{self, Direction};
use crate::nn::{Activation, DenseNet, GradBundle, NetSpec};
use crate::optim::{clip_weights, ClipBound, Optimizer, OptimizerKind};
use crate::sched::{DecaySchedule, GapScheduler, LossEstimator, SchedulerParams, DEFAULT_EMA_DECAY};
use crate::serde_nonfinite;

mod stream {
    pub const INIT_A: u64 = 1;
    pub const INIT_B: u64 = 2;
    pub const INIT_C: u64 = 3;
    pub const BATCHES: u64 = 4;
    pub const NOISE: u64 = 5;
    pub const EVAL_TRAIN: u64 = 10;
    pub const EVAL_VAL: u64 = 11;
    pub const EVAL_TEST: u64 = 12;
    pub const EVAL_NOISE: u64 = 13;
    pub const SAMPLES: u64 = 20;
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateStyle {
    /// Both players' gradients are taken at the same point before either moves.
    #[default]
    Simultaneous,
    /// The adversary moves first; the other player sees the updated adversary.
    Alternating,
}

fn default_eval_samples() -> usize {
    1024
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub total_steps: u64,
    /// Rate of the generator (GAN) or of the feature extractor and label
    /// predictor (DANN). Never scheduled by the gap-aware scheduler.
    pub lr_g: f64,
    /// Base rate of the adversary.
    pub lr_d: f64,
    #[serde(default)]
    pub scheduler: Option<SchedulerParams>,
    /// `rho` of the loss-independent `rho^(s/T)` baseline, applied to both players.
    #[serde(default)]
    pub baseline_decay: Option<f64>,
    pub optimizer: OptimizerKind,
    #[serde(default)]
    pub clip: Option<f64>,
    pub seed: u64,
    pub eval_period: u64,
    #[serde(default)]
    pub update_style: UpdateStyle,
    #[serde(default = "default_eval_samples")]
    pub eval_samples: usize,
    /// Re-initialise the loss moving average with the full evaluation-set
    /// loss at every evaluation.
    #[serde(default)]
    pub reset_ema_on_eval: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            total_steps: 20_000,
            lr_g: 2e-4,
            lr_d: 2e-4,
            scheduler: None,
            baseline_decay: None,
            optimizer: OptimizerKind::Adam { beta1: 0.5 },
            clip: None,
            seed: 0,
            eval_period: 500,
            update_style: UpdateStyle::Simultaneous,
            eval_samples: default_eval_samples(),
            reset_ema_on_eval: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.batch_size == 0 || self.total_steps == 0 || self.eval_period == 0 {
            return bad("batch_size, total_steps and eval_period must be positive".into());
        }
        if self.eval_samples < 2 {
            return bad("eval_samples must be >= 2".into());
        }
        for (name, lr) in [("lr_g", self.lr_g), ("lr_d", self.lr_d)] {
            if !(lr.is_finite() && lr >= 0.0) {
                return bad(format!("{name} must be finite and >= 0, got {lr}"));
            }
        }
        if self.scheduler.is_some() && self.baseline_decay.is_some() {
            return bad("at most one of scheduler and baseline_decay may be active".into());
        }
        if let Some(p) = &self.scheduler {
            p.validate()?;
        }
        if let Some(rho) = self.baseline_decay {
            DecaySchedule::new(rho, self.total_steps)?;
        }
        if let Some(c) = self.clip {
            ClipBound::new(c)?;
        }
        if let OptimizerKind::Adam { beta1 } = self.optimizer {
            if !(0.0..1.0).contains(&beta1) {
                return bad(format!("beta1 must lie in [0, 1), got {beta1}"));
            }
        }
        Ok(())
    }

    fn decay(&self) -> Option<DecaySchedule> {
        self.baseline_decay.map(|rho| DecaySchedule { rho, total_steps: self.total_steps })
    }

    fn clip_bound(&self) -> Option<ClipBound> {
        self.clip.and_then(|c| ClipBound::new(c).ok())
    }

    fn eval_steps(&self) -> Vec<u64> {
        let mut steps: Vec<u64> = (1..=self.total_steps / self.eval_period).map(|i| i * self.eval_period).collect();
        if steps.last() != Some(&self.total_steps) {
            steps.push(self.total_steps);
        }
        steps
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub disc_loss: f64,
    pub ema_estimate: f64,
    /// `|ema_estimate - ideal_loss|`
    pub gap: f64,
    /// Multiplier applied to the adversary's base rate at this step.
    pub multiplier: f64,
    /// Generator loss (GAN) or label loss (DANN) on the batch.
    pub gen_loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub step: u64,
    /// Validation metric used for early stopping.
    #[serde(with = "serde_nonfinite")]
    pub metric: f64,
    #[serde(with = "serde_nonfinite")]
    pub test_metric: f64,
    /// Adversary loss on the fixed evaluation draw of the training distribution.
    pub full_disc_loss: f64,
    pub gap: f64,
    pub gen_loss: f64,
    #[serde(with = "serde_nonfinite::option", default)]
    pub gen_gap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub diverged: bool,
    pub diverged_at: Option<u64>,
    pub direction: Direction,
    pub steps_completed: u64,
    pub best_step: Option<u64>,
    /// Best validation metric over the evaluation trace.
    #[serde(with = "serde_nonfinite")]
    pub best_metric: f64,
    /// Test metric at the best-validation checkpoint.
    #[serde(with = "serde_nonfinite")]
    pub test_metric: f64,
    /// Optimality gap at the best-validation checkpoint.
    #[serde(with = "serde_nonfinite")]
    pub final_gap: f64,
    #[serde(with = "serde_nonfinite::option", default)]
    pub final_gen_gap: Option<f64>,
    /// Optimality gap at the last evaluation.
    #[serde(with = "serde_nonfinite")]
    pub last_gap: f64,
    pub multiplier_min: f64,
    pub multiplier_max: f64,
    pub multiplier_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub ideal_loss: f64,
    pub steps: Vec<StepRecord>,
    pub evals: Vec<EvalRecord>,
    pub summary: RunSummary,
    /// Not part of any serialized output so reruns stay byte-identical.
    #[serde(skip)]
    pub wall_time_secs: f64,
    /// Parameters of the player(s) being evaluated at the best checkpoint
    /// (generator for GANs; feature extractor then label predictor for DANN).
    #[serde(skip)]
    pub best_params: Vec<Vec<f64>>,
}

#[derive(Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
enum TraceEvent<'a> {
    Step(&'a StepRecord),
    Eval(&'a EvalRecord),
    Summary(&'a RunSummary),
}

impl RunRecord {
    /// One JSON object per step, per evaluation, and a closing summary line.
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        let mut evals = self.evals.iter().peekable();
        for s in &self.steps {
            serde_json::to_writer(&mut w, &TraceEvent::Step(s))?;
            w.write_all(b"\n")?;
            while let Some(e) = evals.next_if(|e| e.step <= s.step + 1 && e.step == s.step + 1) {
                serde_json::to_writer(&mut w, &TraceEvent::Eval(e))?;
                w.write_all(b"\n")?;
            }
        }
        for e in evals {
            serde_json::to_writer(&mut w, &TraceEvent::Eval(e))?;
            w.write_all(b"\n")?;
        }
        serde_json::to_writer(&mut w, &TraceEvent::Summary(&self.summary))?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    pub fn multipliers(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.multiplier).collect()
    }

    pub fn batch_disc_losses(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.disc_loss).collect()
    }
}

/// Recomputes the multiplier trace from scheduler parameters and recorded
/// batch losses, without touching any network.
pub fn replay_multipliers(params: SchedulerParams, batch_losses: &[f64]) -> Result<Vec<f64>> {
    let mut s = GapScheduler::new(params)?;
    batch_losses.iter().map(|&l| s.observe(l)).collect()
}

/// Either the gap-aware scheduler or a passive moving average (kept so the
/// trace always shows the loss estimate).
enum Rate {
    Gap(GapScheduler),
    Passive { estimator: LossEstimator, decay: Option<DecaySchedule> },
}

impl Rate {
    fn new(config: &TrainConfig, ideal_loss: f64) -> Result<Self> {
        Ok(match config.scheduler {
            Some(p) => Rate::Gap(GapScheduler::new(SchedulerParams { ideal_loss, ..p })?),
            None => Rate::Passive {
                estimator: LossEstimator::new(ideal_loss, DEFAULT_EMA_DECAY)?,
                decay: config.decay(),
            },
        })
    }

    /// Returns `(estimate, adversary multiplier, other-player multiplier)`.
    fn observe(&mut self, batch_loss: f64, step: u64) -> Result<(f64, f64, f64)> {
        match self {
            Rate::Gap(s) => {
                let m = s.observe(batch_loss)?;
                Ok((s.estimate(), m, 1.0))
            }
            Rate::Passive { estimator, decay } => {
                let est = estimator.update(batch_loss)?;
                let m = match decay {
                    Some(d) => d.multiplier(step)?,
                    None => 1.0,
                };
                Ok((est, m, m))
            }
        }
    }

    fn reset(&mut self, value: f64) -> Result<()> {
        match self {
            Rate::Gap(s) => s.reset_estimator(value),
            Rate::Passive { estimator, .. } => estimator.reset(value),
        }
    }
}

struct Tracker {
    direction: Direction,
    ideal_loss: f64,
    steps: Vec<StepRecord>,
    evals: Vec<EvalRecord>,
    best: Option<(usize, Vec<Vec<f64>>)>,
    diverged_at: Option<u64>,
}

impl Tracker {
    fn new(direction: Direction, ideal_loss: f64, total_steps: u64) -> Self {
        Self {
            direction,
            ideal_loss,
            steps: Vec::with_capacity(total_steps as usize),
            evals: Vec::new(),
            best: None,
            diverged_at: None,
        }
    }

    fn eval(&mut self, record: EvalRecord, snapshot: impl FnOnce() -> Vec<Vec<f64>>) {
        let improved = match &self.best {
            None => !record.metric.is_nan(),
            Some((i, _)) => self.direction.is_better(record.metric, self.evals[*i].metric),
        };
        self.evals.push(record);
        if improved {
            self.best = Some((self.evals.len() - 1, snapshot()));
        }
    }

    fn finish(self, started: Instant) -> RunRecord {
        let diverged = self.diverged_at.is_some();
        let best = if diverged { None } else { self.best };
        let best_eval = best.as_ref().map(|(i, _)| self.evals[*i]);
        let ms: Vec<f64> = self.steps.iter().map(|s| s.multiplier).collect();
        let (mmin, mmax, mmean) = if ms.is_empty() {
            (1.0, 1.0, 1.0)
        } else {
            (
                ms.iter().copied().fold(f64::INFINITY, f64::min),
                ms.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                ms.iter().sum::<f64>() / ms.len() as f64,
            )
        };
        let summary = RunSummary {
            diverged,
            diverged_at: self.diverged_at,
            direction: self.direction,
            steps_completed: self.steps.len() as u64,
            best_step: best_eval.map(|e| e.step),
            best_metric: best_eval.map(|e| e.metric).unwrap_or(self.direction.worst()),
            test_metric: best_eval.map(|e| e.test_metric).unwrap_or(self.direction.worst()),
            final_gap: best_eval.map(|e| e.gap).unwrap_or(f64::INFINITY),
            final_gen_gap: match best_eval {
                Some(e) => e.gen_gap,
                None if diverged => Some(f64::INFINITY),
                None => None,
            },
            last_gap: if diverged {
                f64::INFINITY
            } else {
                self.evals.last().map(|e| e.gap).unwrap_or(f64::INFINITY)
            },
            multiplier_min: mmin,
            multiplier_max: mmax,
            multiplier_mean: mmean,
        };
        RunRecord {
            ideal_loss: self.ideal_loss,
            steps: self.steps,
            evals: self.evals,
            summary,
            wall_time_secs: started.elapsed().as_secs_f64(),
            best_params: best.map(|(_, p)| p).unwrap_or_default(),
        }
    }
}

fn column(a: &Array2<f64>) -> Vec<f64> {
    a.column(0).to_vec()
}

fn as_column(v: Vec<f64>) -> Array2<f64> {
    let n = v.len();
    Array2::from_shape_vec((n, 1), v).expect("column shape")
}

fn is_divergence(e: &Error) -> bool {
    matches!(e, Error::Diverged { .. } | Error::OutOfRange { .. })
}

// ---------------------------------------------------------------------------
// GAN
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GanTaskSpec {
    pub variant: GanVariant,
    #[serde(default)]
    pub ring: RingGaussians,
    pub noise_dim: usize,
    pub gen_hidden: Vec<usize>,
    pub disc_hidden: Vec<usize>,
    /// Generator output activation; identity suits the unbounded ring.
    #[serde(default = "default_gen_head")]
    pub gen_head: Activation,
}

fn default_gen_head() -> Activation {
    Activation::Identity
}

impl GanTaskSpec {
    pub fn new(variant: GanVariant) -> Self {
        Self {
            variant,
            ring: RingGaussians::default(),
            noise_dim: 8,
            gen_hidden: vec![64, 64],
            disc_hidden: vec![64, 64],
            gen_head: default_gen_head(),
        }
    }

    pub fn generator_spec(&self) -> NetSpec {
        NetSpec::mlp(self.noise_dim, &self.gen_hidden, Activation::LEAKY, 2, self.gen_head)
    }

    pub fn discriminator_spec(&self) -> NetSpec {
        let head = if self.variant.uses_probabilities() {
            Activation::Sigmoid
        } else {
            Activation::Identity
        };
        NetSpec::mlp(2, &self.disc_hidden, Activation::LEAKY, 1, head)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GanTask {
    pub variant: GanVariant,
    pub generator: DenseNet,
    pub discriminator: DenseNet,
    pub noise_dim: usize,
    pub data: RingGaussians,
}

impl GanTask {
    pub fn from_spec(spec: &GanTaskSpec, seed: u64) -> Result<Self> {
        spec.ring.validate()?;
        if spec.noise_dim == 0 {
            return Err(Error::Config("noise_dim must be positive".into()));
        }
        let mut ga = rng_for(seed, stream::INIT_A);
        let mut gb = rng_for(seed, stream::INIT_B);
        use rand::Rng;
        let task = Self {
            variant: spec.variant,
            generator: DenseNet::init(&spec.generator_spec(), ga.gen())?,
            discriminator: DenseNet::init(&spec.discriminator_spec(), gb.gen())?,
            noise_dim: spec.noise_dim,
            data: spec.ring,
        };
        task.validate()?;
        Ok(task)
    }

    pub fn validate(&self) -> Result<()> {
        if self.generator.output_width() != 2 || self.discriminator.input_width() != 2 {
            return Err(Error::Config("generator output and discriminator input must be 2-D".into()));
        }
        if self.generator.input_width() != self.noise_dim || self.discriminator.output_width() != 1 {
            return Err(Error::Config("generator input must equal noise_dim and discriminator must be scalar".into()));
        }
        Ok(())
    }
}

/// `n` generator outputs from seeded standard-normal noise.
pub fn generate_samples(task: &GanTask, n: usize, seed: u64) -> Result<Array2<f64>> {
    let z = sample_noise(n, task.noise_dim, &mut rng_for(seed, stream::SAMPLES));
    task.generator.predict(&z)
}

struct GanEvalSets {
    train_real: Array2<f64>,
    val_real: Array2<f64>,
    test_real: Array2<f64>,
    noise: Array2<f64>,
}

impl GanEvalSets {
    fn new(task: &GanTask, n: usize, seed: u64) -> Self {
        Self {
            train_real: task.data.sample(n, &mut rng_for(seed, stream::EVAL_TRAIN)),
            val_real: task.data.sample(n, &mut rng_for(seed, stream::EVAL_VAL)),
            test_real: task.data.sample(n, &mut rng_for(seed, stream::EVAL_TEST)),
            noise: sample_noise(n, task.noise_dim, &mut rng_for(seed, stream::EVAL_NOISE)),
        }
    }
}

fn evaluate_gan(task: &GanTask, sets: &GanEvalSets, step: u64) -> Result<EvalRecord> {
    let fake = task.generator.predict(&sets.noise)?;
    let d_real = column(&task.discriminator.predict(&sets.train_real)?);
    let d_fake = column(&task.discriminator.predict(&fake)?);
    let full_disc_loss = losses::disc_loss(task.variant, DiscBatchOutputs { d_real: &d_real, d_fake: &d_fake })?;
    let gen_loss = losses::gen_loss(task.variant, &d_fake)?;
    let fake_fit = metrics::fit_gaussian(&fake)?;
    let metric = metrics::frechet_gaussian_distance(&fake_fit, &metrics::fit_gaussian(&sets.val_real)?)?;
    let test_metric = metrics::frechet_gaussian_distance(&fake_fit, &metrics::fit_gaussian(&sets.test_real)?)?;
    Ok(EvalRecord {
        step,
        metric,
        test_metric,
        full_disc_loss,
        gap: metrics::optimality_gap(full_disc_loss, task.variant.ideal_disc_loss()),
        gen_loss,
        gen_gap: Some(metrics::generator_gap(gen_loss, task.variant)),
    })
}

struct GanStepOut {
    disc_loss: f64,
    gen_loss: f64,
    d_grads: GradBundle,
    g_grads: GradBundle,
}

fn gan_gradients(task: &GanTask, real: &Array2<f64>, z: &Array2<f64>, with_gen: bool) -> Result<GanStepOut> {
    let g_cache = task.generator.forward(z)?;
    let fake = g_cache.output();
    let r_cache = task.discriminator.forward(real)?;
    let f_cache = task.discriminator.forward(fake)?;
    let d_real = column(r_cache.output());
    let d_fake = column(f_cache.output());
    let out = DiscBatchOutputs { d_real: &d_real, d_fake: &d_fake };
    let disc_loss = losses::disc_loss(task.variant, out)?;
    let gen_loss = losses::gen_loss(task.variant, &d_fake)?;
    let (gr, gf) = losses::disc_loss_grad(task.variant, out)?;
    let mut d_grads = task.discriminator.backward(&r_cache, &as_column(gr))?;
    d_grads.add_scaled(&task.discriminator.backward(&f_cache, &as_column(gf))?, 1.0);
    let g_grads = if with_gen {
        let gg = losses::gen_loss_grad(task.variant, &d_fake)?;
        let through_d = task.discriminator.input_gradient(&f_cache, &as_column(gg))?;
        task.generator.backward(&g_cache, &through_d)?
    } else {
        GradBundle::zeros(task.generator.num_params())
    };
    Ok(GanStepOut { disc_loss, gen_loss, d_grads, g_grads })
}

/// Trains `task` in place and returns the full trace.
///
/// A non-finite loss or gradient ends the run early with a record flagged as
/// diverged; configuration problems are returned as errors.
pub fn train_gan(task: &mut GanTask, config: &TrainConfig) -> Result<RunRecord> {
    config.validate()?;
    task.validate()?;
    let started = Instant::now();
    let ideal = task.variant.ideal_disc_loss();
    let mut rate = Rate::new(config, ideal)?;
    let mut opt_d = config.optimizer.build(config.lr_d, task.discriminator.num_params())?;
    let mut opt_g = config.optimizer.build(config.lr_g, task.generator.num_params())?;
    let clip = config.clip_bound();
    let sets = GanEvalSets::new(task, config.eval_samples, config.seed);
    let mut batch_rng = rng_for(config.seed, stream::BATCHES);
    let mut noise_rng = rng_for(config.seed, stream::NOISE);
    let mut tracker = Tracker::new(Direction::Min, ideal, config.total_steps);
    let eval_steps = config.eval_steps();
    let mut next_eval = eval_steps.iter().peekable();

    for step in 0..config.total_steps {
        let real = task.data.sample(config.batch_size, &mut batch_rng);
        let z = sample_noise(config.batch_size, task.noise_dim, &mut noise_rng);
        let outcome = gan_step(task, config, &mut rate, &mut opt_d, &mut opt_g, clip, &real, &z, step);
        match outcome {
            Ok(rec) => tracker.steps.push(rec),
            Err(e) if is_divergence(&e) => {
                tracker.diverged_at = Some(step);
                break;
            }
            Err(e) => return Err(e),
        }
        if next_eval.peek() == Some(&&(step + 1)) {
            next_eval.next();
            match evaluate_gan(task, &sets, step + 1) {
                Ok(e) => {
                    if config.reset_ema_on_eval {
                        rate.reset(e.full_disc_loss)?;
                    }
                    tracker.eval(e, || vec![task.generator.params().to_vec()]);
                }
                Err(e) if is_divergence(&e) => {
                    tracker.diverged_at = Some(step + 1);
                    break;
                }
                Err(e) => return Err(e),
            }
        }
    }
    Ok(tracker.finish(started))
}

#[allow(clippy::too_many_arguments)]
fn gan_step(
    task: &mut GanTask,
    config: &TrainConfig,
    rate: &mut Rate,
    opt_d: &mut Optimizer,
    opt_g: &mut Optimizer,
    clip: Option<ClipBound>,
    real: &Array2<f64>,
    z: &Array2<f64>,
    step: u64,
) -> Result<StepRecord> {
    let simultaneous = config.update_style == UpdateStyle::Simultaneous;
    let out = gan_gradients(task, real, z, simultaneous)?;
    let (estimate, m_d, m_g) = rate.observe(out.disc_loss, step)?;
    opt_d.step(task.discriminator.params_mut(), out.d_grads.as_slice(), m_d)?;
    if let Some(c) = clip {
        clip_weights(task.discriminator.params_mut(), c);
    }
    let g_grads = if simultaneous {
        out.g_grads
    } else {
        gan_gradients(task, real, z, true)?.g_grads
    };
    opt_g.step(task.generator.params_mut(), g_grads.as_slice(), m_g)?;
    Ok(StepRecord {
        step,
        disc_loss: out.disc_loss,
        ema_estimate: estimate,
        gap: metrics::optimality_gap(estimate, task.variant.ideal_disc_loss()),
        multiplier: m_d,
        gen_loss: out.gen_loss,
    })
}

// ---------------------------------------------------------------------------
// DANN
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DannTaskSpec {
    #[serde(default)]
    pub domains: DannDomains,
    pub feature_hidden: Vec<usize>,
    pub feature_dim: usize,
    pub label_hidden: Vec<usize>,
    pub disc_hidden: Vec<usize>,
    pub lambda: f64,
}

impl DannTaskSpec {
    pub fn new(lambda: f64) -> Self {
        Self {
            domains: DannDomains::default(),
            feature_hidden: vec![32],
            feature_dim: 8,
            label_hidden: vec![16],
            disc_hidden: vec![32],
            lambda,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DannTask {
    pub feature_extractor: DenseNet,
    pub label_predictor: DenseNet,
    pub discriminator: DenseNet,
    pub lambda: f64,
    pub domains: DannDomains,
}

impl DannTask {
    pub fn from_spec(spec: &DannTaskSpec, seed: u64) -> Result<Self> {
        use rand::Rng;
        spec.domains.validate()?;
        let f = NetSpec::mlp(2, &spec.feature_hidden, Activation::Relu, spec.feature_dim, Activation::Tanh);
        let y = NetSpec::mlp(spec.feature_dim, &spec.label_hidden, Activation::Relu, 1, Activation::Sigmoid);
        let d = NetSpec::mlp(spec.feature_dim, &spec.disc_hidden, Activation::Relu, 1, Activation::Sigmoid);
        let task = Self {
            feature_extractor: DenseNet::init(&f, rng_for(seed, stream::INIT_A).gen())?,
            label_predictor: DenseNet::init(&y, rng_for(seed, stream::INIT_B).gen())?,
            discriminator: DenseNet::init(&d, rng_for(seed, stream::INIT_C).gen())?,
            lambda: spec.lambda,
            domains: spec.domains,
        };
        task.validate()?;
        Ok(task)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        let fw = self.feature_extractor.output_width();
        if self.label_predictor.input_width() != fw || self.discriminator.input_width() != fw {
            return Err(Error::Config("feature width must match label predictor and discriminator inputs".into()));
        }
        if self.feature_extractor.input_width() != 2 {
            return Err(Error::Config("feature extractor input must be 2-D".into()));
        }
        Ok(())
    }

    /// Label-predictor probabilities for raw inputs.
    pub fn predict(&self, x: &Array2<f64>) -> Result<Vec<f64>> {
        Ok(column(&self.label_predictor.predict(&self.feature_extractor.predict(x)?)?))
    }

    pub fn accuracy(&self, x: &Array2<f64>, labels: &[f64]) -> Result<f64> {
        let p = self.predict(x)?;
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged { context: "label prediction", value: f64::NAN });
        }
        let hits = p.iter().zip(labels).filter(|(&p, &y)| (p > 0.5) == (y > 0.5)).count();
        Ok(hits as f64 / labels.len() as f64)
    }
}

struct DannEvalSets {
    source: Array2<f64>,
    target: Array2<f64>,
    val_x: Array2<f64>,
    val_y: Vec<f64>,
    test_x: Array2<f64>,
    test_y: Vec<f64>,
}

impl DannEvalSets {
    fn new(domains: &DannDomains, n: usize, seed: u64) -> Self {
        let mut tr = rng_for(seed, stream::EVAL_TRAIN);
        let (source, _) = domains.sample_source(n, &mut tr);
        let (target, _) = domains.sample_target(n, &mut tr);
        let (val_x, val_y) = domains.sample_target(n, &mut rng_for(seed, stream::EVAL_VAL));
        let (test_x, test_y) = domains.sample_target(n, &mut rng_for(seed, stream::EVAL_TEST));
        Self { source, target, val_x, val_y, test_x, test_y }
    }
}

fn evaluate_dann(task: &DannTask, sets: &DannEvalSets, v_star: f64, step: u64) -> Result<EvalRecord> {
    let ds = column(&task.discriminator.predict(&task.feature_extractor.predict(&sets.source)?)?);
    let dt = column(&task.discriminator.predict(&task.feature_extractor.predict(&sets.target)?)?);
    let full = losses::dann_disc_loss(DannOutputs { d_source: &ds, d_target: &dt, lambda: task.lambda })?;
    Ok(EvalRecord {
        step,
        metric: task.accuracy(&sets.val_x, &sets.val_y)?,
        test_metric: task.accuracy(&sets.test_x, &sets.test_y)?,
        full_disc_loss: full,
        gap: metrics::optimality_gap(full, v_star),
        gen_loss: f64::NAN,
        gen_gap: None,
    })
}

struct DannGrads {
    disc_loss: f64,
    label_loss: f64,
    f: GradBundle,
    y: GradBundle,
    d: GradBundle,
}

fn dann_gradients(task: &DannTask, xs: &Array2<f64>, ys: &[f64], xt: &Array2<f64>) -> Result<DannGrads> {
    let fs_cache = task.feature_extractor.forward(xs)?;
    let ft_cache = task.feature_extractor.forward(xt)?;
    let y_cache = task.label_predictor.forward(fs_cache.output())?;
    let ds_cache = task.discriminator.forward(fs_cache.output())?;
    let dt_cache = task.discriminator.forward(ft_cache.output())?;
    let probs = column(y_cache.output());
    let (ds, dt) = (column(ds_cache.output()), column(dt_cache.output()));
    let out = DannOutputs { d_source: &ds, d_target: &dt, lambda: task.lambda };
    let label_loss = losses::binary_cross_entropy(&probs, ys)?;
    let disc_loss = losses::dann_disc_loss(out)?;

    let (gs, gt) = losses::dann_disc_loss_grad(out)?;
    let (mut d, ds_in) = task.discriminator.backward_with_input(&ds_cache, &as_column(gs))?;
    let (d_t, dt_in) = task.discriminator.backward_with_input(&dt_cache, &as_column(gt))?;
    d.add_scaled(&d_t, 1.0);

    let gy = losses::binary_cross_entropy_grad(&probs, ys)?;
    let (y, y_in) = task.label_predictor.backward_with_input(&y_cache, &as_column(gy))?;

    // features minimise L_y - lambda * L_d
    let mut f = task.feature_extractor.backward(&fs_cache, &(y_in - &(ds_in * task.lambda)))?;
    if task.lambda != 0.0 {
        f.add_scaled(&task.feature_extractor.backward(&ft_cache, &(dt_in * -task.lambda))?, 1.0);
    }
    Ok(DannGrads { disc_loss, label_loss, f, y, d })
}

/// Trains a DANN task in place. The scheduler (if any) targets `v_star` and
/// only rescales the domain discriminator's rate.
pub fn train_dann(task: &mut DannTask, config: &TrainConfig, v_star: f64) -> Result<RunRecord> {
    config.validate()?;
    task.validate()?;
    if !(v_star > 0.0 && v_star <= 4f64.ln() + 1e-12) {
        return Err(Error::Config(format!("v_star must lie in (0, log 4], got {v_star}")));
    }
    let started = Instant::now();
    let mut rate = Rate::new(config, v_star)?;
    let mut opt_d = config.optimizer.build(config.lr_d, task.discriminator.num_params())?;
    let mut opt_f = config.optimizer.build(config.lr_g, task.feature_extractor.num_params())?;
    let mut opt_y = config.optimizer.build(config.lr_g, task.label_predictor.num_params())?;
    let clip = config.clip_bound();
    let sets = DannEvalSets::new(&task.domains, config.eval_samples, config.seed);
    let mut batch_rng = rng_for(config.seed, stream::BATCHES);
    let mut tracker = Tracker::new(Direction::Max, v_star, config.total_steps);
    let eval_steps = config.eval_steps();
    let mut next_eval = eval_steps.iter().peekable();

    for step in 0..config.total_steps {
        let (xs, ys) = task.domains.sample_source(config.batch_size, &mut batch_rng);
        let (xt, _) = task.domains.sample_target(config.batch_size, &mut batch_rng);
        let outcome = (|| -> Result<StepRecord> {
            let g = dann_gradients(task, &xs, &ys, &xt)?;
            let (estimate, m_d, m_g) = rate.observe(g.disc_loss, step)?;
            opt_d.step(task.discriminator.params_mut(), g.d.as_slice(), m_d)?;
            if let Some(c) = clip {
                clip_weights(task.discriminator.params_mut(), c);
            }
            let (gf, gy) = if config.update_style == UpdateStyle::Alternating {
                let again = dann_gradients(task, &xs, &ys, &xt)?;
                (again.f, again.y)
            } else {
                (g.f, g.y)
            };
            opt_f.step(task.feature_extractor.params_mut(), gf.as_slice(), m_g)?;
            opt_y.step(task.label_predictor.params_mut(), gy.as_slice(), m_g)?;
            Ok(StepRecord {
                step,
                disc_loss: g.disc_loss,
                ema_estimate: estimate,
                gap: metrics::optimality_gap(estimate, v_star),
                multiplier: m_d,
                gen_loss: g.label_loss,
            })
        })();
        match outcome {
            Ok(rec) => tracker.steps.push(rec),
            Err(e) if is_divergence(&e) => {
                tracker.diverged_at = Some(step);
                break;
            }
            Err(e) => return Err(e),
        }
        if next_eval.peek() == Some(&&(step + 1)) {
            next_eval.next();
            match evaluate_dann(task, &sets, v_star, step + 1) {
                Ok(e) => {
                    if config.reset_ema_on_eval {
                        rate.reset(e.full_disc_loss)?;
                    }
                    tracker.eval(e, || {
                        vec![task.feature_extractor.params().to_vec(), task.label_predictor.params().to_vec()]
                    });
                }
                Err(e) if is_divergence(&e) => {
                    tracker.diverged_at = Some(step + 1);
                    break;
                }
                Err(e) => return Err(e),
            }
        }
    }
    Ok(tracker.finish(started))
}

/// Accuracy on the target domain after restoring the best checkpoint of a
/// DANN run; used to check the early-stopping snapshot.
pub fn restore_dann_best(task: &mut DannTask, record: &RunRecord) -> Result<()> {
    if let [f, y] = record.best_params.as_slice() {
        task.feature_extractor.set_params(f)?;
        task.label_predictor.set_params(y)?;
    }
    Ok(())
}

/// Restores the generator saved at the best checkpoint of a GAN run.
pub fn restore_gan_best(task: &mut GanTask, record: &RunRecord) -> Result<()> {
    if let [g] = record.best_params.as_slice() {
        task.generator.set_params(g)?;
    }
    Ok(())
}
