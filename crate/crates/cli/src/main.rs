//! `gapaware` — train adversarial nets with a gap-aware learning-rate
//! scheduler and run tuning, sensitivity, correlation and stability studies.
//!
//! Exit codes: 0 success, 1 configuration error, 2 every run diverged.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use gapaware::study::{self, ExperimentConfig, HyperParams, Outcome, SweepParam};

#[derive(Parser, Debug)]
#[command(name = "gapaware", version, about = "Gap-aware learning-rate scheduling for adversarial nets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train once with the config's training template.
    Train(Common),
    /// Paired random-search study with and without the scheduler.
    Tune(Common),
    /// Vary one scheduler parameter over a grid.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Scheduler parameter to vary: h_min, f_max, x_min or x_max.
        #[arg(long)]
        param: Option<String>,
        /// Comma-separated grid values.
        #[arg(long, value_delimiter = ',')]
        grid: Vec<f64>,
        /// Seeds per grid value.
        #[arg(long)]
        seeds: Option<usize>,
    },
    /// Rank correlation between final optimality gap and quality metric.
    Correlate(Common),
    /// Many seeds at fixed hyperparameters, per arm.
    Stability {
        #[command(flatten)]
        common: Common,
        /// JSON file holding the hyperparameters to evaluate.
        #[arg(long)]
        hparams: Option<PathBuf>,
        /// Number of seeds per arm.
        #[arg(long)]
        seeds: Option<usize>,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Args, Debug)]
struct Common {
    /// Experiment configuration (JSON).
    #[arg(long, short)]
    config: PathBuf,
    /// Output directory (overrides `output`).
    #[arg(long, short)]
    output: Option<PathBuf>,
    /// Seed of the training run and base seed of studies.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, allow_hyphen_values = true)]
    lr_g: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    lr_d: Option<f64>,
    /// Turn the gap-aware scheduler of the training template on or off.
    #[arg(long, value_enum)]
    scheduler: Option<Switch>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    eval_period: Option<u64>,
    #[arg(long)]
    n_trials: Option<usize>,
    #[arg(long)]
    seeds_per_trial: Option<usize>,
    /// Worker threads for studies (1 = sequential).
    #[arg(long)]
    parallelism: Option<usize>,
    /// Arbitrary `dotted.key=value` overrides of the config document.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Common {
    fn overrides(&self) -> Result<Vec<(String, String)>> {
        let mut out = Vec::new();
        let mut push = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                out.push((k.to_string(), v));
            }
        };
        push("output", self.output.as_ref().map(|p| serde_json::Value::from(p.to_string_lossy()).to_string()));
        push("train.seed", self.seed.map(|s| s.to_string()));
        push("base_seed", self.seed.map(|s| s.to_string()));
        push("train.lr_g", self.lr_g.map(|x| x.to_string()));
        push("train.lr_d", self.lr_d.map(|x| x.to_string()));
        push("train.total_steps", self.steps.map(|x| x.to_string()));
        push("train.batch_size", self.batch_size.map(|x| x.to_string()));
        push("train.eval_period", self.eval_period.map(|x| x.to_string()));
        push("n_trials", self.n_trials.map(|x| x.to_string()));
        push("seeds_per_trial", self.seeds_per_trial.map(|x| x.to_string()));
        push("parallelism", self.parallelism.map(|x| x.to_string()));
        for kv in &self.set {
            let (k, v) = kv.split_once('=').with_context(|| format!("--set expects KEY=VALUE, got '{kv}'"))?;
            out.push((k.trim().to_string(), v.trim().to_string()));
        }
        Ok(out)
    }

    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(&self.config, &self.overrides()?)?;
        match self.scheduler {
            Some(Switch::On) => cfg.set_scheduler(true),
            Some(Switch::Off) => cfg.set_scheduler(false),
            None => {}
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Errors before any run starts are configuration errors.
struct ConfigError(anyhow::Error);

fn read_hparams(path: &Path) -> Result<HyperParams> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing hyperparameters in {}", path.display()))
}

fn run(cli: Cli) -> std::result::Result<Outcome, ConfigError> {
    let cfg_err = ConfigError;
    match cli.command {
        Command::Train(c) => {
            let cfg = c.load().map_err(cfg_err)?;
            let (rec, outcome) = study::cmd_train(&cfg).map_err(|e| ConfigError(e.into()))?;
            let s = &rec.summary;
            println!(
                "train: best_metric={} final_gap={} diverged={} -> {}",
                s.best_metric,
                s.final_gap,
                s.diverged,
                cfg.output.display()
            );
            Ok(outcome)
        }
        Command::Tune(c) => {
            let cfg = c.load().map_err(cfg_err)?;
            let (res, outcome) = study::cmd_tune(&cfg).map_err(|e| ConfigError(e.into()))?;
            for arm in &res.arms {
                let pts: Vec<String> = arm.curve.points.iter().map(|p| format!("k={}:{:.6}", p.k, p.mean)).collect();
                println!("tune[{}]: {}", arm.arm, pts.join(" "));
            }
            Ok(outcome)
        }
        Command::Sweep { common, param, grid, seeds } => {
            let cfg = common.load().map_err(cfg_err)?;
            let sweep = cfg.sweep.clone();
            let param: SweepParam = match param.or_else(|| sweep.as_ref().map(|s| s.param.clone())) {
                Some(p) => p.parse().map_err(|e: gapaware::Error| ConfigError(e.into()))?,
                None => return Err(ConfigError(anyhow::anyhow!("sweep needs --param or a `sweep` section"))),
            };
            let grid = if grid.is_empty() { sweep.as_ref().map(|s| s.grid.clone()).unwrap_or_default() } else { grid };
            let seeds = seeds.or(sweep.map(|s| s.seeds)).unwrap_or(5);
            let (rows, outcome) = study::cmd_sweep(&cfg, param, &grid, seeds).map_err(|e| ConfigError(e.into()))?;
            for r in rows {
                println!("sweep[{}={}]: mean={} stderr={}", param.name(), r.value, r.mean_metric, r.stderr);
            }
            Ok(outcome)
        }
        Command::Correlate(c) => {
            let cfg = c.load().map_err(cfg_err)?;
            let (report, outcome) = study::cmd_correlate(&cfg).map_err(|e| ConfigError(e.into()))?;
            match report.correlation {
                Some(corr) => println!("correlate: rho={} p={} n={}", corr.rho, corr.p_value, corr.n),
                None => println!("correlate: {:?} (n_used={})", report.status, report.n_used),
            }
            Ok(outcome)
        }
        Command::Stability { common, hparams, seeds } => {
            let mut cfg = common.load().map_err(cfg_err)?;
            if let Some(p) = hparams {
                cfg.stability.hparams = Some(read_hparams(&p).map_err(cfg_err)?);
            }
            if let Some(n) = seeds {
                cfg.stability.seeds = n;
            }
            let (res, outcome) = study::cmd_stability(&cfg).map_err(|e| ConfigError(e.into()))?;
            for a in &res.arms {
                if let (Some(m), Some(g)) = (a.metric, a.gap) {
                    println!("stability[{}]: metric={}±{} gap={}±{}", a.name, m.mean, m.stderr, g.mean, g.stderr);
                }
            }
            if let Some(c) = &res.comparison {
                if let Some(t) = c.gap_t_test {
                    println!("stability: gap t={} p(two-sided)={}", t.t, t.p_two_sided);
                }
            }
            Ok(outcome)
        }
    }
}

fn main() -> ExitCode {
    // Usage errors are configuration errors: exit 2 is reserved for divergence.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(outcome) => ExitCode::from(outcome.exit_code() as u8),
        Err(ConfigError(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
