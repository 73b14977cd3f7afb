//! Acceptance suite: one test per criterion, each printing a single
//! `criterion N: PASS|FAIL` line with its evidence and runtime.
//!
//! Criteria run one at a time (a process-wide lock) so each runtime is
//! measured without competing for the CPU.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use gapaware::losses::{self, DannOutputs, DiscBatchOutputs};
use gapaware::metrics::{self, Direction};
use gapaware::nn::{finite_diff_gradient, Activation, DenseNet, NetSpec};
use gapaware::optim::{clip_weights, AdamState, ClipBound, SgdState};
use gapaware::sched::{decrease_multiplier, increase_multiplier, DEFAULT_EMA_DECAY};
use gapaware::study::{self, Arm, ExperimentConfig, HyperParams, StabilityArm, TaskConfig};
use gapaware::{DecaySchedule, GanVariant, Interpolation, LossEstimator, SchedulerParams};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

/// Prints the criterion's verdict line, then fails the test if it failed.
fn verdict(n: u32, title: &str, checks: &[(String, bool)], elapsed: Duration, limit: Duration) {
    let in_time = elapsed < limit;
    let ok = in_time && checks.iter().all(|(_, c)| *c);
    let detail: Vec<String> = checks
        .iter()
        .map(|(d, c)| if *c { d.clone() } else { format!("FAILED[{d}]") })
        .collect();
    // Written to the raw stderr handle so the line shows up without `--nocapture`.
    let _ = writeln!(
        std::io::stderr(),
        "criterion {n}: {} - {title} | {} | {:.2}s (limit {}s)",
        if ok { "PASS" } else { "FAIL" },
        detail.join("; "),
        elapsed.as_secs_f64(),
        limit.as_secs()
    );
    assert!(ok, "criterion {n} failed: {}", detail.join("; "));
}

fn check(desc: impl Into<String>, ok: bool) -> (String, bool) {
    (desc.into(), ok)
}

fn workspace_file(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

fn load_config(rel: &str, out: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::load(&workspace_file(rel), &[]).expect("config loads");
    cfg.output = out.to_path_buf();
    cfg
}

const ALL_PARAMS: fn() -> Vec<(String, SchedulerParams)> = || {
    let mut out = Vec::new();
    for v in GanVariant::ALL {
        for interp in [Interpolation::Exponential, Interpolation::Linear] {
            out.push((format!("{v}/{interp:?}"), SchedulerParams { interpolation: interp, ..SchedulerParams::default_for(v) }));
        }
    }
    out
};

fn boundary_checks(params: &[(String, SchedulerParams)]) -> Vec<(String, bool)> {
    let mut checks = Vec::new();
    for (name, p) in params {
        let expected_x = if p.ideal_loss == 0.0 { 0.1 } else { 0.1 * p.ideal_loss };
        let f0 = increase_multiplier(0.0, p).unwrap();
        let fx = increase_multiplier(p.x_max, p).unwrap();
        let h0 = decrease_multiplier(0.0, p).unwrap();
        let hx = decrease_multiplier(p.x_min, p).unwrap();
        let ok = (f0 - 1.0).abs() <= 1e-12
            && (fx - 2.0).abs() <= 1e-12
            && (h0 - 1.0).abs() <= 1e-12
            && (hx - 0.1).abs() <= 1e-12
            && p.h_min == 0.1
            && p.f_max == 2.0
            && (p.x_min - expected_x).abs() <= 1e-15
            && (p.x_max - expected_x).abs() <= 1e-15;
        checks.push(check(format!("{name} f(0)={f0} f(x_max)={fx} h(0)={h0} h(x_min)={hx}"), ok));
    }
    checks
}

fn bounds_and_monotonicity(params: SchedulerParams, seed: u64) -> (usize, usize, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut out_of_range, mut non_monotone) = (0, 0);
    let n = 100_000;
    for _ in 0..n {
        // gaps spanning 10 orders of magnitude
        let x = 10f64.powf(rng.gen_range(-8.0..2.0));
        let y = 10f64.powf(rng.gen_range(-8.0..2.0));
        let (fx, fy) = (increase_multiplier(x, &params).unwrap(), increase_multiplier(y, &params).unwrap());
        let (hx, hy) = (decrease_multiplier(x, &params).unwrap(), decrease_multiplier(y, &params).unwrap());
        for m in [fx, fy, hx, hy] {
            if !(params.h_min..=params.f_max).contains(&m) {
                out_of_range += 1;
            }
        }
        if !(params.h_min <= hx && hx <= 1.0 && 1.0 <= fx && fx <= params.f_max) {
            out_of_range += 1;
        }
        let (lo, hi) = if x <= y { (x, y) } else { (y, x) };
        let (f_lo, f_hi) = (increase_multiplier(lo, &params).unwrap(), increase_multiplier(hi, &params).unwrap());
        let (h_lo, h_hi) = (decrease_multiplier(lo, &params).unwrap(), decrease_multiplier(hi, &params).unwrap());
        if f_lo > f_hi || h_lo < h_hi {
            non_monotone += 1;
        }
    }
    (n, out_of_range, non_monotone)
}

#[test]
fn criterion_01_scheduler_boundary_values() {
    let _g = serial();
    let t = Instant::now();
    let params: Vec<_> = ALL_PARAMS().into_iter().filter(|(_, p)| p.interpolation == Interpolation::Exponential).collect();
    let checks = boundary_checks(&params);
    verdict(1, "scheduler boundary values exact", &checks, t.elapsed(), Duration::from_secs(1));
}

#[test]
fn criterion_02_multiplier_bounds_and_monotonicity() {
    let _g = serial();
    let t = Instant::now();
    let mut checks = Vec::new();
    for interp in [Interpolation::Exponential, Interpolation::Linear] {
        let p = SchedulerParams { interpolation: interp, ..SchedulerParams::default_for(GanVariant::NonSaturating) };
        let (n, bad, non_mono) = bounds_and_monotonicity(p, 2);
        checks.push(check(format!("{interp:?}: {n} gaps, {bad} out of [h_min,f_max], {non_mono} monotonicity violations"), bad == 0 && non_mono == 0));
    }
    verdict(2, "multiplier bounds and monotonicity", &checks, t.elapsed(), Duration::from_secs(5));
}

#[test]
fn criterion_03_ideal_loss_constants() {
    let _g = serial();
    let t = Instant::now();
    let log4 = 4f64.ln();
    let log2 = 2f64.ln();
    let checks = vec![
        check("standard D: log 4", GanVariant::Standard.ideal_disc_loss() == log4),
        check("nsgan D: log 4", GanVariant::NonSaturating.ideal_disc_loss() == log4),
        check("wgan D: 0", GanVariant::Wasserstein.ideal_disc_loss() == 0.0),
        check("lsgan D: 0.5", GanVariant::LeastSquares.ideal_disc_loss() == 0.5),
        check("nsgan G: log 2", GanVariant::NonSaturating.ideal_gen_loss() == log2),
        // the constants are the losses of a discriminator that outputs 1/2 everywhere
        check(
            "constants equal losses at D = 1/2",
            [GanVariant::Standard, GanVariant::NonSaturating, GanVariant::LeastSquares].iter().all(|&v| {
                let half = [0.5; 7];
                let d = losses::disc_loss(v, DiscBatchOutputs { d_real: &half, d_fake: &half }).unwrap();
                let g = losses::gen_loss(v, &half).unwrap();
                (d - v.ideal_disc_loss()).abs() < 1e-15 && (g - v.ideal_gen_loss()).abs() < 1e-15
            }),
        ),
    ];
    verdict(3, "ideal-loss constants", &checks, t.elapsed(), Duration::from_secs(1));
}

#[test]
fn criterion_04_ema_geometric_convergence() {
    let _g = serial();
    let t = Instant::now();
    let alpha = DEFAULT_EMA_DECAY;
    let mut checks = Vec::new();
    // Pure geometric decay is measured relative to the remaining deviation, so
    // the constant input must not swamp the deviation's last bits.
    for (initial, v) in [(1.0, 0.0), (-3.7, 0.0), (4f64.ln(), 0.0), (1e9, 4f64.ln()), (-2e8, 0.5)] {
        let mut est = LossEstimator::new(initial, alpha).unwrap();
        let d0 = initial - v;
        let mut worst_step: f64 = 0.0;
        let mut worst_closed: f64 = 0.0;
        let mut prev = d0;
        for n in 1..=200 {
            let d = est.update(v).unwrap() - v;
            worst_step = worst_step.max(((d / prev) - alpha).abs() / alpha);
            worst_closed = worst_closed.max((d - alpha.powi(n) * d0).abs() / (alpha.powi(n) * d0).abs());
            prev = d;
        }
        checks.push(check(
            format!("V0={initial} v={v}: per-step rel err {worst_step:.1e}, closed-form rel err {worst_closed:.1e}"),
            worst_step <= 1e-12 && worst_closed <= 1e-12,
        ));
    }
    verdict(4, "EMA geometric convergence", &checks, t.elapsed(), Duration::from_secs(1));
}

#[derive(Clone, Copy, Debug)]
enum LossKind {
    Disc(GanVariant),
    Gen(GanVariant),
    Dann,
    Bce,
}

fn random_activation(rng: &mut ChaCha8Rng) -> Activation {
    match rng.gen_range(0..5) {
        0 => Activation::Relu,
        1 => Activation::LEAKY,
        2 => Activation::Tanh,
        3 => Activation::Sigmoid,
        _ => Activation::Identity,
    }
}

/// Loss of a column of outputs and its gradient with respect to them.
fn loss_and_grad(kind: LossKind, out: &[f64], labels: &[f64]) -> (f64, Vec<f64>) {
    let half = out.len() / 2;
    let (a, b) = out.split_at(half);
    match kind {
        LossKind::Disc(v) => {
            let o = DiscBatchOutputs { d_real: a, d_fake: b };
            let (ga, gb) = losses::disc_loss_grad(v, o).unwrap();
            (losses::disc_loss(v, o).unwrap(), [ga, gb].concat())
        }
        LossKind::Gen(v) => (losses::gen_loss(v, out).unwrap(), losses::gen_loss_grad(v, out).unwrap()),
        LossKind::Dann => {
            let o = DannOutputs { d_source: a, d_target: b, lambda: 0.5 };
            let (ga, gb) = losses::dann_disc_loss_grad(o).unwrap();
            (losses::dann_disc_loss(o).unwrap(), [ga, gb].concat())
        }
        LossKind::Bce => (
            losses::binary_cross_entropy(out, labels).unwrap(),
            losses::binary_cross_entropy_grad(out, labels).unwrap(),
        ),
    }
}

fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = analytic.iter().chain(numeric).fold(0.0f64, |m, x| m.max(x.abs())).max(1e-12);
    analytic.iter().zip(numeric).fold(0.0f64, |m, (a, n)| m.max((a - n).abs())) / scale
}

#[test]
fn criterion_05_gradient_correctness() {
    let _g = serial();
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let kinds: Vec<LossKind> = GanVariant::ALL
        .iter()
        .flat_map(|&v| [LossKind::Disc(v), LossKind::Gen(v)])
        .chain([LossKind::Dann, LossKind::Bce])
        .collect();
    let mut worst_param: f64 = 0.0;
    let mut worst_input: f64 = 0.0;
    let mut triples = 0;
    for _ in 0..3 {
        for &kind in &kinds {
            let probabilities = match kind {
                LossKind::Disc(v) | LossKind::Gen(v) => v.uses_probabilities(),
                LossKind::Dann | LossKind::Bce => true,
            };
            let input = rng.gen_range(1..5);
            let hidden: Vec<usize> = (0..rng.gen_range(1..3)).map(|_| rng.gen_range(2..7)).collect();
            let mut layers: Vec<(usize, Activation)> = hidden.iter().map(|&w| (w, random_activation(&mut rng))).collect();
            layers.push((1, if probabilities { Activation::Sigmoid } else { Activation::Identity }));
            let spec = NetSpec { input, layers };
            let mut net = DenseNet::init(&spec, rng.gen()).unwrap();
            // Random biases too: zero biases put ReLU preactivations exactly on
            // the kink whenever a whole upstream layer is inactive.
            for p in net.params_mut() {
                *p = rng.gen_range(-1.0..1.0);
            }
            let rows = 2 * rng.gen_range(2..5);
            let batch = Array2::from_shape_simple_fn((rows, input), || rng.gen_range(-1.5..1.5));
            let labels: Vec<f64> = (0..rows).map(|i| (i % 2) as f64).collect();

            let cache = net.forward(&batch).unwrap();
            let out: Vec<f64> = cache.output().column(0).to_vec();
            let (_, g) = loss_and_grad(kind, &out, &labels);
            let g = Array2::from_shape_vec((rows, 1), g).unwrap();
            let (analytic, input_grad) = net.backward_with_input(&cache, &g).unwrap();
            let loss_of = |o: &Array2<f64>| loss_and_grad(kind, &o.column(0).to_vec(), &labels).0;
            let numeric = finite_diff_gradient(&net, &batch, loss_of, 1e-5).unwrap();
            worst_param = worst_param.max(max_rel_err(analytic.as_slice(), numeric.as_slice()));

            // input gradients (the path the generator and feature extractor use)
            let mut fd_input = Vec::with_capacity(rows * input);
            for i in 0..rows {
                for j in 0..input {
                    let mut up = batch.clone();
                    up[[i, j]] += 1e-5;
                    let mut down = batch.clone();
                    down[[i, j]] -= 1e-5;
                    fd_input.push((loss_of(&net.predict(&up).unwrap()) - loss_of(&net.predict(&down).unwrap())) / 2e-5);
                }
            }
            let analytic_input: Vec<f64> = input_grad.iter().copied().collect();
            worst_input = worst_input.max(max_rel_err(&analytic_input, &fd_input));
            triples += 1;
        }
    }
    let checks = vec![
        check(format!("{triples} (net, loss, batch) triples"), triples >= 20),
        check(format!("max relative error, parameters {worst_param:.2e}"), worst_param < 1e-4),
        check(format!("max relative error, inputs {worst_input:.2e}"), worst_input < 1e-4),
    ];
    verdict(5, "gradient correctness vs central differences", &checks, t.elapsed(), Duration::from_secs(30));
}

#[test]
fn criterion_06_optimizer_contracts() {
    let _g = serial();
    let t = Instant::now();
    // Adam: g = 1, lr = 1e-3, beta1 = 0.9 -> m_hat = v_hat = 1 at t = 1
    let mut adam = AdamState::new(1e-3, 0.9, 1).unwrap();
    let mut w = [0.0];
    adam.step(&mut w, &[1.0], 1.0).unwrap();
    let displacement = -w[0];
    let expected = 1e-3 / (1.0 + 1e-8);

    // SGD: identical state, multipliers 1 and m
    let grads = [0.3, -1.7, 2.5, 0.0];
    let mut linear = true;
    for m in [0.1, 0.5, 2.0, 0.37] {
        let (mut a, mut b) = ([0.0; 4], [0.0; 4]);
        SgdState::new(0.05).unwrap().step(&mut a, &grads, 1.0).unwrap();
        SgdState::new(0.05).unwrap().step(&mut b, &grads, m).unwrap();
        linear &= a.iter().zip(&b).all(|(x, y)| *y == m * *x || (m * *x - *y).abs() <= f64::EPSILON * y.abs());
    }
    let mut sgd_exact = [1.0];
    SgdState::new(0.1).unwrap().step(&mut sgd_exact, &[1.0], 1.0).unwrap();

    // clipping
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut params: Vec<f64> = (0..10_000).map(|_| rng.gen_range(-5.0..5.0)).collect();
    let c = 0.01;
    clip_weights(&mut params, ClipBound::new(c).unwrap());
    let max_abs = params.iter().fold(0.0f64, |m, p| m.max(p.abs()));

    let checks = vec![
        check(format!("Adam first-step displacement {displacement:.12}"), (displacement - expected).abs() <= 1e-9),
        check("SGD displacement exactly linear in multiplier", linear),
        check(format!("SGD w=1,g=1,lr=0.1 -> {}", sgd_exact[0]), sgd_exact[0] == 0.9),
        check(format!("post-clip max |w| = {max_abs} <= {c}"), max_abs <= c),
    ];
    verdict(6, "optimizer contracts", &checks, t.elapsed(), Duration::from_secs(1));
}

#[test]
fn criterion_07_determinism() {
    let _g = serial();
    let t = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let config = workspace_file("configs/ring_toy.json");
    let run = |name: &str| {
        let out = dir.path().join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_gapaware"))
            .args(["train", "--config"])
            .arg(&config)
            .args(["--output"])
            .arg(&out)
            .args(["--seed", "7", "--scheduler", "on", "--parallelism", "1", "--steps", "1000"])
            .status()
            .expect("binary runs");
        (status.code(), std::fs::read(out.join("summary.json")).unwrap_or_default())
    };
    let (code_a, a) = run("a");
    let (code_b, b) = run("b");
    let checks = vec![
        check(format!("exit codes {code_a:?}/{code_b:?}"), code_a == Some(0) && code_b == Some(0)),
        check(format!("summary.json byte-identical ({} bytes)", a.len()), !a.is_empty() && a == b),
    ];
    verdict(7, "cmd_train determinism", &checks, t.elapsed(), Duration::from_secs(120));
}

#[test]
fn criterion_08_gap_reduction() {
    let _g = serial();
    let t = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = load_config("configs/ring_toy.json", dir.path());
    let hp = cfg.template_hparams();
    cfg.stability.hparams = Some(hp);
    cfg.stability.seeds = 20;
    cfg.stability.arms = [Arm::Scheduler, Arm::None]
        .into_iter()
        .map(|arm| StabilityArm { name: arm.name().into(), arm, hparams: None })
        .collect();
    let (res, _) = study::cmd_stability(&cfg).unwrap();
    let with = res.column("scheduler", |r| r.final_gap);
    let without = res.column("none", |r| r.final_gap);
    let med = |xs: &[f64]| metrics::summarize(xs).unwrap().median;
    let sign = metrics::sign_test(&with, &without).unwrap();
    let checks = vec![
        check(format!("{} paired seeds at shared lr {}", with.len(), hp.lr_d), with.len() >= 20 && hp.lr_g == hp.lr_d),
        check(format!("median gap with {:.4} <= without {:.4}", med(&with), med(&without)), med(&with) <= med(&without)),
        check(format!("sign test {}/{} wins, p = {:.2e}", sign.wins, sign.wins + sign.losses, sign.p_value), sign.p_value < 0.05),
    ];
    verdict(8, "gap reduction with scheduler (NSGAN, 8-mode ring)", &checks, t.elapsed(), Duration::from_secs(15 * 60));
}

#[test]
fn criterion_09_gap_quality_correlation() {
    let _g = serial();
    let t = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = load_config("configs/ring_toy.json", dir.path());
    // a moderate correlation needs about 100 runs to be detected reliably
    cfg.n_trials = 100;
    cfg.base_seed = 200;
    let (report, _) = study::cmd_correlate(&cfg).unwrap();
    let c = report.correlation;
    let checks = vec![
        check(format!("{} runs without scheduler ({} diverged, {} used)", report.n_runs, report.n_diverged, report.n_used), report.n_runs >= 50),
        check(
            format!("Spearman rho = {:.3}, p = {:.2e}", c.map_or(f64::NAN, |c| c.rho), c.map_or(f64::NAN, |c| c.p_value)),
            c.is_some_and(|c| c.rho > 0.0 && c.p_value < 0.05),
        ),
    ];
    verdict(9, "final gap vs final metric rank correlation", &checks, t.elapsed(), Duration::from_secs(45 * 60));
}

#[test]
fn criterion_10_tuning_curve_dominance() {
    let _g = serial();
    let t = Instant::now();
    // the bootstrap procedure itself, against enumerated expectations
    let n_boot = 5000;
    let single = metrics::bootstrap_best_curve(&[0.7], &[1, 5, 30], n_boot, 0.99, Direction::Min, 1).unwrap();
    let single_ok = single.points.iter().all(|p| p.mean == 0.7 && p.ci_low == 0.7 && p.ci_high == 0.7);
    let (a, b) = (1.0, 3.0);
    let two = metrics::bootstrap_best_curve(&[a, b], &[1, 2, 3, 5], n_boot, 0.99, Direction::Min, 2).unwrap();
    let mut two_ok = true;
    let mut two_detail = Vec::new();
    for p in &two.points {
        // best of k draws is b only when all k draws are b
        let q = 0.5f64.powi(p.k as i32);
        let expected = a + (b - a) * q;
        let sd = (b - a) * (q * (1.0 - q) / n_boot as f64).sqrt();
        let ci_high = if q > 0.005 { b } else { a };
        two_ok &= (p.mean - expected).abs() <= 4.0 * sd && p.ci_low == a && p.ci_high == ci_high;
        two_detail.push(format!("k={} {:.4}~{:.4}", p.k, p.mean, expected));
    }

    let dir = tempfile::tempdir().unwrap();
    let cfg = load_config("configs/ring_toy.json", dir.path());
    let (res, _) = study::cmd_tune(&cfg).unwrap();
    let with = res.arm(Arm::Scheduler).unwrap();
    let without = res.arm(Arm::None).unwrap();
    let mut checks = vec![
        check("single-value bootstrap is flat", single_ok),
        check(format!("two-value bootstrap {}", two_detail.join(" ")), two_ok),
        check(
            format!("{} paired trials, {} resamples, {:.0}% CI", cfg.n_trials, with.curve.n_boot, 100.0 * with.curve.confidence),
            cfg.n_trials == 30 && with.curve.n_boot == 5000 && with.curve.confidence == 0.99,
        ),
    ];
    for k in [1, 5, 10, 30] {
        let (s, n) = (with.curve.at(k).unwrap().mean, without.curve.at(k).unwrap().mean);
        checks.push(check(format!("k={k}: {s:.4} <= {n:.4}"), s <= n));
    }
    verdict(10, "tuning-curve dominance", &checks, t.elapsed(), Duration::from_secs(60 * 60));
}

#[test]
fn criterion_11_dann_direction() {
    let _g = serial();
    let t = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = load_config("configs/dann.json", dir.path());
    let base = cfg.template_hparams();
    let v_star = base.v_star.unwrap();

    // tune lambda > 0 for the scheduled model by validation accuracy on tuning seeds
    cfg.base_seed = 1_000;
    cfg.stability.seeds = 5;
    cfg.stability.arms = [0.01, 0.1, 1.0]
        .into_iter()
        .map(|l| StabilityArm {
            name: format!("lambda={l}"),
            arm: Arm::Scheduler,
            hparams: Some(HyperParams { lambda: Some(l), ..base }),
        })
        .collect();
    let (tuning, _) = study::cmd_stability(&cfg).unwrap();
    let best = tuning
        .arms
        .iter()
        .max_by(|x, y| x.metric.unwrap().mean.total_cmp(&y.metric.unwrap().mean))
        .unwrap();
    let lambda = best.hparams.lambda.unwrap();

    // fresh seeds for the comparison
    cfg.base_seed = 0;
    cfg.stability.seeds = 20;
    cfg.stability.arms = vec![
        StabilityArm { name: "dann".into(), arm: Arm::Scheduler, hparams: Some(HyperParams { lambda: Some(lambda), ..base }) },
        StabilityArm { name: "source_only".into(), arm: Arm::None, hparams: Some(HyperParams { lambda: Some(0.0), ..base }) },
    ];
    let (res, _) = study::cmd_stability(&cfg).unwrap();
    let dann = res.column("dann", |r| r.test_metric);
    let src = res.column("source_only", |r| r.test_metric);
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let tt = metrics::welch_t_test(&dann, &src).unwrap();
    let checks = vec![
        check(format!("tuned lambda = {lambda} (> 0), v* = {v_star:.4}"), lambda > 0.0),
        check(format!("{} seeds per arm", dann.len()), dann.len() >= 20 && src.len() >= 20),
        check(format!("target accuracy {:.4} > source-only {:.4}", mean(&dann), mean(&src)), mean(&dann) > mean(&src)),
        check(format!("t = {:.2}, two-sided p = {:.2e}", tt.t, tt.p_two_sided), tt.p_two_sided < 0.05 && tt.t > 0.0),
    ];
    verdict(11, "DANN with scheduler beats source-only", &checks, t.elapsed(), Duration::from_secs(15 * 60));
}

#[test]
fn criterion_12_baseline_scheduler_and_interpolations() {
    let _g = serial();
    let t = Instant::now();
    let decay = DecaySchedule::new(0.01, 1000).unwrap();
    let d0 = decay.multiplier(0).unwrap();
    let dt = decay.multiplier(1000).unwrap();
    let mut checks = vec![check(format!("decay: s=0 -> {d0}, s=T -> {dt}"), d0 == 1.0 && dt == 0.01)];
    let linear: Vec<_> = ALL_PARAMS().into_iter().filter(|(_, p)| p.interpolation == Interpolation::Linear).collect();
    checks.push(check(
        "linear interpolation boundary values",
        boundary_checks(&linear).iter().all(|(_, ok)| *ok),
    ));
    for interp in [Interpolation::Exponential, Interpolation::Linear] {
        let p = SchedulerParams { interpolation: interp, ..SchedulerParams::default_for(GanVariant::LeastSquares) };
        let (n, bad, non_mono) = bounds_and_monotonicity(p, 12);
        checks.push(check(format!("{interp:?}: {n} gaps, {bad} out of range, {non_mono} non-monotone"), bad == 0 && non_mono == 0));
    }

    // the comparison study runs end to end with every arm
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = load_config("configs/ring_toy.json", dir.path());
    if let TaskConfig::Gan(spec) = &mut cfg.task {
        spec.gen_hidden = vec![8];
        spec.disc_hidden = vec![8];
    }
    cfg.train.total_steps = 40;
    cfg.train.eval_period = 20;
    cfg.train.eval_samples = 128;
    cfg.train.batch_size = 32;
    cfg.n_trials = 2;
    cfg.n_boot = 200;
    cfg.arms = vec![Arm::Scheduler, Arm::Linear, Arm::Decay, Arm::None];
    let (res, _) = study::cmd_tune(&cfg).unwrap();
    let files_ok = cfg.arms.iter().all(|a| dir.path().join(format!("curve_{a}.csv")).exists());
    checks.push(check(format!("4-arm study: {} runs, curves written", res.rows.len()), res.rows.len() == 8 && files_ok));
    verdict(12, "decay baseline and interpolation modes", &checks, t.elapsed(), Duration::from_secs(5));
}
