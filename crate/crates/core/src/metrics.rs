//! Quality and study statistics: optimality gaps, Fréchet distance between
//! fitted Gaussians, Spearman rank correlation, best-of-k bootstrap curves and
//! the two-sample tests used to compare scheduler arms.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, ContinuousCDF, DiscreteCDF, StudentsT};

use crate::error::{Error, Result};
use crate::losses::GanVariant;
use crate::parallel;

/// `|v_hat - v_star|`
pub fn optimality_gap(v_hat: f64, v_star: f64) -> f64 {
    (v_hat - v_star).abs()
}

/// Distance between the generator's loss and its ideal-net value.
pub fn generator_gap(gen_loss_hat: f64, variant: GanVariant) -> f64 {
    (gen_loss_hat - variant.ideal_gen_loss()).abs()
}

/// Whether smaller or larger values of a metric are better.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Min,
    Max,
}

impl Direction {
    pub fn is_better(self, candidate: f64, incumbent: f64) -> bool {
        match self {
            Direction::Min => candidate < incumbent,
            Direction::Max => candidate > incumbent,
        }
    }

    /// Value assigned to failed runs.
    pub fn worst(self) -> f64 {
        match self {
            Direction::Min => f64::INFINITY,
            Direction::Max => f64::NEG_INFINITY,
        }
    }

    pub fn best_of(self, xs: impl IntoIterator<Item = f64>) -> f64 {
        xs.into_iter()
            .fold(self.worst(), |b, x| if self.is_better(x, b) { x } else { b })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSummary {
    pub mean: Array1<f64>,
    pub covariance: Array2<f64>,
}

impl GaussianSummary {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn validate(&self) -> Result<()> {
        let d = self.dim();
        if self.covariance.dim() != (d, d) {
            return Err(Error::Shape {
                expected: format!("{d}x{d} covariance"),
                got: format!("{:?}", self.covariance.dim()),
            });
        }
        let scale = self.covariance.iter().fold(1.0f64, |m, x| m.max(x.abs()));
        for i in 0..d {
            for j in 0..i {
                if (self.covariance[[i, j]] - self.covariance[[j, i]]).abs() > 1e-12 * scale {
                    return Err(Error::InvalidParam("covariance is not symmetric".into()));
                }
            }
        }
        let min_eig = symmetric_eigenvalues(&self.covariance).into_iter().fold(f64::INFINITY, f64::min);
        if min_eig < -1e-12 * scale {
            return Err(Error::InvalidParam(format!(
                "covariance is not positive semidefinite (eigenvalue {min_eig})"
            )));
        }
        Ok(())
    }
}

fn to_dmatrix(m: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[[i, j]])
}

fn symmetric_eigenvalues(m: &Array2<f64>) -> Vec<f64> {
    SymmetricEigen::new(to_dmatrix(m)).eigenvalues.iter().copied().collect()
}

/// Sample mean and unbiased (symmetrized) sample covariance of the rows.
pub fn fit_gaussian(samples: &Array2<f64>) -> Result<GaussianSummary> {
    let n = samples.nrows();
    if n < 2 {
        return Err(Error::InvalidParam(format!("need at least 2 samples, got {n}")));
    }
    let mean = samples.mean_axis(Axis(0)).expect("n >= 2");
    let centered = samples - &mean;
    let mut cov = centered.t().dot(&centered) / (n as f64 - 1.0);
    let d = cov.nrows();
    for i in 0..d {
        for j in 0..i {
            let s = 0.5 * (cov[[i, j]] + cov[[j, i]]);
            cov[[i, j]] = s;
            cov[[j, i]] = s;
        }
    }
    Ok(GaussianSummary { mean, covariance: cov })
}

/// `|mu_a - mu_b|^2 + tr(S_a + S_b - 2 (S_a S_b)^(1/2))`, clamped at zero.
pub fn frechet_gaussian_distance(a: &GaussianSummary, b: &GaussianSummary) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::Shape {
            expected: format!("dimension {}", a.dim()),
            got: b.dim().to_string(),
        });
    }
    a.validate()?;
    b.validate()?;
    let diff = &a.mean - &b.mean;
    let mean_term = diff.dot(&diff);
    let trace_sum = a.covariance.diag().sum() + b.covariance.diag().sum();
    let cross = trace_sqrt_product(&a.covariance, &b.covariance);
    Ok((mean_term + trace_sum - 2.0 * cross).max(0.0))
}

/// `tr((A B)^(1/2))` for symmetric PSD `A`, `B`.
fn trace_sqrt_product(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    if a.nrows() == 2 {
        // eigenvalues l1, l2 >= 0 of AB: (sqrt l1 + sqrt l2)^2 = tr(AB) + 2 sqrt(det A det B)
        let tr = a.dot(b).diag().sum();
        let det = |m: &Array2<f64>| m[[0, 0]] * m[[1, 1]] - m[[0, 1]] * m[[1, 0]];
        let det_prod = (det(a) * det(b)).max(0.0);
        return (tr + 2.0 * det_prod.sqrt()).max(0.0).sqrt();
    }
    let eig = SymmetricEigen::new(to_dmatrix(a));
    let sqrt_vals = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let sqrt_a = &eig.eigenvectors * DMatrix::from_diagonal(&sqrt_vals) * eig.eigenvectors.transpose();
    let m = &sqrt_a * to_dmatrix(b) * &sqrt_a;
    let m = (&m + m.transpose()) * 0.5;
    SymmetricEigen::new(m).eigenvalues.iter().map(|l| l.max(0.0).sqrt()).sum()
}

/// Fits Gaussians to both sample sets and returns their Fréchet distance.
pub fn frechet_distance_of_samples(x: &Array2<f64>, y: &Array2<f64>) -> Result<f64> {
    frechet_gaussian_distance(&fit_gaussian(x)?, &fit_gaussian(y)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub rho: f64,
    pub p_value: f64,
    pub n: usize,
}

/// Average ranks (1-based); ties share the mean of their positions.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&i, &j| xs[i].total_cmp(&xs[j]));
    let mut ranks = vec![0.0; xs.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && xs[idx[end]] == xs[idx[start]] {
            end += 1;
        }
        let r = (start + end + 1) as f64 / 2.0;
        for &i in &idx[start..end] {
            ranks[i] = r;
        }
        start = end;
    }
    ranks
}

fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        None
    } else {
        Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
    }
}

/// Spearman's rank correlation with a two-sided p-value from the
/// t-approximation with `n - 2` degrees of freedom.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<Correlation> {
    if xs.len() != ys.len() {
        return Err(Error::Shape {
            expected: format!("{} values", xs.len()),
            got: ys.len().to_string(),
        });
    }
    let n = xs.len();
    if n < 3 {
        return Err(Error::Undefined(format!("rank correlation needs at least 3 pairs, got {n}")));
    }
    if xs.iter().chain(ys).any(|v| v.is_nan()) {
        return Err(Error::Undefined("rank correlation input contains NaN".into()));
    }
    let rho = pearson(&average_ranks(xs), &average_ranks(ys))
        .ok_or_else(|| Error::Undefined("rank correlation of a constant vector".into()))?;
    let df = (n - 2) as f64;
    let p_value = if rho.abs() >= 1.0 {
        0.0
    } else {
        let t = rho * (df / (1.0 - rho * rho)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).expect("df > 0");
        2.0 * (1.0 - dist.cdf(t.abs()))
    };
    Ok(Correlation { rho, p_value, n })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub k: usize,
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapCurve {
    pub points: Vec<CurvePoint>,
    pub n_boot: usize,
    pub confidence: f64,
}

pub const DEFAULT_N_BOOT: usize = 5000;
pub const DEFAULT_CONFIDENCE: f64 = 0.99;

impl BootstrapCurve {
    pub fn at(&self, k: usize) -> Option<&CurvePoint> {
        self.points.iter().find(|p| p.k == k)
    }

    /// Writes `k,mean,ci_low,ci_high`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["k", "mean", "ci_low", "ci_high"])?;
        for p in &self.points {
            w.write_record([p.k.to_string(), fmt_f64(p.mean), fmt_f64(p.ci_low), fmt_f64(p.ci_high)])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Shortest representation that round-trips; `inf`/`-inf`/`NaN` for
/// non-finite values.
pub fn fmt_f64(x: f64) -> String {
    format!("{x}")
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    if sorted.len() == 1 {
        return sorted[0];
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi || sorted[lo] == sorted[hi] {
        return sorted[lo];
    }
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Mean and central percentile interval of the best metric among `k`
/// with-replacement draws from `metrics`, for every budget `k`.
///
/// Each budget gets its own stream derived from `seed`, so the result does
/// not depend on evaluation order.
pub fn bootstrap_best_curve(
    metrics: &[f64],
    budgets: &[usize],
    n_boot: usize,
    confidence: f64,
    direction: Direction,
    seed: u64,
) -> Result<BootstrapCurve> {
    if metrics.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if n_boot == 0 || budgets.contains(&0) {
        return Err(Error::InvalidParam("budgets and n_boot must be >= 1".into()));
    }
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(Error::InvalidParam(format!("confidence must lie in (0, 1), got {confidence}")));
    }
    let tail = (1.0 - confidence) / 2.0;
    let points = parallel::map_indexed(budgets.to_vec(), None, |_, k| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(k as u64);
        let mut bests: Vec<f64> = (0..n_boot)
            .map(|_| direction.best_of((0..k).map(|_| metrics[rng.gen_range(0..metrics.len())])))
            .collect();
        // centred on the first draw so a constant sample has an exact mean
        let anchor = bests[0];
        let mean = if anchor.is_finite() {
            anchor + bests.iter().map(|b| b - anchor).sum::<f64>() / n_boot as f64
        } else {
            bests.iter().sum::<f64>() / n_boot as f64
        };
        bests.sort_by(f64::total_cmp);
        CurvePoint {
            k,
            mean,
            ci_low: quantile_sorted(&bests, tail),
            ci_high: quantile_sorted(&bests, 1.0 - tail),
        }
    });
    Ok(BootstrapCurve { points, n_boot, confidence })
}

/// Mean, standard error and quartiles of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub stderr: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

pub fn summarize(xs: &[f64]) -> Result<Summary> {
    if xs.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let n = xs.len();
    let mean = xs.iter().sum::<f64>() / n as f64;
    let stderr = if n > 1 {
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n as f64 - 1.0);
        (var / n as f64).sqrt()
    } else {
        0.0
    };
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(Summary {
        n,
        mean,
        stderr,
        q1: quantile_sorted(&sorted, 0.25),
        median: quantile_sorted(&sorted, 0.5),
        q3: quantile_sorted(&sorted, 0.75),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub df: f64,
    /// Two-sided p-value.
    pub p_two_sided: f64,
    /// p-value for the alternative `mean(a) < mean(b)`.
    pub p_less: f64,
}

/// Welch's two-sample t-test.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::Undefined("t-test needs at least two values per sample".into()));
    }
    if a.iter().chain(b).any(|x| !x.is_finite()) {
        return Err(Error::Undefined("t-test input contains non-finite values".into()));
    }
    let var = |xs: &[f64]| {
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        (m, xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0))
    };
    let ((ma, va), (mb, vb)) = (var(a), var(b));
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let se2 = va / na + vb / nb;
    if se2 == 0.0 {
        return Err(Error::Undefined("t-test with zero variance in both samples".into()));
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / ((va / na).powi(2) / (na - 1.0) + (vb / nb).powi(2) / (nb - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::Undefined(e.to_string()))?;
    Ok(TTest {
        t,
        df,
        p_two_sided: 2.0 * (1.0 - dist.cdf(t.abs())),
        p_less: dist.cdf(t),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignTest {
    /// Pairs where the first sample is strictly smaller.
    pub wins: usize,
    pub losses: usize,
    pub ties: usize,
    /// One-sided p-value for "first sample tends to be smaller".
    pub p_value: f64,
}

/// Paired sign test; ties are dropped.
pub fn sign_test(a: &[f64], b: &[f64]) -> Result<SignTest> {
    if a.len() != b.len() {
        return Err(Error::Shape {
            expected: format!("{} pairs", a.len()),
            got: b.len().to_string(),
        });
    }
    let (mut wins, mut losses, mut ties) = (0, 0, 0);
    for (x, y) in a.iter().zip(b) {
        match x.partial_cmp(y) {
            Some(std::cmp::Ordering::Less) => wins += 1,
            Some(std::cmp::Ordering::Greater) => losses += 1,
            _ => ties += 1,
        }
    }
    let n = wins + losses;
    let p_value = if n == 0 {
        1.0
    } else {
        let dist = Binomial::new(0.5, n as u64).expect("valid binomial");
        // P(X >= wins)
        if wins == 0 {
            1.0
        } else {
            1.0 - dist.cdf(wins as u64 - 1)
        }
    };
    Ok(SignTest { wins, losses, ties, p_value })
}

/// Writes rows of `(label, value)` pairs as a CSV with the given header.
pub(crate) fn write_rows<P: AsRef<Path>>(path: P, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn write_json<P: AsRef<Path>, T: Serialize>(path: P, value: &T) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    Ok(())
}
