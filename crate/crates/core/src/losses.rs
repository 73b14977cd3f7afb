//! Discriminator and generator losses for the four GAN families, the DANN
//! domain-discriminator risk, and the loss an ideal adversarial net attains.
//!
//! All losses are minimized and use batch means in place of expectations.
//! Probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]` before taking logs.

use std::f64::consts::LN_2;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PROB_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GanVariant {
    #[serde(rename = "standard")]
    Standard,
    #[serde(rename = "nsgan", alias = "non_saturating")]
    NonSaturating,
    #[serde(rename = "wgan", alias = "wasserstein")]
    Wasserstein,
    #[serde(rename = "lsgan", alias = "least_squares")]
    LeastSquares,
}

impl GanVariant {
    pub const ALL: [GanVariant; 4] = [
        GanVariant::Standard,
        GanVariant::NonSaturating,
        GanVariant::Wasserstein,
        GanVariant::LeastSquares,
    ];

    /// Whether discriminator outputs are probabilities (sigmoid head).
    pub fn uses_probabilities(self) -> bool {
        matches!(self, GanVariant::Standard | GanVariant::NonSaturating)
    }

    pub fn ideal_disc_loss(self) -> f64 {
        match self {
            GanVariant::Standard | GanVariant::NonSaturating => 2.0 * LN_2,
            GanVariant::Wasserstein => 0.0,
            GanVariant::LeastSquares => 0.5,
        }
    }

    /// Generator loss when the discriminator outputs its ideal constant on
    /// generated samples. WGAN uses the zero-centred critic convention.
    pub fn ideal_gen_loss(self) -> f64 {
        match self {
            GanVariant::Standard => -LN_2,
            GanVariant::NonSaturating => LN_2,
            GanVariant::Wasserstein => 0.0,
            GanVariant::LeastSquares => 0.25,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            GanVariant::Standard => "standard",
            GanVariant::NonSaturating => "nsgan",
            GanVariant::Wasserstein => "wgan",
            GanVariant::LeastSquares => "lsgan",
        }
    }
}

impl fmt::Display for GanVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GanVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "standard" => Ok(GanVariant::Standard),
            "nsgan" | "non_saturating" => Ok(GanVariant::NonSaturating),
            "wgan" | "wasserstein" => Ok(GanVariant::Wasserstein),
            "lsgan" | "least_squares" => Ok(GanVariant::LeastSquares),
            other => Err(Error::Config(format!("unknown GAN variant '{other}'"))),
        }
    }
}

pub fn ideal_disc_loss(variant: GanVariant) -> f64 {
    variant.ideal_disc_loss()
}

pub fn ideal_gen_loss(variant: GanVariant) -> f64 {
    variant.ideal_gen_loss()
}

/// Discriminator outputs on one real and one generated minibatch.
#[derive(Debug, Clone, Copy)]
pub struct DiscBatchOutputs<'a> {
    pub d_real: &'a [f64],
    pub d_fake: &'a [f64],
}

/// Domain-discriminator probabilities on source and target representations.
#[derive(Debug, Clone, Copy)]
pub struct DannOutputs<'a> {
    pub d_source: &'a [f64],
    pub d_target: &'a [f64],
    pub lambda: f64,
}

#[inline]
fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

fn check(variant_prob: bool, xs: &[f64], context: &'static str) -> Result<()> {
    if xs.is_empty() {
        return Err(Error::EmptyBatch);
    }
    for &x in xs {
        if !x.is_finite() {
            return Err(Error::Diverged { context, value: x });
        }
        if variant_prob && !(0.0..=1.0).contains(&x) {
            return Err(Error::OutOfRange { context, value: x });
        }
    }
    Ok(())
}

fn mean_by(xs: &[f64], f: impl Fn(f64) -> f64) -> f64 {
    xs.iter().map(|&x| f(x)).sum::<f64>() / xs.len() as f64
}

pub fn disc_loss(variant: GanVariant, out: DiscBatchOutputs<'_>) -> Result<f64> {
    let prob = variant.uses_probabilities();
    check(prob, out.d_real, "discriminator output on real samples")?;
    check(prob, out.d_fake, "discriminator output on generated samples")?;
    Ok(match variant {
        GanVariant::Standard | GanVariant::NonSaturating => {
            -mean_by(out.d_real, |d| clamp_prob(d).ln()) - mean_by(out.d_fake, |d| (1.0 - clamp_prob(d)).ln())
        }
        GanVariant::Wasserstein => -mean_by(out.d_real, |d| d) + mean_by(out.d_fake, |d| d),
        GanVariant::LeastSquares => {
            mean_by(out.d_real, |d| (d - 1.0) * (d - 1.0)) + mean_by(out.d_fake, |d| d * d)
        }
    })
}

pub fn gen_loss(variant: GanVariant, d_fake: &[f64]) -> Result<f64> {
    check(variant.uses_probabilities(), d_fake, "discriminator output on generated samples")?;
    Ok(match variant {
        GanVariant::Standard => mean_by(d_fake, |d| (1.0 - clamp_prob(d)).ln()),
        GanVariant::NonSaturating => -mean_by(d_fake, |d| clamp_prob(d).ln()),
        GanVariant::Wasserstein => -mean_by(d_fake, |d| d),
        GanVariant::LeastSquares => mean_by(d_fake, |d| (d - 1.0) * (d - 1.0)),
    })
}

/// Gradient of [`disc_loss`] with respect to each output, as
/// `(d_loss/d_real, d_loss/d_fake)`. Clamping is treated as identity for the
/// derivative so saturated outputs keep a learning signal.
pub fn disc_loss_grad(variant: GanVariant, out: DiscBatchOutputs<'_>) -> Result<(Vec<f64>, Vec<f64>)> {
    let prob = variant.uses_probabilities();
    check(prob, out.d_real, "discriminator output on real samples")?;
    check(prob, out.d_fake, "discriminator output on generated samples")?;
    let (nr, nf) = (out.d_real.len() as f64, out.d_fake.len() as f64);
    let (gr, gf): (Vec<f64>, Vec<f64>) = match variant {
        GanVariant::Standard | GanVariant::NonSaturating => (
            out.d_real.iter().map(|&d| -1.0 / (nr * clamp_prob(d))).collect(),
            out.d_fake.iter().map(|&d| 1.0 / (nf * (1.0 - clamp_prob(d)))).collect(),
        ),
        GanVariant::Wasserstein => (vec![-1.0 / nr; out.d_real.len()], vec![1.0 / nf; out.d_fake.len()]),
        GanVariant::LeastSquares => (
            out.d_real.iter().map(|&d| 2.0 * (d - 1.0) / nr).collect(),
            out.d_fake.iter().map(|&d| 2.0 * d / nf).collect(),
        ),
    };
    Ok((gr, gf))
}

/// Gradient of [`gen_loss`] with respect to the discriminator outputs on
/// generated samples.
pub fn gen_loss_grad(variant: GanVariant, d_fake: &[f64]) -> Result<Vec<f64>> {
    check(variant.uses_probabilities(), d_fake, "discriminator output on generated samples")?;
    let n = d_fake.len() as f64;
    Ok(match variant {
        GanVariant::Standard => d_fake.iter().map(|&d| -1.0 / (n * (1.0 - clamp_prob(d)))).collect(),
        GanVariant::NonSaturating => d_fake.iter().map(|&d| -1.0 / (n * clamp_prob(d))).collect(),
        GanVariant::Wasserstein => vec![-1.0 / n; d_fake.len()],
        GanVariant::LeastSquares => d_fake.iter().map(|&d| 2.0 * (d - 1.0) / n).collect(),
    })
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda.is_finite() && lambda >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParam(format!("lambda must be >= 0, got {lambda}")))
    }
}

/// Domain discriminator risk: `-mean log D(source) - mean log(1 - D(target))`.
pub fn dann_disc_loss(out: DannOutputs<'_>) -> Result<f64> {
    check_lambda(out.lambda)?;
    disc_loss(
        GanVariant::Standard,
        DiscBatchOutputs { d_real: out.d_source, d_fake: out.d_target },
    )
}

/// Gradient of [`dann_disc_loss`] with respect to `(d_source, d_target)`.
pub fn dann_disc_loss_grad(out: DannOutputs<'_>) -> Result<(Vec<f64>, Vec<f64>)> {
    check_lambda(out.lambda)?;
    disc_loss_grad(
        GanVariant::Standard,
        DiscBatchOutputs { d_real: out.d_source, d_fake: out.d_target },
    )
}

/// Objective minimized by the feature extractor and label predictor:
/// `label_loss - lambda * disc_loss`.
pub fn dann_feature_objective(label_loss: f64, disc_loss: f64, lambda: f64) -> Result<f64> {
    check_lambda(lambda)?;
    Ok(label_loss - lambda * disc_loss)
}

/// Binary cross-entropy between predicted probabilities and 0/1 labels.
pub fn binary_cross_entropy(probs: &[f64], labels: &[f64]) -> Result<f64> {
    check(true, probs, "label predictor output")?;
    if probs.len() != labels.len() {
        return Err(Error::Shape {
            expected: format!("{} labels", probs.len()),
            got: labels.len().to_string(),
        });
    }
    let n = probs.len() as f64;
    Ok(-probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = clamp_prob(p);
            y * p.ln() + (1.0 - y) * (1.0 - p).ln()
        })
        .sum::<f64>()
        / n)
}

pub fn binary_cross_entropy_grad(probs: &[f64], labels: &[f64]) -> Result<Vec<f64>> {
    check(true, probs, "label predictor output")?;
    if probs.len() != labels.len() {
        return Err(Error::Shape {
            expected: format!("{} labels", probs.len()),
            got: labels.len().to_string(),
        });
    }
    let n = probs.len() as f64;
    Ok(probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = clamp_prob(p);
            (-y / p + (1.0 - y) / (1.0 - p)) / n
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    const LOG4: f64 = 1.386_294_361_119_890_6;

    fn out<'a>(r: &'a [f64], f: &'a [f64]) -> DiscBatchOutputs<'a> {
        DiscBatchOutputs { d_real: r, d_fake: f }
    }

    #[test]
    fn disc_loss_examples() {
        let v = disc_loss(GanVariant::Standard, out(&[0.5], &[0.5])).unwrap();
        assert!((v - LOG4).abs() < 1e-12);
        assert_eq!(disc_loss(GanVariant::Wasserstein, out(&[1.0], &[1.0])).unwrap(), 0.0);
        assert_eq!(disc_loss(GanVariant::LeastSquares, out(&[0.5, 0.5], &[0.5, 0.5])).unwrap(), 0.5);
        assert_eq!(disc_loss(GanVariant::LeastSquares, out(&[1.0], &[0.0])).unwrap(), 0.0);
    }

    #[test]
    fn gen_loss_examples() {
        assert!((gen_loss(GanVariant::NonSaturating, &[0.5]).unwrap() - LN_2).abs() < 1e-15);
        assert!((gen_loss(GanVariant::Standard, &[0.5]).unwrap() + LN_2).abs() < 1e-15);
        assert_eq!(gen_loss(GanVariant::Wasserstein, &[0.0]).unwrap(), 0.0);
        assert_eq!(gen_loss(GanVariant::LeastSquares, &[1.0]).unwrap(), 0.0);
    }

    #[test]
    fn ideal_constants() {
        assert!((ideal_disc_loss(GanVariant::NonSaturating) - LOG4).abs() < 1e-15);
        assert!((ideal_disc_loss(GanVariant::Standard) - LOG4).abs() < 1e-15);
        assert_eq!(ideal_disc_loss(GanVariant::Wasserstein), 0.0);
        assert_eq!(ideal_disc_loss(GanVariant::LeastSquares), 0.5);
        assert_eq!(ideal_gen_loss(GanVariant::NonSaturating), LN_2);
        assert_eq!(ideal_gen_loss(GanVariant::LeastSquares), 0.25);
        assert_eq!(ideal_gen_loss(GanVariant::Wasserstein), 0.0);
    }

    #[test]
    fn ideal_gen_loss_is_gen_loss_at_half() {
        // generator row evaluated where the discriminator is maximally confused
        for v in [GanVariant::Standard, GanVariant::NonSaturating, GanVariant::LeastSquares] {
            let at_half = gen_loss(v, &[0.5, 0.5, 0.5]).unwrap();
            assert!((at_half - v.ideal_gen_loss()).abs() < 1e-15, "{v}");
        }
    }

    #[test]
    fn dann_examples() {
        let o = |s: &'static [f64], t: &'static [f64]| DannOutputs { d_source: s, d_target: t, lambda: 1.0 };
        assert!((dann_disc_loss(o(&[0.5], &[0.5])).unwrap() - LOG4).abs() < 1e-12);
        let eps = 1e-9;
        let v = dann_disc_loss(DannOutputs { d_source: &[1.0 - eps], d_target: &[eps], lambda: 0.0 }).unwrap();
        assert!(v < 1e-6);
        let v = dann_disc_loss(o(&[0.9], &[0.1])).unwrap();
        assert!((v - (-2.0 * 0.9f64.ln())).abs() < 1e-12);
        assert!((v - 0.210_721_031_315_652_5).abs() < 1e-9);
        assert!(dann_disc_loss(DannOutputs { d_source: &[0.5], d_target: &[0.5], lambda: -1.0 }).is_err());
    }

    #[test]
    fn dann_objective_examples() {
        assert_eq!(dann_feature_objective(1.0, LOG4, 0.0).unwrap(), 1.0);
        assert!((dann_feature_objective(1.0, LOG4, 1.0).unwrap() - (1.0 - LOG4)).abs() < 1e-15);
        assert!((dann_feature_objective(0.5, 0.7, 0.1).unwrap() - 0.43).abs() < 1e-12);
        assert!(dann_feature_objective(0.5, 0.7, -0.1).is_err());
    }

    #[test]
    fn error_paths() {
        assert!(matches!(disc_loss(GanVariant::NonSaturating, out(&[], &[0.5])), Err(Error::EmptyBatch)));
        assert!(matches!(
            disc_loss(GanVariant::NonSaturating, out(&[1.5], &[0.5])),
            Err(Error::OutOfRange { .. })
        ));
        assert!(disc_loss(GanVariant::Wasserstein, out(&[1.5], &[-3.0])).is_ok());
        assert!(matches!(
            gen_loss(GanVariant::Wasserstein, &[f64::NAN]),
            Err(Error::Diverged { .. })
        ));
        assert!(gen_loss(GanVariant::LeastSquares, &[]).is_err());
    }

    #[test]
    fn clamping_keeps_losses_finite() {
        let v = disc_loss(GanVariant::NonSaturating, out(&[0.0], &[1.0])).unwrap();
        assert!(v.is_finite());
        assert!((v - (-2.0 * PROB_EPS.ln())).abs() < 1e-6);
    }

    #[test]
    fn wgan_zero_when_means_match() {
        let v = disc_loss(GanVariant::Wasserstein, out(&[0.3, -1.2, 4.0], &[1.0, 0.1])).unwrap();
        assert!((v - (-(0.3 - 1.2 + 4.0) / 3.0 + 0.55)).abs() < 1e-15);
        let v = disc_loss(GanVariant::Wasserstein, out(&[0.2, 0.4], &[0.3])).unwrap();
        assert!(v.abs() < 1e-15);
    }

    #[test]
    fn nsgan_gradient_signs() {
        let r = [0.1, 0.5, 0.93];
        let f = [0.2, 0.7, 0.5];
        let (gr, gf) = disc_loss_grad(GanVariant::NonSaturating, out(&r, &f)).unwrap();
        assert!(gr.iter().all(|&g| g < 0.0));
        assert!(gf.iter().all(|&g| g > 0.0));
    }

    fn fd_check(loss: impl Fn(&[f64], &[f64]) -> f64, grad: (Vec<f64>, Vec<f64>), r: &[f64], f: &[f64]) {
        let h = 1e-6;
        for i in 0..r.len() {
            let (mut a, mut b) = (r.to_vec(), r.to_vec());
            a[i] += h;
            b[i] -= h;
            let fd = (loss(&a, f) - loss(&b, f)) / (2.0 * h);
            assert!((fd - grad.0[i]).abs() < 1e-6 * (1.0 + fd.abs()), "real {i}: {fd} vs {}", grad.0[i]);
        }
        for j in 0..f.len() {
            let (mut a, mut b) = (f.to_vec(), f.to_vec());
            a[j] += h;
            b[j] -= h;
            let fd = (loss(r, &a) - loss(r, &b)) / (2.0 * h);
            assert!((fd - grad.1[j]).abs() < 1e-6 * (1.0 + fd.abs()), "fake {j}: {fd} vs {}", grad.1[j]);
        }
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let r = [0.2, 0.55, 0.8];
        let f = [0.3, 0.45];
        for v in GanVariant::ALL {
            let g = disc_loss_grad(v, out(&r, &f)).unwrap();
            fd_check(|a, b| disc_loss(v, out(a, b)).unwrap(), g, &r, &f);
            let gg = gen_loss_grad(v, &f).unwrap();
            fd_check(|_, b| gen_loss(v, b).unwrap(), (vec![0.0; r.len()], gg), &r, &f);
        }
        let labels = [1.0, 0.0, 1.0];
        let g = binary_cross_entropy_grad(&r, &labels).unwrap();
        fd_check(|a, _| binary_cross_entropy(a, &labels).unwrap(), (g, vec![0.0; f.len()]), &r, &f);
    }

    #[test]
    fn variant_parsing() {
        assert_eq!("NSGAN".parse::<GanVariant>().unwrap(), GanVariant::NonSaturating);
        assert_eq!("least_squares".parse::<GanVariant>().unwrap(), GanVariant::LeastSquares);
        assert!("hinge".parse::<GanVariant>().is_err());
        let v: GanVariant = serde_json::from_str("\"wasserstein\"").unwrap();
        assert_eq!(v, GanVariant::Wasserstein);
        assert_eq!(serde_json::to_string(&GanVariant::Wasserstein).unwrap(), "\"wgan\"");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn probs() -> impl Strategy<Value = Vec<f64>> {
            proptest::collection::vec(0.01f64..0.99, 1..20)
        }

        proptest! {
            #[test]
            fn permutation_invariance(r in probs(), f in probs(), seed in any::<u64>()) {
                use rand::{seq::SliceRandom, SeedableRng};
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
                let (mut r2, mut f2) = (r.clone(), f.clone());
                r2.shuffle(&mut rng);
                f2.shuffle(&mut rng);
                for v in GanVariant::ALL {
                    let a = disc_loss(v, out(&r, &f)).unwrap();
                    let b = disc_loss(v, out(&r2, &f2)).unwrap();
                    prop_assert!((a - b).abs() < 1e-12);
                    let a = gen_loss(v, &f).unwrap();
                    let b = gen_loss(v, &f2).unwrap();
                    prop_assert!((a - b).abs() < 1e-12);
                }
            }

            #[test]
            fn batch_mean_consistency(f1 in probs(), f2 in probs()) {
                for v in GanVariant::ALL {
                    let joined: Vec<f64> = f1.iter().chain(&f2).copied().collect();
                    let (n1, n2) = (f1.len() as f64, f2.len() as f64);
                    let weighted = (n1 * gen_loss(v, &f1).unwrap() + n2 * gen_loss(v, &f2).unwrap()) / (n1 + n2);
                    prop_assert!((gen_loss(v, &joined).unwrap() - weighted).abs() < 1e-12);
                }
            }

            #[test]
            fn clamping_invariance(r in probs(), f in probs()) {
                let clamped = |xs: &[f64]| xs.iter().map(|&x| x.clamp(PROB_EPS, 1.0 - PROB_EPS)).collect::<Vec<_>>();
                let (rc, fc) = (clamped(&r), clamped(&f));
                for v in [GanVariant::Standard, GanVariant::NonSaturating] {
                    prop_assert_eq!(disc_loss(v, out(&r, &f)).unwrap(), disc_loss(v, out(&rc, &fc)).unwrap());
                }
            }
        }
    }
}
