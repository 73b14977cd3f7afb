//! Synthetic data: a ring of Gaussian modes for GANs and a pair of shifted,
//! rotated two-blob domains for domain adaptation.

use std::f64::consts::PI;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `k` isotropic Gaussian modes spaced evenly on a circle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RingGaussians {
    pub modes: usize,
    pub radius: f64,
    pub sigma: f64,
}

impl Default for RingGaussians {
    fn default() -> Self {
        Self { modes: 8, radius: 2.0, sigma: 0.05 }
    }
}

impl RingGaussians {
    pub fn validate(&self) -> Result<()> {
        if self.modes == 0 {
            return Err(Error::InvalidParam("ring needs at least one mode".into()));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite() && self.radius.is_finite()) {
            return Err(Error::InvalidParam(format!(
                "ring sigma must be >= 0 and radius finite (sigma {}, radius {})",
                self.sigma, self.radius
            )));
        }
        Ok(())
    }

    pub fn center(&self, mode: usize) -> [f64; 2] {
        let angle = 2.0 * PI * mode as f64 / self.modes as f64;
        [self.radius * angle.cos(), self.radius * angle.sin()]
    }

    /// Samples `n` points and reports which mode each came from.
    pub fn sample_with_modes<R: Rng>(&self, n: usize, rng: &mut R) -> (Array2<f64>, Vec<usize>) {
        let mut out = Array2::zeros((n, 2));
        let mut modes = Vec::with_capacity(n);
        for i in 0..n {
            let m = rng.gen_range(0..self.modes);
            let c = self.center(m);
            let e0: f64 = rng.sample(StandardNormal);
            let e1: f64 = rng.sample(StandardNormal);
            out[[i, 0]] = c[0] + self.sigma * e0;
            out[[i, 1]] = c[1] + self.sigma * e1;
            modes.push(m);
        }
        (out, modes)
    }

    pub fn sample<R: Rng>(&self, n: usize, rng: &mut R) -> Array2<f64> {
        self.sample_with_modes(n, rng).0
    }
}

/// Seeded `n x 2` draw from a ring of Gaussians.
pub fn sample_ring_gaussians(k_modes: usize, radius: f64, sigma: f64, n: usize, seed: u64) -> Result<Array2<f64>> {
    let ring = RingGaussians { modes: k_modes, radius, sigma };
    ring.validate()?;
    Ok(ring.sample(n, &mut ChaCha8Rng::seed_from_u64(seed)))
}

/// Standard-normal noise matrix.
pub fn sample_noise<R: Rng>(n: usize, dim: usize, rng: &mut R) -> Array2<f64> {
    Array2::from_shape_simple_fn((n, dim), || rng.sample(StandardNormal))
}

/// Source domain: two Gaussian blobs, one per class. Target domain: the same
/// blobs rotated about the origin and then shifted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DannDomains {
    /// Blob centres for label 0 and label 1.
    pub centers: [[f64; 2]; 2],
    pub sigma: f64,
    pub rotation_deg: f64,
    pub shift: [f64; 2],
}

impl Default for DannDomains {
    fn default() -> Self {
        Self {
            centers: [[-1.0, 0.0], [1.0, 0.0]],
            sigma: 0.35,
            rotation_deg: 35.0,
            shift: [-1.0, 0.6],
        }
    }
}

/// Labeled source features, target features and (held-back) target labels.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainSample {
    pub source: Array2<f64>,
    pub source_labels: Vec<f64>,
    pub target: Array2<f64>,
    /// Only used for evaluation; training never reads these.
    pub target_labels: Vec<f64>,
}

impl DannDomains {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidParam(format!("domain sigma must be > 0, got {}", self.sigma)));
        }
        Ok(())
    }

    fn blob<R: Rng>(&self, label: usize, rng: &mut R) -> [f64; 2] {
        let c = self.centers[label];
        let e0: f64 = rng.sample(StandardNormal);
        let e1: f64 = rng.sample(StandardNormal);
        [c[0] + self.sigma * e0, c[1] + self.sigma * e1]
    }

    pub fn to_target(&self, p: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.rotation_deg.to_radians().sin_cos();
        [c * p[0] - s * p[1] + self.shift[0], s * p[0] + c * p[1] + self.shift[1]]
    }

    /// `(features, labels)` from the source domain.
    pub fn sample_source<R: Rng>(&self, n: usize, rng: &mut R) -> (Array2<f64>, Vec<f64>) {
        let mut x = Array2::zeros((n, 2));
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            let label = rng.gen_range(0..2usize);
            let p = self.blob(label, rng);
            x[[i, 0]] = p[0];
            x[[i, 1]] = p[1];
            y.push(label as f64);
        }
        (x, y)
    }

    /// `(features, labels)` from the target domain.
    pub fn sample_target<R: Rng>(&self, n: usize, rng: &mut R) -> (Array2<f64>, Vec<f64>) {
        let (mut x, y) = self.sample_source(n, rng);
        for mut row in x.rows_mut() {
            let t = self.to_target([row[0], row[1]]);
            row[0] = t[0];
            row[1] = t[1];
        }
        (x, y)
    }

    pub fn sample<R: Rng>(&self, n: usize, rng: &mut R) -> DomainSample {
        let (source, source_labels) = self.sample_source(n, rng);
        let (target, target_labels) = self.sample_target(n, rng);
        DomainSample { source, source_labels, target, target_labels }
    }
}

/// Seeded draw of `n` source and `n` target points from the default domains.
pub fn sample_dann_domains(n: usize, seed: u64) -> Result<DomainSample> {
    if n == 0 {
        return Err(Error::InvalidParam("need at least one sample".into()));
    }
    Ok(DannDomains::default().sample(n, &mut ChaCha8Rng::seed_from_u64(seed)))
}
