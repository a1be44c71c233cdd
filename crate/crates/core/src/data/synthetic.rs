use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::Dataset;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SyntheticKind {
    /// Isotropic Gaussian clusters with centers evenly spaced on the unit circle.
    Blobs,
    /// Interleaved spiral arms, one per class; `noise` perturbs the angle.
    Spirals,
}

impl FromStr for SyntheticKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "blobs" => Ok(SyntheticKind::Blobs),
            "spirals" => Ok(SyntheticKind::Spirals),
            other => Err(Error::InvalidArgument(format!("unknown synthetic kind `{other}`"))),
        }
    }
}

impl fmt::Display for SyntheticKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SyntheticKind::Blobs => "blobs",
            SyntheticKind::Spirals => "spirals",
        })
    }
}

/// Generates a 2-D classification set, min-max normalized per coordinate into `[0, 1]`.
/// Samples are ordered class by class.
pub fn gen_synthetic(
    kind: SyntheticKind,
    n_per_class: usize,
    num_classes: usize,
    noise: f64,
    seed: u64,
) -> Result<Dataset> {
    if n_per_class == 0 || num_classes == 0 {
        return Err(Error::InvalidArgument(
            "synthetic data needs at least one class and one sample per class".into(),
        ));
    }
    if !(noise >= 0.0) || !noise.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "noise must be non-negative, got {noise}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gauss = || -> f64 { StandardNormal.sample(&mut rng) };
    let mut points = Vec::with_capacity(n_per_class * num_classes);
    let mut labels = Vec::with_capacity(n_per_class * num_classes);
    for class in 0..num_classes {
        let phase = TAU * class as f64 / num_classes as f64;
        for i in 0..n_per_class {
            let (x, y) = match kind {
                SyntheticKind::Blobs => (phase.cos() + noise * gauss(), phase.sin() + noise * gauss()),
                SyntheticKind::Spirals => {
                    let t = (i as f64 + 1.0) / n_per_class as f64;
                    let theta = phase + 4.0 * t + noise * gauss();
                    (t * theta.cos(), t * theta.sin())
                }
            };
            points.push([x, y]);
            labels.push(class);
        }
    }

    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for p in &points {
        for k in 0..2 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    let features = points
        .iter()
        .flat_map(|p| {
            (0..2).map(move |k| {
                let span = hi[k] - lo[k];
                if span > 0.0 {
                    (((p[k] - lo[k]) / span) as f32).clamp(0.0, 1.0)
                } else {
                    0.5
                }
            })
        })
        .collect();
    Dataset::new(kind.to_string(), features, [1, 1, 2], labels, num_classes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_blobs_collapse_to_centers() {
        let ds = gen_synthetic(SyntheticKind::Blobs, 5, 3, 0.0, 1).unwrap();
        for class in 0..3 {
            let first = ds.sample(class * 5).to_vec();
            for i in 0..5 {
                assert_eq!(ds.sample(class * 5 + i), &first[..]);
            }
        }
    }

    #[test]
    fn same_seed_same_bits() {
        for kind in [SyntheticKind::Blobs, SyntheticKind::Spirals] {
            let a = gen_synthetic(kind, 20, 4, 0.2, 9).unwrap();
            let b = gen_synthetic(kind, 20, 4, 0.2, 9).unwrap();
            assert_eq!(a, b);
            let c = gen_synthetic(kind, 20, 4, 0.2, 10).unwrap();
            assert_ne!(a.features(), c.features());
        }
    }

    #[test]
    fn features_normalized() {
        let ds = gen_synthetic(SyntheticKind::Spirals, 50, 3, 0.3, 2).unwrap();
        assert!(ds.features().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(ds.len(), 150);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(gen_synthetic(SyntheticKind::Blobs, 0, 3, 0.1, 1).is_err());
        assert!(gen_synthetic(SyntheticKind::Blobs, 3, 3, -0.1, 1).is_err());
        assert!("rings".parse::<SyntheticKind>().is_err());
    }
}
