//! Per-user datasets: a seeded synthetic generator and MNIST partitioning.

pub mod idx;

use macfl::trainer::{LossKind, TrainerError, UserDataset};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

pub use idx::{load_mnist_idx, IdxError, LabeledImages};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid dataset descriptor: {0}")]
    Invalid(String),
    #[error(transparent)]
    Idx(#[from] IdxError),
    #[error(transparent)]
    Trainer(#[from] TrainerError),
}

/// Generator parameters. User `m` multiplies its gradient scale by
/// `scale_factors[m]`, so at `w = 0` the users' dynamic ranges are roughly
/// proportional to the factors.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub kind: LossKind,
    pub samples_per_user: Vec<usize>,
    pub features: usize,
    /// Softmax only.
    pub classes: usize,
    pub scale_factors: Vec<f64>,
    /// Label noise for regression/logistic, pixel noise for softmax.
    pub noise: f64,
    /// Softmax only: classes each user holds; empty means all.
    pub label_sets: Vec<Vec<u32>>,
    /// Size of a held-out set drawn like an unscaled user with every class.
    pub test_samples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub users: Vec<UserDataset>,
    pub test: Option<UserDataset>,
}

impl SyntheticSpec {
    fn validate(&self) -> Result<(), DataError> {
        let m = self.samples_per_user.len();
        if m == 0 {
            return Err(DataError::Invalid(
                "samples_per_user must list at least one user".into(),
            ));
        }
        if self.samples_per_user.contains(&0) {
            return Err(DataError::Invalid(
                "every user needs at least one sample".into(),
            ));
        }
        if self.features == 0 {
            return Err(DataError::Invalid("features must be at least 1".into()));
        }
        if self.scale_factors.len() != m {
            return Err(DataError::Invalid(format!(
                "{} scale factors for {m} users",
                self.scale_factors.len()
            )));
        }
        if self
            .scale_factors
            .iter()
            .any(|s| !(s.is_finite() && *s > 0.0))
        {
            return Err(DataError::Invalid(
                "scale factors must be finite and > 0".into(),
            ));
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return Err(DataError::Invalid(format!(
                "noise must be finite and >= 0, got {}",
                self.noise
            )));
        }
        if self.kind == LossKind::Softmax {
            if self.classes < 2 {
                return Err(DataError::Invalid(
                    "softmax data needs at least 2 classes".into(),
                ));
            }
            if !self.label_sets.is_empty() && self.label_sets.len() != m {
                return Err(DataError::Invalid(format!(
                    "{} label sets for {m} users",
                    self.label_sets.len()
                )));
            }
            for set in &self.label_sets {
                if set.is_empty() || set.iter().any(|&c| c as usize >= self.classes) {
                    return Err(DataError::Invalid(format!(
                        "label set {set:?} must be non-empty within 0..{}",
                        self.classes
                    )));
                }
            }
        }
        Ok(())
    }

    fn labels_for(&self, user: usize) -> Vec<u32> {
        match self.label_sets.get(user) {
            Some(set) => set.clone(),
            None => (0..self.classes as u32).collect(),
        }
    }
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Deterministic datasets for the given descriptor and seed.
pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<SyntheticData, DataError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = spec.features;
    match spec.kind {
        LossKind::Quadratic | LossKind::Logistic => {
            let w_true: Vec<f64> = (0..p)
                .map(|_| gaussian(&mut rng) / (p as f64).sqrt())
                .collect();
            let draw =
                |n: usize, scale: f64, rng: &mut ChaCha8Rng| -> Result<UserDataset, DataError> {
                    let mut x = Vec::with_capacity(n * p);
                    let mut real = Vec::with_capacity(n);
                    let mut labels = Vec::with_capacity(n);
                    for _ in 0..n {
                        let row: Vec<f64> = (0..p).map(|_| gaussian(rng)).collect();
                        let z: f64 = row.iter().zip(&w_true).map(|(a, b)| a * b).sum::<f64>()
                            + spec.noise * gaussian(rng);
                        if spec.kind == LossKind::Quadratic {
                            // scaling the targets scales the gradient at w = 0
                            x.extend_from_slice(&row);
                            real.push(scale * z);
                        } else {
                            x.extend(row.iter().map(|v| v * scale));
                            labels.push((z > 0.0) as u32);
                        }
                    }
                    Ok(if spec.kind == LossKind::Quadratic {
                        UserDataset::regression(x, p, real)?
                    } else {
                        UserDataset::classification(x, p, labels)?
                    })
                };
            let mut users = Vec::with_capacity(spec.samples_per_user.len());
            for (&n, &s) in spec.samples_per_user.iter().zip(&spec.scale_factors) {
                users.push(draw(n, s, &mut rng)?);
            }
            let test = if spec.test_samples > 0 {
                Some(draw(spec.test_samples, 1.0, &mut rng)?)
            } else {
                None
            };
            Ok(SyntheticData { users, test })
        }
        LossKind::Softmax => {
            // one dense template per class; samples are noisy copies clipped to
            // [0, 1] and centred, so no single direction dominates the curvature
            let prototypes: Vec<Vec<f64>> = (0..spec.classes)
                .map(|_| (0..p).map(|_| rng.random::<f64>()).collect())
                .collect();
            let draw = |n: usize,
                        scale: f64,
                        classes: &[u32],
                        rng: &mut ChaCha8Rng|
             -> Result<UserDataset, DataError> {
                let mut x = Vec::with_capacity(n * p);
                let mut labels = Vec::with_capacity(n);
                for _ in 0..n {
                    let y = classes[rng.random_range(0..classes.len())];
                    x.extend(prototypes[y as usize].iter().map(|&v| {
                        scale * ((v + spec.noise * gaussian(rng)).clamp(0.0, 1.0) - 0.5)
                    }));
                    labels.push(y);
                }
                Ok(UserDataset::classification(x, p, labels)?)
            };
            let mut users = Vec::with_capacity(spec.samples_per_user.len());
            for (m, (&n, &s)) in spec
                .samples_per_user
                .iter()
                .zip(&spec.scale_factors)
                .enumerate()
            {
                users.push(draw(n, s, &spec.labels_for(m), &mut rng)?);
            }
            let all: Vec<u32> = (0..spec.classes as u32).collect();
            let test = if spec.test_samples > 0 {
                Some(draw(spec.test_samples, 1.0, &all, &mut rng)?)
            } else {
                None
            };
            Ok(SyntheticData { users, test })
        }
    }
}

/// Splits labelled images across users without overlap. Each image goes to
/// the user with the fewest examples among those whose label set contains
/// its label and who are below their cap (ties to the lower index).
pub fn partition_by_labels(
    images: &LabeledImages,
    label_sets: &[Vec<u32>],
    caps: Option<&[usize]>,
) -> Result<Vec<UserDataset>, DataError> {
    if label_sets.is_empty() {
        return Err(DataError::Invalid(
            "at least one label set is required".into(),
        ));
    }
    if let Some(c) = caps {
        if c.len() != label_sets.len() {
            return Err(DataError::Invalid(format!(
                "{} caps for {} users",
                c.len(),
                label_sets.len()
            )));
        }
    }
    let p = images.pixels();
    let m = label_sets.len();
    let mut features = vec![Vec::new(); m];
    let mut labels: Vec<Vec<u32>> = vec![Vec::new(); m];
    for (i, &y) in images.labels.iter().enumerate() {
        let target = (0..m)
            .filter(|&u| label_sets[u].contains(&y))
            .filter(|&u| caps.is_none_or(|c| labels[u].len() < c[u]))
            .min_by_key(|&u| labels[u].len());
        if let Some(u) = target {
            features[u].extend_from_slice(&images.features[i * p..(i + 1) * p]);
            labels[u].push(y);
        }
    }
    let mut out = Vec::with_capacity(m);
    for (u, (x, y)) in features.into_iter().zip(labels).enumerate() {
        if y.is_empty() {
            return Err(DataError::Invalid(format!(
                "user {} received no examples",
                u + 1
            )));
        }
        out.push(UserDataset::classification(x, p, y)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use macfl::quantizer::range_of;
    use macfl::trainer::{Loss, Targets};

    fn spec(kind: LossKind, scales: Vec<f64>) -> SyntheticSpec {
        SyntheticSpec {
            kind,
            samples_per_user: vec![400; scales.len()],
            features: 20,
            classes: 10,
            scale_factors: scales,
            noise: 0.3,
            label_sets: vec![],
            test_samples: 0,
        }
    }

    fn delta_at_zero(loss: &Loss, data: &UserDataset) -> f64 {
        let g = loss
            .gradient(&vec![0.0; loss.dim(data.feature_dim())], data)
            .unwrap();
        let (lo, hi) = range_of(&g).unwrap();
        hi - lo
    }

    #[test]
    fn scale_factors_control_the_range_ratio() {
        for (kind, loss) in [
            (LossKind::Quadratic, Loss::quadratic(0.0)),
            (
                LossKind::Logistic,
                Loss::new(LossKind::Logistic, 0.0, 2).unwrap(),
            ),
        ] {
            let data = generate_synthetic(&spec(kind, vec![10.0, 1.0]), 3).unwrap();
            let ratio = delta_at_zero(&loss, &data.users[0]) / delta_at_zero(&loss, &data.users[1]);
            assert!((ratio - 10.0).abs() <= 2.0, "{kind}: ratio {ratio}");
        }
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let s = spec(LossKind::Softmax, vec![1.0, 1.0]);
        assert_eq!(
            generate_synthetic(&s, 5).unwrap(),
            generate_synthetic(&s, 5).unwrap()
        );
        assert_ne!(
            generate_synthetic(&s, 5).unwrap(),
            generate_synthetic(&s, 6).unwrap()
        );
    }

    #[test]
    fn single_user() {
        let data = generate_synthetic(&spec(LossKind::Quadratic, vec![1.0]), 1).unwrap();
        assert_eq!(data.users.len(), 1);
        assert_eq!(data.users[0].len(), 400);
    }

    #[test]
    fn softmax_label_sets() {
        let mut s = spec(LossKind::Softmax, vec![1.0, 1.0]);
        s.label_sets = vec![vec![0, 1], (0..10).collect()];
        s.test_samples = 50;
        let data = generate_synthetic(&s, 9).unwrap();
        let Targets::Labels(y) = data.users[0].targets() else {
            panic!()
        };
        assert!(y.iter().all(|&c| c < 2));
        let Targets::Labels(y) = data.users[1].targets() else {
            panic!()
        };
        assert!(y.iter().any(|&c| c >= 2));
        assert_eq!(data.test.unwrap().len(), 50);
    }

    #[test]
    fn softmax_features_are_centred_and_scaled() {
        let data = generate_synthetic(&spec(LossKind::Softmax, vec![3.0, 1.0]), 2).unwrap();
        for (u, s) in data.users.iter().zip([3.0, 1.0]) {
            let x: Vec<f64> = (0..u.len()).flat_map(|i| u.row(i).to_vec()).collect();
            assert!(x.iter().all(|v| v.abs() <= 0.5 * s));
            assert!(x.iter().any(|v| *v < 0.0) && x.iter().any(|v| *v > 0.0));
        }
    }

    #[test]
    fn invalid_descriptors() {
        let mut s = spec(LossKind::Quadratic, vec![1.0, 1.0]);
        s.samples_per_user = vec![10, 0];
        assert!(generate_synthetic(&s, 0).is_err());
        let mut s = spec(LossKind::Softmax, vec![1.0]);
        s.label_sets = vec![vec![12]];
        assert!(generate_synthetic(&s, 0).is_err());
        assert!(generate_synthetic(&spec(LossKind::Quadratic, vec![-1.0]), 0).is_err());
    }

    #[test]
    fn partition_is_disjoint_and_respects_filters() {
        let images = LabeledImages {
            rows: 1,
            cols: 1,
            features: (0..20).map(|i| i as f64 / 20.0).collect(),
            labels: (0..20).map(|i| i % 5).collect(),
        };
        let users = partition_by_labels(&images, &[vec![0, 1], vec![0, 1, 2, 3, 4]], None).unwrap();
        assert_eq!(users[0].len() + users[1].len(), 20);
        let Targets::Labels(y) = users[0].targets() else {
            panic!()
        };
        assert!(y.iter().all(|&c| c < 2));
        let capped = partition_by_labels(&images, &[vec![0], vec![1]], Some(&[2, 3])).unwrap();
        assert_eq!((capped[0].len(), capped[1].len()), (2, 3));
        assert!(partition_by_labels(&images, &[vec![9]], None).is_err());
    }
}
