//! Per-sample losses, full-batch local gradients and classifier accuracy.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::{Model, Result, TrainerError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    /// `1/2 (x^T w - y)^2`
    Quadratic,
    /// Binary cross-entropy on `sigmoid(x^T w)`, labels in {0, 1}.
    Logistic,
    /// Multinomial logistic regression with one bias per class.
    Softmax,
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LossKind::Quadratic => "quadratic",
            LossKind::Logistic => "logistic",
            LossKind::Softmax => "softmax",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Real(Vec<f64>),
    Labels(Vec<u32>),
}

/// One user's local examples, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct UserDataset {
    features: Vec<f64>,
    feature_dim: usize,
    targets: Targets,
}

impl UserDataset {
    pub fn new(features: Vec<f64>, feature_dim: usize, targets: Targets) -> Result<Self> {
        let n = match &targets {
            Targets::Real(y) => y.len(),
            Targets::Labels(y) => y.len(),
        };
        if n == 0 || feature_dim == 0 {
            return Err(TrainerError::EmptyDataset);
        }
        if features.len() != n * feature_dim {
            return Err(TrainerError::DimensionMismatch {
                expected: n * feature_dim,
                actual: features.len(),
            });
        }
        if let Some(i) = features.iter().position(|x| !x.is_finite()) {
            return Err(TrainerError::NonFiniteData(i));
        }
        Ok(Self {
            features,
            feature_dim,
            targets,
        })
    }

    pub fn regression(features: Vec<f64>, feature_dim: usize, y: Vec<f64>) -> Result<Self> {
        Self::new(features, feature_dim, Targets::Real(y))
    }

    pub fn classification(
        features: Vec<f64>,
        feature_dim: usize,
        labels: Vec<u32>,
    ) -> Result<Self> {
        Self::new(features, feature_dim, Targets::Labels(labels))
    }

    pub fn len(&self) -> usize {
        self.features.len() / self.feature_dim
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.feature_dim..(i + 1) * self.feature_dim]
    }

    pub fn targets(&self) -> &Targets {
        &self.targets
    }

    /// Concatenation of several datasets with matching layout.
    pub fn concat(parts: &[&UserDataset]) -> Result<Self> {
        let first = parts.first().ok_or(TrainerError::EmptyDataset)?;
        let mut features = Vec::new();
        let mut real = Vec::new();
        let mut labels = Vec::new();
        for p in parts {
            if p.feature_dim != first.feature_dim {
                return Err(TrainerError::DimensionMismatch {
                    expected: first.feature_dim,
                    actual: p.feature_dim,
                });
            }
            features.extend_from_slice(&p.features);
            match &p.targets {
                Targets::Real(y) => real.extend_from_slice(y),
                Targets::Labels(y) => labels.extend_from_slice(y),
            }
        }
        if !real.is_empty() && !labels.is_empty() {
            return Err(TrainerError::TargetKind);
        }
        let targets = if labels.is_empty() {
            Targets::Real(real)
        } else {
            Targets::Labels(labels)
        };
        Self::new(features, first.feature_dim, targets)
    }
}

/// A loss kind plus ridge penalty `rho/2 ||w||^2` added to every sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Loss {
    kind: LossKind,
    ridge: f64,
    classes: usize,
}

impl Loss {
    pub fn new(kind: LossKind, ridge: f64, classes: usize) -> Result<Self> {
        if !(ridge.is_finite() && ridge >= 0.0) {
            return Err(TrainerError::InvalidLoss(format!(
                "ridge must be finite and >= 0, got {ridge}"
            )));
        }
        let classes = match kind {
            LossKind::Softmax if classes < 2 => {
                return Err(TrainerError::InvalidLoss(format!(
                    "softmax needs at least 2 classes, got {classes}"
                )))
            }
            LossKind::Softmax => classes,
            LossKind::Logistic => 2,
            LossKind::Quadratic => 1,
        };
        Ok(Self {
            kind,
            ridge,
            classes,
        })
    }

    pub fn quadratic(ridge: f64) -> Self {
        Self {
            kind: LossKind::Quadratic,
            ridge: ridge.max(0.0),
            classes: 1,
        }
    }

    pub fn kind(&self) -> LossKind {
        self.kind
    }

    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    /// Model dimension for inputs with `features` entries.
    pub fn dim(&self, features: usize) -> usize {
        match self.kind {
            LossKind::Quadratic | LossKind::Logistic => features,
            LossKind::Softmax => (features + 1) * self.classes,
        }
    }

    fn check(&self, w: &[f64], data: &UserDataset) -> Result<()> {
        let d = self.dim(data.feature_dim);
        if w.len() != d {
            return Err(TrainerError::DimensionMismatch {
                expected: d,
                actual: w.len(),
            });
        }
        match (&data.targets, self.kind) {
            (Targets::Real(_), LossKind::Quadratic) => Ok(()),
            (Targets::Labels(y), LossKind::Logistic | LossKind::Softmax) => {
                match y.iter().find(|&&c| c as usize >= self.classes) {
                    Some(&c) => Err(TrainerError::LabelOutOfRange {
                        label: c,
                        classes: self.classes,
                    }),
                    None => Ok(()),
                }
            }
            _ => Err(TrainerError::TargetKind),
        }
    }

    fn ridge_value(&self, w: &[f64]) -> f64 {
        if self.ridge == 0.0 {
            0.0
        } else {
            0.5 * self.ridge * w.iter().map(|x| x * x).sum::<f64>()
        }
    }

    /// Mean loss over the dataset.
    pub fn value(&self, w: &[f64], data: &UserDataset) -> Result<f64> {
        self.check(w, data)?;
        let n = data.len();
        let mut total = 0.0;
        match (&data.targets, self.kind) {
            (Targets::Real(y), _) => {
                for (i, &yi) in y.iter().enumerate() {
                    let r = dot(data.row(i), w) - yi;
                    total += 0.5 * r * r;
                }
            }
            (Targets::Labels(y), LossKind::Logistic) => {
                for (i, &yi) in y.iter().enumerate() {
                    let z = dot(data.row(i), w);
                    total += softplus(z) - yi as f64 * z;
                }
            }
            (Targets::Labels(y), _) => {
                let mut logits = vec![0.0; self.classes];
                for (i, &yi) in y.iter().enumerate() {
                    self.logits(w, data.row(i), &mut logits);
                    total += log_sum_exp(&logits) - logits[yi as usize];
                }
            }
        }
        Ok(total / n as f64 + self.ridge_value(w))
    }

    /// Exact mean gradient over the dataset.
    pub fn gradient(&self, w: &[f64], data: &UserDataset) -> Result<Vec<f64>> {
        self.check(w, data)?;
        let n = data.len();
        let p = data.feature_dim;
        let mut g = vec![0.0; w.len()];
        match (&data.targets, self.kind) {
            (Targets::Real(y), _) => {
                for (i, &yi) in y.iter().enumerate() {
                    let x = data.row(i);
                    axpy(dot(x, w) - yi, x, &mut g);
                }
            }
            (Targets::Labels(y), LossKind::Logistic) => {
                for (i, &yi) in y.iter().enumerate() {
                    let x = data.row(i);
                    axpy(sigmoid(dot(x, w)) - yi as f64, x, &mut g);
                }
            }
            (Targets::Labels(y), _) => {
                let mut probs = vec![0.0; self.classes];
                for (i, &yi) in y.iter().enumerate() {
                    let x = data.row(i);
                    self.logits(w, x, &mut probs);
                    softmax_in_place(&mut probs);
                    probs[yi as usize] -= 1.0;
                    for (c, &coef) in probs.iter().enumerate() {
                        let block = &mut g[c * (p + 1)..(c + 1) * (p + 1)];
                        axpy(coef, x, &mut block[..p]);
                        block[p] += coef;
                    }
                }
            }
        }
        let inv = 1.0 / n as f64;
        for (gi, wi) in g.iter_mut().zip(w) {
            *gi = *gi * inv + self.ridge * wi;
        }
        Ok(g)
    }

    /// Fraction of argmax-correct predictions; `None` for regression.
    pub fn accuracy(&self, w: &[f64], data: &UserDataset) -> Result<Option<f64>> {
        self.check(w, data)?;
        let Targets::Labels(y) = &data.targets else {
            return Ok(None);
        };
        let mut logits = vec![0.0; self.classes];
        let mut correct = 0usize;
        for (i, &yi) in y.iter().enumerate() {
            let predicted = if self.kind == LossKind::Logistic {
                (dot(data.row(i), w) > 0.0) as u32
            } else {
                self.logits(w, data.row(i), &mut logits);
                argmax(&logits) as u32
            };
            correct += (predicted == yi) as usize;
        }
        Ok(Some(correct as f64 / y.len() as f64))
    }

    fn logits(&self, w: &[f64], x: &[f64], out: &mut [f64]) {
        let p = x.len();
        for (c, z) in out.iter_mut().enumerate() {
            let block = &w[c * (p + 1)..(c + 1) * (p + 1)];
            *z = dot(&block[..p], x) + block[p];
        }
    }
}

/// Mean gradient of `loss` over the user's full local set at `model`.
pub fn local_gradient(loss: &Loss, model: &Model, data: &UserDataset) -> Result<Vec<f64>> {
    loss.gradient(model.weights(), data)
}

/// Global objective: the unweighted mean of the users' local losses.
pub fn global_loss(loss: &Loss, w: &[f64], datasets: &[UserDataset]) -> Result<f64> {
    if datasets.is_empty() {
        return Err(TrainerError::NoUsers);
    }
    let mut total = 0.0;
    for d in datasets {
        total += loss.value(w, d)?;
    }
    Ok(total / datasets.len() as f64)
}

/// Curvature and minimizer of a quadratic global objective.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticGeometry {
    /// Smallest Hessian eigenvalue.
    pub strong_convexity: f64,
    /// Largest Hessian eigenvalue.
    pub smoothness: f64,
    pub optimum: Vec<f64>,
    pub optimal_loss: f64,
}

impl QuadraticGeometry {
    pub fn from_datasets(loss: &Loss, datasets: &[UserDataset]) -> Result<Self> {
        if loss.kind != LossKind::Quadratic {
            return Err(TrainerError::InvalidLoss(format!(
                "curvature is only computed for quadratic losses, not {}",
                loss.kind
            )));
        }
        let first = datasets.first().ok_or(TrainerError::NoUsers)?;
        let p = first.feature_dim;
        let m = datasets.len() as f64;
        let mut h = DMatrix::<f64>::zeros(p, p);
        let mut b = DVector::<f64>::zeros(p);
        for data in datasets {
            let Targets::Real(y) = &data.targets else {
                return Err(TrainerError::TargetKind);
            };
            if data.feature_dim != p {
                return Err(TrainerError::DimensionMismatch {
                    expected: p,
                    actual: data.feature_dim,
                });
            }
            let x = DMatrix::from_row_slice(data.len(), p, &data.features);
            let scale = 1.0 / (m * data.len() as f64);
            h += x.transpose() * &x * scale;
            b += x.transpose() * DVector::from_column_slice(y) * scale;
        }
        for i in 0..p {
            h[(i, i)] += loss.ridge;
        }
        let eig = SymmetricEigen::new(h.clone());
        let lambda = eig.eigenvalues.min();
        let mu = eig.eigenvalues.max();
        if !(lambda > 0.0) {
            return Err(TrainerError::NotStronglyConvex(lambda));
        }
        let optimum = h
            .cholesky()
            .ok_or(TrainerError::NotStronglyConvex(lambda))?
            .solve(&b);
        let optimum: Vec<f64> = optimum.iter().copied().collect();
        let optimal_loss = global_loss(loss, &optimum, datasets)?;
        Ok(Self {
            strong_convexity: lambda,
            smoothness: mu,
            optimum,
            optimal_loss,
        })
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

fn softmax_in_place(z: &mut [f64]) {
    let m = z.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let mut s = 0.0;
    for v in z.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    for v in z.iter_mut() {
        *v /= s;
    }
}

// first maximum wins
fn argmax(z: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in z.iter().enumerate() {
        if v > z[best] {
            best = i;
        }
    }
    best
}
