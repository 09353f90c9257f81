//! Turns a validated config into datasets and a trainer configuration, and
//! runs policies on them.

use macfl::trainer::{
    convergence_bound, global_loss, initial_weights, run_training, LearningRate, LossKind,
    LossSpec, Policy, QuadraticGeometry, TrainerError, TrainingConfig, TrainingRun, UserDataset,
};
use thiserror::Error;

use crate::config::{DatasetDescriptor, ExperimentConfig, Schedule};
use crate::data::{self, DataError, SyntheticSpec};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Trainer(#[from] TrainerError),
}

/// Everything a run needs, built once and shared across policies.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub datasets: Vec<UserDataset>,
    pub test: Option<UserDataset>,
    pub training: TrainingConfig,
    pub loss_spec: LossSpec,
    /// Present for quadratic losses.
    pub geometry: Option<QuadraticGeometry>,
}

pub fn load_datasets(
    config: &ExperimentConfig,
) -> Result<(Vec<UserDataset>, Option<UserDataset>), ExperimentError> {
    match &config.data {
        DatasetDescriptor::Synthetic {
            samples_per_user,
            noise,
            test_samples,
        } => {
            let spec = SyntheticSpec {
                kind: config.loss.kind(),
                samples_per_user: samples_per_user.clone(),
                features: config.features,
                classes: config.loss.classes(),
                scale_factors: config.scale_factors.clone(),
                noise: *noise,
                label_sets: config.label_sets.clone(),
                test_samples: *test_samples,
            };
            let generated = data::generate_synthetic(&spec, config.data_seed)?;
            Ok((generated.users, generated.test))
        }
        DatasetDescriptor::Mnist(files) => {
            let images =
                data::load_mnist_idx(&files.images, &files.labels).map_err(DataError::from)?;
            if images.pixels() != config.features {
                return Err(DataError::Invalid(format!(
                    "images have {} pixels, config expects {}",
                    images.pixels(),
                    config.features
                ))
                .into());
            }
            let users = data::partition_by_labels(
                &images,
                &config.label_sets,
                files.samples_per_user.as_deref(),
            )?;
            // rescale per user after partitioning
            let users = users
                .into_iter()
                .zip(&config.scale_factors)
                .map(|(u, &s)| scale_features(u, s))
                .collect::<Result<Vec<_>, _>>()?;
            let test = match &files.test {
                Some((i, l)) => {
                    let t = data::load_mnist_idx(i, l).map_err(DataError::from)?;
                    let p = t.pixels();
                    Some(UserDataset::classification(t.features, p, t.labels)?)
                }
                None => None,
            };
            Ok((users, test))
        }
    }
}

fn scale_features(data: UserDataset, s: f64) -> Result<UserDataset, TrainerError> {
    if s == 1.0 {
        return Ok(data);
    }
    let p = data.feature_dim();
    let x = (0..data.len())
        .flat_map(|i| data.row(i).iter().map(move |v| v * s))
        .collect::<Vec<_>>();
    let macfl::trainer::Targets::Labels(y) = data.targets() else {
        return Err(TrainerError::TargetKind);
    };
    UserDataset::classification(x, p, y.clone())
}

pub fn prepare(config: &ExperimentConfig) -> Result<Prepared, ExperimentError> {
    let (datasets, test) = load_datasets(config)?;
    let d = config.dim();
    let geometry = match config.loss.kind() {
        LossKind::Quadratic => Some(QuadraticGeometry::from_datasets(&config.loss, &datasets)?),
        _ => None,
    };
    let learning_rate = match config.schedule {
        Schedule::Constant => LearningRate::Constant(config.learning_rate.expect("validated")),
        Schedule::InverseT => LearningRate::InverseT {
            lambda: match &geometry {
                Some(g) => g.strong_convexity,
                // ridge-regularized classifiers are ridge-strongly convex
                None => config.loss.ridge(),
            },
        },
    };
    let gradient_bound = match (config.gradient_bound, &geometry) {
        (Some(l), _) => Some(l),
        (None, Some(g)) => {
            // largest gradient norm on the ball around w* reaching w0
            let w0 = initial_weights(config.init, d, config.seed)?;
            let radius = config.domain_radius.unwrap_or_else(|| {
                w0.iter()
                    .zip(&g.optimum)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt()
            });
            Some(g.smoothness * radius).filter(|l| *l > 0.0)
        }
        (None, None) => None,
    };
    let loss_spec = LossSpec::new(
        config.loss.kind(),
        geometry.as_ref().map(|g| g.strong_convexity),
        geometry.as_ref().map(|g| g.smoothness),
        gradient_bound,
    )?;
    let training = TrainingConfig {
        mac: config.mac.clone(),
        loss: config.loss,
        policy: config.policy,
        iterations: config.iterations,
        seed: config.seed,
        learning_rate,
        init: config.init,
        eval_every: config.eval_every,
        topq_scalar_bits: config.topq_scalar_bits,
        side_channel_bits: config.side_channel_bits,
        gradient_bound,
    };
    Ok(Prepared {
        datasets,
        test,
        training,
        loss_spec,
        geometry,
    })
}

/// A finished run plus derived summary values.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub run: TrainingRun,
    pub test_accuracy: Option<f64>,
    pub optimal_loss: Option<f64>,
    pub convergence_bound: Option<f64>,
}

pub fn run_policy(prepared: &Prepared, policy: Policy) -> Result<RunOutcome, ExperimentError> {
    let mut training = prepared.training.clone();
    training.policy = policy;
    let run = run_training(&training, &prepared.datasets)?;
    let test_accuracy = match &prepared.test {
        Some(t) => training.loss.accuracy(&run.weights, t)?,
        None => None,
    };
    let optimal_loss = match &prepared.geometry {
        Some(g) => Some(global_loss(&training.loss, &g.optimum, &prepared.datasets)?),
        None => None,
    };
    let convergence_bound = match (prepared.loss_spec.constants(), &training.learning_rate) {
        (Ok(_), LearningRate::InverseT { .. }) => {
            convergence_bound(&prepared.loss_spec, &run.metrics, run.metrics.len()).ok()
        }
        _ => None,
    };
    Ok(RunOutcome {
        run,
        test_accuracy,
        optimal_loss,
        convergence_bound,
    })
}
