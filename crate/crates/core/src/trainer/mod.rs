//! Federated gradient descent over the MAC.
//!
//! Each round every user computes its full-batch local gradient and reports
//! `(g_min, g_max)`; the server picks per-user budgets according to the
//! policy, users quantize and transmit under the capacity region, and the
//! server averages the decoded gradients and takes a step.

mod bound;
mod loss;

pub use bound::{bound_from_variances, convergence_bound, quantization_variance, LossSpec};
pub use loss::{
    global_loss, local_gradient, Loss, LossKind, QuadraticGeometry, Targets, UserDataset,
};

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::allocator::{allocate, uniform_allocation, AllocationProblem, AllocatorError};
use crate::baselines::{
    log2_binomial, max_feasible_q, sign_quantize, terngrad_quantize, topq_quantize, BaselineError,
    TopQConfig,
};
use crate::channel::{CapacityRegion, ChannelError, MacSpec};
use crate::quantizer::{self, QuantizerError};
use crate::rng::QuantizerRng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainerError {
    #[error("training needs at least one user")]
    NoUsers,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("expected {expected} users, got {actual}")]
    UserCountMismatch { expected: usize, actual: usize },
    #[error("feature entry {0} is not finite")]
    NonFiniteData(usize),
    #[error("dataset targets do not match the loss kind")]
    TargetKind,
    #[error("label {label} outside 0..{classes}")]
    LabelOutOfRange { label: u32, classes: usize },
    #[error("invalid loss: {0}")]
    InvalidLoss(String),
    #[error("objective is not strongly convex (smallest Hessian eigenvalue {0})")]
    NotStronglyConvex(f64),
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("policy {policy} cannot run on this channel: {detail}")]
    InfeasiblePolicy { policy: Policy, detail: String },
    #[error("expected {expected} user payloads, got {actual}")]
    MissingPayload { expected: usize, actual: usize },
    #[error("update at iteration {0} produced a non-finite model")]
    NonFiniteUpdate(u64),
    #[error("round {0} is missing from the log")]
    MissingRound(u64),
    #[error("convergence bound needs strong convexity, smoothness and a gradient bound, plus a variance term for every round")]
    BoundUnavailable,
    #[error(transparent)]
    Quantizer(#[from] QuantizerError),
    #[error(transparent)]
    Allocator(#[from] AllocatorError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
}

pub type Result<T> = std::result::Result<T, TrainerError>;

/// Model parameters and the index of the next update (starting at 1).
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    w: Vec<f64>,
    t: u64,
}

impl Model {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if let Some(i) = w.iter().position(|x| !x.is_finite()) {
            return Err(TrainerError::NonFiniteData(i));
        }
        Ok(Self { w, t: 1 })
    }

    pub fn weights(&self) -> &[f64] {
        &self.w
    }

    pub fn iteration(&self) -> u64 {
        self.t
    }

    pub fn into_weights(self) -> Vec<f64> {
        self.w
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LearningRate {
    Constant(f64),
    /// `1 / (lambda t)`
    InverseT {
        lambda: f64,
    },
}

impl LearningRate {
    pub fn step(&self, t: u64) -> f64 {
        match *self {
            LearningRate::Constant(eta) => eta,
            LearningRate::InverseT { lambda } => 1.0 / (lambda * t as f64),
        }
    }

    fn validate(&self) -> Result<()> {
        let v = match *self {
            LearningRate::Constant(eta) => eta,
            LearningRate::InverseT { lambda } => lambda,
        };
        if v.is_finite() && v > 0.0 {
            Ok(())
        } else {
            Err(TrainerError::InvalidConfig(format!(
                "learning rate parameter must be finite and > 0, got {v}"
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Init {
    Zeros,
    Gaussian { std: f64 },
}

/// `w_{t+1} = w_t - eta_t g`.
pub fn update(model: &Model, g: &[f64], schedule: &LearningRate) -> Result<Model> {
    if g.len() != model.w.len() {
        return Err(TrainerError::DimensionMismatch {
            expected: model.w.len(),
            actual: g.len(),
        });
    }
    let eta = schedule.step(model.t);
    let w: Vec<f64> = model.w.iter().zip(g).map(|(w, g)| w - eta * g).collect();
    if w.iter().any(|x| !x.is_finite()) {
        return Err(TrainerError::NonFiniteUpdate(model.t));
    }
    Ok(Model { w, t: model.t + 1 })
}

/// Mean of the decoded user gradients.
pub fn aggregate(decoded: &[Vec<f64>], users: usize) -> Result<Vec<f64>> {
    if users == 0 {
        return Err(TrainerError::NoUsers);
    }
    if decoded.len() != users {
        return Err(TrainerError::MissingPayload {
            expected: users,
            actual: decoded.len(),
        });
    }
    let d = decoded[0].len();
    let mut out = vec![0.0; d];
    for g in decoded {
        if g.len() != d {
            return Err(TrainerError::DimensionMismatch {
                expected: d,
                actual: g.len(),
            });
        }
        for (o, x) in out.iter_mut().zip(g) {
            *o += x;
        }
    }
    let inv = 1.0 / users as f64;
    out.iter_mut().for_each(|o| *o *= inv);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Policy {
    #[serde(rename = "mac-aware")]
    MacAware,
    #[serde(rename = "uniform")]
    Uniform,
    #[serde(rename = "full-resolution")]
    FullResolution,
    #[serde(rename = "signsgd")]
    SignSgd,
    #[serde(rename = "terngrad")]
    TernGrad,
    #[serde(rename = "top-q")]
    TopQ,
}

impl Policy {
    pub const ALL: [Policy; 6] = [
        Policy::FullResolution,
        Policy::MacAware,
        Policy::Uniform,
        Policy::TopQ,
        Policy::SignSgd,
        Policy::TernGrad,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Policy::MacAware => "mac-aware",
            Policy::Uniform => "uniform",
            Policy::FullResolution => "full-resolution",
            Policy::SignSgd => "signsgd",
            Policy::TernGrad => "terngrad",
            Policy::TopQ => "top-q",
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Policy {
    type Err = TrainerError;
    fn from_str(s: &str) -> Result<Self> {
        Policy::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| TrainerError::InvalidConfig(format!("unknown policy `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    pub mac: MacSpec,
    pub loss: Loss,
    pub policy: Policy,
    pub iterations: u64,
    pub seed: u64,
    pub learning_rate: LearningRate,
    pub init: Init,
    /// Accuracy is evaluated every `eval_every` rounds and after the last.
    pub eval_every: u64,
    pub topq_scalar_bits: u32,
    /// Bits each user spends per round on side information (ranges or
    /// scales). Zero models a free side channel.
    pub side_channel_bits: f64,
    /// `L` in `G_t^2`; when set, rounds log `G_t^2`.
    pub gradient_bound: Option<f64>,
}

/// One logged round. `loss` and `accuracy` describe the model after the
/// round's update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub t: u64,
    pub loss: f64,
    pub accuracy: Option<f64>,
    /// Squared norm of the exact (unquantized) average gradient.
    pub grad_norm_sq: f64,
    pub deltas: Vec<f64>,
    pub budgets: Option<Vec<u32>>,
    pub analytic_bits: Vec<f64>,
    pub wire_bits: Vec<u64>,
    /// `(1/M^2) sum_m d Delta^2 / (4 (k - 1)^2)`; zero for exact gradients
    /// and absent for codecs without a level grid.
    pub variance_bound: Option<f64>,
    pub g_sq: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingRun {
    pub policy: Policy,
    pub initial_loss: f64,
    pub metrics: Vec<RoundMetrics>,
    pub weights: Vec<f64>,
    /// Fixed `k` for the uniform policy.
    pub uniform_budget: Option<u32>,
    /// Fixed `q` for the top-q policy.
    pub topq_q: Option<usize>,
}

impl TrainingRun {
    pub fn final_metrics(&self) -> &RoundMetrics {
        self.metrics.last().expect("at least one round")
    }

    pub fn total_analytic_bits(&self) -> f64 {
        self.metrics.iter().flat_map(|r| &r.analytic_bits).sum()
    }

    pub fn total_wire_bits(&self) -> u64 {
        self.metrics.iter().flat_map(|r| &r.wire_bits).sum()
    }
}

enum Plan {
    MacAware(CapacityRegion),
    Uniform(u32),
    Full,
    Sign,
    Tern,
    TopQ(TopQConfig),
}

fn infeasible(policy: Policy, detail: impl fmt::Display) -> TrainerError {
    TrainerError::InfeasiblePolicy {
        policy,
        detail: detail.to_string(),
    }
}

fn plan(config: &TrainingConfig) -> Result<Plan> {
    let mac = &config.mac;
    let users = mac.users();
    let d = mac.dim();
    let policy = config.policy;
    let side = config.side_channel_bits;
    let fixed_rate = |bits: f64| -> Result<()> {
        mac.transmit(&vec![bits + side; users])
            .map_err(|e| infeasible(policy, e))
    };
    Ok(match policy {
        Policy::MacAware => {
            let region = mac.region().reserve(side)?;
            AllocationProblem::with_region(vec![0.0; users], region.clone(), d)?
                .check_minimum_budgets()
                .map_err(|e| infeasible(policy, e))?;
            Plan::MacAware(region)
        }
        Policy::Uniform => {
            let region = mac.region().reserve(side)?;
            let problem = AllocationProblem::with_region(vec![0.0; users], region, d)?;
            match uniform_allocation(&problem)? {
                Some(a) => Plan::Uniform(a.k_int[0]),
                None => {
                    return Err(infeasible(
                        policy,
                        "no common budget k >= 2 fits every capacity constraint",
                    ))
                }
            }
        }
        Policy::FullResolution => Plan::Full,
        Policy::SignSgd => {
            fixed_rate(d as f64)?;
            Plan::Sign
        }
        Policy::TernGrad => {
            fixed_rate(d as f64 * 3f64.log2())?;
            Plan::Tern
        }
        Policy::TopQ => {
            let q = max_feasible_q(&mac.region(), d, config.topq_scalar_bits)?;
            if q == 0 {
                return Err(infeasible(policy, "even q = 1 exceeds the capacity region"));
            }
            Plan::TopQ(TopQConfig::new(q, config.topq_scalar_bits, d)?)
        }
    })
}

/// Starting point for `init`; Gaussian draws are keyed on `seed`.
pub fn initial_weights(init: Init, d: usize, seed: u64) -> Result<Vec<f64>> {
    match init {
        Init::Zeros => Ok(vec![0.0; d]),
        Init::Gaussian { std } => {
            let normal = Normal::new(0.0, std).map_err(|e| {
                TrainerError::InvalidConfig(format!("initial standard deviation {std}: {e}"))
            })?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_1417_0000_0001);
            Ok((0..d).map(|_| normal.sample(&mut rng)).collect())
        }
    }
}

fn training_accuracy(loss: &Loss, w: &[f64], datasets: &[UserDataset]) -> Result<Option<f64>> {
    let mut correct = 0.0;
    let mut total = 0usize;
    for d in datasets {
        match loss.accuracy(w, d)? {
            Some(a) => {
                correct += a * d.len() as f64;
                total += d.len();
            }
            None => return Ok(None),
        }
    }
    Ok(Some(correct / total as f64))
}

/// Runs `config.iterations` rounds of quantized federated GD.
pub fn run_training(config: &TrainingConfig, datasets: &[UserDataset]) -> Result<TrainingRun> {
    let users = config.mac.users();
    let d = config.mac.dim();
    if datasets.len() != users {
        return Err(TrainerError::UserCountMismatch {
            expected: users,
            actual: datasets.len(),
        });
    }
    for data in datasets {
        let need = config.loss.dim(data.feature_dim());
        if need != d {
            return Err(TrainerError::DimensionMismatch {
                expected: d,
                actual: need,
            });
        }
    }
    if config.iterations == 0 {
        return Err(TrainerError::InvalidConfig(
            "iterations must be at least 1".into(),
        ));
    }
    if config.eval_every == 0 {
        return Err(TrainerError::InvalidConfig(
            "eval_every must be at least 1".into(),
        ));
    }
    if !(config.side_channel_bits.is_finite() && config.side_channel_bits >= 0.0) {
        return Err(ChannelError::InvalidOverhead(config.side_channel_bits).into());
    }
    if let Some(l) = config.gradient_bound {
        if !(l.is_finite() && l > 0.0) {
            return Err(TrainerError::InvalidConfig(format!(
                "gradient bound must be finite and > 0, got {l}"
            )));
        }
    }
    config.learning_rate.validate()?;
    let plan = plan(config)?;

    let rng = QuantizerRng::new(config.seed);
    let mut model = Model::new(initial_weights(config.init, d, config.seed)?)?;
    let initial_loss = global_loss(&config.loss, model.weights(), datasets)?;
    let side = config.side_channel_bits;
    let mut metrics = Vec::with_capacity(config.iterations as usize);

    for t in 1..=config.iterations {
        let grads = datasets
            .iter()
            .map(|data| local_gradient(&config.loss, &model, data))
            .collect::<Result<Vec<_>>>()?;
        let mut deltas = Vec::with_capacity(users);
        for g in &grads {
            let (lo, hi) = quantizer::range_of(g)?;
            deltas.push(hi - lo);
        }
        let exact = aggregate(&grads, users)?;
        let grad_norm_sq = exact.iter().map(|x| x * x).sum();

        let mut budgets = None;
        let mut variance = None;
        let mut analytic = Vec::with_capacity(users);
        let mut wire = Vec::with_capacity(users);
        let mut decoded = Vec::with_capacity(users);
        match &plan {
            Plan::MacAware(_) | Plan::Uniform(_) => {
                let k = match &plan {
                    Plan::MacAware(region) => {
                        allocate(&AllocationProblem::with_region(
                            deltas.clone(),
                            region.clone(),
                            d,
                        )?)?
                        .k_int
                    }
                    Plan::Uniform(k) => vec![*k; users],
                    _ => unreachable!(),
                };
                for (m, g) in grads.iter().enumerate() {
                    let q = quantizer::quantize(g, k[m], &rng.stream(t, m))?;
                    analytic.push(q.analytic_bits());
                    wire.push(q.wire_bits() as u64);
                    decoded.push(quantizer::dequantize(&q));
                }
                variance = Some(quantization_variance(&deltas, &k, d)?);
                budgets = Some(k);
            }
            Plan::Full => {
                for g in &grads {
                    analytic.push(64.0 * d as f64);
                    wire.push(64 * d as u64);
                    decoded.push(g.clone());
                }
                variance = Some(0.0);
            }
            Plan::Sign => {
                for g in &grads {
                    let p = sign_quantize(g)?;
                    analytic.push(p.rate_bits());
                    wire.push(d as u64);
                    decoded.push(p.decode());
                }
            }
            Plan::Tern => {
                for (m, g) in grads.iter().enumerate() {
                    let p = terngrad_quantize(g, &rng.stream(t, m))?;
                    analytic.push(p.rate_bits());
                    wire.push(2 * d as u64);
                    decoded.push(p.decode());
                }
            }
            Plan::TopQ(cfg) => {
                let wire_bits = log2_binomial(d, cfg.q).ceil() as u64 + cfg.scalar_bits as u64;
                for g in &grads {
                    let p = topq_quantize(g, *cfg)?;
                    analytic.push(p.rate_bits);
                    wire.push(wire_bits);
                    decoded.push(p.decode());
                }
            }
        }
        if !matches!(plan, Plan::Full) {
            let charged: Vec<f64> = match plan {
                Plan::TopQ(_) => analytic.clone(),
                _ => analytic.iter().map(|b| b + side).collect(),
            };
            config.mac.transmit(&charged)?;
        }

        let g_hat = aggregate(&decoded, users)?;
        model = update(&model, &g_hat, &config.learning_rate)?;
        let loss = global_loss(&config.loss, model.weights(), datasets)?;
        let accuracy = if t % config.eval_every == 0 || t == config.iterations {
            training_accuracy(&config.loss, model.weights(), datasets)?
        } else {
            None
        };
        let g_sq = match (variance, config.gradient_bound) {
            (Some(v), Some(l)) => Some(v + l * l),
            _ => None,
        };
        metrics.push(RoundMetrics {
            t,
            loss,
            accuracy,
            grad_norm_sq,
            deltas,
            budgets,
            analytic_bits: analytic,
            wire_bits: wire,
            variance_bound: variance,
            g_sq,
        });
    }

    Ok(TrainingRun {
        policy: config.policy,
        initial_loss,
        metrics,
        weights: model.into_weights(),
        uniform_budget: match plan {
            Plan::Uniform(k) => Some(k),
            _ => None,
        },
        topq_q: match plan {
            Plan::TopQ(cfg) => Some(cfg.q),
            _ => None,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn quadratic_users(seed: u64, scales: &[f64], n: usize, p: usize) -> Vec<UserDataset> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w_true: Vec<f64> = (0..p).map(|_| rng.random_range(-1.0..1.0)).collect();
        scales
            .iter()
            .map(|&s| {
                let x: Vec<f64> = (0..n * p).map(|_| rng.random_range(-1.0..1.0)).collect();
                let y = (0..n)
                    .map(|i| s * loss::dot(&x[i * p..(i + 1) * p], &w_true))
                    .collect();
                let x = x.into_iter().map(|v| v * s).collect();
                UserDataset::regression(x, p, y).unwrap()
            })
            .collect()
    }

    fn config(policy: Policy, powers: Vec<f64>, d: usize, iterations: u64) -> TrainingConfig {
        TrainingConfig {
            mac: MacSpec::new(powers, 1.0, 2 * d as u64, d).unwrap(),
            loss: Loss::quadratic(0.0),
            policy,
            iterations,
            seed: 7,
            learning_rate: LearningRate::Constant(0.1),
            init: Init::Zeros,
            eval_every: 10,
            topq_scalar_bits: 32,
            side_channel_bits: 0.0,
            gradient_bound: None,
        }
    }

    #[test]
    fn update_examples() {
        let m = Model::new(vec![1.0, -2.0]).unwrap();
        let same = update(&m, &[0.0, 0.0], &LearningRate::Constant(0.5)).unwrap();
        assert_eq!(same.weights(), m.weights());
        assert_eq!(same.iteration(), 2);
        let origin = update(&m, &[1.0, -2.0], &LearningRate::InverseT { lambda: 1.0 }).unwrap();
        assert_eq!(origin.weights(), &[0.0, 0.0]);
        assert!(matches!(
            update(&m, &[f64::INFINITY, 0.0], &LearningRate::Constant(1.0)),
            Err(TrainerError::NonFiniteUpdate(1))
        ));
    }

    #[test]
    fn aggregate_examples() {
        assert_eq!(aggregate(&[vec![1.0, 2.0]], 1).unwrap(), vec![1.0, 2.0]);
        assert_eq!(
            aggregate(&[vec![1.0, -3.0], vec![-1.0, 3.0]], 2).unwrap(),
            vec![0.0, 0.0]
        );
        assert_eq!(
            aggregate(&[vec![1.0]], 2),
            Err(TrainerError::MissingPayload {
                expected: 2,
                actual: 1
            })
        );
    }

    #[test]
    fn aggregate_is_unbiased() {
        let g1 = [0.3, -1.2, 0.9, 2.0];
        let g2 = [1.1, 0.4, -0.7, 0.05];
        let rng = QuantizerRng::new(11);
        let trials = 20_000;
        let mut mean = [0.0; 4];
        let mut sq = [0.0; 4];
        for t in 0..trials {
            let a = quantizer::dequantize(&quantizer::quantize(&g1, 3, &rng.stream(t, 0)).unwrap());
            let b = quantizer::dequantize(&quantizer::quantize(&g2, 3, &rng.stream(t, 1)).unwrap());
            let avg = aggregate(&[a, b], 2).unwrap();
            for i in 0..4 {
                mean[i] += avg[i];
                sq[i] += avg[i] * avg[i];
            }
        }
        for i in 0..4 {
            let m = mean[i] / trials as f64;
            let var = sq[i] / trials as f64 - m * m;
            let truth = 0.5 * (g1[i] + g2[i]);
            assert!(
                (m - truth).abs() <= 3.0 * (var / trials as f64).sqrt() + 1e-12,
                "entry {i}"
            );
        }
    }

    #[test]
    fn unquantized_gd_converges_geometrically() {
        let data = quadratic_users(1, &[1.0], 50, 4);
        let loss = Loss::quadratic(0.0);
        let geo = QuadraticGeometry::from_datasets(&loss, &data).unwrap();
        let eta = 1.0 / geo.smoothness;
        let mut model = Model::new(vec![0.0; 4]).unwrap();
        let err = |w: &[f64]| {
            w.iter()
                .zip(&geo.optimum)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt()
        };
        let e0 = err(model.weights());
        for _ in 0..200 {
            let g = local_gradient(&loss, &model, &data[0]).unwrap();
            model = update(&model, &g, &LearningRate::Constant(eta)).unwrap();
        }
        let rate = 1.0 - geo.strong_convexity / geo.smoothness;
        assert!(err(model.weights()) <= e0 * rate.powi(200) * (1.0 + 1e-9) + 1e-12);
    }

    #[test]
    fn deterministic() {
        let data = quadratic_users(2, &[3.0, 1.0], 30, 6);
        let cfg = config(Policy::MacAware, vec![80.0, 20.0], 6, 40);
        assert_eq!(
            run_training(&cfg, &data).unwrap(),
            run_training(&cfg, &data).unwrap()
        );
    }

    #[test]
    fn symmetric_mac_aware_matches_uniform() {
        let data = quadratic_users(3, &[1.0], 30, 5);
        let data = vec![data[0].clone(), data[0].clone()];
        let a = run_training(&config(Policy::MacAware, vec![50.0, 50.0], 5, 30), &data).unwrap();
        let b = run_training(&config(Policy::Uniform, vec![50.0, 50.0], 5, 30), &data).unwrap();
        assert_eq!(a.metrics, b.metrics);
    }

    #[test]
    fn every_policy_runs_and_respects_the_channel() {
        let data = quadratic_users(4, &[5.0, 1.0], 20, 8);
        for policy in Policy::ALL {
            let mut cfg = config(policy, vec![95.0, 5.0], 8, 15);
            // the weak user has about 20 bits per round at d = 8
            cfg.topq_scalar_bits = 8;
            let run = run_training(&cfg, &data).unwrap();
            assert_eq!(run.metrics.len(), 15);
            assert!(run.metrics.iter().map(|r| r.t).eq(1..=15));
            if policy != Policy::FullResolution {
                let spec = MacSpec::new(vec![95.0, 5.0], 1.0, 16, 8).unwrap();
                for r in &run.metrics {
                    assert!(
                        spec.is_feasible(&r.analytic_bits).unwrap(),
                        "{policy} round {}",
                        r.t
                    );
                }
            }
            assert_eq!(run.metrics[14].accuracy, None);
        }
    }

    #[test]
    fn infeasible_policy_is_rejected_up_front() {
        // one channel use per dimension at low power: ternary symbols cannot fit
        let data = quadratic_users(5, &[1.0, 1.0], 10, 4);
        let mut cfg = config(Policy::TernGrad, vec![1.0, 1.0], 4, 5);
        cfg.mac = MacSpec::new(vec![1.0, 1.0], 1.0, 4, 4).unwrap();
        assert!(matches!(
            run_training(&cfg, &data),
            Err(TrainerError::InfeasiblePolicy {
                policy: Policy::TernGrad,
                ..
            })
        ));
        cfg.policy = Policy::MacAware;
        assert!(matches!(
            run_training(&cfg, &data),
            Err(TrainerError::InfeasiblePolicy { .. })
        ));
        cfg.policy = Policy::FullResolution;
        assert!(run_training(&cfg, &data).is_ok());
    }

    #[test]
    fn side_channel_shrinks_the_budget() {
        let data = quadratic_users(6, &[1.0, 1.0], 10, 4);
        let mut cfg = config(Policy::Uniform, vec![80.0, 20.0], 4, 3);
        let free = run_training(&cfg, &data).unwrap().uniform_budget.unwrap();
        cfg.side_channel_bits = 4.0;
        let charged = run_training(&cfg, &data).unwrap().uniform_budget.unwrap();
        assert!(charged < free, "{charged} vs {free}");
    }

    #[test]
    fn logged_g_squared_matches_the_identity() {
        let data = quadratic_users(8, &[4.0, 1.0], 20, 6);
        let mut cfg = config(Policy::MacAware, vec![80.0, 20.0], 6, 20);
        cfg.gradient_bound = Some(3.0);
        let run = run_training(&cfg, &data).unwrap();
        for r in &run.metrics {
            let k = r.budgets.as_ref().unwrap();
            let mut sum = 0.0;
            for (&delta, &k) in r.deltas.iter().zip(k) {
                sum += quantizer::variance_bound(delta, k, 6).unwrap();
            }
            assert_eq!(r.g_sq.unwrap(), sum / 4.0 + 9.0);
        }
    }

    #[test]
    fn policy_names_round_trip() {
        for p in Policy::ALL {
            assert_eq!(p.name().parse::<Policy>().unwrap(), p);
        }
        assert!("qsgd".parse::<Policy>().is_err());
    }
}
