//! Metrics files.
//!
//! `metrics.csv` has one row per round with the fixed header
//! [`METRICS_HEADER`]. Per-user columns join values with `;` in user order;
//! optional values are left empty. `summary.json` holds a [`Summary`].

use std::fs;
use std::io;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::experiment::RunOutcome;

pub const METRICS_HEADER: [&str; 10] = [
    "t",
    "loss",
    "accuracy",
    "grad_norm_sq",
    "deltas",
    "budgets",
    "analytic_bits",
    "wire_bits",
    "variance_bound",
    "g_sq",
];

pub const CURVES_HEADER: [&str; 6] = [
    "policy",
    "t",
    "loss",
    "accuracy",
    "analytic_bits",
    "wire_bits",
];

pub const FINAL_HEADER: [&str; 6] = [
    "policy",
    "final_loss",
    "final_accuracy",
    "test_accuracy",
    "total_analytic_bits",
    "total_wire_bits",
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub policy: String,
    pub seed: u64,
    /// SHA-256 of the config file bytes.
    pub config_hash: String,
    pub users: usize,
    pub dim: usize,
    pub iterations: u64,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub final_accuracy: Option<f64>,
    pub test_accuracy: Option<f64>,
    pub total_analytic_bits: f64,
    pub total_wire_bits: u64,
    pub uniform_budget: Option<u32>,
    pub topq_q: Option<usize>,
    pub optimal_loss: Option<f64>,
    pub convergence_bound: Option<f64>,
}

pub fn config_hash(source: &str) -> String {
    Sha256::digest(source.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

impl Summary {
    pub fn new(outcome: &RunOutcome, seed: u64, source: &str) -> Self {
        let run = &outcome.run;
        let last = run.final_metrics();
        Summary {
            policy: run.policy.to_string(),
            seed,
            config_hash: config_hash(source),
            users: last.deltas.len(),
            dim: run.weights.len(),
            iterations: last.t,
            initial_loss: run.initial_loss,
            final_loss: last.loss,
            final_accuracy: last.accuracy,
            test_accuracy: outcome.test_accuracy,
            total_analytic_bits: run.total_analytic_bits(),
            total_wire_bits: run.total_wire_bits(),
            uniform_budget: run.uniform_budget,
            topq_q: run.topq_q,
            optimal_loss: outcome.optimal_loss,
            convergence_bound: outcome.convergence_bound,
        }
    }
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(";")
}

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> io::Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.into_inner().map_err(|e| e.into_error())
}

pub fn metrics_csv(outcome: &RunOutcome) -> io::Result<Vec<u8>> {
    csv_bytes(
        &METRICS_HEADER,
        outcome.run.metrics.iter().map(|r| {
            vec![
                r.t.to_string(),
                r.loss.to_string(),
                opt(r.accuracy),
                r.grad_norm_sq.to_string(),
                join(&r.deltas),
                r.budgets.as_deref().map(join).unwrap_or_default(),
                join(&r.analytic_bits),
                join(&r.wire_bits),
                opt(r.variance_bound),
                opt(r.g_sq),
            ]
        }),
    )
}

pub fn curves_csv(outcomes: &[RunOutcome]) -> io::Result<Vec<u8>> {
    csv_bytes(
        &CURVES_HEADER,
        outcomes.iter().flat_map(|o| {
            o.run.metrics.iter().map(move |r| {
                vec![
                    o.run.policy.to_string(),
                    r.t.to_string(),
                    r.loss.to_string(),
                    opt(r.accuracy),
                    r.analytic_bits.iter().sum::<f64>().to_string(),
                    r.wire_bits.iter().sum::<u64>().to_string(),
                ]
            })
        }),
    )
}

pub fn final_csv(summaries: &[Summary]) -> io::Result<Vec<u8>> {
    csv_bytes(
        &FINAL_HEADER,
        summaries.iter().map(|s| {
            vec![
                s.policy.clone(),
                s.final_loss.to_string(),
                opt(s.final_accuracy),
                opt(s.test_accuracy),
                s.total_analytic_bits.to_string(),
                s.total_wire_bits.to_string(),
            ]
        }),
    )
}

pub fn summary_json(summary: &Summary) -> io::Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(summary).map_err(io::Error::other)?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// Writes through a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}
