//! Subcommand bodies. Each returns its report or writes its files; `main`
//! only parses flags and maps errors to the exit code.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use macfl::allocator::{
    allocate, objective, solve_relaxed, solve_two_user, uniform_allocation, AllocationProblem,
};
use macfl::channel::UserSet;
use macfl::trainer::Policy;

use crate::config::ExperimentConfig;
use crate::experiment::{prepare, run_policy, RunOutcome};
use crate::output::{self, Summary};

fn list(values: impl IntoIterator<Item = String>) -> String {
    format!("({})", values.into_iter().collect::<Vec<_>>().join(", "))
}

/// Subset capacities, per-iteration bits and budget caps.
pub fn capacity_report(config: &ExperimentConfig) -> Result<String> {
    let mac = &config.mac;
    let mut out = String::new();
    writeln!(
        out,
        "users {}  dim {}  channel uses {}  noise variance {}",
        mac.users(),
        mac.dim(),
        mac.channel_uses(),
        mac.noise_var()
    )?;
    writeln!(
        out,
        "{:<12} {:>14} {:>16} {:>14}",
        "subset", "C (bits/use)", "s*C (bits)", "cap 2^(sC/d)"
    )?;
    for s in UserSet::all_nonempty(mac.users()) {
        writeln!(
            out,
            "{:<12} {:>14.4} {:>16.1} {:>14.4}",
            s.to_string(),
            mac.sum_capacity(s)?,
            mac.subset_bits(s)?,
            mac.budget_cap(s)?
        )?;
    }
    Ok(out)
}

/// Relaxed, two-user and integer allocations for the given ranges.
pub fn allocate_report(config: &ExperimentConfig, deltas: &[f64]) -> Result<String> {
    let region = config.mac.region().reserve(config.side_channel_bits)?;
    let problem = AllocationProblem::with_region(deltas.to_vec(), region, config.dim())?;
    let relaxed = solve_relaxed(&problem)?;
    let integer = allocate(&problem)?;
    let mut out = String::new();
    writeln!(
        out,
        "deltas      {}",
        list(deltas.iter().map(|d| d.to_string()))
    )?;
    writeln!(
        out,
        "relaxed k   {}  objective {:.6}  kkt residual {:.2e}",
        list(relaxed.k.iter().map(|k| format!("{k:.4}"))),
        objective(&problem, &relaxed.k)?,
        relaxed.kkt_residual
    )?;
    if problem.users() == 2 {
        let (k1, k2) = solve_two_user(&problem)?;
        writeln!(
            out,
            "two-user k  ({k1:.4}, {k2:.4})  objective {:.6}",
            objective(&problem, &[k1, k2])?
        )?;
    }
    writeln!(
        out,
        "integer k   {}  objective {:.6}",
        list(integer.k_int.iter().map(|k| k.to_string())),
        integer.objective
    )?;
    writeln!(
        out,
        "rates       {}",
        list(integer.rates.iter().map(|r| format!("{r:.1}")))
    )?;
    match uniform_allocation(&problem)? {
        Some(u) => writeln!(
            out,
            "uniform k   {}  objective {:.6}",
            u.k_int[0], u.objective
        )?,
        None => writeln!(out, "uniform k   none fits")?,
    }
    Ok(out)
}

fn write_run(dir: &Path, outcome: &RunOutcome, summary: &Summary) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    output::write_atomic(&dir.join("metrics.csv"), &output::metrics_csv(outcome)?)?;
    output::write_atomic(&dir.join("summary.json"), &output::summary_json(summary)?)?;
    Ok(())
}

/// Runs the configured policy and writes `metrics.csv` and `summary.json`.
pub fn train(config: &ExperimentConfig, out: &Path) -> Result<Summary> {
    let prepared = prepare(config)?;
    let outcome = run_policy(&prepared, config.policy)?;
    let summary = Summary::new(&outcome, config.seed, &config.source);
    write_run(out, &outcome, &summary)?;
    Ok(summary)
}

/// Runs every policy on the same data and seed. Writes one directory per
/// policy plus `curves.csv` and `final.csv`.
pub fn compare(config: &ExperimentConfig, policies: &[Policy], out: &Path) -> Result<Vec<Summary>> {
    if policies.is_empty() {
        bail!("no policies given");
    }
    let prepared = prepare(config)?;
    let outcomes: Vec<RunOutcome> = std::thread::scope(|scope| {
        let handles: Vec<_> = policies
            .iter()
            .map(|&p| {
                let prepared = &prepared;
                scope.spawn(move || run_policy(prepared, p).with_context(|| format!("policy {p}")))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("policy thread panicked"))
            .collect::<Result<_>>()
    })?;
    let mut summaries = Vec::with_capacity(outcomes.len());
    for o in &outcomes {
        let s = Summary::new(o, config.seed, &config.source);
        write_run(&out.join(o.run.policy.name()), o, &s)?;
        summaries.push(s);
    }
    output::write_atomic(&out.join("curves.csv"), &output::curves_csv(&outcomes)?)?;
    output::write_atomic(&out.join("final.csv"), &output::final_csv(&summaries)?)?;
    Ok(summaries)
}

/// Flag, then environment (handled by the argument parser), then config.
pub fn output_dir(flag: Option<PathBuf>, config: &ExperimentConfig) -> Result<PathBuf> {
    flag.or_else(|| config.out_dir.clone())
        .context("no output directory: pass --out, set MACFL_OUT_DIR or `out_dir` in the config")
}

pub fn final_table(summaries: &[Summary]) -> String {
    let mut out = format!(
        "{:<16} {:>12} {:>10} {:>16}\n",
        "policy", "final loss", "accuracy", "analytic bits"
    );
    for s in summaries {
        let acc = s
            .final_accuracy
            .map(|a| format!("{a:.4}"))
            .unwrap_or_else(|| "-".into());
        out.push_str(&format!(
            "{:<16} {:>12.6} {:>10} {:>16.0}\n",
            s.policy, s.final_loss, acc, s.total_analytic_bits
        ));
    }
    out
}
