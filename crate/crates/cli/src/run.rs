//! The benchmark driver: sample tasks, run every (task, family, optimizer,
//! repeat) cell, check task maxima, and write results.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Instant;

use qbo_core::acquisition::Family;
use qbo_core::gp::{Dataset, GpModel};
use qbo_core::linalg::{JitterPolicy, Matrix};
use qbo_core::optim::{Objective, OptimizerKind, SearchBox};
use qbo_core::par::{derive_seed, map_indexed, Parallelism};
use qbo_core::tasks::{
    bo_run, estimate_task_max, refine_task_max, regret_curve, rff_covariance_check, sample_task, AcquisitionObjective,
    BoSettings, SyntheticTask, TrialLog,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{BudgetMode, ExperimentConfig};
use crate::error::CliError;
use crate::output::{write_csv, write_json};
use crate::SCHEMA_VERSION;

pub const RESULTS_HEADER: [&str; 9] =
    ["task_seed", "family", "optimizer", "repeat", "iteration", "evals", "best_so_far", "log10_regret", "wall_time_s"];

pub const SUMMARY_HEADER: [&str; 7] = ["family", "optimizer", "n", "median", "q1", "q3", "iqr"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub task_seed: u64,
    pub family: Family,
    pub optimizer: OptimizerKind,
    pub repeat: usize,
    pub iteration: usize,
    pub evals: usize,
    pub best_so_far: f64,
    pub log10_regret: f64,
    pub wall_time_s: f64,
}

/// Terminal log10 regret statistics for one family and optimizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub family: Family,
    pub optimizer: OptimizerKind,
    pub n: usize,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub iqr: f64,
}

#[derive(Debug, Clone, Serialize)]
struct TaskRecord {
    index: usize,
    seed: u64,
    estimated_max: f64,
    /// Maximum used for regret; differs from `estimated_max` when an
    /// observation exceeded it and the estimate was refined.
    task_max: f64,
    refined: bool,
}

#[derive(Debug, Clone, Serialize)]
struct CovarianceCheck {
    empirical: f64,
    kernel: f64,
    relative_error: f64,
    passed: bool,
}

#[derive(Debug, Clone, Serialize)]
struct CellLog<'a> {
    task_index: usize,
    family: Family,
    optimizer: OptimizerKind,
    repeat: usize,
    log: &'a TrialLog,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub output_dir: PathBuf,
    pub cells: usize,
    pub summary: Vec<SummaryRow>,
    pub eval_budgets: BTreeMap<OptimizerKind, usize>,
    /// Tasks whose maximum had to be re-estimated.
    pub refined_tasks: Vec<usize>,
}

#[derive(Debug, Clone, Copy)]
struct Cell {
    task: usize,
    family: Family,
    optimizer: OptimizerKind,
    repeat: usize,
}

/// Type-7 sample quantile of sorted data.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn task_seed(config: &ExperimentConfig, task: usize) -> u64 {
    derive_seed(config.master_seed, &[0, task as u64])
}

/// Shared by every family and optimizer on the same task and repeat.
fn trial_seed(config: &ExperimentConfig, task: usize, repeat: usize) -> u64 {
    derive_seed(config.master_seed, &[1, task as u64, repeat as u64])
}

fn max_seed(config: &ExperimentConfig, task: usize) -> u64 {
    derive_seed(config.master_seed, &[2, task as u64])
}

/// Runs the experiment described by `config` and writes results.csv,
/// summary.csv, config.json and trials.json into its output directory.
/// Cells that fail are reported after the outputs of the others are
/// written.
pub fn run(config: &ExperimentConfig, par: Parallelism) -> Result<RunOutcome, CliError> {
    config.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let dir = config.output_dir.clone();
    std::fs::create_dir_all(&dir)?;
    let digest = config.digest();
    let params = config.kernel_params();

    let check = covariance_check(config, par)?;

    let tasks = map_indexed(par, config.n_tasks, |t| -> qbo_core::Result<(SyntheticTask, f64)> {
        let mut task = sample_task(config.dim, &params, config.feature_count, task_seed(config, t))?;
        let max = estimate_task_max(&task, config.max_restarts, max_seed(config, t), Parallelism::Sequential)?;
        task.estimated_max = Some(max);
        Ok((task, max))
    })
    .into_iter()
    .collect::<qbo_core::Result<Vec<_>>>()?;

    let eval_budgets = match config.budget_mode {
        BudgetMode::EvalMatched => config.optimizers.iter().map(|&k| (k, config.optimizer.eval_budget)).collect(),
        BudgetMode::TimeMatched => calibrate_budgets(config, &tasks[0].0)?,
    };

    let mut cells = Vec::new();
    for task in 0..config.n_tasks {
        for &family in &config.families {
            for &optimizer in &config.optimizers {
                for repeat in 0..config.n_repeats {
                    cells.push(Cell { task, family, optimizer, repeat });
                }
            }
        }
    }
    let settings = BoSettings {
        alpha_mode: config.acquisition.alpha_mode,
        jitter: JitterPolicy::default(),
        record_time: config.record_wall_time,
        config_digest: digest.clone(),
        par: Parallelism::Sequential,
    };
    let logs = map_indexed(par, cells.len(), |i| {
        let c = cells[i];
        let mut opt = config.optimizer_config(c.optimizer);
        opt.eval_budget = eval_budgets[&c.optimizer];
        let spec = config.acquisition_spec(c.family);
        bo_run(
            &tasks[c.task].0,
            &spec,
            &opt,
            config.q,
            config.total_evals,
            trial_seed(config, c.task, c.repeat),
            &settings,
        )
    });

    let mut failures = Vec::new();
    let mut done: Vec<(Cell, TrialLog)> = Vec::new();
    for (c, log) in cells.iter().zip(logs) {
        match log {
            Ok(l) => done.push((*c, l)),
            Err(e) => failures.push(format!("task {} {} {} repeat {}: {e}", c.task, c.family, c.optimizer, c.repeat)),
        }
    }

    let task_records = check_task_maxima(config, &tasks, &done, par)?;

    let mut rows = Vec::new();
    for (c, log) in &done {
        let curve = regret_curve(log, task_records[c.task].task_max)?;
        for (entry, (evals, regret)) in log.entries.iter().zip(curve) {
            rows.push(ResultRow {
                task_seed: log.task_seed,
                family: c.family,
                optimizer: c.optimizer,
                repeat: c.repeat,
                iteration: entry.iteration,
                evals,
                best_so_far: entry.best_so_far,
                log10_regret: regret,
                wall_time_s: entry.wall_time,
            });
        }
    }
    let summary = summarize(config, &rows);

    write_csv(&dir.join("results.csv"), &RESULTS_HEADER, &rows)?;
    write_csv(&dir.join("summary.csv"), &SUMMARY_HEADER, &summary)?;
    write_json(
        &dir.join("config.json"),
        &serde_json::json!({
            "schema_version": SCHEMA_VERSION,
            "config": config,
            "config_digest": digest,
            "eval_budgets": eval_budgets,
        }),
    )?;
    let cell_logs: Vec<CellLog> = done
        .iter()
        .map(|(c, log)| CellLog { task_index: c.task, family: c.family, optimizer: c.optimizer, repeat: c.repeat, log })
        .collect();
    write_json(
        &dir.join("trials.json"),
        &serde_json::json!({
            "schema_version": SCHEMA_VERSION,
            "config_digest": digest,
            "covariance_check": check,
            "tasks": task_records,
            "failures": failures,
            "trials": cell_logs,
        }),
    )?;

    if !failures.is_empty() {
        return Err(CliError::Runtime(format!(
            "{} of {} cells failed (partial results in {}): {}",
            failures.len(),
            cells.len(),
            dir.display(),
            failures.join("; ")
        )));
    }
    Ok(RunOutcome {
        output_dir: dir,
        cells: cells.len(),
        summary,
        eval_budgets,
        refined_tasks: task_records.iter().filter(|t| t.refined).map(|t| t.index).collect(),
    })
}

/// Smoke test of the random-feature approximation at two nearby points.
fn covariance_check(config: &ExperimentConfig, par: Parallelism) -> Result<CovarianceCheck, CliError> {
    let x1 = vec![0.4; config.dim];
    let x2 = vec![0.45; config.dim];
    let seed = derive_seed(config.master_seed, &[4]);
    let (empirical, kernel) =
        rff_covariance_check(&config.kernel_params(), config.feature_count, &x1, &x2, 2000, seed, par)?;
    let relative_error = (empirical - kernel).abs() / kernel;
    Ok(CovarianceCheck { empirical, kernel, relative_error, passed: relative_error <= 0.1 })
}

/// No observation may exceed the task maximum used for regret. Tasks where
/// one does get a fresh estimate with four times the restarts, polished
/// from the offending points as well.
fn check_task_maxima(
    config: &ExperimentConfig,
    tasks: &[(SyntheticTask, f64)],
    done: &[(Cell, TrialLog)],
    par: Parallelism,
) -> Result<Vec<TaskRecord>, CliError> {
    let mut records = Vec::with_capacity(tasks.len());
    for (t, (task, est)) in tasks.iter().enumerate() {
        let violators: Vec<Vec<f64>> = done
            .iter()
            .filter(|(c, _)| c.task == t)
            .flat_map(|(_, log)| {
                log.observations().filter(|(_, y)| y > est).map(|(x, _)| x.to_vec()).collect::<Vec<_>>()
            })
            .collect();
        let (task_max, refined) = if violators.is_empty() {
            (*est, false)
        } else {
            let m = refine_task_max(task, &violators, 4 * config.max_restarts, max_seed(config, t), par)?;
            (m, true)
        };
        records.push(TaskRecord { index: t, seed: task.seed, estimated_max: *est, task_max, refined });
    }
    Ok(records)
}

fn summarize(config: &ExperimentConfig, rows: &[ResultRow]) -> Vec<SummaryRow> {
    let last_iteration = config.total_evals / config.q - 1;
    let mut out = Vec::new();
    for &family in &config.families {
        for &optimizer in &config.optimizers {
            let mut v: Vec<f64> = rows
                .iter()
                .filter(|r| r.family == family && r.optimizer == optimizer && r.iteration == last_iteration)
                .map(|r| r.log10_regret)
                .collect();
            v.sort_by(f64::total_cmp);
            let (median, q1, q3) = if v.is_empty() {
                (f64::NAN, f64::NAN, f64::NAN)
            } else {
                (quantile(&v, 0.5), quantile(&v, 0.25), quantile(&v, 0.75))
            };
            out.push(SummaryRow { family, optimizer, n: v.len(), median, q1, q3, iqr: q3 - q1 });
        }
    }
    out
}

/// Per-optimizer evaluation budgets giving roughly equal optimizer time.
/// Gradient evaluations are timed against value evaluations on a model fit
/// to half the run's observations of the first task.
fn calibrate_budgets(
    config: &ExperimentConfig,
    task: &SyntheticTask,
) -> Result<BTreeMap<OptimizerKind, usize>, CliError> {
    const PROBES: usize = 64;
    let q = config.q;
    let n = (config.total_evals / 2).max(q);
    let bounds = task.bounds();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.master_seed, &[5]));
    let data_box = SearchBox::for_pool(n, &bounds)?;
    let x = Matrix::from_vec(n, config.dim, data_box.sample(&mut rng))?;
    let y = (0..n).map(|i| task.value(x.row(i))).collect();
    let data = Dataset::new(x, y, bounds.clone())?;
    let best = data.best_output().unwrap_or(0.0);
    let model = GpModel::new(data, config.kernel_params(), JitterPolicy::default())?;
    let spec = config.acquisition_spec(config.families[0]).with_alpha(best);
    let objective = AcquisitionObjective::new(&model, spec, q, config.optimizer.minibatch, 0, Parallelism::Sequential);
    let pool_box = SearchBox::for_pool(q, &bounds)?;
    let pools: Vec<Vec<f64>> = (0..PROBES).map(|_| pool_box.sample(&mut rng)).collect();
    let time = |f: &dyn Fn(&[f64])| {
        let start = Instant::now();
        pools.iter().for_each(|p| f(p));
        start.elapsed().as_secs_f64().max(1e-9)
    };
    let t_value = time(&|p| {
        std::hint::black_box(objective.value(p));
    });
    let t_grad = time(&|p| {
        std::hint::black_box(objective.value_and_grad(p));
    });
    let t_stoch = time(&|p| {
        std::hint::black_box(objective.stochastic_value_and_grad(p, 0, 0));
    });
    let b = config.optimizer.eval_budget as f64;
    Ok(config
        .optimizers
        .iter()
        .map(|&k| {
            let budget = match k {
                OptimizerKind::Rs | OptimizerKind::Direct => b,
                OptimizerKind::Lbfgs => b * t_value / t_grad,
                OptimizerKind::Adam => b * t_value / t_stoch,
            };
            (k, (budget as usize).max(4))
        })
        .collect())
}
