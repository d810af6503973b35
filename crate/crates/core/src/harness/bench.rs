//! Baseline comparison suites: continuous vs hybrid vs argmax-trick agents
//! on the bundled tasks. Used by the command-line `bench` subcommand and by
//! the acceptance tests.

use std::path::{Path, PathBuf};

use super::config::{AgentKind, ExperimentConfig};
use super::eval::{run_eval, EvalSummary};
use super::runlog::RunLog;
use super::train::run_training;
use super::HarnessError;

/// Outcome of one labeled training run plus its final evaluation.
#[derive(Debug)]
pub struct RunResult {
    pub label: String,
    pub seed: u64,
    pub log: RunLog,
    /// `(env_step, mean_return)` per periodic evaluation.
    pub eval_curve: Vec<(u64, f64)>,
    pub final_eval: EvalSummary,
}

impl RunResult {
    /// Mean evaluation return over the last quarter of the curve.
    pub fn asymptote(&self) -> f64 {
        asymptote(&self.eval_curve)
    }

    /// First environment step whose evaluation return reaches `threshold`.
    pub fn steps_to(&self, threshold: f64) -> Option<u64> {
        self.eval_curve
            .iter()
            .find(|(_, r)| *r >= threshold)
            .map(|(s, _)| *s)
    }
}

pub fn asymptote(curve: &[(u64, f64)]) -> f64 {
    if curve.is_empty() {
        return 0.0;
    }
    let tail = (curve.len().div_ceil(4)).max(1);
    let slice = &curve[curve.len() - tail..];
    slice.iter().map(|(_, r)| r).sum::<f64>() / slice.len() as f64
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Trains one configuration and evaluates the final policy.
pub fn train_and_measure(
    cfg: &ExperimentConfig,
    final_eval_episodes: usize,
) -> Result<RunResult, HarnessError> {
    let outcome = run_training(cfg)?;
    let final_eval = run_eval(
        &outcome.final_checkpoint,
        None,
        final_eval_episodes,
        cfg.run.seed ^ 0xF1A7,
    )?;
    let eval_curve = outcome
        .log
        .evals
        .iter()
        .map(|e| (e.env_step, e.mean_return))
        .collect();
    Ok(RunResult {
        label: String::new(),
        seed: cfg.run.seed,
        log: outcome.log,
        eval_curve,
        final_eval,
    })
}

/// Runs a labeled config matrix, a bounded number of runs in parallel.
pub fn run_matrix(
    jobs: Vec<(String, ExperimentConfig)>,
    final_eval_episodes: usize,
) -> Result<Vec<RunResult>, HarnessError> {
    let parallel = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1);
    let mut results: Vec<Option<Result<RunResult, HarnessError>>> =
        (0..jobs.len()).map(|_| None).collect();
    for chunk in jobs.chunks(parallel).collect::<Vec<_>>() {
        let base = chunk.as_ptr() as usize - jobs.as_ptr() as usize;
        let offset = base / std::mem::size_of::<(String, ExperimentConfig)>();
        let outputs = std::thread::scope(|scope| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|(label, cfg)| {
                    let label = label.clone();
                    scope.spawn(move || {
                        train_and_measure(cfg, final_eval_episodes).map(|mut r| {
                            r.label = label;
                            r
                        })
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("run thread panicked"))
                .collect::<Vec<_>>()
        });
        for (i, out) in outputs.into_iter().enumerate() {
            results[offset + i] = Some(out);
        }
    }
    results
        .into_iter()
        .map(|r| r.expect("all jobs scheduled"))
        .collect()
}

fn out_dir(base: &Path, suite: &str, label: &str, seed: u64) -> String {
    PathBuf::from(base)
        .join(suite)
        .join(format!("{label}-s{seed}"))
        .to_string_lossy()
        .into_owned()
}

/// Desk-scale budgets per task, chosen so a full suite stays in CPU-minutes.
pub mod budget {
    pub const PENDULUM_STEPS: u64 = 30_000;
    pub const PEG_STEPS: u64 = 40_000;
    pub const FURUTA_SPARSE_STEPS: u64 = 60_000;
    pub const FURUTA_SHAPED_STEPS: u64 = 60_000;
}

fn desk_config(
    env_id: &str,
    kind: AgentKind,
    wrappers: &[&str],
    seed: u64,
    steps: u64,
    out: String,
) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::desk(env_id, kind, seed, steps);
    cfg.env.wrappers = wrappers.iter().map(|s| s.to_string()).collect();
    cfg.run.output_dir = out;
    cfg.retrace.sequence_length = 5;
    cfg
}

/// Pendulum swing-up: continuous baseline, coarse and fine hybrid
/// discretization, and the argmax-trick baseline at the fine resolution.
pub fn pendulum_discretization_jobs(
    base: &Path,
    seeds: &[u64],
) -> Vec<(String, ExperimentConfig)> {
    let mut jobs = Vec::new();
    for &seed in seeds {
        for (label, kind, wrappers) in [
            ("continuous", AgentKind::ContinuousMpo, vec![]),
            ("hybrid-3", AgentKind::HybridMpo, vec!["discretize:3"]),
            ("hybrid-17", AgentKind::HybridMpo, vec!["discretize:17"]),
            ("argmax-17", AgentKind::ArgmaxMpo, vec!["discretize:17"]),
        ] {
            let out = out_dir(base, "pendulum-discretization", label, seed);
            let cfg = desk_config(
                "pendulum",
                kind,
                &wrappers,
                seed,
                budget::PENDULUM_STEPS,
                out,
            );
            jobs.push((format!("{label}-s{seed}"), cfg));
        }
    }
    jobs
}

/// Peg-in-hole: the mode-switching hybrid agent against fine-only and
/// coarse-only continuous baselines.
pub fn peg_modes_jobs(base: &Path, seeds: &[u64]) -> Vec<(String, ExperimentConfig)> {
    let mut jobs = Vec::new();
    for &seed in seeds {
        for (label, kind, wrappers) in [
            ("hybrid", AgentKind::HybridMpo, vec![]),
            ("fine-only", AgentKind::ContinuousMpo, vec!["fix_discrete:0:0"]),
            ("coarse-only", AgentKind::ContinuousMpo, vec!["fix_discrete:0:1"]),
        ] {
            let out = out_dir(base, "peg-modes", label, seed);
            let cfg = desk_config("peg", kind, &wrappers, seed, budget::PEG_STEPS, out);
            jobs.push((format!("{label}-s{seed}"), cfg));
        }
    }
    jobs
}

/// Furuta pendulum: act-or-repeat exploration on the sparse-back task
/// against plain continuous, plus the shaped-task parity pair.
pub fn furuta_exploration_jobs(base: &Path, seeds: &[u64]) -> Vec<(String, ExperimentConfig)> {
    let mut jobs = Vec::new();
    for &seed in seeds {
        let out = out_dir(base, "furuta-exploration", "sparse-aor", seed);
        let mut cfg = desk_config(
            "furuta_sparse_back",
            AgentKind::HybridMpo,
            &["act_or_repeat"],
            seed,
            budget::FURUTA_SPARSE_STEPS,
            out,
        );
        cfg.agent.repeat_bias = 0.95;
        jobs.push((format!("sparse-aor-s{seed}"), cfg));

        let out = out_dir(base, "furuta-exploration", "sparse-continuous", seed);
        let cfg = desk_config(
            "furuta_sparse_back",
            AgentKind::ContinuousMpo,
            &[],
            seed,
            budget::FURUTA_SPARSE_STEPS,
            out,
        );
        jobs.push((format!("sparse-continuous-s{seed}"), cfg));

        let out = out_dir(base, "furuta-exploration", "shaped-aor", seed);
        let mut cfg = desk_config(
            "furuta_shaped",
            AgentKind::HybridMpo,
            &["act_or_repeat"],
            seed,
            budget::FURUTA_SHAPED_STEPS,
            out,
        );
        cfg.agent.repeat_bias = 0.95;
        jobs.push((format!("shaped-aor-s{seed}"), cfg));

        let out = out_dir(base, "furuta-exploration", "shaped-plain", seed);
        let cfg = desk_config(
            "furuta_shaped",
            AgentKind::ContinuousMpo,
            &[],
            seed,
            budget::FURUTA_SHAPED_STEPS,
            out,
        );
        jobs.push((format!("shaped-plain-s{seed}"), cfg));
    }
    jobs
}

/// Formats run results as an aligned comparison table.
pub fn format_table(results: &[RunResult]) -> String {
    let mut out = String::from(
        "label                     seed  asymptote  final-eval  successes  early-term\n",
    );
    for r in results {
        out.push_str(&format!(
            "{:<25} {:>4}  {:>9.3}  {:>10.3}  {:>9}  {:>10}\n",
            r.label,
            r.seed,
            r.asymptote(),
            r.final_eval.mean_return,
            r.final_eval.successes,
            r.final_eval.early_terminations,
        ));
    }
    out
}
