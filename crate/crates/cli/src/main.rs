//! Command-line front end: train from a config file, evaluate checkpoints,
//! run the baseline comparison suites, and self-check the numerical oracles.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};

use hybrid_mpo::harness::{self, bench, ExperimentConfig};

#[derive(Parser)]
#[command(name = "hmpo", about = "Hybrid MPO trainer and benchmark runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a TOML config file.
    Train {
        config: PathBuf,
        /// Resume from a checkpoint instead of starting fresh; the config
        /// embedded in the checkpoint takes precedence.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpointed policy with deterministic mean actions.
    Eval {
        checkpoint: PathBuf,
        /// Environment spec, e.g. "pendulum" or "pendulum+discretize:3".
        env: String,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write per-step discrete-action traces as CSV to this path.
        #[arg(long)]
        traces: Option<PathBuf>,
    },
    /// Run a comparison suite of training runs and print a table.
    Bench {
        /// pendulum-discretization | peg-modes | furuta-exploration | all
        suite: String,
        #[arg(long, default_value = "runs/bench")]
        out: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0")]
        seeds: Vec<u64>,
    },
    /// Run the numerical oracle self-tests.
    Check,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            // One machine-readable error line on failure.
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Train { config, resume } => train(config, resume),
        Command::Eval {
            checkpoint,
            env,
            episodes,
            seed,
            traces,
        } => eval(checkpoint, env, episodes, seed, traces),
        Command::Bench { suite, out, seeds } => run_bench(&suite, &out, &seeds),
        Command::Check => check(),
    }
}

fn train(config: PathBuf, resume: Option<PathBuf>) -> anyhow::Result<()> {
    let cfg = ExperimentConfig::from_file(&config)
        .with_context(|| format!("loading {}", config.display()))?;
    let outcome = match resume {
        Some(ckpt) => harness::resume_training(&ckpt, PathBuf::from(&cfg.run.output_dir).as_path())?,
        None => harness::run_training(&cfg)?,
    };
    let episodes = outcome.log.episodes.len();
    let evals = outcome.log.evals.last();
    println!(
        "trained {} env steps, {episodes} episodes, {} learner steps",
        cfg.run.total_env_steps,
        outcome.log.learner.len()
    );
    if let Some(e) = evals {
        println!(
            "last evaluation: mean return {:.3} over {} episodes",
            e.mean_return, e.episodes
        );
    }
    println!("outputs in {}", cfg.run.output_dir);
    Ok(())
}

fn eval(
    checkpoint: PathBuf,
    env: String,
    episodes: usize,
    seed: u64,
    traces: Option<PathBuf>,
) -> anyhow::Result<()> {
    let summary = harness::run_eval(&checkpoint, Some(&env), episodes, seed)?;
    println!(
        "episodes {}  mean return {:.3}  std {:.3}  successes {}/{}  early terminations {}/{}",
        episodes,
        summary.mean_return,
        summary.std_return,
        summary.successes,
        episodes,
        summary.early_terminations,
        episodes,
    );
    if let Some(path) = traces {
        let mut out = String::from("episode,step,dims\n");
        for (e, trace) in summary.mode_traces.iter().enumerate() {
            for (t, dims) in trace.iter().enumerate() {
                let joined: Vec<String> = dims.iter().map(|d| d.to_string()).collect();
                out.push_str(&format!("{e},{t},{}\n", joined.join(";")));
            }
        }
        std::fs::write(&path, out)?;
        println!("traces written to {}", path.display());
    }
    Ok(())
}

fn run_bench(suite: &str, out: &PathBuf, seeds: &[u64]) -> anyhow::Result<()> {
    let jobs = match suite {
        "pendulum-discretization" => bench::pendulum_discretization_jobs(out, seeds),
        "peg-modes" => bench::peg_modes_jobs(out, seeds),
        "furuta-exploration" => bench::furuta_exploration_jobs(out, seeds),
        "all" => {
            let mut jobs = bench::pendulum_discretization_jobs(out, seeds);
            jobs.extend(bench::peg_modes_jobs(out, seeds));
            jobs.extend(bench::furuta_exploration_jobs(out, seeds));
            jobs
        }
        other => bail!("unknown suite {other:?}"),
    };
    println!("running {} training jobs", jobs.len());
    let results = bench::run_matrix(jobs, 20)?;
    print!("{}", bench::format_table(&results));
    Ok(())
}

fn check() -> anyhow::Result<()> {
    use hybrid_mpo::autodiff::{build_network, finite_difference_gradient, Activation};
    use hybrid_mpo::mpo::{dual_value, estep_weights, solve_temperature, weight_kl_to_uniform};
    use hybrid_mpo::tabular::TabularMdp;
    use rand::{Rng, SeedableRng};

    // Reverse-mode gradients against central finite differences.
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for trial in 0..20u64 {
        let norm = trial % 2 == 0;
        let net = build_network(&[4, 12, 8, 3], Activation::Elu, norm, 500 + trial)?;
        let x: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let seed_vec: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (_, tape) = net.forward(&x)?;
        let grad = net.backward(&tape, &seed_vec)?;
        let mut scratch = build_network(&[4, 12, 8, 3], Activation::Elu, norm, 0)?;
        let base = net.params().to_vec();
        let fd = finite_difference_gradient(
            &mut |p: &[f64]| {
                scratch.params_mut().copy_from_slice(p);
                scratch
                    .eval(&x)
                    .unwrap()
                    .iter()
                    .zip(&seed_vec)
                    .map(|(a, b)| a * b)
                    .sum()
            },
            &base,
            1e-5,
        );
        for (g, f) in grad.iter().zip(&fd) {
            worst = worst.max((g - f).abs() / g.abs().max(f.abs()).max(1e-6));
        }
    }
    if worst > 1e-4 {
        bail!("gradient check failed: worst relative error {worst}");
    }
    println!("gradient check: 20 networks, worst relative error {worst:.2e} .. ok");

    // Temperature solver against golden-section search on the dual.
    let golden = |q: &[Vec<f64>], eps: f64| -> f64 {
        let phi = (5.0f64.sqrt() - 1.0) / 2.0;
        let (mut a, mut b) = (1e-8f64.ln(), 1e6f64.ln());
        let g = |t: f64| dual_value(t.exp(), q, eps).unwrap();
        let mut c = b - phi * (b - a);
        let mut d = a + phi * (b - a);
        let (mut gc, mut gd) = (g(c), g(d));
        while (b - a) > 1e-7 {
            if gc < gd {
                b = d;
                d = c;
                gd = gc;
                c = b - phi * (b - a);
                gc = g(c);
            } else {
                a = c;
                c = d;
                gc = gd;
                d = a + phi * (b - a);
                gd = g(d);
            }
        }
        ((a + b) / 2.0).exp()
    };
    let mut worst_eta: f64 = 0.0;
    let mut worst_kl: f64 = 0.0;
    for trial in 0..50u64 {
        let states = 1 + (trial as usize % 32);
        let q: Vec<Vec<f64>> = (0..states)
            .map(|_| (0..20).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let eta = solve_temperature(&q, 0.1)?;
        let oracle = golden(&q, 0.1);
        worst_eta = worst_eta.max((eta - oracle).abs() / oracle);
        worst_kl = worst_kl.max(weight_kl_to_uniform(&estep_weights(&q, eta)));
    }
    if worst_eta > 0.01 {
        bail!("dual solver check failed: worst relative eta error {worst_eta}");
    }
    if worst_kl > 1.05 * 0.1 {
        bail!("dual solver check failed: weight KL {worst_kl} above 1.05 epsilon");
    }
    println!(
        "dual solver check: 50 matrices, worst eta error {worst_eta:.2e}, worst weight KL {worst_kl:.3} .. ok"
    );

    // Windowed Retrace against dynamic programming on tabular problems.
    for seed in 0..5u64 {
        let mdp = TabularMdp::random(5, &[2, 3], 900 + seed);
        if mdp.retrace_convergence(0.9, 3, 200, 1e-6).is_none() {
            bail!("retrace check failed: MDP seed {seed} did not converge in 200 sweeps");
        }
    }
    println!("retrace check: 5 tabular MDPs converged to the DP fixpoint .. ok");
    println!("all checks passed");
    Ok(())
}
