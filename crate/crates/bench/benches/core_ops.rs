//! Hot-path benchmarks: network evaluation, reverse sweeps, Retrace target
//! batches, the temperature dual solve, one policy improvement round, and
//! raw environment stepping.

use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use hybrid_mpo::autodiff::{build_network, AdamState, Activation};
use hybrid_mpo::critic::{q_loss, retrace_targets, ExpectationKind, QFunction};
use hybrid_mpo::env::{Environment, PendulumEnv, PendulumParams};
use hybrid_mpo::mpo::{improvement_step, solve_temperature, ImprovementConfig, LagrangeState};
use hybrid_mpo::policy;
use hybrid_mpo::replay::SequenceTransition;
use hybrid_mpo::space::{ActionSpace, Dim, HybridAction};

fn bench_network(c: &mut Criterion) {
    let net = build_network(&[8, 48, 48, 5], Activation::Elu, true, 1).unwrap();
    let x = [0.1, -0.4, 0.3, 0.9, -0.2, 0.5, 0.0, -0.8];
    c.bench_function("network_eval_48x48", |b| {
        b.iter(|| black_box(net.eval(black_box(&x)).unwrap()))
    });
    c.bench_function("network_forward_backward_48x48", |b| {
        b.iter(|| {
            let (_, tape) = net.forward(black_box(&x)).unwrap();
            black_box(net.backward(&tape, &[1.0, 0.0, 0.0, 0.0, 0.0]).unwrap())
        })
    });
}

fn test_space() -> ActionSpace {
    ActionSpace::new(vec![
        Dim::Continuous { low: -1.0, high: 1.0 },
        Dim::Discrete { k: 3 },
    ])
    .unwrap()
}

fn make_batch(space: &ActionSpace, rng: &mut ChaCha12Rng, n_seq: usize, n: usize) -> Vec<SequenceTransition> {
    let params = policy::HybridDistributionParams {
        means: vec![0.0],
        stddevs: vec![0.5],
        cat_probs: vec![vec![0.4, 0.3, 0.3]],
    };
    (0..n_seq)
        .map(|_| {
            let actions: Vec<HybridAction> =
                (0..n).map(|_| policy::sample(&params, space, rng)).collect();
            SequenceTransition {
                states: (0..=n)
                    .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
                    .collect(),
                behavior_log_probs: actions
                    .iter()
                    .map(|a| policy::log_prob(&params, space, a))
                    .collect(),
                actions,
                rewards: (0..n).map(|_| rng.random_range(0.0..1.0)).collect(),
                terminals: vec![false; n],
            }
        })
        .collect()
}

fn bench_retrace(c: &mut Criterion) {
    let space = test_space();
    let mut rng = ChaCha12Rng::seed_from_u64(2);
    let batch = make_batch(&space, &mut rng, 64, 5);
    let q_net = build_network(&[3 + space.encoded_action_len(), 48, 48, 1], Activation::Elu, true, 3).unwrap();
    let q = QFunction::new(q_net, space.clone());
    let policy_net = build_network(&[3, 48, 48, space.head_len()], Activation::Elu, true, 4).unwrap();
    c.bench_function("retrace_targets_64x5_m20", |b| {
        b.iter(|| {
            black_box(
                retrace_targets(
                    black_box(&batch),
                    &|obs: &[f64]| policy::policy_params(&policy_net, obs, &space),
                    &q,
                    &space,
                    0.99,
                    ExpectationKind::MonteCarlo { samples: 20 },
                    &mut rng,
                )
                .unwrap(),
            )
        })
    });
    let targets = retrace_targets(
        &batch,
        &|obs: &[f64]| policy::policy_params(&policy_net, obs, &space),
        &q,
        &space,
        0.99,
        ExpectationKind::MonteCarlo { samples: 20 },
        &mut rng,
    )
    .unwrap();
    c.bench_function("q_loss_backward_64x5", |b| {
        b.iter(|| {
            let graph = q_loss(&batch, &targets, &q).unwrap();
            black_box(q.net().backward_scalar(&graph.tape, graph.node).unwrap())
        })
    });
}

fn bench_dual_solver(c: &mut Criterion) {
    let mut rng = ChaCha12Rng::seed_from_u64(5);
    let q_values: Vec<Vec<f64>> = (0..64)
        .map(|_| (0..20).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    c.bench_function("solve_temperature_64x20", |b| {
        b.iter(|| black_box(solve_temperature(black_box(&q_values), 0.1).unwrap()))
    });
}

fn bench_improvement(c: &mut Criterion) {
    let space = test_space();
    let mut rng = ChaCha12Rng::seed_from_u64(6);
    let q_net = build_network(&[3 + space.encoded_action_len(), 48, 48, 1], Activation::Elu, true, 7).unwrap();
    let q = QFunction::new(q_net, space.clone());
    let states: Vec<Vec<f64>> = (0..64)
        .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    c.bench_function("improvement_round_64_states", |b| {
        b.iter(|| {
            let mut policy_net =
                build_network(&[3, 48, 48, space.head_len()], Activation::Elu, true, 8).unwrap();
            let mut adam = AdamState::new(policy_net.param_count(), 3e-4);
            let mut lagrange = LagrangeState::new(1.0);
            black_box(
                improvement_step(
                    &mut policy_net,
                    &mut adam,
                    &q,
                    &space,
                    &states,
                    &mut lagrange,
                    &ImprovementConfig::default(),
                    &mut rng,
                )
                .unwrap(),
            )
        })
    });
}

fn bench_env(c: &mut Criterion) {
    let mut env = PendulumEnv::new(PendulumParams::default(), 1);
    env.reset();
    let action = HybridAction::continuous(vec![0.3]);
    c.bench_function("pendulum_step_rk4", |b| {
        b.iter(|| {
            let step = env.step(black_box(&action)).unwrap();
            if step.done {
                env.reset();
            }
            black_box(step.reward)
        })
    });
}

criterion_group!(
    benches,
    bench_network,
    bench_retrace,
    bench_dual_solver,
    bench_improvement,
    bench_env
);
criterion_main!(benches);
