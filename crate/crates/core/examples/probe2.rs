use hybrid_mpo::env::{Environment, PendulumEnv, PendulumParams};
use hybrid_mpo::space::HybridAction;
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};

fn main() {
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(1);
    let normal = Normal::new(0.0f64, 0.7).unwrap();
    for w in [2.0f64] {
        let mut best_rewards = vec![];
        let mut best_angles = vec![];
        for ep in 0..40 {
            let mut env = PendulumEnv::new(PendulumParams { reward_width: w, ..Default::default() }, ep);
            env.reset();
            let mut best_r: f64 = 0.0;
            let mut best_a: f64 = std::f64::consts::PI;
            for _ in 0..300 {
                let a = normal.sample(&mut rng);
                let s = env.step(&HybridAction::continuous(vec![a])).unwrap();
                best_r = best_r.max(s.reward);
                best_a = best_a.min(env.state()[0].abs());
                if s.done { break; }
            }
            best_rewards.push(best_r);
            best_angles.push(best_a);
        }
        best_angles.sort_by(|a,b| a.partial_cmp(b).unwrap());
        best_rewards.sort_by(|a,b| a.partial_cmp(b).unwrap());
        println!("w={w}: best angle reached p10/p50/p90 = {:.2}/{:.2}/{:.2} rad; best reward p50={:.4} p90={:.4}",
            best_angles[4], best_angles[20], best_angles[36], best_rewards[20], best_rewards[36]);
    }
}
