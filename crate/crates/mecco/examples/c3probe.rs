//! Scratch probe for the small-instance oracle-equivalence margin.

use mecco::config::Config;
use mecco::env::{ActionRestriction, MeccoEnv};
use mecco::harness::train_policy_model;
use mecco::policies::{brute_force_oracle, run_episode, PolicyKind};

fn envf(key: &str, default: f64) -> f64 {
    std::env::var(key).ok().and_then(|v| v.parse().ok()).unwrap_or(default)
}

fn main() {
    let train_seeds: Vec<u64> =
        std::env::args().skip(1).map(|a| a.parse().unwrap()).collect();
    let mut cfg = Config::default();
    cfg.n_devices = 2;
    cfg.levels_f = 4;
    cfg.levels_w = 4;
    cfg.agent.episodes = envf("EPISODES", 3000.0) as usize;
    cfg.agent.gamma = envf("GAMMA", cfg.agent.gamma);
    cfg.agent.target_sync_period = envf("SYNC", cfg.agent.target_sync_period as f64) as usize;
    cfg.agent.learning_rate = envf("LR", cfg.agent.learning_rate);
    cfg.agent.batch_size = envf("BATCH", cfg.agent.batch_size as f64) as usize;
    cfg.agent.epsilon_end = envf("EPS_END", cfg.agent.epsilon_end);
    cfg.task_max_mb = envf("TASK_MAX", cfg.task_max_mb);
    eprintln!(
        "episodes={} gamma={} sync={} lr={} batch={} eps_end={} task_max={}",
        cfg.agent.episodes,
        cfg.agent.gamma,
        cfg.agent.target_sync_period,
        cfg.agent.learning_rate,
        cfg.agent.batch_size,
        cfg.agent.epsilon_end,
        cfg.task_max_mb
    );

    for ts in train_seeds {
        let agent = train_policy_model(&cfg, PolicyKind::Adrlo, ts).unwrap();
        let mut worst = 0.0f64;
        let mut fails = 0;
        let mut ratios = Vec::new();
        for seed in 9000..9020u64 {
            let mut env = MeccoEnv::from_config(&cfg, seed).unwrap();
            run_episode(PolicyKind::Adrlo, Some(&agent), &mut env, seed).unwrap();
            let got = env.total_cost();
            let opt = brute_force_oracle(
                env.scenario(),
                env.device(),
                env.tasks(),
                cfg.levels_f,
                cfg.levels_w,
                ActionRestriction::None,
            )
            .unwrap()
            .total_cost;
            let ratio = got / opt;
            ratios.push(ratio);
            if ratio > worst {
                worst = ratio;
            }
            if ratio > 1.05 {
                fails += 1;
                println!("  ts={ts} seed={seed}: got {got:.6} opt {opt:.6} ratio {ratio:.4}");
            }
        }
        let mean: f64 = ratios.iter().sum::<f64>() / ratios.len() as f64;
        println!("ts={ts}: worst ratio {worst:.4}, mean {mean:.4}, fails {fails}/20");
    }
}
