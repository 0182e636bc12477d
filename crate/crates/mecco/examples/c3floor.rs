//! Scratch: information floor for the small-instance criterion.
//!
//! Device 2 decides with full knowledge of its own task, so the only
//! uncertainty is device 1's budget split. The Bayes-optimal first action
//! minimizes c1(a) + E[best c2 | remaining budget] over the task
//! distribution; this program Monte-Carlo-estimates that policy and
//! reports its per-instance ratio to the exhaustive oracle. No learned
//! policy on the shipped state can beat this floor.

use mecco::config::Config;
use mecco::env::{ActionRestriction, Environment, MeccoEnv};
use mecco::model::{cloud_cost, cloud_share, edge_cost, Task};
use mecco::policies::brute_force_oracle;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn envf(key: &str, default: f64) -> f64 {
    std::env::var(key).ok().and_then(|v| v.parse().ok()).unwrap_or(default)
}

fn main() {
    let mut cfg = Config::default();
    cfg.n_devices = 2;
    cfg.levels_f = 4;
    cfg.levels_w = 4;
    cfg.task_max_mb = envf("TASK_MAX", cfg.task_max_mb);
    cfg.task_min_mb = envf("TASK_MIN", cfg.task_min_mb);
    let samples = envf("SAMPLES", 4000.0) as usize;
    let (lf, lw) = (cfg.levels_f, cfg.levels_w);

    let sc = cfg.scenario();
    let dev = cfg.device();
    let f_c = cloud_share(&sc, 2);

    let gen = cfg.task_gen();
    let mut rng = ChaCha20Rng::seed_from_u64(0xF100);
    let pool: Vec<Task> = (0..samples).map(|_| gen.sample(&mut rng)).collect();

    // Best informed cost for one task given remaining quanta (no reserve).
    let best2 = |task: &Task, rf: usize, rw: usize| -> f64 {
        let mut m = f64::INFINITY;
        for kw in 1..=rw {
            let w = kw as f64 / lw as f64;
            if let Ok(c) = cloud_cost(task, &dev, w, f_c, &sc) {
                m = m.min(c.weighted);
            }
            for kf in 1..=rf {
                let f = kf as f64 * sc.edge_cycles_per_s / lf as f64;
                if let Ok(c) = edge_cost(task, &dev, f, w, &sc) {
                    m = m.min(c.weighted);
                }
            }
        }
        m
    };

    let mut worst: f64 = 0.0;
    let mut fails = 0;
    let mut sum = 0.0;
    for seed in 9000..9020u64 {
        let mut env = MeccoEnv::from_config(&cfg, seed).unwrap();
        env.reset();
        let tasks = env.tasks().to_vec();
        let t1 = &tasks[0];
        let t2 = &tasks[1];

        // Device 1's options: reserve one bandwidth quantum for device 2.
        let mut best = (f64::INFINITY, 0usize, 0usize, false);
        for kw in 1..=(lw - 1) {
            let w = kw as f64 / lw as f64;
            // Cloud choice.
            if let Ok(c) = cloud_cost(t1, &dev, w, f_c, &sc) {
                let mut exp = 0.0;
                for t in &pool {
                    exp += best2(t, lf, lw - kw);
                }
                let total = c.weighted + exp / pool.len() as f64;
                if total < best.0 {
                    best = (total, 0, kw, false);
                }
            }
            // Edge choices.
            for kf in 1..=lf {
                let f = kf as f64 * sc.edge_cycles_per_s / lf as f64;
                if let Ok(c) = edge_cost(t1, &dev, f, w, &sc) {
                    let mut exp = 0.0;
                    for t in &pool {
                        exp += best2(t, lf - kf, lw - kw);
                    }
                    let total = c.weighted + exp / pool.len() as f64;
                    if total < best.0 {
                        best = (total, kf, kw, true);
                    }
                }
            }
        }

        // Play: Bayes first action, informed-best second.
        let (_, kf, kw, edge) = best;
        let c1 = if edge {
            edge_cost(t1, &dev, kf as f64 * sc.edge_cycles_per_s / lf as f64, kw as f64 / lw as f64, &sc)
                .unwrap()
                .weighted
        } else {
            cloud_cost(t1, &dev, kw as f64 / lw as f64, f_c, &sc).unwrap().weighted
        };
        let rf = if edge { lf - kf } else { lf };
        let got = c1 + best2(t2, rf, lw - kw);

        let opt = brute_force_oracle(&sc, &dev, &tasks, lf, lw, ActionRestriction::None)
            .unwrap()
            .total_cost;
        let ratio = got / opt;
        sum += ratio;
        worst = worst.max(ratio);
        if ratio > 1.05 {
            fails += 1;
            println!("  seed={seed}: bayes {got:.6} opt {opt:.6} ratio {ratio:.4}");
        }
    }
    println!(
        "task range [{}, {}] MB: worst {:.4}, mean {:.4}, fails {}/20",
        cfg.task_min_mb,
        cfg.task_max_mb,
        worst,
        sum / 20.0,
        fails
    );
}
