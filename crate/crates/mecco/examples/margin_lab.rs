//! Scratch experiment harness for comparing learner variants. Not part of
//! the shipped surface; used to calibrate training hyperparameters.

use mecco::agent::{self, DqnAgent, Variant};
use mecco::config::Config;
use mecco::env::{Environment, MeccoEnv, STATE_DIM};
use mecco::model::{cloud_cost, cloud_share, edge_cost, Task};
use mecco::policies::{evaluate_policy, PolicyKind};

/// Exact optimum of one instance over the quantized plan space, by DP on
/// the two remaining-budget axes. Valid because per-device costs are
/// independent given their own shares (EqualSplit divides by N, fixed).
fn dp_optimal(env: &MeccoEnv) -> f64 {
    let sc = env.scenario();
    let dev = env.device();
    let (lf, lw) = env.levels();
    let tasks: Vec<Task> = env.tasks().to_vec();
    let n = tasks.len();
    let f_c = cloud_share(sc, n);
    let inf = f64::INFINITY;
    // dp[rf][rw] = min cost so far leaving rf edge quanta and rw bandwidth
    // quanta unspent.
    let mut dp = vec![vec![inf; lw + 1]; lf + 1];
    dp[lf][lw] = 0.0;
    for (i, task) in tasks.iter().enumerate() {
        let remaining_after = n - i - 1;
        let mut ndp = vec![vec![inf; lw + 1]; lf + 1];
        for rf in 0..=lf {
            for rw in 0..=lw {
                let base = dp[rf][rw];
                if !base.is_finite() {
                    continue;
                }
                for kw in 1..=rw.saturating_sub(remaining_after) {
                    let w = kw as f64 / lw as f64;
                    let c = cloud_cost(task, dev, w, f_c, sc).unwrap().weighted;
                    let cell = &mut ndp[rf][rw - kw];
                    *cell = cell.min(base + c);
                    for kf in 1..=rf {
                        let f = kf as f64 * sc.edge_cycles_per_s / lf as f64;
                        let c = edge_cost(task, dev, f, w, sc).unwrap().weighted;
                        let cell = &mut ndp[rf - kf][rw - kw];
                        *cell = cell.min(base + c);
                    }
                }
            }
        }
        dp = ndp;
    }
    dp.iter().flatten().copied().fold(inf, f64::min)
}

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.len() < 3 {
        eprintln!("usage: margin_lab <n_devices> <episodes> <train_seed>...");
        std::process::exit(2);
    }
    let n: usize = args[0].parse().unwrap();
    let episodes: usize = args[1].parse().unwrap();
    let train_seeds: Vec<u64> = args[2..].iter().map(|s| s.parse().unwrap()).collect();

    let mut cfg = Config::default();
    cfg.n_devices = n;
    cfg.task_min_mb = 0.1;
    cfg.task_max_mb = 1.0;
    cfg.agent.episodes = episodes;
    if let Ok(v) = std::env::var("LR") {
        cfg.agent.learning_rate = v.parse().unwrap();
    }
    if let Ok(v) = std::env::var("BATCH") {
        cfg.agent.batch_size = v.parse().unwrap();
    }
    if let Ok(v) = std::env::var("SYNC") {
        cfg.agent.target_sync_period = v.parse().unwrap();
    }
    if let Ok(v) = std::env::var("GAMMA") {
        cfg.agent.gamma = v.parse().unwrap();
    }
    if let Ok(v) = std::env::var("EPS_END") {
        cfg.agent.epsilon_end = v.parse().unwrap();
    }

    let eval_seeds: Vec<u64> = (500..550).collect();
    let mk = |seed: u64| MeccoEnv::from_config(&cfg, seed);

    for kind in [PolicyKind::Eo, PolicyKind::Co] {
        let rep = evaluate_policy(kind, None, &eval_seeds, mk).unwrap();
        println!("{:\u{20}<13} {:>10.6}", kind.name(), rep.aggregate_cost);
    }

    // Myopic floor: argmin immediate cost over the full feasible action set
    // at every step. Learned policies can in principle beat this (resource
    // budgeting across devices), but it bounds how much headroom exists.
    let mut myopic_sum = 0.0;
    for &seed in &eval_seeds {
        let mut env = mk(seed).unwrap();
        env.reset();
        while !env.finished() {
            let mask = env.feasible_mask();
            let mut best: Option<(usize, f64)> = None;
            for (a, &ok) in mask.iter().enumerate() {
                if !ok {
                    continue;
                }
                let c = env.action_cost(a).unwrap().weighted;
                if best.is_none_or(|(_, bc)| c < bc) {
                    best = Some((a, c));
                }
            }
            env.try_step(best.unwrap().0).unwrap();
        }
        myopic_sum += env.total_cost();
    }
    println!("{:\u{20}<13} {:>10.6}", "myopic", myopic_sum / eval_seeds.len() as f64);

    let mut opt_sum = 0.0;
    for &seed in &eval_seeds {
        let mut env = mk(seed).unwrap();
        env.reset();
        opt_sum += dp_optimal(&env);
    }
    println!("{:\u{20}<13} {:>10.6}", "dp-optimal", opt_sum / eval_seeds.len() as f64);

    let combos = [
        ("vanilla", Variant { dueling: false, double_q: false }),
        ("double-only", Variant { dueling: false, double_q: true }),
        ("dueling-only", Variant { dueling: true, double_q: false }),
        ("dbl+dueling", Variant { dueling: true, double_q: true }),
    ];
    let filter = std::env::var("VARIANTS").unwrap_or_default();
    for (name, variant) in combos {
        if !filter.is_empty() && !filter.split(',').any(|f| name.starts_with(f)) {
            continue;
        }
        for &ts in &train_seeds {
            let mut env = MeccoEnv::from_config(&cfg, ts).unwrap();
            let mut agent = DqnAgent::new(STATE_DIM, env.n_actions(), &cfg.agent, variant, ts);
            agent::train(&mut agent, &mut env).unwrap();
            let rep = evaluate_policy(PolicyKind::Adrlo, Some(&agent), &eval_seeds, mk).unwrap();
            println!("{name:\u{20}<13} seed={ts} {:>10.6}", rep.aggregate_cost);
        }
    }
}
