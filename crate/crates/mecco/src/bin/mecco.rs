//! Command-line interface for the offloading simulator.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use mecco::agent::{self, DqnAgent};
use mecco::chain::{
    build_offload_tx, contract_add_md, payload_digest, verify_request, Account, Chain, PolicyTable,
};
use mecco::config::Config;
use mecco::env::{ActionRestriction, Environment, MeccoEnv};
use mecco::harness::{self, eval_seeds, run_pipeline, run_sweep, PipelineOptions};
use mecco::policies::{brute_force_oracle, evaluate_policy, PolicyKind};
use mecco::{Error, Result};

#[derive(Parser)]
#[command(
    name = "mecco",
    version,
    about = "Simulator and solver for secure multi-user mobile edge-cloud computation offloading"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a learned offloading policy and save its model.
    Train {
        /// Configuration file; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Master seed, overriding the config's `seed` key.
        #[arg(long)]
        seed: Option<u64>,
        /// Output model path.
        #[arg(long)]
        out: PathBuf,
        /// One of ADRLO, DRLO, no-edge-alloc, no-bw-alloc.
        #[arg(long, default_value = "ADRLO")]
        policy: String,
        /// Override the configured training episode count.
        #[arg(long)]
        episodes: Option<usize>,
        /// Also write a per-episode training trace CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Evaluate one policy greedily over a seed range and write a report.
    Eval {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output report CSV path.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "EO")]
        policy: String,
        /// Trained model, required for learned policies.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Number of evaluation seeds (consecutive from the master seed).
        #[arg(long = "seeds-per-point", default_value_t = 50)]
        seeds_per_point: usize,
    },
    /// Run a named experiment sweep and write its CSV artifact.
    Sweep {
        /// One of fig8a, fig8b, fig9a, fig9b, fig10.
        #[arg(long)]
        preset: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long = "seeds-per-point", default_value_t = 50)]
        seeds_per_point: usize,
        /// Train each learned policy once for the whole sweep instead of
        /// once per grid point; episodes are drawn across the grid and the
        /// total budget matches what per-point training would spend.
        #[arg(long = "shared-model")]
        shared_model: bool,
        /// Override the preset's policy list (comma-separated names).
        #[arg(long)]
        policies: Option<String>,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Solve one drawn instance exactly and print the optimal plan.
    Oracle {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Optional CSV artifact for the optimal plan.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Joint run: register devices, gate their requests on a ledger, then
    /// offload for the authorized subset.
    Pipeline {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output CSV with verdicts and per-device costs.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Persist the resulting ledger to this path.
        #[arg(long)]
        ledger: Option<PathBuf>,
        #[arg(long, default_value = "ADRLO")]
        policy: String,
        /// Trained model; learned policies train inline when omitted.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Leave this many devices unregistered so the gate denies them.
        #[arg(long, default_value_t = 0)]
        unregistered: usize,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Operate directly on a persisted ledger and policy table.
    Chain {
        #[command(subcommand)]
        action: ChainAction,
    },
}

#[derive(Subcommand)]
enum ChainAction {
    /// Create a fresh ledger and policy table.
    Init {
        #[arg(long)]
        ledger: PathBuf,
        /// Policy table path; defaults to `<ledger>.policy`.
        #[arg(long)]
        state: Option<PathBuf>,
        #[arg(long, default_value_t = 3)]
        miners: usize,
        #[arg(long = "admin-seed", default_value_t = 0)]
        admin_seed: u64,
    },
    /// Register a device id under an owner key (admin operation).
    Register {
        #[arg(long)]
        ledger: PathBuf,
        #[arg(long)]
        state: Option<PathBuf>,
        /// Device identifier to authorize.
        #[arg(long)]
        device: String,
        /// Seed of the owning account's key pair.
        #[arg(long = "device-seed")]
        device_seed: u64,
        #[arg(long = "admin-seed", default_value_t = 0)]
        admin_seed: u64,
    },
    /// Submit an offload request through the access gate and commit the
    /// verdict.
    Request {
        #[arg(long)]
        ledger: PathBuf,
        #[arg(long)]
        state: Option<PathBuf>,
        #[arg(long)]
        device: String,
        #[arg(long = "device-seed")]
        device_seed: u64,
        #[arg(long = "admin-seed", default_value_t = 0)]
        admin_seed: u64,
        /// Request body; only its digest is committed.
        #[arg(long, default_value = "offload")]
        payload: String,
    },
    /// Re-verify every block, transaction, and nonce in the ledger.
    Audit {
        #[arg(long)]
        ledger: PathBuf,
        #[arg(long)]
        state: Option<PathBuf>,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli.command) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

fn load_config(
    path: &Option<PathBuf>,
    seed: Option<u64>,
    episodes: Option<usize>,
) -> Result<Config> {
    let mut cfg = match path {
        Some(p) => Config::load(p)?,
        None => Config::parse("")?,
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(e) = episodes {
        cfg.agent.episodes = e;
    }
    Ok(cfg)
}

fn parse_policy(name: &str) -> Result<PolicyKind> {
    PolicyKind::parse(name)
}

fn learned_policy(name: &str) -> Result<PolicyKind> {
    let kind = parse_policy(name)?;
    if !kind.is_learned() {
        return Err(Error::Config {
            line: None,
            message: format!(
                "policy {name} is not trainable; choose ADRLO, DRLO, no-edge-alloc, or no-bw-alloc"
            ),
        });
    }
    Ok(kind)
}

fn state_path(ledger: &Path, state: &Option<PathBuf>) -> PathBuf {
    state
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("{}.policy", ledger.display())))
}

/// Build the agent for a learned policy from a saved model file.
fn agent_from_model(path: &Path, cfg: &Config, seed: u64) -> Result<DqnAgent> {
    let (net, variant) = agent::load_model(path)?;
    Ok(DqnAgent::from_network(net, &cfg.agent, variant, seed))
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Train { config, seed, out, policy, episodes, trace } => {
            let cfg = load_config(&config, seed, episodes)?;
            let kind = learned_policy(&policy)?;
            let mut env = MeccoEnv::with_restriction(&cfg, cfg.seed, kind.restriction())?;
            let mut agent = DqnAgent::new(
                mecco::env::STATE_DIM,
                env.n_actions(),
                &cfg.agent,
                harness::policy_variant(kind),
                cfg.seed,
            );
            let records = agent::train(&mut agent, &mut env)?;
            agent::save_model(&agent, &out)?;
            if let Some(trace_path) = &trace {
                agent::write_trace(&records, trace_path)?;
            }
            let last = records.last();
            println!(
                "trained {} for {} episodes (final epsilon {}, final episode cost {})",
                kind,
                records.len(),
                last.map(|r| r.epsilon).unwrap_or(0.0),
                last.map(|r| r.episode_cost).unwrap_or(0.0),
            );
            println!("model -> {}", out.display());
            Ok(())
        }

        Command::Eval { config, seed, out, policy, model, seeds_per_point } => {
            let cfg = load_config(&config, seed, None)?;
            let kind = parse_policy(&policy)?;
            let agent = match (&model, kind.is_learned()) {
                (Some(path), _) => Some(agent_from_model(path, &cfg, cfg.seed)?),
                (None, true) => {
                    return Err(Error::Config {
                        line: None,
                        message: format!("policy {policy} needs --model; train one first"),
                    })
                }
                (None, false) => None,
            };
            let seeds = eval_seeds(cfg.seed, seeds_per_point);
            let report = evaluate_policy(kind, agent.as_ref(), &seeds, |s| {
                MeccoEnv::with_restriction(&cfg, s, kind.restriction())
            })?;
            harness::write_text(&out, &harness::render_eval_csv(&cfg, &seeds, &report))?;
            println!(
                "{}: mean cost {} over {} seeds (edge fraction {}, fallbacks {})",
                kind,
                report.aggregate_cost,
                seeds.len(),
                report.aggregate_edge_fraction,
                report.total_fallbacks
            );
            println!("report -> {}", out.display());
            Ok(())
        }

        Command::Sweep {
            preset,
            config,
            seed,
            out,
            seeds_per_point,
            shared_model,
            policies,
            episodes,
        } => {
            let cfg = load_config(&config, seed, episodes)?;
            let mut spec = harness::preset(&preset, cfg.clone(), cfg.seed, seeds_per_point)?;
            if let Some(list) = &policies {
                spec.policies = list
                    .split(',')
                    .map(|name| parse_policy(name.trim()))
                    .collect::<Result<Vec<_>>>()?;
            }
            spec.shared_model = shared_model;
            spec.validate()?;
            let outcome = run_sweep(&spec)?;
            harness::write_text(&out, &outcome.csv)?;
            let skipped = outcome.rows.iter().filter(|r| r.skipped).count();
            println!(
                "{}: {} rows ({} skipped) over {} points x {} policies x {} seeds",
                preset,
                outcome.rows.len(),
                skipped,
                spec.grid.len(),
                spec.policies.len(),
                spec.seeds_per_point
            );
            println!("sweep -> {}", out.display());
            Ok(())
        }

        Command::Oracle { config, seed, out } => {
            let cfg = load_config(&config, seed, None)?;
            let mut env = MeccoEnv::from_config(&cfg, cfg.seed)?;
            env.reset();
            let solution = brute_force_oracle(
                env.scenario(),
                env.device(),
                env.tasks(),
                cfg.levels_f,
                cfg.levels_w,
                ActionRestriction::None,
            )?;
            println!("optimal cost {} for {} devices", solution.total_cost, env.n_devices());
            for (i, asg) in solution.plan.assignments.iter().enumerate() {
                let platform = if asg.edge { "edge" } else { "cloud" };
                println!(
                    "device {i}: {platform}, edge {} cycles/s, bandwidth fraction {}",
                    asg.edge_cycles_per_s, asg.bandwidth_frac
                );
            }
            if let Some(path) = &out {
                let csv = harness::render_oracle_csv(&cfg, cfg.seed, &solution, &env);
                harness::write_text(path, &csv)?;
                println!("plan -> {}", path.display());
            }
            Ok(())
        }

        Command::Pipeline {
            config,
            seed,
            out,
            ledger,
            policy,
            model,
            unregistered,
            episodes,
        } => {
            let cfg = load_config(&config, seed, episodes)?;
            let kind = parse_policy(&policy)?;
            let opts = PipelineOptions { policy: kind, model_path: model, unregistered };
            let run = run_pipeline(&cfg, cfg.seed, &opts)?;
            for v in &run.verdicts {
                println!(
                    "{}: {} ({})",
                    v.device_id,
                    if v.granted { "granted" } else { "denied" },
                    v.message
                );
            }
            match &run.offload {
                Some(o) => println!(
                    "offloaded {} devices, total cost {} ({} fallbacks)",
                    o.per_device.len(),
                    o.total_cost,
                    o.fallback_count
                ),
                None => println!("no devices authorized; offloading phase empty"),
            }
            println!("ledger height {} (verified)", run.chain.height());
            if let Some(path) = &out {
                harness::write_text(path, &harness::render_pipeline_csv(&run, &cfg, cfg.seed))?;
                println!("report -> {}", path.display());
            }
            if let Some(path) = &ledger {
                run.chain.save(path)?;
                println!("ledger -> {}", path.display());
            }
            Ok(())
        }

        Command::Chain { action } => chain_command(action),
    }
}

fn chain_command(action: ChainAction) -> Result<()> {
    match action {
        ChainAction::Init { ledger, state, miners, admin_seed } => {
            let state = state_path(&ledger, &state);
            let roster = (0..miners.max(1)).map(|i| format!("miner-{i}")).collect();
            let chain = Chain::new(roster)?;
            chain.save(&ledger)?;
            let admin = Account::from_seed(admin_seed);
            PolicyTable::new(admin.public_key()).save(&state)?;
            println!("ledger -> {} (genesis only)", ledger.display());
            println!("policy table -> {}", state.display());
            Ok(())
        }

        ChainAction::Register { ledger, state, device, device_seed, admin_seed } => {
            let state = state_path(&ledger, &state);
            let mut chain = Chain::load(&ledger)?;
            let mut table = PolicyTable::load(&state)?;
            let mut admin = Account::from_seed(admin_seed);
            admin.set_next_nonce(chain.committed_count(&admin.public_key()));
            let owner = Account::from_seed(device_seed);
            let tx = contract_add_md(&mut table, &mut admin, owner.public_key(), &device)?;
            let outcome = chain.mine_block(vec![tx]);
            if outcome.block.is_none() {
                return Err(Error::Domain("registration transaction was rejected".into()));
            }
            chain.save(&ledger)?;
            table.save(&state)?;
            println!("registered {device} at height {}", chain.height());
            Ok(())
        }

        ChainAction::Request { ledger, state, device, device_seed, admin_seed, payload } => {
            let state = state_path(&ledger, &state);
            let mut chain = Chain::load(&ledger)?;
            let table = PolicyTable::load(&state)?;
            let mut admin = Account::from_seed(admin_seed);
            admin.set_next_nonce(chain.committed_count(&admin.public_key()));
            let mut sender = Account::from_seed(device_seed);
            sender.set_next_nonce(chain.committed_count(&sender.public_key()));
            let tx = build_offload_tx(&mut sender, &device, payload_digest(payload.as_bytes()))?;
            let result = verify_request(&tx, &table, &mut admin)?;
            let pool = if result.granted {
                vec![tx]
            } else {
                vec![result.penalty.clone().expect("denials carry a penalty")]
            };
            let outcome = chain.mine_block(pool);
            if outcome.block.is_none() {
                return Err(Error::Domain("verdict transaction was rejected".into()));
            }
            chain.save(&ledger)?;
            println!(
                "{device}: {} ({}) committed at height {}",
                if result.granted { "granted" } else { "denied" },
                result.message,
                chain.height()
            );
            Ok(())
        }

        ChainAction::Audit { ledger, state } => {
            let chain = Chain::load(&ledger)?;
            let txs = chain.transactions().count();
            let ok = chain.verify();
            println!(
                "height {}, {} transactions, verification {}",
                chain.height(),
                txs,
                if ok { "passed" } else { "FAILED" }
            );
            if let Some(path) = &state {
                let table = PolicyTable::load(path)?;
                println!("policy table: {} registered keys", table.len());
            }
            if !ok {
                return Err(Error::Domain("ledger verification failed".into()));
            }
            Ok(())
        }
    }
}
