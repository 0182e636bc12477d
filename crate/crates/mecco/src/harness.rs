//! Experiment harness: named sweep presets, the sweep runner, the joint
//! access-control-plus-offloading pipeline, and CSV artifact emission.
//!
//! Every CSV artifact opens with `#` comment lines carrying the effective
//! config hash, the seed list, and the full config echo, so an artifact
//! can be reproduced byte for byte from its own header.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::agent::{self, DqnAgent, Variant};
use crate::chain::{
    build_offload_tx, contract_add_md, payload_digest, verify_request, Account, Chain,
    PolicyTable, TxKind,
};
use crate::config::Config;
use crate::env::{Environment, MeccoEnv, STATE_DIM};
use crate::error::{Error, Result};
use crate::policies::{run_episode, seed_result, PolicyKind, SeedResult};

// ---- seeding ----

/// Finalizer-style mix for deriving independent stream seeds.
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Evaluation seeds are consecutive from the master seed, identical for
/// every grid point and policy, so comparisons are paired.
pub fn eval_seeds(master: u64, count: usize) -> Vec<u64> {
    (0..count as u64).map(|i| master.wrapping_add(i)).collect()
}

/// Training seeds must not collide with each other or the eval stream.
fn train_seed(master: u64, point: usize, policy: PolicyKind) -> u64 {
    let policy_idx = PolicyKind::ALL.iter().position(|k| *k == policy).unwrap_or(0) as u64;
    splitmix64(splitmix64(master ^ 0x7261_696e_5f73_6565).wrapping_add((point as u64) << 8 | policy_idx))
}

// ---- sweeps ----

/// Axis a sweep walks over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepVar {
    NDevices,
    TaskSizeMb,
    EdgeCapacityGhz,
    BandwidthMhz,
}

impl SweepVar {
    pub fn name(self) -> &'static str {
        match self {
            SweepVar::NDevices => "n_devices",
            SweepVar::TaskSizeMb => "task_size_mb",
            SweepVar::EdgeCapacityGhz => "edge_capacity_ghz",
            SweepVar::BandwidthMhz => "bandwidth_mhz",
        }
    }

    /// Overwrite the swept field in a point configuration. Task-size
    /// sweeps fix every task to the point's size.
    pub fn apply(self, cfg: &mut Config, value: f64) {
        match self {
            SweepVar::NDevices => cfg.n_devices = value as usize,
            SweepVar::TaskSizeMb => {
                cfg.task_min_mb = value;
                cfg.task_max_mb = value;
            }
            SweepVar::EdgeCapacityGhz => cfg.edge_capacity_ghz = value,
            SweepVar::BandwidthMhz => cfg.bandwidth_mhz = value,
        }
    }
}

/// One experiment sweep: an axis, a value grid, policies to compare, and
/// seeding. Built by `preset` or assembled directly.
#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub preset: String,
    pub var: SweepVar,
    pub grid: Vec<f64>,
    pub policies: Vec<PolicyKind>,
    pub seeds_per_point: usize,
    /// Train one model per learned policy on the base config and reuse it
    /// at every point, instead of retraining per point.
    pub shared_model: bool,
    pub master_seed: u64,
    pub base: Config,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        fn bad(message: String) -> Error {
            Error::Config { line: None, message }
        }
        if self.grid.is_empty() {
            return Err(bad("sweep grid must be non-empty".into()));
        }
        if !self.grid.windows(2).all(|w| w[0] < w[1]) {
            return Err(bad("sweep grid must be strictly increasing".into()));
        }
        if self.var == SweepVar::NDevices
            && self.grid.iter().any(|v| *v < 1.0 || v.fract() != 0.0)
        {
            return Err(bad("n_devices grid values must be positive integers".into()));
        }
        if self.grid.iter().any(|v| *v <= 0.0 || !v.is_finite()) {
            return Err(bad("sweep grid values must be positive and finite".into()));
        }
        if self.policies.is_empty() {
            return Err(bad("sweep needs at least one policy".into()));
        }
        if self.seeds_per_point == 0 {
            return Err(bad("seeds per point must be at least 1".into()));
        }
        Ok(())
    }

    /// Effective configuration at one grid point.
    pub fn point_config(&self, value: f64) -> Config {
        let mut cfg = self.base.clone();
        self.var.apply(&mut cfg, value);
        cfg
    }
}

pub const PRESET_NAMES: [&str; 5] = ["fig8a", "fig8b", "fig9a", "fig9b", "fig10"];

/// Named sweep presets reproducing the reference experiment grids. The
/// base config seeds scenario constants; each preset pins the fields that
/// define its figure.
pub fn preset(name: &str, mut base: Config, master_seed: u64, seeds_per_point: usize) -> Result<SweepSpec> {
    use PolicyKind::*;
    let (var, grid, policies): (SweepVar, Vec<f64>, Vec<PolicyKind>) = match name {
        // Cost versus device count on sub-megabyte tasks.
        "fig8a" => {
            base.task_min_mb = 0.1;
            base.task_max_mb = 1.0;
            (SweepVar::NDevices, vec![2.0, 4.0, 6.0, 8.0, 10.0, 12.0], vec![Adrlo, Drlo, Eo, Co])
        }
        // Cost versus task size for a single device; EO and CO cross.
        "fig8b" => {
            base.n_devices = 1;
            (SweepVar::TaskSizeMb, vec![2.0, 4.0, 6.0, 8.0, 10.0, 12.0], vec![Adrlo, Drlo, Eo, Co])
        }
        // Cost versus edge capacity: CO is exactly flat, EO strictly falls.
        "fig9a" => {
            base.n_devices = 10;
            (
                SweepVar::EdgeCapacityGhz,
                vec![0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0, 4.5, 5.0],
                vec![Eo, Co],
            )
        }
        // Cost versus total bandwidth: every policy non-increasing.
        "fig9b" => {
            base.n_devices = 10;
            (
                SweepVar::BandwidthMhz,
                vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0],
                vec![Eo, Co],
            )
        }
        // Ablations: the full scheme against its fixed-allocation variants.
        "fig10" => {
            base.n_devices = 10;
            (
                SweepVar::TaskSizeMb,
                vec![2.0, 4.0, 6.0, 8.0, 10.0, 12.0],
                vec![Adrlo, NoEdgeAlloc, NoBwAlloc],
            )
        }
        _ => {
            return Err(Error::Config {
                line: None,
                message: format!(
                    "unknown preset {name:?}; expected one of {}",
                    PRESET_NAMES.join(", ")
                ),
            })
        }
    };
    let spec = SweepSpec {
        preset: name.to_string(),
        var,
        grid,
        policies,
        seeds_per_point,
        shared_model: false,
        master_seed,
        base,
    };
    spec.validate()?;
    Ok(spec)
}

/// Seed column of a sweep row: a concrete seed or the aggregate marker.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeedCol {
    Seed(u64),
    Mean,
}

impl std::fmt::Display for SeedCol {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SeedCol::Seed(s) => write!(f, "{s}"),
            SeedCol::Mean => f.write_str("mean"),
        }
    }
}

/// One output row of a sweep artifact.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub value: f64,
    pub policy: PolicyKind,
    pub seed: SeedCol,
    pub total_cost: Option<f64>,
    pub mean_latency_s: Option<f64>,
    pub mean_energy_j: Option<f64>,
    pub skipped: bool,
    pub reason: String,
}

impl SweepRow {
    fn data(value: f64, policy: PolicyKind, seed: SeedCol, r: &SeedResult) -> SweepRow {
        SweepRow {
            value,
            policy,
            seed,
            total_cost: Some(r.total_cost),
            mean_latency_s: Some(r.mean_latency_s),
            mean_energy_j: Some(r.mean_energy_j),
            skipped: false,
            reason: String::new(),
        }
    }

    fn skip(value: f64, policy: PolicyKind, seed: SeedCol, reason: &str) -> SweepRow {
        SweepRow {
            value,
            policy,
            seed,
            total_cost: None,
            mean_latency_s: None,
            mean_energy_j: None,
            skipped: true,
            // Keep the reason on one unquoted CSV field.
            reason: reason.replace([',', '\n'], ";"),
        }
    }

    pub fn is_aggregate(&self) -> bool {
        self.seed == SeedCol::Mean
    }
}

/// Completed sweep: ordered rows plus the rendered artifact.
#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub rows: Vec<SweepRow>,
    pub csv: String,
}

/// Head shape and bootstrap rule a learned policy trains with. The
/// ablations keep the full scheme's architecture; only their action
/// space shrinks.
pub fn policy_variant(kind: PolicyKind) -> Variant {
    match kind {
        PolicyKind::Drlo => Variant::DRLO,
        _ => Variant::ADRLO,
    }
}

/// Train a model for a learned policy on the given configuration, under
/// the policy's action restriction.
pub fn train_policy_model(cfg: &Config, kind: PolicyKind, seed: u64) -> Result<DqnAgent> {
    let mut env = MeccoEnv::with_restriction(cfg, seed, kind.restriction())?;
    let mut agent =
        DqnAgent::new(STATE_DIM, env.n_actions(), &cfg.agent, policy_variant(kind), seed);
    agent::train(&mut agent, &mut env)?;
    Ok(agent)
}

/// Training environment that draws each episode from one point of a sweep
/// grid, so a single shared model sees every scenario it will later be
/// evaluated on. All states on the grid stay in-distribution; training on
/// just the base scenario leaves the other grid points to extrapolation
/// (the initial observation does not even distinguish device counts).
struct GridMixEnv {
    members: Vec<MeccoEnv>,
    rng: rand_chacha::ChaCha20Rng,
    current: usize,
}

impl GridMixEnv {
    fn new(members: Vec<MeccoEnv>, seed: u64) -> Result<GridMixEnv> {
        if members.is_empty() {
            return Err(Error::Domain("grid training needs at least one member".into()));
        }
        if members.iter().any(|e| e.n_actions() != members[0].n_actions()) {
            return Err(Error::Domain(
                "grid members disagree on the action count; levels must not vary".into(),
            ));
        }
        use rand::SeedableRng;
        let rng = rand_chacha::ChaCha20Rng::seed_from_u64(splitmix64(seed ^ 0x6d69_78));
        Ok(GridMixEnv { members, rng, current: 0 })
    }
}

impl Environment for GridMixEnv {
    fn state_dim(&self) -> usize {
        self.members[self.current].state_dim()
    }
    fn n_actions(&self) -> usize {
        self.members[self.current].n_actions()
    }
    fn reset(&mut self) -> Vec<f64> {
        use rand::Rng;
        self.current = self.rng.gen_range(0..self.members.len());
        self.members[self.current].reset()
    }
    fn feasible(&self) -> Vec<bool> {
        self.members[self.current].feasible()
    }
    fn step(&mut self, action: usize) -> crate::env::StepOutcome {
        self.members[self.current].step(action)
    }
}

/// Train one shared model for a whole sweep: every training episode runs
/// at a grid point drawn uniformly, under the policy's restriction. The
/// model must cover every scenario on the grid, so it gets the same total
/// episode budget that per-point training would spend across the grid.
fn train_sweep_model(spec: &SweepSpec, kind: PolicyKind, seed: u64) -> Result<DqnAgent> {
    let members = spec
        .grid
        .iter()
        .map(|&v| MeccoEnv::with_restriction(&spec.point_config(v), seed, kind.restriction()))
        .collect::<Result<Vec<_>>>()?;
    let mut env = GridMixEnv::new(members, seed)?;
    let mut agent_cfg = spec.base.agent.clone();
    agent_cfg.episodes = agent_cfg.episodes.saturating_mul(spec.grid.len());
    let mut agent =
        DqnAgent::new(STATE_DIM, env.n_actions(), &agent_cfg, policy_variant(kind), seed);
    agent::train(&mut agent, &mut env)?;
    Ok(agent)
}

/// All rows for one (point, policy) cell: one row per seed (data or
/// skipped) plus an aggregate row when any seed produced data.
fn run_cell(
    spec: &SweepSpec,
    point_idx: usize,
    value: f64,
    cfg: &Config,
    policy: PolicyKind,
    shared: Option<&DqnAgent>,
    seeds: &[u64],
) -> Vec<SweepRow> {
    let trained;
    let agent: Option<&DqnAgent> = if policy.is_learned() {
        if let Some(a) = shared {
            Some(a)
        } else {
            match train_policy_model(cfg, policy, train_seed(spec.master_seed, point_idx, policy)) {
                Ok(a) => {
                    trained = a;
                    Some(&trained)
                }
                Err(e) => {
                    return seeds
                        .iter()
                        .map(|&s| SweepRow::skip(value, policy, SeedCol::Seed(s), &e.to_string()))
                        .collect()
                }
            }
        }
    } else {
        None
    };

    let mut rows = Vec::with_capacity(seeds.len() + 1);
    let mut done: Vec<SeedResult> = Vec::new();
    for &seed in seeds {
        let outcome = MeccoEnv::with_restriction(cfg, seed, policy.restriction())
            .and_then(|mut env| run_episode(policy, agent, &mut env, seed).map(|f| (env, f)));
        match outcome {
            Ok((env, fallbacks)) => {
                let r = seed_result(&env, seed, fallbacks);
                rows.push(SweepRow::data(value, policy, SeedCol::Seed(seed), &r));
                done.push(r);
            }
            Err(e) => rows.push(SweepRow::skip(value, policy, SeedCol::Seed(seed), &e.to_string())),
        }
    }
    if !done.is_empty() {
        let n = done.len() as f64;
        let mean = SeedResult {
            seed: 0,
            total_cost: done.iter().map(|r| r.total_cost).sum::<f64>() / n,
            mean_latency_s: done.iter().map(|r| r.mean_latency_s).sum::<f64>() / n,
            mean_energy_j: done.iter().map(|r| r.mean_energy_j).sum::<f64>() / n,
            edge_fraction: 0.0,
            fallback_count: 0,
        };
        rows.push(SweepRow::data(value, policy, SeedCol::Mean, &mean));
    }
    rows
}

/// Run a sweep. Grid points execute in parallel; rows are assembled in
/// deterministic (point, policy, seed) order regardless of scheduling.
pub fn run_sweep(spec: &SweepSpec) -> Result<SweepOutcome> {
    spec.validate()?;
    let seeds = eval_seeds(spec.master_seed, spec.seeds_per_point);

    // Shared-model mode trains each learned policy once across the whole
    // grid before the evaluation fans out.
    let mut shared: HashMap<PolicyKind, DqnAgent> = HashMap::new();
    if spec.shared_model {
        for &policy in &spec.policies {
            if policy.is_learned() && !shared.contains_key(&policy) {
                let agent =
                    train_sweep_model(spec, policy, train_seed(spec.master_seed, usize::MAX, policy))?;
                shared.insert(policy, agent);
            }
        }
    }

    let rows: Vec<SweepRow> = spec
        .grid
        .par_iter()
        .enumerate()
        .map(|(point_idx, &value)| {
            let cfg = spec.point_config(value);
            let mut point_rows = Vec::new();
            for &policy in &spec.policies {
                point_rows.extend(run_cell(
                    spec,
                    point_idx,
                    value,
                    &cfg,
                    policy,
                    shared.get(&policy),
                    &seeds,
                ));
            }
            point_rows
        })
        .reduce(Vec::new, |mut a, b| {
            a.extend(b);
            a
        });

    let csv = render_sweep_csv(spec, &seeds, &rows);
    Ok(SweepOutcome { rows, csv })
}

/// Hex SHA-256 of the canonical config text.
pub fn config_hash(cfg: &Config) -> String {
    let digest = Sha256::digest(cfg.canonical_string().as_bytes());
    digest.iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Render an evaluation report with the standard provenance header.
pub fn render_eval_csv(
    cfg: &Config,
    seeds: &[u64],
    report: &crate::policies::EvalReport,
) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# policy = {}", report.policy);
    out.push_str(&provenance_header(cfg, seeds));
    out.push_str(&crate::policies::eval_csv_body(report));
    out
}

/// Provenance header shared by every CSV artifact.
fn provenance_header(cfg: &Config, seeds: &[u64]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# config_hash = {}", config_hash(cfg));
    let _ = writeln!(out, "# seeds = {}", seeds.len());
    let list: Vec<String> = seeds.iter().map(|s| s.to_string()).collect();
    let _ = writeln!(out, "# seed_list = {}", list.join(","));
    for line in cfg.canonical_string().lines() {
        let _ = writeln!(out, "# config: {line}");
    }
    out
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn render_sweep_csv(spec: &SweepSpec, seeds: &[u64], rows: &[SweepRow]) -> String {
    let mut out = String::new();
    if !spec.preset.is_empty() {
        let _ = writeln!(out, "# preset = {}", spec.preset);
    }
    let _ = writeln!(out, "# sweep_var = {}", spec.var.name());
    let _ = writeln!(out, "# master_seed = {}", spec.master_seed);
    let _ = writeln!(out, "# shared_model = {}", spec.shared_model);
    let policies: Vec<&str> = spec.policies.iter().map(|p| p.name()).collect();
    let _ = writeln!(out, "# policies = {}", policies.join(","));
    out.push_str(&provenance_header(&spec.base, seeds));
    out.push_str("sweep_var,sweep_value,policy,seed,total_cost,mean_latency_s,mean_energy_j,skipped,reason\n");
    for row in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            spec.var.name(),
            row.value,
            row.policy,
            row.seed,
            opt(row.total_cost),
            opt(row.mean_latency_s),
            opt(row.mean_energy_j),
            row.skipped,
            row.reason
        );
    }
    out
}

// ---- pipeline: access control gate, then offloading ----

/// Verdict for one device's offload request.
#[derive(Debug, Clone)]
pub struct DeviceVerdict {
    pub device_id: String,
    pub registered: bool,
    pub granted: bool,
    pub message: String,
}

/// Offloading-phase result for one admitted device.
#[derive(Debug, Clone)]
pub struct DeviceOutcome {
    pub device_id: String,
    pub edge: bool,
    pub latency_s: f64,
    pub energy_j: f64,
    pub weighted_cost: f64,
}

/// Offloading phase over the authorized subset.
#[derive(Debug, Clone)]
pub struct OffloadOutcome {
    pub total_cost: f64,
    pub fallback_count: usize,
    pub per_device: Vec<DeviceOutcome>,
}

/// Pipeline options beyond the scenario config.
#[derive(Debug, Clone)]
pub struct PipelineOptions {
    pub policy: PolicyKind,
    /// Load a trained model instead of training inline.
    pub model_path: Option<std::path::PathBuf>,
    /// Leave this many devices (from the end) unregistered, so their
    /// requests are denied.
    pub unregistered: usize,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        PipelineOptions { policy: PolicyKind::Adrlo, model_path: None, unregistered: 0 }
    }
}

/// Complete record of one joint run.
#[derive(Debug)]
pub struct PipelineRun {
    pub policy: PolicyKind,
    /// One verdict per device, in device order.
    pub verdicts: Vec<DeviceVerdict>,
    /// Indices of devices admitted to the offloading phase.
    pub authorized: Vec<usize>,
    /// None exactly when no device was authorized.
    pub offload: Option<OffloadOutcome>,
    pub chain: Chain,
}

/// Run the joint pipeline: register devices, gate each offload request
/// through the policy table, commit grants and penalties to the ledger,
/// then offload for the authorized subset. The ledger re-verifies before
/// returning.
pub fn run_pipeline(cfg: &Config, seed: u64, opts: &PipelineOptions) -> Result<PipelineRun> {
    let n = cfg.n_devices;
    if opts.unregistered > n {
        return Err(Error::Config {
            line: None,
            message: format!("cannot leave {} of {n} devices unregistered", opts.unregistered),
        });
    }
    let mut admin = Account::from_seed(splitmix64(seed ^ 0x6164_6d69_6e00_0000));
    let mut table = PolicyTable::new(admin.public_key());
    let miners = (0..cfg.n_miners).map(|i| format!("miner-{i}")).collect();
    let mut chain = Chain::new(miners)?;

    let mut devices: Vec<(String, Account)> = (0..n)
        .map(|i| {
            let account = Account::from_seed(splitmix64(seed.wrapping_add(1 + i as u64)));
            (format!("md-{i}"), account)
        })
        .collect();

    // Registration: the admin signs one policy-table mutation per
    // registered device, committed as the first block.
    let registered = n - opts.unregistered;
    let mut pool = Vec::with_capacity(registered);
    for (device_id, account) in devices.iter().take(registered) {
        pool.push(contract_add_md(&mut table, &mut admin, account.public_key(), device_id)?);
    }
    if !pool.is_empty() {
        let outcome = chain.mine_block(pool);
        debug_assert!(outcome.block.is_some() && outcome.rejected.is_empty());
    }

    // Access phase: every device submits a request; grants and penalty
    // notices are committed together.
    let mut verdicts = Vec::with_capacity(n);
    let mut authorized = Vec::new();
    let mut pool = Vec::with_capacity(n);
    for (i, (device_id, account)) in devices.iter_mut().enumerate() {
        let mut content = device_id.clone().into_bytes();
        content.extend_from_slice(&seed.to_le_bytes());
        let tx = build_offload_tx(account, device_id, payload_digest(&content))?;
        let result = verify_request(&tx, &table, &mut admin)?;
        verdicts.push(DeviceVerdict {
            device_id: device_id.clone(),
            registered: i < registered,
            granted: result.granted,
            message: result.message,
        });
        if result.granted {
            authorized.push(i);
            pool.push(tx);
        } else {
            pool.push(result.penalty.expect("denials carry a penalty"));
        }
    }
    if !pool.is_empty() {
        let outcome = chain.mine_block(pool);
        debug_assert!(outcome.block.is_some() && outcome.rejected.is_empty());
    }

    // Offloading phase over the authorized subset only.
    let offload = if authorized.is_empty() {
        None
    } else {
        let mut sub_cfg = cfg.clone();
        sub_cfg.n_devices = authorized.len();
        let agent = if opts.policy.is_learned() {
            Some(match &opts.model_path {
                Some(path) => {
                    let (net, variant) = agent::load_model(path)?;
                    DqnAgent::from_network(net, &sub_cfg.agent, variant, seed)
                }
                None => train_policy_model(
                    &sub_cfg,
                    opts.policy,
                    train_seed(seed, usize::MAX - 1, opts.policy),
                )?,
            })
        } else {
            None
        };
        let mut env = MeccoEnv::with_restriction(&sub_cfg, seed, opts.policy.restriction())?;
        let fallbacks = run_episode(opts.policy, agent.as_ref(), &mut env, seed)?;
        let plan = env.plan();
        let per_device = authorized
            .iter()
            .zip(plan.assignments.iter().zip(env.breakdowns()))
            .map(|(&i, (asg, b))| DeviceOutcome {
                device_id: verdicts[i].device_id.clone(),
                edge: asg.edge,
                latency_s: b.latency_s,
                energy_j: b.energy_j,
                weighted_cost: b.weighted,
            })
            .collect();
        Some(OffloadOutcome {
            total_cost: env.total_cost(),
            fallback_count: fallbacks,
            per_device,
        })
    };

    if !chain.verify() {
        return Err(Error::Domain("ledger failed verification after the pipeline run".into()));
    }
    Ok(PipelineRun { policy: opts.policy, verdicts, authorized, offload, chain })
}

/// Render the pipeline artifact. Devices denied at the gate keep their
/// verdict row but never receive cost columns.
pub fn render_pipeline_csv(run: &PipelineRun, cfg: &Config, seed: u64) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# policy = {}", run.policy);
    let _ = writeln!(out, "# authorized = {} of {}", run.authorized.len(), run.verdicts.len());
    let _ = writeln!(out, "# ledger_height = {}", run.chain.height());
    if let Some(o) = &run.offload {
        let _ = writeln!(out, "# total_cost = {}", o.total_cost);
        let _ = writeln!(out, "# fallbacks = {}", o.fallback_count);
    } else {
        let _ = writeln!(out, "# total_cost =");
    }
    out.push_str(&provenance_header(cfg, &[seed]));
    out.push_str("device_id,registered,granted,message,platform,latency_s,energy_j,weighted_cost\n");
    let outcomes: HashMap<&str, &DeviceOutcome> = run
        .offload
        .iter()
        .flat_map(|o| o.per_device.iter())
        .map(|d| (d.device_id.as_str(), d))
        .collect();
    for v in &run.verdicts {
        match outcomes.get(v.device_id.as_str()) {
            Some(d) => {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{},{}",
                    v.device_id,
                    v.registered,
                    v.granted,
                    v.message,
                    if d.edge { "edge" } else { "cloud" },
                    d.latency_s,
                    d.energy_j,
                    d.weighted_cost
                );
            }
            None => {
                let _ = writeln!(
                    out,
                    "{},{},{},{},,,,",
                    v.device_id, v.registered, v.granted, v.message
                );
            }
        }
    }
    out
}

/// Render the one-instance oracle artifact: the optimal plan row by row.
pub fn render_oracle_csv(
    cfg: &Config,
    seed: u64,
    solution: &crate::policies::OracleSolution,
    env: &MeccoEnv,
) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# total_cost = {}", solution.total_cost);
    out.push_str(&provenance_header(cfg, &[seed]));
    out.push_str("device,platform,edge_share,bandwidth_share,task_mb,latency_s,energy_j,weighted_cost\n");
    let (levels_f, levels_w) = env.levels();
    for (i, (&action, asg)) in
        solution.actions.iter().zip(solution.plan.assignments.iter()).enumerate()
    {
        let a = crate::env::decode_action(action, levels_f, levels_w);
        let task = env.tasks()[i];
        let b = crate::model::device_cost(
            &task,
            env.device(),
            asg,
            crate::model::cloud_share(env.scenario(), env.n_devices()),
            env.scenario(),
        )
        .expect("oracle plans price cleanly");
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            i,
            if a.edge { "edge" } else { "cloud" },
            a.f_quanta,
            a.w_quanta,
            task.data_bits / crate::model::MEGABYTE_BITS,
            b.latency_s,
            b.energy_j,
            b.weighted
        );
    }
    out
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(path, text)?;
    Ok(())
}

/// Count committed transactions of one kind.
pub fn count_txs(chain: &Chain, kind: TxKind) -> usize {
    chain.transactions().filter(|tx| tx.kind == kind).count()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_training_visits_every_member() {
        let mut small = tiny_base();
        small.n_devices = 1;
        let big = tiny_base(); // two devices
        let members = vec![
            MeccoEnv::from_config(&small, 3).unwrap(),
            MeccoEnv::from_config(&big, 3).unwrap(),
        ];
        let mut env = GridMixEnv::new(members, 11).unwrap();
        let mut lengths = std::collections::BTreeSet::new();
        for _ in 0..20 {
            env.reset();
            let mut steps = 0;
            loop {
                let a = env.feasible().iter().position(|&ok| ok).unwrap();
                steps += 1;
                if env.step(a).done {
                    break;
                }
            }
            lengths.insert(steps);
        }
        // Episodes of both lengths occurred, so both grid points trained.
        assert_eq!(lengths, [1usize, 2].into_iter().collect());
    }

    #[test]
    fn grid_training_rejects_mismatched_action_sets() {
        let a = tiny_base();
        let mut b = tiny_base();
        b.levels_w = 3;
        let members = vec![
            MeccoEnv::from_config(&a, 3).unwrap(),
            MeccoEnv::from_config(&b, 3).unwrap(),
        ];
        assert!(GridMixEnv::new(members, 11).is_err());
    }

    fn tiny_base() -> Config {
        let mut cfg = Config::parse("").unwrap();
        cfg.n_devices = 2;
        cfg.levels_f = 4;
        cfg.levels_w = 4;
        cfg.agent.episodes = 60;
        cfg.agent.batch_size = 16;
        cfg
    }

    #[test]
    fn presets_build_and_validate() {
        let base = Config::parse("").unwrap();
        for name in PRESET_NAMES {
            let spec = preset(name, base.clone(), 7, 3).unwrap();
            assert_eq!(spec.preset, name);
            assert!(spec.grid.windows(2).all(|w| w[0] < w[1]));
            assert!(!spec.policies.is_empty());
            assert_eq!(spec.seeds_per_point, 3);
        }
        assert!(preset("fig11", base, 0, 1).is_err());
    }

    #[test]
    fn preset_fields_pin_their_figures() {
        let base = Config::parse("").unwrap();
        let a = preset("fig8a", base.clone(), 0, 1).unwrap();
        assert_eq!(a.var, SweepVar::NDevices);
        assert_eq!(a.base.task_max_mb, 1.0);
        let b = preset("fig8b", base.clone(), 0, 1).unwrap();
        assert_eq!(b.var, SweepVar::TaskSizeMb);
        assert_eq!(b.base.n_devices, 1);
        let c = preset("fig9a", base.clone(), 0, 1).unwrap();
        assert_eq!(c.var, SweepVar::EdgeCapacityGhz);
        let d = preset("fig9b", base.clone(), 0, 1).unwrap();
        assert_eq!(d.var, SweepVar::BandwidthMhz);
        let e = preset("fig10", base, 0, 1).unwrap();
        assert!(e.policies.contains(&PolicyKind::NoEdgeAlloc));
        assert!(e.policies.contains(&PolicyKind::NoBwAlloc));
    }

    #[test]
    fn spec_validation_rejects_bad_grids_and_seeds() {
        let base = Config::parse("").unwrap();
        let mut spec = SweepSpec {
            preset: String::new(),
            var: SweepVar::BandwidthMhz,
            grid: vec![1.0, 2.0],
            policies: vec![PolicyKind::Co],
            seeds_per_point: 1,
            shared_model: false,
            master_seed: 0,
            base,
        };
        assert!(spec.validate().is_ok());
        spec.grid = vec![];
        assert!(spec.validate().is_err());
        spec.grid = vec![2.0, 2.0];
        assert!(spec.validate().is_err());
        spec.grid = vec![1.0, 2.0];
        spec.seeds_per_point = 0;
        assert!(spec.validate().is_err());
        spec.seeds_per_point = 1;
        spec.policies.clear();
        assert!(spec.validate().is_err());
        spec.policies = vec![PolicyKind::Co];
        spec.var = SweepVar::NDevices;
        spec.grid = vec![1.5, 2.0];
        assert!(spec.validate().is_err());
    }

    #[test]
    fn minimal_sweep_emits_one_data_and_one_aggregate_row() {
        let spec = SweepSpec {
            preset: String::new(),
            var: SweepVar::TaskSizeMb,
            grid: vec![1.0],
            policies: vec![PolicyKind::Co],
            seeds_per_point: 1,
            shared_model: false,
            master_seed: 5,
            base: tiny_base(),
        };
        let outcome = run_sweep(&spec).unwrap();
        assert_eq!(outcome.rows.len(), 2);
        assert!(!outcome.rows[0].is_aggregate());
        assert!(outcome.rows[1].is_aggregate());
        assert_eq!(outcome.rows[0].total_cost, outcome.rows[1].total_cost);
        let data_lines =
            outcome.csv.lines().filter(|l| !l.starts_with('#') && !l.is_empty()).count();
        assert_eq!(data_lines, 3, "header plus two rows");
    }

    #[test]
    fn incompatible_grid_points_are_skipped_with_reasons() {
        let mut base = tiny_base();
        base.levels_w = 4;
        let spec = SweepSpec {
            preset: String::new(),
            var: SweepVar::NDevices,
            grid: vec![2.0, 6.0],
            policies: vec![PolicyKind::Co],
            seeds_per_point: 3,
            shared_model: false,
            master_seed: 0,
            base,
        };
        let outcome = run_sweep(&spec).unwrap();
        let data = outcome.rows.iter().filter(|r| !r.skipped && !r.is_aggregate()).count();
        let skipped = outcome.rows.iter().filter(|r| r.skipped).count();
        // Transparency: per-seed rows account for the whole grid.
        assert_eq!(data + skipped, 2 * 1 * 3);
        assert_eq!(skipped, 3);
        let reason = &outcome.rows.iter().find(|r| r.skipped).unwrap().reason;
        assert!(reason.contains("admit"), "reason was {reason:?}");
        assert!(!reason.contains(','));
    }

    #[test]
    fn sweeps_are_deterministic_and_paired_across_policies() {
        let spec = SweepSpec {
            preset: String::new(),
            var: SweepVar::BandwidthMhz,
            grid: vec![5.0, 15.0],
            policies: vec![PolicyKind::Eo, PolicyKind::Co, PolicyKind::Random],
            seeds_per_point: 4,
            shared_model: false,
            master_seed: 11,
            base: tiny_base(),
        };
        let a = run_sweep(&spec).unwrap();
        let b = run_sweep(&spec).unwrap();
        assert_eq!(a.csv, b.csv);
        // Paired seeds: every policy sees the identical seed sequence.
        let seeds_of = |rows: &[SweepRow], policy: PolicyKind| -> Vec<String> {
            rows.iter()
                .filter(|r| r.policy == policy && !r.is_aggregate())
                .map(|r| r.seed.to_string())
                .collect()
        };
        assert_eq!(seeds_of(&a.rows, PolicyKind::Eo), seeds_of(&a.rows, PolicyKind::Co));
    }

    #[test]
    fn config_echo_in_header_reproduces_the_config() {
        let spec = SweepSpec {
            preset: "fig9b".into(),
            var: SweepVar::BandwidthMhz,
            grid: vec![1.0],
            policies: vec![PolicyKind::Co],
            seeds_per_point: 1,
            shared_model: false,
            master_seed: 3,
            base: tiny_base(),
        };
        let outcome = run_sweep(&spec).unwrap();
        let echoed: String = outcome
            .csv
            .lines()
            .filter_map(|l| l.strip_prefix("# config: "))
            .map(|l| format!("{l}\n"))
            .collect();
        let reparsed = Config::parse(&echoed).unwrap();
        assert_eq!(reparsed, spec.base);
        assert!(outcome.csv.contains(&format!("# config_hash = {}", config_hash(&spec.base))));
        assert!(outcome.csv.contains("# seed_list = 3\n"));
    }

    #[test]
    fn co_rows_are_flat_across_edge_capacity() {
        let mut base = tiny_base();
        base.n_devices = 2;
        let spec = SweepSpec {
            preset: String::new(),
            var: SweepVar::EdgeCapacityGhz,
            grid: vec![1.0, 3.0, 5.0],
            policies: vec![PolicyKind::Co],
            seeds_per_point: 3,
            shared_model: false,
            master_seed: 2,
            base,
        };
        let outcome = run_sweep(&spec).unwrap();
        let means: Vec<f64> = outcome
            .rows
            .iter()
            .filter(|r| r.is_aggregate())
            .map(|r| r.total_cost.unwrap())
            .collect();
        assert_eq!(means.len(), 3);
        assert_eq!(means[0], means[1]);
        assert_eq!(means[1], means[2]);
    }

    #[test]
    fn eval_seed_lists_are_consecutive_and_train_seeds_distinct() {
        assert_eq!(eval_seeds(10, 3), vec![10, 11, 12]);
        let a = train_seed(0, 0, PolicyKind::Adrlo);
        let b = train_seed(0, 1, PolicyKind::Adrlo);
        let c = train_seed(0, 0, PolicyKind::Drlo);
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_ne!(b, c);
    }

    #[test]
    fn pipeline_with_all_registered_matches_plain_evaluation() {
        let cfg = tiny_base();
        let opts = PipelineOptions { policy: PolicyKind::Eo, ..Default::default() };
        let run = run_pipeline(&cfg, 9, &opts).unwrap();
        assert_eq!(run.authorized, vec![0, 1]);
        assert!(run.verdicts.iter().all(|v| v.granted));
        let direct = crate::policies::evaluate_policy(PolicyKind::Eo, None, &[9], |s| {
            MeccoEnv::from_config(&cfg, s)
        })
        .unwrap();
        let offload = run.offload.unwrap();
        assert_eq!(offload.total_cost, direct.per_seed[0].total_cost);
        assert!(run.chain.verify());
        // Registration block plus access block.
        assert_eq!(run.chain.height(), 2);
    }

    #[test]
    fn pipeline_excludes_exactly_the_unregistered_devices() {
        let mut cfg = tiny_base();
        cfg.n_devices = 4;
        let opts = PipelineOptions {
            policy: PolicyKind::Eo,
            unregistered: 1,
            ..Default::default()
        };
        let run = run_pipeline(&cfg, 21, &opts).unwrap();
        assert_eq!(run.authorized, vec![0, 1, 2]);
        assert_eq!(run.verdicts[3].granted, false);
        assert_eq!(run.verdicts[3].message, "Failed");
        assert_eq!(count_txs(&run.chain, TxKind::PenaltyNotice), 1);
        assert_eq!(count_txs(&run.chain, TxKind::OffloadRequest), 3);
        assert_eq!(count_txs(&run.chain, TxKind::Registration), 3);
        assert!(run.chain.verify());
        let offload = run.offload.unwrap();
        assert_eq!(offload.per_device.len(), 3);
        assert!(offload.per_device.iter().all(|d| d.device_id != "md-3"));
    }

    #[test]
    fn pipeline_with_no_devices_leaves_a_genesis_only_ledger() {
        let mut cfg = tiny_base();
        cfg.n_devices = 0;
        let opts = PipelineOptions { policy: PolicyKind::Co, ..Default::default() };
        let run = run_pipeline(&cfg, 0, &opts).unwrap();
        assert!(run.verdicts.is_empty());
        assert!(run.offload.is_none());
        assert_eq!(run.chain.height(), 0);
        assert!(run.chain.verify());
    }

    #[test]
    fn pipeline_with_all_denied_reports_an_empty_offload_phase() {
        let mut cfg = tiny_base();
        cfg.n_devices = 2;
        let opts = PipelineOptions {
            policy: PolicyKind::Eo,
            unregistered: 2,
            ..Default::default()
        };
        let run = run_pipeline(&cfg, 4, &opts).unwrap();
        assert!(run.authorized.is_empty());
        assert!(run.offload.is_none());
        assert_eq!(count_txs(&run.chain, TxKind::PenaltyNotice), 2);
        assert!(run.chain.verify());
    }

    #[test]
    fn pipeline_csv_never_gives_cost_columns_to_denied_devices() {
        let mut cfg = tiny_base();
        cfg.n_devices = 3;
        let opts = PipelineOptions {
            policy: PolicyKind::Co,
            unregistered: 1,
            ..Default::default()
        };
        let run = run_pipeline(&cfg, 13, &opts).unwrap();
        let csv = render_pipeline_csv(&run, &cfg, 13);
        let denied_row = csv.lines().find(|l| l.starts_with("md-2,")).unwrap();
        assert!(denied_row.ends_with(",Failed,,,,"), "row was {denied_row:?}");
        let granted_row = csv.lines().find(|l| l.starts_with("md-0,")).unwrap();
        assert!(granted_row.contains("Successful!"));
        assert!(granted_row.split(',').all(|field| !field.is_empty()));
    }

    #[test]
    fn pipeline_rejects_impossible_unregistered_counts() {
        let cfg = tiny_base();
        let opts = PipelineOptions {
            policy: PolicyKind::Co,
            unregistered: 5,
            ..Default::default()
        };
        assert!(matches!(run_pipeline(&cfg, 0, &opts), Err(Error::Config { .. })));
    }

    #[test]
    fn shared_model_sweep_trains_once_and_stays_deterministic() {
        let mut base = tiny_base();
        base.agent.episodes = 40;
        let spec = SweepSpec {
            preset: String::new(),
            var: SweepVar::TaskSizeMb,
            grid: vec![0.5, 1.0],
            policies: vec![PolicyKind::Adrlo],
            seeds_per_point: 2,
            shared_model: true,
            master_seed: 6,
            base,
        };
        let a = run_sweep(&spec).unwrap();
        let b = run_sweep(&spec).unwrap();
        assert_eq!(a.csv, b.csv);
        assert_eq!(a.rows.iter().filter(|r| !r.is_aggregate()).count(), 4);
        assert!(a.rows.iter().all(|r| !r.skipped));
    }
}
