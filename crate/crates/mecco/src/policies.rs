//! Offloading policies and the shared evaluation runner.
//!
//! Baselines:
//! * EO: every device goes to the edge, greedily picking the feasible
//!   compute/bandwidth grant that minimizes its own immediate cost. When
//!   edge compute is exhausted it falls back to the cloud and the episode
//!   counts a fallback.
//! * CO: every device goes to the cloud with the greedy bandwidth grant.
//! * EO-equal / CO-equal: same platforms, but grants fixed at the equal
//!   share `floor(levels / n)` instead of the greedy pick.
//! * no-edge-alloc / no-bw-alloc: the learned scheme trained and run with
//!   the matching degree of freedom frozen to its equal share.
//! * RANDOM: uniform over the feasible set.
//! * ORACLE: exhaustive minimization over all feasible quantized plans.
//!
//! Learned schemes (ADRLO, DRLO) evaluate a frozen network greedily.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::agent::DqnAgent;
use crate::env::{
    decode_action, encode_action, Action, ActionRestriction, Environment, MeccoEnv,
};
use crate::error::{Error, Result};
use crate::model::{self, AllocationPlan, DeviceProfile, ScenarioConfig, Task};

/// Search-size guard for the exhaustive oracle.
pub const ORACLE_GUARD: f64 = 1e7;

/// Named decision rules. The names double as the CSV/CLI vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PolicyKind {
    Adrlo,
    Drlo,
    Eo,
    Co,
    EoEqual,
    CoEqual,
    NoEdgeAlloc,
    NoBwAlloc,
    Oracle,
    Random,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 10] = [
        PolicyKind::Adrlo,
        PolicyKind::Drlo,
        PolicyKind::Eo,
        PolicyKind::Co,
        PolicyKind::EoEqual,
        PolicyKind::CoEqual,
        PolicyKind::NoEdgeAlloc,
        PolicyKind::NoBwAlloc,
        PolicyKind::Oracle,
        PolicyKind::Random,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Adrlo => "ADRLO",
            PolicyKind::Drlo => "DRLO",
            PolicyKind::Eo => "EO",
            PolicyKind::Co => "CO",
            PolicyKind::EoEqual => "EO-equal",
            PolicyKind::CoEqual => "CO-equal",
            PolicyKind::NoEdgeAlloc => "no-edge-alloc",
            PolicyKind::NoBwAlloc => "no-bw-alloc",
            PolicyKind::Oracle => "ORACLE",
            PolicyKind::Random => "RANDOM",
        }
    }

    pub fn parse(name: &str) -> Result<PolicyKind> {
        PolicyKind::ALL
            .into_iter()
            .find(|k| k.name() == name)
            .ok_or_else(|| Error::Config {
                line: None,
                message: format!(
                    "unknown policy {name:?}; expected one of {}",
                    PolicyKind::ALL.map(|k| k.name()).join(", ")
                ),
            })
    }

    /// Whether the policy runs a trained network.
    pub fn is_learned(self) -> bool {
        matches!(
            self,
            PolicyKind::Adrlo | PolicyKind::Drlo | PolicyKind::NoEdgeAlloc | PolicyKind::NoBwAlloc
        )
    }

    /// Action-space restriction the policy trains and evaluates under.
    pub fn restriction(self) -> ActionRestriction {
        match self {
            PolicyKind::NoEdgeAlloc => ActionRestriction::FixedEdgeShare,
            PolicyKind::NoBwAlloc => ActionRestriction::FixedBandwidthShare,
            _ => ActionRestriction::None,
        }
    }
}

impl std::fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Pick the feasible action minimizing the device's immediate cost within
/// `candidates`. Ties break to the lowest action index.
fn greedy_over(env: &MeccoEnv, candidates: impl Iterator<Item = usize>) -> Result<Option<usize>> {
    let mask = env.feasible_mask();
    let mut best: Option<(usize, f64)> = None;
    for idx in candidates {
        if !mask[idx] {
            continue;
        }
        let cost = env.action_cost(idx)?.weighted;
        if best.is_none_or(|(_, c)| cost < c) {
            best = Some((idx, cost));
        }
    }
    Ok(best.map(|(idx, _)| idx))
}

fn action_indices(env: &MeccoEnv, edge: bool) -> Vec<usize> {
    let (levels_f, levels_w) = env.levels();
    (0..crate::env::action_count(levels_f, levels_w))
        .filter(|&i| decode_action(i, levels_f, levels_w).edge == edge)
        .collect()
}

/// One scheduling decision. `fallback` flags EO's forced-cloud case.
struct Decision {
    action: usize,
    fallback: bool,
}

fn decide(
    kind: PolicyKind,
    env: &MeccoEnv,
    agent: Option<&DqnAgent>,
    rng: &mut ChaCha20Rng,
) -> Result<Decision> {
    let (levels_f, levels_w) = env.levels();
    let n = env.n_devices();
    match kind {
        PolicyKind::Eo => {
            if let Some(action) = greedy_over(env, action_indices(env, true).into_iter())? {
                Ok(Decision { action, fallback: false })
            } else {
                let action = greedy_over(env, action_indices(env, false).into_iter())?
                    .expect("a cloud action is always feasible");
                Ok(Decision { action, fallback: true })
            }
        }
        PolicyKind::Co => {
            let action = greedy_over(env, action_indices(env, false).into_iter())?
                .expect("a cloud action is always feasible");
            Ok(Decision { action, fallback: false })
        }
        PolicyKind::EoEqual => {
            let f_share = levels_f / n;
            let w_share = levels_w / n;
            if f_share == 0 || w_share == 0 {
                return Err(Error::Admission(format!(
                    "equal split needs at least one quantum per device \
                     ({levels_f} compute and {levels_w} bandwidth quanta for {n} devices)"
                )));
            }
            let edge = encode_action(
                Action { edge: true, f_quanta: f_share, w_quanta: w_share },
                levels_w,
            );
            if env.feasible_mask()[edge] {
                Ok(Decision { action: edge, fallback: false })
            } else {
                let cloud = encode_action(
                    Action { edge: false, f_quanta: 0, w_quanta: w_share },
                    levels_w,
                );
                Ok(Decision { action: cloud, fallback: true })
            }
        }
        PolicyKind::CoEqual => {
            let w_share = levels_w / n;
            if w_share == 0 {
                return Err(Error::Admission(format!(
                    "equal split needs at least one bandwidth quantum per device \
                     ({levels_w} quanta for {n} devices)"
                )));
            }
            let action =
                encode_action(Action { edge: false, f_quanta: 0, w_quanta: w_share }, levels_w);
            Ok(Decision { action, fallback: false })
        }
        PolicyKind::Random => {
            let mask = env.feasible_mask();
            let feasible: Vec<usize> =
                mask.iter().enumerate().filter(|(_, &ok)| ok).map(|(i, _)| i).collect();
            if feasible.is_empty() {
                return Err(Error::Domain("no feasible action".into()));
            }
            Ok(Decision { action: feasible[rng.gen_range(0..feasible.len())], fallback: false })
        }
        PolicyKind::Adrlo | PolicyKind::Drlo | PolicyKind::NoEdgeAlloc | PolicyKind::NoBwAlloc => {
            let agent = agent.ok_or_else(|| Error::Config {
                line: None,
                message: format!("policy {} requires a trained model", kind.name()),
            })?;
            let state = env_state_of(env);
            let mask = env.feasible_mask();
            let action = agent.select_greedy(&state, &mask)?;
            Ok(Decision { action, fallback: false })
        }
        PolicyKind::Oracle => unreachable!("oracle episodes are solved whole, not stepwise"),
    }
}

/// Current observation without stepping; mirrors what `reset`/`step`
/// return for the same cursor.
fn env_state_of(env: &MeccoEnv) -> Vec<f64> {
    env.observation()
}

/// Exhaustive minimizer over all feasible quantized plans.
#[derive(Debug, Clone)]
pub struct OracleSolution {
    pub actions: Vec<usize>,
    pub plan: AllocationPlan,
    pub total_cost: f64,
}

/// Enumerate every feasible joint plan for `tasks` under the environment
/// quantization and return the cheapest; ties break lexicographically by
/// action index sequence (depth-first order guarantees it). Costs are
/// accumulated exactly as the environment does, so optima are comparable
/// with episode totals bit for bit.
pub fn brute_force_oracle(
    sc: &ScenarioConfig,
    device: &DeviceProfile,
    tasks: &[Task],
    levels_f: usize,
    levels_w: usize,
    restriction: ActionRestriction,
) -> Result<OracleSolution> {
    let n = tasks.len();
    if n == 0 {
        return Ok(OracleSolution {
            actions: Vec::new(),
            plan: AllocationPlan { assignments: Vec::new() },
            total_cost: 0.0,
        });
    }
    let k = crate::env::action_count(levels_f, levels_w) as f64;
    if k.powi(n as i32) > ORACLE_GUARD {
        return Err(Error::Domain(format!(
            "oracle search space {k}^{n} exceeds {ORACLE_GUARD:e}; shrink the device count \
             or the level grids"
        )));
    }
    if n > levels_w {
        return Err(Error::Admission(format!(
            "cannot admit {n} devices with {levels_w} bandwidth quanta"
        )));
    }
    let fixed_f = levels_f / n;
    let fixed_w = levels_w / n;
    if restriction == ActionRestriction::FixedEdgeShare && fixed_f == 0 {
        return Err(Error::Admission(format!(
            "fixed edge share is zero: {levels_f} compute quanta across {n} devices"
        )));
    }
    let f_c = model::cloud_share(sc, n);
    let count = crate::env::action_count(levels_f, levels_w);

    struct Search<'a> {
        sc: &'a ScenarioConfig,
        tasks: &'a [Task],
        levels_f: usize,
        levels_w: usize,
        count: usize,
        restriction: ActionRestriction,
        fixed_f: usize,
        fixed_w: usize,
        f_c: f64,
        best_cost: f64,
        best_actions: Vec<usize>,
        current: Vec<usize>,
        dev: DeviceProfile,
    }

    impl Search<'_> {
        fn go(&mut self, cursor: usize, ec: usize, bw: usize, cost: f64) -> Result<()> {
            if cursor == self.tasks.len() {
                if cost < self.best_cost {
                    self.best_cost = cost;
                    self.best_actions = self.current.clone();
                }
                return Ok(());
            }
            // Partial costs only grow, so prune dominated prefixes.
            if cost >= self.best_cost {
                return Ok(());
            }
            let reserve = self.tasks.len() - 1 - cursor;
            let w_budget = bw.saturating_sub(reserve);
            for idx in 0..self.count {
                let a = decode_action(idx, self.levels_f, self.levels_w);
                if a.w_quanta > w_budget || (a.edge && a.f_quanta > ec) {
                    continue;
                }
                let allowed = match self.restriction {
                    ActionRestriction::None => true,
                    ActionRestriction::FixedEdgeShare => !a.edge || a.f_quanta == self.fixed_f,
                    ActionRestriction::FixedBandwidthShare => a.w_quanta == self.fixed_w,
                };
                if !allowed {
                    continue;
                }
                let asg =
                    crate::env::quantized_assignment(a, self.levels_f, self.levels_w, self.sc);
                let step = model::device_cost(
                    &self.tasks[cursor],
                    &self.dev,
                    &asg,
                    self.f_c,
                    self.sc,
                )?
                .weighted;
                self.current.push(idx);
                self.go(
                    cursor + 1,
                    if a.edge { ec - a.f_quanta } else { ec },
                    bw - a.w_quanta,
                    cost + step,
                )?;
                self.current.pop();
            }
            Ok(())
        }
    }

    let mut search = Search {
        sc,
        tasks,
        levels_f,
        levels_w,
        count,
        restriction,
        fixed_f,
        fixed_w,
        f_c,
        best_cost: f64::INFINITY,
        best_actions: Vec::new(),
        current: Vec::with_capacity(n),
        dev: *device,
    };
    search.go(0, levels_f, levels_w, 0.0)?;
    if search.best_actions.len() != n {
        return Err(Error::Admission("no feasible plan exists".into()));
    }
    let assignments = search
        .best_actions
        .iter()
        .map(|&idx| {
            crate::env::quantized_assignment(
                decode_action(idx, levels_f, levels_w),
                levels_f,
                levels_w,
                sc,
            )
        })
        .collect();
    Ok(OracleSolution {
        actions: search.best_actions,
        plan: AllocationPlan { assignments },
        total_cost: search.best_cost,
    })
}

/// Result of evaluating one policy over one seed (one greedy episode).
#[derive(Debug, Clone)]
pub struct SeedResult {
    pub seed: u64,
    pub total_cost: f64,
    pub mean_latency_s: f64,
    pub mean_energy_j: f64,
    /// Fraction of devices scheduled on the edge.
    pub edge_fraction: f64,
    /// Forced-cloud fallbacks (EO variants only).
    pub fallback_count: usize,
}

/// Evaluation over a seed list, plus the aggregate arithmetic means.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub policy: PolicyKind,
    pub per_seed: Vec<SeedResult>,
    pub aggregate_cost: f64,
    pub aggregate_latency_s: f64,
    pub aggregate_energy_j: f64,
    pub aggregate_edge_fraction: f64,
    pub total_fallbacks: usize,
}

/// Play one full episode of `kind` on a freshly built environment,
/// resetting it first. Returns the forced-cloud fallback count; costs,
/// breakdowns, and the plan are read back from the environment.
pub fn run_episode(
    kind: PolicyKind,
    agent: Option<&DqnAgent>,
    env: &mut MeccoEnv,
    seed: u64,
) -> Result<usize> {
    env.reset();
    // Derive the RANDOM policy's stream from the episode seed so results
    // are a pure function of the seed.
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut fallbacks = 0usize;

    if kind == PolicyKind::Oracle {
        let solution = brute_force_oracle(
            env.scenario(),
            env.device(),
            env.tasks(),
            env.levels().0,
            env.levels().1,
            ActionRestriction::None,
        )?;
        // Guard against accounting drift between the oracle's search and
        // the environment's stepping.
        let tasks = env.tasks().to_vec();
        env.reset_with_tasks(tasks)?;
        for &action in &solution.actions {
            env.try_step(action)?;
        }
        debug_assert_eq!(env.total_cost(), solution.total_cost);
    } else {
        while !env.finished() {
            let decision = decide(kind, env, agent, &mut rng)?;
            if decision.fallback {
                fallbacks += 1;
            }
            env.try_step(decision.action)?;
        }
    }
    Ok(fallbacks)
}

/// Per-seed results for a finished episode, read from its environment.
pub fn seed_result(env: &MeccoEnv, seed: u64, fallbacks: usize) -> SeedResult {
    let n = env.n_devices() as f64;
    let breakdowns = env.breakdowns();
    let edge_count = env.plan().assignments.iter().filter(|a| a.edge).count();
    SeedResult {
        seed,
        total_cost: env.total_cost(),
        mean_latency_s: breakdowns.iter().map(|b| b.latency_s).sum::<f64>() / n,
        mean_energy_j: breakdowns.iter().map(|b| b.energy_j).sum::<f64>() / n,
        edge_fraction: edge_count as f64 / n,
        fallback_count: fallbacks,
    }
}

/// Run one greedy episode per seed and aggregate. The environment is
/// rebuilt per seed from `make_env`, so paired comparisons across
/// policies see identical task draws for the same seed.
pub fn evaluate_policy<F>(
    kind: PolicyKind,
    agent: Option<&DqnAgent>,
    seeds: &[u64],
    mut make_env: F,
) -> Result<EvalReport>
where
    F: FnMut(u64) -> Result<MeccoEnv>,
{
    if kind.is_learned() && agent.is_none() {
        return Err(Error::Config {
            line: None,
            message: format!("policy {} requires a trained model", kind.name()),
        });
    }
    let mut per_seed = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let mut env = make_env(seed)?;
        let fallbacks = run_episode(kind, agent, &mut env, seed)?;
        per_seed.push(seed_result(&env, seed, fallbacks));
    }
    let count = per_seed.len().max(1) as f64;
    Ok(EvalReport {
        policy: kind,
        aggregate_cost: per_seed.iter().map(|r| r.total_cost).sum::<f64>() / count,
        aggregate_latency_s: per_seed.iter().map(|r| r.mean_latency_s).sum::<f64>() / count,
        aggregate_energy_j: per_seed.iter().map(|r| r.mean_energy_j).sum::<f64>() / count,
        aggregate_edge_fraction: per_seed.iter().map(|r| r.edge_fraction).sum::<f64>() / count,
        total_fallbacks: per_seed.iter().map(|r| r.fallback_count).sum(),
        per_seed,
    })
}

/// CSV body for an evaluation report: header row, one row per seed, and a
/// closing aggregate row with `mean` in the seed column.
pub fn eval_csv_body(report: &EvalReport) -> String {
    let mut out =
        String::from("policy,seed,total_cost,mean_latency_s,mean_energy_j,edge_fraction,fallback_count\n");
    for r in &report.per_seed {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            report.policy, r.seed, r.total_cost, r.mean_latency_s, r.mean_energy_j,
            r.edge_fraction, r.fallback_count
        ));
    }
    out.push_str(&format!(
        "{},mean,{},{},{},{},{}\n",
        report.policy,
        report.aggregate_cost,
        report.aggregate_latency_s,
        report.aggregate_energy_j,
        report.aggregate_edge_fraction,
        report.total_fallbacks
    ));
    out
}
