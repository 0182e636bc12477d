//! Sequential scheduling environment.
//!
//! One episode schedules the devices of a scenario in a fixed order.
//! At each step the agent picks an action for the current device: offload
//! to the cloud with one of `levels_w` bandwidth grants, or to the edge
//! with one of `levels_f` compute grants and one of `levels_w` bandwidth
//! grants. Grants are integer quanta of the shared budgets, so resource
//! conservation is exact. The step cost is the device's weighted
//! latency-energy cost, and the episode total equals the plan objective
//! bit for bit because both sum the same per-device terms in the same
//! order.
//!
//! Action indices enumerate cloud actions first:
//!
//! ```text
//! index 0 .. levels_w                      cloud, w = index + 1 quanta
//! index levels_w .. levels_w * (levels_f + 1)
//!     edge, f = (index - levels_w) / levels_w + 1 quanta
//!           w = (index - levels_w) % levels_w + 1 quanta
//! ```
//!
//! The feasibility mask reserves one bandwidth quantum for every device
//! still waiting, which keeps the mask nonempty at every step: the
//! smallest cloud action always fits. A scenario is admitted only when
//! `n_devices <= levels_w`, since each device needs at least one quantum.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::config::Config;
use crate::error::{Error, Result};
use crate::model::{
    self, AllocationPlan, Assignment, CostBreakdown, DeviceProfile, ScenarioConfig, Task, TaskGen,
    DEFAULT_DEADLINE_S,
};

/// Number of features in the observation vector.
pub const STATE_DIM: usize = 6;

/// Result of applying one action.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    /// Weighted cost incurred by the device just scheduled.
    pub cost: f64,
    /// Observation after the step; terminal observations zero the task
    /// features.
    pub state: Vec<f64>,
    pub done: bool,
}

/// Minimal episodic interface the training loop runs against. Costs are
/// minimized. `feasible` must never be all-false before the episode ends
/// and must be all-false after it ends.
pub trait Environment {
    fn state_dim(&self) -> usize;
    fn n_actions(&self) -> usize;
    fn reset(&mut self) -> Vec<f64>;
    fn feasible(&self) -> Vec<bool>;
    /// Apply a feasible action. Callers must consult `feasible` first;
    /// implementations may panic on an infeasible action.
    fn step(&mut self, action: usize) -> StepOutcome;
}

/// Decoded form of an action index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Action {
    pub edge: bool,
    /// Edge compute quanta; 0 exactly when the action targets the cloud.
    pub f_quanta: usize,
    /// Bandwidth quanta, always at least 1.
    pub w_quanta: usize,
}

/// Size of the action space for the given grant resolutions.
pub fn action_count(levels_f: usize, levels_w: usize) -> usize {
    levels_w + levels_f * levels_w
}

pub fn decode_action(index: usize, levels_f: usize, levels_w: usize) -> Action {
    debug_assert!(index < action_count(levels_f, levels_w));
    if index < levels_w {
        Action { edge: false, f_quanta: 0, w_quanta: index + 1 }
    } else {
        let rel = index - levels_w;
        Action { edge: true, f_quanta: rel / levels_w + 1, w_quanta: rel % levels_w + 1 }
    }
}

pub fn encode_action(action: Action, levels_w: usize) -> usize {
    if action.edge {
        levels_w + (action.f_quanta - 1) * levels_w + (action.w_quanta - 1)
    } else {
        action.w_quanta - 1
    }
}

/// Translate quanta into the concrete allocation the cost model consumes.
/// Every caller that prices an action goes through this function so that
/// simulated costs match plan-level costs exactly.
pub fn quantized_assignment(
    action: Action,
    levels_f: usize,
    levels_w: usize,
    sc: &ScenarioConfig,
) -> Assignment {
    let w = action.w_quanta as f64 / levels_w as f64;
    if action.edge {
        Assignment::edge_at(action.f_quanta as f64 / levels_f as f64 * sc.edge_cycles_per_s, w)
    } else {
        Assignment::cloud_at(w)
    }
}

/// Optional restriction on the action space, used to measure how much
/// each degree of freedom contributes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ActionRestriction {
    #[default]
    None,
    /// Edge offloads must take the fixed equal compute share
    /// `floor(levels_f / n_devices)`; only platform and bandwidth remain
    /// free.
    FixedEdgeShare,
    /// Every action must take the fixed equal bandwidth share
    /// `floor(levels_w / n_devices)`; only platform and edge compute
    /// remain free.
    FixedBandwidthShare,
}

#[derive(Debug, Clone)]
pub struct MeccoEnv {
    sc: ScenarioConfig,
    device: DeviceProfile,
    task_gen: TaskGen,
    levels_f: usize,
    levels_w: usize,
    n_actions: usize,
    n: usize,
    f_c: f64,
    restriction: ActionRestriction,
    fixed_f: usize,
    fixed_w: usize,
    tc_scale: f64,
    x_max: f64,
    rng: ChaCha20Rng,
    tasks: Vec<Task>,
    cursor: usize,
    ec_quanta: usize,
    bw_quanta: usize,
    assignments: Vec<Assignment>,
    breakdowns: Vec<CostBreakdown>,
    total_cost: f64,
}

impl MeccoEnv {
    pub fn from_config(cfg: &Config, seed: u64) -> Result<MeccoEnv> {
        MeccoEnv::with_restriction(cfg, seed, ActionRestriction::None)
    }

    pub fn with_restriction(
        cfg: &Config,
        seed: u64,
        restriction: ActionRestriction,
    ) -> Result<MeccoEnv> {
        let sc = cfg.scenario();
        let device = cfg.device();
        let task_gen = cfg.task_gen();
        let n = sc.n_devices;
        if n == 0 {
            return Err(Error::Domain("n_devices must be at least 1".into()));
        }
        if cfg.levels_f == 0 || cfg.levels_w == 0 {
            return Err(Error::Domain("levels_f and levels_w must be at least 1".into()));
        }
        if n > cfg.levels_w {
            return Err(Error::Admission(format!(
                "cannot admit {n} devices with {} bandwidth quanta; \
                 every device needs at least one",
                cfg.levels_w
            )));
        }
        let fixed_f = cfg.levels_f / n;
        let fixed_w = cfg.levels_w / n;
        if restriction == ActionRestriction::FixedEdgeShare && fixed_f == 0 {
            return Err(Error::Admission(format!(
                "fixed edge share is zero: {} compute quanta across {n} devices",
                cfg.levels_f
            )));
        }
        let f_c = model::cloud_share(&sc, n);

        // Cost normalizer: the all-cloud plan with equal bandwidth and
        // every task at its maximum size. Not a bound, so the cost
        // feature is clamped.
        let max_task = Task {
            data_bits: task_gen.task_max_bits,
            cycles: task_gen.max_cycles(),
            deadline_s: DEFAULT_DEADLINE_S,
        };
        let asg = Assignment::cloud_at(1.0 / n as f64);
        let per_device = model::device_cost(&max_task, &device, &asg, f_c, &sc)?.weighted;
        let tc_scale = (per_device * n as f64).max(f64::MIN_POSITIVE);
        let x_max = task_gen.max_cycles().max(f64::MIN_POSITIVE);

        let mut env = MeccoEnv {
            sc,
            device,
            task_gen,
            levels_f: cfg.levels_f,
            levels_w: cfg.levels_w,
            n_actions: action_count(cfg.levels_f, cfg.levels_w),
            n,
            f_c,
            restriction,
            fixed_f,
            fixed_w,
            tc_scale,
            x_max,
            rng: ChaCha20Rng::seed_from_u64(seed),
            tasks: Vec::new(),
            cursor: 0,
            ec_quanta: cfg.levels_f,
            bw_quanta: cfg.levels_w,
            assignments: Vec::new(),
            breakdowns: Vec::new(),
            total_cost: 0.0,
        };
        env.cursor = env.n; // not yet reset: behaves as finished
        Ok(env)
    }

    /// Start an episode on externally chosen tasks.
    pub fn reset_with_tasks(&mut self, tasks: Vec<Task>) -> Result<Vec<f64>> {
        if tasks.len() != self.n {
            return Err(Error::Domain(format!(
                "expected {} tasks, got {}",
                self.n,
                tasks.len()
            )));
        }
        self.tasks = tasks;
        self.cursor = 0;
        self.ec_quanta = self.levels_f;
        self.bw_quanta = self.levels_w;
        self.assignments.clear();
        self.breakdowns.clear();
        self.total_cost = 0.0;
        Ok(self.state())
    }

    fn state(&self) -> Vec<f64> {
        let (d, x) = if self.cursor < self.n {
            let task = &self.tasks[self.cursor];
            (
                (task.data_bits / self.task_gen.task_max_bits).min(1.0),
                (task.cycles / self.x_max).min(1.0),
            )
        } else {
            (0.0, 0.0)
        };
        vec![
            (self.total_cost / self.tc_scale).min(1.0),
            self.ec_quanta as f64 / self.levels_f as f64,
            self.bw_quanta as f64 / self.levels_w as f64,
            d,
            x,
            (self.n - self.cursor) as f64 / self.n as f64,
        ]
    }

    /// Current observation without advancing; equals what `reset` or the
    /// preceding `step` returned for this cursor.
    pub fn observation(&self) -> Vec<f64> {
        self.state()
    }

    pub fn feasible_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.n_actions];
        if self.cursor >= self.n {
            return mask;
        }
        // Hold back one bandwidth quantum per device still waiting.
        let reserve = self.n - 1 - self.cursor;
        let w_budget = self.bw_quanta.saturating_sub(reserve);
        for (index, slot) in mask.iter_mut().enumerate() {
            let a = decode_action(index, self.levels_f, self.levels_w);
            let mut ok = a.w_quanta <= w_budget;
            if a.edge {
                ok &= a.f_quanta <= self.ec_quanta;
            }
            ok &= match self.restriction {
                ActionRestriction::None => true,
                ActionRestriction::FixedEdgeShare => !a.edge || a.f_quanta == self.fixed_f,
                ActionRestriction::FixedBandwidthShare => a.w_quanta == self.fixed_w,
            };
            *slot = ok;
        }
        mask
    }

    /// Cost the current device would incur under `action`, without
    /// stepping. Does not check feasibility.
    pub fn action_cost(&self, action: usize) -> Result<CostBreakdown> {
        if self.cursor >= self.n {
            return Err(Error::Domain("episode is finished".into()));
        }
        if action >= self.n_actions {
            return Err(Error::Domain(format!("action {action} out of range")));
        }
        let a = decode_action(action, self.levels_f, self.levels_w);
        let asg = quantized_assignment(a, self.levels_f, self.levels_w, &self.sc);
        model::device_cost(&self.tasks[self.cursor], &self.device, &asg, self.f_c, &self.sc)
    }

    /// Apply an action, rejecting infeasible or out-of-range ones without
    /// touching episode state.
    pub fn try_step(&mut self, action: usize) -> Result<StepOutcome> {
        if self.cursor >= self.n {
            return Err(Error::Domain("episode is finished".into()));
        }
        if action >= self.n_actions {
            return Err(Error::Domain(format!("action {action} out of range")));
        }
        if !self.feasible_mask()[action] {
            return Err(Error::Domain(format!(
                "action {action} is infeasible for device {}",
                self.cursor
            )));
        }
        let breakdown = self.action_cost(action)?;
        let task = &self.tasks[self.cursor];
        if self.sc.enforce_deadline && breakdown.latency_s > task.deadline_s {
            return Err(Error::Deadline {
                device: self.cursor,
                latency_s: breakdown.latency_s,
                deadline_s: task.deadline_s,
            });
        }
        let a = decode_action(action, self.levels_f, self.levels_w);
        self.bw_quanta -= a.w_quanta;
        if a.edge {
            self.ec_quanta -= a.f_quanta;
        }
        self.assignments.push(quantized_assignment(a, self.levels_f, self.levels_w, &self.sc));
        self.total_cost += breakdown.weighted;
        self.breakdowns.push(breakdown.clone());
        self.cursor += 1;
        let done = self.cursor == self.n;
        Ok(StepOutcome { cost: breakdown.weighted, state: self.state(), done })
    }

    pub fn finished(&self) -> bool {
        self.cursor >= self.n
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn n_devices(&self) -> usize {
        self.n
    }

    pub fn levels(&self) -> (usize, usize) {
        (self.levels_f, self.levels_w)
    }

    pub fn remaining_quanta(&self) -> (usize, usize) {
        (self.ec_quanta, self.bw_quanta)
    }

    pub fn total_cost(&self) -> f64 {
        self.total_cost
    }

    pub fn tasks(&self) -> &[Task] {
        &self.tasks
    }

    pub fn breakdowns(&self) -> &[CostBreakdown] {
        &self.breakdowns
    }

    pub fn plan(&self) -> AllocationPlan {
        AllocationPlan { assignments: self.assignments.clone() }
    }

    pub fn scenario(&self) -> &ScenarioConfig {
        &self.sc
    }

    pub fn device_profiles(&self) -> Vec<DeviceProfile> {
        vec![self.device; self.n]
    }

    /// The power/radio profile shared by every device in the scenario.
    pub fn device(&self) -> &DeviceProfile {
        &self.device
    }

    pub fn task_gen(&self) -> &TaskGen {
        &self.task_gen
    }
}

impl Environment for MeccoEnv {
    fn state_dim(&self) -> usize {
        STATE_DIM
    }

    fn n_actions(&self) -> usize {
        self.n_actions
    }

    fn reset(&mut self) -> Vec<f64> {
        let tasks: Vec<Task> = (0..self.n).map(|_| self.task_gen.sample(&mut self.rng)).collect();
        self.reset_with_tasks(tasks).expect("generated task count matches device count")
    }

    fn feasible(&self) -> Vec<bool> {
        self.feasible_mask()
    }

    fn step(&mut self, action: usize) -> StepOutcome {
        self.try_step(action).expect("caller must pick a feasible action")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Config;
    use proptest::prelude::*;
    use rand::Rng;

    fn base_config() -> Config {
        Config::parse("").expect("defaults are valid")
    }

    fn random_feasible(mask: &[bool], rng: &mut impl Rng) -> usize {
        let options: Vec<usize> =
            mask.iter().enumerate().filter(|(_, &ok)| ok).map(|(i, _)| i).collect();
        assert!(!options.is_empty(), "mask must not be empty mid-episode");
        options[rng.gen_range(0..options.len())]
    }

    #[test]
    fn action_codec_round_trips_every_index() {
        for levels_f in 1..=6usize {
            for levels_w in 1..=6usize {
                let count = action_count(levels_f, levels_w);
                assert_eq!(count, levels_w * (levels_f + 1));
                for index in 0..count {
                    let a = decode_action(index, levels_f, levels_w);
                    assert!(a.w_quanta >= 1 && a.w_quanta <= levels_w);
                    assert_eq!(a.edge, a.f_quanta > 0);
                    assert!(a.f_quanta <= levels_f);
                    assert_eq!(encode_action(a, levels_w), index);
                }
            }
        }
    }

    #[test]
    fn admission_requires_a_quantum_per_device() {
        let mut cfg = base_config();
        cfg.n_devices = 13;
        cfg.levels_w = 12;
        assert!(matches!(MeccoEnv::from_config(&cfg, 0), Err(Error::Admission(_))));
        cfg.levels_w = 13;
        assert!(MeccoEnv::from_config(&cfg, 0).is_ok());
    }

    #[test]
    fn episode_cost_equals_plan_objective_exactly() {
        let cfg = base_config();
        let mut env = MeccoEnv::from_config(&cfg, 11).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(99);
        for _ in 0..20 {
            env.reset();
            while !env.finished() {
                let action = random_feasible(&env.feasible_mask(), &mut rng);
                env.try_step(action).unwrap();
            }
            let replay = model::system_cost(
                &env.plan(),
                env.tasks(),
                &env.device_profiles(),
                env.scenario(),
            )
            .unwrap();
            assert_eq!(replay.total, env.total_cost(), "step sum must match plan objective");
        }
    }

    #[test]
    fn features_stay_in_unit_range_over_many_episodes() {
        let cfg = base_config();
        let mut env = MeccoEnv::from_config(&cfg, 5).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        for _ in 0..10_000 {
            let mut state = env.reset();
            loop {
                for (i, v) in state.iter().enumerate() {
                    assert!(
                        (0.0..=1.0).contains(v) && v.is_finite(),
                        "feature {i} out of range: {v}"
                    );
                }
                if env.finished() {
                    break;
                }
                let action = random_feasible(&env.feasible_mask(), &mut rng);
                state = env.try_step(action).unwrap().state;
            }
        }
    }

    #[test]
    fn infeasible_actions_are_rejected_without_side_effects() {
        let mut cfg = base_config();
        cfg.n_devices = 12; // equal to levels_w: only minimal grants fit
        let mut env = MeccoEnv::from_config(&cfg, 0).unwrap();
        env.reset();
        let mask = env.feasible_mask();
        // With 12 devices and 12 quanta, any two-quantum grant starves a
        // later device.
        let greedy = encode_action(Action { edge: false, f_quanta: 0, w_quanta: 2 }, cfg.levels_w);
        assert!(!mask[greedy]);
        let before = (env.cursor(), env.remaining_quanta(), env.total_cost());
        assert!(env.try_step(greedy).is_err());
        assert_eq!(before, (env.cursor(), env.remaining_quanta(), env.total_cost()));

        assert!(env.try_step(env.n_actions()).is_err(), "out of range index");
    }

    #[test]
    fn minimal_cloud_action_is_always_feasible() {
        let mut cfg = base_config();
        cfg.n_devices = 12;
        let mut env = MeccoEnv::from_config(&cfg, 3).unwrap();
        env.reset();
        let minimal = encode_action(Action { edge: false, f_quanta: 0, w_quanta: 1 }, cfg.levels_w);
        while !env.finished() {
            assert!(env.feasible_mask()[minimal]);
            env.try_step(minimal).unwrap();
        }
        assert!(env.feasible_mask().iter().all(|&ok| !ok), "terminal mask is empty");
        assert!(env.try_step(minimal).is_err(), "stepping past the end fails");
    }

    #[test]
    fn same_seed_reproduces_tasks_and_reset_advances_them() {
        let cfg = base_config();
        let mut a = MeccoEnv::from_config(&cfg, 42).unwrap();
        let mut b = MeccoEnv::from_config(&cfg, 42).unwrap();
        a.reset();
        b.reset();
        assert_eq!(a.tasks(), b.tasks());
        let first = a.tasks().to_vec();
        a.reset();
        assert_ne!(a.tasks(), &first[..], "episodes draw fresh tasks");
    }

    #[test]
    fn fixed_edge_share_restricts_edge_actions_only() {
        let mut cfg = base_config();
        cfg.n_devices = 4;
        let mut env =
            MeccoEnv::with_restriction(&cfg, 0, ActionRestriction::FixedEdgeShare).unwrap();
        env.reset();
        let share = cfg.levels_f / cfg.n_devices;
        let mask = env.feasible_mask();
        for (index, ok) in mask.iter().enumerate() {
            let a = decode_action(index, cfg.levels_f, cfg.levels_w);
            if a.edge && a.f_quanta != share {
                assert!(!ok, "off-share edge action {index} must be masked");
            }
        }
        // Cloud actions keep their full bandwidth range.
        let wide_cloud =
            encode_action(Action { edge: false, f_quanta: 0, w_quanta: 9 }, cfg.levels_w);
        assert!(mask[wide_cloud]);

        cfg.n_devices = 13;
        cfg.levels_w = 16;
        cfg.levels_f = 12; // floor(12 / 13) = 0: nothing to grant
        assert!(matches!(
            MeccoEnv::with_restriction(&cfg, 0, ActionRestriction::FixedEdgeShare),
            Err(Error::Admission(_))
        ));
    }

    #[test]
    fn fixed_bandwidth_share_applies_to_every_action() {
        let mut cfg = base_config();
        cfg.n_devices = 4;
        let mut env =
            MeccoEnv::with_restriction(&cfg, 0, ActionRestriction::FixedBandwidthShare).unwrap();
        env.reset();
        let share = cfg.levels_w / cfg.n_devices;
        while !env.finished() {
            let mask = env.feasible_mask();
            for (index, ok) in mask.iter().enumerate() {
                if *ok {
                    let a = decode_action(index, cfg.levels_f, cfg.levels_w);
                    assert_eq!(a.w_quanta, share);
                }
            }
            assert!(mask.iter().any(|&ok| ok));
            env.try_step(mask.iter().position(|&ok| ok).unwrap()).unwrap();
        }
    }

    #[test]
    fn deadline_enforcement_rejects_slow_assignments() {
        let mut cfg = base_config();
        cfg.enforce_deadline = true;
        cfg.n_devices = 2;
        let mut env = MeccoEnv::from_config(&cfg, 0).unwrap();
        let tasks: Vec<Task> = (0..2)
            .map(|_| Task {
                data_bits: 8e6,
                cycles: 4e7,
                deadline_s: 1e-6, // unmeetable
            })
            .collect();
        env.reset_with_tasks(tasks).unwrap();
        let minimal = encode_action(Action { edge: false, f_quanta: 0, w_quanta: 1 }, cfg.levels_w);
        assert!(matches!(env.try_step(minimal), Err(Error::Deadline { .. })));
    }

    #[test]
    fn reset_with_tasks_validates_count() {
        let cfg = base_config();
        let mut env = MeccoEnv::from_config(&cfg, 0).unwrap();
        assert!(env.reset_with_tasks(Vec::new()).is_err());
    }

    proptest! {
        /// Over random admissible shapes and random feasible rollouts, the
        /// mask stays nonempty and bandwidth reservation keeps one quantum
        /// per waiting device.
        #[test]
        fn mask_nonempty_and_reservation_holds(
            n in 1usize..=8,
            levels_f in 1usize..=10,
            extra_w in 0usize..=6,
            seed in 0u64..1_000,
        ) {
            let mut cfg = base_config();
            cfg.n_devices = n;
            cfg.levels_f = levels_f;
            cfg.levels_w = n + extra_w;
            let mut env = MeccoEnv::from_config(&cfg, seed).unwrap();
            let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0xabcd);
            env.reset();
            while !env.finished() {
                let mask = env.feasible_mask();
                prop_assert!(mask.iter().any(|&ok| ok));
                let action = random_feasible(&mask, &mut rng);
                env.try_step(action).unwrap();
                let remaining_devices = env.n_devices() - env.cursor();
                let (_, bw) = env.remaining_quanta();
                prop_assert!(bw >= remaining_devices);
            }
        }
    }
}
