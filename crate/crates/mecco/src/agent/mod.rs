//! Deep Q-learning agent for the offloading environment.
//!
//! Two scheme variants share the implementation:
//!
//! * ADRLO: dueling value/advantage heads, and double targets that pick
//!   the bootstrap action with the online network but price it with the
//!   target network.
//! * DRLO: a single output head and plain targets that bootstrap from
//!   the target network's own minimum.
//!
//! Costs are minimized throughout: Q approximates expected discounted
//! cost, action selection is an argmin, and exploration is epsilon-greedy
//! over the feasible set. Training is synchronous and deterministic for a
//! given seed: one gradient step per environment step, a hard target-
//! network copy on a fixed period, and uniform replay sampling.

pub mod net;
pub mod replay;

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::config::AgentConfig;
use crate::env::Environment;
use crate::error::{Error, Result};
pub use net::{argmin_feasible, dueling_aggregate, masked_q, Adam, Arch, QNetwork};
pub use replay::{Experience, ReplayBuffer};

/// Scheme variant: which head shape and which bootstrap rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Variant {
    pub dueling: bool,
    pub double_q: bool,
}

impl Variant {
    pub const ADRLO: Variant = Variant { dueling: true, double_q: true };
    pub const DRLO: Variant = Variant { dueling: false, double_q: false };
}

/// Exploration rate for an episode index: linear from `epsilon_start` to
/// `epsilon_end` over the first `epsilon_decay_fraction` of `episodes`,
/// flat afterwards.
pub fn epsilon_schedule(cfg: &AgentConfig, episode: usize, episodes: usize) -> f64 {
    let horizon = (cfg.epsilon_decay_fraction * episodes as f64).floor();
    if horizon < 1.0 {
        return cfg.epsilon_end;
    }
    let progress = (episode as f64 / horizon).min(1.0);
    // Written so both endpoints are exact in floating point.
    cfg.epsilon_end + (cfg.epsilon_start - cfg.epsilon_end) * (1.0 - progress)
}

/// Double-Q bootstrap: the online network selects the next action, the
/// target network prices it. Terminal samples return the bare cost.
pub fn double_q_target(
    cost: f64,
    gamma: f64,
    done: bool,
    q_online_next: &[f64],
    q_target_next: &[f64],
    next_mask: &[bool],
) -> f64 {
    if done {
        return cost;
    }
    match argmin_feasible(q_online_next, next_mask) {
        Some(a) => cost + gamma * q_target_next[a],
        None => cost,
    }
}

/// Plain bootstrap: the target network both selects and prices.
pub fn min_q_target(
    cost: f64,
    gamma: f64,
    done: bool,
    q_target_next: &[f64],
    next_mask: &[bool],
) -> f64 {
    if done {
        return cost;
    }
    match argmin_feasible(q_target_next, next_mask) {
        Some(a) => cost + gamma * q_target_next[a],
        None => cost,
    }
}

/// Copy the online parameters into the target network exactly when
/// `step` is a positive multiple of `period`.
pub fn sync_target(online: &QNetwork, target: &mut QNetwork, step: u64, period: usize) {
    if period > 0 && step % period as u64 == 0 {
        target.copy_params_from(online);
    }
}

/// Per-episode training trace entry.
#[derive(Debug, Clone)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub epsilon: f64,
    pub episode_cost: f64,
    /// Mean replay loss over the episode's gradient steps; 0 while the
    /// buffer is still filling.
    pub mean_loss: f64,
}

#[derive(Debug, Clone)]
pub struct DqnAgent {
    online: QNetwork,
    target: QNetwork,
    opt: Adam,
    replay: ReplayBuffer,
    cfg: AgentConfig,
    variant: Variant,
    rng: ChaCha20Rng,
    grad_steps: u64,
    grad: Vec<f64>,
}

impl DqnAgent {
    pub fn new(state_dim: usize, n_actions: usize, cfg: &AgentConfig, variant: Variant, seed: u64) -> DqnAgent {
        let arch = Arch { input: state_dim, hidden: 64, actions: n_actions, dueling: variant.dueling };
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let online = QNetwork::new(arch, &mut rng);
        let mut target = QNetwork::zeroed(arch);
        target.copy_params_from(&online);
        let n_params = online.params.len();
        DqnAgent {
            online,
            target,
            opt: Adam::new(n_params, cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_epsilon),
            replay: ReplayBuffer::new(cfg.replay_capacity),
            cfg: cfg.clone(),
            variant,
            rng,
            grad_steps: 0,
            grad: vec![0.0; n_params],
        }
    }

    /// Wrap an externally built network (for example a reloaded model)
    /// for greedy evaluation or continued training.
    pub fn from_network(online: QNetwork, cfg: &AgentConfig, variant: Variant, seed: u64) -> DqnAgent {
        let mut target = QNetwork::zeroed(online.arch);
        target.copy_params_from(&online);
        let n_params = online.params.len();
        DqnAgent {
            online,
            target,
            opt: Adam::new(n_params, cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_epsilon),
            replay: ReplayBuffer::new(cfg.replay_capacity),
            cfg: cfg.clone(),
            variant,
            rng: ChaCha20Rng::seed_from_u64(seed),
            grad_steps: 0,
            grad: vec![0.0; n_params],
        }
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn network(&self) -> &QNetwork {
        &self.online
    }

    pub fn target_network(&self) -> &QNetwork {
        &self.target
    }

    pub fn q_values(&self, state: &[f64], mask: &[bool]) -> Result<Vec<f64>> {
        self.online.q_values(state, mask)
    }

    /// Greedy action: argmin of online Q over the feasible set.
    pub fn select_greedy(&self, state: &[f64], mask: &[bool]) -> Result<usize> {
        let q = self.online.q_values(state, mask)?;
        argmin_feasible(&q, mask)
            .ok_or_else(|| Error::Domain("no feasible action to select".into()))
    }

    /// Epsilon-greedy action over the feasible set.
    pub fn select_action(&mut self, state: &[f64], mask: &[bool], epsilon: f64) -> Result<usize> {
        if self.rng.gen::<f64>() < epsilon {
            let feasible: Vec<usize> =
                mask.iter().enumerate().filter(|(_, &ok)| ok).map(|(i, _)| i).collect();
            if feasible.is_empty() {
                return Err(Error::Domain("no feasible action to select".into()));
            }
            Ok(feasible[self.rng.gen_range(0..feasible.len())])
        } else {
            self.select_greedy(state, mask)
        }
    }

    pub fn remember(&mut self, e: Experience) {
        self.replay.push(e);
    }

    /// One gradient step on a uniform replay batch. Returns the batch
    /// loss, or `None` while the buffer holds fewer than `batch_size`
    /// experiences. Hard-syncs the target network on the configured
    /// period, counted in gradient steps.
    pub fn learn_step(&mut self) -> Result<Option<f64>> {
        if self.replay.len() < self.cfg.batch_size {
            return Ok(None);
        }
        let batch = self.replay.sample(self.cfg.batch_size, &mut self.rng);
        let scale = 1.0 / batch.len() as f64;
        self.grad.iter_mut().for_each(|g| *g = 0.0);
        let mut loss = 0.0;
        for e in &batch {
            let y = if self.variant.double_q {
                let q_online_next = self.online.q_values(&e.next_state, &e.next_mask)?;
                let q_target_next = self.target.q_values(&e.next_state, &e.next_mask)?;
                double_q_target(e.cost, self.cfg.gamma, e.done, &q_online_next, &q_target_next, &e.next_mask)
            } else {
                let q_target_next = self.target.q_values(&e.next_state, &e.next_mask)?;
                min_q_target(e.cost, self.cfg.gamma, e.done, &q_target_next, &e.next_mask)
            };
            let acts = self.online.forward(&e.state, &e.mask)?;
            let residual = acts.q[e.action] - y;
            loss += residual * residual * scale;
            // d(mean squared error)/dQ[a] for this sample.
            let dq = 2.0 * residual * scale;
            self.online.backward(&e.state, &acts, &e.mask, e.action, dq, &mut self.grad);
        }
        if !loss.is_finite() || self.grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Training(format!(
                "non-finite gradient at step {} (loss {loss})",
                self.grad_steps + 1
            )));
        }
        self.opt.step(&mut self.online.params, &self.grad);
        self.grad_steps += 1;
        sync_target(&self.online, &mut self.target, self.grad_steps, self.cfg.target_sync_period);
        if self.grad_steps % self.cfg.target_sync_period.max(1) as u64 == 0
            && self.online.params.iter().any(|p| !p.is_finite())
        {
            return Err(Error::Training(format!(
                "non-finite parameters after step {}",
                self.grad_steps
            )));
        }
        Ok(Some(loss))
    }

    pub fn grad_steps(&self) -> u64 {
        self.grad_steps
    }
}

/// Run the full training loop: for each episode, act epsilon-greedily,
/// store experiences, and take one gradient step per environment step.
/// Returns the per-episode trace. Deterministic given the agent and
/// environment seeds.
pub fn train<E: Environment>(agent: &mut DqnAgent, env: &mut E) -> Result<Vec<EpisodeRecord>> {
    let episodes = agent.cfg.episodes;
    let mut trace = Vec::with_capacity(episodes);
    for episode in 0..episodes {
        let epsilon = epsilon_schedule(&agent.cfg, episode, episodes);
        let mut state = env.reset();
        let mut mask = env.feasible();
        let mut episode_cost = 0.0;
        let mut loss_sum = 0.0;
        let mut loss_count = 0usize;
        loop {
            let action = agent.select_action(&state, &mask, epsilon)?;
            let out = env.step(action);
            let next_mask = env.feasible();
            episode_cost += out.cost;
            agent.remember(Experience {
                state,
                action,
                cost: out.cost,
                next_state: out.state.clone(),
                done: out.done,
                mask,
                next_mask: next_mask.clone(),
            });
            if let Some(loss) = agent.learn_step()? {
                loss_sum += loss;
                loss_count += 1;
            }
            if out.done {
                break;
            }
            state = out.state;
            mask = next_mask;
        }
        trace.push(EpisodeRecord {
            episode,
            epsilon,
            episode_cost,
            mean_loss: if loss_count > 0 { loss_sum / loss_count as f64 } else { 0.0 },
        });
    }
    Ok(trace)
}

/// Write the training trace as CSV.
pub fn write_trace(trace: &[EpisodeRecord], path: &Path) -> Result<()> {
    let mut s = String::from("episode,epsilon,episode_cost,mean_loss\n");
    for r in trace {
        s.push_str(&format!("{},{},{},{}\n", r.episode, r.epsilon, r.episode_cost, r.mean_loss));
    }
    std::fs::write(path, s)?;
    Ok(())
}

/// Persist the online network plus its scheme variant.
pub fn save_model(agent: &DqnAgent, path: &Path) -> Result<()> {
    let mut s = String::from("mecco-model v1\n");
    s.push_str(&format!("double_q {}\n", u8::from(agent.variant.double_q)));
    s.push_str(&agent.online.to_text());
    std::fs::write(path, s)?;
    Ok(())
}

/// Load a model saved by [`save_model`]. Line numbers in decode errors
/// refer to the network section for network-level problems.
pub fn load_model(path: &Path) -> Result<(QNetwork, Variant)> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.splitn(3, '\n');
    let header = lines.next().unwrap_or("");
    if header != "mecco-model v1" {
        return Err(Error::Decode { offset: 1, message: format!("bad model header {header:?}") });
    }
    let flag = lines.next().unwrap_or("");
    let double_q = match flag {
        "double_q 1" => true,
        "double_q 0" => false,
        other => {
            return Err(Error::Decode { offset: 2, message: format!("bad variant line {other:?}") })
        }
    };
    let rest = lines.next().unwrap_or("");
    let net = QNetwork::from_text(rest)?;
    let variant = Variant { dueling: net.arch.dueling, double_q };
    Ok((net, variant))
}
