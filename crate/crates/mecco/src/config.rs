//! Flat `key = value` configuration with defaults, strict validation and a
//! canonical echo that reproduces the effective configuration byte for byte.
//!
//! Values are written in field units (MHz, dBm/Hz, GHz, Mbit/s, MB) and
//! converted to SI once, here, when a view is built. Unknown keys,
//! duplicates and out-of-range values are rejected with the offending line
//! number. Absent keys take the documented defaults, so an empty file (or
//! no file at all) yields the reference scenario.

use std::collections::HashSet;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{CloudShareMode, DeviceProfile, ScenarioConfig, TaskGen, MEGABYTE_BITS};

/// Training hyperparameters for the learned offloading agents.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentConfig {
    pub gamma: f64,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub batch_size: usize,
    pub replay_capacity: usize,
    pub target_sync_period: usize,
    pub episodes: usize,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Fraction of episodes over which epsilon decays linearly from start
    /// to end; it stays at `epsilon_end` afterwards.
    pub epsilon_decay_fraction: f64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            gamma: 0.95,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            batch_size: 64,
            replay_capacity: 10_000,
            // A slow target keeps late-training value estimates stable;
            // with the long default schedule the dueling decomposition
            // then separates near-tied actions instead of oscillating.
            target_sync_period: 200,
            episodes: 10_000,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_fraction: 0.8,
        }
    }
}

/// Full effective configuration in file units.
#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub bandwidth_mhz: f64,
    pub noise_dbm_hz: f64,
    pub edge_capacity_ghz: f64,
    pub cloud_capacity_ghz: f64,
    pub wired_rate_mbps: f64,
    pub beta_t: f64,
    pub beta_e: f64,
    pub cloud_share_mode: CloudShareMode,
    pub n_devices: usize,
    pub tx_power_w: f64,
    pub idle_power_w: f64,
    pub channel_gain: f64,
    pub cycles_per_bit: f64,
    pub cycles_size_exponent: f64,
    pub task_min_mb: f64,
    pub task_max_mb: f64,
    pub enforce_deadline: bool,
    pub seed: u64,
    /// Number of edge-CPU quanta the scheduler can hand out.
    pub levels_f: usize,
    /// Number of bandwidth quanta; also the maximum admissible device count.
    pub levels_w: usize,
    pub agent: AgentConfig,
    pub n_miners: usize,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            bandwidth_mhz: 15.0,
            noise_dbm_hz: -100.0,
            edge_capacity_ghz: 2.0,
            cloud_capacity_ghz: 10.0,
            // Slow enough that shipping a task onward to the cloud is a
            // real tradeoff against edge execution, not a rounding error.
            wired_rate_mbps: 20.0,
            beta_t: 0.5,
            beta_e: 0.5,
            cloud_share_mode: CloudShareMode::EqualSplit,
            n_devices: 10,
            tx_power_w: 0.5,
            idle_power_w: 0.1,
            // Unit received SNR at full default bandwidth: 0.5 W * 3e-6 =
            // N0 * B. Keeps the bandwidth split a real optimization lever
            // instead of a power-limited afterthought.
            channel_gain: 3e-6,
            // Together with the exponent this puts the edge/cloud
            // break-even at a 5 MB task: X/F_e equals D/r_w + X/F_c there.
            cycles_per_bit: 25.0,
            cycles_size_exponent: 1.0,
            task_min_mb: 0.1,
            task_max_mb: 12.0,
            enforce_deadline: false,
            seed: 0,
            levels_f: 12,
            levels_w: 12,
            agent: AgentConfig::default(),
            n_miners: 3,
        }
    }
}

/// Convert a noise density quoted in dBm/Hz to W/Hz.
pub fn dbm_per_hz_to_w_per_hz(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

impl Config {
    /// Parse a config file, filling absent keys with defaults.
    pub fn load(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path)?;
        Config::parse(&text)
    }

    /// Parse config text, filling absent keys with defaults.
    pub fn parse(text: &str) -> Result<Config> {
        let mut cfg = Config::default();
        let mut seen = HashSet::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Config {
                line: Some(line_no),
                message: format!("expected `key = value`, got `{raw}`"),
            })?;
            let key = key.trim();
            let value = value.trim();
            if !seen.insert(key.to_string()) {
                return Err(Error::Config {
                    line: Some(line_no),
                    message: format!("duplicate key `{key}`"),
                });
            }
            cfg.set(key, value, line_no)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, value: &str, line: usize) -> Result<()> {
        fn num(value: &str, line: usize) -> Result<f64> {
            value.parse::<f64>().map_err(|_| Error::Config {
                line: Some(line),
                message: format!("expected a number, got `{value}`"),
            })
        }
        fn int(value: &str, line: usize) -> Result<usize> {
            value.parse::<usize>().map_err(|_| Error::Config {
                line: Some(line),
                message: format!("expected a nonnegative integer, got `{value}`"),
            })
        }
        fn flag(value: &str, line: usize) -> Result<bool> {
            match value {
                "true" => Ok(true),
                "false" => Ok(false),
                _ => Err(Error::Config {
                    line: Some(line),
                    message: format!("expected true or false, got `{value}`"),
                }),
            }
        }

        match key {
            "bandwidth_mhz" => self.bandwidth_mhz = num(value, line)?,
            "noise_dbm_hz" => self.noise_dbm_hz = num(value, line)?,
            "edge_capacity_ghz" => self.edge_capacity_ghz = num(value, line)?,
            "cloud_capacity_ghz" => self.cloud_capacity_ghz = num(value, line)?,
            "wired_rate_mbps" => self.wired_rate_mbps = num(value, line)?,
            "beta_t" => self.beta_t = num(value, line)?,
            "beta_e" => self.beta_e = num(value, line)?,
            "cloud_share_mode" => {
                self.cloud_share_mode = match value {
                    "full" => CloudShareMode::Full,
                    "equal-split" => CloudShareMode::EqualSplit,
                    _ => {
                        return Err(Error::Config {
                            line: Some(line),
                            message: format!(
                                "cloud_share_mode must be `full` or `equal-split`, got `{value}`"
                            ),
                        })
                    }
                }
            }
            "n_devices" => self.n_devices = int(value, line)?,
            "tx_power_w" => self.tx_power_w = num(value, line)?,
            "idle_power_w" => self.idle_power_w = num(value, line)?,
            "channel_gain" => self.channel_gain = num(value, line)?,
            "cycles_per_bit" => self.cycles_per_bit = num(value, line)?,
            "cycles_size_exponent" => self.cycles_size_exponent = num(value, line)?,
            "task_min_mb" => self.task_min_mb = num(value, line)?,
            "task_max_mb" => self.task_max_mb = num(value, line)?,
            "enforce_deadline" => self.enforce_deadline = flag(value, line)?,
            "seed" => {
                self.seed = value.parse::<u64>().map_err(|_| Error::Config {
                    line: Some(line),
                    message: format!("expected an unsigned integer, got `{value}`"),
                })?
            }
            "levels_f" => self.levels_f = int(value, line)?,
            "levels_w" => self.levels_w = int(value, line)?,
            "gamma" => self.agent.gamma = num(value, line)?,
            "learning_rate" => self.agent.learning_rate = num(value, line)?,
            "adam_beta1" => self.agent.adam_beta1 = num(value, line)?,
            "adam_beta2" => self.agent.adam_beta2 = num(value, line)?,
            "adam_epsilon" => self.agent.adam_epsilon = num(value, line)?,
            "batch_size" => self.agent.batch_size = int(value, line)?,
            "replay_capacity" => self.agent.replay_capacity = int(value, line)?,
            "target_sync_period" => self.agent.target_sync_period = int(value, line)?,
            "episodes" => self.agent.episodes = int(value, line)?,
            "epsilon_start" => self.agent.epsilon_start = num(value, line)?,
            "epsilon_end" => self.agent.epsilon_end = num(value, line)?,
            "epsilon_decay_fraction" => self.agent.epsilon_decay_fraction = num(value, line)?,
            "n_miners" => self.n_miners = int(value, line)?,
            _ => {
                return Err(Error::Config {
                    line: Some(line),
                    message: format!("unknown key `{key}`"),
                })
            }
        }
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        fn check(ok: bool, message: &str) -> Result<()> {
            if ok {
                Ok(())
            } else {
                Err(Error::Config { line: None, message: message.to_string() })
            }
        }

        check(self.bandwidth_mhz > 0.0, "bandwidth_mhz must be positive")?;
        check(self.edge_capacity_ghz > 0.0, "edge_capacity_ghz must be positive")?;
        check(self.cloud_capacity_ghz > 0.0, "cloud_capacity_ghz must be positive")?;
        check(self.wired_rate_mbps > 0.0, "wired_rate_mbps must be positive")?;
        check(
            (0.0..=1.0).contains(&self.beta_t) && (0.0..=1.0).contains(&self.beta_e),
            "beta_t and beta_e must lie in [0, 1]",
        )?;
        check(self.tx_power_w > 0.0, "tx_power_w must be positive")?;
        check(self.idle_power_w >= 0.0, "idle_power_w must be nonnegative")?;
        check(self.channel_gain > 0.0, "channel_gain must be positive")?;
        check(self.cycles_per_bit > 0.0, "cycles_per_bit must be positive")?;
        check(
            self.cycles_size_exponent >= 0.0,
            "cycles_size_exponent must be nonnegative",
        )?;
        check(self.task_min_mb > 0.0, "task_min_mb must be positive")?;
        check(
            self.task_max_mb >= self.task_min_mb,
            "task_max_mb must be at least task_min_mb",
        )?;
        check(self.levels_f >= 1 && self.levels_w >= 1, "levels must be at least 1")?;
        check(
            self.agent.gamma > 0.0 && self.agent.gamma <= 1.0,
            "gamma must lie in (0, 1]",
        )?;
        check(self.agent.learning_rate > 0.0, "learning_rate must be positive")?;
        check(
            self.agent.adam_beta1 >= 0.0 && self.agent.adam_beta1 < 1.0,
            "adam_beta1 must lie in [0, 1)",
        )?;
        check(
            self.agent.adam_beta2 >= 0.0 && self.agent.adam_beta2 < 1.0,
            "adam_beta2 must lie in [0, 1)",
        )?;
        check(self.agent.adam_epsilon > 0.0, "adam_epsilon must be positive")?;
        check(self.agent.batch_size >= 1, "batch_size must be at least 1")?;
        check(
            self.agent.replay_capacity >= self.agent.batch_size,
            "replay_capacity must be at least batch_size",
        )?;
        check(self.agent.target_sync_period >= 1, "target_sync_period must be at least 1")?;
        check(
            (0.0..=1.0).contains(&self.agent.epsilon_start)
                && (0.0..=1.0).contains(&self.agent.epsilon_end)
                && self.agent.epsilon_end <= self.agent.epsilon_start,
            "epsilon schedule must satisfy 0 <= epsilon_end <= epsilon_start <= 1",
        )?;
        check(
            self.agent.epsilon_decay_fraction > 0.0 && self.agent.epsilon_decay_fraction <= 1.0,
            "epsilon_decay_fraction must lie in (0, 1]",
        )?;
        check(self.n_miners >= 1, "n_miners must be at least 1")?;
        Ok(())
    }

    /// Physical scenario in SI units.
    pub fn scenario(&self) -> ScenarioConfig {
        ScenarioConfig {
            bandwidth_hz: self.bandwidth_mhz * 1e6,
            noise_w_per_hz: dbm_per_hz_to_w_per_hz(self.noise_dbm_hz),
            edge_cycles_per_s: self.edge_capacity_ghz * 1e9,
            cloud_cycles_per_s: self.cloud_capacity_ghz * 1e9,
            wired_rate_bps: self.wired_rate_mbps * 1e6,
            beta_time: self.beta_t,
            beta_energy: self.beta_e,
            cloud_share: self.cloud_share_mode,
            n_devices: self.n_devices,
            enforce_deadline: self.enforce_deadline,
        }
    }

    /// Radio profile shared by every device in the scenario.
    pub fn device(&self) -> DeviceProfile {
        DeviceProfile {
            tx_power_w: self.tx_power_w,
            idle_power_w: self.idle_power_w,
            channel_gain: self.channel_gain,
        }
    }

    /// Task generator in SI units.
    pub fn task_gen(&self) -> TaskGen {
        TaskGen {
            cycles_per_bit: self.cycles_per_bit,
            cycles_size_exponent: self.cycles_size_exponent,
            task_min_bits: self.task_min_mb * MEGABYTE_BITS,
            task_max_bits: self.task_max_mb * MEGABYTE_BITS,
        }
    }

    /// Canonical text form: every key in fixed order, one per line. Parsing
    /// this string reproduces the configuration exactly.
    pub fn canonical_string(&self) -> String {
        let share = match self.cloud_share_mode {
            CloudShareMode::Full => "full",
            CloudShareMode::EqualSplit => "equal-split",
        };
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        };
        put("bandwidth_mhz", format!("{}", self.bandwidth_mhz));
        put("noise_dbm_hz", format!("{}", self.noise_dbm_hz));
        put("edge_capacity_ghz", format!("{}", self.edge_capacity_ghz));
        put("cloud_capacity_ghz", format!("{}", self.cloud_capacity_ghz));
        put("wired_rate_mbps", format!("{}", self.wired_rate_mbps));
        put("beta_t", format!("{}", self.beta_t));
        put("beta_e", format!("{}", self.beta_e));
        put("cloud_share_mode", share.to_string());
        put("n_devices", format!("{}", self.n_devices));
        put("tx_power_w", format!("{}", self.tx_power_w));
        put("idle_power_w", format!("{}", self.idle_power_w));
        put("channel_gain", format!("{}", self.channel_gain));
        put("cycles_per_bit", format!("{}", self.cycles_per_bit));
        put("cycles_size_exponent", format!("{}", self.cycles_size_exponent));
        put("task_min_mb", format!("{}", self.task_min_mb));
        put("task_max_mb", format!("{}", self.task_max_mb));
        put("enforce_deadline", format!("{}", self.enforce_deadline));
        put("seed", format!("{}", self.seed));
        put("levels_f", format!("{}", self.levels_f));
        put("levels_w", format!("{}", self.levels_w));
        put("gamma", format!("{}", self.agent.gamma));
        put("learning_rate", format!("{}", self.agent.learning_rate));
        put("adam_beta1", format!("{}", self.agent.adam_beta1));
        put("adam_beta2", format!("{}", self.agent.adam_beta2));
        put("adam_epsilon", format!("{}", self.agent.adam_epsilon));
        put("batch_size", format!("{}", self.agent.batch_size));
        put("replay_capacity", format!("{}", self.agent.replay_capacity));
        put("target_sync_period", format!("{}", self.agent.target_sync_period));
        put("episodes", format!("{}", self.agent.episodes));
        put("epsilon_start", format!("{}", self.agent.epsilon_start));
        put("epsilon_end", format!("{}", self.agent.epsilon_end));
        put("epsilon_decay_fraction", format!("{}", self.agent.epsilon_decay_fraction));
        put("n_miners", format!("{}", self.n_miners));
        s
    }

    /// Hex SHA-256 of the canonical text form.
    pub fn hash_hex(&self) -> String {
        let digest = Sha256::digest(self.canonical_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
