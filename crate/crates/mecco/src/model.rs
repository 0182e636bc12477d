//! Cost model for multi-user computation offloading over a shared wireless
//! uplink.
//!
//! Each mobile device `n` holds one task `(D_n, X_n, tau_n)` (input bits,
//! CPU cycles, deadline) and either offloads it to the edge server or
//! forwards it through the edge to a remote cloud. The uplink is a single
//! AWGN channel of bandwidth `B` shared by fractional allocation:
//!
//! ```text
//! r_n = w_n * B * log2(1 + p_n * h_n / (w_n * N0 * B))
//! ```
//!
//! Edge execution at `f_e` cycles/s:
//!
//! ```text
//! T_e = D/r + X/f_e            E_e = p * D/r + p_i * X/f_e
//! ```
//!
//! Cloud execution adds a wired hop at `r_w` bits/s and runs at `f_c`:
//!
//! ```text
//! T_c = D/r + D/r_w + X/f_c    E_c = p * D/r + p_i * (D/r_w + X/f_c)
//! ```
//!
//! A device's cost is the weighted sum `C_n = beta_t * T_n + beta_e * E_n`
//! of whichever branch its decision flags select, and the system objective
//! is `sum_n C_n` subject to:
//!
//! ```text
//! C1  decision flags are binary
//! C2  exactly one of (edge, cloud) per device
//! C3  sum of edge allocations <= F_e
//! C4  edge allocations nonnegative, and zero for cloud devices
//! C5  0 < w_n <= 1
//! C6  sum of w_n <= 1
//! ```
//!
//! All quantities are SI (Hz, W, W/Hz, bits, bits/s, cycles, cycles/s,
//! seconds, joules). Conversion from config units happens at load time.

use crate::error::{Error, Result};

/// Bits in one megabyte (decimal, 10^6 bytes). Task sizes quoted in MB
/// convert through this constant everywhere.
pub const MEGABYTE_BITS: f64 = 8e6;

/// Deadline attached to generated tasks. Generous on purpose: enforcement
/// is opt-in and the default scenarios study cost, not admission control.
pub const DEFAULT_DEADLINE_S: f64 = 3600.0;

/// Relative slack when checking resource sums against their caps. Covers
/// accumulated rounding from quantized allocations (k * F_e / L summed over
/// devices), nothing more.
const CAP_SLACK: f64 = 1e-9;

// ---- types ----

/// How the remote cloud divides its capacity among offloaded tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CloudShareMode {
    /// Every cloud task runs at the full `F_c`.
    Full,
    /// Every cloud task runs at `F_c / N` where `N` is the scenario device
    /// count. The divisor is the device count rather than the cloud task
    /// count so that a device's cost is known the moment it is scheduled;
    /// a divisor depending on later decisions would make per-step costs
    /// unknowable mid-episode.
    EqualSplit,
}

/// Physical scenario: channel, capacities, objective weights, device count.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub bandwidth_hz: f64,
    pub noise_w_per_hz: f64,
    pub edge_cycles_per_s: f64,
    pub cloud_cycles_per_s: f64,
    pub wired_rate_bps: f64,
    pub beta_time: f64,
    pub beta_energy: f64,
    pub cloud_share: CloudShareMode,
    pub n_devices: usize,
    pub enforce_deadline: bool,
}

/// Radio and CPU power profile of a device.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeviceProfile {
    /// Transmit power while uploading, W.
    pub tx_power_w: f64,
    /// Power drawn while waiting on a remote execution, W.
    pub idle_power_w: f64,
    /// Dimensionless channel gain toward the edge base station.
    pub channel_gain: f64,
}

/// One offloadable task.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Task {
    pub data_bits: f64,
    pub cycles: f64,
    pub deadline_s: f64,
}

/// Task generator: draws sizes uniformly and derives cycle demand from
/// size. Cycle demand grows superlinearly when `cycles_size_exponent > 0`:
///
/// ```text
/// X(D) = cycles_per_bit * D * (D / MEGABYTE_BITS)^cycles_size_exponent
/// ```
///
/// so `cycles_per_bit` is the per-bit demand of a 1 MB task exactly, and
/// larger inputs cost proportionally more per bit, as they do for the
/// superlinear workloads (analytics, recognition, joins) that make remote
/// execution interesting. With exponent 0 the demand is plain `c * D`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskGen {
    pub cycles_per_bit: f64,
    pub cycles_size_exponent: f64,
    pub task_min_bits: f64,
    pub task_max_bits: f64,
}

impl TaskGen {
    /// Cycle demand for a task of `data_bits` input bits.
    pub fn cycles_for(&self, data_bits: f64) -> f64 {
        self.cycles_per_bit * data_bits * (data_bits / MEGABYTE_BITS).powf(self.cycles_size_exponent)
    }

    /// Largest cycle demand the generator can emit.
    pub fn max_cycles(&self) -> f64 {
        self.cycles_for(self.task_max_bits)
    }

    /// Draw one task. Sizes are uniform on `[task_min_bits, task_max_bits]`.
    pub fn sample<R: rand::Rng>(&self, rng: &mut R) -> Task {
        let data_bits = if self.task_max_bits > self.task_min_bits {
            rng.gen_range(self.task_min_bits..=self.task_max_bits)
        } else {
            self.task_min_bits
        };
        Task {
            data_bits,
            cycles: self.cycles_for(data_bits),
            deadline_s: DEFAULT_DEADLINE_S,
        }
    }
}

/// One device's slice of an allocation plan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Assignment {
    /// Decision flag alpha_e. Binary by construction, so constraint C1
    /// cannot be violated through this type.
    pub edge: bool,
    /// Decision flag alpha_c.
    pub cloud: bool,
    /// Edge cycles/s granted to this device; must be 0 for cloud devices.
    pub edge_cycles_per_s: f64,
    /// Uplink bandwidth fraction w_n.
    pub bandwidth_frac: f64,
}

impl Assignment {
    pub fn edge_at(f: f64, w: f64) -> Self {
        Assignment { edge: true, cloud: false, edge_cycles_per_s: f, bandwidth_frac: w }
    }

    pub fn cloud_at(w: f64) -> Self {
        Assignment { edge: false, cloud: true, edge_cycles_per_s: 0.0, bandwidth_frac: w }
    }
}

/// Joint offloading decision and resource split for every device.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AllocationPlan {
    pub assignments: Vec<Assignment>,
}

impl AllocationPlan {
    pub fn len(&self) -> usize {
        self.assignments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignments.is_empty()
    }
}

/// Latency and energy of one device under one assignment, plus the
/// weighted objective contribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostBreakdown {
    pub latency_s: f64,
    pub energy_j: f64,
    pub weighted: f64,
}

/// Objective value of a full plan with per-device detail.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemCost {
    pub total: f64,
    pub per_device: Vec<CostBreakdown>,
}

/// Identifier of a violated optimization constraint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Constraint {
    C1,
    C2,
    C3,
    C4,
    C5,
    C6,
}

impl std::fmt::Display for Constraint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Constraint::C1 => "C1 (binary decision flags)",
            Constraint::C2 => "C2 (exactly one platform per device)",
            Constraint::C3 => "C3 (edge capacity)",
            Constraint::C4 => "C4 (edge allocation validity)",
            Constraint::C5 => "C5 (per-device bandwidth share)",
            Constraint::C6 => "C6 (total bandwidth)",
        };
        f.write_str(name)
    }
}

// ---- operations ----

/// Achievable uplink rate in bits/s for a device granted bandwidth
/// fraction `w`.
pub fn transmission_rate(w: f64, dev: &DeviceProfile, sc: &ScenarioConfig) -> Result<f64> {
    if !(w > 0.0 && w <= 1.0) {
        return Err(Error::Domain(format!(
            "bandwidth fraction must satisfy 0 < w <= 1, got {w}"
        )));
    }
    if sc.bandwidth_hz <= 0.0 || sc.noise_w_per_hz <= 0.0 {
        return Err(Error::Domain(
            "bandwidth and noise density must be positive".into(),
        ));
    }
    let snr = dev.tx_power_w * dev.channel_gain / (w * sc.noise_w_per_hz * sc.bandwidth_hz);
    Ok(w * sc.bandwidth_hz * (1.0 + snr).log2())
}

/// Latency, energy and weighted cost of executing a task on the edge
/// server at `f_e` cycles/s with bandwidth fraction `w`.
pub fn edge_cost(
    task: &Task,
    dev: &DeviceProfile,
    f_e: f64,
    w: f64,
    sc: &ScenarioConfig,
) -> Result<CostBreakdown> {
    if f_e <= 0.0 {
        return Err(Error::Domain(format!(
            "edge allocation must be positive, got {f_e}"
        )));
    }
    let r = transmission_rate(w, dev, sc)?;
    let upload_s = task.data_bits / r;
    let exec_s = task.cycles / f_e;
    let latency_s = upload_s + exec_s;
    let energy_j = dev.tx_power_w * upload_s + dev.idle_power_w * exec_s;
    Ok(weighted(latency_s, energy_j, sc))
}

/// Latency, energy and weighted cost of forwarding a task through the edge
/// to the cloud, which executes it at `f_c` cycles/s.
pub fn cloud_cost(
    task: &Task,
    dev: &DeviceProfile,
    w: f64,
    f_c: f64,
    sc: &ScenarioConfig,
) -> Result<CostBreakdown> {
    if f_c <= 0.0 {
        return Err(Error::Domain(format!(
            "cloud allocation must be positive, got {f_c}"
        )));
    }
    if sc.wired_rate_bps <= 0.0 {
        return Err(Error::Domain(format!(
            "wired rate must be positive, got {}",
            sc.wired_rate_bps
        )));
    }
    let r = transmission_rate(w, dev, sc)?;
    let upload_s = task.data_bits / r;
    let remote_s = task.data_bits / sc.wired_rate_bps + task.cycles / f_c;
    let latency_s = upload_s + remote_s;
    let energy_j = dev.tx_power_w * upload_s + dev.idle_power_w * remote_s;
    Ok(weighted(latency_s, energy_j, sc))
}

/// Cost of one device under its assignment. `f_c` is the cloud share the
/// device would receive if it offloads there; see [`cloud_share`].
pub fn device_cost(
    task: &Task,
    dev: &DeviceProfile,
    asg: &Assignment,
    f_c: f64,
    sc: &ScenarioConfig,
) -> Result<CostBreakdown> {
    match (asg.edge, asg.cloud) {
        (true, false) => edge_cost(task, dev, asg.edge_cycles_per_s, asg.bandwidth_frac, sc),
        (false, true) => cloud_cost(task, dev, asg.bandwidth_frac, f_c, sc),
        _ => Err(Error::Constraint(Constraint::C2)),
    }
}

/// Cloud cycles/s granted to each cloud-offloaded task in a plan covering
/// `n_devices` devices.
pub fn cloud_share(sc: &ScenarioConfig, n_devices: usize) -> f64 {
    match sc.cloud_share {
        CloudShareMode::Full => sc.cloud_cycles_per_s,
        CloudShareMode::EqualSplit => sc.cloud_cycles_per_s / (n_devices.max(1) as f64),
    }
}

/// Objective value of a full plan. Validates the plan first and, when the
/// scenario enforces deadlines, rejects any device whose latency exceeds
/// its task deadline.
pub fn system_cost(
    plan: &AllocationPlan,
    tasks: &[Task],
    devs: &[DeviceProfile],
    sc: &ScenarioConfig,
) -> Result<SystemCost> {
    if plan.len() != tasks.len() || plan.len() != devs.len() {
        return Err(Error::Domain(format!(
            "plan covers {} devices but {} tasks and {} profiles were given",
            plan.len(),
            tasks.len(),
            devs.len()
        )));
    }
    if let Some(c) = validate_plan(plan, sc) {
        return Err(Error::Constraint(c));
    }
    let f_c = cloud_share(sc, plan.len());
    let mut per_device = Vec::with_capacity(plan.len());
    let mut total = 0.0;
    for (n, asg) in plan.assignments.iter().enumerate() {
        let cost = device_cost(&tasks[n], &devs[n], asg, f_c, sc)?;
        if sc.enforce_deadline && cost.latency_s > tasks[n].deadline_s {
            return Err(Error::Deadline {
                device: n,
                latency_s: cost.latency_s,
                deadline_s: tasks[n].deadline_s,
            });
        }
        total += cost.weighted;
        per_device.push(cost);
    }
    Ok(SystemCost { total, per_device })
}

/// Check a plan against the optimization constraints. Returns the first
/// violated constraint in the fixed order C1..C6, or `None` for a valid
/// plan. C1 cannot fire here because [`Assignment`] stores the decision
/// flags as booleans.
pub fn validate_plan(plan: &AllocationPlan, sc: &ScenarioConfig) -> Option<Constraint> {
    // C2: exactly one platform per device.
    for asg in &plan.assignments {
        if asg.edge == asg.cloud {
            return Some(Constraint::C2);
        }
    }
    // C3: edge capacity.
    let edge_sum: f64 = plan.assignments.iter().map(|a| a.edge_cycles_per_s).sum();
    if edge_sum > sc.edge_cycles_per_s * (1.0 + CAP_SLACK) {
        return Some(Constraint::C3);
    }
    // C4: edge allocations nonnegative, zero when the device went to the
    // cloud, positive when it stayed on the edge.
    for asg in &plan.assignments {
        let valid = if asg.edge {
            asg.edge_cycles_per_s > 0.0
        } else {
            asg.edge_cycles_per_s == 0.0
        };
        if !valid {
            return Some(Constraint::C4);
        }
    }
    // C5: per-device bandwidth share in (0, 1].
    for asg in &plan.assignments {
        if !(asg.bandwidth_frac > 0.0 && asg.bandwidth_frac <= 1.0) {
            return Some(Constraint::C5);
        }
    }
    // C6: total bandwidth.
    let w_sum: f64 = plan.assignments.iter().map(|a| a.bandwidth_frac).sum();
    if w_sum > 1.0 + CAP_SLACK {
        return Some(Constraint::C6);
    }
    None
}

fn weighted(latency_s: f64, energy_j: f64, sc: &ScenarioConfig) -> CostBreakdown {
    CostBreakdown {
        latency_s,
        energy_j,
        weighted: sc.beta_time * latency_s + sc.beta_energy * energy_j,
    }
}
