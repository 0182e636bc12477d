//! Q-network numerics: a small fully-connected network in plain `f64`,
//! with analytic backpropagation and an Adam optimizer.
//!
//! The network is a two-layer rectified-linear trunk feeding either a
//! dueling pair of heads (state value plus per-action advantages) or a
//! single per-action head. All parameters live in one flat vector so the
//! optimizer, target copies, and serialization stay trivial.

use rand::Rng;
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};

/// Network shape. `dueling` switches between the value/advantage pair and
/// a single output head.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Arch {
    pub input: usize,
    pub hidden: usize,
    pub actions: usize,
    pub dueling: bool,
}

/// Half-open ranges of each named array inside the flat parameter vector.
/// Weight matrices are row-major `out x in`.
#[derive(Debug, Clone)]
struct Layout {
    l1_w: std::ops::Range<usize>,
    l1_b: std::ops::Range<usize>,
    l2_w: std::ops::Range<usize>,
    l2_b: std::ops::Range<usize>,
    v_w: std::ops::Range<usize>,
    v_b: std::ops::Range<usize>,
    a_w: std::ops::Range<usize>,
    a_b: std::ops::Range<usize>,
    total: usize,
}

impl Arch {
    fn layout(&self) -> Layout {
        let mut at = 0;
        let mut take = |len: usize| {
            let r = at..at + len;
            at += len;
            r
        };
        let l1_w = take(self.hidden * self.input);
        let l1_b = take(self.hidden);
        let l2_w = take(self.hidden * self.hidden);
        let l2_b = take(self.hidden);
        let (v_w, v_b) = if self.dueling {
            (take(self.hidden), take(1))
        } else {
            (0..0, 0..0)
        };
        let a_w = take(self.actions * self.hidden);
        let a_b = take(self.actions);
        Layout { l1_w, l1_b, l2_w, l2_b, v_w, v_b, a_w, a_b, total: at }
    }

    pub fn param_count(&self) -> usize {
        self.layout().total
    }
}

/// Intermediate activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Activations {
    z1: Vec<f64>,
    h1: Vec<f64>,
    z2: Vec<f64>,
    h2: Vec<f64>,
    /// Final per-action Q values after dueling aggregation (or the raw
    /// head outputs for a single-head network).
    pub q: Vec<f64>,
}

/// Combine a state value with mean-subtracted advantages:
/// `Q_a = value + advantage_a - mean(advantage over feasible actions)`.
/// Subtracting the feasible mean pins the otherwise unidentifiable split
/// between the two heads; adding any constant to all advantages leaves
/// every Q value unchanged. With no feasible action the mean runs over
/// all actions so the output stays finite.
pub fn dueling_aggregate(value: f64, advantages: &[f64], mask: &[bool]) -> Vec<f64> {
    let feasible = mask.iter().filter(|&&ok| ok).count();
    let mean = if feasible > 0 {
        advantages
            .iter()
            .zip(mask)
            .filter(|(_, &ok)| ok)
            .map(|(a, _)| a)
            .sum::<f64>()
            / feasible as f64
    } else {
        advantages.iter().sum::<f64>() / advantages.len().max(1) as f64
    };
    advantages.iter().map(|a| value + a - mean).collect()
}

/// Q values with infeasible entries replaced by the +infinity sentinel,
/// so no selection rule can ever pick them.
pub fn masked_q(q: &[f64], mask: &[bool]) -> Vec<f64> {
    q.iter().zip(mask).map(|(&v, &ok)| if ok { v } else { f64::INFINITY }).collect()
}

/// Index of the smallest Q value among feasible actions; ties go to the
/// lowest index. `None` when nothing is feasible.
pub fn argmin_feasible(q: &[f64], mask: &[bool]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, (&v, &ok)) in q.iter().zip(mask).enumerate() {
        if ok && best.is_none_or(|b| v < q[b]) {
            best = Some(i);
        }
    }
    best
}

#[derive(Debug, Clone)]
pub struct QNetwork {
    pub arch: Arch,
    pub params: Vec<f64>,
    layout: Layout,
}

fn mat_vec(w: &[f64], x: &[f64], b: &[f64], out: &mut [f64]) {
    let cols = x.len();
    for (r, o) in out.iter_mut().enumerate() {
        let row = &w[r * cols..(r + 1) * cols];
        let mut acc = b[r];
        for (wv, xv) in row.iter().zip(x) {
            acc += wv * xv;
        }
        *o = acc;
    }
}

impl QNetwork {
    /// Fresh network with each layer drawn from the symmetric uniform
    /// distribution scaled by fan-in: U(-1/sqrt(in), 1/sqrt(in)).
    pub fn new(arch: Arch, rng: &mut ChaCha20Rng) -> QNetwork {
        let layout = arch.layout();
        let mut params = vec![0.0; layout.total];
        let mut init = |w: std::ops::Range<usize>, b: std::ops::Range<usize>, fan_in: usize| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for p in &mut params[w] {
                *p = (rng.gen::<f64>() * 2.0 - 1.0) * bound;
            }
            for p in &mut params[b] {
                *p = (rng.gen::<f64>() * 2.0 - 1.0) * bound;
            }
        };
        init(layout.l1_w.clone(), layout.l1_b.clone(), arch.input);
        init(layout.l2_w.clone(), layout.l2_b.clone(), arch.hidden);
        if arch.dueling {
            init(layout.v_w.clone(), layout.v_b.clone(), arch.hidden);
        }
        init(layout.a_w.clone(), layout.a_b.clone(), arch.hidden);
        QNetwork { arch, params, layout }
    }

    pub fn zeroed(arch: Arch) -> QNetwork {
        let layout = arch.layout();
        QNetwork { arch, params: vec![0.0; layout.total], layout }
    }

    pub fn copy_params_from(&mut self, other: &QNetwork) {
        debug_assert_eq!(self.arch, other.arch);
        self.params.copy_from_slice(&other.params);
    }

    /// Forward pass keeping activations for a later backward pass.
    pub fn forward(&self, x: &[f64], mask: &[bool]) -> Result<Activations> {
        if x.len() != self.arch.input {
            return Err(Error::Domain(format!(
                "expected {} input features, got {}",
                self.arch.input,
                x.len()
            )));
        }
        if mask.len() != self.arch.actions {
            return Err(Error::Domain(format!(
                "expected {} mask entries, got {}",
                self.arch.actions,
                mask.len()
            )));
        }
        let p = &self.params;
        let lo = &self.layout;
        let mut z1 = vec![0.0; self.arch.hidden];
        mat_vec(&p[lo.l1_w.clone()], x, &p[lo.l1_b.clone()], &mut z1);
        let h1: Vec<f64> = z1.iter().map(|&z| z.max(0.0)).collect();
        let mut z2 = vec![0.0; self.arch.hidden];
        mat_vec(&p[lo.l2_w.clone()], &h1, &p[lo.l2_b.clone()], &mut z2);
        let h2: Vec<f64> = z2.iter().map(|&z| z.max(0.0)).collect();

        let mut raw = vec![0.0; self.arch.actions];
        mat_vec(&p[lo.a_w.clone()], &h2, &p[lo.a_b.clone()], &mut raw);
        let q = if self.arch.dueling {
            let mut v = [0.0];
            mat_vec(&p[lo.v_w.clone()], &h2, &p[lo.v_b.clone()], &mut v);
            dueling_aggregate(v[0], &raw, mask)
        } else {
            raw
        };
        Ok(Activations { z1, h1, z2, h2, q })
    }

    /// Per-action Q values only.
    pub fn q_values(&self, x: &[f64], mask: &[bool]) -> Result<Vec<f64>> {
        Ok(self.forward(x, mask)?.q)
    }

    /// Accumulate into `grad` the gradient of `dq * Q(x)[action]` with
    /// respect to every parameter. `mask` must be the mask used in the
    /// forward pass, since it shapes the dueling aggregation.
    pub fn backward(
        &self,
        x: &[f64],
        acts: &Activations,
        mask: &[bool],
        action: usize,
        dq: f64,
        grad: &mut [f64],
    ) {
        debug_assert_eq!(grad.len(), self.params.len());
        let p = &self.params;
        let lo = &self.layout;
        let hidden = self.arch.hidden;
        let mut d_h2 = vec![0.0; hidden];

        // Head gradients. For the dueling head, Q_a = V + A_a - mean_F(A)
        // gives dQ_a/dV = 1 and dQ_a/dA_j = delta(j,a) - [j in F]/|F|.
        if self.arch.dueling {
            let dv = dq;
            for k in 0..hidden {
                grad[lo.v_w.start + k] += dv * acts.h2[k];
                d_h2[k] += dv * p[lo.v_w.start + k];
            }
            grad[lo.v_b.start] += dv;

            let feasible = mask.iter().filter(|&&ok| ok).count();
            let (mean_set, denom): (&dyn Fn(usize) -> bool, f64) = if feasible > 0 {
                (&|j: usize| mask[j], feasible as f64)
            } else {
                (&|_| true, self.arch.actions.max(1) as f64)
            };
            for j in 0..self.arch.actions {
                let mut da = 0.0;
                if j == action {
                    da += dq;
                }
                if mean_set(j) {
                    da -= dq / denom;
                }
                if da == 0.0 {
                    continue;
                }
                for k in 0..hidden {
                    grad[lo.a_w.start + j * hidden + k] += da * acts.h2[k];
                    d_h2[k] += da * p[lo.a_w.start + j * hidden + k];
                }
                grad[lo.a_b.start + j] += da;
            }
        } else {
            let da = dq;
            for k in 0..hidden {
                grad[lo.a_w.start + action * hidden + k] += da * acts.h2[k];
                d_h2[k] += da * p[lo.a_w.start + action * hidden + k];
            }
            grad[lo.a_b.start + action] += da;
        }

        // Trunk layer 2.
        let mut d_h1 = vec![0.0; hidden];
        for r in 0..hidden {
            if acts.z2[r] <= 0.0 {
                continue;
            }
            let dz = d_h2[r];
            if dz == 0.0 {
                continue;
            }
            for k in 0..hidden {
                grad[lo.l2_w.start + r * hidden + k] += dz * acts.h1[k];
                d_h1[k] += dz * p[lo.l2_w.start + r * hidden + k];
            }
            grad[lo.l2_b.start + r] += dz;
        }

        // Trunk layer 1.
        let input = self.arch.input;
        for r in 0..hidden {
            if acts.z1[r] <= 0.0 {
                continue;
            }
            let dz = d_h1[r];
            if dz == 0.0 {
                continue;
            }
            for k in 0..input {
                grad[lo.l1_w.start + r * input + k] += dz * x[k];
            }
            grad[lo.l1_b.start + r] += dz;
        }
    }

    fn named_arrays(&self) -> Vec<(&'static str, usize, usize, &[f64])> {
        let lo = &self.layout;
        let a = &self.arch;
        let mut out = vec![
            ("trunk1.weight", a.hidden, a.input, &self.params[lo.l1_w.clone()]),
            ("trunk1.bias", 1, a.hidden, &self.params[lo.l1_b.clone()]),
            ("trunk2.weight", a.hidden, a.hidden, &self.params[lo.l2_w.clone()]),
            ("trunk2.bias", 1, a.hidden, &self.params[lo.l2_b.clone()]),
        ];
        if a.dueling {
            out.push(("value.weight", 1, a.hidden, &self.params[lo.v_w.clone()]));
            out.push(("value.bias", 1, 1, &self.params[lo.v_b.clone()]));
        }
        out.push(("advantage.weight", a.actions, a.hidden, &self.params[lo.a_w.clone()]));
        out.push(("advantage.bias", 1, a.actions, &self.params[lo.a_b.clone()]));
        out
    }

    /// Serialize as versioned text: header fields, then each named array
    /// as `layer <name> <rows> <cols>` followed by one line per row.
    /// Values print in shortest round-trip decimal form, so reloading
    /// reproduces every parameter exactly.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str("mecco-qnet v1\n");
        s.push_str(&format!("input {}\n", self.arch.input));
        s.push_str(&format!("hidden {}\n", self.arch.hidden));
        s.push_str(&format!("actions {}\n", self.arch.actions));
        s.push_str(&format!("dueling {}\n", u8::from(self.arch.dueling)));
        for (name, rows, cols, values) in self.named_arrays() {
            s.push_str(&format!("layer {name} {rows} {cols}\n"));
            for r in 0..rows {
                let row: Vec<String> =
                    values[r * cols..(r + 1) * cols].iter().map(|v| format!("{v}")).collect();
                s.push_str(&row.join(" "));
                s.push('\n');
            }
        }
        s.push_str("end\n");
        s
    }

    /// Inverse of [`QNetwork::to_text`]. Decode errors carry the 1-based
    /// line number in the offset field.
    pub fn from_text(text: &str) -> Result<QNetwork> {
        let mut lines = text.lines().enumerate();
        let fail = |line: usize, message: String| Error::Decode { offset: line + 1, message };
        let mut next = |expect: &str| -> Result<(usize, String)> {
            match lines.next() {
                Some((i, l)) => Ok((i, l.to_string())),
                None => Err(Error::Decode {
                    offset: text.lines().count(),
                    message: format!("file ended early, expected {expect}"),
                }),
            }
        };

        let (i, magic) = next("header")?;
        if magic != "mecco-qnet v1" {
            return Err(fail(i, format!("bad header {magic:?}")));
        }
        let mut field = |name: &str| -> Result<usize> {
            let (i, line) = next(name)?;
            let rest = line
                .strip_prefix(name)
                .and_then(|r| r.strip_prefix(' '))
                .ok_or_else(|| fail(i, format!("expected `{name} <value>`")))?;
            rest.trim().parse::<usize>().map_err(|_| fail(i, format!("bad {name} value")))
        };
        let input = field("input")?;
        let hidden = field("hidden")?;
        let actions = field("actions")?;
        let dueling = field("dueling")? != 0;
        let arch = Arch { input, hidden, actions, dueling };
        let mut net = QNetwork::zeroed(arch);

        let expected: Vec<(String, usize, usize, std::ops::Range<usize>)> = net
            .named_arrays()
            .iter()
            .map(|(n, r, c, _)| (n.to_string(), *r, *c, 0..0))
            .collect();
        let lo = net.layout.clone();
        let ranges = [
            lo.l1_w.clone(),
            lo.l1_b.clone(),
            lo.l2_w.clone(),
            lo.l2_b.clone(),
            lo.v_w.clone(),
            lo.v_b.clone(),
            lo.a_w.clone(),
            lo.a_b.clone(),
        ];
        let ranges: Vec<std::ops::Range<usize>> =
            if dueling { ranges.to_vec() } else { vec![ranges[0].clone(), ranges[1].clone(), ranges[2].clone(), ranges[3].clone(), ranges[6].clone(), ranges[7].clone()] };

        for ((name, rows, cols, _), range) in expected.iter().zip(ranges) {
            let (i, line) = next("layer header")?;
            let want = format!("layer {name} {rows} {cols}");
            if line != want {
                return Err(fail(i, format!("expected `{want}`, got `{line}`")));
            }
            for r in 0..*rows {
                let (i, line) = next("row of values")?;
                let mut count = 0;
                for (c, tok) in line.split_whitespace().enumerate() {
                    if c >= *cols {
                        return Err(fail(i, format!("row has more than {cols} values")));
                    }
                    let v: f64 =
                        tok.parse().map_err(|_| fail(i, format!("bad number {tok:?}")))?;
                    net.params[range.start + r * cols + c] = v;
                    count += 1;
                }
                if count != *cols {
                    return Err(fail(i, format!("row has {count} values, expected {cols}")));
                }
            }
        }
        let (i, end) = next("end marker")?;
        if end != "end" {
            return Err(fail(i, "missing end marker".into()));
        }
        Ok(net)
    }
}

/// Adam optimizer over the flat parameter vector, with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(n_params: usize, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Adam {
        Adam { lr, beta1, beta2, eps, t: 0, m: vec![0.0; n_params], v: vec![0.0; n_params] }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        debug_assert_eq!(params.len(), grad.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}
