//! Fixed-capacity experience store with ring eviction.

use rand::seq::index::sample;
use rand_chacha::ChaCha20Rng;

/// One stored interaction. Besides the usual transition fields it keeps
/// both feasibility masks: the state's mask shapes the dueling
/// aggregation when re-evaluating Q(s, a), and the next state's mask
/// restricts the bootstrap minimization.
#[derive(Debug, Clone)]
pub struct Experience {
    pub state: Vec<f64>,
    pub action: usize,
    pub cost: f64,
    pub next_state: Vec<f64>,
    pub done: bool,
    pub mask: Vec<bool>,
    pub next_mask: Vec<bool>,
}

#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    buf: Vec<Experience>,
    capacity: usize,
    write: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> ReplayBuffer {
        assert!(capacity > 0, "replay capacity must be positive");
        ReplayBuffer { buf: Vec::with_capacity(capacity), capacity, write: 0 }
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    /// Insert, evicting the oldest entry once at capacity.
    pub fn push(&mut self, e: Experience) {
        if self.buf.len() < self.capacity {
            self.buf.push(e);
        } else {
            self.buf[self.write] = e;
        }
        self.write = (self.write + 1) % self.capacity;
    }

    /// Uniform sample of `count` distinct stored experiences.
    pub fn sample(&self, count: usize, rng: &mut ChaCha20Rng) -> Vec<&Experience> {
        debug_assert!(count <= self.buf.len());
        sample(rng, self.buf.len(), count).iter().map(|i| &self.buf[i]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn exp(tag: f64) -> Experience {
        Experience {
            state: vec![tag],
            action: 0,
            cost: tag,
            next_state: vec![tag],
            done: false,
            mask: vec![true],
            next_mask: vec![true],
        }
    }

    #[test]
    fn ring_evicts_oldest_first() {
        let mut rb = ReplayBuffer::new(3);
        for i in 0..5 {
            rb.push(exp(i as f64));
        }
        assert_eq!(rb.len(), 3);
        let mut costs: Vec<f64> = rb.buf.iter().map(|e| e.cost).collect();
        costs.sort_by(f64::total_cmp);
        assert_eq!(costs, vec![2.0, 3.0, 4.0]);
    }

    #[test]
    fn sample_returns_distinct_entries_of_requested_size() {
        let mut rb = ReplayBuffer::new(16);
        for i in 0..16 {
            rb.push(exp(i as f64));
        }
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let batch = rb.sample(8, &mut rng);
        assert_eq!(batch.len(), 8);
        let mut tags: Vec<f64> = batch.iter().map(|e| e.cost).collect();
        tags.sort_by(f64::total_cmp);
        tags.dedup();
        assert_eq!(tags.len(), 8, "sampling is without replacement");
    }

    #[test]
    fn sampling_is_deterministic_per_rng_seed() {
        let mut rb = ReplayBuffer::new(8);
        for i in 0..8 {
            rb.push(exp(i as f64));
        }
        let a: Vec<f64> = rb
            .sample(4, &mut ChaCha20Rng::seed_from_u64(9))
            .iter()
            .map(|e| e.cost)
            .collect();
        let b: Vec<f64> = rb
            .sample(4, &mut ChaCha20Rng::seed_from_u64(9))
            .iter()
            .map(|e| e.cost)
            .collect();
        assert_eq!(a, b);
    }
}
