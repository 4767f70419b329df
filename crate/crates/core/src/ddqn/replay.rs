use rand::Rng;

use super::Experience;
use crate::error::{Error, Result};

/// Binary tree over a fixed number of leaves keeping both the sum and the
/// minimum of every subtree.
#[derive(Debug, Clone)]
pub struct SumTree {
    leaves: usize,
    sum: Vec<f64>,
    min: Vec<f64>,
}

impl SumTree {
    pub fn new(capacity: usize) -> Self {
        let leaves = capacity.max(1).next_power_of_two();
        Self {
            leaves,
            sum: vec![0.0; 2 * leaves],
            min: vec![f64::INFINITY; 2 * leaves],
        }
    }

    pub fn set(&mut self, index: usize, value: f64) {
        let mut node = self.leaves + index;
        self.sum[node] = value;
        self.min[node] = value;
        while node > 1 {
            node /= 2;
            self.sum[node] = self.sum[2 * node] + self.sum[2 * node + 1];
            self.min[node] = self.min[2 * node].min(self.min[2 * node + 1]);
        }
    }

    pub fn get(&self, index: usize) -> f64 {
        self.sum[self.leaves + index]
    }

    pub fn total(&self) -> f64 {
        self.sum[1]
    }

    /// Minimum over the leaves that have been set.
    pub fn min(&self) -> f64 {
        self.min[1]
    }

    /// Leaf whose cumulative range contains `u ∈ [0, total)`.
    pub fn find(&self, mut u: f64) -> usize {
        let mut node = 1;
        while node < self.leaves {
            let left = 2 * node;
            if u < self.sum[left] || self.sum[left + 1] <= 0.0 {
                node = left;
            } else {
                u -= self.sum[left];
                node = left + 1;
            }
        }
        node - self.leaves
    }
}

/// Indices drawn from the memory with their normalized importance weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplaySample {
    pub indices: Vec<usize>,
    pub weights: Vec<f64>,
}

/// Ring buffer of experiences sampled in proportion to `pᵢ^α`.
#[derive(Debug, Clone)]
pub struct PrioritizedReplay {
    capacity: usize,
    alpha: f64,
    priority_eps: f64,
    entries: Vec<Experience>,
    next: usize,
    tree: SumTree,
    max_priority: f64,
}

impl PrioritizedReplay {
    pub fn new(capacity: usize, alpha: f64, priority_eps: f64) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidConfig("replay capacity must be positive".into()));
        }
        Ok(Self {
            capacity,
            alpha,
            priority_eps,
            entries: Vec::new(),
            next: 0,
            tree: SumTree::new(capacity),
            max_priority: 1.0,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn get(&self, index: usize) -> &Experience {
        &self.entries[index]
    }

    /// Raw priority `pᵢ` (before the exponent).
    pub fn priority(&self, index: usize) -> f64 {
        self.tree.get(index).powf(1.0 / self.alpha.max(f64::MIN_POSITIVE))
    }

    /// Sampling probability `pᵢ^α / Σ p^α`.
    pub fn probability(&self, index: usize) -> f64 {
        self.tree.get(index) / self.tree.total()
    }

    /// Stores `exp` with the largest priority seen so far, overwriting the oldest entry when full.
    pub fn insert(&mut self, exp: Experience) -> usize {
        let index = self.next;
        if self.entries.len() < self.capacity {
            self.entries.push(exp);
        } else {
            self.entries[index] = exp;
        }
        self.tree.set(index, self.max_priority.powf(self.alpha));
        self.next = (self.next + 1) % self.capacity;
        index
    }

    /// Sets the raw priority of one entry.
    pub fn set_priority(&mut self, index: usize, priority: f64) {
        assert!(index < self.entries.len(), "replay index {index} out of range");
        let p = priority.max(0.0);
        self.max_priority = self.max_priority.max(p);
        self.tree.set(index, p.powf(self.alpha));
    }

    /// Priorities become `|δᵢ| + ε_p`.
    pub fn update_priorities(&mut self, indices: &[usize], td_errors: &[f64]) {
        for (&i, &td) in indices.iter().zip(td_errors) {
            self.set_priority(i, td.abs() + self.priority_eps);
        }
    }

    pub fn sample_index<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u = rng.gen::<f64>() * self.tree.total();
        self.tree.find(u).min(self.entries.len() - 1)
    }

    /// Draws `batch_size` indices (with replacement) and weights `(N·P(i))^−β / max w`.
    pub fn sample<R: Rng + ?Sized>(&self, batch_size: usize, beta: f64, rng: &mut R) -> Result<ReplaySample> {
        if self.entries.is_empty() {
            return Err(Error::EmptyReplay);
        }
        let n = self.entries.len() as f64;
        let total = self.tree.total();
        let max_w = (n * self.tree.min() / total).powf(-beta);
        let mut indices = Vec::with_capacity(batch_size);
        let mut weights = Vec::with_capacity(batch_size);
        for _ in 0..batch_size {
            let i = self.sample_index(rng);
            indices.push(i);
            weights.push((n * self.tree.get(i) / total).powf(-beta) / max_w);
        }
        Ok(ReplaySample { indices, weights })
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::corpus::EncodedSequence;

    fn exp(i: u32) -> Experience {
        Experience {
            state: EncodedSequence::new(vec![i]),
            action: 0,
            reward: 0.0,
            next_state: EncodedSequence::new(vec![i + 1]),
            terminal: false,
        }
    }

    #[test]
    fn sum_tree_prefix_search() {
        let mut t = SumTree::new(5);
        for (i, v) in [1.0, 0.0, 2.0, 3.0, 4.0].into_iter().enumerate() {
            t.set(i, v);
        }
        assert_eq!(t.total(), 10.0);
        assert_eq!(t.min(), 0.0);
        assert_eq!(t.find(0.5), 0);
        assert_eq!(t.find(1.0), 2);
        assert_eq!(t.find(2.99), 2);
        assert_eq!(t.find(3.0), 3);
        assert_eq!(t.find(9.99), 4);
    }

    #[test]
    fn new_entries_get_max_priority() {
        let mut m = PrioritizedReplay::new(4, 1.0, 1e-6).unwrap();
        m.insert(exp(0));
        m.set_priority(0, 7.0);
        let i = m.insert(exp(1));
        assert_eq!(m.priority(i), 7.0);
        m.update_priorities(&[0], &[-0.5]);
        assert!((m.priority(0) - 0.500001).abs() < 1e-12);
        let j = m.insert(exp(2));
        assert_eq!(m.priority(j), 7.0);
    }

    #[test]
    fn ring_buffer_overwrites_oldest() {
        let mut m = PrioritizedReplay::new(3, 0.6, 1e-6).unwrap();
        for i in 0..5 {
            m.insert(exp(i));
        }
        assert_eq!(m.len(), 3);
        let firsts: Vec<u32> = (0..3).map(|i| m.get(i).state.ids[0]).collect();
        assert_eq!(firsts, vec![3, 4, 2]);
    }

    #[test]
    fn ratio_one_to_three() {
        let mut m = PrioritizedReplay::new(2, 1.0, 1e-6).unwrap();
        m.insert(exp(0));
        m.insert(exp(1));
        m.set_priority(0, 1.0);
        m.set_priority(1, 3.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = m.sample(100_000, 0.4, &mut rng).unwrap();
        let ones = s.indices.iter().filter(|&&i| i == 1).count() as f64;
        let ratio = ones / (100_000.0 - ones);
        assert!((ratio - 3.0).abs() / 3.0 < 0.05, "ratio {ratio}");
    }

    #[test]
    fn alpha_zero_is_uniform_and_beta_one_uniform_weights() {
        let mut m = PrioritizedReplay::new(4, 0.0, 1e-6).unwrap();
        for i in 0..4 {
            m.insert(exp(i));
            m.set_priority(i as usize, 1.0 + 10.0 * i as f64);
        }
        for i in 0..4 {
            assert_eq!(m.probability(i), 0.25);
        }
        let s = m.sample(64, 1.0, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(s.weights.iter().all(|&w| (w - 1.0).abs() < 1e-12));
    }

    #[test]
    fn weights_normalized_by_maximum() {
        let mut m = PrioritizedReplay::new(3, 1.0, 1e-6).unwrap();
        for (i, p) in [1.0, 2.0, 4.0].into_iter().enumerate() {
            m.insert(exp(i as u32));
            m.set_priority(i, p);
        }
        let s = m.sample(2000, 1.0, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        for (&i, &w) in s.indices.iter().zip(&s.weights) {
            let expect = [1.0, 0.5, 0.25][i];
            assert!((w - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_memory_rejected() {
        let m = PrioritizedReplay::new(3, 0.6, 1e-6).unwrap();
        assert!(matches!(m.sample(1, 0.4, &mut ChaCha8Rng::seed_from_u64(0)), Err(Error::EmptyReplay)));
    }
}
