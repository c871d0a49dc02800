use rand::seq::index;
use rand::Rng;

/// One stored experience `(s, a, R, s')`.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f32>,
    pub action: usize,
    pub reward: f64,
    /// Successor state and its valid-action mask; `None` for terminal steps.
    pub next: Option<(Vec<f32>, Vec<bool>)>,
}

/// Fixed-capacity ring buffer; once full, each push evicts the oldest entry.
#[derive(Debug, Clone)]
pub struct ReplayMemory {
    capacity: usize,
    buf: Vec<Transition>,
    /// Slot the next push writes to.
    head: usize,
}

impl ReplayMemory {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be ≥ 1");
        ReplayMemory {
            capacity,
            buf: Vec::new(),
            head: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn push(&mut self, t: Transition) {
        if self.buf.len() < self.capacity {
            self.buf.push(t);
        } else {
            self.buf[self.head] = t;
        }
        self.head = (self.head + 1) % self.capacity;
    }

    /// Entries from oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        let split = if self.buf.len() < self.capacity { 0 } else { self.head };
        self.buf[split..].iter().chain(self.buf[..split].iter())
    }

    /// Uniform minibatch without replacement (the whole memory if smaller).
    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Vec<&Transition> {
        let n = batch.min(self.buf.len());
        index::sample(rng, self.buf.len(), n)
            .into_iter()
            .map(|i| &self.buf[i])
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use proptest::prelude::{prop_assert_eq, proptest};

    fn t(i: usize) -> Transition {
        Transition {
            state: vec![i as f32],
            action: 0,
            reward: 0.0,
            next: None,
        }
    }

    #[test]
    fn sample_is_distinct() {
        let mut m = ReplayMemory::new(50);
        (0..50).for_each(|i| m.push(t(i)));
        let b = m.sample(20, &mut seed::rng(0, "replay"));
        let mut ids: Vec<i64> = b.iter().map(|x| x.state[0] as i64).collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), 20);
    }

    proptest! {
        #[test]
        fn eviction_is_oldest_first(cap in 1usize..40, extra in 0usize..100) {
            let mut m = ReplayMemory::new(cap);
            (0..cap + extra).for_each(|i| m.push(t(i)));
            let kept: Vec<usize> = m.iter().map(|x| x.state[0] as usize).collect();
            let expected: Vec<usize> = (extra..cap + extra).collect();
            prop_assert_eq!(kept, expected);
            prop_assert_eq!(m.len(), cap);
        }
    }
}
