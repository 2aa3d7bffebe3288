//! Uniform experience replay over a fixed-size ring.

use rand::Rng;

/// One stored interaction. `a` is the action the environment actually
/// applied, and the model-error bonus is computed once, on insertion,
/// against the frozen model, so resampling a transition can never rescore
/// it.
#[derive(Debug, Clone)]
pub struct Transition {
    pub s: Vec<f64>,
    pub a: [f64; 2],
    pub r_env: f64,
    pub r_intrinsic: f64,
    pub s_next: Vec<f64>,
    /// True only for genuine terminal states. Episodes cut by the time
    /// limit keep it false so value targets still bootstrap.
    pub done: bool,
}

#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    buf: Vec<Transition>,
    capacity: usize,
    /// Slot the next insertion overwrites once the ring is full.
    head: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "a replay buffer needs room for at least one transition");
        ReplayBuffer { buf: Vec::with_capacity(capacity.min(1 << 16)), capacity, head: 0 }
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn push(&mut self, tr: Transition) {
        if self.buf.len() < self.capacity {
            self.buf.push(tr);
        } else {
            self.buf[self.head] = tr;
            self.head = (self.head + 1) % self.capacity;
        }
    }

    /// Draws `n` distinct transitions uniformly.
    pub fn sample<'a>(&'a self, rng: &mut impl Rng, n: usize) -> Vec<&'a Transition> {
        assert!(n <= self.buf.len(), "cannot sample {n} of {}", self.buf.len());
        rand::seq::index::sample(rng, self.buf.len(), n)
            .iter()
            .map(|i| &self.buf[i])
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::glucosim::derive_rng;

    fn tr(tag: f64) -> Transition {
        Transition {
            s: vec![tag; 2],
            a: [tag, 0.0],
            r_env: tag,
            r_intrinsic: 0.0,
            s_next: vec![tag; 2],
            done: false,
        }
    }

    #[test]
    fn filling_past_capacity_evicts_oldest_first() {
        let mut rb = ReplayBuffer::new(3);
        for i in 0..5 {
            rb.push(tr(i as f64));
        }
        assert_eq!(rb.len(), 3);
        let mut tags: Vec<f64> = rb.buf.iter().map(|t| t.r_env).collect();
        tags.sort_by(f64::total_cmp);
        assert_eq!(tags, vec![2.0, 3.0, 4.0]);
    }

    #[test]
    fn batches_never_repeat_a_transition() {
        let mut rb = ReplayBuffer::new(10);
        for i in 0..10 {
            rb.push(tr(i as f64));
        }
        let mut rng = derive_rng(0, "replay-test");
        let batch = rb.sample(&mut rng, 10);
        let mut tags: Vec<f64> = batch.iter().map(|t| t.r_env).collect();
        tags.sort_by(f64::total_cmp);
        assert_eq!(tags, (0..10).map(|i| i as f64).collect::<Vec<_>>());
    }

    #[test]
    fn sampling_is_reproducible_from_the_seed() {
        let mut rb = ReplayBuffer::new(64);
        for i in 0..64 {
            rb.push(tr(i as f64));
        }
        let draw = |seed| {
            let mut rng = derive_rng(seed, "replay-test");
            let a: Vec<f64> = rb.sample(&mut rng, 8).iter().map(|t| t.r_env).collect();
            let b: Vec<f64> = rb.sample(&mut rng, 8).iter().map(|t| t.r_env).collect();
            (a, b)
        };
        assert_eq!(draw(7), draw(7));
        assert_ne!(draw(7).0, draw(8).0);
    }
}
