//! Batch samplers: the class-balanced round-robin sampler and the plain
//! shuffled baseline it is compared against.

use super::{DataError, Dataset};
use crate::rng::Rng;

/// Class-balanced sampler. Classes are visited in a fixed round-robin
/// rotation that continues across batch boundaries; each visit draws the
/// next bag from that class's shuffled queue, reshuffling a queue whenever
/// it is exhausted. Over any window of K*B batches every class is selected
/// the same number of times up to the batch size (strict rotation makes the
/// spread at most one).
///
/// A multi-label bag sits in the queue of every class it is positive for
/// and can be drawn through any of them.
#[derive(Debug, Clone)]
pub struct SamplerState {
    queues: Vec<Vec<usize>>,
    cursors: Vec<usize>,
    rotation: usize,
    rng: Rng,
}

impl SamplerState {
    pub fn new(ds: &Dataset, mut rng: Rng) -> Result<Self, DataError> {
        let mut queues = ds.class_index_lists();
        let empty: Vec<usize> =
            queues.iter().enumerate().filter(|(_, q)| q.is_empty()).map(|(k, _)| k).collect();
        if !empty.is_empty() {
            return Err(DataError::EmptyClasses(empty));
        }
        for queue in &mut queues {
            rng.shuffle(queue);
        }
        let cursors = vec![0; queues.len()];
        Ok(SamplerState { queues, cursors, rotation: 0, rng })
    }

    pub fn num_classes(&self) -> usize {
        self.queues.len()
    }

    pub fn next_batch(&mut self, batch_size: usize) -> Vec<usize> {
        assert!(batch_size >= 1);
        let mut batch = Vec::with_capacity(batch_size);
        for _ in 0..batch_size {
            let class = self.rotation;
            self.rotation = (self.rotation + 1) % self.queues.len();
            let queue = &mut self.queues[class];
            if self.cursors[class] == queue.len() {
                self.rng.shuffle(queue);
                self.cursors[class] = 0;
            }
            batch.push(queue[self.cursors[class]]);
            self.cursors[class] += 1;
        }
        batch
    }
}

/// Infinite stream of balanced batches.
pub fn balanced_batches(
    state: &mut SamplerState,
    batch_size: usize,
) -> impl Iterator<Item = Vec<usize>> + '_ {
    std::iter::repeat_with(move || state.next_batch(batch_size))
}

/// The unbalanced baseline: a uniform shuffle over all bags per epoch,
/// reshuffled on exhaustion.
#[derive(Debug, Clone)]
pub struct ShuffledSampler {
    order: Vec<usize>,
    cursor: usize,
    rng: Rng,
}

impl ShuffledSampler {
    pub fn new(num_bags: usize, mut rng: Rng) -> Self {
        let mut order: Vec<usize> = (0..num_bags).collect();
        rng.shuffle(&mut order);
        ShuffledSampler { order, cursor: 0, rng }
    }

    pub fn next_batch(&mut self, batch_size: usize) -> Vec<usize> {
        assert!(batch_size >= 1);
        let mut batch = Vec::with_capacity(batch_size);
        for _ in 0..batch_size {
            if self.cursor == self.order.len() {
                self.rng.shuffle(&mut self.order);
                self.cursor = 0;
            }
            batch.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        batch
    }
}
