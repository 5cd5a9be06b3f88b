//! Buffering of the sample stream and the order in which each buffer's
//! transitions are replayed.
//!
//! Buffer `t` covers stream samples `tS .. tS + S - 1` plus one look-ahead
//! sample `tS + S`, which is the target of the newest transition and also the
//! first sample of buffer `t + 1`. The first `u` samples of every buffer are
//! gap samples: they never serve as covariates.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::model::SampleSource;
use crate::numerics::Vector;

/// One buffer's window of `S + 1` consecutive samples.
#[derive(Debug, Clone, PartialEq)]
pub struct BufferView {
    pub index: usize,
    pub samples: Vec<Vector>,
}

impl BufferView {
    /// `S`, the number of samples owned by this buffer (excluding the look-ahead).
    pub fn span(&self) -> usize {
        self.samples.len().saturating_sub(1)
    }

    /// Samples `0..S`, the ones the norm guard inspects.
    pub fn owned(&self) -> &[Vector] {
        &self.samples[..self.span()]
    }
}

/// Cuts a stream into consecutive buffers, reading every sample once and
/// carrying the look-ahead sample into the next buffer.
#[derive(Debug, Clone)]
pub struct BufferReader {
    span: usize,
    next_index: usize,
    carry: Option<Vector>,
}

impl BufferReader {
    pub fn new(span: usize) -> Self {
        assert!(span >= 1, "buffer span must be positive");
        BufferReader {
            span,
            next_index: 0,
            carry: None,
        }
    }

    pub fn span(&self) -> usize {
        self.span
    }

    /// Next full buffer, or `None` once the stream cannot fill one (a partial
    /// trailing buffer is dropped).
    pub fn next_buffer<S: SampleSource + ?Sized>(&mut self, source: &mut S) -> Option<BufferView> {
        let first = match self.carry.take() {
            Some(x) => x,
            None => source.next_sample()?,
        };
        let mut samples = Vec::with_capacity(self.span + 1);
        samples.push(first);
        for _ in 0..self.span {
            samples.push(source.next_sample()?);
        }
        self.carry = samples.last().cloned();
        let view = BufferView {
            index: self.next_index,
            samples,
        };
        self.next_index += 1;
        Some(view)
    }
}

/// Replay order of the transitions inside a buffer.
#[derive(Debug, Clone)]
pub enum OrderPolicy {
    /// Newest transition first.
    Reverse,
    /// Oldest transition first.
    Forward,
    /// Uniformly random permutation of the buffer's transitions.
    Random(ChaCha8Rng),
    /// `B` draws with replacement.
    RandomWithReplacement(ChaCha8Rng),
}

/// Ordered `(covariate, target)` index pairs into a [`BufferView`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransitionSchedule {
    pub pairs: Vec<(usize, usize)>,
}

impl TransitionSchedule {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Pairs sorted by covariate index, for order-insensitive comparison.
    pub fn sorted_pairs(&self) -> Vec<(usize, usize)> {
        let mut pairs = self.pairs.clone();
        pairs.sort_unstable();
        pairs
    }
}

/// The `B` transitions `(i, i+1)` for `i` in `u..u+B`, in the policy's order.
pub fn schedule(policy: &mut OrderPolicy, buffer_size: usize, gap: usize) -> TransitionSchedule {
    let span = buffer_size + gap;
    let ascending = (gap..span).map(|i| (i, i + 1));
    let pairs = match policy {
        OrderPolicy::Reverse => ascending.rev().collect(),
        OrderPolicy::Forward => ascending.collect(),
        OrderPolicy::Random(rng) => {
            let mut pairs: Vec<_> = ascending.collect();
            pairs.shuffle(rng);
            pairs
        }
        OrderPolicy::RandomWithReplacement(rng) => (0..buffer_size)
            .map(|_| {
                let i = rng.random_range(gap..span);
                (i, i + 1)
            })
            .collect(),
    };
    TransitionSchedule { pairs }
}
