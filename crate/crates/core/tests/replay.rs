use std::collections::HashSet;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sysid_core::model::{SampleSource, VecSource};
use sysid_core::replay::{schedule, BufferReader, OrderPolicy};
use sysid_core::Vector;

/// Yields `[i]` for the `i`-th sample and logs every read.
struct Counting {
    inner: VecSource,
    reads: Vec<usize>,
}

impl Counting {
    fn new(n: usize) -> Self {
        let samples = (0..n).map(|i| Vector::from_vec(vec![i as f64])).collect();
        Counting {
            inner: VecSource::new(1, samples),
            reads: Vec::new(),
        }
    }
}

impl SampleSource for Counting {
    fn dim(&self) -> usize {
        1
    }

    fn next_sample(&mut self) -> Option<Vector> {
        let x = self.inner.next_sample()?;
        self.reads.push(x[0] as usize);
        Some(x)
    }
}

fn all_policies(seed: u64) -> Vec<OrderPolicy> {
    vec![
        OrderPolicy::Reverse,
        OrderPolicy::Forward,
        OrderPolicy::Random(ChaCha8Rng::seed_from_u64(seed)),
    ]
}

#[test]
fn buffers_follow_counter() {
    let span = 110;
    let mut source = Counting::new(10_000);
    let mut reader = BufferReader::new(span);
    let mut count = 0;
    while let Some(buf) = reader.next_buffer(&mut source) {
        assert_eq!(buf.index, count);
        assert_eq!(buf.span(), span);
        for (j, x) in buf.samples.iter().enumerate() {
            assert_eq!(x[0] as usize, count * span + j);
        }
        count += 1;
    }
    assert_eq!(count, 90);
}

#[test]
fn every_sample_is_read_once() {
    let mut source = Counting::new(1_234);
    let mut reader = BufferReader::new(17);
    while reader.next_buffer(&mut source).is_some() {}
    let expected: Vec<usize> = (0..1_234).collect();
    assert_eq!(source.reads, expected);
}

#[test]
fn short_stream_yields_nothing() {
    let mut source = Counting::new(10);
    assert!(BufferReader::new(10).next_buffer(&mut source).is_none());
    let mut source = Counting::new(11);
    assert!(BufferReader::new(10).next_buffer(&mut source).is_some());
}

#[test]
fn reverse_schedule_examples() {
    let sched = schedule(&mut OrderPolicy::Reverse, 3, 2);
    assert_eq!(sched.pairs, vec![(4, 5), (3, 4), (2, 3)]);
    let sched = schedule(&mut OrderPolicy::Reverse, 2, 0);
    assert_eq!(sched.pairs, vec![(1, 2), (0, 1)]);
}

#[test]
fn random_schedule_is_a_permutation() {
    let mut policy = OrderPolicy::Random(ChaCha8Rng::seed_from_u64(1));
    let sched = schedule(&mut policy, 3, 0);
    let reverse = schedule(&mut OrderPolicy::Reverse, 3, 0);
    assert_eq!(sched.sorted_pairs(), vec![(0, 1), (1, 2), (2, 3)]);
    assert_eq!(sched.sorted_pairs(), reverse.sorted_pairs());
}

#[test]
fn random_schedules_differ_across_buffers() {
    let mut policy = OrderPolicy::Random(ChaCha8Rng::seed_from_u64(2));
    let first = schedule(&mut policy, 50, 5);
    let second = schedule(&mut policy, 50, 5);
    assert_ne!(first.pairs, second.pairs);
}

#[test]
fn sampling_with_replacement_stays_in_range() {
    let mut policy = OrderPolicy::RandomWithReplacement(ChaCha8Rng::seed_from_u64(3));
    let sched = schedule(&mut policy, 200, 7);
    assert_eq!(sched.len(), 200);
    assert!(sched
        .pairs
        .iter()
        .all(|&(c, t)| (7..207).contains(&c) && t == c + 1));
    let distinct: HashSet<_> = sched.pairs.iter().collect();
    assert!(distinct.len() < 200);
}

proptest! {
    #[test]
    fn policies_share_pair_set(b in 1usize..60, u in 0usize..20, seed in any::<u64>()) {
        let sets: Vec<_> = all_policies(seed)
            .iter_mut()
            .map(|p| schedule(p, b, u).sorted_pairs())
            .collect();
        prop_assert_eq!(&sets[0], &sets[1]);
        prop_assert_eq!(&sets[0], &sets[2]);
        prop_assert_eq!(sets[0].len(), b);
    }

    #[test]
    fn gap_samples_are_never_covariates(b in 1usize..60, u in 0usize..20, seed in any::<u64>()) {
        for mut p in all_policies(seed) {
            let sched = schedule(&mut p, b, u);
            prop_assert!(sched.pairs.iter().all(|&(c, t)| c >= u && t == c + 1 && t <= b + u));
        }
    }

    #[test]
    fn reverse_positions(b in 1usize..60, u in 0usize..20) {
        let sched = schedule(&mut OrderPolicy::Reverse, b, u);
        let s = b + u;
        for (i, &(c, _)) in sched.pairs.iter().enumerate() {
            prop_assert_eq!(c, s - 1 - i);
        }
    }
}
