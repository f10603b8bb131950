//! Permutations and the two sampling disciplines.
//!
//! Indices are 0-based throughout: position `t` (1-based) of an ordering maps
//! to `order[t - 1]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::CounterRng;

/// Largest `m` for which exhaustive enumeration is allowed (9! = 362 880).
pub const MAX_ENUMERATION: usize = 9;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Permutation {
    order: Vec<usize>,
}

impl Permutation {
    pub fn identity(m: usize) -> Self {
        Permutation {
            order: (0..m).collect(),
        }
    }

    /// Wraps an explicit ordering, checking that it is a bijection on `0..len`.
    pub fn from_order(order: Vec<usize>) -> Result<Self> {
        if !is_bijection(&order) {
            return Err(Error::invalid("ordering is not a permutation of 0..m"));
        }
        Ok(Permutation { order })
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.order
    }

    pub fn into_vec(self) -> Vec<usize> {
        self.order
    }
}

pub fn is_bijection(order: &[usize]) -> bool {
    let mut seen = vec![false; order.len()];
    for &i in order {
        if i >= order.len() || seen[i] {
            return false;
        }
        seen[i] = true;
    }
    true
}

/// Uniform random permutation of `0..m` by Fisher-Yates.
pub fn shuffle(m: usize, rng: &mut CounterRng) -> Result<Permutation> {
    if m == 0 {
        return Err(Error::invalid("cannot shuffle an empty index set (m = 0)"));
    }
    let mut order: Vec<usize> = (0..m).collect();
    shuffle_in_place(&mut order, rng);
    Ok(Permutation { order })
}

pub(crate) fn shuffle_in_place<T>(items: &mut [T], rng: &mut CounterRng) {
    for i in (1..items.len()).rev() {
        let j = rng.below(i + 1);
        items.swap(i, j);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplerKind {
    WithReplacement,
    /// One permutation for the whole run; at most `m` draws.
    SingleShuffle,
    /// A fresh permutation at every epoch boundary.
    ReshufflePerEpoch,
}

impl SamplerKind {
    pub fn is_without_replacement(self) -> bool {
        !matches!(self, SamplerKind::WithReplacement)
    }
}

#[derive(Debug, Clone)]
enum Source {
    Iid,
    Fixed(Vec<usize>),
    Reshuffle { order: Vec<usize>, epoch_len: usize },
}

/// Draw protocol state: the ordering(s) in use and a cursor.
#[derive(Debug, Clone)]
pub struct Sampler {
    m: usize,
    source: Source,
    cursor: usize,
    rng: CounterRng,
}

impl Sampler {
    /// `epoch_len` sets the reshuffle boundary for [`SamplerKind::ReshufflePerEpoch`]
    /// (ignored otherwise); pass `m` for plain data passes.
    pub fn new(kind: SamplerKind, m: usize, epoch_len: usize, mut rng: CounterRng) -> Result<Self> {
        if m == 0 {
            return Err(Error::invalid("sampler needs m >= 1"));
        }
        let source = match kind {
            SamplerKind::WithReplacement => Source::Iid,
            SamplerKind::SingleShuffle => Source::Fixed(shuffle(m, &mut rng)?.into_vec()),
            SamplerKind::ReshufflePerEpoch => {
                if epoch_len == 0 {
                    return Err(Error::invalid("epoch length must be >= 1"));
                }
                Source::Reshuffle {
                    order: shuffle(m, &mut rng)?.into_vec(),
                    epoch_len,
                }
            }
        };
        Ok(Sampler {
            m,
            source,
            cursor: 0,
            rng,
        })
    }

    /// Single-shuffle sampler over a caller-supplied ordering.
    pub fn from_permutation(perm: Permutation) -> Self {
        let m = perm.len();
        Sampler {
            m,
            source: Source::Fixed(perm.into_vec()),
            cursor: 0,
            rng: CounterRng::new(0, 0),
        }
    }

    pub fn kind(&self) -> SamplerKind {
        match self.source {
            Source::Iid => SamplerKind::WithReplacement,
            Source::Fixed(_) => SamplerKind::SingleShuffle,
            Source::Reshuffle { .. } => SamplerKind::ReshufflePerEpoch,
        }
    }

    /// Draws consumed so far.
    pub fn cursor(&self) -> usize {
        self.cursor
    }

    /// The single-shuffle ordering, if any.
    pub fn permutation(&self) -> Option<&[usize]> {
        match &self.source {
            Source::Fixed(order) => Some(order),
            _ => None,
        }
    }

    pub fn next_index(&mut self) -> Result<usize> {
        let idx = match &mut self.source {
            Source::Iid => self.rng.below(self.m),
            Source::Fixed(order) => *order.get(self.cursor).ok_or(Error::SamplerExhausted { m: self.m })?,
            Source::Reshuffle { order, epoch_len } => {
                let in_epoch = self.cursor % *epoch_len;
                let pos = in_epoch % self.m;
                if self.cursor > 0 && (in_epoch == 0 || pos == 0) {
                    shuffle_in_place(order, &mut self.rng);
                }
                order[pos]
            }
        };
        self.cursor += 1;
        Ok(idx)
    }
}

/// All `m!` permutations of `0..m` in lexicographic order.
pub fn enumerate_permutations(m: usize) -> Result<Permutations> {
    if m > MAX_ENUMERATION {
        return Err(Error::EnumerationTooLarge {
            m,
            max: MAX_ENUMERATION,
        });
    }
    Ok(Permutations {
        next: Some((0..m).collect()),
    })
}

/// Iterator behind [`enumerate_permutations`] (next-permutation algorithm).
#[derive(Debug, Clone)]
pub struct Permutations {
    next: Option<Vec<usize>>,
}

impl Iterator for Permutations {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        let current = self.next.take()?;
        let mut succ = current.clone();
        if next_lexicographic(&mut succ) {
            self.next = Some(succ);
        }
        Some(current)
    }
}

fn next_lexicographic(a: &mut [usize]) -> bool {
    if a.len() < 2 {
        return false;
    }
    let mut i = a.len() - 1;
    while i > 0 && a[i - 1] >= a[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = a.len() - 1;
    while a[j] <= a[i - 1] {
        j -= 1;
    }
    a.swap(i - 1, j);
    a[i..].reverse();
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashSet;

    #[test]
    fn shuffle_of_one() {
        let mut rng = CounterRng::new(3, 0);
        assert_eq!(shuffle(1, &mut rng).unwrap().as_slice(), &[0]);
    }

    #[test]
    fn shuffle_of_zero_errors() {
        let mut rng = CounterRng::new(3, 0);
        assert!(shuffle(0, &mut rng).is_err());
    }

    #[test]
    fn shuffle_is_deterministic() {
        let a = shuffle(20, &mut CounterRng::new(8, 4)).unwrap();
        let b = shuffle(20, &mut CounterRng::new(8, 4)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn shuffle_position_frequencies() {
        // Each index lands in each position with probability 1/4.
        let mut rng = CounterRng::new(17, 0);
        let n = 100_000;
        let mut counts = [[0usize; 4]; 4];
        for _ in 0..n {
            let p = shuffle(4, &mut rng).unwrap();
            for (pos, &i) in p.as_slice().iter().enumerate() {
                counts[i][pos] += 1;
            }
        }
        for row in counts {
            for c in row {
                let f = c as f64 / n as f64;
                assert!((f - 0.25).abs() <= 0.01, "frequency {f}");
            }
        }
    }

    #[test]
    fn single_shuffle_visits_each_once_then_exhausts() {
        let mut s = Sampler::new(SamplerKind::SingleShuffle, 3, 3, CounterRng::new(1, 0)).unwrap();
        let draws: Vec<usize> = (0..3).map(|_| s.next_index().unwrap()).collect();
        assert!(is_bijection(&draws));
        assert!(matches!(s.next_index(), Err(Error::SamplerExhausted { m: 3 })));
    }

    #[test]
    fn with_replacement_single_point() {
        let mut s = Sampler::new(SamplerKind::WithReplacement, 1, 1, CounterRng::new(1, 0)).unwrap();
        for _ in 0..10 {
            assert_eq!(s.next_index().unwrap(), 0);
        }
    }

    #[test]
    fn with_replacement_frequencies() {
        let mut s = Sampler::new(SamplerKind::WithReplacement, 3, 3, CounterRng::new(2, 5)).unwrap();
        let n = 30_000;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            counts[s.next_index().unwrap()] += 1;
        }
        for c in counts {
            assert!((c as f64 / n as f64 - 1.0 / 3.0).abs() <= 0.02);
        }
    }

    #[test]
    fn reshuffle_epochs_are_permutations() {
        let m = 7;
        let mut s = Sampler::new(SamplerKind::ReshufflePerEpoch, m, m, CounterRng::new(4, 0)).unwrap();
        let mut epochs = Vec::new();
        for _ in 0..5 {
            let e: Vec<usize> = (0..m).map(|_| s.next_index().unwrap()).collect();
            assert!(is_bijection(&e));
            epochs.push(e);
        }
        assert!(epochs.windows(2).any(|w| w[0] != w[1]));
    }

    #[test]
    fn reshuffle_short_epochs_never_repeat_within_epoch() {
        let mut s = Sampler::new(SamplerKind::ReshufflePerEpoch, 10, 4, CounterRng::new(4, 1)).unwrap();
        for _ in 0..6 {
            let e: HashSet<usize> = (0..4).map(|_| s.next_index().unwrap()).collect();
            assert_eq!(e.len(), 4);
        }
    }

    #[test]
    fn enumeration_small_cases() {
        let all: Vec<_> = enumerate_permutations(1).unwrap().collect();
        assert_eq!(all, vec![vec![0]]);
        let all: Vec<_> = enumerate_permutations(3).unwrap().collect();
        assert_eq!(all.len(), 6);
        assert_eq!(all[0], vec![0, 1, 2]);
        assert_eq!(all[5], vec![2, 1, 0]);
        assert_eq!(enumerate_permutations(5).unwrap().count(), 120);
        assert!(matches!(
            enumerate_permutations(10),
            Err(Error::EnumerationTooLarge { m: 10, .. })
        ));
    }

    #[test]
    fn enumeration_complete_and_unique() {
        for m in 0..=5usize {
            let all: Vec<_> = enumerate_permutations(m).unwrap().collect();
            let set: HashSet<_> = all.iter().cloned().collect();
            let fact: usize = (1..=m).product();
            assert_eq!(all.len(), fact);
            assert_eq!(set.len(), fact);
            assert!(all.iter().all(|p| is_bijection(p)));
            assert!(all.windows(2).all(|w| w[0] < w[1]));
        }
    }

    proptest! {
        #[test]
        fn shuffle_is_bijection(m in 1usize..200, seed in any::<u64>(), stream in any::<u64>()) {
            let p = shuffle(m, &mut CounterRng::new(seed, stream)).unwrap();
            prop_assert!(is_bijection(p.as_slice()));
        }
    }
}
